//! Reference paths `r₀(t) = a t + (Σ_K β_K b^K) t^{2/3}` for the three motion classes.
//!
//! Hyperbolic motions have no shape term, parabolic ones have `a = 0`, and
//! hyperbolic-parabolic ones carry one scaled central configuration per
//! cluster of equal asymptotic velocities.

use serde::{Deserialize, Serialize};

use crate::central_config::{
    embed_scaled_shapes, find_minimal_central, find_minimal_clustered, CentralConfigOptions, ClusterCentral,
};
use crate::error::{Error, Result};
use crate::model::{cluster_from_velocity, collision_distance, mass_inner_unchecked, ClusterPartition, Configuration, MassSystem};

/// Backward window below `t = 1` allowed for the reference path.
pub const EPS_BACK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    Hyperbolic,
    Parabolic,
    HyperbolicParabolic,
}

impl MotionClass {
    /// Decay exponent of the tail integrand used for tail bounds.
    pub fn tail_exponent(self) -> f64 {
        match self {
            MotionClass::Hyperbolic => 1.5,
            _ => 7.0 / 6.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MotionClass::Hyperbolic => "hyperbolic",
            MotionClass::Parabolic => "parabolic",
            MotionClass::HyperbolicParabolic => "hyperbolic_parabolic",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub ms: MassSystem,
    pub kind: MotionClass,
    /// Asymptotic velocity, flat.
    pub a: Vec<f64>,
    /// `Σ_K β_K b^K` embedded in the full space (zero for hyperbolic).
    pub beta_b: Vec<f64>,
    pub partition: ClusterPartition,
    /// Per-cluster shapes in cluster coordinates (clusters with two or more bodies).
    pub shapes: Vec<ClusterCentral>,
    /// Initial configuration at `t = 1`.
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefPathSample {
    pub r0: Vec<f64>,
    pub r0_dot: Vec<f64>,
    pub r0_ddot: Vec<f64>,
}

fn check_barycentric(ms: &MassSystem, v: &[f64], what: &str) -> Result<()> {
    ms.check_len(v)?;
    let scale = v.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    let off = ms.barycenter(v).iter().fold(0.0f64, |s, x| s.max(x.abs()));
    if off > 1e-11 * scale {
        return Err(Error::Validation(format!("{what} has nonzero barycenter ({off:e})")));
    }
    Ok(())
}

impl ScenarioSpec {
    /// Hyperbolic scenario; requires `a ∉ Δ`.
    pub fn hyperbolic(ms: MassSystem, a: Vec<f64>, x0: Vec<f64>) -> Result<Self> {
        check_barycentric(&ms, &a, "a")?;
        check_barycentric(&ms, &x0, "x0")?;
        if collision_distance(&ms, &a)? <= 0.0 {
            return Err(Error::Validation("hyperbolic scenarios need a collision-free velocity a".into()));
        }
        let n = ms.n_bodies();
        Ok(Self {
            beta_b: vec![0.0; ms.n_coords()],
            partition: ClusterPartition::singletons(n),
            shapes: Vec::new(),
            kind: MotionClass::Hyperbolic,
            ms,
            a,
            x0,
        })
    }

    /// Parabolic scenario with a computed minimal central configuration.
    pub fn parabolic(ms: MassSystem, x0: Option<Vec<f64>>, opts: &CentralConfigOptions) -> Result<Self> {
        let cc = find_minimal_central(&ms, None, opts)?;
        let n = ms.n_bodies();
        let shape = ClusterCentral { bodies: (0..n).collect(), result: cc };
        Self::parabolic_with_shape(ms, shape, x0)
    }

    /// Parabolic scenario with a caller-supplied shape; `x0` defaults to `β b_m`.
    pub fn parabolic_with_shape(ms: MassSystem, shape: ClusterCentral, x0: Option<Vec<f64>>) -> Result<Self> {
        let shapes = vec![shape];
        let beta_b = embed_scaled_shapes(&ms, &shapes);
        let x0 = x0.unwrap_or_else(|| beta_b.clone());
        check_barycentric(&ms, &x0, "x0")?;
        let n = ms.n_bodies();
        Ok(Self {
            a: vec![0.0; ms.n_coords()],
            partition: ClusterPartition::single_block(n),
            kind: MotionClass::Parabolic,
            beta_b,
            shapes,
            ms,
            x0,
        })
    }

    /// Hyperbolic-parabolic scenario; requires `a ∈ Δ` and `a ≠ 0`.
    pub fn hyperbolic_parabolic(
        ms: MassSystem,
        a: Vec<f64>,
        x0: Option<Vec<f64>>,
        cluster_tol: f64,
        opts: &CentralConfigOptions,
    ) -> Result<Self> {
        check_barycentric(&ms, &a, "a")?;
        if a.iter().all(|v| *v == 0.0) {
            return Err(Error::Validation("hyperbolic-parabolic scenarios need a nonzero velocity a".into()));
        }
        let ac = Configuration::from_flat(ms.dim(), a.clone())?;
        let partition = cluster_from_velocity(&ac, cluster_tol);
        if partition.blocks().iter().all(|b| b.len() < 2) {
            return Err(Error::Validation("hyperbolic-parabolic scenarios need a ∈ Δ (some equal velocities)".into()));
        }
        let shapes = find_minimal_clustered(&ms, &partition, None, opts)?;
        let beta_b = embed_scaled_shapes(&ms, &shapes);
        let x0 = x0.unwrap_or_else(|| a.iter().zip(&beta_b).map(|(p, q)| p + q).collect());
        check_barycentric(&ms, &x0, "x0")?;
        Ok(Self { ms, kind: MotionClass::HyperbolicParabolic, a, beta_b, partition, shapes, x0 })
    }

    /// Same reference path, different initial configuration.
    pub fn with_x(&self, x0: Vec<f64>) -> Result<Self> {
        check_barycentric(&self.ms, &x0, "x0")?;
        let mut s = self.clone();
        s.x0 = x0;
        Ok(s)
    }

    pub fn n_coords(&self) -> usize {
        self.ms.n_coords()
    }

    /// Writes `r₀(t)`, `ṙ₀(t)` and `r̈₀(t)` into the given buffers.
    #[inline]
    pub(crate) fn ref_into(&self, t: f64, r0: &mut [f64], r0_dot: &mut [f64], r0_ddot: &mut [f64]) {
        let t13 = t.cbrt();
        let t23 = t13 * t13;
        let d1 = 2.0 / (3.0 * t13);
        let d2 = -2.0 / (9.0 * t23 * t23);
        for k in 0..self.a.len() {
            let (a, b) = (self.a[k], self.beta_b[k]);
            r0[k] = a * t + b * t23;
            r0_dot[k] = a + b * d1;
            r0_ddot[k] = b * d2;
        }
    }

    #[inline]
    pub(crate) fn r0_into(&self, t: f64, r0: &mut [f64]) {
        let t23 = t.cbrt().powi(2);
        for k in 0..self.a.len() {
            r0[k] = self.a[k] * t + self.beta_b[k] * t23;
        }
    }

    /// Offset `x − r₀(1)` added to every reconstructed configuration.
    pub fn offset(&self) -> Vec<f64> {
        self.x0.iter().zip(&self.a).zip(&self.beta_b).map(|((x, a), b)| x - a - b).collect()
    }

    pub fn has_shape_term(&self) -> bool {
        self.kind != MotionClass::Hyperbolic
    }
}

pub fn sample_ref(spec: &ScenarioSpec, t: f64) -> Result<RefPathSample> {
    if !(t >= 1.0 - EPS_BACK) || !t.is_finite() {
        return Err(Error::Range(format!("reference path queried at t = {t}, below 1 - {EPS_BACK}")));
    }
    let n = spec.n_coords();
    let mut s = RefPathSample { r0: vec![0.0; n], r0_dot: vec![0.0; n], r0_ddot: vec![0.0; n] };
    spec.ref_into(t, &mut s.r0, &mut s.r0_dot, &mut s.r0_ddot);
    Ok(s)
}

/// `h = ½ <M a, a>`, the energy level of the value function.
pub fn asymptotic_energy(spec: &ScenarioSpec) -> f64 {
    0.5 * mass_inner_unchecked(&spec.ms, &spec.a, &spec.a)
}

/// `‖M r̈₀(t) − ∇U(r₀(t))‖₂`; zero for parabolic references.
pub fn reference_newton_residual(spec: &ScenarioSpec, t: f64) -> Result<f64> {
    let s = sample_ref(spec, t)?;
    let g = crate::potential::u_gradient(&spec.ms, &s.r0)?;
    Ok(s.r0_ddot.iter().enumerate().map(|(k, v)| (spec.ms.coord_mass(k) * v - g[k]).powi(2)).sum::<f64>().sqrt())
}
