//! Value functions: `v(x)`, `v(T, x)`, the Bolza value `u(T, x)`, gradient
//! and Hamilton-Jacobi checks, second-difference probes and grid scans.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{stiffness, TailModel};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::Tridiag;
use crate::mesh::{gauss_legendre01, TimeMesh};
use crate::minimize::{minimize_action, solve_from, MinimizeResult, SolveOptions};
use crate::model::{mass_inner_unchecked, min_separation, MassSystem};
use crate::optimize::{minimize, Objective};
use crate::potential::{hess_apply_into, value_grad_into, value_pairs, Pairs};
use crate::reference::{asymptotic_energy, MotionClass, ScenarioSpec};
use crate::spectral::{smallest_eigs, SpectralOptions, TrajectoryPath};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueOptions {
    pub solve: SolveOptions,
    /// Also solve the truncated problem at the working horizon for `v(T, x)`.
    pub finite_horizon: bool,
    /// Compute `λ₁` of the second variation on `[1, T_max]`.
    pub lambda1: bool,
    pub spectral: SpectralOptions,
    /// Collision distance under which a point is flagged near `Δ`.
    pub r_min: f64,
}

impl ValueOptions {
    pub fn for_class(kind: MotionClass) -> Self {
        Self {
            solve: SolveOptions::for_class(kind),
            finite_horizon: true,
            lambda1: false,
            spectral: SpectralOptions::default(),
            r_min: 1e-3,
        }
    }

    fn v_only(&self) -> Self {
        Self { finite_horizon: false, lambda1: false, ..self.clone() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub action: f64,
    pub initial_velocity: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Singular,
    NearCollision,
    Error,
}

impl PointStatus {
    pub fn label(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Singular => "singular",
            PointStatus::NearCollision => "near_collision",
            PointStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueResult {
    /// `min A_x − <a, x>_M` with the closed tail.
    pub v: f64,
    /// `min A_{x,[1,T]} − <ṙ₀(T), x>_M` at the working horizon.
    pub v_t: Option<f64>,
    pub horizon: f64,
    pub k: usize,
    /// `−M γ̇(1)`, present when `k = 1`.
    pub grad_v: Option<Vec<f64>>,
    /// `½‖∇v‖²_{M⁻¹} − U(x) − ‖a‖²_M/2`.
    pub hj_residual: Option<f64>,
    /// `‖∇v‖_{M⁻¹}`.
    pub grad_norm: Option<f64>,
    pub lambda1: Option<f64>,
    pub level: f64,
    pub colldist: f64,
    pub status: PointStatus,
    pub action: f64,
    pub branches: Vec<Branch>,
    pub velocity_correction: f64,
    pub tail_bound: f64,
    pub notes: Vec<String>,
}

/// `v` and its diagnostics at `spec.x0`, plus the underlying minimizer.
pub fn value_with_minimizer(spec: &ScenarioSpec, opts: &ValueOptions) -> Result<(ValueResult, MinimizeResult)> {
    let ms = &spec.ms;
    let x = &spec.x0;
    let colldist = min_separation(ms, x);
    let r = minimize_action(spec, &opts.solve)?;
    let mut notes = Vec::new();
    let k = r.multiplicity.k;

    let v_t = if opts.finite_horizon {
        let mesh = r.phi_star.mesh.clone();
        let (_, _, fin) = solve_from(spec, mesh, TailModel::Truncated, r.phi_star.free(), &opts.solve)?;
        Some(fin.v)
    } else {
        None
    };

    let level = asymptotic_energy(spec);
    let (grad_v, hj_residual, grad_norm) = if k == 1 {
        let vel = &r.initial_velocity;
        let g: Vec<f64> = vel.iter().enumerate().map(|(c, v)| -ms.coord_mass(c) * v).collect();
        let kin = mass_inner_unchecked(ms, vel, vel);
        let u = value_pairs(ms, x, Pairs::All)?;
        (Some(g), Some(0.5 * kin - u - level), Some(kin.sqrt()))
    } else {
        (None, None, None)
    };

    let lambda1 = if opts.lambda1 {
        let lam = TrajectoryPath::with_backward_extension(ms, r.trajectory.clone(), opts.spectral.eps_back)
            .and_then(|p| smallest_eigs(&p, 1.0, 1, &opts.spectral));
        match lam {
            Ok(s) => Some(s.eigenvalues[0]),
            Err(e) => {
                notes.push(format!("lambda1: {e}"));
                None
            }
        }
    } else {
        None
    };

    let status = if colldist < opts.r_min {
        PointStatus::NearCollision
    } else if k >= 2 {
        PointStatus::Singular
    } else {
        PointStatus::Ok
    };
    let branches = r
        .multiplicity
        .clusters
        .iter()
        .filter(|c| c.minimal)
        .map(|c| Branch { action: c.action, initial_velocity: c.initial_velocity.clone() })
        .collect();
    let out = ValueResult {
        v: r.v,
        v_t,
        horizon: r.horizon,
        k,
        grad_v,
        hj_residual,
        grad_norm,
        lambda1,
        level,
        colldist,
        status,
        action: r.action_value,
        branches,
        velocity_correction: r.velocity_correction,
        tail_bound: r.tail_bound,
        notes,
    };
    Ok((out, r))
}

pub fn value_at(spec: &ScenarioSpec, opts: &ValueOptions) -> Result<ValueResult> {
    value_with_minimizer(spec, opts).map(|r| r.0)
}

/// Barycentric unit directions (Euclidean norm) from `seed`.
pub fn random_directions(ms: &MassSystem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ms.n_coords();
    (0..count)
        .map(|_| {
            let mut e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            project_barycentric(ms, &mut e);
            let s = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            e.iter_mut().for_each(|v| *v /= s);
            e
        })
        .collect()
}

/// Removes the mass-weighted mean from each spatial component.
pub fn project_barycentric(ms: &MassSystem, x: &mut [f64]) {
    let d = ms.dim();
    let m = ms.masses();
    let total: f64 = m.iter().sum();
    for a in 0..d {
        let mean: f64 = m.iter().enumerate().map(|(i, mi)| mi * x[i * d + a]).sum::<f64>() / total;
        for i in 0..m.len() {
            x[i * d + a] -= mean;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionCheck {
    pub direction: Vec<f64>,
    /// `<∇v, e>` when the gradient exists.
    pub predicted: Option<f64>,
    pub central: f64,
    pub forward: f64,
    pub backward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub k: usize,
    pub h_fd: f64,
    pub differentiable: bool,
    /// `max |central − <∇v,e>| / ‖∇v‖₂`; absent without a gradient.
    pub max_deviation: Option<f64>,
    /// `max |forward − backward|` over the directions.
    pub max_one_sided_gap: f64,
    pub directions: Vec<DirectionCheck>,
}

/// Finite differences of `v` along the given barycentric directions.
pub fn grad_check_dirs(spec: &ScenarioSpec, dirs: &[Vec<f64>], h_fd: f64, opts: &ValueOptions) -> Result<GradCheck> {
    let base = value_at(spec, &opts.v_only())?;
    let vo = opts.v_only();
    let v_at = |s: f64, e: &[f64]| -> Result<f64> {
        let x: Vec<f64> = spec.x0.iter().zip(e).map(|(x, d)| x + s * d).collect();
        Ok(value_at(&spec.with_x(x)?, &vo)?.v)
    };
    let gnorm = base.grad_v.as_ref().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt());
    let mut checks = Vec::with_capacity(dirs.len());
    for e in dirs {
        spec.ms.check_len(e)?;
        let (vp, vm) = (v_at(h_fd, e)?, v_at(-h_fd, e)?);
        checks.push(DirectionCheck {
            direction: e.clone(),
            predicted: base.grad_v.as_ref().map(|g| g.iter().zip(e).map(|(a, b)| a * b).sum()),
            central: (vp - vm) / (2.0 * h_fd),
            forward: (vp - base.v) / h_fd,
            backward: (base.v - vm) / h_fd,
        });
    }
    let max_deviation = gnorm.map(|gn| {
        checks
            .iter()
            .map(|c| (c.central - c.predicted.unwrap()).abs() / gn.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    });
    Ok(GradCheck {
        k: base.k,
        h_fd,
        differentiable: base.k == 1,
        max_deviation,
        max_one_sided_gap: checks.iter().map(|c| (c.forward - c.backward).abs()).fold(0.0, f64::max),
        directions: checks,
    })
}

/// [`grad_check_dirs`] along `2·d` random directions.
pub fn grad_check(spec: &ScenarioSpec, h_fd: f64, seed: u64, opts: &ValueOptions) -> Result<GradCheck> {
    let dirs = random_directions(&spec.ms, 2 * spec.ms.dim(), seed);
    grad_check_dirs(spec, &dirs, h_fd, opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondDifference {
    pub z_norm: f64,
    /// `(f(x+z) + f(x−z) − 2f(x)) / ‖z‖²_M`.
    pub quotient: Option<f64>,
    pub skipped: Option<String>,
}

/// Second-difference quotients of any function; points that fail are skipped.
pub fn second_differences<F>(ms: &MassSystem, f: F, x: &[f64], zs: &[Vec<f64>]) -> Result<Vec<SecondDifference>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let f0 = f(x)?;
    Ok(zs
        .par_iter()
        .map(|z| {
            let zn = mass_inner_unchecked(ms, z, z);
            let xp: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
            let xm: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
            match (f(&xp), f(&xm)) {
                (Ok(p), Ok(m)) => SecondDifference { z_norm: zn.sqrt(), quotient: Some((p + m - 2.0 * f0) / zn), skipped: None },
                (Err(e), _) | (_, Err(e)) => SecondDifference { z_norm: zn.sqrt(), quotient: None, skipped: Some(e.to_string()) },
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SemiconcavityReport {
    pub quotients: Vec<SecondDifference>,
    pub max_quotient: Option<f64>,
}

pub fn semiconcavity_probe(spec: &ScenarioSpec, zs: &[Vec<f64>], opts: &ValueOptions) -> Result<SemiconcavityReport> {
    let vo = opts.v_only();
    let f = |x: &[f64]| -> Result<f64> { Ok(value_at(&spec.with_x(x.to_vec())?, &vo)?.v) };
    let quotients = second_differences(&spec.ms, f, &spec.x0, zs)?;
    let max_quotient = quotients.iter().filter_map(|q| q.quotient).reduce(f64::max);
    Ok(SemiconcavityReport { quotients, max_quotient })
}

/// Default first horizon for [`horizon_convergence`]. Parabolic tails decay
/// like `T^{-1/3}`, so those classes start far out.
pub fn convergence_start(kind: MotionClass) -> f64 {
    match kind {
        MotionClass::Hyperbolic => 1e6,
        MotionClass::Parabolic | MotionClass::HyperbolicParabolic => 1e14,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonConvergence {
    pub t0: f64,
    /// `(T, v(T, x))` for `T = 2ᵏ T₀`.
    pub values: Vec<(f64, f64)>,
    /// `|v(2ᵏT₀, x) − v(2ᵏ⁺¹T₀, x)|`.
    pub gaps: Vec<f64>,
    /// Each gap is below its predecessor, or both sit under the rounding floor.
    pub decreasing: bool,
    pub final_gap: f64,
    /// `final_gap / (1 + |v|)`.
    pub final_relative: f64,
}

/// `v(T, x)` on the truncated problem for `T = 2ᵏ T₀`, `k = 0..=doublings`.
pub fn horizon_convergence(spec: &ScenarioSpec, t0: f64, doublings: usize, opts: &SolveOptions) -> Result<HorizonConvergence> {
    if !(t0 > 1.0) || !t0.is_finite() {
        return Err(Error::Invalid(format!("convergence start {t0} must exceed 1")));
    }
    let o = SolveOptions { horizon: t0, tail: TailModel::Truncated, doublings, tol_horizon: 0.0, ..opts.clone() };
    let r = minimize_action(spec, &o)?;
    let values: Vec<(f64, f64)> = r.horizon_history.iter().map(|h| (h.horizon, h.v)).collect();
    let gaps: Vec<f64> = values.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    let v = values.last().map_or(0.0, |p| p.1);
    let floor = 1e-12 * (1.0 + v.abs());
    let decreasing = gaps.windows(2).all(|g| g[1] < g[0] || g[1].max(g[0]) <= floor);
    let final_gap = gaps.last().copied().unwrap_or(f64::NAN);
    Ok(HorizonConvergence { t0, values, gaps, decreasing, final_gap, final_relative: final_gap / (1.0 + v.abs()) })
}

/// Reference Lagrangian integral `∫₁ᵀ ½‖ṙ₀‖²_M + U(r₀) dt` by composite
/// Gauss-Legendre quadrature on logarithmic panels.
pub fn reference_lagrangian_integral(spec: &ScenarioSpec, horizon: f64) -> Result<f64> {
    let n = spec.n_coords();
    let (xs, ws) = gauss_legendre01(20);
    let panels = ((horizon.log10() * 16.0).ceil() as usize).max(4);
    let lq = horizon.ln() / panels as f64;
    let (mut r, mut v, mut a) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut total = 0.0;
    for p in 0..panels {
        let (ta, tb) = ((lq * p as f64).exp(), (lq * (p + 1) as f64).exp());
        let mut s = 0.0;
        for (x, w) in xs.iter().zip(&ws) {
            let t = ta + x * (tb - ta);
            spec.ref_into(t, &mut r, &mut v, &mut a);
            s += w * (0.5 * mass_inner_unchecked(&spec.ms, &v, &v) + value_pairs(&spec.ms, &r, Pairs::All)?);
        }
        total += s * (tb - ta);
    }
    Ok(total)
}

/// Bolza problem on `[1, T]` in the full path `η` with `η(1) = x`:
/// `∫ ½‖η̇‖²_M + U(η) dt − <ṙ₀(T), η(T)>_M`.
struct BolzaProblem<'a> {
    spec: &'a ScenarioSpec,
    mesh: TimeMesh,
    n: usize,
    /// `(t, w, k, s)` Gauss points.
    quad: Vec<(f64, f64, usize, f64)>,
    terminal: Vec<f64>,
    riesz: Tridiag,
}

impl<'a> BolzaProblem<'a> {
    fn new(spec: &'a ScenarioSpec, mesh: TimeMesh) -> Result<Self> {
        let n = spec.n_coords();
        let nodes = mesh.nodes();
        let g = 0.5 / 3f64.sqrt();
        let mut quad = Vec::with_capacity(2 * mesh.n_elements());
        for e in 0..mesh.n_elements() {
            let h = nodes[e + 1] - nodes[e];
            for s in [0.5 - g, 0.5 + g] {
                quad.push((nodes[e] + s * h, 0.5 * h, e, s));
            }
        }
        let (mut r, mut v, mut a) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        spec.ref_into(mesh.t_end(), &mut r, &mut v, &mut a);
        let terminal = v.iter().enumerate().map(|(c, v)| spec.ms.coord_mass(c) * v).collect();
        let riesz = stiffness(&mesh)?;
        Ok(Self { spec, mesh, n, quad, terminal, riesz })
    }

    fn node<'b>(&'b self, free: &'b [f64], k: usize) -> &'b [f64] {
        if k == 0 {
            &self.spec.x0
        } else {
            &free[(k - 1) * self.n..k * self.n]
        }
    }

    fn at(&self, free: &[f64], k: usize, s: f64, out: &mut [f64]) {
        let (a, b) = (self.node(free, k), self.node(free, k + 1));
        for c in 0..self.n {
            out[c] = (1.0 - s) * a[c] + s * b[c];
        }
    }

    /// Reference path plus the constant offset, as a start.
    fn start(&self) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; n];
        self.spec.r0_into(1.0, &mut r);
        let off: Vec<f64> = self.spec.x0.iter().zip(&r).map(|(x, r)| x - r).collect();
        let mut out = Vec::with_capacity((self.mesh.n_nodes() - 1) * n);
        for t in &self.mesh.nodes()[1..] {
            self.spec.r0_into(*t, &mut r);
            out.extend(r.iter().zip(&off).map(|(a, b)| a + b));
        }
        out
    }

    /// `M η̇(T)` from the last element's equilibrium.
    fn terminal_flux(&self, free: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let nodes = self.mesh.nodes();
        let ke = self.mesh.n_elements() - 1;
        let h = nodes[ke + 1] - nodes[ke];
        let (a, b) = (self.node(free, ke), self.node(free, ke + 1));
        let mut flux: Vec<f64> = (0..n).map(|c| self.spec.ms.coord_mass(c) * (b[c] - a[c]) / h).collect();
        let mut eta = vec![0.0; n];
        let mut g = vec![0.0; n];
        for &(_, w, k, s) in self.quad.iter().filter(|q| q.2 == ke) {
            self.at(free, k, s, &mut eta);
            value_grad_into(&self.spec.ms, &eta, Pairs::All, &mut g)?;
            for c in 0..n {
                flux[c] += w * s * g[c];
            }
        }
        Ok(flux)
    }
}

impl Objective for BolzaProblem<'_> {
    fn dim(&self) -> usize {
        (self.mesh.n_nodes() - 1) * self.n
    }

    fn eval(&self, free: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = self.n;
        let ms = &self.spec.ms;
        let nodes = self.mesh.nodes();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut val = 0.0;
        for e in 0..self.mesh.n_elements() {
            let h = nodes[e + 1] - nodes[e];
            let (a, b) = (self.node(free, e), self.node(free, e + 1));
            for c in 0..n {
                let m = ms.coord_mass(c);
                let d = b[c] - a[c];
                val += 0.5 * m * d * d / h;
                if e >= 1 {
                    grad[(e - 1) * n + c] -= m * d / h;
                }
                grad[e * n + c] += m * d / h;
            }
        }
        let mut eta = vec![0.0; n];
        let mut g = vec![0.0; n];
        for &(t, w, k, s) in &self.quad {
            self.at(free, k, s, &mut eta);
            val += w * value_pairs(ms, &eta, Pairs::All).map_err(|e| e.at_time(t))?;
            value_grad_into(ms, &eta, Pairs::All, &mut g)?;
            for c in 0..n {
                if k >= 1 {
                    grad[(k - 1) * n + c] += w * (1.0 - s) * g[c];
                }
                grad[k * n + c] += w * s * g[c];
            }
        }
        let last = (self.mesh.n_nodes() - 2) * n;
        for c in 0..n {
            val -= self.terminal[c] * free[last + c];
            grad[last + c] -= self.terminal[c];
        }
        Ok(val)
    }

    fn hess_vec(&self, free: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let ms = &self.spec.ms;
        let nodes = self.mesh.nodes();
        out.iter_mut().for_each(|o| *o = 0.0);
        let vn = |k: usize, c: usize| if k == 0 { 0.0 } else { v[(k - 1) * n + c] };
        for e in 0..self.mesh.n_elements() {
            let h = nodes[e + 1] - nodes[e];
            for c in 0..n {
                let d = ms.coord_mass(c) * (vn(e + 1, c) - vn(e, c)) / h;
                if e >= 1 {
                    out[(e - 1) * n + c] -= d;
                }
                out[e * n + c] += d;
            }
        }
        let mut eta = vec![0.0; n];
        let mut psi = vec![0.0; n];
        let mut hp = vec![0.0; n];
        for &(_, w, k, s) in &self.quad {
            self.at(free, k, s, &mut eta);
            for c in 0..n {
                psi[c] = (1.0 - s) * vn(k, c) + s * vn(k + 1, c);
            }
            hp.iter_mut().for_each(|x| *x = 0.0);
            hess_apply_into(ms, &eta, &psi, Pairs::All, &mut hp);
            for c in 0..n {
                if k >= 1 {
                    out[(k - 1) * n + c] += w * (1.0 - s) * hp[c];
                }
                out[k * n + c] += w * s * hp[c];
            }
        }
        Ok(())
    }

    fn precond(&self, g: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (k, (o, x)) in out.iter_mut().zip(g).enumerate() {
            *o = x / self.spec.ms.coord_mass(k % n);
        }
        for c in 0..n {
            self.riesz.solve_strided(out, c, n);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BolzaResult {
    pub horizon: f64,
    /// `u(T, x)`, extrapolated.
    pub u: f64,
    /// `∫₁ᵀ ½‖ṙ₀‖²_M + U(r₀) dt`.
    pub reference_integral: f64,
    /// `<ṙ₀(T), r₀(T) − r₀(1)>_M`.
    pub boundary_term: f64,
    /// `u − I + B`.
    pub v_from_u: f64,
    /// `v(T, x)` from the renormalized problem.
    pub v_direct: f64,
    /// `|v_direct − v_from_u| / max(1, |v_direct|)`.
    pub identity_residual: f64,
    /// `‖M η̇(T) − M ṙ₀(T)‖ / ‖M ṙ₀(T)‖` on the fine mesh (absolute when `ṙ₀(T) = 0`).
    pub terminal_residual: f64,
    pub iterations: usize,
}

/// `u(T, x)` by direct minimization over paths, compared with `v(T, x)` through
/// `v = u − ∫₁ᵀ(½‖ṙ₀‖²_M + U(r₀)) dt + <ṙ₀(T), r₀(T) − r₀(1)>_M`.
pub fn bolza_u(spec: &ScenarioSpec, horizon: f64, opts: &SolveOptions) -> Result<BolzaResult> {
    let so = SolveOptions { horizon, tail: TailModel::Truncated, doublings: 0, ..opts.clone() };
    let mesh = so.mesh()?;
    let fine = BolzaProblem::new(spec, mesh.clone())?;
    let rep = minimize(&fine, &fine.start(), &so.opt)?;
    let mut iterations = rep.iterations;
    let flux = fine.terminal_flux(&rep.x)?;
    let tn = fine.terminal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let terminal_residual =
        flux.iter().zip(&fine.terminal).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / if tn > 0.0 { tn } else { 1.0 };
    let u = if so.extrapolate {
        let cmesh = mesh.coarsened()?;
        let coarse = BolzaProblem::new(spec, cmesh)?;
        let n = fine.n;
        let start: Vec<f64> = (0..coarse.mesh.n_nodes() - 1)
            .flat_map(|k| rep.x[(2 * k + 1) * n..(2 * k + 2) * n].to_vec())
            .collect();
        let crep = minimize(&coarse, &start, &so.opt)?;
        iterations += crep.iterations;
        (4.0 * rep.value - crep.value) / 3.0
    } else {
        rep.value
    };

    let n = spec.n_coords();
    let (mut r1, mut rt, mut vt, mut at) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    spec.r0_into(1.0, &mut r1);
    spec.ref_into(horizon, &mut rt, &mut vt, &mut at);
    let diff: Vec<f64> = rt.iter().zip(&r1).map(|(a, b)| a - b).collect();
    let boundary_term = mass_inner_unchecked(&spec.ms, &vt, &diff);
    let reference_integral = reference_lagrangian_integral(spec, horizon)?;
    let v_from_u = u - reference_integral + boundary_term;

    let v_direct = minimize_action(spec, &so)?.v;
    Ok(BolzaResult {
        horizon,
        u,
        reference_integral,
        boundary_term,
        v_from_u,
        v_direct,
        identity_residual: (v_direct - v_from_u).abs() / v_direct.abs().max(1.0),
        terminal_residual,
        iterations,
    })
}

/// `x(s₁, s₂) = center + s₁ e₁ + s₂ e₂`, re-projected to zero barycenter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Slice {
    pub center: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl Slice {
    /// `n₁ × n₂` uniform grid on `[lo₁, hi₁] × [lo₂, hi₂]`.
    pub fn uniform(center: Vec<f64>, e1: Vec<f64>, e2: Vec<f64>, s1: (f64, f64, usize), s2: (f64, f64, usize)) -> Self {
        let lin = |(lo, hi, n): (f64, f64, usize)| -> Vec<f64> {
            match n {
                0 => vec![],
                1 => vec![0.5 * (lo + hi)],
                _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
            }
        };
        Self { center, e1, e2, s1: lin(s1), s2: lin(s2) }
    }

    pub fn point(&self, ms: &MassSystem, i: usize, j: usize) -> Vec<f64> {
        let (a, b) = (self.s1[i], self.s2[j]);
        let mut x: Vec<f64> =
            self.center.iter().zip(self.e1.iter().zip(&self.e2)).map(|(c, (u, w))| c + a * u + b * w).collect();
        project_barycentric(ms, &mut x);
        x
    }

    pub fn len(&self) -> usize {
        self.s1.len() * self.s2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRecord {
    pub i: usize,
    pub j: usize,
    pub x: Vec<f64>,
    pub v: Option<f64>,
    pub v_t: Option<f64>,
    pub k: usize,
    pub lambda1: Option<f64>,
    pub hj_residual: Option<f64>,
    pub grad_norm: Option<f64>,
    pub colldist: f64,
    pub status: PointStatus,
    pub branches: Vec<Branch>,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// `value_at` over every slice point, in grid order (`i` major).
pub fn scan_grid(template: &ScenarioSpec, slice: &Slice, opts: &ValueOptions) -> Result<Vec<ScanRecord>> {
    scan_grid_with_progress(template, slice, opts, |_| {})
}

/// [`scan_grid`] calling `progress(done)` after each point, from worker threads.
pub fn scan_grid_with_progress<F>(template: &ScenarioSpec, slice: &Slice, opts: &ValueOptions, progress: F) -> Result<Vec<ScanRecord>>
where
    F: Fn(usize) + Sync,
{
    let done = std::sync::atomic::AtomicUsize::new(0);
    let n = template.n_coords();
    for v in [&slice.center, &slice.e1, &slice.e2] {
        if v.len() != n {
            return Err(Error::Shape { expected: n, got: v.len() });
        }
    }
    let idx: Vec<(usize, usize)> = (0..slice.s1.len()).flat_map(|i| (0..slice.s2.len()).map(move |j| (i, j))).collect();
    Ok(idx
        .par_iter()
        .map(|&(i, j)| {
            let start = Instant::now();
            let x = slice.point(&template.ms, i, j);
            let colldist = min_separation(&template.ms, &x);
            let res = template.with_x(x.clone()).and_then(|s| value_at(&s, opts));
            let wall_time = start.elapsed();
            progress(done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1);
            match res {
                Ok(r) => ScanRecord {
                    i,
                    j,
                    x,
                    v: Some(r.v),
                    v_t: r.v_t,
                    k: r.k,
                    lambda1: r.lambda1,
                    hj_residual: r.hj_residual,
                    grad_norm: r.grad_norm,
                    colldist,
                    status: r.status,
                    branches: r.branches,
                    error: None,
                    wall_time,
                },
                Err(e) => ScanRecord {
                    i,
                    j,
                    x,
                    v: None,
                    v_t: None,
                    k: 0,
                    lambda1: None,
                    hj_residual: None,
                    grad_norm: None,
                    colldist,
                    status: PointStatus::Error,
                    branches: vec![],
                    error: Some(e.to_string()),
                    wall_time,
                },
            }
        })
        .collect())
}

/// Header `i,j,x_0,…,v,vT,k,lambda1,hjres,gradnorm,colldist,status`; absent values are `nan`.
pub fn write_scan_csv<W: Write>(records: &[ScanRecord], n_coords: usize, mut w: W) -> std::io::Result<()> {
    let mut header = vec!["i".to_string(), "j".to_string()];
    header.extend((0..n_coords).map(|k| format!("x_{k}")));
    header.extend(["v", "vT", "k", "lambda1", "hjres", "gradnorm", "colldist", "status"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    let opt = |v: Option<f64>| fmt_f64(v.unwrap_or(f64::NAN));
    for r in records {
        let mut row = vec![r.i.to_string(), r.j.to_string()];
        row.extend(r.x.iter().map(|v| fmt_f64(*v)));
        row.extend([
            opt(r.v),
            opt(r.v_t),
            r.k.to_string(),
            opt(r.lambda1),
            opt(r.hj_residual),
            opt(r.grad_norm),
            fmt_f64(r.colldist),
            r.status.label().to_string(),
        ]);
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
