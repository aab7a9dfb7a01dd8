//! Graded time meshes and piecewise-linear perturbation fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MassSystem;

pub const MIN_NODES: usize = 16;

/// Strictly increasing nodes `t_0 < … < t_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    nodes: Vec<f64>,
}

impl TimeMesh {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < MIN_NODES {
            return Err(Error::Invalid(format!("mesh needs at least {MIN_NODES} nodes, got {}", nodes.len())));
        }
        if nodes[0] <= 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes.iter().all(|t| t.is_finite()) {
            return Err(Error::Invalid("mesh nodes must be positive, finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// `K` elements with constant ratio `q = (t_end / t_start)^{1/K}`.
    pub fn geometric(t_start: f64, t_end: f64, elements: usize) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::Invalid(format!("horizon {t_end} must exceed start {t_start}")));
        }
        let lq = (t_end / t_start).ln() / elements as f64;
        let mut nodes: Vec<f64> = (0..=elements).map(|i| t_start * (lq * i as f64).exp()).collect();
        nodes[0] = t_start;
        nodes[elements] = t_end;
        Self::from_nodes(nodes)
    }

    /// Geometric mesh with roughly `per_decade` elements per factor ten.
    pub fn graded(t_start: f64, t_end: f64, per_decade: usize) -> Result<Self> {
        let decades = (t_end / t_start).log10();
        let k = ((decades * per_decade as f64).ceil() as usize).max(MIN_NODES - 1);
        Self::geometric(t_start, t_end, k)
    }

    /// Nodes with `ln(t/t_start) = L (s + c s²)/(1 + c)` for uniform `s`, `L = ln(t_end/t_start)`.
    /// `c = 0` is geometric; larger `c` concentrates nodes near `t_start`.
    pub fn stretched(t_start: f64, t_end: f64, elements: usize, c: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::Invalid(format!("horizon {t_end} must exceed start {t_start}")));
        }
        if !(c >= 0.0) {
            return Err(Error::Invalid(format!("stretch {c} must be non-negative")));
        }
        let l = (t_end / t_start).ln();
        let mut nodes: Vec<f64> = (0..=elements)
            .map(|i| {
                let s = i as f64 / elements as f64;
                t_start * (l * (s + c * s * s) / (1.0 + c)).exp()
            })
            .collect();
        nodes[0] = t_start;
        nodes[elements] = t_end;
        Self::from_nodes(nodes)
    }

    /// Every other node; the element count must be even.
    pub fn coarsened(&self) -> Result<Self> {
        if self.n_elements() % 2 != 0 {
            return Err(Error::Invalid("coarsening needs an even element count".into()));
        }
        Self::from_nodes(self.nodes.iter().step_by(2).copied().collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t_start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn max_ratio(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] / w[0]).fold(1.0, f64::max)
    }

    /// Appends geometric nodes up to `t_new` with ratio at most that of the last element.
    /// The existing nodes are kept, so the old mesh is nested in the new one.
    /// An even element count stays even.
    pub fn extended(&self, t_new: f64) -> Result<Self> {
        let t_end = self.t_end();
        if !(t_new > t_end) {
            return Err(Error::Invalid(format!("extension target {t_new} must exceed {t_end}")));
        }
        let k = self.n_nodes();
        let q = self.nodes[k - 1] / self.nodes[k - 2];
        let mut m = ((t_new / t_end).ln() / q.ln()).ceil().max(1.0) as usize;
        if (k - 1) % 2 == 0 && m % 2 == 1 {
            m += 1;
        }
        let lq = (t_new / t_end).ln() / m as f64;
        let mut nodes = self.nodes.clone();
        nodes.extend((1..=m).map(|i| t_end * (lq * i as f64).exp()));
        *nodes.last_mut().unwrap() = t_new;
        Self::from_nodes(nodes)
    }

    /// Mesh with the given interior points inserted (existing nodes kept).
    pub fn with_points(&self, pts: &[f64]) -> Result<Self> {
        let mut nodes = self.nodes.clone();
        let (a, b) = (self.t_start(), self.t_end());
        for &p in pts {
            if p > a && p < b {
                nodes.push(p);
            }
        }
        nodes.sort_by(f64::total_cmp);
        nodes.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.abs());
        Self::from_nodes(nodes)
    }

    /// Element index containing `t` (clamped to the mesh).
    pub fn locate(&self, t: f64) -> usize {
        match self.nodes.binary_search_by(|n| n.total_cmp(&t)) {
            Ok(i) => i.min(self.n_elements() - 1),
            Err(i) => i.saturating_sub(1).min(self.n_elements() - 1),
        }
    }

    /// Index of the node equal to `t` up to relative 1e-12.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let e = self.locate(t);
        [e, e + 1].into_iter().find(|&i| (self.nodes[i] - t).abs() <= 1e-12 * t.abs())
    }
}

/// Piecewise-linear field with `n` components per node and zero value at the first node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathField {
    pub mesh: TimeMesh,
    n: usize,
    values: Vec<f64>,
}

impl PathField {
    pub fn zeros(mesh: TimeMesh, n: usize) -> Self {
        let len = mesh.n_nodes() * n;
        Self { mesh, n, values: vec![0.0; len] }
    }

    /// Builds a field from node values; node 0 must be zero.
    pub fn from_values(mesh: TimeMesh, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() * n {
            return Err(Error::Shape { expected: mesh.n_nodes() * n, got: values.len() });
        }
        if values[..n].iter().any(|v| *v != 0.0) {
            return Err(Error::Invalid("field must vanish at the first node".into()));
        }
        Ok(Self { mesh, n, values })
    }

    /// Samples `f(t)` at the nodes and forces the first node to zero.
    pub fn from_fn(mesh: TimeMesh, n: usize, f: impl Fn(f64, &mut [f64])) -> Self {
        let mut values = vec![0.0; mesh.n_nodes() * n];
        for (k, t) in mesh.nodes().iter().enumerate().skip(1) {
            f(*t, &mut values[k * n..(k + 1) * n]);
        }
        Self { mesh, n, values }
    }

    /// Field from the free unknowns (nodes `1..`).
    pub fn from_free(mesh: TimeMesh, n: usize, free: &[f64]) -> Result<Self> {
        let mut values = vec![0.0; n];
        values.extend_from_slice(free);
        Self::from_values(mesh, n, values)
    }

    pub fn n_components(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Unknowns at nodes `1..`.
    pub fn free(&self) -> &[f64] {
        &self.values[self.n..]
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    /// Linear interpolation at `t` (constant beyond the last node).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let nodes = self.mesh.nodes();
        if t >= self.mesh.t_end() {
            return self.node(self.mesh.n_nodes() - 1).to_vec();
        }
        let e = self.mesh.locate(t);
        let s = ((t - nodes[e]) / (nodes[e + 1] - nodes[e])).clamp(0.0, 1.0);
        self.node(e).iter().zip(self.node(e + 1)).map(|(a, b)| (1.0 - s) * a + s * b).collect()
    }

    /// Constant extension onto a nested finer or longer mesh.
    pub fn transfer(&self, mesh: &TimeMesh) -> Result<Self> {
        if (mesh.t_start() - self.mesh.t_start()).abs() > 1e-12 * mesh.t_start() {
            return Err(Error::Invalid("meshes must share the start time".into()));
        }
        let n = self.n;
        let mut values = vec![0.0; mesh.n_nodes() * n];
        for (k, t) in mesh.nodes().iter().enumerate().skip(1) {
            values[k * n..(k + 1) * n].copy_from_slice(&self.eval(*t));
        }
        Ok(Self { mesh: mesh.clone(), n, values })
    }

    /// Restriction to the first `nodes` nodes.
    pub fn truncated(&self, nodes: usize) -> Result<Self> {
        let mesh = TimeMesh::from_nodes(self.mesh.nodes()[..nodes].to_vec())?;
        Ok(Self { mesh, n: self.n, values: self.values[..nodes * self.n].to_vec() })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { mesh: self.mesh.clone(), n: self.n, values: self.values.iter().map(|v| v * s).collect() }
    }
}

/// `‖φ‖²_D = ∫ ‖φ̇‖²_M dt`, exact for piecewise-linear fields.
pub fn d_norm_sq(ms: &MassSystem, phi: &PathField) -> f64 {
    let nodes = phi.mesh.nodes();
    let n = phi.n_components();
    let mut s = 0.0;
    for e in 0..phi.mesh.n_elements() {
        let h = nodes[e + 1] - nodes[e];
        let (a, b) = (phi.node(e), phi.node(e + 1));
        let mut q = 0.0;
        for k in 0..n {
            q += ms.coord_mass(k) * (b[k] - a[k]).powi(2);
        }
        s += q / h;
    }
    s
}

/// D-distance between two fields on the same mesh.
pub fn d_distance(ms: &MassSystem, a: &PathField, b: &PathField) -> f64 {
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let f = PathField { mesh: a.mesh.clone(), n: a.n, values: diff };
    d_norm_sq(ms, &f).sqrt()
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Weighted L² mass over D-norm: `∫ ‖φ‖²_M / t^{2+ε} dt / ∫ ‖φ̇‖²_M dt`.
pub fn hardy_ratio(ms: &MassSystem, phi: &PathField, eps: f64) -> Result<f64> {
    let d = d_norm_sq(ms, phi);
    if !(d > 0.0) {
        return Err(Error::Invalid("Hardy ratio of a zero field".into()));
    }
    let (gx, gw) = gauss_legendre01(6);
    let nodes = phi.mesh.nodes();
    let n = phi.n_components();
    let mut num = 0.0;
    for e in 0..phi.mesh.n_elements() {
        let (t0, h) = (nodes[e], nodes[e + 1] - nodes[e]);
        let (a, b) = (phi.node(e), phi.node(e + 1));
        for (s, w) in gx.iter().zip(&gw) {
            let t = t0 + s * h;
            let mut q = 0.0;
            for k in 0..n {
                q += ms.coord_mass(k) * ((1.0 - s) * a[k] + s * b[k]).powi(2);
            }
            num += w * h * q / t.powf(2.0 + eps);
        }
    }
    Ok(num / d)
}

/// `sup_t ‖φ(t)‖²_M / (t − t₀)` over the nodes, divided by `‖φ‖²_D` (at most 1).
pub fn sup_bound_ratio(ms: &MassSystem, phi: &PathField) -> Result<f64> {
    let d = d_norm_sq(ms, phi);
    if !(d > 0.0) {
        return Err(Error::Invalid("sup bound of a zero field".into()));
    }
    let t0 = phi.mesh.t_start();
    let n = phi.n_components();
    let mut best = 0.0f64;
    for (k, t) in phi.mesh.nodes().iter().enumerate().skip(1) {
        let v = phi.node(k);
        let q: f64 = (0..n).map(|c| ms.coord_mass(c) * v[c] * v[c]).sum();
        best = best.max(q / (t - t0));
    }
    Ok(best / d)
}

#[cfg(test)]
mod tests {
    #[test]
    fn stretched_mesh_and_coarsening() {
        let m = super::TimeMesh::stretched(1.0, 1e4, 64, 8.0).unwrap();
        assert_eq!(m.n_elements(), 64);
        assert_eq!(m.t_end(), 1e4);
        let h = |k: usize| m.nodes()[k + 1] / m.nodes()[k];
        assert!(h(0) < h(63));
        let g = super::TimeMesh::stretched(1.0, 1e4, 64, 0.0).unwrap();
        assert!((g.max_ratio() - 1e4f64.powf(1.0 / 64.0)).abs() < 1e-12);
        let c = m.coarsened().unwrap();
        assert_eq!(c.n_elements(), 32);
        assert_eq!(c.nodes()[5], m.nodes()[10]);
        assert!(c.coarsened().unwrap().extended(2e4).is_ok());
        assert!(super::TimeMesh::geometric(1.0, 10.0, 17).unwrap().coarsened().is_err());
    }

    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1, 2, 5, 16, 32] {
            let (x, w) = gauss_legendre01(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for p in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert_relative_eq!(q, 1.0 / (p as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn mesh_construction() {
        let m = TimeMesh::geometric(1.0, 100.0, 64).unwrap();
        assert_eq!(m.n_nodes(), 65);
        assert_eq!(m.t_start(), 1.0);
        assert_eq!(m.t_end(), 100.0);
        assert_relative_eq!(m.max_ratio(), 100f64.powf(1.0 / 64.0), epsilon = 1e-12);
        assert!(TimeMesh::geometric(1.0, 10.0, 4).is_err());
        assert!(TimeMesh::from_nodes((0..20).map(|i| 1.0 + (i % 3) as f64).collect()).is_err());
        let e = m.extended(200.0).unwrap();
        assert_eq!(&e.nodes()[..65], m.nodes());
        assert!(e.max_ratio() <= m.max_ratio() * (1.0 + 1e-12));
        assert_eq!(e.t_end(), 200.0);
        let g = TimeMesh::graded(1.0, 1e4, 40).unwrap();
        assert_eq!(g.n_elements(), 160);
    }

    #[test]
    fn locate_and_insert() {
        let m = TimeMesh::geometric(1.0, 100.0, 32).unwrap();
        assert_eq!(m.locate(1.0), 0);
        assert_eq!(m.locate(100.0), 31);
        let t = m.nodes()[5];
        assert_eq!(m.node_index(t), Some(5));
        let m2 = m.with_points(&[3.3, 0.5, 200.0]).unwrap();
        assert_eq!(m2.n_nodes(), 34);
        assert!(m2.node_index(3.3).is_some());
    }

    #[test]
    fn hardy_analytic_field() {
        let ms = MassSystem::new(2, vec![1.0, 1.0]).unwrap();
        let mesh = TimeMesh::graded(1.0, 1e8, 400).unwrap();
        let phi = PathField::from_fn(mesh, 4, |t, v| v[0] = 1.0 - 1.0 / t);
        let r = hardy_ratio(&ms, &phi, 0.0).unwrap();
        assert!((r - 1.0).abs() <= 1e-3, "ratio {r}");
        let r1 = hardy_ratio(&ms, &phi, 1.0).unwrap();
        assert!(r1 <= 1.0 + 1e-3);
        let mesh = TimeMesh::geometric(1.0, 2.0, 64).unwrap();
        let phi = PathField::from_fn(mesh, 4, |t, v| v[0] = 1.0 - 1.0 / t);
        let s = sup_bound_ratio(&ms, &phi).unwrap() * d_norm_sq(&ms, &phi);
        // at t = 2: ‖φ‖²/(t−1) = 0.25 while ∫φ̇² over [1,∞) is 1/3
        assert_relative_eq!(s, 0.25, epsilon = 1e-12);
        assert!(s <= 1.0 / 3.0);
        assert!(hardy_ratio(&ms, &PathField::zeros(TimeMesh::geometric(1.0, 2.0, 16).unwrap(), 4), 0.0).is_err());
    }

    #[test]
    fn transfer_keeps_values() {
        let m = TimeMesh::geometric(1.0, 10.0, 20).unwrap();
        let phi = PathField::from_fn(m.clone(), 2, |t, v| {
            v[0] = t.ln();
            v[1] = -t.sqrt() + 1.0;
        });
        let big = phi.transfer(&m.extended(40.0).unwrap()).unwrap();
        assert_eq!(&big.values()[..42], phi.values());
        assert_eq!(big.node(big.mesh.n_nodes() - 1), phi.node(20));
        let back = big.truncated(21).unwrap();
        assert_eq!(back, phi);
    }

    proptest! {
        #[test]
        fn hardy_bounds_hold(vals in proptest::collection::vec(-1.0f64..1.0, 64), eps in 0.0f64..1.0) {
            let ms = MassSystem::new(2, vec![1.0, 2.0]).unwrap();
            let mesh = TimeMesh::geometric(1.0, 1000.0, 31).unwrap();
            let mut v = vec![0.0; 4];
            for (k, x) in vals.iter().enumerate().take(31 * 4 - 4) {
                v.push(*x * (k as f64).sqrt());
            }
            v.resize(32 * 4, 0.5);
            let phi = PathField::from_values(mesh, 4, v).unwrap();
            let r = hardy_ratio(&ms, &phi, eps).unwrap();
            prop_assert!(r <= 4.0 / (1.0 + eps).powi(2) * (1.0 + 1e-3));
            prop_assert!(sup_bound_ratio(&ms, &phi).unwrap() <= 1.0 + 1e-12);
        }
    }
}
