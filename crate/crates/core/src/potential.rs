//! Newtonian potential `U(x) = Σ_{i<j} m_i m_j / |r_i − r_j|` and its derivatives.
//!
//! The gradient is Euclidean, so Newton's equation reads `M ẍ = ∇U(x)`.
//! Hessians are exposed only as products.

use crate::error::{Error, Result};
use crate::model::{ClusterPartition, MassSystem};

/// Which pairs contribute to a sum.
#[derive(Debug, Clone, Copy)]
pub enum Pairs<'a> {
    All,
    /// Only pairs with equal labels (intra-cluster potential `U_a`).
    Intra(&'a [usize]),
}

impl Pairs<'_> {
    #[inline]
    fn keep(&self, i: usize, j: usize) -> bool {
        match self {
            Pairs::All => true,
            Pairs::Intra(lab) => lab[i] == lab[j],
        }
    }
}

/// Value, gradient and a Hessian-product handle at one configuration.
#[derive(Debug, Clone)]
pub struct PotentialEval<'a> {
    pub value: f64,
    pub gradient: Vec<f64>,
    ms: &'a MassSystem,
    x: Vec<f64>,
}

impl<'a> PotentialEval<'a> {
    pub fn new(ms: &'a MassSystem, x: &[f64]) -> Result<Self> {
        ms.check_len(x)?;
        let mut gradient = vec![0.0; x.len()];
        let value = value_grad_into(ms, x, Pairs::All, &mut gradient)?;
        Ok(Self { value, gradient, ms, x: x.to_vec() })
    }

    pub fn hessian_action(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; psi.len()];
        hess_apply_into(self.ms, &self.x, psi, Pairs::All, &mut out);
        out
    }
}

#[inline]
fn pair_r2(x: &[f64], d: usize, i: usize, j: usize) -> f64 {
    let (a, b) = (&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn collision(i: usize, j: usize) -> Error {
    Error::Collision { i, j, time: None }
}

/// `U` restricted to `pairs`, without shape checks.
pub(crate) fn value_pairs(ms: &MassSystem, x: &[f64], pairs: Pairs) -> Result<f64> {
    let d = ms.dim();
    let m = ms.masses();
    let mut u = 0.0;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if !pairs.keep(i, j) {
                continue;
            }
            let r2 = pair_r2(x, d, i, j);
            if !(r2 > 0.0) || !r2.is_finite() {
                return Err(collision(i, j));
            }
            u += m[i] * m[j] / r2.sqrt();
        }
    }
    Ok(u)
}

/// `U(base + delta) − U(base)` without cancellation: per pair
/// `1/|r+δ| − 1/|r| = −(2<r,δ> + |δ|²) / (|r| |r+δ| (|r| + |r+δ|))`.
pub(crate) fn value_diff_pairs(ms: &MassSystem, base: &[f64], delta: &[f64], pairs: Pairs) -> Result<f64> {
    let d = ms.dim();
    let m = ms.masses();
    let mut du = 0.0;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if !pairs.keep(i, j) {
                continue;
            }
            let (mut rr, mut rd, mut dd, mut ss) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..d {
                let r = base[i * d + k] - base[j * d + k];
                let e = delta[i * d + k] - delta[j * d + k];
                rr += r * r;
                rd += r * e;
                dd += e * e;
                ss += (r + e) * (r + e);
            }
            if !(ss > 0.0) || !ss.is_finite() || !(rr > 0.0) {
                return Err(collision(i, j));
            }
            let (a, b) = (rr.sqrt(), ss.sqrt());
            du -= m[i] * m[j] * (2.0 * rd + dd) / (a * b * (a + b));
        }
    }
    Ok(du)
}

/// Writes `∇U` into `grad` (overwriting) and returns `U`.
pub(crate) fn value_grad_into(ms: &MassSystem, x: &[f64], pairs: Pairs, grad: &mut [f64]) -> Result<f64> {
    let d = ms.dim();
    let m = ms.masses();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut u = 0.0;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if !pairs.keep(i, j) {
                continue;
            }
            let r2 = pair_r2(x, d, i, j);
            if !(r2 > 0.0) || !r2.is_finite() {
                return Err(collision(i, j));
            }
            let rho = r2.sqrt();
            let mm = m[i] * m[j];
            u += mm / rho;
            let c = mm / (r2 * rho);
            for a in 0..d {
                let g = c * (x[i * d + a] - x[j * d + a]);
                grad[i * d + a] -= g;
                grad[j * d + a] += g;
            }
        }
    }
    Ok(u)
}

/// Accumulates `∇²U(x) ψ` into `out`. The caller guarantees `x ∉ Δ`.
pub(crate) fn hess_apply_into(ms: &MassSystem, x: &[f64], psi: &[f64], pairs: Pairs, out: &mut [f64]) {
    let d = ms.dim();
    let m = ms.masses();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if !pairs.keep(i, j) {
                continue;
            }
            let (xi, xj) = (&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            let (pi, pj) = (&psi[i * d..(i + 1) * d], &psi[j * d..(j + 1) * d]);
            let mut r2 = 0.0;
            let mut rd = 0.0;
            for a in 0..d {
                let ra = xi[a] - xj[a];
                r2 += ra * ra;
                rd += ra * (pi[a] - pj[a]);
            }
            let rho = r2.sqrt();
            let inv3 = 1.0 / (r2 * rho);
            let mm = m[i] * m[j];
            let c5 = 3.0 * mm * rd * inv3 / r2;
            let c3 = mm * inv3;
            for a in 0..d {
                let h = c5 * (xi[a] - xj[a]) - c3 * (pi[a] - pj[a]);
                out[i * d + a] += h;
                out[j * d + a] -= h;
            }
        }
    }
}

/// Quadratic form `<∇²U(x) ψ, ψ>` without allocating.
pub(crate) fn hess_quad(ms: &MassSystem, x: &[f64], psi: &[f64], pairs: Pairs) -> f64 {
    let d = ms.dim();
    let m = ms.masses();
    let mut q = 0.0;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if !pairs.keep(i, j) {
                continue;
            }
            let (mut r2, mut rd, mut dd) = (0.0, 0.0, 0.0);
            for a in 0..d {
                let ra = x[i * d + a] - x[j * d + a];
                let da = psi[i * d + a] - psi[j * d + a];
                r2 += ra * ra;
                rd += ra * da;
                dd += da * da;
            }
            let rho = r2.sqrt();
            q += m[i] * m[j] * (3.0 * rd * rd / r2 - dd) / (r2 * rho);
        }
    }
    q
}

pub fn u_value(ms: &MassSystem, x: &[f64]) -> Result<f64> {
    ms.check_len(x)?;
    value_pairs(ms, x, Pairs::All)
}

pub fn u_gradient(ms: &MassSystem, x: &[f64]) -> Result<Vec<f64>> {
    ms.check_len(x)?;
    let mut g = vec![0.0; x.len()];
    value_grad_into(ms, x, Pairs::All, &mut g)?;
    Ok(g)
}

pub fn u_hessian_apply(ms: &MassSystem, x: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
    ms.check_len(x)?;
    ms.check_len(psi)?;
    // surfaces collisions as errors before the unchecked kernel runs
    value_pairs(ms, x, Pairs::All)?;
    let mut out = vec![0.0; x.len()];
    hess_apply_into(ms, x, psi, Pairs::All, &mut out);
    Ok(out)
}

/// Clustered potential `U_a = Σ_K U_K`; cross-cluster pairs are omitted.
pub fn u_clustered(ms: &MassSystem, part: &ClusterPartition, x: &[f64]) -> Result<f64> {
    ms.check_len(x)?;
    if part.n_bodies() != ms.n_bodies() {
        return Err(Error::Shape { expected: ms.n_bodies(), got: part.n_bodies() });
    }
    let lab = part.labels();
    value_pairs(ms, x, Pairs::Intra(&lab))
}

/// Gradient of the clustered potential.
pub fn u_clustered_gradient(ms: &MassSystem, part: &ClusterPartition, x: &[f64]) -> Result<Vec<f64>> {
    ms.check_len(x)?;
    let lab = part.labels();
    let mut g = vec![0.0; x.len()];
    value_grad_into(ms, x, Pairs::Intra(&lab), &mut g)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    #[test]
    fn difference_formula_matches_and_is_accurate() {
        let ms = crate::model::MassSystem::new(2, vec![1.0, 2.0, 0.5]).unwrap();
        let base = [1.0, 0.2, -0.3, 0.5, 0.1, -1.2];
        let delta = [0.01, -0.02, 0.03, 0.0, -0.01, 0.02];
        let x: Vec<f64> = base.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let want = super::u_value(&ms, &x).unwrap() - super::u_value(&ms, &base).unwrap();
        let got = super::value_diff_pairs(&ms, &base, &delta, super::Pairs::All).unwrap();
        assert!((got - want).abs() < 1e-14);
        // far away the direct difference loses everything; the formula keeps the leading term
        let far: Vec<f64> = base.iter().map(|v| v * 1e12).collect();
        let tiny = super::value_diff_pairs(&ms, &far, &delta, super::Pairs::All).unwrap();
        let mut g = vec![0.0; 6];
        super::value_grad_into(&ms, &far, super::Pairs::All, &mut g).unwrap();
        let lin: f64 = g.iter().zip(&delta).map(|(a, b)| a * b).sum();
        assert!((tiny - lin).abs() <= 1e-6 * lin.abs());
    }

    use super::*;
    use crate::model::project_com;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ms3() -> MassSystem {
        MassSystem::new(2, vec![1.0, 2.0, 0.5]).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn value_examples() {
        let ms = MassSystem::new(2, vec![1.0, 1.0]).unwrap();
        assert_eq!(u_value(&ms, &[1.0, 0.0, -1.0, 0.0]).unwrap(), 0.5);
        let h = 0.5f64.sqrt();
        assert_relative_eq!(u_value(&ms, &[h, 0.0, -h, 0.0]).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        match u_value(&ms, &[1.0, 1.0, 1.0, 1.0]) {
            Err(Error::Collision { i: 0, j: 1, .. }) => {}
            other => panic!("expected collision, got {other:?}"),
        }
    }

    #[test]
    fn gradient_example() {
        let ms = MassSystem::new(2, vec![1.0, 1.0]).unwrap();
        let g = u_gradient(&ms, &[1.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(g, vec![-0.25, 0.0, 0.25, 0.0]);
    }

    #[test]
    fn clustered_examples() {
        let ms = MassSystem::new(2, vec![1.0, 1.0, 1.0]).unwrap();
        let x = [1.0, 0.0, 0.0, 1.0, -1.0, -1.0];
        let sing = ClusterPartition::singletons(3);
        assert_eq!(u_clustered(&ms, &sing, &x).unwrap(), 0.0);
        let one = ClusterPartition::single_block(3);
        assert_eq!(u_clustered(&ms, &one, &x).unwrap(), u_value(&ms, &x).unwrap());
        let p = ClusterPartition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        assert_relative_eq!(u_clustered(&ms, &p, &x).unwrap(), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        // cross-cluster coincidence is allowed
        let y = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        assert!(u_clustered(&ms, &p, &y).is_ok());
    }

    #[test]
    fn potential_eval_bundle() {
        let ms = ms3();
        let x = [1.0, 0.2, -0.3, 0.5, -1.0, -1.2];
        let pe = PotentialEval::new(&ms, &x).unwrap();
        assert_eq!(pe.value, u_value(&ms, &x).unwrap());
        assert_eq!(pe.hessian_action(&x), u_hessian_apply(&ms, &x, &x).unwrap());
    }

    fn config() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, 6).prop_filter("separated", |x| {
            let ms = ms3();
            crate::model::min_separation(&ms, x) > 0.2
        })
    }

    proptest! {
        #[test]
        fn euler_and_translation(x in config()) {
            let ms = ms3();
            let u = u_value(&ms, &x).unwrap();
            let g = u_gradient(&ms, &x).unwrap();
            prop_assert!((dot(&g, &x) + u).abs() <= 1e-10 * u);
            let sx: f64 = g.iter().step_by(2).sum();
            let sy: f64 = g.iter().skip(1).step_by(2).sum();
            prop_assert!(sx.abs() <= 1e-12 * (1.0 + u * u) && sy.abs() <= 1e-12 * (1.0 + u * u));
        }

        #[test]
        fn hessian_identities(x in config(), psi in proptest::collection::vec(-1.0f64..1.0, 6), eta in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let ms = ms3();
            let g = u_gradient(&ms, &x).unwrap();
            let hx = u_hessian_apply(&ms, &x, &x).unwrap();
            let scale = g.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            for (a, b) in hx.iter().zip(&g) {
                prop_assert!((a + 2.0 * b).abs() <= 1e-10 * scale);
            }
            let hp = u_hessian_apply(&ms, &x, &psi).unwrap();
            let he = u_hessian_apply(&ms, &x, &eta).unwrap();
            let (l, r) = (dot(&hp, &eta), dot(&he, &psi));
            prop_assert!((l - r).abs() <= 1e-10 * (1.0 + l.abs()));
            prop_assert!((hess_quad(&ms, &x, &psi, Pairs::All) - dot(&hp, &psi)).abs() <= 1e-10 * (1.0 + l.abs()));
            let h = 1e-5;
            let xp: Vec<f64> = x.iter().zip(&psi).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&psi).map(|(a, b)| a - h * b).collect();
            let gp = u_gradient(&ms, &xp).unwrap();
            let gm = u_gradient(&ms, &xm).unwrap();
            let nrm = hp.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = gp.iter().zip(&gm).zip(&hp).map(|((a, b), c)| ((a - b) / (2.0 * h) - c).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-6 * nrm.max(1e-3));
        }

        #[test]
        fn gradient_matches_fd(x in config()) {
            let ms = ms3();
            let g = u_gradient(&ms, &x).unwrap();
            let h = 1e-5;
            for k in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (u_value(&ms, &xp).unwrap() - u_value(&ms, &xm).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()));
            }
        }

        #[test]
        fn homogeneity(x in config(), psi in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let ms = ms3();
            let u = u_value(&ms, &x).unwrap();
            let g = u_gradient(&ms, &x).unwrap();
            let hp = u_hessian_apply(&ms, &x, &psi).unwrap();
            for lam in [0.5, 2.0, 10.0] {
                let xl: Vec<f64> = x.iter().map(|v| v * lam).collect();
                prop_assert!((u_value(&ms, &xl).unwrap() - u / lam).abs() <= 1e-12 * u / lam);
                let gl = u_gradient(&ms, &xl).unwrap();
                for (a, b) in gl.iter().zip(&g) {
                    prop_assert!((a - b / (lam * lam)).abs() <= 1e-12 * (1.0 + b.abs()));
                }
                let hl = u_hessian_apply(&ms, &xl, &psi).unwrap();
                for (a, b) in hl.iter().zip(&hp) {
                    prop_assert!((a - b / lam.powi(3)).abs() <= 1e-11 * (1.0 + b.abs()));
                }
            }
        }

        #[test]
        fn raw_input_is_translation_invariant(x in config(), s in -5.0f64..5.0) {
            let ms = ms3();
            let shifted: Vec<f64> = x.iter().map(|v| v + s).collect();
            let a = u_value(&ms, &project_com(&ms, &x).unwrap()).unwrap();
            let b = u_value(&ms, &shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }
    }
}
