//! Minimal central configurations on the inertia ellipsoid `<Mx, x> = 1`.
//!
//! The search runs in the scaled coordinates `z = M^{1/2} x`, where the
//! ellipsoid becomes the unit sphere. Each restart does Riemannian gradient
//! descent with Barzilai-Borwein steps, then Newton polishing with the
//! rotational null directions projected out.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mass_inner_unchecked, ClusterPartition, Configuration, MassSystem};
use crate::potential::{hess_apply_into, value_grad_into, Pairs};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralConfigOptions {
    pub restarts: usize,
    /// Acceptance threshold for the KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for CentralConfigOptions {
    fn default() -> Self {
        Self { restarts: 32, tol: 1e-10, max_iter: 4000, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralConfigResult {
    pub b_m: Configuration,
    pub u_min: f64,
    pub beta: f64,
    pub kkt_residual: f64,
    /// Index of the restart that produced `b_m` (0 is the caller's seed).
    pub restart: usize,
    pub converged_restarts: usize,
    /// Restarts whose value matched `u_min` to 1e-9 relative.
    pub hits: usize,
}

/// Minimal central configuration of one cluster, in the cluster's own coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterCentral {
    pub bodies: Vec<usize>,
    pub result: CentralConfigResult,
}

/// `β = ∛((9/2) U_min)`.
pub fn beta_from_u(u_min: f64) -> f64 {
    (4.5 * u_min).cbrt()
}

/// `‖∇U(b) − μ M b‖` with `μ = <∇U(b), b> = −U(b)`.
pub fn kkt_residual(ms: &MassSystem, b: &[f64]) -> Result<f64> {
    ms.check_len(b)?;
    let mut g = vec![0.0; b.len()];
    value_grad_into(ms, b, Pairs::All, &mut g)?;
    let mu: f64 = g.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(g.iter()
        .enumerate()
        .map(|(k, gk)| (gk - mu * ms.coord_mass(k) * b[k]).powi(2))
        .sum::<f64>()
        .sqrt())
}

struct Sphere<'a> {
    ms: &'a MassSystem,
    sq: Vec<f64>,
    /// Orthonormal basis of the barycentric constraint directions in z.
    com: Vec<Vec<f64>>,
}

impl<'a> Sphere<'a> {
    fn new(ms: &'a MassSystem) -> Self {
        let sq: Vec<f64> = ms.coord_masses().iter().map(|m| m.sqrt()).collect();
        let d = ms.dim();
        let mt = ms.total_mass().sqrt();
        let com = (0..d)
            .map(|a| (0..ms.n_coords()).map(|k| if k % d == a { sq[k] / mt } else { 0.0 }).collect())
            .collect();
        Self { ms, sq, com }
    }

    fn to_x(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.sq).map(|(a, s)| a / s).collect()
    }

    fn project_com(&self, v: &mut [f64]) {
        for u in &self.com {
            let c = dot(u, v);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    }

    fn normalize(&self, z: &mut [f64]) {
        let n = dot(z, z).sqrt();
        z.iter_mut().for_each(|x| *x /= n);
    }

    /// Value and Riemannian gradient in z.
    fn eval(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = self.to_x(z);
        let mut g = vec![0.0; x.len()];
        let u = value_grad_into(self.ms, &x, Pairs::All, &mut g)?;
        let mut gz: Vec<f64> = g.iter().zip(&self.sq).map(|(a, s)| a / s).collect();
        let c = dot(&gz, z);
        gz.iter_mut().zip(z).for_each(|(a, b)| *a -= c * b);
        self.project_com(&mut gz);
        Ok((u, gz))
    }

    /// Dense Riemannian Hessian `P (H_z − <z, g_z> I) P`.
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let n = z.len();
        let x = self.to_x(z);
        let mut g = vec![0.0; n];
        value_grad_into(self.ms, &x, Pairs::All, &mut g)?;
        let zg: f64 = g.iter().zip(&self.sq).zip(z).map(|((a, s), b)| a / s * b).sum();
        let mut h = DMatrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0 / self.sq[k];
            col.iter_mut().for_each(|c| *c = 0.0);
            hess_apply_into(self.ms, &x, &e, Pairs::All, &mut col);
            for i in 0..n {
                h[(i, k)] = col[i] / self.sq[i];
            }
            h[(k, k)] -= zg;
        }
        let mut p = DMatrix::identity(n, n);
        let zv = DVector::from_column_slice(z);
        p -= &zv * zv.transpose();
        for u in &self.com {
            let uv = DVector::from_column_slice(u);
            p -= &uv * uv.transpose();
        }
        let h = (&h + h.transpose()) * 0.5;
        Ok(&p * h * &p)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Local {
    z: Vec<f64>,
    u: f64,
    kkt: f64,
}

fn descend(sp: &Sphere, mut z: Vec<f64>, opts: &CentralConfigOptions) -> Result<Local> {
    sp.project_com(&mut z);
    sp.normalize(&mut z);
    let (mut u, mut g) = sp.eval(&z)?;
    let mut alpha = 1e-2 / (1.0 + u);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..opts.max_iter {
        let gn = dot(&g, &g).sqrt();
        if gn < 1e-7 * (1.0 + u) {
            break;
        }
        if let Some((zp, gp)) = &prev {
            let s: Vec<f64> = z.iter().zip(zp).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(gp).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                alpha = (dot(&s, &s) / sy).min(10.0);
            }
        }
        // Armijo backtracking; collisions shrink the step.
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..60 {
            let mut zn: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            sp.normalize(&mut zn);
            match sp.eval(&zn) {
                Ok((un, gnext)) if un <= u - 1e-4 * step * gn * gn => {
                    accepted = Some((zn, un, gnext));
                    break;
                }
                Ok(_) | Err(Error::Collision { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((zn, un, gnext)) = accepted else { break };
        prev = Some((std::mem::replace(&mut z, zn), std::mem::replace(&mut g, gnext)));
        u = un;
    }
    // Newton polish in the tangent space.
    for _ in 0..30 {
        let x = sp.to_x(&z);
        let kkt = kkt_residual(sp.ms, &x)?;
        if kkt <= 0.01 * opts.tol {
            break;
        }
        let h = sp.hessian(&z)?;
        let eig = SymmetricEigen::new(h);
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gv = DVector::from_column_slice(&g);
        let mut dz = DVector::zeros(z.len());
        for (i, lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() <= 1e-9 * lmax {
                continue;
            }
            let v = eig.eigenvectors.column(i);
            dz -= v * (v.dot(&gv) / lam.abs());
        }
        let mut zn: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + b).collect();
        sp.project_com(&mut zn);
        sp.normalize(&mut zn);
        match sp.eval(&zn) {
            Ok((un, gnext)) => {
                let knew = kkt_residual(sp.ms, &sp.to_x(&zn))?;
                if knew >= kkt {
                    break;
                }
                z = zn;
                u = un;
                g = gnext;
            }
            Err(_) => break,
        }
    }
    let x = sp.to_x(&z);
    let kkt = kkt_residual(sp.ms, &x)?;
    Ok(Local { z, u, kkt })
}

/// Minimal central configuration among `opts.restarts` starts.
///
/// Restart 0 starts from `seed`; the others start from Gaussian configurations
/// drawn from `ChaCha8(opts.seed + restart)`.
pub fn find_minimal_central(
    ms: &MassSystem,
    seed: Option<&[f64]>,
    opts: &CentralConfigOptions,
) -> Result<CentralConfigResult> {
    if let Some(s) = seed {
        ms.check_len(s)?;
        let mut v = s.to_vec();
        ms.remove_barycenter(&mut v);
        crate::potential::value_pairs(ms, &v, Pairs::All)?;
    }
    let sp = Sphere::new(ms);
    let n = ms.n_coords();
    let starts = opts.restarts.max(1);
    let runs: Vec<Result<Local>> = (0..starts)
        .into_par_iter()
        .map(|r| {
            let z0: Vec<f64> = match (r, seed) {
                (0, Some(s)) => s.iter().zip(&sp.sq).map(|(a, q)| a * q).collect(),
                _ => {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
                    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
                }
            };
            descend(&sp, z0, opts)
        })
        .collect();

    let mut best: Option<(usize, &Local)> = None;
    let mut converged = 0;
    let mut last_err = None;
    for (r, run) in runs.iter().enumerate() {
        match run {
            Ok(l) if l.kkt <= opts.tol => {
                converged += 1;
                if best.is_none_or(|(_, b)| l.u < b.u * (1.0 - 1e-12)) {
                    best = Some((r, l));
                }
            }
            Ok(l) => last_err = Some(format!("restart {r}: KKT residual {:e} above tolerance", l.kkt)),
            Err(e) => last_err = Some(format!("restart {r}: {e}")),
        }
    }
    let Some((restart, l)) = best else {
        return Err(Error::Optimization(format!(
            "no central configuration converged in {starts} restarts ({})",
            last_err.unwrap_or_default()
        )));
    };
    let hits = runs
        .iter()
        .filter(|r| matches!(r, Ok(o) if o.kkt <= opts.tol && (o.u - l.u).abs() <= 1e-9 * l.u))
        .count();
    let mut b = sp.to_x(&l.z);
    // exact normalization after rounding
    let s = mass_inner_unchecked(ms, &b, &b).sqrt();
    b.iter_mut().for_each(|v| *v /= s);
    let u_min = crate::potential::value_pairs(ms, &b, Pairs::All)?;
    Ok(CentralConfigResult {
        b_m: Configuration::from_flat(ms.dim(), b)?,
        u_min,
        beta: beta_from_u(u_min),
        kkt_residual: l.kkt,
        restart,
        converged_restarts: converged,
        hits,
    })
}

/// Independent minimal central configurations for each cluster with two or
/// more bodies, normalized with the cluster's own masses.
pub fn find_minimal_clustered(
    ms: &MassSystem,
    part: &ClusterPartition,
    seed: Option<&[f64]>,
    opts: &CentralConfigOptions,
) -> Result<Vec<ClusterCentral>> {
    if part.n_bodies() != ms.n_bodies() {
        return Err(Error::Shape { expected: ms.n_bodies(), got: part.n_bodies() });
    }
    let d = ms.dim();
    let mut out = Vec::new();
    for block in part.blocks().iter().filter(|b| b.len() >= 2) {
        let cms = ms.restrict(block)?;
        let cseed: Option<Vec<f64>> =
            seed.map(|s| block.iter().flat_map(|&i| s[i * d..(i + 1) * d].iter().copied()).collect());
        let result = find_minimal_central(&cms, cseed.as_deref(), opts)?;
        out.push(ClusterCentral { bodies: block.clone(), result });
    }
    Ok(out)
}

/// Embeds `Σ_K β_K b^K` into the full configuration space, zero on singletons.
pub fn embed_scaled_shapes(ms: &MassSystem, clusters: &[ClusterCentral]) -> Vec<f64> {
    let d = ms.dim();
    let mut v = vec![0.0; ms.n_coords()];
    for c in clusters {
        for (local, &body) in c.bodies.iter().enumerate() {
            for a in 0..d {
                v[body * d + a] = c.result.beta * c.result.b_m[local * d + a];
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::u_value;
    use approx::assert_relative_eq;

    fn opts(restarts: usize) -> CentralConfigOptions {
        CentralConfigOptions { restarts, ..Default::default() }
    }

    #[test]
    fn two_body_minimum() {
        let ms = MassSystem::new(2, vec![1.0, 1.0]).unwrap();
        let r = find_minimal_central(&ms, None, &opts(8)).unwrap();
        assert_relative_eq!(r.u_min, 0.5f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(r.beta, (9.0 / (2.0 * 2f64.sqrt())).cbrt(), max_relative = 1e-12);
        assert_relative_eq!(r.beta, 1.470841, epsilon = 1e-6);
        let b = r.b_m.as_slice();
        let sep = ((b[0] - b[2]).powi(2) + (b[1] - b[3]).powi(2)).sqrt();
        assert_relative_eq!(sep, 2f64.sqrt(), max_relative = 1e-10);
        assert!(r.kkt_residual <= 1e-10);
    }

    #[test]
    fn equal_three_body_is_lagrange() {
        let ms = MassSystem::new(2, vec![1.0, 1.0, 1.0]).unwrap();
        let r = find_minimal_central(&ms, None, &opts(32)).unwrap();
        // equilateral with unit inertia has side 1 and U = 3; collinear Euler gives 2.5·√2
        assert_relative_eq!(r.u_min, 3.0, max_relative = 1e-10);
        assert!(r.u_min < 2.5 * 2f64.sqrt());
        assert!(r.kkt_residual < 1e-9);
        let b = r.b_m.as_slice();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            let s = ((b[2 * i] - b[2 * j]).powi(2) + (b[2 * i + 1] - b[2 * j + 1]).powi(2)).sqrt();
            assert_relative_eq!(s, 1.0, max_relative = 1e-8);
        }
        assert_relative_eq!(mass_inner_unchecked(&ms, b, b), 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.beta.powi(3), 4.5 * r.u_min, max_relative = 1e-12);
    }

    #[test]
    fn multiplier_is_minus_u() {
        let ms = MassSystem::new(2, vec![1.0, 2.0, 3.0, 0.5]).unwrap();
        let r = find_minimal_central(&ms, None, &opts(16)).unwrap();
        let b = r.b_m.as_slice();
        let g = crate::potential::u_gradient(&ms, b).unwrap();
        let mu = -r.u_min;
        let res: f64 = g
            .iter()
            .enumerate()
            .map(|(k, gk)| (gk - mu * ms.coord_mass(k) * b[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-9, "residual {res}");
    }

    #[test]
    fn rotation_leaves_minimum_fixed() {
        let ms = MassSystem::new(2, vec![1.0, 2.0, 3.0]).unwrap();
        let seed = [1.0, 0.3, -0.7, 1.1, 0.2, -0.9];
        let base = find_minimal_central(&ms, Some(&seed), &opts(1)).unwrap();
        let th: f64 = 0.7;
        let rot: Vec<f64> = seed
            .chunks(2)
            .flat_map(|p| [th.cos() * p[0] - th.sin() * p[1], th.sin() * p[0] + th.cos() * p[1]])
            .collect();
        let r = find_minimal_central(&ms, Some(&rot), &opts(1)).unwrap();
        assert!((r.u_min - base.u_min).abs() <= 1e-9);
    }

    #[test]
    fn collided_seed_is_rejected() {
        let ms = MassSystem::new(2, vec![1.0, 1.0]).unwrap();
        assert!(find_minimal_central(&ms, Some(&[1.0, 0.0, 1.0, 0.0]), &opts(2)).is_err());
    }

    #[test]
    fn clustered_variants() {
        let ms = MassSystem::new(2, vec![1.0, 1.0, 1.0]).unwrap();
        let sing = ClusterPartition::singletons(3);
        assert!(find_minimal_clustered(&ms, &sing, None, &opts(4)).unwrap().is_empty());

        let one = ClusterPartition::single_block(3);
        let c = find_minimal_clustered(&ms, &one, None, &opts(16)).unwrap();
        let full = find_minimal_central(&ms, None, &opts(16)).unwrap();
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c[0].result.u_min, full.u_min, max_relative = 1e-12);

        let p = ClusterPartition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let c = find_minimal_clustered(&ms, &p, None, &opts(4)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].bodies, vec![0, 1]);
        assert_relative_eq!(c[0].result.u_min, 0.5f64.sqrt(), max_relative = 1e-12);

        let emb = embed_scaled_shapes(&ms, &c);
        assert_eq!(&emb[4..], &[0.0, 0.0]);
        assert!(ms.barycenter(&emb).iter().all(|v| v.abs() < 1e-14));
        let beta = c[0].result.beta;
        let cms = ms.restrict(&[0, 1]).unwrap();
        assert_relative_eq!(u_value(&cms, &emb[..4]).unwrap(), c[0].result.u_min / beta, max_relative = 1e-12);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let ms = MassSystem::new(3, vec![1.0, 2.0, 1.5, 0.7]).unwrap();
        let a = find_minimal_central(&ms, None, &opts(8)).unwrap();
        let b = find_minimal_central(&ms, None, &opts(8)).unwrap();
        assert_eq!(a.b_m, b.b_m);
        assert_eq!(a.restart, b.restart);
    }
}
