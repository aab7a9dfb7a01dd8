//! Second variation along a trajectory as a weighted Sturm-Liouville problem.
//!
//! On `[t_s, T_max]` the form `a(ψ) = ∫ ‖ψ̇‖²_M + ⟨∇²U(γ)ψ, ψ⟩ dt` is compared
//! with the mass `b(ψ) = ∫ ‖ψ‖²_M / t³ dt`, with `ψ(t_s) = 0` and a natural
//! condition at `T_max`. Eigenvalues are Rayleigh-quotient minima of `a/b`,
//! computed from P1 elements by shift-invert subspace iteration.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandSpd;
use crate::mesh::{gauss_legendre01, PathField, TimeMesh};
use crate::model::{min_separation, MassSystem};
use crate::potential::{hess_apply_into, Pairs};
use crate::trajectory::{shoot_to, Trajectory};

pub const WEIGHT_EXPONENT: u32 = 3;
const QUAD_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralOptions {
    pub t_max: f64,
    pub nodes_per_decade: usize,
    pub n_eigs: usize,
    /// Backward extension below `t = 1`.
    pub eps_back: f64,
    /// Relative eigen-residual target.
    pub tol: f64,
    pub max_iter: usize,
    /// Kernel threshold relative to `max(1, |λ₂|)`.
    pub tol_ker: f64,
    /// Relative bracket width at which the root bisection stops.
    pub tol_root: f64,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            t_max: 1e3,
            nodes_per_decade: 400,
            n_eigs: 3,
            eps_back: 0.1,
            tol: 1e-10,
            max_iter: 3000,
            tol_ker: 1e-6,
            tol_root: 1e-10,
            seed: 0,
        }
    }
}

/// Potential Hessian sampled along a path.
pub trait HessianPath: Sync {
    fn n_coords(&self) -> usize;
    fn coord_mass(&self, c: usize) -> f64;
    /// Earliest time at which `block` may be called.
    fn t_min(&self) -> f64;
    /// Row-major `n×n` block of `∇²U(γ(t))`.
    fn block(&self, t: f64, out: &mut [f64]) -> Result<()>;
}

/// Stand-in potential term `−κ/t³·Id` with unit masses. `κ = 0` is the free case.
#[derive(Debug, Clone, Copy)]
pub struct SeparablePath {
    pub n: usize,
    pub kappa: f64,
}

impl SeparablePath {
    /// Root of `λ₁(t) = j₁,₁² t / 4 − κ` on `[t, ∞)`.
    pub fn analytic_root(&self) -> f64 {
        4.0 * self.kappa / (BESSEL_J1_ZERO * BESSEL_J1_ZERO)
    }

    /// First eigenvalue on `[t, ∞)`.
    pub fn analytic_lambda1(&self, t: f64) -> f64 {
        BESSEL_J1_ZERO * BESSEL_J1_ZERO * t / 4.0 - self.kappa
    }
}

/// First positive zero of `J₁`.
pub const BESSEL_J1_ZERO: f64 = 3.831_705_970_207_512_3;

impl HessianPath for SeparablePath {
    fn n_coords(&self) -> usize {
        self.n
    }
    fn coord_mass(&self, _c: usize) -> f64 {
        1.0
    }
    fn t_min(&self) -> f64 {
        f64::MIN_POSITIVE
    }
    fn block(&self, t: f64, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.n {
            out[c * self.n + c] = -self.kappa / (t * t * t);
        }
        Ok(())
    }
}

/// A trajectory with cubic Hermite interpolation between samples.
#[derive(Debug, Clone)]
pub struct TrajectoryPath {
    ms: MassSystem,
    traj: Trajectory,
}

impl TrajectoryPath {
    pub fn new(ms: &MassSystem, traj: Trajectory) -> Result<Self> {
        ms.check_len(traj.position(0))?;
        Ok(Self { ms: ms.clone(), traj })
    }

    /// Prepends a backward shooting solution on `[t₀ − eps, t₀)` started from
    /// the first sample of `traj`.
    pub fn with_backward_extension(ms: &MassSystem, traj: Trajectory, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Self::new(ms, traj);
        }
        let t0 = traj.times[0];
        let samples = 256;
        let t_eval: Vec<f64> = (1..=samples).map(|i| t0 - eps * i as f64 / samples as f64).collect();
        let back = shoot_to(ms, traj.position(0), traj.velocity(0), t0, &t_eval, 1e-12).map_err(|e| match e {
            Error::Collision { .. } | Error::NearCollision { .. } | Error::StepUnderflow { .. } => {
                Error::Range(format!("backward extension to t = {} failed: {e}", t0 - eps))
            }
            e => e,
        })?;
        let n = traj.n_coords();
        let k = back.times.len();
        let mut out = Trajectory {
            dim: traj.dim,
            n_bodies: traj.n_bodies,
            times: Vec::with_capacity(k + traj.times.len()),
            positions: Vec::with_capacity((k + traj.times.len()) * n),
            velocities: Vec::with_capacity((k + traj.times.len()) * n),
            initial_velocity: back.velocity(k - 1).to_vec(),
            energy: Vec::with_capacity(k + traj.times.len()),
        };
        for i in (0..k).rev() {
            out.times.push(back.times[i]);
            out.positions.extend_from_slice(back.position(i));
            out.velocities.extend_from_slice(back.velocity(i));
            out.energy.push(back.energy[i]);
        }
        out.times.extend_from_slice(&traj.times);
        out.positions.extend_from_slice(&traj.positions);
        out.velocities.extend_from_slice(&traj.velocities);
        out.energy.extend_from_slice(&traj.energy);
        Self::new(ms, out)
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    /// Interpolated position at `t` inside the sampled range.
    pub fn position_at(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let ts = &self.traj.times;
        let (lo, hi) = (ts[0], *ts.last().unwrap());
        if t < lo * (1.0 - 1e-14) || t > hi * (1.0 + 1e-14) {
            return Err(Error::Range(format!("t = {t} outside the trajectory range [{lo}, {hi}]")));
        }
        let i = match ts.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => i.min(ts.len() - 2),
            Err(i) => i.saturating_sub(1).min(ts.len() - 2),
        };
        let h = ts[i + 1] - ts[i];
        let s = ((t - ts[i]) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (x0, x1) = (self.traj.position(i), self.traj.position(i + 1));
        let (v0, v1) = (self.traj.velocity(i), self.traj.velocity(i + 1));
        for c in 0..out.len() {
            out[c] = h00 * x0[c] + h10 * h * v0[c] + h01 * x1[c] + h11 * h * v1[c];
        }
        Ok(())
    }
}

impl HessianPath for TrajectoryPath {
    fn n_coords(&self) -> usize {
        self.ms.n_coords()
    }
    fn coord_mass(&self, c: usize) -> f64 {
        self.ms.coord_mass(c)
    }
    fn t_min(&self) -> f64 {
        self.traj.times[0]
    }
    fn block(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let n = self.n_coords();
        let mut x = vec![0.0; n];
        self.position_at(t, &mut x)?;
        if !(min_separation(&self.ms, &x) > 0.0) {
            let (_, i, j) = crate::model::closest_pair(&self.ms, &x);
            return Err(Error::Collision { i, j, time: Some(t) });
        }
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            col.iter_mut().for_each(|v| *v = 0.0);
            hess_apply_into(&self.ms, &x, &e, Pairs::All, &mut col);
            e[c] = 0.0;
            for r in 0..n {
                out[r * n + c] = col[r];
            }
        }
        Ok(())
    }
}

/// Element contributions: `1/h`, the P1 potential blocks `(LL, LR, RR)` and the
/// weighted mass moments `(LL, LR, RR)`.
#[derive(Debug, Clone)]
struct Element {
    inv_h: f64,
    pot: [Vec<f64>; 3],
    mass: [f64; 3],
}

fn element<P: HessianPath + ?Sized>(path: &P, ta: f64, tb: f64) -> Result<Element> {
    let n = path.n_coords();
    let (xs, ws) = gauss_legendre01(QUAD_POINTS);
    let h = tb - ta;
    let mut pot = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    let mut mass = [0.0; 3];
    let mut blk = vec![0.0; n * n];
    for (s, w) in xs.iter().zip(&ws) {
        let t = ta + s * h;
        path.block(t, &mut blk)?;
        let (l, r) = (1.0 - s, *s);
        let coef = [l * l, l * r, r * r];
        let wt = w * h;
        for (k, c) in coef.iter().enumerate() {
            mass[k] += wt * c / (t * t * t);
            for (p, b) in pot[k].iter_mut().zip(&blk) {
                *p += wt * c * b;
            }
        }
    }
    Ok(Element { inv_h: 1.0 / h, pot, mass })
}

/// Assembled stiffness `A` and mass `B` over unknown nodes `1..=K`.
struct Assembled {
    nodes: Vec<f64>,
    n: usize,
    a: BandSpd,
    b: BandSpd,
}

fn assemble<P: HessianPath + ?Sized>(path: &P, nodes: &[f64], elems: &[&Element]) -> Assembled {
    let n = path.n_coords();
    let k = nodes.len() - 1;
    let dim = n * k;
    let p = 2 * n - 1;
    let mut a = BandSpd::zeros(dim, p);
    let mut b = BandSpd::zeros(dim, p);
    let idx = |node: usize, c: usize| -> Option<usize> { if node == 0 { None } else { Some((node - 1) * n + c) } };
    for (e, el) in elems.iter().enumerate() {
        let (l, r) = (e, e + 1);
        for c in 0..n {
            let mc = path.coord_mass(c);
            let kin = mc * el.inv_h;
            let (il, ir) = (idx(l, c), idx(r, c));
            if let Some(i) = il {
                a.add(i, i, kin);
                b.add(i, i, mc * el.mass[0]);
            }
            if let Some(j) = ir {
                a.add(j, j, kin);
                b.add(j, j, mc * el.mass[2]);
            }
            if let (Some(i), Some(j)) = (il, ir) {
                a.add(j, i, -kin);
                b.add(j, i, mc * el.mass[1]);
            }
            for c2 in 0..n {
                let (jl, jr) = (idx(l, c2), idx(r, c2));
                if let (Some(i), Some(j)) = (il, jl) {
                    if i >= j {
                        a.add(i, j, el.pot[0][c * n + c2]);
                    }
                }
                if let (Some(i), Some(j)) = (ir, jr) {
                    if i >= j {
                        a.add(i, j, el.pot[2][c * n + c2]);
                    }
                }
                // right row, left column: ∫ φ_R φ_L H[c][c2]
                if let (Some(i), Some(j)) = (ir, jl) {
                    a.add(i, j, el.pot[1][c * n + c2]);
                }
            }
        }
    }
    Assembled { nodes: nodes.to_vec(), n, a, b }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub t_start: f64,
    pub t_max: f64,
    pub weight_exponent: u32,
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenfields: Vec<PathField>,
    /// `max |∫⟨ψᵢ,ψⱼ⟩_M/t³ − δᵢⱼ|`.
    pub orthonormality_residual: f64,
    /// `max |R(ψᵢ) − λᵢ| / max(1, |λᵢ|)`.
    pub rayleigh_residual: f64,
    pub iterations: usize,
    pub shift: f64,
    pub n_nodes: usize,
}

struct EigenOut {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    iterations: usize,
    shift: f64,
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dotv(a, a).sqrt()
}

fn inf_norm(a: &BandSpd) -> f64 {
    let (n, p) = (a.dim(), a.bandwidth());
    (0..n)
        .map(|i| (i.saturating_sub(p)..(i + p + 1).min(n)).map(|j| a.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `m` smallest eigenpairs of `A x = λ B x`, `B`-orthonormal.
fn gen_eig(a: &BandSpd, b: &BandSpd, m: usize, opts: &SpectralOptions) -> Result<EigenOut> {
    let dim = a.dim();
    if m == 0 || m > dim {
        return Err(Error::Invalid(format!("cannot extract {m} eigenpairs from dimension {dim}")));
    }
    b.cholesky().map_err(|_| Error::Internal("weighted mass matrix is not positive definite".into()))?;
    let p = (m + 4).min(dim);
    let (a_norm, b_norm) = (inf_norm(a), inf_norm(b));

    // Shift below the spectrum: A − σB is positive definite for σ < λ₁.
    let mut mu0 = 1.0f64;
    let mut shift = -mu0;
    let mut chol = loop {
        match a.axpy(-shift, b).cholesky() {
            Ok(c) => break c,
            Err(_) if mu0 < 1e15 => {
                mu0 *= 10.0;
                shift = -mu0;
            }
            Err(_) => return Err(Error::Internal("no coercive shift found".into())),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..p).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut prev = vec![f64::INFINITY; p];
    let mut next_shift_update = 4usize;
    let mut bx = vec![0.0; dim];
    let mut worst = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| {
                let mut yi = vec![0.0; dim];
                b.matvec(xi, &mut yi);
                chol.solve(&mut yi);
                yi
            })
            .collect();
        let ay: Vec<Vec<f64>> = y
            .iter()
            .map(|yi| {
                let mut o = vec![0.0; dim];
                a.matvec(yi, &mut o);
                o
            })
            .collect();
        let by: Vec<Vec<f64>> = y
            .iter()
            .map(|yi| {
                let mut o = vec![0.0; dim];
                b.matvec(yi, &mut o);
                o
            })
            .collect();
        let mut ar = DMatrix::<f64>::zeros(p, p);
        let mut br = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let va = 0.5 * (dotv(&y[i], &ay[j]) + dotv(&y[j], &ay[i]));
                let vb = 0.5 * (dotv(&y[i], &by[j]) + dotv(&y[j], &by[i]));
                ar[(i, j)] = va;
                ar[(j, i)] = va;
                br[(i, j)] = vb;
                br[(j, i)] = vb;
            }
        }
        let l = br
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Internal("Ritz basis lost rank".into()))?
            .l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Internal("Ritz basis lost rank".into()))?;
        let c = &linv * &ar * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let coef = linv.transpose() * &eig.eigenvectors;
        let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut newx = vec![vec![0.0; dim]; p];
        let mut ax = vec![vec![0.0; dim]; p];
        for (col, &k) in order.iter().enumerate() {
            for j in 0..p {
                let w = coef[(j, k)];
                if w != 0.0 {
                    for r in 0..dim {
                        newx[col][r] += w * y[j][r];
                        ax[col][r] += w * ay[j][r];
                    }
                }
            }
        }
        x = newx;

        worst = 0.0f64;
        for i in 0..m {
            b.matvec(&x[i], &mut bx);
            let r: Vec<f64> = ax[i].iter().zip(&bx).map(|(av, bv)| av - vals[i] * bv).collect();
            let scale = (a_norm + vals[i].abs() * b_norm) * norm(&x[i]);
            worst = worst.max(norm(&r) / scale.max(f64::MIN_POSITIVE));
        }
        let settled = (0..m).all(|i| (vals[i] - prev[i]).abs() <= 1e-14 * vals[i].abs().max(1.0));
        if worst <= opts.tol || (settled && worst <= opts.tol.sqrt()) {
            return Ok(EigenOut { values: vals[..m].to_vec(), vectors: x[..m].to_vec(), iterations: it, shift });
        }
        let rough = (0..m).all(|i| (vals[i] - prev[i]).abs() <= 1e-3 * vals[i].abs().max(1e-3));
        prev = vals.clone();
        if rough && it >= next_shift_update {
            next_shift_update = 2 * it;
            // Ritz values bound the spectrum from above; back off until factorable.
            let mut gap = (0.1 * (vals[p - 1] - vals[0])).max(1e-6 * vals[0].abs().max(1.0));
            for _ in 0..60 {
                let s = vals[0] - gap;
                if s <= shift {
                    break;
                }
                if let Ok(c) = a.axpy(-s, b).cholesky() {
                    chol = c;
                    shift = s;
                    break;
                }
                gap *= 4.0;
            }
        }
    }
    Err(Error::EigenConvergence { iterations: opts.max_iter, residual: worst })
}

/// Discretized eigenproblem on a fixed base mesh; sub-intervals `[t, T_max]`
/// reuse the element data, so meshes for nested intervals are nested.
pub struct SpectralProblem<'p, P: HessianPath + ?Sized> {
    path: &'p P,
    mesh: TimeMesh,
    elems: Vec<Element>,
    opts: SpectralOptions,
}

impl<'p, P: HessianPath + ?Sized> SpectralProblem<'p, P> {
    /// Geometric mesh on `[t_lo, T_max]` with `points` inserted as nodes.
    pub fn new(path: &'p P, t_lo: f64, points: &[f64], opts: &SpectralOptions) -> Result<Self> {
        if t_lo < path.t_min() * (1.0 - 1e-14) {
            return Err(Error::Range(format!("t = {t_lo} precedes the path start {}", path.t_min())));
        }
        if !(opts.t_max > t_lo) {
            return Err(Error::Invalid(format!("T_max = {} must exceed t = {t_lo}", opts.t_max)));
        }
        let mesh = TimeMesh::graded(t_lo, opts.t_max, opts.nodes_per_decade)?.with_points(points)?;
        let nodes = mesh.nodes();
        let elems = (0..mesh.n_elements())
            .into_par_iter()
            .map(|e| element(path, nodes[e], nodes[e + 1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { path, mesh, elems, opts: opts.clone() })
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    /// Eigenpairs on `[t, T_max]`. A `t` that is not a node gets its own first element.
    pub fn solve_at(&self, t: f64, m: usize) -> Result<SpectralResult> {
        let nodes = self.mesh.nodes();
        if t < nodes[0] * (1.0 - 1e-14) || !(t < self.opts.t_max) {
            return Err(Error::Range(format!("t = {t} outside [{}, {})", nodes[0], self.opts.t_max)));
        }
        let first;
        let (sub_nodes, elems): (Vec<f64>, Vec<&Element>) = match self.mesh.node_index(t) {
            Some(i) => (nodes[i..].to_vec(), self.elems[i..].iter().collect()),
            None => {
                let i = nodes.partition_point(|s| *s <= t);
                first = element(self.path, t, nodes[i])?;
                let mut ns = vec![t];
                ns.extend_from_slice(&nodes[i..]);
                let mut es = vec![&first];
                es.extend(self.elems[i..].iter());
                (ns, es)
            }
        };
        if sub_nodes.len() < 3 {
            return Err(Error::Range(format!("interval [{t}, {}] too short for the mesh", self.opts.t_max)));
        }
        let asm = assemble(self.path, &sub_nodes, &elems);
        let m = m.min(asm.a.dim());
        let eo = gen_eig(&asm.a, &asm.b, m, &self.opts)?;
        finish_result(&asm, eo, self.opts.t_max)
    }
}

fn finish_result(asm: &Assembled, eo: EigenOut, t_max: f64) -> Result<SpectralResult> {
    let dim = asm.a.dim();
    let m = eo.values.len();
    let mut ab = vec![0.0; dim];
    let mut bb = vec![0.0; dim];
    let mut ortho = 0.0f64;
    let mut rayleigh = 0.0f64;
    for i in 0..m {
        asm.a.matvec(&eo.vectors[i], &mut ab);
        asm.b.matvec(&eo.vectors[i], &mut bb);
        let r = dotv(&eo.vectors[i], &ab) / dotv(&eo.vectors[i], &bb);
        rayleigh = rayleigh.max((r - eo.values[i]).abs() / eo.values[i].abs().max(1.0));
        for j in 0..m {
            let g = dotv(&eo.vectors[j], &bb);
            ortho = ortho.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let mesh = TimeMesh::from_nodes(asm.nodes.clone())?;
    let eigenfields = eo
        .vectors
        .iter()
        .map(|v| PathField::from_free(mesh.clone(), asm.n, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralResult {
        t_start: asm.nodes[0],
        t_max,
        weight_exponent: WEIGHT_EXPONENT,
        eigenvalues: eo.values,
        eigenfields,
        orthonormality_residual: ortho,
        rayleigh_residual: rayleigh,
        iterations: eo.iterations,
        shift: eo.shift,
        n_nodes: asm.nodes.len(),
    })
}

/// The two quadratic forms `(a(ψ), b(ψ))` for a P1 field, by direct quadrature.
pub fn quadratic_forms<P: HessianPath + ?Sized>(path: &P, psi: &PathField) -> Result<(f64, f64)> {
    let n = path.n_coords();
    if psi.n_components() != n {
        return Err(Error::Shape { expected: n, got: psi.n_components() });
    }
    let nodes = psi.mesh.nodes();
    let (xs, ws) = gauss_legendre01(QUAD_POINTS);
    let mut blk = vec![0.0; n * n];
    let (mut fa, mut fb) = (0.0, 0.0);
    for e in 0..nodes.len() - 1 {
        let (ta, tb) = (nodes[e], nodes[e + 1]);
        let h = tb - ta;
        let (pl, pr) = (psi.node(e), psi.node(e + 1));
        for c in 0..n {
            let d = (pr[c] - pl[c]) / h;
            fa += path.coord_mass(c) * d * d * h;
        }
        for (s, w) in xs.iter().zip(&ws) {
            let t = ta + s * h;
            path.block(t, &mut blk)?;
            let v: Vec<f64> = (0..n).map(|c| (1.0 - s) * pl[c] + s * pr[c]).collect();
            let mut q = 0.0;
            let mut mm = 0.0;
            for r in 0..n {
                mm += path.coord_mass(r) * v[r] * v[r];
                for c in 0..n {
                    q += v[r] * blk[r * n + c] * v[c];
                }
            }
            fa += w * h * q;
            fb += w * h * mm / (t * t * t);
        }
    }
    Ok((fa, fb))
}

/// `m` smallest eigenpairs on `[t_start, T_max]`.
pub fn smallest_eigs<P: HessianPath + ?Sized>(path: &P, t_start: f64, m: usize, opts: &SpectralOptions) -> Result<SpectralResult> {
    SpectralProblem::new(path, t_start, &[], opts)?.solve_at(t_start, m)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfilePoint {
    pub t: f64,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaProfile {
    pub points: Vec<ProfilePoint>,
    /// Indices `i` (into the sorted grid) where `λ₁(tᵢ) > λ₁(tᵢ₊₁) + 1e−8·max(1,|λ₁|)`.
    pub violations: Vec<usize>,
}

impl LambdaProfile {
    pub fn lambda1(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.t, p.eigenvalues[0])).collect()
    }

    /// Rows `t,lambda_1,…,lambda_m`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.points.first().map_or(0, |p| p.eigenvalues.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|k| format!("lambda_{k}")));
        writeln!(w, "{}", header.join(","))?;
        for p in &self.points {
            let mut row = vec![crate::io::fmt_f64(p.t)];
            row.extend(p.eigenvalues.iter().map(|v| crate::io::fmt_f64(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `λ₁, …, λ_m` on `[t, T_max]` for every `t` in the grid (sorted ascending),
/// all on one nested mesh.
pub fn lambda_profile<P: HessianPath + ?Sized>(path: &P, t_grid: &[f64], opts: &SpectralOptions) -> Result<LambdaProfile> {
    let mut grid: Vec<f64> = t_grid.to_vec();
    if grid.is_empty() || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Invalid("t grid must be non-empty and finite".into()));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let problem = SpectralProblem::new(path, grid[0], &grid, opts)?;
    let points = grid
        .par_iter()
        .map(|&t| {
            let r = problem.solve_at(t, opts.n_eigs)?;
            Ok(ProfilePoint { t, eigenvalues: r.eigenvalues })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].eigenvalues[0] > w[1].eigenvalues[0] + 1e-8 * w[0].eigenvalues[0].abs().max(1.0))
        .map(|(i, _)| i)
        .collect();
    Ok(LambdaProfile { points, violations })
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ConjugateStatus {
    /// `λ₁ > 0` on the whole scanned range.
    NotConjugate,
    /// `λ₁` changes sign at `t_star`.
    Root { t_star: f64, kernel_dim: usize, lambda2: f64 },
    /// `λ₁ ≤ 0` already at the latest scanned time.
    NoCoercivity,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugateReport {
    pub lambda1_at_one: Option<f64>,
    pub status: ConjugateStatus,
    pub profile: Vec<(f64, f64)>,
    #[serde(skip)]
    pub kernel_field: Option<PathField>,
}

impl ConjugateReport {
    pub fn conjugate_before_one(&self) -> bool {
        matches!(self.status, ConjugateStatus::Root { t_star, .. } if t_star >= 1.0 - 1e-12) || self.lambda1_at_one.is_some_and(|l| l <= 0.0)
    }
}

/// Scans `λ₁(t)` on a geometric grid over `[t_lo, t_hi]` and bisects the first sign change.
pub fn conjugate_scan<P: HessianPath + ?Sized>(path: &P, t_lo: f64, t_hi: f64, samples: usize, opts: &SpectralOptions) -> Result<ConjugateReport> {
    if !(t_hi > t_lo) || samples < 2 {
        return Err(Error::Invalid("conjugate scan needs t_lo < t_hi and at least two samples".into()));
    }
    let mut grid: Vec<f64> = (0..samples)
        .map(|i| t_lo * (t_hi / t_lo).powf(i as f64 / (samples - 1) as f64))
        .collect();
    if t_lo < 1.0 && t_hi > 1.0 {
        grid.push(1.0);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let m = opts.n_eigs.max(2);
    let problem = SpectralProblem::new(path, grid[0], &grid, opts)?;
    let vals = grid
        .par_iter()
        .map(|&t| problem.solve_at(t, 1).map(|r| r.eigenvalues[0]))
        .collect::<Result<Vec<_>>>()?;
    let profile: Vec<(f64, f64)> = grid.iter().copied().zip(vals.iter().copied()).collect();
    let lambda1_at_one = profile.iter().find(|(t, _)| *t == 1.0).map(|p| p.1);
    if vals[0] > 0.0 {
        return Ok(ConjugateReport { lambda1_at_one, status: ConjugateStatus::NotConjugate, profile, kernel_field: None });
    }
    let Some(k) = (1..vals.len()).find(|&k| vals[k] > 0.0) else {
        return Ok(ConjugateReport { lambda1_at_one, status: ConjugateStatus::NoCoercivity, profile, kernel_field: None });
    };
    let (mut a, mut b) = (grid[k - 1], grid[k]);
    for _ in 0..200 {
        if b - a <= opts.tol_root * b {
            break;
        }
        let c = 0.5 * (a + b);
        if problem.solve_at(c, 1)?.eigenvalues[0] > 0.0 {
            b = c;
        } else {
            a = c;
        }
    }
    let t_star = 0.5 * (a + b);
    let r = problem.solve_at(t_star, m)?;
    let lambda2 = r.eigenvalues[1];
    let tol = opts.tol_ker * lambda2.abs().max(1.0);
    let kernel_dim = r.eigenvalues.iter().filter(|l| l.abs() <= tol).count().max(1);
    Ok(ConjugateReport {
        lambda1_at_one,
        status: ConjugateStatus::Root { t_star, kernel_dim, lambda2 },
        profile,
        kernel_field: r.eigenfields.into_iter().next(),
    })
}

/// `λ₁(T_max) − λ₁(2 T_max)` on `[t_start, ·]`: the truncation sensitivity.
pub fn tail_influence<P: HessianPath + ?Sized>(path: &P, t_start: f64, opts: &SpectralOptions) -> Result<f64> {
    let l1 = smallest_eigs(path, t_start, 1, opts)?.eigenvalues[0];
    let wide = SpectralOptions { t_max: 2.0 * opts.t_max, ..opts.clone() };
    let l2 = smallest_eigs(path, t_start, 1, &wide)?.eigenvalues[0];
    Ok(l1 - l2)
}

/// `λ₁` on `[t, T_max]` for `t = 1, 10, 100, …` until it is positive.
pub fn coercivity_horizon<P: HessianPath + ?Sized>(path: &P, opts: &SpectralOptions) -> Result<Option<(f64, f64)>> {
    let mut t = 1.0f64.max(path.t_min());
    while t < opts.t_max / 10.0 {
        let l = smallest_eigs(path, t, 1, opts)?.eigenvalues[0];
        if l > 0.0 {
            return Ok(Some((t, l)));
        }
        t *= 10.0;
    }
    Ok(None)
}
