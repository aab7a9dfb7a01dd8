//! Discretized renormalized action
//! `A_x(φ) = ∫ ½‖φ̇‖²_M + U(r₀ + φ + x − r₀(t₀)) − U(r₀) − <M r̈₀, φ> dt`
//! on a graded mesh, with its exact discrete gradient and Hessian products.
//!
//! Kinetic terms are integrated exactly. Potential terms use two Gauss
//! points per element. Past the last node either nothing is added
//! (`Truncated`, the finite-horizon problem with a free right end) or the
//! field is held constant and the remaining integral is evaluated in closed
//! form with the substitution `t = T s^{-3}` (`ConstantExtension`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Tridiag;
use crate::mesh::{gauss_legendre01, PathField, TimeMesh};
use crate::model::MassSystem;
use crate::potential::{hess_apply_into, hess_quad, value_diff_pairs, value_grad_into, value_pairs, Pairs};
use crate::reference::{MotionClass, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModel {
    Truncated,
    ConstantExtension,
}

/// Gauss points used for the constant-extension tail.
pub const TAIL_POINTS: usize = 32;

/// Quadrature points per parallel chunk; fixed so sums do not depend on the pool size.
const CHUNK: usize = 512;

#[derive(Debug, Clone)]
pub struct ActionEval {
    pub value: f64,
    /// Per-node flat gradient, zero at the first node.
    pub gradient: Vec<f64>,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, Copy)]
struct QuadPoint {
    t: f64,
    w: f64,
    /// Left node index; the field at this point is `(1 − s) φ_k + s φ_{k+1}`.
    k: usize,
    s: f64,
}

/// Everything needed to evaluate one action functional repeatedly.
#[derive(Debug, Clone)]
pub struct ActionProblem {
    pub spec: ScenarioSpec,
    pub mesh: TimeMesh,
    pub tail: TailModel,
    n: usize,
    offset: Vec<f64>,
    quad: Vec<QuadPoint>,
    r0q: Vec<f64>,
    accq: Vec<f64>,
    n_tail: usize,
    riesz: Tridiag,
    inv_mass: Vec<f64>,
    parallel: bool,
}

impl ActionProblem {
    /// Problem on `mesh` with start time `mesh.t_start()` and initial configuration `spec.x0`.
    pub fn new(spec: &ScenarioSpec, mesh: TimeMesh, tail: TailModel) -> Result<Self> {
        let n = spec.n_coords();
        let nodes = mesh.nodes();
        let t0 = mesh.t_start();
        let mut r0 = vec![0.0; n];
        let mut dummy1 = vec![0.0; n];
        let mut dummy2 = vec![0.0; n];
        spec.ref_into(t0, &mut r0, &mut dummy1, &mut dummy2);
        let offset: Vec<f64> = spec.x0.iter().zip(&r0).map(|(x, r)| x - r).collect();

        let g = 0.5 / 3f64.sqrt();
        let mut quad = Vec::with_capacity(2 * mesh.n_elements() + TAIL_POINTS);
        for e in 0..mesh.n_elements() {
            let h = nodes[e + 1] - nodes[e];
            for s in [0.5 - g, 0.5 + g] {
                quad.push(QuadPoint { t: nodes[e] + s * h, w: 0.5 * h, k: e, s });
            }
        }
        let n_tail = match tail {
            TailModel::Truncated => 0,
            TailModel::ConstantExtension => {
                let big_t = mesh.t_end();
                let kl = mesh.n_nodes() - 1;
                let (sx, sw) = gauss_legendre01(TAIL_POINTS);
                for (s, w) in sx.iter().zip(&sw) {
                    quad.push(QuadPoint { t: big_t / (s * s * s), w: 3.0 * big_t * w / s.powi(4), k: kl, s: 0.0 });
                }
                TAIL_POINTS
            }
        };

        let nq = quad.len();
        let mut r0q = vec![0.0; nq * n];
        let mut accq = vec![0.0; nq * n];
        let mut v = vec![0.0; n];
        for (i, q) in quad.iter().enumerate() {
            let (r, a) = (&mut r0q[i * n..(i + 1) * n], &mut accq[i * n..(i + 1) * n]);
            spec.ref_into(q.t, r, &mut v, a);
            for (k, ak) in a.iter_mut().enumerate() {
                *ak *= spec.ms.coord_mass(k);
            }
            value_pairs(&spec.ms, r, Pairs::All).map_err(|e| e.at_time(q.t))?;
        }

        let riesz = stiffness(&mesh)?;
        let inv_mass = (0..n).map(|k| 1.0 / spec.ms.coord_mass(k)).collect();
        let pairs = spec.ms.n_bodies() * (spec.ms.n_bodies() - 1) / 2;
        Ok(Self {
            spec: spec.clone(),
            parallel: nq * pairs > 20_000,
            mesh,
            tail,
            n,
            offset,
            quad,
            r0q,
            accq,
            n_tail,
            riesz,
            inv_mass,
        })
    }

    pub fn ms(&self) -> &MassSystem {
        &self.spec.ms
    }

    pub fn n_components(&self) -> usize {
        self.n
    }

    /// Number of free unknowns (all nodes but the first).
    pub fn n_free(&self) -> usize {
        (self.mesh.n_nodes() - 1) * self.n
    }

    pub fn t_start(&self) -> f64 {
        self.mesh.t_start()
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Same mesh and tail, new initial configuration.
    pub fn with_x(&self, x0: Vec<f64>) -> Result<Self> {
        let spec = self.spec.with_x(x0)?;
        let mut p = self.clone();
        let mut r0 = vec![0.0; self.n];
        spec.r0_into(self.t_start(), &mut r0);
        p.offset = spec.x0.iter().zip(&r0).map(|(x, r)| x - r).collect();
        p.spec = spec;
        Ok(p)
    }

    #[inline]
    fn field_at(&self, free: &[f64], q: &QuadPoint, out: &mut [f64]) {
        let n = self.n;
        let get = |k: usize, c: usize| if k == 0 { 0.0 } else { free[(k - 1) * n + c] };
        for c in 0..n {
            out[c] = (1.0 - q.s) * get(q.k, c) + if q.s != 0.0 { q.s * get(q.k + 1, c) } else { 0.0 };
        }
    }

    fn chunks(&self) -> Vec<std::ops::Range<usize>> {
        let nq = self.quad.len();
        (0..nq.div_ceil(CHUNK)).map(|c| c * CHUNK..((c + 1) * CHUNK).min(nq)).collect()
    }

    /// Value and gradient (over free unknowns). Collisions are returned as errors.
    pub fn eval(&self, free: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = self.n;
        let ms = &self.spec.ms;
        let nodes = self.mesh.nodes();
        grad.iter_mut().for_each(|g| *g = 0.0);

        // Potential part, chunked with a fixed partition and merged in order.
        let work = |range: std::ops::Range<usize>| -> Result<(f64, Vec<(usize, f64, f64, Vec<f64>)>)> {
            let mut phi = vec![0.0; n];
            let mut gam = vec![0.0; n];
            let mut gu = vec![0.0; n];
            let mut shift = vec![0.0; n];
            let mut val = 0.0;
            let mut loads = Vec::with_capacity(range.len());
            for i in range {
                let q = &self.quad[i];
                self.field_at(free, q, &mut phi);
                let r0 = &self.r0q[i * n..(i + 1) * n];
                let acc = &self.accq[i * n..(i + 1) * n];
                for c in 0..n {
                    gam[c] = r0[c] + phi[c] + self.offset[c];
                }
                value_grad_into(ms, &gam, Pairs::All, &mut gu).map_err(|e| e.at_time(q.t))?;
                for c in 0..n {
                    shift[c] = phi[c] + self.offset[c];
                }
                let du = value_diff_pairs(ms, r0, &shift, Pairs::All).map_err(|e| e.at_time(q.t))?;
                let mut lin = 0.0;
                for c in 0..n {
                    lin += acc[c] * phi[c];
                    gu[c] -= acc[c];
                }
                val += q.w * (du - lin);
                loads.push((q.k, q.s, q.w, gu.clone()));
            }
            Ok((val, loads))
        };
        let parts: Vec<Result<_>> = if self.parallel {
            self.chunks().into_par_iter().map(work).collect()
        } else {
            self.chunks().into_iter().map(work).collect()
        };
        let mut value = 0.0;
        for part in parts {
            let (v, loads) = part?;
            value += v;
            for (k, s, w, f) in loads {
                if k >= 1 {
                    let g = &mut grad[(k - 1) * n..k * n];
                    for c in 0..n {
                        g[c] += w * (1.0 - s) * f[c];
                    }
                }
                if s != 0.0 {
                    let g = &mut grad[k * n..(k + 1) * n];
                    for c in 0..n {
                        g[c] += w * s * f[c];
                    }
                }
            }
        }

        // Kinetic part.
        let mut kin = 0.0;
        for e in 0..self.mesh.n_elements() {
            let h = nodes[e + 1] - nodes[e];
            for c in 0..n {
                let a = if e == 0 { 0.0 } else { free[(e - 1) * n + c] };
                let b = free[e * n + c];
                let m = ms.coord_mass(c);
                let flux = m * (b - a) / h;
                kin += 0.5 * flux * (b - a);
                if e >= 1 {
                    grad[(e - 1) * n + c] -= flux;
                }
                grad[e * n + c] += flux;
            }
        }
        Ok(kin + value)
    }

    /// `H v` over free unknowns at the field `free`.
    pub fn hess_vec(&self, free: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let ms = &self.spec.ms;
        let nodes = self.mesh.nodes();
        out.iter_mut().for_each(|g| *g = 0.0);
        let work = |range: std::ops::Range<usize>| -> Result<Vec<(usize, f64, f64, Vec<f64>)>> {
            let mut phi = vec![0.0; n];
            let mut psi = vec![0.0; n];
            let mut gam = vec![0.0; n];
            let mut loads = Vec::with_capacity(range.len());
            for i in range {
                let q = &self.quad[i];
                self.field_at(free, q, &mut phi);
                self.field_at(v, q, &mut psi);
                let r0 = &self.r0q[i * n..(i + 1) * n];
                for c in 0..n {
                    gam[c] = r0[c] + phi[c] + self.offset[c];
                }
                if self.quad_collides(&gam) {
                    value_pairs(ms, &gam, Pairs::All).map_err(|e| e.at_time(q.t))?;
                }
                let mut hv = vec![0.0; n];
                hess_apply_into(ms, &gam, &psi, Pairs::All, &mut hv);
                loads.push((q.k, q.s, q.w, hv));
            }
            Ok(loads)
        };
        let parts: Vec<Result<_>> = if self.parallel {
            self.chunks().into_par_iter().map(work).collect()
        } else {
            self.chunks().into_iter().map(work).collect()
        };
        for part in parts {
            for (k, s, w, f) in part? {
                if k >= 1 {
                    let g = &mut out[(k - 1) * n..k * n];
                    for c in 0..n {
                        g[c] += w * (1.0 - s) * f[c];
                    }
                }
                if s != 0.0 {
                    let g = &mut out[k * n..(k + 1) * n];
                    for c in 0..n {
                        g[c] += w * s * f[c];
                    }
                }
            }
        }
        for e in 0..self.mesh.n_elements() {
            let h = nodes[e + 1] - nodes[e];
            for c in 0..n {
                let a = if e == 0 { 0.0 } else { v[(e - 1) * n + c] };
                let b = v[e * n + c];
                let flux = ms.coord_mass(c) * (b - a) / h;
                if e >= 1 {
                    out[(e - 1) * n + c] -= flux;
                }
                out[e * n + c] += flux;
            }
        }
        Ok(())
    }

    fn quad_collides(&self, gam: &[f64]) -> bool {
        crate::model::min_separation(&self.spec.ms, gam) == 0.0
    }

    /// Applies `R⁻¹` where `R = S ⊗ M` is the D-norm Riesz operator.
    pub fn precond(&self, g: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (k, (o, x)) in out.iter_mut().zip(g).enumerate() {
            *o = x * self.inv_mass[k % n];
        }
        for c in 0..n {
            self.riesz.solve_strided(out, c, n);
        }
    }

    /// `sqrt(gᵀ R⁻¹ g)`, the dual D-norm of a gradient.
    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        let mut y = vec![0.0; g.len()];
        self.precond(g, &mut y);
        y.iter().zip(g).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    /// D-norm of a free vector.
    pub fn d_norm(&self, free: &[f64]) -> f64 {
        let n = self.n;
        let nodes = self.mesh.nodes();
        let mut s = 0.0;
        for e in 0..self.mesh.n_elements() {
            let h = nodes[e + 1] - nodes[e];
            for c in 0..n {
                let a = if e == 0 { 0.0 } else { free[(e - 1) * n + c] };
                s += self.spec.ms.coord_mass(c) * (free[e * n + c] - a).powi(2) / h;
            }
        }
        s.sqrt()
    }

    /// `|∫_T^∞ V| ≲ C T^{1−β̂}/(β̂−1)` with `C` fitted over the last decade of the mesh.
    pub fn tail_bound(&self, free: &[f64]) -> Result<f64> {
        let n = self.n;
        let beta = self.spec.kind.tail_exponent();
        let big_t = self.mesh.t_end();
        let lo = (big_t / 10.0).max(self.t_start());
        let mut phi = vec![0.0; n];
        let mut shift = vec![0.0; n];
        let mut c_fit = 0.0f64;
        for (i, q) in self.quad[..self.quad.len() - self.n_tail].iter().enumerate() {
            if q.t < lo {
                continue;
            }
            self.field_at(free, q, &mut phi);
            let r0 = &self.r0q[i * n..(i + 1) * n];
            let acc = &self.accq[i * n..(i + 1) * n];
            for c in 0..n {
                shift[c] = phi[c] + self.offset[c];
            }
            let du = value_diff_pairs(&self.spec.ms, r0, &shift, Pairs::All).map_err(|e| e.at_time(q.t))?;
            let lin: f64 = acc.iter().zip(&phi).map(|(a, p)| a * p).sum();
            c_fit = c_fit.max((du - lin).abs() * q.t.powf(beta));
        }
        Ok(c_fit * big_t.powf(1.0 - beta) / (beta - 1.0))
    }

    /// Full evaluation bundle for a path field on this mesh.
    pub fn evaluate(&self, phi: &PathField) -> Result<ActionEval> {
        self.check_field(phi)?;
        let mut g = vec![0.0; self.n_free()];
        let value = self.eval(phi.free(), &mut g)?;
        let mut gradient = vec![0.0; self.n];
        gradient.extend(g);
        Ok(ActionEval { value, gradient, tail_bound: self.tail_bound(phi.free())? })
    }

    fn check_field(&self, phi: &PathField) -> Result<()> {
        if phi.mesh != self.mesh || phi.n_components() != self.n {
            return Err(Error::Invalid("field does not live on the problem mesh".into()));
        }
        Ok(())
    }

    /// `γ(t_k)` at every node.
    pub fn positions(&self, free: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(self.mesh.n_nodes() * n);
        let mut r0 = vec![0.0; n];
        for (k, t) in self.mesh.nodes().iter().enumerate() {
            self.spec.r0_into(*t, &mut r0);
            for c in 0..n {
                let p = if k == 0 { 0.0 } else { free[(k - 1) * n + c] };
                out.push(r0[c] + p + self.offset[c]);
            }
        }
        out
    }

    /// Node velocities of the discrete minimizer recovered from the element
    /// equilibrium (boundary flux) rather than from difference quotients.
    /// Node 0 uses its right element; every other node its left element.
    pub fn node_velocities(&self, free: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let ms = &self.spec.ms;
        let nodes = self.mesh.nodes();
        let kn = self.mesh.n_nodes();
        // ∫ f·hat over each element, split by the element's left/right hat.
        let mut left = vec![0.0; self.mesh.n_elements() * n];
        let mut right = vec![0.0; self.mesh.n_elements() * n];
        let mut phi = vec![0.0; n];
        let mut gam = vec![0.0; n];
        let mut gu = vec![0.0; n];
        for (i, q) in self.quad[..self.quad.len() - self.n_tail].iter().enumerate() {
            self.field_at(free, q, &mut phi);
            let r0 = &self.r0q[i * n..(i + 1) * n];
            let acc = &self.accq[i * n..(i + 1) * n];
            for c in 0..n {
                gam[c] = r0[c] + phi[c] + self.offset[c];
            }
            value_grad_into(ms, &gam, Pairs::All, &mut gu).map_err(|e| e.at_time(q.t))?;
            for c in 0..n {
                let f = gu[c] - acc[c];
                left[q.k * n + c] += q.w * (1.0 - q.s) * f;
                right[q.k * n + c] += q.w * q.s * f;
            }
        }
        let node = |k: usize, c: usize| if k == 0 { 0.0 } else { free[(k - 1) * n + c] };
        let mut out = vec![0.0; kn * n];
        let mut dr = vec![0.0; n];
        let mut r0 = vec![0.0; n];
        let mut acc = vec![0.0; n];
        for k in 0..kn {
            self.spec.ref_into(nodes[k], &mut r0, &mut dr, &mut acc);
            for c in 0..n {
                let m = ms.coord_mass(c);
                let mv = if k == 0 {
                    let h = nodes[1] - nodes[0];
                    m * (node(1, c) - node(0, c)) / h - left[c]
                } else {
                    let h = nodes[k] - nodes[k - 1];
                    m * (node(k, c) - node(k - 1, c)) / h + right[(k - 1) * n + c]
                };
                out[k * n + c] = dr[c] + mv / m;
            }
        }
        Ok(out)
    }

    /// `∂A/∂x` at fixed field: `∫ ∇U(γ) dt` over all quadrature points.
    pub fn x_derivative(&self, free: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut out = vec![0.0; n];
        let mut phi = vec![0.0; n];
        let mut gam = vec![0.0; n];
        let mut gu = vec![0.0; n];
        for (i, q) in self.quad.iter().enumerate() {
            self.field_at(free, q, &mut phi);
            let r0 = &self.r0q[i * n..(i + 1) * n];
            for c in 0..n {
                gam[c] = r0[c] + phi[c] + self.offset[c];
            }
            value_grad_into(&self.spec.ms, &gam, Pairs::All, &mut gu).map_err(|e| e.at_time(q.t))?;
            for c in 0..n {
                out[c] += q.w * gu[c];
            }
        }
        Ok(out)
    }

    /// Quadratic part `Q` of the structure split: `½∫‖φ̇‖²_M` plus, when the
    /// reference has a shape term, `½∫<∇²U_a(r₀)φ, φ>` over intra-cluster pairs.
    pub fn quadratic_part(&self, free: &[f64]) -> f64 {
        let n = self.n;
        let mut q = 0.5 * self.d_norm(free).powi(2);
        if self.spec.has_shape_term() {
            let labels = self.spec.partition.labels();
            let pairs = if self.spec.kind == MotionClass::Parabolic { Pairs::All } else { Pairs::Intra(&labels) };
            let mut phi = vec![0.0; n];
            for (i, qp) in self.quad.iter().enumerate() {
                self.field_at(free, qp, &mut phi);
                let r0 = &self.r0q[i * n..(i + 1) * n];
                q += 0.5 * qp.w * hess_quad(&self.spec.ms, r0, &phi, pairs);
            }
        }
        q
    }
}

/// Tridiagonal stiffness matrix on nodes `1..K`: Dirichlet at the first node, free at the last.
pub(crate) fn stiffness(mesh: &TimeMesh) -> Result<Tridiag> {
    let nodes = mesh.nodes();
    let k = mesh.n_elements();
    let mut diag = vec![0.0; k];
    let mut off = vec![0.0; k.saturating_sub(1)];
    for e in 0..k {
        let inv = 1.0 / (nodes[e + 1] - nodes[e]);
        // element e joins free nodes e-1 and e (indices shifted by one)
        diag[e] += inv;
        if e >= 1 {
            diag[e - 1] += inv;
            off[e - 1] -= inv;
        }
    }
    Tridiag::factor(&diag, &off)
}

/// Truncated-horizon action of `φ` for `spec` on `φ.mesh`.
pub fn action_eval(spec: &ScenarioSpec, phi: &PathField) -> Result<ActionEval> {
    ActionProblem::new(spec, phi.mesh.clone(), TailModel::Truncated)?.evaluate(phi)
}

/// `d²A(φ)[ψ, ·]` as a field (zero at the first node).
pub fn action_hessian_apply(spec: &ScenarioSpec, phi: &PathField, psi: &PathField) -> Result<PathField> {
    let p = ActionProblem::new(spec, phi.mesh.clone(), TailModel::Truncated)?;
    p.check_field(phi)?;
    p.check_field(psi)?;
    let mut out = vec![0.0; p.n_free()];
    p.hess_vec(phi.free(), psi.free(), &mut out)?;
    PathField::from_free(phi.mesh.clone(), p.n, &out)
}

/// `(Q, P)` with `Q + P = A`.
pub fn structure_split(spec: &ScenarioSpec, phi: &PathField) -> Result<(f64, f64)> {
    let p = ActionProblem::new(spec, phi.mesh.clone(), TailModel::Truncated)?;
    let a = p.evaluate(phi)?.value;
    let q = p.quadratic_part(phi.free());
    Ok((q, a - q))
}
