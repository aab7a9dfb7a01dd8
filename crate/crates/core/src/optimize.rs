//! Unconstrained smooth minimization: preconditioned L-BFGS with a strong
//! Wolfe line search, followed by a truncated Newton-CG polish.
//!
//! Points where the objective reports a collision are treated as `+∞`; the
//! line search shrinks towards the last finite point.

use serde::{Deserialize, Serialize};

use crate::action::ActionProblem;
use crate::error::{Error, Result};

pub trait Objective: Sync {
    fn dim(&self) -> usize;
    /// Value and gradient; collision errors mean "outside the domain".
    fn eval(&self, u: &[f64], grad: &mut [f64]) -> Result<f64>;
    fn hess_vec(&self, u: &[f64], v: &[f64], out: &mut [f64]) -> Result<()>;
    /// Applies the inverse of the inner-product operator `R`.
    fn precond(&self, g: &[f64], out: &mut [f64]);

    /// `sqrt(gᵀ R⁻¹ g)`.
    fn dual_norm(&self, g: &[f64]) -> f64 {
        let mut y = vec![0.0; g.len()];
        self.precond(g, &mut y);
        dot(&y, g).max(0.0).sqrt()
    }
}

impl Objective for ActionProblem {
    fn dim(&self) -> usize {
        self.n_free()
    }
    fn eval(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        ActionProblem::eval(self, u, grad)
    }
    fn hess_vec(&self, u: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        ActionProblem::hess_vec(self, u, v, out)
    }
    fn precond(&self, g: &[f64], out: &mut [f64]) {
        ActionProblem::precond(self, g, out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptOptions {
    /// Target for the dual gradient norm.
    pub tol_grad: f64,
    pub max_iter: usize,
    pub memory: usize,
    /// Dual norm below which Newton-CG takes over.
    pub newton_switch: f64,
    pub max_newton: usize,
    pub max_cg: usize,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self { tol_grad: 1e-8, max_iter: 5000, memory: 10, newton_switch: 1e-4, max_newton: 40, max_cg: 400 }
    }
}

#[derive(Debug, Clone)]
pub struct OptReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub newton_iterations: usize,
    /// Accepted objective values, in order.
    pub history: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy_into(out: &mut [f64], x: &[f64], a: f64, d: &[f64]) {
    for ((o, xi), di) in out.iter_mut().zip(x).zip(d) {
        *o = xi + a * di;
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_COLLISION_SHRINKS: usize = 60;

struct Trial {
    alpha: f64,
    f: f64,
    dg: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Evaluates `x + α d`; `Ok(None)` for a collision.
fn probe<O: Objective>(obj: &O, x: &[f64], d: &[f64], alpha: f64) -> Result<Option<Trial>> {
    let mut xt = vec![0.0; x.len()];
    axpy_into(&mut xt, x, alpha, d);
    let mut g = vec![0.0; x.len()];
    match obj.eval(&xt, &mut g) {
        Ok(f) if f.is_finite() => {
            let dg = dot(&g, d);
            Ok(Some(Trial { alpha, f, dg, x: xt, g }))
        }
        Ok(_) | Err(Error::Collision { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Strong Wolfe line search (bracketing then zoom with safeguarded cubic steps).
fn wolfe_search<O: Objective>(obj: &O, x: &[f64], f0: f64, dg0: f64, d: &[f64], alpha0: f64) -> Result<Option<Trial>> {
    let mut shrinks = 0;
    let mut lo = Trial { alpha: 0.0, f: f0, dg: dg0, x: x.to_vec(), g: Vec::new() };
    let mut alpha = alpha0;
    let mut hi: Option<Trial> = None;
    for _ in 0..40 {
        let t = match probe(obj, x, d, alpha)? {
            Some(t) => t,
            None => {
                shrinks += 1;
                if shrinks > MAX_COLLISION_SHRINKS {
                    return Err(Error::CollisionTrapped { attempts: shrinks });
                }
                alpha = 0.5 * (lo.alpha + alpha);
                continue;
            }
        };
        if t.f > f0 + C1 * t.alpha * dg0 || t.f >= lo.f && lo.alpha > 0.0 {
            hi = Some(t);
            break;
        }
        if t.dg.abs() <= -C2 * dg0 {
            return Ok(Some(t));
        }
        if t.dg >= 0.0 {
            hi = Some(std::mem::replace(&mut lo, t));
            break;
        }
        alpha = t.alpha * 2.5;
        lo = t;
    }
    let Some(mut hi) = hi else { return Ok(if lo.alpha > 0.0 { Some(lo) } else { None }) };

    for _ in 0..40 {
        let (a, b) = (lo.alpha, hi.alpha);
        // cubic interpolation between lo and hi, safeguarded to the middle of the bracket
        let d1 = lo.dg + hi.dg - 3.0 * (lo.f - hi.f) / (a - b);
        let disc = d1 * d1 - lo.dg * hi.dg;
        let mut at = if disc >= 0.0 {
            let d2 = (b - a).signum() * disc.sqrt();
            b - (b - a) * (hi.dg + d2 - d1) / (hi.dg - lo.dg + 2.0 * d2)
        } else {
            0.5 * (a + b)
        };
        let (mn, mx) = (a.min(b), a.max(b));
        let margin = 0.1 * (mx - mn);
        if !at.is_finite() || at < mn + margin || at > mx - margin {
            at = 0.5 * (a + b);
        }
        if (b - a).abs() <= 1e-14 * a.abs().max(b.abs()) {
            break;
        }
        let t = match probe(obj, x, d, at)? {
            Some(t) => t,
            None => {
                shrinks += 1;
                if shrinks > MAX_COLLISION_SHRINKS {
                    return Err(Error::CollisionTrapped { attempts: shrinks });
                }
                hi = Trial { alpha: at, f: f64::INFINITY, dg: f64::INFINITY, x: Vec::new(), g: Vec::new() };
                continue;
            }
        };
        if t.f > f0 + C1 * t.alpha * dg0 || t.f >= lo.f {
            hi = t;
        } else {
            if t.dg.abs() <= -C2 * dg0 {
                return Ok(Some(t));
            }
            if t.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, t);
            } else {
                lo = t;
            }
        }
    }
    // Sufficient decrease without the curvature condition is still a usable step.
    Ok(if lo.alpha > 0.0 { Some(lo) } else { None })
}

/// Preconditioned CG for `H p = −g`, stopping on negative curvature.
fn newton_direction<O: Objective>(obj: &O, x: &[f64], g: &[f64], opts: &OptOptions) -> Result<Vec<f64>> {
    let n = g.len();
    let mut p = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut z = vec![0.0; n];
    obj.precond(&r, &mut z);
    let rz0 = dot(&r, &z);
    let eta = (rz0.sqrt()).sqrt().min(0.1);
    let mut rz = rz0;
    let mut d = z.clone();
    let mut hd = vec![0.0; n];
    for it in 0..opts.max_cg {
        obj.hess_vec(x, &d, &mut hd)?;
        let curv = dot(&d, &hd);
        if curv <= 0.0 {
            if it == 0 {
                return Ok(d);
            }
            break;
        }
        let a = rz / curv;
        for i in 0..n {
            p[i] += a * d[i];
            r[i] -= a * hd[i];
        }
        obj.precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        if rz_new.max(0.0).sqrt() <= eta * rz0.sqrt() {
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    Ok(p)
}

/// Minimizes `obj` from `x0`. Returns an iteration-limit error if the dual
/// gradient norm does not reach `opts.tol_grad`.
pub fn minimize<O: Objective>(obj: &O, x0: &[f64], opts: &OptOptions) -> Result<OptReport> {
    let n = obj.dim();
    if x0.len() != n {
        return Err(Error::Shape { expected: n, got: x0.len() });
    }
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g)?;
    if !f.is_finite() {
        return Err(Error::Optimization("objective is not finite at the starting point".into()));
    }
    let mut history = vec![f];
    let mut gn = obj.dual_norm(&g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut newton_iterations = 0;
    let mut newton_failed = false;
    let mut stalled = 0;

    while gn > opts.tol_grad && iterations < opts.max_iter {
        iterations += 1;
        if gn <= opts.newton_switch && !newton_failed && newton_iterations < opts.max_newton {
            newton_iterations += 1;
            let p = newton_direction(obj, &x, &g, opts)?;
            let mut accepted = false;
            let mut alpha = 1.0;
            for _ in 0..30 {
                if let Some(t) = probe(obj, &x, &p, alpha)? {
                    let gt = obj.dual_norm(&t.g);
                    // near the optimum value changes drown in rounding; accept gradient progress too
                    if t.f <= f + C1 * alpha * dot(&g, &p) || (t.f <= f + 1e-13 * f.abs().max(1e-300) && gt < gn) {
                        let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
                        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                        push_pair(&mut s_hist, &mut y_hist, s, y, opts.memory);
                        x = t.x;
                        g = t.g;
                        f = t.f.min(f);
                        gn = gt;
                        history.push(t.f);
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                newton_failed = true;
            }
            continue;
        }

        let d = lbfgs_direction(obj, &g, &s_hist, &y_hist);
        let mut dg = dot(&d, &g);
        let d = if dg >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            let mut z = vec![0.0; n];
            obj.precond(&g, &mut z);
            z.iter_mut().for_each(|v| *v = -*v);
            dg = dot(&z, &g);
            z
        } else {
            d
        };
        let alpha0 = if s_hist.is_empty() { (1.0 / gn).min(1.0) } else { 1.0 };
        match wolfe_search(obj, &x, f, dg, &d, alpha0)? {
            Some(t) => {
                let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                if t.f >= f {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                push_pair(&mut s_hist, &mut y_hist, s, y, opts.memory);
                x = t.x;
                g = t.g;
                f = t.f;
                gn = obj.dual_norm(&g);
                history.push(f);
                newton_failed = false;
            }
            None => stalled += 1,
        }
        if stalled >= 5 {
            if !s_hist.is_empty() {
                s_hist.clear();
                y_hist.clear();
                stalled = 0;
                continue;
            }
            break;
        }
    }
    if gn > opts.tol_grad {
        return Err(Error::IterationLimit { iterations, grad_norm: gn });
    }
    Ok(OptReport { x, value: f, grad: g, grad_norm: gn, iterations, newton_iterations, history })
}

fn push_pair(sh: &mut Vec<Vec<f64>>, yh: &mut Vec<Vec<f64>>, s: Vec<f64>, y: Vec<f64>, m: usize) {
    let sy = dot(&s, &y);
    if sy <= 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() || !sy.is_finite() {
        return;
    }
    if sh.len() == m {
        sh.remove(0);
        yh.remove(0);
    }
    sh.push(s);
    yh.push(y);
}

fn lbfgs_direction<O: Objective>(obj: &O, g: &[f64], sh: &[Vec<f64>], yh: &[Vec<f64>]) -> Vec<f64> {
    let k = sh.len();
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; k];
    let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&sh[i], &yh[i])).collect();
    for i in (0..k).rev() {
        alpha[i] = rho[i] * dot(&sh[i], &q);
        q.iter_mut().zip(&yh[i]).for_each(|(a, b)| *a -= alpha[i] * b);
    }
    let mut r = vec![0.0; g.len()];
    obj.precond(&q, &mut r);
    if k > 0 {
        let mut ry = vec![0.0; g.len()];
        obj.precond(&yh[k - 1], &mut ry);
        let gamma = dot(&sh[k - 1], &yh[k - 1]) / dot(&yh[k - 1], &ry);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..k {
        let b = rho[i] * dot(&yh[i], &r);
        r.iter_mut().zip(&sh[i]).for_each(|(a, s)| *a += (alpha[i] - b) * s);
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}
