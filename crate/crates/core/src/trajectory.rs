//! Trajectories: reconstruction from a minimizing field, an independent
//! Dormand-Prince shooting integrator for `M ẍ = ∇U(x)`, and asymptotic
//! diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action::ActionProblem;
use crate::error::{Error, Result};
use crate::mesh::PathField;
use crate::model::{mass_inner_unchecked, min_separation, MassSystem};
use crate::potential::{value_grad_into, value_pairs, Pairs};
use crate::reference::{MotionClass, ScenarioSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub n_bodies: usize,
    pub times: Vec<f64>,
    /// Flat positions, one block of `N·d` per time.
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub initial_velocity: Vec<f64>,
    /// `½‖γ̇‖²_M − U(γ)` per time.
    pub energy: Vec<f64>,
}

impl Trajectory {
    pub fn n_coords(&self) -> usize {
        self.dim * self.n_bodies
    }

    pub fn position(&self, i: usize) -> &[f64] {
        let n = self.n_coords();
        &self.positions[i * n..(i + 1) * n]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        let n = self.n_coords();
        &self.velocities[i * n..(i + 1) * n]
    }

    /// Writes `t, x_*, v_*, energy` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n_coords();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|k| format!("x_{k}")));
        header.extend((0..n).map(|k| format!("v_{k}")));
        header.push("energy".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![crate::io::fmt_f64(*t)];
            row.extend(self.position(i).iter().map(|v| crate::io::fmt_f64(*v)));
            row.extend(self.velocity(i).iter().map(|v| crate::io::fmt_f64(*v)));
            row.push(crate::io::fmt_f64(self.energy[i]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Interior energy spread (max − min over all samples but the first and last).
    pub fn energy_spread(&self) -> f64 {
        let e = &self.energy[1..self.energy.len().saturating_sub(1).max(1)];
        let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        hi - lo
    }
}

fn energy_of(ms: &MassSystem, x: &[f64], v: &[f64]) -> Result<f64> {
    Ok(0.5 * mass_inner_unchecked(ms, v, v) - value_pairs(ms, x, Pairs::All)?)
}

/// Builds `γ = r₀ + φ + x − r₀(t₀)` with velocities from the discrete boundary fluxes.
pub fn reconstruct(problem: &ActionProblem, phi: &PathField) -> Result<Trajectory> {
    let ms = problem.ms();
    let positions = problem.positions(phi.free());
    let velocities = problem.node_velocities(phi.free())?;
    let n = ms.n_coords();
    let mut energy = Vec::with_capacity(problem.mesh.n_nodes());
    for k in 0..problem.mesh.n_nodes() {
        energy.push(energy_of(ms, &positions[k * n..(k + 1) * n], &velocities[k * n..(k + 1) * n])?);
    }
    Ok(Trajectory {
        dim: ms.dim(),
        n_bodies: ms.n_bodies(),
        times: problem.mesh.nodes().to_vec(),
        initial_velocity: velocities[..n].to_vec(),
        positions,
        velocities,
        energy,
    })
}

/// Richardson combination `(4 fine − coarse)/3` at the coarse nodes, for a
/// fine mesh that refines the coarse one by bisection. Energies are recomputed.
pub fn richardson(ms: &MassSystem, fine: &Trajectory, coarse: &Trajectory) -> Result<Trajectory> {
    let n = fine.n_coords();
    if coarse.n_coords() != n || fine.times.len() != 2 * coarse.times.len() - 1 {
        return Err(Error::Invalid("fine trajectory must bisect the coarse one".into()));
    }
    let mut positions = Vec::with_capacity(coarse.positions.len());
    let mut velocities = Vec::with_capacity(coarse.velocities.len());
    let mut energy = Vec::with_capacity(coarse.times.len());
    for (i, t) in coarse.times.iter().enumerate() {
        if (fine.times[2 * i] - t).abs() > 1e-12 * t {
            return Err(Error::Invalid("fine trajectory must bisect the coarse one".into()));
        }
        let (fp, cp) = (fine.position(2 * i), coarse.position(i));
        let (fv, cv) = (fine.velocity(2 * i), coarse.velocity(i));
        let x: Vec<f64> = fp.iter().zip(cp).map(|(f, c)| (4.0 * f - c) / 3.0).collect();
        let v: Vec<f64> = fv.iter().zip(cv).map(|(f, c)| (4.0 * f - c) / 3.0).collect();
        energy.push(energy_of(ms, &x, &v)?);
        positions.extend(x);
        velocities.extend(v);
    }
    Ok(Trajectory {
        dim: fine.dim,
        n_bodies: fine.n_bodies,
        times: coarse.times.clone(),
        initial_velocity: velocities[..n].to_vec(),
        positions,
        velocities,
        energy,
    })
}

/// Fourth-order one-sided difference for `γ̇(t₀)` on the first five nodes
/// (nonuniform Lagrange weights). Kept as a diagnostic next to the flux value.
pub fn initial_velocity_fd(traj: &Trajectory) -> Vec<f64> {
    let t = &traj.times[..5];
    let n = traj.n_coords();
    let mut w = [0.0; 5];
    // derivative at t[0] of the Lagrange basis polynomials
    for j in 0..5 {
        let mut denom = 1.0;
        for m in 0..5 {
            if m != j {
                denom *= t[j] - t[m];
            }
        }
        let mut num = 0.0;
        for skip in 0..5 {
            if skip == j {
                continue;
            }
            let mut p = 1.0;
            for m in 0..5 {
                if m != j && m != skip {
                    p *= t[0] - t[m];
                }
            }
            num += p;
        }
        w[j] = num / denom;
    }
    (0..n).map(|c| (0..5).map(|j| w[j] * traj.position(j)[c]).sum()).collect()
}

/// Maximum of `‖M γ̈ − ∇U(γ)‖` over interior nodes, with `γ̈` from second differences.
pub fn newton_residual(ms: &MassSystem, traj: &Trajectory) -> Result<f64> {
    let n = traj.n_coords();
    let mut g = vec![0.0; n];
    let mut worst = 0.0f64;
    for k in 1..traj.times.len() - 1 {
        let (t0, t1, t2) = (traj.times[k - 1], traj.times[k], traj.times[k + 1]);
        let (h0, h1) = (t1 - t0, t2 - t1);
        value_grad_into(ms, traj.position(k), Pairs::All, &mut g)?;
        let mut r = 0.0;
        for c in 0..n {
            let acc = 2.0
                * (traj.position(k - 1)[c] / (h0 * (h0 + h1)) - traj.position(k)[c] / (h0 * h1)
                    + traj.position(k + 1)[c] / (h1 * (h0 + h1)));
            r += (ms.coord_mass(c) * acc - g[c]).powi(2);
        }
        worst = worst.max(r.sqrt());
    }
    Ok(worst)
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Rhs<'a> {
    ms: &'a MassSystem,
    guard: f64,
}

impl Rhs<'_> {
    /// `y = (x, v)`, `dy = (v, M⁻¹∇U(x))`.
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = y.len() / 2;
        let (x, v) = y.split_at(n);
        if min_separation(self.ms, x) < self.guard {
            let (_, i, j) = crate::model::closest_pair(self.ms, x);
            return Err(Error::NearCollision { i, j, time: t });
        }
        dy[..n].copy_from_slice(v);
        value_grad_into(self.ms, x, Pairs::All, &mut dy[n..]).map_err(|e| e.at_time(t))?;
        for c in 0..n {
            dy[n + c] /= self.ms.coord_mass(c);
        }
        Ok(())
    }
}

/// Integrates `M ẍ = ∇U(x)` from `(t0, x, v)` and samples the solution at
/// `t_eval` (monotone in the direction of integration) by quintic Hermite
/// interpolation between accepted steps.
pub fn shoot_to(ms: &MassSystem, x: &[f64], v: &[f64], t0: f64, t_eval: &[f64], rtol: f64) -> Result<Trajectory> {
    ms.check_len(x)?;
    ms.check_len(v)?;
    let n = x.len();
    let sep0 = min_separation(ms, x);
    if !(sep0 > 0.0) {
        let (_, i, j) = crate::model::closest_pair(ms, x);
        return Err(Error::Collision { i, j, time: Some(t0) });
    }
    let rhs = Rhs { ms, guard: 1e-6 * sep0 };
    let t_end = *t_eval.last().unwrap_or(&t0);
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let atol = rtol;

    let mut y: Vec<f64> = x.iter().chain(v).copied().collect();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; 2 * n]; 7];
    rhs.eval(t0, &y, &mut k[0])?;
    let mut t = t0;
    let scale0 = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut h = dir * (1e-3 * scale0).min((t_end - t0).abs().max(1e-12));
    let mut out_pos = Vec::with_capacity(t_eval.len() * n);
    let mut out_vel = Vec::with_capacity(t_eval.len() * n);
    let mut next = 0;
    while next < t_eval.len() && (t_eval[next] - t0) * dir <= 0.0 {
        out_pos.extend_from_slice(&y[..n]);
        out_vel.extend_from_slice(&y[n..]);
        next += 1;
    }
    let mut ytmp = vec![0.0; 2 * n];
    let mut ynew = vec![0.0; 2 * n];
    let mut steps = 0usize;
    while next < t_eval.len() {
        steps += 1;
        if steps > 50_000_000 {
            return Err(Error::StepUnderflow { time: t });
        }
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        if h.abs() <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { time: t });
        }
        for s in 1..7 {
            for i in 0..2 * n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            match rhs.eval(t + C[s] * h, &ytmp, &mut tail[0]) {
                Ok(()) => {}
                Err(Error::NearCollision { .. }) | Err(Error::Collision { .. }) if h.abs() > 1e-10 * t.abs().max(1.0) => {
                    // retry with a smaller step before declaring a collision
                    h *= 0.25;
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
        ynew.copy_from_slice(&ytmp);
        let mut err = 0.0f64;
        for i in 0..2 * n {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            let sc = atol + rtol * y[i].abs().max(ynew[i].abs());
            err = err.max((h * e / sc).abs());
        }
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            let t_new = t + h;
            // dense output between (t, y, k0) and (t_new, ynew, k6)
            while next < t_eval.len() && (t_eval[next] - t_new) * dir <= 0.0 {
                let te = t_eval[next];
                let th = (te - t) / h;
                for c in 0..n {
                    let (p0, p1) = (y[c], ynew[c]);
                    let (v0, v1) = (k[0][c] * h, k[6][c] * h);
                    let (a0, a1) = (k[0][n + c] * h * h, k[6][n + c] * h * h);
                    let (pos, vel) = quintic_hermite(th, p0, p1, v0, v1, a0, a1);
                    out_pos.push(pos);
                    out_vel.push(vel / h);
                }
                next += 1;
            }
            t = t_new;
            y.copy_from_slice(&ynew);
            let k6 = k[6].clone();
            k[0] = k6;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    let mut energy = Vec::with_capacity(t_eval.len());
    for i in 0..t_eval.len() {
        energy.push(energy_of(ms, &out_pos[i * n..(i + 1) * n], &out_vel[i * n..(i + 1) * n])?);
    }
    Ok(Trajectory {
        dim: ms.dim(),
        n_bodies: ms.n_bodies(),
        times: t_eval.to_vec(),
        initial_velocity: v.to_vec(),
        positions: out_pos,
        velocities: out_vel,
        energy,
    })
}

/// Position and scaled derivative of the quintic Hermite interpolant on `[0, 1]`.
fn quintic_hermite(s: f64, p0: f64, p1: f64, v0: f64, v1: f64, a0: f64, a1: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5;
    let h3 = 0.5 * s3 - s4 + 0.5 * s5;
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    let d0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
    let d1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
    let d2 = s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4;
    let d3 = 1.5 * s2 - 4.0 * s3 + 2.5 * s4;
    let d4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
    let d5 = 30.0 * s2 - 60.0 * s3 + 30.0 * s4;
    (
        h0 * p0 + h1 * v0 + h2 * a0 + h3 * a1 + h4 * v1 + h5 * p1,
        d0 * p0 + d1 * v0 + d2 * a0 + d3 * a1 + d4 * v1 + d5 * p1,
    )
}

/// Integrates over `t_span` and reports the state at both ends.
pub fn shoot_newton(ms: &MassSystem, x: &[f64], v: &[f64], t_span: (f64, f64), rtol: f64) -> Result<Trajectory> {
    shoot_to(ms, x, v, t_span.0, &[t_span.0, t_span.1], rtol)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticFit {
    /// Fitted `w` in `γ(t) − a t ≈ w log t + c` over the last decade.
    pub w_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
    /// `−M⁻¹∇U(a)`.
    pub expected: Vec<f64>,
    pub relative_error: f64,
    /// Cosine between `ŵ` and `∇U(a)`; −1 means anti-parallel.
    pub cosine_with_grad: f64,
    pub residual: f64,
}

pub fn hyperbolic_asymptotics(traj: &Trajectory, spec: &ScenarioSpec) -> Result<AsymptoticFit> {
    if spec.kind != MotionClass::Hyperbolic {
        return Err(Error::Invalid("log-correction fit needs a hyperbolic scenario".into()));
    }
    let t_end = *traj.times.last().unwrap();
    if t_end < 1e3 {
        return Err(Error::Range(format!("horizon {t_end} is below 1e3")));
    }
    let n = traj.n_coords();
    let idx: Vec<usize> = (0..traj.times.len()).filter(|&i| traj.times[i] >= t_end / 10.0).collect();
    let ls: Vec<f64> = idx.iter().map(|&i| traj.times[i].ln()).collect();
    let m = ls.len() as f64;
    let lbar = ls.iter().sum::<f64>() / m;
    let sxx: f64 = ls.iter().map(|l| (l - lbar).powi(2)).sum();
    let mut w_hat = vec![0.0; n];
    let mut c_hat = vec![0.0; n];
    let mut residual = 0.0f64;
    for c in 0..n {
        let ys: Vec<f64> = idx.iter().map(|&i| traj.position(i)[c] - spec.a[c] * traj.times[i]).collect();
        let ybar = ys.iter().sum::<f64>() / m;
        let sxy: f64 = ls.iter().zip(&ys).map(|(l, y)| (l - lbar) * (y - ybar)).sum();
        w_hat[c] = sxy / sxx;
        c_hat[c] = ybar - w_hat[c] * lbar;
        for (l, y) in ls.iter().zip(&ys) {
            residual = residual.max((y - w_hat[c] * l - c_hat[c]).abs());
        }
    }
    let mut g = vec![0.0; n];
    value_grad_into(&spec.ms, &spec.a, Pairs::All, &mut g)?;
    let expected: Vec<f64> = g.iter().enumerate().map(|(k, v)| -v / spec.ms.coord_mass(k)).collect();
    let en = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
    let relative_error = w_hat.iter().zip(&expected).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / en;
    let wn = w_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cosine_with_grad = w_hat.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / (wn * gn);
    Ok(AsymptoticFit { w_hat, c_hat, expected, relative_error, cosine_with_grad, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClass {
    Linear,
    TwoThirds,
    Other,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairGrowth {
    pub i: usize,
    pub j: usize,
    pub exponent: f64,
    pub class: GrowthClass,
}

/// Log-log slope of every pairwise distance over the last decade.
pub fn growth_diagnostics(traj: &Trajectory) -> Vec<PairGrowth> {
    let t_end = *traj.times.last().unwrap();
    let lo = (t_end / 10.0).max(traj.times[0]);
    let idx: Vec<usize> = (0..traj.times.len()).filter(|&i| traj.times[i] >= lo).collect();
    let d = traj.dim;
    let lt: Vec<f64> = idx.iter().map(|&i| traj.times[i].ln()).collect();
    let m = lt.len() as f64;
    let lbar = lt.iter().sum::<f64>() / m;
    let sxx: f64 = lt.iter().map(|l| (l - lbar).powi(2)).sum();
    let mut out = Vec::new();
    for i in 0..traj.n_bodies {
        for j in i + 1..traj.n_bodies {
            let ly: Vec<f64> = idx
                .iter()
                .map(|&k| {
                    let p = traj.position(k);
                    (0..d).map(|a| (p[i * d + a] - p[j * d + a]).powi(2)).sum::<f64>().sqrt().ln()
                })
                .collect();
            let ybar = ly.iter().sum::<f64>() / m;
            let exponent = lt.iter().zip(&ly).map(|(l, y)| (l - lbar) * (y - ybar)).sum::<f64>() / sxx;
            let class = if (exponent - 1.0).abs() <= 0.05 {
                GrowthClass::Linear
            } else if (exponent - 2.0 / 3.0).abs() <= 0.05 {
                GrowthClass::TwoThirds
            } else {
                GrowthClass::Other
            };
            out.push(PairGrowth { i, j, exponent, class });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::tests::two_body_parabolic;

    fn two() -> MassSystem {
        MassSystem::new(2, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn circular_orbit_period() {
        let ms = two();
        let v = 0.5f64.sqrt();
        let x = [0.5, 0.0, -0.5, 0.0];
        let vel = [0.0, v, 0.0, -v];
        let period = 2.0 * std::f64::consts::PI / 2f64.sqrt();
        let tr = shoot_newton(&ms, &x, &vel, (0.0, period), 1e-12).unwrap();
        for (a, b) in tr.position(1).iter().zip(&x) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((tr.energy[1] - tr.energy[0]).abs() <= 10.0 * 1e-12 * tr.energy[0].abs().max(1.0) * 10.0);
    }

    #[test]
    fn homothetic_launch() {
        let spec = two_body_parabolic();
        let x = spec.beta_b.clone();
        let v: Vec<f64> = x.iter().map(|b| 2.0 / 3.0 * b).collect();
        let tr = shoot_newton(&spec.ms, &x, &v, (1.0, 10.0), 1e-11).unwrap();
        let s = 10f64.powf(2.0 / 3.0);
        for (a, b) in tr.position(1).iter().zip(&x) {
            assert!((a - b * s).abs() < 1e-7);
        }
    }

    #[test]
    fn collapse_is_detected() {
        let ms = two();
        let r = shoot_newton(&ms, &[1.0, 0.0, -1.0, 0.0], &[0.0; 4], (0.0, 10.0), 1e-10);
        assert!(matches!(r, Err(Error::NearCollision { .. }) | Err(Error::StepUnderflow { .. })), "{r:?}");
    }

    #[test]
    fn time_reversal() {
        let ms = MassSystem::new(2, vec![1.0, 2.0, 0.5]).unwrap();
        let x = [1.0, 0.0, -0.5, 0.3, 0.0, -1.2];
        let v = [0.1, 0.6, -0.2, -0.1, 0.4, -0.8];
        let xb = crate::model::project_com(&ms, &x).unwrap();
        let vb = crate::model::project_com(&ms, &v).unwrap();
        let rtol = 1e-11;
        let f = shoot_newton(&ms, &xb, &vb, (0.0, 3.0), rtol).unwrap();
        let b = shoot_newton(&ms, f.position(1), f.velocity(1), (3.0, 0.0), rtol).unwrap();
        for (a, c) in b.position(1).iter().zip(xb.iter()) {
            assert!((a - c).abs() <= 1e3 * rtol, "{a} {c}");
        }
        for (a, c) in b.velocity(1).iter().zip(vb.iter()) {
            assert!((a - c).abs() <= 1e3 * rtol);
        }
    }

    #[test]
    fn dense_output_matches_direct_steps() {
        let ms = two();
        let x = [1.0, 0.0, -1.0, 0.0];
        let v = [1.0, 0.5, -1.0, -0.5];
        let ts: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.37).collect();
        let dense = shoot_to(&ms, &x, &v, 1.0, &ts, 1e-12).unwrap();
        for (i, t) in ts.iter().enumerate().skip(1) {
            let direct = shoot_newton(&ms, &x, &v, (1.0, *t), 1e-12).unwrap();
            for (a, b) in dense.position(i).iter().zip(direct.position(1)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fd_weights_differentiate_quartics() {
        let times: Vec<f64> = vec![1.0, 1.1, 1.25, 1.4, 1.7];
        let positions: Vec<f64> = times.iter().map(|t: &f64| t.powi(4) - 2.0 * t * t + 3.0).collect();
        let tr = Trajectory {
            dim: 1,
            n_bodies: 1,
            times,
            velocities: vec![0.0; 5],
            initial_velocity: vec![0.0],
            energy: vec![0.0; 5],
            positions,
        };
        assert!((initial_velocity_fd(&tr)[0] - 0.0).abs() < 1e-11);
    }
}
