//! Invariant suite for one scenario point, with a deterministic report.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::minimize::MinimizeResult;
use crate::reference::{asymptotic_energy, reference_newton_residual, MotionClass, ScenarioSpec};
use crate::spectral::{coercivity_horizon, lambda_profile, smallest_eigs, TrajectoryPath};
use crate::trajectory::{hyperbolic_asymptotics, shoot_to};
use crate::value::{
    bolza_u, convergence_start, grad_check, horizon_convergence, random_directions, semiconcavity_probe,
    value_with_minimizer, ValueOptions, ValueResult,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub value: ValueOptions,
    pub tol_hj: f64,
    pub h_fd: f64,
    pub tol_fd: f64,
    pub tol_energy: f64,
    pub tol_oracle: f64,
    /// Shooting comparison window end.
    pub oracle_t: f64,
    pub tol_newton: f64,
    pub tol_log_fit: f64,
    /// First horizon of the doubling sequence; `None` uses the class default.
    pub convergence_start: Option<f64>,
    pub doublings: usize,
    pub tol_final_gap: f64,
    pub identity_horizons: Vec<f64>,
    pub tol_identity: f64,
    pub tol_spectral: f64,
    pub profile_grid: Vec<f64>,
    pub z_norms: Vec<f64>,
    pub z_directions: usize,
    /// Allowed relative drift of the fitted semiconcavity constant.
    pub tol_stability: f64,
    pub seed: u64,
}

impl VerifyOptions {
    pub fn new(value: ValueOptions) -> Self {
        let seed = value.solve.seed;
        Self {
            value,
            tol_hj: 1e-3,
            h_fd: 1e-4,
            tol_fd: 1e-3,
            tol_energy: 1e-6,
            tol_oracle: 1e-4,
            oracle_t: 1e3,
            tol_newton: 1e-8,
            tol_log_fit: 0.05,
            convergence_start: None,
            doublings: 5,
            tol_final_gap: 1e-5,
            identity_horizons: vec![10.0, 50.0],
            tol_identity: 1e-6,
            tol_spectral: 1e-8,
            profile_grid: vec![1.0, 2.0, 4.0, 8.0],
            z_norms: vec![1e-1, 1e-2, 1e-3],
            z_directions: 4,
            tol_stability: 0.5,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    fn bound(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let status = if value <= tolerance { CheckStatus::Pass } else { CheckStatus::Fail };
        Self { name: name.into(), status, value: Some(value), tolerance: Some(tolerance), detail: detail.into() }
    }

    fn flag(name: &str, ok: bool, detail: impl Into<String>) -> Self {
        let status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        Self { name: name.into(), status, value: None, tolerance: None, detail: detail.into() }
    }

    fn skip(name: &str, detail: impl Into<String>) -> Self {
        Self { name: name.into(), status: CheckStatus::Skip, value: None, tolerance: None, detail: detail.into() }
    }

    fn error(name: &str, e: impl std::fmt::Display) -> Self {
        Self { name: name.into(), status: CheckStatus::Fail, value: None, tolerance: None, detail: format!("error: {e}") }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub name: Option<String>,
    pub scenario_hash: Option<String>,
    pub kind: MotionClass,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub value: ValueResult,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub options: VerifyOptions,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    /// Fixed-width table, one line per check.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let st = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skip => "skip",
            };
            let v = c.value.map_or("-".to_string(), |v| format!("{v:.3e}"));
            let t = c.tolerance.map_or("-".to_string(), |v| format!("{v:.1e}"));
            s.push_str(&format!("{st}  {:<28} {v:>11} <= {t:<8} {}\n", c.name, c.detail));
        }
        s
    }
}

/// Runs every check that applies to the scenario's class at `spec.x0`.
pub fn verify_scenario(spec: &ScenarioSpec, opts: &VerifyOptions) -> Result<VerifyReport> {
    let (value, min) = value_with_minimizer(spec, &opts.value)?;
    let mut checks = Vec::new();
    // auxiliary solves start from the reference path only
    let mut aux = opts.value.clone();
    aux.solve.restarts = 1;

    if spec.kind == MotionClass::Parabolic {
        let worst = [1.0, 2.0, 10.0, 100.0]
            .iter()
            .map(|&t| reference_newton_residual(spec, t))
            .try_fold(0.0f64, |m, r| r.map(|r| m.max(r)))?;
        checks.push(Check::bound("reference_newton", worst, opts.tol_newton, "t in {1,2,10,100}"));
    } else {
        checks.push(Check::skip("reference_newton", "reference is exact only for parabolic scenarios"));
    }

    checks.push(Check::bound(
        "optimizer_gradient",
        min.grad_norm,
        opts.value.solve.opt.tol_grad,
        format!("{} iterations", min.iterations),
    ));
    checks.push(energy_check(spec, &min, opts));
    checks.push(Check::flag(
        "multiplicity",
        value.k >= 1,
        format!("k = {}, {} of {} restarts converged", value.k, min.multiplicity.converged, opts.value.solve.restarts),
    ));

    let regular = value.k == 1 && value.colldist >= opts.value.r_min;
    checks.push(match value.hj_residual {
        Some(r) if regular => Check::bound("hj_residual", r.abs(), opts.tol_hj, format!("level {}", value.level)),
        _ => Check::skip("hj_residual", format!("k = {}, colldist {:.3e}", value.k, value.colldist)),
    });
    checks.push(if regular {
        match grad_check(spec, opts.h_fd, opts.seed, &aux) {
            Ok(g) => match g.max_deviation {
                Some(d) => Check::bound("gradient_fd", d, opts.tol_fd, format!("{} directions", g.directions.len())),
                None => Check::flag("gradient_fd", false, "no gradient at the base point"),
            },
            Err(e) => Check::error("gradient_fd", e),
        }
    } else {
        Check::skip("gradient_fd", "point is not regular")
    });

    checks.push(oracle_check(spec, &min, opts));
    checks.push(if spec.kind == MotionClass::Hyperbolic {
        match hyperbolic_asymptotics(&min.trajectory, spec) {
            Ok(f) => Check::bound("log_correction", f.relative_error, opts.tol_log_fit, format!("cosine {:.6}", f.cosine_with_grad)),
            Err(e) => Check::error("log_correction", e),
        }
    } else {
        Check::skip("log_correction", "hyperbolic scenarios only")
    });

    let t0 = opts.convergence_start.unwrap_or_else(|| convergence_start(spec.kind));
    match horizon_convergence(spec, t0, opts.doublings, &aux.solve) {
        Ok(h) => {
            let gaps: Vec<String> = h.gaps.iter().map(|g| format!("{g:.2e}")).collect();
            checks.push(Check::flag("horizon_gaps_decreasing", h.decreasing, format!("T0 {t0:e}: [{}]", gaps.join(", "))));
            checks.push(Check::bound("horizon_final_gap", h.final_relative, opts.tol_final_gap, "relative to 1 + |v|"));
        }
        Err(e) => {
            checks.push(Check::error("horizon_gaps_decreasing", &e));
            checks.push(Check::error("horizon_final_gap", e));
        }
    }

    for &t in &opts.identity_horizons {
        let name = format!("uv_identity_T{t}");
        checks.push(match bolza_u(spec, t, &aux.solve) {
            Ok(b) => Check::bound(&name, b.identity_residual, opts.tol_identity, format!("u {:.12}", b.u)),
            Err(e) => Check::error(&name, e),
        });
    }

    spectral_checks(spec, &min, opts, &mut checks);

    let zs: Vec<Vec<f64>> = {
        let dirs = random_directions(&spec.ms, opts.z_directions, opts.seed ^ 0x5eed);
        opts.z_norms.iter().flat_map(|&r| dirs.iter().map(move |d| d.iter().map(|v| v * r).collect())).collect()
    };
    checks.push(match semiconcavity_probe(spec, &zs, &aux) {
        Ok(rep) => {
            let per: Vec<Option<f64>> = opts
                .z_norms
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    rep.quotients[i * opts.z_directions..(i + 1) * opts.z_directions]
                        .iter()
                        .filter_map(|q| q.quotient)
                        .reduce(f64::max)
                })
                .collect();
            let drift = stability_drift(&per);
            let shown: Vec<String> = per.iter().map(|c| c.map_or("-".into(), |c| format!("{c:.4}"))).collect();
            Check::bound("semiconcavity_stable", drift, opts.tol_stability, format!("C(|z|) = [{}]", shown.join(", ")))
        }
        Err(e) => Check::error("semiconcavity_stable", e),
    });

    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(VerifyReport {
        name: None,
        scenario_hash: None,
        kind: spec.kind,
        seed: opts.seed,
        x0: spec.x0.clone(),
        value,
        checks,
        passed,
        options: opts.clone(),
    })
}

/// Largest relative deviation of the fitted constants from the one at the
/// smallest radius (the last entry). Missing entries count as infinite drift.
pub fn stability_drift(per_radius: &[Option<f64>]) -> f64 {
    let Some(Some(c_ref)) = per_radius.last() else {
        return f64::INFINITY;
    };
    let scale = c_ref.abs().max(1e-2);
    per_radius.iter().map(|c| c.map_or(f64::INFINITY, |c| (c - c_ref).abs() / scale)).fold(0.0, f64::max)
}

fn energy_check(spec: &ScenarioSpec, min: &MinimizeResult, opts: &VerifyOptions) -> Check {
    let h = asymptotic_energy(spec);
    let worst = min.trajectory.energy.iter().map(|e| (e - h).abs()).fold(0.0, f64::max);
    Check::bound("energy", worst, opts.tol_energy, format!("h = {h}"))
}

fn oracle_check(spec: &ScenarioSpec, min: &MinimizeResult, opts: &VerifyOptions) -> Check {
    let tr = &min.trajectory;
    let idx: Vec<usize> = (0..tr.times.len()).filter(|&i| tr.times[i] <= opts.oracle_t).collect();
    let ts: Vec<f64> = idx.iter().map(|&i| tr.times[i]).collect();
    match shoot_to(&spec.ms, tr.position(0), &min.initial_velocity, 1.0, &ts, 1e-12) {
        Ok(sh) => {
            let worst = idx
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let num: f64 = tr.position(i).iter().zip(sh.position(j)).map(|(a, b)| (a - b).powi(2)).sum();
                    let den: f64 = tr.position(i).iter().map(|a| a * a).sum();
                    (num / den).sqrt()
                })
                .fold(0.0, f64::max);
            let t_end = ts.last().copied().unwrap_or(1.0);
            Check::bound("shooting_oracle", worst, opts.tol_oracle, format!("up to t = {t_end}"))
        }
        Err(e) => Check::error("shooting_oracle", e),
    }
}

fn spectral_checks(spec: &ScenarioSpec, min: &MinimizeResult, opts: &VerifyOptions, checks: &mut Vec<Check>) {
    let so = &opts.value.spectral;
    let path = match TrajectoryPath::with_backward_extension(&spec.ms, min.trajectory.clone(), so.eps_back) {
        Ok(p) => p,
        Err(e) => {
            for name in ["spectral_orthonormality", "spectral_rayleigh", "lambda_profile_monotone", "coercivity_horizon"] {
                checks.push(Check::error(name, &e));
            }
            return;
        }
    };
    match smallest_eigs(&path, 1.0, so.n_eigs, so) {
        Ok(r) => {
            checks.push(Check::bound("spectral_orthonormality", r.orthonormality_residual, opts.tol_spectral, ""));
            checks.push(Check::bound(
                "spectral_rayleigh",
                r.rayleigh_residual,
                opts.tol_spectral,
                format!("lambda1(1) = {:.6}", r.eigenvalues[0]),
            ));
        }
        Err(e) => {
            checks.push(Check::error("spectral_orthonormality", &e));
            checks.push(Check::error("spectral_rayleigh", e));
        }
    }
    checks.push(match lambda_profile(&path, &opts.profile_grid, so) {
        Ok(p) => {
            let lam: Vec<String> = p.lambda1().iter().map(|(_, l)| format!("{l:.4}")).collect();
            Check::flag("lambda_profile_monotone", p.violations.is_empty(), format!("[{}]", lam.join(", ")))
        }
        Err(e) => Check::error("lambda_profile_monotone", e),
    });
    checks.push(match coercivity_horizon(&path, so) {
        Ok(Some((t, l))) => Check::flag("coercivity_horizon", true, format!("lambda1 = {l:.6} from t = {t}")),
        Ok(None) => Check::flag("coercivity_horizon", false, "lambda1 <= 0 on every tested interval"),
        Err(e) => Check::error("coercivity_horizon", e),
    });
}
