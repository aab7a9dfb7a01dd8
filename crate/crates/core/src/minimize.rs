//! Multi-start minimization of the discretized action, horizon doubling and
//! minimizer-multiplicity detection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ActionProblem, TailModel};
use crate::error::{Error, Result};
use crate::mesh::{PathField, TimeMesh, MIN_NODES};
use crate::model::mass_inner_unchecked;
use crate::optimize::{minimize, OptOptions, OptReport};
use crate::reference::{MotionClass, ScenarioSpec};
use crate::trajectory::{reconstruct, richardson, Trajectory};

/// Restart perturbations grow like `√(t − 1)` up to this time and are constant after.
pub const T_SAT: f64 = 100.0;

/// Default mesh stretch (see [`TimeMesh::stretched`]).
pub const STRETCH: f64 = 8.0;

/// Default working horizon per motion class. Parabolic perturbations grow
/// like `t^{1/3}`, so those classes need a much longer window.
pub fn default_horizon(kind: MotionClass) -> f64 {
    match kind {
        MotionClass::Hyperbolic => 1e4,
        MotionClass::Parabolic | MotionClass::HyperbolicParabolic => 1e12,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOptions {
    pub horizon: f64,
    pub nodes_per_decade: usize,
    pub stretch: f64,
    pub tail: TailModel,
    /// Restart 0 is the zero field; the rest are antithetic random pairs.
    pub restarts: usize,
    pub seed: u64,
    pub restart_sigma: f64,
    /// Maximum number of horizon doublings after the restart phase.
    pub doublings: usize,
    /// Doubling stops once `|Δv| ≤ tol_horizon (1 + |v|)`; zero runs all doublings.
    pub tol_horizon: f64,
    /// Relative action gap under which two clusters count as co-minimal.
    pub tol_action: f64,
    /// Richardson-extrapolate against the mesh with every other node removed.
    pub extrapolate: bool,
    pub opt: OptOptions,
}

impl SolveOptions {
    pub fn for_class(kind: MotionClass) -> Self {
        Self {
            horizon: default_horizon(kind),
            nodes_per_decade: 128,
            stretch: STRETCH,
            tail: TailModel::ConstantExtension,
            restarts: 1,
            seed: 0,
            restart_sigma: 0.05,
            doublings: 0,
            tol_horizon: 1e-6,
            tol_action: 1e-6,
            extrapolate: true,
            opt: OptOptions::default(),
        }
    }

    /// Stretched mesh on `[1, horizon]` with an even element count.
    pub fn mesh(&self) -> Result<TimeMesh> {
        let decades = self.horizon.log10();
        let mut k = ((decades * self.nodes_per_decade as f64).ceil() as usize).max(MIN_NODES);
        k += k % 2;
        TimeMesh::stretched(1.0, self.horizon, k, self.stretch)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonStep {
    pub horizon: f64,
    pub action: f64,
    /// `A − <ṙ₀(T), x>_M` (truncated) or `A − <a, x>_M` (closed tail).
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizerCluster {
    pub action: f64,
    /// Restart indices that converged into this cluster.
    pub members: Vec<usize>,
    pub initial_velocity: Vec<f64>,
    pub d_norm: f64,
    /// Action within `tol_action` of the best one.
    pub minimal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplicityReport {
    /// Number of co-minimal clusters.
    pub k: usize,
    pub clusters: Vec<MinimizerCluster>,
    /// D-distances between cluster representatives.
    pub distances: Vec<Vec<f64>>,
    pub delta_cluster: f64,
    pub converged: usize,
    /// `(restart, message)` for restarts that failed.
    pub failures: Vec<(usize, String)>,
    /// Multi-start clustering only finds what the starts reach.
    pub heuristic: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimizeResult {
    #[serde(skip)]
    pub phi_star: PathField,
    pub horizon: f64,
    pub tail: TailModel,
    pub action_value: f64,
    /// `v` at the final horizon, extrapolated when enabled.
    pub v: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub horizon_history: Vec<HorizonStep>,
    pub multiplicity: MultiplicityReport,
    /// `γ̇(1)`, extrapolated when enabled.
    pub initial_velocity: Vec<f64>,
    /// Size of the extrapolation correction of `γ̇(1)` (0 when disabled).
    pub velocity_correction: f64,
    pub tail_bound: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

/// `v` from an action value at the problem's horizon.
pub fn v_from_action(problem: &ActionProblem, action: f64) -> f64 {
    let spec = &problem.spec;
    let vel: Vec<f64> = match problem.tail {
        TailModel::ConstantExtension => spec.a.clone(),
        TailModel::Truncated => {
            let n = spec.n_coords();
            let (mut r, mut v, mut acc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            spec.ref_into(problem.mesh.t_end(), &mut r, &mut v, &mut acc);
            v
        }
    };
    action - mass_inner_unchecked(&spec.ms, &vel, &spec.x0)
}

/// Free unknowns of restart `r`: zero for `r = 0`, otherwise
/// `±σ √(min(t,T_SAT) − 1) (g₀ + g₁ sin(π ln τ / ln T_SAT)) / √m` with the
/// sign alternating inside each pair `(2p−1, 2p)`.
pub fn restart_field(problem: &ActionProblem, r: usize, seed: u64, sigma: f64) -> Vec<f64> {
    let n = problem.n_components();
    let mut free = vec![0.0; problem.n_free()];
    if r == 0 {
        return free;
    }
    let pair = r.div_ceil(2) as u64;
    let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(pair));
    rng.set_stream(1);
    let g: Vec<[f64; 2]> = (0..n).map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]).collect();
    for (k, t) in problem.mesh.nodes().iter().enumerate().skip(1) {
        let tau = t.min(T_SAT);
        let prof = (tau - 1.0).sqrt();
        let osc = (std::f64::consts::PI * tau.ln() / T_SAT.ln()).sin();
        for c in 0..n {
            let m = problem.ms().coord_mass(c);
            free[(k - 1) * n + c] = sign * sigma * prof * (g[c][0] + g[c][1] * osc) / m.sqrt();
        }
    }
    free
}

fn diff_norm(problem: &ActionProblem, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    problem.d_norm(&d)
}

struct RestartRun {
    reports: Vec<(usize, OptReport)>,
    failures: Vec<(usize, Error)>,
}

fn run_restarts(problem: &ActionProblem, opts: &SolveOptions) -> RestartRun {
    let results: Vec<(usize, Result<OptReport>)> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let x0 = restart_field(problem, r, opts.seed, opts.restart_sigma);
            (r, minimize(problem, &x0, &opts.opt))
        })
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(rep) => reports.push((r, rep)),
            Err(e) => failures.push((r, e)),
        }
    }
    RestartRun { reports, failures }
}

fn cluster(problem: &ActionProblem, run: &RestartRun, tol_action: f64) -> Result<(MultiplicityReport, usize)> {
    let best = run
        .reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.value.total_cmp(&b.1 .1.value).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Internal("no converged restarts".into()))?;
    let best_rep = &run.reports[best].1;
    let delta = 1e-3 * problem.d_norm(&best_rep.x).max(1.0);
    // representatives: index into run.reports
    let mut reps: Vec<usize> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, (r, rep)) in run.reports.iter().enumerate() {
        match reps.iter().position(|&j| diff_norm(problem, &rep.x, &run.reports[j].1.x) <= delta) {
            Some(c) => members[c].push(*r),
            None => {
                reps.push(i);
                members.push(vec![*r]);
            }
        }
    }
    let a_min = best_rep.value;
    let n = problem.n_components();
    let mut clusters = Vec::with_capacity(reps.len());
    for (c, &i) in reps.iter().enumerate() {
        let rep = &run.reports[i].1;
        let vel = problem.node_velocities(&rep.x)?;
        clusters.push(MinimizerCluster {
            action: rep.value,
            members: members[c].clone(),
            initial_velocity: vel[..n].to_vec(),
            d_norm: problem.d_norm(&rep.x),
            minimal: rep.value - a_min <= tol_action * (1.0 + a_min.abs()),
        });
    }
    let distances = reps
        .iter()
        .map(|&i| reps.iter().map(|&j| diff_norm(problem, &run.reports[i].1.x, &run.reports[j].1.x)).collect())
        .collect();
    let report = MultiplicityReport {
        k: clusters.iter().filter(|c| c.minimal).count(),
        clusters,
        distances,
        delta_cluster: delta,
        converged: run.reports.len(),
        failures: run.failures.iter().map(|(r, e)| (*r, e.to_string())).collect(),
        heuristic: true,
    };
    Ok((report, best))
}

fn first_failure(run: RestartRun) -> Error {
    let mut f = run.failures;
    f.sort_by_key(|(r, _)| *r);
    f.into_iter().next().map(|(_, e)| e).unwrap_or_else(|| Error::Internal("no restarts were run".into()))
}

/// Trajectory, `v` and the size of the `γ̇(1)` correction for a converged solve,
/// Richardson-extrapolated against the bisection-coarsened mesh when enabled.
#[derive(Debug, Clone)]
pub struct Finished {
    pub trajectory: Trajectory,
    pub v: f64,
    pub velocity_correction: f64,
}

pub fn finish(problem: &ActionProblem, report: &OptReport, opts: &SolveOptions) -> Result<Finished> {
    let phi = PathField::from_free(problem.mesh.clone(), problem.n_components(), &report.x)?;
    let fine = reconstruct(problem, &phi)?;
    let v = v_from_action(problem, report.value);
    if !opts.extrapolate || problem.mesh.n_elements() % 2 != 0 {
        return Ok(Finished { trajectory: fine, v, velocity_correction: 0.0 });
    }
    let coarse_mesh = problem.mesh.coarsened()?;
    let cp = ActionProblem::new(&problem.spec, coarse_mesh.clone(), problem.tail)?;
    let start = phi.transfer(&coarse_mesh)?;
    let crep = minimize(&cp, start.free(), &opts.opt)?;
    let cphi = PathField::from_free(coarse_mesh, cp.n_components(), &crep.x)?;
    let coarse = reconstruct(&cp, &cphi)?;
    let trajectory = richardson(&problem.spec.ms, &fine, &coarse)?;
    let velocity_correction =
        trajectory.initial_velocity.iter().zip(&fine.initial_velocity).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(Finished { trajectory, v: (4.0 * v - v_from_action(&cp, crep.value)) / 3.0, velocity_correction })
}

/// Single local solve from `start` on `mesh` followed by [`finish`].
pub fn solve_from(
    spec: &ScenarioSpec,
    mesh: TimeMesh,
    tail: TailModel,
    start: &[f64],
    opts: &SolveOptions,
) -> Result<(ActionProblem, OptReport, Finished)> {
    let problem = ActionProblem::new(spec, mesh, tail)?;
    let report = minimize(&problem, start, &opts.opt)?;
    let fin = finish(&problem, &report, opts)?;
    Ok((problem, report, fin))
}

/// Restart phase only: clusters the converged fields at the working horizon.
pub fn detect_multiplicity(spec: &ScenarioSpec, opts: &SolveOptions) -> Result<MultiplicityReport> {
    let problem = ActionProblem::new(spec, opts.mesh()?, opts.tail)?;
    let run = run_restarts(&problem, opts);
    if run.reports.is_empty() {
        return Err(first_failure(run));
    }
    Ok(cluster(&problem, &run, opts.tol_action)?.0)
}

/// Multi-start minimization at `opts.horizon`, horizon doubling from the best
/// field, then optional Richardson extrapolation of the final solve.
pub fn minimize_action(spec: &ScenarioSpec, opts: &SolveOptions) -> Result<MinimizeResult> {
    let mut problem = ActionProblem::new(spec, opts.mesh()?, opts.tail)?;
    let run = run_restarts(&problem, opts);
    if run.reports.is_empty() {
        return Err(first_failure(run));
    }
    let (multiplicity, best) = cluster(&problem, &run, opts.tol_action)?;
    let mut report = run.reports.into_iter().nth(best).unwrap().1;
    let mut iterations = report.iterations;
    let mut history = vec![HorizonStep {
        horizon: problem.mesh.t_end(),
        action: report.value,
        v: v_from_action(&problem, report.value),
    }];

    for _ in 0..opts.doublings {
        let mesh = problem.mesh.extended(2.0 * problem.mesh.t_end())?;
        let phi = PathField::from_free(problem.mesh.clone(), problem.n_components(), &report.x)?.transfer(&mesh)?;
        problem = ActionProblem::new(spec, mesh, opts.tail)?;
        report = minimize(&problem, phi.free(), &opts.opt)?;
        iterations += report.iterations;
        let v = v_from_action(&problem, report.value);
        let gap = (v - history.last().unwrap().v).abs();
        history.push(HorizonStep { horizon: problem.mesh.t_end(), action: report.value, v });
        if opts.tol_horizon > 0.0 && gap <= opts.tol_horizon * (1.0 + v.abs()) {
            break;
        }
    }

    let phi_star = PathField::from_free(problem.mesh.clone(), problem.n_components(), &report.x)?;
    let fin = finish(&problem, &report, opts)?;
    let (trajectory, velocity_correction, v) = (fin.trajectory, fin.velocity_correction, fin.v);

    Ok(MinimizeResult {
        horizon: problem.mesh.t_end(),
        tail: opts.tail,
        action_value: report.value,
        v,
        grad_norm: report.grad_norm,
        iterations,
        horizon_history: history,
        multiplicity,
        initial_velocity: trajectory.initial_velocity.clone(),
        velocity_correction,
        tail_bound: problem.tail_bound(&report.x)?,
        trajectory,
        phi_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MassSystem;
    use crate::reference::tests::{two_body_hyperbolic, two_body_parabolic};
    use crate::trajectory::shoot_to;

    fn fast(kind: MotionClass) -> SolveOptions {
        SolveOptions { nodes_per_decade: 64, ..SolveOptions::for_class(kind) }
    }

    #[test]
    fn parabolic_homothetic_minimizer_is_zero() {
        let spec = two_body_parabolic();
        let r = minimize_action(&spec, &fast(MotionClass::Parabolic)).unwrap();
        assert!(r.action_value.abs() < 1e-8, "{}", r.action_value);
        assert!(r.phi_star.values().iter().all(|v| v.abs() < 1e-6));
        assert!(r.v.abs() < 1e-8);
    }

    #[test]
    fn hyperbolic_energy_and_oracle() {
        let spec = two_body_hyperbolic();
        let r = minimize_action(&spec, &fast(MotionClass::Hyperbolic)).unwrap();
        let v1 = &r.initial_velocity;
        // energy ½|v|²·2 − 1/2 = 1 gives |v| = √1.5
        assert!((v1[0] - 1.5f64.sqrt()).abs() < 5e-8, "{v1:?}");
        let e = r.trajectory.energy.iter().map(|e| (e - 1.0).abs()).fold(0.0, f64::max);
        assert!(e < 1e-7, "{e}");
        let tr = &r.trajectory;
        let ts: Vec<f64> = tr.times.iter().copied().filter(|t| *t <= 10.0).collect();
        let sh = shoot_to(&spec.ms, tr.position(0), v1, 1.0, &ts, 1e-12).unwrap();
        for i in 0..ts.len() {
            let num: f64 = tr.position(i).iter().zip(sh.position(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let den: f64 = tr.position(i).iter().map(|a| a * a).sum();
            assert!((num / den).sqrt() < 1e-5);
        }
    }

    #[test]
    fn restarts_agree_at_regular_point() {
        let spec = two_body_hyperbolic().with_x(vec![1.0, 0.3, -1.0, -0.3]).unwrap();
        let opts = SolveOptions { restarts: 8, seed: 3, ..fast(MotionClass::Hyperbolic) };
        let m = detect_multiplicity(&spec, &opts).unwrap();
        assert_eq!(m.k, 1);
        assert_eq!(m.converged, 8);
        assert_eq!(m.clusters.len(), 1);
        assert_eq!(m.clusters.iter().map(|c| c.members.len()).sum::<usize>(), 8);
    }

    #[test]
    fn mirror_symmetric_point_has_two_minimizers() {
        let ms = MassSystem::new(2, vec![1.0, 1.0]).unwrap();
        let a = vec![1.0, 0.0, -1.0, 0.0];
        let spec = ScenarioSpec::hyperbolic(ms, a, vec![-0.5, 0.0, 0.5, 0.0]).unwrap();
        let opts = SolveOptions { restarts: 8, seed: 1, ..fast(MotionClass::Hyperbolic) };
        let m = detect_multiplicity(&spec, &opts).unwrap();
        assert_eq!(m.k, 2, "{m:?}");
        let best: Vec<_> = m.clusters.iter().filter(|c| c.minimal).collect();
        let (c0, c1) = (best[0], best[1]);
        assert!((c0.action - c1.action).abs() < 1e-7, "{m:#?}");
        assert!((c0.initial_velocity[1] + c1.initial_velocity[1]).abs() < 1e-6);
        assert!(c0.initial_velocity[1].abs() > 1e-3);
    }

    #[test]
    fn horizon_doubling_gaps_shrink() {
        let spec = two_body_hyperbolic().with_x(vec![1.0, 0.2, -1.0, -0.2]).unwrap();
        let opts = SolveOptions {
            horizon: 1e3,
            tail: TailModel::Truncated,
            doublings: 4,
            tol_horizon: 0.0,
            extrapolate: false,
            ..fast(MotionClass::Hyperbolic)
        };
        let r = minimize_action(&spec, &opts).unwrap();
        assert_eq!(r.horizon_history.len(), 5);
        let gaps: Vec<f64> = r.horizon_history.windows(2).map(|w| (w[1].v - w[0].v).abs()).collect();
        assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{gaps:?}");
    }

    #[test]
    fn restart_fields_are_antithetic_and_seeded() {
        let spec = two_body_hyperbolic();
        let p = ActionProblem::new(&spec, fast(MotionClass::Hyperbolic).mesh().unwrap(), TailModel::Truncated).unwrap();
        let a = restart_field(&p, 1, 7, 0.1);
        let b = restart_field(&p, 2, 7, 0.1);
        assert!(a.iter().zip(&b).all(|(x, y)| x == &-y));
        assert_eq!(a, restart_field(&p, 1, 7, 0.1));
        assert_ne!(a, restart_field(&p, 1, 8, 0.1));
        assert!(restart_field(&p, 0, 7, 0.1).iter().all(|v| *v == 0.0));
    }
}
