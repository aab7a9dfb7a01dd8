//! `nbodyhj`: central configurations, action minimizers, value functions,
//! grid scans, spectra and the invariant suite from scenario files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbody_hj::central_config::{find_minimal_central, find_minimal_clustered, CentralConfigOptions};
use nbody_hj::io::{git_blob_sha1, load_slice, save_result, to_canonical_json, ScenarioFile, SolverOptions};
use nbody_hj::minimize::{minimize_action, HorizonStep, MultiplicityReport};
use nbody_hj::reference::ScenarioSpec;
use nbody_hj::spectral::{
    conjugate_scan, lambda_profile, tail_influence, ConjugateReport, LambdaProfile, SpectralOptions, TrajectoryPath,
};
use nbody_hj::value::{grad_check, scan_grid_with_progress, value_with_minimizer, write_scan_csv, GradCheck, ValueResult};
use nbody_hj::verify::{verify_scenario, VerifyOptions, VerifyReport};
use nbody_hj::{ClusterPartition, Error, MassSystem};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "nbodyhj", version, about = "Renormalized-action tools for expansive N-body motions")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, env = "NBODYHJ_THREADS")]
    threads: Option<usize>,
    /// Overrides the scenario's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal normalized central configuration(s).
    CentralConfig(CentralArgs),
    /// Minimize the action and export the minimizer.
    Solve(SolveArgs),
    /// Value function, gradient and HJ residual at the scenario point.
    Value(ValueArgs),
    /// Value function over a 2-D slice, written as CSV.
    Scan(ScanArgs),
    /// Eigenvalue profile of the second variation and conjugate-point scan.
    Spectrum(SpectrumArgs),
    /// Run the invariant suite for a scenario.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CentralArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    masses: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Body indices of one cluster, e.g. `--cluster 0,1`; repeatable. Uncovered bodies are singletons.
    #[arg(long)]
    cluster: Vec<String>,
    #[arg(long, default_value_t = 32)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Scenario file plus overrides of its solver options.
#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    nodes_per_decade: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    tol_grad: Option<f64>,
    #[arg(long)]
    tol_horizon: Option<f64>,
    #[arg(long)]
    tol_action: Option<f64>,
    #[arg(long)]
    tol_hj: Option<f64>,
    #[arg(long)]
    r_min: Option<f64>,
    #[arg(long)]
    h_fd: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValueArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Also compute λ₁ of the second variation.
    #[arg(long)]
    lambda1: bool,
    /// Cross-check the gradient with central differences.
    #[arg(long)]
    grad_check: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    slice: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda1: bool,
    /// Skip the extra truncated-horizon solve per point (`vT` becomes nan).
    #[arg(long)]
    no_finite_horizon: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Start times `a:b:n`, geometric from `a` to `b`.
    #[arg(long)]
    t_grid: String,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    n_eigs: Option<usize>,
    /// CSV of `t, lambda_1, …`.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Report JSON (deterministic).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

struct Loaded {
    spec: ScenarioSpec,
    file: ScenarioFile,
    solver: SolverOptions,
    hash: String,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Validation(_) | Error::Shape { .. } | Error::Invalid(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

struct Ctx {
    seed: Option<u64>,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("nbodyhj: {}", msg.as_ref());
        }
    }

    fn load(&self, a: &ScenarioArgs) -> nbody_hj::Result<Loaded> {
        let text = std::fs::read(&a.scenario)?;
        let mut file = ScenarioFile::parse(
            std::str::from_utf8(&text).map_err(|e| Error::Parse { path: a.scenario.display().to_string(), msg: e.to_string() })?,
            &a.scenario.display().to_string(),
        )?;
        let s = &mut file.solver;
        if let Some(v) = self.seed {
            s.seed = v;
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = a.$f { s.$f = v; })* };
        }
        set!(nodes_per_decade, restarts, tol_grad, tol_horizon, tol_action, tol_hj, r_min, h_fd);
        if a.horizon.is_some() {
            s.horizon = a.horizon;
        }
        self.note(format!("loading {}", a.scenario.display()));
        let spec = file.to_spec()?;
        let solver = file.solver.clone();
        Ok(Loaded { spec, file, solver, hash: git_blob_sha1(&text) })
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> nbody_hj::Result<()> {
    let text = to_canonical_json(value)?;
    if let Some(p) = out {
        save_result(p, value)?;
    }
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn run_central(ctx: &Ctx, a: &CentralArgs) -> nbody_hj::Result<()> {
    let ms = MassSystem::new(a.dim, a.masses.clone()).map_err(|e| Error::Validation(e.to_string()))?;
    let opts = CentralConfigOptions { restarts: a.restarts, tol: a.tol, seed: ctx.seed.unwrap_or(0), ..Default::default() };
    ctx.note(format!("central configuration, {} restarts", a.restarts));
    if a.cluster.is_empty() {
        let r = find_minimal_central(&ms, None, &opts)?;
        return emit(&r, a.out.as_deref());
    }
    let n = ms.n_bodies();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for c in &a.cluster {
        let b = c
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| usage(format!("bad cluster `{c}`: {e}"))))
            .collect::<nbody_hj::Result<Vec<_>>>()?;
        blocks.push(b);
    }
    let covered: Vec<usize> = blocks.iter().flatten().copied().collect();
    blocks.extend((0..n).filter(|i| !covered.contains(i)).map(|i| vec![i]));
    let part = ClusterPartition::new(n, blocks)?;
    let r = find_minimal_clustered(&ms, &part, None, &opts)?;
    emit(&r, a.out.as_deref())
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    scenario: &'a str,
    scenario_hash: &'a str,
    solver: &'a SolverOptions,
    kind: &'static str,
    x0: &'a [f64],
    horizon: f64,
    action: f64,
    v: f64,
    grad_norm: f64,
    iterations: usize,
    horizon_history: &'a [HorizonStep],
    multiplicity: &'a MultiplicityReport,
    initial_velocity: &'a [f64],
    velocity_correction: f64,
    tail_bound: f64,
    energy_spread: f64,
}

fn run_solve(ctx: &Ctx, a: &SolveArgs) -> nbody_hj::Result<()> {
    let l = ctx.load(&a.scenario)?;
    let opts = l.solver.solve_options(l.spec.kind);
    ctx.note(format!("minimizing on [1, {:e}] with {} restarts", opts.horizon, opts.restarts));
    let r = minimize_action(&l.spec, &opts)?;
    std::fs::create_dir_all(&a.out)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(a.out.join("trajectory.csv"))?);
    r.trajectory.write_csv(&mut csv)?;
    csv.flush()?;
    let name = l.file.name.clone().unwrap_or_default();
    let summary = SolveSummary {
        scenario: &name,
        scenario_hash: &l.hash,
        solver: &l.solver,
        kind: l.spec.kind.label(),
        x0: &l.spec.x0,
        horizon: r.horizon,
        action: r.action_value,
        v: r.v,
        grad_norm: r.grad_norm,
        iterations: r.iterations,
        horizon_history: &r.horizon_history,
        multiplicity: &r.multiplicity,
        initial_velocity: &r.initial_velocity,
        velocity_correction: r.velocity_correction,
        tail_bound: r.tail_bound,
        energy_spread: r.trajectory.energy_spread(),
    };
    ctx.note(format!("v = {}, k = {}; wrote {}", r.v, r.multiplicity.k, a.out.display()));
    emit(&summary, Some(&a.out.join("result.json")))
}

#[derive(Serialize)]
struct ValueBundle<'a> {
    scenario: &'a str,
    scenario_hash: &'a str,
    solver: &'a SolverOptions,
    x0: &'a [f64],
    value: ValueResult,
    grad_check: Option<GradCheck>,
}

fn run_value(ctx: &Ctx, a: &ValueArgs) -> nbody_hj::Result<()> {
    let l = ctx.load(&a.scenario)?;
    let mut opts = l.solver.value_options(l.spec.kind);
    opts.lambda1 = a.lambda1;
    ctx.note("computing v");
    let (value, _) = value_with_minimizer(&l.spec, &opts)?;
    let gc = if a.grad_check {
        ctx.note("finite-difference gradient check");
        let mut aux = opts.clone();
        aux.solve.restarts = 1;
        Some(grad_check(&l.spec, l.solver.h_fd, l.solver.seed, &aux)?)
    } else {
        None
    };
    let name = l.file.name.clone().unwrap_or_default();
    emit(
        &ValueBundle { scenario: &name, scenario_hash: &l.hash, solver: &l.solver, x0: &l.spec.x0, value, grad_check: gc },
        a.out.as_deref(),
    )
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    scenario_hash: &'a str,
    csv: String,
    csv_hash: String,
    points: usize,
    singular: usize,
    near_collision: usize,
    errors: usize,
}

fn run_scan(ctx: &Ctx, a: &ScanArgs) -> nbody_hj::Result<()> {
    let l = ctx.load(&a.scenario)?;
    let slice = load_slice(&a.slice, &l.spec)?;
    let mut opts = l.solver.value_options(l.spec.kind);
    opts.lambda1 = a.lambda1;
    opts.finite_horizon = !a.no_finite_horizon;
    let total = slice.len();
    ctx.note(format!("scanning {total} points"));
    let recs = scan_grid_with_progress(&l.spec, &slice, &opts, |done| {
        if !ctx.quiet {
            eprint!("\rnbodyhj: {done}/{total}");
            if done == total {
                eprintln!();
            }
        }
    })?;
    let mut buf = Vec::new();
    write_scan_csv(&recs, l.spec.n_coords(), &mut buf)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&a.out, &buf)?;
    for r in recs.iter().filter(|r| r.error.is_some()) {
        ctx.note(format!("point ({}, {}): {}", r.i, r.j, r.error.as_deref().unwrap_or("")));
    }
    emit(
        &ScanSummary {
            scenario_hash: &l.hash,
            csv: a.out.display().to_string(),
            csv_hash: git_blob_sha1(&buf),
            points: recs.len(),
            singular: recs.iter().filter(|r| r.k >= 2).count(),
            near_collision: recs.iter().filter(|r| r.status.label() == "near_collision").count(),
            errors: recs.iter().filter(|r| r.error.is_some()).count(),
        },
        None,
    )
}

/// `a:b:n` → `n` geometric points from `a` to `b`.
fn parse_grid(s: &str) -> nbody_hj::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("t grid `{s}` must be a:b:n with 0 < a <= b and n >= 1"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(a > 0.0 && b >= a && b.is_finite()) || n == 0 {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    let r = (b / a).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { b } else { a * (r * i as f64).exp() }).collect())
}

#[derive(Serialize)]
struct SpectrumBundle<'a> {
    scenario_hash: &'a str,
    spectral: &'a SpectralOptions,
    profile: LambdaProfile,
    conjugate: ConjugateReport,
    /// `λ₁(T_max) − λ₁(2 T_max)` at the first grid time.
    tail_influence: f64,
}

fn run_spectrum(ctx: &Ctx, a: &SpectrumArgs) -> nbody_hj::Result<()> {
    let l = ctx.load(&a.scenario)?;
    let grid = parse_grid(&a.t_grid)?;
    let mut opts = l.solver.value_options(l.spec.kind);
    if let Some(t) = a.t_max {
        opts.spectral.t_max = t;
    }
    if let Some(m) = a.n_eigs {
        opts.spectral.n_eigs = m;
    }
    ctx.note("computing the minimizer");
    let (_, r) = value_with_minimizer(&l.spec, &opts)?;
    let so = &opts.spectral;
    let path = TrajectoryPath::with_backward_extension(&l.spec.ms, r.trajectory, so.eps_back)?;
    ctx.note(format!("eigenvalue profile on {} start times", grid.len()));
    let profile = lambda_profile(&path, &grid, so)?;
    let conjugate = conjugate_scan(&path, grid[0], *grid.last().unwrap(), grid.len().max(2), so)?;
    let tail = tail_influence(&path, grid[0], so)?;
    if let Some(p) = &a.csv {
        let mut buf = Vec::new();
        profile.write_csv(&mut buf)?;
        std::fs::write(p, buf)?;
    }
    emit(
        &SpectrumBundle { scenario_hash: &l.hash, spectral: so, profile, conjugate, tail_influence: tail },
        a.out.as_deref(),
    )
}

fn run_verify(ctx: &Ctx, a: &VerifyArgs) -> nbody_hj::Result<bool> {
    let l = ctx.load(&a.scenario)?;
    let mut opts = VerifyOptions::new(l.solver.value_options(l.spec.kind));
    opts.tol_hj = l.solver.tol_hj;
    opts.h_fd = l.solver.h_fd;
    ctx.note("running checks");
    let mut rep: VerifyReport = verify_scenario(&l.spec, &opts)?;
    rep.name = l.file.name.clone();
    rep.scenario_hash = Some(l.hash.clone());
    if let Some(p) = &a.out {
        save_result(p, &rep)?;
    }
    if a.json {
        std::io::stdout().write_all(to_canonical_json(&rep)?.as_bytes())?;
    } else {
        let mut out = std::io::stdout().lock();
        write!(out, "{}", rep.table())?;
        writeln!(out, "{}", if rep.passed { "all checks passed" } else { "some checks FAILED" })?;
    }
    Ok(rep.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx { seed: cli.seed, quiet: cli.quiet };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("nbodyhj: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    let res = pool.install(|| match &cli.command {
        Command::CentralConfig(a) => run_central(&ctx, a).map(|_| true),
        Command::Solve(a) => run_solve(&ctx, a).map(|_| true),
        Command::Value(a) => run_value(&ctx, a).map(|_| true),
        Command::Scan(a) => run_scan(&ctx, a).map(|_| true),
        Command::Spectrum(a) => run_spectrum(&ctx, a).map(|_| true),
        Command::Verify(a) => run_verify(&ctx, a),
    });
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("nbodyhj: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
