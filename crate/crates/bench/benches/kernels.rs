use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, Criterion};
use nbody_hj::action::{ActionProblem, TailModel};
use nbody_hj::io::load_scenario;
use nbody_hj::mesh::TimeMesh;
use nbody_hj::potential::{u_gradient, u_value};
use nbody_hj::reference::ScenarioSpec;
use nbody_hj::value::{value_with_minimizer, ValueOptions};

fn scenario(name: &str) -> ScenarioSpec {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    load_scenario(&p).unwrap().0
}

fn potential(c: &mut Criterion) {
    let spec = scenario("three_body_hyperbolic.json");
    let x = spec.x0.clone();
    c.bench_function("u_value/3body", |b| b.iter(|| u_value(&spec.ms, black_box(&x)).unwrap()));
    c.bench_function("u_gradient/3body", |b| b.iter(|| u_gradient(&spec.ms, black_box(&x)).unwrap()));
}

fn action(c: &mut Criterion) {
    let spec = scenario("three_body_parabolic.json");
    let mesh = TimeMesh::stretched(1.0, 1e12, 128 * 12, 8.0).unwrap();
    let prob = ActionProblem::new(&spec, mesh, TailModel::ConstantExtension).unwrap();
    let free = vec![1e-3; prob.n_free()];
    let mut g = vec![0.0; free.len()];
    let mut out = vec![0.0; free.len()];
    c.bench_function("action_eval_grad/3body_1536el", |b| b.iter(|| prob.eval(black_box(&free), &mut g).unwrap()));
    c.bench_function("action_hess_vec/3body_1536el", |b| {
        b.iter(|| prob.hess_vec(black_box(&free), black_box(&g), &mut out).unwrap())
    });
}

fn value(c: &mut Criterion) {
    let spec = scenario("two_body_hyperbolic.json");
    let mut opts = ValueOptions::for_class(spec.kind);
    opts.solve.restarts = 1;
    opts.finite_horizon = false;
    let mut group = c.benchmark_group("value");
    group.sample_size(10);
    group.bench_function("two_body_hyperbolic", |b| b.iter(|| value_with_minimizer(&spec, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, potential, action, value);
criterion_main!(benches);
