use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oddlaw::{
    assemble, certify_componentwise, sector_region, simulate, solve_feasibility, vertex_set, CertifyOptions,
    ControlLaw, Disturbance, OddFunction, SimOptions, SlopeProfile, SolveOptions, TauSchedule, VertexMode,
};
use oddlaw_bench::{double_integrator, integrator_chain};

fn feasibility(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_feasibility");
    for n in [2usize, 3, 4] {
        let (plant, gain) = integrator_chain(n);
        let vertices: Vec<_> = vertex_set(0.5, 1.0, n, VertexMode::Componentwise)
            .unwrap()
            .iter()
            .map(|psi| assemble(&plant, &gain, psi, 0.1).unwrap())
            .collect();
        let opts = SolveOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &vertices, |b, v| {
            b.iter(|| solve_feasibility(v, &opts))
        });
    }
    group.finish();
}

fn region(c: &mut Criterion) {
    let arctan = SlopeProfile::new(OddFunction::scaled_arctan(1.0, 1.0).unwrap());
    let power = SlopeProfile::new(OddFunction::power(0.5).unwrap());
    c.bench_function("sector_region/arctan", |b| b.iter(|| sector_region(&arctan, 0.1, 1.0)));
    c.bench_function("sector_region/power", |b| b.iter(|| sector_region(&power, 0.1, 10.0)));
}

fn certify(c: &mut Criterion) {
    let (plant, gain) = double_integrator();
    let funcs = [OddFunction::scaled_saturation(1.0, 1.0).unwrap()];
    let taus = TauSchedule::Uniform(0.1);
    let opts = CertifyOptions::default();
    let mut group = c.benchmark_group("certify");
    group.sample_size(10);
    group.bench_function("componentwise/saturation", |b| {
        b.iter(|| certify_componentwise(&plant, &gain, &funcs, &taus, &opts))
    });
    group.finish();
}

fn trajectories(c: &mut Criterion) {
    let (plant, gain) = double_integrator();
    let law = ControlLaw::componentwise_uniform(gain, OddFunction::scaled_saturation(1.0, 1.0).unwrap());
    let dist = Disturbance::Sinusoid { amplitude: 0.1, frequency: 1.0, phase: 0.0, direction: None };
    let opts = SimOptions { dt: 1e-3, t_end: 10.0, ..Default::default() };
    c.bench_function("simulate/10s_rk4", |b| b.iter(|| simulate(&plant, &law, &dist, &[1.0, 0.0], &opts)));
}

criterion_group!(benches, feasibility, region, certify, trajectories);
criterion_main!(benches);
