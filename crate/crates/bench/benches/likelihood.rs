use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hmm_pt::hmm::{simulate, ModelSpec, ParamVector, PreparedData, StreamFamily};
use hmm_pt::priors::{GammaHyper, PriorConfig};
use hmm_pt::pt::{PtConfig, PtEngine};
use hmm_pt::target::HmmTarget;

fn setup(n_states: usize, len: usize) -> (ModelSpec, ParamVector, hmm_pt::hmm::ObservationSet) {
    let spec = ModelSpec::with_families(
        n_states,
        &[StreamFamily::Poisson, StreamFamily::GammaMeanSd, StreamFamily::GammaMeanSd],
        0,
    )
    .unwrap();
    let theta = ParamVector::neutral(&spec);
    let data = simulate(&spec, &theta, &[len; 4], None, 7).unwrap().data;
    (spec, theta, data)
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_log_likelihood");
    for n in [2usize, 3, 5] {
        let (spec, theta, data) = setup(n, 500);
        let prepared = PreparedData::new(&spec, &data).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| prepared.log_likelihood(black_box(&theta)))
        });
    }
    group.finish();
}

fn pt_iteration(c: &mut Criterion) {
    let (spec, _, data) = setup(3, 300);
    let prior = PriorConfig::shared(
        &spec,
        GammaHyper::new(2.0, 0.5),
        GammaHyper::new(2.0, 0.2),
        GammaHyper::new(2.0, 0.5),
    );
    let target = HmmTarget::new(spec, prior, &data).unwrap();
    let config = PtConfig::new(vec![1.0, 0.5, 0.25, 0.1], u64::MAX, 0, 3);
    let mut engine = PtEngine::new(&target, config).unwrap();
    c.bench_function("pt_iteration_4_replicas", |b| b.iter(|| engine.step()));
}

criterion_group!(benches, forward, pt_iteration);
criterion_main!(benches);
