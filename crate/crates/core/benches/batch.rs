use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use derdispatch::exec::map_indexed;
use derdispatch::network::{check_feasibility, feeder_33, Dispatch, Scenario};
use derdispatch::robust::ScenarioBox;
use derdispatch::Execution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenarios(count: usize) -> (derdispatch::network::NetworkData, Vec<(Scenario, Dispatch)>) {
    let net = feeder_33();
    let bx = ScenarioBox::around(&net.nominal_scenario(), 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let items = (0..count)
        .map(|_| {
            let x = bx.sample(&mut rng);
            let d = Dispatch::zero_curtailment(&net, &x);
            (x, d)
        })
        .collect();
    (net, items)
}

fn batch_feasibility(c: &mut Criterion) {
    let (net, items) = scenarios(512);
    let mut group = c.benchmark_group("batch_feasibility");
    for mode in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &mode,
            |b, &mode| {
                b.iter(|| {
                    let out = map_indexed(mode, items.len(), |i| {
                        check_feasibility(&net, &items[i].0, &items[i].1, 1e-6)
                            .map(|r| r.feasible)
                            .unwrap_or(false)
                    });
                    out.iter().filter(|f| **f).count()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, batch_feasibility);
criterion_main!(benches);
