use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gscan::par;
use gscan::scan::{monte_carlo_null, scan_all, ScanParams};
use gscan::simulate::{batch, RingAnalog, Scenario, Subscenario};

fn bench_scan(c: &mut Criterion) {
    let analog = RingAnalog::new();
    let sub = Subscenario::OneHigh;
    let sims = batch(&analog.spec(Scenario::A, sub, 1), &analog.graph, &analog.expected_for(sub), 1).unwrap();
    let data = &sims[0].dataset;
    let params = ScanParams::new(60, 3).replicates(19).seed(1);

    let mut group = c.benchmark_group("scan");
    group.sample_size(10);
    // one worker runs the sequential path inside a single-thread pool
    for (name, workers) in [("sequential", 1), ("parallel", 0)] {
        group.bench_with_input(BenchmarkId::new("windows", name), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || scan_all(data, &analog.graph, &params)))
        });
        group.bench_with_input(BenchmarkId::new("null_19", name), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || monte_carlo_null(data, &analog.graph, &params)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_scan);
criterion_main!(benches);
