//! Sequential vs rayon execution of the three heavy sweeps on the 6-bus case.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use interchange::forecast::{PiecewiseOptions, QuadratureRule};
use interchange::netmodel::parse_case_document;
use interchange::oracle::{scan, OracleOptions};
use interchange::scheduler::ScheduleOptions;
use interchange::{Execution, Expectation, Forecast, Market, Network};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn case() -> (Network, Forecast) {
    let doc = parse_case_document(include_str!("../../../cases/sixbus.json")).unwrap();
    (doc.network, doc.forecast)
}

fn market_build(c: &mut Criterion) {
    let (net, f) = case();
    let rules = [
        ("piecewise", Expectation::PiecewiseNormal(PiecewiseOptions::default())),
        ("gh11", Expectation::Quadrature(QuadratureRule::gauss_hermite(11))),
    ];
    let mut group = c.benchmark_group("market_build");
    group.sample_size(10);
    for (rule_name, rule) in rules {
        for (mode, exec) in MODES {
            let opts = ScheduleOptions {
                expectation: rule,
                execution: exec,
                ..ScheduleOptions::default()
            };
            group.bench_with_input(BenchmarkId::new(rule_name, mode), &opts, |b, opts| {
                b.iter(|| Market::build(black_box(&net), black_box(&f), opts).unwrap())
            });
        }
    }
    group.finish();
}

fn cost_scan(c: &mut Criterion) {
    let (net, f) = case();
    let grid: Vec<f64> = (0..=60).map(|k| 90.0 + k as f64).collect();
    let mut group = c.benchmark_group("cost_scan");
    group.sample_size(10);
    for (mode, exec) in MODES {
        let opts = OracleOptions {
            execution: exec,
            ..OracleOptions::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(mode), &opts, |b, opts| {
            b.iter(|| scan(black_box(&net), black_box(&f), &grid, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, market_build, cost_scan);
criterion_main!(benches);
