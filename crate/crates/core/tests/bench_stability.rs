//! Kept in its own binary so no other test competes for the CPU while timing.

use capvc::bench::{run_bench, BenchConfig, BenchRow};
use capvc::jose::SignatureAlgorithm;

const MAX_RELATIVE_CHANGE: f64 = 0.20;

fn config(repetitions: usize) -> BenchConfig {
    BenchConfig {
        algorithms: vec![SignatureAlgorithm::EdDsa],
        loads: vec![200, 400],
        warmup: 50,
        repetitions,
        ..BenchConfig::default()
    }
}

fn relative_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.max(b)
}

type Metric = (&'static str, fn(&BenchRow) -> f64);

#[test]
fn doubling_repetitions_keeps_cell_means_within_tolerance() {
    let base = run_bench(&config(3)).unwrap();
    let doubled = run_bench(&config(6)).unwrap();
    assert_eq!(base.rows.len(), doubled.rows.len());
    for (a, b) in base.rows.iter().zip(&doubled.rows) {
        let metrics: [Metric; 3] = [
            ("gen_ms", |r| r.gen_ms),
            ("verify_ms", |r| r.verify_ms),
            ("throughput_rps", |r| r.throughput_rps),
        ];
        for (name, get) in metrics {
            let change = relative_change(get(a), get(b));
            assert!(
                change < MAX_RELATIVE_CHANGE,
                "{} load {} {name}: {:.4} vs {:.4} ({:.1}%)",
                a.algorithm,
                a.load,
                get(a),
                get(b),
                change * 100.0
            );
        }
    }
}
