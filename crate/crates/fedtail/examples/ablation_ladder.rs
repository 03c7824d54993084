//! The loss-term ladder: start from plain classification and add one
//! component at a time, watching leave-one-domain-out accuracy.
//!
//! ```bash
//! cargo run --release --example ablation_ladder
//! ```

use fedtail::config::ExperimentSpec;
use fedtail::harness::{ablation_csv, ablation_results};

fn main() {
    let mut spec = ExperimentSpec::default();
    // A reduced benchmark so the example finishes in seconds; the full one
    // lives in the acceptance suite.
    spec.data.samples_per_class_max = 60;
    spec.rounds = 12;
    spec.num_seeds = 2;

    let start = std::time::Instant::now();
    let results = ablation_results(&spec).unwrap();
    println!(
        "ladder of {} configurations in {:.1}s\n",
        results.len(),
        start.elapsed().as_secs_f64()
    );

    println!("{:<38} {:>10} {:>10}", "terms", "accuracy", "macro");
    for (label, runs) in &results {
        let acc: f64 = runs
            .iter()
            .map(|r| r.final_report().heldout_accuracy)
            .sum::<f64>()
            / runs.len() as f64;
        let mac: f64 = runs
            .iter()
            .map(|r| r.final_report().heldout_macro_accuracy)
            .sum::<f64>()
            / runs.len() as f64;
        println!("{label:<38} {acc:>10.4} {mac:>10.4}");
    }

    println!("\nablation.csv payload:\n{}", ablation_csv(&spec, &results));
}
