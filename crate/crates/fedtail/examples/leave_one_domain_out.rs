//! A complete leave-one-domain-out experiment: every domain held out once,
//! several seeds, accuracy averaged at the end.
//!
//! ```bash
//! cargo run --release --example leave_one_domain_out
//! ```

use fedtail::config::ExperimentSpec;
use fedtail::federated::run_experiment;

fn main() {
    let mut spec = ExperimentSpec::default();
    spec.data.samples_per_class_max = 60;
    spec.rounds = 15;
    spec.num_seeds = 2;

    println!(
        "{} domains, {} classes, imbalance r = {}, {} rounds, {} seeds",
        spec.data.num_domains,
        spec.data.num_classes,
        spec.data.imbalance_ratio,
        spec.rounds,
        spec.num_seeds
    );

    let start = std::time::Instant::now();
    let runs = run_experiment(&spec, None).unwrap();
    println!("ran {} (held-out x seed) cells in {:.1}s\n", runs.len(), start.elapsed().as_secs_f64());

    println!("{:<10} {:>6} {:>10} {:>10}", "held_out", "seed", "accuracy", "macro");
    for run in &runs {
        let f = run.final_report();
        println!(
            "{:<10} {:>6} {:>10.4} {:>10.4}",
            run.held_out, run.seed, f.heldout_accuracy, f.heldout_macro_accuracy
        );
    }

    let mean: f64 = runs
        .iter()
        .map(|r| r.final_report().heldout_accuracy)
        .sum::<f64>()
        / runs.len() as f64;
    let macro_mean: f64 = runs
        .iter()
        .map(|r| r.final_report().heldout_macro_accuracy)
        .sum::<f64>()
        / runs.len() as f64;
    println!("\naverage accuracy: {mean:.4}   average macro accuracy: {macro_mean:.4}");

    // Accuracy-vs-round trajectory of the first cell, the data behind
    // convergence curves.
    println!("\naccuracy per round ({}, seed {}):", runs[0].held_out, runs[0].seed);
    let curve: Vec<f64> = runs[0]
        .reports
        .iter()
        .map(|r| (r.heldout_accuracy * 1e3).round() / 1e3)
        .collect();
    println!("{curve:?}");
}
