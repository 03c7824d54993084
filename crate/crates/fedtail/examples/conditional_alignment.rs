//! Sharpness-aware conditional alignment: per-domain reference
//! distributions from class frequencies, and the KL term that pulls the
//! perturbed batch-mean prediction toward them.
//!
//! ```bash
//! cargo run --example conditional_alignment
//! ```

use fedtail::losses::Batch;
use fedtail::model::{Model, ModelSpec};
use fedtail::objective::{estimate_qt, sharp_er_at, sharp_er_loss};
use ndarray::arr2;

fn main() {
    // Reference distributions are class frequencies per domain.
    let counts = vec![
        vec![1851u64, 1245, 1392, 898, 981, 1440, 2192], // a skewed 7-class domain
        vec![500, 500, 500, 500, 500, 500, 500],         // a balanced one
    ];
    let qt = estimate_qt(&counts).unwrap();
    println!("frequency references:");
    for (d, row) in qt.per_domain.iter().enumerate() {
        let rounded: Vec<f64> = row.iter().map(|v| (v * 1e4).round() / 1e4).collect();
        println!("  domain {d}: {rounded:?}");
    }

    // Closed-form KL for a two-class sanity check:
    // KL((0.5, 0.5) || (0.9, 0.1)) = 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1).
    let model = Model::new(ModelSpec {
        input_dim: 2,
        feature_dims: vec![3],
        num_classes: 2,
        num_domains: 2,
        discriminator_dims: [2, 2],
        seed: 0,
    })
    .unwrap();
    let zero = fedtail::ParamVector::zeros(model.layout().clone());
    let batch = Batch::new(arr2(&[[0.4, -0.2], [1.0, 0.3]]), vec![0, 1], 0).unwrap();
    let (kl, _) = sharp_er_at(&model, &zero, &batch, &[0.9, 0.1]).unwrap();
    println!("\nuniform prediction vs (0.9, 0.1): KL = {kl:.6}");
    let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
    println!("closed form:                      {expected:.6}");

    // The full term on a trained-ish model: perturb by the SAM direction of
    // the classification loss, then align the batch-mean prediction.
    let model = Model::new(ModelSpec {
        input_dim: 2,
        feature_dims: vec![6, 4],
        num_classes: 3,
        num_domains: 2,
        discriminator_dims: [3, 3],
        seed: 9,
    })
    .unwrap();
    let params = model.init_params();
    let batch = Batch::new(
        arr2(&[[2.9, 0.1], [3.2, -0.3], [-1.4, 2.6], [-1.2, -2.7], [3.1, 0.2], [2.8, -0.1]]),
        vec![0, 0, 1, 2, 0, 0],
        0,
    )
    .unwrap();
    // The batch is head-heavy (four of six samples in class 0); align
    // against the overall class frequencies instead.
    let reference = [0.5, 0.25, 0.25];
    let (kl, grad) = sharp_er_loss(&model, &params, &batch, &reference, 0.05).unwrap();
    println!("\nhead-heavy batch vs reference {reference:?}:");
    println!("  KL            = {kl:.6}");
    println!("  gradient norm = {:.6}", grad.norm2());

    // Aligning against the model's own mean prediction is free.
    let probs = model.forward_probs(&params, &batch.x).unwrap();
    let mut phat = vec![0.0; 3];
    for i in 0..batch.len() {
        for c in 0..3 {
            phat[c] += probs[(i, c)] / batch.len() as f64;
        }
    }
    let (kl_self, _) = sharp_er_at(&model, &params, &batch, &phat).unwrap();
    println!("  KL against own mean prediction = {kl_self:.2e}");
}
