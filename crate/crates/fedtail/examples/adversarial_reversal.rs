//! The domain discriminator and its gradient-reversal layer: identity
//! forward, negated-and-scaled gradients into the feature extractor.
//!
//! ```bash
//! cargo run --example adversarial_reversal
//! ```

use fedtail::autograd;
use fedtail::losses::{adv_builder, adv_loss, Batch};
use fedtail::model::{Model, ModelSpec};
use ndarray::arr2;

fn main() {
    let model = Model::new(ModelSpec {
        input_dim: 2,
        feature_dims: vec![5, 4],
        num_classes: 3,
        num_domains: 3,
        discriminator_dims: [4, 3],
        seed: 17,
    })
    .unwrap();
    let params = model.init_params();
    let batch = Batch::new(
        arr2(&[[0.5, -0.3], [1.2, 0.4], [-0.7, 0.9], [0.1, -1.1]]),
        vec![0, 1, 2, 0],
        1, // every sample in this batch comes from domain 1
    )
    .unwrap();

    // Forward values are independent of the reversal coefficient.
    let (v0, g0) = adv_loss(&model, &params, &batch, 0.0).unwrap();
    let (v1, g1) = adv_loss(&model, &params, &batch, 1.0).unwrap();
    let (v2, g2) = adv_loss(&model, &params, &batch, 2.0).unwrap();
    println!("discriminator cross-entropy: {v0:.6} (same at every lambda: {v1:.6}, {v2:.6})");

    // Unreversed reference gradient.
    let plain = autograd::gradient(adv_builder(&model, &batch, None), &params).unwrap();
    let f_ranges = params.layout().ranges_with_prefix("F.");
    let norm_on = |g: &fedtail::Gradient, ranges: &[(usize, usize)]| -> f64 {
        ranges
            .iter()
            .map(|(o, l)| g.values()[*o..*o + *l].iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    };

    println!("\nfeature-block gradient norms:");
    println!("  lambda 0: {:.6} (head contributes nothing)", norm_on(&g0, &f_ranges));
    println!("  lambda 1: {:.6}", norm_on(&g1, &f_ranges));
    println!("  lambda 2: {:.6}", norm_on(&g2, &f_ranges));
    println!("  no layer: {:.6}", norm_on(&plain, &f_ranges));

    // The identity: reversed gradient = -lambda * unreversed, elementwise.
    let mut worst = 0.0f64;
    for (o, l) in &f_ranges {
        for k in *o..*o + *l {
            worst = worst.max((g1.values()[k] + plain.values()[k]).abs());
            worst = worst.max((g2.values()[k] + 2.0 * plain.values()[k]).abs());
        }
    }
    println!("\nreversal identity deviation over F.*: {worst:.2e}");

    // Discriminator parameters are untouched by the reversal.
    let d_ranges = params.layout().ranges_with_prefix("D.");
    let mut d_dev = 0.0f64;
    for (o, l) in &d_ranges {
        for k in *o..*o + *l {
            d_dev = d_dev.max((g1.values()[k] - plain.values()[k]).abs());
        }
    }
    println!("discriminator gradient deviation:      {d_dev:.2e}");
}
