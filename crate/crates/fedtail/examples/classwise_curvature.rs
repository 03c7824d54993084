//! Class-wise sharpness on a long-tailed batch: per-class perturbations,
//! curvature estimates, and the weighted sharpness term.
//!
//! ```bash
//! cargo run --example classwise_curvature
//! ```

use fedtail::data::{gen_synthetic, SynthSpec};
use fedtail::losses::Batch;
use fedtail::model::{Model, ModelSpec};
use fedtail::objective::{
    classwise_perturbation, classwise_sharp_losses, curvature_weights, CurvatureState,
};

fn main() {
    let data_spec = SynthSpec {
        num_domains: 2,
        num_classes: 5,
        feature_dim: 4,
        samples_per_class_max: 40,
        imbalance_ratio: 10.0,
        seed: 5,
        ..SynthSpec::default()
    };
    println!("long-tail profile (r = 10): {:?}", data_spec.class_counts());
    let ds = gen_synthetic(&data_spec).unwrap().remove(0);
    let batch = {
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (x, y) = ds.subset(&idx);
        Batch::new(x, y, 0).unwrap()
    };

    let model = Model::new(ModelSpec {
        input_dim: 4,
        feature_dims: vec![8, 6],
        num_classes: 5,
        num_domains: 2,
        discriminator_dims: [4, 4],
        seed: 1,
    })
    .unwrap();
    let params = model.init_params();

    // Per-class SAM directions all sit on the rho-sphere.
    let rho = 0.05;
    println!("\nper-class perturbation norms (rho = {rho}):");
    for class in 0..5 {
        let eps = classwise_perturbation(&model, &params, &batch, class, rho).unwrap();
        println!("  class {class}: |eps_c| = {:.12}", eps.norm2());
    }

    // Curvature-aware weights from power iteration on each class loss.
    let state = curvature_weights(&model, &params, &batch, 20, 99, None, 0).unwrap();
    println!("\n{:<7} {:>8} {:>12} {:>10}", "class", "samples", "sigma_max", "gamma");
    for class in 0..5 {
        println!(
            "{class:<7} {:>8} {:>12.4} {:>10.4}",
            ds.class_counts[class], state.sigma[class], state.gamma[class]
        );
    }

    // The combined term: sum_c gamma_c * L_c at theta + eps_c.
    let out = classwise_sharp_losses(&model, &params, &batch, rho, &state, false).unwrap();
    println!("\nper-class sharpness losses: {:?}", out.per_class.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("weighted sum:  {:.6}", out.weighted_sum);
    println!("gradient norm: {:.6}", out.grad.norm2());

    // With flat (cold-start) curvature every class weighs 1.
    let cold = CurvatureState::cold(5);
    let plain = classwise_sharp_losses(&model, &params, &batch, rho, &cold, false).unwrap();
    println!("unweighted sum (gamma = 1): {:.6}", plain.weighted_sum);
}
