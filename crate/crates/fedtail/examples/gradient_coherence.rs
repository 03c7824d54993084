//! The gradient-coherence regularizer: penalizing conflicting gradients
//! between the classification and adversarial objectives.
//!
//! ```bash
//! cargo run --example gradient_coherence
//! ```

use std::sync::Arc;

use fedtail::autograd::{Layout, NodeId, ParamVector, Tape};
use fedtail::losses::Batch;
use fedtail::model::{Model, ModelSpec};
use fedtail::objective::{coherence_core, coherence_loss, FedTailConfig};
use ndarray::arr2;

fn quadratic(diag: Vec<f64>) -> impl Fn(&mut Tape<'_>) -> NodeId {
    move |t: &mut Tape<'_>| {
        let p = t.param_all();
        let a = t.constant(1, diag.len(), diag.clone());
        let ap = t.mul(p, a);
        let q = t.dot(ap, p);
        t.scale(q, 0.5)
    }
}

fn main() {
    // Closed form on a quadratic pair: A = diag(1,2), B = diag(3,1),
    // theta = (1,1), alpha = 1 gives value -5 and gradient (-6, -4).
    let layout = Arc::new(Layout::new(&[("w", 2)]));
    let params = ParamVector::new(layout, vec![1.0, 1.0]).unwrap();
    let out = coherence_core(
        quadratic(vec![1.0, 2.0]),
        quadratic(vec![3.0, 1.0]),
        &params,
        1.0,
        None,
    )
    .unwrap();
    println!("quadratic pair: value {:.6}, gradient ({:.6}, {:.6}), inner product {:.6}",
        out.value, out.grad.values()[0], out.grad.values()[1], out.inner);

    // Aligned gradients: the penalty is negative (a reward); opposed
    // gradients make it positive.
    let aligned = coherence_core(
        quadratic(vec![2.0, 2.0]),
        quadratic(vec![2.0, 2.0]),
        &params,
        0.5,
        None,
    )
    .unwrap();
    let opposed = coherence_core(
        quadratic(vec![2.0, 2.0]),
        quadratic(vec![-2.0, -2.0]),
        &params,
        0.5,
        None,
    )
    .unwrap();
    println!("aligned losses: coherence {:.4} (inner {:.4})", aligned.value, aligned.inner);
    println!("opposed losses: coherence {:.4} (inner {:.4})", opposed.value, opposed.inner);

    // On the model, the inner product is taken over the shared F.* block
    // that both objectives actually touch.
    let model = Model::new(ModelSpec {
        input_dim: 2,
        feature_dims: vec![6, 4],
        num_classes: 3,
        num_domains: 3,
        discriminator_dims: [4, 3],
        seed: 23,
    })
    .unwrap();
    let mparams = model.init_params();
    let batch = Batch::new(
        arr2(&[[0.5, -0.3], [1.2, 0.4], [-0.7, 0.9], [0.1, -1.1], [0.6, 0.2], [-0.9, -0.4]]),
        vec![0, 1, 2, 0, 1, 2],
        2,
    )
    .unwrap();
    let cfg = FedTailConfig::default();
    let out = coherence_loss(&model, &mparams, &batch, &cfg).unwrap();
    println!("\nmodel batch (alpha = {}):", cfg.alpha);
    println!("  <grad cls, grad adv> over F.* = {:.6}", out.inner);
    println!("  coherence value               = {:.6}", out.value);
    println!("  gradient norm                 = {:.6}", out.grad.norm2());

    let full = FedTailConfig {
        coherence_full_vector: true,
        ..FedTailConfig::default()
    };
    let out_full = coherence_loss(&model, &mparams, &batch, &full).unwrap();
    println!("  full-vector inner product     = {:.6} (D.* adds zero blocks)", out_full.inner);
}
