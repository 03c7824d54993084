//! Hessian-vector products and power-iteration eigenvalue estimates.
//!
//! ```bash
//! cargo run --example hessian_spectrum
//! ```

use std::sync::Arc;

use fedtail::autograd::{self, Gradient, Layout, NodeId, ParamVector, Tape};
use fedtail::losses::cls_builder;
use fedtail::model::{Model, ModelSpec};
use fedtail::objective::gamma_from_sigma;
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
    // Quadratic 0.5 theta^T diag(2, 5) theta: the Hessian is the diagonal.
    let layout = Arc::new(Layout::new(&[("w", 2)]));
    let params = ParamVector::new(layout.clone(), vec![1.0, 1.0]).unwrap();
    let builder = quadratic(vec![2.0, 5.0]);

    for (dir, expect) in [([1.0, 0.0], [2.0, 0.0]), ([0.0, 1.0], [0.0, 5.0])] {
        let v = Gradient::new(layout.clone(), dir.to_vec()).unwrap();
        let hv = autograd::hvp(&builder, &params, &v, 1e-4).unwrap();
        println!("H . {dir:?} = [{:.6}, {:.6}]   (exact {expect:?})", hv.values()[0], hv.values()[1]);
    }

    let sigma = autograd::top_eigenvalue(&builder, &params, 50, 42).unwrap();
    println!("dominant eigenvalue of diag(2,5): {sigma:.9}");
    let indef = quadratic(vec![-7.0, 3.0]);
    let sigma = autograd::top_eigenvalue(&indef, &params, 50, 42).unwrap();
    println!("dominant-magnitude eigenvalue of diag(-7,3): {sigma:.9}");

    // Per-class curvature of a small classifier: sharper classes get
    // smaller weights gamma = 1 / (1 + max(sigma, 0)).
    let model = Model::new(ModelSpec {
        input_dim: 2,
        feature_dims: vec![6, 4],
        num_classes: 3,
        num_domains: 2,
        discriminator_dims: [3, 3],
        seed: 7,
    })
    .unwrap();
    let params = model.init_params();
    let batch = fedtail::losses::Batch::new(
        arr2(&[
            [2.9, 0.1],
            [3.2, -0.3],
            [-1.4, 2.6],
            [-1.6, 2.4],
            [-1.2, -2.7],
            [-1.5, -2.5],
        ]),
        vec![0, 0, 1, 1, 2, 2],
        0,
    )
    .unwrap();
    println!("\nper-class curvature of a 3-class toy model:");
    println!("{:<7} {:>12} {:>10}", "class", "sigma_max", "gamma");
    for class in 0..3 {
        let sub = batch.class_subset(class).unwrap();
        let b = cls_builder(&model, &sub);
        let sigma = autograd::top_eigenvalue(&b, &params, 60, 13).unwrap();
        println!("{class:<7} {sigma:>12.6} {:>10.6}", gamma_from_sigma(sigma));
    }
}
