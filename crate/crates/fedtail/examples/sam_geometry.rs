//! SAM perturbations, the surrogate gap, and the SAGM baseline.
//!
//! ```bash
//! cargo run --example sam_geometry
//! ```

use std::sync::Arc;

use fedtail::autograd::{Gradient, Layout, NodeId, ParamVector, Tape};
use fedtail::losses::{sagm_loss_of, sam_loss_of, sam_perturbation, surrogate_gap_of};
use fedtail::rng::stream_rng;
use rand::Rng;

fn main() {
    // The ascent direction has norm exactly rho.
    let layout = Arc::new(Layout::new(&[("g", 2)]));
    let g = Gradient::new(layout.clone(), vec![3.0, 4.0]).unwrap();
    let eps = sam_perturbation(&g, 0.05);
    println!(
        "g = (3, 4), rho = 0.05  ->  eps = ({}, {}), |eps| = {}",
        eps.values()[0],
        eps.values()[1],
        eps.norm2()
    );

    let mut rng = stream_rng(3, "norm-demo");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..64);
        let layout = Arc::new(Layout::new(&[("g", n)]));
        let mut g = Gradient::zeros(layout);
        for v in g.values_mut() {
            *v = rng.random::<f64>() * 4.0 - 2.0;
        }
        if g.norm2() < 1e-12 {
            continue;
        }
        worst = worst.max((sam_perturbation(&g, 0.05).norm2() - 0.05).abs());
    }
    println!("worst |eps|-rho deviation over 100 random gradients: {worst:.2e}");

    // On the scalar quadratic 0.5 theta^2 at theta = 1 with rho = 0.1:
    //   plain loss 0.5, perturbed loss 0.605, surrogate gap 0.105,
    //   SAGM (alpha = 1) = 0.5 + 0.605 - 1.1 = 0.005.
    let layout = Arc::new(Layout::new(&[("w", 1)]));
    let params = ParamVector::new(layout, vec![1.0]).unwrap();
    let quad = |t: &mut Tape<'_>| -> NodeId {
        let p = t.param_all();
        let q = t.dot(p, p);
        t.scale(q, 0.5)
    };
    let (sam, _) = sam_loss_of(quad, &params, 0.1).unwrap();
    let gap = surrogate_gap_of(quad, &params, 0.1).unwrap();
    let (sagm, _) = sagm_loss_of(quad, &params, 0.1, 1.0).unwrap();
    println!("\nquadratic 0.5 t^2 at t = 1, rho = 0.1:");
    println!("  perturbed loss  {sam:.6}");
    println!("  surrogate gap   {gap:.6}");
    println!("  sagm objective  {sagm:.6}");

    // The gap shrinks with rho: a first-order proxy for curvature.
    println!("\nsurrogate gap vs rho:");
    for rho in [0.2, 0.1, 0.05, 0.01] {
        let gap = surrogate_gap_of(quad, &params, rho).unwrap();
        println!("  rho {rho:<5} gap {gap:.6}");
    }
}
