//! The reverse-mode tape: values, gradients, and a finite-difference check.
//!
//! ```bash
//! cargo run --example autodiff_basics
//! ```

use std::sync::Arc;

use fedtail::autograd::{self, Layout, ParamVector, Tape};

fn main() {
    // f(x) = x^2 at x = 3.
    let layout = Arc::new(Layout::new(&[("x", 1)]));
    let params = ParamVector::new(layout, vec![3.0]).unwrap();
    let square = |t: &mut Tape<'_>| {
        let x = t.param_all();
        t.dot(x, x)
    };
    let value = autograd::evaluate(square, &params).unwrap();
    let grad = autograd::gradient(square, &params).unwrap();
    println!("f(x) = x^2 at x = 3:   value {value},  gradient {:?}", grad.values());

    // f(x, y) = x * y at (2, 5).
    let layout = Arc::new(Layout::new(&[("p", 2)]));
    let params = ParamVector::new(layout, vec![2.0, 5.0]).unwrap();
    let product = |t: &mut Tape<'_>| {
        let p = t.param_all();
        let ex = t.constant(1, 2, vec![1.0, 0.0]);
        let ey = t.constant(1, 2, vec![0.0, 1.0]);
        let x = t.dot(p, ex);
        let y = t.dot(p, ey);
        t.mul(x, y)
    };
    let value = autograd::evaluate(product, &params).unwrap();
    let grad = autograd::gradient(product, &params).unwrap();
    println!("f(x,y) = x*y at (2,5): value {value}, gradient {:?}", grad.values());

    // A softmax cross-entropy over a tiny weight matrix, checked against
    // central finite differences coordinate by coordinate.
    let layout = Arc::new(Layout::new(&[("w", 6)]));
    let params = ParamVector::new(layout, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2]).unwrap();
    let labels = vec![0usize, 2];
    let ce = {
        let labels = labels.clone();
        move |t: &mut Tape<'_>| {
            let w = t.param("w", 2, 3);
            let x = t.constant(2, 2, vec![1.0, -0.5, 0.25, 0.75]);
            let logits = t.matmul(x, w);
            let ls = t.log_softmax_rows(logits);
            t.pick_neg_mean(ls, &labels)
        }
    };
    let (value, grad) = autograd::value_and_grad(&ce, &params).unwrap();
    println!("\ncross-entropy value {value:.6}");
    println!("{:<6} {:>14} {:>14} {:>10}", "coord", "tape", "central diff", "rel err");
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[k] += h;
        let mut minus = params.clone();
        minus.values_mut()[k] -= h;
        let fd = (autograd::evaluate(&ce, &plus).unwrap()
            - autograd::evaluate(&ce, &minus).unwrap())
            / (2.0 * h);
        let a = grad.values()[k];
        let rel = (a - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(rel);
        println!("{k:<6} {a:>14.8} {fd:>14.8} {rel:>10.2e}");
    }
    println!("max relative error: {worst:.2e}");

    // Determinism: two backward sweeps agree bit for bit.
    let g2 = autograd::gradient(&ce, &params).unwrap();
    let identical = grad
        .values()
        .iter()
        .zip(g2.values())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("bit-identical repeat gradient: {identical}");
}
