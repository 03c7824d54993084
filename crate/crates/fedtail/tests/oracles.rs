//! Oracle-equivalence tests: every numerical path checked against an
//! independent computation (graph-free forward pass, finite differences,
//! dense eigendecomposition, closed forms).

mod common;

use fedtail::autograd::{self, Gradient, Layout, NodeId, ParamVector, Tape};
use fedtail::losses::{cls_builder, cls_loss, Batch};
use fedtail::model::{Model, ModelSpec};
use fedtail::objective::classwise_perturbation;
use fedtail::rng::stream_rng;
use ndarray::{arr2, Array2};
use rand::Rng;
use std::sync::Arc;

fn arch() -> ModelSpec {
    ModelSpec {
        input_dim: 3,
        feature_dims: vec![4, 3],
        num_classes: 3,
        num_domains: 2,
        discriminator_dims: [3, 2],
        seed: 0,
    }
}

#[test]
fn evaluate_matches_graph_free_forward_pass() {
    // Two-layer MLP cross-entropy on a fixed 4-sample batch.
    let (model, params, batch) = common::seeded_case(77, arch(), 4, 1.0, 0.0).unwrap();
    let value = autograd::evaluate(cls_builder(&model, &batch), &params).unwrap();
    let forward = common::oracle_forward(&model, &params, &batch.x);
    let expected = common::oracle_cross_entropy(&forward.class_logits, &batch.y);
    assert!(
        (value - expected).abs() < 1e-12,
        "tape {value} vs oracle {expected}"
    );
}

#[test]
fn gradient_matches_finite_differences_across_seeds() {
    // Margin-filtered draws keep finite differences away from ReLU kinks.
    let cases = common::seeded_cases(0, 25, arch(), 4, 1.0, 1e-3);
    let mut worst = 0.0f64;
    for (_, model, params, batch) in &cases {
        let (_, grad) = cls_loss(model, params, batch).unwrap();
        let fd = common::fd_gradient(cls_builder(model, batch), params, 1e-5);
        for (a, f) in grad.values().iter().zip(&fd) {
            worst = worst.max((a - f).abs() / f.abs().max(1.0));
        }
    }
    assert!(worst < 1e-5, "max relative error {worst:.3e}");
}

#[test]
fn hvp_matches_dense_hessian_on_mlp() {
    let spec = ModelSpec {
        input_dim: 2,
        feature_dims: vec![2],
        num_classes: 2,
        num_domains: 2,
        discriminator_dims: [2, 2],
        seed: 0,
    };
    let (model, params, batch) = {
        let mut seed = 400;
        loop {
            if let Some(case) = common::seeded_case(seed, spec.clone(), 4, 1.0, 1e-2) {
                break case;
            }
            seed += 1;
        }
    };
    let builder = cls_builder(&model, &batch);
    let h = autograd::default_hvp_step(&params);
    let dense = common::dense_hessian(&builder, &params, h);

    let mut rng = stream_rng(5, "hvp-directions");
    for _ in 0..5 {
        let mut v = Gradient::zeros(params.layout().clone());
        for x in v.values_mut() {
            *x = rng.random::<f64>() * 2.0 - 1.0;
        }
        let hv = autograd::hvp(&builder, &params, &v, h).unwrap();
        for i in 0..params.len() {
            let mut expect = 0.0;
            for j in 0..params.len() {
                expect += dense[(i, j)] * v.values()[j];
            }
            let denom = expect.abs().max(1e-3);
            assert!(
                (hv.values()[i] - expect).abs() / denom < 1e-3,
                "coordinate {i}: {} vs {expect}",
                hv.values()[i]
            );
        }
    }
}

#[test]
fn power_iteration_matches_dense_eigensolver_on_class_loss() {
    let (model, params, batch) = {
        let mut seed = 600;
        loop {
            if let Some(case) = common::seeded_case(
                seed,
                ModelSpec {
                    input_dim: 2,
                    feature_dims: vec![3],
                    num_classes: 2,
                    num_domains: 2,
                    discriminator_dims: [2, 2],
                    seed: 0,
                },
                6,
                1.0,
                1e-2,
            ) {
                break case;
            }
            seed += 1;
        }
    };
    assert!(params.len() <= 50);
    for class in 0..2 {
        let sub = batch.class_subset(class).unwrap();
        let builder = cls_builder(&model, &sub);
        let sigma = autograd::top_eigenvalue(&builder, &params, 300, 42).unwrap();
        let dense = common::dense_hessian(&builder, &params, autograd::default_hvp_step(&params));
        let reference = common::dominant_eigenvalue(&dense);
        assert!(
            (sigma - reference).abs() / reference.abs().max(1e-6) < 1e-3,
            "class {class}: power {sigma} vs dense {reference}"
        );
    }
}

#[test]
fn classwise_perturbation_respects_block_structure() {
    // A two-block model: each class's loss only touches its own parameter
    // block, so the class perturbation must be supported on that block.
    // Realized as logits = [w0 * x0, w1 * x1] with disjoint weights.
    let layout = Arc::new(Layout::new(&[("F.w0", 1), ("F.w1", 1)]));
    let params = ParamVector::new(layout.clone(), vec![0.8, -0.6]).unwrap();
    let class_of_block = |block: usize| -> Gradient {
        // Batch holds samples of one class whose loss reads one block only:
        // loss = softplus-style CE over logits (w_b * 1, 0), labels = block.
        let builder = move |t: &mut Tape<'_>| {
            let w = t.param(&format!("F.w{block}"), 1, 1);
            let x = t.constant(1, 1, vec![1.0]);
            let z = t.mul(w, x);
            let zero = t.constant(1, 1, vec![0.0]);
            // logits as a 1x2 row assembled from [z, 0] via additions.
            let left = t.constant(1, 2, vec![1.0, 0.0]);
            let zrow = t.matmul(z, left);
            let right = t.constant(1, 2, vec![0.0, 1.0]);
            let zzero = t.matmul(zero, right);
            let logits = t.add(zrow, zzero);
            let ls = t.log_softmax_rows(logits);
            t.pick_neg_mean(ls, &[block])
        };
        let grad = autograd::gradient(builder, &params).unwrap();
        fedtail::losses::sam_perturbation(&grad, 0.05)
    };
    let eps0 = class_of_block(0);
    assert!(eps0.values()[0] != 0.0);
    assert_eq!(eps0.values()[1], 0.0);
    let eps1 = class_of_block(1);
    assert_eq!(eps1.values()[0], 0.0);
    assert!(eps1.values()[1] != 0.0);
}

#[test]
fn classwise_perturbation_norm_property() {
    let (model, params, batch) = common::seeded_case(900, arch(), 9, 1.0, 0.0).unwrap();
    for class in 0..3 {
        let eps = classwise_perturbation(&model, &params, &batch, class, 0.05).unwrap();
        assert!((eps.norm2() - 0.05).abs() < 1e-12);
    }
}

#[test]
fn entropy_and_max_square_derivative_contrast() {
    // Mean entropy of free probabilities: d/dp = -(1 + ln p) / N.
    let n = 1usize;
    let p_vals = [0.9f64, 0.1];
    let layout = Arc::new(Layout::new(&[("p", 2)]));
    let params = ParamVector::new(layout.clone(), p_vals.to_vec()).unwrap();
    let entropy = |t: &mut Tape<'_>| {
        let p = t.param("p", 1, 2);
        let lp = t.log(p);
        let plp = t.mul(p, lp);
        let s = t.sum(plp);
        t.scale(s, -1.0)
    };
    let (_, g) = autograd::value_and_grad(entropy, &params).unwrap();
    for (gv, p) in g.values().iter().zip(&p_vals) {
        let expect = -(1.0 + p.ln()) / n as f64;
        assert!((gv - expect).abs() < 1e-12, "{gv} vs {expect}");
    }

    // Max-square: d/dp = -p/N, bounded by 1/N however small p gets, while
    // the entropy derivative grows without bound as p -> 0.
    let max_square = |t: &mut Tape<'_>| {
        let p = t.param("p", 1, 2);
        let sq = t.mul(p, p);
        let s = t.sum(sq);
        t.scale(s, -0.5)
    };
    let (_, g) = autograd::value_and_grad(max_square, &params).unwrap();
    for (gv, p) in g.values().iter().zip(&p_vals) {
        assert!((gv - (-p)).abs() < 1e-12);
        assert!(gv.abs() <= 1.0);
    }

    // Binary entropy against the confidence scalar: |dH/dp| is largest for
    // the confident sample, the gradient-flow imbalance the square loss
    // avoids.
    let binary_entropy = |t: &mut Tape<'_>| {
        let p = t.param_all();
        let one = t.constant(1, 1, vec![1.0]);
        let q = t.sub(one, p);
        let lp = t.log(p);
        let lq = t.log(q);
        let plp = t.mul(p, lp);
        let qlq = t.mul(q, lq);
        let s = t.add(plp, qlq);
        t.scale(s, -1.0)
    };
    let grad_at = |p: f64| {
        let layout = Arc::new(Layout::new(&[("p", 1)]));
        let params = ParamVector::new(layout, vec![p]).unwrap();
        autograd::gradient(binary_entropy, &params).unwrap().values()[0]
    };
    let confident = grad_at(0.9);
    assert!((confident + (0.9f64 / 0.1).ln()).abs() < 1e-12);
    assert!(confident.abs() > grad_at(0.6).abs());
    assert!(grad_at(0.99).abs() > confident.abs());
}

#[test]
fn single_sgd_step_matches_hand_computation() {
    // One batch, one step, no momentum or decay: theta' = theta - lr * g.
    let (model, params, _) = common::seeded_case(50, arch(), 4, 1.0, 0.0).unwrap();
    let batch = Batch::new(
        arr2(&[[0.2, -0.4, 0.9], [1.0, 0.3, -0.2]]),
        vec![0, 1],
        0,
    )
    .unwrap();
    let (_, grad) = cls_loss(&model, &params, &batch).unwrap();
    let cfg = fedtail::federated::SgdConfig {
        lr: Some(0.05),
        momentum: 0.0,
        weight_decay: 0.0,
        nesterov: false,
        batch_size: 64,
    };
    let mut sgd = fedtail::federated::Sgd::new(&cfg);
    let mut updated = params.clone();
    sgd.step(&mut updated, &grad, 0.05).unwrap();
    for ((before, after), g) in params
        .values()
        .iter()
        .zip(updated.values())
        .zip(grad.values())
    {
        assert_eq!(*after, before - 0.05 * g);
    }
    let _ = model;
}

#[test]
fn sharp_er_gradient_matches_finite_differences() {
    // The KL alignment term differentiates through the batch-mean softmax;
    // check the whole path against finite differences of its value.
    let (_, model, params, batch) = common::seeded_cases(1200, 1, arch(), 5, 1.0, 1e-3).remove(0);
    let q = [0.5, 0.3, 0.2];
    let builder = |t: &mut Tape<'_>| {
        let logits = model.class_logits_node(t, &batch.x);
        let probs = t.softmax_rows(logits);
        let phat = t.mean_rows(probs);
        let lp = t.log(phat);
        let lq = t.constant(1, 3, q.iter().map(|v: &f64| v.ln()).collect());
        let d = t.sub(lp, lq);
        t.dot(phat, d)
    };
    let (_, grad) = autograd::value_and_grad(&builder, &params).unwrap();
    let fd = common::fd_gradient(&builder, &params, 1e-5);
    for (a, f) in grad.values().iter().zip(&fd) {
        assert!((a - f).abs() / f.abs().max(1.0) < 1e-5);
    }
}
