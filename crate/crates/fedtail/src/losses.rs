//! Baseline and building-block objectives: empirical risk, adversarial
//! domain loss, SAM, surrogate gap, SAGM, maximum-square and entropy.
//!
//! Every loss is a pure function of (params, batch) returning value and
//! gradient. The SAM family is also exposed generically over tape builders
//! so the same machinery applies to toy quadratics in tests and to model
//! losses in training.

use ndarray::Array2;

use crate::autograd::{self, Gradient, NodeId, ParamVector, Tape};
use crate::error::{Error, Result};
use crate::model::Model;

/// One mini-batch from a single domain.
#[derive(Debug, Clone)]
pub struct Batch {
    /// N x d feature matrix.
    pub x: Array2<f64>,
    /// N class labels in [0, C).
    pub y: Vec<usize>,
    /// The domain every sample in this batch belongs to, in [0, K).
    pub domain_id: usize,
}

impl Batch {
    pub fn new(x: Array2<f64>, y: Vec<usize>, domain_id: usize) -> Result<Batch> {
        if x.nrows() == 0 {
            return Err(Error::DimMismatch("batch must be nonempty".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimMismatch(format!(
                "{} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Batch { x, y, domain_id })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Indices of samples with label `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.y.len()).filter(|i| self.y[*i] == class).collect()
    }

    /// The sub-batch of samples with label `class`.
    pub fn class_subset(&self, class: usize) -> Result<Batch> {
        let idx = self.class_indices(class);
        if idx.is_empty() {
            return Err(Error::ClassAbsent { class });
        }
        let d = self.x.ncols();
        let mut x = Array2::zeros((idx.len(), d));
        for (row, &i) in idx.iter().enumerate() {
            for j in 0..d {
                x[(row, j)] = self.x[(i, j)];
            }
        }
        Ok(Batch {
            x,
            y: vec![class; idx.len()],
            domain_id: self.domain_id,
        })
    }

    fn validate_labels(&self, num_classes: usize) -> Result<()> {
        if let Some(bad) = self.y.iter().find(|y| **y >= num_classes) {
            return Err(Error::DimMismatch(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(())
    }
}

// ---- tape builders ------------------------------------------------------

/// Mean cross-entropy of class predictions against true labels.
pub fn cls_builder<'a>(
    model: &'a Model,
    batch: &'a Batch,
) -> impl Fn(&mut Tape<'_>) -> NodeId + 'a {
    move |t: &mut Tape<'_>| {
        let logits = model.class_logits_node(t, &batch.x);
        let ls = t.log_softmax_rows(logits);
        t.pick_neg_mean(ls, &batch.y)
    }
}

/// Mean cross-entropy of the domain discriminator against the batch domain,
/// with gradient reversal (`Some(lambda)`) or without (`None`).
pub fn adv_builder<'a>(
    model: &'a Model,
    batch: &'a Batch,
    grl_lambda: Option<f64>,
) -> impl Fn(&mut Tape<'_>) -> NodeId + 'a {
    let labels = vec![batch.domain_id; batch.len()];
    move |t: &mut Tape<'_>| {
        let logits = model.domain_logits_node(t, &batch.x, grl_lambda);
        let ls = t.log_softmax_rows(logits);
        t.pick_neg_mean(ls, &labels)
    }
}

// ---- model losses -------------------------------------------------------

/// Mean negative log predicted probability of the true labels.
pub fn cls_loss(model: &Model, params: &ParamVector, batch: &Batch) -> Result<(f64, Gradient)> {
    batch.validate_labels(model.spec().num_classes)?;
    check_input(model, batch)?;
    autograd::value_and_grad(cls_builder(model, batch), params)
}

/// Discriminator cross-entropy vs. the batch domain label; gradients into
/// `F.*` are reversed and scaled by `grl_lambda`.
pub fn adv_loss(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    grl_lambda: f64,
) -> Result<(f64, Gradient)> {
    if batch.domain_id >= model.spec().num_domains {
        return Err(Error::DimMismatch(format!(
            "domain id {} out of range for {} domains",
            batch.domain_id,
            model.spec().num_domains
        )));
    }
    if grl_lambda < 0.0 {
        return Err(Error::Config("grl_lambda must be >= 0".into()));
    }
    check_input(model, batch)?;
    autograd::value_and_grad(adv_builder(model, batch, Some(grl_lambda)), params)
}

fn check_input(model: &Model, batch: &Batch) -> Result<()> {
    if batch.x.ncols() != model.spec().input_dim {
        return Err(Error::DimMismatch(format!(
            "batch has {} features, model expects {}",
            batch.x.ncols(),
            model.spec().input_dim
        )));
    }
    Ok(())
}

// ---- SAM family (generic over builders) ----------------------------------

/// SAM ascent direction: `rho * g / ||g||`. A gradient with norm below 1e-12
/// yields the zero perturbation instead of a division blow-up.
pub fn sam_perturbation(grad: &Gradient, rho: f64) -> Gradient {
    assert!(rho > 0.0, "rho must be positive");
    let norm = grad.norm2();
    if norm < 1e-12 {
        return Gradient::zeros(grad.layout().clone());
    }
    grad.scaled(rho / norm)
}

/// Worst-case-neighborhood loss `L(theta + eps)` with its gradient evaluated
/// at the perturbed point (no second-order term through eps).
pub fn sam_loss_of<F>(builder: F, params: &ParamVector, rho: f64) -> Result<(f64, Gradient)>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let grad = autograd::gradient(&builder, params)?;
    let eps = sam_perturbation(&grad, rho);
    let perturbed = params.perturbed(&eps)?;
    autograd::value_and_grad(&builder, &perturbed)
}

pub fn sam_loss(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
) -> Result<(f64, Gradient)> {
    batch.validate_labels(model.spec().num_classes)?;
    check_input(model, batch)?;
    sam_loss_of(cls_builder(model, batch), params, rho)
}

/// Surrogate gap `h(theta) = L_p(theta) - L(theta)`.
pub fn surrogate_gap_of<F>(builder: F, params: &ParamVector, rho: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let (plain, grad) = autograd::value_and_grad(&builder, params)?;
    let eps = sam_perturbation(&grad, rho);
    let perturbed = params.perturbed(&eps)?;
    let p = autograd::evaluate(&builder, &perturbed)?;
    Ok(p - plain)
}

pub fn surrogate_gap(model: &Model, params: &ParamVector, batch: &Batch, rho: f64) -> Result<f64> {
    batch.validate_labels(model.spec().num_classes)?;
    check_input(model, batch)?;
    surrogate_gap_of(cls_builder(model, batch), params, rho)
}

/// `L(theta) + L_p(theta) - alpha * <grad L, grad L_p>`. The inner-product
/// term is differentiated treating the two gradients as locally linear
/// (Hessian-vector products by central differences), not exactly.
pub fn sagm_loss_of<F>(
    builder: F,
    params: &ParamVector,
    rho: f64,
    alpha: f64,
) -> Result<(f64, Gradient)>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let (plain, grad) = autograd::value_and_grad(&builder, params)?;
    let eps = sam_perturbation(&grad, rho);
    let perturbed = params.perturbed(&eps)?;
    let (p_val, p_grad) = autograd::value_and_grad(&builder, &perturbed)?;

    let inner = grad.dot(&p_grad)?;
    let value = plain + p_val - alpha * inner;

    let mut out = grad.clone();
    out.axpy(1.0, &p_grad)?;
    if alpha != 0.0 {
        let r = autograd::default_hvp_step(params);
        if p_grad.norm2() > 1e-12 {
            let h_gp = autograd::hvp(&builder, params, &p_grad, r)?;
            out.axpy(-alpha, &h_gp)?;
        }
        if grad.norm2() > 1e-12 {
            let hp_g = autograd::hvp(&builder, &perturbed, &grad, r)?;
            out.axpy(-alpha, &hp_g)?;
        }
    }
    Ok((value, out))
}

pub fn sagm_loss(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    alpha: f64,
) -> Result<(f64, Gradient)> {
    batch.validate_labels(model.spec().num_classes)?;
    check_input(model, batch)?;
    sagm_loss_of(cls_builder(model, batch), params, rho, alpha)
}

// ---- probability-space losses --------------------------------------------

/// Maximum-square loss: `-(1/2N) * sum_n sum_c p_{n,c}^2`.
pub fn max_square_loss(probs: &Array2<f64>) -> f64 {
    let n = probs.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..probs.ncols() {
            acc += probs[(i, j)] * probs[(i, j)];
        }
    }
    -acc / (2.0 * n as f64)
}

/// Mean Shannon entropy of the rows. Zero-probability entries contribute 0.
pub fn entropy_loss(probs: &Array2<f64>) -> f64 {
    let n = probs.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..probs.ncols() {
            let p = probs[(i, j)];
            if p > 0.0 {
                acc -= p * p.ln();
            }
        }
    }
    acc / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use ndarray::arr2;

    fn model4() -> Model {
        Model::new(ModelSpec {
            input_dim: 2,
            feature_dims: vec![4],
            num_classes: 4,
            num_domains: 3,
            discriminator_dims: [3, 3],
            seed: 5,
        })
        .unwrap()
    }

    fn batch4() -> Batch {
        Batch::new(
            arr2(&[[0.5, -0.3], [1.2, 0.4], [-0.7, 0.9], [0.1, -1.1]]),
            vec![0, 1, 2, 3],
            1,
        )
        .unwrap()
    }

    /// Quadratic builder 0.5 * a * theta^2 over a single scalar parameter.
    fn scalar_quadratic(a: f64) -> impl Fn(&mut Tape<'_>) -> NodeId {
        move |t: &mut Tape<'_>| {
            let p = t.param_all();
            let q = t.dot(p, p);
            t.scale(q, 0.5 * a)
        }
    }

    fn scalar_params(x: f64) -> ParamVector {
        let layout = std::sync::Arc::new(crate::autograd::Layout::new(&[("w", 1)]));
        ParamVector::new(layout, vec![x]).unwrap()
    }

    #[test]
    fn zero_params_give_ln_c() {
        let model = model4();
        let p = ParamVector::zeros(model.layout().clone());
        let (v, _) = cls_loss(&model, &p, &batch4()).unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-12, "v={v}");

        let (va, _) = adv_loss(&model, &p, &batch4(), 1.0).unwrap();
        assert!((va - 3.0f64.ln()).abs() < 1e-12, "va={va}");
    }

    #[test]
    fn confident_predictions_drive_loss_to_zero() {
        let model = model4();
        let mut p = model.init_params();
        // +30 on every class bias reached by its own label makes each row's
        // true class dominate only if all labels match; use a single-label
        // batch instead.
        let batch = Batch::new(arr2(&[[0.5, -0.3], [1.2, 0.4]]), vec![2, 2], 0).unwrap();
        let (o, _) = p.layout().range("T.0.b").unwrap();
        p.values_mut()[o + 2] += 30.0;
        let (v, _) = cls_loss(&model, &p, &batch).unwrap();
        assert!(v < 1e-9, "v={v}");
    }

    #[test]
    fn grl_zero_freezes_feature_gradient() {
        let model = model4();
        let p = model.init_params();
        let (_, g) = adv_loss(&model, &p, &batch4(), 0.0).unwrap();
        for (o, l) in g.layout().ranges_with_prefix("F.") {
            assert!(g.values()[o..o + l].iter().all(|v| *v == 0.0));
        }
        // Discriminator still learns.
        let d_norm: f64 = g
            .layout()
            .ranges_with_prefix("D.")
            .iter()
            .map(|(o, l)| g.values()[*o..*o + *l].iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!(d_norm > 0.0);
    }

    #[test]
    fn grl_one_negates_feature_gradient() {
        let model = model4();
        let p = model.init_params();
        let batch = batch4();
        let (_, with) = adv_loss(&model, &p, &batch, 1.0).unwrap();
        let without =
            autograd::gradient(adv_builder(&model, &batch, None), &p).unwrap();
        for (o, l) in with.layout().ranges_with_prefix("F.") {
            for k in o..o + l {
                assert!(
                    (with.values()[k] + without.values()[k]).abs() <= 1e-12,
                    "reversal identity broken at {k}"
                );
            }
        }
        for (o, l) in with.layout().ranges_with_prefix("D.") {
            for k in o..o + l {
                assert_eq!(with.values()[k], without.values()[k]);
            }
        }
    }

    #[test]
    fn sam_perturbation_normalizes() {
        let layout = std::sync::Arc::new(crate::autograd::Layout::new(&[("w", 2)]));
        let g = Gradient::new(layout.clone(), vec![3.0, 4.0]).unwrap();
        let eps = sam_perturbation(&g, 0.05);
        assert!((eps.values()[0] - 0.03).abs() < 1e-15);
        assert!((eps.values()[1] - 0.04).abs() < 1e-15);

        let zero = Gradient::zeros(layout);
        let eps = sam_perturbation(&zero, 0.05);
        assert!(eps.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sam_loss_on_scalar_quadratic() {
        let p = scalar_params(1.0);
        let (v, _) = sam_loss_of(scalar_quadratic(1.0), &p, 0.1).unwrap();
        assert!((v - 0.605).abs() < 1e-12, "v={v}");
        // Convexity: perturbed loss dominates the plain loss.
        let plain = autograd::evaluate(scalar_quadratic(1.0), &p).unwrap();
        assert!(v >= plain);
    }

    #[test]
    fn sam_recovers_cls_at_tiny_rho() {
        let model = model4();
        let p = model.init_params();
        let batch = batch4();
        let (plain, g) = cls_loss(&model, &p, &batch).unwrap();
        // |L(theta + eps) - L(theta)| ~ rho * ||g|| to first order.
        let (sam, _) = sam_loss(&model, &p, &batch, 1e-6).unwrap();
        assert!((sam - plain).abs() < 1e-6, "{sam} vs {plain}");
        assert!((sam - plain).abs() <= 2.0 * 1e-6 * g.norm2());
        let (sam, _) = sam_loss(&model, &p, &batch, 1e-9).unwrap();
        assert!((sam - plain).abs() < 1e-8, "{sam} vs {plain}");
    }

    #[test]
    fn surrogate_gap_closed_forms() {
        let p = scalar_params(1.0);
        let h = surrogate_gap_of(scalar_quadratic(1.0), &p, 0.1).unwrap();
        assert!((h - 0.105).abs() < 1e-12, "h={h}");

        // Linear loss a*theta has gap |a|*rho.
        let a = -3.0f64;
        let linear = move |t: &mut Tape<'_>| {
            let p = t.param_all();
            let c = t.constant(1, 1, vec![a]);
            t.dot(p, c)
        };
        let h = surrogate_gap_of(linear, &p, 0.1).unwrap();
        assert!((h - a.abs() * 0.1).abs() < 1e-12, "h={h}");
    }

    #[test]
    fn sagm_closed_form_and_alpha_zero() {
        let p = scalar_params(1.0);
        let (v, _) = sagm_loss_of(scalar_quadratic(1.0), &p, 0.1, 1.0).unwrap();
        assert!((v - 0.005).abs() < 1e-12, "v={v}");

        let (v0, _) = sagm_loss_of(scalar_quadratic(1.0), &p, 0.1, 0.0).unwrap();
        assert!((v0 - (0.5 + 0.605)).abs() < 1e-12, "v0={v0}");
    }

    #[test]
    fn sagm_identical_gradients_identity() {
        // A linear loss has grad L = grad L_p = a everywhere, so
        // sagm = L + L_p - alpha * a^2.
        let a = 2.5f64;
        let linear = move |t: &mut Tape<'_>| {
            let p = t.param_all();
            let c = t.constant(1, 1, vec![a]);
            t.dot(p, c)
        };
        let p = scalar_params(1.0);
        let (rho, alpha) = (0.1, 0.7);
        let (v, _) = sagm_loss_of(linear, &p, rho, alpha).unwrap();
        let plain = a * 1.0;
        let perturbed = a * (1.0 + rho); // eps ascends the gradient
        let expect = plain + perturbed - alpha * a * a;
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }

    #[test]
    fn max_square_uniform_and_onehot() {
        let uniform = Array2::from_elem((3, 5), 0.2);
        assert!((max_square_loss(&uniform) + 0.1).abs() < 1e-15);

        let mut onehot = Array2::zeros((2, 5));
        onehot[(0, 1)] = 1.0;
        onehot[(1, 4)] = 1.0;
        assert_eq!(max_square_loss(&onehot), -0.5);
    }

    #[test]
    fn entropy_uniform_onehot_nonnegative() {
        let uniform = Array2::from_elem((2, 4), 0.25);
        assert!((entropy_loss(&uniform) - 4.0f64.ln()).abs() < 1e-12);

        let mut onehot = Array2::zeros((1, 4));
        onehot[(0, 2)] = 1.0;
        assert_eq!(entropy_loss(&onehot), 0.0);

        let p = arr2(&[[0.7, 0.2, 0.1]]);
        assert!(entropy_loss(&p) >= 0.0);
    }

    #[test]
    fn losses_are_pure() {
        let model = model4();
        let p = model.init_params();
        let batch = batch4();
        let (v1, g1) = cls_loss(&model, &p, &batch).unwrap();
        let (v2, g2) = cls_loss(&model, &p, &batch).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
        let b1: Vec<u64> = g1.values().iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = g2.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }

    #[test]
    fn class_subset_restricts_batch() {
        let batch = Batch::new(
            arr2(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]),
            vec![0, 1, 0],
            0,
        )
        .unwrap();
        let sub = batch.class_subset(0).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.x[(0, 0)], 1.0);
        assert_eq!(sub.x[(1, 0)], 3.0);
        assert!(matches!(
            batch.class_subset(2),
            Err(Error::ClassAbsent { class: 2 })
        ));
    }
}
