//! The FedTAIL objective: gradient coherence between classification and
//! adversarial losses, class-wise sharpness with curvature-aware weights,
//! sharpness-aware conditional alignment against per-domain class
//! distributions, and their composition into one additive total loss.

use serde::{Deserialize, Serialize};

use crate::autograd::{self, Gradient, NodeId, ParamVector, Tape};
use crate::error::{Error, Result};
use crate::losses::{adv_builder, cls_builder, sam_perturbation, Batch};
use crate::model::Model;
use crate::rng::derive_seed;

/// How the target-like class distribution Q_T is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QtMode {
    /// Per-domain class frequencies of the training split.
    Frequency,
    /// Batch-mean prediction of the momentum-averaged global model.
    MomentumTeacher,
}

/// Per-term multipliers for the total objective. A zero disables the term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TermWeights {
    pub cls: f64,
    pub adv: f64,
    pub sharp_er: f64,
    pub classwise: f64,
    pub coh: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        TermWeights {
            cls: 1.0,
            adv: 1.0,
            sharp_er: 1.0,
            classwise: 1.0,
            coh: 1.0,
        }
    }
}

impl TermWeights {
    pub fn only_cls() -> TermWeights {
        TermWeights {
            cls: 1.0,
            adv: 0.0,
            sharp_er: 0.0,
            classwise: 0.0,
            coh: 0.0,
        }
    }
}

/// Hyperparameters of the objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedTailConfig {
    /// SAM radius.
    pub rho: f64,
    /// Coherence coefficient.
    pub alpha: f64,
    /// Gradient-reversal strength.
    pub grl_lambda: f64,
    /// Power-iteration steps per curvature estimate.
    pub power_iters: usize,
    /// Steps between curvature recomputations.
    pub curvature_refresh_period: u64,
    pub qt_mode: QtMode,
    /// EMA coefficient of the global teacher.
    pub teacher_momentum: f64,
    pub term_weights: TermWeights,
    /// Evaluate the class-wise term at theta instead of theta + eps_c.
    pub classwise_plain: bool,
    /// Take the coherence inner product over the whole vector instead of
    /// the shared `F.*` block.
    pub coherence_full_vector: bool,
}

impl Default for FedTailConfig {
    fn default() -> Self {
        FedTailConfig {
            rho: 0.05,
            alpha: 0.1,
            grl_lambda: 1.0,
            power_iters: 10,
            curvature_refresh_period: 10,
            qt_mode: QtMode::Frequency,
            teacher_momentum: 0.99,
            term_weights: TermWeights::default(),
            classwise_plain: false,
            coherence_full_vector: false,
        }
    }
}

impl FedTailConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::Config("rho must be > 0".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if self.grl_lambda < 0.0 {
            return Err(Error::Config("grl_lambda must be >= 0".into()));
        }
        if self.curvature_refresh_period < 1 {
            return Err(Error::Config("curvature_refresh_period must be >= 1".into()));
        }
        if self.power_iters < 1 {
            return Err(Error::Config("power_iters must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.teacher_momentum) {
            return Err(Error::Config("teacher_momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-domain target-like class distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QtDistribution {
    /// One length-C simplex vector per domain, indexed by domain id.
    pub per_domain: Vec<Vec<f64>>,
    pub provenance: QtProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QtProvenance {
    Frequency,
    Teacher,
}

impl QtDistribution {
    pub fn row(&self, domain_id: usize) -> Option<&[f64]> {
        self.per_domain.get(domain_id).map(|v| v.as_slice())
    }
}

/// Class frequencies per domain: `Q_T[domain][c] = count_c / sum(counts)`.
pub fn estimate_qt(per_domain_counts: &[Vec<u64>]) -> Result<QtDistribution> {
    let mut per_domain = Vec::with_capacity(per_domain_counts.len());
    for (d, counts) in per_domain_counts.iter().enumerate() {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyDomain(format!("domain {d}")));
        }
        per_domain.push(counts.iter().map(|c| *c as f64 / total as f64).collect());
    }
    Ok(QtDistribution {
        per_domain,
        provenance: QtProvenance::Frequency,
    })
}

/// Per-class curvature estimates and the weights they induce.
#[derive(Debug, Clone)]
pub struct CurvatureState {
    /// Dominant-magnitude Rayleigh quotient of each class Hessian.
    pub sigma: Vec<f64>,
    /// `gamma_c = 1 / (1 + max(sigma_c, 0))`.
    pub gamma: Vec<f64>,
    /// Final power-iteration vectors, kept for warm starts.
    vecs: Vec<Option<Gradient>>,
    /// Step of the last refresh, if any.
    pub last_refresh: Option<u64>,
}

impl CurvatureState {
    /// Cold start: flat curvature everywhere, gamma = 1.
    pub fn cold(num_classes: usize) -> CurvatureState {
        CurvatureState {
            sigma: vec![0.0; num_classes],
            gamma: vec![1.0; num_classes],
            vecs: vec![None; num_classes],
            last_refresh: None,
        }
    }
}

pub fn gamma_from_sigma(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma.max(0.0))
}

/// Refreshes per-class curvature on a batch. Classes absent from the batch
/// keep their previous sigma and gamma (or the cold-start values).
pub fn curvature_weights(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    power_iters: usize,
    seed: u64,
    prev: Option<&CurvatureState>,
    step: u64,
) -> Result<CurvatureState> {
    let c = model.spec().num_classes;
    let mut state = match prev {
        Some(p) => p.clone(),
        None => CurvatureState::cold(c),
    };
    for class in 0..c {
        let sub = match batch.class_subset(class) {
            Ok(s) => s,
            Err(Error::ClassAbsent { .. }) => continue,
            Err(e) => return Err(e),
        };
        let builder = cls_builder(model, &sub);
        let class_seed = derive_seed(seed, &["curvature", &class.to_string()]);
        let (sigma, vec) = match &state.vecs[class] {
            Some(warm) => autograd::power_iteration(&builder, params, warm, power_iters)?,
            None => {
                let mut rng = crate::rng::stream_rng(class_seed, "power-start");
                let mut start = Gradient::zeros(params.layout().clone());
                for x in start.values_mut() {
                    *x = rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0;
                }
                autograd::power_iteration(&builder, params, &start, power_iters)?
            }
        };
        state.sigma[class] = sigma;
        state.gamma[class] = gamma_from_sigma(sigma);
        state.vecs[class] = Some(vec);
    }
    state.last_refresh = Some(step);
    Ok(state)
}

// ---- gradient coherence ---------------------------------------------------

/// Value, gradient, and the raw inner product of a coherence term.
pub struct Coherence {
    pub value: f64,
    pub grad: Gradient,
    /// `<grad_a, grad_b>` over the masked ranges, before the `-alpha` factor.
    pub inner: f64,
}

/// `-alpha * <grad_a, grad_b>` with gradient
/// `-alpha * (H_a . grad_b + H_b . grad_a)`, both Hessian-vector products by
/// central differences. `mask` restricts the inner product (and the probe
/// directions) to the given ranges; `None` means the full vector.
pub fn coherence_with_grads<F, G>(
    builder_a: F,
    builder_b: G,
    params: &ParamVector,
    alpha: f64,
    mask: Option<&[(usize, usize)]>,
    grad_a: &Gradient,
    grad_b: &Gradient,
) -> Result<Coherence>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
    G: Fn(&mut Tape<'_>) -> NodeId,
{
    let full = [(0usize, params.len())];
    let ranges: &[(usize, usize)] = mask.unwrap_or(&full);
    let inner = grad_a.masked_dot(grad_b, ranges)?;
    let value = -alpha * inner;

    let dir_b = grad_b.masked_to(ranges);
    let dir_a = grad_a.masked_to(ranges);
    let r = autograd::default_hvp_step(params);
    let mut grad = Gradient::zeros(params.layout().clone());
    if dir_b.norm2() > 1e-12 {
        let h_a_gb = autograd::hvp(&builder_a, params, &dir_b, r)?;
        grad.axpy(-alpha, &h_a_gb)?;
    }
    if dir_a.norm2() > 1e-12 {
        let h_b_ga = autograd::hvp(&builder_b, params, &dir_a, r)?;
        grad.axpy(-alpha, &h_b_ga)?;
    }
    Ok(Coherence { value, grad, inner })
}

/// As [`coherence_with_grads`], computing the two gradients itself.
pub fn coherence_core<F, G>(
    builder_a: F,
    builder_b: G,
    params: &ParamVector,
    alpha: f64,
    mask: Option<&[(usize, usize)]>,
) -> Result<Coherence>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
    G: Fn(&mut Tape<'_>) -> NodeId,
{
    let ga = autograd::gradient(&builder_a, params)?;
    let gb = autograd::gradient(&builder_b, params)?;
    coherence_with_grads(builder_a, builder_b, params, alpha, mask, &ga, &gb)
}

/// Coherence between the classification and adversarial losses, restricted
/// to the shared `F.*` block unless `cfg.coherence_full_vector` is set.
pub fn coherence_loss(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    cfg: &FedTailConfig,
) -> Result<Coherence> {
    let f_ranges = params.layout().ranges_with_prefix("F.");
    let mask = if cfg.coherence_full_vector {
        None
    } else {
        Some(f_ranges.as_slice())
    };
    coherence_core(
        cls_builder(model, batch),
        adv_builder(model, batch, Some(cfg.grl_lambda)),
        params,
        cfg.alpha,
        mask,
    )
}

// ---- class-wise sharpness ---------------------------------------------------

/// SAM perturbation of the loss restricted to class `c`:
/// `eps_c = rho * grad(L_c) / ||grad(L_c)||`.
pub fn classwise_perturbation(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    class: usize,
    rho: f64,
) -> Result<Gradient> {
    let sub = batch.class_subset(class)?;
    let grad = autograd::gradient(cls_builder(model, &sub), params)?;
    Ok(sam_perturbation(&grad, rho))
}

/// Per-class sharpness losses and their curvature-weighted combination.
pub struct ClasswiseOut {
    /// `L_c^sharp` per class; 0 for classes absent from the batch.
    pub per_class: Vec<f64>,
    /// `sum_c gamma_c * L_c^sharp`.
    pub weighted_sum: f64,
    /// `sum_c gamma_c * grad L_c(theta + eps_c)`.
    pub grad: Gradient,
}

/// For each class present in the batch, evaluates the class-restricted loss
/// at `theta + eps_c` (or at `theta` when `plain`), weighted by `gamma_c`.
pub fn classwise_sharp_losses(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    rho: f64,
    curvature: &CurvatureState,
    plain: bool,
) -> Result<ClasswiseOut> {
    let c = model.spec().num_classes;
    let mut per_class = vec![0.0; c];
    let mut weighted_sum = 0.0;
    let mut grad = Gradient::zeros(params.layout().clone());
    for class in 0..c {
        let sub = match batch.class_subset(class) {
            Ok(s) => s,
            Err(Error::ClassAbsent { .. }) => continue,
            Err(e) => return Err(e),
        };
        let gamma = curvature.gamma[class];
        let builder = cls_builder(model, &sub);
        let (value, g) = if plain {
            autograd::value_and_grad(&builder, params)?
        } else {
            let g_c = autograd::gradient(&builder, params)?;
            let eps = sam_perturbation(&g_c, rho);
            let perturbed = params.perturbed(&eps)?;
            autograd::value_and_grad(&builder, &perturbed)?
        };
        per_class[class] = value;
        if gamma != 0.0 {
            weighted_sum += gamma * value;
            grad.axpy(gamma, &g)?;
        }
    }
    Ok(ClasswiseOut {
        per_class,
        weighted_sum,
        grad,
    })
}

// ---- sharpness-aware conditional alignment ---------------------------------

/// Clamps zero entries of a reference distribution to 1e-8 and renormalizes.
fn clamp_reference(q: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = q.iter().map(|v| v.max(1e-8)).collect();
    let needs = clamped.iter().zip(q).any(|(c, o)| c != o);
    if needs {
        log::warn!("reference distribution has near-zero entries; clamping to 1e-8");
        let total: f64 = clamped.iter().sum();
        clamped.iter().map(|v| v / total).collect()
    } else {
        clamped
    }
}

/// KL divergence of the batch-mean perturbed prediction from the reference
/// distribution `q`. The SAM perturbation comes from the full-batch
/// classification gradient and is held constant under differentiation.
pub fn sharp_er_loss(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    q: &[f64],
    rho: f64,
) -> Result<(f64, Gradient)> {
    let grad = autograd::gradient(cls_builder(model, batch), params)?;
    let eps = sam_perturbation(&grad, rho);
    let perturbed = params.perturbed(&eps)?;
    sharp_er_at(model, &perturbed, batch, q)
}

/// KL(mean probs at `params` || q) with gradient at `params`. Exposed so the
/// perturbation step can be composed or skipped by callers.
pub fn sharp_er_at(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    q: &[f64],
) -> Result<(f64, Gradient)> {
    let c = model.spec().num_classes;
    if q.len() != c {
        return Err(Error::DimMismatch(format!(
            "reference distribution has {} entries for {c} classes",
            q.len()
        )));
    }
    let q = clamp_reference(q);
    let log_q: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let builder = move |t: &mut Tape<'_>| {
        let logits = model.class_logits_node(t, &batch.x);
        let probs = t.softmax_rows(logits);
        let phat = t.mean_rows(probs);
        let lp = t.log(phat);
        let lq = t.constant(1, log_q.len(), log_q.clone());
        let diff = t.sub(lp, lq);
        t.dot(phat, diff)
    };
    autograd::value_and_grad(builder, params)
}

// ---- the total objective ----------------------------------------------------

/// Per-term values of one total-loss evaluation, plus diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub adv: f64,
    pub sharp_er: f64,
    /// Per-class sharpness losses (zero for classes absent from the batch).
    pub classwise: Vec<f64>,
    /// `sum_c gamma_c * L_c^sharp`, the value the classwise weight applies to.
    pub classwise_sum: f64,
    pub coh: f64,
    pub total: f64,
    /// Raw inner product behind the coherence term.
    pub coherence_dot: f64,
    /// Curvature weights in effect for this evaluation.
    pub gamma: Vec<f64>,
    /// Mean log-probability of the true domain (the sign-flipped adversarial
    /// cross-entropy), reported as a diagnostic only.
    pub adv_loglik: f64,
}

impl LossBreakdown {
    /// Recomputes the weighted sum from the stored terms.
    pub fn weighted_sum(&self, w: &TermWeights) -> f64 {
        let mut acc = 0.0;
        acc += w.cls * self.cls;
        acc += w.adv * self.adv;
        acc += w.sharp_er * self.sharp_er;
        acc += w.classwise * self.classwise_sum;
        acc += w.coh * self.coh;
        acc
    }
}

/// The total objective
/// `w1 L_cls + w2 L_adv + w3 L_sharp-er + w4 sum_c gamma_c L_c + w5 L_coh`.
///
/// Terms with zero weight are neither computed nor folded in, so a
/// single-term configuration returns that term's standalone value and
/// gradient bit-for-bit. `qt_row` is the reference distribution for the
/// batch's domain; it is required when the sharp-er weight is nonzero.
pub fn total_loss(
    model: &Model,
    params: &ParamVector,
    batch: &Batch,
    cfg: &FedTailConfig,
    weights: &TermWeights,
    qt_row: Option<&[f64]>,
    curvature: &CurvatureState,
) -> Result<(LossBreakdown, Gradient)> {
    let need_cls_grad = weights.cls != 0.0 || weights.sharp_er != 0.0 || weights.coh != 0.0;
    let need_adv = weights.adv != 0.0 || weights.coh != 0.0;

    let cls_vg = if need_cls_grad {
        Some(autograd::value_and_grad(cls_builder(model, batch), params)?)
    } else {
        None
    };
    let adv_vg = if need_adv {
        Some(autograd::value_and_grad(
            adv_builder(model, batch, Some(cfg.grl_lambda)),
            params,
        )?)
    } else {
        None
    };

    let mut breakdown = LossBreakdown {
        cls: 0.0,
        adv: 0.0,
        sharp_er: 0.0,
        classwise: vec![0.0; model.spec().num_classes],
        classwise_sum: 0.0,
        coh: 0.0,
        total: 0.0,
        coherence_dot: 0.0,
        gamma: curvature.gamma.clone(),
        adv_loglik: 0.0,
    };

    // (weight, value, gradient) per active term, in a fixed order.
    let mut terms: Vec<(f64, f64, Gradient)> = Vec::with_capacity(5);

    if weights.cls != 0.0 {
        let (v, g) = cls_vg.as_ref().unwrap();
        breakdown.cls = *v;
        terms.push((weights.cls, *v, g.clone()));
    }
    if weights.adv != 0.0 {
        let (v, g) = adv_vg.as_ref().unwrap();
        breakdown.adv = *v;
        breakdown.adv_loglik = -*v;
        terms.push((weights.adv, *v, g.clone()));
    }
    if weights.sharp_er != 0.0 {
        let q = qt_row.ok_or_else(|| {
            Error::Config("sharp_er enabled but no reference distribution for this domain".into())
        })?;
        let (_, cls_grad) = cls_vg.as_ref().unwrap();
        let eps = sam_perturbation(cls_grad, cfg.rho);
        let perturbed = params.perturbed(&eps)?;
        let (v, g) = sharp_er_at(model, &perturbed, batch, q)?;
        breakdown.sharp_er = v;
        terms.push((weights.sharp_er, v, g));
    }
    if weights.classwise != 0.0 {
        let out = classwise_sharp_losses(
            model,
            params,
            batch,
            cfg.rho,
            curvature,
            cfg.classwise_plain,
        )?;
        breakdown.classwise = out.per_class;
        breakdown.classwise_sum = out.weighted_sum;
        terms.push((weights.classwise, out.weighted_sum, out.grad));
    }
    if weights.coh != 0.0 {
        let (_, g_cls) = cls_vg.as_ref().unwrap();
        let (_, g_adv) = adv_vg.as_ref().unwrap();
        let f_ranges = params.layout().ranges_with_prefix("F.");
        let mask = if cfg.coherence_full_vector {
            None
        } else {
            Some(f_ranges.as_slice())
        };
        let coh = coherence_with_grads(
            cls_builder(model, batch),
            adv_builder(model, batch, Some(cfg.grl_lambda)),
            params,
            cfg.alpha,
            mask,
            g_cls,
            g_adv,
        )?;
        breakdown.coh = coh.value;
        breakdown.coherence_dot = coh.inner;
        terms.push((weights.coh, coh.value, coh.grad));
    }

    if terms.is_empty() {
        return Err(Error::Config("no loss terms enabled".into()));
    }

    // Fold from the first term so a single unit-weight term passes through
    // bit-for-bit.
    let mut iter = terms.into_iter();
    let (w0, v0, g0) = iter.next().unwrap();
    let mut total = if w0 == 1.0 { v0 } else { w0 * v0 };
    let mut grad = if w0 == 1.0 { g0 } else { g0.scaled(w0) };
    for (w, v, g) in iter {
        total += w * v;
        grad.axpy(w, &g)?;
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: "total_loss".to_string(),
            value: total,
        });
    }
    breakdown.total = total;
    Ok((breakdown, grad))
}
