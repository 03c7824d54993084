//! FedAvg simulation: per-client local training (one epoch per round),
//! sample-count-weighted aggregation, a momentum-updated global teacher, and
//! leave-one-domain-out orchestration.
//!
//! Clients are independent workers over immutable parameter snapshots; the
//! server is a deterministic reduce in client-id order, so thread count
//! never changes results.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradient, ParamVector};
use crate::config::ExperimentSpec;
use crate::data::{gen_synthetic, split, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::Batch;
use crate::model::{argmax_rows, Model, ModelSpec};
use crate::objective::{
    curvature_weights, estimate_qt, total_loss, CurvatureState, FedTailConfig, LossBreakdown,
    QtDistribution, QtMode, TermWeights,
};
use crate::rng::{derive_seed, stream_rng};

/// SGD hyperparameters. `lr = None` resolves per the objective: 0.001 for
/// baseline terms only, 0.01 once sharpness-aware terms are enabled.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: None,
            momentum: 0.9,
            weight_decay: 0.0005,
            nesterov: false,
            batch_size: 64,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(lr) = self.lr {
            if !(lr > 0.0) {
                return Err(Error::Config("lr must be > 0".into()));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate in effect for a given set of enabled terms.
    pub fn resolve_lr(&self, weights: &TermWeights) -> f64 {
        match self.lr {
            Some(lr) => lr,
            None => {
                let sharpness_aware = weights.sharp_er != 0.0 || weights.classwise != 0.0;
                if sharpness_aware {
                    0.01
                } else {
                    0.001
                }
            }
        }
    }
}

/// SGD with momentum and weight decay; optional Nesterov lookahead.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    nesterov: bool,
    buf: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: &SgdConfig) -> Sgd {
        Sgd {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            nesterov: cfg.nesterov,
            buf: None,
        }
    }

    pub fn reset(&mut self) {
        self.buf = None;
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &Gradient, lr: f64) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        let n = params.len();
        let buf = self.buf.get_or_insert_with(|| vec![0.0; n]);
        if buf.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: buf.len(),
            });
        }
        let pv = params.values_mut();
        for k in 0..n {
            let g = grad.values()[k] + self.weight_decay * pv[k];
            buf[k] = self.momentum * buf[k] + g;
            let d = if self.nesterov {
                g + self.momentum * buf[k]
            } else {
                buf[k]
            };
            pv[k] -= lr * d;
        }
        params.ensure_finite("sgd step")
    }
}

/// One federated client: a single-domain dataset plus local training state.
pub struct ClientState {
    pub client_id: usize,
    /// Domain index within the current split (discriminator label space).
    pub domain_id: usize,
    pub dataset: DomainDataset,
    pub local: ParamVector,
    pub optimizer: Sgd,
    pub curvature: CurvatureState,
    pub seed: u64,
    /// SGD steps taken so far, across rounds.
    pub step: u64,
}

/// Global and teacher parameters plus round bookkeeping.
pub struct ServerState {
    pub global: ParamVector,
    pub teacher: ParamVector,
    pub round: u32,
    pub qt: QtDistribution,
}

impl ServerState {
    /// Teacher starts as a copy of the global model.
    pub fn new(global: ParamVector, qt: QtDistribution) -> ServerState {
        let teacher = global.clone();
        ServerState {
            global,
            teacher,
            round: 0,
            qt,
        }
    }
}

/// How client updates are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    SampleCount,
    Uniform,
}

/// Coordinate-wise weighted mean of client parameters, summed in the order
/// given (callers pass client-id order). A single update is returned
/// unchanged, bit-for-bit.
pub fn fedavg(updates: &[(ParamVector, usize)], weighting: Weighting) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::EmptyUpdateSet)?;
    for (p, count) in updates {
        if p.layout() != first.0.layout() {
            return Err(Error::LayoutMismatch(
                "client updates have different layouts".into(),
            ));
        }
        if *count == 0 {
            return Err(Error::Config("fedavg requires positive sample counts".into()));
        }
    }
    if updates.len() == 1 {
        return Ok(first.0.clone());
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    let mut out = vec![0.0; first.0.len()];
    for (p, count) in updates {
        let w = match weighting {
            Weighting::SampleCount => *count as f64 / total as f64,
            Weighting::Uniform => 1.0 / updates.len() as f64,
        };
        for (o, v) in out.iter_mut().zip(p.values()) {
            *o += w * v;
        }
    }
    ParamVector::new(first.0.layout().clone(), out)
}

/// EMA update: `teacher <- m * teacher + (1 - m) * global`.
pub fn teacher_update(teacher: &mut ParamVector, global: &ParamVector, m: f64) -> Result<()> {
    if teacher.len() != global.len() {
        return Err(Error::LengthMismatch {
            expected: teacher.len(),
            got: global.len(),
        });
    }
    for (t, g) in teacher.values_mut().iter_mut().zip(global.values()) {
        *t = m * *t + (1.0 - m) * g;
    }
    Ok(())
}

/// Everything a client needs for one local epoch.
pub struct TrainContext<'a> {
    pub model: &'a Model,
    pub cfg: &'a FedTailConfig,
    pub weights: &'a TermWeights,
    pub sgd: &'a SgdConfig,
    pub lr: f64,
    /// Frequency-mode reference distribution for this client's domain.
    pub qt_row: Option<&'a [f64]>,
    /// Teacher parameters, for momentum-mode references.
    pub teacher: Option<&'a ParamVector>,
    pub round: u32,
}

/// Per-client result of one local epoch.
#[derive(Debug, Clone)]
pub struct ClientFragment {
    /// Mean per-term losses over this epoch's batches.
    pub losses: LossBreakdown,
    pub train_samples: usize,
}

/// Copies the global parameters, runs one seeded-shuffled pass over the
/// client's training split with SGD on the total objective, and returns the
/// per-term loss means. The updated parameters stay in `client.local`.
pub fn local_train_epoch(
    client: &mut ClientState,
    global: &ParamVector,
    ctx: &TrainContext<'_>,
) -> Result<ClientFragment> {
    client.local = global.clone();
    let mut order = client.dataset.train_idx.clone();
    if order.is_empty() {
        return Err(Error::EmptyDomain(client.dataset.name.clone()));
    }
    let mut rng = stream_rng(
        derive_seed(client.seed, &["round", &ctx.round.to_string()]),
        "shuffle",
    );
    order.shuffle(&mut rng);

    let mut breakdowns = Vec::new();
    for chunk in order.chunks(ctx.sgd.batch_size) {
        let (x, y) = client.dataset.subset(chunk);
        let batch = Batch::new(x, y, client.domain_id)?;

        if ctx.weights.classwise != 0.0 && client.step % ctx.cfg.curvature_refresh_period == 0 {
            let seed = derive_seed(client.seed, &["curvature", &client.step.to_string()]);
            client.curvature = curvature_weights(
                ctx.model,
                &client.local,
                &batch,
                ctx.cfg.power_iters,
                seed,
                Some(&client.curvature),
                client.step,
            )?;
        }

        // Momentum-mode reference: the teacher's batch-mean prediction.
        let teacher_row: Option<Vec<f64>> = match (ctx.cfg.qt_mode, ctx.teacher) {
            (QtMode::MomentumTeacher, Some(teacher)) if ctx.weights.sharp_er != 0.0 => {
                let probs = ctx.model.forward_probs(teacher, &batch.x)?;
                Some(column_means(&probs))
            }
            _ => None,
        };
        let qt_row: Option<&[f64]> = match &teacher_row {
            Some(r) => Some(r.as_slice()),
            None => ctx.qt_row,
        };

        let (breakdown, grad) = total_loss(
            ctx.model,
            &client.local,
            &batch,
            ctx.cfg,
            ctx.weights,
            qt_row,
            &client.curvature,
        )?;
        client
            .optimizer
            .step(&mut client.local, &grad, ctx.lr)?;
        client.step += 1;
        breakdowns.push(breakdown);
    }
    Ok(ClientFragment {
        losses: mean_breakdowns(&breakdowns),
        train_samples: order.len(),
    })
}

fn column_means(m: &Array2<f64>) -> Vec<f64> {
    let (n, c) = (m.nrows(), m.ncols());
    let mut out = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            out[j] += m[(i, j)];
        }
    }
    for v in &mut out {
        *v /= n as f64;
    }
    out
}

fn mean_breakdowns(items: &[LossBreakdown]) -> LossBreakdown {
    assert!(!items.is_empty());
    let n = items.len() as f64;
    let c = items[0].classwise.len();
    let mut out = LossBreakdown {
        cls: 0.0,
        adv: 0.0,
        sharp_er: 0.0,
        classwise: vec![0.0; c],
        classwise_sum: 0.0,
        coh: 0.0,
        total: 0.0,
        coherence_dot: 0.0,
        gamma: vec![0.0; c],
        adv_loglik: 0.0,
    };
    for b in items {
        out.cls += b.cls;
        out.adv += b.adv;
        out.sharp_er += b.sharp_er;
        out.classwise_sum += b.classwise_sum;
        out.coh += b.coh;
        out.total += b.total;
        out.coherence_dot += b.coherence_dot;
        out.adv_loglik += b.adv_loglik;
        for j in 0..c {
            out.classwise[j] += b.classwise[j];
            out.gamma[j] += b.gamma[j];
        }
    }
    out.cls /= n;
    out.adv /= n;
    out.sharp_er /= n;
    out.classwise_sum /= n;
    out.coh /= n;
    out.total /= n;
    out.coherence_dot /= n;
    out.adv_loglik /= n;
    for j in 0..c {
        out.classwise[j] /= n;
        out.gamma[j] /= n;
    }
    out
}

/// Accuracy of a parameter vector on labeled data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub overall: f64,
    /// Accuracy per class; classes without samples report 0 and are
    /// excluded from the macro mean.
    pub per_class: Vec<f64>,
    pub macro_accuracy: f64,
    pub samples: usize,
}

pub fn evaluate_dataset(
    model: &Model,
    params: &ParamVector,
    x: &Array2<f64>,
    y: &[usize],
) -> Result<EvalResult> {
    let c = model.spec().num_classes;
    let probs = model.forward_probs(params, x)?;
    let pred = argmax_rows(&probs);
    let mut correct = vec![0usize; c];
    let mut count = vec![0usize; c];
    let mut hits = 0;
    for (p, t) in pred.iter().zip(y) {
        count[*t] += 1;
        if p == t {
            correct[*t] += 1;
            hits += 1;
        }
    }
    let per_class: Vec<f64> = (0..c)
        .map(|j| {
            if count[j] > 0 {
                correct[j] as f64 / count[j] as f64
            } else {
                0.0
            }
        })
        .collect();
    let present = count.iter().filter(|n| **n > 0).count();
    let macro_accuracy = if present > 0 {
        (0..c)
            .filter(|j| count[*j] > 0)
            .map(|j| per_class[j])
            .sum::<f64>()
            / present as f64
    } else {
        0.0
    };
    Ok(EvalResult {
        overall: hits as f64 / y.len().max(1) as f64,
        per_class,
        macro_accuracy,
        samples: y.len(),
    })
}

/// Per-round metrics for one (held-out domain, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    /// Mean per-term training losses across clients.
    pub losses: LossBreakdown,
    pub heldout_accuracy: f64,
    pub heldout_macro_accuracy: f64,
    pub heldout_per_class: Vec<f64>,
    /// Sample-weighted accuracy over the clients' validation splits.
    pub val_accuracy: f64,
    pub clients_ok: usize,
    #[serde(skip)]
    pub wall_ms: u128,
}

/// Shared inputs of one round.
pub struct RoundContext<'a> {
    pub model: &'a Model,
    pub cfg: &'a FedTailConfig,
    pub weights: &'a TermWeights,
    pub sgd: &'a SgdConfig,
    pub heldout: &'a DomainDataset,
    pub aggregation: Weighting,
}

/// Broadcast, parallel local epochs, aggregation, teacher update, and
/// evaluation. Clients that diverge are skipped for the round (their
/// optimizer state resets); a round with zero surviving clients aborts.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    ctx: &RoundContext<'_>,
) -> Result<RoundReport> {
    let start = std::time::Instant::now();
    let round = server.round;
    let lr = ctx.sgd.resolve_lr(ctx.weights);
    let global = &server.global;
    let teacher = &server.teacher;
    let qt = &server.qt;

    let results: Vec<Result<ClientFragment>> = clients
        .par_iter_mut()
        .map(|client| {
            let tctx = TrainContext {
                model: ctx.model,
                cfg: ctx.cfg,
                weights: ctx.weights,
                sgd: ctx.sgd,
                lr,
                qt_row: qt.row(client.domain_id),
                teacher: Some(teacher),
                round,
            };
            local_train_epoch(client, global, &tctx)
        })
        .collect();

    let mut updates: Vec<(ParamVector, usize)> = Vec::new();
    let mut fragments: Vec<LossBreakdown> = Vec::new();
    for (client, res) in clients.iter_mut().zip(results) {
        match res {
            Ok(frag) => {
                updates.push((client.local.clone(), frag.train_samples));
                fragments.push(frag.losses);
            }
            Err(e) if e.is_numerical() => {
                log::warn!(
                    "client {} diverged in round {round}: {e}; skipping it this round",
                    client.client_id
                );
                client.optimizer.reset();
            }
            Err(e) => return Err(e),
        }
    }
    if updates.is_empty() {
        return Err(Error::NonFiniteLoss {
            context: format!("round {round}: every client diverged"),
            value: f64::NAN,
        });
    }

    server.global = fedavg(&updates, ctx.aggregation)?;
    server.global.ensure_finite("fedavg")?;
    let m = ctx.cfg.teacher_momentum;
    let global = server.global.clone();
    teacher_update(&mut server.teacher, &global, m)?;
    server.round += 1;

    let heldout_eval = evaluate_dataset(
        ctx.model,
        &server.global,
        &ctx.heldout.x,
        &ctx.heldout.y,
    )?;
    let mut val_hits = 0.0;
    let mut val_total = 0usize;
    for client in clients.iter() {
        if client.dataset.val_idx.is_empty() {
            continue;
        }
        let (vx, vy) = client.dataset.subset(&client.dataset.val_idx);
        let ev = evaluate_dataset(ctx.model, &server.global, &vx, &vy)?;
        val_hits += ev.overall * ev.samples as f64;
        val_total += ev.samples;
    }

    Ok(RoundReport {
        round,
        losses: mean_breakdowns(&fragments),
        heldout_accuracy: heldout_eval.overall,
        heldout_macro_accuracy: heldout_eval.macro_accuracy,
        heldout_per_class: heldout_eval.per_class,
        val_accuracy: if val_total > 0 {
            val_hits / val_total as f64
        } else {
            0.0
        },
        clients_ok: updates.len(),
        wall_ms: start.elapsed().as_millis(),
    })
}

/// All rounds of one (held-out domain, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub held_out: String,
    pub held_out_index: usize,
    pub seed: u64,
    pub reports: Vec<RoundReport>,
}

impl RunRecord {
    pub fn final_report(&self) -> &RoundReport {
        self.reports.last().expect("runs have at least one round")
    }
}

/// Called after every round with
/// (held-out name, seed, round, global, teacher).
pub type RoundHook<'a> =
    &'a (dyn Fn(&str, u64, u32, &ParamVector, &ParamVector) -> Result<()> + Sync);

/// Builds the model and datasets for one held-out split under one seed.
/// Domain ids are re-indexed over the training domains so the discriminator
/// label space matches what it sees.
pub struct SplitSetup {
    pub model: Model,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub heldout: DomainDataset,
}

pub fn build_split(spec: &ExperimentSpec, held_out_index: usize, run_seed: u64) -> Result<SplitSetup> {
    let mut data_spec = spec.data.clone();
    data_spec.seed = derive_seed(run_seed, &["data"]);
    let mut datasets = gen_synthetic(&data_spec)?;
    let split_seed = derive_seed(run_seed, &["split"]);
    for ds in &mut datasets {
        split(ds, 0.9, split_seed);
    }
    if held_out_index >= datasets.len() {
        return Err(Error::Config(format!(
            "held-out index {held_out_index} out of range for {} domains",
            datasets.len()
        )));
    }
    let heldout = datasets.remove(held_out_index);
    let train_domains = datasets; // original ids were re-numbered by removal order below

    let model_spec = ModelSpec {
        input_dim: spec.data.feature_dim,
        feature_dims: spec.model.feature_dims.clone(),
        num_classes: spec.data.num_classes,
        num_domains: train_domains.len(),
        discriminator_dims: spec.model.discriminator_dims,
        seed: derive_seed(run_seed, &["init"]),
    };
    let model = Model::new(model_spec)?;
    let global = model.init_params();

    // Frequency-mode references from training-split class counts; this
    // shares per-client label counts (metadata, not raw samples) with the
    // server.
    let counts: Vec<Vec<u64>> = train_domains
        .iter()
        .map(|d| d.train_class_counts())
        .collect();
    let qt = estimate_qt(&counts)?;

    let clients: Vec<ClientState> = train_domains
        .into_iter()
        .enumerate()
        .map(|(local_id, mut ds)| {
            ds.domain_id = local_id;
            ClientState {
                client_id: local_id,
                domain_id: local_id,
                dataset: ds,
                local: global.clone(),
                optimizer: Sgd::new(&spec.optim),
                curvature: CurvatureState::cold(spec.data.num_classes),
                seed: derive_seed(run_seed, &["client", &local_id.to_string()]),
                step: 0,
            }
        })
        .collect();

    let server = ServerState::new(global, qt);
    Ok(SplitSetup {
        model,
        server,
        clients,
        heldout,
    })
}

/// Runs one (held-out, seed) cell: R rounds over the split.
pub fn run_single(
    spec: &ExperimentSpec,
    held_out_index: usize,
    seed_index: u32,
    hook: Option<RoundHook<'_>>,
) -> Result<RunRecord> {
    let run_seed = spec.seed.wrapping_add(seed_index as u64);
    let weights = spec.effective_weights();
    let mut setup = build_split(spec, held_out_index, run_seed)?;
    let ctx = RoundContext {
        model: &setup.model,
        cfg: &spec.fedtail,
        weights: &weights,
        sgd: &spec.optim,
        heldout: &setup.heldout,
        aggregation: spec.aggregation,
    };
    let mut reports = Vec::with_capacity(spec.rounds as usize);
    for _ in 0..spec.rounds {
        let report = run_round(&mut setup.server, &mut setup.clients, &ctx)?;
        if let Some(hook) = hook {
            hook(
                &setup.heldout.name,
                run_seed,
                report.round,
                &setup.server.global,
                &setup.server.teacher,
            )?;
        }
        reports.push(report);
    }
    Ok(RunRecord {
        held_out: setup.heldout.name.clone(),
        held_out_index,
        seed: run_seed,
        reports,
    })
}

/// Leave-one-domain-out protocol: for every held-out domain (or the one
/// named in the spec) and every seed, train for R rounds. Runs execute in
/// parallel; the output order is (held-out index, seed index).
pub fn run_experiment(spec: &ExperimentSpec, hook: Option<RoundHook<'_>>) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let held_out_indices = spec.held_out_indices()?;
    let mut cells = Vec::new();
    for &h in &held_out_indices {
        for s in 0..spec.num_seeds {
            cells.push((h, s));
        }
    }
    let results: Vec<Result<RunRecord>> = cells
        .par_iter()
        .map(|(h, s)| run_single(spec, *h, *s, hook))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn params_from(values: &[f64]) -> ParamVector {
        let layout = Arc::new(crate::autograd::Layout::new(&[("w", values.len())]));
        ParamVector::new(layout, values.to_vec()).unwrap()
    }

    #[test]
    fn fedavg_single_client_identity() {
        let p = params_from(&[1.5, -2.5, 0.0]);
        let out = fedavg(&[(p.clone(), 10)], Weighting::SampleCount).unwrap();
        let a: Vec<u64> = p.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = out.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn fedavg_equal_weight_midpoint() {
        let a = params_from(&[1.0, 1.0]);
        let b = params_from(&[3.0, 5.0]);
        let out = fedavg(&[(a, 1), (b, 1)], Weighting::SampleCount).unwrap();
        assert_eq!(out.values(), &[2.0, 3.0]);
    }

    #[test]
    fn fedavg_count_weighted_mean() {
        let a = params_from(&[1.0, 1.0]);
        let b = params_from(&[3.0, 5.0]);
        let out = fedavg(&[(a, 3), (b, 1)], Weighting::SampleCount).unwrap();
        assert_eq!(out.values(), &[1.5, 2.0]);
    }

    #[test]
    fn fedavg_uniform_ignores_counts() {
        let a = params_from(&[1.0, 1.0]);
        let b = params_from(&[3.0, 5.0]);
        let out = fedavg(&[(a, 30), (b, 1)], Weighting::Uniform).unwrap();
        assert_eq!(out.values(), &[2.0, 3.0]);
    }

    #[test]
    fn fedavg_rejects_empty_and_mismatched() {
        assert!(matches!(
            fedavg(&[], Weighting::SampleCount),
            Err(Error::EmptyUpdateSet)
        ));
        let a = params_from(&[1.0]);
        let b = params_from(&[1.0, 2.0]);
        assert!(matches!(
            fedavg(&[(a, 1), (b, 1)], Weighting::SampleCount),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn fedavg_stays_in_envelope() {
        let a = params_from(&[1.0, -4.0, 0.5]);
        let b = params_from(&[3.0, -1.0, 0.25]);
        let c = params_from(&[2.0, -2.0, 0.75]);
        let out = fedavg(&[(a, 2), (b, 5), (c, 3)], Weighting::SampleCount).unwrap();
        let lo = [1.0, -4.0, 0.25];
        let hi = [3.0, -1.0, 0.75];
        for (k, v) in out.values().iter().enumerate() {
            assert!(*v >= lo[k] - 1e-12 && *v <= hi[k] + 1e-12);
        }
    }

    #[test]
    fn teacher_update_endpoints_and_midpoint() {
        let global = params_from(&[2.0, 4.0]);
        let mut teacher = params_from(&[0.0, 8.0]);
        teacher_update(&mut teacher, &global, 0.5).unwrap();
        assert_eq!(teacher.values(), &[1.0, 6.0]);

        let mut teacher = params_from(&[0.0, 8.0]);
        teacher_update(&mut teacher, &global, 0.0).unwrap();
        assert_eq!(teacher.values(), global.values());

        let mut teacher = params_from(&[0.0, 8.0]);
        teacher_update(&mut teacher, &global, 1.0).unwrap();
        assert_eq!(teacher.values(), &[0.0, 8.0]);
    }

    #[test]
    fn sgd_plain_step_matches_hand_computation() {
        let cfg = SgdConfig {
            lr: Some(0.1),
            momentum: 0.0,
            weight_decay: 0.0,
            nesterov: false,
            batch_size: 4,
        };
        let mut sgd = Sgd::new(&cfg);
        let mut p = params_from(&[1.0, -2.0]);
        let g = Gradient::new(p.layout().clone(), vec![0.5, -1.0]).unwrap();
        sgd.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.values(), &[1.0 - 0.1 * 0.5, -2.0 + 0.1]);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let cfg = SgdConfig {
            lr: Some(1.0),
            momentum: 0.5,
            weight_decay: 0.0,
            nesterov: false,
            batch_size: 4,
        };
        let mut sgd = Sgd::new(&cfg);
        let mut p = params_from(&[0.0]);
        let g = Gradient::new(p.layout().clone(), vec![1.0]).unwrap();
        sgd.step(&mut p, &g, 1.0).unwrap(); // buf=1, p=-1
        sgd.step(&mut p, &g, 1.0).unwrap(); // buf=1.5, p=-2.5
        assert_eq!(p.values(), &[-2.5]);
    }

    #[test]
    fn lr_resolution_follows_enabled_terms() {
        let cfg = SgdConfig::default();
        assert_eq!(cfg.resolve_lr(&TermWeights::only_cls()), 0.001);
        assert_eq!(cfg.resolve_lr(&TermWeights::default()), 0.01);
        let explicit = SgdConfig {
            lr: Some(0.5),
            ..SgdConfig::default()
        };
        assert_eq!(explicit.resolve_lr(&TermWeights::default()), 0.5);
    }
}
