//! Shared oracles for the integration suites: finite-difference gradients,
//! dense finite-difference Hessians, a graph-free forward pass, and seeded
//! model/batch generators. Everything here is independent of the library's
//! backward sweep, which is what these oracles exist to check.

#![allow(dead_code)]

use fedtail::autograd::{self, NodeId, ParamVector, Tape};
use fedtail::losses::Batch;
use fedtail::model::{Model, ModelSpec};
use fedtail::rng::stream_rng;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;

/// Central finite differences of the builder's value, coordinate by
/// coordinate.
pub fn fd_gradient<F>(builder: F, params: &ParamVector, h: f64) -> Vec<f64>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let n = params.len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut plus = params.clone();
        plus.values_mut()[k] += h;
        let mut minus = params.clone();
        minus.values_mut()[k] -= h;
        let fp = autograd::evaluate(&builder, &plus).expect("finite loss");
        let fm = autograd::evaluate(&builder, &minus).expect("finite loss");
        out[k] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Dense Hessian by central finite differences of gradients, column by
/// column, then symmetrized.
pub fn dense_hessian<F>(builder: F, params: &ParamVector, h: f64) -> DMatrix<f64>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let n = params.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = params.clone();
        plus.values_mut()[j] += h;
        let mut minus = params.clone();
        minus.values_mut()[j] -= h;
        let gp = autograd::gradient(&builder, &plus).expect("finite gradient");
        let gm = autograd::gradient(&builder, &minus).expect("finite gradient");
        for i in 0..n {
            m[(i, j)] = (gp.values()[i] - gm.values()[i]) / (2.0 * h);
        }
    }
    // Symmetrize away finite-difference asymmetry.
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Largest-magnitude eigenvalue of a symmetric matrix.
pub fn dominant_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let mut best = 0.0f64;
    for v in eig.eigenvalues.iter() {
        if v.abs() > best.abs() {
            best = *v;
        }
    }
    best
}

fn matvec(x: &[Vec<f64>], w: &[f64], b: &[f64], fan_in: usize, fan_out: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..fan_out)
                .map(|j| {
                    let mut acc = b[j];
                    for k in 0..fan_in {
                        acc += row[k] * w[k * fan_out + j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Graph-free forward pass: class logits, domain logits, and the smallest
/// |pre-activation| across every ReLU in both paths (the margin that keeps
/// finite differences away from kinks).
pub struct OracleForward {
    pub class_logits: Vec<Vec<f64>>,
    pub domain_logits: Vec<Vec<f64>>,
    pub min_relu_margin: f64,
}

pub fn oracle_forward(model: &Model, params: &ParamVector, x: &Array2<f64>) -> OracleForward {
    let spec = model.spec();
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect())
        .collect();
    let mut margin = f64::INFINITY;
    let mut h = rows;
    let mut prev = spec.input_dim;
    for (i, &w) in spec.feature_dims.iter().enumerate() {
        let wv = params.slice(&format!("F.{i}.w")).unwrap();
        let bv = params.slice(&format!("F.{i}.b")).unwrap();
        let z = matvec(&h, wv, bv, prev, w);
        for row in &z {
            for v in row {
                margin = margin.min(v.abs());
            }
        }
        h = z
            .into_iter()
            .map(|row| row.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        prev = w;
    }
    let features = h.clone();
    let wv = params.slice("T.0.w").unwrap();
    let bv = params.slice("T.0.b").unwrap();
    let class_logits = matvec(&h, wv, bv, prev, spec.num_classes);

    let mut cur = features;
    let mut fan_in = prev;
    let [g1, g2] = spec.discriminator_dims;
    for (name, fan_out) in [("D.0", g1), ("D.1", g2)] {
        let wv = params.slice(&format!("{name}.w")).unwrap();
        let bv = params.slice(&format!("{name}.b")).unwrap();
        let z = matvec(&cur, wv, bv, fan_in, fan_out);
        for row in &z {
            for v in row {
                margin = margin.min(v.abs());
            }
        }
        cur = z
            .into_iter()
            .map(|row| row.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        fan_in = fan_out;
    }
    let wv = params.slice("D.2.w").unwrap();
    let bv = params.slice("D.2.b").unwrap();
    let domain_logits = matvec(&cur, wv, bv, fan_in, spec.num_domains);

    OracleForward {
        class_logits,
        domain_logits,
        min_relu_margin: margin,
    }
}

/// Mean cross-entropy from logits, computed independently of the tape.
pub fn oracle_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        acc += -(row[y] - m - z.ln());
    }
    acc / labels.len() as f64
}

/// A seeded small model with a random batch. `margin_floor` rejects draws
/// whose ReLU pre-activations sit too close to a kink for finite
/// differences; returns None on rejection so callers can advance the seed.
pub fn seeded_case(
    seed: u64,
    spec: ModelSpec,
    batch_size: usize,
    input_scale: f64,
    margin_floor: f64,
) -> Option<(Model, ParamVector, Batch)> {
    let spec = ModelSpec { seed, ..spec };
    let model = Model::new(spec).unwrap();
    let params = model.init_params();
    let d = model.spec().input_dim;
    let c = model.spec().num_classes;
    let mut rng = stream_rng(seed, "case-batch");
    let mut x = Array2::zeros((batch_size, d));
    for i in 0..batch_size {
        for j in 0..d {
            x[(i, j)] = input_scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
    let y: Vec<usize> = (0..batch_size).map(|i| i % c).collect();
    let forward = oracle_forward(&model, &params, &x);
    if forward.min_relu_margin < margin_floor {
        return None;
    }
    let batch = Batch::new(x, y, 0).unwrap();
    Some((model, params, batch))
}

/// Draws `count` accepted cases by scanning seeds from `first_seed`.
pub fn seeded_cases(
    first_seed: u64,
    count: usize,
    spec: ModelSpec,
    batch_size: usize,
    input_scale: f64,
    margin_floor: f64,
) -> Vec<(u64, Model, ParamVector, Batch)> {
    let mut out = Vec::with_capacity(count);
    let mut seed = first_seed;
    while out.len() < count {
        if let Some((m, p, b)) = seeded_case(seed, spec.clone(), batch_size, input_scale, margin_floor)
        {
            out.push((seed, m, p, b));
        }
        seed += 1;
    }
    out
}
