//! The three networks: feature extractor F, classifier head T, and domain
//! discriminator D, all realized as small ReLU MLPs over one flat
//! `ParamVector` with sub-ranges `F.*`, `T.*`, `D.*`.
//!
//! Adversarial training uses a gradient-reversal layer between F and D:
//! identity in the forward pass, gradient scaled by `-lambda` on the way
//! back into `F.*`, so the whole objective stays a single additive loss.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Layout, NodeId, ParamVector, Tape};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Architecture of the three networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Hidden widths of the feature extractor; the last entry is the
    /// embedding width.
    pub feature_dims: Vec<usize>,
    pub num_classes: usize,
    pub num_domains: usize,
    /// Exactly two hidden layers for the domain discriminator.
    pub discriminator_dims: [usize; 2],
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            input_dim: 8,
            feature_dims: vec![32, 16],
            num_classes: 6,
            num_domains: 4,
            discriminator_dims: [16, 16],
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if self.feature_dims.is_empty() || self.feature_dims.iter().any(|d| *d < 1) {
            return Err(Error::Config("feature_dims must be nonempty, all >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.num_domains < 2 {
            return Err(Error::Config(
                "num_domains must be >= 2 (domain loss undefined otherwise)".into(),
            ));
        }
        if self.discriminator_dims.iter().any(|d| *d < 1) {
            return Err(Error::Config("discriminator_dims must be >= 1".into()));
        }
        Ok(())
    }

    /// Embedding width produced by F.
    pub fn embedding_dim(&self) -> usize {
        *self.feature_dims.last().unwrap()
    }
}

/// Layer shapes derived from a spec: (name, in, out) for each linear layer.
fn layer_plan(spec: &ModelSpec) -> Vec<(String, usize, usize)> {
    let mut plan = Vec::new();
    let mut prev = spec.input_dim;
    for (i, &w) in spec.feature_dims.iter().enumerate() {
        plan.push((format!("F.{i}"), prev, w));
        prev = w;
    }
    plan.push(("T.0".to_string(), prev, spec.num_classes));
    let emb = spec.embedding_dim();
    let [g1, g2] = spec.discriminator_dims;
    plan.push(("D.0".to_string(), emb, g1));
    plan.push(("D.1".to_string(), g1, g2));
    plan.push(("D.2".to_string(), g2, spec.num_domains));
    plan
}

/// A validated spec plus the parameter layout it induces.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layout: Arc<Layout>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        let mut parts: Vec<(String, usize)> = Vec::new();
        for (name, fan_in, fan_out) in layer_plan(&spec) {
            parts.push((format!("{name}.w"), fan_in * fan_out));
            parts.push((format!("{name}.b"), fan_out));
        }
        let refs: Vec<(&str, usize)> = parts.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        let layout = Arc::new(Layout::new(&refs));
        Ok(Model { spec, layout })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    /// Glorot-uniform weights from named ChaCha streams, zero biases.
    /// Bit-identical for identical (spec, seed).
    pub fn init_params(&self) -> ParamVector {
        let mut values = vec![0.0; self.layout.len()];
        for (name, fan_in, fan_out) in layer_plan(&self.spec) {
            let wname = format!("{name}.w");
            let (offset, len) = self.layout.range(&wname).unwrap();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = stream_rng(self.spec.seed, &wname);
            for v in &mut values[offset..offset + len] {
                *v = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        ParamVector::new(self.layout.clone(), values).expect("layout covers values")
    }

    fn check_batch(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::DimMismatch("empty batch".into()));
        }
        if x.ncols() != self.spec.input_dim {
            return Err(Error::DimMismatch(format!(
                "batch has {} features, model expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::LayoutMismatch(
                "parameter vector does not match this model".into(),
            ));
        }
        Ok(())
    }

    // ---- tape builders -------------------------------------------------

    /// Feature extractor output node (N x embedding_dim).
    pub fn features_node(&self, t: &mut Tape<'_>, x: &Array2<f64>) -> NodeId {
        let mut h = t.constant_matrix(x);
        let mut prev = self.spec.input_dim;
        for (i, &w) in self.spec.feature_dims.iter().enumerate() {
            let wid = t.param(&format!("F.{i}.w"), prev, w);
            let bid = t.param(&format!("F.{i}.b"), 1, w);
            let z = t.matmul(h, wid);
            let z = t.add_row(z, bid);
            h = t.relu(z);
            prev = w;
        }
        h
    }

    /// Class logits node (N x C).
    pub fn class_logits_node(&self, t: &mut Tape<'_>, x: &Array2<f64>) -> NodeId {
        let h = self.features_node(t, x);
        let w = t.param("T.0.w", self.spec.embedding_dim(), self.spec.num_classes);
        let b = t.param("T.0.b", 1, self.spec.num_classes);
        let z = t.matmul(h, w);
        t.add_row(z, b)
    }

    /// Domain logits node (N x K). With `grl_lambda = Some(l)` a
    /// gradient-reversal node is inserted between F and D; `None` omits it.
    pub fn domain_logits_node(
        &self,
        t: &mut Tape<'_>,
        x: &Array2<f64>,
        grl_lambda: Option<f64>,
    ) -> NodeId {
        let feat = self.features_node(t, x);
        let mut h = match grl_lambda {
            Some(l) => t.grad_reverse(feat, l),
            None => feat,
        };
        let emb = self.spec.embedding_dim();
        let [g1, g2] = self.spec.discriminator_dims;
        let plan = [("D.0", emb, g1), ("D.1", g1, g2)];
        for (name, fan_in, fan_out) in plan {
            let w = t.param(&format!("{name}.w"), fan_in, fan_out);
            let b = t.param(&format!("{name}.b"), 1, fan_out);
            let z = t.matmul(h, w);
            let z = t.add_row(z, b);
            h = t.relu(z);
        }
        let w = t.param("D.2.w", g2, self.spec.num_domains);
        let b = t.param("D.2.b", 1, self.spec.num_domains);
        let z = t.matmul(h, w);
        t.add_row(z, b)
    }

    // ---- plain forward passes (no tape) --------------------------------

    fn linear_relu(x: &Array2<f64>, w: &[f64], b: &[f64], fan_in: usize, fan_out: usize, relu: bool) -> Array2<f64> {
        let n = x.nrows();
        let mut out = Array2::zeros((n, fan_out));
        for i in 0..n {
            for j in 0..fan_out {
                let mut acc = b[j];
                for k in 0..fan_in {
                    acc += x[(i, k)] * w[k * fan_out + j];
                }
                out[(i, j)] = if relu { acc.max(0.0) } else { acc };
            }
        }
        out
    }

    /// F(x): embedding matrix (N x embedding_dim), no tape.
    pub fn features(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_batch(x)?;
        self.check_params(params)?;
        let mut h = x.clone();
        let mut prev = self.spec.input_dim;
        for (i, &w) in self.spec.feature_dims.iter().enumerate() {
            let wv = params.slice(&format!("F.{i}.w")).unwrap();
            let bv = params.slice(&format!("F.{i}.b")).unwrap();
            h = Self::linear_relu(&h, wv, bv, prev, w, true);
            prev = w;
        }
        Ok(h)
    }

    /// Class probabilities (N x C): softmax over classifier logits.
    pub fn forward_probs(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
        let h = self.features(params, x)?;
        let wv = params.slice("T.0.w").unwrap();
        let bv = params.slice("T.0.b").unwrap();
        let logits = Self::linear_relu(
            &h,
            wv,
            bv,
            self.spec.embedding_dim(),
            self.spec.num_classes,
            false,
        );
        Ok(softmax_rows(&logits))
    }

    /// Domain probabilities (N x K). The forward value is independent of the
    /// reversal coefficient; `grl_lambda` only matters on tape.
    pub fn forward_domain(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
        let h = self.features(params, x)?;
        let [g1, g2] = self.spec.discriminator_dims;
        let mut cur = h;
        let mut prev = self.spec.embedding_dim();
        for (name, fan_out) in [("D.0", g1), ("D.1", g2)] {
            let wv = params.slice(&format!("{name}.w")).unwrap();
            let bv = params.slice(&format!("{name}.b")).unwrap();
            cur = Self::linear_relu(&cur, wv, bv, prev, fan_out, true);
            prev = fan_out;
        }
        let wv = params.slice("D.2.w").unwrap();
        let bv = params.slice("D.2.b").unwrap();
        let logits = Self::linear_relu(&cur, wv, bv, prev, self.spec.num_domains, false);
        Ok(softmax_rows(&logits))
    }

    /// Predicted class per row (argmax of probabilities).
    pub fn predict(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Vec<usize>> {
        let probs = self.forward_probs(params, x)?;
        Ok(argmax_rows(&probs))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let (n, c) = (logits.nrows(), logits.ncols());
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        let mut m = f64::NEG_INFINITY;
        for j in 0..c {
            if logits[(i, j)] > m {
                m = logits[(i, j)];
            }
        }
        let mut z = 0.0;
        for j in 0..c {
            z += (logits[(i, j)] - m).exp();
        }
        for j in 0..c {
            out[(i, j)] = (logits[(i, j)] - m).exp() / z;
        }
    }
    out
}

pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    (0..probs.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..probs.ncols() {
                if probs[(i, j)] > probs[(i, best)] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

// ---- checkpoint serialization ------------------------------------------

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    version: u32,
    len: usize,
    ranges: Vec<RangeEntry>,
}

#[derive(Serialize, Deserialize)]
struct RangeEntry {
    name: String,
    offset: usize,
    len: usize,
}

/// Writes a parameter vector as a one-line JSON header (the sub-range map)
/// followed by the raw little-endian f64 blob.
pub fn save_params(params: &ParamVector, path: &Path) -> Result<()> {
    let header = ParamsHeader {
        version: 1,
        len: params.len(),
        ranges: params
            .layout()
            .ranges()
            .iter()
            .map(|(n, o, l)| RangeEntry {
                name: n.clone(),
                offset: *o,
                len: *l,
            })
            .collect(),
    };
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    file.write_all(line.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut blob = Vec::with_capacity(params.len() * 8);
    for v in params.values() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&blob)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: ParamsHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    if header.version != 1 {
        return Err(Error::Schema {
            path: path.display().to_string(),
            msg: format!("unsupported params version {}", header.version),
        });
    }
    let mut blob = Vec::new();
    reader
        .read_to_end(&mut blob)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if blob.len() != header.len * 8 {
        return Err(Error::Schema {
            path: path.display().to_string(),
            msg: format!(
                "blob holds {} bytes, header promises {}",
                blob.len(),
                header.len * 8
            ),
        });
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let parts: Vec<(&str, usize)> = header
        .ranges
        .iter()
        .map(|r| (r.name.as_str(), r.len))
        .collect();
    let layout = Arc::new(Layout::new(&parts));
    if layout.len() != header.len {
        return Err(Error::Schema {
            path: path.display().to_string(),
            msg: "ranges do not cover the declared length".into(),
        });
    }
    ParamVector::new(layout, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            input_dim: 2,
            feature_dims: vec![4],
            num_classes: 3,
            num_domains: 2,
            discriminator_dims: [3, 3],
            seed: 11,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let model = Model::new(small_spec()).unwrap();
        let a = model.init_params();
        let b = model.init_params();
        let abits: Vec<u64> = a.values().iter().map(|v| v.to_bits()).collect();
        let bbits: Vec<u64> = b.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(abits, bbits);
    }

    #[test]
    fn param_count_matches_arithmetic() {
        // F: 2*4+4, T: 4*3+3 -> 27 for F+T.
        let model = Model::new(small_spec()).unwrap();
        let (fo, fl) = model.layout().range("F.0.w").unwrap();
        assert_eq!((fo, fl), (0, 8));
        let ft: usize = ["F.0.w", "F.0.b", "T.0.w", "T.0.b"]
            .iter()
            .map(|n| model.layout().range(n).unwrap().1)
            .sum();
        assert_eq!(ft, 27);
    }

    #[test]
    fn biases_zero_at_init() {
        let model = Model::new(small_spec()).unwrap();
        let p = model.init_params();
        for (name, _, _) in layer_plan(model.spec()) {
            let b = p.slice(&format!("{name}.b")).unwrap();
            assert!(b.iter().all(|v| *v == 0.0), "{name} bias not zero");
        }
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let model = Model::new(small_spec()).unwrap();
        let p = ParamVector::zeros(model.layout().clone());
        let x = Array2::from_shape_vec((2, 2), vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        let probs = model.forward_probs(&p, &x).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((probs[(i, j)] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let dom = model.forward_domain(&p, &x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((dom[(i, j)] - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let model = Model::new(small_spec()).unwrap();
        let p = model.init_params();
        let x = Array2::from_shape_vec((4, 2), vec![0.3, -1.0, 2.0, 0.1, -0.4, 0.9, 1.5, -2.0])
            .unwrap();
        let probs = model.forward_probs(&p, &x).unwrap();
        for i in 0..4 {
            let s: f64 = (0..3).map(|j| probs[(i, j)]).sum();
            assert!((s - 1.0).abs() <= 1e-12);
            for j in 0..3 {
                assert!(probs[(i, j)] > 0.0 && probs[(i, j)] < 1.0);
            }
        }
    }

    #[test]
    fn bias_shift_makes_class_argmax() {
        let model = Model::new(small_spec()).unwrap();
        let mut p = model.init_params();
        let x = Array2::from_shape_vec((4, 2), vec![0.3, -1.0, 2.0, 0.1, -0.4, 0.9, 1.5, -2.0])
            .unwrap();
        let before = model.predict(&p, &x).unwrap();
        let (o, _) = p.layout().range("T.0.b").unwrap();
        p.values_mut()[o + 1] += 10.0;
        let after = model.predict(&p, &x).unwrap();
        assert!(after.iter().all(|y| *y == 1), "before={before:?} after={after:?}");
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let model = Model::new(small_spec()).unwrap();
        let p = model.init_params();
        let x = Array2::from_shape_vec((3, 2), vec![0.3, -1.0, 2.0, 0.1, -0.4, 0.9]).unwrap();
        let xp = Array2::from_shape_vec((3, 2), vec![-0.4, 0.9, 0.3, -1.0, 2.0, 0.1]).unwrap();
        let a = model.forward_probs(&p, &x).unwrap();
        let b = model.forward_probs(&p, &xp).unwrap();
        for j in 0..3 {
            assert_eq!(a[(0, j)], b[(1, j)]);
            assert_eq!(a[(1, j)], b[(2, j)]);
            assert_eq!(a[(2, j)], b[(0, j)]);
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let model = Model::new(small_spec()).unwrap();
        let p = model.init_params();
        let x = Array2::from_shape_vec((2, 2), vec![0.5, -0.2, 1.0, 0.7]).unwrap();
        let plain = model.forward_probs(&p, &x).unwrap();
        let mut tape = Tape::new(&p);
        let logits = model.class_logits_node(&mut tape, &x);
        let probs = tape.softmax_rows(logits);
        let tv = tape.value(probs);
        for i in 0..2 {
            for j in 0..3 {
                assert!((plain[(i, j)] - tv[i * 3 + j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_domain_world_rejected() {
        // The domain loss is undefined with one domain.
        let spec = ModelSpec {
            num_domains: 1,
            ..small_spec()
        };
        assert!(matches!(Model::new(spec), Err(Error::Config(_))));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let model = Model::new(small_spec()).unwrap();
        let p = model.init_params();
        let x = Array2::from_shape_vec((2, 3), vec![0.0; 6]).unwrap();
        assert!(matches!(
            model.forward_probs(&p, &x),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn params_roundtrip_through_file() {
        let model = Model::new(small_spec()).unwrap();
        let p = model.init_params();
        let dir = std::env::temp_dir().join(format!("fedtail-model-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.params");
        save_params(&p, &path).unwrap();
        let q = load_params(&path).unwrap();
        assert_eq!(p.values(), q.values());
        assert_eq!(p.layout().ranges(), q.layout().ranges());
        std::fs::remove_dir_all(&dir).ok();
    }
}
