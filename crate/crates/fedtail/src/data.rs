//! Synthetic multi-domain, long-tailed datasets, 90/10 splits, and the
//! line-oriented dataset file format.
//!
//! Class prototypes sit on a circle in a 2-D latent plane embedded in d
//! dimensions. Each domain applies its own rotation, translation, and
//! scaling to every sample (covariate shift with shared labeling), so a
//! domain-invariant feature extractor exists by construction. Class sample
//! counts follow the exponential long-tail profile
//! `n_c = round(n_max * r^(-c / (C-1)))`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Labeled samples for one domain, with class statistics and splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub name: String,
    /// n x d feature matrix.
    pub x: Array2<f64>,
    /// n class labels.
    pub y: Vec<usize>,
    pub num_classes: usize,
    /// Label counts over all samples.
    pub class_counts: Vec<u64>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

impl DomainDataset {
    pub fn new(
        domain_id: usize,
        name: String,
        x: Array2<f64>,
        y: Vec<usize>,
        num_classes: usize,
    ) -> Result<DomainDataset> {
        if x.nrows() != y.len() {
            return Err(Error::DimMismatch(format!(
                "{} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|l| **l >= num_classes) {
            return Err(Error::DimMismatch(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let mut class_counts = vec![0u64; num_classes];
        for l in &y {
            class_counts[*l] += 1;
        }
        Ok(DomainDataset {
            domain_id,
            name,
            x,
            y,
            num_classes,
            class_counts,
            train_idx: Vec::new(),
            val_idx: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Features and labels for a list of sample indices.
    pub fn subset(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let d = self.x.ncols();
        let mut x = Array2::zeros((idx.len(), d));
        let mut y = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            for j in 0..d {
                x[(row, j)] = self.x[(i, j)];
            }
            y.push(self.y[i]);
        }
        (x, y)
    }

    /// Class frequencies over the training split.
    pub fn class_frequencies(&self) -> Result<Vec<f64>> {
        let counts = self.train_class_counts();
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyDomain(self.name.clone()));
        }
        Ok(counts.iter().map(|c| *c as f64 / total as f64).collect())
    }

    /// Label counts over the training split.
    pub fn train_class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes];
        for &i in &self.train_idx {
            counts[self.y[i]] += 1;
        }
        counts
    }
}

/// Per-domain covariate shift: rotation in the latent plane, translation,
/// and scaling, all spread across domains.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainShift {
    /// Rotation of domain K-1, in degrees; domain i gets an i/(K-1) share.
    pub max_rotation_deg: f64,
    /// Standard deviation of the per-domain translation vector.
    pub translation_sigma: f64,
    /// Total spread of per-domain feature scaling around 1.
    pub scale_spread: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        // Rotations stay under half the inter-class angle of the prototype
        // circle (30 degrees at C = 6), so no rotation maps one class onto
        // another and a domain-invariant decoder exists.
        DomainShift {
            max_rotation_deg: 20.0,
            translation_sigma: 0.5,
            scale_spread: 0.2,
        }
    }
}

/// Generator spec for the synthetic multi-domain benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_domains: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Samples of class 0, the head class.
    pub samples_per_class_max: usize,
    /// Head-to-tail imbalance ratio; 1 means balanced.
    pub imbalance_ratio: f64,
    pub domain_shift: DomainShift,
    /// Probability of replacing a label with a uniformly random class.
    pub label_noise: f64,
    /// Radius of the class-prototype circle in the latent plane.
    pub prototype_radius: f64,
    /// Within-class noise in the latent plane.
    pub intra_class_sigma: f64,
    /// Noise level of the nuisance dimensions beyond the latent plane.
    pub nuisance_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_domains: 4,
            num_classes: 6,
            feature_dim: 8,
            samples_per_class_max: 100,
            imbalance_ratio: 10.0,
            domain_shift: DomainShift::default(),
            label_noise: 0.0,
            prototype_radius: 3.0,
            intra_class_sigma: 0.8,
            nuisance_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 2 {
            return Err(Error::DegenerateSpec("need at least 2 domains".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::DegenerateSpec("need at least 2 classes".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::DegenerateSpec("feature_dim must be >= 2".into()));
        }
        if self.imbalance_ratio < 1.0 {
            return Err(Error::DegenerateSpec("imbalance_ratio must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::DegenerateSpec("label_noise must be in [0, 0.5)".into()));
        }
        for (c, n) in self.class_counts().into_iter().enumerate() {
            if n < 2 {
                return Err(Error::DegenerateSpec(format!(
                    "class {c} would have {n} sample(s); raise samples_per_class_max or lower imbalance_ratio"
                )));
            }
        }
        Ok(())
    }

    /// The long-tail profile `n_c = round(n_max * r^(-c / (C-1)))`.
    pub fn class_counts(&self) -> Vec<usize> {
        let c = self.num_classes;
        (0..c)
            .map(|i| {
                let exponent = -(i as f64) / (c as f64 - 1.0);
                (self.samples_per_class_max as f64 * self.imbalance_ratio.powf(exponent)).round()
                    as usize
            })
            .collect()
    }
}

/// Generates all domains of a synthetic benchmark. Deterministic per seed;
/// splits are left empty (see [`split`]).
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let counts = spec.class_counts();
    let k = spec.num_domains;
    let d = spec.feature_dim;
    let mut out = Vec::with_capacity(k);
    for domain in 0..k {
        let share = if k > 1 {
            domain as f64 / (k as f64 - 1.0)
        } else {
            0.0
        };
        let angle = spec.domain_shift.max_rotation_deg.to_radians() * share;
        let (sin, cos) = angle.sin_cos();
        let scale = 1.0 + spec.domain_shift.scale_spread * (share - 0.5);
        let mut trans_rng = stream_rng(spec.seed, &format!("domain{domain}/translation"));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let translation: Vec<f64> = (0..d)
            .map(|_| spec.domain_shift.translation_sigma * normal.sample(&mut trans_rng))
            .collect();

        let n_total: usize = counts.iter().sum();
        let mut x = Array2::zeros((n_total, d));
        let mut y = Vec::with_capacity(n_total);
        let mut row = 0;
        for (class, &n_c) in counts.iter().enumerate() {
            let theta = 2.0 * std::f64::consts::PI * class as f64 / spec.num_classes as f64;
            let proto = (
                spec.prototype_radius * theta.cos(),
                spec.prototype_radius * theta.sin(),
            );
            let mut rng = stream_rng(spec.seed, &format!("domain{domain}/class{class}"));
            for _ in 0..n_c {
                let z0 = proto.0 + spec.intra_class_sigma * normal.sample(&mut rng);
                let z1 = proto.1 + spec.intra_class_sigma * normal.sample(&mut rng);
                // Rotate the latent plane, then scale and translate in
                // feature space.
                x[(row, 0)] = scale * (cos * z0 - sin * z1) + translation[0];
                x[(row, 1)] = scale * (sin * z0 + cos * z1) + translation[1];
                for j in 2..d {
                    let nuisance = spec.nuisance_sigma * normal.sample(&mut rng);
                    x[(row, j)] = scale * nuisance + translation[j];
                }
                y.push(class);
                row += 1;
            }
        }
        if spec.label_noise > 0.0 {
            let mut rng = stream_rng(spec.seed, &format!("domain{domain}/label-noise"));
            for label in &mut y {
                if rng.random::<f64>() < spec.label_noise {
                    *label = rng.random_range(0..spec.num_classes);
                }
            }
        }
        out.push(DomainDataset::new(
            domain,
            format!("domain{domain}"),
            x,
            y,
            spec.num_classes,
        )?);
    }
    Ok(out)
}

/// Stratified-by-class train/validation split. Every class with at least two
/// samples keeps at least one sample on each side; per-class train counts
/// are within one sample of `train_frac * n_c`.
pub fn split(dataset: &mut DomainDataset, train_frac: f64, seed: u64) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..dataset.num_classes {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|i| dataset.y[*i] == class)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let mut rng = stream_rng(seed, &format!("split/{}/class{class}", dataset.name));
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = if n == 1 {
            1
        } else {
            ((train_frac * n as f64).round() as usize).clamp(1, n - 1)
        };
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    dataset.train_idx = train;
    dataset.val_idx = val;
}

// ---- dataset file format --------------------------------------------------
//
// One JSON header line, then n CSV-ish sample lines, `#` lines are comments:
//
//   {"version":1,"domain":"domain0","C":6,"d":8,"n":254}
//   3,0.12,-1.4,...
//   # anything
//   0,2.5,0.33,...

#[derive(Serialize, Deserialize)]
struct FileHeader {
    version: u32,
    domain: String,
    #[serde(rename = "C")]
    num_classes: usize,
    d: usize,
    n: usize,
}

/// Writes a dataset (samples only; splits are not persisted).
pub fn save_dataset(dataset: &DomainDataset, path: &Path) -> Result<()> {
    let header = FileHeader {
        version: 1,
        domain: dataset.name.clone(),
        num_classes: dataset.num_classes,
        d: dataset.feature_dim(),
        n: dataset.len(),
    };
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io_err)?;
    for i in 0..dataset.len() {
        let mut line = dataset.y[i].to_string();
        for j in 0..dataset.feature_dim() {
            line.push(',');
            line.push_str(&format!("{}", dataset.x[(i, j)]));
        }
        writeln!(w, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Reads a dataset file. Any malformed byte stream yields a structured
/// `Parse` error with its line number; nothing panics. The caller assigns
/// the domain id. Splits are left empty.
pub fn load_dataset_file(path: &Path, domain_id: usize) -> Result<DomainDataset> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let pstr = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: pstr.clone(),
        line,
        msg,
    };

    let mut header: Option<FileHeader> = None;
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<usize> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match &header {
            None => {
                let h: FileHeader = serde_json::from_str(trimmed)
                    .map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
                if h.version != 1 {
                    return Err(parse_err(lineno, format!("unsupported version {}", h.version)));
                }
                if h.num_classes < 1 || h.d < 1 {
                    return Err(parse_err(lineno, "header C and d must be >= 1".into()));
                }
                header = Some(h);
            }
            Some(h) => {
                let mut fields = trimmed.split(',');
                let label: usize = fields
                    .next()
                    .ok_or_else(|| parse_err(lineno, "empty sample line".into()))?
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(lineno, format!("bad label: {e}")))?;
                if label >= h.num_classes {
                    return Err(parse_err(
                        lineno,
                        format!("label {label} out of range for C={}", h.num_classes),
                    ));
                }
                let mut count = 0;
                for f in fields {
                    let v: f64 = f
                        .trim()
                        .parse()
                        .map_err(|e| parse_err(lineno, format!("bad feature: {e}")))?;
                    if !v.is_finite() {
                        return Err(parse_err(lineno, "non-finite feature value".into()));
                    }
                    xs.push(v);
                    count += 1;
                }
                if count != h.d {
                    return Err(parse_err(
                        lineno,
                        format!("expected {} features, found {count}", h.d),
                    ));
                }
                ys.push(label);
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(0, "missing header line".into()))?;
    if ys.len() != header.n {
        return Err(Error::Parse {
            path: pstr,
            line: 0,
            msg: format!("header promises {} samples, file holds {}", header.n, ys.len()),
        });
    }
    let x = Array2::from_shape_vec((ys.len(), header.d), xs)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let mut ds = DomainDataset::new(domain_id, header.domain, x, ys, header.num_classes)?;
    ds.train_idx.clear();
    ds.val_idx.clear();
    Ok(ds)
}

/// Checks a loaded dataset against the experiment's dimensions.
pub fn validate_schema(dataset: &DomainDataset, num_classes: usize, feature_dim: usize, path: &Path) -> Result<()> {
    if dataset.num_classes != num_classes {
        return Err(Error::Schema {
            path: path.display().to_string(),
            msg: format!(
                "file has C={}, experiment expects C={num_classes}",
                dataset.num_classes
            ),
        });
    }
    if dataset.feature_dim() != feature_dim {
        return Err(Error::Schema {
            path: path.display().to_string(),
            msg: format!(
                "file has d={}, experiment expects d={feature_dim}",
                dataset.feature_dim()
            ),
        });
    }
    Ok(())
}
