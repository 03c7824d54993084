//! Experiment harness: single runs, the ablation ladder, embedding export,
//! and dataset materialization, with all artifacts written as deterministic
//! text files (`metrics.jsonl`, `summary.csv`, `ablation.csv`,
//! `embeddings.csv`, `round_{r}.params` checkpoints).

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::config::ExperimentSpec;
use crate::data::{gen_synthetic, save_dataset, split};
use crate::error::{Error, Result};
use crate::federated::{run_experiment, RoundReport, RunRecord};
use crate::model::{load_params, save_params};
use crate::objective::LossBreakdown;
use crate::rng::derive_seed;
use crate::ParamVector;

/// Options that arrive from the command line rather than the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write global+teacher checkpoints every this many rounds.
    pub checkpoint_every: Option<u32>,
    pub threads: Option<usize>,
}

/// One line of `metrics.jsonl`. Wall-clock time is deliberately absent so
/// identical runs produce byte-identical files; timings go to the log.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub held_out: String,
    pub round: u32,
    pub losses: LossBreakdown,
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub val_accuracy: f64,
    pub clients_ok: usize,
}

impl MetricsRecord {
    fn from_report(run: &RunRecord, report: &RoundReport) -> MetricsRecord {
        MetricsRecord {
            run_id: format!("{}-s{}", run.held_out, run.seed),
            seed: run.seed,
            held_out: run.held_out.clone(),
            round: report.round,
            losses: report.losses.clone(),
            accuracy: report.heldout_accuracy,
            macro_accuracy: report.heldout_macro_accuracy,
            per_class_accuracy: report.heldout_per_class.clone(),
            val_accuracy: report.val_accuracy,
            clients_ok: report.clients_ok,
        }
    }
}

pub fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Ignore the error if a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs the experiment in the spec and writes `metrics.jsonl` and
/// `summary.csv` under `out_dir`. Returns the raw run records.
pub fn run(spec: &ExperimentSpec, out_dir: &Path, opts: &RunOptions) -> Result<Vec<RunRecord>> {
    configure_threads(opts.threads);
    spec.validate()?;
    create_dir(out_dir)?;

    let ckpt_dir = out_dir.join("checkpoints");
    let ckpt_every = opts.checkpoint_every;
    if ckpt_every.is_some() {
        create_dir(&ckpt_dir)?;
    }
    let hook = |held_out: &str, seed: u64, round: u32, global: &ParamVector, teacher: &ParamVector| -> Result<()> {
        let every = match ckpt_every {
            Some(e) if e > 0 => e,
            _ => return Ok(()),
        };
        if (round + 1) % every != 0 {
            return Ok(());
        }
        let dir = ckpt_dir.join(format!("{held_out}_s{seed}"));
        create_dir(&dir)?;
        save_params(global, &dir.join(format!("round_{round}.params")))?;
        save_params(teacher, &dir.join(format!("round_{round}.teacher.params")))?;
        Ok(())
    };

    let started = std::time::Instant::now();
    let runs = run_experiment(spec, Some(&hook))?;
    log::info!(
        "experiment finished: {} runs in {:.1}s",
        runs.len(),
        started.elapsed().as_secs_f64()
    );

    write_file(&out_dir.join("metrics.jsonl"), &metrics_jsonl(&runs)?)?;
    write_file(&out_dir.join("summary.csv"), &summary_csv(&runs))?;
    Ok(runs)
}

/// Serializes every round of every run, ordered by (held-out, seed, round).
pub fn metrics_jsonl(runs: &[RunRecord]) -> Result<String> {
    let mut out = String::new();
    for run in runs {
        for report in &run.reports {
            let record = MetricsRecord::from_report(run, report);
            out.push_str(&serde_json::to_string(&record)?);
            out.push('\n');
        }
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Final-round accuracy per held-out split, aggregated over seeds, plus an
/// overall row pooling every (split, seed) cell.
pub fn summary_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from("held_out,accuracy_mean,accuracy_std,macro_mean,macro_std,seeds\n");
    let mut names: Vec<(usize, String)> = Vec::new();
    for run in runs {
        if !names.iter().any(|(i, _)| *i == run.held_out_index) {
            names.push((run.held_out_index, run.held_out.clone()));
        }
    }
    names.sort();
    let mut all_acc = Vec::new();
    let mut all_macro = Vec::new();
    for (idx, name) in &names {
        let accs: Vec<f64> = runs
            .iter()
            .filter(|r| r.held_out_index == *idx)
            .map(|r| r.final_report().heldout_accuracy)
            .collect();
        let macros: Vec<f64> = runs
            .iter()
            .filter(|r| r.held_out_index == *idx)
            .map(|r| r.final_report().heldout_macro_accuracy)
            .collect();
        all_acc.extend_from_slice(&accs);
        all_macro.extend_from_slice(&macros);
        let (am, asd) = mean_std(&accs);
        let (mm, msd) = mean_std(&macros);
        out.push_str(&format!("{name},{am},{asd},{mm},{msd},{}\n", accs.len()));
    }
    let (am, asd) = mean_std(&all_acc);
    let (mm, msd) = mean_std(&all_macro);
    out.push_str(&format!("average,{am},{asd},{mm},{msd},{}\n", all_acc.len()));
    out
}

/// The five-row ladder of term sets, from plain classification to the full
/// objective.
pub fn ladder() -> [Vec<&'static str>; 5] {
    [
        vec!["cls"],
        vec!["cls", "adv"],
        vec!["cls", "adv", "sharp_er"],
        vec!["cls", "adv", "sharp_er", "classwise"],
        vec!["cls", "adv", "sharp_er", "classwise", "coh"],
    ]
}

/// Runs the ladder with shared seeds. Returns (row label, runs) per row.
pub fn ablation_results(spec: &ExperimentSpec) -> Result<Vec<(String, Vec<RunRecord>)>> {
    let mut out = Vec::new();
    for terms in ladder() {
        let row_spec = spec.with_terms(&terms);
        row_spec.validate()?;
        let runs = run_experiment(&row_spec, None)?;
        out.push((terms.join("+"), runs));
    }
    Ok(out)
}

/// Runs the ladder and writes `ablation.csv`: one row per configuration,
/// per-held-out-domain mean final accuracy plus the average.
pub fn ablation(spec: &ExperimentSpec, out_dir: &Path, opts: &RunOptions) -> Result<()> {
    configure_threads(opts.threads);
    spec.validate()?;
    create_dir(out_dir)?;
    let results = ablation_results(spec)?;
    write_file(&out_dir.join("ablation.csv"), &ablation_csv(spec, &results))
}

pub fn ablation_csv(spec: &ExperimentSpec, results: &[(String, Vec<RunRecord>)]) -> String {
    let k = spec.data.num_domains;
    let mut header = String::from("config,cls,adv,sharp_er,classwise,coh");
    for d in 0..k {
        header.push_str(&format!(",domain{d}"));
    }
    header.push_str(",avg\n");
    let mut out = header;
    for (label, runs) in results {
        let flags: Vec<&str> = label.split('+').collect();
        let mut row = label.clone();
        for name in crate::config::TERM_NAMES {
            row.push(',');
            row.push(if flags.contains(&name) { '1' } else { '0' });
        }
        let mut domain_means = Vec::new();
        for d in 0..k {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| r.held_out_index == d)
                .map(|r| r.final_report().heldout_accuracy)
                .collect();
            let (m, _) = mean_std(&accs);
            domain_means.push(m);
            row.push_str(&format!(",{m}"));
        }
        let (avg, _) = mean_std(&domain_means);
        row.push_str(&format!(",{avg}\n"));
        out.push_str(&row);
    }
    out
}

/// Materializes the spec's synthetic domains as dataset files
/// (`domain{i}.csv`), using the data seed verbatim so a later load
/// reproduces the in-memory generation exactly.
pub fn gen_data(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    spec.data.validate()?;
    create_dir(out_dir)?;
    let datasets = gen_synthetic(&spec.data)?;
    let mut paths = Vec::new();
    for ds in &datasets {
        let path = out_dir.join(format!("{}.csv", ds.name));
        save_dataset(ds, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Forward pass through the `F.*` layers of a loaded checkpoint, without
/// requiring the discriminator shape to match the current config.
fn features_from_checkpoint(
    params: &ParamVector,
    input_dim: usize,
    feature_dims: &[usize],
    x: &Array2<f64>,
    path: &Path,
) -> Result<Array2<f64>> {
    let mut h = x.clone();
    let mut prev = input_dim;
    for (i, &width) in feature_dims.iter().enumerate() {
        let wname = format!("F.{i}.w");
        let bname = format!("F.{i}.b");
        let (w, b) = match (params.slice(&wname), params.slice(&bname)) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(Error::Schema {
                    path: path.display().to_string(),
                    msg: format!("checkpoint lacks range {wname}/{bname}"),
                })
            }
        };
        if w.len() != prev * width || b.len() != width {
            return Err(Error::Schema {
                path: path.display().to_string(),
                msg: format!(
                    "range {wname} holds {} values; config expects {}x{width}",
                    w.len(),
                    prev
                ),
            });
        }
        let mut next = Array2::zeros((h.nrows(), width));
        for r in 0..h.nrows() {
            for j in 0..width {
                let mut acc = b[j];
                for k in 0..prev {
                    acc += h[(r, k)] * w[k * width + j];
                }
                next[(r, j)] = acc.max(0.0);
            }
        }
        h = next;
        prev = width;
    }
    Ok(h)
}

/// Writes `embeddings.csv` with F(x) for every domain's validation split,
/// regenerating the datasets of the spec's first seed.
pub fn export_embeddings(spec: &ExperimentSpec, checkpoint: &Path, out_dir: &Path) -> Result<()> {
    spec.data.validate()?;
    create_dir(out_dir)?;
    let params = load_params(checkpoint)?;

    let mut data_spec = spec.data.clone();
    data_spec.seed = derive_seed(spec.seed, &["data"]);
    let mut datasets = gen_synthetic(&data_spec)?;
    let split_seed = derive_seed(spec.seed, &["split"]);
    for ds in &mut datasets {
        split(ds, 0.9, split_seed);
    }

    let m = *spec.model.feature_dims.last().unwrap();
    let mut out = String::from("domain,label");
    for j in 0..m {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for ds in &datasets {
        let (vx, vy) = ds.subset(&ds.val_idx);
        if vy.is_empty() {
            continue;
        }
        let emb = features_from_checkpoint(
            &params,
            spec.data.feature_dim,
            &spec.model.feature_dims,
            &vx,
            checkpoint,
        )?;
        for (i, label) in vy.iter().enumerate() {
            out.push_str(&format!("{},{label}", ds.name));
            for j in 0..m {
                out.push_str(&format!(",{}", emb[(i, j)]));
            }
            out.push('\n');
        }
    }
    write_file(&out_dir.join("embeddings.csv"), &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::default();
        spec.data.num_domains = 3;
        spec.data.num_classes = 3;
        spec.data.feature_dim = 4;
        spec.data.samples_per_class_max = 20;
        spec.data.imbalance_ratio = 4.0;
        spec.model.feature_dims = vec![6, 4];
        spec.model.discriminator_dims = [4, 4];
        spec.rounds = 2;
        spec.num_seeds = 1;
        spec.held_out = "domain0".into();
        spec
    }

    #[test]
    fn smoke_run_writes_expected_records() {
        let dir = std::env::temp_dir().join(format!("fedtail-harness-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spec = tiny_spec();
        let runs = run(&spec, &dir, &RunOptions::default()).unwrap();
        assert_eq!(runs.len(), 1);
        let metrics = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
        // 1 held-out split x 1 seed x 2 rounds.
        assert_eq!(metrics.lines().count(), 2);
        for line in metrics.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["accuracy"].as_f64().unwrap() >= 0.0);
            assert!(v.get("wall_ms").is_none());
        }
        let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
        assert!(summary.lines().count() >= 3);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn gen_data_roundtrip_matches_generation() {
        let dir = std::env::temp_dir().join(format!("fedtail-gendata-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spec = tiny_spec();
        let paths = gen_data(&spec, &dir).unwrap();
        assert_eq!(paths.len(), 3);
        let regenerated = gen_synthetic(&spec.data).unwrap();
        for (path, expect) in paths.iter().zip(&regenerated) {
            let loaded = crate::data::load_dataset_file(path, expect.domain_id).unwrap();
            assert_eq!(&loaded, expect);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
