//! Federated domain-generalization laboratory.
//!
//! This crate simulates FedAvg training of small MLP classifiers on
//! long-tailed, multi-domain synthetic data, with an optimization stack
//! built around sharpness-aware minimization: gradient coherence between
//! classification and adversarial objectives, class-wise sharpness
//! minimization with curvature-aware weights, and sharpness-aware
//! conditional alignment against per-domain class distributions.
//!
//! Everything runs on 64-bit floats with fixed summation order: a run is
//! reproducible bit-for-bit on the same build given the same seeds.
//!
//! Start from the runnable examples (`cargo run --example <name>`), or from
//! the `fedtail` binary for full experiments:
//!
//! ```text
//! fedtail gen-data --out data/ --set data.num_domains=4
//! fedtail run --config config.json --out out/
//! fedtail ablation --config config.json --out out/
//! fedtail export-embeddings --config config.json --checkpoint out/checkpoints/... --out out/
//! ```

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod federated;
pub mod harness;
pub mod losses;
pub mod model;
pub mod objective;
pub mod rng;

pub use autograd::{Gradient, Layout, ParamVector};
pub use config::ExperimentSpec;
pub use data::{DomainDataset, SynthSpec};
pub use error::{Error, Result};
pub use federated::{RoundReport, SgdConfig};
pub use losses::Batch;
pub use model::{Model, ModelSpec};
pub use objective::{CurvatureState, FedTailConfig, LossBreakdown, QtDistribution};
