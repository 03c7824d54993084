//! Experiment configuration: one JSON document covering data generation,
//! model architecture, optimization, the objective, and the federated
//! protocol, with flat dotted-key overrides (`--set fedtail.rho=0.05`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::federated::{SgdConfig, Weighting};
use crate::objective::{FedTailConfig, TermWeights};

pub const TERM_NAMES: [&str; 5] = ["cls", "adv", "sharp_er", "classwise", "coh"];

/// Architecture knobs; input/class/domain dimensions come from the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArch {
    pub feature_dims: Vec<usize>,
    pub discriminator_dims: [usize; 2],
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            feature_dims: vec![32, 16],
            discriminator_dims: [16, 16],
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Base seed; run s uses `seed + s`.
    pub seed: u64,
    pub rounds: u32,
    pub num_seeds: u32,
    /// `"all"` for the full leave-one-domain-out sweep, or one domain name
    /// (`"domain2"`) or index (`"2"`).
    pub held_out: String,
    /// Enabled loss terms; must include `cls`.
    pub terms: Vec<String>,
    pub aggregation: Weighting,
    pub out_dir: String,
    pub data: SynthSpec,
    pub model: ModelArch,
    pub optim: SgdConfig,
    pub fedtail: FedTailConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seed: 0,
            rounds: 30,
            num_seeds: 3,
            held_out: "all".to_string(),
            terms: TERM_NAMES.iter().map(|s| s.to_string()).collect(),
            aggregation: Weighting::SampleCount,
            out_dir: "out".to_string(),
            data: SynthSpec::default(),
            model: ModelArch::default(),
            optim: SgdConfig::default(),
            fedtail: FedTailConfig::default(),
        }
    }
}

impl ExperimentSpec {
    /// Folds the enabled-term set into the configured term weights.
    pub fn effective_weights(&self) -> TermWeights {
        let w = &self.fedtail.term_weights;
        let on = |name: &str| self.terms.iter().any(|t| t == name);
        TermWeights {
            cls: if on("cls") { w.cls } else { 0.0 },
            adv: if on("adv") { w.adv } else { 0.0 },
            sharp_er: if on("sharp_er") { w.sharp_er } else { 0.0 },
            classwise: if on("classwise") { w.classwise } else { 0.0 },
            coh: if on("coh") { w.coh } else { 0.0 },
        }
    }

    pub fn with_terms(&self, terms: &[&str]) -> ExperimentSpec {
        let mut out = self.clone();
        out.terms = terms.iter().map(|s| s.to_string()).collect();
        out
    }

    /// Indices of the held-out domains this spec sweeps.
    pub fn held_out_indices(&self) -> Result<Vec<usize>> {
        let k = self.data.num_domains;
        if self.held_out == "all" {
            return Ok((0..k).collect());
        }
        let name = self.held_out.as_str();
        let idx = if let Some(rest) = name.strip_prefix("domain") {
            rest.parse::<usize>().ok()
        } else {
            name.parse::<usize>().ok()
        };
        match idx {
            Some(i) if i < k => Ok(vec![i]),
            _ => Err(Error::Config(format!(
                "held_out {name:?} does not name one of the {k} domains (use \"all\", \"domainN\", or an index)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.optim.validate()?;
        self.fedtail.validate()?;
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.num_seeds < 1 {
            return Err(Error::Config("num_seeds must be >= 1".into()));
        }
        if self.terms.is_empty() || !self.terms.iter().any(|t| t == "cls") {
            return Err(Error::Config("enabled terms must include \"cls\"".into()));
        }
        for t in &self.terms {
            if !TERM_NAMES.contains(&t.as_str()) {
                return Err(Error::Config(format!(
                    "unknown loss term {t:?}; expected one of {TERM_NAMES:?}"
                )));
            }
        }
        if self.model.feature_dims.is_empty() {
            return Err(Error::Config("model.feature_dims must be nonempty".into()));
        }
        let w = self.effective_weights();
        if w.adv != 0.0 || w.coh != 0.0 {
            // Each leave-one-domain-out split trains on K-1 domains; the
            // discriminator needs at least two of them.
            if self.data.num_domains < 3 {
                return Err(Error::Config(
                    "adv/coh terms need >= 3 domains so each split keeps >= 2 training domains"
                        .into(),
                ));
            }
        }
        self.held_out_indices()?;
        Ok(())
    }

    /// Reads a spec from a JSON file and applies `key.path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad JSON in {}: {e}", path.display())))?;
        apply_overrides(&mut value, overrides)?;
        let spec: ExperimentSpec = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        Ok(spec)
    }

    pub fn from_overrides(overrides: &[String]) -> Result<ExperimentSpec> {
        let mut value = serde_json::to_value(ExperimentSpec::default())?;
        apply_overrides(&mut value, overrides)?;
        let spec: ExperimentSpec = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid override: {e}")))?;
        Ok(spec)
    }
}

/// Applies `a.b.c=value` assignments onto a JSON document. Values parse as
/// JSON when possible (numbers, booleans, arrays) and fall back to strings.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {item:?} is not of the form key.path=value"))
        })?;
        let parsed: Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| Value::String(raw.to_string()));
        let segments: Vec<&str> = path.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::Config(format!("override path {path:?} has empty segments")));
        }
        set_path(doc, &segments, parsed, path)?;
    }
    Ok(())
}

fn set_path(doc: &mut Value, segments: &[&str], value: Value, full_path: &str) -> Result<()> {
    let map = doc.as_object_mut().ok_or_else(|| {
        Error::Config(format!(
            "override path {full_path:?} crosses a non-object value"
        ))
    })?;
    match segments {
        [last] => {
            map.insert(last.to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let child = map
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
            set_path(child, rest, value, full_path)
        }
        [] => Err(Error::Config(format!("empty override path {full_path:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_validates() {
        ExperimentSpec::default().validate().unwrap();
    }

    #[test]
    fn effective_weights_follow_terms() {
        let spec = ExperimentSpec::default().with_terms(&["cls", "adv"]);
        let w = spec.effective_weights();
        assert_eq!(w.cls, 1.0);
        assert_eq!(w.adv, 1.0);
        assert_eq!(w.sharp_er, 0.0);
        assert_eq!(w.classwise, 0.0);
        assert_eq!(w.coh, 0.0);
    }

    #[test]
    fn cls_term_required() {
        let spec = ExperimentSpec::default().with_terms(&["adv"]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn adv_requires_three_domains() {
        let mut spec = ExperimentSpec::default();
        spec.data.num_domains = 2;
        assert!(spec.validate().is_err());
        let ok = spec.with_terms(&["cls"]);
        ok.validate().unwrap();
    }

    #[test]
    fn held_out_forms() {
        let mut spec = ExperimentSpec::default();
        assert_eq!(spec.held_out_indices().unwrap(), vec![0, 1, 2, 3]);
        spec.held_out = "domain2".into();
        assert_eq!(spec.held_out_indices().unwrap(), vec![2]);
        spec.held_out = "1".into();
        assert_eq!(spec.held_out_indices().unwrap(), vec![1]);
        spec.held_out = "nope".into();
        assert!(spec.held_out_indices().is_err());
    }

    #[test]
    fn overrides_set_nested_keys() {
        let mut doc = serde_json::to_value(ExperimentSpec::default()).unwrap();
        apply_overrides(
            &mut doc,
            &[
                "fedtail.rho=0.1".to_string(),
                "data.num_classes=4".to_string(),
                "held_out=domain1".to_string(),
                "optim.lr=0.02".to_string(),
            ],
        )
        .unwrap();
        let spec: ExperimentSpec = serde_json::from_value(doc).unwrap();
        assert_eq!(spec.fedtail.rho, 0.1);
        assert_eq!(spec.data.num_classes, 4);
        assert_eq!(spec.held_out, "domain1");
        assert_eq!(spec.optim.lr, Some(0.02));
    }

    #[test]
    fn bad_override_shapes_rejected() {
        let mut doc = serde_json::to_value(ExperimentSpec::default()).unwrap();
        assert!(apply_overrides(&mut doc, &["no-equals".to_string()]).is_err());
        assert!(apply_overrides(&mut doc, &["seed.x=1".to_string()]).is_err());
        // Unknown keys surface at deserialization.
        apply_overrides(&mut doc, &["fedtail.rhoo=0.1".to_string()]).unwrap();
        assert!(serde_json::from_value::<ExperimentSpec>(doc).is_err());
    }
}
