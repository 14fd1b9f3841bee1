//! Experiment configuration: one TOML or JSON document with a section per stage.

use std::path::{Path, PathBuf};

use evdistill::data::{OodSpec, SyntheticSpec};
use evdistill::distill::{AdapterSpec, DistillConfig, Head};
use evdistill::metrics::EvalOptions;
use evdistill::teacher::EnsembleSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub ensemble: EnsembleSpec,
    pub teacher: TeacherSection,
    pub distill: DistillSection,
    pub eval: EvalOptions,
    pub ood: OodSection,
    pub bench: BenchConfig,
    pub alpha_sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labelled CSV/JSONL file to split instead of the synthetic generator.
    pub source: Option<PathBuf>,
    /// Its seed is offset by the run seed.
    pub synthetic: SyntheticSpec,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: None,
            synthetic: SyntheticSpec::default(),
            split: [0.625, 0.0625, 0.3125],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSplit {
    /// Validation split, disjoint from the data the students see.
    #[default]
    Val,
    /// The training split, shared with distillation.
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    /// Split the ensemble weights are fitted on.
    pub weight_split: WeightSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub heads: Vec<Head>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Applied to the evidential student only.
    pub fixed_alpha0: Option<f64>,
    pub patience: usize,
    pub adapter: AdapterSpec,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            heads: vec![Head::Softmax, Head::Evidential],
            max_epochs: d.max_epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            fixed_alpha0: d.fixed_alpha0,
            patience: d.patience,
            adapter: d.adapter,
        }
    }
}

impl DistillSection {
    pub fn for_head(&self, head: Head, seed: u64) -> DistillConfig {
        DistillConfig {
            head,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            fixed_alpha0: if head == Head::Evidential {
                self.fixed_alpha0
            } else {
                None
            },
            seed,
            patience: self.patience,
            adapter: self.adapter.clone(),
        }
    }
}

/// A named out-of-distribution set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSet {
    pub name: String,
    /// Generated from the synthetic spec when `file` is absent; the seed
    /// is offset by the run seed.
    #[serde(default)]
    pub shift: OodSpec,
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSection {
    pub sets: Vec<OodSet>,
    pub hist_bins: usize,
}

impl Default for OodSection {
    fn default() -> Self {
        Self {
            sets: vec![
                OodSet {
                    name: "shifted".into(),
                    shift: OodSpec {
                        clusters: Some(1),
                        ..Default::default()
                    },
                    file: None,
                },
                OodSet {
                    name: "in-domain".into(),
                    shift: OodSpec {
                        shift: 0.0,
                        seed: 99,
                        ..Default::default()
                    },
                    file: None,
                },
            ],
            hist_bins: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Timed passes over the test set; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub hist_bins: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0],
            hist_bins: 30,
        }
    }
}

impl Config {
    /// Reads a `.toml` or `.json` file; the extension picks the parser.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            Some("toml") => toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
            _ => {
                return Err(CliError::config(format!(
                    "config {} must end in .toml or .json",
                    path.display()
                )))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::config(m));
        if self.distill.heads.is_empty() {
            return bad("distill.heads is empty".into());
        }
        for &h in &self.distill.heads {
            self.distill
                .for_head(h, self.seed)
                .validate()
                .map_err(CliError::config)?;
        }
        if self.eval.n_bins == 0 || self.ood.hist_bins == 0 || self.alpha_sweep.hist_bins == 0 {
            return bad("bin counts must be positive".into());
        }
        if self.bench.repeats == 0 {
            return bad("bench.repeats must be positive".into());
        }
        if let Some(v) = self.alpha_sweep.grid.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return bad(format!("alpha_sweep.grid value {v} is not positive"));
        }
        let mut names: Vec<&str> = self.ood.sets.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.ood.sets.len() {
            return bad("ood set names must be unique".into());
        }
        if let Some(s) = self.ood.sets.iter().find(|s| !valid_name(&s.name)) {
            return bad(format!("ood set name {:?} must use [A-Za-z0-9_-]", s.name));
        }
        if self.ensemble.members.is_empty() && self.ensemble.size == 0 {
            return bad("ensemble.size must be positive".into());
        }
        Ok(())
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}
