//! Assembling and fitting a desk-scale ensemble.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_bayespe_weights, EntropyWeight, MemberSpec, MlpMember, Predictor, TeacherEnsemble, TransformKind};
use crate::data::Dataset;
use crate::metrics::accuracy;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub size: usize,
    /// Template for every member; seed and transform are overridden.
    pub member: MemberSpec,
    /// Odd-indexed members zero this many input features before their
    /// rotation; even-indexed members see a plain rotation.
    pub dropped_features: usize,
    /// Explicit member list. When non-empty it replaces `size`, `member`
    /// and `dropped_features`, and seeds are used as given.
    pub members: Vec<MemberSpec>,
    pub entropy_weight: EntropyWeight,
    /// Members below this validation accuracy are kept with a warning.
    pub min_val_accuracy: Option<f64>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            size: 8,
            member: MemberSpec::default(),
            dropped_features: 1,
            members: Vec::new(),
            entropy_weight: EntropyWeight::default(),
            min_val_accuracy: None,
        }
    }
}

impl EnsembleSpec {
    /// Concrete member specs for a run seed.
    pub fn member_specs(&self, seed: u64) -> Vec<MemberSpec> {
        if !self.members.is_empty() {
            return self.members.clone();
        }
        (0..self.size)
            .map(|i| {
                let transform = if i % 2 == 1 && self.dropped_features > 0 {
                    TransformKind::RotationDropout {
                        dropped: self.dropped_features,
                    }
                } else {
                    TransformKind::Rotation
                };
                MemberSpec {
                    seed: seed.wrapping_mul(100).wrapping_add(i as u64),
                    transform,
                    ..self.member.clone()
                }
            })
            .collect()
    }
}

/// Result of [`fit_ensemble`]; `warnings` lists members below the accuracy floor.
pub struct FittedEnsemble<T: Scalar> {
    pub teacher: TeacherEnsemble<T>,
    pub val_accuracy: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Trains every member on `train` (in parallel) and fits BayesPE weights on `val`.
pub fn fit_ensemble<T: Scalar>(
    spec: &EnsembleSpec,
    train: &Dataset<T>,
    val: &Dataset<T>,
    seed: u64,
) -> Result<FittedEnsemble<T>> {
    let specs = spec.member_specs(seed);
    if specs.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
    }
    let members = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| MlpMember::train(s, train).map_err(|e| Error::Numeric(format!("training member {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let labels = val
        .labels()
        .ok_or_else(|| Error::Data("validation set must be labelled".into()))?;
    let mut val_accuracy = Vec::with_capacity(members.len());
    let mut warnings = Vec::new();
    for (i, m) in members.iter().enumerate() {
        let preds = val
            .samples()
            .iter()
            .map(|s| m.predict_probs(&s.x).map(|p| p.argmax()))
            .collect::<Result<Vec<_>>>()?;
        let acc = accuracy(&preds, &labels)?;
        if let Some(floor) = spec.min_val_accuracy {
            if acc < floor {
                let msg = format!("member {i} ({}) validation accuracy {acc:.4} below {floor}", m.meta);
                warn!("{msg}");
                warnings.push(msg);
            }
        }
        val_accuracy.push(acc);
    }
    let meta = members.iter().map(|m| m.meta.clone()).collect();
    let mut teacher = TeacherEnsemble::uniform(members, meta)?;
    let w = fit_bayespe_weights(&teacher, val, spec.entropy_weight)?;
    teacher.set_weights(w)?;
    Ok(FittedEnsemble {
        teacher,
        val_accuracy,
        warnings,
    })
}
