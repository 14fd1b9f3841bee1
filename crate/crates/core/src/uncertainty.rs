//! Per-sample uncertainty scores for any model kind.
//!
//! Softmax outputs carry only the entropy of the predicted distribution.
//! Dirichlet outputs and weighted ensembles additionally split it into an
//! aleatoric part (expected entropy) and an epistemic part (mutual
//! information), both in nats.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dirichlet::{DirichletParams, ProbVector};
use crate::teacher::TeacherPredictionSet;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct UncertaintyBreakdown<T> {
    pub total: T,
    pub aleatoric: Option<T>,
    pub epistemic: Option<T>,
}

impl<T: Scalar> UncertaintyBreakdown<T> {
    pub fn total_only(total: T) -> Self {
        Self {
            total,
            aleatoric: None,
            epistemic: None,
        }
    }

    /// Epistemic is defined as `total − aleatoric`.
    pub fn decomposed(total: T, aleatoric: T) -> Self {
        Self {
            total,
            aleatoric: Some(aleatoric),
            epistemic: Some(total - aleatoric),
        }
    }

    pub fn get(&self, kind: UncertaintyKind) -> Option<T> {
        match kind {
            UncertaintyKind::Total => Some(self.total),
            UncertaintyKind::Aleatoric => self.aleatoric,
            UncertaintyKind::Epistemic => self.epistemic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Total,
    Aleatoric,
    Epistemic,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 3] = [
        UncertaintyKind::Total,
        UncertaintyKind::Aleatoric,
        UncertaintyKind::Epistemic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyKind::Total => "total",
            UncertaintyKind::Aleatoric => "aleatoric",
            UncertaintyKind::Epistemic => "epistemic",
        }
    }
}

pub fn score_softmax<T: Scalar>(p: &ProbVector<T>) -> UncertaintyBreakdown<T> {
    UncertaintyBreakdown::total_only(p.entropy())
}

pub fn score_evidential<T: Scalar>(d: &DirichletParams<T>) -> UncertaintyBreakdown<T> {
    d.entropy_decomposition()
}

pub fn score_ensemble<T: Scalar>(s: &TeacherPredictionSet<T>) -> UncertaintyBreakdown<T> {
    s.entropy_decomposition()
}

/// What a model emits for one input.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction<T> {
    Categorical(ProbVector<T>),
    Dirichlet(DirichletParams<T>),
    Ensemble(TeacherPredictionSet<T>),
}

impl<T: Scalar> Prediction<T> {
    /// Predictive class probabilities.
    pub fn mean(&self) -> ProbVector<T> {
        match self {
            Prediction::Categorical(p) => p.clone(),
            Prediction::Dirichlet(d) => d.mean(),
            Prediction::Ensemble(s) => s.predictive_mean(),
        }
    }

    pub fn uncertainty(&self) -> UncertaintyBreakdown<T> {
        match self {
            Prediction::Categorical(p) => score_softmax(p),
            Prediction::Dirichlet(d) => score_evidential(d),
            Prediction::Ensemble(s) => score_ensemble(s),
        }
    }
}

/// Anything that maps a feature vector to a [`Prediction`].
pub trait Predictive<T: Scalar>: Sync {
    fn n_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &[T]) -> Result<Prediction<T>>;
}

impl<T: Scalar, P: Predictive<T> + ?Sized> Predictive<T> for &P {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        (**self).predict(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord<T> {
    pub sample_id: String,
    pub pred_class: usize,
    pub true_class: Option<usize>,
    pub probs: ProbVector<T>,
    pub scores: UncertaintyBreakdown<T>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleFailure {
    pub sample_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores<T> {
    pub records: Vec<ScoreRecord<T>>,
    pub failures: Vec<SampleFailure>,
}

impl<T: Scalar> BatchScores<T> {
    pub fn values(&self, kind: UncertaintyKind) -> Option<Vec<T>> {
        self.records.iter().map(|r| r.scores.get(kind)).collect()
    }

    pub fn mean(&self, kind: UncertaintyKind) -> Option<T> {
        let v = self.values(kind)?;
        if v.is_empty() {
            return None;
        }
        Some(v.iter().copied().sum::<T>() / T::from_count(v.len()))
    }

    /// CSV `sample_id,pred_class,true_class,total,aleatoric,epistemic`;
    /// absent values are empty fields.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let opt = |v: Option<T>| v.map_or(String::new(), |x| x.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let wrap = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record([
            "sample_id",
            "pred_class",
            "true_class",
            "total",
            "aleatoric",
            "epistemic",
        ])
        .map_err(wrap)?;
        for r in &self.records {
            w.write_record([
                r.sample_id.clone(),
                r.pred_class.to_string(),
                r.true_class.map_or(String::new(), |c| c.to_string()),
                r.scores.total.to_string(),
                opt(r.scores.aleatoric),
                opt(r.scores.epistemic),
            ])
            .map_err(wrap)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
        crate::io::write_atomic(path, &bytes)
    }
}

/// Scores every sample in dataset order. Per-sample failures (for example
/// a feature-dimension mismatch) are collected instead of aborting.
pub fn batch_scores<T: Scalar, M: Predictive<T>>(model: &M, ds: &Dataset<T>) -> BatchScores<T> {
    let results: Vec<std::result::Result<ScoreRecord<T>, SampleFailure>> = ds
        .samples()
        .par_iter()
        .map(|s| {
            model
                .predict(&s.x)
                .map(|pred| {
                    let probs = pred.mean();
                    ScoreRecord {
                        sample_id: s.id.clone(),
                        pred_class: probs.argmax(),
                        true_class: s.y,
                        scores: pred.uncertainty(),
                        probs,
                    }
                })
                .map_err(|e| SampleFailure {
                    sample_id: s.id.clone(),
                    message: e.to_string(),
                })
        })
        .collect();
    let mut out = BatchScores {
        records: Vec::with_capacity(results.len()),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(f) => out.failures.push(f),
        }
    }
    out
}
