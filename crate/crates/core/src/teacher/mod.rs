//! Weighted-hypothesis teacher.
//!
//! A teacher holds N members (stand-ins for prompt variants) and simplex
//! weights. Its predictive distribution is the weighted mean of member
//! predictions; disagreement between members is the epistemic signal.

mod bayespe;
mod cache;
mod ensemble;
mod member;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bayespe::{bayespe_objective, bayespe_weights, fit_bayespe_weights, log_likelihoods, EntropyWeight};
pub use cache::{TeacherCache, CACHE_VERSION};
pub use ensemble::{fit_ensemble, EnsembleSpec, FittedEnsemble};
pub use member::{FeatureTransform, MemberSpec, MlpMember, Predictor, TransformKind};

use crate::dirichlet::ProbVector;
use crate::uncertainty::{Prediction, Predictive, UncertaintyBreakdown};
use crate::{Error, Result, Scalar};

fn check_simplex<T: Scalar>(w: &[T]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("empty weight vector".into()));
    }
    if w.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let s: T = w.iter().copied().sum();
    if (s - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) {
        return Err(Error::InvalidArgument(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// Per-member predictions for one input, with the ensemble weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TeacherPredictionSet<T> {
    rows: Vec<ProbVector<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> TeacherPredictionSet<T> {
    pub fn new(rows: Vec<ProbVector<T>>, weights: Vec<T>) -> Result<Self> {
        check_simplex(&weights)?;
        if rows.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} member rows for {} weights",
                rows.len(),
                weights.len()
            )));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("member rows differ in class count".into()));
        }
        Ok(Self { rows, weights })
    }

    pub fn rows(&self) -> &[ProbVector<T>] {
        &self.rows
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn n_members(&self) -> usize {
        self.rows.len()
    }

    pub fn n_classes(&self) -> usize {
        self.rows[0].len()
    }

    /// `Σ_i w_i p(y | x, θ_i)`.
    pub fn predictive_mean(&self) -> ProbVector<T> {
        let mut acc = vec![T::zero(); self.n_classes()];
        for (row, &w) in self.rows.iter().zip(&self.weights) {
            for (a, &p) in acc.iter_mut().zip(row.as_slice()) {
                *a += w * p;
            }
        }
        ProbVector::normalized(acc).expect("convex combination of probability vectors")
    }

    /// Law of total entropy over the weighted members: total is the entropy
    /// of the mean, aleatoric the weighted mean of member entropies.
    pub fn entropy_decomposition(&self) -> UncertaintyBreakdown<T> {
        let total = self.predictive_mean().entropy();
        let aleatoric = self.rows.iter().zip(&self.weights).map(|(r, &w)| w * r.entropy()).sum();
        UncertaintyBreakdown::decomposed(total, aleatoric)
    }
}

/// N members with simplex weights and per-member labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar, P: Serialize",
    deserialize = "T: Scalar, P: serde::de::DeserializeOwned"
))]
pub struct TeacherEnsemble<T, P = MlpMember<T>> {
    members: Vec<P>,
    weights: Vec<T>,
    member_meta: Vec<String>,
}

impl<T: Scalar, P: Predictor<T>> TeacherEnsemble<T, P> {
    pub fn new(members: Vec<P>, weights: Vec<T>, member_meta: Vec<String>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("teacher needs at least one member".into()));
        }
        check_simplex(&weights)?;
        if weights.len() != members.len() || member_meta.len() != members.len() {
            return Err(Error::Shape(format!(
                "{} members, {} weights, {} labels",
                members.len(),
                weights.len(),
                member_meta.len()
            )));
        }
        let k = members[0].n_classes();
        let d = members[0].input_dim();
        if let Some(i) = members.iter().position(|m| m.n_classes() != k || m.input_dim() != d) {
            return Err(Error::Shape(format!("member {i} disagrees on input or output size")));
        }
        Ok(Self {
            members,
            weights,
            member_meta,
        })
    }

    /// Re-checks the invariants of a deserialized ensemble.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.members, self.weights, self.member_meta)
    }

    /// Equal weights.
    pub fn uniform(members: Vec<P>, member_meta: Vec<String>) -> Result<Self> {
        let n = members.len();
        let w = vec![T::one() / T::from_count(n.max(1)); n];
        Self::new(members, w, member_meta)
    }

    pub fn members(&self) -> &[P] {
        &self.members
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn member_meta(&self) -> &[String] {
        &self.member_meta
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn set_weights(&mut self, weights: Vec<T>) -> Result<()> {
        check_simplex(&weights)?;
        if weights.len() != self.members.len() {
            return Err(Error::Shape("weight count differs from member count".into()));
        }
        self.weights = weights;
        Ok(())
    }

    /// Index of the highest-weight member (lowest index on ties).
    pub fn best_member(&self) -> usize {
        crate::special::argmax(&self.weights)
    }

    /// One probability row per member for input `x`.
    pub fn predict_members(&self, x: &[T]) -> Result<TeacherPredictionSet<T>> {
        let rows = self
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.predict_probs(x)
                    .map_err(|e| Error::State(format!("teacher member {i} failed: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        TeacherPredictionSet::new(rows, self.weights.clone())
    }

    /// Member predictions for many inputs, in input order.
    pub fn predict_batch(&self, xs: &[&[T]]) -> Result<Vec<TeacherPredictionSet<T>>> {
        xs.par_iter().map(|x| self.predict_members(x)).collect()
    }
}

impl<T: Scalar, P: Predictor<T>> Predictive<T> for TeacherEnsemble<T, P> {
    fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        self.predict_members(x).map(Prediction::Ensemble)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(p: &[f64]) -> ProbVector<f64> {
        ProbVector::new(p.to_vec()).unwrap()
    }

    /// Member returning a fixed row, optionally failing.
    struct Const(Option<Vec<f64>>);
    impl Predictor<f64> for Const {
        fn input_dim(&self) -> usize {
            2
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn predict_probs(&self, x: &[f64]) -> Result<ProbVector<f64>> {
            match &self.0 {
                Some(p) => ProbVector::new(p.iter().map(|v| v + 0.0 * x[0]).collect()),
                None => Err(Error::Numeric("boom".into())),
            }
        }
    }

    fn meta(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn predict_members_examples() {
        let t = TeacherEnsemble::uniform(vec![Const(Some(vec![0.3, 0.7]))], meta(1)).unwrap();
        let s = t.predict_members(&[0.0, 0.0]).unwrap();
        assert_eq!(s.rows(), &[pv(&[0.3, 0.7])]);

        let t =
            TeacherEnsemble::uniform(vec![Const(Some(vec![0.2, 0.8])), Const(Some(vec![0.2, 0.8]))], meta(2)).unwrap();
        let s = t.predict_members(&[0.0, 0.0]).unwrap();
        assert_eq!(s.rows()[0], s.rows()[1]);

        let t = TeacherEnsemble::uniform(vec![Const(Some(vec![0.5, 0.5])), Const(None)], meta(2)).unwrap();
        let err = t.predict_members(&[0.0, 0.0]).unwrap_err().to_string();
        assert!(err.contains("member 1"), "{err}");
    }

    #[test]
    fn predictive_mean_examples() {
        let s = TeacherPredictionSet::new(vec![pv(&[0.9, 0.1]), pv(&[0.2, 0.8])], vec![1.0, 0.0]).unwrap();
        assert_eq!(s.predictive_mean(), pv(&[0.9, 0.1]));
        let s = TeacherPredictionSet::new(vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])], vec![0.5, 0.5]).unwrap();
        assert_eq!(s.predictive_mean(), pv(&[0.5, 0.5]));
        let rows = [[0.1, 0.2, 0.7], [0.5, 0.25, 0.25], [0.3, 0.3, 0.4]];
        let w = [0.2, 0.3, 0.5];
        let s = TeacherPredictionSet::new(rows.iter().map(|r| pv(r)).collect(), w.to_vec()).unwrap();
        let m = s.predictive_mean();
        for c in 0..3 {
            let hand = 0.2 * rows[0][c] + 0.3 * rows[1][c] + 0.5 * rows[2][c];
            assert!((m[c] - hand).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_examples() {
        let s = TeacherPredictionSet::new(vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])], vec![0.5, 0.5]).unwrap();
        let u = s.entropy_decomposition();
        assert!((u.total - 2f64.ln()).abs() < 1e-15);
        assert_eq!(u.aleatoric, Some(0.0));
        assert!((u.epistemic.unwrap() - 2f64.ln()).abs() < 1e-15);

        let s = TeacherPredictionSet::new(vec![pv(&[0.3, 0.7]); 3], vec![0.2, 0.3, 0.5]).unwrap();
        assert!(s.entropy_decomposition().epistemic.unwrap().abs() < 1e-15);

        let s = TeacherPredictionSet::new(vec![pv(&[0.8, 0.2]), pv(&[0.6, 0.4])], vec![0.5, 0.5]).unwrap();
        let u = s.entropy_decomposition();
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((u.total - h(0.7)).abs() < 1e-12);
        assert!((u.aleatoric.unwrap() - 0.5 * (h(0.8) + h(0.6))).abs() < 1e-12);
        assert!((u.total - 0.6109).abs() < 1e-4);
        assert!((u.aleatoric.unwrap() - 0.5867).abs() < 1e-4);
        assert!((u.epistemic.unwrap() - 0.0242).abs() < 1e-4);
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(TeacherPredictionSet::new(vec![pv(&[1.0, 0.0])], vec![0.9]).is_err());
        assert!(TeacherPredictionSet::new(vec![pv(&[1.0, 0.0])], vec![0.5, 0.5]).is_err());
        assert!(TeacherEnsemble::new(vec![Const(Some(vec![0.5, 0.5]))], vec![1.0], meta(2)).is_err());
    }
}
