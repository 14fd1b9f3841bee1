//! Ensemble weights from the entropy-regularised likelihood objective
//!
//! `J(w) = Σ_j [ Σ_i w_i ln p(y_j | θ_i, x_j) − Σ_i w_i ln w_i ]`
//!
//! over the probability simplex. Writing `L_i = Σ_j ln p(y_j | θ_i, x_j)`
//! and `λ` for the multiplicity of the entropy term, `J = Σ w_i L_i − λ
//! Σ w_i ln w_i`, whose unique maximiser is `w ∝ exp(L_i / λ)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{Predictor, TeacherEnsemble};
use crate::data::Dataset;
use crate::{Error, Result, Scalar, PROB_FLOOR};

/// How many times the entropy regulariser enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntropyWeight {
    /// Once per validation example (λ = M), as the summation is written.
    #[default]
    PerExample,
    /// Once in total (λ = 1).
    Single,
}

impl EntropyWeight {
    pub fn lambda<T: Scalar>(self, m: usize) -> T {
        match self {
            EntropyWeight::PerExample => T::from_count(m),
            EntropyWeight::Single => T::one(),
        }
    }
}

/// Aggregate validation log-likelihood `L_i` of every member, with
/// probabilities floored at [`PROB_FLOOR`].
pub fn log_likelihoods<T: Scalar, P: Predictor<T>>(
    teacher: &TeacherEnsemble<T, P>,
    val: &Dataset<T>,
) -> Result<Vec<T>> {
    if val.is_empty() {
        return Err(Error::Data("BayesPE weights need a non-empty validation set".into()));
    }
    let k = teacher.members()[0].n_classes();
    let floor = T::lit(PROB_FLOOR);
    let mut ll = vec![T::zero(); teacher.len()];
    for s in val.samples() {
        let y =
            s.y.ok_or_else(|| Error::Data(format!("validation sample {} has no label", s.id)))?;
        if y >= k {
            return Err(Error::Data(format!("validation label {y} outside [0, {k})")));
        }
        let set = teacher.predict_members(&s.x)?;
        for (acc, row) in ll.iter_mut().zip(set.rows()) {
            *acc += row[y].max(floor).ln();
        }
    }
    Ok(ll)
}

/// `Σ w_i L_i − λ Σ w_i ln w_i`, with `0 ln 0 = 0`.
pub fn bayespe_objective<T: Scalar>(weights: &[T], loglik: &[T], lambda: T) -> T {
    weights
        .iter()
        .zip(loglik)
        .map(|(&w, &l)| {
            let ent = if w > T::zero() { w * w.ln() } else { T::zero() };
            w * l - lambda * ent
        })
        .sum()
}

/// Closed-form maximiser `softmax(L / λ)` (max-shifted), checked against 1000 random
/// simplex points.
pub fn bayespe_weights<T: Scalar>(loglik: &[T], lambda: T) -> Result<Vec<T>> {
    if loglik.is_empty() {
        return Err(Error::InvalidArgument("no members".into()));
    }
    if !(lambda > T::zero()) {
        return Err(Error::InvalidArgument("entropy multiplicity must be positive".into()));
    }
    if let Some(i) = loglik.iter().position(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("member {i} has non-finite log-likelihood")));
    }
    let scaled: Vec<T> = loglik.iter().map(|&l| l / lambda).collect();
    let top = scaled.iter().copied().fold(T::neg_infinity(), T::max);
    let mut w: Vec<T> = scaled.iter().map(|&s| (s - top).exp()).collect();
    let sum: T = w.iter().copied().sum();
    w.iter_mut().for_each(|v| *v /= sum);

    let best = bayespe_objective(&w, loglik, lambda);
    let slack = T::lit(1e-9) * (T::one() + best.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(0xbae5);
    for _ in 0..1000 {
        let e: Vec<f64> = (0..w.len()).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = e.iter().sum();
        let cand: Vec<T> = e.iter().map(|&v| T::lit(v / s)).collect();
        if bayespe_objective(&cand, loglik, lambda) > best + slack {
            return Err(Error::Numeric(
                "closed-form BayesPE weights were beaten by a random simplex point".into(),
            ));
        }
    }
    Ok(w)
}

/// Fits ensemble weights on a labelled validation set.
pub fn fit_bayespe_weights<T: Scalar, P: Predictor<T>>(
    teacher: &TeacherEnsemble<T, P>,
    val: &Dataset<T>,
    entropy: EntropyWeight,
) -> Result<Vec<T>> {
    let ll = log_likelihoods(teacher, val)?;
    bayespe_weights(&ll, entropy.lambda(val.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::dirichlet::ProbVector;

    /// Euclidean projection onto the probability simplex (sort-based).
    fn project_simplex(v: &[f64]) -> Vec<f64> {
        let mut u = v.to_vec();
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut css = 0.0;
        let mut theta = 0.0;
        for (j, &uj) in u.iter().enumerate() {
            css += uj;
            let t = (css - 1.0) / (j + 1) as f64;
            if uj - t > 0.0 {
                theta = t;
            }
        }
        v.iter().map(|&x| (x - theta).max(0.0)).collect()
    }

    /// Projected gradient ascent on the objective from the uniform point.
    fn projected_gradient(loglik: &[f64], lambda: f64) -> Vec<f64> {
        let n = loglik.len();
        let mut w = vec![1.0 / n as f64; n];
        for _ in 0..500 {
            // the Hessian is diag(-λ / w), so this step never overshoots
            let w_min = w.iter().copied().fold(f64::INFINITY, f64::min).max(1e-12);
            let eta = w_min / lambda;
            let g: Vec<f64> = w
                .iter()
                .zip(loglik)
                .map(|(&wi, &l)| l - lambda * (wi.max(1e-300).ln() + 1.0))
                .collect();
            let step: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi + eta * gi).collect();
            let next = project_simplex(&step);
            w = next;
        }
        w
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        use rand::Rng;
        let n = rng.random_range(2..=6);
        let lambda = [1.0, 2.5, 10.0][rng.random_range(0..3)];
        let ll = (0..n).map(|_| -rng.random_range(0.0..2.0) * lambda - 5.0).collect();
        (ll, lambda)
    }

    #[test]
    fn closed_form_matches_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..50 {
            let (ll, lambda) = random_instance(&mut rng);
            let closed = bayespe_weights(&ll, lambda).unwrap();
            let iterated = projected_gradient(&ll, lambda);
            for (a, b) in closed.iter().zip(&iterated) {
                assert!((a - b).abs() < 1e-6, "case {case}: {closed:?} vs {iterated:?}");
            }
        }
    }

    #[test]
    fn fitted_weights_dominate_uniform_and_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (ll, lambda) = random_instance(&mut rng);
            let n = ll.len();
            let w = bayespe_weights(&ll, lambda).unwrap();
            let best = bayespe_objective(&w, &ll, lambda);
            assert!(best >= bayespe_objective(&vec![1.0 / n as f64; n], &ll, lambda));
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                assert!(best >= bayespe_objective(&e, &ll, lambda));
            }
        }
    }

    #[test]
    fn identical_members_get_uniform_weights() {
        for n in 1..6 {
            let w = bayespe_weights(&vec![-3.25f64; n], 1.0).unwrap();
            assert!(w.iter().all(|&v| v == 1.0 / n as f64));
        }
    }

    #[test]
    fn ln3_gap_gives_three_to_one() {
        let w = bayespe_weights(&[3f64.ln() - 2.0, -2.0], 1.0).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
    }

    /// Member 0 puts probability 1 on every label, member 1 puts 1/e.
    struct Fixed(f64);
    impl Predictor<f64> for Fixed {
        fn input_dim(&self) -> usize {
            1
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn predict_probs(&self, x: &[f64]) -> Result<ProbVector<f64>> {
            let y = x[0] as usize;
            let mut p = vec![1.0 - self.0; 2];
            p[y] = self.0;
            ProbVector::new(p)
        }
    }

    #[test]
    fn confident_member_dominates() {
        let t =
            TeacherEnsemble::uniform(vec![Fixed(1.0), Fixed((-1.0f64).exp())], vec!["a".into(), "b".into()]).unwrap();
        let samples = (0..10)
            .map(|i| Sample {
                id: i.to_string(),
                x: vec![(i % 2) as f64],
                y: Some(i % 2),
            })
            .collect();
        let val = Dataset::new("v", 2, 1, samples).unwrap();
        let ll = log_likelihoods(&t, &val).unwrap();
        assert!((ll[0] - ll[1] - 10.0).abs() < 1e-12);
        let w = fit_bayespe_weights(&t, &val, EntropyWeight::Single).unwrap();
        assert!((w[0] - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-12);
        // λ = M: mean per-example gap of 1 nat
        let w = fit_bayespe_weights(&t, &val, EntropyWeight::PerExample).unwrap();
        assert!((w[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_floored() {
        let t = TeacherEnsemble::uniform(vec![Fixed(0.0), Fixed(0.5)], vec!["a".into(), "b".into()]).unwrap();
        let val = Dataset::new(
            "v",
            2,
            1,
            vec![Sample {
                id: "0".into(),
                x: vec![0.0],
                y: Some(0),
            }],
        )
        .unwrap();
        let ll = log_likelihoods(&t, &val).unwrap();
        assert!((ll[0] - 1e-12f64.ln()).abs() < 1e-12);
        let empty = Dataset::new("e", 2, 1, vec![]).unwrap();
        assert!(log_likelihoods(&t, &empty).is_err());
    }
}
