//! Distillation losses and their gradients with respect to student logits.

use crate::dirichlet::{alpha_from_logit, DirichletParams, ProbVector};
use crate::special::{digamma, ln_gamma, sigmoid, softmax};
use crate::teacher::TeacherPredictionSet;
use crate::{Scalar, PROB_FLOOR};

/// Cross-entropy of the student against the teacher mean, student
/// probabilities floored at [`PROB_FLOOR`].
pub fn loss_softmax<T: Scalar>(student: &ProbVector<T>, teacher: &TeacherPredictionSet<T>) -> T {
    cross_entropy(teacher.predictive_mean().as_slice(), student.as_slice())
}

fn cross_entropy<T: Scalar>(target: &[T], p: &[T]) -> T {
    let floor = T::lit(PROB_FLOOR);
    -target.iter().zip(p).map(|(&t, &q)| t * q.max(floor).ln()).sum::<T>()
}

/// `m_c = Σ_n w_n ln max(p_nc, ε)`, the only teacher statistic the
/// Dirichlet loss depends on.
pub fn weighted_log_probs<T: Scalar>(teacher: &TeacherPredictionSet<T>) -> Vec<T> {
    let floor = T::lit(PROB_FLOOR);
    let mut m = vec![T::zero(); teacher.n_classes()];
    for (row, &w) in teacher.rows().iter().zip(teacher.weights()) {
        for (acc, &p) in m.iter_mut().zip(row.as_slice()) {
            *acc += w * p.max(floor).ln();
        }
    }
    m
}

/// Weighted negative Dirichlet log-likelihood of the member rows.
pub fn loss_dirichlet<T: Scalar>(d: &DirichletParams<T>, teacher: &TeacherPredictionSet<T>) -> T {
    dirichlet_nll(d.alpha(), d.alpha0(), &weighted_log_probs(teacher))
}

fn dirichlet_nll<T: Scalar>(alpha: &[T], alpha0: T, m: &[T]) -> T {
    let mut ll = ln_gamma(alpha0);
    for (&a, &mc) in alpha.iter().zip(m) {
        ll += (a - T::one()) * mc - ln_gamma(a);
    }
    -ll
}

/// Loss and `∂L/∂z` for the softmax head against a target mean.
pub fn softmax_loss_grad<T: Scalar>(z: &[T], target: &[T]) -> (T, Vec<T>) {
    let p = softmax(z);
    let loss = cross_entropy(target, &p);
    let grad = p.iter().zip(target).map(|(&pc, &tc)| pc - tc).collect();
    (loss, grad)
}

/// Loss and `∂L/∂z` for the evidential head given `m` from
/// [`weighted_log_probs`]; `α_c = 1 + softplus(z_c)`.
pub fn dirichlet_loss_grad<T: Scalar>(z: &[T], m: &[T]) -> (T, Vec<T>) {
    let alpha: Vec<T> = z.iter().map(|&v| alpha_from_logit(v)).collect();
    let alpha0: T = alpha.iter().copied().sum();
    let loss = dirichlet_nll(&alpha, alpha0, m);
    let psi0 = digamma(alpha0);
    let grad = alpha
        .iter()
        .zip(m)
        .zip(z)
        .map(|((&a, &mc), &zc)| -(psi0 - digamma(a) + mc) * sigmoid(zc))
        .collect();
    (loss, grad)
}
