//! Special functions and stable elementwise primitives.
//!
//! `ln_gamma` uses the Lanczos approximation with g = 7 and nine
//! coefficients, reflecting arguments below one half. `digamma` shifts the
//! argument upward with `psi(x) = psi(x + 1) - 1/x` until it reaches 6 and
//! then evaluates the asymptotic series through the x^-12 term.

use crate::Scalar;

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of |Γ(x)|. Poles (non-positive integers) give +∞.
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    if x <= T::zero() && x == x.floor() {
        return T::infinity();
    }
    if x < T::lit(0.5) {
        // Γ(x) Γ(1 - x) = π / sin(πx)
        let pi = T::PI();
        let s = (pi * x).sin().abs();
        return (pi / s).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::from_count(i));
    }
    let t = x + T::lit(LANCZOS_G + 0.5);
    let half_ln_two_pi = T::lit(0.918_938_533_204_672_8);
    half_ln_two_pi + (x + T::lit(0.5)) * t.ln() - t + acc.ln()
}

/// Digamma function ψ(x) = d/dx ln Γ(x). Poles give NaN.
pub fn digamma<T: Scalar>(x: T) -> T {
    if x <= T::zero() {
        if x == x.floor() {
            return T::nan();
        }
        // ψ(1 - x) - ψ(x) = π cot(πx)
        let pi = T::PI();
        return digamma(T::one() - x) - pi / (pi * x).tan();
    }
    let mut x = x;
    let mut shift = T::zero();
    let six = T::lit(6.0);
    while x < six {
        shift += x.recip();
        x += T::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    // Bernoulli terms B_2k / (2k x^2k), k = 1..6
    let series = inv2
        * (T::lit(1.0 / 12.0)
            - inv2
                * (T::lit(1.0 / 120.0)
                    - inv2
                        * (T::lit(1.0 / 252.0)
                            - inv2
                                * (T::lit(1.0 / 240.0)
                                    - inv2 * (T::lit(1.0 / 132.0) - inv2 * T::lit(691.0 / 32_760.0))))));
    x.ln() - T::lit(0.5) * inv - series - shift
}

/// softplus(x) = ln(1 + e^x), evaluated as max(x, 0) + ln1p(e^-|x|).
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let lse = log_sum_exp(z);
    z.iter().map(|&x| x - lse).collect()
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Shannon entropy in nats with the 0 ln 0 = 0 convention.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    p.iter().filter(|&&v| v > T::zero()).map(|&v| -v * v.ln()).sum()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
