//! Dirichlet distribution over the probability simplex.
//!
//! Covers the evidential link `α_c = 1 + softplus(z_c)`, the mean
//! `α_c / α₀`, the log-density, gamma-normalisation sampling and the
//! closed-form split of predictive entropy into aleatoric and epistemic
//! parts.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::special::{argmax, digamma, entropy, ln_gamma, softplus};
use crate::uncertainty::UncertaintyBreakdown;
use crate::{Error, Result, Scalar, PROB_FLOOR};

fn simplex_tolerance<T: Scalar>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(64.0))
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
#[serde(transparent)]
pub struct ProbVector<T>(Vec<T>);

impl<T: Scalar> ProbVector<T> {
    /// Validates that entries lie in [0, 1] and sum to one.
    pub fn new(p: Vec<T>) -> Result<Self> {
        let tol = simplex_tolerance::<T>();
        if p.is_empty() {
            return Err(Error::InvalidArgument("empty probability vector".into()));
        }
        if let Some(bad) = p.iter().find(|v| !v.is_finite() || **v < -tol || **v > T::one() + tol) {
            return Err(Error::InvalidArgument(format!("probability {bad} outside [0, 1]")));
        }
        let sum: T = p.iter().copied().sum();
        if (sum - T::one()).abs() > tol {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(Self(p))
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn normalized(w: Vec<T>) -> Result<Self> {
        let sum: T = w.iter().copied().sum();
        if !(sum > T::zero()) || w.iter().any(|v| *v < T::zero() || !v.is_finite()) {
            return Err(Error::InvalidArgument("cannot normalise weights".into()));
        }
        Ok(Self(w.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![T::one() / T::from_count(k); k])
    }

    pub fn one_hot(k: usize, c: usize) -> Self {
        let mut p = vec![T::zero(); k];
        p[c] = T::one();
        Self(p)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> T {
        self.0.iter().copied().fold(T::zero(), T::max)
    }

    pub fn entropy(&self) -> T {
        entropy(&self.0)
    }

    /// Total-variation distance `½ Σ |p_c − q_c|`.
    pub fn total_variation(&self, other: &ProbVector<T>) -> T {
        T::lit(0.5) * self.0.iter().zip(&other.0).map(|(&a, &b)| (a - b).abs()).sum::<T>()
    }
}

impl<T> std::ops::Index<usize> for ProbVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// `1 + softplus(z)`, kept strictly above one even where softplus
/// underflows relative to 1.
#[inline]
pub fn alpha_from_logit<T: Scalar>(z: T) -> T {
    (T::one() + softplus(z)).max(T::one() + T::epsilon())
}

/// Concentration parameters α (all positive) with cached `α₀ = Σ α_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DirichletParams<T> {
    alpha: Vec<T>,
    alpha0: T,
}

impl<T: Scalar> DirichletParams<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::InvalidArgument("Dirichlet needs at least two classes".into()));
        }
        if let Some(bad) = alpha.iter().find(|a| !(**a > T::zero()) || !a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "concentration {bad} is not positive and finite"
            )));
        }
        let alpha0 = alpha.iter().copied().sum();
        Ok(Self { alpha, alpha0 })
    }

    /// Evidential link `α_c = 1 + softplus(z_c)`.
    pub fn from_logits(z: &[T]) -> Result<Self> {
        if let Some(bad) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logit z[{bad}] = {}", z[bad])));
        }
        Self::new(z.iter().map(|&v| alpha_from_logit(v)).collect())
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn alpha0(&self) -> T {
        self.alpha0
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// `E[p]_c = α_c / α₀`.
    pub fn mean(&self) -> ProbVector<T> {
        ProbVector(self.alpha.iter().map(|&a| a / self.alpha0).collect())
    }

    /// `ln B(α)⁻¹ = ln Γ(α₀) − Σ ln Γ(α_c)`.
    pub fn log_normalizer(&self) -> T {
        ln_gamma(self.alpha0) - self.alpha.iter().map(|&a| ln_gamma(a)).sum::<T>()
    }

    /// `ln Dir(p | α)`. Components of `p` below the probability floor are
    /// raised to it; see [`Self::log_density_flagged`].
    pub fn log_density(&self, p: &ProbVector<T>) -> T {
        self.log_density_flagged(p).0
    }

    /// Log-density plus whether any component of `p` had to be floored.
    pub fn log_density_flagged(&self, p: &ProbVector<T>) -> (T, bool) {
        assert_eq!(p.len(), self.k(), "dimension of p");
        let floor = T::lit(PROB_FLOOR);
        let mut clamped = false;
        let mut acc = self.log_normalizer();
        for (&a, &pc) in self.alpha.iter().zip(p.as_slice()) {
            let v = if pc < floor {
                clamped = true;
                floor
            } else {
                pc
            };
            acc += (a - T::one()) * v.ln();
        }
        (acc, clamped)
    }

    /// Draws `n` points by normalising independent Gamma(α_c, 1) variates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<ProbVector<T>> {
        let gammas: Vec<Gamma<f64>> = self
            .alpha
            .iter()
            .map(|a| Gamma::new(a.as_f64(), 1.0).expect("positive shape"))
            .collect();
        (0..n)
            .map(|_| {
                let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
                let sum: f64 = draws.iter().sum();
                if sum > 0.0 && sum.is_finite() {
                    ProbVector(draws.iter().map(|&g| T::lit(g / sum)).collect())
                } else {
                    // every draw underflowed: all mass on one class, chosen ∝ α
                    let u = rng.random::<f64>() * self.alpha0.as_f64();
                    let mut acc = 0.0;
                    let mut c = self.k() - 1;
                    for (i, a) in self.alpha.iter().enumerate() {
                        acc += a.as_f64();
                        if u < acc {
                            c = i;
                            break;
                        }
                    }
                    ProbVector::one_hot(self.k(), c)
                }
            })
            .collect()
    }

    /// Entropy of the mean (total), expected categorical entropy
    /// `−Σ (α_c/α₀)[ψ(α_c+1) − ψ(α₀+1)]` (aleatoric), and their difference
    /// (epistemic, the mutual information between label and `p`).
    pub fn entropy_decomposition(&self) -> UncertaintyBreakdown<T> {
        let total = self.mean().entropy();
        let psi0 = digamma(self.alpha0 + T::one());
        let aleatoric = -self
            .alpha
            .iter()
            .map(|&a| a / self.alpha0 * (digamma(a + T::one()) - psi0))
            .sum::<T>();
        UncertaintyBreakdown::decomposed(total, aleatoric)
    }

    /// Same mean, total evidence pinned to `alpha0`.
    pub fn with_alpha0(&self, alpha0: T) -> Result<Self> {
        if !(alpha0 > T::zero()) || !alpha0.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha0 must be positive, got {alpha0}")));
        }
        Self::new(self.alpha.iter().map(|&a| alpha0 * (a / self.alpha0)).collect())
    }
}

/// One evaluation point of a density grid over the simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub coords: Vec<f64>,
    pub density: f64,
}

/// Density on the interior lattice `{ p : p_c = m_c / resolution, m_c ≥ 1 }`.
pub fn simplex_grid<T: Scalar>(d: &DirichletParams<T>, resolution: usize) -> Vec<GridPoint> {
    let k = d.k();
    let mut out = Vec::new();
    let mut parts = vec![1usize; k];
    if resolution < k {
        return out;
    }
    fn rec<T: Scalar>(
        d: &DirichletParams<T>,
        res: usize,
        idx: usize,
        left: usize,
        parts: &mut [usize],
        out: &mut Vec<GridPoint>,
    ) {
        let k = parts.len();
        if idx == k - 1 {
            parts[idx] = left;
            let coords: Vec<f64> = parts.iter().map(|&m| m as f64 / res as f64).collect();
            let p = ProbVector(coords.iter().map(|&c| T::lit(c)).collect());
            out.push(GridPoint {
                density: d.log_density(&p).as_f64().exp(),
                coords,
            });
            return;
        }
        let remaining_slots = k - 1 - idx;
        for m in 1..=left - remaining_slots {
            parts[idx] = m;
            rec(d, res, idx + 1, left - m, parts, out);
        }
    }
    rec(d, resolution, 0, resolution, &mut parts, &mut out);
    out
}

/// CSV with columns `p0..p{K-1},density`.
pub fn write_simplex_grid_csv(path: &Path, points: &[GridPoint]) -> Result<()> {
    let k = points.first().map_or(0, |p| p.coords.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..k).map(|c| format!("p{c}")).collect();
    header.push("density".into());
    w.write_record(&header)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for pt in points {
        let mut row: Vec<String> = pt.coords.iter().map(f64::to_string).collect();
        row.push(pt.density.to_string());
        w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dir(a: &[f64]) -> DirichletParams<f64> {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    fn pv(p: &[f64]) -> ProbVector<f64> {
        ProbVector::new(p.to_vec()).unwrap()
    }

    #[test]
    fn link_examples() {
        let d = DirichletParams::from_logits(&[0.0f64, 0.0, 0.0]).unwrap();
        for &a in d.alpha() {
            assert!((a - (1.0 + 2f64.ln())).abs() < 1e-15);
        }
        let d = DirichletParams::from_logits(&[1000.0f64, 0.0]).unwrap();
        assert_eq!(d.alpha()[0], 1001.0);
        assert!((d.alpha()[1] - 1.693_147_180_559_945).abs() < 1e-12);
        let d = DirichletParams::from_logits(&[-40.0f64, 0.0]).unwrap();
        assert!(d.alpha()[0] > 1.0);
        assert!(matches!(
            DirichletParams::from_logits(&[f64::NAN, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn mean_examples() {
        let m = dir(&[5.0, 1.0, 1.0]).mean();
        assert_eq!(m.as_slice(), &[5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0]);
        let m = dir(&[1.0, 1.0, 1.0]).mean();
        assert_eq!(m.as_slice(), &[1.0 / 3.0; 3]);
        let a = dir(&[25.0, 5.0, 5.0]).mean();
        let b = dir(&[5.0, 1.0, 1.0]).mean();
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn log_density_examples() {
        let d = dir(&[1.0, 1.0, 1.0]);
        for p in [[0.2, 0.3, 0.5], [0.9, 0.05, 0.05]] {
            assert!((d.log_density(&pv(&p)) - 2f64.ln()).abs() < 1e-12);
        }
        assert!(dir(&[2.0, 1.0]).log_density(&pv(&[0.5, 0.5])).abs() < 1e-12);
        let d = dir(&[5.0, 5.0, 5.0]);
        let centre = d.log_density(&pv(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]));
        let off = d.log_density(&pv(&[0.6, 0.2, 0.2]));
        assert!(centre > off);
    }

    #[test]
    fn boundary_points_are_floored_and_flagged() {
        let d = dir(&[0.5, 2.0]);
        let (v, clamped) = d.log_density_flagged(&pv(&[0.0, 1.0]));
        assert!(v.is_finite());
        assert!(clamped);
        let (_, clamped) = d.log_density_flagged(&pv(&[0.3, 0.7]));
        assert!(!clamped);
    }

    /// Trapezoid rule over p ∈ [0, 1] on the 1-simplex.
    fn integrate_k2(d: &DirichletParams<f64>, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = i as f64 * h;
            let f = if x == 0.0 || x == 1.0 {
                // closed-form endpoint values for α_c ≥ 1
                let a = d.alpha();
                let edge = if x == 0.0 { a[0] } else { a[1] };
                if edge > 1.0 {
                    0.0
                } else {
                    d.log_normalizer().exp()
                }
            } else {
                d.log_density(&pv(&[x, 1.0 - x])).exp()
            };
            acc += if i == 0 || i == n { 0.5 * f } else { f };
        }
        acc * h
    }

    #[test]
    fn density_normalises_on_one_simplex() {
        for a in [[1.0, 1.0], [2.0, 3.0], [5.0, 5.0]] {
            let z = integrate_k2(&dir(&a), 100_000);
            assert!((z - 1.0).abs() < 1e-4, "alpha {a:?}: {z}");
        }
    }

    #[test]
    fn density_normalises_on_two_simplex() {
        // midpoint rule on a triangular lattice
        let d = dir(&[2.0, 3.0, 1.5]);
        let n = 600;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n - i {
                let (x, y) = ((i as f64 + 1.0 / 3.0) * h, (j as f64 + 1.0 / 3.0) * h);
                acc += d.log_density(&pv(&[x, y, 1.0 - x - y])).exp() * 0.5 * h * h;
                if j + 1 < n - i {
                    let (x, y) = ((i as f64 + 2.0 / 3.0) * h, (j as f64 + 2.0 / 3.0) * h);
                    acc += d.log_density(&pv(&[x, y, 1.0 - x - y])).exp() * 0.5 * h * h;
                }
            }
        }
        assert!((acc - 1.0).abs() < 2e-3, "{acc}");
    }

    #[test]
    fn decomposition_examples() {
        let u = dir(&[1.0, 1.0]).entropy_decomposition();
        assert!((u.total - 2f64.ln()).abs() < 1e-12);
        assert!((u.aleatoric.unwrap() - 0.5).abs() < 1e-10);
        assert!((u.epistemic.unwrap() - (2f64.ln() - 0.5)).abs() < 1e-10);

        let u = dir(&[1e6, 1e6]).entropy_decomposition();
        assert!(u.epistemic.unwrap() < 1e-5);

        for c in [0.3, 1.0, 7.0, 400.0] {
            let u = dir(&[c, c, c]).entropy_decomposition();
            assert!((u.total - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn epistemic_shrinks_with_evidence() {
        let m = [0.6, 0.3, 0.1];
        let mut last = f64::INFINITY;
        for s in [2.0, 10.0, 100.0, 1000.0] {
            let a: Vec<f64> = m.iter().map(|v| v * s).collect();
            let e = dir(&a).entropy_decomposition().epistemic.unwrap();
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn sampler_mean_and_concentration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = dir(&[5.0, 1.0, 1.0]);
        let n = 100_000;
        let draws = d.sample(&mut rng, n);
        for c in 0..3 {
            let m: f64 = draws.iter().map(|p| p[c]).sum::<f64>() / n as f64;
            assert!((m - d.mean()[c]).abs() < 0.01);
        }
        let tight = dir(&[1e9, 1e9]).sample(&mut rng, 1000);
        assert!(tight.iter().all(|p| (p[0] - 0.5).abs() < 1e-3));
    }

    #[test]
    fn uniform_marginal_for_flat_dirichlet() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mut xs: Vec<f64> = dir(&[1.0, 1.0]).sample(&mut rng, n).iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                ((i + 1) as f64 / n as f64 - x)
                    .abs()
                    .max((x - i as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS = {ks}");
    }

    #[test]
    fn small_alpha_sampling_stays_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for p in dir(&[0.01, 0.02, 0.5]).sample(&mut rng, 500) {
            assert!(ProbVector::new(p.into_vec()).is_ok());
        }
    }

    #[test]
    fn grid_covers_interior() {
        let pts = simplex_grid(&dir(&[5.0, 1.0, 1.0]), 10);
        // compositions of 10 into 3 positive parts
        assert_eq!(pts.len(), 36);
        assert!(pts.iter().all(|p| (p.coords.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        let dir_ = tempfile::tempdir().unwrap();
        let path = dir_.path().join("grid.csv");
        write_simplex_grid_csv(&path, &pts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("p0,p1,p2,density\n"));
        assert_eq!(text.lines().count(), 37);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5f64, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1f64, 1.1]).is_err());
        assert!(ProbVector::<f64>::new(vec![]).is_err());
        let p = ProbVector::normalized(vec![1.0f64, 3.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
        assert_eq!(pv(&[1.0, 0.0]).total_variation(&pv(&[0.5, 0.5])), 0.5);
    }
}
