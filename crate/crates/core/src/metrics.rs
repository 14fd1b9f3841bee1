//! Evaluation metrics: accuracy, ECE, NLL, Brier, AUROC and 1-D
//! Wasserstein distance, plus a report assembled from one prediction dump.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dirichlet::ProbVector;
use crate::io::write_atomic;
use crate::uncertainty::Predictive;
use crate::{Error, Result, Scalar, PROB_FLOOR};

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Bin of confidence `c` among `n` equal-width bins over (0, 1]: bin `b`
/// covers `(b/n, (b+1)/n]`, so a boundary value goes to the lower bin.
fn bin_index(c: f64, n: usize) -> usize {
    let scaled = c * n as f64;
    let b = scaled.ceil() as isize - 1;
    b.clamp(0, n as isize - 1) as usize
}

pub fn reliability_bins<T: Scalar>(
    probs: &[ProbVector<T>],
    labels: &[usize],
    n_bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("ECE needs at least one bin".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (p, &y) in probs.iter().zip(labels) {
        let c = p.max().as_f64();
        let b = bin_index(c, n_bins);
        count[b] += 1;
        conf[b] += c;
        hits[b] += usize::from(p.argmax() == y);
    }
    Ok((0..n_bins)
        .map(|b| {
            let n = count[b].max(1) as f64;
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                mean_confidence: if count[b] > 0 { conf[b] / n } else { 0.0 },
                accuracy: if count[b] > 0 { hits[b] as f64 / n } else { 0.0 },
            }
        })
        .collect())
}

fn ece_from_bins(bins: &[ReliabilityBin]) -> f64 {
    let m: usize = bins.iter().map(|b| b.count).sum();
    if m == 0 {
        return 0.0;
    }
    bins.iter()
        .map(|b| b.count as f64 / m as f64 * (b.accuracy - b.mean_confidence).abs())
        .sum()
}

pub fn ece<T: Scalar>(probs: &[ProbVector<T>], labels: &[usize], n_bins: usize) -> Result<f64> {
    Ok(ece_from_bins(&reliability_bins(probs, labels, n_bins)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BrierConvention {
    /// Squared error averaged over classes as well as samples.
    #[default]
    ClassAveraged,
    /// Squared error summed over classes.
    Summed,
}

pub fn brier<T: Scalar>(probs: &[ProbVector<T>], labels: &[usize], convention: BrierConvention) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        let mut s = 0.0;
        for (c, v) in p.as_slice().iter().enumerate() {
            let t = if c == y { 1.0 } else { 0.0 };
            s += (v.as_f64() - t).powi(2);
        }
        total += match convention {
            BrierConvention::ClassAveraged => s / p.len() as f64,
            BrierConvention::Summed => s,
        };
    }
    Ok(total / probs.len() as f64)
}

/// Mean of `−ln max(p_y, ε)`.
pub fn nll<T: Scalar>(probs: &[ProbVector<T>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let floor = T::lit(PROB_FLOOR);
    let s: T = probs.iter().zip(labels).map(|(p, &y)| -p[y].max(floor).ln()).sum();
    Ok(s.as_f64() / probs.len() as f64)
}

/// Twice the Mann–Whitney count: each positive/negative pair contributes 2
/// when the positive is larger and 1 on a tie.
fn mann_whitney_twice(neg: &[f64], pos: &[f64]) -> u128 {
    let mut neg = neg.to_vec();
    neg.sort_by(f64::total_cmp);
    pos.iter()
        .map(|&s| {
            let below = neg.partition_point(|&v| v < s);
            let upto = neg.partition_point(|&v| v <= s);
            (2 * below + (upto - below)) as u128
        })
        .sum()
}

/// Probability that a positive score exceeds a negative one, ties ½.
pub fn auroc(neg: &[f64], pos: &[f64]) -> Result<f64> {
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::InvalidArgument("AUROC needs scores on both sides".into()));
    }
    if neg.iter().chain(pos).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN score in AUROC input".into()));
    }
    let pairs = 2 * neg.len() as u128 * pos.len() as u128;
    Ok(mann_whitney_twice(neg, pos) as f64 / pairs as f64)
}

/// 1-D Wasserstein-1 distance between empirical distributions, the
/// integral of `|F_a − F_b|`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Wasserstein distance of an empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut x = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub n_bins: usize,
    pub brier: BrierConvention,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_bins: 10,
            brier: BrierConvention::ClassAveraged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub n_samples: usize,
    pub n_failures: usize,
    pub bins: Vec<ReliabilityBin>,
}

/// Predicted probabilities for a labelled dataset, one forward pass each.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump<T> {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub probs: Vec<ProbVector<T>>,
    pub failures: Vec<(String, String)>,
}

impl<T: Scalar> PredictionDump<T> {
    pub fn collect<M: Predictive<T>>(model: &M, ds: &Dataset<T>) -> Result<Self> {
        let labels = ds
            .labels()
            .ok_or_else(|| Error::Data(format!("{} is not fully labelled", ds.name())))?;
        let results: Vec<_> = ds
            .samples()
            .par_iter()
            .map(|s| model.predict(&s.x).map(|p| p.mean()))
            .collect();
        let mut dump = Self {
            ids: Vec::new(),
            labels: Vec::new(),
            probs: Vec::new(),
            failures: Vec::new(),
        };
        for ((s, y), r) in ds.samples().iter().zip(labels).zip(results) {
            match r {
                Ok(p) => {
                    dump.ids.push(s.id.clone());
                    dump.labels.push(y);
                    dump.probs.push(p);
                }
                Err(e) => dump.failures.push((s.id.clone(), e.to_string())),
            }
        }
        Ok(dump)
    }

    pub fn report(&self, opts: &EvalOptions) -> Result<EvalReport> {
        if self.probs.is_empty() {
            return Err(Error::Data("no successful predictions to evaluate".into()));
        }
        let preds: Vec<usize> = self.probs.iter().map(ProbVector::argmax).collect();
        let bins = reliability_bins(&self.probs, &self.labels, opts.n_bins)?;
        Ok(EvalReport {
            accuracy: accuracy(&preds, &self.labels)?,
            ece: ece_from_bins(&bins),
            nll: nll(&self.probs, &self.labels)?,
            brier: brier(&self.probs, &self.labels, opts.brier)?,
            n_samples: self.probs.len(),
            n_failures: self.failures.len(),
            bins,
        })
    }

    /// CSV with columns `sample_id,label,p_0..p_{K-1}`.
    pub fn to_csv_string(&self) -> String {
        let k = self.probs.first().map_or(0, ProbVector::len);
        let mut out = String::from("sample_id,label");
        for c in 0..k {
            out.push_str(&format!(",p_{c}"));
        }
        out.push('\n');
        for ((id, y), p) in self.ids.iter().zip(&self.labels).zip(&self.probs) {
            out.push_str(&format!("{id},{y}"));
            for v in p.as_slice() {
                out.push_str(&format!(",{}", v.as_f64()));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut dump = Self {
            ids: Vec::new(),
            labels: Vec::new(),
            probs: Vec::new(),
            failures: Vec::new(),
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))?;
            let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", row + 1));
            dump.ids.push(rec.get(0).ok_or_else(|| bad("id"))?.to_string());
            dump.labels
                .push(rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("label"))?);
            let p = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map(T::lit).map_err(|_| bad("probability")))
                .collect::<Result<Vec<_>>>()?;
            dump.probs
                .push(ProbVector::new(p).map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))?);
        }
        Ok(dump)
    }
}

/// One forward pass per sample, then every metric on the same predictions.
pub fn evaluate<T: Scalar, M: Predictive<T>>(model: &M, ds: &Dataset<T>, opts: &EvalOptions) -> Result<EvalReport> {
    PredictionDump::collect(model, ds)?.report(opts)
}
