//! Labelled feature-vector datasets: file I/O, splits, synthetic tasks.
//!
//! CSV files use the header `id,y,f0..f{d-1}`; an optional first line
//! `# name=<name> classes=<K>` carries metadata so that an empty file
//! still knows its class count. JSONL files hold one `{"id", "y", "x"}`
//! object per line with an optional leading `{"name", "classes"}` record.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Sample<T> {
    pub id: String,
    pub x: Vec<T>,
    pub y: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    name: String,
    k: usize,
    d: usize,
    samples: Vec<Sample<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "jsonl" | "ndjson" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn new(name: impl Into<String>, k: usize, d: usize, samples: Vec<Sample<T>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (row, s) in samples.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("row {row}: duplicate sample id {:?}", s.id)));
            }
            if s.x.len() != d {
                return Err(Error::Data(format!(
                    "row {row}: {} features, dataset has {d}",
                    s.x.len()
                )));
            }
            if let Some(y) = s.y {
                if y >= k {
                    return Err(Error::Data(format!("row {row}: label {y} outside [0, {k})")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            k,
            d,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.y.is_some())
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Copy without labels.
    pub fn unlabeled(&self) -> Self {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|s| s.y = None);
        out
    }

    /// Same ids and features, labels replaced.
    pub fn relabeled(&self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Data("label count differs from sample count".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &y)| Sample {
                y: Some(y),
                ..s.clone()
            })
            .collect();
        Self::new(self.name.clone(), self.k, self.d, samples)
    }

    fn subset(&self, name: &str, idx: &[usize]) -> Self {
        Self {
            name: format!("{}-{name}", self.name),
            k: self.k,
            d: self.d,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# name={} classes={}\nid,y", self.name, self.k);
        for f in 0..self.d {
            let _ = write!(out, ",f{f}");
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.id);
            out.push(',');
            if let Some(y) = s.y {
                let _ = write!(out, "{y}");
            }
            for v in &s.x {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut out = serde_json::json!({"name": self.name, "classes": self.k}).to_string();
        out.push('\n');
        for s in &self.samples {
            let line =
                serde_json::json!({"id": s.id, "y": s.y, "x": s.x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()});
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, format: DataFormat) -> Result<()> {
        let text = match format {
            DataFormat::Csv => self.to_csv_string(),
            DataFormat::Jsonl => self.to_jsonl_string(),
        };
        crate::io::write_atomic(path, text.as_bytes())
    }

    /// Loads a dataset. `classes` overrides the class count; otherwise it
    /// comes from the metadata line, or from the largest label.
    pub fn load(path: &Path, format: DataFormat, classes: Option<usize>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fallback_name = path
            .file_stem()
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
        let raw = match format {
            DataFormat::Csv => parse_csv(&text)?,
            DataFormat::Jsonl => parse_jsonl(&text)?,
        };
        let k = classes
            .or(raw.classes)
            .unwrap_or_else(|| raw.samples.iter().filter_map(|s| s.y).max().map_or(0, |m| m + 1));
        let d = raw.dim.or_else(|| raw.samples.first().map(|s| s.x.len())).unwrap_or(0);
        let samples = raw
            .samples
            .into_iter()
            .map(|s| Sample {
                id: s.id,
                x: s.x.into_iter().map(T::lit).collect(),
                y: s.y,
            })
            .collect();
        Self::new(raw.name.unwrap_or(fallback_name), k, d, samples).map_err(|e| match e {
            Error::Data(m) => Error::format(path, m),
            other => other,
        })
    }
}

struct RawDataset {
    name: Option<String>,
    classes: Option<usize>,
    dim: Option<usize>,
    samples: Vec<Sample<f64>>,
}

fn parse_meta(line: &str) -> (Option<String>, Option<usize>) {
    let mut name = None;
    let mut classes = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("name=") {
            name = Some(v.to_string());
        } else if let Some(v) = tok.strip_prefix("classes=") {
            classes = v.parse().ok();
        }
    }
    (name, classes)
}

fn parse_csv(text: &str) -> Result<RawDataset> {
    let (meta, body) = match text.strip_prefix('#') {
        Some(rest) => {
            let (first, body) = rest.split_once('\n').unwrap_or((rest, ""));
            (parse_meta(first), body)
        }
        None => ((None, None), text),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Data(format!("header: {e}")))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id");
    let y_col = col("y");
    let feat_cols: Vec<usize> = {
        let mut f: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix('f').and_then(|n| n.parse().ok()).map(|n| (n, i)))
            .collect();
        f.sort();
        if f.iter().enumerate().any(|(want, &(got, _))| want != got) {
            return Err(Error::Data("feature columns must be f0..f{d-1}".into()));
        }
        f.into_iter().map(|(_, i)| i).collect()
    };
    let mut samples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {row}: {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        let id = id_col.map_or_else(|| row.to_string(), |c| rec[c].to_string());
        let y = match y_col.map(|c| &rec[c]) {
            None | Some("") => None,
            Some(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Data(format!("row {row}: label {v:?} is not a class index")))?,
            ),
        };
        let x = feat_cols
            .iter()
            .map(|&c| {
                rec[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("row {row}: feature {:?} is not numeric", &rec[c])))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample { id, x, y });
    }
    Ok(RawDataset {
        name: meta.0,
        classes: meta.1,
        dim: Some(feat_cols.len()),
        samples,
    })
}

fn parse_jsonl(text: &str) -> Result<RawDataset> {
    let mut name = None;
    let mut classes = None;
    let mut samples = Vec::new();
    let mut row = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Data(format!("line {line_no}: expected an object")))?;
        let Some(x) = obj.get("x") else {
            if line_no == 0 {
                name = obj.get("name").and_then(|n| n.as_str()).map(String::from);
                classes = obj.get("classes").and_then(|c| c.as_u64()).map(|c| c as usize);
                continue;
            }
            return Err(Error::Data(format!("row {row}: missing \"x\"")));
        };
        let x = x
            .as_array()
            .ok_or_else(|| Error::Data(format!("row {row}: \"x\" is not an array")))?
            .iter()
            .map(|f| {
                f.as_f64()
                    .ok_or_else(|| Error::Data(format!("row {row}: feature {f} is not numeric")))
            })
            .collect::<Result<Vec<_>>>()?;
        let id = match obj.get("id") {
            None | Some(serde_json::Value::Null) => row.to_string(),
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
        };
        let y = match obj.get("y") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| Error::Data(format!("row {row}: label {v} is not a class index")))?
                    as usize,
            ),
        };
        if let Some(first) = samples.first() {
            let first: &Sample<f64> = first;
            if first.x.len() != x.len() {
                return Err(Error::Data(format!(
                    "row {row}: {} features, expected {}",
                    x.len(),
                    first.x.len()
                )));
            }
        }
        samples.push(Sample { id, x, y });
        row += 1;
    }
    Ok(RawDataset {
        name,
        classes,
        dim: None,
        samples,
    })
}

/// Splits `n` items by `fractions` using largest-remainder rounding.
fn allocate(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Disjoint, exhaustive train/validation/test split, stratified by label
/// when every class has at least one sample per non-empty split.
pub fn split<T: Scalar>(
    ds: &Dataset<T>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>, Dataset<T>)> {
    if fractions.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) || fractions.iter().all(|f| *f == 0.0) {
        return Err(Error::InvalidArgument(format!("bad split fractions {fractions:?}")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} do not sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        groups.entry(s.y).or_default().push(i);
    }
    let active = fractions.iter().filter(|f| **f > 0.0).count();
    let stratify = groups.len() > 1 && groups.values().all(|g| g.len() >= active);
    if !stratify && groups.len() > 1 {
        warn!(
            "dataset {}: a class has fewer than {active} samples, falling back to an unstratified split",
            ds.name
        );
    }
    if !stratify {
        groups = BTreeMap::from([(None, (0..ds.len()).collect())]);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        let counts = allocate(idx.len(), &fractions);
        let mut offset = 0;
        for (part, &c) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&idx[offset..offset + c]);
            offset += c;
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok((
        ds.subset("train", &parts[0]),
        ds.subset("val", &parts[1]),
        ds.subset("test", &parts[2]),
    ))
}

/// Gaussian class clusters with a shared isotropic covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub name: String,
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    /// Per-coordinate standard deviation σ.
    pub sigma: f64,
    /// Scale of the class means (see [`SyntheticSpec::class_means`]).
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            classes: 2,
            dim: 4,
            samples: 3200,
            sigma: 1.0,
            separation: 1.35,
            seed: 0,
        }
    }
}

/// Distribution shift applied to a [`SyntheticSpec`] to produce an
/// out-of-distribution set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSpec {
    /// Translation of every cluster, in units of σ, along a unit direction
    /// orthogonal to all class-mean differences.
    pub shift: f64,
    /// Number of clusters in the shifted set. `None` keeps the in-domain
    /// class structure and labels; `Some(m)` draws unlabeled data from the
    /// cluster layout an `m`-class task would use (`m = 1` is a single
    /// cluster at the in-domain centroid).
    pub clusters: Option<usize>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for OodSpec {
    fn default() -> Self {
        Self {
            shift: 6.0,
            clusters: None,
            samples: 1000,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("classes and dim must be positive".into()));
        }
        Ok(())
    }

    /// Two classes sit at `∓separation` on every coordinate. With more
    /// classes, class `c < dim` sits at `separation·√dim·e_c`; any further
    /// classes get seeded random directions of the same length.
    pub fn class_means(&self, classes: usize) -> Vec<Vec<f64>> {
        let (d, s) = (self.dim, self.separation);
        match classes {
            1 => vec![vec![0.0; d]],
            2 => vec![vec![-s; d], vec![s; d]],
            _ => {
                let radius = s * (d as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_cafe);
                (0..classes)
                    .map(|c| {
                        if c < d {
                            let mut m = vec![0.0; d];
                            m[c] = radius;
                            m
                        } else {
                            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                            v.into_iter().map(|x| x * radius / norm).collect()
                        }
                    })
                    .collect()
            }
        }
    }

    /// Unit vector orthogonal to every in-domain class-mean difference.
    pub fn shift_direction(&self) -> Result<Vec<f64>> {
        let means = self.class_means(self.classes);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for m in &means[1..] {
            let v: Vec<f64> = m.iter().zip(&means[0]).map(|(a, b)| a - b).collect();
            if let Some(u) = orthonormalize(v, &basis) {
                basis.push(u);
            }
        }
        for i in 0..self.dim {
            let mut e = vec![0.0; self.dim];
            e[i] = 1.0;
            if let Some(u) = orthonormalize(e, &basis) {
                return Ok(u);
            }
        }
        Err(Error::InvalidArgument(format!(
            "dimension {} leaves no direction orthogonal to {} class means",
            self.dim, self.classes
        )))
    }

    fn draw(&self, name: &str, means: &[Vec<f64>], n: usize, labeled: bool, offset: &[f64], seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let c = i % means.len();
                let x = means[c]
                    .iter()
                    .zip(offset)
                    .map(|(&m, &o)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + o + self.sigma * z
                    })
                    .collect();
                Sample {
                    id: format!("{name}-{i:06}"),
                    x,
                    y: labeled.then_some(c),
                }
            })
            .collect();
        Dataset {
            name: name.to_string(),
            k: self.classes,
            d: self.dim,
            samples,
        }
    }

    /// In-domain dataset with balanced labels.
    pub fn generate(&self) -> Result<Dataset<f64>> {
        self.validate()?;
        let means = self.class_means(self.classes);
        Ok(self.draw(&self.name, &means, self.samples, true, &vec![0.0; self.dim], self.seed))
    }

    pub fn generate_ood(&self, ood: &OodSpec) -> Result<Dataset<f64>> {
        self.validate()?;
        let (means, labeled) = match ood.clusters {
            None => (self.class_means(self.classes), true),
            Some(0) => return Err(Error::InvalidArgument("OOD cluster count must be positive".into())),
            Some(m) => (self.class_means(m), false),
        };
        let offset: Vec<f64> = if ood.shift == 0.0 {
            vec![0.0; self.dim]
        } else {
            self.shift_direction()?
                .into_iter()
                .map(|u| u * ood.shift * self.sigma)
                .collect()
        };
        let name = format!("{}-ood", self.name);
        Ok(self.draw(&name, &means, ood.samples, labeled, &offset, ood.seed))
    }
}

fn orthonormalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 1e-9).then(|| v.into_iter().map(|x| x / norm).collect())
}
