//! On-disk teacher predictions keyed by sample id.
//!
//! JSONL: a header line `{version, n, k, weights, member_meta}` followed by
//! one `{sample_id, probs}` line per sample with `probs` an N×K array.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Predictor, TeacherEnsemble, TeacherPredictionSet};
use crate::data::Dataset;
use crate::dirichlet::ProbVector;
use crate::io::write_atomic;
use crate::{Error, Result, Scalar};

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    n: usize,
    k: usize,
    weights: Vec<f64>,
    member_meta: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    sample_id: String,
    probs: Vec<Vec<f64>>,
}

/// Teacher predictions for a fixed set of samples.
#[derive(Debug, Clone)]
pub struct TeacherCache<T> {
    weights: Vec<T>,
    member_meta: Vec<String>,
    k: usize,
    ids: Vec<String>,
    sets: Vec<TeacherPredictionSet<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> TeacherCache<T> {
    /// Queries the teacher once per sample.
    pub fn build<P: Predictor<T>>(teacher: &TeacherEnsemble<T, P>, ds: &Dataset<T>) -> Result<Self> {
        let xs: Vec<&[T]> = ds.samples().iter().map(|s| s.x.as_slice()).collect();
        let sets = teacher.predict_batch(&xs)?;
        let ids = ds.samples().iter().map(|s| s.id.clone()).collect();
        Self::from_parts(
            teacher.weights().to_vec(),
            teacher.member_meta().to_vec(),
            teacher.members()[0].n_classes(),
            ids,
            sets,
        )
    }

    fn from_parts(
        weights: Vec<T>,
        member_meta: Vec<String>,
        k: usize,
        ids: Vec<String>,
        sets: Vec<TeacherPredictionSet<T>>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate sample id {id} in teacher cache")));
            }
        }
        Ok(Self {
            weights,
            member_meta,
            k,
            ids,
            sets,
            index,
        })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn member_meta(&self) -> &[String] {
        &self.member_meta
    }

    pub fn n_members(&self) -> usize {
        self.weights.len()
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&TeacherPredictionSet<T>> {
        self.index.get(id).map(|&i| &self.sets[i])
    }

    /// Like [`get`](Self::get) but names the missing id.
    pub fn require(&self, id: &str) -> Result<&TeacherPredictionSet<T>> {
        self.get(id)
            .ok_or_else(|| Error::Data(format!("teacher cache has no entry for sample {id}")))
    }

    pub fn to_jsonl_string(&self) -> String {
        let header = Header {
            version: CACHE_VERSION,
            n: self.n_members(),
            k: self.k,
            weights: self.weights.iter().map(|w| w.as_f64()).collect(),
            member_meta: self.member_meta.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serialises");
        out.push('\n');
        for (id, set) in self.ids.iter().zip(&self.sets) {
            let rec = Record {
                sample_id: id.clone(),
                probs: set
                    .rows()
                    .iter()
                    .map(|r| r.as_slice().iter().map(|p| p.as_f64()).collect())
                    .collect(),
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serialises"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl_string().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { .. } | Error::Io { .. } => e,
            other => Error::format(path, other.to_string()),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Data("empty teacher cache".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| Error::Data(format!("bad cache header: {e}")))?;
        if header.version != CACHE_VERSION {
            return Err(Error::Data(format!(
                "teacher cache version {} (expected {CACHE_VERSION})",
                header.version
            )));
        }
        if header.weights.len() != header.n || header.member_meta.len() != header.n {
            return Err(Error::Data(format!(
                "cache header declares {} members but lists {} weights and {} labels",
                header.n,
                header.weights.len(),
                header.member_meta.len()
            )));
        }
        let weights: Vec<T> = header.weights.iter().map(|&w| T::lit(w)).collect();
        let mut ids = Vec::new();
        let mut sets = Vec::new();
        for (ln, line) in lines {
            let rec: Record = serde_json::from_str(line).map_err(|e| Error::Data(format!("line {}: {e}", ln + 1)))?;
            if rec.probs.len() != header.n || rec.probs.iter().any(|r| r.len() != header.k) {
                return Err(Error::Data(format!(
                    "line {}: sample {} does not have {}x{} probabilities",
                    ln + 1,
                    rec.sample_id,
                    header.n,
                    header.k
                )));
            }
            let rows = rec
                .probs
                .into_iter()
                .map(|r| ProbVector::new(r.into_iter().map(T::lit).collect()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Data(format!("line {}: {e}", ln + 1)))?;
            sets.push(TeacherPredictionSet::new(rows, weights.clone())?);
            ids.push(rec.sample_id);
        }
        Self::from_parts(weights, header.member_meta, header.k, ids, sets)
    }
}
