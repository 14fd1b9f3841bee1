//! Mini-batch distillation with training-NLL early stopping.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{dirichlet_loss_grad, softmax_loss_grad, weighted_log_probs};
use super::student::{AdapterSpec, Head, StudentModel};
use crate::data::Dataset;
use crate::io::write_atomic;
use crate::nn::{Checkpoint, Gradients, Optimizer};
use crate::teacher::{MlpMember, TeacherCache};
use crate::uncertainty::Predictive;
use crate::{Error, Result, Scalar, PROB_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub head: Head,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub fixed_alpha0: Option<f64>,
    pub seed: u64,
    /// Epochs of rising NLL tolerated before stopping.
    pub patience: usize,
    pub adapter: AdapterSpec,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            head: Head::Evidential,
            max_epochs: 20,
            batch_size: 32,
            lr: 3e-3,
            fixed_alpha0: None,
            seed: 0,
            patience: 0,
            adapter: AdapterSpec::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if let Some(a0) = self.fixed_alpha0 {
            if self.head != Head::Evidential {
                return Err(Error::InvalidArgument(
                    "fixed_alpha0 is only valid with the evidential head".into(),
                ));
            }
            if !(a0 > 0.0) || !a0.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "fixed_alpha0 must be positive, got {a0}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean distillation loss over the epoch's samples.
    pub loss: f64,
    /// Training-set NLL against the ground-truth labels after the epoch.
    pub nll: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub restored_epoch: usize,
}

impl TrainingTrace {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,loss,nll,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.nll, e.seconds));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

/// Decision after observing one epoch's monitor value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Stops once the monitor has risen above the best value for more than
/// `patience` consecutive epochs. Ties keep the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    rises: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            rises: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if value > b => {
                self.rises += 1;
                StopDecision {
                    improved: false,
                    stop: self.rises > self.patience,
                }
            }
            Some((_, b)) if value == b => StopDecision {
                improved: false,
                stop: false,
            },
            _ => {
                self.best = Some((epoch, value));
                self.rises = 0;
                StopDecision {
                    improved: true,
                    stop: false,
                }
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Mean negative log-probability of the true labels, floored at
/// [`PROB_FLOOR`]. Unlabelled samples are an error.
pub fn student_nll<T: Scalar, M: Predictive<T>>(model: &M, ds: &Dataset<T>) -> Result<T> {
    if ds.is_empty() {
        return Err(Error::Data("NLL of an empty dataset".into()));
    }
    let floor = T::lit(PROB_FLOOR);
    let terms = ds
        .samples()
        .par_iter()
        .map(|s| {
            let y =
                s.y.ok_or_else(|| Error::Data(format!("sample {} has no label", s.id)))?;
            let p = model.predict(&s.x)?.mean();
            if y >= p.len() {
                return Err(Error::Data(format!("label {y} of sample {} out of range", s.id)));
            }
            Ok(-p[y].max(floor).ln())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(terms.into_iter().sum::<T>() / T::from_count(ds.len()))
}

/// Builds a student from `backbone` and distils the cached teacher into it.
pub fn train_student<T: Scalar>(
    backbone: &MlpMember<T>,
    cache: &TeacherCache<T>,
    train: &Dataset<T>,
    cfg: &DistillConfig,
) -> Result<(StudentModel<T>, TrainingTrace)> {
    let mut student = init_student(backbone, cfg)?;
    let trace = fit_student(&mut student, cache, train, cfg, |_, _| {})?;
    Ok((student, trace))
}

/// The untrained student [`train_student`] starts from.
pub fn init_student<T: Scalar>(backbone: &MlpMember<T>, cfg: &DistillConfig) -> Result<StudentModel<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut student = StudentModel::from_backbone(backbone, cfg.head, &cfg.adapter, &mut rng)?;
    if let Some(a0) = cfg.fixed_alpha0 {
        student.set_fixed_alpha0(Some(T::lit(a0)))?;
    }
    Ok(student)
}

/// Training loop on an existing student. `on_step(step, grads)` sees the
/// batch-mean gradient before every optimizer step.
pub fn fit_student<T: Scalar>(
    student: &mut StudentModel<T>,
    cache: &TeacherCache<T>,
    train: &Dataset<T>,
    cfg: &DistillConfig,
    mut on_step: impl FnMut(usize, &Gradients<T>),
) -> Result<TrainingTrace> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cache.n_classes() != student.n_classes() {
        return Err(Error::Shape(format!(
            "teacher has {} classes, student {}",
            cache.n_classes(),
            student.n_classes()
        )));
    }
    // Teacher targets: the mean for softmax, Σ w ln p for evidential.
    let targets = train
        .samples()
        .iter()
        .map(|s| {
            let set = cache.require(&s.id)?;
            Ok(match student.head {
                Head::Softmax => set.predictive_mean().into_vec(),
                Head::Evidential => weighted_log_probs(set),
            })
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    let inputs = train
        .samples()
        .iter()
        .map(|s| student.features(&s.x))
        .collect::<Result<Vec<_>>>()?;

    // Fixed α₀ is an inference-time constraint only.
    let fixed = student.fixed_alpha0.take();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_d157);
    let mut opt = Optimizer::adam();
    let lr = T::lit(cfg.lr);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best: Option<Checkpoint<T>> = None;
    let mut trace = TrainingTrace::default();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = T::zero();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::new();
            let mut batch_loss = T::zero();
            for &i in batch {
                let z = student.network.forward(&inputs[i])?;
                let (loss, dz) = match student.head {
                    Head::Softmax => softmax_loss_grad(&z, &targets[i]),
                    Head::Evidential => dirichlet_loss_grad(&z, &targets[i]),
                };
                batch_loss += loss;
                grads.accumulate(&student.network.backward(&dz)?);
            }
            if !batch_loss.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|&i| train.samples()[i].id.as_str()).collect();
                return Err(Error::Numeric(format!(
                    "non-finite loss {batch_loss} in epoch {epoch}, batch {b} (samples {})",
                    ids.join(", ")
                )));
            }
            loss_sum += batch_loss;
            grads.scale(T::one() / T::from_count(batch.len()));
            on_step(step, &grads);
            step += 1;
            opt.step(&mut student.network, &grads, lr)?;
        }
        let nll = student_nll(&*student, train)?.as_f64();
        let loss = loss_sum.as_f64() / inputs.len() as f64;
        trace.epochs.push(EpochRecord {
            epoch,
            loss,
            nll,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: loss {loss:.6} nll {nll:.6}");
        trace.stopped_epoch = epoch;
        let decision = stopper.observe(epoch, nll);
        if decision.improved {
            best = Some(Checkpoint::save(&student.network, epoch, T::lit(nll)));
        }
        if decision.stop {
            break;
        }
    }
    let best = best.expect("at least one epoch ran");
    best.restore(&mut student.network)?;
    trace.restored_epoch = best.epoch;
    student.fixed_alpha0 = fixed;
    Ok(trace)
}
