//! Pipeline stages. Each reads its inputs from the run root, writes into
//! its own subdirectory, and records a manifest there.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use evdistill::data::{split, DataFormat, Dataset};
use evdistill::distill::{init_student, student_nll, train_student, Head, StudentModel};
use evdistill::metrics::{auroc, wasserstein1, PredictionDump};
use evdistill::teacher::{fit_ensemble, log_likelihoods, MlpMember, TeacherCache, TeacherEnsemble};
use evdistill::uncertainty::{batch_scores, BatchScores, Predictive, UncertaintyKind};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{Config, WeightSplit};
use crate::error::{CliError, CliResult};
use crate::manifest::{stage_hash, RunManifest};

pub type Teacher = TeacherEnsemble<f64>;
pub type Student = StudentModel<f64>;
type Named = Vec<(String, Box<dyn Predictive<f64>>)>;

pub const DATA: &str = "data";
pub const TEACHER: &str = "teacher";
pub const DISTILL: &str = "distill";
pub const EVAL: &str = "eval";
pub const OOD: &str = "ood";
pub const BENCH: &str = "bench";
pub const SWEEP: &str = "alpha-sweep";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
    DryRun,
}

pub struct Context {
    pub root: PathBuf,
    pub cfg: Config,
    pub force: bool,
    pub dry_run: bool,
}

fn rel(dir: &str, file: &str) -> String {
    format!("{dir}/{file}")
}

impl Context {
    pub fn new(root: impl Into<PathBuf>, cfg: Config) -> Self {
        Self {
            root: root.into(),
            cfg,
            force: false,
            dry_run: false,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Shared stage driver: input check, dry run, up-to-date check, body,
    /// manifest. `body` returns the written outputs relative to the root.
    fn stage<S: Serialize>(
        &self,
        command: &str,
        dir: &str,
        section: &S,
        inputs: Vec<String>,
        body: impl FnOnce(&Path) -> CliResult<Vec<String>>,
    ) -> CliResult<Outcome> {
        let missing: Vec<&String> = inputs.iter().filter(|i| !self.path(i).is_file()).collect();
        if self.dry_run {
            for m in &missing {
                info!("{command}: would read {m} (not present yet)");
            }
            info!("{command}: config valid, would write into {}", self.path(dir).display());
            return Ok(Outcome::DryRun);
        }
        if let Some(m) = missing.first() {
            let producer = match m.split('/').next() {
                Some(DATA) => "make-data",
                Some(TEACHER) => "fit-teacher",
                Some(DISTILL) => "distill",
                _ => "the stage that writes it",
            };
            return Err(CliError::data(format!(
                "{command}: missing input {}; run {producer} first",
                self.path(m).display()
            )));
        }
        let hash = stage_hash(command, section, self.cfg.seed, &self.root, &inputs)?;
        let out_dir = self.path(dir);
        if !self.force {
            if let Some(m) = RunManifest::read(&out_dir) {
                if m.is_current(&self.root, &hash) {
                    info!("{command}: up to date (use --force to rerun)");
                    return Ok(Outcome::UpToDate);
                }
            }
        }
        fs::create_dir_all(&out_dir)?;
        let start = Instant::now();
        let outputs = body(&out_dir).map_err(|e| e.context(format!("{command} failed")))?;
        RunManifest {
            command: command.to_string(),
            config_hash: hash,
            seed: self.cfg.seed,
            inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        }
        .write(&out_dir)?;
        info!("{command}: done in {:.2}s", start.elapsed().as_secs_f64());
        Ok(Outcome::Ran)
    }

    fn heads(&self) -> &[Head] {
        &self.cfg.distill.heads
    }

    fn student_files(&self) -> Vec<String> {
        self.heads()
            .iter()
            .map(|h| rel(DISTILL, &format!("student-{}.json", h.name())))
            .collect()
    }

    fn load_teacher(&self) -> CliResult<Teacher> {
        let t: Teacher = read_json(&self.path(&rel(TEACHER, "teacher.json")))?;
        Ok(t.validated()?)
    }

    fn load_student(&self, head: Head) -> CliResult<Student> {
        read_json(&self.path(&rel(DISTILL, &format!("student-{}.json", head.name()))))
    }

    fn load_data(&self, name: &str) -> CliResult<Dataset<f64>> {
        load_dataset(&self.path(&rel(DATA, &format!("{name}.csv"))))
    }

    fn ood_names(&self) -> Vec<String> {
        self.cfg.ood.sets.iter().map(|s| format!("ood-{}", s.name)).collect()
    }

    /// Teacher plus every configured student, in report order.
    fn models(&self) -> CliResult<Named> {
        let mut out: Named = vec![("teacher".into(), Box::new(self.load_teacher()?))];
        for &h in self.heads() {
            out.push((h.name().to_string(), Box::new(self.load_student(h)?)));
        }
        Ok(out)
    }
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset<f64>> {
    let fmt = DataFormat::from_path(path)
        .ok_or_else(|| CliError::config(format!("{}: unknown data format (use .csv or .jsonl)", path.display())))?;
    Ok(Dataset::load(path, fmt, None)?)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    evdistill::io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> CliResult<D> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    evdistill::io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

// ---------------------------------------------------------------- make-data

pub fn make_data(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let mut inputs = Vec::new();
    if let Some(src) = &cfg.data.source {
        inputs.push(src.display().to_string());
    }
    for s in &cfg.ood.sets {
        if let Some(f) = &s.file {
            inputs.push(f.display().to_string());
        }
    }
    let section = (&cfg.data, &cfg.ood.sets);
    let ctx_inputs: Vec<String> = inputs
        .iter()
        .map(|p| {
            let abs = std::path::absolute(p).unwrap_or_else(|_| PathBuf::from(p));
            pathdiff(&abs, &ctx.root)
        })
        .collect();
    ctx.stage("make-data", DATA, &section, ctx_inputs, |dir| {
        let seed = cfg.seed;
        let (full, synthetic) = match &cfg.data.source {
            Some(src) => (load_dataset(src)?, None),
            None => {
                let spec = evdistill::data::SyntheticSpec {
                    seed: cfg.data.synthetic.seed.wrapping_add(seed),
                    ..cfg.data.synthetic.clone()
                };
                (spec.generate()?, Some(spec))
            }
        };
        let (train, val, test) = split(&full, cfg.data.split, seed)?;
        let mut outputs = Vec::new();
        for (name, ds) in [("train", &train), ("val", &val), ("test", &test)] {
            ds.save(&dir.join(format!("{name}.csv")), DataFormat::Csv)?;
            outputs.push(rel(DATA, &format!("{name}.csv")));
        }
        for set in &cfg.ood.sets {
            let ds = match (&set.file, &synthetic) {
                (Some(f), _) => load_dataset(f)?,
                (None, Some(spec)) => {
                    let shift = evdistill::data::OodSpec {
                        seed: set.shift.seed.wrapping_add(seed),
                        ..set.shift.clone()
                    };
                    spec.generate_ood(&shift)?.with_name(set.name.clone())
                }
                (None, None) => {
                    return Err(CliError::config(format!(
                        "ood set {} needs a file when data.source is set",
                        set.name
                    )))
                }
            };
            if ds.dim() != full.dim() {
                return Err(CliError::data(format!(
                    "ood set {} has {} features, in-domain data has {}",
                    set.name,
                    ds.dim(),
                    full.dim()
                )));
            }
            let file = format!("ood-{}.csv", set.name);
            ds.save(&dir.join(&file), DataFormat::Csv)?;
            outputs.push(rel(DATA, &file));
        }
        info!(
            "make-data: {} train / {} val / {} test samples, {} ood sets",
            train.len(),
            val.len(),
            test.len(),
            cfg.ood.sets.len()
        );
        Ok(outputs)
    })
}

/// `path` relative to `base` when it lies under it, else unchanged.
fn pathdiff(path: &Path, base: &Path) -> String {
    let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
    match path.strip_prefix(&base) {
        Ok(r) => r.display().to_string(),
        Err(_) => path.display().to_string(),
    }
}

// -------------------------------------------------------------- fit-teacher

#[derive(Debug, Serialize)]
struct WeightsReport<'a> {
    weights: &'a [f64],
    member_meta: &'a [String],
    log_likelihoods: Vec<f64>,
    val_accuracy: &'a [f64],
    best_member: usize,
    weight_split: WeightSplit,
    warnings: &'a [String],
}

pub fn fit_teacher(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let inputs = vec![rel(DATA, "train.csv"), rel(DATA, "val.csv")];
    let section = (&cfg.ensemble, &cfg.teacher);
    ctx.stage("fit-teacher", TEACHER, &section, inputs, |dir| {
        let train = ctx.load_data("train")?;
        let fit_on = match cfg.teacher.weight_split {
            WeightSplit::Val => ctx.load_data("val")?,
            WeightSplit::Train => train.clone(),
        };
        let fit = fit_ensemble(&cfg.ensemble, &train, &fit_on, cfg.seed)?;
        let teacher = fit.teacher;
        let ll = log_likelihoods(&teacher, &fit_on)?;
        info!("fit-teacher: weights {:?}", teacher.weights());
        write_json(&dir.join("teacher.json"), &teacher)?;
        write_json(
            &dir.join("weights.json"),
            &WeightsReport {
                weights: teacher.weights(),
                member_meta: teacher.member_meta(),
                log_likelihoods: ll,
                val_accuracy: &fit.val_accuracy,
                best_member: teacher.best_member(),
                weight_split: cfg.teacher.weight_split,
                warnings: &fit.warnings,
            },
        )?;
        TeacherCache::build(&teacher, &train)?.write(&dir.join("cache.jsonl"))?;
        Ok(vec![
            rel(TEACHER, "teacher.json"),
            rel(TEACHER, "weights.json"),
            rel(TEACHER, "cache.jsonl"),
        ])
    })
}

// ------------------------------------------------------------------ distill

#[derive(Debug, Serialize)]
struct DistillSummary {
    head: Head,
    epochs_run: usize,
    stopped_epoch: usize,
    restored_epoch: usize,
    train_nll: f64,
}

pub fn distill(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let inputs = vec![
        rel(DATA, "train.csv"),
        rel(TEACHER, "teacher.json"),
        rel(TEACHER, "cache.jsonl"),
    ];
    ctx.stage("distill", DISTILL, &cfg.distill, inputs, |dir| {
        let train = ctx.load_data("train")?;
        let teacher = ctx.load_teacher()?;
        let cache = TeacherCache::<f64>::read(&ctx.path(&rel(TEACHER, "cache.jsonl")))?;
        let backbone = &teacher.members()[teacher.best_member()];
        let mut outputs = Vec::new();
        let mut summary = Vec::new();
        for &head in ctx.heads() {
            let dc = cfg.distill.for_head(head, cfg.seed);
            let (student, trace) = train_student(backbone, &cache, &train, &dc)?;
            let name = head.name();
            write_json(&dir.join(format!("student-{name}.json")), &student)?;
            trace.write_csv(&dir.join(format!("trace-{name}.csv")))?;
            outputs.push(rel(DISTILL, &format!("student-{name}.json")));
            outputs.push(rel(DISTILL, &format!("trace-{name}.csv")));
            let nll = student_nll(&student, &train)?;
            info!(
                "distill: {name} stopped after epoch {}, restored epoch {} (train NLL {nll:.5})",
                trace.stopped_epoch, trace.restored_epoch
            );
            summary.push(DistillSummary {
                head,
                epochs_run: trace.epochs.len(),
                stopped_epoch: trace.stopped_epoch,
                restored_epoch: trace.restored_epoch,
                train_nll: nll,
            });
        }
        write_json(&dir.join("summary.json"), &summary)?;
        outputs.push(rel(DISTILL, "summary.json"));
        Ok(outputs)
    })
}

// --------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub n_samples: usize,
    pub n_failures: usize,
}

pub fn eval(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let mut inputs = vec![rel(DATA, "test.csv"), rel(TEACHER, "teacher.json")];
    inputs.extend(ctx.student_files());
    let section = (&cfg.eval, &cfg.distill);
    ctx.stage("eval", EVAL, &section, inputs, |dir| {
        let test = ctx.load_data("test")?;
        let teacher = ctx.load_teacher()?;
        let backbone: &MlpMember<f64> = &teacher.members()[teacher.best_member()];
        let mut models: Named = Vec::new();
        for &h in ctx.heads() {
            let untrained = init_student(backbone, &cfg.distill.for_head(h, cfg.seed))?;
            models.push((format!("untrained-{}", h.name()), Box::new(untrained)));
        }
        let mut rows = Vec::new();
        let mut outputs = Vec::new();
        let trained = ctx.models()?;
        for (name, model) in trained.iter().chain(models.iter()) {
            let dump = PredictionDump::collect(&model.as_ref(), &test)?;
            for (id, msg) in &dump.failures {
                warn!("eval: {name} failed on {id}: {msg}");
            }
            let r = dump.report(&cfg.eval)?;
            dump.write_csv(&dir.join(format!("predictions-{name}.csv")))?;
            let mut bins = String::from("lower,upper,count,mean_confidence,accuracy\n");
            for b in &r.bins {
                bins.push_str(&format!(
                    "{},{},{},{},{}\n",
                    b.lower, b.upper, b.count, b.mean_confidence, b.accuracy
                ));
            }
            write_text(&dir.join(format!("reliability-{name}.csv")), &bins)?;
            outputs.push(rel(EVAL, &format!("predictions-{name}.csv")));
            outputs.push(rel(EVAL, &format!("reliability-{name}.csv")));
            info!(
                "eval: {name:20} acc {:.4} ece {:.4} nll {:.4} brier {:.4}",
                r.accuracy, r.ece, r.nll, r.brier
            );
            rows.push(EvalRow {
                model: name.clone(),
                accuracy: r.accuracy,
                ece: r.ece,
                nll: r.nll,
                brier: r.brier,
                n_samples: r.n_samples,
                n_failures: r.n_failures,
            });
        }
        let mut csv = String::from("model,accuracy,ece,nll,brier,n_samples,n_failures\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model, r.accuracy, r.ece, r.nll, r.brier, r.n_samples, r.n_failures
            ));
        }
        write_json(&dir.join("report.json"), &rows)?;
        write_text(&dir.join("report.csv"), &csv)?;
        outputs.push(rel(EVAL, "report.json"));
        outputs.push(rel(EVAL, "report.csv"));
        Ok(outputs)
    })
}

// ---------------------------------------------------------------------- ood

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub total: f64,
    pub aleatoric: Option<f64>,
    pub epistemic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScore {
    pub kind: UncertaintyKind,
    pub w1: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub model: String,
    pub dataset: String,
    pub n: usize,
    pub mean: MeanScores,
    /// Comparisons against the in-domain test set; empty for that set.
    pub versus_id: Vec<ShiftScore>,
}

impl OodRow {
    pub fn shift(&self, kind: UncertaintyKind) -> Option<&ShiftScore> {
        self.versus_id.iter().find(|s| s.kind == kind)
    }
}

fn histogram_csv(sets: &[(&str, Vec<f64>)], bins: usize) -> String {
    let all = sets.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() {
        (lo, if hi > lo { hi } else { lo + 1.0 })
    } else {
        (0.0, 1.0)
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![vec![0usize; bins]; sets.len()];
    for (c, (_, vals)) in counts.iter_mut().zip(sets) {
        for &v in vals {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            c[b] += 1;
        }
    }
    let mut out = String::from("bin_lo,bin_hi");
    for (name, _) in sets {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for b in 0..bins {
        out.push_str(&format!("{},{}", lo + width * b as f64, lo + width * (b + 1) as f64));
        for (c, (_, vals)) in counts.iter().zip(sets) {
            let frac = if vals.is_empty() {
                0.0
            } else {
                c[b] as f64 / vals.len() as f64
            };
            out.push_str(&format!(",{frac}"));
        }
        out.push('\n');
    }
    out
}

fn mean_scores(b: &BatchScores<f64>) -> MeanScores {
    MeanScores {
        total: b.mean(UncertaintyKind::Total).unwrap_or(f64::NAN),
        aleatoric: b.mean(UncertaintyKind::Aleatoric),
        epistemic: b.mean(UncertaintyKind::Epistemic),
    }
}

pub fn ood(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let mut inputs = vec![rel(DATA, "test.csv"), rel(TEACHER, "teacher.json")];
    inputs.extend(ctx.student_files());
    inputs.extend(ctx.ood_names().iter().map(|n| rel(DATA, &format!("{n}.csv"))));
    let section = (&cfg.ood, &cfg.distill.heads);
    ctx.stage("ood", OOD, &section, inputs, |dir| {
        let mut sets = vec![("id".to_string(), ctx.load_data("test")?)];
        for (set, file) in cfg.ood.sets.iter().zip(ctx.ood_names()) {
            sets.push((set.name.clone(), ctx.load_data(&file)?));
        }
        let mut rows = Vec::new();
        let mut outputs = Vec::new();
        for (model_name, model) in ctx.models()? {
            let scores: Vec<BatchScores<f64>> = sets.iter().map(|(_, ds)| batch_scores(&model.as_ref(), ds)).collect();
            for ((set_name, _), s) in sets.iter().zip(&scores) {
                for f in &s.failures {
                    warn!("ood: {model_name} failed on {}: {}", f.sample_id, f.message);
                }
                let file = format!("scores-{model_name}-{set_name}.csv");
                s.write_csv(&dir.join(&file))?;
                outputs.push(rel(OOD, &file));
            }
            for kind in UncertaintyKind::ALL {
                if scores[0].values(kind).is_none() {
                    continue;
                }
                let by_set: Vec<(&str, Vec<f64>)> = sets
                    .iter()
                    .zip(&scores)
                    .filter_map(|((n, _), s)| s.values(kind).map(|v| (n.as_str(), v)))
                    .collect();
                let file = format!("hist-{model_name}-{}.csv", kind.name());
                write_text(&dir.join(&file), &histogram_csv(&by_set, cfg.ood.hist_bins))?;
                outputs.push(rel(OOD, &file));
            }
            for (i, ((set_name, _), s)) in sets.iter().zip(&scores).enumerate() {
                let mut versus_id = Vec::new();
                if i > 0 {
                    for kind in UncertaintyKind::ALL {
                        if let (Some(a), Some(b)) = (scores[0].values(kind), s.values(kind)) {
                            if a.is_empty() || b.is_empty() {
                                continue;
                            }
                            versus_id.push(ShiftScore {
                                kind,
                                w1: wasserstein1(&a, &b)?,
                                auroc: auroc(&a, &b)?,
                            });
                        }
                    }
                }
                let row = OodRow {
                    model: model_name.clone(),
                    dataset: set_name.clone(),
                    n: s.records.len(),
                    mean: mean_scores(s),
                    versus_id,
                };
                if let Some(t) = row.shift(UncertaintyKind::Total) {
                    info!(
                        "ood: {model_name:10} {set_name:10} mean total {:.4} (id {:.4}) auroc {:.3} w1 {:.4}",
                        row.mean.total,
                        rows.iter()
                            .find(|r: &&OodRow| r.model == model_name && r.dataset == "id")
                            .map_or(f64::NAN, |r| r.mean.total),
                        t.auroc,
                        t.w1
                    );
                }
                rows.push(row);
            }
        }
        let mut csv = String::from(
            "model,dataset,n,total,aleatoric,epistemic,w1_total,w1_aleatoric,w1_epistemic,auroc_total,auroc_aleatoric,auroc_epistemic\n",
        );
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}",
                r.model,
                r.dataset,
                r.n,
                r.mean.total,
                fmt_opt(r.mean.aleatoric),
                fmt_opt(r.mean.epistemic)
            ));
            for f in [|s: &ShiftScore| s.w1, |s: &ShiftScore| s.auroc] {
                for kind in UncertaintyKind::ALL {
                    csv.push_str(&format!(",{}", fmt_opt(r.shift(kind).map(f))));
                }
            }
            csv.push('\n');
        }
        write_json(&dir.join("report.json"), &rows)?;
        write_text(&dir.join("report.csv"), &csv)?;
        outputs.push(rel(OOD, "report.json"));
        outputs.push(rel(OOD, "report.csv"));
        Ok(outputs)
    })
}

// -------------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentBench {
    pub head: Head,
    pub passes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub teacher_seconds: f64,
    pub student_seconds: Vec<(Head, f64)>,
    pub speedup: Vec<(Head, f64)>,
    /// Softmax time over evidential time, when both students exist.
    pub softmax_over_evidential: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_members: usize,
    pub n_samples: usize,
    pub teacher_passes: u64,
    pub students: Vec<StudentBench>,
    /// Wall-clock measurements; everything else is deterministic.
    pub timing: BenchTiming,
}

/// Fastest of `repeats` sequential passes over `ds`, in seconds.
fn time_inference<M: Predictive<f64>>(model: &M, ds: &Dataset<f64>, repeats: usize) -> CliResult<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        for s in ds.samples() {
            std::hint::black_box(model.predict(&s.x)?.mean());
        }
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

pub fn run_bench(
    teacher: &Teacher,
    students: &[(Head, Student)],
    test: &Dataset<f64>,
    repeats: usize,
) -> CliResult<BenchReport> {
    for m in teacher.members() {
        m.network.reset_pass_count();
    }
    for s in test.samples() {
        teacher.predict(&s.x)?;
    }
    let teacher_passes = teacher.members().iter().map(|m| m.network.pass_count()).sum();
    let mut rows = Vec::new();
    let merged: Vec<(Head, Student)> = students.iter().map(|(h, s)| (*h, s.merged())).collect();
    for (head, s) in &merged {
        s.network.reset_pass_count();
        for x in test.samples() {
            s.predict(&x.x)?;
        }
        rows.push(StudentBench {
            head: *head,
            passes: s.network.pass_count(),
        });
    }
    // interleave so slow drift in machine load hits every model alike
    let mut teacher_seconds = f64::INFINITY;
    let mut student_seconds = vec![f64::INFINITY; merged.len()];
    for _ in 0..repeats {
        teacher_seconds = teacher_seconds.min(time_inference(teacher, test, 1)?);
        for ((_, s), t) in merged.iter().zip(student_seconds.iter_mut()) {
            *t = t.min(time_inference(s, test, 1)?);
        }
    }
    let find = |h: Head| merged.iter().position(|(x, _)| *x == h).map(|i| student_seconds[i]);
    let softmax_over_evidential = match (find(Head::Softmax), find(Head::Evidential)) {
        (Some(a), Some(b)) => Some(a / b),
        _ => None,
    };
    Ok(BenchReport {
        n_members: teacher.len(),
        n_samples: test.len(),
        teacher_passes,
        students: rows,
        timing: BenchTiming {
            teacher_seconds,
            student_seconds: merged
                .iter()
                .map(|(h, _)| *h)
                .zip(student_seconds.iter().copied())
                .collect(),
            speedup: merged
                .iter()
                .zip(&student_seconds)
                .map(|((h, _), t)| (*h, teacher_seconds / t))
                .collect(),
            softmax_over_evidential,
        },
    })
}

pub fn bench(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    let mut inputs = vec![rel(DATA, "test.csv"), rel(TEACHER, "teacher.json")];
    inputs.extend(ctx.student_files());
    let section = (&cfg.bench, &cfg.distill.heads);
    ctx.stage("bench", BENCH, &section, inputs, |dir| {
        let test = ctx.load_data("test")?;
        let teacher = ctx.load_teacher()?;
        let students = ctx
            .heads()
            .iter()
            .map(|&h| Ok((h, ctx.load_student(h)?)))
            .collect::<CliResult<Vec<_>>>()?;
        let report = run_bench(&teacher, &students, &test, cfg.bench.repeats)?;
        for (h, s) in &report.timing.speedup {
            info!("bench: teacher vs {} student speedup {s:.2}x", h.name());
        }
        write_json(&dir.join("report.json"), &report)?;
        Ok(vec![rel(BENCH, "report.json")])
    })
}

// -------------------------------------------------------------- alpha-sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `None` is the learned, sample-specific total evidence.
    pub alpha0: Option<f64>,
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub mean_total: f64,
    pub mean_aleatoric: f64,
    pub mean_epistemic: f64,
}

pub fn sweep_rows(
    student: &Student,
    test: &Dataset<f64>,
    grid: &[f64],
    opts: &evdistill::metrics::EvalOptions,
) -> CliResult<Vec<SweepRow>> {
    let settings = grid.iter().map(|&a| Some(a)).chain(std::iter::once(None));
    settings
        .map(|a0| {
            let mut s = student.clone();
            s.set_fixed_alpha0(a0)?;
            let r = PredictionDump::collect(&s, test)?.report(opts)?;
            let b = batch_scores(&s, test);
            let get = |k| b.mean(k).ok_or_else(|| CliError::data("no uncertainty scores"));
            Ok(SweepRow {
                alpha0: a0,
                accuracy: r.accuracy,
                ece: r.ece,
                nll: r.nll,
                brier: r.brier,
                mean_total: get(UncertaintyKind::Total)?,
                mean_aleatoric: get(UncertaintyKind::Aleatoric)?,
                mean_epistemic: get(UncertaintyKind::Epistemic)?,
            })
        })
        .collect()
}

pub fn alpha_sweep(ctx: &Context) -> CliResult<Outcome> {
    let cfg = &ctx.cfg;
    if !ctx.heads().contains(&Head::Evidential) {
        return Err(CliError::config(
            "alpha-sweep needs the evidential head in distill.heads",
        ));
    }
    let inputs = vec![rel(DATA, "test.csv"), rel(DISTILL, "student-evidential.json")];
    let section = (&cfg.alpha_sweep, &cfg.eval);
    ctx.stage("alpha-sweep", SWEEP, &section, inputs, |dir| {
        let test = ctx.load_data("test")?;
        let mut student = ctx.load_student(Head::Evidential)?;
        student.set_fixed_alpha0(None)?;
        let rows = sweep_rows(&student, &test, &cfg.alpha_sweep.grid, &cfg.eval)?;
        let mut csv = String::from("alpha0,accuracy,ece,nll,brier,mean_total,mean_aleatoric,mean_epistemic\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.alpha0.map_or("learned".to_string(), |a| a.to_string()),
                r.accuracy,
                r.ece,
                r.nll,
                r.brier,
                r.mean_total,
                r.mean_aleatoric,
                r.mean_epistemic
            ));
        }
        let alpha0s: Vec<f64> = test
            .samples()
            .iter()
            .map(|s| student.dirichlet(&s.x).map(|d| d.alpha0()))
            .collect::<evdistill::Result<_>>()?;
        write_text(&dir.join("sweep.csv"), &csv)?;
        write_json(&dir.join("report.json"), &rows)?;
        write_text(
            &dir.join("alpha0-hist.csv"),
            &histogram_csv(&[("learned", alpha0s)], cfg.alpha_sweep.hist_bins),
        )?;
        Ok(vec![
            rel(SWEEP, "sweep.csv"),
            rel(SWEEP, "report.json"),
            rel(SWEEP, "alpha0-hist.csv"),
        ])
    })
}

/// Every stage in order; the sweep runs only with an evidential student.
pub fn run_all(ctx: &Context) -> CliResult<Vec<(&'static str, Outcome)>> {
    let mut out = vec![
        ("make-data", make_data(ctx)?),
        ("fit-teacher", fit_teacher(ctx)?),
        ("distill", distill(ctx)?),
        ("eval", eval(ctx)?),
        ("ood", ood(ctx)?),
        ("bench", bench(ctx)?),
    ];
    if ctx.heads().contains(&Head::Evidential) {
        out.push(("alpha-sweep", alpha_sweep(ctx)?));
    }
    Ok(out)
}
