//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Criteria 1 to 4 compare library code with independent oracles written
//! here. Criteria 5 to 10 read the artifacts of the default pipeline, run
//! twice into scratch directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use evdistill::data::Dataset;
use evdistill::dirichlet::{DirichletParams, ProbVector};
use evdistill::distill::{
    dirichlet_loss_grad, loss_dirichlet, loss_softmax, softmax_loss_grad, student_nll, weighted_log_probs,
    EarlyStopper, Head,
};
use evdistill::linalg::Matrix;
use evdistill::metrics::{auroc, brier, ece, wasserstein1, BrierConvention};
use evdistill::nn::{Activation, DenseLayer, LoraAdapter, Network};
use evdistill::special::softmax;
use evdistill::teacher::{bayespe_objective, bayespe_weights, TeacherPredictionSet};
use evdistill::uncertainty::{Predictive, UncertaintyKind};
use evdistill_cli::commands::{
    load_dataset, read_json, run_all, BenchReport, Context, EvalRow, OodRow, Student, SweepRow, Teacher,
};
use evdistill_cli::config::Config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::digamma;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ------------------------------------------------------------ 1. gradients

fn random_case(seed: u64) -> (Network<f64>, Vec<f64>, TeacherPredictionSet<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=4);
    let dims = [
        rng.random_range(3..=6),
        rng.random_range(4..=7),
        rng.random_range(4..=7),
        k,
    ];
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == 2 { Activation::Identity } else { Activation::Tanh };
            DenseLayer::random(w[0], w[1], act, &mut rng).unwrap()
        })
        .collect();
    let mut net = Network::new(layers).unwrap();
    net.freeze_all();
    net.set_frozen(2, false);
    for idx in 0..3 {
        let (i, o) = (dims[idx], dims[idx + 1]);
        if let Some(max) = LoraAdapter::<f64>::max_rank(i, o) {
            let r = max.min(2);
            let a = Matrix::from_fn(r, i, |_, _| rng.random_range(-0.5..0.5));
            let b = Matrix::from_fn(o, r, |_, _| rng.random_range(-0.5..0.5));
            net.attach_adapter(idx, LoraAdapter::from_parts(a, b, 0.8).unwrap())
                .unwrap();
        }
    }
    let x = (0..dims[0]).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = rng.random_range(1..=5);
    let rows = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..k)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    2.0 * v
                })
                .collect();
            ProbVector::new(softmax(&z)).unwrap()
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let set = TeacherPredictionSet::new(rows, raw.iter().map(|w| w / s).collect()).unwrap();
    (net, x, set)
}

fn max_rel_error(net: &mut Network<f64>, x: &[f64], evidential: bool, set: &TeacherPredictionSet<f64>) -> f64 {
    let z = net.forward(x).unwrap();
    let (_, dz) = if evidential {
        dirichlet_loss_grad(&z, &weighted_log_probs(set))
    } else {
        softmax_loss_grad(&z, set.predictive_mean().as_slice())
    };
    let analytic = net.backward(&dz).unwrap().flatten();
    let value = |net: &Network<f64>| {
        let z = net.infer(x).unwrap();
        if evidential {
            loss_dirichlet(&DirichletParams::from_logits(&z).unwrap(), set)
        } else {
            loss_softmax(&ProbVector::new(softmax(&z)).unwrap(), set)
        }
    };
    let theta = net.trainable_params();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        net.set_trainable_params(&t).unwrap();
        let up = value(net);
        t[i] = theta[i] - h;
        net.set_trainable_params(&t).unwrap();
        let down = value(net);
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    net.set_trainable_params(&theta).unwrap();
    worst
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut worst = [0.0f64; 2];
    for seed in 0..100 {
        for (j, evidential) in [false, true].into_iter().enumerate() {
            let (mut net, x, set) = random_case(seed);
            worst[j] = worst[j].max(max_rel_error(&mut net, &x, evidential, &set));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst[0] < 1e-4 && worst[1] < 1e-4 && secs < 30.0,
        format!(
            "max rel error softmax {:.2e}, dirichlet {:.2e}; {secs:.2}s",
            worst[0], worst[1]
        ),
    )
}

// ------------------------------------------------------------ 2. dirichlet

fn dirichlet_math() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut identity_err = 0.0f64;
    let mut oracle_err = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..=50.0)).collect();
        let a0: f64 = alpha.iter().sum();
        let u = DirichletParams::new(alpha.clone()).unwrap().entropy_decomposition();
        let (al, ep) = (u.aleatoric.unwrap(), u.epistemic.unwrap());
        identity_err = identity_err.max((u.total - (al + ep)).abs());
        let total: f64 = alpha.iter().map(|a| -(a / a0) * (a / a0).ln()).sum();
        let aleatoric: f64 = digamma(a0 + 1.0) - alpha.iter().map(|a| a / a0 * digamma(a + 1.0)).sum::<f64>();
        oracle_err = oracle_err.max((u.total - total).abs()).max((al - aleatoric).abs());
    }

    let mut max_epistemic = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        let alpha = w.iter().map(|v| v / s * 1e6).collect();
        let e = DirichletParams::new(alpha)
            .unwrap()
            .entropy_decomposition()
            .epistemic
            .unwrap();
        max_epistemic = max_epistemic.max(e);
    }

    // midpoint rule on the 1-simplex
    let mut norm_err = 0.0f64;
    let n = 200_000;
    for alpha in [[1.0, 1.0], [2.0, 5.0], [3.5, 7.25], [1.0, 20.0], [40.0, 40.0]] {
        let d = DirichletParams::new(alpha.to_vec()).unwrap();
        let integral: f64 = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                d.log_density(&ProbVector::new(vec![p, 1.0 - p]).unwrap()).exp()
            })
            .sum::<f64>()
            / n as f64;
        norm_err = norm_err.max((integral - 1.0).abs());
    }

    let mut mean_err = 0.0f64;
    for alpha in [
        vec![1.0, 1.0],
        vec![5.0, 1.0, 1.0],
        vec![0.5, 2.0, 3.0, 10.0],
        vec![30.0, 2.0],
    ] {
        let d = DirichletParams::new(alpha).unwrap();
        let draws = d.sample(&mut rng, 100_000);
        for c in 0..d.k() {
            let m = draws.iter().map(|p| p.as_slice()[c]).sum::<f64>() / draws.len() as f64;
            mean_err = mean_err.max((m - d.mean().as_slice()[c]).abs());
        }
    }
    verdict(
        identity_err < 1e-9 && oracle_err < 1e-9 && max_epistemic < 1e-5 && norm_err < 1e-4 && mean_err < 0.01,
        format!(
            "identity {identity_err:.1e}, vs oracle {oracle_err:.1e}, epistemic at 1e6 {max_epistemic:.1e}, \
             K=2 normalisation {norm_err:.1e}, sampler mean {mean_err:.4}"
        ),
    )
}

// ------------------------------------------------------------- 3. bayespe

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
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

fn projected_gradient(loglik: &[f64], lambda: f64) -> Vec<f64> {
    let n = loglik.len();
    let mut w = vec![1.0 / n as f64; n];
    for _ in 0..500 {
        // the Hessian is diag(-λ / w), so this step never overshoots
        let eta = w.iter().copied().fold(f64::INFINITY, f64::min).max(1e-12) / lambda;
        let step: Vec<f64> = w
            .iter()
            .zip(loglik)
            .map(|(&wi, &l)| wi + eta * (l - lambda * (wi.max(1e-300).ln() + 1.0)))
            .collect();
        w = project_simplex(&step);
    }
    w
}

fn bayespe() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pg_err = 0.0f64;
    let mut dominated = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let lambda = [1.0, 2.5, 10.0][rng.random_range(0..3)];
        let ll: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..2.0) * lambda - 5.0).collect();
        let w = bayespe_weights(&ll, lambda).unwrap();
        for (a, b) in w.iter().zip(projected_gradient(&ll, lambda)) {
            pg_err = pg_err.max((a - b).abs());
        }
        let best = bayespe_objective(&w, &ll, lambda);
        let mut rivals = vec![vec![1.0 / n as f64; n]];
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            rivals.push(e);
        }
        dominated += rivals
            .iter()
            .filter(|r| bayespe_objective(r, &ll, lambda) > best)
            .count();
    }
    let symmetric = (1..=8).all(|n| {
        [0.5, 1.0, 8.0].iter().all(|&lambda| {
            let w = bayespe_weights(&vec![-12.75; n], lambda).unwrap();
            w.iter().all(|&v| v == 1.0 / n as f64)
        })
    });
    verdict(
        pg_err < 1e-6 && symmetric && dominated == 0,
        format!("max |closed − projected| {pg_err:.1e}, symmetric exact {symmetric}, beaten by rivals {dominated}×"),
    )
}

// ------------------------------------------------------------- 4. metrics

fn pairs_auroc(neg: &[f64], pos: &[f64]) -> f64 {
    let mut half_units = 0u64;
    for &p in pos {
        for &n in neg {
            half_units += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    half_units as f64 / (2 * neg.len() * pos.len()) as f64
}

fn probs(rows: &[&[f64]]) -> Vec<ProbVector<f64>> {
    rows.iter().map(|r| ProbVector::new(r.to_vec()).unwrap()).collect()
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut auroc_mismatch = 0;
    for case in 0..400 {
        let n = rng.random_range(1..=200);
        let m = rng.random_range(1..=200);
        // coarse grids on half the cases force ties
        let draw = |rng: &mut ChaCha8Rng| {
            let v: f64 = rng.random_range(0.0..1.0);
            if case % 2 == 0 {
                (v * 8.0).floor() / 8.0
            } else {
                v
            }
        };
        let neg: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let pos: Vec<f64> = (0..m).map(|_| draw(&mut rng) + 0.1).collect();
        if auroc(&neg, &pos).unwrap() != pairs_auroc(&neg, &pos) {
            auroc_mismatch += 1;
        }
    }

    let mut asym = 0.0f64;
    let mut triangle = 0.0f64;
    for _ in 0..300 {
        let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.random_range(1..=60);
            let shift = rng.random_range(-2.0..2.0);
            (0..n).map(|_| shift + rng.random_range(0.0..1.0) * 3.0).collect()
        };
        let (a, b, c) = (sample(&mut rng), sample(&mut rng), sample(&mut rng));
        let w = |x: &[f64], y: &[f64]| wasserstein1(x, y).unwrap();
        asym = asym.max((w(&a, &b) - w(&b, &a)).abs());
        triangle = triangle.max(w(&a, &c) - w(&a, &b) - w(&b, &c));
    }

    let mut table = Vec::new();
    let one = probs(&[&[1.0, 0.0][..]; 5]);
    table.push(("ece all-confident", ece(&one, &[0; 5], 10).unwrap(), 0.0));
    let flat = probs(&[&[0.75, 0.25][..]; 10]);
    let labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
    table.push(("ece one bin", ece(&flat, &labels, 10).unwrap(), 0.15));
    let mut rows: Vec<&[f64]> = vec![&[0.55, 0.45]; 4];
    rows.extend([&[0.95, 0.05][..]; 6]);
    let two = probs(&rows);
    table.push((
        "ece two bins",
        ece(&two, &[0, 0, 1, 1, 0, 0, 0, 0, 0, 0], 10).unwrap(),
        0.05,
    ));
    table.push((
        "brier one-hot",
        brier(&probs(&[&[0.0, 1.0]]), &[1], BrierConvention::ClassAveraged).unwrap(),
        0.0,
    ));
    table.push((
        "brier uniform",
        brier(&probs(&[&[0.5, 0.5]]), &[1], BrierConvention::ClassAveraged).unwrap(),
        0.25,
    ));
    table.push((
        "brier 0.8/0.2",
        brier(&probs(&[&[0.8, 0.2]]), &[0], BrierConvention::ClassAveraged).unwrap(),
        0.04,
    ));
    let worst_example = table
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let exact = table.iter().filter(|(_, got, want)| got == want).count();
    verdict(
        auroc_mismatch == 0 && asym == 0.0 && triangle <= 1e-12 && worst_example <= 1e-12,
        format!(
            "auroc mismatches {auroc_mismatch}/400, W1 asymmetry {asym:.1e}, triangle excess {triangle:.1e}, \
             hand examples {exact}/{} bit-exact, worst deviation {worst_example:.1e}",
            table.len()
        ),
    )
}

// ------------------------------------------------------------ pipeline runs

fn pipeline(root: &Path) -> Duration {
    let start = Instant::now();
    run_all(&Context::new(root, Config::default())).expect("default pipeline failed");
    start.elapsed()
}

fn fidelity(root: &Path, elapsed: Duration) -> Verdict {
    let test: Dataset<f64> = load_dataset(&root.join("data/test.csv")).unwrap();
    let teacher: Teacher = read_json(&root.join("teacher/teacher.json")).unwrap();
    let eval: Vec<EvalRow> = read_json(&root.join("eval/report.json")).unwrap();
    let acc = |m: &str| eval.iter().find(|r| r.model == m).unwrap().accuracy;
    let mut pass = elapsed.as_secs_f64() < 120.0;
    let mut parts = vec![format!("N = {}", teacher.len())];
    pass &= teacher.len() == 8 && test.n_classes() == 2;
    for head in [Head::Softmax, Head::Evidential] {
        let student: Student = read_json(&root.join(format!("distill/student-{}.json", head.name()))).unwrap();
        let close = test
            .samples()
            .iter()
            .filter(|s| {
                let t = teacher.predict(&s.x).unwrap().mean();
                let p = student.predict(&s.x).unwrap().mean();
                p.total_variation(&t) <= 0.05
            })
            .count();
        let frac = close as f64 / test.len() as f64;
        let dacc = acc(head.name()) - acc("teacher");
        pass &= frac >= 0.95 && dacc.abs() <= 0.01;
        parts.push(format!(
            "{}: TV ≤ 0.05 on {:.1}%, Δacc {:+.4}",
            head.name(),
            100.0 * frac,
            dacc
        ));
    }
    parts.push(format!("pipeline {:.1}s", elapsed.as_secs_f64()));
    verdict(pass, parts.join("; "))
}

fn early_stopping(root: &Path) -> Verdict {
    let mut stopper = EarlyStopper::new(0);
    let mut stopped = None;
    for (i, v) in [0.5, 0.4, 0.45].into_iter().enumerate() {
        if stopper.observe(i + 1, v).stop {
            stopped = Some(i + 1);
            break;
        }
    }
    let mut pass = stopped == Some(3) && stopper.best_epoch() == Some(2);
    let mut parts = vec![format!(
        "synthetic: stop {stopped:?}, restore {:?}",
        stopper.best_epoch()
    )];
    let train: Dataset<f64> = load_dataset(&root.join("data/train.csv")).unwrap();
    for head in [Head::Softmax, Head::Evidential] {
        let student: Student = read_json(&root.join(format!("distill/student-{}.json", head.name()))).unwrap();
        let text = fs::read_to_string(root.join(format!("distill/trace-{}.csv", head.name()))).unwrap();
        let trace: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        let min = trace.iter().copied().fold(f64::INFINITY, f64::min);
        let nll = student_nll(&student, &train).unwrap();
        pass &= nll == min;
        parts.push(format!("{}: NLL {nll:.6} vs trace min {min:.6}", head.name()));
    }
    verdict(pass, parts.join("; "))
}

fn ood(root: &Path) -> Verdict {
    let rows: Vec<OodRow> = read_json(&root.join("ood/report.json")).unwrap();
    let row = |d: &str| rows.iter().find(|r| r.model == "evidential" && r.dataset == d).unwrap();
    let (id, shifted, same) = (row("id"), row("shifted"), row("in-domain"));
    let gap = shifted.mean.total - id.mean.total;
    let a = shifted.shift(UncertaintyKind::Total).unwrap().auroc;
    let same_auroc = same.shift(UncertaintyKind::Total).unwrap().auroc;
    let same_w1 = same.versus_id.iter().map(|s| s.w1).fold(0.0, f64::max);
    verdict(
        gap >= 0.2 && a >= 0.9 && (0.45..=0.55).contains(&same_auroc) && same_w1 < 0.01,
        format!(
            "shifted: entropy gap {gap:.4} nats, AUROC {a:.4}; OOD = ID: AUROC {same_auroc:.4}, max W1 {same_w1:.4}"
        ),
    )
}

fn inference_cost(root: &Path) -> Verdict {
    let b: BenchReport = read_json(&root.join("bench/report.json")).unwrap();
    let n = b.n_members as u64;
    let m = b.n_samples as u64;
    let counts = b.teacher_passes == n * m && b.students.iter().all(|s| s.passes == m);
    let min_speedup = b.timing.speedup.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let ratio = b.timing.softmax_over_evidential.unwrap_or(f64::NAN);
    verdict(
        counts && n == 8 && min_speedup >= 0.7 * n as f64 && (ratio - 1.0).abs() <= 0.1,
        format!(
            "passes teacher {} = {n}·{m}, students {:?}; min speedup {min_speedup:.2}× (need {:.1}); \
             softmax/evidential time {ratio:.3}",
            b.teacher_passes,
            b.students.iter().map(|s| s.passes).collect::<Vec<_>>(),
            0.7 * n as f64
        ),
    )
}

fn alpha_sweep(root: &Path) -> Verdict {
    let rows: Vec<SweepRow> = read_json(&root.join("alpha-sweep/report.json")).unwrap();
    let acc0 = rows[0].accuracy;
    let constant = rows.iter().all(|r| r.accuracy == acc0);
    let grid: Vec<&SweepRow> = rows.iter().filter(|r| r.alpha0.is_some()).collect();
    let decreasing = grid.windows(2).all(|w| w[1].mean_epistemic < w[0].mean_epistemic);
    let ascending = grid.windows(2).all(|w| w[1].alpha0 > w[0].alpha0);
    verdict(
        constant && decreasing && ascending && grid.len() >= 2,
        format!(
            "{} grid points; accuracy constant {constant}; epistemic {:.2e} → {:.2e}, strictly decreasing {decreasing}",
            grid.len(),
            grid[0].mean_epistemic,
            grid[grid.len() - 1].mean_epistemic
        ),
    )
}

/// Every file under `root` with wall-clock fields removed.
fn normalized_outputs(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_path_buf();
            let bytes = fs::read(&path).unwrap();
            let name = rel.file_name().unwrap().to_string_lossy().into_owned();
            let bytes = if name == "manifest.json" || rel == Path::new("bench/report.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                let obj = v.as_object_mut().unwrap();
                obj.remove("wall_clock_seconds");
                obj.remove("timing");
                serde_json::to_vec(&v).unwrap()
            } else if name.starts_with("trace-") {
                let text = String::from_utf8(bytes).unwrap();
                let kept: Vec<&str> = text.lines().map(|l| l.rsplit_once(',').unwrap().0).collect();
                kept.join("\n").into_bytes()
            } else {
                bytes
            };
            out.insert(rel, bytes);
        }
    }
    out
}

fn determinism(a: &Path, b: &Path) -> Verdict {
    let (x, y) = (normalized_outputs(a), normalized_outputs(b));
    let differing: Vec<String> = x
        .keys()
        .chain(y.keys())
        .filter(|k| x.get(*k) != y.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    verdict(
        differing.is_empty() && !x.is_empty(),
        if differing.is_empty() {
            format!("{} files identical", x.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Verdict)> = vec![
        (1, "gradient suite", gradients()),
        (2, "dirichlet math", dirichlet_math()),
        (3, "bayespe oracle", bayespe()),
        (4, "metric oracles", metric_oracles()),
    ];
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let elapsed = pipeline(first.path());
    pipeline(second.path());
    let root = first.path();
    results.push((5, "distillation fidelity", fidelity(root, elapsed)));
    results.push((6, "early stopping", early_stopping(root)));
    results.push((7, "ood trend", ood(root)));
    results.push((8, "inference cost", inference_cost(root)));
    results.push((9, "alpha0 sweep", alpha_sweep(root)));
    results.push((10, "determinism", determinism(first.path(), second.path())));

    let mut failed = 0;
    for (id, name, v) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} {name}: {}", v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
