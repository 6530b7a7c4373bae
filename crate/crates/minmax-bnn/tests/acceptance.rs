//! Acceptance gate for the whole artifact. Each test covers one numbered
//! criterion and prints one `ACCEPTANCE <n>: PASS` line; a failed assertion
//! marks the criterion FAIL. The three long training runs are shared between
//! criteria through lazy statics, so the binary performs four full runs in
//! total (trend run, same-seed rerun, different-seed run, ns=5 run).

mod common;

use common::*;
use minmax_bnn::config::RunConfig;
use minmax_bnn::data::{load_images, load_labels, make_view, parse_idx, write_idx, DatasetView};
use minmax_bnn::encoder::{build_manifest, forward, ArchId, ArchitectureManifest};
use minmax_bnn::knn::evaluate;
use minmax_bnn::metrics::{parse_metrics, MetricsRow, Phase, VecSink};
use minmax_bnn::optim::AdamState;
use minmax_bnn::params::{
    batch_rng, bind_constants, bind_leaves, bind_theta_via_mu, bind_theta_via_v, draw_eps,
    init_params, init_rng, sample_net, sigma_of, MeanParams, ParamSet, SampleMode, VarianceParams,
};
use minmax_bnn::rate::{
    delta_r, objective_tau, pairwise_delta_r, rate, ClassPartition, PairwiseScope, RateConfig,
};
use minmax_bnn::tape::Tape;
use minmax_bnn::tensor::{l2_normalize_cols, Tensor};
use minmax_bnn::trainer;
use rand::Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

// ---------------------------------------------------------------------------
// shared machinery
// ---------------------------------------------------------------------------

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_minmax-bnn")
}

/// The harness captures everything printed through the std machinery, but
/// the per-criterion verdict lines are part of this suite's contract and
/// must show up in a plain `cargo test` run, so they go to fd 1 directly.
fn report(line: String) {
    use std::io::Write;
    use std::os::fd::FromRawFd;
    let mut out = unsafe { std::fs::File::from_raw_fd(1) };
    writeln!(out, "{line}").ok();
    std::mem::forget(out); // fd 1 belongs to the process, not to us
}

macro_rules! report {
    ($($arg:tt)*) => { report(format!($($arg)*)) };
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

struct TrainedRun {
    metrics_bytes: Vec<u8>,
    rows: Vec<MetricsRow>,
    wall: Duration,
}

impl TrainedRun {
    fn eval_rows(&self) -> Vec<&MetricsRow> {
        self.rows.iter().filter(|r| r.phase == Phase::E).collect()
    }

    fn final_eval(&self) -> &MetricsRow {
        self.eval_rows()
            .last()
            .copied()
            .expect("run produced evaluation rows")
    }

    fn accuracy_series(&self) -> (Vec<f64>, Vec<f64>) {
        let evals = self.eval_rows();
        (
            evals.iter().map(|r| r.acc_netd.unwrap()).collect(),
            evals.iter().map(|r| r.acc_netg.unwrap()).collect(),
        )
    }
}

fn train_via_cli(out_dir: PathBuf, args: &[String]) -> TrainedRun {
    let started = Instant::now();
    let status = Command::new(bin())
        .arg("train")
        .args(args)
        .arg("--out-dir")
        .arg(&out_dir)
        .status()
        .expect("training process launches");
    let wall = started.elapsed();
    assert!(status.success(), "training run failed: {status:?}");
    let metrics_bytes = std::fs::read(out_dir.join("metrics.csv")).unwrap();
    let rows = parse_metrics(std::str::from_utf8(&metrics_bytes).unwrap()).unwrap();
    TrainedRun {
        metrics_bytes,
        rows,
        wall,
    }
}

/// The scaled accuracy-trend configuration: 3 classes at 500/200 per class,
/// the conv encoder at d=128, and the pinned optimizer settings. Batch size
/// and evaluation cadence are the free knobs; they are chosen so one run
/// fits the runtime budget on a single desktop core.
fn trend_args(seed: u64, ns: u64, numsteps: u64, eval_every: u64) -> Vec<String> {
    let [tri, trl, tei, tel] = mnist_paths();
    [
        "--train-images",
        tri.to_str().unwrap(),
        "--train-labels",
        trl.to_str().unwrap(),
        "--test-images",
        tei.to_str().unwrap(),
        "--test-labels",
        tel.to_str().unwrap(),
        "--classes",
        "0,1,2",
        "--train-per-class",
        "500",
        "--test-per-class",
        "200",
        "--arch",
        "conv-res-lite",
        "--feature-dim",
        "128",
        "--eps-sq",
        "0.5",
        "--lr",
        "0.001",
        "--beta1",
        "0.5",
        "--beta2",
        "0.999",
        "--sigma-init",
        "0.02",
        "--k-nn",
        "5",
        "--batch-per-class",
        "32",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([
        format!("--seed={seed}"),
        format!("--ns={ns}"),
        format!("--numsteps={numsteps}"),
        format!("--eval-every={eval_every}"),
    ])
    .collect()
}

static TREND_RUN: OnceLock<TrainedRun> = OnceLock::new();
static TREND_RERUN: OnceLock<TrainedRun> = OnceLock::new();
static TREND_OTHER_SEED: OnceLock<TrainedRun> = OnceLock::new();
static TREND_NS5: OnceLock<TrainedRun> = OnceLock::new();

fn trend_run() -> &'static TrainedRun {
    TREND_RUN.get_or_init(|| train_via_cli(scratch("trend-a"), &trend_args(0, 1, 200, 20)))
}

fn trend_rerun() -> &'static TrainedRun {
    TREND_RERUN.get_or_init(|| train_via_cli(scratch("trend-b"), &trend_args(0, 1, 200, 20)))
}

fn trend_other_seed() -> &'static TrainedRun {
    TREND_OTHER_SEED.get_or_init(|| train_via_cli(scratch("trend-c"), &trend_args(1, 1, 200, 20)))
}

fn trend_ns5() -> &'static TrainedRun {
    TREND_NS5.get_or_init(|| train_via_cli(scratch("trend-ns5"), &trend_args(0, 5, 40, 4)))
}

/// Pearson correlation. When either series is (numerically) constant the
/// coefficient is undefined; co-movement then degenerates to "the curves sit
/// on top of each other", so equality within one test-set quantum scores 1
/// and anything else scores 0.
fn pearson(xs: &[f64], ys: &[f64], quantum: f64) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx < 1e-18 || vy < 1e-18 {
        let equal = xs
            .iter()
            .zip(ys)
            .all(|(&x, &y)| (x - y).abs() <= quantum + 1e-12);
        return if equal { 1.0 } else { 0.0 };
    }
    cov / (vx * vy).sqrt()
}

/// Random unit-norm feature set with a class partition where every class is
/// populated.
fn random_feature_set(
    rng: &mut rand_chacha::ChaCha8Rng,
    d: usize,
    n: usize,
    k: usize,
) -> (Tensor, ClassPartition) {
    let raw = Tensor::new(
        vec![d, n],
        (0..d * n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
    )
    .unwrap();
    let (z, _) = l2_normalize_cols(&raw).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let part = ClassPartition::from_labels(&labels, k).unwrap();
    (z, part)
}

fn mnist_views(
    classes: &[u8],
    train_per_class: usize,
    test_per_class: usize,
) -> (DatasetView, DatasetView) {
    let [tri, trl, tei, tel] = mnist_paths();
    let train_images = load_images(&tri).unwrap();
    let train_labels = load_labels(&trl).unwrap();
    let test_images = load_images(&tei).unwrap();
    let test_labels = load_labels(&tel).unwrap();
    (
        make_view(&train_images, &train_labels, classes, Some(train_per_class)).unwrap(),
        make_view(&test_images, &test_labels, classes, Some(test_per_class)).unwrap(),
    )
}

// ---------------------------------------------------------------------------
// criterion 1: closed-form rates match the eigenvalue oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_rate_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = init_rng(101);
    let mut max_diff: f64 = 0.0;
    for trial in 0..100 {
        let d = 2 + (trial % 7);
        let n = 2 + (trial % 15);
        let eps_sq = [0.25, 0.5, 1.0][trial % 3];
        let k = if n >= 4 { 2 } else { 1 };
        let (z, part) = random_feature_set(&mut rng, d, n, k);
        let cfg = RateConfig::new(eps_sq, d).unwrap();

        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let r = rate(&mut tape, zv, &cfg).unwrap();
        let dr = delta_r(&mut tape, zv, &part, &cfg).unwrap();
        let r_got = tape.value(r).item();
        let dr_got = tape.value(dr).item();

        max_diff = max_diff.max((r_got - oracle_rate(&z, eps_sq, d)).abs());
        max_diff = max_diff.max((dr_got - oracle_delta_r(&z, &part, eps_sq, d)).abs());

        let half = n / 2;
        let left: Vec<usize> = (0..half).collect();
        let right: Vec<usize> = (half..n).collect();
        let za = select_columns(&z, &left);
        let zb = select_columns(&z, &right);
        let mut tape2 = Tape::new();
        let av = tape2.constant(za.clone());
        let bv = tape2.constant(zb.clone());
        let p = pairwise_delta_r(&mut tape2, av, bv, &cfg).unwrap();
        max_diff =
            max_diff.max((tape2.value(p).item() - oracle_pairwise(&za, &zb, eps_sq, d)).abs());
    }
    assert!(max_diff < 1e-8, "worst oracle disagreement {max_diff:e}");
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    report!(
        "ACCEPTANCE 1: PASS - 100 feature sets match the eigenvalue oracle, worst diff {max_diff:.2e}, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// criterion 2: gradient suite against finite differences
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-8;
const REL_TOL: f64 = 1e-4;

/// Central differences of an O(1) objective at step 1e-5 carry roundoff of
/// order 1e-10 in the derivative estimate. Gradients between the 1e-8 floor
/// and ~1e-6 are real but smaller than what the difference quotient can
/// resolve relatively, so agreement there is checked absolutely instead; a
/// genuine gradient bug at that magnitude still misses by orders more.
const FD_NOISE_ABS: f64 = 1e-9;

fn fd_matches(g: f64, fd: f64) -> bool {
    rel_err(g, fd) < REL_TOL || (g - fd).abs() < FD_NOISE_ABS
}

/// Objective value and, alongside, the tape gradient for the mean-parameter
/// path (theta built from the mean leaves plus constant noise).
#[allow(clippy::too_many_arguments)]
fn tau_and_grad_mu(
    manifest: &ArchitectureManifest,
    cfg: &RateConfig,
    mu: &ParamSet,
    sigma: &ParamSet,
    eps: &ParamSet,
    images: &Tensor,
    part: &ClassPartition,
    want_grad: bool,
) -> (f64, Option<ParamSet>) {
    let mut tape = Tape::new();
    let mu_b = bind_leaves(&mut tape, mu);
    let theta = bind_theta_via_mu(&mut tape, &mu_b, sigma, eps).unwrap();
    let z = forward(&mut tape, manifest, &mu_b, images).unwrap();
    let zhat = forward(&mut tape, manifest, &theta, images).unwrap();
    let breakdown = objective_tau(&mut tape, z, zhat, part, cfg, PairwiseScope::PerClass).unwrap();
    let tau = breakdown.values(&tape).tau;
    if !want_grad {
        return (tau, None);
    }
    let mut grads = tape.backward(breakdown.tau).unwrap();
    let mut out = ParamSet::new();
    for (name, t) in mu.iter() {
        let v = mu_b.get(name).unwrap();
        out.push(
            name,
            grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())),
        );
    }
    (tau, Some(out))
}

/// Same for the variance path: theta = const(mu) + softplus(v) .* const(eps).
#[allow(clippy::too_many_arguments)]
fn tau_and_grad_v(
    manifest: &ArchitectureManifest,
    cfg: &RateConfig,
    mu: &ParamSet,
    v: &ParamSet,
    eps: &ParamSet,
    images: &Tensor,
    part: &ClassPartition,
    want_grad: bool,
) -> (f64, Option<ParamSet>) {
    let mut tape = Tape::new();
    let v_b = bind_leaves(&mut tape, v);
    let theta = bind_theta_via_v(&mut tape, mu, &v_b, eps).unwrap();
    let mu_c = bind_constants(&mut tape, mu);
    let z = forward(&mut tape, manifest, &mu_c, images).unwrap();
    let zhat = forward(&mut tape, manifest, &theta, images).unwrap();
    let breakdown = objective_tau(&mut tape, z, zhat, part, cfg, PairwiseScope::PerClass).unwrap();
    let tau = breakdown.values(&tape).tau;
    if !want_grad {
        return (tau, None);
    }
    let mut grads = tape.backward(breakdown.tau).unwrap();
    let mut out = ParamSet::new();
    for (name, t) in v.iter() {
        let var = v_b.get(name).unwrap();
        out.push(
            name,
            grads.take(var).unwrap_or_else(|| Tensor::zeros(t.shape())),
        );
    }
    (tau, Some(out))
}

fn set_element(set: &ParamSet, array: usize, elem: usize, value: f64) -> ParamSet {
    let mut out = set.clone();
    let (_, t) = out.iter_mut().nth(array).unwrap();
    t.data_mut()[elem] = value;
    out
}

#[test]
fn criterion_02_gradient_suite() {
    let started = Instant::now();

    // log-determinant through a guaranteed-PD composition, every element
    let mut rng = init_rng(21);
    let b = Tensor::new(
        vec![5, 5],
        (0..25).map(|_| rng.gen::<f64>() - 0.5).collect(),
    )
    .unwrap();
    let logdet_loss = |b: &Tensor| -> (f64, Option<Tensor>) {
        let mut tape = Tape::new();
        let bv = tape.leaf(b.clone());
        let bt = tape.transpose(bv);
        let gram = tape.matmul(bt, bv).unwrap();
        let pd = tape.add_eye(gram).unwrap();
        let loss = tape.logdet_pd(pd).unwrap();
        let val = tape.value(loss).item();
        let mut grads = tape.backward(loss).unwrap();
        (val, grads.take(bv))
    };
    let (_, grad) = logdet_loss(&b);
    let grad = grad.unwrap();
    for i in 0..25 {
        let g = grad.data()[i];
        if g.abs() <= GRAD_FLOOR {
            continue;
        }
        let fd = central_diff(
            |x| {
                let mut bb = b.clone();
                bb.data_mut()[i] = x;
                logdet_loss(&bb).0
            },
            b.data()[i],
            FD_STEP,
        );
        assert!(fd_matches(g, fd), "logdet element {i}: tape {g} vs fd {fd}");
    }

    // softplus over a 100-point sweep, every element
    let xs = Tensor::new(
        vec![1, 100],
        (0..100).map(|i| -5.0 + 10.0 * i as f64 / 99.0).collect(),
    )
    .unwrap();
    let softplus_loss = |t: &Tensor| -> (f64, Option<Tensor>) {
        let mut tape = Tape::new();
        let v = tape.leaf(t.clone());
        let s = tape.softplus(v);
        let loss = tape.sum_all(s);
        let val = tape.value(loss).item();
        let mut grads = tape.backward(loss).unwrap();
        (val, grads.take(v))
    };
    let (_, sgrad) = softplus_loss(&xs);
    let sgrad = sgrad.unwrap();
    for i in 0..100 {
        let g = sgrad.data()[i];
        if g.abs() <= GRAD_FLOOR {
            continue;
        }
        let fd = central_diff(
            |x| {
                let mut t = xs.clone();
                t.data_mut()[i] = x;
                softplus_loss(&t).0
            },
            xs.data()[i],
            FD_STEP,
        );
        assert!(
            fd_matches(g, fd),
            "softplus element {i}: tape {g} vs fd {fd}"
        );
    }

    // full objective on a 6-sample, 2-class batch through the pinned mlp
    // encoder. An exhaustive per-element sweep (~812k parameters, two
    // objective evaluations each) cannot fit the runtime budget, so each
    // array is probed at 80 deterministically spread elements instead.
    let manifest = build_manifest(ArchId::Mlp, 8).unwrap();
    let cfg = RateConfig::new(0.5, 8).unwrap();
    let mut rng = init_rng(22);
    let images = Tensor::new(
        vec![6, 784],
        (0..6 * 784).map(|_| rng.gen::<f64>()).collect(),
    )
    .unwrap();
    let labels = vec![0, 0, 0, 1, 1, 1];
    let part = ClassPartition::from_labels(&labels, 2).unwrap();
    let (mu, var) = init_params(manifest.params(), 0.02, 0.02, &mut init_rng(23));
    let sigma = sigma_of(&var);
    let eps = draw_eps(&mu.0, 24, 0);

    let mut checked_mu = 0usize;
    let (_, grad_mu) = tau_and_grad_mu(&manifest, &cfg, &mu.0, &sigma, &eps, &images, &part, true);
    let grad_mu = grad_mu.unwrap();
    for (ai, (_, gt)) in grad_mu.iter().enumerate() {
        for ei in strided_indices(gt.len(), 80) {
            let g = gt.data()[ei];
            if g.abs() <= GRAD_FLOOR {
                continue;
            }
            let (_, base_tensor) = mu.0.iter().nth(ai).unwrap();
            let x0 = base_tensor.data()[ei];
            let fd = central_diff(
                |x| {
                    let probed = set_element(&mu.0, ai, ei, x);
                    tau_and_grad_mu(
                        &manifest, &cfg, &probed, &sigma, &eps, &images, &part, false,
                    )
                    .0
                },
                x0,
                FD_STEP,
            );
            assert!(
                fd_matches(g, fd),
                "mean path array {ai} element {ei}: tape {g} vs fd {fd}"
            );
            checked_mu += 1;
        }
    }

    let mut checked_v = 0usize;
    let (_, grad_v) = tau_and_grad_v(&manifest, &cfg, &mu.0, &var.0, &eps, &images, &part, true);
    let grad_v = grad_v.unwrap();
    for (ai, (_, gt)) in grad_v.iter().enumerate() {
        for ei in strided_indices(gt.len(), 80) {
            let g = gt.data()[ei];
            if g.abs() <= GRAD_FLOOR {
                continue;
            }
            let (_, base_tensor) = var.0.iter().nth(ai).unwrap();
            let x0 = base_tensor.data()[ei];
            let fd = central_diff(
                |x| {
                    let probed = set_element(&var.0, ai, ei, x);
                    tau_and_grad_v(&manifest, &cfg, &mu.0, &probed, &eps, &images, &part, false).0
                },
                x0,
                FD_STEP,
            );
            assert!(
                fd_matches(g, fd),
                "variance path array {ai} element {ei}: tape {g} vs fd {fd}"
            );
            checked_v += 1;
        }
    }
    assert!(checked_mu > 100 && checked_v > 100, "probe count too small");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    report!(
        "ACCEPTANCE 2: PASS - finite differences agree on logdet (25), softplus (100), \
         mean path ({checked_mu} probes), variance path ({checked_v} probes), {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// criterion 3: degenerate-sigma identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_degenerate_sigma_identity() {
    let (train, test) = mnist_views(&[0, 1], 30, 20);
    let cfg = RunConfig {
        classes: vec![0, 1],
        arch: ArchId::Mlp,
        feature_dim: 16,
        batch_per_class: 8,
        sample_mode: SampleMode::SigmaZero,
        seed: 5,
        ..RunConfig::default()
    };
    let manifest = build_manifest(cfg.arch, cfg.feature_dim).unwrap();
    let rate_cfg = RateConfig::new(cfg.eps_sq, cfg.feature_dim).unwrap();
    let ctx = trainer::StepCtx::new(&cfg, &rate_cfg, &manifest);
    let (mut mu, var) = init_params(manifest.params(), 0.02, 0.02, &mut init_rng(cfg.seed));
    let mut batches =
        minmax_bnn::data::BalancedBatches::new(&train, cfg.batch_per_class, batch_rng(cfg.seed))
            .unwrap();
    let mut opt = AdamState::new(&mu.0);
    let batch = batches.next_batch();
    let row = trainer::netd_step(&ctx, &mut mu, &var, &batch, &mut opt, 0, 1, 1).unwrap();

    let (tau, dr_z, dr_zhat, pairwise) = (
        row.tau.unwrap(),
        row.dr_z.unwrap(),
        row.dr_zhat.unwrap(),
        row.pairwise_sum.unwrap(),
    );
    assert_eq!(
        dr_z, dr_zhat,
        "identical features must give identical rates"
    );
    assert!(pairwise.abs() < 1e-9, "pairwise sum {pairwise:e}");
    assert!((tau - 2.0 * dr_z).abs() < 1e-9);

    let report = evaluate(
        &manifest,
        &mu,
        &var,
        &train,
        &test,
        5,
        SampleMode::SigmaZero,
        cfg.seed,
        0,
        0,
    )
    .unwrap();
    assert_eq!(report.acc_netd, report.acc_netg);
    assert_eq!(report.gap, 0.0);
    report!(
        "ACCEPTANCE 3: PASS - sigma-floor override gives tau = 2*dR(Z) (pairwise {pairwise:.1e}) and a zero accuracy gap"
    );
}

// ---------------------------------------------------------------------------
// criterion 4: pair distance of a set with itself vanishes
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_identical_sets_law() {
    let mut rng = init_rng(404);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let d = 2 + (trial % 7);
        let n = 1 + (trial % 12);
        let (z, _) = random_feature_set(&mut rng, d, n, 1);
        let cfg = RateConfig::new([0.25, 0.5, 1.0][trial % 3], d).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(z.clone());
        let b = tape.constant(z);
        let p = pairwise_delta_r(&mut tape, a, b, &cfg).unwrap();
        worst = worst.max(tape.value(p).item().abs());
    }
    assert!(worst < 1e-9, "worst self-distance {worst:e}");
    report!("ACCEPTANCE 4: PASS - pairwise distance of 50 sets with themselves stays below 1e-9 (worst {worst:.1e})");
}

// ---------------------------------------------------------------------------
// criterion 5: alternation arithmetic of the training loop
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_alternation_ledger() {
    let [tri, trl, tei, tel] = mnist_paths();
    let out = scratch("ledger");
    let args: Vec<String> = [
        "--train-images",
        tri.to_str().unwrap(),
        "--train-labels",
        trl.to_str().unwrap(),
        "--test-images",
        tei.to_str().unwrap(),
        "--test-labels",
        tel.to_str().unwrap(),
        "--classes",
        "0,1",
        "--train-per-class",
        "40",
        "--test-per-class",
        "20",
        "--arch",
        "mlp",
        "--feature-dim",
        "8",
        "--batch-per-class",
        "8",
        "--numsteps",
        "10",
        "--ns",
        "5",
        "--eval-every",
        "1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let run = train_via_cli(out, &args);

    let d_rows = run.rows.iter().filter(|r| r.phase == Phase::D).count();
    let v_rows = run.rows.iter().filter(|r| r.phase == Phase::V).count();
    let e_rows = run.rows.iter().filter(|r| r.phase == Phase::E).count();
    assert_eq!((d_rows, v_rows, e_rows), (50, 10, 10));

    // the update sequence reads (D^5 V) ten times over, in step order
    let updates: Vec<(u64, u64, Phase)> = run
        .rows
        .iter()
        .filter(|r| r.phase != Phase::E)
        .map(|r| (r.step, r.inner, r.phase))
        .collect();
    let mut expect = Vec::new();
    for step in 1..=10u64 {
        for inner in 1..=5u64 {
            expect.push((step, inner, Phase::D));
        }
        expect.push((step, 6, Phase::V));
    }
    assert_eq!(updates, expect);
    report!("ACCEPTANCE 5: PASS - numsteps=10, ns=5 yields exactly 50 D updates and 10 V updates in (D^5 V)^10 order");
}

// ---------------------------------------------------------------------------
// criterion 6: scaled accuracy trend on three classes
// ---------------------------------------------------------------------------

fn assert_trend_gates(run: &TrainedRun, label: &str) -> (f64, f64, f64, f64) {
    let last = run.final_eval();
    let (acc_d, acc_g, gap) = (
        last.acc_netd.unwrap(),
        last.acc_netg.unwrap(),
        last.gap.unwrap(),
    );
    let (d_series, g_series) = run.accuracy_series();
    // 600 test points, so one flipped prediction moves accuracy by 1/600
    let corr = pearson(&d_series, &g_series, 1.0 / 600.0);
    assert!(acc_d >= 0.90, "{label}: final mean-net accuracy {acc_d}");
    assert!(acc_g >= 0.90, "{label}: final sampled-net accuracy {acc_g}");
    assert!(gap <= 0.03, "{label}: final accuracy gap {gap}");
    assert!(corr >= 0.9, "{label}: accuracy correlation {corr}");
    assert!(
        run.wall < Duration::from_secs(900),
        "{label}: run took {:?}",
        run.wall
    );
    (acc_d, acc_g, gap, corr)
}

#[test]
fn criterion_06_scaled_accuracy_trend() {
    let run = trend_run();
    let (acc_d, acc_g, gap, corr) = assert_trend_gates(run, "ns=1");
    report!(
        "ACCEPTANCE 6: PASS - ns=1 trend run: acc_netd {acc_d:.4}, acc_netg {acc_g:.4}, gap {gap:.4}, correlation {corr:.3}, {:?}",
        run.wall
    );
}

// ---------------------------------------------------------------------------
// criterion 7: co-movement under ns=5
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_co_movement_ns5() {
    let ns5 = trend_ns5();
    let (acc_d5, acc_g5, gap5, corr5) = assert_trend_gates(ns5, "ns=5");
    let base = trend_run().final_eval();
    let (acc_d1, acc_g1) = (base.acc_netd.unwrap(), base.acc_netg.unwrap());
    assert!(
        (acc_d5 - acc_d1).abs() <= 0.03,
        "mean-net finals {acc_d5} vs {acc_d1}"
    );
    assert!(
        (acc_g5 - acc_g1).abs() <= 0.03,
        "sampled-net finals {acc_g5} vs {acc_g1}"
    );
    report!(
        "ACCEPTANCE 7: PASS - ns=5 run: acc_netd {acc_d5:.4}, acc_netg {acc_g5:.4}, gap {gap5:.4}, correlation {corr5:.3}; finals within 3 points of ns=1"
    );
}

// ---------------------------------------------------------------------------
// criterion 8: determinism of the metrics file
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_metrics_determinism() {
    let a = trend_run();
    let b = trend_rerun();
    let c = trend_other_seed();
    assert_eq!(
        a.metrics_bytes, b.metrics_bytes,
        "same seed must reproduce metrics.csv byte for byte"
    );
    assert_ne!(
        a.metrics_bytes, c.metrics_bytes,
        "different seeds must not collide"
    );
    report!(
        "ACCEPTANCE 8: PASS - same-seed rerun is byte-identical ({} bytes); different seed diverges",
        a.metrics_bytes.len()
    );
}

// ---------------------------------------------------------------------------
// criterion 9: sampling statistics of one parameter
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_sampling_statistics() {
    let mut mu_set = ParamSet::new();
    mu_set.push("w", Tensor::new(vec![1], vec![0.0]).unwrap());
    let mu = MeanParams(mu_set);
    // v chosen so softplus(v) = 0.5
    let v = (0.5f64.exp() - 1.0).ln();
    let mut v_set = ParamSet::new();
    v_set.push("w", Tensor::new(vec![1], vec![v]).unwrap());
    let var = VarianceParams(v_set);

    let n = 100_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for draw in 0..n {
        let s = sample_net(&mu, &var, SampleMode::Fresh, 909, draw as u64).unwrap();
        let x = s.theta.iter().next().unwrap().1.data()[0];
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let std = ((sum_sq / n as f64) - mean * mean).sqrt();
    assert!((-0.005..=0.005).contains(&mean), "mean {mean}");
    assert!((0.494..=0.506).contains(&std), "std {std}");
    report!("ACCEPTANCE 9: PASS - 1e5 draws at mu=0, sigma=0.5: mean {mean:.5}, std {std:.5}");
}

// ---------------------------------------------------------------------------
// criterion 10: canonical MNIST files parse and round-trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_idx_canonical_files() {
    let [tri, trl, tei, tel] = mnist_paths();
    let cases: [(&Path, u32, &[u32]); 4] = [
        (&tri, 2051, &[60000, 28, 28]),
        (&trl, 2049, &[60000]),
        (&tei, 2051, &[10000, 28, 28]),
        (&tel, 2049, &[10000]),
    ];
    let dir = scratch("idx-roundtrip");
    for (path, magic, extents) in cases {
        let parsed = parse_idx(path, magic).unwrap();
        assert_eq!(parsed.magic, magic, "{}", path.display());
        assert_eq!(parsed.extents, extents, "{}", path.display());
        let rewritten = dir.join(path.file_name().unwrap());
        write_idx(&rewritten, parsed.magic, &parsed.extents, &parsed.payload).unwrap();
        assert_eq!(
            std::fs::read(&rewritten).unwrap(),
            std::fs::read(path).unwrap(),
            "round-trip of {} is not byte-exact",
            path.display()
        );
    }
    report!("ACCEPTANCE 10: PASS - canonical files carry magics 2051/2049 with extents 60000x28x28 / 60000 and round-trip byte-exactly");
}

// ---------------------------------------------------------------------------
// recorded (non-gated): both readings of the variance initialization
// ---------------------------------------------------------------------------

/// The variance network's initial scale has two defensible readings: sigma
/// matching the 0.02 weight scale (the default) and v = 0, i.e. sigma =
/// ln 2. Both are run briefly here and recorded; neither is a gate.
#[test]
fn record_sigma_init_readings() {
    let (train, test) = mnist_views(&[0, 1, 2], 100, 50);
    for sigma_init in [0.02, std::f64::consts::LN_2] {
        let cfg = RunConfig {
            classes: vec![0, 1, 2],
            arch: ArchId::Mlp,
            feature_dim: 32,
            numsteps: 10,
            ns: 1,
            batch_per_class: 16,
            eval_every: 5,
            sigma_init,
            seed: 0,
            ..RunConfig::default()
        };
        let mut sink = VecSink::default();
        trainer::run(&cfg, &train, &test, &mut sink, |_, _, _| Ok(())).unwrap();
        let last = sink
            .rows
            .iter()
            .rev()
            .find(|r| r.phase == Phase::E)
            .unwrap();
        report!(
            "RECORD sigma_init={sigma_init:.4}: acc_netd {:.4}, acc_netg {:.4}, gap {:.4}",
            last.acc_netd.unwrap(),
            last.acc_netg.unwrap(),
            last.gap.unwrap()
        );
    }
}
