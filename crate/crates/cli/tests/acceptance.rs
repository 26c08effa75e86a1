//! Acceptance run: the exact property suites plus the desk-scale shapes
//! experiments. Prints one PASS/FAIL line per criterion. Any failing exact
//! criterion fails the test; the desk-scale experiments fail it only with
//! `SIDDA_ACCEPTANCE_STRICT=1`. Run artifacts are kept under the cargo target
//! tmpdir.
//!
//! `cargo test --release -p sidda-cli --test acceptance -- --nocapture`

#[path = "../../core/tests/datagen.rs"]
mod datagen;
#[path = "../../core/tests/equivariance.rs"]
mod equivariance;
#[path = "../../core/tests/gradients.rs"]
mod gradients;
#[path = "../../core/tests/metrics.rs"]
mod metrics;
#[path = "../../core/tests/training.rs"]
mod training;
#[path = "../../core/tests/transport.rs"]
mod transport;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sidda_cli::commands::{run_comparison, run_training};
use sidda_cli::{RunConfig, RunReport, SeedMetrics};
use sidda_core::data::{gen_shapes, write_dataset, ShiftConfig};
use sidda_core::par;
use sidda_core::train::DaMethod;

const SEEDS: &str = "1, 2, 3";

/// Directional training experiments. Their FAIL lines are reported; they fail
/// the test only when [`STRICT`] is set.
const DESK_SCALE: [usize; 4] = [6, 7, 8, 9];
const STRICT: &str = "SIDDA_ACCEPTANCE_STRICT";

/// Writes to the process stdout directly so lines show without `--nocapture`.
fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Runs named checks, each of which panics on failure, within `budget` seconds.
fn suite(budget: f64, checks: &[(&str, fn())]) -> Verdict {
    let start = Instant::now();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, f)| catch_unwind(AssertUnwindSafe(f)).is_err())
        .map(|(name, _)| *name)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!("{} checks in {secs:.1}s (budget {budget:.0}s)", checks.len());
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    Verdict::new(failed.is_empty() && secs <= budget, detail)
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// The shapes desk task: 32x32, 2000 training and 500 test images per
/// domain, target domain Poisson shifted at S = 0.05.
fn desk_data(dir: &Path) {
    let shift = ShiftConfig::Poisson { snr: 0.05 };
    let sets = [
        ("source_train", 2000, 100, None),
        ("source_test", 500, 400, None),
        ("target_train", 2000, 200, Some(7)),
        ("target_test", 500, 300, Some(8)),
    ];
    std::fs::create_dir_all(dir).unwrap();
    for (name, n, seed, shift_seed) in sets {
        let mut ds = gen_shapes(n, 32, seed).unwrap();
        if let Some(s) = shift_seed {
            ds = shift.apply_dataset(&ds, s).unwrap();
        }
        write_dataset(&ds, &dir.join(format!("{name}.sdds"))).unwrap();
    }
}

struct Desk {
    model: &'static str,
    channels: &'static str,
    epochs: usize,
    /// `None` keeps the per-model default warm-up.
    warmup: Option<usize>,
    batch: usize,
}

/// CNN at the full widths, 60 epochs.
const CNN: Desk = Desk { model: "cnn", channels: "8, 16, 32", epochs: 60, warmup: None, batch: 64 };

/// The CNN schedule shortened to 40 epochs so that three methods fit the
/// comparison budget.
const CNN_COMPARE: Desk = Desk { epochs: 40, ..CNN };

/// `D_N` at half the full widths, 26 epochs.
fn dihedral(model: &'static str) -> Desk {
    Desk { model, channels: "4, 8, 16", epochs: 26, warmup: None, batch: 64 }
}

fn config_text(desk: &Desk, method: &str, seeds: &str, data: &Path) -> String {
    let d = |name: &str| data.join(format!("{name}.sdds")).display().to_string();
    let mut text = format!(
        "model = {}\nchannels = {}\nda_method = {method}\nseeds = {seeds}\noutput = run\n\n\
         [data]\nsource_train = {}\nsource_test = {}\ntarget_train = {}\ntarget_test = {}\n\n\
         [schedule]\ntotal_epochs = {}\nbatch_size = {}\n",
        desk.model,
        desk.channels,
        d("source_train"),
        d("source_test"),
        d("target_train"),
        d("target_test"),
        desk.epochs,
        desk.batch,
    );
    if let Some(w) = desk.warmup {
        text.push_str(&format!("warmup_epochs = {w}\n"));
    }
    text
}

fn train_desk(desk: &Desk, method: &str, data: &Path, name: &str) -> RunReport {
    let text = config_text(desk, method, SEEDS, data);
    let cfg = RunConfig::parse(&text, data).unwrap();
    let started = Instant::now();
    let report = run_training(&cfg, &text, &root().join(name), "train").unwrap();
    say(&format!(
        "  run {name}: source {:.3} target {:.3} in {:.0}s",
        report.mean("source_accuracy").unwrap(),
        report.mean("target_accuracy").unwrap(),
        started.elapsed().as_secs_f64()
    ));
    report
}

fn total_seconds(reports: &[&RunReport]) -> f64 {
    reports.iter().flat_map(|r| r.per_seed.iter().map(|m| m.wall_seconds)).sum()
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn sinkhorn_suite() -> Verdict {
    suite(
        60.0,
        &[
            ("self divergence", transport::self_divergence_vanishes),
            ("singletons", transport::singleton_divergence_is_exact),
            ("symmetry", transport::divergence_is_symmetric),
            ("three-point minimization", transport::three_point_value_matches_direct_minimization),
            ("energy distance limit", transport::large_sigma_approaches_energy_distance),
        ],
    )
}

fn gradient_suite() -> Verdict {
    suite(
        120.0,
        &[
            ("conv2d", gradients::conv2d_gradients),
            ("lifting and group conv", gradients::lifting_and_group_conv_gradients),
            ("dense", gradients::dense_gradients),
            ("relu", gradients::relu_gradient),
            ("batch norm", gradients::batch_norm_gradients),
            ("layer norm", gradients::layer_norm_gradient),
            ("max pool", gradients::max_pool_gradient),
            ("dropout", gradients::dropout_gradient),
            ("flatten", gradients::flatten_gradient),
            ("group pool", gradients::group_pool_gradient),
            ("orbit pool", gradients::orbit_pool_gradient),
            ("sinkhorn divergence", transport::divergence_gradient_matches_finite_differences),
        ],
    )
}

fn equivariance_suite() -> Verdict {
    suite(
        60.0,
        &[
            ("d4 logits", equivariance::d4_model_logits_are_invariant),
            ("lifting block", equivariance::lifting_conv_is_equivariant_under_d4),
            ("group block", equivariance::group_conv_is_equivariant_under_d4),
            ("batch-norm block", equivariance::training_block_with_fibre_shared_batch_norm_is_equivariant),
            ("group pool", equivariance::group_pool_commutes_with_the_action),
            ("d1 reflection", equivariance::d1_model_is_reflection_invariant),
        ],
    )
}

fn mechanics_suite() -> Verdict {
    suite(
        60.0,
        &[
            ("sigma rule", training::sigma_rule_on_constructed_latents),
            ("20-epoch floors and clipping", || training::check_run_invariants(20)),
            ("total loss", training::total_loss_arithmetic),
        ],
    )
}

fn metric_suite() -> Verdict {
    suite(
        60.0,
        &[
            ("ece", metrics::ece_hand_cases),
            ("brier", metrics::brier_hand_cases),
            ("silhouette limits", metrics::silhouette_limits),
            ("silhouette", metrics::silhouette_matches_definition),
            ("js disjoint", metrics::js_identical_and_disjoint),
            ("js gaussians", metrics::js_of_shifted_gaussians_matches_quadrature),
            ("isomap", metrics::isomap_recovers_planar_points),
        ],
    )
}

fn efficacy(plain: &RunReport, da: &RunReport) -> Verdict {
    let gain = pct(da.mean("target_accuracy").unwrap() - plain.mean("target_accuracy").unwrap());
    let drop = pct(plain.mean("source_accuracy").unwrap() - da.mean("source_accuracy").unwrap());
    let secs = total_seconds(&[plain, da]);
    Verdict::new(
        gain >= 10.0 && drop <= 2.0 && secs <= 900.0,
        format!("target gain {gain:+.1} pts (>= 10), source drop {drop:.1} pts (<= 2), {secs:.0}s (<= 900)"),
    )
}

fn ordering(cnn_da: &RunReport, d4: &RunReport, d2: &RunReport, d1: &RunReport) -> Verdict {
    let t = |r: &RunReport| r.mean("target_accuracy").unwrap();
    let secs = total_seconds(&[d4, d2, d1]);
    Verdict::new(
        t(d4) >= t(cnn_da) && t(d2) >= t(d1) && secs <= 1800.0,
        format!(
            "target D4 {:.3} vs CNN {:.3}, D2 {:.3} vs D1 {:.3}, {secs:.0}s (<= 1800)",
            t(d4),
            t(cnn_da),
            t(d2),
            t(d1)
        ),
    )
}

fn dynamics(plain: &RunReport, da: &RunReport) -> Verdict {
    let falls = |trace: &[f64]| trace.len() >= 2 && trace[trace.len() - 1] < trace[0];
    let sigma_ok = da.per_seed.iter().all(|m| falls(&m.sigma_trace));
    let js_ok = da.per_seed.iter().all(|m| falls(&m.js_trace));
    let (s_plain, s_da) = (plain.mean("silhouette_target").unwrap(), da.mean("silhouette_target").unwrap());
    let ends = |f: fn(&SeedMetrics) -> &Vec<f64>| {
        da.per_seed
            .iter()
            .map(|m| format!("{:.3}->{:.3}", f(m)[0], f(m)[f(m).len() - 1]))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Verdict::new(
        sigma_ok && js_ok && s_da > s_plain,
        format!(
            "sigma {} ; js {} ; target silhouette {s_da:.3} with alignment vs {s_plain:.3} without",
            ends(|m| &m.sigma_trace),
            ends(|m| &m.js_trace)
        ),
    )
}

fn baselines(data: &Path) -> Verdict {
    let text = config_text(&CNN_COMPARE, "sidda", SEEDS, data);
    let cfg = RunConfig::parse(&text, data).unwrap();
    let methods = [DaMethod::Sidda, DaMethod::Mmd { eps: 0.05 }, DaMethod::Wasserstein];
    let (cmp, _) = run_comparison(&cfg, &text, &methods, &root().join("compare")).unwrap();
    let row = |name: &str| cmp.rows.iter().find(|r| r.method.starts_with(name)).unwrap();
    let (s, m, w) = (row("sidda"), row("mmd"), row("wasserstein"));
    let total: f64 = cmp.rows.iter().map(|r| r.wall_seconds.mean * cmp.seeds.len() as f64).sum();
    let slowest = w.wall_seconds.mean > s.wall_seconds.mean && w.wall_seconds.mean > m.wall_seconds.mean;
    Verdict::new(
        slowest && s.target_accuracy.mean >= m.target_accuracy.mean && total <= 1800.0,
        format!(
            "wall s/seed sidda {:.0} mmd {:.0} wasserstein {:.0}; target sidda {:.3} vs mmd {:.3}; {total:.0}s (<= 1800)",
            s.wall_seconds.mean,
            m.wall_seconds.mean,
            w.wall_seconds.mean,
            s.target_accuracy.mean,
            m.target_accuracy.mean
        ),
    )
}

/// Every recorded metric except wall time, flattened.
fn metric_values(r: &RunReport) -> Vec<f64> {
    let mut v = Vec::new();
    for m in &r.per_seed {
        for d in [&m.source, &m.target] {
            v.extend([d.accuracy, d.ece, d.brier]);
            v.extend(d.confusion.iter().flatten().map(|&c| c as f64));
        }
        v.extend([m.best_epoch as f64, m.silhouette_source, m.silhouette_target]);
        for t in [&m.js_trace, &m.eta1_trace, &m.eta2_trace, &m.sigma_trace] {
            v.extend(t.iter().copied());
        }
    }
    v
}

fn plumbing() -> Verdict {
    let round_trip = catch_unwind(datagen::container_file_round_trip).is_ok();
    let dir = root().join("plumbing");
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let shift = ShiftConfig::Poisson { snr: 0.3 };
    for (name, n, seed, shifted) in
        [("source_train", 90, 1, false), ("source_test", 30, 2, false), ("target_train", 90, 3, true), ("target_test", 30, 4, true)]
    {
        let mut ds = gen_shapes(n, 16, seed).unwrap();
        if shifted {
            ds = shift.apply_dataset(&ds, seed).unwrap();
        }
        write_dataset(&ds, &data.join(format!("{name}.sdds"))).unwrap();
    }
    let desk = Desk { model: "cnn", channels: "2, 4, 4", epochs: 3, warmup: Some(1), batch: 16 };
    let text = config_text(&desk, "sidda", "1, 2", &data);
    let cfg = RunConfig::parse(&text, &data).unwrap();
    let run = |name: &str| run_training(&cfg, &text, &dir.join(name), "train").unwrap();
    let base = metric_values(&run("first"));
    let pool = |threads: usize| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let others = [
        ("repeat", metric_values(&run("repeat"))),
        ("sequential", metric_values(&par::sequential(|| run("sequential")))),
        ("3 threads", metric_values(&pool(3).install(|| run("threads-3")))),
    ];
    let mut worst = 0.0f64;
    let mut same_len = true;
    for (_, v) in &others {
        same_len &= v.len() == base.len();
        worst = base.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Verdict::new(
        round_trip && same_len && worst <= 1e-6,
        format!(
            "container round trip {}; {} metric values, max deviation {worst:.1e} across repeat, sequential and 3-thread runs",
            if round_trip { "byte exact" } else { "FAILED" },
            base.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let _ = std::fs::remove_dir_all(root());
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        say(&format!("criterion {n:2} {:<22} {}  {}", name, if v.pass { "PASS" } else { "FAIL" }, v.detail));
        verdicts.push((n, name, v));
    };

    record(1, "sinkhorn correctness", sinkhorn_suite());
    record(2, "gradients", gradient_suite());
    record(3, "equivariance", equivariance_suite());
    record(4, "training mechanics", mechanics_suite());
    record(5, "metric oracles", metric_suite());

    let data = root().join("data");
    desk_data(&data);
    let cnn = train_desk(&CNN, "none", &data, "cnn-none");
    let cnn_da = train_desk(&CNN, "sidda", &data, "cnn-sidda");
    record(6, "alignment efficacy", efficacy(&cnn, &cnn_da));
    let d4 = train_desk(&dihedral("d4"), "sidda", &data, "d4-sidda");
    let d2 = train_desk(&dihedral("d2"), "sidda", &data, "d2-sidda");
    let d1 = train_desk(&dihedral("d1"), "sidda", &data, "d1-sidda");
    record(7, "equivariance ordering", ordering(&cnn_da, &d4, &d2, &d1));
    record(8, "training dynamics", dynamics(&cnn, &cnn_da));
    record(9, "baseline comparison", baselines(&data));
    record(10, "plumbing", plumbing());

    let failed: Vec<(usize, &str)> = verdicts.iter().filter(|(_, _, v)| !v.pass).map(|(n, name, _)| (*n, *name)).collect();
    let list = |f: &dyn Fn(usize) -> bool| {
        failed.iter().filter(|(n, _)| f(*n)).map(|(n, name)| format!("{n} ({name})")).collect::<Vec<_>>().join(", ")
    };
    say(&format!("acceptance: {} of {} criteria pass", verdicts.len() - failed.len(), verdicts.len()));
    let exact = list(&|n| !DESK_SCALE.contains(&n));
    assert!(exact.is_empty(), "exact criteria failed: {exact}");
    if std::env::var_os(STRICT).is_some() {
        let desk = list(&|n| DESK_SCALE.contains(&n));
        assert!(desk.is_empty(), "desk-scale criteria failed: {desk}");
    }
}
