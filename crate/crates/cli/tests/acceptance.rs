//! Acceptance criteria. Each prints one PASS/FAIL line. The test fails if
//! a criterion outside `EXPECTED_FAILURES` fails, or if an expected failure
//! starts passing so the list goes stale.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{array, Array2};
use rand::Rng;

use specmatch_core::augment::{sample_views, AugmentPolicy, PolicyPreset};
use specmatch_core::encoder::{gradient_check, EncoderDims, EncoderParams, GradCheckConfig};
use specmatch_core::graph::{generate_sbm, SbmConfig};
use specmatch_core::loss::{info_nce, normalized_laplacian, LossConfig};
use specmatch_core::runner::{run_fig3, DatasetSpec, TrainConfig};
use specmatch_core::spectral::{eigh, lambda2, ZERO_TOL};
use specmatch_core::verify::{analytic_suite, ensemble_suite, BoundReport, HarnessConfig};
use specmatch_core::{seed, Matrix};

/// Criteria known not to hold for this implementation; the analysis is in
/// the decisions ledger. They still run and print their real status.
const EXPECTED_FAILURES: &[usize] = &[8];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn eigensolver() -> Outcome {
    let (result, took) = timed(|| {
        let p3 = normalized_laplacian(&array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
        let ev = eigh(&p3).unwrap().eigenvalues;
        let p3_err = (ev[0] - 0.0).abs().max((ev[1] - 1.0).abs()).max((ev[2] - 2.0).abs());
        let k3 = normalized_laplacian(&array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        let k3_err = (lambda2(&k3, ZERO_TOL).unwrap() - 1.5).abs();
        let mut rng = seed::rng(1);
        let mut recon = 0.0f64;
        for _ in 0..100 {
            let a = Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
            let m = &a + &a.t();
            let r = eigh(&m).unwrap().reconstruct();
            recon = recon.max((&r - &m).iter().fold(0.0f64, |x, v| x.max(v.abs())));
        }
        (p3_err, k3_err, recon)
    });
    let (p3, k3, recon) = result;
    outcome(
        p3 <= 1e-8 && k3 <= 1e-8 && recon <= 1e-8 && took < Duration::from_secs(5),
        format!("P3 err {p3:.1e}, K3 err {k3:.1e}, max reconstruction err {recon:.1e}, {took:.2?}"),
    )
}

fn gradients() -> Outcome {
    let (checks, took) = timed(|| {
        let data = generate_sbm(&SbmConfig {
            n_graphs: 8,
            ..SbmConfig::default()
        })
        .unwrap();
        let policy = AugmentPolicy::preset(PolicyPreset::SocialDense);
        let mut rng = seed::rng(0);
        let (v1, v2): (Vec<_>, Vec<_>) = data
            .graphs()
            .iter()
            .map(|g| sample_views(g, &policy, &mut rng).unwrap())
            .unzip();
        let params = EncoderParams::init(EncoderDims::default(), 0).unwrap();
        gradient_check(&params, &v1, &v2, &LossConfig::default(), &GradCheckConfig::default()).unwrap()
    });
    let worst = checks.iter().map(|c| c.rel_err).fold(0.0f64, f64::max);
    outcome(
        checks.len() == 80 && worst <= 1e-4 && took < Duration::from_secs(30),
        format!("{} coordinates, max rel err {worst:.2e}, {took:.2?}", checks.len()),
    )
}

/// Direct enumeration of the per-anchor terms without log-sum-exp.
fn brute_force_info_nce(z1: &Matrix, z2: &Matrix, tau: f64) -> f64 {
    let n = z1.nrows();
    let row = |k: usize| if k < n { z1.row(k) } else { z2.row(k - n) };
    let mut total = 0.0;
    for a in 0..2 * n {
        let pos = if a < n { a + n } else { a - n };
        let mut denom = 0.0;
        for k in 0..2 * n {
            if k != a {
                denom += (row(a).dot(&row(k)) / tau).exp();
            }
        }
        total -= ((row(a).dot(&row(pos)) / tau).exp() / denom).ln();
    }
    total
}

fn info_nce_oracles() -> Outcome {
    let one = array![[0.6, 0.8]];
    let single = info_nce(&one, &one, 0.2).unwrap();
    let same = array![[1.0, 0.0], [1.0, 0.0]];
    let identical = info_nce(&same, &same, 1.0).unwrap();
    let e = array![[1.0, 0.0], [0.0, 1.0]];
    let orthogonal = info_nce(&e, &e, 1.0).unwrap();
    let want = 4.0 * (1.0 + 2.0 / std::f64::consts::E).ln();
    let errs = [
        (identical - 4.0 * 3f64.ln()).abs(),
        (orthogonal - want).abs(),
        (orthogonal - brute_force_info_nce(&e, &e, 1.0)).abs(),
        (identical - brute_force_info_nce(&same, &same, 1.0)).abs(),
    ];
    outcome(
        single == 0.0 && errs.iter().all(|&x| x <= 1e-10),
        format!("N=1 {single}, 4 ln 3 err {:.1e}, 4 ln(1+2/e) err {:.1e}", errs[0], errs[1]),
    )
}

fn count(reports: &[BoundReport], name: &str) -> (usize, usize, usize, f64) {
    let of: Vec<_> = reports.iter().filter(|r| r.name == name).collect();
    let failed = of.iter().filter(|r| r.failed()).count();
    let skipped = of.iter().filter(|r| r.status == specmatch_core::verify::Status::Skipped).count();
    let min_slack = of
        .iter()
        .filter(|r| r.status != specmatch_core::verify::Status::Skipped)
        .map(|r| r.slack)
        .fold(f64::INFINITY, f64::min);
    (of.len(), failed, skipped, min_slack)
}

fn all_pass(reports: &[BoundReport], name: &str, want: usize) -> (bool, String) {
    let (n, failed, skipped, slack) = count(reports, name);
    (
        n == want && failed == 0 && skipped == 0,
        format!("{name} {}/{n} pass (min slack {slack:.2e})", n - failed - skipped),
    )
}

fn gap_lemmas(reports: &[BoundReport], took: Duration) -> Outcome {
    let parts = [
        all_pass(reports, "duhamel", 200),
        all_pass(reports, "lipschitz", 3),
        all_pass(reports, "cosine_identity", 3),
    ];
    let duhamel_slack = count(reports, "duhamel").3;
    let passed = parts.iter().all(|p| p.0) && duhamel_slack >= -1e-9 && took < Duration::from_secs(60);
    let detail: Vec<_> = parts.iter().map(|p| p.1.clone()).collect();
    outcome(passed, format!("{}, {took:.2?}", detail.join(", ")))
}

fn contrastive_gap(reports: &[BoundReport]) -> Outcome {
    let (ok, detail) = all_pass(reports, "contrastive_gap", 100);
    outcome(ok, detail)
}

fn uniformity_lemmas(reports: &[BoundReport], took: Duration) -> Outcome {
    let parts = [
        all_pass(reports, "hoffman_wielandt", 50),
        all_pass(reports, "rayleigh_step", 50),
        all_pass(reports, "chord_bound", 2),
        all_pass(reports, "lambda2_variance", 50),
        all_pass(reports, "iid_identity", 50),
    ];
    let disconnected = count(reports, "ensemble_connectivity").0;
    let passed = parts.iter().all(|p| p.0) && disconnected == 0 && took < Duration::from_secs(180);
    let detail: Vec<_> = parts.iter().map(|p| p.1.clone()).collect();
    outcome(
        passed,
        format!("{}, {disconnected} unusable ensembles, {took:.2?}", detail.join(", ")),
    )
}

fn uniformity_bound(reports: &[BoundReport]) -> Outcome {
    let (ok, detail) = all_pass(reports, "uniformity_bound", 50);
    outcome(ok, detail)
}

fn trend() -> Outcome {
    let (result, took) = timed(|| {
        (0..5u64)
            .map(|s| {
                let cfg = TrainConfig {
                    dataset: DatasetSpec::Sbm(SbmConfig::default()),
                    epochs: 20,
                    seed: s,
                    ..TrainConfig::default()
                };
                run_fig3(&cfg, 0.5).unwrap()
            })
            .collect::<Vec<_>>()
    });
    let wins = result.iter().filter(|r| r.reg_dominates()).count();
    let probe = |f: &dyn Fn(&specmatch_core::runner::Fig3Result) -> Option<f64>| {
        result.iter().map(|r| f(r).unwrap_or(0.0)).sum::<f64>() / result.len() as f64
    };
    let base = probe(&|r| r.base.log.final_probe());
    let reg = probe(&|r| r.reg.log.final_probe());
    for (s, r) in result.iter().enumerate() {
        println!("  seed {s}: {}", r.summary());
    }
    outcome(
        wins >= 4 && reg >= base - 0.02 && took < Duration::from_secs(600),
        format!("beta=0.5 no worse on both metrics in {wins}/5 seeds, mean probe {reg:.4} vs {base:.4}, {took:.2?}"),
    )
}

fn specmatch(args: &[&str]) -> std::process::ExitStatus {
    Command::new(env!("CARGO_BIN_EXE_specmatch"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("binary runs")
}

fn cli_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"dataset": {"kind": "sbm", "n_graphs": 60, "seed": 3}, "epochs": 4, "batch_size": 32, "seed": 3}"#,
    )
    .unwrap();
    let run = |name: &str| -> (bool, Vec<u8>, Vec<u8>) {
        let out = dir.path().join(name);
        let p = |path: &Path| path.to_str().unwrap().to_string();
        let (cfg, o) = (p(&config), p(&out));
        let data = p(&out.join("dataset.json"));
        let ckpt = p(&out.join("checkpoint.json"));
        let gen = specmatch(&["gen", "--config", &cfg, "--out", &o]).success();
        let train = specmatch(&["train", "--config", &cfg, "--dataset", &data, "--out", &o]).success();
        let verify = specmatch(&[
            "verify", "--config", &cfg, "--dataset", &data, "--checkpoint", &ckpt, "--out", &o,
        ])
        .success();
        let read = |f: &str| std::fs::read(out.join(f)).unwrap_or_default();
        (gen && train && verify, read("runlog.csv"), read("reports.json"))
    };
    let (ok_a, log_a, rep_a) = run("a");
    let (ok_b, log_b, rep_b) = run("b");
    let header = log_a.starts_with(b"epoch,loss_c,loss_g,loss_total,align,unif,probe_acc,seconds\n");
    outcome(
        ok_a && ok_b && header && !log_a.is_empty() && log_a == log_b && rep_a == rep_b,
        format!(
            "all commands succeeded: {}, runlog identical: {}, reports identical: {}",
            ok_a && ok_b,
            log_a == log_b,
            rep_a == rep_b
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let harness = HarnessConfig::default();
    let (analytic, analytic_time) = timed(|| analytic_suite(&harness).unwrap());
    let (ensembles, ensemble_time) = timed(|| {
        let data = generate_sbm(&SbmConfig::default()).unwrap();
        let params = EncoderParams::init(EncoderDims::default(), harness.seed).unwrap();
        let policy = AugmentPolicy::preset(PolicyPreset::SocialDense);
        ensemble_suite(&harness, data.graphs(), &policy, &params).unwrap()
    });
    let mut lemma_reports = ensembles.clone();
    lemma_reports.extend(analytic.iter().filter(|r| r.name == "chord_bound").cloned());

    let results = [
        ("eigensolver", guarded(eigensolver)),
        ("gradient correctness", guarded(gradients)),
        ("InfoNCE oracle values", guarded(info_nce_oracles)),
        ("contrastive-gap lemmas", guarded(|| gap_lemmas(&analytic, analytic_time))),
        ("contrastive-gap bound", guarded(|| contrastive_gap(&analytic))),
        ("uniformity lemmas", guarded(|| uniformity_lemmas(&lemma_reports, ensemble_time))),
        ("uniformity bound", guarded(|| uniformity_bound(&ensembles))),
        ("alignment/uniformity trend", guarded(trend)),
        ("determinism and CLI round trip", guarded(cli_round_trip)),
    ];
    let mut unexpected = Vec::new();
    let mut passes = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let id = i + 1;
        let status = if o.passed { "PASS" } else { "FAIL" };
        let expected = if EXPECTED_FAILURES.contains(&id) { " (expected failure)" } else { "" };
        println!("criterion {id}: {status} {name}{expected}: {}", o.detail);
        passes += usize::from(o.passed);
        if o.passed == EXPECTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    println!("{passes}/{} criteria passed", results.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("criteria with unexpected status: {unexpected:?}");
        ExitCode::FAILURE
    }
}
