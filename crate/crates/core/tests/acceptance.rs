//! Acceptance criteria. Runs as a plain binary so every verdict line reaches
//! the console; exits nonzero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use isac_core::checks::run_suite;
use isac_core::cli::{cmd_run, RunOverrides};
use isac_core::config::RunConfig;
use isac_core::filters::Modality;
use isac_core::metrics::{gospa, GospaParams};
use isac_core::sim::{run_experiment, RunReport, TargetClass};
use nalgebra::Vector3;

const EXACT_TOL: f64 = 1e-9;
const PLATEAU_4: f64 = 28.2842712474619;
const PLATEAU_8: f64 = 40.0;
const TREND_RUNS: usize = 20;
const TREND_WINS: usize = 18;
const TAIL_STEPS: usize = 10;
const SP_DROP: f64 = 0.5;
const RMSE_RUNS: usize = 100;
const MODALITY_RATIO: f64 = 2.0;
const FUSION_GAIN: f64 = 0.05;

struct Verdict {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(id: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { id, passed, detail }
}

fn experiment(runs: usize) -> RunReport {
    let mut cfg = RunConfig::default();
    cfg.experiment.runs = runs;
    run_experiment(&cfg).expect("default experiment runs")
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn empty_estimate_plateaus() -> Verdict {
    let params = GospaParams::new(20.0, 2.0).unwrap();
    let truths = |n: usize| -> Vec<Vector3<f64>> {
        (0..n).map(|i| Vector3::new(10.0 * i as f64, 0.0, 0.0)).collect()
    };
    let g4 = gospa(&[], &truths(4), &params).unwrap().total;
    let g8 = gospa(&[], &truths(8), &params).unwrap().total;
    let passed = (g4 - PLATEAU_4).abs() <= EXACT_TOL && (g8 - PLATEAU_8).abs() <= EXACT_TOL;
    verdict(
        "1 empty-estimate GOSPA",
        passed,
        format!("4 truths {g4:.13}, 8 truths {g8:.13} (tol {EXACT_TOL:e})"),
    )
}

fn monostatic_type_plateau(report: &RunReport) -> Verdict {
    let mut worst = 0.0f64;
    for class in [TargetClass::Va, TargetClass::Sp] {
        for run in report.series(Modality::Monostatic, class, false) {
            for g in run {
                worst = worst.max((g - PLATEAU_4).abs());
            }
        }
    }
    verdict(
        "2 unfused monostatic VA/SP constant",
        worst <= EXACT_TOL,
        format!("max |gospa - {PLATEAU_4}| = {worst:.3e} (tol {EXACT_TOL:e})"),
    )
}

fn fusion_wins(report: &RunReport) -> Verdict {
    let tail = |r: &Vec<f64>| mean(r[r.len() - TAIL_STEPS..].iter().copied());
    let mut parts = Vec::new();
    let mut passed = true;
    for (m, c) in [
        (Modality::Bistatic, TargetClass::Va),
        (Modality::Bistatic, TargetClass::Sp),
        (Modality::Monostatic, TargetClass::Ip),
    ] {
        let plain = report.series(m, c, false);
        let fused = report.series(m, c, true);
        let wins = plain
            .iter()
            .zip(&fused)
            .filter(|(a, b)| tail(b) < tail(a))
            .count();
        passed &= wins >= TREND_WINS;
        parts.push(format!("{} {} {wins}/{}", m.as_str(), c.as_str(), plain.len()));
    }
    verdict(
        "3 fusion lowers late GOSPA",
        passed,
        format!("{} (need >= {TREND_WINS})", parts.join(", ")),
    )
}

fn sp_drop(report: &RunReport, period: usize) -> Verdict {
    let fused = report.series(Modality::Bistatic, TargetClass::Sp, true);
    // index k holds step k + 1; the first fusion happens at step `period`
    let at = |step: usize| mean(fused.iter().map(|r| r[step - 1]));
    let before = at(period - 1);
    let after = at(period).min(at(period + 1));
    let drop = 1.0 - after / before;
    verdict(
        "4 bistatic SP drop at first fusion",
        drop >= SP_DROP,
        format!("mean GOSPA {before:.3} at step {} -> {after:.3}, drop {:.1}% (need >= 50%)", period - 1, 100.0 * drop),
    )
}

fn rmse_ordering(report: &RunReport) -> Verdict {
    let row = |m, f| *report.summary_row(m, f).expect("summary row present");
    let b = row(Modality::Bistatic, false);
    let bf = row(Modality::Bistatic, true);
    let m = row(Modality::Monostatic, false);
    let ratio = m.position_m / b.position_m;
    let gain = |a: f64, f: f64| 1.0 - f / a;
    let gp = gain(b.position_m, bf.position_m);
    let gh = gain(b.heading_deg.unwrap(), bf.heading_deg.unwrap());
    let gb = gain(b.bias_m.unwrap(), bf.bias_m.unwrap());
    let passed = ratio >= MODALITY_RATIO && gp >= FUSION_GAIN && gh >= FUSION_GAIN && gb >= FUSION_GAIN;
    verdict(
        "5 UE RMSE ordering",
        passed,
        format!(
            "mono/bi position {ratio:.2}x (need >= {MODALITY_RATIO}); fusion gain pos {:.1}%, heading {:.1}%, bias {:.1}% (need >= {:.0}%)",
            100.0 * gp,
            100.0 * gh,
            100.0 * gb,
            100.0 * FUSION_GAIN
        ),
    )
}

fn suite(id: &'static str, name: &str) -> Verdict {
    match run_suite(name) {
        Ok(checks) => {
            let passed = checks.iter().all(|c| c.passed);
            let detail = checks
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            verdict(id, passed, detail)
        }
        Err(e) => verdict(id, false, e.to_string()),
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "[experiment]\nruns = 3\nseed = 7\n").unwrap();
    let run = |out: &Path| {
        cmd_run(
            &cfg_path,
            &RunOverrides {
                output_dir: Some(out.to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap();
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    let files = ["gospa.csv", "ue.csv", "summary.csv"];
    let differing: Vec<_> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    verdict(
        "12 deterministic CSVs",
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files byte-identical across two executions", files.len())
        } else {
            format!("differing: {differing:?}")
        },
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let period = RunConfig::default().fusion.period;
    let trend = experiment(TREND_RUNS);
    let long = experiment(RMSE_RUNS);
    let verdicts = [
        empty_estimate_plateaus(),
        monostatic_type_plateau(&trend),
        fusion_wins(&trend),
        sp_drop(&trend, period),
        rmse_ordering(&long),
        suite("6 assignment vs enumeration", "assignment"),
        suite("7 GOSPA vs enumeration", "gospa"),
        suite("8 Jacobians vs finite differences", "jacobian"),
        suite("9 GCI closed forms vs quadrature", "gci"),
        suite("10 UE fusion vs Kalman update", "fuse_ue"),
        suite("11 linear-Gaussian PMB sanity", "pmb"),
        determinism(),
    ];
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    for v in &verdicts {
        println!("{} criterion {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.id, v.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        verdicts.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
