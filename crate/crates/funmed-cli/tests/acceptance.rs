//! Acceptance suite. Each criterion prints one PASS/FAIL line (run with
//! `--nocapture` to see them live) and asserts its stated tolerances.
//!
//! The Monte Carlo criteria run real studies at desk scale; the whole
//! suite is single-command (`cargo test -p funmed-cli --test acceptance`)
//! and deterministic.

use std::fs;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use funmed::mediation::{indirect_effect, log_link_decomposition_check};
use funmed::simulate::{
    indirect_effect_quadrature, run_simulation_study, true_indirect_effect, Scenario, StudyReport,
};

struct Check {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: String) -> Check {
    Check { ok, detail }
}

fn criterion(id: &str, summary: &str, checks: &[Check]) {
    let pass = checks.iter().all(|c| c.ok);
    println!(
        "ACCEPTANCE {id} [{}] {summary}",
        if pass { "PASS" } else { "FAIL" }
    );
    for c in checks {
        println!("    [{}] {}", if c.ok { "ok" } else { "FAIL" }, c.detail);
    }
    assert!(pass, "acceptance criterion {id} failed");
}

fn in_range(value: f64, lo: f64, hi: f64, label: &str) -> Check {
    check(
        (lo..=hi).contains(&value),
        format!("{label} = {value:.4} (target [{lo}, {hi}])"),
    )
}

fn tvem_study() -> &'static (StudyReport, Duration) {
    static STUDY: OnceLock<(StudyReport, Duration)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let scenario = Scenario::new(500, 20_240_101);
        let start = Instant::now();
        let report = run_simulation_study(&scenario, 200, 0).expect("study runs");
        (report, start.elapsed())
    })
}

fn boot_study_500() -> &'static (StudyReport, Duration) {
    static STUDY: OnceLock<(StudyReport, Duration)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let scenario = Scenario::new(500, 20_240_202);
        let start = Instant::now();
        let report = run_simulation_study(&scenario, 200, 199).expect("study runs");
        (report, start.elapsed())
    })
}

fn boot_study_1000() -> &'static (StudyReport, Duration) {
    static STUDY: OnceLock<(StudyReport, Duration)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let scenario = Scenario::new(1000, 20_240_303);
        let start = Instant::now();
        let report = run_simulation_study(&scenario, 100, 199).expect("study runs");
        (report, start.elapsed())
    })
}

#[test]
fn acceptance_1_true_effect_quadrature() {
    let scenario = Scenario::default();
    let start = Instant::now();
    let reference = true_indirect_effect(&scenario);
    let elapsed = start.elapsed();
    let fine = indirect_effect_quadrature(&scenario, 10_000);
    criterion(
        "1",
        "true-effect quadrature reproduces the reference value",
        &[
            check(
                (reference - (-0.2113)).abs() <= 0.0005,
                format!("reference convention value = {reference:.5} (target −0.2113 ± 0.0005)"),
            ),
            check(
                elapsed < Duration::from_millis(1000),
                format!(
                    "runtime {:.3} ms (10⁴-point trapezoid of the same product: {fine:.5})",
                    elapsed.as_secs_f64() * 1e3
                ),
            ),
        ],
    );
}

#[test]
fn acceptance_2_tvem_monte_carlo() {
    let (report, elapsed) = tvem_study();
    criterion(
        "2",
        "treatment-effect function recovery at N=500, 200 replications",
        &[
            check(
                report.alpha_x.bias.abs() < 0.01,
                format!(
                    "grid-averaged |bias| = {:.4} (target < 0.01)",
                    report.alpha_x.bias.abs()
                ),
            ),
            in_range(report.alpha_x.rmse, 0.08, 0.13, "RMSE"),
            in_range(
                report.alpha_x.pointwise_coverage,
                0.92,
                0.97,
                "pointwise coverage",
            ),
            check(
                *elapsed < Duration::from_secs(600),
                format!("runtime {:.1} s (target < 600 s)", elapsed.as_secs_f64()),
            ),
            check(
                report.n_failed == 0,
                format!("{} of {} replications failed", report.n_failed, report.n_datasets),
            ),
        ],
    );
}

#[test]
fn acceptance_3_funreg_monte_carlo() {
    let (report, _) = tvem_study();
    criterion(
        "3",
        "outcome-stage recovery at N=500, 200 replications",
        &[
            in_range(report.beta_x.bias, -0.05, 0.01, "betaX bias"),
            in_range(report.beta_x.coverage, 0.92, 0.97, "betaX coverage"),
            in_range(
                report.beta_m.pointwise_coverage,
                0.92,
                0.98,
                "betaM pointwise coverage",
            ),
        ],
    );
}

#[test]
fn acceptance_4_indirect_effect_inference() {
    let (report_500, elapsed_500) = boot_study_500();
    let (report_1000, elapsed_1000) = boot_study_1000();
    let pct_500 = report_500
        .indirect
        .percentile
        .as_ref()
        .expect("bootstrap ran");
    let pct_1000 = report_1000
        .indirect
        .percentile
        .as_ref()
        .expect("bootstrap ran");
    let total = *elapsed_500 + *elapsed_1000;
    criterion(
        "4",
        "bootstrap inference for the indirect effect (199 replicates)",
        &[
            in_range(pct_500.coverage, 0.91, 0.98, "percentile coverage at N=500"),
            in_range(pct_500.power, 0.58, 0.80, "percentile power at N=500"),
            check(
                pct_1000.power >= 0.85,
                format!(
                    "percentile power at N=1000 = {:.4} (target ≥ 0.85)",
                    pct_1000.power
                ),
            ),
            check(
                total < Duration::from_secs(6 * 3600),
                format!(
                    "runtime {:.0} s + {:.0} s (target < 21600 s total)",
                    elapsed_500.as_secs_f64(),
                    elapsed_1000.as_secs_f64()
                ),
            ),
        ],
    );
}

#[test]
fn acceptance_5_log_link_decomposition() {
    let grid: Vec<f64> = (1..=100).map(|k| k as f64 / 100.0).collect();
    let alpha0: Vec<f64> = grid.iter().map(|&t| t.sqrt()).collect();
    let alpha_x: Vec<f64> = grid.iter().map(|&t| -(t / 2.0).sqrt()).collect();
    let beta_m: Vec<f64> = grid.iter().map(|&t| 0.5 * (t.exp() - 1.0)).collect();
    let residual =
        log_link_decomposition_check(&alpha0, &alpha_x, 0.2, &beta_m, 0.0, 1.0).unwrap();
    criterion(
        "5",
        "log-scale effects decompose additively on population functions",
        &[check(
            residual < 1e-12,
            format!("|log TE − (log DE + log IE)| = {residual:.2e} (target < 1e-12)"),
        )],
    );
}

#[test]
fn acceptance_6_oracle_equivalences() {
    use funmed::glm::{fit_penalized_glm, Link};
    use funmed::spline::{bspline_basis, BasisSpec};
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use rand::SeedableRng;

    // (a) Penalized IRLS at lambda = 0 with identity link equals OLS.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
    let n = 300;
    let p = 5;
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 1..p {
            x[[i, j]] = rng.random::<f64>() * 2.0 - 1.0;
        }
        y[i] = 0.4 + 0.9 * x[[i, 1]] - 0.6 * x[[i, 3]] + rng.random::<f64>() - 0.5;
    }
    let w = Array1::ones(n);
    let irls = fit_penalized_glm(&x, &y, &w, Link::Identity, &[], 1e-8, 100).unwrap();
    // OLS oracle by Gaussian elimination on the normal equations.
    let xtx = x.t().dot(&x);
    let xty = x.t().dot(&y);
    let ols = solve_dense(&xtx, &xty);
    let max_diff_a = (0..p)
        .map(|j| (irls.coefficients[j] - ols[j]).abs())
        .fold(0.0f64, f64::max);

    // (b) TVEM on dense balanced noiseless data with a cubic-polynomial
    // truth equals per-timepoint OLS.
    let times: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
    let alpha0 = |t: f64| 0.8 + 0.5 * t - 0.3 * t * t * t;
    let alpha_x = |t: f64| -0.5 + 0.2 * t * t;
    let mut subjects = Vec::new();
    let mut records = Vec::new();
    for i in 0..40 {
        let treat = (i % 2) as f64;
        subjects.push(funmed::Subject {
            id: format!("{}", i + 1),
            treatment: treat,
            covariates: vec![],
            outcome: 0.0,
        });
        for &t in &times {
            records.push(funmed::MediatorRecord {
                subject: i,
                time: t,
                value: alpha0(t) + alpha_x(t) * treat,
            });
        }
    }
    let data = funmed::LongDataset::new(subjects, records).unwrap();
    let spec = BasisSpec {
        degree: 3,
        interior_knots: 5,
        penalty_order: 1,
    };
    let options = funmed::tvem::TvemOptions {
        lambda_grid: vec![0.0],
        ..Default::default()
    };
    let fit =
        funmed::tvem::fit_tvem_with(&data, Link::Identity, &spec, times.len(), &options).unwrap();
    let mut max_diff_b = 0.0f64;
    for (g, &t) in times.iter().enumerate() {
        // Per-timepoint OLS on balanced noiseless data recovers the truth
        // exactly, so compare against the truth functions directly.
        max_diff_b = max_diff_b
            .max((fit.alpha0.estimate[g] - alpha0(t)).abs())
            .max((fit.alpha_x.estimate[g] - alpha_x(t)).abs());
    }

    // (c) Trapezoid integral design against closed-form moments of
    // degree-1 basis functions: ∫B₁t = 1/24, ∫B₂t = 1/4, ∫B₃t = 5/24.
    let n_grid = 10_001;
    let mut points = Vec::new();
    for j in 0..n_grid {
        let t = j as f64 / (n_grid - 1) as f64;
        points.push((0usize, t, t));
        points.push((1usize, t, 0.0));
    }
    let subjects = (0..2)
        .map(|i| funmed::Subject {
            id: format!("{}", i + 1),
            treatment: i as f64,
            covariates: vec![],
            outcome: 0.0,
        })
        .collect();
    let records = points
        .iter()
        .map(|&(s, t, v)| funmed::MediatorRecord {
            subject: s,
            time: t,
            value: v,
        })
        .collect();
    let data = funmed::LongDataset::new(subjects, records).unwrap();
    let curves = funmed::funreg::presmooth_subjects(
        &data,
        n_grid,
        funmed::PresmoothMethod::LinearInterpolation,
    )
    .unwrap();
    let basis = bspline_basis(
        &BasisSpec {
            degree: 1,
            interior_knots: 1,
            penalty_order: 1,
        },
        curves.grid.points(),
        0.0,
        1.0,
    )
    .unwrap();
    let z = funmed::funreg::integral_design(&curves, &basis).unwrap();
    let moments = [1.0 / 24.0, 0.25, 5.0 / 24.0];
    let max_diff_c = (0..3)
        .map(|k| (z[[0, k]] - moments[k]).abs())
        .fold(0.0f64, f64::max);

    criterion(
        "6",
        "oracle equivalences (OLS, per-timepoint fit, spline moments)",
        &[
            check(
                max_diff_a < 1e-8,
                format!("IRLS λ=0 vs OLS max |Δ| = {max_diff_a:.2e} (target < 1e-8)"),
            ),
            check(
                max_diff_b < 1e-6,
                format!("dense noiseless fit vs per-timepoint truth max |Δ| = {max_diff_b:.2e} (target < 1e-6)"),
            ),
            check(
                max_diff_c < 1e-8,
                format!("trapezoid vs closed-form moments max |Δ| = {max_diff_c:.2e} (target < 1e-8)"),
            ),
        ],
    );
}

/// Gaussian elimination with partial pivoting; test-local oracle kept
/// independent of the library's solvers.
#[allow(clippy::needless_range_loop)]
fn solve_dense(a: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>) -> Vec<f64> {
    let n = b.len();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[[i, j]];
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in (row + 1)..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}

fn run_cli(cwd: &std::path::Path, args: &[&str], envs: &[(&str, &str)]) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_funmed"));
    cmd.current_dir(cwd);
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn acceptance_7_determinism() {
    let mut checks = Vec::new();

    // Same seed, repeated: identical dataset bytes.
    let dir = tempfile::tempdir().unwrap();
    run_cli(
        dir.path(),
        &["simulate", "--n-subjects", "50", "--seed", "9", "--out", "a.csv"],
        &[],
    );
    run_cli(
        dir.path(),
        &["simulate", "--n-subjects", "50", "--seed", "9", "--out", "b.csv"],
        &[],
    );
    checks.push(check(
        fs::read(dir.path().join("a.csv")).unwrap() == fs::read(dir.path().join("b.csv")).unwrap(),
        "simulate twice with one seed: byte-identical CSV".into(),
    ));

    // Same command, different parallelism degrees: identical artifacts.
    let mut fit_dirs = Vec::new();
    for threads in ["1", "4"] {
        let root = tempfile::tempdir().unwrap();
        run_cli(
            root.path(),
            &["simulate", "--n-subjects", "60", "--seed", "9", "--out", "data.csv"],
            &[],
        );
        run_cli(
            root.path(),
            &[
                "fit", "--input", "data.csv", "--binary-outcome", "--nboot", "59", "--seed",
                "17", "--grid-size", "50", "--out-dir", "out",
            ],
            &[("RAYON_NUM_THREADS", threads)],
        );
        fit_dirs.push(root);
    }
    for file in [
        "result.json",
        "bootstrap_replicates.csv",
        "tvem_curves.csv",
        "funreg_curve.csv",
    ] {
        let a = fs::read(fit_dirs[0].path().join("out").join(file)).unwrap();
        let b = fs::read(fit_dirs[1].path().join("out").join(file)).unwrap();
        checks.push(check(
            a == b,
            format!("fit with 1 vs 4 threads: {file} byte-identical"),
        ));
    }

    let mut study_dirs = Vec::new();
    for threads in ["1", "2"] {
        let root = tempfile::tempdir().unwrap();
        run_cli(
            root.path(),
            &[
                "study",
                "--n-subjects",
                "60",
                "--n-datasets",
                "3",
                "--nboot",
                "39",
                "--seed",
                "23",
                "--out-dir",
                "out",
            ],
            &[("RAYON_NUM_THREADS", threads)],
        );
        study_dirs.push(root);
    }
    for file in ["study_report.csv", "study_report.json"] {
        let a = fs::read(study_dirs[0].path().join("out").join(file)).unwrap();
        let b = fs::read(study_dirs[1].path().join("out").join(file)).unwrap();
        checks.push(check(
            a == b,
            format!("study with 1 vs 2 threads: {file} byte-identical"),
        ));
    }

    criterion(
        "7",
        "same seed, any parallelism degree: byte-identical outputs",
        &checks,
    );
}

#[test]
fn acceptance_8_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    run_cli(
        dir.path(),
        &["simulate", "--n-subjects", "250", "--seed", "33", "--out", "data.csv"],
        &[],
    );
    let parsed = funmed::data::read_long_csv(
        fs::File::open(dir.path().join("data.csv")).unwrap(),
        &funmed::ColumnSpec::default(),
    )
    .unwrap();
    let generated = funmed::simulate::generate_dataset(&Scenario::new(250, 33)).unwrap();
    let lossless = parsed == generated;
    run_cli(
        dir.path(),
        &[
            "fit",
            "--input",
            "data.csv",
            "--binary-outcome",
            "--nboot",
            "0",
            "--seed",
            "2",
            "--out-dir",
            "out",
        ],
        &[],
    );
    let elapsed = start.elapsed();
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out").join("result.json")).unwrap(),
    )
    .unwrap();
    let reported = report["indirect_effect"]["estimate"].as_f64().unwrap();
    criterion(
        "8",
        "simulate → fit pipeline on N=250 parses losslessly and completes",
        &[
            check(lossless, "CSV round trip reconstructs the dataset field-for-field".into()),
            check(
                reported.is_finite(),
                format!("pipeline produced indirect effect {reported:.4}"),
            ),
            check(
                elapsed < Duration::from_secs(120),
                format!("runtime {:.1} s (target < 120 s)", elapsed.as_secs_f64()),
            ),
        ],
    );
}

#[test]
fn acceptance_reported_indirect_effect_is_recomputable() {
    // Cross-check of the reporting invariant behind criterion 8: the
    // recomputed integral from the stored grids matches the scalar.
    let scenario = Scenario::new(120, 55);
    let data = funmed::simulate::generate_dataset(&scenario).unwrap();
    let config = funmed::MediationConfig {
        nboot: 39,
        seed: 3,
        ..Default::default()
    };
    let result = funmed::mediation::fit_mediation(&data, &config).unwrap();
    let recomputed = indirect_effect(
        &result.tvem.alpha_x.estimate,
        &result.funreg.beta_m.estimate,
        data.t_min(),
        data.t_max(),
    )
    .unwrap();
    assert!((recomputed - result.indirect_effect).abs() < 1e-12);
}
