//! Stability and invariance properties that need Monte Carlo scale:
//! covariate invariance of the treatment-effect function and quadrature
//! refinement of the outcome stage.

use funmed::data::{LongDataset, Subject};
use funmed::funreg::{
    fit_scalar_on_function_with, integral_design, presmooth_subjects, FunregOptions,
    PresmoothMethod,
};
use funmed::glm::Link;
use funmed::simulate::{generate_dataset, Scenario};
use funmed::spline::{bspline_basis, BasisSpec};
use funmed::tvem::fit_tvem;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Adding an independent pure-noise covariate leaves the treatment-effect
/// function unchanged in expectation (paired across replications).
#[test]
fn irrelevant_covariate_does_not_shift_alpha_x() {
    let n_reps = 20;
    let spec = BasisSpec::default();
    let mut diffs = Vec::with_capacity(n_reps);
    for rep in 0..n_reps {
        let scenario = Scenario::new(1000, 9_000 + rep as u64);
        let data = generate_dataset(&scenario).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + rep as u64);
        let augmented_subjects: Vec<Subject> = data
            .subjects()
            .iter()
            .map(|s| Subject {
                id: s.id.clone(),
                treatment: s.treatment,
                covariates: vec![2.0 * rng.random::<f64>() - 1.0],
                outcome: s.outcome,
            })
            .collect();
        let augmented =
            LongDataset::new(augmented_subjects, data.records().to_vec()).unwrap();

        let base = fit_tvem(&data, Link::Identity, &spec, 100).unwrap();
        let with_cov = fit_tvem(&augmented, Link::Identity, &spec, 100).unwrap();
        let mean_base: f64 =
            base.alpha_x.estimate.iter().sum::<f64>() / base.alpha_x.estimate.len() as f64;
        let mean_cov: f64 = with_cov.alpha_x.estimate.iter().sum::<f64>()
            / with_cov.alpha_x.estimate.len() as f64;
        diffs.push(mean_cov - mean_base);
    }
    let mean = diffs.iter().sum::<f64>() / n_reps as f64;
    let sd = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / (n_reps - 1) as f64)
        .sqrt();
    let se = sd / (n_reps as f64).sqrt();
    assert!(
        mean.abs() < 2.0 * se + 1e-12,
        "mean shift {mean:.5} exceeds 2 SE ({se:.5})"
    );
}

/// Doubling the quadrature grid moves each integral by less than four
/// times the trapezoid error bound, and the fitted coefficient function
/// stays stable in sup norm.
#[test]
fn grid_refinement_is_stable() {
    // Quadrature convergence on a known curve M(t) = t against hat
    // functions: |z(2G) − z(G)| is within 4× the error bound at G.
    let spec = BasisSpec {
        degree: 1,
        interior_knots: 1,
        penalty_order: 1,
    };
    let mut z_by_grid = Vec::new();
    for g in [100usize, 200] {
        let subjects = vec![
            Subject {
                id: "1".into(),
                treatment: 0.0,
                covariates: vec![],
                outcome: 0.0,
            },
            Subject {
                id: "2".into(),
                treatment: 1.0,
                covariates: vec![],
                outcome: 0.0,
            },
        ];
        let mut records = Vec::new();
        for j in 0..g {
            let t = j as f64 / (g - 1) as f64;
            for s in 0..2 {
                records.push(funmed::MediatorRecord {
                    subject: s,
                    time: t,
                    value: if s == 0 { t } else { 1.0 - t },
                });
            }
        }
        let data = LongDataset::new(subjects, records).unwrap();
        let curves = presmooth_subjects(&data, g, PresmoothMethod::LinearInterpolation).unwrap();
        let basis = bspline_basis(&spec, curves.grid.points(), 0.0, 1.0).unwrap();
        z_by_grid.push(integral_design(&curves, &basis).unwrap());
    }
    // Error bound at G=100: h²/12 · ∫|f''| with |f''| ≤ 4 for Bₖ(t)·t.
    let h = 1.0 / 99.0;
    let bound = h * h / 12.0 * 4.0;
    for k in 0..3 {
        let delta = (z_by_grid[0][[0, k]] - z_by_grid[1][[0, k]]).abs();
        assert!(
            delta < 4.0 * bound,
            "column {k}: refinement moved z by {delta:.2e} (bound {:.2e})",
            4.0 * bound
        );
    }

    // Coefficient-function stability on study-style data.
    let scenario = Scenario::new(500, 1234);
    let data = generate_dataset(&scenario).unwrap();
    let treatment = data.treatment_vec();
    let covariates = Array2::zeros((data.n_subjects(), 0));
    let outcome = data.outcome_vec();
    let funreg_spec = BasisSpec {
        degree: 3,
        interior_knots: 6,
        penalty_order: 2,
    };
    let mut beta_m_by_grid = Vec::new();
    for g in [100usize, 200] {
        let curves = presmooth_subjects(&data, g, PresmoothMethod::LinearInterpolation).unwrap();
        let fit = fit_scalar_on_function_with(
            &curves,
            &treatment,
            &covariates,
            &outcome,
            Link::Logit,
            &funreg_spec,
            &FunregOptions::default(),
        )
        .unwrap();
        // Compare at the 100 shared points (every other point of the
        // 200-point grid is not aligned, so sample the curve afresh).
        beta_m_by_grid.push((fit.grid.points().to_vec(), fit.beta_m.estimate));
    }
    let (coarse_grid, coarse) = &beta_m_by_grid[0];
    let (fine_grid, fine) = &beta_m_by_grid[1];
    let mut sup = 0.0f64;
    for (i, &t) in coarse_grid.iter().enumerate() {
        // Nearest fine-grid point; the grids share t_min and t_max.
        let j = fine_grid
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - t).abs().partial_cmp(&(*b - t).abs()).unwrap()
            })
            .map(|(j, _)| j)
            .unwrap();
        sup = sup.max((coarse[i] - fine[j]).abs());
    }
    assert!(sup < 0.01, "sup-norm change across grid refinement: {sup:.4}");
}
