//! Two-stage mediation pipeline: a time-varying effect model for the
//! mediator, scalar-on-function regression for the outcome, the
//! integrated indirect effect, and a subject-level nonparametric
//! bootstrap for its confidence interval and p-value.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::LongDataset;
use crate::error::{Error, Result};
use crate::funreg::{
    fit_scalar_on_function_with, presmooth_subjects, FunregFit, FunregOptions, PresmoothMethod,
    ScalarEstimate,
};
use crate::glm::{fit_penalized_glm, Link, DEFAULT_IRLS_MAX_ITER, DEFAULT_IRLS_TOL};
use crate::spline::BasisSpec;
use crate::stats::{normal_quantile, sample_sd, two_sided_p};
use crate::tvem::{fit_tvem_with, TvemFit, TvemOptions};

/// Configuration of the full mediation pipeline.
#[derive(Debug, Clone)]
pub struct MediationConfig {
    pub mediator_link: Link,
    pub outcome_link: Link,
    /// Basis for the time-varying mediator-stage coefficients.
    pub tvem_spec: BasisSpec,
    /// Basis for the outcome-stage coefficient function.
    pub funreg_spec: BasisSpec,
    /// Size of the shared evaluation grid.
    pub grid_size: usize,
    /// Subjects with fewer mediator records are dropped before fitting.
    pub min_obs: usize,
    pub nboot: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub presmooth: PresmoothMethod,
    pub lambda_grid: Vec<f64>,
}

impl Default for MediationConfig {
    fn default() -> Self {
        Self {
            mediator_link: Link::Identity,
            outcome_link: Link::Logit,
            tvem_spec: BasisSpec::default(),
            // Ten basis functions for the outcome-stage coefficient
            // function; one subject contributes one outcome, so this
            // stage needs a leaner basis than the mediator stage.
            funreg_spec: BasisSpec {
                degree: 3,
                interior_knots: 6,
                penalty_order: 2,
            },
            grid_size: 100,
            min_obs: 1,
            nboot: 500,
            seed: 0,
            ci_level: 0.95,
            presmooth: PresmoothMethod::LinearInterpolation,
            lambda_grid: crate::glm::default_lambda_grid(),
        }
    }
}

impl MediationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nboot < 1 {
            return Err(Error::InvalidInput("nboot must be at least 1".into()));
        }
        if !(0.0 < self.ci_level && self.ci_level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "ci_level must be in (0, 1), got {}",
                self.ci_level
            )));
        }
        if self.grid_size < 10 {
            return Err(Error::InvalidInput(format!(
                "grid_size must be at least 10, got {}",
                self.grid_size
            )));
        }
        self.tvem_spec.validate()?;
        self.funreg_spec.validate()
    }
}

/// Unpenalized regression of the outcome on treatment and covariates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TotalEffect {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub converged: bool,
}

/// Full two-stage result.
#[derive(Debug, Clone)]
pub struct MediationResult {
    pub total_effect: TotalEffect,
    /// Treatment coefficient of the outcome regression.
    pub direct_effect: ScalarEstimate,
    /// Integrated product of the treatment-effect and mediator-effect
    /// functions.
    pub indirect_effect: f64,
    pub tvem: TvemFit,
    pub funreg: FunregFit,
    pub n_subjects_used: usize,
    pub n_dropped: usize,
    pub dropped_ids: Vec<String>,
    /// Total minus (direct + indirect) on the link scale. Reported only;
    /// smoothing keeps it from closing exactly on data.
    pub decomposition_gap: f64,
}

/// Bootstrap inference for the indirect effect.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub point_estimate: f64,
    /// Indirect effect of each successful replicate, in replicate order.
    pub replicates: Vec<f64>,
    pub ci_normal: (f64, f64),
    pub ci_basic: (f64, f64),
    pub ci_percentile: (f64, f64),
    pub p_value: f64,
    pub n_failed: usize,
}

/// Integrated indirect effect: the grid mean of `alpha_x ⊙ beta_m`
/// rescaled by the width of the time interval.
pub fn indirect_effect(alpha_x: &[f64], beta_m: &[f64], t_min: f64, t_max: f64) -> Result<f64> {
    if alpha_x.len() != beta_m.len() {
        return Err(Error::DimensionMismatch(format!(
            "alpha_x has {} samples but beta_m has {}",
            alpha_x.len(),
            beta_m.len()
        )));
    }
    if alpha_x.is_empty() {
        return Err(Error::InvalidInput("empty coefficient samples".into()));
    }
    let mean = alpha_x
        .iter()
        .zip(beta_m)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / alpha_x.len() as f64;
    Ok(mean * (t_max - t_min))
}

/// Fits the unpenalized total-effect regression and returns the treatment
/// coefficient with its model-based standard error, z statistic, and
/// two-sided p-value.
pub fn fit_total_effect(
    treatment: &[f64],
    covariates: &Array2<f64>,
    outcome: &[f64],
    link: Link,
) -> Result<TotalEffect> {
    let n = treatment.len();
    if outcome.len() != n || covariates.nrows() != n {
        return Err(Error::DimensionMismatch(
            "treatment, covariates, and outcome must have equal row counts".into(),
        ));
    }
    let n_cov = covariates.ncols();
    let mut design = Array2::zeros((n, 2 + n_cov));
    for i in 0..n {
        design[[i, 0]] = 1.0;
        design[[i, 1]] = treatment[i];
        for c in 0..n_cov {
            design[[i, 2 + c]] = covariates[[i, c]];
        }
    }
    let y = Array1::from_iter(outcome.iter().copied());
    let w = Array1::ones(n);
    let fit = fit_penalized_glm(
        &design,
        &y,
        &w,
        link,
        &[],
        DEFAULT_IRLS_TOL,
        DEFAULT_IRLS_MAX_ITER,
    )?;
    let estimate = fit.coefficients[1];
    let se = fit.model_se(1);
    let z = if se > 0.0 { estimate / se } else { f64::NAN };
    let p_value = if z.is_finite() { two_sided_p(z) } else { f64::NAN };
    Ok(TotalEffect {
        estimate,
        se,
        z,
        p_value,
        converged: fit.converged,
    })
}

/// Runs the full pipeline: minimum-observations filter, mediator-stage
/// fit, presmoothing, outcome-stage fit, total effect, and the indirect
/// effect, all on one shared grid.
pub fn fit_mediation(data: &LongDataset, config: &MediationConfig) -> Result<MediationResult> {
    config.validate()?;
    let (filtered, dropped) = data
        .filter_min_obs(config.min_obs.max(1))
        .map_err(|e| e.in_stage("filtering"))?;
    let mut result = fit_mediation_filtered(&filtered, config)?;
    result.n_dropped = dropped.len();
    result.dropped_ids = dropped;
    Ok(result)
}

/// Pipeline body; assumes the minimum-observations filter already ran.
fn fit_mediation_filtered(
    data: &LongDataset,
    config: &MediationConfig,
) -> Result<MediationResult> {
    let tvem_options = TvemOptions {
        lambda_grid: config.lambda_grid.clone(),
        ..TvemOptions::default()
    };
    let tvem = fit_tvem_with(
        data,
        config.mediator_link,
        &config.tvem_spec,
        config.grid_size,
        &tvem_options,
    )
    .map_err(|e| e.in_stage("mediator-model"))?;

    let curves = presmooth_subjects(data, config.grid_size, config.presmooth)
        .map_err(|e| e.in_stage("presmoothing"))?;

    let treatment = data.treatment_vec();
    let covariates = data.covariate_matrix();
    let outcome = data.outcome_vec();
    let funreg_options = FunregOptions {
        lambda_grid: config.lambda_grid.clone(),
    };
    let funreg = fit_scalar_on_function_with(
        &curves,
        &treatment,
        &covariates,
        &outcome,
        config.outcome_link,
        &config.funreg_spec,
        &funreg_options,
    )
    .map_err(|e| e.in_stage("outcome-model"))?;

    let total_effect = fit_total_effect(&treatment, &covariates, &outcome, config.outcome_link)
        .map_err(|e| e.in_stage("total-effect"))?;

    let indirect = indirect_effect(
        &tvem.alpha_x.estimate,
        &funreg.beta_m.estimate,
        data.t_min(),
        data.t_max(),
    )
    .map_err(|e| e.in_stage("indirect-effect"))?;

    let direct_effect = funreg.beta_x;
    let decomposition_gap = total_effect.estimate - (direct_effect.estimate + indirect);

    Ok(MediationResult {
        total_effect,
        direct_effect,
        indirect_effect: indirect,
        tvem,
        funreg,
        n_subjects_used: data.n_subjects(),
        n_dropped: 0,
        dropped_ids: vec![],
        decomposition_gap,
    })
}

/// Percentile interval from order statistics at ranks
/// `⌈(α/2)(B+1)⌉` and `⌈(1−α/2)(B+1)⌉`.
pub fn percentile_interval(replicates: &[f64], level: f64) -> Result<(f64, f64)> {
    if replicates.is_empty() {
        return Err(Error::InvalidInput("no bootstrap replicates".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite replicates"));
    let b = sorted.len();
    let alpha = 1.0 - level;
    // Nudge below the ceiling so near-integer products of inexact levels
    // (e.g. 0.025 · 200) land on the intended rank.
    let rank = |q: f64| (q - 1e-9).ceil().max(1.0) as usize;
    let lo_rank = rank((alpha / 2.0) * (b + 1) as f64);
    let hi_rank = rank((1.0 - alpha / 2.0) * (b + 1) as f64);
    let lo = sorted[lo_rank.clamp(1, b) - 1];
    let hi = sorted[hi_rank.clamp(1, b) - 1];
    Ok((lo, hi))
}

/// Basic interval: the percentile endpoints reflected around the point
/// estimate.
pub fn basic_interval(estimate: f64, percentile: (f64, f64)) -> (f64, f64) {
    (2.0 * estimate - percentile.1, 2.0 * estimate - percentile.0)
}

/// Normal-approximation interval from the replicate standard deviation.
pub fn normal_interval(estimate: f64, replicates: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let sd = sample_sd(replicates);
    Ok((estimate - z * sd, estimate + z * sd))
}

/// Smallest level at which the percentile interval excludes zero,
/// computed from the replicate ranks; always in (0, 1].
pub fn percentile_p_value(replicates: &[f64]) -> f64 {
    let b = replicates.len();
    if b == 0 {
        return 1.0;
    }
    let le = replicates.iter().filter(|&&r| r <= 0.0).count();
    let ge = replicates.iter().filter(|&&r| r >= 0.0).count();
    let p = 2.0 * (le.min(ge) + 1) as f64 / (b + 1) as f64;
    p.min(1.0)
}

/// Subject-level nonparametric bootstrap of the indirect effect. Resample
/// index sets are pre-generated sequentially from the seed, so the
/// replicate vector is identical regardless of how many threads execute
/// the refits. Failed replicates are dropped and counted.
pub fn bootstrap_mediation(data: &LongDataset, config: &MediationConfig) -> Result<BootstrapResult> {
    config.validate()?;
    let alpha = 1.0 - config.ci_level;
    let min_boot = (2.0 / alpha - 1.0).ceil() as usize;
    if config.nboot < min_boot {
        return Err(Error::InvalidInput(format!(
            "nboot {} is too small for a {:.0}% percentile interval; need at least {min_boot}",
            config.nboot,
            100.0 * config.ci_level
        )));
    }
    let (filtered, dropped) = data
        .filter_min_obs(config.min_obs.max(1))
        .map_err(|e| e.in_stage("filtering"))?;
    let point = fit_mediation_filtered(&filtered, config)?;
    let estimate = point.indirect_effect;
    let _ = dropped;

    let n = filtered.n_subjects();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let index_sets: Vec<Vec<usize>> = (0..config.nboot)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect();

    let outcomes: Vec<Option<f64>> = index_sets
        .par_iter()
        .map(|draw| {
            filtered
                .resample_subjects(draw)
                .and_then(|ds| fit_mediation_filtered(&ds, config))
                .ok()
                .map(|r| r.indirect_effect)
        })
        .collect();

    let n_failed = outcomes.iter().filter(|o| o.is_none()).count();
    if 5 * n_failed > config.nboot {
        return Err(Error::BootstrapFailures {
            failed: n_failed,
            total: config.nboot,
        });
    }
    let replicates: Vec<f64> = outcomes.into_iter().flatten().collect();
    let ci_percentile = percentile_interval(&replicates, config.ci_level)?;
    let ci_basic = basic_interval(estimate, ci_percentile);
    let ci_normal = normal_interval(estimate, &replicates, config.ci_level)?;
    let p_value = percentile_p_value(&replicates);

    Ok(BootstrapResult {
        point_estimate: estimate,
        replicates,
        ci_normal,
        ci_basic,
        ci_percentile,
        p_value,
        n_failed,
    })
}

/// Checks that the log-scale effects decompose additively: the total
/// effect is rebuilt from `beta_m · (alpha0 + alpha_x)` minus
/// `beta_m · alpha0` by quadrature and compared against direct plus
/// indirect. Returns the absolute residual, which is nonzero only through
/// floating-point cancellation.
pub fn log_link_decomposition_check(
    alpha0: &[f64],
    alpha_x: &[f64],
    beta_x: f64,
    beta_m: &[f64],
    t_min: f64,
    t_max: f64,
) -> Result<f64> {
    if alpha0.len() != alpha_x.len() || alpha0.len() != beta_m.len() {
        return Err(Error::DimensionMismatch(
            "alpha0, alpha_x, and beta_m must share one grid".into(),
        ));
    }
    let treated: Vec<f64> = alpha0.iter().zip(alpha_x).map(|(a0, ax)| a0 + ax).collect();
    let log_te = beta_x + indirect_effect(&treated, beta_m, t_min, t_max)?
        - indirect_effect(alpha0, beta_m, t_min, t_max)?;
    let log_de = beta_x;
    let log_ie = indirect_effect(alpha_x, beta_m, t_min, t_max)?;
    Ok((log_te - (log_de + log_ie)).abs())
}
