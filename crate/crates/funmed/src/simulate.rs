//! Synthetic-data generator and the Monte Carlo performance study:
//! treatment assigned by a fair coin, a Gaussian AR(1) mediator process
//! observed on a dense grid with random deletion, and a distal outcome
//! driven by the integrated mediator trajectory.

use std::io;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{LongDataset, MediatorRecord, Subject};
use crate::error::{Error, Result};
use crate::glm::Link;
use crate::mediation::{bootstrap_mediation, fit_mediation, MediationConfig, MediationResult};
use crate::stats::{normal_quantile, sample_sd};

/// A smooth function of time used by the generator.
pub type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Data-generating configuration.
#[derive(Clone)]
pub struct Scenario {
    pub n_subjects: usize,
    /// Dense generation grid: `n_grid` points at `k / n_grid`.
    pub n_grid: usize,
    /// Probability that each observation is deleted.
    pub missing_rate: f64,
    pub alpha0: CurveFn,
    pub alpha_x: CurveFn,
    /// Marginal standard deviation of the mediator noise process.
    pub mediator_noise_sd: f64,
    /// Lag-1 correlation between adjacent grid points.
    pub ar1_corr: f64,
    pub beta0: f64,
    pub beta_x: f64,
    pub beta_m: CurveFn,
    pub outcome_link: Link,
    /// Outcome noise standard deviation, used only by the identity link.
    pub outcome_noise_sd: f64,
    pub seed: u64,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("n_subjects", &self.n_subjects)
            .field("n_grid", &self.n_grid)
            .field("missing_rate", &self.missing_rate)
            .field("mediator_noise_sd", &self.mediator_noise_sd)
            .field("ar1_corr", &self.ar1_corr)
            .field("beta0", &self.beta0)
            .field("beta_x", &self.beta_x)
            .field("outcome_link", &self.outcome_link)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl Scenario {
    /// Default shapes: a square-root mean trend, a negative square-root
    /// treatment effect, and an exponential mediator weight, with a
    /// logistic outcome.
    pub fn new(n_subjects: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            n_grid: 100,
            missing_rate: 0.6,
            alpha0: Arc::new(|t: f64| t.sqrt()),
            alpha_x: Arc::new(|t: f64| -(t / 2.0).sqrt()),
            mediator_noise_sd: 2.0,
            ar1_corr: 0.8,
            beta0: 0.0,
            beta_x: 0.2,
            beta_m: Arc::new(|t: f64| 0.5 * (t.exp() - 1.0)),
            outcome_link: Link::Logit,
            outcome_noise_sd: 0.0,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::InvalidInput(
                "scenario needs at least 2 subjects".into(),
            ));
        }
        if self.n_grid < 2 {
            return Err(Error::InvalidInput(
                "generation grid needs at least 2 points".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidInput(format!(
                "missing rate must be in [0, 1), got {}",
                self.missing_rate
            )));
        }
        if self.ar1_corr.abs() >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "AR(1) correlation must have magnitude below 1, got {}",
                self.ar1_corr
            )));
        }
        if self.mediator_noise_sd <= 0.0 {
            return Err(Error::InvalidInput(
                "mediator noise standard deviation must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Generation grid times `k / n_grid` for `k = 0, …, n_grid − 1`.
    pub fn grid_times(&self) -> Vec<f64> {
        (0..self.n_grid)
            .map(|k| k as f64 / self.n_grid as f64)
            .collect()
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Self::new(500, 0)
    }
}

/// Counter-based seed derivation so replications are independent of
/// execution order (splitmix finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..times.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
    }
    acc
}

/// Draws one dataset. Per subject: a fair-coin treatment, a Gaussian
/// AR(1) noise path on the dense grid, the outcome from the complete
/// latent trajectory, and then independent deletion of observations.
/// Subjects left with no observations stay in the subject list with no
/// records.
pub fn generate_dataset(scenario: &Scenario) -> Result<LongDataset> {
    scenario.validate()?;
    let times = scenario.grid_times();
    let g = times.len();
    let rho = scenario.ar1_corr;
    let sd = scenario.mediator_noise_sd;
    let innovation_sd = sd * (1.0 - rho * rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let standard = Normal::new(0.0, 1.0).expect("valid normal");

    let alpha0: Vec<f64> = times.iter().map(|&t| (scenario.alpha0)(t)).collect();
    let alpha_x: Vec<f64> = times.iter().map(|&t| (scenario.alpha_x)(t)).collect();
    let beta_m: Vec<f64> = times.iter().map(|&t| (scenario.beta_m)(t)).collect();

    let mut subjects = Vec::with_capacity(scenario.n_subjects);
    let mut records = Vec::new();
    let mut mediator = vec![0.0; g];
    let mut weighted = vec![0.0; g];
    for i in 0..scenario.n_subjects {
        let x = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let mut eps = sd * standard.sample(&mut rng);
        for k in 0..g {
            if k > 0 {
                eps = rho * eps + innovation_sd * standard.sample(&mut rng);
            }
            mediator[k] = alpha0[k] + alpha_x[k] * x + eps;
            weighted[k] = beta_m[k] * mediator[k];
        }
        let integral = trapezoid(&times, &weighted);
        let eta = scenario.beta0 + scenario.beta_x * x + integral;
        let outcome = match scenario.outcome_link {
            Link::Logit => {
                let p = 1.0 / (1.0 + (-eta).exp());
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Link::Identity => eta + scenario.outcome_noise_sd * standard.sample(&mut rng),
            Link::Log => {
                let mean = eta.exp();
                Poisson::new(mean.max(1e-12))
                    .map_err(|e| Error::InvalidInput(format!("outcome mean invalid: {e}")))?
                    .sample(&mut rng)
            }
        };
        subjects.push(Subject {
            id: format!("{}", i + 1),
            treatment: x,
            covariates: vec![],
            outcome,
        });
        for k in 0..g {
            if rng.random::<f64>() >= scenario.missing_rate {
                records.push(MediatorRecord {
                    subject: i,
                    time: times[k],
                    value: mediator[k],
                });
            }
        }
    }
    LongDataset::new(subjects, records)
}

/// Reference value of the integrated indirect effect under the same
/// grid-mean convention the estimator uses: the mean of
/// `alpha_x · beta_m` over an evenly spaced 100-point grid on (0, 1],
/// times the interval width. The default scenario gives −0.2113.
///
/// This right-anchored Riemann sum differs from the exact integral
/// (−0.2082 for the default scenario, see
/// [`indirect_effect_quadrature`]) by about 1.5% because the product is
/// steepest at the right end; the coarse grid convention is kept because
/// the simulation study's coverage targets are defined against it.
pub fn true_indirect_effect(scenario: &Scenario) -> f64 {
    let n = 100;
    let mean = (1..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            (scenario.alpha_x)(t) * (scenario.beta_m)(t)
        })
        .sum::<f64>()
        / n as f64;
    mean * 1.0
}

/// Trapezoid quadrature of `alpha_x · beta_m` on [0, 1] at `n_points`;
/// converges to the exact integral as the grid is refined.
pub fn indirect_effect_quadrature(scenario: &Scenario, n_points: usize) -> f64 {
    let times: Vec<f64> = (0..n_points)
        .map(|i| i as f64 / (n_points - 1) as f64)
        .collect();
    let values: Vec<f64> = times
        .iter()
        .map(|&t| (scenario.alpha_x)(t) * (scenario.beta_m)(t))
        .collect();
    trapezoid(&times, &values)
}

/// Error summaries for a coefficient function, averaged over the grid and
/// over successful replications.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionMetrics {
    pub bias: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mean_se: f64,
    pub pointwise_coverage: f64,
    pub familywise_coverage: f64,
}

/// Error summaries for a scalar coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct ScalarMetrics {
    pub bias: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mean_se: f64,
    pub coverage: f64,
}

/// Coverage of the truth and rejection of zero for one interval method.
#[derive(Debug, Clone, Serialize)]
pub struct CiMetrics {
    pub coverage: f64,
    pub power: f64,
}

/// Point-estimate and bootstrap summaries for the indirect effect.
#[derive(Debug, Clone, Serialize)]
pub struct IndirectMetrics {
    pub bias: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Mean over replications of the bootstrap replicate SD.
    pub mean_bootstrap_se: Option<f64>,
    pub normal: Option<CiMetrics>,
    pub basic: Option<CiMetrics>,
    pub percentile: Option<CiMetrics>,
}

/// Aggregated Monte Carlo performance study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub n_subjects: usize,
    pub n_datasets: usize,
    pub n_successful: usize,
    pub n_failed: usize,
    pub nboot: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub true_indirect_effect: f64,
    pub alpha0: FunctionMetrics,
    pub alpha_x: FunctionMetrics,
    pub beta0: ScalarMetrics,
    pub beta_x: ScalarMetrics,
    pub beta_m: FunctionMetrics,
    pub indirect: IndirectMetrics,
}

#[derive(Default)]
struct FunctionAccumulator {
    sum_err: f64,
    sum_sq: f64,
    sum_se: f64,
    n_points: usize,
    covered_points: usize,
    familywise_hits: usize,
    n_reps: usize,
}

impl FunctionAccumulator {
    fn add(&mut self, estimate: &[f64], se: &[f64], truth: &[f64], z: f64) {
        let mut all = true;
        for i in 0..estimate.len() {
            let err = estimate[i] - truth[i];
            self.sum_err += err;
            self.sum_sq += err * err;
            self.sum_se += se[i];
            self.n_points += 1;
            if err.abs() <= z * se[i] {
                self.covered_points += 1;
            } else {
                all = false;
            }
        }
        if all {
            self.familywise_hits += 1;
        }
        self.n_reps += 1;
    }

    fn finish(&self) -> FunctionMetrics {
        let np = self.n_points.max(1) as f64;
        let nr = self.n_reps.max(1) as f64;
        let mse = self.sum_sq / np;
        FunctionMetrics {
            bias: self.sum_err / np,
            mse,
            rmse: mse.sqrt(),
            mean_se: self.sum_se / np,
            pointwise_coverage: self.covered_points as f64 / np,
            familywise_coverage: self.familywise_hits as f64 / nr,
        }
    }
}

#[derive(Default)]
struct ScalarAccumulator {
    sum_err: f64,
    sum_sq: f64,
    sum_se: f64,
    covered: usize,
    n: usize,
}

impl ScalarAccumulator {
    fn add(&mut self, estimate: f64, se: f64, truth: f64, z: f64) {
        let err = estimate - truth;
        self.sum_err += err;
        self.sum_sq += err * err;
        self.sum_se += se;
        if err.abs() <= z * se {
            self.covered += 1;
        }
        self.n += 1;
    }

    fn finish(&self) -> ScalarMetrics {
        let n = self.n.max(1) as f64;
        let mse = self.sum_sq / n;
        ScalarMetrics {
            bias: self.sum_err / n,
            mse,
            rmse: mse.sqrt(),
            mean_se: self.sum_se / n,
            coverage: self.covered as f64 / n,
        }
    }
}

#[derive(Default)]
struct CiAccumulator {
    covered: usize,
    rejected: usize,
    n: usize,
}

impl CiAccumulator {
    fn add(&mut self, interval: (f64, f64), truth: f64) {
        if interval.0 <= truth && truth <= interval.1 {
            self.covered += 1;
        }
        if interval.0 > 0.0 || interval.1 < 0.0 {
            self.rejected += 1;
        }
        self.n += 1;
    }

    fn finish(&self) -> CiMetrics {
        let n = self.n.max(1) as f64;
        CiMetrics {
            coverage: self.covered as f64 / n,
            power: self.rejected as f64 / n,
        }
    }
}

struct ReplicationOutcome {
    fit: MediationResult,
    boot: Option<crate::mediation::BootstrapResult>,
}

/// Runs the full Monte Carlo study: generate, fit, optionally bootstrap,
/// and aggregate. `nboot = 0` skips bootstrap inference (point-estimate
/// metrics only). Replications run in parallel; seeds are derived from
/// the scenario seed by a counter, so the report does not depend on the
/// degree of parallelism.
pub fn run_simulation_study(
    scenario: &Scenario,
    n_datasets: usize,
    nboot: usize,
) -> Result<StudyReport> {
    scenario.validate()?;
    if n_datasets == 0 {
        return Err(Error::InvalidInput("n_datasets must be positive".into()));
    }
    let truth_ie = true_indirect_effect(scenario);
    let ci_level = 0.95;
    let z = normal_quantile(0.5 + ci_level / 2.0);

    let outcomes: Vec<Option<ReplicationOutcome>> = (0..n_datasets)
        .into_par_iter()
        .map(|rep| {
            let data_seed = derive_seed(scenario.seed, 2 * rep as u64);
            let boot_seed = derive_seed(scenario.seed, 2 * rep as u64 + 1);
            let generated = generate_dataset(&scenario.with_seed(data_seed)).ok()?;
            let config = MediationConfig {
                outcome_link: scenario.outcome_link,
                nboot: nboot.max(1),
                seed: boot_seed,
                ci_level,
                ..MediationConfig::default()
            };
            let fit = fit_mediation(&generated, &config).ok()?;
            let boot = if nboot > 0 {
                Some(bootstrap_mediation(&generated, &config).ok()?)
            } else {
                None
            };
            Some(ReplicationOutcome { fit, boot })
        })
        .collect();

    let n_failed = outcomes.iter().filter(|o| o.is_none()).count();
    let successes: Vec<ReplicationOutcome> = outcomes.into_iter().flatten().collect();
    if successes.is_empty() {
        return Err(Error::FitFailure(
            "every study replication failed to fit".into(),
        ));
    }

    let mut acc_alpha0 = FunctionAccumulator::default();
    let mut acc_alpha_x = FunctionAccumulator::default();
    let mut acc_beta0 = ScalarAccumulator::default();
    let mut acc_beta_x = ScalarAccumulator::default();
    let mut acc_beta_m = FunctionAccumulator::default();
    let mut acc_ie = ScalarAccumulator::default();
    let mut acc_normal = CiAccumulator::default();
    let mut acc_basic = CiAccumulator::default();
    let mut acc_percentile = CiAccumulator::default();
    let mut boot_se_sum = 0.0;
    let mut boot_n = 0usize;

    for outcome in &successes {
        let fit = &outcome.fit;
        let grid = fit.tvem.grid.points();
        let truth_alpha0: Vec<f64> = grid.iter().map(|&t| (scenario.alpha0)(t)).collect();
        let truth_alpha_x: Vec<f64> = grid.iter().map(|&t| (scenario.alpha_x)(t)).collect();
        acc_alpha0.add(&fit.tvem.alpha0.estimate, &fit.tvem.alpha0.se, &truth_alpha0, z);
        acc_alpha_x.add(&fit.tvem.alpha_x.estimate, &fit.tvem.alpha_x.se, &truth_alpha_x, z);

        let fgrid = fit.funreg.grid.points();
        let truth_beta_m: Vec<f64> = fgrid.iter().map(|&t| (scenario.beta_m)(t)).collect();
        acc_beta_m.add(&fit.funreg.beta_m.estimate, &fit.funreg.beta_m.se, &truth_beta_m, z);
        acc_beta0.add(fit.funreg.beta0.estimate, fit.funreg.beta0.se, scenario.beta0, z);
        acc_beta_x.add(fit.funreg.beta_x.estimate, fit.funreg.beta_x.se, scenario.beta_x, z);
        acc_ie.add(fit.indirect_effect, 0.0, truth_ie, z);

        if let Some(boot) = &outcome.boot {
            acc_normal.add(boot.ci_normal, truth_ie);
            acc_basic.add(boot.ci_basic, truth_ie);
            acc_percentile.add(boot.ci_percentile, truth_ie);
            boot_se_sum += sample_sd(&boot.replicates);
            boot_n += 1;
        }
    }

    let ie_scalar = acc_ie.finish();
    let indirect = IndirectMetrics {
        bias: ie_scalar.bias,
        mse: ie_scalar.mse,
        rmse: ie_scalar.rmse,
        mean_bootstrap_se: (boot_n > 0).then(|| boot_se_sum / boot_n as f64),
        normal: (boot_n > 0).then(|| acc_normal.finish()),
        basic: (boot_n > 0).then(|| acc_basic.finish()),
        percentile: (boot_n > 0).then(|| acc_percentile.finish()),
    };

    Ok(StudyReport {
        n_subjects: scenario.n_subjects,
        n_datasets,
        n_successful: successes.len(),
        n_failed,
        nboot,
        seed: scenario.seed,
        ci_level,
        true_indirect_effect: truth_ie,
        alpha0: acc_alpha0.finish(),
        alpha_x: acc_alpha_x.finish(),
        beta0: acc_beta0.finish(),
        beta_x: acc_beta_x.finish(),
        beta_m: acc_beta_m.finish(),
        indirect,
    })
}

impl StudyReport {
    /// One row per quantity; column names follow the usual performance-
    /// table row labels.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "Sample size",
            "Quantity",
            "Bias",
            "Mean squared error",
            "Root mean squared error",
            "Mean estimated SE",
            "Coverage",
            "Pointwise coverage",
            "Familywise coverage",
            "Normal coverage",
            "Basic coverage",
            "Percentile coverage",
            "Normal power",
            "Basic power",
            "Percentile power",
        ])?;
        let n = self.n_subjects.to_string();
        let fmt = |v: f64| format!("{v:.6}");
        let blank = String::new();
        for (name, m) in [
            ("alpha0", &self.alpha0),
            ("alphaX", &self.alpha_x),
            ("betaM", &self.beta_m),
        ] {
            w.write_record([
                n.clone(),
                name.to_string(),
                fmt(m.bias),
                fmt(m.mse),
                fmt(m.rmse),
                fmt(m.mean_se),
                blank.clone(),
                fmt(m.pointwise_coverage),
                fmt(m.familywise_coverage),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
            ])?;
        }
        for (name, m) in [("beta0", &self.beta0), ("betaX", &self.beta_x)] {
            w.write_record([
                n.clone(),
                name.to_string(),
                fmt(m.bias),
                fmt(m.mse),
                fmt(m.rmse),
                fmt(m.mean_se),
                fmt(m.coverage),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
            ])?;
        }
        let opt = |v: &Option<CiMetrics>, f: fn(&CiMetrics) -> f64| {
            v.as_ref().map_or(String::new(), |m| fmt(f(m)))
        };
        w.write_record([
            n,
            "indirect".to_string(),
            fmt(self.indirect.bias),
            fmt(self.indirect.mse),
            fmt(self.indirect.rmse),
            self.indirect
                .mean_bootstrap_se
                .map_or(String::new(), fmt),
            blank.clone(),
            blank.clone(),
            blank,
            opt(&self.indirect.normal, |m| m.coverage),
            opt(&self.indirect.basic, |m| m.coverage),
            opt(&self.indirect.percentile, |m| m.coverage),
            opt(&self.indirect.normal, |m| m.power),
            opt(&self.indirect.basic, |m| m.power),
            opt(&self.indirect.percentile, |m| m.power),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Generates a dataset and writes it as long-format CSV.
pub fn write_dataset_csv<W: io::Write>(
    writer: W,
    data: &LongDataset,
    columns: &crate::data::ColumnSpec,
) -> Result<()> {
    crate::data::write_long_csv(writer, data, columns)
}

impl StudyReport {
    /// `RMSE² − MSE` for the treatment-effect function; zero up to float
    /// rounding by construction.
    pub fn rmse_consistency(&self) -> f64 {
        self.alpha_x.rmse * self.alpha_x.rmse - self.alpha_x.mse
    }
}

/// Empirical lag-1 autocorrelation of residuals on adjacent grid points;
/// used as an oracle for the generator's AR(1) structure.
pub fn lag1_autocorrelation(data: &LongDataset, scenario: &Scenario) -> f64 {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let step = 1.0 / scenario.n_grid as f64;
    for (i, s) in data.subjects().iter().enumerate() {
        let records = data.records_for(i);
        for w in records.windows(2) {
            if (w[1].time - w[0].time - step).abs() < 1e-9 {
                let r0 = w[0].value
                    - ((scenario.alpha0)(w[0].time) + (scenario.alpha_x)(w[0].time) * s.treatment);
                let r1 = w[1].value
                    - ((scenario.alpha0)(w[1].time) + (scenario.alpha_x)(w[1].time) * s.treatment);
                pairs.push((r0, r1));
            }
        }
    }
    let n = pairs.len() as f64;
    let mean0 = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean1 = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var0 = 0.0;
    let mut var1 = 0.0;
    for (a, b) in &pairs {
        cov += (a - mean0) * (b - mean1);
        var0 += (a - mean0) * (a - mean0);
        var1 += (b - mean1) * (b - mean1);
    }
    cov / (var0.sqrt() * var1.sqrt())
}
