//! Penalized iteratively reweighted least squares for identity, log, and
//! logit links, with block quadratic penalties, GCV smoothing selection,
//! and cluster-robust (sandwich) covariance.
//!
//! Each link carries its canonical variance function (Gaussian, Poisson,
//! Bernoulli), and fitting maximizes a working-independence pseudo-
//! likelihood: within-cluster correlation is handled afterwards through
//! [`sandwich_covariance`], not in the likelihood.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::SpdSolver;
use crate::spline::PenaltyMatrix;

pub const DEFAULT_IRLS_TOL: f64 = 1e-8;
pub const DEFAULT_IRLS_MAX_ITER: usize = 100;

/// Fitted probabilities are clamped away from 0 and 1 to keep working
/// weights finite.
const MU_CLAMP: f64 = 1e-10;

/// Link function with its canonical variance function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
    Logit,
}

impl Link {
    pub fn apply(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    fn variance(self, mu: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => mu,
            Link::Logit => mu * (1.0 - mu),
        }
    }

    /// Clamps a mean into the valid open mean space; returns whether
    /// clamping happened.
    fn clamp_mu(self, mu: f64) -> (f64, bool) {
        match self {
            Link::Identity => (mu, false),
            Link::Log => {
                if mu < MU_CLAMP {
                    (MU_CLAMP, true)
                } else {
                    (mu, false)
                }
            }
            Link::Logit => {
                if mu < MU_CLAMP {
                    (MU_CLAMP, true)
                } else if mu > 1.0 - MU_CLAMP {
                    (1.0 - MU_CLAMP, true)
                } else {
                    (mu, false)
                }
            }
        }
    }

    fn validate_response(self, y: &[f64]) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "response value at row {i} is not finite"
                )));
            }
            let ok = match self {
                Link::Identity => true,
                Link::Log => v >= 0.0,
                Link::Logit => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "response value {v} at row {i} is invalid for the {self:?} link"
                )));
            }
        }
        Ok(())
    }

    /// Starting mean from the weighted response mean, clamped per link.
    fn initial_mean(self, ybar: f64) -> f64 {
        match self {
            Link::Identity => ybar,
            Link::Log => ybar.max(0.01),
            Link::Logit => ybar.clamp(0.01, 0.99),
        }
    }

    fn deviance(self, y: &[f64], mu: &[f64], weights: &[f64]) -> f64 {
        let mut dev = 0.0;
        match self {
            Link::Identity => {
                for i in 0..y.len() {
                    let r = y[i] - mu[i];
                    dev += weights[i] * r * r;
                }
            }
            Link::Log => {
                for i in 0..y.len() {
                    let term = if y[i] > 0.0 {
                        y[i] * (y[i] / mu[i]).ln() - (y[i] - mu[i])
                    } else {
                        mu[i]
                    };
                    dev += 2.0 * weights[i] * term;
                }
            }
            Link::Logit => {
                for i in 0..y.len() {
                    let mut term = 0.0;
                    if y[i] > 0.0 {
                        term += y[i] * (y[i] / mu[i]).ln();
                    }
                    if y[i] < 1.0 {
                        term += (1.0 - y[i]) * ((1.0 - y[i]) / (1.0 - mu[i])).ln();
                    }
                    dev += 2.0 * weights[i] * term;
                }
            }
        }
        dev
    }
}

/// A quadratic penalty applied to a contiguous block of design columns.
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    /// First design column the penalty applies to.
    pub start: usize,
    pub matrix: PenaltyMatrix,
    pub lambda: f64,
}

impl PenaltyBlock {
    pub fn new(start: usize, matrix: PenaltyMatrix, lambda: f64) -> Self {
        Self {
            start,
            matrix,
            lambda,
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.dim() == 0
    }

    fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            start: self.start,
            matrix: self.matrix.clone(),
            lambda,
        }
    }
}

fn validate_blocks(blocks: &[PenaltyBlock], ncols: usize) -> Result<()> {
    let mut ranges: Vec<(usize, usize)> = Vec::with_capacity(blocks.len());
    for b in blocks {
        if b.lambda < 0.0 || !b.lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "penalty lambda must be finite and nonnegative, got {}",
                b.lambda
            )));
        }
        if b.start + b.len() > ncols {
            return Err(Error::DimensionMismatch(format!(
                "penalty block [{}, {}) exceeds {} design columns",
                b.start,
                b.start + b.len(),
                ncols
            )));
        }
        ranges.push((b.start, b.start + b.len()));
    }
    ranges.sort_unstable();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::InvalidInput(
                "penalty blocks must cover disjoint column ranges".into(),
            ));
        }
    }
    Ok(())
}

/// Sum of the blocks' penalties embedded into a full `p × p` matrix,
/// each scaled by its lambda.
fn embed_penalties(blocks: &[PenaltyBlock], ncols: usize) -> Array2<f64> {
    let mut total = Array2::zeros((ncols, ncols));
    for b in blocks {
        let k = b.len();
        for i in 0..k {
            for j in 0..k {
                total[[b.start + i, b.start + j]] += b.lambda * b.matrix.values[[i, j]];
            }
        }
    }
    total
}

/// Result of a penalized GLM fit.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub coefficients: Array1<f64>,
    /// Inverse of the penalized working information at the fit, scaled by
    /// the dispersion.
    pub model_covariance: Array2<f64>,
    /// Cluster-robust covariance, filled in by [`sandwich_covariance`].
    pub sandwich_covariance: Option<Array2<f64>>,
    pub deviance: f64,
    pub penalized_deviance: f64,
    /// Trace of the hat-type matrix `(XᵀWX + P)⁻¹ XᵀWX`.
    pub effective_df: f64,
    /// Residual variance for the identity link; 1 for log and logit.
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
    pub link: Link,
    /// Lambda of each penalty block, in block order.
    pub lambdas: Vec<f64>,
    /// Penalized deviance after each IRLS iteration.
    pub penalized_deviance_trace: Vec<f64>,
    /// `XᵀWX` at the converged coefficients.
    pub working_information: Array2<f64>,
    pub(crate) penalty_total: Array2<f64>,
}

impl GlmFit {
    /// Model-based standard error of one coefficient.
    pub fn model_se(&self, index: usize) -> f64 {
        self.model_covariance[[index, index]].max(0.0).sqrt()
    }
}

struct IrlsState {
    eta: Vec<f64>,
    mu: Vec<f64>,
    clamped: bool,
}

fn eta_mu(design: &Array2<f64>, beta: &Array1<f64>, link: Link) -> IrlsState {
    let eta_arr = design.dot(beta);
    let mut clamped = false;
    let mut mu = Vec::with_capacity(eta_arr.len());
    for &e in eta_arr.iter() {
        let (m, c) = link.clamp_mu(link.inverse(e));
        clamped |= c;
        mu.push(m);
    }
    IrlsState {
        eta: eta_arr.to_vec(),
        mu,
        clamped,
    }
}

fn penalty_form(penalty_total: &Array2<f64>, beta: &Array1<f64>) -> f64 {
    beta.dot(&penalty_total.dot(beta))
}

/// `XᵀWX` and `XᵀWz` for working weights `w` and working response `z`.
fn weighted_normal_equations(
    design: &Array2<f64>,
    w: &[f64],
    z: &[f64],
) -> (Array2<f64>, Array1<f64>) {
    let n = design.nrows();
    let p = design.ncols();
    let mut xw = Array2::zeros((n, p));
    for i in 0..n {
        let wi = w[i];
        for j in 0..p {
            xw[[i, j]] = design[[i, j]] * wi;
        }
    }
    let xtwx = design.t().dot(&xw);
    let mut xtwz = Array1::zeros(p);
    for i in 0..n {
        let wz = w[i] * z[i];
        for j in 0..p {
            xtwz[j] += design[[i, j]] * wz;
        }
    }
    (xtwx, xtwz)
}

fn xtwx_only(design: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let n = design.nrows();
    let p = design.ncols();
    let mut xw = Array2::zeros((n, p));
    for i in 0..n {
        let wi = w[i];
        for j in 0..p {
            xw[[i, j]] = design[[i, j]] * wi;
        }
    }
    design.t().dot(&xw)
}

/// Fits a penalized GLM by IRLS. Convergence is declared when the
/// relative change in penalized deviance drops below `tol`; on
/// non-convergence the fit is still returned with `converged = false`
/// and a warning.
pub fn fit_penalized_glm(
    design: &Array2<f64>,
    response: &Array1<f64>,
    weights: &Array1<f64>,
    link: Link,
    penalties: &[PenaltyBlock],
    tol: f64,
    max_iter: usize,
) -> Result<GlmFit> {
    fit_penalized_glm_init(design, response, weights, link, penalties, tol, max_iter, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_penalized_glm_init(
    design: &Array2<f64>,
    response: &Array1<f64>,
    weights: &Array1<f64>,
    link: Link,
    penalties: &[PenaltyBlock],
    tol: f64,
    max_iter: usize,
    init: Option<&Array1<f64>>,
) -> Result<GlmFit> {
    let n = design.nrows();
    let p = design.ncols();
    if response.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but response has {} and weights {}",
            response.len(),
            weights.len()
        )));
    }
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be positive".into()));
    }
    let y = response.as_slice().expect("contiguous");
    let w_prior = weights.as_slice().expect("contiguous");
    link.validate_response(y)?;
    if w_prior.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput(
            "weights must be finite and nonnegative".into(),
        ));
    }
    validate_blocks(penalties, p)?;
    let penalty_total = embed_penalties(penalties, p);

    let mut warnings: Vec<String> = Vec::new();
    let mut clamp_warned = false;
    let mut jitter_warned = false;

    // Starting state: either the supplied coefficients or a flat linear
    // predictor at the link-transformed response mean.
    let wsum: f64 = w_prior.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::InvalidInput("all weights are zero".into()));
    }
    let ybar = y
        .iter()
        .zip(w_prior)
        .map(|(yi, wi)| yi * wi)
        .sum::<f64>()
        / wsum;
    let mut beta = Array1::zeros(p);
    let mut state = match init {
        Some(b0) if b0.len() == p => {
            beta = b0.clone();
            eta_mu(design, &beta, link)
        }
        _ => {
            let mu0 = link.initial_mean(ybar);
            let eta0 = link.apply(mu0);
            IrlsState {
                eta: vec![eta0; n],
                mu: vec![mu0; n],
                clamped: false,
            }
        }
    };
    let mut pdev = link.deviance(y, &state.mu, w_prior) + penalty_form(&penalty_total, &beta);
    let mut trace = Vec::with_capacity(max_iter);
    let mut converged = false;
    let mut iterations = 0;

    let mut w_work = vec![0.0; n];
    let mut z_work = vec![0.0; n];

    for iter in 1..=max_iter {
        iterations = iter;
        for i in 0..n {
            let v = link.variance(state.mu[i]).max(MU_CLAMP);
            w_work[i] = w_prior[i] * v;
            z_work[i] = state.eta[i] + (y[i] - state.mu[i]) / v;
        }
        let (xtwx, xtwz) = weighted_normal_equations(design, &w_work, &z_work);
        let a = &xtwx + &penalty_total;
        let solver = SpdSolver::new(&a).ok_or_else(|| {
            Error::FitFailure("normal equations are singular even after ridge jitter".into())
        })?;
        if solver.jitter > 0.0 && !jitter_warned {
            warnings.push(format!(
                "singular working normal equations; added ridge jitter {:.1e} to the diagonal",
                solver.jitter
            ));
            jitter_warned = true;
        }
        let mut beta_new = solver.solve_vec(&xtwz);
        let mut state_new = eta_mu(design, &beta_new, link);
        let mut pdev_new =
            link.deviance(y, &state_new.mu, w_prior) + penalty_form(&penalty_total, &beta_new);

        // Step-halving keeps the penalized deviance non-increasing when a
        // full IRLS step overshoots.
        let mut halvings = 0;
        while pdev_new > pdev + 1e-10 && halvings < 30 {
            beta_new = 0.5 * (&beta_new + &beta);
            state_new = eta_mu(design, &beta_new, link);
            pdev_new =
                link.deviance(y, &state_new.mu, w_prior) + penalty_form(&penalty_total, &beta_new);
            halvings += 1;
        }
        if state_new.clamped && !clamp_warned {
            warnings.push("fitted means clamped away from the boundary".into());
            clamp_warned = true;
        }

        let rel_change = (pdev - pdev_new).abs() / (pdev_new.abs() + 1e-10);
        beta = beta_new;
        state = state_new;
        pdev = pdev_new;
        trace.push(pdev);
        if rel_change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!(
            "IRLS did not converge in {max_iter} iterations (relative change tolerance {tol:.1e})"
        ));
    }

    // Final working information at the converged coefficients.
    for i in 0..n {
        let v = link.variance(state.mu[i]).max(MU_CLAMP);
        w_work[i] = w_prior[i] * v;
    }
    let xtwx = xtwx_only(design, &w_work);
    let a = &xtwx + &penalty_total;
    let solver = SpdSolver::new(&a).ok_or_else(|| {
        Error::FitFailure("penalized information is singular even after ridge jitter".into())
    })?;
    if solver.jitter > 0.0 && !jitter_warned {
        warnings.push(format!(
            "singular penalized information; added ridge jitter {:.1e} to the diagonal",
            solver.jitter
        ));
    }
    let effective_df = solver.trace_solve(&xtwx);
    let deviance = link.deviance(y, &state.mu, w_prior);
    let dispersion = match link {
        Link::Identity => deviance / (n as f64 - effective_df).max(1e-8),
        Link::Log | Link::Logit => 1.0,
    };
    let model_covariance = solver.inverse() * dispersion;

    Ok(GlmFit {
        coefficients: beta,
        model_covariance,
        sandwich_covariance: None,
        deviance,
        penalized_deviance: pdev,
        effective_df,
        dispersion,
        converged,
        iterations,
        warnings,
        link,
        lambdas: penalties.iter().map(|b| b.lambda).collect(),
        penalized_deviance_trace: trace,
        working_information: xtwx,
        penalty_total,
    })
}

/// 41-point log-spaced grid on `[1e-4, 1e4]`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..41).map(|i| 10f64.powf(-4.0 + 0.2 * i as f64)).collect()
}

/// Result of smoothing-parameter selection.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    /// Chosen lambda per penalty block.
    pub lambdas: Vec<f64>,
    pub fit: GlmFit,
    /// `(lambda, GCV score)` per grid candidate of the final sweep.
    pub scores: Vec<(f64, f64)>,
}

fn gcv_score(n: usize, deviance: f64, edf: f64) -> f64 {
    let denom = n as f64 - edf;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n as f64 * deviance / (denom * denom)
    }
}

/// Picks one lambda shared across all penalty blocks by generalized
/// cross-validation over the grid, ties broken toward the larger
/// (smoother) lambda, and returns the winning fit.
pub fn select_lambda(
    design: &Array2<f64>,
    response: &Array1<f64>,
    weights: &Array1<f64>,
    link: Link,
    penalty_templates: &[PenaltyBlock],
    lambda_grid: &[f64],
) -> Result<LambdaSelection> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite lambdas"));

    if penalty_templates.is_empty() {
        let fit = fit_penalized_glm(
            design,
            response,
            weights,
            link,
            &[],
            DEFAULT_IRLS_TOL,
            DEFAULT_IRLS_MAX_ITER,
        )?;
        return Ok(LambdaSelection {
            lambdas: vec![],
            fit,
            scores: vec![],
        });
    }

    if link == Link::Identity {
        return select_lambda_identity(design, response, weights, penalty_templates, &grid);
    }

    let n = design.nrows();
    let mut best: Option<(f64, f64)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    let mut warm: Option<Array1<f64>> = None;
    let mut last_err: Option<Error> = None;
    for &lambda in &grid {
        let blocks: Vec<PenaltyBlock> = penalty_templates
            .iter()
            .map(|b| b.with_lambda(lambda))
            .collect();
        let fit = match fit_penalized_glm_init(
            design,
            response,
            weights,
            link,
            &blocks,
            DEFAULT_IRLS_TOL,
            DEFAULT_IRLS_MAX_ITER,
            warm.as_ref(),
        ) {
            Ok(f) => f,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let score = gcv_score(n, fit.deviance, fit.effective_df);
        scores.push((lambda, score));
        warm = Some(fit.coefficients.clone());
        match best {
            Some((_, best_score)) if score > best_score => {}
            _ => best = Some((lambda, score)),
        }
    }
    let (lambda, _) = best.ok_or_else(|| match last_err {
        Some(e) => e,
        None => Error::FitFailure("no lambda candidate produced a fit".into()),
    })?;
    let blocks: Vec<PenaltyBlock> = penalty_templates
        .iter()
        .map(|b| b.with_lambda(lambda))
        .collect();
    let fit = fit_penalized_glm(
        design,
        response,
        weights,
        link,
        &blocks,
        DEFAULT_IRLS_TOL,
        DEFAULT_IRLS_MAX_ITER,
    )?;
    Ok(LambdaSelection {
        lambdas: vec![lambda; penalty_templates.len()],
        fit,
        scores,
    })
}

/// Identity link: the working weights never change, so the normal
/// equations are assembled once and each grid candidate is a single
/// solve.
fn select_lambda_identity(
    design: &Array2<f64>,
    response: &Array1<f64>,
    weights: &Array1<f64>,
    penalty_templates: &[PenaltyBlock],
    grid: &[f64],
) -> Result<LambdaSelection> {
    let n = design.nrows();
    let w = weights.as_slice().expect("contiguous");
    let z = response.as_slice().expect("contiguous");
    let (xtwx, xtwz) = weighted_normal_equations(design, w, z);
    let ywy: f64 = response
        .iter()
        .zip(w)
        .map(|(yi, wi)| wi * yi * yi)
        .sum();
    let unit_blocks: Vec<PenaltyBlock> = penalty_templates
        .iter()
        .map(|b| b.with_lambda(1.0))
        .collect();
    let penalty_unit = embed_penalties(&unit_blocks, design.ncols());

    let mut best: Option<(f64, f64)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let a = &xtwx + &(lambda * &penalty_unit);
        let solver = match SpdSolver::new(&a) {
            Some(s) => s,
            None => continue,
        };
        let beta = solver.solve_vec(&xtwz);
        let rss = (ywy - 2.0 * beta.dot(&xtwz) + beta.dot(&xtwx.dot(&beta))).max(0.0);
        let edf = solver.trace_solve(&xtwx);
        let score = gcv_score(n, rss, edf);
        scores.push((lambda, score));
        match best {
            Some((_, best_score)) if score > best_score => {}
            _ => best = Some((lambda, score)),
        }
    }
    let (lambda, _) =
        best.ok_or_else(|| Error::FitFailure("no lambda candidate produced a fit".into()))?;
    let blocks: Vec<PenaltyBlock> = penalty_templates
        .iter()
        .map(|b| b.with_lambda(lambda))
        .collect();
    let fit = fit_penalized_glm(
        design,
        response,
        weights,
        Link::Identity,
        &blocks,
        DEFAULT_IRLS_TOL,
        DEFAULT_IRLS_MAX_ITER,
    )?;
    Ok(LambdaSelection {
        lambdas: vec![lambda; penalty_templates.len()],
        fit,
        scores,
    })
}

/// Per-block lambda selection: a shared-grid pass followed by
/// coordinate-descent sweeps over each block's lambda.
pub fn select_lambda_per_block(
    design: &Array2<f64>,
    response: &Array1<f64>,
    weights: &Array1<f64>,
    link: Link,
    penalty_templates: &[PenaltyBlock],
    lambda_grid: &[f64],
    sweeps: usize,
) -> Result<LambdaSelection> {
    let shared = select_lambda(design, response, weights, link, penalty_templates, lambda_grid)?;
    if penalty_templates.len() < 2 || sweeps == 0 {
        return Ok(shared);
    }
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite lambdas"));
    let n = design.nrows();
    let mut lambdas = shared.lambdas.clone();
    let mut best_fit = shared.fit;
    let mut best_score = gcv_score(n, best_fit.deviance, best_fit.effective_df);
    for _ in 0..sweeps {
        for block_idx in 0..penalty_templates.len() {
            for &candidate in &grid {
                if candidate == lambdas[block_idx] {
                    continue;
                }
                let mut trial = lambdas.clone();
                trial[block_idx] = candidate;
                let blocks: Vec<PenaltyBlock> = penalty_templates
                    .iter()
                    .zip(&trial)
                    .map(|(b, &l)| b.with_lambda(l))
                    .collect();
                let fit = match fit_penalized_glm(
                    design,
                    response,
                    weights,
                    link,
                    &blocks,
                    DEFAULT_IRLS_TOL,
                    DEFAULT_IRLS_MAX_ITER,
                ) {
                    Ok(f) => f,
                    Err(_) => continue,
                };
                let score = gcv_score(n, fit.deviance, fit.effective_df);
                if score < best_score || (score == best_score && candidate > lambdas[block_idx]) {
                    best_score = score;
                    lambdas = trial;
                    best_fit = fit;
                }
            }
        }
    }
    Ok(LambdaSelection {
        lambdas,
        fit: best_fit,
        scores: vec![],
    })
}

/// Cluster-robust covariance `A⁻¹ B A⁻¹` where `A` is the penalized
/// working information at the fit and `B` sums outer products of
/// per-cluster score sums.
pub fn sandwich_covariance(
    fit: &GlmFit,
    design: &Array2<f64>,
    response: &Array1<f64>,
    weights: &Array1<f64>,
    cluster_ids: &[usize],
) -> Result<Array2<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    if response.len() != n || cluster_ids.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(
            "cluster ids, weights, and response must align with design rows".into(),
        ));
    }
    if fit.coefficients.len() != p {
        return Err(Error::DimensionMismatch(
            "fit does not match the design matrix".into(),
        ));
    }
    let state = eta_mu(design, &fit.coefficients, fit.link);
    let n_clusters = cluster_ids.iter().copied().max().map_or(0, |m| m + 1);
    let mut scores = Array2::<f64>::zeros((n_clusters, p));
    for i in 0..n {
        let r = weights[i] * (response[i] - state.mu[i]);
        let g = cluster_ids[i];
        for j in 0..p {
            scores[[g, j]] += design[[i, j]] * r;
        }
    }
    let b = scores.t().dot(&scores);
    let a = &fit.working_information + &fit.penalty_total;
    let solver = SpdSolver::new(&a).ok_or_else(|| {
        Error::FitFailure("penalized information is singular even after ridge jitter".into())
    })?;
    let a_inv = solver.inverse();
    Ok(a_inv.dot(&b).dot(&a_inv))
}
