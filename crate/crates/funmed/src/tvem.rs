//! Time-varying effect model for the mediator stage: the mediator is
//! regressed on treatment and covariates with coefficient functions of
//! time, each expanded in a penalized B-spline basis. Within-subject
//! correlation is handled by subject-clustered sandwich standard errors
//! under working independence.

use ndarray::{Array1, Array2};

use crate::data::LongDataset;
use crate::error::{Error, Result};
use crate::glm::{
    sandwich_covariance, select_lambda, select_lambda_per_block, GlmFit, Link, PenaltyBlock,
};
use crate::spline::{bspline_basis, difference_penalty, BasisMatrix, BasisSpec, TimeGrid};
use crate::stats::normal_quantile;

/// A coefficient function sampled on an evaluation grid with pointwise
/// standard errors.
#[derive(Debug, Clone)]
pub struct CurveEstimate {
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
}

impl CurveEstimate {
    /// Pointwise normal-quantile confidence band; no familywise
    /// adjustment.
    pub fn pointwise_ci(&self, level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(0.0 < level && level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "confidence level must be in (0, 1), got {level}"
            )));
        }
        let z = normal_quantile(0.5 + level / 2.0);
        let lower = self
            .estimate
            .iter()
            .zip(&self.se)
            .map(|(e, s)| e - z * s)
            .collect();
        let upper = self
            .estimate
            .iter()
            .zip(&self.se)
            .map(|(e, s)| e + z * s)
            .collect();
        Ok((lower, upper))
    }
}

/// Knobs beyond the basis spec; the defaults reproduce the standard
/// pipeline behavior.
#[derive(Debug, Clone)]
pub struct TvemOptions {
    /// Smoothing-parameter grid searched by GCV.
    pub lambda_grid: Vec<f64>,
    /// Per-covariate flags constraining that covariate's effect to be
    /// constant over time. Empty means all effects are time-varying.
    pub constant_covariate_effects: Vec<bool>,
    /// Select one lambda per coefficient-function block instead of a
    /// shared one.
    pub per_block_lambda: bool,
}

impl Default for TvemOptions {
    fn default() -> Self {
        Self {
            lambda_grid: crate::glm::default_lambda_grid(),
            constant_covariate_effects: vec![],
            per_block_lambda: false,
        }
    }
}

/// Fitted time-varying effect model.
#[derive(Debug, Clone)]
pub struct TvemFit {
    pub grid: TimeGrid,
    pub alpha0: CurveEstimate,
    pub alpha_x: CurveEstimate,
    pub alpha_c: Vec<CurveEstimate>,
    pub basis_spec: BasisSpec,
    pub chosen_lambda: f64,
    pub glm: GlmFit,
}

/// Pointwise confidence bands for every coefficient function.
#[derive(Debug, Clone)]
pub struct TvemBands {
    pub alpha0: (Vec<f64>, Vec<f64>),
    pub alpha_x: (Vec<f64>, Vec<f64>),
    pub alpha_c: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TvemFit {
    pub fn pointwise_ci(&self, level: f64) -> Result<TvemBands> {
        Ok(TvemBands {
            alpha0: self.alpha0.pointwise_ci(level)?,
            alpha_x: self.alpha_x.pointwise_ci(level)?,
            alpha_c: self
                .alpha_c
                .iter()
                .map(|c| c.pointwise_ci(level))
                .collect::<Result<_>>()?,
        })
    }
}

pub fn fit_tvem(
    data: &LongDataset,
    mediator_link: Link,
    spec: &BasisSpec,
    grid_size: usize,
) -> Result<TvemFit> {
    fit_tvem_with(data, mediator_link, spec, grid_size, &TvemOptions::default())
}

pub fn fit_tvem_with(
    data: &LongDataset,
    mediator_link: Link,
    spec: &BasisSpec,
    grid_size: usize,
    options: &TvemOptions,
) -> Result<TvemFit> {
    spec.validate()?;
    if grid_size < 2 {
        return Err(Error::InvalidInput(format!(
            "evaluation grid needs at least 2 points, got {grid_size}"
        )));
    }
    if data.n_records() == 0 {
        return Err(Error::InvalidInput(
            "dataset has no mediator records".into(),
        ));
    }
    if data.n_distinct_times() < 2 {
        return Err(Error::InvalidInput(
            "mediator records must cover at least 2 distinct times".into(),
        ));
    }
    for (i, s) in data.subjects().iter().enumerate() {
        if data.records_for(i).is_empty() {
            return Err(Error::InvalidInput(format!(
                "subject {} has no mediator records; filter by minimum observations first",
                s.id
            )));
        }
    }
    let first_x = data.subjects()[0].treatment;
    if data.subjects().iter().all(|s| s.treatment == first_x) {
        return Err(Error::Unidentifiable {
            quantity: "treatment effect function".into(),
            reason: "treatment takes a single value".into(),
        });
    }
    let n_cov = data.n_covariates();
    let constant_flags: Vec<bool> = if options.constant_covariate_effects.is_empty() {
        vec![false; n_cov]
    } else if options.constant_covariate_effects.len() == n_cov {
        options.constant_covariate_effects.clone()
    } else {
        return Err(Error::DimensionMismatch(format!(
            "{} constant-effect flags for {} covariates",
            options.constant_covariate_effects.len(),
            n_cov
        )));
    };

    let times: Vec<f64> = data.records().iter().map(|r| r.time).collect();
    let basis = bspline_basis(spec, &times, data.t_min(), data.t_max())?;
    let k = basis.num_basis();
    let n = data.n_records();

    // Stacked design: intercept-function block, treatment block, then one
    // block (or single column) per covariate.
    let n_tv = 2 + constant_flags.iter().filter(|&&c| !c).count();
    let n_const = constant_flags.iter().filter(|&&c| c).count();
    let p = n_tv * k + n_const;
    let mut design = Array2::zeros((n, p));
    let mut cluster_ids = Vec::with_capacity(n);
    for (row, record) in data.records().iter().enumerate() {
        let subject = &data.subjects()[record.subject];
        cluster_ids.push(record.subject);
        for j in 0..k {
            let b = basis.values[[row, j]];
            design[[row, j]] = b;
            design[[row, k + j]] = b * subject.treatment;
        }
        let mut tv_block = 2;
        let mut const_col = n_tv * k;
        for (c_idx, &constant) in constant_flags.iter().enumerate() {
            let value = subject.covariates[c_idx];
            if constant {
                design[[row, const_col]] = value;
                const_col += 1;
            } else {
                for j in 0..k {
                    design[[row, tv_block * k + j]] = basis.values[[row, j]] * value;
                }
                tv_block += 1;
            }
        }
    }

    let penalty = difference_penalty(spec.penalty_order, k)?;
    let templates: Vec<PenaltyBlock> = (0..n_tv)
        .map(|b| PenaltyBlock::new(b * k, penalty.clone(), 1.0))
        .collect();
    let response = data.mediator_vec();
    let weights = Array1::ones(n);
    let selection = if options.per_block_lambda {
        select_lambda_per_block(
            &design,
            &response,
            &weights,
            mediator_link,
            &templates,
            &options.lambda_grid,
            2,
        )?
    } else {
        select_lambda(
            &design,
            &response,
            &weights,
            mediator_link,
            &templates,
            &options.lambda_grid,
        )?
    };
    let mut glm = selection.fit;
    let sandwich = sandwich_covariance(&glm, &design, &response, &weights, &cluster_ids)?;
    glm.sandwich_covariance = Some(sandwich.clone());

    let grid = TimeGrid::linspace(data.t_min(), data.t_max(), grid_size)?;
    let grid_basis = bspline_basis(spec, grid.points(), data.t_min(), data.t_max())?;

    let alpha0 = curve_from_block(&glm.coefficients, &sandwich, &grid_basis, 0);
    let alpha_x = curve_from_block(&glm.coefficients, &sandwich, &grid_basis, k);
    let mut alpha_c = Vec::with_capacity(n_cov);
    let mut tv_block = 2;
    let mut const_col = n_tv * k;
    for &constant in &constant_flags {
        if constant {
            let est = glm.coefficients[const_col];
            let se = sandwich[[const_col, const_col]].max(0.0).sqrt();
            alpha_c.push(CurveEstimate {
                estimate: vec![est; grid_size],
                se: vec![se; grid_size],
            });
            const_col += 1;
        } else {
            alpha_c.push(curve_from_block(
                &glm.coefficients,
                &sandwich,
                &grid_basis,
                tv_block * k,
            ));
            tv_block += 1;
        }
    }

    let chosen_lambda = selection.lambdas.first().copied().unwrap_or(0.0);
    Ok(TvemFit {
        grid,
        alpha0,
        alpha_x,
        alpha_c,
        basis_spec: *spec,
        chosen_lambda,
        glm,
    })
}

/// Samples one coefficient function and its delta-method pointwise SEs
/// from a contiguous coefficient block.
fn curve_from_block(
    coefficients: &Array1<f64>,
    covariance: &Array2<f64>,
    grid_basis: &BasisMatrix,
    offset: usize,
) -> CurveEstimate {
    let k = grid_basis.num_basis();
    let g = grid_basis.values.nrows();
    let mut estimate = Vec::with_capacity(g);
    let mut se = Vec::with_capacity(g);
    for row in 0..g {
        let mut value = 0.0;
        let mut var = 0.0;
        for a in 0..k {
            let ba = grid_basis.values[[row, a]];
            if ba == 0.0 {
                continue;
            }
            value += ba * coefficients[offset + a];
            for b in 0..k {
                let bb = grid_basis.values[[row, b]];
                if bb != 0.0 {
                    var += ba * bb * covariance[[offset + a, offset + b]];
                }
            }
        }
        estimate.push(value);
        se.push(var.max(0.0).sqrt());
    }
    CurveEstimate { estimate, se }
}
