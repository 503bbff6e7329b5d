//! Outcome stage: presmooth each subject's mediator trajectory onto a
//! common dense grid, then regress the scalar outcome on the treatment,
//! covariates, and the integrated mediator curve weighted by a penalized
//! coefficient function.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::data::LongDataset;
use crate::error::{Error, Result};
use crate::glm::{select_lambda, GlmFit, Link, PenaltyBlock};
use crate::spline::{bspline_basis, difference_penalty, BasisMatrix, BasisSpec, TimeGrid};
use crate::tvem::CurveEstimate;

/// How a subject's irregular observations become a curve on the common
/// grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PresmoothMethod {
    /// Piecewise-linear through the observed points, constant beyond the
    /// subject's observed range.
    LinearInterpolation,
    /// Penalized cubic spline per subject, smoothing chosen by GCV.
    PerSubjectSpline,
}

/// Presmoothed subject trajectories on a shared dense grid.
#[derive(Debug, Clone)]
pub struct SubjectCurves {
    pub grid: TimeGrid,
    /// `n_subjects × grid_size` curve values; no missing entries.
    pub curves: Array2<f64>,
    /// Each subject's observed time support (first, last).
    pub observed_range: Vec<(f64, f64)>,
    pub method: PresmoothMethod,
}

/// Evaluates every subject's curve on an equally spaced grid spanning the
/// dataset's time range. Subjects must have been filtered to at least one
/// record each; a subject with a single record yields a constant curve.
pub fn presmooth_subjects(
    data: &LongDataset,
    grid_size: usize,
    method: PresmoothMethod,
) -> Result<SubjectCurves> {
    if grid_size < 2 {
        return Err(Error::InvalidInput(format!(
            "presmoothing grid needs at least 2 points, got {grid_size}"
        )));
    }
    let grid = TimeGrid::linspace(data.t_min(), data.t_max(), grid_size)?;
    let n = data.n_subjects();
    let mut curves = Array2::zeros((n, grid_size));
    let mut observed_range = Vec::with_capacity(n);

    let spline_ctx = match method {
        PresmoothMethod::PerSubjectSpline => Some(SplineContext::new(&grid, data)?),
        PresmoothMethod::LinearInterpolation => None,
    };

    for i in 0..n {
        let records = data.records_for(i);
        if records.is_empty() {
            return Err(Error::InvalidInput(format!(
                "subject {} has no mediator records and no drop policy applied",
                data.subjects()[i].id
            )));
        }
        observed_range.push((records[0].time, records[records.len() - 1].time));
        match method {
            PresmoothMethod::LinearInterpolation => {
                interpolate_subject(records, grid.points(), curves.row_mut(i));
            }
            PresmoothMethod::PerSubjectSpline => {
                let ctx = spline_ctx.as_ref().expect("context built for this method");
                ctx.smooth_subject(records, curves.row_mut(i))?;
            }
        }
    }
    Ok(SubjectCurves {
        grid,
        curves,
        observed_range,
        method,
    })
}

fn interpolate_subject(
    records: &[crate::data::MediatorRecord],
    grid: &[f64],
    mut out: ndarray::ArrayViewMut1<f64>,
) {
    let times: Vec<f64> = records.iter().map(|r| r.time).collect();
    let values: Vec<f64> = records.iter().map(|r| r.value).collect();
    let last = times.len() - 1;
    let mut j = 0usize;
    for (g, &t) in grid.iter().enumerate() {
        while j < last && times[j + 1] <= t {
            j += 1;
        }
        out[g] = if t <= times[0] {
            values[0]
        } else if t >= times[last] {
            values[last]
        } else if times[j] == t {
            values[j]
        } else {
            let span = times[j + 1] - times[j];
            let frac = (t - times[j]) / span;
            values[j] + frac * (values[j + 1] - values[j])
        };
    }
}

/// Shared pieces for per-subject spline smoothing: the basis on the
/// common grid plus the penalty, both reused across subjects.
struct SplineContext {
    spec: BasisSpec,
    t_min: f64,
    t_max: f64,
    grid_basis: BasisMatrix,
    penalty: crate::spline::PenaltyMatrix,
    lambda_grid: Vec<f64>,
}

impl SplineContext {
    fn new(grid: &TimeGrid, data: &LongDataset) -> Result<Self> {
        let spec = BasisSpec::default();
        let grid_basis = bspline_basis(&spec, grid.points(), data.t_min(), data.t_max())?;
        let penalty = difference_penalty(spec.penalty_order, spec.num_basis())?;
        Ok(Self {
            spec,
            t_min: data.t_min(),
            t_max: data.t_max(),
            grid_basis,
            penalty,
            lambda_grid: crate::glm::default_lambda_grid(),
        })
    }

    fn smooth_subject(
        &self,
        records: &[crate::data::MediatorRecord],
        mut out: ndarray::ArrayViewMut1<f64>,
    ) -> Result<()> {
        let times: Vec<f64> = records.iter().map(|r| r.time).collect();
        let basis = bspline_basis(&self.spec, &times, self.t_min, self.t_max)?;
        let y = Array1::from_iter(records.iter().map(|r| r.value));
        let w = Array1::ones(times.len());
        let template = PenaltyBlock::new(0, self.penalty.clone(), 1.0);
        let sel = select_lambda(
            &basis.values,
            &y,
            &w,
            Link::Identity,
            &[template],
            &self.lambda_grid,
        )?;
        let fitted = self.grid_basis.values.dot(&sel.fit.coefficients);
        for (o, &v) in out.iter_mut().zip(fitted.iter()) {
            *o = v;
        }
        Ok(())
    }
}

/// Per-subject quadrature integrals of each basis function against the
/// subject's curve via the trapezoid rule on the common grid.
pub fn integral_design(curves: &SubjectCurves, basis: &BasisMatrix) -> Result<Array2<f64>> {
    if basis.grid.points() != curves.grid.points() {
        return Err(Error::DimensionMismatch(
            "basis evaluation grid does not match the curves' grid".into(),
        ));
    }
    let g = curves.grid.len();
    let points = curves.grid.points();
    let mut weights = vec![0.0; g];
    for i in 0..g {
        if i == 0 {
            weights[i] = (points[1] - points[0]) / 2.0;
        } else if i == g - 1 {
            weights[i] = (points[g - 1] - points[g - 2]) / 2.0;
        } else {
            weights[i] = (points[i + 1] - points[i - 1]) / 2.0;
        }
    }
    let n = curves.curves.nrows();
    let mut weighted = Array2::zeros((n, g));
    for i in 0..n {
        for j in 0..g {
            weighted[[i, j]] = curves.curves[[i, j]] * weights[j];
        }
    }
    Ok(weighted.dot(&basis.values))
}

/// A scalar coefficient with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalarEstimate {
    pub estimate: f64,
    pub se: f64,
}

/// Fitted scalar-on-function regression.
#[derive(Debug, Clone)]
pub struct FunregFit {
    pub beta0: ScalarEstimate,
    pub beta_x: ScalarEstimate,
    pub beta_c: Vec<ScalarEstimate>,
    /// Coefficient function of the mediator curve on the common grid.
    pub beta_m: CurveEstimate,
    pub grid: TimeGrid,
    pub link: Link,
    pub chosen_lambda: f64,
    pub glm: GlmFit,
}

/// Extra knobs for the outcome regression.
#[derive(Debug, Clone)]
pub struct FunregOptions {
    pub lambda_grid: Vec<f64>,
}

impl Default for FunregOptions {
    fn default() -> Self {
        Self {
            lambda_grid: crate::glm::default_lambda_grid(),
        }
    }
}

pub fn fit_scalar_on_function(
    curves: &SubjectCurves,
    treatment: &[f64],
    covariates: &Array2<f64>,
    outcome: &[f64],
    link: Link,
    spec: &BasisSpec,
) -> Result<FunregFit> {
    fit_scalar_on_function_with(
        curves,
        treatment,
        covariates,
        outcome,
        link,
        spec,
        &FunregOptions::default(),
    )
}

pub fn fit_scalar_on_function_with(
    curves: &SubjectCurves,
    treatment: &[f64],
    covariates: &Array2<f64>,
    outcome: &[f64],
    link: Link,
    spec: &BasisSpec,
    options: &FunregOptions,
) -> Result<FunregFit> {
    spec.validate()?;
    let n = curves.curves.nrows();
    if treatment.len() != n || outcome.len() != n || covariates.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "curves carry {n} subjects but treatment/outcome/covariates have \
             {}/{}/{} rows",
            treatment.len(),
            outcome.len(),
            covariates.nrows()
        )));
    }
    let grid = &curves.grid;
    let basis = bspline_basis(spec, grid.points(), grid.t_min(), grid.t_max())?;
    let k = basis.num_basis();
    let z = integral_design(curves, &basis)?;

    // The coefficient function is unidentifiable when the integral
    // columns carry no between-subject variation (all curves identical),
    // which makes the z-block collinear with the intercept.
    let mut any_variation = false;
    for col in z.columns() {
        let mean = col.sum() / n as f64;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            any_variation = true;
            break;
        }
    }
    if !any_variation {
        return Err(Error::Unidentifiable {
            quantity: "mediator coefficient function".into(),
            reason: "subject curves carry no functional variation; the integral design \
                     is collinear with the intercept"
                .into(),
        });
    }

    let n_cov = covariates.ncols();
    let p = 2 + n_cov + k;
    let mut design = Array2::zeros((n, p));
    for i in 0..n {
        design[[i, 0]] = 1.0;
        design[[i, 1]] = treatment[i];
        for c in 0..n_cov {
            design[[i, 2 + c]] = covariates[[i, c]];
        }
        for j in 0..k {
            design[[i, 2 + n_cov + j]] = z[[i, j]];
        }
    }
    let penalty = difference_penalty(spec.penalty_order, k)?;
    let template = PenaltyBlock::new(2 + n_cov, penalty, 1.0);
    let y = Array1::from_iter(outcome.iter().copied());
    let w = Array1::ones(n);
    let selection = select_lambda(&design, &y, &w, link, &[template], &options.lambda_grid)?;
    let glm = selection.fit;

    // One outcome per subject: model-based covariance, no clustering.
    let cov = &glm.model_covariance;
    let scalar = |idx: usize| ScalarEstimate {
        estimate: glm.coefficients[idx],
        se: cov[[idx, idx]].max(0.0).sqrt(),
    };
    let beta0 = scalar(0);
    let beta_x = scalar(1);
    let beta_c: Vec<ScalarEstimate> = (0..n_cov).map(|c| scalar(2 + c)).collect();

    let offset = 2 + n_cov;
    let g = grid.len();
    let mut estimate = Vec::with_capacity(g);
    let mut se = Vec::with_capacity(g);
    for row in 0..g {
        let mut value = 0.0;
        let mut var = 0.0;
        for a in 0..k {
            let ba = basis.values[[row, a]];
            if ba == 0.0 {
                continue;
            }
            value += ba * glm.coefficients[offset + a];
            for b in 0..k {
                let bb = basis.values[[row, b]];
                if bb != 0.0 {
                    var += ba * bb * cov[[offset + a, offset + b]];
                }
            }
        }
        estimate.push(value);
        se.push(var.max(0.0).sqrt());
    }

    Ok(FunregFit {
        beta0,
        beta_x,
        beta_c,
        beta_m: CurveEstimate { estimate, se },
        grid: grid.clone(),
        link,
        chosen_lambda: selection.lambdas.first().copied().unwrap_or(0.0),
        glm,
    })
}
