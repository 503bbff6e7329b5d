//! B-spline bases on a time interval and difference penalties for
//! P-spline regularization.
//!
//! Bases use a clamped knot vector (boundary knots repeated `degree + 1`
//! times) with equidistant interior knots, so every row of a basis matrix
//! is a partition of unity. Penalties are squared finite differences of
//! adjacent basis coefficients.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};

/// Strictly increasing evaluation times inside a closed interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    t_min: f64,
    t_max: f64,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>, t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min < t_max) {
            return Err(Error::InvalidInput(format!(
                "degenerate time interval [{t_min}, {t_max}]"
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput("empty time grid".into()));
        }
        for w in points.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidInput(
                    "grid points must be strictly increasing".into(),
                ));
            }
        }
        for &t in &points {
            if !t.is_finite() || t < t_min || t > t_max {
                return Err(Error::TimeOutOfRange {
                    time: t,
                    t_min,
                    t_max,
                });
            }
        }
        Ok(Self {
            points,
            t_min,
            t_max,
        })
    }

    /// `n` equally spaced points spanning `[t_min, t_max]` inclusive.
    pub fn linspace(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 2 points, got {n}"
            )));
        }
        let step = (t_max - t_min) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| t_min + step * i as f64).collect();
        points[n - 1] = t_max;
        Self::new(points, t_min, t_max)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn width(&self) -> f64 {
        self.t_max - self.t_min
    }
}

/// Shape of a penalized B-spline basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BasisSpec {
    /// Spline polynomial degree (cubic = 3).
    pub degree: usize,
    /// Number of equidistant interior knots.
    pub interior_knots: usize,
    /// Order of the difference penalty (1 or 2).
    pub penalty_order: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            interior_knots: 20,
            penalty_order: 1,
        }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::InvalidInput(format!(
                "spline degree must be at least 1, got {}",
                self.degree
            )));
        }
        if self.penalty_order != 1 && self.penalty_order != 2 {
            return Err(Error::InvalidInput(format!(
                "penalty order must be 1 or 2, got {}",
                self.penalty_order
            )));
        }
        Ok(())
    }

    /// Number of basis functions this spec produces.
    pub fn num_basis(&self) -> usize {
        self.interior_knots + self.degree + 1
    }
}

/// A B-spline basis evaluated at a set of times (rows = times,
/// columns = basis functions).
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub values: Array2<f64>,
    pub spec: BasisSpec,
    pub grid: TimeGrid,
    knots: Vec<f64>,
}

impl BasisMatrix {
    pub fn num_basis(&self) -> usize {
        self.values.ncols()
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// Squared difference penalty `DᵀD` on basis coefficients.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    pub values: Array2<f64>,
    pub order: usize,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// `cᵀ P c` for a coefficient vector.
    pub fn quadratic_form(&self, coeffs: &Array1<f64>) -> f64 {
        coeffs.dot(&self.values.dot(coeffs))
    }
}

fn clamped_knots(spec: &BasisSpec, t_min: f64, t_max: f64) -> Vec<f64> {
    let m = spec.interior_knots;
    let d = spec.degree;
    let mut knots = Vec::with_capacity(2 * (d + 1) + m);
    knots.extend(std::iter::repeat_n(t_min, d + 1));
    let step = (t_max - t_min) / (m + 1) as f64;
    for i in 1..=m {
        knots.push(t_min + step * i as f64);
    }
    knots.extend(std::iter::repeat_n(t_max, d + 1));
    knots
}

/// Index of the knot span containing `t`, clamped so the right boundary
/// falls in the last nonempty span.
fn find_span(knots: &[f64], degree: usize, num_basis: usize, t: f64) -> usize {
    let last = num_basis - 1;
    if t >= knots[num_basis] {
        return last;
    }
    let mut lo = degree;
    let mut hi = num_basis;
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Cox–de Boor evaluation of the `degree + 1` basis functions that are
/// nonzero on the span; `out[j]` is `B_{span-degree+j}(t)`.
fn basis_at(knots: &[f64], degree: usize, span: usize, t: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), degree + 1);
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    out[0] = 1.0;
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { out[r] / denom } else { 0.0 };
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// Evaluates a clamped B-spline basis with equidistant interior knots at
/// the given times. The result has `interior_knots + degree + 1` columns.
pub fn bspline_basis(
    spec: &BasisSpec,
    eval_times: &[f64],
    t_min: f64,
    t_max: f64,
) -> Result<BasisMatrix> {
    spec.validate()?;
    if !(t_min < t_max) {
        return Err(Error::InvalidInput(format!(
            "degenerate time interval [{t_min}, {t_max}]"
        )));
    }
    for &t in eval_times {
        if !t.is_finite() || t < t_min || t > t_max {
            return Err(Error::TimeOutOfRange {
                time: t,
                t_min,
                t_max,
            });
        }
    }
    let knots = clamped_knots(spec, t_min, t_max);
    let num_basis = spec.num_basis();
    let degree = spec.degree;
    let mut values = Array2::zeros((eval_times.len(), num_basis));
    let mut local = vec![0.0; degree + 1];
    for (i, &t) in eval_times.iter().enumerate() {
        let span = find_span(&knots, degree, num_basis, t);
        basis_at(&knots, degree, span, t, &mut local);
        for (j, &v) in local.iter().enumerate() {
            values[[i, span - degree + j]] = v;
        }
    }
    // Sorted, deduplicated eval times form a valid grid for bookkeeping;
    // callers that need the original ordering keep their own copy.
    let grid = grid_for_times(eval_times, t_min, t_max)?;
    Ok(BasisMatrix {
        values,
        spec: *spec,
        grid,
        knots,
    })
}

fn grid_for_times(eval_times: &[f64], t_min: f64, t_max: f64) -> Result<TimeGrid> {
    let mut unique: Vec<f64> = eval_times.to_vec();
    unique.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    unique.dedup();
    if unique.is_empty() {
        return Err(Error::InvalidInput("no evaluation times".into()));
    }
    if unique.len() == 1 {
        // Degenerate but legal: a single evaluation time.
        return Ok(TimeGrid {
            points: unique,
            t_min,
            t_max,
        });
    }
    TimeGrid::new(unique, t_min, t_max)
}

/// `DᵀD` for the `order`-th finite-difference matrix `D` of shape
/// `(num_basis − order) × num_basis`.
pub fn difference_penalty(order: usize, num_basis: usize) -> Result<PenaltyMatrix> {
    if order == 0 || order >= num_basis {
        return Err(Error::InvalidInput(format!(
            "penalty order {order} must be in [1, {})",
            num_basis
        )));
    }
    let mut d = Array2::<f64>::eye(num_basis);
    for _ in 0..order {
        let rows = d.nrows();
        let mut next = Array2::<f64>::zeros((rows - 1, num_basis));
        for i in 0..rows - 1 {
            for j in 0..num_basis {
                next[[i, j]] = d[[i + 1, j]] - d[[i, j]];
            }
        }
        d = next;
    }
    let values = d.t().dot(&d);
    Ok(PenaltyMatrix { values, order })
}

/// Samples the coefficient function `basis · coeffs` at the basis's
/// evaluation times.
pub fn evaluate_curve(coeffs: &Array1<f64>, basis: &BasisMatrix) -> Result<Vec<f64>> {
    if coeffs.len() != basis.num_basis() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a {}-column basis",
            coeffs.len(),
            basis.num_basis()
        )));
    }
    Ok(basis.values.dot(coeffs).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn boundary_point_activates_first_basis_function() {
        let spec = BasisSpec {
            degree: 3,
            interior_knots: 0,
            penalty_order: 1,
        };
        let basis = bspline_basis(&spec, &[0.0], 0.0, 1.0).unwrap();
        assert_eq!(basis.num_basis(), 4);
        let row: Vec<f64> = basis.values.row(0).to_vec();
        assert_abs_diff_eq!(row[0], 1.0, epsilon = 1e-12);
        for &v in &row[1..] {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_hat_functions_at_quarter_point() {
        let spec = BasisSpec {
            degree: 1,
            interior_knots: 1,
            penalty_order: 1,
        };
        let basis = bspline_basis(&spec, &[0.25], 0.0, 1.0).unwrap();
        let row: Vec<f64> = basis.values.row(0).to_vec();
        assert_abs_diff_eq!(row[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(row[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn right_boundary_activates_last_basis_function() {
        let spec = BasisSpec::default();
        let basis = bspline_basis(&spec, &[1.0], 0.0, 1.0).unwrap();
        let row = basis.values.row(0);
        assert_abs_diff_eq!(row[basis.num_basis() - 1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eval_outside_range_is_an_error() {
        let spec = BasisSpec::default();
        assert!(matches!(
            bspline_basis(&spec, &[1.5], 0.0, 1.0),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(matches!(
            bspline_basis(&spec, &[0.5], 1.0, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn first_order_penalty_two_basis() {
        let p = difference_penalty(1, 2).unwrap();
        assert_abs_diff_eq!(p.values[[0, 0]], 1.0);
        assert_abs_diff_eq!(p.values[[0, 1]], -1.0);
        assert_abs_diff_eq!(p.values[[1, 0]], -1.0);
        assert_abs_diff_eq!(p.values[[1, 1]], 1.0);
    }

    #[test]
    fn constant_vector_in_null_space() {
        for num_basis in [2usize, 5, 24] {
            let p = difference_penalty(1, num_basis).unwrap();
            let c = Array1::from_elem(num_basis, 3.7);
            assert_abs_diff_eq!(p.quadratic_form(&c), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn second_order_penalty_rank_two_deficient() {
        let p = difference_penalty(2, 4).unwrap();
        // Rank of DᵀD computed directly from the eigenvalues.
        let na = nalgebra::DMatrix::from_fn(4, 4, |i, j| p.values[[i, j]]);
        let eigs = na.symmetric_eigenvalues();
        let rank = eigs.iter().filter(|&&e| e.abs() > 1e-10).count();
        assert_eq!(rank, 2);
        // Linear-in-index vectors are annihilated by the order-2 penalty.
        let linear = Array1::from_iter((0..4).map(|i| 1.0 + 2.0 * i as f64));
        assert_abs_diff_eq!(p.quadratic_form(&linear), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn order_must_be_below_num_basis() {
        assert!(difference_penalty(4, 4).is_err());
        assert!(difference_penalty(0, 4).is_err());
    }

    #[test]
    fn evaluate_curve_zero_and_constant() {
        let spec = BasisSpec {
            degree: 3,
            interior_knots: 5,
            penalty_order: 1,
        };
        let times: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let basis = bspline_basis(&spec, &times, 0.0, 1.0).unwrap();
        let zeros = Array1::zeros(basis.num_basis());
        for v in evaluate_curve(&zeros, &basis).unwrap() {
            assert_eq!(v, 0.0);
        }
        let c = Array1::from_elem(basis.num_basis(), 2.5);
        for v in evaluate_curve(&c, &basis).unwrap() {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-10);
        }
        let short = Array1::zeros(2);
        assert!(evaluate_curve(&short, &basis).is_err());
    }

    #[test]
    fn cubic_basis_reproduces_linear_function() {
        let spec = BasisSpec {
            degree: 3,
            interior_knots: 5,
            penalty_order: 1,
        };
        let times: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let basis = bspline_basis(&spec, &times, 0.0, 1.0).unwrap();
        // Least-squares coefficients for f(t) = t via normal equations.
        let b = &basis.values;
        let y = Array1::from_iter(times.iter().copied());
        let bt_b = b.t().dot(b);
        let bt_y = b.t().dot(&y);
        let na = nalgebra::DMatrix::from_fn(bt_b.nrows(), bt_b.ncols(), |i, j| bt_b[[i, j]]);
        let rhs = nalgebra::DVector::from_iterator(bt_y.len(), bt_y.iter().copied());
        let sol = na.cholesky().expect("full rank").solve(&rhs);
        let coeffs = Array1::from_iter(sol.iter().copied());
        let fitted = evaluate_curve(&coeffs, &basis).unwrap();
        for (f, t) in fitted.iter().zip(&times) {
            assert_abs_diff_eq!(*f, *t, epsilon = 1e-8);
        }
    }

    #[test]
    fn basis_evaluation_is_deterministic() {
        let spec = BasisSpec::default();
        let times: Vec<f64> = (0..37).map(|i| i as f64 / 36.0).collect();
        let a = bspline_basis(&spec, &times, 0.0, 1.0).unwrap();
        let b = bspline_basis(&spec, &times, 0.0, 1.0).unwrap();
        assert_eq!(a.values, b.values);
    }

    proptest! {
        #[test]
        fn partition_of_unity(
            degree in 1usize..5,
            interior in 0usize..12,
            frac in proptest::collection::vec(0.0f64..=1.0, 1..20),
        ) {
            let spec = BasisSpec { degree, interior_knots: interior, penalty_order: 1 };
            let times: Vec<f64> = frac.iter().map(|f| -1.0 + 3.0 * f).collect();
            let basis = bspline_basis(&spec, &times, -1.0, 2.0).unwrap();
            for row in basis.values.rows() {
                let sum: f64 = row.sum();
                prop_assert!((sum - 1.0).abs() < 1e-10);
                for &v in row {
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                }
            }
        }

        #[test]
        fn penalty_quadratic_form_nonnegative(
            order in 1usize..3,
            extra in 1usize..10,
            coeffs in proptest::collection::vec(-5.0f64..5.0, 12),
        ) {
            let num_basis = order + extra;
            let p = difference_penalty(order, num_basis).unwrap();
            let c = Array1::from_iter(coeffs.into_iter().take(num_basis));
            prop_assert!(p.quadratic_form(&c) >= -1e-10);
        }
    }
}
