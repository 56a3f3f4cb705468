//! Augmented-Lagrangian penalty for the constraint stack.
//!
//! For a constraint value `u = f_j(x, theta)` and multiplier `v = lambda_j`,
//!
//! ```text
//! phi_rho(u, v) = u v + (rho / 2) u^2    if rho u + v >= 0
//!               = -v^2 / (2 rho)         otherwise
//! ```
//!
//! and `Phi_rho(x, lambda, theta) = sum_j phi_rho(f_j(x, theta), lambda_j)`.
//! Its `x`-gradient is `sum_j [rho f_j + lambda_j]_+ grad f_j`, and its
//! `lambda`-gradient is `f_j` on the active set and `-lambda_j / rho` off it.

use crate::error::{check_dim, Error, Result};
use crate::problem::{check_nonnegative, ProblemInstance};

/// Value and partial gradients of the penalty at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct AugLagEval {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_lambda: Vec<f64>,
    /// `rho f_j + lambda_j >= 0`.
    pub active_set: Vec<bool>,
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "penalty rho must be positive, got {rho}"
        )));
    }
    Ok(())
}

/// Scalar penalty `phi_rho(u, v)`. Ties at `rho u + v = 0` take the first
/// branch; both branches equal `-v^2 / (2 rho)` there.
pub fn phi_scalar(u: f64, v: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(phi_unchecked(u, v, rho))
}

#[inline]
fn phi_unchecked(u: f64, v: f64, rho: f64) -> f64 {
    if rho * u + v >= 0.0 {
        u * v + 0.5 * rho * u * u
    } else {
        -v * v / (2.0 * rho)
    }
}

/// Penalty terms from already evaluated constraint values and Jacobian.
pub fn phi_from_values(
    f_val: &[f64],
    jacobian: &nalgebra::DMatrix<f64>,
    lambda: &[f64],
    rho: f64,
) -> Result<AugLagEval> {
    check_rho(rho)?;
    check_dim("lambda", f_val.len(), lambda.len())?;
    check_dim("Jacobian rows", f_val.len(), jacobian.nrows())?;
    check_nonnegative(lambda)?;
    let n = jacobian.ncols();
    let mut value = 0.0;
    let mut grad_x = vec![0.0; n];
    let mut grad_lambda = Vec::with_capacity(f_val.len());
    let mut active_set = Vec::with_capacity(f_val.len());
    for (j, (&u, &v)) in f_val.iter().zip(lambda).enumerate() {
        value += phi_unchecked(u, v, rho);
        let shifted = rho * u + v;
        let active = shifted >= 0.0;
        active_set.push(active);
        if active {
            grad_lambda.push(u);
            for (i, g) in grad_x.iter_mut().enumerate() {
                *g += shifted * jacobian[(j, i)];
            }
        } else {
            grad_lambda.push(-v / rho);
        }
    }
    Ok(AugLagEval {
        value,
        grad_x,
        grad_lambda,
        active_set,
    })
}

/// `Phi_rho(x, lambda, theta)` with both partial gradients.
pub fn phi_total(
    problem: &ProblemInstance,
    x: &[f64],
    lambda: &[f64],
    theta: &[f64],
    rho: f64,
) -> Result<AugLagEval> {
    check_rho(rho)?;
    check_dim("lambda", problem.num_constraints(), lambda.len())?;
    check_nonnegative(lambda)?;
    let f_val = problem.constraints(x, theta)?;
    let jac = problem.jacobian(x, theta)?;
    phi_from_values(&f_val, &jac, lambda, rho)
}

/// Projected dual ascent `[lambda + rho f]_+`.
pub fn dual_update(lambda: &[f64], f_val: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_rho(rho)?;
    check_dim("constraint values", lambda.len(), f_val.len())?;
    check_nonnegative(lambda)?;
    Ok(lambda
        .iter()
        .zip(f_val)
        .map(|(l, f)| (l + rho * f).max(0.0))
        .collect())
}
