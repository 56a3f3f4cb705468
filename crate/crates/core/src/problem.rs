//! The coupled problem: a constrained VI whose data depend on a parameter
//! that is itself the solution of a strongly monotone secondary VI.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm, positive_part, sub};
use crate::rng::{stream, Stream};
use crate::sets::ConvexSet;

pub type OperatorFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type ParamOperatorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Lipschitz and monotonicity constants of the problem data.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LipschitzHints {
    /// Lipschitz constant of `F(., theta)`.
    pub l_fx: f64,
    /// Lipschitz constant of `F(x, .)`.
    pub l_ftheta: f64,
    /// Lipschitz constant of each `f_j(., theta)`.
    pub l_cx: f64,
    /// Lipschitz constant of each `f_j(x, .)`.
    pub l_ctheta: f64,
    /// Strong monotonicity modulus of `H`.
    pub mu_h: f64,
    /// Lipschitz constant of `H`.
    pub l_h: f64,
}

impl LipschitzHints {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.l_fx,
            self.l_ftheta,
            self.l_cx,
            self.l_ctheta,
            self.mu_h,
            self.l_h,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "Lipschitz hints must be finite and nonnegative".into(),
            ));
        }
        if self.mu_h <= 0.0 {
            return Err(Error::InvalidParameter("mu_H must be positive".into()));
        }
        if self.mu_h > self.l_h {
            return Err(Error::InvalidParameter(format!(
                "mu_H = {} exceeds L_H = {}",
                self.mu_h, self.l_h
            )));
        }
        Ok(())
    }
}

/// Find `x` in `{x in X : f(x, theta*) <= 0}` with `F(x, theta*)'(y - x) >= 0`
/// for every feasible `y`, where `theta*` solves `H(theta*)'(t - theta*) >= 0`
/// over `Theta`.
///
/// `F`, `f`, its Jacobian and `H` are supplied as closures. The Jacobian
/// returns a `J x n` matrix whose rows are the constraint gradients.
#[derive(Clone)]
pub struct ProblemInstance {
    n: usize,
    m: usize,
    num_constraints: usize,
    operator: OperatorFn,
    constraints: OperatorFn,
    jacobian: JacobianFn,
    secondary: ParamOperatorFn,
    primal_set: ConvexSet,
    param_set: ConvexSet,
    hints: Option<LipschitzHints>,
    affine_in_x: bool,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("num_constraints", &self.num_constraints)
            .field("primal_set", &self.primal_set)
            .field("param_set", &self.param_set)
            .field("hints", &self.hints)
            .field("affine_in_x", &self.affine_in_x)
            .finish_non_exhaustive()
    }
}

pub struct ProblemBuilder {
    primal_set: ConvexSet,
    param_set: ConvexSet,
    operator: OperatorFn,
    secondary: ParamOperatorFn,
    constraints: Option<(usize, OperatorFn, JacobianFn)>,
    hints: Option<LipschitzHints>,
    affine_in_x: bool,
}

impl ProblemBuilder {
    pub fn constraints<C, D>(mut self, count: usize, values: C, jacobian: D) -> Self
    where
        C: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        D: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.constraints = Some((count, Arc::new(values), Arc::new(jacobian)));
        self
    }

    pub fn hints(mut self, hints: LipschitzHints) -> Self {
        self.hints = Some(hints);
        self
    }

    /// Declares `F(., theta)` and every `f_j(., theta)` affine in `x`, which
    /// enables the exact gap oracle.
    pub fn affine_in_x(mut self, affine: bool) -> Self {
        self.affine_in_x = affine;
        self
    }

    pub fn build(self) -> Result<ProblemInstance> {
        if let Some(h) = &self.hints {
            h.validate()?;
        }
        let n = self.primal_set.dim();
        let (num_constraints, constraints, jacobian) = match self.constraints {
            Some(c) => c,
            None => (
                0,
                Arc::new(|_: &[f64], _: &[f64]| Vec::new()) as OperatorFn,
                Arc::new(move |_: &[f64], _: &[f64]| DMatrix::zeros(0, n)) as JacobianFn,
            ),
        };
        Ok(ProblemInstance {
            n,
            m: self.param_set.dim(),
            num_constraints,
            operator: self.operator,
            constraints,
            jacobian,
            secondary: self.secondary,
            primal_set: self.primal_set,
            param_set: self.param_set,
            hints: self.hints,
            affine_in_x: self.affine_in_x,
        })
    }
}

impl ProblemInstance {
    /// Starts a problem with operator `F` on `primal_set` and secondary
    /// operator `H` on `param_set`. Constraints default to none.
    pub fn builder<F, H>(
        primal_set: ConvexSet,
        param_set: ConvexSet,
        operator: F,
        secondary: H,
    ) -> ProblemBuilder
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        H: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        ProblemBuilder {
            primal_set,
            param_set,
            operator: Arc::new(operator),
            secondary: Arc::new(secondary),
            constraints: None,
            hints: None,
            affine_in_x: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    pub fn primal_set(&self) -> &ConvexSet {
        &self.primal_set
    }

    pub fn param_set(&self) -> &ConvexSet {
        &self.param_set
    }

    pub fn hints(&self) -> Option<&LipschitzHints> {
        self.hints.as_ref()
    }

    pub fn is_affine_in_x(&self) -> bool {
        self.affine_in_x
    }

    fn check_xt(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        check_dim("x", self.n, x.len())?;
        check_dim("theta", self.m, theta.len())
    }

    pub fn operator(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_xt(x, theta)?;
        let out = (self.operator)(x, theta);
        check_dim("F(x, theta)", self.n, out.len())?;
        Ok(out)
    }

    pub fn constraints(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_xt(x, theta)?;
        let out = (self.constraints)(x, theta);
        check_dim("f(x, theta)", self.num_constraints, out.len())?;
        Ok(out)
    }

    pub fn jacobian(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_xt(x, theta)?;
        let out = (self.jacobian)(x, theta);
        check_dim("Jacobian rows", self.num_constraints, out.nrows())?;
        check_dim("Jacobian columns", self.n, out.ncols())?;
        Ok(out)
    }

    pub fn secondary(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("theta", self.m, theta.len())?;
        let out = (self.secondary)(theta);
        check_dim("H(theta)", self.m, out.len())?;
        Ok(out)
    }

    /// Same problem with `theta` frozen: `H` is replaced by `theta - value`
    /// and `Theta` by the single point, so every solver sees the true
    /// parameter from the first iteration.
    pub fn with_fixed_parameter(&self, value: &[f64]) -> Result<Self> {
        check_dim("theta", self.m, value.len())?;
        let point = value.to_vec();
        let set = ConvexSet::boxed(point.clone(), point.clone())?;
        let mut out = self.clone();
        out.param_set = set;
        out.secondary = Arc::new(move |t: &[f64]| sub(t, &point));
        if let Some(h) = &mut out.hints {
            h.mu_h = 1.0;
            h.l_h = 1.0;
        }
        Ok(out)
    }
}

/// A primal-dual-parameter point satisfying the KKT system.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktTriple {
    pub x_star: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
}

impl KktTriple {
    /// Checks `lambda >= 0` and `|lambda_j f_j| <= tol`.
    pub fn check(&self, problem: &ProblemInstance, tol: f64) -> Result<()> {
        check_nonnegative(&self.lambda_star)?;
        let f = problem.constraints(&self.x_star, &self.theta_star)?;
        for (j, (l, v)) in self.lambda_star.iter().zip(&f).enumerate() {
            if (l * v).abs() > tol {
                return Err(Error::InvalidParameter(format!(
                    "complementarity violated at constraint {j}: lambda = {l}, f = {v}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_nonnegative(lambda: &[f64]) -> Result<()> {
    for (index, &value) in lambda.iter().enumerate() {
        if value < 0.0 || value.is_nan() {
            return Err(Error::NegativeMultiplier { index, value });
        }
    }
    Ok(())
}

/// Sum of the four KKT violations: projected stationarity in `x`, positive
/// constraint violation, complementarity, and the projected residual of the
/// secondary VI. Zero exactly at KKT points.
pub fn evaluate_kkt_residual(
    problem: &ProblemInstance,
    x: &[f64],
    theta: &[f64],
    lambda: &[f64],
) -> Result<f64> {
    check_dim("lambda", problem.num_constraints(), lambda.len())?;
    check_nonnegative(lambda)?;
    let f_x = problem.operator(x, theta)?;
    let c = problem.constraints(x, theta)?;
    let jac = problem.jacobian(x, theta)?;

    let mut step = x.to_vec();
    for i in 0..problem.n() {
        let mut w = f_x[i];
        for j in 0..problem.num_constraints() {
            w += jac[(j, i)] * lambda[j];
        }
        step[i] -= w;
    }
    let stationarity = norm(&sub(x, &problem.primal_set().project(&step)?));

    let violation = c.iter().map(|v| positive_part(*v).powi(2)).sum::<f64>().sqrt();
    let complementarity = dot(lambda, &c).abs();

    let h = problem.secondary(theta)?;
    let theta_step = sub(theta, &h);
    let learning = norm(&sub(theta, &problem.param_set().project(&theta_step)?));

    Ok(stationarity + violation + complementarity + learning)
}

/// Sampled monotonicity diagnostic for an operator on a set: `true` when
/// `(G(z) - G(w))'(z - w) >= -1e-10` on every sampled pair.
pub fn check_monotonicity_of<G>(
    operator: G,
    set: &ConvexSet,
    samples: usize,
    seed: u64,
    unbounded_cap: f64,
) -> Result<bool>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    let mut rng = stream(seed, Stream::Monotonicity);
    for _ in 0..samples {
        let z = set.sample(&mut rng, unbounded_cap);
        let mut w = set.sample(&mut rng, unbounded_cap);
        if rng.random_bool(0.5) {
            // short-range pairs catch local nonmonotonicity
            let scale = rng.random_range(1e-4..1e-1);
            for (wi, zi) in w.iter_mut().zip(&z) {
                *wi = zi + scale * (*wi - zi);
            }
        }
        let gz = operator(&z)?;
        let gw = operator(&w)?;
        if dot(&sub(&gz, &gw), &sub(&z, &w)) < -1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// [`check_monotonicity_of`] applied to `F(., theta)` on `X`.
pub fn check_monotonicity(
    problem: &ProblemInstance,
    theta: &[f64],
    samples: usize,
    seed: u64,
) -> Result<bool> {
    check_dim("theta", problem.m(), theta.len())?;
    check_monotonicity_of(
        |x| problem.operator(x, theta),
        problem.primal_set(),
        samples,
        seed,
        100.0,
    )
}
