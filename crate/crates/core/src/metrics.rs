//! Evaluation metrics: aggregated infeasibility, the Minty gap and its
//! enlarged-set relaxation, parameter error, and an exact KKT oracle for
//! tiny markets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cournot::CournotInstance;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist, dot, norm, positive_part};
use crate::problem::{KktTriple, ProblemInstance};
use crate::rng::{stream, Stream};
use crate::sets::{min_linear_over_box, ConvexSet};

/// `1' [f(x, theta*)]_+`.
pub fn infeasibility(problem: &ProblemInstance, x: &[f64], theta_star: &[f64]) -> Result<f64> {
    Ok(problem
        .constraints(x, theta_star)?
        .into_iter()
        .map(positive_part)
        .sum())
}

pub fn theta_error(theta: &[f64], theta_star: &[f64]) -> Result<f64> {
    check_dim("theta", theta_star.len(), theta.len())?;
    Ok(dist(theta, theta_star))
}

/// Settings for [`minty_gap`].
#[derive(Debug, Clone, PartialEq)]
pub struct GapOracleConfig {
    /// Cap on projected-ascent steps; stops earlier once iterates stall.
    pub inner_iterations: usize,
    /// Ascent step; `None` uses `0.9 / ||M + M'||` for the affine operator `M`.
    pub inner_step: Option<f64>,
    /// Enlargement `eps` of the feasible set. `None` uses the measured
    /// infeasibility of the evaluated point, so the point lies in `X_eps`.
    pub epsilon: Option<f64>,
    pub lower_bound_samples: usize,
    pub seed: u64,
    /// Keep the objective value after every ascent step.
    pub record_history: bool,
}

impl Default for GapOracleConfig {
    fn default() -> Self {
        Self {
            inner_iterations: 5000,
            inner_step: None,
            epsilon: None,
            lower_bound_samples: 10_000,
            seed: 0,
            record_history: false,
        }
    }
}

impl GapOracleConfig {
    /// The standard gap over the unenlarged feasible set.
    pub fn standard() -> Self {
        Self {
            epsilon: Some(0.0),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.inner_iterations == 0 {
            return Err(Error::InvalidParameter("inner_iterations must be >= 1".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0) {
                return Err(Error::InvalidParameter("epsilon must be >= 0".into()));
            }
        }
        if let Some(s) = self.inner_step {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter("inner_step must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapKind {
    /// Concave maximization solved by projected ascent, plus sampling.
    Exact,
    /// Best sampled value only; a lower bound on the true supremum.
    GapLowerBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub value: f64,
    /// Maximizing feasible point found.
    pub certificate: Vec<f64>,
    pub kind: GapKind,
    pub epsilon: f64,
    /// Ascent objective per step, when requested.
    pub history: Vec<f64>,
}

/// `sup { F(y, theta*)'(x - y) : y in X_eps(theta*) }` with
/// `X_eps = { y in X : 1'[f(y, theta*)]_+ <= eps }`.
///
/// Problems declared affine in `x` with a box `X` and parallel constraint
/// gradients have `X_eps` equal to one box-halfspace set; there the concave
/// objective is maximized by projected ascent. Otherwise only the sampling
/// lower bound is available and the estimate is labelled as such.
pub fn minty_gap(
    problem: &ProblemInstance,
    x: &[f64],
    theta_star: &[f64],
    cfg: &GapOracleConfig,
) -> Result<GapEstimate> {
    cfg.validate()?;
    check_dim("x", problem.n(), x.len())?;
    let epsilon = match cfg.epsilon {
        Some(e) => e,
        None => infeasibility(problem, x, theta_star)?,
    };
    match enlarged_region(problem, theta_star, epsilon) {
        Ok(region) => exact_gap(problem, x, theta_star, cfg, epsilon, &region),
        Err(Error::NotAffine(_)) => sampled_gap(problem, x, theta_star, cfg, epsilon),
        Err(e) => Err(e),
    }
}

/// Like [`minty_gap`] but refuses to fall back to sampling.
pub fn minty_gap_exact(
    problem: &ProblemInstance,
    x: &[f64],
    theta_star: &[f64],
    cfg: &GapOracleConfig,
) -> Result<GapEstimate> {
    cfg.validate()?;
    check_dim("x", problem.n(), x.len())?;
    let epsilon = match cfg.epsilon {
        Some(e) => e,
        None => infeasibility(problem, x, theta_star)?,
    };
    let region = enlarged_region(problem, theta_star, epsilon)?;
    exact_gap(problem, x, theta_star, cfg, epsilon, &region)
}

/// `X_eps(theta*)` as a single projectable set.
pub fn enlarged_region(
    problem: &ProblemInstance,
    theta_star: &[f64],
    epsilon: f64,
) -> Result<ConvexSet> {
    if !problem.is_affine_in_x() {
        return Err(Error::NotAffine("problem is not declared affine in x".into()));
    }
    if !problem.primal_set().is_box() {
        return Err(Error::NotAffine("primal set is not a plain box".into()));
    }
    let (lower, upper) = problem.primal_set().bounds();
    if problem.num_constraints() == 0 {
        return ConvexSet::boxed(lower, upper);
    }
    let jac = problem.jacobian(&lower, theta_star)?;
    let f0 = problem.constraints(&lower, theta_star)?;
    let n = problem.n();

    let Some(lead) = (0..jac.nrows()).find(|&j| jac.row(j).norm() > 0.0) else {
        // every constraint is constant in x
        let total: f64 = f0.iter().map(|v| positive_part(*v)).sum();
        if total > epsilon {
            return Err(Error::EmptySet(format!(
                "constant constraint violation {total} exceeds eps = {epsilon}"
            )));
        }
        return ConvexSet::boxed(lower, upper);
    };
    let lead_norm = jac.row(lead).norm();
    let direction: Vec<f64> = (0..n).map(|i| jac[(lead, i)] / lead_norm).collect();

    // f_j(y) = s_j (d . y) + c_j
    let mut constant_excess = 0.0;
    let mut terms = Vec::new();
    for j in 0..jac.nrows() {
        let row: Vec<f64> = (0..n).map(|i| jac[(j, i)]).collect();
        let s = dot(&row, &direction);
        let residual: f64 = row
            .iter()
            .zip(&direction)
            .map(|(r, d)| (r - s * d).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual > 1e-12 * (1.0 + norm(&row)) || s < -1e-12 * (1.0 + norm(&row)) {
            return Err(Error::NotAffine(
                "constraint gradients are not positively parallel".into(),
            ));
        }
        let c = f0[j] - dot(&row, &lower);
        if s.abs() <= 1e-15 {
            constant_excess += positive_part(c);
        } else {
            terms.push((s, c));
        }
    }
    let budget = epsilon - constant_excess;
    if budget < 0.0 {
        return Err(Error::EmptySet(format!(
            "constant constraint violation exceeds eps = {epsilon}"
        )));
    }
    let threshold = level_threshold(&terms, budget);
    let min_t = min_linear_over_box(&lower, &upper, &direction);
    if min_t > threshold {
        return Err(Error::EmptySet(format!(
            "X_eps is empty for eps = {epsilon}: min d.y = {min_t} > {threshold}"
        )));
    }
    ConvexSet::box_halfspace(lower, upper, direction, threshold)
}

/// Largest `t` with `sum_j [s_j t + c_j]_+ <= budget` for `s_j > 0`.
fn level_threshold(terms: &[(f64, f64)], budget: f64) -> f64 {
    let mut breaks: Vec<(f64, f64)> = terms.iter().map(|&(s, c)| (-c / s, s)).collect();
    breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
    // h is zero up to the first breakpoint, then gains slope s_j past each.
    let mut t = breaks[0].0;
    let mut h = 0.0;
    let mut slope = 0.0;
    for &(bp, s) in &breaks {
        let h_at = h + slope * (bp - t);
        if h_at > budget {
            return t + (budget - h) / slope;
        }
        h = h_at;
        t = bp;
        slope += s;
    }
    t + (budget - h) / slope
}

fn exact_gap(
    problem: &ProblemInstance,
    x: &[f64],
    theta_star: &[f64],
    cfg: &GapOracleConfig,
    epsilon: f64,
    region: &ConvexSet,
) -> Result<GapEstimate> {
    let n = problem.n();
    // F(y) = M y + q, recovered from n + 1 evaluations.
    let zero = vec![0.0; n];
    let q = problem.operator(&zero, theta_star)?;
    let mut m = DMatrix::zeros(n, n);
    let mut unit = zero.clone();
    for i in 0..n {
        unit[i] = 1.0;
        let col = problem.operator(&unit, theta_star)?;
        unit[i] = 0.0;
        for k in 0..n {
            m[(k, i)] = col[k] - q[k];
        }
    }
    let step = match cfg.inner_step {
        Some(s) => s,
        None => {
            let sym = &m + m.transpose();
            let l = SymmetricEigen::new(sym)
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            0.9 / l.max(1e-12)
        }
    };

    let xv = DVector::from_column_slice(x);
    let qv = DVector::from_column_slice(&q);
    let objective = |y: &DVector<f64>| -> f64 { (&m * y + &qv).dot(&(&xv - y)) };

    let mut y = DVector::from_vec(region.project(x)?);
    let mut best_val = objective(&y);
    let mut best = y.clone();
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(best_val);
    }
    let mt = m.transpose();
    for _ in 0..cfg.inner_iterations {
        let diff = &xv - &y;
        let grad = &mt * &diff - (&m * &y + &qv);
        let trial = &y + step * grad;
        let next = DVector::from_vec(region.project(trial.as_slice())?);
        let moved = (&next - &y).norm();
        y = next;
        let val = objective(&y);
        if cfg.record_history {
            history.push(val);
        }
        if val > best_val {
            best_val = val;
            best = y.clone();
        }
        if moved <= 1e-14 * (1.0 + y.norm()) {
            break;
        }
    }

    let (sample_val, sample_arg) = sample_region(problem, x, theta_star, cfg, |rng| {
        Some(region.sample(rng, 1.0))
    })?;
    let (value, certificate) = if sample_val > best_val {
        (sample_val, sample_arg.expect("sample attained the max"))
    } else {
        (best_val, best.as_slice().to_vec())
    };
    Ok(GapEstimate {
        value,
        certificate,
        kind: GapKind::Exact,
        epsilon,
        history,
    })
}

fn sampled_gap(
    problem: &ProblemInstance,
    x: &[f64],
    theta_star: &[f64],
    cfg: &GapOracleConfig,
    epsilon: f64,
) -> Result<GapEstimate> {
    let set = problem.primal_set();
    let (value, certificate) = sample_region(problem, x, theta_star, cfg, |rng| {
        let y = set.sample(rng, 1.0);
        let viol: f64 = problem
            .constraints(&y, theta_star)
            .ok()?
            .into_iter()
            .map(positive_part)
            .sum();
        (viol <= epsilon).then_some(y)
    })?;
    let certificate = certificate.ok_or_else(|| {
        Error::EmptySet("no sampled point fell inside the enlarged feasible set".into())
    })?;
    Ok(GapEstimate {
        value,
        certificate,
        kind: GapKind::GapLowerBound,
        epsilon,
        history: Vec::new(),
    })
}

/// Best objective over `lower_bound_samples` draws. Draws are generated
/// sequentially from the gap stream, so the result depends only on the seed.
fn sample_region<D>(
    problem: &ProblemInstance,
    x: &[f64],
    theta_star: &[f64],
    cfg: &GapOracleConfig,
    mut draw: D,
) -> Result<(f64, Option<Vec<f64>>)>
where
    D: FnMut(&mut crate::rng::Rng) -> Option<Vec<f64>>,
{
    let mut rng = stream(cfg.seed, Stream::GapSampling);
    let mut best = (f64::NEG_INFINITY, None);
    for _ in 0..cfg.lower_bound_samples {
        let Some(y) = draw(&mut rng) else { continue };
        let fy = problem.operator(&y, theta_star)?;
        let val: f64 = fy
            .iter()
            .zip(x.iter().zip(&y))
            .map(|(f, (xi, yi))| f * (xi - yi))
            .sum();
        if val > best.0 {
            best = (val, Some(y));
        }
    }
    Ok(best)
}

/// Exact equilibrium of a market with one price cap and at most three
/// firms, by enumerating which bounds and constraints are active.
///
/// Every combination of {lower, interior, upper} per firm and
/// {inactive, active} for the cap fixes a linear system; the combination
/// whose solution satisfies all sign conditions is the KKT point.
pub fn solve_tiny_kkt(instance: &CournotInstance, theta_star: f64) -> Result<KktTriple> {
    let n = instance.n();
    if n > 3 {
        return Err(Error::InvalidParameter(format!(
            "KKT enumeration supports at most 3 firms, got {n}"
        )));
    }
    if instance.num_constraints() != 1 {
        return Err(Error::InvalidParameter(format!(
            "KKT enumeration needs exactly one price cap, got {}",
            instance.num_constraints()
        )));
    }
    let b = theta_star;
    let a = instance.a_star;
    let delta = instance.deltas[0];
    let scale = a.abs().max(1.0);
    let tol = 1e-9 * scale;

    let mut valid: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut misses: Vec<(f64, String)> = Vec::new();
    for active in [false, true] {
        for code in 0..3usize.pow(n as u32) {
            let states: Vec<u8> = (0..n).map(|i| ((code / 3usize.pow(i as u32)) % 3) as u8).collect();
            let Some((x, lambda)) = solve_pattern(instance, b, &states, active) else {
                continue;
            };
            // sign conditions
            let total: f64 = x.iter().sum();
            let f = a - b * total - delta;
            let w: Vec<f64> = instance
                .operator(&x, b)
                .iter()
                .map(|v| v - b * lambda)
                .collect();
            let mut violation = 0.0;
            violation += (-lambda).max(0.0);
            violation += f.max(0.0);
            for i in 0..n {
                violation += match states[i] {
                    0 => (-w[i]).max(0.0),
                    2 => w[i].max(0.0),
                    _ => (-x[i]).max(0.0) + (x[i] - instance.cap[i]).max(0.0),
                };
            }
            if violation <= tol {
                valid.push((x, lambda.max(0.0)));
            } else {
                misses.push((
                    violation,
                    format!("states={states:?} active={active} x={x:?} lambda={lambda}"),
                ));
            }
        }
    }
    match valid.into_iter().next() {
        Some((x_star, lambda)) => Ok(KktTriple {
            x_star,
            theta_star: vec![theta_star],
            lambda_star: vec![lambda],
        }),
        None => {
            misses.sort_by(|p, q| p.0.total_cmp(&q.0));
            let near: Vec<String> = misses
                .iter()
                .take(3)
                .map(|(v, d)| format!("{d} (violation {v:.3e})"))
                .collect();
            Err(Error::OracleFailed(near.join("; ")))
        }
    }
}

/// Solves stationarity for interior firms plus, when `active`, the cap
/// equation. `states[i]` is 0 (lower), 1 (interior) or 2 (upper).
fn solve_pattern(
    instance: &CournotInstance,
    b: f64,
    states: &[u8],
    active: bool,
) -> Option<(Vec<f64>, f64)> {
    let n = states.len();
    let a = instance.a_star;
    let delta = instance.deltas[0];
    let free: Vec<usize> = (0..n).filter(|&i| states[i] == 1).collect();
    let mut x: Vec<f64> = (0..n)
        .map(|i| if states[i] == 2 { instance.cap[i] } else { 0.0 })
        .collect();
    let fixed_sum: f64 = x.iter().sum();
    let unknowns = free.len() + usize::from(active);
    if unknowns == 0 {
        return Some((x, 0.0));
    }
    if active && free.is_empty() {
        // lambda would appear in no equation
        return None;
    }
    let mut mat = DMatrix::zeros(unknowns, unknowns);
    let mut rhs = DVector::zeros(unknowns);
    for (row, &i) in free.iter().enumerate() {
        // r_i x_i + g_i + b (X + x_i) - a - b lambda = 0
        for (col, &k) in free.iter().enumerate() {
            mat[(row, col)] = b + if k == i { instance.r[i] + b } else { 0.0 };
        }
        if active {
            mat[(row, free.len())] = -b;
        }
        rhs[row] = a - instance.g[i] - b * fixed_sum;
    }
    if active {
        // a - b X - delta = 0
        let row = free.len();
        for col in 0..free.len() {
            mat[(row, col)] = b;
        }
        rhs[row] = a - delta - b * fixed_sum;
    }
    let lu = mat.clone().lu();
    if lu.determinant().abs() < 1e-12 {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    for (col, &i) in free.iter().enumerate() {
        x[i] = sol[col];
    }
    let lambda = if active { sol[free.len()] } else { 0.0 };
    Some((x, lambda))
}
