//! Single-loop augmented-Lagrangian solver with a forward-reflected-backward
//! primal step.
//!
//! Each iteration performs, in order,
//!
//! ```text
//! r      = F(x_k, theta_k) - F(x_{k-1}, theta_{k-1})          (r_0 = 0)
//! x_k+1  = P_X[x_k - gamma (F(x_k, theta_k) + r + grad_x Phi_rho(x_k, lambda_k, theta_k))]
//! l_k+1  = [lambda_k + rho f(x_k+1, theta_k)]_+
//! t_k+1  = P_Theta[theta_k - eta H(theta_k)]
//! ```
//!
//! The dual step evaluates the constraints at the new primal point and the
//! old parameter.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::auglag::{dual_update, phi_total};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist, norm};
use crate::problem::ProblemInstance;
use crate::rng::{stream, Rng, Stream};
use crate::trace::{IterationTrace, Snapshot, Tracer};

/// Upper end of the multiplier box sampled when estimating penalty constants.
pub const LAMBDA_CAP: f64 = 100.0;
/// Points sampled per estimated constant.
pub const ESTIMATE_SAMPLES: usize = 10_000;
/// Multiplier applied to sampled Lipschitz estimates.
pub const SAFETY_FACTOR: f64 = 2.0;
/// Iterates with `||x|| > DIVERGENCE_FACTOR (1 + ||x_0||)` count as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    UserSupplied,
    FromHints,
}

/// Sampled Lipschitz constants of the penalty gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConstants {
    /// `grad_x Phi` in `x`.
    pub l_phi: f64,
    /// `grad_x Phi` in `theta`.
    pub l_phi_xtheta: f64,
    /// `grad_lambda Phi` in `theta`.
    pub l_phi_lambdatheta: f64,
}

/// Constant step sizes `gamma` (primal), `rho` (penalty) and `eta` (learning).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub gamma: f64,
    pub rho: f64,
    pub eta: f64,
    pub mode: ScheduleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<PenaltyConstants>,
}

impl StepSchedule {
    pub fn user_supplied(gamma: f64, rho: f64, eta: f64) -> Result<Self> {
        let s = Self {
            gamma,
            rho,
            eta,
            mode: ScheduleMode::UserSupplied,
            constants: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("rho", self.rho), ("eta", self.eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Iterate of the solver. Cloning and re-running reproduces the trajectory
/// bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub k: usize,
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_prev: Vec<f64>,
    /// Reflection term used by the last step.
    pub r: Vec<f64>,
    pub gamma: f64,
    pub rho: f64,
    pub eta: f64,
    /// `x_1 + ... + x_k`.
    pub x_ergodic_sum: Vec<f64>,
    pub x0_norm: f64,
}

impl SolverState {
    /// Starting point with `lambda_0 = 0` and `x_{-1} = x_0`. Both starting
    /// points are projected onto their sets.
    pub fn initial(
        problem: &ProblemInstance,
        schedule: &StepSchedule,
        x0: &[f64],
        theta0: &[f64],
    ) -> Result<Self> {
        schedule.validate()?;
        let x = problem.primal_set().project(x0)?;
        let theta = problem.param_set().project(theta0)?;
        Ok(Self {
            k: 0,
            x_prev: x.clone(),
            x0_norm: norm(&x),
            x_ergodic_sum: vec![0.0; x.len()],
            r: vec![0.0; x.len()],
            x,
            lambda: vec![0.0; problem.num_constraints()],
            theta_prev: theta.clone(),
            theta,
            gamma: schedule.gamma,
            rho: schedule.rho,
            eta: schedule.eta,
        })
    }

    /// `(x_1 + ... + x_k) / k`, or `x_0` before the first step.
    pub fn ergodic_average(&self) -> Vec<f64> {
        if self.k == 0 {
            return self.x.clone();
        }
        let k = self.k as f64;
        self.x_ergodic_sum.iter().map(|v| v / k).collect()
    }
}

fn diverged(iteration: usize, reason: impl Into<String>) -> Error {
    Error::Divergence {
        iteration,
        reason: reason.into(),
        partial_trace: Vec::new(),
    }
}

/// `P_Theta[theta - eta H(theta)]`, shared by every solver.
pub fn param_step(problem: &ProblemInstance, theta: &[f64], eta: f64) -> Result<Vec<f64>> {
    let h = problem.secondary(theta)?;
    let trial: Vec<f64> = theta.iter().zip(&h).map(|(t, g)| t - eta * g).collect();
    problem.param_set().project(&trial)
}

/// One iteration; the input state is left untouched.
pub fn alm_step(problem: &ProblemInstance, s: &SolverState) -> Result<SolverState> {
    let it = s.k;
    let f_cur = problem.operator(&s.x, &s.theta)?;
    let r = if s.k == 0 {
        vec![0.0; s.x.len()]
    } else {
        let f_prev = problem.operator(&s.x_prev, &s.theta_prev)?;
        f_cur.iter().zip(&f_prev).map(|(a, b)| a - b).collect()
    };
    let pen = phi_total(problem, &s.x, &s.lambda, &s.theta, s.rho)?;
    let trial: Vec<f64> = (0..s.x.len())
        .map(|i| s.x[i] - s.gamma * (f_cur[i] + r[i] + pen.grad_x[i]))
        .collect();
    if !all_finite(&trial) {
        return Err(diverged(it, "non-finite primal step"));
    }
    let x_next = problem.primal_set().project(&trial)?;
    if norm(&x_next) > DIVERGENCE_FACTOR * (1.0 + s.x0_norm) {
        return Err(diverged(it, "primal iterate norm blew up"));
    }

    let c_next = problem.constraints(&x_next, &s.theta)?;
    if !all_finite(&c_next) {
        return Err(diverged(it, "non-finite constraint values"));
    }
    let lambda_next = dual_update(&s.lambda, &c_next, s.rho)?;

    let theta_next = param_step(problem, &s.theta, s.eta)?;
    if !all_finite(&theta_next) || !all_finite(&lambda_next) {
        return Err(diverged(it, "non-finite dual or parameter iterate"));
    }

    let mut sum = s.x_ergodic_sum.clone();
    for (acc, v) in sum.iter_mut().zip(&x_next) {
        *acc += v;
    }
    Ok(SolverState {
        k: s.k + 1,
        x_prev: s.x.clone(),
        x: x_next,
        lambda: lambda_next,
        theta_prev: s.theta.clone(),
        theta: theta_next,
        r,
        gamma: s.gamma,
        rho: s.rho,
        eta: s.eta,
        x_ergodic_sum: sum,
        x0_norm: s.x0_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub iterations: usize,
    pub trace_every: usize,
}

impl RunOptions {
    /// `trace_every = max(1, iterations / 1000)`.
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            trace_every: (iterations / 1000).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iteration count must be >= 1".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidParameter("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Largest multiplier norm seen in each half of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DualNormPeaks {
    pub first_half: f64,
    pub second_half: f64,
}

impl DualNormPeaks {
    pub(crate) fn record(&mut self, k: usize, iterations: usize, lambda_norm: f64) {
        if 2 * k <= iterations {
            self.first_half = self.first_half.max(lambda_norm);
        } else {
            self.second_half = self.second_half.max(lambda_norm);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: SolverState,
    pub trace: Vec<IterationTrace>,
    pub dual_peaks: DualNormPeaks,
}

/// Runs `opts.iterations` steps from `(x0, theta0)` with `lambda_0 = 0`,
/// emitting a trace row every `opts.trace_every` iterations when a tracer
/// is given. A divergence error carries the rows produced so far.
pub fn solve(
    problem: &ProblemInstance,
    schedule: &StepSchedule,
    x0: &[f64],
    theta0: &[f64],
    opts: &RunOptions,
    tracer: Option<&Tracer>,
) -> Result<Solution> {
    opts.validate()?;
    let state = SolverState::initial(problem, schedule, x0, theta0)?;
    resume(problem, state, opts, tracer)
}

/// Continues from a saved state for `opts.iterations` more steps.
pub fn resume(
    problem: &ProblemInstance,
    mut state: SolverState,
    opts: &RunOptions,
    tracer: Option<&Tracer>,
) -> Result<Solution> {
    opts.validate()?;
    let mut trace = Vec::new();
    let mut peaks = DualNormPeaks::default();
    let start = state.k;
    for step in 1..=opts.iterations {
        state = match alm_step(problem, &state) {
            Ok(s) => s,
            Err(Error::Divergence {
                iteration, reason, ..
            }) => {
                return Err(Error::Divergence {
                    iteration,
                    reason,
                    partial_trace: trace,
                })
            }
            Err(e) => return Err(e),
        };
        peaks.record(step, opts.iterations, norm(&state.lambda));
        if let Some(tr) = tracer {
            if step % opts.trace_every == 0 {
                let avg = state.ergodic_average();
                trace.push(tr.row(
                    problem,
                    &Snapshot {
                        k: start + step,
                        x: &state.x,
                        x_ergodic: &avg,
                        lambda: &state.lambda,
                        theta: &state.theta,
                    },
                )?);
            }
        }
    }
    Ok(Solution {
        state,
        trace,
        dual_peaks: peaks,
    })
}

fn sample_pair(rng: &mut Rng, problem: &ProblemInstance) -> (Vec<f64>, Vec<f64>) {
    let set = problem.primal_set();
    let a = set.sample(rng, LAMBDA_CAP);
    let mut b = set.sample(rng, LAMBDA_CAP);
    if rng.random_bool(0.5) {
        let scale = rng.random_range(1e-3..1.0);
        for (bi, ai) in b.iter_mut().zip(&a) {
            *bi = ai + scale * (*bi - ai);
        }
    }
    (a, b)
}

fn sample_lambda(rng: &mut Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(0.0..=LAMBDA_CAP)).collect()
}

fn sample_param_pair(rng: &mut Rng, problem: &ProblemInstance) -> (Vec<f64>, Vec<f64>) {
    let set = problem.param_set();
    (set.sample(rng, LAMBDA_CAP), set.sample(rng, LAMBDA_CAP))
}

/// Sampled Lipschitz constants of the penalty gradients at penalty `rho`,
/// over `X x [0, LAMBDA_CAP]^J x Theta`, each inflated by [`SAFETY_FACTOR`].
pub fn estimate_penalty_constants(
    problem: &ProblemInstance,
    rho: f64,
    seed: u64,
) -> Result<PenaltyConstants> {
    if problem.num_constraints() == 0 {
        return Ok(PenaltyConstants {
            l_phi: 0.0,
            l_phi_xtheta: 0.0,
            l_phi_lambdatheta: 0.0,
        });
    }
    let mut rng = stream(seed, Stream::LipschitzEstimate);
    let j = problem.num_constraints();
    let (mut l_phi, mut l_xt, mut l_lt) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..ESTIMATE_SAMPLES {
        let (x1, x2) = sample_pair(&mut rng, problem);
        let (t1, t2) = sample_param_pair(&mut rng, problem);
        let lambda = sample_lambda(&mut rng, j);

        let base = phi_total(problem, &x1, &lambda, &t1, rho)?;
        let dx = dist(&x1, &x2);
        if dx > 0.0 {
            let other = phi_total(problem, &x2, &lambda, &t1, rho)?;
            l_phi = l_phi.max(dist(&base.grad_x, &other.grad_x) / dx);
        }
        let dt = dist(&t1, &t2);
        if dt > 0.0 {
            let other = phi_total(problem, &x1, &lambda, &t2, rho)?;
            l_xt = l_xt.max(dist(&base.grad_x, &other.grad_x) / dt);
            l_lt = l_lt.max(dist(&base.grad_lambda, &other.grad_lambda) / dt);
        }
    }
    Ok(PenaltyConstants {
        l_phi: SAFETY_FACTOR * l_phi,
        l_phi_xtheta: SAFETY_FACTOR * l_xt,
        l_phi_lambdatheta: SAFETY_FACTOR * l_lt,
    })
}

/// Constant schedule inside the region where dual boundedness and the
/// ergodic rates are guaranteed:
///
/// ```text
/// rho   = min(rho_requested, 1 / L_lambda_theta)
/// gamma = 0.9 min{ 1 / (L_phi + 2 L_Fx + L_Ftheta), 1 / (L_Fx + L_Ftheta) }
/// eta   = mu_H / L_H^2
/// ```
///
/// The penalty constants are sampled (see [`estimate_penalty_constants`]);
/// `L_phi` is estimated at the clipped `rho`.
pub fn derive_schedule(
    problem: &ProblemInstance,
    rho_requested: f64,
    seed: u64,
) -> Result<StepSchedule> {
    let hints = problem.hints().ok_or_else(|| {
        Error::MissingHints("the problem carries no Lipschitz hints".into())
    })?;
    if !(rho_requested > 0.0 && rho_requested.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "requested rho must be positive, got {rho_requested}"
        )));
    }
    let first = estimate_penalty_constants(problem, rho_requested, seed)?;
    let rho = if first.l_phi_lambdatheta > 0.0 {
        rho_requested.min(1.0 / first.l_phi_lambdatheta)
    } else {
        rho_requested
    };
    let constants = if rho == rho_requested {
        first
    } else {
        PenaltyConstants {
            l_phi_lambdatheta: first.l_phi_lambdatheta,
            ..estimate_penalty_constants(problem, rho, seed)?
        }
    };
    let frb = constants.l_phi + 2.0 * hints.l_fx + hints.l_ftheta;
    let coupling = hints.l_fx + hints.l_ftheta;
    let bound = frb.max(coupling);
    if bound <= 0.0 {
        return Err(Error::MissingHints(
            "all operator Lipschitz constants are zero".into(),
        ));
    }
    let schedule = StepSchedule {
        gamma: 0.9 / bound,
        rho,
        eta: hints.mu_h / (hints.l_h * hints.l_h),
        mode: ScheduleMode::FromHints,
        constants: Some(constants),
    };
    schedule.validate()?;
    Ok(schedule)
}
