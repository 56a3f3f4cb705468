//! Reference solvers on the Lagrangian VI in `z = (x, lambda)`:
//!
//! ```text
//! G(z, theta) = ( F(x, theta) + grad f(x, theta)^T lambda ,  -f(x, theta) )
//! ```
//!
//! over `X x R_+^J`. Both update `theta` with the same projected step as the
//! main solver and start the multipliers at zero.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::alm::{param_step, DualNormPeaks, RunOptions, ESTIMATE_SAMPLES, LAMBDA_CAP, SAFETY_FACTOR};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite, dist, norm};
use crate::problem::{check_nonnegative, ProblemInstance};
use crate::rng::{stream, Stream};
use crate::trace::{IterationTrace, Snapshot, Tracer};

/// The lifted operator `G` for one problem.
#[derive(Debug, Clone, Copy)]
pub struct LagrangianViOperator<'a> {
    problem: &'a ProblemInstance,
}

impl<'a> LagrangianViOperator<'a> {
    pub fn new(problem: &'a ProblemInstance) -> Self {
        Self { problem }
    }

    pub fn problem(&self) -> &ProblemInstance {
        self.problem
    }

    /// Length of `z`.
    pub fn dim(&self) -> usize {
        self.problem.n() + self.problem.num_constraints()
    }

    pub fn split<'z>(&self, z: &'z [f64]) -> (&'z [f64], &'z [f64]) {
        z.split_at(self.problem.n())
    }

    pub fn eval(&self, z: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("z", self.dim(), z.len())?;
        let (x, lambda) = self.split(z);
        let mut out = self.problem.operator(x, theta)?;
        let j = self.problem.num_constraints();
        if j > 0 {
            let jac = self.problem.jacobian(x, theta)?;
            for (i, o) in out.iter_mut().enumerate() {
                for (r, l) in lambda.iter().enumerate() {
                    *o += jac[(r, i)] * l;
                }
            }
            out.extend(self.problem.constraints(x, theta)?.iter().map(|v| -v));
        }
        Ok(out)
    }

    /// Projection onto `X x R_+^J`.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("z", self.dim(), z.len())?;
        let (x, lambda) = self.split(z);
        let mut out = self.problem.primal_set().project(x)?;
        out.extend(lambda.iter().map(|l| l.max(0.0)));
        Ok(out)
    }

    /// `2 x` the largest difference quotient `||G(z) - G(z')|| / ||z - z'||`
    /// over sampled pairs with a shared `theta`.
    pub fn estimate_lipschitz(&self, seed: u64) -> Result<f64> {
        let mut rng = stream(seed, Stream::LipschitzEstimate);
        let j = self.problem.num_constraints();
        let mut best = 0.0f64;
        for _ in 0..ESTIMATE_SAMPLES {
            let theta = self.problem.param_set().sample(&mut rng, LAMBDA_CAP);
            let mut a = self.problem.primal_set().sample(&mut rng, LAMBDA_CAP);
            a.extend((0..j).map(|_| rng.random_range(0.0..=LAMBDA_CAP)));
            let mut b = self.problem.primal_set().sample(&mut rng, LAMBDA_CAP);
            b.extend((0..j).map(|_| rng.random_range(0.0..=LAMBDA_CAP)));
            if rng.random_bool(0.5) {
                let s = rng.random_range(1e-3..1.0);
                for (bi, ai) in b.iter_mut().zip(&a) {
                    *bi = ai + s * (*bi - ai);
                }
            }
            let d = dist(&a, &b);
            if d > 0.0 {
                let ga = self.eval(&a, &theta)?;
                let gb = self.eval(&b, &theta)?;
                best = best.max(dist(&ga, &gb) / d);
            }
        }
        Ok(SAFETY_FACTOR * best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Tikhonov,
    Extragradient,
}

/// Tikhonov regularisation `eps_k = eps0 / (k + 1)^decay`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TikhonovParams {
    pub gamma: f64,
    pub eps0: f64,
    pub decay: f64,
    pub eta: f64,
}

impl TikhonovParams {
    pub fn epsilon(&self, k: usize) -> f64 {
        self.eps0 / ((k + 1) as f64).powf(self.decay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtragradientParams {
    pub gamma: f64,
    pub eta: f64,
}

pub const DEFAULT_EPS0: f64 = 1.0;
pub const DEFAULT_DECAY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub k: usize,
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    /// Sum of the primal parts of `z_1..z_k`.
    pub x_ergodic_sum: Vec<f64>,
}

impl BaselineState {
    pub fn initial(op: &LagrangianViOperator<'_>, x0: &[f64], theta0: &[f64]) -> Result<Self> {
        let p = op.problem();
        let mut z = p.primal_set().project(x0)?;
        z.extend(std::iter::repeat_n(0.0, p.num_constraints()));
        Ok(Self {
            k: 0,
            x_ergodic_sum: vec![0.0; p.n()],
            z,
            theta: p.param_set().project(theta0)?,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.z[..self.x_ergodic_sum.len()]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.z[self.x_ergodic_sum.len()..]
    }

    pub fn ergodic_average(&self) -> Vec<f64> {
        if self.k == 0 {
            return self.x().to_vec();
        }
        let k = self.k as f64;
        self.x_ergodic_sum.iter().map(|v| v / k).collect()
    }

    fn advance(&self, op: &LagrangianViOperator<'_>, z: Vec<f64>, eta: f64) -> Result<Self> {
        if !all_finite(&z) {
            return Err(Error::Divergence {
                iteration: self.k,
                reason: "non-finite baseline iterate".into(),
                partial_trace: Vec::new(),
            });
        }
        let theta = param_step(op.problem(), &self.theta, eta)?;
        let mut sum = self.x_ergodic_sum.clone();
        for (acc, v) in sum.iter_mut().zip(&z) {
            *acc += v;
        }
        Ok(Self {
            k: self.k + 1,
            z,
            theta,
            x_ergodic_sum: sum,
        })
    }
}

fn check_state(op: &LagrangianViOperator<'_>, s: &BaselineState) -> Result<()> {
    check_dim("z", op.dim(), s.z.len())?;
    check_nonnegative(s.lambda())
}

/// `z+ = P[z - gamma (G(z, theta) + eps_k z)]`.
pub fn tikhonov_step(
    op: &LagrangianViOperator<'_>,
    s: &BaselineState,
    params: &TikhonovParams,
) -> Result<BaselineState> {
    check_state(op, s)?;
    let g = op.eval(&s.z, &s.theta)?;
    let eps = params.epsilon(s.k);
    let trial: Vec<f64> = s
        .z
        .iter()
        .zip(&g)
        .map(|(z, g)| z - params.gamma * (g + eps * z))
        .collect();
    let z = op.project(&trial)?;
    s.advance(op, z, params.eta)
}

/// Korpelevich extragradient: a half step to `w`, then a full step from `z`
/// using `G(w)`.
pub fn extragradient_step(
    op: &LagrangianViOperator<'_>,
    s: &BaselineState,
    params: &ExtragradientParams,
) -> Result<BaselineState> {
    check_state(op, s)?;
    let g = op.eval(&s.z, &s.theta)?;
    let half: Vec<f64> = s.z.iter().zip(&g).map(|(z, g)| z - params.gamma * g).collect();
    let w = op.project(&half)?;
    let gw = op.eval(&w, &s.theta)?;
    let full: Vec<f64> = s.z.iter().zip(&gw).map(|(z, g)| z - params.gamma * g).collect();
    let z = op.project(&full)?;
    s.advance(op, z, params.eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineParams {
    Tikhonov(TikhonovParams),
    Extragradient(ExtragradientParams),
}

impl BaselineParams {
    /// Step `0.9 / L_G` from the sampled lifted Lipschitz constant, the given
    /// learning rate, and the default Tikhonov schedule.
    pub fn derive(problem: &ProblemInstance, kind: BaselineKind, eta: f64, seed: u64) -> Result<Self> {
        let l = LagrangianViOperator::new(problem).estimate_lipschitz(seed)?;
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lifted operator Lipschitz estimate is {l}"
            )));
        }
        let gamma = 0.9 / l;
        Ok(match kind {
            BaselineKind::Tikhonov => Self::Tikhonov(TikhonovParams {
                gamma,
                eps0: DEFAULT_EPS0,
                decay: DEFAULT_DECAY,
                eta,
            }),
            BaselineKind::Extragradient => Self::Extragradient(ExtragradientParams { gamma, eta }),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        match self {
            Self::Tikhonov(_) => BaselineKind::Tikhonov,
            Self::Extragradient(_) => BaselineKind::Extragradient,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Self::Tikhonov(p) => p.gamma,
            Self::Extragradient(p) => p.gamma,
        }
    }

    pub fn eta(&self) -> f64 {
        match self {
            Self::Tikhonov(p) => p.eta,
            Self::Extragradient(p) => p.eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut checks = vec![("gamma", self.gamma()), ("eta", self.eta())];
        if let Self::Tikhonov(p) = self {
            checks.push(("eps0", p.eps0));
            if !(p.decay >= 0.0 && p.decay.is_finite()) {
                return Err(Error::InvalidParameter(format!("decay must be >= 0, got {}", p.decay)));
            }
        }
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn step(&self, op: &LagrangianViOperator<'_>, s: &BaselineState) -> Result<BaselineState> {
        match self {
            Self::Tikhonov(p) => tikhonov_step(op, s, p),
            Self::Extragradient(p) => extragradient_step(op, s, p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineSolution {
    pub state: BaselineState,
    pub trace: Vec<IterationTrace>,
    pub dual_peaks: DualNormPeaks,
}

pub fn solve_baseline(
    problem: &ProblemInstance,
    params: &BaselineParams,
    x0: &[f64],
    theta0: &[f64],
    opts: &RunOptions,
    tracer: Option<&Tracer>,
) -> Result<BaselineSolution> {
    opts.validate()?;
    params.validate()?;
    let op = LagrangianViOperator::new(problem);
    let mut state = BaselineState::initial(&op, x0, theta0)?;
    let mut trace = Vec::new();
    let mut peaks = DualNormPeaks::default();
    for step in 1..=opts.iterations {
        state = match params.step(&op, &state) {
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
        peaks.record(step, opts.iterations, norm(state.lambda()));
        if let Some(tr) = tracer {
            if step % opts.trace_every == 0 {
                let avg = state.ergodic_average();
                trace.push(tr.row(
                    problem,
                    &Snapshot {
                        k: step,
                        x: state.x(),
                        x_ergodic: &avg,
                        lambda: state.lambda(),
                        theta: &state.theta,
                    },
                )?);
            }
        }
    }
    Ok(BaselineSolution {
        state,
        trace,
        dual_peaks: peaks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::ConvexSet;
    use nalgebra::DMatrix;

    fn capped_line() -> ProblemInstance {
        // F(x) = x - 3 on [0, 10] with x <= 1: solution x = 1, lambda = 2.
        ProblemInstance::builder(
            ConvexSet::boxed(vec![0.0], vec![10.0]).unwrap(),
            ConvexSet::boxed(vec![0.0], vec![1.0]).unwrap(),
            |x: &[f64], _: &[f64]| vec![x[0] - 3.0],
            |t: &[f64]| t.to_vec(),
        )
        .constraints(
            1,
            |x: &[f64], _: &[f64]| vec![x[0] - 1.0],
            |_: &[f64], _: &[f64]| DMatrix::from_element(1, 1, 1.0),
        )
        .build()
        .unwrap()
    }

    #[test]
    fn lifted_operator_values() {
        let p = capped_line();
        let op = LagrangianViOperator::new(&p);
        assert_eq!(op.eval(&[2.0, 0.5], &[0.0]).unwrap(), vec![-0.5, -1.0]);
        assert_eq!(op.project(&[-1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn extragradient_finds_kkt_point() {
        let p = capped_line();
        let params = BaselineParams::Extragradient(ExtragradientParams { gamma: 0.3, eta: 0.5 });
        let sol = solve_baseline(&p, &params, &[0.0], &[0.5], &RunOptions::new(2000), None).unwrap();
        assert!((sol.state.x()[0] - 1.0).abs() < 1e-8, "{:?}", sol.state);
        assert!((sol.state.lambda()[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn tikhonov_epsilon_schedule() {
        let p = TikhonovParams {
            gamma: 0.1,
            eps0: 1.0,
            decay: 0.5,
            eta: 1.0,
        };
        assert_eq!(p.epsilon(0), 1.0);
        assert_eq!(p.epsilon(3), 0.5);
    }

    #[test]
    fn tikhonov_drifts_toward_solution() {
        let p = capped_line();
        let params = BaselineParams::Tikhonov(TikhonovParams {
            gamma: 0.2,
            eps0: 1.0,
            decay: 0.5,
            eta: 0.5,
        });
        let sol = solve_baseline(&p, &params, &[0.0], &[0.5], &RunOptions::new(20000), None).unwrap();
        assert!((sol.state.x()[0] - 1.0).abs() < 0.1, "{:?}", sol.state);
    }
}
