//! Solvers for variational inequalities whose operator and constraints depend
//! on a parameter that is learned alongside the solution.
//!
//! ```
//! use mvi::cournot::{generate, CournotConfig};
//! use mvi::alm::{derive_schedule, solve, RunOptions};
//!
//! let inst = generate(&CournotConfig::new(2, 1.0, 7)).unwrap();
//! let problem = inst.problem().unwrap();
//! let schedule = derive_schedule(&problem, 1.0, 7).unwrap();
//! let sol = solve(&problem, &schedule, &[0.0, 0.0], &[0.0], &RunOptions::new(200), None).unwrap();
//! assert_eq!(sol.state.k, 200);
//! ```

// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alm;
pub mod auglag;
pub mod baselines;
pub mod cournot;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod problem;
pub mod rng;
pub mod sets;
pub mod trace;

pub use alm::{alm_step, derive_schedule, solve, RunOptions, SolverState, StepSchedule};
pub use error::{Error, Result};
pub use problem::{LipschitzHints, ProblemInstance};
pub use sets::ConvexSet;

// The guide's code listings run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/penalty.md")]
    mod penalty {}
    #[doc = include_str!("../../../book/src/alm.md")]
    mod alm {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cournot.md")]
    mod cournot {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
