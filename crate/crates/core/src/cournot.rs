//! Nash-Cournot market with a price-cap constraint and an unknown demand
//! slope learned by least squares.
//!
//! Firm `i` produces `x_i` in `[0, cap_i]` at cost `r_i x_i^2 / 2 + g_i x_i`
//! and the inverse demand is `p(X; b) = a - b X` with `X = sum_i x_i`. The
//! equilibrium operator is the stacked negative marginal profit
//!
//! ```text
//! F_i(x, b) = r_i x_i + g_i + b (X + x_i) - a
//! ```
//!
//! and the price cap `p(X; b) <= delta` becomes `f(x, b) = a - b X - delta`.
//! The slope `b` solves the least-squares problem over observations
//! `(X_t, p_t)`, whose gradient `H(b) = sum_t X_t (b X_t - (a - p_t))` is the
//! secondary operator.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{LipschitzHints, ProblemInstance};
use crate::rng::{stream, Stream};
use crate::sets::ConvexSet;

pub const INSTANCE_VERSION: &str = "mvi-instance/1";

/// Spacing between staggered price-cap tiers, as a fraction of `a_star`.
pub const TIER_SPACING: f64 = 0.004;

fn default_a_star() -> f64 {
    100.0
}
fn default_observations() -> usize {
    300
}
fn default_x_t_range() -> [f64; 2] {
    [2.0, 20.0]
}
fn default_tiers() -> usize {
    1
}

/// Generator settings. Unset coefficient vectors are drawn from the seeded
/// stream: `r ~ U[1, 10]`, `g ~ U[5, 20]`, capacities default to 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CournotConfig {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<f64>>,
    #[serde(default = "default_a_star")]
    pub a_star: f64,
    pub b_true: f64,
    /// Price cap; defaults to `0.95 a_star`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "default_observations")]
    pub t: usize,
    #[serde(default = "default_x_t_range")]
    pub x_t_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    /// Upper end of `Theta = [0, theta_max]`; defaults to `10 b_true`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
    /// Standard deviation of Gaussian price noise; zero reproduces the
    /// noiseless generative model.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Number of staggered price-cap constraints.
    #[serde(default = "default_tiers")]
    pub tiers: usize,
}

impl CournotConfig {
    pub fn new(n: usize, b_true: f64, seed: u64) -> Self {
        Self {
            n,
            cap: None,
            r: None,
            g: None,
            a_star: default_a_star(),
            b_true,
            delta: None,
            t: default_observations(),
            x_t_range: default_x_t_range(),
            seed,
            theta_max: None,
            noise_sigma: 0.0,
            tiers: default_tiers(),
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(0.95 * self.a_star)
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max.unwrap_or(10.0 * self.b_true)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 {
            return bad("n: at least one firm is required".into());
        }
        for (name, v) in [("cap", &self.cap), ("r", &self.r), ("g", &self.g)] {
            if let Some(v) = v {
                if v.len() != self.n {
                    return bad(format!("{name}: expected {} entries, got {}", self.n, v.len()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return bad(format!("{name}: entries must be finite"));
                }
            }
        }
        if let Some(cap) = &self.cap {
            if cap.iter().any(|c| *c <= 0.0) {
                return bad("cap: capacities must be positive".into());
            }
        }
        if let Some(r) = &self.r {
            if r.iter().any(|c| *c < 0.0) {
                return bad("r: cost curvatures must be nonnegative".into());
            }
        }
        if !(self.b_true > 0.0 && self.b_true.is_finite()) {
            return bad(format!("b_true: must be positive, got {}", self.b_true));
        }
        if !(self.a_star > 0.0 && self.a_star.is_finite()) {
            return bad(format!("a_star: must be positive, got {}", self.a_star));
        }
        if self.t == 0 {
            return bad("t: at least one observation is required".into());
        }
        let [lo, hi] = self.x_t_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("x_t_range: need 0 < lo <= hi, got [{lo}, {hi}]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma: must be nonnegative".into());
        }
        if self.tiers == 0 {
            return bad("tiers: at least one price-cap constraint is required".into());
        }
        let top = self.delta() + TIER_SPACING * (self.tiers - 1) as f64 * self.a_star;
        if !(top < self.a_star) {
            return bad(format!(
                "delta: every price cap must be below a_star ({} >= {})",
                top, self.a_star
            ));
        }
        if !(self.theta_max() >= self.b_true) {
            return bad("theta_max: must be at least b_true".into());
        }
        Ok(())
    }
}

/// Observed (quantity, price) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub quantity: Vec<f64>,
    pub price: Vec<f64>,
}

/// A fully drawn market: every coefficient needed to rebuild the problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CournotInstance {
    pub version: String,
    pub config: CournotConfig,
    pub cap: Vec<f64>,
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub a_star: f64,
    pub deltas: Vec<f64>,
    pub theta_max: f64,
    pub theta_star: f64,
    pub observations: Observations,
    pub hints: LipschitzHints,
}

/// Draws a market from `cfg`.
pub fn generate(cfg: &CournotConfig) -> Result<CournotInstance> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = stream(cfg.seed, Stream::Instance);
    let r_draw: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..=10.0)).collect();
    let g_draw: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..=20.0)).collect();
    let [lo, hi] = cfg.x_t_range;
    let quantity: Vec<f64> = (0..cfg.t).map(|_| rng.random_range(lo..=hi)).collect();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(format!("noise_sigma: {e}")))?;
    let price: Vec<f64> = quantity
        .iter()
        .map(|q| {
            let clean = cfg.a_star - cfg.b_true * q;
            if cfg.noise_sigma > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            }
        })
        .collect();

    let cap = cfg.cap.clone().unwrap_or_else(|| vec![5.0; n]);
    let r = cfg.r.clone().unwrap_or(r_draw);
    let g = cfg.g.clone().unwrap_or(g_draw);
    let deltas: Vec<f64> = (0..cfg.tiers)
        .map(|d| cfg.delta() + TIER_SPACING * d as f64 * cfg.a_star)
        .collect();
    let theta_max = cfg.theta_max();

    let (s1, s2) = moments(&quantity, &price, cfg.a_star);
    let theta_star = (s1 / s2).clamp(0.0, theta_max);

    let cap_sum: f64 = cap.iter().sum();
    let r_max = r.iter().cloned().fold(0.0, f64::max);
    // every tier has the same gradient, so the stack scales by sqrt(J)
    let stack = (cfg.tiers as f64).sqrt();
    let hints = LipschitzHints {
        l_fx: r_max + theta_max * (n as f64 + 1.0),
        l_ftheta: cap.iter().map(|c| (cap_sum + c).powi(2)).sum::<f64>().sqrt(),
        l_cx: stack * theta_max * (n as f64).sqrt(),
        l_ctheta: stack * cap_sum,
        mu_h: s2,
        l_h: s2,
    };

    Ok(CournotInstance {
        version: INSTANCE_VERSION.to_string(),
        config: cfg.clone(),
        cap,
        r,
        g,
        a_star: cfg.a_star,
        deltas,
        theta_max,
        theta_star,
        observations: Observations { quantity, price },
        hints,
    })
}

/// `(sum X_t (a - p_t), sum X_t^2)`.
fn moments(quantity: &[f64], price: &[f64], a_star: f64) -> (f64, f64) {
    let s1 = quantity
        .iter()
        .zip(price)
        .map(|(q, p)| q * (a_star - p))
        .sum();
    let s2 = quantity.iter().map(|q| q * q).sum();
    (s1, s2)
}

impl CournotInstance {
    pub fn n(&self) -> usize {
        self.cap.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.deltas.len()
    }

    /// Consistency checks for an instance read back from disk.
    pub fn check_loaded(&self) -> Result<()> {
        let inst = self;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if inst.version != INSTANCE_VERSION {
            return bad(format!(
                "version: expected \"{INSTANCE_VERSION}\", got \"{}\"",
                inst.version
            ));
        }
        let n = inst.cap.len();
        if inst.r.len() != n || inst.g.len() != n || inst.config.n != n {
            return bad("cap, r, g: lengths disagree with n".into());
        }
        if inst.deltas.is_empty() {
            return bad("deltas: at least one price cap is required".into());
        }
        if inst.observations.quantity.len() != inst.observations.price.len() {
            return bad("observations: quantity and price lengths differ".into());
        }
        if !(inst.theta_star >= 0.0 && inst.theta_star <= inst.theta_max) {
            return bad("theta_star: must lie in [0, theta_max]".into());
        }
        inst.hints.validate()
    }

    /// Secondary operator `H(b) = b sum X_t^2 - sum X_t (a - p_t)`.
    pub fn secondary(&self, b: f64) -> f64 {
        let (s1, s2) = moments(
            &self.observations.quantity,
            &self.observations.price,
            self.a_star,
        );
        b * s2 - s1
    }

    pub fn sum_sq_quantity(&self) -> f64 {
        self.observations.quantity.iter().map(|q| q * q).sum()
    }

    /// Equilibrium operator at `(x, b)`.
    pub fn operator(&self, x: &[f64], b: f64) -> Vec<f64> {
        cournot_operator(&self.r, &self.g, self.a_star, x, b)
    }

    pub fn constraints(&self, x: &[f64], b: f64) -> Vec<f64> {
        let total: f64 = x.iter().sum();
        self.deltas
            .iter()
            .map(|d| self.a_star - b * total - d)
            .collect()
    }

    /// The coupled problem with analytic Jacobian and hints.
    pub fn problem(&self) -> Result<ProblemInstance> {
        let n = self.n();
        let primal = ConvexSet::boxed(vec![0.0; n], self.cap.clone())?;
        let param = ConvexSet::boxed(vec![0.0], vec![self.theta_max])?;
        let r = Arc::new(self.r.clone());
        let g = Arc::new(self.g.clone());
        let a = self.a_star;
        let deltas = Arc::new(self.deltas.clone());
        let tiers = deltas.len();
        let (s1, s2) = moments(
            &self.observations.quantity,
            &self.observations.price,
            self.a_star,
        );
        ProblemInstance::builder(
            primal,
            param,
            move |x: &[f64], t: &[f64]| cournot_operator(&r, &g, a, x, t[0]),
            move |t: &[f64]| vec![t[0] * s2 - s1],
        )
        .constraints(
            tiers,
            move |x: &[f64], t: &[f64]| {
                let total: f64 = x.iter().sum();
                deltas.iter().map(|d| a - t[0] * total - d).collect()
            },
            move |_: &[f64], t: &[f64]| DMatrix::from_element(tiers, n, -t[0]),
        )
        .hints(self.hints)
        .affine_in_x(true)
        .build()
    }
}

fn cournot_operator(r: &[f64], g: &[f64], a: f64, x: &[f64], b: f64) -> Vec<f64> {
    let total: f64 = x.iter().sum();
    x.iter()
        .zip(r.iter().zip(g))
        .map(|(xi, (ri, gi))| ri * xi + gi + b * (total + xi) - a)
        .collect()
}

/// How the second label of an `(N, D)` pair is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierInterpretation {
    /// `D` staggered price caps `delta_d = delta + 0.004 d a_star`.
    #[default]
    Tiers,
    /// A single price cap; `D` is dropped with a warning.
    Ignore,
}

/// One config per `(N, D)` label, derived from `template` with seeds
/// `template.seed + index`.
pub fn instance_family(
    labels: &[(usize, usize)],
    template: &CournotConfig,
    interpretation: TierInterpretation,
) -> Result<Vec<CournotConfig>> {
    if labels.is_empty() {
        return Err(Error::InvalidParameter(
            "instance family needs at least one (N, D) label".into(),
        ));
    }
    labels
        .iter()
        .enumerate()
        .map(|(index, &(n, d))| {
            let mut cfg = template.clone();
            cfg.n = n;
            cfg.cap = None;
            cfg.r = None;
            cfg.g = None;
            cfg.seed = template.seed.wrapping_add(index as u64);
            cfg.tiers = match interpretation {
                TierInterpretation::Tiers => d,
                TierInterpretation::Ignore => {
                    log::warn!("ignoring D = {d} for N = {n}: using a single price cap");
                    1
                }
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}
