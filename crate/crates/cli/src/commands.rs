use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use mvi::alm::{self, DualNormPeaks, RunOptions, StepSchedule};
use mvi::baselines::{
    solve_baseline, BaselineKind, BaselineParams, ExtragradientParams, TikhonovParams,
    DEFAULT_DECAY, DEFAULT_EPS0,
};
use mvi::cournot::{generate, CournotConfig, CournotInstance};
use mvi::linalg::{dist, norm};
use mvi::metrics::{infeasibility, minty_gap, solve_tiny_kkt, theta_error, GapKind, GapOracleConfig};
use mvi::problem::{evaluate_kkt_residual, KktTriple, ProblemInstance};
use mvi::trace::{write_csv, IterationTrace, Tracer, TRACE_HEADER};

use crate::config::{load_instance, RunConfig, ScheduleSpec, SolverTag};
use crate::{write_atomic, CliError, BUILD_ID};

pub const SUMMARY_VERSION: &str = "mvi-summary/1";
pub const INSTANCE_FILE: &str = "instance.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARE_FILE: &str = "compare.csv";
pub const COMPARE_SUMMARY_FILE: &str = "compare_summary.json";
pub const GAP_CHECK_FILE: &str = "gap_check.json";

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary types serialize");
    s.push('\n');
    s
}

/// Draws an instance from a market config file and writes it to
/// `out/instance.json`.
pub fn cmd_generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let mut cfg: CournotConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let inst = generate(&cfg).map_err(CliError::instance)?;
    let path = out.join(INSTANCE_FILE);
    write_atomic(&path, to_json(&inst).as_bytes())?;
    Ok(path)
}

/// Step sizes actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleUsed {
    Alm(StepSchedule),
    Baseline(BaselineParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub n: usize,
    pub num_constraints: usize,
    pub seed: u64,
    pub theta_star: f64,
    pub config: CournotConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub x_last: Vec<f64>,
    pub x_ergodic: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    pub infeas_last: f64,
    pub infeas_ergodic: f64,
    pub gap_last: f64,
    pub gap_ergodic: f64,
    pub gap_kind: GapKind,
    pub gap_epsilon_last: f64,
    pub gap_epsilon_ergodic: f64,
    /// At the last iterate.
    pub kkt_residual: f64,
    pub lambda_norm: f64,
    pub theta_err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_norm_err_last: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_norm_err_ergodic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub build_id: String,
    pub solver: SolverTag,
    pub k: usize,
    pub trace_every: usize,
    pub seed: u64,
    pub instance: InstanceInfo,
    pub schedule: ScheduleUsed,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub dual_peaks: DualNormPeaks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<KktTriple>,
    pub trace_rows: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<IterationTrace>,
    pub summary: Summary,
}

fn gap_config(cfg: &RunConfig) -> GapOracleConfig {
    let mut g = GapOracleConfig {
        seed: cfg.seed,
        epsilon: cfg.gap.epsilon,
        ..GapOracleConfig::default()
    };
    if let Some(v) = cfg.gap.inner_iterations {
        g.inner_iterations = v;
    }
    if let Some(v) = cfg.gap.lower_bound_samples {
        g.lower_bound_samples = v;
    }
    g
}

/// The active-set oracle for instances small enough to enumerate.
pub fn oracle_for(inst: &CournotInstance) -> Option<KktTriple> {
    if inst.n() > 3 || inst.num_constraints() != 1 {
        return None;
    }
    match solve_tiny_kkt(inst, inst.theta_star) {
        Ok(t) => Some(t),
        Err(e) => {
            eprintln!("warning: no oracle solution: {e}");
            None
        }
    }
}

fn learning_rate(problem: &ProblemInstance) -> Result<f64, CliError> {
    let h = problem
        .hints()
        .ok_or_else(|| CliError::Config("instance carries no Lipschitz hints".into()))?;
    Ok(h.mu_h / (h.l_h * h.l_h))
}

fn baseline_params(
    cfg: &RunConfig,
    problem: &ProblemInstance,
    kind: BaselineKind,
) -> Result<BaselineParams, CliError> {
    match &cfg.schedule {
        ScheduleSpec::Auto => {
            let eta = learning_rate(problem)?;
            Ok(BaselineParams::derive(problem, kind, eta, cfg.seed)?)
        }
        ScheduleSpec::Explicit(s) => {
            let gamma = s.gamma.expect("validated");
            let eta = s.eta.expect("validated");
            let p = match kind {
                BaselineKind::Tikhonov => BaselineParams::Tikhonov(TikhonovParams {
                    gamma,
                    eta,
                    eps0: s.eps0.unwrap_or(DEFAULT_EPS0),
                    decay: s.decay.unwrap_or(DEFAULT_DECAY),
                }),
                BaselineKind::Extragradient => {
                    BaselineParams::Extragradient(ExtragradientParams { gamma, eta })
                }
            };
            p.validate().map_err(|e| CliError::Config(format!("schedule: {e}")))?;
            Ok(p)
        }
    }
}

/// Runs one configured solver on an already resolved instance.
pub fn run(cfg: &RunConfig, inst: &CournotInstance) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let problem = inst.problem()?;
    let n = problem.n();
    let oracle = oracle_for(inst);
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![0.0; n]);
    let theta0 = cfg.theta0.clone().unwrap_or_else(|| vec![0.0]);
    let opts = RunOptions {
        iterations: cfg.k,
        trace_every: cfg.trace_every(),
    };
    let theta_star = vec![inst.theta_star];
    let gap = gap_config(cfg);
    let tracer = Tracer::new(
        theta_star.clone(),
        oracle.as_ref().map(|t| t.x_star.clone()),
        gap.clone(),
    )
    .with_timing(cfg.timing);

    let started = Instant::now();
    let (schedule, trace, x_last, x_ergodic, lambda, theta, dual_peaks) = match cfg.solver {
        SolverTag::Alm => {
            let schedule = match &cfg.schedule {
                ScheduleSpec::Auto => alm::derive_schedule(&problem, cfg.rho, cfg.seed)?,
                ScheduleSpec::Explicit(s) => StepSchedule::user_supplied(
                    s.gamma.expect("validated"),
                    s.rho.expect("validated"),
                    s.eta.expect("validated"),
                )
                .map_err(|e| CliError::Config(format!("schedule: {e}")))?,
            };
            let sol = alm::solve(&problem, &schedule, &x0, &theta0, &opts, Some(&tracer))
                ?;
            let avg = sol.state.ergodic_average();
            (
                ScheduleUsed::Alm(schedule),
                sol.trace,
                sol.state.x,
                avg,
                sol.state.lambda,
                sol.state.theta,
                sol.dual_peaks,
            )
        }
        SolverTag::Tikhonov | SolverTag::Eg => {
            let kind = if cfg.solver == SolverTag::Eg {
                BaselineKind::Extragradient
            } else {
                BaselineKind::Tikhonov
            };
            let params = baseline_params(cfg, &problem, kind)?;
            let sol = solve_baseline(&problem, &params, &x0, &theta0, &opts, Some(&tracer))
                ?;
            let avg = sol.state.ergodic_average();
            (
                ScheduleUsed::Baseline(params),
                sol.trace,
                sol.state.x().to_vec(),
                avg,
                sol.state.lambda().to_vec(),
                sol.state.theta.clone(),
                sol.dual_peaks,
            )
        }
    };
    let elapsed = started.elapsed().as_secs_f64();

    let gap_last = minty_gap(&problem, &x_last, &theta_star, &gap)?;
    let gap_ergodic = minty_gap(&problem, &x_ergodic, &theta_star, &gap)?;
    let final_metrics = FinalMetrics {
        infeas_last: infeasibility(&problem, &x_last, &theta_star)?,
        infeas_ergodic: infeasibility(&problem, &x_ergodic, &theta_star)?,
        gap_last: gap_last.value,
        gap_ergodic: gap_ergodic.value,
        gap_kind: gap_last.kind,
        gap_epsilon_last: gap_last.epsilon,
        gap_epsilon_ergodic: gap_ergodic.epsilon,
        kkt_residual: evaluate_kkt_residual(&problem, &x_last, &theta, &lambda)?,
        lambda_norm: norm(&lambda),
        theta_err: theta_error(&theta, &theta_star)?,
        x_norm_err_last: oracle.as_ref().map(|t| dist(&x_last, &t.x_star)),
        x_norm_err_ergodic: oracle.as_ref().map(|t| dist(&x_ergodic, &t.x_star)),
        x_last,
        x_ergodic,
        lambda,
        theta,
    };
    let summary = Summary {
        version: SUMMARY_VERSION.into(),
        build_id: BUILD_ID.into(),
        solver: cfg.solver,
        k: cfg.k,
        trace_every: opts.trace_every,
        seed: cfg.seed,
        instance: InstanceInfo {
            n,
            num_constraints: inst.num_constraints(),
            seed: inst.config.seed,
            theta_star: inst.theta_star,
            config: inst.config.clone(),
        },
        schedule,
        final_metrics,
        dual_peaks,
        oracle,
        trace_rows: trace.len(),
        elapsed_secs: elapsed,
    };
    Ok(RunOutput { trace, summary })
}

/// Runs one solver and writes `trace.csv` and `summary.json` under the
/// output directory. A diverged run still flushes its partial trace.
pub fn cmd_solve(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let inst = cfg.resolve_instance()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    match run(cfg, &inst) {
        Ok(out) => {
            write_atomic(&cfg.output_dir.join(TRACE_FILE), write_csv(&out.trace).as_bytes())?;
            write_atomic(&cfg.output_dir.join(SUMMARY_FILE), to_json(&out.summary).as_bytes())?;
            Ok(out)
        }
        Err(CliError::Divergence {
            iteration,
            reason,
            partial_trace,
        }) => {
            write_atomic(&cfg.output_dir.join(TRACE_FILE), write_csv(&partial_trace).as_bytes())?;
            Err(CliError::Divergence {
                iteration,
                reason,
                partial_trace,
            })
        }
        Err(e) => Err(e),
    }
}

/// Header of the comparison CSV: a solver column before the trace columns.
pub fn compare_header() -> String {
    format!("solver,{TRACE_HEADER}")
}

pub fn write_compare_csv(runs: &[(SolverTag, &[IterationTrace])]) -> String {
    let mut out = compare_header();
    out.push('\n');
    for (tag, rows) in runs {
        for row in rows.iter() {
            out.push_str(tag.as_str());
            out.push(',');
            out.push_str(&row.to_csv_row());
            out.push('\n');
        }
    }
    out
}

/// Runs several solvers on one shared instance, concurrently, and writes
/// `compare.csv` plus `compare_summary.json`.
pub fn cmd_compare(configs: &[RunConfig], out_dir: &Path) -> Result<Vec<RunOutput>, CliError> {
    if configs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two run configs".into(),
        ));
    }
    for (i, c) in configs.iter().enumerate() {
        if configs[..i].iter().any(|p| p.solver == c.solver) {
            return Err(CliError::Config(format!(
                "solver {} appears more than once",
                c.solver.as_str()
            )));
        }
    }
    let instances = configs
        .iter()
        .map(|c| c.resolve_instance())
        .collect::<Result<Vec<_>, _>>()?;
    let first = &configs[0];
    for (c, inst) in configs.iter().zip(&instances).skip(1) {
        if *inst != instances[0] {
            return Err(CliError::Config(format!(
                "instance of solver {} differs from that of solver {}",
                c.solver.as_str(),
                first.solver.as_str()
            )));
        }
        if c.k != first.k || c.trace_every() != first.trace_every() {
            return Err(CliError::Config(format!(
                "k and trace_every of solver {} differ from those of solver {}",
                c.solver.as_str(),
                first.solver.as_str()
            )));
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let results: Vec<Result<RunOutput, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .zip(&instances)
            .map(|(c, inst)| scope.spawn(move || run(c, inst)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });

    let mut outputs = Vec::with_capacity(results.len());
    let mut failure = None;
    let mut partial: Vec<(SolverTag, Vec<IterationTrace>)> = Vec::new();
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(o) => {
                partial.push((c.solver, o.trace.clone()));
                outputs.push(o);
            }
            Err(CliError::Divergence {
                iteration,
                reason,
                partial_trace,
            }) => {
                partial.push((c.solver, partial_trace));
                failure.get_or_insert(CliError::Divergence {
                    iteration,
                    reason: format!("{}: {reason}", c.solver.as_str()),
                    partial_trace: Vec::new(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let views: Vec<(SolverTag, &[IterationTrace])> =
        partial.iter().map(|(t, r)| (*t, r.as_slice())).collect();
    write_atomic(&out_dir.join(COMPARE_FILE), write_compare_csv(&views).as_bytes())?;
    if let Some(e) = failure {
        return Err(e);
    }
    let summaries: Vec<&Summary> = outputs.iter().map(|o| &o.summary).collect();
    write_atomic(&out_dir.join(COMPARE_SUMMARY_FILE), to_json(&summaries).as_bytes())?;
    Ok(outputs)
}

/// Input of `gap-check`: a point to score on an instance.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapCheckConfig {
    /// Inline market config or instance file path.
    pub instance: serde_json::Value,
    pub x: Vec<f64>,
    /// Enlargement of the relaxed gap; defaults to the point's infeasibility.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCheckReport {
    pub build_id: String,
    pub x: Vec<f64>,
    pub theta_star: f64,
    pub infeasibility: f64,
    pub gap: f64,
    pub gap_certificate: Vec<f64>,
    pub relaxed_gap: f64,
    pub relaxed_epsilon: f64,
    pub relaxed_certificate: Vec<f64>,
    pub kind: GapKind,
    /// Standard gap at the oracle solution, for instances small enough to
    /// have one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<KktTriple>,
}

pub fn cmd_gap_check(
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<GapCheckReport, CliError> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let gc: GapCheckConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let inst = match &gc.instance {
        serde_json::Value::String(p) => {
            let p = PathBuf::from(p);
            let base = config.parent().unwrap_or(Path::new("."));
            load_instance(&if p.is_absolute() { p } else { base.join(p) })?
        }
        v => {
            let cfg: CournotConfig = serde_json::from_value(v.clone())
                .map_err(|e| CliError::Config(format!("instance: {e}")))?;
            generate(&cfg).map_err(CliError::instance)?
        }
    };
    let problem = inst.problem()?;
    if gc.x.len() != problem.n() {
        return Err(CliError::Config(format!(
            "x: expected {} entries, got {}",
            problem.n(),
            gc.x.len()
        )));
    }
    let theta_star = [inst.theta_star];
    let seed = seed.unwrap_or(gc.seed);
    let standard = GapOracleConfig {
        seed,
        ..GapOracleConfig::standard()
    };
    let relaxed = GapOracleConfig {
        seed,
        epsilon: gc.epsilon,
        ..GapOracleConfig::default()
    };
    let g0 = minty_gap(&problem, &gc.x, &theta_star, &standard)?;
    let g1 = minty_gap(&problem, &gc.x, &theta_star, &relaxed)?;
    let oracle = oracle_for(&inst);
    let oracle_gap = match &oracle {
        Some(t) => Some(minty_gap(&problem, &t.x_star, &theta_star, &standard)?.value),
        None => None,
    };
    let report = GapCheckReport {
        build_id: BUILD_ID.into(),
        infeasibility: infeasibility(&problem, &gc.x, &theta_star)?,
        x: gc.x,
        theta_star: inst.theta_star,
        gap: g0.value,
        gap_certificate: g0.certificate,
        relaxed_gap: g1.value,
        relaxed_epsilon: g1.epsilon,
        relaxed_certificate: g1.certificate,
        kind: g0.kind,
        oracle_gap,
        oracle,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(GAP_CHECK_FILE), to_json(&report).as_bytes())?;
    }
    Ok(report)
}
