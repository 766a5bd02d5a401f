//! Running methods over streams and sweeping benchmark grids.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{sample_metrics, MetricsSummary, DEFAULT_TRANSIENT_DISCARD};
use super::trajectory::{generate_stream, TrajectorySpec};
use super::HarnessError;
use crate::dynamical::{self, GainConfig, SolverState, TargetSample, DEFAULT_B_NU, DEFAULT_GAIN, DEFAULT_LIMIT_GAIN};
use crate::instantaneous::{self, decompose_pairwise, InstantaneousConfig, LmStatus};
use crate::kinematics::{generate_human_chain, load_model_file, Configuration, HumanDofs, KinematicModel, Velocity};
use crate::qp::{QpSolver, DEFAULT_DAMPING};
use crate::so3::BaumgarteConfig;

/// Environment variable capping the number of benchmark worker threads.
pub const THREADS_ENV: &str = "IKTRACK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dynamical,
    #[serde(alias = "whole_body")]
    WholeBody,
    Pairwise,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dynamical, Method::WholeBody, Method::Pairwise];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dynamical => "dynamical",
            Method::WholeBody => "whole-body",
            Method::Pairwise => "pairwise",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dynamical" => Ok(Method::Dynamical),
            "whole-body" | "whole_body" => Ok(Method::WholeBody),
            "pairwise" => Ok(Method::Pairwise),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// Solver settings for every method. The sample period comes from the
/// stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Feedback gain `K` (1/s), applied to every residual row.
    pub gain: f64,
    /// Limit-shaping gain `K_g` (1/rad).
    pub gain_limit: f64,
    /// Baumgarte gain `ρ` (1/s).
    pub rho: f64,
    pub damping: f64,
    pub b_nu_default: f64,
    pub transient_discard: f64,
    pub instantaneous: InstantaneousConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gain: DEFAULT_GAIN,
            gain_limit: DEFAULT_LIMIT_GAIN,
            rho: BaumgarteConfig::DEFAULT_RHO,
            damping: DEFAULT_DAMPING,
            b_nu_default: DEFAULT_B_NU,
            transient_discard: DEFAULT_TRANSIENT_DISCARD,
            instantaneous: InstantaneousConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn gains(&self, model: &KinematicModel, dt: f64) -> Result<GainConfig, HarnessError> {
        let g = GainConfig::uniform(model, self.gain, self.gain_limit, dt)?;
        Ok(GainConfig::new(g.k, g.k_g, self.b_nu_default, self.damping, dt)?)
    }
}

/// Result of one method on one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub summary: MetricsSummary,
    pub steps: usize,
    /// Samples where the solver failed or did not converge.
    pub failures: usize,
}

/// Sample period of a stream, from its first two timestamps.
pub fn stream_dt(samples: &[TargetSample]) -> Option<f64> {
    match samples {
        [a, b, ..] => Some(b.t - a.t),
        _ => None,
    }
}

/// Tracks `samples` with `method` and records metrics on the updated state
/// against each sample. Timing covers the solver calls only.
pub fn run_method(
    model: &KinematicModel,
    samples: &[TargetSample],
    method: Method,
    cfg: &RunConfig,
    dt: f64,
) -> Result<RunOutcome, HarnessError> {
    super::stream::check_stream(model, samples)?;
    let n = samples.len();
    let mut times = Vec::with_capacity(n);
    let mut mnte = Vec::with_capacity(n);
    let mut rmse = Vec::with_capacity(n);
    let mut step_time = Vec::with_capacity(n);
    let mut failures = 0;
    let mut record = |s: &TargetSample, q: &Configuration, nu: &Velocity, secs: f64| -> Result<(), HarnessError> {
        let (e, w) = sample_metrics(model, q, nu, s)?;
        times.push(s.t);
        mnte.push(e);
        rmse.push(w);
        step_time.push(secs);
        Ok(())
    };
    let Some(first) = samples.first() else {
        return Ok(RunOutcome {
            summary: MetricsSummary::new(vec![], vec![], vec![], vec![], cfg.transient_discard),
            steps: 0,
            failures: 0,
        });
    };
    let init = SolverState::initial(model, first, dt);

    match method {
        Method::Dynamical => {
            let gains = cfg.gains(model, dt)?;
            let baumgarte = BaumgarteConfig::new(cfg.rho, dt)?;
            let qp = QpSolver::default();
            let mut state = init;
            for s in samples {
                let start = Instant::now();
                let res = dynamical::step(&state, s, model, &gains, &baumgarte, &qp);
                let secs = start.elapsed().as_secs_f64();
                match res {
                    Ok((next, _)) => state = next,
                    Err(_) => {
                        // Skip the sample but keep the clock in step.
                        failures += 1;
                        state.t = s.t;
                    }
                }
                record(s, &state.q, &state.nu, secs)?;
            }
        }
        Method::WholeBody | Method::Pairwise => {
            let subsystems = match method {
                Method::Pairwise => Some(decompose_pairwise(model)?),
                _ => None,
            };
            let icfg = &cfg.instantaneous;
            let mut q = init.q;
            let mut nu = init.nu;
            for s in samples {
                let start = Instant::now();
                let pose = match &subsystems {
                    Some(subs) => {
                        instantaneous::solve_pairwise(model, subs, s, &q, icfg).map(|r| (r.all_converged(), r.q))
                    }
                    None => instantaneous::solve_whole_body(model, s, &q, icfg)
                        .map(|r| (r.status == LmStatus::Converged, r.q)),
                };
                let res = pose.and_then(|(ok, q_new)| {
                    let v = instantaneous::solve_velocity(model, &q_new, s, cfg.damping)?;
                    Ok((ok, q_new, v))
                });
                let secs = start.elapsed().as_secs_f64();
                match res {
                    Ok((ok, q_new, v)) => {
                        failures += usize::from(!ok);
                        q = q_new;
                        nu = v;
                    }
                    Err(_) => failures += 1,
                }
                record(s, &q, &nu, secs)?;
            }
        }
    }

    Ok(RunOutcome {
        summary: MetricsSummary::new(times, mnte, rmse, step_time, cfg.transient_discard),
        steps: n,
        failures,
    })
}

/// Where a benchmark model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub id: String,
    /// Generate a human chain with this many DoFs (66 or 48).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Load from a model file instead, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub spec: TrajectorySpec,
}

/// A benchmark grid: every model × scenario × method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub models: Vec<ModelSource>,
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub run: RunConfig,
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Builds or loads every model. Relative paths resolve against `dir`.
    pub fn resolve_models(&self, dir: &Path) -> Result<Vec<(String, KinematicModel)>, HarnessError> {
        self.models
            .iter()
            .map(|m| {
                let model = match (&m.human, &m.path) {
                    (Some(d), None) => {
                        let dofs = HumanDofs::from_count(*d).ok_or_else(|| {
                            HarnessError::Config(format!("model '{}': human DoFs must be 66 or 48", m.id))
                        })?;
                        generate_human_chain(dofs, m.seed)
                    }
                    (None, Some(p)) => load_model_file(dir.join(p))?,
                    _ => {
                        return Err(HarnessError::Config(format!(
                            "model '{}' needs exactly one of 'human' and 'path'",
                            m.id
                        )))
                    }
                };
                Ok((m.id.clone(), model))
            })
            .collect()
    }
}

/// One cell of a benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub model: String,
    pub scenario: String,
    pub spec: TrajectorySpec,
    pub config: RunConfig,
    /// `None` when the run could not start (for example an infeasible
    /// spec); `error` then says why.
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
}

/// Worker count: `IKTRACK_THREADS` when set to a positive integer,
/// otherwise the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs the full cross product. Records come back in declaration order
/// (model, then scenario, then method) regardless of completion order.
pub fn run_benchmark(
    models: &[(String, KinematicModel)],
    scenarios: &[Scenario],
    methods: &[Method],
    cfg: &RunConfig,
) -> Result<Vec<RunRecord>, HarnessError> {
    use rayon::prelude::*;

    let mut cells = Vec::new();
    for (mi, _) in models.iter().enumerate() {
        for (si, _) in scenarios.iter().enumerate() {
            for &method in methods {
                cells.push((mi, si, method));
            }
        }
    }
    if cells.is_empty() {
        return Ok(Vec::new());
    }

    // Streams are shared by every method of a (model, scenario) pair.
    let streams: Vec<Vec<Result<Vec<TargetSample>, String>>> = models
        .iter()
        .map(|(_, m)| {
            scenarios
                .iter()
                .map(|s| {
                    generate_stream(m, &s.spec)
                        .map(|g| g.samples)
                        .map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let records = pool.install(|| {
        cells
            .par_iter()
            .map(|&(mi, si, method)| {
                let (model_id, model) = &models[mi];
                let scenario = &scenarios[si];
                let result = streams[mi][si].as_ref().map_err(Clone::clone).and_then(|samples| {
                    run_method(model, samples, method, cfg, scenario.spec.dt).map_err(|e| e.to_string())
                });
                let (outcome, error) = match result {
                    Ok(o) => (Some(o), None),
                    Err(e) => (None, Some(e)),
                };
                RunRecord {
                    method,
                    model: model_id.clone(),
                    scenario: scenario.id.clone(),
                    spec: scenario.spec.clone(),
                    config: cfg.clone(),
                    outcome,
                    error,
                }
            })
            .collect()
    });
    Ok(records)
}

/// Column order of the results table.
pub const RESULT_COLUMNS: [&str; 11] = [
    "method",
    "model",
    "scenario",
    "mnte_median",
    "mnte_p95",
    "rmse_median",
    "rmse_p95",
    "time_median_ms",
    "time_p95_ms",
    "steps",
    "failures",
];

/// Shortest round-trip form, switching to exponent notation for very small
/// or large magnitudes.
fn fmt_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-3..1e7).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Writes the comparison table. Runs that never started have empty metric
/// cells and one failure.
pub fn write_results_csv(out: impl Write, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in records {
        let mut row = vec![r.method.name().to_owned(), r.model.clone(), r.scenario.clone()];
        match &r.outcome {
            Some(o) => {
                let s = &o.summary;
                for v in [
                    s.mnte_stats.median,
                    s.mnte_stats.p95,
                    s.rmse_stats.median,
                    s.rmse_stats.p95,
                    s.time_stats.median * 1e3,
                    s.time_stats.p95 * 1e3,
                ] {
                    row.push(fmt_float(v));
                }
                row.push(o.steps.to_string());
                row.push(o.failures.to_string());
            }
            None => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push("0".into());
                row.push("1".into());
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

/// Writes the per-step series of one run: `t, mnte, rmse, step_time_ms`.
pub fn write_series_csv(out: impl Write, summary: &MetricsSummary) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "mnte", "rmse", "step_time_ms"])?;
    for k in 0..summary.times.len() {
        w.write_record([
            fmt_float(summary.times[k]),
            fmt_float(summary.mnte[k]),
            fmt_float(summary.rmse_angvel[k]),
            fmt_float(summary.step_time[k] * 1e3),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}
