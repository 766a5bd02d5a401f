use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use iktrack_core::harness::{
    self, generate_stream, load_stream, run_benchmark, run_method, save_stream, write_results_csv, write_series_csv,
    BenchConfig, Method, RunConfig, RunRecord, TrajectorySpec,
};
use iktrack_core::{generate_human_chain, load_model_file, serialize_model, HumanDofs};

const USAGE: u8 = 1;
const DATA: u8 = 2;
const SOLVER: u8 = 3;

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

#[derive(Parser)]
#[command(
    name = "iktrack",
    version,
    about = "Real-time inverse kinematics for floating-base chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a target stream and write its metrics.
    Solve(SolveArgs),
    /// Generate a synthetic target stream.
    Gen(GenArgs),
    /// Run a benchmark grid.
    Bench(BenchArgs),
    /// Model utilities.
    Models {
        #[command(subcommand)]
        command: ModelsCommand,
    },
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, default_value = "dynamical")]
    method: Method,
    /// Feedback gain K (1/s).
    #[arg(long)]
    gain: Option<f64>,
    /// Limit-shaping gain K_g (1/rad).
    #[arg(long)]
    gain_limit: Option<f64>,
    /// Sample period; must match the stream. Defaults to the stream's.
    #[arg(long)]
    dt: Option<f64>,
    /// Baumgarte gain (1/s).
    #[arg(long)]
    rho: Option<f64>,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-step series CSV.
    #[arg(long)]
    series: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    model: PathBuf,
    /// Trajectory spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Benchmark config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.csv and per-run series.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ModelsCommand {
    /// Write a generated human chain model.
    GenHuman {
        #[arg(long, value_parser = ["66", "48"])]
        dofs: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Gen(a) => gen(a),
        Command::Bench(a) => bench(a),
        Command::Models {
            command: ModelsCommand::GenHuman { dofs, seed, out },
        } => gen_human(&dofs, seed, &out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn usage(msg: String) -> Failure {
    Failure {
        code: USAGE,
        error: anyhow!(msg),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "unnamed".into(), |s| s.to_string_lossy().into_owned())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .code(DATA)
}

fn warn_if_no_steady_state(label: &str, summary: &harness::MetricsSummary) {
    if summary.mnte_stats.count == 0 && !summary.times.is_empty() {
        eprintln!(
            "warning: {label}: run is not longer than the {} s transient window, statistics are NaN",
            summary.transient_discard
        );
    }
}

fn solve(a: SolveArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::default();
    for (name, value, slot) in [
        ("--gain", a.gain, &mut cfg.gain),
        ("--gain-limit", a.gain_limit, &mut cfg.gain_limit),
        ("--rho", a.rho, &mut cfg.rho),
    ] {
        if let Some(v) = value {
            if !(v > 0.0 && v.is_finite()) {
                return Err(usage(format!("{name} must be positive, got {v}")));
            }
            *slot = v;
        }
    }
    if let Some(dt) = a.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(usage(format!("--dt must be positive, got {dt}")));
        }
    }

    let model = load_model_file(&a.model)
        .with_context(|| format!("model {}", a.model.display()))
        .code(DATA)?;
    let samples = load_stream(&a.stream)
        .with_context(|| format!("stream {}", a.stream.display()))
        .code(DATA)?;
    harness::check_stream(&model, &samples)
        .with_context(|| format!("stream {}", a.stream.display()))
        .code(DATA)?;
    let dt = match (a.dt, harness::stream_dt(&samples)) {
        (Some(dt), Some(s)) if (dt - s).abs() > 1e-9 => {
            return Err(Failure {
                code: DATA,
                error: anyhow!("--dt {dt} does not match the stream's sample period {s}"),
            })
        }
        (Some(dt), _) => dt,
        (None, Some(s)) => s,
        (None, None) => 0.01,
    };
    if a.method == Method::Dynamical && cfg.gain * dt > 1.0 {
        return Err(usage(format!(
            "--gain {} is unstable at dt {dt}: gain·dt must not exceed 1",
            cfg.gain
        )));
    }

    let outcome = run_method(&model, &samples, a.method, &cfg, dt).code(DATA)?;
    let failures = outcome.failures;
    warn_if_no_steady_state(&stem(&a.stream), &outcome.summary);
    let record = RunRecord {
        method: a.method,
        model: stem(&a.model),
        scenario: stem(&a.stream),
        spec: TrajectorySpec::static_pose(dt, dt, 0.0, 0),
        config: cfg,
        outcome: Some(outcome),
        error: None,
    };
    write_results_csv(create(&a.out)?, std::slice::from_ref(&record)).code(DATA)?;
    if let Some(path) = &a.series {
        let summary = &record.outcome.as_ref().expect("set above").summary;
        write_series_csv(create(path)?, summary).code(DATA)?;
    }
    if failures > 0 {
        return Err(Failure {
            code: SOLVER,
            error: anyhow!("{failures} of {} samples failed to solve", samples.len()),
        });
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<(), Failure> {
    let model = load_model_file(&a.model)
        .with_context(|| format!("model {}", a.model.display()))
        .code(DATA)?;
    let text = fs::read_to_string(&a.spec)
        .with_context(|| format!("cannot read {}", a.spec.display()))
        .code(DATA)?;
    let mut spec: TrajectorySpec = serde_json::from_str(&text)
        .with_context(|| format!("spec {}", a.spec.display()))
        .code(DATA)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let stream = generate_stream(&model, &spec).code(DATA)?;
    save_stream(&a.out, &stream.samples)
        .with_context(|| format!("cannot write {}", a.out.display()))
        .code(DATA)
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let config = BenchConfig::load(&a.config).code(DATA)?;
    let dir = a.config.parent().unwrap_or(Path::new("."));
    let models = config.resolve_models(dir).code(DATA)?;
    let records = run_benchmark(&models, &config.scenarios, &config.methods, &config.run).code(DATA)?;

    let series_dir = a.out.join("series");
    fs::create_dir_all(&series_dir)
        .with_context(|| format!("cannot create {}", series_dir.display()))
        .code(DATA)?;
    write_results_csv(create(&a.out.join("results.csv"))?, &records).code(DATA)?;
    for r in &records {
        match (&r.outcome, &r.error) {
            (Some(o), _) => {
                warn_if_no_steady_state(&format!("{} / {} / {}", r.model, r.scenario, r.method), &o.summary);
                let name = format!("{}_{}_{}.csv", r.model, r.scenario, r.method.name());
                write_series_csv(create(&series_dir.join(name))?, &o.summary).code(DATA)?;
            }
            (None, Some(e)) => eprintln!("warning: {} / {} / {}: {e}", r.model, r.scenario, r.method),
            (None, None) => {}
        }
    }
    Ok(())
}

fn gen_human(dofs: &str, seed: u64, out: &Path) -> Result<(), Failure> {
    let dofs = dofs
        .parse()
        .ok()
        .and_then(HumanDofs::from_count)
        .ok_or_else(|| usage(format!("--dofs must be 66 or 48, got {dofs}")))?;
    fs::write(out, serialize_model(&generate_human_chain(dofs, seed)))
        .with_context(|| format!("cannot write {}", out.display()))
        .code(DATA)
}
