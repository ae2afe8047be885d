//! `ladder` — command-line front end for the surrogate-fit comparison, the
//! paired optimization-method comparison, and single optimization runs.
//!
//! Configuration is resolved in precedence order: built-in defaults, then the
//! `--config` file (flat `key = value` lines mirroring the flags), then the
//! `LADDER_SEED` environment variable as a master-seed fallback, then
//! explicit flags. Exit codes: 0 success, 1 configuration error, 2 run
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ladder_core::experiments::{
    cmd_bo_compare, cmd_single_run, cmd_surrogate_fit, ExperimentConfig, ExperimentError,
    LatentSource,
};
use ladder_core::{BoMethod, StructuredKernelSpec};

#[derive(Parser)]
#[command(
    name = "ladder",
    about = "Latent-space Bayesian optimization over combinatorial structures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare surrogate-model fit quality across training-set sizes.
    SurrogateFit(CommonArgs),
    /// Run every method on paired seeds and emit incumbent traces.
    BoCompare(CommonArgs),
    /// One optimization run with a streamed record.
    Run(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Method: ladder | ladder-string | ladder-fingerprint | naive-lsbo.
    #[arg(long)]
    method: Option<String>,
    /// Optimization iterations per run.
    #[arg(long)]
    iters: Option<usize>,
    /// Master seed (falls back to $LADDER_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Latent model: `codebook` or a path to an embedding file.
    #[arg(long)]
    latent: Option<String>,
    /// Worker threads for experiment cells (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Emit measured wall-clock seconds in traces (breaks byte-level
    /// reproducibility of result files).
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let (args, runner): (&CommonArgs, fn(&ExperimentConfig) -> Result<String, ExperimentError>) =
        match &cli.command {
            Command::SurrogateFit(a) => (a, run_surrogate_fit),
            Command::BoCompare(a) => (a, run_bo_compare),
            Command::Run(a) => (a, run_single),
        };

    let cfg = match resolve_config(args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(1);
        }
    };

    match runner(&cfg) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(ExperimentError::InvalidConfig { field, message }) => {
            eprintln!("config error: field `{field}`: {message}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_surrogate_fit(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    let out = cmd_surrogate_fit(cfg)?;
    let mut s = String::new();
    s.push_str("surrogate-fit complete\n");
    for (model, size, mean, two_se) in &out.aggregates {
        s.push_str(&format!(
            "  {model:>18} size {size:>4}: MAE {mean:.4} ± {two_se:.4}\n"
        ));
    }
    s.push_str(&format!("raw rows: {}\n", out.raw_path.display()));
    s.push_str(&format!("aggregate: {}\n", out.aggregate_path.display()));
    Ok(s)
}

fn run_bo_compare(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    let out = cmd_bo_compare(cfg)?;
    let mut s = String::new();
    s.push_str("bo-compare complete\n");
    for method in &cfg.methods {
        let finals: Vec<f64> = out
            .records
            .iter()
            .filter(|(l, _, _)| l == method.label())
            .filter_map(|(_, _, rec)| rec.incumbent().ok().map(|(_, y)| y))
            .collect();
        if finals.is_empty() {
            continue;
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        s.push_str(&format!(
            "  {:>18}: {} runs, mean final incumbent {mean:.4}\n",
            method.label(),
            finals.len()
        ));
    }
    for (label, run_idx, msg) in &out.failures {
        s.push_str(&format!("  FAILED {label} run {run_idx}: {msg}\n"));
    }
    s.push_str(&format!("aggregate: {}\n", out.aggregate_path.display()));
    if out.failures.is_empty() {
        Ok(s)
    } else {
        // Some runs failed: print the summary, then report a run failure.
        print!("{s}");
        Err(ExperimentError::Io(std::io::Error::other(format!(
            "{} of {} runs failed",
            out.failures.len(),
            out.failures.len() + out.records.len()
        ))))
    }
}

fn run_single(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    let out = cmd_single_run(cfg)?;
    Ok(format!(
        "run complete\n  best structure: {}\n  best objective: {}\n  trace: {}\n",
        out.best_structure,
        out.best_value,
        out.trace_path.display()
    ))
}

// ---------------------------------------------------------------------------
// Configuration resolution
// ---------------------------------------------------------------------------

fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::default();

    // Environment fallback for the master seed; the config file and the flag
    // both override it.
    if let Ok(v) = std::env::var("LADDER_SEED") {
        cfg.seed = v
            .parse()
            .map_err(|_| format!("LADDER_SEED must be an integer, got `{v}`"))?;
    }

    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        apply_config_file(&mut cfg, &text)?;
    }

    if let Some(m) = &args.method {
        cfg.method = parse_method(m)?;
    }
    if let Some(n) = args.iters {
        cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(latent) = &args.latent {
        cfg.latent = parse_latent(latent, &cfg);
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if args.timing {
        cfg.timing = true;
    }
    Ok(cfg)
}

fn parse_method(s: &str) -> Result<BoMethod, String> {
    match s {
        "ladder" | "ladder-string" => Ok(BoMethod::Ladder(StructuredKernelSpec::default())),
        "ladder-fingerprint" => Ok(BoMethod::Ladder(StructuredKernelSpec::default_fingerprint())),
        "naive-lsbo" => Ok(BoMethod::NaiveLsbo),
        other => Err(format!(
            "unknown method `{other}` (expected ladder, ladder-string, ladder-fingerprint or naive-lsbo)"
        )),
    }
}

fn parse_latent(s: &str, cfg: &ExperimentConfig) -> LatentSource {
    if s == "codebook" {
        match &cfg.latent {
            // Keep codebook knobs that a config file may have set already.
            LatentSource::Codebook { .. } => cfg.latent.clone(),
            LatentSource::External(_) => LatentSource::default(),
        }
    } else {
        LatentSource::External(PathBuf::from(s))
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize, String> {
    value
        .parse()
        .map_err(|_| format!("key `{key}`: expected a nonnegative integer, got `{value}`"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, String> {
    value
        .parse()
        .map_err(|_| format!("key `{key}`: expected a number, got `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("key `{key}`: expected true/false, got `{value}`")),
    }
}

fn codebook_mut(cfg: &mut ExperimentConfig) -> (&mut usize, &mut usize, &mut usize) {
    if !matches!(cfg.latent, LatentSource::Codebook { .. }) {
        cfg.latent = LatentSource::default();
    }
    match &mut cfg.latent {
        LatentSource::Codebook {
            database_size,
            dim,
            max_depth,
        } => (database_size, dim, max_depth),
        LatentSource::External(_) => unreachable!(),
    }
}

fn apply_config_file(cfg: &mut ExperimentConfig, text: &str) -> Result<(), String> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("config line {}: expected `key = value`", lineno + 1));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "seed" => cfg.seed = parse_usize(key, value)? as u64,
            "out" => cfg.out_dir = PathBuf::from(value),
            "workers" => cfg.workers = parse_usize(key, value)?,
            "timing" => cfg.timing = parse_bool(key, value)?,
            "latent" => cfg.latent = parse_latent(value, cfg),
            "method" => cfg.method = parse_method(value)?,
            "methods" => {
                cfg.methods = value
                    .split(',')
                    .map(|m| parse_method(m.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "iters" => cfg.iterations = parse_usize(key, value)?,
            "runs" => cfg.runs = parse_usize(key, value)?,
            "init-count" => cfg.init_count = parse_usize(key, value)?,
            "train-sizes" => {
                cfg.train_sizes = value
                    .split(',')
                    .map(|v| parse_usize(key, v.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "train-sets" => cfg.train_sets = parse_usize(key, value)?,
            "test-sets" => cfg.test_sets = parse_usize(key, value)?,
            "test-size" => cfg.test_size = parse_usize(key, value)?,
            "db-size" => *codebook_mut(cfg).0 = parse_usize(key, value)?,
            "latent-dim" => *codebook_mut(cfg).1 = parse_usize(key, value)?,
            "max-depth" => *codebook_mut(cfg).2 = parse_usize(key, value)?,
            "cma-sigma0" => cfg.cma.sigma0 = parse_f64(key, value)?,
            "cma-population" => cfg.cma.population = parse_usize(key, value)?,
            "cma-iters" => cfg.cma.iterations = parse_usize(key, value)?,
            "cma-restarts" => cfg.cma.restarts = parse_usize(key, value)?,
            "gp-restarts" => cfg.gp.restarts = parse_usize(key, value)?,
            "gp-evals" => cfg.gp.evals_per_restart = parse_usize(key, value)?,
            "loo-grid" => cfg.gp.loo_struct_grid = parse_bool(key, value)?,
            "duplicate-penalty" => cfg.duplicate_penalty = parse_bool(key, value)?,
            other => return Err(format!("config line {}: unknown key `{other}`", lineno + 1)),
        }
    }
    Ok(())
}
