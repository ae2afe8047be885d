//! Experiment drivers behind the command-line interface.
//!
//! Three experiments ship with the crate:
//!
//! - `surrogate-fit`: model-fit comparison between the latent-only GP and the
//!   structure-coupled GP over many random training sets of several sizes,
//!   scored by mean absolute error on shared random test sets.
//! - `bo-compare`: paired optimization runs (same per-seed initialization for
//!   every method) with per-iteration incumbent traces.
//! - `run`: a single optimization run with a streamed record.
//!
//! Every output file opens with a `#`-prefixed header block listing the fully
//! resolved configuration, so the numbers in the file can be reproduced from
//! the file alone. Aggregate files are plain functions of the raw files.
//! Cells run in parallel across a bounded worker pool; every cell draws its
//! randomness from seeds derived from the master seed and the cell key, and
//! output rows are ordered by cell key, so file bytes do not depend on the
//! worker count or scheduling.
//!
//! Timing columns are written as `0.0` unless timing emission is enabled:
//! measured wall-clock values would break byte-level reproducibility of
//! result files.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

use crate::acquisition::AcqConfig;
use crate::bo::{self, BoConfig, BoError, BoMethod, BoRunRecord};
use crate::cmaes::CmaConfig;
use crate::coupled::{EvaluatedTriple, StructuredKernelSpec};
use crate::expr;
use crate::gp::{fit_hyperparams, GpError, GpFitConfig, KernelMode};
use crate::latent::{build_codebook, load_external_model, CodebookModel, LatentError, LatentModel};
use crate::seed::{derive, tag};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: field `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Where the latent model comes from: the built-in codebook over the
/// expression database, or an external embedding file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatentSource {
    Codebook {
        database_size: usize,
        dim: usize,
        max_depth: usize,
    },
    External(PathBuf),
}

impl Default for LatentSource {
    fn default() -> Self {
        LatentSource::Codebook {
            database_size: expr::DEFAULT_DATABASE_SIZE,
            dim: 16,
            max_depth: expr::DEFAULT_MAX_DEPTH,
        }
    }
}

/// The benchmark database and codebook are fixed artifacts, independent of
/// the experiment seed, the way a pretrained encoder/decoder would be.
pub const BENCHMARK_MODEL_SEED: u64 = 0x4C41_4444_4552_2121;

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// 0 means all available cores.
    pub workers: usize,
    pub latent: LatentSource,
    /// Emit measured wall-clock seconds in trace files.
    pub timing: bool,

    // surrogate-fit
    pub train_sizes: Vec<usize>,
    pub train_sets: usize,
    pub test_sets: usize,
    pub test_size: usize,

    // bo-compare / run
    pub methods: Vec<BoMethod>,
    pub runs: usize,
    pub iterations: usize,
    pub init_count: usize,
    pub method: BoMethod,

    pub cma: CmaConfig,
    pub gp: GpFitConfig,
    pub duplicate_penalty: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("results"),
            workers: 0,
            latent: LatentSource::default(),
            timing: false,
            train_sizes: vec![10, 20, 50, 100, 200],
            train_sets: 50,
            test_sets: 20,
            test_size: 50,
            methods: vec![
                BoMethod::Ladder(StructuredKernelSpec::default()),
                BoMethod::NaiveLsbo,
            ],
            runs: 10,
            iterations: 100,
            init_count: 10,
            method: BoMethod::Ladder(StructuredKernelSpec::default()),
            cma: CmaConfig::default(),
            gp: GpFitConfig::default(),
            duplicate_penalty: true,
        }
    }
}

impl ExperimentConfig {
    fn acq(&self) -> AcqConfig {
        AcqConfig {
            cma: self.cma.clone(),
            duplicate_penalty: self.duplicate_penalty,
            bounds_expansion: 0.1,
        }
    }

    fn latent_label(&self) -> String {
        match &self.latent {
            LatentSource::Codebook {
                database_size,
                dim,
                max_depth,
            } => format!("codebook(size={database_size},dim={dim},max_depth={max_depth})"),
            LatentSource::External(p) => format!("external({})", p.display()),
        }
    }

    /// `#`-prefixed header block with the fully resolved configuration.
    fn header(&self, experiment: &str) -> String {
        let mut s = String::new();
        let methods: Vec<&str> = self.methods.iter().map(|m| m.label()).collect();
        let _ = writeln!(s, "# experiment = {experiment}");
        let _ = writeln!(s, "# cma.iterations = {}", self.cma.iterations);
        let _ = writeln!(s, "# cma.population = {}", self.cma.population);
        let _ = writeln!(s, "# cma.restarts = {}", self.cma.restarts);
        let _ = writeln!(s, "# cma.sigma0 = {}", self.cma.sigma0);
        let _ = writeln!(s, "# duplicate_penalty = {}", self.duplicate_penalty);
        let _ = writeln!(s, "# gp.evals_per_restart = {}", self.gp.evals_per_restart);
        let _ = writeln!(s, "# gp.loo_struct_grid = {}", self.gp.loo_struct_grid);
        let _ = writeln!(s, "# gp.noise_floor = {}", self.gp.noise_floor);
        let _ = writeln!(s, "# gp.restarts = {}", self.gp.restarts);
        let _ = writeln!(s, "# init_count = {}", self.init_count);
        let _ = writeln!(s, "# iterations = {}", self.iterations);
        let _ = writeln!(s, "# latent = {}", self.latent_label());
        let _ = writeln!(s, "# method = {}", self.method.label());
        let _ = writeln!(s, "# methods = {}", methods.join(","));
        let _ = writeln!(s, "# runs = {}", self.runs);
        let _ = writeln!(s, "# seed = {}", self.seed);
        let _ = writeln!(s, "# test_sets = {}", self.test_sets);
        let _ = writeln!(s, "# test_size = {}", self.test_size);
        let _ = writeln!(s, "# timing = {}", self.timing);
        let _ = writeln!(
            s,
            "# train_sizes = {}",
            self.train_sizes
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "# train_sets = {}", self.train_sets);
        s
    }
}

fn require(cond: bool, field: &'static str, message: &str) -> Result<(), ExperimentError> {
    if cond {
        Ok(())
    } else {
        Err(ExperimentError::InvalidConfig {
            field,
            message: message.to_string(),
        })
    }
}

/// Builds or loads the latent model named by the config.
pub fn resolve_latent(cfg: &ExperimentConfig) -> Result<CodebookModel, ExperimentError> {
    match &cfg.latent {
        LatentSource::Codebook {
            database_size,
            dim,
            max_depth,
        } => {
            let db = expr::expression_database(*database_size, *max_depth, BENCHMARK_MODEL_SEED);
            Ok(build_codebook(&db, *dim, BENCHMARK_MODEL_SEED)?)
        }
        LatentSource::External(path) => Ok(load_external_model(path)?),
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    let threads = if workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        workers
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::InvalidConfig {
            field: "workers",
            message: e.to_string(),
        })
}

fn sample_triples(
    model: &CodebookModel,
    count: usize,
    seed: u64,
) -> Vec<EvaluatedTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (triples, _) = bo::init_dataset(model, &expr::structure_objective, count, &mut rng);
    triples
}

fn mean_and_two_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 2.0 * (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// surrogate-fit
// ---------------------------------------------------------------------------

/// One raw surrogate-fit result cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub model: &'static str,
    pub train_size: usize,
    pub train_set: usize,
    pub test_set: usize,
    pub mae: f64,
}

#[derive(Debug)]
pub struct SurrogateFitOutput {
    pub raw_path: PathBuf,
    pub aggregate_path: PathBuf,
    pub rows: Vec<FitRow>,
    /// (model, train_size) → (mean MAE, 2·standard error).
    pub aggregates: Vec<(String, usize, f64, f64)>,
}

const FIT_MODELS: [(&str, KernelMode); 2] = [
    ("matern_only", KernelMode::LatentOnly),
    ("structure_coupled", KernelMode::StructureCoupled),
];

/// Fits both surrogate models on many random training sets of each size and
/// scores them on shared random test sets.
pub fn cmd_surrogate_fit(cfg: &ExperimentConfig) -> Result<SurrogateFitOutput, ExperimentError> {
    require(!cfg.train_sizes.is_empty(), "train_sizes", "must be nonempty")?;
    require(
        cfg.train_sizes.iter().all(|&s| s >= 2),
        "train_sizes",
        "every size must be at least 2",
    )?;
    require(cfg.train_sets >= 1, "train_sets", "must be positive")?;
    require(cfg.test_sets >= 1, "test_sets", "must be positive")?;
    require(cfg.test_size >= 1, "test_size", "must be positive")?;

    let model = resolve_latent(cfg)?;
    let max_size = cfg.train_sizes.iter().copied().max().unwrap();
    require(
        max_size <= model.len() && cfg.test_size <= model.len(),
        "train_sizes",
        "sizes exceed the database",
    )?;

    let test_sets: Vec<Vec<EvaluatedTriple>> = (0..cfg.test_sets)
        .map(|j| {
            sample_triples(
                &model,
                cfg.test_size,
                derive(cfg.seed, &[tag::TEST_SET, j as u64]),
            )
        })
        .collect();

    struct Cell {
        size: usize,
        set: usize,
        model_idx: usize,
    }
    let mut cells = Vec::new();
    for &size in &cfg.train_sizes {
        for set in 0..cfg.train_sets {
            for model_idx in 0..FIT_MODELS.len() {
                cells.push(Cell {
                    size,
                    set,
                    model_idx,
                });
            }
        }
    }

    let pool = thread_pool(cfg.workers)?;
    let results: Vec<Result<Vec<FitRow>, ExperimentError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let (name, mode) = FIT_MODELS[cell.model_idx];
                // The training set depends only on (size, set): both models
                // see identical data.
                let train = sample_triples(
                    &model,
                    cell.size,
                    derive(cfg.seed, &[tag::TRAIN_SET, cell.size as u64, cell.set as u64]),
                );
                let mut rng = ChaCha8Rng::seed_from_u64(derive(
                    cfg.seed,
                    &[
                        tag::GP_FIT,
                        cell.size as u64,
                        cell.set as u64,
                        cell.model_idx as u64,
                    ],
                ));
                let fitted = fit_hyperparams(
                    &train,
                    mode,
                    StructuredKernelSpec::default(),
                    &cfg.gp,
                    &mut rng,
                )?;
                let mut rows = Vec::with_capacity(test_sets.len());
                for (j, test) in test_sets.iter().enumerate() {
                    rows.push(FitRow {
                        model: name,
                        train_size: cell.size,
                        train_set: cell.set,
                        test_set: j,
                        mae: fitted.surrogate_mae(test)?,
                    });
                }
                Ok(rows)
            })
            .collect()
    });

    let mut rows: Vec<FitRow> = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        (a.model, a.train_size, a.train_set, a.test_set).cmp(&(
            b.model,
            b.train_size,
            b.train_set,
            b.test_set,
        ))
    });

    fs::create_dir_all(&cfg.out_dir)?;
    let raw_path = cfg.out_dir.join("surrogate_fit_raw.csv");
    {
        let mut f = fs::File::create(&raw_path)?;
        f.write_all(cfg.header("surrogate-fit").as_bytes())?;
        writeln!(f, "model,train_size,train_set,test_set,mae")?;
        for r in &rows {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.model, r.train_size, r.train_set, r.test_set, r.mae
            )?;
        }
    }

    let mut aggregates = Vec::new();
    let aggregate_path = cfg.out_dir.join("surrogate_fit_aggregate.csv");
    {
        let mut f = fs::File::create(&aggregate_path)?;
        f.write_all(cfg.header("surrogate-fit").as_bytes())?;
        writeln!(f, "model,train_size,cells,mean_mae,two_se")?;
        for (name, _) in FIT_MODELS {
            for &size in &cfg.train_sizes {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.model == name && r.train_size == size)
                    .map(|r| r.mae)
                    .collect();
                let (mean, two_se) = mean_and_two_se(&vals);
                writeln!(f, "{},{},{},{},{}", name, size, vals.len(), mean, two_se)?;
                aggregates.push((name.to_string(), size, mean, two_se));
            }
        }
    }

    Ok(SurrogateFitOutput {
        raw_path,
        aggregate_path,
        rows,
        aggregates,
    })
}

// ---------------------------------------------------------------------------
// bo-compare
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct BoCompareOutput {
    pub trace_paths: Vec<PathBuf>,
    pub aggregate_path: PathBuf,
    /// (method label, run index) → record, for successful runs.
    pub records: Vec<(String, usize, BoRunRecord)>,
    /// (method label, run index, error message) for failed runs.
    pub failures: Vec<(String, usize, String)>,
}

fn run_one(
    cfg: &ExperimentConfig,
    model: &CodebookModel,
    method: &BoMethod,
    run_idx: usize,
    trace_path: &Path,
    header: &str,
) -> Result<BoRunRecord, ExperimentError> {
    let run_seed = derive(cfg.seed, &[tag::RUN_SEED, run_idx as u64]);
    let bo_cfg = BoConfig {
        method: method.clone(),
        iterations: cfg.iterations,
        init_count: cfg.init_count,
        seed: run_seed,
        acq: cfg.acq(),
        gp: cfg.gp.clone(),
        emit_timing: cfg.timing,
    };
    let mut file = fs::File::create(trace_path)?;
    file.write_all(header.as_bytes())?;
    writeln!(file, "# method = {}", method.label())?;
    writeln!(file, "# run = {run_idx}")?;
    writeln!(file, "# run_seed = {run_seed}")?;
    let record = bo::run(&bo_cfg, model, &expr::structure_objective, Some(&mut file))?;
    Ok(record)
}

/// Runs every configured method on every run seed, with per-seed shared
/// initialization across methods, and writes per-run traces plus the
/// across-run incumbent aggregate. A failed run is recorded and the rest
/// proceed.
pub fn cmd_bo_compare(cfg: &ExperimentConfig) -> Result<BoCompareOutput, ExperimentError> {
    require(!cfg.methods.is_empty(), "methods", "must be nonempty")?;
    require(cfg.runs >= 1, "runs", "must be positive")?;
    require(cfg.init_count >= 2, "init_count", "must be at least 2")?;

    let model = resolve_latent(cfg)?;
    require(
        cfg.init_count <= model.len(),
        "init_count",
        "exceeds the database size",
    )?;
    fs::create_dir_all(&cfg.out_dir)?;
    let header = cfg.header("bo-compare");

    struct Cell {
        method_idx: usize,
        run_idx: usize,
        path: PathBuf,
    }
    let mut cells = Vec::new();
    for (method_idx, method) in cfg.methods.iter().enumerate() {
        for run_idx in 0..cfg.runs {
            let path = cfg
                .out_dir
                .join(format!("trace_{}_seed{:02}.jsonl", method.label(), run_idx));
            cells.push(Cell {
                method_idx,
                run_idx,
                path,
            });
        }
    }

    let pool = thread_pool(cfg.workers)?;
    let outcomes: Vec<(usize, Result<BoRunRecord, ExperimentError>)> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                let method = &cfg.methods[cell.method_idx];
                (
                    i,
                    run_one(cfg, &model, method, cell.run_idx, &cell.path, &header),
                )
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes {
        let cell = &cells[i];
        let label = cfg.methods[cell.method_idx].label().to_string();
        match outcome {
            Ok(rec) => records.push((label, cell.run_idx, rec)),
            Err(e) => failures.push((label, cell.run_idx, e.to_string())),
        }
    }
    records.sort_by(|a, b| (a.0.clone(), a.1).cmp(&(b.0.clone(), b.1)));
    failures.sort();

    let aggregate_path = cfg.out_dir.join("bo_compare_aggregate.csv");
    {
        let mut f = fs::File::create(&aggregate_path)?;
        f.write_all(header.as_bytes())?;
        for (label, run_idx, msg) in &failures {
            writeln!(f, "# failed: {label} run {run_idx}: {msg}")?;
        }
        writeln!(f, "method,t,runs,mean_incumbent,two_se")?;
        for method in &cfg.methods {
            let label = method.label();
            for t in 0..=cfg.iterations {
                let vals: Vec<f64> = records
                    .iter()
                    .filter(|(l, _, _)| l == label)
                    .filter_map(|(_, _, rec)| rec.incumbent_at(t))
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let (mean, two_se) = mean_and_two_se(&vals);
                writeln!(f, "{},{},{},{},{}", label, t, vals.len(), mean, two_se)?;
            }
        }
    }

    Ok(BoCompareOutput {
        trace_paths: cells.into_iter().map(|c| c.path).collect(),
        aggregate_path,
        records,
        failures,
    })
}

// ---------------------------------------------------------------------------
// single run
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct SingleRunOutput {
    pub trace_path: PathBuf,
    pub record: BoRunRecord,
    pub best_structure: String,
    pub best_value: f64,
}

/// One optimization run with a streamed record file.
pub fn cmd_single_run(cfg: &ExperimentConfig) -> Result<SingleRunOutput, ExperimentError> {
    require(cfg.init_count >= 2, "init_count", "must be at least 2")?;
    let model = resolve_latent(cfg)?;
    require(
        cfg.init_count <= model.len(),
        "init_count",
        "exceeds the database size",
    )?;
    fs::create_dir_all(&cfg.out_dir)?;
    let trace_path = cfg
        .out_dir
        .join(format!("run_{}_seed{}.jsonl", cfg.method.label(), cfg.seed));
    let header = cfg.header("run");
    let record = run_one(cfg, &model, &cfg.method.clone(), 0, &trace_path, &header)?;
    let (x, y) = record.incumbent()?;
    let best_structure = x.to_string();
    Ok(SingleRunOutput {
        trace_path,
        record,
        best_structure,
        best_value: y,
    })
}

// ---------------------------------------------------------------------------
// helpers shared with the acceptance suite
// ---------------------------------------------------------------------------

/// Database indices of a record's evaluated structures resolved through the
/// model, for integrity checks.
pub fn record_indices(model: &CodebookModel, record: &BoRunRecord) -> HashSet<usize> {
    record
        .entries
        .iter()
        .map(|e| {
            let x = crate::latent::Structure::from_tokens(e.x.split_whitespace());
            model
                .database()
                .iter()
                .position(|s| *s == x)
                .expect("recorded structure must come from the database")
        })
        .collect()
}
