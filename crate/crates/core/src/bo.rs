//! The optimization loop: initialize a dataset with random structures from
//! the database, then repeatedly fit the GP surrogate, maximize expected
//! improvement over the latent space, decode the chosen point, evaluate the
//! decoded structure, and append the new triple.
//!
//! The latent-only baseline runs the identical loop with the GP in
//! latent-only mode: the two methods differ in nothing but the kernel.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{optimize_acquisition, AcqConfig, AcqError, SelectedCandidate};
use crate::coupled::{EvaluatedTriple, StructuredKernelSpec};
use crate::gp::{fit_hyperparams, GpError, GpFitConfig, KernelMode};
use crate::latent::LatentModel;
use crate::seed::{derive, tag};

#[derive(Debug, Error)]
pub enum BoError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record holds no entries")]
    EmptyRecord,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("record line {line}: {message}")]
    Stream { line: usize, message: String },
}

/// Optimization method: the structure-coupled surrogate with a choice of
/// structural kernel, or the latent-only baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum BoMethod {
    Ladder(StructuredKernelSpec),
    NaiveLsbo,
}

impl BoMethod {
    pub fn kernel_mode(&self) -> KernelMode {
        match self {
            BoMethod::Ladder(_) => KernelMode::StructureCoupled,
            BoMethod::NaiveLsbo => KernelMode::LatentOnly,
        }
    }

    pub fn structured_spec(&self) -> StructuredKernelSpec {
        match self {
            BoMethod::Ladder(spec) => spec.clone(),
            BoMethod::NaiveLsbo => StructuredKernelSpec::default(),
        }
    }

    /// Identifier used in file names and result rows.
    pub fn label(&self) -> &'static str {
        match self {
            BoMethod::Ladder(StructuredKernelSpec::String { .. }) => "ladder_string",
            BoMethod::Ladder(StructuredKernelSpec::Fingerprint { .. }) => "ladder_fingerprint",
            BoMethod::NaiveLsbo => "naive_lsbo",
        }
    }
}

/// Configuration of one optimization run.
#[derive(Debug, Clone)]
pub struct BoConfig {
    pub method: BoMethod,
    pub iterations: usize,
    pub init_count: usize,
    pub seed: u64,
    pub acq: AcqConfig,
    pub gp: GpFitConfig,
    /// Emit measured wall-clock seconds in streamed records. Off by default:
    /// timing breaks byte-level reproducibility of result files.
    pub emit_timing: bool,
}

impl BoConfig {
    pub fn new(method: BoMethod, iterations: usize, seed: u64) -> Self {
        Self {
            method,
            iterations,
            init_count: 10,
            seed,
            acq: AcqConfig::default(),
            gp: GpFitConfig::default(),
            emit_timing: false,
        }
    }
}

/// One line of the run record. Initialization entries carry `t = 0`;
/// iteration entries carry `t = 1..=iterations`. The serialized form has
/// exactly the fields `t, z, x, y, best, seconds`, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub t: usize,
    pub z: Vec<f64>,
    pub x: String,
    pub y: f64,
    pub best: f64,
    pub seconds: f64,
    /// Jitter used by the coupled-kernel factorization this iteration
    /// (in-memory diagnostic, not part of the wire format).
    #[serde(skip)]
    pub jitter: f64,
    /// Whether the duplicate penalty exhausted all candidates and the run
    /// accepted a duplicate (in-memory diagnostic).
    #[serde(skip)]
    pub duplicate_fallback: bool,
}

/// Full record of one run: initialization entries followed by one entry per
/// iteration, incumbent nonincreasing throughout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoRunRecord {
    pub entries: Vec<RecordEntry>,
    pub init_count: usize,
}

impl BoRunRecord {
    /// Best structure and objective value, ties broken by earliest entry.
    pub fn incumbent(&self) -> Result<(&str, f64), BoError> {
        let mut best: Option<&RecordEntry> = None;
        for e in &self.entries {
            if best.as_ref().is_none_or(|b| e.y < b.y) {
                best = Some(e);
            }
        }
        best.map(|e| (e.x.as_str(), e.y)).ok_or(BoError::EmptyRecord)
    }

    /// Incumbent value after iteration `t` (with `t = 0` meaning after
    /// initialization).
    pub fn incumbent_at(&self, t: usize) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.t <= t)
            .map(|e| e.best)
            .last()
    }

    /// Reloads a record from its streamed form, skipping `#` header lines.
    pub fn from_stream(reader: impl std::io::BufRead) -> Result<Self, BoError> {
        let mut entries: Vec<RecordEntry> = Vec::new();
        let mut init_count = 0;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let entry: RecordEntry =
                serde_json::from_str(trimmed).map_err(|e| BoError::Stream {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if entry.t == 0 {
                init_count += 1;
            }
            entries.push(entry);
        }
        Ok(Self {
            entries,
            init_count,
        })
    }
}

fn write_entry(
    entry: &RecordEntry,
    emit_timing: bool,
    out: &mut dyn Write,
) -> Result<(), BoError> {
    let mut wire = entry.clone();
    if !emit_timing {
        wire.seconds = 0.0;
    }
    serde_json::to_writer(&mut *out, &wire).map_err(std::io::Error::other)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Samples `init_count` distinct database structures uniformly without
/// replacement, encodes them, and evaluates the objective.
pub fn init_dataset(
    latent: &dyn LatentModel,
    objective: &dyn Fn(&crate::latent::Structure) -> f64,
    init_count: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<EvaluatedTriple>, Vec<usize>) {
    let n = latent.database().len();
    assert!(init_count <= n, "init_count exceeds database size");
    // Partial Fisher–Yates over the index range.
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..init_count {
        let j = i + rng.random_range(0..(n - i));
        indices.swap(i, j);
    }
    indices.truncate(init_count);

    let triples = indices
        .iter()
        .map(|&idx| {
            let x = latent.database()[idx].clone();
            let z = latent.encode(&x);
            let y = objective(&x);
            EvaluatedTriple::new(z, x, y)
        })
        .collect();
    (triples, indices)
}

/// Runs the full loop. When `stream` is given, every entry is appended (and
/// flushed) as soon as it exists, so a crash leaves a loadable partial
/// record behind.
pub fn run(
    cfg: &BoConfig,
    latent: &dyn LatentModel,
    objective: &dyn Fn(&crate::latent::Structure) -> f64,
    mut stream: Option<&mut dyn Write>,
) -> Result<BoRunRecord, BoError> {
    if cfg.init_count < 2 {
        return Err(BoError::Config(format!(
            "init_count must be at least 2, got {}",
            cfg.init_count
        )));
    }
    if cfg.init_count > latent.database().len() {
        return Err(BoError::Config(format!(
            "init_count {} exceeds database size {}",
            cfg.init_count,
            latent.database().len()
        )));
    }

    // Initialization is method-independent: at a fixed seed, every method
    // starts from the same dataset.
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[tag::INIT]));
    let start = Instant::now();
    let (mut triples, init_indices) =
        init_dataset(latent, objective, cfg.init_count, &mut init_rng);
    let init_seconds = start.elapsed().as_secs_f64() / cfg.init_count as f64;

    let mut record = BoRunRecord {
        entries: Vec::with_capacity(cfg.init_count + cfg.iterations),
        init_count: cfg.init_count,
    };
    let mut evaluated: HashSet<usize> = HashSet::new();
    let mut best = f64::INFINITY;
    for (triple, &idx) in triples.iter().zip(&init_indices) {
        evaluated.insert(idx);
        best = best.min(triple.y);
        let entry = RecordEntry {
            t: 0,
            z: triple.z.clone(),
            x: triple.x.serialize(),
            y: triple.y,
            best,
            seconds: init_seconds,
            jitter: 0.0,
            duplicate_fallback: false,
        };
        if let Some(out) = stream.as_deref_mut() {
            write_entry(&entry, cfg.emit_timing, out)?;
        }
        record.entries.push(entry);
    }

    let mut fit_rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[tag::GP_FIT]));
    let mut acq_rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[tag::ACQUISITION]));
    let mut gp_cfg = cfg.gp.clone();

    for t in 1..=cfg.iterations {
        let iter_start = Instant::now();
        let model = fit_hyperparams(
            &triples,
            cfg.method.kernel_mode(),
            cfg.method.structured_spec(),
            &gp_cfg,
            &mut fit_rng,
        )?;
        gp_cfg.warm_start = Some(model.theta().to_vec());

        let (selected, was_fallback): (SelectedCandidate, bool) = match optimize_acquisition(
            &model,
            latent,
            best,
            &evaluated,
            &cfg.acq,
            &mut acq_rng,
        ) {
            Ok(sel) => (sel, false),
            // Budget accounting stays honest: the iteration still costs one
            // evaluation even when only duplicates remain.
            Err(AcqError::AllCandidatesDuplicate { fallback }) => (fallback, true),
            Err(AcqError::Gp(e)) => return Err(BoError::Gp(e)),
        };

        let x = latent.database()[selected.db_index].clone();
        let y = objective(&x);
        evaluated.insert(selected.db_index);
        best = best.min(y);

        let entry = RecordEntry {
            t,
            z: selected.z.clone(),
            x: x.serialize(),
            y,
            best,
            seconds: iter_start.elapsed().as_secs_f64(),
            jitter: model
                .coupled_state()
                .map(|s| s.jitter_used())
                .unwrap_or(0.0),
            duplicate_fallback: was_fallback,
        };
        if let Some(out) = stream.as_deref_mut() {
            write_entry(&entry, cfg.emit_timing, out)?;
        }
        record.entries.push(entry);
        triples.push(EvaluatedTriple::new(selected.z, x, y));
    }

    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmaes::CmaConfig;
    use crate::expr;
    use crate::latent::{build_codebook, CodebookModel, Structure};

    fn small_model(db_size: usize, dim: usize, seed: u64) -> CodebookModel {
        let db = expr::expression_database(db_size, 4, seed);
        build_codebook(&db, dim, seed).unwrap()
    }

    fn fast_cfg(method: BoMethod, iterations: usize, seed: u64) -> BoConfig {
        let mut cfg = BoConfig::new(method, iterations, seed);
        cfg.init_count = 4;
        cfg.acq.cma = CmaConfig {
            sigma0: 0.3,
            population: 10,
            iterations: 4,
            restarts: 3,
            bounds: None,
        };
        cfg.gp = GpFitConfig {
            restarts: 2,
            evals_per_restart: 50,
            ..GpFitConfig::default()
        };
        cfg
    }

    fn objective(x: &Structure) -> f64 {
        expr::structure_objective(x)
    }

    #[test]
    fn zero_iterations_yields_only_init_entries() {
        let model = small_model(40, 3, 1);
        let cfg = fast_cfg(BoMethod::NaiveLsbo, 0, 7);
        let record = run(&cfg, &model, &objective, None).unwrap();
        assert_eq!(record.entries.len(), 4);
        assert!(record.entries.iter().all(|e| e.t == 0));
    }

    #[test]
    fn entry_count_and_incumbent_monotonicity() {
        let model = small_model(60, 3, 2);
        let cfg = fast_cfg(BoMethod::Ladder(StructuredKernelSpec::default()), 5, 3);
        let record = run(&cfg, &model, &objective, None).unwrap();
        assert_eq!(record.entries.len(), 4 + 5);
        let mut prev = f64::INFINITY;
        for e in &record.entries {
            assert!(e.best <= prev + 1e-15);
            assert!(e.best <= e.y);
            prev = e.best;
        }
        // |D_t| = init_count + t: iteration entries are numbered 1..=5.
        let ts: Vec<usize> = record.entries.iter().map(|e| e.t).collect();
        assert_eq!(&ts[4..], &[1, 2, 3, 4, 5]);
    }

    /// Wire bytes with timing suppressed: the deterministic view of a record.
    fn wire_bytes(record: &BoRunRecord) -> Vec<u8> {
        let mut buf = Vec::new();
        for e in &record.entries {
            write_entry(e, false, &mut buf).unwrap();
        }
        buf
    }

    #[test]
    fn methods_share_initialization_at_same_seed() {
        let model = small_model(50, 3, 4);
        let ladder = fast_cfg(BoMethod::Ladder(StructuredKernelSpec::default()), 2, 99);
        let naive = fast_cfg(BoMethod::NaiveLsbo, 2, 99);
        let r1 = run(&ladder, &model, &objective, None).unwrap();
        let r2 = run(&naive, &model, &objective, None).unwrap();
        let w1 = wire_bytes(&BoRunRecord {
            entries: r1.entries[..4].to_vec(),
            init_count: 4,
        });
        let w2 = wire_bytes(&BoRunRecord {
            entries: r2.entries[..4].to_vec(),
            init_count: 4,
        });
        assert_eq!(w1, w2);
    }

    #[test]
    fn recorded_structures_match_decoded_latents() {
        let model = small_model(50, 3, 5);
        let cfg = fast_cfg(BoMethod::Ladder(StructuredKernelSpec::default()), 4, 11);
        let record = run(&cfg, &model, &objective, None).unwrap();
        for e in &record.entries {
            let decoded = model.decode(&e.z);
            assert_eq!(decoded.serialize(), e.x);
        }
    }

    #[test]
    fn stored_objectives_survive_recomputation() {
        let model = small_model(50, 3, 6);
        let cfg = fast_cfg(BoMethod::NaiveLsbo, 4, 13);
        let record = run(&cfg, &model, &objective, None).unwrap();
        for e in &record.entries {
            let x = Structure::from_tokens(e.x.split_whitespace());
            assert_eq!(objective(&x).to_bits(), e.y.to_bits());
        }
    }

    #[test]
    fn incumbent_selects_minimum_with_earliest_tie() {
        let mk = |t: usize, y: f64| RecordEntry {
            t,
            z: vec![],
            x: format!("x{t}"),
            y,
            best: 0.0,
            seconds: 0.0,
            jitter: 0.0,
            duplicate_fallback: false,
        };
        let record = BoRunRecord {
            entries: vec![mk(1, 3.0), mk(2, 1.0), mk(3, 2.0), mk(4, 1.0)],
            init_count: 0,
        };
        let (x, y) = record.incumbent().unwrap();
        assert_eq!((x, y), ("x2", 1.0));

        let empty = BoRunRecord::default();
        assert!(matches!(empty.incumbent(), Err(BoError::EmptyRecord)));
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let model = small_model(50, 3, 7);
        let cfg = fast_cfg(BoMethod::Ladder(StructuredKernelSpec::default()), 3, 17);
        let r1 = run(&cfg, &model, &objective, None).unwrap();
        let r2 = run(&cfg, &model, &objective, None).unwrap();
        assert_eq!(wire_bytes(&r1), wire_bytes(&r2));
    }

    #[test]
    fn stream_round_trips_and_resumes_partial_records() {
        let model = small_model(50, 3, 8);
        let cfg = fast_cfg(BoMethod::NaiveLsbo, 3, 19);
        let mut buf: Vec<u8> = b"# header line\n".to_vec();
        let record = run(&cfg, &model, &objective, Some(&mut buf)).unwrap();
        let reloaded = BoRunRecord::from_stream(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(reloaded.entries.len(), record.entries.len());
        assert_eq!(reloaded.init_count, 4);
        for (a, b) in reloaded.entries.iter().zip(&record.entries) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.z, b.z);
            assert_eq!(a.x, b.x);
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.best.to_bits(), b.best.to_bits());
            assert_eq!(a.seconds, 0.0); // timing suppressed by default
        }

        // A truncated stream still loads: crash-resumable.
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        let partial = BoRunRecord::from_stream(std::io::Cursor::new(cut)).unwrap();
        assert_eq!(partial.entries.len(), 4);
    }

    #[test]
    fn wire_format_has_exact_field_order() {
        let entry = RecordEntry {
            t: 3,
            z: vec![0.5, -1.0],
            x: "v + 1".into(),
            y: 2.5,
            best: 1.25,
            seconds: 0.0,
            jitter: 9.9,
            duplicate_fallback: true,
        };
        let json = serde_json::to_string(&entry).unwrap();
        assert_eq!(
            json,
            r#"{"t":3,"z":[0.5,-1.0],"x":"v + 1","y":2.5,"best":1.25,"seconds":0.0}"#
        );
    }

    #[test]
    fn init_dataset_exhausts_database_when_asked() {
        let model = small_model(12, 3, 9);
        let n = model.len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (triples, indices) = init_dataset(&model, &objective, n, &mut rng);
        assert_eq!(triples.len(), n);
        let unique: HashSet<usize> = indices.iter().copied().collect();
        assert_eq!(unique.len(), n);
        for t in &triples {
            assert_eq!(model.decode(&t.z), &t.x);
        }
    }

    #[test]
    fn run_rejects_bad_init_count() {
        let model = small_model(10, 2, 10);
        let mut cfg = fast_cfg(BoMethod::NaiveLsbo, 1, 1);
        cfg.init_count = 1;
        assert!(matches!(
            run(&cfg, &model, &objective, None),
            Err(BoError::Config(_))
        ));
        cfg.init_count = model.len() + 1;
        assert!(matches!(
            run(&cfg, &model, &objective, None),
            Err(BoError::Config(_))
        ));
    }
}
