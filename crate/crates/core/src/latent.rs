//! Encoder/decoder abstraction over a fixed database of structures.
//!
//! The codebook model stands in for a trained deep generative model: each
//! database structure gets a deterministic embedding (a seeded random
//! projection of hashed n-gram count features, standardized per dimension),
//! and decoding maps an arbitrary latent point to the nearest database
//! embedding. Decoding is therefore total, deterministic, and piecewise
//! constant — and every decoded structure lies in the database, which bounds
//! the objective values any optimizer over this latent space can reach.
//!
//! Embeddings exported from a real encoder/decoder model can be loaded from a
//! text file instead ([`load_external_model`]); decoding then uses the same
//! nearest-neighbor rule over the file's entries.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::kernels::{for_each_ngram_hash, Fingerprint};
use crate::seed;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("database entries {first} and {second} received identical embeddings")]
    EmbeddingCollision { first: usize, second: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: embedding has {got} components, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("latent database is empty")]
    EmptyDatabase,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Structures
// ---------------------------------------------------------------------------

/// A combinatorial object: a token sequence (arithmetic expressions) or a
/// binary fingerprint (generic structured inputs).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Structure {
    Tokens(Vec<String>),
    Bits(Fingerprint),
}

impl Structure {
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Structure::Tokens(tokens.into_iter().map(Into::into).collect())
    }

    pub fn tokens(&self) -> Option<&[String]> {
        match self {
            Structure::Tokens(t) => Some(t),
            Structure::Bits(_) => None,
        }
    }

    /// The structure-string form used in result and embedding files:
    /// space-separated tokens. Fingerprints render as `bits:` followed by the
    /// indices of the set bits.
    pub fn serialize(&self) -> String {
        match self {
            Structure::Tokens(t) => t.join(" "),
            Structure::Bits(fp) => {
                let mut s = String::from("bits:");
                let mut first = true;
                for i in 0..fp.width() {
                    if fp.get_bit(i) {
                        if !first {
                            s.push(',');
                        }
                        s.push_str(&i.to_string());
                        first = false;
                    }
                }
                s
            }
        }
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.serialize())
    }
}

// ---------------------------------------------------------------------------
// Latent model
// ---------------------------------------------------------------------------

/// Encoder/decoder pair over a continuous latent space.
///
/// `decode` is total over finite vectors and `decode(encode(x)) == x` for
/// every database structure.
pub trait LatentModel: Send + Sync {
    fn dim(&self) -> usize;

    fn database(&self) -> &[Structure];

    /// Stored embedding of database entry `idx`.
    fn embedding(&self, idx: usize) -> &[f64];

    /// Embeds a structure into the latent space.
    fn encode(&self, x: &Structure) -> Vec<f64>;

    /// Index of the database structure nearest to `z` (Euclidean), ties
    /// broken by the lowest index.
    fn decode_index(&self, z: &[f64]) -> usize;

    fn decode(&self, z: &[f64]) -> &Structure {
        &self.database()[self.decode_index(z)]
    }

    /// Axis-aligned bounding box of the database embeddings.
    fn latent_bounds(&self) -> &[(f64, f64)];
}

/// Default number of hashed n-gram count features fed to the projection.
pub const DEFAULT_FEATURE_WIDTH: usize = 512;
/// Default maximum n-gram length for codebook features.
pub const DEFAULT_MAX_NGRAM: usize = 3;

#[derive(Debug)]
struct HashedEncoder {
    projection: Vec<f64>, // dim × feature_width, row-major
    feature_width: usize,
    max_ngram: usize,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl HashedEncoder {
    fn features(&self, x: &Structure) -> Vec<f64> {
        let mut counts = vec![0.0f64; self.feature_width];
        match x {
            Structure::Tokens(tokens) => {
                for_each_ngram_hash(tokens, self.max_ngram, |h| {
                    counts[(h % self.feature_width as u64) as usize] += 1.0;
                });
            }
            Structure::Bits(fp) => {
                for i in 0..fp.width() {
                    if fp.get_bit(i) {
                        counts[i % self.feature_width] += 1.0;
                    }
                }
            }
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut counts {
                *c /= norm;
            }
        }
        counts
    }

    fn raw_embed(&self, x: &Structure, dim: usize) -> Vec<f64> {
        let phi = self.features(x);
        (0..dim)
            .map(|r| {
                let row = &self.projection[r * self.feature_width..(r + 1) * self.feature_width];
                row.iter().zip(&phi).map(|(p, f)| p * f).sum()
            })
            .collect()
    }

    fn embed(&self, x: &Structure, dim: usize) -> Vec<f64> {
        let mut e = self.raw_embed(x, dim);
        for (j, v) in e.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.sd[j];
        }
        e
    }
}

/// Deterministic codebook latent model over a fixed structure database.
#[derive(Debug)]
pub struct CodebookModel {
    dim: usize,
    structures: Vec<Structure>,
    embeddings: Vec<Vec<f64>>,
    index: HashMap<Structure, usize>,
    encoder: Option<HashedEncoder>,
    bounds: Vec<(f64, f64)>,
}

impl CodebookModel {
    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }
}

/// Builds a codebook over `structures` (duplicates dropped, first occurrence
/// kept) with the default feature configuration.
///
/// The embedding pipeline: hashed n-gram counts, L2-normalized, projected by
/// a `dim × feature_width` matrix with i.i.d. standard-normal entries drawn
/// from `seed`, then standardized per dimension over the database. If two
/// distinct structures collide to identical embeddings the build re-seeds
/// once, then errors.
pub fn build_codebook(
    structures: &[Structure],
    dim: usize,
    seed: u64,
) -> Result<CodebookModel, LatentError> {
    build_codebook_with(structures, dim, seed, DEFAULT_FEATURE_WIDTH, DEFAULT_MAX_NGRAM)
}

pub fn build_codebook_with(
    structures: &[Structure],
    dim: usize,
    seed: u64,
    feature_width: usize,
    max_ngram: usize,
) -> Result<CodebookModel, LatentError> {
    assert!(dim >= 1, "latent dimension must be positive");
    let mut unique = Vec::new();
    let mut index = HashMap::new();
    for s in structures {
        if !index.contains_key(s) {
            index.insert(s.clone(), unique.len());
            unique.push(s.clone());
        }
    }
    if unique.is_empty() {
        return Err(LatentError::EmptyDatabase);
    }

    match try_build(&unique, &index, dim, seed, feature_width, max_ngram) {
        Ok(model) => Ok(model),
        Err(LatentError::EmbeddingCollision { .. }) => {
            let reseeded = seed::derive(seed, &[0xC0]);
            try_build(&unique, &index, dim, reseeded, feature_width, max_ngram)
        }
        Err(e) => Err(e),
    }
}

fn try_build(
    unique: &[Structure],
    index: &HashMap<Structure, usize>,
    dim: usize,
    seed_value: u64,
    feature_width: usize,
    max_ngram: usize,
) -> Result<CodebookModel, LatentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &[seed::tag::CODEBOOK]));
    let projection: Vec<f64> = (0..dim * feature_width)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut encoder = HashedEncoder {
        projection,
        feature_width,
        max_ngram,
        mean: vec![0.0; dim],
        sd: vec![1.0; dim],
    };

    let raw: Vec<Vec<f64>> = unique.iter().map(|s| encoder.raw_embed(s, dim)).collect();
    let m = raw.len() as f64;
    for j in 0..dim {
        // Sorted summation keeps the statistics bit-identical under any
        // permutation of the database.
        let mean = sorted_sum(raw.iter().map(|e| e[j])) / m;
        let var = sorted_sum(raw.iter().map(|e| (e[j] - mean) * (e[j] - mean))) / m;
        encoder.mean[j] = mean;
        encoder.sd[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let embeddings: Vec<Vec<f64>> = unique.iter().map(|s| encoder.embed(s, dim)).collect();

    let model = CodebookModel {
        dim,
        structures: unique.to_vec(),
        embeddings,
        index: index.clone(),
        encoder: Some(encoder),
        bounds: Vec::new(),
    };
    finish_model(model)
}

/// Verifies the codebook invariants (pairwise-distinct embeddings and the
/// decode∘encode identity on the database) and precomputes the bounding box.
fn finish_model(mut model: CodebookModel) -> Result<CodebookModel, LatentError> {
    if let Some((first, second)) = find_collision(&model.embeddings) {
        return Err(LatentError::EmbeddingCollision { first, second });
    }
    for (i, e) in model.embeddings.iter().enumerate() {
        let j = nearest_index(&model.embeddings, e);
        if j != i {
            // Distinct embeddings make self-distance the unique minimum, so
            // reaching this means the embeddings are degenerate after all.
            return Err(LatentError::EmbeddingCollision { first: j, second: i });
        }
    }
    model.bounds = (0..model.dim)
        .map(|j| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for e in &model.embeddings {
                lo = lo.min(e[j]);
                hi = hi.max(e[j]);
            }
            (lo, hi)
        })
        .collect();
    Ok(model)
}

fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Exact-equality collision scan via lexicographic sort: O(m log m · d).
fn find_collision(embeddings: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    order.sort_by(|&a, &b| {
        embeddings[a]
            .iter()
            .map(|v| v.to_bits())
            .cmp(embeddings[b].iter().map(|v| v.to_bits()))
    });
    for w in order.windows(2) {
        if embeddings[w[0]] == embeddings[w[1]] {
            return Some((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    None
}

fn nearest_index(embeddings: &[Vec<f64>], z: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, e) in embeddings.iter().enumerate() {
        let mut d = 0.0;
        for (a, b) in e.iter().zip(z) {
            d += (a - b) * (a - b);
            if d >= best_d {
                break;
            }
        }
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

impl LatentModel for CodebookModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn database(&self) -> &[Structure] {
        &self.structures
    }

    fn embedding(&self, idx: usize) -> &[f64] {
        &self.embeddings[idx]
    }

    fn encode(&self, x: &Structure) -> Vec<f64> {
        if let Some(&i) = self.index.get(x) {
            return self.embeddings[i].clone();
        }
        match &self.encoder {
            Some(enc) => enc.embed(x, self.dim),
            // An externally loaded model has no featurizer; it can only
            // embed structures from its own database.
            None => panic!(
                "externally loaded latent model cannot embed a structure outside its database"
            ),
        }
    }

    fn decode_index(&self, z: &[f64]) -> usize {
        assert_eq!(z.len(), self.dim, "latent vector dimension mismatch");
        nearest_index(&self.embeddings, z)
    }

    fn latent_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
}

// ---------------------------------------------------------------------------
// External embedding files
// ---------------------------------------------------------------------------

/// Loads a latent model from an embedding export: one record per line,
/// `structure-string TAB v1,v2,…,vd`, `#`-lines ignored. Decoding follows
/// the same nearest-neighbor rule as the built codebook.
pub fn load_external_model(path: impl AsRef<Path>) -> Result<CodebookModel, LatentError> {
    let file = std::fs::File::open(path)?;
    read_external_model(std::io::BufReader::new(file))
}

pub fn read_external_model(reader: impl BufRead) -> Result<CodebookModel, LatentError> {
    let mut structures = Vec::new();
    let mut embeddings: Vec<Vec<f64>> = Vec::new();
    let mut index = HashMap::new();
    let mut dim: Option<usize> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((structure_str, vector_str)) = line.split_once('\t') else {
            return Err(LatentError::Parse {
                line: lineno,
                message: "expected `structure-string TAB v1,v2,…`".into(),
            });
        };
        let tokens: Vec<String> = structure_str.split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            return Err(LatentError::Parse {
                line: lineno,
                message: "empty structure string".into(),
            });
        }
        let structure = Structure::Tokens(tokens);
        if index.contains_key(&structure) {
            return Err(LatentError::Parse {
                line: lineno,
                message: format!("duplicate structure `{structure_str}`"),
            });
        }

        let mut vector = Vec::new();
        for piece in vector_str.split(',') {
            let v: f64 = piece.trim().parse().map_err(|_| LatentError::Parse {
                line: lineno,
                message: format!("invalid float `{}`", piece.trim()),
            })?;
            vector.push(v);
        }
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(LatentError::DimensionMismatch {
                    line: lineno,
                    expected: d,
                    got: vector.len(),
                });
            }
            _ => {}
        }

        index.insert(structure.clone(), structures.len());
        structures.push(structure);
        embeddings.push(vector);
    }

    let Some(dim) = dim else {
        return Err(LatentError::EmptyDatabase);
    };
    finish_model(CodebookModel {
        dim,
        structures,
        embeddings,
        index,
        encoder: None,
        bounds: Vec::new(),
    })
}

/// Writes a model's database in the external-embedding file format; loading
/// the result reproduces encode/decode behavior on the database exactly.
pub fn write_embeddings(model: &CodebookModel, mut out: impl Write) -> std::io::Result<()> {
    for (s, e) in model.structures.iter().zip(&model.embeddings) {
        let comps: Vec<String> = e.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}\t{}", s.serialize(), comps.join(","))?;
    }
    Ok(())
}
