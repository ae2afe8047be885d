//! The arithmetic-expression benchmark: a small grammar over univariate
//! expressions, a depth-bounded random generator, a recursive-descent parser,
//! an evaluator, and the log-MSE objective against the target expression
//! `1/3 · v · sin(v²)`.
//!
//! The grammar is
//!
//! ```text
//! S → S '+' T | S '*' T | S '/' T | T
//! T → '(' S ')' | 'sin(' S ')' | 'exp(' S ')' | 'v' | '1' | '2' | '3'
//! ```
//!
//! Note that `+`, `*` and `/` all live on the same nonterminal, so they share
//! one precedence level and associate left: `v + 1 * 2` parses as
//! `(v + 1) * 2`, *not* as school arithmetic would group it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::latent::Structure;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("syntax error at token {position}: {message}")]
    SyntaxError { position: usize, message: String },
}

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

/// Terminals of the expression grammar. `sin(` and `exp(` are single tokens:
/// the grammar's terminals are multi-character, so the kernel alphabet works
/// on tokens, not characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExprToken {
    Plus,
    Star,
    Slash,
    LParen,
    RParen,
    SinOpen,
    ExpOpen,
    Var,
    One,
    Two,
    Three,
}

impl ExprToken {
    pub fn as_str(self) -> &'static str {
        match self {
            ExprToken::Plus => "+",
            ExprToken::Star => "*",
            ExprToken::Slash => "/",
            ExprToken::LParen => "(",
            ExprToken::RParen => ")",
            ExprToken::SinOpen => "sin(",
            ExprToken::ExpOpen => "exp(",
            ExprToken::Var => "v",
            ExprToken::One => "1",
            ExprToken::Two => "2",
            ExprToken::Three => "3",
        }
    }

    pub fn parse_token(s: &str) -> Option<Self> {
        Some(match s {
            "+" => ExprToken::Plus,
            "*" => ExprToken::Star,
            "/" => ExprToken::Slash,
            "(" => ExprToken::LParen,
            ")" => ExprToken::RParen,
            "sin(" => ExprToken::SinOpen,
            "exp(" => ExprToken::ExpOpen,
            "v" => ExprToken::Var,
            "1" => ExprToken::One,
            "2" => ExprToken::Two,
            "3" => ExprToken::Three,
            _ => return None,
        })
    }
}

/// Splits a space-separated expression string into grammar tokens.
pub fn tokenize(s: &str) -> Result<Vec<ExprToken>, ExprError> {
    s.split_whitespace()
        .enumerate()
        .map(|(i, piece)| {
            ExprToken::parse_token(piece).ok_or_else(|| ExprError::SyntaxError {
                position: i,
                message: format!("unknown token `{piece}`"),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

/// A derivation of the grammar's start symbol. Parenthesized groups are kept
/// as explicit nodes so that serialize → parse reproduces the tree exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprTree {
    Add(Box<ExprTree>, Box<ExprTree>),
    Mul(Box<ExprTree>, Box<ExprTree>),
    Div(Box<ExprTree>, Box<ExprTree>),
    Paren(Box<ExprTree>),
    Sin(Box<ExprTree>),
    Exp(Box<ExprTree>),
    Var,
    Const(u8),
}

impl ExprTree {
    /// Serializes to the grammar's token sequence.
    pub fn tokens(&self) -> Vec<ExprToken> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<ExprToken>) {
        match self {
            ExprTree::Add(a, b) | ExprTree::Mul(a, b) | ExprTree::Div(a, b) => {
                a.push_tokens(out);
                out.push(match self {
                    ExprTree::Add(..) => ExprToken::Plus,
                    ExprTree::Mul(..) => ExprToken::Star,
                    _ => ExprToken::Slash,
                });
                b.push_tokens(out);
            }
            ExprTree::Paren(inner) => {
                out.push(ExprToken::LParen);
                inner.push_tokens(out);
                out.push(ExprToken::RParen);
            }
            ExprTree::Sin(inner) => {
                out.push(ExprToken::SinOpen);
                inner.push_tokens(out);
                out.push(ExprToken::RParen);
            }
            ExprTree::Exp(inner) => {
                out.push(ExprToken::ExpOpen);
                inner.push_tokens(out);
                out.push(ExprToken::RParen);
            }
            ExprTree::Var => out.push(ExprToken::Var),
            ExprTree::Const(c) => out.push(match c {
                1 => ExprToken::One,
                2 => ExprToken::Two,
                3 => ExprToken::Three,
                other => unreachable!("constant {other} is not in the grammar"),
            }),
        }
    }

    /// Space-separated token string, e.g. `sin( v ) * 2`.
    pub fn serialize(&self) -> String {
        self.tokens()
            .iter()
            .map(|t| t.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl std::fmt::Display for ExprTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.serialize())
    }
}

// ---------------------------------------------------------------------------
// Random generation
// ---------------------------------------------------------------------------

/// Expands the start symbol with uniformly random production choices. At
/// depth ≥ `max_depth` the derivation is forced down to a terminal: `S`
/// must choose `T`, and `T` must choose one of `v`, `1`, `2`, `3`.
pub fn generate_expression(rng: &mut ChaCha8Rng, max_depth: usize) -> ExprTree {
    assert!(max_depth >= 1, "max_depth must be at least 1");
    expand_s(rng, 1, max_depth)
}

fn expand_s(rng: &mut ChaCha8Rng, depth: usize, max_depth: usize) -> ExprTree {
    let choice = if depth >= max_depth {
        3 // forced: S → T
    } else {
        rng.random_range(0..4u32)
    };
    match choice {
        0 => ExprTree::Add(
            Box::new(expand_s(rng, depth + 1, max_depth)),
            Box::new(expand_t(rng, depth + 1, max_depth)),
        ),
        1 => ExprTree::Mul(
            Box::new(expand_s(rng, depth + 1, max_depth)),
            Box::new(expand_t(rng, depth + 1, max_depth)),
        ),
        2 => ExprTree::Div(
            Box::new(expand_s(rng, depth + 1, max_depth)),
            Box::new(expand_t(rng, depth + 1, max_depth)),
        ),
        _ => expand_t(rng, depth, max_depth),
    }
}

fn expand_t(rng: &mut ChaCha8Rng, depth: usize, max_depth: usize) -> ExprTree {
    let choice = if depth >= max_depth {
        // forced terminal production
        3 + rng.random_range(0..4u32)
    } else {
        rng.random_range(0..7u32)
    };
    match choice {
        0 => ExprTree::Paren(Box::new(expand_s(rng, depth + 1, max_depth))),
        1 => ExprTree::Sin(Box::new(expand_s(rng, depth + 1, max_depth))),
        2 => ExprTree::Exp(Box::new(expand_s(rng, depth + 1, max_depth))),
        3 => ExprTree::Var,
        4 => ExprTree::Const(1),
        5 => ExprTree::Const(2),
        _ => ExprTree::Const(3),
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Recursive-descent parser. The binary operators all hang off `S`, so the
/// unique parse folds them left-associatively at a single precedence level.
pub fn parse(tokens: &[ExprToken]) -> Result<ExprTree, ExprError> {
    let mut p = Parser { tokens, pos: 0 };
    let tree = p.parse_s()?;
    if p.pos != tokens.len() {
        return Err(ExprError::SyntaxError {
            position: p.pos,
            message: format!("unexpected token `{}`", tokens[p.pos].as_str()),
        });
    }
    Ok(tree)
}

/// Parses a space-separated expression string.
pub fn parse_str(s: &str) -> Result<ExprTree, ExprError> {
    parse(&tokenize(s)?)
}

struct Parser<'a> {
    tokens: &'a [ExprToken],
    pos: usize,
}

impl Parser<'_> {
    fn parse_s(&mut self) -> Result<ExprTree, ExprError> {
        let mut acc = self.parse_t()?;
        while let Some(&tok) = self.tokens.get(self.pos) {
            let make: fn(Box<ExprTree>, Box<ExprTree>) -> ExprTree = match tok {
                ExprToken::Plus => ExprTree::Add,
                ExprToken::Star => ExprTree::Mul,
                ExprToken::Slash => ExprTree::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_t()?;
            acc = make(Box::new(acc), Box::new(rhs));
        }
        Ok(acc)
    }

    fn parse_t(&mut self) -> Result<ExprTree, ExprError> {
        let Some(&tok) = self.tokens.get(self.pos) else {
            return Err(ExprError::SyntaxError {
                position: self.pos,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok {
            ExprToken::LParen => Ok(ExprTree::Paren(Box::new(self.parse_group()?))),
            ExprToken::SinOpen => Ok(ExprTree::Sin(Box::new(self.parse_group()?))),
            ExprToken::ExpOpen => Ok(ExprTree::Exp(Box::new(self.parse_group()?))),
            ExprToken::Var => Ok(ExprTree::Var),
            ExprToken::One => Ok(ExprTree::Const(1)),
            ExprToken::Two => Ok(ExprTree::Const(2)),
            ExprToken::Three => Ok(ExprTree::Const(3)),
            other => Err(ExprError::SyntaxError {
                position: self.pos - 1,
                message: format!("unexpected token `{}`", other.as_str()),
            }),
        }
    }

    fn parse_group(&mut self) -> Result<ExprTree, ExprError> {
        let inner = self.parse_s()?;
        match self.tokens.get(self.pos) {
            Some(ExprToken::RParen) => {
                self.pos += 1;
                Ok(inner)
            }
            Some(other) => Err(ExprError::SyntaxError {
                position: self.pos,
                message: format!("expected `)`, found `{}`", other.as_str()),
            }),
            None => Err(ExprError::SyntaxError {
                position: self.pos,
                message: "expected `)`, found end of input".into(),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation and objective
// ---------------------------------------------------------------------------

/// Recursive evaluation at the point `v`. Division by a near-zero
/// denominator and overflowing `exp` produce non-finite values, which
/// propagate up and are scored by the objective's penalty path.
pub fn evaluate(tree: &ExprTree, v: f64) -> f64 {
    match tree {
        ExprTree::Add(a, b) => evaluate(a, v) + evaluate(b, v),
        ExprTree::Mul(a, b) => evaluate(a, v) * evaluate(b, v),
        ExprTree::Div(a, b) => {
            let den = evaluate(b, v);
            if den.abs() < 1e-12 {
                f64::NAN
            } else {
                evaluate(a, v) / den
            }
        }
        ExprTree::Paren(inner) => evaluate(inner, v),
        ExprTree::Sin(inner) => evaluate(inner, v).sin(),
        ExprTree::Exp(inner) => evaluate(inner, v).exp(),
        ExprTree::Var => v,
        ExprTree::Const(c) => f64::from(*c),
    }
}

/// Number of evaluation grid points.
pub const OBJECTIVE_GRID: usize = 1000;
/// MSE values below this floor are clamped before taking the log.
pub const MSE_FLOOR: f64 = 1e-10;
/// Objective value charged when any grid evaluation is non-finite.
pub fn objective_penalty() -> f64 {
    1e10f64.ln()
}

/// Target values `1/3 · v · sin(v²)` on the evaluation grid.
fn target(v: f64) -> f64 {
    1.0 / 3.0 * v * (v * v).sin()
}

/// The benchmark objective (to be minimized): the log mean-squared error
/// between the expression and the target `1/3 · v · sin(v²)` over 1000
/// evenly spaced values of `v` in `[-10, 10]` (both endpoints included).
/// The MSE is clamped into `[1e-10, 1e10]` before the log, so the objective
/// is bounded; any non-finite evaluation scores the ceiling `ln(1e10)`.
/// Without the ceiling an expression with a finite astronomical MSE would
/// score worse than one that overflows outright, which inverts the intended
/// ordering.
pub fn objective(tree: &ExprTree) -> f64 {
    let mut sum_sq = 0.0;
    for i in 0..OBJECTIVE_GRID {
        let v = -10.0 + 20.0 * i as f64 / (OBJECTIVE_GRID - 1) as f64;
        let y = evaluate(tree, v);
        if !y.is_finite() {
            return objective_penalty();
        }
        let e = y - target(v);
        sum_sq += e * e;
    }
    let mse = sum_sq / OBJECTIVE_GRID as f64;
    if !mse.is_finite() {
        return objective_penalty();
    }
    mse.clamp(MSE_FLOOR, 1e10).ln()
}

/// The target expression itself, as a tree of this grammar:
/// `1 / 3 * v * sin( v * v )`.
pub fn target_tree() -> ExprTree {
    parse_str("1 / 3 * v * sin( v * v )").expect("target expression is grammatical")
}

// ---------------------------------------------------------------------------
// Benchmark glue
// ---------------------------------------------------------------------------

/// Default codebook database size for the benchmark.
pub const DEFAULT_DATABASE_SIZE: usize = 5000;
/// Default generation depth bound for database expressions.
pub const DEFAULT_MAX_DEPTH: usize = 6;

/// Generates `count` distinct expressions (deduplicated by token string) at
/// the given depth bound, as structures for the codebook database.
pub fn expression_database(count: usize, max_depth: usize, seed: u64) -> Vec<Structure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(count);
    // The grammar admits vastly more than `count` distinct expressions at
    // any realistic depth; cap attempts anyway so a misconfiguration cannot
    // spin forever.
    let max_attempts = count.saturating_mul(200).max(10_000);
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        let tree = generate_expression(&mut rng, max_depth);
        let structure = Structure::from_tokens(tree.tokens().iter().map(|t| t.as_str()));
        if seen.insert(structure.clone()) {
            out.push(structure);
        }
    }
    out
}

/// Objective of a token structure: parse and score. Structures that are not
/// token sequences or fail to parse score the penalty value; the codebook
/// database only ever contains grammatical token sequences, so this path is
/// exercised only by malformed external files.
pub fn structure_objective(x: &Structure) -> f64 {
    let Some(tokens) = x.tokens() else {
        return objective_penalty();
    };
    let parsed = tokens
        .iter()
        .map(|t| ExprToken::parse_token(t))
        .collect::<Option<Vec<_>>>()
        .and_then(|toks| parse(&toks).ok());
    match parsed {
        Some(tree) => objective(&tree),
        None => objective_penalty(),
    }
}
