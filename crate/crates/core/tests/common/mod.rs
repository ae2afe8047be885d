//! Test-only oracles, independent of the implementation paths they check.

use std::collections::HashMap;

/// Brute-force subsequence string kernel: enumerates every index tuple of
/// every subsequence length, accumulates the gap-decayed occurrence weight
/// per subsequence, and takes the match-decay-weighted inner product of the
/// two occurrence maps. Exponential in `max_len`; fine for short sequences.
pub fn string_kernel_bruteforce<T: Clone + Eq + std::hash::Hash>(
    s1: &[T],
    s2: &[T],
    gap_decay: f64,
    match_decay: f64,
    max_len: usize,
    exact_length: bool,
) -> f64 {
    let rho1 = occurrence_map(s1, gap_decay, max_len);
    let rho2 = occurrence_map(s2, gap_decay, max_len);
    let mut total = 0.0;
    for (u, w1) in &rho1 {
        if exact_length && u.len() != max_len {
            continue;
        }
        if let Some(w2) = rho2.get(u) {
            total += match_decay.powi(2 * u.len() as i32) * w1 * w2;
        }
    }
    total
}

/// For every subsequence `u` of length 1..=`max_len`, the sum over index
/// tuples `i_1 < … < i_|u|` matching `u` of `gap_decay^(i_last - i_first)`.
fn occurrence_map<T: Clone + Eq + std::hash::Hash>(
    s: &[T],
    gap_decay: f64,
    max_len: usize,
) -> HashMap<Vec<T>, f64> {
    let mut map = HashMap::new();
    let mut tuple = Vec::new();
    enumerate_tuples(s, 0, max_len, &mut tuple, &mut map, gap_decay);
    map
}

fn enumerate_tuples<T: Clone + Eq + std::hash::Hash>(
    s: &[T],
    start: usize,
    max_len: usize,
    tuple: &mut Vec<usize>,
    map: &mut HashMap<Vec<T>, f64>,
    gap_decay: f64,
) {
    for i in start..s.len() {
        tuple.push(i);
        let u: Vec<T> = tuple.iter().map(|&idx| s[idx].clone()).collect();
        let span = (tuple[tuple.len() - 1] - tuple[0]) as i32;
        *map.entry(u).or_insert(0.0) += gap_decay.powi(span);
        if tuple.len() < max_len {
            enumerate_tuples(s, i + 1, max_len, tuple, map, gap_decay);
        }
        tuple.pop();
    }
}

/// All sequences over `alphabet_size` symbols with lengths 0..=`max_len`.
pub fn all_sequences(alphabet_size: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = vec![vec![]];
    let mut frontier: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for sym in 0..alphabet_size {
                let mut s = seq.clone();
                s.push(sym);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
