//! Online triplet mining over a batch's normalized embeddings.
//!
//! Every ordered same-class pair (anchor, positive) is a candidate; the
//! strategy picks one negative per pair using the triplet score
//! `d(A,P) - d(A,N) + margin` on squared distances:
//!
//! * `hard`: the negative minimizing `d(A,N)` (ties to the lowest index);
//!   the pair is dropped when even that score is not positive.
//! * `semi_hard`: uniformly random among negatives with
//!   `0 < score <= margin`, the band where the negative is farther than the
//!   positive but still inside the margin.
//! * `random_hard`: uniformly random among negatives with `score > 0`.
//!
//! Pairs with no qualifying negative are dropped. Selection is driven by a
//! single seeded stream consumed in pair order; pairs that select nothing
//! draw nothing, and `hard` never draws.

use crate::error::{Error, Result};
use crate::model::EmbeddingBatch;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Hard,
    SemiHard,
    RandomHard,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Hard => "hard",
            Strategy::SemiHard => "semi_hard",
            Strategy::RandomHard => "random_hard",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Strategy> {
        match s {
            "hard" => Ok(Strategy::Hard),
            "semi_hard" => Ok(Strategy::SemiHard),
            "random_hard" => Ok(Strategy::RandomHard),
            _ => Err(Error::invalid(format!(
                "strategy must be hard, semi_hard, or random_hard, got {s:?}"
            ))),
        }
    }
}

/// Symmetric matrix of squared Euclidean distances between embedding rows.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub strategy: Strategy,
    pub margin: f64,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Scales every row to unit Euclidean norm. Zero rows cannot be normalized;
/// they pass through unchanged and their indices are returned for the caller
/// to warn about.
pub fn normalize_embeddings(e: &EmbeddingBatch) -> Result<(EmbeddingBatch, Vec<usize>)> {
    let (b, dim) = e.features.dims2()?;
    let mut out = e.features.clone();
    let mut zero_rows = Vec::new();
    for i in 0..b {
        let row = &mut out.data_mut()[i * dim..(i + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_rows.push(i);
        } else {
            for v in row {
                *v /= norm;
            }
        }
    }
    Ok((EmbeddingBatch { features: out, labels: e.labels.clone() }, zero_rows))
}

pub fn distance_matrix(e: &EmbeddingBatch) -> Result<DistanceMatrix> {
    let (b, dim) = e.features.dims2()?;
    let fs = e.features.data();
    let mut d = vec![0.0; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let mut acc = 0.0;
            for v in 0..dim {
                let diff = fs[i * dim + v] - fs[j * dim + v];
                acc += diff * diff;
            }
            d[i * b + j] = acc;
            d[j * b + i] = acc;
        }
    }
    Ok(DistanceMatrix { n: b, d })
}

/// Mines one triplet per qualifying anchor-positive pair. Embeddings should
/// already be normalized (see [`normalize_embeddings`]); the function itself
/// works on whatever features it is given. A single-class batch yields an
/// empty set, which the training loop logs rather than fails on.
pub fn mine_triplets(
    e: &EmbeddingBatch,
    strategy: Strategy,
    margin: f64,
    rng_seed: u64,
) -> Result<TripletSet> {
    let (b, _) = e.features.dims2()?;
    if e.labels.len() != b {
        return Err(Error::shape(format!(
            "{b} embedding rows but {} labels",
            e.labels.len()
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::invalid(format!("margin must be non-negative, got {margin}")));
    }
    let dm = distance_matrix(e)?;
    let labels = &e.labels;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut triplets = Vec::new();
    let mut qualifiers = Vec::new();
    for a in 0..b {
        for p in 0..b {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let dap = dm.get(a, p);
            match strategy {
                Strategy::Hard => {
                    // Minimal d(A,N) maximizes the score; scan order breaks
                    // ties toward the lowest index.
                    let mut best: Option<(usize, f64)> = None;
                    for n in 0..b {
                        if labels[n] == labels[a] {
                            continue;
                        }
                        let dan = dm.get(a, n);
                        if best.is_none_or(|(_, d)| dan < d) {
                            best = Some((n, dan));
                        }
                    }
                    if let Some((n, dan)) = best {
                        if dap - dan + margin > 0.0 {
                            triplets.push(Triplet { anchor: a, positive: p, negative: n });
                        }
                    }
                }
                Strategy::SemiHard | Strategy::RandomHard => {
                    qualifiers.clear();
                    for n in 0..b {
                        if labels[n] == labels[a] {
                            continue;
                        }
                        let score = dap - dm.get(a, n) + margin;
                        let ok = match strategy {
                            Strategy::SemiHard => score > 0.0 && score <= margin,
                            _ => score > 0.0,
                        };
                        if ok {
                            qualifiers.push(n);
                        }
                    }
                    if !qualifiers.is_empty() {
                        let n = qualifiers[rng.random_range(0..qualifiers.len())];
                        triplets.push(Triplet { anchor: a, positive: p, negative: n });
                    }
                }
            }
        }
    }
    Ok(TripletSet { triplets, strategy, margin })
}

/// Appends one CSV row per triplet: iteration, indices, both squared
/// distances, and the triplet score. Intended for debugging dumps.
pub fn write_triplets_csv(
    w: &mut impl Write,
    iteration: u64,
    set: &TripletSet,
    dm: &DistanceMatrix,
) -> std::io::Result<()> {
    for t in &set.triplets {
        let dap = dm.get(t.anchor, t.positive);
        let dan = dm.get(t.anchor, t.negative);
        writeln!(
            w,
            "{iteration},{},{},{},{},{},{}",
            t.anchor,
            t.positive,
            t.negative,
            dap,
            dan,
            dap - dan + set.margin
        )?;
    }
    Ok(())
}
