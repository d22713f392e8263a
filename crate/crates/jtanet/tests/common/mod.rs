//! Independent oracles for the acceptance suite.
//!
//! Everything here is deliberately written as plain scalar loops over the
//! obvious definitions, sharing no code with the library internals, so a
//! bug in the optimized paths cannot hide in its own test.

use jtanet::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const FD_H: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central finite-difference check of `analytic` against the scalar map `f`.
pub fn fd_check(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, analytic: &Tensor, label: &str) {
    assert_eq!(x.shape(), analytic.shape(), "{label}: gradient shape");
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += FD_H;
        let mut xm = x.clone();
        xm.data_mut()[k] -= FD_H;
        let fd = (f(&xp) - f(&xm)) / (2.0 * FD_H);
        let a = analytic.data()[k];
        let denom = a.abs().max(fd.abs()).max(1e-3);
        assert!(
            (a - fd).abs() / denom < FD_REL_TOL,
            "{label} element {k}: analytic {a} vs finite difference {fd}"
        );
    }
}

/// Reconstruction loss by definition: for each image, the mean over all of
/// its channels and pixels of the squared difference, summed over the batch.
pub fn oracle_reconstruction_loss(originals: &Tensor, reconstructions: &Tensor) -> f64 {
    let shape = originals.shape();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut total = 0.0;
    for bi in 0..b {
        let mut acc = 0.0;
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let o = originals.at(&[bi, ci, y, x]);
                    let r = reconstructions.at(&[bi, ci, y, x]);
                    acc += (o - r) * (o - r);
                }
            }
        }
        total += acc / (c * h * w) as f64;
    }
    total
}

fn row_sq_dist(a: &Tensor, b: &Tensor, i: usize) -> f64 {
    let dim = a.shape()[1];
    let mut acc = 0.0;
    for v in 0..dim {
        let d = a.at(&[i, v]) - b.at(&[i, v]);
        acc += d * d;
    }
    acc
}

/// Triplet hinge by definition, hinging each triplet separately.
pub fn oracle_triplet_loss_per_triplet(fa: &Tensor, fp: &Tensor, fng: &Tensor, margin: f64) -> f64 {
    let nb = fa.shape()[0];
    let mut total = 0.0;
    for i in 0..nb {
        let s = row_sq_dist(fa, fp, i) - row_sq_dist(fa, fng, i) + margin;
        if s > 0.0 {
            total += s;
        }
    }
    total
}

/// Triplet hinge by definition with one hinge over the summed margins.
pub fn oracle_triplet_loss_batch(fa: &Tensor, fp: &Tensor, fng: &Tensor, margin: f64) -> f64 {
    let nb = fa.shape()[0];
    let mut total = 0.0;
    for i in 0..nb {
        total += row_sq_dist(fa, fp, i) - row_sq_dist(fa, fng, i) + margin;
    }
    if total > 0.0 {
        total
    } else {
        0.0
    }
}

/// Feature regularizer by definition.
pub fn oracle_feature_reg_loss(features: &Tensor) -> f64 {
    let (n, dim) = (features.shape()[0], features.shape()[1]);
    let mut total = 0.0;
    for i in 0..n {
        for v in 0..dim {
            let f = features.at(&[i, v]);
            total += f * f;
        }
    }
    total
}

/// Qualifying negatives for one anchor-positive pair, by brute force.
pub struct PairOracle {
    pub anchor: usize,
    pub positive: usize,
    /// Closest negative (lowest index on ties) and whether its triplet score
    /// is positive.
    pub hard: Option<(usize, bool)>,
    /// Negatives with `0 < score <= margin`.
    pub semi: Vec<usize>,
    /// Negatives with `score > 0`.
    pub rand: Vec<usize>,
}

/// Enumerates every ordered same-class pair (anchor-major, then positive)
/// and classifies every negative for it.
pub fn brute_force_pairs(features: &Tensor, labels: &[u32], margin: f64) -> Vec<PairOracle> {
    let n = labels.len();
    let dim = features.shape()[1];
    let dist = |i: usize, j: usize| {
        let mut acc = 0.0;
        for v in 0..dim {
            let d = features.at(&[i, v]) - features.at(&[j, v]);
            acc += d * d;
        }
        acc
    };
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            let dap = dist(a, p);
            let mut hard: Option<(usize, f64)> = None;
            let mut semi = Vec::new();
            let mut rand = Vec::new();
            for ng in 0..n {
                if labels[ng] == labels[a] {
                    continue;
                }
                let dan = dist(a, ng);
                if hard.map_or(true, |(_, d)| dan < d) {
                    hard = Some((ng, dan));
                }
                let score = dap - dan + margin;
                if score > 0.0 {
                    rand.push(ng);
                    if score <= margin {
                        semi.push(ng);
                    }
                }
            }
            out.push(PairOracle {
                anchor: a,
                positive: p,
                hard: hard.map(|(ng, dan)| (ng, dap - dan + margin > 0.0)),
                semi,
                rand,
            });
        }
    }
    out
}

/// Full-scan retrieval by definition: every database row sorted by Euclidean
/// distance, ties toward the lower index.
pub fn oracle_query(db: &Tensor, q: &[f64], delta: usize) -> Vec<(usize, f64)> {
    let (n, dim) = (db.shape()[0], db.shape()[1]);
    let mut all: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for v in 0..dim {
                let d = q[v] - db.at(&[i, v]);
                acc += d * d;
            }
            (i, acc.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(delta);
    all
}
