//! The three training losses and their gradients.
//!
//! The objective is a weighted sum of a reconstruction term (per-image mean
//! squared error, summed over the batch), a triplet hinge on squared feature
//! distances, and a squared-norm feature regularizer:
//! `total = lambda_ae * ae + lambda_sm * sm + lambda_fr * fr`.
//!
//! The hinge has two modes. `per_triplet` (the default, and what mining
//! scores use) hinges every triplet separately:
//! `sum_i max(d(A_i,P_i) - d(A_i,N_i) + margin, 0)`. `batch` keeps one hinge
//! over the whole sum, `max(sum_i (d(A_i,P_i) - d(A_i,N_i) + margin), 0)`,
//! so one strongly satisfied triplet can cancel a violated one. Distances
//! are squared Euclidean; no square roots appear in any loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Loss term weights and the triplet margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ae: f64,
    pub lambda_sm: f64,
    pub lambda_fr: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights { lambda_ae: 1.0, lambda_sm: 1.0, lambda_fr: 1.0, margin: 0.5 }
    }
}

impl LossWeights {
    /// Parses the `AE:SM:FR` weight notation, e.g. `"1:5:1"`. The margin
    /// keeps its default and is set separately.
    pub fn from_ratio(s: &str) -> Result<LossWeights> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "loss weights must be AE:SM:FR, got {s:?}"
            )));
        }
        let mut vals = [0.0; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad loss weight {p:?} in {s:?}")))?;
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::invalid(format!(
                    "loss weights must be non-negative, got {p:?}"
                )));
            }
        }
        Ok(LossWeights {
            lambda_ae: vals[0],
            lambda_sm: vals[1],
            lambda_fr: vals[2],
            ..LossWeights::default()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeMode {
    PerTriplet,
    Batch,
}

impl std::str::FromStr for HingeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<HingeMode> {
        match s {
            "per_triplet" => Ok(HingeMode::PerTriplet),
            "batch" => Ok(HingeMode::Batch),
            _ => Err(Error::invalid(format!(
                "hinge mode must be per_triplet or batch, got {s:?}"
            ))),
        }
    }
}

/// One training step's loss values. `total` is computed once, in a fixed
/// order, and reused everywhere (logs, plots).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ae: f64,
    pub sm: f64,
    pub fr: f64,
    pub total: f64,
    pub n_triplets: usize,
}

pub fn total_loss(ae: f64, sm: f64, fr: f64, n_triplets: usize, w: &LossWeights) -> LossReport {
    let total = w.lambda_ae * ae + w.lambda_sm * sm + w.lambda_fr * fr;
    LossReport { ae, sm, fr, total, n_triplets }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Reconstruction loss: per-image MSE (averaged over all `C*H*W` elements of
/// one image), summed over the batch.
pub fn autoencoder_loss(originals: &Tensor, reconstructions: &Tensor) -> Result<f64> {
    Ok(autoencoder_loss_grad(originals, reconstructions)?.0)
}

/// Loss plus its gradient with respect to the reconstructions.
pub fn autoencoder_loss_grad(
    originals: &Tensor,
    reconstructions: &Tensor,
) -> Result<(f64, Tensor)> {
    check_same_shape(originals, reconstructions, "autoencoder loss")?;
    let (b, c, h, w) = originals.dims4()?;
    let per_image = (c * h * w) as f64;
    let os = originals.data();
    let rs = reconstructions.data();
    let mut grad = Tensor::zeros(originals.shape());
    let gs = grad.data_mut();
    let mut loss = 0.0;
    for bi in 0..b {
        let lo = bi * c * h * w;
        let hi = lo + c * h * w;
        let mut acc = 0.0;
        for i in lo..hi {
            let d = rs[i] - os[i];
            acc += d * d;
            gs[i] = 2.0 * d / per_image;
        }
        loss += acc / per_image;
    }
    Ok((loss, grad))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Triplet hinge loss over aligned anchor/positive/negative feature rows.
/// Zero triplets is a legitimate quiet outcome (single-class batch), not an
/// error; the caller's [`LossReport`] records `n_triplets = 0`.
pub fn siamese_loss(
    fa: &Tensor,
    fp: &Tensor,
    fng: &Tensor,
    margin: f64,
    mode: HingeMode,
) -> Result<f64> {
    Ok(siamese_loss_grad(fa, fp, fng, margin, mode)?.0)
}

/// Loss plus gradients with respect to the three feature tensors.
///
/// The hinge subgradient at the kink is 0: a triplet (or, in batch mode, the
/// whole batch) contributes gradient only when strictly above the floor.
pub fn siamese_loss_grad(
    fa: &Tensor,
    fp: &Tensor,
    fng: &Tensor,
    margin: f64,
    mode: HingeMode,
) -> Result<(f64, Tensor, Tensor, Tensor)> {
    check_same_shape(fa, fp, "siamese loss anchors vs positives")?;
    check_same_shape(fa, fng, "siamese loss anchors vs negatives")?;
    let (nb, dim) = fa.dims2()?;
    let mut ga = Tensor::zeros(fa.shape());
    let mut gp = Tensor::zeros(fa.shape());
    let mut gn = Tensor::zeros(fa.shape());
    if nb == 0 {
        return Ok((0.0, ga, gp, gn));
    }

    let scores: Vec<f64> = (0..nb)
        .map(|i| {
            let r = i * dim..(i + 1) * dim;
            let dap = squared_distance(&fa.data()[r.clone()], &fp.data()[r.clone()]);
            let dan = squared_distance(&fa.data()[r.clone()], &fng.data()[r]);
            dap - dan + margin
        })
        .collect();

    let (loss, active): (f64, Vec<bool>) = match mode {
        HingeMode::PerTriplet => {
            let mut loss = 0.0;
            let active = scores
                .iter()
                .map(|&s| {
                    if s > 0.0 {
                        loss += s;
                        true
                    } else {
                        false
                    }
                })
                .collect();
            (loss, active)
        }
        HingeMode::Batch => {
            let sum: f64 = scores.iter().sum();
            if sum > 0.0 {
                (sum, vec![true; nb])
            } else {
                (0.0, vec![false; nb])
            }
        }
    };

    for i in 0..nb {
        if !active[i] {
            continue;
        }
        for v in 0..dim {
            let k = i * dim + v;
            let a = fa.data()[k];
            let p = fp.data()[k];
            let n = fng.data()[k];
            ga.data_mut()[k] = 2.0 * ((a - p) - (a - n));
            gp.data_mut()[k] = -2.0 * (a - p);
            gn.data_mut()[k] = 2.0 * (a - n);
        }
    }
    Ok((loss, ga, gp, gn))
}

/// Feature regularizer: the sum of squared feature values over the batch.
pub fn feature_reg_loss(features: &Tensor) -> f64 {
    features.data().iter().map(|&v| v * v).sum()
}

/// Loss plus its gradient (`2 * features`).
pub fn feature_reg_loss_grad(features: &Tensor) -> (f64, Tensor) {
    (feature_reg_loss(features), features.map(|v| 2.0 * v))
}
