//! The joint training loop.
//!
//! Each iteration runs one batch through the encoder, mines triplets from
//! the normalized embeddings, reconstructs the whole batch with the decoder,
//! and backpropagates the weighted sum of the reconstruction, triplet, and
//! feature-regularization losses through both networks in a single pass.
//! The encoder gradient accumulates all three paths; the decoder only sees
//! the reconstruction path. One Adam step per iteration updates everything.
//!
//! Mining is the only consumer of normalized embeddings. The losses take the
//! raw encoder features: a norm penalty on unit vectors would be constant,
//! and the hinge operates on raw squared distances.

use crate::data::{make_batch, DatasetSplit, PatchBatch, PatchRecord};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::loss::{
    autoencoder_loss_grad, feature_reg_loss_grad, siamese_loss_grad, total_loss, HingeMode,
    LossReport, LossWeights,
};
use crate::mining::{mine_triplets, normalize_embeddings, Strategy, TripletSet};
use crate::model::{
    backward_network, decoder_layers, encoder_layers, forward_network, init_params,
    EmbeddingBatch, Mode, ModelConfig, ModelParams,
};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub strategy: Strategy,
    pub weights: LossWeights,
    pub hinge: HingeMode,
    pub seed: u64,
}

impl TrainConfig {
    /// Published defaults: batch 256, 50 epochs, Adam at 0.001, margin 0.5,
    /// unit loss weights.
    pub fn new(model: ModelConfig) -> TrainConfig {
        TrainConfig {
            model,
            batch_size: 256,
            epochs: 50,
            adam: AdamConfig::default(),
            strategy: Strategy::SemiHard,
            weights: LossWeights::default(),
            hinge: HingeMode::PerTriplet,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adam.validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1".to_string()));
        }
        for (name, v) in [
            ("lambda_ae", self.weights.lambda_ae),
            ("lambda_sm", self.weights.lambda_sm),
            ("lambda_fr", self.weights.lambda_fr),
            ("margin", self.weights.margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: u64,
    pub report: LossReport,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LossRow>,
    /// Iteration index on which each epoch started.
    pub epoch_starts: Vec<u64>,
    pub wall_seconds: f64,
}

impl TrainLog {
    /// Writes `iteration,ae,sm,fr,total,n_triplets` rows with a header.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,ae,sm,fr,total,n_triplets")?;
        for row in &self.rows {
            let r = &row.report;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.iteration, r.ae, r.sm, r.fr, r.total, r.n_triplets
            )?;
        }
        Ok(())
    }
}

/// Everything a finished training run produces.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub log: TrainLog,
    pub iterations: u64,
}

/// Gradients and losses for one batch at the current parameters, without
/// applying any update. [`train`] consumes this per iteration; gradient
/// tests call it directly with different loss weights.
#[derive(Debug)]
pub struct StepResult {
    pub report: LossReport,
    pub grads: BTreeMap<String, Tensor>,
    pub running_updates: Vec<(String, Tensor)>,
    pub triplets: TripletSet,
}

fn gather_rows(features: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (_, dim) = features.dims2()?;
    let mut out = Tensor::zeros(&[rows.len(), dim]);
    for (i, &r) in rows.iter().enumerate() {
        out.data_mut()[i * dim..(i + 1) * dim]
            .copy_from_slice(&features.data()[r * dim..(r + 1) * dim]);
    }
    Ok(out)
}

pub fn step_gradients(
    params: &ModelParams,
    batch: &PatchBatch,
    weights: &LossWeights,
    hinge: HingeMode,
    strategy: Strategy,
    mining_seed: u64,
) -> Result<StepResult> {
    let cfg = params.config();
    let (b, _, _, _) = batch.images.dims4()?;
    let enc = forward_network(&encoder_layers(cfg), params, &batch.images, Mode::Train, true)?;
    let dim = cfg.feature_len();
    let features = enc.output.clone().reshape(&[b, dim])?;

    let embeddings = EmbeddingBatch { features: features.clone(), labels: batch.labels.clone() };
    let (normalized, _zero_rows) = normalize_embeddings(&embeddings)?;
    let set = mine_triplets(&normalized, strategy, weights.margin, mining_seed)?;

    let anchors: Vec<usize> = set.triplets.iter().map(|t| t.anchor).collect();
    let positives: Vec<usize> = set.triplets.iter().map(|t| t.positive).collect();
    let negatives: Vec<usize> = set.triplets.iter().map(|t| t.negative).collect();
    let fa = gather_rows(&features, &anchors)?;
    let fp = gather_rows(&features, &positives)?;
    let fng = gather_rows(&features, &negatives)?;
    let (sm, ga, gp, gn) = siamese_loss_grad(&fa, &fp, &fng, weights.margin, hinge)?;

    let (fr, fr_grad) = feature_reg_loss_grad(&features);

    let dec = forward_network(&decoder_layers(cfg), params, &enc.output, Mode::Train, true)?;
    let (ae, ae_grad) = autoencoder_loss_grad(&batch.images, &dec.output)?;
    let mut scaled_ae_grad = ae_grad;
    scaled_ae_grad.scale(weights.lambda_ae);
    let (feat_grad_ae, dec_grads) =
        backward_network(&decoder_layers(cfg), params, &dec.caches, &scaled_ae_grad)?;

    // Combined gradient into the shared features: the reconstruction path
    // arrives through the decoder already weighted; the triplet and
    // regularization paths are weighted here, with triplet contributions
    // scattered back to the batch rows they were gathered from.
    let mut feat_grad = Tensor::zeros(&[b, dim]);
    {
        let fg = feat_grad.data_mut();
        for (i, t) in set.triplets.iter().enumerate() {
            for v in 0..dim {
                fg[t.anchor * dim + v] += weights.lambda_sm * ga.data()[i * dim + v];
                fg[t.positive * dim + v] += weights.lambda_sm * gp.data()[i * dim + v];
                fg[t.negative * dim + v] += weights.lambda_sm * gn.data()[i * dim + v];
            }
        }
        for (g, &f) in fg.iter_mut().zip(fr_grad.data()) {
            *g += weights.lambda_fr * f;
        }
    }
    let feat_grad = feat_grad.reshape(enc.output.shape())?;
    let mut total_feat_grad = feat_grad_ae;
    total_feat_grad.scaled_add(1.0, &feat_grad)?;

    let (_input_grad, enc_grads) =
        backward_network(&encoder_layers(cfg), params, &enc.caches, &total_feat_grad)?;

    let mut grads = enc_grads;
    grads.extend(dec_grads);
    let mut running_updates = enc.running_updates;
    running_updates.extend(dec.running_updates);

    Ok(StepResult {
        report: total_loss(ae, sm, fr, set.len(), weights),
        grads,
        running_updates,
        triplets: set,
    })
}

/// Trains a fresh model on the training split. Deterministic for a given
/// config: parameter init, batch shuffling, and mining draws all have their
/// own streams derived from `config.seed`.
pub fn train(split: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    split.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty".to_string()));
    }
    if split.side != config.model.input_side {
        return Err(Error::shape(format!(
            "dataset patches are {0}x{0} but the model expects {1}x{1}",
            split.side, config.model.input_side
        )));
    }
    let mut classes: Vec<u32> = split.train.iter().map(|r| r.label).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(
            "training needs at least 2 classes for triplet mining".to_string(),
        ));
    }

    let start = Instant::now();
    let mut params = init_params(&config.model, derive_seed(config.seed, "init", 0))?;
    let mut adam = AdamState::new(config.adam)?;
    let mut log = TrainLog::default();
    let mut iteration: u64 = 0;
    let n = split.train.len();

    for epoch in 0..config.epochs {
        log.epoch_starts.push(iteration + 1);
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle", epoch as u64));
        indices.shuffle(&mut rng);

        let mut epoch_last = None;
        for chunk in indices.chunks(config.batch_size) {
            iteration += 1;
            let batch = make_batch(&split.train, chunk, split.side)?;
            let step = step_gradients(
                &params,
                &batch,
                &config.weights,
                config.hinge,
                config.strategy,
                derive_seed(config.seed, "mining", iteration),
            )?;
            adam.step(&mut params, &step.grads)?;
            params.apply_running_updates(step.running_updates)?;
            log.rows.push(LossRow { iteration, report: step.report });
            epoch_last = Some(step.report);
        }

        if let Some(r) = epoch_last {
            println!(
                "epoch {:>4}/{} iter {:>6}  ae {:.6}  sm {:.6}  fr {:.6}  total {:.6}  triplets {}",
                epoch + 1,
                config.epochs,
                iteration,
                r.ae,
                r.sm,
                r.fr,
                r.total,
                r.n_triplets
            );
        }
    }

    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { params, adam, log, iterations: iteration })
}

/// Eval-mode features for a set of patches, in input order. Runs in batches
/// internally; eval mode normalizes with running statistics, so results are
/// independent of the batching.
pub fn extract_features(params: &ModelParams, records: &[PatchRecord]) -> Result<EmbeddingBatch> {
    let cfg = params.config();
    let dim = cfg.feature_len();
    let mut features = Tensor::zeros(&[records.len(), dim]);
    let mut labels = Vec::with_capacity(records.len());
    let layers = encoder_layers(cfg);
    let indices: Vec<usize> = (0..records.len()).collect();
    for chunk in indices.chunks(256) {
        let batch = make_batch(records, chunk, cfg.input_side)?;
        let pass = forward_network(&layers, params, &batch.images, Mode::Eval, false)?;
        let flat = pass.output.reshape(&[chunk.len(), dim])?;
        let lo = chunk[0] * dim;
        features.data_mut()[lo..lo + flat.len()].copy_from_slice(flat.data());
        labels.extend(batch.labels);
    }
    Ok(EmbeddingBatch { features, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    fn desk_config() -> TrainConfig {
        let mut c = TrainConfig::new(ModelConfig::with_scale(4, 1.0 / 32.0));
        c.batch_size = 8;
        c.epochs = 2;
        c.seed = 5;
        c
    }

    fn desk_split() -> DatasetSplit {
        synth_dataset(10, 2, 0.05, 33).unwrap()
    }

    #[test]
    fn defaults_match_published_settings() {
        let c = TrainConfig::new(ModelConfig::new(512));
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.adam.lr, 0.001);
        assert_eq!(c.weights.margin, 0.5);
        assert_eq!(c.weights.lambda_ae, 1.0);
        assert_eq!(c.weights.lambda_sm, 1.0);
        assert_eq!(c.weights.lambda_fr, 1.0);
        assert_eq!(c.hinge, HingeMode::PerTriplet);
    }

    #[test]
    fn training_runs_and_logs_every_iteration() {
        let split = desk_split();
        let config = desk_config();
        let out = train(&split, &config).unwrap();
        // 16 train records (80% of 20), batch 8 -> 2 iterations per epoch.
        assert_eq!(out.iterations, 4);
        assert_eq!(out.log.rows.len(), 4);
        assert_eq!(out.log.epoch_starts, vec![1, 3]);
        for (i, row) in out.log.rows.iter().enumerate() {
            assert_eq!(row.iteration, i as u64 + 1);
            assert!(row.report.total.is_finite());
        }
        assert_eq!(out.adam.t, 4);
    }

    #[test]
    fn identical_seeds_reproduce_the_log_and_params() {
        let split = desk_split();
        let config = desk_config();
        let a = train(&split, &config).unwrap();
        let b = train(&split, &config).unwrap();
        for (ra, rb) in a.log.rows.iter().zip(&b.log.rows) {
            assert_eq!(ra.report.total, rb.report.total);
            assert_eq!(ra.report.n_triplets, rb.report.n_triplets);
        }
        for (name, t) in a.params.iter() {
            assert_eq!(b.params.get(name).unwrap(), t, "param {name}");
        }

        let mut other = config;
        other.seed = 6;
        let c = train(&split, &other).unwrap();
        let same = a
            .log
            .rows
            .iter()
            .zip(&c.log.rows)
            .all(|(x, y)| x.report.total == y.report.total);
        assert!(!same, "different seeds should diverge");
    }

    #[test]
    fn zero_ae_weight_leaves_decoder_parameters_untouched() {
        let split = desk_split();
        let mut config = desk_config();
        config.weights.lambda_ae = 0.0;
        let out = train(&split, &config).unwrap();
        let init = init_params(&config.model, derive_seed(config.seed, "init", 0)).unwrap();
        for (name, t) in out.params.iter() {
            if name.starts_with("dec") && ModelParams::is_trainable(name) {
                assert_eq!(init.get(name).unwrap(), t, "decoder param {name} moved");
            }
        }
        let enc_moved = out
            .params
            .iter()
            .any(|(n, t)| n.starts_with("enc") && init.get(n).unwrap() != t);
        assert!(enc_moved);
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let split = synth_dataset(10, 1, 0.05, 33).unwrap();
        assert!(train(&split, &desk_config()).is_err());
    }

    #[test]
    fn csv_layout_is_stable() {
        let split = desk_split();
        let mut config = desk_config();
        config.epochs = 1;
        let out = train(&split, &config).unwrap();
        let mut buf = Vec::new();
        out.log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,ae,sm,fr,total,n_triplets");
        let first = lines.next().unwrap();
        assert!(first.starts_with("1,"));
        assert_eq!(first.split(',').count(), 6);
    }

    #[test]
    fn extracted_features_are_batch_independent() {
        let split = desk_split();
        let mut config = desk_config();
        config.epochs = 1;
        let out = train(&split, &config).unwrap();

        let all = extract_features(&out.params, &split.test).unwrap();
        let one = extract_features(&out.params, &split.test[1..2]).unwrap();
        let (_, dim) = all.features.dims2().unwrap();
        for v in 0..dim {
            let a = all.features.data()[dim + v];
            let b = one.features.data()[v];
            assert!((a - b).abs() < 1e-12, "feature {v}: {a} vs {b}");
        }
        assert_eq!(all.labels, split.test.iter().map(|r| r.label).collect::<Vec<_>>());
    }
}
