//! The two networks: a convolutional encoder (Siamcoder) that maps
//! `(B, 3, m, m)` patches to `(B, EL)` features, and a decoder that maps the
//! features back to patches. Both are seven layers deep; every layer is
//! conv (or transposed conv), batch norm, and an activation, with 2x max
//! pooling in the first six encoder layers and 2x bilinear upsampling in the
//! first six decoder layers.

mod network;

pub(crate) use network::{backward_network, decoder_layers, encoder_layers, forward_network};

use crate::data::PatchBatch;
use crate::error::{Error, Result};
use crate::ops::BnMode;
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Base channel widths of the six internal stages; the encoder walks them
/// up (3 -> 64 -> ... -> 1024 -> 1024 -> EL) and the decoder back down.
const STAGE_WIDTHS: [usize; 6] = [64, 128, 256, 512, 1024, 1024];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub(crate) fn bn(self) -> BnMode {
        match self {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        }
    }
}

/// Architecture hyperparameters.
///
/// `channel_scale` multiplies the internal channel widths (64..1024) so the
/// full architecture can run shape-faithfully at a fraction of the cost; the
/// published network is `channel_scale = 1`. It never touches the RGB input
/// width or the embedding length.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub embedding_len: usize,
    pub input_side: usize,
    pub channel_scale: f64,
}

impl ModelConfig {
    pub fn new(embedding_len: usize) -> ModelConfig {
        ModelConfig { embedding_len, input_side: 64, channel_scale: 1.0 }
    }

    pub fn with_scale(embedding_len: usize, channel_scale: f64) -> ModelConfig {
        ModelConfig { embedding_len, input_side: 64, channel_scale }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_len == 0 {
            return Err(Error::invalid("embedding length must be positive".to_string()));
        }
        if !(self.channel_scale > 0.0) || !self.channel_scale.is_finite() {
            return Err(Error::invalid(format!(
                "channel scale must be positive, got {}",
                self.channel_scale
            )));
        }
        if self.input_side < 64 || self.input_side % 64 != 0 {
            return Err(Error::invalid(format!(
                "input side must be a multiple of 64 (six 2x reductions), got {}",
                self.input_side
            )));
        }
        if self.channel_scale == 1.0 && self.input_side != 64 {
            return Err(Error::invalid(format!(
                "the full-width network is defined for 64x64 inputs, got {}",
                self.input_side
            )));
        }
        Ok(())
    }

    /// Scaled width of an internal stage; at least one channel survives.
    pub(crate) fn width(&self, base: usize) -> usize {
        ((base as f64 * self.channel_scale).round() as usize).max(1)
    }

    pub(crate) fn stage_widths(&self) -> [usize; 6] {
        STAGE_WIDTHS.map(|c| self.width(c))
    }

    /// Spatial side of the encoder output (1 for 64x64 inputs).
    pub fn bottleneck_side(&self) -> usize {
        self.input_side / 64
    }

    /// Length of the flattened feature vector a patch maps to.
    pub fn feature_len(&self) -> usize {
        self.embedding_len * self.bottleneck_side() * self.bottleneck_side()
    }
}

/// All parameters of both networks, keyed as `"<layer>.conv.w"`,
/// `"<layer>.bn.gamma"`, `"<layer>.bn.beta"`, `"<layer>.bn.running_mean"`,
/// `"<layer>.bn.running_var"` for layers `enc1..enc7` and `dec1..dec7`.
/// Running statistics are state, not trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub(crate) fn from_parts(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> ModelParams {
        ModelParams { config, tensors }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Running statistics are updated by the forward pass, not the optimizer.
    pub fn is_trainable(name: &str) -> bool {
        !name.contains(".bn.running_")
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Commits running-statistic updates produced by a train-mode forward.
    pub fn apply_running_updates(&mut self, updates: Vec<(String, Tensor)>) -> Result<()> {
        for (name, value) in updates {
            *self.get_mut(&name)? = value;
        }
        Ok(())
    }
}

/// Features for a batch of patches: one row per patch plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub features: Tensor,
    pub labels: Vec<u32>,
}

impl EmbeddingBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        let (_, dim) = self.features.dims2().expect("embedding features are 2-d");
        &self.features.data()[i * dim..(i + 1) * dim]
    }
}

/// RNG for one named parameter: independent of every other parameter and of
/// the order in which tensors are filled.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Initializes both networks: conv kernels from a zero-mean normal with
/// fan-in variance scaling and the leaky-ReLU gain `sqrt(2 / (1 + 0.2^2))`,
/// batch-norm gamma 1 / beta 0, running mean 0 / variance 1.
pub fn init_params(config: &ModelConfig, rng_seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut tensors = BTreeMap::new();
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    for layer in encoder_layers(config).iter().chain(decoder_layers(config).iter()) {
        let kernel_shape = if layer.transposed {
            [layer.in_ch, layer.out_ch, 3, 3]
        } else {
            [layer.out_ch, layer.in_ch, 3, 3]
        };
        let fan_in = (layer.in_ch * 9) as f64;
        let std = gain / fan_in.sqrt();
        let name = format!("{}.conv.w", layer.id);
        let mut rng = param_rng(rng_seed, &name);
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::invalid(format!("bad init distribution: {e}")))?;
        let n: usize = kernel_shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        tensors.insert(name, Tensor::from_vec(&kernel_shape, data)?);

        let c = layer.out_ch;
        tensors.insert(format!("{}.bn.gamma", layer.id), Tensor::filled(&[c], 1.0));
        tensors.insert(format!("{}.bn.beta", layer.id), Tensor::zeros(&[c]));
        tensors.insert(format!("{}.bn.running_mean", layer.id), Tensor::zeros(&[c]));
        tensors.insert(format!("{}.bn.running_var", layer.id), Tensor::filled(&[c], 1.0));
    }
    Ok(ModelParams { config: *config, tensors })
}

/// One row of the architecture's shape walk: layer name plus single-image
/// input and output dimensions as `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub input: (usize, usize, usize),
    pub output: (usize, usize, usize),
}

/// Per-layer input/output dimensions of the whole stack, encoder first.
/// Convolutions preserve the spatial side (3x3, stride 1, padding 1); the
/// pool and upsample steps halve and double it.
pub fn shape_table(cfg: &ModelConfig) -> Vec<LayerShape> {
    let mut rows = Vec::new();
    let mut side = cfg.input_side;
    for layer in encoder_layers(cfg).iter().chain(decoder_layers(cfg).iter()) {
        let out_side = match layer.resample {
            network::Resample::MaxPool => side / 2,
            network::Resample::Upsample => side * 2,
            network::Resample::None => side,
        };
        rows.push(LayerShape {
            name: layer.id.clone(),
            input: (layer.in_ch, side, side),
            output: (layer.out_ch, out_side, out_side),
        });
        side = out_side;
    }
    rows
}

/// Encodes a batch of patches into embedding features. Train mode normalizes
/// with batch statistics but does not commit running-stat updates; the
/// training loop uses [`forward_network`] directly for that.
pub fn siamcoder_forward(
    params: &ModelParams,
    batch: &PatchBatch,
    mode: Mode,
) -> Result<EmbeddingBatch> {
    let cfg = params.config();
    let (b, c, h, w) = batch.images.dims4()?;
    if c != 3 || h != cfg.input_side || w != cfg.input_side {
        return Err(Error::shape(format!(
            "encoder expects (B, 3, {0}, {0}) patches, got {1:?}",
            cfg.input_side,
            batch.images.shape()
        )));
    }
    if b != batch.labels.len() {
        return Err(Error::shape(format!(
            "{b} images but {} labels",
            batch.labels.len()
        )));
    }
    let layers = encoder_layers(cfg);
    let pass = forward_network(&layers, params, &batch.images, mode, false)?;
    let features = pass.output.reshape(&[b, cfg.feature_len()])?;
    Ok(EmbeddingBatch { features, labels: batch.labels.clone() })
}

/// Reconstructs patches from embedding features.
pub fn decoder_forward(
    params: &ModelParams,
    features: &EmbeddingBatch,
    mode: Mode,
) -> Result<PatchBatch> {
    let cfg = params.config();
    let (b, dim) = features.features.dims2()?;
    if dim != cfg.feature_len() {
        return Err(Error::shape(format!(
            "decoder expects feature length {}, got {dim}",
            cfg.feature_len()
        )));
    }
    let s = cfg.bottleneck_side();
    let x = features.features.clone().reshape(&[b, cfg.embedding_len, s, s])?;
    let layers = decoder_layers(cfg);
    let pass = forward_network(&layers, params, &x, mode, false)?;
    Ok(PatchBatch { images: pass.output, labels: features.labels.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_batch;
    use crate::data::PatchRecord;

    fn tiny_config() -> ModelConfig {
        ModelConfig::with_scale(4, 1.0 / 32.0)
    }

    fn batch_of(n: usize, side: usize, seed: u64) -> PatchBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<PatchRecord> = (0..n)
            .map(|i| PatchRecord {
                pixels: (0..3 * side * side).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: (i % 2) as u32,
                source_image: 0,
                center: (0, 0),
            })
            .collect();
        let indices: Vec<usize> = (0..n).collect();
        make_batch(&records, &indices, side).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(16).validate().is_ok());
        assert!(ModelConfig::new(0).validate().is_err());
        assert!(ModelConfig { embedding_len: 4, input_side: 32, channel_scale: 0.5 }
            .validate()
            .is_err());
        assert!(ModelConfig { embedding_len: 4, input_side: 128, channel_scale: 1.0 }
            .validate()
            .is_err());
        assert!(ModelConfig { embedding_len: 4, input_side: 128, channel_scale: 0.5 }
            .validate()
            .is_ok());
        assert!(ModelConfig { embedding_len: 4, input_side: 64, channel_scale: -1.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn shape_table_chains_and_hits_the_endpoints() {
        let cfg = ModelConfig::new(512);
        let rows = shape_table(&cfg);
        assert_eq!(rows.len(), 14);
        assert_eq!(rows[0].input, (3, 64, 64));
        assert_eq!(rows[6].output, (512, 1, 1));
        assert_eq!(rows[7].input, (512, 1, 1));
        assert_eq!(rows[13].output, (3, 64, 64));
        for pair in rows.windows(2) {
            assert_eq!(pair[0].output, pair[1].input, "{} -> {}", pair[0].name, pair[1].name);
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_config();
        let a = init_params(&cfg, 5).unwrap();
        let b = init_params(&cfg, 5).unwrap();
        let c = init_params(&cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_variance_matches_fan_in_target() {
        // Full-width layer 4 kernel: 512 x 256 x 3 x 3, fan-in 256 * 9.
        let cfg = ModelConfig::new(16);
        let params = init_params(&cfg, 0).unwrap();
        let w = params.get("enc4.conv.w").unwrap();
        assert_eq!(w.shape(), &[512, 256, 3, 3]);
        let n = w.len() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let gain_sq = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let target = gain_sq / (256.0 * 9.0);
        assert!((var - target).abs() / target < 0.2, "var {var} target {target}");
    }

    #[test]
    fn encoder_and_decoder_shapes_round_trip() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 1).unwrap();
        let batch = batch_of(2, 64, 3);
        let emb = siamcoder_forward(&params, &batch, Mode::Train).unwrap();
        assert_eq!(emb.features.shape(), &[2, 4]);
        let recon = decoder_forward(&params, &emb, Mode::Train).unwrap();
        assert_eq!(recon.images.shape(), &[2, 3, 64, 64]);
        for v in recon.images.data() {
            assert!(v.abs() < 1.0, "tanh output must stay inside (-1, 1)");
        }
    }

    #[test]
    fn zero_kernels_give_zero_embedding() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, 2).unwrap();
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            if name.ends_with(".conv.w") {
                let t = params.get_mut(&name).unwrap();
                *t = Tensor::zeros(t.shape());
            }
        }
        let batch = batch_of(2, 64, 4);
        let emb = siamcoder_forward(&params, &batch, Mode::Train).unwrap();
        assert!(emb.features.data().iter().all(|&v| v == 0.0));
        // Zero features through zero decoder kernels with beta = 0 stay zero.
        let recon = decoder_forward(&params, &emb, Mode::Train).unwrap();
        assert!(recon.images.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_batch_size_independent() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 7).unwrap();
        let batch = batch_of(3, 64, 8);
        let full = siamcoder_forward(&params, &batch, Mode::Eval).unwrap();
        let solo_images = Tensor::from_vec(
            &[1, 3, 64, 64],
            batch.images.data()[3 * 64 * 64..2 * 3 * 64 * 64].to_vec(),
        )
        .unwrap();
        let solo = siamcoder_forward(
            &params,
            &PatchBatch { images: solo_images, labels: vec![batch.labels[1]] },
            Mode::Eval,
        )
        .unwrap();
        assert_eq!(full.feature_row(1), solo.feature_row(0));
    }

    #[test]
    fn rejects_wrong_input_side() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 0).unwrap();
        let batch = batch_of(1, 128, 0);
        assert!(siamcoder_forward(&params, &batch, Mode::Eval).is_err());
    }

    #[test]
    fn rejects_wrong_feature_len() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 0).unwrap();
        let emb = EmbeddingBatch { features: Tensor::zeros(&[1, 5]), labels: vec![0] };
        assert!(decoder_forward(&params, &emb, Mode::Eval).is_err());
    }
}
