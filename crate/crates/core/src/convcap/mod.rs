//! Masked-convolution captioner.
//!
//! Tokens are embedded and offset by a projection of the pooled image
//! vector, then pass through a stack of blocks:
//!
//! ```text
//! causal conv (weight-normed) → GLU → + attention read → + residual → dropout
//! ```
//!
//! and a final linear layer with log-softmax. Weight normalization, dropout,
//! residual connections and attention can each be switched off to rebuild
//! the network incrementally. Everything runs in `f64` with exact,
//! hand-written gradients.

mod model;
mod ops;
mod train;

pub use model::{emission_lattice, forward, sequence_loss};
pub use ops::{attend, log_softmax, masked_conv, softmax, weight_norm, Kernel, Matrix};
pub use train::{
    analytic_gradient, batch_loss, central_difference, grad_check, grad_check_coords, train_step, StepReport, GRAD_CLIP,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Container, Tensor, START};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureFlags {
    pub weight_norm: bool,
    pub dropout: bool,
    pub residual: bool,
    pub attention: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        Self {
            weight_norm: true,
            dropout: true,
            residual: true,
            attention: true,
        }
    }
}

impl FeatureFlags {
    /// Plain masked convolutions and fully connected layers.
    pub fn plain() -> Self {
        Self {
            weight_norm: false,
            dropout: false,
            residual: false,
            attention: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub attn_dim: usize,
    pub layers: usize,
    pub kernel_width: usize,
    pub dropout: f64,
    /// Maximum number of caption words; sequences add one special token.
    pub max_len: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub flags: FeatureFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4,
            embed_dim: 64,
            feature_dim: 1,
            attn_dim: 32,
            layers: 3,
            kernel_width: 5,
            dropout: 0.1,
            max_len: 16,
            init_scale: 0.05,
            seed: 0,
            flags: FeatureFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("feature_dim", self.feature_dim),
            ("attn_dim", self.attn_dim),
            ("kernel_width", self.kernel_width),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("model {name} must be at least 1")));
        }
        if self.vocab_size <= START {
            return Err(Error::validation("vocabulary must contain the start token"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!("dropout {} is outside [0, 1)", self.dropout)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::validation("init_scale must be finite and non-negative"));
        }
        if self.seed >= 1 << 53 {
            return Err(Error::validation("seed must be below 2^53"));
        }
        Ok(())
    }

    fn as_record(&self) -> Vec<f64> {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        vec![
            self.vocab_size as f64,
            self.embed_dim as f64,
            self.feature_dim as f64,
            self.attn_dim as f64,
            self.layers as f64,
            self.kernel_width as f64,
            self.dropout,
            self.max_len as f64,
            self.init_scale,
            self.seed as f64,
            flag(self.flags.weight_norm),
            flag(self.flags.dropout),
            flag(self.flags.residual),
            flag(self.flags.attention),
        ]
    }

    fn from_record(r: &[f64]) -> Result<Self> {
        if r.len() != 14 {
            return Err(Error::validation(format!(
                "model config record has {} fields, expected 14",
                r.len()
            )));
        }
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
                Ok(v as usize)
            } else {
                Err(Error::validation(format!("config field {v} is not a count")))
            }
        };
        let cfg = Self {
            vocab_size: count(r[0])?,
            embed_dim: count(r[1])?,
            feature_dim: count(r[2])?,
            attn_dim: count(r[3])?,
            layers: count(r[4])?,
            kernel_width: count(r[5])?,
            dropout: r[6],
            max_len: count(r[7])?,
            init_scale: r[8],
            seed: count(r[9])? as u64,
            flags: FeatureFlags {
                weight_norm: r[10] != 0.0,
                dropout: r[11] != 0.0,
                residual: r[12] != 0.0,
                attention: r[13] != 0.0,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameters of one convolutional block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    /// `(width·D) × 2D`; column `o` is the direction of output channel `o`.
    pub direction: Vec<f64>,
    /// Per-output-channel gain, `2D`.
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    /// `A × D`.
    pub query_proj: Vec<f64>,
    /// `A × F`.
    pub key_proj: Vec<f64>,
    /// `D × F`.
    pub attn_out: Vec<f64>,
}

/// Captioner weights. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `V × D`.
    pub embedding: Vec<f64>,
    /// `D × F`, maps the pooled image vector into embedding space.
    pub image_proj: Vec<f64>,
    pub blocks: Vec<BlockParams>,
    /// `D × V`.
    pub out_proj: Vec<f64>,
    pub out_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (v, d, f, a, w) = (
            config.vocab_size,
            config.embed_dim,
            config.feature_dim,
            config.attn_dim,
            config.kernel_width,
        );
        Self {
            config: config.clone(),
            embedding: vec![0.0; v * d],
            image_proj: vec![0.0; d * f],
            blocks: (0..config.layers)
                .map(|_| BlockParams {
                    direction: vec![0.0; w * d * 2 * d],
                    gain: vec![0.0; 2 * d],
                    bias: vec![0.0; 2 * d],
                    query_proj: vec![0.0; a * d],
                    key_proj: vec![0.0; a * f],
                    attn_out: vec![0.0; d * f],
                })
                .collect(),
            out_proj: vec![0.0; d * v],
            out_bias: vec![0.0; v],
        }
    }

    /// Uniform `(−init_scale, init_scale)` weights from the config seed;
    /// gains start at the norm of their direction so the initial kernel
    /// equals the direction itself. Biases start at zero.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = Self::zeros(config);
        let s = config.init_scale;
        let mut fill = |v: &mut Vec<f64>| {
            for x in v.iter_mut() {
                *x = if s > 0.0 { rng.gen_range(-s..s) } else { 0.0 };
            }
        };
        fill(&mut p.embedding);
        fill(&mut p.image_proj);
        for b in &mut p.blocks {
            fill(&mut b.direction);
            fill(&mut b.query_proj);
            fill(&mut b.key_proj);
            fill(&mut b.attn_out);
        }
        fill(&mut p.out_proj);
        let two_d = 2 * config.embed_dim;
        for b in &mut p.blocks {
            for o in 0..two_d {
                b.gain[o] = column_norm(&b.direction, two_d, o);
            }
        }
        Ok(p)
    }

    /// Named views of every tensor with its shape, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let c = &self.config;
        let (v, d, f, a, w) = (c.vocab_size, c.embed_dim, c.feature_dim, c.attn_dim, c.kernel_width);
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![
            ("embedding".into(), vec![v, d], &self.embedding),
            ("image_proj".into(), vec![d, f], &self.image_proj),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{l}.direction"), vec![w * d, 2 * d], &b.direction));
            out.push((format!("block{l}.gain"), vec![2 * d], &b.gain));
            out.push((format!("block{l}.bias"), vec![2 * d], &b.bias));
            out.push((format!("block{l}.query_proj"), vec![a, d], &b.query_proj));
            out.push((format!("block{l}.key_proj"), vec![a, f], &b.key_proj));
            out.push((format!("block{l}.attn_out"), vec![d, f], &b.attn_out));
        }
        out.push(("out_proj".into(), vec![d, v], &self.out_proj));
        out.push(("out_bias".into(), vec![v], &self.out_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.embedding, &mut self.image_proj];
        for b in &mut self.blocks {
            out.push(&mut b.direction);
            out.push(&mut b.gain);
            out.push(&mut b.bias);
            out.push(&mut b.query_proj);
            out.push(&mut b.key_proj);
            out.push(&mut b.attn_out);
        }
        out.push(&mut self.out_proj);
        out.push(&mut self.out_bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for (_, _, t) in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, t)| t.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|(_, _, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += scale * b;
            }
        }
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.config == other.config
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|((_, _, a), (_, _, b))| {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::default();
        c.push(Tensor::new("config", vec![14], self.config.as_record())?);
        for (name, dims, data) in self.tensors() {
            c.push(Tensor::new(name, dims, data.to_vec())?);
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config = ModelConfig::from_record(&c.require("config")?.data)?;
        let mut p = Self::zeros(&config);
        let names: Vec<(String, Vec<usize>)> = p.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
        for ((name, dims), dst) in names.into_iter().zip(p.tensors_mut()) {
            let t = c.require(&name)?;
            if t.dims != dims {
                return Err(Error::validation(format!(
                    "tensor {name} has shape {:?}, config implies {dims:?}",
                    t.dims
                )));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(p)
    }
}

pub(crate) fn column_norm(m: &[f64], cols: usize, col: usize) -> f64 {
    m.iter().skip(col).step_by(cols).map(|x| x * x).sum::<f64>().sqrt()
}

/// Precomputed image encoding: spatial cells plus a pooled vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    pub cells: Matrix,
    pub pooled: Vec<f64>,
}

impl ImageFeatures {
    pub fn new(cells: Vec<Vec<f64>>, pooled: Vec<f64>) -> Result<Self> {
        let cells = Matrix::from_rows(&cells)?;
        if cells.rows == 0 {
            return Err(Error::validation("image needs at least one cell"));
        }
        if pooled.len() != cells.cols {
            return Err(Error::validation("pooled vector and cells differ in dimension"));
        }
        if cells.data.iter().chain(&pooled).any(|x| !x.is_finite()) {
            return Err(Error::validation("image features must be finite"));
        }
        Ok(Self { cells, pooled })
    }

    /// Cells as given, pooled vector as their mean.
    pub fn from_cells(cells: Vec<Vec<f64>>) -> Result<Self> {
        let g = cells.len().max(1) as f64;
        let dim = cells.first().map_or(0, Vec::len);
        let mut pooled = vec![0.0; dim];
        for c in &cells {
            for (p, v) in pooled.iter_mut().zip(c) {
                *p += v / g;
            }
        }
        Self::new(cells, pooled)
    }

    pub fn feature_dim(&self) -> usize {
        self.cells.cols
    }
}

/// Per-position next-token log-probabilities, `T × V`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionLattice {
    rows: usize,
    vocab: usize,
    logp: Vec<f64>,
}

impl EmissionLattice {
    pub fn new(rows: usize, vocab: usize, logp: Vec<f64>) -> Result<Self> {
        if logp.len() != rows * vocab || vocab == 0 {
            return Err(Error::validation(format!(
                "lattice {rows}x{vocab} needs {} entries, got {}",
                rows * vocab,
                logp.len()
            )));
        }
        for (t, row) in logp.chunks(vocab).enumerate() {
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::validation(format!("lattice row {t} has an invalid entry")));
            }
            let mass: f64 = row.iter().map(|v| v.exp()).sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!("lattice row {t} sums to {mass}")));
            }
        }
        Ok(Self { rows, vocab, logp })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.logp[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::default();
        c.push(Tensor::new("lattice", vec![self.rows, self.vocab], self.logp.clone())?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let t = c.require("lattice")?;
        match t.dims[..] {
            [rows, vocab] => Self::new(rows, vocab, t.data.clone()),
            _ => Err(Error::validation("lattice tensor must have rank 2")),
        }
    }
}

/// One caption with its image, token ids without specials.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub image: ImageFeatures,
    pub caption: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 6,
            embed_dim: 4,
            feature_dim: 3,
            attn_dim: 2,
            layers: 2,
            kernel_width: 3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(&small()).unwrap();
        let c = p.to_container().unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = ModelParams::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert!(back.bit_eq(&p));
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(&small()).unwrap();
        let b = ModelParams::init(&small()).unwrap();
        assert!(a.bit_eq(&b));
        let c = ModelParams::init(&ModelConfig { seed: 12, ..small() }).unwrap();
        assert!(!a.bit_eq(&c));
        assert!(a.embedding.iter().all(|x| x.abs() < 0.05));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig {
            kernel_width: 0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            dropout: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            vocab_size: 1,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn lattice_checks_rows() {
        let half = 0.5f64.ln();
        assert!(EmissionLattice::new(1, 2, vec![half, half]).is_ok());
        assert!(EmissionLattice::new(1, 2, vec![half, 0.0]).is_err());
        assert!(EmissionLattice::new(1, 2, vec![0.0, f64::NEG_INFINITY]).is_ok());
        assert!(EmissionLattice::new(2, 2, vec![half, half]).is_err());
    }
}
