//! Learnable tensors and their flat / on-disk layouts.
//!
//! The canonical tensor order (used by [`ModelParams::to_flat`], the
//! gradient vector and the `HIEROPM1` file) is:
//!
//! 1. `input_proj.weight` (D_in × D_h), `input_proj.bias` (1 × D_h)
//! 2. for every encoder stage, then every layer: the eight
//!    [`TdgcLayerParams`] tensors in declaration order
//! 3. the same for the decoder
//! 4. `h_v.weight` (D_h × D_a), `h_v.bias`, `h_t.weight` (D_t × D_a), `h_t.bias`

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::linalg::DenseMatrix;

pub const PARAMS_MAGIC: &[u8; 8] = b"HIEROPM1";
pub const TENSORS_PER_LAYER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub text_dim: usize,
    pub hidden: usize,
    pub align_dim: usize,
    pub stages: usize,
    pub layers: usize,
    /// φ applied to the neighbor projection.
    pub activation: Activation,
}

impl ModelDims {
    pub fn new(input_dim: usize, text_dim: usize) -> Self {
        ModelDims { input_dim, text_dim, hidden: 768, align_dim: 256, stages: 3, layers: 3, activation: Activation::Relu }
    }

    /// Small configuration for gradient checks and the toy trainer.
    pub fn toy(input_dim: usize, text_dim: usize) -> Self {
        ModelDims { input_dim, text_dim, hidden: 8, align_dim: 8, stages: 2, layers: 3, activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.input_dim, self.text_dim, self.hidden, self.align_dim, self.stages, self.layers];
        if all.contains(&0) {
            return Err(HieroError::InvalidArgument(format!("all model dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn tensor_count(&self) -> usize {
        2 + 2 * self.stages * self.layers * TENSORS_PER_LAYER + 4
    }

    pub fn param_count(&self) -> usize {
        let d = self.hidden;
        let layer = 2 * d * d + 2 * d + (d + d) + (d * d + d);
        self.input_dim * d + d + 2 * self.stages * self.layers * layer + d * self.align_dim + self.align_dim + self.text_dim * self.align_dim + self.align_dim
    }
}

/// Affine map `x · weight + bias` on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: DenseMatrix::zeros(input, output), bias: DenseMatrix::zeros(1, output) }
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut y = x.matmul(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(self.bias.row(0)) {
                *v += b;
            }
        }
        Ok(y)
    }
}

/// One temporal-distance-gated graph convolution layer.
///
/// `x'_j = φ(x_j W_n + b_n)`; `out_i = x_i W_r + mean_j s_ij (w_ij ⊙ x'_j) + b_r`
/// with `w_ij = mlp_out(relu(mlp_hidden(|p_i - p_j|)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdgcLayerParams {
    pub w_n: DenseMatrix,
    pub b_n: DenseMatrix,
    pub w_r: DenseMatrix,
    pub b_r: DenseMatrix,
    pub mlp_hidden: Linear,
    pub mlp_out: Linear,
}

impl TdgcLayerParams {
    pub fn zeros(d: usize) -> Self {
        TdgcLayerParams {
            w_n: DenseMatrix::zeros(d, d),
            b_n: DenseMatrix::zeros(1, d),
            w_r: DenseMatrix::zeros(d, d),
            b_r: DenseMatrix::zeros(1, d),
            mlp_hidden: Linear::zeros(1, d),
            mlp_out: Linear::zeros(d, d),
        }
    }

    /// Pass-through layer: `W_r = I`, everything else zero.
    pub fn identity(d: usize) -> Self {
        TdgcLayerParams { w_r: DenseMatrix::identity(d), ..Self::zeros(d) }
    }

    fn tensors(&self) -> [&DenseMatrix; TENSORS_PER_LAYER] {
        [
            &self.w_n,
            &self.b_n,
            &self.w_r,
            &self.b_r,
            &self.mlp_hidden.weight,
            &self.mlp_hidden.bias,
            &self.mlp_out.weight,
            &self.mlp_out.bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut DenseMatrix; TENSORS_PER_LAYER] {
        [
            &mut self.w_n,
            &mut self.b_n,
            &mut self.w_r,
            &mut self.b_r,
            &mut self.mlp_hidden.weight,
            &mut self.mlp_hidden.bias,
            &mut self.mlp_out.weight,
            &mut self.mlp_out.bias,
        ]
    }
}

/// Tensor ids of one layer in the canonical order.
#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub base: usize,
}

impl LayerIds {
    pub fn w_n(self) -> usize {
        self.base
    }
    pub fn b_n(self) -> usize {
        self.base + 1
    }
    pub fn w_r(self) -> usize {
        self.base + 2
    }
    pub fn b_r(self) -> usize {
        self.base + 3
    }
    pub fn m1_w(self) -> usize {
        self.base + 4
    }
    pub fn m1_b(self) -> usize {
        self.base + 5
    }
    pub fn m2_w(self) -> usize {
        self.base + 6
    }
    pub fn m2_b(self) -> usize {
        self.base + 7
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub input_proj: Linear,
    /// `encoder[stage][layer]`
    pub encoder: Vec<Vec<TdgcLayerParams>>,
    /// `decoder[stage][layer]`, stage 0 being the finest resolution.
    pub decoder: Vec<Vec<TdgcLayerParams>>,
    pub h_v: Linear,
    pub h_t: Linear,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let stack = || (0..dims.stages).map(|_| (0..dims.layers).map(|_| TdgcLayerParams::zeros(dims.hidden)).collect()).collect();
        Ok(ModelParams {
            dims,
            input_proj: Linear::zeros(dims.input_dim, dims.hidden),
            encoder: stack(),
            decoder: stack(),
            h_v: Linear::zeros(dims.hidden, dims.align_dim),
            h_t: Linear::zeros(dims.text_dim, dims.align_dim),
        })
    }

    /// Every linear map the identity and every neighbor branch zero. Needs
    /// `input_dim == text_dim == hidden == align_dim`.
    pub fn identity(dims: ModelDims) -> Result<Self> {
        let d = dims.hidden;
        if dims.input_dim != d || dims.align_dim != d || dims.text_dim != d {
            return Err(HieroError::InvalidArgument("identity parameters need all dimensions equal".into()));
        }
        let mut p = Self::zeros(dims)?;
        p.input_proj.weight = DenseMatrix::identity(d);
        for layer in p.encoder.iter_mut().chain(p.decoder.iter_mut()).flatten() {
            *layer = TdgcLayerParams::identity(d);
        }
        p.h_v.weight = DenseMatrix::identity(d);
        p.h_t.weight = DenseMatrix::identity(d);
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out = vec![&self.input_proj.weight, &self.input_proj.bias];
        for layer in self.encoder.iter().chain(&self.decoder).flatten() {
            out.extend(layer.tensors());
        }
        out.extend([&self.h_v.weight, &self.h_v.bias, &self.h_t.weight, &self.h_t.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = vec![&mut self.input_proj.weight, &mut self.input_proj.bias];
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()).flatten() {
            out.extend(layer.tensors_mut());
        }
        out.extend([&mut self.h_v.weight, &mut self.h_v.bias, &mut self.h_t.weight, &mut self.h_t.bias]);
        out
    }

    pub fn input_ids(&self) -> (usize, usize) {
        (0, 1)
    }

    pub fn encoder_layer_ids(&self, stage: usize, layer: usize) -> LayerIds {
        LayerIds { base: 2 + (stage * self.dims.layers + layer) * TENSORS_PER_LAYER }
    }

    pub fn decoder_layer_ids(&self, stage: usize, layer: usize) -> LayerIds {
        let offset = self.dims.stages * self.dims.layers;
        LayerIds { base: 2 + (offset + stage * self.dims.layers + layer) * TENSORS_PER_LAYER }
    }

    pub fn h_v_ids(&self) -> (usize, usize) {
        let b = 2 + 2 * self.dims.stages * self.dims.layers * TENSORS_PER_LAYER;
        (b, b + 1)
    }

    pub fn h_t_ids(&self) -> (usize, usize) {
        let (w, _) = self.h_v_ids();
        (w + 2, w + 3)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn from_flat(dims: ModelDims, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        p.load_flat(flat)?;
        Ok(p)
    }

    /// Overwrites every tensor from a flat vector in canonical order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let count = self.param_count();
        if flat.len() != count {
            return Err(HieroError::Shape(format!("flat vector has {} values, model needs {count}", flat.len())));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let d = &self.dims;
        let flat = self.to_flat();
        let mut buf = Vec::with_capacity(8 + 7 * 4 + 8 + flat.len() * 8);
        buf.extend_from_slice(PARAMS_MAGIC);
        for v in [d.input_dim, d.text_dim, d.hidden, d.align_dim, d.stages, d.layers] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&d.activation.code().to_le_bytes());
        buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| HieroError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| HieroError::io(path, e))?;
        const HEADER: usize = 8 + 7 * 4 + 8;
        if bytes.len() < 8 || &bytes[..8] != PARAMS_MAGIC {
            return Err(HieroError::BadMagic { path: path.to_path_buf(), expected: "HIEROPM1" });
        }
        if bytes.len() < HEADER {
            return Err(HieroError::Truncated { path: path.to_path_buf(), expected: HEADER, found: bytes.len() });
        }
        let u = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let activation = Activation::from_code(u(6) as u32).ok_or_else(|| HieroError::SizeMismatch {
            path: path.to_path_buf(),
            detail: format!("unknown activation code {}", u(6)),
        })?;
        let dims = ModelDims {
            input_dim: u(0),
            text_dim: u(1),
            hidden: u(2),
            align_dim: u(3),
            stages: u(4),
            layers: u(5),
            activation,
        };
        dims.validate()?;
        let count = u64::from_le_bytes(bytes[36..44].try_into().unwrap()) as usize;
        if count != dims.param_count() {
            return Err(HieroError::SizeMismatch {
                path: path.to_path_buf(),
                detail: format!("header declares {count} values, dimensions imply {}", dims.param_count()),
            });
        }
        let expected = HEADER + count * 8;
        if bytes.len() != expected {
            return Err(if bytes.len() < expected {
                HieroError::Truncated { path: path.to_path_buf(), expected, found: bytes.len() }
            } else {
                HieroError::SizeMismatch { path: path.to_path_buf(), detail: format!("{} trailing bytes", bytes.len() - expected) }
            });
        }
        let flat: Vec<f64> = bytes[HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(HieroError::NonFinite { row: i, col: 0 });
        }
        Self::from_flat(dims, &flat)
    }
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fill_glorot(&mut p, &mut rng);
    Ok(p)
}

fn fill_glorot(p: &mut ModelParams, rng: &mut ChaCha8Rng) {
    let mut glorot = |m: &mut DenseMatrix| {
        let (fan_in, fan_out) = m.shape();
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in m.data_mut() {
            *v = rng.random_range(-a..a);
        }
    };
    glorot(&mut p.input_proj.weight);
    for layer in p.encoder.iter_mut().chain(p.decoder.iter_mut()).flatten() {
        glorot(&mut layer.w_n);
        glorot(&mut layer.w_r);
        glorot(&mut layer.mlp_hidden.weight);
        glorot(&mut layer.mlp_out.weight);
    }
    glorot(&mut p.h_v.weight);
    glorot(&mut p.h_t.weight);
}
