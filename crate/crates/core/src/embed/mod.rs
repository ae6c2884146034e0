//! Two-tower embedding model.
//!
//! Each tower is `affine -> activation -> affine -> L2 normalize`, so every
//! embedding has unit norm and the dot product of two embeddings is their
//! cosine similarity.

mod grad_check;
mod train;

pub use grad_check::{grad_check, relative_error};
pub use train::{
    loss_and_gradient, train, EpochRecord, MiningMode, TrainConfig, TrainLog, TrainOutcome,
};

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Purpose};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"RELM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub video_in: usize,
    pub text_in: usize,
    pub hidden: usize,
    pub joint: usize,
}

impl ModelDims {
    /// Hidden width defaults to twice the joint dimension.
    pub fn new(video_in: usize, text_in: usize, joint: usize) -> Self {
        Self {
            video_in,
            text_in,
            hidden: 2 * joint,
            joint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn uniform<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weight = Array2::from_shape_simple_fn((output, input), &mut draw);
        let bias = Array1::from_shape_simple_fn(output, &mut draw);
        Self { weight, bias }
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub first: Affine,
    pub second: Affine,
    pub activation: Activation,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    hidden: Array2<f64>,
    norms: Array1<f64>,
    pub output: Array2<f64>,
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        self.first.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    fn zeros_like(&self) -> Self {
        Self {
            first: Affine::zeros(self.first.input_dim(), self.first.output_dim()),
            second: Affine::zeros(self.second.input_dim(), self.second.output_dim()),
            activation: self.activation,
        }
    }

    pub fn forward(&self, input: Array2<f64>, context: &str) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: format!("{context} features"),
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        let pre_activation = self.first.forward(input.view());
        let hidden = match self.activation {
            Activation::Relu => pre_activation.mapv(|v| v.max(0.0)),
            Activation::Identity => pre_activation.clone(),
        };
        let mut output = self.second.forward(hidden.view());
        let norms = output.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if let Some(row) = norms.iter().position(|&n| !(n > 0.0)) {
            return Err(Error::InvalidState(format!(
                "{context} embedding for row {row} has norm {} before normalization",
                norms[row]
            )));
        }
        output /= &norms.view().insert_axis(Axis(1));
        Ok(ForwardCache {
            input,
            pre_activation,
            hidden,
            norms,
            output,
        })
    }

    /// Accumulates parameter gradients into `grads` given the gradient of
    /// the loss with respect to the normalized outputs.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Array2<f64>, grads: &mut Encoder) {
        let y = &cache.output;
        // d/dz of z/|z| projects onto the tangent space of the unit sphere.
        let radial = (y * grad_output).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut grad_z = grad_output - &(y * &radial);
        grad_z /= &cache.norms.view().insert_axis(Axis(1));

        grads.second.weight += &grad_z.t().dot(&cache.hidden);
        grads.second.bias += &grad_z.sum_axis(Axis(0));

        let mut grad_hidden = grad_z.dot(&self.second.weight);
        if self.activation == Activation::Relu {
            Zip::from(&mut grad_hidden)
                .and(&cache.pre_activation)
                .for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
        }
        grads.first.weight += &grad_hidden.t().dot(&cache.input);
        grads.first.bias += &grad_hidden.sum_axis(Axis(0));
    }
}

/// Video tower `f` and text tower `g` into a shared joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub video: Encoder,
    pub text: Encoder,
}

impl EmbeddingModel {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization of every
    /// weight and bias, ReLU towers.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = seed::rng(seed, Purpose::Init, 0, 0);
        let mut tower = |input: usize| Encoder {
            first: Affine::uniform(input, dims.hidden, &mut rng),
            second: Affine::uniform(dims.hidden, dims.joint, &mut rng),
            activation: Activation::Relu,
        };
        let video = tower(dims.video_in);
        let text = tower(dims.text_in);
        Self { video, text }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            video_in: self.video.input_dim(),
            text_in: self.text.input_dim(),
            hidden: self.video.first.output_dim(),
            joint: self.video.output_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            video: self.video.zeros_like(),
            text: self.text.zeros_like(),
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.video.activation = activation;
        self.text.activation = activation;
        self
    }

    pub fn encode_video(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec())
            .expect("row vector shape");
        Ok(self.video.forward(x, "video")?.output.into_iter().collect())
    }

    pub fn encode_text(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec())
            .expect("row vector shape");
        Ok(self.text.forward(x, "text")?.output.into_iter().collect())
    }

    pub fn encode_video_batch(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.video.forward(features.clone(), "video")?.output)
    }

    pub fn encode_text_batch(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.text.forward(features.clone(), "text")?.output)
    }

    /// Parameter blocks in checkpoint order: video W1, b1, W2, b2, then the
    /// same four for the text tower.
    pub fn params(&self) -> [&[f64]; 8] {
        fn s(a: &Encoder) -> [&[f64]; 4] {
            [
                a.first.weight.as_slice().expect("standard layout"),
                a.first.bias.as_slice().expect("standard layout"),
                a.second.weight.as_slice().expect("standard layout"),
                a.second.bias.as_slice().expect("standard layout"),
            ]
        }
        let [a, b, c, d] = s(&self.video);
        let [e, f, g, h] = s(&self.text);
        [a, b, c, d, e, f, g, h]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 8] {
        fn s(a: &mut Encoder) -> [&mut [f64]; 4] {
            [
                a.first.weight.as_slice_mut().expect("standard layout"),
                a.first.bias.as_slice_mut().expect("standard layout"),
                a.second.weight.as_slice_mut().expect("standard layout"),
                a.second.bias.as_slice_mut().expect("standard layout"),
            ]
        }
        let [a, b, c, d] = s(&mut self.video);
        let [e, f, g, h] = s(&mut self.text);
        [a, b, c, d, e, f, g, h]
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Writes the `RELM1` checkpoint: magic, four little-endian `u32` dims
    /// `(f_v, f_q, h, d)`, then every parameter block as little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dims = self.dims();
        w.write_all(CHECKPOINT_MAGIC)?;
        for d in [dims.video_in, dims.text_in, dims.hidden, dims.joint] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for block in self.params() {
            for v in block {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    /// Reads a checkpoint written by [`write_checkpoint`](Self::write_checkpoint).
    /// Towers are restored with ReLU activations.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::InvalidArgument(format!("reading checkpoint: {e}")))?;
        let bad = |m: &str| Error::InvalidArgument(format!("bad checkpoint: {m}"));
        let body = bytes
            .strip_prefix(CHECKPOINT_MAGIC.as_slice())
            .ok_or_else(|| bad("missing RELM1 magic"))?;
        if body.len() < 16 {
            return Err(bad("truncated header"));
        }
        let dim = |k: usize| u32::from_le_bytes(body[4 * k..4 * k + 4].try_into().unwrap()) as usize;
        let dims = ModelDims {
            video_in: dim(0),
            text_in: dim(1),
            hidden: dim(2),
            joint: dim(3),
        };
        let mut model = EmbeddingModel {
            video: Encoder {
                first: Affine::zeros(dims.video_in, dims.hidden),
                second: Affine::zeros(dims.hidden, dims.joint),
                activation: Activation::Relu,
            },
            text: Encoder {
                first: Affine::zeros(dims.text_in, dims.hidden),
                second: Affine::zeros(dims.hidden, dims.joint),
                activation: Activation::Relu,
            },
        };
        let values = &body[16..];
        if values.len() != 8 * model.n_params() {
            return Err(bad(&format!(
                "expected {} parameter bytes, found {}",
                8 * model.n_params(),
                values.len()
            )));
        }
        let mut chunks = values.chunks_exact(8);
        for block in model.params_mut() {
            for (v, c) in block.iter_mut().zip(&mut chunks) {
                *v = f64::from_le_bytes(c.try_into().unwrap());
            }
        }
        if !model.is_finite() {
            return Err(bad("non-finite weights"));
        }
        Ok(model)
    }
}
