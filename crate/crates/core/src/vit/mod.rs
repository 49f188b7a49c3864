//! Minimal pre-norm Vision Transformer with full forward tracing and exact
//! reverse-mode gradients with respect to the input image.

mod forward;
mod grad;
pub(crate) mod ops;

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::GaussianStream;
use crate::tensor::Tensor;

pub use forward::{forward, patchify, ForwardTrace};
pub use grad::{finite_diff_gradient, gradient_check, input_gradient, loss_and_gradient, GradCheckRow, LossSelector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch: usize,
    pub depth: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub mlp_hidden: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_h: 16,
            image_w: 16,
            channels: 1,
            patch: 4,
            depth: 2,
            heads: 2,
            d_model: 16,
            d_head: 8,
            mlp_hidden: 32,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_h,
            self.image_w,
            self.channels,
            self.patch,
            self.depth,
            self.heads,
            self.d_head,
            self.mlp_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("all dimensions must be positive".into()));
        }
        if !self.image_h.is_multiple_of(self.patch) || !self.image_w.is_multiple_of(self.patch) {
            return Err(Error::InvalidConfig(format!(
                "image {}x{} is not divisible by patch {}",
                self.image_h, self.image_w, self.patch
            )));
        }
        if self.d_model != self.heads * self.d_head {
            return Err(Error::InvalidConfig(format!(
                "d_model {} != heads {} * d_head {}",
                self.d_model, self.heads, self.d_head
            )));
        }
        Ok(())
    }

    pub fn grid_h(&self) -> usize {
        self.image_h / self.patch
    }

    pub fn grid_w(&self) -> usize {
        self.image_w / self.patch
    }

    /// Number of patch tokens (excluding CLS).
    pub fn num_patches(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    /// Token count including the CLS token at internal index 0.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn image_shape(&self) -> Vec<usize> {
        vec![self.image_h, self.image_w, self.channels]
    }

    pub fn pixels(&self) -> usize {
        self.image_h * self.image_w * self.channels
    }
}

/// Matrices are stored `in × out`, row-major, so `y = x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_scale: Vec<f64>,
    pub ln1_shift: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_scale: Vec<f64>,
    pub ln2_shift: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitWeights {
    pub config: VitConfig,
    pub patch_embed: Vec<f64>,
    pub patch_bias: Vec<f64>,
    pub pos_embed: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_scale: Vec<f64>,
    pub final_shift: Vec<f64>,
}

fn gaussian_matrix(rng: &mut GaussianStream, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let std = 1.0 / (fan_in as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.next_normal() * std).collect()
}

/// Deterministic weights: every matrix draws `N(0, 1/fan_in)` entries from
/// one Gaussian stream in parameter order; biases are zero, layernorm
/// scales one and shifts zero. Positional embeddings use `fan_in = d_model`.
pub fn init_weights(config: VitConfig, seed: u64) -> Result<VitWeights> {
    config.validate()?;
    let d = config.d_model;
    let m = config.mlp_hidden;
    let mut rng = GaussianStream::new(seed);

    let patch_embed = gaussian_matrix(&mut rng, config.patch_dim(), d);
    let pos_embed = gaussian_matrix(&mut rng, d, config.tokens());
    let layers = (0..config.depth)
        .map(|_| LayerWeights {
            ln1_scale: vec![1.0; d],
            ln1_shift: vec![0.0; d],
            wq: gaussian_matrix(&mut rng, d, d),
            bq: vec![0.0; d],
            wk: gaussian_matrix(&mut rng, d, d),
            bk: vec![0.0; d],
            wv: gaussian_matrix(&mut rng, d, d),
            bv: vec![0.0; d],
            wo: gaussian_matrix(&mut rng, d, d),
            bo: vec![0.0; d],
            ln2_scale: vec![1.0; d],
            ln2_shift: vec![0.0; d],
            w1: gaussian_matrix(&mut rng, d, m),
            b1: vec![0.0; m],
            w2: gaussian_matrix(&mut rng, m, d),
            b2: vec![0.0; d],
        })
        .collect();

    Ok(VitWeights {
        config,
        patch_embed,
        patch_bias: vec![0.0; d],
        pos_embed,
        layers,
        final_scale: vec![1.0; d],
        final_shift: vec![0.0; d],
    })
}

impl VitWeights {
    /// Parameter tensors in the fixed serialization order.
    fn params(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.patch_embed, &self.patch_bias, &self.pos_embed];
        for l in &self.layers {
            out.extend([
                &l.ln1_scale,
                &l.ln1_shift,
                &l.wq,
                &l.bq,
                &l.wk,
                &l.bk,
                &l.wv,
                &l.bv,
                &l.wo,
                &l.bo,
                &l.ln2_scale,
                &l.ln2_shift,
                &l.w1,
                &l.b1,
                &l.w2,
                &l.b2,
            ]);
        }
        out.extend([&self.final_scale, &self.final_shift]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.patch_embed, &mut self.patch_bias, &mut self.pos_embed];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_scale,
                &mut l.ln1_shift,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_scale,
                &mut l.ln2_shift,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.extend([&mut self.final_scale, &mut self.final_shift]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Header of eight little-endian `u32`s (image_h, image_w, channels,
    /// patch, depth, heads, d_head, mlp_hidden; `d_model = heads * d_head`),
    /// then every parameter as little-endian `f64` in parameter order.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        for v in [
            c.image_h,
            c.image_w,
            c.channels,
            c.patch,
            c.depth,
            c.heads,
            c.d_head,
            c.mlp_hidden,
        ] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for p in self.params() {
            for v in p {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u32; 8];
        for h in header.iter_mut() {
            let mut buf = [0u8; 4];
            input.read_exact(&mut buf)?;
            *h = u32::from_le_bytes(buf);
        }
        let [image_h, image_w, channels, patch, depth, heads, d_head, mlp_hidden] = header.map(|v| v as usize);
        let config = VitConfig {
            image_h,
            image_w,
            channels,
            patch,
            depth,
            heads,
            d_model: heads * d_head,
            d_head,
            mlp_hidden,
        };
        // Shapes come from a zero-seed init; contents are overwritten below.
        let mut weights = init_weights(config, 0)?;
        for p in weights.params_mut() {
            for v in p.iter_mut() {
                let mut buf = [0u8; 8];
                input.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(weights)
    }

    pub fn patch_embed_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.config.patch_dim(), self.config.d_model],
            self.patch_embed.clone(),
        )
        .expect("patch embedding shape is fixed by config")
    }
}
