use super::ops::{self, LayerNormCache};
use super::{VitConfig, VitWeights};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Everything one forward pass exposes to the losses.
///
/// Attention maps are stored per (layer, head) as `T × T` row-major blocks;
/// value matrices as `T × d_head` blocks. Token index 0 is CLS; patch `p`
/// lives at token `p + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub depth: usize,
    pub heads: usize,
    pub tokens: usize,
    pub d_head: usize,
    pub d_model: usize,
    pub attn: Vec<f64>,
    pub values: Vec<f64>,
    pub cls_embedding: Vec<f64>,
    pub token_outputs: Vec<f64>,
}

impl ForwardTrace {
    pub fn attention(&self, layer: usize, head: usize) -> &[f64] {
        let t2 = self.tokens * self.tokens;
        let start = (layer * self.heads + head) * t2;
        &self.attn[start..start + t2]
    }

    pub fn value(&self, layer: usize, head: usize) -> &[f64] {
        let block = self.tokens * self.d_head;
        let start = (layer * self.heads + head) * block;
        &self.values[start..start + block]
    }

    /// Value row of one token.
    pub fn value_row(&self, layer: usize, head: usize, token: usize) -> &[f64] {
        &self.value(layer, head)[token * self.d_head..(token + 1) * self.d_head]
    }

    pub fn num_patches(&self) -> usize {
        self.tokens - 1
    }
}

pub(super) struct LayerCache {
    pub ln1: LayerNormCache,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Per-head attention, `heads × T × T`.
    pub attn: Vec<f64>,
    pub ln2: LayerNormCache,
    pub hidden_pre: Vec<f64>,
}

pub(super) struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub final_ln: LayerNormCache,
}

/// Split an `H × W × C` image into `P × (patch·patch·C)` rows; patches are
/// ordered left-to-right, top-to-bottom, and pixels within a patch likewise
/// with channels innermost.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0, 0],
            actual: shape.to_vec(),
        });
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidConfig(format!(
            "image {h}x{w} is not divisible by patch {patch}"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let pd = patch * patch * c;
    let src = image.data();
    let mut out = Vec::with_capacity(gh * gw * pd);
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..patch {
                let row = py * patch + dy;
                let start = (row * w + px * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Tensor::new(vec![gh * gw, pd], out)
}

/// Inverse scatter of `patchify` for gradients.
pub(super) fn unpatchify(rows: &[f64], config: &VitConfig) -> Vec<f64> {
    let (p, c, w) = (config.patch, config.channels, config.image_w);
    let gw = config.grid_w();
    let pd = config.patch_dim();
    let mut img = vec![0.0; config.pixels()];
    for (idx, patch_row) in rows.chunks(pd).enumerate() {
        let (py, px) = (idx / gw, idx % gw);
        for dy in 0..p {
            let row = py * p + dy;
            let start = (row * w + px * p) * c;
            img[start..start + p * c].copy_from_slice(&patch_row[dy * p * c..(dy + 1) * p * c]);
        }
    }
    img
}

/// Forward pass: patchify, embed, prepend CLS (zero vector), add positional
/// embeddings, `depth` pre-norm blocks, final layernorm.
pub fn forward(weights: &VitWeights, image: &Tensor) -> Result<ForwardTrace> {
    forward_cached(weights, image).map(|(trace, _)| trace)
}

pub(super) fn forward_cached(weights: &VitWeights, image: &Tensor) -> Result<(ForwardTrace, ForwardCache)> {
    let cfg = &weights.config;
    image.check_shape(&cfg.image_shape())?;
    let (t, d, dh, nh, m) = (cfg.tokens(), cfg.d_model, cfg.d_head, cfg.heads, cfg.mlp_hidden);

    let patches = patchify(image, cfg.patch)?;
    let embedded = ops::matmul_bias(
        patches.data(),
        &weights.patch_embed,
        Some(&weights.patch_bias),
        cfg.num_patches(),
        cfg.patch_dim(),
        d,
    );
    let mut x = vec![0.0; t * d];
    x[d..].copy_from_slice(&embedded);
    ops::add_assign(&mut x, &weights.pos_embed);

    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut trace_attn = Vec::with_capacity(cfg.depth * nh * t * t);
    let mut trace_values = Vec::with_capacity(cfg.depth * nh * t * dh);
    let mut layers = Vec::with_capacity(cfg.depth);

    for lw in &weights.layers {
        let (y1, ln1) = ops::layernorm(&x, &lw.ln1_scale, &lw.ln1_shift, t, d);
        let q = ops::matmul_bias(&y1, &lw.wq, Some(&lw.bq), t, d, d);
        let k = ops::matmul_bias(&y1, &lw.wk, Some(&lw.bk), t, d, d);
        let v = ops::matmul_bias(&y1, &lw.wv, Some(&lw.bv), t, d, d);

        let mut attn = vec![0.0; nh * t * t];
        let mut concat = vec![0.0; t * d];
        for h in 0..nh {
            let qh = head_slice(&q, t, d, h, dh);
            let kh = head_slice(&k, t, d, h, dh);
            let vh = head_slice(&v, t, d, h, dh);
            let mut s = ops::matmul_bt(&qh, &kh, t, dh, t);
            s.iter_mut().for_each(|e| *e *= inv_sqrt);
            ops::softmax_rows(&mut s, t, t);
            let oh = ops::matmul_bias(&s, &vh, None, t, t, dh);
            for i in 0..t {
                concat[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&oh[i * dh..(i + 1) * dh]);
            }
            trace_attn.extend_from_slice(&s);
            trace_values.extend_from_slice(&vh);
            attn[h * t * t..(h + 1) * t * t].copy_from_slice(&s);
        }
        let proj = ops::matmul_bias(&concat, &lw.wo, Some(&lw.bo), t, d, d);
        ops::add_assign(&mut x, &proj);

        let (y2, ln2) = ops::layernorm(&x, &lw.ln2_scale, &lw.ln2_shift, t, d);
        let hidden_pre = ops::matmul_bias(&y2, &lw.w1, Some(&lw.b1), t, d, m);
        let hidden_act: Vec<f64> = hidden_pre.iter().map(|&z| ops::gelu(z)).collect();
        let mlp = ops::matmul_bias(&hidden_act, &lw.w2, Some(&lw.b2), t, m, d);
        ops::add_assign(&mut x, &mlp);

        layers.push(LayerCache {
            ln1,
            q,
            k,
            v,
            attn,
            ln2,
            hidden_pre,
        });
    }

    let (out, final_ln) = ops::layernorm(&x, &weights.final_scale, &weights.final_shift, t, d);
    let trace = ForwardTrace {
        depth: cfg.depth,
        heads: nh,
        tokens: t,
        d_head: dh,
        d_model: d,
        attn: trace_attn,
        values: trace_values,
        cls_embedding: out[..d].to_vec(),
        token_outputs: out,
    };
    Ok((trace, ForwardCache { layers, final_ln }))
}

/// Columns `h·dh .. (h+1)·dh` of a `T × d` matrix as a contiguous `T × dh` block.
pub(super) fn head_slice(m: &[f64], t: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t * dh);
    for i in 0..t {
        out.extend_from_slice(&m[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}
