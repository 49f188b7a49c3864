//! Exact input gradients of trace losses, plus a central-difference oracle.

use super::forward::{forward_cached, head_slice, unpatchify, ForwardCache};
use super::ops;
use super::{forward, VitWeights};
use crate::error::{Error, Result};
use crate::losses::{self, l2_norm};
use crate::psz::PatchIndexSet;
use crate::rng::{derive_seed, Xoshiro256PlusPlus};
use crate::tensor::Tensor;

/// Which scalar the backward pass differentiates.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSelector {
    Att(PatchIndexSet),
    Val(PatchIndexSet),
    /// Cosine distance between the given reference and the CLS embedding.
    Sem(Vec<f64>),
    Weighted(Vec<(LossSelector, f64)>),
}

impl LossSelector {
    pub fn validate(&self, num_patches: usize, d_model: usize) -> Result<()> {
        match self {
            LossSelector::Att(s) | LossSelector::Val(s) => s.validate(num_patches),
            LossSelector::Sem(e) if e.len() != d_model => Err(Error::DimensionMismatch {
                expected: d_model,
                actual: e.len(),
            }),
            LossSelector::Sem(_) => Ok(()),
            LossSelector::Weighted(parts) => {
                for (sel, w) in parts {
                    if !w.is_finite() {
                        return Err(Error::InvalidConfig(format!("non-finite selector weight {w}")));
                    }
                    sel.validate(num_patches, d_model)?;
                }
                Ok(())
            }
        }
    }

    pub fn evaluate(&self, trace: &super::ForwardTrace) -> Result<f64> {
        match self {
            LossSelector::Att(s) => losses::attention_loss(trace, s),
            LossSelector::Val(s) => losses::value_loss(trace, s),
            LossSelector::Sem(e) => losses::semantic_loss(e, &trace.cls_embedding),
            LossSelector::Weighted(parts) => parts
                .iter()
                .filter(|(_, w)| *w != 0.0)
                .try_fold(0.0, |acc, (sel, w)| Ok(acc + w * sel.evaluate(trace)?)),
        }
    }

    /// Add `scale · ∂L/∂(tap)` into the attention, value, and CLS taps.
    fn accumulate(&self, trace: &super::ForwardTrace, scale: f64, taps: &mut Taps) -> Result<()> {
        let t = trace.tokens;
        let dh = trace.d_head;
        match self {
            LossSelector::Att(s) => {
                for lh in 0..trace.depth * trace.heads {
                    let block = &mut taps.attn[lh * t * t..(lh + 1) * t * t];
                    for &j in s.indices() {
                        for i in 0..t {
                            block[i * t + j + 1] += scale;
                        }
                    }
                }
            }
            LossSelector::Val(s) => {
                for l in 0..trace.depth {
                    for h in 0..trace.heads {
                        let base = (l * trace.heads + h) * t * dh;
                        for &j in s.indices() {
                            let row = trace.value_row(l, h, j + 1);
                            let norm = l2_norm(row);
                            // The norm is not differentiable at zero; take the zero subgradient.
                            if norm == 0.0 {
                                continue;
                            }
                            let dst = &mut taps.values[base + (j + 1) * dh..base + (j + 2) * dh];
                            for (d, v) in dst.iter_mut().zip(row) {
                                *d += scale * v / norm;
                            }
                        }
                    }
                }
            }
            LossSelector::Sem(e_ref) => {
                let e = &trace.cls_embedding;
                let nr = l2_norm(e_ref);
                let ne = l2_norm(e);
                if nr < 1e-12 || ne < 1e-12 {
                    return Err(Error::DegenerateEmbedding);
                }
                let cos = e_ref.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / (nr * ne);
                for ((d, r), v) in taps.cls.iter_mut().zip(e_ref).zip(e) {
                    *d += -scale * (r / (nr * ne) - cos * v / (ne * ne));
                }
            }
            LossSelector::Weighted(parts) => {
                for (sel, w) in parts {
                    if *w != 0.0 {
                        sel.accumulate(trace, scale * w, taps)?;
                    }
                }
            }
        }
        Ok(())
    }
}

struct Taps {
    attn: Vec<f64>,
    values: Vec<f64>,
    cls: Vec<f64>,
}

/// Forward, loss value, and exact gradient of the selected loss with respect
/// to every input pixel.
pub fn loss_and_gradient(
    weights: &VitWeights,
    image: &Tensor,
    sel: &LossSelector,
) -> Result<(super::ForwardTrace, f64, Tensor)> {
    let cfg = &weights.config;
    sel.validate(cfg.num_patches(), cfg.d_model)?;
    let (trace, cache) = forward_cached(weights, image)?;
    let loss = sel.evaluate(&trace)?;
    let mut taps = Taps {
        attn: vec![0.0; trace.attn.len()],
        values: vec![0.0; trace.values.len()],
        cls: vec![0.0; cfg.d_model],
    };
    sel.accumulate(&trace, 1.0, &mut taps)?;
    let grad = backward(weights, &cache, &taps);
    Ok((trace, loss, Tensor::new(cfg.image_shape(), grad)?))
}

pub fn input_gradient(weights: &VitWeights, image: &Tensor, sel: &LossSelector) -> Result<Tensor> {
    loss_and_gradient(weights, image, sel).map(|(_, _, g)| g)
}

fn backward(weights: &VitWeights, cache: &ForwardCache, taps: &Taps) -> Vec<f64> {
    let cfg = &weights.config;
    let (t, d, dh, nh, m) = (cfg.tokens(), cfg.d_model, cfg.d_head, cfg.heads, cfg.mlp_hidden);
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let mut d_out = vec![0.0; t * d];
    d_out[..d].copy_from_slice(&taps.cls);
    let mut dx = ops::layernorm_backward(&d_out, &weights.final_scale, &cache.final_ln, t, d);

    for (l, (lw, lc)) in weights.layers.iter().zip(&cache.layers).enumerate().rev() {
        // MLP residual branch.
        let mut d_hidden = ops::matmul_bt(&dx, &lw.w2, t, d, m);
        for (g, &z) in d_hidden.iter_mut().zip(&lc.hidden_pre) {
            *g *= ops::gelu_grad(z);
        }
        let d_y2 = ops::matmul_bt(&d_hidden, &lw.w1, t, m, d);
        ops::add_assign(&mut dx, &ops::layernorm_backward(&d_y2, &lw.ln2_scale, &lc.ln2, t, d));

        // Attention residual branch.
        let d_concat = ops::matmul_bt(&dx, &lw.wo, t, d, d);
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        for h in 0..nh {
            let lh = l * nh + h;
            let a = &lc.attn[h * t * t..(h + 1) * t * t];
            let qh = head_slice(&lc.q, t, d, h, dh);
            let kh = head_slice(&lc.k, t, d, h, dh);
            let vh = head_slice(&lc.v, t, d, h, dh);
            let d_oh = head_slice(&d_concat, t, d, h, dh);

            let mut da = ops::matmul_bt(&d_oh, &vh, t, dh, t);
            ops::add_assign(&mut da, &taps.attn[lh * t * t..(lh + 1) * t * t]);
            let mut dvh = ops::matmul_at(a, &d_oh, t, t, dh);
            ops::add_assign(&mut dvh, &taps.values[lh * t * dh..(lh + 1) * t * dh]);

            let mut ds = vec![0.0; t * t];
            for i in 0..t {
                let row_a = &a[i * t..(i + 1) * t];
                let row_da = &da[i * t..(i + 1) * t];
                let dot: f64 = row_a.iter().zip(row_da).map(|(x, y)| x * y).sum();
                for j in 0..t {
                    ds[i * t + j] = row_a[j] * (row_da[j] - dot) * inv_sqrt;
                }
            }
            let dqh = ops::matmul_bias(&ds, &kh, None, t, t, dh);
            let dkh = ops::matmul_at(&ds, &qh, t, t, dh);
            for i in 0..t {
                let dst = i * d + h * dh;
                dq[dst..dst + dh].copy_from_slice(&dqh[i * dh..(i + 1) * dh]);
                dk[dst..dst + dh].copy_from_slice(&dkh[i * dh..(i + 1) * dh]);
                dv[dst..dst + dh].copy_from_slice(&dvh[i * dh..(i + 1) * dh]);
            }
        }
        let mut d_y1 = ops::matmul_bt(&dq, &lw.wq, t, d, d);
        ops::add_assign(&mut d_y1, &ops::matmul_bt(&dk, &lw.wk, t, d, d));
        ops::add_assign(&mut d_y1, &ops::matmul_bt(&dv, &lw.wv, t, d, d));
        ops::add_assign(&mut dx, &ops::layernorm_backward(&d_y1, &lw.ln1_scale, &lc.ln1, t, d));
    }

    // CLS row is a constant; patch rows feed the embedding.
    let d_patches = ops::matmul_bt(&dx[d..], &weights.patch_embed, cfg.num_patches(), d, cfg.patch_dim());
    unpatchify(&d_patches, cfg)
}

/// Central differences `(L(x + h·e_i) − L(x − h·e_i)) / 2h` for every pixel.
pub fn finite_diff_gradient(weights: &VitWeights, image: &Tensor, sel: &LossSelector, h: f64) -> Result<Tensor> {
    let cfg = &weights.config;
    sel.validate(cfg.num_patches(), cfg.d_model)?;
    image.check_shape(&cfg.image_shape())?;
    let mut probe = image.clone();
    let mut grad = vec![0.0; image.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = image.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = sel.evaluate(&forward(weights, &probe)?)?;
        probe.data_mut()[i] = orig - h;
        let minus = sel.evaluate(&forward(weights, &probe)?)?;
        probe.data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    Tensor::new(cfg.image_shape(), grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub image: usize,
    pub selector: &'static str,
    /// `max_i |g_i − ĝ_i| / (|ĝ_i| + 1e-8)` with `ĝ` the central difference.
    pub max_rel_error: f64,
}

/// Compare exact and central-difference gradients on `n_images` uniform
/// random images for each selector kind. Patch set is the central 2×2 block;
/// the semantic reference is the CLS embedding of an unrelated random image.
pub fn gradient_check(weights: &VitWeights, seed: u64, n_images: usize, h: f64) -> Result<Vec<GradCheckRow>> {
    let cfg = &weights.config;
    let random_image = |stream: u64| {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, stream));
        let data = (0..cfg.pixels()).map(|_| rng.next_f64()).collect();
        Tensor::new(cfg.image_shape(), data)
    };
    let (gh, gw) = (cfg.grid_h(), cfg.grid_w());
    let s = PatchIndexSet::new(
        [
            (gh / 2 - 1, gw / 2 - 1),
            (gh / 2 - 1, gw / 2),
            (gh / 2, gw / 2 - 1),
            (gh / 2, gw / 2),
        ]
        .iter()
        .map(|&(r, c)| r.min(gh - 1) * gw + c.min(gw - 1))
        .collect(),
    );
    let reference = forward(weights, &random_image(u64::MAX)?)?.cls_embedding;
    let selectors = [
        ("ATT", LossSelector::Att(s.clone())),
        ("VAL", LossSelector::Val(s.clone())),
        ("SEM", LossSelector::Sem(reference.clone())),
        (
            "WEIGHTED",
            LossSelector::Weighted(vec![
                (LossSelector::Sem(reference), 1.0),
                (LossSelector::Att(s.clone()), 1.0),
                (LossSelector::Val(s), 0.5),
            ]),
        ),
    ];

    let mut rows = Vec::with_capacity(n_images * selectors.len());
    for image in 0..n_images {
        let x = random_image(image as u64)?;
        for (name, sel) in &selectors {
            let exact = input_gradient(weights, &x, sel)?;
            let approx = finite_diff_gradient(weights, &x, sel, h)?;
            let max_rel_error = exact
                .data()
                .iter()
                .zip(approx.data())
                .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-8))
                .fold(0.0, f64::max);
            rows.push(GradCheckRow {
                image,
                selector: name,
                max_rel_error,
            });
        }
    }
    Ok(rows)
}
