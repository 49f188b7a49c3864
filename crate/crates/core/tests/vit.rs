use spad_core::losses::{attention_loss, semantic_loss, value_loss};
use spad_core::psz::PatchIndexSet;
use spad_core::rng::{derive_seed, Xoshiro256PlusPlus};
use spad_core::vit::{
    finite_diff_gradient, forward, gradient_check, init_weights, input_gradient, loss_and_gradient, LossSelector,
    VitConfig, VitWeights,
};
use spad_core::Tensor;

fn random_image(seed: u64) -> Tensor {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    Tensor::new(vec![16, 16, 1], (0..256).map(|_| rng.next_f64()).collect()).unwrap()
}

fn weights() -> VitWeights {
    init_weights(VitConfig::default(), 7).unwrap()
}

// Straight-line reimplementation with explicit index loops, sharing nothing
// with the library's matrix helpers.
#[allow(clippy::needless_range_loop)]
mod oracle {
    use super::*;

    pub struct Out {
        pub cls: Vec<f64>,
        pub attn: Vec<Vec<Vec<f64>>>, // [layer*heads + head][query][key]
    }

    fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        (0..x.len()).map(|i| (x[i] - mean) * inv * g[i] + b[i]).collect()
    }

    fn affine(x: &[f64], w: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
        let mut y = b.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for j in 0..n_out {
                y[j] += xi * w[i * n_out + j];
            }
        }
        y
    }

    fn gelu(z: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * z * (1.0 + (c * (z + 0.044715 * z * z * z)).tanh())
    }

    pub fn run(w: &VitWeights, img: &Tensor) -> Out {
        let c = w.config;
        let d = c.d_model;
        let gw = c.image_w / c.patch;
        let mut tokens = vec![w.pos_embed[..d].to_vec()];
        for p in 0..c.num_patches() {
            let (py, px) = (p / gw, p % gw);
            let mut flat = Vec::new();
            for dy in 0..c.patch {
                for dx in 0..c.patch {
                    flat.push(img.at(&[py * c.patch + dy, px * c.patch + dx, 0]));
                }
            }
            let mut e = affine(&flat, &w.patch_embed, &w.patch_bias, d);
            for j in 0..d {
                e[j] += w.pos_embed[(p + 1) * d + j];
            }
            tokens.push(e);
        }
        let t = tokens.len();
        let mut attn_all = Vec::new();
        for lw in &w.layers {
            let y: Vec<Vec<f64>> = tokens.iter().map(|x| ln(x, &lw.ln1_scale, &lw.ln1_shift)).collect();
            let q: Vec<_> = y.iter().map(|r| affine(r, &lw.wq, &lw.bq, d)).collect();
            let k: Vec<_> = y.iter().map(|r| affine(r, &lw.wk, &lw.bk, d)).collect();
            let v: Vec<_> = y.iter().map(|r| affine(r, &lw.wv, &lw.bv, d)).collect();
            let mut concat = vec![vec![0.0; d]; t];
            for h in 0..c.heads {
                let off = h * c.d_head;
                let mut a = vec![vec![0.0; t]; t];
                for i in 0..t {
                    for j in 0..t {
                        let dot: f64 = (0..c.d_head).map(|e| q[i][off + e] * k[j][off + e]).sum();
                        a[i][j] = dot / (c.d_head as f64).sqrt();
                    }
                    let m = a[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = a[i].iter().map(|s| (s - m).exp()).sum();
                    for j in 0..t {
                        a[i][j] = (a[i][j] - m).exp() / z;
                    }
                    for e in 0..c.d_head {
                        concat[i][off + e] = (0..t).map(|j| a[i][j] * v[j][off + e]).sum();
                    }
                }
                attn_all.push(a);
            }
            for i in 0..t {
                let o = affine(&concat[i], &lw.wo, &lw.bo, d);
                for j in 0..d {
                    tokens[i][j] += o[j];
                }
                let y2 = ln(&tokens[i], &lw.ln2_scale, &lw.ln2_shift);
                let hid: Vec<f64> = affine(&y2, &lw.w1, &lw.b1, c.mlp_hidden)
                    .into_iter()
                    .map(gelu)
                    .collect();
                let m = affine(&hid, &lw.w2, &lw.b2, d);
                for j in 0..d {
                    tokens[i][j] += m[j];
                }
            }
        }
        Out {
            cls: ln(&tokens[0], &w.final_scale, &w.final_shift),
            attn: attn_all,
        }
    }
}

#[test]
fn forward_matches_straight_line_oracle() {
    let w = weights();
    for s in 0..3 {
        let img = random_image(100 + s);
        let trace = forward(&w, &img).unwrap();
        let want = oracle::run(&w, &img);
        for (a, b) in trace.cls_embedding.iter().zip(&want.cls) {
            assert!((a - b).abs() < 1e-12, "cls {a} vs {b}");
        }
        for l in 0..2 {
            for h in 0..2 {
                let got = trace.attention(l, h);
                for (i, row) in want.attn[l * 2 + h].iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        assert!((got[i * 17 + j] - v).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let rows = gradient_check(&weights(), 0, 5, 1e-5).unwrap();
    assert_eq!(rows.len(), 20);
    for r in rows {
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

#[test]
fn gradient_check_holds_on_another_weight_seed() {
    let w = init_weights(VitConfig::default(), 1234).unwrap();
    for r in gradient_check(&w, 99, 2, 1e-5).unwrap() {
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

#[test]
fn weighted_selector_is_linear_in_its_parts() {
    let w = weights();
    let img = random_image(5);
    let s = PatchIndexSet::new(vec![1, 2, 5, 6]);
    let reference = forward(&w, &random_image(6)).unwrap().cls_embedding;
    let parts = [
        (LossSelector::Att(s.clone()), 0.7),
        (LossSelector::Val(s.clone()), -1.3),
        (LossSelector::Sem(reference), 2.0),
    ];
    let combined = input_gradient(&w, &img, &LossSelector::Weighted(parts.to_vec())).unwrap();
    let mut summed = vec![0.0; 256];
    for (sel, k) in &parts {
        for (acc, g) in summed.iter_mut().zip(input_gradient(&w, &img, sel).unwrap().data()) {
            *acc += k * g;
        }
    }
    for (a, b) in combined.data().iter().zip(&summed) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn loss_values_agree_with_loss_module() {
    let w = weights();
    let img = random_image(8);
    let s = PatchIndexSet::new(vec![0, 15]);
    let reference = forward(&w, &random_image(9)).unwrap().cls_embedding;
    let (trace, att, _) = loss_and_gradient(&w, &img, &LossSelector::Att(s.clone())).unwrap();
    assert_eq!(att, attention_loss(&trace, &s).unwrap());
    let (_, val, _) = loss_and_gradient(&w, &img, &LossSelector::Val(s.clone())).unwrap();
    assert_eq!(val, value_loss(&trace, &s).unwrap());
    let (_, sem, _) = loss_and_gradient(&w, &img, &LossSelector::Sem(reference.clone())).unwrap();
    assert_eq!(sem, semantic_loss(&reference, &trace.cls_embedding).unwrap());
}

#[test]
fn attention_rows_are_stochastic() {
    let w = weights();
    for s in 0..100 {
        let trace = forward(&w, &random_image(derive_seed(2024, s))).unwrap();
        for row in trace.attn.chunks(17) {
            assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn semantic_gradient_vanishes_at_reference() {
    let w = weights();
    let img = random_image(3);
    let own = forward(&w, &img).unwrap().cls_embedding;
    let g = input_gradient(&w, &img, &LossSelector::Sem(own)).unwrap();
    assert!(g.max_abs() < 1e-6, "{}", g.max_abs());
}

#[test]
fn finite_difference_oracle_is_exact_on_constant_selector() {
    let w = weights();
    let img = random_image(4);
    let sel = LossSelector::Weighted(vec![(LossSelector::Att(PatchIndexSet::new(vec![3])), 0.0)]);
    assert_eq!(finite_diff_gradient(&w, &img, &sel, 1e-5).unwrap().max_abs(), 0.0);
    assert_eq!(input_gradient(&w, &img, &sel).unwrap().max_abs(), 0.0);
}

#[test]
fn frozen_init_anchor() {
    // Regression anchor: Frobenius norm of the seed-7 patch embedding.
    let norm = weights().patch_embed_tensor().frobenius_norm();
    assert!((norm - FROZEN_PATCH_EMBED_NORM).abs() < 1e-12, "{norm:.17e}");
}

const FROZEN_PATCH_EMBED_NORM: f64 = 3.673_824_277_873_148;
