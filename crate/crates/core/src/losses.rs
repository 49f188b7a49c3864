//! Scalar desensitization losses over a forward trace.

use crate::error::{Error, Result};
use crate::psz::PatchIndexSet;
use crate::vit::ForwardTrace;

/// Weights of the combined objective `w_sem·L_sem + w_att·L_att + w_val·L_val`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub w_sem: f64,
    pub w_att: f64,
    pub w_val: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_sem: 1.0,
            w_att: 1.0,
            w_val: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_sem", self.w_sem), ("w_att", self.w_att), ("w_val", self.w_val)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub sem: f64,
    pub att: f64,
    pub val: f64,
}

/// Total attention mass flowing into the selected patch columns, summed over
/// every layer, head, and query row (CLS included).
pub fn attention_loss(trace: &ForwardTrace, s: &PatchIndexSet) -> Result<f64> {
    s.validate(trace.num_patches())?;
    let t = trace.tokens;
    let mut total = 0.0;
    for l in 0..trace.depth {
        for h in 0..trace.heads {
            let a = trace.attention(l, h);
            for &j in s.indices() {
                let col = j + 1;
                total += (0..t).map(|i| a[i * t + col]).sum::<f64>();
            }
        }
    }
    Ok(total)
}

/// Sum of L2 norms of the selected value rows over every layer and head.
pub fn value_loss(trace: &ForwardTrace, s: &PatchIndexSet) -> Result<f64> {
    s.validate(trace.num_patches())?;
    let mut total = 0.0;
    for l in 0..trace.depth {
        for h in 0..trace.heads {
            for &j in s.indices() {
                total += l2_norm(trace.value_row(l, h, j + 1));
            }
        }
    }
    Ok(total)
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine distance `1 - cos(e_ref, e_safe)`, in `[0, 2]`.
pub fn semantic_loss(e_ref: &[f64], e_safe: &[f64]) -> Result<f64> {
    if e_ref.len() != e_safe.len() {
        return Err(Error::DimensionMismatch {
            expected: e_ref.len(),
            actual: e_safe.len(),
        });
    }
    let nr = l2_norm(e_ref);
    let ns = l2_norm(e_safe);
    if nr < 1e-12 || ns < 1e-12 {
        return Err(Error::DegenerateEmbedding);
    }
    // `1 − cos` as `‖â − ŝ‖² / 2`: exact zero for identical inputs and no
    // cancellation near it.
    let d2: f64 = e_ref.iter().zip(e_safe).map(|(a, b)| (a / nr - b / ns).powi(2)).sum();
    Ok((0.5 * d2).clamp(0.0, 2.0))
}

pub fn loss_breakdown(
    trace: &ForwardTrace,
    s: &PatchIndexSet,
    e_ref: &[f64],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let sem = semantic_loss(e_ref, &trace.cls_embedding)?;
    let att = attention_loss(trace, s)?;
    let val = value_loss(trace, s)?;
    Ok(LossBreakdown {
        total: w.w_sem * sem + w.w_att * att + w.w_val * val,
        sem,
        att,
        val,
    })
}

pub fn total_loss(trace: &ForwardTrace, s: &PatchIndexSet, e_ref: &[f64], w: &LossWeights) -> Result<f64> {
    loss_breakdown(trace, s, e_ref, w).map(|b| b.total)
}

/// Share of patch-directed attention mass landing on `s`.
pub fn attention_mass_fraction(trace: &ForwardTrace, s: &PatchIndexSet) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    let selected = attention_loss(trace, s)?;
    let all = attention_loss(trace, &PatchIndexSet::all(trace.num_patches()))?;
    Ok(selected / all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::vit::{forward, init_weights, VitConfig};

    fn synthetic_trace(t: usize, dh: usize, attn: Vec<f64>, values: Vec<f64>) -> ForwardTrace {
        ForwardTrace {
            depth: 1,
            heads: 1,
            tokens: t,
            d_head: dh,
            d_model: dh,
            attn,
            values,
            cls_embedding: vec![1.0; dh],
            token_outputs: vec![0.0; t * dh],
        }
    }

    fn uniform_trace() -> ForwardTrace {
        let t = 17;
        synthetic_trace(t, 4, vec![1.0 / t as f64; t * t], vec![0.0; t * 4])
    }

    #[test]
    fn attention_loss_uniform_and_empty() {
        let tr = uniform_trace();
        assert_eq!(attention_loss(&tr, &PatchIndexSet::empty()).unwrap(), 0.0);
        let k = attention_loss(&tr, &PatchIndexSet::new(vec![0, 3, 9])).unwrap();
        assert!((k - 3.0).abs() < 1e-12);
        assert!(attention_loss(&tr, &PatchIndexSet::new(vec![16])).is_err());
    }

    #[test]
    fn value_loss_three_four_five() {
        let t = 3;
        let mut values = vec![0.0; t * 4];
        values[2 * 4] = 3.0;
        values[2 * 4 + 1] = 4.0;
        let tr = synthetic_trace(t, 4, vec![1.0 / 3.0; 9], values);
        assert_eq!(value_loss(&tr, &PatchIndexSet::new(vec![1])).unwrap(), 5.0);
        assert_eq!(value_loss(&tr, &PatchIndexSet::new(vec![0])).unwrap(), 0.0);
        assert_eq!(value_loss(&tr, &PatchIndexSet::empty()).unwrap(), 0.0);
    }

    #[test]
    fn semantic_loss_cases() {
        let e = [1.0, 2.0, -0.5];
        assert!(semantic_loss(&e, &e).unwrap().abs() < 1e-15);
        assert!((semantic_loss(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        assert!((semantic_loss(&e, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(semantic_loss(&e, &[0.0; 3]), Err(Error::DegenerateEmbedding)));
    }

    #[test]
    fn total_loss_composition() {
        let w = init_weights(VitConfig::default(), 7).unwrap();
        let img = Tensor::filled(vec![16, 16, 1], 0.4);
        let tr = forward(&w, &img).unwrap();
        let e_ref = tr.cls_embedding.clone();
        let s = PatchIndexSet::new(vec![1, 5]);
        assert_eq!(
            total_loss(&tr, &PatchIndexSet::empty(), &e_ref, &LossWeights::default()).unwrap(),
            0.0
        );
        let only_att = LossWeights {
            w_sem: 0.0,
            w_att: 1.0,
            w_val: 0.0,
        };
        assert_eq!(
            total_loss(&tr, &s, &e_ref, &only_att).unwrap(),
            attention_loss(&tr, &s).unwrap()
        );

        let img2 = Tensor::filled(vec![16, 16, 1], 0.7);
        let tr2 = forward(&w, &img2).unwrap();
        let d = LossWeights::default();
        let expected = d.w_sem * semantic_loss(&e_ref, &tr2.cls_embedding).unwrap()
            + d.w_att * attention_loss(&tr2, &s).unwrap()
            + d.w_val * value_loss(&tr2, &s).unwrap();
        assert_eq!(total_loss(&tr2, &s, &e_ref, &d).unwrap(), expected);
    }

    #[test]
    fn mass_fraction() {
        let tr = uniform_trace();
        assert!((attention_mass_fraction(&tr, &PatchIndexSet::new(vec![0, 1, 2, 3])).unwrap() - 0.25).abs() < 1e-12);
        assert!((attention_mass_fraction(&tr, &PatchIndexSet::all(16)).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            attention_mass_fraction(&tr, &PatchIndexSet::empty()),
            Err(Error::EmptyPatchSet)
        ));
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(LossWeights {
            w_sem: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            w_val: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
