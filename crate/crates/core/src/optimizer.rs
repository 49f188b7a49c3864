//! Iterated sign-gradient perturbation under an L∞ budget.
//!
//! Each step moves `δ ← δ − α·sign(∇L)`, clamps `δ` to `[−ε, ε]`, clamps
//! `x + δ` to `[0, 1]`, and stores `δ = x_safe − x`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::{attention_mass_fraction, loss_breakdown, LossWeights};
use crate::psz::PatchIndexSet;
use crate::tensor::Tensor;
use crate::vit::{forward, loss_and_gradient, ForwardTrace, LossSelector, VitWeights};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpadConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub iters: usize,
    pub weights: LossWeights,
    /// Carried for provenance; the loop itself starts from `δ = 0` and
    /// draws no randomness.
    pub seed: u64,
}

impl Default for SpadConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 255.0,
            epsilon: 16.0 / 255.0,
            iters: 100,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl SpadConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimRecord {
    pub iter: usize,
    pub total: f64,
    pub sem: f64,
    pub att: f64,
    pub val: f64,
    pub psz_mass_fraction: f64,
}

/// Records `0..=iters`; record 0 is the clean image.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimTrace {
    pub records: Vec<OptimRecord>,
    pub delta: Tensor,
}

impl OptimTrace {
    pub fn initial(&self) -> &OptimRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &OptimRecord {
        self.records.last().expect("trace always holds the initial record")
    }

    /// `iter,L_total,L_sem,L_att,L_val,psz_mass_fraction` rows, with header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,L_total,L_sem,L_att,L_val,psz_mass_fraction\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.iter, r.total, r.sem, r.att, r.val, r.psz_mass_fraction
            );
        }
        s
    }
}

pub fn sign(t: &Tensor) -> Tensor {
    t.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// One projected sign step. Returns `(δ_next, x_safe)` where `δ_next` is
/// stored as `x_safe − x`, so `‖δ_next‖∞ ≤ ε` and `x_safe ∈ [0, 1]` hold
/// exactly, and `x + δ_next == x_safe` whenever the subtraction is exact
/// (always, unless `x` is tiny next to `ε`).
pub fn spad_step(delta: &Tensor, grad: &Tensor, cfg: &SpadConfig, x: &Tensor) -> Result<(Tensor, Tensor)> {
    delta.check_shape(x.shape())?;
    grad.check_shape(x.shape())?;
    let eps = cfg.epsilon;
    let mut x_safe = x.clone();
    let mut next = delta.clone();
    let step = sign(grad);
    for (((xs, dn), &s), &xv) in x_safe
        .data_mut()
        .iter_mut()
        .zip(next.data_mut())
        .zip(step.data())
        .zip(x.data())
    {
        let d = (*dn - cfg.alpha * s).clamp(-eps, eps);
        let mut v = (xv + d).clamp(0.0, 1.0);
        // Rounding in `v − x` can overshoot the budget by an ulp; pull `v`
        // toward `x` until the stored difference fits.
        while (v - xv).abs() > eps {
            v = if v > xv { v.next_down() } else { v.next_up() };
        }
        *xs = v;
        *dn = v - xv;
    }
    Ok((next, x_safe))
}

fn objective(e_ref: &[f64], s: &PatchIndexSet, w: &LossWeights) -> LossSelector {
    LossSelector::Weighted(vec![
        (LossSelector::Sem(e_ref.to_vec()), w.w_sem),
        (LossSelector::Att(s.clone()), w.w_att),
        (LossSelector::Val(s.clone()), w.w_val),
    ])
}

fn record(iter: usize, trace: &ForwardTrace, s: &PatchIndexSet, e_ref: &[f64], w: &LossWeights) -> Result<OptimRecord> {
    let b = loss_breakdown(trace, s, e_ref, w)?;
    let psz_mass_fraction = if s.is_empty() {
        0.0
    } else {
        attention_mass_fraction(trace, s)?
    };
    Ok(OptimRecord {
        iter,
        total: b.total,
        sem: b.sem,
        att: b.att,
        val: b.val,
        psz_mass_fraction,
    })
}

/// Run the perturbation loop from `δ₀ = 0`. The semantic reference is the
/// clean image's CLS embedding, frozen before the first step.
pub fn spad_optimize(
    weights: &VitWeights,
    x: &Tensor,
    s: &PatchIndexSet,
    cfg: &SpadConfig,
) -> Result<(Tensor, OptimTrace)> {
    cfg.validate()?;
    x.check_shape(&weights.config.image_shape())?;
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidConfig("image values must lie in [0, 1]".into()));
    }
    s.validate(weights.config.num_patches())?;

    let clean = forward(weights, x)?;
    let e_ref = clean.cls_embedding.clone();
    let selector = objective(&e_ref, s, &cfg.weights);

    let mut delta = Tensor::zeros(x.shape().to_vec());
    let mut x_safe = x.clone();
    let mut records = Vec::with_capacity(cfg.iters + 1);
    for iter in 0..cfg.iters {
        let (trace, _, grad) = loss_and_gradient(weights, &x_safe, &selector)?;
        records.push(record(iter, &trace, s, &e_ref, &cfg.weights)?);
        (delta, x_safe) = spad_step(&delta, &grad, cfg, x)?;
    }
    let last = if cfg.iters == 0 {
        clean
    } else {
        forward(weights, &x_safe)?
    };
    records.push(record(cfg.iters, &last, s, &e_ref, &cfg.weights)?);

    Ok((x_safe, OptimTrace { records, delta }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{init_weights, VitConfig};

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn sign_cases() {
        assert_eq!(sign(&t(&[2.5, -0.1, 0.0])).data(), &[1.0, -1.0, 0.0]);
        assert!(sign(&Tensor::zeros(vec![4])).data().iter().all(|&v| v == 0.0));
        let r = t(&[0.3, -7.0, 0.0, 1e-300]);
        assert_eq!(sign(&sign(&r)), sign(&r));
    }

    #[test]
    fn step_arithmetic_and_fixed_point() {
        let cfg = SpadConfig {
            alpha: 0.1,
            epsilon: 1.0,
            ..Default::default()
        };
        let x = t(&[0.5, 0.5, 0.5]);
        let (d, xs) = spad_step(&Tensor::zeros(vec![3]), &t(&[2.0, -3.0, 0.0]), &cfg, &x).unwrap();
        assert_eq!(xs.data(), &[0.4, 0.6, 0.5]);
        // Stored δ is `x_safe − x`, one rounding away from the raw ∓0.1 step.
        for (got, want) in d.data().iter().zip([-0.1, 0.1, 0.0]) {
            assert!((got - want).abs() <= f64::EPSILON);
        }

        // Zero gradient keeps any δ the step itself stored.
        let x = t(&[0.37, 0.01, 0.99]);
        let (delta, _) = spad_step(&t(&[0.05, -0.02, 0.3]), &t(&[1.0, -1.0, 0.0]), &cfg, &x).unwrap();
        let (d2, xs2) = spad_step(&delta, &Tensor::zeros(vec![3]), &cfg, &x).unwrap();
        assert_eq!(d2, delta);
        assert_eq!(spad_step(&d2, &Tensor::zeros(vec![3]), &cfg, &x).unwrap().1, xs2);
    }

    #[test]
    fn step_projects_to_image_range() {
        let cfg = SpadConfig {
            alpha: 0.05,
            epsilon: 0.1,
            ..Default::default()
        };
        let x = t(&[0.0, 1.0]);
        let (d, xs) = spad_step(&Tensor::zeros(vec![2]), &t(&[1.0, -1.0]), &cfg, &x).unwrap();
        assert_eq!(xs.data(), &[0.0, 1.0]);
        assert_eq!(d.data(), &[0.0, 0.0]);
    }

    #[test]
    fn step_clamps_budget() {
        let cfg = SpadConfig {
            alpha: 0.3,
            epsilon: 0.1,
            ..Default::default()
        };
        let x = t(&[0.5, 0.3]);
        let (d, xs) = spad_step(&Tensor::zeros(vec![2]), &t(&[-1.0, 1.0]), &cfg, &x).unwrap();
        assert!(d.max_abs() <= 0.1);
        assert!((d.data()[0] - 0.1).abs() <= f64::EPSILON && (d.data()[1] + 0.1).abs() <= f64::EPSILON);
        for ((xs, xv), dv) in xs.data().iter().zip(x.data()).zip(d.data()) {
            assert_eq!(*xs, xv + dv);
            assert_eq!(xs - xv, *dv);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = SpadConfig::default();
        assert!(spad_step(
            &Tensor::zeros(vec![2]),
            &Tensor::zeros(vec![3]),
            &cfg,
            &Tensor::zeros(vec![2])
        )
        .is_err());
    }

    #[test]
    fn zero_step_and_constant_loss_leave_image_unchanged() {
        let w = init_weights(VitConfig::default(), 7).unwrap();
        let x = Tensor::filled(vec![16, 16, 1], 0.4);
        let s = PatchIndexSet::new(vec![0, 1]);
        let cfg = SpadConfig {
            alpha: 0.0,
            iters: 1,
            ..Default::default()
        };
        let (xs, tr) = spad_optimize(&w, &x, &s, &cfg).unwrap();
        assert_eq!(xs, x);
        assert_eq!(tr.records.len(), 2);
        assert_eq!(tr.records[0].total, tr.records[1].total);

        let cfg = SpadConfig {
            iters: 5,
            weights: LossWeights {
                w_sem: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let (xs, tr) = spad_optimize(&w, &x, &PatchIndexSet::empty(), &cfg).unwrap();
        assert_eq!(xs, x);
        assert_eq!(tr.delta.max_abs(), 0.0);
    }

    #[test]
    fn csv_export_has_one_row_per_record() {
        let w = init_weights(VitConfig::default(), 7).unwrap();
        let x = Tensor::filled(vec![16, 16, 1], 0.4);
        let cfg = SpadConfig {
            iters: 3,
            ..Default::default()
        };
        let (_, tr) = spad_optimize(&w, &x, &PatchIndexSet::new(vec![2]), &cfg).unwrap();
        let csv = tr.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn rejects_out_of_range_image() {
        let w = init_weights(VitConfig::default(), 7).unwrap();
        let x = Tensor::filled(vec![16, 16, 1], 1.5);
        assert!(spad_optimize(&w, &x, &PatchIndexSet::empty(), &SpadConfig::default()).is_err());
    }
}
