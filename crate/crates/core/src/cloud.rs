//! Cloud-side inference: linear softmax probes over received embeddings and
//! the structured risk report.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{FeatureEmbedding, WireFrame};
use crate::error::{Error, Result};

pub const BEHAVIOR_LABELS: [&str; 4] = ["normal", "fall", "smoking", "conflict"];
pub const COUNT_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { lr: 0.1, epochs: 500 }
    }
}

/// Multinomial logistic regression: `softmax(W e + b)`, `W` is
/// `n_classes × dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeWeights {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub labels: Vec<String>,
    pub dim: usize,
}

impl ProbeWeights {
    pub fn zeros(labels: Vec<String>, dim: usize) -> Self {
        let n = labels.len();
        Self {
            weights: vec![0.0; n * dim],
            bias: vec![0.0; n],
            labels,
            dim,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    fn logits(&self, e: &[f64]) -> Vec<f64> {
        (0..self.n_classes())
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + row.iter().zip(e).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// Header `n_classes, dim` as little-endian `u32`, then `W` and `b` as
    /// little-endian `f64`, then each label as a `u32` byte length plus UTF-8.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.n_classes() as u32).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in self.weights.iter().chain(&self.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
        for l in &self.labels {
            out.write_all(&(l.len() as u32).to_le_bytes())?;
            out.write_all(l.as_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let read_u32 = |input: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let n = read_u32(&mut input)? as usize;
        let dim = read_u32(&mut input)? as usize;
        let mut vals = vec![0.0; n * dim + n];
        for v in vals.iter_mut() {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let bias = vals.split_off(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let len = read_u32(&mut input)? as usize;
            let mut s = vec![0u8; len];
            input.read_exact(&mut s)?;
            labels.push(String::from_utf8(s).map_err(|e| Error::Parse(e.to_string()))?);
        }
        Ok(Self {
            weights: vals,
            bias,
            labels,
            dim,
        })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn classify(probe: &ProbeWeights, e: &FeatureEmbedding) -> Result<Vec<f64>> {
    if e.len() != probe.dim {
        return Err(Error::DimensionMismatch {
            expected: probe.dim,
            actual: e.len(),
        });
    }
    Ok(softmax(&probe.logits(e.as_slice())))
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}

/// Mean cross-entropy over the examples.
fn mean_loss(probe: &ProbeWeights, examples: &[(FeatureEmbedding, usize)]) -> f64 {
    examples
        .iter()
        .map(|(e, y)| {
            -classify(probe, e).expect("dims checked")[*y]
                .max(f64::MIN_POSITIVE)
                .ln()
        })
        .sum::<f64>()
        / examples.len() as f64
}

/// Full-batch gradient descent from zero weights. Returns the probe and the
/// mean cross-entropy before each epoch plus after the last one.
pub fn train_probe_with_history(
    examples: &[(FeatureEmbedding, usize)],
    labels: &[&str],
    cfg: &ProbeConfig,
) -> Result<(ProbeWeights, Vec<f64>)> {
    let n_classes = labels.len();
    let dim = examples.first().map(|(e, _)| e.len()).unwrap_or(0);
    for (e, y) in examples {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
        if *y >= n_classes {
            return Err(Error::IndexOutOfRange {
                index: *y,
                count: n_classes,
            });
        }
    }
    let mut present = vec![false; n_classes];
    examples.iter().for_each(|(_, y)| present[*y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass);
    }

    let mut probe = ProbeWeights::zeros(labels.iter().map(|s| s.to_string()).collect(), dim);
    let inv_n = 1.0 / examples.len() as f64;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        history.push(mean_loss(&probe, examples));
        let mut gw = vec![0.0; n_classes * dim];
        let mut gb = vec![0.0; n_classes];
        for (e, y) in examples {
            let mut p = classify(&probe, e)?;
            p[*y] -= 1.0;
            for c in 0..n_classes {
                gb[c] += p[c];
                for (g, x) in gw[c * dim..(c + 1) * dim].iter_mut().zip(e.as_slice()) {
                    *g += p[c] * x;
                }
            }
        }
        for (w, g) in probe.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * g * inv_n;
        }
        for (b, g) in probe.bias.iter_mut().zip(&gb) {
            *b -= cfg.lr * g * inv_n;
        }
    }
    history.push(mean_loss(&probe, examples));
    Ok((probe, history))
}

pub fn train_probe(examples: &[(FeatureEmbedding, usize)], labels: &[&str], cfg: &ProbeConfig) -> Result<ProbeWeights> {
    train_probe_with_history(examples, labels, cfg).map(|(p, _)| p)
}

pub fn accuracy(probe: &ProbeWeights, examples: &[(FeatureEmbedding, usize)]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (e, y) in examples {
        hits += (argmax(&classify(probe, e)?) == *y) as usize;
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorScore {
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub person_count: u32,
    pub behaviors: Vec<BehaviorScore>,
    pub alert: bool,
}

impl RiskReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields always serialize")
    }
}

/// Assemble the report for one frame. `labels` names the entries of
/// `behavior_dist`; `count_dist` covers person counts `0..`.
pub fn build_report(frame: &WireFrame, labels: &[String], behavior_dist: &[f64], count_dist: &[f64]) -> RiskReport {
    let mut behaviors: Vec<BehaviorScore> = labels
        .iter()
        .zip(behavior_dist)
        .map(|(l, &c)| BehaviorScore {
            label: l.clone(),
            confidence: c,
        })
        .collect();
    behaviors.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let alert = behaviors.first().is_some_and(|b| b.label != "normal");
    RiskReport {
        frame_id: frame.frame_id,
        timestamp_ms: frame.timestamp_ms,
        person_count: argmax(count_dist) as u32,
        behaviors,
        alert,
    }
}
