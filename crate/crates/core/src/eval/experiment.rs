//! Privacy/utility experiment over a synthetic dataset.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{unpack_embedding, FeatureEmbedding, NoiseConfig};
use crate::cloud::{accuracy, train_probe, ProbeConfig, BEHAVIOR_LABELS};
use crate::error::Result;
use crate::rng::{derive_seed, Xoshiro256PlusPlus};
use crate::tensor::Tensor;
use crate::vit::{init_weights, VitConfig};

use super::config::ExperimentConfig;
use super::inversion::{psnr_region, train_inversion_decoder};
use super::pipeline::{clean_frame, edge_process};
use super::scene::{generate_dataset, Scene, NUM_IDENTITIES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub clean: f64,
    pub protected: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassPair {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub behavior_accuracy: Paired,
    pub identity_accuracy: Paired,
    pub count_accuracy: Paired,
    pub psz_mass_fraction: MassPair,
    pub inversion_psnr_psz: Paired,
    pub config: ExperimentConfig,
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>10} {:>10}", "metric", "clean", "protected");
        let _ = writeln!(s, "{}", "-".repeat(50));
        let rows = [
            ("behavior accuracy", self.behavior_accuracy),
            ("identity accuracy", self.identity_accuracy),
            ("person-count accuracy", self.count_accuracy),
            ("inversion PSNR in PSZ (dB)", self.inversion_psnr_psz),
        ];
        for (name, p) in rows {
            let _ = writeln!(s, "{name:<28} {:>10.4} {:>10.4}", p.clean, p.protected);
        }
        let _ = writeln!(
            s,
            "{:<28} {:>10.4} {:>10.4}",
            "PSZ attention mass fraction", self.psz_mass_fraction.before, self.psz_mass_fraction.after
        );
        s
    }
}

struct SceneResult {
    clean: FeatureEmbedding,
    protected: FeatureEmbedding,
    mass_before: f64,
    mass_after: f64,
}

fn probe_pair(
    rows: &[SceneResult],
    scenes: &[Scene],
    train: &[usize],
    test: &[usize],
    label: impl Fn(&Scene) -> usize,
    labels: &[&str],
    cfg: &ProbeConfig,
) -> Result<Paired> {
    let collect = |idx: &[usize], protected: bool| -> Vec<(FeatureEmbedding, usize)> {
        idx.iter()
            .map(|&i| {
                let e = if protected { &rows[i].protected } else { &rows[i].clean };
                (e.clone(), label(&scenes[i]))
            })
            .collect()
    };
    let mut out = [0.0; 2];
    for (slot, protected) in [false, true].into_iter().enumerate() {
        let probe = train_probe(&collect(train, protected), labels, cfg)?;
        out[slot] = accuracy(&probe, &collect(test, protected))?;
    }
    Ok(Paired {
        clean: out[0],
        protected: out[1],
    })
}

fn inversion_pair(
    rows: &[SceneResult],
    scenes: &[Scene],
    train: &[usize],
    test: &[usize],
    ridge: f64,
) -> Result<Paired> {
    let mut out = [0.0; 2];
    for (slot, protected) in [false, true].into_iter().enumerate() {
        let pick = |i: usize| if protected { &rows[i].protected } else { &rows[i].clean };
        let pairs: Vec<(FeatureEmbedding, Tensor)> = train
            .iter()
            .map(|&i| (pick(i).clone(), scenes[i].image.clone()))
            .collect();
        let decoder = train_inversion_decoder(&pairs, ridge)?;
        let mut total = 0.0;
        for &i in test {
            let recon = decoder.reconstruct(pick(i))?;
            total += psnr_region(&recon, &scenes[i].image, &scenes[i].mask)?;
        }
        out[slot] = total / test.len() as f64;
    }
    Ok(Paired {
        clean: out[0],
        protected: out[1],
    })
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    Xoshiro256PlusPlus::seed_from_u64(seed).shuffle(&mut idx);
    let n_train = (n as f64 * train_fraction).round() as usize;
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Generate, split, embed through both pipelines, fit probes and inversion
/// decoders on each pipeline's training split, and score the test split.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let weights = init_weights(VitConfig::default(), cfg.weights_seed)?;
    let scenes = generate_dataset(cfg.dataset_size, cfg.data_seed)?;
    let (train, test) = split_indices(scenes.len(), cfg.train_fraction, cfg.split_seed);

    let rows: Vec<SceneResult> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| -> Result<SceneResult> {
            let noise = NoiseConfig {
                sigma: cfg.noise.sigma,
                seed: derive_seed(cfg.noise.seed, i as u64),
            };
            let edge = edge_process(&weights, scene, &cfg.spad, &noise, i as u64, 0)?;
            Ok(SceneResult {
                clean: unpack_embedding(&clean_frame(&weights, scene, i as u64, 0)?),
                protected: unpack_embedding(&edge.frame),
                mass_before: edge.mass_before(),
                mass_after: edge.mass_after(),
            })
        })
        .collect::<Result<_>>()?;

    let identity_labels: Vec<String> = (0..NUM_IDENTITIES).map(|i| format!("id{i}")).collect();
    let identity_refs: Vec<&str> = identity_labels.iter().map(String::as_str).collect();
    let count_labels = ["0", "1", "2", "3"];

    let behavior_accuracy = probe_pair(
        &rows,
        &scenes,
        &train,
        &test,
        |s| s.labels.behavior.index(),
        &BEHAVIOR_LABELS,
        &cfg.probe,
    )?;
    let identity_accuracy = probe_pair(
        &rows,
        &scenes,
        &train,
        &test,
        |s| s.labels.identity_id,
        &identity_refs,
        &cfg.probe,
    )?;
    let count_accuracy = probe_pair(
        &rows,
        &scenes,
        &train,
        &test,
        |s| s.labels.person_count,
        &count_labels,
        &cfg.probe,
    )?;
    let inversion_psnr_psz = inversion_pair(&rows, &scenes, &train, &test, cfg.ridge)?;

    let mean = |f: &dyn Fn(&SceneResult) -> f64| test.iter().map(|&i| f(&rows[i])).sum::<f64>() / test.len() as f64;
    Ok(MetricsReport {
        behavior_accuracy,
        identity_accuracy,
        count_accuracy,
        psz_mass_fraction: MassPair {
            before: mean(&|r| r.mass_before),
            after: mean(&|r| r.mass_after),
        },
        inversion_psnr_psz,
        config: cfg.clone(),
    })
}
