//! Edge and cloud agents joined only by a frame byte stream.
//!
//! The edge renders scenes, desensitizes them, and writes encoded frames in
//! irregular chunks; the cloud reassembles frames, classifies them, and emits
//! one JSON line per frame (or per rejected frame). Frames are
//! self-contained, so the output does not depend on thread scheduling.

use std::sync::mpsc;
use std::thread;

use rayon::prelude::*;

use crate::channel::{encode_frame, unpack_embedding, FrameReader, NoiseConfig, StreamItem, FRAME_OVERHEAD};
use crate::cloud::{build_report, classify, train_probe, ProbeWeights, BEHAVIOR_LABELS};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::vit::VitWeights;

use super::config::ExperimentConfig;
use super::pipeline::edge_process;
use super::scene::{generate_dataset, scene_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct CloudModel {
    pub behavior: ProbeWeights,
    pub count: ProbeWeights,
}

/// Fit the behavior and person-count probes on protected embeddings of the
/// configured training dataset (what the cloud will actually receive).
pub fn train_cloud_model(cfg: &ExperimentConfig, weights: &VitWeights) -> Result<CloudModel> {
    let scenes = generate_dataset(cfg.dataset_size, cfg.data_seed)?;
    let embedded: Vec<_> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let noise = NoiseConfig {
                sigma: cfg.noise.sigma,
                seed: derive_seed(cfg.noise.seed, i as u64),
            };
            let edge = edge_process(weights, scene, &cfg.spad, &noise, i as u64, 0)?;
            Ok((unpack_embedding(&edge.frame), scene.labels.clone()))
        })
        .collect::<Result<_>>()?;
    let behavior: Vec<_> = embedded.iter().map(|(e, l)| (e.clone(), l.behavior.index())).collect();
    let count: Vec<_> = embedded.iter().map(|(e, l)| (e.clone(), l.person_count)).collect();
    Ok(CloudModel {
        behavior: train_probe(&behavior, &BEHAVIOR_LABELS, &cfg.probe)?,
        count: train_probe(&count, &["0", "1", "2", "3"], &cfg.probe)?,
    })
}

fn error_record(offset: u64, code: &str, frame_id: Option<u64>) -> String {
    serde_json::json!({ "frame_id": frame_id, "error": code, "offset": offset }).to_string()
}

fn cloud_line(model: &CloudModel, item: StreamItem) -> Result<String> {
    match item {
        StreamItem::Frame(frame) => {
            let e = unpack_embedding(&frame);
            let behavior = classify(&model.behavior, &e)?;
            let count = classify(&model.count, &e)?;
            Ok(build_report(&frame, &model.behavior.labels, &behavior, &count).to_json())
        }
        StreamItem::Error {
            offset,
            error,
            frame_id_hint,
        } => Ok(error_record(offset, error.code(), frame_id_hint)),
    }
}

/// Run `cfg.frames` frames through edge → byte stream → cloud and return the
/// report lines in arrival order.
pub fn simulate_pipeline(cfg: &ExperimentConfig, weights: &VitWeights, model: &CloudModel) -> Result<Vec<String>> {
    // Each frame's scene depends only on its id, so runs of different
    // lengths agree on their common prefix.
    let scenes = (0..cfg.frames as u64)
        .map(|id| scene_from_seed(derive_seed(cfg.frame_seed, id)))
        .collect::<Result<Vec<_>>>()?;
    let (tx, rx) = mpsc::sync_channel::<Vec<u8>>(4);

    thread::scope(|s| {
        let edge = s.spawn(move || -> Result<()> {
            for (i, scene) in scenes.iter().enumerate() {
                let id = i as u64;
                let noise = NoiseConfig {
                    sigma: cfg.noise.sigma,
                    seed: derive_seed(cfg.noise.seed ^ cfg.frame_seed, id),
                };
                let out = edge_process(weights, scene, &cfg.spad, &noise, id, id * cfg.frame_interval_ms)?;
                let mut bytes = encode_frame(&out.frame);
                if cfg.corrupt_frame == Some(id) && !out.frame.payload.is_empty() {
                    let at = FRAME_OVERHEAD - 4 + (i % out.frame.payload.len());
                    bytes[at] ^= 0x01;
                }
                // Split each frame at an irregular point to exercise reassembly.
                let cut = (i * 7 + 3) % bytes.len();
                let tail = bytes.split_off(cut);
                for chunk in [bytes, tail] {
                    if !chunk.is_empty() && tx.send(chunk).is_err() {
                        return Err(Error::InvalidConfig("cloud agent hung up".into()));
                    }
                }
            }
            Ok(())
        });

        let cloud = s.spawn(move || -> Result<Vec<String>> {
            let mut reader = FrameReader::new();
            let mut lines = Vec::new();
            for chunk in rx {
                reader.push(&chunk);
                for item in reader.drain_items() {
                    lines.push(cloud_line(model, item)?);
                }
            }
            reader.finish();
            for item in reader.drain_items() {
                lines.push(cloud_line(model, item)?);
            }
            Ok(lines)
        });

        let edge_result = edge.join().expect("edge agent panicked");
        let lines = cloud.join().expect("cloud agent panicked")?;
        edge_result.map(|_| lines)
    })
}
