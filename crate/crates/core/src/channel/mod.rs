//! Edge→cloud feature path: embedding extraction, feature-space Gaussian
//! noise, 8-bit affine quantization, and the wire frame.

mod frame;
mod stream;

pub use frame::{crc32, decode_frame, encode_frame, FrameError, WireFrame, FLAG_NOISE, FRAME_OVERHEAD, MAGIC, VERSION};
pub use stream::{FrameReader, StreamItem};

use crate::rng::GaussianStream;
use crate::vit::ForwardTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbedding(pub Vec<f64>);

impl FeatureEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.05, seed: 0 }
    }
}

pub fn extract_embedding(trace: &ForwardTrace) -> FeatureEmbedding {
    FeatureEmbedding(trace.cls_embedding.clone())
}

/// `e + n` with `n ~ N(0, sigma²)` drawn in element order from a fresh
/// Gaussian stream seeded by `cfg.seed`.
pub fn inject_noise(e: &FeatureEmbedding, cfg: &NoiseConfig) -> FeatureEmbedding {
    if cfg.sigma == 0.0 {
        return e.clone();
    }
    let mut g = GaussianStream::new(cfg.seed);
    FeatureEmbedding(e.0.iter().map(|v| v + cfg.sigma * g.next_normal()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub scale: f64,
    pub offset: f64,
    pub bytes: Vec<u8>,
}

/// Per-vector affine 8-bit code: `offset = min`, `scale = (max − min)/255`
/// (1 for constant vectors), rounding half away from zero.
pub fn quantize(e: &FeatureEmbedding) -> Quantized {
    let min = e.0.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = e.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if e.0.is_empty() {
        return Quantized {
            scale: 1.0,
            offset: 0.0,
            bytes: Vec::new(),
        };
    }
    let scale = if max > min { (max - min) / 255.0 } else { 1.0 };
    let bytes =
        e.0.iter()
            .map(|v| ((v - min) / scale).round().clamp(0.0, 255.0) as u8)
            .collect();
    Quantized {
        scale,
        offset: min,
        bytes,
    }
}

pub fn dequantize(scale: f64, offset: f64, bytes: &[u8]) -> FeatureEmbedding {
    FeatureEmbedding(bytes.iter().map(|&q| offset + scale * q as f64).collect())
}

/// Quantize an embedding into a frame. Scale and offset travel as `f32`.
pub fn pack_frame(e: &FeatureEmbedding, frame_id: u64, timestamp_ms: u64, sigma: f64) -> WireFrame {
    let q = quantize(e);
    WireFrame {
        flags: if sigma > 0.0 { FLAG_NOISE } else { 0 },
        frame_id,
        timestamp_ms,
        sigma: sigma as f32,
        scale: q.scale as f32,
        offset: q.offset as f32,
        payload: q.bytes,
    }
}

/// The embedding the cloud sees for a frame.
pub fn unpack_embedding(frame: &WireFrame) -> FeatureEmbedding {
    dequantize(frame.scale as f64, frame.offset as f64, &frame.payload)
}
