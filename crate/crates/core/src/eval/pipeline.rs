//! Edge-side processing of one scene into a wire frame.

use crate::channel::{extract_embedding, inject_noise, pack_frame, NoiseConfig, WireFrame};
use crate::error::Result;
use crate::optimizer::{spad_optimize, OptimTrace, SpadConfig};
use crate::psz::{mask_to_patches, PatchIndexSet};
use crate::tensor::Tensor;
use crate::vit::{forward, VitWeights};

use super::scene::Scene;

#[derive(Debug, Clone)]
pub struct EdgeOutput {
    pub frame: WireFrame,
    pub x_safe: Tensor,
    pub optim: OptimTrace,
    pub psz: PatchIndexSet,
}

impl EdgeOutput {
    pub fn mass_before(&self) -> f64 {
        self.optim.initial().psz_mass_fraction
    }

    pub fn mass_after(&self) -> f64 {
        self.optim.last().psz_mass_fraction
    }
}

/// Lock the privacy zone, perturb, embed, add feature noise, and quantize.
pub fn edge_process(
    weights: &VitWeights,
    scene: &Scene,
    spad: &SpadConfig,
    noise: &NoiseConfig,
    frame_id: u64,
    timestamp_ms: u64,
) -> Result<EdgeOutput> {
    let psz = mask_to_patches(&scene.mask, weights.config.patch, 0.0)?;
    let (x_safe, optim) = spad_optimize(weights, &scene.image, &psz, spad)?;
    let embedding = extract_embedding(&forward(weights, &x_safe)?);
    let noised = inject_noise(&embedding, noise);
    Ok(EdgeOutput {
        frame: pack_frame(&noised, frame_id, timestamp_ms, noise.sigma),
        x_safe,
        optim,
        psz,
    })
}

/// Unprotected baseline: raw image straight to the quantized frame.
pub fn clean_frame(weights: &VitWeights, scene: &Scene, frame_id: u64, timestamp_ms: u64) -> Result<WireFrame> {
    let embedding = extract_embedding(&forward(weights, &scene.image)?);
    Ok(pack_frame(&embedding, frame_id, timestamp_ms, 0.0))
}
