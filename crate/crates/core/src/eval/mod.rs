//! Synthetic scenes, the inversion attacker, metrics, the experiment runner,
//! and the edge→cloud simulation.

pub mod config;
pub mod experiment;
pub mod inversion;
pub mod pipeline;
pub mod scene;
pub mod simulate;
pub mod textio;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, MetricsReport};
pub use inversion::{psnr_region, train_inversion_decoder, InversionDecoder};
pub use scene::{generate_dataset, generate_scene, Behavior, Scene, SceneSpec};
pub use simulate::{simulate_pipeline, train_cloud_model, CloudModel};
