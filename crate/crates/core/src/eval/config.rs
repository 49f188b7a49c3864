//! Flat `key=value` run configuration shared by `evaluate` and `simulate`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channel::NoiseConfig;
use crate::cloud::ProbeConfig;
use crate::error::{Error, Result};
use crate::optimizer::SpadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_size: usize,
    pub data_seed: u64,
    pub weights_seed: u64,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub ridge: f64,
    pub spad: SpadConfig,
    pub noise: NoiseConfig,
    pub probe: ProbeConfig,
    /// Scenes rendered on the edge during `simulate`.
    pub frames: usize,
    pub frame_seed: u64,
    /// Flip one payload bit of this frame in transit.
    pub corrupt_frame: Option<u64>,
    pub frame_interval_ms: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_size: 200,
            data_seed: 11,
            weights_seed: 7,
            split_seed: 13,
            train_fraction: 0.8,
            ridge: 1e-3,
            spad: SpadConfig::default(),
            noise: NoiseConfig { sigma: 0.05, seed: 17 },
            probe: ProbeConfig::default(),
            frames: 20,
            frame_seed: 23,
            corrupt_frame: None,
            frame_interval_ms: 40,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("{key}: cannot parse {v:?} as a number"));
    let out = match v.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>().map_err(|_| bad())? / d.trim().parse::<f64>().map_err(|_| bad())?,
        None => v.parse::<f64>().map_err(|_| bad())?,
    };
    if !out.is_finite() {
        return Err(bad());
    }
    Ok(out)
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?} as an integer")))
}

impl ExperimentConfig {
    /// Parse `key=value` lines; `#` starts a comment, unknown keys are errors.
    /// Numbers accept `a/b` fractions such as `16/255`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset_size" => self.dataset_size = parse_int(key, v)?,
            "data_seed" => self.data_seed = parse_int(key, v)?,
            "weights_seed" => self.weights_seed = parse_int(key, v)?,
            "split_seed" => self.split_seed = parse_int(key, v)?,
            "train_fraction" => self.train_fraction = parse_f64(key, v)?,
            "ridge" => self.ridge = parse_f64(key, v)?,
            "alpha" => self.spad.alpha = parse_f64(key, v)?,
            "epsilon" => self.spad.epsilon = parse_f64(key, v)?,
            "iters" => self.spad.iters = parse_int(key, v)?,
            "spad_seed" => self.spad.seed = parse_int(key, v)?,
            "w_sem" => self.spad.weights.w_sem = parse_f64(key, v)?,
            "w_att" => self.spad.weights.w_att = parse_f64(key, v)?,
            "w_val" => self.spad.weights.w_val = parse_f64(key, v)?,
            "sigma" => self.noise.sigma = parse_f64(key, v)?,
            "noise_seed" => self.noise.seed = parse_int(key, v)?,
            "lr" => self.probe.lr = parse_f64(key, v)?,
            "epochs" => self.probe.epochs = parse_int(key, v)?,
            "frames" => self.frames = parse_int(key, v)?,
            "frame_seed" => self.frame_seed = parse_int(key, v)?,
            "frame_interval_ms" => self.frame_interval_ms = parse_int(key, v)?,
            "corrupt_frame" => {
                self.corrupt_frame = match v {
                    "" | "none" => None,
                    _ => Some(parse_int(key, v)?),
                }
            }
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.spad.validate()?;
        if !self.noise.sigma.is_finite() || self.noise.sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sigma must be >= 0, got {}",
                self.noise.sigma
            )));
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        if !self.probe.lr.is_finite() || self.probe.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.probe.lr)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("dataset_size", self.dataset_size.to_string());
        m.insert("data_seed", self.data_seed.to_string());
        m.insert("weights_seed", self.weights_seed.to_string());
        m.insert("split_seed", self.split_seed.to_string());
        m.insert("train_fraction", self.train_fraction.to_string());
        m.insert("ridge", self.ridge.to_string());
        m.insert("alpha", self.spad.alpha.to_string());
        m.insert("epsilon", self.spad.epsilon.to_string());
        m.insert("iters", self.spad.iters.to_string());
        m.insert("spad_seed", self.spad.seed.to_string());
        m.insert("w_sem", self.spad.weights.w_sem.to_string());
        m.insert("w_att", self.spad.weights.w_att.to_string());
        m.insert("w_val", self.spad.weights.w_val.to_string());
        m.insert("sigma", self.noise.sigma.to_string());
        m.insert("noise_seed", self.noise.seed.to_string());
        m.insert("lr", self.probe.lr.to_string());
        m.insert("epochs", self.probe.epochs.to_string());
        m.insert("frames", self.frames.to_string());
        m.insert("frame_seed", self.frame_seed.to_string());
        m.insert("frame_interval_ms", self.frame_interval_ms.to_string());
        m.insert(
            "corrupt_frame",
            self.corrupt_frame.map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
        let mut s = String::new();
        for (k, v) in m {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn parses_fractions_and_comments() {
        let cfg = ExperimentConfig::from_kv("# run\nepsilon = 8/255\niters=10 # short\ncorrupt_frame=3\n").unwrap();
        assert_eq!(cfg.spad.epsilon, 8.0 / 255.0);
        assert_eq!(cfg.spad.iters, 10);
        assert_eq!(cfg.corrupt_frame, Some(3));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_kv("nonsense=1").is_err());
        assert!(ExperimentConfig::from_kv("alpha").is_err());
        assert!(ExperimentConfig::from_kv("alpha=-1").is_err());
        assert!(ExperimentConfig::from_kv("iters=1.5").is_err());
        assert!(ExperimentConfig::from_kv("sigma=1/0").is_err());
    }
}
