//! Experiment configuration (TOML).
//!
//! ```toml
//! [plant]
//! kind = "lorenz"          # or "external" with `command` / `address`
//! [embedding]
//! ne = 8
//! nsnap = 500
//! [hashing]
//! nv = 3
//! q = 45.0
//! [actions]
//! lo = -26.0
//! hi = 26.0
//! step = 4.0
//! [learning]
//! lambda = 0.1
//! [evaluation]
//! seeds = [1, 2, 3]
//! ```

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingConfig, ScalingWindow};
use crate::error::{Error, Result};
use crate::mdp::{ActionGrid, QTarget};
use crate::plants::{LorenzParams, DEFAULT_TIMEOUT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub embedding: EmbeddingConfig,
    pub hashing: HashingConfig,
    pub actions: ActionGrid,
    pub learning: LearningConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    Lorenz {
        #[serde(default = "defaults::sigma")]
        sigma: f64,
        #[serde(default = "defaults::r")]
        r: f64,
        #[serde(default = "defaults::b")]
        b: f64,
        #[serde(default = "defaults::dt")]
        dt: f64,
        #[serde(default = "defaults::substeps")]
        substeps: u32,
        #[serde(default)]
        sensor_noise: f64,
    },
    External {
        dt: f64,
        /// Shell command speaking the protocol on stdin/stdout.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<String>,
        /// `host:port` of a listening plant.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<String>,
        #[serde(default = "defaults::timeout_secs")]
        timeout_secs: f64,
    },
}

impl PlantConfig {
    pub fn dt(&self) -> f64 {
        match self {
            PlantConfig::Lorenz { dt, .. } | PlantConfig::External { dt, .. } => *dt,
        }
    }

    pub fn lorenz_params(&self) -> Option<LorenzParams> {
        match *self {
            PlantConfig::Lorenz { sigma, r, b, dt, substeps, .. } => {
                Some(LorenzParams { sigma, r, b, dt_sample: dt, substeps })
            }
            PlantConfig::External { .. } => None,
        }
    }

    pub fn timeout(&self) -> Duration {
        match self {
            PlantConfig::External { timeout_secs, .. } => Duration::from_secs_f64(*timeout_secs),
            PlantConfig::Lorenz { .. } => DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    #[default]
    Hankel,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantization {
    Shared(f64),
    PerFunction(Vec<f64>),
}

impl Quantization {
    pub fn lengths(&self, nv: usize) -> Result<Vec<f64>> {
        match self {
            Quantization::Shared(q) => Ok(vec![*q; nv]),
            Quantization::PerFunction(qs) if qs.len() == nv => Ok(qs.clone()),
            Quantization::PerFunction(qs) => Err(Error::Config(format!(
                "hashing.q lists {} lengths for {nv} test vectors",
                qs.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashingConfig {
    pub nv: usize,
    pub q: Quantization,
    #[serde(default = "defaults::h0_margin")]
    pub h0_margin: u32,
    #[serde(default)]
    pub vectors: VectorSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub lambda: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// Ticks of uniform exploration feeding the reward means only.
    #[serde(default = "defaults::effort")]
    pub reward_ticks: u64,
    /// Ticks of ε-greedy exploration that also update Q.
    #[serde(default = "defaults::effort")]
    pub q_ticks: u64,
    #[serde(default = "defaults::epsilon_min")]
    pub epsilon_min: f64,
    #[serde(default = "defaults::lr_exponent")]
    pub lr_exponent: f64,
    #[serde(default)]
    pub q_target: QTarget,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Logged ticks per rollout.
    #[serde(default = "defaults::rollout_ticks")]
    pub ticks: usize,
    /// Policies act from this time on; earlier ticks apply zero.
    #[serde(default = "defaults::engage_time")]
    pub engage_time: f64,
    /// Cost averages start here.
    #[serde(default = "defaults::cost_start_time")]
    pub cost_start_time: f64,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub correlation_window: ScalingWindow,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            ticks: defaults::rollout_ticks(),
            engage_time: defaults::engage_time(),
            cost_start_time: defaults::cost_start_time(),
            seeds: defaults::seeds(),
            correlation_window: ScalingWindow::default(),
        }
    }
}

mod defaults {
    pub fn sigma() -> f64 {
        10.0
    }
    pub fn r() -> f64 {
        20.0
    }
    pub fn b() -> f64 {
        8.0 / 3.0
    }
    pub fn dt() -> f64 {
        0.025
    }
    pub fn substeps() -> u32 {
        10
    }
    pub fn timeout_secs() -> f64 {
        30.0
    }
    pub fn h0_margin() -> u32 {
        8
    }
    pub fn gamma() -> f64 {
        0.95
    }
    pub fn effort() -> u64 {
        50_000
    }
    pub fn epsilon_min() -> f64 {
        0.05
    }
    pub fn lr_exponent() -> f64 {
        0.85
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn rollout_ticks() -> usize {
        4000
    }
    pub fn engage_time() -> f64 {
        15.0
    }
    pub fn cost_start_time() -> f64 {
        20.0
    }
    pub fn seeds() -> Vec<u64> {
        (1..=10).collect()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn q_lengths(&self) -> Result<Vec<f64>> {
        self.hashing.q.lengths(self.hashing.nv)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.embedding.validate().map_err(cfg)?;
        match &self.plant {
            PlantConfig::Lorenz { sensor_noise, .. } => {
                self.plant.lorenz_params().expect("lorenz").validate().map_err(cfg)?;
                if !(*sensor_noise >= 0.0) {
                    return Err(Error::Config("plant.sensor_noise must be non-negative".into()));
                }
            }
            PlantConfig::External { dt, timeout_secs, .. } => {
                if !(*dt > 0.0 && dt.is_finite()) {
                    return Err(Error::Config("plant.dt must be positive".into()));
                }
                if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                    return Err(Error::Config("plant.timeout_secs must be positive".into()));
                }
            }
        }
        let h = &self.hashing;
        if h.nv == 0 || h.nv > self.embedding.ne {
            return Err(Error::Config(format!(
                "hashing.nv = {} must lie in 1..={}",
                h.nv, self.embedding.ne
            )));
        }
        if self.q_lengths()?.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
            return Err(Error::Config("quantization lengths must be positive".into()));
        }
        let l = &self.learning;
        if !(l.lambda >= 0.0 && l.lambda.is_finite()) {
            return Err(Error::Config("learning.lambda must be non-negative".into()));
        }
        if !(l.gamma > 0.0 && l.gamma < 1.0) {
            return Err(Error::Config("learning.gamma must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&l.epsilon_min) {
            return Err(Error::Config("learning.epsilon_min must lie in [0, 1]".into()));
        }
        if !(l.lr_exponent > 0.5 && l.lr_exponent <= 1.0) {
            return Err(Error::Config("learning.lr_exponent must lie in (0.5, 1]".into()));
        }
        let e = &self.evaluation;
        if e.seeds.is_empty() {
            return Err(Error::Config("evaluation.seeds must not be empty".into()));
        }
        if !(e.engage_time.is_finite() && e.cost_start_time.is_finite()) {
            return Err(Error::Config("evaluation times must be finite".into()));
        }
        Ok(())
    }
}
