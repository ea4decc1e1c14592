//! Versioned JSON model document.
//!
//! Transition statistics are stored sparsely (observed triples only); the
//! Q matrix and its visit counts are dense, one row per state. Floats use
//! shortest round-trip formatting, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::hashing::{CompositeKey, LshBank, StateRegistry};
use crate::mdp::{ActionGrid, ActionIndex, MdpModel, StateId, TransitionStat};
use crate::runner::Artifacts;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Calibrated,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub i: StateId,
    pub l: ActionIndex,
    pub j: StateId,
    pub count: u64,
    pub reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub calibration_ticks: u64,
    pub reward_ticks: u64,
    pub q_ticks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_dim: Option<f64>,
    /// Seconds since the Unix epoch, taken from `SOURCE_DATE_EPOCH` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub generator: String,
}

impl Provenance {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
            generator: concat!("lshctl ", env!("CARGO_PKG_VERSION")).to_string(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub stage: Stage,
    pub embedding: EmbeddingConfig,
    pub bank: LshBank,
    pub registry: Vec<CompositeKey>,
    pub actions: ActionGrid,
    pub gamma: f64,
    pub lambda: f64,
    pub transitions: Vec<TransitionEntry>,
    pub q: Vec<Vec<f64>>,
    pub q_visits: Vec<Vec<u64>>,
    pub provenance: Provenance,
}

impl ModelDocument {
    pub fn from_artifacts(artifacts: &Artifacts, stage: Stage, provenance: Provenance) -> Self {
        let model = &artifacts.model;
        let na = model.n_actions();
        let transitions = model
            .transitions()
            .map(|((i, l, j), s)| TransitionEntry { i, l, j, count: s.count, reward: s.reward })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            stage,
            embedding: artifacts.embedding,
            bank: artifacts.bank.clone(),
            registry: artifacts.registry.keys().to_vec(),
            actions: artifacts.grid.clone(),
            gamma: model.gamma(),
            lambda: artifacts.lambda,
            transitions,
            q: model.q_matrix().chunks(na).map(<[f64]>::to_vec).collect(),
            q_visits: model.q_visit_matrix().chunks(na).map(<[u64]>::to_vec).collect(),
            provenance,
        }
    }

    pub fn to_artifacts(&self) -> Result<Artifacts> {
        let doc = |e: Error| Error::Document(e.to_string());
        self.embedding.validate().map_err(doc)?;
        self.bank.validate().map_err(doc)?;
        if self.bank.ne() != self.embedding.ne {
            return Err(Error::Document("hash bank dimension differs from the embedding".into()));
        }
        if self.registry.iter().any(|k| k.keys().len() != self.bank.nv()) {
            return Err(Error::Document("registry key length differs from the bank".into()));
        }
        let registry = StateRegistry::from_keys(self.registry.clone()).map_err(doc)?;
        let (ns, na) = (registry.len(), self.actions.len());
        if self.q.len() != ns || self.q.iter().any(|r| r.len() != na) {
            return Err(Error::Document(format!("Q matrix must be {ns} x {na}")));
        }
        if self.q_visits.len() != ns || self.q_visits.iter().any(|r| r.len() != na) {
            return Err(Error::Document(format!("Q visit matrix must be {ns} x {na}")));
        }
        let model = MdpModel::from_parts(
            ns,
            na,
            self.gamma,
            self.transitions
                .iter()
                .map(|t| ((t.i, t.l, t.j), TransitionStat { count: t.count, reward: t.reward })),
            self.q.concat(),
            self.q_visits.concat(),
        )
        .map_err(doc)?;
        Ok(Artifacts {
            embedding: self.embedding,
            bank: self.bank.clone(),
            registry,
            grid: self.actions.clone(),
            model,
            lambda: self.lambda,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document always serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Document("missing format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::FormatVersion { found: found.min(u32::MAX as u64) as u32, expected: FORMAT_VERSION });
        }
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        doc.to_artifacts()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
