//! Locality-sensitive hashing of observables into discrete states.
//!
//! Each [`LshFunction`] quantizes the projection of an observable onto a unit
//! test vector; an [`LshBank`] concatenates `Nv` such keys into a
//! [`CompositeKey`], and the [`StateRegistry`] numbers the distinct keys in
//! order of first observation.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::Observable;
use crate::error::{Error, Result};
use crate::mdp::StateId;

const UNIT_TOLERANCE: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LshFunction {
    v: Vec<f64>,
    q: f64,
    h0: i64,
}

impl LshFunction {
    pub fn new(v: Vec<f64>, q: f64, h0: i64) -> Result<Self> {
        let f = Self { v, q, h0 };
        f.validate()?;
        Ok(f)
    }

    /// Normalizes `direction` to unit length first.
    pub fn from_direction(mut direction: Vec<f64>, q: f64, h0: i64) -> Result<Self> {
        let norm = dot(&direction, &direction).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid("test vector direction must be non-zero"));
        }
        direction.iter_mut().for_each(|x| *x /= norm);
        Self::new(direction, q, h0)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.v.is_empty() {
            return Err(Error::invalid("test vector is empty"));
        }
        let norm = dot(&self.v, &self.v).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("test vector norm {norm} is not 1")));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::invalid(format!("quantization length must be positive, got {}", self.q)));
        }
        Ok(())
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn h0(&self) -> i64 {
        self.h0
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    fn cell(&self, y: &[f64]) -> i64 {
        (dot(&self.v, y) / self.q).floor() as i64
    }
}

pub fn lsh_key(f: &LshFunction, y: &Observable) -> Result<i64> {
    if y.dim() != f.dim() {
        return Err(Error::invalid(format!(
            "observable has dimension {} but test vector has {}",
            y.dim(),
            f.dim()
        )));
    }
    Ok(f.h0 + f.cell(y.coords()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LshBank {
    functions: Vec<LshFunction>,
}

impl LshBank {
    pub fn new(functions: Vec<LshFunction>) -> Result<Self> {
        let bank = Self { functions };
        bank.validate()?;
        Ok(bank)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let first = self
            .functions
            .first()
            .ok_or_else(|| Error::invalid("hash bank needs at least one function"))?;
        for f in &self.functions {
            f.validate()?;
            if f.dim() != first.dim() {
                return Err(Error::invalid("hash functions disagree on dimension"));
            }
        }
        Ok(())
    }

    /// Bank over the given unit vectors with per-function quantization lengths.
    pub fn from_vectors(vectors: Vec<Vec<f64>>, q: &[f64]) -> Result<Self> {
        if q.len() != vectors.len() {
            return Err(Error::invalid(format!(
                "{} quantization lengths for {} test vectors",
                q.len(),
                vectors.len()
            )));
        }
        let functions = vectors
            .into_iter()
            .zip(q)
            .map(|(v, &q)| LshFunction::from_direction(v, q, 0))
            .collect::<Result<_>>()?;
        Self::new(functions)
    }

    /// Bank of normalized standard-Gaussian test vectors drawn from `seed`.
    pub fn gaussian(ne: usize, q: &[f64], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = q
            .iter()
            .map(|_| (0..ne).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self::from_vectors(vectors, q)
    }

    pub fn functions(&self) -> &[LshFunction] {
        &self.functions
    }

    pub fn nv(&self) -> usize {
        self.functions.len()
    }

    pub fn ne(&self) -> usize {
        self.functions[0].dim()
    }

    pub fn min_q(&self) -> f64 {
        self.functions.iter().map(|f| f.q).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompositeKey(Vec<i64>);

impl CompositeKey {
    pub fn new(keys: Vec<i64>) -> Self {
        Self(keys)
    }

    pub fn keys(&self) -> &[i64] {
        &self.0
    }

    pub fn l1_distance(&self, other: &CompositeKey) -> u64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.abs_diff(*b))
            .sum()
    }
}

impl std::fmt::Display for CompositeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
        write!(f, "({})", parts.join(", "))
    }
}

pub fn composite_key(bank: &LshBank, y: &Observable) -> Result<CompositeKey> {
    bank.functions
        .iter()
        .map(|f| lsh_key(f, y))
        .collect::<Result<_>>()
        .map(CompositeKey)
}

/// Offsets chosen so every training observable hashes to keys `>= margin + 1`.
pub fn calibrate_h0(bank: &LshBank, training: &[Observable], margin: u32) -> Result<LshBank> {
    if training.is_empty() {
        return Err(Error::invalid("cannot calibrate offsets on an empty training set"));
    }
    if let Some(bad) = training.iter().find(|y| y.dim() != bank.ne()) {
        return Err(Error::invalid(format!(
            "training observable has dimension {} but bank expects {}",
            bad.dim(),
            bank.ne()
        )));
    }
    let functions = bank
        .functions
        .iter()
        .map(|f| {
            let min_cell = training.iter().map(|y| f.cell(y.coords())).min().unwrap_or(0);
            LshFunction { h0: i64::from(margin) + 1 - min_cell, ..f.clone() }
        })
        .collect();
    Ok(LshBank { functions })
}

/// Probability that a perturbation `eps` leaves every key of the bank unchanged.
pub fn collision_probability(bank: &LshBank, eps: &[f64]) -> Result<f64> {
    if eps.len() != bank.ne() {
        return Err(Error::invalid(format!(
            "perturbation has dimension {} but bank expects {}",
            eps.len(),
            bank.ne()
        )));
    }
    // ‖ε‖·|cos ∠(ε, v)| is |ε·v| for unit v, and 0 when ε = 0.
    Ok(bank
        .functions
        .iter()
        .map(|f| (1.0 - dot(eps, &f.v).abs() / f.q).max(0.0))
        .product())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistryMode {
    Grow,
    Frozen,
}

/// Dense numbering of the composite keys seen so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateRegistry {
    key_to_id: HashMap<CompositeKey, StateId>,
    id_to_key: Vec<CompositeKey>,
}

impl StateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a registry whose ids follow the order of `keys`.
    pub fn from_keys(keys: Vec<CompositeKey>) -> Result<Self> {
        let mut reg = Self::new();
        for key in keys {
            if reg.key_to_id.contains_key(&key) {
                return Err(Error::invalid(format!("duplicate key {key} in registry")));
            }
            reg.insert(key);
        }
        Ok(reg)
    }

    fn insert(&mut self, key: CompositeKey) -> StateId {
        let id = StateId::from_index(self.id_to_key.len());
        self.id_to_key.push(key.clone());
        self.key_to_id.insert(key, id);
        id
    }

    /// In grow mode unseen keys get the next id; in frozen mode they yield `None`.
    pub fn state_of(&mut self, key: &CompositeKey, mode: RegistryMode) -> Option<StateId> {
        match (self.key_to_id.get(key), mode) {
            (Some(&id), _) => Some(id),
            (None, RegistryMode::Grow) => Some(self.insert(key.clone())),
            (None, RegistryMode::Frozen) => None,
        }
    }

    pub fn get(&self, key: &CompositeKey) -> Option<StateId> {
        self.key_to_id.get(key).copied()
    }

    /// Registered key with the smallest L1 tuple distance, lowest id on ties.
    pub fn nearest(&self, key: &CompositeKey) -> Option<StateId> {
        self.id_to_key
            .iter()
            .enumerate()
            .min_by_key(|(i, k)| (k.l1_distance(key), *i))
            .map(|(i, _)| StateId::from_index(i))
    }

    /// Frozen-mode lookup with nearest-key fallback for unseen keys.
    pub fn resolve(&self, key: &CompositeKey) -> Option<StateId> {
        self.get(key).or_else(|| self.nearest(key))
    }

    pub fn key(&self, id: StateId) -> Option<&CompositeKey> {
        self.id_to_key.get(id.index())
    }

    pub fn keys(&self) -> &[CompositeKey] {
        &self.id_to_key
    }

    pub fn len(&self) -> usize {
        self.id_to_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_key.is_empty()
    }
}
