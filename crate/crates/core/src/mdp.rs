//! The learned Markov decision process.
//!
//! [`MdpModel`] accumulates transition counts `N(i,l,j)`, running-mean
//! transition rewards `R(i,l,j)` and Q-factors `Q(i,l)` online. Dense
//! [`Probabilities`] / [`RewardTensor`] snapshots feed the exact solvers
//! ([`policy_values`], [`value_iteration`]) used for evaluation and as
//! oracles for the Q-learning path.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VALUE_ITERATION_MAX_ITERS: usize = 1_000_000;

/// 1-based state identifier, contiguous in order of first observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct StateId(u32);

impl TryFrom<u32> for StateId {
    type Error = String;
    fn try_from(v: u32) -> std::result::Result<Self, String> {
        if v == 0 {
            Err("indices start at 1".into())
        } else {
            Ok(Self(v))
        }
    }
}

impl From<StateId> for u32 {
    fn from(v: StateId) -> u32 {
        v.0
    }
}

impl StateId {
    pub fn new(id: u32) -> Self {
        assert!(id >= 1, "state ids start at 1");
        Self(id)
    }

    pub fn from_index(index: usize) -> Self {
        Self(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// 0-based position.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// 1-based index into an [`ActionGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ActionIndex(u32);

impl TryFrom<u32> for ActionIndex {
    type Error = String;
    fn try_from(v: u32) -> std::result::Result<Self, String> {
        if v == 0 {
            Err("indices start at 1".into())
        } else {
            Ok(Self(v))
        }
    }
}

impl From<ActionIndex> for u32 {
    fn from(v: ActionIndex) -> u32 {
        v.0
    }
}

impl ActionIndex {
    pub fn new(l: u32) -> Self {
        assert!(l >= 1, "action indices start at 1");
        Self(l)
    }

    pub fn from_index(index: usize) -> Self {
        Self(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Uniformly spaced actuation values `lo, lo + step, …` up to `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct ActionGrid {
    lo: f64,
    hi: f64,
    step: f64,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridSpec {
    lo: f64,
    hi: f64,
    step: f64,
}

impl TryFrom<GridSpec> for ActionGrid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        ActionGrid::new(s.lo, s.hi, s.step)
    }
}

impl From<ActionGrid> for GridSpec {
    fn from(g: ActionGrid) -> Self {
        GridSpec { lo: g.lo, hi: g.hi, step: g.step }
    }
}

impl ActionGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(Error::invalid(format!("action range [{lo}, {hi}] is empty")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("action step must be positive, got {step}")));
        }
        let n = ((hi - lo) / step).round() as usize + 1;
        let values = (0..n).map(|l| (lo + l as f64 * step).clamp(lo, hi)).collect();
        Ok(Self { lo, hi, step, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, l: ActionIndex) -> f64 {
        self.values[l.index()]
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Index of a grid value equal to `a`, if any.
    pub fn index_of(&self, a: f64) -> Option<ActionIndex> {
        self.values.iter().position(|&v| v == a).map(ActionIndex::from_index)
    }

    /// Grid action closest to `a`; ties go to the smaller magnitude, then the lower index.
    pub fn nearest_index(&self, a: f64) -> ActionIndex {
        let best = (0..self.values.len())
            .min_by(|&x, &y| {
                let (vx, vy) = (self.values[x], self.values[y]);
                (vx - a)
                    .abs()
                    .total_cmp(&(vy - a).abs())
                    .then(vx.abs().total_cmp(&vy.abs()))
                    .then(x.cmp(&y))
            })
            .expect("grid is never empty");
        ActionIndex::from_index(best)
    }
}

/// Negative cost of a transition: `-(d_next + lambda * a^2)`.
pub fn instantaneous_reward(d_next: f64, a: f64, lambda: f64) -> f64 {
    -(d_next + lambda * a * a)
}

/// Polynomial step size `1 / n^exponent`.
///
/// For `exponent ∈ (0.5, 1]` the sequence sums to infinity while its squares
/// stay summable, and every term lies in `(0, 1]`.
pub fn q_learning_rate(visit_count: u64, exponent: f64) -> Result<f64> {
    if visit_count == 0 {
        return Err(Error::invalid("visit count starts at 1"));
    }
    if !(exponent > 0.5 && exponent <= 1.0) {
        return Err(Error::invalid(format!("learning-rate exponent {exponent} outside (0.5, 1]")));
    }
    Ok((visit_count as f64).powf(-exponent))
}

/// Which state's Q-row supplies the bootstrap maximum in the Q update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QTarget {
    /// `max Q(j, ·)` over the successor state (Watkins).
    #[default]
    SuccessorMax,
    /// `max Q(i, ·)` over the state being updated.
    CurrentMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionStat {
    pub count: u64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    gamma: f64,
    n_states: usize,
    n_actions: usize,
    transitions: BTreeMap<(StateId, ActionIndex, StateId), TransitionStat>,
    q: Vec<f64>,
    q_visits: Vec<u64>,
    observations: u64,
}

impl MdpModel {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("discount rate {gamma} outside (0, 1)")));
        }
        if n_actions == 0 {
            return Err(Error::invalid("model needs at least one action"));
        }
        Ok(Self {
            gamma,
            n_states,
            n_actions,
            transitions: BTreeMap::new(),
            q: vec![0.0; n_states * n_actions],
            q_visits: vec![0; n_states * n_actions],
            observations: 0,
        })
    }

    /// Reassembles a model from persisted parts.
    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transitions: impl IntoIterator<Item = ((StateId, ActionIndex, StateId), TransitionStat)>,
        q: Vec<f64>,
        q_visits: Vec<u64>,
    ) -> Result<Self> {
        let mut model = Self::new(n_states, n_actions, gamma)?;
        if q.len() != n_states * n_actions || q_visits.len() != q.len() {
            return Err(Error::invalid("Q matrix shape does not match the model"));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Q matrix has non-finite entries"));
        }
        for ((i, l, j), stat) in transitions {
            model.check(i, l, j)?;
            if stat.count == 0 || !stat.reward.is_finite() {
                return Err(Error::invalid(format!("invalid transition entry ({i}, {l}, {j})")));
            }
            model.observations += stat.count;
            model.transitions.insert((i, l, j), stat);
        }
        model.q = q;
        model.q_visits = q_visits;
        Ok(model)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Total number of `update_reward` calls absorbed.
    pub fn observations(&self) -> u64 {
        self.observations
    }

    /// Grows the state dimension to `n` (never shrinks). New Q rows start at zero.
    pub fn ensure_states(&mut self, n: usize) {
        if n > self.n_states {
            self.q.resize(n * self.n_actions, 0.0);
            self.q_visits.resize(n * self.n_actions, 0);
            self.n_states = n;
        }
    }

    fn check(&self, i: StateId, l: ActionIndex, j: StateId) -> Result<()> {
        if i.index() >= self.n_states || j.index() >= self.n_states {
            return Err(Error::invalid(format!(
                "state index out of range: ({i}, {j}) with {} states",
                self.n_states
            )));
        }
        if l.index() >= self.n_actions {
            return Err(Error::invalid(format!(
                "action index {l} out of range with {} actions",
                self.n_actions
            )));
        }
        Ok(())
    }

    fn slot(&self, i: StateId, l: ActionIndex) -> usize {
        i.index() * self.n_actions + l.index()
    }

    /// Folds reward `c` into the running mean of `R(i,l,j)` with step `1/N(i,l,j)`.
    pub fn update_reward(&mut self, i: StateId, l: ActionIndex, j: StateId, c: f64) -> Result<()> {
        self.check(i, l, j)?;
        if !c.is_finite() {
            return Err(Error::invalid(format!("reward {c} is not finite")));
        }
        let stat = self
            .transitions
            .entry((i, l, j))
            .or_insert(TransitionStat { count: 0, reward: 0.0 });
        stat.count += 1;
        let alpha = 1.0 / stat.count as f64;
        stat.reward = (1.0 - alpha) * stat.reward + alpha * c;
        self.observations += 1;
        Ok(())
    }

    /// One Q-learning step on `(i, l)` using the mean reward of `(i, l, j)`.
    pub fn update_q(
        &mut self,
        i: StateId,
        l: ActionIndex,
        j: StateId,
        alpha: f64,
        target: QTarget,
    ) -> Result<()> {
        self.check(i, l, j)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("Q learning rate {alpha} outside (0, 1]")));
        }
        let reward = self
            .transitions
            .get(&(i, l, j))
            .map(|s| s.reward)
            .ok_or_else(|| Error::invalid(format!("transition ({i}, {l}, {j}) has no reward yet")))?;
        let bootstrap = match target {
            QTarget::SuccessorMax => j,
            QTarget::CurrentMax => i,
        };
        let best = self.q_row(bootstrap).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slot = self.slot(i, l);
        let delta = reward + self.gamma * best - self.q[slot];
        self.q[slot] += alpha * delta;
        self.q_visits[slot] += 1;
        Ok(())
    }

    pub fn q(&self, i: StateId, l: ActionIndex) -> f64 {
        self.q[self.slot(i, l)]
    }

    pub fn q_row(&self, i: StateId) -> &[f64] {
        let start = i.index() * self.n_actions;
        &self.q[start..start + self.n_actions]
    }

    pub fn q_matrix(&self) -> &[f64] {
        &self.q
    }

    pub fn q_visits(&self, i: StateId, l: ActionIndex) -> u64 {
        self.q_visits[self.slot(i, l)]
    }

    pub fn q_visit_matrix(&self) -> &[u64] {
        &self.q_visits
    }

    pub fn transition(&self, i: StateId, l: ActionIndex, j: StateId) -> Option<TransitionStat> {
        self.transitions.get(&(i, l, j)).copied()
    }

    /// Observed `(i, l, j)` entries in lexicographic order.
    pub fn transitions(&self) -> impl Iterator<Item = ((StateId, ActionIndex, StateId), TransitionStat)> + '_ {
        self.transitions.iter().map(|(k, v)| (*k, *v))
    }

    pub fn nonzero_transitions(&self) -> usize {
        self.transitions.len()
    }

    /// Fraction of the `Nkey × Na × Nkey` tensor with at least one observation.
    pub fn density(&self) -> f64 {
        let cells = self.n_states * self.n_actions * self.n_states;
        if cells == 0 {
            0.0
        } else {
            self.transitions.len() as f64 / cells as f64
        }
    }

    pub fn transition_probabilities(&self) -> Probabilities {
        let (s, a) = (self.n_states, self.n_actions);
        let mut totals = vec![0u64; s * a];
        for ((i, l, _), stat) in &self.transitions {
            totals[self.slot(*i, *l)] += stat.count;
        }
        let mut p = vec![0.0; s * a * s];
        for ((i, l, j), stat) in &self.transitions {
            let row = self.slot(*i, *l);
            p[row * s + j.index()] = stat.count as f64 / totals[row] as f64;
        }
        Probabilities { n_states: s, n_actions: a, p, observed: totals.iter().map(|&t| t > 0).collect() }
    }

    /// Dense `R(i,l,j)`; unobserved entries are zero.
    pub fn reward_tensor(&self) -> RewardTensor {
        let (s, a) = (self.n_states, self.n_actions);
        let mut r = vec![0.0; s * a * s];
        for ((i, l, j), stat) in &self.transitions {
            r[self.slot(*i, *l) * s + j.index()] = stat.reward;
        }
        RewardTensor { n_states: s, n_actions: a, r }
    }
}

/// Row-stochastic `p(i,l,·)` for observed `(i,l)`; unobserved rows are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    n_states: usize,
    n_actions: usize,
    p: Vec<f64>,
    observed: Vec<bool>,
}

impl Probabilities {
    /// From a dense `S × A × S` tensor; all-zero rows count as unobserved.
    pub fn from_dense(n_states: usize, n_actions: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n_states * n_actions * n_states {
            return Err(Error::invalid("probability tensor has the wrong size"));
        }
        let mut observed = Vec::with_capacity(n_states * n_actions);
        for row in p.chunks(n_states.max(1)) {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::invalid("probabilities must lie in [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if sum == 0.0 {
                observed.push(false);
            } else if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("probability row sums to {sum}")));
            } else {
                observed.push(true);
            }
        }
        Ok(Self { n_states, n_actions, p, observed })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, i: StateId, l: ActionIndex, j: StateId) -> f64 {
        self.p[(i.index() * self.n_actions + l.index()) * self.n_states + j.index()]
    }

    pub fn is_observed(&self, i: StateId, l: ActionIndex) -> bool {
        self.observed[i.index() * self.n_actions + l.index()]
    }

    /// `p(i,l,·)` or `None` when the pair was never observed.
    pub fn row(&self, i: StateId, l: ActionIndex) -> Option<&[f64]> {
        let r = i.index() * self.n_actions + l.index();
        self.observed[r].then(|| &self.p[r * self.n_states..(r + 1) * self.n_states])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardTensor {
    n_states: usize,
    n_actions: usize,
    r: Vec<f64>,
}

impl RewardTensor {
    pub fn from_dense(n_states: usize, n_actions: usize, r: Vec<f64>) -> Result<Self> {
        if r.len() != n_states * n_actions * n_states {
            return Err(Error::invalid("reward tensor has the wrong size"));
        }
        Ok(Self { n_states, n_actions, r })
    }

    pub fn get(&self, i: StateId, l: ActionIndex, j: StateId) -> f64 {
        self.r[(i.index() * self.n_actions + l.index()) * self.n_states + j.index()]
    }

    fn row(&self, i: StateId, l: ActionIndex) -> &[f64] {
        let r = i.index() * self.n_actions + l.index();
        &self.r[r * self.n_states..(r + 1) * self.n_states]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<ActionIndex>,
}

impl Policy {
    pub fn new(actions: Vec<ActionIndex>) -> Self {
        Self { actions }
    }

    /// Same action in each of `n_states` states.
    pub fn constant(n_states: usize, l: ActionIndex) -> Self {
        Self { actions: vec![l; n_states] }
    }

    pub fn action(&self, i: StateId) -> ActionIndex {
        self.actions[i.index()]
    }

    pub fn actions(&self) -> &[ActionIndex] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

// Index of the first maximum, ignoring NaN.
fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (l, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = l;
        }
    }
    best
}

pub fn greedy_policy(model: &MdpModel) -> Policy {
    let actions = (0..model.n_states())
        .map(|i| ActionIndex::from_index(argmax_first(model.q_row(StateId::from_index(i)))))
        .collect();
    Policy { actions }
}

/// Exact values of `pi`: solves `V = R^π + γ P^π V`.
pub fn policy_values(p: &Probabilities, r: &RewardTensor, pi: &Policy, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("discount rate {gamma} outside (0, 1)")));
    }
    let s = p.n_states();
    if pi.len() != s {
        return Err(Error::invalid(format!("policy covers {} states, model has {s}", pi.len())));
    }
    let mut a = DMatrix::<f64>::identity(s, s);
    let mut b = DVector::<f64>::zeros(s);
    for i in 0..s {
        let state = StateId::from_index(i);
        let l = pi.action(state);
        let row = p.row(state, l).ok_or(Error::MissingData { state, action: l })?;
        let rewards = r.row(state, l);
        for j in 0..s {
            a[(i, j)] -= gamma * row[j];
            b[i] += row[j] * rewards[j];
        }
    }
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::invalid("policy evaluation system is singular"))?;
    Ok(v.iter().copied().collect())
}

/// `Q(i,l) = Σ_j p(i,l,j) (R(i,l,j) + γ V_j)`; unobserved pairs are `-inf`.
pub fn q_from_values(p: &Probabilities, r: &RewardTensor, gamma: f64, v: &[f64]) -> Vec<f64> {
    let (s, a) = (p.n_states(), p.n_actions());
    let mut q = vec![f64::NEG_INFINITY; s * a];
    for i in 0..s {
        for l in 0..a {
            let (state, act) = (StateId::from_index(i), ActionIndex::from_index(l));
            if let Some(row) = p.row(state, act) {
                let rewards = r.row(state, act);
                q[i * a + l] = (0..s).map(|j| row[j] * (rewards[j] + gamma * v[j])).sum();
            }
        }
    }
    q
}

/// Optimal values and greedy policy by fixed-point iteration of the Bellman
/// optimality operator, stopping once `‖ΔV‖∞ < tol`.
pub fn value_iteration(
    p: &Probabilities,
    r: &RewardTensor,
    gamma: f64,
    tol: f64,
) -> Result<(Vec<f64>, Policy)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("discount rate {gamma} outside (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (s, a) = (p.n_states(), p.n_actions());
    for i in 0..s {
        let state = StateId::from_index(i);
        if !(0..a).any(|l| p.is_observed(state, ActionIndex::from_index(l))) {
            return Err(Error::MissingData { state, action: ActionIndex::new(1) });
        }
    }
    let mut v = vec![0.0; s];
    for _ in 0..VALUE_ITERATION_MAX_ITERS {
        let q = q_from_values(p, r, gamma, &v);
        let next: Vec<f64> = q
            .chunks(a)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = next
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < tol {
            let q = q_from_values(p, r, gamma, &v);
            let actions = q.chunks(a).map(|row| ActionIndex::from_index(argmax_first(row))).collect();
            return Ok((v, Policy { actions }));
        }
    }
    Err(Error::ConvergenceFailure(VALUE_ITERATION_MAX_ITERS))
}

/// Greedy policy restricted to actions with observed transitions.
///
/// States without any observed action fall back to `fallback`.
pub fn observed_greedy_policy(model: &MdpModel, fallback: ActionIndex) -> Policy {
    let p = model.transition_probabilities();
    let actions = (0..model.n_states())
        .map(|i| {
            let state = StateId::from_index(i);
            let row = model.q_row(state);
            (0..model.n_actions())
                .filter(|&l| p.is_observed(state, ActionIndex::from_index(l)))
                .fold(None, |best: Option<usize>, l| match best {
                    Some(b) if row[b] >= row[l] => Some(b),
                    _ => Some(l),
                })
                .map_or(fallback, ActionIndex::from_index)
        })
        .collect();
    Policy { actions }
}

/// Values of `pi` on the states where `(i, π(i))` was observed.
///
/// Other states are treated as terminal with value zero and reported as `None`.
pub fn policy_values_partial(
    p: &Probabilities,
    r: &RewardTensor,
    pi: &Policy,
    gamma: f64,
) -> Result<Vec<Option<f64>>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("discount rate {gamma} outside (0, 1)")));
    }
    let s = p.n_states();
    if pi.len() != s {
        return Err(Error::invalid(format!("policy covers {} states, model has {s}", pi.len())));
    }
    let known: Vec<usize> = (0..s)
        .filter(|&i| p.is_observed(StateId::from_index(i), pi.actions[i]))
        .collect();
    let mut slot = vec![None; s];
    for (k, &i) in known.iter().enumerate() {
        slot[i] = Some(k);
    }
    let n = known.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (k, &i) in known.iter().enumerate() {
        let state = StateId::from_index(i);
        let l = pi.actions[i];
        let row = p.row(state, l).expect("observed");
        let rewards = r.row(state, l);
        for j in 0..s {
            b[k] += row[j] * rewards[j];
            if let Some(m) = slot[j] {
                a[(k, m)] -= gamma * row[j];
            }
        }
    }
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::invalid("policy evaluation system is singular"))?;
    Ok(slot.iter().map(|m| m.map(|k| v[k])).collect())
}
