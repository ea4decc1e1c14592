//! Calibration, online learning, closed-loop rollouts and evaluation.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, LearningConfig, PlantConfig, VectorSource};
use crate::embedding::{
    correlation_dimension_with, default_radii, delay_embed, hankel_test_vectors, DelayBuffer,
    EmbeddingConfig, Observable, ScalingWindow, SensorSeries,
};
use crate::error::{Error, Result};
use crate::hashing::{calibrate_h0, composite_key, LshBank, RegistryMode, StateRegistry};
use crate::mdp::{
    instantaneous_reward, observed_greedy_policy, policy_values, policy_values_partial,
    q_learning_rate, ActionGrid, ActionIndex, MdpModel, Policy, StateId,
};
use crate::plants::{ExternalPlant, LorenzParams, LorenzPlant, Plant};

/// Discount factors below this are treated as zero when truncating costs.
pub const NEGLIGIBLE_DISCOUNT: f64 = 1e-12;

const CORRELATION_RADII: usize = 20;

/// Where plant sessions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantSource {
    Lorenz { params: LorenzParams, sensor_noise: f64 },
    Exec { command: String, dt: f64, timeout: Duration },
    Tcp { address: String, dt: f64, timeout: Duration },
}

impl PlantSource {
    pub fn from_config(cfg: &PlantConfig) -> Result<Self> {
        match cfg {
            PlantConfig::Lorenz { sensor_noise, .. } => Ok(PlantSource::Lorenz {
                params: cfg.lorenz_params().expect("lorenz"),
                sensor_noise: *sensor_noise,
            }),
            PlantConfig::External { dt, command, address, .. } => match (command, address) {
                (Some(c), None) => Ok(PlantSource::Exec { command: c.clone(), dt: *dt, timeout: cfg.timeout() }),
                (None, Some(a)) => Ok(PlantSource::Tcp { address: a.clone(), dt: *dt, timeout: cfg.timeout() }),
                _ => Err(Error::Config("external plant needs exactly one of `command` or `address`".into())),
            },
        }
    }

    /// Opens a fresh session. `seed` selects the initial condition of built-in plants.
    pub fn open(&self, seed: u64) -> Result<Box<dyn Plant + Send>> {
        Ok(match self {
            PlantSource::Lorenz { params, sensor_noise } => {
                Box::new(LorenzPlant::new(*params, seed)?.with_sensor_noise(*sensor_noise, seed)?)
            }
            PlantSource::Exec { command, dt, timeout } => Box::new(ExternalPlant::spawn(command, *dt, *timeout)?),
            PlantSource::Tcp { address, dt, timeout } => {
                Box::new(ExternalPlant::tcp(address.as_str(), *dt, *timeout)?)
            }
        })
    }

    /// Whether independent sessions may run concurrently.
    pub fn supports_parallel(&self) -> bool {
        !matches!(self, PlantSource::Tcp { .. })
    }

    pub fn is_lorenz(&self) -> bool {
        matches!(self, PlantSource::Lorenz { .. })
    }
}

/// Frozen artifacts needed to control a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub embedding: EmbeddingConfig,
    pub bank: LshBank,
    pub registry: StateRegistry,
    pub grid: ActionGrid,
    pub model: MdpModel,
    pub lambda: f64,
}

impl Artifacts {
    /// Frozen-mode state of an observable, falling back to the nearest key.
    pub fn state(&self, y: &Observable) -> Result<StateId> {
        let key = composite_key(&self.bank, y)?;
        self.registry
            .resolve(&key)
            .ok_or_else(|| Error::invalid("state registry is empty"))
    }

    /// Grid action closest to zero.
    pub fn null_action(&self) -> ActionIndex {
        self.grid.nearest_index(0.0)
    }

    /// Policy applied by [`PolicyKind::Learned`].
    pub fn deployed_policy(&self) -> Policy {
        observed_greedy_policy(&self.model, self.null_action())
    }
}

/// Output of the unactuated calibration phase.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub bank: LshBank,
    pub registry: StateRegistry,
    pub samples: Vec<f64>,
    pub correlation_dim: Option<f64>,
    pub rank_deficient: bool,
}

impl Calibration {
    /// Delay buffer holding the last `ne` calibration samples.
    pub fn buffer(&self) -> DelayBuffer {
        let ne = self.bank.ne();
        let mut buffer = DelayBuffer::new(ne);
        for &y in &self.samples[self.samples.len() - ne..] {
            buffer.push(y);
        }
        buffer
    }
}

/// Runs `nsnap + ne − 1` zero-action ticks, builds the hash bank and registers the visited keys.
pub fn calibrate<P: Plant + ?Sized>(plant: &mut P, cfg: &ExperimentConfig, seed: u64) -> Result<Calibration> {
    let (ne, nsnap) = (cfg.embedding.ne, cfg.embedding.nsnap);
    let q = cfg.q_lengths()?;
    let mut samples = Vec::with_capacity(nsnap + ne - 1);
    for _ in 0..nsnap + ne - 1 {
        samples.push(plant.step(0.0)?.sensor);
    }
    let series = SensorSeries::new(samples, plant.dt())?;
    let (bank, rank_deficient) = match cfg.hashing.vectors {
        VectorSource::Hankel => {
            let tv = hankel_test_vectors(&series, ne, nsnap, cfg.hashing.nv)?;
            if tv.rank_deficient {
                warn!(
                    "calibration window has rank below {}; using {} test vectors",
                    cfg.hashing.nv,
                    tv.vectors.len()
                );
            }
            let q = &q[..tv.vectors.len()];
            (LshBank::from_vectors(tv.vectors, q)?, tv.rank_deficient)
        }
        VectorSource::Gaussian => (LshBank::gaussian(ne, &q, seed)?, false),
    };
    let observables = delay_embed(&series, ne)?;
    let bank = calibrate_h0(&bank, &observables, cfg.hashing.h0_margin)?;
    let mut registry = StateRegistry::new();
    for y in &observables {
        registry.state_of(&composite_key(&bank, y)?, RegistryMode::Grow);
    }
    let correlation_dim = estimate_correlation_dim(&observables, cfg.evaluation.correlation_window);
    info!("calibrated: {} states from {} observables", registry.len(), observables.len());
    Ok(Calibration { bank, registry, samples: series.samples().to_vec(), correlation_dim, rank_deficient })
}

fn estimate_correlation_dim(points: &[Observable], window: ScalingWindow) -> Option<f64> {
    if points.len() < 200 {
        return None;
    }
    let estimate = default_radii(points, CORRELATION_RADII)
        .and_then(|radii| correlation_dimension_with(points, &radii, window));
    match estimate {
        Ok(d) => Some(d),
        Err(e) => {
            warn!("correlation dimension unavailable: {e}");
            None
        }
    }
}

/// Runs `ticks` zero-action ticks and returns the filled delay buffer.
pub fn prime<P: Plant + ?Sized>(plant: &mut P, ticks: usize, ne: usize) -> Result<DelayBuffer> {
    let mut buffer = DelayBuffer::new(ne);
    for _ in 0..ticks {
        buffer.push(plant.step(0.0)?.sensor);
    }
    if buffer.is_full() {
        Ok(buffer)
    } else {
        Err(Error::InputTooShort { needed: ne, got: ticks })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnStats {
    pub reward_ticks: u64,
    pub q_ticks: u64,
    pub reward_updates: u64,
    pub q_updates: u64,
    pub new_states: u64,
}

#[derive(Debug)]
pub struct Learned {
    pub registry: StateRegistry,
    pub model: MdpModel,
    pub stats: LearnStats,
    /// Plant failure that cut learning short; the other fields hold what was learned until then.
    pub failure: Option<Error>,
}

/// Exploration probability at Phase-2 step `k` of `n`: linear from 1 to `eps_min`.
pub fn exploration_rate(k: u64, n: u64, eps_min: f64) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    1.0 + (eps_min - 1.0) * k as f64 / (n - 1) as f64
}

/// Phase 1 (uniform actions, reward means) then Phase 2 (ε-greedy, rewards and Q).
///
/// Starts from the plant's current position; `buffer` must hold the latest `ne` samples.
pub fn learn<P: Plant + ?Sized>(
    plant: &mut P,
    bank: &LshBank,
    mut registry: StateRegistry,
    grid: &ActionGrid,
    buffer: DelayBuffer,
    cfg: &LearningConfig,
    seed: u64,
) -> Result<Learned> {
    let mut model = MdpModel::new(registry.len(), grid.len(), cfg.gamma)?;
    let mut stats = LearnStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = buffer;
    let start_states = registry.len();
    let y = buffer.observable().ok_or(Error::InputTooShort { needed: bank.ne(), got: 0 })?;
    let mut i = registry.state_of(&composite_key(bank, &y)?, RegistryMode::Grow).expect("grow");
    model.ensure_states(registry.len());

    let total = cfg.reward_ticks + cfg.q_ticks;
    let mut failure = None;
    for k in 0..total {
        let phase2 = k >= cfg.reward_ticks;
        let l = if phase2 {
            let eps = exploration_rate(k - cfg.reward_ticks, cfg.q_ticks, cfg.epsilon_min);
            if rng.random::<f64>() < eps {
                ActionIndex::from_index(rng.random_range(0..grid.len()))
            } else {
                greedy_action(model.q_row(i))
            }
        } else {
            ActionIndex::from_index(rng.random_range(0..grid.len()))
        };
        let a = grid.value(l);
        let tick = match plant.step(a) {
            Ok(t) => t,
            Err(e) if e.is_plant_error() => {
                warn!("learning aborted after {k} ticks: {e}");
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        buffer.push(tick.sensor);
        let y = buffer.observable().expect("buffer full");
        let j = registry.state_of(&composite_key(bank, &y)?, RegistryMode::Grow).expect("grow");
        model.ensure_states(registry.len());
        let c = instantaneous_reward(tick.performance, a, cfg.lambda);
        model.update_reward(i, l, j, c)?;
        stats.reward_updates += 1;
        if phase2 {
            let alpha = q_learning_rate(model.q_visits(i, l) + 1, cfg.lr_exponent)?;
            model.update_q(i, l, j, alpha, cfg.q_target)?;
            stats.q_updates += 1;
            stats.q_ticks += 1;
        } else {
            stats.reward_ticks += 1;
        }
        i = j;
    }
    stats.new_states = (registry.len() - start_states) as u64;
    debug!(
        "learning: {} states, {} observed triples, density {:.4}",
        registry.len(),
        model.nonzero_transitions(),
        model.density()
    );
    Ok(Learned { registry, model, stats, failure })
}

fn greedy_action(row: &[f64]) -> ActionIndex {
    let best = row
        .iter()
        .enumerate()
        .fold(0, |b, (l, &v)| if v > row[b] { l } else { b });
    ActionIndex::from_index(best)
}

/// Calibration plus learning on one plant session.
pub fn run_pipeline<P: Plant + ?Sized>(
    plant: &mut P,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Artifacts, Calibration, Learned)> {
    let cal = calibrate(plant, cfg, seed)?;
    let mut learned = learn(
        plant,
        &cal.bank,
        cal.registry.clone(),
        &cfg.actions,
        cal.buffer(),
        &cfg.learning,
        seed,
    )?;
    if let Some(e) = learned.failure.take() {
        return Err(e);
    }
    let artifacts = Artifacts {
        embedding: EmbeddingConfig { correlation_dim: None, ..cfg.embedding },
        bank: cal.bank.clone(),
        registry: learned.registry.clone(),
        grid: cfg.actions.clone(),
        model: learned.model.clone(),
        lambda: cfg.learning.lambda,
    };
    Ok((artifacts, cal, learned))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Learned,
    Null,
    Constant(f64),
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(PolicyKind::Learned),
            "null" => Ok(PolicyKind::Null),
            _ => s
                .strip_prefix("constant:")
                .and_then(|a| a.parse::<f64>().ok())
                .filter(|a| a.is_finite())
                .map(PolicyKind::Constant)
                .ok_or_else(|| Error::invalid(format!("unknown policy {s:?}; use learned, null or constant:<a>"))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Learned => f.write_str("learned"),
            PolicyKind::Null => f.write_str("null"),
            PolicyKind::Constant(a) => write!(f, "constant:{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub ticks: usize,
    /// Rows with `t` before this apply zero.
    pub engage_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRow {
    /// Plant tick of the observation.
    pub tick: u64,
    pub t: f64,
    pub state: StateId,
    /// Grid index of the applied action, when it lies on the grid.
    pub action_index: Option<ActionIndex>,
    pub action: f64,
    pub sensor: f64,
    pub performance: f64,
    /// Reward of the transition to the next row.
    pub reward: f64,
    pub x: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub rows: Vec<EpisodeRow>,
}

pub const EPISODE_HEADER: [&str; 8] = ["tick", "t", "state", "action_index", "action", "sensor", "performance", "reward"];

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn has_state(&self) -> bool {
        self.rows.first().is_some_and(|r| r.x.is_some())
    }

    pub fn write_csv<W: Write>(&self, out: W, with_state: bool) -> Result<()> {
        let with_state = with_state && (self.rows.is_empty() || self.has_state());
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header: Vec<&str> = EPISODE_HEADER.to_vec();
        if with_state {
            header.extend(["x1", "x2", "x3"]);
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.tick.to_string(),
                r.t.to_string(),
                r.state.to_string(),
                r.action_index.map(|l| l.to_string()).unwrap_or_default(),
                r.action.to_string(),
                r.sensor.to_string(),
                r.performance.to_string(),
                r.reward.to_string(),
            ];
            if with_state {
                let x = r.x.unwrap_or([f64::NAN; 3]);
                rec.extend(x.iter().map(f64::to_string));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, with_state: bool) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file, with_state)
    }

    pub fn to_csv_string(&self, with_state: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, with_state).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }

    /// First row index with `t ≥ time`.
    pub fn index_at(&self, time: f64) -> usize {
        self.rows.partition_point(|r| r.t < time)
    }
}

/// Closed loop: `ne` zero-action warm-up ticks (unlogged), then `ticks` logged rows.
pub fn rollout<P: Plant + ?Sized>(
    plant: &mut P,
    artifacts: &Artifacts,
    kind: PolicyKind,
    opts: RolloutOptions,
) -> Result<EpisodeLog> {
    let ne = artifacts.bank.ne();
    let mut buffer = DelayBuffer::new(ne);
    let mut last = None;
    for _ in 0..ne {
        let tick = plant.step(0.0)?;
        buffer.push(tick.sensor);
        last = Some(tick);
    }
    let mut obs = last.expect("ne >= 1");
    let policy = matches!(kind, PolicyKind::Learned).then(|| artifacts.deployed_policy());
    let mut rows = Vec::with_capacity(opts.ticks);
    for _ in 0..opts.ticks {
        let y = buffer.observable().expect("buffer full");
        let state = artifacts.state(&y)?;
        let engaged = obs.t >= opts.engage_time;
        let (action_index, action) = match kind {
            PolicyKind::Learned if engaged => {
                let l = policy.as_ref().expect("policy").action(state);
                (Some(l), artifacts.grid.value(l))
            }
            PolicyKind::Constant(a) if engaged => (artifacts.grid.index_of(a), a),
            _ => (artifacts.grid.index_of(0.0), 0.0),
        };
        let x = plant.lorenz_state().map(|s| s.to_array());
        let tick_no = plant.ticks();
        let next = plant.step(action)?;
        rows.push(EpisodeRow {
            tick: tick_no,
            t: obs.t,
            state,
            action_index,
            action,
            sensor: obs.sensor,
            performance: obs.performance,
            reward: instantaneous_reward(next.performance, action, artifacts.lambda),
            x,
        });
        buffer.push(next.sensor);
        obs = next;
    }
    Ok(EpisodeLog { rows })
}

/// Smallest `k` with `γ^k < 1e−12`.
pub fn cost_horizon(gamma: f64) -> usize {
    let mut k = 0;
    let mut g = 1.0;
    while g >= NEGLIGIBLE_DISCOUNT {
        g *= gamma;
        k += 1;
    }
    k
}

/// `Σ_k γ^k (d(t_{start+k+1}) + λ a(t_{start+k})²)`, truncated at [`cost_horizon`].
pub fn discounted_cost(log: &EpisodeLog, gamma: f64, lambda: f64, start: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount rate {gamma} outside [0, 1)")));
    }
    let k = cost_horizon(gamma);
    if start + k >= log.len() {
        return Err(Error::invalid(format!(
            "log of {} rows is too short for a {k}-tick horizon from row {start}",
            log.len()
        )));
    }
    let rows = &log.rows;
    let mut g = 1.0;
    let mut total = 0.0;
    for n in 0..k {
        let a = rows[start + n].action;
        total += g * (rows[start + n + 1].performance + lambda * a * a);
        g *= gamma;
    }
    Ok(total)
}

/// Time average of [`discounted_cost`] over every admissible start with `t ≥ from_time`.
pub fn mean_cost(log: &EpisodeLog, gamma: f64, lambda: f64, from_time: f64) -> Result<f64> {
    let first = log.index_at(from_time);
    let k = cost_horizon(gamma);
    let end = log.len().saturating_sub(k);
    if first >= end {
        return Err(Error::invalid(format!(
            "log of {} rows leaves no cost window after t = {from_time}",
            log.len()
        )));
    }
    let mut sum = 0.0;
    for s in first..end {
        sum += discounted_cost(log, gamma, lambda, s)?;
    }
    Ok(sum / (end - first) as f64)
}

/// `(J_null − J) / (J_null − J_oracle)`.
pub fn performance_indicator(j: f64, j_null: f64, j_oracle: f64) -> Result<f64> {
    if j_null == j_oracle {
        return Err(Error::UndefinedIndicator);
    }
    Ok((j_null - j) / (j_null - j_oracle))
}

/// Mean exact value of `policy` over registered states.
pub fn average_value(model: &MdpModel, policy: &Policy) -> Result<f64> {
    let v = policy_values(&model.transition_probabilities(), &model.reward_tensor(), policy, model.gamma())?;
    if v.is_empty() {
        return Err(Error::invalid("model has no states"));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Like [`average_value`], averaging only over states where the policy's action was observed.
pub fn average_value_observed(model: &MdpModel, policy: &Policy) -> Result<f64> {
    let v = policy_values_partial(&model.transition_probabilities(), &model.reward_tensor(), policy, model.gamma())?;
    let known: Vec<f64> = v.into_iter().flatten().collect();
    if known.is_empty() {
        let state = StateId::new(1);
        return Err(Error::MissingData { state, action: policy.action(state) });
    }
    Ok(known.iter().sum::<f64>() / known.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub action: f64,
    pub mean_cost: f64,
    /// Candidate actions in ascending order with their per-seed costs.
    pub sweep: Vec<(f64, Vec<f64>)>,
}

impl OracleResult {
    pub fn costs_of(&self, a: f64) -> Option<&[f64]> {
        self.sweep.iter().find(|(b, _)| *b == a).map(|(_, c)| c.as_slice())
    }
}

/// Ascending candidates: the grid values plus zero.
pub fn oracle_candidates(grid: &ActionGrid) -> Vec<f64> {
    let mut c = grid.values().to_vec();
    if grid.index_of(0.0).is_none() {
        c.push(0.0);
    }
    c.sort_by(f64::total_cmp);
    c
}

/// Picks the candidate with the lowest mean; ties go to smaller `|a|`, then the lower candidate.
pub fn select_oracle(sweep: &[(f64, Vec<f64>)]) -> Result<(f64, f64)> {
    sweep
        .iter()
        .map(|(a, costs)| (*a, costs.iter().sum::<f64>() / costs.len() as f64))
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.abs().total_cmp(&y.0.abs())))
        .ok_or_else(|| Error::invalid("empty oracle sweep"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostOptions {
    pub rollout: RolloutOptions,
    pub gamma: f64,
    pub cost_start_time: f64,
}

fn rollout_cost(source: &PlantSource, artifacts: &Artifacts, kind: PolicyKind, seed: u64, opts: CostOptions) -> Result<(f64, EpisodeLog)> {
    let mut plant = source.open(seed)?;
    let log = rollout(&mut plant, artifacts, kind, opts.rollout)?;
    let j = mean_cost(&log, opts.gamma, artifacts.lambda, opts.cost_start_time)?;
    Ok((j, log))
}

/// Best constant action over [`oracle_candidates`], averaged across `seeds`.
pub fn oracle_policy(source: &PlantSource, artifacts: &Artifacts, seeds: &[u64], opts: CostOptions) -> Result<OracleResult> {
    let candidates = oracle_candidates(&artifacts.grid);
    let jobs: Vec<(f64, u64)> = candidates.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let run = |&(a, s): &(f64, u64)| rollout_cost(source, artifacts, PolicyKind::Constant(a), s, opts).map(|(j, _)| j);
    let costs: Vec<f64> = if source.supports_parallel() {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    let sweep: Vec<(f64, Vec<f64>)> = candidates
        .iter()
        .zip(costs.chunks(seeds.len()))
        .map(|(&a, c)| (a, c.to_vec()))
        .collect();
    let (action, mean_cost) = select_oracle(&sweep)?;
    Ok(OracleResult { action, mean_cost, sweep })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub seed: u64,
    #[serde(rename = "J")]
    pub j: f64,
    pub eta: Option<f64>,
    #[serde(rename = "mean_V")]
    pub mean_v: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub oracle: OracleResult,
    pub rows: Vec<SummaryRow>,
    /// `(policy, seed, log)` for every rollout in the summary.
    pub logs: Vec<(String, u64, EpisodeLog)>,
}

impl Evaluation {
    pub fn rows_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.rows.iter().filter(move |r| r.policy == policy)
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["policy", "seed", "J", "eta", "mean_V"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.policy.clone(), r.seed.to_string(), r.j.to_string(), opt(r.eta), opt(r.mean_v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// NULL, ORACLE and learned rollouts on every seed, with `η` and `⟨V⟩` per policy.
pub fn evaluate(source: &PlantSource, artifacts: &Artifacts, seeds: &[u64], opts: CostOptions) -> Result<Evaluation> {
    let oracle = oracle_policy(source, artifacts, seeds, opts)?;
    info!("oracle constant action {} with mean cost {}", oracle.action, oracle.mean_cost);
    let oracle_costs = oracle.costs_of(oracle.action).expect("selected from sweep").to_vec();

    let run = |&s: &u64| -> Result<((f64, EpisodeLog), (f64, EpisodeLog), EpisodeLog)> {
        let null = rollout_cost(source, artifacts, PolicyKind::Null, s, opts)?;
        let learned = rollout_cost(source, artifacts, PolicyKind::Learned, s, opts)?;
        let (_, best) = rollout_cost(source, artifacts, PolicyKind::Constant(oracle.action), s, opts)?;
        Ok((null, learned, best))
    };
    let per_seed: Vec<_> = if source.supports_parallel() {
        seeds.par_iter().map(run).collect::<Result<_>>()?
    } else {
        seeds.iter().map(run).collect::<Result<_>>()?
    };

    let value = |policy: &Policy| match average_value_observed(&artifacts.model, policy) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("average value unavailable: {e}");
            None
        }
    };
    let grid = &artifacts.grid;
    let v_null = value(&Policy::constant(artifacts.model.n_states(), artifacts.null_action()));
    let v_oracle = value(&Policy::constant(artifacts.model.n_states(), grid.nearest_index(oracle.action)));
    let v_learned = value(&artifacts.deployed_policy());

    let eta = |j: f64, jn: f64, jo: f64| match performance_indicator(j, jn, jo) {
        Ok(e) => Some(e),
        Err(e) => {
            warn!("{e}");
            None
        }
    };
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for ((&seed, ((jn, null_log), (jl, learned_log), best_log)), &jo) in
        seeds.iter().zip(per_seed).zip(&oracle_costs)
    {
        rows.push(SummaryRow { policy: "null".into(), seed, j: jn, eta: eta(jn, jn, jo), mean_v: v_null });
        rows.push(SummaryRow { policy: "oracle".into(), seed, j: jo, eta: eta(jo, jn, jo), mean_v: v_oracle });
        rows.push(SummaryRow { policy: "learned".into(), seed, j: jl, eta: eta(jl, jn, jo), mean_v: v_learned });
        logs.push(("null".to_string(), seed, null_log));
        logs.push(("oracle".to_string(), seed, best_log));
        logs.push(("learned".to_string(), seed, learned_log));
    }
    Ok(Evaluation { oracle, rows, logs })
}
