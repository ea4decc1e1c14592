//! Forced Lorenz 63 system.
//!
//! ```text
//! dX1/dt = σ (X2 − X1) + f
//! dX2/dt = X1 (r − X3) − X2
//! dX3/dt = X1 X2 − b X3
//! ```
//!
//! The forcing `f` is held constant across each controller tick and the
//! tick is split into `substeps` classical RK4 steps. The sensor reads `X2`;
//! performance is the distance to the left fixed point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Plant, PlantTick};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub r: f64,
    pub b: f64,
    pub dt_sample: f64,
    pub substeps: u32,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { sigma: 10.0, r: 20.0, b: 8.0 / 3.0, dt_sample: 0.025, substeps: 10 }
    }
}

impl LorenzParams {
    pub fn validate(&self) -> Result<()> {
        if ![self.sigma, self.r, self.b].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("Lorenz parameters must be finite"));
        }
        if !(self.dt_sample > 0.0 && self.dt_sample.is_finite()) {
            return Err(Error::invalid(format!("sampling interval {} must be positive", self.dt_sample)));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("need at least one integrator substep"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl LorenzState {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn from_array([x1, x2, x3]: [f64; 3]) -> Self {
        Self { x1, x2, x3 }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    pub fn distance(&self, other: &LorenzState) -> f64 {
        let (a, b) = (self.to_array(), other.to_array());
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

/// Left equilibrium `(−√(b(r−1)), −√(b(r−1)), r−1)`.
pub fn lorenz_fixed_point(params: &LorenzParams) -> Result<LorenzState> {
    if !(params.r > 1.0 && params.b > 0.0) {
        return Err(Error::NoLeftFixedPoint(params.r));
    }
    let c = (params.b * (params.r - 1.0)).sqrt();
    Ok(LorenzState::new(-c, -c, params.r - 1.0))
}

pub fn lorenz_derivative(s: &LorenzState, params: &LorenzParams, forcing: f64) -> [f64; 3] {
    [
        params.sigma * (s.x2 - s.x1) + forcing,
        s.x1 * (params.r - s.x3) - s.x2,
        s.x1 * s.x2 - params.b * s.x3,
    ]
}

fn axpy(s: &LorenzState, h: f64, k: &[f64; 3]) -> LorenzState {
    LorenzState::new(s.x1 + h * k[0], s.x2 + h * k[1], s.x3 + h * k[2])
}

/// `n` RK4 steps of size `h` with constant forcing. No divergence check.
pub fn lorenz_integrate(state: LorenzState, params: &LorenzParams, forcing: f64, h: f64, n: u64) -> LorenzState {
    let mut s = state;
    for _ in 0..n {
        let k1 = lorenz_derivative(&s, params, forcing);
        let k2 = lorenz_derivative(&axpy(&s, h / 2.0, &k1), params, forcing);
        let k3 = lorenz_derivative(&axpy(&s, h / 2.0, &k2), params, forcing);
        let k4 = lorenz_derivative(&axpy(&s, h, &k3), params, forcing);
        let inc = |i: usize| h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        s = LorenzState::new(s.x1 + inc(0), s.x2 + inc(1), s.x3 + inc(2));
    }
    s
}

/// Advances one controller tick. Divergence is reported with tick 0; plants fill in the real tick.
pub fn lorenz_step(state: LorenzState, params: &LorenzParams, action: f64) -> Result<LorenzState> {
    if !state.is_finite() || !action.is_finite() {
        return Err(Error::invalid("Lorenz state and action must be finite"));
    }
    let h = params.dt_sample / params.substeps as f64;
    let next = lorenz_integrate(state, params, action, h, params.substeps as u64);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Divergence { tick: 0 })
    }
}

/// One tick plus observation: sensor `X2`, performance `‖X − X*‖₂`.
pub fn lorenz_tick(
    state: LorenzState,
    params: &LorenzParams,
    action: f64,
    t: f64,
) -> Result<(LorenzState, PlantTick)> {
    let fixed = lorenz_fixed_point(params)?;
    let next = lorenz_step(state, params, action)?;
    let tick = PlantTick { t, sensor: next.x2, performance: next.distance(&fixed) };
    Ok((next, tick))
}

/// Built-in plant with seeded initial condition and optional Gaussian sensor noise.
#[derive(Debug, Clone)]
pub struct LorenzPlant {
    params: LorenzParams,
    state: LorenzState,
    fixed: LorenzState,
    tick: u64,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl LorenzPlant {
    /// Starts at `(1, 1, 1)` plus a uniform perturbation in `[−0.5, 0.5]³` drawn from `seed`.
    pub fn new(params: LorenzParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = || 1.0 + rng.random_range(-0.5..=0.5);
        let state = LorenzState::new(jitter(), jitter(), jitter());
        Self::with_state(params, state)
    }

    pub fn with_state(params: LorenzParams, state: LorenzState) -> Result<Self> {
        params.validate()?;
        let fixed = lorenz_fixed_point(&params)?;
        if !state.is_finite() {
            return Err(Error::invalid("initial state must be finite"));
        }
        Ok(Self { params, state, fixed, tick: 0, noise: None })
    }

    /// Adds `N(0, std²)` to every sensor sample, drawn from its own seeded stream.
    pub fn with_sensor_noise(mut self, std: f64, seed: u64) -> Result<Self> {
        if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            self.noise = Some((normal, ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_5e45)));
        } else if std < 0.0 || std.is_nan() {
            return Err(Error::invalid(format!("sensor noise std {std} must be non-negative")));
        }
        Ok(self)
    }

    pub fn params(&self) -> &LorenzParams {
        &self.params
    }

    pub fn state(&self) -> LorenzState {
        self.state
    }
}

impl Plant for LorenzPlant {
    fn step(&mut self, action: f64) -> Result<PlantTick> {
        let next_tick = self.tick + 1;
        let next = lorenz_step(self.state, &self.params, action).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { tick: next_tick },
            other => other,
        })?;
        self.state = next;
        self.tick = next_tick;
        let mut sensor = next.x2;
        if let Some((normal, rng)) = self.noise.as_mut() {
            sensor += normal.sample(rng);
        }
        Ok(PlantTick {
            t: self.tick as f64 * self.params.dt_sample,
            sensor,
            performance: next.distance(&self.fixed),
        })
    }

    fn dt(&self) -> f64 {
        self.params.dt_sample
    }

    fn ticks(&self) -> u64 {
        self.tick
    }

    fn lorenz_state(&self) -> Option<LorenzState> {
        Some(self.state)
    }
}
