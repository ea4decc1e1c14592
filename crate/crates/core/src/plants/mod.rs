//! Controlled systems.
//!
//! Every plant advances one controller tick per [`Plant::step`] call and
//! reports a [`PlantTick`]. The built-in [`LorenzPlant`] integrates the
//! forced Lorenz 63 equations; [`ExternalPlant`] drives a foreign simulator
//! over the line protocol implemented in [`external`].

pub mod external;
pub mod lorenz;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use external::{serve, ExternalPlant, DEFAULT_TIMEOUT, PROTOCOL_VERSION};
pub use lorenz::{
    lorenz_derivative, lorenz_fixed_point, lorenz_integrate, lorenz_step, lorenz_tick, LorenzParams,
    LorenzPlant, LorenzState,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantTick {
    /// Observation time.
    pub t: f64,
    /// Scalar sensor sample.
    pub sensor: f64,
    /// Performance measure (distance-like, lower is better).
    pub performance: f64,
}

pub trait Plant {
    /// Applies `action` for one tick (zero-order hold) and observes the result.
    fn step(&mut self, action: f64) -> Result<PlantTick>;

    /// Controller sampling interval.
    fn dt(&self) -> f64;

    /// Number of completed ticks.
    fn ticks(&self) -> u64;

    /// Full state, when the plant exposes one.
    fn lorenz_state(&self) -> Option<LorenzState> {
        None
    }
}

impl<P: Plant + ?Sized> Plant for Box<P> {
    fn step(&mut self, action: f64) -> Result<PlantTick> {
        (**self).step(action)
    }

    fn dt(&self) -> f64 {
        (**self).dt()
    }

    fn ticks(&self) -> u64 {
        (**self).ticks()
    }

    fn lorenz_state(&self) -> Option<LorenzState> {
        (**self).lorenz_state()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub action: f64,
    pub sensor: f64,
    pub performance: f64,
}

/// Raw per-tick plant exchange, including ticks the controller does not log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlantTrace {
    pub rows: Vec<TraceRow>,
}

impl PlantTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// Wraps a plant and records every exchange.
pub struct RecordingPlant<P> {
    inner: P,
    trace: PlantTrace,
}

impl<P: Plant> RecordingPlant<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, trace: PlantTrace::default() }
    }

    pub fn trace(&self) -> &PlantTrace {
        &self.trace
    }

    pub fn into_parts(self) -> (P, PlantTrace) {
        (self.inner, self.trace)
    }
}

impl<P: Plant> Plant for RecordingPlant<P> {
    fn step(&mut self, action: f64) -> Result<PlantTick> {
        let tick = self.inner.step(action)?;
        self.trace.rows.push(TraceRow {
            tick: self.inner.ticks(),
            action,
            sensor: tick.sensor,
            performance: tick.performance,
        });
        Ok(tick)
    }

    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn ticks(&self) -> u64 {
        self.inner.ticks()
    }

    fn lorenz_state(&self) -> Option<LorenzState> {
        self.inner.lorenz_state()
    }
}
