//! Phase-space reconstruction from a single scalar sensor.
//!
//! A [`SensorSeries`] is turned into delay vectors ([`Observable`]s) whose
//! entry 0 is the newest sample. The same ordering is used for the rows of
//! the Hankel matrix whose leading left singular vectors serve as LSH test
//! vectors, and for the streaming [`DelayBuffer`] used in closed loop.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point count above which the correlation sum is estimated on a subsample.
pub const CORRELATION_MAX_POINTS: usize = 2000;
const CORRELATION_SUBSAMPLE_SEED: u64 = 0x6a09_e667_f3bc_c908;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    samples: Vec<f64>,
    dt: f64,
}

impl SensorSeries {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("sensor series is empty"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sampling interval must be positive, got {dt}")));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {pos} is not finite")));
        }
        Ok(Self { samples, dt })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A reconstructed phase-space point: `coords[k]` is the sample `k` strides old.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable(Vec<f64>);

impl Observable {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("observable must have at least one coordinate"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observable has non-finite coordinates"));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &Observable) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Embedding dimension.
    pub ne: usize,
    /// Calibration window length (Hankel columns).
    pub nsnap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_dim: Option<f64>,
}

impl EmbeddingConfig {
    pub fn new(ne: usize, nsnap: usize, correlation_dim: Option<f64>) -> Result<Self> {
        let cfg = Self { ne, nsnap, correlation_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ne == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if self.nsnap < self.ne {
            return Err(Error::invalid(format!(
                "calibration window {} is shorter than the embedding dimension {}",
                self.nsnap, self.ne
            )));
        }
        if let Some(d) = self.correlation_dim {
            if !(d > 0.0) {
                return Err(Error::invalid(format!("correlation dimension must be positive, got {d}")));
            }
            if (self.ne as f64) < 2.0 * d {
                return Err(Error::invalid(format!(
                    "embedding dimension {} is below twice the correlation dimension {d}",
                    self.ne
                )));
            }
        }
        Ok(())
    }
}

pub fn delay_embed(series: &SensorSeries, ne: usize) -> Result<Vec<Observable>> {
    if ne == 0 {
        return Err(Error::invalid("embedding dimension must be at least 1"));
    }
    let y = series.samples();
    if y.len() < ne {
        return Err(Error::InputTooShort { needed: ne, got: y.len() });
    }
    Ok(y.windows(ne)
        .map(|w| Observable(w.iter().rev().copied().collect()))
        .collect())
}

/// Fixed-capacity window over the most recent sensor samples.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    ne: usize,
    samples: VecDeque<f64>,
}

impl DelayBuffer {
    pub fn new(ne: usize) -> Self {
        Self { ne, samples: VecDeque::with_capacity(ne) }
    }

    pub fn push(&mut self, sample: f64) {
        if self.samples.len() == self.ne {
            self.samples.pop_back();
        }
        self.samples.push_front(sample);
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.ne
    }

    /// Newest-first delay vector, once `ne` samples have been seen.
    pub fn observable(&self) -> Option<Observable> {
        self.is_full().then(|| Observable(self.samples.iter().copied().collect()))
    }
}

/// Percentile band of pairwise distances used for the log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingWindow {
    pub lo_percentile: f64,
    pub hi_percentile: f64,
}

impl Default for ScalingWindow {
    fn default() -> Self {
        Self { lo_percentile: 0.5, hi_percentile: 5.0 }
    }
}

/// `n` radii log-spaced between `lo` and `hi` inclusive.
pub fn log_spaced_radii(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(Error::invalid(format!("bad radius range [{lo}, {hi}] with {n} points")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Radii covering three decades below the largest pairwise distance.
pub fn default_radii(points: &[Observable], n: usize) -> Result<Vec<f64>> {
    let d = sorted_pair_distances(&subsample(points));
    let max = d.last().copied().unwrap_or(0.0);
    if !(max > 0.0) {
        return Err(Error::DegenerateScaling("all points coincide".into()));
    }
    let min_pos = d.iter().copied().find(|&x| x > 0.0).unwrap_or(max);
    log_spaced_radii(min_pos.max(max * 1e-3), max, n)
}

fn subsample(points: &[Observable]) -> Vec<&Observable> {
    if points.len() <= CORRELATION_MAX_POINTS {
        return points.iter().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CORRELATION_SUBSAMPLE_SEED);
    let mut picked = index::sample(&mut rng, points.len(), CORRELATION_MAX_POINTS).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &points[i]).collect()
}

fn sorted_pair_distances(points: &[&Observable]) -> Vec<f64> {
    let m = points.len();
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            d.push(points[i].distance(points[j]));
        }
    }
    d.sort_unstable_by(f64::total_cmp);
    d
}

// Nearest-rank percentile on a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Grassberger–Procaccia estimate using the default [`ScalingWindow`].
pub fn correlation_dimension(points: &[Observable], radii: &[f64]) -> Result<f64> {
    correlation_dimension_with(points, radii, ScalingWindow::default())
}

pub fn correlation_dimension_with(
    points: &[Observable],
    radii: &[f64],
    window: ScalingWindow,
) -> Result<f64> {
    if points.len() < 200 {
        return Err(Error::invalid(format!("need at least 200 points, got {}", points.len())));
    }
    let ne = points[0].dim();
    if points.iter().any(|p| p.dim() != ne) {
        return Err(Error::invalid("points have mixed dimensions"));
    }
    if radii.len() < 8 {
        return Err(Error::invalid(format!("need at least 8 radii, got {}", radii.len())));
    }
    if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::invalid("radii must be positive and finite"));
    }
    let (rmin, rmax) = radii
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    if (rmax / rmin).log10() < 1.5 {
        return Err(Error::invalid("radii must span at least 1.5 decades"));
    }
    if !(0.0 < window.lo_percentile && window.lo_percentile < window.hi_percentile && window.hi_percentile <= 100.0)
    {
        return Err(Error::invalid("scaling window percentiles must satisfy 0 < lo < hi <= 100"));
    }

    let d = sorted_pair_distances(&subsample(points));
    let (lo, hi) = (percentile(&d, window.lo_percentile), percentile(&d, window.hi_percentile));
    if !(hi > 0.0) {
        return Err(Error::DegenerateScaling("pairwise distances vanish in the scaling window".into()));
    }

    let total = d.len() as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &r in radii.iter().filter(|&&r| r >= lo && r <= hi) {
        let inside = d.partition_point(|&x| x < r);
        if inside == 0 {
            return Err(Error::DegenerateScaling(format!("no pairs closer than r = {r}")));
        }
        xs.push(r.ln());
        ys.push((inside as f64 / total).ln());
    }
    if xs.len() < 2 {
        return Err(Error::FitImpossible(format!(
            "only {} radii fall in the scaling window [{lo:.4e}, {hi:.4e}]",
            xs.len()
        )));
    }
    let slope = least_squares_slope(&xs, &ys);
    if !(slope > 0.0) {
        return Err(Error::DegenerateScaling(format!("non-positive scaling slope {slope}")));
    }
    Ok(slope.min(ne as f64))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Smallest embedding dimension that is at least twice the correlation dimension.
pub fn embedding_dimension(correlation_dim: f64) -> Result<usize> {
    if !(correlation_dim > 0.0 && correlation_dim.is_finite()) {
        return Err(Error::invalid(format!(
            "correlation dimension must be positive, got {correlation_dim}"
        )));
    }
    Ok((2.0 * correlation_dim).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestVectors {
    /// Unit left singular vectors, by decreasing singular value.
    pub vectors: Vec<Vec<f64>>,
    /// The leading `nv` singular values (including numerically zero ones).
    pub singular_values: Vec<f64>,
    /// Set when fewer than the requested number of vectors had non-zero singular value.
    pub rank_deficient: bool,
}

/// Leading left singular vectors of the `ne × nsnap` Hankel matrix built on
/// the most recent `ne + nsnap - 1` samples.
///
/// Column `m` is the newest-first delay vector ending at sample `m`. The
/// vectors come from the eigen-decomposition of `H Hᵀ`, accumulated directly
/// from the series without materializing `H`.
pub fn hankel_test_vectors(
    series: &SensorSeries,
    ne: usize,
    nsnap: usize,
    nv: usize,
) -> Result<TestVectors> {
    if ne == 0 || nsnap == 0 || nv == 0 {
        return Err(Error::invalid("ne, nsnap and nv must all be positive"));
    }
    if nv > ne {
        return Err(Error::invalid(format!("cannot extract {nv} vectors in dimension {ne}")));
    }
    let needed = ne + nsnap - 1;
    let y = series.samples();
    if y.len() < needed {
        return Err(Error::InputTooShort { needed, got: y.len() });
    }
    let y = &y[y.len() - needed..];

    // H[i][m] = y[m + ne - 1 - i]
    let mut gram = DMatrix::<f64>::zeros(ne, ne);
    for i in 0..ne {
        for k in i..ne {
            let s: f64 = (0..nsnap).map(|m| y[m + ne - 1 - i] * y[m + ne - 1 - k]).sum();
            gram[(i, k)] = s;
            gram[(k, i)] = s;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..ne).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let singular_values: Vec<f64> = order
        .iter()
        .take(nv)
        .map(|&c| eig.eigenvalues[c].max(0.0).sqrt())
        .collect();
    let leading = singular_values[0];
    let mut vectors = Vec::with_capacity(nv);
    for (&c, &sv) in order.iter().zip(&singular_values) {
        if !(leading > 0.0) || sv <= RANK_TOLERANCE * leading {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        orient(&mut v);
        vectors.push(v);
    }
    let rank_deficient = vectors.len() < nv;
    Ok(TestVectors { vectors, singular_values, rank_deficient })
}

/// Flip `v` so its first non-negligible entry is positive.
pub fn orient(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-9 * scale) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}
