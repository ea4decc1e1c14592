//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lshctl::config::ExperimentConfig;
use lshctl::embedding::Observable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&fixture_path(name)).expect("fixture loads")
}

pub fn points(rows: Vec<Vec<f64>>) -> Vec<Observable> {
    rows.into_iter().map(|r| Observable::new(r).unwrap()).collect()
}

/// `n` points uniform on the segment from the origin to `(1, 2, 2)/3`.
pub fn uniform_line(n: usize, seed: u64) -> Vec<Observable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points(
        (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                vec![s / 3.0, 2.0 * s / 3.0, 2.0 * s / 3.0]
            })
            .collect(),
    )
}

/// `n` points uniform in the unit square `z = 0` of R³.
pub fn uniform_square(n: usize, seed: u64) -> Vec<Observable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points((0..n).map(|_| vec![rng.random(), rng.random(), 0.0]).collect())
}

/// Correlation-dimension slope by direct pair counting.
///
/// Counts `#{i<j : ‖x_i − x_j‖ < r}` with a double loop for each radius inside the
/// `[lo_pct, hi_pct]` percentile band of pair distances and fits `log C` against `log r`.
pub fn brute_force_dimension(pts: &[Observable], radii: &[f64], lo_pct: f64, hi_pct: f64) -> f64 {
    let m = pts.len();
    let mut all = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let d: f64 = pts[i]
                .coords()
                .iter()
                .zip(pts[j].coords())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            all.push(d);
        }
    }
    let mut sorted = all.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| {
        let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    };
    let (lo, hi) = (pct(lo_pct), pct(hi_pct));
    let total = (m * (m - 1) / 2) as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &r in radii.iter().filter(|&&r| r >= lo && r <= hi) {
        let count = all.iter().filter(|&&d| d < r).count();
        xs.push(r.ln());
        ys.push((count as f64 / total).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// A random finite MDP with every `(i, l)` pair reachable.
#[derive(Debug, Clone)]
pub struct SyntheticMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[i][l][j]`
    pub p: Vec<Vec<Vec<f64>>>,
    /// `r[i][l][j]`
    pub r: Vec<Vec<Vec<f64>>>,
}

impl SyntheticMdp {
    pub fn random(seed: u64, max_states: usize, max_actions: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_states = rng.random_range(2..=max_states);
        let n_actions = rng.random_range(2..=max_actions);
        let mut p = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        let mut r = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        for i in 0..n_states {
            for l in 0..n_actions {
                let w: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>().powi(2)).collect();
                let s: f64 = w.iter().sum();
                for j in 0..n_states {
                    p[i][l][j] = w[j] / s;
                    r[i][l][j] = -rng.random::<f64>() * 2.0;
                }
            }
        }
        Self { n_states, n_actions, p, r }
    }

    pub fn flat_p(&self) -> Vec<f64> {
        self.p.iter().flatten().flatten().copied().collect()
    }

    pub fn flat_r(&self) -> Vec<f64> {
        self.r.iter().flatten().flatten().copied().collect()
    }

    pub fn sample_next(&self, i: usize, l: usize, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &pj) in self.p[i][l].iter().enumerate() {
            acc += pj;
            if u < acc {
                return j;
            }
        }
        self.n_states - 1
    }

    /// Optimal values by exhaustive enumeration of deterministic policies,
    /// each evaluated by fixed-point iteration to machine precision.
    pub fn enumerate_optimum(&self, gamma: f64) -> (Vec<f64>, Vec<usize>) {
        let total = self.n_actions.pow(self.n_states as u32);
        let mut best: Option<(Vec<f64>, Vec<usize>)> = None;
        for code in 0..total {
            let mut c = code;
            let pi: Vec<usize> = (0..self.n_states)
                .map(|_| {
                    let a = c % self.n_actions;
                    c /= self.n_actions;
                    a
                })
                .collect();
            let v = self.evaluate(&pi, gamma);
            let better = match &best {
                None => true,
                Some((bv, _)) => v.iter().sum::<f64>() > bv.iter().sum::<f64>() + 1e-12,
            };
            if better {
                best = Some((v, pi));
            }
        }
        best.unwrap()
    }

    pub fn evaluate(&self, pi: &[usize], gamma: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        for _ in 0..100_000 {
            let next: Vec<f64> = (0..self.n_states)
                .map(|i| {
                    let l = pi[i];
                    (0..self.n_states).map(|j| self.p[i][l][j] * (self.r[i][l][j] + gamma * v[j])).sum()
                })
                .collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < 1e-14 {
                break;
            }
        }
        v
    }
}
