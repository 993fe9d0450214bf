//! Exact and Euler path simulation for `dX_t = -Q X_t dt + dW_t`.
//!
//! The coordinates `Y = P^-1 X` with `P = [[1,1],[1,-1]]` evolve as two
//! independent scalar processes `dY_i = -lambda_i Y_i dt + sigma dB_i` with
//! `sigma^2 = 1/2`, so the exact sampler draws each channel from its
//! Gaussian transition law and maps back with `X = P Y`. Brownian
//! increments are reconstructed from the state residuals
//! `dW_i = (X_{i+1} - X_i) + Q X_i dt`.

use crate::error::{Error, Result};
use crate::model::{Mat2, Theta, Vec2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Diffusion variance of each decoupled channel, `P^-1 (P^-1)' = I/2`.
pub const CHANNEL_SIGMA2: f64 = 0.5;

/// Uniform time grid `0, dt, 2 dt, ..., n_steps * dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGrid {
    dt: f64,
    n_steps: usize,
}

impl PathGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::Grid(format!("step must be positive and finite, got dt={dt}")));
        }
        if n_steps < 2 {
            return Err(Error::Grid(format!("need at least 2 steps, got {n_steps}")));
        }
        Ok(PathGrid { dt, n_steps })
    }

    /// Grid for horizon `t`; the step count is rounded to the nearest
    /// integer and must reproduce `t` to within a part in 1e6.
    pub fn for_horizon(t: f64, dt: f64) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::Grid(format!("horizon must be positive, got T={t}")));
        }
        let n = (t / dt).round();
        if n < 2.0 || !n.is_finite() {
            return Err(Error::Grid(format!("horizon T={t} too short for step dt={dt}")));
        }
        if (n * dt - t).abs() > 1e-6 * t.max(1.0) {
            return Err(Error::Grid(format!("horizon T={t} is not a multiple of dt={dt}")));
        }
        PathGrid::new(dt, n as usize)
    }

    pub fn dt(self) -> f64 {
        self.dt
    }

    pub fn n_steps(self) -> usize {
        self.n_steps
    }

    /// Number of grid nodes, `n_steps + 1`.
    pub fn n_nodes(self) -> usize {
        self.n_steps + 1
    }

    /// Total horizon `n_steps * dt`.
    pub fn horizon(self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// Reproducible generator stream: replication `stream_index` under a master
/// seed. Distinct indices under the same seed give statistically
/// independent, fully deterministic sequences regardless of thread count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        RngStream { master_seed, stream_index }
    }

    /// Derives a child master seed for an independent family of streams
    /// (one per horizon, per refinement leg, ...) by stateless mixing.
    pub fn derive_master(master_seed: u64, domain: u64) -> u64 {
        master_seed ^ splitmix64(domain)
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.master_seed);
        r.set_stream(self.stream_index);
        r
    }
}

/// SplitMix64 finalizer; bijective mixing used for seed derivation.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A simulated path on a uniform grid: `states[i]` is `X_{i dt}` and
/// `increments[i]` is the Brownian increment over `[i dt, (i+1) dt)`, so
/// `increments` has one entry fewer than `states`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid: PathGrid,
    pub states: Vec<Vec2>,
    pub increments: Vec<Vec2>,
}

impl SamplePath {
    pub fn terminal(&self) -> Vec2 {
        *self.states.last().expect("path has at least one node")
    }

    /// Prefix of the path up to the grid node at or below time `s`.
    /// Fails if the truncated path would have fewer than 2 steps.
    pub fn truncated(&self, s: f64) -> Result<SamplePath> {
        let m = snap_to_node(s, self.grid.dt());
        if m < 2 {
            return Err(Error::Grid(format!(
                "cannot truncate to {s}: fewer than 2 steps of dt={} remain",
                self.grid.dt()
            )));
        }
        if m > self.grid.n_steps() {
            return Err(Error::Grid(format!(
                "cannot truncate to {s}: path ends at {}",
                self.grid.horizon()
            )));
        }
        Ok(SamplePath {
            grid: PathGrid::new(self.grid.dt(), m)?,
            states: self.states[..=m].to_vec(),
            increments: self.increments[..m].to_vec(),
        })
    }
}

/// Largest node index `m` with `m * dt <= s`, with a small relative guard
/// so that horizons intended to lie on the grid do not round down.
pub fn snap_to_node(s: f64, dt: f64) -> usize {
    ((s / dt) * (1.0 + 1e-12)).floor() as usize
}

/// Draws `X_0` from the stationary law `N(0, Q^-1/2)` by sampling the two
/// channels with variances `1/(4 lambda_i)` and mapping back with `P`.
pub fn sample_stationary_init(theta: Theta, rng: &mut impl Rng) -> Vec2 {
    let s = theta.spectral();
    let y1 = (0.25 / s.lambda1).sqrt() * rng.sample::<f64, _>(StandardNormal);
    let y2 = (0.25 / s.lambda2).sqrt() * rng.sample::<f64, _>(StandardNormal);
    Vec2::new(y1 + y2, y1 - y2)
}

/// Exact stationary path sampler. Each channel follows its Gaussian
/// transition `Y' = e^{-lambda dt} Y + N(0, (1 - e^{-2 lambda dt})/(4 lambda))`;
/// no discretization error at the grid nodes.
pub fn simulate_exact(theta: Theta, grid: PathGrid, stream: RngStream) -> SamplePath {
    let mut rng = stream.rng();
    let s = theta.spectral();
    let dt = grid.dt();
    let decay = [(-s.lambda1 * dt).exp(), (-s.lambda2 * dt).exp()];
    let noise_sd = [
        (-(-2.0 * s.lambda1 * dt).exp_m1() / (4.0 * s.lambda1)).sqrt(),
        (-(-2.0 * s.lambda2 * dt).exp_m1() / (4.0 * s.lambda2)).sqrt(),
    ];
    let init_sd = [(0.25 / s.lambda1).sqrt(), (0.25 / s.lambda2).sqrt()];

    let mut y = [
        init_sd[0] * rng.sample::<f64, _>(StandardNormal),
        init_sd[1] * rng.sample::<f64, _>(StandardNormal),
    ];
    let mut states = Vec::with_capacity(grid.n_nodes());
    states.push(Vec2::new(y[0] + y[1], y[0] - y[1]));
    for _ in 0..grid.n_steps() {
        for c in 0..2 {
            y[c] = decay[c] * y[c] + noise_sd[c] * rng.sample::<f64, _>(StandardNormal);
        }
        states.push(Vec2::new(y[0] + y[1], y[0] - y[1]));
    }
    let increments = reconstruct_increments(theta, dt, &states);
    SamplePath { grid, states, increments }
}

/// Euler-Maruyama sampler with the same stationary initial draw; the
/// Brownian increments are the ones actually drawn, recorded exactly.
pub fn simulate_euler(theta: Theta, grid: PathGrid, stream: RngStream) -> SamplePath {
    let mut rng = stream.rng();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let q = theta.drift_matrix();

    let mut x = sample_stationary_init(theta, &mut rng);
    let mut states = Vec::with_capacity(grid.n_nodes());
    let mut increments = Vec::with_capacity(grid.n_steps());
    states.push(x);
    for _ in 0..grid.n_steps() {
        let dw = Vec2::new(
            sqrt_dt * rng.sample::<f64, _>(StandardNormal),
            sqrt_dt * rng.sample::<f64, _>(StandardNormal),
        );
        x = x - (q * x).scale(dt) + dw;
        states.push(x);
        increments.push(dw);
    }
    SamplePath { grid, states, increments }
}

/// Brownian increments implied by the state residuals:
/// `dW_i = (X_{i+1} - X_i) + Q X_i dt`. Exact for Euler paths; accurate to
/// `O(dt^{3/2})` per step on exact paths.
pub fn reconstruct_increments(theta: Theta, dt: f64, states: &[Vec2]) -> Vec<Vec2> {
    let q = theta.drift_matrix();
    states
        .windows(2)
        .map(|w| w[1] - w[0] + (q * w[0]).scale(dt))
        .collect()
}

/// The two decoupled channel paths `Y = P^-1 X`, i.e.
/// `y1 = (x1+x2)/2`, `y2 = (x1-x2)/2`, each a scalar OU process with rate
/// `lambda_i` and diffusion variance [`CHANNEL_SIGMA2`].
pub fn decouple_path(path: &SamplePath) -> (Vec<f64>, Vec<f64>) {
    let y1 = path.states.iter().map(|x| 0.5 * (x.x + x.y)).collect();
    let y2 = path.states.iter().map(|x| 0.5 * (x.x - x.y)).collect();
    (y1, y2)
}

/// Transition matrices actually used by the exact sampler, exposed for
/// cross-checking against [`crate::model::transition`].
pub fn exact_step_cov(theta: Theta, dt: f64) -> Mat2 {
    let s = theta.spectral();
    let v1 = -(-2.0 * s.lambda1 * dt).exp_m1() / (4.0 * s.lambda1);
    let v2 = -(-2.0 * s.lambda2 * dt).exp_m1() / (4.0 * s.lambda2);
    // Cov(P Y) = P diag(v1, v2) P'.
    Mat2::new(v1 + v2, v1 - v2, v1 - v2, v1 + v2)
}
