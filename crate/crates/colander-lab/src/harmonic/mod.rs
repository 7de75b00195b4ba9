//! Walk-on-spheres estimation of harmonic measure, with layered bounds,
//! a planar finite-difference oracle, and decay-rate fitting.
//!
//! A walk jumps to a uniform point on the largest sphere that avoids both
//! boundary pieces, absorbing in a thin shell of width `delta`. Escape means
//! reaching the outer sphere; hitting means absorbing on an obstacle. Every
//! walk draws from its own counter-derived stream, so estimates are
//! bit-identical for any thread count.

mod fit;
mod grid;
mod layers;

pub use fit::{decay_fit, DecayFit};
pub use grid::{grid_solve_2d, GridSolution};
pub use layers::{layer_bounds, LayerBounds, LayerScheme, LayerStat};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{unit_direction, StreamKey};
use crate::setgen::{norm, signed_distance, Colander};

/// Walk accounting with the usual binomial error bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateCI {
    pub p_hat: f64,
    pub stderr: f64,
    pub n_success: u64,
    pub n_fail: u64,
    pub n_censored: u64,
}

impl EstimateCI {
    pub fn from_counts(n_success: u64, n_fail: u64, n_censored: u64) -> Self {
        let n = n_success + n_fail;
        let p_hat = if n == 0 {
            0.0
        } else {
            n_success as f64 / n as f64
        };
        let stderr = if n == 0 {
            f64::INFINITY
        } else {
            (p_hat * (1.0 - p_hat) / n as f64).sqrt()
        };
        Self {
            p_hat,
            stderr,
            n_success,
            n_fail,
            n_censored,
        }
    }

    pub fn n_walks(&self) -> u64 {
        self.n_success + self.n_fail + self.n_censored
    }

    /// Censoring above one per mille invalidates the estimate.
    pub fn flagged(&self) -> bool {
        let n = self.n_walks();
        n == 0
            || self.n_success + self.n_fail == 0
            || (self.n_censored as f64) > 1e-3 * n as f64
    }

    /// The complementary event, with success and failure swapped.
    pub fn complement(&self) -> Self {
        Self::from_counts(self.n_fail, self.n_success, self.n_censored)
    }
}

/// Absorption width, walk budget, and the master seed of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WoSConfig {
    pub delta: f64,
    pub n_walks: u64,
    pub max_steps: u64,
    pub seed: u64,
}

impl WoSConfig {
    /// Default absorption width of 1e-4 times the outer radius.
    pub fn for_domain(rho_outer: f64, n_walks: u64, seed: u64) -> Self {
        Self {
            delta: 1e-4 * rho_outer,
            n_walks,
            max_steps: 100_000,
            seed,
        }
    }

    fn validate(&self, rho_outer: f64) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1e-2 * rho_outer) {
            return Err(Error::Config(format!(
                "delta {} outside (0, 1e-2 * rho = {}]",
                self.delta,
                1e-2 * rho_outer
            )));
        }
        if self.n_walks < 1 {
            return Err(Error::Config("at least one walk required".into()));
        }
        if self.max_steps < 1000 {
            return Err(Error::Config("max_steps must be at least 1000".into()));
        }
        Ok(())
    }
}

enum WalkEnd {
    Outer,
    Obstacle,
    Censored,
}

fn run_walk(c: &Colander, x0: [f64; 3], cfg: &WoSConfig, key: StreamKey, idx: u64) -> WalkEnd {
    let mut rng = key.stream(idx);
    let dim = c.dim();
    let rho = c.rho_outer();
    let mut x = x0;
    for _ in 0..cfg.max_steps {
        let to_outer = rho - norm(x);
        if to_outer < cfg.delta {
            return WalkEnd::Outer;
        }
        let (to_obstacle, _) = c.obstacles().signed_distance(x);
        if to_obstacle < cfg.delta {
            return WalkEnd::Obstacle;
        }
        let r = to_outer.min(to_obstacle);
        let dir = unit_direction(dim, &mut rng);
        x[0] += r * dir[0];
        x[1] += r * dir[1];
        if dim == 3 {
            x[2] += r * dir[2];
        }
    }
    WalkEnd::Censored
}

fn wos_counts(c: &Colander, x0: [f64; 3], cfg: &WoSConfig, label: &str) -> Result<(u64, u64, u64)> {
    cfg.validate(c.rho_outer())?;
    signed_distance(x0, c)?;
    let key = StreamKey::new(cfg.seed, label);
    let (outer, obstacle, censored) = (0..cfg.n_walks)
        .into_par_iter()
        .map(|i| match run_walk(c, x0, cfg, key, i) {
            WalkEnd::Outer => (1u64, 0u64, 0u64),
            WalkEnd::Obstacle => (0, 1, 0),
            WalkEnd::Censored => (0, 0, 1),
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok((outer, obstacle, censored))
}

/// Probability of escaping to the outer sphere before touching an obstacle,
/// started from `x0`.
pub fn wos_escape(c: &Colander, x0: [f64; 3], cfg: &WoSConfig) -> Result<EstimateCI> {
    let (outer, obstacle, censored) = wos_counts(c, x0, cfg, "wos-escape")?;
    Ok(EstimateCI::from_counts(outer, obstacle, censored))
}

/// Probability of hitting the obstacle set before the outer sphere: the
/// complementary event of [`wos_escape`] on the same bounded domain.
pub fn wos_hit(c: &Colander, x0: [f64; 3], cfg: &WoSConfig) -> Result<EstimateCI> {
    let (outer, obstacle, censored) = wos_counts(c, x0, cfg, "wos-hit")?;
    Ok(EstimateCI::from_counts(obstacle, outer, censored))
}
