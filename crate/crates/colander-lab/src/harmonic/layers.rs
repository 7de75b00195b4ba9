//! Layered product bounds on the escape probability.
//!
//! For nested domains `D_k = B(0, A rho_k)` the escape probability through
//! `partial D_{n+1}` is sandwiched between products over layers:
//!
//! ```text
//! exp(-alpha * sum_k sup_x omega(x, E; D_{k+1} \ E))
//!     <= omega(0, partial D_{n+1}; D_{n+1} \ E)
//!     <= exp(-sum_k inf_x omega(x, E; D_{k+1} \ E))
//! ```
//!
//! with sup and inf over `partial D_k`, valid while every layer sup stays
//! below `1 - 1/alpha`. Boundary extrema are approximated from finitely
//! many sampled points, so the bounds reported here are empirical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{rho_sequence, Profile};
use crate::rng::StreamKey;
use crate::setgen::Colander;

use super::{wos_hit, EstimateCI, WoSConfig};

/// Per-layer hit statistics over the sampled boundary points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerStat {
    pub k: usize,
    pub rho_k: f64,
    pub inf: EstimateCI,
    pub sup: EstimateCI,
    pub m_points: usize,
}

/// Scale, slack constant, and per-layer statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerScheme {
    pub a_scale: f64,
    pub alpha: f64,
    pub alpha_hypothesis_ok: bool,
    pub layers: Vec<LayerStat>,
}

/// The empirical sandwich with first-order error bars on the log scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerBounds {
    pub lower: f64,
    pub upper: f64,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub scheme: LayerScheme,
}

/// Estimate per-layer inf/sup of the hit probability at `m_points` sampled
/// boundary points per layer sphere, then assemble the product bounds.
///
/// The slack constant is taken as `alpha = 1/(1 - max_k sup)`, the smallest
/// value the hypothesis allows; statistical error is propagated first order
/// on the log (the dependence of alpha itself on the estimates is ignored).
pub fn layer_bounds(
    c: &Colander,
    p: &Profile,
    a_scale: f64,
    n_layers: usize,
    m_points: usize,
    cfg: &WoSConfig,
) -> Result<LayerBounds> {
    if n_layers < 1 {
        return Err(Error::Config("need at least one layer".into()));
    }
    if m_points < 8 {
        return Err(Error::Config("need at least 8 boundary samples".into()));
    }
    if a_scale < 1.0 {
        return Err(Error::Config(format!("layer scale {a_scale} below 1")));
    }
    let seq = rho_sequence(p, n_layers + 1)?;
    let dim = p.dim().usize();
    let key = StreamKey::new(cfg.seed, "layer-points");

    let mut layers = Vec::with_capacity(n_layers);
    for k in 1..=n_layers {
        let r_k = a_scale * seq.rho[k];
        let r_next = a_scale * seq.rho[k + 1];
        if r_next > c.rho_outer() + 1e-9 {
            return Err(Error::Config(format!(
                "layer domain radius {r_next} exceeds the colander radius {}",
                c.rho_outer()
            )));
        }
        let domain = c.with_outer(r_next)?;
        let sub_cfg = WoSConfig {
            delta: cfg.delta.min(1e-2 * r_next),
            ..*cfg
        };
        let mut inf: Option<EstimateCI> = None;
        let mut sup: Option<EstimateCI> = None;
        for m in 0..m_points {
            let x = boundary_point(dim, r_k, k, m, m_points, key);
            let est = if domain.obstacles().signed_distance(x).0 <= 0.0 {
                // sample point sits on the obstacle set: sure hit
                EstimateCI::from_counts(sub_cfg.n_walks, 0, 0)
            } else {
                let point_cfg = WoSConfig {
                    seed: key.child((k * 100_000 + m) as u64).to_seed(),
                    ..sub_cfg
                };
                wos_hit(&domain, x, &point_cfg)?
            };
            if inf.as_ref().map_or(true, |b| est.p_hat < b.p_hat) {
                inf = Some(est);
            }
            if sup.as_ref().map_or(true, |b| est.p_hat > b.p_hat) {
                sup = Some(est);
            }
        }
        layers.push(LayerStat {
            k,
            rho_k: seq.rho[k],
            inf: inf.unwrap(),
            sup: sup.unwrap(),
            m_points,
        });
    }

    let max_sup = layers.iter().map(|l| l.sup.p_hat).fold(0.0f64, f64::max);
    if max_sup >= 1.0 {
        return Err(Error::Alpha(format!(
            "a layer sup reached {max_sup}; no finite slack constant exists"
        )));
    }
    let alpha = if max_sup > 0.0 {
        1.0 / (1.0 - max_sup)
    } else {
        1.0
    };
    let sum_sup: f64 = layers.iter().map(|l| l.sup.p_hat).sum();
    let sum_inf: f64 = layers.iter().map(|l| l.inf.p_hat).sum();
    let var_sup: f64 = layers.iter().map(|l| l.sup.stderr.powi(2)).sum();
    let var_inf: f64 = layers.iter().map(|l| l.inf.stderr.powi(2)).sum();
    let lower = (-alpha * sum_sup).exp();
    let upper = (-sum_inf).exp();
    Ok(LayerBounds {
        lower,
        upper,
        sigma_lower: lower * alpha * var_sup.sqrt(),
        sigma_upper: upper * var_inf.sqrt(),
        scheme: LayerScheme {
            a_scale,
            alpha,
            alpha_hypothesis_ok: max_sup < 1.0,
            layers,
        },
    })
}

/// Deterministic quasi-uniform boundary points, rotated per layer.
fn boundary_point(
    dim: usize,
    radius: f64,
    k: usize,
    m: usize,
    m_points: usize,
    key: StreamKey,
) -> [f64; 3] {
    use rand::Rng;
    let mut rng = key.child(k as u64).stream(0);
    let offset: f64 = rng.gen();
    if dim == 2 {
        let th = 2.0 * std::f64::consts::PI * (m as f64 + offset) / m_points as f64;
        [radius * th.cos(), radius * th.sin(), 0.0]
    } else {
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        let z = 1.0 - 2.0 * (m as f64 + 0.5) / m_points as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let th = golden * m as f64 + 2.0 * std::f64::consts::PI * offset;
        [radius * r * th.cos(), radius * r * th.sin(), radius * z]
    }
}
