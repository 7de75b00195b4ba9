//! Equilibrium measures, capacities, and barrier potentials on ball unions.
//!
//! The equilibrium weights minimize the discrete kernel energy
//! `sum_ij w_i w_j (-ker_d(|x_i - x_j|))` over the probability simplex, with
//! the singular diagonal replaced by the patch model `-ker_d(a_i)`: each
//! node represents its share of the ball surface, and `a_i` is chosen so the
//! patch-averaged kernel is reproduced exactly (arc half-length over e on
//! circles, `r/sqrt(N)` on spheres). The constant potential on the support
//! is the Robin constant; the capacity is the kernel inverse of it.

mod mc;

pub use mc::{mc_capacity_d3, McCapacity};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{kernel_eval, kernel_inv, Dim};
use crate::setgen::{dist, BallUnion, CapacityOracle};

/// Nonnegative weights on surface nodes, summing to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.weights.len() {
            return Err(Error::Config("node/weight length mismatch".into()));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("negative weight".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights sum to {total}")));
        }
        Ok(())
    }
}

/// Capacity, Robin constant, and solver quality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CapacityResult {
    pub capacity: f64,
    pub robin: f64,
    /// Max deviation of the discrete potential from the Robin constant over
    /// support nodes.
    pub residual: f64,
    pub nodes: usize,
}

impl CapacityResult {
    /// In planar contexts that compare against densities below one, a
    /// capacity at or above one deserves attention but is not an error.
    pub fn exceeds_unit(&self) -> bool {
        self.capacity >= 1.0
    }
}

/// Deterministic surface nodes: equal angles on circles, spiral on spheres.
/// Returns the nodes and their patch radii.
fn surface_nodes(d: Dim, center: [f64; 3], radius: f64, n: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut patch = Vec::with_capacity(n);
    if d.get() == 2 {
        let a = std::f64::consts::PI * radius / (n as f64 * std::f64::consts::E);
        for i in 0..n {
            let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
            nodes.push([
                center[0] + radius * th.cos(),
                center[1] + radius * th.sin(),
                0.0,
            ]);
            patch.push(a);
        }
    } else {
        let a = radius / (n as f64).sqrt();
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let th = golden * i as f64;
            nodes.push([
                center[0] + radius * r * th.cos(),
                center[1] + radius * r * th.sin(),
                center[2] + radius * z,
            ]);
            patch.push(a);
        }
    }
    (nodes, patch)
}

/// Energy matrix with the patch-model diagonal.
fn energy_matrix(d: Dim, nodes: &[[f64; 3]], patch: &[f64], reg: f64) -> Result<DMatrix<f64>> {
    let n = nodes.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = -kernel_eval(d, patch[i])? + reg;
        for j in (i + 1)..n {
            let r = dist(nodes[i], nodes[j]);
            if r < 1e-12 {
                return Err(Error::Solver(format!(
                    "coincident nodes {i},{j}; refine placement"
                )));
            }
            let v = -kernel_eval(d, r)?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Solve the simplex-constrained energy minimization on the active set by
/// the KKT system, dropping negative weights until none remain.
fn solve_kkt(g: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let n = g.nrows();
    let mut active: Vec<usize> = (0..n).collect();
    for _round in 0..60 {
        let m = active.len();
        if m == 0 {
            return Err(Error::Solver("active set emptied".into()));
        }
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        for (ai, &i) in active.iter().enumerate() {
            for (aj, &j) in active.iter().enumerate() {
                kkt[(ai, aj)] = g[(i, j)];
            }
            kkt[(ai, m)] = 1.0;
            kkt[(m, ai)] = 1.0;
        }
        let mut rhs = DVector::zeros(m + 1);
        rhs[m] = 1.0;
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("singular equilibrium system".into()))?;
        let negative: Vec<usize> = (0..m).filter(|&ai| sol[ai] < -1e-12).collect();
        if negative.is_empty() {
            let mut w = vec![0.0; n];
            for (ai, &i) in active.iter().enumerate() {
                w[i] = sol[ai].max(0.0);
            }
            let total: f64 = w.iter().sum();
            for wi in &mut w {
                *wi /= total;
            }
            // Gw + mu*1 = 0 on the active set, so the constant potential
            // value is -mu.
            let theta = -sol[m];
            return Ok((w, theta));
        }
        let drop: std::collections::BTreeSet<usize> =
            negative.iter().map(|&ai| active[ai]).collect();
        active.retain(|i| !drop.contains(i));
    }
    Err(Error::Solver("active-set iteration did not settle".into()))
}

/// Projection onto the probability simplex.
fn simplex_project(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        acc += s;
        let t = (acc - 1.0) / (k as f64 + 1.0);
        if s - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Projected-gradient minimization for systems too large to factor.
fn solve_projected(g: &DMatrix<f64>, max_iters: usize) -> Result<(Vec<f64>, f64)> {
    let n = g.nrows();
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    // Lipschitz estimate by a few power iterations.
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..20 {
        v = g * &v;
        let nv = v.norm();
        if nv == 0.0 {
            break;
        }
        v /= nv;
    }
    let lip = (&v.transpose() * g * &v)[(0, 0)].abs().max(1e-12);
    let eta = 1.0 / (2.0 * lip);
    for _ in 0..max_iters {
        let grad = g * &w * 2.0;
        let mut next = &w - eta * grad;
        simplex_project(next.as_mut_slice());
        let delta = (&next - &w).norm();
        w = next;
        if delta < 1e-14 {
            break;
        }
    }
    let gw = g * &w;
    // Support-averaged multiplier.
    let mut theta = 0.0;
    let mut mass = 0.0;
    for i in 0..n {
        if w[i] > 0.0 {
            theta += w[i] * gw[i];
            mass += w[i];
        }
    }
    theta /= mass.max(1e-300);
    Ok((w.as_slice().to_vec(), theta))
}

const KKT_NODE_LIMIT: usize = 4096;

/// Equilibrium measure and capacity of a ball union.
///
/// Dense KKT solve up to 4096 nodes, projected gradient beyond. The
/// reported residual is the maximal deviation of the discrete potential
/// from the Robin constant across support nodes.
pub fn equilibrium_solve(
    s: &BallUnion,
    nodes_per_ball: usize,
    reg: f64,
) -> Result<(DiscreteMeasure, CapacityResult)> {
    if s.is_empty() {
        return Err(Error::Domain("equilibrium of an empty set".into()));
    }
    let d = Dim::new(s.dim() as u32)?;
    let min_nodes = if d.get() == 2 { 8 } else { 64 };
    if nodes_per_ball < min_nodes {
        return Err(Error::Config(format!(
            "nodes_per_ball {nodes_per_ball} below minimum {min_nodes} for d = {}",
            d.get()
        )));
    }
    let mut nodes = Vec::new();
    let mut patch = Vec::new();
    for b in s.balls() {
        let (mut ns, mut ps) = surface_nodes(d, b.center, b.radius, nodes_per_ball);
        nodes.append(&mut ns);
        patch.append(&mut ps);
    }
    let g = energy_matrix(d, &nodes, &patch, reg)?;
    let (weights, theta) = if nodes.len() <= KKT_NODE_LIMIT {
        solve_kkt(&g)?
    } else {
        solve_projected(&g, 20_000)?
    };

    // Residual: deviation of the potential from theta over the support.
    let wvec = DVector::from_column_slice(&weights);
    let pot = &g * &wvec;
    let mut residual = 0.0f64;
    for i in 0..weights.len() {
        if weights[i] > 0.0 {
            residual = residual.max((pot[i] - theta).abs());
        }
    }

    let robin = -theta;
    let capacity = kernel_inv(d, robin);
    let measure = DiscreteMeasure { nodes, weights };
    measure.validate()?;
    let result = CapacityResult {
        capacity,
        robin,
        residual,
        nodes: measure.nodes.len(),
    };
    Ok((measure, result))
}

/// `p_mu(x) = sum_i w_i ker_d(|x - x_i|)`, with the distance floored away
/// from zero when `x` collides with a node.
pub fn potential_eval(d: Dim, mu: &DiscreteMeasure, x: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for (node, w) in mu.nodes.iter().zip(&mu.weights) {
        let r = dist(x, *node).max(1e-14);
        let k = if d.get() == 2 {
            r.ln()
        } else {
            -r.powi(-(d.get() as i32 - 2))
        };
        acc += w * k;
    }
    acc
}

/// Barrier from a family of equilibrium measures:
/// `R_n^{d-2} * sum_lambda -p_{mu_lambda}(x)`; harmonic off the supports.
pub fn barrier_eval(lattice: &[([f64; 3], DiscreteMeasure)], rn: f64, d: Dim, x: [f64; 3]) -> f64 {
    let scale = rn.powi(d.get() as i32 - 2);
    let mut acc = 0.0;
    for (_, mu) in lattice {
        acc -= potential_eval(d, mu, x);
    }
    scale * acc
}

/// Capacity oracle backed by the equilibrium solver.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumOracle {
    pub nodes_per_ball: usize,
    pub reg: f64,
}

impl Default for EquilibriumOracle {
    fn default() -> Self {
        Self {
            nodes_per_ball: 64,
            reg: 0.0,
        }
    }
}

impl CapacityOracle for EquilibriumOracle {
    fn capacity(&self, union: &BallUnion) -> Result<f64> {
        let npb = if union.dim() == 2 {
            self.nodes_per_ball.max(8)
        } else {
            self.nodes_per_ball.max(64)
        };
        Ok(equilibrium_solve(union, npb, self.reg)?.1.capacity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setgen::Ball;
    use rand::Rng;

    fn single_ball(d: usize, r: f64) -> BallUnion {
        BallUnion::new(
            d,
            vec![Ball {
                center: [0.0, 0.0, 0.0],
                radius: r,
            }],
        )
        .unwrap()
    }

    #[test]
    fn single_ball_capacity_2d() {
        for r in [0.5, 1.0, 2.0] {
            let (mu, res) = equilibrium_solve(&single_ball(2, r), 512, 0.0).unwrap();
            mu.validate().unwrap();
            assert!(
                (res.capacity - r).abs() / r < 5e-3,
                "r = {r}: capacity {}",
                res.capacity
            );
            assert!(
                res.residual <= 1e-6 * res.robin.abs().max(1e-9),
                "residual {} robin {}",
                res.residual,
                res.robin
            );
        }
    }

    #[test]
    fn single_ball_capacity_3d() {
        for r in [0.5, 1.0, 2.0] {
            let (_, res) = equilibrium_solve(&single_ball(3, r), 2048, 0.0).unwrap();
            assert!(
                (res.capacity - r).abs() / r < 5e-3,
                "r = {r}: capacity {}",
                res.capacity
            );
            assert!(res.residual <= 1e-6 * res.robin.abs());
        }
    }

    #[test]
    fn two_far_disks_follow_sqrt_law() {
        // centers at distance 1e4, unit radius: capacity near sqrt(1e4)
        let u = BallUnion::new(
            2,
            vec![
                Ball {
                    center: [0.0, 0.0, 0.0],
                    radius: 1.0,
                },
                Ball {
                    center: [1.0e4, 0.0, 0.0],
                    radius: 1.0,
                },
            ],
        )
        .unwrap();
        let (_, res) = equilibrium_solve(&u, 256, 0.0).unwrap();
        assert!(
            (res.capacity - 100.0).abs() / 100.0 < 0.05,
            "capacity {}",
            res.capacity
        );
        assert!(res.exceeds_unit());
    }

    #[test]
    fn potential_of_uniform_circle() {
        let (mu, res) = equilibrium_solve(&single_ball(2, 1.0), 512, 0.0).unwrap();
        let d2 = Dim::new(2).unwrap();
        // outside: log |x|
        let p = potential_eval(d2, &mu, [2.0, 0.0, 0.0]);
        assert!((p - 2.0f64.ln()).abs() < 1e-3, "got {p}");
        // center: log 1 = 0
        let p0 = potential_eval(d2, &mu, [0.0, 0.0, 0.0]);
        assert!(p0.abs() < 1e-3, "got {p0}");
        // Frostman: potential >= robin everywhere (log kernel), up to the
        // discretization scale of the node model.
        let key = crate::rng::StreamKey::new(12, "maxprin");
        let mut rng = key.stream(0);
        let slack = 2e-3;
        for _ in 0..1000 {
            let x = [
                8.0 * rng.gen::<f64>() - 4.0,
                8.0 * rng.gen::<f64>() - 4.0,
                0.0,
            ];
            let v = potential_eval(d2, &mu, x);
            assert!(
                v >= res.robin - slack,
                "potential {v} below robin {}",
                res.robin
            );
        }
    }

    #[test]
    fn potential_of_uniform_sphere() {
        let (mu, _) = equilibrium_solve(&single_ball(3, 1.0), 1024, 0.0).unwrap();
        let d3 = Dim::new(3).unwrap();
        let p = potential_eval(d3, &mu, [2.0, 0.0, 0.0]);
        assert!((p + 0.5).abs() < 2e-3, "got {p}");
    }

    #[test]
    fn barrier_single_measure_log_distance() {
        let (mu, _) = equilibrium_solve(&single_ball(2, 1.0), 256, 0.0).unwrap();
        let d2 = Dim::new(2).unwrap();
        let lattice = vec![([0.0, 0.0, 0.0], mu)];
        assert_eq!(barrier_eval(&[], 1.0, d2, [5.0, 0.0, 0.0]), 0.0);
        let x = [std::f64::consts::E, 0.0, 0.0];
        let v = barrier_eval(&lattice, 1.0, d2, x);
        assert!((v + 1.0).abs() < 1e-3, "got {v}");
    }

    #[test]
    fn barrier_satisfies_mean_value_off_support() {
        let (mu, _) = equilibrium_solve(&single_ball(2, 1.0), 256, 0.0).unwrap();
        let d2 = Dim::new(2).unwrap();
        let lattice = vec![([0.0, 0.0, 0.0], mu)];
        let x = [2.5, 0.5, 0.0];
        let r = 0.3;
        let n = 512;
        let mut avg = 0.0;
        for i in 0..n {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            avg += barrier_eval(
                &lattice,
                1.0,
                d2,
                [x[0] + r * th.cos(), x[1] + r * th.sin(), 0.0],
            );
        }
        avg /= n as f64;
        let v = barrier_eval(&lattice, 1.0, d2, x);
        assert!((avg - v).abs() < 1e-4, "mean {avg} vs value {v}");
    }

    #[test]
    fn capacity_monotone_under_growth() {
        let balls = vec![
            Ball {
                center: [0.0, 0.0, 0.0],
                radius: 0.5,
            },
            Ball {
                center: [3.0, 0.0, 0.0],
                radius: 0.7,
            },
        ];
        let grown: Vec<Ball> = balls
            .iter()
            .map(|b| Ball {
                center: b.center,
                radius: b.radius * 1.3,
            })
            .collect();
        let (_, small) = equilibrium_solve(&BallUnion::new(2, balls).unwrap(), 128, 0.0).unwrap();
        let (_, big) = equilibrium_solve(&BallUnion::new(2, grown).unwrap(), 128, 0.0).unwrap();
        assert!(small.capacity <= big.capacity + small.residual + big.residual + 1e-9);
    }

    #[test]
    fn off_node_deviation_shrinks_with_refinement() {
        // sampled halfway between adjacent nodes on the circle
        let deviation = |n: usize| -> f64 {
            let (mu, res) = equilibrium_solve(&single_ball(2, 1.0), n, 0.0).unwrap();
            let d2 = Dim::new(2).unwrap();
            let mut worst = 0.0f64;
            for i in 0..n {
                let th = 2.0 * std::f64::consts::PI * (i as f64 + 1.0) / n as f64;
                let x = [th.cos(), th.sin(), 0.0];
                worst = worst.max((potential_eval(d2, &mu, x) - res.robin).abs());
            }
            worst
        };
        let d512 = deviation(512);
        let d1024 = deviation(1024);
        assert!(
            d1024 <= 0.6 * d512,
            "no refinement gain: {d512} -> {d1024}"
        );
    }

    #[test]
    fn projected_gradient_agrees_with_kkt() {
        let u = single_ball(2, 1.0);
        let d = Dim::new(2).unwrap();
        let (nodes, patch) = {
            let b = u.balls()[0];
            super::surface_nodes(d, b.center, b.radius, 64)
        };
        let g = super::energy_matrix(d, &nodes, &patch, 0.0).unwrap();
        let (wk, tk) = super::solve_kkt(&g).unwrap();
        let (wp, tp) = super::solve_projected(&g, 20_000).unwrap();
        assert!((tk - tp).abs() < 1e-6, "theta {tk} vs {tp}");
        for (a, b) in wk.iter().zip(&wp) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(equilibrium_solve(&BallUnion::empty(2), 64, 0.0).is_err());
        assert!(equilibrium_solve(&single_ball(2, 1.0), 4, 0.0).is_err());
        assert!(equilibrium_solve(&single_ball(3, 1.0), 32, 0.0).is_err());
    }
}
