//! Bounding-volume hierarchy over balls for nearest-surface queries.
//!
//! Returns exactly `min_i (|x - c_i| - r_i)` together with the index of the
//! minimizing ball; best-first traversal with per-node bounds gives the
//! expected logarithmic query cost the geometry contract asks for.

use super::Ball;

#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    max_radius: f64,
    // Leaf: range into `order`; inner: child indices.
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct BallBvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    balls: Vec<Ball>,
}

const LEAF_SIZE: usize = 8;

fn aabb_of(balls: &[Ball], idx: &[usize]) -> ([f64; 3], [f64; 3], f64) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut max_r = 0.0f64;
    for &i in idx {
        for a in 0..3 {
            lo[a] = lo[a].min(balls[i].center[a]);
            hi[a] = hi[a].max(balls[i].center[a]);
        }
        max_r = max_r.max(balls[i].radius);
    }
    (lo, hi, max_r)
}

fn dist_to_aabb(x: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut d2 = 0.0;
    for a in 0..3 {
        let d = if x[a] < lo[a] {
            lo[a] - x[a]
        } else if x[a] > hi[a] {
            x[a] - hi[a]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2.sqrt()
}

impl BallBvh {
    pub fn build(balls: Vec<Ball>) -> Self {
        let mut order: Vec<usize> = (0..balls.len()).collect();
        let mut nodes = Vec::new();
        if !balls.is_empty() {
            build_node(&balls, &mut order, 0, balls.len(), &mut nodes);
        }
        Self {
            nodes,
            order,
            balls,
        }
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// Signed distance to the nearest ball surface and its index; negative
    /// inside a ball. `None` when the union is empty.
    pub fn nearest(&self, x: [f64; 3]) -> Option<(f64, usize)> {
        if self.balls.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        let mut best_idx = usize::MAX;
        // Manual stack of (node, lower bound).
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, self.node_bound(0, x)));
        while let Some((ni, bound)) = stack.pop() {
            if bound >= best {
                continue;
            }
            match self.nodes[ni].kind {
                NodeKind::Leaf { start, end } => {
                    for &bi in &self.order[start..end] {
                        let b = &self.balls[bi];
                        let d = dist(x, b.center) - b.radius;
                        if d < best {
                            best = d;
                            best_idx = bi;
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let bl = self.node_bound(left, x);
                    let br = self.node_bound(right, x);
                    // Push the farther child first so the nearer is explored next.
                    if bl <= br {
                        stack.push((right, br));
                        stack.push((left, bl));
                    } else {
                        stack.push((left, bl));
                        stack.push((right, br));
                    }
                }
            }
        }
        Some((best, best_idx))
    }

    fn node_bound(&self, ni: usize, x: [f64; 3]) -> f64 {
        let n = &self.nodes[ni];
        dist_to_aabb(x, n.lo, n.hi) - n.max_radius
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn build_node(
    balls: &[Ball],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let slice = &order[start..end];
    let (lo, hi, max_radius) = aabb_of(balls, slice);
    let my_idx = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        max_radius,
        kind: NodeKind::Leaf { start, end },
    });
    if end - start > LEAF_SIZE {
        // Median split on the longest axis.
        let mut axis = 0;
        let mut span = hi[0] - lo[0];
        for a in 1..3 {
            if hi[a] - lo[a] > span {
                span = hi[a] - lo[a];
                axis = a;
            }
        }
        let mid = (start + end) / 2;
        order[start..end].sort_unstable_by(|&i, &j| {
            balls[i].center[axis]
                .partial_cmp(&balls[j].center[axis])
                .unwrap()
        });
        let left = build_node(balls, order, start, mid, nodes);
        let right = build_node(balls, order, mid, end, nodes);
        nodes[my_idx].kind = NodeKind::Inner { left, right };
    }
    my_idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand::Rng;

    #[test]
    fn matches_brute_force_on_random_sets() {
        let key = StreamKey::new(99, "bvh");
        for case in 0..200u64 {
            let mut rng = key.stream(case);
            let n = 1 + (rng.gen::<u64>() % 60) as usize;
            let balls: Vec<Ball> = (0..n)
                .map(|_| Ball {
                    center: [
                        20.0 * rng.gen::<f64>() - 10.0,
                        20.0 * rng.gen::<f64>() - 10.0,
                        20.0 * rng.gen::<f64>() - 10.0,
                    ],
                    radius: 0.05 + rng.gen::<f64>(),
                })
                .collect();
            let bvh = BallBvh::build(balls.clone());
            for _ in 0..20 {
                let x = [
                    24.0 * rng.gen::<f64>() - 12.0,
                    24.0 * rng.gen::<f64>() - 12.0,
                    24.0 * rng.gen::<f64>() - 12.0,
                ];
                let brute = balls
                    .iter()
                    .map(|b| dist(x, b.center) - b.radius)
                    .fold(f64::INFINITY, f64::min);
                let (d, idx) = bvh.nearest(x).unwrap();
                assert_eq!(d, brute, "exact match required");
                let d_at_idx = dist(x, balls[idx].center) - balls[idx].radius;
                assert_eq!(d, d_at_idx);
            }
        }
    }

    #[test]
    fn empty_union() {
        let bvh = BallBvh::build(vec![]);
        assert!(bvh.nearest([0.0, 0.0, 0.0]).is_none());
    }
}
