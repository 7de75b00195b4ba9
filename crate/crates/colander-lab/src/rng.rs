//! Deterministic, counter-derived random streams.
//!
//! Every Monte Carlo walk draws from its own ChaCha8 stream keyed by
//! `(master seed, stream label, walk index)`. Aggregation over walks then
//! commutes: results are bit-identical for any thread count or schedule.
//!
//! Stream labels are plain strings hashed with FNV-1a; the labels in use are
//! documented next to each caller.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash of a label string.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 step, used to expand key material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A keyed family of independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    master: u64,
    label: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, label: &str) -> Self {
        Self {
            master: master_seed,
            label: label_hash(label),
        }
    }

    /// Derive a sub-key, e.g. one per layer or per probe.
    pub fn child(&self, index: u64) -> Self {
        let mut s = self.master ^ self.label.rotate_left(17);
        let a = splitmix64(&mut s);
        let mut t = a ^ index;
        let b = splitmix64(&mut t);
        Self {
            master: b,
            label: self.label.wrapping_add(index).rotate_left(23),
        }
    }

    /// Collapse to a plain seed for APIs that take one.
    pub fn to_seed(&self) -> u64 {
        let mut s = self.master ^ self.label.rotate_left(41);
        splitmix64(&mut s)
    }

    /// The independent stream for one walk (or one sample draw).
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut s = self.master;
        let mut seed = [0u8; 32];
        let words = [
            splitmix64(&mut s) ^ self.label,
            splitmix64(&mut s) ^ index,
            splitmix64(&mut s) ^ index.rotate_left(32),
            splitmix64(&mut s) ^ self.label.rotate_left(32),
        ];
        for (i, w) in words.iter().enumerate() {
            seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Uniform point on the unit circle.
pub fn unit_circle(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let theta = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    [theta.cos(), theta.sin(), 0.0]
}

/// Uniform point on the unit sphere in three dimensions.
///
/// Cylinder-projection method: z uniform on [-1,1], azimuth uniform.
pub fn unit_sphere(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z = 2.0 * rng.gen::<f64>() - 1.0;
    let theta = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * theta.cos(), r * theta.sin(), z]
}

/// Uniform direction for dimension 2 or 3.
pub fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match dim {
        2 => unit_circle(rng),
        _ => unit_sphere(rng),
    }
}

/// Uniform point in the ball of radius `r` around `center` (dim 2 or 3).
pub fn ball_point(dim: usize, center: [f64; 3], r: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let dir = unit_direction(dim, rng);
    let u: f64 = rng.gen::<f64>();
    let radial = r * u.powf(1.0 / dim as f64);
    [
        center[0] + radial * dir[0],
        center[1] + radial * dir[1],
        center[2] + radial * dir[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_independent() {
        let key = StreamKey::new(42, "wos");
        let a: Vec<u64> = {
            let mut r = key.stream(7);
            (0..8).map(|_| r.gen()).collect()
        };
        let b: Vec<u64> = {
            let mut r = key.stream(7);
            (0..8).map(|_| r.gen()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<u64> = {
            let mut r = key.stream(8);
            (0..8).map(|_| r.gen()).collect()
        };
        assert_ne!(a, c);
        let d: Vec<u64> = {
            let mut r = StreamKey::new(42, "grid").stream(7);
            (0..8).map(|_| r.gen()).collect()
        };
        assert_ne!(a, d);
    }

    /// Chi-square uniformity over octants (3d) and quadrants (2d).
    #[test]
    fn sphere_sampling_uniform_over_octants() {
        let key = StreamKey::new(1234, "uniformity");
        let n = 1_000_000usize;

        let mut counts3 = [0u64; 8];
        let mut counts2 = [0u64; 4];
        let mut rng = key.stream(0);
        for _ in 0..n {
            let p = unit_sphere(&mut rng);
            let idx = (usize::from(p[0] > 0.0) << 2)
                | (usize::from(p[1] > 0.0) << 1)
                | usize::from(p[2] > 0.0);
            counts3[idx] += 1;
            let q = unit_circle(&mut rng);
            let idx2 = (usize::from(q[0] > 0.0) << 1) | usize::from(q[1] > 0.0);
            counts2[idx2] += 1;
        }

        let expected3 = n as f64 / 8.0;
        let chi3: f64 = counts3
            .iter()
            .map(|&c| {
                let d = c as f64 - expected3;
                d * d / expected3
            })
            .sum();
        // chi-square critical value, 7 dof, p = 0.01
        assert!(chi3 < 18.475, "octant chi-square too large: {chi3}");

        let expected2 = n as f64 / 4.0;
        let chi2: f64 = counts2
            .iter()
            .map(|&c| {
                let d = c as f64 - expected2;
                d * d / expected2
            })
            .sum();
        // chi-square critical value, 3 dof, p = 0.01
        assert!(chi2 < 11.345, "quadrant chi-square too large: {chi2}");
    }

    #[test]
    fn sphere_points_have_unit_norm() {
        let key = StreamKey::new(5, "norm");
        let mut rng = key.stream(0);
        for _ in 0..1000 {
            let p = unit_sphere(&mut rng);
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
