//! Poisson extensions of zonal boundary data on the unit ball.
//!
//! Shell-ball boundary data here always has the form `f(xi) = v(|lambda +
//! R0 xi|)`, which depends on `xi` only through the angle against the shell
//! direction. The harmonic extension therefore reduces to a cosine series in
//! the plane and a Legendre series in space; both evaluate stably all the
//! way to the boundary, where a raw Poisson-kernel quadrature would blow up.

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Legendre polynomials `P_0..P_lmax` at `t` by upward recurrence.
fn legendre_all(lmax: usize, t: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if lmax == 0 {
        return;
    }
    out.push(t);
    for l in 1..lmax {
        let lf = l as f64;
        let next = ((2.0 * lf + 1.0) * t * out[l] - lf * out[l - 1]) / (lf + 1.0);
        out.push(next);
    }
}

/// A harmonic function on the unit ball with zonal boundary data, stored as
/// series coefficients against `r^k cos(k theta)` (plane) or
/// `r^l P_l(cos gamma)` (space).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ZonalHarmonic {
    dim: usize,
    coeffs: Vec<f64>,
}

impl ZonalHarmonic {
    /// Fit planar data `f(cos theta)` sampled at `n` equal angles.
    pub fn fit_d2<F: Fn(f64) -> f64>(f: F, n: usize) -> Self {
        let vals: Vec<f64> = (0..n)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                f(th.cos())
            })
            .collect();
        let kmax = n / 2;
        let mut coeffs = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let mut acc = 0.0;
            for (j, v) in vals.iter().enumerate() {
                let th = 2.0 * std::f64::consts::PI * (j as f64) * (k as f64) / n as f64;
                acc += v * th.cos();
            }
            let scale = if k == 0 { 1.0 } else { 2.0 };
            coeffs.push(scale * acc / n as f64);
        }
        Self { dim: 2, coeffs }.truncated()
    }

    /// Fit spatial data `f(cos gamma)` with an `n`-point Gauss-Legendre rule.
    pub fn fit_d3<F: Fn(f64) -> f64>(f: F, n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        let vals: Vec<f64> = nodes.iter().map(|&t| f(t)).collect();
        let lmax = n - 1;
        let mut pl = Vec::new();
        let mut coeffs = vec![0.0; lmax + 1];
        for (i, &t) in nodes.iter().enumerate() {
            legendre_all(lmax, t, &mut pl);
            for (l, c) in coeffs.iter_mut().enumerate() {
                *c += weights[i] * vals[i] * pl[l] * (2.0 * l as f64 + 1.0) / 2.0;
            }
        }
        Self { dim: 3, coeffs }.truncated()
    }

    /// Drop the numerically dead tail of the series.
    fn truncated(mut self) -> Self {
        let scale = self
            .coeffs
            .iter()
            .fold(0.0f64, |a, &c| a.max(c.abs()))
            .max(1e-300);
        let keep = self
            .coeffs
            .iter()
            .rposition(|&c| c.abs() > 1e-15 * scale)
            .map_or(1, |i| i + 1);
        self.coeffs.truncate(keep.max(1));
        self
    }

    /// Value at radius `r` in [0, 1] and angle `gamma` with `t = cos gamma`.
    pub fn eval(&self, r: f64, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        if self.dim == 2 {
            // Clenshaw against Chebyshev T_k(t) = cos(k theta).
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            let mut rk = 1.0;
            // accumulate a_k r^k T_k(t); iterate downward for stability
            let n = self.coeffs.len();
            let mut scaled = Vec::with_capacity(n);
            for c in &self.coeffs {
                scaled.push(c * rk);
                rk *= r;
            }
            for k in (1..n).rev() {
                let b0 = 2.0 * t * b1 - b2 + scaled[k];
                b2 = b1;
                b1 = b0;
            }
            scaled[0] + t * b1 - b2
        } else {
            let mut acc = 0.0;
            let (mut p0, mut p1) = (1.0f64, t);
            let mut rl = 1.0;
            for (l, &c) in self.coeffs.iter().enumerate() {
                let pl = if l == 0 {
                    1.0
                } else if l == 1 {
                    t
                } else {
                    let lf = (l - 1) as f64;
                    let p2 = ((2.0 * lf + 1.0) * t * p1 - lf * p0) / (lf + 1.0);
                    p0 = p1;
                    p1 = p2;
                    p2
                };
                acc += c * rl * pl;
                rl *= r;
            }
            acc
        }
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
}
