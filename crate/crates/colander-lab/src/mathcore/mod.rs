//! Kernels, admissible profiles, the decay envelope, and scalar invariants.
//!
//! The capacity kernel is `ker_d(t) = log t` in the plane and
//! `ker_d(t) = -t^{-(d-2)}` in higher dimension. A profile bundles a
//! dimension with a size function `R` (non-decreasing, concave, sublinear,
//! slope below one) and a density function `eps` (non-increasing, valued in
//! (0,1)). The envelope
//!
//! ```text
//! phi(t) = 1 / ( R(t) * sqrt(-ker_d(eps(t))) )
//! ```
//!
//! controls both the decay of harmonic measure of colander domains and the
//! minimal growth of subharmonic functions with recurrent zero set; its
//! integral is the exponent in every bound produced by this crate.

mod funcspec;
mod quad;

pub use funcspec::FuncSpec;
pub use quad::{integrate, CumulativeIntegral};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ambient dimension, at least two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Dim(u32);

impl Dim {
    pub fn new(d: u32) -> Result<Self> {
        if d < 2 {
            return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
        }
        Ok(Dim(d))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn usize(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u32> for Dim {
    type Error = Error;
    fn try_from(d: u32) -> Result<Self> {
        Dim::new(d)
    }
}

impl From<Dim> for u32 {
    fn from(d: Dim) -> u32 {
        d.0
    }
}

/// The capacity kernel: `log t` for d = 2, `-t^{-(d-2)}` for d >= 3.
///
/// Strictly increasing in `t` for every dimension.
pub fn kernel_eval(d: Dim, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("kernel argument must be > 0, got {t}")));
    }
    Ok(if d.get() == 2 {
        t.ln()
    } else {
        -t.powi(-(d.get() as i32 - 2))
    })
}

/// `-ker_d(t)`, positive for `t` in (0,1).
pub fn neg_kernel(d: Dim, t: f64) -> Result<f64> {
    Ok(-kernel_eval(d, t)?)
}

/// `-ker_d(eps(t))` evaluated through the log of the density, so that
/// fast-decaying densities do not underflow: `-log eps` in the plane,
/// `exp((d-2) * (-log eps))` otherwise (may overflow to infinity, which the
/// profile validation rejects).
fn neg_kernel_eps(d: Dim, eps: &FuncSpec, t: f64) -> f64 {
    let nl = eps.neg_ln(t);
    if d.get() == 2 {
        nl
    } else {
        ((d.get() as f64 - 2.0) * nl).exp()
    }
}

/// Inverse kernel: the radius whose Robin constant equals `v`.
pub fn kernel_inv(d: Dim, v: f64) -> f64 {
    if d.get() == 2 {
        v.exp()
    } else {
        (-1.0 / v).powf(1.0 / (d.get() as f64 - 2.0))
    }
}

/// Validation thresholds. Grid sizes and tolerances are fixed so that two
/// runs of the same profile always agree.
const GRID_SAMPLES: usize = 2048;
const VALIDATION_NMAX: usize = 1024;
const CONCAVITY_TOL: f64 = 1e-9;
const SUBLINEAR_THRESHOLD: f64 = 0.5 + 1e-3;
const DINVPHI_BOUND: f64 = 1e3;

/// Derived facts recorded while validating a profile.
#[derive(Debug, Clone)]
pub struct ProfileReport {
    /// 1 minus the maximal sampled forward slope of R.
    pub c_r: f64,
    /// Maximal sampled forward slope of R.
    pub sup_r_slope: f64,
    /// Maximal sampled forward slope of 1/phi.
    pub sup_d_inv_phi: f64,
    /// Largest validated argument (10 times the last validation rho).
    pub t_max: f64,
    /// R(0) is below one, so the first recursion step lands below one.
    pub r0_below_one: bool,
}

/// A validated (eps, R) profile in dimension d.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ProfileJson", into = "ProfileJson")]
pub struct Profile {
    d: Dim,
    r: FuncSpec,
    eps: FuncSpec,
    report: ProfileReport,
}

/// Wire form of a profile: `{"d": 2, "R": {...}, "eps": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileJson {
    d: u32,
    #[serde(rename = "R")]
    r: FuncSpec,
    eps: FuncSpec,
}

impl TryFrom<ProfileJson> for Profile {
    type Error = Error;
    fn try_from(j: ProfileJson) -> Result<Self> {
        Profile::new(Dim::new(j.d)?, j.r, j.eps)
    }
}

impl From<Profile> for ProfileJson {
    fn from(p: Profile) -> ProfileJson {
        ProfileJson {
            d: p.d.get(),
            r: p.r,
            eps: p.eps,
        }
    }
}

impl Profile {
    /// Validate the pair on a sample grid and build the profile.
    ///
    /// Checks: R non-decreasing, concave (uniform-grid second differences),
    /// sublinear, slope below one; eps non-increasing with values in (0,1);
    /// 1/(t phi) below one on the tail of the grid; the slope of 1/phi
    /// bounded.
    pub fn new(d: Dim, r: FuncSpec, eps: FuncSpec) -> Result<Self> {
        r.validate_shape()?;
        eps.validate_shape()?;

        // Run the recursion far enough to know the scale of interest.
        let mut rho = 0.0f64;
        for _ in 0..VALIDATION_NMAX {
            let step = r.eval(rho);
            if !(step.is_finite() && step > 0.0) {
                return Err(Error::Profile(format!("R({rho}) = {step} is not positive")));
            }
            rho += step;
            if rho > 1e7 {
                break;
            }
        }
        let t_max = 10.0 * rho;

        // Uniform grid: concavity by second differences.
        let h = t_max / (GRID_SAMPLES - 1) as f64;
        let uniform: Vec<f64> = (0..GRID_SAMPLES)
            .map(|i| r.eval(h * i as f64))
            .collect();
        for w in uniform.windows(3) {
            let second = w[2] - 2.0 * w[1] + w[0];
            if second > CONCAVITY_TOL * (1.0 + w[1].abs()) {
                return Err(Error::Profile(format!(
                    "R is not concave: second difference {second} at scale {h}"
                )));
            }
        }

        // Log-spaced grid: slopes, monotonicity, envelope conditions.
        let mut ts = Vec::with_capacity(GRID_SAMPLES + 1);
        ts.push(0.0);
        let lo = (t_max * 1e-7).max(1e-9);
        let ratio = (t_max / lo).powf(1.0 / (GRID_SAMPLES - 1) as f64);
        let mut t = lo;
        for _ in 0..GRID_SAMPLES {
            ts.push(t);
            t *= ratio;
        }

        let mut sup_r_slope = f64::NEG_INFINITY;
        let mut sup_d_inv_phi = f64::NEG_INFINITY;
        let mut prev_r = r.eval(0.0);
        let mut prev_eps = eps.eval(0.0);
        let mut prev_inv_phi = prev_r * neg_kernel_eps(d, &eps, 0.0).sqrt();
        if !(prev_eps > 0.0 && prev_eps < 1.0) {
            return Err(Error::Profile(format!("eps(0) = {prev_eps} outside (0,1)")));
        }
        for w in ts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let (rv, ev) = (r.eval(t1), eps.eval(t1));
            if !(rv.is_finite() && rv > 0.0) {
                return Err(Error::Profile(format!("R({t1}) = {rv} not positive")));
            }
            if !(ev > 0.0 && ev < 1.0) {
                return Err(Error::Profile(format!("eps({t1}) = {ev} outside (0,1)")));
            }
            if rv < prev_r - 1e-12 * (1.0 + prev_r.abs()) {
                return Err(Error::Profile(format!("R decreases near t = {t1}")));
            }
            if ev > prev_eps + 1e-12 * (1.0 + prev_eps.abs()) {
                return Err(Error::Profile(format!("eps increases near t = {t1}")));
            }
            let dt = t1 - t0;
            sup_r_slope = sup_r_slope.max((rv - prev_r) / dt);
            let q = neg_kernel_eps(d, &eps, t1);
            if !(q.is_finite() && q > 0.0) {
                return Err(Error::Profile(format!(
                    "-ker_d(eps({t1})) = {q} not positive and finite"
                )));
            }
            let inv_phi = rv * q.sqrt();
            sup_d_inv_phi = sup_d_inv_phi.max((inv_phi - prev_inv_phi) / dt);
            prev_r = rv;
            prev_eps = ev;
            prev_inv_phi = inv_phi;
        }

        if sup_r_slope >= 1.0 {
            return Err(Error::Profile(format!(
                "sup R' = {sup_r_slope} must be below one"
            )));
        }
        let r_tail = r.eval(t_max);
        if r_tail / t_max > SUBLINEAR_THRESHOLD {
            return Err(Error::Profile(format!(
                "R is not sublinear: R({t_max})/{t_max} = {}",
                r_tail / t_max
            )));
        }
        if sup_d_inv_phi > DINVPHI_BOUND {
            return Err(Error::Profile(format!(
                "d/dt (1/phi) = {sup_d_inv_phi} exceeds bound {DINVPHI_BOUND}"
            )));
        }

        // Tail of the grid: 1/(t phi) must sit below one. Densities like
        // exp(-(1+t)^2) sit exactly on the boundary (the ratio tends to one
        // from above like 1 + 1/t), so a small slack keeps them admissible
        // while profiles with a genuine limsup above one are still rejected.
        for &tv in ts.iter().filter(|&&tv| tv >= t_max / 10.0) {
            let q = neg_kernel_eps(d, &eps, tv).sqrt();
            let e = r.eval(tv) * q / tv;
            if e >= 1.0 + 1e-2 {
                return Err(Error::Profile(format!(
                    "1/(t phi) = {e} at t = {tv}; decay hypothesis fails"
                )));
            }
        }

        let report = ProfileReport {
            c_r: 1.0 - sup_r_slope.max(0.0),
            sup_r_slope,
            sup_d_inv_phi,
            t_max,
            r0_below_one: r.eval(0.0) < 1.0,
        };
        Ok(Profile { d, r, eps, report })
    }

    pub fn dim(&self) -> Dim {
        self.d
    }

    pub fn r(&self, t: f64) -> f64 {
        self.r.eval(t)
    }

    pub fn eps(&self, t: f64) -> f64 {
        self.eps.eval(t)
    }

    pub fn r_spec(&self) -> &FuncSpec {
        &self.r
    }

    pub fn eps_spec(&self) -> &FuncSpec {
        &self.eps
    }

    pub fn report(&self) -> &ProfileReport {
        &self.report
    }
}

/// The decay envelope `phi(t) = 1/(R(t) sqrt(-ker_d(eps(t))))`.
pub fn phi_eval(p: &Profile, t: f64) -> Result<f64> {
    let e = p.eps(t);
    if e >= 1.0 {
        return Err(Error::Domain(format!("eps({t}) = {e} >= 1")));
    }
    let q = neg_kernel_eps(p.dim(), p.eps_spec(), t);
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::Domain(format!("-ker_d(eps({t})) = {q} not usable")));
    }
    Ok(1.0 / (p.r(t) * q.sqrt()))
}

/// Adaptive quadrature over a possibly enormous range: direct up to a
/// moderate width, then geometrically growing segments so slowly decaying
/// integrands keep their resolution near the left end.
fn integrate_long<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    const DIRECT_WIDTH: f64 = 128.0;
    if b - a <= DIRECT_WIDTH {
        return integrate(f, a, b, rel_tol);
    }
    let mut acc = integrate(&f, a, a + DIRECT_WIDTH, rel_tol)?;
    let mut lo = a + DIRECT_WIDTH;
    let mut width = DIRECT_WIDTH;
    while lo < b {
        let hi = (lo + width).min(b);
        acc += integrate(&f, lo, hi, rel_tol)?;
        lo = hi;
        width *= 2.0;
    }
    Ok(acc)
}

/// `int_1^rho phi(t) dt` by adaptive quadrature (relative 1e-8).
pub fn envelope_integral(p: &Profile, rho: f64) -> Result<f64> {
    if rho < 1.0 {
        return Err(Error::Domain(format!("integral endpoint {rho} below 1")));
    }
    integrate_long(|t| phi_eval(p, t).unwrap_or(f64::NAN), 1.0, rho, 1e-8)
}

/// `Phi(x) = int_0^x dt/R(t)`, monotone increasing in x.
pub fn big_phi(p: &Profile, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain(format!("Phi argument {x} below 0")));
    }
    integrate_long(|t| 1.0 / p.r(t), 0.0, x, 1e-8)
}

/// The step sequence `rho_0 = 0, rho_{n+1} = rho_n + R(rho_n)` together with
/// the slope constant `c_R = 1 - sup R'`.
#[derive(Debug, Clone)]
pub struct RhoSequence {
    pub rho: Vec<f64>,
    pub c_r: f64,
}

impl RhoSequence {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
}

/// Run the recursion for `n_max` steps.
pub fn rho_sequence(p: &Profile, n_max: usize) -> Result<RhoSequence> {
    if n_max < 1 {
        return Err(Error::Domain("n_max must be >= 1".into()));
    }
    let mut rho = Vec::with_capacity(n_max + 1);
    rho.push(0.0);
    for n in 0..n_max {
        let cur = rho[n];
        let step = p.r(cur);
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Profile(format!("R({cur}) = {step} not positive")));
        }
        rho.push(cur + step);
    }
    Ok(RhoSequence {
        rho,
        c_r: p.report().c_r,
    })
}

/// Report on the oscillation bound `R(rho_n)/R(rho_k) <= 1/(1 - e(rho_n))`
/// for `k` within `i(n)` steps below `n`, where
/// `i(n) = floor(sqrt(-ker_d(eps(rho_n))))` and `e(t) = 1/(t phi(t))`.
#[derive(Debug, Clone)]
pub struct OscillationReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub i_n: usize,
    pub e_n: f64,
}

pub fn oscillation_report(seq: &RhoSequence, p: &Profile, n: usize) -> Result<OscillationReport> {
    if n >= seq.rho.len() {
        return Err(Error::Domain(format!(
            "n = {n} beyond stored sequence of length {}",
            seq.rho.len()
        )));
    }
    let rho_n = seq.rho[n];
    if rho_n <= 0.0 {
        return Err(Error::Precondition("rho_n must be positive".into()));
    }
    let i_n = neg_kernel_eps(p.dim(), p.eps_spec(), rho_n).sqrt().floor() as usize;
    let e_n = 1.0 / (rho_n * phi_eval(p, rho_n)?);
    if e_n >= 1.0 {
        return Err(Error::Precondition(format!(
            "e(rho_n) = {e_n} >= 1; oscillation hypothesis fails at n = {n}"
        )));
    }
    if n < i_n {
        return Err(Error::Precondition(format!(
            "n = {n} below window i(n) = {i_n}"
        )));
    }
    let r_n = p.r(rho_n);
    let mut lhs = 0.0f64;
    for k in (n - i_n)..=n {
        lhs = lhs.max(r_n / p.r(seq.rho[k]));
    }
    let rhs = 1.0 / (1.0 - e_n);
    Ok(OscillationReport {
        lhs,
        rhs,
        holds: lhs <= rhs,
        i_n,
        e_n,
    })
}

/// Partial sums of the Wiener thinness series over dyadic-type layers.
#[derive(Debug, Clone)]
pub struct WienerReport {
    pub partial_sums: Vec<f64>,
    pub diverging_hint: bool,
}

/// `layer_caps[n]` is the capacity of the layer between `gamma^n` and
/// `gamma^{n+1}`. The series is `log(gamma) sum n / log(1/cap_n)` in the
/// plane and `sum gamma^{n(d-2)} cap_n^{d-2}` otherwise.
pub fn wiener_series(d: Dim, gamma: f64, layer_caps: &[f64]) -> Result<WienerReport> {
    if gamma <= 1.0 {
        return Err(Error::Domain(format!("gamma must be > 1, got {gamma}")));
    }
    let mut terms = Vec::with_capacity(layer_caps.len());
    for (idx, &cap) in layer_caps.iter().enumerate() {
        if !(cap > 0.0) {
            return Err(Error::Domain(format!("layer capacity {cap} must be > 0")));
        }
        let n = (idx + 1) as f64;
        let term = if d.get() == 2 {
            gamma.ln() * n / (1.0 / cap).ln()
        } else {
            let p = d.get() as f64 - 2.0;
            (gamma.powf(p)).powf(n) * cap.powf(p)
        };
        terms.push(term);
    }
    let mut partial_sums = Vec::with_capacity(terms.len());
    let mut acc = 0.0;
    for t in &terms {
        acc += t;
        partial_sums.push(acc);
    }
    // Heuristic: a series whose term sizes stop shrinking is not converging.
    let q = terms.len() / 4;
    let tail = &terms[terms.len().saturating_sub(q.max(2)).min(terms.len())..];
    let diverging_hint = tail.len() >= 2 && tail.windows(2).all(|w| w[1] >= w[0] - 1e-15);
    Ok(WienerReport {
        partial_sums,
        diverging_hint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn const_profile(d: u32, r: f64, eps: f64) -> Profile {
        Profile::new(
            Dim::new(d).unwrap(),
            FuncSpec::constant(r),
            FuncSpec::constant(eps),
        )
        .unwrap()
    }

    fn linear_r(a: f64, s: f64) -> FuncSpec {
        // a * (t + s)
        FuncSpec::Gauge {
            amplitude: a,
            alpha0: 1.0,
            alphas: vec![],
            shift: s,
        }
    }

    #[test]
    fn kernel_values() {
        let d2 = Dim::new(2).unwrap();
        let d3 = Dim::new(3).unwrap();
        let d4 = Dim::new(4).unwrap();
        assert_eq!(kernel_eval(d2, 1.0).unwrap(), 0.0);
        assert_eq!(kernel_eval(d3, 1.0).unwrap(), -1.0);
        assert_eq!(kernel_eval(d4, 2.0).unwrap(), -0.25);
        assert!(kernel_eval(d2, 0.0).is_err());
        assert!(kernel_eval(d3, -1.0).is_err());
    }

    #[test]
    fn kernel_monotone_in_t() {
        for d in 2..=6 {
            let dim = Dim::new(d).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 1..200 {
                let t = 0.01 * i as f64;
                let v = kernel_eval(dim, t).unwrap();
                assert!(v > prev, "kernel not increasing at d={d}, t={t}");
                prev = v;
            }
        }
    }

    #[test]
    fn kernel_inverse_round_trip() {
        for d in [2u32, 3, 5] {
            let dim = Dim::new(d).unwrap();
            for &t in &[0.25, 0.5, 1.0, 3.0] {
                let v = kernel_eval(dim, t).unwrap();
                assert!((kernel_inv(dim, v) - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phi_closed_forms() {
        let p = const_profile(2, 1.0, (-1.0f64).exp());
        assert!((phi_eval(&p, 3.0).unwrap() - 1.0).abs() < 1e-12);
        let p = const_profile(2, 2.0, (-4.0f64).exp());
        assert!((phi_eval(&p, 0.0).unwrap() - 0.25).abs() < 1e-12);
        let p = const_profile(3, 1.0, 0.25);
        assert!((phi_eval(&p, 10.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn envelope_integral_constant_phi() {
        let p = const_profile(2, 1.0, (-1.0f64).exp());
        let v = envelope_integral(&p, 5.0).unwrap();
        assert!((v - 4.0).abs() < 1e-9);
        assert!(envelope_integral(&p, 0.5).is_err());
    }

    #[test]
    fn envelope_integral_linear_r() {
        // R = (1+t)/2, eps = e^{-1}, d = 2: phi = 2/(1+t),
        // int_1^3 = 2 log 2.
        let p = Profile::new(
            Dim::new(2).unwrap(),
            linear_r(0.5, 1.0),
            FuncSpec::constant((-1.0f64).exp()),
        )
        .unwrap();
        let v = envelope_integral(&p, 3.0).unwrap();
        assert!((v - 2.0 * 2.0f64.ln()).abs() < 1e-8, "got {v}");
    }

    #[test]
    fn envelope_integral_decaying_eps() {
        // eps = exp(-(1+t)^2), R = 1, d = 2: phi = 1/(1+t),
        // int_1^4 = log(5/2). Cross-checked against a fixed-step Simpson
        // refinement independent of the adaptive routine.
        let p = Profile::new(
            Dim::new(2).unwrap(),
            FuncSpec::constant(1.0),
            FuncSpec::ExpNegGauge {
                amplitude: 1.0,
                alpha0: 2.0,
                alphas: vec![],
                shift: 1.0,
            },
        )
        .unwrap();
        let v = envelope_integral(&p, 4.0).unwrap();
        assert!((v - (2.5f64).ln()).abs() < 1e-8, "got {v}");

        // refinement oracle
        let f = |t: f64| phi_eval(&p, t).unwrap();
        let mut n = 64;
        let mut prev = f64::NAN;
        loop {
            let h = 3.0 / n as f64;
            let mut s = f(1.0) + f(4.0);
            for i in 1..n {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(1.0 + h * i as f64);
            }
            let val = s * h / 3.0;
            if (val - prev).abs() < 1e-10 {
                assert!((v - val).abs() < 1e-8);
                break;
            }
            prev = val;
            n *= 2;
            assert!(n <= 1 << 22);
        }
    }

    #[test]
    fn envelope_integral_additive() {
        let p = const_profile(2, 2.0, 0.3);
        let a = envelope_integral(&p, 4.0).unwrap();
        let b = integrate(|t| phi_eval(&p, t).unwrap(), 4.0, 9.0, 1e-10).unwrap();
        let c = envelope_integral(&p, 9.0).unwrap();
        assert!(((a + b) - c).abs() <= 1e-10 * c.abs() + 1e-14);
    }

    #[test]
    fn rho_sequence_unit_steps() {
        let p = const_profile(2, 1.0, 0.5);
        let s = rho_sequence(&p, 4).unwrap();
        assert_eq!(s.rho, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!((s.c_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rho_sequence_hand_recursion() {
        // R(t) = (t+2)/2: rho = 0, 1, 2.5, 4.75
        let p = Profile::new(
            Dim::new(2).unwrap(),
            linear_r(0.5, 2.0),
            FuncSpec::constant(0.5),
        )
        .unwrap();
        let s = rho_sequence(&p, 3).unwrap();
        let expect = [0.0, 1.0, 2.5, 4.75];
        for (a, b) in s.rho.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((s.c_r - 0.5).abs() < 1e-6);
    }

    #[test]
    fn big_phi_values() {
        let p = const_profile(2, 1.0, 0.5);
        assert!((big_phi(&p, 7.0).unwrap() - 7.0).abs() < 1e-9);
        assert_eq!(big_phi(&p, 0.0).unwrap(), 0.0);
        // R = (1+t)/2: Phi(3) = 2 log 4
        let p = Profile::new(
            Dim::new(2).unwrap(),
            linear_r(0.5, 1.0),
            FuncSpec::constant(0.5),
        )
        .unwrap();
        let v = big_phi(&p, 3.0).unwrap();
        assert!((v - 2.0 * 4.0f64.ln()).abs() < 1e-8, "got {v}");
    }

    #[test]
    fn phi_sandwich_along_recursion() {
        // c_R * n <= Phi(rho_n) <= n for every stored n.
        for p in [
            const_profile(2, 1.0, 0.1),
            Profile::new(
                Dim::new(2).unwrap(),
                linear_r(0.01, 99.0),
                FuncSpec::constant((-4.0f64).exp()),
            )
            .unwrap(),
        ] {
            let n = 200;
            let s = rho_sequence(&p, n).unwrap();
            let mut acc = 0.0;
            for k in 1..=n {
                acc += integrate(|t| 1.0 / p.r(t), s.rho[k - 1], s.rho[k], 1e-10).unwrap();
                assert!(
                    s.c_r * k as f64 <= acc + 1e-9 && acc <= k as f64 + 1e-9,
                    "sandwich fails at k = {k}: {acc}"
                );
            }
        }
    }

    #[test]
    fn oscillation_constant_r() {
        let p = const_profile(2, 1.0, (-9.0f64).exp());
        let s = rho_sequence(&p, 30).unwrap();
        let rep = oscillation_report(&s, &p, 20).unwrap();
        assert_eq!(rep.i_n, 3);
        assert!((rep.lhs - 1.0).abs() < 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn oscillation_growing_r() {
        // Slowly growing R keeps e(rho_n) well below one.
        let p = Profile::new(
            Dim::new(2).unwrap(),
            linear_r(0.01, 99.0),
            FuncSpec::constant((-9.0f64).exp()),
        )
        .unwrap();
        let s = rho_sequence(&p, 40).unwrap();
        let rep = oscillation_report(&s, &p, 20).unwrap();
        assert!(rep.e_n < 1.0);
        assert!(rep.holds, "lhs {} rhs {}", rep.lhs, rep.rhs);
    }

    #[test]
    fn oscillation_window_precondition() {
        let p = const_profile(2, 1.0, (-9.0f64).exp());
        let s = rho_sequence(&p, 10).unwrap();
        // i(n) = 3, so n = 2 is inside the window and must error.
        assert!(matches!(
            oscillation_report(&s, &p, 2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn oscillation_hypothesis_failure() {
        // R(t) = (1+t)/2 with eps = e^-9 gives e(t) -> 1.5 > 1: the profile
        // itself is rejected by the decay hypothesis.
        let r = Profile::new(
            Dim::new(2).unwrap(),
            linear_r(0.5, 1.0),
            FuncSpec::constant((-9.0f64).exp()),
        );
        assert!(r.is_err());
    }

    #[test]
    fn wiener_convergent_and_divergent() {
        let d2 = Dim::new(2).unwrap();
        // log(1/cap_n) = n^3: terms ~ n^-2, convergent. (n stays small so
        // e^{-n^3} does not underflow.)
        let caps: Vec<f64> = (1..=8).map(|n| (-((n * n * n) as f64)).exp()).collect();
        let rep = wiener_series(d2, 2.0, &caps).unwrap();
        assert!(!rep.diverging_hint);
        let expect: f64 = (1..=8).map(|n| 2.0f64.ln() / (n * n) as f64).sum();
        assert!((rep.partial_sums.last().unwrap() - expect).abs() < 1e-10);

        // constant caps 1/2: terms grow linearly.
        let caps = vec![0.5; 64];
        let rep = wiener_series(d2, 2.0, &caps).unwrap();
        assert!(rep.diverging_hint);

        let rep = wiener_series(d2, 2.0, &[]).unwrap();
        assert!(rep.partial_sums.is_empty());
        assert!(!rep.diverging_hint);

        assert!(wiener_series(d2, 2.0, &[0.0]).is_err());
        assert!(wiener_series(d2, 1.0, &[0.5]).is_err());
    }

    #[test]
    fn profile_rejections() {
        // eps outside (0,1)
        assert!(Profile::new(
            Dim::new(2).unwrap(),
            FuncSpec::constant(1.0),
            FuncSpec::constant(1.5),
        )
        .is_err());
        // slope >= 1
        assert!(Profile::new(
            Dim::new(2).unwrap(),
            linear_r(1.0, 1.0),
            FuncSpec::constant(0.5),
        )
        .is_err());
        // unbounded d/dt(1/phi): eps = exp(-(1+t)^4) makes 1/phi ~ (1+t)^2.
        assert!(Profile::new(
            Dim::new(2).unwrap(),
            FuncSpec::constant(1.0),
            FuncSpec::ExpNegGauge {
                amplitude: 1.0,
                alpha0: 4.0,
                alphas: vec![],
                shift: 1.0,
            },
        )
        .is_err());
    }

    #[test]
    fn profile_json_round_trip() {
        let p = const_profile(3, 10.5, 0.005);
        let s = serde_json::to_string(&p).unwrap();
        let q: Profile = serde_json::from_str(&s).unwrap();
        assert_eq!(serde_json::to_string(&q).unwrap(), s);
        assert_eq!(q.dim().get(), 3);
        assert_eq!(q.r(3.0), 10.5);
    }

    #[test]
    fn phi_monotone_for_admissible_profiles() {
        // phi non-increasing when R non-decreasing and eps non-increasing.
        let profiles = [
            Profile::new(
                Dim::new(2).unwrap(),
                linear_r(0.01, 99.0),
                FuncSpec::constant((-9.0f64).exp()),
            )
            .unwrap(),
            Profile::new(
                Dim::new(2).unwrap(),
                FuncSpec::constant(1.0),
                FuncSpec::ExpNegGauge {
                    amplitude: 0.2,
                    alpha0: 0.5,
                    alphas: vec![],
                    shift: 9.0,
                },
            )
            .unwrap(),
        ];
        for p in &profiles {
            let mut prev = f64::INFINITY;
            for i in 0..100 {
                let t = 5.0 * i as f64;
                let v = phi_eval(p, t).unwrap();
                assert!(v <= prev + 1e-15);
                prev = v;
            }
        }
    }
}
