//! An explicit subharmonic function with recurrent zero set and controlled
//! growth.
//!
//! The function grows like `exp(C int phi)` and carries a lattice of
//! negativity wells: on concentric shells, each lattice ball swaps the
//! radial profile for its Poisson extension plus a kernel well
//! `A * ktilde(|x - lambda| / R0)`. The well amplitude `A` is capped by the
//! gluing inequality at the ball boundary (the normal derivative may only
//! jump upward); the cap is certified here by sub-mean-value checks, with an
//! independent Green-integral bound available as a secondary mode. Near the
//! origin the function is a harmonic beam bump `cosh * prod cos` maxed with
//! a kernel branch, and the two regimes are matched at a gluing radius
//! `r1` by scaling constants.
//!
//! Everything is deterministic: quadrature sizes are fixed, the lattice is
//! seed-rotated, and the envelope integral is cached once per build.

mod poisson;

pub use poisson::{gauss_legendre, ZonalHarmonic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{wos_escape, EstimateCI, WoSConfig};
use crate::mathcore::{phi_eval, CumulativeIntegral, FuncSpec, Profile};
use crate::setgen::{
    dist, make_shell_lattice, norm, Ball, BallBvh, BallUnion, Colander, ShellLattice,
};

/// How the well amplitude is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMode {
    /// Largest amplitude passing sub-mean-value probes at the gluing sphere.
    Bisection,
    /// Direct quadrature of the Green-integral lower bound.
    GreenBound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildOptions {
    pub k_max: usize,
    pub seed: u64,
    pub c_override: Option<f64>,
    pub a_mode: AmplitudeMode,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            k_max: 10,
            seed: 1,
            c_override: None,
            a_mode: AmplitudeMode::Bisection,
        }
    }
}

/// One shell of wells: geometry, amplitude, certified zero radius, and the
/// Poisson extension of the radial data on the unit ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShellData {
    pub k: usize,
    pub center_radius: f64,
    pub ball_radius: f64,
    pub eps0: f64,
    pub a_coeff: f64,
    pub zero_radius: f64,
    pub centers: Vec<[f64; 3]>,
    pub harmonic: ZonalHarmonic,
}

/// Fixed quadrature sizes for the build.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Equal-angle samples for planar boundary data.
    pub d2_samples: usize,
    /// Gauss-Legendre nodes for spatial zonal data.
    pub d3_nodes: usize,
    /// Panels in the cached envelope integral.
    pub envelope_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            d2_samples: 512,
            d3_nodes: 256,
            envelope_panels: 8192,
        }
    }
}

/// The assembled construction. Immutable after build; all evaluation methods
/// are pure.
pub struct Construction {
    profile: Profile,
    dim: usize,
    r0_spec: FuncSpec,
    pub c_growth: f64,
    pub sigma_d: f64,
    pub r_zero_start: f64,
    pub r_glue: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    shells: Vec<ShellData>,
    quad: QuadratureSpec,
    seed: u64,
    envint: CumulativeIntegral,
    f_at_one: f64,
    ball_index: BallBvh,
    ball_owner: Vec<(usize, usize)>,
}

/// Scale a size spec by 1/7 (exact within both families).
fn scale_to_r0(r: &FuncSpec) -> Result<FuncSpec> {
    match r {
        FuncSpec::Constant { value } => Ok(FuncSpec::Constant { value: value / 7.0 }),
        FuncSpec::Gauge {
            amplitude,
            alpha0,
            alphas,
            shift,
        } => Ok(FuncSpec::Gauge {
            amplitude: amplitude / 7.0,
            alpha0: *alpha0,
            alphas: alphas.clone(),
            shift: *shift,
        }),
        FuncSpec::ExpNegGauge { .. } => Err(Error::Profile(
            "size profile cannot be a decaying exponential".into(),
        )),
    }
}

/// `ktilde_d`: the kernel normalized to vanish at one.
fn ktilde(dim: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return -1e30;
    }
    if dim == 2 {
        t.ln()
    } else {
        1.0 - t.powi(-(dim as i32 - 2))
    }
}

/// d/dt ktilde at t = 1, the `max{1, d-2}` factor of the gluing condition.
fn ktilde_slope_at_one(dim: usize) -> f64 {
    1.0f64.max(dim as f64 - 2.0)
}

impl Construction {
    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shells(&self) -> &[ShellData] {
        &self.shells
    }

    pub fn r0(&self, t: f64) -> f64 {
        self.r0_spec.eval(t)
    }

    /// `eps0(t) = 7 eps(t/2)`; kept functional because the family set cannot
    /// express the rescaling in closed form.
    pub fn eps0(&self, t: f64) -> f64 {
        7.0 * self.profile.eps(t / 2.0)
    }

    /// Cached `int_1^t phi`.
    pub fn envelope(&self, t: f64) -> f64 {
        self.envint.eval(t) - self.f_at_one
    }

    /// The radial comparison function `v = exp(C int_1^t phi)`.
    pub fn v_radial(&self, t: f64) -> f64 {
        (self.c_growth * self.envelope(t)).exp()
    }

    /// The harmonic beam bump of the near-origin branch; `s(0) = 1`.
    fn s_bump(&self, x: [f64; 3]) -> f64 {
        let width = self.sigma_d * self.profile.r(0.0);
        let b1 = std::f64::consts::PI * ((self.dim - 1) as f64).sqrt() / width;
        let bj = std::f64::consts::PI / width;
        let mut s = (b1 * x[0]).cosh();
        for a in 1..self.dim {
            if x[a].abs() >= width / 2.0 {
                return 0.0;
            }
            s *= (bj * x[a]).cos();
        }
        s
    }

    /// Inner-branch value inside the well ball of shell `si` at local radius
    /// `r_loc` (units of the ball radius) and zonal cosine `t`, with the
    /// given amplitude.
    fn well_value(&self, si: usize, a_coeff: f64, r_loc: f64, t: f64) -> f64 {
        let shell = &self.shells[si];
        let w = shell.harmonic.eval(r_loc, t) + a_coeff * ktilde(self.dim, r_loc);
        self.c2 * w - self.c3
    }

    fn u_eval_inner(&self, x: [f64; 3], a_override: Option<(usize, f64)>) -> f64 {
        let r = norm(x);
        if r <= self.r_glue {
            let a1 = self.r_glue - self.sigma_d * self.r0(0.0);
            let kernel_branch = if r == 0.0 {
                -1e30
            } else {
                self.c1 * ktilde(self.dim, r / a1)
            };
            return kernel_branch.max(self.s_bump(x));
        }
        if let Some((d, idx)) = self.ball_index.nearest(x) {
            if d <= 0.0 {
                let (si, ci) = self.ball_owner[idx];
                let shell = &self.shells[si];
                let lam = shell.centers[ci];
                let rel = [x[0] - lam[0], x[1] - lam[1], x[2] - lam[2]];
                let rr = norm(rel);
                let r_loc = rr / shell.ball_radius;
                if rr == 0.0 {
                    return -1e30;
                }
                let lam_n = norm(lam);
                let t = (rel[0] * lam[0] + rel[1] * lam[1] + rel[2] * lam[2]) / (rr * lam_n);
                let a = match a_override {
                    Some((s, a)) if s == si => a,
                    _ => shell.a_coeff,
                };
                return self.well_value(si, a, r_loc, t);
            }
        }
        self.c2 * self.v_radial(r) - self.c3
    }

    /// Value of the construction at any point. Exact well centers return the
    /// finite sentinel -1e30 standing in for the kernel singularity.
    pub fn u_eval(&self, x: [f64; 3]) -> f64 {
        self.u_eval_inner(x, None)
    }

    /// Value plus a flag marking the sentinel at singular centers.
    pub fn u_eval_checked(&self, x: [f64; 3]) -> (f64, bool) {
        let v = self.u_eval(x);
        (v, v <= -1e29)
    }

    /// Spherical average of `u` over `partial B(x, r)` minus `u(x)`, scaled
    /// by the local magnitude. Nonnegative margins certify the sub-mean
    /// property at this probe.
    ///
    /// When the probe sphere sits wholly inside one well ball, the kernel
    /// term is averaged in closed form (its spherical mean is the kernel of
    /// the larger of radius and distance), leaving only the smooth harmonic
    /// part to the quadrature; a sphere passing near the well center would
    /// otherwise need unbounded resolution.
    fn margin_at(
        &self,
        x: [f64; 3],
        r: f64,
        quad_nodes: usize,
        a_override: Option<(usize, f64)>,
    ) -> f64 {
        if let Some((d, idx)) = self.ball_index.nearest(x) {
            if d <= 0.0 {
                let (si, ci) = self.ball_owner[idx];
                let shell = &self.shells[si];
                let lam = shell.centers[ci];
                let dist_c = dist(x, lam);
                if dist_c + r < shell.ball_radius * (1.0 - 1e-12) {
                    let a = match a_override {
                        Some((s, a)) if s == si => a,
                        _ => shell.a_coeff,
                    };
                    let havg = self.harmonic_sphere_average(si, lam, x, r, quad_nodes);
                    let ker_avg = ktilde(self.dim, dist_c.max(r) / shell.ball_radius);
                    let avg = self.c2 * (havg + a * ker_avg) - self.c3;
                    let u0 = self.u_eval_inner(x, a_override);
                    return (avg - u0) / u0.abs().max(avg.abs()).max(1.0);
                }
            }
        }
        let avg = if self.dim == 2 {
            let n = quad_nodes.max(16);
            let mut acc = 0.0;
            for i in 0..n {
                let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                acc += self.u_eval_inner(
                    [x[0] + r * th.cos(), x[1] + r * th.sin(), 0.0],
                    a_override,
                );
            }
            acc / n as f64
        } else {
            let n_u = ((quad_nodes as f64 / 2.0).sqrt().ceil() as usize).max(8);
            let n_psi = 2 * n_u;
            let (uu, ww) = gauss_legendre(n_u);
            let mut acc = 0.0;
            for (i, &u) in uu.iter().enumerate() {
                let s = (1.0 - u * u).max(0.0).sqrt();
                let mut ring = 0.0;
                for j in 0..n_psi {
                    let psi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n_psi as f64;
                    ring += self.u_eval_inner(
                        [
                            x[0] + r * s * psi.cos(),
                            x[1] + r * s * psi.sin(),
                            x[2] + r * u,
                        ],
                        a_override,
                    );
                }
                acc += ww[i] / 2.0 * ring / n_psi as f64;
            }
            acc
        };
        let u0 = self.u_eval_inner(x, a_override);
        (avg - u0) / u0.abs().max(avg.abs()).max(1.0)
    }

    /// Quadrature average of the well's harmonic part over a sphere fully
    /// inside the ball.
    fn harmonic_sphere_average(
        &self,
        si: usize,
        lam: [f64; 3],
        x: [f64; 3],
        r: f64,
        quad_nodes: usize,
    ) -> f64 {
        let shell = &self.shells[si];
        let lam_n = norm(lam);
        let eval = |y: [f64; 3]| -> f64 {
            let rel = [y[0] - lam[0], y[1] - lam[1], y[2] - lam[2]];
            let rr = norm(rel).max(1e-300);
            let t = (rel[0] * lam[0] + rel[1] * lam[1] + rel[2] * lam[2]) / (rr * lam_n);
            shell.harmonic.eval(rr / shell.ball_radius, t)
        };
        if self.dim == 2 {
            let n = quad_nodes.max(16);
            let mut acc = 0.0;
            for i in 0..n {
                let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                acc += eval([x[0] + r * th.cos(), x[1] + r * th.sin(), 0.0]);
            }
            acc / n as f64
        } else {
            let n_u = ((quad_nodes as f64 / 2.0).sqrt().ceil() as usize).max(8);
            let n_psi = 2 * n_u;
            let (uu, ww) = gauss_legendre(n_u);
            let mut acc = 0.0;
            for (i, &u) in uu.iter().enumerate() {
                let s = (1.0 - u * u).max(0.0).sqrt();
                let mut ring = 0.0;
                for j in 0..n_psi {
                    let psi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n_psi as f64;
                    ring += eval([
                        x[0] + r * s * psi.cos(),
                        x[1] + r * s * psi.sin(),
                        x[2] + r * u,
                    ]);
                }
                acc += ww[i] / 2.0 * ring / n_psi as f64;
            }
            acc
        }
    }

    /// Sub-mean-value margins at one point over several probe radii.
    pub fn submean_check(&self, x: [f64; 3], radii: &[f64], quad_nodes: usize) -> SubmeanReport {
        let margins: Vec<(f64, f64)> = radii
            .iter()
            .map(|&r| (r, self.margin_at(x, r, quad_nodes, None)))
            .collect();
        let worst_margin = margins
            .iter()
            .map(|&(_, m)| m)
            .fold(f64::INFINITY, f64::min);
        SubmeanReport {
            worst_margin,
            margins,
        }
    }

    /// Radial max of the inner branch over the sphere of local radius
    /// `r_loc`, sampled at Chebyshev angles (the zonal data is monotone, so
    /// the max sits at the outward pole; sampling keeps us honest).
    fn well_radial_max(&self, si: usize, a: f64, r_loc: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        let n = 33;
        for i in 0..n {
            let t = (std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            worst = worst.max(self.well_value(si, a, r_loc, t));
        }
        worst
    }

    /// Largest radius around the shell centers of `si` where the function
    /// stays nonpositive, with a custom amplitude (diagnostics).
    pub fn zero_radius_with(&self, si: usize, a: f64) -> f64 {
        if a <= 0.0 {
            // Poisson integral of positive data is positive.
            return 0.0;
        }
        let shell = &self.shells[si];
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if self.well_radial_max(si, a, 1.0 - 1e-9) <= 0.0 {
            return shell.ball_radius;
        }
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.well_radial_max(si, a, mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo * shell.ball_radius
    }

    /// Certified zero radius at a lattice center.
    pub fn zero_radius(&self, lambda: [f64; 3]) -> Result<f64> {
        for (si, shell) in self.shells.iter().enumerate() {
            for c in &shell.centers {
                if dist(*c, lambda) < 1e-9 * (1.0 + norm(lambda)) {
                    let _ = si;
                    return Ok(shell.zero_radius);
                }
            }
        }
        Err(Error::Domain("point is not a lattice center".into()))
    }

    /// Max of `u` over sampled points of each sphere, with growth ratios
    /// against the envelope integral.
    pub fn growth_profile(&self, rhos: &[f64], samples_per_sphere: usize) -> Result<Vec<GrowthPoint>> {
        let mut out = Vec::with_capacity(rhos.len());
        let mut prev = self.r_glue;
        for &rho in rhos {
            if rho <= prev && out.is_empty() == false {
                return Err(Error::Domain("growth radii must increase".into()));
            }
            if rho <= self.r_glue {
                return Err(Error::Domain(format!(
                    "growth radius {rho} inside the gluing radius {}",
                    self.r_glue
                )));
            }
            prev = rho;
            let mut m_hat = f64::NEG_INFINITY;
            let n = samples_per_sphere.max(16);
            if self.dim == 2 {
                for i in 0..n {
                    let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.25) / n as f64;
                    m_hat = m_hat.max(self.u_eval([rho * th.cos(), rho * th.sin(), 0.0]));
                }
            } else {
                let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
                for i in 0..n {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    let th = golden * i as f64;
                    m_hat = m_hat.max(self.u_eval([
                        rho * s * th.cos(),
                        rho * s * th.sin(),
                        rho * z,
                    ]));
                }
            }
            let integral = self.envelope(rho);
            let (ratio, flagged) = if m_hat > 0.0 {
                (m_hat.ln() / integral, false)
            } else {
                (f64::NAN, true)
            };
            out.push(GrowthPoint {
                rho,
                m_hat,
                ratio,
                flagged,
            });
        }
        Ok(out)
    }

    /// The certified zero set as obstacle balls: radius `R0 * eps0` per the
    /// guarantee, or the full bisected radius when `certified_only` is off.
    pub fn zero_colander(&self, rho: f64, certified_only: bool) -> Result<Colander> {
        let mut balls = Vec::new();
        for shell in &self.shells {
            let r = if certified_only {
                shell.ball_radius * shell.eps0
            } else {
                shell.zero_radius
            };
            if r <= 0.0 {
                continue;
            }
            for c in &shell.centers {
                if norm(*c) - r < rho {
                    balls.push(Ball {
                        center: *c,
                        radius: r,
                    });
                }
            }
        }
        Colander::new(rho, BallUnion::new(self.dim, balls)?)
    }

    /// The harmonic-measure comparison: `u(0) <= M_u(rho) * omega` with the
    /// escape probability taken at its upper confidence edge.
    pub fn heart_check(&self, rho: f64, cfg: &WoSConfig) -> Result<HeartReport> {
        let colander = self.zero_colander(rho, true)?;
        let escape = wos_escape(&colander, [0.0, 0.0, 0.0], cfg)?;
        let growth = self.growth_profile(&[rho], 512)?;
        let m_hat = growth[0].m_hat;
        let lhs = self.u_eval([0.0, 0.0, 0.0]);
        let rhs = m_hat * (escape.p_hat + 3.0 * escape.stderr).min(1.0);
        Ok(HeartReport {
            lhs,
            rhs,
            holds: lhs <= rhs,
            m_hat,
            escape,
        })
    }

    /// Serializable record of every constant needed to re-evaluate `u`.
    pub fn manifest(&self) -> ConstructionManifest {
        ConstructionManifest {
            profile: self.profile.clone(),
            r0_spec: self.r0_spec.clone(),
            c_growth: self.c_growth,
            sigma_d: self.sigma_d,
            r_zero_start: self.r_zero_start,
            r_glue: self.r_glue,
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            seed: self.seed,
            quadrature: self.quad,
            shells: self.shells.clone(),
        }
    }

    /// Rebuild from a manifest; coefficients and constants are taken as
    /// stored, the spatial index is reconstructed deterministically.
    pub fn from_manifest(m: ConstructionManifest) -> Result<Self> {
        let dim = m.profile.dim().usize();
        let t_hi = m
            .shells
            .iter()
            .map(|s| s.center_radius)
            .fold(m.r_glue, f64::max)
            * 2.2
            + 10.0;
        let envint = build_envelope_cache(&m.profile, t_hi, m.quadrature.envelope_panels)?;
        let f_at_one = envint.eval(1.0);
        let (ball_index, ball_owner) = build_ball_index(&m.shells, dim)?;
        Ok(Self {
            profile: m.profile,
            dim,
            r0_spec: m.r0_spec,
            c_growth: m.c_growth,
            sigma_d: m.sigma_d,
            r_zero_start: m.r_zero_start,
            r_glue: m.r_glue,
            c1: m.c1,
            c2: m.c2,
            c3: m.c3,
            shells: m.shells,
            quad: m.quadrature,
            seed: m.seed,
            envint,
            f_at_one,
            ball_index,
            ball_owner,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SubmeanReport {
    pub worst_margin: f64,
    pub margins: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub rho: f64,
    pub m_hat: f64,
    pub ratio: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeartReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub m_hat: f64,
    pub escape: EstimateCI,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstructionManifest {
    pub profile: Profile,
    pub r0_spec: FuncSpec,
    pub c_growth: f64,
    pub sigma_d: f64,
    pub r_zero_start: f64,
    pub r_glue: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub seed: u64,
    pub quadrature: QuadratureSpec,
    pub shells: Vec<ShellData>,
}

fn build_envelope_cache(p: &Profile, t_hi: f64, panels: usize) -> Result<CumulativeIntegral> {
    CumulativeIntegral::build(|t| phi_eval(p, t).unwrap_or(f64::NAN), 0.0, t_hi, panels)
}

fn build_ball_index(shells: &[ShellData], dim: usize) -> Result<(BallBvh, Vec<(usize, usize)>)> {
    let mut balls = Vec::new();
    let mut owner = Vec::new();
    for (si, shell) in shells.iter().enumerate() {
        for (ci, c) in shell.centers.iter().enumerate() {
            balls.push(Ball {
                center: *c,
                radius: shell.ball_radius,
            });
            owner.push((si, ci));
        }
    }
    let _ = dim;
    Ok((BallBvh::build(balls), owner))
}

/// Build the construction for a validated profile.
///
/// Fails with `ConstructionInfeasible` when no well amplitude reaches the
/// required zero radius at some shell, and with `GeometryError` when shell
/// balls collide or no gluing radius clears the lattice.
pub fn build(p: &Profile, opts: &BuildOptions) -> Result<Construction> {
    let dim = p.dim().usize();
    if dim != 2 && dim != 3 {
        return Err(Error::UnsupportedDimension(format!(
            "construction supports d in {{2,3}}, got {dim}"
        )));
    }
    let report = p.report();
    if !report.sup_d_inv_phi.is_finite() || report.sup_d_inv_phi > 1e3 {
        return Err(Error::Profile(format!(
            "d/dt(1/phi) = {} unusable for the growth constant",
            report.sup_d_inv_phi
        )));
    }
    if 7.0 * p.eps(0.0) >= 1.0 {
        return Err(Error::Profile(format!(
            "7 eps(0) = {} >= 1: rescaled density inadmissible",
            7.0 * p.eps(0.0)
        )));
    }
    let sigma_d = {
        let vd = if dim == 2 {
            std::f64::consts::PI
        } else {
            4.0 * std::f64::consts::PI / 3.0
        };
        0.5f64.min(vd)
    };
    let r0_spec = scale_to_r0(p.r_spec())?;

    // Lattice of shells on spheres 2 rho_k under the R0 recursion.
    let lattice: ShellLattice = make_shell_lattice(p, &r0_spec, opts.k_max, opts.seed)?;
    if lattice.shells.is_empty() {
        return Err(Error::Geometry(
            "no usable shells below k_max; raise k_max".into(),
        ));
    }

    // Global disjointness across shells (within-shell separation is already
    // guaranteed by the lattice).
    for i in 0..lattice.shells.len() {
        for j in (i + 1)..lattice.shells.len() {
            let (a, b) = (&lattice.shells[i], &lattice.shells[j]);
            let gap = b.radius - a.radius;
            if gap > a.ball_radius + b.ball_radius + 1.0 {
                continue;
            }
            for ca in &a.centers {
                for cb in &b.centers {
                    if dist(*ca, *cb) <= a.ball_radius + b.ball_radius + 1e-9 {
                        return Err(Error::Geometry(format!(
                            "well balls collide between shells {} and {}",
                            a.k, b.k
                        )));
                    }
                }
            }
        }
    }

    // Growth constant: keep v subharmonic with slack, and put the product
    // C * phi * R0 near 3/2 at the tightest shell so the gluing cap leaves
    // room for the required well depth.
    let mut inv_phi_r0_max = 0.0f64;
    for s in &lattice.shells {
        let t = s.radius;
        let phi = phi_eval(p, t)?;
        inv_phi_r0_max = inv_phi_r0_max.max(1.0 / (phi * r0_spec.eval(t)));
    }
    let c_growth = opts.c_override.unwrap_or_else(|| {
        let base = 2.0 * (2.0 * report.sup_d_inv_phi).max(1.0);
        base.max(1.5 * inv_phi_r0_max)
    });
    if c_growth <= 2.0 * report.sup_d_inv_phi {
        return Err(Error::Profile(format!(
            "growth constant {c_growth} too small against d/dt(1/phi) = {}",
            report.sup_d_inv_phi
        )));
    }

    // Envelope cache; abort if the comparison function would overflow.
    let t_hi = lattice.shells.last().unwrap().radius * 2.2 + 10.0;
    let quad = QuadratureSpec::default();
    let envint = build_envelope_cache(p, t_hi, quad.envelope_panels)?;
    let f_at_one = envint.eval(1.0);
    if c_growth * (envint.eval(t_hi) - f_at_one) > 600.0 {
        return Err(Error::ConstructionInfeasible(
            "comparison function overflows the float range at this scale".into(),
        ));
    }

    // Gluing radius below the first shell, clear of every well ball.
    let first_shell_inner = lattice.shells[0].radius - lattice.shells[0].ball_radius;
    let r_zero_start = crate::setgen::step_domain_start(&r0_spec, 10.0 * t_hi)?;
    let mut r_glue = None;
    let step = (r0_spec.eval(r_zero_start) / 16.0).max(1e-3);
    let mut t = r_zero_start.max(1e-6);
    while t < first_shell_inner {
        let clearance = lattice
            .shells
            .iter()
            .map(|s| (t - s.radius).abs() - s.ball_radius)
            .fold(f64::INFINITY, f64::min);
        if clearance >= 1.0 {
            r_glue = Some(t);
            break;
        }
        t += step;
    }
    let r_glue = r_glue.ok_or_else(|| {
        Error::Geometry(format!(
            "no gluing radius in [{r_zero_start}, {first_shell_inner}) clears the lattice"
        ))
    })?;

    // Near-origin constants.
    let a1 = r_glue - sigma_d * r0_spec.eval(0.0);
    if a1 <= 0.0 {
        return Err(Error::Geometry("gluing radius inside the beam core".into()));
    }
    let kt_r1 = ktilde(dim, r_glue / a1);
    if kt_r1 <= 0.0 {
        return Err(Error::Geometry("degenerate kernel branch at r1".into()));
    }
    let width = sigma_d * p.r(0.0);
    let b1 = std::f64::consts::PI * ((dim - 1) as f64).sqrt() / width;
    let s_max_sphere = (b1 * r_glue).cosh();
    let c1 = r_glue.exp().max(s_max_sphere) / kt_r1;

    // Matching constants at the gluing sphere.
    let phi_r1 = phi_eval(p, r_glue)?;
    let v_r1 = (c_growth * (envint.eval(r_glue) - f_at_one)).exp();
    let dv1 = c1 * ktilde_slope_at_one(dim) * a1.powi(dim as i32 - 2) / r_glue.powi(dim as i32 - 1);
    let c2 = dv1 / (v_r1 * c_growth * phi_r1);
    let c3 = c2 * v_r1 - c1 * kt_r1;

    // Assemble shells with Poisson data; amplitudes start at the Green
    // bound and are refined per mode afterwards.
    let mut shells = Vec::with_capacity(lattice.shells.len());
    for s in &lattice.shells {
        let lam_n = s.radius;
        let r0 = s.ball_radius;
        let vfun = |t: f64| {
            let arg = (lam_n * lam_n + 2.0 * lam_n * r0 * t + r0 * r0).sqrt();
            (c_growth * (envint.eval(arg) - f_at_one)).exp()
        };
        let harmonic = if dim == 2 {
            ZonalHarmonic::fit_d2(vfun, quad.d2_samples)
        } else {
            ZonalHarmonic::fit_d3(vfun, quad.d3_nodes)
        };
        shells.push(ShellData {
            k: s.k,
            center_radius: s.radius,
            ball_radius: r0,
            eps0: 7.0 * p.eps(s.radius / 2.0),
            a_coeff: 0.0,
            zero_radius: 0.0,
            centers: s.centers.clone(),
            harmonic,
        });
    }

    let (ball_index, ball_owner) = build_ball_index(&shells, dim)?;
    let mut cons = Construction {
        profile: p.clone(),
        dim,
        r0_spec,
        c_growth,
        sigma_d,
        r_zero_start,
        r_glue,
        c1,
        c2,
        c3,
        shells,
        quad,
        seed: opts.seed,
        envint,
        f_at_one,
        ball_index,
        ball_owner,
    };

    // First pass: Green-integral bound for every shell.
    let green: Vec<f64> = (0..cons.shells.len())
        .map(|si| green_amplitude_bound(&cons, p, si))
        .collect::<Result<_>>()?;
    for (si, a) in green.iter().enumerate() {
        cons.shells[si].a_coeff = *a;
    }

    // Second pass (default): bisect the largest amplitude that keeps the
    // sub-mean margins clean at probes straddling the gluing sphere.
    if opts.a_mode == AmplitudeMode::Bisection {
        for si in 0..cons.shells.len() {
            let a = bisect_amplitude(&cons, si, green[si])?;
            cons.shells[si].a_coeff = a;
        }
    }

    // Certify the wells.
    for si in 0..cons.shells.len() {
        let shell = &cons.shells[si];
        let required = shell.ball_radius * shell.eps0;
        let r_zero = cons.zero_radius_with(si, shell.a_coeff);
        if r_zero < required {
            return Err(Error::ConstructionInfeasible(format!(
                "shell {}: zero radius {r_zero} below required {required}",
                shell.k
            )));
        }
        cons.shells[si].zero_radius = r_zero;
    }

    // The origin must carry the unit value.
    let u0 = cons.u_eval([0.0, 0.0, 0.0]);
    if u0 < 1.0 - 1e-12 {
        return Err(Error::ConstructionInfeasible(format!(
            "origin value {u0} below one"
        )));
    }
    Ok(cons)
}

/// Lower bound on the admissible well amplitude from the Green integral of
/// the comparison function's Laplacian over the unit ball, minimized over
/// boundary directions.
fn green_amplitude_bound(cons: &Construction, p: &Profile, si: usize) -> Result<f64> {
    let dim = cons.dim;
    let shell = &cons.shells[si];
    let lam_n = shell.center_radius;
    let r0 = shell.ball_radius;
    let c_growth = cons.c_growth;

    let lap_v = |tau: f64| -> Result<f64> {
        let phi = phi_eval(p, tau)?;
        let h = 1e-5 * (1.0 + tau);
        let dphi = (phi_eval(p, tau + h)? - phi_eval(p, (tau - h).max(0.0))?) / (2.0 * h);
        let v = cons.v_radial(tau);
        Ok(v * (c_growth * c_growth * phi * phi
            + c_growth * dphi
            + c_growth * (dim as f64 - 1.0) * phi / tau))
    };

    let (rad_nodes, rad_weights) = gauss_legendre(32);
    let mut min_over_xi = f64::INFINITY;
    let n_gamma = 9;
    for gi in 0..n_gamma {
        let gamma = std::f64::consts::PI * gi as f64 / (n_gamma - 1) as f64;
        let (cg, sg) = (gamma.cos(), gamma.sin());
        let mut integral = 0.0;
        if dim == 2 {
            let n_beta = 64;
            for (ri, &rn) in rad_nodes.iter().enumerate() {
                let s = 0.5 * (rn + 1.0);
                let w_s = 0.5 * rad_weights[ri];
                let mut ring = 0.0;
                for bi in 0..n_beta {
                    let beta = 2.0 * std::f64::consts::PI * (bi as f64 + 0.5) / n_beta as f64;
                    let tau = (lam_n * lam_n + 2.0 * lam_n * r0 * s * beta.cos()
                        + r0 * r0 * s * s)
                        .sqrt();
                    let ker = (1.0 - s * s)
                        / (1.0 + s * s - 2.0 * s * (beta - gamma).cos().mul_add(1.0, 0.0))
                            .max(1e-30);
                    ring += ker * lap_v(tau)?;
                }
                integral += w_s * s * ring * (2.0 * std::f64::consts::PI / n_beta as f64);
            }
            integral *= r0 * r0 / (2.0 * std::f64::consts::PI);
        } else {
            let n_u = 24;
            let n_psi = 24;
            let (un, uw) = gauss_legendre(n_u);
            for (ri, &rn) in rad_nodes.iter().enumerate() {
                let s = 0.5 * (rn + 1.0);
                let w_s = 0.5 * rad_weights[ri];
                let mut shell_sum = 0.0;
                for (ui, &u) in un.iter().enumerate() {
                    let su = (1.0 - u * u).max(0.0).sqrt();
                    let tau = (lam_n * lam_n + 2.0 * lam_n * r0 * s * u + r0 * r0 * s * s).sqrt();
                    let lv = lap_v(tau)?;
                    let mut ring = 0.0;
                    for pi_ in 0..n_psi {
                        let psi =
                            2.0 * std::f64::consts::PI * (pi_ as f64 + 0.5) / n_psi as f64;
                        let xi_dot = cg * u + sg * su * psi.cos();
                        let d2 = (1.0 + s * s - 2.0 * s * xi_dot).max(1e-30);
                        ring += (1.0 - s * s) / d2.powf(1.5);
                    }
                    shell_sum += uw[ui] * lv * ring * (2.0 * std::f64::consts::PI / n_psi as f64);
                }
                integral += w_s * s * s * shell_sum;
            }
            integral *= r0 * r0 / (4.0 * std::f64::consts::PI);
        }
        min_over_xi = min_over_xi.min(integral);
    }
    Ok((min_over_xi / ktilde_slope_at_one(dim)).max(0.0))
}

/// Largest amplitude whose sub-mean margins stay above a tight tolerance at
/// probes on and around the gluing sphere of a representative well.
fn bisect_amplitude(cons: &Construction, si: usize, seed_a: f64) -> Result<f64> {
    let shell = &cons.shells[si];
    let lam = shell.centers[0];
    let lam_n = norm(lam);
    let r0 = shell.ball_radius;
    let axis = [lam[0] / lam_n, lam[1] / lam_n, lam[2] / lam_n];
    // in-plane unit vector orthogonal to the axis
    let helper = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let mut e1 = [
        axis[1] * helper[2] - axis[2] * helper[1],
        axis[2] * helper[0] - axis[0] * helper[2],
        axis[0] * helper[1] - axis[1] * helper[0],
    ];
    let n1 = norm(e1);
    for v in &mut e1 {
        *v /= n1;
    }

    let probes: Vec<[f64; 3]> = {
        let mut out = Vec::new();
        for &scale in &[0.98, 1.0, 1.02] {
            for ai in 0..8 {
                let ang = std::f64::consts::PI * ai as f64 / 7.0;
                let dir = [
                    ang.cos() * axis[0] + ang.sin() * e1[0],
                    ang.cos() * axis[1] + ang.sin() * e1[1],
                    ang.cos() * axis[2] + ang.sin() * e1[2],
                ];
                out.push([
                    lam[0] + scale * r0 * dir[0],
                    lam[1] + scale * r0 * dir[1],
                    lam[2] + scale * r0 * dir[2],
                ]);
            }
        }
        out
    };
    let radii = [r0 / 32.0, r0 / 16.0];
    let feasible = |a: f64| -> bool {
        probes.iter().all(|&x| {
            radii.iter().all(|&r| {
                cons.margin_at(x, r, 64, Some((si, a))) >= -1e-9
            })
        })
    };

    let mut lo = 0.0f64;
    let mut hi = seed_a.max(1e-12);
    if feasible(hi) {
        for _ in 0..24 {
            let next = hi * 2.0;
            if feasible(next) {
                hi = next;
            } else {
                break;
            }
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(Error::ConstructionInfeasible(format!(
            "shell {}: no positive amplitude passes the gluing probes",
            shell.k
        )));
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::Dim;

    fn d2_profile() -> Profile {
        Profile::new(
            Dim::new(2).unwrap(),
            FuncSpec::constant(7.0),
            FuncSpec::constant(1e-5),
        )
        .unwrap()
    }

    fn d3_profile() -> Profile {
        Profile::new(
            Dim::new(3).unwrap(),
            FuncSpec::constant(10.5),
            FuncSpec::constant(0.005),
        )
        .unwrap()
    }

    fn small_opts(k_max: usize) -> BuildOptions {
        BuildOptions {
            k_max,
            seed: 11,
            c_override: None,
            a_mode: AmplitudeMode::Bisection,
        }
    }

    #[test]
    fn planar_build_succeeds() {
        let p = d2_profile();
        let cons = build(&p, &small_opts(6)).unwrap();
        assert!(cons.u_eval([0.0, 0.0, 0.0]) >= 1.0);
        assert!(cons.c1.is_finite() && cons.c2 > 0.0);
        for s in cons.shells() {
            assert!(s.a_coeff > 0.0);
            assert!(s.zero_radius >= s.ball_radius * s.eps0);
        }
    }

    #[test]
    fn spatial_build_succeeds() {
        let p = d3_profile();
        let cons = build(&p, &small_opts(6)).unwrap();
        assert!(cons.u_eval([0.0, 0.0, 0.0]) >= 1.0);
        for s in cons.shells() {
            assert!(
                s.zero_radius >= s.ball_radius * s.eps0,
                "shell {}: {} < {}",
                s.k,
                s.zero_radius,
                s.ball_radius * s.eps0
            );
        }
    }

    #[test]
    fn boundary_continuity_at_gluing_spheres() {
        let p = d2_profile();
        let cons = build(&p, &small_opts(5)).unwrap();
        let shell = &cons.shells()[1];
        let lam = shell.centers[3];
        let lam_n = norm(lam);
        // inner-branch limit at the sphere equals the outer value
        for &tang in &[0.0f64, 1.3, 2.8] {
            let dirx = [lam[0] / lam_n, lam[1] / lam_n, 0.0];
            let dir = [
                tang.cos() * dirx[0] - tang.sin() * dirx[1],
                tang.cos() * dirx[1] + tang.sin() * dirx[0],
                0.0,
            ];
            let x_on = [
                lam[0] + shell.ball_radius * dir[0],
                lam[1] + shell.ball_radius * dir[1],
                0.0,
            ];
            let inner = {
                let t = dir[0] * lam[0] / lam_n + dir[1] * lam[1] / lam_n;
                cons.well_value(1, shell.a_coeff, 1.0 - 1e-12, t)
            };
            let outer = cons.c2 * cons.v_radial(norm(x_on)) - cons.c3;
            let scale = outer.abs().max(1.0);
            assert!(
                (inner - outer).abs() / scale < 1e-6,
                "gluing mismatch: {inner} vs {outer}"
            );
        }
    }

    #[test]
    fn zero_radius_monotone_in_amplitude() {
        let p = d2_profile();
        let cons = build(&p, &small_opts(5)).unwrap();
        let a = cons.shells()[0].a_coeff;
        let r1 = cons.zero_radius_with(0, a);
        let r2 = cons.zero_radius_with(0, 2.0 * a);
        assert!(r2 >= r1);
        assert_eq!(cons.zero_radius_with(0, 0.0), 0.0);
    }

    #[test]
    fn submean_margins_far_field_and_wells() {
        let p = d2_profile();
        let cons = build(&p, &small_opts(5)).unwrap();
        let r0 = cons.shells()[0].ball_radius;
        // far-field point between shells
        let far = [
            0.5 * (cons.shells()[0].center_radius + cons.shells()[1].center_radius),
            0.1,
            0.0,
        ];
        let rep = cons.submean_check(far, &[r0 / 8.0, r0 / 4.0], 64);
        assert!(rep.worst_margin >= -1e-8, "far margin {}", rep.worst_margin);
        // well center: deeply negative middle, strongly positive margin
        let lam = cons.shells()[0].centers[0];
        let rep = cons.submean_check(lam, &[r0 / 4.0], 64);
        assert!(rep.worst_margin > 0.0);
        // on a gluing sphere
        let lam_n = norm(lam);
        let x = [
            lam[0] * (1.0 + r0 / lam_n),
            lam[1] * (1.0 + r0 / lam_n),
            0.0,
        ];
        let rep = cons.submean_check(x, &[r0 / 8.0, r0 / 4.0], 64);
        assert!(rep.worst_margin >= -1e-6, "gluing margin {}", rep.worst_margin);
    }

    #[test]
    fn growth_ratio_bounded_and_trending_down() {
        let p = d2_profile();
        let cons = build(&p, &small_opts(8)).unwrap();
        let shells = cons.shells();
        let rhos: Vec<f64> = (3..=7).map(|k| shells[k - 3].center_radius * 1.01).collect();
        let growth = cons.growth_profile(&rhos, 256).unwrap();
        for g in &growth {
            assert!(!g.flagged);
            assert!(g.ratio.is_finite());
        }
        let n = growth.len();
        assert!(growth[n - 1].ratio <= growth[n - 3].ratio + 1e-9);
    }

    #[test]
    fn manifest_round_trip_reproduces_values() {
        let p = d2_profile();
        let cons = build(&p, &small_opts(5)).unwrap();
        let json = serde_json::to_string(&cons.manifest()).unwrap();
        let m: ConstructionManifest = serde_json::from_str(&json).unwrap();
        let cons2 = Construction::from_manifest(m).unwrap();
        for &x in &[
            [0.0, 0.0, 0.0],
            [5.0, 1.0, 0.0],
            [9.9, -3.0, 0.0],
            [14.0, 0.2, 0.0],
        ] {
            assert_eq!(cons.u_eval(x), cons2.u_eval(x));
        }
    }

    #[test]
    fn rejects_large_density() {
        let p = Profile::new(
            Dim::new(2).unwrap(),
            FuncSpec::constant(7.0),
            FuncSpec::constant(0.2),
        )
        .unwrap();
        assert!(matches!(
            build(&p, &small_opts(4)),
            Err(Error::Profile(_))
        ));
    }
}
