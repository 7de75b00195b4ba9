//! Parametric scalar function families for size and density profiles.
//!
//! Only two shapes are admitted so that validation (monotonicity, concavity,
//! slope bounds) is decidable on a sample grid:
//!
//! * `constant` — a positive constant;
//! * `gauge` — a product of iterated-logarithm powers
//!   `A * (t+s)^a0 * log(t+s)^a1 * loglog(t+s)^a2 * ...`.
//!
//! Density profiles additionally admit `exp_neg_gauge`, the composition
//! `t -> exp(-g(t))` with `g` a gauge-shaped product, which is how decaying
//! densities such as `exp(-(1+t)^2)` are written.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iterated logarithm `log_[n](t)`: `log_[0] = t`, `log_[n] = log(log_[n-1])`.
fn iter_log(n: usize, t: f64) -> f64 {
    let mut v = t;
    for _ in 0..n {
        v = v.ln();
    }
    v
}

/// A scalar function given by a parametric family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FuncSpec {
    /// `f(t) = value`.
    Constant { value: f64 },
    /// `f(t) = amplitude * prod_n log_[n](t + shift)^alpha_n` with
    /// `alpha_0 = alpha0` and `alpha_n = alphas[n-1]` for `n >= 1`.
    Gauge {
        amplitude: f64,
        alpha0: f64,
        #[serde(default)]
        alphas: Vec<f64>,
        shift: f64,
    },
    /// `f(t) = exp(-g(t))` where `g` is the gauge product below.
    ExpNegGauge {
        amplitude: f64,
        alpha0: f64,
        #[serde(default)]
        alphas: Vec<f64>,
        shift: f64,
    },
}

impl FuncSpec {
    pub fn constant(value: f64) -> Self {
        FuncSpec::Constant { value }
    }

    /// The gauge product at `t`, shared by the two gauge-backed families.
    fn gauge_product(amplitude: f64, alpha0: f64, alphas: &[f64], shift: f64, t: f64) -> f64 {
        let u = t + shift;
        let mut v = amplitude * u.powf(alpha0);
        for (i, &a) in alphas.iter().enumerate() {
            if a != 0.0 {
                v *= iter_log(i + 1, u).powf(a);
            }
        }
        v
    }

    /// Evaluate at `t >= 0`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            FuncSpec::Constant { value } => *value,
            FuncSpec::Gauge {
                amplitude,
                alpha0,
                alphas,
                shift,
            } => Self::gauge_product(*amplitude, *alpha0, alphas, *shift, t),
            FuncSpec::ExpNegGauge {
                amplitude,
                alpha0,
                alphas,
                shift,
            } => {
                // Saturate at a tiny positive value so fast-decaying densities
                // stay inside (0,1) instead of underflowing to zero.
                (-Self::gauge_product(*amplitude, *alpha0, alphas, *shift, t))
                    .exp()
                    .max(1e-300)
            }
        }
    }

    /// `-ln f(t)`, computed without underflow.
    ///
    /// For the `exp_neg_gauge` family this is the gauge product itself, so
    /// envelope quantities stay exact even where `f(t)` underflows to the
    /// 1e-300 floor.
    pub fn neg_ln(&self, t: f64) -> f64 {
        match self {
            FuncSpec::ExpNegGauge {
                amplitude,
                alpha0,
                alphas,
                shift,
            } => Self::gauge_product(*amplitude, *alpha0, alphas, *shift, t),
            _ => -self.eval(t).ln(),
        }
    }

    /// Index of the deepest nonzero exponent (0 for a pure power).
    fn depth(alphas: &[f64]) -> usize {
        alphas
            .iter()
            .rposition(|&a| a != 0.0)
            .map(|i| i + 1)
            .unwrap_or(0)
    }

    /// Structural checks that do not need a sample grid.
    ///
    /// The shift must be large enough that every iterated log in use is
    /// defined and positive at t = 0: depth 1 needs `s > 1`, depth 2 needs
    /// `s > e`, depth 3 needs `s > e^e`, and so on.
    pub fn validate_shape(&self) -> Result<()> {
        match self {
            FuncSpec::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::Profile(format!(
                        "constant spec must be positive and finite, got {value}"
                    )));
                }
            }
            FuncSpec::Gauge {
                amplitude,
                alpha0,
                alphas,
                shift,
            }
            | FuncSpec::ExpNegGauge {
                amplitude,
                alpha0,
                alphas,
                shift,
            } => {
                if !(amplitude.is_finite() && *amplitude > 0.0) {
                    return Err(Error::Profile(format!(
                        "gauge amplitude must be positive, got {amplitude}"
                    )));
                }
                if !alpha0.is_finite() || alphas.iter().any(|a| !a.is_finite()) {
                    return Err(Error::Profile("gauge exponents must be finite".into()));
                }
                if matches!(self, FuncSpec::Gauge { .. }) && !(0.0..=1.0).contains(alpha0) {
                    return Err(Error::Profile(format!(
                        "gauge leading exponent must lie in [0,1], got {alpha0}"
                    )));
                }
                let depth = Self::depth(alphas);
                let mut min_shift = 0.0f64;
                for _ in 0..depth {
                    min_shift = min_shift.exp();
                }
                if *shift < min_shift {
                    return Err(Error::Profile(format!(
                        "gauge shift {shift} too small for log depth {depth} (needs >= {min_shift})"
                    )));
                }
                let v0 = self.eval(0.0);
                if !v0.is_finite() {
                    return Err(Error::Profile("gauge not finite at t = 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_evaluates() {
        let f = FuncSpec::constant(7.0);
        assert_eq!(f.eval(0.0), 7.0);
        assert_eq!(f.eval(123.4), 7.0);
        f.validate_shape().unwrap();
    }

    #[test]
    fn linear_gauge_matches_closed_form() {
        // (1 + t) / 2 as a gauge: 0.5 * (t + 1)^1
        let f = FuncSpec::Gauge {
            amplitude: 0.5,
            alpha0: 1.0,
            alphas: vec![],
            shift: 1.0,
        };
        f.validate_shape().unwrap();
        assert!((f.eval(3.0) - 2.0).abs() < 1e-15);
        assert!((f.eval(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_factor_requires_larger_shift() {
        let bad = FuncSpec::Gauge {
            amplitude: 1.0,
            alpha0: 0.5,
            alphas: vec![1.0],
            shift: 0.5,
        };
        assert!(bad.validate_shape().is_err());
        let good = FuncSpec::Gauge {
            amplitude: 1.0,
            alpha0: 0.5,
            alphas: vec![1.0],
            shift: 2.0,
        };
        good.validate_shape().unwrap();
        let v = good.eval(1.0);
        assert!((v - 3.0f64.sqrt() * 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exp_neg_gauge_expresses_squared_decay() {
        // exp(-(1+t)^2)
        let f = FuncSpec::ExpNegGauge {
            amplitude: 1.0,
            alpha0: 2.0,
            alphas: vec![],
            shift: 1.0,
        };
        f.validate_shape().unwrap();
        assert!((f.eval(0.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((f.eval(3.0) - (-16.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn serde_round_trip_is_lossless() {
        let f = FuncSpec::Gauge {
            amplitude: 0.2,
            alpha0: 0.8,
            alphas: vec![0.5],
            shift: 2.0,
        };
        let s = serde_json::to_string(&f).unwrap();
        let g: FuncSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        let s2 = serde_json::to_string(&g).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn unknown_family_rejected() {
        let r: std::result::Result<FuncSpec, _> =
            serde_json::from_str(r#"{"family":"spline","knots":[1,2]}"#);
        assert!(r.is_err());
    }
}
