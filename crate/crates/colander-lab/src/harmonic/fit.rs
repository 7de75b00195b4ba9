//! Weighted least-squares fit of the decay law.
//!
//! Fits `-log p_hat = c * X + b` where `X` is the envelope integral up to
//! the outer radius, weighting each point by the inverse variance of
//! `log p_hat` (delta method: `(stderr / p_hat)^2`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{envelope_integral, Profile};

use super::EstimateCI;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub c_slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Indices of points dropped for vanishing p_hat.
    pub excluded: Vec<usize>,
}

pub fn decay_fit(p: &Profile, rhos: &[f64], omegas: &[EstimateCI]) -> Result<DecayFit> {
    if rhos.len() != omegas.len() {
        return Err(Error::Config(format!(
            "{} radii against {} estimates",
            rhos.len(),
            omegas.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    let mut excluded = Vec::new();
    for (i, (&rho, est)) in rhos.iter().zip(omegas.iter()).enumerate() {
        if est.p_hat <= 0.0 {
            excluded.push(i);
            continue;
        }
        let x = envelope_integral(p, rho)?;
        let y = -est.p_hat.ln();
        let var_log = (est.stderr / est.p_hat).powi(2);
        xs.push(x);
        ys.push(y);
        ws.push(1.0 / var_log.max(1e-12));
    }
    if xs.len() < 4 {
        return Err(Error::Fit(format!(
            "only {} usable points after exclusions; need 4",
            xs.len()
        )));
    }
    let sw: f64 = ws.iter().sum();
    let mean_x: f64 = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let mean_y: f64 = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in xs.iter().zip(&ys).zip(&ws) {
        sxx += w * (x - mean_x) * (x - mean_x);
        sxy += w * (x - mean_x) * (y - mean_y);
    }
    if sxx <= 0.0 {
        return Err(Error::Fit("degenerate abscissae; slope undefined".into()));
    }
    let c_slope = sxy / sxx;
    let intercept = mean_y - c_slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for ((x, y), w) in xs.iter().zip(&ys).zip(&ws) {
        let fit = c_slope * x + intercept;
        ss_res += w * (y - fit) * (y - fit);
        ss_tot += w * (y - mean_y) * (y - mean_y);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(DecayFit {
        c_slope,
        intercept,
        r2,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::{Dim, FuncSpec};

    fn unit_profile() -> Profile {
        // phi == 1: eps = e^{-1}, R = 1
        Profile::new(
            Dim::new(2).unwrap(),
            FuncSpec::constant(1.0),
            FuncSpec::constant((-1.0f64).exp()),
        )
        .unwrap()
    }

    fn exact_estimate(p: f64, n: u64) -> EstimateCI {
        let s = (p * n as f64).round() as u64;
        EstimateCI::from_counts(s, n - s, 0)
    }

    #[test]
    fn recovers_exact_linear_law() {
        // p = exp(-2 X) with X = rho - 1
        let p = unit_profile();
        let rhos: Vec<f64> = vec![1.25, 1.5, 2.0, 2.5, 3.0, 3.5];
        let omegas: Vec<EstimateCI> = rhos
            .iter()
            .map(|&r| {
                let x = r - 1.0;
                exact_estimate((-2.0 * x).exp(), 1_000_000)
            })
            .collect();
        let fit = decay_fit(&p, &rhos, &omegas).unwrap();
        assert!((fit.c_slope - 2.0).abs() < 0.02, "slope {}", fit.c_slope);
        assert!(fit.r2 > 0.999);
    }

    #[test]
    fn zero_probability_points_are_excluded() {
        let p = unit_profile();
        let rhos: Vec<f64> = vec![1.5, 2.0, 2.5, 3.0, 3.5];
        let mut omegas: Vec<EstimateCI> = rhos
            .iter()
            .map(|&r| exact_estimate((-(r - 1.0)).exp(), 100_000))
            .collect();
        omegas[2] = EstimateCI::from_counts(0, 100_000, 0);
        let fit = decay_fit(&p, &rhos, &omegas).unwrap();
        assert_eq!(fit.excluded, vec![2]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let p = unit_profile();
        let rhos: Vec<f64> = vec![1.5, 2.0, 2.5];
        let omegas: Vec<EstimateCI> = rhos
            .iter()
            .map(|&r| exact_estimate((-(r - 1.0)).exp(), 1000))
            .collect();
        assert!(matches!(
            decay_fit(&p, &rhos, &omegas),
            Err(Error::Fit(_))
        ));
    }
}
