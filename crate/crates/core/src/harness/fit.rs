//! Least-squares scaling fits of regret against the horizon.

use serde::{Deserialize, Serialize};

use crate::error::{FedSeaError, Result};

/// Fewest horizons a fit accepts.
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `R_T ≈ a·T^b`
    PowerLaw,
    /// `R_T ≈ a·ln T + c`
    LogLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub horizon: f64,
    pub regret: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    /// Scale `a`.
    pub a: f64,
    /// Exponent `b` (power law) or intercept `c` (log law).
    pub b: f64,
    pub a_std_error: f64,
    pub b_std_error: f64,
    pub r_squared: f64,
    pub points: Vec<FitPoint>,
}

impl FitResult {
    pub fn predict(&self, horizon: f64) -> f64 {
        match self.model {
            FitModel::PowerLaw => self.a * horizon.powf(self.b),
            FitModel::LogLaw => self.a * horizon.ln() + self.b,
        }
    }
}

/// Ordinary least squares `y ≈ α + βx`.
struct Line {
    intercept: f64,
    slope: f64,
    intercept_se: f64,
    slope_se: f64,
    r_squared: f64,
}

fn ols(x: &[f64], y: &[f64]) -> Result<Line> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(FedSeaError::DegenerateFit("all horizons are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let s2 = ssr / (n - 2.0);
    Ok(Line {
        intercept,
        slope,
        intercept_se: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        slope_se: (s2 / sxx).sqrt(),
        r_squared,
    })
}

fn check_points(points: &[FitPoint]) -> Result<()> {
    if points.len() < MIN_FIT_POINTS {
        return Err(FedSeaError::DegenerateFit(format!(
            "{} horizons supplied, at least {MIN_FIT_POINTS} required",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|p| !(p.horizon.is_finite() && p.horizon > 0.0 && p.regret.is_finite()))
    {
        return Err(FedSeaError::DegenerateFit(
            "horizons must be positive and regrets finite".into(),
        ));
    }
    if points.iter().all(|p| p.regret == 0.0) {
        return Err(FedSeaError::DegenerateFit(
            "regret is zero at every horizon".into(),
        ));
    }
    Ok(())
}

/// Fits `ln R = ln a + b ln T`.
pub fn fit_power_law(points: &[FitPoint]) -> Result<FitResult> {
    check_points(points)?;
    if points.iter().any(|p| p.regret <= 0.0) {
        return Err(FedSeaError::DegenerateFit(
            "power-law fit needs positive regret at every horizon".into(),
        ));
    }
    let x: Vec<f64> = points.iter().map(|p| p.horizon.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.regret.ln()).collect();
    let line = ols(&x, &y)?;
    let a = line.intercept.exp();
    Ok(FitResult {
        model: FitModel::PowerLaw,
        a,
        b: line.slope,
        a_std_error: a * line.intercept_se,
        b_std_error: line.slope_se,
        r_squared: line.r_squared,
        points: points.to_vec(),
    })
}

/// Fits `R = a ln T + c`.
pub fn fit_log_law(points: &[FitPoint]) -> Result<FitResult> {
    check_points(points)?;
    let x: Vec<f64> = points.iter().map(|p| p.horizon.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.regret).collect();
    let line = ols(&x, &y)?;
    Ok(FitResult {
        model: FitModel::LogLaw,
        a: line.slope,
        b: line.intercept,
        a_std_error: line.slope_se,
        b_std_error: line.intercept_se,
        r_squared: line.r_squared,
        points: points.to_vec(),
    })
}

pub fn fit_scaling(points: &[FitPoint], model: FitModel) -> Result<FitResult> {
    match model {
        FitModel::PowerLaw => fit_power_law(points),
        FitModel::LogLaw => fit_log_law(points),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(f: impl Fn(f64) -> f64) -> Vec<FitPoint> {
        (10..=15)
            .map(|k| {
                let h = 2f64.powi(k);
                FitPoint {
                    horizon: h,
                    regret: f(h),
                    std_error: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_square_root() {
        let fit = fit_power_law(&points(|t| 3.0 * t.sqrt())).unwrap();
        assert!((fit.b - 0.5).abs() < 1e-12);
        assert!((fit.a - 3.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_log_law() {
        let fit = fit_log_law(&points(|t| 2.0 * t.ln() + 1.0)).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-12);
        assert!((fit.b - 1.0).abs() < 1e-10);
        assert!((fit.predict(100.0) - (2.0 * 100f64.ln() + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(fit_power_law(&points(|_| 0.0)).is_err());
        assert!(fit_log_law(&points(|_| 0.0)).is_err());
        assert!(fit_power_law(&points(|t| t.sqrt())[..3]).is_err());
        let mut p = points(|t| t.sqrt());
        p[2].regret = -1.0;
        assert!(fit_power_law(&p).is_err());
    }
}
