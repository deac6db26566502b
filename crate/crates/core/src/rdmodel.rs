//! QP→rate and rate→distortion model families, fitted per tile per GOP.
//!
//! Rates are in kbps and distortion is luminance MSE on 8-bit samples.
//!
//! | family      | QP → R            | R → D             |
//! |-------------|-------------------|-------------------|
//! | Exponential | `R = a·e^(−b·QP)` | `D = c·e^(−d·R)`  |
//! | PowerLaw    | `R = a·QP^b`      | `D = c·R^d`       |
//!
//! Valid parameters make both curves strictly decreasing: `b, d > 0` for the
//! exponential forms and `b, d < 0` for the power laws. Every valid `D(R)`
//! is then also convex.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    Exponential,
    PowerLaw,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Exponential => "Exponential",
            ModelFamily::PowerLaw => "PowerLaw",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(ModelFamily::Exponential),
            "powerlaw" | "power_law" | "power" => Ok(ModelFamily::PowerLaw),
            _ => Err(Error::validation(format!("unknown model family `{s}`"))),
        }
    }
}

fn check_shape(family: ModelFamily, scale: f64, shape: f64, what: &str) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::validation(format!(
            "{what}: scale must be positive, got {scale}"
        )));
    }
    let ok = match family {
        ModelFamily::Exponential => shape > 0.0,
        ModelFamily::PowerLaw => shape < 0.0,
    } && shape.is_finite();
    if !ok {
        return Err(Error::validation(format!(
            "{what}: {family} shape {shape} does not give a strictly decreasing curve"
        )));
    }
    Ok(())
}

/// `R(QP)` in kbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpRateCurve {
    pub family: ModelFamily,
    pub a: f64,
    pub b: f64,
}

impl QpRateCurve {
    pub fn new(family: ModelFamily, a: f64, b: f64) -> Result<Self> {
        let curve = QpRateCurve { family, a, b };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.family, self.a, self.b, "QP-rate curve")
    }

    pub fn rate(&self, qp: f64) -> f64 {
        rate_from_qp(self, qp)
    }

    pub fn qp(&self, rate_kbps: f64) -> Result<f64> {
        qp_from_rate(self, rate_kbps)
    }
}

/// `D(R)` in luminance MSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDistortionCurve {
    pub family: ModelFamily,
    pub c: f64,
    pub d: f64,
}

impl RateDistortionCurve {
    pub fn new(family: ModelFamily, c: f64, d: f64) -> Result<Self> {
        let curve = RateDistortionCurve { family, c, d };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.family, self.c, self.d, "rate-distortion curve")
    }

    pub fn distortion(&self, rate_kbps: f64) -> Result<f64> {
        distortion_from_rate(self, rate_kbps)
    }

    pub fn marginal(&self, rate_kbps: f64) -> Result<f64> {
        marginal_distortion(self, rate_kbps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rmse_log: f64,
    pub r2_log: f64,
    pub n_points: usize,
}

/// One encoded operating point of a tile within a GOP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdSamplePoint {
    pub qp: i32,
    pub rate_kbps: f64,
    pub mse: f64,
}

impl RdSamplePoint {
    pub fn validate(&self) -> Result<()> {
        if !(0..=51).contains(&self.qp) {
            return Err(Error::validation(format!("QP {} outside [0, 51]", self.qp)));
        }
        if !(self.rate_kbps > 0.0 && self.rate_kbps.is_finite()) {
            return Err(Error::validation(format!(
                "rate must be positive, got {}",
                self.rate_kbps
            )));
        }
        if !(self.mse > 0.0 && self.mse.is_finite()) {
            return Err(Error::validation(format!("MSE must be positive, got {}", self.mse)));
        }
        Ok(())
    }
}

/// Ordinary least squares `y = intercept + slope·x`, with log-domain fit
/// diagnostics.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, FitReport) {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2_log = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let report = FitReport {
        rmse_log: (ss_res / n).sqrt(),
        r2_log,
        n_points: xs.len(),
    };
    (intercept, slope, report)
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Fits `R(QP)` by least squares on `ln R`.
pub fn fit_qp_rate(points: &[RdSamplePoint], family: ModelFamily) -> Result<(QpRateCurve, FitReport)> {
    for p in points {
        p.validate()?;
    }
    let qps: Vec<f64> = points.iter().map(|p| p.qp as f64).collect();
    if distinct_count(&qps) < 2 {
        return Err(Error::Fit(format!(
            "QP-rate fit needs at least 2 distinct QPs, got {}",
            distinct_count(&qps)
        )));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.rate_kbps.ln()).collect();
    let curve = match family {
        ModelFamily::Exponential => {
            let (ln_a, slope, report) = linear_fit(&qps, &ys);
            (
                QpRateCurve {
                    family,
                    a: ln_a.exp(),
                    b: -slope,
                },
                report,
            )
        }
        ModelFamily::PowerLaw => {
            if qps.iter().any(|&q| q <= 0.0) {
                return Err(Error::Fit("PowerLaw QP-rate fit needs QP > 0".into()));
            }
            let xs: Vec<f64> = qps.iter().map(|q| q.ln()).collect();
            let (ln_a, slope, report) = linear_fit(&xs, &ys);
            (
                QpRateCurve {
                    family,
                    a: ln_a.exp(),
                    b: slope,
                },
                report,
            )
        }
    };
    curve.0.validate()?;
    Ok(curve)
}

/// Fits `D(R)` by least squares on `ln D`.
pub fn fit_rate_distortion(points: &[RdSamplePoint], family: ModelFamily) -> Result<(RateDistortionCurve, FitReport)> {
    for p in points {
        p.validate()?;
    }
    let rates: Vec<f64> = points.iter().map(|p| p.rate_kbps).collect();
    if distinct_count(&rates) < 2 {
        return Err(Error::Fit(format!(
            "rate-distortion fit needs at least 2 distinct rates, got {}",
            distinct_count(&rates)
        )));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.mse.ln()).collect();
    let curve = match family {
        ModelFamily::Exponential => {
            let (ln_c, slope, report) = linear_fit(&rates, &ys);
            (
                RateDistortionCurve {
                    family,
                    c: ln_c.exp(),
                    d: -slope,
                },
                report,
            )
        }
        ModelFamily::PowerLaw => {
            let xs: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
            let (ln_c, slope, report) = linear_fit(&xs, &ys);
            (
                RateDistortionCurve {
                    family,
                    c: ln_c.exp(),
                    d: slope,
                },
                report,
            )
        }
    };
    curve.0.validate()?;
    Ok(curve)
}

pub fn rate_from_qp(curve: &QpRateCurve, qp: f64) -> f64 {
    match curve.family {
        ModelFamily::Exponential => curve.a * (-curve.b * qp).exp(),
        ModelFamily::PowerLaw => curve.a * qp.powf(curve.b),
    }
}

/// Closed-form inverse of [`rate_from_qp`].
pub fn qp_from_rate(curve: &QpRateCurve, rate_kbps: f64) -> Result<f64> {
    if !(rate_kbps > 0.0 && rate_kbps.is_finite()) {
        return Err(Error::Domain(format!("cannot invert rate {rate_kbps}")));
    }
    Ok(match curve.family {
        ModelFamily::Exponential => (curve.a / rate_kbps).ln() / curve.b,
        ModelFamily::PowerLaw => (rate_kbps / curve.a).powf(1.0 / curve.b),
    })
}

pub fn distortion_from_rate(curve: &RateDistortionCurve, rate_kbps: f64) -> Result<f64> {
    if !(rate_kbps > 0.0) {
        return Err(Error::Domain(format!("distortion undefined at rate {rate_kbps}")));
    }
    Ok(match curve.family {
        ModelFamily::Exponential => curve.c * (-curve.d * rate_kbps).exp(),
        ModelFamily::PowerLaw => curve.c * rate_kbps.powf(curve.d),
    })
}

/// `dD/dR`, negative for valid curves.
pub fn marginal_distortion(curve: &RateDistortionCurve, rate_kbps: f64) -> Result<f64> {
    if !(rate_kbps > 0.0) {
        return Err(Error::Domain(format!(
            "marginal distortion undefined at rate {rate_kbps}"
        )));
    }
    Ok(match curve.family {
        ModelFamily::Exponential => -curve.c * curve.d * (-curve.d * rate_kbps).exp(),
        ModelFamily::PowerLaw => curve.c * curve.d * rate_kbps.powf(curve.d - 1.0),
    })
}

/// Both fitted curves of a tile in one GOP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileCurves {
    pub qp_rate: QpRateCurve,
    pub rate_distortion: RateDistortionCurve,
}

impl TileCurves {
    pub fn validate(&self) -> Result<()> {
        self.qp_rate.validate()?;
        self.rate_distortion.validate()
    }

    /// Distortion at a QP, going through the rate model.
    pub fn distortion_at_qp(&self, qp: f64) -> Result<f64> {
        distortion_from_rate(&self.rate_distortion, rate_from_qp(&self.qp_rate, qp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn points_from(f: impl Fn(f64) -> f64) -> Vec<RdSamplePoint> {
        [22, 27, 32, 37, 42]
            .into_iter()
            .map(|qp| RdSamplePoint {
                qp,
                rate_kbps: f(qp as f64),
                mse: 1.0,
            })
            .collect()
    }

    #[test]
    fn recovers_exponential_qp_rate() {
        let pts = points_from(|q| 1000.0 * (-0.1 * q).exp());
        let (c, rep) = fit_qp_rate(&pts, ModelFamily::Exponential).unwrap();
        assert!(rel(c.a, 1000.0) < 1e-9 && rel(c.b, 0.1) < 1e-9, "{c:?}");
        assert!((rep.r2_log - 1.0).abs() < 1e-12);
        assert_eq!(rep.n_points, 5);
    }

    #[test]
    fn recovers_power_law_qp_rate() {
        let pts = points_from(|q| 5000.0 * q.powf(-2.0));
        let (c, _) = fit_qp_rate(&pts, ModelFamily::PowerLaw).unwrap();
        assert!(rel(c.a, 5000.0) < 1e-9 && rel(c.b, -2.0) < 1e-9, "{c:?}");
    }

    #[test]
    fn recovers_rate_distortion_families() {
        let rates = [100.0, 250.0, 600.0, 1500.0, 4000.0];
        let pts: Vec<_> = rates
            .iter()
            .map(|&r| RdSamplePoint {
                qp: 30,
                rate_kbps: r,
                mse: 200.0 * r.powf(-0.8),
            })
            .collect();
        let (c, _) = fit_rate_distortion(&pts, ModelFamily::PowerLaw).unwrap();
        assert!(rel(c.c, 200.0) < 1e-9 && rel(c.d, -0.8) < 1e-9, "{c:?}");

        let pts: Vec<_> = rates
            .iter()
            .map(|&r| RdSamplePoint {
                qp: 30,
                rate_kbps: r,
                mse: 150.0 * (-0.002 * r).exp(),
            })
            .collect();
        let (c, _) = fit_rate_distortion(&pts, ModelFamily::Exponential).unwrap();
        assert!(rel(c.c, 150.0) < 1e-9 && rel(c.d, 0.002) < 1e-9, "{c:?}");
    }

    #[test]
    fn fit_needs_two_distinct_qps() {
        let pts = vec![
            RdSamplePoint {
                qp: 30,
                rate_kbps: 10.0,
                mse: 1.0
            };
            3
        ];
        assert!(matches!(
            fit_qp_rate(&pts, ModelFamily::Exponential),
            Err(Error::Fit(_))
        ));
        assert!(matches!(
            fit_rate_distortion(&pts, ModelFamily::PowerLaw),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn increasing_data_fails_validation() {
        let pts = points_from(|q| 10.0 * q);
        assert!(matches!(
            fit_qp_rate(&pts, ModelFamily::PowerLaw),
            Err(Error::Validation(_))
        ));
        // D growing like sqrt(R) has a shape in (0, 1): not decreasing.
        let pts: Vec<_> = [10.0, 20.0, 40.0]
            .iter()
            .map(|&r: &f64| RdSamplePoint {
                qp: 30,
                rate_kbps: r,
                mse: r.sqrt(),
            })
            .collect();
        assert!(matches!(
            fit_rate_distortion(&pts, ModelFamily::PowerLaw),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn scalar_evaluations() {
        let exp = QpRateCurve::new(ModelFamily::Exponential, 1000.0, 0.1).unwrap();
        let pow = QpRateCurve::new(ModelFamily::PowerLaw, 5000.0, -2.0).unwrap();
        assert_eq!(rate_from_qp(&exp, 0.0), 1000.0);
        assert_eq!(rate_from_qp(&pow, 1.0), 5000.0);
        assert!((rate_from_qp(&exp, 22.0) - 110.803_158_362_333_9).abs() < 1e-9);
        for (curve, qp) in [(exp, 0.0), (pow, 1.0), (exp, 22.0)] {
            assert!((qp_from_rate(&curve, rate_from_qp(&curve, qp)).unwrap() - qp).abs() < 1e-9);
        }
        assert!(matches!(qp_from_rate(&exp, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn distortion_and_marginal() {
        let pow = RateDistortionCurve::new(ModelFamily::PowerLaw, 200.0, -0.8).unwrap();
        let exp = RateDistortionCurve::new(ModelFamily::Exponential, 150.0, 0.002).unwrap();
        assert_eq!(distortion_from_rate(&pow, 1.0).unwrap(), 200.0);
        assert!((distortion_from_rate(&exp, 1e-300).unwrap() - 150.0).abs() < 1e-12);
        assert!((distortion_from_rate(&pow, 1000.0).unwrap() - 0.796_214_341_106_994_9).abs() < 1e-12);
        assert!((marginal_distortion(&pow, 1.0).unwrap() + 160.0).abs() < 1e-12);
        assert!((marginal_distortion(&exp, 1e-300).unwrap() + 0.3).abs() < 1e-12);
        assert!(distortion_from_rate(&pow, 0.0).is_err());
        assert!(marginal_distortion(&exp, -1.0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(QpRateCurve::new(ModelFamily::Exponential, 1000.0, -0.1).is_err());
        assert!(QpRateCurve::new(ModelFamily::PowerLaw, -1.0, -2.0).is_err());
        assert!(RateDistortionCurve::new(ModelFamily::PowerLaw, 200.0, 0.5).is_err());
        assert!(RateDistortionCurve::new(ModelFamily::Exponential, 200.0, 0.0).is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!("exponential".parse::<ModelFamily>().unwrap(), ModelFamily::Exponential);
        assert_eq!("PowerLaw".parse::<ModelFamily>().unwrap(), ModelFamily::PowerLaw);
        assert!("cubic".parse::<ModelFamily>().is_err());
    }
}
