//! Error functionals and rate diagnostics.

use serde::Serialize;

use crate::data::{DesignKind, Truth};
use crate::error::{Error, Result};
use crate::estimator::SplineEstimate;
use crate::kernel::SobolevKernelConfig;
use crate::scalar::Scalar;

pub const DEFAULT_ISE_GRID: usize = 4097;

/// One replicate's outcome in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IseRecord {
    pub design: DesignKind,
    pub n: usize,
    /// Sampling frequency; the harmonic mean when curves differ.
    pub m: f64,
    pub replicate: usize,
    pub lambda: f64,
    pub selection: String,
    pub ise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RatePredictor {
    LogM,
    LogN,
    LogNm,
}

impl RatePredictor {
    pub fn as_str(self) -> &'static str {
        match self {
            RatePredictor::LogM => "log_m",
            RatePredictor::LogN => "log_n",
            RatePredictor::LogNm => "log_nm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "log_m" => Ok(RatePredictor::LogM),
            "log_n" => Ok(RatePredictor::LogN),
            "log_nm" => Ok(RatePredictor::LogNm),
            other => Err(Error::Config(format!("unknown rate predictor `{other}`"))),
        }
    }

    pub fn abscissa(self, n: usize, m: f64) -> f64 {
        match self {
            RatePredictor::LogM => m,
            RatePredictor::LogN => n as f64,
            RatePredictor::LogNm => n as f64 * m,
        }
    }
}

/// Least-squares line through `(log x, log mean_ise)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub predictor: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Composite Simpson weights for `grid_size` uniform nodes on `[0, 1]`.
pub fn simpson_weights<T: Scalar>(grid_size: usize) -> Result<Vec<T>> {
    if grid_size < 3 || grid_size % 2 == 0 {
        return Err(Error::Config(format!(
            "Simpson quadrature needs an odd grid size >= 3, got {grid_size}"
        )));
    }
    let h = T::one() / T::from_usize_lossy(grid_size - 1);
    let third = h / T::lit(3.0);
    Ok((0..grid_size)
        .map(|i| {
            let c = if i == 0 || i == grid_size - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            T::lit(c) * third
        })
        .collect())
}

/// Simpson approximation of `∫₀¹ f`.
pub fn simpson<T: Scalar>(f: impl Fn(T) -> T, grid_size: usize) -> Result<T> {
    let w = simpson_weights::<T>(grid_size)?;
    let h = T::one() / T::from_usize_lossy(grid_size - 1);
    Ok(w.iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &wi)| acc + wi * f(T::from_usize_lossy(i) * h)))
}

/// `∫₀¹ (ĝ - g₀)²` by composite Simpson on `grid_size` nodes.
pub fn ise<T: Scalar>(
    est: &SplineEstimate<T>,
    truth: &Truth<T>,
    grid_size: usize,
    cfg: &SobolevKernelConfig<T>,
) -> Result<T> {
    if cfg.order() != est.order() {
        return Err(Error::Config("estimate and kernel config disagree on r".into()));
    }
    simpson(
        |t| {
            let e = est.eval_unchecked(t, cfg) - truth.eval(t);
            e * e
        },
        grid_size,
    )
}

/// `((1/n) Σ 1/m_i)⁻¹`.
pub fn harmonic_mean(freqs: &[usize]) -> Result<f64> {
    if freqs.is_empty() {
        return Err(Error::Domain("harmonic mean of an empty list".into()));
    }
    if freqs.iter().any(|&m| m == 0) {
        return Err(Error::Domain("sampling frequencies must be positive".into()));
    }
    let inv: f64 = freqs.iter().map(|&m| 1.0 / m as f64).sum::<f64>() / freqs.len() as f64;
    Ok(1.0 / inv)
}

/// Ordinary least squares of `log y` on `log x`.
pub fn fit_rate_slope(predictor: RatePredictor, records: &[(f64, f64)]) -> Result<SlopeFit> {
    if records.len() < 3 {
        return Err(Error::Config(format!(
            "rate fit needs at least 3 points, got {}",
            records.len()
        )));
    }
    if records.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(Error::Domain("rate fit needs positive x and mean ISE".into()));
    }
    if records.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Config("rate fit abscissae must be strictly increasing".into()));
    }
    let k = records.len() as f64;
    let lx: Vec<f64> = records.iter().map(|r| r.0.ln()).collect();
    let ly: Vec<f64> = records.iter().map(|r| r.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SlopeFit {
        predictor: predictor.as_str().to_string(),
        slope,
        intercept,
        r_squared,
        points: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_estimate() -> SplineEstimate<f64> {
        SplineEstimate::from_parts(2, 0.1, 0.1, vec![], vec![0.0, 0.0], vec![], vec![])
    }

    #[test]
    fn ise_of_exact_fit_is_zero() {
        let cfg = SobolevKernelConfig::new(2).unwrap();
        let est = SplineEstimate::from_parts(2, 0.1, 0.1, vec![0.3, 0.6], vec![1.0, -2.0], vec![0.4, -0.4], vec![]);
        let e2 = est.clone();
        let c2 = cfg.clone();
        let truth = Truth::new(move |t| e2.evaluate(t, &c2).unwrap());
        assert!(ise(&est, &truth, DEFAULT_ISE_GRID, &cfg).unwrap() < 1e-14);
    }

    #[test]
    fn ise_of_constant_offset() {
        let cfg = SobolevKernelConfig::new(2).unwrap();
        let truth = Truth::new(|_| -0.3);
        let v = ise(&zero_estimate(), &truth, 101, &cfg).unwrap();
        assert!((v - 0.09).abs() < 1e-12);
    }

    #[test]
    fn ise_of_sine_is_one_half() {
        let cfg = SobolevKernelConfig::new(2).unwrap();
        let truth = Truth::new(|t: f64| (2.0 * std::f64::consts::PI * t).sin());
        let v = ise(&zero_estimate(), &truth, DEFAULT_ISE_GRID, &cfg).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
    }

    #[test]
    fn even_grid_is_rejected() {
        let cfg = SobolevKernelConfig::new(2).unwrap();
        let truth = Truth::new(|_| 0.0);
        assert!(matches!(ise(&zero_estimate(), &truth, 4096, &cfg), Err(Error::Config(_))));
        assert!(ise(&zero_estimate(), &truth, 1, &cfg).is_err());
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(&[2, 3, 6]).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(harmonic_mean(&[7; 5]).unwrap(), 7.0);
        assert!((harmonic_mean(&[1, 100]).unwrap() - 2.0 / 1.01).abs() < 1e-12);
        assert!(harmonic_mean(&[]).is_err());
        assert!(harmonic_mean(&[3, 0]).is_err());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [2.0, 3.0, 5.0, 8.0].iter().map(|&x: &f64| (x, x.powi(-4))).collect();
        let fit = fit_rate_slope(RatePredictor::LogM, &pts).unwrap();
        assert!((fit.slope + 4.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = [1.0, 2.0, 4.0].iter().map(|&x| (x, 0.7)).collect();
        assert!(fit_rate_slope(RatePredictor::LogN, &flat).unwrap().slope.abs() < 1e-10);
    }

    #[test]
    fn slope_input_errors() {
        assert!(fit_rate_slope(RatePredictor::LogN, &[(1.0, 1.0), (2.0, 1.0)]).is_err());
        assert!(fit_rate_slope(RatePredictor::LogN, &[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_rate_slope(RatePredictor::LogN, &[(1.0, 1.0), (1.0, 2.0), (3.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn harmonic_never_exceeds_arithmetic(freqs in prop::collection::vec(1usize..500, 1..40)) {
            let hm = harmonic_mean(&freqs).unwrap();
            let am = freqs.iter().sum::<usize>() as f64 / freqs.len() as f64;
            prop_assert!(hm <= am * (1.0 + 1e-12));
            if freqs.iter().any(|&m| m != freqs[0]) {
                prop_assert!(hm < am);
            }
        }

        #[test]
        fn slope_is_scale_equivariant(
            ys in prop::collection::vec(1e-6f64..10.0, 3..8),
            scale in 1e-3f64..1e3,
        ) {
            let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y * scale)).collect();
            let a = fit_rate_slope(RatePredictor::LogM, &pts).unwrap();
            let b = fit_rate_slope(RatePredictor::LogM, &scaled).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-12);
            prop_assert!((b.intercept - a.intercept - scale.ln()).abs() < 1e-9);
        }
    }
}
