//! Smoothing-spline estimates of the mean function.
//!
//! * [`fit_common`] smooths the column means of a common design.
//! * [`fit_independent`] pools every observation with weight `1 / (n m_i)`.
//! * [`two_stage`] smooths each curve separately and averages the fits.
//!
//! All three return a [`SplineEstimate`]: a polynomial of degree `< r` plus a
//! combination of kernel sections at the knots.

mod select;
pub(crate) mod system;

use serde::Serialize;

use crate::data::{Curve, FitMode, FunctionalDataset};
use crate::error::{check_unit_interval, Error, Result};
use crate::kernel::{horner, SobolevKernelConfig};
use crate::scalar::Scalar;

pub use select::{select_lambda_gcv, select_lambda_oracle, log_grid, Selection};
use system::{Observations, PreparedFit};

pub const DEFAULT_INTERPOLATION_FLOOR: f64 = 1e-12;
pub const DEFAULT_MAX_KNOTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T> {
    /// Penalty weight λ. Selection routines ignore it and scan their grid.
    pub lambda: T,
    /// Smallest λ actually used; smaller requests fit the interpolating spline.
    pub interpolation_floor: T,
    /// Above this many observations, kernel sections are placed on at most
    /// `max_knots` rank-spaced locations.
    pub max_knots: usize,
}

impl<T: Scalar> SolveOptions<T> {
    pub fn new(lambda: T) -> Self {
        Self {
            lambda,
            interpolation_floor: T::lit(DEFAULT_INTERPOLATION_FLOOR),
            max_knots: DEFAULT_MAX_KNOTS,
        }
    }

    pub fn with_max_knots(mut self, max_knots: usize) -> Self {
        self.max_knots = max_knots;
        self
    }

    pub fn with_floor(mut self, floor: T) -> Self {
        self.interpolation_floor = floor;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.interpolation_floor > T::zero()) {
            return Err(Error::Config("interpolation_floor must be positive".into()));
        }
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("λ must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        Self::new(T::lit(1e-4))
    }
}

/// Non-fatal events attached to fits and selections.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    KnotsThinned { locations: usize, knots: usize },
    JitterApplied { amount: f64 },
    GcvDegenerate { lambda: f64 },
    GcvFallback { lambda: f64 },
    GridPointFailed { lambda: f64, error: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineEstimate<T> {
    r: usize,
    lambda: T,
    lambda_effective: T,
    knots: Vec<T>,
    poly_coeffs: Vec<T>,
    kernel_coeffs: Vec<T>,
    warnings: Vec<FitWarning>,
}

impl<T: Scalar> SplineEstimate<T> {
    /// Assembles an estimate, merging kernel sections at identical knots.
    pub fn from_parts(
        r: usize,
        lambda: T,
        lambda_effective: T,
        knots: Vec<T>,
        poly_coeffs: Vec<T>,
        kernel_coeffs: Vec<T>,
        warnings: Vec<FitWarning>,
    ) -> Self {
        assert_eq!(poly_coeffs.len(), r, "need r polynomial coefficients");
        assert_eq!(knots.len(), kernel_coeffs.len(), "one kernel coefficient per knot");
        let (knots, kernel_coeffs) = merge_knots(knots, kernel_coeffs);
        Self {
            r,
            lambda,
            lambda_effective,
            knots,
            poly_coeffs,
            kernel_coeffs,
            warnings,
        }
    }

    pub fn order(&self) -> usize {
        self.r
    }

    /// λ as requested.
    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// λ after the interpolation floor.
    pub fn lambda_effective(&self) -> T {
        self.lambda_effective
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn poly_coeffs(&self) -> &[T] {
        &self.poly_coeffs
    }

    pub fn kernel_coeffs(&self) -> &[T] {
        &self.kernel_coeffs
    }

    pub fn warnings(&self) -> &[FitWarning] {
        &self.warnings
    }

    pub fn is_thinned(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, FitWarning::KnotsThinned { .. }))
    }

    pub(crate) fn push_warnings(&mut self, extra: impl IntoIterator<Item = FitWarning>) {
        self.warnings.extend(extra);
    }

    /// `ĝ(t) = Σ d_k t^k + Σ c_j K(t, knot_j)`.
    pub fn evaluate(&self, t: T, cfg: &SobolevKernelConfig<T>) -> Result<T> {
        self.check_cfg(cfg)?;
        check_unit_interval("t", t.as_f64())?;
        Ok(self.eval_unchecked(t, cfg))
    }

    pub fn evaluate_grid(&self, ts: &[T], cfg: &SobolevKernelConfig<T>) -> Result<Vec<T>> {
        ts.iter().map(|&t| self.evaluate(t, cfg)).collect()
    }

    pub(crate) fn eval_unchecked(&self, t: T, cfg: &SobolevKernelConfig<T>) -> T {
        let poly = horner(&self.poly_coeffs, t);
        let bt = cfg.scaled_primary(t);
        let mut acc = T::zero();
        for (&k, &c) in self.knots.iter().zip(&self.kernel_coeffs) {
            acc = acc + c * cfg.kernel_from_primary(bt, cfg.scaled_primary(k), (t - k).abs());
        }
        poly + acc
    }

    /// `∫ (ĝ^(r))² = cᵀ Σ c`.
    pub fn roughness(&self, cfg: &SobolevKernelConfig<T>) -> Result<T> {
        self.check_cfg(cfg)?;
        if self.knots.is_empty() {
            return Ok(T::zero());
        }
        let gram = cfg.gram_unchecked(&self.knots);
        Ok(gram.quadratic_form(&self.kernel_coeffs).max(T::zero()))
    }

    /// `‖Φᵀc‖_∞ / ‖c‖_∞` with `Φ_jk = knot_j^k`; zero when `c = 0`.
    pub fn orthogonality_residual(&self) -> T {
        let c_max = self
            .kernel_coeffs
            .iter()
            .fold(T::zero(), |m, c| m.max(c.abs()));
        if c_max == T::zero() {
            return T::zero();
        }
        let mut worst = T::zero();
        for k in 0..self.r {
            let s = self
                .knots
                .iter()
                .zip(&self.kernel_coeffs)
                .fold(T::zero(), |acc, (&t, &c)| acc + c * t.powi(k as i32));
            worst = worst.max(s.abs());
        }
        worst / c_max
    }

    fn check_cfg(&self, cfg: &SobolevKernelConfig<T>) -> Result<()> {
        if cfg.order() != self.r {
            return Err(Error::Config(format!(
                "estimate has r = {} but kernel config has r = {}",
                self.r,
                cfg.order()
            )));
        }
        Ok(())
    }
}

fn merge_knots<T: Scalar>(knots: Vec<T>, coeffs: Vec<T>) -> (Vec<T>, Vec<T>) {
    let mut pairs: Vec<(T, T)> = knots.into_iter().zip(coeffs).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite knots"));
    let mut out_k: Vec<T> = Vec::with_capacity(pairs.len());
    let mut out_c: Vec<T> = Vec::with_capacity(pairs.len());
    for (k, c) in pairs {
        if out_k.last() == Some(&k) {
            let last = out_c.last_mut().expect("paired");
            *last = *last + c;
        } else {
            out_k.push(k);
            out_c.push(c);
        }
    }
    (out_k, out_c)
}

/// Pooled weighted observations for either objective.
///
/// For a common design the column means carry weight `1/m`; otherwise each
/// raw observation of curve `i` carries `1 / (n m_i)`. On a common design
/// both objectives coincide up to a constant.
pub(crate) fn observations<T: Scalar>(
    data: &FunctionalDataset<T>,
    mode: FitMode,
) -> Result<Observations<T>> {
    match mode {
        FitMode::Common => {
            let points = data.shared_points().ok_or_else(|| {
                Error::Config(format!(
                    "common fit needs shared sampling locations (dataset is {})",
                    data.design()
                ))
            })?;
            let y = data.column_means()?;
            let w = vec![T::one() / T::from_usize_lossy(points.len()); points.len()];
            Ok(Observations {
                x: points.to_vec(),
                y,
                w,
            }
            .sorted())
        }
        FitMode::Independent => {
            let n = T::from_usize_lossy(data.num_curves());
            let total = data.total_observations();
            let mut obs = Observations {
                x: Vec::with_capacity(total),
                y: Vec::with_capacity(total),
                w: Vec::with_capacity(total),
            };
            for c in data.curves() {
                let w = T::one() / (n * T::from_usize_lossy(c.len()));
                obs.x.extend_from_slice(&c.points);
                obs.y.extend_from_slice(&c.values);
                obs.w.extend(std::iter::repeat(w).take(c.len()));
            }
            Ok(obs.sorted())
        }
    }
}

pub(crate) fn check_identifiable<T: Scalar>(obs: &Observations<T>, r: usize, what: &str) -> Result<()> {
    let distinct = obs.distinct_locations().len();
    if distinct < r {
        return Err(Error::Identifiability(format!(
            "{what} has {distinct} distinct locations, fewer than r = {r}"
        )));
    }
    Ok(())
}

fn check_interpolation_design<T: Scalar>(
    obs: &Observations<T>,
    opts: &SolveOptions<T>,
    what: &str,
) -> Result<()> {
    if opts.lambda < opts.interpolation_floor && obs.has_duplicate_locations() {
        return Err(Error::DegenerateDesign(format!(
            "{what} repeats a location and λ = {} is below the interpolation floor",
            opts.lambda
        )));
    }
    Ok(())
}

/// Prepares the λ-independent part of a fit in the given mode, after the
/// mode's preconditions (other than the value of λ) are checked.
pub(crate) fn prepare<'a, T: Scalar>(
    data: &FunctionalDataset<T>,
    mode: FitMode,
    opts: &SolveOptions<T>,
    cfg: &'a SobolevKernelConfig<T>,
) -> Result<PreparedFit<'a, T>> {
    opts.validate()?;
    let obs = observations(data, mode)?;
    check_identifiable(&obs, cfg.order(), "dataset")?;
    PreparedFit::new(cfg, obs, opts.interpolation_floor, opts.max_knots)
}

/// Smoothing spline on the column means of a common design.
///
/// λ below `interpolation_floor` yields the interpolating spline through the
/// column means.
pub fn fit_common<T: Scalar>(
    data: &FunctionalDataset<T>,
    opts: &SolveOptions<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<SplineEstimate<T>> {
    opts.validate()?;
    if !data.design().is_common() {
        return Err(Error::Config(format!(
            "fit_common needs a common design, dataset is {}",
            data.design()
        )));
    }
    let obs = observations(data, FitMode::Common)?;
    check_identifiable(&obs, cfg.order(), "common design")?;
    check_interpolation_design(&obs, opts, "common design")?;
    let prepared = PreparedFit::new(cfg, obs, opts.interpolation_floor, opts.max_knots)?;
    let raw = prepared.solve(opts.lambda, false)?;
    Ok(prepared.estimate(&raw))
}

/// Smoothing spline on all observations, curve `i` weighted by `1 / (n m_i)`.
pub fn fit_independent<T: Scalar>(
    data: &FunctionalDataset<T>,
    opts: &SolveOptions<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<SplineEstimate<T>> {
    opts.validate()?;
    if opts.lambda == T::zero() {
        return Err(Error::UnsupportedMode(
            "λ = 0 is not supported for the pooled fit; use fit_common for interpolation on a common design"
                .into(),
        ));
    }
    let prepared = prepare(data, FitMode::Independent, opts, cfg)?;
    let raw = prepared.solve(opts.lambda, false)?;
    Ok(prepared.estimate(&raw))
}

/// Fit in the mode that matches the dataset's design tag.
pub fn fit<T: Scalar>(
    data: &FunctionalDataset<T>,
    mode: FitMode,
    opts: &SolveOptions<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<SplineEstimate<T>> {
    match mode {
        FitMode::Common => fit_common(data, opts, cfg),
        FitMode::Independent => fit_independent(data, opts, cfg),
    }
}

/// Smoothing spline of a single curve with loss `(1/m_i) Σ_j (Y_ij - f(T_ij))²`.
pub fn smooth_curve<T: Scalar>(
    curve: &Curve<T>,
    opts: &SolveOptions<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<SplineEstimate<T>> {
    opts.validate()?;
    let m = T::from_usize_lossy(curve.len());
    let obs = Observations {
        x: curve.points.clone(),
        y: curve.values.clone(),
        w: vec![T::one() / m; curve.len()],
    }
    .sorted();
    check_identifiable(&obs, cfg.order(), "curve")?;
    check_interpolation_design(&obs, opts, "curve")?;
    let prepared = PreparedFit::new(cfg, obs, opts.interpolation_floor, opts.max_knots)?;
    let raw = prepared.solve(opts.lambda, false)?;
    Ok(prepared.estimate(&raw))
}

/// Average of per-curve smoothing splines.
pub fn two_stage<T: Scalar>(
    data: &FunctionalDataset<T>,
    opts: &SolveOptions<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<SplineEstimate<T>> {
    opts.validate()?;
    let r = cfg.order();
    let n = T::from_usize_lossy(data.num_curves());
    let mut poly = vec![T::zero(); r];
    let mut knots = Vec::new();
    let mut coeffs = Vec::new();
    let mut warnings = Vec::new();
    let mut lambda_effective = opts.lambda;
    for (i, curve) in data.curves().iter().enumerate() {
        let est = smooth_curve(curve, opts, cfg).map_err(|e| match e {
            Error::Identifiability(msg) => Error::Identifiability(format!("curve {i}: {msg}")),
            Error::DegenerateDesign(msg) => Error::DegenerateDesign(format!("curve {i}: {msg}")),
            other => other,
        })?;
        for (p, &d) in poly.iter_mut().zip(est.poly_coeffs()) {
            *p = *p + d / n;
        }
        knots.extend_from_slice(est.knots());
        coeffs.extend(est.kernel_coeffs().iter().map(|&c| c / n));
        lambda_effective = est.lambda_effective();
        for w in est.warnings() {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }
    Ok(SplineEstimate::from_parts(
        r,
        opts.lambda,
        lambda_effective,
        knots,
        poly,
        coeffs,
        warnings,
    ))
}

pub fn evaluate<T: Scalar>(est: &SplineEstimate<T>, t: T, cfg: &SobolevKernelConfig<T>) -> Result<T> {
    est.evaluate(t, cfg)
}

pub fn roughness<T: Scalar>(est: &SplineEstimate<T>, cfg: &SobolevKernelConfig<T>) -> Result<T> {
    est.roughness(cfg)
}

/// `Σ_i (1/(n m_i)) Σ_j (Y_ij - ĝ(T_ij))² + λ_eff ∫ (ĝ^(r))²`, evaluated
/// directly from the raw data. On a common design this is the pooled
/// objective over all `n m` observations.
pub fn penalized_objective<T: Scalar>(
    est: &SplineEstimate<T>,
    data: &FunctionalDataset<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<T> {
    let n = T::from_usize_lossy(data.num_curves());
    let mut loss = T::zero();
    for c in data.curves() {
        let w = T::one() / (n * T::from_usize_lossy(c.len()));
        let mut s = T::zero();
        for (&t, &y) in c.points.iter().zip(&c.values) {
            let e = y - est.evaluate(t, cfg)?;
            s = s + e * e;
        }
        loss = loss + w * s;
    }
    Ok(loss + est.lambda_effective() * est.roughness(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DesignKind;

    fn cfg2() -> SobolevKernelConfig<f64> {
        SobolevKernelConfig::new(2).unwrap()
    }

    fn common_dataset(n: usize, m: usize, f: impl Fn(usize, f64) -> f64) -> FunctionalDataset<f64> {
        let pts: Vec<f64> = (1..=m).map(|j| 2.0 * j as f64 / (2 * m + 1) as f64).collect();
        let curves = (0..n)
            .map(|i| Curve::new(pts.clone(), pts.iter().map(|&t| f(i, t)).collect()).unwrap())
            .collect();
        FunctionalDataset::new(curves, DesignKind::CommonFixed).unwrap()
    }

    #[test]
    fn constant_data_fits_constant() {
        let cfg = cfg2();
        let data = common_dataset(4, 10, |_, _| 5.0);
        for &lam in &[1e-12, 1e-3, 10.0] {
            let est = fit_common(&data, &SolveOptions::new(lam), &cfg).unwrap();
            assert!((est.poly_coeffs()[0] - 5.0).abs() < 1e-8);
            assert!(est.poly_coeffs()[1].abs() < 1e-7);
            for j in 0..=20 {
                let t = j as f64 / 20.0;
                assert!((est.evaluate(t, &cfg).unwrap() - 5.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pure_polynomial_evaluation() {
        let cfg = cfg2();
        let est = SplineEstimate::from_parts(2, 0.1, 0.1, vec![0.2], vec![2.0, 3.0], vec![0.0], vec![]);
        assert_eq!(est.evaluate(0.5, &cfg).unwrap(), 3.5);
        assert_eq!(est.roughness(&cfg).unwrap(), 0.0);
        assert!(est.evaluate(1.5, &cfg).is_err());
    }

    #[test]
    fn interpolation_reproduces_column_means() {
        let cfg = cfg2();
        let data = common_dataset(3, 10, |i, t| (7.0 * t).sin() + i as f64 * 0.3 * t);
        let est = fit_common(&data, &SolveOptions::new(1e-12), &cfg).unwrap();
        let means = data.column_means().unwrap();
        for (&t, &y) in data.curves()[0].points.iter().zip(&means) {
            assert!((est.evaluate(t, &cfg).unwrap() - y).abs() < 1e-6);
        }
        assert_eq!(est.lambda_effective(), DEFAULT_INTERPOLATION_FLOOR);
        assert!(est.orthogonality_residual() < 1e-6);
    }

    #[test]
    fn identifiability_and_mode_errors() {
        let cfg = cfg2();
        let data = common_dataset(2, 1, |_, t| t);
        assert!(matches!(
            fit_common(&data, &SolveOptions::new(0.1), &cfg),
            Err(Error::Identifiability(_))
        ));
        let data = common_dataset(2, 5, |_, t| t);
        assert!(matches!(
            fit_independent(&data, &SolveOptions::new(0.0), &cfg),
            Err(Error::UnsupportedMode(_))
        ));
        let indep = data.retag(DesignKind::Independent).unwrap();
        assert!(fit_common(&indep, &SolveOptions::new(0.1), &cfg).is_err());
    }

    #[test]
    fn duplicate_locations_in_interpolation_mode_are_degenerate() {
        let cfg = cfg2();
        let pts = vec![0.1, 0.5, 0.5, 0.9];
        let curve = Curve::new(pts, vec![1.0, 2.0, 2.5, 3.0]).unwrap();
        let data = FunctionalDataset::new(vec![curve], DesignKind::CommonFixed).unwrap();
        assert!(matches!(
            fit_common(&data, &SolveOptions::new(0.0), &cfg),
            Err(Error::DegenerateDesign(_))
        ));
        assert!(fit_common(&data, &SolveOptions::new(1e-3), &cfg).is_ok());
    }

    #[test]
    fn two_stage_names_the_offending_curve() {
        let cfg = cfg2();
        let a = Curve::new(vec![0.1, 0.4, 0.8], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Curve::new(vec![0.3], vec![1.0]).unwrap();
        let data = FunctionalDataset::new(vec![a, b], DesignKind::Independent).unwrap();
        match two_stage(&data, &SolveOptions::new(0.1), &cfg) {
            Err(Error::Identifiability(msg)) => assert!(msg.contains("curve 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_stage_of_one_curve_is_that_curve() {
        let cfg = cfg2();
        let data = common_dataset(1, 8, |_, t| (4.0 * t).cos());
        let opts = SolveOptions::new(1e-3);
        let a = two_stage(&data, &opts, &cfg).unwrap();
        let b = smooth_curve(&data.curves()[0], &opts, &cfg).unwrap();
        for j in 0..=50 {
            let t = j as f64 / 50.0;
            assert!((a.evaluate(t, &cfg).unwrap() - b.evaluate(t, &cfg).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_penalty_approaches_linear_regression() {
        let cfg = cfg2();
        let data = common_dataset(2, 12, |i, t| (5.0 * t).sin() + i as f64);
        let est = fit_common(&data, &SolveOptions::new(1e6), &cfg).unwrap();
        let pts = &data.curves()[0].points;
        let y = data.column_means().unwrap();
        let m = pts.len() as f64;
        let (mx, my) = (pts.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
        let sxy: f64 = pts.iter().zip(&y).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        for j in 0..=100 {
            let t = j as f64 / 100.0;
            let diff = est.evaluate(t, &cfg).unwrap() - (icpt + slope * t);
            assert!(diff.abs() < 1e-4, "t={t}: {diff}");
        }
    }

    #[test]
    fn merge_sums_duplicate_knots() {
        let est = SplineEstimate::from_parts(
            1,
            0.1,
            0.1,
            vec![0.5, 0.2, 0.5],
            vec![1.0],
            vec![1.0, 2.0, 3.0],
            vec![],
        );
        assert_eq!(est.knots(), &[0.2, 0.5]);
        assert_eq!(est.kernel_coeffs(), &[2.0, 4.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let cfg = SobolevKernelConfig::<f32>::new(2).unwrap();
        let pts: Vec<f32> = (1..=8).map(|j| j as f32 / 9.0).collect();
        let curve = Curve::new(pts.clone(), vec![2.0f32; 8]).unwrap();
        let data = FunctionalDataset::new(vec![curve], DesignKind::CommonFixed).unwrap();
        let est = fit_common(&data, &SolveOptions::new(1e-2f32), &cfg).unwrap();
        assert!((est.evaluate(0.37, &cfg).unwrap() - 2.0).abs() < 1e-4);
    }
}
