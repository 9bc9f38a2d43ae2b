//! Tuning-parameter selection over a finite λ grid.

use crate::data::{FitMode, FunctionalDataset, Truth};
use crate::error::{Error, Result};
use crate::kernel::SobolevKernelConfig;
use crate::metrics::DEFAULT_ISE_GRID;
use crate::scalar::Scalar;

use super::system::{PreparedFit, RawFit};
use super::{prepare, FitWarning, SolveOptions, SplineEstimate};

/// Outcome of a grid search.
#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub lambda: T,
    pub estimate: SplineEstimate<T>,
    /// Criterion value at each grid point, in grid order; `None` where the
    /// fit failed or the criterion was undefined.
    pub scores: Vec<(T, Option<T>)>,
    pub warnings: Vec<FitWarning>,
}

impl<T: Scalar> Selection<T> {
    /// Criterion value at the selected λ.
    pub fn score(&self) -> Option<T> {
        self.scores
            .iter()
            .find(|(l, _)| *l == self.lambda)
            .and_then(|(_, s)| *s)
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

fn check_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("λ grid is empty".into()));
    }
    for &l in grid {
        if !(l > T::zero()) || !l.is_finite() {
            return Err(Error::Config(format!("λ grid entries must be positive, got {l}")));
        }
    }
    Ok(())
}

/// Tracks the running argmin; near-ties go to the larger λ.
struct ArgMin<T> {
    abs_tol: T,
    best: Option<(usize, T, T)>,
}

impl<T: Scalar> ArgMin<T> {
    fn new(abs_tol: T) -> Self {
        Self { abs_tol, best: None }
    }

    fn offer(&mut self, idx: usize, lambda: T, score: T) {
        match self.best {
            None => self.best = Some((idx, lambda, score)),
            Some((_, bl, bs)) => {
                let tol = self.abs_tol + T::lit(1e-12) * bs.abs().max(score.abs());
                let better = score < bs - tol;
                let tie = (score - bs).abs() <= tol;
                if better || (tie && lambda > bl) {
                    self.best = Some((idx, lambda, score));
                }
            }
        }
    }
}

struct GridRun<T> {
    fits: Vec<Option<RawFit<T>>>,
    warnings: Vec<FitWarning>,
    first_error: Option<Error>,
}

fn run_grid<T: Scalar>(prepared: &PreparedFit<'_, T>, grid: &[T], with_trace: bool) -> GridRun<T> {
    let mut fits = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    let mut first_error = None;
    for &l in grid {
        match prepared.solve(l, with_trace) {
            Ok(f) => fits.push(Some(f)),
            Err(e) => {
                warnings.push(FitWarning::GridPointFailed {
                    lambda: l.as_f64(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
                fits.push(None);
            }
        }
    }
    GridRun {
        fits,
        warnings,
        first_error,
    }
}

fn mode_preconditions<T: Scalar>(data: &FunctionalDataset<T>, mode: FitMode) -> Result<()> {
    if mode == FitMode::Common && !data.design().is_common() {
        return Err(Error::Config(format!(
            "common-mode selection needs a common design, dataset is {}",
            data.design()
        )));
    }
    Ok(())
}

/// λ minimizing the integrated squared error against the known truth.
///
/// `opts.lambda` is ignored; its floor and knot cap apply to every fit.
pub fn select_lambda_oracle<T: Scalar>(
    data: &FunctionalDataset<T>,
    grid: &[T],
    truth: &Truth<T>,
    mode: FitMode,
    opts: &SolveOptions<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<Selection<T>> {
    check_grid(grid)?;
    mode_preconditions(data, mode)?;
    let prepared = prepare(data, mode, opts, cfg)?;
    let evaluator = prepared.ise_evaluator(|t| truth.eval(t), DEFAULT_ISE_GRID)?;
    let run = run_grid(&prepared, grid, false);
    let scores: Vec<(T, Option<T>)> = grid
        .iter()
        .zip(&run.fits)
        .map(|(&l, f)| (l, f.as_ref().map(|f| evaluator.ise(f))))
        .collect();
    let mut argmin = ArgMin::new(T::lit(1e-16) * (T::one() + evaluator.truth_energy()));
    for (i, &(l, s)) in scores.iter().enumerate() {
        if let Some(s) = s {
            argmin.offer(i, l, s);
        }
    }
    let (idx, lambda, _) = match argmin.best {
        Some(b) => b,
        None => return Err(run.first_error.expect("every grid point failed")),
    };
    let mut estimate = prepared.estimate(run.fits[idx].as_ref().expect("selected fit exists"));
    estimate.push_warnings(run.warnings.iter().cloned());
    Ok(Selection {
        lambda,
        estimate,
        scores,
        warnings: run.warnings,
    })
}

/// λ minimizing the weighted generalized cross-validation score
/// `(Σ w_i e_i² / Σ w_i) / (1 - tr(A)/N)²` of the pooled (independent) or
/// averaged (common) system.
pub fn select_lambda_gcv<T: Scalar>(
    data: &FunctionalDataset<T>,
    grid: &[T],
    mode: FitMode,
    opts: &SolveOptions<T>,
    cfg: &SobolevKernelConfig<T>,
) -> Result<Selection<T>> {
    check_grid(grid)?;
    mode_preconditions(data, mode)?;
    let prepared = prepare(data, mode, opts, cfg)?;
    let obs = prepared.observations();
    let n_obs = T::from_usize_lossy(obs.len());
    let w_sum = obs.w.iter().fold(T::zero(), |a, &w| a + w);
    let y_energy = obs
        .w
        .iter()
        .zip(&obs.y)
        .fold(T::zero(), |a, (&w, &y)| a + w * y * y)
        / w_sum;

    let mut run = run_grid(&prepared, grid, true);
    let mut scores = Vec::with_capacity(grid.len());
    for (&l, fit) in grid.iter().zip(&run.fits) {
        let score = fit.as_ref().and_then(|f| {
            let trace = f.trace.expect("trace requested");
            let slack = n_obs - trace;
            if slack <= T::lit(1e-6) * n_obs {
                run.warnings.push(FitWarning::GcvDegenerate { lambda: l.as_f64() });
                return None;
            }
            let fitted = prepared.fitted(f);
            let rss = obs
                .w
                .iter()
                .zip(&obs.y)
                .zip(&fitted)
                .fold(T::zero(), |a, ((&w, &y), &yhat)| a + w * (y - yhat) * (y - yhat))
                / w_sum;
            let denom = slack / n_obs;
            Some(rss / (denom * denom))
        });
        scores.push((l, score));
    }

    let mut argmin = ArgMin::new(T::lit(1e-16) * (T::one() + y_energy));
    for (i, &(l, s)) in scores.iter().enumerate() {
        if let Some(s) = s {
            argmin.offer(i, l, s);
        }
    }
    let idx = match argmin.best {
        Some((idx, _, _)) => idx,
        None => {
            // No usable score: fall back to the smoothest successful fit.
            let (idx, _) = grid
                .iter()
                .enumerate()
                .filter(|(i, _)| run.fits[*i].is_some())
                .fold(None, |acc: Option<(usize, T)>, (i, &l)| match acc {
                    Some((_, bl)) if bl >= l => acc,
                    _ => Some((i, l)),
                })
                .ok_or_else(|| run.first_error.clone().expect("every grid point failed"))?;
            run.warnings.push(FitWarning::GcvFallback {
                lambda: grid[idx].as_f64(),
            });
            idx
        }
    };
    let mut estimate = prepared.estimate(run.fits[idx].as_ref().expect("selected fit exists"));
    estimate.push_warnings(run.warnings.iter().cloned());
    Ok(Selection {
        lambda: grid[idx],
        estimate,
        scores,
        warnings: run.warnings,
    })
}
