//! Monte Carlo sweeps over designs, sample sizes and sampling frequencies.
//!
//! A [`SweepPlan`] lists cells; each cell is simulated `replicates` times,
//! λ is chosen per replicate, and the ISE of the resulting fit is recorded.
//! Replicates are independent tasks run on a bounded rayon pool. Every
//! dataset is keyed by `(plan seed, cell content, replicate)`, so results do
//! not depend on the worker count, on task order, or on the position of a
//! cell within the plan.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::data::{DesignKind, FitMode, FunctionalDataset};
use crate::error::{Error, Result};
use crate::estimator::{fit, log_grid, select_lambda_gcv, select_lambda_oracle, SolveOptions};
use crate::kernel::SobolevKernelConfig;
use crate::metrics::{fit_rate_slope, harmonic_mean, ise, IseRecord, RatePredictor, SlopeFit, DEFAULT_ISE_GRID};
use crate::simulation::{generate_replicate, DesignSpec, FrequencyRule, ProcessSpec};

pub mod plan;

pub use plan::{parse_plan, PlanError};

/// Oracle grid used when a plan does not give one: 17 points, `1e-8..=1`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-8, 1.0, 17)
}

/// Knot cap for pooled fits inside sweeps.
pub const SWEEP_MAX_KNOTS: usize = 256;

/// Slack, in pooled standard errors, for "the designs agree" comparisons.
pub const AGREEMENT_SE_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub enum SelectionMode {
    Oracle(Vec<f64>),
    Gcv(Vec<f64>),
    Fixed(f64),
}

impl SelectionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMode::Oracle(_) => "oracle",
            SelectionMode::Gcv(_) => "gcv",
            SelectionMode::Fixed(_) => "fixed",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SelectionMode::Oracle(g) | SelectionMode::Gcv(g) => {
                if g.is_empty() {
                    return Err(Error::Config("λ grid is empty".into()));
                }
                if g.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                    return Err(Error::Config("λ grid entries must be positive and finite".into()));
                }
            }
            SelectionMode::Fixed(l) => {
                if !(*l >= 0.0) || !l.is_finite() {
                    return Err(Error::Config(format!("fixed λ must be finite and >= 0, got {l}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub design: DesignKind,
    pub n: usize,
    pub freq: FrequencyRule,
}

impl CellSpec {
    pub fn new(design: DesignKind, n: usize, m: usize) -> Self {
        Self {
            design,
            n,
            freq: FrequencyRule::Fixed(m),
        }
    }

    pub fn label(&self) -> String {
        let m = match &self.freq {
            FrequencyRule::Fixed(m) => m.to_string(),
            FrequencyRule::PerCurve(ms) => format!("list[{}]", ms.len()),
            FrequencyRule::UniformRange { min, max } => format!("{min}..={max}"),
        };
        format!("{} n={} m={}", self.design, self.n, m)
    }

    /// Stream seed derived from the plan seed and the cell's content.
    fn seed(&self, master: u64) -> u64 {
        let mut h = Fnv::new(master);
        h.write(self.design.as_str().as_bytes());
        h.write(&(self.n as u64).to_le_bytes());
        match &self.freq {
            FrequencyRule::Fixed(m) => {
                h.write(b"fixed");
                h.write(&(*m as u64).to_le_bytes());
            }
            FrequencyRule::PerCurve(ms) => {
                h.write(b"list");
                for &m in ms {
                    h.write(&(m as u64).to_le_bytes());
                }
            }
            FrequencyRule::UniformRange { min, max } => {
                h.write(b"range");
                h.write(&(*min as u64).to_le_bytes());
                h.write(&(*max as u64).to_le_bytes());
            }
        }
        h.finish()
    }

    fn design_spec(&self, master: u64) -> DesignSpec {
        DesignSpec {
            kind: self.design,
            n: self.n,
            freq: self.freq.clone(),
            seed: self.seed(master),
        }
    }
}

/// 64-bit FNV-1a, seeded.
struct Fnv(u64);

impl Fnv {
    fn new(seed: u64) -> Self {
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        h.write(&seed.to_le_bytes());
        h
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Log-log regression of cell mean ISE, optionally restricted to one design.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub predictor: RatePredictor,
    pub design: Option<DesignKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub cells: Vec<CellSpec>,
    pub replicates: usize,
    pub selection: SelectionMode,
    pub seed: u64,
    pub r: usize,
    pub process: ProcessSpec,
    pub max_knots: usize,
    pub regressions: Vec<RegressionSpec>,
    pub output: Option<PathBuf>,
}

impl SweepPlan {
    pub fn new(cells: Vec<CellSpec>, replicates: usize, selection: SelectionMode, seed: u64) -> Self {
        Self {
            cells,
            replicates,
            selection,
            seed,
            r: 2,
            process: ProcessSpec::default(),
            max_knots: SWEEP_MAX_KNOTS,
            regressions: Vec::new(),
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("plan has no cells".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        self.selection.validate()?;
        self.process.validate()?;
        SobolevKernelConfig::<f64>::new(self.r)?;
        for (i, c) in self.cells.iter().enumerate() {
            c.design_spec(self.seed)
                .validate()
                .map_err(|e| Error::Config(format!("cell {i} ({}): {e}", c.label())))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: CellSpec,
    /// Mean sampling frequency across replicates (harmonic within each).
    pub m: f64,
    pub mean_ise: f64,
    pub std_error: f64,
    pub mean_lambda: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: CellSpec,
    pub replicate: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeOutcome {
    pub spec: RegressionSpec,
    pub fit: std::result::Result<SlopeFit, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Records of successful cells, ordered by (cell, replicate).
    pub records: Vec<IseRecord>,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<CellFailure>,
    pub slopes: Vec<SlopeOutcome>,
}

impl SweepResult {
    pub fn all_failed(&self) -> bool {
        self.cells.is_empty() && !self.failures.is_empty()
    }

    pub fn cell(&self, design: DesignKind, n: usize, m: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.cell.design == design && c.cell.n == n && c.cell.freq == FrequencyRule::Fixed(m))
    }
}

/// `sqrt(se_a² + se_b²)`.
pub fn pooled_se(a: &CellSummary, b: &CellSummary) -> f64 {
    a.std_error.hypot(b.std_error)
}

/// Outcome of one replicate: `(λ, ISE, m)`.
fn run_replicate(plan: &SweepPlan, cell: &CellSpec, replicate: usize, cfg: &SobolevKernelConfig<f64>) -> Result<(f64, f64, f64)> {
    let design = cell.design_spec(plan.seed);
    let data = generate_replicate(&design, &plan.process, replicate as u64)?;
    let m = match cell.freq.fixed() {
        Some(m) => m as f64,
        None => harmonic_mean(&data.frequencies())?,
    };
    let (lambda, err) = select_and_score(&data, &plan.selection, plan.max_knots, cfg)?;
    Ok((lambda, err, m))
}

fn select_and_score(
    data: &FunctionalDataset<f64>,
    selection: &SelectionMode,
    max_knots: usize,
    cfg: &SobolevKernelConfig<f64>,
) -> Result<(f64, f64)> {
    let mode = FitMode::for_design(data.design());
    let truth = data
        .truth()
        .ok_or_else(|| Error::Config("simulated dataset carries no truth".into()))?;
    let opts = SolveOptions::default().with_max_knots(max_knots);
    match selection {
        SelectionMode::Oracle(grid) => {
            let sel = select_lambda_oracle(data, grid, truth, mode, &opts, cfg)?;
            let score = sel.score().expect("selected λ has a score");
            Ok((sel.lambda, score))
        }
        SelectionMode::Gcv(grid) => {
            let sel = select_lambda_gcv(data, grid, mode, &opts, cfg)?;
            Ok((sel.lambda, ise(&sel.estimate, truth, DEFAULT_ISE_GRID, cfg)?))
        }
        SelectionMode::Fixed(lambda) => {
            let opts = SolveOptions { lambda: *lambda, ..opts };
            let est = fit(data, mode, &opts, cfg)?;
            Ok((*lambda, ise(&est, truth, DEFAULT_ISE_GRID, cfg)?))
        }
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every (cell, replicate) task on `workers` threads.
///
/// A cell whose replicate fails is reported in `failures` with the first
/// failing replicate and contributes no records.
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<SweepResult> {
    plan.validate()?;
    let cfg = SobolevKernelConfig::<f64>::new(plan.r)?;
    let tasks: Vec<(usize, usize)> = (0..plan.cells.len())
        .flat_map(|c| (0..plan.replicates).map(move |k| (c, k)))
        .collect();
    let pool = build_pool(workers)?;
    let outcomes: Vec<Result<(f64, f64, f64)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, k)| run_replicate(plan, &plan.cells[c], k, &cfg))
            .collect()
    });

    let mut records = Vec::with_capacity(outcomes.len());
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (c, chunk) in outcomes.chunks(plan.replicates).enumerate() {
        let cell = &plan.cells[c];
        if let Some((k, e)) = chunk
            .iter()
            .enumerate()
            .find_map(|(k, o)| o.as_ref().err().map(|e| (k, e.clone())))
        {
            failures.push(CellFailure {
                cell: cell.clone(),
                replicate: k,
                error: e,
            });
            continue;
        }
        let ok: Vec<(f64, f64, f64)> = chunk.iter().map(|o| *o.as_ref().expect("checked")).collect();
        for (k, &(lambda, err, m)) in ok.iter().enumerate() {
            records.push(IseRecord {
                design: cell.design,
                n: cell.n,
                m,
                replicate: k,
                lambda,
                selection: plan.selection.as_str().to_string(),
                ise: err,
            });
        }
        let ises: Vec<f64> = ok.iter().map(|o| o.1).collect();
        let (mean_ise, std_error) = mean_and_se(&ises);
        cells.push(CellSummary {
            cell: cell.clone(),
            m: ok.iter().map(|o| o.2).sum::<f64>() / ok.len() as f64,
            mean_ise,
            std_error,
            mean_lambda: ok.iter().map(|o| o.0).sum::<f64>() / ok.len() as f64,
            replicates: ok.len(),
        });
    }

    let slopes = plan
        .regressions
        .iter()
        .map(|spec| SlopeOutcome {
            spec: spec.clone(),
            fit: regress(spec, &cells).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(SweepResult {
        records,
        cells,
        failures,
        slopes,
    })
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn regress(spec: &RegressionSpec, cells: &[CellSummary]) -> Result<SlopeFit> {
    let mut pts: Vec<(f64, f64)> = cells
        .iter()
        .filter(|c| spec.design.map_or(true, |d| c.cell.design == d))
        .map(|c| (spec.predictor.abscissa(c.cell.n, c.m), c.mean_ise))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    fit_rate_slope(spec.predictor, &pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    CommonSparse,
    CommonDense,
    IndependentSparse,
    IndependentDense,
}

impl Regime {
    pub fn predictor(self) -> RatePredictor {
        match self {
            Regime::CommonSparse => RatePredictor::LogM,
            Regime::CommonDense | Regime::IndependentDense => RatePredictor::LogN,
            Regime::IndependentSparse => RatePredictor::LogNm,
        }
    }

    pub fn is_sparse(self) -> bool {
        matches!(self, Regime::CommonSparse | Regime::IndependentSparse)
    }

    /// Theoretical slope for order `r`.
    pub fn target_slope(self, r: usize) -> f64 {
        let r = r as f64;
        match self {
            Regime::CommonSparse => -2.0 * r,
            Regime::CommonDense | Regime::IndependentDense => -1.0,
            Regime::IndependentSparse => -2.0 * r / (2.0 * r + 1.0),
        }
    }

    /// `m` must sit at most / at least a factor 2 from `n^(1/2r)`.
    pub fn admits(self, r: usize, n: usize, m: usize) -> bool {
        let boundary = (n as f64).powf(1.0 / (2.0 * r as f64));
        if self.is_sparse() {
            m as f64 <= 2.0 * boundary
        } else {
            m as f64 >= 2.0 * boundary
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "common_sparse" => Ok(Regime::CommonSparse),
            "common_dense" => Ok(Regime::CommonDense),
            "independent_sparse" => Ok(Regime::IndependentSparse),
            "independent_dense" => Ok(Regime::IndependentDense),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

/// Grid and run settings for [`run_transition_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOverrides {
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    pub common_design: DesignKind,
    pub max_knots: usize,
    pub workers: usize,
}

impl TransitionOverrides {
    pub fn new(ns: Vec<usize>, ms: Vec<usize>) -> Self {
        Self {
            ns,
            ms,
            replicates: 50,
            seed: 1,
            lambda_grid: default_lambda_grid(),
            common_design: DesignKind::CommonFixed,
            max_knots: SWEEP_MAX_KNOTS,
            workers: 1,
        }
    }
}

/// Oracle sweep over `ns × ms` and the regime's log-log slope.
pub fn run_transition_sweep(r: usize, regime: Regime, o: &TransitionOverrides) -> Result<SlopeFit> {
    let design = match regime {
        Regime::CommonSparse | Regime::CommonDense => o.common_design,
        Regime::IndependentSparse | Regime::IndependentDense => DesignKind::Independent,
    };
    if matches!(regime, Regime::CommonSparse | Regime::CommonDense) && !design.is_common() {
        return Err(Error::Config(format!("regime needs a common design, got {design}")));
    }
    let mut cells = Vec::new();
    for &n in &o.ns {
        for &m in &o.ms {
            if !regime.admits(r, n, m) {
                let side = if regime.is_sparse() { "m <= 2" } else { "m >= 2" };
                return Err(Error::Config(format!(
                    "cell n={n} m={m} violates the regime condition {side}·n^(1/{})",
                    2 * r
                )));
            }
            cells.push(CellSpec::new(design, n, m));
        }
    }
    let mut plan = SweepPlan::new(cells, o.replicates, SelectionMode::Oracle(o.lambda_grid.clone()), o.seed);
    plan.r = r;
    plan.max_knots = o.max_knots;
    plan.regressions.push(RegressionSpec {
        predictor: regime.predictor(),
        design: Some(design),
    });
    let result = run_sweep(&plan, o.workers)?;
    if let Some(f) = result.failures.first() {
        return Err(f.error.clone());
    }
    result
        .slopes
        .into_iter()
        .next()
        .expect("one regression")
        .fit
        .map_err(Error::Config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaProfile {
    /// `(λ, ISE)` in grid order.
    pub points: Vec<(f64, f64)>,
    /// ISE of the interpolating fit (λ at the interpolation floor).
    pub interpolation_ise: f64,
}

impl LambdaProfile {
    pub fn min_ise(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }
}

/// One simulated dataset (replicate 0), fitted at every grid λ.
pub fn run_lambda_profile(
    design: &DesignSpec,
    process: &ProcessSpec,
    grid: &[f64],
    r: usize,
) -> Result<LambdaProfile> {
    let cfg = SobolevKernelConfig::<f64>::new(r)?;
    let data = generate_replicate(design, process, 0)?;
    let truth = data.truth().expect("simulated data has a truth");
    let mode = FitMode::for_design(design.kind);
    let opts = SolveOptions::default();
    let sel = select_lambda_oracle(&data, grid, truth, mode, &opts, &cfg)?;
    let points = sel
        .scores
        .iter()
        .map(|&(l, s)| {
            s.map(|s| (l, s))
                .ok_or_else(|| Error::Numerical {
                    message: format!("fit failed at λ = {l}"),
                    condition: f64::NAN,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let interp = SolveOptions {
        lambda: opts.interpolation_floor,
        ..opts
    };
    let est = fit(&data, mode, &interp, &cfg)?;
    Ok(LambdaProfile {
        points,
        interpolation_ise: ise(&est, truth, DEFAULT_ISE_GRID, &cfg)?,
    })
}

/// `design,n,m,replicate,lambda,selection,ise`, floats to 17 significant digits.
pub fn write_sweep_csv(records: &[IseRecord]) -> String {
    let mut out = String::from("design,n,m,replicate,lambda,selection,ise\n");
    for r in records {
        writeln!(
            out,
            "{},{},{:.16e},{},{:.16e},{},{:.16e}",
            r.design, r.n, r.m, r.replicate, r.lambda, r.selection, r.ise
        )
        .expect("write to string");
    }
    out
}

/// Human-readable report: settings, per-cell mean ± SE, failures, slopes.
pub fn write_summary(plan: &SweepPlan, result: &SweepResult) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "seed = {}", plan.seed);
    let _ = writeln!(w, "replicates = {}", plan.replicates);
    let _ = writeln!(w, "r = {}", plan.r);
    let _ = writeln!(w, "noise_sd = {}", plan.process.noise_sd);
    let _ = writeln!(w, "max_knots = {}", plan.max_knots);
    match &plan.selection {
        SelectionMode::Oracle(g) | SelectionMode::Gcv(g) => {
            let grid: Vec<String> = g.iter().map(|l| format!("{l:e}")).collect();
            let _ = writeln!(w, "selection = {}", plan.selection.as_str());
            let _ = writeln!(w, "lambda_grid = {}", grid.join(" "));
        }
        SelectionMode::Fixed(l) => {
            let _ = writeln!(w, "selection = fixed");
            let _ = writeln!(w, "lambda = {l:e}");
        }
    }
    let _ = writeln!(w);
    let _ = writeln!(w, "{:<14} {:>6} {:>9} {:>14} {:>12} {:>12}", "design", "n", "m", "mean_ise", "se", "mean_lambda");
    for c in &result.cells {
        let _ = writeln!(
            w,
            "{:<14} {:>6} {:>9.3} {:>14.6e} {:>12.4e} {:>12.4e}",
            c.cell.design.as_str(),
            c.cell.n,
            c.m,
            c.mean_ise,
            c.std_error,
            c.mean_lambda
        );
    }
    if !result.failures.is_empty() {
        let _ = writeln!(w);
        let _ = writeln!(w, "failed cells:");
        for f in &result.failures {
            let _ = writeln!(w, "  {} (replicate {}): {}", f.cell.label(), f.replicate, f.error);
        }
    }
    if !result.slopes.is_empty() {
        let _ = writeln!(w);
        let _ = writeln!(w, "rate regressions:");
        for s in &result.slopes {
            let scope = s.spec.design.map_or("all".to_string(), |d| d.to_string());
            match &s.fit {
                Ok(f) => {
                    let _ = writeln!(
                        w,
                        "  {} on {}: slope = {:.4}, intercept = {:.4}, r2 = {:.4}, points = {}",
                        scope, f.predictor, f.slope, f.intercept, f.r_squared, f.points
                    );
                }
                Err(e) => {
                    let _ = writeln!(w, "  {} on {}: not fitted ({e})", scope, s.spec.predictor.as_str());
                }
            }
        }
    }
    s
}
