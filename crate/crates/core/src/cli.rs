//! Command-line front end.
//!
//! Exit codes: 0 success, 2 unreadable or malformed input, 3 a library
//! precondition failed, 4 every sweep cell failed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{Curve, DesignKind, FitMode, FunctionalDataset};
use crate::error::Error;
use crate::estimator::{fit, log_grid, select_lambda_gcv, FitWarning, SolveOptions};
use crate::harness::{self, default_lambda_grid, parse_plan, run_lambda_profile, run_sweep};
use crate::kernel::SobolevKernelConfig;
use crate::simulation::{generate, DesignSpec, FrequencyRule, ProcessSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_ALL_FAILED: i32 = 4;

/// Number of points in the `t,ghat` output.
pub const OUTPUT_GRID: usize = 1001;

pub const DATASET_HEADER: &str = "curve_id,t,y";

#[derive(Debug, Parser)]
#[command(name = "fdmean", version, about = "Mean-function estimation for sparsely or densely sampled curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the mean curve of a dataset file.
    Estimate(EstimateArgs),
    /// Simulate a dataset file.
    Simulate(SimulateArgs),
    /// Run a sweep plan.
    Sweep(SweepArgs),
    /// ISE across a λ grid for one simulated dataset.
    LambdaProfile(ProfileArgs),
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Dataset CSV with header `curve_id,t,y`.
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// Penalty weight; ignored with `--select gcv`.
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    /// `fixed` or `gcv`.
    #[arg(long, default_value = "fixed")]
    select: String,
    /// λ grid for gcv, `lo:hi:count`.
    #[arg(long)]
    grid: Option<String>,
    /// `common` or `independent`; inferred from the locations when absent.
    #[arg(long)]
    design: Option<String>,
    /// Output CSV `t,ghat`; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    design: String,
    #[arg(long)]
    n: usize,
    /// One frequency, or a comma list of per-curve frequencies.
    #[arg(long)]
    m: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Plan file.
    plan: PathBuf,
    /// Output CSV; the summary goes to `<out>.summary.txt`. Defaults to the
    /// plan's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long, default_value = "common_fixed")]
    design: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// `lo:hi:count`; defaults to 17 points on `1e-8..=1`.
    #[arg(long)]
    grid: Option<String>,
    /// Output CSV `lambda,ise`; the interpolation ISE goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: EXIT_PRECONDITION,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::LambdaProfile(a) => cmd_lambda_profile(a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Dataset parse failure at a 1-based line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Raw rows grouped by curve id, ascending.
pub fn parse_dataset(text: &str) -> std::result::Result<Vec<(u64, Curve<f64>)>, ParseError> {
    let bad = |line: usize, message: String| ParseError { line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == DATASET_HEADER => {}
        Some((_, h)) => return Err(bad(1, format!("expected header `{DATASET_HEADER}`, got `{h}`"))),
        None => return Err(bad(1, "empty file".into())),
    }
    let mut curves: Vec<(u64, Vec<f64>, Vec<f64>)> = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            return Err(bad(line, "empty row".into()));
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(line, format!("expected 3 fields, got {}", fields.len())));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| bad(line, format!("curve_id `{}` is not a nonnegative integer", fields[0])))?;
        let t: f64 = fields[1]
            .parse()
            .map_err(|_| bad(line, format!("t `{}` is not a number", fields[1])))?;
        let y: f64 = fields[2]
            .parse()
            .map_err(|_| bad(line, format!("y `{}` is not a number", fields[2])))?;
        if !(0.0..=1.0).contains(&t) {
            return Err(bad(line, format!("t = {t} outside [0, 1]")));
        }
        if !y.is_finite() {
            return Err(bad(line, "y is not finite".into()));
        }
        match curves.last_mut() {
            Some((last, ts, ys)) if *last == id => {
                if t < *ts.last().expect("nonempty") {
                    return Err(bad(line, "rows are not sorted by t within the curve".into()));
                }
                ts.push(t);
                ys.push(y);
            }
            Some((last, _, _)) if *last > id => {
                return Err(bad(line, "rows are not sorted by curve_id".into()));
            }
            _ => curves.push((id, vec![t], vec![y])),
        }
    }
    if curves.is_empty() {
        return Err(bad(2, "no data rows".into()));
    }
    Ok(curves
        .into_iter()
        .map(|(id, points, values)| (id, Curve { points, values }))
        .collect())
}

/// Dataset CSV with curve ids `0..n`; floats in shortest round-trip form.
pub fn write_dataset(data: &FunctionalDataset<f64>) -> String {
    let mut out = format!("{DATASET_HEADER}\n");
    for (i, c) in data.curves().iter().enumerate() {
        for (t, y) in c.points.iter().zip(&c.values) {
            writeln!(out, "{i},{t},{y}").expect("write to string");
        }
    }
    out
}

/// Builds a dataset from parsed rows, tagging it by `design` or, when
/// absent, by whether every curve shares its locations.
pub fn dataset_from_rows(
    rows: Vec<(u64, Curve<f64>)>,
    design: Option<DesignKind>,
) -> crate::error::Result<FunctionalDataset<f64>> {
    let curves: Vec<Curve<f64>> = rows.into_iter().map(|(_, c)| c).collect();
    let kind = match design {
        Some(k) => k,
        None => {
            let first = &curves[0].points;
            if curves.iter().all(|c| &c.points == first) {
                DesignKind::CommonFixed
            } else {
                DesignKind::Independent
            }
        }
    };
    FunctionalDataset::new(curves, kind)
}

fn parse_grid(spec: Option<&str>) -> std::result::Result<Vec<f64>, Failure> {
    let Some(spec) = spec else {
        return Ok(default_lambda_grid());
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let parsed = match parts.as_slice() {
        [lo, hi, count] => lo
            .parse::<f64>()
            .ok()
            .zip(hi.parse::<f64>().ok())
            .zip(count.parse::<usize>().ok())
            .map(|((lo, hi), count)| (lo, hi, count)),
        _ => None,
    };
    match parsed {
        Some((lo, hi, count)) if lo > 0.0 && hi >= lo && count >= 1 => Ok(log_grid(lo, hi, count)),
        _ => Err(Failure::input(format!("--grid expects `lo:hi:count` with 0 < lo <= hi, got `{spec}`"))),
    }
}

fn parse_design(s: &str) -> std::result::Result<DesignKind, Failure> {
    s.parse()
        .map_err(|_| Failure::input(format!("unknown design `{s}`")))
}

fn write_file(path: &Path, contents: &str) -> std::result::Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("metadata serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct EstimateMeta<'a> {
    design: &'a str,
    selection: &'a str,
    lambda: f64,
    lambda_effective: f64,
    r: usize,
    knots: usize,
    roughness: f64,
    warnings: &'a [FitWarning],
}

fn cmd_estimate(a: EstimateArgs) -> CmdResult {
    let text = fs::read_to_string(&a.input)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", a.input.display())))?;
    let rows = parse_dataset(&text).map_err(|e| Failure::input(format!("{}: {e}", a.input.display())))?;
    let design = a.design.as_deref().map(parse_design).transpose()?;
    let data = dataset_from_rows(rows, design)?;
    let cfg = SobolevKernelConfig::<f64>::new(a.r)?;
    let mode = FitMode::for_design(data.design());
    let est = match a.select.as_str() {
        "fixed" => fit(&data, mode, &SolveOptions::new(a.lambda), &cfg)?,
        "gcv" => {
            let grid = parse_grid(a.grid.as_deref())?;
            select_lambda_gcv(&data, &grid, mode, &SolveOptions::default(), &cfg)?.estimate
        }
        other => return Err(Failure::input(format!("--select must be `fixed` or `gcv`, got `{other}`"))),
    };
    let mut csv = String::from("t,ghat\n");
    for i in 0..OUTPUT_GRID {
        let t = i as f64 / (OUTPUT_GRID - 1) as f64;
        writeln!(csv, "{t},{}", est.evaluate(t, &cfg)?).expect("write to string");
    }
    let meta = EstimateMeta {
        design: data.design().as_str(),
        selection: &a.select,
        lambda: est.lambda(),
        lambda_effective: est.lambda_effective(),
        r: a.r,
        knots: est.knots().len(),
        roughness: est.roughness(&cfg)?,
        warnings: est.warnings(),
    };
    write_file(&a.out, &csv)?;
    write_file(&sidecar(&a.out, ".meta.json"), &to_json(&meta))?;
    Ok(EXIT_OK)
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let kind = parse_design(&a.design)?;
    let ms: Vec<usize> = a
        .m
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::input(format!("--m expects an integer or a comma list, got `{}`", a.m)))?;
    let freq = if ms.len() == 1 {
        FrequencyRule::Fixed(ms[0])
    } else {
        FrequencyRule::PerCurve(ms)
    };
    let design = DesignSpec {
        kind,
        n: a.n,
        freq,
        seed: a.seed,
    };
    let data = generate(&design, &ProcessSpec::default())?;
    write_file(&a.out, &write_dataset(&data))?;
    Ok(EXIT_OK)
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let text = fs::read_to_string(&a.plan)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", a.plan.display())))?;
    let plan = parse_plan(&text).map_err(|e| Failure::input(format!("{}: {e}", a.plan.display())))?;
    let out = a
        .out
        .or_else(|| plan.output.clone())
        .ok_or_else(|| Failure::input("no output path: pass --out or set `output` in the plan"))?;
    let result = run_sweep(&plan, a.workers)?;
    write_file(&out, &harness::write_sweep_csv(&result.records))?;
    write_file(&sidecar(&out, ".summary.txt"), &harness::write_summary(&plan, &result))?;
    for f in &result.failures {
        eprintln!("cell {} failed: {}", f.cell.label(), f.error);
    }
    Ok(if result.all_failed() { EXIT_ALL_FAILED } else { EXIT_OK })
}

#[derive(Serialize)]
struct ProfileMeta {
    design: String,
    n: usize,
    m: usize,
    seed: u64,
    r: usize,
    interpolation_ise: f64,
    min_ise: f64,
}

fn cmd_lambda_profile(a: ProfileArgs) -> CmdResult {
    let kind = parse_design(&a.design)?;
    let grid = parse_grid(a.grid.as_deref())?;
    let design = DesignSpec::new(kind, a.n, a.m, a.seed);
    let profile = run_lambda_profile(&design, &ProcessSpec::default(), &grid, a.r)?;
    let mut csv = String::from("lambda,ise\n");
    for (l, e) in &profile.points {
        writeln!(csv, "{l:.16e},{e:.16e}").expect("write to string");
    }
    let meta = ProfileMeta {
        design: kind.to_string(),
        n: a.n,
        m: a.m,
        seed: a.seed,
        r: a.r,
        interpolation_ise: profile.interpolation_ise,
        min_ise: profile.min_ise(),
    };
    write_file(&a.out, &csv)?;
    write_file(&sidecar(&a.out, ".meta.json"), &to_json(&meta))?;
    Ok(EXIT_OK)
}
