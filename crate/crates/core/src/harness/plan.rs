//! Plain-text sweep plans.
//!
//! ```text
//! # global settings
//! seed = 7
//! replicates = 200
//! selection = oracle          # oracle | gcv | fixed
//! lambda_grid = 1e-8:1:17     # lo:hi:count (log-spaced) or a comma list
//! lambda = 1e-4               # only with selection = fixed
//! r = 2
//! noise_sd = 0.5
//! num_terms = 50
//! max_knots = 256
//! output = results.csv
//!
//! [cell]
//! design = common_fixed       # common_fixed | common_random | independent
//! n = 100
//! m = 10, 20, 50              # one cell per (n, m) pair
//!
//! [cell]
//! design = independent
//! n = 3
//! m_list = 1, 2, 3            # per-curve frequencies; or m_range = 2:8
//!
//! [regression]
//! predictor = log_m           # log_m | log_n | log_nm
//! design = common_fixed       # optional filter
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use crate::data::DesignKind;
use crate::estimator::log_grid;
use crate::metrics::RatePredictor;
use crate::simulation::{FrequencyRule, ProcessSpec};

use super::{default_lambda_grid, CellSpec, RegressionSpec, SelectionMode, SweepPlan, SWEEP_MAX_KNOTS};

/// Parse failure; `line` is 1-based, 0 for whole-file problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "plan: {}", self.message)
        } else {
            write!(f, "plan line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for PlanError {}

type Parsed<T> = std::result::Result<T, PlanError>;

fn err<T>(line: usize, message: impl Into<String>) -> Parsed<T> {
    Err(PlanError {
        line,
        message: message.into(),
    })
}

#[derive(Default)]
struct Section {
    line: usize,
    kind: &'static str,
    entries: HashMap<String, (usize, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn finish(self) -> Parsed<()> {
        let mut left: Vec<_> = self.entries.into_iter().collect();
        left.sort_by_key(|(_, (line, _))| *line);
        match left.first() {
            Some((key, (line, _))) => err(*line, format!("unknown key `{key}` in {}", self.kind)),
            None => Ok(()),
        }
    }
}

fn number<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Parsed<T> {
    v.trim()
        .parse()
        .or_else(|_| err(line, format!("`{key}` expects a number, got `{}`", v.trim())))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Parsed<Vec<T>> {
    v.split(',').map(|p| number(line, key, p)).collect()
}

fn lambda_grid(line: usize, v: &str) -> Parsed<Vec<f64>> {
    let parts: Vec<&str> = v.split(':').collect();
    match parts.len() {
        1 => list(line, "lambda_grid", v),
        3 => {
            let lo: f64 = number(line, "lambda_grid", parts[0])?;
            let hi: f64 = number(line, "lambda_grid", parts[1])?;
            let count: usize = number(line, "lambda_grid", parts[2])?;
            if !(lo > 0.0) || !(hi >= lo) || count == 0 {
                return err(line, "lambda_grid needs 0 < lo <= hi and count >= 1");
            }
            Ok(log_grid(lo, hi, count))
        }
        _ => err(line, "lambda_grid is `lo:hi:count` or a comma list"),
    }
}

fn design(line: usize, v: &str) -> Parsed<DesignKind> {
    v.trim()
        .parse()
        .or_else(|_| err(line, format!("unknown design `{}`", v.trim())))
}

/// Parses a plan and checks it against [`SweepPlan::validate`].
pub fn parse_plan(text: &str) -> Parsed<SweepPlan> {
    let mut global = Section {
        kind: "global settings",
        ..Section::default()
    };
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            let kind = match content {
                "[cell]" => "cell",
                "[regression]" => "regression",
                other => return err(line, format!("unknown section `{other}`")),
            };
            sections.push(Section {
                line,
                kind,
                entries: HashMap::new(),
            });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return err(line, format!("expected `key = value`, got `{content}`"));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return err(line, "empty key");
        }
        let target = sections.last_mut().unwrap_or(&mut global);
        if target.entries.contains_key(&key) {
            return err(line, format!("duplicate key `{key}`"));
        }
        target.entries.insert(key, (line, value.trim().to_string()));
    }

    let seed = match global.take("seed") {
        Some((l, v)) => number(l, "seed", &v)?,
        None => 0,
    };
    let replicates = match global.take("replicates") {
        Some((l, v)) => number(l, "replicates", &v)?,
        None => 1,
    };
    let grid = match global.take("lambda_grid") {
        Some((l, v)) => Some((l, lambda_grid(l, &v)?)),
        None => None,
    };
    let lambda = match global.take("lambda") {
        Some((l, v)) => Some((l, number::<f64>(l, "lambda", &v)?)),
        None => None,
    };
    let (sel_line, sel) = global.take("selection").unwrap_or((0, "oracle".into()));
    let selection = match sel.as_str() {
        "oracle" | "gcv" => {
            if let Some((l, _)) = lambda {
                return err(l, format!("`lambda` is only used with selection = fixed, not {sel}"));
            }
            let g = grid.map(|g| g.1).unwrap_or_else(default_lambda_grid);
            if sel == "oracle" {
                SelectionMode::Oracle(g)
            } else {
                SelectionMode::Gcv(g)
            }
        }
        "fixed" => {
            if let Some((l, _)) = grid {
                return err(l, "`lambda_grid` is not used with selection = fixed");
            }
            match lambda {
                Some((_, v)) => SelectionMode::Fixed(v),
                None => return err(sel_line, "selection = fixed needs `lambda`"),
            }
        }
        other => return err(sel_line, format!("unknown selection `{other}`")),
    };
    let r = match global.take("r") {
        Some((l, v)) => number(l, "r", &v)?,
        None => 2,
    };
    let num_terms = match global.take("num_terms") {
        Some((l, v)) => number(l, "num_terms", &v)?,
        None => crate::simulation::DEFAULT_NUM_TERMS,
    };
    let mut process = ProcessSpec::truncated(num_terms);
    if let Some((l, v)) = global.take("noise_sd") {
        process.noise_sd = number(l, "noise_sd", &v)?;
    }
    let max_knots = match global.take("max_knots") {
        Some((l, v)) => number(l, "max_knots", &v)?,
        None => SWEEP_MAX_KNOTS,
    };
    let output = global.take("output").map(|(_, v)| PathBuf::from(v));
    global.finish()?;

    let mut cells = Vec::new();
    let mut regressions = Vec::new();
    for mut s in sections {
        match s.kind {
            "cell" => {
                let Some((dl, dv)) = s.take("design") else {
                    return err(s.line, "[cell] needs `design`");
                };
                let kind = design(dl, &dv)?;
                let Some((nl, nv)) = s.take("n") else {
                    return err(s.line, "[cell] needs `n`");
                };
                let ns: Vec<usize> = list(nl, "n", &nv)?;
                let freqs: Vec<FrequencyRule> = match (s.take("m"), s.take("m_list"), s.take("m_range")) {
                    (Some((l, v)), None, None) => list::<usize>(l, "m", &v)?
                        .into_iter()
                        .map(FrequencyRule::Fixed)
                        .collect(),
                    (None, Some((l, v)), None) => vec![FrequencyRule::PerCurve(list(l, "m_list", &v)?)],
                    (None, None, Some((l, v))) => {
                        let Some((a, b)) = v.split_once(':') else {
                            return err(l, "m_range is `min:max`");
                        };
                        vec![FrequencyRule::UniformRange {
                            min: number(l, "m_range", a)?,
                            max: number(l, "m_range", b)?,
                        }]
                    }
                    (None, None, None) => return err(s.line, "[cell] needs one of `m`, `m_list`, `m_range`"),
                    _ => return err(s.line, "[cell] takes only one of `m`, `m_list`, `m_range`"),
                };
                let first = cells.len();
                for &n in &ns {
                    for f in &freqs {
                        cells.push(CellSpec {
                            design: kind,
                            n,
                            freq: f.clone(),
                        });
                    }
                }
                let line = s.line;
                s.finish()?;
                let probe = SweepPlan::new(cells[first..].to_vec(), 1, SelectionMode::Fixed(1.0), seed);
                if let Err(e) = probe.validate() {
                    return err(line, e.to_string());
                }
            }
            "regression" => {
                let Some((pl, pv)) = s.take("predictor") else {
                    return err(s.line, "[regression] needs `predictor`");
                };
                let predictor = RatePredictor::parse(&pv).or_else(|e| err(pl, e.to_string()))?;
                let filter = match s.take("design") {
                    Some((l, v)) => Some(design(l, &v)?),
                    None => None,
                };
                s.finish()?;
                regressions.push(RegressionSpec {
                    predictor,
                    design: filter,
                });
            }
            _ => unreachable!("section kinds are fixed above"),
        }
    }

    let mut plan = SweepPlan::new(cells, replicates, selection, seed);
    plan.r = r;
    plan.process = process;
    plan.max_knots = max_knots;
    plan.regressions = regressions;
    plan.output = output;
    plan.validate().or_else(|e| err(0, e.to_string()))?;
    Ok(plan)
}
