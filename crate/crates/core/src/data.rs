//! Discretely observed curves: the input to every estimator.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How sampling locations relate across curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Shared deterministic grid `T_j = 2j / (2m + 1)`.
    CommonFixed,
    /// One uniform sample of locations shared by every curve.
    CommonRandom,
    /// Each curve draws its own uniform locations.
    Independent,
}

impl DesignKind {
    pub fn is_common(self) -> bool {
        !matches!(self, DesignKind::Independent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::CommonFixed => "common_fixed",
            DesignKind::CommonRandom => "common_random",
            DesignKind::Independent => "independent",
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "common_fixed" | "common" => Ok(DesignKind::CommonFixed),
            "common_random" => Ok(DesignKind::CommonRandom),
            "independent" => Ok(DesignKind::Independent),
            other => Err(Error::Config(format!("unknown design `{other}`"))),
        }
    }
}

/// Which objective a fit uses: pooled column means, or per-curve weights `1/m_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Common,
    Independent,
}

impl FitMode {
    pub fn for_design(design: DesignKind) -> Self {
        if design.is_common() {
            FitMode::Common
        } else {
            FitMode::Independent
        }
    }
}

impl FromStr for FitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "common" | "common_fixed" | "common_random" => Ok(FitMode::Common),
            "independent" => Ok(FitMode::Independent),
            other => Err(Error::Config(format!("unknown fit mode `{other}`"))),
        }
    }
}

/// Known mean function of a simulated process, used only for oracle tuning.
#[derive(Clone)]
pub struct Truth<T>(Arc<dyn Fn(T) -> T + Send + Sync>);

impl<T> Truth<T> {
    pub fn new(f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        Truth(Arc::new(f))
    }

    pub fn eval(&self, t: T) -> T {
        (self.0)(t)
    }
}

impl<T> fmt::Debug for Truth<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Truth(..)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve<T> {
    pub points: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> Curve<T> {
    /// Sorts observations by location; rejects empty or mismatched input.
    pub fn new(points: Vec<T>, values: Vec<T>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Config(format!(
                "curve has {} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::Config("curve has no observations".into()));
        }
        let mut pairs: Vec<(T, T)> = points.into_iter().zip(values).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let (points, values) = pairs.into_iter().unzip();
        Ok(Self { points, values })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FunctionalDataset<T> {
    curves: Vec<Curve<T>>,
    design: DesignKind,
    truth: Option<Truth<T>>,
}

impl<T: Scalar> FunctionalDataset<T> {
    pub fn new(curves: Vec<Curve<T>>, design: DesignKind) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::Config("dataset needs at least one curve".into()));
        }
        for (i, c) in curves.iter().enumerate() {
            if c.is_empty() || c.points.len() != c.values.len() {
                return Err(Error::Config(format!("curve {i} is empty or ragged")));
            }
            for (&t, &y) in c.points.iter().zip(&c.values) {
                let tf = t.as_f64();
                if !(0.0..=1.0).contains(&tf) {
                    return Err(Error::Domain(format!("curve {i}: point {tf} outside [0, 1]")));
                }
                if !y.is_finite() {
                    return Err(Error::Domain(format!("curve {i}: non-finite value")));
                }
            }
            if c.points.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Config(format!("curve {i}: points are not sorted")));
            }
        }
        if design.is_common() {
            let first = &curves[0].points;
            for (i, c) in curves.iter().enumerate().skip(1) {
                let same = c.points.len() == first.len()
                    && c.points.iter().zip(first).all(|(a, b)| a == b);
                if !same {
                    return Err(Error::Config(format!(
                        "design {design} requires shared locations, curve {i} differs"
                    )));
                }
            }
        }
        Ok(Self {
            curves,
            design,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: Truth<T>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn curves(&self) -> &[Curve<T>] {
        &self.curves
    }

    pub fn design(&self) -> DesignKind {
        self.design
    }

    pub fn truth(&self) -> Option<&Truth<T>> {
        self.truth.as_ref()
    }

    pub fn num_curves(&self) -> usize {
        self.curves.len()
    }

    pub fn frequencies(&self) -> Vec<usize> {
        self.curves.iter().map(Curve::len).collect()
    }

    pub fn total_observations(&self) -> usize {
        self.curves.iter().map(Curve::len).sum()
    }

    /// Shared locations, if every curve has the same point list.
    pub fn shared_points(&self) -> Option<&[T]> {
        let first = &self.curves[0].points;
        let shared = self.curves.iter().all(|c| {
            c.points.len() == first.len()
                && c.points.iter().zip(first).all(|(a, b)| a == b)
        });
        shared.then_some(first.as_slice())
    }

    /// Column means `Ȳ_·j` for a common design.
    pub fn column_means(&self) -> Result<Vec<T>> {
        let points = self.shared_points().ok_or_else(|| {
            Error::Config("column means need a common design".into())
        })?;
        let n = T::from_usize_lossy(self.curves.len());
        let mut acc = vec![T::zero(); points.len()];
        for c in &self.curves {
            for (a, &y) in acc.iter_mut().zip(&c.values) {
                *a = *a + y;
            }
        }
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// Same dataset with values mapped through `f(curve, j, y)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, T) -> T) -> Self {
        let curves = self
            .curves
            .iter()
            .enumerate()
            .map(|(i, c)| Curve {
                points: c.points.clone(),
                values: c.values.iter().enumerate().map(|(j, &y)| f(i, j, y)).collect(),
            })
            .collect();
        Self {
            curves,
            design: self.design,
            truth: self.truth.clone(),
        }
    }

    /// Retags the dataset; fails if the new tag's invariants do not hold.
    pub fn retag(&self, design: DesignKind) -> Result<Self> {
        let out = Self::new(self.curves.clone(), design)?;
        Ok(match &self.truth {
            Some(t) => out.with_truth(t.clone()),
            None => out,
        })
    }
}

impl FunctionalDataset<f64> {
    /// Converts to another scalar type; the truth handle is carried over.
    pub fn cast<U: Scalar>(&self) -> FunctionalDataset<U> {
        let conv = |v: &Vec<f64>| v.iter().map(|&x| U::lit(x)).collect();
        FunctionalDataset {
            curves: self
                .curves
                .iter()
                .map(|c| Curve {
                    points: conv(&c.points),
                    values: conv(&c.values),
                })
                .collect(),
            design: self.design,
            truth: self.truth.clone().map(|t| Truth::new(move |x: U| U::lit(t.eval(x.as_f64())))),
        }
    }
}
