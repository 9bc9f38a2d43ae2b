//! Seeded generators for random curves observed under the three designs.
//!
//! The process is `X = g₀ + Σ_k ζ_k Z_k φ_k` with `φ_1 = 1`,
//! `φ_(k+1)(t) = √2 cos(kπt)`, mean coefficients `4(-1)^(k+1) k^-2`,
//! score scales `ζ_k = (-1)^(k+1) k^-0.55` and `Z_k ~ U[-√3, √3]`.
//! Observations add `N(0, σ₀²)` noise.
//!
//! Randomness comes from ChaCha streams keyed by
//! `(seed, replicate, curve, stream tag)`, so any dataset can be regenerated
//! in isolation and replicates can run in any order.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Curve, DesignKind, FunctionalDataset, Truth};
use crate::error::{check_unit_interval, Error, Result};

pub const DEFAULT_NUM_TERMS: usize = 50;
pub const DEFAULT_NOISE_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub mean_coeffs: Vec<f64>,
    pub score_scales: Vec<f64>,
    pub noise_sd: f64,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        Self::truncated(DEFAULT_NUM_TERMS)
    }
}

impl ProcessSpec {
    /// The standard process with its series cut after `num_terms` terms.
    pub fn truncated(num_terms: usize) -> Self {
        let sign = |k: usize| if k % 2 == 1 { 1.0 } else { -1.0 };
        Self {
            mean_coeffs: (1..=num_terms)
                .map(|k| 4.0 * sign(k) / (k * k) as f64)
                .collect(),
            score_scales: (1..=num_terms)
                .map(|k| sign(k) * (k as f64).powf(-1.1 / 2.0))
                .collect(),
            noise_sd: DEFAULT_NOISE_SD,
        }
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Self {
        self.noise_sd = sd;
        self
    }

    /// Degenerate process `X ≡ g₀`.
    pub fn without_scores(mut self) -> Self {
        self.score_scales.iter_mut().for_each(|z| *z = 0.0);
        self
    }

    pub fn num_terms(&self) -> usize {
        self.mean_coeffs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_terms() == 0 {
            return Err(Error::Config("process needs at least one term".into()));
        }
        if self.score_scales.len() != self.num_terms() {
            return Err(Error::Config("mean and score coefficient lists differ in length".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be >= 0".into()));
        }
        Ok(())
    }

    /// `E ∫ (X^(r) - g₀^(r))² = Σ_k ζ_k² ((k-1)π)^(2r)`, finite for any
    /// truncation.
    pub fn roughness_diagnostic(&self, r: usize) -> f64 {
        self.score_scales
            .iter()
            .enumerate()
            .map(|(i, z)| z * z * (i as f64 * PI).powi(2 * r as i32))
            .sum()
    }

    /// `g₀(t)`.
    pub fn eval_mean(&self, t: f64) -> Result<f64> {
        check_unit_interval("t", t)?;
        Ok(series(&self.mean_coeffs, t))
    }

    pub fn truth(self: &Arc<Self>) -> Truth<f64> {
        let spec = Arc::clone(self);
        Truth::new(move |t| series(&spec.mean_coeffs, t))
    }
}

/// `φ_k(t)` for `k >= 1`.
pub fn basis(k: usize, t: f64) -> f64 {
    if k == 1 {
        1.0
    } else {
        SQRT_2 * ((k - 1) as f64 * PI * t).cos()
    }
}

/// `Σ_k c_k φ_k(t)`, with `cos(kπt)` by the three-term recurrence.
fn series(coeffs: &[f64], t: f64) -> f64 {
    series_with(coeffs.len(), |k| coeffs[k], t)
}

fn series_with(len: usize, coeff: impl Fn(usize) -> f64, t: f64) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let c1 = (PI * t).cos();
    let (mut prev, mut cur) = (1.0, c1);
    let mut acc = 0.0;
    for k in 1..len {
        acc += coeff(k) * cur;
        let next = 2.0 * c1 * cur - prev;
        prev = cur;
        cur = next;
    }
    coeff(0) + SQRT_2 * acc
}

pub fn eval_mean(spec: &ProcessSpec, t: f64) -> Result<f64> {
    spec.eval_mean(t)
}

/// One realization `X_i`; evaluable anywhere on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SampleCurve {
    spec: Arc<ProcessSpec>,
    /// `ζ_k Z_k`
    scores: Vec<f64>,
}

impl SampleCurve {
    pub fn eval(&self, t: f64) -> f64 {
        let a = &self.spec.mean_coeffs;
        series_with(a.len(), |k| a[k] + self.scores[k], t)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Draws `Z_k ~ U[-√3, √3]` for every term from `rng`.
pub fn draw_curve(spec: &Arc<ProcessSpec>, rng: &mut StreamRng) -> SampleCurve {
    let root3 = 3f64.sqrt();
    let scores = spec
        .score_scales
        .iter()
        .map(|&z| z * root3 * (2.0 * rng.uniform() - 1.0))
        .collect();
    SampleCurve {
        spec: Arc::clone(spec),
        scores,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Scores = 1,
    Locations = 2,
    Noise = 3,
    Frequency = 4,
}

/// Curve index used for streams shared by a whole dataset.
pub const SHARED_CURVE: u64 = u64::MAX;

/// ChaCha8 stream for one `(seed, replicate, curve, tag)` key.
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, replicate: u64, curve: u64, tag: StreamTag) -> Self {
        let mut state = seed;
        let mut bytes = [0u8; 32];
        let words = [
            splitmix(&mut state) ^ replicate,
            splitmix(&mut state) ^ curve,
            splitmix(&mut state) ^ tag as u64,
            splitmix(&mut state),
        ];
        // A second mixing round so that nearby keys land far apart.
        for (chunk, w) in bytes.chunks_exact_mut(8).zip(words) {
            let mut s = w;
            chunk.copy_from_slice(&splitmix(&mut s).to_le_bytes());
        }
        Self {
            inner: ChaCha8Rng::from_seed(bytes),
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inverse CDF.
    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform();
        standard_normal_dist().inverse_cdf(u)
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        // Bias is below 2^-40 for the small bounds used here.
        ((self.uniform() * bound as f64) as u64).min(bound - 1)
    }
}

fn standard_normal_dist() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-curve sampling frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyRule {
    Fixed(usize),
    PerCurve(Vec<usize>),
    /// `m_i` uniform on `min..=max`, drawn per curve.
    UniformRange { min: usize, max: usize },
}

impl FrequencyRule {
    fn frequency(&self, seed: u64, replicate: u64, curve: usize) -> usize {
        match self {
            FrequencyRule::Fixed(m) => *m,
            FrequencyRule::PerCurve(ms) => ms[curve],
            FrequencyRule::UniformRange { min, max } => {
                let mut rng = StreamRng::new(seed, replicate, curve as u64, StreamTag::Frequency);
                min + rng.below((max - min + 1) as u64) as usize
            }
        }
    }

    /// The frequency shared by all curves, if the rule fixes one.
    pub fn fixed(&self) -> Option<usize> {
        match self {
            FrequencyRule::Fixed(m) => Some(*m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: usize,
    pub freq: FrequencyRule,
    pub seed: u64,
}

impl DesignSpec {
    pub fn new(kind: DesignKind, n: usize, m: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            freq: FrequencyRule::Fixed(m),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("design needs n >= 1 curves".into()));
        }
        match &self.freq {
            FrequencyRule::Fixed(0) => {
                return Err(Error::Config("sampling frequency m must be >= 1".into()))
            }
            FrequencyRule::PerCurve(ms) => {
                if ms.len() != self.n {
                    return Err(Error::Config(format!(
                        "{} per-curve frequencies given for n = {}",
                        ms.len(),
                        self.n
                    )));
                }
                if let Some(i) = ms.iter().position(|&m| m == 0) {
                    return Err(Error::Config(format!("curve {i} has frequency 0")));
                }
            }
            FrequencyRule::UniformRange { min, max } => {
                if *min == 0 || max < min {
                    return Err(Error::Config(format!("invalid frequency range {min}..={max}")));
                }
            }
            FrequencyRule::Fixed(_) => {}
        }
        if self.kind.is_common() && self.freq.fixed().is_none() {
            return Err(Error::Config(format!(
                "design {} needs one fixed frequency for all curves",
                self.kind
            )));
        }
        Ok(())
    }
}

/// `T_j = 2j / (2m + 1)`, `j = 1..=m`.
pub fn fixed_locations(m: usize) -> Vec<f64> {
    (1..=m)
        .map(|j| (2 * j) as f64 / (2 * m + 1) as f64)
        .collect()
}

fn sorted_uniforms(rng: &mut StreamRng, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite uniforms"));
    v
}

/// Replicate 0 of the design.
pub fn generate(design: &DesignSpec, spec: &ProcessSpec) -> Result<FunctionalDataset<f64>> {
    generate_replicate(design, spec, 0)
}

/// `Y_ij = X_i(T_ij) + ε_ij`. The dataset carries `g₀` as its truth.
pub fn generate_replicate(
    design: &DesignSpec,
    spec: &ProcessSpec,
    replicate: u64,
) -> Result<FunctionalDataset<f64>> {
    design.validate()?;
    spec.validate()?;
    let spec = Arc::new(spec.clone());
    let seed = design.seed;
    let shared = match design.kind {
        DesignKind::CommonFixed => Some(fixed_locations(design.freq.fixed().expect("validated"))),
        DesignKind::CommonRandom => {
            let mut rng = StreamRng::new(seed, replicate, SHARED_CURVE, StreamTag::Locations);
            Some(sorted_uniforms(&mut rng, design.freq.fixed().expect("validated")))
        }
        DesignKind::Independent => None,
    };
    let mut curves = Vec::with_capacity(design.n);
    for i in 0..design.n {
        let ci = i as u64;
        let x = draw_curve(&spec, &mut StreamRng::new(seed, replicate, ci, StreamTag::Scores));
        let points = match &shared {
            Some(p) => p.clone(),
            None => {
                let m = design.freq.frequency(seed, replicate, i);
                let mut rng = StreamRng::new(seed, replicate, ci, StreamTag::Locations);
                sorted_uniforms(&mut rng, m)
            }
        };
        let mut noise = StreamRng::new(seed, replicate, ci, StreamTag::Noise);
        let values = points
            .iter()
            .map(|&t| {
                let eps = if spec.noise_sd > 0.0 {
                    spec.noise_sd * noise.standard_normal()
                } else {
                    0.0
                };
                x.eval(t) + eps
            })
            .collect();
        curves.push(Curve { points, values });
    }
    Ok(FunctionalDataset::new(curves, design.kind)?.with_truth(spec.truth()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_term_mean_is_four() {
        let s = ProcessSpec::truncated(1);
        for &t in &[0.0, 0.3, 1.0] {
            assert_eq!(s.eval_mean(t).unwrap(), 4.0);
        }
        assert!(s.eval_mean(1.1).is_err());
    }

    #[test]
    fn mean_at_zero_matches_direct_sum() {
        // 4 + √2 Σ_{k=2}^{50} 4(-1)^(k+1) k^-2, summed independently.
        let mut tail = 0.0;
        for k in (2..=50).rev() {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            tail += 4.0 * sign / (k as f64 * k as f64);
        }
        let expect = 4.0 + SQRT_2 * tail;
        let got = ProcessSpec::default().eval_mean(0.0).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        // Exact rational partial sum, evaluated to 30 digits offline.
        assert!((got - 2.994_613_131_127_175_486).abs() < 1e-12, "{got}");
    }

    #[test]
    fn mean_is_order_independent() {
        let s = ProcessSpec::default();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let rev: f64 = (1..=50).rev().map(|k| s.mean_coeffs[k - 1] * basis(k, t)).sum();
            assert!((s.eval_mean(t).unwrap() - rev).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_locations_example() {
        let t = fixed_locations(10);
        assert!((t[0] - 2.0 / 21.0).abs() < 1e-15);
        assert!((t[9] - 20.0 / 21.0).abs() < 1e-15);
        assert_eq!(fixed_locations(3), vec![2.0 / 7.0, 4.0 / 7.0, 6.0 / 7.0]);
    }

    #[test]
    fn noiseless_degenerate_process_observes_the_mean() {
        let spec = ProcessSpec::default().without_scores().with_noise_sd(0.0);
        let d = generate(&DesignSpec::new(DesignKind::Independent, 3, 4, 9), &spec).unwrap();
        for c in d.curves() {
            for (&t, &y) in c.points.iter().zip(&c.values) {
                assert_eq!(y, spec.eval_mean(t).unwrap());
            }
        }
        let x = draw_curve(&Arc::new(spec.clone()), &mut StreamRng::new(1, 0, 0, StreamTag::Scores));
        assert_eq!(x.eval(0.42), spec.eval_mean(0.42).unwrap());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ProcessSpec::default();
        let design = DesignSpec::new(DesignKind::Independent, 5, 6, 42);
        let a = generate(&design, &spec).unwrap();
        let b = generate(&design, &spec).unwrap();
        assert_eq!(a.curves(), b.curves());
        let c = generate(&DesignSpec { seed: 43, ..design }, &spec).unwrap();
        assert_ne!(a.curves(), c.curves());
    }

    #[test]
    fn common_designs_share_locations() {
        let spec = ProcessSpec::default();
        for kind in [DesignKind::CommonFixed, DesignKind::CommonRandom] {
            let d = generate(&DesignSpec::new(kind, 4, 7, 3), &spec).unwrap();
            assert!(d.shared_points().is_some());
        }
        let d = generate(&DesignSpec::new(DesignKind::Independent, 4, 7, 3), &spec).unwrap();
        assert!(d.shared_points().is_none());
        for c in d.curves() {
            assert!(c.points.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn frequency_rules() {
        let spec = ProcessSpec::default();
        let design = DesignSpec {
            kind: DesignKind::Independent,
            n: 3,
            freq: FrequencyRule::PerCurve(vec![1, 2, 3]),
            seed: 0,
        };
        assert_eq!(generate(&design, &spec).unwrap().frequencies(), vec![1, 2, 3]);
        let ranged = DesignSpec {
            freq: FrequencyRule::UniformRange { min: 2, max: 4 },
            n: 50,
            ..design.clone()
        };
        let f = generate(&ranged, &spec).unwrap().frequencies();
        assert!(f.iter().all(|&m| (2..=4).contains(&m)));
        assert!(f.contains(&2) && f.contains(&4));

        let zero = DesignSpec::new(DesignKind::Independent, 2, 0, 0);
        assert!(matches!(generate(&zero, &spec), Err(Error::Config(_))));
        let common_ragged = DesignSpec {
            kind: DesignKind::CommonFixed,
            ..design
        };
        assert!(generate(&common_ragged, &spec).is_err());
    }

    #[test]
    fn roughness_diagnostic_is_finite_and_grows_with_terms() {
        let mut prev = 0.0;
        for k in [1, 5, 20, 50] {
            let v = ProcessSpec::truncated(k).roughness_diagnostic(2);
            assert!(v.is_finite() && v >= prev);
            prev = v;
        }
        assert_eq!(
            ProcessSpec::default().roughness_diagnostic(2),
            ProcessSpec::default().roughness_diagnostic(2)
        );
    }

    #[test]
    fn streams_are_distinct_per_key() {
        let a = StreamRng::new(1, 0, 0, StreamTag::Noise).uniform();
        let b = StreamRng::new(1, 0, 1, StreamTag::Noise).uniform();
        let c = StreamRng::new(1, 1, 0, StreamTag::Noise).uniform();
        let d = StreamRng::new(1, 0, 0, StreamTag::Scores).uniform();
        assert!(a != b && a != c && a != d);
        assert_eq!(a, StreamRng::new(1, 0, 0, StreamTag::Noise).uniform());
    }
}
