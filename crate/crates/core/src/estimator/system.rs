//! Penalized weighted least squares in the kernel representation.
//!
//! Every fit reduces to weighted observations `(x_i, y_i, w_i)` with loss
//! `Σ w_i (y_i - g(x_i))² + λ ∫ (g^(r))²`. Two routes solve it:
//!
//! * full: one kernel section per observation, solved by block elimination
//!   of `(Σ + λ W⁻¹) c + Φ d = y`, `Φᵀ c = 0`;
//! * reduced: kernel sections at a rank-thinned subset of `q` knots. With
//!   `K_qq = L Lᵀ` the kernel block is whitened to features `F = K_xq L⁻ᵀ`,
//!   so the penalty becomes `λ |γ|²` and the normal equations
//!   `(BᵀWB + λ diag(0, I)) β = BᵀWy` stay conditioned like `1/λ` rather
//!   than like `cond(K_qq)²`. Kernel coefficients are `c = L⁻ᵀ γ`.
//!
//! λ-independent work (Gram assembly, `BᵀWB`) happens once in
//! [`PreparedFit::new`], so scanning a λ grid costs one factorization per λ.

use crate::error::{Error, Result};
use crate::kernel::SobolevKernelConfig;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::metrics::simpson_weights;
use crate::scalar::Scalar;

use super::{FitWarning, SplineEstimate};

/// Diagonal jitter added once when a factorization fails.
pub(crate) const FACTOR_JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Observations<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub w: Vec<T>,
}

impl<T: Scalar> Observations<T> {
    /// Stable sort by location.
    pub fn sorted(mut self) -> Self {
        let mut idx: Vec<usize> = (0..self.x.len()).collect();
        idx.sort_by(|&a, &b| self.x[a].partial_cmp(&self.x[b]).expect("finite locations"));
        let take = |v: &[T]| idx.iter().map(|&i| v[i]).collect::<Vec<T>>();
        self.x = take(&self.x);
        self.y = take(&self.y);
        self.w = take(&self.w);
        self
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn distinct_locations(&self) -> Vec<T> {
        let mut out: Vec<T> = Vec::with_capacity(self.x.len());
        for &x in &self.x {
            if out.last() != Some(&x) {
                out.push(x);
            }
        }
        out
    }

    pub fn has_duplicate_locations(&self) -> bool {
        self.x.windows(2).any(|w| w[0] == w[1])
    }
}

enum Route<T> {
    Full {
        gram: Matrix<T>,
        poly: Matrix<T>,
    },
    Reduced {
        normal: Matrix<T>,
        rhs: Vec<T>,
        whitener: Cholesky<T>,
    },
}

/// Coefficients aligned with the prepared knot list, before duplicate merging.
#[derive(Debug, Clone)]
pub(crate) struct RawFit<T> {
    pub poly: Vec<T>,
    pub kernel: Vec<T>,
    pub lambda: T,
    pub lambda_effective: T,
    pub jitter: bool,
    /// Trace of the influence matrix, when requested.
    pub trace: Option<T>,
}

pub(crate) struct PreparedFit<'a, T> {
    cfg: &'a SobolevKernelConfig<T>,
    obs: Observations<T>,
    knots: Vec<T>,
    route: Route<T>,
    floor: T,
    warnings: Vec<FitWarning>,
}

impl<'a, T: Scalar> PreparedFit<'a, T> {
    pub fn new(
        cfg: &'a SobolevKernelConfig<T>,
        obs: Observations<T>,
        floor: T,
        max_knots: usize,
    ) -> Result<Self> {
        let r = cfg.order();
        if max_knots < r {
            return Err(Error::Config(format!("max_knots = {max_knots} is below r = {r}")));
        }
        let mut warnings = Vec::new();
        let route;
        let knots;
        if obs.len() <= max_knots {
            knots = obs.x.clone();
            let gram = cfg.gram_unchecked(&knots);
            let poly = monomials(&knots, r);
            route = Route::Full { gram, poly };
        } else {
            let distinct = obs.distinct_locations();
            knots = if distinct.len() > max_knots {
                warnings.push(FitWarning::KnotsThinned {
                    locations: distinct.len(),
                    knots: max_knots,
                });
                thin_by_rank(&distinct, max_knots)
            } else {
                distinct
            };
            let (whitener, jitter) = factor_knot_gram(cfg.gram_unchecked(&knots))?;
            if let Some(amount) = jitter {
                warnings.push(FitWarning::JitterApplied { amount });
            }
            let p = r + knots.len();
            let mut normal = Matrix::zeros(p, p);
            let mut rhs = vec![T::zero(); p];
            let kx = cfg.cross_matrix(&obs.x, &knots);
            let mut row = vec![T::zero(); p];
            for i in 0..obs.len() {
                fill_monomials(obs.x[i], &mut row[..r]);
                row[r..].copy_from_slice(kx.row(i));
                whitener.forward_in_place(&mut row[r..]);
                let w = obs.w[i];
                let wy = w * obs.y[i];
                for a in 0..p {
                    let wa = w * row[a];
                    rhs[a] = rhs[a] + wy * row[a];
                    // Upper triangle only; mirrored below.
                    let dst = &mut normal.row_mut(a)[a..];
                    for (d, &b) in dst.iter_mut().zip(&row[a..]) {
                        *d = *d + wa * b;
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    normal[(a, b)] = normal[(b, a)];
                }
            }
            route = Route::Reduced {
                normal,
                rhs,
                whitener,
            };
        }
        Ok(Self {
            cfg,
            obs,
            knots,
            route,
            floor,
            warnings,
        })
    }

    #[cfg(test)]
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn observations(&self) -> &Observations<T> {
        &self.obs
    }

    #[cfg(test)]
    pub fn is_thinned(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, FitWarning::KnotsThinned { .. }))
    }

    pub fn solve(&self, lambda: T, with_trace: bool) -> Result<RawFit<T>> {
        let lambda_effective = lambda.max(self.floor);
        match &self.route {
            Route::Full { gram, poly } => {
                self.solve_full(gram, poly, lambda, lambda_effective, with_trace)
            }
            Route::Reduced {
                normal,
                rhs,
                whitener,
            } => self.solve_reduced(normal, rhs, whitener, lambda, lambda_effective, with_trace),
        }
    }

    fn solve_full(
        &self,
        gram: &Matrix<T>,
        poly: &Matrix<T>,
        lambda: T,
        lambda_effective: T,
        with_trace: bool,
    ) -> Result<RawFit<T>> {
        let n = self.obs.len();
        let r = self.cfg.order();
        let ridge: Vec<T> = self.obs.w.iter().map(|&w| lambda_effective / w).collect();
        let mut m = gram.clone();
        m.add_to_diagonal(&ridge);
        let (chol, jitter) = factor_with_jitter(m, "kernel system")?;

        // Z = M⁻¹ Φ, column by column.
        let mut z = Matrix::zeros(r, n);
        for k in 0..r {
            let col: Vec<T> = (0..n).map(|i| poly[(i, k)]).collect();
            let sol = chol.solve(&col);
            z.row_mut(k).copy_from_slice(&sol);
        }
        let u = chol.solve(&self.obs.y);
        let reduced = Matrix::from_fn(r, r, |a, b| {
            let col_a: Vec<T> = (0..n).map(|i| poly[(i, a)]).collect();
            dot(&col_a, z.row(b))
        });
        let reduced_chol = reduced.cholesky().map_err(|f| Error::Numerical {
            message: "polynomial block is singular; locations cannot identify the null space"
                .into(),
            condition: f.condition,
        })?;
        let phi_t_u: Vec<T> = (0..r)
            .map(|a| {
                let col_a: Vec<T> = (0..n).map(|i| poly[(i, a)]).collect();
                dot(&col_a, &u)
            })
            .collect();
        let d = reduced_chol.solve(&phi_t_u);
        let c: Vec<T> = (0..n)
            .map(|i| {
                let mut v = u[i];
                for k in 0..r {
                    v = v - z[(k, i)] * d[k];
                }
                v
            })
            .collect();

        let trace = if with_trace {
            // I - A = diag(ridge) P with P = M⁻¹ - Z G⁻¹ Zᵀ.
            let inv_diag = chol.inverse_diagonal();
            let mut resid_trace = T::zero();
            let mut zi = vec![T::zero(); r];
            for i in 0..n {
                for k in 0..r {
                    zi[k] = z[(k, i)];
                }
                let g_inv_zi = reduced_chol.solve(&zi);
                let p_ii = inv_diag[i] - dot(&zi, &g_inv_zi);
                resid_trace = resid_trace + ridge[i] * p_ii;
            }
            Some(T::from_usize_lossy(n) - resid_trace)
        } else {
            None
        };

        Ok(RawFit {
            poly: d,
            kernel: c,
            lambda,
            lambda_effective,
            jitter,
            trace,
        })
    }

    fn solve_reduced(
        &self,
        normal: &Matrix<T>,
        rhs: &[T],
        whitener: &Cholesky<T>,
        lambda: T,
        lambda_effective: T,
        with_trace: bool,
    ) -> Result<RawFit<T>> {
        let r = self.cfg.order();
        let q = self.knots.len();
        let mut h = normal.clone();
        let mut ridge = vec![T::zero(); r + q];
        ridge[r..].iter_mut().for_each(|v| *v = lambda_effective);
        h.add_to_diagonal(&ridge);
        let (chol, jitter) = factor_with_jitter(h, "reduced normal equations")?;
        let beta = chol.solve(rhs);
        let mut kernel = beta[r..].to_vec();
        whitener.backward_in_place(&mut kernel);
        let trace = if with_trace {
            let p = r + q;
            let mut acc = T::zero();
            let mut col = vec![T::zero(); p];
            for k in 0..p {
                for a in 0..p {
                    col[a] = normal[(a, k)];
                }
                chol.solve_in_place(&mut col);
                acc = acc + col[k];
            }
            Some(acc)
        } else {
            None
        };
        Ok(RawFit {
            poly: beta[..r].to_vec(),
            kernel,
            lambda,
            lambda_effective,
            jitter,
            trace,
        })
    }

    /// Fitted values at the observation locations.
    pub fn fitted(&self, fit: &RawFit<T>) -> Vec<T> {
        match &self.route {
            Route::Full { gram, poly } => {
                let kc = gram.mul_vec(&fit.kernel);
                (0..self.obs.len())
                    .map(|i| dot(poly.row(i), &fit.poly) + kc[i])
                    .collect()
            }
            Route::Reduced { .. } => self
                .obs
                .x
                .iter()
                .map(|&x| raw_eval(self.cfg, &self.knots, fit, x))
                .collect(),
        }
    }

    pub fn estimate(&self, fit: &RawFit<T>) -> SplineEstimate<T> {
        let mut warnings = self.warnings.clone();
        if fit.jitter && !warnings.iter().any(|w| matches!(w, FitWarning::JitterApplied { .. })) {
            warnings.push(FitWarning::JitterApplied {
                amount: FACTOR_JITTER,
            });
        }
        SplineEstimate::from_parts(
            self.cfg.order(),
            fit.lambda,
            fit.lambda_effective,
            self.knots.clone(),
            fit.poly.clone(),
            fit.kernel.clone(),
            warnings,
        )
    }

    /// Precomputes what an ISE evaluation against `truth` needs on a
    /// Simpson grid, so each λ costs one matrix-vector product.
    pub fn ise_evaluator(&self, truth: impl Fn(T) -> T, grid_size: usize) -> Result<IseEvaluator<T>> {
        let weights = simpson_weights::<T>(grid_size)?;
        let h = T::one() / T::from_usize_lossy(grid_size - 1);
        let grid: Vec<T> = (0..grid_size).map(|i| T::from_usize_lossy(i) * h).collect();
        let truth_vals = grid.iter().map(|&t| truth(t)).collect();
        Ok(IseEvaluator {
            basis: self.cfg.cross_matrix(&grid, &self.knots),
            poly: monomials(&grid, self.cfg.order()),
            weights,
            truth: truth_vals,
        })
    }
}

pub(crate) struct IseEvaluator<T> {
    basis: Matrix<T>,
    poly: Matrix<T>,
    weights: Vec<T>,
    truth: Vec<T>,
}

impl<T: Scalar> IseEvaluator<T> {
    pub fn ise(&self, fit: &RawFit<T>) -> T {
        let mut acc = T::zero();
        for g in 0..self.weights.len() {
            let v = dot(self.poly.row(g), &fit.poly) + dot(self.basis.row(g), &fit.kernel);
            let e = v - self.truth[g];
            acc = acc + self.weights[g] * e * e;
        }
        acc
    }

    /// Simpson estimate of `∫ truth²`, a natural scale for tie tolerances.
    pub fn truth_energy(&self) -> T {
        self.weights
            .iter()
            .zip(&self.truth)
            .fold(T::zero(), |acc, (&w, &v)| acc + w * v * v)
    }
}

fn raw_eval<T: Scalar>(cfg: &SobolevKernelConfig<T>, knots: &[T], fit: &RawFit<T>, t: T) -> T {
    let poly = crate::kernel::horner(&fit.poly, t);
    let bt = cfg.scaled_primary(t);
    let mut acc = T::zero();
    for (&k, &c) in knots.iter().zip(&fit.kernel) {
        acc = acc + c * cfg.kernel_from_primary(bt, cfg.scaled_primary(k), (t - k).abs());
    }
    poly + acc
}

/// Cholesky of the knot Gram matrix, with escalating relative jitter when
/// knots are too close for the kernel's numerical rank.
fn factor_knot_gram<T: Scalar>(gram: Matrix<T>) -> Result<(Cholesky<T>, Option<f64>)> {
    if let Ok(c) = gram.cholesky() {
        return Ok((c, None));
    }
    let n = gram.rows();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(gram[(i, i)].as_f64()));
    let mut rel = 1e-13;
    loop {
        let amount = rel * scale;
        let mut m = gram.clone();
        m.add_to_diagonal(&vec![T::lit(amount); n]);
        match m.cholesky() {
            Ok(c) => return Ok((c, Some(amount))),
            Err(f) if rel >= 1e-5 => {
                return Err(Error::Numerical {
                    message: format!("knot Gram matrix is not positive definite at pivot {}", f.pivot),
                    condition: f.condition,
                })
            }
            Err(_) => rel *= 100.0,
        }
    }
}

fn factor_with_jitter<T: Scalar>(mut m: Matrix<T>, what: &str) -> Result<(Cholesky<T>, bool)> {
    match m.cholesky() {
        Ok(c) => Ok((c, false)),
        Err(_) => {
            let n = m.rows();
            m.add_to_diagonal(&vec![T::lit(FACTOR_JITTER); n]);
            m.cholesky().map(|c| (c, true)).map_err(|f| Error::Numerical {
                message: format!("{what} is not positive definite at pivot {}", f.pivot),
                condition: f.condition,
            })
        }
    }
}

pub(crate) fn monomials<T: Scalar>(points: &[T], r: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(points.len(), r);
    for (i, &t) in points.iter().enumerate() {
        fill_monomials(t, out.row_mut(i));
    }
    out
}

fn fill_monomials<T: Scalar>(t: T, dst: &mut [T]) {
    let mut p = T::one();
    for d in dst.iter_mut() {
        *d = p;
        p = p * t;
    }
}

/// `count` locations spread evenly by rank over sorted `distinct`, always
/// keeping both extremes.
pub(crate) fn thin_by_rank<T: Scalar>(distinct: &[T], count: usize) -> Vec<T> {
    let u = distinct.len();
    if count >= u {
        return distinct.to_vec();
    }
    if count == 1 {
        return vec![distinct[u / 2]];
    }
    (0..count)
        .map(|k| {
            let pos = (k as f64 * (u - 1) as f64 / (count - 1) as f64).round() as usize;
            distinct[pos]
        })
        .collect()
}
