//! Bernoulli polynomials and the reproducing kernel of the order-`r` Sobolev
//! space on `[0, 1]`.
//!
//! The space `W_2^r` splits into the polynomials of degree `< r` and the
//! subspace whose scaled Bernoulli moments vanish. On the latter the squared
//! norm is `∫ (g^(r))²`, and its reproducing kernel is
//!
//! ```text
//! K(s, t) = B_r(s) B_r(t) / (r!)² + (-1)^(r-1) B_2r(|s - t|) / (2r)!
//! ```
//!
//! so that `Σ c_j K(·, t_j)` has roughness exactly `cᵀ Σ c`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{check_unit_interval, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Largest Sobolev order accepted by [`SobolevKernelConfig::new`].
pub const MAX_SOBOLEV_ORDER: usize = 10;

/// Monomial coefficient table for `B_0 ..= B_max_order`.
#[derive(Debug, Clone)]
pub struct BernoulliEvaluator<T> {
    exact: Vec<Vec<BigRational>>,
    coeffs: Vec<Vec<T>>,
}

impl<T: Scalar> BernoulliEvaluator<T> {
    /// Builds the table from the exact recurrence
    /// `B_k' = k B_(k-1)`, `∫₀¹ B_k = 0`, starting from `B_0 = 1`.
    pub fn new(max_order: usize) -> Result<Self> {
        if max_order < 1 {
            return Err(Error::Config("Bernoulli table needs max_order >= 1".into()));
        }
        let mut exact: Vec<Vec<BigRational>> = vec![vec![BigRational::one()]];
        for k in 1..=max_order {
            let prev = &exact[k - 1];
            let kq = BigRational::from_integer(BigInt::from(k));
            let mut row = vec![BigRational::zero(); k + 1];
            for (j, b) in prev.iter().enumerate() {
                row[j + 1] = &kq * b / BigRational::from_integer(BigInt::from(j + 1));
            }
            // Fix the constant so the integral over [0, 1] vanishes.
            let mut integral = BigRational::zero();
            for (j, a) in row.iter().enumerate().skip(1) {
                integral += a / BigRational::from_integer(BigInt::from(j + 1));
            }
            row[0] = -integral;
            exact.push(row);
        }
        let coeffs = exact
            .iter()
            .map(|row| row.iter().map(T::from_rational).collect())
            .collect();
        Ok(Self { exact, coeffs })
    }

    pub fn max_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Ascending monomial coefficients of `B_order`.
    pub fn coefficients(&self, order: usize) -> Option<&[T]> {
        self.coeffs.get(order).map(Vec::as_slice)
    }

    pub fn exact_coefficients(&self, order: usize) -> Option<&[BigRational]> {
        self.exact.get(order).map(Vec::as_slice)
    }

    /// `B_order(t)` for `t ∈ [0, 1]`.
    pub fn eval(&self, order: usize, t: T) -> Result<T> {
        self.check_order(order)?;
        check_unit_interval("t", t.as_f64())?;
        Ok(self.eval_unrestricted(order, t))
    }

    /// Horner evaluation of the coefficient table at any real `t`.
    ///
    /// Panics if `order > max_order`.
    pub fn eval_unrestricted(&self, order: usize, t: T) -> T {
        horner(&self.coeffs[order], t)
    }

    /// Exact `B_order(t)` at a rational point.
    pub fn eval_exact(&self, order: usize, t: &BigRational) -> Result<BigRational> {
        self.check_order(order)?;
        Ok(self.exact[order]
            .iter()
            .rev()
            .fold(BigRational::zero(), |acc, a| acc * t + a))
    }

    fn check_order(&self, order: usize) -> Result<()> {
        if order > self.max_order() {
            Err(Error::Config(format!(
                "Bernoulli order {order} exceeds table maximum {}",
                self.max_order()
            )))
        } else {
            Ok(())
        }
    }
}

pub(crate) fn horner<T: Scalar>(coeffs: &[T], t: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &a| acc * t + a)
}

/// Sobolev order plus the precomputed pieces of its reproducing kernel.
#[derive(Debug, Clone)]
pub struct SobolevKernelConfig<T> {
    r: usize,
    bernoulli: BernoulliEvaluator<T>,
    /// `1 / (r!)²`
    product_scale: T,
    /// `(-1)^(r-1) / (2r)!`
    shift_scale: T,
}

impl<T: Scalar> SobolevKernelConfig<T> {
    pub fn new(r: usize) -> Result<Self> {
        if r == 0 || r > MAX_SOBOLEV_ORDER {
            return Err(Error::Config(format!(
                "Sobolev order must lie in 1..={MAX_SOBOLEV_ORDER}, got {r}"
            )));
        }
        let bernoulli = BernoulliEvaluator::new(2 * r)?;
        let r_fact = factorial(r);
        let two_r_fact = factorial(2 * r);
        let product_scale = T::from_rational(&BigRational::new(
            BigInt::one(),
            &r_fact * &r_fact,
        ));
        let sign = if r % 2 == 1 { 1 } else { -1 };
        let shift_scale =
            T::from_rational(&BigRational::new(BigInt::from(sign), two_r_fact));
        Ok(Self {
            r,
            bernoulli,
            product_scale,
            shift_scale,
        })
    }

    pub fn order(&self) -> usize {
        self.r
    }

    pub fn bernoulli(&self) -> &BernoulliEvaluator<T> {
        &self.bernoulli
    }

    /// `K(s, t)`; symmetric bit-for-bit in its arguments.
    pub fn kernel(&self, s: T, t: T) -> Result<T> {
        check_unit_interval("s", s.as_f64())?;
        check_unit_interval("t", t.as_f64())?;
        Ok(self.kernel_unchecked(s, t))
    }

    pub(crate) fn kernel_unchecked(&self, s: T, t: T) -> T {
        let bs = self.scaled_primary(s);
        let bt = self.scaled_primary(t);
        self.kernel_from_primary(bs, bt, (s - t).abs())
    }

    /// `B_r(t)`, the per-point factor of the product term.
    #[inline]
    pub(crate) fn scaled_primary(&self, t: T) -> T {
        self.bernoulli.eval_unrestricted(self.r, t)
    }

    #[inline]
    pub(crate) fn kernel_from_primary(&self, bs: T, bt: T, gap: T) -> T {
        bs * bt * self.product_scale
            + self.shift_scale * self.bernoulli.eval_unrestricted(2 * self.r, gap)
    }

    /// Cross-kernel matrix with entries `K(rows[i], cols[j])`; no domain check.
    pub(crate) fn cross_matrix(&self, rows: &[T], cols: &[T]) -> Matrix<T> {
        let col_primary: Vec<T> = cols.iter().map(|&c| self.scaled_primary(c)).collect();
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (i, &s) in rows.iter().enumerate() {
            let bs = self.scaled_primary(s);
            let row = out.row_mut(i);
            for ((dst, &t), &bt) in row.iter_mut().zip(cols).zip(&col_primary) {
                *dst = self.kernel_from_primary(bs, bt, (s - t).abs());
            }
        }
        out
    }

    /// Gram matrix `Σ_jk = K(points[j], points[k])`.
    pub fn gram_matrix(&self, points: &[T]) -> Result<Matrix<T>> {
        if points.is_empty() {
            return Err(Error::Domain("Gram matrix of an empty point set".into()));
        }
        for &p in points {
            check_unit_interval("point", p.as_f64())?;
        }
        Ok(self.gram_unchecked(points))
    }

    pub(crate) fn gram_unchecked(&self, points: &[T]) -> Matrix<T> {
        let primary: Vec<T> = points.iter().map(|&p| self.scaled_primary(p)).collect();
        let n = points.len();
        let mut out = Matrix::zeros(n, n);
        for j in 0..n {
            for k in j..n {
                let v = self.kernel_from_primary(
                    primary[j],
                    primary[k],
                    (points[j] - points[k]).abs(),
                );
                out[(j, k)] = v;
                out[(k, j)] = v;
            }
        }
        out
    }
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// `B_order(t)` using a throwaway table; prefer a cached
/// [`BernoulliEvaluator`] in loops.
pub fn bernoulli_eval<T: Scalar>(order: usize, t: T) -> Result<T> {
    BernoulliEvaluator::new(order.max(1))?.eval(order, t)
}

pub fn kernel_eval<T: Scalar>(cfg: &SobolevKernelConfig<T>, s: T, t: T) -> Result<T> {
    cfg.kernel(s, t)
}

pub fn gram_matrix<T: Scalar>(cfg: &SobolevKernelConfig<T>, points: &[T]) -> Result<Matrix<T>> {
    cfg.gram_matrix(points)
}
