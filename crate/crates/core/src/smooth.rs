//! Numerical calculus substrate: smooth-map handles, finite-difference
//! derivatives, small dense linear solves and a damped Newton iteration.
//!
//! Every manifold in the crate lives in global coordinates, so a smooth map
//! is just a closure `R^m -> R^n` with an optional analytic Jacobian. When
//! the Jacobian is missing, central differences with step
//! `cbrt(eps) * (1 + |x_i|)` stand in for it.

use crate::error::{Error, Result};
use crate::scalar::{eps, fd_rel_step, fd_rel_step2, inf_norm, lit, to_f64, Real};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

pub type EvalFn<T> = Arc<dyn Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync>;
pub type JacFn<T> = Arc<dyn Fn(&DVector<T>) -> Result<DMatrix<T>> + Send + Sync>;

/// An evaluatable map `R^in_dim -> R^out_dim`.
#[derive(Clone)]
pub struct SmoothMap<T: Real> {
    in_dim: usize,
    out_dim: usize,
    eval: EvalFn<T>,
    jac: Option<JacFn<T>>,
}

impl<T: Real> fmt::Debug for SmoothMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl<T: Real> SmoothMap<T> {
    pub fn new<F>(in_dim: usize, out_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync + 'static,
    {
        SmoothMap {
            in_dim,
            out_dim,
            eval: Arc::new(f),
            jac: None,
        }
    }

    /// Scalar-valued map `R^in_dim -> R`.
    pub fn scalar<F>(in_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<T>) -> Result<T> + Send + Sync + 'static,
    {
        Self::new(in_dim, 1, move |x| Ok(DVector::from_element(1, f(x)?)))
    }

    /// Attaches an analytic Jacobian (`out_dim x in_dim`).
    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&DVector<T>) -> Result<DMatrix<T>> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(j));
        self
    }

    /// Attaches an analytic gradient to a scalar map.
    pub fn with_gradient<G>(self, g: G) -> Self
    where
        G: Fn(&DVector<T>) -> Result<DVector<T>> + Send + Sync + 'static,
    {
        self.with_jacobian(move |x| {
            let v = g(x)?;
            Ok(DMatrix::from_row_slice(1, v.len(), v.as_slice()))
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(n, n, |x| Ok(x.clone())).with_jacobian(move |_| Ok(DMatrix::identity(n, n)))
    }

    /// Affine map `x -> a x + b`.
    pub fn affine(a: DMatrix<T>, b: DVector<T>) -> Self {
        let (m, n) = a.shape();
        let a2 = a.clone();
        Self::new(n, m, move |x| Ok(&a * x + &b)).with_jacobian(move |_| Ok(a2.clone()))
    }

    pub fn constant(in_dim: usize, value: DVector<T>) -> Self {
        let m = value.len();
        Self::new(in_dim, m, move |_| Ok(value.clone()))
            .with_jacobian(move |_| Ok(DMatrix::zeros(m, in_dim)))
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Evaluates the map. Wrong input length is a dimension error and a
    /// non-finite output is reported as a domain error.
    pub fn eval(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.in_dim {
            return Err(Error::Dimension {
                context: "smooth map input".into(),
                expected: self.in_dim,
                found: x.len(),
            });
        }
        let y = (self.eval)(x)?;
        if y.len() != self.out_dim {
            return Err(Error::Dimension {
                context: "smooth map output".into(),
                expected: self.out_dim,
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite value produced by smooth map"));
        }
        Ok(y)
    }

    pub fn eval_scalar(&self, x: &DVector<T>) -> Result<T> {
        Ok(self.eval(x)?[0])
    }

    /// Analytic Jacobian if one was supplied, central differences otherwise.
    pub fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        match &self.jac {
            Some(j) => {
                let m = j(x)?;
                if m.shape() != (self.out_dim, self.in_dim) {
                    return Err(Error::Dimension {
                        context: "analytic Jacobian rows".into(),
                        expected: self.out_dim,
                        found: m.nrows(),
                    });
                }
                Ok(m)
            }
            None => jacobian_fd(self, x),
        }
    }

    /// Gradient of a scalar map as a column vector.
    pub fn gradient(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.jacobian(x)?.row(0).transpose())
    }

    /// Hessian of a scalar map. Differentiates the analytic gradient when
    /// there is one, otherwise uses second differences of values.
    pub fn hessian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        let h = if self.jac.is_some() {
            let g = self.clone();
            let grad = SmoothMap::new(self.in_dim, self.in_dim, move |y| g.gradient(y));
            jacobian_fd(&grad, x)?
        } else {
            hessian_fd(self, x)?
        };
        Ok((&h + h.transpose()) * lit::<T>(0.5))
    }

    /// `self ∘ inner`, differentiated by the chain rule.
    pub fn compose(&self, inner: &SmoothMap<T>) -> SmoothMap<T> {
        assert_eq!(inner.out_dim, self.in_dim, "composition dimension mismatch");
        let (o1, i1) = (self.clone(), inner.clone());
        let (o2, i2) = (self.clone(), inner.clone());
        SmoothMap::new(inner.in_dim, self.out_dim, move |x| o1.eval(&i1.eval(x)?)).with_jacobian(
            move |x| {
                let y = i2.eval(x)?;
                Ok(o2.jacobian(&y)? * i2.jacobian(x)?)
            },
        )
    }

    /// Largest entrywise gap between the analytic and the FD Jacobian at `x`.
    /// Zero when no analytic Jacobian is attached.
    pub fn jacobian_mismatch(&self, x: &DVector<T>) -> Result<T> {
        if self.jac.is_none() {
            return Ok(T::zero());
        }
        let d = self.jacobian(x)? - jacobian_fd(self, x)?;
        Ok(d.iter().fold(T::zero(), |a, v| a.max(v.abs())))
    }
}

/// Central-difference Jacobian with step `cbrt(eps) * (1 + |x_i|)`.
pub fn jacobian_fd<T: Real>(f: &SmoothMap<T>, x: &DVector<T>) -> Result<DMatrix<T>> {
    jacobian_fd_with_step(f, x, fd_rel_step())
}

pub fn jacobian_fd_with_step<T: Real>(
    f: &SmoothMap<T>,
    x: &DVector<T>,
    rel_step: T,
) -> Result<DMatrix<T>> {
    let n = f.in_dim();
    let mut jac = DMatrix::zeros(f.out_dim(), n);
    let mut xp = x.clone();
    for j in 0..n {
        let xj = x[j];
        let h = rel_step * (T::one() + xj.abs());
        xp[j] = xj + h;
        let fp = f.eval(&xp)?;
        xp[j] = xj - h;
        let fm = f.eval(&xp)?;
        xp[j] = xj;
        let two_h = (xj + h) - (xj - h);
        jac.set_column(j, &((fp - fm) / two_h));
    }
    Ok(jac)
}

/// Second differences of a scalar map with step `eps^(1/4) * (1 + |x_i|)`.
pub fn hessian_fd<T: Real>(f: &SmoothMap<T>, x: &DVector<T>) -> Result<DMatrix<T>> {
    let n = f.in_dim();
    let rel = fd_rel_step2::<T>();
    let steps: Vec<T> = x.iter().map(|v| rel * (T::one() + v.abs())).collect();
    let f0 = f.eval_scalar(x)?;
    let mut hess = DMatrix::zeros(n, n);
    let mut y = x.clone();
    let four: T = lit(4.0);
    for i in 0..n {
        let hi = steps[i];
        y[i] = x[i] + hi;
        let fp = f.eval_scalar(&y)?;
        y[i] = x[i] - hi;
        let fm = f.eval_scalar(&y)?;
        y[i] = x[i];
        hess[(i, i)] = (fp - f0 - f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut eval_at = |si: T, sj: T| -> Result<T> {
                y[i] = x[i] + si * hi;
                y[j] = x[j] + sj * hj;
                let v = f.eval_scalar(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let one = T::one();
            let fpp = eval_at(one, one)?;
            let fpm = eval_at(one, -one)?;
            let fmp = eval_at(-one, one)?;
            let fmm = eval_at(-one, -one)?;
            let v = (fpp - fpm - fmp + fmm) / (four * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Solves the square system `a x = b`. Returns `None` when `a` is singular
/// or the solution is not finite.
pub fn solve_square<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    if !a.is_square() || a.nrows() != b.len() {
        return None;
    }
    if a.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of a square matrix, `None` if singular.
pub fn invert<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    if !a.is_square() {
        return None;
    }
    if a.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let inv = a.clone().try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

pub fn singular_values<T: Real>(a: &DMatrix<T>) -> DVector<T> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(0);
    }
    a.clone().svd(false, false).singular_values
}

/// Numerical rank: singular values above `rel_tol * sigma_max`.
pub fn rank<T: Real>(a: &DMatrix<T>, rel_tol: T) -> usize {
    let sv = singular_values(a);
    let smax = sv.iter().fold(T::zero(), |m, s| m.max(*s));
    if smax == T::zero() {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Reciprocal 2-norm condition number `sigma_min / sigma_max` of a square matrix.
pub fn rcond<T: Real>(a: &DMatrix<T>) -> T {
    let sv = singular_values(a);
    if sv.is_empty() {
        return T::one();
    }
    let smax = sv.iter().fold(T::zero(), |m, s| m.max(*s));
    let smin = sv.iter().fold(smax, |m, s| m.min(*s));
    if smax == T::zero() {
        T::zero()
    } else {
        smin / smax
    }
}

/// Moore-Penrose pseudo-inverse via SVD.
pub fn pseudo_inverse<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let smax = singular_values(a).iter().fold(T::zero(), |m, s| m.max(*s));
    let cutoff = smax * eps::<T>() * lit(a.nrows().max(a.ncols()) as f64);
    a.clone().svd(true, true).pseudo_inverse(cutoff).ok()
}

/// Minimum-norm least-squares solution of `a x = b` via SVD.
pub fn least_squares<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    if a.ncols() == 0 {
        return Some(DVector::zeros(0));
    }
    let smax = singular_values(a).iter().fold(T::zero(), |m, s| m.max(*s));
    if smax == T::zero() {
        return None;
    }
    let cutoff = smax * eps::<T>() * lit(a.nrows().max(a.ncols()) as f64);
    let x = a.clone().svd(true, true).solve(b, cutoff).ok()?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Settings for [`newton_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Stop once the max-abs residual is at or below this.
    pub residual_tol: f64,
    pub max_iters: usize,
    /// Relative FD step for residual Jacobians; `None` means `cbrt(eps)`.
    pub fd_step: Option<f64>,
    /// Halve the step until the residual decreases.
    pub backtracking: bool,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            residual_tol: 1e-12,
            max_iters: 50,
            fd_step: None,
            backtracking: true,
            max_halvings: 20,
        }
    }
}

impl NewtonConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.residual_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.residual_tol.is_nan() || self.residual_tol <= 0.0 || self.max_iters == 0 {
            return Err(Error::validation(
                "Newton configuration (residual_tol > 0, max_iters >= 1)",
                self.residual_tol,
                vec![self.max_iters as f64],
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution<T: Real> {
    pub x: DVector<T>,
    pub iterations: usize,
    pub residual_norm: T,
}

/// Damped Newton iteration for a square residual. Either the returned point
/// satisfies `|residual(x)|_inf <= residual_tol` or an error is raised.
pub fn newton_solve<T: Real>(
    residual: &SmoothMap<T>,
    x0: &DVector<T>,
    cfg: &NewtonConfig,
) -> Result<NewtonSolution<T>> {
    cfg.validate()?;
    let n = x0.len();
    if residual.in_dim() != n || residual.out_dim() != n {
        return Err(Error::Dimension {
            context: "Newton residual must be square".into(),
            expected: n,
            found: residual.out_dim(),
        });
    }
    let tol: T = lit(cfg.residual_tol);
    let mut x = x0.clone();
    let mut r = residual.eval(&x)?;
    let mut norm = inf_norm(&r);
    for it in 0..cfg.max_iters {
        if norm <= tol {
            return Ok(NewtonSolution {
                x,
                iterations: it,
                residual_norm: norm,
            });
        }
        let jac = match (cfg.fd_step, residual.has_jacobian()) {
            (Some(step), false) => jacobian_fd_with_step(residual, &x, lit(step))?,
            _ => residual.jacobian(&x)?,
        };
        let dx = solve_square(&jac, &(-&r)).ok_or_else(|| {
            Error::SingularJacobian(format!(
                "Newton iteration {it}: residual Jacobian is singular"
            ))
        })?;
        let mut lambda = T::one();
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial = &x + &dx * lambda;
            match residual.eval(&trial) {
                Ok(rt) => {
                    let nt = inf_norm(&rt);
                    if !cfg.backtracking || nt < norm {
                        accepted = Some((trial, rt, nt));
                        break;
                    }
                }
                Err(Error::Domain(_)) if cfg.backtracking => {}
                Err(e) => return Err(e),
            }
            lambda *= lit(0.5);
        }
        match accepted {
            Some((xt, rt, nt)) => {
                x = xt;
                r = rt;
                norm = nt;
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations: it + 1,
                    residual: to_f64(norm),
                })
            }
        }
    }
    if norm <= tol {
        return Ok(NewtonSolution {
            x,
            iterations: cfg.max_iters,
            residual_norm: norm,
        });
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        residual: to_f64(norm),
    })
}
