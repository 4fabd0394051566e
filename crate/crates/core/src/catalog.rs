//! Small discrete mechanical systems with quadratic Lagrangians
//!
//! `L(q0, q1) = (q1 - q0)^T M (q1 - q0) / (2h) - h (q0^T K q0 + q1^T K q1) / 4`.

use crate::dlps::{DlpsSystem, Pair};
use crate::error::{Error, Result};
use crate::scalar::{concat, lit, split, uniform, Real};
use crate::smooth::SmoothMap;
use nalgebra::{DMatrix, DVector};

/// Quadratic DMS with mass matrix `mass` and stiffness `stiffness`. Pairs are
/// sampled with `q0` in `[-1, 1]^n` and `q1 - q0` in `[-0.3, 0.3]^n`.
pub fn quadratic_dms<T: Real>(
    mass: DMatrix<T>,
    stiffness: DMatrix<T>,
    h: T,
) -> Result<DlpsSystem<T>> {
    let n = mass.nrows();
    if !mass.is_square() || stiffness.shape() != (n, n) {
        return Err(Error::Dimension {
            context: "mass and stiffness matrices".into(),
            expected: n,
            found: stiffness.nrows(),
        });
    }
    if h == T::zero() || !h.is_finite() {
        return Err(Error::validation(
            "time step h != 0",
            crate::scalar::to_f64(h),
            vec![],
        ));
    }
    // only the symmetric parts enter the quadratic forms
    let half = lit::<T>(0.5);
    let m = (&mass + mass.transpose()) * half;
    let k = (&stiffness + stiffness.transpose()) * half;
    let quarter = lit::<T>(0.25);
    let (m1, k1) = (m.clone(), k.clone());
    let l = SmoothMap::scalar(2 * n, move |x| {
        let (q0, q1) = split(x, n);
        let d = &q1 - &q0;
        Ok(d.dot(&(&m1 * &d)) / (h + h)
            - h * quarter * (q0.dot(&(&k1 * &q0)) + q1.dot(&(&k1 * &q1))))
    })
    .with_gradient(move |x| {
        let (q0, q1) = split(x, n);
        let md = &m * (&q1 - &q0) / h;
        let f = h * half;
        Ok(concat(&(-&md - &k * &q0 * f), &(md - &k * &q1 * f)))
    });
    Ok(DlpsSystem::from_dms(n, l)?.with_sampler(move |rng| {
        let q0 = DVector::from_fn(n, |_, _| uniform::<T>(rng, -1.0, 1.0));
        let d = DVector::from_fn(n, |_, _| uniform::<T>(rng, -0.3, 0.3));
        Pair::new(q0.clone(), q0 + d)
    }))
}

/// Unit-mass free particle on `R^n`.
pub fn free_particle<T: Real>(n: usize, h: T) -> Result<DlpsSystem<T>> {
    quadratic_dms(DMatrix::identity(n, n), DMatrix::zeros(n, n), h)
}

/// Unit-mass harmonic oscillator on `R^n` with angular frequency `omega`.
pub fn harmonic_oscillator<T: Real>(n: usize, h: T, omega: T) -> Result<DlpsSystem<T>> {
    quadratic_dms(
        DMatrix::identity(n, n),
        DMatrix::identity(n, n) * (omega * omega),
        h,
    )
}
