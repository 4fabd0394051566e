//! Scalar abstraction and small vector helpers shared by every module.
//!
//! All numerical code is generic over [`Real`], which is implemented for
//! `f32` and `f64`. Tolerances and tuning constants are written as `f64`
//! literals and converted with [`lit`].

use nalgebra::{Complex, DVector, RealField};
use num_traits::{FloatConst, ToPrimitive};
use std::fmt;

/// Floating-point scalar usable throughout the crate.
pub trait Real: RealField + Copy + FloatConst + ToPrimitive + fmt::Display {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn to_f64_vec<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| to_f64(*x)).collect()
}

pub fn from_f64_slice<T: Real>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|x| lit::<T>(*x)))
}

/// Max-abs norm; zero for empty vectors.
pub fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

pub fn concat<T: Real>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Splits `x` into its first `n` entries and the rest.
pub fn split<T: Real>(x: &DVector<T>, n: usize) -> (DVector<T>, DVector<T>) {
    (
        x.rows(0, n).into_owned(),
        x.rows(n, x.len() - n).into_owned(),
    )
}

/// Machine epsilon of `T`.
#[inline]
pub fn eps<T: Real>() -> T {
    T::default_epsilon()
}

/// Relative tolerance for identities that should hold exactly up to
/// rounding: 1e-9 in double precision, a few thousand ulps otherwise.
pub fn identity_tol<T: Real>() -> T {
    lit::<T>(1e-9).max(eps::<T>() * lit(4096.0))
}

/// Relative step for central first differences: cbrt(eps).
pub fn fd_rel_step<T: Real>() -> T {
    eps::<T>().powf(lit(1.0 / 3.0))
}

/// Relative step for pure second differences: eps^(1/4).
pub fn fd_rel_step2<T: Real>() -> T {
    eps::<T>().powf(lit(0.25))
}

/// Draws a uniform sample from `[lo, hi)`.
pub fn uniform<T: Real>(rng: &mut dyn rand::RngCore, lo: f64, hi: f64) -> T {
    use rand::Rng;
    lit(rng.gen_range(lo..hi))
}

/// Reads the complex number stored at real offset `2 * slot`.
#[inline]
pub fn cget<T: Real>(v: &DVector<T>, slot: usize) -> Complex<T> {
    Complex::new(v[2 * slot], v[2 * slot + 1])
}

#[inline]
pub fn cset<T: Real>(v: &mut DVector<T>, slot: usize, z: Complex<T>) {
    v[2 * slot] = z.re;
    v[2 * slot + 1] = z.im;
}

/// Packs complex numbers into interleaved real coordinates.
pub fn cvec<T: Real>(zs: &[Complex<T>]) -> DVector<T> {
    let mut v = DVector::zeros(2 * zs.len());
    for (i, z) in zs.iter().enumerate() {
        cset(&mut v, i, *z);
    }
    v
}

#[inline]
pub fn cabs<T: Real>(z: Complex<T>) -> T {
    z.norm_sqr().sqrt()
}

/// `z / |z|`; the caller guarantees `z != 0`.
#[inline]
pub fn cunit<T: Real>(z: Complex<T>) -> Complex<T> {
    let r = cabs(z);
    Complex::new(z.re / r, z.im / r)
}

#[inline]
pub fn cscale<T: Real>(z: Complex<T>, s: T) -> Complex<T> {
    Complex::new(z.re * s, z.im * s)
}
