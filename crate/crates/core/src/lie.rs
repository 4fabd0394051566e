//! Lie groups in coordinates and their smooth left actions.
//!
//! Shipped groups: SE(2) as pairs `(A, v)` of complex numbers with `|A| = 1`,
//! the translation subgroup `T2 ≅ C`, `U(1)` as unit complex numbers, and the
//! trivial group. Elements are plain coordinate vectors; Lie-algebra elements
//! are coordinate vectors against the group's algebra basis.

use crate::error::{Error, Result};
use crate::scalar::{cget, cvec, fd_rel_step, inf_norm, lit, uniform, Real};
use crate::smooth::least_squares;
use nalgebra::{Complex, DMatrix, DVector};
use rand::RngCore;
use std::fmt;
use std::sync::Arc;

/// A group element in the coordinates of its group model.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement<T: Real> {
    pub coords: DVector<T>,
}

impl<T: Real> GroupElement<T> {
    pub fn new(coords: DVector<T>) -> Self {
        GroupElement { coords }
    }

    pub fn from_slice(c: &[T]) -> Self {
        GroupElement {
            coords: DVector::from_column_slice(c),
        }
    }
}

/// A finite-dimensional Lie group in global coordinates.
pub trait LieGroup<T: Real>: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    /// Dimension of the Lie algebra.
    fn dim(&self) -> usize;
    /// Number of coordinates of an element.
    fn coord_dim(&self) -> usize;
    fn identity(&self) -> GroupElement<T>;
    fn compose(&self, a: &GroupElement<T>, b: &GroupElement<T>) -> GroupElement<T>;
    fn inverse(&self, g: &GroupElement<T>) -> GroupElement<T>;
    /// Exponential of the algebra element with coordinates `xi`.
    fn exp(&self, xi: &DVector<T>) -> GroupElement<T>;
    /// A random element; translational parts are drawn from `[-scale, scale]`.
    fn sample(&self, rng: &mut dyn RngCore, scale: f64) -> GroupElement<T>;

    /// `g h g^-1`.
    fn conjugate(&self, g: &GroupElement<T>, h: &GroupElement<T>) -> GroupElement<T> {
        self.compose(&self.compose(g, h), &self.inverse(g))
    }

    /// Max-abs distance between coordinate vectors.
    fn distance(&self, a: &GroupElement<T>, b: &GroupElement<T>) -> T {
        inf_norm(&(&a.coords - &b.coords))
    }
}

fn random_unit<T: Real>(rng: &mut dyn RngCore) -> Complex<T> {
    let th: T = uniform(rng, -std::f64::consts::PI, std::f64::consts::PI);
    Complex::new(th.cos(), th.sin())
}

fn renormalize<T: Real>(a: Complex<T>) -> Complex<T> {
    // |A| stays 1 to rounding; one Newton step on |A|^2 = 1 removes the drift
    let s = (lit::<T>(3.0) - a.norm_sqr()) * lit(0.5);
    Complex::new(a.re * s, a.im * s)
}

/// SE(2) with coordinates `(a_re, a_im, v_re, v_im)`; product
/// `(A1, v1)(A2, v2) = (A1 A2, A1 v2 + v1)`. Algebra basis: rotation,
/// x-translation, y-translation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Se2;

impl Se2 {
    pub fn element<T: Real>(a: Complex<T>, v: Complex<T>) -> GroupElement<T> {
        GroupElement::new(cvec(&[a, v]))
    }

    pub fn rotation<T: Real>(a: Complex<T>) -> GroupElement<T> {
        Self::element(a, Complex::new(T::zero(), T::zero()))
    }

    pub fn translation<T: Real>(v: Complex<T>) -> GroupElement<T> {
        Self::element(Complex::new(T::one(), T::zero()), v)
    }

    pub fn parts<T: Real>(g: &GroupElement<T>) -> (Complex<T>, Complex<T>) {
        (cget(&g.coords, 0), cget(&g.coords, 1))
    }

    /// The rotation part of `g`, i.e. the image of `g` in `SE(2)/T2 ≅ U(1)`.
    pub fn project_to_quotient<T: Real>(g: &GroupElement<T>) -> GroupElement<T> {
        U1::element(cget(&g.coords, 0))
    }
}

impl<T: Real> LieGroup<T> for Se2 {
    fn name(&self) -> &'static str {
        "SE(2)"
    }
    fn dim(&self) -> usize {
        3
    }
    fn coord_dim(&self) -> usize {
        4
    }
    fn identity(&self) -> GroupElement<T> {
        Se2::translation(Complex::new(T::zero(), T::zero()))
    }
    fn compose(&self, a: &GroupElement<T>, b: &GroupElement<T>) -> GroupElement<T> {
        let (a1, v1) = Se2::parts(a);
        let (a2, v2) = Se2::parts(b);
        Se2::element(renormalize(a1 * a2), a1 * v2 + v1)
    }
    fn inverse(&self, g: &GroupElement<T>) -> GroupElement<T> {
        let (a, v) = Se2::parts(g);
        let ai = a.conj();
        Se2::element(ai, -(ai * v))
    }
    fn conjugate(&self, g: &GroupElement<T>, h: &GroupElement<T>) -> GroupElement<T> {
        // rotations commute, so (A,v)(B,u)(A,v)^-1 = (B, A u + (1 - B) v) with B kept exact
        let (a, v) = Se2::parts(g);
        let (b, u) = Se2::parts(h);
        let one = Complex::new(T::one(), T::zero());
        Se2::element(b, a * u + (one - b) * v)
    }
    fn exp(&self, xi: &DVector<T>) -> GroupElement<T> {
        let th = xi[0];
        let u = Complex::new(xi[1], xi[2]);
        let a = Complex::new(th.cos(), th.sin());
        // v = (e^{i th} - 1) / (i th) * u
        let v = if th.abs() < lit(1e-8) {
            let half = lit::<T>(0.5) * th;
            u * Complex::new(T::one(), half)
        } else {
            let s = th.sin() / th;
            let c = (T::one() - th.cos()) / th;
            u * Complex::new(s, c)
        };
        Se2::element(a, v)
    }
    fn sample(&self, rng: &mut dyn RngCore, scale: f64) -> GroupElement<T> {
        let a = random_unit(rng);
        let v = Complex::new(uniform(rng, -scale, scale), uniform(rng, -scale, scale));
        Se2::element(a, v)
    }
}

/// The translation group `T2 ≅ C` with coordinates `(w_re, w_im)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Translations2;

impl Translations2 {
    pub fn element<T: Real>(w: Complex<T>) -> GroupElement<T> {
        GroupElement::new(cvec(&[w]))
    }

    /// The inclusion `T2 -> SE(2)`, `w -> (1, w)`.
    pub fn into_se2<T: Real>(g: &GroupElement<T>) -> GroupElement<T> {
        Se2::translation(cget(&g.coords, 0))
    }
}

impl<T: Real> LieGroup<T> for Translations2 {
    fn name(&self) -> &'static str {
        "T2"
    }
    fn dim(&self) -> usize {
        2
    }
    fn coord_dim(&self) -> usize {
        2
    }
    fn identity(&self) -> GroupElement<T> {
        GroupElement::new(DVector::zeros(2))
    }
    fn compose(&self, a: &GroupElement<T>, b: &GroupElement<T>) -> GroupElement<T> {
        GroupElement::new(&a.coords + &b.coords)
    }
    fn inverse(&self, g: &GroupElement<T>) -> GroupElement<T> {
        GroupElement::new(-&g.coords)
    }
    fn exp(&self, xi: &DVector<T>) -> GroupElement<T> {
        GroupElement::new(xi.clone())
    }
    fn sample(&self, rng: &mut dyn RngCore, scale: f64) -> GroupElement<T> {
        Translations2::element(Complex::new(
            uniform(rng, -scale, scale),
            uniform(rng, -scale, scale),
        ))
    }
}

/// `U(1)` as unit complex numbers `(a_re, a_im)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct U1;

impl U1 {
    pub fn element<T: Real>(a: Complex<T>) -> GroupElement<T> {
        GroupElement::new(cvec(&[a]))
    }

    pub fn from_angle<T: Real>(th: T) -> GroupElement<T> {
        Self::element(Complex::new(th.cos(), th.sin()))
    }

    pub fn angle<T: Real>(g: &GroupElement<T>) -> T {
        g.coords[1].atan2(g.coords[0])
    }

    pub fn unit<T: Real>(g: &GroupElement<T>) -> Complex<T> {
        cget(&g.coords, 0)
    }

    /// The section `U(1) -> SE(2)`, `A -> (A, 0)`.
    pub fn into_se2<T: Real>(g: &GroupElement<T>) -> GroupElement<T> {
        Se2::rotation(cget(&g.coords, 0))
    }
}

impl<T: Real> LieGroup<T> for U1 {
    fn name(&self) -> &'static str {
        "U(1)"
    }
    fn dim(&self) -> usize {
        1
    }
    fn coord_dim(&self) -> usize {
        2
    }
    fn identity(&self) -> GroupElement<T> {
        U1::element(Complex::new(T::one(), T::zero()))
    }
    fn compose(&self, a: &GroupElement<T>, b: &GroupElement<T>) -> GroupElement<T> {
        U1::element(renormalize(U1::unit(a) * U1::unit(b)))
    }
    fn inverse(&self, g: &GroupElement<T>) -> GroupElement<T> {
        U1::element(U1::unit(g).conj())
    }
    fn exp(&self, xi: &DVector<T>) -> GroupElement<T> {
        U1::from_angle(xi[0])
    }
    fn sample(&self, rng: &mut dyn RngCore, _scale: f64) -> GroupElement<T> {
        U1::element(random_unit(rng))
    }
}

/// The vector group `R^n` under addition.
#[derive(Debug, Clone, Copy)]
pub struct VectorTranslations(pub usize);

impl<T: Real> LieGroup<T> for VectorTranslations {
    fn name(&self) -> &'static str {
        "R^n"
    }
    fn dim(&self) -> usize {
        self.0
    }
    fn coord_dim(&self) -> usize {
        self.0
    }
    fn identity(&self) -> GroupElement<T> {
        GroupElement::new(DVector::zeros(self.0))
    }
    fn compose(&self, a: &GroupElement<T>, b: &GroupElement<T>) -> GroupElement<T> {
        GroupElement::new(&a.coords + &b.coords)
    }
    fn inverse(&self, g: &GroupElement<T>) -> GroupElement<T> {
        GroupElement::new(-&g.coords)
    }
    fn exp(&self, xi: &DVector<T>) -> GroupElement<T> {
        GroupElement::new(xi.clone())
    }
    fn sample(&self, rng: &mut dyn RngCore, scale: f64) -> GroupElement<T> {
        GroupElement::new(DVector::from_fn(self.0, |_, _| uniform(rng, -scale, scale)))
    }
}

/// `R^n` acting on itself by translation.
pub fn translation_action<T: Real>(n: usize) -> ActionModel<T> {
    ActionModel::new(Arc::new(VectorTranslations(n)), n, |g, q| q + &g.coords)
        .with_generator(move |i, _| {
            let mut e = DVector::zeros(n);
            e[i] = T::one();
            e
        })
        .with_matcher(|t, s| Ok(GroupElement::new(t - s)))
}

/// The trivial group `{e}` with no coordinates.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrivialGroup;

impl<T: Real> LieGroup<T> for TrivialGroup {
    fn name(&self) -> &'static str {
        "{e}"
    }
    fn dim(&self) -> usize {
        0
    }
    fn coord_dim(&self) -> usize {
        0
    }
    fn identity(&self) -> GroupElement<T> {
        GroupElement::new(DVector::zeros(0))
    }
    fn compose(&self, _a: &GroupElement<T>, _b: &GroupElement<T>) -> GroupElement<T> {
        self.identity()
    }
    fn inverse(&self, _g: &GroupElement<T>) -> GroupElement<T> {
        self.identity()
    }
    fn exp(&self, _xi: &DVector<T>) -> GroupElement<T> {
        self.identity()
    }
    fn sample(&self, _rng: &mut dyn RngCore, _scale: f64) -> GroupElement<T> {
        self.identity()
    }
}

pub type ActFn<T> = Arc<dyn Fn(&GroupElement<T>, &DVector<T>) -> DVector<T> + Send + Sync>;
pub type GeneratorFn<T> = Arc<dyn Fn(usize, &DVector<T>) -> DVector<T> + Send + Sync>;
pub type MatchFn<T> =
    Arc<dyn Fn(&DVector<T>, &DVector<T>) -> Result<GroupElement<T>> + Send + Sync>;

/// A smooth left action of a group on `R^space_dim`.
///
/// Optional closed forms for the infinitesimal generators and for orbit
/// matching replace the generic FD / Gauss-Newton fallbacks.
#[derive(Clone)]
pub struct ActionModel<T: Real> {
    group: Arc<dyn LieGroup<T>>,
    space_dim: usize,
    act: ActFn<T>,
    generator: Option<GeneratorFn<T>>,
    matcher: Option<MatchFn<T>>,
}

impl<T: Real> fmt::Debug for ActionModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActionModel")
            .field("group", &self.group.name())
            .field("space_dim", &self.space_dim)
            .finish()
    }
}

impl<T: Real> ActionModel<T> {
    pub fn new<F>(group: Arc<dyn LieGroup<T>>, space_dim: usize, act: F) -> Self
    where
        F: Fn(&GroupElement<T>, &DVector<T>) -> DVector<T> + Send + Sync + 'static,
    {
        ActionModel {
            group,
            space_dim,
            act: Arc::new(act),
            generator: None,
            matcher: None,
        }
    }

    /// The trivial group acting on `R^n`.
    pub fn trivial(space_dim: usize) -> Self {
        Self::new(Arc::new(TrivialGroup), space_dim, |_, q| q.clone())
    }

    pub fn with_generator<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, &DVector<T>) -> DVector<T> + Send + Sync + 'static,
    {
        self.generator = Some(Arc::new(f));
        self
    }

    /// Closed-form solver for `act(g, source) = target`.
    pub fn with_matcher<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<T>, &DVector<T>) -> Result<GroupElement<T>> + Send + Sync + 'static,
    {
        self.matcher = Some(Arc::new(f));
        self
    }

    pub fn group(&self) -> &Arc<dyn LieGroup<T>> {
        &self.group
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    pub fn act(&self, g: &GroupElement<T>, q: &DVector<T>) -> DVector<T> {
        (self.act)(g, q)
    }

    /// `d/dt|0 act(exp(t xi_i), q)` by central differences in `t`.
    pub fn infinitesimal_generator_fd(&self, xi_index: usize, q: &DVector<T>) -> DVector<T> {
        let mut xi = DVector::zeros(self.group.dim());
        let h = fd_rel_step::<T>();
        xi[xi_index] = h;
        let qp = self.act(&self.group.exp(&xi), q);
        xi[xi_index] = -h;
        let qm = self.act(&self.group.exp(&xi), q);
        (qp - qm) / (h + h)
    }

    /// The generator of basis element `xi_index` at `q`; closed form when
    /// declared, FD otherwise.
    pub fn infinitesimal_generator(&self, xi_index: usize, q: &DVector<T>) -> DVector<T> {
        match &self.generator {
            Some(g) => g(xi_index, q),
            None => self.infinitesimal_generator_fd(xi_index, q),
        }
    }

    /// Columns are the generators of the algebra basis at `q`.
    pub fn generator_matrix(&self, q: &DVector<T>) -> DMatrix<T> {
        let k = self.group.dim();
        let mut m = DMatrix::zeros(self.space_dim, k);
        for i in 0..k {
            m.set_column(i, &self.infinitesimal_generator(i, q));
        }
        m
    }

    /// Jacobian of `q -> act(g, q)` by central differences.
    pub fn differential(&self, g: &GroupElement<T>, q: &DVector<T>) -> DMatrix<T> {
        let n = self.space_dim;
        let mut m = DMatrix::zeros(n, n);
        let mut qp = q.clone();
        let rel = fd_rel_step::<T>();
        for j in 0..n {
            let h = rel * (T::one() + q[j].abs());
            qp[j] = q[j] + h;
            let fp = self.act(g, &qp);
            qp[j] = q[j] - h;
            let fm = self.act(g, &qp);
            qp[j] = q[j];
            m.set_column(j, &((fp - fm) / (h + h)));
        }
        m
    }

    /// Finds `g` with `act(g, source) = target`. Uses the declared matcher,
    /// or Gauss-Newton on left increments `g <- exp(d) g` started at `e`.
    pub fn match_element(
        &self,
        target: &DVector<T>,
        source: &DVector<T>,
    ) -> Result<GroupElement<T>> {
        if let Some(m) = &self.matcher {
            return m(target, source);
        }
        let scale = T::one() + inf_norm(target).max(inf_norm(source));
        let tol = lit::<T>(1e-13).max(crate::scalar::eps::<T>() * lit(16.0)) * scale;
        let mut g = self.group.identity();
        let mut r = self.act(&g, source) - target;
        for _ in 0..100 {
            if inf_norm(&r) <= tol {
                break;
            }
            let q = self.act(&g, source);
            let j = self.generator_matrix(&q);
            let d = least_squares(&j, &(-&r))
                .ok_or_else(|| Error::Matching("degenerate orbit (generators dependent)".into()))?;
            g = self.group.compose(&self.group.exp(&d), &g);
            r = self.act(&g, source) - target;
        }
        let res = inf_norm(&r);
        if res > crate::scalar::identity_tol::<T>() * scale {
            return Err(Error::Matching(format!(
                "target is not in the orbit of the source (residual {res})"
            )));
        }
        Ok(g)
    }

    /// The diagonal action on `R^space_dim x R^other.space_dim`.
    pub fn diagonal(&self, other: &ActionModel<T>) -> ActionModel<T> {
        let (a, b) = (self.clone(), other.clone());
        let n = self.space_dim;
        let (ga, gb) = (self.clone(), other.clone());
        ActionModel::new(self.group.clone(), n + other.space_dim, move |g, x| {
            let (p, q) = crate::scalar::split(x, n);
            crate::scalar::concat(&a.act(g, &p), &b.act(g, &q))
        })
        .with_generator(move |i, x| {
            let (p, q) = crate::scalar::split(x, n);
            crate::scalar::concat(
                &ga.infinitesimal_generator(i, &p),
                &gb.infinitesimal_generator(i, &q),
            )
        })
    }

    /// Largest violation of `act(e, q) = q` and
    /// `act(g1, act(g2, q)) = act(g1 g2, q)` over the given points.
    pub fn axiom_violation(&self, points: &[DVector<T>], rng: &mut dyn RngCore) -> T {
        let e = self.group.identity();
        let mut worst = T::zero();
        for q in points {
            worst = worst.max(inf_norm(&(self.act(&e, q) - q)));
            let g1 = self.group.sample(rng, 2.0);
            let g2 = self.group.sample(rng, 2.0);
            let lhs = self.act(&g1, &self.act(&g2, q));
            let rhs = self.act(&self.group.compose(&g1, &g2), q);
            worst = worst.max(inf_norm(&(lhs - rhs)));
        }
        worst
    }
}
