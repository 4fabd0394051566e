//! Discrete connections on principal bundles `Q -> Q/G`.
//!
//! A connection is given by its form `A_d(q0, q1)`, the unique `g` with
//! `(q0, g^-1 q1)` horizontal, together with the horizontal lift
//! `h_d(q0, r1)`. Both are partial maps: points outside the domain raise
//! [`Error::Domain`] instead of being extrapolated.

use crate::error::{Error, Result};
use crate::lie::{ActionModel, GroupElement, LieGroup};
use crate::scalar::{inf_norm, lit, Real};
use crate::smooth::{newton_solve, NewtonConfig, SmoothMap};
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use std::fmt;
use std::sync::Arc;

pub type PointSampler<T> = Arc<dyn Fn(&mut dyn RngCore) -> DVector<T> + Send + Sync>;
pub type PairSampler<T> = Arc<dyn Fn(&mut dyn RngCore) -> (DVector<T>, DVector<T>) + Send + Sync>;
pub type AdFn<T> = Arc<dyn Fn(&DVector<T>, &DVector<T>) -> Result<GroupElement<T>> + Send + Sync>;
pub type LiftFn<T> = Arc<dyn Fn(&DVector<T>, &DVector<T>) -> Result<DVector<T>> + Send + Sync>;
pub type HorizontalityFn<T> =
    Arc<dyn Fn(&DVector<T>, &DVector<T>) -> Result<DVector<T>> + Send + Sync>;

/// Coordinate model of a quotient `Q -> Q/G` with a global section.
#[derive(Clone)]
pub struct QuotientModel<T: Real> {
    pub project: SmoothMap<T>,
    pub section: SmoothMap<T>,
    pub action: ActionModel<T>,
    sampler: Option<PointSampler<T>>,
}

impl<T: Real> fmt::Debug for QuotientModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuotientModel")
            .field("total_dim", &self.total_dim())
            .field("base_dim", &self.base_dim())
            .field("group", &self.action.group().name())
            .finish()
    }
}

impl<T: Real> QuotientModel<T> {
    pub fn new(
        project: SmoothMap<T>,
        section: SmoothMap<T>,
        action: ActionModel<T>,
    ) -> Result<Self> {
        let n = project.in_dim();
        let checks = [
            ("section output", section.out_dim(), n),
            ("section input", section.in_dim(), project.out_dim()),
            ("action space", action.space_dim(), n),
        ];
        for (context, found, expected) in checks {
            if found != expected {
                return Err(Error::Dimension {
                    context: format!("quotient model {context}"),
                    expected,
                    found,
                });
            }
        }
        Ok(QuotientModel {
            project,
            section,
            action,
            sampler: None,
        })
    }

    /// `R^n` over itself under the trivial group.
    pub fn trivial(n: usize) -> Self {
        QuotientModel {
            project: SmoothMap::identity(n),
            section: SmoothMap::identity(n),
            action: ActionModel::trivial(n),
            sampler: None,
        }
    }

    pub fn with_sampler<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut dyn RngCore) -> DVector<T> + Send + Sync + 'static,
    {
        self.sampler = Some(Arc::new(f));
        self
    }

    pub fn total_dim(&self) -> usize {
        self.project.in_dim()
    }

    pub fn base_dim(&self) -> usize {
        self.project.out_dim()
    }

    pub fn group(&self) -> &Arc<dyn LieGroup<T>> {
        self.action.group()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Result<DVector<T>> {
        match &self.sampler {
            Some(s) => Ok(s(rng)),
            None => Err(Error::validation(
                "quotient model has no sampler",
                f64::NAN,
                vec![],
            )),
        }
    }

    /// Max violation of `project(g q) = project(q)` and
    /// `project(section(project(q))) = project(q)` over `n` samples.
    pub fn check(&self, n: usize, rng: &mut dyn RngCore) -> Result<T> {
        let mut worst = T::zero();
        for _ in 0..n {
            let q = self.sample(rng)?;
            let g = self.group().sample(rng, 2.0);
            let r = self.project.eval(&q)?;
            let rg = self.project.eval(&self.action.act(&g, &q))?;
            let rs = self.project.eval(&self.section.eval(&r)?)?;
            worst = worst.max(inf_norm(&(rg - &r))).max(inf_norm(&(rs - &r)));
        }
        Ok(worst)
    }
}

/// A discrete connection with its quotient model.
#[derive(Clone)]
pub struct DiscreteConnection<T: Real> {
    quotient: QuotientModel<T>,
    ad_form: AdFn<T>,
    hor_lift: Option<LiftFn<T>>,
    horizontality: Option<HorizontalityFn<T>>,
    pair_sampler: Option<PairSampler<T>>,
}

impl<T: Real> fmt::Debug for DiscreteConnection<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteConnection")
            .field("quotient", &self.quotient)
            .field("closed_form_lift", &self.hor_lift.is_some())
            .finish()
    }
}

/// Result of [`DiscreteConnection::check_equivariance`].
#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub samples: usize,
    /// Max of `|A_d(g0 q0, g1 q1) - g1 A_d(q0, q1) g0^-1|`.
    pub two_sided_max: f64,
    /// Max of `|A_d(q, q) - e|`.
    pub diagonal_max: f64,
    pub max_violation: f64,
    /// Samples skipped because they fell outside the connection's domain.
    pub domain_failures: usize,
}

impl<T: Real> DiscreteConnection<T> {
    pub fn new<F>(quotient: QuotientModel<T>, ad_form: F) -> Self
    where
        F: Fn(&DVector<T>, &DVector<T>) -> Result<GroupElement<T>> + Send + Sync + 'static,
    {
        DiscreteConnection {
            quotient,
            ad_form: Arc::new(ad_form),
            hor_lift: None,
            horizontality: None,
            pair_sampler: None,
        }
    }

    /// The connection of the trivial bundle `Q -> Q`.
    pub fn trivial(n: usize) -> Self {
        let e: GroupElement<T> = GroupElement::new(DVector::zeros(0));
        Self::new(QuotientModel::trivial(n), move |_, _| Ok(e.clone()))
            .with_lift(|_, r1| Ok(r1.clone()))
    }

    /// Closed-form horizontal lift, replacing the generic one.
    pub fn with_lift<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<T>, &DVector<T>) -> Result<DVector<T>> + Send + Sync + 'static,
    {
        self.hor_lift = Some(Arc::new(f));
        self
    }

    /// Residual of the equations cutting out `Hor`; zero iff horizontal.
    pub fn with_horizontality<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<T>, &DVector<T>) -> Result<DVector<T>> + Send + Sync + 'static,
    {
        self.horizontality = Some(Arc::new(f));
        self
    }

    pub fn with_pair_sampler<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut dyn RngCore) -> (DVector<T>, DVector<T>) + Send + Sync + 'static,
    {
        self.pair_sampler = Some(Arc::new(f));
        self
    }

    pub fn quotient(&self) -> &QuotientModel<T> {
        &self.quotient
    }

    pub fn group(&self) -> &Arc<dyn LieGroup<T>> {
        self.quotient.group()
    }

    pub fn action(&self) -> &ActionModel<T> {
        &self.quotient.action
    }

    /// The connection form `A_d(q0, q1)`.
    pub fn ad(&self, q0: &DVector<T>, q1: &DVector<T>) -> Result<GroupElement<T>> {
        (self.ad_form)(q0, q1)
    }

    /// `h_d(q0, r1)`: the `q1` over `r1` with `(q0, q1)` horizontal. Without
    /// a closed form, `q1 = A_d(q0, s)^-1 s` where `s = section(r1)`.
    pub fn horizontal_lift(&self, q0: &DVector<T>, r1: &DVector<T>) -> Result<DVector<T>> {
        if let Some(f) = &self.hor_lift {
            return f(q0, r1);
        }
        let s = self.quotient.section.eval(r1)?;
        let g = self.ad(q0, &s)?;
        Ok(self.action().act(&self.group().inverse(&g), &s))
    }

    /// Residual of the horizontality equations, when declared.
    pub fn horizontality(&self, q0: &DVector<T>, q1: &DVector<T>) -> Option<Result<DVector<T>>> {
        self.horizontality.as_ref().map(|f| f(q0, q1))
    }

    /// Samples `(q0, q1)` in the connection's domain. Falls back to
    /// `q1 = q0 + 0.2 (p - q0)` for two quotient samples `q0, p`.
    pub fn sample_pair(&self, rng: &mut dyn RngCore) -> Result<(DVector<T>, DVector<T>)> {
        if let Some(s) = &self.pair_sampler {
            return Ok(s(rng));
        }
        let q0 = self.quotient.sample(rng)?;
        let p = self.quotient.sample(rng)?;
        let q1 = &q0 + (p - &q0) * lit::<T>(0.2);
        Ok((q0, q1))
    }

    /// `|A_d(g0 q0, g1 q1) - g1 A_d(q0, q1) g0^-1|` at one sample.
    pub fn equivariance_violation_at(
        &self,
        q0: &DVector<T>,
        q1: &DVector<T>,
        g0: &GroupElement<T>,
        g1: &GroupElement<T>,
    ) -> Result<T> {
        let grp = self.group();
        let act = self.action();
        let lhs = self.ad(&act.act(g0, q0), &act.act(g1, q1))?;
        let rhs = grp.compose(&grp.compose(g1, &self.ad(q0, q1)?), &grp.inverse(g0));
        Ok(grp.distance(&lhs, &rhs))
    }

    /// Two-sided equivariance and the diagonal law at `n` random samples.
    pub fn check_equivariance(&self, n: usize, rng: &mut dyn RngCore) -> EquivarianceReport {
        let grp = self.group().clone();
        let mut two_sided = T::zero();
        let mut diagonal = T::zero();
        let mut failures = 0;
        for _ in 0..n {
            let Ok((q0, q1)) = self.sample_pair(rng) else {
                failures += 1;
                continue;
            };
            let g0 = grp.sample(rng, 2.0);
            let g1 = grp.sample(rng, 2.0);
            match self.equivariance_violation_at(&q0, &q1, &g0, &g1) {
                Ok(v) => two_sided = two_sided.max(v),
                Err(_) => failures += 1,
            }
            match self.ad(&q0, &q0) {
                Ok(g) => diagonal = diagonal.max(grp.distance(&g, &grp.identity())),
                Err(_) => failures += 1,
            }
        }
        let (a, b) = (
            crate::scalar::to_f64(two_sided),
            crate::scalar::to_f64(diagonal),
        );
        EquivarianceReport {
            samples: n,
            two_sided_max: a,
            diagonal_max: b,
            max_violation: a.max(b),
            domain_failures: failures,
        }
    }

    /// Max violation of `A_d(g q0, g q1) = g A_d(q0, q1) g^-1` for `g` in an
    /// ambient group acting on `Q`; `include` embeds this connection's group.
    pub fn conjugation_violation<F>(
        &self,
        ambient: &ActionModel<T>,
        include: F,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(T, DVector<T>)>
    where
        F: Fn(&GroupElement<T>) -> GroupElement<T>,
    {
        let big = ambient.group().clone();
        let mut worst = T::zero();
        let mut worst_at = DVector::zeros(0);
        for _ in 0..n {
            let (q0, q1) = self.sample_pair(rng)?;
            let g = big.sample(rng, 2.0);
            let lhs = include(&self.ad(&ambient.act(&g, &q0), &ambient.act(&g, &q1))?);
            let rhs = big.conjugate(&g, &include(&self.ad(&q0, &q1)?));
            let v = big.distance(&lhs, &rhs);
            if v > worst || worst_at.is_empty() {
                worst = worst.max(v);
                worst_at = crate::scalar::concat(&q0, &q1);
            }
        }
        Ok((worst, worst_at))
    }

    /// Max violation of `A_d(q0, h_d(q0, r1)) = e` and
    /// `project(h_d(q0, r1)) = r1` with `r1` projected from sampled pairs.
    pub fn lift_violation(&self, n: usize, rng: &mut dyn RngCore) -> Result<T> {
        let grp = self.group();
        let mut worst = T::zero();
        for _ in 0..n {
            let (q0, q1) = self.sample_pair(rng)?;
            let r1 = self.quotient.project.eval(&q1)?;
            let l = self.horizontal_lift(&q0, &r1)?;
            worst = worst
                .max(grp.distance(&self.ad(&q0, &l)?, &grp.identity()))
                .max(inf_norm(&(self.quotient.project.eval(&l)? - &r1)));
        }
        Ok(worst)
    }

    /// Checks `A_d(q0, q1) = e <=> (q0, q1) ∈ Hor` at `n` samples: horizontal
    /// lifts must have zero horizontality residual, and `A_d^-1 q1` must be
    /// horizontal over `q0`. Returns zero when no horizontality is declared.
    pub fn horizontality_violation(&self, n: usize, rng: &mut dyn RngCore) -> Result<T> {
        if self.horizontality.is_none() {
            return Ok(T::zero());
        }
        let grp = self.group();
        let mut worst = T::zero();
        for _ in 0..n {
            let (q0, q1) = self.sample_pair(rng)?;
            let g = self.ad(&q0, &q1)?;
            let straightened = self.action().act(&grp.inverse(&g), &q1);
            let r1 = self.quotient.project.eval(&q1)?;
            let lifted = self.horizontal_lift(&q0, &r1)?;
            for q in [straightened, lifted] {
                let res = self.horizontality(&q0, &q).expect("checked above")?;
                worst = worst.max(inf_norm(&res));
            }
        }
        Ok(worst)
    }
}

/// The discrete connection of a flat metric: `(q0, q1)` is horizontal when
/// `q1 - q0` is metric-orthogonal to the group orbit through `q0`.
///
/// The group acts by affine isometries, so geodesics are straight lines and
/// `A_d(q0, q1)` is found by Newton on algebra coordinates `xi` (started at
/// `xi = 0`) solving `G(q0)^T M (exp(xi)^-1 q1 - q0) = 0`.
pub fn mechanical_connection_flat<T: Real>(
    metric: DMatrix<T>,
    quotient: QuotientModel<T>,
) -> Result<DiscreteConnection<T>> {
    let n = quotient.total_dim();
    if metric.shape() != (n, n) {
        return Err(Error::Dimension {
            context: "metric".into(),
            expected: n,
            found: metric.nrows(),
        });
    }
    let asym = inf_norm(&DVector::from_iterator(
        n * n,
        (&metric - metric.transpose()).iter().copied(),
    ));
    if asym > lit(1e-12) || metric.clone().cholesky().is_none() {
        return Err(Error::validation(
            "metric symmetric positive definite",
            crate::scalar::to_f64(asym),
            vec![],
        ));
    }
    let action = quotient.action.clone();
    let group = action.group().clone();
    let k = group.dim();

    let hor_metric = metric.clone();
    let hor_action = action.clone();
    let horizontality = move |q0: &DVector<T>, q1: &DVector<T>| -> Result<DVector<T>> {
        let g = hor_action.generator_matrix(q0);
        Ok(g.transpose() * &hor_metric * (q1 - q0))
    };

    let ad = move |q0: &DVector<T>, q1: &DVector<T>| -> Result<GroupElement<T>> {
        if k == 0 {
            return Ok(group.identity());
        }
        let gens = action.generator_matrix(q0);
        let weighted = gens.transpose() * &metric;
        let (a, grp) = (action.clone(), group.clone());
        let (p0, p1) = (q0.clone(), q1.clone());
        let residual = SmoothMap::new(k, k, move |xi| {
            let g_inv = grp.inverse(&grp.exp(xi));
            Ok(&weighted * (a.act(&g_inv, &p1) - &p0))
        });
        let scale = T::one() + inf_norm(q0).max(inf_norm(q1));
        let cfg = NewtonConfig::default()
            .with_tol(crate::scalar::to_f64(lit::<T>(1e-13) * scale * scale));
        let sol = newton_solve(&residual, &DVector::zeros(k), &cfg)
            .map_err(|e| Error::domain(format!("no horizontal orbit representative: {e}")))?;
        Ok(group.exp(&sol.x))
    };

    Ok(DiscreteConnection::new(quotient, ad).with_horizontality(horizontality))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Translations2;
    use crate::scalar::{cget, cvec, uniform};
    use nalgebra::Complex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Translations of the line acting on R^2 diagonally; quotient is the difference.
    fn line_pair_quotient() -> QuotientModel<f64> {
        let action = ActionModel::new(Arc::new(Translations2), 4, |g, q| {
            let w = cget(&g.coords, 0);
            cvec(&[cget(q, 0) + w, cget(q, 1) + w])
        });
        let project = SmoothMap::new(4, 2, |q| Ok(cvec(&[cget(q, 0) - cget(q, 1)])));
        let section = SmoothMap::new(2, 4, |r| {
            let z = cget(r, 0);
            Ok(cvec(&[z, Complex::new(0.0, 0.0)]))
        });
        QuotientModel::new(project, section, action)
            .unwrap()
            .with_sampler(|rng| DVector::from_fn(4, |_, _| uniform(rng, -2.0, 2.0)))
    }

    #[test]
    fn flat_connection_on_translations() {
        let conn =
            mechanical_connection_flat(DMatrix::identity(4, 4), line_pair_quotient()).unwrap();
        let q0 = cvec(&[Complex::new(0.0, 0.0), Complex::new(2.0, 0.0)]);
        let q1 = cvec(&[Complex::new(1.0, 0.0), Complex::new(3.0, 0.0)]);
        let g = conn.ad(&q0, &q1).unwrap();
        assert!((g.coords[0] - 1.0).abs() < 1e-12 && g.coords[1].abs() < 1e-12);
        let e = conn.ad(&q0, &q0).unwrap();
        assert!(inf_norm(&e.coords) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep = conn.check_equivariance(50, &mut rng);
        assert!(rep.max_violation < 1e-10, "{rep:?}");
        assert!(conn.lift_violation(50, &mut rng).unwrap() < 1e-10);
        assert!(conn.horizontality_violation(50, &mut rng).unwrap() < 1e-10);
    }

    #[test]
    fn weighted_metric_moves_the_horizontal_space() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 3.0, 3.0]));
        let conn = mechanical_connection_flat(m, line_pair_quotient()).unwrap();
        let q0 = DVector::zeros(4);
        let q1 = cvec(&[Complex::new(4.0, 0.0), Complex::new(0.0, 0.0)]);
        // weighted centre of mass shift: (1*4 + 3*0) / 4
        let g = conn.ad(&q0, &q1).unwrap();
        assert!((g.coords[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_connection_is_caught() {
        let q = line_pair_quotient();
        let good = mechanical_connection_flat(DMatrix::identity(4, 4), q.clone()).unwrap();
        let broken = DiscreteConnection::new(q, move |q0, q1| {
            let g = good.ad(q0, q1)?;
            Ok(GroupElement::new(
                g.coords + DVector::from_vec(vec![0.5, 0.0]),
            ))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(broken.check_equivariance(20, &mut rng).max_violation >= 0.1);
    }

    #[test]
    fn non_spd_metric_is_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, -1.0, 1.0]));
        assert!(mechanical_connection_flat(m, line_pair_quotient()).is_err());
    }

    #[test]
    fn trivial_connection() {
        let conn = DiscreteConnection::<f64>::trivial(3);
        let q = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let r = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        assert_eq!(conn.horizontal_lift(&q, &r).unwrap(), r);
        assert_eq!(conn.ad(&q, &r).unwrap().coords.len(), 0);
    }
}
