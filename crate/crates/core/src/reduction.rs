//! Symmetry reduction of a DLPS by a group `G` with a discrete connection.
//!
//! The reduction morphism sends `(ε0, m1)` to
//! `([ε0, A_d(phi(ε0), m1)], [m1])` in `C'(G̃_E) = G̃_E x M/G`, where
//! `G̃_E = (E x G)/G` with `G` acting on itself by conjugation. Quotients are
//! never represented abstractly: every reduction goes through a coordinate
//! [`ReducedModel`] whose `upsilon` and `lift_section` are validated against
//! each other and against the group action.

use crate::connection::DiscreteConnection;
use crate::dlps::{del_residual, BundleKind, DiscretePath, DlpsSystem, FiberBundleModel, Pair};
use crate::error::{Error, Result};
use crate::lie::{ActionModel, GroupElement, LieGroup};
use crate::scalar::{concat, inf_norm, lit, split, to_f64, to_f64_vec, Real};
use crate::smooth::{pseudo_inverse, rank, solve_square, SmoothMap};
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub type ChartFn<T> =
    Arc<dyn Fn(&DVector<T>, &GroupElement<T>) -> Result<DVector<T>> + Send + Sync>;
pub type ChartSectionFn<T> =
    Arc<dyn Fn(&DVector<T>) -> Result<(DVector<T>, GroupElement<T>)> + Send + Sync>;

/// Coordinates on the conjugate bundle `(E x G)/G`.
///
/// `chart(g ε, g w g^-1) = chart(ε, w)` and `chart(section(v)) = v`.
#[derive(Clone)]
pub struct ConjugateChart<T: Real> {
    pub dim: usize,
    chart: ChartFn<T>,
    section: ChartSectionFn<T>,
}

impl<T: Real> ConjugateChart<T> {
    pub fn new<C, S>(dim: usize, chart: C, section: S) -> Self
    where
        C: Fn(&DVector<T>, &GroupElement<T>) -> Result<DVector<T>> + Send + Sync + 'static,
        S: Fn(&DVector<T>) -> Result<(DVector<T>, GroupElement<T>)> + Send + Sync + 'static,
    {
        ConjugateChart {
            dim,
            chart: Arc::new(chart),
            section: Arc::new(section),
        }
    }

    pub fn chart(&self, e: &DVector<T>, w: &GroupElement<T>) -> Result<DVector<T>> {
        (self.chart)(e, w)
    }

    pub fn section(&self, v: &DVector<T>) -> Result<(DVector<T>, GroupElement<T>)> {
        (self.section)(v)
    }
}

/// A coordinate model of `C'(E) -> C'(G̃_E)`.
///
/// `upsilon` is constant on orbits of the diagonal action and
/// `upsilon(lift_section(y)) = y`.
#[derive(Clone)]
pub struct ReducedModel<T: Real> {
    pub source_bundle: FiberBundleModel<T>,
    pub reduced_bundle: FiberBundleModel<T>,
    pub upsilon: SmoothMap<T>,
    pub lift_section: SmoothMap<T>,
    pub e_action: ActionModel<T>,
    pub m_action: ActionModel<T>,
}

impl<T: Real> fmt::Debug for ReducedModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedModel")
            .field("source_bundle", &self.source_bundle)
            .field("reduced_bundle", &self.reduced_bundle)
            .field("group", &self.e_action.group().name())
            .finish()
    }
}

/// Max violations found by [`ReducedModel::check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelReport {
    pub samples: usize,
    /// `|upsilon(g x) - upsilon(x)|`.
    pub invariance_max: f64,
    /// `|upsilon(lift_section(y)) - y|` on `y = upsilon(x)`.
    pub section_max: f64,
    /// Smallest rank of `D1(p1 ∘ upsilon)` seen; must equal the reduced `E` dimension.
    pub min_e_rank: usize,
}

impl<T: Real> ReducedModel<T> {
    pub fn new(
        source_bundle: FiberBundleModel<T>,
        reduced_bundle: FiberBundleModel<T>,
        upsilon: SmoothMap<T>,
        lift_section: SmoothMap<T>,
        e_action: ActionModel<T>,
        m_action: ActionModel<T>,
    ) -> Result<Self> {
        let src = source_bundle.total_dim() + source_bundle.base_dim();
        let red = reduced_bundle.total_dim() + reduced_bundle.base_dim();
        let checks = [
            ("upsilon input", upsilon.in_dim(), src),
            ("upsilon output", upsilon.out_dim(), red),
            ("lift input", lift_section.in_dim(), red),
            ("lift output", lift_section.out_dim(), src),
            ("E action", e_action.space_dim(), source_bundle.total_dim()),
            ("M action", m_action.space_dim(), source_bundle.base_dim()),
        ];
        for (what, found, expected) in checks {
            if found != expected {
                return Err(Error::Dimension {
                    context: format!("reduced model {what}"),
                    expected,
                    found,
                });
            }
        }
        Ok(ReducedModel {
            source_bundle,
            reduced_bundle,
            upsilon,
            lift_section,
            e_action,
            m_action,
        })
    }

    /// Reduction by the trivial group: everything is the identity.
    pub fn trivial(bundle: &FiberBundleModel<T>) -> Self {
        let n = bundle.total_dim() + bundle.base_dim();
        ReducedModel {
            source_bundle: bundle.clone(),
            reduced_bundle: bundle.clone(),
            upsilon: SmoothMap::identity(n),
            lift_section: SmoothMap::identity(n),
            e_action: ActionModel::trivial(bundle.total_dim()),
            m_action: ActionModel::trivial(bundle.base_dim()),
        }
    }

    pub fn group(&self) -> &Arc<dyn LieGroup<T>> {
        self.e_action.group()
    }

    /// The diagonal action on `C'(E)`.
    pub fn group_action(&self) -> ActionModel<T> {
        self.e_action.diagonal(&self.m_action)
    }

    pub fn reduced_eps_dim(&self) -> usize {
        self.reduced_bundle.total_dim()
    }

    pub fn project_pair(&self, p: &Pair<T>) -> Result<Pair<T>> {
        let y = self.upsilon.eval(&p.to_vector())?;
        Ok(Pair::from_vector(&y, self.reduced_eps_dim()))
    }

    pub fn lift_pair(&self, y: &Pair<T>) -> Result<Pair<T>> {
        let x = self.lift_section.eval(&y.to_vector())?;
        Ok(Pair::from_vector(&x, self.source_bundle.total_dim()))
    }

    pub fn act_pair(&self, g: &GroupElement<T>, p: &Pair<T>) -> Pair<T> {
        Pair::new(self.e_action.act(g, &p.eps), self.m_action.act(g, &p.m))
    }

    /// `(D1(p1 ∘ upsilon), D2(p1 ∘ upsilon))` at a pair.
    pub fn e_jacobians(&self, p: &Pair<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let j = self.upsilon.jacobian(&p.to_vector())?;
        let (ne, nm, nr) = (
            self.source_bundle.total_dim(),
            self.source_bundle.base_dim(),
            self.reduced_eps_dim(),
        );
        Ok((
            j.view((0, 0), (nr, ne)).into_owned(),
            j.view((0, ne), (nr, nm)).into_owned(),
        ))
    }

    /// Checks the model's defining identities at sampled pairs.
    pub fn check(&self, samples: &[Pair<T>], rng: &mut dyn RngCore) -> Result<ModelReport> {
        let mut inv = T::zero();
        let mut sec = T::zero();
        let mut min_rank = usize::MAX;
        for p in samples {
            let y = self.upsilon.eval(&p.to_vector())?;
            let g = self.group().sample(rng, 2.0);
            let yg = self.upsilon.eval(&self.act_pair(&g, p).to_vector())?;
            inv = inv.max(inf_norm(&(yg - &y)));
            let back = self.upsilon.eval(&self.lift_section.eval(&y)?)?;
            sec = sec.max(inf_norm(&(back - &y)));
            let (a, _) = self.e_jacobians(p)?;
            min_rank = min_rank.min(rank(&a, lit(1e-8)));
        }
        Ok(ModelReport {
            samples: samples.len(),
            invariance_max: to_f64(inv),
            section_max: to_f64(sec),
            min_e_rank: if samples.is_empty() {
                self.reduced_eps_dim()
            } else {
                min_rank
            },
        })
    }

    /// Runs [`ReducedModel::check`] and turns violations above `tol` into
    /// validation errors.
    pub fn validate(
        &self,
        samples: &[Pair<T>],
        rng: &mut dyn RngCore,
        tol: f64,
    ) -> Result<ModelReport> {
        let rep = self.check(samples, rng)?;
        if rep.invariance_max > tol {
            return Err(Error::validation(
                "upsilon(g x) = upsilon(x)",
                rep.invariance_max,
                vec![],
            ));
        }
        if rep.section_max > tol {
            return Err(Error::validation(
                "upsilon(lift_section(y)) = y",
                rep.section_max,
                vec![],
            ));
        }
        if rep.min_e_rank < self.reduced_eps_dim() {
            return Err(Error::validation(
                "D1(p1 ∘ upsilon) is an isomorphism",
                (self.reduced_eps_dim() - rep.min_e_rank) as f64,
                vec![],
            ));
        }
        Ok(rep)
    }
}

/// Max violations of `G`-invariance of a system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryReport {
    /// `|L(g x) - L(x)|`.
    pub lagrangian_max: f64,
    /// `|IVCM(g x0, g x1) dl_g(ε1) - dl_g(ε0) IVCM(x0, x1)|`.
    pub ivcm_max: f64,
}

/// Checks that `G` (acting by `e_action` on `E` and `m_action` on `M`) is a
/// symmetry of `sys` at `n` sampled consecutive pairs.
pub fn check_symmetry<T: Real>(
    sys: &DlpsSystem<T>,
    e_action: &ActionModel<T>,
    m_action: &ActionModel<T>,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<SymmetryReport> {
    let grp = e_action.group().clone();
    let mut lag = T::zero();
    let mut ivcm = T::zero();
    for _ in 0..n {
        let (p0, p1) = sys.sample_consecutive(rng)?;
        let g = grp.sample(rng, 2.0);
        let act = |p: &Pair<T>| Pair::new(e_action.act(&g, &p.eps), m_action.act(&g, &p.m));
        let (q0, q1) = (act(&p0), act(&p1));
        lag = lag.max((sys.lagrangian_at(&q0)? - sys.lagrangian_at(&p0)?).abs());
        if !sys.is_dms() {
            let lhs = sys.ivcm(&q0, &q1)? * e_action.differential(&g, &p1.eps);
            let rhs = e_action.differential(&g, &p0.eps) * sys.ivcm(&p0, &p1)?;
            ivcm = ivcm.max((lhs - rhs).iter().fold(T::zero(), |a, x| a.max(x.abs())));
        }
    }
    Ok(SymmetryReport {
        lagrangian_max: to_f64(lag),
        ivcm_max: to_f64(ivcm),
    })
}

pub fn validate_symmetry<T: Real>(
    sys: &DlpsSystem<T>,
    e_action: &ActionModel<T>,
    m_action: &ActionModel<T>,
    n: usize,
    rng: &mut dyn RngCore,
    tol: f64,
) -> Result<SymmetryReport> {
    let rep = check_symmetry(sys, e_action, m_action, n, rng)?;
    if rep.lagrangian_max > tol {
        return Err(Error::validation(
            "L_d(g x) = L_d(x)",
            rep.lagrangian_max,
            vec![],
        ));
    }
    if rep.ivcm_max > tol {
        return Err(Error::validation("IVCM equivariance", rep.ivcm_max, vec![]));
    }
    Ok(rep)
}

fn sample_pairs<T: Real>(
    sys: &DlpsSystem<T>,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Pair<T>>> {
    (0..n).map(|_| sys.sample_pair(rng)).collect()
}

/// Assembles the reduction morphism from a connection on `M -> M/G` and a
/// chart of `(E x G)/G`:
///
/// * `upsilon(ε0, m1) = (chart(ε0, A_d(phi(ε0), m1)), project(m1))`,
/// * `lift_section(v, r1) = (ε, w h_d(phi(ε), r1))` with `(ε, w) = chart.section(v)`.
///
/// When `sys` has a sampler, the symmetry and the model identities are
/// validated at 50 samples.
pub fn build_upsilon<T: Real>(
    conn: &DiscreteConnection<T>,
    sys: &DlpsSystem<T>,
    chart: ConjugateChart<T>,
    reduced_bundle: FiberBundleModel<T>,
    e_action: ActionModel<T>,
    rng: &mut dyn RngCore,
) -> Result<ReducedModel<T>> {
    let bundle = sys.bundle().clone();
    let (ne, nm) = (bundle.total_dim(), bundle.base_dim());
    if chart.dim != reduced_bundle.total_dim() {
        return Err(Error::Dimension {
            context: "conjugate chart".into(),
            expected: reduced_bundle.total_dim(),
            found: chart.dim,
        });
    }
    let nr = chart.dim;
    let nb = reduced_bundle.base_dim();
    let m_action = conn.action().clone();

    let (c, ch, b) = (conn.clone(), chart.clone(), bundle.clone());
    let upsilon = SmoothMap::new(ne + nm, nr + nb, move |x| {
        let (e0, m1) = split(x, ne);
        let w = c.ad(&b.phi(&e0)?, &m1)?;
        let v = ch.chart(&e0, &w)?;
        let r1 = c.quotient().project.eval(&m1)?;
        Ok(concat(&v, &r1))
    });
    let (c, ch, b) = (conn.clone(), chart, bundle.clone());
    let lift = SmoothMap::new(nr + nb, ne + nm, move |y| {
        let (v, r1) = split(y, nr);
        let (e0, w) = ch.section(&v)?;
        let q1 = c.horizontal_lift(&b.phi(&e0)?, &r1)?;
        Ok(concat(&e0, &c.action().act(&w, &q1)))
    });
    let model = ReducedModel::new(bundle, reduced_bundle, upsilon, lift, e_action, m_action)?;
    if sys.sampler().is_some() {
        validate_symmetry(sys, &model.e_action, &model.m_action, 50, rng, 1e-8)?;
        let samples = sample_pairs(sys, 50, rng)?;
        model.validate(&samples, rng, 1e-9)?;
    }
    Ok(model)
}

/// The reduced system together with its model.
#[derive(Clone)]
pub struct ReductionResult<T: Real> {
    pub system: DlpsSystem<T>,
    pub model: ReducedModel<T>,
    source: DlpsSystem<T>,
    pinv_fallbacks: Arc<AtomicUsize>,
}

impl<T: Real> fmt::Debug for ReductionResult<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReductionResult")
            .field("system", &self.system)
            .field("model", &self.model)
            .field("pinv_fallbacks", &self.pinv_fallbacks())
            .finish()
    }
}

/// The reduced IVCM at representatives `x0`, `x1` of consecutive reduced
/// pairs: `(D1(p1 Υ)(x0) IVCM(x0, x1) + D2(p1 Υ)(x0) dphi(ε1)) D1(p1 Υ)(x1)^-1`.
/// The flag is set when the inverse had to be replaced by a pseudo-inverse.
pub fn reduced_ivcm_at<T: Real>(
    sys: &DlpsSystem<T>,
    model: &ReducedModel<T>,
    x0: &Pair<T>,
    x1: &Pair<T>,
) -> Result<(DMatrix<T>, bool)> {
    let (a0, b0) = model.e_jacobians(x0)?;
    let (a1, _) = model.e_jacobians(x1)?;
    let mut num = &b0 * sys.bundle().dphi(&x1.eps)?;
    if !sys.is_dms() {
        num += &a0 * sys.ivcm(x0, x1)?;
    }
    // X a1 = num  <=>  a1^T X^T = num^T
    let a1t = a1.transpose();
    let numt = num.transpose();
    let n = a1t.nrows();
    if a1t.is_square() {
        let mut cols = Vec::with_capacity(numt.ncols());
        for j in 0..numt.ncols() {
            match solve_square(&a1t, &numt.column(j).into_owned()) {
                Some(c) => cols.push(c),
                None => break,
            }
        }
        if cols.len() == numt.ncols() && rank(&a1, lit(1e-10)) == n {
            return Ok((DMatrix::from_columns(&cols).transpose(), false));
        }
    }
    if rank(&a1, lit(1e-10)) < a1.nrows() {
        return Err(Error::SingularJacobian(format!(
            "D1(p1 ∘ upsilon) is not onto at {:?}",
            to_f64_vec(&x1.eps)
        )));
    }
    let pinv = pseudo_inverse(&a1).ok_or_else(|| {
        Error::SingularJacobian("pseudo-inverse of D1(p1 ∘ upsilon) failed".into())
    })?;
    Ok((num * pinv, true))
}

/// Representatives `x0 = lift(y0)` and `x1 = g lift(y1)` with `g` chosen
/// so that `phi(ε1) = m1`.
pub fn lift_consecutive<T: Real>(
    model: &ReducedModel<T>,
    y0: &Pair<T>,
    y1: &Pair<T>,
) -> Result<(Pair<T>, Pair<T>)> {
    let x0 = model.lift_pair(y0)?;
    let x1p = model.lift_pair(y1)?;
    let base = model.source_bundle.phi(&x1p.eps)?;
    let g = model.m_action.match_element(&x0.m, &base)?;
    Ok((x0, model.act_pair(&g, &x1p)))
}

/// Builds the reduced system: Lagrangian `L ∘ lift_section` and the reduced
/// IVCM evaluated at lifted representatives.
pub fn reduce<T: Real>(sys: &DlpsSystem<T>, model: &ReducedModel<T>) -> Result<ReductionResult<T>> {
    let want = sys.eps_dim() + sys.base_dim();
    if model.upsilon.in_dim() != want {
        return Err(Error::Dimension {
            context: "reduced model source".into(),
            expected: want,
            found: model.upsilon.in_dim(),
        });
    }
    let lagrangian = sys.lagrangian().compose(&model.lift_section);
    let counter = Arc::new(AtomicUsize::new(0));
    let (s, m, c) = (sys.clone(), model.clone(), counter.clone());
    let ivcm = move |y0: &Pair<T>, y1: &Pair<T>| -> Result<DMatrix<T>> {
        let (x0, x1) = lift_consecutive(&m, y0, y1)?;
        let (mat, pinv) = reduced_ivcm_at(&s, &m, &x0, &x1)?;
        if pinv {
            c.fetch_add(1, Ordering::Relaxed);
            log::warn!(
                "reduced IVCM fell back to a pseudo-inverse at {:?}",
                to_f64_vec(&y1.eps)
            );
        }
        Ok(mat)
    };
    let mut system = DlpsSystem::new(model.reduced_bundle.clone(), lagrangian, ivcm)?;
    if let Some(sampler) = sys.sampler().cloned() {
        let m = model.clone();
        system = system.with_sampler(move |rng| {
            for _ in 0..100 {
                if let Ok(y) = m.project_pair(&sampler(rng)) {
                    return y;
                }
            }
            panic!("source sampler never produced a point in the reduction's domain")
        });
    }
    Ok(ReductionResult {
        system,
        model: model.clone(),
        source: sys.clone(),
        pinv_fallbacks: counter,
    })
}

impl<T: Real> ReductionResult<T> {
    pub fn source(&self) -> &DlpsSystem<T> {
        &self.source
    }

    /// Number of reduced IVCM evaluations that needed a pseudo-inverse.
    pub fn pinv_fallbacks(&self) -> usize {
        self.pinv_fallbacks.load(Ordering::Relaxed)
    }

    /// Max of `|L̃(upsilon(x)) - L(x)|` at `n` source samples.
    pub fn lagrangian_violation(&self, n: usize, rng: &mut dyn RngCore) -> Result<T> {
        let mut worst = T::zero();
        for _ in 0..n {
            let x = self.source.sample_pair(rng)?;
            let y = self.model.project_pair(&x)?;
            worst =
                worst.max((self.system.lagrangian_at(&y)? - self.source.lagrangian_at(&x)?).abs());
        }
        Ok(worst)
    }

    /// The reduced IVCM must not depend on the orbit representative: compares
    /// its value at `(x0, x1)` and at `(g x0, g x1)` for random consecutive
    /// pairs and group elements.
    pub fn representative_violation(&self, n: usize, rng: &mut dyn RngCore) -> Result<T> {
        let mut worst = T::zero();
        for _ in 0..n {
            let (x0, x1) = self.source.sample_consecutive(rng)?;
            let g = self.model.group().sample(rng, 2.0);
            let (a, _) = reduced_ivcm_at(&self.source, &self.model, &x0, &x1)?;
            let (gx0, gx1) = (self.model.act_pair(&g, &x0), self.model.act_pair(&g, &x1));
            let (b, _) = reduced_ivcm_at(&self.source, &self.model, &gx0, &gx1)?;
            worst = worst.max((a - b).iter().fold(T::zero(), |w, x| w.max(x.abs())));
        }
        Ok(worst)
    }
}

/// Pointwise image of a path under `upsilon`.
pub fn project_path<T: Real>(
    model: &ReducedModel<T>,
    path: &DiscretePath<T>,
) -> Result<DiscretePath<T>> {
    Ok(DiscretePath::new(
        path.pairs
            .iter()
            .map(|p| model.project_pair(p))
            .collect::<Result<_>>()?,
    ))
}

/// Lifts a reduced path to `C'(E)` starting at `(eps0, m1)`: each later pair
/// is `g lift_section(y_k)` with `g` the unique group element matching its
/// base point to the previous `m_k`.
pub fn reconstruct_path<T: Real>(
    model: &ReducedModel<T>,
    reduced: &DiscretePath<T>,
    eps0: &DVector<T>,
    m1: &DVector<T>,
) -> Result<DiscretePath<T>> {
    let Some(first) = reduced.pairs.first() else {
        return Ok(DiscretePath::new(vec![]));
    };
    let start = Pair::new(eps0.clone(), m1.clone());
    let y0 = model.project_pair(&start)?;
    let gap = y0.distance(first);
    let scale = T::one() + inf_norm(&first.to_vector());
    if gap > crate::scalar::identity_tol::<T>() * scale {
        return Err(Error::validation(
            "upsilon(eps0, m1) equals the first reduced pair",
            to_f64(gap),
            to_f64_vec(&start.to_vector()),
        ));
    }
    let mut out = vec![start];
    for y in &reduced.pairs[1..] {
        let x = model.lift_pair(y)?;
        let base = model.source_bundle.phi(&x.eps)?;
        let prev_m = &out.last().expect("nonempty").m;
        let g = model.m_action.match_element(prev_m, &base)?;
        out.push(model.act_pair(&g, &x));
    }
    Ok(DiscretePath::new(out))
}

/// Max violation of each computable morphism condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphismReport {
    pub samples: usize,
    /// (1) Rank deficiency of the full Jacobian (a local surjectivity proxy only).
    pub submersion_rank_deficit: usize,
    /// (2) Rank deficiency of `D1(p1 ∘ Υ)` against the target `E'` dimension.
    pub onto_rank_deficit: usize,
    /// (3) `|D1(p2 ∘ Υ)|`.
    pub d1_base_max: f64,
    /// (4) `|p2 Υ(x0) - phi'(p1 Υ(x1))|` on consecutive pairs.
    pub base_compat_max: f64,
    /// (5) `|L(x) - L'(Υ(x))|`.
    pub lagrangian_max: f64,
    /// (6) `|IVCM'(Υx0, Υx1) D1(p1 Υ)(x1) - D1(p1 Υ)(x0) IVCM(x0, x1) - D2(p1 Υ)(x0) dphi(ε1)|`.
    pub ivcm_max: f64,
}

impl MorphismReport {
    pub fn max_violation(&self) -> f64 {
        self.d1_base_max
            .max(self.base_compat_max)
            .max(self.lagrangian_max)
            .max(self.ivcm_max)
    }

    /// Componentwise worst of two reports.
    pub fn merge(&self, other: &MorphismReport) -> MorphismReport {
        MorphismReport {
            samples: self.samples + other.samples,
            submersion_rank_deficit: self
                .submersion_rank_deficit
                .max(other.submersion_rank_deficit),
            onto_rank_deficit: self.onto_rank_deficit.max(other.onto_rank_deficit),
            d1_base_max: self.d1_base_max.max(other.d1_base_max),
            base_compat_max: self.base_compat_max.max(other.base_compat_max),
            lagrangian_max: self.lagrangian_max.max(other.lagrangian_max),
            ivcm_max: self.ivcm_max.max(other.ivcm_max),
        }
    }

    /// Whether every checked condition holds within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.submersion_rank_deficit == 0
            && self.onto_rank_deficit == 0
            && self.max_violation() <= tol
    }
}

fn mat_max<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, x| a.max(x.abs()))
}

/// Evaluates the morphism conditions for `candidate: C'(E) -> C'(E')` at the
/// given consecutive pairs of `sys`.
pub fn check_morphism<T: Real>(
    candidate: &SmoothMap<T>,
    sys: &DlpsSystem<T>,
    target: &DlpsSystem<T>,
    samples: &[(Pair<T>, Pair<T>)],
) -> Result<MorphismReport> {
    let (ne, nm) = (sys.eps_dim(), sys.base_dim());
    let (te, tm) = (target.eps_dim(), target.base_dim());
    if candidate.in_dim() != ne + nm || candidate.out_dim() != te + tm {
        return Err(Error::Dimension {
            context: "morphism candidate".into(),
            expected: te + tm,
            found: candidate.out_dim(),
        });
    }
    let mut rep = MorphismReport {
        samples: samples.len(),
        submersion_rank_deficit: 0,
        onto_rank_deficit: 0,
        d1_base_max: 0.0,
        base_compat_max: 0.0,
        lagrangian_max: 0.0,
        ivcm_max: 0.0,
    };
    let image = |p: &Pair<T>| -> Result<(Pair<T>, DMatrix<T>)> {
        let x = p.to_vector();
        Ok((
            Pair::from_vector(&candidate.eval(&x)?, te),
            candidate.jacobian(&x)?,
        ))
    };
    for (p0, p1) in samples {
        let (y0, j0) = image(p0)?;
        let (y1, j1) = image(p1)?;
        let full = rank(&j0, lit(1e-8));
        rep.submersion_rank_deficit = rep
            .submersion_rank_deficit
            .max((te + tm).saturating_sub(full));
        let a0 = j0.view((0, 0), (te, ne)).into_owned();
        let b0 = j0.view((0, ne), (te, nm)).into_owned();
        let a1 = j1.view((0, 0), (te, ne)).into_owned();
        rep.onto_rank_deficit = rep
            .onto_rank_deficit
            .max(te.saturating_sub(rank(&a0, lit(1e-8))));
        let d1_base = j0.view((te, 0), (tm, ne)).into_owned();
        rep.d1_base_max = rep.d1_base_max.max(to_f64(mat_max(&d1_base)));
        let compat = inf_norm(&(&y0.m - target.bundle().phi(&y1.eps)?));
        rep.base_compat_max = rep.base_compat_max.max(to_f64(compat));
        let dl = (sys.lagrangian_at(p0)? - target.lagrangian_at(&y0)?).abs();
        rep.lagrangian_max = rep.lagrangian_max.max(to_f64(dl));
        let mut rhs = &b0 * sys.bundle().dphi(&p1.eps)?;
        if !sys.is_dms() {
            rhs += &a0 * sys.ivcm(p0, p1)?;
        }
        let lhs = target.ivcm(&y0, &y1)? * &a1;
        rep.ivcm_max = rep.ivcm_max.max(to_f64(mat_max(&(lhs - rhs))));
    }
    Ok(rep)
}

/// The left translation `x -> g x` on `C'(E)` as a smooth map.
pub fn translation_map<T: Real>(model: &ReducedModel<T>, g: &GroupElement<T>) -> SmoothMap<T> {
    let (m, g) = (model.clone(), g.clone());
    let ne = model.source_bundle.total_dim();
    let n = ne + model.source_bundle.base_dim();
    SmoothMap::new(n, n, move |x| {
        Ok(m.act_pair(&g, &Pair::from_vector(x, ne)).to_vector())
    })
}

/// The action induced on `C'(G̃_E)` by a larger group containing the
/// reduction group as a normal subgroup: `y -> upsilon(g lift_section(y))`.
/// `include` maps the residual group's elements to representatives in the
/// larger group, which acts on `C'(E)` through `ambient`.
pub fn residual_action<T: Real, F>(
    model: &ReducedModel<T>,
    ambient: &ActionModel<T>,
    residual_group: Arc<dyn LieGroup<T>>,
    include: F,
) -> ActionModel<T>
where
    F: Fn(&GroupElement<T>) -> GroupElement<T> + Send + Sync + 'static,
{
    let m = model.clone();
    let a = ambient.clone();
    let n = model.upsilon.out_dim();
    ActionModel::new(residual_group, n, move |g, y| {
        let x = m
            .lift_section
            .eval(y)
            .expect("lift_section defined on the reduced space");
        m.upsilon
            .eval(&a.act(&include(g), &x))
            .expect("upsilon defined on the orbit")
    })
}

/// Reduction in two stages against reduction in one.
///
/// `stage_h` reduces the full system by a normal subgroup `H`; `stage_gh`
/// reduces that result by the residual group `G/H`; `stage_g` reduces the
/// full system by `G` at once. The comparison map is realized as
/// `F(y) = upsilon_G(lift_H(lift_GH(y)))`.
#[derive(Clone, Debug)]
pub struct TwoStage<T: Real> {
    pub full: DlpsSystem<T>,
    pub stage_h: ReductionResult<T>,
    pub stage_gh: ReductionResult<T>,
    pub stage_g: ReductionResult<T>,
}

/// Result of [`TwoStage::compare`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReport {
    pub pairs: usize,
    /// Max over the path of `|F(y^{G/H}_k) - y^G_k|`.
    pub stage_comparison_max: f64,
    /// Max of `|L^{G/H}(y) - L^G(F(y))|` along the path.
    pub lagrangian_gap_max: f64,
    /// Equations-of-motion residuals of the two reduced paths.
    pub residual_gh_max: f64,
    pub residual_g_max: f64,
}

impl StageReport {
    pub fn max_violation(&self) -> f64 {
        self.stage_comparison_max
            .max(self.lagrangian_gap_max)
            .max(self.residual_gh_max)
            .max(self.residual_g_max)
    }
}

impl<T: Real> TwoStage<T> {
    pub fn new(
        full: &DlpsSystem<T>,
        model_h: &ReducedModel<T>,
        model_gh: &ReducedModel<T>,
        model_g: &ReducedModel<T>,
    ) -> Result<Self> {
        let stage_h = reduce(full, model_h)?;
        let stage_gh = reduce(&stage_h.system, model_gh)?;
        let stage_g = reduce(full, model_g)?;
        Ok(TwoStage {
            full: full.clone(),
            stage_h,
            stage_gh,
            stage_g,
        })
    }

    /// `F(y) = upsilon_G(lift_H(lift_GH(y)))`.
    pub fn stage_map(&self, y: &Pair<T>) -> Result<Pair<T>> {
        let y_h = self.stage_gh.model.lift_pair(y)?;
        let x = self.stage_h.model.lift_pair(&y_h)?;
        self.stage_g.model.project_pair(&x)
    }

    /// Projects `path` both ways and compares through `F`.
    pub fn compare(&self, path: &DiscretePath<T>) -> Result<StageReport> {
        let two = project_path(
            &self.stage_gh.model,
            &project_path(&self.stage_h.model, path)?,
        )?;
        let one = project_path(&self.stage_g.model, path)?;
        let mut gap = T::zero();
        let mut lag = T::zero();
        for (y, u) in two.pairs.iter().zip(&one.pairs) {
            let f = self.stage_map(y)?;
            gap = gap.max(f.distance(u));
            lag = lag.max(
                (self.stage_gh.system.lagrangian_at(y)? - self.stage_g.system.lagrangian_at(&f)?)
                    .abs(),
            );
        }
        let residual = |sys: &DlpsSystem<T>, p: &DiscretePath<T>| -> Result<T> {
            let mut w = T::zero();
            for pr in p.pairs.windows(2) {
                w = w.max(inf_norm(&del_residual(sys, &pr[0], &pr[1])?));
            }
            Ok(w)
        };
        Ok(StageReport {
            pairs: path.len(),
            stage_comparison_max: to_f64(gap),
            lagrangian_gap_max: to_f64(lag),
            residual_gh_max: to_f64(residual(&self.stage_gh.system, &two)?),
            residual_g_max: to_f64(residual(&self.stage_g.system, &one)?),
        })
    }
}

/// Checks the normality condition `A_d(g q0, g q1) = g A_d(q0, q1) g^-1` of
/// a connection for a subgroup under the ambient group's action.
pub fn validate_stage_connection<T: Real, F>(
    conn_h: &DiscreteConnection<T>,
    ambient: &ActionModel<T>,
    include: F,
    n: usize,
    rng: &mut dyn RngCore,
    tol: f64,
) -> Result<f64>
where
    F: Fn(&GroupElement<T>) -> GroupElement<T>,
{
    let (worst, at) = conn_h.conjugation_violation(ambient, include, n, rng)?;
    let w = to_f64(worst);
    if w > tol {
        return Err(Error::validation(
            "A_d(g q0, g q1) = g A_d(q0, q1) g^-1",
            w,
            to_f64_vec(&at),
        ));
    }
    Ok(w)
}

/// True for bundles whose transport is the identity on `E`.
pub fn is_identity_bundle<T: Real>(b: &FiberBundleModel<T>) -> bool {
    b.kind() == BundleKind::Identity
}
