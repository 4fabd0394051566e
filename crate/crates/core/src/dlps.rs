//! Discrete Lagrange-Poincaré systems and their dynamics.
//!
//! A system lives over a fiber bundle `phi: E -> M`. Its discrete Lagrangian
//! is defined on `C'(E) = E x M` and its chaining map IVCM sends a variation
//! `δε1` at the second of two consecutive pairs to a vertical variation
//! `δε0` at the first. IVCM is linear in `δε1`, so it is represented by its
//! matrix, which makes linearity hold by construction.
//!
//! A discrete path is a sequence of pairs `(ε_k, m_{k+1})` with
//! `phi(ε_{k+1}) = m_{k+1}`. Trajectories are the paths on which
//!
//! ```text
//! D1 L(ε_k, m_{k+1}) + D2 L(ε_{k-1}, m_k) dphi(ε_k)
//!     + D1 L(ε_{k-1}, m_k) IVCM((ε_{k-1}, m_k), (ε_k, m_{k+1})) = 0.
//! ```

use crate::error::{Error, Result};
use crate::scalar::{concat, fd_rel_step, inf_norm, lit, split, to_f64, Real};
use crate::smooth::{newton_solve, rank, NewtonConfig, SmoothMap};
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use std::fmt;
use std::sync::Arc;

pub type TransportFn<T> = Arc<dyn Fn(&DVector<T>, &DVector<T>) -> DVector<T> + Send + Sync>;
pub type IvcmFn<T> = Arc<dyn Fn(&Pair<T>, &Pair<T>) -> Result<DMatrix<T>> + Send + Sync>;
pub type PairSampler<T> = Arc<dyn Fn(&mut dyn RngCore) -> Pair<T> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleKind {
    /// `E = M`, `phi = id`.
    Identity,
    /// `E = M x F` with coordinates `(m, f)`.
    Product,
    General,
}

/// A fiber bundle `phi: E -> M` in coordinates.
///
/// `transport(ε, m)` moves `ε` to the fiber over `m`; it must satisfy
/// `phi(transport(ε, m)) = m` and doubles as a section of `phi`.
#[derive(Clone)]
pub struct FiberBundleModel<T: Real> {
    kind: BundleKind,
    phi: SmoothMap<T>,
    transport: TransportFn<T>,
}

impl<T: Real> fmt::Debug for FiberBundleModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiberBundleModel")
            .field("kind", &self.kind)
            .field("total_dim", &self.total_dim())
            .field("base_dim", &self.base_dim())
            .finish()
    }
}

impl<T: Real> FiberBundleModel<T> {
    pub fn identity(n: usize) -> Self {
        FiberBundleModel {
            kind: BundleKind::Identity,
            phi: SmoothMap::identity(n),
            transport: Arc::new(|_, m| m.clone()),
        }
    }

    /// `E = M x F`, coordinates of `ε` ordered as `(m, f)`.
    pub fn product(base_dim: usize, fiber_dim: usize) -> Self {
        let n = base_dim + fiber_dim;
        let proj = DMatrix::from_fn(
            base_dim,
            n,
            |i, j| if i == j { T::one() } else { T::zero() },
        );
        FiberBundleModel {
            kind: BundleKind::Product,
            phi: SmoothMap::affine(proj, DVector::zeros(base_dim)),
            transport: Arc::new(move |e, m| {
                let (_, f) = split(e, base_dim);
                concat(m, &f)
            }),
        }
    }

    pub fn general<F>(phi: SmoothMap<T>, transport: F) -> Self
    where
        F: Fn(&DVector<T>, &DVector<T>) -> DVector<T> + Send + Sync + 'static,
    {
        FiberBundleModel {
            kind: BundleKind::General,
            phi,
            transport: Arc::new(transport),
        }
    }

    pub fn kind(&self) -> BundleKind {
        self.kind
    }

    pub fn total_dim(&self) -> usize {
        self.phi.in_dim()
    }

    pub fn base_dim(&self) -> usize {
        self.phi.out_dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.total_dim() - self.base_dim()
    }

    pub fn phi_map(&self) -> &SmoothMap<T> {
        &self.phi
    }

    pub fn phi(&self, e: &DVector<T>) -> Result<DVector<T>> {
        self.phi.eval(e)
    }

    pub fn dphi(&self, e: &DVector<T>) -> Result<DMatrix<T>> {
        self.phi.jacobian(e)
    }

    pub fn transport(&self, e: &DVector<T>, m: &DVector<T>) -> DVector<T> {
        (self.transport)(e, m)
    }

    /// Max of `|phi(transport(ε, m)) - m|` over the given points.
    pub fn transport_violation(&self, points: &[(DVector<T>, DVector<T>)]) -> Result<T> {
        let mut worst = T::zero();
        for (e, m) in points {
            worst = worst.max(inf_norm(&(self.phi(&self.transport(e, m))? - m)));
        }
        Ok(worst)
    }
}

/// A point `(ε, m)` of `C'(E) = E x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T: Real> {
    pub eps: DVector<T>,
    pub m: DVector<T>,
}

impl<T: Real> Pair<T> {
    pub fn new(eps: DVector<T>, m: DVector<T>) -> Self {
        Pair { eps, m }
    }

    pub fn to_vector(&self) -> DVector<T> {
        concat(&self.eps, &self.m)
    }

    pub fn from_vector(x: &DVector<T>, eps_dim: usize) -> Self {
        let (eps, m) = split(x, eps_dim);
        Pair { eps, m }
    }

    pub fn distance(&self, other: &Pair<T>) -> T {
        inf_norm(&(&self.eps - &other.eps)).max(inf_norm(&(&self.m - &other.m)))
    }
}

/// A sequence of pairs `(ε_k, m_{k+1})`, `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath<T: Real> {
    pub pairs: Vec<Pair<T>>,
}

impl<T: Real> DiscretePath<T> {
    pub fn new(pairs: Vec<Pair<T>>) -> Self {
        DiscretePath { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Largest `|phi(ε_{k+1}) - m_{k+1}|`.
    pub fn compatibility_violation(&self, bundle: &FiberBundleModel<T>) -> Result<T> {
        let mut worst = T::zero();
        for w in self.pairs.windows(2) {
            worst = worst.max(inf_norm(&(bundle.phi(&w[1].eps)? - &w[0].m)));
        }
        Ok(worst)
    }

    pub fn validate(&self, bundle: &FiberBundleModel<T>, tol: T) -> Result<()> {
        for (k, w) in self.pairs.windows(2).enumerate() {
            let v = inf_norm(&(bundle.phi(&w[1].eps)? - &w[0].m));
            if v > tol {
                return Err(Error::validation(
                    format!("path compatibility phi(ε_{}) = m_{}", k + 1, k + 1),
                    to_f64(v),
                    crate::scalar::to_f64_vec(&w[1].eps),
                ));
            }
        }
        Ok(())
    }

    /// Max coordinate distance to another path of the same length.
    pub fn max_distance(&self, other: &DiscretePath<T>) -> T {
        assert_eq!(self.len(), other.len(), "paths differ in length");
        self.pairs
            .iter()
            .zip(&other.pairs)
            .fold(T::zero(), |w, (a, b)| w.max(a.distance(b)))
    }
}

/// A discrete Lagrange-Poincaré system.
#[derive(Clone)]
pub struct DlpsSystem<T: Real> {
    bundle: FiberBundleModel<T>,
    lagrangian: SmoothMap<T>,
    ivcm: IvcmFn<T>,
    zero_ivcm: bool,
    sampler: Option<PairSampler<T>>,
}

impl<T: Real> fmt::Debug for DlpsSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DlpsSystem")
            .field("bundle", &self.bundle)
            .field("lagrangian", &self.lagrangian)
            .field("zero_ivcm", &self.zero_ivcm)
            .finish()
    }
}

impl<T: Real> DlpsSystem<T> {
    pub fn new<F>(bundle: FiberBundleModel<T>, lagrangian: SmoothMap<T>, ivcm: F) -> Result<Self>
    where
        F: Fn(&Pair<T>, &Pair<T>) -> Result<DMatrix<T>> + Send + Sync + 'static,
    {
        let want = bundle.total_dim() + bundle.base_dim();
        if lagrangian.in_dim() != want || lagrangian.out_dim() != 1 {
            return Err(Error::Dimension {
                context: "discrete Lagrangian on E x M".into(),
                expected: want,
                found: lagrangian.in_dim(),
            });
        }
        Ok(DlpsSystem {
            bundle,
            lagrangian,
            ivcm: Arc::new(ivcm),
            zero_ivcm: false,
            sampler: None,
        })
    }

    /// The system of a discrete mechanical system `(Q, L_d)`: `E = M = Q`,
    /// `phi = id` and IVCM identically zero.
    pub fn from_dms(config_dim: usize, lagrangian: SmoothMap<T>) -> Result<Self> {
        let n = config_dim;
        let mut sys = Self::new(FiberBundleModel::identity(n), lagrangian, move |_, _| {
            Ok(DMatrix::zeros(n, n))
        })?;
        sys.zero_ivcm = true;
        Ok(sys)
    }

    pub fn with_sampler<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut dyn RngCore) -> Pair<T> + Send + Sync + 'static,
    {
        self.sampler = Some(Arc::new(f));
        self
    }

    pub fn with_sampler_arc(mut self, f: Option<PairSampler<T>>) -> Self {
        self.sampler = f;
        self
    }

    pub fn sampler(&self) -> Option<&PairSampler<T>> {
        self.sampler.as_ref()
    }

    pub fn bundle(&self) -> &FiberBundleModel<T> {
        &self.bundle
    }

    pub fn lagrangian(&self) -> &SmoothMap<T> {
        &self.lagrangian
    }

    pub fn eps_dim(&self) -> usize {
        self.bundle.total_dim()
    }

    pub fn base_dim(&self) -> usize {
        self.bundle.base_dim()
    }

    /// True for systems built by [`DlpsSystem::from_dms`].
    pub fn is_dms(&self) -> bool {
        self.zero_ivcm && self.bundle.kind() == BundleKind::Identity
    }

    pub fn lagrangian_at(&self, p: &Pair<T>) -> Result<T> {
        self.lagrangian.eval_scalar(&p.to_vector())
    }

    /// `(D1 L, D2 L)` at a pair.
    pub fn gradient(&self, p: &Pair<T>) -> Result<(DVector<T>, DVector<T>)> {
        let g = self.lagrangian.gradient(&p.to_vector())?;
        Ok(split(&g, self.eps_dim()))
    }

    /// IVCM matrix (`total_dim x total_dim`) at a pair of consecutive pairs.
    pub fn ivcm(&self, p0: &Pair<T>, p1: &Pair<T>) -> Result<DMatrix<T>> {
        let n = self.eps_dim();
        if self.zero_ivcm {
            return Ok(DMatrix::zeros(n, n));
        }
        let m = (self.ivcm)(p0, p1)?;
        if m.shape() != (n, n) {
            return Err(Error::Dimension {
                context: "IVCM matrix".into(),
                expected: n,
                found: m.nrows(),
            });
        }
        Ok(m)
    }

    pub fn sample_pair(&self, rng: &mut dyn RngCore) -> Result<Pair<T>> {
        match &self.sampler {
            Some(s) => Ok(s(rng)),
            None => Err(Error::validation("system has no sampler", f64::NAN, vec![])),
        }
    }

    /// Samples consecutive pairs `((ε0, m1), (ε1, m2))` with `phi(ε1) = m1`.
    /// The second pair keeps the displacement `m - phi(ε)` of its raw sample.
    pub fn sample_consecutive(&self, rng: &mut dyn RngCore) -> Result<(Pair<T>, Pair<T>)> {
        let p0 = self.sample_pair(rng)?;
        let raw = self.sample_pair(rng)?;
        let shift = &raw.m - self.bundle.phi(&raw.eps)?;
        let eps1 = self.bundle.transport(&raw.eps, &p0.m);
        let m2 = &p0.m + shift;
        Ok((p0, Pair::new(eps1, m2)))
    }

    /// Largest `|dphi(ε0) IVCM|` at `n` sampled consecutive pairs; IVCM must
    /// take values in `ker dphi`.
    pub fn ivcm_kernel_violation(&self, n: usize, rng: &mut dyn RngCore) -> Result<T> {
        let mut worst = T::zero();
        for _ in 0..n {
            let (p0, p1) = self.sample_consecutive(rng)?;
            let v = self.bundle.dphi(&p0.eps)? * self.ivcm(&p0, &p1)?;
            worst = worst.max(v.iter().fold(T::zero(), |a, x| a.max(x.abs())));
        }
        Ok(worst)
    }
}

/// `Σ_k L(ε_k, m_{k+1})`.
pub fn action_sum<T: Real>(sys: &DlpsSystem<T>, path: &DiscretePath<T>) -> Result<T> {
    let mut s = T::zero();
    for p in &path.pairs {
        s += sys.lagrangian_at(p)?;
    }
    Ok(s)
}

/// The equations of motion at consecutive pairs `prev = (ε_{k-1}, m_k)`,
/// `cur = (ε_k, m_{k+1})`, as a covector on `E` stored as a column.
pub fn del_residual<T: Real>(
    sys: &DlpsSystem<T>,
    prev: &Pair<T>,
    cur: &Pair<T>,
) -> Result<DVector<T>> {
    let (d1_cur, _) = sys.gradient(cur)?;
    let (d1_prev, d2_prev) = sys.gradient(prev)?;
    let dphi = sys.bundle.dphi(&cur.eps)?;
    let mut r = d1_cur + dphi.transpose() * d2_prev;
    if !sys.zero_ivcm {
        r += sys.ivcm(prev, cur)?.transpose() * d1_prev;
    }
    Ok(r)
}

/// Diagnostics of one implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub iterations: usize,
    /// Max-abs equations-of-motion residual at the accepted point.
    pub residual_norm: f64,
    /// Numerical rank of the step Jacobian in `(ε1, m2)`.
    pub jacobian_rank: usize,
    pub unknowns: usize,
}

/// Default Newton guess: transport `ε0` to the fiber over `m1` and
/// extrapolate `m2 = m1 + (m1 - phi(ε0))`.
pub fn default_guess<T: Real>(
    sys: &DlpsSystem<T>,
    eps0: &DVector<T>,
    m1: &DVector<T>,
) -> Result<Pair<T>> {
    let b0 = sys.bundle.phi(eps0)?;
    Ok(Pair::new(sys.bundle.transport(eps0, m1), m1 + (m1 - b0)))
}

/// One step of the discrete flow: given `(ε0, m1)`, solves for `(ε1, m2)`.
///
/// Unknowns are `(ε1, m2)`; the residual is the equations of motion with
/// the rows `phi(ε1) - m1` appended. The equations of motion are evaluated at
/// `transport(ε1, m1)`, so IVCM only ever sees consecutive pairs, and the
/// accepted `ε1` is transported too, so compatibility holds exactly.
pub fn step<T: Real>(
    sys: &DlpsSystem<T>,
    eps0: &DVector<T>,
    m1: &DVector<T>,
    guess: Option<&Pair<T>>,
    cfg: &NewtonConfig,
) -> Result<(Pair<T>, StepInfo)> {
    let ne = sys.eps_dim();
    let n = ne + sys.base_dim();
    if eps0.len() != ne || m1.len() != sys.base_dim() {
        return Err(Error::Dimension {
            context: "step initial pair".into(),
            expected: n,
            found: eps0.len() + m1.len(),
        });
    }
    let prev = Pair::new(eps0.clone(), m1.clone());
    let z0 = match guess {
        Some(g) => g.to_vector(),
        None => default_guess(sys, eps0, m1)?.to_vector(),
    };
    let (s, p, target) = (sys.clone(), prev.clone(), m1.clone());
    let residual = SmoothMap::new(n, n, move |z| {
        let raw = Pair::from_vector(z, ne);
        let cur = Pair::new(s.bundle.transport(&raw.eps, &target), raw.m);
        let r = del_residual(&s, &p, &cur)?;
        let c = s.bundle.phi(&raw.eps)? - &target;
        Ok(concat(&r, &c))
    });
    let sol = newton_solve(&residual, &z0, cfg)?;
    let jac = residual.jacobian(&sol.x)?;
    let jacobian_rank = rank(&jac, lit(1e-10));
    if jacobian_rank < n {
        return Err(Error::SingularJacobian(format!(
            "step Jacobian has rank {jacobian_rank} < {n}"
        )));
    }
    let mut cur = Pair::from_vector(&sol.x, ne);
    cur.eps = sys.bundle.transport(&cur.eps, m1);
    let residual_norm = to_f64(inf_norm(&del_residual(sys, &prev, &cur)?));
    Ok((
        cur,
        StepInfo {
            iterations: sol.iterations,
            residual_norm,
            jacobian_rank,
            unknowns: n,
        },
    ))
}

/// A simulated path with per-pair residuals (`residuals[0] = 0`) and per-step
/// solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub path: DiscretePath<T>,
    pub residuals: Vec<T>,
    pub steps: Vec<StepInfo>,
}

/// A failed simulation: the error, the index of the failing step and
/// everything computed before it.
#[derive(Debug, Clone)]
pub struct SimulationFailure<T: Real> {
    pub step_index: usize,
    pub partial: Box<Trajectory<T>>,
    pub error: Error,
}

impl<T: Real> fmt::Display for SimulationFailure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} failed: {}", self.step_index, self.error)
    }
}

impl<T: Real> std::error::Error for SimulationFailure<T> {}

/// Chains `n_steps` steps from `(ε0, m1)`; the result has `n_steps + 1` pairs.
pub fn simulate<T: Real>(
    sys: &DlpsSystem<T>,
    eps0: &DVector<T>,
    m1: &DVector<T>,
    n_steps: usize,
    cfg: &NewtonConfig,
) -> std::result::Result<Trajectory<T>, SimulationFailure<T>> {
    let mut traj = Trajectory {
        path: DiscretePath::new(vec![Pair::new(eps0.clone(), m1.clone())]),
        residuals: vec![T::zero()],
        steps: Vec::with_capacity(n_steps),
    };
    for k in 0..n_steps {
        let last = traj.path.pairs.last().expect("path is never empty").clone();
        match step(sys, &last.eps, &last.m, None, cfg) {
            Ok((next, info)) => {
                traj.residuals.push(lit(info.residual_norm));
                traj.steps.push(info);
                traj.path.pairs.push(next);
            }
            Err(error) => {
                log::warn!("simulation stopped at step {k}: {error}");
                return Err(SimulationFailure {
                    step_index: k,
                    partial: Box::new(traj),
                    error,
                });
            }
        }
    }
    Ok(traj)
}

/// Max equations-of-motion residual over all interior consecutive pairs.
pub fn max_del_residual<T: Real>(sys: &DlpsSystem<T>, path: &DiscretePath<T>) -> Result<T> {
    let mut worst = T::zero();
    for w in path.pairs.windows(2) {
        worst = worst.max(inf_norm(&del_residual(sys, &w[0], &w[1])?));
    }
    Ok(worst)
}

/// Tangent vectors `(δε_k, δm_{k+1})` over a discrete path.
#[derive(Debug, Clone, PartialEq)]
pub struct Variation<T: Real> {
    pub deltas: Vec<Pair<T>>,
}

/// Builds the fixed-endpoint variation generated by `δ̃ε_k`, `k = 1..N-1`
/// (`tilde[k - 1]` holds `δ̃ε_k`):
///
/// * `δε_{N-1} = δ̃ε_{N-1}`,
/// * `δε_k = δ̃ε_k + IVCM(pair_k, pair_{k+1}) δ̃ε_{k+1}` for `0 < k < N-1`,
/// * `δε_0 = IVCM(pair_0, pair_1) δ̃ε_1`,
/// * `δm_k = dphi(ε_k) δε_k` and `δm_N = 0`.
pub fn build_fixed_endpoint_variation<T: Real>(
    sys: &DlpsSystem<T>,
    path: &DiscretePath<T>,
    tilde: &[DVector<T>],
) -> Result<Variation<T>> {
    let n = path.len();
    if n < 2 {
        return Err(Error::validation(
            "variation needs a path of length >= 2",
            n as f64,
            vec![],
        ));
    }
    if tilde.len() != n - 1 {
        return Err(Error::Dimension {
            context: "fixed-endpoint variation generators".into(),
            expected: n - 1,
            found: tilde.len(),
        });
    }
    let pairs = &path.pairs;
    let mut d_eps: Vec<DVector<T>> = Vec::with_capacity(n);
    let first = sys.ivcm(&pairs[0], &pairs[1])? * &tilde[0];
    d_eps.push(first);
    for k in 1..n {
        let mut d = tilde[k - 1].clone();
        if k + 1 < n {
            d += sys.ivcm(&pairs[k], &pairs[k + 1])? * &tilde[k];
        }
        d_eps.push(d);
    }
    let mut deltas = Vec::with_capacity(n);
    for k in 0..n {
        let dm = if k + 1 < n {
            sys.bundle.dphi(&pairs[k + 1].eps)? * &d_eps[k + 1]
        } else {
            DVector::zeros(sys.base_dim())
        };
        deltas.push(Pair::new(d_eps[k].clone(), dm));
    }
    Ok(Variation { deltas })
}

/// `d/dt S(path + t δ)` at `t = 0` by a central difference; the variation is
/// normalized to unit max-norm before differencing.
pub fn action_derivative_fd<T: Real>(
    sys: &DlpsSystem<T>,
    path: &DiscretePath<T>,
    var: &Variation<T>,
) -> Result<T> {
    let size = var.deltas.iter().fold(T::zero(), |w, d| {
        w.max(inf_norm(&d.eps)).max(inf_norm(&d.m))
    });
    if size == T::zero() {
        return Ok(T::zero());
    }
    let scale = path.pairs.iter().fold(T::zero(), |w, p| {
        w.max(inf_norm(&p.eps)).max(inf_norm(&p.m))
    });
    let h = fd_rel_step::<T>() * (T::one() + scale);
    let shifted = |t: T| -> Result<T> {
        let pairs = path
            .pairs
            .iter()
            .zip(&var.deltas)
            .map(|(p, d)| Pair::new(&p.eps + &d.eps * (t / size), &p.m + &d.m * (t / size)))
            .collect();
        action_sum(sys, &DiscretePath::new(pairs))
    };
    Ok((shifted(h)? - shifted(-h)?) / (h + h) * size)
}

/// `Σ_k D1 L_k δε_k + D2 L_k δm_{k+1}` from the Lagrangian's gradient.
pub fn action_derivative<T: Real>(
    sys: &DlpsSystem<T>,
    path: &DiscretePath<T>,
    var: &Variation<T>,
) -> Result<T> {
    let mut s = T::zero();
    for (p, d) in path.pairs.iter().zip(&var.deltas) {
        let (d1, d2) = sys.gradient(p)?;
        s += d1.dot(&d.eps) + d2.dot(&d.m);
    }
    Ok(s)
}
