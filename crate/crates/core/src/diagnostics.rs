//! Momentum maps, symplecticity of discrete flows, and Poisson descent.
//!
//! The symplectic form of a regular discrete Lagrangian is handled through
//! the discrete Legendre transform `P-(q0, q1) = (q0, -D1 L(q0, q1))` and the
//! canonical form `Ω = [[0, I], [-I, 0]]` in `(q, p)`.

use crate::dlps::{del_residual, step, DiscretePath, DlpsSystem, Pair};
use crate::error::{Error, Result};
use crate::lie::ActionModel;
use crate::reduction::ReducedModel;
use crate::scalar::{fd_rel_step, inf_norm, to_f64, Real};
use crate::smooth::{invert, rcond, NewtonConfig, SmoothMap};
use nalgebra::{DMatrix, DVector};
use rand::RngCore;

/// `J(ε0, m1)` evaluated on each algebra basis element.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumValue<T: Real> {
    pub components: DVector<T>,
}

/// `J_i(ε0, m1) = -D1 L(ε0, m1) ξ_i(ε0)`.
pub fn momentum<T: Real>(
    sys: &DlpsSystem<T>,
    action: &ActionModel<T>,
    p: &Pair<T>,
) -> Result<MomentumValue<T>> {
    let (d1, _) = sys.gradient(p)?;
    let gens = action.generator_matrix(&p.eps);
    Ok(MomentumValue {
        components: -(gens.transpose() * d1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumReport {
    /// Momentum at every pair of the path.
    pub series: Vec<Vec<f64>>,
    /// Max violation of `J_k = J_{k-1} + D1 L_{k-1} IVCM ξ(ε_k)`.
    pub evolution_max: f64,
    /// Max of `|J_k - J_0|`.
    pub drift_max: f64,
    /// Largest equations-of-motion residual along the path.
    pub del_residual_max: f64,
    /// False when the path is not a trajectory within the given tolerance,
    /// in which case the evolution identity need not hold.
    pub is_trajectory: bool,
}

/// Checks the momentum evolution identity along a path.
pub fn momentum_evolution_check<T: Real>(
    sys: &DlpsSystem<T>,
    action: &ActionModel<T>,
    path: &DiscretePath<T>,
    residual_tol: f64,
) -> Result<MomentumReport> {
    let mut series = Vec::with_capacity(path.len());
    let mut js = Vec::with_capacity(path.len());
    for p in &path.pairs {
        let j = momentum(sys, action, p)?.components;
        series.push(crate::scalar::to_f64_vec(&j));
        js.push(j);
    }
    let mut evolution = T::zero();
    let mut residual = T::zero();
    for (k, w) in path.pairs.windows(2).enumerate() {
        let (prev, cur) = (&w[0], &w[1]);
        residual = residual.max(inf_norm(&del_residual(sys, prev, cur)?));
        let mut predicted = js[k].clone();
        if !sys.is_dms() {
            let (d1, _) = sys.gradient(prev)?;
            let gens = action.generator_matrix(&cur.eps);
            predicted += (d1.transpose() * sys.ivcm(prev, cur)? * gens).transpose();
        }
        evolution = evolution.max(inf_norm(&(&js[k + 1] - predicted)));
    }
    let drift = js
        .iter()
        .fold(T::zero(), |w, j| w.max(inf_norm(&(j - &js[0]))));
    let del_residual_max = to_f64(residual);
    Ok(MomentumReport {
        series,
        evolution_max: to_f64(evolution),
        drift_max: to_f64(drift),
        del_residual_max,
        is_trajectory: del_residual_max <= residual_tol,
    })
}

/// `dP-(x) = [[I, 0], [-D1D1 L, -D1D2 L]]`; fails when the mixed block is
/// numerically singular.
pub fn legendre_jacobian<T: Real>(dms: &DlpsSystem<T>, x: &Pair<T>) -> Result<(DMatrix<T>, f64)> {
    let n = dms.eps_dim();
    let hess = dms.lagrangian().hessian(&x.to_vector())?;
    let h11 = hess.view((0, 0), (n, n));
    let h12 = hess.view((0, n), (n, n)).into_owned();
    let rc = to_f64(rcond(&h12));
    if rc < 1e-8 {
        return Err(Error::Regularity { rcond: rc });
    }
    let mut dp = DMatrix::zeros(2 * n, 2 * n);
    dp.view_mut((0, 0), (n, n)).fill_with_identity();
    dp.view_mut((n, 0), (n, n)).copy_from(&(-h11));
    dp.view_mut((n, n), (n, n)).copy_from(&(-h12));
    Ok((dp, rc))
}

/// The canonical form `[[0, I], [-I, 0]]` on `R^2n`.
pub fn canonical_form<T: Real>(n: usize) -> DMatrix<T> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    w.view_mut((0, n), (n, n)).fill_with_identity();
    w.view_mut((n, 0), (n, n))
        .copy_from(&(-DMatrix::<T>::identity(n, n)));
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticReport {
    /// `|K^T Ω K - Ω|` for each step of the path.
    pub per_step: Vec<f64>,
    pub max_violation: f64,
    /// Smallest reciprocal condition number of the mixed Hessian block seen.
    pub min_rcond: f64,
}

fn flow_jacobian<T: Real>(
    dms: &DlpsSystem<T>,
    x: &Pair<T>,
    next: &Pair<T>,
    cfg: &NewtonConfig,
) -> Result<DMatrix<T>> {
    let n = dms.eps_dim();
    let z = x.to_vector();
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    let rel = fd_rel_step::<T>();
    let mut zp = z.clone();
    let flow = |v: &DVector<T>| -> Result<DVector<T>> {
        let p = Pair::from_vector(v, n);
        let (out, _) = step(dms, &p.eps, &p.m, Some(next), cfg)?;
        Ok(out.to_vector())
    };
    for j in 0..2 * n {
        let h = rel * (T::one() + z[j].abs());
        zp[j] = z[j] + h;
        let fp = flow(&zp)?;
        zp[j] = z[j] - h;
        let fm = flow(&zp)?;
        zp[j] = z[j];
        jac.set_column(j, &((fp - fm) / (h + h)));
    }
    Ok(jac)
}

/// For each step `x_k -> x_{k+1}` of a DMS trajectory, computes the flow's
/// Jacobian `dF` by central differences of [`step`] and reports
/// `|K^T Ω K - Ω|` for `K = dP-(x_{k+1}) dF dP-(x_k)^-1`.
pub fn symplectic_check<T: Real>(
    dms: &DlpsSystem<T>,
    path: &DiscretePath<T>,
    cfg: &NewtonConfig,
) -> Result<SymplecticReport> {
    if !dms.is_dms() {
        return Err(Error::validation(
            "symplectic check needs a discrete mechanical system",
            f64::NAN,
            vec![],
        ));
    }
    let n = dms.eps_dim();
    let omega = canonical_form::<T>(n);
    let mut per_step = Vec::new();
    let mut min_rcond = f64::INFINITY;
    for w in path.pairs.windows(2) {
        let (dp0, rc0) = legendre_jacobian(dms, &w[0])?;
        let (dp1, rc1) = legendre_jacobian(dms, &w[1])?;
        min_rcond = min_rcond.min(rc0).min(rc1);
        let dp0_inv = invert(&dp0).ok_or(Error::Regularity { rcond: 0.0 })?;
        let k = dp1 * flow_jacobian(dms, &w[0], &w[1], cfg)? * dp0_inv;
        let defect = k.transpose() * &omega * &k - &omega;
        per_step.push(to_f64(defect.amax()));
    }
    let max_violation = per_step.iter().copied().fold(0.0, f64::max);
    Ok(SymplecticReport {
        per_step,
        max_violation,
        min_rcond: if min_rcond.is_finite() {
            min_rcond
        } else {
            1.0
        },
    })
}

/// The Poisson tensor of the discrete symplectic form in `(q0, q1)`
/// coordinates: `dP-^-1 Ω dP-^-T`, normalized so that `{q^i, p_j} = δ_ij`
/// for `p = -D1 L`.
pub fn poisson_tensor<T: Real>(dms: &DlpsSystem<T>, x: &Pair<T>) -> Result<DMatrix<T>> {
    let n = dms.eps_dim();
    let (dp, _) = legendre_jacobian(dms, x)?;
    let inv = invert(&dp).ok_or(Error::Regularity { rcond: 0.0 })?;
    Ok(&inv * canonical_form::<T>(n) * inv.transpose())
}

/// `{f1 ∘ Υ, f2 ∘ Υ}(x)`.
pub fn pulled_back_bracket<T: Real>(
    dms: &DlpsSystem<T>,
    upsilon: &SmoothMap<T>,
    f1: &SmoothMap<T>,
    f2: &SmoothMap<T>,
    x: &Pair<T>,
) -> Result<T> {
    let v = x.to_vector();
    let y = upsilon.eval(&v)?;
    let jt = upsilon.jacobian(&v)?.transpose();
    let g1 = &jt * f1.gradient(&y)?;
    let g2 = &jt * f2.gradient(&y)?;
    Ok(g1.dot(&(poisson_tensor(dms, x)? * g2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonReport {
    pub samples: usize,
    /// Max over sample points, group elements and test-function pairs of
    /// `|B(g x) - B(x)|` for the pulled-back bracket `B`.
    pub orbit_variation_max: f64,
    pub bracket_abs_max: f64,
}

/// Brackets of pulled-back test functions must be constant on group orbits.
pub fn poisson_descent_check<T: Real>(
    model: &ReducedModel<T>,
    dms: &DlpsSystem<T>,
    test_fns: &[SmoothMap<T>],
    samples: &[Pair<T>],
    elements_per_sample: usize,
    rng: &mut dyn RngCore,
) -> Result<PoissonReport> {
    let mut variation = T::zero();
    let mut abs_max = T::zero();
    for x in samples {
        let moved: Vec<Pair<T>> = (0..elements_per_sample)
            .map(|_| model.act_pair(&model.group().sample(rng, 2.0), x))
            .collect();
        for i in 0..test_fns.len() {
            for j in i + 1..test_fns.len() {
                let (f1, f2) = (&test_fns[i], &test_fns[j]);
                let b = pulled_back_bracket(dms, &model.upsilon, f1, f2, x)?;
                abs_max = abs_max.max(b.abs());
                for gx in &moved {
                    let bg = pulled_back_bracket(dms, &model.upsilon, f1, f2, gx)?;
                    variation = variation.max((bg - b).abs());
                }
            }
        }
    }
    Ok(PoissonReport {
        samples: samples.len(),
        orbit_variation_max: to_f64(variation),
        bracket_abs_max: to_f64(abs_max),
    })
}

/// The coordinate functions of `R^n`.
pub fn coordinate_functions<T: Real>(n: usize) -> Vec<SmoothMap<T>> {
    (0..n)
        .map(|i| {
            SmoothMap::scalar(n, move |x| Ok(x[i])).with_gradient(move |_| {
                let mut e = DVector::zeros(n);
                e[i] = T::one();
                Ok(e)
            })
        })
        .collect()
}
