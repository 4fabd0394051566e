//! Two unit-mass particles in the plane with a distance potential, and its
//! reductions by `T2`, by `SE(2)`, and by `T2` followed by `U(1)`.
//!
//! Points of `Q = C^2 - Δ` are stored as `(qx_re, qx_im, qy_re, qy_im)`.
//! Throughout, `s = (qx + qy)/2` and `r = (qx - qy)/√2`.
//!
//! Reduced coordinates:
//! * by `T2`: `E' = (r, z)` over `M' = r`, with `z` the connection's translation;
//! * by `U(1)` on `E'` and by `SE(2)` on `Q`: `E'' = (ρ, ζ, θ)` over `M'' = ρ`,
//!   where `ρ = |r|`, `ζ` is the translation seen in the frame of `r`, and
//!   `θ` the rotation angle.

use crate::connection::{mechanical_connection_flat, DiscreteConnection, QuotientModel};
use crate::dlps::{DlpsSystem, FiberBundleModel, Pair};
use crate::error::{Error, Result};
use crate::lie::{ActionModel, GroupElement, LieGroup, Se2, Translations2, U1};
use crate::reduction::{
    build_upsilon, reduce, validate_stage_connection, ConjugateChart, ReducedModel,
    ReductionResult, TwoStage,
};
use crate::scalar::{cabs, cget, cscale, cunit, cvec, lit, split, to_f64, uniform, Real};
use crate::smooth::SmoothMap;
use nalgebra::{Complex, DMatrix, DVector};
use rand::RngCore;
use std::sync::Arc;

/// Potentials `V(s)` of the squared separation `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialFamily {
    Zero,
    /// `V(s) = a s`
    Linear {
        a: f64,
    },
    /// `V(s) = c s^2`
    Quadratic {
        c: f64,
    },
}

impl PotentialFamily {
    pub fn value<T: Real>(&self, s: T) -> T {
        match *self {
            PotentialFamily::Zero => T::zero(),
            PotentialFamily::Linear { a } => lit::<T>(a) * s,
            PotentialFamily::Quadratic { c } => lit::<T>(c) * s * s,
        }
    }

    pub fn derivative<T: Real>(&self, s: T) -> T {
        match *self {
            PotentialFamily::Zero => T::zero(),
            PotentialFamily::Linear { a } => lit(a),
            PotentialFamily::Quadratic { c } => lit::<T>(2.0 * c) * s,
        }
    }

    /// `V` as a map `R -> R` with its derivative.
    pub fn to_map<T: Real>(self) -> SmoothMap<T> {
        SmoothMap::scalar(1, move |x| Ok(self.value(x[0])))
            .with_gradient(move |x| Ok(DVector::from_element(1, self.derivative(x[0]))))
    }
}

#[derive(Debug, Clone)]
pub struct TwoBodyConfig<T: Real> {
    pub h: T,
    pub potential: SmoothMap<T>,
}

impl<T: Real> TwoBodyConfig<T> {
    pub fn new(h: T, potential: SmoothMap<T>) -> Result<Self> {
        if h == T::zero() || !h.is_finite() {
            return Err(Error::validation("time step h != 0", to_f64(h), vec![]));
        }
        if potential.in_dim() != 1 || potential.out_dim() != 1 {
            return Err(Error::Dimension {
                context: "potential V: R -> R".into(),
                expected: 1,
                found: potential.in_dim(),
            });
        }
        Ok(TwoBodyConfig { h, potential })
    }

    pub fn with_family(h: T, family: PotentialFamily) -> Result<Self> {
        Self::new(h, family.to_map())
    }

    pub fn v(&self, s: T) -> Result<T> {
        self.potential.eval_scalar(&DVector::from_element(1, s))
    }

    pub fn dv(&self, s: T) -> Result<T> {
        Ok(self.potential.gradient(&DVector::from_element(1, s))?[0])
    }
}

fn c<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

fn sqrt2<T: Real>() -> T {
    lit::<T>(2.0).sqrt()
}

/// `(s, r)` of a configuration.
pub fn center_relative<T: Real>(q: &DVector<T>) -> (Complex<T>, Complex<T>) {
    let (x, y) = (cget(q, 0), cget(q, 1));
    (cscale(x + y, lit(0.5)), cscale(x - y, T::one() / sqrt2()))
}

/// The configuration with center `s` and relative coordinate `r`.
pub fn from_center_relative<T: Real>(s: Complex<T>, r: Complex<T>) -> DVector<T> {
    let d = cscale(r, T::one() / sqrt2());
    cvec(&[s + d, s - d])
}

/// Real matrix of a complex-linear map with real coefficients: entry
/// `coeffs[i][j]` becomes the block `coeffs[i][j] * I2`.
fn complex_blocks<T: Real>(coeffs: &[&[f64]]) -> DMatrix<T> {
    let (rows, cols) = (coeffs.len(), coeffs[0].len());
    DMatrix::from_fn(2 * rows, 2 * cols, |i, j| {
        if i % 2 == j % 2 {
            lit(coeffs[i / 2][j / 2])
        } else {
            T::zero()
        }
    })
}

/// Samples a configuration with both particles in `[-2, 2]^2` at distance
/// at least 0.5.
pub fn sample_configuration<T: Real>(rng: &mut dyn RngCore) -> DVector<T> {
    loop {
        let q = DVector::from_fn(4, |_, _| uniform::<T>(rng, -2.0, 2.0));
        if cabs(cget(&q, 0) - cget(&q, 1)) >= lit(0.5) {
            return q;
        }
    }
}

/// Samples `(q0, q1)` with `q1 - q0` in `[-0.3, 0.3]^4` and the particles
/// of `q1` at distance at least 0.2.
pub fn sample_configuration_pair<T: Real>(rng: &mut dyn RngCore) -> (DVector<T>, DVector<T>) {
    let q0 = sample_configuration::<T>(rng);
    loop {
        let q1 = &q0 + DVector::from_fn(4, |_, _| uniform::<T>(rng, -0.3, 0.3));
        if cabs(cget(&q1, 0) - cget(&q1, 1)) >= lit(0.2) {
            return (q0, q1);
        }
    }
}

/// `L(q0, q1) = (|Δqx|^2 + |Δqy|^2)/(2h) - (h/2) V(|q0y - q0x|^2)` as a DMS
/// on `R^4`; coincident particles at `q0` raise a domain error.
pub fn make_full_system<T: Real>(cfg: &TwoBodyConfig<T>) -> Result<DlpsSystem<T>> {
    let collision_tol = lit::<T>(1e-12);
    let (h, pot) = (cfg.h, cfg.clone());
    // (q0, q1 - q0, q0y - q0x, |q0y - q0x|^2)
    type Parts<T> = (DVector<T>, DVector<T>, DVector<T>, T);
    let parts = move |x: &DVector<T>| -> Result<Parts<T>> {
        let (q0, q1) = split(x, 4);
        let d = q0.rows(2, 2) - q0.rows(0, 2);
        if d.norm() < collision_tol {
            return Err(Error::domain("particles coincide"));
        }
        let s = d.norm_squared();
        let dq = &q1 - &q0;
        Ok((q0, dq, d.into_owned(), s))
    };
    let (p1, p2) = (parts, parts);
    let (c1, c2) = (pot.clone(), pot);
    let half = lit::<T>(0.5);
    let l = SmoothMap::scalar(8, move |x| {
        let (_, dq, _, s) = p1(x)?;
        Ok(dq.norm_squared() / (h + h) - h * half * c1.v(s)?)
    })
    .with_gradient(move |x| {
        let (_, dq, d, s) = p2(x)?;
        let f = d * (h * c2.dv(s)?);
        let mut g = DVector::zeros(8);
        let v = &dq / h;
        g.rows_mut(0, 2).copy_from(&(-v.rows(0, 2) + &f));
        g.rows_mut(2, 2).copy_from(&(-v.rows(2, 2) - &f));
        g.rows_mut(4, 4).copy_from(&v);
        Ok(g)
    });
    Ok(DlpsSystem::from_dms(4, l)?.with_sampler(|rng| {
        let (q0, q1) = sample_configuration_pair::<T>(rng);
        Pair::new(q0, q1)
    }))
}

fn check_match<T: Real>(
    act: impl Fn(&GroupElement<T>, &DVector<T>) -> DVector<T>,
    g: GroupElement<T>,
    target: &DVector<T>,
    source: &DVector<T>,
) -> Result<GroupElement<T>> {
    let res = (act(&g, source) - target).amax();
    if res > crate::scalar::identity_tol::<T>() * (T::one() + target.amax()) {
        return Err(Error::Matching(format!(
            "target is not in the orbit of the source (residual {res})"
        )));
    }
    Ok(g)
}

fn se2_act<T: Real>(g: &GroupElement<T>, q: &DVector<T>) -> DVector<T> {
    let (a, v) = Se2::parts(g);
    cvec(&[a * cget(q, 0) + v, a * cget(q, 1) + v])
}

/// `SE(2)` acting diagonally on `Q`: `(A, v) q = (A qx + v, A qy + v)`.
pub fn se2_action<T: Real>() -> ActionModel<T> {
    ActionModel::new(Arc::new(Se2), 4, se2_act)
        .with_generator(|i, q| match i {
            0 => {
                let ii = c(T::zero(), T::one());
                cvec(&[ii * cget(q, 0), ii * cget(q, 1)])
            }
            1 => DVector::from_row_slice(&[T::one(), T::zero(), T::one(), T::zero()]),
            _ => DVector::from_row_slice(&[T::zero(), T::one(), T::zero(), T::one()]),
        })
        .with_matcher(|t, s| {
            let (ss, rs) = center_relative(s);
            let (st, rt) = center_relative(t);
            let prod = rt * rs.conj();
            if cabs(prod) < lit(1e-24) {
                return Err(Error::Matching("degenerate relative position".into()));
            }
            let b = cunit(prod);
            check_match(se2_act, Se2::element(b, st - b * ss), t, s)
        })
}

fn t2_act<T: Real>(g: &GroupElement<T>, q: &DVector<T>) -> DVector<T> {
    let w = cget(&g.coords, 0);
    cvec(&[cget(q, 0) + w, cget(q, 1) + w])
}

/// `T2` acting diagonally on `Q` by translation.
pub fn t2_action<T: Real>() -> ActionModel<T> {
    ActionModel::new(Arc::new(Translations2), 4, t2_act)
        .with_generator(|i, _| {
            let mut e = DVector::zeros(4);
            e[i] = T::one();
            e[i + 2] = T::one();
            e
        })
        .with_matcher(|t, s| {
            let g = Translations2::element(center_relative(t).0 - center_relative(s).0);
            check_match(t2_act, g, t, s)
        })
}

/// `Q -> Q/T2`, `q -> r`, with section `r -> (r/√2, -r/√2)`.
pub fn t2_quotient<T: Real>() -> QuotientModel<T> {
    let s2 = 1.0 / 2f64.sqrt();
    let project = SmoothMap::affine(complex_blocks(&[&[s2, -s2]]), DVector::zeros(2));
    let section = SmoothMap::affine(complex_blocks(&[&[s2], &[-s2]]), DVector::zeros(4));
    QuotientModel::new(project, section, t2_action())
        .expect("dimensions are consistent")
        .with_sampler(sample_configuration)
}

/// The connection with `Hor = {q0x + q0y = q1x + q1y}`:
/// `A_d(q0, q1) = s1 - s0`, in closed form.
pub fn make_t2_connection<T: Real>() -> DiscreteConnection<T> {
    DiscreteConnection::new(t2_quotient(), |q0, q1| {
        Ok(Translations2::element(
            center_relative(q1).0 - center_relative(q0).0,
        ))
    })
    .with_lift(|q0, r1| Ok(from_center_relative(center_relative(q0).0, cget(r1, 0))))
    .with_horizontality(|q0, q1| {
        let sum = |q: &DVector<T>| cget(q, 0) + cget(q, 1);
        Ok(cvec(&[sum(q1) - sum(q0)]))
    })
    .with_pair_sampler(sample_configuration_pair)
}

/// The same kind of connection built from the flat metric
/// `diag(mx I2, my I2)`; `mx = my` reproduces [`make_t2_connection`].
pub fn make_t2_connection_flat<T: Real>(mx: f64, my: f64) -> Result<DiscreteConnection<T>> {
    let metric = DMatrix::from_diagonal(&DVector::from_row_slice(&[
        lit(mx),
        lit(mx),
        lit(my),
        lit(my),
    ]));
    Ok(mechanical_connection_flat(metric, t2_quotient())?
        .with_pair_sampler(sample_configuration_pair))
}

/// `Q -> Q/SE(2)`, `q -> |r|`, with section `ρ -> (ρ/√2, -ρ/√2)`.
pub fn se2_quotient<T: Real>() -> QuotientModel<T> {
    let project = SmoothMap::new(4, 1, |q| {
        let r = center_relative(q).1;
        Ok(DVector::from_element(1, cabs(r)))
    });
    let section = SmoothMap::affine(
        DMatrix::from_column_slice(
            4,
            1,
            &[
                lit(0.5f64.sqrt()),
                T::zero(),
                -lit::<T>(0.5f64.sqrt()),
                T::zero(),
            ],
        ),
        DVector::zeros(4),
    );
    QuotientModel::new(project, section, se2_action())
        .expect("dimensions are consistent")
        .with_sampler(sample_configuration)
}

fn nonzero<T: Real>(r: Complex<T>, what: &str) -> Result<()> {
    if cabs(r) < lit(1e-12) {
        return Err(Error::domain(format!("{what}: relative position vanishes")));
    }
    Ok(())
}

/// `SE(2)` connection with `Hor = {s1 = s0, r1 a positive multiple of r0}`:
/// `A_d(q0, q1) = (B, s1 - B s0)` with `B = r1 r̄0 / |r1 r̄0|`.
pub fn make_se2_connection<T: Real>() -> DiscreteConnection<T> {
    DiscreteConnection::new(se2_quotient(), |q0, q1| {
        let (s0, r0) = center_relative(q0);
        let (s1, r1) = center_relative(q1);
        nonzero(r0, "A_d")?;
        nonzero(r1, "A_d")?;
        let b = cunit(r1 * r0.conj());
        Ok(Se2::element(b, s1 - b * s0))
    })
    .with_lift(|q0, rho1| {
        let (s0, r0) = center_relative(q0);
        nonzero(r0, "horizontal lift")?;
        Ok(from_center_relative(s0, cscale(cunit(r0), rho1[0])))
    })
    .with_horizontality(|q0: &DVector<T>, q1: &DVector<T>| {
        let (s0, r0) = center_relative(q0);
        let (s1, r1) = center_relative(q1);
        let d = s1 - s0;
        Ok(DVector::from_row_slice(&[d.re, d.im, (r1 * r0.conj()).im]))
    })
    .with_pair_sampler(sample_configuration_pair)
}

fn u1_act_pairs<T: Real>(g: &GroupElement<T>, x: &DVector<T>) -> DVector<T> {
    let a = U1::unit(g);
    let n = x.len() / 2;
    cvec(&(0..n).map(|k| a * cget(x, k)).collect::<Vec<_>>())
}

/// `U(1)` rotating every complex coordinate of `C^n`.
pub fn u1_rotation_action<T: Real>(n: usize) -> ActionModel<T> {
    ActionModel::new(Arc::new(U1), 2 * n, u1_act_pairs)
        .with_generator(move |_, x| {
            let ii = c(T::zero(), T::one());
            cvec(&(0..n).map(|k| ii * cget(x, k)).collect::<Vec<_>>())
        })
        .with_matcher(|t, s| {
            let prod = cget(t, 0) * cget(s, 0).conj();
            if cabs(prod) < lit(1e-24) {
                return Err(Error::Matching("cannot align a vanishing vector".into()));
            }
            check_match(u1_act_pairs, U1::element(cunit(prod)), t, s)
        })
}

/// `C* -> C*/U(1)`, `r -> |r|`, with section `ρ -> ρ`.
pub fn u1_quotient<T: Real>() -> QuotientModel<T> {
    let project = SmoothMap::new(2, 1, |r| Ok(DVector::from_element(1, cabs(cget(r, 0)))));
    let section = SmoothMap::affine(
        DMatrix::from_column_slice(2, 1, &[T::one(), T::zero()]),
        DVector::zeros(2),
    );
    QuotientModel::new(project, section, u1_rotation_action(1))
        .expect("dimensions are consistent")
        .with_sampler(|rng| {
            let q = sample_configuration::<T>(rng);
            cvec(&[center_relative(&q).1])
        })
}

/// `U(1)` connection on `C*` with `A_d(r0, r1) = r1 r̄0 / |r1 r̄0|`.
pub fn make_u1_connection<T: Real>() -> DiscreteConnection<T> {
    DiscreteConnection::new(u1_quotient(), |r0, r1| {
        let (a, b) = (cget(r0, 0), cget(r1, 0));
        nonzero(a, "A_d")?;
        nonzero(b, "A_d")?;
        Ok(U1::element(cunit(b * a.conj())))
    })
    .with_lift(|r0, rho1| {
        let a = cget(r0, 0);
        nonzero(a, "horizontal lift")?;
        Ok(cvec(&[cscale(cunit(a), rho1[0])]))
    })
    .with_horizontality(|r0: &DVector<T>, r1: &DVector<T>| {
        Ok(DVector::from_element(
            1,
            (cget(r1, 0) * cget(r0, 0).conj()).im,
        ))
    })
    .with_pair_sampler(|rng| {
        let (q0, q1) = sample_configuration_pair::<T>(rng);
        (
            cvec(&[center_relative(&q0).1]),
            cvec(&[center_relative(&q1).1]),
        )
    })
}

/// `Υ(q0, q1) = ((r0, s1 - s0), r1)` as a linear map `R^8 -> R^6`.
pub fn t2_upsilon<T: Real>() -> SmoothMap<T> {
    let s2 = 1.0 / 2f64.sqrt();
    SmoothMap::affine(
        complex_blocks(&[
            &[s2, -s2, 0.0, 0.0],
            &[-0.5, -0.5, 0.5, 0.5],
            &[0.0, 0.0, s2, -s2],
        ]),
        DVector::zeros(6),
    )
}

/// `((r0, z0), r1) -> (q0, q1)` with `q0 = (r0/√2, -r0/√2)` and
/// `q1 = (r1/√2 + z0, -r1/√2 + z0)`.
pub fn t2_lift_section<T: Real>() -> SmoothMap<T> {
    let s2 = 1.0 / 2f64.sqrt();
    SmoothMap::affine(
        complex_blocks(&[
            &[s2, 0.0, 0.0],
            &[-s2, 0.0, 0.0],
            &[0.0, 1.0, s2],
            &[0.0, 1.0, -s2],
        ]),
        DVector::zeros(8),
    )
}

/// The closed-form model of the reduction by `T2`: `E' = (r, z)` over `M' = r`.
pub fn make_reduced_model<T: Real>() -> ReducedModel<T> {
    ReducedModel::new(
        FiberBundleModel::identity(4),
        FiberBundleModel::product(2, 2),
        t2_upsilon(),
        t2_lift_section(),
        t2_action(),
        t2_action(),
    )
    .expect("dimensions are consistent")
}

/// The chart `(q, w) -> (r, w)` of `(Q x T2)/T2`, for building the `T2`
/// model through the generic construction.
pub fn t2_chart<T: Real>() -> ConjugateChart<T> {
    ConjugateChart::new(
        4,
        |q, w| Ok(cvec(&[center_relative(q).1, cget(&w.coords, 0)])),
        |v| {
            let q = from_center_relative(c(T::zero(), T::zero()), cget(v, 0));
            Ok((q, Translations2::element(cget(v, 1))))
        },
    )
}

/// Chart `(q, (B, u)) -> (|r|, r̄/|r| (u - (1 - B) s), arg B)` of
/// `(Q x SE(2))/SE(2)`.
pub fn se2_chart<T: Real>() -> ConjugateChart<T> {
    ConjugateChart::new(
        4,
        |q, w| {
            let (s, r) = center_relative(q);
            nonzero(r, "SE(2) chart")?;
            let (b, u) = Se2::parts(w);
            let one = c(T::one(), T::zero());
            let zeta = r.conj() * (u - (one - b) * s) / c(cabs(r), T::zero());
            Ok(DVector::from_row_slice(&[
                cabs(r),
                zeta.re,
                zeta.im,
                b.im.atan2(b.re),
            ]))
        },
        |v| {
            let q = from_center_relative(c(T::zero(), T::zero()), c(v[0], T::zero()));
            Ok((q, Se2::element(c(v[3].cos(), v[3].sin()), c(v[1], v[2]))))
        },
    )
}

/// Chart `((r, z), A) -> (|r|, z r̄/|r|, arg A)` of `(E' x U(1))/U(1)`.
pub fn u1_chart<T: Real>() -> ConjugateChart<T> {
    ConjugateChart::new(
        4,
        |e, w| {
            let (r, z) = (cget(e, 0), cget(e, 1));
            nonzero(r, "U(1) chart")?;
            let zeta = z * r.conj() / c(cabs(r), T::zero());
            let th = w.coords[1].atan2(w.coords[0]);
            Ok(DVector::from_row_slice(&[cabs(r), zeta.re, zeta.im, th]))
        },
        |v| {
            let e = cvec(&[c(v[0], T::zero()), c(v[1], v[2])]);
            Ok((e, U1::from_angle(v[3])))
        },
    )
}

/// `L'((r0, z0), r1) = (2|z0|^2 + |r1 - r0|^2)/(2h) - (h/2) V(2|r0|^2)`.
pub fn reduced_lagrangian_formula<T: Real>(cfg: &TwoBodyConfig<T>, y: &DVector<T>) -> Result<T> {
    let (r0, z0, r1) = (cget(y, 0), cget(y, 1), cget(y, 2));
    let two = lit::<T>(2.0);
    let h = cfg.h;
    Ok((two * z0.norm_sqr() + (r1 - r0).norm_sqr()) / (two * h)
        - h / two * cfg.v(two * r0.norm_sqr())?)
}

/// The reduced IVCM in closed form: `b ∂/∂r1 + c ∂/∂z1 -> -c ∂/∂z0`.
pub fn reduced_ivcm_formula<T: Real>() -> DMatrix<T> {
    let mut m = DMatrix::zeros(4, 4);
    m[(2, 2)] = -T::one();
    m[(3, 3)] = -T::one();
    m
}

/// `z1 = z0`, `r2 = 2 r1 - r0 - 2 h^2 V'(2|r1|^2) r1`; returns `(r1, z1, r2)`.
pub fn closed_form_reduced_step<T: Real>(
    cfg: &TwoBodyConfig<T>,
    r0: Complex<T>,
    z0: Complex<T>,
    r1: Complex<T>,
) -> Result<(Complex<T>, Complex<T>, Complex<T>)> {
    if cabs(r1) == T::zero() {
        return Err(Error::domain("r1 = 0: particles collide"));
    }
    let two = lit::<T>(2.0);
    let k = two * cfg.h * cfg.h * cfg.dv(two * r1.norm_sqr())?;
    Ok((r1, z0, cscale(r1, two) - r0 - cscale(r1, k)))
}

/// Everything needed to compare reduction by `T2` then `U(1)` against
/// reduction by `SE(2)`.
#[derive(Debug, Clone)]
pub struct StagedSetup<T: Real> {
    pub full: DlpsSystem<T>,
    pub conn_h: DiscreteConnection<T>,
    pub conn_gh: DiscreteConnection<T>,
    pub conn_g: DiscreteConnection<T>,
    /// The residual `U(1)` action `(r, z) -> (A r, A z)` on `E'`.
    pub residual_e_action: ActionModel<T>,
    pub residual_m_action: ActionModel<T>,
    pub model_h: ReducedModel<T>,
    pub model_gh: ReducedModel<T>,
    pub model_g: ReducedModel<T>,
    pub stages: TwoStage<T>,
    /// Worst violation of `A_d(g q0, g q1) = g A_d(q0, q1) g^-1` found for the `T2` connection.
    pub normality_violation: f64,
}

impl<T: Real> StagedSetup<T> {
    pub fn reduced_h(&self) -> &ReductionResult<T> {
        &self.stages.stage_h
    }
}

/// Builds the staged configuration; validates the normality condition of the
/// `T2` connection under `SE(2)` at 100 samples.
pub fn make_staged_setup<T: Real>(
    cfg: &TwoBodyConfig<T>,
    rng: &mut dyn RngCore,
) -> Result<StagedSetup<T>> {
    let full = make_full_system(cfg)?;
    let conn_h = make_t2_connection();
    let normality_violation = validate_stage_connection(
        &conn_h,
        &se2_action(),
        Translations2::into_se2,
        100,
        rng,
        1e-10,
    )?;
    let model_h = make_reduced_model();
    let stage_h = reduce(&full, &model_h)?;
    let conn_gh = make_u1_connection();
    let residual_e_action = u1_rotation_action(2);
    let residual_m_action = conn_gh.action().clone();
    let model_gh = build_upsilon(
        &conn_gh,
        &stage_h.system,
        u1_chart(),
        FiberBundleModel::product(1, 3),
        residual_e_action.clone(),
        rng,
    )?;
    let conn_g = make_se2_connection();
    let model_g = build_upsilon(
        &conn_g,
        &full,
        se2_chart(),
        FiberBundleModel::product(1, 3),
        se2_action(),
        rng,
    )?;
    let stages = TwoStage::new(&full, &model_h, &model_gh, &model_g)?;
    Ok(StagedSetup {
        full,
        conn_h,
        conn_gh,
        conn_g,
        residual_e_action,
        residual_m_action,
        model_h,
        model_gh,
        model_g,
        stages,
        normality_violation,
    })
}

/// The trivial group's view of [`Se2`]: `SE(2)` elements acting on `C'(Q)`.
pub fn se2_pair_action<T: Real>() -> ActionModel<T> {
    se2_action().diagonal(&se2_action())
}

/// `U(1)` embedded in `SE(2)` as rotations about the origin.
pub fn u1_group<T: Real>() -> Arc<dyn LieGroup<T>> {
    Arc::new(U1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlps::{action_sum, del_residual, simulate, step, DiscretePath};
    use crate::scalar::inf_norm;
    use crate::smooth::NewtonConfig;
    use nalgebra::dvector;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn cfg(f: PotentialFamily) -> TwoBodyConfig<f64> {
        TwoBodyConfig::with_family(0.1, f).unwrap()
    }

    #[test]
    fn free_lagrangian_value() {
        let c = TwoBodyConfig::with_family(1.0, PotentialFamily::Zero).unwrap();
        let sys = make_full_system(&c).unwrap();
        // both particles move by 1 along x
        let p = Pair::new(dvector![0.0, 0.0, 0.0, 1.0], dvector![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(sys.lagrangian_at(&p).unwrap(), 1.0);
    }

    #[test]
    fn collision_is_a_domain_error() {
        let sys = make_full_system(&cfg(PotentialFamily::Linear { a: 0.5 })).unwrap();
        let p = Pair::new(dvector![1.0, 1.0, 1.0, 1.0], dvector![1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(sys.lagrangian_at(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn analytic_gradient_matches_fd() {
        let sys = make_full_system(&cfg(PotentialFamily::Quadratic { c: 0.25 })).unwrap();
        let mut r = rng(1);
        for _ in 0..20 {
            let p = sys.sample_pair(&mut r).unwrap();
            assert!(sys.lagrangian().jacobian_mismatch(&p.to_vector()).unwrap() < 1e-8);
        }
    }

    #[test]
    fn lagrangian_is_se2_invariant() {
        let sys = make_full_system(&cfg(PotentialFamily::Linear { a: 1.0 })).unwrap();
        let act = se2_pair_action::<f64>();
        let mut r = rng(2);
        for _ in 0..100 {
            let p = sys.sample_pair(&mut r).unwrap();
            let g = Se2.sample(&mut r, 3.0);
            let x = p.to_vector();
            let d = sys.lagrangian().eval_scalar(&act.act(&g, &x)).unwrap()
                - sys.lagrangian().eval_scalar(&x).unwrap();
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn action_invariant_under_shift_of_whole_path() {
        let sys = make_full_system(&cfg(PotentialFamily::Linear { a: 0.5 })).unwrap();
        let mut r = rng(3);
        let (q0, q1) = sample_configuration_pair::<f64>(&mut r);
        let traj = simulate(&sys, &q0, &q1, 10, &NewtonConfig::default()).unwrap();
        let g = Se2.sample(&mut r, 2.0);
        let moved = DiscretePath::new(
            traj.path
                .pairs
                .iter()
                .map(|p| Pair::new(se2_act(&g, &p.eps), se2_act(&g, &p.m)))
                .collect(),
        );
        let (a, b) = (
            action_sum(&sys, &traj.path).unwrap(),
            action_sum(&sys, &moved).unwrap(),
        );
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn t2_connection_examples() {
        let conn = make_t2_connection::<f64>();
        let q0 = dvector![0.0, 0.0, 2.0, 0.0];
        let q1 = dvector![1.0, 0.0, 3.0, 0.0];
        assert_eq!(conn.ad(&q0, &q1).unwrap().coords, dvector![1.0, 0.0]);
        assert_eq!(conn.ad(&q0, &q0).unwrap().coords, dvector![0.0, 0.0]);
        let l = conn
            .horizontal_lift(&q0, &dvector![-2f64.sqrt(), 0.0])
            .unwrap();
        assert!(inf_norm(&(l - &q0)) < 1e-15);
    }

    #[test]
    fn flat_connection_reproduces_closed_form() {
        let closed = make_t2_connection::<f64>();
        let flat = make_t2_connection_flat::<f64>(1.0, 1.0).unwrap();
        let mut r = rng(4);
        for _ in 0..50 {
            let (q0, q1) = closed.sample_pair(&mut r).unwrap();
            let a = closed.ad(&q0, &q1).unwrap();
            let b = flat.ad(&q0, &q1).unwrap();
            assert!(inf_norm(&(a.coords - b.coords)) < 1e-10);
        }
        assert!(closed.check_equivariance(200, &mut r).max_violation < 1e-10);
        assert!(flat.horizontality_violation(50, &mut r).unwrap() < 1e-10);
    }

    #[test]
    fn se2_and_u1_connections_are_equivariant() {
        let mut r = rng(5);
        let se2 = make_se2_connection::<f64>();
        assert!(se2.check_equivariance(100, &mut r).max_violation < 1e-10);
        assert!(se2.lift_violation(50, &mut r).unwrap() < 1e-12);
        assert!(se2.horizontality_violation(50, &mut r).unwrap() < 1e-12);
        let u1 = make_u1_connection::<f64>();
        assert!(u1.check_equivariance(100, &mut r).max_violation < 1e-12);
        assert!(u1.lift_violation(50, &mut r).unwrap() < 1e-12);
    }

    #[test]
    fn upsilon_example_and_section() {
        let model = make_reduced_model::<f64>();
        let x = Pair::new(dvector![0.0, 0.0, 2.0, 0.0], dvector![1.0, 0.0, 3.0, 0.0]);
        let y = model.project_pair(&x).unwrap();
        let s = 2f64.sqrt();
        assert!(inf_norm(&(y.eps - dvector![-s, 0.0, 1.0, 0.0])) < 1e-15);
        assert!(inf_norm(&(y.m - dvector![-s, 0.0])) < 1e-15);
        let mut r = rng(6);
        let sys = make_full_system(&cfg(PotentialFamily::Zero)).unwrap();
        let samples: Vec<_> = (0..100).map(|_| sys.sample_pair(&mut r).unwrap()).collect();
        let rep = model.validate(&samples, &mut r, 1e-10).unwrap();
        assert_eq!(rep.min_e_rank, 4);
    }

    #[test]
    fn generic_t2_model_agrees_with_closed_form() {
        let sys = make_full_system(&cfg(PotentialFamily::Linear { a: 0.5 })).unwrap();
        let mut r = rng(7);
        let generic = build_upsilon(
            &make_t2_connection(),
            &sys,
            t2_chart(),
            FiberBundleModel::product(2, 2),
            t2_action(),
            &mut r,
        )
        .unwrap();
        let closed = make_reduced_model::<f64>();
        for _ in 0..50 {
            let p = sys.sample_pair(&mut r).unwrap();
            let a = generic.upsilon.eval(&p.to_vector()).unwrap();
            let b = closed.upsilon.eval(&p.to_vector()).unwrap();
            assert!(inf_norm(&(a - b)) < 1e-12);
        }
    }

    #[test]
    fn reduced_system_matches_closed_forms() {
        let c = cfg(PotentialFamily::Quadratic { c: 0.25 });
        let sys = make_full_system(&c).unwrap();
        let red = reduce(&sys, &make_reduced_model()).unwrap();
        let mut r = rng(8);
        for _ in 0..100 {
            let (x0, x1) = sys.sample_consecutive(&mut r).unwrap();
            let (y0, y1) = (
                red.model.project_pair(&x0).unwrap(),
                red.model.project_pair(&x1).unwrap(),
            );
            let lag = red.system.lagrangian_at(&y0).unwrap();
            assert!((lag - reduced_lagrangian_formula(&c, &y0.to_vector()).unwrap()).abs() < 1e-10);
            let iv = red.system.ivcm(&y0, &y1).unwrap();
            assert!((iv - reduced_ivcm_formula::<f64>()).amax() < 1e-9);
        }
    }

    #[test]
    fn closed_form_step_example() {
        let c = cfg(PotentialFamily::Linear { a: 0.5 });
        let one = Complex::new(1.0, 0.0);
        let zero = Complex::new(0.0, 0.0);
        let (_, z1, r2) = closed_form_reduced_step(&c, one, zero, one).unwrap();
        assert_eq!(z1, zero);
        assert!((r2 - Complex::new(0.99, 0.0)).norm() < 1e-15);
        assert!(closed_form_reduced_step(&c, one, zero, zero).is_err());

        let red = reduce(&make_full_system(&c).unwrap(), &make_reduced_model()).unwrap();
        let (next, _) = step(
            &red.system,
            &dvector![1.0, 0.0, 0.0, 0.0],
            &dvector![1.0, 0.0],
            None,
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!(inf_norm(&(next.eps - dvector![1.0, 0.0, 0.0, 0.0])) < 1e-10);
        assert!(inf_norm(&(next.m - dvector![0.99, 0.0])) < 1e-10);
    }

    #[test]
    fn reduced_residual_vanishes_on_closed_form_triples() {
        let c = cfg(PotentialFamily::Linear { a: 1.0 });
        let red = reduce(&make_full_system(&c).unwrap(), &make_reduced_model()).unwrap();
        let (r0, z0, r1) = (
            Complex::new(0.8, -0.3),
            Complex::new(0.2, 0.1),
            Complex::new(0.9, -0.1),
        );
        let (_, z1, r2) = closed_form_reduced_step(&c, r0, z0, r1).unwrap();
        let prev = Pair::new(cvec(&[r0, z0]), cvec(&[r1]));
        let cur = Pair::new(cvec(&[r1, z1]), cvec(&[r2]));
        assert!(inf_norm(&del_residual(&red.system, &prev, &cur).unwrap()) < 1e-9);
    }

    #[test]
    fn staged_setup_validates() {
        let c = cfg(PotentialFamily::Linear { a: 0.5 });
        let mut r = rng(9);
        let setup = make_staged_setup(&c, &mut r).unwrap();
        assert!(setup.normality_violation <= 1e-10);
        // residual action leaves the T2-reduced Lagrangian invariant
        let sys_h = &setup.reduced_h().system;
        for _ in 0..100 {
            let y = sys_h.sample_pair(&mut r).unwrap();
            let g = U1.sample(&mut r, 1.0);
            let gy = Pair::new(
                setup.residual_e_action.act(&g, &y.eps),
                setup.residual_m_action.act(&g, &y.m),
            );
            assert!(
                (sys_h.lagrangian_at(&gy).unwrap() - sys_h.lagrangian_at(&y).unwrap()).abs()
                    < 1e-12
            );
        }
        let pts: Vec<_> = (0..20)
            .map(|_| sys_h.sample_pair(&mut r).unwrap().eps)
            .collect();
        assert!(setup.residual_e_action.axiom_violation(&pts, &mut r) < 1e-12);
    }

    #[test]
    fn residual_action_agrees_with_lifted_se2_action() {
        let model = make_reduced_model::<f64>();
        let induced =
            crate::reduction::residual_action(&model, &se2_pair_action(), u1_group(), U1::into_se2);
        let closed = u1_rotation_action::<f64>(3);
        let mut r = rng(10);
        let sys = make_full_system(&cfg(PotentialFamily::Zero)).unwrap();
        for _ in 0..50 {
            let y = model
                .upsilon
                .eval(&sys.sample_pair(&mut r).unwrap().to_vector())
                .unwrap();
            let g = U1.sample(&mut r, 1.0);
            assert!(inf_norm(&(induced.act(&g, &y) - closed.act(&g, &y))) < 1e-12);
        }
    }
}
