//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

use dlps_core::catalog::{free_particle, harmonic_oscillator};
use dlps_core::diagnostics::{momentum_evolution_check, symplectic_check};
use dlps_core::dlps::{
    action_derivative_fd, build_fixed_endpoint_variation, max_del_residual, simulate, step,
    DiscretePath, DlpsSystem, Pair,
};
use dlps_core::example_se2::{
    closed_form_reduced_step, make_full_system, make_reduced_model, make_staged_setup,
    make_t2_connection, make_t2_connection_flat, se2_action, u1_rotation_action, PotentialFamily,
    TwoBodyConfig,
};
use dlps_core::lie::{translation_action, LieGroup, Se2, Translations2};
use dlps_core::reduction::{
    check_morphism, project_path, reconstruct_path, reduce, translation_map,
};
use dlps_core::scalar::{cvec, inf_norm, uniform};
use dlps_core::smooth::{NewtonConfig, SmoothMap};
use nalgebra::{dvector, Complex, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::process::Command;
use std::time::Instant;

type Check = Result<(bool, String), String>;
type Shipped = Vec<(String, DlpsSystem<f64>, DiscretePath<f64>)>;

const POTENTIALS: [PotentialFamily; 3] = [
    PotentialFamily::Linear { a: 0.5 },
    PotentialFamily::Linear { a: 1.0 },
    PotentialFamily::Quadratic { c: 0.25 },
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn two_body(f: PotentialFamily) -> TwoBodyConfig<f64> {
    TwoBodyConfig::with_family(0.1, f).expect("h is nonzero")
}

fn start() -> (DVector<f64>, DVector<f64>) {
    (
        dvector![1.0, 0.0, -1.0, 0.0],
        dvector![1.02, 0.1, -0.98, -0.08],
    )
}

fn full_trajectory(sys: &DlpsSystem<f64>, n: usize) -> Result<DiscretePath<f64>, String> {
    let (q0, q1) = start();
    Ok(simulate(sys, &q0, &q1, n, &NewtonConfig::default())
        .map_err(|e| e.to_string())?
        .path)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c(re: f64, im: f64) -> Complex<f64> {
    Complex::new(re, im)
}

fn criterion_1() -> Check {
    let cfg = two_body(PotentialFamily::Linear { a: 0.5 });
    let full = make_full_system(&cfg).map_err(err)?;
    let red = reduce(&full, &make_reduced_model()).map_err(err)?;
    let newton = NewtonConfig::default();
    let (next, _) = step(
        &red.system,
        &dvector![1.0, 0.0, 0.0, 0.0],
        &dvector![1.0, 0.0],
        None,
        &newton,
    )
    .map_err(err)?;
    let example = inf_norm(&(next.eps - dvector![1.0, 0.0, 0.0, 0.0]))
        .max(inf_norm(&(next.m - dvector![0.99, 0.0])));

    let mut r = rng(101);
    let mut closed_gap: f64 = 0.0;
    let mut full_gap: f64 = 0.0;
    for i in 0..100 {
        let cfg = two_body(POTENTIALS[i % 3]);
        let full = make_full_system(&cfg).map_err(err)?;
        let red = reduce(&full, &make_reduced_model()).map_err(err)?;
        let mut u = |lo, hi| uniform::<f64>(&mut r as &mut dyn RngCore, lo, hi);
        let th = u(-3.0, 3.0);
        let r0 = Complex::from_polar(u(0.7, 1.5), th);
        let r1 = r0 + c(u(-0.1, 0.1), u(-0.1, 0.1));
        let z0 = c(u(-0.2, 0.2), u(-0.2, 0.2));
        let (_, z1, r2) = closed_form_reduced_step(&cfg, r0, z0, r1).map_err(err)?;
        let (next, _) =
            step(&red.system, &cvec(&[r0, z0]), &cvec(&[r1]), None, &newton).map_err(err)?;
        let want = cvec(&[r1, z1]);
        closed_gap = closed_gap
            .max(inf_norm(&(&next.eps - want)))
            .max(inf_norm(&(&next.m - cvec(&[r2]))));

        // independent solve in the unreduced space
        let x0 = red
            .model
            .lift_pair(&Pair::new(cvec(&[r0, z0]), cvec(&[r1])))
            .map_err(err)?;
        let (x1, _) = step(&full, &x0.eps, &x0.m, None, &newton).map_err(err)?;
        let y1 = red.model.project_pair(&x1).map_err(err)?;
        full_gap = full_gap.max(inf_norm(&(y1.to_vector() - next.to_vector())));
    }
    let worst = example.max(closed_gap).max(full_gap);
    Ok((
        worst <= 1e-10,
        format!("example {example:.2e}, closed form {closed_gap:.2e}, full-space solve {full_gap:.2e} (tol 1e-10)"),
    ))
}

fn criterion_2() -> Check {
    let mut worst_res: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for f in POTENTIALS {
        let full = make_full_system(&two_body(f)).map_err(err)?;
        let red = reduce(&full, &make_reduced_model()).map_err(err)?;
        let path = full_trajectory(&full, 50)?;
        let projected = project_path(&red.model, &path).map_err(err)?;
        worst_res = worst_res.max(max_del_residual(&red.system, &projected).map_err(err)?);
        let y0 = &projected.pairs[0];
        let traj =
            simulate(&red.system, &y0.eps, &y0.m, 50, &NewtonConfig::default()).map_err(err)?;
        worst_gap = worst_gap.max(traj.path.max_distance(&projected));
    }
    Ok((
        worst_res <= 1e-8 && worst_gap <= 1e-8,
        format!(
            "projected residual {worst_res:.2e}, reduced vs projected {worst_gap:.2e} (tol 1e-8)"
        ),
    ))
}

fn criterion_3() -> Check {
    let mut worst: f64 = 0.0;
    for f in POTENTIALS {
        let full = make_full_system(&two_body(f)).map_err(err)?;
        let model = make_reduced_model();
        let path = full_trajectory(&full, 50)?;
        let projected = project_path(&model, &path).map_err(err)?;
        let (e0, m1) = (&path.pairs[0].eps, &path.pairs[0].m);
        let back = reconstruct_path(&model, &projected, e0, m1).map_err(err)?;
        worst = worst.max(back.max_distance(&path));
    }
    Ok((
        worst <= 1e-8,
        format!("round trip {worst:.2e} over three potentials (tol 1e-8)"),
    ))
}

fn criterion_4() -> Check {
    let mut r = rng(104);
    let mut worst: f64 = 0.0;
    let mut residual: f64 = 0.0;
    for f in POTENTIALS {
        let setup = make_staged_setup(&two_body(f), &mut r).map_err(err)?;
        let path = full_trajectory(&setup.full, 50)?;
        let rep = setup.stages.compare(&path).map_err(err)?;
        worst = worst.max(rep.stage_comparison_max);
        residual = residual.max(rep.residual_gh_max).max(rep.residual_g_max);
    }
    Ok((
        worst <= 1e-8,
        format!("stage comparison {worst:.2e} (tol 1e-8); reduced residuals {residual:.2e}"),
    ))
}

fn criterion_5() -> Check {
    let mut r = rng(105);
    let closed = make_t2_connection::<f64>();
    let flat = make_t2_connection_flat::<f64>(1.0, 1.0).map_err(err)?;
    let a = closed.check_equivariance(200, &mut r);
    let b = flat.check_equivariance(200, &mut r);
    let (na, _) = closed
        .conjugation_violation(&se2_action(), Translations2::into_se2, 200, &mut r)
        .map_err(err)?;
    let (nb, _) = flat
        .conjugation_violation(&se2_action(), Translations2::into_se2, 200, &mut r)
        .map_err(err)?;
    let mut agree: f64 = 0.0;
    for _ in 0..200 {
        let (q0, q1) = closed.sample_pair(&mut r).map_err(err)?;
        let d = closed.ad(&q0, &q1).map_err(err)?.coords - flat.ad(&q0, &q1).map_err(err)?.coords;
        agree = agree.max(inf_norm(&d));
    }
    let equiv = a.max_violation.max(b.max_violation).max(na).max(nb);
    let skipped = a.domain_failures + b.domain_failures;
    Ok((
        equiv <= 1e-10 && agree <= 1e-10 && skipped == 0,
        format!("equivariance {equiv:.2e}, agreement {agree:.2e} (tol 1e-10)"),
    ))
}

fn criterion_6() -> Check {
    let mut drift: f64 = 0.0;
    let fp = free_particle::<f64>(2, 0.1).map_err(err)?;
    let traj = simulate(
        &fp,
        &dvector![0.0, 0.0],
        &dvector![0.1, -0.05],
        50,
        &NewtonConfig::default(),
    )
    .map_err(err)?;
    drift = drift.max(
        momentum_evolution_check(&fp, &translation_action(2), &traj.path, 1e-10)
            .map_err(err)?
            .drift_max,
    );
    let full = make_full_system(&two_body(PotentialFamily::Linear { a: 0.5 })).map_err(err)?;
    let path = full_trajectory(&full, 50)?;
    drift = drift.max(
        momentum_evolution_check(&full, &se2_action(), &path, 1e-10)
            .map_err(err)?
            .drift_max,
    );

    let mut evolution: f64 = 0.0;
    let mut trajectories = true;
    for f in POTENTIALS {
        let full = make_full_system(&two_body(f)).map_err(err)?;
        let red = reduce(&full, &make_reduced_model()).map_err(err)?;
        let y0 = red
            .model
            .project_pair(&full_trajectory(&full, 1)?.pairs[0])
            .map_err(err)?;
        let traj =
            simulate(&red.system, &y0.eps, &y0.m, 50, &NewtonConfig::default()).map_err(err)?;
        let rep = momentum_evolution_check(&red.system, &u1_rotation_action(2), &traj.path, 1e-8)
            .map_err(err)?;
        evolution = evolution.max(rep.evolution_max);
        trajectories &= rep.is_trajectory;
    }
    Ok((
        drift <= 1e-10 && evolution <= 1e-8 && trajectories,
        format!("DMS drift {drift:.2e} (tol 1e-10), reduced evolution identity {evolution:.2e} (tol 1e-8)"),
    ))
}

fn criterion_7() -> Check {
    let newton = NewtonConfig::default();
    let osc = harmonic_oscillator::<f64>(2, 0.1, 1.5).map_err(err)?;
    let traj = simulate(
        &osc,
        &dvector![1.0, 0.0],
        &dvector![0.99, 0.12],
        20,
        &newton,
    )
    .map_err(err)?;
    let a = symplectic_check(&osc, &traj.path, &newton).map_err(err)?;
    let full = make_full_system(&two_body(PotentialFamily::Linear { a: 0.5 })).map_err(err)?;
    let b = symplectic_check(&full, &full_trajectory(&full, 20)?, &newton).map_err(err)?;
    let steps = a.per_step.len() == 20 && b.per_step.len() == 20;
    Ok((
        steps && a.max_violation <= 1e-6 && b.max_violation <= 1e-6,
        format!(
            "oscillator {:.2e}, two-body {:.2e} (tol 1e-6)",
            a.max_violation, b.max_violation
        ),
    ))
}

/// Every shipped system with a trajectory of it. Reduced systems of the
/// example use projections of the full trajectory, which are trajectories.
fn shipped_systems(r: &mut ChaCha8Rng) -> Result<Shipped, String> {
    let newton = NewtonConfig::default();
    let mut out = Vec::new();
    let fp = free_particle::<f64>(2, 0.1).map_err(err)?;
    let t = simulate(&fp, &dvector![0.0, 0.0], &dvector![0.1, -0.05], 20, &newton).map_err(err)?;
    out.push(("free-particle".to_string(), fp, t.path));
    let osc = harmonic_oscillator::<f64>(2, 0.1, 1.5).map_err(err)?;
    let t = simulate(
        &osc,
        &dvector![1.0, 0.0],
        &dvector![0.99, 0.12],
        20,
        &newton,
    )
    .map_err(err)?;
    out.push(("harmonic-oscillator".to_string(), osc, t.path));
    for f in POTENTIALS {
        let setup = make_staged_setup(&two_body(f), r).map_err(err)?;
        let path = full_trajectory(&setup.full, 20)?;
        let st = &setup.stages;
        let p_h = project_path(&st.stage_h.model, &path).map_err(err)?;
        let p_gh = project_path(&st.stage_gh.model, &p_h).map_err(err)?;
        let p_g = project_path(&st.stage_g.model, &path).map_err(err)?;
        let y0 = &p_h.pairs[0];
        let t_h = simulate(&st.stage_h.system, &y0.eps, &y0.m, 20, &newton).map_err(err)?;
        out.push((format!("se2-two-body {f:?}"), setup.full.clone(), path));
        out.push((
            format!("T2-reduced {f:?}"),
            st.stage_h.system.clone(),
            t_h.path,
        ));
        out.push((
            format!("T2-reduced (projected) {f:?}"),
            st.stage_h.system.clone(),
            p_h,
        ));
        out.push((
            format!("U(1)-stage {f:?}"),
            st.stage_gh.system.clone(),
            p_gh,
        ));
        out.push((
            format!("SE(2)-reduced {f:?}"),
            st.stage_g.system.clone(),
            p_g,
        ));
    }
    Ok(out)
}

fn criterion_8() -> Check {
    let mut r = rng(108);
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    let systems = shipped_systems(&mut r)?;
    for (name, sys, path) in &systems {
        for _ in 0..20 {
            let tilde: Vec<DVector<f64>> = (0..path.len() - 1)
                .map(|_| DVector::from_fn(sys.eps_dim(), |_, _| uniform::<f64>(&mut r, -1.0, 1.0)))
                .collect();
            let var = build_fixed_endpoint_variation(sys, path, &tilde).map_err(err)?;
            let ds = action_derivative_fd(sys, path, &var).map_err(err)?.abs();
            if ds > worst {
                worst = ds;
                worst_name = name.clone();
            }
        }
    }
    Ok((
        worst <= 1e-6,
        format!(
            "max |dS| {worst:.2e} on {} systems, worst {worst_name} (tol 1e-6)",
            systems.len()
        ),
    ))
}

fn criterion_9() -> Check {
    let mut r = rng(109);
    let full = make_full_system(&two_body(PotentialFamily::Linear { a: 0.5 })).map_err(err)?;
    let red = reduce(&full, &make_reduced_model()).map_err(err)?;
    let samples: Vec<(Pair<f64>, Pair<f64>)> = (0..50)
        .map(|_| full.sample_consecutive(&mut r))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let ups = check_morphism(&red.model.upsilon, &full, &red.system, &samples).map_err(err)?;
    let mut translations = Vec::new();
    for _ in 0..5 {
        let g = Se2.sample(&mut r, 2.0);
        let model = dlps_core::reduction::ReducedModel {
            e_action: se2_action(),
            m_action: se2_action(),
            ..red.model.clone()
        };
        translations.push(
            check_morphism(&translation_map(&model, &g), &full, &full, &samples).map_err(err)?,
        );
    }
    let trans_ok = translations.iter().all(|t| t.passes(1e-9));
    let trans_max = translations
        .iter()
        .fold(0.0f64, |w, t| w.max(t.max_violation()));

    let base = red.model.upsilon.clone();
    let perturbed = SmoothMap::new(8, 6, move |x| {
        let mut y = base.eval(x)?;
        y[2] += 0.1;
        Ok(y)
    });
    let neg = check_morphism(&perturbed, &full, &red.system, &samples).map_err(err)?;
    Ok((
        ups.passes(1e-9) && trans_ok && neg.lagrangian_max >= 1e-2,
        format!(
            "upsilon {:.2e}, translations {trans_max:.2e} (tol 1e-9); perturbed map condition 5 {:.2e} (needs >= 1e-2)",
            ups.max_violation(),
            neg.lagrangian_max
        ),
    ))
}

fn criterion_10() -> Check {
    let exe = env!("CARGO_BIN_EXE_dlps");
    let dir = tempfile::tempdir().map_err(err)?;
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"system": "se2-two-body", "h": 0.1, "potential": {"family": "linear", "a": 0.5},
            "n_steps": 20, "initial": [1.0, 0.0, -1.0, 0.0, 1.02, 0.1, -0.98, -0.08]}"#,
    )
    .map_err(err)?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let mut files = Vec::new();
        for cmd in ["simulate", "reduce", "reconstruct", "stages", "check"] {
            let out = dir.path().join(format!("{cmd}-{run}"));
            let status = Command::new(exe)
                .args([cmd, "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .args(["--seed", "7"])
                .status()
                .map_err(err)?;
            if !status.success() {
                return Ok((false, format!("{cmd} exited with {status}")));
            }
            let mut names: Vec<_> = std::fs::read_dir(&out)
                .map_err(err)?
                .map(|e| e.unwrap().path())
                .collect();
            names.sort();
            for p in names {
                files.push((
                    format!("{cmd}/{}", p.file_name().unwrap().to_string_lossy()),
                    std::fs::read(&p).map_err(err)?,
                ));
            }
        }
        outputs.push(files);
    }
    let same = outputs[0] == outputs[1];
    Ok((
        same,
        format!("{} output files compared byte for byte", outputs[0].len()),
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 10] = [
        ("closed-form reduced dynamics", criterion_1),
        ("projection/trajectory equivalence", criterion_2),
        ("reconstruction", criterion_3),
        ("two-stage isomorphism", criterion_4),
        ("connection laws", criterion_5),
        ("momentum", criterion_6),
        ("symplecticity", criterion_7),
        ("variational principle", criterion_8),
        ("morphism checker", criterion_9),
        ("determinism", criterion_10),
    ];
    let begin = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {}: {name}: {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "acceptance: {} of 10 passed in {:.1}s",
        10 - failed,
        begin.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
