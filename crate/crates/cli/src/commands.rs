//! The subcommands. Each one computes a [`Report`] through the library and
//! writes its files into the output directory.

use crate::config::RunConfig;
use crate::output::{write_json, write_trajectory_csv};
use crate::CliError;
use dlps_core::diagnostics::{momentum_evolution_check, symplectic_check};
use dlps_core::dlps::{
    action_derivative_fd, build_fixed_endpoint_variation, max_del_residual, simulate,
};
use dlps_core::example_se2::{
    make_reduced_model, make_staged_setup, make_t2_connection, make_t2_connection_flat, se2_action,
    u1_rotation_action,
};
use dlps_core::lie::{translation_action, LieGroup, Se2, Translations2};
use dlps_core::reduction::{
    check_morphism, project_path, reconstruct_path, reduce, translation_map, MorphismReport,
    ReducedModel,
};
use dlps_core::smooth::SmoothMap;
use dlps_core::{DiscretePath, DlpsSystem, Pair, Trajectory};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::Path;

/// Command-line options shared by all subcommands.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Options {
    /// Replaces every declared check tolerance.
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    CheckFailed,
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub config: RunConfig,
    pub newton: Value,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub checks: Vec<CheckResult>,
    #[serde(flatten)]
    pub values: BTreeMap<String, Value>,
}

impl Report {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        let n = cfg.newton();
        let mut config = cfg.clone();
        if let Ok((e0, m1)) = cfg.initial_pair() {
            config.initial = e0.iter().chain(m1.iter()).copied().collect();
        }
        Report {
            command: command.into(),
            config,
            newton: json!({
                "residual_tol": n.residual_tol,
                "max_iters": n.max_iters,
                "backtracking": n.backtracking,
                "max_halvings": n.max_halvings,
            }),
            status: Status::Ok,
            error: None,
            checks: Vec::new(),
            values: BTreeMap::new(),
        }
    }

    fn check(&mut self, opts: &Options, name: &str, value: f64, tol: f64) {
        let tol = opts.tol.unwrap_or(tol);
        let pass = value <= tol;
        if !pass {
            log::warn!("check {name} failed: {value:e} > {tol:e}");
            if self.status == Status::Ok {
                self.status = Status::CheckFailed;
            }
        }
        self.checks.push(CheckResult {
            name: name.into(),
            value,
            tol,
            pass,
        });
    }

    fn value(&mut self, key: &str, v: impl Serialize) {
        self.values.insert(
            key.into(),
            serde_json::to_value(v).expect("report values serialize"),
        );
    }

    fn morphism(&mut self, opts: &Options, prefix: &str, rep: &MorphismReport, tol: f64) {
        self.check(
            opts,
            &format!("{prefix}.surjective_rank_deficit"),
            rep.submersion_rank_deficit as f64,
            0.0,
        );
        self.check(
            opts,
            &format!("{prefix}.onto_rank_deficit"),
            rep.onto_rank_deficit as f64,
            0.0,
        );
        self.check(opts, &format!("{prefix}.d1_base"), rep.d1_base_max, tol);
        self.check(
            opts,
            &format!("{prefix}.base_compatibility"),
            rep.base_compat_max,
            tol,
        );
        self.check(
            opts,
            &format!("{prefix}.lagrangian"),
            rep.lagrangian_max,
            tol,
        );
        self.check(opts, &format!("{prefix}.ivcm"), rep.ivcm_max, tol);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// 0 ok, 1 failed check, 2 solver failure.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Ok => 0,
            Status::CheckFailed => 1,
            Status::SolverFailure => 2,
        }
    }
}

fn rng(cfg: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}

fn require_two_body(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    if cfg.is_two_body() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{command} is only available for se2-two-body"
        )))
    }
}

fn residuals(t: &Trajectory) -> Vec<f64> {
    t.residuals.clone()
}

/// Simulates the configured system. A solver failure keeps the partial
/// trajectory and marks the report.
pub fn run_trajectory(cfg: &RunConfig, sys: &DlpsSystem, report: &mut Report) -> Trajectory {
    let (e0, m1) = cfg.initial_pair().expect("validated config");
    match simulate(sys, &e0, &m1, cfg.n_steps, &cfg.newton()) {
        Ok(t) => t,
        Err(f) => {
            report.status = Status::SolverFailure;
            report.error = Some(f.to_string());
            report.value("failed_step", f.step_index);
            *f.partial
        }
    }
}

fn finish_if_failed(report: &Report) -> bool {
    report.status == Status::SolverFailure
}

pub fn cmd_simulate(cfg: &RunConfig, opts: &Options, out: &Path) -> Result<Report, CliError> {
    let sys = cfg.build_system()?;
    let mut report = Report::new("simulate", cfg);
    let traj = run_trajectory(cfg, &sys, &mut report);
    write_trajectory_csv(&out.join("trajectory.csv"), &traj.path, &residuals(&traj))?;
    let max_res = traj.residuals.iter().copied().fold(0.0, f64::max);
    report.value("steps_completed", traj.steps.len());
    report.value("max_residual_norm", max_res);
    report.value(
        "max_newton_iterations",
        traj.steps.iter().map(|s| s.iterations).max().unwrap_or(0),
    );
    if !finish_if_failed(&report) {
        report.check(opts, "max_residual_norm", max_res, 1e-10);
    }
    Ok(report)
}

pub fn cmd_reduce(cfg: &RunConfig, opts: &Options, out: &Path) -> Result<Report, CliError> {
    require_two_body(cfg, "reduce")?;
    let mut r = rng(cfg);
    let full = cfg.build_system()?;
    let red = reduce(&full, &make_reduced_model())?;
    let mut report = Report::new("reduce", cfg);
    let model_rep = red.model.check(
        &(0..50)
            .map(|_| full.sample_pair(&mut r))
            .collect::<Result<Vec<_>, _>>()?,
        &mut r,
    )?;
    report.check(opts, "model.invariance", model_rep.invariance_max, 1e-10);
    report.check(opts, "model.section", model_rep.section_max, 1e-10);
    report.check(
        opts,
        "reduced_lagrangian",
        red.lagrangian_violation(50, &mut r)?,
        1e-10,
    );
    report.check(
        opts,
        "reduced_ivcm_representative",
        red.representative_violation(50, &mut r)?,
        1e-9,
    );

    let traj = run_trajectory(cfg, &full, &mut report);
    if finish_if_failed(&report) {
        return Ok(report);
    }
    let projected = project_path(&red.model, &traj.path)?;
    let y0 = &projected.pairs[0];
    let reduced = match simulate(&red.system, &y0.eps, &y0.m, cfg.n_steps, &cfg.newton()) {
        Ok(t) => t,
        Err(f) => {
            report.status = Status::SolverFailure;
            report.error = Some(format!("reduced system: {f}"));
            write_trajectory_csv(
                &out.join("reduced_trajectory.csv"),
                &f.partial.path,
                &residuals(&f.partial),
            )?;
            return Ok(report);
        }
    };
    write_trajectory_csv(
        &out.join("reduced_trajectory.csv"),
        &reduced.path,
        &residuals(&reduced),
    )?;
    report.check(
        opts,
        "projected_residual_max",
        max_del_residual(&red.system, &projected)?,
        1e-8,
    );
    report.check(
        opts,
        "reduced_vs_projected_max",
        reduced.path.max_distance(&projected),
        1e-8,
    );
    let mom = momentum_evolution_check(&red.system, &u1_rotation_action(2), &reduced.path, 1e-8)?;
    report.check(opts, "momentum_evolution_max", mom.evolution_max, 1e-8);
    report.value("momentum_series", &mom.series);
    report.value("pinv_fallbacks", red.pinv_fallbacks());
    Ok(report)
}

pub fn cmd_reconstruct(cfg: &RunConfig, opts: &Options, out: &Path) -> Result<Report, CliError> {
    require_two_body(cfg, "reconstruct")?;
    let full = cfg.build_system()?;
    let model = make_reduced_model();
    let mut report = Report::new("reconstruct", cfg);
    let traj = run_trajectory(cfg, &full, &mut report);
    if finish_if_failed(&report) {
        return Ok(report);
    }
    let projected = project_path(&model, &traj.path)?;
    let first = &traj.path.pairs[0];
    let back = reconstruct_path(&model, &projected, &first.eps, &first.m)?;
    let res: Vec<f64> = std::iter::once(Ok(0.0))
        .chain(
            back.pairs
                .windows(2)
                .map(|w| dlps_core::dlps::del_residual(&full, &w[0], &w[1]).map(|r| r.amax())),
        )
        .collect::<Result<_, _>>()?;
    write_trajectory_csv(&out.join("reconstructed_trajectory.csv"), &back, &res)?;
    report.check(opts, "roundtrip_max", back.max_distance(&traj.path), 1e-8);
    report.check(
        opts,
        "reconstructed_residual_max",
        res.iter().copied().fold(0.0, f64::max),
        1e-8,
    );
    report.value("roundtrip_max", back.max_distance(&traj.path));
    Ok(report)
}

pub fn cmd_stages(cfg: &RunConfig, opts: &Options, _out: &Path) -> Result<Report, CliError> {
    require_two_body(cfg, "stages")?;
    let mut r = rng(cfg);
    let setup = make_staged_setup(&cfg.two_body()?, &mut r)?;
    let mut report = Report::new("stages", cfg);
    report.check(
        opts,
        "normality_violation",
        setup.normality_violation,
        1e-10,
    );
    let traj = run_trajectory(cfg, &setup.full, &mut report);
    if finish_if_failed(&report) {
        return Ok(report);
    }
    let rep = setup.stages.compare(&traj.path)?;
    report.check(opts, "stage_comparison_max", rep.stage_comparison_max, 1e-8);
    report.check(opts, "lagrangian_gap_max", rep.lagrangian_gap_max, 1e-8);
    report.check(opts, "residual_two_stage_max", rep.residual_gh_max, 1e-8);
    report.check(opts, "residual_one_stage_max", rep.residual_g_max, 1e-8);
    report.value("stage_comparison_max", rep.stage_comparison_max);
    report.value("pairs", rep.pairs);
    Ok(report)
}

fn variational_max(
    sys: &DlpsSystem,
    path: &DiscretePath,
    n: usize,
    r: &mut ChaCha8Rng,
) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    if path.len() < 2 {
        return Ok(0.0);
    }
    for _ in 0..n {
        let tilde: Vec<DVector<f64>> = (0..path.len() - 1)
            .map(|_| {
                DVector::from_fn(sys.eps_dim(), |_, _| {
                    dlps_core::scalar::uniform::<f64>(r, -1.0, 1.0)
                })
            })
            .collect();
        let var = build_fixed_endpoint_variation(sys, path, &tilde)?;
        worst = worst.max(action_derivative_fd(sys, path, &var)?.abs());
    }
    Ok(worst)
}

pub fn cmd_check(cfg: &RunConfig, opts: &Options, _out: &Path) -> Result<Report, CliError> {
    let mut r = rng(cfg);
    let sys = cfg.build_system()?;
    let source = cfg.build_perturbed_system()?;
    let mut report = Report::new("check", cfg);
    let samples: Vec<(Pair, Pair)> = (0..50)
        .map(|_| sys.sample_consecutive(&mut r))
        .collect::<Result<_, _>>()?;

    if cfg.is_two_body() {
        let closed = make_t2_connection();
        let flat = make_t2_connection_flat(1.0, 1.0)?;
        for (name, conn) in [("closed_form", &closed), ("flat_metric", &flat)] {
            let eq = conn.check_equivariance(200, &mut r);
            report.check(
                opts,
                &format!("connection.{name}.equivariance"),
                eq.max_violation,
                1e-10,
            );
            let (norm, _) =
                conn.conjugation_violation(&se2_action(), Translations2::into_se2, 200, &mut r)?;
            report.check(opts, &format!("connection.{name}.normality"), norm, 1e-10);
        }
        let mut agree: f64 = 0.0;
        for _ in 0..200 {
            let (q0, q1) = closed.sample_pair(&mut r)?;
            agree = agree.max((closed.ad(&q0, &q1)?.coords - flat.ad(&q0, &q1)?.coords).amax());
        }
        report.check(opts, "connection.agreement", agree, 1e-10);

        let red = reduce(&sys, &make_reduced_model())?;
        let ups = check_morphism(&red.model.upsilon, &source, &red.system, &samples)?;
        report.morphism(opts, "morphism.upsilon", &ups, 1e-9);
        let model = ReducedModel {
            e_action: se2_action(),
            m_action: se2_action(),
            ..red.model.clone()
        };
        let mut worst: Option<MorphismReport> = None;
        for _ in 0..5 {
            let g = Se2.sample(&mut r, 2.0);
            let t = check_morphism(&translation_map(&model, &g), &source, &sys, &samples)?;
            worst = Some(worst.map_or(t.clone(), |w| w.merge(&t)));
        }
        let worst = worst.expect("five translations were checked");
        report.morphism(opts, "morphism.translations", &worst, 1e-9);
    } else {
        let id = SmoothMap::identity(2 * sys.eps_dim());
        let rep = check_morphism(&id, &source, &sys, &samples)?;
        report.morphism(opts, "morphism.identity", &rep, 1e-9);
    }

    let traj = run_trajectory(cfg, &sys, &mut report);
    if finish_if_failed(&report) {
        return Ok(report);
    }
    let symmetry = match cfg.system.as_str() {
        "se2-two-body" => Some(se2_action()),
        "free-particle" => Some(translation_action(sys.eps_dim())),
        _ => None,
    };
    if let Some(action) = symmetry {
        let mom = momentum_evolution_check(&sys, &action, &traj.path, 1e-10)?;
        report.check(opts, "momentum_drift_max", mom.drift_max, 1e-10);
        report.value("momentum_series", &mom.series);
    }
    let sym = symplectic_check(&sys, &traj.path, &cfg.newton())?;
    report.check(opts, "symplectic_max", sym.max_violation, 1e-6);
    report.value("symplectic_per_step", &sym.per_step);
    report.check(
        opts,
        "variational_max",
        variational_max(&sys, &traj.path, 20, &mut r)?,
        1e-6,
    );
    Ok(report)
}

/// Runs `command` and writes `<command>.json` next to its other outputs.
pub fn run(command: &str, cfg: &RunConfig, opts: &Options, out: &Path) -> Result<Report, CliError> {
    let report = match command {
        "simulate" => cmd_simulate(cfg, opts, out)?,
        "reduce" => cmd_reduce(cfg, opts, out)?,
        "reconstruct" => cmd_reconstruct(cfg, opts, out)?,
        "stages" => cmd_stages(cfg, opts, out)?,
        "check" => cmd_check(cfg, opts, out)?,
        other => return Err(CliError::Validation(format!("unknown command {other}"))),
    };
    write_json(&out.join(format!("{command}.json")), &report)?;
    Ok(report)
}
