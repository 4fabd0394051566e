//! Run configuration read from JSON.

use crate::CliError;
use dlps_core::catalog::{free_particle, harmonic_oscillator, quadratic_dms};
use dlps_core::example_se2::{make_full_system, PotentialFamily, TwoBodyConfig};
use dlps_core::smooth::NewtonConfig;
use dlps_core::{DlpsSystem, SmoothMap};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const SYSTEMS: [&str; 4] = [
    "se2-two-body",
    "free-particle",
    "harmonic-oscillator",
    "dms-custom",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero,
    Linear { a: f64 },
    Quadratic { c: f64 },
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig::Linear { a: 0.5 }
    }
}

impl From<PotentialConfig> for PotentialFamily {
    fn from(p: PotentialConfig) -> Self {
        match p {
            PotentialConfig::Zero => PotentialFamily::Zero,
            PotentialConfig::Linear { a } => PotentialFamily::Linear { a },
            PotentialConfig::Quadratic { c } => PotentialFamily::Quadratic { c },
        }
    }
}

/// Overrides of the default Newton settings; absent fields keep the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backtracking: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    /// `(ε0, m1)` flattened; empty selects the system's default start.
    #[serde(default)]
    pub initial: Vec<f64>,
    #[serde(default)]
    pub newton: NewtonOverrides,
    #[serde(default)]
    pub seed: u64,
    /// Angular frequency of `harmonic-oscillator`.
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Mass and stiffness matrices of `dms-custom`, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<Vec<Vec<f64>>>,
    /// Adds `p |q0|^2` to the source Lagrangian of the morphism checks.
    #[serde(default)]
    pub perturb_lagrangian: f64,
}

fn default_h() -> f64 {
    0.1
}

fn default_steps() -> usize {
    50
}

fn default_omega() -> f64 {
    1.0
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Validation(format!(
            "{what} must be a nonempty square matrix"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !SYSTEMS.contains(&self.system.as_str()) {
            return Err(CliError::Validation(format!(
                "unknown system {:?}; registered systems: {}",
                self.system,
                SYSTEMS.join(", ")
            )));
        }
        if self.h == 0.0 || !self.h.is_finite() {
            return Err(CliError::Validation("h must be finite and nonzero".into()));
        }
        if self.system == "dms-custom" && (self.mass.is_none() || self.stiffness.is_none()) {
            return Err(CliError::Validation(
                "dms-custom needs mass and stiffness".into(),
            ));
        }
        let n = self.initial_pair()?.0.len();
        if self.initial.is_empty() && self.system == "dms-custom" {
            return Err(CliError::Validation(
                "dms-custom needs an initial vector".into(),
            ));
        }
        if let Some(m) = &self.mass {
            if matrix(m, "mass")?.nrows() != n {
                return Err(CliError::Validation(
                    "mass matrix does not match the initial vector".into(),
                ));
            }
        }
        self.newton().validate()?;
        Ok(())
    }

    pub fn is_two_body(&self) -> bool {
        self.system == "se2-two-body"
    }

    pub fn newton(&self) -> NewtonConfig {
        let mut cfg = NewtonConfig::default();
        if let Some(t) = self.newton.residual_tol {
            cfg.residual_tol = t;
        }
        if let Some(m) = self.newton.max_iters {
            cfg.max_iters = m;
        }
        if let Some(b) = self.newton.backtracking {
            cfg.backtracking = b;
        }
        cfg
    }

    pub fn two_body(&self) -> Result<TwoBodyConfig<f64>, CliError> {
        Ok(TwoBodyConfig::with_family(self.h, self.potential.into())?)
    }

    /// `(ε0, m1)` from `initial`, or the default start of the system.
    pub fn initial_pair(&self) -> Result<(DVector<f64>, DVector<f64>), CliError> {
        let v = if !self.initial.is_empty() {
            self.initial.clone()
        } else {
            match self.system.as_str() {
                "se2-two-body" => vec![1.0, 0.0, -1.0, 0.0, 1.02, 0.1, -0.98, -0.08],
                "free-particle" => vec![0.0, 1.0],
                "harmonic-oscillator" => vec![1.0, 0.99],
                _ => vec![],
            }
        };
        if v.len() % 2 != 0 || (self.is_two_body() && v.len() != 8) {
            return Err(CliError::Validation(format!(
                "initial vector has length {}; expected (q0, q1) with q in R^{}",
                v.len(),
                if self.is_two_body() { 4 } else { v.len() / 2 }
            )));
        }
        let n = v.len() / 2;
        Ok((
            DVector::from_column_slice(&v[..n]),
            DVector::from_column_slice(&v[n..]),
        ))
    }

    /// The configured system. All registered systems are discrete mechanical
    /// systems on `R^n`.
    pub fn build_system(&self) -> Result<DlpsSystem, CliError> {
        let n = self.initial_pair()?.0.len();
        Ok(match self.system.as_str() {
            "se2-two-body" => make_full_system(&self.two_body()?)?,
            "free-particle" => free_particle(n, self.h)?,
            "harmonic-oscillator" => harmonic_oscillator(n, self.h, self.omega)?,
            _ => {
                let m = matrix(self.mass.as_deref().unwrap_or_default(), "mass")?;
                let k = matrix(self.stiffness.as_deref().unwrap_or_default(), "stiffness")?;
                quadratic_dms(m, k, self.h)?
            }
        })
    }

    /// The configured system with `perturb_lagrangian * |q0|^2` added to `L`.
    pub fn build_perturbed_system(&self) -> Result<DlpsSystem, CliError> {
        let sys = self.build_system()?;
        let p = self.perturb_lagrangian;
        if p == 0.0 {
            return Ok(sys);
        }
        let n = sys.eps_dim();
        let (l1, l2) = (sys.lagrangian().clone(), sys.lagrangian().clone());
        let lag = SmoothMap::scalar(2 * n, move |x| {
            Ok(l1.eval_scalar(x)? + p * x.rows(0, n).norm_squared())
        })
        .with_gradient(move |x| {
            let mut g = l2.gradient(x)?;
            let mut head = g.rows_mut(0, n);
            head += x.rows(0, n) * (2.0 * p);
            Ok(g)
        });
        let sampler = sys.sampler().cloned();
        Ok(DlpsSystem::from_dms(n, lag)?.with_sampler_arc(sampler))
    }
}
