//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ptopt_core::design::{MaterialModel, ProjectionParams};
use ptopt_core::driver::{Mode, OptimizationConfig, ProblemConfig, TrueObjectivePolicy};
use ptopt_core::fem::LoadProfile;

use crate::CliError;

/// On-disk configuration. Every key is optional and defaults to the
/// reference test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "L")]
    pub side: f64,
    #[serde(rename = "t_T")]
    pub t_final: f64,
    #[serde(rename = "N_t")]
    pub n_t: usize,
    #[serde(rename = "N_tau")]
    pub n_tau: usize,
    pub p: u32,
    pub k0: f64,
    pub kmin: f64,
    pub c0: f64,
    pub cmin: f64,
    pub pk: f64,
    pub pc: f64,
    pub beta: f64,
    pub eta: f64,
    pub r_fil: f64,
    pub a_max: f64,
    pub i_max: usize,
    pub mode: Mode,
    /// Defaults to `N_tau`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
    pub true_objective_policy: TrueObjectivePolicy,
    /// Dirichlet segment `[a, b]` on the bottom edge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirichlet_span: Option<[f64; 2]>,
    pub load: LoadProfile,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        let problem = ProblemConfig::default();
        let run = OptimizationConfig::default();
        RunConfigFile {
            nx: problem.nx,
            ny: problem.ny,
            side: problem.side,
            t_final: problem.t_final,
            n_t: problem.n_fine,
            n_tau: problem.n_coarse,
            p: problem.p,
            k0: problem.material.k0,
            kmin: problem.material.kmin,
            c0: problem.material.c0,
            cmin: problem.material.cmin,
            pk: problem.material.pk,
            pc: problem.material.pc,
            beta: problem.projection.beta,
            eta: problem.projection.eta,
            r_fil: problem.r_fil,
            a_max: run.a_max,
            i_max: run.i_max,
            mode: run.mode,
            workers: None,
            output_dir: PathBuf::from("out"),
            true_objective_policy: run.true_objective,
            dirichlet_span: None,
            load: problem.load,
        }
    }
}

/// 1-based line of the first `key = ...` assignment in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl RunConfigFile {
    /// Reads and validates a config file; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfigFile =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()
            .map_err(|(key, msg)| match key_line(&text, key) {
                Some(line) => CliError::Config(format!("{}:{line}: {msg}", path.display())),
                None => CliError::Config(format!("{}: {msg}", path.display())),
            })?;
        Ok(cfg)
    }

    /// Checks value ranges; on failure returns the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("L", self.side),
            ("t_T", self.t_final),
            ("r_fil", self.r_fil),
            ("beta", self.beta),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err((key, format!("{key} must be positive, got {v}")));
            }
        }
        let counts = [("nx", self.nx), ("ny", self.ny), ("N_t", self.n_t), ("N_tau", self.n_tau), ("i_max", self.i_max)];
        for (key, v) in counts {
            if v == 0 {
                return Err((key, format!("{key} must be at least 1")));
            }
        }
        if self.n_t % self.n_tau != 0 {
            return Err(("N_tau", format!("N_tau = {} does not divide N_t = {}", self.n_tau, self.n_t)));
        }
        if self.p < 2 || self.p % 2 != 0 {
            return Err(("p", format!("p must be even and at least 2, got {}", self.p)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(("eta", format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.a_max > 0.0 && self.a_max < 1.0) {
            return Err(("a_max", format!("a_max must lie in (0, 1), got {}", self.a_max)));
        }
        if self.workers == Some(0) {
            return Err(("workers", "workers must be at least 1".into()));
        }
        if let Err(e) = self.material().validate() {
            return Err(("k0", e.to_string()));
        }
        Ok(())
    }

    pub fn material(&self) -> MaterialModel {
        MaterialModel {
            k0: self.k0,
            kmin: self.kmin,
            c0: self.c0,
            cmin: self.cmin,
            pk: self.pk,
            pc: self.pc,
        }
    }

    pub fn problem(&self) -> ProblemConfig {
        ProblemConfig {
            nx: self.nx,
            ny: self.ny,
            side: self.side,
            t_final: self.t_final,
            n_fine: self.n_t,
            n_coarse: self.n_tau,
            p: self.p,
            material: self.material(),
            projection: ProjectionParams {
                beta: self.beta,
                eta: self.eta,
            },
            r_fil: self.r_fil,
            dirichlet_span: self.dirichlet_span.map(|[a, b]| (a, b)),
            load: self.load,
        }
    }

    pub fn optimization(&self) -> OptimizationConfig {
        OptimizationConfig {
            problem: self.problem(),
            mode: self.mode,
            i_max: self.i_max,
            a_max: self.a_max,
            workers: Some(self.workers.unwrap_or(self.n_tau)),
            true_objective: self.true_objective_policy,
            ..OptimizationConfig::default()
        }
    }
}
