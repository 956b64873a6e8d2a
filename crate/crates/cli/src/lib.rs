//! Command implementations behind the `ptopt` binary.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ptopt_core::design::volume_value;
use ptopt_core::driver::{self, Mode, Problem};

pub use config::RunConfigFile;

/// Failure classes mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Check(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ptopt_core::Error> for CliError {
    fn from(e: ptopt_core::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// Loads the config file and applies command-line overrides.
    pub fn resolve(&self) -> Result<RunConfigFile, CliError> {
        let mut cfg = RunConfigFile::load(self.config.as_deref())?;
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate().map_err(|(_, msg)| CliError::Config(msg))?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn load_design(path: &Path, problem: &Problem) -> Result<Vec<f64>, CliError> {
    let chi = output::read_field_csv(path)?;
    if chi.len() != problem.n_elements() {
        return Err(CliError::Config(format!(
            "{}: expected {} values, found {}",
            path.display(),
            problem.n_elements(),
            chi.len()
        )));
    }
    Ok(chi)
}

/// Summary of an optimisation run.
#[derive(Debug, Clone)]
pub struct OptimizeSummary {
    pub iterations: usize,
    pub final_true_objective: f64,
    pub final_volume: f64,
    pub output_dir: PathBuf,
}

/// Runs the optimiser and writes the design, history and metadata.
pub fn optimize(overrides: &Overrides, vtk: bool) -> Result<OptimizeSummary, CliError> {
    let cfg = overrides.resolve()?;
    let run = cfg.optimization();
    let report = driver::optimize(&run)?;
    let problem = Problem::new(run.problem.clone())?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;

    let (nx, ny) = (cfg.nx, cfg.ny);
    output::write_field_csv(&dir.join("density.csv"), &report.final_phys, nx)?;
    output::write_field_csv(&dir.join("design.csv"), &report.final_chi, nx)?;
    output::write_pgm(&dir.join("density.pgm"), &report.final_phys, nx, ny)?;
    if vtk {
        output::write_vtk(&dir.join("density.vtk"), &report.final_phys, nx, ny, problem.mesh.h)?;
    }
    output::write_history(&dir.join("history.csv"), &report.history)?;

    let volume = volume_value(&report.final_phys, &problem.mesh);
    let clamped = report.history.iter().filter(|h| h.clamped).count();
    let meta = json!({
        "config": cfg,
        "workers": report.workers,
        "iterations": report.history.len(),
        "final_true_objective": report.final_true_objective,
        "final_volume": volume,
        "updated_volume": report.updated_volume,
        "clamped_iterations": clamped,
        "objective_scale": run.objective_scale,
        "mma": run.mma,
        "mma_constraint": "exact volume in dual bisection",
        "total_seconds": report.total_seconds,
        "density_layout": "ny rows of nx values, bottom row first",
    });
    output::write_json(&dir.join("metadata.json"), &meta)?;

    Ok(OptimizeSummary {
        iterations: report.history.len(),
        final_true_objective: report.final_true_objective,
        final_volume: volume,
        output_dir: dir.clone(),
    })
}

/// Gradient check settings.
#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Scales the objective value seen by the adjoint source.
    pub source_perturbation: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            nx: None,
            ny: None,
            seed: 0,
            step: 1e-6,
            tolerance: 1e-4,
            source_perturbation: 0.0,
        }
    }
}

/// Adjoint against central differences on a seeded random design.
/// Returns the report, or `CliError::Check` when above tolerance.
pub fn gradcheck(overrides: &Overrides, opts: &GradcheckOptions) -> Result<driver::GradcheckReport, CliError> {
    let mut cfg = overrides.resolve()?;
    if let Some(nx) = opts.nx {
        cfg.nx = nx;
    }
    if let Some(ny) = opts.ny {
        cfg.ny = ny;
    }
    let mut problem_cfg = cfg.problem();
    if opts.nx.is_some() && overrides.config.is_none() {
        problem_cfg.r_fil = 3.0 * cfg.side / cfg.nx as f64;
    }
    let problem = Problem::new(problem_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let chi: Vec<f64> = (0..problem.n_elements()).map(|_| rng.gen_range(0.05..0.95)).collect();
    let report = driver::gradcheck(&problem, &chi, opts.step, opts.source_perturbation)?;
    if let Some(dir) = &overrides.out {
        create_dir(dir)?;
        output::write_json(
            &dir.join("gradcheck.json"),
            &json!({
                "seed": opts.seed,
                "step": opts.step,
                "tolerance": opts.tolerance,
                "theta": report.theta,
                "max_error": report.max_error,
                "l2_error": report.l2_error,
                "adjoint": report.adjoint,
                "finite_difference": report.finite_difference,
            }),
        )?;
    }
    if !(report.max_error <= opts.tolerance) {
        return Err(CliError::Check(format!(
            "max relative component error {:.3e} exceeds {:.1e}",
            report.max_error, opts.tolerance
        )));
    }
    Ok(report)
}

/// Benchmark settings.
#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub n_tau: Vec<usize>,
    pub k: Vec<usize>,
    /// Raw design CSV; when absent a sequential run produces one.
    pub design: Option<PathBuf>,
    /// Iterations of the design-producing sequential run.
    pub design_iterations: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            n_tau: vec![5, 10, 20, 30],
            k: (1..=8).collect(),
            design: None,
            design_iterations: 30,
        }
    }
}

/// Parareal accuracy and timing table for a fixed design.
pub fn benchmark(overrides: &Overrides, opts: &BenchmarkOptions) -> Result<Vec<driver::BenchmarkRow>, CliError> {
    let cfg = overrides.resolve()?;
    for &n in &opts.n_tau {
        if n == 0 || cfg.n_t % n != 0 {
            return Err(CliError::Config(format!("N_tau = {n} does not divide N_t = {}", cfg.n_t)));
        }
    }
    let problem = Problem::new(cfg.problem())?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let chi = match &opts.design {
        Some(path) => load_design(path, &problem)?,
        None => {
            let mut run = cfg.optimization();
            run.mode = Mode::Sequential;
            run.i_max = opts.design_iterations.max(1);
            run.workers = Some(1);
            let report = driver::optimize(&run)?;
            output::write_field_csv(&dir.join("design.csv"), &report.final_chi, cfg.nx)?;
            report.final_chi
        }
    };
    let rows = driver::preliminary_benchmark(&problem, &chi, &opts.n_tau, &opts.k)?;
    output::write_benchmark(&dir.join("benchmark.csv"), &rows)?;
    Ok(rows)
}

/// One sequential forward solve; writes per-step temperature statistics.
pub fn simulate(overrides: &Overrides, design: Option<&Path>) -> Result<f64, CliError> {
    let cfg = overrides.resolve()?;
    let problem = Problem::new(cfg.problem())?;
    let chi = match design {
        Some(p) => load_design(p, &problem)?,
        None => problem.uniform_design(cfg.a_max),
    };
    let (traj, theta) = problem.simulate(&chi)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let mut s = String::from("step,time,t_max,t_mean\n");
    for n in 0..traj.len() {
        let t = traj.get(n)?;
        let max = t.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mean = t.iter().sum::<f64>() / t.len().max(1) as f64;
        s.push_str(&format!("{n},{:.16e},{max:.16e},{mean:.16e}\n", problem.grid.time(n)));
    }
    std::fs::write(dir.join("simulate.csv"), s).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(theta)
}
