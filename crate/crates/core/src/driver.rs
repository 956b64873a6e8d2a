//! Optimisation loop, true-objective evaluation, gradient checks and the
//! error/speedup benchmark.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::design::{
    chain_rule_backward, volume_fraction, volume_value, DesignField, FilterOperator, MaterialModel, Materials,
    ProjectionParams,
};
use crate::error::{Error, Result};
use crate::fem::{HeatLoad, LoadProfile, Mesh, SystemMatrices, TimeGrid};
use crate::mma::{mma_update, MmaConfig, MmaInput, MmaState};
use crate::parareal::{self, CoarseMode, Direction, Guess, PararealConfig, WorkerPool};
use crate::trajectory::{
    convert_modified, AdjointContext, AdjointProblem, AdjointState, ObjectiveMode, ObjectiveParams, PrimalProblem,
    PrimalState, Trajectory,
};

/// Mesh, time, material, filter and objective parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub nx: usize,
    pub ny: usize,
    /// Side length `L`; also the out-of-plane depth.
    pub side: f64,
    pub t_final: f64,
    pub n_fine: usize,
    pub n_coarse: usize,
    pub p: u32,
    pub material: MaterialModel,
    pub projection: ProjectionParams,
    pub r_fil: f64,
    /// Dirichlet segment on the bottom edge; `None` picks the node-aligned
    /// cover of the centred segment of length `L / 10`.
    pub dirichlet_span: Option<(f64, f64)>,
    pub load: LoadProfile,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            nx: 100,
            ny: 100,
            side: 1.0,
            t_final: 1.0,
            n_fine: 480,
            n_coarse: 10,
            p: 20,
            material: MaterialModel::default(),
            projection: ProjectionParams { beta: 32.0, eta: 0.5 },
            r_fil: 0.03,
            dirichlet_span: None,
            load: LoadProfile::DecayingOscillation,
        }
    }
}

/// Precomputed discretisation for one configuration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ProblemConfig,
    pub mesh: Mesh,
    pub filter: FilterOperator,
    pub projection: ProjectionParams,
    pub grid: TimeGrid,
    pub load: HeatLoad,
}

impl Problem {
    pub fn new(config: ProblemConfig) -> Result<Self> {
        let span = config
            .dirichlet_span
            .unwrap_or_else(|| Mesh::centered_span(config.nx, config.side, 0.1));
        let mesh = Mesh::new(config.nx, config.ny, config.side, Some(span))?;
        if !(config.r_fil > 0.0) {
            return Err(Error::config(format!("filter radius must be positive, got {}", config.r_fil)));
        }
        config.material.validate()?;
        ObjectiveParams::new(config.p, mesh.n_elements(), ObjectiveMode::Standard)?;
        let projection = ProjectionParams::new(config.projection.beta, config.projection.eta)?;
        let grid = TimeGrid::new(config.t_final, config.n_fine, config.n_coarse)?;
        let filter = FilterOperator::new(&mesh, config.r_fil);
        let load = HeatLoad::new(&mesh, config.load);
        Ok(Problem {
            config,
            mesh,
            filter,
            projection,
            grid,
            load,
        })
    }

    /// Same problem with a different coarse step count.
    pub fn with_coarse(&self, n_coarse: usize) -> Result<Self> {
        let mut p = self.clone();
        p.grid = self.grid.with_coarse(n_coarse)?;
        p.config.n_coarse = n_coarse;
        Ok(p)
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn objective(&self, mode: ObjectiveMode) -> ObjectiveParams {
        ObjectiveParams {
            p: self.config.p,
            n_elements: self.mesh.n_elements(),
            mode,
        }
    }

    pub fn design(&self, chi: Vec<f64>) -> Result<DesignField> {
        if chi.len() != self.n_elements() {
            return Err(Error::config(format!(
                "design has {} entries, mesh has {} elements",
                chi.len(),
                self.n_elements()
            )));
        }
        Ok(DesignField::from_raw(chi, &self.filter, &self.projection))
    }

    pub fn assemble(&self, design: &DesignField) -> Result<(SystemMatrices, Materials)> {
        let mats = self.config.material.simp(&design.chi_phys);
        let sys = SystemMatrices::assemble(&self.mesh, &mats.capacity, &mats.conductivity)?;
        Ok((sys, mats))
    }

    /// Uniform raw design whose physical density equals `a_max` everywhere.
    pub fn uniform_design(&self, a_max: f64) -> Vec<f64> {
        // The filter preserves constants, so only the projection needs
        // inverting.
        vec![self.projection.inverse(a_max); self.n_elements()]
    }

    /// Full sequential primal sweep; returns `Theta`.
    pub fn true_objective(&self, chi: &[f64]) -> Result<f64> {
        let design = self.design(chi.to_vec())?;
        let (sys, _) = self.assemble(&design)?;
        PrimalProblem::new(&sys, &self.load, self.grid, self.objective(ObjectiveMode::Standard)).objective_only()
    }

    /// Sequential primal sweep; returns the trajectory and `Theta`.
    pub fn simulate(&self, chi: &[f64]) -> Result<(Trajectory, f64)> {
        let design = self.design(chi.to_vec())?;
        let (sys, _) = self.assemble(&design)?;
        let (traj, states) =
            PrimalProblem::new(&sys, &self.load, self.grid, self.objective(ObjectiveMode::Standard)).sequential()?;
        let theta = states.last().map_or(0.0, |s| s.theta);
        Ok((traj, theta))
    }

    /// Sequential objective and gradient w.r.t. the raw design.
    /// `source_perturbation` scales the objective value fed to the adjoint
    /// source by `1 + source_perturbation` (a mutation hook for checks).
    pub fn sequential_gradient(&self, chi: &[f64], source_perturbation: f64) -> Result<(f64, Vec<f64>)> {
        let design = self.design(chi.to_vec())?;
        let (sys, mats) = self.assemble(&design)?;
        let objective = self.objective(ObjectiveMode::Standard);
        let (traj, states) = PrimalProblem::new(&sys, &self.load, self.grid, objective).sequential()?;
        let theta = states.last().map_or(0.0, |s| s.theta);
        let ctx = AdjointContext::new(
            &self.mesh,
            traj,
            theta * (1.0 + source_perturbation),
            objective,
            mats.d_capacity,
            mats.d_conductivity,
        );
        let adj = AdjointProblem::new(&self.mesh, &sys, self.grid, &ctx).sequential()?;
        let grad = chain_rule_backward(&adj[0].g, &design, &self.filter, &self.projection);
        Ok((theta, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sequential,
    OneShot,
    Plt,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "oneshot" => Ok(Mode::OneShot),
            "plt" => Ok(Mode::Plt),
            other => Err(Error::config(format!(
                "unknown mode '{other}' (expected sequential, oneshot or plt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrueObjectivePolicy {
    Final,
    Every,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub problem: ProblemConfig,
    pub mode: Mode,
    pub i_max: usize,
    pub a_max: f64,
    /// Worker count; defaults to the coarse step count.
    pub workers: Option<usize>,
    pub true_objective: TrueObjectivePolicy,
    /// Coarse propagator used by one-shot mode.
    pub coarse_mode: CoarseMode,
    /// Objective the propagators track; defaults to modified for PLT and
    /// standard otherwise.
    pub objective_mode: Option<ObjectiveMode>,
    pub mma: MmaConfig,
    /// MMA sees `objective_scale * Theta / Theta_1`.
    pub objective_scale: f64,
    /// Keep every evaluated raw design in the report.
    pub record_designs: bool,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        OptimizationConfig {
            problem: ProblemConfig::default(),
            mode: Mode::OneShot,
            i_max: 300,
            a_max: 0.3,
            workers: None,
            true_objective: TrueObjectivePolicy::Final,
            coarse_mode: CoarseMode::Standard,
            objective_mode: None,
            mma: MmaConfig::default(),
            objective_scale: 100.0,
            record_designs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Objective estimate `Theta` of the design evaluated this iteration.
    pub theta_est: f64,
    pub theta_true: Option<f64>,
    pub volume: f64,
    pub t_primal_s: f64,
    pub t_adjoint_s: f64,
    pub t_mma_s: f64,
    /// Part of the primal and adjoint time spent in coarse sweeps.
    pub t_coarse_s: f64,
    /// The modified objective went negative and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub history: Vec<IterationRecord>,
    /// Last evaluated raw design and its physical densities.
    pub final_chi: Vec<f64>,
    pub final_phys: Vec<f64>,
    pub final_true_objective: f64,
    /// Raw design after the last MMA update and its volume fraction.
    pub updated_chi: Vec<f64>,
    pub updated_volume: f64,
    pub designs: Vec<Vec<f64>>,
    pub workers: usize,
    pub total_seconds: f64,
}

/// How a primal or adjoint solve is carried out.
enum Solve<S> {
    Sequential,
    Parareal(PararealConfig, Guess<S>),
    Direct(PararealConfig, Vec<S>),
}

struct PrimalResult {
    trajectory: Trajectory,
    states: Vec<PrimalState>,
    coarse_seconds: f64,
}

fn solve_primal(prob: &PrimalProblem<'_>, solve: Solve<PrimalState>, pool: &WorkerPool) -> Result<PrimalResult> {
    let anchor = PrimalState::zero(prob.sys.dim());
    let grid = &prob.grid;
    match solve {
        Solve::Sequential => {
            let (trajectory, states) = prob.sequential()?;
            Ok(PrimalResult {
                trajectory,
                states,
                coarse_seconds: 0.0,
            })
        }
        Solve::Parareal(cfg, guess) => {
            let t = Instant::now();
            let guess = match guess {
                Guess::CoarseSweep => Guess::Warm(parareal::coarse_sweep(prob, &anchor, cfg.direction)?),
                warm => warm,
            };
            let sweep = t.elapsed().as_secs_f64();
            let sol = parareal::run(prob, &anchor, guess, &cfg, pool)?;
            let trajectory = Trajectory::from_parareal(grid, &sol.states, &sol.records)?;
            Ok(PrimalResult {
                trajectory,
                states: sol.states,
                coarse_seconds: sweep + sol.diagnostics.iter().map(|d| d.coarse_seconds).sum::<f64>(),
            })
        }
        Solve::Direct(cfg, previous) => {
            let (states, records) = parareal::direct_update(prob, &previous, &anchor, &cfg, pool)?;
            let trajectory = Trajectory::from_parareal(grid, &states, &records)?;
            Ok(PrimalResult {
                trajectory,
                states,
                coarse_seconds: 0.0,
            })
        }
    }
}

fn solve_adjoint(
    prob: &AdjointProblem<'_>,
    solve: Solve<AdjointState>,
    pool: &WorkerPool,
) -> Result<(Vec<AdjointState>, f64)> {
    let anchor = AdjointState::zero(prob.sys.dim(), prob.mesh.n_elements());
    match solve {
        Solve::Sequential => Ok((prob.sequential()?, 0.0)),
        Solve::Parareal(cfg, guess) => {
            let t = Instant::now();
            let guess = match guess {
                Guess::CoarseSweep => Guess::Warm(parareal::coarse_sweep(prob, &anchor, cfg.direction)?),
                warm => warm,
            };
            let sweep = t.elapsed().as_secs_f64();
            let sol = parareal::run(prob, &anchor, guess, &cfg, pool)?;
            let coarse = sweep + sol.diagnostics.iter().map(|d| d.coarse_seconds).sum::<f64>();
            Ok((sol.states, coarse))
        }
        Solve::Direct(cfg, previous) => Ok((parareal::direct_update(prob, &previous, &anchor, &cfg, pool)?.0, 0.0)),
    }
}

/// `(Theta, dTheta/dchi_phys, clamped)` from the tracked scalar and its
/// gradient.
fn to_standard(objective: ObjectiveParams, theta_acc: f64, g: &[f64]) -> (f64, Vec<f64>, bool) {
    match objective.mode {
        ObjectiveMode::Standard => (theta_acc, g.to_vec(), false),
        ObjectiveMode::Modified => convert_modified(theta_acc, g, objective.p),
    }
}

/// Objective and gradient from one primal and one adjoint solve.
struct Evaluated {
    theta: f64,
    grad_phys: Vec<f64>,
    clamped: bool,
    primal: Vec<PrimalState>,
    adjoint: Vec<AdjointState>,
    t_primal: f64,
    t_adjoint: f64,
    t_coarse: f64,
}

fn evaluate(
    problem: &Problem,
    design: &DesignField,
    objective: ObjectiveParams,
    primal_solve: Solve<PrimalState>,
    adjoint_solve: impl FnOnce() -> Solve<AdjointState>,
    pool: &WorkerPool,
) -> Result<Evaluated> {
    let t0 = Instant::now();
    let (sys, mats) = problem.assemble(design)?;
    let primal_prob = PrimalProblem::new(&sys, &problem.load, problem.grid, objective);
    let primal = solve_primal(&primal_prob, primal_solve, pool)?;
    let theta_acc = primal.states.last().map_or(0.0, |s| s.theta);
    if !theta_acc.is_finite() {
        return Err(Error::numerical(format!("objective estimate is not finite ({theta_acc})")));
    }
    let t_primal = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let ctx = AdjointContext::new(
        &problem.mesh,
        primal.trajectory,
        theta_acc,
        objective,
        mats.d_capacity,
        mats.d_conductivity,
    );
    let adj_prob = AdjointProblem::new(&problem.mesh, &sys, problem.grid, &ctx);
    let (adjoint, adj_coarse) = solve_adjoint(&adj_prob, adjoint_solve(), pool)?;
    let t_adjoint = t1.elapsed().as_secs_f64();

    let (theta, grad_phys, clamped) = to_standard(objective, theta_acc, &adjoint[0].g);
    Ok(Evaluated {
        theta,
        grad_phys,
        clamped,
        primal: primal.states,
        adjoint,
        t_primal,
        t_adjoint,
        t_coarse: primal.coarse_seconds + adj_coarse,
    })
}

/// Runs the optimisation loop in the configured mode.
pub fn optimize(config: &OptimizationConfig) -> Result<RunReport> {
    if config.i_max == 0 {
        return Err(Error::config("i_max must be at least 1"));
    }
    if !(config.a_max > 0.0 && config.a_max < 1.0) {
        return Err(Error::config(format!("a_max must lie in (0, 1), got {}", config.a_max)));
    }
    let start = Instant::now();
    let problem = Problem::new(config.problem.clone())?;
    let workers = config.workers.unwrap_or(problem.grid.n_coarse);
    let pool = WorkerPool::new(workers)?;
    let objective = problem.objective(config.objective_mode.unwrap_or(match config.mode {
        Mode::Plt => ObjectiveMode::Modified,
        _ => ObjectiveMode::Standard,
    }));
    let coarse = match config.mode {
        Mode::Plt => CoarseMode::Zero,
        _ => config.coarse_mode,
    };
    let forward = PararealConfig {
        direction: Direction::Forward,
        coarse,
        iterations: 1,
        record: true,
    };
    let reverse = PararealConfig {
        direction: Direction::Reverse,
        record: false,
        ..forward
    };

    let mut chi = problem.uniform_design(config.a_max);
    let mut mma = MmaState::new(&chi, config.mma);
    let mut prev_primal: Vec<PrimalState> = Vec::new();
    let mut prev_adjoint: Vec<AdjointState> = Vec::new();
    let mut scale = None;
    let mut history = Vec::with_capacity(config.i_max);
    let mut designs = Vec::new();
    let mut last_design = None;

    for iter in 1..=config.i_max {
        let wrap = |e: Error| Error::Iteration {
            iteration: iter,
            source: Box::new(e),
        };
        let design = problem.design(chi.clone()).map_err(wrap)?;
        let sequential = iter == 1 || config.mode == Mode::Sequential;
        let (primal_solve, adjoint_solve): (Solve<PrimalState>, Box<dyn FnOnce() -> Solve<AdjointState>>) =
            if sequential {
                (Solve::Sequential, Box::new(|| Solve::Sequential))
            } else if config.mode == Mode::Plt {
                let pa = std::mem::take(&mut prev_adjoint);
                (
                    Solve::Direct(forward, std::mem::take(&mut prev_primal)),
                    Box::new(move || Solve::Direct(reverse, pa)),
                )
            } else {
                let pa = std::mem::take(&mut prev_adjoint);
                (
                    Solve::Parareal(forward, Guess::Warm(std::mem::take(&mut prev_primal))),
                    Box::new(move || Solve::Parareal(reverse, Guess::Warm(pa))),
                )
            };
        let ev = evaluate(&problem, &design, objective, primal_solve, adjoint_solve, &pool).map_err(wrap)?;

        let t2 = Instant::now();
        let s = *scale.get_or_insert(if ev.theta > 0.0 {
            config.objective_scale / ev.theta
        } else {
            1.0
        });
        let scaled: Vec<f64> = ev.grad_phys.iter().map(|g| s * g).collect();
        let df0 = chain_rule_backward(&scaled, &design, &problem.filter, &problem.projection);
        let (volume, dvol) = volume_fraction(&design, &problem.mesh, &problem.filter, &problem.projection);
        let exact = |x: &[f64]| {
            volume_value(&problem.projection.project(&problem.filter.apply(x)), &problem.mesh) - config.a_max
        };
        let next = mma_update(
            &chi,
            MmaInput {
                f0: s * ev.theta,
                df0: &df0,
                f1: volume - config.a_max,
                df1: &dvol,
            },
            &mut mma,
            Some(&exact),
        )
        .map_err(wrap)?;
        let t_mma = t2.elapsed().as_secs_f64();

        let theta_true = match config.true_objective {
            TrueObjectivePolicy::Every => Some(if sequential && objective.mode == ObjectiveMode::Standard {
                ev.theta
            } else {
                problem.true_objective(&chi).map_err(wrap)?
            }),
            TrueObjectivePolicy::Final => None,
        };
        history.push(IterationRecord {
            iter,
            theta_est: ev.theta,
            theta_true,
            volume,
            t_primal_s: ev.t_primal,
            t_adjoint_s: ev.t_adjoint,
            t_mma_s: t_mma,
            t_coarse_s: ev.t_coarse,
            clamped: ev.clamped,
        });
        if config.record_designs {
            designs.push(chi.clone());
        }
        prev_primal = ev.primal;
        prev_adjoint = ev.adjoint;
        last_design = Some(design);
        chi = next;
    }

    let design = last_design.expect("at least one iteration ran");
    let last = history.last().expect("at least one iteration ran");
    let final_true_objective = match last.theta_true {
        Some(t) => t,
        None if config.mode == Mode::Sequential && objective.mode == ObjectiveMode::Standard => last.theta_est,
        None => problem.true_objective(&design.chi)?,
    };
    let updated_volume = volume_value(&problem.projection.project(&problem.filter.apply(&chi)), &problem.mesh);
    Ok(RunReport {
        history,
        final_chi: design.chi,
        final_phys: design.chi_phys,
        final_true_objective,
        updated_chi: chi,
        updated_volume,
        designs,
        workers,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub n_tau: usize,
    pub k: usize,
    pub err_obj: f64,
    pub err_sens: f64,
    pub t_parareal_s: f64,
    pub t_sequential_s: f64,
    pub speedup: f64,
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Errors and speedups of `k` Parareal iterations against the sequential
/// solve for a fixed design. Both sides start from coarse-sweep guesses
/// and are timed on the same pool infrastructure.
pub fn preliminary_benchmark(
    problem: &Problem,
    chi: &[f64],
    n_tau_list: &[usize],
    k_list: &[usize],
) -> Result<Vec<BenchmarkRow>> {
    if n_tau_list.is_empty() || k_list.is_empty() {
        return Err(Error::config("benchmark needs at least one coarse step count and one iteration count"));
    }
    if k_list.contains(&0) {
        return Err(Error::config("Parareal iteration counts must be at least 1"));
    }
    let problems = n_tau_list
        .iter()
        .map(|&n| problem.with_coarse(n))
        .collect::<Result<Vec<_>>>()?;
    let design = problem.design(chi.to_vec())?;
    let objective = problem.objective(ObjectiveMode::Standard);
    let raw = |g: &[f64]| chain_rule_backward(g, &design, &problem.filter, &problem.projection);

    let single = WorkerPool::new(1)?;
    let t = Instant::now();
    let seq = single.install(|| evaluate(problem, &design, objective, Solve::Sequential, || Solve::Sequential, &single))?;
    let t_sequential = t.elapsed().as_secs_f64();
    let grad_seq = raw(&seq.grad_phys);

    let mut rows = Vec::new();
    for p in &problems {
        let n_tau = p.grid.n_coarse;
        let pool = WorkerPool::new(n_tau)?;
        for &k in k_list {
            let cfg = PararealConfig {
                direction: Direction::Forward,
                coarse: CoarseMode::Standard,
                iterations: k,
                record: true,
            };
            let rev = PararealConfig {
                direction: Direction::Reverse,
                record: false,
                ..cfg
            };
            let t = Instant::now();
            let par = evaluate(
                p,
                &design,
                objective,
                Solve::Parareal(cfg, Guess::CoarseSweep),
                || Solve::Parareal(rev, Guess::CoarseSweep),
                &pool,
            )?;
            let t_parareal = t.elapsed().as_secs_f64();
            let err_obj = if seq.theta == 0.0 {
                (par.theta - seq.theta).abs()
            } else {
                (par.theta - seq.theta).abs() / seq.theta.abs()
            };
            rows.push(BenchmarkRow {
                n_tau,
                k,
                err_obj,
                err_sens: rel_l2(&raw(&par.grad_phys), &grad_seq),
                t_parareal_s: t_parareal,
                t_sequential_s: t_sequential,
                speedup: t_sequential / t_parareal,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub theta: f64,
    pub adjoint: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// `max_i |a_i - f_i| / max_i |f_i|`.
    pub max_error: f64,
    /// `||a - f||_2 / ||f||_2`.
    pub l2_error: f64,
}

/// Compares the adjoint gradient w.r.t. the raw design against central
/// differences of the sequential objective.
pub fn gradcheck(problem: &Problem, chi: &[f64], step: f64, source_perturbation: f64) -> Result<GradcheckReport> {
    let (theta, adjoint) = problem.sequential_gradient(chi, source_perturbation)?;
    let mut fd = Vec::with_capacity(chi.len());
    let mut x = chi.to_vec();
    for i in 0..chi.len() {
        x[i] = chi[i] + step;
        let up = problem.true_objective(&x)?;
        x[i] = chi[i] - step;
        let down = problem.true_objective(&x)?;
        x[i] = chi[i];
        fd.push((up - down) / (2.0 * step));
    }
    let diff = adjoint.iter().zip(&fd).fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
    let scale = fd.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    let max_error = if scale > 0.0 {
        diff / scale
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(GradcheckReport {
        theta,
        l2_error: rel_l2(&adjoint, &fd),
        adjoint,
        finite_difference: fd,
        max_error,
    })
}
