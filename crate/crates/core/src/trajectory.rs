//! Primal and adjoint propagators with cumulative objective and
//! sensitivity states.
//!
//! The primal state at coarse point `n` is `(T_{Mn}, theta_{Mn})`; the
//! adjoint state is `(lambda_{Mn+1}, g_{Mn+1})` so that the state at coarse
//! point 0 carries the full gradient `g_1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{bilinear, ElementMatrices, HeatLoad, Mesh, SystemMatrices, TimeGrid};
use crate::parareal::{PararealState, Propagator};

/// Which objective the cumulative state tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Space-time power mean `Theta`.
    Standard,
    /// Separable `Theta^p`, accumulated as a plain sum.
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParams {
    pub p: u32,
    pub n_elements: usize,
    pub mode: ObjectiveMode,
}

impl ObjectiveParams {
    pub fn new(p: u32, n_elements: usize, mode: ObjectiveMode) -> Result<Self> {
        if p < 2 || p % 2 != 0 {
            return Err(Error::config(format!("power-mean exponent must be even and >= 2, got {p}")));
        }
        Ok(ObjectiveParams { p, n_elements, mode })
    }

    /// Adds one step's contribution `||T||_p^p / (n_steps Ne)` to `theta`.
    pub fn accumulate(&self, theta: f64, t: &[f64], n_steps: usize) -> Result<f64> {
        let (peak, rel) = scaled_power_sum(t, self.p);
        let norm = (n_steps * self.n_elements) as f64;
        let out = match self.mode {
            ObjectiveMode::Standard => {
                // p-th root of the step contribution, formed without raising
                // peak to the p-th power.
                let step = if peak > 0.0 {
                    peak * (rel / norm).powf(1.0 / self.p as f64)
                } else {
                    0.0
                };
                power_combine(theta.abs(), step, self.p)
            }
            ObjectiveMode::Modified => theta + peak.powi(self.p as i32) * rel / norm,
        };
        if !out.is_finite() {
            return Err(Error::numerical(format!("cumulative objective became non-finite ({out})")));
        }
        Ok(out)
    }

    /// Objective value `Theta` from the accumulated scalar.
    pub fn objective(&self, theta: f64) -> f64 {
        match self.mode {
            ObjectiveMode::Standard => theta,
            ObjectiveMode::Modified => theta.max(0.0).powf(1.0 / self.p as f64),
        }
    }
}

/// `(m, s)` with `sum_i t_i^p = m^p s` and `m = max |t_i|`.
fn scaled_power_sum(t: &[f64], p: u32) -> (f64, f64) {
    let peak = t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return (0.0, 0.0);
    }
    let inv = 1.0 / peak;
    (peak, t.iter().map(|v| (v * inv).powi(p as i32)).sum())
}

/// `(a^p + b^p)^(1/p)` for non-negative `a`, `b`.
fn power_combine(a: f64, b: f64, p: u32) -> f64 {
    let m = a.max(b);
    if m == 0.0 {
        return 0.0;
    }
    let (x, y) = (a / m, b / m);
    m * (x.powi(p as i32) + y.powi(p as i32)).powf(1.0 / p as f64)
}

/// Converts the modified objective and its gradient back to `Theta`.
/// Returns `true` as the third element when a negative input was clamped.
pub fn convert_modified(theta_mod: f64, grad_mod: &[f64], p: u32) -> (f64, Vec<f64>, bool) {
    let clamped = theta_mod < 0.0;
    let theta = theta_mod.max(0.0).powf(1.0 / p as f64);
    let scale = if theta > 0.0 {
        theta.powi(1 - p as i32) / p as f64
    } else {
        0.0
    };
    (theta, grad_mod.iter().map(|g| scale * g).collect(), clamped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalState {
    pub temperature: Vec<f64>,
    pub theta: f64,
}

impl PrimalState {
    pub fn zero(n_free: usize) -> Self {
        PrimalState {
            temperature: vec![0.0; n_free],
            theta: 0.0,
        }
    }
}

impl PararealState for PrimalState {
    fn zeros_like(&self) -> Self {
        PrimalState::zero(self.temperature.len())
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.temperature.iter_mut().zip(&other.temperature) {
            *a += b;
        }
        self.theta += other.theta;
    }

    fn sub_assign(&mut self, other: &Self) {
        for (a, b) in self.temperature.iter_mut().zip(&other.temperature) {
            *a -= b;
        }
        self.theta -= other.theta;
    }

    fn norm(&self) -> f64 {
        (self.temperature.iter().map(|v| v * v).sum::<f64>() + self.theta * self.theta).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub lambda: Vec<f64>,
    /// Cumulative sensitivity w.r.t. `chi_phys`, one entry per element.
    pub g: Vec<f64>,
}

impl AdjointState {
    pub fn zero(n_free: usize, n_elements: usize) -> Self {
        AdjointState {
            lambda: vec![0.0; n_free],
            g: vec![0.0; n_elements],
        }
    }
}

impl PararealState for AdjointState {
    fn zeros_like(&self) -> Self {
        AdjointState::zero(self.lambda.len(), self.g.len())
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.lambda.iter_mut().zip(&other.lambda) {
            *a += b;
        }
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
    }

    fn sub_assign(&mut self, other: &Self) {
        for (a, b) in self.lambda.iter_mut().zip(&other.lambda) {
            *a -= b;
        }
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a -= b;
        }
    }

    fn norm(&self) -> f64 {
        let l: f64 = self.lambda.iter().map(|v| v * v).sum();
        let g: f64 = self.g.iter().map(|v| v * v).sum();
        (l + g).sqrt()
    }
}

/// Origin of a stored temperature field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Initial,
    /// Produced by a plain sequential sweep.
    Sequential,
    /// Coarse point after the Parareal correction.
    Corrected,
    /// Intermediate point from the last fine sweep.
    Intermediate,
}

/// Temperatures at every fine time point `t_0 .. t_{N_t}` (free DOFs).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    temps: Vec<Vec<f64>>,
    provenance: Vec<Provenance>,
}

impl Trajectory {
    pub fn from_fields(temps: Vec<Vec<f64>>, provenance: Vec<Provenance>) -> Result<Self> {
        if temps.is_empty() || temps.len() != provenance.len() {
            return Err(Error::config("trajectory needs one provenance tag per field"));
        }
        Ok(Trajectory { temps, provenance })
    }

    /// Assembles corrected coarse states and the intermediates recorded by
    /// the last fine sweep.
    pub fn from_parareal(
        grid: &TimeGrid,
        coarse: &[PrimalState],
        intermediates: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        let m = grid.ratio();
        if coarse.len() != grid.n_coarse + 1 {
            return Err(Error::config(format!(
                "expected {} coarse states, got {}",
                grid.n_coarse + 1,
                coarse.len()
            )));
        }
        if intermediates.len() != grid.n_coarse || intermediates.iter().any(|c| c.len() != m - 1) {
            return Err(Error::numerical(
                "intermediate fields missing: the primal solve did not record a fine sweep",
            ));
        }
        let mut temps = Vec::with_capacity(grid.n_fine + 1);
        let mut provenance = Vec::with_capacity(grid.n_fine + 1);
        for (c, chunk) in intermediates.iter().enumerate() {
            temps.push(coarse[c].temperature.clone());
            provenance.push(if c == 0 { Provenance::Initial } else { Provenance::Corrected });
            for t in chunk {
                temps.push(t.clone());
                provenance.push(Provenance::Intermediate);
            }
        }
        temps.push(coarse[grid.n_coarse].temperature.clone());
        provenance.push(Provenance::Corrected);
        Ok(Trajectory { temps, provenance })
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    pub fn get(&self, n: usize) -> Result<&[f64]> {
        self.temps
            .get(n)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::numerical(format!("trajectory has no entry for time index {n}")))
    }

    pub fn provenance(&self, n: usize) -> Provenance {
        self.provenance[n]
    }

    pub fn fields(&self) -> &[Vec<f64>] {
        &self.temps
    }

    /// `(N_t Ne)^(-1/p) ||S||_p` over `t_1 .. t_{N_t}`.
    pub fn power_mean(&self, p: u32, n_elements: usize) -> f64 {
        let n_t = self.temps.len() - 1;
        let peak = self.temps[1..]
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if peak == 0.0 {
            return 0.0;
        }
        let s: f64 = self.temps[1..]
            .iter()
            .flatten()
            .map(|v| (v / peak).powi(p as i32))
            .sum();
        peak * (s / (n_t * n_elements) as f64).powf(1.0 / p as f64)
    }
}

/// Primal problem on one design: `H_pri`, `F_pri` and `G_pri`.
pub struct PrimalProblem<'a> {
    pub sys: &'a SystemMatrices,
    pub load: &'a HeatLoad,
    pub grid: TimeGrid,
    pub objective: ObjectiveParams,
}

impl<'a> PrimalProblem<'a> {
    pub fn new(sys: &'a SystemMatrices, load: &'a HeatLoad, grid: TimeGrid, objective: ObjectiveParams) -> Self {
        PrimalProblem {
            sys,
            load,
            grid,
            objective,
        }
    }

    fn advance(&self, state: &PrimalState, target: f64, delta: f64, n_steps: usize) -> Result<PrimalState> {
        let t = self
            .sys
            .backward_euler_step(&state.temperature, &self.load.vector(target), delta)?;
        let theta = self.objective.accumulate(state.theta, &t, n_steps)?;
        Ok(PrimalState {
            temperature: t,
            theta,
        })
    }

    /// `H_pri`: one fine step from `t_{n-1}` to `t_n`.
    pub fn primal_step(&self, state: &PrimalState, n: usize) -> Result<PrimalState> {
        self.advance(state, self.grid.time(n), self.grid.dt(), self.grid.n_fine)
    }

    /// `F_pri` over chunk `c`; with `record`, also returns the `M - 1`
    /// intermediate temperatures.
    pub fn fine_primal(&self, c: usize, state: &PrimalState, record: bool) -> Result<(PrimalState, Vec<Vec<f64>>)> {
        let m = self.grid.ratio();
        let mut s = state.clone();
        let mut rec = Vec::with_capacity(if record { m - 1 } else { 0 });
        for j in 1..=m {
            s = self.primal_step(&s, c * m + j)?;
            if record && j < m {
                rec.push(s.temperature.clone());
            }
        }
        Ok((s, rec))
    }

    /// `G_pri`: one step of size `dtau` targeting `tau_{c+1}`.
    pub fn coarse_primal(&self, c: usize, state: &PrimalState) -> Result<PrimalState> {
        self.advance(state, self.grid.coarse_time(c + 1), self.grid.dtau(), self.grid.n_coarse)
    }

    /// Full sequential sweep: trajectory plus the coarse-point states.
    pub fn sequential(&self) -> Result<(Trajectory, Vec<PrimalState>)> {
        let n = self.sys.dim();
        let m = self.grid.ratio();
        let mut s = PrimalState::zero(n);
        let mut temps = Vec::with_capacity(self.grid.n_fine + 1);
        let mut provenance = Vec::with_capacity(self.grid.n_fine + 1);
        let mut coarse = vec![s.clone()];
        temps.push(s.temperature.clone());
        provenance.push(Provenance::Initial);
        for j in 1..=self.grid.n_fine {
            s = self.primal_step(&s, j)?;
            temps.push(s.temperature.clone());
            provenance.push(Provenance::Sequential);
            if j % m == 0 {
                coarse.push(s.clone());
            }
        }
        Ok((Trajectory { temps, provenance }, coarse))
    }

    /// Objective from a sequential sweep, without storing the trajectory.
    pub fn objective_only(&self) -> Result<f64> {
        let mut s = PrimalState::zero(self.sys.dim());
        for j in 1..=self.grid.n_fine {
            s = self.primal_step(&s, j)?;
        }
        Ok(self.objective.objective(s.theta))
    }
}

impl Propagator for PrimalProblem<'_> {
    type State = PrimalState;
    type Record = Vec<f64>;

    fn n_chunks(&self) -> usize {
        self.grid.n_coarse
    }

    fn fine(&self, chunk: usize, input: &PrimalState, record: bool) -> Result<(PrimalState, Vec<Vec<f64>>)> {
        self.fine_primal(chunk, input, record)
    }

    fn coarse(&self, chunk: usize, input: &PrimalState) -> Result<PrimalState> {
        self.coarse_primal(chunk, input)
    }
}

/// Data the adjoint sweep needs from the primal solve and the design.
#[derive(Debug, Clone)]
pub struct AdjointContext {
    pub trajectory: Trajectory,
    /// Objective value fed to the standard-mode source (the accumulated
    /// scalar itself in modified mode, where the source ignores it).
    pub theta_total: f64,
    pub objective: ObjectiveParams,
    pub d_capacity: Vec<f64>,
    pub d_conductivity: Vec<f64>,
    pub elements: ElementMatrices,
}

impl AdjointContext {
    pub fn new(
        mesh: &Mesh,
        trajectory: Trajectory,
        theta_total: f64,
        objective: ObjectiveParams,
        d_capacity: Vec<f64>,
        d_conductivity: Vec<f64>,
    ) -> Self {
        AdjointContext {
            trajectory,
            theta_total,
            objective,
            d_capacity,
            d_conductivity,
            elements: ElementMatrices::square(mesh.h).scaled(mesh.depth),
        }
    }

    /// Right-hand side `N_t (dTheta/dT_n)^T` of the adjoint recurrence.
    pub fn adjoint_source(&self, t: &[f64]) -> Result<Vec<f64>> {
        let p = self.objective.p as i32;
        let ne = self.objective.n_elements as f64;
        match self.objective.mode {
            ObjectiveMode::Standard => {
                let theta = self.theta_total;
                if theta == 0.0 {
                    if t.iter().any(|&v| v != 0.0) {
                        return Err(Error::numerical(
                            "objective is zero but the temperature is not: inconsistent adjoint source",
                        ));
                    }
                    return Ok(vec![0.0; t.len()]);
                }
                // Theta^(1-p) T^(p-1) = (T / Theta)^(p-1)
                let inv = 1.0 / theta;
                Ok(t.iter().map(|v| (v * inv).powi(p - 1) / ne).collect())
            }
            ObjectiveMode::Modified => {
                let scale = self.objective.p as f64 / ne;
                Ok(t.iter().map(|v| scale * v.powi(p - 1)).collect())
            }
        }
    }
}

/// Adjoint problem on one design: `H_adj`, `F_adj` and `G_adj`.
pub struct AdjointProblem<'a> {
    pub mesh: &'a Mesh,
    pub sys: &'a SystemMatrices,
    pub grid: TimeGrid,
    pub ctx: &'a AdjointContext,
}

impl<'a> AdjointProblem<'a> {
    pub fn new(mesh: &'a Mesh, sys: &'a SystemMatrices, grid: TimeGrid, ctx: &'a AdjointContext) -> Self {
        AdjointProblem { mesh, sys, grid, ctx }
    }

    /// Reverse step producing index `j` from `j + offset`, with the
    /// temperature difference taken against index `j_prev`.
    fn retreat(
        &self,
        state: &AdjointState,
        j: usize,
        j_prev: usize,
        delta: f64,
        n_steps: usize,
    ) -> Result<AdjointState> {
        let traj = &self.ctx.trajectory;
        let t_now = traj.get(j)?;
        let t_prev = traj.get(j_prev)?;
        let source = self.ctx.adjoint_source(t_now)?;
        let lambda = self.sys.adjoint_euler_step(&state.lambda, &source, delta)?;
        let mut g = state.g.clone();
        let em = &self.ctx.elements;
        let inv_delta = 1.0 / delta;
        let inv_n = 1.0 / n_steps as f64;
        for (e, ge) in g.iter_mut().enumerate() {
            let le = self.mesh.gather(e, &lambda);
            let te = self.mesh.gather(e, t_now);
            let tp = self.mesh.gather(e, t_prev);
            let rate: [f64; 4] = std::array::from_fn(|a| (te[a] - tp[a]) * inv_delta);
            let dc = self.ctx.d_capacity[e] * bilinear(&em.capacity, &le, &rate);
            let dk = self.ctx.d_conductivity[e] * bilinear(&em.conductivity, &le, &te);
            *ge -= inv_n * (dc + dk);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite sensitivity at time index {j}")));
        }
        Ok(AdjointState { lambda, g })
    }

    /// `H_adj`: from `(lambda_{j+1}, g_{j+1})` to `(lambda_j, g_j)`.
    pub fn adjoint_step(&self, state: &AdjointState, j: usize) -> Result<AdjointState> {
        if j == 0 {
            return Err(Error::numerical("adjoint step index must be at least 1"));
        }
        self.retreat(state, j, j - 1, self.grid.dt(), self.grid.n_fine)
    }

    /// `F_adj` over chunk `c`: from `v_{c+1}` to `v_c` in `M` reverse steps.
    pub fn fine_adjoint(&self, c: usize, state: &AdjointState) -> Result<AdjointState> {
        let m = self.grid.ratio();
        let mut s = state.clone();
        for j in (c * m + 1..=(c + 1) * m).rev() {
            s = self.adjoint_step(&s, j)?;
        }
        Ok(s)
    }

    /// `G_adj` over chunk `c`: one reverse step of size `dtau`, reading the
    /// trajectory only at `tau_{c+1}` and `tau_c`.
    pub fn coarse_adjoint(&self, c: usize, state: &AdjointState) -> Result<AdjointState> {
        let m = self.grid.ratio();
        self.retreat(state, (c + 1) * m, c * m, self.grid.dtau(), self.grid.n_coarse)
    }

    /// Sequential reverse sweep; returns the states `v_n` at every coarse
    /// point (`v_0` holds the full gradient).
    pub fn sequential(&self) -> Result<Vec<AdjointState>> {
        let m = self.grid.ratio();
        let mut s = AdjointState::zero(self.sys.dim(), self.mesh.n_elements());
        let mut coarse = vec![s.clone(); self.grid.n_coarse + 1];
        for j in (1..=self.grid.n_fine).rev() {
            s = self.adjoint_step(&s, j)?;
            if (j - 1) % m == 0 {
                coarse[(j - 1) / m] = s.clone();
            }
        }
        Ok(coarse)
    }
}

impl Propagator for AdjointProblem<'_> {
    type State = AdjointState;
    type Record = ();

    fn n_chunks(&self) -> usize {
        self.grid.n_coarse
    }

    fn fine(&self, chunk: usize, input: &AdjointState, _record: bool) -> Result<(AdjointState, Vec<()>)> {
        Ok((self.fine_adjoint(chunk, input)?, Vec::new()))
    }

    fn coarse(&self, chunk: usize, input: &AdjointState) -> Result<AdjointState> {
        self.coarse_adjoint(chunk, input)
    }
}
