//! Structured bilinear-quad discretisation of transient heat conduction.
//!
//! Nodes are numbered row-major from the bottom-left corner; elements
//! likewise. Dirichlet nodes (homogeneous, on a segment of the bottom
//! edge) are eliminated, so every assembled operator and state vector in
//! this crate lives on the free DOFs only.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{BandCholesky, CsrMatrix};

const ALIGN_TOL: f64 = 1e-9;

/// Uniform mesh of square elements on `[0, nx h] x [0, ny h]`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    /// Domain side length along x; `h = side / nx`.
    pub side: f64,
    pub h: f64,
    /// Out-of-plane depth.
    pub depth: f64,
    dirichlet: Vec<bool>,
    free_index: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
    elem_dofs: Vec<[Option<usize>; 4]>,
}

impl Mesh {
    /// Builds the mesh with a homogeneous Dirichlet segment `span = [a, b]`
    /// on `y = 0`. `None` (or an empty span with `a > b`) yields a pure
    /// Neumann problem.
    pub fn new(nx: usize, ny: usize, side: f64, span: Option<(f64, f64)>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::config("mesh needs at least one element per axis"));
        }
        if !(side > 0.0) {
            return Err(Error::config(format!("side length must be positive, got {side}")));
        }
        let h = side / nx as f64;
        let nn = (nx + 1) * (ny + 1);
        let mut dirichlet = vec![false; nn];
        if let Some((a, b)) = span {
            if a <= b {
                let ia = aligned_index(a, h, nx, "start", (a, b))?;
                let ib = aligned_index(b, h, nx, "end", (a, b))?;
                for flag in &mut dirichlet[ia..=ib] {
                    *flag = true;
                }
            }
        }
        let mut free_index = vec![None; nn];
        let mut free_nodes = Vec::with_capacity(nn);
        for (node, &fixed) in dirichlet.iter().enumerate() {
            if !fixed {
                free_index[node] = Some(free_nodes.len());
                free_nodes.push(node);
            }
        }
        let mut elem_dofs = Vec::with_capacity(nx * ny);
        for ey in 0..ny {
            for ex in 0..nx {
                let n0 = ey * (nx + 1) + ex;
                let nodes = [n0, n0 + 1, n0 + nx + 2, n0 + nx + 1];
                elem_dofs.push(nodes.map(|n| free_index[n]));
            }
        }
        Ok(Mesh {
            nx,
            ny,
            side,
            h,
            depth: side,
            dirichlet,
            free_index,
            free_nodes,
            elem_dofs,
        })
    }

    /// Smallest node-aligned span on the bottom edge covering the segment of
    /// relative width `fraction` centred at `x = side / 2`.
    pub fn centered_span(nx: usize, side: f64, fraction: f64) -> (f64, f64) {
        let h = side / nx as f64;
        let half = 0.5 * fraction * side;
        let lo = ((0.5 * side - half) / h + ALIGN_TOL).floor();
        let hi = ((0.5 * side + half) / h - ALIGN_TOL).ceil();
        (lo * h, hi * h)
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_free(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn area(&self) -> f64 {
        self.n_elements() as f64 * self.h * self.h
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| self.dirichlet[n]).collect()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.free_index[node]
    }

    /// Free-DOF indices of the four element nodes (counter-clockwise from
    /// the bottom-left corner); `None` marks a Dirichlet node.
    pub fn element_dofs(&self, e: usize) -> &[Option<usize>; 4] {
        &self.elem_dofs[e]
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let ix = node % (self.nx + 1);
        let iy = node / (self.nx + 1);
        (ix as f64 * self.h, iy as f64 * self.h)
    }

    pub fn element_centroid(&self, e: usize) -> (f64, f64) {
        let ex = e % self.nx;
        let ey = e / self.nx;
        ((ex as f64 + 0.5) * self.h, (ey as f64 + 0.5) * self.h)
    }

    /// Element index mirrored about `x = side / 2`.
    pub fn mirror_element(&self, e: usize) -> usize {
        let ex = e % self.nx;
        let ey = e / self.nx;
        ey * self.nx + (self.nx - 1 - ex)
    }

    /// Free-DOF index mirrored about `x = side / 2`.
    pub fn mirror_free(&self, dof: usize) -> Option<usize> {
        let node = self.free_nodes[dof];
        let ix = node % (self.nx + 1);
        let iy = node / (self.nx + 1);
        self.free_index[iy * (self.nx + 1) + (self.nx - ix)]
    }

    /// Expands a free-DOF vector to all nodes, writing zero on the
    /// Dirichlet boundary.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes()];
        for (k, &node) in self.free_nodes.iter().enumerate() {
            full[node] = free[k];
        }
        full
    }

    /// Gathers element-local values from a free-DOF vector.
    #[inline]
    pub fn gather(&self, e: usize, v: &[f64]) -> [f64; 4] {
        self.elem_dofs[e].map(|d| d.map_or(0.0, |i| v[i]))
    }
}

fn aligned_index(x: f64, h: f64, nx: usize, which: &str, span: (f64, f64)) -> Result<usize> {
    let r = x / h;
    let k = r.round();
    if (r - k).abs() > ALIGN_TOL || k < 0.0 || k > nx as f64 {
        let (a, b) = span;
        let inner = ((a / h).ceil() * h, (b / h).floor() * h);
        let outer = ((a / h).floor() * h, (b / h).ceil() * h);
        return Err(Error::config(format!(
            "Dirichlet span [{a}, {b}] {which} does not align with node spacing {h}; \
             nearest aligned spans are [{}, {}] and [{}, {}]",
            inner.0, inner.1, outer.0, outer.1
        )));
    }
    Ok(k as usize)
}

/// Uniform fine and coarse time axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_fine: usize,
    pub n_coarse: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_fine: usize, n_coarse: usize) -> Result<Self> {
        if !(t_final > 0.0) {
            return Err(Error::config(format!("terminal time must be positive, got {t_final}")));
        }
        if n_fine == 0 || n_coarse == 0 {
            return Err(Error::config("step counts must be at least 1"));
        }
        if n_fine % n_coarse != 0 {
            return Err(Error::config(format!(
                "coarse step count {n_coarse} does not divide fine step count {n_fine}"
            )));
        }
        Ok(TimeGrid {
            t_final,
            n_fine,
            n_coarse,
        })
    }

    /// Coarsening factor `M`.
    pub fn ratio(&self) -> usize {
        self.n_fine / self.n_coarse
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_fine as f64
    }

    pub fn dtau(&self) -> f64 {
        self.t_final / self.n_coarse as f64
    }

    /// Fine time point `t_n`.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Coarse time point `tau_n = t_{M n}`.
    pub fn coarse_time(&self, n: usize) -> f64 {
        self.time(self.ratio() * n)
    }

    /// Same fine axis with a different coarse partition.
    pub fn with_coarse(&self, n_coarse: usize) -> Result<Self> {
        TimeGrid::new(self.t_final, self.n_fine, n_coarse)
    }
}

/// Bilinear reference element matrices from 2x2 Gauss quadrature, for a
/// square element of size `h` and unit material value.
#[derive(Debug, Clone, Copy)]
pub struct ElementMatrices {
    pub capacity: [[f64; 4]; 4],
    pub conductivity: [[f64; 4]; 4],
}

impl ElementMatrices {
    pub fn square(h: f64) -> Self {
        let g = 1.0 / 3f64.sqrt();
        let xi = [-1.0, 1.0, 1.0, -1.0];
        let eta = [-1.0, -1.0, 1.0, 1.0];
        let det_j = h * h / 4.0;
        let dxi_dx = 2.0 / h;
        let mut capacity = [[0.0; 4]; 4];
        let mut conductivity = [[0.0; 4]; 4];
        for &(s, t) in &[(-g, -g), (g, -g), (g, g), (-g, g)] {
            let n: [f64; 4] = std::array::from_fn(|a| 0.25 * (1.0 + xi[a] * s) * (1.0 + eta[a] * t));
            let dx: [f64; 4] =
                std::array::from_fn(|a| 0.25 * xi[a] * (1.0 + eta[a] * t) * dxi_dx);
            let dy: [f64; 4] =
                std::array::from_fn(|a| 0.25 * eta[a] * (1.0 + xi[a] * s) * dxi_dx);
            for a in 0..4 {
                for b in 0..4 {
                    capacity[a][b] += n[a] * n[b] * det_j;
                    conductivity[a][b] += (dx[a] * dx[b] + dy[a] * dy[b]) * det_j;
                }
            }
        }
        ElementMatrices {
            capacity,
            conductivity,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        ElementMatrices {
            capacity: self.capacity.map(|r| r.map(|v| v * s)),
            conductivity: self.conductivity.map(|r| r.map(|v| v * s)),
        }
    }
}

#[inline]
pub(crate) fn bilinear(m: &[[f64; 4]; 4], u: &[f64; 4], v: &[f64; 4]) -> f64 {
    let mut acc = 0.0;
    for a in 0..4 {
        let mut row = 0.0;
        for b in 0..4 {
            row += m[a][b] * v[b];
        }
        acc += u[a] * row;
    }
    acc
}

/// Assembled capacity and conductivity on the free DOFs, plus a cache of
/// `C / delta + K` factorisations keyed by step size.
#[derive(Debug)]
pub struct SystemMatrices {
    pub capacity: CsrMatrix,
    pub conductivity: CsrMatrix,
    cache: Mutex<HashMap<u64, Arc<BandCholesky>>>,
    factorisations: AtomicUsize,
}

impl SystemMatrices {
    /// Assembles `C = sum_e c_e C_ref depth` and `K = sum_e k_e K_ref depth`.
    pub fn assemble(mesh: &Mesh, capacity: &[f64], conductivity: &[f64]) -> Result<Self> {
        let ne = mesh.n_elements();
        if capacity.len() != ne || conductivity.len() != ne {
            return Err(Error::config(format!(
                "material arrays have lengths {} and {}, expected {ne}",
                capacity.len(),
                conductivity.len()
            )));
        }
        let refm = ElementMatrices::square(mesh.h).scaled(mesh.depth);
        let mut tc = Vec::with_capacity(16 * ne);
        let mut tk = Vec::with_capacity(16 * ne);
        for e in 0..ne {
            let (c, k) = (capacity[e], conductivity[e]);
            if !(c > 0.0) {
                return Err(Error::Assembly {
                    element: e,
                    quantity: "capacity",
                    value: c,
                });
            }
            if !(k > 0.0) {
                return Err(Error::Assembly {
                    element: e,
                    quantity: "conductivity",
                    value: k,
                });
            }
            let dofs = mesh.element_dofs(e);
            for a in 0..4 {
                let Some(ra) = dofs[a] else { continue };
                for b in 0..4 {
                    let Some(rb) = dofs[b] else { continue };
                    tc.push((ra, rb, c * refm.capacity[a][b]));
                    tk.push((ra, rb, k * refm.conductivity[a][b]));
                }
            }
        }
        let n = mesh.n_free();
        Ok(SystemMatrices {
            capacity: CsrMatrix::from_triplets(n, tc),
            conductivity: CsrMatrix::from_triplets(n, tk),
            cache: Mutex::new(HashMap::new()),
            factorisations: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.capacity.dim()
    }

    /// Factorisation of `C / delta + K`, created on first use.
    pub fn factor(&self, delta: f64) -> Result<Arc<BandCholesky>> {
        if !(delta > 0.0) {
            return Err(Error::numerical(format!("step size must be positive, got {delta}")));
        }
        let mut cache = self.cache.lock().expect("factor cache poisoned");
        if let Some(f) = cache.get(&delta.to_bits()) {
            return Ok(Arc::clone(f));
        }
        let a = self
            .capacity
            .linear_combination(1.0 / delta, &self.conductivity, 1.0);
        let f = Arc::new(BandCholesky::factor(&a)?);
        self.factorisations.fetch_add(1, Ordering::Relaxed);
        cache.insert(delta.to_bits(), Arc::clone(&f));
        Ok(f)
    }

    /// Number of factorisations performed so far.
    pub fn factorisation_count(&self) -> usize {
        self.factorisations.load(Ordering::Relaxed)
    }

    pub fn cached_step_sizes(&self) -> usize {
        self.cache.lock().expect("factor cache poisoned").len()
    }

    /// Solves `(C / delta + K) x = rhs + (C / delta) prev`.
    fn implicit_solve(&self, prev: &[f64], rhs: &[f64], delta: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        if prev.len() != n || rhs.len() != n {
            return Err(Error::config(format!(
                "state length {} / source length {} do not match {n} free DOFs",
                prev.len(),
                rhs.len()
            )));
        }
        let factor = self.factor(delta)?;
        let mut x = vec![0.0; n];
        self.capacity.mul_vec_scaled(1.0 / delta, prev, &mut x);
        for (xi, r) in x.iter_mut().zip(rhs) {
            *xi += r;
        }
        factor.solve_in_place(&mut x);
        Ok(x)
    }

    /// One backward-Euler step for the temperature.
    pub fn backward_euler_step(&self, t_prev: &[f64], load: &[f64], delta: f64) -> Result<Vec<f64>> {
        self.implicit_solve(t_prev, load, delta)
    }

    /// One reverse step of the adjoint recurrence. `C` and `K` are
    /// symmetric, so the operator and its cached factor are shared with the
    /// primal step.
    pub fn adjoint_euler_step(&self, lambda_next: &[f64], source: &[f64], delta: f64) -> Result<Vec<f64>> {
        self.implicit_solve(lambda_next, source, delta)
    }
}

/// Time profile of a spatially uniform volumetric heat load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadProfile {
    /// `q(t) = (1 - t)(1 + cos(50 t)) / 2`.
    DecayingOscillation,
    Constant(f64),
    Zero,
}

impl LoadProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            LoadProfile::DecayingOscillation => 0.5 * (1.0 - t) * (1.0 + (50.0 * t).cos()),
            LoadProfile::Constant(q) => q,
            LoadProfile::Zero => 0.0,
        }
    }
}

/// Heat load assembled onto the free DOFs.
#[derive(Debug, Clone)]
pub struct HeatLoad {
    pub profile: LoadProfile,
    /// Nodal vector for `q = 1` everywhere: `h^2 depth / 4` per adjacent
    /// element.
    unit: Vec<f64>,
}

impl HeatLoad {
    pub fn new(mesh: &Mesh, profile: LoadProfile) -> Self {
        let mut unit = vec![0.0; mesh.n_free()];
        let share = mesh.h * mesh.h * mesh.depth / 4.0;
        for e in 0..mesh.n_elements() {
            for i in mesh.element_dofs(e).iter().flatten() {
                unit[*i] += share;
            }
        }
        HeatLoad { profile, unit }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.profile.value(t)
    }

    /// Nodal load vector at time `t`.
    pub fn vector(&self, t: f64) -> Vec<f64> {
        let q = self.value(t);
        self.unit.iter().map(|u| q * u).collect()
    }
}
