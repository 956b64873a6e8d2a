//! Density filter, threshold projection and SIMP interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Mesh;
use crate::sparse::CsrMatrix;

/// Raw, filtered and physical densities over the elements.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignField {
    pub chi: Vec<f64>,
    pub chi_fil: Vec<f64>,
    pub chi_phys: Vec<f64>,
}

impl DesignField {
    /// Runs the raw densities through filter and projection.
    pub fn from_raw(chi: Vec<f64>, filter: &FilterOperator, projection: &ProjectionParams) -> Self {
        let chi_fil = filter.apply(&chi);
        let chi_phys = projection.project(&chi_fil);
        DesignField {
            chi,
            chi_fil,
            chi_phys,
        }
    }

    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }
}

/// Linear cone filter `chi_fil = H chi` with row-normalised weights.
///
/// The mesh is uniform, so `H` is stored as a stencil of offsets with raw
/// cone weights plus per-element normalisers. Offsets `(dx, dy)` and
/// `(-dx, dy)` are always accumulated as one pair, which keeps the filter
/// bitwise equivariant under the left-right mirror.
#[derive(Debug, Clone)]
pub struct FilterOperator {
    pub radius: f64,
    nx: usize,
    ny: usize,
    /// `(dx >= 0, dy, w)`; `dx > 0` entries stand for both signs.
    stencil: Vec<(isize, isize, f64)>,
    row_total: Vec<f64>,
}

impl FilterOperator {
    /// Weights `max(0, r - d_ij)` between element centroids with `d < r`,
    /// normalised per row over the (boundary-truncated) neighbourhood.
    pub fn new(mesh: &Mesh, radius: f64) -> Self {
        let reach = (radius / mesh.h).ceil().max(0.0) as isize;
        let mut stencil = Vec::new();
        for dy in -reach..=reach {
            for dx in 0..=reach {
                let d = mesh.h * ((dx * dx + dy * dy) as f64).sqrt();
                if dx == 0 && dy == 0 {
                    // always kept so rows never vanish
                    stencil.push((0, 0, (radius - d).max(0.0)));
                } else if d < radius {
                    stencil.push((dx, dy, radius - d));
                }
            }
        }
        let mut f = FilterOperator {
            radius,
            nx: mesh.nx,
            ny: mesh.ny,
            stencil,
            row_total: Vec::new(),
        };
        let ones = vec![1.0; mesh.n_elements()];
        f.row_total = (0..mesh.n_elements())
            .map(|e| f.raw_row_sum(e, &ones, |_| 1.0))
            .collect();
        if radius <= 0.0 {
            f.stencil = vec![(0, 0, 1.0)];
            f.row_total = ones;
        }
        f
    }

    #[inline]
    fn neighbour(&self, e: usize, dx: isize, dy: isize) -> Option<usize> {
        let x = (e % self.nx) as isize + dx;
        let y = (e / self.nx) as isize + dy;
        (x >= 0 && y >= 0 && x < self.nx as isize && y < self.ny as isize)
            .then(|| y as usize * self.nx + x as usize)
    }

    /// `sum_off w(off) * v[e + off] * s(e + off)` in canonical pair order.
    #[inline]
    fn raw_row_sum(&self, e: usize, v: &[f64], s: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for &(dx, dy, w) in &self.stencil {
            let right = self.neighbour(e, dx, dy).map(|j| v[j] * s(j));
            let pair = if dx == 0 {
                right.unwrap_or(0.0)
            } else {
                let left = self.neighbour(e, -dx, dy).map(|j| v[j] * s(j));
                match (left, right) {
                    (Some(a), Some(b)) => a + b,
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => continue,
                }
            };
            acc += w * pair;
        }
        acc
    }

    /// Sparse matrix form of `H`.
    pub fn matrix(&self) -> CsrMatrix {
        let ne = self.row_total.len();
        let mut t = Vec::new();
        for e in 0..ne {
            for &(dx, dy, w) in &self.stencil {
                let signs: &[isize] = if dx == 0 { &[1] } else { &[-1, 1] };
                for &sg in signs {
                    if let Some(j) = self.neighbour(e, sg * dx, dy) {
                        t.push((e, j, w / self.row_total[e]));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(ne, t)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|e| self.raw_row_sum(e, x, |_| 1.0) / self.row_total[e])
            .collect()
    }

    /// `H^T y`
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        // H_ij = w(j - i) / total_i and w is even in the offset, so
        // (H^T y)_j = sum_off w(off) y_{j+off} / total_{j+off}.
        (0..y.len())
            .map(|j| self.raw_row_sum(j, y, |i| 1.0 / self.row_total[i]))
            .collect()
    }
}

/// Parameters of the smoothed-Heaviside threshold projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub beta: f64,
    pub eta: f64,
}

impl ProjectionParams {
    pub fn new(beta: f64, eta: f64) -> Result<Self> {
        if !(beta > 0.0) || !(eta > 0.0 && eta < 1.0) {
            return Err(Error::config(format!(
                "projection needs beta > 0 and eta in (0, 1), got beta = {beta}, eta = {eta}"
            )));
        }
        Ok(ProjectionParams { beta, eta })
    }

    fn denominator(&self) -> f64 {
        (self.beta * (1.0 - self.eta)).tanh() + (self.beta * self.eta).tanh()
    }

    pub fn value(&self, x: f64) -> f64 {
        let (b, e) = (self.beta, self.eta);
        ((b * (x - e)).tanh() + (b * e).tanh()) / self.denominator()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let sech = 1.0 / (self.beta * (x - self.eta)).cosh();
        self.beta * sech * sech / self.denominator()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.value(v)).collect()
    }

    pub fn project_derivative(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.derivative(v)).collect()
    }

    /// Inverse of the projection on `[0, 1]` by bisection.
    pub fn inverse(&self, y: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.value(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// SIMP material interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub k0: f64,
    pub kmin: f64,
    pub c0: f64,
    pub cmin: f64,
    pub pk: f64,
    pub pc: f64,
}

impl Default for MaterialModel {
    fn default() -> Self {
        MaterialModel {
            k0: 3.0,
            kmin: 0.03,
            c0: 1.0,
            cmin: 0.5,
            pk: 3.0,
            pc: 2.0,
        }
    }
}

/// Per-element material values and their derivatives w.r.t. `chi_phys`.
#[derive(Debug, Clone, PartialEq)]
pub struct Materials {
    pub capacity: Vec<f64>,
    pub conductivity: Vec<f64>,
    pub d_capacity: Vec<f64>,
    pub d_conductivity: Vec<f64>,
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.k0 > self.kmin && self.kmin > 0.0 && self.c0 > self.cmin && self.cmin > 0.0) {
            return Err(Error::config(format!(
                "material model needs k0 > kmin > 0 and c0 > cmin > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn simp(&self, chi_phys: &[f64]) -> Materials {
        let n = chi_phys.len();
        let mut m = Materials {
            capacity: Vec::with_capacity(n),
            conductivity: Vec::with_capacity(n),
            d_capacity: Vec::with_capacity(n),
            d_conductivity: Vec::with_capacity(n),
        };
        let (dc, dk) = (self.c0 - self.cmin, self.k0 - self.kmin);
        for &x in chi_phys {
            m.capacity.push(self.cmin + dc * x.powf(self.pc));
            m.conductivity.push(self.kmin + dk * x.powf(self.pk));
            m.d_capacity.push(dc * self.pc * x.powf(self.pc - 1.0));
            m.d_conductivity.push(dk * self.pk * x.powf(self.pk - 1.0));
        }
        m
    }
}

/// Maps `d/d chi_phys` sensitivities back to the raw densities:
/// `H^T (P'(chi_fil) * grad_phys)`.
pub fn chain_rule_backward(
    grad_phys: &[f64],
    design: &DesignField,
    filter: &FilterOperator,
    projection: &ProjectionParams,
) -> Vec<f64> {
    let scaled: Vec<f64> = grad_phys
        .iter()
        .zip(&design.chi_fil)
        .map(|(g, &x)| g * projection.derivative(x))
        .collect();
    filter.apply_transpose(&scaled)
}

/// Area fraction of `chi_phys` and its gradient w.r.t. the raw densities.
pub fn volume_fraction(
    design: &DesignField,
    mesh: &Mesh,
    filter: &FilterOperator,
    projection: &ProjectionParams,
) -> (f64, Vec<f64>) {
    let cell = mesh.h * mesh.h / mesh.area();
    let value = design.chi_phys.iter().sum::<f64>() * cell;
    let uniform = vec![cell; design.len()];
    (value, chain_rule_backward(&uniform, design, filter, projection))
}

/// Area fraction only, for feasibility checks.
pub fn volume_value(chi_phys: &[f64], mesh: &Mesh) -> f64 {
    chi_phys.iter().sum::<f64>() * mesh.h * mesh.h / mesh.area()
}
