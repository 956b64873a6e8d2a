//! Method of Moving Asymptotes for one objective and one inequality
//! constraint on the unit box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmaConfig {
    pub s_init: f64,
    pub expand: f64,
    pub contract: f64,
    pub move_limit: f64,
    /// Asymptote distance bounds as multiples of the variable range.
    pub asymptote_min: f64,
    pub asymptote_max: f64,
    pub albefa: f64,
    pub raa0: f64,
}

impl Default for MmaConfig {
    fn default() -> Self {
        MmaConfig {
            s_init: 0.5,
            expand: 1.2,
            contract: 0.7,
            move_limit: 0.2,
            asymptote_min: 0.01,
            asymptote_max: 10.0,
            albefa: 0.1,
            raa0: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmaState {
    pub config: MmaConfig,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub x_old1: Vec<f64>,
    pub x_old2: Vec<f64>,
    pub iteration: usize,
}

impl MmaState {
    pub fn new(x0: &[f64], config: MmaConfig) -> Self {
        MmaState {
            config,
            low: vec![0.0; x0.len()],
            upp: vec![1.0; x0.len()],
            x_old1: x0.to_vec(),
            x_old2: x0.to_vec(),
            iteration: 0,
        }
    }
}

/// Objective and constraint data at the current design. The constraint
/// reads `f1 <= 0`.
#[derive(Debug, Clone, Copy)]
pub struct MmaInput<'a> {
    pub f0: f64,
    pub df0: &'a [f64],
    pub f1: f64,
    pub df1: &'a [f64],
}

/// Separable convex approximation around the current design.
struct Subproblem {
    low: Vec<f64>,
    upp: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p0: Vec<f64>,
    q0: Vec<f64>,
    p1: Vec<f64>,
    q1: Vec<f64>,
    b: f64,
}

impl Subproblem {
    fn minimiser(&self, lambda: f64) -> Vec<f64> {
        (0..self.low.len())
            .map(|i| {
                let p = (self.p0[i] + lambda * self.p1[i]).sqrt();
                let q = (self.q0[i] + lambda * self.q1[i]).sqrt();
                let x = (p * self.low[i] + q * self.upp[i]) / (p + q);
                x.clamp(self.alpha[i], self.beta[i])
            })
            .collect()
    }

    /// Approximate constraint minus its bound; non-positive when feasible.
    fn approx_constraint(&self, x: &[f64]) -> f64 {
        let s: f64 = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| self.p1[i] / (self.upp[i] - xi) + self.q1[i] / (xi - self.low[i]))
            .sum();
        s - self.b
    }
}

/// One MMA update of `x` in place of the previous design.
///
/// With `exact` supplied, the dual multiplier is chosen so that the true
/// constraint function (not its approximation) is non-positive.
pub fn mma_update(
    x: &[f64],
    input: MmaInput<'_>,
    state: &mut MmaState,
    exact: Option<&dyn Fn(&[f64]) -> f64>,
) -> Result<Vec<f64>> {
    let n = x.len();
    if input.df0.len() != n || input.df1.len() != n || state.low.len() != n {
        return Err(Error::config(format!(
            "MMA shape mismatch: {n} variables, gradients of length {} and {}",
            input.df0.len(),
            input.df1.len()
        )));
    }
    if let Some(i) = input.df0.iter().chain(input.df1).position(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("non-finite gradient entry {} passed to MMA", i % n)));
    }
    if !input.f0.is_finite() || !input.f1.is_finite() {
        return Err(Error::numerical("non-finite function value passed to MMA"));
    }
    let cfg = state.config;
    let (xmin, xmax) = (0.0, 1.0);
    let range = xmax - xmin;
    state.iteration += 1;

    for i in 0..n {
        if state.iteration <= 2 {
            state.low[i] = x[i] - cfg.s_init * range;
            state.upp[i] = x[i] + cfg.s_init * range;
        } else {
            let osc = (x[i] - state.x_old1[i]) * (state.x_old1[i] - state.x_old2[i]);
            let factor = if osc < 0.0 {
                cfg.contract
            } else if osc > 0.0 {
                cfg.expand
            } else {
                1.0
            };
            let low = x[i] - factor * (state.x_old1[i] - state.low[i]);
            let upp = x[i] + factor * (state.upp[i] - state.x_old1[i]);
            state.low[i] = low.clamp(x[i] - cfg.asymptote_max * range, x[i] - cfg.asymptote_min * range);
            state.upp[i] = upp.clamp(x[i] + cfg.asymptote_min * range, x[i] + cfg.asymptote_max * range);
        }
    }

    let xmami = range.max(1e-5);
    let mut sub = Subproblem {
        low: state.low.clone(),
        upp: state.upp.clone(),
        alpha: vec![0.0; n],
        beta: vec![0.0; n],
        p0: vec![0.0; n],
        q0: vec![0.0; n],
        p1: vec![0.0; n],
        q1: vec![0.0; n],
        b: 0.0,
    };
    let mut b = -input.f1;
    for i in 0..n {
        let (l, u) = (sub.low[i], sub.upp[i]);
        sub.alpha[i] = xmin.max(l + cfg.albefa * (x[i] - l)).max(x[i] - cfg.move_limit * range);
        sub.beta[i] = xmax.min(u - cfg.albefa * (u - x[i])).min(x[i] + cfg.move_limit * range);
        let (ux2, xl2) = ((u - x[i]).powi(2), (x[i] - l).powi(2));
        let reg = cfg.raa0 / xmami;
        let (g0, g1) = (input.df0[i], input.df1[i]);
        sub.p0[i] = ux2 * (1.001 * g0.max(0.0) + 0.001 * (-g0).max(0.0) + reg);
        sub.q0[i] = xl2 * (0.001 * g0.max(0.0) + 1.001 * (-g0).max(0.0) + reg);
        sub.p1[i] = ux2 * (1.001 * g1.max(0.0) + 0.001 * (-g1).max(0.0) + reg);
        sub.q1[i] = xl2 * (0.001 * g1.max(0.0) + 1.001 * (-g1).max(0.0) + reg);
        b += sub.p1[i] / (u - x[i]) + sub.q1[i] / (x[i] - l);
    }
    sub.b = b;

    let residual = |lambda: f64| -> (Vec<f64>, f64) {
        let xs = sub.minimiser(lambda);
        let r = match exact {
            Some(f) => f(&xs),
            None => sub.approx_constraint(&xs),
        };
        (xs, r)
    };

    let (x0, r0) = residual(0.0);
    let x_new = if r0 <= 0.0 {
        x0
    } else {
        let mut hi = 1.0;
        let (mut x_hi, mut r_hi) = residual(hi);
        let mut doublings = 0;
        while r_hi > 0.0 {
            doublings += 1;
            if doublings > 200 || !r_hi.is_finite() {
                return Err(Error::numerical(format!(
                    "MMA dual bisection failed to bracket: constraint residual {r0:e} at multiplier 0, \
                     {r_hi:e} at multiplier {hi:e}"
                )));
            }
            hi *= 2.0;
            (x_hi, r_hi) = residual(hi);
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (xm, rm) = residual(mid);
            if rm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                x_hi = xm;
            }
        }
        x_hi
    };

    state.x_old2 = std::mem::replace(&mut state.x_old1, x.to_vec());
    Ok(x_new)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(x: &[f64], f0: f64, df0: &[f64], f1: f64, df1: &[f64], st: &mut MmaState) -> Vec<f64> {
        mma_update(x, MmaInput { f0, df0, f1, df1 }, st, None).unwrap()
    }

    #[test]
    fn flat_objective_leaves_design_unchanged() {
        let x = vec![0.3, 0.7, 0.5];
        let mut st = MmaState::new(&x, MmaConfig::default());
        let y = step(&x, 1.0, &[0.0; 3], -0.1, &[0.3; 3], &mut st);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn quadratic_run(config: MmaConfig) -> f64 {
        let mut x = vec![0.9];
        let mut st = MmaState::new(&x, config);
        for _ in 0..30 {
            let f = (x[0] - 0.2).powi(2);
            let df = 2.0 * (x[0] - 0.2);
            x = step(&x, f, &[df], -1.0, &[0.0], &mut st);
        }
        x[0]
    }

    #[test]
    fn converges_on_one_dimensional_quadratic() {
        // The default asymptote floor bounds the step near the optimum, so
        // the iterates settle into a cycle of roughly that width.
        let x = quadratic_run(MmaConfig::default());
        assert!((x - 0.2).abs() < 1e-2, "{x}");
        let x = quadratic_run(MmaConfig {
            asymptote_min: 1e-4,
            ..MmaConfig::default()
        });
        assert!((x - 0.2).abs() < 1e-3, "{x}");
    }

    #[test]
    fn active_volume_is_met_exactly() {
        let n = 10;
        let x = vec![0.4; n];
        let a_max = 0.5;
        let vol = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let constraint = |x: &[f64]| vol(x) - a_max;
        let mut st = MmaState::new(&x, MmaConfig::default());
        let df0 = vec![-1.0; n];
        let df1 = vec![1.0 / n as f64; n];
        let y = mma_update(
            &x,
            MmaInput {
                f0: 1.0,
                df0: &df0,
                f1: constraint(&x),
                df1: &df1,
            },
            &mut st,
            Some(&constraint),
        )
        .unwrap();
        assert!(constraint(&y) <= 0.0);
        assert!((vol(&y) - a_max).abs() <= 1e-6, "{}", vol(&y));
    }

    #[test]
    fn respects_box_and_move_limit() {
        let x = vec![0.05, 0.5, 0.95];
        let mut st = MmaState::new(&x, MmaConfig::default());
        let y = step(&x, 0.0, &[10.0, -10.0, -10.0], -1.0, &[0.0; 3], &mut st);
        for (a, b) in x.iter().zip(&y) {
            assert!((0.0..=1.0).contains(b));
            assert!((a - b).abs() <= 0.2 + 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_fatal() {
        let x = vec![0.5; 2];
        let mut st = MmaState::new(&x, MmaConfig::default());
        let r = mma_update(
            &x,
            MmaInput {
                f0: 0.0,
                df0: &[f64::NAN, 0.0],
                f1: -1.0,
                df1: &[0.0, 0.0],
            },
            &mut st,
            None,
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn infeasible_bound_fails_to_bracket() {
        let x = vec![0.9; 4];
        let mut st = MmaState::new(&x, MmaConfig::default());
        let constraint = |x: &[f64]| x.iter().sum::<f64>() / 4.0 - 0.1;
        let r = mma_update(
            &x,
            MmaInput {
                f0: 0.0,
                df0: &[0.0; 4],
                f1: constraint(&x),
                df1: &[0.25; 4],
            },
            &mut st,
            Some(&constraint),
        );
        let e = r.unwrap_err();
        assert!(e.to_string().contains("bracket"), "{e}");
    }

    #[test]
    fn deterministic() {
        let x: Vec<f64> = (0..20).map(|i| 0.1 + 0.04 * i as f64).collect();
        let df0: Vec<f64> = (0..20).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let df1 = vec![0.05; 20];
        let run = || {
            let mut st = MmaState::new(&x, MmaConfig::default());
            let a = step(&x, 1.0, &df0, 0.01, &df1, &mut st);
            step(&a, 1.0, &df0, 0.01, &df1, &mut st)
        };
        assert_eq!(run(), run());
    }
}
