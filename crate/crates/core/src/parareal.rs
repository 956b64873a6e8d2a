//! Generic Parareal iteration over a chunked time interval.
//!
//! Chunk `c` spans `[tau_c, tau_{c+1}]`. Forward problems map the state at
//! `c` to `c + 1`; reverse problems map `c + 1` to `c`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vector-space operations the correction step needs.
pub trait PararealState: Clone + Send + Sync {
    fn zeros_like(&self) -> Self;
    fn add_assign(&mut self, other: &Self);
    fn sub_assign(&mut self, other: &Self);
    fn norm(&self) -> f64;
}

/// Fine and coarse propagators over each chunk.
pub trait Propagator: Sync {
    type State: PararealState;
    type Record: Send;

    fn n_chunks(&self) -> usize;

    /// Fine solve over `chunk`; with `record`, also returns the interior
    /// states it passed through.
    fn fine(&self, chunk: usize, input: &Self::State, record: bool) -> Result<(Self::State, Vec<Self::Record>)>;

    fn coarse(&self, chunk: usize, input: &Self::State) -> Result<Self::State>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// `Zero` replaces the coarse propagator by the zero map, which turns the
/// correction into `u_{n+1} = F(u_n)` on the previous iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseMode {
    Standard,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PararealConfig {
    pub direction: Direction,
    pub coarse: CoarseMode,
    pub iterations: usize,
    /// Keep the interior states of the last fine sweep.
    pub record: bool,
}

/// Initial iterate at every coarse point.
#[derive(Debug, Clone)]
pub enum Guess<S> {
    CoarseSweep,
    Warm(Vec<S>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationDiagnostics {
    /// `max_n ||u^{k+1}_n - u^k_n||`.
    pub correction_norm: f64,
    pub fine_seconds: f64,
    pub coarse_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PararealSolution<S, R> {
    pub states: Vec<S>,
    /// Per chunk, the interior states of the last fine sweep (empty when
    /// not recording or when no iteration ran).
    pub records: Vec<Vec<R>>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Thread pool the fine solves run on.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::config("worker count must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        Ok(WorkerPool { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("workers", &self.workers).finish()
    }
}

fn anchor_index(direction: Direction, n: usize) -> usize {
    match direction {
        Direction::Forward => 0,
        Direction::Reverse => n,
    }
}

fn wrap(chunk: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Chunk {
        chunk,
        source: Box::new(e),
    }
}

/// Sequential coarse sweep from the anchor.
pub fn coarse_sweep<P: Propagator>(prop: &P, anchor: &P::State, direction: Direction) -> Result<Vec<P::State>> {
    let n = prop.n_chunks();
    let mut states = vec![anchor.clone(); n + 1];
    match direction {
        Direction::Forward => {
            for c in 0..n {
                states[c + 1] = prop.coarse(c, &states[c]).map_err(wrap(c))?;
            }
        }
        Direction::Reverse => {
            for c in (0..n).rev() {
                states[c] = prop.coarse(c, &states[c + 1]).map_err(wrap(c))?;
            }
        }
    }
    Ok(states)
}

/// One Parareal iteration: parallel fine solves on the previous iterate,
/// then the sequential corrected sweep.
pub fn iterate<P: Propagator>(
    prop: &P,
    old: &[P::State],
    config: &PararealConfig,
    pool: &WorkerPool,
) -> Result<(Vec<P::State>, Vec<Vec<P::Record>>, IterationDiagnostics)> {
    let n = prop.n_chunks();
    if old.len() != n + 1 {
        return Err(Error::config(format!("expected {} states, got {}", n + 1, old.len())));
    }
    let input = |c: usize| match config.direction {
        Direction::Forward => &old[c],
        Direction::Reverse => &old[c + 1],
    };
    let zero = config.coarse == CoarseMode::Zero;

    let t0 = Instant::now();
    let results: Vec<Result<(P::State, Vec<P::Record>, Option<P::State>)>> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|c| {
                let (f, rec) = prop.fine(c, input(c), config.record).map_err(wrap(c))?;
                let g = if zero {
                    None
                } else {
                    Some(prop.coarse(c, input(c)).map_err(wrap(c))?)
                };
                Ok((f, rec, g))
            })
            .collect()
    });
    let fine_seconds = t0.elapsed().as_secs_f64();

    let mut jumps = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for r in results {
        let (f, rec, g) = r?;
        records.push(rec);
        jumps.push(match g {
            Some(g) => {
                let mut d = f;
                d.sub_assign(&g);
                d
            }
            None => f,
        });
    }

    let t1 = Instant::now();
    let mut new = old.to_vec();
    let step = |c: usize, from: &P::State| -> Result<P::State> {
        if zero {
            Ok(jumps[c].clone())
        } else {
            let mut s = prop.coarse(c, from).map_err(wrap(c))?;
            s.add_assign(&jumps[c]);
            Ok(s)
        }
    };
    match config.direction {
        Direction::Forward => {
            for c in 0..n {
                new[c + 1] = step(c, &new[c])?;
            }
        }
        Direction::Reverse => {
            for c in (0..n).rev() {
                new[c] = step(c, &new[c + 1])?;
            }
        }
    }
    let coarse_seconds = t1.elapsed().as_secs_f64();

    let correction_norm = new
        .iter()
        .zip(old)
        .map(|(a, b)| {
            let mut d = a.clone();
            d.sub_assign(b);
            d.norm()
        })
        .fold(0.0, f64::max);
    if !correction_norm.is_finite() {
        return Err(Error::numerical("Parareal correction produced non-finite values"));
    }
    Ok((
        new,
        records,
        IterationDiagnostics {
            correction_norm,
            fine_seconds,
            coarse_seconds,
        },
    ))
}

/// Runs `config.iterations` Parareal iterations from `guess`.
pub fn run<P: Propagator>(
    prop: &P,
    anchor: &P::State,
    guess: Guess<P::State>,
    config: &PararealConfig,
    pool: &WorkerPool,
) -> Result<PararealSolution<P::State, P::Record>> {
    let n = prop.n_chunks();
    let mut states = match guess {
        Guess::CoarseSweep => coarse_sweep(prop, anchor, config.direction)?,
        Guess::Warm(mut s) => {
            if s.len() != n + 1 {
                return Err(Error::config(format!(
                    "warm restart has {} states, expected {}",
                    s.len(),
                    n + 1
                )));
            }
            s[anchor_index(config.direction, n)] = anchor.clone();
            s
        }
    };
    let mut records = Vec::new();
    let mut diagnostics = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (next, rec, diag) = iterate(prop, &states, config, pool)?;
        states = next;
        records = rec;
        diagnostics.push(diag);
    }
    Ok(PararealSolution {
        states,
        records,
        diagnostics,
    })
}

/// Direct parallel update `u_{n+1} = F(u_n^prev)` with the anchor pinned.
pub fn direct_update<P: Propagator>(
    prop: &P,
    previous: &[P::State],
    anchor: &P::State,
    config: &PararealConfig,
    pool: &WorkerPool,
) -> Result<(Vec<P::State>, Vec<Vec<P::Record>>)> {
    let n = prop.n_chunks();
    if previous.len() != n + 1 {
        return Err(Error::config(format!("expected {} states, got {}", n + 1, previous.len())));
    }
    let input = |c: usize| match config.direction {
        Direction::Forward => &previous[c],
        Direction::Reverse => &previous[c + 1],
    };
    let results: Vec<Result<(P::State, Vec<P::Record>)>> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|c| prop.fine(c, input(c), config.record).map_err(wrap(c)))
            .collect()
    });
    let mut states = previous.to_vec();
    states[anchor_index(config.direction, n)] = anchor.clone();
    let mut records = Vec::with_capacity(n);
    for (c, r) in results.into_iter().enumerate() {
        let (f, rec) = r?;
        records.push(rec);
        match config.direction {
            Direction::Forward => states[c + 1] = f,
            Direction::Reverse => states[c] = f,
        }
    }
    Ok((states, records))
}
