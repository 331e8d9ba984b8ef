//! Event-driven path simulation and reproducible ensembles.
//!
//! Shock arrivals are a superposition of three independent Poisson processes
//! whose intensities never depend on the state or the levers. A path therefore
//! splits into two independent stages: sampling the shock schedule from the
//! path's random stream, and walking that schedule through the exact flow.
//! The walk stops at every shock and every grid time, so recorded values are
//! never interpolated.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    composite_index, effective_params, CapitalState, Component, EffectiveParams, FlowMap, ModelParams, Weights,
};
use crate::rng::path_rng;
use crate::scenario::ScenarioSpec;

/// Crisis threshold on the composite index.
pub const K_STAR: f64 = 40.0;

fn default_k_star() -> f64 {
    K_STAR
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_paths: usize,
    /// Years.
    pub horizon: f64,
    /// Spacing of the output grid, in years.
    pub record_dt: f64,
    pub master_seed: u64,
    #[serde(default = "default_k_star")]
    pub k_star: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_paths: 5000,
            horizon: 10.0,
            record_dt: 0.1,
            master_seed: 42,
            k_star: K_STAR,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "must be at least 1"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::param("horizon", format!("{} must be > 0", self.horizon)));
        }
        if !(self.record_dt > 0.0 && self.record_dt <= self.horizon) {
            return Err(Error::param(
                "record_dt",
                format!("{} must be within (0, horizon]", self.record_dt),
            ));
        }
        if !self.k_star.is_finite() {
            return Err(Error::param("k_star", "must be finite"));
        }
        Ok(())
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.horizon, self.record_dt)
    }
}

/// Output times `0 = t_0 < ... < t_m = horizon`, spaced `record_dt` apart except
/// possibly the last interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, record_dt: f64) -> Self {
        // Tolerate horizons that are a multiple of record_dt up to rounding.
        let steps = ((horizon / record_dt) - 1e-9).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * record_dt).collect();
        times.push(horizon);
        TimeGrid { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
}

/// A shock as it was applied: the effective (lever-cushioned) magnitude
/// subtracted from `component` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockEvent {
    pub time: f64,
    pub component: Component,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub grid: Vec<f64>,
    pub k_series: Vec<f64>,
    pub terminal_state: CapitalState,
    pub shock_log: Vec<ShockEvent>,
}

/// Draws the next arrival of the superposed shock process.
///
/// Always consumes exactly two uniforms when any rate is positive (one for the
/// waiting time, one for the component), so streams stay aligned across runs
/// that share rates.
pub fn sample_next_shock<R: Rng + ?Sized>(rates: [f64; 3], rng: &mut R) -> Option<(Component, f64)> {
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u_wait: f64 = rng.random();
    let u_pick: f64 = rng.random();
    let wait = -(1.0 - u_wait).ln() / total;

    let target = u_pick * total;
    let mut cumulative = 0.0;
    let mut chosen = None;
    for (component, rate) in Component::ALL.into_iter().zip(rates) {
        if rate <= 0.0 {
            continue;
        }
        cumulative += rate;
        chosen = Some(component);
        if target < cumulative {
            break;
        }
    }
    chosen.map(|c| (c, wait))
}

/// Subtracts `magnitude` from one component, flooring at zero.
pub fn apply_shock(state: &CapitalState, component: Component, magnitude: f64) -> CapitalState {
    let mut next = *state;
    let slot = next.get_mut(component);
    *slot = (*slot - magnitude).max(0.0);
    next
}

/// Arrival times and components of every shock before `horizon`.
pub fn sample_shock_schedule<R: Rng + ?Sized>(rates: [f64; 3], horizon: f64, rng: &mut R) -> Vec<(f64, Component)> {
    let mut schedule = Vec::new();
    let mut t = 0.0;
    while let Some((component, wait)) = sample_next_shock(rates, rng) {
        t += wait;
        if t >= horizon {
            break;
        }
        schedule.push((t, component));
    }
    schedule
}

/// Exact path integrator for one effective parameter set on one grid.
///
/// Flow maps for the grid intervals are built once and reused by every path.
#[derive(Debug, Clone)]
pub struct PathSimulator {
    eff: EffectiveParams,
    weights: Weights,
    grid: TimeGrid,
    steps: Vec<FlowMap>,
}

impl PathSimulator {
    pub fn new(eff: EffectiveParams, weights: Weights, grid: TimeGrid) -> Self {
        let steps = grid
            .times()
            .windows(2)
            .map(|w| FlowMap::new(&eff, w[1] - w[0]))
            .collect();
        PathSimulator {
            eff,
            weights,
            grid,
            steps,
        }
    }

    pub fn effective(&self) -> &EffectiveParams {
        &self.eff
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Walks `init` through `shocks` (sorted by time, all before the horizon),
    /// calling `record` with the state at every grid time.
    fn walk<F>(&self, init: &CapitalState, shocks: &[(f64, Component, f64)], mut record: F) -> CapitalState
    where
        F: FnMut(usize, &CapitalState),
    {
        let times = self.grid.times();
        let mut state = *init;
        record(0, &state);
        let mut pending = shocks.iter().peekable();
        for (k, step) in self.steps.iter().enumerate() {
            let end = times[k + 1];
            let mut t = times[k];
            let mut interrupted = false;
            while let Some(&&(at, component, magnitude)) = pending.peek() {
                if at >= end {
                    break;
                }
                state = FlowMap::new(&self.eff, at - t).apply(&state);
                state = apply_shock(&state, component, magnitude);
                t = at;
                interrupted = true;
                pending.next();
            }
            state = if interrupted {
                FlowMap::new(&self.eff, end - t).apply(&state)
            } else {
                step.apply(&state)
            };
            record(k + 1, &state);
        }
        state
    }

    pub fn simulate<R: Rng + ?Sized>(&self, init: &CapitalState, rng: &mut R) -> PathRecord {
        let schedule = sample_shock_schedule(self.eff.shock_rates(), self.grid.horizon(), rng);
        let shocks: Vec<_> = schedule
            .iter()
            .map(|&(t, c)| (t, c, self.eff.magnitude(c)))
            .collect();
        self.replay_inner(init, &shocks)
    }

    /// Re-runs a path from its shock log.
    pub fn replay(&self, init: &CapitalState, log: &[ShockEvent]) -> PathRecord {
        let shocks: Vec<_> = log.iter().map(|e| (e.time, e.component, e.magnitude)).collect();
        self.replay_inner(init, &shocks)
    }

    fn replay_inner(&self, init: &CapitalState, shocks: &[(f64, Component, f64)]) -> PathRecord {
        let mut k_series = vec![0.0; self.grid.len()];
        let terminal_state = self.walk(init, shocks, |k, s| k_series[k] = composite_index(s, &self.weights));
        PathRecord {
            grid: self.grid.times().to_vec(),
            k_series,
            terminal_state,
            shock_log: shocks
                .iter()
                .map(|&(time, component, magnitude)| ShockEvent {
                    time,
                    component,
                    magnitude,
                })
                .collect(),
        }
    }

    /// Terminal state only; same result as [`simulate`](Self::simulate) without the bookkeeping.
    pub fn simulate_terminal<R: Rng + ?Sized>(&self, init: &CapitalState, rng: &mut R) -> CapitalState {
        let schedule = sample_shock_schedule(self.eff.shock_rates(), self.grid.horizon(), rng);
        let shocks: Vec<_> = schedule
            .iter()
            .map(|&(t, c)| (t, c, self.eff.magnitude(c)))
            .collect();
        self.walk(init, &shocks, |_, _| {})
    }
}

/// Simulates a single path on the grid described by `horizon` and `record_dt`.
pub fn simulate_path<R: Rng + ?Sized>(
    eff: &EffectiveParams,
    init: &CapitalState,
    weights: &Weights,
    horizon: f64,
    record_dt: f64,
    rng: &mut R,
) -> PathRecord {
    PathSimulator::new(*eff, *weights, TimeGrid::new(horizon, record_dt)).simulate(init, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub scenario: String,
    pub levers: crate::model::LeverVector,
    pub config: RunConfig,
    pub grid: Vec<f64>,
    pub terminal_k: Vec<f64>,
    pub terminal_states: Vec<CapitalState>,
    /// Smallest grid-sampled K of each path.
    pub min_k: Vec<f64>,
    pub mean_k_series: Vec<f64>,
    pub p05_series: Vec<f64>,
    pub p95_series: Vec<f64>,
    /// Fraction of paths with `K < k_star` at each grid time.
    pub crisis_curve: Vec<f64>,
}

impl EnsembleResult {
    pub fn n_paths(&self) -> usize {
        self.terminal_k.len()
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn simulator_for(scenario: &ScenarioSpec, params: &ModelParams) -> Result<PathSimulator> {
    params.validate()?;
    scenario.run.validate()?;
    let eff = effective_params(params, &scenario.levers)?;
    Ok(PathSimulator::new(eff, params.weights, scenario.run.grid()))
}

/// Runs every path of a scenario on the current rayon pool.
///
/// Path `i` draws from [`path_rng`]`(master_seed, i)`; results are gathered in
/// path order, so the output does not depend on the worker count.
pub fn run_ensemble(scenario: &ScenarioSpec, params: &ModelParams) -> Result<EnsembleResult> {
    let sim = simulator_for(scenario, params)?;
    let run = &scenario.run;
    let paths: Vec<PathRecord> = (0..run.n_paths as u64)
        .into_par_iter()
        .map(|i| sim.simulate(&params.init, &mut path_rng(run.master_seed, i)))
        .collect();
    Ok(aggregate(scenario, &paths))
}

/// [`run_ensemble`] on a dedicated pool of `threads` workers.
pub fn run_ensemble_with_threads(
    scenario: &ScenarioSpec,
    params: &ModelParams,
    threads: usize,
) -> Result<EnsembleResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_ensemble(scenario, params))
}

/// Terminal states only, for objective evaluation where series are not needed.
pub fn run_terminal(scenario: &ScenarioSpec, params: &ModelParams) -> Result<Vec<CapitalState>> {
    let sim = simulator_for(scenario, params)?;
    let run = &scenario.run;
    Ok((0..run.n_paths as u64)
        .into_par_iter()
        .map(|i| sim.simulate_terminal(&params.init, &mut path_rng(run.master_seed, i)))
        .collect())
}

/// The first `count` paths of a scenario's ensemble, identical to the paths
/// [`run_ensemble`] aggregates.
pub fn sample_paths(scenario: &ScenarioSpec, params: &ModelParams, count: usize) -> Result<Vec<PathRecord>> {
    let sim = simulator_for(scenario, params)?;
    let n = count.min(scenario.run.n_paths) as u64;
    Ok((0..n)
        .map(|i| sim.simulate(&params.init, &mut path_rng(scenario.run.master_seed, i)))
        .collect())
}

fn aggregate(scenario: &ScenarioSpec, paths: &[PathRecord]) -> EnsembleResult {
    let run = scenario.run;
    let grid = run.grid();
    let n = paths.len();
    let m = grid.len();

    let mut mean_k_series = Vec::with_capacity(m);
    let mut p05_series = Vec::with_capacity(m);
    let mut p95_series = Vec::with_capacity(m);
    let mut crisis_curve = Vec::with_capacity(m);
    let mut column = vec![0.0; n];
    for k in 0..m {
        for (slot, path) in column.iter_mut().zip(paths) {
            *slot = path.k_series[k];
        }
        mean_k_series.push(column.iter().sum::<f64>() / n as f64);
        crisis_curve.push(column.iter().filter(|&&v| v < run.k_star).count() as f64 / n as f64);
        column.sort_by(f64::total_cmp);
        p05_series.push(quantile_sorted(&column, 0.05));
        p95_series.push(quantile_sorted(&column, 0.95));
    }

    EnsembleResult {
        scenario: scenario.name.clone(),
        levers: scenario.levers,
        config: run,
        grid: grid.times().to_vec(),
        terminal_k: paths.iter().map(|p| p.k_series[m - 1]).collect(),
        terminal_states: paths.iter().map(|p| p.terminal_state).collect(),
        min_k: paths
            .iter()
            .map(|p| p.k_series.iter().copied().fold(f64::INFINITY, f64::min))
            .collect(),
        mean_k_series,
        p05_series,
        p95_series,
        crisis_curve,
    }
}
