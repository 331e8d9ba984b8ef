//! Fitting base parameters to target scenario statistics.
//!
//! The objective simulates all six canonical scenarios with common random
//! numbers (fixed master seed, fixed per-path streams), so it is a
//! deterministic function of the parameters. The search is a bounded
//! Nelder-Mead simplex in log-scaled box coordinates with restarts around the
//! incumbent.

use std::collections::BTreeMap;
use std::fmt;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_terminal, RunConfig, K_STAR};
use crate::error::{Error, Result};
use crate::metrics::{terminal_stats_of, TerminalStats};
use crate::model::{composite_index, CapitalState, LeverGains, ModelParams, Weights};
use crate::scenario::{canonical, CANONICAL};

/// Loss reported for parameter sets the model rejects.
pub const INVALID_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRow {
    pub scenario: &'static str,
    pub mean_k: f64,
    pub cv_pct: f64,
    pub crisis_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TargetRowFile {
    scenario: String,
    mean_k: f64,
    cv_pct: f64,
    crisis_pct: f64,
}

/// Per-scenario `(mean K, CV %, crisis %)` targets for the six canonical scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    rows: Vec<TargetRow>,
}

#[derive(Serialize, Deserialize)]
struct TargetsFile {
    scenarios: Vec<TargetRowFile>,
}

impl CalibrationTargets {
    /// The published six-scenario table.
    pub fn table1() -> Self {
        let row = |scenario, mean_k, cv_pct, crisis_pct| TargetRow {
            scenario,
            mean_k,
            cv_pct,
            crisis_pct,
        };
        CalibrationTargets {
            rows: vec![
                row("baseline", 53.35, 10.3, 0.64),
                row("dev_expertise", 68.19, 8.6, 0.00),
                row("org_memory", 59.32, 10.1, 0.02),
                row("process", 58.30, 10.4, 0.10),
                row("ecosystem", 58.15, 9.4, 0.06),
                row("full_klrm", 87.39, 7.7, 0.00),
            ],
        }
    }

    /// Builds targets from rows in any order; every canonical scenario must appear exactly once.
    pub fn from_rows(rows: impl IntoIterator<Item = (String, f64, f64, f64)>) -> Result<Self> {
        let mut by_name = BTreeMap::new();
        for (name, mean_k, cv_pct, crisis_pct) in rows {
            let Some(&canon) = CANONICAL.iter().find(|c| **c == name) else {
                return Err(Error::param("scenario", format!("`{name}` is not a canonical scenario")));
            };
            if !(mean_k > 0.0 && mean_k.is_finite()) {
                return Err(Error::param(format!("{name}.mean_k"), format!("{mean_k} must be positive")));
            }
            for (field, v) in [("cv_pct", cv_pct), ("crisis_pct", crisis_pct)] {
                if !(v.is_finite() && (0.0..=100.0).contains(&v)) {
                    return Err(Error::param(format!("{name}.{field}"), format!("{v} is not a percentage")));
                }
            }
            let row = TargetRow {
                scenario: canon,
                mean_k,
                cv_pct,
                crisis_pct,
            };
            if by_name.insert(canon, row).is_some() {
                return Err(Error::param("scenario", format!("`{name}` listed twice")));
            }
        }
        let rows: Vec<TargetRow> = CANONICAL.iter().filter_map(|n| by_name.get(n).copied()).collect();
        if rows.len() != CANONICAL.len() {
            let missing: Vec<_> = CANONICAL.iter().filter(|n| !by_name.contains_key(*n)).collect();
            return Err(Error::param("scenarios", format!("missing targets for {missing:?}")));
        }
        Ok(CalibrationTargets { rows })
    }

    pub fn rows(&self) -> &[TargetRow] {
        &self.rows
    }

    pub fn get(&self, scenario: &str) -> Option<&TargetRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TargetsFile = serde_json::from_str(text)?;
        Self::from_rows(
            file.scenarios
                .into_iter()
                .map(|r| (r.scenario, r.mean_k, r.cv_pct, r.crisis_pct)),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TargetsFile {
            scenarios: self
                .rows
                .iter()
                .map(|r| TargetRowFile {
                    scenario: r.scenario.to_string(),
                    mean_k: r.mean_k,
                    cv_pct: r.cv_pct,
                    crisis_pct: r.crisis_pct,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Targets equal to the statistics `params` produce under `eval`.
    pub fn simulated(params: &ModelParams, eval: &EvalConfig) -> Result<Self> {
        let stats = scenario_stats(params, eval)?;
        Self::from_rows(
            CANONICAL
                .iter()
                .zip(stats)
                .map(|(name, s)| (name.to_string(), s.mean, s.cv_pct(), s.crisis_pct())),
        )
    }
}

/// A parameter the search may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParam {
    AlphaH,
    DeltaH,
    Beta,
    GammaS,
    AlphaR,
    DeltaR,
    NuH,
    NuS,
    NuR,
    JH,
    JS,
    JR,
    H0,
    S0,
    R0,
    GP,
    GM,
    CM,
    GPr,
    CPr,
    GR,
    CR,
}

impl FreeParam {
    pub const BASE: [FreeParam; 15] = [
        FreeParam::AlphaH,
        FreeParam::DeltaH,
        FreeParam::Beta,
        FreeParam::GammaS,
        FreeParam::AlphaR,
        FreeParam::DeltaR,
        FreeParam::NuH,
        FreeParam::NuS,
        FreeParam::NuR,
        FreeParam::JH,
        FreeParam::JS,
        FreeParam::JR,
        FreeParam::H0,
        FreeParam::S0,
        FreeParam::R0,
    ];

    pub const GAINS: [FreeParam; 7] = [
        FreeParam::GP,
        FreeParam::GM,
        FreeParam::CM,
        FreeParam::GPr,
        FreeParam::CPr,
        FreeParam::GR,
        FreeParam::CR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FreeParam::AlphaH => "alpha_h",
            FreeParam::DeltaH => "delta_h",
            FreeParam::Beta => "beta",
            FreeParam::GammaS => "gamma_s",
            FreeParam::AlphaR => "alpha_r",
            FreeParam::DeltaR => "delta_r",
            FreeParam::NuH => "nu_h",
            FreeParam::NuS => "nu_s",
            FreeParam::NuR => "nu_r",
            FreeParam::JH => "j_h",
            FreeParam::JS => "j_s",
            FreeParam::JR => "j_r",
            FreeParam::H0 => "h0",
            FreeParam::S0 => "s0",
            FreeParam::R0 => "r0",
            FreeParam::GP => "g_p",
            FreeParam::GM => "g_m",
            FreeParam::CM => "c_m",
            FreeParam::GPr => "g_pr",
            FreeParam::CPr => "c_pr",
            FreeParam::GR => "g_r",
            FreeParam::CR => "c_r",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        FreeParam::BASE
            .into_iter()
            .chain(FreeParam::GAINS)
            .find(|p| p.name() == name)
    }

    pub fn get(self, p: &ModelParams) -> f64 {
        match self {
            FreeParam::AlphaH => p.alpha_h,
            FreeParam::DeltaH => p.delta_h,
            FreeParam::Beta => p.beta,
            FreeParam::GammaS => p.gamma_s,
            FreeParam::AlphaR => p.alpha_r,
            FreeParam::DeltaR => p.delta_r,
            FreeParam::NuH => p.nu_h,
            FreeParam::NuS => p.nu_s,
            FreeParam::NuR => p.nu_r,
            FreeParam::JH => p.j_h,
            FreeParam::JS => p.j_s,
            FreeParam::JR => p.j_r,
            FreeParam::H0 => p.init.h,
            FreeParam::S0 => p.init.s,
            FreeParam::R0 => p.init.r,
            FreeParam::GP => p.gains.g_p,
            FreeParam::GM => p.gains.g_m,
            FreeParam::CM => p.gains.c_m,
            FreeParam::GPr => p.gains.g_pr,
            FreeParam::CPr => p.gains.c_pr,
            FreeParam::GR => p.gains.g_r,
            FreeParam::CR => p.gains.c_r,
        }
    }

    pub fn set(self, p: &mut ModelParams, v: f64) {
        let slot = match self {
            FreeParam::AlphaH => &mut p.alpha_h,
            FreeParam::DeltaH => &mut p.delta_h,
            FreeParam::Beta => &mut p.beta,
            FreeParam::GammaS => &mut p.gamma_s,
            FreeParam::AlphaR => &mut p.alpha_r,
            FreeParam::DeltaR => &mut p.delta_r,
            FreeParam::NuH => &mut p.nu_h,
            FreeParam::NuS => &mut p.nu_s,
            FreeParam::NuR => &mut p.nu_r,
            FreeParam::JH => &mut p.j_h,
            FreeParam::JS => &mut p.j_s,
            FreeParam::JR => &mut p.j_r,
            FreeParam::H0 => &mut p.init.h,
            FreeParam::S0 => &mut p.init.s,
            FreeParam::R0 => &mut p.init.r,
            FreeParam::GP => &mut p.gains.g_p,
            FreeParam::GM => &mut p.gains.g_m,
            FreeParam::CM => &mut p.gains.c_m,
            FreeParam::GPr => &mut p.gains.g_pr,
            FreeParam::CPr => &mut p.gains.c_pr,
            FreeParam::GR => &mut p.gains.g_r,
            FreeParam::CR => &mut p.gains.c_r,
        };
        *slot = v;
    }
}

impl fmt::Display for FreeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Box bounds for every free parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds {
    bounds: BTreeMap<FreeParam, (f64, f64)>,
}

impl Default for ParamBounds {
    fn default() -> Self {
        use FreeParam::*;
        let mut bounds = BTreeMap::new();
        for (p, lo, hi) in [
            (AlphaH, 0.1, 50.0),
            (AlphaR, 0.1, 50.0),
            (DeltaH, 0.01, 1.0),
            (GammaS, 0.01, 1.0),
            (DeltaR, 0.01, 1.0),
            (Beta, 0.001, 1.0),
            (NuH, 0.05, 5.0),
            (NuS, 0.05, 5.0),
            (NuR, 0.05, 5.0),
            (JH, 1.0, 40.0),
            (JS, 1.0, 40.0),
            (JR, 1.0, 40.0),
            (H0, 30.0, 90.0),
            (S0, 30.0, 90.0),
            (R0, 30.0, 90.0),
            (GP, 0.05, 3.0),
            (GM, 0.05, 3.0),
            (GR, 0.05, 3.0),
            (CM, 0.01, 1.0),
            (GPr, 0.01, 0.99),
            (CPr, 0.01, 1.0),
            (CR, 0.01, 1.0),
        ] {
            bounds.insert(p, (lo, hi));
        }
        ParamBounds { bounds }
    }
}

impl ParamBounds {
    pub fn get(&self, p: FreeParam) -> (f64, f64) {
        self.bounds[&p]
    }

    /// Overrides entries from a JSON object `{"alpha_h": [lo, hi], ...}`; unnamed entries keep defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, (f64, f64)> = serde_json::from_str(text)?;
        let mut bounds = ParamBounds::default();
        for (name, (lo, hi)) in raw {
            let p = FreeParam::from_name(&name)
                .ok_or_else(|| Error::param(name.clone(), "not a calibratable parameter"))?;
            bounds.bounds.insert(p, (lo, hi));
        }
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn to_json(&self) -> Result<String> {
        let raw: BTreeMap<&str, (f64, f64)> = self.bounds.iter().map(|(p, b)| (p.name(), *b)).collect();
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (p, &(lo, hi)) in &self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::param(p.name(), format!("bounds [{lo}, {hi}] are not an interval")));
            }
            if lo <= 0.0 {
                return Err(Error::param(p.name(), format!("lower bound {lo} must be positive")));
            }
            let ok = match p {
                FreeParam::H0 | FreeParam::S0 | FreeParam::R0 => hi <= crate::model::STATE_MAX,
                FreeParam::GPr => hi < 1.0,
                FreeParam::CM | FreeParam::CPr | FreeParam::CR => hi <= 1.0,
                _ => true,
            };
            if !ok {
                return Err(Error::param(p.name(), format!("upper bound {hi} breaks the model's range")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, params: &ModelParams, free: &[FreeParam]) -> bool {
        free.iter().all(|&p| {
            let (lo, hi) = self.get(p);
            (lo..=hi).contains(&p.get(params))
        })
    }
}

/// Simulation settings used inside the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_paths: usize,
    pub horizon: f64,
    pub record_dt: f64,
    pub master_seed: u64,
    pub k_star: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_paths: 2000,
            horizon: 10.0,
            record_dt: 0.1,
            master_seed: 42,
            k_star: K_STAR,
        }
    }
}

impl EvalConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            n_paths: self.n_paths,
            horizon: self.horizon,
            record_dt: self.record_dt,
            master_seed: self.master_seed,
            k_star: self.k_star,
        }
    }
}

/// Terminal statistics of the six canonical scenarios, in registry order.
pub fn scenario_stats(params: &ModelParams, eval: &EvalConfig) -> Result<Vec<TerminalStats>> {
    params.validate()?;
    let run = eval.run_config();
    CANONICAL
        .par_iter()
        .map(|name| {
            let spec = canonical(name, run)?;
            let terminal = run_terminal(&spec, params)?;
            let k: Vec<f64> = terminal.iter().map(|s| composite_index(s, &params.weights)).collect();
            terminal_stats_of(&k, eval.k_star)
        })
        .collect()
}

/// Sum over scenarios of squared relative mean error, squared CV error
/// (percentage points / 10) and squared crisis error (percentage points).
pub fn loss_from_stats(stats: &[TerminalStats], targets: &CalibrationTargets) -> f64 {
    stats
        .iter()
        .zip(targets.rows())
        .map(|(s, t)| {
            let mean_err = (s.mean - t.mean_k) / t.mean_k;
            let cv_err = (s.cv_pct() - t.cv_pct) / 10.0;
            let crisis_err = s.crisis_pct() - t.crisis_pct;
            mean_err * mean_err + cv_err * cv_err + crisis_err * crisis_err
        })
        .sum()
}

/// Which discrepancy the search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// [`loss_from_stats`].
    #[default]
    Squared,
    /// [`tolerance_loss_from_stats`].
    Tolerance,
}

/// Tolerance used to scale each error in [`tolerance_loss_from_stats`].
pub const MEAN_TOL_REL: f64 = 0.05;
pub const CV_TOL_PP: f64 = 2.0;
pub const CRISIS_TOL_PP: f64 = 0.6;
/// Tolerances (percentage points) on the Full vs Baseline gain, Dev vs
/// Baseline gain and Full vs Baseline CV reduction.
pub const FINDING_TOLS_PP: [f64; 3] = [5.0, 4.0, 6.0];

/// Every error divided by its reproduction tolerance, squared and summed.
///
/// Besides the per-scenario rows this adds the three headline comparisons
/// (Full and Dev gains over Baseline, Full's CV reduction), with their
/// targets derived from the target rows. A value below 1 means every term
/// sits inside its tolerance.
pub fn tolerance_loss_from_stats(stats: &[TerminalStats], targets: &CalibrationTargets) -> f64 {
    let mut loss: f64 = stats
        .iter()
        .zip(targets.rows())
        .map(|(s, t)| {
            let mean_err = (s.mean - t.mean_k) / t.mean_k / MEAN_TOL_REL;
            let cv_err = (s.cv_pct() - t.cv_pct) / CV_TOL_PP;
            let crisis_err = (s.crisis_pct() - t.crisis_pct) / CRISIS_TOL_PP;
            mean_err * mean_err + cv_err * cv_err + crisis_err * crisis_err
        })
        .sum();
    let index = |name: &str| targets.rows().iter().position(|r| r.scenario == name);
    if let (Some(b), Some(d), Some(f)) = (index("baseline"), index("dev_expertise"), index("full_klrm")) {
        let rows = targets.rows();
        let findings = |mean: &dyn Fn(usize) -> f64, cv: &dyn Fn(usize) -> f64| {
            [
                crate::metrics::improvement(mean(f), mean(b)),
                crate::metrics::improvement(mean(d), mean(b)),
                crate::metrics::cv_reduction(cv(f), cv(b)),
            ]
        };
        let got = findings(&|i| stats[i].mean, &|i| stats[i].cv);
        let want = findings(&|i| rows[i].mean_k, &|i| rows[i].cv_pct);
        for ((g, w), tol) in got.iter().zip(&want).zip(FINDING_TOLS_PP) {
            match (g, w) {
                (Ok(g), Ok(w)) => loss += ((g - w) / tol).powi(2),
                _ => return f64::INFINITY,
            }
        }
    }
    loss
}

/// Calibration loss; [`INVALID_LOSS`] when the model rejects `params`.
pub fn objective(params: &ModelParams, targets: &CalibrationTargets, eval: &EvalConfig) -> f64 {
    objective_with(LossKind::Squared, params, targets, eval)
}

pub fn objective_with(kind: LossKind, params: &ModelParams, targets: &CalibrationTargets, eval: &EvalConfig) -> f64 {
    match scenario_stats(params, eval) {
        Ok(stats) => {
            let loss = match kind {
                LossKind::Squared => loss_from_stats(&stats, targets),
                LossKind::Tolerance => tolerance_loss_from_stats(&stats, targets),
            };
            if loss.is_finite() {
                loss
            } else {
                INVALID_LOSS
            }
        }
        Err(_) => INVALID_LOSS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub evaluation: usize,
    pub loss: f64,
    pub best_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub eval: EvalConfig,
    /// Starting point; free parameters outside the bounds are clamped in.
    pub start: ModelParams,
    /// Also fit the seven lever gains.
    pub free_gains: bool,
    /// Stop as soon as the loss is at or below this value.
    pub target_loss: f64,
    /// Initial simplex edge in normalized coordinates.
    pub initial_step: f64,
    pub loss: LossKind,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            eval: EvalConfig::default(),
            start: default_start(),
            free_gains: false,
            target_loss: 0.0,
            initial_step: 0.3,
            loss: LossKind::Squared,
        }
    }
}

/// Interior starting point used when no other is supplied.
pub fn default_start() -> ModelParams {
    ModelParams {
        alpha_h: 10.0,
        delta_h: 0.15,
        beta: 0.04,
        gamma_s: 0.08,
        alpha_r: 8.0,
        delta_r: 0.15,
        nu_h: 0.5,
        nu_s: 0.5,
        nu_r: 0.5,
        j_h: 3.0,
        j_s: 3.0,
        j_r: 3.0,
        gains: LeverGains::default(),
        init: CapitalState {
            h: 55.0,
            s: 50.0,
            r: 55.0,
        },
        weights: Weights::default(),
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub params: ModelParams,
    pub loss: f64,
    pub evaluations: usize,
    /// Set when the search stopped because the budget ran out rather than on convergence.
    pub budget_exhausted: bool,
    pub log: Vec<LogEntry>,
}

/// Maps between model parameters and the unit cube the simplex moves in.
///
/// Coordinate `u` maps to `lo * (hi / lo)^u`, so every bound ratio gets the same resolution.
struct Space<'a> {
    free: Vec<FreeParam>,
    bounds: &'a ParamBounds,
    base: ModelParams,
}

impl Space<'_> {
    /// `p` with every free parameter clamped into its bounds.
    fn clamp(&self, p: &ModelParams) -> ModelParams {
        let mut out = *p;
        for &f in &self.free {
            let (lo, hi) = self.bounds.get(f);
            f.set(&mut out, f.get(p).clamp(lo, hi));
        }
        out
    }

    fn encode(&self, p: &ModelParams) -> Vec<f64> {
        self.free
            .iter()
            .map(|&f| {
                let (lo, hi) = self.bounds.get(f);
                let v = f.get(p).clamp(lo, hi);
                ((v / lo).ln() / (hi / lo).ln()).clamp(0.0, 1.0)
            })
            .collect()
    }

    fn decode(&self, u: &[f64]) -> ModelParams {
        let mut p = self.base;
        for (&f, &x) in self.free.iter().zip(u) {
            let (lo, hi) = self.bounds.get(f);
            let v = (lo * (hi / lo).powf(x.clamp(0.0, 1.0))).clamp(lo, hi);
            f.set(&mut p, v);
        }
        p
    }
}

struct Budgeted<'a> {
    space: Space<'a>,
    targets: &'a CalibrationTargets,
    eval: EvalConfig,
    budget: usize,
    used: usize,
    best: (Vec<f64>, ModelParams, f64),
    log: Vec<LogEntry>,
    target_loss: f64,
    loss: LossKind,
}

impl Budgeted<'_> {
    fn exhausted(&self) -> bool {
        self.used >= self.budget || self.best.2 <= self.target_loss
    }

    /// `None` once the budget is spent.
    fn eval(&mut self, u: &[f64]) -> Option<f64> {
        let u: Vec<f64> = u.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        let params = self.space.decode(&u);
        self.eval_at(u, params)
    }

    fn eval_at(&mut self, u: Vec<f64>, params: ModelParams) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        let loss = objective_with(self.loss, &params, self.targets, &self.eval);
        self.used += 1;
        if loss < self.best.2 {
            self.best = (u, params, loss);
            debug!("evaluation {}: new best loss {loss:.6}", self.used);
        }
        self.log.push(LogEntry {
            evaluation: self.used,
            loss,
            best_loss: self.best.2,
        });
        Some(loss)
    }
}

/// Bounded derivative-free search for parameters matching `targets`.
///
/// Deterministic given `seed` (which also fixes the common random numbers
/// unless `options.eval.master_seed` is set differently by the caller).
pub fn calibrate(
    targets: &CalibrationTargets,
    bounds: &ParamBounds,
    budget: usize,
    seed: u64,
    options: &CalibrationOptions,
) -> Result<CalibrationOutcome> {
    if budget == 0 {
        return Err(Error::InvalidInput("calibration budget must be at least 1".into()));
    }
    bounds.validate()?;
    let mut free = FreeParam::BASE.to_vec();
    if options.free_gains {
        free.extend(FreeParam::GAINS);
    }
    let space = Space {
        free,
        bounds,
        base: options.start,
    };
    let start = space.clamp(&options.start);
    let x0 = space.encode(&start);
    let mut state = Budgeted {
        space,
        targets,
        eval: options.eval,
        budget,
        used: 0,
        best: (x0.clone(), start, f64::INFINITY),
        log: Vec::new(),
        target_loss: options.target_loss,
        loss: options.loss,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut step = options.initial_step;
    let mut center = x0;
    let mut converged = false;
    if state.eval_at(center.clone(), start).is_some() {
        loop {
            let before = state.best.2;
            let simplex = initial_simplex(&center, step, &mut rng);
            if nelder_mead(&mut state, simplex).is_none() {
                break;
            }
            center = state.best.0.clone();
            // Shrink the restart scale when a restart brought no real improvement.
            if before - state.best.2 <= 1e-9 * before.max(1e-12) {
                step *= 0.5;
            }
            info!(
                "restart after {} evaluations, best loss {:.6}, step {step:.4}",
                state.used, state.best.2
            );
            if step < 1e-6 {
                converged = true;
                break;
            }
        }
    }

    let converged = converged || state.best.2 <= options.target_loss;
    Ok(CalibrationOutcome {
        params: state.best.1,
        loss: state.best.2,
        evaluations: state.used,
        budget_exhausted: !converged,
        log: state.log,
    })
}

/// Simplex around `center` with randomly signed, randomly ordered axis steps.
fn initial_simplex(center: &[f64], step: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = center.len();
    let mut simplex = vec![center.to_vec()];
    for i in 0..n {
        let mut v = center.to_vec();
        let scale = step * (0.5 + rng.random::<f64>());
        let mut delta = if rng.random::<bool>() { scale } else { -scale };
        if !(0.0..=1.0).contains(&(v[i] + delta)) {
            delta = -delta;
        }
        v[i] = (v[i] + delta).clamp(0.0, 1.0);
        simplex.push(v);
    }
    simplex
}

/// Adaptive-coefficient Nelder-Mead; returns `None` when the budget ran out.
fn nelder_mead(state: &mut Budgeted<'_>, simplex: Vec<Vec<f64>>) -> Option<()> {
    let n = simplex.len() - 1;
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    for v in simplex {
        let v: Vec<f64> = v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
        let f = state.eval(&v)?;
        pts.push((v, f));
    }

    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = pts[n].1 - pts[0].1;
        let size = pts[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < 1e-7 || spread <= 1e-12 * pts[0].1.abs().max(1e-30) {
            return Some(());
        }

        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / nf).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n].0)
                .map(|(c, w)| (c + t * (c - w)).clamp(0.0, 1.0))
                .collect()
        };

        let xr = along(alpha);
        let fr = state.eval(&xr)?;
        if fr < pts[0].1 {
            let xe = along(alpha * gamma);
            let fe = state.eval(&xe)?;
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < pts[n].1 {
                let xc = along(alpha * rho);
                let fc = state.eval(&xc)?;
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = state.eval(&xc)?;
                (xc, fc)
            };
            if fc < pts[n].1.min(fr) {
                pts[n] = (xc, fc);
            } else {
                let best = pts[0].0.clone();
                for (v, f) in pts.iter_mut().skip(1) {
                    *v = v.iter().zip(&best).map(|(x, b)| b + sigma * (x - b)).collect();
                    *f = state.eval(v)?;
                }
            }
        }
    }
}

/// Writes the calibration log as `evaluation,loss,best_loss`.
pub fn write_log<W: std::io::Write>(log: &[LogEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for entry in log {
        w.serialize(entry)?;
    }
    w.flush().map_err(|e| Error::Write {
        path: "calibration log".into(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_eval() -> EvalConfig {
        EvalConfig {
            n_paths: 200,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn table1_values() {
        let t = CalibrationTargets::table1();
        let b = t.get("baseline").unwrap();
        assert_eq!((b.mean_k, b.cv_pct, b.crisis_pct), (53.35, 10.3, 0.64));
        let f = t.get("full_klrm").unwrap();
        assert_eq!((f.mean_k, f.cv_pct, f.crisis_pct), (87.39, 7.7, 0.0));
        assert_eq!(t.get("process").unwrap().crisis_pct, 0.10);
        assert_eq!(t.get("ecosystem").unwrap().mean_k, 58.15);
    }

    #[test]
    fn targets_json_round_trip_and_errors() {
        let t = CalibrationTargets::table1();
        let back = CalibrationTargets::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(CalibrationTargets::from_json(r#"{"scenarios": []}"#).is_err());
        let bad = t.to_json().unwrap().replace("53.35", "-1.0");
        assert!(CalibrationTargets::from_json(&bad).is_err());
    }

    #[test]
    fn exact_targets_give_zero_loss() {
        let stats = scenario_stats(&default_start(), &quick_eval()).unwrap();
        let targets = CalibrationTargets::simulated(&default_start(), &quick_eval()).unwrap();
        assert_eq!(loss_from_stats(&stats, &targets), 0.0);
    }

    #[test]
    fn tolerance_loss_is_zero_at_targets_and_one_at_a_tolerance_edge() {
        let stats = scenario_stats(&default_start(), &quick_eval()).unwrap();
        let targets = CalibrationTargets::simulated(&default_start(), &quick_eval()).unwrap();
        assert!(tolerance_loss_from_stats(&stats, &targets).abs() < 1e-20);

        // Moving one non-reference scenario's CV by exactly its tolerance costs 1.
        let mut shifted = stats.clone();
        let i = 2;
        shifted[i].cv += CV_TOL_PP / 100.0;
        let loss = tolerance_loss_from_stats(&shifted, &targets);
        assert!((loss - 1.0).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn tolerance_loss_counts_headline_comparisons() {
        let targets = CalibrationTargets::table1();
        let mut stats: Vec<TerminalStats> = targets
            .rows()
            .iter()
            .map(|r| TerminalStats {
                mean: r.mean_k,
                sd: r.mean_k * r.cv_pct / 100.0,
                cv: r.cv_pct / 100.0,
                sharpe: Some(100.0 / r.cv_pct),
                crisis_prob: r.crisis_pct / 100.0,
            })
            .collect();
        assert!(tolerance_loss_from_stats(&stats, &targets) < 1e-20);
        // Full 2.5% high: the row term is (0.5)^2 and the Full-vs-Baseline gain moves by 2.5 * 87.39 / 53.35 pp.
        stats[5].mean *= 1.025;
        let gain_shift = 2.5 * 87.39 / 53.35 / FINDING_TOLS_PP[0];
        let want = 0.25 + gain_shift * gain_shift;
        let got = tolerance_loss_from_stats(&stats, &targets);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn loss_is_quadratic_in_mean_error() {
        let mut stats = vec![
            TerminalStats {
                mean: 0.0,
                sd: 1.0,
                cv: 0.0,
                sharpe: None,
                crisis_prob: 0.0
            };
            6
        ];
        let targets = CalibrationTargets::table1();
        for (s, t) in stats.iter_mut().zip(targets.rows()) {
            s.mean = t.mean_k;
            s.cv = t.cv_pct / 100.0;
            s.crisis_prob = t.crisis_pct / 100.0;
        }
        let base = loss_from_stats(&stats, &targets);
        let e = 2.0;
        stats[0].mean = 53.35 + e;
        let one = loss_from_stats(&stats, &targets) - base;
        stats[0].mean = 53.35 + 2.0 * e;
        let two = loss_from_stats(&stats, &targets) - base;
        assert!((two / one - 4.0).abs() < 1e-6, "{one} {two}");
    }

    #[test]
    fn objective_is_deterministic() {
        let t = CalibrationTargets::table1();
        let a = objective(&default_start(), &t, &quick_eval());
        let b = objective(&default_start(), &t, &quick_eval());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn invalid_params_get_sentinel_loss() {
        let mut p = default_start();
        p.delta_h = -1.0;
        assert_eq!(objective(&p, &CalibrationTargets::table1(), &quick_eval()), INVALID_LOSS);
    }

    #[test]
    fn budget_one_evaluates_start_once() {
        let t = CalibrationTargets::table1();
        let opts = CalibrationOptions {
            eval: quick_eval(),
            ..CalibrationOptions::default()
        };
        let out = calibrate(&t, &ParamBounds::default(), 1, 3, &opts).unwrap();
        assert_eq!(out.evaluations, 1);
        assert!(out.budget_exhausted);
        assert_eq!(out.params, default_start());
        assert_eq!(out.loss, objective(&default_start(), &t, &quick_eval()));
    }

    #[test]
    fn result_stays_in_bounds() {
        let t = CalibrationTargets::table1();
        let opts = CalibrationOptions {
            eval: EvalConfig {
                n_paths: 50,
                ..EvalConfig::default()
            },
            ..CalibrationOptions::default()
        };
        let bounds = ParamBounds::default();
        let out = calibrate(&t, &bounds, 120, 11, &opts).unwrap();
        assert!(bounds.contains(&out.params, &FreeParam::BASE));
        out.params.validate().unwrap();
        assert!(out.loss <= out.log[0].loss);
        assert_eq!(out.log.len(), out.evaluations);
        assert!(out.log.windows(2).all(|w| w[1].best_loss <= w[0].best_loss));
    }

    #[test]
    fn bounds_json_overrides_and_validates() {
        let b = ParamBounds::from_json(r#"{"alpha_h": [1.0, 10.0]}"#).unwrap();
        assert_eq!(b.get(FreeParam::AlphaH), (1.0, 10.0));
        assert_eq!(b.get(FreeParam::Beta), (0.001, 1.0));
        assert!(ParamBounds::from_json(r#"{"alpha_h": [10.0, 1.0]}"#).is_err());
        assert!(ParamBounds::from_json(r#"{"bogus": [1.0, 2.0]}"#).is_err());
        assert!(ParamBounds::from_json(r#"{"h0": [10.0, 120.0]}"#).is_err());
    }
}
