//! `klever` command-line interface.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 1 internal failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{self, CalibrationOptions, CalibrationTargets, EvalConfig, LossKind, ParamBounds};
use crate::engine::{run_ensemble, sample_paths, EnsembleResult, RunConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{cv_reduction, histogram, improvement, terminal_stats, SummaryRow};
use crate::model::{composite_index, ModelParams};
use crate::scenario::{self, display_name, ScenarioSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "KLEVER_THREADS";

const DEFAULT_PARAMS: &str = "params/reference.json";

#[derive(Debug, Parser)]
#[command(name = "klever", version, about = "Knowledge-capital risk simulation and calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario (or every scenario in a config file).
    Run(RunArgs),
    /// Run the six canonical scenarios and write summary.csv.
    Table1(Table1Args),
    /// Fit base parameters to target statistics.
    Calibrate(CalibrateArgs),
    /// Write the CSV data behind the sample-path, histogram, crisis and decomposition figures.
    Figures(FiguresArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value = DEFAULT_PARAMS)]
    pub params: PathBuf,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub scenario: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value = "out/run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value = "out/summary.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value = "targets/table1.json")]
    pub targets: PathBuf,
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub budget: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "out/calibrated.json")]
    pub out: PathBuf,
    /// Paths per scenario inside the objective.
    #[arg(long, default_value_t = 2000)]
    pub eval_paths: usize,
    /// Paths per scenario in the verification table.
    #[arg(long, default_value_t = 5000)]
    pub verify_paths: usize,
    /// Starting parameter file (defaults to a built-in interior point).
    #[arg(long)]
    pub start: Option<PathBuf>,
    /// Also fit the seven lever gains.
    #[arg(long)]
    pub free_gains: bool,
    /// Calibration log CSV (defaults to `<out>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Objective: plain squared errors, or errors scaled by the reproduction tolerances.
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    pub loss: LossArg,
    /// Stop as soon as the loss reaches this value.
    #[arg(long, default_value_t = 0.0)]
    pub target_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Squared,
    Tolerance,
}

impl From<LossArg> for LossKind {
    fn from(a: LossArg) -> Self {
        match a {
            LossArg::Squared => LossKind::Squared,
            LossArg::Tolerance => LossKind::Tolerance,
        }
    }
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value = "out/figures")]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Table1(a) => cmd_table1(&a, out),
        Command::Calibrate(a) => cmd_calibrate(&a, out),
        Command::Figures(a) => cmd_figures(&a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|source| Error::Write {
        path: "<stdout>".into(),
        source,
    })
}

fn run_config(sim: &SimArgs, horizon: Option<f64>, base: RunConfig) -> Result<RunConfig> {
    let mut run = base;
    if let Some(n) = sim.paths {
        run.n_paths = n;
    }
    if let Some(s) = sim.seed {
        run.master_seed = s;
    }
    if let Some(h) = horizon {
        run.horizon = h;
        run.record_dt = run.record_dt.min(h);
    }
    run.validate()?;
    Ok(run)
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.prec$}"))
}

/// Aligned text table of terminal statistics.
pub fn stats_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<20} {:>9} {:>8} {:>7} {:>8} {:>10} {:>9}\n",
        "Scenario", "E[K(T)]", "sd", "CV %", "Sharpe", "P(crisis)%", "P(ever)%"
    );
    for r in rows {
        s += &format!(
            "{:<20} {:>9.2} {:>8.3} {:>7.2} {:>8} {:>10.2} {:>9.2}\n",
            display_name(&r.scenario),
            r.mean_k,
            r.sd_k,
            r.cv_pct,
            fmt_opt(r.sharpe, 2),
            r.crisis_pct,
            r.first_passage_pct
        );
    }
    s
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let params = io::read_params(&a.sim.params)?;
    let specs: Vec<ScenarioSpec> = match (&a.scenario, &a.config) {
        (Some(name), _) => vec![scenario::canonical(name, run_config(&a.sim, a.horizon, RunConfig::default())?)?],
        (None, Some(path)) => {
            let file = io::read_scenarios(path)?;
            file.scenarios
                .into_iter()
                .map(|mut s| {
                    s.run = run_config(&a.sim, a.horizon, s.run)?;
                    Ok(s)
                })
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(Error::InvalidInput("either --scenario or --config is required".into())),
    };

    let mut rows = Vec::new();
    for spec in &specs {
        let ensemble = run_ensemble(spec, &params)?;
        let dir = if specs.len() == 1 {
            a.out.clone()
        } else {
            a.out.join(&spec.name)
        };
        io::write_ensemble(&dir, &ensemble)?;
        rows.push(SummaryRow::from_ensemble(&ensemble)?);
    }
    say(out, &stats_table(&rows))
}

fn run_canonical(params: &ModelParams, run: RunConfig) -> Result<Vec<EnsembleResult>> {
    scenario::canonical_set(run)
        .iter()
        .map(|s| run_ensemble(s, params))
        .collect()
}

/// Table 1 layout plus improvement and CV-reduction columns against the baseline row.
pub fn comparison_table(rows: &[SummaryRow]) -> Result<String> {
    let base = rows
        .iter()
        .find(|r| r.scenario == "baseline")
        .ok_or_else(|| Error::InvalidInput("comparison needs a baseline row".into()))?;
    let mut s = format!(
        "{:<20} {:>9} {:>7} {:>8} {:>10} {:>9} {:>10} {:>8}\n",
        "Scenario", "E[K(T)]", "CV %", "Sharpe", "P(crisis)%", "P(ever)%", "vs base %", "dCV %"
    );
    for r in rows {
        let imp = improvement(r.mean_k, base.mean_k).ok();
        let cvr = cv_reduction(r.cv_pct, base.cv_pct).ok();
        s += &format!(
            "{:<20} {:>9.2} {:>7.2} {:>8} {:>10.2} {:>9.2} {:>10} {:>8}\n",
            display_name(&r.scenario),
            r.mean_k,
            r.cv_pct,
            fmt_opt(r.sharpe, 2),
            r.crisis_pct,
            r.first_passage_pct,
            fmt_opt(imp, 1),
            fmt_opt(cvr, 1),
        );
    }
    Ok(s)
}

pub fn cmd_table1(a: &Table1Args, out: &mut dyn Write) -> Result<()> {
    let params = io::read_params(&a.sim.params)?;
    let run = run_config(&a.sim, None, RunConfig::default())?;
    let ensembles = run_canonical(&params, run)?;
    let rows = ensembles
        .iter()
        .map(SummaryRow::from_ensemble)
        .collect::<Result<Vec<_>>>()?;
    io::write_summary_csv(&a.out, &rows)?;
    say(out, &comparison_table(&rows)?)
}

fn default_log_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.log.csv"))
}

pub fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let targets = io::read_targets(&a.targets)?;
    let bounds = match &a.bounds {
        Some(p) => io::read_bounds(p)?,
        None => ParamBounds::default(),
    };
    if a.budget == 0 {
        return Err(Error::InvalidInput("--budget must be at least 1".into()));
    }
    let start = match &a.start {
        Some(p) => io::read_params(p)?,
        None => calibration::default_start(),
    };
    let options = CalibrationOptions {
        eval: EvalConfig {
            n_paths: a.eval_paths,
            master_seed: a.seed,
            ..EvalConfig::default()
        },
        start,
        free_gains: a.free_gains,
        target_loss: a.target_loss,
        loss: a.loss.into(),
        ..CalibrationOptions::default()
    };
    let outcome = calibration::calibrate(&targets, &bounds, a.budget, a.seed, &options)?;
    io::write_json(&a.out, &outcome.params)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    io::ensure_dir(log_path.parent().unwrap_or(Path::new(".")))?;
    let log_file = std::fs::File::create(&log_path).map_err(|source| Error::Write {
        path: log_path.clone(),
        source,
    })?;
    calibration::write_log(&outcome.log, log_file)?;

    let mut text = format!(
        "final loss {:.6} after {} evaluations\n",
        outcome.loss, outcome.evaluations
    );
    if outcome.budget_exhausted {
        text += "warning: evaluation budget exhausted before convergence; returning best parameters found\n";
    }
    let verify = EvalConfig {
        n_paths: a.verify_paths,
        ..options.eval
    };
    text += &verification_table(&outcome.params, &targets, &verify)?;
    text += &format!("parameters written to {}\n", a.out.display());
    say(out, &text)
}

/// Simulated versus target statistics, side by side.
pub fn verification_table(params: &ModelParams, targets: &CalibrationTargets, eval: &EvalConfig) -> Result<String> {
    let stats = calibration::scenario_stats(params, eval)?;
    let mut s = format!(
        "{:<20} {:>8} {:>8} {:>7} {:>7} {:>9} {:>9}\n",
        "Scenario", "E[K]", "target", "CV %", "target", "crisis %", "target"
    );
    for (st, t) in stats.iter().zip(targets.rows()) {
        s += &format!(
            "{:<20} {:>8.2} {:>8.2} {:>7.2} {:>7.2} {:>9.2} {:>9.2}\n",
            display_name(t.scenario),
            st.mean,
            t.mean_k,
            st.cv_pct(),
            t.cv_pct,
            st.crisis_pct(),
            t.crisis_pct
        );
    }
    s += &format!(
        "loss at {} paths: {:.6} (squared), {:.4} (tolerance-scaled)\n",
        eval.n_paths,
        calibration::loss_from_stats(&stats, targets),
        calibration::tolerance_loss_from_stats(&stats, targets)
    );
    Ok(s)
}

const FIG_PATHS: usize = 20;
const FIG_BINS: usize = 40;

pub fn cmd_figures(a: &FiguresArgs, out: &mut dyn Write) -> Result<()> {
    let params = io::read_params(&a.sim.params)?;
    let run = run_config(&a.sim, None, RunConfig::default())?;
    let ensembles = run_canonical(&params, run)?;
    io::ensure_dir(&a.out)?;
    let by_name = |name: &str| ensembles.iter().find(|e| e.scenario == name).expect("canonical scenario");
    let f2 = a.out.join("fig2_paths.csv");
    let f3 = a.out.join("fig3_hist.csv");
    let f4 = a.out.join("fig4_crisis.csv");
    let f5 = a.out.join("fig5_decomp.csv");

    // Sample paths and ensemble means for baseline and full activation.
    let grid = &ensembles[0].grid;
    let mut header = vec!["time".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for name in ["baseline", "full_klrm"] {
        let spec = scenario::canonical(name, run)?;
        for (i, p) in sample_paths(&spec, &params, FIG_PATHS)?.into_iter().enumerate() {
            header.push(format!("{name}_path_{i:02}"));
            columns.push(p.k_series);
        }
        header.push(format!("{name}_mean"));
        columns.push(by_name(name).mean_k_series.clone());
    }
    header.push("k_star".into());
    columns.push(vec![run.k_star; grid.len()]);
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|t| {
            std::iter::once(grid[t].to_string())
                .chain(columns.iter().map(|c| c[t].to_string()))
                .collect()
        })
        .collect();
    io::write_table_csv(&f2, &header, &rows)?;

    let mut rows = Vec::new();
    for name in ["baseline", "full_klrm"] {
        let e = by_name(name);
        let h = histogram(&e.terminal_k, FIG_BINS)?;
        let n = h.total() as f64;
        for (i, &c) in h.counts.iter().enumerate() {
            let width = h.edges[i + 1] - h.edges[i];
            let density = if width > 0.0 { c as f64 / (n * width) } else { 0.0 };
            rows.push(vec![
                name.to_string(),
                h.edges[i].to_string(),
                h.edges[i + 1].to_string(),
                c.to_string(),
                density.to_string(),
            ]);
        }
    }
    let header: Vec<String> = ["scenario", "bin_lo", "bin_hi", "count", "density"]
        .map(String::from)
        .to_vec();
    io::write_table_csv(&f3, &header, &rows)?;

    let mut header = vec!["time".to_string()];
    header.extend(ensembles.iter().map(|e| e.scenario.clone()));
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|t| {
            std::iter::once(grid[t].to_string())
                .chain(ensembles.iter().map(|e| e.crisis_curve[t].to_string()))
                .collect()
        })
        .collect();
    io::write_table_csv(&f4, &header, &rows)?;

    let header: Vec<String> = ["scenario", "mean_K", "sd_K"].map(String::from).to_vec();
    let rows = ensembles
        .iter()
        .map(|e| {
            let st = terminal_stats(e, run.k_star)?;
            Ok(vec![e.scenario.clone(), st.mean.to_string(), st.sd.to_string()])
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_table_csv(&f5, &header, &rows)?;

    let k0 = composite_index(&params.init, &params.weights);
    let mut text = format!("initial K = {k0:.4}\n");
    for f in [&f2, &f3, &f4, &f5] {
        text += &format!("wrote {}\n", f.display());
    }
    say(out, &text)
}

/// Applies `KLEVER_THREADS` to the global worker pool, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("{THREADS_ENV}={value} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("cannot configure worker pool: {e}")))
}
