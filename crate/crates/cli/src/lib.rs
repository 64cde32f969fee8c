//! `wellcorr` command line: argument grammar, exit codes and report files.

mod commands;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_QC_FATAL: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "wellcorr", version, about = "Multiwell deconvolution and CRM analysis of rate/pressure histories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output directory; `report.json` is always written here.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration TOML (engine options), or the synthetic spec for `synth`/`rehearse`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Directory holding `scenario.toml`, `rates.csv` and optionally `pressures.csv`.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct MdcvFlags {
    /// Fit even when no well's rate varies.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub correct_rates: bool,
    #[arg(long)]
    pub rate_weight: Option<f64>,
    #[arg(long)]
    pub lambda_curvature: Option<f64>,
    #[arg(long)]
    pub lambda_cumulative: Option<f64>,
    #[arg(long)]
    pub gn_iterations: Option<usize>,
    #[arg(long)]
    pub de_generations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CrmModeArg {
    Rate,
    Pressure,
    Icrm,
}

#[derive(Debug, Args, Clone)]
pub struct CrmFlags {
    #[arg(long, value_enum)]
    pub mode: Option<CrmModeArg>,
    /// Force injector column sums to exactly 1.
    #[arg(long)]
    pub strict: bool,
    /// Fit producer–producer terms (pressure mode).
    #[arg(long)]
    pub interference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Mdcv,
    Crm,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Data quality checks.
    Qc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate a synthetic scenario and its ground truth from a spec TOML (`--config`).
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Forward simulation with a deconvolution model.
    Simulate {
        #[command(subcommand)]
        mode: SimulateMode,
    },
    /// Fit initial pressures and unit-rate responses.
    Deconvolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        mdcv: MdcvFlags,
        /// Tune λ by contiguous inner folds before the final fit.
        #[arg(long)]
        tune_folds: Option<usize>,
    },
    /// Capacitance-resistance model.
    Crm {
        #[command(subcommand)]
        action: CrmAction,
    },
    /// Convert a CRM to a deconvolution model and check both pressure paths agree.
    Bridge {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
    /// Train on one partition, score on the other.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = EngineArg::Mdcv)]
        engine: EngineArg,
        /// `T` trains on [0, T); `a:b,c:d` trains on the listed intervals.
        #[arg(long)]
        split: String,
        #[arg(long, default_value_t = wellcorr::validation::DEFAULT_THRESHOLD_R2)]
        threshold_r2: f64,
        #[command(flatten)]
        mdcv: MdcvFlags,
        #[command(flatten)]
        crm: CrmFlags,
    },
    /// Try candidate splits on a synthetic field until one validates.
    Rehearse {
        #[command(flatten)]
        common: Common,
        /// Candidate split, same grammar as `validate --split`; repeat in order of preference.
        #[arg(long = "candidate", required = true)]
        candidates: Vec<String>,
        #[arg(long, value_enum, default_value_t = EngineArg::Mdcv)]
        engine: EngineArg,
        #[arg(long, default_value_t = wellcorr::validation::DEFAULT_THRESHOLD_R2)]
        threshold_r2: f64,
        #[arg(long, default_value_t = 10)]
        max_iter: usize,
        /// Engine options TOML (the synthetic field spec comes from `--config`).
        #[arg(long)]
        options: Option<PathBuf>,
        #[command(flatten)]
        mdcv: MdcvFlags,
        #[command(flatten)]
        crm: CrmFlags,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimulateMode {
    /// Pressures from rates at the data's pressure sample times (or a regular grid).
    RateControl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Query every `EVERY` days up to the end of the rate history instead.
        #[arg(long)]
        every: Option<f64>,
    },
    /// Rates of wells that have pressure samples after `--start`, holding those pressures.
    PressureControl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        start: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum CrmAction {
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        crm: CrmFlags,
    },
    /// Producer rates from injection and BHP, or BHP from rates (`--pressure`).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pressure: bool,
    },
}

impl Command {
    fn out(&self) -> &std::path::Path {
        let c = match self {
            Command::Qc { common, .. }
            | Command::Synth { common }
            | Command::Deconvolve { common, .. }
            | Command::Bridge { common, .. }
            | Command::Validate { common, .. }
            | Command::Rehearse { common, .. } => common,
            Command::Simulate { mode } => match mode {
                SimulateMode::RateControl { common, .. } | SimulateMode::PressureControl { common, .. } => common,
            },
            Command::Crm { action } => match action {
                CrmAction::Fit { common, .. } | CrmAction::Simulate { common, .. } => common,
            },
        };
        &c.out
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Qc { .. } => "qc",
            Command::Synth { .. } => "synth",
            Command::Simulate { mode: SimulateMode::RateControl { .. } } => "simulate rate-control",
            Command::Simulate { mode: SimulateMode::PressureControl { .. } } => "simulate pressure-control",
            Command::Deconvolve { .. } => "deconvolve",
            Command::Crm { action: CrmAction::Fit { .. } } => "crm fit",
            Command::Crm { action: CrmAction::Simulate { .. } } => "crm simulate",
            Command::Bridge { .. } => "bridge",
            Command::Validate { .. } => "validate",
            Command::Rehearse { .. } => "rehearse",
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let out = cli.command.out().to_path_buf();
    let name = cli.command.name();
    match commands::execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("wellcorr {name}: {e:#}");
            let report = serde_json::json!({
                "command": name,
                "status": "error",
                "message": format!("{e:#}"),
            });
            if let Err(w) = output::write_json(&out, "report.json", &report) {
                eprintln!("wellcorr {name}: could not write report: {w:#}");
            }
            EXIT_USAGE
        }
    }
}
