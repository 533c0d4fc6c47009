//! Command-line front end. Each subcommand resolves a [`RunConfig`] from an
//! optional config file plus flags (flags win), runs, and writes a manifest
//! next to its outputs.

mod config;
mod manifest;
mod steps;
mod validate;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::error::{Error, Result};
use crate::simulator::{export_cross_section, run_replications, CalibrationMode, SimConfig};

pub use config::RunConfig;
pub use manifest::{file_digest, sha256_hex, Manifest, MANIFEST_FILE};
pub use steps::{
    compute_estimates, estimate_step, fit_step, weigh_step, write_estimates, EstimateRow, ESTIMATES_FILE, IPSW_FILE,
    MODEL_FILE, REPORT_FILE, WEIGHTS_FILE,
};
pub use validate::validate;

pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";

#[derive(Debug, Parser)]
#[command(name = "calibra", version, about = "Two-stage survey weighting and estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the response-propensity model on a sampling frame.
    FitPropensity {
        #[command(flatten)]
        settings: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nonresponse weights, then calibration to benchmarks.
    Weigh {
        #[command(flatten)]
        settings: Overrides,
        /// Propensity model written by `fit-propensity`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted means, totals and domain ratios with intervals.
    Estimate {
        #[command(flatten)]
        settings: Overrides,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo evaluation of the whole weighting pipeline.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        /// Write one simulated day as input files instead of replicating.
        #[arg(long)]
        export_data: bool,
    },
    /// fit-propensity, weigh and estimate in one run.
    Pipeline {
        #[command(flatten)]
        settings: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check inputs without writing anything.
    Validate {
        #[command(flatten)]
        settings: Overrides,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Cells,
    Margins,
}

impl From<ModeArg> for CalibrationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cells => CalibrationMode::Cells,
            ModeArg::Margins => CalibrationMode::Margins,
        }
    }
}

/// Flags shared by the weighting subcommands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run config (TOML); paths inside resolve against its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub frame: Option<PathBuf>,
    #[arg(long)]
    pub respondents: Option<PathBuf>,
    #[arg(long)]
    pub benchmarks: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub min_answered: Option<u32>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub include_region_margin: Option<bool>,
    /// Multiply nonresponse weights by respondent design weights.
    #[arg(long)]
    pub design_weights: Option<bool>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "outcome")]
    pub outcomes: Vec<String>,
    #[arg(long = "domain")]
    pub domains: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub margin_order: Vec<String>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub ipsw_lower_divisor: Option<f64>,
    #[arg(long)]
    pub ipsw_upper_multiplier: Option<f64>,
    #[arg(long)]
    pub trim_lower_divisor: Option<f64>,
    #[arg(long)]
    pub trim_upper_multiplier: Option<f64>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        for (slot, value) in [
            (&mut c.schema, &self.schema),
            (&mut c.frame, &self.frame),
            (&mut c.respondents, &self.respondents),
            (&mut c.benchmarks, &self.benchmarks),
        ] {
            if value.is_some() {
                *slot = value.clone();
            }
        }
        if let Some(m) = self.mode {
            c.mode = Some(m.into());
        }
        set(&mut c.min_answered, &self.min_answered);
        set(&mut c.l2_strength, &self.l2);
        set(&mut c.raking.include_region_margin, &self.include_region_margin);
        set(&mut c.use_design_weights, &self.design_weights);
        set(&mut c.alpha_multiplier, &self.alpha);
        set(&mut c.seed, &self.seed);
        set(&mut c.raking.max_iterations, &self.max_iterations);
        set(&mut c.raking.tolerance, &self.tolerance);
        set(&mut c.stage1_trim.lower_divisor, &self.ipsw_lower_divisor);
        set(&mut c.stage1_trim.upper_multiplier, &self.ipsw_upper_multiplier);
        set(&mut c.raking.trim.lower_divisor, &self.trim_lower_divisor);
        set(&mut c.raking.trim.upper_multiplier, &self.trim_upper_multiplier);
        if !self.outcomes.is_empty() {
            c.outcomes = self.outcomes.clone();
        }
        if !self.domains.is_empty() {
            c.domains = self.domains.clone();
        }
        if !self.margin_order.is_empty() {
            c.raking.margin_order = self.margin_order.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn record_inputs(manifest: &mut Manifest, settings: &Overrides, c: &RunConfig, roles: &[&str]) -> Result<()> {
    if let Some(path) = &settings.config {
        manifest.input("config", path)?;
    }
    for role in roles {
        let path = match *role {
            "schema" => &c.schema,
            "frame" => &c.frame,
            "respondents" => &c.respondents,
            "benchmarks" => &c.benchmarks,
            _ => unreachable!("unknown input role"),
        };
        manifest.input(role, c.require(path, role)?)?;
    }
    Ok(())
}

/// Runs a parsed command and returns what was written (or found).
pub fn execute(command: &Command) -> Result<Vec<String>> {
    match command {
        Command::FitPropensity { settings, out } => {
            let c = settings.resolve()?;
            create_out(out)?;
            let written = fit_step(&c, out)?;
            let mut m = Manifest::new("fit-propensity", &c.to_toml_string());
            record_inputs(&mut m, settings, &c, &["schema", "frame"])?;
            finish(m, out, &written)
        }
        Command::Weigh { settings, model, out } => {
            let c = settings.resolve()?;
            create_out(out)?;
            let written = weigh_step(&c, model, out)?;
            let mut m = Manifest::new("weigh", &c.to_toml_string());
            record_inputs(&mut m, settings, &c, &["schema", "respondents", "benchmarks"])?;
            m.input("model", model)?;
            finish(m, out, &written)
        }
        Command::Estimate { settings, weights, out } => {
            let c = settings.resolve()?;
            create_out(out)?;
            let written = estimate_step(&c, weights, out)?;
            let mut m = Manifest::new("estimate", &c.to_toml_string());
            record_inputs(&mut m, settings, &c, &["schema", "respondents"])?;
            m.input("weights", weights)?;
            finish(m, out, &written)
        }
        Command::Pipeline { settings, out } => {
            let c = settings.resolve()?;
            create_out(out)?;
            let mut written = fit_step(&c, out)?;
            written.extend(weigh_step(&c, &out.join(MODEL_FILE), out)?);
            written.extend(estimate_step(&c, &out.join(WEIGHTS_FILE), out)?);
            let mut m = Manifest::new("pipeline", &c.to_toml_string());
            record_inputs(&mut m, settings, &c, &["schema", "frame", "respondents", "benchmarks"])?;
            finish(m, out, &written)
        }
        Command::Simulate { config, out, seed, replications, export_data } => {
            let mut sim = SimConfig::load(config)?;
            if let Some(s) = seed {
                sim.seed = *s;
            }
            if let Some(r) = replications {
                sim.replications = *r;
            }
            sim.validate()?;
            create_out(out)?;
            let mut m = Manifest::new("simulate", &sim.to_toml_string());
            m.input("config", config)?;
            let written: Vec<&str> = if *export_data {
                export_cross_section(&sim, out)?;
                vec![
                    "schema.toml",
                    "frame.csv",
                    "respondents.csv",
                    "benchmark_cells.csv",
                    "benchmark_margins.csv",
                    "truth.toml",
                ]
            } else {
                let report = run_replications(&sim)?;
                crate::data::io::write_file(out.join(REPLICATIONS_FILE), |w| report.write_rows(w))?;
                crate::data::io::write_file(out.join(SUMMARY_FILE), |w| report.write_summary(w))?;
                crate::data::io::write_file(out.join(FAILURES_FILE), |w| report.write_failures(w))?;
                vec![REPLICATIONS_FILE, SUMMARY_FILE, FAILURES_FILE]
            };
            finish(m, out, &written)
        }
        Command::Validate { settings } => {
            let c = match settings.resolve() {
                Ok(c) => c,
                Err(e) => return Ok(vec![e.to_string()]),
            };
            Ok(validate(&c))
        }
    }
}

fn finish(mut manifest: Manifest, out: &Path, written: &[&str]) -> Result<Vec<String>> {
    manifest.outputs(out, written)?;
    manifest.write(out)?;
    info!("wrote {} files to {}", written.len() + 1, out.display());
    let mut names: Vec<String> = written.iter().map(|s| s.to_string()).collect();
    names.push(MANIFEST_FILE.to_string());
    Ok(names)
}

/// One JSON object on one line, for machine consumption.
pub fn error_line(err: &Error) -> String {
    serde_json::json!({
        "error": err.kind(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    })
    .to_string()
}

/// Parses `args`, runs, reports, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = Error::Config(e.to_string().lines().next().unwrap_or_default().to_string());
            eprintln!("{}", error_line(&err));
            return err.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(lines) => {
            if let Command::Validate { .. } = cli.command {
                if lines.is_empty() {
                    println!("no findings");
                }
            }
            for line in lines {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}
