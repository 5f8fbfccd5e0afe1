//! `crcpanel` — estimation and simulation for correlated random coefficient
//! panels with stayers and slow movers.
//!
//! Subcommands: `estimate` fits a long-format CSV panel and emits a JSON
//! report; `simulate` runs a seeded Monte Carlo study from a config file;
//! `table` renders a saved summary document as CSV or markdown; `version`
//! prints the version.
//!
//! Exit codes: 0 success, 2 validation error (bad flags, malformed input),
//! 3 numerical failure on valid input (singular designs, degenerate
//! samples). Output files are written atomically (temp file + rename) and
//! only after all computation has succeeded.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crcpanel_core::error::Error;
use crcpanel_core::estimator::{estimate_all, Bandwidth, EstimatorConfig};
use crcpanel_core::ext::estimate_all_ext;
use crcpanel_core::inference::{inference_report, influence_contributions};
use crcpanel_core::io::{
    check_mode, parse_sim_configs, read_panel_csv, write_report, ReportEstimates, RunReport,
    VERSION,
};
use crcpanel_core::panel::PanelMode;
use crcpanel_core::sim::{emit_table, run_study_with_threads, SimulationSummary, TableFormat};

#[derive(Parser)]
#[command(name = "crcpanel", version, about = "Robust average partial effects for short panels with stayers and slow movers", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a long-format CSV panel and report estimates with inference.
    Estimate(EstimateArgs),
    /// Run Monte Carlo studies from a key = value config file.
    Simulate(SimulateArgs),
    /// Render a saved summary document as a table.
    Table(TableArgs),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV with columns id, period, y, x1..xp.
    input: PathBuf,
    /// Number of regressors; inferred from the header when omitted.
    #[arg(long)]
    regressors: Option<usize>,
    /// Local polynomial order L.
    #[arg(long, default_value_t = 2)]
    poly_order: usize,
    /// Bandwidth: `plugin` or an explicit positive value.
    #[arg(long, default_value = "plugin")]
    bandwidth: String,
    /// Target period t for the reported average partial effect.
    #[arg(long, default_value_t = 1)]
    period: usize,
    /// Comma-separated confidence levels in (0, 1).
    #[arg(long, default_value = "0.90,0.95")]
    ci: String,
    /// Panel shape: auto, square, or tall.
    #[arg(long, default_value = "auto")]
    mode: String,
    /// Output format (reports are JSON only).
    #[arg(long, default_value = "json")]
    format: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file; blank lines separate grid blocks.
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output format: json, csv, or markdown.
    #[arg(long, default_value = "json")]
    format: String,
    /// Write the document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// Summary document produced by `simulate --format json`.
    input: PathBuf,
    /// Output format: csv or markdown.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_ci_levels(raw: &str) -> Result<Vec<f64>, Error> {
    let mut levels = Vec::new();
    for part in raw.split(',') {
        let level: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("invalid confidence level `{part}`")))?;
        levels.push(level);
    }
    Ok(levels)
}

fn parse_bandwidth(raw: &str) -> Result<Bandwidth, Error> {
    if raw == "plugin" {
        return Ok(Bandwidth::PlugIn);
    }
    let value: f64 = raw
        .parse()
        .map_err(|_| Error::Validation(format!("invalid bandwidth `{raw}`")))?;
    Ok(Bandwidth::Explicit(value))
}

/// Write atomically: temp file in the target directory, then rename.
fn write_output(out: Option<&Path>, content: &str) -> Result<(), Error> {
    match out {
        None => {
            print!("{content}");
            if !content.ends_with('\n') {
                println!();
            }
            Ok(())
        }
        Some(path) => {
            let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
            let mut tmp = match dir {
                Some(d) => tempfile::NamedTempFile::new_in(d)?,
                None => tempfile::NamedTempFile::new_in(".")?,
            };
            tmp.write_all(content.as_bytes())?;
            tmp.persist(path).map_err(|e| Error::Io(e.error))?;
            Ok(())
        }
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Error> {
    if args.format != "json" {
        return Err(Error::Validation(format!(
            "estimate reports support only --format json, got `{}`",
            args.format
        )));
    }
    let ci_levels = parse_ci_levels(&args.ci)?;
    let bandwidth = parse_bandwidth(&args.bandwidth)?;
    let file = fs::File::open(&args.input)?;
    let (dataset, mut warnings) = read_panel_csv(file, args.regressors)?;
    check_mode(&dataset, &args.mode)?;

    let config = EstimatorConfig {
        poly_order: args.poly_order,
        bandwidth,
        target_period: args.period,
        ci_levels,
    };

    let report = match dataset.mode() {
        PanelMode::SquareTP => {
            let fit = estimate_all(&dataset, &config)?;
            let influence = influence_contributions(
                &dataset,
                &fit.artifacts,
                &fit.stacks,
                &fit.estimates,
                config.target_period,
            )?;
            let inference = inference_report(
                &fit.estimates.theta_hat,
                &influence,
                dataset.n(),
                &config.ci_levels,
            )?;
            warnings.extend(fit.warnings.clone());
            RunReport {
                version: VERSION.to_string(),
                config: config.clone(),
                n: dataset.n(),
                t_periods: dataset.t_periods(),
                p_regressors: dataset.p_regressors(),
                counts: fit.stacks.counts,
                estimates: ReportEstimates::Square(fit.estimates),
                inference,
                warnings,
            }
        }
        PanelMode::TallTP => {
            let fit = estimate_all_ext(&dataset, &config)?;
            warnings.extend(fit.warnings.clone());
            RunReport {
                version: VERSION.to_string(),
                config: config.clone(),
                n: dataset.n(),
                t_periods: dataset.t_periods(),
                p_regressors: dataset.p_regressors(),
                counts: fit.counts,
                estimates: ReportEstimates::Tall(fit.estimates),
                inference: fit.inference,
                warnings,
            }
        }
    };

    let text = write_report(&report)?;
    write_output(args.out.as_deref(), &text)
}

fn render_summaries(summaries: &[SimulationSummary], format: &str) -> Result<String, Error> {
    match format {
        "json" => serde_json::to_string_pretty(summaries)
            .map_err(|e| Error::Serialization(e.to_string())),
        "csv" | "markdown" => {
            let table_format = if format == "csv" {
                TableFormat::Csv
            } else {
                TableFormat::Markdown
            };
            let mut out = String::new();
            for (i, summary) in summaries.iter().enumerate() {
                if summaries.len() > 1 {
                    let c = &summary.config;
                    let header = format!(
                        "block {}: rho={} pi0={} alpha={} n={} L={} reps={} seed={}",
                        i + 1,
                        c.rho,
                        c.pi0,
                        c.alpha,
                        c.n,
                        c.poly_order,
                        c.reps,
                        c.seed
                    );
                    if format == "markdown" {
                        out.push_str(&format!("### {header}\n\n"));
                    } else {
                        out.push_str(&format!("# {header}\n"));
                    }
                }
                out.push_str(&emit_table(summary, table_format));
                if i + 1 < summaries.len() {
                    out.push('\n');
                }
            }
            Ok(out)
        }
        other => Err(Error::Validation(format!(
            "unknown format `{other}` (expected json, csv, or markdown)"
        ))),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.config)?;
    let mut configs = parse_sim_configs(&text)?;
    for config in &mut configs {
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(reps) = args.reps {
            config.reps = reps;
        }
        config.validate()?;
    }
    let mut summaries = Vec::with_capacity(configs.len());
    for config in &configs {
        summaries.push(run_study_with_threads(config, args.threads)?);
    }
    let rendered = render_summaries(&summaries, &args.format)?;
    write_output(args.out.as_deref(), &rendered)
}

fn cmd_table(args: &TableArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.input)?;
    let summaries: Vec<SimulationSummary> =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: 0,
            message: format!("invalid summary document: {e}"),
        })?;
    if args.format == "json" {
        return Err(Error::Validation(
            "table renders csv or markdown; the input is already json".into(),
        ));
    }
    let rendered = render_summaries(&summaries, &args.format)?;
    write_output(args.out.as_deref(), &rendered)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Table(args) => cmd_table(args),
        Command::Version => {
            println!("crcpanel {VERSION}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
