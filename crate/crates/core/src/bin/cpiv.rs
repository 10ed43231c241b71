use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use censored_panel_iv::dataset_io::{read_dataset, write_dataset};
use censored_panel_iv::estimator::{estimate, EstimateResult, EstimatorConfig};
use censored_panel_iv::experiment::{json_config_error, run_montecarlo, run_verify, ExperimentConfig, VerifyConfig};
use censored_panel_iv::numfmt::g17;
use censored_panel_iv::panel_sim::{censoring_rate, simulate, Sampling};
use censored_panel_iv::Error;

#[derive(Parser)]
#[command(name = "cpiv", version, about = "IV/GMM estimation for fixed-effects censored panels")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel and write it as a dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `panel.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate from a dataset directory.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Estimator config, or an experiment config whose `estimator` is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for `result.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the quadrant moment identity over a parameter grid.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the grid seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

struct Failure {
    code: u8,
    kind: String,
    message: String,
    detail: serde_json::Value,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::Parse { .. } | Error::Io { .. } | Error::UnsupportedMode(_) => 2,
            _ => 3,
        };
        let detail = match &e {
            Error::Config { field, .. } => json!({ "field": field }),
            _ => serde_json::Value::Null,
        };
        Failure {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
            detail,
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            return report(Failure {
                code: 2,
                kind: "usage".into(),
                message: e.to_string().trim().to_string(),
                detail: serde_json::Value::Null,
            });
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            return report(Error::Config {
                field: "--workers".into(),
                message: "must be at least 1".into(),
            }
            .into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .expect("global pool configured once");
    }
    let result = match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed, cli.format),
        Command::Estimate { data, config, out } => cmd_estimate(&data, config.as_deref(), out.as_deref(), cli.format),
        Command::Montecarlo { config, out, seed } => cmd_montecarlo(&config, out, seed, cli.format),
        Command::Verify { config, out, seed } => cmd_verify(config.as_deref(), out, seed, cli.format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let mut err = json!({ "kind": f.kind, "message": f.message, "exit_code": f.code });
    if !f.detail.is_null() {
        err["detail"] = f.detail;
    }
    eprintln!("{}", json!({ "error": err }));
    ExitCode::from(f.code)
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>, format: Format) -> CliResult {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.panel.seed = s;
    }
    let data = simulate(&cfg.panel)?;
    write_dataset(&data, out)?;
    let rate = match data.sampling() {
        Sampling::Censored => Some(censoring_rate(&data)?),
        Sampling::Truncated => None,
    };
    match format {
        Format::Json => println!(
            "{}",
            json!({
                "out": out.display().to_string(),
                "variant": data.variant(),
                "n_individuals": data.n_individuals,
                "n_periods": data.n_periods,
                "n_regressors": data.n_regressors,
                "retained_cells": data.retained_cells(),
                "censoring_rate": rate,
            })
        ),
        Format::Csv => {
            println!("n_individuals,n_periods,n_regressors,retained_cells,censoring_rate");
            println!(
                "{},{},{},{},{}",
                data.n_individuals,
                data.n_periods,
                data.n_regressors,
                data.retained_cells(),
                rate.map(g17).unwrap_or_default()
            );
        }
    }
    Ok(())
}

fn load_estimator_config(path: &Path) -> Result<EstimatorConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| json_config_error(&e))?;
    if value.get("panel").is_some() {
        Ok(ExperimentConfig::from_json(&text)?.estimator)
    } else {
        serde_json::from_value(value).map_err(|e| json_config_error(&e))
    }
}

fn print_result(r: &EstimateResult, format: Format) {
    match format {
        Format::Json => println!("{}", r.to_json()),
        Format::Csv => {
            println!("parameter,estimate,std_error");
            for (j, name) in r.param_names.iter().enumerate() {
                println!("{name},{},{}", g17(r.estimates[j]), g17(r.std_errors[j]));
            }
        }
    }
}

fn cmd_estimate(data: &Path, config: Option<&Path>, out: Option<&Path>, format: Format) -> CliResult {
    let est = match config {
        Some(p) => load_estimator_config(p)?,
        None => EstimatorConfig::default(),
    };
    let dataset = read_dataset(data)?;
    let result = estimate(&dataset, &est)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let path = dir.join("result.json");
        let mut text = result.to_json();
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    print_result(&result, format);
    Ok(())
}

fn cmd_montecarlo(config: &Path, out: Option<PathBuf>, seed: Option<u64>, format: Format) -> CliResult {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.master_seed = Some(s);
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    if cfg.output_dir.is_none() {
        return Err(Error::Config {
            field: "output_dir".into(),
            message: "give output_dir in the config or --out".into(),
        }
        .into());
    }
    let result = run_montecarlo(&cfg)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&result.summary).expect("serializes")),
        Format::Csv => {
            println!("sample_size,parameter,mean_bias,rmse,median_se,coverage_95");
            for s in &result.summary {
                println!(
                    "{},{},{},{},{},{}",
                    s.sample_size,
                    s.parameter,
                    g17(s.mean_bias),
                    g17(s.rmse),
                    g17(s.median_se),
                    g17(s.coverage_95)
                );
            }
        }
    }
    Ok(())
}

fn cmd_verify(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>, format: Format) -> CliResult {
    let mut cfg = match config {
        Some(p) => VerifyConfig::from_path(p)?,
        None => VerifyConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    let report = run_verify(&cfg)?;
    match format {
        Format::Json => println!(
            "{}",
            json!({
                "passed": report.passed(),
                "threshold": report.threshold,
                "max_abs_residual": report.max_abs_residual(),
                "max_by_order": report.max_by_order,
            })
        ),
        Format::Csv => {
            println!("k,m,max_abs_residual");
            for (k, m, worst) in &report.max_by_order {
                println!("{k},{m},{}", g17(*worst));
            }
        }
    }
    if report.passed() {
        return Ok(());
    }
    let worst = report.worst().expect("non-empty report");
    Err(Failure {
        code: 4,
        kind: "verification_failed".into(),
        message: format!(
            "|residual| {} exceeds {} at k = {}, m = {}",
            worst.residual.abs(),
            report.threshold,
            worst.k,
            worst.m
        ),
        detail: json!({ "point": worst.point, "spec": worst.spec, "k": worst.k, "m": worst.m, "residual": worst.residual }),
    })
}
