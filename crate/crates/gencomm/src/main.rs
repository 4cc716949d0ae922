use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gencomm::config::ScenarioConfig;
use gencomm::error::{HarnessError, Result};
use gencomm::runner::{self, RunOptions};
use gencomm::{codec_file, output, suites};

#[derive(Parser)]
#[command(
    name = "gencomm",
    version,
    about = "Generative-decoding link simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV.
    Run {
        config: PathBuf,
        /// Overrides the config's `output`; `-` is stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-trial sampler traces into this directory.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Finite-difference check of every guidance loss.
    CheckGrad {
        #[arg(long, default_value_t = 50)]
        states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare decoded samples with the closed-form posterior.
    Oracle {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the config's MLP codec and write it as a codec file.
    TrainCodec {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a preset scenario config.
    Preset { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{line}");
            ExitCode::from(if matches!(e, HarnessError::CheckFailed(_)) {
                1
            } else {
                2
            })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out, trace } => run(&config, out, trace),
        Command::Sweep {
            config,
            axis,
            values,
            out_dir,
        } => sweep(&config, &axis, &values, &out_dir),
        Command::CheckGrad { states, seed } => check_grad(states, seed),
        Command::Oracle { samples, seed } => oracle(samples, seed),
        Command::TrainCodec { config, out } => train_codec(&config, &out),
        Command::Preset { name } => {
            println!("{}", ScenarioConfig::preset(&name)?.to_json());
            Ok(())
        }
    }
}

fn run(path: &Path, out: Option<PathBuf>, trace: Option<PathBuf>) -> Result<()> {
    let cfg = ScenarioConfig::load(path)?;
    let opts = RunOptions {
        keep_traces: trace.is_some(),
    };
    let result = runner::run_scenario(&cfg, opts)?;
    match out.or_else(|| cfg.output.clone()) {
        Some(p) if p.as_os_str() != "-" => output::write_scenario_file(&p, &result)?,
        _ => output::write_scenario(std::io::stdout().lock(), &result)?,
    }
    if let Some(dir) = trace {
        let n = output::write_traces(&dir, &result)?;
        eprintln!("wrote {n} traces to {}", dir.display());
    }
    for p in &result.points {
        let a = &p.aggregate;
        eprintln!(
            "{} dB: mse {:.4} psnr {:.2} dB success {:.2}",
            a.csnr_db, a.mse, a.psnr_db, a.success_ratio
        );
    }
    Ok(())
}

fn sweep(path: &Path, axis: &str, values: &[f64], out_dir: &Path) -> Result<()> {
    let cfg = ScenarioConfig::load(path)?;
    let runs = runner::sweep(&cfg, axis, values, RunOptions::default())?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::Io {
        path: out_dir.into(),
        source: e,
    })?;
    for (v, r) in &runs {
        let p = out_dir.join(output::sweep_file_name(&cfg.name, axis, *v));
        output::write_scenario_file(&p, r)?;
    }
    let summary = out_dir.join(format!("{}_{axis}_summary.csv", cfg.name));
    let f = std::fs::File::create(&summary).map_err(|e| HarnessError::Io {
        path: summary.clone(),
        source: e,
    })?;
    output::write_sweep_summary(std::io::BufWriter::new(f), axis, &runs)?;
    eprintln!("wrote {} runs and {}", runs.len(), summary.display());
    Ok(())
}

fn check_grad(states: usize, seed: u64) -> Result<()> {
    let cases = suites::check_grad(states, seed)?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<36} {:>7} {:>13} {:>8} {:>9}  result",
        "case", "states", "max rel err", "checked", "boundary"
    );
    for c in &cases {
        let _ = writeln!(
            out,
            "{:<36} {:>7} {:>13.3e} {:>8} {:>9}  {}",
            c.name,
            c.states,
            c.max_rel_error,
            c.checked,
            c.boundary,
            if c.pass() { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = cases.iter().filter(|c| !c.pass()).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::CheckFailed(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

fn oracle(samples: usize, seed: u64) -> Result<()> {
    let r = suites::posterior_oracle(samples, seed)?;
    println!("samples {}", r.samples);
    println!("coord  post_mean  sample_mean  post_var  sample_var");
    for j in 0..r.posterior_mean.len() {
        println!(
            "{j:>5}  {:>9.4}  {:>11.4}  {:>8.4}  {:>10.4}",
            r.posterior_mean[j], r.sample_mean[j], r.posterior_var[j], r.sample_var[j]
        );
    }
    println!(
        "mean error {:.4} (tol {}), variance error {:.4} (tol {})  {}",
        r.mean_error,
        suites::OracleReport::MEAN_TOLERANCE,
        r.var_error,
        suites::OracleReport::VAR_TOLERANCE,
        if r.pass() { "PASS" } else { "FAIL" }
    );
    if r.pass() {
        Ok(())
    } else {
        Err(HarnessError::CheckFailed(
            "posterior oracle disagreement".into(),
        ))
    }
}

fn train_codec(path: &Path, out: &Path) -> Result<()> {
    let cfg = ScenarioConfig::load(path)?;
    cfg.validate()?;
    let source = cfg.source.prior.build()?;
    let (codec, report) = runner::train_mlp_codec(&cfg, &source)?;
    codec_file::write(out, &codec)?;
    let line = serde_json::json!({
        "codec": out.display().to_string(),
        "validation_mse": report.validation_mse,
        "baseline_mse": report.baseline_mse,
        "steps": report.losses.len(),
    });
    println!("{line}");
    Ok(())
}
