//! CSV emission.
//!
//! Scenario files start with `#` comment lines (tool version, generation
//! time, the fully defaulted config, the PSNR peak), followed by a header
//! and one row per trial. Each CSNR point ends with an aggregate row whose
//! `trial` is `-1`. Columns:
//!
//! `trial, seed, csnr_db, variant, steps, mse, psnr_db, l_m_final, d_h, success, frechet`
//!
//! Trial rows carry `success` as `1`/`0`, leave `frechet` empty, and leave
//! `d_h` empty outside blind decoding. Aggregate rows hold means, with
//! `success` the success ratio and `d_h` the mean over successful trials.
//! Numbers use Rust's shortest round-trip formatting; `inf` marks an exact
//! reconstruction's PSNR.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use gencomm_core::sampler::SamplerTrace;

use crate::error::{HarnessError, Result};
use crate::runner::{Aggregate, ScenarioResult};

pub const COLUMNS: [&str; 11] = [
    "trial",
    "seed",
    "csnr_db",
    "variant",
    "steps",
    "mse",
    "psnr_db",
    "l_m_final",
    "d_h",
    "success",
    "frechet",
];

pub const TRACE_COLUMNS: [&str; 5] = ["step", "t", "l_m", "l_c", "d_h"];

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn aggregate_fields(a: &Aggregate) -> [String; 8] {
    [
        num(a.csnr_db),
        a.variant.name().to_string(),
        num(a.steps),
        num(a.mse),
        num(a.psnr_db),
        num(a.l_m_final),
        opt(a.d_h),
        num(a.success_ratio),
    ]
}

/// Writes the comment header and the CSV body.
pub fn write_scenario<W: Write>(mut out: W, result: &ScenarioResult) -> Result<()> {
    let io = |e| HarnessError::io("<csv output>", e);
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    writeln!(out, "# gencomm {}", env!("CARGO_PKG_VERSION")).map_err(io)?;
    writeln!(out, "# generated_unix {now}").map_err(io)?;
    writeln!(out, "# config {}", result.config.to_json_line()).map_err(io)?;
    writeln!(out, "# peak {}", num(result.peak)).map_err(io)?;
    write_body(out, result)
}

/// The CSV header and rows only.
pub fn write_body<W: Write>(out: W, result: &ScenarioResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    let seed = result.config.seed.to_string();
    for point in &result.points {
        for t in &point.trials {
            let r = &t.report;
            w.write_record([
                t.trial.to_string(),
                seed.clone(),
                num(t.csnr_db),
                point.aggregate.variant.name().to_string(),
                t.steps.to_string(),
                num(r.mse),
                num(r.psnr_db),
                num(r.l_m_final),
                opt(r.d_h),
                if r.success { "1" } else { "0" }.to_string(),
                String::new(),
            ])?;
        }
        let a = &point.aggregate;
        let mut row = vec!["-1".to_string(), seed.clone()];
        row.extend(aggregate_fields(a));
        row.push(opt(a.frechet));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io("<csv output>", e))?;
    Ok(())
}

pub fn write_scenario_file(path: &Path, result: &ScenarioResult) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_scenario(std::io::BufWriter::new(f), result)
}

pub fn write_trace<W: Write>(out: W, trace: &SamplerTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for s in &trace.steps {
        w.write_record([
            s.step.to_string(),
            s.t.to_string(),
            num(s.l_m),
            num(s.l_c),
            opt(s.d_h),
        ])?;
    }
    w.flush()
        .map_err(|e| HarnessError::io("<trace output>", e))?;
    Ok(())
}

/// Writes `trace_<point>_<trial>.csv` for every kept trace into `dir`.
pub fn write_traces(dir: &Path, result: &ScenarioResult) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = 0;
    for (pi, point) in result.points.iter().enumerate() {
        for t in &point.trials {
            if let Some(trace) = &t.trace {
                let path = dir.join(format!("trace_{pi}_{}.csv", t.trial));
                let f = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
                write_trace(std::io::BufWriter::new(f), trace)?;
                written += 1;
            }
        }
    }
    Ok(written)
}

/// One row per `(value, CSNR point)` of a sweep.
pub fn write_sweep_summary<W: Write>(
    out: W,
    axis: &str,
    runs: &[(f64, ScenarioResult)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["axis", "value"];
    header.extend(&COLUMNS[2..]);
    w.write_record(&header)?;
    for (v, r) in runs {
        for p in &r.points {
            let mut row = vec![axis.to_string(), num(*v)];
            row.extend(aggregate_fields(&p.aggregate));
            row.push(opt(p.aggregate.frechet));
            w.write_record(&row)?;
        }
    }
    w.flush()
        .map_err(|e| HarnessError::io("<summary output>", e))?;
    Ok(())
}

/// File name of one sweep member.
pub fn sweep_file_name(name: &str, axis: &str, value: f64) -> String {
    format!("{name}_{axis}_{}.csv", num(value))
}
