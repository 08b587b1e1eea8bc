//! Trace, metrics and figure-data writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use manipsim::{MetricsReport, ScenarioConfig, SimTrace};
use serde::Serialize;

fn push_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

/// Column header of the trace CSV for a given filter selection.
pub fn trace_header(config: &ScenarioConfig) -> String {
    let mut cols: Vec<String> = vec!["t", "q1", "q2", "dq1", "dq2"]
        .into_iter()
        .map(String::from)
        .collect();
    if config.filter.ekf_enabled() {
        for c in ["q1_hat_ekf", "q2_hat_ekf", "dq1_hat_ekf", "dq2_hat_ekf"] {
            cols.push(c.to_string());
        }
    }
    if config.filter.arekf_enabled() {
        for c in ["q1_hat_arekf", "q2_hat_arekf", "dq1_hat_arekf", "dq2_hat_arekf"] {
            cols.push(c.to_string());
        }
    }
    for c in ["sigma1", "sigma2", "u1", "u2", "d1", "d2", "V"] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

/// Render the full trace as CSV text.
pub fn trace_csv(trace: &SimTrace, config: &ScenarioConfig) -> String {
    let mut out = String::new();
    out.push_str(&trace_header(config));
    out.push('\n');
    let mut row: Vec<f64> = Vec::with_capacity(20);
    for rec in &trace.records {
        row.clear();
        row.push(rec.time);
        row.extend(rec.truth.iter());
        if config.filter.ekf_enabled() {
            if let Some(est) = &rec.ekf_estimate {
                row.extend(est.iter());
            }
        }
        if config.filter.arekf_enabled() {
            if let Some(est) = &rec.arekf_estimate {
                row.extend(est.iter());
            }
        }
        row.extend(rec.sigma.iter());
        row.extend(rec.torque.iter());
        row.extend(rec.disturbance.iter());
        row.push(rec.lyapunov);
        push_row(&mut out, &row);
    }
    out
}

pub fn write_trace_csv(path: &Path, trace: &SimTrace, config: &ScenarioConfig) -> io::Result<()> {
    fs::write(path, trace_csv(trace, config))
}

/// Per-figure series: joint positions/velocities with their estimates
/// (figures 2-5), the sliding variable (figure 6) and the control torque
/// (figure 7).
pub fn write_fig_csvs(dir: &Path, trace: &SimTrace, config: &ScenarioConfig) -> io::Result<()> {
    // figures 2-5: state component vs estimates
    let state_figs = [(2usize, 0usize, "q1"), (3, 2, "dq1"), (4, 1, "q2"), (5, 3, "dq2")];
    for (fig, comp, name) in state_figs {
        let mut out = String::new();
        let mut header = format!("t,{name}_true");
        if config.filter.ekf_enabled() {
            let _ = write!(header, ",{name}_ekf");
        }
        if config.filter.arekf_enabled() {
            let _ = write!(header, ",{name}_arekf");
        }
        out.push_str(&header);
        out.push('\n');
        let mut row: Vec<f64> = Vec::with_capacity(4);
        for rec in &trace.records {
            row.clear();
            row.push(rec.time);
            row.push(rec.truth[comp]);
            if config.filter.ekf_enabled() {
                if let Some(est) = &rec.ekf_estimate {
                    row.push(est[comp]);
                }
            }
            if config.filter.arekf_enabled() {
                if let Some(est) = &rec.arekf_estimate {
                    row.push(est[comp]);
                }
            }
            push_row(&mut out, &row);
        }
        fs::write(dir.join(format!("fig{fig}.csv")), out)?;
    }

    // figure 6: sliding variable
    let mut out = String::from("t,sigma1,sigma2\n");
    for rec in &trace.records {
        push_row(&mut out, &[rec.time, rec.sigma[0], rec.sigma[1]]);
    }
    fs::write(dir.join("fig6.csv"), out)?;

    // figure 7: control torque
    let mut out = String::from("t,u1,u2\n");
    for rec in &trace.records {
        push_row(&mut out, &[rec.time, rec.torque[0], rec.torque[1]]);
    }
    fs::write(dir.join("fig7.csv"), out)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    text.push('\n');
    fs::write(path, text)
}

pub fn write_metrics_json(path: &Path, metrics: &MetricsReport) -> io::Result<()> {
    write_json(path, metrics)
}
