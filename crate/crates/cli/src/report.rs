//! Writes a [`RunReport`] to an output directory. Everything written is a
//! deterministic function of the report; wall time is not recorded on disk.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::Format;
use crate::experiments::{RunReport, TraceKind};
use crate::svg::{self, Series};
use crate::{imageio, store};

/// `method,mse,iterations,converged`
pub fn report_csv(report: &RunReport) -> String {
    let mut out = String::from("method,mse,iterations,converged\n");
    for m in &report.methods {
        let _ = writeln!(out, "{},{:.16e},{},{}", m.name, m.mse, m.iterations, m.converged);
    }
    out
}

/// `column,<method>...` with 1-based column numbers.
pub fn per_column_csv(report: &RunReport) -> Option<String> {
    let pc = report.per_column.as_ref()?;
    let mut out = format!("column,{}\n", pc.methods.join(","));
    let cols = pc.errors.first().map_or(0, Vec::len);
    for i in 0..cols {
        let row: Vec<String> = pc.errors.iter().map(|e| format!("{:.16e}", e[i])).collect();
        let _ = writeln!(out, "{},{}", i + 1, row.join(","));
    }
    Some(out)
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Writes the report and returns the paths written:
/// - csv: `report.csv`, `trace_<method>.csv`, `per_column.csv` (image
///   mode), and the training moments under `pack/`;
/// - svg: `mse.svg`, `trace.svg`, `per_column.svg` (image mode);
/// - image mode always: `source.pgm`, `reconstruction_<method>.pgm`.
pub fn write_outputs(report: &RunReport, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    if format.csv() {
        write(dir, "report.csv", &report_csv(report), &mut written)?;
        for m in &report.methods {
            write(dir, &format!("trace_{}.csv", m.name), &m.trace_csv(), &mut written)?;
        }
        if let Some(pc) = per_column_csv(report) {
            write(dir, "per_column.csv", &pc, &mut written)?;
        }
        store::write_pack(&dir.join("pack"), &report.pack)?;
        written.push(dir.join("pack"));
    }
    if format.svg() {
        let bars: Vec<(String, f64)> = report.methods.iter().map(|m| (m.name.clone(), m.mse)).collect();
        let title = format!("{}: final MSE", report.experiment);
        write(dir, "mse.svg", &svg::bar_chart(&title, "MSE", &bars), &mut written)?;

        let series: Vec<Series> = report
            .methods
            .iter()
            .map(|m| Series {
                name: m.name.clone(),
                points: m.trace.objectives.iter().enumerate().map(|(q, v)| (q as f64, *v)).collect(),
            })
            .collect();
        let y = match report.methods.first().map(|m| m.kind) {
            Some(TraceKind::Channel) => "psi",
            _ => "objective",
        };
        let title = format!("{}: objective per iteration", report.experiment);
        write(dir, "trace.svg", &svg::line_chart(&title, "iteration", y, &series, false), &mut written)?;

        if let Some(pc) = &report.per_column {
            let series: Vec<Series> = pc
                .methods
                .iter()
                .zip(&pc.errors)
                .map(|(name, e)| Series {
                    name: name.clone(),
                    points: e.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect(),
                })
                .collect();
            let title = format!("{}: per-column error", report.experiment);
            let svg = svg::line_chart(&title, "column", "squared error", &series, false);
            write(dir, "per_column.svg", &svg, &mut written)?;
        }
    }
    for (name, img) in &report.images {
        let file = if name == "source" {
            "source.pgm".to_string()
        } else {
            format!("reconstruction_{name}.pgm")
        };
        let path = dir.join(file);
        imageio::write_pgm(&path, img)?;
        written.push(path);
    }
    Ok(written)
}

/// One-line human summary per method, wall time included.
pub fn summary(report: &RunReport) -> String {
    let mut out = format!("{} ({:.2?})\n", report.experiment, report.wall_time);
    for m in &report.methods {
        let _ = write!(
            out,
            "  {:<14} mse {:.10e}  iterations {:>6}  converged {}",
            m.name, m.mse, m.iterations, m.converged
        );
        if let Some(mean) = report.per_column.as_ref().and_then(|pc| pc.mean(&m.name)) {
            let _ = write!(out, "  mean column error {mean:.6e}");
        }
        out.push('\n');
    }
    out
}
