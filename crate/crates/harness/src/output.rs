//! Result files. Everything but `timings.csv` and the timing fields of
//! `report.json` is a pure function of config and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use temperflow::flows::write_container;

use crate::config::ExperimentConfig;
use crate::experiments::RunReport;
use crate::{io_err, Result};

/// Version of the `metrics.csv` column layout.
pub const CSV_SCHEMA: &str = "metrics-v1: method,target,rep,adj_w1,adj_mmd";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_hash: &'a str,
    seed: u64,
    replications: usize,
    csv_schema: &'a str,
    harness_version: &'a str,
    files: Vec<String>,
    config: &'a ExperimentConfig,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Writes all outputs under `dir` and returns the file names written.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, report: &RunReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();

    let p = dir.join("report.json");
    serde_json::to_writer_pretty(create(&p)?, report)?;
    files.push(p);

    let p = dir.join("metrics.csv");
    let mut w = csv::Writer::from_writer(create(&p)?);
    for row in &report.metrics {
        w.serialize(row)?;
    }
    if report.metrics.is_empty() {
        w.write_record(["method", "target", "rep", "adj_w1", "adj_mmd"])?;
    }
    w.flush().map_err(io_err(&p))?;
    files.push(p);

    let p = dir.join("timings.csv");
    let mut w = csv::Writer::from_writer(create(&p)?);
    for row in &report.timings {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(&p))?;
    files.push(p);

    let p = dir.join("betas.jsonl");
    let mut w = create(&p)?;
    for rec in &report.ladders {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(io_err(&p))?;
    }
    w.flush().map_err(io_err(&p))?;
    files.push(p);

    if !report.grids.is_empty() {
        let gdir = dir.join("densities");
        fs::create_dir_all(&gdir).map_err(io_err(&gdir))?;
        for g in &report.grids {
            let p = gdir.join(format!("{}.csv", g.name));
            let mut w = csv::Writer::from_writer(create(&p)?);
            w.write_record(["x", "density", "truth"])?;
            for i in 0..g.x.len() {
                w.write_record([g.x[i].to_string(), g.density[i].to_string(), g.truth[i].to_string()])?;
            }
            w.flush().map_err(io_err(&p))?;
            files.push(p);
        }
    }

    if cfg.write_samples && !report.samples.is_empty() {
        let p = dir.join("samples.bin");
        let sets: Vec<_> = report
            .samples
            .iter()
            .map(|s| serde_json::json!({"method": s.method, "target": s.target, "rep": s.rep}))
            .collect();
        let manifest = serde_json::json!({"kind": "samples", "sets": sets});
        let tensors: Vec<_> = report.samples.iter().map(|s| s.samples.clone()).collect();
        let mut w = create(&p)?;
        write_container(&mut w, &manifest, &tensors)?;
        w.flush().map_err(io_err(&p))?;
        files.push(p);
    }

    let p = dir.join("manifest.json");
    let names = files
        .iter()
        .map(|f| f.strip_prefix(dir).unwrap_or(f).display().to_string())
        .collect();
    let m = Manifest {
        experiment: &report.experiment,
        config_hash: &report.config_hash,
        seed: report.seed,
        replications: report.replications,
        csv_schema: CSV_SCHEMA,
        harness_version: env!("CARGO_PKG_VERSION"),
        files: names,
        config: cfg,
    };
    serde_json::to_writer_pretty(create(&p)?, &m)?;
    files.push(p);
    Ok(files)
}

/// Human-readable summary table.
pub fn summary_table(report: &RunReport) -> String {
    let mut s = String::new();
    if !report.summary.is_empty() {
        s.push_str(&format!(
            "{:<16} {:<22} {:>12} {:>12} {:>10}\n",
            "method", "target", "med adj W1", "med adj MMD", "min occ"
        ));
        for m in &report.summary {
            let occ = m.min_occupancy.map_or("-".to_string(), |o| format!("{o:.4}"));
            s.push_str(&format!(
                "{:<16} {:<22} {:>12.4} {:>12.5} {:>10}\n",
                m.method, m.target, m.median_adj_w1, m.median_adj_mmd, occ
            ));
        }
    }
    for a in &report.alpha_sweep {
        s.push_str(&format!(
            "alpha {:.2} on {}: mean ladder length {:.1}, incomplete {}\n",
            a.alpha, a.target, a.mean_ladder_length, a.incomplete_runs
        ));
    }
    if let Some(t) = &report.timing_bench {
        s.push_str(&format!(
            "{}: train {:.2}s, generate {} draws {:.4}s, MH {} iterations {:.4}s (ratio {:.2})\n",
            t.target, t.train_seconds, t.draws, t.generate_seconds, t.mh_iterations, t.mh_seconds, t.speedup
        ));
    }
    for c in &report.checks {
        s.push_str(&format!("[{}] {} {}\n", if c.passed { "ok" } else { "warn" }, c.name, c.detail));
    }
    s
}
