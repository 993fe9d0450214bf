//! Report serialization: CSV and JSON writers plus atomic file replacement.
//!
//! Every CSV file starts with `#` comment lines carrying the crate version,
//! the effective configuration as single-line JSON, the master seed and the
//! RNG identity, so a data file alone is enough to reproduce itself. No
//! timestamps or host details are written: two runs with equal
//! configurations produce byte-identical files. Float cells use the
//! shortest representation that parses back to the same value.

use crate::error::Result;
use crate::estimate::MleResult;
use crate::model::{efficiency_bound, Mat2};
use crate::risk::{ConvergenceReport, ExperimentConfig, HorizonBatch, RiskEstimate};
use crate::simulate::SamplePath;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::Path;

/// Header row of the per-(horizon, statistic) risk table.
pub const RISKS_HEADER: &str = "T,stat,n_rep,n_flagged,m11,m12,m21,m22,se11,se12,se21,se22";

/// Header row of the per-horizon convergence table.
pub const CONVERGENCE_HEADER: &str = "T,trace_t_qer,trace_t_qep,trace_bound,frob_rel_qer,\
frob_rel_qep,gap_qer_qep,drift_mc,drift_analytic,theta_gap";

const RNG_NOTE: &str = "chacha8 counter streams, ziggurat standard normals";

/// Output encoding selected by `--format`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }

    pub fn extension(self) -> &'static str {
        self.as_str()
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(crate::error::Error::Config(format!(
                "unknown format '{other}' (expected csv or json)"
            ))),
        }
    }
}

/// Writes `contents` to `path` through a sibling temp file and a rename,
/// so readers never observe a half-written report.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// The scientific part of a configuration as a JSON value, with the same
/// keys the CLI config file uses. Thread and output settings are excluded
/// on purpose: they must never influence the data.
pub fn config_value(cfg: &ExperimentConfig) -> Value {
    json!({
        "alpha": cfg.theta.alpha(),
        "beta": cfg.theta.beta(),
        "h": cfg.h.value(),
        "T_grid": cfg.t_grid,
        "dt": cfg.dt,
        "n_rep": cfg.n_rep,
        "seed": cfg.master_seed,
        "estimator": cfg.estimator.as_str(),
        "s_rule": cfg.s_rule.as_str(),
    })
}

fn meta_value(cfg: &ExperimentConfig) -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config_value(cfg),
        "seed": cfg.master_seed,
        "rng": RNG_NOTE,
    })
}

fn comment_header(cfg: &ExperimentConfig) -> String {
    format!(
        "# lanpredict v{}\n# config: {}\n# seed: {}\n# rng: {}\n",
        env!("CARGO_PKG_VERSION"),
        serde_json::to_string(&config_value(cfg)).expect("config serializes"),
        cfg.master_seed,
        RNG_NOTE,
    )
}

fn push_risk_row(out: &mut String, t: f64, stat: &str, est: &RiskEstimate) {
    let m = est.matrix;
    let s = est.se;
    writeln!(
        out,
        "{t},{stat},{},{},{},{},{},{},{},{},{},{}",
        est.n_rep, est.n_flagged, m.a11, m.a12, m.a21, m.a22, s.a11, s.a12, s.a21, s.a22
    )
    .expect("writing to String cannot fail");
}

/// Per-batch statistic rows in file order, the closed-form limit last.
fn batch_stats(cfg: &ExperimentConfig, b: &HorizonBatch) -> [(&'static str, RiskEstimate); 6] {
    let bound = RiskEstimate {
        matrix: efficiency_bound(cfg.theta, cfg.h),
        se: Mat2::zero(),
        n_rep: b.n_rep,
        n_flagged: b.n_flagged,
    };
    [
        ("t_qer", b.qer),
        ("t_qep", b.qep),
        ("t_qer_aux", b.qer_aux),
        ("t_qep_aux", b.qep_aux),
        ("mle_var", b.mle_var),
        ("bound", bound),
    ]
}

/// Risk table: six rows per horizon, one per statistic.
pub fn risks_csv(cfg: &ExperimentConfig, batches: &[HorizonBatch]) -> String {
    let mut out = comment_header(cfg);
    out.push_str(RISKS_HEADER);
    out.push('\n');
    for b in batches {
        for (stat, est) in batch_stats(cfg, b) {
            push_risk_row(&mut out, b.t, stat, &est);
        }
    }
    out
}

pub fn risks_json(cfg: &ExperimentConfig, batches: &[HorizonBatch]) -> String {
    let rows: Vec<Value> = batches
        .iter()
        .flat_map(|b| {
            batch_stats(cfg, b).into_iter().map(|(stat, est)| {
                json!({
                    "T": b.t,
                    "stat": stat,
                    "n_rep": est.n_rep,
                    "n_flagged": est.n_flagged,
                    "m11": est.matrix.a11, "m12": est.matrix.a12,
                    "m21": est.matrix.a21, "m22": est.matrix.a22,
                    "se11": est.se.a11, "se12": est.se.a12,
                    "se21": est.se.a21, "se22": est.se.a22,
                })
            })
        })
        .collect();
    let doc = json!({ "meta": meta_value(cfg), "rows": rows });
    serde_json::to_string_pretty(&doc).expect("report serializes")
}

/// Convergence table: one row per horizon of the sorted grid.
pub fn convergence_csv(cfg: &ExperimentConfig, report: &ConvergenceReport) -> String {
    let mut out = comment_header(cfg);
    out.push_str(CONVERGENCE_HEADER);
    out.push('\n');
    for row in &report.rows {
        let b = &row.batch;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            b.t,
            b.qer.matrix.trace(),
            b.qep.matrix.trace(),
            row.bound.trace(),
            row.frob_rel_qer,
            row.frob_rel_qep,
            row.gap_qer_qep,
            b.drift_mc,
            b.drift_analytic,
            b.theta_gap
        )
        .expect("writing to String cannot fail");
    }
    out
}

pub fn convergence_json(cfg: &ExperimentConfig, report: &ConvergenceReport) -> String {
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|row| {
            let b = &row.batch;
            json!({
                "T": b.t,
                "trace_t_qer": b.qer.matrix.trace(),
                "trace_t_qep": b.qep.matrix.trace(),
                "trace_bound": row.bound.trace(),
                "frob_rel_qer": row.frob_rel_qer,
                "frob_rel_qep": row.frob_rel_qep,
                "gap_qer_qep": row.gap_qer_qep,
                "drift_mc": b.drift_mc,
                "drift_analytic": b.drift_analytic,
                "theta_gap": b.theta_gap,
            })
        })
        .collect();
    let doc = json!({ "meta": meta_value(cfg), "rows": rows });
    serde_json::to_string_pretty(&doc).expect("report serializes")
}

/// One simulated path as `t,x1,x2,dw1,dw2` rows. The driving increments
/// live on the steps, so the terminal row leaves them empty. State and
/// increment cells round-trip exactly through [`read_path_csv`].
pub fn path_csv(cfg: &ExperimentConfig, path: &SamplePath) -> String {
    let dt = path.grid.dt();
    let mut out = comment_header(cfg);
    writeln!(out, "# dt: {dt}").expect("writing to String cannot fail");
    out.push_str("t,x1,x2,dw1,dw2\n");
    for (i, x) in path.states.iter().enumerate() {
        let t = i as f64 * dt;
        if let Some(dw) = path.increments.get(i) {
            writeln!(out, "{t:.6},{},{},{},{}", x.x, x.y, dw.x, dw.y)
        } else {
            writeln!(out, "{t:.6},{},{},,", x.x, x.y)
        }
        .expect("writing to String cannot fail");
    }
    out
}

/// Reads a path dump written by [`path_csv`] back into a [`SamplePath`].
pub fn read_path_csv(file: &Path) -> Result<SamplePath> {
    use crate::error::Error;
    use crate::simulate::PathGrid;
    use crate::Vec2;

    let text = std::fs::read_to_string(file)?;
    let bad = |msg: String| Error::Config(format!("{}: {msg}", file.display()));
    let mut dt = None;
    let mut states = Vec::new();
    let mut increments = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# dt:") {
            dt = Some(
                rest.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("malformed dt comment: {e}")))?,
            );
            continue;
        }
        if line.starts_with('#') || line.starts_with("t,") || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(bad(format!("expected 5 cells, got {}: '{line}'", cells.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad float '{s}': {e}")));
        states.push(Vec2::new(num(cells[1])?, num(cells[2])?));
        if !cells[3].is_empty() || !cells[4].is_empty() {
            increments.push(Vec2::new(num(cells[3])?, num(cells[4])?));
        }
    }
    let dt = dt.ok_or_else(|| bad("missing '# dt:' header".into()))?;
    if states.len() < 3 {
        return Err(bad(format!("path has only {} nodes", states.len())));
    }
    if increments.len() != states.len() - 1 {
        return Err(bad(format!(
            "{} increment rows do not match {} state nodes",
            increments.len(),
            states.len()
        )));
    }
    let grid = PathGrid::new(dt, states.len() - 1)?;
    Ok(SamplePath { grid, states, increments })
}

fn estimation_value(r: &MleResult) -> Value {
    json!({
        "theta_hat": [r.theta_hat.alpha(), r.theta_hat.beta()],
        "converged": r.converged,
        "iterations": r.iterations,
        "log_lik": r.log_lik,
        "gradient_norm": r.gradient_norm,
        "method": r.method.as_str(),
    })
}

/// JSON array of estimation reports, one object per method.
pub fn estimation_reports_json(results: &[MleResult]) -> String {
    let rows: Vec<Value> = results.iter().map(estimation_value).collect();
    serde_json::to_string_pretty(&rows).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{run_batch, convergence_study};
    use crate::simulate::{simulate_exact, PathGrid, RngStream};
    use crate::model::Theta;

    fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig {
            t_grid: vec![6.0, 12.0],
            dt: 0.05,
            n_rep: 40,
            master_seed: 11,
            ..ExperimentConfig::default_config()
        }
    }

    fn scratch_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("lanpredict-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let path = scratch_path("atomic.csv");
        write_atomic(&path, "first\n").unwrap();
        write_atomic(&path, "second\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second\n");
        let tmp = path.with_extension("csv.tmp");
        assert!(!tmp.exists(), "temp file must not survive");
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn risks_csv_schema_and_round_trip() {
        let cfg = tiny_cfg();
        let b = run_batch(&cfg, 6.0).unwrap();
        let text = risks_csv(&cfg, std::slice::from_ref(&b));
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# lanpredict v"));
        assert!(lines.next().unwrap().starts_with("# config: {"));
        assert_eq!(lines.next().unwrap(), format!("# seed: {}", cfg.master_seed));
        assert!(lines.next().unwrap().starts_with("# rng: "));
        assert_eq!(lines.next().unwrap(), RISKS_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 6, "six statistic rows per horizon");

        let first: Vec<&str> = rows[0].split(',').collect();
        assert_eq!(first[1], "t_qer");
        assert_eq!(first.len(), 12);
        let m11: f64 = first[4].parse().unwrap();
        assert_eq!(m11, b.qer.matrix.a11, "cells must round-trip exactly");

        let bound_row: Vec<&str> = rows[5].split(',').collect();
        assert_eq!(bound_row[1], "bound");
        for cell in &bound_row[8..] {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0, "the limit row has no noise");
        }
    }

    #[test]
    fn convergence_csv_matches_report() {
        let cfg = tiny_cfg();
        let rep = convergence_study(&cfg).unwrap();
        let text = convergence_csv(&cfg, &rep);
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data[0], CONVERGENCE_HEADER);
        assert_eq!(data.len(), 1 + rep.rows.len());
        let row: Vec<&str> = data[1].split(',').collect();
        assert_eq!(row.len(), 10);
        assert_eq!(row[0].parse::<f64>().unwrap(), rep.rows[0].batch.t);
        assert_eq!(row[4].parse::<f64>().unwrap(), rep.rows[0].frob_rel_qer);
    }

    #[test]
    fn json_mirrors_carry_meta_and_rows() {
        let cfg = tiny_cfg();
        let rep = convergence_study(&cfg).unwrap();
        let doc: Value = serde_json::from_str(&convergence_json(&cfg, &rep)).unwrap();
        assert_eq!(doc["meta"]["seed"], json!(cfg.master_seed));
        assert_eq!(doc["meta"]["config"]["alpha"], json!(1.0));
        assert_eq!(doc["rows"].as_array().unwrap().len(), rep.rows.len());
        assert_eq!(
            doc["rows"][0]["theta_gap"].as_f64().unwrap(),
            rep.rows[0].batch.theta_gap
        );

        let b = run_batch(&cfg, 6.0).unwrap();
        let risks: Value = serde_json::from_str(&risks_json(&cfg, &[b.clone()])).unwrap();
        let rows = risks["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0]["stat"], json!("t_qer"));
        assert_eq!(rows[0]["m12"].as_f64().unwrap(), b.qer.matrix.a12);
    }

    #[test]
    fn path_csv_shape_and_round_trip() {
        let cfg = tiny_cfg();
        let theta = Theta::new(1.0, 0.5).unwrap();
        let grid = PathGrid::for_horizon(1.0, 0.25).unwrap();
        let path = simulate_exact(theta, grid, RngStream::new(3, 0));
        let text = path_csv(&cfg, &path);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# lanpredict v"));
        assert_eq!(lines[4], "# dt: 0.25");
        assert_eq!(lines[5], "t,x1,x2,dw1,dw2");
        assert_eq!(lines.len(), 6 + 5, "four steps plus terminal node");
        assert!(lines.last().unwrap().ends_with(",,"), "terminal row has no increment");
        let cells: Vec<&str> = lines[6].split(',').collect();
        assert_eq!(cells[0], "0.000000");
        assert_eq!(cells[1].parse::<f64>().unwrap(), path.states[0].x);

        let file = scratch_path("roundtrip.csv");
        write_atomic(&file, &text).unwrap();
        let back = read_path_csv(&file).unwrap();
        assert_eq!(back.states, path.states, "states must round-trip bitwise");
        assert_eq!(back.increments, path.increments);
        assert_eq!(back.grid.dt(), 0.25);
        std::fs::remove_file(&file).unwrap();
    }

    #[test]
    fn path_reader_rejects_malformed_dumps() {
        let file = scratch_path("malformed.csv");
        write_atomic(&file, "t,x1,x2,dw1,dw2\n0.0,1.0,2.0,0.1,0.2\n").unwrap();
        let err = read_path_csv(&file).unwrap_err();
        assert!(err.to_string().contains("dt"), "missing dt header: {err}");
        write_atomic(&file, "# dt: 0.5\nt,x1,x2,dw1,dw2\n0.0,1.0,oops,0.1,0.2\n").unwrap();
        assert!(read_path_csv(&file).is_err());
        std::fs::remove_file(&file).unwrap();
    }

    #[test]
    fn estimation_reports_round_trip() {
        let theta = Theta::new(1.0, 0.5).unwrap();
        let grid = PathGrid::for_horizon(50.0, 0.01).unwrap();
        let path = simulate_exact(theta, grid, RngStream::new(9, 0));
        let st = crate::estimate::SufficientStats::from_path(&path);
        let fit = crate::estimate::mle_newton(&st, theta, 1e-10, 50).unwrap();
        let text = estimation_reports_json(std::slice::from_ref(&fit));
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc.as_array().unwrap().len(), 1);
        assert_eq!(doc[0]["method"], json!("newton"));
        assert_eq!(doc[0]["converged"], json!(true));
        assert_eq!(
            doc[0]["theta_hat"][0].as_f64().unwrap(),
            fit.theta_hat.alpha()
        );
    }

    #[test]
    fn config_value_excludes_execution_settings() {
        let cfg = ExperimentConfig { threads: 7, ..tiny_cfg() };
        let v = config_value(&cfg);
        assert!(v.get("threads").is_none(), "thread count must not enter data files");
        assert_eq!(v["T_grid"], json!([6.0, 12.0]));
        let header_a = comment_header(&cfg);
        let header_b = comment_header(&ExperimentConfig { threads: 1, ..tiny_cfg() });
        assert_eq!(header_a, header_b);
    }
}
