//! CSV reports and the run manifest. Column layouts are listed in SCHEMA.md.

use std::path::Path;
use std::time::Duration;

use crate::double_oracle::EpochRecord;
use crate::error::{Error, Result};
use crate::metagame::format_f64;
use crate::metrics::CkaHeatmap;
use crate::tensor::Matrix;

/// `git describe` output captured at build time, or the package version.
pub const VERSION: &str = match option_env!("DONAS_GIT_DESCRIBE") {
    Some(v) => v,
    None => env!("CARGO_PKG_VERSION"),
};

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("csv output {}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    write_csv(
        path,
        &["epoch", "game_value", "gen_gain", "dis_gain", "row_pool", "col_pool", "terminated"],
        trace.iter().map(|r| {
            [
                r.epoch.to_string(),
                format_f64(r.game_value),
                format_f64(r.gen_gain),
                format_f64(r.dis_gain),
                r.row_pool.to_string(),
                r.col_pool.to_string(),
                r.terminated.to_string(),
            ]
        }),
    )
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// What was measured, e.g. `donas` or `baseline`.
    pub subject: String,
    pub metric: String,
    /// Attack name for robustness metrics, `none` otherwise.
    pub attack: String,
    pub eps_atk: f64,
    pub iters: usize,
    pub value: f64,
}

impl MetricRow {
    pub fn plain(subject: &str, metric: &str, value: f64) -> Self {
        MetricRow {
            subject: subject.into(),
            metric: metric.into(),
            attack: "none".into(),
            eps_atk: 0.0,
            iters: 0,
            value,
        }
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_csv(
        path,
        &["subject", "metric", "attack", "eps_atk", "iters", "value"],
        rows.iter().map(|r| {
            [
                r.subject.clone(),
                r.metric.clone(),
                r.attack.clone(),
                format_f64(r.eps_atk),
                r.iters.to_string(),
                format_f64(r.value),
            ]
        }),
    )
}

/// Reads `metrics.csv` back, for tests and downstream tooling.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let csv_err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("").to_string();
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| Error::Input(format!("{}: bad number in column {i}: {e}", path.display())))
        };
        out.push(MetricRow {
            subject: field(0),
            metric: field(1),
            attack: field(2),
            eps_atk: num(3)?,
            iters: num(4)? as usize,
            value: num(5)?,
        });
    }
    Ok(out)
}

/// Sample points with the pool index of the generator that produced each.
pub fn write_samples(path: &Path, x: &Matrix, source: &[usize]) -> Result<()> {
    write_csv(
        path,
        &["x", "y", "generator_index"],
        (0..x.rows()).map(|i| [format_f64(x.get(i, 0)), format_f64(x.get(i, 1)), source[i].to_string()]),
    )
}

/// `cka_within_NNN.csv` per network and one `cka_cross.csv`.
pub fn write_cka(dir: &Path, h: &CkaHeatmap) -> Result<()> {
    for (n, grid) in h.within.iter().enumerate() {
        write_csv(
            &dir.join(format!("cka_within_{n:03}.csv")),
            &["layer_a", "layer_b", "cka"],
            grid.iter().enumerate().flat_map(|(a, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(b, v)| [a.to_string(), b.to_string(), format_f64(*v)])
            }),
        )?;
    }
    let mut rows = Vec::new();
    for (p, qs) in h.cross.iter().enumerate() {
        for (q, layers) in qs.iter().enumerate() {
            for (l, v) in layers.iter().enumerate() {
                rows.push([p.to_string(), q.to_string(), l.to_string(), format_f64(*v)]);
            }
        }
    }
    write_csv(&dir.join("cka_cross.csv"), &["net_a", "net_b", "layer", "cka"], rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Failed { exit_code: i32, reason: String },
}

/// Written at the end of every run, successful or not.
pub fn write_manifest(dir: &Path, config_echo: Option<&str>, status: &Status, wall: Duration) -> Result<()> {
    let mut s = String::new();
    s.push_str(&format!("version: {VERSION}\n"));
    match status {
        Status::Ok => s.push_str("status: ok\nexit_code: 0\n"),
        Status::Failed { exit_code, reason } => {
            let reason = reason.replace('\n', " ");
            s.push_str(&format!("status: failed\nexit_code: {exit_code}\nreason: {reason}\n"));
        }
    }
    s.push_str(&format!("wall_time_secs: {:.3}\n", wall.as_secs_f64()));
    s.push_str("config:\n");
    if let Some(echo) = config_echo {
        for line in echo.lines() {
            s.push_str("  ");
            s.push_str(line);
            s.push('\n');
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("manifest.txt");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
