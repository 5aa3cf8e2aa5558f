use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use crate::error::{Error, Result};

/// Fixed CSV column order.
pub const CSV_HEADER: [&str; 11] = [
    "algorithm",
    "dataset",
    "sparsity",
    "retained_fraction",
    "seed",
    "rmse",
    "mae",
    "train_time_s",
    "predict_time_s",
    "hyperparameters",
    "extra",
];

/// One (algorithm, sparsity, seed) cell. `sparsity` is `1 - retained_fraction`;
/// `hyperparameters` and `extra` hold compact JSON objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub algorithm: String,
    pub dataset: String,
    pub sparsity: f64,
    pub retained_fraction: f64,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub train_time_s: f64,
    pub predict_time_s: f64,
    pub hyperparameters: String,
    pub extra: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub host: String,
    pub threads: usize,
    pub os: String,
    pub arch: String,
    pub version: String,
}

impl Environment {
    pub fn capture() -> Self {
        let host = std::env::var("HOSTNAME")
            .ok()
            .filter(|h| !h.is_empty())
            .or_else(|| {
                std::fs::read_to_string("/etc/hostname")
                    .ok()
                    .map(|h| h.trim().to_string())
            })
            .filter(|h| !h.is_empty())
            .unwrap_or_else(|| "unknown".into());
        Environment {
            host,
            threads: crate::par::available_threads(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub environment: Environment,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        EvalReport {
            environment: Environment::capture(),
            rows,
        }
    }

    /// Checks `mae <= rmse` (with 1e-12 slack) and non-negative times.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if !(r.mae >= 0.0 && r.mae <= r.rmse + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "{} at sparsity {} seed {}: mae {} exceeds rmse {}",
                    r.algorithm, r.sparsity, r.seed, r.mae, r.rmse
                )));
            }
            if !(r.train_time_s >= 0.0 && r.predict_time_s >= 0.0) {
                return Err(Error::InvalidParameter(format!("{}: negative timing", r.algorithm)));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows written by [`EvalReport::write_csv`]; the environment is
    /// not part of the CSV and is captured afresh.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::InvalidParameter(format!(
                "unexpected report header {header:?}, expected {CSV_HEADER:?}"
            )));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<EvalRow>, _>>()?;
        Ok(EvalReport::new(rows))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Mean and sample standard deviation across seeds of one (algorithm,
/// sparsity) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: String,
    pub dataset: String,
    pub sparsity: f64,
    pub retained_fraction: f64,
    pub runs: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub train_time_mean: f64,
    pub predict_time_mean: f64,
}

/// Groups rows by (dataset, algorithm, retained fraction) in order of first
/// appearance.
pub fn aggregate(rows: &[EvalRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(&EvalRow, Vec<&EvalRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(g, _)| {
            g.algorithm == r.algorithm && g.dataset == r.dataset && g.retained_fraction == r.retained_fraction
        }) {
            Some((_, members)) => members.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(g, members)| {
            let col = |f: fn(&EvalRow) -> f64| members.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (rmse_mean, rmse_std) = mean_std(&col(|r| r.rmse));
            let (mae_mean, mae_std) = mean_std(&col(|r| r.mae));
            AggregateRow {
                algorithm: g.algorithm.clone(),
                dataset: g.dataset.clone(),
                sparsity: g.sparsity,
                retained_fraction: g.retained_fraction,
                runs: members.len(),
                rmse_mean,
                rmse_std,
                mae_mean,
                mae_std,
                train_time_mean: mean_std(&col(|r| r.train_time_s)).0,
                predict_time_mean: mean_std(&col(|r| r.predict_time_s)).0,
            }
        })
        .collect()
}

fn percent(x: f64) -> String {
    let p = x * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{p:.0}%")
    } else {
        format!("{p:.1}%")
    }
}

/// Aligned text table with one line per aggregate row. Data sparsity is
/// shown both as the masked share and as the retained share of training
/// ratings.
pub fn render_table(rows: &[AggregateRow]) -> String {
    let header = ["Algorithm", "Data Sparsity", "RMSE", "MAE", "Training Time (s)"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            let pm = |m: f64, s: f64| {
                if r.runs > 1 {
                    format!("{m:.4} ± {s:.4}")
                } else {
                    format!("{m:.4}")
                }
            };
            [
                r.algorithm.clone(),
                format!("{} (retained {})", percent(r.sparsity), percent(r.retained_fraction)),
                pm(r.rmse_mean, r.rmse_std),
                pm(r.mae_mean, r.mae_std),
                format!("{:.3}", r.train_time_mean),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    line(&mut out, &widths.map(|w| "-".repeat(w)));
    for row in &body {
        line(&mut out, row);
    }
    out
}
