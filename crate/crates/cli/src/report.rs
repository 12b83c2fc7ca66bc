//! Result rows, CSV tables and merged summaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use phantomnet::{Error, Result};

/// One trained increment, keyed by `(method, p, gan_epochs, temperature, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    /// Old-class exemplars per class that crossed the membrane.
    pub p: usize,
    pub gan_epochs: Option<u32>,
    pub temperature: Option<f32>,
    pub seed: u64,
    pub combined: f64,
    pub old_block: Option<f64>,
    pub new_block: Option<f64>,
}

impl ResultRow {
    pub fn describe(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        format!(
            "seed {} {} p={} gan={} T={}: combined {:.4} old {} new {}",
            self.seed,
            self.method,
            self.p,
            self.gan_epochs.map_or("-".into(), |e| e.to_string()),
            self.temperature.map_or("-".into(), |t| t.to_string()),
            self.combined,
            opt(self.old_block),
            opt(self.new_block)
        )
    }

    fn group(&self) -> GroupKey {
        GroupKey {
            method: self.method.clone(),
            p: self.p,
            gan_epochs: self.gan_epochs,
            temperature: self.temperature.map(f32::to_bits),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    method: String,
    p: usize,
    gan_epochs: Option<u32>,
    temperature: Option<u32>,
}

/// Median, minimum and maximum of one metric over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Self {
            median,
            min: v[0],
            max: v[n - 1],
        })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub p: usize,
    pub gan_epochs: Option<u32>,
    pub temperature: Option<f32>,
    pub seeds: usize,
    pub combined: Spread,
    pub old_block: Option<Spread>,
    pub new_block: Option<Spread>,
}

/// Groups rows over seeds.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.group()).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let col = |f: fn(&ResultRow) -> Option<f64>| {
                let v: Vec<f64> = g.iter().filter_map(|r| f(r)).collect();
                Spread::of(&v)
            };
            SummaryRow {
                method: first.method.clone(),
                p: first.p,
                gan_epochs: first.gan_epochs,
                temperature: first.temperature,
                seeds: g.len(),
                combined: col(|r| Some(r.combined)).expect("group is non-empty"),
                old_block: col(|r| r.old_block),
                new_block: col(|r| r.new_block),
            }
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn write_table(path: &Path, header: &[&str], records: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_rows_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let records = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.p.to_string(),
                fmt_opt(r.gan_epochs),
                fmt_opt(r.temperature),
                r.seed.to_string(),
                format!("{:.6}", r.combined),
                fmt_acc(r.old_block),
                fmt_acc(r.new_block),
            ]
        })
        .collect();
    write_table(
        path,
        &["method", "p", "gan_epochs", "temperature", "seed", "combined", "old_block", "new_block"],
        records,
    )
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let spread = |s: Option<Spread>| match s {
        Some(s) => vec![format!("{:.6}", s.median), format!("{:.6}", s.range())],
        None => vec![String::new(), String::new()],
    };
    let records = rows
        .iter()
        .map(|r| {
            let mut rec = vec![
                r.method.clone(),
                r.p.to_string(),
                fmt_opt(r.gan_epochs),
                fmt_opt(r.temperature),
                r.seeds.to_string(),
            ];
            rec.extend(spread(Some(r.combined)));
            rec.extend(spread(r.old_block));
            rec.extend(spread(r.new_block));
            rec
        })
        .collect();
    write_table(
        path,
        &[
            "method",
            "p",
            "gan_epochs",
            "temperature",
            "seeds",
            "combined_median",
            "combined_range",
            "old_block_median",
            "old_block_range",
            "new_block_median",
            "new_block_range",
        ],
        records,
    )
}

/// The part of every run report that `report` reads back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowsReport {
    pub kind: String,
    pub old_classes: usize,
    pub total_classes: usize,
    pub rows: Vec<ResultRow>,
}

/// Merges run reports; runs over different class schedules are refused.
pub fn merge_reports(reports: &[RowsReport]) -> Result<(usize, usize, Vec<ResultRow>)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("report needs at least one completed run".into()))?;
    let schedule = (first.old_classes, first.total_classes);
    let mut rows = Vec::new();
    for r in reports {
        if (r.old_classes, r.total_classes) != schedule {
            return Err(Error::Config(format!(
                "cannot merge a {}/{} class schedule with {}/{}",
                r.old_classes, r.total_classes, schedule.0, schedule.1
            )));
        }
        rows.extend(r.rows.iter().cloned());
    }
    Ok((schedule.0, schedule.1, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::State(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
