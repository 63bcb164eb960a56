//! File outputs. Every file is written to a temporary sibling and renamed.
//!
//! Layout under the output directory:
//!
//! | file | columns |
//! |---|---|
//! | `curves/<strategy>_seed<seed>.csv` | `t,q1..qn,err_norm,best_so_far` |
//! | `holdout/<strategy>_seed<seed>.csv` | `idx,q1..qn,err_uncal,err_cal,eq_w,eq_x,eq_y,eq_z,ep_x,ep_y,ep_z` |
//! | `runs/<strategy>_seed<seed>.json` | full run record, `schema_version` first |
//! | `aggregate.csv` | `strategy,t,runs,err_median,err_q25,err_q75,best_median,best_q25,best_q75` |
//! | `summary.csv` | `strategy,seed,rows,final_best,holdout_mean_uncal,holdout_mean_cal,holdout_median_uncal,holdout_median_cal` |
//! | `sweep.csv` | `level,method,seed,holdout_error` |
//! | `sweep_summary.csv` | `level,method,runs,median_error` |
//! | `histogram.csv` | `axis,bin_lo,bin_hi,count` |
//! | `histogram_moments.csv` | `axis,n,mean,std,skewness,excess_kurtosis,underflow,overflow` |
//! | `failures.json` | runs that errored, only when there were any |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::acquisition::{RunRecord, Strategy};
use crate::error::{Error, Result};
use crate::harness::experiment::{ResidualHistogram, RunFailure, SweepTable};
use crate::residual::quantile;

/// Write `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(header).map_err(ser)?;
    for row in rows {
        w.write_record(&row).map_err(ser)?;
    }
    w.into_inner().map_err(|e| Error::Serialization(e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn f(v: f64) -> String {
    v.to_string()
}

fn q_header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn dof_of(record: &RunRecord) -> usize {
    record.rows.first().map_or(0, |r| r.q.len())
}

pub fn curves_csv(record: &RunRecord) -> Result<Vec<u8>> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(q_header("q", dof_of(record)))
        .chain(["err_norm".into(), "best_so_far".into()])
        .collect();
    csv_bytes(
        &header,
        record.rows.iter().map(|r| {
            std::iter::once(r.t.to_string())
                .chain(r.q.iter().map(|v| f(*v)))
                .chain([f(r.err_norm), f(r.best_so_far)])
                .collect()
        }),
    )
}

pub fn holdout_csv(record: &RunRecord) -> Result<Vec<u8>> {
    let n = record.holdout.points.first().map_or(0, |p| p.q.len());
    let header: Vec<String> = std::iter::once("idx".to_string())
        .chain(q_header("q", n))
        .chain(
            ["err_uncal", "err_cal", "eq_w", "eq_x", "eq_y", "eq_z", "ep_x", "ep_y", "ep_z"]
                .iter()
                .map(|s| s.to_string()),
        )
        .collect();
    csv_bytes(
        &header,
        record.holdout.points.iter().map(|p| {
            std::iter::once(p.idx.to_string())
                .chain(p.q.iter().map(|v| f(*v)))
                .chain([f(p.err_uncal), f(p.err_cal)])
                .chain(p.axis_err.iter().map(|v| f(*v)))
                .collect()
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePoint {
    pub strategy: Strategy,
    pub t: usize,
    pub runs: usize,
    pub err: [f64; 3],
    pub best: [f64; 3],
}

/// Pointwise median and quartiles of the per-run curves, per strategy.
pub fn aggregate_curves(records: &[RunRecord]) -> Vec<AggregatePoint> {
    let mut out = Vec::new();
    for strategy in Strategy::ALL {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.strategy == strategy).collect();
        let longest = runs.iter().map(|r| r.rows.len()).max().unwrap_or(0);
        for t in 1..=longest {
            let (err, best): (Vec<f64>, Vec<f64>) = runs
                .iter()
                .filter_map(|r| r.rows.get(t - 1))
                .map(|row| (row.err_norm, row.best_so_far))
                .unzip();
            let q = |v: &[f64]| [quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75)];
            out.push(AggregatePoint {
                strategy,
                t,
                runs: err.len(),
                err: q(&err),
                best: q(&best),
            });
        }
    }
    out
}

pub fn aggregate_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let header: Vec<String> = [
        "strategy",
        "t",
        "runs",
        "err_median",
        "err_q25",
        "err_q75",
        "best_median",
        "best_q25",
        "best_q75",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    csv_bytes(
        &header,
        aggregate_curves(records).into_iter().map(|p| {
            [p.strategy.name().to_string(), p.t.to_string(), p.runs.to_string()]
                .into_iter()
                .chain(p.err.iter().chain(&p.best).map(|v| f(*v)))
                .collect()
        }),
    )
}

pub fn summary_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let header: Vec<String> = [
        "strategy",
        "seed",
        "rows",
        "final_best",
        "holdout_mean_uncal",
        "holdout_mean_cal",
        "holdout_median_uncal",
        "holdout_median_cal",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    csv_bytes(
        &header,
        records.iter().map(|r| {
            let h = &r.holdout;
            vec![
                r.strategy.name().to_string(),
                r.seed.to_string(),
                r.rows.len().to_string(),
                f(r.rows.last().map_or(f64::NAN, |x| x.best_so_far)),
                f(h.mean_uncal),
                f(h.mean_cal),
                f(h.median_uncal),
                f(h.median_cal),
            ]
        }),
    )
}

pub fn sweep_csvs(table: &SweepTable) -> Result<(Vec<u8>, Vec<u8>)> {
    let rows = csv_bytes(
        &["level", "method", "seed", "holdout_error"].map(String::from),
        table.rows.iter().map(|r| {
            vec![f(r.level), r.method.name().into(), r.seed.to_string(), f(r.holdout_error)]
        }),
    )?;
    let summary = csv_bytes(
        &["level", "method", "runs", "median_error"].map(String::from),
        table.summary.iter().map(|s| {
            vec![f(s.level), s.method.name().into(), s.runs.to_string(), f(s.median_error)]
        }),
    )?;
    Ok((rows, summary))
}

pub fn histogram_csvs(h: &ResidualHistogram) -> Result<(Vec<u8>, Vec<u8>)> {
    let bins = csv_bytes(
        &["axis", "bin_lo", "bin_hi", "count"].map(String::from),
        h.axes.iter().flat_map(|a| {
            a.counts.iter().enumerate().map(move |(k, c)| {
                vec![a.axis.clone(), f(a.edges[k]), f(a.edges[k + 1]), c.to_string()]
            })
        }),
    )?;
    let moments = csv_bytes(
        &["axis", "n", "mean", "std", "skewness", "excess_kurtosis", "underflow", "overflow"].map(String::from),
        h.axes.iter().map(|a| {
            let m = &a.moments;
            vec![
                a.axis.clone(),
                m.n.to_string(),
                f(m.mean),
                f(m.std),
                f(m.skewness),
                f(m.excess_kurtosis),
                a.underflow.to_string(),
                a.overflow.to_string(),
            ]
        }),
    )?;
    Ok((bins, moments))
}

/// An output directory with the fixed layout above.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn stem(record: &RunRecord) -> String {
        format!("{}_seed{}", record.strategy.name(), record.seed)
    }

    /// Per-run files: curve CSV, holdout CSV, JSON record.
    pub fn write_run(&self, record: &RunRecord) -> Result<Vec<PathBuf>> {
        let stem = Self::stem(record);
        let files = [
            (self.root.join("curves").join(format!("{stem}.csv")), curves_csv(record)?),
            (self.root.join("holdout").join(format!("{stem}.csv")), holdout_csv(record)?),
            (self.root.join("runs").join(format!("{stem}.json")), json_bytes(record)?),
        ];
        let mut written = Vec::new();
        for (path, bytes) in files {
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn write_failures(&self, failures: &[RunFailure]) -> Result<Option<PathBuf>> {
        if failures.is_empty() {
            return Ok(None);
        }
        let path = self.root.join("failures.json");
        write_atomic(&path, &json_bytes(&failures)?)?;
        Ok(Some(path))
    }

    pub fn write_sweep(&self, table: &SweepTable) -> Result<Vec<PathBuf>> {
        let (rows, summary) = sweep_csvs(table)?;
        let a = self.root.join("sweep.csv");
        let b = self.root.join("sweep_summary.csv");
        write_atomic(&a, &rows)?;
        write_atomic(&b, &summary)?;
        Ok(vec![a, b])
    }

    pub fn write_histogram(&self, h: &ResidualHistogram) -> Result<Vec<PathBuf>> {
        let (bins, moments) = histogram_csvs(h)?;
        let a = self.root.join("histogram.csv");
        let b = self.root.join("histogram_moments.csv");
        write_atomic(&a, &bins)?;
        write_atomic(&b, &moments)?;
        Ok(vec![a, b])
    }
}

/// Per-run files for every record plus the aggregate and summary tables.
pub fn emit_outputs(records: &[RunRecord], dir: &OutputDir) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::domain("no run records to write"));
    }
    let mut written = Vec::new();
    for r in records {
        written.extend(dir.write_run(r)?);
    }
    for (name, bytes) in [("aggregate.csv", aggregate_csv(records)?), ("summary.csv", summary_csv(records)?)] {
        let path = dir.root().join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
