use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{HarnessError, Reduction, Summary};
use crate::dimred::write_embedding_csv;
use crate::metrics::{format_per_class, MetricReport, NUM_CLASSES};

pub const REPORT_FILES: [&str; 3] = ["report.json", "report.csv", "boxplot.csv"];

#[derive(Serialize)]
struct ReportFile<'a> {
    methods: &'a [Summary],
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Write `report.json`, `report.csv`, `boxplot.csv` and, given a reduction,
/// `embedding.csv` into `out_dir`. Output bytes depend only on the inputs.
pub fn emit_report(
    summaries: &[Summary],
    out_dir: &Path,
    reduction: Option<&Reduction>,
) -> Result<Vec<PathBuf>, HarnessError> {
    if summaries.is_empty() {
        return Err(HarnessError::InvalidConfig("no summaries to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    let path = out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&ReportFile { methods: summaries })
        .expect("report serializes");
    json.push('\n');
    write_file(&path, json.as_bytes())?;
    written.push(path);

    let path = out_dir.join("report.csv");
    write_file(&path, class_rows(summaries).as_bytes())?;
    written.push(path);

    let path = out_dir.join("boxplot.csv");
    let mut csv = String::from("method,run,seed,accuracy\n");
    for s in summaries {
        for (k, r) in s.runs.iter().enumerate() {
            let _ = writeln!(csv, "{},{k},{},{}", s.method, r.seed, r.report.acc);
        }
    }
    write_file(&path, csv.as_bytes())?;
    written.push(path);

    if let Some(red) = reduction {
        let path = out_dir.join("embedding.csv");
        write_reduction_csv(&path, red)?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_reduction_csv(path: &Path, red: &Reduction) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    write_embedding_csv(&mut buf, &red.points, &red.labels)?;
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

/// One row per (method, class) with run-averaged metrics.
fn class_rows(summaries: &[Summary]) -> String {
    let mut csv = String::from("method,class,acc,gini,auc,agf,sensitivity,precision\n");
    for s in summaries {
        let r = &s.mean_report;
        for c in 0..NUM_CLASSES {
            let v = |m: &crate::metrics::PerClass| MetricReport::class_value(m, c);
            let _ = writeln!(
                csv,
                "{},{c},{},{},{},{},{},{}",
                s.method,
                r.acc,
                v(&r.gini),
                v(&r.auc),
                v(&r.agf),
                v(&r.sensitivity),
                v(&r.precision)
            );
        }
    }
    csv
}

/// Plain-text results table with per-class cells written `0:v,1:v,2:v`.
pub fn render_table(summaries: &[Summary], digits: usize) -> String {
    let rows: Vec<[String; 5]> = summaries
        .iter()
        .map(|s| {
            let r = &s.mean_report;
            [
                s.method.label().to_string(),
                format!(
                    "{:.1}% ± {:.1}",
                    100.0 * s.accuracy.mean,
                    100.0 * s.accuracy.std
                ),
                format_per_class(&r.gini, digits),
                format_per_class(&r.auc, digits),
                format_per_class(&r.agf, digits),
            ]
        })
        .collect();
    let header = ["Method", "Accuracy", "Gini", "AUC", "AGF"].map(String::from);
    let mut widths = header.clone().map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
