//! Run output: the CSV table, its flags sidecar, and the run report.
//!
//! A run `k` of strategy `s` is written as
//! `<out>/<s>/run_<k>.csv`, `run_<k>.flags.csv` and `run_<k>.report`.

use std::fs;
use std::path::{Path, PathBuf};

use probtab_core::oracle::CallCounters;
use probtab_core::{DatasetSchema, FeatureKind, GenerationRun, Table};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: header {found:?} does not match schema {expected:?}")]
    HeaderMismatch {
        path: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RowWidth {
        path: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: row {row}: `{value}` is not an integer")]
    BadValue { path: String, row: usize, value: String },
    #[error("{path}: {message}")]
    Report { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Column name holding the realized integer of a numeric-range feature.
pub fn value_column(feature: &str) -> String {
    format!("{feature} (value)")
}

/// CSV header for `schema`: feature names in order, each numeric-range
/// feature followed by its value column.
pub fn csv_header(schema: &DatasetSchema) -> Vec<String> {
    let mut header = Vec::new();
    for f in schema.features() {
        header.push(f.name.clone());
        if f.kind == FeatureKind::NumericRange {
            header.push(value_column(&f.name));
        }
    }
    header
}

pub fn table_to_csv(table: &Table) -> Vec<u8> {
    let schema = table.schema();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(schema)).expect("in-memory write");
    let mut record: Vec<String> = Vec::new();
    for row in 0..table.len() {
        record.clear();
        for (c, f) in schema.features().iter().enumerate() {
            record.push(table.cell(row, c).label().to_string());
            if f.kind == FeatureKind::NumericRange {
                record.push(table.realized(c).map_or_else(String::new, |v| v[row].to_string()));
            }
        }
        w.write_record(&record).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Off-list cells as `row,feature,label`, rows counted from 0 after the header.
pub fn flags_to_csv(table: &Table) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "feature", "label"]).expect("in-memory write");
    for (row, col) in table.flagged_cells() {
        let feature = &table.schema().features()[col].name;
        w.write_record([row.to_string().as_str(), feature, table.cell(row, col).label()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn read_table(path: &Path, schema: &DatasetSchema) -> Result<Table, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let expected = csv_header(schema);
    let found: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if found != expected {
        return Err(IoError::HeaderMismatch {
            path: path.display().to_string(),
            expected,
            found,
        });
    }
    let features = schema.features();
    let mut table = Table::new(schema.clone());
    let mut values: Vec<Option<Vec<i64>>> = features
        .iter()
        .map(|f| (f.kind == FeatureKind::NumericRange).then(Vec::new))
        .collect();
    let mut labels = Vec::with_capacity(features.len());
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        if record.len() != expected.len() {
            return Err(IoError::RowWidth {
                path: path.display().to_string(),
                row,
                expected: expected.len(),
                found: record.len(),
            });
        }
        labels.clear();
        let mut fields = record.iter();
        for v in values.iter_mut() {
            labels.push(fields.next().unwrap_or_default().to_string());
            if let Some(v) = v {
                let text = fields.next().unwrap_or_default();
                // Table-wide and cell-by-cell runs leave the value column empty.
                if !text.is_empty() {
                    v.push(text.parse().map_err(|_| IoError::BadValue {
                        path: path.display().to_string(),
                        row,
                        value: text.into(),
                    })?);
                }
            }
        }
        table.push_row(&labels);
    }
    for (c, v) in values.into_iter().enumerate() {
        if let Some(v) = v.filter(|v| !v.is_empty() && v.len() == table.len()) {
            table.set_realized(c, v);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSummary {
    pub distribution_queries: u64,
    pub cell_queries: u64,
    pub table_queries: u64,
    pub retries: u64,
    pub cache_hits: u64,
}

impl From<CallCounters> for CallSummary {
    fn from(c: CallCounters) -> Self {
        CallSummary {
            distribution_queries: c.distribution_queries,
            cell_queries: c.cell_queries,
            table_queries: c.table_queries,
            retries: c.retries,
            cache_hits: c.cache_hits,
        }
    }
}

impl From<&CallSummary> for CallCounters {
    fn from(c: &CallSummary) -> Self {
        CallCounters {
            distribution_queries: c.distribution_queries,
            cell_queries: c.cell_queries,
            table_queries: c.table_queries,
            retries: c.retries,
            cache_hits: c.cache_hits,
        }
    }
}

/// Companion metadata written next to each run's CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub n: u64,
    pub rows: u64,
    pub invalid_cells: u64,
    pub failed_rows: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<u64>,
    pub calls: CallSummary,
}

impl RunReport {
    pub fn of(run: &GenerationRun) -> Self {
        RunReport {
            strategy: run.strategy.as_str().into(),
            seed: run.seed,
            n: run.requested,
            rows: run.table.len() as u64,
            invalid_cells: run.invalid_cells() as u64,
            failed_rows: run.failed_rows,
            shortfall: run.shortfall.map(|s| s.requested - s.received),
            calls: run.call_log.counters().into(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run reports serialize")
    }
}

pub fn read_report(path: &Path) -> Result<RunReport, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| IoError::Report {
        path: path.display().to_string(),
        message: e.message().to_string(),
    })
}

/// Paths of the three files of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub csv: PathBuf,
    pub flags: PathBuf,
    pub report: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path, strategy: &str, k: usize) -> Self {
        let dir = out.join(strategy);
        RunPaths {
            csv: dir.join(format!("run_{k}.csv")),
            flags: dir.join(format!("run_{k}.flags.csv")),
            report: dir.join(format!("run_{k}.report")),
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_run(out: &Path, k: usize, run: &GenerationRun) -> Result<RunPaths, IoError> {
    let paths = RunPaths::new(out, run.strategy.as_str(), k);
    write(&paths.csv, &table_to_csv(&run.table))?;
    write(&paths.flags, &flags_to_csv(&run.table))?;
    write(&paths.report, RunReport::of(run).to_toml().as_bytes())?;
    Ok(paths)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    write(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    write(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use probtab_core::{california, FeatureSpec};

    #[test]
    fn quoting_and_round_trip() {
        let schema = DatasetSchema::new(
            vec![
                FeatureSpec::categorical("Name, full", &["a \"b\"", "c"]),
                FeatureSpec {
                    kind: FeatureKind::NumericRange,
                    cap: Some(100),
                    ..FeatureSpec::categorical("Age", &["0-17", "18+"])
                },
            ],
            String::new(),
            2,
        )
        .unwrap();
        let mut t = Table::new(schema.clone());
        t.push_row(&["a \"b\"", "18+"]);
        t.push_row(&["zzz", "0-17"]);
        t.set_realized(1, vec![40, 3]);
        let bytes = table_to_csv(&t);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(
            text,
            "\"Name, full\",Age,Age (value)\n\"a \"\"b\"\"\",18+,40\nzzz,0-17,3\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, &bytes).unwrap();
        let back = read_table(&p, &schema).unwrap();
        assert_eq!(back, t);
        assert_eq!(
            String::from_utf8(flags_to_csv(&t)).unwrap(),
            "row,feature,label\n1,\"Name, full\",zzz\n"
        );
    }

    #[test]
    fn header_mismatch_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("other.csv");
        fs::write(&p, "State,Income\nCalifornia/CA,high\n").unwrap();
        let err = read_table(&p, &california::schema()).unwrap_err();
        assert!(matches!(err, IoError::HeaderMismatch { .. }));
        assert!(err.to_string().contains("other.csv"));
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = RunReport {
            strategy: "probability-driven".into(),
            seed: 42,
            n: 3,
            rows: 3,
            invalid_cells: 0,
            failed_rows: 0,
            shortfall: None,
            calls: CallSummary {
                distribution_queries: 4,
                ..CallSummary::default()
            },
        };
        let p = dir.path().join("run_0.report");
        write_text(&p, &report.to_toml()).unwrap();
        assert!(fs::read_to_string(&p).unwrap().contains("distribution_queries = 4"));
        assert_eq!(read_report(&p).unwrap(), report);
    }
}
