//! Report files: a JSON summary plus plain CSV tables.
//!
//! Floats in tables are written as `{:.16e}`, seventeen significant digits,
//! which round-trips every `f64`. Missing values are empty cells. Tables
//! never contain timings, so reruns produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{RunError, RunResult};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// An in-memory CSV table.
pub struct Table {
    text: String,
    columns: usize,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
        Self { text: format!("{}\n", cols.join(",")), columns: cols.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width differs from the header");
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Files written by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub dir: PathBuf,
    pub summary: PathBuf,
    pub tables: Vec<PathBuf>,
    pub extra: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a, R: Serialize> {
    schema_version: u32,
    kind: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    results: &'a R,
    files: Vec<String>,
    elapsed_secs: f64,
}

pub struct ReportWriter {
    dir: PathBuf,
    tables: Vec<PathBuf>,
    extra: Vec<PathBuf>,
}

impl ReportWriter {
    pub fn create(dir: &Path) -> RunResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), tables: Vec::new(), extra: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn table(&mut self, name: &str, table: &Table) -> RunResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, table.as_str()).map_err(|e| RunError::io(&path, e))?;
        self.tables.push(path.clone());
        Ok(path)
    }

    /// Registers a file written elsewhere, such as a checkpoint.
    pub fn record(&mut self, path: PathBuf) {
        self.extra.push(path);
    }

    pub fn finish<R: Serialize>(
        mut self,
        cfg: &ExperimentConfig,
        results: &R,
        elapsed_secs: f64,
    ) -> RunResult<ReportFiles> {
        let resolved = self.dir.join("config.toml");
        std::fs::write(&resolved, cfg.to_toml()).map_err(|e| RunError::io(&resolved, e))?;
        self.extra.push(resolved);
        let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let files = self.tables.iter().chain(&self.extra).map(name).collect();
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind.name(),
            seed: cfg.seed,
            config: cfg,
            results,
            files,
            elapsed_secs,
        };
        let path = self.dir.join("summary.json");
        let mut json = serde_json::to_string_pretty(&summary).expect("summaries serialize");
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| RunError::io(&path, e))?;
        Ok(ReportFiles { dir: self.dir, summary: path, tables: self.tables, extra: self.extra })
    }
}

/// Samples table as written by the samplers: `chain,class,x0,...`.
pub struct SampleTable {
    pub chains: Vec<usize>,
    pub classes: Option<Vec<usize>>,
    pub points: ndarray::Array2<f64>,
}

pub fn sample_table(points: ndarray::ArrayView2<f64>, classes: Option<&[usize]>) -> Table {
    let mut header = vec!["chain".to_string(), "class".to_string()];
    header.extend((0..points.ncols()).map(|j| format!("x{j}")));
    let mut t = Table::new(&header);
    for (i, row) in points.outer_iter().enumerate() {
        let mut cells = vec![i.to_string(), classes.map(|c| c[i].to_string()).unwrap_or_default()];
        cells.extend(row.iter().map(|&v| fmt_f64(v)));
        t.row(&cells);
    }
    t
}

pub fn read_sample_table(path: &Path) -> RunResult<SampleTable> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let bad = |message: String| RunError::Data { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
    if header.len() < 3 || header[0] != "chain" || header[1] != "class" {
        return Err(bad("expected a `chain,class,x0,...` header".into()));
    }
    let dim = header.len() - 2;
    let mut chains = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    let mut any_class = None;
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let at = n + 2;
        if cells.len() != dim + 2 {
            return Err(bad(format!("line {at}: expected {} cells, found {}", dim + 2, cells.len())));
        }
        chains.push(cells[0].parse().map_err(|_| bad(format!("line {at}: bad chain index")))?);
        let has_class = !cells[1].is_empty();
        if *any_class.get_or_insert(has_class) != has_class {
            return Err(bad(format!("line {at}: class column is only partly filled")));
        }
        if has_class {
            classes.push(cells[1].parse().map_err(|_| bad(format!("line {at}: bad class")))?);
        }
        for c in &cells[2..] {
            let v: f64 = c.parse().map_err(|_| bad(format!("line {at}: bad number `{c}`")))?;
            values.push(v);
        }
    }
    if chains.is_empty() {
        return Err(bad("no samples".into()));
    }
    let points = ndarray::Array2::from_shape_vec((chains.len(), dim), values).expect("rows were counted");
    Ok(SampleTable { chains, classes: any_class.unwrap_or(false).then_some(classes), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.1 + 0.2, -1.0 / 3.0, 1e-300, f64::MAX, 5e-324, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.5), "1.5000000000000000e0");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn sample_tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = array![[0.1, -2.0], [1.0 / 3.0, 7.5]];
        for classes in [None, Some(vec![1usize, 0])] {
            let path = dir.path().join("s.csv");
            std::fs::write(&path, sample_table(pts.view(), classes.as_deref()).as_str()).unwrap();
            let back = read_sample_table(&path).unwrap();
            assert_eq!(back.points, pts);
            assert_eq!(back.classes, classes);
            assert_eq!(back.chains, vec![0, 1]);
        }
        std::fs::write(dir.path().join("bad.csv"), "chain,class,x0\n0,,zz\n").unwrap();
        assert!(matches!(read_sample_table(&dir.path().join("bad.csv")), Err(RunError::Data { .. })));
    }
}
