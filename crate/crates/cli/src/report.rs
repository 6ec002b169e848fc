//! Long-form CSV reports and the run summary.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

/// Column set of `report.csv`, shared by every experiment kind.
pub const COLUMNS: [&str; 4] = ["experiment", "seed", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// A pass/fail verdict against a configured tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn push(&mut self, experiment: &str, seed: u64, metric: impl Into<String>, value: f64) {
        self.rows.push(Row { experiment: experiment.to_string(), seed, metric: metric.into(), value });
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Rows in (experiment, seed, metric) order, independent of the order
    /// in which workers produced them.
    pub fn sorted_rows(&self) -> Vec<Row> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| (&a.experiment, a.seed, &a.metric).cmp(&(&b.experiment, b.seed, &b.metric)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        for r in self.sorted_rows() {
            w.write_record([r.experiment.clone(), r.seed.to_string(), r.metric.clone(), format!("{:?}", r.value)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn summary(&self, title: &str) -> String {
        let mut s = String::new();
        writeln!(s, "{title}").unwrap();
        writeln!(s, "rows: {}", self.rows.len()).unwrap();
        for c in &self.checks {
            writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail).unwrap();
        }
        writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" }).unwrap();
        s
    }
}

/// Writes each `(name, contents)` pair into `dir` through a temporary file
/// and a rename, so readers never see a truncated artifact.
pub fn write_artifacts(dir: &Path, files: &[(&str, String)]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, contents) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, dir.join(name))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_sorted_and_values_round_trip() {
        let mut r = Report::default();
        r.push("b", 2, "x", 0.1);
        r.push("a", 10, "y", 1e-300);
        r.push("a", 2, "z", -3.5);
        r.push("a", 2, "w", 1.0 / 3.0);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "experiment,seed,metric,value");
        assert!(lines[1].starts_with("a,2,w,"));
        assert!(lines[2].starts_with("a,2,z,"));
        assert!(lines[3].starts_with("a,10,y,"));
        assert_eq!(lines[4], "b,2,x,0.1");
        let third: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(third, 1.0 / 3.0);
        let tiny: f64 = lines[3].rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(tiny, 1e-300);
    }

    #[test]
    fn summary_lists_every_check() {
        let mut r = Report::default();
        r.check("one", true, "ok");
        r.check("two", false, "too large");
        let s = r.summary("t");
        assert!(s.contains("PASS one: ok"));
        assert!(s.contains("FAIL two: too large"));
        assert!(s.ends_with("result: FAIL\n"));
        assert!(!r.passed());
    }
}
