//! Artifact files. JSON goes through `serde_json::Value`, whose maps are sorted.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use shapedyn::suites::{Check, SuiteReport, Table};

use crate::scenario::Scenario;

#[derive(Serialize)]
struct Results<'a> {
    scenario: &'a str,
    suite: &'a str,
    seed: u64,
    passed: bool,
    failing: Vec<&'a str>,
    checks: &'a [Check],
    tables: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    suite: &'a str,
    seed: u64,
    parameters: &'a shapedyn::suites::SuiteParams,
    version: &'a str,
    threads: usize,
    wall_time_seconds: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> io::Result<()> {
    let v = serde_json::to_value(value).map_err(io::Error::other)?;
    let mut text = serde_json::to_string_pretty(&v).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv(path: &Path, table: &Table) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = table.columns.iter().map(|c| csv_field(c)).collect();
    write!(f, "{}\r\n", header.join(","))?;
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        write!(f, "{}\r\n", cells.join(","))?;
    }
    f.flush()
}

pub fn write_all(dir: &Path, sc: &Scenario, report: &SuiteReport, wall: f64, threads: usize) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for t in &report.tables {
        write_csv(&dir.join(format!("{}.csv", t.name)), t)?;
    }
    let results = Results {
        scenario: &sc.name,
        suite: sc.suite.name(),
        seed: sc.params.seed,
        passed: report.passed(),
        failing: report.failing().map(|c| c.name.as_str()).collect(),
        checks: &report.checks,
        tables: report.tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
    };
    write_json(&dir.join("results.json"), &results)?;
    let manifest = Manifest {
        scenario: &sc.name,
        suite: sc.suite.name(),
        seed: sc.params.seed,
        parameters: &sc.params,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        wall_time_seconds: wall,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}
