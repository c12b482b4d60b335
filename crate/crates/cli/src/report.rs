//! Report payloads and their JSON / CSV encodings.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde_json::{json, Map, Value};
use wedgedisc_core::cone::ConeRegion;
use wedgedisc_core::harmonics::FourierSeries;
use wedgedisc_core::quadric_discs::DiscFamilyParams;
use wedgedisc_core::wedge::GraphPoint;

use crate::error::CliError;

/// A named table of plot-ready rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, headers: &[&str]) -> Self {
        Self {
            name: name.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_headers(name: &str, headers: Vec<String>) -> Self {
        Self {
            name: name.into(),
            headers,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::io("output", format!("csv encoding failed: {e}"));
        w.write_record(&self.headers).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(err)?;
        }
        w.into_inner()
            .map_err(|e| CliError::io("output", format!("csv encoding failed: {e}")))
    }
}

/// Outcome of one command.
#[derive(Debug, Clone)]
pub struct Report {
    pub spec_hash: String,
    pub command: String,
    pub params: Value,
    pub results: Value,
    pub diagnostics: Value,
    pub tables: Vec<Table>,
    /// Set when a checked property failed; the report is still written.
    pub failure: Option<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }

    /// The JSON document `{spec_hash, command, params, results, diagnostics}`.
    pub fn payload(&self) -> Value {
        json!({
            "spec_hash": self.spec_hash,
            "command": self.command,
            "params": self.params,
            "results": self.results,
            "diagnostics": self.diagnostics,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.payload()).expect("report serializes")
    }

    /// Writes the report. JSON goes to `out`; with CSV output the first table
    /// goes to `out`, further tables to `<stem>.<table>.csv` and the JSON
    /// document to `<stem>.json`.
    pub fn write(&self, out: &Path, csv: bool) -> Result<Vec<PathBuf>, CliError> {
        let mut written = Vec::new();
        if !csv {
            write_file(out, self.to_json().as_bytes())?;
            written.push(out.to_path_buf());
            return Ok(written);
        }
        let json_path = out.with_extension("json");
        if json_path == out {
            return Err(CliError::spec("output", "csv output path must not end in .json".into()));
        }
        for (i, table) in self.tables.iter().enumerate() {
            let path = if i == 0 {
                out.to_path_buf()
            } else {
                out.with_extension(format!("{}.csv", table.name))
            };
            write_file(&path, &table.to_csv()?)?;
            written.push(path);
        }
        write_file(&json_path, self.to_json().as_bytes())?;
        written.push(json_path);
        Ok(written)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::io("output", format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io("output", format!("cannot write {}: {e}", path.display())))
}

pub fn complex(z: Complex64) -> Value {
    json!([z.re, z.im])
}

pub fn complexes(v: &[Complex64]) -> Value {
    Value::Array(v.iter().map(|z| complex(*z)).collect())
}

/// One `{frequency: [re, im]}` map per component; zero modes are omitted.
pub fn series(s: &FourierSeries) -> Value {
    let maps = (0..s.dim())
        .map(|l| {
            let mut map = Map::new();
            for (k, c) in s.modes() {
                if c[l] != Complex64::new(0.0, 0.0) {
                    map.insert(k.to_string(), complex(c[l]));
                }
            }
            Value::Object(map)
        })
        .collect();
    Value::Array(maps)
}

pub fn family(p: &DiscFamilyParams) -> Value {
    json!({
        "x": p.x,
        "a0": complexes(&p.a0),
        "t0": p.t0,
        "directions": p.directions.iter().map(|a| complexes(a)).collect::<Vec<_>>(),
        "scales": p.scales,
    })
}

pub fn cone(c: &ConeRegion) -> Value {
    json!({
        "axis": c.axis(),
        "half_angle": c.half_angle(),
        "scale_max": c.scale_max(),
    })
}

pub fn graph_point(p: &GraphPoint) -> Value {
    json!({ "x": p.x, "w": complexes(&p.w) })
}
