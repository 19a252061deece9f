//! Verification reports and their byte-stable serializations.

use std::fmt::Write as _;

/// One measured quantity against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub check: String,
    /// Coverage tag from [`COVERAGE`](crate::COVERAGE), or `"control"`.
    pub coverage: &'static str,
    pub route: String,
    pub params: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Row {
    pub fn new(check: impl Into<String>, coverage: &'static str, route: &str, params: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { check: check.into(), coverage, route: route.into(), params: params.into(), measured, tolerance, pass: measured <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub experiment: String,
    pub config_hash: String,
    pub environment: String,
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Text => "txt",
        }
    }
}

/// 17 significant digits.
pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn json_float(x: f64) -> String {
    if x.is_finite() {
        float(x)
    } else {
        json_str(&float(x))
    }
}

impl VerificationReport {
    pub fn new(experiment: &str, config_hash: &str) -> Self {
        Self {
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            environment: format!("nonlocal-verify {} {}-{}", env!("CARGO_PKG_VERSION"), std::env::consts::OS, std::env::consts::ARCH),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.rows.extend(other.rows);
        self.notes.extend(other.notes);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.json(),
            Format::Csv => self.csv(),
            Format::Text => self.text(),
        }
    }

    pub fn json(&self) -> String {
        let mut out = String::from("{\n");
        writeln!(out, "  \"experiment\": {},", json_str(&self.experiment)).unwrap();
        writeln!(out, "  \"config_hash\": {},", json_str(&self.config_hash)).unwrap();
        writeln!(out, "  \"environment\": {},", json_str(&self.environment)).unwrap();
        out.push_str("  \"rows\": [");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            write!(
                out,
                "    {{\"check\": {}, \"coverage\": {}, \"route\": {}, \"params\": {}, \"measured\": {}, \"tolerance\": {}, \"pass\": {}}}",
                json_str(&r.check),
                json_str(r.coverage),
                json_str(&r.route),
                json_str(&r.params),
                json_float(r.measured),
                json_float(r.tolerance),
                r.pass
            )
            .unwrap();
        }
        out.push_str(if self.rows.is_empty() { "],\n" } else { "\n  ],\n" });
        let notes: Vec<String> = self.notes.iter().map(|n| json_str(n)).collect();
        writeln!(out, "  \"notes\": [{}]", notes.join(", ")).unwrap();
        out.push_str("}\n");
        out
    }

    pub fn csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["check", "coverage", "route", "params", "measured", "tolerance", "pass"]).unwrap();
        for r in &self.rows {
            w.write_record([r.check.as_str(), r.coverage, &r.route, &r.params, &float(r.measured), &float(r.tolerance), if r.pass { "true" } else { "false" }]).unwrap();
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
    }

    pub fn text(&self) -> String {
        let mut out = format!("experiment {} ({})\n{}\n", self.experiment, self.config_hash, self.environment);
        let width = self.rows.iter().map(|r| r.check.len()).max().unwrap_or(0);
        for r in &self.rows {
            writeln!(out, "{} {:width$}  {}  measured {}  tolerance {}", if r.pass { "PASS" } else { "FAIL" }, r.check, r.params, float(r.measured), float(r.tolerance)).unwrap();
        }
        for n in &self.notes {
            writeln!(out, "note: {n}").unwrap();
        }
        let failed = self.failures().count();
        writeln!(out, "{} checks, {} failed", self.rows.len(), failed).unwrap();
        out
    }
}
