#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]
//! Gnuplot tables from a sweep report.

use std::path::Path;

use propchaos::stats::ols;

use crate::error::{CliError, CliResult};

/// Points of one estimator after dropping non-positive values.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub estimator: String,
    pub log_n: Vec<f64>,
    pub log_value: Vec<f64>,
    /// `(slope, intercept)` of log10(value) on log10(N); NaN below two points.
    pub fit: (f64, f64),
}

impl Series {
    pub fn residual(&self, i: usize) -> f64 {
        self.log_value[i] - (self.fit.1 + self.fit.0 * self.log_n[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub series: Vec<Series>,
    pub dropped: usize,
}

/// Reads a report with at least the columns `N`, `estimator` and `value`.
pub fn read_report(path: &Path) -> CliResult<PlotData> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_report(file)
}

pub fn parse_report<R: std::io::Read>(input: R) -> CliResult<PlotData> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| CliError::Report(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Report(format!("missing column `{name}`")))
    };
    let (cn, ce, cv) = (col("N")?, col("estimator")?, col("value")?);
    let mut series: Vec<Series> = Vec::new();
    let mut dropped = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Report(e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let n: f64 = field(cn)
            .parse()
            .map_err(|_| CliError::Report(format!("row {}: bad N `{}`", i + 1, field(cn))))?;
        let value: f64 = field(cv)
            .parse()
            .map_err(|_| CliError::Report(format!("row {}: bad value `{}`", i + 1, field(cv))))?;
        if !(n > 0.0) {
            return Err(CliError::Report(format!("row {}: N must be positive", i + 1)));
        }
        let name = field(ce);
        let idx = match series.iter().position(|s| s.estimator == name) {
            Some(k) => k,
            None => {
                series.push(Series {
                    estimator: name.to_string(),
                    log_n: Vec::new(),
                    log_value: Vec::new(),
                    fit: (f64::NAN, f64::NAN),
                });
                series.len() - 1
            }
        };
        if value > 0.0 && value.is_finite() {
            series[idx].log_n.push(n.log10());
            series[idx].log_value.push(value.log10());
        } else {
            dropped += 1;
        }
    }
    for s in &mut series {
        s.fit = ols(&s.log_n, &s.log_value).unwrap_or((f64::NAN, f64::NAN));
    }
    Ok(PlotData { series, dropped })
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl PlotData {
    /// Whitespace-separated blocks, one per estimator, separated by two
    /// blank lines so gnuplot can address them with `index`.
    pub fn table(&self) -> String {
        let mut s = String::from("# log10(N) log10(value) residual\n");
        for (b, ser) in self.series.iter().enumerate() {
            if b > 0 {
                s.push_str("\n\n");
            }
            s.push_str(&format!("# estimator {}\n", ser.estimator));
            for i in 0..ser.log_n.len() {
                s.push_str(&format!("{} {} {}\n", num(ser.log_n[i]), num(ser.log_value[i]), num(ser.residual(i))));
            }
        }
        s
    }

    pub fn coefficients(&self) -> String {
        let mut s = String::from("# estimator slope intercept\n");
        for ser in &self.series {
            s.push_str(&format!("{} {} {}\n", ser.estimator, num(ser.fit.0), num(ser.fit.1)));
        }
        s
    }
}

/// Parses [`PlotData::table`] output back into `(estimator, log N, log value)`.
pub fn parse_table(text: &str) -> CliResult<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("# estimator ") {
            out.push((name.to_string(), Vec::new(), Vec::new()));
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|c| c.parse().map_err(|_| CliError::Report(format!("bad table entry `{c}`"))))
            .collect::<CliResult<_>>()?;
        let block = out
            .last_mut()
            .ok_or_else(|| CliError::Report("data line before any estimator header".into()))?;
        if cols.len() != 3 {
            return Err(CliError::Report(format!("expected 3 columns, got {}", cols.len())));
        }
        block.1.push(cols[0]);
        block.2.push(cols[1]);
    }
    Ok(out)
}
