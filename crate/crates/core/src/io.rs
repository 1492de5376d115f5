//! Small formatting and file-output helpers shared by the library and the
//! command-line tools, plus the rates-file and CSV report formats.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::models::MeetingRates;
use crate::sim::{EstimatedRates, RateEstimate, SimOutcome};
use crate::stats::ChiSquareReport;

/// Formats a float with 13 significant digits in scientific notation.
/// Every numeric value written to CSV or edge-list output goes through
/// this helper so results round-trip losslessly enough for comparisons.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.12e}")
}

/// Writes a file atomically: the content lands in `<path>.tmp` first and
/// is renamed over the target, so readers never observe a partial file.
pub fn atomic_write(path: &Path, content: &str) -> io::Result<()> {
    let tmp = match path.file_name() {
        Some(name) => {
            let mut n = name.to_os_string();
            n.push(".tmp");
            path.with_file_name(n)
        }
        None => return Err(io::Error::new(io::ErrorKind::InvalidInput, "path has no file name")),
    };
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)
}

// ---------------------------------------------------------------------------
// Rates file
// ---------------------------------------------------------------------------

/// One stored rate estimate, as read back from a rates file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatesFileRow {
    pub rate: f64,
    pub mean_first_meeting: f64,
    pub runs: u32,
    pub rate_ci_half_width: f64,
}

/// Parsed rates file: the four meeting-rate estimates with their
/// sampling pedigree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatesFile {
    pub lambda: RatesFileRow,
    pub mu: RatesFileRow,
    pub gamma: RatesFileRow,
    pub eta: RatesFileRow,
}

impl RatesFile {
    pub fn rates(&self) -> MeetingRates {
        MeetingRates {
            lambda: self.lambda.rate,
            mu: self.mu.rate,
            gamma: self.gamma.rate,
            eta: self.eta.rate,
        }
    }
}

#[derive(Error, Debug)]
pub enum RatesFileError {
    #[error("cannot read rates file: {0}")]
    Io(#[from] io::Error),
    #[error("malformed rates file: {0}")]
    Parse(String),
}

const RATES_HEADER: &str = "param,rate,mean_first_meeting,runs,rate_ci_half_width";

fn rates_row(name: &str, est: &RateEstimate) -> String {
    format!(
        "{name},{},{},{},{}\n",
        fmt_f64(est.rate),
        fmt_f64(est.mean_first_meeting),
        est.runs,
        fmt_f64(est.rate_ci_half_width),
    )
}

/// Serializes estimated rates in the rates-file format:
/// a `param,rate,mean_first_meeting,runs,rate_ci_half_width` header and
/// one row each for `lambda`, `mu`, `gamma`, `eta`.
pub fn rates_file_string(est: &EstimatedRates) -> String {
    let mut out = String::from(RATES_HEADER);
    out.push('\n');
    out.push_str(&rates_row("lambda", &est.lambda));
    out.push_str(&rates_row("mu", &est.mu));
    out.push_str(&rates_row("gamma", &est.gamma));
    out.push_str(&rates_row("eta", &est.eta));
    out
}

/// Parses the rates-file format; all four parameters must be present
/// exactly once.
pub fn parse_rates_file(text: &str) -> Result<RatesFile, RatesFileError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RATES_HEADER => {}
        other => {
            return Err(RatesFileError::Parse(format!(
                "expected header `{RATES_HEADER}`, found {other:?}"
            )))
        }
    }
    let mut rows: [Option<RatesFileRow>; 4] = [None; 4];
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(RatesFileError::Parse(format!("expected 5 fields: `{line}`")));
        }
        let idx = match fields[0] {
            "lambda" => 0,
            "mu" => 1,
            "gamma" => 2,
            "eta" => 3,
            other => return Err(RatesFileError::Parse(format!("unknown param `{other}`"))),
        };
        if rows[idx].is_some() {
            return Err(RatesFileError::Parse(format!("duplicate param `{}`", fields[0])));
        }
        let num = |s: &str| -> Result<f64, RatesFileError> {
            s.parse::<f64>()
                .map_err(|e| RatesFileError::Parse(format!("bad number `{s}`: {e}")))
        };
        let rate = num(fields[1])?;
        if !(rate.is_finite() && rate > 0.0) {
            return Err(RatesFileError::Parse(format!("rate must be positive: `{line}`")));
        }
        rows[idx] = Some(RatesFileRow {
            rate,
            mean_first_meeting: num(fields[2])?,
            runs: fields[3]
                .parse::<u32>()
                .map_err(|e| RatesFileError::Parse(format!("bad runs `{}`: {e}", fields[3])))?,
            rate_ci_half_width: num(fields[4])?,
        });
    }
    let [l, m, g, e] = rows;
    match (l, m, g, e) {
        (Some(lambda), Some(mu), Some(gamma), Some(eta)) => {
            Ok(RatesFile { lambda, mu, gamma, eta })
        }
        _ => Err(RatesFileError::Parse("missing one of lambda/mu/gamma/eta".into())),
    }
}

pub fn read_rates_file(path: &Path) -> Result<RatesFile, RatesFileError> {
    parse_rates_file(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

/// Per-run simulation outcomes: `run,delay,transmissions`.
pub fn outcomes_csv(outcomes: &[SimOutcome]) -> String {
    let mut out = String::from("run,delay,transmissions\n");
    for (run, o) in outcomes.iter().enumerate() {
        out.push_str(&format!("{run},{},{}\n", fmt_f64(o.delivery_delay), o.transmissions));
    }
    out
}

/// Chi-square reports as `test,statistic,dof,critical,passed` rows.
pub fn chi_square_csv(reports: &[(&str, &ChiSquareReport)]) -> String {
    let mut out = String::from("test,statistic,dof,critical,passed\n");
    for (name, r) in reports {
        out.push_str(&format!(
            "{name},{},{},{},{}\n",
            fmt_f64(r.statistic),
            r.dof,
            fmt_f64(r.critical_value),
            r.passed,
        ));
    }
    out
}

/// CDF points as `t,cdf` rows.
pub fn cdf_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("t,cdf\n");
    for &(t, p) in points {
        out.push_str(&format!("{},{}\n", fmt_f64(t), fmt_f64(p)));
    }
    out
}
