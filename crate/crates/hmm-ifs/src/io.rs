//! File formats: observation CSV, report CSV helpers, and the run
//! manifest written alongside every CLI output.
//!
//! All floating-point values are serialized with 17 significant digits
//! so doubles round-trip exactly and reruns are bitwise comparable.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ObservationSequence;

/// 17 significant digits: exact round-trip for f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.16e}")
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    match field.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        s => s.parse::<f64>().map_err(|_| Error::Parse {
            line,
            msg: format!("cannot parse `{s}` as a number"),
        }),
    }
}

/// Renders an observation sequence as CSV with a seed comment line.
pub fn obs_csv_string(seq: &ObservationSequence) -> String {
    let mut out = String::new();
    if let Some(seed) = seq.seed {
        let _ = writeln!(out, "# seed={seed}");
    }
    if seq.hidden.is_some() {
        let _ = writeln!(out, "t,xi,hidden_state");
    } else {
        let _ = writeln!(out, "t,xi");
    }
    for (t, xi) in seq.obs.iter().enumerate() {
        match &seq.hidden {
            Some(h) => {
                let _ = writeln!(out, "{t},{},{}", fmt_f64(*xi), h[t]);
            }
            None => {
                let _ = writeln!(out, "{t},{}", fmt_f64(*xi));
            }
        }
    }
    out
}

/// Parses an observation CSV. Accepts the simulator's format (header
/// `t,xi[,hidden_state]` plus `# seed=N` comment) as well as bare
/// one-value-per-line files.
pub fn parse_obs_csv(text: &str) -> Result<ObservationSequence> {
    let mut obs = Vec::new();
    let mut hidden: Vec<usize> = Vec::new();
    let mut seed = None;
    let mut xi_col = 1usize;
    let mut hidden_col: Option<usize> = None;
    let mut saw_header = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("seed=") {
                seed = value.trim().parse::<u64>().ok();
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let numeric = fields.iter().all(|f| parse_f64(f, line_no).is_ok());
        if !numeric {
            if saw_header || !obs.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unexpected non-numeric row `{line}`"),
                });
            }
            // Header row: locate the columns by name.
            xi_col = fields
                .iter()
                .position(|f| f.trim() == "xi")
                .ok_or(Error::Parse {
                    line: line_no,
                    msg: "header must contain an `xi` column".into(),
                })?;
            hidden_col = fields.iter().position(|f| f.trim() == "hidden_state");
            saw_header = true;
            continue;
        }
        if fields.len() == 1 {
            obs.push(parse_f64(fields[0], line_no)?);
            continue;
        }
        let col = if saw_header { xi_col } else { 1 };
        if col >= fields.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "row has {} fields, expected xi in column {col}",
                    fields.len()
                ),
            });
        }
        obs.push(parse_f64(fields[col], line_no)?);
        let hcol = if saw_header { hidden_col } else { Some(2) };
        if let Some(hcol) = hcol {
            if hcol < fields.len() {
                let v = parse_f64(fields[hcol], line_no)?;
                hidden.push(v as usize);
            }
        }
    }
    let hidden = if hidden.len() == obs.len() && !hidden.is_empty() {
        Some(hidden)
    } else {
        None
    };
    ObservationSequence::new(obs, hidden, seed)
}

pub fn read_obs_csv(path: &Path) -> Result<ObservationSequence> {
    let text = std::fs::read_to_string(path)?;
    parse_obs_csv(&text)
}

/// Record of one CLI invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_clock_ms: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: None,
            data: None,
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_ms: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, -2.190914434881806, 1.0 / 3.0, 1e-300, 6.02e23] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "round-trip failed for {s}");
        }
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn obs_csv_round_trip() {
        let seq =
            ObservationSequence::new(vec![0.25, -1.5, 3.0], Some(vec![0, 1, 1]), Some(42)).unwrap();
        let text = obs_csv_string(&seq);
        let back = parse_obs_csv(&text).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn bare_value_list_is_accepted() {
        let seq = parse_obs_csv("0.0\n0.0\n").unwrap();
        assert_eq!(seq.obs, vec![0.0, 0.0]);
        assert!(seq.hidden.is_none());
    }

    #[test]
    fn malformed_rows_report_the_line() {
        let err = parse_obs_csv("t,xi\n0,1.0\n1,oops\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
