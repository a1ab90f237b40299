//! Time-ordered I–V samples and their CSV form.
//!
//! CSV layout: header `t,v,i,g` (or `t,v,i` for measured data without a gap
//! column), SI units, one sample per row. Values are written in Rust's
//! shortest round-trip decimal form, so `read(write(trace))` is exact.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SweepSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Time (s).
    pub t: f64,
    /// Applied voltage (V).
    pub v: f64,
    /// Device current (A).
    pub i: f64,
    /// Tunneling gap (m); absent for measured data.
    pub g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVTrace {
    pub samples: Vec<Sample>,
    /// Sweep that produced the trace; `None` for measured data.
    pub metadata: Option<SweepSpec>,
}

impl IVTrace {
    pub fn measured(samples: Vec<Sample>) -> Self {
        IVTrace {
            samples,
            metadata: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, s) in self.samples.iter().enumerate() {
            let gap_ok = s.g.is_none_or(f64::is_finite);
            if !(s.t.is_finite() && s.v.is_finite() && s.i.is_finite() && gap_ok) {
                return Err(Error::InvalidTrace(format!("sample {k} is not finite")));
            }
            if k > 0 && s.t <= self.samples[k - 1].t {
                return Err(Error::InvalidTrace(format!(
                    "time not strictly increasing at sample {k}"
                )));
            }
            if let Some(spec) = &self.metadata {
                if s.i.abs() > spec.i_compliance {
                    return Err(Error::InvalidTrace(format!(
                        "sample {k} exceeds compliance: |{}| > {}",
                        s.i, spec.i_compliance
                    )));
                }
                if let Some(g) = s.g {
                    if g < spec.g_min || g > spec.g_max {
                        return Err(Error::InvalidTrace(format!(
                            "sample {k} gap {g} outside [{}, {}]",
                            spec.g_min, spec.g_max
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest positive and most negative voltage in the trace.
    pub fn voltage_extent(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((0.0f64, 0.0f64), |(lo, hi), s| (lo.min(s.v), hi.max(s.v)))
    }

    pub fn max_abs_current(&self) -> f64 {
        self.samples.iter().map(|s| s.i.abs()).fold(0.0, f64::max)
    }

    /// Copy with every current multiplied by `factor`.
    pub fn scaled_current(&self, factor: f64) -> IVTrace {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.i *= factor;
        }
        if let Some(spec) = &mut out.metadata {
            spec.i_compliance *= factor.abs();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let with_gap = !self.samples.is_empty() && self.samples.iter().all(|s| s.g.is_some());
        let mut out = String::with_capacity(self.samples.len() * 64);
        out.push_str(if with_gap { "t,v,i,g\n" } else { "t,v,i\n" });
        for s in &self.samples {
            match s.g {
                Some(g) if with_gap => writeln!(out, "{},{},{},{}", s.t, s.v, s.i, g),
                _ => writeln!(out, "{},{},{}", s.t, s.v, s.i),
            }
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a `t,v,i[,g]` CSV. The result carries no sweep metadata.
    pub fn read_csv(path: &Path) -> Result<IVTrace> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<IVTrace> {
        let parse_err = |line: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let names: Vec<&str> = headers.iter().collect();
        let with_gap = match names.as_slice() {
            ["t", "v", "i"] => false,
            ["t", "v", "i", "g"] => true,
            _ => {
                return Err(parse_err(
                    1,
                    format!("expected header t,v,i[,g], found {}", names.join(",")),
                ))
            }
        };
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |k: usize| -> Result<f64> {
                let raw = record.get(k).unwrap_or_default();
                raw.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("column {} is not a number: {raw:?}", k + 1)))
            };
            samples.push(Sample {
                t: field(0)?,
                v: field(1)?,
                i: field(2)?,
                g: if with_gap { Some(field(3)?) } else { None },
            });
        }
        let trace = IVTrace::measured(samples);
        trace.validate()?;
        Ok(trace)
    }
}
