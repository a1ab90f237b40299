//! Digitized (V, I) data: CSV loading, rolling-average denoising and
//! conversion to a four-branch [`IVTrace`].
//!
//! Input CSV: header `v,i` (points in sweep order) or `v,i,branch` with
//! branch labels `positive-forward`, `positive-return`, `negative-forward`,
//! `negative-return` (any order).

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PolarityOrder;
use crate::trace::{IVTrace, Sample};

pub const MIN_POINTS: usize = 8;
/// Spacing of the synthetic time stamps (s).
pub const SYNTHETIC_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchLabel {
    PositiveForward,
    PositiveReturn,
    NegativeForward,
    NegativeReturn,
}

impl FromStr for BranchLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "positive-forward" => Ok(BranchLabel::PositiveForward),
            "positive-return" => Ok(BranchLabel::PositiveReturn),
            "negative-forward" => Ok(BranchLabel::NegativeForward),
            "negative-return" => Ok(BranchLabel::NegativeReturn),
            other => Err(format!("unknown branch label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub v: f64,
    pub i: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCurve {
    pub points: Vec<RawPoint>,
    pub source: String,
}

impl RawCurve {
    pub fn new(points: Vec<RawPoint>, source: impl Into<String>) -> Result<Self> {
        let curve = RawCurve {
            points,
            source: source.into(),
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn from_pairs(pairs: &[(f64, f64)], source: impl Into<String>) -> Result<Self> {
        let points = pairs
            .iter()
            .map(|&(v, i)| RawPoint { v, i, branch: None })
            .collect();
        RawCurve::new(points, source)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_POINTS {
            return Err(Error::InvalidTrace(format!(
                "{} points, need at least {MIN_POINTS}",
                self.points.len()
            )));
        }
        if let Some(k) = self.points.iter().position(|p| !(p.v.is_finite() && p.i.is_finite())) {
            return Err(Error::InvalidTrace(format!("point {k} is not finite")));
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let labeled = match names.as_slice() {
            ["v", "i"] => false,
            ["v", "i", "branch"] => true,
            _ => {
                return Err(parse_err(
                    1,
                    format!("expected header v,i[,branch], found {}", names.join(",")),
                ))
            }
        };
        let mut points = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let num = |k: usize| -> Result<f64> {
                let raw = record.get(k).unwrap_or_default();
                raw.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("column {} is not a number: {raw:?}", k + 1)))
            };
            let branch = if labeled {
                let raw = record.get(2).unwrap_or_default();
                Some(raw.parse::<BranchLabel>().map_err(|m| parse_err(line, m))?)
            } else {
                None
            };
            points.push(RawPoint {
                v: num(0)?,
                i: num(1)?,
                branch,
            });
        }
        RawCurve::new(points, path.display().to_string())
    }
}

/// Centered moving average of the current over the point sequence. Windows
/// shrink at both ends; voltages are untouched.
pub fn rolling_average(curve: &RawCurve, window: usize) -> Result<RawCurve> {
    let n = curve.points.len();
    if window == 0 || window.is_multiple_of(2) || window > n {
        return Err(Error::WindowTooLarge { window, points: n });
    }
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for p in &curve.points {
        prefix.push(prefix.last().unwrap() + p.i);
    }
    let points = curve
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            let mean = if window == 1 {
                p.i
            } else {
                (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
            };
            RawPoint { i: mean, ..*p }
        })
        .collect();
    Ok(RawCurve {
        points,
        source: curve.source.clone(),
    })
}

fn ambiguous(msg: impl Into<String>) -> Error {
    Error::AmbiguousSweep(msg.into())
}

/// Splits unlabeled points, taken in sweep order, at the two apexes.
fn segments_from_order(points: &[RawPoint], order: PolarityOrder) -> Result<[Vec<RawPoint>; 4]> {
    let by_v = |a: &&RawPoint, b: &&RawPoint| a.v.total_cmp(&b.v);
    let (k_max, top) = points.iter().enumerate().max_by(|a, b| by_v(&a.1, &b.1)).unwrap();
    let (k_min, bottom) = points.iter().enumerate().min_by(|a, b| by_v(&a.1, &b.1)).unwrap();
    if top.v <= 0.0 || bottom.v >= 0.0 {
        return Err(ambiguous("points do not span both polarities"));
    }
    let positive_first = k_max < k_min;
    if positive_first != (order == PolarityOrder::PositiveFirst) {
        return Err(ambiguous(format!(
            "apex order contradicts the declared {order:?} sweep; label the branches"
        )));
    }
    let (first_apex, second_apex) = if positive_first { (k_max, k_min) } else { (k_min, k_max) };
    // zero crossing between the apexes
    let first_sign = points[first_apex].v.signum();
    let cross = (first_apex..second_apex)
        .find(|&k| points[k].v.signum() != first_sign && points[k].v != 0.0)
        .unwrap_or(second_apex);
    let a = points[..=first_apex].to_vec();
    let b = points[first_apex + 1..cross].to_vec();
    let c = points[cross..=second_apex].to_vec();
    let d = points[second_apex + 1..].to_vec();
    Ok(if positive_first { [a, b, c, d] } else { [c, d, a, b] })
}

fn segments_from_labels(points: &[RawPoint]) -> Result<[Vec<RawPoint>; 4]> {
    let mut out: [Vec<RawPoint>; 4] = Default::default();
    for p in points {
        let slot = match p.branch {
            Some(BranchLabel::PositiveForward) => 0,
            Some(BranchLabel::PositiveReturn) => 1,
            Some(BranchLabel::NegativeForward) => 2,
            Some(BranchLabel::NegativeReturn) => 3,
            None => return Err(ambiguous("mixed labeled and unlabeled points")),
        };
        out[slot].push(*p);
    }
    Ok(out)
}

/// Orders points into the four-branch sweep structure and stamps uniform
/// synthetic times. Unlabeled points must be in sweep order; labeled points
/// may come in any order.
pub fn to_trace(curve: &RawCurve, order: PolarityOrder) -> Result<IVTrace> {
    curve.validate()?;
    let labeled = curve.points.iter().any(|p| p.branch.is_some());
    let mut segs = if labeled {
        segments_from_labels(&curve.points)?
    } else {
        segments_from_order(&curve.points, order)?
    };
    const NAMES: [&str; 4] = ["positive forward", "positive return", "negative forward", "negative return"];
    for (seg, name) in segs.iter().zip(NAMES) {
        if seg.len() < 2 {
            return Err(ambiguous(format!("{name} branch has fewer than 2 points")));
        }
    }
    // each branch monotone in its sweep direction
    segs[0].sort_by(|a, b| a.v.total_cmp(&b.v));
    segs[1].sort_by(|a, b| b.v.total_cmp(&a.v));
    segs[2].sort_by(|a, b| b.v.total_cmp(&a.v));
    segs[3].sort_by(|a, b| a.v.total_cmp(&b.v));
    let [pf, pr, nf, nr] = segs;
    let sequence: Vec<Vec<RawPoint>> = match order {
        PolarityOrder::PositiveFirst => vec![pf, pr, nf, nr],
        PolarityOrder::NegativeFirst => vec![nf, nr, pf, pr],
    };
    let samples: Vec<Sample> = sequence
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(k, p)| Sample {
            t: k as f64 * SYNTHETIC_DT,
            v: p.v,
            i: p.i,
            g: None,
        })
        .collect();
    let trace = IVTrace::measured(samples);
    trace.validate()?;
    crate::metrics::split_branches(&trace)?;
    Ok(trace)
}
