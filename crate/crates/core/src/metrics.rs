//! Non-volatile memory figures of merit extracted from a bipolar I–V sweep:
//! set and reset voltages, LRS slope, and the hysteresis areas of the
//! positive (LRS) and negative (HRS) loops.
//!
//! Extraction conventions:
//!
//! * The trace is split into four branches by polarity and sweep direction
//!   and each branch is resampled onto a uniform voltage grid.
//! * `v_set` is the voltage of the steepest rise of `log10|I|` along the
//!   positive forward branch, `v_reset` the steepest fall of `log10|I|`
//!   along the negative forward branch. Both skip a low-voltage guard band
//!   where the `1/V` behaviour of `log|sinh|` dominates, and both must rise
//!   above the opposite branch's log-slope by a fixed margin to count.
//! * The LRS slope is a least-squares fit on the positive return branch just
//!   below `v_set`; when that window sits on the compliance plateau it moves
//!   to the negative forward branch just above `v_reset`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::IVTrace;

/// Points per resampled branch.
pub const GRID_POINTS: usize = 512;
/// Currents are floored here before taking logarithms (A).
pub const CURRENT_FLOOR: f64 = 1e-12;
/// Fraction of the branch apex excluded near 0 V for event detection.
pub const LOW_VOLTAGE_GUARD: f64 = 0.05;
/// Minimum excess of the switching branch's log-slope over the opposite
/// branch at the event (decades per volt).
pub const SWITCH_LOG_SLOPE_FLOOR: f64 = 2.0;
/// Slope window width as a fraction of the half-sweep voltage span.
pub const SLOPE_WINDOW_FRACTION: f64 = 0.15;
/// A window is "flattened" when at least this fraction sits at compliance.
pub const CLAMPED_FRACTION: f64 = 0.5;
pub const MIN_WINDOW_SAMPLES: usize = 4;
/// `area_lrs` must exceed this fraction of `max|I| * (v_max - v_min)`.
pub const AREA_FLOOR_FRACTION: f64 = 1e-3;
pub const MIN_SAMPLES_BETWEEN_EVENTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeRegion {
    #[default]
    SetRegion,
    ResetRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvmMetrics {
    pub v_set: f64,
    pub v_reset: f64,
    pub lrs_slope: f64,
    pub area_lrs: f64,
    pub area_hrs: f64,
    #[serde(default)]
    pub slope_region: SlopeRegion,
}

impl NvmMetrics {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v_set,
            self.v_reset,
            self.lrs_slope,
            self.area_lrs,
            self.area_hrs,
        ];
        let fail = |msg: String| Err(Error::InvalidMetrics(msg));
        if all.iter().any(|x| !x.is_finite()) {
            return fail("non-finite metric".into());
        }
        if self.v_set <= 0.0 {
            return fail(format!("v_set = {} must be > 0", self.v_set));
        }
        if self.v_reset >= 0.0 {
            return fail(format!("v_reset = {} must be < 0", self.v_reset));
        }
        if self.lrs_slope <= 0.0 {
            return fail(format!("lrs_slope = {} must be > 0", self.lrs_slope));
        }
        if self.area_hrs < 0.0 || self.area_lrs < self.area_hrs {
            return fail(format!(
                "need area_lrs >= area_hrs >= 0, got {} and {}",
                self.area_lrs, self.area_hrs
            ));
        }
        Ok(())
    }
}

/// One sweep branch resampled on a uniform, ascending voltage grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
}

impl Branch {
    fn from_points(mut points: Vec<(f64, f64)>, n: usize) -> Option<Branch> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        // average currents sharing a voltage
        let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
        for (v, i) in points {
            match merged.last_mut() {
                Some(last) if last.0 == v => {
                    last.1 += i;
                    last.2 += 1;
                }
                _ => merged.push((v, i, 1)),
            }
        }
        if merged.len() < 2 {
            return None;
        }
        let xs: Vec<f64> = merged.iter().map(|m| m.0).collect();
        let ys: Vec<f64> = merged.iter().map(|m| m.1 / m.2 as f64).collect();
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        let voltage = linspace(lo, hi, n);
        let current = voltage.iter().map(|&v| interp(&xs, &ys, v)).collect();
        Some(Branch { voltage, current })
    }

    pub fn lo(&self) -> f64 {
        self.voltage[0]
    }

    pub fn hi(&self) -> f64 {
        self.voltage[self.voltage.len() - 1]
    }

    /// Linear interpolation, clamped to the end values outside the support.
    pub fn current_at(&self, v: f64) -> f64 {
        interp(&self.voltage, &self.current, v)
    }

    pub fn log_slope(&self) -> Vec<f64> {
        let logs: Vec<f64> = self
            .current
            .iter()
            .map(|i| i.abs().max(CURRENT_FLOOR).log10())
            .collect();
        gradient(&logs, &self.voltage)
    }

    pub fn mirrored(&self) -> Branch {
        Branch {
            voltage: self.voltage.iter().rev().map(|v| -v).collect(),
            current: self.current.iter().rev().map(|i| -i).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSplit {
    /// 0 -> v_max
    pub positive_forward: Branch,
    /// v_max -> 0
    pub positive_return: Branch,
    /// 0 -> v_min
    pub negative_forward: Branch,
    /// v_min -> 0
    pub negative_return: Branch,
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect()
}

/// Piecewise-linear interpolation on ascending `xs`, clamped at the ends.
pub(crate) fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&p| p <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let (y0, y1) = (ys[k - 1], ys[k]);
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Central differences inside, one-sided differences at the ends.
fn gradient(ys: &[f64], xs: &[f64]) -> Vec<f64> {
    let n = ys.len();
    (0..n)
        .map(|k| {
            let (a, b) = match k {
                0 => (0, 1),
                _ if k == n - 1 => (n - 2, n - 1),
                _ => (k - 1, k + 1),
            };
            (ys[b] - ys[a]) / (xs[b] - xs[a])
        })
        .collect()
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Least-squares slope of `ys` against `xs`.
pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

pub fn split_branches(trace: &IVTrace) -> Result<BranchSplit> {
    let mut buckets: [Vec<(f64, f64)>; 4] = Default::default();
    for pair in trace.samples.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let dv = b.v - a.v;
        if dv == 0.0 {
            continue;
        }
        let positive = a.v + b.v >= 0.0;
        let slot = match (positive, dv > 0.0) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        buckets[slot].push((a.v, a.i));
        buckets[slot].push((b.v, b.i));
    }
    const NAMES: [&str; 4] = [
        "positive forward",
        "positive return",
        "negative forward",
        "negative return",
    ];
    let mut branches = Vec::with_capacity(4);
    for (points, name) in buckets.into_iter().zip(NAMES) {
        match Branch::from_points(points, GRID_POINTS) {
            Some(b) => branches.push(b),
            None => return Err(Error::MalformedSweep(format!("missing {name} segment"))),
        }
    }
    let mut it = branches.into_iter();
    Ok(BranchSplit {
        positive_forward: it.next().unwrap(),
        positive_return: it.next().unwrap(),
        negative_forward: it.next().unwrap(),
        negative_return: it.next().unwrap(),
    })
}

/// Steepest rise of `log10|I|` along a branch traversed away from 0 V into
/// positive voltages. Returns `(voltage, excess log-slope over reference)`.
fn steepest_rise(switching: &Branch, reference: &Branch) -> Option<(f64, f64)> {
    let slope = switching.log_slope();
    let ref_slope = reference.log_slope();
    let guard = LOW_VOLTAGE_GUARD * switching.hi();
    let mut best: Option<usize> = None;
    for (k, &v) in switching.voltage.iter().enumerate() {
        if v < guard {
            continue;
        }
        if best.is_none_or(|b| slope[k] > slope[b]) {
            best = Some(k);
        }
    }
    let k = best?;
    let v = switching.voltage[k];
    let excess = slope[k] - interp(&reference.voltage, &ref_slope, v);
    Some((v, excess))
}

fn set_event(split: &BranchSplit) -> Result<f64> {
    match steepest_rise(&split.positive_forward, &split.positive_return) {
        Some((v, excess)) if v > 0.0 && excess >= SWITCH_LOG_SLOPE_FLOOR => Ok(v),
        _ => Err(Error::NoSetEvent),
    }
}

/// Steepest fall of `log10|I|` along the negative forward branch, i.e. the
/// steepest rise when the branch is walked from `v_min` back toward 0 V.
/// Evaluated on the mirrored branches so that ties resolve toward 0 V.
fn reset_event(split: &BranchSplit) -> Result<f64> {
    let fwd = split.negative_forward.mirrored();
    let ret = split.negative_return.mirrored();
    // mirrored forward branch: V' = -V ascending; its log-slope in V' is the
    // negative of the original, so the steepest fall becomes the minimum.
    let slope = fwd.log_slope();
    let ref_slope = ret.log_slope();
    let guard = LOW_VOLTAGE_GUARD * fwd.hi();
    let mut best: Option<usize> = None;
    for (k, &v) in fwd.voltage.iter().enumerate() {
        if v < guard {
            continue;
        }
        if best.is_none_or(|b| slope[k] < slope[b]) {
            best = Some(k);
        }
    }
    let k = best.ok_or(Error::NoResetEvent)?;
    let v = fwd.voltage[k];
    let excess = interp(&ret.voltage, &ref_slope, v) - slope[k];
    if v > 0.0 && excess >= SWITCH_LOG_SLOPE_FLOOR {
        Ok(-v)
    } else {
        Err(Error::NoResetEvent)
    }
}

pub fn extract_vset(trace: &IVTrace) -> Result<f64> {
    set_event(&split_branches(trace)?)
}

pub fn extract_vreset(trace: &IVTrace) -> Result<f64> {
    reset_event(&split_branches(trace)?)
}

/// Set and reset voltages from one branch split, each failing on its own.
pub fn switching_voltages(trace: &IVTrace) -> Result<(Result<f64>, Result<f64>)> {
    let split = split_branches(trace)?;
    Ok((set_event(&split), reset_event(&split)))
}

/// Slope window chosen by [`extract_lrs_slope`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub region: SlopeRegion,
    /// Voltage window `[lo, hi]` of the fit.
    pub window: (f64, f64),
}

impl SlopeFit {
    /// Midpoint of the fit window; the LRS current here sets the I0 scale.
    pub fn evaluation_voltage(&self) -> f64 {
        0.5 * (self.window.0 + self.window.1)
    }
}

fn window_slope(branch: &Branch, lo: f64, hi: f64) -> Result<(f64, Vec<f64>)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = branch
        .voltage
        .iter()
        .zip(&branch.current)
        .filter(|(v, _)| **v >= lo && **v <= hi)
        .map(|(v, i)| (*v, *i))
        .unzip();
    if xs.len() < MIN_WINDOW_SAMPLES {
        return Err(Error::DegenerateWindow {
            found: xs.len(),
            needed: MIN_WINDOW_SAMPLES,
        });
    }
    Ok((ls_slope(&xs, &ys), ys))
}

fn set_window(split: &BranchSplit, v_set: f64) -> Result<(SlopeFit, Vec<f64>)> {
    let lo = v_set - SLOPE_WINDOW_FRACTION * split.positive_return.hi();
    let (slope, ys) = window_slope(&split.positive_return, lo, v_set)?;
    let fit = SlopeFit {
        slope,
        region: SlopeRegion::SetRegion,
        window: (lo, v_set),
    };
    Ok((fit, ys))
}

fn reset_window(split: &BranchSplit, v_reset: f64) -> Result<SlopeFit> {
    let hi = v_reset - SLOPE_WINDOW_FRACTION * split.negative_forward.lo();
    let (slope, _) = window_slope(&split.negative_forward, v_reset, hi)?;
    Ok(SlopeFit {
        slope,
        region: SlopeRegion::ResetRegion,
        window: (v_reset, hi),
    })
}

fn lrs_slope(split: &BranchSplit, v_set: f64, v_reset: f64, i_compliance: f64) -> Result<SlopeFit> {
    let (fit, ys) = set_window(split, v_set)?;
    let at_compliance = ys
        .iter()
        .filter(|i| i.abs() >= i_compliance * (1.0 - 1e-9))
        .count();
    if (at_compliance as f64) < CLAMPED_FRACTION * ys.len() as f64 {
        return Ok(fit);
    }
    reset_window(split, v_reset)
}

pub fn extract_lrs_slope(trace: &IVTrace, i_compliance: f64) -> Result<(f64, SlopeRegion)> {
    let split = split_branches(trace)?;
    let fit = lrs_slope(&split, set_event(&split)?, reset_event(&split)?, i_compliance)?;
    Ok((fit.slope, fit.region))
}

fn loop_area(forward: &Branch, ret: &Branch) -> f64 {
    let lo = forward.lo().max(ret.lo());
    let hi = forward.hi().min(ret.hi());
    if hi <= lo {
        return 0.0;
    }
    let grid = linspace(lo, hi, GRID_POINTS);
    let diff: Vec<f64> = grid
        .iter()
        .map(|&v| ret.current_at(v) - forward.current_at(v))
        .collect();
    trapezoid(&grid, &diff).abs()
}

/// `(area_lrs, area_hrs)`: loop areas of the positive and negative halves.
pub fn extract_hysteresis_areas(trace: &IVTrace) -> Result<(f64, f64)> {
    let split = split_branches(trace)?;
    Ok(areas(&split))
}

fn areas(split: &BranchSplit) -> (f64, f64) {
    (
        loop_area(&split.positive_forward, &split.positive_return),
        loop_area(&split.negative_forward, &split.negative_return),
    )
}

/// Everything the fitting blocks need from one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub metrics: NvmMetrics,
    pub slope_fit: SlopeFit,
    pub split: BranchSplit,
}

impl Extraction {
    /// LRS-branch current at `v` on the branch the slope fit used.
    pub fn lrs_current_at(&self, region: SlopeRegion, v: f64) -> f64 {
        match region {
            SlopeRegion::SetRegion => self.split.positive_return.current_at(v),
            SlopeRegion::ResetRegion => self.split.negative_forward.current_at(v),
        }
    }
}

/// Compliance used for the slope-window plateau test: the sweep's own value
/// for simulated traces, none for measured ones.
pub fn trace_compliance(trace: &IVTrace) -> f64 {
    trace
        .metadata
        .as_ref()
        .map_or(f64::INFINITY, |m| m.i_compliance)
}

/// Extracts all metrics without checking [`NvmMetrics::validate`].
pub fn extract_with(trace: &IVTrace, i_compliance: f64) -> Result<Extraction> {
    let split = split_branches(trace)?;
    let v_set = set_event(&split)?;
    let v_reset = reset_event(&split)?;
    let slope_fit = lrs_slope(&split, v_set, v_reset, i_compliance)?;
    let (area_lrs, area_hrs) = areas(&split);
    Ok(Extraction {
        metrics: NvmMetrics {
            v_set,
            v_reset,
            lrs_slope: slope_fit.slope,
            area_lrs,
            area_hrs,
            slope_region: slope_fit.region,
        },
        slope_fit,
        split,
    })
}

/// Like [`extract_with`], but the slope is always measured in `region`.
pub fn extract_in_region(trace: &IVTrace, region: SlopeRegion) -> Result<Extraction> {
    let split = split_branches(trace)?;
    let v_set = set_event(&split)?;
    let v_reset = reset_event(&split)?;
    let slope_fit = match region {
        SlopeRegion::SetRegion => set_window(&split, v_set)?.0,
        SlopeRegion::ResetRegion => reset_window(&split, v_reset)?,
    };
    let (area_lrs, area_hrs) = areas(&split);
    Ok(Extraction {
        metrics: NvmMetrics {
            v_set,
            v_reset,
            lrs_slope: slope_fit.slope,
            area_lrs,
            area_hrs,
            slope_region: region,
        },
        slope_fit,
        split,
    })
}

pub fn extract_metrics(trace: &IVTrace) -> Result<NvmMetrics> {
    extract_with(trace, trace_compliance(trace)).map(|e| e.metrics)
}

/// Why a trace does not count as hysteretic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneReason {
    SimulationFailed,
    MalformedSweep,
    NoSetEvent,
    NoResetEvent,
    SlopeWindow,
    NonPositiveSlope,
    EventsTooClose,
    SmallArea,
    AreaOrdering,
}

impl PruneReason {
    pub fn from_error(e: &Error) -> PruneReason {
        match e {
            Error::MalformedSweep(_) => PruneReason::MalformedSweep,
            Error::NoSetEvent => PruneReason::NoSetEvent,
            Error::NoResetEvent => PruneReason::NoResetEvent,
            Error::DegenerateWindow { .. } => PruneReason::SlopeWindow,
            Error::NoHysteresis(r) => *r,
            _ => PruneReason::SimulationFailed,
        }
    }
}

fn first_index(trace: &IVTrace, pred: impl Fn(f64) -> bool) -> Option<usize> {
    trace.samples.iter().position(|s| pred(s.v))
}

/// Full hysteresis verdict. Returns the extracted metrics for traces that
/// pass every check.
pub fn classify_hysteresis(trace: &IVTrace) -> Result<NvmMetrics, PruneReason> {
    let m = extract_metrics(trace).map_err(|e| PruneReason::from_error(&e))?;
    if m.lrs_slope <= 0.0 || !m.lrs_slope.is_finite() {
        return Err(PruneReason::NonPositiveSlope);
    }
    let (lo, hi) = trace.voltage_extent();
    if m.area_lrs < AREA_FLOOR_FRACTION * trace.max_abs_current() * (hi - lo) {
        return Err(PruneReason::SmallArea);
    }
    if m.area_lrs < m.area_hrs {
        return Err(PruneReason::AreaOrdering);
    }
    let set_at = first_index(trace, |v| v >= m.v_set);
    let reset_at = first_index(trace, |v| v <= m.v_reset);
    match (set_at, reset_at) {
        (Some(a), Some(b)) if a.abs_diff(b) >= MIN_SAMPLES_BETWEEN_EVENTS => {}
        _ => return Err(PruneReason::EventsTooClose),
    }
    Ok(m)
}

pub fn detect_hysteresis(trace: &IVTrace) -> bool {
    classify_hysteresis(trace).is_ok()
}
