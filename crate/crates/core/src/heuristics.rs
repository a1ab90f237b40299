//! Refinement of an initial estimate in three blocks, each driven by
//! [`adaptive_binary_search`]:
//!
//! * Block I alternates `gamma0` (targets `v_reset`) and `beta` (targets
//!   `v_set`) until the L1 voltage loss stops improving, then rescales `i0`.
//! * Block II tunes `v0` to the LRS slope.
//! * Block III tunes `g0` to balance the log errors of both hysteresis areas.
//!
//! After Block III, Block II is re-invoked when the slope alone is out of
//! tolerance. Every block keeps its input parameters when its own loss would
//! get worse, so per-block error never increases.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimateRequest, EstimateResponse, Estimator};
use crate::metrics::{extract_in_region, extract_with, switching_voltages, Extraction, NvmMetrics, SlopeRegion};
use crate::model::{simulate_sweep, ModelParams, PhysicalConstants, SweepSpec};
use crate::search::{adaptive_binary_search, BoundSpec, SearchOptions, SearchOutcome};
use crate::trace::IVTrace;

/// User-supplied targets; same shape and invariants as [`NvmMetrics`].
pub type ReferenceMetrics = NvmMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative tolerance on `v_set`.
    pub v_set: f64,
    /// Relative tolerance on `v_reset`.
    pub v_reset: f64,
    /// Relative tolerance on `lrs_slope`.
    pub lrs_slope: f64,
    /// Areas pass when within this factor of the reference.
    pub area_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            v_set: 0.02,
            v_reset: 0.02,
            lrs_slope: 0.10,
            area_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBounds {
    pub gamma0: BoundSpec,
    pub beta: BoundSpec,
    pub v0: BoundSpec,
    pub g0: BoundSpec,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            gamma0: BoundSpec::new(0.0, 24.0, 30.0, 1.5),
            beta: BoundSpec::new(0.0, 2.1, 2.1, 1.5),
            v0: BoundSpec::new(0.15, 0.4, 1.5, 1.5),
            g0: BoundSpec::new(1.5e-10, 2.5e-10, 8e-10, 1.5),
        }
    }
}

impl SearchBounds {
    pub fn validate(&self) -> Result<()> {
        self.gamma0.validate()?;
        self.beta.validate()?;
        self.v0.validate()?;
        self.g0.validate()?;
        if self.v0.lo <= 0.0 || self.g0.lo <= 0.0 {
            return Err(Error::InvalidBounds("v0 and g0 bounds must be positive".into()));
        }
        Ok(())
    }

    fn get_mut(&mut self, p: Param) -> &mut BoundSpec {
        match p {
            Param::Gamma0 => &mut self.gamma0,
            Param::Beta => &mut self.beta,
            Param::V0 => &mut self.v0,
            Param::G0 => &mut self.g0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub bounds: SearchBounds,
    /// Bisection budget per search.
    pub max_iter: usize,
    /// (gamma0, beta) alternation rounds in Block I.
    pub block1_rounds: usize,
    /// Full passes; Block II is re-invoked at most `max_loops - 1` times.
    pub max_loops: usize,
    /// Widen upper bounds toward their hard caps when saturated.
    pub expand_bounds: bool,
    /// Inner search tolerance as a fraction of the block tolerance.
    pub search_tolerance_fraction: f64,
    /// Sweep used for every simulation; `t_ox` comes from the request.
    pub sweep: SweepSpec,
    #[serde(default)]
    pub constants: PhysicalConstants,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tolerances: Tolerances::default(),
            bounds: SearchBounds::default(),
            max_iter: 30,
            block1_rounds: 4,
            max_loops: 2,
            expand_bounds: false,
            search_tolerance_fraction: 0.25,
            sweep: SweepSpec::default(),
            constants: PhysicalConstants::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        let positive = [t.v_set, t.v_reset, t.lrs_slope, self.search_tolerance_fraction];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || !(t.area_factor > 1.0) {
            return Err(Error::InvalidConfig(
                "tolerances must be positive and area_factor > 1".into(),
            ));
        }
        if self.max_iter == 0 || self.block1_rounds == 0 || self.max_loops == 0 {
            return Err(Error::InvalidConfig(
                "max_iter, block1_rounds and max_loops must be at least 1".into(),
            ));
        }
        self.bounds.validate()?;
        self.sweep.validate()?;
        self.constants.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Param {
    Gamma0,
    Beta,
    V0,
    G0,
}

impl Param {
    fn get(self, p: &ModelParams) -> f64 {
        match self {
            Param::Gamma0 => p.gamma0,
            Param::Beta => p.beta,
            Param::V0 => p.v0,
            Param::G0 => p.g0,
        }
    }

    fn with(self, mut p: ModelParams, x: f64) -> ModelParams {
        match self {
            Param::Gamma0 => p.gamma0 = x,
            Param::Beta => p.beta = x,
            Param::V0 => p.v0 = x,
            Param::G0 => p.g0 = x,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Estimate,
    BlockI,
    BlockII,
    BlockIII,
    BlockIIReloop,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Estimate => "estimate",
            Stage::BlockI => "block-i",
            Stage::BlockII => "block-ii",
            Stage::BlockIII => "block-iii",
            Stage::BlockIIReloop => "block-ii-reloop",
        }
    }
}

/// `|fit - ref| / |ref|` per metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricErrors {
    pub v_set: f64,
    pub v_reset: f64,
    pub lrs_slope: f64,
    pub area_lrs: f64,
    pub area_hrs: f64,
}

impl MetricErrors {
    pub fn between(fit: &NvmMetrics, reference: &NvmMetrics) -> Self {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        MetricErrors {
            v_set: rel(fit.v_set, reference.v_set),
            v_reset: rel(fit.v_reset, reference.v_reset),
            lrs_slope: rel(fit.lrs_slope, reference.lrs_slope),
            area_lrs: rel(fit.area_lrs, reference.area_lrs),
            area_hrs: rel(fit.area_hrs, reference.area_hrs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub stage: Stage,
    /// 1-based outer pass.
    pub pass: usize,
    pub params: ModelParams,
    /// `None` when the stage's parameters do not yield extractable metrics.
    pub metrics: Option<NvmMetrics>,
    pub errors: Option<MetricErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub stage: Stage,
    pub parameter: Param,
    pub start: f64,
    pub target: f64,
    pub outcome: SearchOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationFlag {
    pub parameter: Param,
    pub saturated: bool,
    /// Bounds in force at the end of the fit.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub reference: ReferenceMetrics,
    pub t_ox: f64,
    pub estimate: EstimateResponse,
    /// Factor applied to the estimate's `nu0` for the fit ramp rate.
    pub nu0_rescale: f64,
    /// Factor applied to `i0` by each Block I pass.
    pub i0_rescale: Vec<f64>,
    pub stages: Vec<StageSnapshot>,
    pub searches: Vec<SearchRecord>,
    pub saturation: Vec<SaturationFlag>,
    pub block2_reinvocations: usize,
    pub final_params: ModelParams,
    pub final_metrics: Option<NvmMetrics>,
    pub final_errors: Option<MetricErrors>,
    /// All metrics within tolerance.
    pub converged: bool,
    pub simulations: usize,
}

/// Simulator and extractor bound to one sweep, counting simulations.
struct Evaluator<'a> {
    consts: &'a PhysicalConstants,
    sweep: SweepSpec,
    /// Slope region of the reference; fits are measured in the same one.
    region: SlopeRegion,
    count: Cell<usize>,
}

impl Evaluator<'_> {
    fn simulate(&self, p: &ModelParams) -> Result<IVTrace> {
        self.count.set(self.count.get() + 1);
        simulate_sweep(p, self.consts, &self.sweep)
    }

    fn extract(&self, p: &ModelParams) -> Result<Extraction> {
        extract_in_region(&self.simulate(p)?, self.region)
    }

    /// Gaps (nm) when the sweep first crosses `v_set` and `v_reset`.
    fn event_gaps(&self, p: &ModelParams, v_set: f64, v_reset: f64) -> Option<(f64, f64)> {
        let trace = self.simulate(p).ok()?;
        let s = &trace.samples;
        let at = |hit: &dyn Fn(f64, f64) -> bool| {
            s.windows(2)
                .find(|w| hit(w[1].v, w[1].v - w[0].v))
                .and_then(|w| w[1].g)
                .map(|g| g * 1e9)
        };
        let g_set = at(&|v, dv| dv > 0.0 && v >= v_set)?;
        let g_reset = at(&|v, dv| dv < 0.0 && v <= v_reset)?;
        Some((g_set, g_reset))
    }

    /// Switching voltages with out-of-sweep sentinels: a missing set reads
    /// as `2 * v_max`, a missing reset as `2 * v_min`.
    fn voltages(&self, p: &ModelParams) -> (f64, f64, bool) {
        let sentinel = (2.0 * self.sweep.v_max, 2.0 * self.sweep.v_min, false);
        let Ok(trace) = self.simulate(p) else {
            return sentinel;
        };
        match switching_voltages(&trace) {
            Ok((s, r)) => {
                let both = s.is_ok() && r.is_ok();
                (s.unwrap_or(sentinel.0), r.unwrap_or(sentinel.1), both)
            }
            Err(_) => sentinel,
        }
    }
}

struct State<'a> {
    eval: Evaluator<'a>,
    cfg: &'a PipelineConfig,
    reference: ReferenceMetrics,
    reference_trace: Option<Extraction>,
    bounds: SearchBounds,
    searches: Vec<SearchRecord>,
    saturated: Vec<(Param, bool)>,
    i0_rescale: Vec<f64>,
}

impl State<'_> {
    fn search<F>(&mut self, stage: Stage, param: Param, start: &ModelParams, target: f64, tol: f64, f: F) -> Result<SearchOutcome>
    where
        F: FnMut(&Evaluator, ModelParams) -> Result<f64>,
    {
        self.search_along(stage, param, start, target, tol, |base, x| param.with(base, x), f)
    }

    /// Searches `param`, with `along` building the candidate parameter set
    /// from the start point and the searched value.
    #[allow(clippy::too_many_arguments)]
    fn search_along<A, F>(
        &mut self,
        stage: Stage,
        param: Param,
        start: &ModelParams,
        target: f64,
        tol: f64,
        along: A,
        mut f: F,
    ) -> Result<SearchOutcome>
    where
        A: Fn(ModelParams, f64) -> ModelParams,
        F: FnMut(&Evaluator, ModelParams) -> Result<f64>,
    {
        let bounds = *self.bounds.get_mut(param);
        let opts = SearchOptions {
            tol,
            max_iter: self.cfg.max_iter,
            expand: self.cfg.expand_bounds,
        };
        let eval = &self.eval;
        let base = *start;
        let outcome = adaptive_binary_search(|x| f(eval, along(base, x)), &bounds, target, &opts)?;
        self.bounds.get_mut(param).hi = outcome.final_hi;
        self.saturated.push((param, outcome.saturated));
        self.searches.push(SearchRecord {
            stage,
            parameter: param,
            start: param.get(start),
            target,
            outcome: outcome.clone(),
        });
        Ok(outcome)
    }

    fn voltage_loss(&self, v_set: f64, v_reset: f64) -> f64 {
        (v_set - self.reference.v_set).abs() + (v_reset - self.reference.v_reset).abs()
    }

    fn within(&self, value: f64, reference: f64, tol: f64) -> bool {
        (value - reference).abs() <= tol * reference.abs()
    }

    fn block1(&mut self, params: ModelParams) -> Result<ModelParams> {
        let (mut best, loss, done) = self.block1_rounds(params, true)?;
        if !done {
            let (plain, plain_loss, _) = self.block1_rounds(params, false)?;
            if plain_loss < loss {
                best = plain;
            }
        }

        let (_, _, switching) = self.eval.voltages(&best);
        if !switching {
            return Err(Error::NoSwitching);
        }
        let factor = self.i0_factor(&best)?;
        best.i0 *= factor;
        self.i0_rescale.push(factor);
        Ok(best)
    }

    /// Alternating (gamma0, beta) rounds. Returns the best parameters, their
    /// voltage loss and whether both voltages are within tolerance.
    fn block1_rounds(&mut self, params: ModelParams, compensated: bool) -> Result<(ModelParams, f64, bool)> {
        let t = self.cfg.tolerances;
        let frac = self.cfg.search_tolerance_fraction;
        let r = self.reference;
        let (s0, r0, _) = self.eval.voltages(&params);
        let mut best = params;
        let mut best_loss = self.voltage_loss(s0, r0);
        let (mut vs, mut vr) = (s0, r0);

        for _ in 0..self.cfg.block1_rounds {
            if self.within(vs, r.v_set, t.v_set) && self.within(vr, r.v_reset, t.v_reset) {
                break;
            }
            let mut p = best;
            // gamma0 moves keep gamma at the set gap fixed, beta moves keep it
            // fixed at the reset gap
            let gaps = if compensated { self.eval.event_gaps(&p, vs, vr) } else { None };
            if !self.within(vr, r.v_reset, t.v_reset) {
                let (g0, b0) = (p.gamma0, p.beta);
                let beta_hi = self.bounds.beta.hi;
                let along = move |q: ModelParams, x: f64| match gaps {
                    Some((gs, _)) => ModelParams {
                        gamma0: x,
                        beta: (b0 + (x - g0) / gs.powi(3)).clamp(0.0, beta_hi),
                        ..q
                    },
                    None => Param::Gamma0.with(q, x),
                };
                let out = self.search_along(Stage::BlockI, Param::Gamma0, &p, r.v_reset, frac * t.v_reset * r.v_reset.abs(), along, |e, q| {
                    Ok(e.voltages(&q).1)
                })?;
                p = along(p, out.value);
            }
            let (s1, r1, _) = self.eval.voltages(&p);
            let gaps = if compensated { self.eval.event_gaps(&p, s1, r1).or(gaps) } else { None };
            let (g0, b0) = (p.gamma0, p.beta);
            let (gamma_lo, gamma_hi) = (self.bounds.gamma0.lo, self.bounds.gamma0.hi);
            let along = move |q: ModelParams, x: f64| match gaps {
                Some((_, gr)) => ModelParams {
                    beta: x,
                    gamma0: (g0 + (x - b0) * gr.powi(3)).clamp(gamma_lo, gamma_hi),
                    ..q
                },
                None => Param::Beta.with(q, x),
            };
            let out = self.search_along(Stage::BlockI, Param::Beta, &p, r.v_set, frac * t.v_set * r.v_set, along, |e, q| {
                Ok(e.voltages(&q).0)
            })?;
            p = along(p, out.value);
            let (s, v, _) = self.eval.voltages(&p);
            let loss = self.voltage_loss(s, v);
            if loss < best_loss {
                best = p;
                best_loss = loss;
                vs = s;
                vr = v;
            } else {
                break;
            }
        }

        let done = self.within(vs, r.v_set, t.v_set) && self.within(vr, r.v_reset, t.v_reset);
        Ok((best, best_loss, done))
    }

    /// Ratio of reference to fitted LRS current at the reference
    /// slope-evaluation voltage; falls back to the slope ratio without a
    /// reference trace.
    fn i0_factor(&self, p: &ModelParams) -> Result<f64> {
        let fit = self.eval.extract(p)?;
        let factor = match &self.reference_trace {
            Some(reference) => {
                let region = reference.slope_fit.region;
                let v = reference.slope_fit.evaluation_voltage();
                reference.lrs_current_at(region, v) / fit.lrs_current_at(region, v)
            }
            None => self.reference.lrs_slope / fit.metrics.lrs_slope,
        };
        Ok(if factor.is_finite() && factor > 0.0 { factor } else { 1.0 })
    }

    fn slope_loss(&self, m: &NvmMetrics) -> f64 {
        (m.lrs_slope / self.reference.lrs_slope - 1.0).abs()
    }

    fn block2(&mut self, stage: Stage, params: ModelParams) -> Result<ModelParams> {
        let start = self.eval.extract(&params).map_err(|_| Error::NoSwitching)?;
        let start_loss = self.slope_loss(&start.metrics);
        if start_loss <= self.cfg.tolerances.lrs_slope {
            return Ok(params);
        }
        let tol = self.cfg.search_tolerance_fraction * self.cfg.tolerances.lrs_slope;
        let reference = self.reference.lrs_slope;
        // i0 follows v0 so the LRS current at the slope evaluation voltage
        // stays put
        let v_eval = start.slope_fit.evaluation_voltage();
        let along = move |q: ModelParams, x: f64| {
            let scale = (v_eval / params.v0).sinh() / (v_eval / x).sinh();
            ModelParams {
                v0: x,
                i0: if scale.is_finite() && scale > 0.0 { params.i0 * scale } else { params.i0 },
                ..q
            }
        };
        let out = self.search_along(stage, Param::V0, &params, 1.0, tol, along, |e, q| {
            Ok(match e.extract(&q) {
                Ok(x) => x.metrics.lrs_slope / reference,
                // failure reads as a far-off slope so the scan steps away
                Err(_) => 1e6,
            })
        })?;
        let candidate = along(params, out.value);
        Ok(match self.eval.extract(&candidate) {
            Ok(x) if self.slope_loss(&x.metrics) < start_loss => candidate,
            _ => params,
        })
    }

    fn area_terms(&self, m: &NvmMetrics) -> (f64, f64) {
        let floor = 1e-300;
        (
            (m.area_lrs.max(floor) / self.reference.area_lrs).ln(),
            (m.area_hrs.max(floor) / self.reference.area_hrs).ln(),
        )
    }

    fn block3(&mut self, params: ModelParams) -> Result<ModelParams> {
        if self.reference.area_lrs <= 0.0 {
            return Err(Error::ZeroReferenceArea("LRS"));
        }
        if self.reference.area_hrs <= 0.0 {
            return Err(Error::ZeroReferenceArea("HRS"));
        }
        let start = self.eval.extract(&params).map_err(|_| Error::NoSwitching)?;
        let (a, b) = self.area_terms(&start.metrics);
        let band = self.cfg.tolerances.area_factor.ln();
        if a.abs() <= band && b.abs() <= band {
            return Ok(params);
        }
        let start_loss = a.abs() + b.abs();
        let tol = self.cfg.search_tolerance_fraction * band;
        let out = {
            let (ra, rb) = (self.reference.area_lrs, self.reference.area_hrs);
            self.search(Stage::BlockIII, Param::G0, &params, 0.0, tol, move |e, q| {
                Ok(match e.extract(&q) {
                    Ok(x) => {
                        let m = x.metrics;
                        (m.area_lrs.max(1e-300) / ra).ln() + (m.area_hrs.max(1e-300) / rb).ln()
                    }
                    Err(_) => 1e6,
                })
            })?
        };
        let candidate = Param::G0.with(params, out.value);
        Ok(match self.eval.extract(&candidate) {
            Ok(x) => {
                let (a, b) = self.area_terms(&x.metrics);
                if a.abs() + b.abs() < start_loss {
                    candidate
                } else {
                    params
                }
            }
            Err(_) => params,
        })
    }

    fn snapshot(&self, stage: Stage, pass: usize, params: ModelParams) -> StageSnapshot {
        let metrics = self.eval.extract(&params).ok().map(|x| x.metrics);
        StageSnapshot {
            stage,
            pass,
            params,
            metrics,
            errors: metrics.map(|m| MetricErrors::between(&m, &self.reference)),
        }
    }

    fn only_slope_fails(&self, m: &NvmMetrics) -> bool {
        let t = self.cfg.tolerances;
        let e = MetricErrors::between(m, &self.reference);
        e.lrs_slope > t.lrs_slope
            && e.v_set <= t.v_set
            && e.v_reset <= t.v_reset
            && in_band(m.area_lrs, self.reference.area_lrs, t.area_factor)
    }
}

fn in_band(a: f64, r: f64, factor: f64) -> bool {
    a > 0.0 && (a / r).max(r / a) <= factor
}

/// True when every metric is within the configured tolerance.
pub fn within_tolerance(fit: &NvmMetrics, reference: &NvmMetrics, t: &Tolerances) -> bool {
    let e = MetricErrors::between(fit, reference);
    e.v_set <= t.v_set
        && e.v_reset <= t.v_reset
        && e.lrs_slope <= t.lrs_slope
        && in_band(fit.area_lrs, reference.area_lrs, t.area_factor)
        && in_band(fit.area_hrs, reference.area_hrs, t.area_factor)
}

fn staged<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage.label()))
}

/// Estimator, Block I, Block II, Block III, then Block II again while the
/// slope alone is out of tolerance.
///
/// `reference_trace`, when given, anchors the `i0` rescale on measured
/// current; otherwise the slope ratio is used.
pub fn run_pipeline(
    request: &EstimateRequest,
    reference_trace: Option<&IVTrace>,
    estimator: &dyn Estimator,
    cfg: &PipelineConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    request.validate()?;
    let reference = request.target_metrics;
    let sweep = cfg.sweep.with_t_ox(request.t_ox);

    let estimate = staged(Stage::Estimate, estimator.estimate(request))?;
    let nu0_rescale = estimator
        .ramp_rate()
        .map_or(1.0, |rate| sweep.ramp_rate / rate);
    let mut params = estimate.params;
    params.nu0 *= nu0_rescale;

    let reference_trace = match reference_trace {
        Some(tr) => {
            let icc = tr.metadata.map_or(sweep.i_compliance, |m| m.i_compliance);
            Some(extract_with(tr, icc)?)
        }
        None => None,
    };

    let mut st = State {
        eval: Evaluator {
            consts: &cfg.constants,
            sweep,
            region: reference.slope_region,
            count: Cell::new(0),
        },
        cfg,
        reference,
        reference_trace,
        bounds: cfg.bounds,
        searches: Vec::new(),
        saturated: Vec::new(),
        i0_rescale: Vec::new(),
    };

    let mut stages = vec![st.snapshot(Stage::Estimate, 1, params)];
    params = staged(Stage::BlockI, st.block1(params))?;
    stages.push(st.snapshot(Stage::BlockI, 1, params));
    params = staged(Stage::BlockII, st.block2(Stage::BlockII, params))?;
    stages.push(st.snapshot(Stage::BlockII, 1, params));
    params = staged(Stage::BlockIII, st.block3(params))?;
    stages.push(st.snapshot(Stage::BlockIII, 1, params));

    let mut reinvocations = 0;
    for pass in 2..=cfg.max_loops {
        let Some(metrics) = stages.last().and_then(|s| s.metrics) else {
            break;
        };
        if !st.only_slope_fails(&metrics) {
            break;
        }
        params = staged(Stage::BlockIIReloop, st.block2(Stage::BlockIIReloop, params))?;
        reinvocations += 1;
        stages.push(st.snapshot(Stage::BlockIIReloop, pass, params));
    }

    let last = stages.last().expect("at least one stage");
    let final_metrics = last.metrics;
    let final_errors = last.errors;
    let converged = final_metrics.is_some_and(|m| within_tolerance(&m, &reference, &cfg.tolerances));

    let saturation = [Param::Gamma0, Param::Beta, Param::V0, Param::G0]
        .into_iter()
        .map(|p| {
            let b = *st.bounds.get_mut(p);
            SaturationFlag {
                parameter: p,
                saturated: st.saturated.iter().any(|(q, s)| *q == p && *s),
                lo: b.lo,
                hi: b.hi,
            }
        })
        .collect();

    Ok(FitReport {
        reference,
        t_ox: request.t_ox,
        estimate,
        nu0_rescale,
        i0_rescale: st.i0_rescale.clone(),
        stages,
        searches: st.searches.clone(),
        saturation,
        block2_reinvocations: reinvocations,
        final_params: params,
        final_metrics,
        final_errors,
        converged,
        simulations: st.eval.count.get(),
    })
}

/// Block I alone, for callers composing their own flow.
pub fn block1_voltages(
    params: ModelParams,
    reference: &ReferenceMetrics,
    reference_trace: Option<&IVTrace>,
    t_ox: f64,
    cfg: &PipelineConfig,
) -> Result<(ModelParams, Vec<SearchRecord>)> {
    let mut st = standalone(reference, reference_trace, t_ox, cfg)?;
    let p = st.block1(params)?;
    Ok((p, st.searches))
}

pub fn block2_slope(
    params: ModelParams,
    reference: &ReferenceMetrics,
    t_ox: f64,
    cfg: &PipelineConfig,
) -> Result<(ModelParams, Vec<SearchRecord>)> {
    let mut st = standalone(reference, None, t_ox, cfg)?;
    let p = st.block2(Stage::BlockII, params)?;
    Ok((p, st.searches))
}

pub fn block3_area(
    params: ModelParams,
    reference: &ReferenceMetrics,
    t_ox: f64,
    cfg: &PipelineConfig,
) -> Result<(ModelParams, Vec<SearchRecord>)> {
    let mut st = standalone(reference, None, t_ox, cfg)?;
    let p = st.block3(params)?;
    Ok((p, st.searches))
}

fn standalone<'a>(
    reference: &ReferenceMetrics,
    reference_trace: Option<&IVTrace>,
    t_ox: f64,
    cfg: &'a PipelineConfig,
) -> Result<State<'a>> {
    cfg.validate()?;
    reference.validate()?;
    let sweep = cfg.sweep.with_t_ox(t_ox);
    let reference_trace = match reference_trace {
        Some(tr) => Some(extract_with(tr, tr.metadata.map_or(sweep.i_compliance, |m| m.i_compliance))?),
        None => None,
    };
    Ok(State {
        eval: Evaluator {
            consts: &cfg.constants,
            sweep,
            region: reference.slope_region,
            count: Cell::new(0),
        },
        cfg,
        reference: *reference,
        reference_trace,
        bounds: cfg.bounds,
        searches: Vec::new(),
        saturated: Vec::new(),
        i0_rescale: Vec::new(),
    })
}
