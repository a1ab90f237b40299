//! Stanford RRAM compact model and its explicit Euler solution under a
//! triangular bipolar voltage sweep.
//!
//! The model has a single state variable, the tunneling gap `g` between the
//! filament tip and the electrode:
//!
//! ```text
//! I     = I0 * exp(-g / g0) * sinh(V / V0)
//! dg/dt = -nu0 * exp(-Ea / kT) * sinh(gamma * a0 / t_ox * qV / kT)
//! gamma = gamma0 - beta * g_nm^3
//! ```
//!
//! The cubic term is evaluated with the gap expressed in nanometers. In SI
//! meters `beta * g^3` would be ~1e-29 and `beta` would have no effect.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{IVTrace, Sample};

/// Boltzmann constant (J/K), CODATA 2018 exact.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge (C), CODATA 2018 exact.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Arguments of `sinh` are capped at this magnitude. sinh(50) ~ 2.6e21, far
/// beyond any compliance current.
pub const SINH_ARG_CAP: f64 = 50.0;

/// Current scale used for every synthetic dataset record (A).
pub const DATASET_I0: f64 = 1.0e-4;

const METERS_PER_NM: f64 = 1.0e-9;

/// The six fitting parameters of the Stanford model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Current scale (A).
    pub i0: f64,
    /// Tunneling decay length (m).
    pub g0: f64,
    /// Voltage scale of the conduction sinh (V).
    pub v0: f64,
    /// Gap velocity prefactor (m/s).
    pub nu0: f64,
    /// Gap feedback coefficient, acting on the gap in nm.
    pub beta: f64,
    /// Field enhancement base.
    pub gamma0: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("i0", self.i0),
            ("g0", self.g0),
            ("v0", self.v0),
            ("nu0", self.nu0),
            ("beta", self.beta),
            ("gamma0", self.gamma0),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::InvalidParams(format!("{name} is not finite")));
            }
        }
        for (name, value) in &fields[..3] {
            if *value <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} = {value} must be > 0")));
            }
        }
        for (name, value) in &fields[3..] {
            if *value < 0.0 {
                return Err(Error::InvalidParams(format!("{name} = {value} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalConstants {
    /// Activation energy (eV).
    pub ea: f64,
    /// Atomic hopping distance (m).
    pub a0: f64,
    /// Device temperature (K).
    pub temperature: f64,
    /// Floor `gamma` at zero. A negative field factor would reverse the
    /// switching polarity.
    #[serde(default = "default_true")]
    pub floor_gamma: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            ea: 0.6,
            a0: 0.25e-9,
            temperature: 300.0,
            floor_gamma: true,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.ea) || !ok(self.a0) || !ok(self.temperature) {
            return Err(Error::InvalidParams(format!(
                "physical constants must be finite and positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Thermal voltage kT/q (V).
    pub fn thermal_voltage(&self) -> f64 {
        BOLTZMANN * self.temperature / ELEMENTARY_CHARGE
    }

    /// Arrhenius factor exp(-Ea / kT).
    pub fn arrhenius(&self) -> f64 {
        (-self.ea / self.thermal_voltage()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolarityOrder {
    #[default]
    PositiveFirst,
    NegativeFirst,
}

/// Voltage waveform, integration step and device boundary conditions for one
/// bipolar sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// Positive apex (V).
    pub v_max: f64,
    /// Negative apex (V).
    pub v_min: f64,
    /// Integration and sampling step (s).
    pub dt: f64,
    /// Ramp rate (V/s).
    pub ramp_rate: f64,
    #[serde(default)]
    pub polarity_order: PolarityOrder,
    /// Compliance current (A).
    pub i_compliance: f64,
    /// Initial gap (m).
    pub g_init: f64,
    /// Lower gap clamp (m).
    pub g_min: f64,
    /// Upper gap clamp (m).
    pub g_max: f64,
    /// Oxide thickness (m).
    pub t_ox: f64,
}

impl Default for SweepSpec {
    /// ±4 V sweep, 4,000 Euler steps per cycle, device starting in HRS.
    fn default() -> Self {
        SweepSpec {
            v_max: 4.0,
            v_min: -4.0,
            dt: 1.0e-3,
            ramp_rate: 4.0,
            polarity_order: PolarityOrder::PositiveFirst,
            i_compliance: 0.1,
            g_init: 2.0e-9,
            g_min: 0.1e-9,
            g_max: 2.0e-9,
            t_ox: 10.0e-9,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let values = [
            self.v_max,
            self.v_min,
            self.dt,
            self.ramp_rate,
            self.i_compliance,
            self.g_init,
            self.g_min,
            self.g_max,
            self.t_ox,
        ];
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSweep("non-finite field".into()));
        }
        let fail = |msg: &str| Err(Error::InvalidSweep(msg.to_string()));
        if !(self.v_min < 0.0 && 0.0 < self.v_max) {
            return fail("need v_min < 0 < v_max");
        }
        if self.dt <= 0.0 || self.ramp_rate <= 0.0 {
            return fail("dt and ramp_rate must be positive");
        }
        if self.i_compliance <= 0.0 {
            return fail("i_compliance must be positive");
        }
        if !(self.g_min <= self.g_init && self.g_init <= self.g_max) || self.g_min < 0.0 {
            return fail("need 0 <= g_min <= g_init <= g_max");
        }
        if self.t_ox <= 0.0 {
            return fail("t_ox must be positive");
        }
        Ok(())
    }

    /// Duration of one full bipolar cycle (s).
    pub fn period(&self) -> f64 {
        2.0 * (self.v_max - self.v_min) / self.ramp_rate
    }

    /// Same sweep with the oxide thickness replaced.
    pub fn with_t_ox(mut self, t_ox: f64) -> Self {
        self.t_ox = t_ox;
        self
    }

    /// Same sweep with a different step; the ramp rate is kept.
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Field factor `gamma0 - beta * g_nm^3`; may be negative.
pub fn gamma_of_gap(g: f64, params: &ModelParams) -> f64 {
    let g_nm = g / METERS_PER_NM;
    params.gamma0 - params.beta * g_nm * g_nm * g_nm
}

fn capped_sinh(x: f64) -> f64 {
    x.clamp(-SINH_ARG_CAP, SINH_ARG_CAP).sinh()
}

/// Unclamped device current (A).
pub fn device_current(g: f64, v: f64, params: &ModelParams) -> f64 {
    params.i0 * (-g / params.g0).exp() * capped_sinh(v / params.v0)
}

/// Gap velocity dg/dt (m/s). Positive voltage closes the gap (set), negative
/// voltage opens it (reset).
pub fn gap_velocity(
    g: f64,
    v: f64,
    params: &ModelParams,
    consts: &PhysicalConstants,
    t_ox: f64,
) -> f64 {
    if v == 0.0 || params.nu0 == 0.0 {
        return 0.0;
    }
    let mut gamma = gamma_of_gap(g, params);
    if consts.floor_gamma {
        gamma = gamma.max(0.0);
    }
    let vt = consts.thermal_voltage();
    -params.nu0 * consts.arrhenius() * capped_sinh(gamma * consts.a0 / t_ox * v / vt)
}

/// Piecewise-linear `0 -> apex -> 0 -> other apex -> 0` waveform sampled every
/// `dt`. The final sample sits exactly at the end of the cycle.
pub fn make_triangular_sweep(spec: &SweepSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let (first, second) = match spec.polarity_order {
        PolarityOrder::PositiveFirst => (spec.v_max, spec.v_min),
        PolarityOrder::NegativeFirst => (spec.v_min, spec.v_max),
    };
    let rate = spec.ramp_rate;
    let t1 = first.abs() / rate;
    let t2 = 2.0 * t1;
    let t3 = t2 + second.abs() / rate;
    let period = t3 + second.abs() / rate;
    let steps = (period / spec.dt - 1e-9).ceil().max(1.0) as usize;

    let voltage_at = |t: f64| -> f64 {
        if t <= t1 {
            first.signum() * rate * t
        } else if t <= t2 {
            first - first.signum() * rate * (t - t1)
        } else if t <= t3 {
            second.signum() * rate * (t - t2)
        } else {
            second - second.signum() * rate * (t - t3)
        }
    };

    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = (k as f64 * spec.dt).min(period);
        let v = if k == steps { 0.0 } else { voltage_at(t) };
        out.push((t, v));
    }
    Ok(out)
}

/// Integrates the gap ODE with explicit Euler over one bipolar sweep.
///
/// Sample `k` records the gap *before* the update and the current clamped to
/// ±`i_compliance`; the gap is clamped to `[g_min, g_max]` after every step.
pub fn simulate_sweep(
    params: &ModelParams,
    consts: &PhysicalConstants,
    spec: &SweepSpec,
) -> Result<IVTrace> {
    params.validate()?;
    consts.validate()?;
    let waveform = make_triangular_sweep(spec)?;

    let icc = spec.i_compliance;
    let mut g = spec.g_init;
    let mut samples = Vec::with_capacity(waveform.len());
    for (k, &(t, v)) in waveform.iter().enumerate() {
        let i = device_current(g, v, params).clamp(-icc, icc);
        if !i.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite { t });
        }
        samples.push(Sample {
            t,
            v,
            i,
            g: Some(g),
        });
        if let Some(&(t_next, _)) = waveform.get(k + 1) {
            let step = t_next - t;
            let next = g + step * gap_velocity(g, v, params, consts, spec.t_ox);
            if !next.is_finite() {
                return Err(Error::NonFinite { t: t_next });
            }
            g = next.clamp(spec.g_min, spec.g_max);
        }
    }
    Ok(IVTrace {
        samples,
        metadata: Some(*spec),
    })
}
