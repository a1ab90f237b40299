//! Four benchmark devices with published Stanford-model parameters and
//! reference metrics, each paired with a sweep that brings the simulated
//! metrics of the published parameters as close to the reference as a full
//! switching cycle allows. Residual errors remain large for some metrics.
//!
//! The published sources give parameters and metrics but no sweep. The
//! sweeps below (apexes, ramp rate, compliance, oxide thickness, gap clamps)
//! were calibrated by differential evolution on the log relative error of
//! all five metrics, using the extraction conventions of [`crate::metrics`]
//! with 4,000 Euler steps per cycle, subject to the trace passing
//! [`crate::metrics::detect_hysteresis`], the gap closing and reopening by at
//! least a quarter of its range, and both switching events lying within 95%
//! of their apex voltage. See `examples/calibrate_sweeps.rs`.

use serde::{Deserialize, Serialize};

use crate::metrics::{NvmMetrics, SlopeRegion};
use crate::model::{ModelParams, PolarityOrder, SweepSpec};

/// Reference metrics as published (slope in S, areas in A·V).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedMetrics {
    pub v_set: f64,
    pub v_reset: f64,
    pub lrs_slope: f64,
    pub area_lrs: f64,
    pub area_hrs: f64,
}

impl PublishedMetrics {
    pub fn as_nvm(&self) -> NvmMetrics {
        NvmMetrics {
            v_set: self.v_set,
            v_reset: self.v_reset,
            lrs_slope: self.lrs_slope,
            area_lrs: self.area_lrs,
            area_hrs: self.area_hrs,
            slope_region: SlopeRegion::SetRegion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Device {
    pub name: &'static str,
    pub stack: &'static str,
    pub params: ModelParams,
    pub published: PublishedMetrics,
    pub sweep: SweepSpec,
}

/// Euler steps per bipolar cycle used for the calibrated sweeps.
pub const STEPS_PER_CYCLE: f64 = 4000.0;

const fn sweep(
    t_ox: f64,
    ramp_rate: f64,
    v_max: f64,
    v_min: f64,
    i_compliance: f64,
    g_max_nm: f64,
    g_min_nm: f64,
) -> SweepSpec {
    SweepSpec {
        v_max,
        v_min,
        dt: 2.0 * (v_max - v_min) / ramp_rate / STEPS_PER_CYCLE,
        ramp_rate,
        polarity_order: PolarityOrder::PositiveFirst,
        i_compliance,
        g_init: g_max_nm * 1e-9,
        g_min: g_min_nm * 1e-9,
        g_max: g_max_nm * 1e-9,
        t_ox,
    }
}

pub const PT_HFO2: Device = Device {
    name: "pt-hfo2",
    stack: "Pt/HfO2",
    params: ModelParams {
        i0: 1.70e-4,
        g0: 2.18e-10,
        v0: 0.200,
        nu0: 10.5,
        beta: 2.10,
        gamma0: 20.8,
    },
    published: PublishedMetrics {
        v_set: 0.778,
        v_reset: -0.471,
        lrs_slope: 0.0084,
        area_lrs: 3.66e-4,
        area_hrs: 6.60e-7,
    },
    sweep: sweep(5.0118878e-9, 1.0589939e1, 0.610672, -6.000000, 6.9191207e-4, 1.999978, 0.500000),
};

pub const AL_GE_TAOX: Device = Device {
    name: "al-ge-taox",
    stack: "Al/Ge/TaOx",
    params: ModelParams {
        i0: 1.04e-3,
        g0: 1.50e-10,
        v0: 0.250,
        nu0: 15.0,
        beta: 1.50,
        gamma0: 12.2,
    },
    published: PublishedMetrics {
        v_set: 3.055,
        v_reset: -1.474,
        lrs_slope: 2.3032,
        area_lrs: 1.73e-1,
        area_hrs: 6.30e-4,
    },
    sweep: sweep(8.5396826e-9, 6.0425521e6, 2.819035, -1.876171, 4.9953345e0, 1.711688, 0.500000),
};

pub const TI_SIO2: Device = Device {
    name: "ti-sio2",
    stack: "Ti/SiO2",
    params: ModelParams {
        i0: 3.74e-5,
        g0: 1.85e-10,
        v0: 0.375,
        nu0: 1.00e-9,
        beta: 1.80,
        gamma0: 18.0,
    },
    published: PublishedMetrics {
        v_set: 2.116,
        v_reset: -1.191,
        lrs_slope: 0.0049,
        area_lrs: 7.18e-4,
        area_hrs: 4.09e-7,
    },
    sweep: sweep(5.0003453e-9, 3.6789303e-6, 1.806721, -5.805536, 1.9301471e-3, 2.000000, 0.499616),
};

pub const PT_HFOX_TIOX: Device = Device {
    name: "pt-hfox-tiox",
    stack: "Pt/HfOx/TiOx/TiN",
    params: ModelParams {
        i0: 1.00e-3,
        g0: 2.50e-10,
        v0: 0.250,
        nu0: 10.0,
        beta: 0.800,
        gamma0: 16.0,
    },
    published: PublishedMetrics {
        v_set: 1.655,
        v_reset: -1.404,
        lrs_slope: 0.0124,
        area_lrs: 4.74e-2,
        area_hrs: 2.97e-4,
    },
    sweep: sweep(1.9998619e-8, 8.3741955e1, 3.421414, -6.000000, 1.9111240e-1, 1.998734, 0.500000),
};

pub const ALL: [Device; 4] = [PT_HFO2, AL_GE_TAOX, TI_SIO2, PT_HFOX_TIOX];

pub fn by_name(name: &str) -> Option<&'static Device> {
    ALL.iter().find(|d| d.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{detect_hysteresis, extract_metrics};
    use crate::model::{simulate_sweep, PhysicalConstants};

    #[test]
    fn sweeps_are_valid_and_switch() {
        for d in &ALL {
            d.sweep.validate().unwrap();
            let tr = simulate_sweep(&d.params, &PhysicalConstants::default(), &d.sweep).unwrap();
            let m = extract_metrics(&tr).unwrap();
            assert!(m.v_set > 0.0 && m.v_reset < 0.0, "{}", d.name);
            assert!(detect_hysteresis(&tr), "{}", d.name);
        }
    }

    #[test]
    fn lookup() {
        assert_eq!(by_name("ti-sio2").unwrap().stack, "Ti/SiO2");
        assert!(by_name("nope").is_none());
    }
}
