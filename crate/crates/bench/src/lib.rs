//! Fixtures shared by the benchmarks.

use rramfit::devices::Device;
use rramfit::model::simulate_sweep;
use rramfit::{IVTrace, PhysicalConstants};

pub fn reference_trace(d: &Device) -> IVTrace {
    simulate_sweep(&d.params, &PhysicalConstants::default(), &d.sweep).expect("calibrated sweep simulates")
}
