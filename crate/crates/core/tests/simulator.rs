use proptest::prelude::*;
use rramfit::devices::PT_HFO2;
use rramfit::metrics::extract_metrics;
use rramfit::model::{device_current, gap_velocity, simulate_sweep};
use rramfit::{ModelParams, PhysicalConstants, SweepSpec};

fn params() -> impl Strategy<Value = ModelParams> {
    (
        1.5e-10..2.5e-10f64,
        0.15..0.4f64,
        -3.0..1.3f64,
        0.0..2.1f64,
        0.0..24.0f64,
        -6.0..-2.0f64,
    )
        .prop_map(|(g0, v0, log_nu0, beta, gamma0, log_i0)| ModelParams {
            i0: 10f64.powf(log_i0),
            g0,
            v0,
            nu0: 10f64.powf(log_nu0),
            beta,
            gamma0,
        })
}

fn sweep() -> impl Strategy<Value = SweepSpec> {
    (5e-9..20e-9f64, -6.0..-1.0f64, 0.1e-9..0.5e-9f64).prop_map(|(t_ox, log_icc, g_min)| SweepSpec {
        t_ox,
        i_compliance: 10f64.powf(log_icc),
        g_min,
        ..SweepSpec::default()
    })
}

proptest! {
    #[test]
    fn zero_bias_gives_zero_current(g in 0.1e-9..2e-9f64, p in params()) {
        prop_assert_eq!(device_current(g, 0.0, &p), 0.0);
        prop_assert_eq!(gap_velocity(g, 0.0, &p, &PhysicalConstants::default(), 1e-8), 0.0);
    }

    #[test]
    fn current_is_odd_in_voltage(g in 0.1e-9..2e-9f64, v in -6.0..6.0f64, p in params()) {
        let (a, b) = (device_current(g, v, &p), device_current(g, -v, &p));
        prop_assert!((a + b).abs() <= f64::EPSILON * a.abs());
    }

    #[test]
    fn velocity_is_odd_in_voltage(g in 0.1e-9..2e-9f64, v in 0.01..4.0f64, p in params()) {
        let c = PhysicalConstants::default();
        let (a, b) = (gap_velocity(g, v, &p, &c, 1e-8), gap_velocity(g, -v, &p, &c, 1e-8));
        prop_assert!((a + b).abs() <= f64::EPSILON * a.abs());
        prop_assert!(a <= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clamps_hold_and_gap_is_monotone_per_polarity(p in params(), s in sweep()) {
        let tr = simulate_sweep(&p, &PhysicalConstants::default(), &s).unwrap();
        tr.validate().unwrap();
        for w in tr.samples.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(a.i.abs() <= s.i_compliance);
            let (ga, gb) = (a.g.unwrap(), b.g.unwrap());
            prop_assert!(s.g_min <= ga && ga <= s.g_max);
            if a.v > 0.0 {
                prop_assert!(gb <= ga);
            } else if a.v < 0.0 {
                prop_assert!(gb >= ga);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic(p in params(), s in sweep()) {
        let c = PhysicalConstants::default();
        prop_assert_eq!(simulate_sweep(&p, &c, &s).unwrap(), simulate_sweep(&p, &c, &s).unwrap());
    }
}

#[test]
fn trace_starts_and_ends_at_zero_bias() {
    let tr = simulate_sweep(&PT_HFO2.params, &PhysicalConstants::default(), &PT_HFO2.sweep).unwrap();
    let (first, last) = (tr.samples[0], tr.samples[tr.len() - 1]);
    assert_eq!((first.v, first.i), (0.0, 0.0));
    assert_eq!((last.v, last.i), (0.0, 0.0));
    assert_eq!(tr.metadata, Some(PT_HFO2.sweep));
}

#[test]
fn halving_dt_keeps_switching_voltages() {
    let c = PhysicalConstants::default();
    let base = PT_HFO2.sweep;
    let coarse = extract_metrics(&simulate_sweep(&PT_HFO2.params, &c, &base).unwrap()).unwrap();
    let fine = extract_metrics(&simulate_sweep(&PT_HFO2.params, &c, &base.with_dt(base.dt / 2.0)).unwrap()).unwrap();
    assert!((fine.v_set / coarse.v_set - 1.0).abs() < 0.02, "{coarse:?} {fine:?}");
    assert!((fine.v_reset / coarse.v_reset - 1.0).abs() < 0.02, "{coarse:?} {fine:?}");
}
