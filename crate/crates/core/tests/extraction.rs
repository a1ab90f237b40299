use rramfit::dataset::{draw_rng, sample_params, ParamRanges};
use rramfit::devices::{ALL, PT_HFO2};
use rramfit::ingest::{rolling_average, to_trace, RawCurve};
use rramfit::metrics::{
    classify_hysteresis, detect_hysteresis, extract_hysteresis_areas, extract_metrics, extract_vreset,
    extract_vset, split_branches, Branch,
};
use rramfit::model::simulate_sweep;
use rramfit::{Error, IVTrace, ModelParams, PhysicalConstants, PolarityOrder, Sample};

fn simulate(p: &ModelParams) -> IVTrace {
    simulate_sweep(p, &PhysicalConstants::default(), &PT_HFO2.sweep).unwrap()
}

fn mirror(tr: &IVTrace) -> IVTrace {
    IVTrace::measured(
        tr.samples
            .iter()
            .map(|s| Sample { v: -s.v, i: -s.i, ..*s })
            .collect(),
    )
}

fn assert_branch_close(a: &Branch, b: &Branch, tol: f64) {
    let scale = a.current.iter().map(|i| i.abs()).fold(0.0, f64::max);
    assert!((a.lo() - b.lo()).abs() < 1e-12 && (a.hi() - b.hi()).abs() < 1e-12);
    for k in 0..=20 {
        let v = a.lo() + (a.hi() - a.lo()) * k as f64 / 20.0;
        assert!((a.current_at(v) - b.current_at(v)).abs() <= tol * scale, "at {v}");
    }
}

#[test]
fn scale_equivariance_on_reference_devices() {
    for d in ALL {
        let tr = simulate_sweep(&d.params, &PhysicalConstants::default(), &d.sweep).unwrap();
        let base = extract_metrics(&tr).unwrap();
        for c in [0.25, 3.0, 10.0] {
            let m = extract_metrics(&tr.scaled_current(c)).unwrap();
            assert_eq!((m.v_set, m.v_reset, m.slope_region), (base.v_set, base.v_reset, base.slope_region), "{}", d.name);
            for (x, y) in [(m.lrs_slope, base.lrs_slope), (m.area_lrs, base.area_lrs), (m.area_hrs, base.area_hrs)] {
                assert!((x / (c * y) - 1.0).abs() < 1e-9, "{} c={c}: {x} vs {y}", d.name);
            }
        }
    }
}

#[test]
fn mirror_swaps_halves() {
    let tr = simulate(&PT_HFO2.params);
    let (orig, mir) = (split_branches(&tr).unwrap(), split_branches(&mirror(&tr)).unwrap());
    assert_branch_close(&mir.positive_forward, &orig.negative_forward.mirrored(), 1e-9);
    assert_branch_close(&mir.positive_return, &orig.negative_return.mirrored(), 1e-9);
    assert_branch_close(&mir.negative_forward, &orig.positive_forward.mirrored(), 1e-9);
    let (a, b) = extract_hysteresis_areas(&tr).unwrap();
    let (ma, mb) = extract_hysteresis_areas(&mirror(&tr)).unwrap();
    assert!((ma / b - 1.0).abs() < 1e-6 && (mb / a - 1.0).abs() < 1e-6);
}

#[test]
fn frozen_device_has_no_events() {
    let p = ModelParams { nu0: 0.0, ..PT_HFO2.params };
    let tr = simulate(&p);
    assert!(matches!(extract_vset(&tr), Err(Error::NoSetEvent)));
    assert!(matches!(extract_vreset(&tr), Err(Error::NoResetEvent)));
    let (a, b) = extract_hysteresis_areas(&tr).unwrap();
    let (lo, hi) = tr.voltage_extent();
    let noise = 1e-5 * tr.max_abs_current() * (hi - lo);
    assert!(a < noise && b < noise, "{a} {b} {noise}");
    assert!(!detect_hysteresis(&tr));
}

#[test]
fn zero_gamma_sets_but_never_resets() {
    let p = ModelParams { gamma0: 0.0, ..PT_HFO2.params };
    let tr = simulate(&p);
    assert!(matches!(extract_vreset(&tr), Err(Error::NoResetEvent)));
    assert!(!detect_hysteresis(&tr));
}

#[test]
fn reference_trace_is_hysteretic_with_lrs_after_set() {
    let tr = simulate(&PT_HFO2.params);
    let s = split_branches(&tr).unwrap();
    assert!(s.positive_return.current_at(0.4).abs() > s.positive_forward.current_at(0.4).abs());
    assert!(detect_hysteresis(&tr));
}

#[test]
fn extraction_is_total_over_random_draws() {
    let ranges = ParamRanges::default();
    let mut accepted = 0;
    for k in 0..1000 {
        let (p, t_ox) = sample_params(&ranges, &mut draw_rng(7, k));
        let sweep = PT_HFO2.sweep.with_t_ox(t_ox);
        let tr = simulate_sweep(&p, &PhysicalConstants::default(), &sweep).unwrap();
        if let Ok(m) = classify_hysteresis(&tr) {
            m.validate().unwrap();
            assert_eq!(extract_metrics(&tr).unwrap(), m);
            accepted += 1;
        }
    }
    assert!(accepted > 0);
}

#[test]
fn ingested_trace_matches_simulation() {
    let tr = simulate(&PT_HFO2.params);
    let pairs: Vec<(f64, f64)> = tr.samples.iter().map(|s| (s.v, s.i)).collect();
    let curve = RawCurve::from_pairs(&pairs, "sim").unwrap();
    let back = to_trace(&rolling_average(&curve, 1).unwrap(), PolarityOrder::PositiveFirst).unwrap();
    let (a, b) = (extract_metrics(&tr).unwrap(), extract_metrics(&back).unwrap());
    assert!((a.v_set / b.v_set - 1.0).abs() < 0.01, "{a:?} {b:?}");
    assert!((a.v_reset / b.v_reset - 1.0).abs() < 0.01, "{a:?} {b:?}");
    assert!((a.area_lrs / b.area_lrs - 1.0).abs() < 0.01, "{a:?} {b:?}");
}
