use proptest::prelude::*;
use rramfit::dataset::{generate_dataset, Dataset, GenerationConfig, ParamRanges};
use rramfit::devices::PT_HFO2;
use rramfit::estimator::{EstimateRequest, Fixed, NearestNeighbor};
use rramfit::heuristics::{block1_voltages, block2_slope, block3_area, run_pipeline, Param, PipelineConfig, Stage};
use rramfit::metrics::{extract_in_region, extract_metrics, switching_voltages};
use rramfit::model::simulate_sweep;
use rramfit::search::{adaptive_binary_search, BoundSpec, SearchOptions};
use rramfit::{IVTrace, ModelParams, NvmMetrics, PhysicalConstants, SweepSpec};

fn config() -> PipelineConfig {
    PipelineConfig {
        sweep: PT_HFO2.sweep,
        ..PipelineConfig::default()
    }
}

fn simulate(p: &ModelParams, sweep: &SweepSpec) -> IVTrace {
    simulate_sweep(p, &PhysicalConstants::default(), sweep).unwrap()
}

fn request(m: NvmMetrics, t_ox: f64) -> EstimateRequest {
    EstimateRequest {
        target_metrics: m,
        t_ox,
        trace_path: None,
    }
}

#[test]
fn exact_start_is_a_fixed_point() {
    let cfg = config();
    let p = PT_HFO2.params;
    let tr = simulate(&p, &cfg.sweep);
    let m = extract_metrics(&tr).unwrap();
    let report = run_pipeline(&request(m, cfg.sweep.t_ox), Some(&tr), &Fixed(p), &cfg).unwrap();
    assert!(report.converged);
    assert!(report.searches.is_empty());
    assert_eq!(report.i0_rescale, vec![1.0]);
    assert_eq!(report.final_params, p);
    assert_eq!(report.block2_reinvocations, 0);
}

#[test]
fn blocks_leave_matched_targets_alone() {
    let cfg = config();
    let p = PT_HFO2.params;
    let m = extract_metrics(&simulate(&p, &cfg.sweep)).unwrap();
    let t_ox = cfg.sweep.t_ox;
    let (q, s) = block1_voltages(p, &m, None, t_ox, &cfg).unwrap();
    assert!(s.is_empty());
    assert_eq!((q.gamma0, q.beta), (p.gamma0, p.beta));
    assert!((q.i0 / p.i0 - 1.0).abs() < 1e-12);
    assert_eq!(block2_slope(p, &m, t_ox, &cfg).unwrap().0.v0, p.v0);
    assert_eq!(block3_area(p, &m, t_ox, &cfg).unwrap().0.g0, p.g0);
}

#[test]
fn voltages_respond_monotonically() {
    let sweep = PT_HFO2.sweep;
    let grid = |lo: f64, hi: f64| (0..8).map(move |k| lo + (hi - lo) * k as f64 / 7.0);
    let voltages = |p: ModelParams| switching_voltages(&simulate(&p, &sweep)).unwrap();

    let mut last = f64::INFINITY;
    for gamma0 in grid(18.0, 24.0) {
        if let (_, Ok(r)) = voltages(ModelParams { gamma0, ..PT_HFO2.params }) {
            assert!(r.abs() <= last + 1e-12, "gamma0 {gamma0}: {r}");
            last = r.abs();
        }
    }
    let mut last = 0.0;
    for beta in grid(1.5, 2.1) {
        if let (Ok(s), _) = voltages(ModelParams { beta, ..PT_HFO2.params }) {
            assert!(s >= last - 1e-12, "beta {beta}: {s}");
            last = s;
        }
    }
}

#[test]
fn current_scale_leaves_switching_voltages() {
    let sweep = SweepSpec {
        i_compliance: 1e3,
        ..PT_HFO2.sweep
    };
    let base = switching_voltages(&simulate(&PT_HFO2.params, &sweep)).unwrap();
    for f in [0.1, 0.5, 4.0] {
        let p = ModelParams {
            i0: PT_HFO2.params.i0 * f,
            ..PT_HFO2.params
        };
        let (s, r) = switching_voltages(&simulate(&p, &sweep)).unwrap();
        assert_eq!((s.unwrap(), r.unwrap()), (*base.0.as_ref().unwrap(), *base.1.as_ref().unwrap()));
    }
}

#[test]
fn unreachable_set_voltage_saturates_beta() {
    let cfg = config();
    let p = PT_HFO2.params;
    let mut m = extract_metrics(&simulate(&p, &cfg.sweep)).unwrap();
    m.v_set = 10.0 * cfg.sweep.v_max;
    let (_, searches) = block1_voltages(p, &m, None, cfg.sweep.t_ox, &cfg).unwrap();
    assert!(searches
        .iter()
        .any(|s| s.parameter == Param::Beta && s.outcome.saturated));
}

#[test]
fn dataset_record_reproduces_itself() {
    let sweep = PT_HFO2.sweep;
    let generation = generate_dataset(&ParamRanges::default(), &sweep, &GenerationConfig::new(40, 3)).unwrap();
    let dataset = Dataset::new(generation.records, sweep, PhysicalConstants::default()).unwrap();
    let cfg = config();
    for record in dataset.records.iter().take(3) {
        let estimator = NearestNeighbor { dataset: &dataset, k: 1 };
        let report = run_pipeline(&request(record.metrics, record.t_ox), None, &estimator, &cfg).unwrap();
        assert_eq!(report.estimate.neighbor_ids, vec![record.record_id.clone()]);
        assert_eq!(report.nu0_rescale, 1.0);
        assert!(report.converged, "{:?}", report.final_errors);
        assert_eq!(report.block2_reinvocations, 0);
        for stage in &report.stages {
            let e = stage.errors.unwrap();
            assert!(e.v_set < 1e-9 && e.v_reset < 1e-9 && e.lrs_slope < 1e-6, "{e:?}");
        }
    }
}

#[test]
fn report_is_deterministic_and_stages_are_fresh() {
    let cfg = config();
    let target = extract_metrics(&simulate(&PT_HFO2.params, &cfg.sweep)).unwrap();
    let start = ModelParams {
        gamma0: PT_HFO2.params.gamma0 * 0.9,
        v0: PT_HFO2.params.v0 * 1.2,
        ..PT_HFO2.params
    };
    let req = request(target, cfg.sweep.t_ox);
    let a = run_pipeline(&req, None, &Fixed(start), &cfg).unwrap();
    let b = run_pipeline(&req, None, &Fixed(start), &cfg).unwrap();
    assert_eq!(a, b);

    let order: Vec<Stage> = a.stages.iter().map(|s| s.stage).collect();
    assert_eq!(&order[..4], &[Stage::Estimate, Stage::BlockI, Stage::BlockII, Stage::BlockIII]);
    assert!(order[4..].iter().all(|s| *s == Stage::BlockIIReloop));
    assert_eq!(order.len() - 4, a.block2_reinvocations);
    for s in &a.stages {
        let fresh = extract_in_region(&simulate(&s.params, &cfg.sweep), target.slope_region)
            .ok()
            .map(|x| x.metrics);
        assert_eq!(s.metrics, fresh, "{:?}", s.stage);
    }
}

proptest! {
    #[test]
    fn bisection_hits_reachable_targets(
        slope in 0.1..10.0f64,
        offset in -1.0..1.0f64,
        frac in 0.0..1.0f64,
    ) {
        let bounds = BoundSpec::fixed(0.0, 2.0);
        let f = |x: f64| slope * x + offset;
        let target = f(2.0 * frac);
        let opts = SearchOptions { tol: 1e-9, max_iter: 60, expand: false };
        let out = adaptive_binary_search(|x| Ok(f(x)), &bounds, target, &opts).unwrap();
        prop_assert!(out.converged);
        prop_assert!((out.objective - target).abs() <= 1e-9);
        prop_assert!(out.iterations <= opts.max_iter);
    }

    #[test]
    fn expansion_widens_by_the_factor(target in 2.5..40.0f64) {
        let bounds = BoundSpec::new(0.0, 1.0, 50.0, 1.5);
        let opts = SearchOptions { tol: 1e-6, max_iter: 60, expand: true };
        let out = adaptive_binary_search(Ok, &bounds, target, &opts).unwrap();
        prop_assert!(out.converged);
        prop_assert!(!out.widenings.is_empty());
        for w in out.widenings.windows(2) {
            prop_assert!(w[1] <= 1.5 * w[0] * (1.0 + 1e-12));
        }
        prop_assert!(out.final_hi >= target);
    }
}
