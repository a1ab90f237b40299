//! Searches the sweep settings under which each reference parameter set
//! reproduces its published metrics, by differential evolution over
//! `(log10 t_ox, log10 ramp, v_max, v_min, log10 i_compliance, g_max nm, g_min nm)`.
//!
//! `cargo run --release --example calibrate_sweeps -- [device] [seed]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rramfit::devices::{Device, ALL, STEPS_PER_CYCLE};
use rramfit::metrics::classify_hysteresis;
use rramfit::model::simulate_sweep;
use rramfit::{IVTrace, NvmMetrics, PhysicalConstants, PolarityOrder, SweepSpec};

const BOUNDS: [(f64, f64); 7] = [
    (-8.301, -7.699),
    (-8.0, 10.0),
    (0.3, 6.0),
    (-6.0, -0.3),
    (-5.0, 1.0),
    (1.0, 2.0),
    (0.1, 0.5),
];
const POP: usize = 120;
const GENERATIONS: usize = 200;
const INTERIOR: f64 = 0.95;

fn spec(x: &[f64; 7]) -> SweepSpec {
    let ramp_rate = 10f64.powf(x[1]);
    SweepSpec {
        v_max: x[2],
        v_min: x[3],
        dt: 2.0 * (x[2] - x[3]) / ramp_rate / STEPS_PER_CYCLE,
        ramp_rate,
        polarity_order: PolarityOrder::PositiveFirst,
        i_compliance: 10f64.powf(x[4]),
        g_init: x[5] * 1e-9,
        g_min: x[6] * 1e-9,
        g_max: x[5] * 1e-9,
        t_ox: 10f64.powf(x[0]),
    }
}

/// The gap closes by a quarter of its range during the positive half and
/// reopens by as much by the end of the sweep.
fn full_cycle(tr: &IVTrace, s: &SweepSpec) -> bool {
    let quarter = 0.25 * (s.g_max - s.g_min);
    let apex = (0..tr.len()).max_by(|&a, &b| tr.samples[a].v.total_cmp(&tr.samples[b].v)).unwrap_or(0);
    let (closed, end) = (tr.samples[apex].g, tr.samples[tr.len() - 1].g);
    matches!((closed, end), (Some(c), Some(e)) if c < s.g_max - quarter && e > c + quarter)
}

fn errors(m: &NvmMetrics, r: &NvmMetrics) -> [f64; 5] {
    [
        m.v_set / r.v_set - 1.0,
        m.v_reset / r.v_reset - 1.0,
        m.lrs_slope / r.lrs_slope - 1.0,
        m.area_lrs / r.area_lrs - 1.0,
        m.area_hrs / r.area_hrs - 1.0,
    ]
}

fn loss(d: &Device, x: &[f64; 7]) -> f64 {
    let s = spec(x);
    let Ok(tr) = simulate_sweep(&d.params, &PhysicalConstants::default(), &s) else {
        return 1e3;
    };
    let Ok(m) = classify_hysteresis(&tr) else {
        return 1e2;
    };
    if !full_cycle(&tr, &s) {
        return 50.0;
    }
    let e = errors(&m, &d.published.as_nvm());
    let mut pen = 0.0;
    for frac in [m.v_set / s.v_max, m.v_reset / s.v_min] {
        if frac > INTERIOR {
            pen += 5.0 + 100.0 * (frac - INTERIOR);
        }
    }
    let worst = e.iter().fold(0.0f64, |a, q| a.max(q.abs()));
    pen + e.iter().map(|q| q.abs().ln_1p().powi(2)).sum::<f64>() + 0.1 * (worst - 0.15).max(0.0)
}

fn calibrate(d: &Device, seed: u64) -> ([f64; 7], f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop: Vec<[f64; 7]> = (0..POP)
        .map(|_| std::array::from_fn(|j| rng.gen_range(BOUNDS[j].0..BOUNDS[j].1)))
        .collect();
    let mut fit: Vec<f64> = pop.iter().map(|x| loss(d, x)).collect();
    for _ in 0..GENERATIONS {
        for i in 0..POP {
            let pick = |rng: &mut ChaCha8Rng| loop {
                let k = rng.gen_range(0..POP);
                if k != i {
                    break k;
                }
            };
            let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
            let f = rng.gen_range(0.5..1.0);
            let forced = rng.gen_range(0..7);
            let trial: [f64; 7] = std::array::from_fn(|j| {
                if j == forced || rng.gen::<f64>() < 0.9 {
                    (pop[a][j] + f * (pop[b][j] - pop[c][j])).clamp(BOUNDS[j].0, BOUNDS[j].1)
                } else {
                    pop[i][j]
                }
            });
            let y = loss(d, &trial);
            if y <= fit[i] {
                pop[i] = trial;
                fit[i] = y;
            }
        }
    }
    let best = (0..POP).min_by(|&a, &b| fit[a].total_cmp(&fit[b])).unwrap();
    (pop[best], fit[best])
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    for d in ALL.iter().filter(|d| args.first().is_none_or(|n| n == d.name)) {
        let (x, y) = calibrate(d, seed);
        let s = spec(&x);
        let tr = simulate_sweep(&d.params, &PhysicalConstants::default(), &s).unwrap();
        let m = classify_hysteresis(&tr).map_err(|r| format!("{r:?}"));
        println!("{} loss {y:.4}", d.name);
        println!(
            "  sweep({:e}, {:e}, {:.6}, {:.6}, {:e}, {:.6}, {:.6})",
            s.t_ox, s.ramp_rate, s.v_max, s.v_min, s.i_compliance, x[5], x[6]
        );
        if let Ok(m) = m {
            let e = errors(&m, &d.published.as_nvm()).map(|q| (q * 1000.0).round() / 10.0);
            println!("  {m:?}\n  errors % {e:?}");
        }
    }
}
