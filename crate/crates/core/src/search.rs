//! Bounded bisection with saturation detection and optional bound widening.
//!
//! One search tunes one parameter against one scalar metric. The local
//! direction of the response is read off the endpoint probes, so the
//! objective may be increasing or decreasing. When the endpoints do not
//! bracket the target, a 9-point scan looks for a sub-bracket before giving
//! up; if none exists the best probe is returned and flagged saturated when
//! it sits on a bound.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evenly spaced probes (endpoints included) used when the endpoints do not
/// bracket the target.
pub const SCAN_POINTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub lo: f64,
    pub hi: f64,
    /// Ceiling for `hi` under bound widening.
    pub hard_cap: f64,
    /// Multiplier applied to `hi` per widening.
    pub expansion_factor: f64,
}

impl BoundSpec {
    pub const fn new(lo: f64, hi: f64, hard_cap: f64, expansion_factor: f64) -> Self {
        BoundSpec {
            lo,
            hi,
            hard_cap,
            expansion_factor,
        }
    }

    /// Bounds without room to widen.
    pub const fn fixed(lo: f64, hi: f64) -> Self {
        BoundSpec::new(lo, hi, hi, 1.5)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lo, self.hi, self.hard_cap, self.expansion_factor]
            .iter()
            .all(|x| x.is_finite());
        if !finite || !(self.lo < self.hi && self.hi <= self.hard_cap) || self.expansion_factor <= 1.0 {
            return Err(Error::InvalidBounds(format!(
                "need lo < hi <= hard_cap and expansion_factor > 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Convergence threshold on `|objective(x) - target|`.
    pub tol: f64,
    /// Bisection budget shared by all widening retries.
    pub max_iter: usize,
    /// Widen `hi` toward `hard_cap` when saturated at the upper bound.
    pub expand: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub value: f64,
    pub objective: f64,
    pub converged: bool,
    pub saturated: bool,
    /// Bisection steps taken.
    pub iterations: usize,
    /// Distinct objective evaluations.
    pub evaluations: usize,
    /// Bounds in force when the search ended.
    pub final_lo: f64,
    pub final_hi: f64,
    /// Successive values of `hi` after each widening.
    pub widenings: Vec<f64>,
}

struct Memo<F> {
    objective: F,
    cache: HashMap<u64, f64>,
}

impl<F: FnMut(f64) -> Result<f64>> Memo<F> {
    fn eval(&mut self, x: f64) -> Result<f64> {
        if let Some(&y) = self.cache.get(&x.to_bits()) {
            return Ok(y);
        }
        let y = (self.objective)(x)?;
        if !y.is_finite() {
            return Err(Error::NonFiniteObjective { x });
        }
        self.cache.insert(x.to_bits(), y);
        Ok(y)
    }
}

enum Attempt {
    Converged(f64, f64),
    Bracket(f64, f64, f64),
    Best { x: f64, y: f64, at_lo: bool, at_hi: bool },
}

/// Finds `x` in `[lo, hi]` with `|objective(x) - target| <= tol`.
///
/// Errors with [`Error::NonFiniteObjective`] on any non-finite probe and
/// propagates objective errors unchanged.
pub fn adaptive_binary_search<F>(
    objective: F,
    bounds: &BoundSpec,
    target: f64,
    opts: &SearchOptions,
) -> Result<SearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    bounds.validate()?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidConfig(
            "search needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let mut memo = Memo {
        objective,
        cache: HashMap::new(),
    };
    let (lo, mut hi) = (bounds.lo, bounds.hi);
    let mut widenings = Vec::new();
    let mut iterations = 0usize;

    loop {
        let outcome = |value, objective, converged, saturated, iterations, memo: &Memo<F>, hi, widenings| {
            SearchOutcome {
                value,
                objective,
                converged,
                saturated,
                iterations,
                evaluations: memo.cache.len(),
                final_lo: lo,
                final_hi: hi,
                widenings,
            }
        };
        match probe(&mut memo, lo, hi, target, opts.tol)? {
            Attempt::Converged(x, y) => {
                return Ok(outcome(x, y, true, false, iterations, &memo, hi, widenings));
            }
            Attempt::Bracket(a, b, fa) => {
                let (x, y, converged) =
                    bisect(&mut memo, a, b, fa, target, opts, &mut iterations)?;
                return Ok(outcome(x, y, converged, false, iterations, &memo, hi, widenings));
            }
            Attempt::Best { x, y, at_lo, at_hi } => {
                if at_hi && opts.expand && hi < bounds.hard_cap {
                    hi = (hi * bounds.expansion_factor).min(bounds.hard_cap);
                    widenings.push(hi);
                    continue;
                }
                let saturated = at_lo || at_hi;
                return Ok(outcome(x, y, false, saturated, iterations, &memo, hi, widenings));
            }
        }
    }
}

fn probe<F: FnMut(f64) -> Result<f64>>(
    memo: &mut Memo<F>,
    lo: f64,
    hi: f64,
    target: f64,
    tol: f64,
) -> Result<Attempt> {
    let f_lo = memo.eval(lo)?;
    let f_hi = memo.eval(hi)?;
    for (x, y) in [(lo, f_lo), (hi, f_hi)] {
        if (y - target).abs() <= tol {
            return Ok(Attempt::Converged(x, y));
        }
    }
    if (f_lo - target).signum() != (f_hi - target).signum() {
        return Ok(Attempt::Bracket(lo, hi, f_lo));
    }

    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..SCAN_POINTS)
        .map(|k| if k == SCAN_POINTS - 1 { hi } else { lo + step * k as f64 })
        .collect();
    let mut ys = Vec::with_capacity(SCAN_POINTS);
    for &x in &xs {
        let y = memo.eval(x)?;
        if (y - target).abs() <= tol {
            return Ok(Attempt::Converged(x, y));
        }
        ys.push(y);
    }
    for k in 0..SCAN_POINTS - 1 {
        if (ys[k] - target).signum() != (ys[k + 1] - target).signum() {
            return Ok(Attempt::Bracket(xs[k], xs[k + 1], ys[k]));
        }
    }
    // no bracket anywhere: closest probe, ties toward the lower bound
    let mut best = 0;
    for k in 1..SCAN_POINTS {
        if (ys[k] - target).abs() < (ys[best] - target).abs() {
            best = k;
        }
    }
    Ok(Attempt::Best {
        x: xs[best],
        y: ys[best],
        at_lo: best == 0,
        at_hi: best == SCAN_POINTS - 1,
    })
}

fn bisect<F: FnMut(f64) -> Result<f64>>(
    memo: &mut Memo<F>,
    mut a: f64,
    mut b: f64,
    f_a: f64,
    target: f64,
    opts: &SearchOptions,
    iterations: &mut usize,
) -> Result<(f64, f64, bool)> {
    let side_a = (f_a - target).signum();
    let f_b = memo.eval(b)?;
    let (mut best_x, mut best_y) = if (f_a - target).abs() <= (f_b - target).abs() {
        (a, f_a)
    } else {
        (b, f_b)
    };
    while *iterations < opts.max_iter {
        let mid = 0.5 * (a + b);
        if mid <= a.min(b) || mid >= a.max(b) {
            break;
        }
        let y = memo.eval(mid)?;
        *iterations += 1;
        if (y - target).abs() < (best_y - target).abs() {
            best_x = mid;
            best_y = y;
        }
        if (y - target).abs() <= opts.tol {
            return Ok((mid, y, true));
        }
        if (y - target).signum() == side_a {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((best_x, best_y, false))
}
