//! Synthetic parameter-sweep dataset: random draws, simulation, hysteresis
//! pruning, persistence, and the standardized metric signatures used by the
//! nearest-neighbor estimator.
//!
//! Each candidate draw `k` uses its own ChaCha8 stream (`seed`, stream `k`),
//! and candidates are accepted strictly in index order. The accepted set is
//! therefore independent of thread count and scheduling.
//!
//! On disk a dataset is a directory holding `records.jsonl` (one
//! [`DatasetRecord`] per line), `dataset.json` (standardization stats, sweep,
//! constants, ranges, generation report) and optionally `traces/<id>.csv`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{classify_hysteresis, NvmMetrics, PruneReason};
use crate::model::{simulate_sweep, ModelParams, PhysicalConstants, SweepSpec, DATASET_I0};
use crate::trace::IVTrace;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SIDECAR_FILE: &str = "dataset.json";
pub const TRACES_DIR: &str = "traces";
/// Signature length: v_set, v_reset, log10 slope, log10 area_lrs,
/// log10 area_hrs, t_ox (nm).
pub const SIGNATURE_LEN: usize = 6;
/// Candidates simulated per parallel batch. Fixed so that attempts and
/// acceptance do not depend on the thread count.
pub const BATCH: usize = 256;
/// Generation stops below this acceptance ratio once the attempt cap is hit.
pub const MIN_YIELD: f64 = 0.01;
/// Areas are floored here before taking log10.
const AREA_LOG_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
}

impl Range {
    pub const fn linear(lo: f64, hi: f64) -> Self {
        Range {
            lo,
            hi,
            scale: Scale::Linear,
        }
    }

    pub const fn log(lo: f64, hi: f64) -> Self {
        Range {
            lo,
            hi,
            scale: Scale::Log,
        }
    }

    pub const fn pinned(x: f64) -> Self {
        Range::linear(x, x)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidRanges(format!("{name}: {msg}")));
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return fail("bounds must be finite".into());
        }
        if self.lo > self.hi {
            return fail(format!("lo {} > hi {}", self.lo, self.hi));
        }
        if self.scale == Scale::Log && self.lo < self.hi && self.lo <= 0.0 {
            return fail("log scale needs lo > 0".into());
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if self.lo == self.hi {
            return self.lo;
        }
        let x = match self.scale {
            Scale::Linear => self.lo + u * (self.hi - self.lo),
            Scale::Log => (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp(),
        };
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Sampling ranges for the five drawn parameters and the oxide thickness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    pub g0: Range,
    pub v0: Range,
    pub nu0: Range,
    pub beta: Range,
    pub gamma0: Range,
    pub t_ox: Range,
    /// Fixed current scale (A).
    pub i0: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            g0: Range::linear(1.5e-10, 2.5e-10),
            v0: Range::linear(0.15, 0.4),
            nu0: Range::log(1e-3, 20.0),
            beta: Range::linear(0.0, 2.1),
            gamma0: Range::linear(0.0, 24.0),
            t_ox: Range::linear(5e-9, 20e-9),
            i0: DATASET_I0,
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        self.g0.validate("g0")?;
        self.v0.validate("v0")?;
        self.nu0.validate("nu0")?;
        self.beta.validate("beta")?;
        self.gamma0.validate("gamma0")?;
        self.t_ox.validate("t_ox")?;
        if !(self.i0.is_finite() && self.i0 > 0.0) {
            return Err(Error::InvalidRanges("i0 must be positive".into()));
        }
        Ok(())
    }

    /// Every value ranges pinned to one parameter set.
    pub fn pinned(params: &ModelParams, t_ox: f64) -> Self {
        ParamRanges {
            g0: Range::pinned(params.g0),
            v0: Range::pinned(params.v0),
            nu0: Range::pinned(params.nu0),
            beta: Range::pinned(params.beta),
            gamma0: Range::pinned(params.gamma0),
            t_ox: Range::pinned(t_ox),
            i0: params.i0,
        }
    }
}

/// RNG for candidate `index` under `seed`.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One independent draw per parameter, in the order g0, v0, nu0, beta,
/// gamma0, t_ox. Returns `(params, t_ox)`.
pub fn sample_params<R: Rng>(ranges: &ParamRanges, rng: &mut R) -> (ModelParams, f64) {
    let g0 = ranges.g0.sample(rng);
    let v0 = ranges.v0.sample(rng);
    let nu0 = ranges.nu0.sample(rng);
    let beta = ranges.beta.sample(rng);
    let gamma0 = ranges.gamma0.sample(rng);
    let t_ox = ranges.t_ox.sample(rng);
    (
        ModelParams {
            i0: ranges.i0,
            g0,
            v0,
            nu0,
            beta,
            gamma0,
        },
        t_ox,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub record_id: String,
    pub params: ModelParams,
    /// Oxide thickness (m).
    pub t_ox: f64,
    pub metrics: NvmMetrics,
    /// Trace CSV relative to the dataset directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

/// Hex SHA-256 (first 16 bytes) of the canonical JSON of `(params, t_ox, sweep)`.
pub fn record_id(params: &ModelParams, t_ox: f64, sweep: &SweepSpec) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        params: &'a ModelParams,
        t_ox: f64,
        sweep: &'a SweepSpec,
    }
    let bytes = serde_json::to_vec(&Key { params, t_ox, sweep }).expect("plain struct serializes");
    let digest = Sha256::digest(&bytes);
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub n_target: usize,
    pub seed: u64,
    pub attempts: usize,
    pub accepted: usize,
    pub acceptance_ratio: f64,
    pub prune_reasons: BTreeMap<PruneReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_target: usize,
    pub seed: u64,
    /// Candidate cap; defaults to `100 * n_target`.
    pub max_attempts: Option<usize>,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Keep simulated traces of accepted records.
    pub keep_traces: bool,
    pub constants: PhysicalConstants,
}

impl GenerationConfig {
    pub fn new(n_target: usize, seed: u64) -> Self {
        GenerationConfig {
            n_target,
            seed,
            max_attempts: None,
            threads: None,
            keep_traces: false,
            constants: PhysicalConstants::default(),
        }
    }

    fn attempt_cap(&self) -> usize {
        self.max_attempts.unwrap_or(self.n_target.saturating_mul(100))
    }
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub records: Vec<DatasetRecord>,
    /// Traces aligned with `records` when `keep_traces` was set.
    pub traces: Option<Vec<IVTrace>>,
    pub report: GenerationReport,
}

type Candidate = std::result::Result<(DatasetRecord, IVTrace), PruneReason>;

fn evaluate_candidate(
    index: usize,
    ranges: &ParamRanges,
    sweep: &SweepSpec,
    cfg: &GenerationConfig,
) -> Candidate {
    let mut rng = draw_rng(cfg.seed, index as u64);
    let (params, t_ox) = sample_params(ranges, &mut rng);
    let spec = sweep.with_t_ox(t_ox);
    let trace = simulate_sweep(&params, &cfg.constants, &spec)
        .map_err(|_| PruneReason::SimulationFailed)?;
    let metrics = classify_hysteresis(&trace)?;
    let record = DatasetRecord {
        record_id: record_id(&params, t_ox, sweep),
        params,
        t_ox,
        metrics,
        trace_path: None,
    };
    Ok((record, trace))
}

/// Draws, simulates and prunes candidates until `n_target` are accepted or
/// the attempt cap is reached.
///
/// Errors with [`Error::YieldTooLow`] when the cap is reached with an
/// acceptance ratio below 1%.
pub fn generate_dataset(
    ranges: &ParamRanges,
    sweep: &SweepSpec,
    cfg: &GenerationConfig,
) -> Result<Generation> {
    if cfg.n_target == 0 {
        return Err(Error::InvalidConfig("n_target must be at least 1".into()));
    }
    ranges.validate()?;
    sweep.validate()?;
    cfg.constants.validate()?;

    let run = || generate_inner(ranges, sweep, cfg);
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

fn generate_inner(ranges: &ParamRanges, sweep: &SweepSpec, cfg: &GenerationConfig) -> Result<Generation> {
    let cap = cfg.attempt_cap().max(1);
    let mut records = Vec::with_capacity(cfg.n_target);
    let mut traces = Vec::new();
    let mut prune_reasons = BTreeMap::new();
    let mut attempts = 0usize;

    'outer: while attempts < cap && records.len() < cfg.n_target {
        let end = (attempts + BATCH).min(cap);
        let batch: Vec<Candidate> = (attempts..end)
            .into_par_iter()
            .map(|k| evaluate_candidate(k, ranges, sweep, cfg))
            .collect();
        for candidate in batch {
            attempts += 1;
            match candidate {
                Ok((record, trace)) => {
                    records.push(record);
                    if cfg.keep_traces {
                        traces.push(trace);
                    }
                    if records.len() == cfg.n_target {
                        break 'outer;
                    }
                }
                Err(reason) => *prune_reasons.entry(reason).or_insert(0) += 1,
            }
        }
    }

    let ratio = records.len() as f64 / attempts as f64;
    if records.len() < cfg.n_target && ratio < MIN_YIELD {
        return Err(Error::YieldTooLow { attempts, ratio });
    }
    let report = GenerationReport {
        n_target: cfg.n_target,
        seed: cfg.seed,
        attempts,
        accepted: records.len(),
        acceptance_ratio: ratio,
        prune_reasons,
    };
    Ok(Generation {
        records,
        traces: cfg.keep_traces.then_some(traces),
        report,
    })
}

/// Unstandardized signature of a metric set.
pub fn raw_signature(metrics: &NvmMetrics, t_ox: f64) -> [f64; SIGNATURE_LEN] {
    [
        metrics.v_set,
        metrics.v_reset,
        metrics.lrs_slope.max(AREA_LOG_FLOOR).log10(),
        metrics.area_lrs.max(AREA_LOG_FLOOR).log10(),
        metrics.area_hrs.max(AREA_LOG_FLOOR).log10(),
        t_ox * 1e9,
    ]
}

/// Per-component mean and population standard deviation of the raw
/// signatures of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; SIGNATURE_LEN],
    pub std: [f64; SIGNATURE_LEN],
}

impl Standardization {
    pub fn fit(records: &[DatasetRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = records.len() as f64;
        let raws: Vec<_> = records.iter().map(|r| raw_signature(&r.metrics, r.t_ox)).collect();
        let mut mean = [0.0; SIGNATURE_LEN];
        let mut std = [0.0; SIGNATURE_LEN];
        for j in 0..SIGNATURE_LEN {
            mean[j] = raws.iter().map(|s| s[j]).sum::<f64>() / n;
            let var = raws.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / n;
            // a constant component carries no distance information
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Standardization { mean, std })
    }

    pub fn signature(&self, metrics: &NvmMetrics, t_ox: f64) -> [f64; SIGNATURE_LEN] {
        let raw = raw_signature(metrics, t_ox);
        std::array::from_fn(|j| (raw[j] - self.mean[j]) / self.std[j])
    }
}

/// Records plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub standardization: Standardization,
    /// Sweep used for every record (t_ox replaced per record).
    pub sweep: SweepSpec,
    pub constants: PhysicalConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    standardization: Standardization,
    sweep: SweepSpec,
    constants: PhysicalConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ranges: Option<ParamRanges>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<GenerationReport>,
}

impl Dataset {
    pub fn new(records: Vec<DatasetRecord>, sweep: SweepSpec, constants: PhysicalConstants) -> Result<Self> {
        let standardization = Standardization::fit(&records)?;
        Ok(Dataset {
            records,
            standardization,
            sweep,
            constants,
        })
    }

    pub fn signature(&self, metrics: &NvmMetrics, t_ox: f64) -> [f64; SIGNATURE_LEN] {
        self.standardization.signature(metrics, t_ox)
    }

    /// Writes the dataset directory. With `traces`, each record gets a CSV
    /// under `traces/` and its `trace_path` set accordingly.
    pub fn save(
        &mut self,
        dir: &Path,
        traces: Option<&[IVTrace]>,
        ranges: Option<&ParamRanges>,
        report: Option<&GenerationReport>,
    ) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(traces) = traces {
            if traces.len() != self.records.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} traces for {} records",
                    traces.len(),
                    self.records.len()
                )));
            }
            let tdir = dir.join(TRACES_DIR);
            std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
            for (record, trace) in self.records.iter_mut().zip(traces) {
                let rel = format!("{TRACES_DIR}/{}.csv", record.record_id);
                write_atomic(&dir.join(&rel), trace.to_csv().as_bytes())?;
                record.trace_path = Some(rel);
            }
        }
        let mut lines = Vec::new();
        for record in &self.records {
            serde_json::to_writer(&mut lines, record)?;
            lines.push(b'\n');
        }
        write_atomic(&dir.join(RECORDS_FILE), &lines)?;
        let sidecar = Sidecar {
            standardization: self.standardization,
            sweep: self.sweep,
            constants: self.constants,
            ranges: ranges.copied(),
            report: report.cloned(),
        };
        write_atomic(&dir.join(SIDECAR_FILE), &serde_json::to_vec_pretty(&sidecar)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let side_path = dir.join(SIDECAR_FILE);
        let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;

        let rec_path = dir.join(RECORDS_FILE);
        let file = std::fs::File::open(&rec_path).map_err(|e| Error::io(&rec_path, e))?;
        let mut records = Vec::new();
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&rec_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: rec_path.clone(),
                line: k as u64 + 1,
                msg: e.to_string(),
            })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset {
            records,
            standardization: sidecar.standardization,
            sweep: sidecar.sweep,
            constants: sidecar.constants,
        })
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map_or("out".into(), |n| n.to_string_lossy().into_owned());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
