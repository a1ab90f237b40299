//! Initial parameter estimates: nearest-neighbor lookup over dataset
//! signatures, or an external process speaking line-delimited JSON.
//!
//! External protocol: the connector is spawned once per request, receives a
//! single [`EstimateRequest`] JSON line on stdin (stdin is then closed) and
//! must print a single [`EstimateResponse`] JSON line on stdout and exit 0.
//! Field-for-field schemas are in `docs/schemas.md`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{mpsc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::NvmMetrics;
use crate::model::ModelParams;

pub const DEFAULT_K: usize = 5;
pub const CONNECTOR_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRequest {
    pub target_metrics: NvmMetrics,
    /// Oxide thickness (m).
    pub t_ox: f64,
    /// Raw curve for estimators that consume traces or images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

impl EstimateRequest {
    pub fn validate(&self) -> Result<()> {
        self.target_metrics.validate()?;
        if !(self.t_ox.is_finite() && self.t_ox > 0.0) {
            return Err(Error::InvalidConfig(format!("t_ox = {} must be positive", self.t_ox)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateSource {
    NearestNeighbor,
    External,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub params: ModelParams,
    pub source: EstimateSource,
    #[serde(default)]
    pub neighbor_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

pub trait Estimator {
    fn estimate(&self, request: &EstimateRequest) -> Result<EstimateResponse>;

    /// Ramp rate (V/s) the estimates refer to, when known. The pipeline
    /// rescales `nu0` when fitting at a different rate.
    fn ramp_rate(&self) -> Option<f64> {
        None
    }
}

/// Component-wise median of the `k` records nearest to the request
/// signature.
pub struct NearestNeighbor<'a> {
    pub dataset: &'a Dataset,
    pub k: usize,
}

impl Estimator for NearestNeighbor<'_> {
    fn estimate(&self, request: &EstimateRequest) -> Result<EstimateResponse> {
        nearest_neighbor_estimate(self.dataset, request, self.k)
    }

    fn ramp_rate(&self) -> Option<f64> {
        Some(self.dataset.sweep.ramp_rate)
    }
}

/// Always returns the same parameters.
pub struct Fixed(pub ModelParams);

impl Estimator for Fixed {
    fn estimate(&self, _request: &EstimateRequest) -> Result<EstimateResponse> {
        self.0.validate()?;
        Ok(EstimateResponse {
            params: self.0,
            source: EstimateSource::Fixed,
            neighbor_ids: Vec::new(),
            confidence: None,
        })
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn nearest_neighbor_estimate(
    dataset: &Dataset,
    request: &EstimateRequest,
    k: usize,
) -> Result<EstimateResponse> {
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    request.validate()?;
    let target = dataset.signature(&request.target_metrics, request.t_ox);
    let mut ranked: Vec<(f64, usize)> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let sig = dataset.signature(&r.metrics, r.t_ox);
            let d2: f64 = sig.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            (d2, idx)
        })
        .collect();
    let records = &dataset.records;
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| records[a.1].record_id.cmp(&records[b.1].record_id))
    });
    let chosen: Vec<usize> = ranked.iter().take(k).map(|&(_, idx)| idx).collect();

    // gamma0 and beta rescaled to the requested t_ox
    let column = |f: fn(&ModelParams) -> f64, field: bool| {
        let mut xs: Vec<f64> = chosen
            .iter()
            .map(|&i| {
                let r = &records[i];
                let scale = if field { request.t_ox / r.t_ox } else { 1.0 };
                f(&r.params) * scale
            })
            .collect();
        median(&mut xs)
    };
    let params = ModelParams {
        i0: column(|p| p.i0, false),
        g0: column(|p| p.g0, false),
        v0: column(|p| p.v0, false),
        nu0: column(|p| p.nu0, false),
        beta: column(|p| p.beta, true),
        gamma0: column(|p| p.gamma0, true),
    };
    let nearest = ranked[0].0.sqrt();
    Ok(EstimateResponse {
        params,
        source: EstimateSource::NearestNeighbor,
        neighbor_ids: chosen.iter().map(|&i| records[i].record_id.clone()).collect(),
        confidence: Some(1.0 / (1.0 + nearest)),
    })
}

/// External estimator process. Calls through one instance are serialized.
pub struct Connector {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
    lock: Mutex<()>,
}

impl Connector {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Connector {
            program: program.into(),
            args,
            timeout: CONNECTOR_TIMEOUT,
            lock: Mutex::new(()),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Parses `"program arg1 arg2"` split on whitespace.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let mut parts = spec.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty connector spec".into()))?;
        Ok(Connector::new(program, parts.map(str::to_string).collect()))
    }
}

impl Estimator for Connector {
    fn estimate(&self, request: &EstimateRequest) -> Result<EstimateResponse> {
        external_estimate(request, self)
    }
}

pub fn external_estimate(request: &EstimateRequest, connector: &Connector) -> Result<EstimateResponse> {
    request.validate()?;
    let _guard = connector.lock.lock().unwrap_or_else(|p| p.into_inner());
    let fail = |msg: String| Error::ConnectorFailure(format!("{}: {msg}", connector.program.display()));

    let mut child = Command::new(&connector.program)
        .args(&connector.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(format!("spawn failed: {e}")))?;

    let mut line = serde_json::to_string(request)?;
    line.push('\n');
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // a connector may exit without reading; its exit status decides
        let _ = stdin.write_all(line.as_bytes());
    }

    let stdout = child.stdout.take().expect("stdout is piped");
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut first = String::new();
        let read = BufReader::new(stdout).read_line(&mut first).map(|_| first);
        let mut err = String::new();
        let _ = stderr.read_to_string(&mut err);
        let _ = tx.send((read, err));
    });

    let (read, err_text) = match rx.recv_timeout(connector.timeout) {
        Ok(v) => v,
        Err(_) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(fail(format!("timed out after {:?}", connector.timeout)));
        }
    };
    let status = child.wait().map_err(|e| fail(format!("wait failed: {e}")))?;
    if !status.success() {
        return Err(fail(format!("exited with {status}: {}", err_text.trim())));
    }
    let text = read.map_err(|e| fail(format!("reading stdout: {e}")))?;
    let mut response: EstimateResponse = serde_json::from_str(text.trim())
        .map_err(|e| Error::SchemaViolation(format!("{e}: {:?}", text.trim())))?;
    response
        .params
        .validate()
        .map_err(|e| Error::SchemaViolation(e.to_string()))?;
    if response.params.i0 <= 0.0 {
        return Err(Error::SchemaViolation("i0 must be positive".into()));
    }
    response.source = EstimateSource::External;
    Ok(response)
}
