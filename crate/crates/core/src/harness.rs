//! Config-driven experiment sweeps: build a protocol instance per
//! (protocol, n, l, run) cell with a seed derived from the master seed, run
//! it on the kernel, and stream one CSV row per run. Also the summarizer
//! that groups rows into per-cell means and standard errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::api::{run_protocol, DropoutPlan};
use crate::field::{Field, FieldVector};
use crate::kernel::{SimulationResult, Status};
use crate::net::{load_dataset, EndpointSample, LatencyMatrix, NoiseModel};
use crate::protocols::{baseline, masking, shamir_proto, stevens};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error("graph error: {0}")]
    Graph(#[from] crate::protocols::graph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolId {
    Baseline,
    SecretSharing,
    Stevens,
    Bonawitz,
    Bell,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 5] = [
        ProtocolId::Baseline,
        ProtocolId::SecretSharing,
        ProtocolId::Stevens,
        ProtocolId::Bonawitz,
        ProtocolId::Bell,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolId::Baseline => "baseline",
            ProtocolId::SecretSharing => "secret_sharing",
            ProtocolId::Stevens => "stevens",
            ProtocolId::Bonawitz => "bonawitz",
            ProtocolId::Bell => "bell",
        }
    }

    /// Round trips, for spreading dropout rounds over the schedule.
    pub fn n_rounds(&self) -> u32 {
        match self {
            ProtocolId::Baseline => 1,
            ProtocolId::SecretSharing | ProtocolId::Stevens => 3,
            ProtocolId::Bonawitz | ProtocolId::Bell => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencySpec {
    /// All delays zero (the default).
    Zero,
    /// Constant one-way delay between all parties.
    Constant { one_way_ms: f64 },
    /// Endpoints drawn from a speed-test dataset; delay = last miles plus
    /// great-circle propagation, with lognormal jitter.
    Empirical { dataset: PathBuf },
}

impl Default for LatencySpec {
    fn default() -> Self {
        LatencySpec::Zero
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StevensConfig {
    #[serde(default = "default_s_len")]
    pub s_len: usize,
    #[serde(default = "default_pack_k")]
    pub pack_k: usize,
    /// None = exact aggregation.
    #[serde(default)]
    pub error_eta: Option<u32>,
}

fn default_s_len() -> usize {
    710
}
fn default_pack_k() -> usize {
    16
}
fn default_runs() -> usize {
    5
}
fn default_field_q() -> u64 {
    crate::field::MERSENNE31
}
fn default_delta() -> f64 {
    0.05
}
fn default_bell_k() -> usize {
    50
}

impl Default for StevensConfig {
    fn default() -> Self {
        StevensConfig { s_len: 710, pack_k: 16, error_eta: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocols: Vec<ProtocolId>,
    pub client_counts: Vec<usize>,
    pub dimensions: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_field_q")]
    pub field_q: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latency: LatencySpec,
    #[serde(default = "default_bell_k")]
    pub bell_k: usize,
    #[serde(default)]
    pub stevens: StevensConfig,
}

impl ExperimentConfig {
    pub fn from_yaml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.protocols.is_empty() || self.client_counts.is_empty() || self.dimensions.is_empty()
        {
            return Err(HarnessError::Config(
                "protocols, client_counts, and dimensions must be non-empty".into(),
            ));
        }
        if self.runs < 1 {
            return Err(HarnessError::Config("runs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(HarnessError::Config(format!("delta {} out of [0, 1)", self.delta)));
        }
        Field::new(self.field_q)?;
        Ok(())
    }
}

/// One CSV row per run. Column order is fixed; output_sum makes rerun
/// comparisons content-aware without dumping whole vectors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentRecord {
    pub protocol: String,
    pub n_clients: usize,
    pub dimension: usize,
    pub run_id: usize,
    pub status: String,
    pub total_time_s: f64,
    pub avg_client_compute_s: f64,
    pub server_compute_s: f64,
    pub avg_client_bytes_sent: f64,
    pub avg_client_bytes_received: f64,
    pub server_bytes_sent: u64,
    pub server_bytes_received: u64,
    pub rounds_completed: u32,
    pub dropped_clients: usize,
    pub output_sum: Option<u64>,
}

/// Everything a single run produced; tests use the inputs and plan as the
/// oracle for the expected output.
pub struct RunOutcome {
    pub record: ExperimentRecord,
    pub result: SimulationResult,
    pub inputs: Vec<FieldVector>,
    pub plan: DropoutPlan,
}

/// Deterministic per-cell seed from the master seed and cell coordinates.
pub fn cell_seed(master: u64, protocol: ProtocolId, n: usize, l: usize, run_id: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(protocol.name().as_bytes());
    h.update((n as u64).to_le_bytes());
    h.update((l as u64).to_le_bytes());
    h.update((run_id as u64).to_le_bytes());
    h.finalize().into()
}

/// Inputs per the evaluation setup: uniform integers in [0, 100].
pub fn generate_inputs(field: Field, n: usize, l: usize, rng: &mut ChaCha20Rng) -> Vec<FieldVector> {
    (0..n)
        .map(|_| {
            let elems: Vec<u64> = (0..l).map(|_| rng.random_range(0..=100u64)).collect();
            FieldVector::from_canonical(field, elems)
        })
        .collect()
}

fn build_latency(
    spec: &LatencySpec,
    n: usize,
    dataset: Option<&[EndpointSample]>,
    rng: &mut ChaCha20Rng,
) -> Result<LatencyMatrix, HarnessError> {
    match spec {
        LatencySpec::Zero => Ok(LatencyMatrix::zero(n)),
        LatencySpec::Constant { one_way_ms } => {
            Ok(LatencyMatrix::constant(n, (one_way_ms * 1e6).round() as u64))
        }
        LatencySpec::Empirical { .. } => {
            let samples = dataset
                .ok_or_else(|| HarnessError::Config("empirical latency needs a dataset".into()))?;
            Ok(LatencyMatrix::empirical(
                samples,
                n,
                rng,
                EndpointSample::datacenter(),
                NoiseModel::default_lognormal(),
            )?)
        }
    }
}

/// Run one cell once. `run_id` feeds the seed derivation, so every run in a
/// cell is independent but reproducible.
pub fn run_single(
    cfg: &ExperimentConfig,
    protocol: ProtocolId,
    n: usize,
    l: usize,
    run_id: usize,
    dataset: Option<&[EndpointSample]>,
) -> Result<RunOutcome, HarnessError> {
    let field = Field::new(cfg.field_q)?;
    let mut rng = ChaCha20Rng::from_seed(cell_seed(cfg.seed, protocol, n, l, run_id));

    let inputs = generate_inputs(field, n, l, &mut rng);
    let plan = DropoutPlan::generate(n, cfg.delta, protocol.n_rounds(), &mut rng);
    let latency = build_latency(&cfg.latency, n, dataset, &mut rng)?;

    let (server, clients) = match protocol {
        ProtocolId::Baseline => baseline::build(field, inputs.clone(), cfg.delta),
        ProtocolId::SecretSharing => {
            shamir_proto::build(field, inputs.clone(), (n / 2).max(1), &mut rng)
        }
        ProtocolId::Stevens => {
            let threshold = (n / 2).max(1);
            // reconstruction needs threshold + pack_k - 1 surviving shares,
            // so small cells cap the packing to leave dropout slack
            let expected_drops = (cfg.delta * n as f64).round() as usize;
            let budget = (n - expected_drops).saturating_sub(threshold) + 1;
            let params = stevens::StevensParams {
                s_len: cfg.stevens.s_len,
                pack_k: cfg.stevens.pack_k.min(budget).max(1),
                threshold,
                error_eta: cfg.stevens.error_eta,
            };
            stevens::build(field, inputs.clone(), params, &mut rng)
        }
        ProtocolId::Bonawitz => masking::build_bonawitz(field, inputs.clone(), &mut rng),
        ProtocolId::Bell => {
            // a small cell cannot have more neighbors than peers
            let k = cfg.bell_k.min(n - 1);
            masking::build_bell(field, inputs.clone(), k, &mut rng)?
        }
    };

    let kernel_rng = ChaCha20Rng::from_seed(rng.random());
    let result = run_protocol(server, clients, &plan, latency, kernel_rng);

    let record = make_record(protocol, n, l, run_id, &plan, &result);
    Ok(RunOutcome { record, result, inputs, plan })
}

fn make_record(
    protocol: ProtocolId,
    n: usize,
    l: usize,
    run_id: usize,
    plan: &DropoutPlan,
    result: &SimulationResult,
) -> ExperimentRecord {
    let status = match &result.status {
        Status::Success => "success",
        Status::Failed(_) | Status::AgentError(..) => "failed",
        Status::Stalled => "stalled",
    };
    if let Status::Failed(reason) = &result.status {
        log::warn!("{} n={n} l={l} run={run_id} failed: {reason}", protocol.name());
    }
    let ns = 1e-9;
    let client_mean = |xs: &[u64]| {
        if n == 0 {
            0.0
        } else {
            xs[1..].iter().map(|&v| v as f64).sum::<f64>() / n as f64
        }
    };
    ExperimentRecord {
        protocol: protocol.name().to_string(),
        n_clients: n,
        dimension: l,
        run_id,
        status: status.to_string(),
        total_time_s: result.total_time_ns as f64 * ns,
        avg_client_compute_s: client_mean(&result.compute_ns) * ns,
        server_compute_s: result.compute_ns[0] as f64 * ns,
        avg_client_bytes_sent: client_mean(&result.bytes_sent),
        avg_client_bytes_received: client_mean(&result.bytes_received),
        server_bytes_sent: result.bytes_sent[0],
        server_bytes_received: result.bytes_received[0],
        rounds_completed: result.rounds_completed,
        dropped_clients: plan.dropped_count(),
        output_sum: result.output.as_ref().map(|v| v.element_sum()),
    }
}

/// Peak resident set size of this process in bytes, from /proc.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Full Cartesian sweep with incremental, crash-safe CSV appends. Cell
/// failures become rows; only I/O and config errors abort.
pub fn run_experiments(
    cfg: &ExperimentConfig,
    out_path: &Path,
) -> Result<Vec<ExperimentRecord>, HarnessError> {
    cfg.validate()?;
    let dataset = match &cfg.latency {
        LatencySpec::Empirical { dataset } => Some(load_dataset(dataset)?),
        _ => None,
    };

    let write_header = !out_path.exists()
        || std::fs::metadata(out_path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(out_path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(write_header).from_writer(file);

    let mut records = Vec::new();
    for &protocol in &cfg.protocols {
        for &n in &cfg.client_counts {
            for &l in &cfg.dimensions {
                for run_id in 0..cfg.runs {
                    let outcome = run_single(cfg, protocol, n, l, run_id, dataset.as_deref())?;
                    writer.serialize(&outcome.record)?;
                    writer.flush()?;
                    records.push(outcome.record);
                }
                if let Some(rss) = peak_rss_bytes() {
                    log::info!(
                        "{} n={n} l={l}: cell done, peak rss {:.1} MiB",
                        protocol.name(),
                        rss as f64 / (1024.0 * 1024.0)
                    );
                }
            }
        }
    }
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Per-cell aggregate: means and standard errors over successful runs;
/// failed and stalled runs only contribute to the failure rate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryRow {
    pub protocol: String,
    pub n_clients: usize,
    pub dimension: usize,
    pub runs: usize,
    pub failure_rate: f64,
    pub mean_total_time_s: Option<f64>,
    pub stderr_total_time_s: Option<f64>,
    pub mean_avg_client_compute_s: Option<f64>,
    pub mean_server_compute_s: Option<f64>,
    pub mean_avg_client_bytes_sent: Option<f64>,
    pub mean_avg_client_bytes_received: Option<f64>,
    pub mean_server_bytes_sent: Option<f64>,
    pub mean_server_bytes_received: Option<f64>,
}

/// Sample mean and standard error of the mean (s / sqrt(n), ddof = 1).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, usize, usize), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.protocol.clone(), r.n_clients, r.dimension))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((protocol, n_clients, dimension), rows)| {
            let ok: Vec<&&ExperimentRecord> =
                rows.iter().filter(|r| r.status == "success").collect();
            let stat = |f: &dyn Fn(&ExperimentRecord) -> f64| {
                if ok.is_empty() {
                    (None, None)
                } else {
                    let vals: Vec<f64> = ok.iter().map(|r| f(r)).collect();
                    let (m, s) = mean_stderr(&vals);
                    (Some(m), Some(s))
                }
            };
            let (mean_total, stderr_total) = stat(&|r| r.total_time_s);
            SummaryRow {
                protocol,
                n_clients,
                dimension,
                runs: rows.len(),
                failure_rate: 1.0 - ok.len() as f64 / rows.len() as f64,
                mean_total_time_s: mean_total,
                stderr_total_time_s: stderr_total,
                mean_avg_client_compute_s: stat(&|r| r.avg_client_compute_s).0,
                mean_server_compute_s: stat(&|r| r.server_compute_s).0,
                mean_avg_client_bytes_sent: stat(&|r| r.avg_client_bytes_sent).0,
                mean_avg_client_bytes_received: stat(&|r| r.avg_client_bytes_received).0,
                mean_server_bytes_sent: stat(&|r| r.server_bytes_sent as f64).0,
                mean_server_bytes_received: stat(&|r| r.server_bytes_received as f64).0,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(protocol: &str, status: &str, total: f64) -> ExperimentRecord {
        ExperimentRecord {
            protocol: protocol.into(),
            n_clients: 8,
            dimension: 10,
            run_id: 0,
            status: status.into(),
            total_time_s: total,
            avg_client_compute_s: 0.5,
            server_compute_s: 1.5,
            avg_client_bytes_sent: 100.0,
            avg_client_bytes_received: 200.0,
            server_bytes_sent: 300,
            server_bytes_received: 400,
            rounds_completed: 2,
            dropped_clients: 0,
            output_sum: Some(7),
        }
    }

    #[test]
    fn stderr_textbook_oracle() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        // s = stddev(1,2,3; ddof=1) / sqrt(3) = 1 / sqrt(3)
        assert!((s - 0.5773502691896258).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_zero_stderr() {
        let rows = vec![record("baseline", "success", 2.5); 5];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].mean_total_time_s, Some(2.5));
        assert_eq!(summary[0].stderr_total_time_s, Some(0.0));
        assert_eq!(summary[0].failure_rate, 0.0);
    }

    #[test]
    fn all_failures_empty_means() {
        let rows = vec![record("bell", "failed", 1.0); 3];
        let summary = summarize(&rows);
        assert_eq!(summary[0].failure_rate, 1.0);
        assert_eq!(summary[0].mean_total_time_s, None);
    }

    #[test]
    fn csv_roundtrip_preserves_summary() {
        let rows = vec![
            record("baseline", "success", 1.0),
            record("baseline", "success", 2.0),
            record("bell", "failed", 9.0),
        ];
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in &rows {
                w.serialize(r).unwrap();
            }
            w.flush().unwrap();
        }
        let mut back = Vec::new();
        for r in csv::Reader::from_reader(&buf[..]).deserialize() {
            let r: ExperimentRecord = r.unwrap();
            back.push(r);
        }
        assert_eq!(back, rows);
        assert_eq!(summarize(&back), summarize(&rows));
    }

    #[test]
    fn cell_seed_distinct_and_stable() {
        let a = cell_seed(1, ProtocolId::Bell, 8, 10, 0);
        assert_eq!(a, cell_seed(1, ProtocolId::Bell, 8, 10, 0));
        assert_ne!(a, cell_seed(1, ProtocolId::Bell, 8, 10, 1));
        assert_ne!(a, cell_seed(1, ProtocolId::Bonawitz, 8, 10, 0));
        assert_ne!(a, cell_seed(2, ProtocolId::Bell, 8, 10, 0));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_yaml(
            "protocols: [baseline]\nclient_counts: [8]\ndimensions: [10]\n",
        )
        .unwrap();
        assert_eq!(cfg.runs, 5);
        assert_eq!(cfg.field_q, crate::field::MERSENNE31);
        assert_eq!(cfg.delta, 0.05);
        assert_eq!(cfg.bell_k, 50);
        assert_eq!(cfg.stevens.s_len, 710);
        assert_eq!(cfg.stevens.pack_k, 16);
        assert_eq!(cfg.latency, LatencySpec::Zero);

        assert!(ExperimentConfig::from_yaml("protocols: []\nclient_counts: [8]\ndimensions: [10]\n")
            .is_err());
        assert!(ExperimentConfig::from_yaml(
            "protocols: [baseline]\nclient_counts: [8]\ndimensions: [10]\nruns: 0\n"
        )
        .is_err());
        assert!(ExperimentConfig::from_yaml("nonsense: true\n").is_err());
    }
}
