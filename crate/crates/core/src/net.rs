//! Pairwise network latency models: zero/constant matrices, dense imported
//! matrices, and the empirical model built from internet speed-test samples
//! (last-mile latency plus great-circle propagation delay).

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("latency dataset is empty")]
    EmptyDataset,
    #[error("bad dataset row {line}: {reason}")]
    BadRow { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Earth radius used for great-circle distances, meters.
const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Propagation speed of light in fiber, m/s.
pub const FIBER_SPEED_M_PER_S: f64 = 2.0e8;

/// One row of the speed-test dataset: a geographic tile with its measured
/// last-mile latency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointSample {
    pub latitude: f64,
    pub longitude: f64,
    pub last_mile_ns: u64,
}

impl EndpointSample {
    pub fn validate(&self, line: usize) -> Result<(), NetError> {
        if self.latitude.abs() > 90.0 || self.longitude.abs() > 180.0 {
            return Err(NetError::BadRow {
                line,
                reason: format!("coordinates out of range: {}, {}", self.latitude, self.longitude),
            });
        }
        Ok(())
    }

    /// Default server profile: a low-latency datacenter (1 ms last mile).
    pub fn datacenter() -> Self {
        EndpointSample { latitude: 39.0, longitude: -77.5, last_mile_ns: 1_000_000 }
    }
}

/// Great-circle distance in meters (haversine).
pub fn great_circle_m(a: &EndpointSample, b: &EndpointSample) -> f64 {
    let (lat1, lon1) = (a.latitude.to_radians(), a.longitude.to_radians());
    let (lat2, lon2) = (b.latitude.to_radians(), b.longitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

/// Additive per-message jitter on top of the matrix floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Lognormal noise scaled so its 99th percentile is `p99_fraction` of the
    /// base delay it is added to.
    LognormalFraction { sigma: f64, p99_fraction: f64 },
}

impl NoiseModel {
    /// Default empirical-model jitter: 99th percentile adds at most 20% of base.
    pub fn default_lognormal() -> Self {
        NoiseModel::LognormalFraction { sigma: 0.8, p99_fraction: 0.2 }
    }

    fn sample(&self, base_ns: u64, rng: &mut ChaCha20Rng) -> u64 {
        match *self {
            NoiseModel::None => 0,
            NoiseModel::LognormalFraction { sigma, p99_fraction } => {
                // choose mu so that exp(mu + z99 * sigma) = p99_fraction * base
                let z99 = 2.326_347_874_040_841;
                let target = p99_fraction * base_ns as f64;
                if target <= 0.0 {
                    return 0;
                }
                let mu = target.ln() - z99 * sigma;
                let dist = LogNormal::new(mu, sigma).expect("valid lognormal parameters");
                dist.sample(rng).round().max(0.0) as u64
            }
        }
    }
}

enum Delays {
    Constant { one_way_ns: u64 },
    Dense { entries: Vec<u64> },
    /// Per-endpoint representation of the empirical model; O(n) memory,
    /// entries computed on demand.
    Geo { endpoints: Vec<EndpointSample> },
}

/// Minimum one-way delays in nanoseconds between all parties (server is
/// party 0). The matrix is a floor: sampled delays add non-negative noise.
pub struct LatencyMatrix {
    n_parties: usize,
    delays: Delays,
    noise: NoiseModel,
}

impl LatencyMatrix {
    /// Zero latency between everyone.
    pub fn zero(n_clients: usize) -> Self {
        LatencyMatrix {
            n_parties: n_clients + 1,
            delays: Delays::Constant { one_way_ns: 0 },
            noise: NoiseModel::None,
        }
    }

    /// Constant one-way delay between all distinct parties.
    pub fn constant(n_clients: usize, one_way_ns: u64) -> Self {
        LatencyMatrix {
            n_parties: n_clients + 1,
            delays: Delays::Constant { one_way_ns },
            noise: NoiseModel::None,
        }
    }

    /// Dense matrix from explicit entries, row-major (n+1) x (n+1).
    pub fn dense(n_clients: usize, entries: Vec<u64>, noise: NoiseModel) -> Self {
        let n_parties = n_clients + 1;
        assert_eq!(entries.len(), n_parties * n_parties);
        LatencyMatrix { n_parties, delays: Delays::Dense { entries }, noise }
    }

    /// Empirical model: each client is assigned a dataset sample (drawn with
    /// replacement); delay(u, v) = last_mile(u) + last_mile(v) +
    /// great_circle(u, v) / fiber speed.
    pub fn empirical(
        samples: &[EndpointSample],
        n_clients: usize,
        rng: &mut ChaCha20Rng,
        server: EndpointSample,
        noise: NoiseModel,
    ) -> Result<Self, NetError> {
        if samples.is_empty() {
            return Err(NetError::EmptyDataset);
        }
        let mut endpoints = Vec::with_capacity(n_clients + 1);
        endpoints.push(server);
        for _ in 0..n_clients {
            endpoints.push(samples[rng.random_range(0..samples.len())]);
        }
        Ok(LatencyMatrix { n_parties: n_clients + 1, delays: Delays::Geo { endpoints }, noise })
    }

    pub fn n_parties(&self) -> usize {
        self.n_parties
    }

    /// The matrix entry: minimum one-way delay from src to dst.
    pub fn delay(&self, src: usize, dst: usize) -> u64 {
        assert!(src < self.n_parties && dst < self.n_parties);
        if src == dst {
            return 0;
        }
        match &self.delays {
            Delays::Constant { one_way_ns } => *one_way_ns,
            Delays::Dense { entries } => entries[src * self.n_parties + dst],
            Delays::Geo { endpoints } => {
                let a = &endpoints[src];
                let b = &endpoints[dst];
                let prop = great_circle_m(a, b) / FIBER_SPEED_M_PER_S * 1e9;
                a.last_mile_ns + b.last_mile_ns + prop.round() as u64
            }
        }
    }

    /// Base delay plus a non-negative noise draw.
    pub fn sample_delay(&self, src: usize, dst: usize, rng: &mut ChaCha20Rng) -> u64 {
        let base = self.delay(src, dst);
        base + self.noise.sample(base, rng)
    }

    /// Export as CSV (`src,dst,delay_ns`), materializing all entries.
    pub fn export_csv<W: Write>(&self, mut w: W) -> Result<(), NetError> {
        writeln!(w, "src,dst,delay_ns")?;
        for s in 0..self.n_parties {
            for d in 0..self.n_parties {
                writeln!(w, "{s},{d},{}", self.delay(s, d))?;
            }
        }
        Ok(())
    }

    /// Import a matrix exported by `export_csv`.
    pub fn import_csv<R: BufRead>(r: R, noise: NoiseModel) -> Result<Self, NetError> {
        let mut triples = Vec::new();
        let mut max_id = 0usize;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 3 {
                return Err(NetError::BadRow { line: i + 1, reason: "expected 3 columns".into() });
            }
            let parse = |s: &str| -> Result<u64, NetError> {
                s.parse().map_err(|e| NetError::BadRow { line: i + 1, reason: format!("{e}") })
            };
            let (s, d, ns) = (parse(parts[0])? as usize, parse(parts[1])? as usize, parse(parts[2])?);
            max_id = max_id.max(s).max(d);
            triples.push((s, d, ns));
        }
        if triples.is_empty() {
            return Err(NetError::EmptyDataset);
        }
        let n_parties = max_id + 1;
        let mut entries = vec![0u64; n_parties * n_parties];
        for (s, d, ns) in triples {
            entries[s * n_parties + d] = ns;
        }
        Ok(LatencyMatrix { n_parties, delays: Delays::Dense { entries }, noise })
    }
}

/// Load a speed-test dataset CSV with header `lat,lon,latency_ms`.
pub fn load_dataset(path: &Path) -> Result<Vec<EndpointSample>, NetError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != 3 {
            return Err(NetError::BadRow { line: i + 1, reason: "expected lat,lon,latency_ms".into() });
        }
        let parse = |s: &str| -> Result<f64, NetError> {
            s.parse().map_err(|e| NetError::BadRow { line: i + 1, reason: format!("{e}") })
        };
        let (lat, lon, ms) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if ms < 0.0 {
            return Err(NetError::BadRow { line: i + 1, reason: "negative latency".into() });
        }
        let sample = EndpointSample {
            latitude: lat,
            longitude: lon,
            last_mile_ns: (ms * 1e6).round() as u64,
        };
        sample.validate(i + 1)?;
        out.push(sample);
    }
    if out.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    Ok(out)
}
