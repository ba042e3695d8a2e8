//! End-to-end acceptance suite. Each test covers one numbered criterion and
//! prints a single PASS/FAIL line (visible with --nocapture). Tests share a
//! mutex so the compute-timing checks are not distorted by parallel load.

use std::collections::BTreeSet;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use aggsim::api::{run_protocol, DropoutPlan};
use aggsim::field::{Field, FieldVector};
use aggsim::harness::{
    cell_seed, generate_inputs, peak_rss_bytes, run_experiments, run_single, ExperimentConfig,
    ExperimentRecord, LatencySpec, ProtocolId, StevensConfig,
};
use aggsim::kernel::Status;
use aggsim::net::LatencyMatrix;
use aggsim::protocols::{diag, masking};
use aggsim::shamir::{reconstruct_array, share_array, sum_share_array, ShareArray, ShareError};

static SEQUENTIAL: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SEQUENTIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("criterion {id} ({name}): PASS");
    } else {
        println!("criterion {id} ({name}): FAIL");
        for f in failures {
            println!("  - {f}");
        }
        panic!("criterion {id} ({name}) failed: {failures:?}");
    }
}

fn config(delta: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        protocols: ProtocolId::ALL.to_vec(),
        client_counts: vec![16],
        dimensions: vec![64],
        runs: 1,
        field_q: aggsim::field::MERSENNE31,
        delta,
        seed,
        latency: LatencySpec::Zero,
        bell_k: 50,
        stevens: StevensConfig::default(),
    }
}

fn plaintext_sum(field: Field, l: usize, inputs: &[FieldVector], ids: &[usize]) -> FieldVector {
    let mut sum = FieldVector::zeros(field, l);
    for &id in ids {
        sum.add_assign(&inputs[id - 1]).unwrap();
    }
    sum
}

/// Least-squares slope of ln(y) on ln(x).
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[test]
fn acceptance_01_exactness() {
    let _guard = lock();
    let field = Field::mersenne31();
    let cfg = config(0.0, 101);
    let (n, l) = (16, 64);
    let mut failures = Vec::new();
    for &protocol in &ProtocolId::ALL {
        for trial in 0..100 {
            let outcome = run_single(&cfg, protocol, n, l, trial, None).unwrap();
            let expect = FieldVector::sum(field, l, outcome.inputs.iter()).unwrap();
            if outcome.result.status != Status::Success
                || outcome.result.output.as_ref() != Some(&expect)
            {
                failures.push(format!(
                    "{} trial {trial}: status {:?}, output mismatch",
                    protocol.name(),
                    outcome.result.status
                ));
                break;
            }
        }
    }
    report(1, "exactness", &failures);
}

#[test]
fn acceptance_02_homomorphism_and_threshold() {
    let _guard = lock();
    let field = Field::mersenne31();
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    let mut failures = Vec::new();

    // independent oracle: O(m^2) Lagrange evaluation at an embedding point
    let lagrange_at = |xs: &[u64], ys: &[u64], x: u64| -> u64 {
        let mut acc = 0u64;
        for i in 0..xs.len() {
            let mut term = ys[i];
            for j in 0..xs.len() {
                if i != j {
                    let num = field.sub(x, xs[j]);
                    let den = field.sub(xs[i], xs[j]);
                    term = field.mul(term, field.mul(num, field.inv(den).unwrap()));
                }
            }
            acc = field.add(acc, term);
        }
        acc
    };

    for n in [3usize, 5, 8, 12] {
        for t in [1usize, 2, 4] {
            for pack_k in [1usize, 2, 3] {
                if t + pack_k - 1 > n {
                    continue;
                }
                let a = FieldVector::random(field, 5, &mut rng);
                let b = FieldVector::random(field, 5, &mut rng);
                let sa = share_array(&a, n, t, pack_k, &mut rng).unwrap();
                let sb = share_array(&b, n, t, pack_k, &mut rng).unwrap();

                // round trip
                if reconstruct_array(&sa).unwrap() != a {
                    failures.push(format!("roundtrip failed at n={n} t={t} pack={pack_k}"));
                }
                // oracle: interpolate the first block through the first
                // required shares and read the first embedding point
                let needed = sa[0].params.required_shares();
                let xs: Vec<u64> = sa[..needed].iter().map(|s| s.owner_point).collect();
                let ys: Vec<u64> = sa[..needed].iter().map(|s| s.values.get(0)).collect();
                if lagrange_at(&xs, &ys, field.q() - 1) != a.get(0) {
                    failures.push(format!("oracle mismatch at n={n} t={t} pack={pack_k}"));
                }
                // additive homomorphism
                let summed: Vec<ShareArray> = sa
                    .iter()
                    .zip(&sb)
                    .map(|(x, y)| sum_share_array(&[x.clone(), y.clone()]).unwrap())
                    .collect();
                if reconstruct_array(&summed).unwrap() != a.add(&b).unwrap() {
                    failures.push(format!("homomorphism failed at n={n} t={t} pack={pack_k}"));
                }
                // below threshold always errors
                if needed > 1
                    && !matches!(
                        reconstruct_array(&sa[..needed - 1]),
                        Err(ShareError::ThresholdNotMet { .. })
                    )
                {
                    failures.push(format!("below-threshold accepted at n={n} t={t} pack={pack_k}"));
                }
            }
        }
    }
    report(2, "homomorphism and threshold", &failures);
}

#[test]
fn acceptance_03_dropout_correctness() {
    let _guard = lock();
    let field = Field::mersenne31();
    let cfg = config(0.05, 303);
    let (n, l) = (64, 100);
    let mut failures = Vec::new();
    let mut sk_recoveries = 0u32;
    let mut late_survivor_drops = 0u32;
    for &protocol in &[ProtocolId::Bonawitz, ProtocolId::Bell] {
        for trial in 0..20 {
            let outcome = run_single(&cfg, protocol, n, l, trial, None).unwrap();
            if outcome.result.status != Status::Success {
                failures.push(format!(
                    "{} trial {trial}: {:?}",
                    protocol.name(),
                    outcome.result.status
                ));
                continue;
            }
            // survivors are exactly the clients alive at masked-input time
            let expect_survivors: Vec<usize> =
                (1..=n).filter(|&c| outcome.plan.responds(c, 3)).collect();
            if outcome.result.contributors != expect_survivors {
                failures.push(format!("{} trial {trial}: wrong survivor set", protocol.name()));
                continue;
            }
            let expect = plaintext_sum(field, l, &outcome.inputs, &expect_survivors);
            if outcome.result.output.as_ref() != Some(&expect) {
                failures.push(format!(
                    "{} trial {trial}: output is not the survivor-set sum",
                    protocol.name()
                ));
            }
            for c in 1..=n {
                match outcome.plan.drop_round(c) {
                    // dropped after distributing shares: pairwise-mask (sk)
                    // recovery had to reconstruct correctly for exactness
                    Some(3) => sk_recoveries += 1,
                    // survivor that vanished in recovery: its b mask was
                    // reconstructed from the remaining holders
                    Some(4) => late_survivor_drops += 1,
                    _ => {}
                }
            }
        }
    }
    if sk_recoveries == 0 {
        failures.push("no trial exercised sk recovery".into());
    }
    if late_survivor_drops == 0 {
        failures.push("no trial exercised b recovery with a missing holder".into());
    }
    report(3, "dropout correctness", &failures);
}

#[test]
fn acceptance_04_degeneracy() {
    let _guard = lock();
    let field = Field::mersenne31();
    let mut failures = Vec::new();
    for n in [8usize, 16] {
        for trial in 0..20u64 {
            let seed = cell_seed(404, ProtocolId::Bonawitz, n, 32, trial as usize);
            let mut input_rng = ChaCha20Rng::from_seed(seed);
            let inputs = generate_inputs(field, n, 32, &mut input_rng);

            let run = |complete: bool| {
                let mut rng = ChaCha20Rng::from_seed(seed);
                let (server, clients) = if complete {
                    masking::build_bonawitz(field, inputs.clone(), &mut rng)
                } else {
                    masking::build_bell(field, inputs.clone(), n - 1, &mut rng).unwrap()
                };
                run_protocol(
                    server,
                    clients,
                    &DropoutPlan::none(),
                    LatencyMatrix::zero(n),
                    ChaCha20Rng::seed_from_u64(0),
                )
            };
            let a = run(true);
            let b = run(false);
            if a.status != Status::Success || a.output != b.output || a.output.is_none() {
                failures.push(format!("n={n} trial {trial}: outputs differ"));
            }
        }
    }
    report(4, "full-graph degeneracy", &failures);
}

#[test]
fn acceptance_05_latency_law() {
    let _guard = lock();
    let n = 8;
    let run_arm = |latency: LatencyMatrix| {
        let (server, clients) = diag::build_stub(n, 4);
        run_protocol(
            server,
            clients,
            &DropoutPlan::none(),
            latency,
            ChaCha20Rng::seed_from_u64(0),
        )
    };
    let zero = run_arm(LatencyMatrix::zero(n));
    let slow = run_arm(LatencyMatrix::constant(n, 5_000_000_000));
    let mut failures = Vec::new();
    if zero.status != Status::Success || slow.status != Status::Success {
        failures.push("stub protocol did not succeed".into());
    }
    // 4 round trips at 5 s one way adds 40 s over the zero-latency arm
    let diff_s = (slow.total_time_ns - zero.total_time_ns) as f64 * 1e-9;
    if (diff_s - 40.0).abs() > 2.0 {
        failures.push(format!("time difference {diff_s:.3} s, expected 40 s within 5%"));
    }
    report(5, "latency law", &failures);
}

#[test]
fn acceptance_06_parallel_compute() {
    let _guard = lock();
    let spins = [50u64, 100];
    let (server, clients) = diag::build_spin(&spins);
    let result = run_protocol(
        server,
        clients,
        &DropoutPlan::none(),
        LatencyMatrix::zero(spins.len()),
        ChaCha20Rng::seed_from_u64(0),
    );
    let mut failures = Vec::new();
    if result.status != Status::Success {
        failures.push(format!("{:?}", result.status));
    }
    // the round must last as long as the slowest client, not the sum
    let total_ms = result.total_time_ns as f64 * 1e-6;
    if (total_ms - 100.0).abs() > 10.0 {
        failures.push(format!("round took {total_ms:.1} ms, expected 100 ms within 10%"));
    }
    report(6, "parallel compute", &failures);
}

#[test]
fn acceptance_07_communication_asymptotics() {
    let _guard = lock();
    let cfg = config(0.0, 707);
    let mut failures = Vec::new();

    let client_bytes = |protocol: ProtocolId, n: usize, l: usize| -> f64 {
        let outcome = run_single(&cfg, protocol, n, l, 0, None).unwrap();
        assert_eq!(
            outcome.result.status,
            Status::Success,
            "{} n={n} l={l}",
            protocol.name()
        );
        outcome.record.avg_client_bytes_sent
    };

    // client bytes vs n at fixed l
    let ns = [64usize, 256, 1024];
    let nsf: Vec<f64> = ns.iter().map(|&v| v as f64).collect();
    let ss: Vec<f64> = ns.iter().map(|&n| client_bytes(ProtocolId::SecretSharing, n, 100)).collect();
    let slope = loglog_slope(&nsf, &ss);
    if (slope - 1.0).abs() > 0.15 {
        failures.push(format!("secret_sharing bytes-vs-n slope {slope:.3}, expected 1.0 +- 0.15"));
    }
    let bell: Vec<f64> = ns.iter().map(|&n| client_bytes(ProtocolId::Bell, n, 100)).collect();
    let slope = loglog_slope(&nsf[1..], &bell[1..]);
    if slope.abs() > 0.1 {
        failures.push(format!("bell bytes-vs-n slope {slope:.3} beyond n=256, expected 0 +- 0.1"));
    }

    // client bytes vs l at fixed n
    let ls = [100usize, 1000, 10000];
    let lsf: Vec<f64> = ls.iter().map(|&v| v as f64).collect();
    for &protocol in &ProtocolId::ALL {
        let ys: Vec<f64> = ls.iter().map(|&l| client_bytes(protocol, 64, l)).collect();
        let slope = loglog_slope(&lsf, &ys);
        if (slope - 1.0).abs() > 0.15 {
            failures.push(format!(
                "{} bytes-vs-dimension slope {slope:.3} (bytes {ys:?}), expected 1.0 +- 0.15",
                protocol.name()
            ));
        }
    }
    report(7, "communication asymptotics", &failures);
}

#[test]
fn acceptance_08_scale_smoke() {
    let _guard = lock();
    let cfg = config(0.05, 808);
    let outcome = run_single(&cfg, ProtocolId::Bell, 10_000, 100, 0, None).unwrap();
    let mut failures = Vec::new();
    if outcome.result.status != Status::Success {
        failures.push(format!("{:?}", outcome.result.status));
    }
    match peak_rss_bytes() {
        Some(rss) => {
            println!("  peak rss at n=10000: {:.1} MiB", rss as f64 / (1024.0 * 1024.0));
            if rss > 64 << 30 {
                failures.push(format!("peak rss {rss} exceeds 64 GiB"));
            }
        }
        None => failures.push("could not read peak rss".into()),
    }
    report(8, "scale smoke", &failures);
}

#[test]
fn acceptance_09_packing_benefit() {
    let _guard = lock();
    let mut cfg = config(0.0, 909);
    cfg.stevens.s_len = 710;
    let (n, l) = (64, 1000);
    let run_variant = |cfg: &ExperimentConfig, run_id: usize| run_single(cfg, ProtocolId::Stevens, n, l, run_id, None).unwrap();

    let mut failures = Vec::new();
    let trials = 3;
    let mut packed_compute = 0.0;
    let mut plain_compute = 0.0;
    for run_id in 0..trials {
        cfg.stevens.pack_k = 16;
        let packed = run_variant(&cfg, run_id);
        cfg.stevens.pack_k = 1;
        let plain = run_variant(&cfg, run_id);
        if packed.result.output != plain.result.output || packed.result.output.is_none() {
            failures.push(format!("run {run_id}: outputs differ between pack_k 16 and 1"));
        }
        if packed.record.avg_client_bytes_sent >= plain.record.avg_client_bytes_sent {
            failures.push(format!(
                "run {run_id}: packed client bytes {} not below unpacked {}",
                packed.record.avg_client_bytes_sent, plain.record.avg_client_bytes_sent
            ));
        }
        packed_compute += packed.record.server_compute_s;
        plain_compute += plain.record.server_compute_s;
    }
    if packed_compute >= plain_compute {
        failures.push(format!(
            "packed server compute {packed_compute:.4} s not below unpacked {plain_compute:.4} s"
        ));
    }
    report(9, "packing benefit", &failures);
}

#[test]
fn acceptance_10_determinism() {
    let _guard = lock();
    let mut cfg = config(0.05, 1010);
    cfg.client_counts = vec![8, 16];
    cfg.dimensions = vec![10];
    cfg.runs = 2;

    let dir = tempfile::tempdir().unwrap();
    let sweep = |name: &str| -> Vec<ExperimentRecord> {
        let path = dir.path().join(name);
        run_experiments(&cfg, &path).unwrap()
    };
    let a = sweep("a.csv");
    let b = sweep("b.csv");

    // everything except the host-dependent timing columns must be identical
    let strip = |r: &ExperimentRecord| {
        (
            r.protocol.clone(),
            r.n_clients,
            r.dimension,
            r.run_id,
            r.status.clone(),
            r.avg_client_bytes_sent.to_bits(),
            r.avg_client_bytes_received.to_bits(),
            r.server_bytes_sent,
            r.server_bytes_received,
            r.rounds_completed,
            r.dropped_clients,
            r.output_sum,
        )
    };
    let mut failures = Vec::new();
    if a.len() != b.len() {
        failures.push(format!("row counts differ: {} vs {}", a.len(), b.len()));
    } else {
        for (ra, rb) in a.iter().zip(&b) {
            if strip(ra) != strip(rb) {
                failures.push(format!(
                    "rerun differs for {} n={} l={} run={}",
                    ra.protocol, ra.n_clients, ra.dimension, ra.run_id
                ));
            }
        }
    }
    // deterministic failures are fine (e.g. a cell whose planned dropouts
    // exceed what the advance threshold tolerates); stalls are not
    let statuses: BTreeSet<&str> = a.iter().map(|r| r.status.as_str()).collect();
    if statuses.contains("stalled") {
        failures.push(format!("stalled runs in sweep: {statuses:?}"));
    }
    report(10, "determinism", &failures);
}
