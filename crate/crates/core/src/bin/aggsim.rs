//! Command-line front end: run experiment sweeps, summarize result CSVs,
//! export latency matrices, and self-test the protocol implementations.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use aggsim::field::Field;
use aggsim::harness::{
    read_records, run_experiments, run_single, summarize, ExperimentConfig, ProtocolId,
};
use aggsim::kernel::Status;
use aggsim::net::{load_dataset, EndpointSample, LatencyMatrix, NoiseModel};

#[derive(Parser)]
#[command(name = "aggsim", about = "Secure-aggregation protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a YAML config, appending rows to a CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group a result CSV into per-cell means and standard errors.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Build an empirical latency matrix from a speed-test dataset.
    LatencyMatrix {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exactness check: every protocol must output the plaintext sum.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Error::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

enum Error {
    Usage(String),
    Runtime(String),
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Usage(format!("cannot read {}: {e}", config.display())))?;
            let cfg = ExperimentConfig::from_yaml(&text)
                .map_err(|e| Error::Usage(format!("{}: {e}", config.display())))?;
            let records = run_experiments(&cfg, &out)
                .map_err(|e| Error::Runtime(e.to_string()))?;
            let failures = records.iter().filter(|r| r.status != "success").count();
            eprintln!("{} runs written to {} ({failures} failures)", records.len(), out.display());
            Ok(())
        }
        Command::Summarize { input } => {
            let records =
                read_records(&input).map_err(|e| Error::Usage(format!("{}: {e}", input.display())))?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for row in summarize(&records) {
                w.serialize(row).map_err(|e| Error::Runtime(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::Runtime(e.to_string()))?;
            Ok(())
        }
        Command::LatencyMatrix { dataset, n, seed, out } => {
            let samples = load_dataset(&dataset)
                .map_err(|e| Error::Usage(format!("{}: {e}", dataset.display())))?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let matrix = LatencyMatrix::empirical(
                &samples,
                n,
                &mut rng,
                EndpointSample::datacenter(),
                NoiseModel::default_lognormal(),
            )
            .map_err(|e| Error::Runtime(e.to_string()))?;
            let file = std::fs::File::create(&out)
                .map_err(|e| Error::Runtime(format!("cannot write {}: {e}", out.display())))?;
            matrix
                .export_csv(std::io::BufWriter::new(file))
                .map_err(|e| Error::Runtime(e.to_string()))?;
            eprintln!("wrote {} x {} matrix to {}", n + 1, n + 1, out.display());
            Ok(())
        }
        Command::Selftest => selftest(),
    }
}

fn selftest() -> Result<(), Error> {
    let cfg = ExperimentConfig {
        protocols: ProtocolId::ALL.to_vec(),
        client_counts: vec![8],
        dimensions: vec![16],
        runs: 5,
        field_q: aggsim::field::MERSENNE31,
        delta: 0.0,
        seed: 7,
        latency: Default::default(),
        bell_k: 4,
        stevens: aggsim::harness::StevensConfig { s_len: 32, pack_k: 4, error_eta: None },
    };
    let field = Field::new(cfg.field_q).expect("valid modulus");
    let mut failures = 0;
    for &protocol in &cfg.protocols {
        for run_id in 0..cfg.runs {
            let outcome = run_single(&cfg, protocol, 8, 16, run_id, None)
                .map_err(|e| Error::Runtime(e.to_string()))?;
            let expect = aggsim::field::FieldVector::sum(field, 16, outcome.inputs.iter())
                .expect("consistent inputs");
            let ok = outcome.result.status == Status::Success
                && outcome.result.output.as_ref() == Some(&expect);
            if !ok {
                failures += 1;
                eprintln!(
                    "FAIL {} run {run_id}: status {:?}",
                    protocol.name(),
                    outcome.result.status
                );
            }
        }
        eprintln!("{}: exactness checked", protocol.name());
    }
    if failures > 0 {
        return Err(Error::Runtime(format!("{failures} selftest failures")));
    }
    eprintln!("selftest passed");
    Ok(())
}
