use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use prk_core::bench::{self, CurveKind, ExperimentConfig};
use prk_core::dp::PrivacyBudget;
use prk_core::geometry::Route;
use prk_core::he::{keygen, HEKeyPair, KeyPolicy};
use prk_core::ot::OtGroup;
use prk_core::protocol::wire::Info;
use prk_core::protocol::{run_session, serve, ClientConfig, CloudConfig, Message, Mode, Privacy, TcpTransport, Transport};
use prk_core::rng::env_seed;
use prk_core::store::Store;
use prk_core::{NormalizedEmbedding, RandomSource};
use serde_json::json;

/// Private nearest-neighbour retrieval over an untrusted vector store.
#[derive(Parser)]
#[command(name = "prk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a store to retrieval clients.
    Serve(ServeArgs),
    /// Convert a JSONL or binary store file.
    Ingest(IngestArgs),
    /// Run one private retrieval against a server.
    Query(QueryArgs),
    /// Generate an encryption key pair.
    Keygen(KeygenArgs),
    /// Run an experiment and write CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7420")]
    listen: String,
    /// Accept 1024-bit keys and use a small OT group. For testing only.
    #[arg(long)]
    insecure_test_params: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Bin,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    format: Format,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    addr: String,
    /// JSON array of numbers, or a JSON record with an "embedding" field.
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, conflicts_with = "k_prime")]
    epsilon: Option<f64>,
    /// Candidate-range size to calibrate the budget to.
    #[arg(long)]
    k_prime: Option<usize>,
    #[arg(long, default_value = "standard")]
    mode: Mode,
    #[arg(long)]
    report_costs: bool,
    /// Key file from `prk keygen`; a fresh 2048-bit pair is generated otherwise.
    #[arg(long)]
    keys: Option<PathBuf>,
    /// Safety factor applied to the candidate-range expansion.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Send the query in two client messages instead of one.
    #[arg(long)]
    unmerged: bool,
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, default_value_t = 2048)]
    bits: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Recall,
    Curves,
    Pipeline,
}

#[derive(Args)]
struct BenchArgs {
    experiment: Experiment,
    /// key = value file; defaults apply to anything unset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Store file whose records replace the synthetic corpus.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Serve(args) => cmd_serve(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Query(args) => cmd_query(args),
        Command::Keygen(args) => cmd_keygen(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn load_store(path: &Path) -> Result<Store> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Store::read_any(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let store = Arc::new(load_store(&args.store)?);
    let config = if args.insecure_test_params { CloudConfig::for_tests() } else { CloudConfig::default() };
    let listener = TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    eprintln!("serving {} records of dimension {}", store.len(), store.dim());
    serve(listener, store, config, env_seed())?;
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let store = load_store(&args.input)?;
    let mut out = create(&args.out)?;
    match args.format {
        Format::Jsonl => store.write_jsonl(&mut out)?,
        Format::Bin => store.write_binary(&mut out)?,
    }
    out.flush()?;
    eprintln!("wrote {} records of dimension {} to {}", store.len(), store.dim(), args.out.display());
    Ok(())
}

fn read_embedding(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).context("embedding file is not JSON")?;
    let array = match &value {
        serde_json::Value::Object(map) => map.get("embedding").context("record has no \"embedding\" field")?,
        other => other,
    };
    Ok(serde_json::from_value(array.clone()).context("embedding must be an array of numbers")?)
}

fn fetch_info(transport: &mut TcpTransport) -> Result<Info> {
    transport.send(&Message::Hello.encode())?;
    match Message::decode(&transport.recv()?)? {
        Message::Info(info) => Ok(info),
        Message::Error { code, message } => bail!("server error {code}: {message}"),
        other => bail!("unexpected reply to HELLO: {other:?}"),
    }
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let mut rng = RandomSource::from_env_or_entropy();
    let query = NormalizedEmbedding::normalize(read_embedding(&args.embedding)?)?;
    let mut transport = TcpTransport::connect(&args.addr).with_context(|| format!("connecting to {}", args.addr))?;
    let info = fetch_info(&mut transport)?;
    if query.len() != info.dim as usize {
        bail!("query has dimension {}, store has {}", query.len(), info.dim);
    }

    let privacy = match (args.epsilon, args.k_prime) {
        (Some(e), _) => Privacy::Epsilon(PrivacyBudget::new(e)?),
        (None, Some(t)) => Privacy::TargetKPrime(t),
        (None, None) if args.mode == Mode::Standard => bail!("standard mode needs --epsilon or --k-prime"),
        (None, None) => Privacy::TargetKPrime(args.k),
    };
    let mut config = ClientConfig::new(args.k, privacy, info.corpus_size as usize)
        .with_mode(args.mode)
        .with_ot_group(OtGroup::new(info.ot_prime, info.ot_generator)?);
    config.safety_factor = args.gamma;
    if args.unmerged {
        config = config.unmerged();
    }

    let keys = match (&args.keys, args.mode) {
        (_, Mode::PrivacyIgnorant) => None,
        (Some(path), _) => Some(HEKeyPair::from_bytes(&std::fs::read(path)?)?),
        (None, _) => {
            eprintln!("generating a 2048-bit key pair");
            Some(keygen(2048, KeyPolicy::Production, &mut rng)?)
        }
    };

    let result = run_session(&query, config, keys.as_ref(), &mut transport, &mut rng)?;
    let plan = &result.plan;
    let mut output = json!({
        "mode": plan.mode.to_string(),
        "route": match plan.route {
            Route::Direct => "direct",
            Route::ObliviousTransfer => "ot",
        },
        "k": plan.k,
        "k_prime": plan.k_prime,
        "delta_alpha": plan.realized_delta_alpha.radians(),
        "documents": result.documents.iter().map(|d| String::from_utf8_lossy(d)).collect::<Vec<_>>(),
    });
    if args.report_costs {
        let report = &result.report;
        output["costs"] = json!({
            "rounds": report.rounds,
            "beta_units": report.beta_units,
            "eta_units": report.eta_units,
            "total_bytes": report.total_bytes,
            "bytes_by_phase": report.bytes_by_phase,
            "seconds_by_phase": report
                .client_timings
                .iter()
                .map(|(phase, t)| (*phase, t.as_secs_f64()))
                .collect::<std::collections::BTreeMap<_, _>>(),
        });
    }
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

fn cmd_keygen(args: KeygenArgs) -> Result<()> {
    let policy = if args.bits < 2048 {
        eprintln!("warning: {}-bit keys are for testing only", args.bits);
        KeyPolicy::Test
    } else {
        KeyPolicy::Production
    };
    let keys = keygen(args.bits, policy, &mut RandomSource::from_env_or_entropy())?;
    std::fs::write(&args.out, keys.to_bytes()).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::parse(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if args.embeddings.is_some() {
        config.embeddings = args.embeddings;
    }
    let csv = match args.experiment {
        Experiment::Recall => {
            let result = bench::recall_experiment(&config)?;
            eprintln!(
                "mean recall {:.4}, {}/{} trials at full recall",
                result.mean,
                result.full_recall_trials(),
                result.per_trial.len()
            );
            result.to_csv()
        }
        Experiment::Curves => bench::emit_curves(config.curve.unwrap_or(CurveKind::GammaPdf), &config)?,
        Experiment::Pipeline => {
            let routes = match config.force_route {
                Some(route) => vec![route],
                None => vec![Route::Direct, Route::ObliviousTransfer],
            };
            bench::pipeline_csv(&bench::bench_pipeline(&config, &routes)?)
        }
    };
    std::fs::write(&args.out, csv).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
