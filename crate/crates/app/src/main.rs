use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use svoa_app::config::{AppConfig, EmbeddingProvider};
use svoa_app::query::{render_response, LoadedIndex, QueryRequest};
use svoa_app::server::AppState;
use svoa_app::{backends, commands};
use svoa_core::analysis::DEFAULT_CLUSTER_COUNT;
use svoa_core::embedding::DEFAULT_HASH_DIMENSION;
use svoa_core::eval::{SyntheticConfig, WeightSearchConfig};
use svoa_core::extraction::ExtractionMode;
use svoa_core::ComponentKind;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "svoa",
    version,
    about = "Conversational retrieval over SVOA semantic indices"
)]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true, env = "SVOA_CONFIG")]
    config: Option<PathBuf>,

    /// Use the rule-based extractor and hashed embeddings instead of remote backends.
    #[arg(long, global = true)]
    offline: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterKind {
    Sv,
    Svo,
    Svoa,
}

impl From<ClusterKind> for ComponentKind {
    fn from(k: ClusterKind) -> Self {
        match k {
            ClusterKind::Sv => ComponentKind::SV,
            ClusterKind::Svo => ComponentKind::SVO,
            ClusterKind::Svoa => ComponentKind::SVOA,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract, embed and index a corpus of conversations.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<ExtractionMode>,
        #[arg(long)]
        context_k: Option<usize>,
    },
    /// Rank indexed conversations against a query.
    Query {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        text: String,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        combination: Option<String>,
        #[arg(long)]
        bm25_weight: Option<f64>,
        /// Print the JSON response instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a combination against labelled queries.
    Eval {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        combination: Option<String>,
        #[arg(long)]
        bm25_weight: Option<f64>,
    },
    /// Random search for component weights.
    OptimizeWeights {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        combination: Option<String>,
        #[arg(long, default_value = "ndcg@20")]
        objective: String,
    },
    /// k-means over SV, SVO or SVOA instances.
    Cluster {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: ClusterKind,
        #[arg(long, default_value_t = DEFAULT_CLUSTER_COUNT)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the index over HTTP.
    Serve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Write a synthetic corpus and labelled queries.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        conversations: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn index_path(cfg: &AppConfig, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    flag.or_else(|| cfg.paths.index.clone())
        .context("no index given: pass --index or set paths.index in the config")
}

fn load_config(cli: &Cli) -> anyhow::Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if cli.offline {
        let dimension = match cfg.embedding.provider {
            EmbeddingProvider::Hashed => cfg.embedding.dimension,
            EmbeddingProvider::Openai => DEFAULT_HASH_DIMENSION,
        };
        let mut offline = AppConfig::offline(dimension);
        offline.extraction = cfg.extraction;
        offline.scoring = cfg.scoring;
        offline.paths = cfg.paths;
        offline.server = cfg.server;
        offline.embedding.instruction_prefix = cfg.embedding.instruction_prefix;
        offline.embedding.batch_size = cfg.embedding.batch_size;
        cfg = offline;
    }
    Ok(cfg)
}

fn serve(cfg: AppConfig, path: &Path, bind: &str) -> anyhow::Result<()> {
    let embedder = backends::embedder(&cfg)?;
    let index = LoadedIndex::open(path, &embedder).with_context(|| format!("loading {}", path.display()))?;
    let state = Arc::new(AppState::new(index, embedder, cfg, Some(path.to_path_buf())));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        tracing::info!(addr = %listener.local_addr()?, "serving");
        svoa_app::server::serve(state.clone(), listener).await?;
        anyhow::Ok(())
    })?;
    drop(runtime);
    drop(state);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest {
            corpus,
            out,
            mode,
            context_k,
        } => {
            if let Some(mode) = mode {
                cfg.extraction.mode = mode;
            }
            if let Some(k) = context_k {
                cfg.extraction.context_k = k;
            }
            let summary = commands::ingest(&cfg, &corpus, &out)?;
            println!("{summary}");
        }
        Command::Query {
            index,
            text,
            top_k,
            combination,
            bm25_weight,
            json,
        } => {
            let path = index_path(&cfg, index)?;
            let req = QueryRequest {
                text,
                top_k,
                combination,
                weights: None,
                bm25_weight,
            };
            let resp = commands::query(&cfg, &path, &req)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&resp)?);
            } else {
                print!("{}", render_response(&resp));
            }
        }
        Command::Eval {
            index,
            queries,
            combination,
            bm25_weight,
        } => {
            let path = index_path(&cfg, index)?;
            let report = commands::eval(&cfg, &path, &queries, combination.as_deref(), bm25_weight)?;
            print!("{}", report.to_table());
        }
        Command::OptimizeWeights {
            index,
            queries,
            samples,
            seed,
            combination,
            objective,
        } => {
            let path = index_path(&cfg, index)?;
            let search = WeightSearchConfig {
                sample_count: samples,
                seed,
                objective,
                ..WeightSearchConfig::default()
            };
            let result = commands::optimize(&cfg, &path, &queries, combination.as_deref(), &search)?;
            print!("{}", commands::render_weights(&result));
        }
        Command::Cluster { index, kind, k, seed } => {
            let path = index_path(&cfg, index)?;
            let report = commands::cluster(&path, kind.into(), k, seed)?;
            print!("{}", report.to_table());
        }
        Command::Serve { index, bind } => {
            let path = index_path(&cfg, index)?;
            serve(cfg, &path, &bind)?;
        }
        Command::Synth {
            out_dir,
            conversations,
            queries,
            seed,
        } => {
            let synth = SyntheticConfig {
                seed,
                conversations,
                queries,
                ..SyntheticConfig::default()
            };
            let (c, q) = commands::synth(&out_dir, &synth)?;
            println!("wrote {} and {}", c.display(), q.display());
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
