use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use lobwatch::book::replay;
use lobwatch::dataset::write_dataset;
use lobwatch::feed::{read_feed_file, split_by_instrument, write_feed_file};
use lobwatch::labeler::{label_stream, variant_params};
use lobwatch::oracle::{OracleAssessor, OracleParams};
use lobwatch::pipeline::{evaluate_model, stream_refs, train_model, ExperimentConfig, StreamRef};
use lobwatch::service::http::{serve, AppState};
use lobwatch::service::{scan_events, Status, Store, DEFAULT_THRESHOLD};
use lobwatch::sim::{generate, write_episodes};
use lobwatch::tcn::{load_checkpoint, save_checkpoint};
use lobwatch::tensorize::{build_windows, ClassMode};

#[derive(Parser)]
#[command(name = "lobwatch", version, about = "Order-book spoofing surveillance")]
struct Cli {
    /// Experiment configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the simulation and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feed (`feed.lob`) and its ground truth (`episodes.jsonl`).
    Simulate,
    /// Weakly label a feed and write windows as JSONL.
    Label {
        #[arg(long)]
        feed: PathBuf,
        /// Use the validation variant of the rule.
        #[arg(long)]
        variant: bool,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Train a model on a feed, or on a fresh simulation when no feed is given.
    Train {
        #[arg(long)]
        feed: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
    /// Report validation metrics of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        feed: Option<PathBuf>,
    },
    /// Scan a feed and add alerts to the store.
    Scan {
        #[arg(long)]
        feed: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Re-rank the stored alerts and print the queue.
    Rank {
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long)]
        status: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Default checkpoint for scan jobs.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Annotate every new alert with the oracle, using the feed it came from.
    OracleAnnotate {
        #[arg(long)]
        feed: PathBuf,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
        cfg.hyper.seed = seed;
        cfg.tcn.seed = seed;
    }
    Ok(cfg)
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

fn feed_streams(path: &Path) -> Result<Vec<(u32, Vec<lobwatch::book::BookEvent>)>> {
    let events = read_feed_file(path).with_context(|| format!("reading feed {}", path.display()))?;
    Ok(split_by_instrument(&events))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;

    match &cli.command {
        Command::Simulate => {
            let out = cli.out.clone().unwrap_or_else(|| "sim".into());
            fs::create_dir_all(&out)?;
            let sim = generate(&cfg.sim)?;
            let mut events: Vec<_> = sim.all_events().copied().collect();
            events.sort_by_key(|e| (e.timestamp, e.instrument_id));
            write_feed_file(out.join("feed.lob"), &events)?;
            write_episodes(out.join("episodes.jsonl"), &sim.episodes)?;
            print(json!({ "events": events.len(), "episodes": sim.episodes.len(), "dir": out }));
        }
        Command::Label { feed, variant, stride } => {
            let params = if *variant { variant_params(&cfg.labeler) } else { cfg.labeler };
            let mut windows = Vec::new();
            let mut positive = 0;
            for (id, events) in feed_streams(feed)? {
                let snaps = replay(&events)?;
                let labels = label_stream(&events, &snaps, &params)?;
                positive += labels.iter().filter(|&&y| y != 0).count();
                windows.extend(build_windows(id, &snaps, &labels, cfg.window, stride.unwrap_or(cfg.stride))?);
            }
            let out = cli.out.clone().unwrap_or_else(|| "labelled.jsonl".into());
            write_dataset(&out, &windows)?;
            print(json!({ "windows": windows.len(), "positive_timesteps": positive, "out": out }));
        }
        Command::Train { feed, classes } => {
            let mode = ClassMode::from_count(*classes)?;
            let on_epoch = |r: &lobwatch::tcn::EpochRecord| {
                tracing::info!(
                    epoch = r.epoch,
                    train_loss = r.train_loss,
                    val_loss = r.val_loss,
                    val_accuracy = r.val_accuracy,
                    val_macro_f1 = r.val_macro_f1
                )
            };
            let ckpt = match feed {
                Some(f) => train_model(&stream_refs(&feed_streams(f)?), &cfg, mode, on_epoch)?,
                None => train_model(&stream_refs(&generate(&cfg.sim)?.streams), &cfg, mode, on_epoch)?,
            };
            let out = cli.out.clone().unwrap_or_else(|| "model".into());
            save_checkpoint(&out, &ckpt)?;
            print(json!({ "checkpoint": out, "validation": ckpt.metrics }));
        }
        Command::Evaluate { checkpoint, feed } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let metrics = match feed {
                Some(f) => evaluate_model(&stream_refs(&feed_streams(f)?), &cfg, &ckpt)?,
                None => evaluate_model(&stream_refs(&generate(&cfg.sim)?.streams), &cfg, &ckpt)?,
            };
            print(serde_json::to_value(metrics)?);
        }
        Command::Scan { feed, checkpoint, data_dir, threshold } => {
            if !checkpoint.is_dir() {
                bail!("no checkpoint at {}", checkpoint.display());
            }
            let ckpt = load_checkpoint(checkpoint)?;
            let events = read_feed_file(feed)?;
            let cands = scan_events(&events, &ckpt, *threshold, |_| {})?;
            let mut store = Store::open(data_dir)?;
            let added = store.add_candidates(cands)?;
            print(json!({ "new_alerts": added.len(), "total_alerts": store.len() }));
        }
        Command::Rank { data_dir, status, limit } => {
            let mut store = Store::open(data_dir)?;
            store.rerank()?;
            let status: Option<Status> = status.as_deref().map(str::parse).transpose()?;
            print(serde_json::to_value(store.list(status, *limit))?);
        }
        Command::Serve { port, data_dir, checkpoint, threshold, host } => {
            let state = AppState::new(Store::open(data_dir)?, checkpoint.clone(), *threshold);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(SocketAddr::new(*host, *port), state))?;
        }
        Command::OracleAnnotate { feed, data_dir } => {
            let params = OracleParams { base: cfg.labeler, ..OracleParams::default() };
            let mut store = Store::open(data_dir)?;
            let mut counts = [0usize; 3];
            for stream in feed_streams(feed)? {
                let s = StreamRef::from(&stream);
                let pending: Vec<(u64, lobwatch::tensorize::WindowRef)> = store
                    .alerts()
                    .filter(|r| r.status == Status::New && r.alert.window.instrument_id == s.instrument_id)
                    .map(|r| (r.alert.alert_id, r.alert.window))
                    .collect();
                if pending.is_empty() {
                    continue;
                }
                let snaps = replay(s.events)?;
                let oracle = OracleAssessor::new(s.instrument_id, s.events, &snaps, &params)?;
                for (id, w) in pending {
                    let ann = oracle.assess(&w)?;
                    counts[ann.label as usize] += 1;
                    store.record(id, ann)?;
                }
            }
            print(json!({ "annotated": counts.iter().sum::<usize>(), "by_label": counts, "exemplars": store.exemplar_count() }));
        }
    }
    Ok(())
}
