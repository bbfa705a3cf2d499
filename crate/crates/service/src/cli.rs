//! `chroma` subcommands.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use thiserror::Error;

use chroma_core::colorspace::{ColorError, RgbImage};
use chroma_core::data::{DataError, ImageCorpus};
use chroma_core::eval::{colorize, evaluate_model, EvalError};
use chroma_core::study::{parse_store, session_results, Study, StudyError, StudyPool, StudySettings};
use chroma_core::trainer::{fit, load_generator, TrainConfig, TrainError, TrainState, CHECKPOINT_FILE};

use crate::api::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "chroma", version, about = "Adversarial image colorization in CIE Lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics.log and checkpoint.lab under --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Image directory or a manifest listing one path per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from --out/checkpoint.lab, taking only `epochs` and
        /// `max_steps` from --config.
        #[arg(long)]
        resume: bool,
    },
    /// Colorize one image at its own resolution.
    Colorize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Chrominance PSNR over a corpus, against the zero-chroma baseline.
    /// Writes a text report and a JSON record beside it.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Serve the realism study over HTTP.
    StudyServe {
        /// Tab-separated manifest of image_id, method_id, path.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        k: usize,
        /// Per-image display limit, enforced by the client.
        #[arg(long)]
        time_limit_ms: Option<u64>,
        #[arg(long, default_value = "judgments.jsonl")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Enables GET /v1/results for requests carrying this token.
        #[arg(long, env = "STUDY_OPERATOR_TOKEN")]
        operator_token: Option<String>,
    },
    /// Per-method naturalness from a judgment store.
    StudyReport {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        pool: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Image(#[from] ColorError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            corpus,
            out,
            resume,
        } => {
            let config = TrainConfig::load(&config)?;
            // A resumed run keeps its stored configuration except for its length.
            let mut state = if resume {
                let mut s = TrainState::load(&out.join(CHECKPOINT_FILE))?;
                s.config.epochs = config.epochs;
                s.config.max_steps = config.max_steps;
                s
            } else {
                TrainState::new(config)?
            };
            let source = ImageCorpus::open(&corpus, state.config.side)?;
            let reports = fit(&mut state, &source, &out)?;
            let last = reports.last().map_or(f64::NAN, |r| r.color_error);
            println!(
                "trained to step {} ({} new steps, last color_error {last:.6}); checkpoint {}",
                state.step,
                reports.len(),
                out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Colorize { checkpoint, input, out } => {
            let mut g = load_generator(&checkpoint)?;
            let img = RgbImage::load(&input)?;
            colorize(&mut g, &img)?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            report,
        } => {
            let mut g = load_generator(&checkpoint)?;
            let images = ImageCorpus::open(&corpus, g.config().input_side)?;
            let r = evaluate_model(&mut g, images.paths())?;
            fs::write(&report, r.to_text()).map_err(io(&report))?;
            let json = report.with_extension("json");
            fs::write(&json, r.to_json()).map_err(io(&json))?;
            println!(
                "{} images ({} failed): mean psnr {:.4} dB, baseline {:.4} dB",
                r.image_count,
                r.failures.len(),
                r.mean_psnr,
                r.baseline_mean_psnr
            );
        }
        Command::StudyServe {
            pool,
            port,
            seed,
            k,
            time_limit_ms,
            store,
            host,
            operator_token,
        } => {
            let pool = StudyPool::load(&pool)?;
            let seed = seed.unwrap_or_else(|| {
                SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64) ^ std::process::id() as u64
            });
            let settings = StudySettings { k, seed, time_limit_ms };
            let study = Study::open(pool, settings, &store)?;
            let state = Arc::new(AppState {
                study: Mutex::new(study),
                operator_token,
            });
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::Io(host.clone(), std::io::Error::new(std::io::ErrorKind::InvalidInput, e)))?;
            serve(addr, state).map_err(|e| CliError::Io(addr.to_string(), e))?;
        }
        Command::StudyReport { store, pool } => {
            let text = fs::read_to_string(&pool).map_err(io(&pool))?;
            let base = pool.parent().unwrap_or(Path::new("."));
            let pool = StudyPool::parse(&text, base, &pool.display().to_string())?;
            let records = parse_store(&fs::read_to_string(&store).map_err(io(&store))?)?;
            print!("{}", session_results(&pool, &records)?.to_text());
        }
    }
    Ok(())
}

fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("study server listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}
