//! `stallwatch` command line: fixture generation, training, evaluation,
//! serving, ingestion and benchmarking.

pub mod bench;

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use stallwatch_core::dataset::{self, scan_tree, split, synth_generate_lot};
use stallwatch_core::detector::{fine_tune, Hyperparams, Model, ModelSpec};
use stallwatch_core::eval::{self, Design, ExperimentPlan};
use stallwatch_service::ingest::{run_registry_scheduler, IngestError, Shutdown};
use stallwatch_service::web::{self, AppState};
use stallwatch_service::{Config, Ingestor, Registry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Fraction of each lot used for training; the rest is held out.
const SPLIT_RATIO: f64 = 0.5;
const SPLIT_SEED: u64 = 0;
const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
const CAMERA_REFRESH: Duration = Duration::from_secs(5);

#[derive(Debug, Parser)]
#[command(
    name = "stallwatch",
    version,
    about = "Parking stall vacancy detection",
    arg_required_else_help = true
)]
struct Cli {
    /// Seed for weight init, batch sampling and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log filter, e.g. `info` or `stallwatch_service=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic labeled crops in the dataset directory layout.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Crops per label per lot.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Comma-separated lot names.
        #[arg(long, value_delimiter = ',', default_value = "SYNTH")]
        lots: Vec<String>,
    },
    /// Fine-tune a fresh desk-scale model on the training half of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict training to these lots (default: all).
        #[arg(long, value_delimiter = ',')]
        lots: Vec<String>,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Score a saved model on the held-out half of the test lots.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Lots the model was trained on (used for report naming).
        #[arg(long, value_delimiter = ',', required = true)]
        train_lots: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        test_lots: Vec<String>,
        /// Evaluate all test lots as one pooled set.
        #[arg(long)]
        pooled: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train and evaluate every combination of one experimental design.
    CrossEval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        design: DesignArg,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `server.listen` from the config.
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// Also poll cameras in this process.
        #[arg(long)]
        ingest: bool,
    },
    /// Poll cameras and update stall status.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Run a single cycle over every lot and exit.
        #[arg(long)]
        once: bool,
    },
    /// Time single-crop inference and project a whole-lot refresh.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = bench::DEFAULT_STALLS)]
        stalls: usize,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DesignArg {
    Single,
    Cross,
    Multi,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Design {
        match d {
            DesignArg::Single => Design::Single,
            DesignArg::Cross => Design::Cross,
            DesignArg::Multi => Design::Multi,
        }
    }
}

#[derive(Debug, Args)]
struct HpArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    /// Train the conv layers too.
    #[arg(long)]
    no_freeze: bool,
}

impl HpArgs {
    fn resolve(&self, seed: u64) -> Hyperparams {
        let mut hp = Hyperparams {
            seed,
            freeze_conv: !self.no_freeze,
            ..Hyperparams::default()
        };
        if let Some(v) = self.iterations {
            hp.iterations = v;
        }
        if let Some(v) = self.batch_size {
            hp.batch_size = v;
        }
        if let Some(v) = self.lr {
            hp.lr = v;
        }
        if let Some(v) = self.weight_decay {
            hp.weight_decay = v;
        }
        hp
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    init_logging(&cli.log_level);
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::SynthData { out, n, lots } => synth_data(&out, n, &lots, seed),
        Command::Train {
            data,
            out,
            lots,
            hp,
        } => train(&data, &out, &lots, &hp.resolve(seed), seed),
        Command::Eval {
            model,
            data,
            train_lots,
            test_lots,
            pooled,
            out,
        } => evaluate(&model, &data, &train_lots, &test_lots, pooled, &out),
        Command::CrossEval {
            data,
            design,
            out,
            hp,
        } => cross_eval(&data, design.into(), &out, &hp.resolve(seed), seed),
        Command::Serve {
            config,
            listen,
            ingest,
        } => runtime()?.block_on(serve(&config, listen, ingest)),
        Command::Ingest { config, once } => runtime()?.block_on(ingest(&config, once)),
        Command::Bench {
            model,
            n,
            stalls,
            out,
        } => bench_cmd(&model, n, stalls, out.as_deref(), seed),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn synth_data(out: &Path, n: usize, lots: &[String], seed: u64) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    for lot in lots {
        synth_generate_lot(out, lot, n, seed).with_context(|| format!("generating lot {lot}"))?;
    }
    println!("wrote {} crops to {}", 2 * n * lots.len(), out.display());
    Ok(())
}

fn train(data: &Path, out: &Path, lots: &[String], hp: &Hyperparams, seed: u64) -> Result<()> {
    let index = scan_tree(data)?;
    let (train, _) = split(&index, SPLIT_RATIO, SPLIT_SEED)?;
    let train = if lots.is_empty() {
        train
    } else {
        train.filter_lots(lots)?
    };
    let mut model = Model::build(ModelSpec::desk().with_seed(seed))?;
    model.set_channel_means(dataset::channel_means(&train)?);
    let report = fine_tune(&mut model, &train, hp)?;
    model
        .save(out)
        .with_context(|| format!("saving model to {}", out.display()))?;
    println!(
        "trained on {} crops: train accuracy {:.4}, {:.1}s, model written to {}",
        train.len(),
        report.final_train_accuracy,
        report.wall_time_s,
        out.display()
    );
    Ok(())
}

fn evaluate(
    model: &Path,
    data: &Path,
    train_lots: &[String],
    test_lots: &[String],
    pooled: bool,
    out: &Path,
) -> Result<()> {
    let model = Model::load(model).with_context(|| format!("loading {}", model.display()))?;
    let index = scan_tree(data)?;
    let (_, test) = split(&index, SPLIT_RATIO, SPLIT_SEED)?;
    let reports = eval::evaluate(&model, &test, train_lots, test_lots, pooled)?;
    eval::emit(&reports, out)?;
    for r in &reports {
        println!("{} -> {}: auc {:.6}", r.train_name(), r.test_name(), r.auc);
    }
    Ok(())
}

fn cross_eval(data: &Path, design: Design, out: &Path, hp: &Hyperparams, seed: u64) -> Result<()> {
    let index = scan_tree(data)?;
    let lots = index.lots();
    let plans = ExperimentPlan::for_design(design, &lots, &ModelSpec::desk().with_seed(seed), hp);
    if plans.is_empty() {
        bail!("design needs more lots than the {} found", lots.len());
    }
    let mut reports = Vec::new();
    for plan in &plans {
        reports.extend(eval::run_experiment_on(plan, &index)?.reports);
    }
    eval::emit(&reports, out)?;
    for r in &reports {
        println!("{} -> {}: auc {:.6}", r.train_name(), r.test_name(), r.auc);
    }
    Ok(())
}

fn open_registry(cfg: &Config) -> Result<Arc<Registry>> {
    let dir = &cfg.server.data_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let registry = Registry::open_dir(dir)?;
    cfg.apply(&registry)?;
    Ok(Arc::new(registry))
}

fn ingestor(cfg: &Config, registry: Arc<Registry>) -> Result<Ingestor> {
    let Some(path) = &cfg.server.model else {
        bail!("server.model is not set in the config");
    };
    let model = Model::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Ingestor::new(registry, Box::new(model)))
}

async fn ctrl_c(shutdown: Shutdown) {
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
    shutdown.trigger();
}

async fn serve(config: &Path, listen: Option<SocketAddr>, with_ingest: bool) -> Result<()> {
    let cfg = Config::load(config)?;
    let registry = open_registry(&cfg)?;
    let addr = match listen.or(cfg.server.listen) {
        Some(a) => a,
        None => DEFAULT_LISTEN.parse()?,
    };
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");

    let (shutdown, mut rx) = Shutdown::new();
    let scheduler = if with_ingest {
        let ing = Arc::new(ingestor(&cfg, Arc::clone(&registry))?);
        Some(tokio::spawn(run_registry_scheduler(
            ing,
            CAMERA_REFRESH,
            rx.clone(),
        )))
    } else {
        None
    };
    tokio::spawn(ctrl_c(shutdown));
    let state = AppState {
        registry,
        admin_token: cfg.server.admin_token.clone(),
    };
    web::serve(state, listener, async move {
        let _ = rx.wait_for(|stop| *stop).await;
    })
    .await?;
    if let Some(s) = scheduler {
        s.await?;
    }
    Ok(())
}

async fn ingest(config: &Path, once: bool) -> Result<()> {
    let cfg = Config::load(config)?;
    let registry = open_registry(&cfg)?;
    let ing = Arc::new(ingestor(&cfg, Arc::clone(&registry))?);
    if !once {
        let (shutdown, rx) = Shutdown::new();
        tokio::spawn(ctrl_c(shutdown));
        run_registry_scheduler(ing, CAMERA_REFRESH, rx).await;
        return Ok(());
    }
    for lot in registry.list_lots()? {
        match ing.ingest_cycle(&lot.lot_id).await {
            Ok(stats) => {
                let s = registry.summary(&lot.lot_id)?;
                println!(
                    "{}: {} stalls updated, {} camera failures, {}/{} free",
                    lot.lot_id, stats.stalls_updated, stats.failures, s.free, s.total
                );
            }
            Err(IngestError::NoCameras(_)) => {
                tracing::warn!(lot = %lot.lot_id, "no cameras, skipped")
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn bench_cmd(model: &Path, n: usize, stalls: usize, out: Option<&Path>, seed: u64) -> Result<()> {
    let model = Model::load(model).with_context(|| format!("loading {}", model.display()))?;
    let report = bench::bench(&model, n, stalls, seed)?;
    let csv = report.to_csv();
    if let Some(path) = out {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{csv}");
    Ok(())
}
