//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 plant error, 4 unsupported model document version.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mdp::MdpModel;
use crate::persist::{ModelDocument, Provenance, Stage};
use crate::plants::{serve, LorenzParams, LorenzPlant, Plant, PlantTrace, RecordingPlant};
use crate::runner::{self, Artifacts, CostOptions, PlantSource, PolicyKind, RolloutOptions};

pub const LOG_ENV: &str = "LSHCTL_LOG";

#[derive(Debug, Parser)]
#[command(name = "lshctl", version, about = "Hash-discretized MDP control of sampled plants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the unactuated calibration phase and write a model document.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Output document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn rewards and Q-factors on top of a calibrated document.
    Learn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Output document (defaults to overwriting --model).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare NULL, ORACLE and learned policies across the configured seeds.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Output directory for the summary and per-tick logs.
        #[arg(long)]
        out: PathBuf,
        /// Logged ticks per rollout (defaults to the configuration).
        #[arg(long)]
        ticks: Option<usize>,
    },
    /// Run one closed-loop episode and write its per-tick CSV.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ticks: Option<usize>,
        /// learned, null or constant:<a>
        #[arg(long, default_value = "learned")]
        policy: String,
        /// Also write the raw plant exchange (every tick, including warm-up).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Plant that echoes the action plus a fixed multi-sine signal.
    #[command(hide = true)]
    ServeEcho {
        #[arg(long)]
        listen: Option<String>,
        /// Reply with the action itself and zero performance.
        #[arg(long)]
        plain: bool,
    },
    /// Plant that replays a recorded trace.
    #[command(hide = true)]
    ServeReplay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Built-in Lorenz plant served over the protocol.
    #[command(hide = true)]
    ServeLorenz {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Seed for the plant initial condition and exploration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// lorenz, exec:<command> or tcp:<address> (defaults to the configuration).
    #[arg(long)]
    pub plant: Option<String>,
}

enum Failure {
    Config(Error),
    Plant(Error),
    Version(Error),
    Other(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Plant(_) => 3,
            Failure::Version(_) => 4,
        }
    }

    fn error(&self) -> &Error {
        match self {
            Failure::Config(e) | Failure::Plant(e) | Failure::Version(e) | Failure::Other(e) => e,
        }
    }
}

// Errors raised while talking to a plant.
fn plant_err(e: Error) -> Failure {
    match e {
        Error::Config(_) => Failure::Config(e),
        e if e.is_plant_error() => Failure::Plant(e),
        e => Failure::Other(e),
    }
}

fn other(e: Error) -> Failure {
    Failure::Other(e)
}

pub fn run(cli: Cli) -> ExitCode {
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lshctl: {}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(common: &Common) -> std::result::Result<(ExperimentConfig, PlantSource), Failure> {
    let cfg = ExperimentConfig::load(&common.config).map_err(|e| Failure::Config(Error::Config(e.to_string())))?;
    let source = match common.plant.as_deref() {
        None => PlantSource::from_config(&cfg.plant),
        Some(spec) => parse_plant(spec, &cfg),
    }
    .map_err(Failure::Config)?;
    Ok((cfg, source))
}

fn parse_plant(spec: &str, cfg: &ExperimentConfig) -> Result<PlantSource> {
    let (dt, timeout) = (cfg.plant.dt(), cfg.plant.timeout());
    if spec == "lorenz" {
        let params = cfg.plant.lorenz_params().unwrap_or_default();
        let sensor_noise = match cfg.plant {
            crate::config::PlantConfig::Lorenz { sensor_noise, .. } => sensor_noise,
            _ => 0.0,
        };
        Ok(PlantSource::Lorenz { params, sensor_noise })
    } else if let Some(command) = spec.strip_prefix("exec:") {
        Ok(PlantSource::Exec { command: command.to_string(), dt, timeout })
    } else if let Some(address) = spec.strip_prefix("tcp:") {
        Ok(PlantSource::Tcp { address: address.to_string(), dt, timeout })
    } else {
        Err(Error::Config(format!("unknown plant {spec:?}; use lorenz, exec:<cmd> or tcp:<addr>")))
    }
}

fn load_model(path: &Path) -> std::result::Result<(ModelDocument, Artifacts), Failure> {
    let doc = ModelDocument::load(path).map_err(|e| match e {
        Error::FormatVersion { .. } => Failure::Version(e),
        Error::Io(io) => Failure::Other(Error::Document(format!("cannot read {}: {io}", path.display()))),
        e => Failure::Other(e),
    })?;
    let artifacts = doc.to_artifacts().map_err(other)?;
    Ok((doc, artifacts))
}

fn check_compatible(cfg: &ExperimentConfig, artifacts: &Artifacts) -> std::result::Result<(), Failure> {
    if cfg.embedding.ne != artifacts.embedding.ne || cfg.actions != artifacts.grid {
        return Err(Failure::Config(Error::Config(
            "configuration does not match the model document (embedding or action grid)".into(),
        )));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Calibrate { common, out } => calibrate(&common, &out),
        Command::Learn { common, model, out } => learn(&common, &model, out.as_deref().unwrap_or(&model)),
        Command::Evaluate { common, model, out, ticks } => evaluate(&common, &model, &out, ticks),
        Command::Rollout { common, model, out, ticks, policy, trace } => {
            rollout(&common, &model, &out, ticks, &policy, trace.as_deref())
        }
        Command::ServeEcho { listen, plain } => serve_on(listen.as_deref(), "echo", move |tick, a| {
            if plain {
                Ok((a, 0.0))
            } else {
                let y = a + echo_signal(tick);
                Ok((y, y.abs()))
            }
        })
        .map_err(plant_err),
        Command::ServeReplay { trace, listen } => {
            let trace = PlantTrace::read_csv(&trace).map_err(|e| Failure::Config(Error::Config(e.to_string())))?;
            serve_on(listen.as_deref(), "replay", move |tick, a| {
                let row = trace
                    .rows
                    .get(tick as usize - 1)
                    .filter(|r| r.tick == tick)
                    .ok_or_else(|| Error::invalid(format!("trace has no tick {tick}")))?;
                if row.action.to_bits() != a.to_bits() {
                    return Err(Error::invalid(format!(
                        "tick {tick}: action {a} differs from recorded {}",
                        row.action
                    )));
                }
                Ok((row.sensor, row.performance))
            })
            .map_err(plant_err)
        }
        Command::ServeLorenz { config, seed, listen } => {
            let params = match config {
                Some(path) => ExperimentConfig::load(&path)
                    .map_err(Failure::Config)?
                    .plant
                    .lorenz_params()
                    .ok_or_else(|| Failure::Config(Error::Config("configuration is not a Lorenz plant".into())))?,
                None => LorenzParams::default(),
            };
            let mut plant = LorenzPlant::new(params, seed).map_err(Failure::Config)?;
            serve_on(listen.as_deref(), "lorenz", move |_, a| {
                let t = plant.step(a)?;
                Ok((t.sensor, t.performance))
            })
            .map_err(plant_err)
        }
    }
}

/// Deterministic multi-sine excitation for the echo plant.
pub fn echo_signal(tick: u64) -> f64 {
    const FREQS: [f64; 5] = [0.011, 0.037, 0.061, 0.089, 0.131];
    let t = tick as f64;
    FREQS
        .iter()
        .enumerate()
        .map(|(k, f)| (k as f64 + 1.0) * (std::f64::consts::TAU * f * t).sin())
        .sum()
}

fn serve_on<F>(listen: Option<&str>, name: &str, handler: F) -> Result<()>
where
    F: FnMut(u64, f64) -> Result<(f64, f64)>,
{
    let served = match listen {
        None => {
            let stdin = io::stdin();
            serve(stdin.lock(), io::stdout().lock(), name, handler)?
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            let (stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            let reader: Box<dyn BufRead> = Box::new(BufReader::new(stream.try_clone()?));
            serve(reader, stream, name, handler)?
        }
    };
    info!("served {served} ticks");
    Ok(())
}

fn calibrate(common: &Common, out: &Path) -> std::result::Result<(), Failure> {
    let (cfg, source) = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.learning.seed);
    let mut plant = source.open(seed).map_err(plant_err)?;
    let cal = runner::calibrate(&mut plant, &cfg, seed).map_err(plant_err)?;
    let model = MdpModel::new(cal.registry.len(), cfg.actions.len(), cfg.learning.gamma).map_err(other)?;
    let artifacts = Artifacts {
        embedding: cfg.embedding,
        bank: cal.bank.clone(),
        registry: cal.registry.clone(),
        grid: cfg.actions.clone(),
        model,
        lambda: cfg.learning.lambda,
    };
    let mut prov = Provenance::new(seed);
    prov.calibration_ticks = cal.samples.len() as u64;
    prov.correlation_dim = cal.correlation_dim;
    ModelDocument::from_artifacts(&artifacts, Stage::Calibrated, prov)
        .save(out)
        .map_err(other)?;
    println!("Nkey = {}", cal.registry.len());
    match cal.correlation_dim {
        Some(d) => println!("correlation dimension = {d:.4}"),
        None => println!("correlation dimension = n/a"),
    }
    println!("Nv = {} test vectors of length {}", cal.bank.nv(), cal.bank.ne());
    if cal.rank_deficient {
        println!("warning: calibration data is rank deficient");
    }
    Ok(())
}

fn learn(common: &Common, model: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let (cfg, source) = load_config(common)?;
    let (doc, artifacts) = load_model(model)?;
    check_compatible(&cfg, &artifacts)?;
    let seed = common.seed.unwrap_or(doc.provenance.seed);
    let mut plant = source.open(seed).map_err(plant_err)?;
    // Replay the calibration phase so learning resumes where calibration ended.
    let warmup = cfg.embedding.nsnap + cfg.embedding.ne - 1;
    let buffer = runner::prime(&mut plant, warmup, artifacts.bank.ne()).map_err(plant_err)?;
    let learned = runner::learn(
        &mut plant,
        &artifacts.bank,
        artifacts.registry.clone(),
        &artifacts.grid,
        buffer,
        &cfg.learning,
        seed,
    )
    .map_err(plant_err)?;
    let result = Artifacts {
        registry: learned.registry.clone(),
        model: learned.model.clone(),
        lambda: cfg.learning.lambda,
        ..artifacts
    };
    let mut prov = doc.provenance.clone();
    prov.seed = seed;
    prov.reward_ticks = learned.stats.reward_ticks;
    prov.q_ticks = learned.stats.q_ticks;
    ModelDocument::from_artifacts(&result, Stage::Learned, prov)
        .save(out)
        .map_err(other)?;
    let m = &result.model;
    println!("Nkey = {}", result.registry.len());
    println!("observed triples = {} of {}", m.nonzero_transitions(), m.n_states() * m.n_actions() * m.n_states());
    println!("density = {:.6}", m.density());
    println!("reward updates = {}, Q updates = {}", learned.stats.reward_updates, learned.stats.q_updates);
    match learned.failure {
        Some(e) => Err(Failure::Plant(e)),
        None => Ok(()),
    }
}

fn cost_options(cfg: &ExperimentConfig, ticks: Option<usize>) -> CostOptions {
    CostOptions {
        rollout: RolloutOptions {
            ticks: ticks.unwrap_or(cfg.evaluation.ticks),
            engage_time: cfg.evaluation.engage_time,
        },
        gamma: cfg.learning.gamma,
        cost_start_time: cfg.evaluation.cost_start_time,
    }
}

fn evaluate(common: &Common, model: &Path, out: &Path, ticks: Option<usize>) -> std::result::Result<(), Failure> {
    let (cfg, source) = load_config(common)?;
    let (_, artifacts) = load_model(model)?;
    check_compatible(&cfg, &artifacts)?;
    let seeds = match common.seed {
        Some(s) => vec![s],
        None => cfg.evaluation.seeds.clone(),
    };
    let eval = runner::evaluate(&source, &artifacts, &seeds, cost_options(&cfg, ticks)).map_err(plant_err)?;
    std::fs::create_dir_all(out).map_err(|e| other(e.into()))?;
    let with_state = source.is_lorenz();
    for (policy, seed, log) in &eval.logs {
        log.save_csv(&out.join(format!("{policy}_seed{seed}.csv")), with_state)
            .map_err(other)?;
    }
    let summary = std::fs::File::create(out.join("summary.csv")).map_err(|e| other(e.into()))?;
    eval.write_summary(io::BufWriter::new(summary)).map_err(other)?;
    let mut stdout = io::stdout().lock();
    let _ = writeln!(stdout, "oracle action = {} (mean J = {})", eval.oracle.action, eval.oracle.mean_cost);
    let _ = eval.write_summary(&mut stdout);
    Ok(())
}

fn rollout(
    common: &Common,
    model: &Path,
    out: &Path,
    ticks: Option<usize>,
    policy: &str,
    trace: Option<&Path>,
) -> std::result::Result<(), Failure> {
    let (cfg, source) = load_config(common)?;
    let kind: PolicyKind = policy.parse().map_err(|e: Error| Failure::Config(Error::Config(e.to_string())))?;
    let (doc, artifacts) = load_model(model)?;
    check_compatible(&cfg, &artifacts)?;
    let seed = common.seed.unwrap_or(doc.provenance.seed);
    let plant = source.open(seed).map_err(plant_err)?;
    let mut plant = RecordingPlant::new(plant);
    let opts = cost_options(&cfg, ticks).rollout;
    let log = runner::rollout(&mut plant, &artifacts, kind, opts).map_err(plant_err)?;
    log.save_csv(out, source.is_lorenz()).map_err(other)?;
    if let Some(path) = trace {
        plant.trace().write_csv(path).map_err(other)?;
    }
    println!("{} rows written to {}", log.len(), out.display());
    Ok(())
}
