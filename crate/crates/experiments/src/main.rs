use std::fs::{self, OpenOptions};
use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cloudedge_cloud::{checkpoint_path, CloudServer, CloudService, MetricsSink, ServerConfig};
use cloudedge_core::plant::{PlantConfig, SimulatedPlant};
use cloudedge_core::replay::Sampling;
use cloudedge_edge::{run_node, DoubleBufferedActor, EdgeRuntime, LinkStats, NodeConfig};
use cloudedge_experiments::config::ParamTable;
use cloudedge_experiments::pretrain::{pretrain_with, PretrainConfig, Pretrained};
use cloudedge_experiments::report::{self, RUNS_FILE};
use cloudedge_experiments::sweep::{run_sweep, sweep_specs, RunRecord, RunSpec, SweepBase, SweepKind};
use cloudedge_experiments::transfer::{actor_blob, transfer_run, RunEvent, TransferConfig};
use cloudedge_transport::ThrottleConfig;

#[derive(Parser)]
#[command(name = "cloudedge", about = "Cloud-edge continual training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with parameter-table keys (x_max, d_T, k_f, T_e, N_c, ...).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn table(&self) -> Result<ParamTable> {
        match &self.config {
            Some(p) => ParamTable::load(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(ParamTable::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch in simulation and save the best networks.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        friction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        stop_on_convergence: bool,
        #[arg(long, default_value = "models/kf10")]
        out: PathBuf,
    },
    /// One transfer run on the simulated clock.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "models/kf10")]
        pretrained: PathBuf,
        #[arg(long)]
        plant_friction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        no_cer: bool,
        #[arg(long, default_value = "results/transfer")]
        out: PathBuf,
    },
    /// Runs a parameter grid over several seeds.
    Sweep {
        kind: SweepKind,
        #[command(flatten)]
        common: Common,
        /// Directory with one pretrained model per friction (`kf<k>`);
        /// missing ones are pretrained first.
        #[arg(long, default_value = "models")]
        models: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Friction sweep: vary the plant rather than the pretraining model.
        #[arg(long)]
        vary_plant: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarises a results directory.
    Report { dir: PathBuf },
    /// Cloud trainer serving one edge over TCP.
    Cloud {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7600")]
        listen_addr: SocketAddr,
        #[arg(long, default_value = "models/kf10")]
        pretrained: PathBuf,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Resume from the checkpoint in `--checkpoint-dir` if present.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Real-time edge controlling a simulated plant.
    Edge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7600")]
        cloud_addr: SocketAddr,
        #[arg(long, default_value = "models/kf10")]
        pretrained: PathBuf,
        #[arg(long)]
        plant_friction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = u64::MAX)]
        ticks: u64,
    },
}

fn pretrain_cmd(cfg: &PretrainConfig, out: &Path) -> Result<Pretrained> {
    let t0 = std::time::Instant::now();
    let model = pretrain_with(cfg, |e| {
        log::info!(
            "kf={} step {:>8} n={:>4} success={} avg={:.1} ({:.0}s)",
            cfg.plant.friction_factor,
            e.cumulative_steps,
            e.on_target,
            e.success,
            e.moving_average,
            t0.elapsed().as_secs_f64()
        )
    })?;
    model.save(out)?;
    Ok(model)
}

fn append_run(dir: &Path, rec: &RunRecord, events: &[RunEvent]) -> Result<()> {
    fs::create_dir_all(dir.join("events"))?;
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join(RUNS_FILE))?;
    writeln!(f, "{}", serde_json::to_string(rec)?)?;
    let name = format!("{}_seed{}.jsonl", rec.spec.label, rec.spec.seed);
    let mut ev = fs::File::create(dir.join("events").join(name))?;
    for e in events {
        writeln!(ev, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

fn transfer_base(table: &ParamTable) -> TransferConfig {
    let mut cfg = TransferConfig::default();
    table.apply_transfer(&mut cfg);
    cfg
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Pretrain {
            common,
            friction,
            seed,
            steps,
            stop_on_convergence,
            out,
        } => {
            let mut cfg = PretrainConfig::default();
            common.table()?.apply_pretrain(&mut cfg);
            if let Some(f) = friction {
                cfg.plant.friction_factor = f;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            cfg.stop_on_convergence |= stop_on_convergence;
            let model = pretrain_cmd(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&model.report)?);
        }
        Command::Transfer {
            common,
            pretrained,
            plant_friction,
            seed,
            bandwidth,
            no_cer,
            out,
        } => {
            let table = common.table()?;
            let mut cfg = transfer_base(&table);
            if let Some(f) = plant_friction {
                cfg.plant.friction_factor = f;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if bandwidth.is_some() {
                cfg.bandwidth_mbit = bandwidth;
            }
            if no_cer {
                cfg.cloud.trainer.sampling = Sampling::Uniform;
            }
            let model = Pretrained::load(&pretrained)?;
            let run = transfer_run(&cfg, &model.actor, &model.critic)?;
            let t = &cfg.cloud.trainer;
            let spec = RunSpec {
                sweep: SweepKind::Friction,
                label: format!("transfer_kf{}", cfg.plant.friction_factor),
                pretrain_friction: model.report.friction,
                plant_friction: cfg.plant.friction_factor,
                critic_delay: t.critic_delay,
                actor_delay: t.actor_delay,
                td3_actor_period: t.td3_actor_period,
                bandwidth_mbit: cfg.bandwidth_mbit,
                cer: t.sampling == Sampling::Combined,
                seed: cfg.seed,
            };
            let rec = RunRecord {
                spec,
                result: run.result.clone(),
            };
            append_run(&out, &rec, &run.events)?;
            fs::write(out.join(format!("actor_seed{}.blob", cfg.seed)), actor_blob(&run))?;
            println!("{}", serde_json::to_string_pretty(&run.result)?);
        }
        Command::Sweep {
            kind,
            common,
            models,
            seeds,
            jobs,
            vary_plant,
            out,
        } => {
            let table = common.table()?;
            let transfer = transfer_base(&table);
            let mut pre = PretrainConfig::default();
            table.apply_pretrain(&mut pre);
            pre.stop_on_convergence = true;
            let base = SweepBase {
                transfer: transfer.clone(),
                pretrain_friction: table.k_f.unwrap_or(pre.plant.friction_factor),
                vary_plant,
            };
            let seeds: Vec<u64> = (0..seeds).collect();
            let specs = sweep_specs(kind, &base, &seeds);
            let out = out.unwrap_or_else(|| PathBuf::from(format!("results/{kind:?}").to_lowercase()));
            fs::create_dir_all(&out)?;
            let cache: Mutex<Vec<(f64, Pretrained)>> = Mutex::new(Vec::new());
            let model = |kf: f64| -> Result<Pretrained> {
                let mut c = cache.lock().unwrap();
                if let Some((_, m)) = c.iter().find(|(k, _)| *k == kf) {
                    return Ok(m.clone());
                }
                let dir = models.join(format!("kf{kf}"));
                let m = match Pretrained::load(&dir) {
                    Ok(m) => m,
                    Err(_) => {
                        log::info!("pretraining kf={kf} into {}", dir.display());
                        let mut cfg = pre.clone();
                        cfg.plant.friction_factor = kf;
                        pretrain_cmd(&cfg, &dir)?
                    }
                };
                c.push((kf, m.clone()));
                Ok(m)
            };
            let sink = |rec: &RunRecord, events: &[RunEvent]| {
                log::info!(
                    "{} seed {}: converged at {:?} after {:.0}s",
                    rec.spec.label,
                    rec.spec.seed,
                    rec.result.convergence_steps,
                    rec.result.wall_seconds
                );
                if let Err(e) = append_run(&out, rec, events) {
                    log::error!("writing results: {e}");
                }
            };
            run_sweep(&specs, &transfer, jobs, model, sink);
            let r = report::load(&out)?;
            print!("{}", report::text_table(&r));
        }
        Command::Report { dir } => {
            let r = report::load(&dir)?;
            if r.is_empty() {
                eprintln!("nothing to report in {}", dir.display());
                std::process::exit(2);
            }
            fs::write(dir.join("summary.csv"), report::runs_csv(&r))?;
            fs::write(dir.join("timeseries.csv"), report::timeseries_csv(&r))?;
            print!("{}", report::text_table(&r));
            if !r.corrupt_lines.is_empty() {
                std::process::exit(3);
            }
        }
        Command::Cloud {
            common,
            listen_addr,
            pretrained,
            checkpoint_dir,
            resume,
            metrics,
            bandwidth,
        } => {
            let cfg = transfer_base(&common.table()?);
            let restored = match (&checkpoint_dir, resume) {
                (Some(dir), true) if checkpoint_path(dir).exists() => {
                    log::info!("resuming from {}", checkpoint_path(dir).display());
                    Some(CloudService::load_checkpoint(&checkpoint_path(dir))?)
                }
                _ => None,
            };
            let mut service = match restored {
                Some(s) => s,
                None => {
                    let m = Pretrained::load(&pretrained)?;
                    CloudService::new(cfg.cloud.clone(), m.actor, m.critic)?
                }
            };
            if let Some(p) = metrics {
                service = service.with_metrics(MetricsSink::create(&p)?);
            }
            if let Some(dir) = &checkpoint_dir {
                fs::create_dir_all(dir)?;
            }
            let throttle = match bandwidth.or(cfg.bandwidth_mbit) {
                Some(b) => ThrottleConfig::mbit(b),
                None => ThrottleConfig::unlimited(),
            };
            let mut server = CloudServer::new(
                service,
                ServerConfig {
                    throttle,
                    checkpoint_dir,
                    ..ServerConfig::default()
                },
            );
            let listener = TcpListener::bind(listen_addr)?;
            log::info!("listening on {listen_addr}");
            server.run(&listener, &AtomicBool::new(false))?;
        }
        Command::Edge {
            common,
            cloud_addr,
            pretrained,
            plant_friction,
            seed,
            ticks,
        } => {
            let cfg = transfer_base(&common.table()?);
            let m = Pretrained::load(&pretrained)?;
            let mut plant_cfg: PlantConfig = cfg.plant.clone();
            if let Some(f) = plant_friction {
                plant_cfg.friction_factor = f;
            }
            let actor = Arc::new(DoubleBufferedActor::new(m.actor));
            let stats = Arc::new(LinkStats::default());
            let report = run_node(
                NodeConfig::new(cloud_addr),
                |tx| {
                    EdgeRuntime::new(
                        cfg.edge.clone(),
                        cfg.mdp.clone(),
                        Box::new(SimulatedPlant::new(plant_cfg).expect("plant config")),
                        actor,
                        tx,
                        seed,
                    )
                },
                ticks,
                Arc::new(AtomicBool::new(false)),
                stats,
            )?;
            for o in &report.episodes {
                println!("{}", serde_json::to_string(o)?);
            }
            if report.latency.over_budget > 0 {
                bail!("{} ticks exceeded the control period", report.latency.over_budget);
            }
        }
    }
    Ok(())
}
