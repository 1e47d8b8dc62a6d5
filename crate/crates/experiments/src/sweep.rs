//! Parameter sweeps: one variable changes per sweep, everything else stays
//! at the base configuration.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use cloudedge_core::replay::Sampling;

use crate::pretrain::Pretrained;
use crate::transfer::{transfer_run, RunEvent, RunResult, TransferConfig};

pub const FRICTIONS: [f64; 5] = [0.0, 5.0, 10.0, 12.0, 16.0];
pub const DELAYS: [(u64, u64); 6] = [
    (128, 128),
    (128, 3500),
    (128, 5000),
    (3500, 3500),
    (3500, 5000),
    (5000, 5000),
];
/// Actor updated on every second train step after `N_a`, as in TD3.
pub const TD3_PERIOD: u64 = 2;
pub const BANDWIDTHS: [Option<f64>; 7] = [
    Some(0.06),
    Some(0.1),
    Some(0.5),
    Some(5.0),
    Some(10.0),
    Some(15.0),
    None,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Friction,
    Delays,
    Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub sweep: SweepKind,
    /// Configuration label shared by all seeds of one grid point.
    pub label: String,
    pub pretrain_friction: f64,
    pub plant_friction: f64,
    pub critic_delay: u64,
    pub actor_delay: u64,
    pub td3_actor_period: Option<u64>,
    pub bandwidth_mbit: Option<f64>,
    pub cer: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepBase {
    pub transfer: TransferConfig,
    pub pretrain_friction: f64,
    /// In the friction sweep, vary the plant instead of the pretraining
    /// simulator.
    pub vary_plant: bool,
}

impl SweepBase {
    fn spec(&self, sweep: SweepKind, label: String, seed: u64) -> RunSpec {
        let t = &self.transfer.cloud.trainer;
        RunSpec {
            sweep,
            label,
            pretrain_friction: self.pretrain_friction,
            plant_friction: self.transfer.plant.friction_factor,
            critic_delay: t.critic_delay,
            actor_delay: t.actor_delay,
            td3_actor_period: t.td3_actor_period,
            bandwidth_mbit: self.transfer.bandwidth_mbit,
            cer: t.sampling == Sampling::Combined,
            seed,
        }
    }
}

fn bandwidth_label(b: Option<f64>) -> String {
    b.map_or_else(|| "unlimited".to_string(), |b| format!("{b}mbit"))
}

pub fn sweep_specs(kind: SweepKind, base: &SweepBase, seeds: &[u64]) -> Vec<RunSpec> {
    let mut out = Vec::new();
    match kind {
        SweepKind::Friction => {
            for kf in FRICTIONS {
                for &seed in seeds {
                    let mut s = if base.vary_plant {
                        base.spec(kind, format!("plant_kf{kf}"), seed)
                    } else {
                        base.spec(kind, format!("pretrain_kf{kf}"), seed)
                    };
                    if base.vary_plant {
                        s.plant_friction = kf;
                    } else {
                        s.pretrain_friction = kf;
                    }
                    out.push(s);
                }
            }
        }
        SweepKind::Delays => {
            let mut grid: Vec<(u64, u64, Option<u64>)> =
                DELAYS.iter().map(|&(c, a)| (c, a, None)).collect();
            grid.push((3500, 5000, Some(TD3_PERIOD)));
            for (c, a, td3) in grid {
                let label = match td3 {
                    Some(p) => format!("nc{c}_na{a}_td3p{p}"),
                    None => format!("nc{c}_na{a}"),
                };
                for &seed in seeds {
                    let mut s = base.spec(kind, label.clone(), seed);
                    s.critic_delay = c;
                    s.actor_delay = a;
                    s.td3_actor_period = td3;
                    out.push(s);
                }
            }
        }
        SweepKind::Bandwidth => {
            for b in BANDWIDTHS {
                for cer in [true, false] {
                    let label = format!("{}_{}", bandwidth_label(b), if cer { "cer" } else { "uniform" });
                    for &seed in seeds {
                        let mut s = base.spec(kind, label.clone(), seed);
                        s.bandwidth_mbit = b;
                        s.cer = cer;
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}

/// The transfer configuration a spec describes.
pub fn spec_config(spec: &RunSpec, base: &TransferConfig) -> TransferConfig {
    let mut cfg = base.clone();
    cfg.plant.friction_factor = spec.plant_friction;
    let t = &mut cfg.cloud.trainer;
    t.critic_delay = spec.critic_delay;
    t.actor_delay = spec.actor_delay;
    t.td3_actor_period = spec.td3_actor_period;
    t.sampling = if spec.cer { Sampling::Combined } else { Sampling::Uniform };
    cfg.bandwidth_mbit = spec.bandwidth_mbit;
    cfg.seed = spec.seed;
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub result: RunResult,
}

/// Runs every spec on up to `jobs` threads. `model` supplies the pretrained
/// networks for a pretraining friction; `sink` sees each finished run.
/// Failures to start a run are recorded as aborted runs.
pub fn run_sweep<M, S>(
    specs: &[RunSpec],
    base: &TransferConfig,
    jobs: usize,
    model: M,
    sink: S,
) -> Vec<RunRecord>
where
    M: Fn(f64) -> anyhow::Result<Pretrained> + Sync,
    S: Fn(&RunRecord, &[RunEvent]) + Sync,
{
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; specs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(spec) = specs.get(i) else { break };
                let cfg = spec_config(spec, base);
                let (result, events) = match model(spec.pretrain_friction)
                    .and_then(|m| Ok(transfer_run(&cfg, &m.actor, &m.critic)?))
                {
                    Ok(run) => (run.result, run.events),
                    Err(e) => (failed_result(spec.seed, e.to_string()), Vec::new()),
                };
                let rec = RunRecord {
                    spec: spec.clone(),
                    result,
                };
                sink(&rec, &events);
                results.lock().unwrap()[i] = Some(rec);
            });
        }
    });
    results.into_inner().unwrap().into_iter().flatten().collect()
}

fn failed_result(seed: u64, why: String) -> RunResult {
    RunResult {
        seed,
        converged: false,
        convergence_steps: None,
        evaluations: Vec::new(),
        episodes: 0,
        cumulative_steps: 0,
        train_steps: 0,
        experiences: 0,
        ticks: 0,
        deliveries: 0,
        mean_delivery_ticks: None,
        max_sim_latency: 0.0,
        max_wall_latency: 0.0,
        aborted: Some(why),
        wall_seconds: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub runs: usize,
    pub converged: usize,
    pub aborted: usize,
    pub median: Option<f64>,
    pub min: Option<u64>,
    pub max: Option<u64>,
}

pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}

/// Per-label statistics over converged runs, labels in first-seen order.
/// Aborted runs are counted but never enter the statistics.
pub fn summarise(records: &[RunRecord]) -> Vec<Summary> {
    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.spec.label.as_str()) {
            labels.push(&r.spec.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&RunRecord> = records.iter().filter(|r| r.spec.label == label).collect();
            let times: Vec<u64> = group
                .iter()
                .filter(|r| r.result.aborted.is_none())
                .filter_map(|r| r.result.convergence_steps)
                .collect();
            Summary {
                label: label.to_string(),
                runs: group.len(),
                converged: times.len(),
                aborted: group.iter().filter(|r| r.result.aborted.is_some()).count(),
                median: median(&times),
                min: times.iter().copied().min(),
                max: times.iter().copied().max(),
            }
        })
        .collect()
}
