use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use cloudedge_core::mdp::OBSERVATION_DIM;
use cloudedge_core::nn::{Mlp, MlpSpec};
use cloudedge_core::plant::{Plant, PlantConfig, PlantError, SimulatedPlant};
use cloudedge_core::{rng, Action, MdpConfig, PlantState};
use cloudedge_edge::*;
use cloudedge_transport::{EpisodeEventKind, Message, StateActionPayload};

/// Holds the pole upright and still, whatever the action.
struct UprightPlant {
    ticks: u64,
    resets: u64,
    calibrations: Arc<AtomicU64>,
}

impl UprightPlant {
    fn new() -> (Self, Arc<AtomicU64>) {
        let c = Arc::new(AtomicU64::new(0));
        (
            Self {
                ticks: 0,
                resets: 0,
                calibrations: c.clone(),
            },
            c,
        )
    }
}

impl Plant for UprightPlant {
    fn read_state(&self) -> PlantState {
        PlantState::new(0.0, 0.0, 0.0, 0.0)
    }
    fn tick(&mut self, _: Action) -> Result<PlantState, PlantError> {
        self.ticks += 1;
        Ok(self.read_state())
    }
    fn reset_to(&mut self, _: f64) -> Result<PlantState, PlantError> {
        self.resets += 1;
        self.ticks += 30;
        Ok(self.read_state())
    }
    fn calibrate(&mut self) -> Result<(), PlantError> {
        self.calibrations.fetch_add(1, Ordering::SeqCst);
        self.ticks += 60;
        Ok(())
    }
    fn control_period(&self) -> f64 {
        1.0 / 30.0
    }
    fn ticks_elapsed(&self) -> u64 {
        self.ticks
    }
}

fn actor(seed: u64) -> Arc<DoubleBufferedActor> {
    let net = Mlp::init(MlpSpec::actor(OBSERVATION_DIM), &mut rng::stream(seed, 0), 1.0);
    Arc::new(DoubleBufferedActor::new(net))
}

fn payloads(buf: &mut LocalBuffer) -> (Vec<StateActionPayload>, Vec<Message>) {
    let all: Vec<Message> = buf.drain().collect();
    let p = all
        .iter()
        .filter_map(|m| match m {
            Message::StateAction(p) => Some(*p),
            _ => None,
        })
        .collect();
    (p, all)
}

#[test]
fn consecutive_payloads_form_markov_transitions() {
    let plant = SimulatedPlant::new(PlantConfig::with_friction(10.0)).unwrap();
    let mut rt = EdgeRuntime::new(
        EdgeConfig::default(),
        MdpConfig::default(),
        Box::new(plant),
        actor(1),
        LocalBuffer::unbounded(),
        7,
    )
    .unwrap();
    for _ in 0..3000 {
        rt.tick().unwrap();
    }
    let (ps, _) = payloads(rt.upstream_mut());
    let mut pairs = 0;
    for w in ps.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.step == 0 {
            assert_eq!(&b.observation[5..], &[0.0; 5], "history resets per episode");
            continue;
        }
        assert_eq!(a.episode, b.episode);
        assert_eq!(b.step, a.step + 1);
        assert_eq!(&b.observation[5..9], &a.observation[6..10]);
        assert_eq!(b.observation[9], a.action);
        pairs += 1;
    }
    assert!(pairs > 2000);
    for p in &ps {
        assert_eq!(p.observation[0], p.state[0]);
        assert_eq!(p.observation[1], p.state[1]);
        assert!((p.observation[2] - p.state[2].sin()).abs() < 1e-6);
        assert!((p.observation[3] - p.state[2].cos()).abs() < 1e-6);
        assert_eq!(p.observation[4], p.state[3]);
        assert!(p.action.abs() <= 1.0);
    }
}

#[test]
fn noise_only_in_training_episodes() {
    let (plant, _) = UprightPlant::new();
    let a = actor(2);
    let net = a.snapshot();
    let mut rt = EdgeRuntime::new(
        EdgeConfig::default(),
        MdpConfig::default(),
        Box::new(plant),
        a,
        LocalBuffer::unbounded(),
        3,
    )
    .unwrap();
    let mut eval_episodes = std::collections::HashSet::new();
    let mut payloads_all = Vec::new();
    for _ in 0..6 {
        loop {
            let out = rt.tick().unwrap();
            for m in rt.upstream_mut().drain() {
                match m {
                    Message::EpisodeEvent(e) if e.kind == EpisodeEventKind::EvalBegin => {
                        eval_episodes.insert(e.episode);
                    }
                    Message::StateAction(p) => payloads_all.push(p),
                    _ => {}
                }
            }
            if matches!(out, TickOutcome::EpisodeEnded { .. }) {
                break;
            }
        }
    }
    assert_eq!(eval_episodes.len(), 1);
    let mut noisy = 0;
    let mut train_steps = 0;
    for (i, p) in payloads_all.iter().enumerate() {
        let next_is_same = payloads_all
            .get(i + 1)
            .is_some_and(|n| n.episode == p.episode && n.step == p.step + 1);
        if !next_is_same {
            continue;
        }
        let greedy = Action::clipped(net.predict(&p.observation).unwrap()[0] as f64).value() as f32;
        if eval_episodes.contains(&p.episode) {
            assert_eq!(p.action, greedy, "evaluation actions are greedy");
        } else {
            train_steps += 1;
            if p.action != greedy {
                noisy += 1;
            }
        }
    }
    assert!(train_steps > 400);
    assert!(noisy as f64 > 0.95 * train_steps as f64);
}

#[test]
fn episode_accounting_and_convergence() {
    let (plant, calibrations) = UprightPlant::new();
    let cfg = EdgeConfig {
        calibration_period: 1000,
        ..EdgeConfig::default()
    };
    let mut rt = EdgeRuntime::new(
        cfg,
        MdpConfig::default(),
        Box::new(plant),
        actor(3),
        LocalBuffer::unbounded(),
        4,
    )
    .unwrap();
    let mut outcomes = Vec::new();
    let mut plant_ticks = 0;
    let mut calibrated_at = Vec::new();
    while rt.supervisor().converged_at().is_none() {
        match rt.tick().unwrap() {
            TickOutcome::Acted { .. } => plant_ticks += 1,
            TickOutcome::EpisodeEnded {
                outcome,
                plant_ticks: t,
                calibrated,
            } => {
                plant_ticks += t;
                if calibrated {
                    calibrated_at.push(rt.supervisor().global_steps());
                }
                outcomes.push(outcome);
            }
        }
    }
    assert_eq!(outcomes.len(), 30);
    for (i, o) in outcomes.iter().enumerate() {
        assert_eq!(o.episode as usize, i);
        if i % 6 == 5 {
            assert_eq!(o.kind, EpisodeKind::Evaluation);
            assert_eq!(o.reason, EndReason::MaxSteps);
            assert_eq!(o.steps, 1000);
            assert_eq!(o.success, Some(true));
        } else {
            assert_eq!(o.kind, EpisodeKind::Training);
            assert_eq!(o.reason, EndReason::OnTargetCap);
            assert_eq!(o.steps, 101);
            assert_eq!(o.on_target, 101);
            assert_eq!(o.success, None);
        }
    }
    let last = outcomes.last().unwrap();
    assert!(last.converged);
    // Evaluation steps do not count towards the convergence step count.
    assert_eq!(last.cumulative_steps, 25 * 101);
    assert_eq!(rt.supervisor().converged_at(), Some(25 * 101));
    assert_eq!(rt.supervisor().global_steps(), 25 * 101 + 5 * 1000);

    // One calibration per crossed multiple of the period, at an episode end.
    let total = rt.supervisor().global_steps();
    assert_eq!(calibrations.load(Ordering::SeqCst), total / 1000);
    for (k, g) in calibrated_at.iter().enumerate() {
        assert!(*g >= (k as u64 + 1) * 1000);
    }
    assert_eq!(plant_ticks, rt.plant().ticks_elapsed());

    let (_, msgs) = payloads(rt.upstream_mut());
    let kinds: Vec<_> = msgs
        .iter()
        .filter_map(|m| match m {
            Message::EpisodeEvent(e) => Some(e.kind),
            _ => None,
        })
        .collect();
    assert_eq!(kinds.iter().filter(|k| **k == EpisodeEventKind::Converged).count(), 1);
    assert_eq!(kinds.iter().filter(|k| **k == EpisodeEventKind::EvalBegin).count(), 5);
    assert_eq!(kinds.iter().filter(|k| **k == EpisodeEventKind::ResetBegin).count(), 30);
}

#[test]
fn ring_buffer_keeps_newest_while_disconnected() {
    let (plant, _) = UprightPlant::new();
    let mut rt = EdgeRuntime::new(
        EdgeConfig::default(),
        MdpConfig::default(),
        Box::new(plant),
        actor(4),
        LocalBuffer::ring(50),
        5,
    )
    .unwrap();
    for _ in 0..80 {
        rt.tick().unwrap();
    }
    let buf = rt.upstream_mut();
    assert_eq!(buf.len(), 50);
    assert_eq!(buf.dropped(), 30);
    let (ps, _) = payloads(buf);
    assert_eq!(ps.first().unwrap().step, 30);
    assert_eq!(ps.last().unwrap().step, 79);
}

#[test]
fn control_ticks_stay_within_the_period() {
    let plant = SimulatedPlant::new(PlantConfig::with_friction(10.0)).unwrap();
    let a = actor(5);
    let mut rt = EdgeRuntime::new(
        EdgeConfig::default(),
        MdpConfig::default(),
        Box::new(plant),
        a.clone(),
        LocalBuffer::unbounded(),
        6,
    )
    .unwrap();
    // Weights keep arriving from another thread during control.
    let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let writer = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            let mut v = 1;
            while !stop.load(Ordering::SeqCst) {
                let mut n = Mlp::init(MlpSpec::actor(OBSERVATION_DIM), &mut rng::stream(v, 9), 1.0);
                n.advance_version_to(v);
                a.apply(n).unwrap();
                v += 1;
                std::thread::sleep(std::time::Duration::from_millis(2));
            }
        })
    };
    let mut last = 0;
    for _ in 0..2000 {
        if let TickOutcome::Acted { version, .. } = rt.tick().unwrap() {
            assert!(version >= last);
            last = version;
        }
        rt.upstream_mut().drain();
    }
    stop.store(true, Ordering::SeqCst);
    writer.join().unwrap();
    assert!(last > 1);
    let period = 1.0 / 30.0;
    let wall = rt.wall_latency();
    assert!(wall.max < period, "wall max {}", wall.max);
    let sim = rt.sim_latency();
    assert!(sim.max < 0.05 * period);
    assert_eq!(sim.over_budget, 0);
}
