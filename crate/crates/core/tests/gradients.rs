//! Central finite differences against the analytic gradients, in f64.

use cloudedge_core::ddpg::{actor_objective_gradient, critic_inputs, critic_loss_gradient};
use cloudedge_core::nn::{Mlp, MlpSpec, OutputActivation};
use cloudedge_core::replay::{Batch, Experience};
use cloudedge_core::rng;
use rand::Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn relu_pattern(net: &Mlp<f64>, x: &[f64]) -> Vec<bool> {
    let cache = net.forward(x).unwrap();
    let acts = cache.activations();
    acts[1..acts.len() - 1]
        .iter()
        .flatten()
        .map(|v| *v > 0.0)
        .collect()
}

/// `sum(w . f(x))`, the scalar whose gradient `backward(dout = w)` returns.
fn weighted_output(net: &Mlp<f64>, x: &[f64], w: &[f64]) -> f64 {
    net.predict(x).unwrap().iter().zip(w).map(|(y, w)| y * w).sum()
}

/// Central difference of `f` along coordinate `i` of `v`, or `None` when the
/// probe straddles a ReLU kink (the difference quotient is then meaningless).
fn central<F, K>(v: &mut [f64], i: usize, f: F, kinks: K) -> Option<f64>
where
    F: Fn(&[f64]) -> f64,
    K: Fn(&[f64]) -> Vec<bool>,
{
    let base = kinks(v);
    let orig = v[i];
    v[i] = orig + H;
    let (fp, kp) = (f(v), kinks(v));
    v[i] = orig - H;
    let (fm, km) = (f(v), kinks(v));
    v[i] = orig;
    (kp == base && km == base).then(|| (fp - fm) / (2.0 * H))
}

fn random_net<R: Rng>(r: &mut R, input: usize, act: OutputActivation) -> Mlp<f64> {
    let depth = r.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..=16)).collect();
    let output = if act == OutputActivation::Tanh { 1 } else { r.random_range(1..=3) };
    Mlp::init(MlpSpec::new(input, &hidden, output, act), r, 1.0)
}

/// Checks all parameter and input gradients of one net; returns the worst
/// relative error and the number of coordinates compared.
fn check_net<R: Rng>(net: &Mlp<f64>, batch: usize, r: &mut R) -> (f64, usize) {
    let n_in = net.spec().input;
    let mut x: Vec<f64> = (0..batch * n_in).map(|_| r.random_range(-1.5..1.5)).collect();
    let w: Vec<f64> = (0..batch * net.spec().output)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let cache = net.forward(&x).unwrap();
    let (g, dx) = net.backward(&cache, &w, true).unwrap();
    let dx = dx.unwrap();

    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut p = net.clone();
    for i in 0..g.len() {
        let spec = p.spec().clone();
        let mut params = p.params().to_vec();
        let xs = x.clone();
        let numeric = central(
            &mut params,
            i,
            |v| weighted_output(&Mlp::from_params(spec.clone(), v.to_vec(), 0).unwrap(), &xs, &w),
            |v| relu_pattern(&Mlp::from_params(spec.clone(), v.to_vec(), 0).unwrap(), &xs),
        );
        if let Some(n) = numeric {
            worst = worst.max(rel_err(g[i], n));
            compared += 1;
        }
        p.params_mut().copy_from_slice(&params);
    }
    for i in 0..x.len() {
        let numeric = central(&mut x, i, |v| weighted_output(net, v, &w), |v| relu_pattern(net, v));
        if let Some(n) = numeric {
            worst = worst.max(rel_err(dx[i], n));
            compared += 1;
        }
    }
    (worst, compared)
}

#[test]
fn downsized_actor_10_8_1() {
    let mut r = rng::stream(1, 0);
    let net: Mlp<f64> = Mlp::init(MlpSpec::new(10, &[8], 1, OutputActivation::Tanh), &mut r, 1.0);
    let (worst, compared) = check_net(&net, 4, &mut r);
    assert!(compared > 80);
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn random_small_nets_100_probes() {
    let mut r = rng::stream(2, 0);
    let mut worst = 0.0f64;
    for probe in 0..100 {
        let act = if probe % 2 == 0 { OutputActivation::Tanh } else { OutputActivation::Identity };
        let input = r.random_range(1..=12);
        let net = random_net(&mut r, input, act);
        let (w, _) = check_net(&net, 3, &mut r);
        worst = worst.max(w);
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

fn random_batch<R: Rng>(r: &mut R, n: usize) -> Batch {
    let items: Vec<Experience> = (0..n)
        .map(|_| Experience {
            observation: std::array::from_fn(|_| r.random_range(-1.0..1.0)),
            action: r.random_range(-1.0..1.0),
            reward: r.random_range(-2.0..0.0),
            next_observation: std::array::from_fn(|_| r.random_range(-1.0..1.0)),
            terminal: r.random_bool(0.1),
        })
        .collect();
    Batch::from_experiences(items.iter())
}

fn small_pair(seed: u64) -> (Mlp<f64>, Mlp<f64>) {
    let mut r = rng::stream(seed, 3);
    let actor = Mlp::init(MlpSpec::new(10, &[8, 6], 1, OutputActivation::Tanh), &mut r, 1.0);
    let critic = Mlp::init(MlpSpec::new(11, &[8, 6], 1, OutputActivation::Identity), &mut r, 1.0);
    (actor, critic)
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let (_, critic) = small_pair(4);
    let mut r = rng::stream(4, 1);
    let batch = random_batch(&mut r, 6);
    let y: Vec<f64> = (0..6).map(|_| r.random_range(-3.0..1.0)).collect();
    let (loss, g) = critic_loss_gradient(&critic, &batch, &y).unwrap();
    assert!(loss >= 0.0);

    let spec = critic.spec().clone();
    let actions: Vec<f64> = batch.actions.iter().map(|a| *a as f64).collect();
    let inputs = critic_inputs(&batch.observations, &actions);
    let net_at = |v: &[f64]| Mlp::from_params(spec.clone(), v.to_vec(), 0).unwrap();
    let mut params = critic.params().to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let numeric = central(
            &mut params,
            i,
            |v| critic_loss_gradient(&net_at(v), &batch, &y).unwrap().0,
            |v| relu_pattern(&net_at(v), &inputs),
        );
        if let Some(n) = numeric {
            worst = worst.max(rel_err(g[i], n));
        }
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn actor_chain_gradient_matches_finite_differences() {
    let (actor, critic) = small_pair(5);
    let mut r = rng::stream(5, 1);
    let batch = random_batch(&mut r, 5);
    let (_, g) = actor_objective_gradient(&actor, &critic, &batch).unwrap();

    let spec = actor.spec().clone();
    let obs: Vec<f64> = batch.observations.iter().map(|v| *v as f64).collect();
    let net_at = |v: &[f64]| Mlp::from_params(spec.clone(), v.to_vec(), 0).unwrap();
    let both_patterns = |v: &[f64]| {
        let a = net_at(v);
        let actions = a.predict(&obs).unwrap();
        let mut k = relu_pattern(&a, &obs);
        k.extend(relu_pattern(&critic, &critic_inputs(&batch.observations, &actions)));
        k
    };
    let mut params = actor.params().to_vec();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for i in 0..params.len() {
        let numeric = central(
            &mut params,
            i,
            |v| actor_objective_gradient(&net_at(v), &critic, &batch).unwrap().0,
            both_patterns,
        );
        if let Some(n) = numeric {
            worst = worst.max(rel_err(g[i], n));
            compared += 1;
        }
    }
    assert!(compared > params.len() / 2);
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn tiny_ascent_step_does_not_lower_objective() {
    let (mut actor, critic) = small_pair(6);
    let mut r = rng::stream(6, 1);
    let batch = random_batch(&mut r, 8);
    let (before, g) = actor_objective_gradient(&actor, &critic, &batch).unwrap();
    for (p, gi) in actor.params_mut().iter_mut().zip(&g) {
        *p += 1e-6 * gi;
    }
    let (after, _) = actor_objective_gradient(&actor, &critic, &batch).unwrap();
    assert!(after >= before, "{after} < {before}");
}
