//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::sync::Arc;

use bootplan::env::{Action, EnvConfig, GameState, Maze};
use bootplan::experience::{BootstrapMask, TransitionRecord};
use bootplan::model::{loss_and_gradients, ModelConfig, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn batch(n: usize, heads: usize, seed: u64) -> Vec<TransitionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maze = Arc::new(Maze::default());
    let mut state = GameState::reset(maze.clone(), EnvConfig::default(), seed);
    let mut out = Vec::new();
    while out.len() < n {
        if state.is_done() {
            state = GameState::reset(maze.clone(), EnvConfig::default(), rng.random());
        }
        let a = Action::random(&mut rng);
        let s = *state.frame();
        let step = state.step(a).unwrap();
        // Head 0 always trains; the rest are random so every code path
        // (including untouched heads) shows up.
        let mut bits: Vec<bool> = (0..heads).map(|_| rng.random_bool(0.5)).collect();
        bits[0] = true;
        out.push(TransitionRecord {
            state: s,
            action: a,
            reward: step.reward,
            next_state: *state.frame(),
            done: step.done,
            mask: BootstrapMask::from_bits(bits),
        });
    }
    out
}

/// Max relative error over every trainable parameter.
pub fn max_relative_error(config: ModelConfig, seed: u64) -> f64 {
    let mut net = Network::<f64>::init(config.clone(), seed).unwrap();
    // Random biases so no pre-activation sits exactly on a ReLU kink.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let params = net.params_mut();
    for v in params.trunk.iter_mut().chain(params.heads.iter_mut().flatten()) {
        if *v == 0.0 {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let records = batch(3, config.heads, seed);
    let refs: Vec<&TransitionRecord> = records.iter().collect();
    let (_, grads) = loss_and_gradients(&net, &refs).unwrap();

    let loss = |n: &Network<f64>| loss_and_gradients(n, &refs).unwrap().0.total;
    let base = loss(&net);
    let mut worst: f64 = 0.0;
    let mut check = |net: &mut Network<f64>, slot: fn(&mut Network<f64>, usize, usize) -> &mut f64, k, i, analytic: f64| {
        let mut central = |eps: f64| {
            let orig = *slot(net, k, i);
            *slot(net, k, i) = orig + eps;
            let up = loss(net);
            *slot(net, k, i) = orig - eps;
            let down = loss(net);
            *slot(net, k, i) = orig;
            (up - down) / (2.0 * eps)
        };
        // A 1e-5 stencil is accurate unless a ReLU sign or max-pool argmax
        // flips inside it. Such a kink shows up as disagreement with the
        // 1e-6 stencil beyond that stencil's rounding noise, and the 1e-6
        // estimate is then used instead.
        let coarse = central(1e-5);
        let fine = central(1e-6);
        let noise = 64.0 * f64::EPSILON * base.abs() / 1e-6;
        let scale = coarse.abs().max(fine.abs());
        let numeric = if (coarse - fine).abs() <= 1e-4 * scale + noise { coarse } else { fine };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    };
    fn trunk(n: &mut Network<f64>, _: usize, i: usize) -> &mut f64 {
        &mut n.params_mut().trunk[i]
    }
    fn head(n: &mut Network<f64>, k: usize, i: usize) -> &mut f64 {
        &mut n.params_mut().heads[k][i]
    }
    for i in 0..net.params().trunk.len() {
        check(&mut net, trunk, 0, i, grads.trunk[i]);
    }
    for k in 0..config.heads {
        for i in 0..net.params().heads[k].len() {
            check(&mut net, head, k, i, grads.heads[k][i]);
        }
    }
    worst
}
