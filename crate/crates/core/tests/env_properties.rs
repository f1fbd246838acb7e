use std::sync::Arc;
use std::time::Instant;

use bootplan::env::{Action, CellClass, EnvConfig, GameState, Maze, REWARD_VALUES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;
const STEPS_PER_SEED: usize = 1_000;

fn walls(state: &GameState) -> Vec<bool> {
    state.frame().cells().iter().map(|&c| c == CellClass::Wall).collect()
}

/// Random-policy run that resets on episode end; returns (frame, reward) per step.
fn rollout(maze: &Arc<Maze>, seed: u64, steps: usize) -> Vec<(bootplan::env::Frame, i32)> {
    let mut policy = ChaCha8Rng::seed_from_u64(seed);
    let mut episode = 0;
    let mut state = GameState::reset(maze.clone(), EnvConfig::default(), seed * 100);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        if state.is_done() {
            episode += 1;
            state = GameState::reset(maze.clone(), EnvConfig::default(), seed * 100 + episode);
        }
        let out_step = state.step(Action::random(&mut policy)).unwrap();
        out.push((*state.frame(), out_step.reward.value()));
    }
    out
}

#[test]
fn random_policy_invariants() {
    let start = Instant::now();
    let maze = Arc::new(Maze::default());
    let mut steps = 0;
    for seed in 0..SEEDS {
        let mut policy = ChaCha8Rng::seed_from_u64(seed);
        let mut episode = 0;
        let mut state = GameState::reset(maze.clone(), EnvConfig::default(), seed * 100);
        let mut wall_mask = walls(&state);
        for _ in 0..STEPS_PER_SEED {
            if state.is_done() {
                episode += 1;
                state = GameState::reset(maze.clone(), EnvConfig::default(), seed * 100 + episode);
                wall_mask = walls(&state);
            }
            let action = Action::random(&mut policy);
            let target = state.pacman_pos().offset(action).filter(|&p| !maze.is_wall(p)).unwrap_or(state.pacman_pos());
            let target_class = state.frame().get(target);

            let out = state.step(action).unwrap();
            let frame = state.frame();
            let r = out.reward.value();
            steps += 1;

            assert_eq!(frame.count(CellClass::Pacman), 1, "seed {seed}: pacman count");
            assert_eq!(frame.count(CellClass::Ghost), 1, "seed {seed}: ghost count");
            assert!(REWARD_VALUES.contains(&r), "reward {r}");
            assert_eq!(walls(&state), wall_mask, "walls changed within an episode");
            if r == 1 {
                assert_eq!(target_class, CellClass::Food);
            }
            if target_class == CellClass::Food {
                assert!([1, -1, 6].contains(&r), "stepped on food, reward {r}");
            }
        }
    }
    assert_eq!(steps, 10_000);
    assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
}

#[test]
fn death_ends_the_episode() {
    let maze = Arc::new(Maze::default());
    for seed in 0..SEEDS {
        let mut policy = ChaCha8Rng::seed_from_u64(seed);
        let mut state = GameState::reset(maze.clone(), EnvConfig::default(), seed);
        while !state.is_done() {
            let out = state.step(Action::random(&mut policy)).unwrap();
            if out.reward.value() == -1 {
                assert!(out.done);
            }
        }
        assert!(state.step(Action::Noop).is_err());
    }
}

#[test]
fn same_seed_same_trajectory() {
    let maze = Arc::new(Maze::default());
    for seed in 0..3 {
        assert_eq!(rollout(&maze, seed, 500), rollout(&maze, seed, 500));
    }
    assert_ne!(rollout(&maze, 0, 500), rollout(&maze, 1, 500));
}

#[test]
fn clone_matches_original() {
    let maze = Arc::new(Maze::default());
    let mut policy = ChaCha8Rng::seed_from_u64(7);
    let mut state = GameState::reset(maze, EnvConfig::default(), 7);
    for _ in 0..20 {
        state.step(Action::random(&mut policy)).unwrap();
    }
    let mut copy = state.clone();
    while !state.is_done() {
        let a = Action::random(&mut policy);
        assert_eq!(state.step(a).unwrap(), copy.step(a).unwrap());
        assert_eq!(state.frame(), copy.frame());
    }
}
