use std::cell::Cell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, CellClass, Frame, Maze, Pos, RewardClass};
use crate::error::{Error, Result};

thread_local! {
    static STEP_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`GameState::step`] calls made on the current thread.
pub fn step_call_count() -> u64 {
    STEP_CALLS.with(Cell::get)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Probability that the ghost takes the greedy move instead of a random one.
    pub chase_prob: f64,
    /// Steps the ghost stays edible after a power pill.
    pub power_duration: u32,
    /// Episode ends once this many steps have been taken.
    pub episode_cap: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { chase_prob: 0.5, power_duration: 20, episode_cap: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub reward: RewardClass,
    pub done: bool,
}

/// Full game state, including the ghost's random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    maze: Arc<Maze>,
    config: EnvConfig,
    /// Board without agents.
    board: Frame,
    frame: Frame,
    pacman_pos: Pos,
    ghost_pos: Pos,
    ghost_home: Pos,
    power_timer: u32,
    step_count: u32,
    score: i64,
    done: bool,
    rng: ChaCha8Rng,
}

impl GameState {
    pub fn reset(maze: Arc<Maze>, config: EnvConfig, seed: u64) -> Self {
        let mut state = GameState {
            board: *maze.board(),
            frame: *maze.board(),
            pacman_pos: maze.pacman_start(),
            ghost_pos: maze.ghost_start(),
            ghost_home: maze.ghost_start(),
            maze,
            config,
            power_timer: 0,
            step_count: 0,
            score: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        state.render();
        state
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn maze(&self) -> &Arc<Maze> {
        &self.maze
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn pacman_pos(&self) -> Pos {
        self.pacman_pos
    }

    pub fn ghost_pos(&self) -> Pos {
        self.ghost_pos
    }

    pub fn ghost_home(&self) -> Pos {
        self.ghost_home
    }

    pub fn power_timer(&self) -> u32 {
        self.power_timer
    }

    pub fn ghost_edible(&self) -> bool {
        self.power_timer > 0
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn score(&self) -> i64 {
        self.score
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Replace the ghost's random stream, e.g. to give a planning copy its
    /// own independent future.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Move the ghost to an arbitrary corridor cell. Used to build scenarios.
    pub fn place_ghost(&mut self, pos: Pos) {
        assert!(!self.maze.is_wall(pos) && pos != self.pacman_pos);
        self.ghost_pos = pos;
        self.render();
    }

    /// Move pacman to an arbitrary corridor cell, eating whatever is there
    /// without reward. Used to build scenarios.
    pub fn place_pacman(&mut self, pos: Pos) {
        assert!(!self.maze.is_wall(pos) && pos != self.ghost_pos);
        self.pacman_pos = pos;
        self.board.set(pos, CellClass::Eaten);
        self.render();
    }

    pub fn set_power_timer(&mut self, steps: u32) {
        self.power_timer = steps;
    }

    /// Advance one agent step.
    ///
    /// Pacman moves first (walls block), then the cell it lands on is
    /// resolved, then the ghost moves. At most one reward event is
    /// reported per step: death and eating the ghost take precedence over
    /// food and pills.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        STEP_CALLS.with(|c| c.set(c.get() + 1));

        let mut reward = RewardClass::NONE;
        let mut pill_now = false;
        let target = self
            .pacman_pos
            .offset(action)
            .filter(|&p| !self.maze.is_wall(p))
            .unwrap_or(self.pacman_pos);

        if target == self.ghost_pos {
            if self.power_timer > 0 {
                self.pacman_pos = target;
                pill_now = self.consume(target).is_some_and(|c| c == CellClass::PowerPill);
                reward = RewardClass::GHOST;
                self.respawn_ghost();
            } else {
                // Pacman is caught before entering the ghost's cell.
                reward = RewardClass::DEATH;
                self.done = true;
            }
        } else {
            self.pacman_pos = target;
            match self.consume(target) {
                Some(CellClass::Food) => reward = RewardClass::FOOD,
                Some(CellClass::PowerPill) => {
                    reward = RewardClass::PILL;
                    pill_now = true;
                }
                _ => {}
            }
            let next = self.ghost_move();
            if next == self.pacman_pos {
                if self.power_timer > 0 {
                    reward = RewardClass::GHOST;
                    self.respawn_ghost();
                } else {
                    // The ghost is drawn where it attacked from.
                    reward = RewardClass::DEATH;
                    self.done = true;
                }
            } else {
                self.ghost_pos = next;
            }
        }

        if !pill_now && self.power_timer > 0 {
            self.power_timer -= 1;
        }
        if self.board.count(CellClass::Food) == 0 && self.board.count(CellClass::PowerPill) == 0 {
            self.regenerate();
        }
        self.step_count += 1;
        if self.step_count >= self.config.episode_cap {
            self.done = true;
        }
        self.score += i64::from(reward.value());
        self.render();
        Ok(StepOutcome { reward, done: self.done })
    }

    /// Eat the board content at `pos`; returns what was eaten.
    fn consume(&mut self, pos: Pos) -> Option<CellClass> {
        let class = self.board.get(pos);
        match class {
            CellClass::Food | CellClass::PowerPill => {
                self.board.set(pos, CellClass::Eaten);
                if class == CellClass::PowerPill {
                    self.power_timer = self.config.power_duration;
                }
                Some(class)
            }
            _ => None,
        }
    }

    fn legal_neighbours(&self, pos: Pos) -> Vec<Pos> {
        [Action::Up, Action::Down, Action::Left, Action::Right]
            .into_iter()
            .filter_map(|a| pos.offset(a))
            .filter(|&p| !self.maze.is_wall(p))
            .collect()
    }

    fn ghost_move(&mut self) -> Pos {
        let options = self.legal_neighbours(self.ghost_pos);
        if options.is_empty() {
            return self.ghost_pos;
        }
        let greedy = self.rng.random_bool(self.config.chase_prob);
        if !greedy {
            return options[self.rng.random_range(0..options.len())];
        }
        let dist = |p: &Pos| p.manhattan(self.pacman_pos);
        let best = if self.power_timer > 0 {
            options.iter().map(dist).max()
        } else {
            options.iter().map(dist).min()
        }
        .expect("options non-empty");
        let ties: Vec<Pos> = options.iter().copied().filter(|p| dist(p) == best).collect();
        ties[self.rng.random_range(0..ties.len())]
    }

    fn respawn_ghost(&mut self) {
        self.ghost_pos = if self.ghost_home != self.pacman_pos {
            self.ghost_home
        } else {
            self.legal_neighbours(self.ghost_home)[0]
        };
    }

    fn regenerate(&mut self) {
        for (i, &class) in self.maze.board().cells().iter().enumerate() {
            if matches!(class, CellClass::Food | CellClass::PowerPill) {
                self.board.cells_mut()[i] = class;
            }
        }
        self.board.set(self.pacman_pos, CellClass::Eaten);
    }

    fn render(&mut self) {
        self.frame = self.board;
        self.frame.set(self.pacman_pos, CellClass::Pacman);
        self.frame.set(self.ghost_pos, CellClass::Ghost);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh(seed: u64) -> GameState {
        GameState::reset(Arc::new(Maze::default()), EnvConfig::default(), seed)
    }

    /// Ghost that never chases and sits far away, for deterministic tests.
    fn quiet(seed: u64) -> GameState {
        let config = EnvConfig { chase_prob: 0.0, ..EnvConfig::default() };
        GameState::reset(Arc::new(Maze::default()), config, seed)
    }

    #[test]
    fn reset_layout() {
        let s = fresh(0);
        assert_eq!(s.frame().count(CellClass::Pacman), 1);
        assert_eq!(s.frame().count(CellClass::Ghost), 1);
        assert_eq!(s, fresh(0));
        assert_eq!(s.power_timer(), 0);
        assert!(!s.is_done());
        for (i, &c) in s.frame().cells().iter().enumerate() {
            assert_eq!(c == CellClass::Wall, s.maze().board().cells()[i] == CellClass::Wall);
        }
    }

    #[test]
    fn food_then_empty_corridor() {
        let mut s = quiet(1);
        // Row 11 left of the start is food.
        let out = s.step(Action::Left).unwrap();
        assert_eq!(out.reward.value(), 1);
        let out = s.step(Action::Right).unwrap();
        assert_eq!(out.reward.value(), 0);
        let out = s.step(Action::Noop).unwrap();
        assert_eq!(out.reward.value(), 0);
        assert_eq!(s.frame().get(Pos::new(11, 8)), CellClass::Eaten);
    }

    #[test]
    fn walking_into_wall_stays() {
        let mut s = quiet(2);
        let before = s.pacman_pos();
        // (12, 9) is wall.
        s.step(Action::Down).unwrap();
        assert_eq!(s.pacman_pos(), before);
    }

    #[test]
    fn collision_with_dangerous_ghost_ends_episode() {
        let mut s = quiet(3);
        s.place_ghost(Pos::new(11, 8));
        let out = s.step(Action::Left).unwrap();
        assert_eq!(out.reward.value(), -1);
        assert!(out.done);
        assert_eq!(s.frame().count(CellClass::Pacman), 1);
        assert_eq!(s.frame().count(CellClass::Ghost), 1);
        assert!(matches!(s.step(Action::Noop), Err(Error::EpisodeDone)));
    }

    #[test]
    fn ghost_walking_into_pacman_kills() {
        let config = EnvConfig { chase_prob: 1.0, ..EnvConfig::default() };
        let mut s = GameState::reset(Arc::new(Maze::default()), config, 4);
        s.place_ghost(Pos::new(11, 7));
        // Pacman stays; the only greedy move for the ghost is onto pacman's
        // neighbour, then onto pacman.
        let mut died = false;
        for _ in 0..3 {
            let out = s.step(Action::Noop).unwrap();
            if out.done {
                assert_eq!(out.reward.value(), -1);
                died = true;
                break;
            }
        }
        assert!(died);
        assert_eq!(s.frame().count(CellClass::Ghost), 1);
    }

    #[test]
    fn eating_edible_ghost() {
        let mut s = quiet(5);
        s.place_ghost(Pos::new(11, 8));
        s.set_power_timer(5);
        let out = s.step(Action::Left).unwrap();
        assert_eq!(out.reward.value(), 6);
        assert!(!out.done);
        assert_eq!(s.ghost_pos(), s.ghost_home());
        assert_eq!(s.pacman_pos(), Pos::new(11, 8));
    }

    #[test]
    fn power_pill_sets_timer() {
        let mut s = quiet(6);
        s.place_pacman(Pos::new(13, 2));
        let out = s.step(Action::Left).unwrap();
        assert_eq!(out.reward.value(), 3);
        assert_eq!(s.power_timer(), 20);
        s.step(Action::Noop).unwrap();
        assert_eq!(s.power_timer(), 19);
    }

    #[test]
    fn regenerates_after_clearing() {
        let mut s = quiet(7);
        let food: Vec<Pos> = s.maze().board().positions(CellClass::Food);
        let pills = s.maze().board().positions(CellClass::PowerPill);
        // Eat everything but one food cell by teleporting.
        let last = food[0];
        for &p in food[1..].iter().chain(&pills) {
            if p != s.ghost_pos() {
                s.place_pacman(p);
            }
        }
        s.place_ghost(Pos::new(1, 17));
        s.place_pacman(Pos::new(1, 3));
        assert_eq!(last, Pos::new(1, 2));
        let out = s.step(Action::Left).unwrap();
        assert_eq!(out.reward.value(), 1);
        assert!(s.frame().count(CellClass::Food) > 100);
        assert_eq!(s.frame().get(last), CellClass::Pacman);
    }

    #[test]
    fn episode_cap() {
        let config = EnvConfig { chase_prob: 0.0, episode_cap: 3, ..EnvConfig::default() };
        let mut s = GameState::reset(Arc::new(Maze::default()), config, 8);
        assert!(!s.step(Action::Noop).unwrap().done);
        assert!(!s.step(Action::Noop).unwrap().done);
        assert!(s.step(Action::Noop).unwrap().done);
    }

    #[test]
    fn clone_is_isolated() {
        let original = fresh(9);
        let snapshot = original.clone();
        assert_eq!(snapshot, original);
        let mut copy = original.clone();
        for _ in 0..10 {
            if copy.step(Action::Right).is_err() {
                break;
            }
        }
        assert_eq!(original, snapshot);
    }

    #[test]
    fn step_counter_counts() {
        let before = step_call_count();
        let mut s = quiet(10);
        s.step(Action::Noop).unwrap();
        s.step(Action::Noop).unwrap();
        assert_eq!(step_call_count() - before, 2);
    }
}
