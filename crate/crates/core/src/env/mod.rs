//! Minipacman: a 15x19 grid game with one agent and one semi-random ghost.
//!
//! The simulator doubles as the perfect forward model for planning
//! baselines, so [`GameState`] is a plain value that clones deeply
//! (including its random stream).

mod game;
mod maze;

use std::fmt;

use crate::scalar::Scalar;

pub use game::{step_call_count, EnvConfig, GameState, StepOutcome};
pub use maze::Maze;

pub const HEIGHT: usize = 15;
pub const WIDTH: usize = 19;
pub const CELLS: usize = HEIGHT * WIDTH;
pub const NUM_CLASSES: usize = 6;
pub const NUM_ACTIONS: usize = 5;
pub const NUM_REWARDS: usize = 5;
/// Channels of the encoded network input: cell one-hot then action one-hot.
pub const INPUT_CHANNELS: usize = NUM_CLASSES + NUM_ACTIONS;

/// Reward values indexed by [`RewardClass`].
pub const REWARD_VALUES: [i32; NUM_REWARDS] = [-1, 0, 1, 3, 6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CellClass {
    Wall = 0,
    Food = 1,
    Eaten = 2,
    PowerPill = 3,
    Pacman = 4,
    Ghost = 5,
}

impl CellClass {
    pub const ALL: [CellClass; NUM_CLASSES] = [
        CellClass::Wall,
        CellClass::Food,
        CellClass::Eaten,
        CellClass::PowerPill,
        CellClass::Pacman,
        CellClass::Ghost,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Character used by the maze asset and ASCII dumps.
    pub fn symbol(self) -> char {
        match self {
            CellClass::Wall => '#',
            CellClass::Food => '.',
            CellClass::Eaten => ' ',
            CellClass::PowerPill => 'o',
            CellClass::Pacman => 'P',
            CellClass::Ghost => 'G',
        }
    }

    /// Display colour for rendered frame dumps.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            CellClass::Wall => [128, 128, 128],
            CellClass::Food => [0, 0, 255],
            CellClass::Eaten => [0, 0, 0],
            CellClass::PowerPill => [0, 255, 255],
            CellClass::Pacman => [0, 255, 0],
            CellClass::Ghost => [255, 0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Noop = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Noop];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.random_range(0..NUM_ACTIONS)]
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Noop => (0, 0),
        }
    }
}

/// Index into [`REWARD_VALUES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RewardClass(u8);

impl RewardClass {
    pub const DEATH: RewardClass = RewardClass(0);
    pub const NONE: RewardClass = RewardClass(1);
    pub const FOOD: RewardClass = RewardClass(2);
    pub const PILL: RewardClass = RewardClass(3);
    pub const GHOST: RewardClass = RewardClass(4);

    pub fn from_index(i: usize) -> Option<Self> {
        (i < NUM_REWARDS).then_some(RewardClass(i as u8))
    }

    pub fn from_value(v: i32) -> Option<Self> {
        REWARD_VALUES.iter().position(|&x| x == v).map(|i| RewardClass(i as u8))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn value(self) -> i32 {
        REWARD_VALUES[self.0 as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.row * WIDTH + self.col
    }

    pub fn from_index(i: usize) -> Self {
        Pos { row: i / WIDTH, col: i % WIDTH }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Neighbour in direction of `action`, `None` when off the grid.
    pub fn offset(self, action: Action) -> Option<Pos> {
        let (dr, dc) = action.delta();
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        (row < HEIGHT && col < WIDTH).then_some(Pos { row, col })
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// A 15x19 grid of cell classes, row-major.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frame {
    cells: [CellClass; CELLS],
}

impl Frame {
    pub fn filled(class: CellClass) -> Self {
        Frame { cells: [class; CELLS] }
    }

    #[inline]
    pub fn get(&self, pos: Pos) -> CellClass {
        self.cells[pos.index()]
    }

    #[inline]
    pub fn set(&mut self, pos: Pos, class: CellClass) {
        self.cells[pos.index()] = class;
    }

    #[inline]
    pub fn cells(&self) -> &[CellClass; CELLS] {
        &self.cells
    }

    #[inline]
    pub fn cells_mut(&mut self) -> &mut [CellClass; CELLS] {
        &mut self.cells
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.cells.iter().filter(|&&c| c == class).count()
    }

    /// Positions holding `class`, row-major order.
    pub fn positions(&self, class: CellClass) -> Vec<Pos> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| Pos::from_index(i))
            .collect()
    }

    /// The unique position of `class`, if it occurs exactly once.
    pub fn unique_position(&self, class: CellClass) -> Option<Pos> {
        let mut found = None;
        for (i, &c) in self.cells.iter().enumerate() {
            if c == class {
                if found.is_some() {
                    return None;
                }
                found = Some(Pos::from_index(i));
            }
        }
        found
    }

    /// Parse the ASCII form produced by `Display`.
    pub fn from_ascii(text: &str) -> Option<Self> {
        let mut frame = Frame::filled(CellClass::Wall);
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != HEIGHT {
            return None;
        }
        for (row, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != WIDTH {
                return None;
            }
            for (col, ch) in chars.into_iter().enumerate() {
                let class = CellClass::ALL.into_iter().find(|c| c.symbol() == ch)?;
                frame.set(Pos::new(row, col), class);
            }
        }
        Some(frame)
    }

    /// Binary PPM (P6) image, `scale` pixels per cell.
    pub fn to_ppm(&self, scale: usize) -> Vec<u8> {
        let (w, h) = (WIDTH * scale, HEIGHT * scale);
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                out.extend_from_slice(&self.get(Pos::new(y / scale, x / scale)).rgb());
            }
        }
        out
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in 0..HEIGHT {
            for col in 0..WIDTH {
                write!(f, "{}", self.get(Pos::new(row, col)).symbol())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Frame:")?;
        fmt::Display::fmt(self, f)
    }
}

/// Write the network input for `(frame, action)` into `out`.
///
/// Layout is `[row][col][channel]` with `INPUT_CHANNELS` channels: the cell
/// class one-hot in channels `0..6`, then the action one-hot broadcast to
/// every cell in channels `6..11`.
pub fn encode_input_into<T: Scalar>(frame: &Frame, action: Action, out: &mut [T]) {
    assert_eq!(out.len(), CELLS * INPUT_CHANNELS);
    out.fill(T::zero());
    for (cell, &class) in frame.cells().iter().enumerate() {
        let base = cell * INPUT_CHANNELS;
        out[base + class.index()] = T::one();
        out[base + NUM_CLASSES + action.index()] = T::one();
    }
}

pub fn encode_input<T: Scalar>(frame: &Frame, action: Action) -> Vec<T> {
    let mut out = vec![T::zero(); CELLS * INPUT_CHANNELS];
    encode_input_into(frame, action, &mut out);
    out
}
