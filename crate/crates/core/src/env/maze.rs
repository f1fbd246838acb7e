use std::path::Path;

use super::{CellClass, Frame, Pos, HEIGHT, WIDTH};
use crate::error::{Error, Result};

const DEFAULT_MAZE: &str = include_str!("../../assets/maze.txt");

/// Static level description loaded from the ASCII maze asset.
///
/// `#` wall, `.` food, `o` power pill, `P` pacman start, `G` ghost start and
/// ` ` an empty corridor. Start cells are empty corridor underneath.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Maze {
    board: Frame,
    pacman_start: Pos,
    ghost_start: Pos,
}

impl Maze {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if lines.len() != HEIGHT {
            return Err(Error::Maze(format!("expected {HEIGHT} rows, found {}", lines.len())));
        }
        let mut board = Frame::filled(CellClass::Wall);
        let mut pacman = None;
        let mut ghost = None;
        for (row, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != WIDTH {
                return Err(Error::Maze(format!(
                    "row {row} has {} columns, expected {WIDTH}",
                    chars.len()
                )));
            }
            for (col, ch) in chars.into_iter().enumerate() {
                let pos = Pos::new(row, col);
                let class = match ch {
                    '#' => CellClass::Wall,
                    '.' => CellClass::Food,
                    'o' => CellClass::PowerPill,
                    ' ' => CellClass::Eaten,
                    'P' | 'G' => {
                        let slot = if ch == 'P' { &mut pacman } else { &mut ghost };
                        if slot.replace(pos).is_some() {
                            return Err(Error::Maze(format!("more than one '{ch}'")));
                        }
                        CellClass::Eaten
                    }
                    other => {
                        return Err(Error::Maze(format!("unknown character {other:?} at {pos}")))
                    }
                };
                board.set(pos, class);
            }
        }
        let pacman_start = pacman.ok_or_else(|| Error::Maze("no pacman start 'P'".into()))?;
        let ghost_start = ghost.ok_or_else(|| Error::Maze("no ghost start 'G'".into()))?;
        Ok(Maze { board, pacman_start, ghost_start })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Board without agents: walls, food, pills and empty corridor.
    pub fn board(&self) -> &Frame {
        &self.board
    }

    pub fn pacman_start(&self) -> Pos {
        self.pacman_start
    }

    pub fn ghost_start(&self) -> Pos {
        self.ghost_start
    }

    pub fn is_wall(&self, pos: Pos) -> bool {
        self.board.get(pos) == CellClass::Wall
    }

    /// Board with both agents drawn at their start cells.
    pub fn initial_frame(&self) -> Frame {
        let mut f = self.board;
        f.set(self.pacman_start, CellClass::Pacman);
        f.set(self.ghost_start, CellClass::Ghost);
        f
    }
}

impl Default for Maze {
    fn default() -> Self {
        Self::parse(DEFAULT_MAZE).expect("bundled maze is valid")
    }
}
