//! Count-constraint filters for unified predictions.
//!
//! A unified frame can lose an element (no cell predicts it) or grow
//! copies of it. [`correct_missing`] re-inserts an element where the heads
//! put it, and [`correct_additional`] keeps one supported copy and replaces
//! the rest with what the heads see at those cells. [`apply_corrections`]
//! runs both for Pacman and the ghost, with extra Pacman handling so the
//! agent always ends up exactly once in the frame.

use rand::Rng;

use crate::ensemble::{ConsolidationMode, EnsemblePrediction, UnifiedPrediction};
use crate::env::{CellClass, Frame, Pos, CELLS, NUM_CLASSES};
use crate::scalar::Scalar;

/// Classes whose counts are enforced, in correction order.
pub const TRACKED: [CellClass; 2] = [CellClass::Pacman, CellClass::Ghost];

/// Expected element counts, captured from the last real observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintSet {
    pacman: usize,
    ghost: usize,
}

impl ConstraintSet {
    pub fn new(pacman: usize, ghost: usize) -> Self {
        Self { pacman, ghost }
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self::new(frame.count(CellClass::Pacman), frame.count(CellClass::Ghost))
    }

    /// Expected count, or `None` for untracked classes.
    pub fn get(&self, class: CellClass) -> Option<usize> {
        match class {
            CellClass::Pacman => Some(self.pacman),
            CellClass::Ghost => Some(self.ghost),
            _ => None,
        }
    }
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self::new(1, 1)
    }
}

/// Per-rollout state the filters fall back on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RolloutMemory {
    last_pos: [Option<Pos>; NUM_CLASSES],
    /// Most recent substitute written over a surplus copy.
    pub last_elem: CellClass,
}

impl RolloutMemory {
    /// Positions of the tracked classes in `frame` (the first copy if there
    /// are several); `last_elem` starts as Eaten.
    pub fn from_frame(frame: &Frame) -> Self {
        let mut last_pos = [None; NUM_CLASSES];
        for class in TRACKED {
            last_pos[class.index()] = frame.positions(class).first().copied();
        }
        Self { last_pos, last_elem: CellClass::Eaten }
    }

    pub fn last_pos(&self, class: CellClass) -> Option<Pos> {
        self.last_pos[class.index()]
    }

    pub fn set_last_pos(&mut self, class: CellClass, pos: Pos) {
        self.last_pos[class.index()] = Some(pos);
    }

    /// Remember tracked classes that appear exactly once in `frame`.
    pub fn refresh(&mut self, frame: &Frame) {
        for class in TRACKED {
            if let Some(p) = frame.unique_position(class) {
                self.set_last_pos(class, p);
            }
        }
    }
}

/// Every head's positions of `element`, concatenated in head order.
fn head_positions<T: Scalar>(heads: &EnsemblePrediction<T>, element: CellClass) -> Vec<Pos> {
    heads.head_frames().iter().flat_map(|f| f.positions(element)).collect()
}

/// Most frequent position; the lowest row-major index wins ties.
fn mode_pos(positions: &[Pos]) -> Option<Pos> {
    let mut counts = vec![0usize; CELLS];
    for p in positions {
        counts[p.index()] += 1;
    }
    let (best, &n) = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (n > 0).then(|| Pos::from_index(best))
}

fn mode_class(classes: &[CellClass]) -> Option<CellClass> {
    let mut counts = [0usize; NUM_CLASSES];
    for c in classes {
        counts[c.index()] += 1;
    }
    let (best, &n) = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (n > 0).then(|| CellClass::ALL[best])
}

/// Mode under Average/Voting, a uniform draw under Sampling.
fn choose<X: Copy, R: Rng + ?Sized>(
    items: &[X],
    mode: ConsolidationMode,
    rng: &mut R,
    modal: fn(&[X]) -> Option<X>,
) -> Option<X> {
    if items.is_empty() {
        return None;
    }
    match mode {
        ConsolidationMode::Sampling => Some(items[rng.random_range(0..items.len())]),
        ConsolidationMode::Average | ConsolidationMode::Voting => modal(items),
    }
}

/// Insert one `element` if the frame holds fewer than `constraint`.
///
/// The position comes from the heads' argmax frames, or from
/// `memory.last_pos` when no head predicts the element. Returns whether
/// the frame changed.
pub fn correct_missing<T: Scalar, R: Rng + ?Sized>(
    frame: &mut Frame,
    heads: &EnsemblePrediction<T>,
    element: CellClass,
    constraint: usize,
    memory: &mut RolloutMemory,
    mode: ConsolidationMode,
    rng: &mut R,
) -> bool {
    if frame.count(element) >= constraint {
        return false;
    }
    let p = head_positions(heads, element);
    let Some(target) = choose(&p, mode, rng, mode_pos).or(memory.last_pos(element)) else {
        return false;
    };
    frame.set(target, element);
    memory.set_last_pos(element, target);
    true
}

/// Substitute for a discarded copy at `at`: the heads' classes there,
/// excluding `element`, else `memory.last_elem`.
fn substitute<T: Scalar, R: Rng + ?Sized>(
    heads: &EnsemblePrediction<T>,
    element: CellClass,
    at: Pos,
    memory: &RolloutMemory,
    mode: ConsolidationMode,
    rng: &mut R,
) -> CellClass {
    let v: Vec<CellClass> = heads.head_frames().iter().map(|f| f.get(at)).filter(|&c| c != element).collect();
    choose(&v, mode, rng, mode_class).unwrap_or(memory.last_elem)
}

/// Head-supported copies of `element` in `frame`: every head position that
/// is also a copy in the frame, with multiplicity.
fn supported<T: Scalar>(frame: &Frame, heads: &EnsemblePrediction<T>, element: CellClass) -> Vec<Pos> {
    head_positions(heads, element).into_iter().filter(|&p| frame.get(p) == element).collect()
}

/// Remove surplus copies of `element` if the frame holds more than
/// `constraint`.
///
/// Only copies some head also predicts are considered: one is kept and the
/// others are overwritten. Copies no head predicts are left alone, and
/// nothing happens when no copy has head support. Returns whether the
/// frame changed.
pub fn correct_additional<T: Scalar, R: Rng + ?Sized>(
    frame: &mut Frame,
    heads: &EnsemblePrediction<T>,
    element: CellClass,
    constraint: usize,
    memory: &mut RolloutMemory,
    mode: ConsolidationMode,
    rng: &mut R,
) -> bool {
    if frame.count(element) <= constraint {
        return false;
    }
    let g = supported(frame, heads, element);
    let Some(keeper) = choose(&g, mode, rng, mode_pos) else {
        return false;
    };
    let mut rest: Vec<Pos> = g.into_iter().filter(|&p| p != keeper).collect();
    rest.sort_by_key(|p| p.index());
    rest.dedup();
    for at in rest {
        let v = substitute(heads, element, at, memory, mode, rng);
        frame.set(at, v);
        memory.last_elem = v;
    }
    true
}

/// Reduce Pacman to a single copy.
///
/// The keeper is chosen as in [`correct_additional`] when some copy has
/// head support, otherwise it is the copy closest to the previous position
/// (the previous cell itself only if nothing else is left). Every other
/// copy is discarded: the one on the previous position becomes Eaten, the
/// rest take a head substitute.
fn correct_surplus_pacman<T: Scalar, R: Rng + ?Sized>(
    frame: &mut Frame,
    heads: &EnsemblePrediction<T>,
    memory: &mut RolloutMemory,
    mode: ConsolidationMode,
    rng: &mut R,
) {
    let element = CellClass::Pacman;
    let copies = frame.positions(element);
    let previous = memory.last_pos(element);
    let g = supported(frame, heads, element);
    let keeper = choose(&g, mode, rng, mode_pos).unwrap_or_else(|| {
        let moved: Vec<Pos> = copies.iter().copied().filter(|&p| Some(p) != previous).collect();
        let pool = if moved.is_empty() { &copies } else { &moved };
        match previous {
            Some(prev) => *pool.iter().min_by_key(|p| (p.manhattan(prev), p.index())).expect("surplus implies copies"),
            None => pool[0],
        }
    });
    for at in copies.into_iter().filter(|&p| p != keeper) {
        let v = if Some(at) == previous {
            CellClass::Eaten
        } else {
            substitute(heads, element, at, memory, mode, rng)
        };
        frame.set(at, v);
        memory.last_elem = v;
    }
}

fn correct_class<T: Scalar, R: Rng + ?Sized>(
    frame: &mut Frame,
    heads: &EnsemblePrediction<T>,
    class: CellClass,
    constraint: usize,
    memory: &mut RolloutMemory,
    mode: ConsolidationMode,
    rng: &mut R,
) {
    let count = frame.count(class);
    if count < constraint {
        correct_missing(frame, heads, class, constraint, memory, mode, rng);
    } else if count > constraint {
        if class == CellClass::Pacman && constraint == 1 {
            correct_surplus_pacman(frame, heads, memory, mode, rng);
        } else {
            correct_additional(frame, heads, class, constraint, memory, mode, rng);
        }
    }
}

/// Enforce the constraints on a unified prediction: Pacman, then the ghost,
/// then Pacman again in case the ghost pass overwrote or created one. The
/// reward passes through unchanged. Afterwards `memory.last_pos` is
/// refreshed for every tracked class present exactly once.
pub fn apply_corrections<T: Scalar, R: Rng + ?Sized>(
    prediction: UnifiedPrediction,
    heads: &EnsemblePrediction<T>,
    constraints: &ConstraintSet,
    memory: &mut RolloutMemory,
    mode: ConsolidationMode,
    rng: &mut R,
) -> UnifiedPrediction {
    let mut frame = prediction.frame;
    for class in TRACKED.into_iter().chain([CellClass::Pacman]) {
        if let Some(c) = constraints.get(class) {
            correct_class(&mut frame, heads, class, c, memory, mode, rng);
        }
    }
    memory.refresh(&frame);
    UnifiedPrediction { frame, reward: prediction.reward }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::env::RewardClass;

    fn base() -> Frame {
        Frame::filled(CellClass::Food)
    }

    fn with(mut f: Frame, cells: &[(usize, usize, CellClass)]) -> Frame {
        for &(r, c, class) in cells {
            f.set(Pos::new(r, c), class);
        }
        f
    }

    fn ensemble(frames: &[Frame]) -> EnsemblePrediction<f32> {
        EnsemblePrediction::from_frames(frames, &vec![RewardClass::NONE; frames.len()]).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn missing_ghost_goes_to_modal_head_position() {
        let mut heads = vec![with(base(), &[(3, 4, CellClass::Ghost)]); 6];
        heads.extend(vec![with(base(), &[(3, 5, CellClass::Ghost)]); 4]);
        let heads = ensemble(&heads);
        let mut frame = base();
        let mut memory = RolloutMemory::from_frame(&with(base(), &[(9, 9, CellClass::Ghost)]));
        assert!(correct_missing(&mut frame, &heads, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Voting, &mut rng()));
        assert_eq!(frame.positions(CellClass::Ghost), vec![Pos::new(3, 4)]);
        assert_eq!(memory.last_pos(CellClass::Ghost), Some(Pos::new(3, 4)));
    }

    #[test]
    fn missing_ghost_falls_back_to_memory() {
        let heads = ensemble(&[base(), base()]);
        let mut frame = base();
        let mut memory = RolloutMemory::from_frame(&with(base(), &[(9, 9, CellClass::Ghost)]));
        correct_missing(&mut frame, &heads, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Average, &mut rng());
        assert_eq!(frame.positions(CellClass::Ghost), vec![Pos::new(9, 9)]);
    }

    #[test]
    fn missing_is_noop_at_constraint() {
        let heads = ensemble(&[with(base(), &[(1, 1, CellClass::Ghost)])]);
        let mut frame = with(base(), &[(2, 2, CellClass::Ghost)]);
        let before = frame;
        let mut memory = RolloutMemory::from_frame(&frame);
        assert!(!correct_missing(&mut frame, &heads, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Voting, &mut rng()));
        assert_eq!(frame, before);
    }

    #[test]
    fn sampling_draws_from_head_positions() {
        let heads = ensemble(&[with(base(), &[(1, 1, CellClass::Ghost)]), with(base(), &[(5, 5, CellClass::Ghost)])]);
        let mut r = rng();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..50 {
            let mut frame = base();
            let mut memory = RolloutMemory::from_frame(&frame);
            correct_missing(&mut frame, &heads, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Sampling, &mut r);
            seen.insert(frame.unique_position(CellClass::Ghost).unwrap());
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn duplicate_ghost_replaced_by_head_majority() {
        let mut heads = vec![with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Eaten)]); 7];
        heads.extend(vec![with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Food)]); 3]);
        let heads = ensemble(&heads);
        let mut frame = with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Ghost)]);
        let mut memory = RolloutMemory::from_frame(&frame);
        // (5,5) is not supported by any head, so the verbatim routine leaves it.
        assert!(correct_additional(&mut frame, &heads, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Voting, &mut rng()));
        assert_eq!(frame.count(CellClass::Ghost), 2);

        // With one head also predicting (5,5), that copy is substituted.
        let mut heads2: Vec<Frame> = (0..7).map(|_| with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Eaten)])).collect();
        heads2.extend((0..3).map(|_| with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Food)])));
        heads2.push(with(base(), &[(5, 5, CellClass::Ghost)]));
        let heads2 = ensemble(&heads2);
        let mut frame = with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Ghost)]);
        correct_additional(&mut frame, &heads2, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Voting, &mut rng());
        assert_eq!(frame.positions(CellClass::Ghost), vec![Pos::new(2, 2)]);
        assert_eq!(frame.get(Pos::new(5, 5)), CellClass::Eaten);
        assert_eq!(memory.last_elem, CellClass::Eaten);
    }

    #[test]
    fn additional_without_support_is_unchanged() {
        let heads = ensemble(&[base(), base()]);
        let mut frame = with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Ghost)]);
        let before = frame;
        let mut memory = RolloutMemory::from_frame(&frame);
        assert!(!correct_additional(&mut frame, &heads, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Voting, &mut rng()));
        assert_eq!(frame, before);
    }

    #[test]
    fn substitute_falls_back_to_last_element() {
        // Every head has the ghost at both cells, so v is empty at the discard.
        let heads = ensemble(&[with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Ghost)])]);
        let mut frame = with(base(), &[(2, 2, CellClass::Ghost), (5, 5, CellClass::Ghost)]);
        let mut memory = RolloutMemory::from_frame(&frame);
        memory.last_elem = CellClass::PowerPill;
        correct_additional(&mut frame, &heads, CellClass::Ghost, 1, &mut memory, ConsolidationMode::Voting, &mut rng());
        assert_eq!(frame.get(Pos::new(5, 5)), CellClass::PowerPill);
        assert_eq!(frame.count(CellClass::Ghost), 1);
    }

    #[test]
    fn extra_pacman_on_previous_cell_turns_eaten() {
        let previous = with(base(), &[(4, 4, CellClass::Pacman), (8, 8, CellClass::Ghost)]);
        let mut memory = RolloutMemory::from_frame(&previous);
        let heads = ensemble(&[with(base(), &[(4, 5, CellClass::Pacman), (8, 8, CellClass::Ghost)]); 3]);
        let unified = UnifiedPrediction {
            frame: with(base(), &[(4, 4, CellClass::Pacman), (4, 5, CellClass::Pacman), (8, 8, CellClass::Ghost)]),
            reward: RewardClass::FOOD,
        };
        let out = apply_corrections(unified, &heads, &ConstraintSet::default(), &mut memory, ConsolidationMode::Voting, &mut rng());
        assert_eq!(out.frame.get(Pos::new(4, 4)), CellClass::Eaten);
        assert_eq!(out.frame.positions(CellClass::Pacman), vec![Pos::new(4, 5)]);
        assert_eq!(out.reward, RewardClass::FOOD);
        assert_eq!(memory.last_pos(CellClass::Pacman), Some(Pos::new(4, 5)));
    }

    #[test]
    fn unsupported_extra_pacman_keeps_the_moved_copy() {
        let previous = with(base(), &[(4, 4, CellClass::Pacman), (8, 8, CellClass::Ghost)]);
        let mut memory = RolloutMemory::from_frame(&previous);
        let heads = ensemble(&[with(base(), &[(8, 8, CellClass::Ghost)])]);
        let unified = UnifiedPrediction {
            frame: with(base(), &[(4, 4, CellClass::Pacman), (4, 5, CellClass::Pacman), (0, 0, CellClass::Pacman), (8, 8, CellClass::Ghost)]),
            reward: RewardClass::NONE,
        };
        let out = apply_corrections(unified, &heads, &ConstraintSet::default(), &mut memory, ConsolidationMode::Voting, &mut rng());
        assert_eq!(out.frame.positions(CellClass::Pacman), vec![Pos::new(4, 5)]);
        assert_eq!(out.frame.get(Pos::new(4, 4)), CellClass::Eaten);
        assert_eq!(out.frame.get(Pos::new(0, 0)), CellClass::Food);
    }

    #[test]
    fn missing_pacman_and_extra_ghost_together() {
        let previous = with(base(), &[(4, 4, CellClass::Pacman), (8, 8, CellClass::Ghost)]);
        let mut memory = RolloutMemory::from_frame(&previous);
        let heads = ensemble(&[
            with(base(), &[(4, 5, CellClass::Pacman), (8, 8, CellClass::Ghost), (9, 9, CellClass::Ghost)]),
            with(base(), &[(4, 5, CellClass::Pacman), (8, 8, CellClass::Ghost), (9, 9, CellClass::Eaten)]),
            with(base(), &[(4, 5, CellClass::Pacman), (8, 8, CellClass::Ghost), (9, 9, CellClass::Eaten)]),
        ]);
        let unified = UnifiedPrediction {
            frame: with(base(), &[(8, 8, CellClass::Ghost), (9, 9, CellClass::Ghost)]),
            reward: RewardClass::NONE,
        };
        let out = apply_corrections(unified, &heads, &ConstraintSet::default(), &mut memory, ConsolidationMode::Voting, &mut rng());
        assert_eq!(out.frame.positions(CellClass::Pacman), vec![Pos::new(4, 5)]);
        assert_eq!(out.frame.positions(CellClass::Ghost), vec![Pos::new(8, 8)]);
        assert_eq!(out.frame.get(Pos::new(9, 9)), CellClass::Eaten);
    }

    #[test]
    fn satisfied_frame_is_untouched() {
        let frame = with(base(), &[(4, 4, CellClass::Pacman), (8, 8, CellClass::Ghost)]);
        let mut memory = RolloutMemory::from_frame(&frame);
        let heads = ensemble(&[with(base(), &[(0, 0, CellClass::Pacman), (0, 1, CellClass::Pacman)])]);
        let unified = UnifiedPrediction { frame, reward: RewardClass::PILL };
        for mode in ConsolidationMode::ALL {
            let out = apply_corrections(unified, &heads, &ConstraintSet::default(), &mut memory, mode, &mut rng());
            assert_eq!(out, unified);
        }
    }

    #[test]
    fn ghost_insertion_over_pacman_is_repaired() {
        // The only head puts the ghost on Pacman's cell.
        let previous = with(base(), &[(4, 4, CellClass::Pacman), (8, 8, CellClass::Ghost)]);
        let mut memory = RolloutMemory::from_frame(&previous);
        let heads = ensemble(&[with(base(), &[(4, 4, CellClass::Ghost)])]);
        let unified = UnifiedPrediction { frame: with(base(), &[(4, 4, CellClass::Pacman)]), reward: RewardClass::NONE };
        let out = apply_corrections(unified, &heads, &ConstraintSet::default(), &mut memory, ConsolidationMode::Voting, &mut rng());
        assert_eq!(out.frame.count(CellClass::Pacman), 1);
    }
}
