//! Replay memory with per-transition bootstrap masks.
//!
//! Each record carries a K-bit mask drawn once at insertion; head `k` only
//! ever trains on records whose bit `k` is set. Masks are never redrawn.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use crate::env::{Action, CellClass, Frame, RewardClass, CELLS};
use crate::error::{Error, Result};

const SNAPSHOT_MAGIC: &[u8; 4] = b"BTRB";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapMask(Vec<bool>);

impl BootstrapMask {
    /// K independent Bernoulli(0.5) bits.
    pub fn bernoulli<R: Rng + ?Sized>(heads: usize, rng: &mut R) -> Self {
        BootstrapMask((0..heads).map(|_| rng.random_bool(0.5)).collect())
    }

    pub fn all_ones(heads: usize) -> Self {
        BootstrapMask(vec![true; heads])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BootstrapMask(bits)
    }

    #[inline]
    pub fn get(&self, head: usize) -> bool {
        self.0[head]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

/// How masks are generated on push.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPolicy {
    Bernoulli,
    /// Every record trains every head (the single-head baseline).
    AllOnes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionRecord {
    pub state: Frame,
    pub action: Action,
    pub reward: RewardClass,
    pub next_state: Frame,
    pub done: bool,
    pub mask: BootstrapMask,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    records: VecDeque<TransitionRecord>,
    capacity: usize,
    heads: usize,
    policy: MaskPolicy,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, heads: usize, policy: MaskPolicy) -> Self {
        assert!(capacity > 0 && heads > 0);
        ReplayBuffer {
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            heads,
            policy,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn get(&self, i: usize) -> Option<&TransitionRecord> {
        self.records.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }

    /// Store a transition with a freshly drawn mask, evicting the oldest
    /// record when full.
    #[allow(clippy::too_many_arguments)]
    pub fn push<R: Rng + ?Sized>(
        &mut self,
        state: Frame,
        action: Action,
        reward: RewardClass,
        next_state: Frame,
        done: bool,
        rng: &mut R,
    ) {
        let mask = match self.policy {
            MaskPolicy::Bernoulli => BootstrapMask::bernoulli(self.heads, rng),
            MaskPolicy::AllOnes => BootstrapMask::all_ones(self.heads),
        };
        self.push_record(TransitionRecord { state, action, reward, next_state, done, mask });
    }

    pub fn push_record(&mut self, record: TransitionRecord) {
        assert_eq!(record.mask.len(), self.heads, "mask length must equal head count");
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    /// `n` distinct records drawn uniformly.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&TransitionRecord>> {
        if self.records.len() < n {
            return Err(Error::InsufficientData { requested: n, available: self.records.len() });
        }
        Ok(rand::seq::index::sample(rng, self.records.len(), n)
            .into_iter()
            .map(|i| &self.records[i])
            .collect())
    }

    /// Write a snapshot: `BTRB`, version, K, capacity, size, then records
    /// oldest first. Each record is the state cells (one byte each), action,
    /// reward class, next state cells, done flag and the mask packed
    /// LSB-first into `ceil(K / 8)` bytes. Integers are little endian.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_u32::<LittleEndian>(SNAPSHOT_VERSION)?;
        w.write_u32::<LittleEndian>(self.heads as u32)?;
        w.write_u64::<LittleEndian>(self.capacity as u64)?;
        w.write_u64::<LittleEndian>(self.records.len() as u64)?;
        let mut packed = vec![0u8; self.heads.div_ceil(8)];
        for rec in &self.records {
            write_frame(w, &rec.state)?;
            w.write_u8(rec.action.index() as u8)?;
            w.write_u8(rec.reward.index() as u8)?;
            write_frame(w, &rec.next_state)?;
            w.write_u8(rec.done as u8)?;
            packed.fill(0);
            for (k, &bit) in rec.mask.bits().iter().enumerate() {
                packed[k / 8] |= (bit as u8) << (k % 8);
            }
            w.write_all(&packed)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R, policy: MaskPolicy) -> Result<Self> {
        let bad = |reason: String| Error::Format { what: "replay snapshot", reason };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != SNAPSHOT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let heads = r.read_u32::<LittleEndian>()? as usize;
        let capacity = r.read_u64::<LittleEndian>()? as usize;
        let size = r.read_u64::<LittleEndian>()? as usize;
        if heads == 0 || capacity == 0 || size > capacity {
            return Err(bad(format!("inconsistent header K={heads} capacity={capacity} size={size}")));
        }
        let mut buffer = ReplayBuffer::new(capacity, heads, policy);
        let mut packed = vec![0u8; heads.div_ceil(8)];
        for _ in 0..size {
            let state = read_frame(r)?;
            let action = Action::from_index(r.read_u8()? as usize)
                .ok_or_else(|| bad("invalid action".into()))?;
            let reward = RewardClass::from_index(r.read_u8()? as usize)
                .ok_or_else(|| bad("invalid reward class".into()))?;
            let next_state = read_frame(r)?;
            let done = match r.read_u8()? {
                0 => false,
                1 => true,
                other => return Err(bad(format!("invalid done flag {other}"))),
            };
            r.read_exact(&mut packed)?;
            let bits = (0..heads).map(|k| packed[k / 8] >> (k % 8) & 1 == 1).collect();
            buffer.push_record(TransitionRecord {
                state,
                action,
                reward,
                next_state,
                done,
                mask: BootstrapMask(bits),
            });
        }
        Ok(buffer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, policy: MaskPolicy) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_snapshot(&mut r, policy)
    }
}

fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> std::io::Result<()> {
    let bytes: Vec<u8> = frame.cells().iter().map(|c| c.index() as u8).collect();
    w.write_all(&bytes)
}

fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut bytes = [0u8; CELLS];
    r.read_exact(&mut bytes)?;
    let mut frame = Frame::filled(CellClass::Wall);
    for (cell, &b) in frame.cells_mut().iter_mut().zip(bytes.iter()) {
        *cell = CellClass::from_index(b as usize).ok_or_else(|| Error::Format {
            what: "replay snapshot",
            reason: format!("invalid cell class {b}"),
        })?;
    }
    Ok(frame)
}
