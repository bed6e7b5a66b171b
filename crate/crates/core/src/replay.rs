//! Transition storage, union sampling and the offline dataset file.
//!
//! Dataset files are little-endian:
//!
//! ```text
//! magic "O2OD" | version u32 | state_dim u32 | action_dim u32 | count u64
//! count x ( state f64[state_dim] | action f64[action_dim] | reward f64
//!           | next_state f64[state_dim] | done u8 )
//! ```

use std::path::Path;

use rand::Rng;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"O2OD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only at a genuine terminal state, never at a time-limit cut.
    pub done: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be > 0".into()));
        }
        Ok(Self {
            state_dim,
            action_dim,
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    fn validate(&self, t: &Transition) -> Result<()> {
        let dims = [
            ("state", t.state.len(), self.state_dim),
            ("action", t.action.len(), self.action_dim),
            ("next_state", t.next_state.len(), self.state_dim),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(Error::InvalidTransition(format!(
                    "{what} has dimension {got}, buffer expects {expected}"
                )));
            }
        }
        let finite = t
            .state
            .iter()
            .chain(&t.action)
            .chain(&t.next_state)
            .chain(std::iter::once(&t.reward))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidTransition("non-finite field".into()));
        }
        if t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::InvalidTransition("action outside [-1, 1]".into()));
        }
        Ok(())
    }

    /// Appends `t`, evicting the oldest transition once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        self.validate(&t)?;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `index`-th oldest stored transition.
    pub fn get(&self, index: usize) -> Option<&Transition> {
        if index >= self.storage.len() {
            return None;
        }
        let start = if self.storage.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.storage.get((start + index) % self.storage.len())
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        (0..self.len()).map(move |i| self.get(i).unwrap())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let record = 8 * (2 * self.state_dim + self.action_dim + 1) + 1;
        let mut w = Writer {
            buf: Vec::with_capacity(HEADER_LEN as usize + record * self.len()),
        };
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u32(self.state_dim as u32);
        w.u32(self.action_dim as u32);
        w.u64(self.len() as u64);
        for t in self.iter() {
            w.f64s(&t.state);
            w.f64s(&t.action);
            w.f64(t.reward);
            w.f64s(&t.next_state);
            w.u8(t.done as u8);
        }
        w.buf
    }

    /// Parses a dataset file image. The buffer capacity equals the record count.
    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(data, path);
        if data.len() < HEADER_LEN as usize {
            return Err(r.malformed(format!(
                "header needs {HEADER_LEN} bytes, file has {}",
                data.len()
            )));
        }
        if r.take(4)? != DATASET_MAGIC {
            return Err(r.malformed("bad magic, not a dataset file"));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(r.malformed(format!("unsupported dataset version {version}")));
        }
        let state_dim = r.u32()? as usize;
        let action_dim = r.u32()? as usize;
        let count = r.u64()?;
        let record = 8 * (2 * state_dim as u64 + action_dim as u64 + 1) + 1;
        let expected = count
            .checked_mul(record)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| r.malformed("record count overflows"))?;
        if (data.len() as u64) < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: data.len() as u64,
            });
        }
        if data.len() as u64 > expected {
            return Err(r.malformed(format!(
                "{} bytes after the last record",
                data.len() as u64 - expected
            )));
        }
        let mut buffer = ReplayBuffer::new(state_dim, action_dim, (count as usize).max(1))?;
        for _ in 0..count {
            let state = r.f64s(state_dim)?;
            let action = r.f64s(action_dim)?;
            let reward = r.f64()?;
            let next_state = r.f64s(state_dim)?;
            let done = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(r.malformed(format!("done flag byte {other}"))),
            };
            buffer.push(Transition {
                state,
                action,
                reward,
                next_state,
                done,
            })?;
        }
        Ok(buffer)
    }
}

pub fn save_dataset(buffer: &ReplayBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, buffer.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ReplayBuffer> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ReplayBuffer::from_bytes(&data, path)
}

/// Loads a dataset and checks its dimensions against an environment.
pub fn load_dataset_for(
    path: impl AsRef<Path>,
    state_dim: usize,
    action_dim: usize,
) -> Result<ReplayBuffer> {
    let buffer = load_dataset(path)?;
    if buffer.state_dim() != state_dim {
        return Err(Error::Dimension {
            what: "dataset state_dim".into(),
            expected: state_dim,
            got: buffer.state_dim(),
        });
    }
    if buffer.action_dim() != action_dim {
        return Err(Error::Dimension {
            what: "dataset action_dim".into(),
            expected: action_dim,
            got: buffer.action_dim(),
        });
    }
    Ok(buffer)
}

/// A sampled mini-batch stored as flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
    /// Provenance of each row: true when drawn from the online buffer.
    pub online: Vec<bool>,
}

impl Batch {
    pub fn with_capacity(state_dim: usize, action_dim: usize, rows: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            states: Vec::with_capacity(rows * state_dim),
            actions: Vec::with_capacity(rows * action_dim),
            rewards: Vec::with_capacity(rows),
            next_states: Vec::with_capacity(rows * state_dim),
            dones: Vec::with_capacity(rows),
            online: Vec::with_capacity(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, t: &Transition, online: bool) {
        self.states.extend_from_slice(&t.state);
        self.actions.extend_from_slice(&t.action);
        self.rewards.push(t.reward);
        self.next_states.extend_from_slice(&t.next_state);
        self.dones.push(t.done);
        self.online.push(online);
    }

    pub fn from_transitions<'a>(
        state_dim: usize,
        action_dim: usize,
        items: impl IntoIterator<Item = &'a Transition>,
    ) -> Self {
        let mut b = Self::with_capacity(state_dim, action_dim, 0);
        for t in items {
            b.push(t, false);
        }
        b
    }

    pub fn online_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.online.iter().filter(|&&o| o).count() as f64 / self.len() as f64
    }
}

/// `batch_size` draws with replacement, uniform over the concatenation of
/// `off` followed by `on`.
pub fn sample_union<R: Rng + ?Sized>(
    off: &ReplayBuffer,
    on: &ReplayBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if off.state_dim != on.state_dim || off.action_dim != on.action_dim {
        return Err(Error::Dimension {
            what: "online buffer state_dim".into(),
            expected: off.state_dim,
            got: on.state_dim,
        });
    }
    let total = off.len() + on.len();
    if total == 0 {
        return Err(Error::EmptyBuffers);
    }
    let mut batch = Batch::with_capacity(off.state_dim, off.action_dim, batch_size);
    for _ in 0..batch_size {
        let idx = rng.random_range(0..total);
        if idx < off.len() {
            batch.push(&off.storage[idx], false);
        } else {
            batch.push(&on.storage[idx - off.len()], true);
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(x: f64) -> Transition {
        Transition {
            state: vec![x, -x],
            action: vec![0.5],
            reward: x * 0.1,
            next_state: vec![x + 1.0, 0.0],
            done: false,
        }
    }

    #[test]
    fn push_and_evict() {
        let mut b = ReplayBuffer::new(2, 1, 2).unwrap();
        b.push(tr(1.0)).unwrap();
        assert_eq!(b.len(), 1);
        b.push(tr(2.0)).unwrap();
        b.push(tr(3.0)).unwrap();
        assert_eq!(b.len(), 2);
        let kept: Vec<f64> = b.iter().map(|t| t.state[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn invalid_transitions_rejected() {
        let mut b = ReplayBuffer::new(2, 1, 4).unwrap();
        let mut bad = tr(1.0);
        bad.action = vec![1.5];
        assert!(matches!(b.push(bad), Err(Error::InvalidTransition(_))));
        let mut bad = tr(1.0);
        bad.reward = f64::NAN;
        assert!(b.push(bad).is_err());
        let mut bad = tr(1.0);
        bad.state = vec![0.0];
        assert!(b.push(bad).is_err());
        assert!(b.is_empty());
    }

    #[test]
    fn union_degenerate_cases() {
        let mut off = ReplayBuffer::new(2, 1, 10).unwrap();
        let on = ReplayBuffer::new(2, 1, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_union(&off, &on, 4, &mut rng),
            Err(Error::EmptyBuffers)
        ));
        off.push(tr(1.0)).unwrap();
        let batch = sample_union(&off, &on, 8, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert!(batch.online.iter().all(|o| !o));
        assert!(sample_union(&off, &on, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn dataset_round_trip_small() {
        let mut b = ReplayBuffer::new(2, 1, 3).unwrap();
        for i in 0..3 {
            let mut t = tr(i as f64 + 0.25);
            t.done = i == 2;
            b.push(t).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.o2od");
        save_dataset(&b, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>());
    }

    #[test]
    fn dataset_errors_are_distinct() {
        let mut b = ReplayBuffer::new(4, 1, 3).unwrap();
        b.push(Transition {
            state: vec![0.0; 4],
            action: vec![0.0],
            reward: 1.0,
            next_state: vec![0.0; 4],
            done: false,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.o2od");
        save_dataset(&b, &path).unwrap();
        let err = load_dataset_for(&path, 2, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 2, got: 4, .. }));

        let bytes = b.to_bytes();
        let err = ReplayBuffer::from_bytes(&bytes[..bytes.len() - 1], &path).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"NOPE");
        let err = ReplayBuffer::from_bytes(&bad, &path).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }));

        let err = ReplayBuffer::from_bytes(&bytes[..10], &path).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }));

        let err = load_dataset(dir.path().join("missing.o2od")).unwrap_err();
        assert_eq!(err.category(), "not-found");
    }
}
