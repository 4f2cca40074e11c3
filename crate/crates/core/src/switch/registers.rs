//! Register arrays of the switch pipeline.

use std::collections::HashSet;

use thiserror::Error;

use crate::hashing::HashKey;
use crate::namespace::{MetadataRecord, NamespaceError};
use crate::protocol::{LockRef, LOCK_ARRAYS};

pub const VALUE_ARRAYS: usize = 32;
pub const LOCK_SLOTS: usize = 1 << 16;
pub const CMS_ROWS: usize = 3;
pub const CMS_WIDTH: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LockError {
    #[error("lock counter {0:?} would overflow")]
    Overflow(LockRef),
    #[error("lock counter {0:?} would underflow")]
    Underflow(LockRef),
}

/// 32 arrays of 32-bit words; slot `i` of a cache entry is word `i` of
/// each array, so a 40-byte file record spans arrays 0..10.
#[derive(Debug, Clone)]
pub struct ValueRegisters {
    arrays: Vec<Vec<u32>>,
}

impl ValueRegisters {
    pub fn new(capacity: usize) -> Self {
        Self {
            arrays: vec![vec![0; capacity]; VALUE_ARRAYS],
        }
    }

    pub fn capacity(&self) -> usize {
        self.arrays[0].len()
    }

    /// Writes a record and returns how many arrays it occupies.
    pub fn write(&mut self, slot: usize, record: &MetadataRecord) -> usize {
        let bytes = record.encode();
        let words = bytes.len() / 4;
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            self.arrays[i][slot] = u32::from_le_bytes(chunk.try_into().unwrap());
        }
        words
    }

    pub fn read(&self, slot: usize) -> Result<MetadataRecord, NamespaceError> {
        let first = self.arrays[0][slot].to_le_bytes();
        let words = match first[0] {
            1 => 10,
            2 => 6,
            _ => return Err(NamespaceError::MalformedRecord("unknown kind tag")),
        };
        let mut bytes = Vec::with_capacity(words * 4);
        for a in &self.arrays[..words] {
            bytes.extend_from_slice(&a[slot].to_le_bytes());
        }
        MetadataRecord::decode(&bytes)
    }

    pub fn clear(&mut self, slot: usize) {
        for a in &mut self.arrays {
            a[slot] = 0;
        }
    }
}

/// Eight arrays of 65,536 16-bit read-lock counters.
#[derive(Debug, Clone)]
pub struct LockCounters {
    counts: Vec<u16>,
}

impl Default for LockCounters {
    fn default() -> Self {
        Self {
            counts: vec![0; LOCK_ARRAYS * LOCK_SLOTS],
        }
    }
}

impl LockCounters {
    fn idx(l: LockRef) -> usize {
        debug_assert!((1..=LOCK_ARRAYS as u8).contains(&l.array));
        (l.array as usize - 1) * LOCK_SLOTS + l.slot as usize
    }

    pub fn get(&self, l: LockRef) -> u16 {
        self.counts[Self::idx(l)]
    }

    pub fn increment(&mut self, l: LockRef) -> Result<u16, LockError> {
        let c = &mut self.counts[Self::idx(l)];
        *c = c.checked_add(1).ok_or(LockError::Overflow(l))?;
        Ok(*c)
    }

    pub fn decrement(&mut self, l: LockRef) -> Result<u16, LockError> {
        let c = &mut self.counts[Self::idx(l)];
        *c = c.checked_sub(1).ok_or(LockError::Underflow(l))?;
        Ok(*c)
    }

    pub fn nonzero(&self) -> Vec<(LockRef, u16)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, &c)| {
                (
                    LockRef {
                        array: (i / LOCK_SLOTS + 1) as u8,
                        slot: (i % LOCK_SLOTS) as u16,
                    },
                    c,
                )
            })
            .collect()
    }

    pub fn all_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const CMS_SEEDS: [u64; CMS_ROWS] = [
    0x9e37_79b9_7f4a_7c15,
    0xc2b2_ae3d_27d4_eb4f,
    0x1656_67b1_9e37_79f9,
];

/// Three-row count-min sketch of saturating 16-bit counters.
#[derive(Debug, Clone)]
pub struct CountMinSketch {
    rows: Vec<Vec<u16>>,
}

impl Default for CountMinSketch {
    fn default() -> Self {
        Self {
            rows: vec![vec![0; CMS_WIDTH]; CMS_ROWS],
        }
    }
}

impl CountMinSketch {
    fn column(row: usize, key: HashKey) -> usize {
        (mix64(key.0 ^ CMS_SEEDS[row]) as usize) & (CMS_WIDTH - 1)
    }

    /// Counts one occurrence and returns the new estimate.
    pub fn update(&mut self, key: HashKey) -> u16 {
        let mut est = u16::MAX;
        for (r, row) in self.rows.iter_mut().enumerate() {
            let c = &mut row[Self::column(r, key)];
            *c = c.saturating_add(1);
            est = est.min(*c);
        }
        est
    }

    pub fn estimate(&self, key: HashKey) -> u16 {
        (0..CMS_ROWS)
            .map(|r| self.rows[r][Self::column(r, key)])
            .min()
            .unwrap()
    }

    pub fn reset(&mut self) {
        for row in &mut self.rows {
            row.fill(0);
        }
    }
}

/// Register arrays a traversal may touch, for the single-access check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegArray {
    Value(u8),
    Lock(u8),
    Valid,
    Freq,
    Cms(u8),
    Seq,
}

impl std::fmt::Display for RegArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegArray::Value(i) => write!(f, "val{i}"),
            RegArray::Lock(i) => write!(f, "lock{i}"),
            RegArray::Valid => f.write_str("valid"),
            RegArray::Freq => f.write_str("freq"),
            RegArray::Cms(i) => write!(f, "cms{i}"),
            RegArray::Seq => f.write_str("seq"),
        }
    }
}

/// Records array accesses within one traversal and flags repeats.
#[derive(Debug, Clone, Default)]
pub struct AccessTracker {
    touched: Vec<RegArray>,
    seen: HashSet<RegArray>,
    pub violations: u64,
}

impl AccessTracker {
    pub fn begin(&mut self) {
        self.touched.clear();
        self.seen.clear();
    }

    pub fn touch(&mut self, a: RegArray) {
        if !self.seen.insert(a) {
            self.violations += 1;
        }
        self.touched.push(a);
    }

    pub fn touched(&self) -> &[RegArray] {
        &self.touched
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::namespace::Principal;
    use std::collections::HashMap;

    #[test]
    fn value_registers_roundtrip() {
        let mut v = ValueRegisters::new(4);
        let mut f = MetadataRecord::file(0o600, Principal::new(5, 6), 9);
        f.size = 1 << 40;
        let d = MetadataRecord::directory(0o711, Principal::new(1, 2), 3);
        assert_eq!(v.write(1, &f), 10);
        assert_eq!(v.write(2, &d), 6);
        assert_eq!(v.read(1).unwrap(), f);
        assert_eq!(v.read(2).unwrap(), d);
        assert!(v.read(0).is_err());
        // A shorter record over a longer one must not pick up stale words.
        v.write(1, &d);
        assert_eq!(v.read(1).unwrap(), d);
    }

    #[test]
    fn lock_bounds() {
        let mut l = LockCounters::default();
        let r = LockRef {
            array: 8,
            slot: 65535,
        };
        assert_eq!(l.decrement(r), Err(LockError::Underflow(r)));
        l.increment(r).unwrap();
        assert_eq!(l.nonzero(), vec![(r, 1)]);
        l.decrement(r).unwrap();
        assert!(l.all_zero());
        for _ in 0..u16::MAX {
            l.increment(r).unwrap();
        }
        assert_eq!(l.increment(r), Err(LockError::Overflow(r)));
    }

    #[test]
    fn cms_threshold_examples() {
        let mut s = CountMinSketch::default();
        let k = HashKey(42);
        let over: Vec<bool> = (0..11).map(|_| s.update(k) > 10).collect();
        assert_eq!(over.iter().filter(|&&b| b).count(), 1);
        assert!(over[10]);
        s.reset();
        assert_eq!(s.estimate(k), 0);
    }

    #[test]
    fn cms_never_undercounts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut s = CountMinSketch::default();
        let mut exact: HashMap<u64, u16> = HashMap::new();
        for _ in 0..200_000 {
            let k = rng.random_range(0..50_000u64);
            s.update(HashKey(k));
            *exact.entry(k).or_default() += 1;
        }
        for (k, c) in exact {
            assert!(s.estimate(HashKey(k)) >= c);
        }
    }

    #[test]
    fn tracker_flags_repeats() {
        let mut t = AccessTracker::default();
        t.begin();
        t.touch(RegArray::Lock(1));
        t.touch(RegArray::Lock(2));
        assert_eq!(t.violations, 0);
        t.touch(RegArray::Lock(1));
        assert_eq!(t.violations, 1);
        t.begin();
        t.touch(RegArray::Lock(1));
        assert_eq!(t.violations, 1);
    }
}
