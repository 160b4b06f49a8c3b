//! Index sets of scalar measurement entries.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// A scalar output entry: time step `t` and output channel `i`, both 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry {
    pub t: usize,
    pub i: usize,
}

impl Entry {
    pub const fn new(t: usize, i: usize) -> Self {
        Self { t, i }
    }
}

impl From<(usize, usize)> for Entry {
    fn from((t, i): (usize, usize)) -> Self {
        Self { t, i }
    }
}

/// Sorted, duplicate-free set of entries. Iteration is lexicographic in `(t, i)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct EntrySet {
    entries: Vec<Entry>,
}

impl EntrySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Entry> {
        self.entries.iter()
    }

    pub fn as_slice(&self) -> &[Entry] {
        &self.entries
    }

    pub fn contains(&self, e: Entry) -> bool {
        self.entries.binary_search(&e).is_ok()
    }

    /// Inserts `e`, returning false if it was already present.
    pub fn insert(&mut self, e: Entry) -> bool {
        match self.entries.binary_search(&e) {
            Ok(_) => false,
            Err(pos) => {
                self.entries.insert(pos, e);
                true
            }
        }
    }

    /// Entries of `self` that are not in `other`.
    pub fn difference(&self, other: &EntrySet) -> EntrySet {
        self.entries
            .iter()
            .copied()
            .filter(|e| !other.contains(*e))
            .collect()
    }

    pub fn union(&self, other: &EntrySet) -> EntrySet {
        self.entries.iter().chain(other.entries.iter()).copied().collect()
    }

    pub fn is_disjoint(&self, other: &EntrySet) -> bool {
        self.entries.iter().all(|e| !other.contains(*e))
    }

    pub fn is_subset(&self, other: &EntrySet) -> bool {
        self.entries.iter().all(|e| other.contains(*e))
    }
}

impl FromIterator<Entry> for EntrySet {
    fn from_iter<I: IntoIterator<Item = Entry>>(iter: I) -> Self {
        let mut entries: Vec<Entry> = iter.into_iter().collect();
        entries.sort_unstable();
        entries.dedup();
        Self { entries }
    }
}

impl FromIterator<(usize, usize)> for EntrySet {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        iter.into_iter().map(Entry::from).collect()
    }
}

impl<'a> IntoIterator for &'a EntrySet {
    type Item = &'a Entry;
    type IntoIter = core::slice::Iter<'a, Entry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Result of [`split_known`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: EntrySet,
    pub masked: EntrySet,
    pub test: EntrySet,
}

/// Round half away from zero, for nonnegative `x`.
fn round_count(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Randomly partitions `known` into train, masked and test sets.
///
/// The ordered known set is shuffled with a seeded Fisher-Yates pass; the
/// first `round(mask_frac * |known|)` shuffled entries are masked, the next
/// `round(test_frac * |known|)` are test, and the remainder is train.
pub fn split_known(known: &EntrySet, mask_frac: f64, test_frac: f64, seed: u64) -> Result<Split> {
    if known.is_empty() {
        return Err(Error::EmptyKnownSet);
    }
    let valid = |f: f64| f.is_finite() && (0.0..1.0).contains(&f);
    if !valid(mask_frac) || !valid(test_frac) || mask_frac + test_frac >= 1.0 {
        return Err(Error::FractionsExceedOne {
            mask: mask_frac,
            test: test_frac,
        });
    }
    let n = known.len();
    let n_mask = round_count(mask_frac * n as f64).min(n);
    let n_test = round_count(test_frac * n as f64).min(n - n_mask);

    let mut order: Vec<Entry> = known.as_slice().to_vec();
    SeededRng::new(seed).shuffle(&mut order);
    let masked: EntrySet = order[..n_mask].iter().copied().collect();
    let test: EntrySet = order[n_mask..n_mask + n_test].iter().copied().collect();
    let train: EntrySet = order[n_mask + n_test..].iter().copied().collect();
    Ok(Split { train, masked, test })
}
