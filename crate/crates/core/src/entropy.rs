//! Multi-part entropy values and their pseudo-randomized round-robin generator.
//!
//! Each part indexes the live uplink table of one spraying tier: part 0 is
//! read by tier-1 switches, part 1 by tier-2 switches. A generator keeps one
//! shuffled permutation per part and walks them like an odometer, reshuffling
//! a part's permutation every time its cursor wraps.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::RngStream;

pub const MAX_PARTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntropyError {
    #[error("uplink count for part {0} is zero")]
    EmptyPart(usize),
    #[error("at most {MAX_PARTS} parts are supported, got {0}")]
    TooManyParts(usize),
    #[error("part {part} value {value} out of range 0..{limit}")]
    PartRange { part: usize, value: u16, limit: usize },
    #[error("entropy has {got} parts, expected {expected}")]
    PartCount { got: usize, expected: usize },
    #[error("path index {index} out of range 0..{limit}")]
    IndexRange { index: usize, limit: usize },
    #[error("header widths total {0} bits, more than the 16-bit entropy field")]
    HeaderOverflow(u32),
}

/// Bits needed to hold values `0..count`.
pub fn bits_for(count: usize) -> u8 {
    if count <= 1 {
        0
    } else {
        (usize::BITS - (count - 1).leading_zeros()) as u8
    }
}

/// A multi-part entropy value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MpEv {
    parts: [u16; MAX_PARTS],
    len: u8,
}

impl MpEv {
    pub fn new(parts: &[u16]) -> Self {
        assert!(parts.len() <= MAX_PARTS);
        let mut p = [0; MAX_PARTS];
        p[..parts.len()].copy_from_slice(parts);
        Self {
            parts: p,
            len: parts.len() as u8,
        }
    }

    pub fn parts(&self) -> &[u16] {
        &self.parts[..self.len as usize]
    }

    pub fn part(&self, i: usize) -> u16 {
        self.parts()[i]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Mixed-radix path index: `sum(part_i * prod_{j<i} L_j)`.
    pub fn index(&self, counts: &[usize]) -> Result<usize, EntropyError> {
        ev_index(self, counts)
    }

    /// Packs parts into the 16-bit entropy field, part 0 in the low bits.
    pub fn to_header(&self, widths: &[u8]) -> u16 {
        let mut hdr = 0u32;
        let mut off = 0u32;
        for (i, &w) in widths.iter().enumerate() {
            let v = self.parts.get(i).copied().unwrap_or(0) as u32;
            hdr |= (v & ((1 << w) - 1)) << off;
            off += w as u32;
        }
        hdr as u16
    }

    pub fn from_header(hdr: u16, widths: &[u8]) -> Self {
        let parts: Vec<u16> = (0..widths.len()).map(|i| header_part(hdr, widths, i)).collect();
        Self::new(&parts)
    }
}

impl fmt::Debug for MpEv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MpEv{:?}", self.parts())
    }
}

/// Check that header widths fit the 16-bit field.
pub fn check_widths(widths: &[u8]) -> Result<(), EntropyError> {
    let total: u32 = widths.iter().map(|&w| w as u32).sum();
    if total > 16 {
        Err(EntropyError::HeaderOverflow(total))
    } else {
        Ok(())
    }
}

/// Extracts part `i` from a packed header (the switch-side slice).
pub fn header_part(hdr: u16, widths: &[u8], i: usize) -> u16 {
    let off: u32 = widths[..i].iter().map(|&w| w as u32).sum();
    let w = widths[i] as u32;
    if w == 0 {
        return 0;
    }
    ((hdr as u32 >> off) & ((1 << w) - 1)) as u16
}

/// Mixed-radix encoding of an entropy value into a dense path index.
pub fn ev_index(ev: &MpEv, counts: &[usize]) -> Result<usize, EntropyError> {
    if ev.len() != counts.len() {
        return Err(EntropyError::PartCount {
            got: ev.len(),
            expected: counts.len(),
        });
    }
    let mut idx = 0;
    let mut radix = 1;
    for (part, (&v, &l)) in ev.parts().iter().zip(counts).enumerate() {
        if v as usize >= l {
            return Err(EntropyError::PartRange { part, value: v, limit: l });
        }
        idx += v as usize * radix;
        radix *= l;
    }
    Ok(idx)
}

/// Inverse of [`ev_index`].
pub fn ev_from_index(index: usize, counts: &[usize]) -> Result<MpEv, EntropyError> {
    let total: usize = counts.iter().product();
    if index >= total {
        return Err(EntropyError::IndexRange { index, limit: total });
    }
    let mut rest = index;
    let mut parts = [0u16; MAX_PARTS];
    for (i, &l) in counts.iter().enumerate() {
        parts[i] = (rest % l) as u16;
        rest /= l;
    }
    Ok(MpEv {
        parts,
        len: counts.len() as u8,
    })
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle_in_place<T>(array: &mut [T], rng: &mut RngStream) {
    for i in (1..array.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        array.swap(i, j);
    }
}

/// How cursors advance between successive values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvanceMode {
    /// Higher part advances only when the part below it wraps.
    #[default]
    Odometer,
    /// A uniformly chosen part advances on each call.
    Random,
}

/// Pseudo-randomized round-robin generator of multi-part entropy values.
#[derive(Debug, Clone)]
pub struct EvGenerator {
    arrays: Vec<Vec<u16>>,
    cursors: Vec<usize>,
    counts: Vec<usize>,
    rng: RngStream,
    mode: AdvanceMode,
}

impl EvGenerator {
    pub fn new(uplink_counts: &[usize], mut rng: RngStream) -> Result<Self, EntropyError> {
        if uplink_counts.len() > MAX_PARTS {
            return Err(EntropyError::TooManyParts(uplink_counts.len()));
        }
        let mut arrays = Vec::with_capacity(uplink_counts.len());
        for (i, &l) in uplink_counts.iter().enumerate() {
            if l == 0 {
                return Err(EntropyError::EmptyPart(i));
            }
            let mut a: Vec<u16> = (0..l as u16).collect();
            shuffle_in_place(&mut a, &mut rng);
            arrays.push(a);
        }
        Ok(Self {
            cursors: vec![0; arrays.len()],
            counts: uplink_counts.to_vec(),
            arrays,
            rng,
            mode: AdvanceMode::Odometer,
        })
    }

    /// Generator starting from caller-provided permutations.
    pub fn with_arrays(arrays: Vec<Vec<u16>>, rng: RngStream) -> Result<Self, EntropyError> {
        for (i, a) in arrays.iter().enumerate() {
            if a.is_empty() {
                return Err(EntropyError::EmptyPart(i));
            }
        }
        Ok(Self {
            cursors: vec![0; arrays.len()],
            counts: arrays.iter().map(Vec::len).collect(),
            arrays,
            rng,
            mode: AdvanceMode::Odometer,
        })
    }

    pub fn with_mode(mut self, mode: AdvanceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of distinct paths, the product of the part sizes.
    pub fn path_count(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn arrays(&self) -> &[Vec<u16>] {
        &self.arrays
    }

    pub fn cursors(&self) -> &[usize] {
        &self.cursors
    }

    /// Current value without advancing.
    pub fn peek(&self) -> MpEv {
        let mut parts = [0u16; MAX_PARTS];
        for (i, a) in self.arrays.iter().enumerate() {
            parts[i] = a[self.cursors[i]];
        }
        MpEv {
            parts,
            len: self.arrays.len() as u8,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> MpEv {
        let ev = self.peek();
        match self.mode {
            AdvanceMode::Odometer => {
                let mut i = 0;
                while i < self.arrays.len() && self.step(i) {
                    i += 1;
                }
            }
            AdvanceMode::Random => {
                if !self.arrays.is_empty() {
                    let i = self.rng.below(self.arrays.len() as u64) as usize;
                    self.step(i);
                }
            }
        }
        ev
    }

    /// Advances cursor `i`; returns true on wraparound (after reshuffling).
    fn step(&mut self, i: usize) -> bool {
        self.cursors[i] += 1;
        if self.cursors[i] == self.arrays[i].len() {
            shuffle_in_place(&mut self.arrays[i], &mut self.rng);
            self.cursors[i] = 0;
            true
        } else {
            false
        }
    }
}
