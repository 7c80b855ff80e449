//! Scratchpad holding one register snapshot per nesting level.
//!
//! Word layout of a slot (R registers):
//!
//! ```text
//! [0, R)      regs_pre
//! [R, 2R)     regs_nt
//! 2R          modified_nt bit-vector
//! 2R + 1      modified_t bit-vector
//! ```

/// Bit set over register indices (at most 256 registers).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct RegSet([u64; 4]);

impl RegSet {
    pub const fn empty() -> Self {
        RegSet([0; 4])
    }

    pub fn insert(&mut self, r: usize) {
        self.0[r / 64] |= 1 << (r % 64);
    }

    pub fn contains(&self, r: usize) -> bool {
        r < 256 && self.0[r / 64] & (1 << (r % 64)) != 0
    }

    pub fn union(&self, other: &RegSet) -> RegSet {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0) {
            *a |= b;
        }
        out
    }

    pub fn union_with(&mut self, other: &RegSet) {
        *self = self.union(other);
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == [0; 4]
    }

    /// Ascending register indices.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..256).filter(move |&r| self.contains(r))
    }
}

impl FromIterator<usize> for RegSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = RegSet::empty();
        for r in iter {
            s.insert(r);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub regs_pre: Vec<u64>,
    pub regs_nt: Vec<u64>,
    pub modified_nt: RegSet,
    pub modified_t: RegSet,
}

impl Snapshot {
    pub fn new(registers: usize) -> Self {
        Self {
            regs_pre: vec![0; registers],
            regs_nt: vec![0; registers],
            modified_nt: RegSet::empty(),
            modified_t: RegSet::empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spm {
    pub slots: Vec<Snapshot>,
    registers: usize,
}

impl Spm {
    pub fn new(registers: usize, levels: usize) -> Self {
        Self { slots: vec![Snapshot::new(registers); levels], registers }
    }

    pub fn registers(&self) -> usize {
        self.registers
    }

    /// Two register images plus two bit-vectors.
    pub fn bytes_per_slot(&self) -> usize {
        2 * 8 * self.registers + 2 * self.registers.div_ceil(8)
    }

    pub fn bitvector_bytes(&self) -> usize {
        self.registers.div_ceil(8)
    }

    pub fn total_bytes(&self) -> usize {
        self.bytes_per_slot() * self.slots.len()
    }

    pub fn slot_words(&self) -> u64 {
        2 * self.registers as u64 + 2
    }

    pub fn pre_addr(&self, slot: usize, reg: usize) -> u64 {
        slot as u64 * self.slot_words() + reg as u64
    }

    pub fn nt_addr(&self, slot: usize, reg: usize) -> u64 {
        slot as u64 * self.slot_words() + (self.registers + reg) as u64
    }

    pub fn bitvector_addr(&self, slot: usize, taken_path: bool) -> u64 {
        slot as u64 * self.slot_words() + 2 * self.registers as u64 + u64::from(taken_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regset_ops() {
        let a: RegSet = [1, 5, 200].into_iter().collect();
        let b: RegSet = [5, 7].into_iter().collect();
        let u = a.union(&b);
        assert_eq!(u.iter().collect::<Vec<_>>(), vec![1, 5, 7, 200]);
        assert_eq!(u.len(), 4);
        assert!(!u.contains(2));
        assert!(RegSet::empty().is_empty());
    }

    #[test]
    fn slot_sizing() {
        let spm = Spm::new(16, 30);
        assert_eq!(spm.bytes_per_slot(), 2 * 8 * 16 + 2 * 2);
        let wide = Spm::new(48, 30);
        assert_eq!(wide.bytes_per_slot(), 768 + 12);
        assert_eq!(spm.nt_addr(1, 0), 34 + 16);
        assert_eq!(spm.bitvector_addr(0, true), 33);
    }
}
