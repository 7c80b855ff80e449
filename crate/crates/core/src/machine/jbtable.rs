use std::fmt;

/// True outcome of a secure branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Taken,
    NotTaken,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Taken => "T",
            Outcome::NotTaken => "NT",
        })
    }
}

/// One jump-back entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JbEntry {
    /// Taken target of the owning sJMP.
    pub next_pc: usize,
    pub outcome: Outcome,
    pub valid: bool,
    /// Set at the first eosJMP: the T path is running.
    pub jb: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow;

/// Bounded LIFO of jump-back entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JbTable {
    entries: Vec<JbEntry>,
    capacity: usize,
}

impl JbTable {
    pub fn new(capacity: usize) -> Self {
        Self { entries: Vec::with_capacity(capacity), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[JbEntry] {
        &self.entries
    }

    /// Allocates a new top entry. Its target is not valid until
    /// [`JbTable::write_target`].
    pub fn push(&mut self, outcome: Outcome) -> Result<(), Overflow> {
        if self.entries.len() >= self.capacity {
            return Err(Overflow);
        }
        self.entries.push(JbEntry { next_pc: 0, outcome, valid: false, jb: false });
        Ok(())
    }

    pub fn write_target(&mut self, next_pc: usize) {
        let top = self.entries.last_mut().expect("write_target on empty jbTable");
        debug_assert!(!top.valid, "target written twice");
        top.next_pc = next_pc;
        top.valid = true;
    }

    pub fn top(&self) -> Option<&JbEntry> {
        self.entries.last()
    }

    pub fn top_mut(&mut self) -> Option<&mut JbEntry> {
        self.entries.last_mut()
    }

    pub fn pop(&mut self) -> Option<JbEntry> {
        self.entries.pop()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifo_and_capacity() {
        let mut t = JbTable::new(2);
        t.push(Outcome::Taken).unwrap();
        t.write_target(10);
        t.push(Outcome::NotTaken).unwrap();
        t.write_target(20);
        assert_eq!(t.push(Outcome::Taken), Err(Overflow));
        assert_eq!(t.pop().unwrap().next_pc, 20);
        assert_eq!(t.pop().unwrap().next_pc, 10);
        assert!(t.pop().is_none());
    }

    #[test]
    fn entry_starts_invalid() {
        let mut t = JbTable::new(30);
        t.push(Outcome::NotTaken).unwrap();
        assert!(!t.top().unwrap().valid);
        t.write_target(3);
        let e = t.top().unwrap();
        assert!(e.valid && !e.jb);
    }
}
