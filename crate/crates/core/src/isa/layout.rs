//! Named data symbols: where a compiled program keeps its globals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Input values by global name. Scalars are one-element vectors.
pub type Inputs = BTreeMap<String, Vec<i64>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSymbol {
    pub name: String,
    /// First word address.
    pub addr: usize,
    /// Length in words (1 for scalars).
    pub len: usize,
    pub secret: bool,
    pub is_array: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataLayout {
    pub globals: Vec<DataSymbol>,
    /// Total words used, including compiler-private storage.
    pub data_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("unknown global `{0}`")]
    UnknownGlobal(String),
    #[error("global `{name}` holds {len} word(s), got {given}")]
    WrongLength { name: String, len: usize, given: usize },
}

impl DataLayout {
    pub fn symbol(&self, name: &str) -> Option<&DataSymbol> {
        self.globals.iter().find(|s| s.name == name)
    }

    pub fn secret_names(&self) -> Vec<String> {
        self.globals.iter().filter(|s| s.secret).map(|s| s.name.clone()).collect()
    }

    /// Zeroed memory of `data_size` words with `inputs` written in.
    pub fn initial_memory(&self, inputs: &Inputs) -> Result<Vec<u64>, LayoutError> {
        let mut mem = vec![0u64; self.data_size];
        for (name, values) in inputs {
            let sym = self.symbol(name).ok_or_else(|| LayoutError::UnknownGlobal(name.clone()))?;
            if values.len() > sym.len {
                return Err(LayoutError::WrongLength { name: name.clone(), len: sym.len, given: values.len() });
            }
            for (i, v) in values.iter().enumerate() {
                mem[sym.addr + i] = *v as u64;
            }
        }
        Ok(mem)
    }

    /// The observable final state: every global's words.
    pub fn read_globals(&self, mem: &[u64]) -> BTreeMap<String, Vec<i64>> {
        self.globals
            .iter()
            .map(|s| {
                let words = (s.addr..s.addr + s.len)
                    .map(|a| mem.get(a).copied().unwrap_or(0) as i64)
                    .collect();
                (s.name.clone(), words)
            })
            .collect()
    }
}
