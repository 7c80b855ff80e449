//! Secure multi-path execution (SeMPE) toolchain.
//!
//! * [`isa`]: a small register ISA with a byte-exact encoding in which the
//!   secure-branch prefix (0x2E) and `eosjmp` (2E 90) degrade to plain
//!   branches and NOPs on a legacy decoder.
//! * [`machine`]: deterministic functional and timing simulator with the
//!   jump-back table, register snapshots in a scratchpad, and pipeline drains.
//! * [`trace`]: attacker-visible observations and exact indistinguishability
//!   checking over secret domains.
//! * [`seclang`]: a small secret-annotated language, taint analysis, and the
//!   two lowering strategies (multi-path instrumentation and constant-time
//!   expressions).
//! * [`bench`]: the nested-branch microbenchmark generator and suite runner.
//! * [`cli`]: the `sempe` command line front end.

pub mod bench;
pub mod cli;
pub mod isa;
pub mod machine;
pub mod seclang;
pub mod trace;

use std::fmt;
use std::str::FromStr;

/// Whether secure prefixes and `eosjmp` are honoured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Secure branches execute both paths.
    Sempe,
    /// A processor without the extension: prefixes are ignored and
    /// `eosjmp` is a NOP.
    Legacy,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sempe => "sempe",
            Mode::Legacy => "legacy",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sempe" => Ok(Mode::Sempe),
            "legacy" => Ok(Mode::Legacy),
            other => Err(format!("unknown mode `{other}` (expected sempe or legacy)")),
        }
    }
}
