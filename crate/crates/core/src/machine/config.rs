//! Machine parameters and their flat `key=value` file format.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub size_bytes: usize,
    pub ways: usize,
    pub line_bytes: usize,
    pub hit_cycles: u64,
    pub miss_penalty: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { size_bytes: 32 * 1024, ways: 2, line_bytes: 64, hit_cycles: 1, miss_penalty: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingModel {
    pub base_cpi: u64,
    pub drain_penalty: u64,
    pub spm_bytes_per_cycle: u64,
    /// Off by default.
    pub cache: Option<CacheConfig>,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self { base_cpi: 1, drain_penalty: 14, spm_bytes_per_cycle: 64, cache: None }
    }
}

impl TimingModel {
    pub fn spm_transfer(&self, bytes: usize) -> u64 {
        (bytes as u64).div_ceil(self.spm_bytes_per_cycle)
    }
}

/// jbTable entries, and so the deepest secure nesting.
pub const DEFAULT_JB_CAPACITY: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineConfig {
    /// Overrides the program's register count when set.
    pub registers: Option<usize>,
    pub jb_capacity: usize,
    pub timing: TimingModel,
    pub step_limit: u64,
    /// Data memory size in words; 0 sizes it from the program and input.
    pub mem_words: usize,
    pub call_depth: usize,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            registers: None,
            jb_capacity: DEFAULT_JB_CAPACITY,
            timing: TimingModel::default(),
            step_limit: 200_000_000,
            mem_words: 0,
            call_depth: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
}

impl MachineConfig {
    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = MachineConfig::default();
        let mut cache = CacheConfig::default();
        let mut cache_on = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue { line, key: key.to_string(), value: value.to_string() };
            let num = || value.parse::<u64>().map_err(|_| bad());
            let positive = || num().and_then(|v| if v == 0 { Err(bad()) } else { Ok(v) });
            match key {
                "registers" => {
                    let r = positive()?;
                    if r > 256 {
                        return Err(bad());
                    }
                    cfg.registers = Some(r as usize);
                }
                "jb_capacity" => cfg.jb_capacity = num()? as usize,
                "base_cpi" => cfg.timing.base_cpi = positive()?,
                "drain_penalty" => cfg.timing.drain_penalty = num()?,
                "spm_bytes_per_cycle" => cfg.timing.spm_bytes_per_cycle = positive()?,
                "step_limit" => cfg.step_limit = positive()?,
                "mem_words" => cfg.mem_words = num()? as usize,
                "call_depth" => cfg.call_depth = num()? as usize,
                "cache" => {
                    cache_on = match value {
                        "on" | "true" | "1" | "yes" => true,
                        "off" | "false" | "0" | "no" => false,
                        _ => return Err(bad()),
                    }
                }
                "cache_size" => cache.size_bytes = positive()? as usize,
                "cache_ways" => cache.ways = positive()? as usize,
                "cache_line" => cache.line_bytes = positive()? as usize,
                "cache_hit" => cache.hit_cycles = num()?,
                "cache_miss_penalty" => cache.miss_penalty = num()?,
                _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
            }
        }
        if cache_on {
            if cache.size_bytes % (cache.ways * cache.line_bytes) != 0 || cache.line_bytes % 8 != 0 {
                return Err(ConfigError::BadValue {
                    line: 0,
                    key: "cache_size".into(),
                    value: cache.size_bytes.to_string(),
                });
            }
            cfg.timing.cache = Some(cache);
        }
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        if let Some(r) = self.registers {
            let _ = writeln!(out, "registers={r}");
        }
        let t = &self.timing;
        let _ = writeln!(out, "jb_capacity={}", self.jb_capacity);
        let _ = writeln!(out, "base_cpi={}", t.base_cpi);
        let _ = writeln!(out, "drain_penalty={}", t.drain_penalty);
        let _ = writeln!(out, "spm_bytes_per_cycle={}", t.spm_bytes_per_cycle);
        let _ = writeln!(out, "step_limit={}", self.step_limit);
        let _ = writeln!(out, "mem_words={}", self.mem_words);
        let _ = writeln!(out, "call_depth={}", self.call_depth);
        match t.cache {
            None => {
                let _ = writeln!(out, "cache=off");
            }
            Some(c) => {
                let _ = writeln!(out, "cache=on");
                let _ = writeln!(out, "cache_size={}", c.size_bytes);
                let _ = writeln!(out, "cache_ways={}", c.ways);
                let _ = writeln!(out, "cache_line={}", c.line_bytes);
                let _ = writeln!(out, "cache_hit={}", c.hit_cycles);
                let _ = writeln!(out, "cache_miss_penalty={}", c.miss_penalty);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(MachineConfig::from_kv_str("# nothing\n\n").unwrap(), MachineConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let c = MachineConfig::from_kv_str("registers = 48\ndrain_penalty=20 # deeper pipe\ncache=on\ncache_ways=4")
            .unwrap();
        assert_eq!(c.registers, Some(48));
        assert_eq!(c.timing.drain_penalty, 20);
        assert_eq!(c.timing.base_cpi, 1);
        assert_eq!(c.timing.cache.unwrap().ways, 4);
        assert_eq!(c.timing.cache.unwrap().size_bytes, 32 * 1024);
    }

    #[test]
    fn round_trips_through_text() {
        let c = MachineConfig::from_kv_str("registers=20\ncache=on\njb_capacity=8").unwrap();
        assert_eq!(MachineConfig::from_kv_str(&c.to_kv_string()).unwrap(), c);
    }

    #[test]
    fn errors_carry_lines() {
        assert_eq!(MachineConfig::from_kv_str("base_cpi").unwrap_err(), ConfigError::Syntax { line: 1 });
        assert!(matches!(
            MachineConfig::from_kv_str("\nwidth=3"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(MachineConfig::from_kv_str("base_cpi=0"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn spm_transfer_rounds_up() {
        let t = TimingModel::default();
        assert_eq!(t.spm_transfer(0), 0);
        assert_eq!(t.spm_transfer(1), 1);
        assert_eq!(t.spm_transfer(128), 2);
        assert_eq!(t.spm_transfer(129), 3);
    }
}
