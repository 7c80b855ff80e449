use super::config::CacheConfig;

/// Set-associative data cache with LRU replacement. Only hit/miss status
/// is modeled; data always comes from memory.
#[derive(Debug, Clone)]
pub struct Cache {
    config: CacheConfig,
    /// Per set, most recently used tag first.
    sets: Vec<Vec<u64>>,
    pub hits: u64,
    pub misses: u64,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Self {
        let sets = config.size_bytes / (config.ways * config.line_bytes);
        Self { config, sets: vec![Vec::with_capacity(config.ways); sets.max(1)], hits: 0, misses: 0 }
    }

    /// Touches the line holding `word_addr`; true on hit.
    pub fn access(&mut self, word_addr: u64) -> bool {
        let line = word_addr * 8 / self.config.line_bytes as u64;
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        let tag = line / n;
        if let Some(pos) = set.iter().position(|&t| t == tag) {
            set.remove(pos);
            set.insert(0, tag);
            self.hits += 1;
            true
        } else {
            if set.len() == self.config.ways {
                set.pop();
            }
            set.insert(0, tag);
            self.misses += 1;
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_two_way() {
        let cfg = CacheConfig { size_bytes: 256, ways: 2, line_bytes: 64, hit_cycles: 1, miss_penalty: 20 };
        let mut c = Cache::new(cfg);
        // 2 sets of 64B lines: words 0, 16, 32 all map to set 0
        assert!(!c.access(0));
        assert!(c.access(7));
        assert!(!c.access(16));
        assert!(!c.access(32));
        assert!(c.access(16));
        assert!(!c.access(0));
        assert_eq!((c.hits, c.misses), (2, 4));
    }
}
