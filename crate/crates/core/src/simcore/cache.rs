use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default)]
struct Way {
    tag: u64,
    last_use: u64,
    ready_at: u64,
    valid: bool,
    pinned: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub pin_rejections: u64,
    pub pinned_evictions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOutcome {
    Filled,
    /// Installed as an ordinary line because the set-aside budget is spent.
    PinRejected,
}

/// Set-associative LRU cache whose pinned lines are evicted only when every
/// line of their set is pinned.
#[derive(Debug, Clone)]
pub struct Cache {
    ways: Vec<Way>,
    num_sets: u64,
    assoc: usize,
    line_bytes: u64,
    tick: u64,
    pin_budget_bytes: u64,
    pinned_bytes: u64,
    pub stats: CacheStats,
}

impl Cache {
    pub fn new(bytes: u64, line_bytes: u64, assoc: u32) -> Self {
        let lines = (bytes / line_bytes).max(assoc as u64);
        let num_sets = (lines / assoc as u64).max(1);
        Cache {
            ways: vec![Way::default(); (num_sets * assoc as u64) as usize],
            num_sets,
            assoc: assoc as usize,
            line_bytes,
            tick: 0,
            pin_budget_bytes: 0,
            pinned_bytes: 0,
            stats: CacheStats::default(),
        }
    }

    pub fn with_pin_budget(mut self, bytes: u64) -> Self {
        self.pin_budget_bytes = bytes;
        self
    }

    pub fn num_sets(&self) -> u64 {
        self.num_sets
    }

    pub fn assoc(&self) -> usize {
        self.assoc
    }

    pub fn pinned_bytes(&self) -> u64 {
        self.pinned_bytes
    }

    pub fn pin_budget_bytes(&self) -> u64 {
        self.pin_budget_bytes
    }

    pub fn set_of(&self, addr: u64) -> u64 {
        (addr / self.line_bytes) % self.num_sets
    }

    fn set_range(&self, tag: u64) -> std::ops::Range<usize> {
        let s = (tag % self.num_sets) as usize * self.assoc;
        s..s + self.assoc
    }

    fn find(&self, tag: u64) -> Option<usize> {
        self.set_range(tag)
            .find(|&i| self.ways[i].valid && self.ways[i].tag == tag)
    }

    /// Looks a line up, refreshing its recency on a hit. Returns the time its
    /// data is (or will be) available.
    pub fn probe(&mut self, addr: u64) -> Option<u64> {
        let tag = addr / self.line_bytes;
        self.tick += 1;
        match self.find(tag) {
            Some(i) => {
                self.ways[i].last_use = self.tick;
                self.stats.hits += 1;
                Some(self.ways[i].ready_at)
            }
            None => {
                self.stats.misses += 1;
                None
            }
        }
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.find(addr / self.line_bytes).is_some()
    }

    pub fn is_pinned(&self, addr: u64) -> bool {
        self.find(addr / self.line_bytes)
            .is_some_and(|i| self.ways[i].pinned)
    }

    fn victim(&self, tag: u64) -> usize {
        let r = self.set_range(tag);
        if let Some(i) = r.clone().find(|&i| !self.ways[i].valid) {
            return i;
        }
        let lru = |pinned: bool| {
            r.clone()
                .filter(|&i| self.ways[i].pinned == pinned)
                .min_by_key(|&i| self.ways[i].last_use)
        };
        lru(false).or_else(|| lru(true)).expect("non-empty set")
    }

    /// Installs a line (or refreshes it if present) with the given readiness.
    pub fn fill(&mut self, addr: u64, ready_at: u64, pin: bool) -> FillOutcome {
        let tag = addr / self.line_bytes;
        self.tick += 1;
        let i = match self.find(tag) {
            Some(i) => i,
            None => {
                let v = self.victim(tag);
                let w = &mut self.ways[v];
                if w.valid && w.pinned {
                    self.pinned_bytes -= self.line_bytes;
                    self.stats.pinned_evictions += 1;
                }
                *w = Way {
                    tag,
                    last_use: 0,
                    ready_at,
                    valid: true,
                    pinned: false,
                };
                v
            }
        };
        self.ways[i].last_use = self.tick;
        self.ways[i].ready_at = self.ways[i].ready_at.min(ready_at);
        if pin && !self.ways[i].pinned {
            if self.pinned_bytes + self.line_bytes > self.pin_budget_bytes {
                self.stats.pin_rejections += 1;
                return FillOutcome::PinRejected;
            }
            self.ways[i].pinned = true;
            self.pinned_bytes += self.line_bytes;
        }
        FillOutcome::Filled
    }

    /// Probe-then-fill with zero latency; returns whether it hit.
    pub fn access(&mut self, addr: u64) -> bool {
        if self.probe(addr).is_some() {
            true
        } else {
            self.fill(addr, 0, false);
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miss_then_hit() {
        let mut c = Cache::new(1024, 128, 2);
        assert!(!c.access(256));
        assert!(c.access(256));
        assert_eq!((c.stats.hits, c.stats.misses), (1, 1));
    }

    #[test]
    fn lru_within_set() {
        let mut c = Cache::new(256, 128, 2);
        assert_eq!(c.num_sets(), 1);
        c.access(0);
        c.access(128);
        c.access(0);
        c.access(256); // evicts 128
        assert!(c.contains(0) && c.contains(256) && !c.contains(128));
    }

    #[test]
    fn pinned_line_survives_storm() {
        let mut c = Cache::new(128 * 4 * 8, 128, 4).with_pin_budget(128);
        c.fill(0, 0, true);
        let sets = c.num_sets();
        for k in 1..=64 {
            c.access(k * sets * 128);
        }
        assert!(c.is_pinned(0));
        assert_eq!(c.stats.pinned_evictions, 0);
    }

    #[test]
    fn pin_budget_enforced() {
        let mut c = Cache::new(128 * 16, 128, 4).with_pin_budget(256);
        assert_eq!(c.fill(0, 0, true), FillOutcome::Filled);
        assert_eq!(c.fill(128, 0, true), FillOutcome::Filled);
        assert_eq!(c.fill(256, 0, true), FillOutcome::PinRejected);
        assert_eq!(c.pinned_bytes(), 256);
        assert!(c.contains(256) && !c.is_pinned(256));
        assert_eq!(c.stats.pin_rejections, 1);
    }

    #[test]
    fn all_pinned_set_evicts_oldest_pinned() {
        let mut c = Cache::new(256, 128, 2).with_pin_budget(1 << 20);
        c.fill(0, 0, true);
        c.fill(128, 0, true);
        c.access(0);
        c.access(256);
        assert!(!c.contains(128) && c.contains(0));
        assert_eq!(c.pinned_bytes(), 128);
    }

    #[test]
    fn pending_ready_time_kept() {
        let mut c = Cache::new(1024, 128, 2);
        c.fill(0, 500, false);
        assert_eq!(c.probe(0), Some(500));
    }
}
