//! List-based LRU reference for the set-associative cache.

use embsim::simcore::{Cache, FillOutcome};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LINE: u64 = 128;

/// Each set is a recency list, least recent first.
pub struct RefCache {
    sets: Vec<Vec<(u64, bool)>>,
    assoc: usize,
    budget: u64,
    pinned: u64,
}

impl RefCache {
    fn new(sets: usize, assoc: usize, budget: u64) -> Self {
        RefCache {
            sets: vec![Vec::new(); sets],
            assoc,
            budget,
            pinned: 0,
        }
    }

    fn set(&mut self, line: u64) -> &mut Vec<(u64, bool)> {
        let n = self.sets.len() as u64;
        &mut self.sets[(line % n) as usize]
    }

    fn touch(&mut self, line: u64) -> Option<bool> {
        let s = self.set(line);
        let pos = s.iter().position(|e| e.0 == line)?;
        let e = s.remove(pos);
        s.push(e);
        Some(e.1)
    }

    fn insert(&mut self, line: u64) {
        let assoc = self.assoc;
        let s = self.set(line);
        let mut freed_pin = false;
        if s.len() == assoc {
            let victim = s.iter().position(|e| !e.1).unwrap_or(0);
            freed_pin = s.remove(victim).1;
        }
        s.push((line, false));
        if freed_pin {
            self.pinned -= LINE;
        }
    }

    fn access(&mut self, line: u64) -> bool {
        if self.touch(line).is_some() {
            return true;
        }
        self.insert(line);
        false
    }

    fn fill_pinned(&mut self, line: u64) -> FillOutcome {
        let already = match self.touch(line) {
            Some(p) => p,
            None => {
                self.insert(line);
                false
            }
        };
        if already {
            return FillOutcome::Filled;
        }
        if self.pinned + LINE > self.budget {
            return FillOutcome::PinRejected;
        }
        self.pinned += LINE;
        let s = self.set(line);
        s.last_mut().unwrap().1 = true;
        FillOutcome::Filled
    }

    fn contains(&self, line: u64) -> bool {
        self.sets[(line % self.sets.len() as u64) as usize]
            .iter()
            .any(|e| e.0 == line)
    }
}

/// One randomized trial; panics on the first disagreement.
pub fn trial(rng: &mut ChaCha8Rng, with_pins: bool) {
    let sets = rng.gen_range(1..=4usize);
    let assoc = rng.gen_range(1..=4usize);
    let budget = if with_pins {
        rng.gen_range(0..=4u64) * LINE
    } else {
        0
    };
    let universe = rng.gen_range(1..=(2 * sets * assoc + 2) as u64);
    let len = rng.gen_range(1..=64);
    let mut c =
        Cache::new((sets * assoc) as u64 * LINE, LINE, assoc as u32).with_pin_budget(budget);
    let mut r = RefCache::new(sets, assoc, budget);
    assert_eq!(c.num_sets(), sets as u64);
    let mut trace = Vec::new();
    for step in 0..len {
        let line = rng.gen_range(0..universe);
        let pin = with_pins && rng.gen_bool(0.2);
        trace.push((line, pin));
        if pin {
            let got = c.fill(line * LINE, 0, true);
            assert_eq!(
                got,
                r.fill_pinned(line),
                "pin fill at step {step}: {trace:?}"
            );
        } else {
            let got = c.access(line * LINE);
            assert_eq!(
                got,
                r.access(line),
                "access at step {step} ({sets}x{assoc}): {trace:?}"
            );
        }
        assert!(c.pinned_bytes() <= budget);
        assert_eq!(c.pinned_bytes(), r.pinned);
    }
    for line in 0..universe {
        assert_eq!(
            c.contains(line * LINE),
            r.contains(line),
            "final residency of {line}: {trace:?}"
        );
    }
}
