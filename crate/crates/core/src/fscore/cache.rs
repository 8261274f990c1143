//! LibFS DRAM read cache: 4 KB slots in a volatile region, LRU evicted.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{Ino, RegionId};

#[derive(Debug, Clone)]
pub struct ReadCache {
    pub region: RegionId,
    pub slots: u64,
    map: BTreeMap<(Ino, u64), (u64, u64)>,
    lru: BTreeMap<u64, (Ino, u64)>,
    free: BTreeSet<u64>,
    next: u64,
    tick: u64,
    pub hits: u64,
    pub misses: u64,
}

impl ReadCache {
    pub fn new(region: RegionId, slots: u64) -> Self {
        ReadCache {
            region,
            slots: slots.max(1),
            map: BTreeMap::new(),
            lru: BTreeMap::new(),
            free: BTreeSet::new(),
            next: 0,
            tick: 0,
            hits: 0,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, ino: Ino, blk: u64) -> bool {
        self.map.contains_key(&(ino, blk))
    }

    /// Slot holding the block, refreshing its recency.
    pub fn lookup(&mut self, ino: Ino, blk: u64) -> Option<u64> {
        let Some((slot, old)) = self.map.get(&(ino, blk)).copied() else {
            self.misses += 1;
            return None;
        };
        self.hits += 1;
        self.lru.remove(&old);
        self.tick += 1;
        self.lru.insert(self.tick, (ino, blk));
        self.map.insert((ino, blk), (slot, self.tick));
        Some(slot)
    }

    /// Slot to fill with the block, evicting the least recently used one
    /// when full.
    pub fn insert(&mut self, ino: Ino, blk: u64) -> u64 {
        if let Some(s) = self.lookup(ino, blk) {
            return s;
        }
        let slot = if let Some(s) = self.free.pop_first() {
            s
        } else if self.next < self.slots {
            self.next += 1;
            self.next - 1
        } else {
            let (_, victim) = self.lru.pop_first().expect("full cache has entries");
            self.map.remove(&victim).expect("lru entry is mapped").0
        };
        self.tick += 1;
        self.lru.insert(self.tick, (ino, blk));
        self.map.insert((ino, blk), (slot, self.tick));
        slot
    }

    pub fn drop_inodes(&mut self, inos: &BTreeSet<Ino>) {
        let victims: Vec<(Ino, u64)> = self
            .map
            .keys()
            .filter(|(i, _)| inos.contains(i))
            .copied()
            .collect();
        for k in victims {
            let (slot, tick) = self.map.remove(&k).expect("present");
            self.lru.remove(&tick);
            self.free.insert(slot);
        }
    }

    pub fn clear(&mut self) {
        let slots: Vec<u64> = self.map.values().map(|(s, _)| *s).collect();
        self.free.extend(slots);
        self.map.clear();
        self.lru.clear();
    }
}
