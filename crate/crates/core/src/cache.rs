//! Set-associative LRU caches with MSHR-based miss merging. Lines carry tags
//! and state only; data always lives in the backing store, so the cache
//! shapes timing and traffic but never the values a program sees.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub capacity: u32,
    pub ways: u32,
    pub line: u32,
}

impl CacheGeometry {
    pub fn sets(&self) -> u32 {
        self.capacity / (self.ways * self.line)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WritePolicy {
    WriteBack,
    WriteThrough,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub enabled: bool,
    pub icache_enabled: bool,
    pub icache: CacheGeometry,
    pub dcache: CacheGeometry,
    pub write_policy: WritePolicy,
    pub mshrs: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: false,
            icache_enabled: true,
            icache: CacheGeometry { capacity: 24 * 1024, ways: 8, line: 64 },
            dcache: CacheGeometry { capacity: 64 * 1024, ways: 8, line: 64 },
            write_policy: WritePolicy::WriteBack,
            mshrs: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheLine {
    pub tag: u32,
    pub valid: bool,
    pub dirty: bool,
    /// Reserved for an in-flight fill.
    pub pending: bool,
}

#[derive(Clone, Debug)]
struct Set {
    lines: Vec<CacheLine>,
    /// Way indices from most to least recently used.
    order: Vec<usize>,
}

impl Set {
    fn touch(&mut self, way: usize) {
        let pos = self.order.iter().position(|&w| w == way).expect("way in order list");
        self.order.remove(pos);
        self.order.insert(0, way);
    }
}

#[derive(Clone, Debug)]
pub struct MshrEntry {
    pub line_addr: u32,
    pub waiters: Vec<u64>,
    pub write: bool,
}

/// Outcome of a cache access.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Access {
    Hit,
    /// Joined an outstanding fill for the same line.
    Merged,
    /// New fill needed for `line_addr`; `writeback` names a dirty victim.
    Miss { line_addr: u32, writeback: Option<u32> },
    /// No MSHR or way available; retry later.
    Stall,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
    pub merged: u64,
    pub fills: u64,
    pub writebacks: u64,
    pub write_through: u64,
}

#[derive(Clone, Debug)]
pub struct Cache {
    pub geometry: CacheGeometry,
    pub policy: WritePolicy,
    sets: Vec<Set>,
    mshrs: Vec<MshrEntry>,
    mshr_cap: usize,
    pub counters: CacheCounters,
}

impl Cache {
    pub fn new(geometry: CacheGeometry, policy: WritePolicy, mshrs: usize) -> Self {
        let ways = geometry.ways as usize;
        let set = Set { lines: vec![CacheLine::default(); ways], order: (0..ways).collect() };
        Cache {
            geometry,
            policy,
            sets: vec![set; geometry.sets() as usize],
            mshrs: Vec::new(),
            mshr_cap: mshrs,
            counters: CacheCounters::default(),
        }
    }

    pub fn line_addr(&self, addr: u32) -> u32 {
        addr / self.geometry.line * self.geometry.line
    }

    fn index(&self, addr: u32) -> (usize, u32) {
        let line = addr / self.geometry.line;
        ((line % self.geometry.sets()) as usize, line / self.geometry.sets())
    }

    fn addr_of(&self, set: usize, tag: u32) -> u32 {
        (tag * self.geometry.sets() + set as u32) * self.geometry.line
    }

    pub fn contains(&self, addr: u32) -> bool {
        let (s, tag) = self.index(addr);
        self.sets[s].lines.iter().any(|l| l.valid && l.tag == tag)
    }

    pub fn outstanding(&self) -> usize {
        self.mshrs.len()
    }

    /// LRU ranks of the ways in the set holding `addr` (0 = most recent).
    pub fn ranks(&self, addr: u32) -> Vec<usize> {
        let (s, _) = self.index(addr);
        let set = &self.sets[s];
        (0..set.lines.len()).map(|w| set.order.iter().position(|&x| x == w).unwrap()).collect()
    }

    /// Access the line holding `addr`. `waiter` is an opaque token returned by
    /// [`Cache::complete_fill`] when a miss is resolved.
    pub fn access(&mut self, addr: u32, write: bool, waiter: u64) -> Access {
        let (s, tag) = self.index(addr);
        let line_addr = self.line_addr(addr);
        if let Some(m) = self.mshrs.iter_mut().find(|m| m.line_addr == line_addr) {
            m.waiters.push(waiter);
            m.write |= write;
            self.counters.merged += 1;
            return Access::Merged;
        }
        let set = &mut self.sets[s];
        if let Some(way) = set.lines.iter().position(|l| l.valid && l.tag == tag) {
            set.touch(way);
            if write {
                match self.policy {
                    WritePolicy::WriteBack => set.lines[way].dirty = true,
                    WritePolicy::WriteThrough => self.counters.write_through += 1,
                }
            }
            self.counters.hits += 1;
            return Access::Hit;
        }
        if self.mshrs.len() >= self.mshr_cap {
            return Access::Stall;
        }
        let victim = set
            .lines
            .iter()
            .position(|l| !l.valid && !l.pending)
            .or_else(|| set.order.iter().rev().copied().find(|&w| !set.lines[w].pending));
        let Some(way) = victim else { return Access::Stall };
        let old = set.lines[way];
        let writeback = (old.valid && old.dirty).then(|| self.addr_of(s, old.tag));
        let set = &mut self.sets[s];
        set.lines[way] = CacheLine { tag, valid: false, dirty: false, pending: true };
        self.mshrs.push(MshrEntry { line_addr, waiters: vec![waiter], write });
        self.counters.misses += 1;
        self.counters.fills += 1;
        if writeback.is_some() {
            self.counters.writebacks += 1;
        }
        Access::Miss { line_addr, writeback }
    }

    /// Install the line whose fill finished and release its waiters.
    pub fn complete_fill(&mut self, line_addr: u32) -> Vec<u64> {
        let Some(i) = self.mshrs.iter().position(|m| m.line_addr == line_addr) else {
            return Vec::new();
        };
        let m = self.mshrs.remove(i);
        let (s, tag) = self.index(line_addr);
        let policy = self.policy;
        let set = &mut self.sets[s];
        let way = set
            .lines
            .iter()
            .position(|l| l.pending && l.tag == tag)
            .expect("fill has a reserved way");
        let dirty = m.write && policy == WritePolicy::WriteBack;
        set.lines[way] = CacheLine { tag, valid: true, dirty, pending: false };
        set.touch(way);
        m.waiters
    }

    /// DRAM bytes moved on behalf of this cache: 64 B per fill and per dirty
    /// eviction.
    pub fn bytes_read_counter(&self) -> u64 {
        self.geometry.line as u64 * (self.counters.fills + self.counters.writebacks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dcache() -> Cache {
        let c = CacheConfig::default();
        Cache::new(c.dcache, WritePolicy::WriteBack, 8)
    }

    fn fill(c: &mut Cache, addr: u32, write: bool) -> Access {
        let a = c.access(addr, write, 0);
        if let Access::Miss { line_addr, .. } = a {
            c.complete_fill(line_addr);
        }
        a
    }

    #[test]
    fn geometry() {
        let c = CacheConfig::default();
        assert_eq!(c.dcache.sets(), 128);
        assert_eq!(c.icache.sets(), 48);
    }

    #[test]
    fn cold_miss_then_same_line_hit() {
        let mut c = dcache();
        assert!(matches!(fill(&mut c, 0, false), Access::Miss { line_addr: 0, writeback: None }));
        assert_eq!(fill(&mut c, 0x3c, false), Access::Hit);
        assert_eq!(c.bytes_read_counter(), 64);
    }

    #[test]
    fn concurrent_misses_merge() {
        let mut c = dcache();
        assert!(matches!(c.access(0x100, false, 1), Access::Miss { .. }));
        assert_eq!(c.access(0x104, false, 2), Access::Merged);
        assert_eq!(c.complete_fill(0x100), vec![1, 2]);
        assert_eq!(c.counters.fills, 1);
    }

    #[test]
    fn ninth_line_in_set_evicts_lru() {
        let mut c = dcache();
        let stride = 128 * 64;
        for i in 0..8 {
            fill(&mut c, i * stride, false);
        }
        fill(&mut c, 9 * stride, false);
        assert!(!c.contains(0));
        for i in 1..8 {
            assert!(c.contains(i * stride));
        }
    }

    #[test]
    fn dirty_victim_writes_back() {
        let mut c = dcache();
        let stride = 128 * 64;
        fill(&mut c, 0, true);
        for i in 1..8 {
            fill(&mut c, i * stride, false);
        }
        match fill(&mut c, 8 * stride, false) {
            Access::Miss { writeback, .. } => assert_eq!(writeback, Some(0)),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.bytes_read_counter(), 64 * 10);
    }

    #[test]
    fn repeated_write_read_no_writeback() {
        let mut c = dcache();
        for _ in 0..100 {
            fill(&mut c, 0x40, true);
            fill(&mut c, 0x44, false);
        }
        assert_eq!(c.counters.writebacks, 0);
        assert_eq!(c.counters.fills, 1);
    }

    #[test]
    fn mshr_exhaustion_stalls() {
        let mut c = dcache();
        for i in 0..8 {
            assert!(matches!(c.access(i * 64, false, i as u64), Access::Miss { .. }));
        }
        assert_eq!(c.access(8 * 64, false, 9), Access::Stall);
    }

    #[test]
    fn ranks_are_a_permutation() {
        let mut c = dcache();
        for i in [0u32, 3, 1, 0, 5, 7, 2, 9, 0] {
            fill(&mut c, i * 128 * 64, i % 2 == 0);
            let mut r = c.ranks(0);
            r.sort();
            assert_eq!(r, (0..8).collect::<Vec<_>>());
        }
    }
}
