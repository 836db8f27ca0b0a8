//! Optional MRAM address translation: a fully-associative LRU TLB backed by a
//! single-level page table that lives at the top of MRAM, plus the host-side
//! fault service.

use serde::{Deserialize, Serialize};

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_BYTES: u32 = 1 << PAGE_SHIFT;
pub const PTE_BYTES: u32 = 8;

/// Page-table entry layout: `(ppn << 12) | valid`.
pub fn pte_encode(ppn: u32, valid: bool) -> u64 {
    ((ppn as u64) << PAGE_SHIFT) | valid as u64
}

pub fn pte_decode(pte: u64) -> Option<u32> {
    (pte & 1 == 1).then_some((pte >> PAGE_SHIFT) as u32)
}

pub fn vpn_of(offset: u32) -> u32 {
    offset >> PAGE_SHIFT
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlbEntry {
    pub vpn: u32,
    pub ppn: u32,
    pub valid: bool,
    pub last_use: u64,
}

#[derive(Clone, Debug)]
pub struct Tlb {
    entries: Vec<TlbEntry>,
    capacity: usize,
    stamp: u64,
    pub hits: u64,
    pub misses: u64,
}

impl Tlb {
    pub fn new(capacity: usize) -> Self {
        Tlb { entries: Vec::with_capacity(capacity), capacity, stamp: 0, hits: 0, misses: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[TlbEntry] {
        &self.entries
    }

    /// Look up `vpn`, refreshing its recency on a hit.
    pub fn lookup(&mut self, vpn: u32) -> Option<u32> {
        self.stamp += 1;
        let stamp = self.stamp;
        match self.entries.iter_mut().find(|e| e.valid && e.vpn == vpn) {
            Some(e) => {
                e.last_use = stamp;
                self.hits += 1;
                Some(e.ppn)
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Insert a translation, evicting the least recently used entry when full.
    pub fn fill(&mut self, vpn: u32, ppn: u32) -> Option<TlbEntry> {
        self.stamp += 1;
        let new = TlbEntry { vpn, ppn, valid: true, last_use: self.stamp };
        if let Some(e) = self.entries.iter_mut().find(|e| e.valid && e.vpn == vpn) {
            *e = new;
            return None;
        }
        if self.entries.len() < self.capacity {
            self.entries.push(new);
            return None;
        }
        let victim = self
            .entries
            .iter()
            .enumerate()
            .min_by_key(|(_, e)| e.last_use)
            .map(|(i, _)| i)
            .expect("capacity is nonzero");
        Some(std::mem::replace(&mut self.entries[victim], new))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultMode {
    Poll,
    Interrupt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prefault {
    All,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmuConfig {
    pub enabled: bool,
    pub mode: FaultMode,
    pub handler_latency_us: f64,
    pub poll_period_us: f64,
    pub prefault: Prefault,
    pub tlb_entries: usize,
    pub tlb_latency: u64,
}

impl Default for MmuConfig {
    fn default() -> Self {
        MmuConfig {
            enabled: false,
            mode: FaultMode::Interrupt,
            handler_latency_us: 20.0,
            poll_period_us: 10.0,
            prefault: Prefault::All,
            tlb_entries: 16,
            tlb_latency: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultStatus {
    Pending,
    Serviced,
    Fatal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    /// Faulting MRAM offset.
    pub vaddr: u32,
    /// Tasklets waiting on the translation.
    pub tasklets: Vec<usize>,
    pub cycle: u64,
    pub status: FaultStatus,
    pub resume_at: Option<u64>,
}

/// Host-side fault handler model, in DPU cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HostFaultService {
    pub mode: FaultMode,
    pub handler_cycles: u64,
    pub poll_period_cycles: u64,
}

impl HostFaultService {
    /// Cycle at which the PTE for a fault raised at `fault_cycle` is installed.
    /// Interrupts run the handler right away; polling waits for the next poll
    /// tick strictly after the fault.
    pub fn resume_cycle(&self, fault_cycle: u64) -> u64 {
        match self.mode {
            FaultMode::Interrupt => fault_cycle + self.handler_cycles,
            FaultMode::Poll => {
                let p = self.poll_period_cycles.max(1);
                (fault_cycle / p + 1) * p + self.handler_cycles
            }
        }
    }
}
