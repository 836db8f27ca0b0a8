//! Per-DPU cycle accounting: utilization, idle-cycle attribution, TLP in space
//! and time, and instruction mix.

use crate::isa::Category;
use crate::memsys::MemCounters;
use serde::{Deserialize, Serialize};

/// Why a cycle without any issue was lost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdleCause {
    Memory,
    Revolver,
    Rf,
}

impl IdleCause {
    /// Pick the cause of an idle cycle from the reasons of the individual
    /// scheduling units: revolver first, then register file, then memory.
    pub fn classify(reasons: impl IntoIterator<Item = IdleCause>) -> IdleCause {
        let mut seen = [false; 3];
        for r in reasons {
            seen[r as usize] = true;
        }
        if seen[IdleCause::Revolver as usize] {
            IdleCause::Revolver
        } else if seen[IdleCause::Rf as usize] {
            IdleCause::Rf
        } else {
            IdleCause::Memory
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdleCycles {
    pub memory: u64,
    pub revolver: u64,
    pub rf: u64,
}

impl IdleCycles {
    pub fn total(&self) -> u64 {
        self.memory + self.revolver + self.rf
    }

    fn add(&mut self, cause: IdleCause, n: u64) {
        match cause {
            IdleCause::Memory => self.memory += n,
            IdleCause::Revolver => self.revolver += n,
            IdleCause::Rf => self.rf += n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionMix {
    pub alu: u64,
    pub load_store_wram: u64,
    pub dma: u64,
    pub control: u64,
    pub sync: u64,
}

impl InstructionMix {
    pub fn add(&mut self, c: Category, n: u64) {
        *self.slot(c) += n;
    }

    fn slot(&mut self, c: Category) -> &mut u64 {
        match c {
            Category::Alu => &mut self.alu,
            Category::LoadStoreWram => &mut self.load_store_wram,
            Category::Dma => &mut self.dma,
            Category::Control => &mut self.control,
            Category::Sync => &mut self.sync,
        }
    }

    pub fn get(&self, c: Category) -> u64 {
        match c {
            Category::Alu => self.alu,
            Category::LoadStoreWram => self.load_store_wram,
            Category::Dma => self.dma,
            Category::Control => self.control,
            Category::Sync => self.sync,
        }
    }

    pub fn total(&self) -> u64 {
        Category::ALL.iter().map(|&c| self.get(c)).sum()
    }

    /// Fractions in [`Category::ALL`] order; all zero for an empty mix.
    pub fn fractions(&self) -> Vec<(Category, f64)> {
        let t = self.total();
        Category::ALL
            .iter()
            .map(|&c| (c, if t == 0 { 0.0 } else { self.get(c) as f64 / t as f64 }))
            .collect()
    }

    fn merge(&mut self, o: &InstructionMix) {
        for c in Category::ALL {
            self.add(c, o.get(c));
        }
    }
}

pub const TLP_BINS: usize = 25;

/// Counters accumulated by one DPU during a kernel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycles: u64,
    /// Scheduler issues (one per group issue in SIMT mode).
    pub issued: u64,
    /// Instructions executed summed over lanes.
    pub lane_instructions: u64,
    /// Cycles with at least one issue.
    pub active_cycles: u64,
    pub idle: IdleCycles,
    pub mix: InstructionMix,
    /// `tlp_histogram[k]` counts cycles with `k` issuable threads.
    pub tlp_histogram: Vec<u64>,
    pub tlp_window: u64,
    /// Sum of issuable-thread counts per window; the last window may be partial.
    pub tlp_window_sums: Vec<u64>,
    /// WRAM transactions (after coalescing).
    pub wram_transactions: u64,
    /// DMA jobs submitted (after coalescing).
    pub dma_requests: u64,
    pub issue_width: u64,
    pub mem: MemCounters,
}

impl CycleStats {
    pub fn new(tlp_window: u64, issue_width: u64) -> Self {
        CycleStats {
            cycles: 0,
            issued: 0,
            lane_instructions: 0,
            active_cycles: 0,
            idle: IdleCycles::default(),
            mix: InstructionMix::default(),
            tlp_histogram: vec![0; TLP_BINS],
            tlp_window: tlp_window.max(1),
            tlp_window_sums: Vec::new(),
            wram_transactions: 0,
            dma_requests: 0,
            issue_width,
            mem: MemCounters::default(),
        }
    }

    fn sample_tlp(&mut self, tlp: usize, n: u64) {
        self.tlp_histogram[tlp.min(TLP_BINS - 1)] += n;
        let mut left = n;
        let mut c = self.cycles;
        while left > 0 {
            let w = (c / self.tlp_window) as usize;
            if self.tlp_window_sums.len() <= w {
                self.tlp_window_sums.resize(w + 1, 0);
            }
            let room = self.tlp_window - c % self.tlp_window;
            let k = room.min(left);
            self.tlp_window_sums[w] += k * tlp as u64;
            left -= k;
            c += k;
        }
    }

    /// Account one cycle in which `issued` instructions were issued.
    pub fn record_cycle(&mut self, issued: u64, tlp: usize, idle: IdleCause) {
        self.sample_tlp(tlp, 1);
        if issued > 0 {
            self.active_cycles += 1;
        } else {
            self.idle.add(idle, 1);
        }
        self.cycles += 1;
    }

    /// Account `n` consecutive idle cycles with the same cause and TLP.
    pub fn record_idle_span(&mut self, n: u64, tlp: usize, idle: IdleCause) {
        if n == 0 {
            return;
        }
        self.sample_tlp(tlp, n);
        self.idle.add(idle, n);
        self.cycles += n;
    }

    pub fn record_issue(&mut self, c: Category, lanes: u64) {
        self.issued += 1;
        self.lane_instructions += lanes;
        self.mix.add(c, 1);
    }

    pub fn ipc(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.issued as f64 / self.cycles as f64
        }
    }

    /// Mean issuable threads per window.
    pub fn tlp_series(&self) -> Vec<f64> {
        let w = self.tlp_window;
        let full = self.cycles / w;
        self.tlp_window_sums
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let len = if (i as u64) < full { w } else { self.cycles - full * w };
                if len == 0 {
                    0.0
                } else {
                    s as f64 / len as f64
                }
            })
            .collect()
    }

    /// Accounting identities that must hold after every run.
    pub fn check_identities(&self) -> Result<(), String> {
        if self.active_cycles + self.idle.total() != self.cycles {
            return Err(format!(
                "active {} + idle {} != cycles {}",
                self.active_cycles,
                self.idle.total(),
                self.cycles
            ));
        }
        let hist: u64 = self.tlp_histogram.iter().sum();
        if hist != self.cycles {
            return Err(format!("TLP histogram mass {hist} != cycles {}", self.cycles));
        }
        if self.mix.total() != self.issued {
            return Err(format!("instruction mix {} != issued {}", self.mix.total(), self.issued));
        }
        Ok(())
    }

    pub fn utilization(&self, dma_peak_bytes_per_cycle: f64) -> UtilizationReport {
        let denom = (self.cycles * self.issue_width.max(1)) as f64;
        let compute = if denom == 0.0 { 0.0 } else { self.issued as f64 / denom };
        let bw = if self.cycles == 0 {
            0.0
        } else {
            self.mem.dma_bytes_read as f64 / (self.cycles as f64 * dma_peak_bytes_per_cycle)
        };
        UtilizationReport { compute: compute.min(1.0), memory_read: bw.min(1.0) }
    }

    /// Fold another DPU's counters into this one. Commutative and associative.
    pub fn merge(&mut self, o: &CycleStats) {
        self.cycles += o.cycles;
        self.issued += o.issued;
        self.lane_instructions += o.lane_instructions;
        self.active_cycles += o.active_cycles;
        self.idle.memory += o.idle.memory;
        self.idle.revolver += o.idle.revolver;
        self.idle.rf += o.idle.rf;
        self.mix.merge(&o.mix);
        for (a, b) in self.tlp_histogram.iter_mut().zip(&o.tlp_histogram) {
            *a += b;
        }
        if self.tlp_window_sums.len() < o.tlp_window_sums.len() {
            self.tlp_window_sums.resize(o.tlp_window_sums.len(), 0);
        }
        for (a, b) in self.tlp_window_sums.iter_mut().zip(&o.tlp_window_sums) {
            *a += b;
        }
        self.wram_transactions += o.wram_transactions;
        self.dma_requests += o.dma_requests;
        let (m, n) = (&mut self.mem, &o.mem);
        m.dma_bytes_read += n.dma_bytes_read;
        m.dma_bytes_written += n.dma_bytes_written;
        m.dma_jobs += n.dma_jobs;
        m.wram_bytes += n.wram_bytes;
        m.wram_accesses += n.wram_accesses;
        m.bank.row_hits += n.bank.row_hits;
        m.bank.row_closed += n.bank.row_closed;
        m.bank.row_conflicts += n.bank.row_conflicts;
        m.bank.bytes_read += n.bank.bytes_read;
        m.bank.bytes_written += n.bank.bytes_written;
        m.tlb_hits += n.tlb_hits;
        m.tlb_misses += n.tlb_misses;
        m.page_walks += n.page_walks;
        m.translations += n.translations;
        m.page_faults += n.page_faults;
        for (a, b) in [(&mut m.dcache, &n.dcache), (&mut m.icache, &n.icache)] {
            a.hits += b.hits;
            a.misses += b.misses;
            a.merged += b.merged;
            a.fills += b.fills;
            a.writebacks += b.writebacks;
            a.write_through += b.write_through;
        }
        m.cache_bytes_read += n.cache_bytes_read;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    /// Issued instructions over `cycles × issue width`.
    pub compute: f64,
    /// DMA read bytes over `cycles × peak DMA bytes per cycle`.
    pub memory_read: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        use IdleCause::*;
        assert_eq!(IdleCause::classify([Memory, Memory]), Memory);
        assert_eq!(IdleCause::classify([Memory, Revolver]), Revolver);
        assert_eq!(IdleCause::classify([Rf, Memory]), Rf);
        assert_eq!(IdleCause::classify([Rf, Revolver]), Revolver);
        assert_eq!(IdleCause::classify([]), Memory);
    }

    #[test]
    fn constant_tlp_series() {
        let mut s = CycleStats::new(100, 1);
        s.record_idle_span(250, 16, IdleCause::Memory);
        assert_eq!(s.tlp_series(), vec![16.0, 16.0, 16.0]);
        assert_eq!(s.tlp_histogram[16], 250);
    }

    #[test]
    fn alternating_tlp_averages() {
        let mut s = CycleStats::new(10, 1);
        for i in 0..40 {
            s.record_cycle(0, if i % 2 == 0 { 0 } else { 2 }, IdleCause::Memory);
        }
        assert_eq!(s.tlp_series(), vec![1.0; 4]);
    }

    #[test]
    fn spans_cross_window_boundaries() {
        let mut a = CycleStats::new(7, 1);
        let mut b = CycleStats::new(7, 1);
        a.record_idle_span(23, 3, IdleCause::Revolver);
        for _ in 0..23 {
            b.record_cycle(0, 3, IdleCause::Revolver);
        }
        assert_eq!(a, b);
        a.check_identities().unwrap();
    }

    #[test]
    fn merge_commutes() {
        let mut a = CycleStats::new(5, 1);
        a.record_cycle(1, 2, IdleCause::Memory);
        a.record_issue(Category::Alu, 1);
        a.record_idle_span(12, 1, IdleCause::Rf);
        let mut b = CycleStats::new(5, 1);
        b.record_idle_span(3, 4, IdleCause::Memory);
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        ab.check_identities().unwrap();
    }
}
