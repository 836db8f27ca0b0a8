use super::dram::Direction;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// A contiguous WRAM range taking part in a DMA job.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WramSegment {
    /// Offset from the WRAM base.
    pub offset: u32,
    pub len: u32,
}

/// One DMA job. A single job may gather from or scatter to several WRAM
/// segments (used when SIMT lanes with adjacent MRAM ranges are merged).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DmaRequest {
    /// `Read` moves MRAM to WRAM (`ldma`); `Write` moves WRAM to MRAM (`sdma`).
    pub dir: Direction,
    /// Offset from the MRAM base (virtual when translation is on).
    pub mram: u32,
    pub segments: Vec<WramSegment>,
    /// Tasklets released when the job completes.
    pub waiters: Vec<usize>,
}

impl DmaRequest {
    pub fn bytes(&self) -> u32 {
        self.segments.iter().map(|s| s.len).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Chunk {
    pub vaddr: u32,
    pub len: u32,
    pub paddr: Option<u32>,
    pub ready: Option<u64>,
    pub data_done: Option<u64>,
    pub drain_end: Option<u64>,
    pub write_issued: bool,
    pub write_done: Option<u64>,
}

#[derive(Clone, Debug)]
pub(crate) struct ActiveJob {
    pub id: u64,
    pub req: DmaRequest,
    pub start: u64,
    pub chunks: Vec<Chunk>,
    pub complete_at: Option<u64>,
    pub faulted: Option<String>,
}

/// FIFO of DMA jobs served one at a time.
#[derive(Clone, Debug, Default)]
pub struct DmaEngine {
    pub(crate) queue: VecDeque<DmaRequest>,
    pub(crate) active: Option<ActiveJob>,
    pub(crate) next_id: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub jobs: u64,
}

impl DmaEngine {
    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.active.is_none()
    }

    pub fn queued(&self) -> usize {
        self.queue.len() + self.active.is_some() as usize
    }
}

/// Split `[addr, addr+len)` at `row`-byte boundaries.
pub fn split_rows(addr: u32, len: u32, row: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut a = addr;
    let end = addr + len;
    while a < end {
        let next = ((a / row) + 1) * row;
        let e = next.min(end);
        out.push((a, e - a));
        a = e;
    }
    out
}

/// DMA port parameters. The port moves `bytes_per_cycle` bytes per cycle at
/// `nominal_mhz`; its wall-clock bandwidth is fixed, so a faster DPU clock
/// needs proportionally more DPU cycles for the same transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaPort {
    pub bytes_per_cycle: u64,
    pub nominal_mhz: u64,
    pub scale: u64,
}

impl Default for DmaPort {
    fn default() -> Self {
        DmaPort { bytes_per_cycle: 2, nominal_mhz: 350, scale: 1 }
    }
}

impl DmaPort {
    pub fn drain_cycles(&self, len: u32, dpu_mhz: u64) -> u64 {
        (len as u64 * dpu_mhz).div_ceil(self.bytes_per_cycle * self.nominal_mhz * self.scale)
    }

    /// Peak bytes per DPU cycle at `dpu_mhz`.
    pub fn peak_bytes_per_cycle(&self, dpu_mhz: u64) -> f64 {
        (self.bytes_per_cycle * self.nominal_mhz * self.scale) as f64 / dpu_mhz as f64
    }
}
