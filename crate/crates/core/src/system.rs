//! Host-side model: a set of isolated DPUs, CPU↔DPU transfers under a fixed
//! per-DPU bandwidth, kernel launches and host-relayed copies between DPUs.

use crate::dpu::{BootError, Dpu, DpuConfig, RunError, SimFault};
use crate::frontend::{AddressMap, MemoryImage, RegionKind};
use crate::stats::CycleStats;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed-bandwidth host link. Every DPU sees the full per-DPU bandwidth, so
/// a broadcast or scatter costs as much as its largest per-DPU buffer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferModel {
    /// CPU→DPU bytes per second per DPU.
    pub write_bytes_per_sec: f64,
    /// CPU←DPU bytes per second per DPU.
    pub read_bytes_per_sec: f64,
}

impl Default for TransferModel {
    fn default() -> Self {
        TransferModel { write_bytes_per_sec: 0.296e9, read_bytes_per_sec: 0.063e9 }
    }
}

impl TransferModel {
    pub fn write_seconds(&self, bytes: u64) -> f64 {
        bytes as f64 / self.write_bytes_per_sec
    }

    pub fn read_seconds(&self, bytes: u64) -> f64 {
        bytes as f64 / self.read_bytes_per_sec
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseKind {
    CpuToDpu,
    Kernel,
    DpuToCpu,
    InterDpu,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::CpuToDpu => "cpu-to-dpu",
            PhaseKind::Kernel => "kernel",
            PhaseKind::DpuToCpu => "dpu-to-cpu",
            PhaseKind::InterDpu => "inter-dpu",
        }
    }
}

/// One host-visible step of a run. Phases never overlap; `start` is the sum
/// of all earlier durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub label: String,
    pub start: f64,
    pub seconds: f64,
    /// Largest per-DPU byte count moved (transfers only).
    pub bytes: u64,
}

#[derive(Clone, Debug, Error)]
pub enum SystemError {
    #[error("expected {expected} buffers (one per DPU), got {got}")]
    BufferCount { expected: usize, got: usize },
    #[error("DPU {dpu}: {region} range {offset:#x}+{len} out of bounds")]
    Bounds { dpu: usize, region: RegionKind, offset: u32, len: usize },
    #[error("host transfers only reach WRAM and MRAM, not {0}")]
    Region(RegionKind),
    #[error("DPU {dpu}: {err}")]
    Boot { dpu: usize, err: BootError },
    #[error("DPU {dpu}: {err}")]
    Run { dpu: usize, err: RunError },
    #[error("DPU {dpu}: {fault}")]
    Fault { dpu: usize, fault: SimFault },
    #[error("DPU index {0} out of range")]
    NoSuchDpu(usize),
}

/// Per-DPU outcome of a launch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaunchReport {
    pub cycles: Vec<u64>,
    pub seconds: f64,
}

/// Counters of every DPU for one launch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaunchStats {
    pub label: String,
    pub per_dpu: Vec<CycleStats>,
}

/// Isolated DPUs driven by one host.
#[derive(Clone, Debug)]
pub struct DpuSet {
    dpus: Vec<Dpu>,
    pub transfer: TransferModel,
    pub phases: Vec<Phase>,
    pub launches: Vec<LaunchStats>,
    /// Simulate DPUs on worker threads during launches.
    pub parallel: bool,
}

impl DpuSet {
    pub fn alloc(n: usize, cfg: &DpuConfig, transfer: TransferModel) -> Self {
        assert!(n >= 1, "a DPU set needs at least one DPU");
        DpuSet {
            dpus: (0..n).map(|_| Dpu::new(cfg.clone())).collect(),
            transfer,
            phases: Vec::new(),
            launches: Vec::new(),
            parallel: false,
        }
    }

    pub fn len(&self) -> usize {
        self.dpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dpus.is_empty()
    }

    pub fn dpu(&self, i: usize) -> &Dpu {
        &self.dpus[i]
    }

    pub fn dpu_mut(&mut self, i: usize) -> &mut Dpu {
        &mut self.dpus[i]
    }

    pub fn dpus(&self) -> &[Dpu] {
        &self.dpus
    }

    pub fn load(&mut self, image: &MemoryImage) {
        for d in &mut self.dpus {
            d.load(image);
        }
    }

    fn push_phase(&mut self, kind: PhaseKind, label: &str, seconds: f64, bytes: u64) -> f64 {
        let start = self.total_seconds();
        self.phases.push(Phase { kind, label: label.into(), start, seconds, bytes });
        seconds
    }

    /// End-to-end host time so far.
    pub fn total_seconds(&self) -> f64 {
        self.phases.iter().fold(0.0, |a, p| a + p.seconds)
    }

    pub fn phase_seconds(&self, kind: PhaseKind) -> f64 {
        self.phases.iter().filter(|p| p.kind == kind).fold(0.0, |a, p| a + p.seconds)
    }

    fn write_region(&mut self, i: usize, region: RegionKind, offset: u32, data: &[u8]) -> Result<(), SystemError> {
        let bounds = || SystemError::Bounds { dpu: i, region, offset, len: data.len() };
        let dpu = self.dpus.get_mut(i).ok_or(SystemError::NoSuchDpu(i))?;
        let size = dpu.cfg.mem.map.size(region) as usize;
        if offset as usize + data.len() > size {
            return Err(bounds());
        }
        match region {
            RegionKind::Wram => dpu.mem.write_wram(offset as usize, data),
            RegionKind::Mram => dpu.mem.write_mram(offset, data).map_err(|_| bounds())?,
            other => return Err(SystemError::Region(other)),
        }
        Ok(())
    }

    fn read_region(&self, i: usize, region: RegionKind, offset: u32, len: usize) -> Result<Vec<u8>, SystemError> {
        let bounds = || SystemError::Bounds { dpu: i, region, offset, len };
        let dpu = self.dpus.get(i).ok_or(SystemError::NoSuchDpu(i))?;
        let size = dpu.cfg.mem.map.size(region) as usize;
        if offset as usize + len > size {
            return Err(bounds());
        }
        match region {
            RegionKind::Wram => Ok(dpu.mem.read_wram(offset as usize, len).to_vec()),
            RegionKind::Mram => dpu.mem.read_mram(offset, len as u32).map_err(|_| bounds()),
            other => Err(SystemError::Region(other)),
        }
    }

    /// Write one buffer per DPU at `offset` from the region base. Returns the
    /// elapsed host time: the largest buffer over the per-DPU bandwidth.
    pub fn copy_to_dpus(
        &mut self,
        buffers: &[Vec<u8>],
        region: RegionKind,
        offset: u32,
        label: &str,
    ) -> Result<f64, SystemError> {
        if buffers.len() != self.dpus.len() {
            return Err(SystemError::BufferCount { expected: self.dpus.len(), got: buffers.len() });
        }
        for (i, b) in buffers.iter().enumerate() {
            self.write_region(i, region, offset, b)?;
        }
        let bytes = buffers.iter().map(|b| b.len() as u64).max().unwrap_or(0);
        Ok(self.push_phase(PhaseKind::CpuToDpu, label, self.transfer.write_seconds(bytes), bytes))
    }

    /// Write the same buffer to every DPU.
    pub fn broadcast(&mut self, data: &[u8], region: RegionKind, offset: u32, label: &str) -> Result<f64, SystemError> {
        let bufs = vec![data.to_vec(); self.dpus.len()];
        self.copy_to_dpus(&bufs, region, offset, label)
    }

    /// Read `len` bytes at `offset` from every DPU.
    pub fn copy_from_dpus(
        &mut self,
        region: RegionKind,
        offset: u32,
        len: usize,
        label: &str,
    ) -> Result<(Vec<Vec<u8>>, f64), SystemError> {
        let data = (0..self.dpus.len())
            .map(|i| self.read_region(i, region, offset, len))
            .collect::<Result<Vec<_>, _>>()?;
        let t = self.push_phase(PhaseKind::DpuToCpu, label, self.transfer.read_seconds(len as u64), len as u64);
        Ok((data, t))
    }

    /// Boot every DPU with `threads` tasklets and simulate to completion. The
    /// kernel phase lasts as long as the slowest DPU.
    pub fn launch(&mut self, threads: usize, label: &str) -> Result<LaunchReport, SystemError> {
        for (i, d) in self.dpus.iter_mut().enumerate() {
            d.boot(threads).map_err(|err| SystemError::Boot { dpu: i, err })?;
        }
        let results: Vec<Result<u64, RunError>> = if self.parallel {
            self.dpus.par_iter_mut().map(|d| d.run()).collect()
        } else {
            self.dpus.iter_mut().map(|d| d.run()).collect()
        };
        let mut cycles = Vec::with_capacity(results.len());
        for (i, r) in results.into_iter().enumerate() {
            cycles.push(r.map_err(|err| SystemError::Run { dpu: i, err })?);
            if let Some(f) = self.dpus[i].faults.first() {
                return Err(SystemError::Fault { dpu: i, fault: f.clone() });
            }
        }
        let seconds = self
            .dpus
            .iter()
            .map(|d| d.seconds())
            .fold(0.0, f64::max);
        self.push_phase(PhaseKind::Kernel, label, seconds, 0);
        let per_dpu = self.dpus.iter().map(|d| d.stats.clone()).collect();
        self.launches.push(LaunchStats { label: label.into(), per_dpu });
        Ok(LaunchReport { cycles, seconds })
    }

    /// Copy data between DPUs through the host: read `len` bytes from each
    /// source, let `combine` turn them into one buffer per destination, and
    /// write those. Elapsed time is the read plus the write phase.
    pub fn relay(
        &mut self,
        src: (RegionKind, u32, usize),
        dst: (RegionKind, u32),
        combine: impl FnOnce(Vec<Vec<u8>>) -> Vec<Vec<u8>>,
        label: &str,
    ) -> Result<f64, SystemError> {
        let (sr, so, len) = src;
        let data = (0..self.dpus.len())
            .map(|i| self.read_region(i, sr, so, len))
            .collect::<Result<Vec<_>, _>>()?;
        let out = combine(data);
        if out.len() != self.dpus.len() {
            return Err(SystemError::BufferCount { expected: self.dpus.len(), got: out.len() });
        }
        for (i, b) in out.iter().enumerate() {
            self.write_region(i, dst.0, dst.1, b)?;
        }
        let wbytes = out.iter().map(|b| b.len() as u64).max().unwrap_or(0);
        let secs = self.transfer.read_seconds(len as u64) + self.transfer.write_seconds(wbytes);
        Ok(self.push_phase(PhaseKind::InterDpu, label, secs, len.max(wbytes as usize) as u64))
    }

    /// Offset of an image symbol from the base of its region.
    pub fn symbol_offset(image: &MemoryImage, name: &str) -> Option<(RegionKind, u32)> {
        let addr = image.symbol(name)?;
        let map = AddressMap::default();
        let region = map.region_of(addr)?;
        Some((region, addr - AddressMap::base(region)))
    }
}
