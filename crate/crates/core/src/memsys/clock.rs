use serde::{Deserialize, Serialize};

/// DPU and DRAM command-clock frequencies. Conversions round up so that an
/// event is never observed before it happens in the other domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockDomains {
    pub dpu_mhz: u64,
    pub dram_mhz: u64,
}

impl Default for ClockDomains {
    fn default() -> Self {
        ClockDomains { dpu_mhz: 350, dram_mhz: 1200 }
    }
}

impl ClockDomains {
    pub fn new(dpu_mhz: u64) -> Self {
        ClockDomains { dpu_mhz, dram_mhz: 1200 }
    }

    pub fn dpu_to_dram(&self, dpu_cycle: u64) -> u64 {
        (dpu_cycle * self.dram_mhz).div_ceil(self.dpu_mhz)
    }

    pub fn dram_to_dpu(&self, dram_cycle: u64) -> u64 {
        (dram_cycle * self.dpu_mhz).div_ceil(self.dram_mhz)
    }

    /// Wall-clock seconds of `dpu_cycles`.
    pub fn seconds(&self, dpu_cycles: u64) -> f64 {
        dpu_cycles as f64 / (self.dpu_mhz as f64 * 1e6)
    }

    /// DPU cycles covering `micros` microseconds (rounded up).
    pub fn micros_to_dpu(&self, micros: f64) -> u64 {
        (micros * self.dpu_mhz as f64).ceil() as u64
    }
}
