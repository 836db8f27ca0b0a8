//! Run configuration: every hardware parameter with its default, the
//! extension toggles, and overrides given as flat dotted keys
//! (`core.forwarding`, `mmu.enabled`, `memsys.dma.scale`, ...).

use crate::cache::CacheConfig;
use crate::dpu::{DpuConfig, PipelineConfig};
use crate::frontend::AddressMap;
use crate::memsys::{ClockDomains, DmaPort, DramTiming, MemConfig};
use crate::system::TransferModel;
use crate::vm::MmuConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::Path;
use thiserror::Error;

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "PIMSIM_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemsysConfig {
    pub timing: DramTiming,
    pub dma: DmaPort,
    pub wram_bytes_per_cycle: u32,
}

impl Default for MemsysConfig {
    fn default() -> Self {
        MemsysConfig { timing: DramTiming::default(), dma: DmaPort::default(), wram_bytes_per_cycle: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub tlp_window: u64,
    pub trace: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { tlp_window: 10_000, trace: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub transfer: TransferModel,
    /// Simulate DPUs on worker threads; results do not depend on it.
    pub parallel: bool,
    pub max_cycles: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig { transfer: TransferModel::default(), parallel: true, max_cycles: 4_000_000_000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub core: PipelineConfig,
    pub clock: ClockDomains,
    pub map: AddressMap,
    pub memsys: MemsysConfig,
    pub mmu: MmuConfig,
    pub cache: CacheConfig,
    pub system: SystemConfig,
    pub stats: StatsConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("config must be a JSON object")]
    NotObject,
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading {path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("unknown ILP knob `{0}` (expected letters from D, R, S, F)")]
    Knob(char),
    #[error("inconsistent configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    /// Parse a JSON document of dotted keys and/or nested objects, applied
    /// on top of the defaults.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.merge_json(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| ConfigError::Io { path: path.display().to_string(), err })?;
        Self::from_json(&text)
    }

    /// Defaults, or the file named by `PIMSIM_CONFIG` when set.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
            _ => Ok(RunConfig::default()),
        }
    }

    pub fn merge_json(&mut self, text: &str) -> Result<(), ConfigError> {
        let v: Value = serde_json::from_str(text)?;
        let Value::Object(obj) = v else { return Err(ConfigError::NotObject) };
        let mut flat = Vec::new();
        flatten("", &obj, &mut flat);
        for (k, v) in flat {
            self.set(&k, v)?;
        }
        Ok(())
    }

    /// Set one dotted key. The value must have the type of the default.
    pub fn set(&mut self, key: &str, value: Value) -> Result<(), ConfigError> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
        }
        if slot.is_object() {
            return Err(ConfigError::BadValue { key: key.into(), msg: "expected a leaf value".into() });
        }
        *slot = value;
        *self = serde_json::from_value(root)
            .map_err(|e| ConfigError::BadValue { key: key.into(), msg: e.to_string() })?;
        Ok(())
    }

    /// Set a dotted key from command-line text: JSON literals are taken as
    /// such, anything else as a string.
    pub fn set_str(&mut self, key: &str, text: &str) -> Result<(), ConfigError> {
        let v = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.into()));
        self.set(key, v)
    }

    /// Enable the cumulative ILP knobs named by letters: D forwarding,
    /// R unified register file, S dual issue, F doubled DPU clock.
    pub fn apply_ilp(&mut self, knobs: &str) -> Result<(), ConfigError> {
        for c in knobs.chars() {
            match c.to_ascii_uppercase() {
                'D' => self.core.forwarding = true,
                'R' => self.core.unified_rf = true,
                'S' => self.core.issue_width = 2,
                'F' => self.clock.dpu_mhz = 700,
                '-' | '_' | ',' | ' ' => {}
                other => return Err(ConfigError::Knob(other)),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.core.validate().map_err(ConfigError::Invalid)?;
        if self.clock.dpu_mhz == 0 || self.clock.dram_mhz == 0 {
            return Err(ConfigError::Invalid("clock frequencies must be positive".into()));
        }
        let dma = &self.memsys.dma;
        if dma.bytes_per_cycle == 0 || dma.nominal_mhz == 0 || dma.scale == 0 {
            return Err(ConfigError::Invalid("DMA port parameters must be positive".into()));
        }
        if self.memsys.wram_bytes_per_cycle == 0 {
            return Err(ConfigError::Invalid("WRAM port width must be positive".into()));
        }
        let t = &self.memsys.timing;
        if t.burst_bytes == 0 || t.row_bytes == 0 || !t.row_bytes.is_multiple_of(t.burst_bytes) {
            return Err(ConfigError::Invalid("row size must be a positive multiple of the burst size".into()));
        }
        if self.map.mram_size <= AddressMap::PAGE_TABLE_BYTES + AddressMap::TEXT_MIRROR_BYTES {
            return Err(ConfigError::Invalid("MRAM too small for page table and text mirror".into()));
        }
        if self.mmu.enabled && self.mmu.tlb_entries == 0 {
            return Err(ConfigError::Invalid("TLB needs at least one entry".into()));
        }
        for (name, g) in [("dcache", &self.cache.dcache), ("icache", &self.cache.icache)] {
            if g.line == 0 || g.ways == 0 || g.capacity == 0 || g.capacity % (g.line * g.ways) != 0 {
                return Err(ConfigError::Invalid(format!("{name} geometry does not divide into sets")));
            }
        }
        if self.transfer_ok() {
            Ok(())
        } else {
            Err(ConfigError::Invalid("host bandwidths must be positive".into()))
        }
    }

    fn transfer_ok(&self) -> bool {
        let t = &self.system.transfer;
        t.write_bytes_per_sec > 0.0 && t.read_bytes_per_sec > 0.0
    }

    pub fn dpu_config(&self) -> DpuConfig {
        DpuConfig {
            pipeline: self.core.clone(),
            mem: MemConfig {
                map: self.map.clone(),
                timing: self.memsys.timing,
                clock: self.clock,
                dma: self.memsys.dma,
                wram_bytes_per_cycle: self.memsys.wram_bytes_per_cycle,
                mmu: self.mmu.clone(),
                cache: self.cache.clone(),
            },
            max_cycles: self.system.max_cycles,
            tlp_window: self.stats.tlp_window,
            trace: self.stats.trace,
        }
    }

    /// Every leaf as a dotted key, in serialization order.
    pub fn to_flat(&self) -> Vec<(String, Value)> {
        let Value::Object(obj) = serde_json::to_value(self).expect("config serializes") else { unreachable!() };
        let mut out = Vec::new();
        flatten("", &obj, &mut out);
        out
    }
}

fn flatten(prefix: &str, obj: &Map<String, Value>, out: &mut Vec<(String, Value)>) {
    for (k, v) in obj {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(inner) if !inner.is_empty() => flatten(&key, inner, out),
            _ => out.push((key, v.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_match_hardware_table() {
        let c = RunConfig::default();
        assert_eq!(c.clock.dpu_mhz, 350);
        assert_eq!(c.clock.dram_mhz, 1200);
        assert_eq!((c.core.stages, c.core.revolver, c.core.reg_read_stage), (14, 11, 3));
        assert_eq!(c.map.wram_size, 64 * 1024);
        assert_eq!(c.map.iram_size, 24 * 1024);
        assert_eq!(c.map.mram_size, 64 << 20);
        assert_eq!((c.map.stack_size, c.map.heap_size), (2048, 4096));
        let t = c.memsys.timing;
        assert_eq!((t.t_rcd, t.t_ras, t.t_rp, t.t_cl, t.t_bl), (16, 39, 16, 16, 4));
        assert_eq!(t.row_bytes, 1024);
        assert_eq!(c.system.transfer.write_bytes_per_sec, 0.296e9);
        assert_eq!(c.system.transfer.read_bytes_per_sec, 0.063e9);
        c.validate().unwrap();
    }

    #[test]
    fn dotted_and_nested_keys() {
        let c = RunConfig::from_json(r#"{"core.forwarding": true, "mmu": {"enabled": true}, "memsys.dma.scale": 4}"#)
            .unwrap();
        assert!(c.core.forwarding);
        assert!(c.mmu.enabled);
        assert_eq!(c.memsys.dma.scale, 4);
        assert!(matches!(RunConfig::from_json(r#"{"core.nope": 1}"#), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::from_json(r#"{"core.stages": "x"}"#), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::from_json("[1]"), Err(ConfigError::NotObject)));
        assert!(RunConfig::from_json("{").is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut c = RunConfig::default();
        c.apply_ilp("DRSF").unwrap();
        c.cache.enabled = true;
        let mut d = RunConfig::default();
        for (k, v) in c.to_flat() {
            d.set(&k, v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn ilp_knobs_and_validation() {
        let mut c = RunConfig::default();
        c.apply_ilp("drsf").unwrap();
        assert!(c.core.forwarding && c.core.unified_rf);
        assert_eq!((c.core.issue_width, c.clock.dpu_mhz), (2, 700));
        assert!(matches!(c.apply_ilp("X"), Err(ConfigError::Knob('X'))));
        let mut c = RunConfig::default();
        c.set("core.revolver", json!(5)).unwrap();
        assert!(c.validate().is_err());
        c.set("core.forwarding", json!(true)).unwrap();
        c.validate().unwrap();
        c.set_str("core.simt.lanes", "3").unwrap();
        assert!(c.validate().is_err());
        c.set_str("mmu.mode", "interrupt").unwrap();
        assert_eq!(c.mmu.mode, crate::vm::FaultMode::Interrupt);
    }
}
