//! Results documents: a deterministic JSON record per run and CSV tables
//! derived from one or more records.

use crate::config::RunConfig;
use crate::isa::Category;
use crate::kernels::{KernelRun, Mismatch, Variant};
use crate::system::DpuSet;
use crate::stats::{CycleStats, IdleCycles, UtilizationReport};
use crate::system::{Phase, PhaseKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const SCHEMA_VERSION: u32 = 1;

/// Headline numbers of one DPU (or of all DPUs merged).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cycles: u64,
    pub issued: u64,
    pub lane_instructions: u64,
    pub active_cycles: u64,
    pub idle: IdleCycles,
    pub ipc: f64,
    pub utilization: UtilizationReport,
    pub mix: BTreeMap<String, u64>,
    pub mix_fractions: BTreeMap<String, f64>,
    pub dma_bytes_read: u64,
    pub dma_bytes_written: u64,
    pub dram_bytes_read: u64,
    pub dram_bytes_written: u64,
}

impl Summary {
    fn of(s: &CycleStats, dma_peak: f64) -> Self {
        let mix = Category::ALL.iter().map(|c| (c.name().to_string(), s.mix.get(*c))).collect();
        let mix_fractions = s.mix.fractions().into_iter().map(|(c, f)| (c.name().to_string(), f)).collect();
        Summary {
            cycles: s.cycles,
            issued: s.issued,
            lane_instructions: s.lane_instructions,
            active_cycles: s.active_cycles,
            idle: s.idle.clone(),
            ipc: s.ipc(),
            utilization: s.utilization(dma_peak),
            mix,
            mix_fractions,
            dma_bytes_read: s.mem.dma_bytes_read,
            dma_bytes_written: s.mem.dma_bytes_written,
            dram_bytes_read: s.mem.bank.bytes_read,
            dram_bytes_written: s.mem.bank.bytes_written,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaunchEntry {
    pub label: String,
    pub stats: CycleStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpuReport {
    pub dpu: usize,
    pub summary: Summary,
    /// Windowed mean TLP, launches back to back.
    pub tlp_series: Vec<f64>,
    pub launches: Vec<LaunchEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    /// Bundled kernel name, or the program name of an image run.
    pub kernel: String,
    pub variant: Variant,
    pub dpus: usize,
    pub threads: usize,
    pub scale: usize,
    pub seed: u64,
    pub passed: bool,
    pub mismatch: Option<Mismatch>,
    pub outputs_digest: String,
    pub image_digest: String,
    pub kernel_cycles: u64,
    pub kernel_seconds: f64,
    pub total_seconds: f64,
    pub phase_totals: BTreeMap<String, f64>,
    pub phases: Vec<Phase>,
    pub aggregate: Summary,
    pub per_dpu: Vec<DpuReport>,
    pub config: RunConfig,
}

pub fn words_digest(words: &[u32]) -> String {
    let mut h = Sha256::new();
    for w in words {
        h.update(w.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl RunReport {
    pub fn new(run: &KernelRun, cfg: &RunConfig, scale: usize, seed: u64) -> Self {
        let mut r = Self::from_set(run.kernel.name(), &run.set, run.threads, &run.outputs, cfg);
        r.variant = run.variant;
        r.scale = scale;
        r.seed = seed;
        r.passed = run.passed();
        r.mismatch = run.mismatch.clone();
        r.image_digest = run.image_digest.clone();
        r.kernel_cycles = run.kernel_cycles();
        r
    }

    /// Report on any finished DPU set; `outputs` are the words read back.
    pub fn from_set(name: &str, set: &DpuSet, threads: usize, outputs: &[u32], cfg: &RunConfig) -> Self {
        let peak = cfg.memsys.dma.peak_bytes_per_cycle(cfg.clock.dpu_mhz);
        let mut all: Option<CycleStats> = None;
        let per_dpu = (0..set.len())
            .map(|d| {
                let launches: Vec<LaunchEntry> = set
                    .launches
                    .iter()
                    .map(|l| LaunchEntry { label: l.label.clone(), stats: l.per_dpu[d].clone() })
                    .collect();
                let mut merged = CycleStats::new(cfg.stats.tlp_window, cfg.core.issue_width as u64);
                for l in &launches {
                    merged.merge(&l.stats);
                }
                match &mut all {
                    Some(a) => a.merge(&merged),
                    None => all = Some(merged.clone()),
                }
                DpuReport {
                    dpu: d,
                    summary: Summary::of(&merged, peak),
                    tlp_series: launches.iter().flat_map(|l| l.stats.tlp_series()).collect(),
                    launches,
                }
            })
            .collect();
        let phase_totals = [PhaseKind::CpuToDpu, PhaseKind::Kernel, PhaseKind::DpuToCpu, PhaseKind::InterDpu]
            .into_iter()
            .map(|k| (k.name().to_string(), set.phase_seconds(k)))
            .collect();
        RunReport {
            schema: SCHEMA_VERSION,
            kernel: name.to_string(),
            variant: Variant::for_config(cfg),
            dpus: set.len(),
            threads,
            scale: 0,
            seed: 0,
            passed: true,
            mismatch: None,
            outputs_digest: words_digest(outputs),
            image_digest: String::new(),
            kernel_cycles: set
                .launches
                .iter()
                .map(|l| l.per_dpu.iter().map(|s| s.cycles).max().unwrap_or(0))
                .sum(),
            kernel_seconds: set.phase_seconds(PhaseKind::Kernel),
            total_seconds: set.total_seconds(),
            phase_totals,
            phases: set.phases.clone(),
            aggregate: Summary::of(all.as_ref().expect("at least one DPU"), peak),
            per_dpu,
            config: cfg.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Check the accounting identities of every DPU and of the host timeline.
    pub fn check(&self) -> Result<(), String> {
        for d in &self.per_dpu {
            for l in &d.launches {
                l.stats.check_identities().map_err(|e| format!("DPU {} {}: {e}", d.dpu, l.label))?;
            }
        }
        let sum: f64 = self.phases.iter().map(|p| p.seconds).sum();
        if (sum - self.total_seconds).abs() > 1e-12 * self.total_seconds.max(1.0) {
            return Err(format!("phases sum to {sum}, total is {}", self.total_seconds));
        }
        let u = &self.aggregate.utilization;
        if !(0.0..=1.0).contains(&u.compute) || !(0.0..=1.0).contains(&u.memory_read) {
            return Err("utilization outside [0, 1]".into());
        }
        Ok(())
    }
}

/// One row per run: timing, utilization and idle breakdown.
pub fn summary_csv(runs: &[RunReport]) -> String {
    let mut out = String::from(
        "kernel,variant,dpus,threads,passed,kernel_cycles,kernel_seconds,total_seconds,ipc,compute_util,memory_read_util,active,idle_memory,idle_revolver,idle_rf,dram_bytes_read\n",
    );
    for r in runs {
        let a = &r.aggregate;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.9},{:.9},{:.4},{:.4},{:.4},{},{},{},{},{}",
            r.kernel,
            variant_name(r.variant),
            r.dpus,
            r.threads,
            r.passed,
            r.kernel_cycles,
            r.kernel_seconds,
            r.total_seconds,
            a.ipc,
            a.utilization.compute,
            a.utilization.memory_read,
            a.active_cycles,
            a.idle.memory,
            a.idle.revolver,
            a.idle.rf,
            a.dram_bytes_read
        );
    }
    out
}

/// Host time per phase kind for every run.
pub fn phases_csv(runs: &[RunReport]) -> String {
    let mut out = String::from("kernel,dpus,threads,cpu_to_dpu_s,kernel_s,dpu_to_cpu_s,inter_dpu_s,total_s\n");
    for r in runs {
        let p = |k: PhaseKind| r.phase_totals.get(k.name()).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.kernel,
            r.dpus,
            r.threads,
            p(PhaseKind::CpuToDpu),
            p(PhaseKind::Kernel),
            p(PhaseKind::DpuToCpu),
            p(PhaseKind::InterDpu),
            r.total_seconds
        );
    }
    out
}

/// Instruction-mix fractions per run.
pub fn mix_csv(runs: &[RunReport]) -> String {
    let mut out = String::from("kernel,dpus,threads");
    for c in Category::ALL {
        out.push(',');
        out.push_str(c.name());
    }
    out.push('\n');
    for r in runs {
        let _ = write!(out, "{},{},{}", r.kernel, r.dpus, r.threads);
        for c in Category::ALL {
            let f = r.aggregate.mix_fractions.get(c.name()).copied().unwrap_or(0.0);
            let _ = write!(out, ",{f:.6}");
        }
        out.push('\n');
    }
    out
}

/// Histogram of issuable threads (summed over DPUs and launches).
pub fn tlp_histogram_csv(runs: &[RunReport]) -> String {
    let mut out = String::from("kernel,dpus,threads,issuable,cycles\n");
    for r in runs {
        let mut hist = [0u64; crate::stats::TLP_BINS];
        for d in &r.per_dpu {
            for l in &d.launches {
                for (h, v) in hist.iter_mut().zip(&l.stats.tlp_histogram) {
                    *h += v;
                }
            }
        }
        for (k, c) in hist.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{k},{c}", r.kernel, r.dpus, r.threads);
        }
    }
    out
}

/// Windowed mean TLP of DPU 0 of every run.
pub fn tlp_series_csv(runs: &[RunReport]) -> String {
    let mut out = String::from("kernel,dpus,threads,window,mean_tlp\n");
    for r in runs {
        if let Some(d) = r.per_dpu.first() {
            for (i, v) in d.tlp_series.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{i},{v:.4}", r.kernel, r.dpus, r.threads);
            }
        }
    }
    out
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Scratchpad => "scratchpad",
        Variant::Cache => "cache",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{run_and_check, Kernel};

    fn report(k: Kernel, dpus: usize) -> RunReport {
        let cfg = RunConfig::default();
        let run = run_and_check(k, dpus, 8, &cfg, 512, 3).unwrap();
        RunReport::new(&run, &cfg, 512, 3)
    }

    #[test]
    fn json_is_deterministic_and_round_trips() {
        let a = report(Kernel::Scan, 2);
        let b = report(Kernel::Scan, 2);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(RunReport::from_json(&a.to_json()).unwrap(), a);
        a.check().unwrap();
        assert!(a.passed);
        assert_eq!(a.per_dpu[0].launches.len(), 2);
        assert_eq!(a.phase_totals.len(), 4);
        assert!(a.phase_totals["inter-dpu"] > 0.0);
    }

    #[test]
    fn tables_have_one_row_per_run() {
        let runs = vec![report(Kernel::Va, 1), report(Kernel::Hst, 2)];
        assert_eq!(summary_csv(&runs).lines().count(), 3);
        assert_eq!(phases_csv(&runs).lines().count(), 3);
        assert_eq!(mix_csv(&runs).lines().count(), 3);
        assert_eq!(tlp_histogram_csv(&runs).lines().count(), 1 + 2 * 25);
        let mix = mix_csv(&runs);
        let row: Vec<f64> = mix.lines().nth(1).unwrap().split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn digest_of_words() {
        assert_eq!(words_digest(&[]), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_ne!(words_digest(&[1]), words_digest(&[2]));
    }
}
