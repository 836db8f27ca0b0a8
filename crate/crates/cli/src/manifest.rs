//! Run manifests and their execution.
//!
//! A manifest names either a bundled kernel (inputs generated from a seed and
//! checked against the host reference) or a program image with explicit
//! input and output buffers:
//!
//! ```json
//! {
//!   "sources": ["prog.s"],
//!   "dpus": 2, "threads": 8,
//!   "inputs":  [{"symbol": "a", "words": [1, 2, 3, 4]}],
//!   "launches": 1,
//!   "outputs": [{"symbol": "c", "words": 4, "expected": [2, 4, 6, 8]}],
//!   "config": {"core.forwarding": true}
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use anyhow::{anyhow, bail, Context, Result};
use pimsim_core::config::RunConfig;
use pimsim_core::frontend::{assemble, link, LinkOptions, MemoryImage, RegionKind};
use pimsim_core::kernels::{first_mismatch, run_and_check, Kernel};
use pimsim_core::report::RunReport;
use pimsim_core::system::DpuSet;
use serde::Deserialize;
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kernel: Option<String>,
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub sources: Vec<PathBuf>,
    pub dpus: Option<usize>,
    pub threads: Option<usize>,
    pub scale: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub inputs: Vec<Buffer>,
    pub launches: Option<usize>,
    #[serde(default)]
    pub outputs: Vec<OutputBuffer>,
    pub config: Option<Value>,
}

/// Words written at a symbol (plus a byte offset) before the first launch.
#[derive(Clone, Debug, Deserialize)]
pub struct Buffer {
    pub symbol: String,
    #[serde(default)]
    pub offset: u32,
    #[serde(flatten)]
    pub data: PerDpu,
}

/// The same words for every DPU, or one list per DPU.
#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerDpu {
    Words(Vec<u32>),
    PerDpu(Vec<Vec<u32>>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBuffer {
    pub symbol: String,
    #[serde(default)]
    pub offset: u32,
    pub words: usize,
    pub expected: Option<Expected>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Expected {
    Same(Vec<u32>),
    PerDpu(Vec<Vec<u32>>),
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(img) = &mut m.image {
            *img = dir.join(&*img);
        }
        for s in &mut m.sources {
            *s = dir.join(&*s);
        }
        Ok(m)
    }
}

/// What a run executes.
#[derive(Clone, Debug)]
pub enum Program {
    Kernel(Kernel),
    Image { name: String, image: Box<MemoryImage>, inputs: Vec<Buffer>, launches: usize, outputs: Vec<OutputBuffer> },
}

/// Everything needed for one deterministic run.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub program: Program,
    pub dpus: usize,
    pub threads: usize,
    pub scale: Option<usize>,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunPlan {
    pub fn execute(&self) -> Result<RunReport> {
        self.config.validate()?;
        match &self.program {
            Program::Kernel(k) => {
                let scale = self.scale.unwrap_or(k.default_scale());
                let run = run_and_check(*k, self.dpus, self.threads, &self.config, scale, self.seed)?;
                Ok(RunReport::new(&run, &self.config, scale, self.seed))
            }
            Program::Image { name, image, inputs, launches, outputs } => {
                run_image(name, image, inputs, *launches, outputs, self)
            }
        }
    }
}

/// Assemble and link sources for `threads` tasklets.
pub fn build_image(sources: &[PathBuf], threads: usize, cfg: &RunConfig, opts: LinkOptions) -> Result<MemoryImage> {
    let mut objects = Vec::new();
    for s in sources {
        let text = std::fs::read_to_string(s).with_context(|| format!("reading {}", s.display()))?;
        objects.push(assemble(&text, &s.display().to_string())?);
    }
    Ok(link(&objects, &cfg.map, &LinkOptions { threads: threads as u32, ..opts })?)
}

fn locate(image: &MemoryImage, symbol: &str, offset: u32) -> Result<(RegionKind, u32)> {
    let (region, base) =
        DpuSet::symbol_offset(image, symbol).ok_or_else(|| anyhow!("symbol `{symbol}` not found in image"))?;
    Ok((region, base + offset))
}

fn words_to_bytes(w: &[u32]) -> Vec<u8> {
    w.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn run_image(
    name: &str,
    image: &MemoryImage,
    inputs: &[Buffer],
    launches: usize,
    outputs: &[OutputBuffer],
    plan: &RunPlan,
) -> Result<RunReport> {
    let cfg = &plan.config;
    let mut set = DpuSet::alloc(plan.dpus, &cfg.dpu_config(), cfg.system.transfer);
    set.parallel = cfg.system.parallel;
    set.load(image);
    for b in inputs {
        let (region, off) = locate(image, &b.symbol, b.offset)?;
        let label = format!("input {}", b.symbol);
        match &b.data {
            PerDpu::Words(w) => set.broadcast(&words_to_bytes(w), region, off, &label)?,
            PerDpu::PerDpu(per) => {
                let bufs: Vec<Vec<u8>> = per.iter().map(|w| words_to_bytes(w)).collect();
                set.copy_to_dpus(&bufs, region, off, &label)?
            }
        };
    }
    for i in 0..launches {
        set.launch(plan.threads, &format!("launch {i}"))?;
    }
    let mut got = Vec::new();
    let mut expected = Vec::new();
    let mut checked = false;
    for o in outputs {
        let (region, off) = locate(image, &o.symbol, o.offset)?;
        let (data, _) = set.copy_from_dpus(region, off, o.words * 4, &format!("output {}", o.symbol))?;
        for (d, bytes) in data.iter().enumerate() {
            got.extend(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())));
            match &o.expected {
                Some(Expected::Same(w)) => expected.extend_from_slice(w),
                Some(Expected::PerDpu(per)) => {
                    let w = per.get(d).ok_or_else(|| anyhow!("no expected words for DPU {d} of `{}`", o.symbol))?;
                    expected.extend_from_slice(w);
                }
                None => {}
            }
        }
        checked |= o.expected.is_some();
        if o.expected.is_none() && outputs.iter().any(|x| x.expected.is_some()) {
            bail!("either every output or none must list expected words");
        }
    }
    let mut report = RunReport::from_set(name, &set, plan.threads, &got, cfg);
    report.image_digest = image.digest();
    report.seed = plan.seed;
    if checked {
        report.mismatch = first_mismatch(&expected, &got);
        report.passed = report.mismatch.is_none();
    }
    Ok(report)
}
