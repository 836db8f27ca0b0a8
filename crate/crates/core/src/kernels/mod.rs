//! Bundled assembly kernels with seeded input generators, host reference
//! implementations and host drivers.
//!
//! Every kernel has a scratchpad variant, which stages MRAM data through WRAM
//! with DMA, and a cache variant, whose arrays are linked into MRAM-backed
//! space and reached with plain loads and stores through the data cache. The
//! cache variant is used whenever the run configuration enables the cache.

use crate::config::RunConfig;
use crate::frontend::{assemble, link, AddressMap, AsmError, LinkError, LinkOptions, MemoryImage, RegionKind};
use crate::system::{DpuSet, SystemError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Kernel {
    Va,
    Red,
    Bs,
    Hst,
    Gemv,
    Scan,
}

impl Kernel {
    pub const ALL: [Kernel; 6] = [Kernel::Va, Kernel::Red, Kernel::Bs, Kernel::Hst, Kernel::Gemv, Kernel::Scan];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Va => "VA",
            Kernel::Red => "RED",
            Kernel::Bs => "BS",
            Kernel::Hst => "HST",
            Kernel::Gemv => "GEMV",
            Kernel::Scan => "SCAN",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Kernel::Va => "vector addition, streaming",
            Kernel::Red => "reduction with a lock-protected total",
            Kernel::Bs => "binary search, data-dependent probes",
            Kernel::Hst => "256-bin histogram, one contended lock",
            Kernel::Gemv => "matrix-vector product, 8-byte column reads",
            Kernel::Scan => "prefix sum in two launches with a host relay",
        }
    }

    /// Element count used when none is given.
    pub fn default_scale(self) -> usize {
        match self {
            Kernel::Va | Kernel::Red | Kernel::Scan => 1 << 16,
            Kernel::Hst => 1 << 14,
            Kernel::Bs => 1 << 14,
            Kernel::Gemv => 512,
        }
    }

    pub fn source(self, variant: Variant) -> &'static str {
        match (self, variant) {
            (Kernel::Va, Variant::Scratchpad) => include_str!("asm/va.s"),
            (Kernel::Va, Variant::Cache) => include_str!("asm/va_cache.s"),
            (Kernel::Red, Variant::Scratchpad) => include_str!("asm/red.s"),
            (Kernel::Red, Variant::Cache) => include_str!("asm/red_cache.s"),
            (Kernel::Bs, Variant::Scratchpad) => include_str!("asm/bs.s"),
            (Kernel::Bs, Variant::Cache) => include_str!("asm/bs_cache.s"),
            (Kernel::Hst, Variant::Scratchpad) => include_str!("asm/hst.s"),
            (Kernel::Hst, Variant::Cache) => include_str!("asm/hst_cache.s"),
            (Kernel::Gemv, Variant::Scratchpad) => include_str!("asm/gemv.s"),
            (Kernel::Gemv, Variant::Cache) => include_str!("asm/gemv_cache.s"),
            (Kernel::Scan, Variant::Scratchpad) => include_str!("asm/scan.s"),
            (Kernel::Scan, Variant::Cache) => include_str!("asm/scan_cache.s"),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| KernelError::Unknown(s.into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Scratchpad,
    Cache,
}

impl Variant {
    pub fn for_config(cfg: &RunConfig) -> Self {
        if cfg.cache.enabled {
            Variant::Cache
        } else {
            Variant::Scratchpad
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unknown kernel `{0}` (expected one of VA, RED, BS, HST, GEMV, SCAN)")]
    Unknown(String),
    #[error("assembling {kernel}: {err}")]
    Asm { kernel: Kernel, err: AsmError },
    #[error("linking {kernel}: {err}")]
    Link { kernel: Kernel, err: LinkError },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("{0}")]
    Config(String),
}

/// First output element that differs from the reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub index: usize,
    pub expected: Option<u32>,
    pub got: Option<u32>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<u32>| v.map_or("<missing>".to_string(), |v| format!("{v:#010x}"));
        write!(f, "output {} is {}, expected {}", self.index, show(self.got), show(self.expected))
    }
}

pub fn first_mismatch(expected: &[u32], got: &[u32]) -> Option<Mismatch> {
    let n = expected.len().max(got.len());
    (0..n)
        .find(|&i| expected.get(i) != got.get(i))
        .map(|index| Mismatch { index, expected: expected.get(index).copied(), got: got.get(index).copied() })
}

/// Inputs of one kernel run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Dataset {
    Va { a: Vec<u32>, b: Vec<u32> },
    Red { a: Vec<u32> },
    Bs { keys: Vec<u32>, queries: Vec<u32> },
    Hst { a: Vec<u32> },
    /// Row-major `rows × k` matrix.
    Gemv { rows: usize, k: usize, a: Vec<u32>, x: Vec<u32> },
    Scan { a: Vec<u32> },
}

pub const GEMV_COLS: usize = 64;

impl Dataset {
    pub fn kernel(&self) -> Kernel {
        match self {
            Dataset::Va { .. } => Kernel::Va,
            Dataset::Red { .. } => Kernel::Red,
            Dataset::Bs { .. } => Kernel::Bs,
            Dataset::Hst { .. } => Kernel::Hst,
            Dataset::Gemv { .. } => Kernel::Gemv,
            Dataset::Scan { .. } => Kernel::Scan,
        }
    }

    /// Deterministic inputs for `kernel` with `scale` elements (keys for BS,
    /// rows for GEMV).
    pub fn generate(kernel: Kernel, scale: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kernel as u64) << 56);
        let mut words = |n: usize| -> Vec<u32> { (0..n).map(|_| rng.gen()).collect() };
        match kernel {
            Kernel::Va => {
                let a = words(scale);
                Dataset::Va { a, b: words(scale) }
            }
            Kernel::Red => Dataset::Red { a: words(scale) },
            Kernel::Hst => Dataset::Hst { a: words(scale) },
            Kernel::Scan => Dataset::Scan { a: words(scale) },
            Kernel::Gemv => {
                let k = GEMV_COLS;
                Dataset::Gemv { rows: scale, k, a: words(scale * k), x: words(k) }
            }
            Kernel::Bs => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb5);
                // Key i lies in [16i, 16i + 16), so keys are strictly increasing.
                let keys: Vec<u32> = (0..scale as u32).map(|i| 16 * i + rng.gen_range(0..16)).collect();
                let nq = (scale / 4).max(1);
                let queries = (0..nq)
                    .map(|_| {
                        if keys.is_empty() {
                            return rng.gen_range(0..1 << 20);
                        }
                        let j = rng.gen_range(0..keys.len());
                        if rng.gen_bool(0.5) {
                            keys[j]
                        } else {
                            let base = 16 * j as u32;
                            let off = (keys[j] - base + rng.gen_range(1..16)) % 16;
                            base + off
                        }
                    })
                    .collect();
                Dataset::Bs { keys, queries }
            }
        }
    }

    /// Host reference implementation.
    pub fn reference(&self) -> Vec<u32> {
        match self {
            Dataset::Va { a, b } => a.iter().zip(b).map(|(x, y)| x.wrapping_add(*y)).collect(),
            Dataset::Red { a } => vec![a.iter().fold(0u32, |s, v| s.wrapping_add(*v))],
            Dataset::Hst { a } => {
                let mut h = vec![0u32; 256];
                for v in a {
                    h[(v & 255) as usize] += 1;
                }
                h
            }
            Dataset::Scan { a } => a
                .iter()
                .scan(0u32, |s, v| {
                    *s = s.wrapping_add(*v);
                    Some(*s)
                })
                .collect(),
            Dataset::Gemv { rows, k, a, x } => (0..*rows)
                .map(|r| {
                    (0..*k).fold(0u32, |s, c| s.wrapping_add(a[r * k + c].wrapping_mul(x[c])))
                })
                .collect(),
            Dataset::Bs { keys, queries } => queries
                .iter()
                .map(|q| keys.binary_search(q).map_or(u32::MAX, |i| i as u32))
                .collect(),
        }
    }
}

/// Result of simulating one kernel on a DPU set.
#[derive(Clone, Debug)]
pub struct KernelRun {
    pub kernel: Kernel,
    pub variant: Variant,
    pub threads: usize,
    pub outputs: Vec<u32>,
    pub expected: Vec<u32>,
    pub mismatch: Option<Mismatch>,
    pub set: DpuSet,
    pub image_digest: String,
}

impl KernelRun {
    pub fn passed(&self) -> bool {
        self.mismatch.is_none()
    }

    /// Kernel cycles: the slowest DPU of every launch, summed over launches.
    pub fn kernel_cycles(&self) -> u64 {
        self.set
            .launches
            .iter()
            .map(|l| l.per_dpu.iter().map(|s| s.cycles).max().unwrap_or(0))
            .sum()
    }

    /// Kernel wall time in seconds.
    pub fn kernel_seconds(&self) -> f64 {
        self.set.phase_seconds(crate::system::PhaseKind::Kernel)
    }

    /// Bytes read from the DRAM banks of all DPUs (DMA, cache fills and page
    /// walks alike).
    pub fn dram_bytes_read(&self) -> u64 {
        self.set.launches.iter().flat_map(|l| &l.per_dpu).map(|s| s.mem.bank.bytes_read).sum()
    }
}

/// Generate inputs, run `kernel` on `dpus` DPUs with `threads` tasklets
/// each, and compare the outputs with the host reference.
pub fn run_and_check(
    kernel: Kernel,
    dpus: usize,
    threads: usize,
    cfg: &RunConfig,
    scale: usize,
    seed: u64,
) -> Result<KernelRun, KernelError> {
    run_dataset(&Dataset::generate(kernel, scale, seed), dpus, threads, cfg)
}

pub fn run_dataset(data: &Dataset, dpus: usize, threads: usize, cfg: &RunConfig) -> Result<KernelRun, KernelError> {
    cfg.validate().map_err(|e| KernelError::Config(e.to_string()))?;
    if dpus == 0 {
        return Err(KernelError::Config("at least one DPU is needed".into()));
    }
    if !(1..=24).contains(&threads) {
        return Err(KernelError::Config(format!("thread count {threads} outside 1..=24")));
    }
    let mut set = DpuSet::alloc(dpus, &cfg.dpu_config(), cfg.system.transfer);
    set.parallel = cfg.system.parallel;
    let variant = Variant::for_config(cfg);
    let mut ctx = Ctx { set: &mut set, threads, variant, map: cfg.map.clone(), kernel: data.kernel(), digest: String::new() };
    let outputs = match data {
        Dataset::Va { a, b } => ctx.va(a, b)?,
        Dataset::Red { a } => ctx.red(a)?,
        Dataset::Hst { a } => ctx.hst(a)?,
        Dataset::Scan { a } => ctx.scan(a)?,
        Dataset::Bs { keys, queries } => ctx.bs(keys, queries)?,
        Dataset::Gemv { rows, k, a, x } => ctx.gemv(*rows, *k, a, x)?,
    };
    let image_digest = std::mem::take(&mut ctx.digest);
    let expected = data.reference();
    Ok(KernelRun {
        kernel: data.kernel(),
        variant,
        threads,
        mismatch: first_mismatch(&expected, &outputs),
        outputs,
        expected,
        set,
        image_digest,
    })
}

/// Contiguous split of `n` items into `parts` ranges, larger ones first.
pub fn split(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let (q, r) = (n / parts, n % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = q + usize::from(i < r);
            let range = start..start + len;
            start += len;
            range
        })
        .collect()
}

fn to_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

fn from_bytes(bytes: &[u8]) -> Vec<u32> {
    bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn round_up(v: usize, a: usize) -> usize {
    v.div_ceil(a) * a
}

/// Words padded with zeros to `bytes`.
fn padded(words: &[u32], bytes: usize) -> Vec<u8> {
    let mut b = to_bytes(words);
    b.resize(bytes.max(b.len()), 0);
    b
}

/// Chunk size used by the cache variants: one cache line.
const CACHE_CHUNK: u32 = 64;

struct Ctx<'a> {
    set: &'a mut DpuSet,
    threads: usize,
    variant: Variant,
    map: AddressMap,
    kernel: Kernel,
    digest: String,
}

impl Ctx<'_> {
    /// Largest power-of-two chunk (8..=2048 bytes) such that `per_tasklet`
    /// chunks plus `extra` bytes per tasklet and `fixed` shared bytes fit the
    /// WRAM left after heap and stacks.
    fn chunk(&self, fixed: u32, per_tasklet: u32, extra: u32) -> Result<u32, KernelError> {
        let t = self.threads as u32;
        let cap = self.map.wram_size.saturating_sub(self.map.wram_reserved(t) + fixed + 64);
        let mut c = 2048;
        while (per_tasklet * c + extra) * t > cap {
            if c == 8 {
                return Err(KernelError::Config(format!("{} buffers do not fit WRAM with {t} tasklets", self.kernel)));
            }
            c /= 2;
        }
        Ok(c)
    }

    fn build(&mut self, vars: &[(&str, usize)]) -> Result<MemoryImage, KernelError> {
        let mut src = self.kernel.source(self.variant).to_string();
        for (k, v) in vars {
            src = src.replace(&format!("{{{{{k}}}}}"), &v.to_string());
        }
        let kernel = self.kernel;
        let name = format!("{}.s", kernel.name().to_lowercase());
        let obj = assemble(&src, &name).map_err(|err| KernelError::Asm { kernel, err })?;
        let relocations = match self.variant {
            Variant::Cache => vec!["wram.data".to_string()],
            Variant::Scratchpad => Vec::new(),
        };
        let opts = LinkOptions { allow_overflow: false, relocations, threads: self.threads as u32 };
        let img = link(&[obj], &self.map, &opts).map_err(|err| KernelError::Link { kernel, err })?;
        self.set.load(&img);
        self.digest = img.digest();
        Ok(img)
    }

    fn sym(img: &MemoryImage, name: &str) -> (RegionKind, u32) {
        DpuSet::symbol_offset(img, name).unwrap_or_else(|| panic!("bundled kernel lacks symbol `{name}`"))
    }

    fn put(&mut self, img: &MemoryImage, name: &str, bufs: Vec<Vec<u8>>) -> Result<(), KernelError> {
        let (region, off) = Self::sym(img, name);
        self.set.copy_to_dpus(&bufs, region, off, name)?;
        Ok(())
    }

    fn put_at(&mut self, addr: u32, bufs: Vec<Vec<u8>>, label: &str) -> Result<(), KernelError> {
        self.set.copy_to_dpus(&bufs, RegionKind::Mram, addr - AddressMap::MRAM_BASE, label)?;
        Ok(())
    }

    fn get(&mut self, region: RegionKind, off: u32, bytes: usize, label: &str) -> Result<Vec<Vec<u32>>, KernelError> {
        let (data, _) = self.set.copy_from_dpus(region, off, bytes, label)?;
        Ok(data.iter().map(|d| from_bytes(d)).collect())
    }

    fn launch(&mut self, label: &str) -> Result<(), KernelError> {
        self.set.launch(self.threads, label)?;
        Ok(())
    }

    /// Collect per-DPU outputs, keeping `lens[d]` words from DPU `d`.
    fn gather(parts: Vec<Vec<u32>>, lens: impl Iterator<Item = usize>) -> Vec<u32> {
        parts.into_iter().zip(lens).flat_map(|(p, n)| p.into_iter().take(n)).collect()
    }

    fn slices<'d>(&self, v: &'d [u32]) -> Vec<&'d [u32]> {
        split(v.len(), self.set.len()).into_iter().map(|r| &v[r]).collect()
    }

    fn va(&mut self, a: &[u32], b: &[u32]) -> Result<Vec<u32>, KernelError> {
        let (pa, pb) = (self.slices(a), self.slices(b));
        let maxn = pa.iter().map(|s| s.len()).max().unwrap_or(0);
        let lens = || pa.iter().map(|s| s.len());
        match self.variant {
            Variant::Scratchpad => {
                let chunk = self.chunk(16, 2, 0)? as usize;
                let img = self.build(&[("CHUNK", chunk), ("BUFS", 2 * chunk * self.threads)])?;
                let bytes = round_up(maxn * 4, chunk).max(chunk);
                let mut heap = MramHeap::new(&img);
                let (aa, ab, ac) = (heap.alloc(bytes), heap.alloc(bytes), heap.alloc(bytes));
                self.put_at(aa, pa.iter().map(|s| padded(s, bytes)).collect(), "a")?;
                self.put_at(ab, pb.iter().map(|s| padded(s, bytes)).collect(), "b")?;
                let args = lens().map(|n| to_bytes(&[n as u32, aa, ab, ac])).collect();
                self.put(&img, "args", args)?;
                self.launch("va")?;
                let out = self.get(RegionKind::Mram, ac - AddressMap::MRAM_BASE, maxn * 4, "c")?;
                Ok(Self::gather(out, lens()))
            }
            Variant::Cache => {
                let bytes = round_up(maxn * 4, 8).max(8);
                let img = self.build(&[("CHUNK", CACHE_CHUNK as usize), ("BYTES", bytes)])?;
                self.put(&img, "a", pa.iter().map(|s| to_bytes(s)).collect())?;
                self.put(&img, "b", pb.iter().map(|s| to_bytes(s)).collect())?;
                self.put(&img, "args", lens().map(|n| to_bytes(&[n as u32])).collect())?;
                self.launch("va")?;
                let (r, off) = Self::sym(&img, "c");
                let out = self.get(r, off, maxn * 4, "c")?;
                Ok(Self::gather(out, lens()))
            }
        }
    }

    /// Shared driver of RED and HST: both read one array and leave their
    /// result in a WRAM symbol.
    fn fold(&mut self, a: &[u32], fixed: u32, result: &str, words: usize, label: &str) -> Result<Vec<Vec<u32>>, KernelError> {
        let pa = self.slices(a);
        let maxn = pa.iter().map(|s| s.len()).max().unwrap_or(0);
        let img = match self.variant {
            Variant::Scratchpad => {
                let chunk = self.chunk(fixed, 1, 0)? as usize;
                let img = self.build(&[("CHUNK", chunk), ("BUFS", chunk * self.threads)])?;
                let bytes = round_up(maxn * 4, chunk).max(chunk);
                let aa = MramHeap::new(&img).alloc(bytes);
                self.put_at(aa, pa.iter().map(|s| padded(s, bytes)).collect(), "a")?;
                self.put(&img, "args", pa.iter().map(|s| to_bytes(&[s.len() as u32, aa])).collect())?;
                img
            }
            Variant::Cache => {
                let bytes = round_up(maxn * 4, 8).max(8);
                let img = self.build(&[("CHUNK", CACHE_CHUNK as usize), ("BYTES", bytes)])?;
                self.put(&img, "a", pa.iter().map(|s| to_bytes(s)).collect())?;
                self.put(&img, "args", pa.iter().map(|s| to_bytes(&[s.len() as u32])).collect())?;
                img
            }
        };
        self.launch(label)?;
        let (r, off) = Self::sym(&img, result);
        self.get(r, off, words * 4, result)
    }

    fn red(&mut self, a: &[u32]) -> Result<Vec<u32>, KernelError> {
        let parts = self.fold(a, 16, "total", 1, "red")?;
        Ok(vec![parts.iter().fold(0u32, |s, p| s.wrapping_add(p[0]))])
    }

    fn hst(&mut self, a: &[u32]) -> Result<Vec<u32>, KernelError> {
        let parts = self.fold(a, 1032, "hist", 256, "hst")?;
        let mut h = vec![0u32; 256];
        for p in parts {
            for (x, y) in h.iter_mut().zip(p) {
                *x = x.wrapping_add(y);
            }
        }
        Ok(h)
    }

    fn bs(&mut self, keys: &[u32], queries: &[u32]) -> Result<Vec<u32>, KernelError> {
        let pq = self.slices(queries);
        let maxq = pq.iter().map(|s| s.len()).max().unwrap_or(0);
        let lens = || pq.iter().map(|s| s.len());
        let kbytes = round_up(keys.len() * 4, 8).max(8);
        let nkeys = keys.len() as u32;
        match self.variant {
            Variant::Scratchpad => {
                let chunk = self.chunk(24, 2, 8)? as usize;
                let img = self.build(&[("CHUNK", chunk), ("BUFS", (2 * chunk + 8) * self.threads)])?;
                let qbytes = round_up(maxq * 4, chunk).max(chunk);
                let mut heap = MramHeap::new(&img);
                let (ak, aq, ar) = (heap.alloc(kbytes), heap.alloc(qbytes), heap.alloc(qbytes));
                self.set.broadcast(&padded(keys, kbytes), RegionKind::Mram, ak - AddressMap::MRAM_BASE, "keys")?;
                self.put_at(aq, pq.iter().map(|s| padded(s, qbytes)).collect(), "queries")?;
                let args = lens().map(|n| to_bytes(&[nkeys, ak, n as u32, aq, ar])).collect();
                self.put(&img, "args", args)?;
                self.launch("bs")?;
                let out = self.get(RegionKind::Mram, ar - AddressMap::MRAM_BASE, maxq * 4, "results")?;
                Ok(Self::gather(out, lens()))
            }
            Variant::Cache => {
                let qbytes = round_up(maxq * 4, 8).max(8);
                let img = self.build(&[("CHUNK", CACHE_CHUNK as usize), ("KBYTES", kbytes), ("QBYTES", qbytes)])?;
                let (r, off) = Self::sym(&img, "keys");
                self.set.broadcast(&to_bytes(keys), r, off, "keys")?;
                self.put(&img, "queries", pq.iter().map(|s| to_bytes(s)).collect())?;
                self.put(&img, "args", lens().map(|n| to_bytes(&[nkeys, n as u32])).collect())?;
                self.launch("bs")?;
                let (r, off) = Self::sym(&img, "results");
                let out = self.get(r, off, maxq * 4, "results")?;
                Ok(Self::gather(out, lens()))
            }
        }
    }

    fn gemv(&mut self, rows: usize, k: usize, a: &[u32], x: &[u32]) -> Result<Vec<u32>, KernelError> {
        let parts = split(rows, self.set.len());
        let maxr = round_up(parts.iter().map(|r| r.len()).max().unwrap_or(0), 2);
        let xbytes = round_up(k * 4, 8).max(8);
        // Column-major block of each DPU, padded to `maxr` rows.
        let at: Vec<Vec<u8>> = parts
            .iter()
            .map(|r| {
                let mut m = vec![0u32; k * maxr];
                for (i, row) in r.clone().enumerate() {
                    for c in 0..k {
                        m[c * maxr + i] = a[row * k + c];
                    }
                }
                to_bytes(&m)
            })
            .collect();
        let lens = || parts.iter().map(|r| r.len());
        let abytes = (k * maxr * 4).max(8);
        let ybytes = (maxr * 4).max(8);
        match self.variant {
            Variant::Scratchpad => {
                let img = self.build(&[("XBYTES", xbytes), ("BUFS", 16 * self.threads)])?;
                let mut heap = MramHeap::new(&img);
                let (aa, ay) = (heap.alloc(abytes), heap.alloc(ybytes));
                self.put_at(aa, at, "a")?;
                self.set.broadcast(&to_bytes(x), RegionKind::Wram, Self::sym(&img, "xvec").1, "x")?;
                let args = (0..self.set.len()).map(|_| to_bytes(&[maxr as u32, k as u32, aa, ay])).collect();
                self.put(&img, "args", args)?;
                self.launch("gemv")?;
                let out = self.get(RegionKind::Mram, ay - AddressMap::MRAM_BASE, maxr * 4, "y")?;
                Ok(Self::gather(out, lens()))
            }
            Variant::Cache => {
                let img = self.build(&[("XBYTES", xbytes), ("ABYTES", abytes), ("YBYTES", ybytes)])?;
                self.put(&img, "at", at)?;
                self.set.broadcast(&to_bytes(x), RegionKind::Wram, Self::sym(&img, "xvec").1, "x")?;
                let args = (0..self.set.len()).map(|_| to_bytes(&[maxr as u32, k as u32])).collect();
                self.put(&img, "args", args)?;
                self.launch("gemv")?;
                let (r, off) = Self::sym(&img, "y");
                let out = self.get(r, off, maxr * 4, "y")?;
                Ok(Self::gather(out, lens()))
            }
        }
    }

    fn scan(&mut self, a: &[u32]) -> Result<Vec<u32>, KernelError> {
        let pa = self.slices(a);
        let maxn = pa.iter().map(|s| s.len()).max().unwrap_or(0);
        let lens = || pa.iter().map(|s| s.len());
        let t = self.threads;
        let (img, out_addr) = match self.variant {
            Variant::Scratchpad => {
                let chunk = self.chunk(216, 1, 0)? as usize;
                let img = self.build(&[("CHUNK", chunk), ("BUFS", chunk * t)])?;
                let bytes = round_up(maxn * 4, chunk).max(chunk);
                let mut heap = MramHeap::new(&img);
                let (aa, ab) = (heap.alloc(bytes), heap.alloc(bytes));
                self.put_at(aa, pa.iter().map(|s| padded(s, bytes)).collect(), "a")?;
                let args = pa
                    .iter()
                    .map(|s| {
                        let block = (s.len() * 4).div_ceil(chunk).div_ceil(t) * chunk;
                        to_bytes(&[s.len() as u32, aa, ab, block as u32])
                    })
                    .collect();
                self.put(&img, "args", args)?;
                (img, (RegionKind::Mram, ab - AddressMap::MRAM_BASE))
            }
            Variant::Cache => {
                let bytes = round_up(maxn * 4, 8).max(8);
                let img = self.build(&[("BYTES", bytes)])?;
                self.put(&img, "a", pa.iter().map(|s| to_bytes(s)).collect())?;
                let line = CACHE_CHUNK as usize;
                let args = pa
                    .iter()
                    .map(|s| to_bytes(&[s.len() as u32, ((s.len() * 4).div_ceil(line * t) * line) as u32]))
                    .collect();
                self.put(&img, "args", args)?;
                let b = Self::sym(&img, "b");
                (img, b)
            }
        };
        self.launch("scan-sums")?;
        let sums = Self::sym(&img, "sums");
        let ctl = Self::sym(&img, "ctl");
        self.set.relay(
            (sums.0, sums.1, t * 4),
            ctl,
            |parts| {
                let mut run = 0u32;
                parts
                    .iter()
                    .map(|p| {
                        let mut bases = vec![0u32; 25];
                        for (i, s) in from_bytes(p).into_iter().enumerate() {
                            bases[i] = run;
                            run = run.wrapping_add(s);
                        }
                        bases[24] = 1;
                        to_bytes(&bases)
                    })
                    .collect()
            },
            "scan-offsets",
        )?;
        self.launch("scan-apply")?;
        let out = self.get(out_addr.0, out_addr.1, maxn * 4, "b")?;
        Ok(Self::gather(out, lens()))
    }
}

/// Bump allocator over the MRAM left free by the image.
struct MramHeap {
    next: u32,
}

impl MramHeap {
    fn new(img: &MemoryImage) -> Self {
        MramHeap { next: img.symbol("__mram_heap").expect("linker defines __mram_heap") }
    }

    /// Flat MRAM address of a fresh 1 KB-aligned buffer.
    fn alloc(&mut self, bytes: usize) -> u32 {
        let a = self.next;
        self.next = (a + bytes as u32).div_ceil(1024) * 1024;
        a
    }
}

#[cfg(test)]
mod tests;
