//! Memory hierarchy of one DPU: WRAM port, the MRAM bank with FR-FCFS
//! scheduling, the DMA engine between them, and the optional translation and
//! cache layers that sit in front of the bank.

pub mod clock;
pub mod dma;
pub mod dram;
pub mod sparse;
mod wram;

pub use clock::ClockDomains;
pub use dma::{split_rows, DmaEngine, DmaPort, DmaRequest, WramSegment};
pub use dram::{fr_fcfs_pick, BankCounters, BankState, Direction, DramTiming, MemoryTransaction, RowState};
pub use sparse::SparseMemory;
pub use wram::WramPort;

use crate::cache::{Access, Cache, CacheConfig, CacheCounters};
use crate::frontend::{AddressMap, MemoryImage, RegionKind};
use crate::vm::{self, FaultRecord, FaultStatus, HostFaultService, MmuConfig, Prefault, Tlb};
use dma::{ActiveJob, Chunk};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemConfig {
    pub map: AddressMap,
    pub timing: DramTiming,
    pub clock: ClockDomains,
    pub dma: DmaPort,
    pub wram_bytes_per_cycle: u32,
    pub mmu: MmuConfig,
    pub cache: CacheConfig,
}

impl Default for MemConfig {
    fn default() -> Self {
        MemConfig {
            map: AddressMap::default(),
            timing: DramTiming::default(),
            clock: ClockDomains::default(),
            dma: DmaPort::default(),
            wram_bytes_per_cycle: 4,
            mmu: MmuConfig::default(),
            cache: CacheConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MemFault {
    #[error("{region} access out of bounds at {addr:#x} ({len} bytes)")]
    Bounds { region: RegionKind, addr: u32, len: u32 },
    #[error("misaligned {len}-byte access at {addr:#x}")]
    Misaligned { addr: u32, len: u32 },
}

/// Tasklets released by the memory system at cycle `at`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Wake {
    pub tasklets: Vec<usize>,
    pub at: u64,
    pub fault: Option<String>,
}

/// Result of a cached load, store or fetch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    /// The requester sleeps until a [`Wake`] names it. Accesses that find no
    /// free miss resources are retried internally and also report `Wait`.
    Wait,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Client {
    Dma { job: u64, chunk: usize },
    Fill { line: u32 },
    Write { addr: u32, size: u32 },
}

#[derive(Clone, Copy, Debug)]
enum Owner {
    DmaRead { job: u64, chunk: usize },
    DmaWrite { job: u64, chunk: usize },
    Walk,
    Fill { icache: bool, line: u32 },
    Write,
}

#[derive(Clone, Debug)]
struct Translator {
    enabled: bool,
    tlb: Tlb,
    latency: u64,
    queue: VecDeque<(Client, u32)>,
    free_at: u64,
    walk: Option<(Client, u32)>,
    parked: Vec<(usize, Client, u32)>,
    host: HostFaultService,
    walks: u64,
    translations: u64,
    faults: Vec<FaultRecord>,
}

/// Counters exported to statistics.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemCounters {
    pub dma_bytes_read: u64,
    pub dma_bytes_written: u64,
    pub dma_jobs: u64,
    pub wram_bytes: u64,
    pub wram_accesses: u64,
    pub bank: BankCounters,
    pub tlb_hits: u64,
    pub tlb_misses: u64,
    pub page_walks: u64,
    pub translations: u64,
    pub page_faults: u64,
    pub dcache: CacheCounters,
    pub icache: CacheCounters,
    /// 64 B per line fill and per dirty eviction, over both caches.
    pub cache_bytes_read: u64,
}

/// Memory state and timing of one DPU.
#[derive(Clone, Debug)]
pub struct MemSystem {
    pub cfg: MemConfig,
    pub wram: Vec<u8>,
    pub mram: SparseMemory,
    pub bank: BankState,
    pub dma: DmaEngine,
    pub port: WramPort,
    pub dcache: Option<Cache>,
    pub icache: Option<Cache>,
    trans: Translator,
    owners: BTreeMap<u64, Owner>,
    wakes: Vec<Wake>,
    icache_waiters: BTreeMap<u32, Vec<usize>>,
    retry: VecDeque<Retry>,
}

#[derive(Clone, Copy, Debug)]
struct Retry {
    icache: bool,
    addr: u32,
    write: bool,
    tasklet: usize,
}

impl MemSystem {
    pub fn new(cfg: MemConfig) -> Self {
        let clock = cfg.clock;
        let host = HostFaultService {
            mode: cfg.mmu.mode,
            handler_cycles: clock.micros_to_dpu(cfg.mmu.handler_latency_us),
            poll_period_cycles: clock.micros_to_dpu(cfg.mmu.poll_period_us),
        };
        let cache = |on: bool, g| on.then(|| Cache::new(g, cfg.cache.write_policy, cfg.cache.mshrs));
        MemSystem {
            wram: vec![0; cfg.map.wram_size as usize],
            mram: SparseMemory::new(cfg.map.mram_size as usize),
            bank: BankState::new(cfg.timing),
            dma: DmaEngine::default(),
            port: WramPort::new(cfg.wram_bytes_per_cycle),
            dcache: cache(cfg.cache.enabled, cfg.cache.dcache),
            icache: cache(cfg.cache.enabled && cfg.cache.icache_enabled, cfg.cache.icache),
            trans: Translator {
                enabled: cfg.mmu.enabled,
                tlb: Tlb::new(cfg.mmu.tlb_entries),
                latency: cfg.mmu.tlb_latency,
                queue: VecDeque::new(),
                free_at: 0,
                walk: None,
                parked: Vec::new(),
                host,
                walks: 0,
                translations: 0,
                faults: Vec::new(),
            },
            owners: BTreeMap::new(),
            wakes: Vec::new(),
            icache_waiters: BTreeMap::new(),
            retry: VecDeque::new(),
            cfg,
        }
    }

    pub fn clock(&self) -> ClockDomains {
        self.cfg.clock
    }

    fn pt_offset(&self) -> u32 {
        self.cfg.map.page_table_base() - AddressMap::MRAM_BASE
    }

    fn user_limit(&self) -> u32 {
        self.cfg.map.mram_user_limit() - AddressMap::MRAM_BASE
    }

    /// Copy the image's WRAM and MRAM payloads in, mirror IRAM into MRAM for
    /// instruction-cache fills, and build the page table when translation is on.
    pub fn load_image(&mut self, image: &MemoryImage) {
        if let Some(w) = image.region(RegionKind::Wram) {
            let o = (w.base - AddressMap::WRAM_BASE) as usize;
            self.wram[o..o + w.bytes.len()].copy_from_slice(&w.bytes);
        }
        if let Some(m) = image.region(RegionKind::Mram) {
            self.mram.write((m.base - AddressMap::MRAM_BASE) as usize, &m.bytes);
        }
        let mirror = (self.cfg.map.text_mirror_base() - AddressMap::MRAM_BASE) as usize;
        self.mram.write(mirror, image.iram());
        if self.trans.enabled && self.cfg.mmu.prefault == Prefault::All {
            let pt = self.pt_offset() as usize;
            for vpn in 0..self.user_limit() >> vm::PAGE_SHIFT {
                self.mram.write_u64(pt + vpn as usize * 8, vm::pte_encode(vpn, true));
            }
        }
    }

    /// Mark one page invalid in the page table (used to exercise the fault path).
    pub fn unmap_page(&mut self, vpn: u32) {
        let pt = self.pt_offset() as usize;
        self.mram.write_u64(pt + vpn as usize * 8, vm::pte_encode(vpn, false));
    }

    // ---- functional accessors -------------------------------------------------

    pub fn wram_offset(&self, addr: u32, len: u32) -> Result<usize, MemFault> {
        if !self.cfg.map.contains(RegionKind::Wram, addr, len) {
            return Err(MemFault::Bounds { region: RegionKind::Wram, addr, len });
        }
        Ok((addr - AddressMap::WRAM_BASE) as usize)
    }

    pub fn mram_offset(&self, addr: u32, len: u32) -> Result<u32, MemFault> {
        if !self.cfg.map.contains(RegionKind::Mram, addr, len) {
            return Err(MemFault::Bounds { region: RegionKind::Mram, addr, len });
        }
        Ok(addr - AddressMap::MRAM_BASE)
    }

    pub fn read_wram(&self, offset: usize, len: usize) -> &[u8] {
        &self.wram[offset..offset + len]
    }

    pub fn write_wram(&mut self, offset: usize, data: &[u8]) {
        self.wram[offset..offset + data.len()].copy_from_slice(data);
    }

    pub fn read_mram(&self, offset: u32, len: u32) -> Result<Vec<u8>, MemFault> {
        if !self.mram.in_bounds(offset as usize, len as usize) {
            return Err(MemFault::Bounds { region: RegionKind::Mram, addr: offset, len });
        }
        Ok(self.mram.read_vec(offset as usize, len as usize))
    }

    pub fn write_mram(&mut self, offset: u32, data: &[u8]) -> Result<(), MemFault> {
        if !self.mram.in_bounds(offset as usize, data.len()) {
            return Err(MemFault::Bounds { region: RegionKind::Mram, addr: offset, len: data.len() as u32 });
        }
        self.mram.write(offset as usize, data);
        Ok(())
    }

    // ---- timing interface -----------------------------------------------------

    /// Queue a DMA job. Addresses are validated up front.
    pub fn submit_dma(&mut self, req: DmaRequest, now: u64) -> Result<(), MemFault> {
        let len = req.bytes();
        if !self.mram.in_bounds(req.mram as usize, len as usize) {
            return Err(MemFault::Bounds { region: RegionKind::Mram, addr: req.mram, len });
        }
        for s in &req.segments {
            if (s.offset + s.len) as usize > self.wram.len() {
                return Err(MemFault::Bounds {
                    region: RegionKind::Wram,
                    addr: AddressMap::WRAM_BASE + s.offset,
                    len: s.len,
                });
            }
        }
        self.dma.queue.push_back(req);
        if self.dma.active.is_none() {
            self.start_job(now);
        }
        Ok(())
    }

    /// Data-cache access for a load or store to MRAM-backed space.
    pub fn data_access(&mut self, offset: u32, write: bool, tasklet: usize, now: u64) -> CacheOutcome {
        if self.dcache.is_none() {
            return CacheOutcome::Hit;
        }
        if write && cache_write_through(self) {
            self.translate(Client::Write { addr: offset & !7, size: 8 }, offset & !7, now);
        }
        match self.try_data(offset, write, tasklet, now) {
            Some(o) => o,
            None => {
                self.retry.push_back(Retry { icache: false, addr: offset, write, tasklet });
                CacheOutcome::Wait
            }
        }
    }

    fn try_data(&mut self, offset: u32, write: bool, tasklet: usize, now: u64) -> Option<CacheOutcome> {
        let cache = self.dcache.as_mut()?;
        match cache.access(offset, write, tasklet as u64) {
            Access::Hit => Some(CacheOutcome::Hit),
            Access::Merged => Some(CacheOutcome::Wait),
            Access::Stall => None,
            Access::Miss { line_addr, writeback } => {
                let line = cache.geometry.line;
                if let Some(wb) = writeback {
                    self.translate(Client::Write { addr: wb, size: line }, wb, now);
                }
                self.translate(Client::Fill { line: line_addr }, line_addr, now);
                Some(CacheOutcome::Wait)
            }
        }
    }

    /// Instruction fetch through the instruction cache (IRAM offset).
    pub fn fetch(&mut self, iram_offset: u32, tasklet: usize, now: u64) -> CacheOutcome {
        if self.icache.is_none() {
            return CacheOutcome::Hit;
        }
        let mirror = self.cfg.map.text_mirror_base() - AddressMap::MRAM_BASE;
        match self.try_fetch(mirror + iram_offset, tasklet, now) {
            Some(o) => o,
            None => {
                self.retry.push_back(Retry { icache: true, addr: mirror + iram_offset, write: false, tasklet });
                CacheOutcome::Wait
            }
        }
    }

    fn try_fetch(&mut self, addr: u32, tasklet: usize, now: u64) -> Option<CacheOutcome> {
        let cache = self.icache.as_mut()?;
        let line = cache.line_addr(addr);
        match cache.access(addr, false, tasklet as u64) {
            Access::Hit => Some(CacheOutcome::Hit),
            Access::Stall => None,
            Access::Merged => Some(CacheOutcome::Wait),
            Access::Miss { .. } => {
                let size = cache.geometry.line;
                let id = self.bank.enqueue(line, size, Direction::Read, self.cfg.clock.dpu_to_dram(now));
                self.owners.insert(id, Owner::Fill { icache: true, line });
                self.icache_waiters.entry(line).or_default();
                Some(CacheOutcome::Wait)
            }
        }
    }

    fn run_retries(&mut self, now: u64) {
        for _ in 0..self.retry.len() {
            let r = self.retry.pop_front().expect("counted");
            let out = if r.icache {
                self.try_fetch(r.addr, r.tasklet, now)
            } else {
                self.try_data(r.addr, r.write, r.tasklet, now)
            };
            match out {
                None => self.retry.push_back(r),
                Some(CacheOutcome::Hit) => self.wakes.push(Wake { tasklets: vec![r.tasklet], at: now, fault: None }),
                Some(CacheOutcome::Wait) => {}
            }
        }
    }

    /// Drop all timing state (queues, caches, TLB, counters) but keep memory
    /// contents. Used between kernel launches.
    pub fn reset_timing(&mut self) {
        let mut fresh = MemSystem::new(self.cfg.clone());
        std::mem::swap(&mut fresh.wram, &mut self.wram);
        std::mem::swap(&mut fresh.mram, &mut self.mram);
        *self = fresh;
    }

    fn translate(&mut self, client: Client, vaddr: u32, now: u64) {
        self.trans.translations += 1;
        if self.trans.enabled {
            self.trans.queue.push_back((client, vaddr));
        } else {
            self.dispatch(client, vaddr, now);
        }
    }

    /// A translation for `client` is available at cycle `ready`.
    fn dispatch(&mut self, client: Client, paddr: u32, ready: u64) {
        let arrival = self.cfg.clock.dpu_to_dram(ready);
        match client {
            Client::Dma { job, chunk } => {
                let Some(a) = self.dma.active.as_mut().filter(|a| a.id == job) else { return };
                let c = &mut a.chunks[chunk];
                c.paddr = Some(paddr);
                c.ready = Some(ready);
                if a.req.dir == Direction::Read {
                    let id = self.bank.enqueue(paddr, c.len, Direction::Read, arrival);
                    self.owners.insert(id, Owner::DmaRead { job, chunk });
                }
            }
            Client::Fill { line } => {
                let size = self.cfg.cache.dcache.line;
                let id = self.bank.enqueue(paddr, size, Direction::Read, arrival);
                self.owners.insert(id, Owner::Fill { icache: false, line });
            }
            Client::Write { size, .. } => {
                let id = self.bank.enqueue(paddr, size, Direction::Write, arrival);
                self.owners.insert(id, Owner::Write);
            }
        }
    }

    fn start_job(&mut self, now: u64) {
        let Some(req) = self.dma.queue.pop_front() else { return };
        let id = self.dma.next_id;
        self.dma.next_id += 1;
        let row = self.cfg.timing.row_bytes;
        let chunks: Vec<Chunk> = split_rows(req.mram, req.bytes(), row)
            .into_iter()
            .map(|(vaddr, len)| Chunk { vaddr, len, ..Default::default() })
            .collect();
        let n = chunks.len();
        let mut job = ActiveJob { id, req, start: now, chunks, complete_at: None, faulted: None };
        if job.req.dir == Direction::Write {
            let mut t = now;
            for c in &mut job.chunks {
                t += self.cfg.dma.drain_cycles(c.len, self.cfg.clock.dpu_mhz);
                c.drain_end = Some(t);
            }
        }
        self.dma.active = Some(job);
        for k in 0..n {
            let vaddr = self.dma.active.as_ref().unwrap().chunks[k].vaddr;
            self.translate(Client::Dma { job: id, chunk: k }, vaddr, now);
        }
    }

    /// Deliver everything that becomes visible at DPU cycle `now`. Must be
    /// called once per simulated cycle (or at every cycle reported by
    /// [`MemSystem::next_event`]) before the core issues.
    pub fn tick(&mut self, now: u64) {
        let clock = self.cfg.clock;
        let visible = now * clock.dram_mhz / clock.dpu_mhz;
        for txn in self.bank.take_completed(visible) {
            let done = clock.dram_to_dpu(txn.completion.expect("completed"));
            match self.owners.remove(&txn.id) {
                Some(Owner::DmaRead { job, chunk }) => {
                    if let Some(a) = self.dma.active.as_mut().filter(|a| a.id == job) {
                        a.chunks[chunk].data_done = Some(done);
                    }
                }
                Some(Owner::DmaWrite { job, chunk }) => {
                    if let Some(a) = self.dma.active.as_mut().filter(|a| a.id == job) {
                        a.chunks[chunk].write_done = Some(done);
                    }
                }
                Some(Owner::Walk) => self.walk_done(txn.addr, done),
                Some(Owner::Fill { icache, line }) => {
                    let cache = if icache { self.icache.as_mut() } else { self.dcache.as_mut() };
                    if let Some(c) = cache {
                        let waiters = c.complete_fill(line);
                        if icache {
                            self.icache_waiters.remove(&line);
                        }
                        let tasklets = waiters.into_iter().map(|w| w as usize).collect();
                        self.wakes.push(Wake { tasklets, at: done, fault: None });
                    }
                }
                Some(Owner::Write) | None => {}
            }
        }
        self.translator_step(now);
        self.progress_job(now);
        self.run_retries(now);
    }

    fn walk_done(&mut self, pte_addr: u32, done: u64) {
        let Some((client, vaddr)) = self.trans.walk.take() else { return };
        let pte = self.mram.read_u64(pte_addr as usize);
        self.trans.free_at = self.trans.free_at.max(done);
        match vm::pte_decode(pte) {
            Some(ppn) => {
                let vpn = vm::vpn_of(vaddr);
                self.trans.tlb.fill(vpn, ppn);
                let paddr = (ppn << vm::PAGE_SHIFT) | (vaddr & (vm::PAGE_BYTES - 1));
                self.dispatch(client, paddr, done + self.trans.latency);
            }
            None => {
                let tasklets = self.client_tasklets(client);
                let fatal = vaddr >= self.user_limit();
                let resume = self.trans.host.resume_cycle(done);
                self.trans.faults.push(FaultRecord {
                    vaddr,
                    tasklets: tasklets.clone(),
                    cycle: done,
                    status: if fatal { FaultStatus::Fatal } else { FaultStatus::Pending },
                    resume_at: (!fatal).then_some(resume),
                });
                if fatal {
                    let msg = format!("unmapped MRAM page at offset {vaddr:#x}");
                    self.abort_client(client, done, msg);
                } else {
                    self.trans.parked.push((self.trans.faults.len() - 1, client, vaddr));
                }
            }
        }
    }

    fn client_tasklets(&self, client: Client) -> Vec<usize> {
        match client {
            Client::Dma { job, .. } => self
                .dma
                .active
                .as_ref()
                .filter(|a| a.id == job)
                .map(|a| a.req.waiters.clone())
                .unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    fn abort_client(&mut self, client: Client, at: u64, msg: String) {
        match client {
            Client::Dma { job, .. } => {
                if let Some(a) = self.dma.active.as_mut().filter(|a| a.id == job) {
                    a.faulted = Some(msg);
                    a.complete_at = Some(at);
                }
            }
            Client::Fill { line } => {
                if let Some(c) = self.dcache.as_mut() {
                    let tasklets = c.complete_fill(line).into_iter().map(|w| w as usize).collect();
                    self.wakes.push(Wake { tasklets, at, fault: Some(msg) });
                }
            }
            Client::Write { .. } => {}
        }
    }

    fn translator_step(&mut self, now: u64) {
        if !self.trans.enabled {
            return;
        }
        // Serviced faults: install the mapping and retry the translation.
        let mut i = 0;
        while i < self.trans.parked.len() {
            let (f, client, vaddr) = self.trans.parked[i];
            let resume = self.trans.faults[f].resume_at.unwrap_or(u64::MAX);
            if resume <= now {
                let vpn = vm::vpn_of(vaddr);
                let pt = self.pt_offset() as usize;
                self.mram.write_u64(pt + vpn as usize * 8, vm::pte_encode(vpn, true));
                self.trans.faults[f].status = FaultStatus::Serviced;
                self.trans.parked.remove(i);
                self.trans.queue.push_front((client, vaddr));
            } else {
                i += 1;
            }
        }
        if self.trans.walk.is_some() || self.trans.free_at > now {
            return;
        }
        let Some((client, vaddr)) = self.trans.queue.pop_front() else { return };
        self.trans.free_at = now + 1;
        let vpn = vm::vpn_of(vaddr);
        match self.trans.tlb.lookup(vpn) {
            Some(ppn) => {
                let paddr = (ppn << vm::PAGE_SHIFT) | (vaddr & (vm::PAGE_BYTES - 1));
                self.dispatch(client, paddr, now + self.trans.latency);
            }
            None => {
                self.trans.walks += 1;
                self.trans.walk = Some((client, vaddr));
                let pte = self.pt_offset() + vpn * vm::PTE_BYTES;
                let arrival = self.cfg.clock.dpu_to_dram(now + self.trans.latency);
                let id = self.bank.enqueue(pte, vm::PTE_BYTES, Direction::Read, arrival);
                self.owners.insert(id, Owner::Walk);
            }
        }
    }

    fn progress_job(&mut self, now: u64) {
        loop {
            let Some(a) = self.dma.active.as_mut() else { return };
            if a.complete_at.is_none() {
                match a.req.dir {
                    Direction::Read => {
                        let mut prev = a.start;
                        let mut all = true;
                        for c in &mut a.chunks {
                            if c.drain_end.is_none() {
                                match c.data_done {
                                    Some(d) => {
                                        let dur = self.cfg.dma.drain_cycles(c.len, self.cfg.clock.dpu_mhz);
                                        c.drain_end = Some(d.max(prev) + dur);
                                    }
                                    None => {
                                        all = false;
                                        break;
                                    }
                                }
                            }
                            prev = c.drain_end.unwrap();
                        }
                        if all {
                            a.complete_at = Some(prev);
                        }
                    }
                    Direction::Write => {
                        let job = a.id;
                        let mut issue = Vec::new();
                        for (k, c) in a.chunks.iter_mut().enumerate() {
                            if let (false, Some(p), Some(r), Some(d)) = (c.write_issued, c.paddr, c.ready, c.drain_end) {
                                c.write_issued = true;
                                issue.push((k, p, c.len, r.max(d)));
                            }
                        }
                        for (k, p, len, t) in issue {
                            let id = self.bank.enqueue(p, len, Direction::Write, self.cfg.clock.dpu_to_dram(t));
                            self.owners.insert(id, Owner::DmaWrite { job, chunk: k });
                        }
                        let a = self.dma.active.as_mut().unwrap();
                        if a.chunks.iter().all(|c| c.write_done.is_some()) {
                            a.complete_at = a.chunks.iter().filter_map(|c| c.write_done).max();
                        }
                    }
                }
            }
            let a = self.dma.active.as_ref().unwrap();
            match a.complete_at {
                Some(t) if t <= now => {
                    let a = self.dma.active.take().unwrap();
                    self.finish_job(a, t);
                    self.start_job(now);
                }
                _ => return,
            }
        }
    }

    fn finish_job(&mut self, job: ActiveJob, at: u64) {
        let fault = job.faulted.clone();
        if fault.is_none() {
            let base = job.req.mram as usize;
            let mut o = 0usize;
            for s in &job.req.segments {
                let (w, n) = (s.offset as usize, s.len as usize);
                match job.req.dir {
                    Direction::Read => {
                        let mut buf = vec![0; n];
                        self.read_virtual(base + o, &mut buf);
                        self.wram[w..w + n].copy_from_slice(&buf);
                    }
                    Direction::Write => {
                        let buf = self.wram[w..w + n].to_vec();
                        self.write_virtual(base + o, &buf);
                    }
                }
                o += n;
            }
            let bytes = job.req.bytes() as u64;
            match job.req.dir {
                Direction::Read => self.dma.bytes_read += bytes,
                Direction::Write => self.dma.bytes_written += bytes,
            }
            self.dma.jobs += 1;
        }
        self.wakes.push(Wake { tasklets: job.req.waiters, at, fault });
    }

    /// Functional access through the page table (identity when translation is off).
    pub fn read_virtual(&self, vaddr: usize, out: &mut [u8]) {
        let mut done = 0;
        while done < out.len() {
            let v = vaddr + done;
            let n = (vm::PAGE_BYTES as usize - v % vm::PAGE_BYTES as usize).min(out.len() - done);
            let p = self.phys(v as u32) as usize;
            self.mram.read(p, &mut out[done..done + n]);
            done += n;
        }
    }

    pub fn write_virtual(&mut self, vaddr: usize, data: &[u8]) {
        let mut done = 0;
        while done < data.len() {
            let v = vaddr + done;
            let n = (vm::PAGE_BYTES as usize - v % vm::PAGE_BYTES as usize).min(data.len() - done);
            let p = self.phys(v as u32) as usize;
            self.mram.write(p, &data[done..done + n]);
            done += n;
        }
    }

    fn phys(&self, vaddr: u32) -> u32 {
        if !self.trans.enabled {
            return vaddr;
        }
        let vpn = vm::vpn_of(vaddr);
        let pte = self.mram.read_u64(self.pt_offset() as usize + vpn as usize * 8);
        match vm::pte_decode(pte) {
            Some(ppn) => (ppn << vm::PAGE_SHIFT) | (vaddr & (vm::PAGE_BYTES - 1)),
            None => vaddr,
        }
    }

    /// Schedule bank commands that fall before the start of cycle `now + 1`.
    pub fn advance(&mut self, now: u64) {
        let until = self.cfg.clock.dpu_to_dram(now + 1);
        self.bank.advance(until);
    }

    pub fn take_wakes(&mut self) -> Vec<Wake> {
        std::mem::take(&mut self.wakes)
    }

    pub fn is_idle(&self) -> bool {
        self.dma.is_idle()
            && self.bank.is_idle()
            && self.trans.queue.is_empty()
            && self.trans.walk.is_none()
            && self.trans.parked.is_empty()
            && self.retry.is_empty()
            && self.dcache.as_ref().is_none_or(|c| c.outstanding() == 0)
            && self.icache.as_ref().is_none_or(|c| c.outstanding() == 0)
    }

    /// Earliest DPU cycle after `now` at which memory state can change.
    pub fn next_event(&self, now: u64) -> Option<u64> {
        let clock = self.cfg.clock;
        let mut best: Option<u64> = None;
        let mut consider = |t: u64| {
            let t = t.max(now + 1);
            best = Some(best.map_or(t, |b: u64| b.min(t)));
        };
        if let Some(t) = self.bank.next_event() {
            consider(clock.dram_to_dpu(t).saturating_sub(1));
        }
        if let Some(a) = &self.dma.active {
            if let Some(t) = a.complete_at {
                consider(t);
            }
            if a.req.dir == Direction::Read {
                for c in &a.chunks {
                    if let Some(d) = c.data_done {
                        consider(d);
                    }
                }
            }
        }
        if !self.retry.is_empty() || (!self.dma.queue.is_empty() && self.dma.active.is_none()) {
            consider(now + 1);
        }
        if self.trans.enabled {
            if !self.trans.queue.is_empty() {
                consider(self.trans.free_at);
            }
            for &(f, _, _) in &self.trans.parked {
                if let Some(r) = self.trans.faults[f].resume_at {
                    consider(r);
                }
            }
        }
        best
    }

    pub fn faults(&self) -> &[FaultRecord] {
        &self.trans.faults
    }

    pub fn counters(&self) -> MemCounters {
        let dc = self.dcache.as_ref().map(|c| c.counters.clone()).unwrap_or_default();
        let ic = self.icache.as_ref().map(|c| c.counters.clone()).unwrap_or_default();
        let cache_bytes = self.dcache.as_ref().map_or(0, |c| c.bytes_read_counter())
            + self.icache.as_ref().map_or(0, |c| c.bytes_read_counter());
        MemCounters {
            dma_bytes_read: self.dma.bytes_read,
            dma_bytes_written: self.dma.bytes_written,
            dma_jobs: self.dma.jobs,
            wram_bytes: self.port.bytes,
            wram_accesses: self.port.accesses,
            bank: self.bank.counters.clone(),
            tlb_hits: self.trans.tlb.hits,
            tlb_misses: self.trans.tlb.misses,
            page_walks: self.trans.walks,
            translations: if self.trans.enabled { self.trans.translations } else { 0 },
            page_faults: self.trans.faults.len() as u64,
            dcache: dc,
            icache: ic,
            cache_bytes_read: cache_bytes,
        }
    }
}

fn cache_write_through(m: &MemSystem) -> bool {
    m.dcache.as_ref().is_some_and(|c| c.policy == crate::cache::WritePolicy::WriteThrough)
}
