//! Cycle-level DPU model: fine-grained multithreading over up to 24 tasklets,
//! a 14-stage in-order pipeline with revolver scheduling, the odd/even
//! register-file read hazard, functional execution, locks, and the optional
//! ILP (forwarding, unified RF, dual issue) and SIMT extensions.
//!
//! Every scheduling unit is a group of lanes. Scalar mode uses one lane per
//! group; SIMT mode groups `lanes` consecutive tasklets that issue together
//! at the lowest pc among them.

pub mod exec;

use crate::frontend::{AddressMap, MemoryImage, RegionKind};
use crate::isa::{self, Instruction, Opcode, Operand, Register, Shape, NUM_LOCKS, NUM_REGISTERS};
use crate::memsys::{CacheOutcome, DmaRequest, Direction, MemConfig, MemSystem, Wake, WramSegment};
use crate::stats::{CycleStats, IdleCause};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Most tasklets a DPU can boot.
pub const MAX_TASKLETS: usize = 24;

/// Block size used when counting coalesced WRAM transactions.
pub const COALESCE_BLOCK: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimtConfig {
    /// Lanes per group; 1 disables SIMT.
    pub lanes: usize,
    pub coalescing: bool,
}

impl Default for SimtConfig {
    fn default() -> Self {
        SimtConfig { lanes: 1, coalescing: false }
    }
}

impl SimtConfig {
    pub fn enabled(&self) -> bool {
        self.lanes > 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stages: u64,
    /// Minimum distance between two issues of one tasklet.
    pub revolver: u64,
    pub reg_read_stage: u64,
    pub issue_width: usize,
    /// Knob D: independent same-tasklet instructions may issue back to back.
    pub forwarding: bool,
    /// Issue distance for a dependent instruction (or after a redirect) when
    /// forwarding is on.
    pub forward_latency: u64,
    /// Knob R: no odd/even register-file read conflict.
    pub unified_rf: bool,
    pub simt: SimtConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: 14,
            revolver: 11,
            reg_read_stage: 3,
            issue_width: 1,
            forwarding: false,
            forward_latency: 5,
            unified_rf: false,
            simt: SimtConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.stages == 0 || self.revolver == 0 {
            return Err("pipeline stages and revolver spacing must be positive".into());
        }
        if !(1..=2).contains(&self.issue_width) {
            return Err(format!("issue width must be 1 or 2, got {}", self.issue_width));
        }
        if !self.forwarding && self.reg_read_stage + self.revolver < self.stages {
            return Err(format!(
                "register read stage {} + revolver spacing {} < writeback stage {} without forwarding",
                self.reg_read_stage, self.revolver, self.stages
            ));
        }
        if self.forwarding && self.forward_latency == 0 {
            return Err("forward latency must be positive".into());
        }
        if !matches!(self.simt.lanes, 1 | 2 | 4 | 8 | 16) {
            return Err(format!("SIMT lanes must be one of 1, 2, 4, 8, 16; got {}", self.simt.lanes));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpuConfig {
    pub pipeline: PipelineConfig,
    pub mem: MemConfig,
    pub max_cycles: u64,
    pub tlp_window: u64,
    /// Record one [`TraceEvent`] per issue.
    pub trace: bool,
}

impl Default for DpuConfig {
    fn default() -> Self {
        DpuConfig {
            pipeline: PipelineConfig::default(),
            mem: MemConfig::default(),
            max_cycles: 4_000_000_000,
            tlp_window: 10_000,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BootError {
    #[error("cannot boot {0} tasklets (allowed 1..={MAX_TASKLETS})")]
    Threads(usize),
    #[error("no program loaded")]
    NoProgram,
    #[error("image reserves stacks for {reserved} tasklets but {requested} were requested")]
    Stacks { reserved: usize, requested: usize },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("deadlock at cycle {0}: tasklets wait on nothing")]
    Deadlock(u64),
    #[error("cycle limit reached at cycle {0}")]
    CycleLimit(u64),
}

/// A tasklet-level fault. The tasklet halts; the others keep running.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("tasklet {tasklet} at pc {pc:#x}, cycle {cycle}: {reason}")]
pub struct SimFault {
    pub tasklet: usize,
    /// Absolute IRAM address.
    pub pc: u32,
    pub cycle: u64,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskletStatus {
    Active,
    Stopped,
    Faulted,
}

#[derive(Clone, Debug)]
pub struct Tasklet {
    pub id: usize,
    /// IRAM byte offset.
    pub pc: u32,
    pub regs: [u32; NUM_REGISTERS],
    pub status: TaskletStatus,
    /// Last attempt to acquire a lock failed.
    spin: bool,
}

#[derive(Clone, Debug)]
struct Group {
    lanes: Vec<usize>,
    next_issue: u64,
    /// Cycle the last WRAM batch finishes.
    mem_until: u64,
    /// Lanes still waiting on DMA, cache fills or translation.
    pending: usize,
    /// First cycle a parity-conflicting instruction may issue.
    rf_ready: Option<u64>,
    /// Forwarding mode: cycle each register's value becomes usable.
    reg_ready: [u64; NUM_REGISTERS],
}

/// One issue recorded when tracing is on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub group: usize,
    pub tasklets: Vec<usize>,
    /// Absolute IRAM address.
    pub pc: u32,
    pub text: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lanes: Vec<String> = self.tasklets.iter().map(|t| t.to_string()).collect();
        write!(f, "{} t{} {:#010x} {}", self.cycle, lanes.join(","), self.pc, self.text)
    }
}

/// What one lane asked of the memory system during an issue.
enum LaneMem {
    Wram { addr: u32 },
    Cache { offset: u32, write: bool },
}

/// A DPU with its memories.
#[derive(Clone, Debug)]
pub struct Dpu {
    pub cfg: DpuConfig,
    pub mem: MemSystem,
    program: Vec<Result<Instruction, String>>,
    entry: u32,
    stacks_base: u32,
    image_threads: usize,
    tasklets: Vec<Tasklet>,
    groups: Vec<Group>,
    group_of: Vec<usize>,
    locks: Vec<Option<usize>>,
    now: u64,
    rr: usize,
    last_retire: Option<u64>,
    halted: bool,
    pub stats: CycleStats,
    pub faults: Vec<SimFault>,
    pub trace: Vec<TraceEvent>,
}

impl Dpu {
    pub fn new(cfg: DpuConfig) -> Self {
        let stats = CycleStats::new(cfg.tlp_window, cfg.pipeline.issue_width as u64);
        Dpu {
            mem: MemSystem::new(cfg.mem.clone()),
            program: Vec::new(),
            entry: 0,
            stacks_base: AddressMap::WRAM_BASE,
            image_threads: MAX_TASKLETS,
            tasklets: Vec::new(),
            groups: Vec::new(),
            group_of: Vec::new(),
            locks: vec![None; NUM_LOCKS],
            now: 0,
            rr: 0,
            last_retire: None,
            halted: true,
            stats,
            faults: Vec::new(),
            trace: Vec::new(),
            cfg,
        }
    }

    /// Copy an image into the DPU's memories and decode its program.
    pub fn load(&mut self, image: &MemoryImage) {
        self.mem.load_image(image);
        self.program = image
            .iram()
            .chunks(isa::INSTRUCTION_BYTES as usize)
            .map(|c| {
                let word = isa::word_from_bytes(c);
                let instr = isa::decode(word).map_err(|e| e.to_string())?;
                isa::validate(&instr).map_err(|v| {
                    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
                })?;
                Ok(instr)
            })
            .collect();
        self.entry = image.entry.wrapping_sub(AddressMap::IRAM_BASE);
        let map = &self.cfg.mem.map;
        self.stacks_base = image
            .symbol("__stacks_base")
            .unwrap_or(AddressMap::WRAM_BASE + map.wram_size - map.stack_size * MAX_TASKLETS as u32);
        self.image_threads = image.threads as usize;
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn tasklet(&self, id: usize) -> &Tasklet {
        &self.tasklets[id]
    }

    pub fn tasklets(&self) -> &[Tasklet] {
        &self.tasklets
    }

    /// Holder of each lock bit.
    pub fn lock_holders(&self) -> &[Option<usize>] {
        &self.locks
    }

    /// Reset timing state and start `threads` tasklets at the entry point.
    /// Tasklet `t` starts with r0 = t, r1 = threads and r23 at the top of its
    /// stack.
    pub fn boot(&mut self, threads: usize) -> Result<(), BootError> {
        if threads == 0 || threads > MAX_TASKLETS {
            return Err(BootError::Threads(threads));
        }
        if self.program.is_empty() {
            return Err(BootError::NoProgram);
        }
        if threads > self.image_threads {
            return Err(BootError::Stacks { reserved: self.image_threads, requested: threads });
        }
        self.cfg.pipeline.validate().map_err(BootError::Config)?;
        self.mem.reset_timing();
        let stack = self.cfg.mem.map.stack_size;
        self.tasklets = (0..MAX_TASKLETS)
            .map(|t| {
                let mut regs = [0u32; NUM_REGISTERS];
                regs[0] = t as u32;
                regs[1] = threads as u32;
                regs[NUM_REGISTERS - 1] = self.stacks_base + (t as u32 + 1) * stack;
                Tasklet {
                    id: t,
                    pc: self.entry,
                    regs,
                    status: if t < threads { TaskletStatus::Active } else { TaskletStatus::Stopped },
                    spin: false,
                }
            })
            .collect();
        let lanes = self.cfg.pipeline.simt.lanes.max(1);
        self.groups = (0..threads)
            .collect::<Vec<_>>()
            .chunks(lanes)
            .map(|c| Group {
                lanes: c.to_vec(),
                next_issue: 0,
                mem_until: 0,
                pending: 0,
                rf_ready: None,
                reg_ready: [0; NUM_REGISTERS],
            })
            .collect();
        self.group_of = vec![usize::MAX; MAX_TASKLETS];
        for (g, grp) in self.groups.iter().enumerate() {
            for &l in &grp.lanes {
                self.group_of[l] = g;
            }
        }
        self.locks = vec![None; NUM_LOCKS];
        self.now = 0;
        self.rr = 0;
        self.last_retire = None;
        self.halted = false;
        self.stats = CycleStats::new(self.cfg.tlp_window, self.cfg.pipeline.issue_width as u64);
        self.faults.clear();
        self.trace.clear();
        Ok(())
    }

    /// Simulate until every tasklet has stopped and the pipeline drained.
    /// Returns the cycle count of the launch.
    pub fn run(&mut self) -> Result<u64, RunError> {
        while !self.halted {
            self.step()?;
        }
        Ok(self.stats.cycles)
    }

    /// Kernel wall time in seconds.
    pub fn seconds(&self) -> f64 {
        self.cfg.mem.clock.seconds(self.stats.cycles)
    }

    fn fault(&mut self, t: usize, reason: impl Into<String>) {
        let tk = &mut self.tasklets[t];
        if tk.status != TaskletStatus::Active {
            return;
        }
        tk.status = TaskletStatus::Faulted;
        self.faults.push(SimFault {
            tasklet: t,
            pc: AddressMap::IRAM_BASE + tk.pc,
            cycle: self.now,
            reason: reason.into(),
        });
    }

    fn deliver(&mut self, w: Wake) {
        for &t in &w.tasklets {
            let g = self.group_of[t];
            if g == usize::MAX {
                continue;
            }
            let grp = &mut self.groups[g];
            grp.pending = grp.pending.saturating_sub(1);
            grp.next_issue = grp.next_issue.max(w.at);
            if let Some(f) = &w.fault {
                self.fault(t, f.clone());
            }
        }
    }

    /// The pc a group issues next: the lowest pc among its active lanes,
    /// preferring lanes that are not spinning on a lock.
    fn elect(&self, g: usize) -> Option<u32> {
        let active = || {
            self.groups[g]
                .lanes
                .iter()
                .map(|&l| &self.tasklets[l])
                .filter(|t| t.status == TaskletStatus::Active)
        };
        active().filter(|t| !t.spin).map(|t| t.pc).min().or_else(|| active().map(|t| t.pc).min())
    }

    fn instruction(&self, pc: u32) -> Result<Instruction, String> {
        if !pc.is_multiple_of(isa::INSTRUCTION_BYTES) {
            return Err(format!("misaligned pc {:#x}", AddressMap::IRAM_BASE + pc));
        }
        match self.program.get((pc / isa::INSTRUCTION_BYTES) as usize) {
            Some(r) => r.clone().map_err(|e| format!("illegal instruction: {e}")),
            None => Err(format!("pc {:#x} outside the program", AddressMap::IRAM_BASE + pc)),
        }
    }

    /// Advance one DPU cycle, then skip ahead over cycles in which nothing
    /// can happen.
    pub fn step(&mut self) -> Result<(), RunError> {
        if self.halted {
            return Ok(());
        }
        let now = self.now;
        self.mem.tick(now);
        for w in self.mem.take_wakes() {
            self.deliver(w);
        }
        let any_active = self.tasklets.iter().any(|t| t.status == TaskletStatus::Active);
        if !any_active && self.last_retire.is_none_or(|r| now > r) {
            self.halted = true;
            self.stats.mem = self.mem.counters();
            return Ok(());
        }
        if now >= self.cfg.max_cycles {
            return Err(RunError::CycleLimit(now));
        }

        let p = self.cfg.pipeline.clone();
        let mut eligible: Vec<(usize, u32)> = Vec::new();
        let mut reasons = Vec::new();
        let mut earliest: Option<u64> = None;
        let wake_at = |t: u64, e: &mut Option<u64>| *e = Some(e.map_or(t, |x| x.min(t)));
        let mut tlp = 0usize;
        for g in 0..self.groups.len() {
            let Some(pc) = self.elect(g) else { continue };
            let grp = &self.groups[g];
            if grp.pending > 0 {
                reasons.push(IdleCause::Memory);
                continue;
            }
            if grp.mem_until > now {
                reasons.push(IdleCause::Memory);
                wake_at(grp.mem_until, &mut earliest);
                continue;
            }
            let instr = self.instruction(pc).ok();
            let mut ready = grp.next_issue;
            if p.forwarding {
                if let Some(i) = &instr {
                    for r in i.reads().iter() {
                        ready = ready.max(grp.reg_ready[r.index()]);
                    }
                }
            }
            if ready > now {
                reasons.push(IdleCause::Revolver);
                wake_at(ready, &mut earliest);
                continue;
            }
            if !p.unified_rf && instr.is_some_and(|i| i.has_parity_conflict()) {
                let grp = &mut self.groups[g];
                let t = *grp.rf_ready.get_or_insert(now + 1);
                if t > now {
                    reasons.push(IdleCause::Rf);
                    wake_at(t, &mut earliest);
                    continue;
                }
            }
            tlp += self.groups[g]
                .lanes
                .iter()
                .filter(|&&l| self.tasklets[l].status == TaskletStatus::Active && self.tasklets[l].pc == pc)
                .count();
            eligible.push((g, pc));
        }

        let n = self.groups.len();
        eligible.sort_by_key(|&(g, _)| (g + n - self.rr % n.max(1)) % n.max(1));
        let mut issued = 0usize;
        let mut wram_used = false;
        let mut dma_used = false;
        for &(g, pc) in &eligible {
            if issued == p.issue_width {
                break;
            }
            if self.mem.icache.is_some() {
                let lane = self.groups[g].lanes.iter().copied().find(|&l| {
                    self.tasklets[l].status == TaskletStatus::Active && self.tasklets[l].pc == pc
                });
                let lane = lane.expect("elected pc has a lane");
                if self.mem.fetch(pc, lane, now) == CacheOutcome::Wait {
                    self.groups[g].pending += 1;
                    continue;
                }
            }
            if self.try_issue(g, pc, now, &mut wram_used, &mut dma_used) {
                issued += 1;
                self.rr = g + 1;
            }
        }

        // The cause only counts when nothing issued; an eligible tasklet that
        // could not issue lost its slot to a memory port.
        let cause = if issued > 0 || !eligible.is_empty() {
            IdleCause::Memory
        } else if reasons.is_empty() {
            // Nothing left to issue: the pipeline is draining.
            IdleCause::Revolver
        } else {
            IdleCause::classify(reasons.iter().copied())
        };
        self.stats.record_cycle(issued as u64, tlp, cause);
        self.mem.advance(now);
        self.now = now + 1;

        if issued == 0 && eligible.is_empty() {
            let mut next = earliest;
            if let Some(t) = self.mem.next_event(now) {
                wake_at(t, &mut next);
            }
            let any_active = self.tasklets.iter().any(|t| t.status == TaskletStatus::Active);
            if !any_active {
                wake_at(self.last_retire.map_or(now + 1, |r| r + 1), &mut next);
            }
            match next {
                None => return Err(RunError::Deadlock(now)),
                Some(t) if t > now + 1 => {
                    let t = t.min(self.cfg.max_cycles.max(now + 1));
                    self.stats.record_idle_span(t - now - 1, 0, cause);
                    self.now = t;
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn reg(&self, t: usize, r: Option<Register>) -> u32 {
        r.map_or(0, |r| self.tasklets[t].regs[r.index()])
    }

    fn operand(&self, t: usize, o: Option<Operand>) -> u32 {
        match o {
            Some(Operand::Reg(r)) => self.tasklets[t].regs[r.index()],
            Some(Operand::Imm(i)) => i as u32,
            None => 0,
        }
    }

    fn set_reg(&mut self, t: usize, r: Option<Register>, v: u32) {
        if let Some(r) = r {
            self.tasklets[t].regs[r.index()] = v;
        }
    }

    fn branch_target(&self, imm: i32) -> u32 {
        isa::target_address(AddressMap::IRAM_BASE, imm) - AddressMap::IRAM_BASE
    }

    /// Issue the instruction at `pc` for every lane of group `g` sitting at
    /// that pc. Returns false when a structural hazard prevents the issue.
    fn try_issue(&mut self, g: usize, pc: u32, now: u64, wram_used: &mut bool, dma_used: &mut bool) -> bool {
        let lanes: Vec<usize> = self.groups[g]
            .lanes
            .iter()
            .copied()
            .filter(|&l| self.tasklets[l].status == TaskletStatus::Active && self.tasklets[l].pc == pc)
            .collect();
        let instr = match self.instruction(pc) {
            Ok(i) => i,
            Err(e) => {
                for &l in &lanes {
                    self.fault(l, e.clone());
                }
                return false;
            }
        };
        let op = instr.opcode;
        let shape = op.shape();

        // Structural checks before any architectural effect.
        let mut mem_plan: Vec<(usize, Result<LaneMem, String>)> = Vec::new();
        if matches!(shape, Shape::Load | Shape::Store) {
            let size = op.access_size().expect("memory op has a size");
            for &l in &lanes {
                let addr = self.reg(l, instr.src1).wrapping_add(instr.imm as u32);
                mem_plan.push((l, self.plan_access(addr, size, op.is_store())));
            }
            let needs_port = mem_plan.iter().any(|(_, m)| m.is_ok());
            if needs_port && (*wram_used || !self.mem.port.is_free(now)) {
                return false;
            }
            *wram_used |= needs_port;
        }
        if shape == Shape::Dma {
            if *dma_used {
                return false;
            }
            *dma_used = true;
        }

        let p = self.cfg.pipeline.clone();
        let next = pc + isa::INSTRUCTION_BYTES;
        let mut mem_done = 0u64;
        match shape {
            Shape::None => {
                for &l in &lanes {
                    if op == Opcode::Stop {
                        self.tasklets[l].status = TaskletStatus::Stopped;
                    } else {
                        self.tasklets[l].pc = next;
                    }
                }
            }
            Shape::Dst => {
                for &l in &lanes {
                    self.set_reg(l, instr.dst, l as u32);
                    self.tasklets[l].pc = next;
                }
            }
            Shape::Binary => {
                for &l in &lanes {
                    let a = self.reg(l, instr.src1);
                    let b = self.operand(l, instr.src2);
                    self.set_reg(l, instr.dst, exec::alu(op, a, b));
                    self.tasklets[l].pc = next;
                }
            }
            Shape::LoadImm => {
                for &l in &lanes {
                    let v = self.operand(l, instr.src2);
                    self.set_reg(l, instr.dst, v);
                    self.tasklets[l].pc = next;
                }
            }
            Shape::Branch => {
                let target = self.branch_target(instr.imm);
                for &l in &lanes {
                    let a = self.reg(l, instr.src1);
                    let b = self.operand(l, instr.src2);
                    self.tasklets[l].pc = if exec::branch_taken(op, a, b) { target } else { next };
                }
            }
            Shape::Jump => {
                let target = self.branch_target(instr.imm);
                for &l in &lanes {
                    self.tasklets[l].pc = target;
                }
            }
            Shape::Load | Shape::Store => {
                mem_done = self.execute_memory(g, &instr, mem_plan, now);
            }
            Shape::Dma => self.execute_dma(g, &instr, &lanes, now),
            Shape::Lock => {
                let id = instr.imm as usize;
                for &l in &lanes {
                    if id >= NUM_LOCKS {
                        self.fault(l, format!("lock index {id} out of range"));
                        continue;
                    }
                    match op {
                        Opcode::Acquire => {
                            if self.locks[id].is_none() {
                                self.locks[id] = Some(l);
                                self.tasklets[l].pc = next;
                                self.tasklets[l].spin = false;
                            } else {
                                self.tasklets[l].spin = true;
                            }
                        }
                        _ => {
                            self.locks[id] = None;
                            self.tasklets[l].pc = next;
                        }
                    }
                }
            }
        }
        if op != Opcode::Acquire {
            for &l in &lanes {
                self.tasklets[l].spin = false;
            }
        }

        let grp = &mut self.groups[g];
        grp.rf_ready = None;
        grp.mem_until = grp.mem_until.max(mem_done);
        if p.forwarding {
            let spacing = if op.redirects() { p.forward_latency } else { 1 };
            grp.next_issue = now + spacing;
            for w in instr.writes().iter() {
                if w.index() < NUM_REGISTERS {
                    grp.reg_ready[w.index()] = now + p.forward_latency;
                }
            }
        } else {
            grp.next_issue = now + p.revolver;
        }
        self.last_retire = Some(self.last_retire.map_or(0, |r| r).max(now + p.stages));
        self.stats.record_issue(instr.category(), lanes.len() as u64);
        if self.cfg.trace {
            self.trace.push(TraceEvent {
                cycle: now,
                group: g,
                tasklets: lanes,
                pc: AddressMap::IRAM_BASE + pc,
                text: instr.to_string(),
            });
        }
        true
    }

    fn plan_access(&self, addr: u32, size: u32, write: bool) -> Result<LaneMem, String> {
        let map = &self.cfg.mem.map;
        if !addr.is_multiple_of(size) {
            return Err(format!("misaligned {size}-byte access at {addr:#x}"));
        }
        if map.contains(RegionKind::Wram, addr, size) {
            return Ok(LaneMem::Wram { addr });
        }
        if map.contains(RegionKind::Mram, addr, size) && self.mem.dcache.is_some() {
            return Ok(LaneMem::Cache { offset: addr - AddressMap::MRAM_BASE, write });
        }
        Err(format!("{size}-byte access at {addr:#x} outside WRAM"))
    }

    /// Functional effect and timing of a load/store issue. Returns the cycle
    /// the group's WRAM data is available.
    fn execute_memory(
        &mut self,
        g: usize,
        instr: &Instruction,
        plan: Vec<(usize, Result<LaneMem, String>)>,
        now: u64,
    ) -> u64 {
        let op = instr.opcode;
        let size = op.access_size().expect("memory op has a size");
        let next = (self.tasklets[plan[0].0].pc) + isa::INSTRUCTION_BYTES;
        let mut blocks: Vec<u32> = Vec::new();
        let mut wram_lanes = 0u64;
        let mut bytes = 0u32;
        for (l, m) in plan {
            let m = match m {
                Ok(m) => m,
                Err(e) => {
                    self.fault(l, e);
                    continue;
                }
            };
            let target = match m {
                LaneMem::Wram { addr, .. } => {
                    wram_lanes += 1;
                    blocks.push(addr / COALESCE_BLOCK);
                    Target::Wram((addr - AddressMap::WRAM_BASE) as usize)
                }
                LaneMem::Cache { offset, write } => {
                    blocks.push(offset / COALESCE_BLOCK);
                    if self.mem.data_access(offset, write, l, now) == CacheOutcome::Wait {
                        self.groups[g].pending += 1;
                    }
                    Target::Mram(offset)
                }
            };
            bytes += size;
            if op.is_load() {
                let raw = match target {
                    Target::Wram(o) => le(self.mem.read_wram(o, size as usize)),
                    Target::Mram(o) => {
                        let mut b = vec![0u8; size as usize];
                        self.mem.read_virtual(o as usize, &mut b);
                        le(&b)
                    }
                };
                let v = exec::extend_load(op, raw);
                let d = instr.dst.expect("load has a destination");
                self.tasklets[l].regs[d.index()] = v as u32;
                if op == Opcode::Ld {
                    self.tasklets[l].regs[d.index() + 1] = (v >> 32) as u32;
                }
            } else {
                let mut v = self.operand(l, instr.src2) as u64;
                if op == Opcode::Sd {
                    if let Some(Operand::Reg(r)) = instr.src2 {
                        v |= (self.tasklets[l].regs[r.index() + 1] as u64) << 32;
                    }
                }
                let data = &v.to_le_bytes()[..size as usize];
                match target {
                    Target::Wram(o) => self.mem.write_wram(o, data),
                    Target::Mram(o) => self.mem.write_virtual(o as usize, data),
                }
            }
            self.tasklets[l].pc = next;
        }
        if bytes == 0 {
            return 0;
        }
        let txns = if self.cfg.pipeline.simt.coalescing {
            blocks.sort_unstable();
            blocks.dedup();
            blocks.len() as u64
        } else {
            blocks.len() as u64
        };
        self.stats.wram_transactions += txns;
        if wram_lanes == 0 && self.mem.dcache.is_some() {
            // Cache hits use the data array port like WRAM accesses do.
            return self.mem.port.access_batch(now, bytes, 0);
        }
        if self.groups[g].lanes.len() == 1 {
            self.mem.port.access(now, bytes)
        } else {
            self.mem.port.access_batch(now, bytes, txns)
        }
    }

    fn execute_dma(&mut self, g: usize, instr: &Instruction, lanes: &[usize], now: u64) {
        let dir = if instr.opcode == Opcode::Ldma { Direction::Read } else { Direction::Write };
        let bytes = instr.imm as u32;
        let map = self.cfg.mem.map.clone();
        let mut reqs = Vec::new();
        for &l in lanes {
            let w = self.reg(l, instr.src1);
            let m = match instr.src2 {
                Some(Operand::Reg(r)) => self.tasklets[l].regs[r.index()],
                _ => 0,
            };
            let err = if !w.is_multiple_of(8) || m % 8 != 0 {
                Some(format!("DMA addresses must be 8-byte aligned (WRAM {w:#x}, MRAM {m:#x})"))
            } else if !map.contains(RegionKind::Wram, w, bytes) {
                Some(format!("DMA WRAM range {w:#x}+{bytes} out of bounds"))
            } else if !map.contains(RegionKind::Mram, m, bytes) {
                Some(format!("DMA MRAM range {m:#x}+{bytes} out of bounds"))
            } else {
                None
            };
            if let Some(e) = err {
                self.fault(l, e);
                continue;
            }
            self.tasklets[l].pc += isa::INSTRUCTION_BYTES;
            reqs.push(LaneDma {
                lane: l,
                wram: w - AddressMap::WRAM_BASE,
                mram: m - AddressMap::MRAM_BASE,
                bytes,
            });
        }
        let jobs = coalesce_dma(&reqs, dir, self.cfg.pipeline.simt.coalescing);
        self.stats.dma_requests += jobs.len() as u64;
        for job in jobs {
            let waiters = job.waiters.clone();
            match self.mem.submit_dma(job, now) {
                Ok(()) => self.groups[g].pending += waiters.len(),
                Err(e) => {
                    for l in waiters {
                        self.fault(l, e.to_string());
                    }
                }
            }
        }
    }
}

enum Target {
    Wram(usize),
    Mram(u32),
}

fn le(b: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..b.len()].copy_from_slice(b);
    u64::from_le_bytes(buf)
}

/// One lane's DMA request (offsets from the region bases).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneDma {
    pub lane: usize,
    pub wram: u32,
    pub mram: u32,
    pub bytes: u32,
}

/// Turn per-lane DMA requests into engine jobs. With coalescing, lanes whose
/// MRAM ranges are back to back become one job that gathers into (or
/// scatters from) each lane's WRAM buffer.
pub fn coalesce_dma(reqs: &[LaneDma], dir: Direction, coalescing: bool) -> Vec<DmaRequest> {
    let single = |r: &LaneDma| DmaRequest {
        dir,
        mram: r.mram,
        segments: vec![WramSegment { offset: r.wram, len: r.bytes }],
        waiters: vec![r.lane],
    };
    if !coalescing {
        return reqs.iter().map(single).collect();
    }
    let mut sorted = reqs.to_vec();
    sorted.sort_by_key(|r| (r.mram, r.lane));
    let mut out: Vec<DmaRequest> = Vec::new();
    for r in &sorted {
        match out.last_mut() {
            Some(j) if j.mram + j.bytes() == r.mram => {
                j.segments.push(WramSegment { offset: r.wram, len: r.bytes });
                j.waiters.push(r.lane);
            }
            _ => out.push(single(r)),
        }
    }
    out
}

#[cfg(test)]
mod tests;
