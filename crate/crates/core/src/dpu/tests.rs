use super::*;
use crate::frontend::{assemble, link, LinkOptions};

fn image(src: &str) -> MemoryImage {
    let obj = assemble(src, "t.s").unwrap();
    link(&[obj], &AddressMap::default(), &LinkOptions::default()).unwrap()
}

fn run_with(src: &str, threads: usize, cfg: DpuConfig) -> Dpu {
    let mut d = Dpu::new(cfg);
    d.load(&image(src));
    d.boot(threads).unwrap();
    d.run().unwrap();
    d
}

fn run(src: &str, threads: usize) -> Dpu {
    run_with(src, threads, DpuConfig { trace: true, ..DpuConfig::default() })
}

fn straight_line(n: usize) -> String {
    let mut s = String::new();
    for _ in 0..n - 1 {
        s.push_str("add r3, r4, r5\n");
    }
    s.push_str("stop\n");
    s
}

fn alu_loop(iters: u32) -> String {
    format!(
        "movi r2, 0\nmovi r3, {iters}\nloop:\n{}add r2, r2, 1\nblt r2, r3, loop\nstop\n",
        "add r5, r6, r7\n".repeat(8)
    )
}

#[test]
fn single_tasklet_closed_form() {
    for n in [1usize, 2, 10, 100] {
        let d = run(&straight_line(n), 1);
        assert_eq!(d.stats.cycles, 11 * (n as u64 - 1) + 14 + 1, "n = {n}");
        assert_eq!(d.stats.issued, n as u64);
    }
}

#[test]
fn revolver_dominates_single_thread_idle() {
    let d = run(&straight_line(100), 1);
    d.stats.check_identities().unwrap();
    assert!(d.stats.idle.revolver as f64 >= 0.85 * d.stats.cycles as f64);
}

#[test]
fn eleven_tasklets_saturate_issue() {
    for threads in [11, 16, 24] {
        let d = run_with(&alu_loop(400), threads, DpuConfig::default());
        let ipc = d.stats.ipc();
        assert!((ipc - 1.0).abs() < 0.02, "{threads} tasklets: IPC {ipc}");
    }
    let d = run_with(&alu_loop(400), 6, DpuConfig::default());
    assert!(d.stats.ipc() < 0.6);
}

#[test]
fn round_robin_rotates_over_eligible_tasklets() {
    let d = run(&straight_line(30), 16);
    let order: Vec<usize> = d.trace.iter().map(|e| e.tasklets[0]).collect();
    for (i, &t) in order.iter().enumerate() {
        // With 16 always-eligible tasklets the oracle is strict rotation.
        assert_eq!(t, i % 16, "issue {i}");
    }
}

#[test]
fn revolver_law_holds_on_trace() {
    let d = run(&alu_loop(50), 4);
    let mut last = [None::<u64>; MAX_TASKLETS];
    let mut per_cycle = std::collections::BTreeMap::<u64, usize>::new();
    for e in &d.trace {
        let t = e.tasklets[0];
        if let Some(prev) = last[t] {
            assert!(e.cycle - prev >= 11);
        }
        last[t] = Some(e.cycle);
        *per_cycle.entry(e.cycle).or_default() += 1;
    }
    assert!(per_cycle.values().all(|&n| n <= 1));
    assert_eq!(d.trace.len() as u64, d.stats.issued);
}

#[test]
fn parity_conflict_costs_one_cycle() {
    let src = "add r0, r0, r2\nadd r0, r0, r2\nstop\n";
    let d = run(src, 1);
    assert_eq!(d.stats.cycles, 1 + 12 + 11 + 14 + 1);
    assert_eq!(d.stats.idle.rf, 2);
    let cfg = DpuConfig {
        pipeline: PipelineConfig { unified_rf: true, ..Default::default() },
        ..Default::default()
    };
    let d = run_with(src, 1, cfg);
    assert_eq!(d.stats.cycles, 11 * 2 + 14 + 1);
}

#[test]
fn forwarding_shortens_independent_chains() {
    let cfg = DpuConfig {
        pipeline: PipelineConfig { forwarding: true, ..Default::default() },
        ..Default::default()
    };
    let d = run_with(&straight_line(100), 1, cfg.clone());
    assert_eq!(d.stats.cycles, 99 + 14 + 1);
    // A dependent chain waits for the producer.
    let d = run_with("add r3, r3, 1\nadd r3, r3, 1\nadd r3, r3, 1\nstop\n", 1, cfg);
    assert_eq!(d.stats.cycles, 5 + 5 + 1 + 14 + 1);
    assert_eq!(d.tasklet(0).regs[3], 3);
}

#[test]
fn dual_issue_uses_two_tasklets() {
    let cfg = DpuConfig {
        pipeline: PipelineConfig { forwarding: true, unified_rf: true, issue_width: 2, ..Default::default() },
        trace: true,
        ..Default::default()
    };
    let d = run_with(&alu_loop(200), 16, cfg);
    assert!(d.stats.ipc() > 1.8, "IPC {}", d.stats.ipc());
    let mut per_cycle = std::collections::BTreeMap::<u64, Vec<usize>>::new();
    for e in &d.trace {
        per_cycle.entry(e.cycle).or_default().push(e.tasklets[0]);
    }
    for v in per_cycle.values() {
        assert!(v.len() <= 2);
        if v.len() == 2 {
            assert_ne!(v[0], v[1]);
        }
    }
}

#[test]
fn boot_rules() {
    let img = image("stop\n");
    let mut d = Dpu::new(DpuConfig::default());
    d.load(&img);
    assert_eq!(d.boot(25), Err(BootError::Threads(25)));
    assert_eq!(d.boot(0), Err(BootError::Threads(0)));
    d.boot(1).unwrap();
    assert_eq!(d.tasklets().iter().filter(|t| t.status == TaskletStatus::Active).count(), 1);
    d.boot(24).unwrap();
    let ids: Vec<u32> = d.tasklets().iter().map(|t| t.regs[0]).collect();
    assert_eq!(ids, (0..24).collect::<Vec<u32>>());
    assert_eq!(Dpu::new(DpuConfig::default()).boot(1), Err(BootError::NoProgram));
}

#[test]
fn empty_kernel_drains_pipeline() {
    let d = run("stop\n", 1);
    assert_eq!(d.stats.cycles, 15);
}

#[test]
fn wram_load_reads_word() {
    let src = ".section wram\nv: .word 0xdeadbeef\n.section text\nmovi r1, v\nlw r2, [r1]\nlb r3, [r1]\nstop\n";
    let d = run(src, 1);
    assert_eq!(d.tasklet(0).regs[2], 0xdead_beef);
    assert_eq!(d.tasklet(0).regs[3], 0xffff_ffef);
}

#[test]
fn store_load_double_words() {
    let src = ".section wram\nv: .space 8\n.section text\nmovi r1, v\nmovi r2, 7\nmovi r3, 9\nsd r2, [r1]\nld r4, [r1]\nstop\n";
    let d = run(src, 1);
    assert_eq!((d.tasklet(0).regs[4], d.tasklet(0).regs[5]), (7, 9));
}

#[test]
fn dma_round_trip_blocks_tasklet() {
    let src = "
.section mram
src: .word 11
     .word 22
dst: .space 8
.section wram
buf: .space 8
.section text
    movi r4, buf
    movi r6, src
    ldma r4, r6, 8
    lw r8, [r4]
    lw r9, [r4 + 4]
    add r8, r8, r9
    sw r8, [r4]
    movi r6, dst
    sdma r4, r6, 8
    stop
";
    let d = run(src, 1);
    assert_eq!(d.tasklet(0).regs[8], 33);
    let img = image(src);
    let dst = img.symbol("dst").unwrap() - AddressMap::MRAM_BASE;
    assert_eq!(d.mem.read_mram(dst, 4).unwrap(), 33u32.to_le_bytes());
    assert!(d.stats.idle.memory > 0);
    assert_eq!(d.stats.mem.dma_bytes_read, 8);
    assert_eq!(d.stats.mem.dma_bytes_written, 8);
}

#[test]
fn contended_lock_keeps_counter_exact() {
    let src = "
.section wram
count: .word 0
.section text
    movi r2, 0
    movi r3, 10
    movi r4, count
loop:
    acquire 0
    lw r5, [r4]
    add r5, r5, 1
    sw r5, [r4]
    release 0
    add r2, r2, 1
    blt r2, r3, loop
    stop
";
    let one = run(src, 1);
    let many = run(src, 8);
    let count = image(src).symbol("count").unwrap() - AddressMap::WRAM_BASE;
    assert_eq!(many.mem.read_wram(count as usize, 4), 80u32.to_le_bytes());
    assert_eq!(one.stats.mix.sync, 20);
    assert!(many.stats.mix.sync > 8 * 20, "busy waiting shows up as extra sync instructions");
}

#[test]
fn lock_held_by_one_tasklet_at_a_time() {
    let src = "
acquire 3
add r5, r6, r7
add r5, r6, r7
release 3
stop
";
    let mut d = Dpu::new(DpuConfig::default());
    d.load(&image(src));
    d.boot(6).unwrap();
    while !d.is_halted() {
        d.step().unwrap();
        assert!(d.lock_holders().iter().filter(|h| h.is_some()).count() <= 1);
    }
}

#[test]
fn out_of_bounds_access_faults_only_that_tasklet() {
    let src = "
    bne r0, r2, ok
    movi r1, 0x20000000
    lw r3, [r1]
ok:
    stop
";
    let d = run(src, 3);
    assert_eq!(d.faults.len(), 1);
    assert_eq!(d.faults[0].tasklet, 0);
    assert_eq!(d.tasklet(0).status, TaskletStatus::Faulted);
    assert_eq!(d.tasklet(1).status, TaskletStatus::Stopped);
}

fn simt_cfg(lanes: usize, coalescing: bool) -> DpuConfig {
    DpuConfig {
        pipeline: PipelineConfig { simt: SimtConfig { lanes, coalescing }, ..Default::default() },
        trace: true,
        ..Default::default()
    }
}

#[test]
fn simt_unit_stride_loads_coalesce() {
    let src = ".section wram\narr: .space 64\n.section text\nmovi r1, arr\nlsl r2, r0, 2\nadd r1, r1, r2\nlw r3, [r1]\nstop\n";
    let on = run_with(src, 16, simt_cfg(16, true));
    let off = run_with(src, 16, simt_cfg(16, false));
    assert_eq!(on.stats.wram_transactions, 1);
    assert_eq!(off.stats.wram_transactions, 16);
    assert_eq!(on.stats.issued, 5);
    assert_eq!(on.stats.lane_instructions, 5 * 16);
}

#[test]
fn simt_divergence_runs_two_passes() {
    let src = "
    movi r2, 8
    blt r0, r2, low
    movi r5, 2
    jmp done
low:
    movi r5, 1
done:
    stop
";
    let d = run_with(src, 16, simt_cfg(16, false));
    for t in 0..16 {
        assert_eq!(d.tasklet(t).regs[5], if t < 8 { 1 } else { 2 });
    }
    // Each lane executes every instruction on its path exactly once.
    let mut seen = vec![Vec::new(); 16];
    for e in &d.trace {
        for &l in &e.tasklets {
            seen[l].push(e.pc);
        }
    }
    for (t, pcs) in seen.iter().enumerate() {
        let mut u = pcs.clone();
        u.dedup();
        assert_eq!(u.len(), pcs.len(), "lane {t}");
    }
    let movi5: Vec<_> = d.trace.iter().filter(|e| e.text.starts_with("movi r5")).collect();
    assert_eq!(movi5.len(), 2);
    assert_eq!(movi5[0].tasklets.len() + movi5[1].tasklets.len(), 16);
}

#[test]
fn simt_lock_contention_completes() {
    let src = "
.section wram
count: .word 0
.section text
    movi r4, count
    acquire 1
    lw r5, [r4]
    add r5, r5, 1
    sw r5, [r4]
    release 1
    stop
";
    let d = run_with(src, 16, simt_cfg(8, true));
    let count = image(src).symbol("count").unwrap() - AddressMap::WRAM_BASE;
    assert_eq!(d.mem.read_wram(count as usize, 4), 16u32.to_le_bytes());
}

#[test]
fn dma_coalescing_merges_adjacent_lanes() {
    let reqs: Vec<LaneDma> = (0..16).map(|l| LaneDma { lane: l, wram: 512 * l as u32, mram: 8 * l as u32, bytes: 8 }).collect();
    let merged = coalesce_dma(&reqs, Direction::Read, true);
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].bytes(), 128);
    assert_eq!(merged[0].waiters.len(), 16);
    assert_eq!(coalesce_dma(&reqs, Direction::Read, false).len(), 16);
    let gap: Vec<LaneDma> = (0..4).map(|l| LaneDma { lane: l, wram: 0, mram: 16 * l as u32, bytes: 8 }).collect();
    assert_eq!(coalesce_dma(&gap, Direction::Read, true).len(), 4);
}

#[test]
fn pipeline_config_validation() {
    let bad = PipelineConfig { revolver: 5, ..Default::default() };
    assert!(bad.validate().is_err());
    assert!(PipelineConfig { forwarding: true, ..bad }.validate().is_ok());
    assert!(PipelineConfig { simt: SimtConfig { lanes: 3, coalescing: false }, ..Default::default() }.validate().is_err());
}
