//! Component models checked against small independent reference models.

mod common;

use common::{brute_force_pick, permutations, random_stream, reference_bank, simulate_bank, Req};
use pimsim_core::cache::{Access, Cache, CacheGeometry, WritePolicy};
use pimsim_core::isa::{decode, encode, Instruction, Opcode, Operand, Register, Shape};
use pimsim_core::memsys::{fr_fcfs_pick, Direction, DramTiming, MemoryTransaction};
use pimsim_core::vm::Tlb;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};

// ---------------------------------------------------------------- ISA

fn reg() -> impl Strategy<Value = Register> {
    (0u8..24).prop_map(Register::new)
}

fn imm29() -> impl Strategy<Value = i32> {
    -(1i32 << 28)..(1i32 << 28)
}

fn instruction() -> impl Strategy<Value = Instruction> {
    let op = prop::sample::select(Opcode::ALL.to_vec());
    (op, reg(), reg(), reg(), imm29(), any::<i32>(), any::<bool>()).prop_map(|(op, a, b, c, imm, wide, use_imm)| {
        match op.shape() {
            Shape::None => Instruction::new(op),
            Shape::Dst => Instruction::id(a),
            Shape::Binary => {
                Instruction::binary(op, a, b, if use_imm { Operand::Imm(imm) } else { Operand::Reg(c) })
            }
            Shape::LoadImm => Instruction::movi(a, wide),
            Shape::Branch => Instruction::branch(op, a, b, imm & 0xffff),
            Shape::Jump => Instruction::jump(imm & 0xffff),
            Shape::Load => Instruction::load(op, a, b, imm),
            Shape::Store => Instruction::store(op, a, b, imm),
            Shape::Dma => Instruction::dma(op, a, b, imm),
            Shape::Lock => Instruction::lock(op, imm & 0xff),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn encode_then_decode_is_identity(i in instruction()) {
        let w = encode(&i).unwrap();
        prop_assert!(w < 1 << 48);
        prop_assert_eq!(decode(w).unwrap(), i);
    }

    #[test]
    fn every_decodable_word_reencodes_to_itself(w in 0u64..(1 << 48)) {
        if let Ok(i) = decode(w) {
            prop_assert_eq!(encode(&i).unwrap(), w);
        }
    }

    #[test]
    fn words_with_a_defined_opcode_decode_or_report_stray_bits(op in prop::sample::select(Opcode::ALL.to_vec()), low in 0u64..(1 << 40)) {
        let w = (op.number() as u64) << 40 | low;
        match decode(w) {
            Ok(i) => prop_assert_eq!(i.opcode, op),
            Err(e) => prop_assert!(e.to_string().contains("nonzero bits"), "{}", e),
        }
    }
}

// ---------------------------------------------------------------- DRAM bank

#[test]
fn bank_matches_reference_on_random_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..1000 {
        let mut t = DramTiming::default();
        if case % 10 == 0 {
            t.age_cap = rng.gen_range(20..200);
        }
        let reqs = random_stream(&mut rng, &t);
        assert_eq!(simulate_bank(&reqs, &t), reference_bank(&reqs, &t), "stream {case}: {reqs:?}");
    }
}

#[test]
fn row_state_latencies() {
    let t = DramTiming::default();
    let one = |addr, arrival| Req { addr, size: 32, arrival };
    // Closed row, then a hit, then a conflict well after tRAS.
    let reqs = [one(0, 0), one(64, 100), one(4096, 200)];
    let done = simulate_bank(&reqs, &t);
    assert_eq!(done, vec![36, 120, 252]);
    assert_eq!((t.row_hit_latency(32), t.closed_latency(32), t.conflict_latency(32)), (20, 36, 52));
}

// ---------------------------------------------------------------- FR-FCFS

#[test]
fn oldest_row_hit_wins_three_request_scenario() {
    let t = DramTiming::default();
    let q = vec![
        MemoryTransaction::new(0, 0, 32, Direction::Read, 0),
        MemoryTransaction::new(1, 5 * 1024, 32, Direction::Read, 1),
        MemoryTransaction::new(2, 5 * 1024 + 64, 32, Direction::Read, 2),
    ];
    assert_eq!(fr_fcfs_pick(&q, Some(5), 10, &t), Some(1));
    assert_eq!(fr_fcfs_pick(&q, Some(9), 10, &t), Some(0));
    assert_eq!(fr_fcfs_pick(&q, None, 10, &t), Some(0));
}

#[test]
fn picker_matches_brute_force_over_all_orders() {
    let t = DramTiming { age_cap: 6, ..DramTiming::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 1..=5 {
        for _ in 0..60 {
            let reqs: Vec<(u32, u64)> = (0..n).map(|_| (rng.gen_range(0..3), rng.gen_range(0..8))).collect();
            let open = [None, Some(0), Some(1), Some(2)][rng.gen_range(0..4)];
            let now = rng.gen_range(0..12);
            let want = brute_force_pick(&reqs, open, now, t.age_cap);
            for perm in permutations(n) {
                let queue: Vec<MemoryTransaction> = perm
                    .iter()
                    .map(|&i| MemoryTransaction::new(i as u64, reqs[i].0 * t.row_bytes, 32, Direction::Read, reqs[i].1))
                    .collect();
                let got = fr_fcfs_pick(&queue, open, now, &t).map(|k| queue[k].id as usize);
                assert_eq!(got, want, "reqs {reqs:?} open {open:?} now {now} order {perm:?}");
            }
        }
    }
}

// ---------------------------------------------------------------- caches

/// Reference set-associative LRU cache with instantaneous fills.
struct RefCache {
    sets: Vec<VecDeque<(u32, bool)>>,
    ways: usize,
    line: u32,
}

impl RefCache {
    fn access(&mut self, addr: u32, write: bool) -> (bool, Option<u32>) {
        let line = addr / self.line;
        let n = self.sets.len() as u32;
        let set = &mut self.sets[(line % n) as usize];
        if let Some(p) = set.iter().position(|(l, _)| *l == line) {
            let (l, d) = set.remove(p).unwrap();
            set.push_front((l, d || write));
            return (true, None);
        }
        let mut wb = None;
        if set.len() == self.ways {
            let (l, d) = set.pop_back().unwrap();
            wb = d.then_some(l * self.line);
        }
        set.push_front((line, write));
        (false, wb)
    }
}

proptest! {
    #[test]
    fn cache_matches_lru_reference(trace in prop::collection::vec((0u32..64, any::<bool>()), 1..400), ways in 1u32..5) {
        let g = CacheGeometry { capacity: 4 * ways * 16, ways, line: 16 };
        let mut cache = Cache::new(g, WritePolicy::WriteBack, 4);
        let mut model = RefCache { sets: vec![VecDeque::new(); 4], ways: ways as usize, line: 16 };
        for (line, write) in trace {
            let addr = line * 16 + (line % 3) * 4;
            let (hit, wb) = model.access(addr, write);
            match cache.access(addr, write, 0) {
                Access::Hit => prop_assert!(hit),
                Access::Miss { line_addr, writeback } => {
                    prop_assert!(!hit);
                    prop_assert_eq!(writeback, wb);
                    prop_assert_eq!(cache.complete_fill(line_addr), vec![0]);
                }
                other => prop_assert!(false, "unexpected {:?}", other),
            }
        }
    }

    #[test]
    fn tlb_matches_lru_reference(trace in prop::collection::vec(0u32..24, 1..300), cap in 1usize..17) {
        let mut tlb = Tlb::new(cap);
        let mut model: VecDeque<u32> = VecDeque::new();
        let mut ppn: HashMap<u32, u32> = HashMap::new();
        for vpn in trace {
            let hit = model.iter().position(|&v| v == vpn);
            let got = tlb.lookup(vpn);
            match hit {
                Some(p) => {
                    prop_assert_eq!(got, Some(ppn[&vpn]));
                    model.remove(p);
                    model.push_front(vpn);
                }
                None => {
                    prop_assert_eq!(got, None);
                    let evicted = if model.len() == cap { model.pop_back() } else { None };
                    let p = vpn ^ 0x40;
                    ppn.insert(vpn, p);
                    prop_assert_eq!(tlb.fill(vpn, p).map(|e| e.vpn), evicted);
                    model.push_front(vpn);
                }
            }
        }
    }
}

#[test]
fn concurrent_misses_to_one_line_share_a_fill() {
    let g = CacheGeometry { capacity: 1024, ways: 2, line: 64 };
    let mut c = Cache::new(g, WritePolicy::WriteBack, 2);
    assert!(matches!(c.access(0, false, 1), Access::Miss { .. }));
    assert_eq!(c.access(8, false, 2), Access::Merged);
    assert_eq!(c.access(60, true, 3), Access::Merged);
    assert_eq!(c.counters.fills, 1);
    assert_eq!(c.complete_fill(0), vec![1, 2, 3]);
    assert_eq!(c.access(32, false, 4), Access::Hit);
}
