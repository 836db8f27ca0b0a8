//! Reference models shared by the oracle and acceptance targets.

use pimsim_core::memsys::{BankState, Direction, DramTiming};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct Req {
    pub addr: u32,
    pub size: u32,
    pub arrival: u64,
}

/// Cycle-stepped reference bank: every cycle, if the bank is free and some
/// request has arrived, FR-FCFS picks one and the row state machine prices it.
pub fn reference_bank(reqs: &[Req], t: &DramTiming) -> Vec<u64> {
    let bursts = |size: u32| (size.max(1) as u64).div_ceil(t.burst_bytes as u64);
    let mut done = vec![0u64; reqs.len()];
    let mut waiting: Vec<usize> = (0..reqs.len()).collect();
    let mut open: Option<u32> = None;
    let mut activated = 0u64;
    let mut free = 0u64;
    let mut now = 0u64;
    while !waiting.is_empty() {
        let arrived: Vec<usize> = waiting.iter().copied().filter(|&i| reqs[i].arrival <= now).collect();
        if now < free || arrived.is_empty() {
            now += 1;
            continue;
        }
        // Requests are numbered in arrival order, so the smallest index is the oldest.
        let oldest = *arrived.iter().min_by_key(|&&i| (reqs[i].arrival, i)).unwrap();
        let row = |i: usize| reqs[i].addr / t.row_bytes;
        let pick = if now - reqs[oldest].arrival > t.age_cap {
            oldest
        } else {
            arrived
                .iter()
                .copied()
                .filter(|&i| Some(row(i)) == open)
                .min_by_key(|&i| (reqs[i].arrival, i))
                .unwrap_or(oldest)
        };
        let transfer = t.t_cl + t.t_bl * bursts(reqs[pick].size);
        let finish = if open == Some(row(pick)) {
            now + transfer
        } else if open.is_none() {
            activated = now;
            now + t.t_rcd + transfer
        } else {
            // Precharge may not start until tRAS after the last activate.
            let precharge = now.max(activated + t.t_ras);
            activated = precharge + t.t_rp;
            activated + t.t_rcd + transfer
        };
        open = Some(row(pick));
        done[pick] = finish;
        free = finish;
        waiting.retain(|&i| i != pick);
    }
    done
}

pub fn simulate_bank(reqs: &[Req], t: &DramTiming) -> Vec<u64> {
    let mut bank = BankState::new(*t);
    for r in reqs {
        bank.enqueue(r.addr, r.size, Direction::Read, r.arrival);
    }
    bank.advance(u64::MAX);
    let mut done = vec![0u64; reqs.len()];
    for txn in bank.take_completed(u64::MAX - 1) {
        done[txn.id as usize] = txn.completion.unwrap();
    }
    done
}

pub fn random_stream(rng: &mut ChaCha8Rng, t: &DramTiming) -> Vec<Req> {
    let n = rng.gen_range(1..40);
    let rows = rng.gen_range(1..5u32);
    let mut arrival = 0u64;
    let mut reqs: Vec<Req> = (0..n)
        .map(|_| {
            arrival += rng.gen_range(0..60);
            let size = [8u32, 32, 64, 256, 2048][rng.gen_range(0..5)];
            let row = rng.gen_range(0..rows) + 7;
            let col = rng.gen_range(0..t.row_bytes / 8) * 8;
            Req { addr: row * t.row_bytes + col.min(t.row_bytes - 8), size, arrival }
        })
        .collect();
    reqs.sort_by_key(|r| r.arrival);
    reqs
}

pub fn brute_force_pick(reqs: &[(u32, u64)], open: Option<u32>, now: u64, age_cap: u64) -> Option<usize> {
    // Rank every arrived request by (is it overdue, is it a row hit, age) and take the best.
    let arrived: Vec<usize> = (0..reqs.len()).filter(|&i| reqs[i].1 <= now).collect();
    let overdue = arrived.iter().any(|&i| now - reqs[i].1 > age_cap);
    arrived.into_iter().min_by_key(|&i| {
        let hit = !overdue && Some(reqs[i].0) == open;
        (!hit, reqs[i].1, i)
    })
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

