//! Single-bank DRAM timing with an FR-FCFS scheduler. All times are DRAM
//! command-clock cycles.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramTiming {
    pub t_rcd: u64,
    pub t_ras: u64,
    pub t_rp: u64,
    pub t_cl: u64,
    pub t_bl: u64,
    pub burst_bytes: u32,
    pub row_bytes: u32,
    /// Requests waiting longer than this are served before row hits.
    pub age_cap: u64,
}

impl Default for DramTiming {
    fn default() -> Self {
        DramTiming {
            t_rcd: 16,
            t_ras: 39,
            t_rp: 16,
            t_cl: 16,
            t_bl: 4,
            burst_bytes: 32,
            row_bytes: 1024,
            age_cap: 2000,
        }
    }
}

impl DramTiming {
    pub fn bursts(&self, size: u32) -> u64 {
        (size.max(1) as u64).div_ceil(self.burst_bytes as u64)
    }

    pub fn row_hit_latency(&self, size: u32) -> u64 {
        self.t_cl + self.t_bl * self.bursts(size)
    }

    pub fn closed_latency(&self, size: u32) -> u64 {
        self.t_rcd + self.row_hit_latency(size)
    }

    pub fn conflict_latency(&self, size: u32) -> u64 {
        self.t_rp + self.closed_latency(size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowState {
    Hit,
    Closed,
    Conflict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryTransaction {
    pub id: u64,
    /// Byte offset into the bank.
    pub addr: u32,
    pub size: u32,
    pub dir: Direction,
    pub arrival: u64,
    pub start: Option<u64>,
    pub completion: Option<u64>,
    pub row_state: Option<RowState>,
}

impl MemoryTransaction {
    pub fn new(id: u64, addr: u32, size: u32, dir: Direction, arrival: u64) -> Self {
        MemoryTransaction { id, addr, size, dir, arrival, start: None, completion: None, row_state: None }
    }

    pub fn row(&self, t: &DramTiming) -> u32 {
        self.addr / t.row_bytes
    }

    pub fn column(&self, t: &DramTiming) -> u32 {
        self.addr % t.row_bytes
    }
}

/// Index of the transaction FR-FCFS serves next among those that have arrived
/// by `now`: the oldest row hit, else the oldest request. A request waiting
/// longer than `age_cap` is served first regardless of row state.
pub fn fr_fcfs_pick(
    queue: &[MemoryTransaction],
    open_row: Option<u32>,
    now: u64,
    timing: &DramTiming,
) -> Option<usize> {
    let age = |t: &MemoryTransaction| (t.arrival, t.id);
    let arrived = || queue.iter().enumerate().filter(|(_, t)| t.arrival <= now);
    let (oi, oldest) = arrived().min_by_key(|(_, t)| age(t))?;
    if now - oldest.arrival > timing.age_cap {
        return Some(oi);
    }
    let hit = arrived()
        .filter(|(_, t)| Some(t.row(timing)) == open_row)
        .min_by_key(|(_, t)| age(t))
        .map(|(i, _)| i);
    Some(hit.unwrap_or(oi))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankCounters {
    pub row_hits: u64,
    pub row_closed: u64,
    pub row_conflicts: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

/// One DRAM bank: open-row state, scheduler queue, and serialized service.
#[derive(Clone, Debug)]
pub struct BankState {
    pub timing: DramTiming,
    pub open_row: Option<u32>,
    pub last_activate: u64,
    pub busy_until: u64,
    pub counters: BankCounters,
    queue: Vec<MemoryTransaction>,
    done: BTreeMap<(u64, u64), MemoryTransaction>,
    next_id: u64,
}

impl BankState {
    pub fn new(timing: DramTiming) -> Self {
        BankState {
            timing,
            open_row: None,
            last_activate: 0,
            busy_until: 0,
            counters: BankCounters::default(),
            queue: Vec::new(),
            done: BTreeMap::new(),
            next_id: 0,
        }
    }

    /// Queue a request; returns its id.
    pub fn enqueue(&mut self, addr: u32, size: u32, dir: Direction, arrival: u64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.queue.push(MemoryTransaction::new(id, addr, size, dir, arrival));
        id
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.done.is_empty()
    }

    /// Serve `txn` starting at `t` (bank free, request arrived) and update
    /// row state. Returns the completion time.
    pub fn service(&mut self, txn: &mut MemoryTransaction, t: u64) -> u64 {
        let tm = self.timing;
        let row = txn.row(&tm);
        let data = tm.t_cl + tm.t_bl * tm.bursts(txn.size);
        let (state, done) = match self.open_row {
            Some(r) if r == row => (RowState::Hit, t + data),
            None => {
                self.last_activate = t;
                (RowState::Closed, t + tm.t_rcd + data)
            }
            Some(_) => {
                let pre = t.max(self.last_activate + tm.t_ras);
                let act = pre + tm.t_rp;
                self.last_activate = act;
                (RowState::Conflict, act + tm.t_rcd + data)
            }
        };
        self.open_row = Some(row);
        self.busy_until = done;
        match state {
            RowState::Hit => self.counters.row_hits += 1,
            RowState::Closed => self.counters.row_closed += 1,
            RowState::Conflict => self.counters.row_conflicts += 1,
        }
        match txn.dir {
            Direction::Read => self.counters.bytes_read += txn.size as u64,
            Direction::Write => self.counters.bytes_written += txn.size as u64,
        }
        txn.start = Some(t);
        txn.row_state = Some(state);
        txn.completion = Some(done);
        done
    }

    /// Make every scheduling decision that falls strictly before `until`.
    pub fn advance(&mut self, until: u64) {
        while let Some(earliest) = self.queue.iter().map(|t| t.arrival).min() {
            let t = self.busy_until.max(earliest);
            if t >= until {
                break;
            }
            let i = fr_fcfs_pick(&self.queue, self.open_row, t, &self.timing)
                .expect("a request has arrived by t");
            let mut txn = self.queue.remove(i);
            let done = self.service(&mut txn, t);
            self.done.insert((done, txn.id), txn);
        }
    }

    /// Remove and return transactions completing at or before `t`, in
    /// completion order.
    pub fn take_completed(&mut self, t: u64) -> Vec<MemoryTransaction> {
        let later = self.done.split_off(&(t + 1, 0));
        let ready = std::mem::replace(&mut self.done, later);
        ready.into_values().collect()
    }

    /// Earliest time something is scheduled or completes, if any.
    pub fn next_event(&self) -> Option<u64> {
        let pick = self.queue.iter().map(|t| t.arrival).min().map(|a| a.max(self.busy_until));
        let fin = self.done.keys().next().map(|k| k.0);
        match (pick, fin) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn txn(id: u64, row: u32, arrival: u64) -> MemoryTransaction {
        MemoryTransaction::new(id, row * 1024, 32, Direction::Read, arrival)
    }

    #[test]
    fn latencies_from_timing() {
        let t = DramTiming::default();
        assert_eq!(t.row_hit_latency(32), 20);
        assert_eq!(t.closed_latency(32), 36);
        assert_eq!(t.conflict_latency(32), 52);
        assert_eq!(t.row_hit_latency(64), 24);
    }

    #[test]
    fn pick_examples() {
        let tm = DramTiming::default();
        let (a, b) = (0, 1);
        let q = vec![txn(1, a, 0), txn(2, b, 1), txn(3, b, 2)];
        assert_eq!(fr_fcfs_pick(&q, Some(b), 10, &tm), Some(1));
        assert_eq!(fr_fcfs_pick(&q, Some(a), 10, &tm), Some(0));
        assert_eq!(fr_fcfs_pick(&q, None, 10, &tm), Some(0));
        assert_eq!(fr_fcfs_pick(&q, Some(b), 0, &tm), Some(0));
    }

    #[test]
    fn age_cap_overrides_row_hits() {
        let tm = DramTiming::default();
        let q = vec![txn(1, 0, 0), txn(2, 1, 2500)];
        assert_eq!(fr_fcfs_pick(&q, Some(1), 2500, &tm), Some(0));
        assert_eq!(fr_fcfs_pick(&q, Some(1), 1999, &tm), Some(0));
    }

    #[test]
    fn service_state_machine() {
        let mut b = BankState::new(DramTiming::default());
        let mut t0 = txn(0, 3, 0);
        assert_eq!(b.service(&mut t0, 0), 36);
        let mut t1 = txn(1, 3, 36);
        assert_eq!(b.service(&mut t1, 36), 56);
        // tRAS measured from the activate at 0 has long passed
        let mut t2 = txn(2, 4, 56);
        assert_eq!(b.service(&mut t2, 56), 108);
        assert_eq!(b.last_activate, 72);
    }

    #[test]
    fn conflict_waits_for_ras() {
        let mut b = BankState::new(DramTiming::default());
        let mut t0 = MemoryTransaction::new(0, 0, 8, Direction::Read, 0);
        b.service(&mut t0, 0);
        let mut t1 = MemoryTransaction::new(1, 2048, 8, Direction::Read, 20);
        // precharge may not start before 0 + tRAS = 39
        assert_eq!(b.service(&mut t1, 20), 39 + 52);
    }

    #[test]
    fn advance_respects_causality() {
        let mut b = BankState::new(DramTiming::default());
        b.enqueue(0, 32, Direction::Read, 0);
        b.enqueue(4096, 32, Direction::Read, 100);
        b.advance(50);
        assert_eq!(b.pending(), 1);
        let done = b.take_completed(36);
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].completion, Some(36));
        b.advance(1000);
        let done = b.take_completed(1000);
        assert_eq!(done[0].row_state, Some(RowState::Conflict));
        assert_eq!(done[0].completion, Some(152));
    }
}
