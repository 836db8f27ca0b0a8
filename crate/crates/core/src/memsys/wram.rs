/// Timing of the single WRAM port: one access may start per cycle and the
/// port stays busy for `ceil(size / bytes_per_cycle)` cycles.
#[derive(Clone, Debug)]
pub struct WramPort {
    pub bytes_per_cycle: u32,
    pub busy_until: u64,
    pub bytes: u64,
    pub accesses: u64,
}

impl WramPort {
    pub fn new(bytes_per_cycle: u32) -> Self {
        WramPort { bytes_per_cycle: bytes_per_cycle.max(1), busy_until: 0, bytes: 0, accesses: 0 }
    }

    pub fn is_free(&self, now: u64) -> bool {
        self.busy_until <= now
    }

    /// Start an access of `size` bytes at `now`; returns the cycle its data is
    /// available. The caller checks [`WramPort::is_free`] first.
    pub fn access(&mut self, now: u64, size: u32) -> u64 {
        let occupancy = size.div_ceil(self.bytes_per_cycle).max(1) as u64;
        self.busy_until = now + occupancy;
        self.bytes += size as u64;
        self.accesses += 1;
        now + 1
    }
}

impl WramPort {
    /// Start `transactions` accesses moving `bytes` in total as one batch
    /// (a vector access). Returns the cycle the last data is available.
    pub fn access_batch(&mut self, now: u64, bytes: u32, transactions: u64) -> u64 {
        let occupancy = bytes.div_ceil(self.bytes_per_cycle).max(1) as u64;
        self.busy_until = now + occupancy;
        self.bytes += bytes as u64;
        self.accesses += transactions;
        now + occupancy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_access_holds_port() {
        let mut p = WramPort::new(4);
        assert_eq!(p.access(10, 4), 11);
        assert!(p.is_free(11));
        p.access(11, 8);
        assert!(!p.is_free(12));
        assert!(p.is_free(13));
        p.access(13, 64);
        assert_eq!(p.busy_until, 29);
    }
}
