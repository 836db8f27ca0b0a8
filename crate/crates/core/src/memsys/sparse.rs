const PAGE: usize = 4096;

/// Byte-addressable memory that only allocates pages that were written.
/// Unwritten bytes read as zero.
#[derive(Clone, Debug)]
pub struct SparseMemory {
    size: usize,
    pages: Vec<Option<Box<[u8; PAGE]>>>,
}

impl SparseMemory {
    pub fn new(size: usize) -> Self {
        SparseMemory { size, pages: vec![None; size.div_ceil(PAGE)] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn in_bounds(&self, offset: usize, len: usize) -> bool {
        offset.checked_add(len).is_some_and(|e| e <= self.size)
    }

    /// Panics if the range is out of bounds; callers check first.
    pub fn read(&self, offset: usize, out: &mut [u8]) {
        assert!(self.in_bounds(offset, out.len()));
        let mut done = 0;
        while done < out.len() {
            let a = offset + done;
            let (p, o) = (a / PAGE, a % PAGE);
            let n = (PAGE - o).min(out.len() - done);
            match &self.pages[p] {
                Some(page) => out[done..done + n].copy_from_slice(&page[o..o + n]),
                None => out[done..done + n].fill(0),
            }
            done += n;
        }
    }

    pub fn write(&mut self, offset: usize, data: &[u8]) {
        assert!(self.in_bounds(offset, data.len()));
        let mut done = 0;
        while done < data.len() {
            let a = offset + done;
            let (p, o) = (a / PAGE, a % PAGE);
            let n = (PAGE - o).min(data.len() - done);
            let page = self.pages[p].get_or_insert_with(|| Box::new([0; PAGE]));
            page[o..o + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
    }

    pub fn read_vec(&self, offset: usize, len: usize) -> Vec<u8> {
        let mut v = vec![0; len];
        self.read(offset, &mut v);
        v
    }

    pub fn read_u64(&self, offset: usize) -> u64 {
        let mut b = [0; 8];
        self.read(offset, &mut b);
        u64::from_le_bytes(b)
    }

    pub fn write_u64(&mut self, offset: usize, v: u64) {
        self.write(offset, &v.to_le_bytes());
    }

    /// Allocated pages, in address order, with their offsets.
    pub fn pages(&self) -> impl Iterator<Item = (usize, &[u8])> {
        self.pages
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i * PAGE, &p[..])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_write_across_pages() {
        let mut m = SparseMemory::new(1 << 20);
        let data: Vec<u8> = (0..10_000u32).map(|i| i as u8).collect();
        m.write(4000, &data);
        assert_eq!(m.read_vec(4000, data.len()), data);
        assert_eq!(m.read_vec(0, 16), vec![0; 16]);
        assert_eq!(m.pages().count(), 4);
        assert!(!m.in_bounds((1 << 20) - 4, 8));
    }
}
