use super::RegionKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"PIMG";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPayload {
    pub kind: RegionKind,
    pub base: u32,
    pub bytes: Vec<u8>,
}

/// Records a section the linker moved out of its home region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub section: String,
    pub from: RegionKind,
    pub to: RegionKind,
    pub address: u32,
    pub size: u32,
}

/// A linked, loadable program.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryImage {
    pub regions: Vec<RegionPayload>,
    pub entry: u32,
    pub threads: u32,
    pub journal: Vec<JournalEntry>,
    pub symbols: BTreeMap<String, u32>,
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a PIMG container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("container truncated at byte {0}")]
    Truncated(usize),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, FormatError> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| FormatError::Malformed(e.to_string()))
    }

    fn kind(&mut self) -> Result<RegionKind, FormatError> {
        let c = self.u8()?;
        RegionKind::from_code(c).ok_or_else(|| FormatError::Malformed(format!("region code {c}")))
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl MemoryImage {
    pub fn region(&self, kind: RegionKind) -> Option<&RegionPayload> {
        self.regions.iter().find(|r| r.kind == kind)
    }

    pub fn iram(&self) -> &[u8] {
        self.region(RegionKind::Iram).map(|r| r.bytes.as_slice()).unwrap_or(&[])
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }

    /// Serialize to the PIMG container layout:
    ///
    /// ```text
    /// "PIMG" u16 version u16 flags u32 entry u32 threads u32 nregions
    /// nregions x { u8 kind, 3 pad, u32 base, u32 size }
    /// payloads back to back
    /// u32 njournal, njournal x { str section, u8 from, u8 to, u32 address, u32 size }
    /// u32 nsymbols, nsymbols x { str name, u32 address }
    /// ```
    /// Integers are little-endian; `str` is a u16 length followed by UTF-8 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.entry.to_le_bytes());
        out.extend_from_slice(&self.threads.to_le_bytes());
        out.extend_from_slice(&(self.regions.len() as u32).to_le_bytes());
        for r in &self.regions {
            out.extend_from_slice(&[r.kind.code(), 0, 0, 0]);
            out.extend_from_slice(&r.base.to_le_bytes());
            out.extend_from_slice(&(r.bytes.len() as u32).to_le_bytes());
        }
        for r in &self.regions {
            out.extend_from_slice(&r.bytes);
        }
        out.extend_from_slice(&(self.journal.len() as u32).to_le_bytes());
        for j in &self.journal {
            put_string(&mut out, &j.section);
            out.push(j.from.code());
            out.push(j.to.code());
            out.extend_from_slice(&j.address.to_le_bytes());
            out.extend_from_slice(&j.size.to_le_bytes());
        }
        out.extend_from_slice(&(self.symbols.len() as u32).to_le_bytes());
        for (name, addr) in &self.symbols {
            put_string(&mut out, name);
            out.extend_from_slice(&addr.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).map_err(|_| FormatError::BadMagic)? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        r.u16()?;
        let entry = r.u32()?;
        let threads = r.u32()?;
        let n = r.u32()? as usize;
        let mut headers = Vec::new();
        for _ in 0..n {
            let kind = r.kind()?;
            r.take(3)?;
            headers.push((kind, r.u32()?, r.u32()? as usize));
        }
        let mut regions = Vec::new();
        for (kind, base, size) in headers {
            regions.push(RegionPayload { kind, base, bytes: r.take(size)?.to_vec() });
        }
        let nj = r.u32()?;
        let mut journal = Vec::new();
        for _ in 0..nj {
            journal.push(JournalEntry {
                section: r.string()?,
                from: r.kind()?,
                to: r.kind()?,
                address: r.u32()?,
                size: r.u32()?,
            });
        }
        let ns = r.u32()?;
        let mut symbols = BTreeMap::new();
        for _ in 0..ns {
            let name = r.string()?;
            symbols.insert(name, r.u32()?);
        }
        if r.pos != buf.len() {
            return Err(FormatError::Malformed("trailing bytes".into()));
        }
        Ok(MemoryImage { regions, entry, threads, journal, symbols })
    }

    pub fn emit(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized container, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_stop() -> MemoryImage {
        MemoryImage {
            regions: vec![RegionPayload {
                kind: RegionKind::Iram,
                base: 0x8000_0000,
                bytes: vec![0, 0, 0, 0, 0, 1],
            }],
            entry: 0x8000_0000,
            threads: 24,
            journal: vec![],
            symbols: BTreeMap::new(),
        }
    }

    #[test]
    fn header_plus_payload() {
        let bytes = one_stop().to_bytes();
        // 20-byte fixed header, one 12-byte region record, 6 payload bytes, two empty tables.
        assert_eq!(bytes.len(), 20 + 12 + 6 + 4 + 4);
        assert_eq!(&bytes[..4], b"PIMG");
        assert_eq!(&bytes[32..38], &[0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn round_trip() {
        let mut img = one_stop();
        img.journal.push(JournalEntry {
            section: "a.s:wram".into(),
            from: RegionKind::Wram,
            to: RegionKind::Mram,
            address: 0x0800_0040,
            size: 64,
        });
        img.symbols.insert("main".into(), 0x8000_0000);
        assert_eq!(MemoryImage::from_bytes(&img.to_bytes()).unwrap(), img);
    }

    #[test]
    fn truncated_is_format_error() {
        let bytes = one_stop().to_bytes();
        for cut in [0, 3, 10, 33, bytes.len() - 1] {
            assert!(MemoryImage::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        assert!(matches!(
            MemoryImage::from_bytes(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated(_))
        ));
    }
}
