//! Little-endian readers and writers shared by the binary file formats.

/// Why a binary read stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ReadFail {
    Truncated(&'static str),
    Overflow(&'static str),
    Utf8(&'static str),
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], ReadFail> {
        let end = self.pos.checked_add(n).ok_or(ReadFail::Overflow(section))?;
        if end > self.bytes.len() {
            return Err(ReadFail::Truncated(section));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u16(&mut self, section: &'static str) -> Result<u16, ReadFail> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, section: &'static str) -> Result<u32, ReadFail> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, section: &'static str) -> Result<u64, ReadFail> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, section: &'static str) -> Result<f64, ReadFail> {
        Ok(f64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    pub fn string(&mut self, len: usize, section: &'static str) -> Result<String, ReadFail> {
        let raw = self.take(len, section)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ReadFail::Utf8(section))
    }

    /// Reads `count` doubles after checking that they fit in the remaining bytes.
    pub fn f64s(&mut self, count: u64, section: &'static str) -> Result<Vec<f64>, ReadFail> {
        let bytes = count
            .checked_mul(8)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or(ReadFail::Overflow(section))?;
        let raw = self.take(bytes, section)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Product of extents, or `None` on overflow.
pub(crate) fn checked_numel(extents: &[u64]) -> Option<u64> {
    extents.iter().try_fold(1u64, |acc, &e| acc.checked_mul(e))
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.f64(*x);
        }
    }
}
