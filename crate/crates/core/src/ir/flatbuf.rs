//! Bounds-checked FlatBuffers reader (tables, vectors, strings, scalars).

use super::IrError;

fn err(msg: impl Into<String>) -> IrError {
    IrError::MalformedModel(msg.into())
}

#[derive(Clone, Copy)]
pub struct Buf<'a>(pub &'a [u8]);

impl<'a> Buf<'a> {
    fn slice(&self, pos: usize, len: usize) -> Result<&'a [u8], IrError> {
        pos.checked_add(len)
            .and_then(|end| self.0.get(pos..end))
            .ok_or_else(|| err(format!("flatbuffer read of {len} bytes at {pos} out of bounds")))
    }

    pub fn u8(&self, pos: usize) -> Result<u8, IrError> {
        Ok(self.slice(pos, 1)?[0])
    }

    pub fn u16(&self, pos: usize) -> Result<u16, IrError> {
        Ok(u16::from_le_bytes(self.slice(pos, 2)?.try_into().unwrap()))
    }

    pub fn u32(&self, pos: usize) -> Result<u32, IrError> {
        Ok(u32::from_le_bytes(self.slice(pos, 4)?.try_into().unwrap()))
    }

    pub fn i32(&self, pos: usize) -> Result<i32, IrError> {
        Ok(i32::from_le_bytes(self.slice(pos, 4)?.try_into().unwrap()))
    }

    pub fn u64(&self, pos: usize) -> Result<u64, IrError> {
        Ok(u64::from_le_bytes(self.slice(pos, 8)?.try_into().unwrap()))
    }

    /// Follows a uoffset stored at `pos`.
    fn deref(&self, pos: usize) -> Result<usize, IrError> {
        let off = self.u32(pos)? as usize;
        pos.checked_add(off)
            .filter(|&p| p < self.0.len())
            .ok_or_else(|| err(format!("offset at {pos} points outside the buffer")))
    }

    pub fn root(&self) -> Result<Table<'a>, IrError> {
        let pos = self.deref(0)?;
        Table::at(*self, pos)
    }
}

#[derive(Clone, Copy)]
pub struct Table<'a> {
    buf: Buf<'a>,
    pos: usize,
    vtable: usize,
    vtable_len: usize,
}

impl<'a> Table<'a> {
    fn at(buf: Buf<'a>, pos: usize) -> Result<Self, IrError> {
        let soff = buf.i32(pos)? as i64;
        let vtable = pos as i64 - soff;
        if vtable < 0 || vtable as usize >= buf.0.len() {
            return Err(err(format!("vtable of table at {pos} out of bounds")));
        }
        let vtable = vtable as usize;
        let vtable_len = buf.u16(vtable)? as usize;
        if vtable_len < 4 || vtable_len % 2 != 0 {
            return Err(err(format!("bad vtable size {vtable_len} at {vtable}")));
        }
        buf.slice(vtable, vtable_len)?;
        Ok(Table {
            buf,
            pos,
            vtable,
            vtable_len,
        })
    }

    /// Absolute position of field `idx`, if present.
    fn field(&self, idx: usize) -> Result<Option<usize>, IrError> {
        let slot = 4 + 2 * idx;
        if slot + 2 > self.vtable_len {
            return Ok(None);
        }
        match self.buf.u16(self.vtable + slot)? {
            0 => Ok(None),
            off => Ok(Some(self.pos + off as usize)),
        }
    }

    pub fn u8_or(&self, idx: usize, default: u8) -> Result<u8, IrError> {
        self.field(idx)?.map_or(Ok(default), |p| self.buf.u8(p))
    }

    pub fn i8_or(&self, idx: usize, default: i8) -> Result<i8, IrError> {
        Ok(self.u8_or(idx, default as u8)? as i8)
    }

    pub fn i32_or(&self, idx: usize, default: i32) -> Result<i32, IrError> {
        self.field(idx)?.map_or(Ok(default), |p| self.buf.i32(p))
    }

    pub fn u32_or(&self, idx: usize, default: u32) -> Result<u32, IrError> {
        self.field(idx)?.map_or(Ok(default), |p| self.buf.u32(p))
    }

    pub fn u64_or(&self, idx: usize, default: u64) -> Result<u64, IrError> {
        self.field(idx)?.map_or(Ok(default), |p| self.buf.u64(p))
    }

    pub fn table(&self, idx: usize) -> Result<Option<Table<'a>>, IrError> {
        match self.field(idx)? {
            None => Ok(None),
            Some(p) => Table::at(self.buf, self.buf.deref(p)?).map(Some),
        }
    }

    pub fn string(&self, idx: usize) -> Result<Option<&'a str>, IrError> {
        match self.bytes(idx)? {
            None => Ok(None),
            Some(b) => std::str::from_utf8(b)
                .map(Some)
                .map_err(|_| err("flatbuffer string is not UTF-8")),
        }
    }

    fn vector(&self, idx: usize, elem: usize) -> Result<Option<(usize, usize)>, IrError> {
        match self.field(idx)? {
            None => Ok(None),
            Some(p) => {
                let start = self.buf.deref(p)?;
                let len = self.buf.u32(start)? as usize;
                let bytes = len
                    .checked_mul(elem)
                    .ok_or_else(|| err("vector length overflow"))?;
                self.buf.slice(start + 4, bytes)?;
                Ok(Some((start + 4, len)))
            }
        }
    }

    pub fn bytes(&self, idx: usize) -> Result<Option<&'a [u8]>, IrError> {
        match self.vector(idx, 1)? {
            None => Ok(None),
            Some((start, len)) => self.buf.slice(start, len).map(Some),
        }
    }

    pub fn i32_vec(&self, idx: usize) -> Result<Vec<i32>, IrError> {
        match self.vector(idx, 4)? {
            None => Ok(Vec::new()),
            Some((start, len)) => (0..len).map(|i| self.buf.i32(start + 4 * i)).collect(),
        }
    }

    pub fn tables(&self, idx: usize) -> Result<Vec<Table<'a>>, IrError> {
        match self.vector(idx, 4)? {
            None => Ok(Vec::new()),
            Some((start, len)) => (0..len)
                .map(|i| {
                    let p = start + 4 * i;
                    Table::at(self.buf, self.buf.deref(p)?)
                })
                .collect(),
        }
    }
}

/// Minimal FlatBuffers writer used by fixture builders. Builds the buffer
/// back to front like the reference implementation, without vtable dedup.
pub mod build {
    pub struct Builder {
        // Bytes are stored reversed: `data[0]` is the last byte of the buffer.
        data: Vec<u8>,
        fields: Vec<(usize, u32)>,
        table_start: u32,
    }

    /// Offset measured from the end of the buffer.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Off(pub u32);

    impl Default for Builder {
        fn default() -> Self {
            Self::new()
        }
    }

    impl Builder {
        pub fn new() -> Self {
            Builder {
                data: Vec::new(),
                fields: Vec::new(),
                table_start: 0,
            }
        }

        fn len(&self) -> u32 {
            self.data.len() as u32
        }

        fn pad(&mut self, n: usize) {
            self.data.extend(std::iter::repeat_n(0u8, n));
        }

        fn align(&mut self, size: usize, extra: usize) {
            let used = self.data.len() + extra;
            let pad = (size - used % size) % size;
            self.pad(pad);
        }

        fn push_bytes(&mut self, bytes: &[u8]) {
            self.data.extend(bytes.iter().rev());
        }

        fn push_u32(&mut self, v: u32) {
            self.align(4, 0);
            self.push_bytes(&v.to_le_bytes());
        }

        fn push_uoffset(&mut self, target: Off) {
            self.align(4, 0);
            let here = self.len() + 4;
            self.push_bytes(&(here - target.0).to_le_bytes());
        }

        pub fn create_bytes(&mut self, bytes: &[u8]) -> Off {
            self.align(4, bytes.len());
            self.push_bytes(bytes);
            self.push_bytes(&(bytes.len() as u32).to_le_bytes());
            Off(self.len())
        }

        pub fn create_string(&mut self, s: &str) -> Off {
            self.align(4, s.len() + 1);
            self.push_bytes(&[0]);
            self.push_bytes(s.as_bytes());
            self.push_bytes(&(s.len() as u32).to_le_bytes());
            Off(self.len())
        }

        pub fn create_i32_vec(&mut self, v: &[i32]) -> Off {
            self.align(4, 4 * v.len());
            for x in v.iter().rev() {
                self.push_bytes(&x.to_le_bytes());
            }
            self.push_u32(v.len() as u32);
            Off(self.len())
        }

        pub fn create_offset_vec(&mut self, offs: &[Off]) -> Off {
            self.align(4, 4 * offs.len());
            for &o in offs.iter().rev() {
                self.push_uoffset(o);
            }
            self.push_u32(offs.len() as u32);
            Off(self.len())
        }

        pub fn start_table(&mut self) {
            self.fields.clear();
            self.table_start = self.len();
        }

        fn add_scalar(&mut self, idx: usize, bytes: &[u8]) {
            self.align(bytes.len(), 0);
            self.push_bytes(bytes);
            self.fields.push((idx, self.len()));
        }

        pub fn add_u8(&mut self, idx: usize, v: u8) {
            self.add_scalar(idx, &[v]);
        }

        pub fn add_i32(&mut self, idx: usize, v: i32) {
            self.add_scalar(idx, &v.to_le_bytes());
        }

        pub fn add_u32(&mut self, idx: usize, v: u32) {
            self.add_scalar(idx, &v.to_le_bytes());
        }

        pub fn add_offset(&mut self, idx: usize, o: Off) {
            self.push_uoffset(o);
            self.fields.push((idx, self.len()));
        }

        pub fn end_table(&mut self) -> Off {
            // soffset placeholder, patched once the vtable position is known
            self.push_u32(0);
            let table = self.len();
            let n_slots = self.fields.iter().map(|(i, _)| i + 1).max().unwrap_or(0);
            let mut slots = vec![0u16; n_slots];
            for &(idx, at) in &self.fields {
                slots[idx] = (table - at) as u16;
            }
            let table_size = (table - self.table_start) as u16;
            let vt_size = (4 + 2 * n_slots) as u16;
            for s in slots.iter().rev() {
                self.push_bytes(&s.to_le_bytes());
            }
            self.push_bytes(&table_size.to_le_bytes());
            self.push_bytes(&vt_size.to_le_bytes());
            let vtable = self.len();
            let soff = (vtable - table) as i32;
            let at = table as usize;
            let mut le = soff.to_le_bytes();
            le.reverse();
            self.data[at - 4..at].copy_from_slice(&le);
            self.fields.clear();
            Off(table)
        }

        /// Finishes with a root table and optional 4-byte file identifier.
        pub fn finish(mut self, root: Off, ident: Option<&[u8; 4]>) -> Vec<u8> {
            let extra = 4 + if ident.is_some() { 4 } else { 0 };
            self.align(8, extra);
            if let Some(id) = ident {
                self.push_bytes(id);
            }
            self.push_uoffset(root);
            let mut out = self.data;
            out.reverse();
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::build::Builder;
    use super::*;

    #[test]
    fn round_trips_nested_tables() {
        let mut b = Builder::new();
        let name = b.create_string("hello");
        let dims = b.create_i32_vec(&[1, 8, 8, 3]);
        b.start_table();
        b.add_i32(0, -7);
        b.add_offset(1, name);
        b.add_offset(2, dims);
        b.add_u8(3, 9);
        let inner = b.end_table();
        let list = b.create_offset_vec(&[inner, inner]);
        b.start_table();
        b.add_u32(0, 3);
        b.add_offset(1, list);
        let root = b.end_table();
        let bytes = b.finish(root, Some(b"TEST"));
        assert_eq!(&bytes[4..8], b"TEST");

        let root = Buf(&bytes).root().unwrap();
        assert_eq!(root.u32_or(0, 0).unwrap(), 3);
        let items = root.tables(1).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].i32_or(0, 0).unwrap(), -7);
        assert_eq!(items[0].string(1).unwrap(), Some("hello"));
        assert_eq!(items[0].i32_vec(2).unwrap(), vec![1, 8, 8, 3]);
        assert_eq!(items[0].u8_or(3, 0).unwrap(), 9);
        assert_eq!(items[0].u8_or(7, 42).unwrap(), 42);
    }

    #[test]
    fn garbage_is_an_error_not_a_panic() {
        let junk = [0xffu8; 16];
        assert!(Buf(&junk).root().is_err());
        assert!(Buf(&[]).root().is_err());
    }
}
