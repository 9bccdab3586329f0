//! Protobuf wire-format reader.
//!
//! Just enough to walk messages field by field: no schema, no allocation
//! beyond what callers keep.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated varint at offset {0}")]
    TruncatedVarint(usize),
    #[error("varint too long at offset {0}")]
    VarintOverflow(usize),
    #[error("invalid field number 0 at offset {0}")]
    ZeroField(usize),
    #[error("unsupported wire type {wire_type} at offset {offset}")]
    BadWireType { wire_type: u8, offset: usize },
    #[error("field at offset {offset} needs {needed} bytes, {available} available")]
    OutOfBounds {
        offset: usize,
        needed: u64,
        available: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value<'a> {
    Varint(u64),
    Fixed64(u64),
    Bytes(&'a [u8]),
    Fixed32(u32),
}

impl<'a> Value<'a> {
    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            Value::Varint(v) | Value::Fixed64(v) => Some(v),
            Value::Fixed32(v) => Some(v as u64),
            Value::Bytes(_) => None,
        }
    }

    /// Varints carry negative int32/int64 as two's complement.
    pub fn as_i64(&self) -> Option<i64> {
        self.as_u64().map(|v| v as i64)
    }

    pub fn as_f32(&self) -> Option<f32> {
        match *self {
            Value::Fixed32(v) => Some(f32::from_bits(v)),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&'a [u8]> {
        match *self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&'a str> {
        self.as_bytes().and_then(|b| std::str::from_utf8(b).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Field<'a> {
    pub number: u32,
    pub value: Value<'a>,
    /// Byte offset of the tag within the parsed buffer.
    pub offset: usize,
}

pub fn read_varint(buf: &[u8], pos: &mut usize) -> Result<u64, WireError> {
    let start = *pos;
    let mut result: u64 = 0;
    for shift in 0..10 {
        let byte = *buf.get(*pos).ok_or(WireError::TruncatedVarint(start))?;
        *pos += 1;
        if shift == 9 && byte > 1 {
            return Err(WireError::VarintOverflow(start));
        }
        result |= u64::from(byte & 0x7f) << (7 * shift);
        if byte & 0x80 == 0 {
            return Ok(result);
        }
    }
    Err(WireError::VarintOverflow(start))
}

/// Iterator over the fields of one message. Stops after the first error.
pub struct Fields<'a> {
    buf: &'a [u8],
    pos: usize,
    failed: bool,
}

impl<'a> Fields<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Fields {
            buf,
            pos: 0,
            failed: false,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn next_field(&mut self) -> Result<Field<'a>, WireError> {
        let offset = self.pos;
        let tag = read_varint(self.buf, &mut self.pos)?;
        let number = (tag >> 3) as u32;
        let wire_type = (tag & 7) as u8;
        if number == 0 || tag >> 3 > u64::from(u32::MAX >> 3) {
            return Err(WireError::ZeroField(offset));
        }
        let value = match wire_type {
            0 => Value::Varint(read_varint(self.buf, &mut self.pos)?),
            1 => Value::Fixed64(u64::from_le_bytes(self.take(offset, 8)?.try_into().unwrap())),
            2 => {
                let len = read_varint(self.buf, &mut self.pos)?;
                Value::Bytes(self.take(offset, len)?)
            }
            5 => Value::Fixed32(u32::from_le_bytes(self.take(offset, 4)?.try_into().unwrap())),
            other => {
                return Err(WireError::BadWireType {
                    wire_type: other,
                    offset,
                })
            }
        };
        Ok(Field {
            number,
            value,
            offset,
        })
    }

    fn take(&mut self, offset: usize, len: u64) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if len > available as u64 {
            return Err(WireError::OutOfBounds {
                offset,
                needed: len,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + len as usize];
        self.pos += len as usize;
        Ok(out)
    }
}

impl<'a> Iterator for Fields<'a> {
    type Item = Result<Field<'a>, WireError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.pos >= self.buf.len() {
            return None;
        }
        let r = self.next_field();
        self.failed = r.is_err();
        Some(r)
    }
}

/// Collects every field of a message, failing on the first malformed one.
pub fn parse_message(buf: &[u8]) -> Result<Vec<Field<'_>>, WireError> {
    Fields::new(buf).collect()
}

/// Decodes a repeated scalar that may be packed (length-delimited) or not.
pub fn repeated_varints(value: &Value<'_>) -> Result<Vec<u64>, WireError> {
    match value {
        Value::Bytes(b) => {
            let mut pos = 0;
            let mut out = Vec::new();
            while pos < b.len() {
                out.push(read_varint(b, &mut pos)?);
            }
            Ok(out)
        }
        other => Ok(other.as_u64().into_iter().collect()),
    }
}

pub fn repeated_f32(value: &Value<'_>) -> Vec<f32> {
    match value {
        Value::Bytes(b) => b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        other => other.as_f32().into_iter().collect(),
    }
}

/// Encoder used by fixture builders.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn varint_raw(&mut self, mut v: u64) -> &mut Self {
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                self.buf.push(byte);
                break;
            }
            self.buf.push(byte | 0x80);
        }
        self
    }

    fn tag(&mut self, number: u32, wire_type: u8) -> &mut Self {
        self.varint_raw((u64::from(number) << 3) | u64::from(wire_type))
    }

    pub fn varint(&mut self, number: u32, v: u64) -> &mut Self {
        self.tag(number, 0).varint_raw(v)
    }

    pub fn int(&mut self, number: u32, v: i64) -> &mut Self {
        self.varint(number, v as u64)
    }

    pub fn fixed32(&mut self, number: u32, v: u32) -> &mut Self {
        self.tag(number, 5);
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn float(&mut self, number: u32, v: f32) -> &mut Self {
        self.fixed32(number, v.to_bits())
    }

    pub fn bytes(&mut self, number: u32, data: &[u8]) -> &mut Self {
        self.tag(number, 2).varint_raw(data.len() as u64);
        self.buf.extend_from_slice(data);
        self
    }

    pub fn string(&mut self, number: u32, s: &str) -> &mut Self {
        self.bytes(number, s.as_bytes())
    }

    pub fn message(&mut self, number: u32, msg: &Encoder) -> &mut Self {
        self.bytes(number, &msg.buf)
    }

    pub fn packed_varints(&mut self, number: u32, values: &[i64]) -> &mut Self {
        let mut inner = Encoder::new();
        for &v in values {
            inner.varint_raw(v as u64);
        }
        self.bytes(number, &inner.buf)
    }

    pub fn packed_f32(&mut self, number: u32, values: &[f32]) -> &mut Self {
        let data: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.bytes(number, &data)
    }

    pub fn finish(&self) -> Vec<u8> {
        self.buf.clone()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_known_varints() {
        let mut pos = 0;
        assert_eq!(read_varint(&[0x96, 0x01], &mut pos), Ok(150));
        assert_eq!(pos, 2);
        assert!(read_varint(&[0x80], &mut 0).is_err());
    }

    #[test]
    fn rejects_group_wire_types() {
        // field 1, wire type 3 (start group)
        assert!(parse_message(&[0x0b]).is_err());
    }

    #[test]
    fn length_beyond_buffer_is_out_of_bounds() {
        let err = parse_message(&[0x0a, 0x05, 1, 2]).unwrap_err();
        assert!(matches!(err, WireError::OutOfBounds { needed: 5, .. }));
    }

    proptest! {
        #[test]
        fn encoder_round_trips(
            n in 1u32..1000,
            v in any::<u64>(),
            s in ".{0,40}",
            f in any::<f32>().prop_filter("nan", |f| !f.is_nan()),
        ) {
            let mut e = Encoder::new();
            e.varint(n, v).string(n + 1, &s).float(n + 2, f);
            let bytes = e.finish();
            let fields = parse_message(&bytes).unwrap();
            prop_assert_eq!(fields.len(), 3);
            prop_assert_eq!(fields[0].value.as_u64(), Some(v));
            prop_assert_eq!(fields[1].value.as_str(), Some(s.as_str()));
            prop_assert_eq!(fields[2].value.as_f32(), Some(f));
        }
    }
}
