//! Dex string pool reader.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DexError {
    #[error("not a dex file")]
    NotDex,
    #[error("dex truncated: {0}")]
    TruncatedDex(String),
}

/// One `string_data_item`. `decoded` is `None` when the MUTF-8 payload is
/// malformed (e.g. an unpaired surrogate); `raw` is kept for matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexString {
    pub raw: Vec<u8>,
    pub decoded: Option<String>,
}

impl DexString {
    pub fn text(&self) -> String {
        match &self.decoded {
            Some(s) => s.clone(),
            None => String::from_utf8_lossy(&self.raw).into_owned(),
        }
    }
}

const HEADER_SIZE: usize = 0x70;

pub fn is_dex(bytes: &[u8]) -> bool {
    bytes.len() >= 8 && &bytes[..4] == b"dex\n" && bytes[4..7].iter().all(u8::is_ascii_digit) && bytes[7] == 0
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32, DexError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DexError::TruncatedDex(format!("u32 at {at:#x}")))
}

fn uleb128(bytes: &[u8], pos: &mut usize) -> Result<u32, DexError> {
    let mut out = 0u32;
    for i in 0..5 {
        let b = *bytes
            .get(*pos)
            .ok_or_else(|| DexError::TruncatedDex(format!("uleb128 at {:#x}", *pos)))?;
        *pos += 1;
        out |= ((b & 0x7f) as u32) << (7 * i);
        if b & 0x80 == 0 {
            return Ok(out);
        }
    }
    Err(DexError::TruncatedDex("uleb128 longer than 5 bytes".into()))
}

/// Decodes modified UTF-8: `C0 80` for NUL, surrogate pairs as two
/// three-byte sequences.
pub fn decode_mutf8(raw: &[u8]) -> Option<String> {
    let mut units = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let b = raw[i];
        let cont = |k: usize| raw.get(i + k).filter(|&&c| c & 0xc0 == 0x80).map(|&c| (c & 0x3f) as u16);
        match b {
            0x01..=0x7f => {
                units.push(b as u16);
                i += 1;
            }
            0xc0..=0xdf => {
                units.push(((b & 0x1f) as u16) << 6 | cont(1)?);
                i += 2;
            }
            0xe0..=0xef => {
                units.push(((b & 0x0f) as u16) << 12 | cont(1)? << 6 | cont(2)?);
                i += 3;
            }
            _ => return None,
        }
    }
    String::from_utf16(&units).ok()
}

/// Every `string_ids` entry in table order.
pub fn dex_strings(bytes: &[u8]) -> Result<Vec<DexString>, DexError> {
    if !is_dex(bytes) {
        return Err(DexError::NotDex);
    }
    if bytes.len() < HEADER_SIZE {
        return Err(DexError::TruncatedDex("header shorter than 0x70 bytes".into()));
    }
    let count = u32_at(bytes, 0x38)? as usize;
    let ids_off = u32_at(bytes, 0x3c)? as usize;
    if count == 0 {
        return Ok(Vec::new());
    }
    let table_end = ids_off
        .checked_add(count.checked_mul(4).ok_or_else(|| DexError::TruncatedDex("string count overflow".into()))?)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| DexError::TruncatedDex(format!("string_ids table of {count} entries at {ids_off:#x}")))?;
    let mut out = Vec::with_capacity(count);
    for at in (ids_off..table_end).step_by(4) {
        let mut pos = u32_at(bytes, at)? as usize;
        if pos >= bytes.len() {
            return Err(DexError::TruncatedDex(format!("string data offset {pos:#x}")));
        }
        let _utf16_len = uleb128(bytes, &mut pos)?;
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == 0)
            .map(|n| pos + n)
            .ok_or_else(|| DexError::TruncatedDex(format!("unterminated string at {pos:#x}")))?;
        let raw = bytes[pos..end].to_vec();
        let decoded = decode_mutf8(&raw);
        out.push(DexString { raw, decoded });
    }
    Ok(out)
}

/// String pool decoded to text; undecodable entries are rendered lossily.
pub fn extract_dex_strings(bytes: &[u8]) -> Result<Vec<String>, DexError> {
    Ok(dex_strings(bytes)?.iter().map(DexString::text).collect())
}

/// `string_ids_size` from the header.
pub fn header_string_count(bytes: &[u8]) -> Result<u32, DexError> {
    if !is_dex(bytes) {
        return Err(DexError::NotDex);
    }
    u32_at(bytes, 0x38)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::dex_with_strings;

    #[test]
    fn reads_strings_in_table_order() {
        let d = dex_with_strings(&["Lcom/google/firebase/ml/vision/FirebaseVision;", "abc", ""]);
        let s = extract_dex_strings(&d).unwrap();
        assert_eq!(s, vec!["Lcom/google/firebase/ml/vision/FirebaseVision;", "abc", ""]);
        assert_eq!(header_string_count(&d).unwrap() as usize, s.len());
    }

    #[test]
    fn empty_pool() {
        assert!(extract_dex_strings(&dex_with_strings(&[])).unwrap().is_empty());
    }

    #[test]
    fn wrong_magic() {
        let mut d = dex_with_strings(&["x"]);
        d[0] = b'D';
        assert_eq!(extract_dex_strings(&d), Err(DexError::NotDex));
        assert_eq!(extract_dex_strings(b"PK\x03\x04"), Err(DexError::NotDex));
    }

    #[test]
    fn truncated_tables() {
        let d = dex_with_strings(&["hello", "world"]);
        let cut = &d[..0x72];
        assert!(matches!(extract_dex_strings(cut), Err(DexError::TruncatedDex(_))));
    }

    #[test]
    fn mutf8_nul_supplementary_and_lone_surrogate() {
        let d = dex_with_strings(&["a\0b", "\u{1F600}x", "é"]);
        let s = extract_dex_strings(&d).unwrap();
        assert_eq!(s, vec!["a\0b", "\u{1F600}x", "é"]);
        // ED A0 80 is a lone high surrogate
        assert_eq!(decode_mutf8(&[0xed, 0xa0, 0x80]), None);
        assert_eq!(decode_mutf8(&[0xff]), None);
    }
}
