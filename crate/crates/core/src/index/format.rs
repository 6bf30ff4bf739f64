//! Binary index format, little-endian throughout.
//!
//! ```text
//! "STMT" | version u16
//! vocab_size u32 | sid_length u16 | dense_depth u16 | total_states u64 | total_edges u64
//! level_counts L x u64 | branch_factors L x u32
//! start_mask (d >= 1)
//! for k in 2..=d: dense mask rows, dense state rows (u32)
//! row_pointers (total_states + 1) x u64
//! edges total_edges x (token u32, next u32)
//! crc32 of everything above
//! ```

use super::{level_starts, DenseLevel, Edge, TransitionIndex};
use crate::bits;
use crate::error::{FormatError, Result};

pub const MAGIC: [u8; 4] = *b"STMT";
pub const FORMAT_VERSION: u16 = 1;

pub fn serialize(index: &TransitionIndex) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * index.row_pointers.len() + 8 * index.edges.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&(index.sid_length as u16).to_le_bytes());
    out.extend_from_slice(&(index.dense_depth as u16).to_le_bytes());
    out.extend_from_slice(&(index.total_states() as u64).to_le_bytes());
    out.extend_from_slice(&(index.edges.len() as u64).to_le_bytes());
    for &c in &index.level_counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for &b in &index.branch_factors {
        out.extend_from_slice(&b.to_le_bytes());
    }
    out.extend_from_slice(&index.start_mask);
    for level in &index.dense {
        out.extend_from_slice(&level.masks);
        for &s in &level.states {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    for &p in &index.row_pointers {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for e in &index.edges {
        out.extend_from_slice(&e.token.to_le_bytes());
        out.extend_from_slice(&e.next.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.data.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.data.len() - self.pos,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, FormatError> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

pub fn deserialize(data: &[u8]) -> Result<TransitionIndex> {
    Ok(decode(data)?)
}

fn decode(data: &[u8]) -> Result<TransitionIndex, FormatError> {
    let mut r = Reader { data, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version { found: version, expected: FORMAT_VERSION });
    }
    let vocab_size = r.u32()? as usize;
    let sid_length = r.u16()? as usize;
    let dense_depth = r.u16()? as usize;
    let total_states = r.u64()?;
    let total_edges = r.u64()?;
    if vocab_size < 2 || sid_length == 0 || dense_depth >= sid_length {
        return Err(malformed("header shape is invalid"));
    }
    let level_counts: Vec<u64> = (0..sid_length).map(|_| r.u64()).collect::<Result<_, _>>()?;
    let branch_factors = r.u32s(sid_length)?;

    // Size every section before allocating anything.
    let mask_w = bits::bytes_for(vocab_size) as u128;
    let v = vocab_size as u128;
    let mut dense_rows = Vec::new();
    let mut body: u128 = if dense_depth >= 1 { mask_w } else { 0 };
    for k in 2..=dense_depth {
        let rows = if k == 2 { v } else { level_counts[k - 2] as u128 };
        dense_rows.push(rows);
        body += rows * (mask_w + 4 * v);
    }
    body += 8 * (total_states as u128 + 1) + 8 * total_edges as u128;
    let expected = r.pos as u128 + body + 4;
    if (data.len() as u128) < expected {
        return Err(FormatError::Truncated {
            offset: data.len(),
            needed: (expected - data.len() as u128).min(usize::MAX as u128) as usize,
            available: 0,
        });
    }
    if data.len() as u128 > expected {
        return Err(malformed("trailing bytes after checksum"));
    }
    let payload = &data[..data.len() - 4];
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }

    let start_mask = if dense_depth >= 1 { r.take(mask_w as usize)?.to_vec() } else { Vec::new() };
    let mut dense = Vec::new();
    for rows in dense_rows {
        let rows = rows as usize;
        let masks = r.take(rows * mask_w as usize)?.to_vec();
        let states = r.u32s(rows * vocab_size)?;
        dense.push(DenseLevel { rows, masks, states });
    }
    let mut row_pointers = Vec::with_capacity(total_states as usize + 1);
    for _ in 0..=total_states {
        let p = r.u64()?;
        if p > u32::MAX as u64 {
            return Err(malformed("row pointer exceeds 32 bits"));
        }
        row_pointers.push(p as u32);
    }
    let raw = r.u32s(2 * total_edges as usize)?;
    let edges = raw.chunks_exact(2).map(|c| Edge { token: c[0], next: c[1] }).collect();

    let level_start = level_starts(vocab_size, &level_counts).map_err(|e| malformed(e.to_string()))?;
    if *level_start.last().unwrap() as u64 + 1 != total_states {
        return Err(malformed("total state count disagrees with level counts"));
    }
    let index = TransitionIndex {
        vocab_size,
        sid_length,
        dense_depth,
        level_counts,
        branch_factors,
        start_mask,
        dense,
        row_pointers,
        edges,
        level_start,
    };
    index.validate().map_err(|e| match e {
        crate::Error::Format(f) => f,
        other => malformed(other.to_string()),
    })?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ConstraintSet, DecoderConfig, Error};

    fn example(d: usize) -> TransitionIndex {
        let cfg = DecoderConfig::new(3, 3, d);
        let set = ConstraintSet::from_sids([[0, 1, 0], [2, 0, 1], [2, 0, 2]], &cfg).unwrap();
        TransitionIndex::build(&set, &cfg).unwrap()
    }

    #[test]
    fn round_trip_example() {
        for d in 0..3 {
            let idx = example(d);
            let bytes = serialize(&idx);
            let back = deserialize(&bytes).unwrap();
            assert_eq!(back, idx);
            assert_eq!(serialize(&back), bytes);
        }
    }

    #[test]
    fn corruption_classes_are_distinct() {
        let bytes = serialize(&example(2));

        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(deserialize(&bad), Err(Error::Format(FormatError::BadMagic(_)))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(deserialize(&bad), Err(Error::Format(FormatError::Version { found: 9, .. }))));

        let short = &bytes[..bytes.len() - 5];
        assert!(matches!(deserialize(short), Err(Error::Format(FormatError::Truncated { .. }))));
        assert!(matches!(deserialize(&bytes[..3]), Err(Error::Format(FormatError::Truncated { .. }))));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 0x01;
        assert!(matches!(deserialize(&bad), Err(Error::Format(FormatError::Checksum { .. }))));
    }
}
