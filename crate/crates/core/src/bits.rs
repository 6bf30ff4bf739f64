//! Bit-packed rows, most-significant bit first within each byte.
//!
//! Bit `i` of a row lives in byte `i / 8` under mask `0x80 >> (i % 8)`, the
//! layout produced by `numpy.packbits` with its default big bit order.

#[inline]
pub fn bytes_for(bits: usize) -> usize {
    bits.div_ceil(8)
}

#[inline]
pub fn get(row: &[u8], i: usize) -> bool {
    row[i >> 3] & (0x80 >> (i & 7)) != 0
}

#[inline]
pub fn set(row: &mut [u8], i: usize) {
    row[i >> 3] |= 0x80 >> (i & 7);
}

#[inline]
pub fn clear(row: &mut [u8], i: usize) {
    row[i >> 3] &= !(0x80 >> (i & 7));
}

/// Writes `value` into bit `i` without branching on it.
#[inline]
pub fn or_bit(row: &mut [u8], i: usize, value: bool) {
    row[i >> 3] |= ((value as u8) << 7) >> (i & 7);
}

pub fn count_ones(row: &[u8]) -> usize {
    row.iter().map(|b| b.count_ones() as usize).sum()
}

/// Calls `f` with every set bit index below `limit`, in increasing order.
#[inline]
pub fn for_each_set(row: &[u8], limit: usize, mut f: impl FnMut(usize)) {
    let used = bytes_for(limit).min(row.len());
    let row = &row[..used];
    let mut chunks = row.chunks_exact(8);
    let mut base = 0usize;
    for chunk in &mut chunks {
        let mut word = u64::from_be_bytes(chunk.try_into().unwrap());
        while word != 0 {
            let lz = word.leading_zeros() as usize;
            let i = base + lz;
            if i < limit {
                f(i);
            }
            word &= !(1u64 << (63 - lz));
        }
        base += 64;
    }
    for &byte in chunks.remainder() {
        let mut b = byte;
        while b != 0 {
            let lz = b.leading_zeros() as usize;
            let i = base + lz;
            if i < limit {
                f(i);
            }
            b &= !(0x80u8 >> lz);
        }
        base += 8;
    }
}

/// Packs a boolean slice into MSB-first bytes.
pub fn pack(values: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bytes_for(values.len())];
    for (i, &v) in values.iter().enumerate() {
        or_bit(&mut out, i, v);
    }
    out
}

/// Expands the first `len` bits of a packed row.
pub fn unpack(row: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|i| get(row, i)).collect()
}
