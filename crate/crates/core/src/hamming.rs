//! Bit-packed codes and exact Hamming retrieval by linear scan.
//!
//! Bit `b` of a code lives in word `b / 64` at position `b % 64` and is set
//! iff the code entry is `+1`. Rankings order by `(distance, index)`
//! ascending; the index tie-break is part of the metric contract.
//!
//! Codes file layout, little-endian:
//!
//! ```text
//! "BHC1" | L: u32 | m: u32 | m * ceil(L/64) u64 words
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};

pub const BHC_MAGIC: &[u8; 4] = b"BHC1";

/// Database codes per rayon task.
const SHARD: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    bits: usize,
    count: usize,
    words: Vec<u64>,
}

#[inline]
pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl PackedCodes {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn words_per_code(&self) -> usize {
        words_for(self.bits)
    }

    pub fn code(&self, j: usize) -> &[u64] {
        let w = self.words_per_code();
        &self.words[j * w..(j + 1) * w]
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(bits: usize, count: usize, words: Vec<u64>) -> Result<Self> {
        if bits == 0 {
            return Err(Error::validation("code length must be positive"));
        }
        let w = words_for(bits);
        if words.len() != w * count {
            return Err(Error::validation(format!(
                "{} words cannot hold {count} codes of {bits} bits",
                words.len()
            )));
        }
        if bits % 64 != 0 {
            let mask = !0u64 << (bits % 64);
            for j in 0..count {
                if words[j * w + w - 1] & mask != 0 {
                    return Err(Error::validation(format!("code {j} has padding bits set")));
                }
            }
        }
        Ok(PackedCodes { bits, count, words })
    }
}

pub fn pack(codes: &BinaryCodes) -> PackedCodes {
    let bits = codes.bits();
    let w = words_for(bits);
    let mut words = vec![0u64; w * codes.len()];
    for b in 0..bits {
        for (j, &v) in codes.row(b).iter().enumerate() {
            if v == 1 {
                words[j * w + b / 64] |= 1u64 << (b % 64);
            }
        }
    }
    PackedCodes {
        bits,
        count: codes.len(),
        words,
    }
}

/// Packs a single code given as a `±1` slice.
pub fn pack_one(code: &[i8]) -> Result<Vec<u64>> {
    let mut words = vec![0u64; words_for(code.len())];
    for (b, &v) in code.iter().enumerate() {
        match v {
            1 => words[b / 64] |= 1u64 << (b % 64),
            -1 => {}
            other => return Err(Error::validation(format!("non-binary code entry {other}"))),
        }
    }
    Ok(words)
}

pub fn unpack(packed: &PackedCodes) -> BinaryCodes {
    let (bits, m) = (packed.bits, packed.count);
    let mut data = vec![-1i8; bits * m];
    for j in 0..m {
        let code = packed.code(j);
        for b in 0..bits {
            if code[b / 64] >> (b % 64) & 1 == 1 {
                data[b * m + j] = 1;
            }
        }
    }
    BinaryCodes::from_signs(bits, m, data).expect("unpacked entries are ±1")
}

#[inline]
fn distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of differing bits between two packed codes.
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "codes of {} and {} words cannot be compared",
            a.len(),
            b.len()
        )));
    }
    Ok(distance(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: u32,
}

fn check_query(db: &PackedCodes, query: &[u64]) -> Result<()> {
    if query.len() != db.words_per_code() {
        return Err(Error::validation(format!(
            "query has {} words, database codes have {}",
            query.len(),
            db.words_per_code()
        )));
    }
    Ok(())
}

/// Distances from `query` to every database code, scanned in shards.
pub fn distances(db: &PackedCodes, query: &[u64]) -> Result<Vec<u32>> {
    check_query(db, query)?;
    let w = db.words_per_code();
    let mut out = vec![0u32; db.count];
    out.par_chunks_mut(SHARD)
        .enumerate()
        .for_each(|(shard, dst)| {
            let base = shard * SHARD;
            for (k, d) in dst.iter_mut().enumerate() {
                let j = base + k;
                *d = distance(&db.words[j * w..(j + 1) * w], query);
            }
        });
    Ok(out)
}

/// The `min(k, m)` nearest codes ordered by `(distance, index)`.
pub fn search_topk(db: &PackedCodes, query: &[u64], k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    let dist = distances(db, query)?;
    // counting sort over the L + 1 possible distances keeps index order
    let mut buckets = vec![0usize; db.bits + 2];
    for &d in &dist {
        buckets[d as usize + 1] += 1;
    }
    for i in 1..buckets.len() {
        buckets[i] += buckets[i - 1];
    }
    let mut ranked = vec![
        Neighbor {
            index: 0,
            distance: 0
        };
        dist.len()
    ];
    for (j, &d) in dist.iter().enumerate() {
        let slot = &mut buckets[d as usize];
        ranked[*slot] = Neighbor {
            index: j,
            distance: d,
        };
        *slot += 1;
    }
    ranked.truncate(k.min(dist.len()));
    Ok(ranked)
}

/// All database indices within Hamming distance `radius`, ascending.
pub fn search_radius(db: &PackedCodes, query: &[u64], radius: u32) -> Result<Vec<usize>> {
    let dist = distances(db, query)?;
    Ok(dist
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= radius)
        .map(|(j, _)| j)
        .collect())
}

pub fn write_codes(packed: &PackedCodes, w: &mut impl Write) -> Result<()> {
    w.write_all(BHC_MAGIC)?;
    w.write_all(&(packed.bits as u32).to_le_bytes())?;
    w.write_all(&(packed.count as u32).to_le_bytes())?;
    for word in &packed.words {
        w.write_all(&word.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_codes(buf: &[u8]) -> Result<PackedCodes> {
    if buf.len() < 12 || &buf[..4] != BHC_MAGIC {
        return Err(Error::format(0, "missing BHC1 magic"));
    }
    let bits = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let n = words_for(bits) * count;
    if buf.len() != 12 + 8 * n {
        return Err(Error::format(
            buf.len().min(12 + 8 * n) as u64,
            format!("BHC1 file is {} bytes, header implies {}", buf.len(), 12 + 8 * n),
        ));
    }
    let words = buf[12..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PackedCodes::from_words(bits, count, words).map_err(|e| Error::format(12, e.to_string()))
}

pub fn save_codes(packed: &PackedCodes, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_codes(packed, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_codes(path: &Path) -> Result<PackedCodes> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    read_codes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Mat;
    use proptest::prelude::*;

    fn codes_from(rows: &[&[f64]]) -> BinaryCodes {
        BinaryCodes::from_mat(&Mat::from_rows(rows)).unwrap()
    }

    #[test]
    fn bit_layout() {
        let c = codes_from(&[&[1.0], &[-1.0], &[1.0], &[-1.0]]);
        assert_eq!(pack(&c).words(), &[0b0101]);
        let all = BinaryCodes::filled(64, 1, 1);
        assert_eq!(pack(&all).words(), &[u64::MAX]);
    }

    #[test]
    fn distance_extremes() {
        let a = pack_one(&[1; 32]).unwrap();
        let b = pack_one(&[-1; 32]).unwrap();
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &b).unwrap(), 32);
        assert!(hamming(&a, &[0, 0]).is_err());
    }

    #[test]
    fn topk_finds_exact_match_first() {
        let db = pack(&BinaryCodes::from_sign(&Mat::from_fn(16, 10, |i, j| {
            if (j >> (i % 4)) & 1 == 1 { 1.0 } else { -1.0 }
        })));
        let q = db.code(5).to_vec();
        let r = search_topk(&db, &q, 3).unwrap();
        assert_eq!(r[0], Neighbor { index: 5, distance: 0 });
    }

    #[test]
    fn equidistant_codes_come_back_in_index_order() {
        let db = pack(&BinaryCodes::filled(8, 6, 1));
        let q = pack_one(&[-1, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        let r = search_topk(&db, &q, 10).unwrap();
        assert_eq!(r.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
        assert!(r.iter().all(|n| n.distance == 1));
    }

    #[test]
    fn radius_edges() {
        let db = pack(&BinaryCodes::filled(4, 3, 1));
        let q = pack_one(&[-1, -1, 1, 1]).unwrap();
        assert_eq!(search_radius(&db, &q, 4).unwrap(), vec![0, 1, 2]);
        assert!(search_radius(&db, &q, 0).unwrap().is_empty());
    }

    #[test]
    fn empty_database_gives_empty_results() {
        let db = PackedCodes::from_words(8, 0, vec![]).unwrap();
        assert!(search_topk(&db, &[0], 5).unwrap().is_empty());
        assert!(search_radius(&db, &[0], 8).unwrap().is_empty());
    }

    #[test]
    fn codes_file_round_trip_and_errors() {
        let c = codes_from(&[&[1.0, -1.0, 1.0], &[-1.0, -1.0, 1.0]]);
        let p = pack(&c);
        let mut buf = Vec::new();
        write_codes(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 3 * 8);
        assert_eq!(read_codes(&buf).unwrap(), p);
        let mut bad = buf.clone();
        bad[3] = b'0';
        assert!(read_codes(&bad).is_err());
        assert!(read_codes(&buf[..buf.len() - 1]).is_err());
        // padding bit set
        let mut pad = buf.clone();
        pad[12 + 7] = 0x80;
        assert!(read_codes(&pad).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(bits in 1usize..150, m in 1usize..6, seed in any::<u64>()) {
            let mut s = seed | 1;
            let data: Vec<i8> = (0..bits * m).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                if s & 1 == 1 { 1 } else { -1 }
            }).collect();
            let codes = BinaryCodes::from_signs(bits, m, data).unwrap();
            let packed = pack(&codes);
            prop_assert_eq!(unpack(&packed), codes);
            let again = PackedCodes::from_words(bits, m, packed.words().to_vec()).unwrap();
            prop_assert_eq!(pack(&unpack(&again)), again);
        }
    }
}
