//! `L x m` binary code matrices over {-1, +1}, one column per sample.

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// sign with the tie rule used everywhere in the crate: `sign(0) = +1`.
#[inline]
pub fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BinaryCodes {
    bits: usize,
    count: usize,
    data: Vec<i8>,
}

impl BinaryCodes {
    /// Elementwise sign of `h`.
    pub fn from_sign(h: &Mat) -> Self {
        BinaryCodes {
            bits: h.rows(),
            count: h.cols(),
            data: h.as_slice().iter().map(|&v| sign(v)).collect(),
        }
    }

    /// Accepts a real matrix whose entries are exactly -1 or +1.
    pub fn from_mat(m: &Mat) -> Result<Self> {
        if let Some(bad) = m.as_slice().iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::validation(format!("non-binary code entry {bad}")));
        }
        Ok(Self::from_sign(m))
    }

    pub fn from_signs(bits: usize, count: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != bits * count {
            return Err(Error::validation(format!(
                "{} entries cannot fill {bits}x{count} codes",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::validation(format!("non-binary code entry {bad}")));
        }
        Ok(BinaryCodes { bits, count, data })
    }

    pub fn filled(bits: usize, count: usize, value: i8) -> Self {
        assert!(value == 1 || value == -1);
        BinaryCodes {
            bits,
            count,
            data: vec![value; bits * count],
        }
    }

    /// Code length `L`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Number of coded samples `m`.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn get(&self, bit: usize, sample: usize) -> i8 {
        self.data[bit * self.count + sample]
    }

    #[inline]
    pub fn set(&mut self, bit: usize, sample: usize, v: i8) {
        debug_assert!(v == 1 || v == -1);
        self.data[bit * self.count + sample] = v;
    }

    pub fn row(&self, bit: usize) -> &[i8] {
        &self.data[bit * self.count..(bit + 1) * self.count]
    }

    pub fn row_mut(&mut self, bit: usize) -> &mut [i8] {
        &mut self.data[bit * self.count..(bit + 1) * self.count]
    }

    /// The code of one sample as a length-`L` vector.
    pub fn code(&self, sample: usize) -> Vec<i8> {
        (0..self.bits).map(|b| self.get(b, sample)).collect()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.data
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(
            self.bits,
            self.count,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("codes are non-empty and finite")
    }

    /// Fraction of entries equal in both code sets.
    pub fn agreement(&self, other: &BinaryCodes) -> f64 {
        assert_eq!((self.bits, self.count), (other.bits, other.count));
        let same = self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.data.len() as f64
    }

    /// Keeps the listed samples, in order.
    pub fn select(&self, idx: &[usize]) -> BinaryCodes {
        let mut data = Vec::with_capacity(self.bits * idx.len());
        for b in 0..self.bits {
            let row = self.row(b);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        BinaryCodes {
            bits: self.bits,
            count: idx.len(),
            data,
        }
    }
}
