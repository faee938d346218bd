//! Feature matrices, the idx (MNIST) and BFM1 file formats, and seeded
//! train/query splits.
//!
//! BFM1 layout, all integers little-endian:
//!
//! ```text
//! "BFM1" | D: u32 | m: u32 | has_labels: u8 | D*m f32, column-major | m u32 labels (if flagged)
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Mat;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const BFM_MAGIC: &[u8; 4] = b"BFM1";

/// `D x m` real features, one column per sample, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMatrix {
    features: Mat,
    labels: Option<Vec<u32>>,
}

impl DatasetMatrix {
    pub fn new(features: Mat, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.cols() {
                return Err(Error::validation(format!(
                    "{} labels for {} samples",
                    l.len(),
                    features.cols()
                )));
            }
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("DatasetMatrix::new"));
        }
        Ok(DatasetMatrix { features, labels })
    }

    /// Builds a dataset from per-sample feature vectors.
    pub fn from_samples(samples: &[Vec<f64>], labels: Option<Vec<u32>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::validation("dataset has no samples"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::validation("dataset has zero features"));
        }
        let mut features = Mat::zeros(dim, samples.len());
        for (j, s) in samples.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::validation(format!(
                    "sample {j} has {} features, expected {dim}",
                    s.len()
                )));
            }
            for (i, &v) in s.iter().enumerate() {
                features.set(i, j, v);
            }
        }
        Self::new(features, labels)
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    /// Sample count `m`.
    pub fn len(&self) -> usize {
        self.features.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn sample(&self, j: usize) -> Vec<f64> {
        self.features.col(j)
    }

    /// Samples as rows (`m x D`), convenient for distance computations.
    pub fn samples_as_rows(&self) -> Mat {
        self.features.transpose()
    }

    /// Keeps the listed samples, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::validation("empty subset"));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&j| l[j]).collect());
        Self::new(self.features.select_cols(idx), labels)
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.features.as_mut_slice() {
            *v *= s;
        }
    }

    /// Per-feature standardization to zero mean and unit variance. Constant
    /// features are only centered. Returns the `(mean, std)` used.
    pub fn standardize(&mut self) -> (Vec<f64>, Vec<f64>) {
        let m = self.len() as f64;
        let mut means = Vec::with_capacity(self.dim());
        let mut stds = Vec::with_capacity(self.dim());
        for r in 0..self.dim() {
            let row = self.features.row_mut(r);
            let mean = row.iter().sum::<f64>() / m;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for v in row.iter_mut() {
                *v = (*v - mean) / std;
            }
            means.push(mean);
            stds.push(std);
        }
        (means, stds)
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], offset: usize) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(offset as u64, "unexpected end of file in idx header"))
}

fn parse_idx_images(buf: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad idx image magic {magic:#010x}")));
    }
    let count = be_u32(buf, 4)? as usize;
    let rows = be_u32(buf, 8)? as usize;
    let cols = be_u32(buf, 12)? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if buf.len() != expected {
        return Err(Error::format(
            buf.len().min(expected) as u64,
            format!(
                "idx image payload is {} bytes, header promises {} images of {rows}x{cols}",
                buf.len() - 16,
                count
            ),
        ));
    }
    Ok((count, dim, &buf[16..]))
}

fn parse_idx_labels(buf: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad idx label magic {magic:#010x}")));
    }
    let count = be_u32(buf, 4)? as usize;
    if buf.len() != 8 + count {
        return Err(Error::format(
            buf.len().min(8 + count) as u64,
            format!("idx label payload is {} bytes, header promises {count}", buf.len() - 8),
        ));
    }
    Ok(&buf[8..])
}

/// Loads an idx image/label pair (gzip-compressed or not). Pixel bytes become
/// reals in `[0, 255]`, or `[0, 1]` when `unit_scale` is set.
pub fn load_idx(images: &Path, labels: &Path, unit_scale: bool) -> Result<DatasetMatrix> {
    let img = read_all(images)?;
    let lab = read_all(labels)?;
    let (count, dim, pixels) = parse_idx_images(&img)?;
    let label_bytes = parse_idx_labels(&lab)?;
    if label_bytes.len() != count {
        return Err(Error::format(
            4,
            format!("{count} images but {} labels", label_bytes.len()),
        ));
    }
    if count == 0 || dim == 0 {
        return Err(Error::format(4, "idx file holds no data"));
    }
    let s = if unit_scale { 1.0 / 255.0 } else { 1.0 };
    let mut features = Mat::zeros(dim, count);
    for j in 0..count {
        for (i, &p) in pixels[j * dim..(j + 1) * dim].iter().enumerate() {
            features.set(i, j, p as f64 * s);
        }
    }
    DatasetMatrix::new(
        features,
        Some(label_bytes.iter().map(|&b| b as u32).collect()),
    )
}

pub fn save_fmat(data: &DatasetMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fmat(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_fmat(data: &DatasetMatrix, w: &mut impl Write) -> Result<()> {
    if data.len() == 0 || data.dim() == 0 {
        return Err(Error::validation("refusing to save an empty matrix"));
    }
    w.write_all(BFM_MAGIC)?;
    w.write_all(&(data.dim() as u32).to_le_bytes())?;
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    w.write_all(&[data.labels.is_some() as u8])?;
    for j in 0..data.len() {
        for i in 0..data.dim() {
            w.write_all(&(data.features.get(i, j) as f32).to_le_bytes())?;
        }
    }
    if let Some(labels) = &data.labels {
        for l in labels {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_fmat(path: &Path) -> Result<DatasetMatrix> {
    read_fmat(&read_all(path)?)
}

pub fn read_fmat(buf: &[u8]) -> Result<DatasetMatrix> {
    if buf.len() < 13 || &buf[..4] != BFM_MAGIC {
        return Err(Error::format(0, "missing BFM1 magic"));
    }
    let dim = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let has_labels = match buf[12] {
        0 => false,
        1 => true,
        f => return Err(Error::format(12, format!("bad label flag {f}"))),
    };
    if dim == 0 || count == 0 {
        return Err(Error::format(4, "BFM1 file declares an empty matrix"));
    }
    let body = 13 + 4 * dim * count;
    let expected = body + if has_labels { 4 * count } else { 0 };
    if buf.len() != expected {
        return Err(Error::format(
            buf.len().min(expected) as u64,
            format!("BFM1 file is {} bytes, header implies {expected}", buf.len()),
        ));
    }
    let mut features = Mat::zeros(dim, count);
    let mut off = 13;
    for j in 0..count {
        for i in 0..dim {
            let v = f32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
            features.set(i, j, v as f64);
            off += 4;
        }
    }
    let labels = has_labels.then(|| {
        buf[body..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    });
    DatasetMatrix::new(features, labels)
}

/// How many queries to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySelection {
    /// Uniformly at random over all samples.
    Count(usize),
    /// This many from every class (requires labels).
    PerClass(usize),
}

/// Disjoint, exhaustive partition of sample indices. Both lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub database: Vec<usize>,
    pub queries: Vec<usize>,
}

impl Split {
    pub fn apply(&self, data: &DatasetMatrix) -> Result<(DatasetMatrix, DatasetMatrix)> {
        Ok((data.subset(&self.database)?, data.subset(&self.queries)?))
    }
}

pub fn split(data: &DatasetMatrix, selection: QuerySelection, seed: u64) -> Result<Split> {
    let m = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_query = vec![false; m];
    match selection {
        QuerySelection::Count(q) => {
            if q == 0 || q >= m {
                return Err(Error::validation(format!(
                    "cannot draw {q} queries from {m} samples and keep a database"
                )));
            }
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng);
            for &j in &idx[..q] {
                is_query[j] = true;
            }
        }
        QuerySelection::PerClass(q) => {
            let labels = data
                .labels()
                .ok_or_else(|| Error::validation("stratified split needs labels"))?;
            for (class, mut members) in group_by_class(labels) {
                if q > members.len() {
                    return Err(Error::validation(format!(
                        "class {class} has {} samples, cannot draw {q} queries",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                for &j in &members[..q] {
                    is_query[j] = true;
                }
            }
            if is_query.iter().all(|&b| b) || q == 0 {
                return Err(Error::validation(
                    "stratified split leaves an empty database or query set",
                ));
            }
        }
    }
    let (queries, database): (Vec<usize>, Vec<usize>) = (0..m).partition(|&j| is_query[j]);
    Ok(Split { database, queries })
}

/// Sample indices grouped by label, classes in ascending order.
pub fn group_by_class(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(j);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy(m: usize, classes: u32) -> DatasetMatrix {
        let samples: Vec<Vec<f64>> = (0..m).map(|j| vec![j as f64, 1.0]).collect();
        DatasetMatrix::from_samples(&samples, Some((0..m as u32).map(|j| j % classes).collect()))
            .unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let d = toy(10, 2);
        let s = split(&d, QuerySelection::Count(3), 7).unwrap();
        assert_eq!((s.database.len(), s.queries.len()), (7, 3));
        let a: HashSet<_> = s.database.iter().collect();
        assert!(s.queries.iter().all(|q| !a.contains(q)));
        assert_eq!(split(&d, QuerySelection::Count(3), 7).unwrap(), s);
    }

    #[test]
    fn stratified_split_takes_one_per_class() {
        let d = toy(10, 2);
        let s = split(&d, QuerySelection::PerClass(1), 1).unwrap();
        let labels = d.labels().unwrap();
        let mut classes: Vec<u32> = s.queries.iter().map(|&j| labels[j]).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 1]);
    }

    #[test]
    fn infeasible_splits_are_rejected() {
        let d = toy(4, 2);
        assert!(split(&d, QuerySelection::Count(4), 0).is_err());
        assert!(split(&d, QuerySelection::PerClass(3), 0).is_err());
        let unlabeled = DatasetMatrix::new(d.features().clone(), None).unwrap();
        assert!(split(&unlabeled, QuerySelection::PerClass(1), 0).is_err());
    }

    #[test]
    fn fmat_round_trip() {
        let d = toy(5, 3);
        let mut buf = Vec::new();
        write_fmat(&d, &mut buf).unwrap();
        assert_eq!(read_fmat(&buf).unwrap(), d);
        let unlabeled = DatasetMatrix::new(d.features().clone(), None).unwrap();
        buf.clear();
        write_fmat(&unlabeled, &mut buf).unwrap();
        assert_eq!(read_fmat(&buf).unwrap(), unlabeled);
    }

    #[test]
    fn fmat_rejects_wrong_magic_and_truncation() {
        let mut buf = Vec::new();
        write_fmat(&toy(3, 1), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_fmat(&bad), Err(Error::Format { .. })));
        assert!(matches!(read_fmat(&buf[..buf.len() - 1]), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_dataset_is_a_validation_error() {
        assert!(matches!(
            DatasetMatrix::from_samples(&[], None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn idx_header_checks() {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 255, 10, 20]);
        assert_eq!(parse_idx_images(&img).unwrap().0, 2);
        assert!(parse_idx_images(&img[..img.len() - 1]).is_err());
        assert!(parse_idx_images(&img[..6]).is_err());
    }
}
