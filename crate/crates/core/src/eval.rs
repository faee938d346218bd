//! Ground truth construction and retrieval metrics.
//!
//! Hamming rankings break ties by ascending database index, so mAP values
//! are well defined even when many codes share a distance.

use std::fmt;

use rayon::prelude::*;

use crate::data_io::DatasetMatrix;
use crate::error::{Error, Result};
use crate::hamming::{self, Neighbor, PackedCodes};

/// Relevant database indices for each query, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    relevant: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn new(mut relevant: Vec<Vec<usize>>) -> Self {
        for r in &mut relevant {
            r.sort_unstable();
            r.dedup();
        }
        GroundTruth { relevant }
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }

    pub fn relevant(&self, q: usize) -> &[usize] {
        &self.relevant[q]
    }
}

/// Per-query Hamming rankings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedRetrieval {
    pub rankings: Vec<Vec<Neighbor>>,
}

impl RankedRetrieval {
    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact k nearest database samples of each query under Euclidean distance.
pub fn euclid_ground_truth(
    db: &DatasetMatrix,
    queries: &DatasetMatrix,
    k: usize,
) -> Result<GroundTruth> {
    if db.dim() != queries.dim() {
        return Err(Error::validation(format!(
            "database has dimension {}, queries have {}",
            db.dim(),
            queries.dim()
        )));
    }
    if k == 0 || k > db.len() {
        return Err(Error::validation(format!(
            "cannot take {k} neighbours from {} database samples",
            db.len()
        )));
    }
    let db_rows = db.samples_as_rows();
    let q_rows = queries.samples_as_rows();
    let relevant = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let query = q_rows.row(q);
            let mut d: Vec<(f64, usize)> = (0..db.len())
                .map(|j| (sq_dist(db_rows.row(j), query), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            }
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(GroundTruth::new(relevant))
}

/// Relevant items are the database samples sharing the query's label.
pub fn label_ground_truth(db_labels: &[u32], query_labels: &[u32]) -> GroundTruth {
    let relevant = query_labels
        .iter()
        .map(|&ql| {
            db_labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == ql)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    GroundTruth { relevant }
}

/// Ranks the whole database (or its first `top_n` entries) for every query.
pub fn rank_all(
    db: &PackedCodes,
    queries: &PackedCodes,
    top_n: Option<usize>,
) -> Result<RankedRetrieval> {
    if db.bits() != queries.bits() {
        return Err(Error::validation(format!(
            "database codes have {} bits, queries have {}",
            db.bits(),
            queries.bits()
        )));
    }
    let k = top_n.unwrap_or(db.len()).min(db.len()).max(1);
    let rankings = (0..queries.len())
        .map(|q| hamming::search_topk(db, queries.code(q), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedRetrieval { rankings })
}

/// Average precision of one ranking. The denominator is the full relevant
/// set, so relevant items cut off by `top_n` count as misses. An empty
/// relevant set yields 0. `relevant` must be sorted ascending.
pub fn average_precision(ranked: &[Neighbor], relevant: &[usize], top_n: Option<usize>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let n = top_n.unwrap_or(ranked.len()).min(ranked.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, nb) in ranked[..n].iter().enumerate() {
        if relevant.binary_search(&nb.index).is_ok() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanAp {
    pub value: f64,
    /// Queries whose relevant set was empty; each contributed 0.
    pub empty_relevant: usize,
}

pub fn mean_ap(rankings: &RankedRetrieval, gt: &GroundTruth, top_n: Option<usize>) -> Result<MeanAp> {
    if rankings.is_empty() {
        return Err(Error::validation("mAP needs at least one query"));
    }
    if rankings.len() != gt.len() {
        return Err(Error::validation(format!(
            "{} rankings but ground truth for {} queries",
            rankings.len(),
            gt.len()
        )));
    }
    let mut empty = 0;
    let mut total = 0.0;
    for (q, ranking) in rankings.rankings.iter().enumerate() {
        let rel = gt.relevant(q);
        if rel.is_empty() {
            empty += 1;
        }
        total += average_precision(ranking, rel, top_n);
    }
    Ok(MeanAp {
        value: total / rankings.len() as f64,
        empty_relevant: empty,
    })
}

/// Mean over queries of the relevant fraction among codes within `radius`;
/// a query retrieving nothing scores 0.
pub fn precision_at_radius(
    db: &PackedCodes,
    queries: &PackedCodes,
    gt: &GroundTruth,
    radius: u32,
) -> Result<f64> {
    if db.bits() != queries.bits() {
        return Err(Error::validation(format!(
            "database codes have {} bits, queries have {}",
            db.bits(),
            queries.bits()
        )));
    }
    if queries.len() != gt.len() {
        return Err(Error::validation(format!(
            "{} queries but ground truth for {}",
            queries.len(),
            gt.len()
        )));
    }
    if queries.is_empty() {
        return Err(Error::validation("precision needs at least one query"));
    }
    let mut total = 0.0;
    for q in 0..queries.len() {
        let got = hamming::search_radius(db, queries.code(q), radius)?;
        if got.is_empty() {
            continue;
        }
        let rel = gt.relevant(q);
        let hits = got.iter().filter(|j| rel.binary_search(j).is_ok()).count();
        total += hits as f64 / got.len() as f64;
    }
    Ok(total / queries.len() as f64)
}

/// One line of evaluation output.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub dataset: String,
    pub method: String,
    pub bits: usize,
    pub map: f64,
    pub precision_at_2: f64,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config_hash: String,
    pub top_n: Option<usize>,
    pub empty_relevant: usize,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dataset={}\tmethod={}\tbits={}\tmap={:.6}\tprecision@2={:.6}\twall_s={:.3}\tseed={}\tconfig={}\ttop_n={}\tempty_relevant={}\tties=index",
            self.dataset,
            self.method,
            self.bits,
            self.map,
            self.precision_at_2,
            self.wall_seconds,
            self.seed,
            self.config_hash,
            self.top_n.map_or_else(|| "all".to_string(), |n| n.to_string()),
            self.empty_relevant,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Mat;

    fn nb(index: usize, distance: u32) -> Neighbor {
        Neighbor { index, distance }
    }

    fn points(xs: &[f64]) -> DatasetMatrix {
        DatasetMatrix::new(Mat::from_vec(1, xs.len(), xs.to_vec()).unwrap(), None).unwrap()
    }

    #[test]
    fn euclid_one_dimensional() {
        let gt = euclid_ground_truth(&points(&[0.0, 1.0, 5.0]), &points(&[0.4]), 2).unwrap();
        assert_eq!(gt.relevant(0), &[0, 1]);
        let gt = euclid_ground_truth(&points(&[3.0, 1.0, 5.0]), &points(&[5.0]), 1).unwrap();
        assert_eq!(gt.relevant(0), &[2]);
        assert!(euclid_ground_truth(&points(&[0.0]), &points(&[0.0]), 2).unwrap_err().is_validation());
    }

    #[test]
    fn euclid_ties_go_to_lower_index() {
        let gt = euclid_ground_truth(&points(&[1.0, -1.0, 1.0]), &points(&[0.0]), 2).unwrap();
        assert_eq!(gt.relevant(0), &[0, 1]);
    }

    #[test]
    fn label_truth() {
        let gt = label_ground_truth(&[0, 1, 0, 2], &[0, 3, 2]);
        assert_eq!(gt.relevant(0), &[0, 2]);
        assert!(gt.relevant(1).is_empty());
        assert_eq!(gt.relevant(2), &[3]);
        let single = label_ground_truth(&[4, 4, 4], &[4]);
        assert_eq!(single.relevant(0), &[0, 1, 2]);
    }

    #[test]
    fn ap_examples() {
        let ranked = [nb(7, 0), nb(2, 1), nb(9, 1), nb(4, 3)];
        let ap = average_precision(&ranked, &[7, 9], None);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&ranked, &[2, 7], None), 1.0);
        let cut = average_precision(&ranked, &[4, 7], Some(3));
        assert!(cut < 1.0 && (cut - 0.5).abs() < 1e-15);
        assert_eq!(average_precision(&ranked, &[], None), 0.0);
    }

    #[test]
    fn mean_ap_examples() {
        let r = RankedRetrieval {
            rankings: vec![vec![nb(0, 0), nb(1, 1)], vec![nb(0, 0), nb(1, 1)]],
        };
        let gt = GroundTruth::new(vec![vec![0], vec![5]]);
        let m = mean_ap(&r, &gt, None).unwrap();
        assert_eq!(m.value, 0.5);
        assert_eq!(m.empty_relevant, 0);
        let empty = RankedRetrieval { rankings: vec![] };
        assert!(mean_ap(&empty, &GroundTruth::new(vec![]), None).is_err());
    }

    #[test]
    fn precision_without_neighbours_is_zero() {
        use crate::codes::BinaryCodes;
        let db = hamming::pack(&BinaryCodes::filled(8, 4, 1));
        let q = hamming::pack(&BinaryCodes::filled(8, 1, -1));
        let gt = GroundTruth::new(vec![vec![0, 1]]);
        assert_eq!(precision_at_radius(&db, &q, &gt, 2).unwrap(), 0.0);
        let q = hamming::pack(&BinaryCodes::filled(8, 1, 1));
        let all = GroundTruth::new(vec![vec![0, 1, 2, 3]]);
        assert_eq!(precision_at_radius(&db, &q, &all, 2).unwrap(), 1.0);
        assert_eq!(precision_at_radius(&db, &q, &gt, 8).unwrap(), 0.5);
    }

    #[test]
    fn report_line() {
        let r = Report {
            dataset: "toy".into(),
            method: "UH".into(),
            bits: 16,
            map: 0.25,
            precision_at_2: 0.5,
            wall_seconds: 1.0,
            seed: 3,
            config_hash: "abc".into(),
            top_n: None,
            empty_relevant: 0,
        };
        let s = r.to_string();
        assert!(s.starts_with("dataset=toy\tmethod=UH\tbits=16\tmap=0.250000"));
        assert!(s.contains("top_n=all"));
    }
}
