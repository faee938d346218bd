mod common;

use bdnn::codes::BinaryCodes;
use bdnn::eval::{self, GroundTruth};
use bdnn::hamming::{self, PackedCodes};
use common::*;
use proptest::prelude::*;
use rand::Rng;

struct Case {
    db: BinaryCodes,
    queries: BinaryCodes,
    relevant: Vec<Vec<usize>>,
}

fn case(bits: usize, m: usize, nq: usize, seed: u64) -> Case {
    let mut r = rng(seed);
    let db = random_codes(bits, m, &mut r);
    let queries = random_codes(bits, nq, &mut r);
    let relevant = (0..nq)
        .map(|_| (0..m).filter(|_| r.random_bool(0.3)).collect())
        .collect();
    Case { db, queries, relevant }
}

fn packed(c: &Case) -> (PackedCodes, PackedCodes) {
    (hamming::pack(&c.db), hamming::pack(&c.queries))
}

fn map_of(c: &Case, top_n: Option<usize>) -> f64 {
    let (db, qs) = packed(c);
    let ranked = eval::rank_all(&db, &qs, None).unwrap();
    eval::mean_ap(&ranked, &GroundTruth::new(c.relevant.clone()), top_n)
        .unwrap()
        .value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_lie_in_the_unit_interval(bits in 1usize..70, m in 1usize..40, nq in 1usize..6, seed: u64) {
        let c = case(bits, m, nq, seed);
        let (db, qs) = packed(&c);
        let gt = GroundTruth::new(c.relevant.clone());
        let map = map_of(&c, None);
        let p = eval::precision_at_radius(&db, &qs, &gt, 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&map));
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn hamming_matches_the_inner_product(bits in 1usize..200, seed: u64) {
        let mut r = rng(seed);
        let a = random_codes(bits, 1, &mut r).code(0);
        let b = random_codes(bits, 1, &mut r).code(0);
        let dot: i64 = a.iter().zip(&b).map(|(&x, &y)| x as i64 * y as i64).sum();
        let d = hamming::hamming(&hamming::pack_one(&a).unwrap(), &hamming::pack_one(&b).unwrap()).unwrap();
        prop_assert_eq!(2 * d as i64, bits as i64 - dot);
    }

    #[test]
    fn query_order_does_not_change_the_mean(bits in 1usize..20, m in 1usize..30, nq in 2usize..6, seed: u64) {
        let c = case(bits, m, nq, seed);
        let order: Vec<usize> = (0..nq).rev().collect();
        let flipped = Case {
            db: c.db.clone(),
            queries: c.queries.select(&order),
            relevant: order.iter().map(|&q| c.relevant[q].clone()).collect(),
        };
        prop_assert!((map_of(&c, None) - map_of(&flipped, None)).abs() < 1e-12);
    }

    #[test]
    fn radius_precision_ignores_database_order(bits in 1usize..12, m in 1usize..30, seed: u64) {
        let c = case(bits, m, 3, seed);
        let perm: Vec<usize> = (0..m).rev().collect();
        // new index i holds old index perm[i]
        let mut inverse = vec![0; m];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let moved = Case {
            db: c.db.select(&perm),
            queries: c.queries.clone(),
            relevant: c.relevant.iter().map(|r| r.iter().map(|&j| inverse[j]).collect()).collect(),
        };
        let p = |c: &Case| {
            let (db, qs) = packed(c);
            eval::precision_at_radius(&db, &qs, &GroundTruth::new(c.relevant.clone()), 2).unwrap()
        };
        prop_assert!((p(&c) - p(&moved)).abs() < 1e-12);
    }

    #[test]
    fn radius_search_is_a_prefix_of_the_ranking(bits in 1usize..16, m in 1usize..50, radius in 0u32..16, seed: u64) {
        let c = case(bits, m, 1, seed);
        let (db, qs) = packed(&c);
        let q = qs.code(0);
        let full = hamming::search_topk(&db, q, m).unwrap();
        let mut within: Vec<usize> = full.iter().take_while(|n| n.distance <= radius).map(|n| n.index).collect();
        within.sort_unstable();
        prop_assert_eq!(hamming::search_radius(&db, q, radius).unwrap(), within);
    }

    #[test]
    fn truncating_at_the_database_size_changes_nothing(bits in 1usize..20, m in 1usize..30, seed: u64) {
        let c = case(bits, m, 3, seed);
        prop_assert_eq!(map_of(&c, Some(m)), map_of(&c, None));
        prop_assert!(map_of(&c, Some(1)) <= map_of(&c, None) + 1e-12);
    }

    #[test]
    fn full_radius_precision_is_the_relevant_fraction(bits in 1usize..20, m in 1usize..30, seed: u64) {
        let c = case(bits, m, 4, seed);
        let (db, qs) = packed(&c);
        let p = eval::precision_at_radius(&db, &qs, &GroundTruth::new(c.relevant.clone()), bits as u32).unwrap();
        let want = c.relevant.iter().map(|r| r.len() as f64 / m as f64).sum::<f64>() / c.relevant.len() as f64;
        prop_assert!((p - want).abs() < 1e-12);
    }
}

#[test]
fn perfect_and_reversed_rankings() {
    use bdnn::hamming::Neighbor;
    let ranked: Vec<Neighbor> = (0..6).map(|index| Neighbor { index, distance: index as u32 }).collect();
    assert_eq!(eval::average_precision(&ranked, &[0, 1, 2], None), 1.0);
    let ap = eval::average_precision(&ranked, &[3, 4, 5], None);
    let want = (1.0 / 4.0 + 2.0 / 5.0 + 3.0 / 6.0) / 3.0;
    assert!((ap - want).abs() < 1e-15);
    assert_eq!(eval::average_precision(&ranked, &[5], Some(3)), 0.0);
    assert_eq!(eval::average_precision(&ranked, &[], None), 0.0);
}

#[test]
fn codes_files_round_trip() {
    let mut r = rng(8);
    let codes = random_codes(70, 13, &mut r);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bhc");
    hamming::save_codes(&hamming::pack(&codes), &path).unwrap();
    let back = hamming::load_codes(&path).unwrap();
    assert_eq!(hamming::unpack(&back), codes);
    std::fs::write(&path, b"BHC1\x05").unwrap();
    assert!(hamming::load_codes(&path).is_err());
}
