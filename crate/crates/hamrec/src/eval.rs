//! Ranking-quality metrics over a held-out split using exported hard codes.
//!
//! Full-ranking protocol: every user with test events ranks all items except
//! their train items, scored and tie-broken exactly like `retrieval::topk_scan`.
//! Relevance is binary; NDCG uses log2 discounts.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{BipartiteGraph, InteractionDataset};
use crate::hamming::CodeMatrix;
use crate::retrieval::{build_index, topk_scan, IdSet, RetrievalError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("user {0} is not in the user code matrix (rows: {1})")]
    UserMissing(u32, usize),
    #[error("item {0} is not in the item code matrix (rows: {1})")]
    ItemMissing(u32, usize),
    #[error("test split has no events")]
    NoTestEvents,
    #[error("ks list is empty or contains zero")]
    BadKs,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// One (k, metrics) row.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MetricPoint {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UserMetrics {
    pub user: u32,
    pub test_items: usize,
    pub points: Vec<MetricPoint>,
}

/// Per-k Recall/NDCG/HitRate, per user and averaged.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsTable {
    pub ks: Vec<usize>,
    pub evaluated_users: usize,
    pub mean: Vec<MetricPoint>,
    pub per_user: Vec<UserMetrics>,
}

impl MetricsTable {
    /// Mean row for a given k.
    pub fn mean_at(&self, k: usize) -> Option<MetricPoint> {
        self.mean.iter().find(|p| p.k == k).copied()
    }

    /// Aligned plain-text table of the means.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>6}  {:>10}  {:>10}  {:>10}\n",
            "k", "recall", "ndcg", "hitrate"
        ));
        for p in &self.mean {
            out.push_str(&format!(
                "{:>6}  {:>10.6}  {:>10.6}  {:>10.6}\n",
                p.k, p.recall, p.ndcg, p.hit
            ));
        }
        out.push_str(&format!("users evaluated: {}\n", self.evaluated_users));
        out
    }
}

/// Evaluates test ranking quality of user/item codes.
///
/// `train_graph` supplies the per-user exclusion lists; pass a graph built
/// from an empty event set to rank over all items.
pub fn evaluate(
    user_codes: &CodeMatrix,
    item_codes: &CodeMatrix,
    test: &InteractionDataset,
    train_graph: &BipartiteGraph,
    ks: &[usize],
) -> Result<MetricsTable, EvalError> {
    if test.is_empty() {
        return Err(EvalError::NoTestEvents);
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::BadKs);
    }
    for ev in &test.events {
        if ev.user as usize >= user_codes.rows() {
            return Err(EvalError::UserMissing(ev.user, user_codes.rows()));
        }
        if ev.item as usize >= item_codes.rows() {
            return Err(EvalError::ItemMissing(ev.item, item_codes.rows()));
        }
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let kmax = *ks.last().expect("non-empty ks");

    let index = build_index(item_codes.clone(), None)?;

    // Test items per user, ascending user order.
    let mut per_user_items: Vec<(u32, Vec<u32>)> = {
        let mut map: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
        for ev in &test.events {
            map.entry(ev.user).or_default().push(ev.item);
        }
        map.into_iter().collect()
    };
    for (_, items) in per_user_items.iter_mut() {
        items.sort_unstable();
        items.dedup();
    }

    let per_user: Vec<UserMetrics> = per_user_items
        .par_iter()
        .map(|(user, test_items)| {
            let exclude = IdSet::from_sorted(train_graph.user_neighbors(*user));
            let query = user_codes.code(*user as usize);
            let result =
                topk_scan(&index, &query, kmax, &exclude).expect("validated query shape");
            let relevant: Vec<bool> = result
                .hits
                .iter()
                .map(|(id, _)| test_items.binary_search(id).is_ok())
                .collect();
            let points = ks
                .iter()
                .map(|&k| metric_point(k, &relevant, test_items.len()))
                .collect();
            UserMetrics {
                user: *user,
                test_items: test_items.len(),
                points,
            }
        })
        .collect();

    let evaluated_users = per_user.len();
    let mean = ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let inv = 1.0 / evaluated_users as f64;
            let mut acc = MetricPoint {
                k,
                recall: 0.0,
                ndcg: 0.0,
                hit: 0.0,
            };
            for u in &per_user {
                acc.recall += u.points[ki].recall * inv;
                acc.ndcg += u.points[ki].ndcg * inv;
                acc.hit += u.points[ki].hit * inv;
            }
            acc
        })
        .collect();

    Ok(MetricsTable {
        ks,
        evaluated_users,
        mean,
        per_user,
    })
}

/// Binary-relevance metrics from a relevance mask over ranked positions.
fn metric_point(k: usize, relevant: &[bool], test_count: usize) -> MetricPoint {
    let top = relevant.iter().take(k);
    let mut hits = 0usize;
    let mut dcg = 0.0f64;
    for (pos, &rel) in top.enumerate() {
        if rel {
            hits += 1;
            // 1-based rank p contributes 1/log2(p + 1).
            dcg += 1.0 / ((pos as f64 + 2.0).log2());
        }
    }
    let ideal = test_count.min(k);
    let idcg: f64 = (0..ideal).map(|i| 1.0 / ((i as f64 + 2.0).log2())).sum();
    MetricPoint {
        k,
        recall: hits as f64 / test_count as f64,
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
        hit: if hits > 0 { 1.0 } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, parse_interactions};
    use crate::hamming::HashCode;
    use crate::seed::stream_rng;
    use rand::Rng;
    use std::io::Cursor;

    fn code_dist(base: &[i8], flips: &[usize]) -> HashCode {
        let mut v = base.to_vec();
        for &f in flips {
            v[f] = -v[f];
        }
        HashCode::pack(&v).unwrap()
    }

    fn empty_graph(users: usize, items: usize) -> BipartiteGraph {
        let mut text = String::new();
        for u in 0..users {
            text.push_str(&format!("u{u}\ti0\n"));
        }
        for i in 0..items {
            text.push_str(&format!("u0\ti{i}\n"));
        }
        let ds = parse_interactions(Cursor::new(text), "mem").unwrap();
        let empty = InteractionDataset {
            user_ids: ds.user_ids.clone(),
            item_ids: ds.item_ids.clone(),
            events: vec![],
        };
        build_graph(&empty)
    }

    fn test_split_single(user: u32, item: u32, users: usize, items: usize) -> InteractionDataset {
        let mut text = String::new();
        for u in 0..users {
            text.push_str(&format!("u{u}\ti0\n"));
        }
        for i in 0..items {
            text.push_str(&format!("u0\ti{i}\n"));
        }
        let ds = parse_interactions(Cursor::new(text), "mem").unwrap();
        InteractionDataset {
            user_ids: ds.user_ids.clone(),
            item_ids: ds.item_ids.clone(),
            events: vec![crate::graph::Event {
                user,
                item,
                timestamp: 0,
            }],
        }
    }

    #[test]
    fn single_test_item_at_rank_one() {
        let base = [1i8; 8];
        // Item 2 equals the user code; others are farther away.
        let items = CodeMatrix::from_codes(&[
            code_dist(&base, &[0, 1, 2]),
            code_dist(&base, &[0, 1]),
            code_dist(&base, &[]),
            code_dist(&base, &[0, 1, 2, 3]),
            code_dist(&base, &[0, 1, 2, 3, 4]),
        ])
        .unwrap();
        let users = CodeMatrix::from_codes(&[HashCode::pack(&base).unwrap()]).unwrap();
        let test = test_split_single(0, 2, 1, 5);
        let table = evaluate(&users, &items, &test, &empty_graph(1, 5), &[10]).unwrap();
        let p = table.mean_at(10).unwrap();
        assert_eq!(p.recall, 1.0);
        assert_eq!(p.ndcg, 1.0);
        assert_eq!(p.hit, 1.0);
    }

    #[test]
    fn single_test_item_at_rank_three_halves_ndcg() {
        let base = [1i8; 8];
        // Scores: item0 = 8, item1 = 6, item2 (test) = 4, rest lower.
        let items = CodeMatrix::from_codes(&[
            code_dist(&base, &[]),
            code_dist(&base, &[0]),
            code_dist(&base, &[0, 1]),
            code_dist(&base, &[0, 1, 2, 3]),
            code_dist(&base, &[0, 1, 2, 3, 4]),
        ])
        .unwrap();
        let users = CodeMatrix::from_codes(&[HashCode::pack(&base).unwrap()]).unwrap();
        let test = test_split_single(0, 2, 1, 5);
        let table = evaluate(&users, &items, &test, &empty_graph(1, 5), &[10]).unwrap();
        let p = table.mean_at(10).unwrap();
        assert_eq!(p.recall, 1.0);
        assert!((p.ndcg - 0.5).abs() < 1e-12, "ndcg {}", p.ndcg);
        assert_eq!(p.hit, 1.0);
    }

    #[test]
    fn train_items_are_excluded_from_candidates() {
        let base = [1i8; 8];
        // Item 0 would rank first but is a train item of user 0.
        let items = CodeMatrix::from_codes(&[
            code_dist(&base, &[]),
            code_dist(&base, &[0]),
            code_dist(&base, &[0, 1, 2]),
        ])
        .unwrap();
        let users = CodeMatrix::from_codes(&[HashCode::pack(&base).unwrap()]).unwrap();
        let ds = parse_interactions(Cursor::new("u0\ti0\nu0\ti1\nu0\ti2\n"), "mem").unwrap();
        let train = InteractionDataset {
            user_ids: ds.user_ids.clone(),
            item_ids: ds.item_ids.clone(),
            events: vec![crate::graph::Event {
                user: 0,
                item: 0,
                timestamp: 0,
            }],
        };
        let test = InteractionDataset {
            user_ids: ds.user_ids.clone(),
            item_ids: ds.item_ids.clone(),
            events: vec![crate::graph::Event {
                user: 0,
                item: 1,
                timestamp: 1,
            }],
        };
        let table = evaluate(&users, &items, &test, &build_graph(&train), &[1]).unwrap();
        // With item 0 excluded the test item ranks first.
        assert_eq!(table.mean_at(1).unwrap().recall, 1.0);
    }

    /// Self-contained reference evaluator used as the oracle.
    fn naive_metrics(
        user_codes: &CodeMatrix,
        item_codes: &CodeMatrix,
        test: &InteractionDataset,
        train_graph: &BipartiteGraph,
        k: usize,
    ) -> (f64, f64, f64, usize) {
        let mut users: Vec<u32> = test.events.iter().map(|e| e.user).collect();
        users.sort_unstable();
        users.dedup();
        let (mut recall, mut ndcg, mut hit) = (0.0, 0.0, 0.0);
        for &u in &users {
            let tset: std::collections::HashSet<u32> = test
                .events
                .iter()
                .filter(|e| e.user == u)
                .map(|e| e.item)
                .collect();
            let exclude: std::collections::HashSet<u32> =
                train_graph.user_neighbors(u).iter().copied().collect();
            let q = user_codes.code(u as usize);
            let mut scored: Vec<(u32, i32)> = (0..item_codes.rows() as u32)
                .filter(|i| !exclude.contains(i))
                .map(|i| (i, q.similarity_score(&item_codes.code(i as usize))))
                .collect();
            scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(k);
            let hits: Vec<usize> = scored
                .iter()
                .enumerate()
                .filter(|(_, (i, _))| tset.contains(i))
                .map(|(pos, _)| pos)
                .collect();
            recall += hits.len() as f64 / tset.len() as f64;
            let dcg: f64 = hits.iter().map(|&p| 1.0 / ((p as f64 + 2.0).log2())).sum();
            let idcg: f64 = (0..tset.len().min(k))
                .map(|i| 1.0 / ((i as f64 + 2.0).log2()))
                .sum();
            ndcg += dcg / idcg;
            hit += if hits.is_empty() { 0.0 } else { 1.0 };
        }
        let n = users.len() as f64;
        (recall / n, ndcg / n, hit / n, users.len())
    }

    #[test]
    fn evaluate_matches_naive_oracle_on_random_instance() {
        let mut rng = stream_rng(41, "eval");
        let users_n = 12usize;
        let items_n = 40usize;
        let mut text = String::new();
        for u in 0..users_n {
            for i in 0..items_n {
                if rng.gen::<f64>() < 0.2 {
                    text.push_str(&format!("u{u}\ti{i}\t{}\n", rng.gen_range(0..1000)));
                }
            }
        }
        let ds = parse_interactions(Cursor::new(text), "mem").unwrap();
        let out = crate::graph::split(
            &ds,
            &crate::graph::SplitSpec {
                policy: crate::graph::SplitPolicy::LeaveLastOne,
                seed: 5,
            },
        )
        .unwrap();
        let g = build_graph(&out.train);
        let mk_codes = |rows: usize, rng: &mut rand_chacha::ChaCha8Rng| -> CodeMatrix {
            let codes: Vec<HashCode> = (0..rows)
                .map(|_| HashCode::from_words(16, vec![rng.gen::<u64>() & 0xffff]).unwrap())
                .collect();
            CodeMatrix::from_codes(&codes).unwrap()
        };
        let ucodes = mk_codes(ds.num_users(), &mut rng);
        let icodes = mk_codes(ds.num_items(), &mut rng);
        for k in [1usize, 5, 10] {
            let table = evaluate(&ucodes, &icodes, &out.test, &g, &[k]).unwrap();
            let (recall, ndcg, hit, n) = naive_metrics(&ucodes, &icodes, &out.test, &g, k);
            assert_eq!(table.evaluated_users, n);
            let p = table.mean_at(k).unwrap();
            assert!((p.recall - recall).abs() < 1e-12);
            assert!((p.ndcg - ndcg).abs() < 1e-12);
            assert!((p.hit - hit).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_monotone_in_k_and_bounded() {
        let mut rng = stream_rng(42, "mono");
        let users_n = 10usize;
        let items_n = 30usize;
        let mut text = String::new();
        for u in 0..users_n {
            for i in 0..items_n {
                if rng.gen::<f64>() < 0.3 {
                    text.push_str(&format!("u{u}\ti{i}\t{}\n", rng.gen_range(0..100)));
                }
            }
        }
        let ds = parse_interactions(Cursor::new(text), "mem").unwrap();
        let out = crate::graph::split(
            &ds,
            &crate::graph::SplitSpec {
                policy: crate::graph::SplitPolicy::LeaveRandomK(2),
                seed: 7,
            },
        )
        .unwrap();
        let g = build_graph(&out.train);
        let codes: Vec<HashCode> = (0..(users_n + items_n))
            .map(|_| HashCode::from_words(16, vec![rng.gen::<u64>() & 0xffff]).unwrap())
            .collect();
        let ucodes = CodeMatrix::from_codes(&codes[..users_n]).unwrap();
        let icodes = CodeMatrix::from_codes(&codes[users_n..]).unwrap();
        let ks = [1usize, 3, 5, 10, 20];
        let table = evaluate(&ucodes, &icodes, &out.test, &g, &ks).unwrap();
        for u in &table.per_user {
            for w in u.points.windows(2) {
                assert!(w[1].recall >= w[0].recall);
                assert!(w[1].hit >= w[0].hit);
            }
            for p in &u.points {
                for v in [p.recall, p.ndcg, p.hit] {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        // Means are the averages of per-user values.
        for (ki, &k) in table.ks.iter().enumerate() {
            let avg: f64 = table.per_user.iter().map(|u| u.points[ki].recall).sum::<f64>()
                / table.per_user.len() as f64;
            assert!((table.mean_at(k).unwrap().recall - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn no_exclusions_ranks_over_all_items() {
        let base = [1i8; 8];
        let items = CodeMatrix::from_codes(&[
            code_dist(&base, &[]),
            code_dist(&base, &[0]),
            code_dist(&base, &[0, 1]),
        ])
        .unwrap();
        let users = CodeMatrix::from_codes(&[HashCode::pack(&base).unwrap()]).unwrap();
        let test = test_split_single(0, 1, 1, 3);
        let table = evaluate(&users, &items, &test, &empty_graph(1, 3), &[3]).unwrap();
        // All 3 items are candidates; test item sits at rank 2.
        let p = table.mean_at(3).unwrap();
        assert_eq!(p.recall, 1.0);
        assert!((p.ndcg - 1.0 / 3.0f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn missing_user_code_is_an_error() {
        let base = [1i8; 8];
        let users = CodeMatrix::from_codes(&[HashCode::pack(&base).unwrap()]).unwrap();
        let items = users.clone();
        let test = test_split_single(5, 0, 6, 1);
        let err = evaluate(&users, &items, &test, &empty_graph(6, 1), &[5]).unwrap_err();
        assert!(matches!(err, EvalError::UserMissing(5, 1)));
    }
}
