//! Full-catalog top-K evaluation with train items masked.

use std::collections::BTreeMap;
use std::collections::HashSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{InteractionTable, Split};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::model::{normalize_rows_in_place, ModelState};

pub const DEFAULT_KS: [usize; 3] = [10, 20, 50];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub n_users_evaluated: usize,
}

impl RankingMetrics {
    fn position(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.position(k).map(|p| self.recall[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.position(k).map(|p| self.ndcg[p])
    }

    /// `{"recall@10": .., "ndcg@10": .., ..., "n_users_evaluated": n}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (p, k) in self.ks.iter().enumerate() {
            map.insert(format!("recall@{k}"), self.recall[p].into());
        }
        for (p, k) in self.ks.iter().enumerate() {
            map.insert(format!("ndcg@{k}"), self.ndcg[p].into());
        }
        map.insert("n_users_evaluated".into(), self.n_users_evaluated.into());
        serde_json::Value::Object(map)
    }
}

/// Final embeddings held for repeated per-user scoring.
pub struct Scorer {
    n_users: usize,
    emb: Array2<f64>,
}

impl Scorer {
    /// Scores are inner products of final embeddings, optionally
    /// row-normalized first.
    pub fn new(state: &ModelState, graph: &BipartiteGraph, normalized: bool) -> Result<Self> {
        let mut emb = state.final_embeddings(graph)?;
        if normalized {
            normalize_rows_in_place(&mut emb);
        }
        Ok(Scorer {
            n_users: state.n_users,
            emb,
        })
    }

    pub fn from_embeddings(n_users: usize, emb: Array2<f64>) -> Self {
        Scorer { n_users, emb }
    }

    pub fn n_items(&self) -> usize {
        self.emb.nrows() - self.n_users
    }

    /// Scores against every item; `masked` items get `-inf`.
    pub fn score_all(&self, user: u32, masked: &[u32]) -> Vec<f64> {
        let u = self.emb.row(user as usize);
        let items = self.emb.slice(ndarray::s![self.n_users.., ..]);
        let mut scores = items.dot(&u).to_vec();
        for &i in masked {
            scores[i as usize] = f64::NEG_INFINITY;
        }
        scores
    }
}

/// Highest-scoring `k` items, ties broken by ascending item id. Items scored
/// `-inf` are never returned.
pub fn top_k(scores: &[f64], k: usize) -> Vec<u32> {
    let mut candidates: Vec<u32> = (0..scores.len() as u32)
        .filter(|&i| scores[i as usize] != f64::NEG_INFINITY)
        .collect();
    let cmp = |a: &u32, b: &u32| scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b));
    if candidates.len() > k && k > 0 {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    candidates.truncate(k);
    candidates
}

/// `|top-K ∩ T| / |T|`.
pub fn recall_at_k(ranked: &[u32], test: &HashSet<u32>, k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG with the top position discounted by `log2(2)`.
pub fn ndcg_at_k(ranked: &[u32], test: &HashSet<u32>, k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(pos, _)| 1.0 / (pos as f64 + 2.0).log2())
        .sum();
    let ideal: f64 = (0..k.min(test.len())).map(|pos| 1.0 / (pos as f64 + 2.0).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Averages per-user metrics over users with at least one item in `split`,
/// ranking with `rank(user, train_items, depth)`.
pub fn evaluate_with<R>(table: &InteractionTable, split: Split, ks: &[usize], rank: R) -> Result<RankingMetrics>
where
    R: Fn(u32, &[u32], usize) -> Vec<u32> + Sync,
{
    if split == Split::Train {
        return Err(Error::Config("evaluation split must be valid or test".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!("cutoffs must be >= 1, got {ks:?}")));
    }
    let depth = *ks.iter().max().expect("non-empty");
    let train = table.items_by_user(Split::Train);
    let held = table.items_by_user(split);
    let users: Vec<u32> = (0..table.user_count as u32)
        .filter(|&u| !held[u as usize].is_empty())
        .collect();
    if users.is_empty() {
        return Err(Error::NoEligibleUsers(split.name()));
    }
    let per_user: Vec<Vec<(f64, f64)>> = users
        .par_iter()
        .map(|&u| {
            let ranked = rank(u, &train[u as usize], depth);
            let truth: HashSet<u32> = held[u as usize].iter().copied().collect();
            ks.iter()
                .map(|&k| (recall_at_k(&ranked, &truth, k), ndcg_at_k(&ranked, &truth, k)))
                .collect()
        })
        .collect();
    let n = users.len() as f64;
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    for row in &per_user {
        for (p, &(r, g)) in row.iter().enumerate() {
            recall[p] += r;
            ndcg[p] += g;
        }
    }
    Ok(RankingMetrics {
        ks: ks.to_vec(),
        recall: recall.into_iter().map(|v| v / n).collect(),
        ndcg: ndcg.into_iter().map(|v| v / n).collect(),
        n_users_evaluated: users.len(),
    })
}

pub fn evaluate(
    state: &ModelState,
    graph: &BipartiteGraph,
    table: &InteractionTable,
    split: Split,
    ks: &[usize],
    normalized_scoring: bool,
) -> Result<RankingMetrics> {
    let scorer = Scorer::new(state, graph, normalized_scoring)?;
    evaluate_scorer(&scorer, table, split, ks)
}

pub fn evaluate_scorer(
    scorer: &Scorer,
    table: &InteractionTable,
    split: Split,
    ks: &[usize],
) -> Result<RankingMetrics> {
    evaluate_with(table, split, ks, |u, train, depth| {
        top_k(&scorer.score_all(u, train), depth)
    })
}

/// Items by train interaction count, descending; ties by ascending id.
pub fn pop_baseline(table: &InteractionTable) -> Vec<u32> {
    let counts = table.item_popularity();
    let mut items: Vec<u32> = (0..table.item_count as u32).collect();
    items.sort_by(|a, b| counts[*b as usize].cmp(&counts[*a as usize]).then(a.cmp(b)));
    items
}

pub fn evaluate_pop(table: &InteractionTable, split: Split, ks: &[usize]) -> Result<RankingMetrics> {
    let ranking = pop_baseline(table);
    evaluate_with(table, split, ks, |_, train, depth| {
        let train: HashSet<u32> = train.iter().copied().collect();
        ranking
            .iter()
            .copied()
            .filter(|i| !train.contains(i))
            .take(depth)
            .collect()
    })
}

/// Rows for the metrics CSV and JSON, keyed `recall@K` / `ndcg@K`.
pub fn metrics_map(m: &RankingMetrics) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (p, k) in m.ks.iter().enumerate() {
        out.insert(format!("recall@{k}"), m.recall[p]);
        out.insert(format!("ndcg@{k}"), m.ndcg[p]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn set(items: &[u32]) -> HashSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&[3, 1, 2], &set(&[1, 3]), 3), 1.0);
        assert_eq!(recall_at_k(&[9, 1, 8, 7], &set(&[1, 2, 3, 4]), 4), 0.25);
        // capacity bound: K < |T| with all hits
        assert_eq!(recall_at_k(&[1, 2], &set(&[1, 2, 3, 4, 5]), 2), 2.0 / 5.0);
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[4, 5, 1], &set(&[4, 5]), 3), 1.0);
        let v = ndcg_at_k(&[7, 1], &set(&[1]), 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[7, 8], &set(&[1]), 2), 0.0);
    }

    #[test]
    fn top_k_ties_and_masks() {
        let scores = [1.0, 2.0, 2.0, f64::NEG_INFINITY, 0.5];
        assert_eq!(top_k(&scores, 3), vec![1, 2, 0]);
        assert_eq!(top_k(&scores, 10), vec![1, 2, 0, 4]);
        assert_eq!(top_k(&[0.0; 4], 2), vec![0, 1]);
    }

    #[test]
    fn inner_product_argmax_ranks_first() {
        // user 0, items 0..3; item 1 equals the user, others orthogonal
        let emb = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s = Scorer::from_embeddings(1, emb);
        let scores = s.score_all(0, &[]);
        assert_eq!(top_k(&scores, 1), vec![1]);
        let masked = s.score_all(0, &[1]);
        assert!(!top_k(&masked, 3).contains(&1));
    }

    #[test]
    fn constant_item_embeddings_score_equally() {
        let emb = array![[0.3, -0.2], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let scores = Scorer::from_embeddings(1, emb).score_all(0, &[]);
        assert!(scores.iter().all(|&v| v == scores[0]));
    }

    #[test]
    fn pop_ordering() {
        let t = InteractionTable::from_pairs(3, 2, vec![(0, 0), (1, 0), (2, 0), (0, 1)]).unwrap();
        assert_eq!(pop_baseline(&t), vec![0, 1]);
        let tie = InteractionTable::from_pairs(2, 2, vec![(0, 1), (1, 0)]).unwrap();
        assert_eq!(pop_baseline(&tie), vec![0, 1]);
    }

    #[test]
    fn no_eligible_users_is_an_error() {
        let t = InteractionTable::from_pairs(1, 2, vec![(0, 0), (0, 1)]).unwrap();
        assert!(matches!(
            evaluate_pop(&t, Split::Test, &[1]),
            Err(Error::NoEligibleUsers("test"))
        ));
    }
}
