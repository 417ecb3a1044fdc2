//! Content-based candidate scoring against a purchase profile.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::catalog::{Catalog, ItemIdx, Timestamp, UserId};
use crate::error::{Error, Result};
use crate::features::{cosine, cosine_with_norms, norm, FeatureStore, FeatureVector, Source};

const DEGENERATE_SIGMA: f64 = 1e-12;

/// How per-profile-item similarities collapse into one candidate score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(Error::InvalidConfig(format!("unknown aggregation {s:?}"))),
        }
    }
}

fn aggregate(sims: impl Iterator<Item = f64>, agg: Aggregation) -> f64 {
    match agg {
        Aggregation::Max => sims.fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => {
            let (sum, n) = sims.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            sum / n as f64
        }
    }
}

pub fn score_item(
    profile: &[FeatureVector],
    candidate: &FeatureVector,
    agg: Aggregation,
) -> Result<f64> {
    if profile.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let sims = profile
        .iter()
        .map(|p| cosine(candidate, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(sims.into_iter(), agg))
}

/// Scores for one candidate pool, sorted by item index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredPool {
    scores: Vec<(ItemIdx, f64)>,
    /// Pool items skipped because the source has no vector for them.
    pub missing: usize,
}

impl ScoredPool {
    pub fn new(mut scores: Vec<(ItemIdx, f64)>) -> Self {
        scores.sort_by_key(|&(idx, _)| idx);
        scores.dedup_by_key(|&mut (idx, _)| idx);
        ScoredPool { scores, missing: 0 }
    }

    pub fn from_map(map: &BTreeMap<ItemIdx, f64>) -> Self {
        Self::new(map.iter().map(|(&k, &v)| (k, v)).collect())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, idx: ItemIdx) -> Option<f64> {
        self.scores
            .binary_search_by_key(&idx, |&(i, _)| i)
            .ok()
            .map(|pos| self.scores[pos].1)
    }

    pub fn contains(&self, idx: ItemIdx) -> bool {
        self.get(idx).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemIdx, f64)> + '_ {
        self.scores.iter().copied()
    }

    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Self {
        ScoredPool {
            scores: self.scores.iter().map(|&(i, s)| (i, f(s))).collect(),
            missing: self.missing,
        }
    }
}

/// A feature store laid out by catalog index, with norms precomputed.
///
/// EVF columns are z-scored over the store's items before use, since the
/// seven measurements live on unrelated scales.
#[derive(Debug, Clone)]
pub struct IndexedStore {
    source: Source,
    dim: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
    present: Vec<bool>,
}

impl IndexedStore {
    pub fn new(catalog: &Catalog, store: &FeatureStore) -> Self {
        let store = if store.source() == Source::Evf {
            standardize_columns(store)
        } else {
            store.clone()
        };
        let dim = store.dim();
        let mut data = vec![0.0; dim * catalog.len()];
        let mut norms = vec![0.0; catalog.len()];
        let mut present = vec![false; catalog.len()];
        for (id, v) in store.iter() {
            if let Some(idx) = catalog.index_of(id) {
                let i = idx.get();
                data[i * dim..(i + 1) * dim].copy_from_slice(v.values());
                norms[i] = norm(v.values());
                present[i] = true;
            }
        }
        IndexedStore {
            source: store.source(),
            dim,
            data,
            norms,
            present,
        }
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn has(&self, idx: ItemIdx) -> bool {
        self.present[idx.get()]
    }

    fn row(&self, idx: ItemIdx) -> &[f64] {
        let i = idx.get();
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn similarity(&self, a: ItemIdx, b: ItemIdx) -> f64 {
        cosine_with_norms(
            self.row(a),
            self.norms[a.get()],
            self.row(b),
            self.norms[b.get()],
        )
    }

    /// Scores every pool item that has a vector. Profile items without a
    /// vector are ignored; if none remain the profile counts as empty.
    pub fn score_candidates(
        &self,
        profile: &[ItemIdx],
        pool: &[ItemIdx],
        agg: Aggregation,
    ) -> Result<ScoredPool> {
        let profile: Vec<ItemIdx> = profile.iter().copied().filter(|&p| self.has(p)).collect();
        if profile.is_empty() {
            return Err(Error::EmptyProfile);
        }
        let mut scores = Vec::with_capacity(pool.len());
        let mut missing = 0;
        for &cand in pool {
            if !self.has(cand) {
                missing += 1;
                continue;
            }
            let sims = profile.iter().map(|&p| self.similarity(cand, p));
            scores.push((cand, aggregate(sims, agg)));
        }
        let mut pool = ScoredPool::new(scores);
        pool.missing = missing;
        Ok(pool)
    }
}

/// Per-dimension z-scoring over all items of the store; constant columns become 0.
pub fn standardize_columns(store: &FeatureStore) -> FeatureStore {
    let dim = store.dim();
    let n = store.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for (_, v) in store.iter() {
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for (_, v) in store.iter() {
        for ((s, x), m) in var.iter_mut().zip(v.values()).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let sd: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let vectors = store
        .iter()
        .map(|(id, v)| {
            let z = v
                .values()
                .iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((x, m), s)| {
                    if *s < DEGENERATE_SIGMA {
                        0.0
                    } else {
                        (x - m) / s
                    }
                })
                .collect();
            (id.clone(), FeatureVector::new(z).expect("finite z-scores"))
        })
        .collect();
    FeatureStore::new(store.source(), dim, vectors).expect("dimension preserved")
}

/// Candidate pool for `user` at `t`: unsold items minus the user's earlier purchases.
pub fn candidate_pool(catalog: &Catalog, profile: &[ItemIdx], t: Timestamp) -> Vec<ItemIdx> {
    let mut owned = profile.to_vec();
    owned.sort_unstable();
    catalog
        .available_at(t)
        .into_iter()
        .filter(|idx| owned.binary_search(idx).is_err())
        .collect()
}

pub fn score_pool(
    catalog: &Catalog,
    store: &IndexedStore,
    user: &UserId,
    t: Timestamp,
    agg: Aggregation,
) -> Result<ScoredPool> {
    let profile = catalog.profile_indices(user, t)?;
    let pool = candidate_pool(catalog, &profile, t);
    store.score_candidates(&profile, &pool, agg)
}

/// Population z-scores over the pool; degenerate pools map to all zeros.
pub fn standardize(pool: &ScoredPool) -> Result<ScoredPool> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let n = pool.len() as f64;
    let mu = pool.iter().map(|(_, s)| s).sum::<f64>() / n;
    let sigma = (pool.iter().map(|(_, s)| (s - mu) * (s - mu)).sum::<f64>() / n).sqrt();
    if sigma < DEGENERATE_SIGMA {
        return Ok(pool.map_scores(|_| 0.0));
    }
    Ok(pool.map_scores(|s| (s - mu) / sigma))
}

fn by_rank(a: &(ItemIdx, f64), b: &(ItemIdx, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Highest scores first; equal scores in ascending item order.
pub fn rank_top_k(pool: &ScoredPool, k: usize) -> Vec<ItemIdx> {
    let mut entries: Vec<(ItemIdx, f64)> = pool.scores.clone();
    if k < entries.len() {
        if k == 0 {
            return Vec::new();
        }
        entries.select_nth_unstable_by(k - 1, by_rank);
        entries.truncate(k);
    }
    entries.sort_by(by_rank);
    entries.into_iter().map(|(idx, _)| idx).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ItemId, ItemRecord, Transaction};
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn pool(entries: &[(u32, f64)]) -> ScoredPool {
        ScoredPool::new(entries.iter().map(|&(i, s)| (ItemIdx(i), s)).collect())
    }

    #[test]
    fn identical_candidate_scores_one() {
        let v = fv(&[0.2, 0.7, -0.1]);
        for agg in [Aggregation::Max, Aggregation::Mean] {
            assert!((score_item(std::slice::from_ref(&v), &v, agg).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn max_and_mean_aggregation() {
        let profile = [fv(&[1.0, 0.0]), fv(&[0.0, 1.0])];
        let cand = fv(&[1.0, 0.0]);
        assert_eq!(score_item(&profile, &cand, Aggregation::Max).unwrap(), 1.0);
        assert_eq!(score_item(&profile, &cand, Aggregation::Mean).unwrap(), 0.5);
        assert!(matches!(
            score_item(&[], &cand, Aggregation::Max),
            Err(Error::EmptyProfile)
        ));
        assert!(score_item(&[fv(&[1.0])], &cand, Aggregation::Max).is_err());
    }

    fn tiny_catalog() -> Catalog {
        let items = ["a", "b", "c", "d"]
            .iter()
            .map(|id| ItemRecord::new(ItemId::new(*id).unwrap()))
            .collect();
        let txs = vec![
            Transaction {
                user: UserId::new("u").unwrap(),
                timestamp: 10,
                items: vec![ItemId::new("a").unwrap()],
            },
            Transaction {
                user: UserId::new("v").unwrap(),
                timestamp: 20,
                items: vec![ItemId::new("b").unwrap()],
            },
            Transaction {
                user: UserId::new("u").unwrap(),
                timestamp: 30,
                items: vec![ItemId::new("c").unwrap()],
            },
        ];
        Catalog::new(items, txs).unwrap()
    }

    fn store(rows: &[(&str, &[f64])], source: Source) -> FeatureStore {
        let dim = rows[0].1.len();
        FeatureStore::new(
            source,
            dim,
            rows.iter()
                .map(|(id, v)| (ItemId::new(*id).unwrap(), fv(v)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn score_pool_applies_pool_rules() {
        let cat = tiny_catalog();
        let st = store(
            &[
                ("a", &[1.0, 0.0]),
                ("b", &[1.0, 0.0]),
                ("c", &[1.0, 0.0]),
                ("d", &[0.0, 1.0]),
            ],
            Source::Dnn,
        );
        let idx = IndexedStore::new(&cat, &st);
        let u = UserId::new("u").unwrap();
        let scored = score_pool(&cat, &idx, &u, 30, Aggregation::Max).unwrap();
        let at = |id: &str| cat.index_of(&ItemId::new(id).unwrap()).unwrap();
        // a is the user's own purchase, b was sold at 20 < 30
        assert!(!scored.contains(at("a")));
        assert!(!scored.contains(at("b")));
        assert!((scored.get(at("c")).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(scored.get(at("d")).unwrap(), 0.0);
        assert!(matches!(
            score_pool(&cat, &idx, &u, 10, Aggregation::Max),
            Err(Error::EmptyProfile)
        ));
    }

    #[test]
    fn items_without_vectors_are_counted() {
        let cat = tiny_catalog();
        let st = store(&[("a", &[1.0]), ("c", &[2.0])], Source::Evf);
        let idx = IndexedStore::new(&cat, &st);
        let scored = score_pool(&cat, &idx, &UserId::new("u").unwrap(), 30, Aggregation::Max);
        // EVF is z-scored: a -> -1, c -> 1; d has no vector.
        let scored = scored.unwrap();
        assert_eq!(scored.missing, 1);
        assert_eq!(scored.len(), 1);
    }

    #[test]
    fn standardize_examples() {
        let z = standardize(&pool(&[(0, 1.0), (1, 3.0)])).unwrap();
        assert_eq!(z.get(ItemIdx(0)), Some(-1.0));
        assert_eq!(z.get(ItemIdx(1)), Some(1.0));
        let flat = standardize(&pool(&[(0, 0.4), (1, 0.4), (2, 0.4)])).unwrap();
        assert!(flat.iter().all(|(_, s)| s == 0.0));
        assert!(matches!(
            standardize(&ScoredPool::default()),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(
            rank_top_k(&pool(&[(0, 0.5), (1, 0.9)]), 1),
            vec![ItemIdx(1)]
        );
        assert_eq!(
            rank_top_k(&pool(&[(1, 0.5), (0, 0.5)]), 2),
            vec![ItemIdx(0), ItemIdx(1)]
        );
        assert_eq!(
            rank_top_k(&pool(&[(0, 0.1), (1, 0.3), (2, 0.2)]), 10),
            vec![ItemIdx(1), ItemIdx(2), ItemIdx(0)]
        );
        assert!(rank_top_k(&pool(&[(0, 0.1)]), 0).is_empty());
    }

    #[test]
    fn column_standardization_zeroes_constant_columns() {
        let st = store(&[("a", &[1.0, 5.0]), ("b", &[3.0, 5.0])], Source::Evf);
        let z = standardize_columns(&st);
        assert_eq!(
            z.get(&ItemId::new("a").unwrap()).unwrap().values(),
            &[-1.0, 0.0]
        );
        assert_eq!(
            z.get(&ItemId::new("b").unwrap()).unwrap().values(),
            &[1.0, 0.0]
        );
    }

    fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..40)
    }

    proptest! {
        #[test]
        fn rank_invariant_under_positive_affine(
            scores in scores_strategy(), a in 0.01f64..20.0, b in -10.0f64..10.0, k in 1usize..15,
        ) {
            // quantize so the affine map cannot collapse or reorder distinct values
            let scores: Vec<f64> = scores.iter().map(|s| (s * 8.0).round() / 8.0).collect();
            let base = ScoredPool::new(scores.iter().enumerate().map(|(i, &s)| (ItemIdx(i as u32), s)).collect());
            let moved = base.map_scores(|s| a * s + b);
            let ranked = rank_top_k(&base, k);
            prop_assert_eq!(&ranked, &rank_top_k(&moved, k));
            prop_assert_eq!(ranked, rank_top_k(&standardize(&base).unwrap(), k));
        }

        #[test]
        fn standardize_is_idempotent(scores in scores_strategy()) {
            let base = ScoredPool::new(scores.iter().enumerate().map(|(i, &s)| (ItemIdx(i as u32), s)).collect());
            let once = standardize(&base).unwrap();
            let twice = standardize(&once).unwrap();
            for ((_, x), (_, y)) in once.iter().zip(twice.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn max_dominates_mean_and_grows_with_profile(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..6),
            cand in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let profile: Vec<FeatureVector> = rows.iter().map(|r| fv(r)).collect();
            let cand = fv(&cand);
            let max = score_item(&profile, &cand, Aggregation::Max).unwrap();
            let mean = score_item(&profile, &cand, Aggregation::Mean).unwrap();
            prop_assert!(max >= mean - 1e-15);
            let smaller = score_item(&profile[..profile.len() - 1], &cand, Aggregation::Max).unwrap();
            prop_assert!(max >= smaller);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-1.0f64..1.0, 5),
            b in prop::collection::vec(-1.0f64..1.0, 5),
            s in 0.1f64..100.0,
        ) {
            let (va, vb) = (fv(&a), fv(&b));
            let scaled = fv(&a.iter().map(|x| x * s).collect::<Vec<_>>());
            let c = cosine(&va, &vb).unwrap();
            prop_assert_eq!(c, cosine(&vb, &va).unwrap());
            prop_assert!((c - cosine(&scaled, &vb).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
