//! Deterministic synthetic catalogs with planted cluster preferences.
//!
//! Items are dealt round-robin into clusters. Each cluster owns a unit-norm
//! embedding centre, a point in EVF space and a small palette of metadata
//! tokens; each user prefers one cluster and buys from it. The resulting files
//! have the same layout as a real data directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::catalog::{Attribute, Catalog, ItemId, ItemRecord, Transaction, UserId};
use crate::dataset::{DNN_FILE, EVF_FILE, METADATA_FILE, TRANSACTIONS_FILE};
use crate::error::{Error, Result};
use crate::evf::EVF_DIM;
use crate::features::{FeatureStore, FeatureVector, Source};

const FIRST_TIMESTAMP: i64 = 1_500_000_000;
const TIMESTAMP_STEP: i64 = 3_600;
const PALETTE_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub embedding_dim: usize,
    pub noise_sigma: f64,
    pub evf_noise_sigma: f64,
    /// Inclusive range of items bought per user.
    pub purchases_per_user: (usize, usize),
    /// Probability that each metadata attribute is drawn from the item's own cluster.
    pub metadata_fidelity: f64,
    /// Probability that a purchase is drawn from the user's preferred cluster.
    pub cluster_affinity: f64,
    /// Probability that a transaction bundles two items.
    pub multi_item_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1400,
            n_items: 3500,
            n_clusters: 10,
            embedding_dim: 64,
            noise_sigma: 0.05,
            evf_noise_sigma: 0.15,
            purchases_per_user: (1, 3),
            metadata_fidelity: 0.9,
            cluster_affinity: 1.0,
            multi_item_prob: 0.1,
            seed: 42,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("n_clusters", self.n_clusters),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if self.n_clusters > self.n_items {
            return Err(invalid(format!(
                "n_clusters ({}) exceeds n_items ({})",
                self.n_clusters, self.n_items
            )));
        }
        let (lo, hi) = self.purchases_per_user;
        if lo == 0 || lo > hi {
            return Err(invalid(
                "purchases_per_user must be a range lo-hi with 1 <= lo <= hi",
            ));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("evf_noise_sigma", self.evf_noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and non-negative")));
            }
        }
        for (name, v) in [
            ("metadata_fidelity", self.metadata_fidelity),
            ("cluster_affinity", self.cluster_affinity),
            ("multi_item_prob", self.multi_item_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unlisted keys keep defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {lineno}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || invalid(format!("line {lineno}: bad value {value:?} for {key}"));
            let int = || value.parse::<usize>().map_err(|_| bad());
            let real = || value.parse::<f64>().map_err(|_| bad());
            match key {
                "n_users" => cfg.n_users = int()?,
                "n_items" => cfg.n_items = int()?,
                "n_clusters" => cfg.n_clusters = int()?,
                "embedding_dim" => cfg.embedding_dim = int()?,
                "noise_sigma" => cfg.noise_sigma = real()?,
                "evf_noise_sigma" => cfg.evf_noise_sigma = real()?,
                "metadata_fidelity" => cfg.metadata_fidelity = real()?,
                "cluster_affinity" => cfg.cluster_affinity = real()?,
                "multi_item_prob" => cfg.multi_item_prob = real()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "purchases_per_user" => {
                    let (lo, hi) = value.split_once('-').unwrap_or((value, value));
                    cfg.purchases_per_user = (
                        lo.trim().parse().map_err(|_| bad())?,
                        hi.trim().parse().map_err(|_| bad())?,
                    );
                }
                _ => return Err(invalid(format!("line {lineno}: unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_users = {}", self.n_users);
        let _ = writeln!(s, "n_items = {}", self.n_items);
        let _ = writeln!(s, "n_clusters = {}", self.n_clusters);
        let _ = writeln!(s, "embedding_dim = {}", self.embedding_dim);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "evf_noise_sigma = {}", self.evf_noise_sigma);
        let (lo, hi) = self.purchases_per_user;
        let _ = writeln!(s, "purchases_per_user = {lo}-{hi}");
        let _ = writeln!(s, "metadata_fidelity = {}", self.metadata_fidelity);
        let _ = writeln!(s, "cluster_affinity = {}", self.cluster_affinity);
        let _ = writeln!(s, "multi_item_prob = {}", self.multi_item_prob);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub catalog: Catalog,
    pub dnn: FeatureStore,
    pub evf: FeatureStore,
    /// Planted cluster of every item.
    pub item_cluster: BTreeMap<ItemId, usize>,
    /// Preferred cluster of every user.
    pub user_cluster: BTreeMap<UserId, usize>,
}

impl SynthDataset {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
            let path = dir.join(name);
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))
        };
        write(METADATA_FILE, &|b| self.catalog.write_metadata(b))?;
        write(TRANSACTIONS_FILE, &|b| self.catalog.write_transactions(b))?;
        write(DNN_FILE, &|b| self.dnn.write(b))?;
        write(EVF_FILE, &|b| self.evf.write(b))
    }
}

pub fn cluster_name(cluster: usize) -> String {
    format!("cluster{cluster:02}")
}

fn palette_token(attr: Attribute, cluster: usize, slot: usize) -> String {
    if attr == Attribute::Style {
        return cluster_name(cluster);
    }
    format!("{}{cluster:02}{}", attr.name(), (b'a' + slot as u8) as char)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// A cluster other than `own`, uniformly; `own` when it is the only one.
fn other_cluster(rng: &mut ChaCha8Rng, own: usize, n: usize) -> usize {
    if n == 1 {
        return own;
    }
    let c = rng.random_range(0..n - 1);
    if c >= own {
        c + 1
    } else {
        c
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.n_clusters;

    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut c: Vec<f64> = (0..cfg.embedding_dim).map(|_| gaussian(&mut rng)).collect();
            normalize(&mut c);
            c
        })
        .collect();
    let prototypes: Vec<[f64; EVF_DIM]> = (0..k)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.15..0.85)))
        .collect();

    let width = cfg.n_items.to_string().len().max(4);
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut dnn = BTreeMap::new();
    let mut evf = BTreeMap::new();
    let mut item_cluster = BTreeMap::new();
    let mut by_cluster: Vec<Vec<ItemId>> = vec![Vec::new(); k];
    for i in 0..cfg.n_items {
        let cluster = i % k;
        let id = ItemId::new(format!("a{:0width$}", i + 1)).expect("generated id");

        let mut emb: Vec<f64> = centres[cluster]
            .iter()
            .map(|c| c + cfg.noise_sigma * gaussian(&mut rng))
            .collect();
        normalize(&mut emb);
        let evf_row: Vec<f64> = prototypes[cluster]
            .iter()
            .map(|p| (p + cfg.evf_noise_sigma * gaussian(&mut rng)).clamp(0.0, 1.0))
            .collect();

        let mut record = ItemRecord::new(id.clone());
        for attr in Attribute::ALL {
            let tokens = if attr == Attribute::Color && rng.random_bool(0.3) {
                2
            } else {
                1
            };
            for _ in 0..tokens {
                let source_cluster = if rng.random_bool(cfg.metadata_fidelity) {
                    cluster
                } else {
                    other_cluster(&mut rng, cluster, k)
                };
                let slot = rng.random_range(0..PALETTE_SIZE);
                record
                    .attribute_mut(attr)
                    .insert(palette_token(attr, source_cluster, slot));
            }
        }

        dnn.insert(id.clone(), FeatureVector::new(emb)?);
        evf.insert(id.clone(), FeatureVector::new(evf_row)?);
        item_cluster.insert(id.clone(), cluster);
        by_cluster[cluster].push(id);
        items.push(record);
    }

    // Baskets per user, then a global shuffle fixes the purchase order.
    let (lo, hi) = cfg.purchases_per_user;
    let uwidth = cfg.n_users.to_string().len().max(4);
    let mut user_cluster = BTreeMap::new();
    let mut baskets: Vec<(usize, usize)> = Vec::new();
    let mut demand = 0usize;
    for u in 0..cfg.n_users {
        let mut remaining = rng.random_range(lo..=hi);
        demand += remaining;
        while remaining > 0 {
            let size = if remaining >= 2 && rng.random_bool(cfg.multi_item_prob) {
                2
            } else {
                1
            };
            baskets.push((u, size));
            remaining -= size;
        }
    }
    if demand > cfg.n_items {
        return Err(invalid(format!(
            "not enough items: users demand {demand} purchases but only {} items exist",
            cfg.n_items
        )));
    }
    rand::seq::SliceRandom::shuffle(baskets.as_mut_slice(), &mut rng);

    let user_ids: Vec<UserId> = (0..cfg.n_users)
        .map(|u| UserId::new(format!("u{:0uwidth$}", u + 1)).expect("generated id"))
        .collect();
    for (u, id) in user_ids.iter().enumerate() {
        user_cluster.insert(id.clone(), u % k);
    }

    let mut transactions = Vec::with_capacity(baskets.len());
    for (pos, &(u, size)) in baskets.iter().enumerate() {
        let preferred = u % k;
        let mut bought = Vec::with_capacity(size);
        for _ in 0..size {
            let mut cluster = if rng.random_bool(cfg.cluster_affinity) {
                preferred
            } else {
                other_cluster(&mut rng, preferred, k)
            };
            if by_cluster[cluster].is_empty() {
                let open: Vec<usize> = (0..k).filter(|&c| !by_cluster[c].is_empty()).collect();
                cluster = open[rng.random_range(0..open.len())];
            }
            let pick = rng.random_range(0..by_cluster[cluster].len());
            bought.push(by_cluster[cluster].swap_remove(pick));
        }
        transactions.push(Transaction {
            user: user_ids[u].clone(),
            timestamp: FIRST_TIMESTAMP + pos as i64 * TIMESTAMP_STEP,
            items: bought,
        });
    }

    let catalog = Catalog::new(items, transactions)?;
    Ok(SynthDataset {
        catalog,
        dnn: FeatureStore::new(Source::Dnn, cfg.embedding_dim, dnn)?,
        evf: FeatureStore::new(Source::Evf, EVF_DIM, evf)?,
        item_cluster,
        user_cluster,
    })
}

/// Distinct style tokens across a set of items.
pub fn style_tokens<'a>(catalog: &'a Catalog, items: &[ItemId]) -> BTreeSet<&'a str> {
    items
        .iter()
        .filter_map(|id| catalog.index_of(id))
        .flat_map(|idx| catalog.item(idx).style.iter().map(String::as_str))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::cosine;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: 60,
            n_items: 300,
            n_clusters: 5,
            embedding_dim: 16,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_text() {
        let cfg = small(9);
        assert_eq!(SynthConfig::parse(&cfg.to_config_string()).unwrap(), cfg);
        let parsed =
            SynthConfig::parse("# comment\nn_users = 5 # trailing\npurchases_per_user = 2\n")
                .unwrap();
        assert_eq!(parsed.n_users, 5);
        assert_eq!(parsed.purchases_per_user, (2, 2));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SynthConfig::parse("n_clusters = 20\nn_items = 10\n").is_err());
        assert!(SynthConfig::parse("bogus = 1\n").is_err());
        assert!(SynthConfig::parse("n_users\n").is_err());
        assert!(SynthConfig::parse("metadata_fidelity = 1.5\n").is_err());
        assert!(SynthConfig::parse("purchases_per_user = 3-1\n").is_err());
        let greedy = SynthConfig {
            n_users: 10,
            n_items: 10,
            n_clusters: 2,
            purchases_per_user: (2, 2),
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&greedy), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn clean_data_keeps_purchases_in_cluster() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            metadata_fidelity: 1.0,
            ..small(3)
        };
        let data = generate(&cfg).unwrap();
        for user in data.catalog.users() {
            let bought = data.catalog.profile_before(user, i64::MAX).unwrap();
            let styles = style_tokens(&data.catalog, &bought);
            assert_eq!(styles.len(), 1, "user {user} bought {styles:?}");
            assert!(styles.contains(cluster_name(data.user_cluster[user]).as_str()));
        }
    }

    #[test]
    fn noise_free_embeddings_separate_clusters() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            metadata_fidelity: 1.0,
            ..small(5)
        };
        let data = generate(&cfg).unwrap();
        let ids: Vec<&ItemId> = data.item_cluster.keys().collect();
        for a in ids.iter().step_by(7) {
            for b in &ids {
                let c = cosine(data.dnn.get(a).unwrap(), data.dnn.get(b).unwrap()).unwrap();
                if data.item_cluster[*a] == data.item_cluster[*b] {
                    assert!((c - 1.0).abs() < 1e-12);
                } else {
                    assert!(c < 1.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn every_item_sold_at_most_once() {
        let data = generate(&small(11)).unwrap();
        let mut seen = BTreeSet::new();
        for tx in data.catalog.transactions() {
            for item in &tx.items {
                assert!(seen.insert(item.clone()));
            }
        }
        let ts: Vec<i64> = data
            .catalog
            .transactions()
            .iter()
            .map(|t| t.timestamp)
            .collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn evf_values_stay_in_unit_box() {
        let data = generate(&small(2)).unwrap();
        for (_, v) in data.evf.iter() {
            assert!(v.values().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate(&small(17)).unwrap();
        let b = generate(&small(17)).unwrap();
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.dnn, b.dnn);
        assert_eq!(a.evf, b.evf);
        let c = generate(&small(18)).unwrap();
        assert_ne!(a.dnn, c.dnn);
    }
}
