//! Score fusion with pairwise-ranking (BPR) learned source weights.
//!
//! The model is linear in the per-source standardized scores: an item's fused
//! score is `sum_s w_s * z_s(item)`. The weights are the only parameters and
//! are fitted by stochastic gradient ascent on
//! `sum ln sigma(w . (z_pos - z_neg)) - lambda * |w|^2` over sampled
//! (purchased, not purchased) pairs.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::{Catalog, ItemIdx};
use crate::error::{Error, Result};
use crate::eval::EvalCase;
use crate::features::Source;
use crate::scoring::{standardize, Aggregation, IndexedStore, ScoredPool};

#[derive(Debug, Clone, PartialEq)]
pub struct HybridWeights {
    weights: BTreeMap<Source, f64>,
}

impl HybridWeights {
    pub fn new(pairs: impl IntoIterator<Item = (Source, f64)>) -> Result<Self> {
        let weights: BTreeMap<Source, f64> = pairs.into_iter().collect();
        if weights.is_empty() {
            return Err(Error::InvalidConfig(
                "hybrid weights need at least one source".into(),
            ));
        }
        if let Some((s, _)) = weights.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::NonFinite(format!("weight for {s}")));
        }
        Ok(HybridWeights { weights })
    }

    pub fn zeros(sources: &[Source]) -> Result<Self> {
        Self::new(sources.iter().map(|&s| (s, 0.0)))
    }

    fn from_vec(sources: &[Source], w: &[f64]) -> Result<Self> {
        Self::new(sources.iter().copied().zip(w.iter().copied()))
    }

    /// Enabled sources in canonical order.
    pub fn sources(&self) -> Vec<Source> {
        self.weights.keys().copied().collect()
    }

    pub fn get(&self, source: Source) -> Option<f64> {
        self.weights.get(&source).copied()
    }

    pub fn as_vec(&self) -> Vec<f64> {
        self.weights.values().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn write<W: Write>(&self, mut out: W, seed: u64) -> io::Result<()> {
        writeln!(out, "#seed {seed}")?;
        for (s, w) in &self.weights {
            writeln!(out, "{} {}", s.name(), w)?;
        }
        out.flush()
    }

    pub fn parse<R: BufRead>(reader: R, file: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(file, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Parse {
                file: file.to_string(),
                line: i as u64 + 1,
                message: format!("expected `<source> <weight>`, got {line:?}"),
            };
            let (name, value) = line.split_once(' ').ok_or_else(bad)?;
            let source: Source = name.parse().map_err(|_| bad())?;
            let weight: f64 = value.trim().parse().map_err(|_| bad())?;
            pairs.push((source, weight));
        }
        Self::new(pairs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BprConfig {
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub sources: Vec<Source>,
    /// z-score every source's pool before pairing and fusion. When off, raw
    /// similarities are used and the weights absorb the scale differences.
    pub standardize: bool,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            learning_rate: 0.05,
            regularization: 1e-4,
            epochs: 200,
            negatives_per_positive: 5,
            seed: 42,
            sources: Source::ALL.to_vec(),
            standardize: true,
        }
    }
}

impl BprConfig {
    pub fn with_sources(mut self, sources: &[Source]) -> Self {
        let mut sources = sources.to_vec();
        sources.sort();
        sources.dedup();
        self.sources = sources;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return bad("regularization must be non-negative");
        }
        // The explicit penalty step multiplies w by (1 - 2 lr lambda) and diverges past 2.
        if 2.0 * self.learning_rate * self.regularization >= 2.0 {
            return bad("learning_rate * regularization >= 1 makes the penalty step diverge");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be positive");
        }
        if self.sources.is_empty() {
            return bad("at least one source must be enabled");
        }
        Ok(())
    }
}

/// Standardized per-source scores of one purchased item and one sampled negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    /// Index of the evaluation case the pair came from.
    pub case: usize,
    pub s_pos: Vec<f64>,
    pub s_neg: Vec<f64>,
}

impl TrainingInstance {
    pub fn delta(&self) -> Vec<f64> {
        self.s_pos
            .iter()
            .zip(&self.s_neg)
            .map(|(p, n)| p - n)
            .collect()
    }

    /// Keeps only the components at `positions`.
    pub fn project(&self, positions: &[usize]) -> TrainingInstance {
        TrainingInstance {
            case: self.case,
            s_pos: positions.iter().map(|&i| self.s_pos[i]).collect(),
            s_neg: positions.iter().map(|&i| self.s_neg[i]).collect(),
        }
    }
}

/// Logistic function, stable for large |x|.
pub fn sigma(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln sigma(x) without underflow for very negative x.
fn ln_sigma(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn bpr_objective(instances: &[TrainingInstance], w: &[f64], lambda: f64) -> f64 {
    let fit: f64 = instances
        .iter()
        .map(|inst| ln_sigma(dot(w, &inst.delta())))
        .sum();
    fit - lambda * dot(w, w)
}

fn objective_from_deltas(deltas: &[f64], dim: usize, w: &[f64], lambda: f64) -> f64 {
    let fit: f64 = deltas.chunks_exact(dim).map(|d| ln_sigma(dot(w, d))).sum();
    fit - lambda * dot(w, w)
}

/// Gradient of `ln sigma(w . delta) - lambda |w|^2` with respect to `w`.
pub fn bpr_gradient(delta: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let scale = 1.0 - sigma(dot(w, delta));
    delta
        .iter()
        .zip(w)
        .map(|(d, wi)| scale * d - 2.0 * lambda * wi)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedWeights {
    pub weights: HybridWeights,
    /// Full-batch objective after each epoch.
    pub objective: Vec<f64>,
}

/// Sequential SGD from `w = 0`, reshuffling the instances every epoch.
pub fn train(instances: &[TrainingInstance], cfg: &BprConfig) -> Result<TrainedWeights> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::NoInstances);
    }
    let dim = cfg.sources.len();
    if let Some(inst) = instances
        .iter()
        .find(|i| i.s_pos.len() != dim || i.s_neg.len() != dim)
    {
        return Err(Error::DimensionMismatch {
            context: format!("training instance from case {}", inst.case),
            got: inst.s_pos.len().min(inst.s_neg.len()),
            expected: dim,
        });
    }
    // Flattened deltas; the update below is bpr_gradient inlined without allocation.
    let deltas: Vec<f64> = instances.iter().flat_map(TrainingInstance::delta).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut w = vec![0.0; dim];
    let mut objective = Vec::with_capacity(cfg.epochs);
    let decay = 2.0 * cfg.regularization;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let delta = &deltas[i * dim..(i + 1) * dim];
            let scale = 1.0 - sigma(dot(&w, delta));
            for (wi, d) in w.iter_mut().zip(delta) {
                *wi += cfg.learning_rate * (scale * d - decay * *wi);
            }
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("BPR weights diverged".into()));
        }
        objective.push(objective_from_deltas(&deltas, dim, &w, cfg.regularization));
    }
    Ok(TrainedWeights {
        weights: HybridWeights::from_vec(&cfg.sources, &w)?,
        objective,
    })
}

/// Per-case RNG stream: a function of the seed and case index only.
fn case_rng(seed: u64, case_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case_index as u64 + 1);
    rng
}

/// Pairs for one case. `z_pools` holds one standardized pool per enabled
/// source; a source without a score for an item contributes 0.
///
/// Returns the instances and how many requested negatives could not be drawn.
pub fn instances_for_case(
    case_index: usize,
    case: &EvalCase,
    z_pools: &[ScoredPool],
    cfg: &BprConfig,
) -> (Vec<TrainingInstance>, usize) {
    let negatives: Vec<ItemIdx> = case
        .pool
        .iter()
        .copied()
        .filter(|idx| !case.positives.contains(idx))
        .collect();
    let take = cfg.negatives_per_positive.min(negatives.len());
    let shortfall = (cfg.negatives_per_positive - take) * case.positives.len();
    let scores =
        |idx: ItemIdx| -> Vec<f64> { z_pools.iter().map(|p| p.get(idx).unwrap_or(0.0)).collect() };
    let mut rng = case_rng(cfg.seed, case_index);
    let mut out = Vec::with_capacity(take * case.positives.len());
    for &pos in &case.positives {
        let s_pos = scores(pos);
        for j in index::sample(&mut rng, negatives.len(), take) {
            out.push(TrainingInstance {
                case: case_index,
                s_pos: s_pos.clone(),
                s_neg: scores(negatives[j]),
            });
        }
    }
    (out, shortfall)
}

/// Fusion inputs of every enabled source for one case.
pub(crate) fn case_z_pools(
    case: &EvalCase,
    stores: &[&IndexedStore],
    agg: Aggregation,
    standardized: bool,
) -> Vec<ScoredPool> {
    stores
        .iter()
        .map(|store| {
            store
                .score_candidates(&case.profile, &case.pool, agg)
                .ok()
                .and_then(|p| fusion_input(&p, standardized).ok())
                .unwrap_or_default()
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstanceDiagnostics {
    /// Negatives requested but unavailable because the pool was too small.
    pub negative_shortfall: usize,
}

/// Builds pairs for every case, in case order. `stores` must follow `cfg.sources`.
pub fn build_training_instances(
    _catalog: &Catalog,
    cases: &[EvalCase],
    stores: &[&IndexedStore],
    cfg: &BprConfig,
    agg: Aggregation,
) -> Result<(Vec<TrainingInstance>, InstanceDiagnostics)> {
    cfg.validate()?;
    if stores.len() != cfg.sources.len()
        || stores
            .iter()
            .zip(&cfg.sources)
            .any(|(st, s)| st.source() != *s)
    {
        return Err(Error::InvalidConfig(
            "stores do not match the enabled sources".into(),
        ));
    }
    let per_case: Vec<(Vec<TrainingInstance>, usize)> = cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let z = case_z_pools(case, stores, agg, cfg.standardize);
            instances_for_case(i, case, &z, cfg)
        })
        .collect();
    let mut diagnostics = InstanceDiagnostics::default();
    let mut all = Vec::new();
    for (inst, short) in per_case {
        diagnostics.negative_shortfall += short;
        all.extend(inst);
    }
    Ok((all, diagnostics))
}

/// A source pool as fed to training and fusion.
pub fn fusion_input(pool: &ScoredPool, standardized: bool) -> Result<ScoredPool> {
    if standardized {
        standardize(pool)
    } else {
        Ok(pool.clone())
    }
}

/// Fused scores over the union of the given pools.
pub fn hybrid_score(pools: &[(Source, &ScoredPool)], w: &HybridWeights) -> Result<ScoredPool> {
    let mut fused: BTreeMap<ItemIdx, Vec<Option<f64>>> = BTreeMap::new();
    let mut weights = Vec::with_capacity(pools.len());
    for (k, (source, pool)) in pools.iter().enumerate() {
        let weight = w.get(*source).ok_or(Error::MissingStore(source.name()))?;
        weights.push(weight);
        for (idx, z) in pool.iter() {
            fused.entry(idx).or_insert_with(|| vec![None; pools.len()])[k] = Some(z);
        }
    }
    if fused.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut gaps = 0;
    let scores = fused
        .into_iter()
        .map(|(idx, parts)| {
            if parts.iter().any(Option::is_none) {
                gaps += 1;
            }
            let s = parts
                .iter()
                .zip(&weights)
                .fold(0.0, |acc, (z, w)| acc + w * z.unwrap_or(0.0));
            (idx, s)
        })
        .collect();
    let mut out = ScoredPool::new(scores);
    out.missing = gaps;
    Ok(out)
}
