//! Chronological replay evaluation.
//!
//! Every transaction whose buyer already owns something becomes one case: the
//! profile is what the user bought strictly earlier, the targets are the
//! transaction's items, and the candidate pool is everything still unsold
//! minus the profile. Each method ranks the same pool; precision, recall and
//! nDCG at each cut-off are macro-averaged over cases.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::catalog::{Catalog, ItemIdx, Timestamp, UserId};
use crate::error::{Error, Result};
use crate::features::{FeatureStore, Source};
use crate::hybrid::{
    build_training_instances, fusion_input, hybrid_score, train, BprConfig, HybridWeights,
    TrainingInstance,
};
use crate::scoring::{candidate_pool, rank_top_k, Aggregation, IndexedStore, ScoredPool};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    /// Position of the predicted transaction in replay order.
    pub transaction: usize,
    pub user: UserId,
    pub t: Timestamp,
    pub profile: Vec<ItemIdx>,
    /// Sorted, distinct.
    pub positives: Vec<ItemIdx>,
    /// Sorted: available at `t`, minus the profile.
    pub pool: Vec<ItemIdx>,
}

pub fn build_cases(catalog: &Catalog) -> Vec<EvalCase> {
    catalog
        .transactions()
        .iter()
        .enumerate()
        .filter_map(|(pos, tx)| {
            let profile = catalog.profile_indices(&tx.user, tx.timestamp).ok()?;
            if profile.is_empty() {
                return None;
            }
            let mut positives = catalog.transaction_items(pos).to_vec();
            positives.sort_unstable();
            Some(EvalCase {
                transaction: pos,
                user: tx.user.clone(),
                t: tx.timestamp,
                pool: candidate_pool(catalog, &profile, tx.timestamp),
                profile,
                positives,
            })
        })
        .collect()
}

fn hits<T: PartialEq>(ranked: &[T], positives: &[T], k: usize) -> usize {
    ranked
        .iter()
        .take(k)
        .filter(|r| positives.contains(r))
        .count()
}

/// Hits in the top `k` divided by `k`, even when fewer than `k` items are ranked.
pub fn precision_at_k<T: PartialEq>(ranked: &[T], positives: &[T], k: usize) -> f64 {
    assert!(k > 0, "precision@k needs k >= 1");
    hits(ranked, positives, k) as f64 / k as f64
}

pub fn recall_at_k<T: PartialEq>(ranked: &[T], positives: &[T], k: usize) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    Ok(hits(ranked, positives, k) as f64 / positives.len() as f64)
}

/// Binary-relevance nDCG with `log2(rank + 1)` discounts.
pub fn ndcg_at_k<T: PartialEq>(ranked: &[T], positives: &[T], k: usize) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, r)| positives.contains(r))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=positives.len().min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub sources: Vec<Source>,
    /// Fixed fusion weights; `None` on a hybrid means "learn them".
    pub weights: Option<HybridWeights>,
}

impl MethodSpec {
    pub fn single(source: Source) -> Self {
        MethodSpec {
            name: source.name().to_string(),
            sources: vec![source],
            weights: None,
        }
    }

    pub fn hybrid(sources: &[Source]) -> Self {
        let mut sources = sources.to_vec();
        sources.sort();
        sources.dedup();
        // Dnn, Evf first, then Metadata: matches the conventional method labels.
        let mut label: Vec<&str> = [Source::Dnn, Source::Evf, Source::Metadata]
            .iter()
            .filter(|s| sources.contains(s))
            .map(|s| s.name())
            .collect();
        if label.is_empty() {
            label.push("none");
        }
        MethodSpec {
            name: format!("Hyb({})", label.join("+")),
            sources,
            weights: None,
        }
    }

    /// A hybrid with caller-provided weights over the weights' sources.
    pub fn fixed(name: impl Into<String>, weights: HybridWeights) -> Self {
        MethodSpec {
            name: name.into(),
            sources: weights.sources(),
            weights: Some(weights),
        }
    }

    /// The five standard methods.
    pub fn standard() -> Vec<MethodSpec> {
        vec![
            MethodSpec::hybrid(&[Source::Dnn, Source::Evf, Source::Metadata]),
            MethodSpec::hybrid(&[Source::Dnn, Source::Evf]),
            MethodSpec::single(Source::Dnn),
            MethodSpec::single(Source::Evf),
            MethodSpec::single(Source::Metadata),
        ]
    }

    pub fn is_hybrid(&self) -> bool {
        self.sources.len() > 1 || self.weights.is_some()
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "metadata" => Ok(MethodSpec::single(Source::Metadata)),
            "dnn" => Ok(MethodSpec::single(Source::Dnn)),
            "evf" => Ok(MethodSpec::single(Source::Evf)),
            "hyb(dnn+evf)" | "hyb-dnn-evf" => Ok(MethodSpec::hybrid(&[Source::Dnn, Source::Evf])),
            "hyb(dnn+evf+metadata)" | "hyb-dnn-evf-metadata" | "hyb-all" => {
                Ok(MethodSpec::hybrid(&[
                    Source::Dnn,
                    Source::Evf,
                    Source::Metadata,
                ]))
            }
            _ => Err(Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

/// Parses a comma-separated method list; `all` expands to the five standard methods.
pub fn parse_methods(list: &str) -> Result<Vec<MethodSpec>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            out.extend(MethodSpec::standard());
        } else {
            out.push(part.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("no methods given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub agg: Aggregation,
    pub bpr: BprConfig,
    /// Retrain hybrid weights per case on strictly earlier cases only.
    pub temporal_weights: bool,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![5, 10],
            agg: Aggregation::Max,
            bpr: BprConfig::default(),
            temporal_weights: false,
            jobs: 0,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidConfig("cut-offs must be positive".into()));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "cut-offs must be sorted ascending and distinct".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub name: String,
    /// Means over cases, laid out as ndcg@k for every k, then recall, then precision.
    pub metrics: Vec<f64>,
    pub cases: usize,
    /// Cases where none of the profile items had a vector for this method.
    pub cases_without_profile: usize,
    /// Sum over cases of pool items lacking a vector.
    pub missing_vectors: usize,
    pub weights: Option<HybridWeights>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub rows: Vec<MethodRow>,
    pub transactions: usize,
    /// Transactions skipped because the user had no earlier purchase.
    pub skipped_transactions: usize,
    pub temporal_weights: bool,
    pub negative_shortfall: usize,
}

impl EvalReport {
    fn column(&self, block: usize, k: usize) -> Option<usize> {
        self.ks
            .iter()
            .position(|&x| x == k)
            .map(|i| block * self.ks.len() + i)
    }

    pub fn row(&self, name: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn ndcg(&self, row: &MethodRow, k: usize) -> Option<f64> {
        self.column(0, k).map(|c| row.metrics[c])
    }

    pub fn recall(&self, row: &MethodRow, k: usize) -> Option<f64> {
        self.column(1, k).map(|c| row.metrics[c])
    }

    pub fn precision(&self, row: &MethodRow, k: usize) -> Option<f64> {
        self.column(2, k).map(|c| row.metrics[c])
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["method".to_string()];
        for prefix in ["ndcg", "rec", "prec"] {
            cols.extend(self.ks.iter().map(|k| format!("{prefix}@{k}")));
        }
        cols.push("cases".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.name);
            for m in &row.metrics {
                let _ = write!(out, ",{m:.6}");
            }
            let _ = writeln!(out, ",{}", row.cases);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# evaluation report");
        let _ = writeln!(out, "transactions: {}", self.transactions);
        let _ = writeln!(
            out,
            "cases: {} (skipped {} transactions without an earlier purchase)",
            self.rows.first().map_or(0, |r| r.cases),
            self.skipped_transactions
        );
        if self.rows.iter().any(|r| r.weights.is_some()) {
            if self.temporal_weights {
                let _ = writeln!(
                    out,
                    "hybrid weights: retrained per case on strictly earlier cases (reported weights: final fit)"
                );
            } else {
                let _ = writeln!(
                    out,
                    "hybrid weights: trained once on all cases; later transactions inform earlier predictions"
                );
            }
            let _ = writeln!(
                out,
                "negative sampling shortfall: {}",
                self.negative_shortfall
            );
        }
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "[{}]", row.name);
            for (i, prefix) in ["ndcg", "rec", "prec"].iter().enumerate() {
                for (j, k) in self.ks.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "  {prefix}@{k} = {:.6}",
                        row.metrics[i * self.ks.len() + j]
                    );
                }
            }
            let _ = writeln!(out, "  cases = {}", row.cases);
            let _ = writeln!(
                out,
                "  cases_without_profile_vectors = {}",
                row.cases_without_profile
            );
            let _ = writeln!(out, "  missing_item_vectors = {}", row.missing_vectors);
            if let Some(w) = &row.weights {
                for s in w.sources() {
                    let _ = writeln!(
                        out,
                        "  weight.{} = {:.6}",
                        s.name(),
                        w.get(s).unwrap_or(0.0)
                    );
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }
}

/// Hybrid weights, either one global set or one set per case.
enum WeightPlan {
    Global(HybridWeights),
    PerCase(Vec<HybridWeights>),
}

impl WeightPlan {
    fn for_case(&self, case: usize) -> &HybridWeights {
        match self {
            WeightPlan::Global(w) => w,
            WeightPlan::PerCase(ws) => &ws[case],
        }
    }

    fn reported(&self) -> Option<HybridWeights> {
        match self {
            WeightPlan::Global(w) => Some(w.clone()),
            WeightPlan::PerCase(ws) => ws.last().cloned(),
        }
    }
}

struct CaseOutcome {
    metrics: Vec<Vec<f64>>,
    without_profile: Vec<bool>,
    missing: Vec<usize>,
}

fn run_in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn source_set(methods: &[MethodSpec], pred: impl Fn(&MethodSpec) -> bool) -> Vec<Source> {
    methods
        .iter()
        .filter(|m| pred(m))
        .flat_map(|m| m.sources.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn index_stores(
    catalog: &Catalog,
    stores: &BTreeMap<Source, FeatureStore>,
    sources: &[Source],
) -> Result<BTreeMap<Source, IndexedStore>> {
    sources
        .iter()
        .map(|&s| {
            let store = stores.get(&s).ok_or(Error::MissingStore(s.name()))?;
            Ok((s, IndexedStore::new(catalog, store)))
        })
        .collect()
}

/// Trains weights for `method` on a prefix of `instances`, whose components follow `all_sources`.
fn fit_weights(
    method: &MethodSpec,
    instances: &[TrainingInstance],
    all_sources: &[Source],
    bpr: &BprConfig,
) -> Result<HybridWeights> {
    if instances.is_empty() {
        return HybridWeights::zeros(&method.sources);
    }
    let positions: Vec<usize> = method
        .sources
        .iter()
        .map(|s| {
            all_sources
                .iter()
                .position(|a| a == s)
                .expect("source indexed")
        })
        .collect();
    let projected: Vec<TrainingInstance> =
        instances.iter().map(|i| i.project(&positions)).collect();
    let cfg = bpr.clone().with_sources(&method.sources);
    Ok(train(&projected, &cfg)?.weights)
}

fn plan_weights(
    catalog: &Catalog,
    cases: &[EvalCase],
    methods: &[MethodSpec],
    indexed: &BTreeMap<Source, IndexedStore>,
    opts: &EvalOptions,
) -> Result<(Vec<Option<WeightPlan>>, usize)> {
    let learn_sources = source_set(methods, |m| m.is_hybrid() && m.weights.is_none());
    if learn_sources.is_empty() {
        let plans = methods
            .iter()
            .map(|m| m.weights.clone().map(WeightPlan::Global))
            .collect();
        return Ok((plans, 0));
    }
    let cfg = opts.bpr.clone().with_sources(&learn_sources);
    let stores: Vec<&IndexedStore> = learn_sources.iter().map(|s| &indexed[s]).collect();
    let (instances, diagnostics) =
        build_training_instances(catalog, cases, &stores, &cfg, opts.agg)?;

    // Instances are grouped by case; prefix[j] = number of instances from cases before j.
    let mut prefix = vec![0usize; cases.len() + 1];
    for inst in &instances {
        prefix[inst.case + 1] += 1;
    }
    for j in 0..cases.len() {
        prefix[j + 1] += prefix[j];
    }
    // First case sharing each case's timestamp: only strictly earlier cases may train it.
    let mut first_at_t = vec![0usize; cases.len()];
    for i in 1..cases.len() {
        first_at_t[i] = if cases[i].t == cases[i - 1].t {
            first_at_t[i - 1]
        } else {
            i
        };
    }

    let mut plans = Vec::with_capacity(methods.len());
    for method in methods {
        let plan = match (&method.weights, method.is_hybrid()) {
            (Some(w), _) => Some(WeightPlan::Global(w.clone())),
            (None, false) => None,
            (None, true) if !opts.temporal_weights => Some(WeightPlan::Global(fit_weights(
                method,
                &instances,
                &learn_sources,
                &opts.bpr,
            )?)),
            (None, true) => {
                let boundaries: BTreeSet<usize> = first_at_t.iter().map(|&j| prefix[j]).collect();
                let fitted: HashMap<usize, HybridWeights> = boundaries
                    .into_par_iter()
                    .map(|end| {
                        fit_weights(method, &instances[..end], &learn_sources, &opts.bpr)
                            .map(|w| (end, w))
                    })
                    .collect::<Result<_>>()?;
                Some(WeightPlan::PerCase(
                    first_at_t
                        .iter()
                        .map(|&j| fitted[&prefix[j]].clone())
                        .collect(),
                ))
            }
        };
        plans.push(plan);
    }
    Ok((plans, diagnostics.negative_shortfall))
}

fn rank_case(
    case: &EvalCase,
    method: &MethodSpec,
    plan: Option<&WeightPlan>,
    case_index: usize,
    raw: &BTreeMap<Source, Option<ScoredPool>>,
    depth: usize,
    standardized: bool,
) -> Result<(Vec<ItemIdx>, bool, usize)> {
    if !method.is_hybrid() {
        return Ok(match &raw[&method.sources[0]] {
            Some(pool) => (rank_top_k(pool, depth), false, pool.missing),
            None => (Vec::new(), true, case.pool.len()),
        });
    }
    let weights = plan
        .expect("hybrid methods carry a weight plan")
        .for_case(case_index);
    let mut z_pools = Vec::new();
    let mut missing = 0;
    for &s in &method.sources {
        if let Some(pool) = &raw[&s] {
            missing = missing.max(pool.missing);
            if !pool.is_empty() {
                z_pools.push((s, fusion_input(pool, standardized)?));
            }
        }
    }
    if z_pools.is_empty() {
        return Ok((Vec::new(), true, case.pool.len()));
    }
    let refs: Vec<(Source, &ScoredPool)> = z_pools.iter().map(|(s, p)| (*s, p)).collect();
    let fused = hybrid_score(&refs, weights)?;
    Ok((rank_top_k(&fused, depth), false, missing))
}

fn case_metrics(ranked: &[ItemIdx], positives: &[ItemIdx], ks: &[usize]) -> Result<Vec<f64>> {
    let mut m = Vec::with_capacity(ks.len() * 3);
    for &k in ks {
        m.push(ndcg_at_k(ranked, positives, k)?);
    }
    for &k in ks {
        m.push(recall_at_k(ranked, positives, k)?);
    }
    for &k in ks {
        m.push(precision_at_k(ranked, positives, k));
    }
    Ok(m)
}

pub fn evaluate(
    catalog: &Catalog,
    stores: &BTreeMap<Source, FeatureStore>,
    methods: &[MethodSpec],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    opts.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods given".into()));
    }
    let sources = source_set(methods, |_| true);
    let indexed = index_stores(catalog, stores, &sources)?;
    let cases = build_cases(catalog);
    if cases.is_empty() {
        return Err(Error::NoEvaluableCases);
    }
    let depth = *opts.ks.last().expect("validated");

    let (plans, shortfall, outcomes) = run_in_pool(opts.jobs, || -> Result<_> {
        let (plans, shortfall) = plan_weights(catalog, &cases, methods, &indexed, opts)?;
        let outcomes: Vec<CaseOutcome> = cases
            .par_iter()
            .enumerate()
            .map(|(ci, case)| {
                let raw: BTreeMap<Source, Option<ScoredPool>> = indexed
                    .iter()
                    .map(|(&s, store)| {
                        (
                            s,
                            store
                                .score_candidates(&case.profile, &case.pool, opts.agg)
                                .ok(),
                        )
                    })
                    .collect();
                let mut outcome = CaseOutcome {
                    metrics: Vec::with_capacity(methods.len()),
                    without_profile: Vec::with_capacity(methods.len()),
                    missing: Vec::with_capacity(methods.len()),
                };
                for (method, plan) in methods.iter().zip(&plans) {
                    let (ranked, empty, missing) = rank_case(
                        case,
                        method,
                        plan.as_ref(),
                        ci,
                        &raw,
                        depth,
                        opts.bpr.standardize,
                    )?;
                    outcome
                        .metrics
                        .push(case_metrics(&ranked, &case.positives, &opts.ks)?);
                    outcome.without_profile.push(empty);
                    outcome.missing.push(missing);
                }
                Ok(outcome)
            })
            .collect::<Result<_>>()?;
        Ok((plans, shortfall, outcomes))
    })??;

    let n = cases.len() as f64;
    let rows = methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let mut sums = vec![0.0; opts.ks.len() * 3];
            let mut without_profile = 0;
            let mut missing = 0;
            for outcome in &outcomes {
                for (s, v) in sums.iter_mut().zip(&outcome.metrics[mi]) {
                    *s += v;
                }
                without_profile += outcome.without_profile[mi] as usize;
                missing += outcome.missing[mi];
            }
            MethodRow {
                name: method.name.clone(),
                metrics: sums.into_iter().map(|s| s / n).collect(),
                cases: cases.len(),
                cases_without_profile: without_profile,
                missing_vectors: missing,
                weights: plans[mi].as_ref().and_then(WeightPlan::reported),
            }
        })
        .collect();

    Ok(EvalReport {
        ks: opts.ks.clone(),
        rows,
        transactions: catalog.transactions().len(),
        skipped_transactions: catalog.transactions().len() - cases.len(),
        temporal_weights: opts.temporal_weights,
        negative_shortfall: shortfall,
    })
}

/// Top-`k` recommendations for `user` at `t`. Hybrid weights, when learned,
/// use only cases strictly before `t`.
pub fn recommend(
    catalog: &Catalog,
    stores: &BTreeMap<Source, FeatureStore>,
    method: &MethodSpec,
    user: &UserId,
    t: Timestamp,
    k: usize,
    opts: &EvalOptions,
) -> Result<Vec<(ItemIdx, f64)>> {
    let profile = catalog.profile_indices(user, t)?;
    if profile.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let indexed = index_stores(catalog, stores, &method.sources)?;
    let pool = candidate_pool(catalog, &profile, t);

    let scored = if method.is_hybrid() {
        let weights = match &method.weights {
            Some(w) => w.clone(),
            None => {
                let history: Vec<EvalCase> = build_cases(catalog)
                    .into_iter()
                    .filter(|c| c.t < t)
                    .collect();
                let cfg = opts.bpr.clone().with_sources(&method.sources);
                let stores: Vec<&IndexedStore> = cfg.sources.iter().map(|s| &indexed[s]).collect();
                let (instances, _) =
                    build_training_instances(catalog, &history, &stores, &cfg, opts.agg)?;
                fit_weights(method, &instances, &cfg.sources, &opts.bpr)?
            }
        };
        let mut z_pools = Vec::new();
        for &s in &method.sources {
            if let Ok(p) = indexed[&s].score_candidates(&profile, &pool, opts.agg) {
                if !p.is_empty() {
                    z_pools.push((s, fusion_input(&p, opts.bpr.standardize)?));
                }
            }
        }
        if z_pools.is_empty() {
            return Err(Error::EmptyProfile);
        }
        let refs: Vec<(Source, &ScoredPool)> = z_pools.iter().map(|(s, p)| (*s, p)).collect();
        hybrid_score(&refs, &weights)?
    } else {
        indexed[&method.sources[0]].score_candidates(&profile, &pool, opts.agg)?
    };
    Ok(rank_top_k(&scored, k)
        .into_iter()
        .map(|idx| (idx, scored.get(idx).expect("ranked from pool")))
        .collect())
}
