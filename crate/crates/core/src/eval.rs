//! Full-ranking HR@N / NDCG@N, attribute ACC / MAP, sparsity-group breakdown,
//! and the report format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{s, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrs::{AttributeTable, FieldKind};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

pub const DEFAULT_CUTOFFS: [usize; 5] = [10, 20, 30, 40, 50];

/// How per-user hits are aggregated into HR@N.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HrMode {
    /// Mean over users of `hits / |test items|`.
    #[default]
    Recall,
    /// Total hits over total test items.
    HitFraction,
}

impl std::fmt::Display for HrMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HrMode::Recall => "recall",
            HrMode::HitFraction => "hit-fraction",
        })
    }
}

impl std::str::FromStr for HrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recall" => Ok(HrMode::Recall),
            "hit-fraction" => Ok(HrMode::HitFraction),
            other => Err(Error::Config(format!("unknown hr mode {other:?}"))),
        }
    }
}

/// Top-`n` candidates by descending score, ties to the lower item index.
/// `exclude` must be sorted.
pub fn top_n(scores: &[f64], exclude: &[usize], n: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let better = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if cand.len() > n && n > 0 {
        cand.select_nth_unstable_by(n - 1, better);
        cand.truncate(n);
    }
    cand.sort_unstable_by(better);
    cand.truncate(n);
    cand
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Per-user ranking outcome at each cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRanking {
    pub user: usize,
    pub num_targets: usize,
    /// Hits within the top `cutoffs[c]`.
    pub hits: Vec<usize>,
    pub ndcg: Vec<f64>,
}

impl UserRanking {
    /// Scores a ranked list (best first) against the user's targets.
    pub fn from_ranked(user: usize, ranked: &[usize], targets: &[usize], cutoffs: &[usize]) -> Self {
        let mut hits = Vec::with_capacity(cutoffs.len());
        let mut ndcg = Vec::with_capacity(cutoffs.len());
        for &n in cutoffs {
            let mut h = 0;
            let mut dcg = 0.0;
            for (pos, item) in ranked.iter().take(n).enumerate() {
                if targets.contains(item) {
                    h += 1;
                    dcg += discount(pos + 1);
                }
            }
            let idcg: f64 = (1..=n.min(targets.len())).map(discount).sum();
            hits.push(h);
            ndcg.push(if idcg > 0.0 { dcg / idcg } else { 0.0 });
        }
        UserRanking {
            user,
            num_targets: targets.len(),
            hits,
            ndcg,
        }
    }

    pub fn recall(&self, c: usize) -> f64 {
        self.hits[c] as f64 / self.num_targets as f64
    }
}

/// Aggregated ranking metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub hr_mode: HrMode,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub evaluated_users: usize,
    pub skipped_users: usize,
}

/// Ranks every non-training item for each user with targets and scores the
/// top of the list. Users without any candidate item are skipped.
pub fn rank_users(
    users: ArrayView2<'_, f64>,
    items: ArrayView2<'_, f64>,
    train: &BipartiteGraph,
    targets: &[Vec<usize>],
    cutoffs: &[usize],
) -> (Vec<UserRanking>, usize) {
    let max_n = cutoffs.iter().copied().max().unwrap_or(0);
    let results: Vec<Option<UserRanking>> = (0..targets.len())
        .into_par_iter()
        .filter(|&a| !targets[a].is_empty())
        .map(|a| {
            let seen = train.user_items(a);
            if seen.len() >= items.nrows() {
                return None;
            }
            let scores = items.dot(&users.row(a)).to_vec();
            let ranked = top_n(&scores, seen, max_n);
            Some(UserRanking::from_ranked(a, &ranked, &targets[a], cutoffs))
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    (results.into_iter().flatten().collect(), skipped)
}

pub fn aggregate(rankings: &[UserRanking], cutoffs: &[usize], hr_mode: HrMode, skipped: usize) -> RankingMetrics {
    let n = rankings.len() as f64;
    let mut hr = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for (c, &cut) in cutoffs.iter().enumerate() {
        let h = match hr_mode {
            HrMode::Recall => rankings.iter().map(|r| r.recall(c)).sum::<f64>() / n,
            HrMode::HitFraction => {
                let hits: usize = rankings.iter().map(|r| r.hits[c]).sum();
                let total: usize = rankings.iter().map(|r| r.num_targets).sum();
                hits as f64 / total as f64
            }
        };
        hr.insert(cut, if rankings.is_empty() { 0.0 } else { h });
        let g = rankings.iter().map(|r| r.ndcg[c]).sum::<f64>() / n;
        ndcg.insert(cut, if rankings.is_empty() { 0.0 } else { g });
    }
    RankingMetrics {
        hr_mode,
        hr,
        ndcg,
        evaluated_users: rankings.len(),
        skipped_users: skipped,
    }
}

pub fn rank_and_score(
    users: ArrayView2<'_, f64>,
    items: ArrayView2<'_, f64>,
    train: &BipartiteGraph,
    targets: &[Vec<usize>],
    cutoffs: &[usize],
    hr_mode: HrMode,
) -> Result<RankingMetrics> {
    if targets.iter().all(Vec::is_empty) {
        return Err(Error::Data("evaluation target set is empty".into()));
    }
    let (rankings, skipped) = rank_users(users, items, train, targets, cutoffs);
    Ok(aggregate(&rankings, cutoffs, hr_mode, skipped))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Acc,
    Map,
}

impl MetricKind {
    pub fn label(&self) -> &'static str {
        match self {
            MetricKind::Acc => "acc",
            MetricKind::Map => "map",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMetric {
    pub kind: MetricKind,
    /// `None` when the field has no evaluable masked entity.
    pub value: Option<f64>,
    pub count: usize,
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean over true labels of precision at that label's rank. `None` when no label is true.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return None;
    }
    let ranked = top_n(scores, &[], scores.len());
    let mut found = 0;
    let mut total = 0.0;
    for (pos, &dim) in ranked.iter().enumerate() {
        if truth[dim] {
            found += 1;
            total += found as f64 / (pos + 1) as f64;
        }
    }
    Some(total / positives as f64)
}

/// ACC for single-label fields and MAP for multi-label fields, over the table's
/// masked `(entity, field)` pairs.
pub fn attribute_metrics(predicted: ArrayView2<'_, f64>, table: &AttributeTable) -> Result<BTreeMap<String, FieldMetric>> {
    if predicted.dim() != table.ground_truth.dim() {
        return Err(Error::dim(
            "attribute predictions",
            format!("{:?}", table.ground_truth.dim()),
            format!("{:?}", predicted.dim()),
        ));
    }
    let mut out = BTreeMap::new();
    for (f, spec) in table.schema.fields().iter().enumerate() {
        let mut total = 0.0;
        let mut count = 0;
        for &(e, _) in table.masked.iter().filter(|p| p.1 == f) {
            let pred = predicted.slice(s![e, spec.block()]).to_vec();
            let truth = table.ground_truth.slice(s![e, spec.block()]);
            match spec.kind {
                FieldKind::Single => {
                    let t = argmax(&truth.to_vec());
                    total += if argmax(&pred) == t { 1.0 } else { 0.0 };
                    count += 1;
                }
                FieldKind::Multi => {
                    let flags: Vec<bool> = truth.iter().map(|&v| v == 1.0).collect();
                    if let Some(ap) = average_precision(&pred, &flags) {
                        total += ap;
                        count += 1;
                    }
                }
            }
        }
        let kind = match spec.kind {
            FieldKind::Single => MetricKind::Acc,
            FieldKind::Multi => MetricKind::Map,
        };
        out.insert(
            spec.name.clone(),
            FieldMetric {
                kind,
                value: (count > 0).then(|| total / count as f64),
                count,
            },
        );
    }
    Ok(out)
}

/// Accuracy of always predicting each single-label field's most frequent
/// observed class on the masked entities.
pub fn majority_class_accuracy(table: &AttributeTable) -> BTreeMap<String, Option<f64>> {
    let mut out = BTreeMap::new();
    for (f, spec) in table.schema.fields().iter().enumerate() {
        if spec.kind != FieldKind::Single {
            continue;
        }
        let mut counts = vec![0.0; spec.cardinality()];
        for e in 0..table.num_entities() {
            if table.is_observed(e, f) {
                for (c, v) in table.values.slice(s![e, spec.block()]).iter().enumerate() {
                    counts[c] += v;
                }
            }
        }
        let majority = argmax(&counts);
        let masked: Vec<_> = table.masked.iter().filter(|p| p.1 == f).collect();
        let correct = masked
            .iter()
            .filter(|&&&(e, _)| table.ground_truth[[e, spec.offset + majority]] == 1.0)
            .count();
        out.insert(
            spec.name.clone(),
            (!masked.is_empty()).then(|| correct as f64 / masked.len() as f64),
        );
    }
    out
}

/// Users bucketed by training-interaction count, half-open `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub lo: usize,
    pub hi: usize,
    pub users: usize,
    pub ndcg_at_10: Option<f64>,
}

/// Default bins, in training interactions per user.
pub const DEFAULT_BINS: [(usize, usize); 5] = [(0, 8), (8, 16), (16, 32), (32, 64), (64, usize::MAX)];

/// Recomputes NDCG at cutoff index `c` per bin. Bins must be disjoint.
pub fn sparsity_groups(
    rankings: &[UserRanking],
    train: &BipartiteGraph,
    bins: &[(usize, usize)],
    c: usize,
) -> Result<Vec<GroupReport>> {
    for (k, a) in bins.iter().enumerate() {
        if a.0 >= a.1 {
            return Err(Error::Config(format!("empty bin [{}, {})", a.0, a.1)));
        }
        for b in &bins[k + 1..] {
            if a.0 < b.1 && b.0 < a.1 {
                return Err(Error::Config("sparsity bins overlap".into()));
            }
        }
    }
    let mut sums = vec![(0usize, 0.0f64); bins.len()];
    for r in rankings {
        let deg = train.user_items(r.user).len();
        let bin = bins
            .iter()
            .position(|&(lo, hi)| lo <= deg && deg < hi)
            .ok_or_else(|| Error::Config(format!("no bin covers {deg} interactions")))?;
        sums[bin].0 += 1;
        sums[bin].1 += r.ndcg[c];
    }
    Ok(bins
        .iter()
        .zip(sums)
        .map(|(&(lo, hi), (users, total))| GroupReport {
            lo,
            hi,
            users,
            ndcg_at_10: (users > 0).then(|| total / users as f64),
        })
        .collect())
}

/// Everything measured for one trained model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub ranking: RankingMetrics,
    pub per_field: BTreeMap<String, FieldMetric>,
    pub sparsity_groups: Vec<GroupReport>,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

impl EvalReport {
    /// `metric.N=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "label={}", self.label);
        let _ = writeln!(out, "hr_mode={}", self.ranking.hr_mode);
        let _ = writeln!(out, "users.evaluated={}", self.ranking.evaluated_users);
        let _ = writeln!(out, "users.skipped={}", self.ranking.skipped_users);
        for (n, v) in &self.ranking.hr {
            let _ = writeln!(out, "hr.{n}={}", fmt_value(*v));
        }
        for (n, v) in &self.ranking.ndcg {
            let _ = writeln!(out, "ndcg.{n}={}", fmt_value(*v));
        }
        // attribute metrics cover every masked entity, with or without training edges
        if !self.per_field.is_empty() {
            let _ = writeln!(out, "attr.scope=all_masked");
        }
        for (name, m) in &self.per_field {
            let value = m.value.map(fmt_value).unwrap_or_else(|| "absent".into());
            let _ = writeln!(out, "{}.{name}={value}", m.kind.label());
            let _ = writeln!(out, "count.{name}={}", m.count);
        }
        for (k, g) in self.sparsity_groups.iter().enumerate() {
            let hi = if g.hi == usize::MAX { "inf".to_string() } else { g.hi.to_string() };
            let _ = writeln!(out, "group.{k}.range={}-{hi}", g.lo);
            let _ = writeln!(out, "group.{k}.users={}", g.users);
            let v = g.ndcg_at_10.map(fmt_value).unwrap_or_else(|| "absent".into());
            let _ = writeln!(out, "group.{k}.ndcg.10={v}");
        }
        out
    }

    /// Header for [`table_row`](Self::table_row).
    pub fn table_header(&self) -> String {
        let mut cols = vec!["model".to_string()];
        cols.extend(self.ranking.hr.keys().map(|n| format!("HR@{n}")));
        cols.extend(self.ranking.ndcg.keys().map(|n| format!("NDCG@{n}")));
        cols.extend(
            self.per_field
                .iter()
                .map(|(name, m)| format!("{name}({})", m.kind.label().to_uppercase())),
        );
        cols.join("\t")
    }

    /// One tab-separated row: HR@N, NDCG@N, then per-field metrics.
    pub fn table_row(&self) -> String {
        let mut cols = vec![self.label.clone()];
        // NaN marks a ranking column that does not apply to this row
        let cell = |v: &f64| if v.is_nan() { "-".to_string() } else { fmt_value(*v) };
        cols.extend(self.ranking.hr.values().map(cell));
        cols.extend(self.ranking.ndcg.values().map(cell));
        cols.extend(
            self.per_field
                .values()
                .map(|m| m.value.map(fmt_value).unwrap_or_else(|| "-".into())),
        );
        cols.join("\t")
    }
}
