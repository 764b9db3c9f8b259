//! Interaction and attribute loading, the seeded train/validation/test split,
//! and frozen dataset bundles.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attrs::{parse_records, AttributeSchema, AttributeTable, FieldKind, RawRecord, Side};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, NormMode};

/// Column separator of an interactions file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    Auto,
    Tab,
    Comma,
    DoubleColon,
}

impl Delimiter {
    fn detect(line: &str) -> Delimiter {
        if line.contains("::") {
            Delimiter::DoubleColon
        } else if line.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Comma
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::Comma => line.split(',').collect(),
            Delimiter::DoubleColon => line.split("::").collect(),
            Delimiter::Auto => Delimiter::detect(line).split(line),
        }
    }
}

impl std::str::FromStr for Delimiter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "tab" | "\t" => Ok(Delimiter::Tab),
            "comma" | "," => Ok(Delimiter::Comma),
            "::" | "double-colon" => Ok(Delimiter::DoubleColon),
            other => Err(Error::Config(format!("unknown delimiter {other:?}"))),
        }
    }
}

/// Row filter applied to the optional rating column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum RatingFilter {
    #[default]
    Any,
    Equals(f64),
    AtLeast(f64),
}

impl RatingFilter {
    fn keep(&self, rating: Option<f64>) -> bool {
        match (self, rating) {
            (RatingFilter::Any, _) => true,
            (RatingFilter::Equals(t), Some(r)) => r == *t,
            (RatingFilter::AtLeast(t), Some(r)) => r >= *t,
            (_, None) => true,
        }
    }
}

impl std::str::FromStr for RatingFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("rating filter must be any, =V or >=V, got {s:?}"));
        if s == "any" {
            Ok(RatingFilter::Any)
        } else if let Some(v) = s.strip_prefix(">=") {
            v.parse().map(RatingFilter::AtLeast).map_err(|_| bad())
        } else if let Some(v) = s.strip_prefix('=') {
            v.parse().map(RatingFilter::Equals).map_err(|_| bad())
        } else {
            Err(bad())
        }
    }
}

impl std::fmt::Display for RatingFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatingFilter::Any => f.write_str("any"),
            RatingFilter::Equals(v) => write!(f, "={v}"),
            RatingFilter::AtLeast(v) => write!(f, ">={v}"),
        }
    }
}

/// External id ↔ dense index bijection. Indices follow first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, k: usize) -> &str {
        &self.ids[k]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl From<Vec<String>> for IdMap {
    fn from(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(k, id)| (id.clone(), k)).collect();
        IdMap { ids, index }
    }
}

impl From<IdMap> for Vec<String> {
    fn from(map: IdMap) -> Self {
        map.ids
    }
}

/// Deduplicated, filtered, densified interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct Interactions {
    pub pairs: Vec<(usize, usize)>,
    pub users: IdMap,
    pub items: IdMap,
}

/// Reads `user, item[, rating[, timestamp]]` rows, keeps rows passing `filter`,
/// drops duplicate pairs, then drops users with fewer than
/// `min_user_interactions` distinct items.
pub fn load_interactions(
    path: &Path,
    delimiter: Delimiter,
    filter: RatingFilter,
    min_user_interactions: usize,
) -> Result<Interactions> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&String::from_utf8_lossy(&bytes), path, delimiter, filter, min_user_interactions)
}

/// [`load_interactions`] on text already in memory; `path` only labels errors.
pub fn parse_interactions(
    text: &str,
    path: &Path,
    delimiter: Delimiter,
    filter: RatingFilter,
    min_user_interactions: usize,
) -> Result<Interactions> {
    let mut raw: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols = delimiter.split(line);
        let parse_err = |reason: &str| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason: reason.to_string(),
        };
        if cols.len() < 2 || cols[0].trim().is_empty() || cols[1].trim().is_empty() {
            if lineno == 0 && cols.len() >= 2 {
                continue;
            }
            return Err(parse_err("expected at least user and item columns"));
        }
        let rating = match cols.get(2).map(|c| c.trim()) {
            Some(c) if !c.is_empty() => match c.parse::<f64>() {
                Ok(r) => Some(r),
                // header row
                Err(_) if lineno == 0 => continue,
                Err(_) => return Err(parse_err("unparsable rating")),
            },
            _ => None,
        };
        if filter.keep(rating) {
            raw.push((cols[0].trim().to_string(), cols[1].trim().to_string()));
        }
    }
    filter_and_densify(raw, min_user_interactions)
}

/// Dedupes `(user, item)` id pairs, applies the per-user threshold, and assigns
/// dense indices in first-seen order of the surviving rows.
pub fn filter_and_densify(raw: Vec<(String, String)>, min_user_interactions: usize) -> Result<Interactions> {
    let mut seen = std::collections::HashSet::new();
    let raw: Vec<_> = raw.into_iter().filter(|p| seen.insert(p.clone())).collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (u, _) in &raw {
        *counts.entry(u.as_str()).or_default() += 1;
    }
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut pairs = Vec::new();
    for (u, i) in &raw {
        if counts[u.as_str()] >= min_user_interactions {
            pairs.push((users.intern(u), items.intern(i)));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data("no interactions left after filtering".into()));
    }
    Ok(Interactions { pairs, users, items })
}

/// Train/validation/test proportions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Interaction split with attributes and id maps.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph_train: BipartiteGraph,
    pub train_pairs: Vec<(usize, usize)>,
    pub val_items: Vec<Vec<usize>>,
    pub test_items: Vec<Vec<usize>>,
    pub user_attrs: AttributeTable,
    pub item_attrs: AttributeTable,
    pub users: IdMap,
    pub items: IdMap,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Part {
    Train,
    Val,
    Test,
}

/// Shuffles all pairs with `seed`, cuts `floor(n·val)` validation and
/// `floor(n·test)` test pairs, and gives the remainder to training. Any user
/// left without a training pair takes one back from validation or test
/// (whichever is smaller at that moment, validation on ties); the set that
/// gave it up is refilled from the training pairs of users who can spare one,
/// so the three sizes stay exact.
pub fn split_pairs(
    pairs: &[(usize, usize)],
    num_users: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<[Vec<(usize, usize)>; 3]> {
    let SplitRatios { train, val, test } = ratios;
    if train <= 0.0 || val < 0.0 || test < 0.0 || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let mut order: Vec<(usize, usize)> = pairs.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_val = (n as f64 * val + 1e-9).floor() as usize;
    let n_test = (n as f64 * test + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut part: Vec<Part> = (0..n)
        .map(|k| {
            if k < n_train {
                Part::Train
            } else if k < n_train + n_val {
                Part::Val
            } else {
                Part::Test
            }
        })
        .collect();

    let mut train_count = vec![0usize; num_users];
    for (k, &(u, _)) in order.iter().enumerate() {
        if part[k] == Part::Train {
            train_count[u] += 1;
        }
    }
    let mut sizes = [n_train, n_val, n_test];
    for user in 0..num_users {
        if train_count[user] > 0 {
            continue;
        }
        let owned: Vec<usize> = (0..n).filter(|&k| order[k].0 == user).collect();
        if owned.is_empty() {
            continue;
        }
        let holds = |p: Part| owned.iter().any(|&k| part[k] == p);
        let from = match (holds(Part::Val), holds(Part::Test)) {
            (true, true) if sizes[1] <= sizes[2] => Part::Val,
            (true, false) => Part::Val,
            _ => Part::Test,
        };
        let moved = *owned.iter().find(|&&k| part[k] == from).expect("user owns a pair in this part");
        part[moved] = Part::Train;
        train_count[user] += 1;
        // Refill `from` with a training pair whose user keeps at least one.
        if let Some(back) = (0..n).find(|&k| part[k] == Part::Train && train_count[order[k].0] >= 2) {
            part[back] = from;
            train_count[order[back].0] -= 1;
        } else {
            let idx = if from == Part::Val { 1 } else { 2 };
            sizes[idx] -= 1;
            sizes[0] += 1;
        }
    }

    let mut out: [Vec<(usize, usize)>; 3] = Default::default();
    for (k, p) in order.into_iter().enumerate() {
        let slot = match part[k] {
            Part::Train => 0,
            Part::Val => 1,
            Part::Test => 2,
        };
        out[slot].push(p);
    }
    Ok(out)
}

fn per_user(pairs: &[(usize, usize)], num_users: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); num_users];
    for &(u, i) in pairs {
        out[u].push(i);
    }
    for list in &mut out {
        list.sort_unstable();
    }
    out
}

impl Dataset {
    /// Splits `interactions` and attaches attribute tables (absent sides get an
    /// empty schema).
    pub fn split(
        interactions: &Interactions,
        ratios: SplitRatios,
        seed: u64,
        norm: NormMode,
        user_attrs: Option<AttributeTable>,
        item_attrs: Option<AttributeTable>,
    ) -> Result<Dataset> {
        let num_users = interactions.users.len();
        let [train, val, test] = split_pairs(&interactions.pairs, num_users, ratios, seed)?;
        Self::from_parts(
            train,
            &val,
            &test,
            interactions.users.clone(),
            interactions.items.clone(),
            norm,
            user_attrs,
            item_attrs,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        train_pairs: Vec<(usize, usize)>,
        val: &[(usize, usize)],
        test: &[(usize, usize)],
        users: IdMap,
        items: IdMap,
        norm: NormMode,
        user_attrs: Option<AttributeTable>,
        item_attrs: Option<AttributeTable>,
    ) -> Result<Dataset> {
        let num_users = users.len();
        let num_items = items.len();
        let graph_train = BipartiteGraph::build(&train_pairs, num_users, num_items, norm)?;
        let user_attrs = user_attrs.unwrap_or_else(|| AttributeTable::absent(num_users, Side::User));
        let item_attrs = item_attrs.unwrap_or_else(|| AttributeTable::absent(num_items, Side::Item));
        if user_attrs.num_entities() != num_users {
            return Err(Error::dim("user attribute rows", num_users, user_attrs.num_entities()));
        }
        if item_attrs.num_entities() != num_items {
            return Err(Error::dim("item attribute rows", num_items, item_attrs.num_entities()));
        }
        Ok(Dataset {
            graph_train,
            val_items: per_user(val, num_users),
            test_items: per_user(test, num_users),
            train_pairs,
            user_attrs,
            item_attrs,
            users,
            items,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Same split with the propagation operator rebuilt under `norm`.
    pub fn with_norm(&self, norm: NormMode) -> Result<Dataset> {
        if self.graph_train.norm_mode() == norm {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.graph_train = BipartiteGraph::build(&self.train_pairs, self.num_users(), self.num_items(), norm)?;
        Ok(out)
    }

    /// Every user must be trainable and leave at least one negative item.
    pub fn validate(&self) -> Result<()> {
        for a in 0..self.num_users() {
            let deg = self.graph_train.user_items(a).len();
            if deg == 0 {
                return Err(Error::Data(format!("user {} has no training interaction", self.users.id(a))));
            }
            if deg >= self.num_items() {
                return Err(Error::Sampling(a));
            }
        }
        Ok(())
    }

    pub fn save_bundle(&self, path: &Path) -> Result<()> {
        let bundle = Bundle {
            format: BUNDLE_FORMAT.into(),
            users: self.users.clone(),
            items: self.items.clone(),
            train: self.train_pairs.clone(),
            val: flatten(&self.val_items),
            test: flatten(&self.test_items),
            user_attrs: self.user_attrs.clone(),
            item_attrs: self.item_attrs.clone(),
        };
        let text = serde_json::to_string(&bundle).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_bundle(path: &Path, norm: NormMode) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: Bundle = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        if b.format != BUNDLE_FORMAT {
            return Err(Error::Data(format!("unsupported bundle format {:?}", b.format)));
        }
        Dataset::from_parts(b.train, &b.val, &b.test, b.users, b.items, norm, Some(b.user_attrs), Some(b.item_attrs))
    }
}

fn flatten(per_user: &[Vec<usize>]) -> Vec<(usize, usize)> {
    per_user
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect()
}

const BUNDLE_FORMAT: &str = "agcn-dataset-1";

#[derive(Serialize, Deserialize)]
struct Bundle {
    format: String,
    users: IdMap,
    items: IdMap,
    train: Vec<(usize, usize)>,
    val: Vec<(usize, usize)>,
    test: Vec<(usize, usize)>,
    user_attrs: AttributeTable,
    item_attrs: AttributeTable,
}

/// Reorders parsed records to dense index order. Entities without a record
/// get an empty one (all fields unknown); records for unknown ids are dropped.
pub fn align_records(records: Vec<RawRecord>, ids: &IdMap) -> Vec<RawRecord> {
    let mut out: Vec<RawRecord> = (0..ids.len())
        .map(|k| RawRecord {
            id: ids.id(k).to_string(),
            fields: Vec::new(),
        })
        .collect();
    for r in records {
        if let Some(k) = ids.get(&r.id) {
            out[k] = r;
        }
    }
    out
}

/// Loads a schema file and an attribute file and encodes them for `ids`.
pub fn load_attributes(schema_path: &Path, attrs_path: &Path, ids: &IdMap, side: Side) -> Result<AttributeTable> {
    let schema_text = fs::read_to_string(schema_path).map_err(|e| Error::io(schema_path, e))?;
    let schema = AttributeSchema::parse(&schema_text, schema_path)?;
    let text = fs::read_to_string(attrs_path).map_err(|e| Error::io(attrs_path, e))?;
    let records = parse_records(&text, &schema, attrs_path)?;
    AttributeTable::encode(&align_records(records, ids), &schema, side)
}

/// Where a dataset's files live and how to read them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSources {
    pub interactions: std::path::PathBuf,
    pub delimiter: Delimiter,
    pub rating_filter: RatingFilter,
    pub min_user_interactions: usize,
    /// Schema and attribute file for users, if any.
    pub user_attrs: Option<(std::path::PathBuf, std::path::PathBuf)>,
    pub item_attrs: Option<(std::path::PathBuf, std::path::PathBuf)>,
}

/// Load, split, and mask attributes at rate `alpha`.
pub fn prepare(
    sources: &DataSources,
    ratios: SplitRatios,
    split_seed: u64,
    alpha: f64,
    mask_seed: u64,
    norm: NormMode,
) -> Result<Dataset> {
    let inter = load_interactions(
        &sources.interactions,
        sources.delimiter,
        sources.rating_filter,
        sources.min_user_interactions,
    )?;
    let user_attrs = match &sources.user_attrs {
        Some((schema, attrs)) => Some(load_attributes(schema, attrs, &inter.users, Side::User)?.mask(alpha, mask_seed)?),
        None => None,
    };
    // items get a distinct mask stream
    let item_attrs = match &sources.item_attrs {
        Some((schema, attrs)) => Some(
            load_attributes(schema, attrs, &inter.items, Side::Item)?.mask(alpha, mask_seed.wrapping_add(1))?,
        ),
        None => None,
    };
    Dataset::split(&inter, ratios, split_seed, norm, user_attrs, item_attrs)
}

/// MovieLens-1M `*.dat` readers (`::`-separated, Latin-1).
pub mod movielens {
    use super::*;

    pub const AGE_GROUPS: [&str; 7] = ["1", "18", "25", "35", "45", "50", "56"];
    pub const GENDERS: [&str; 2] = ["F", "M"];
    pub const NUM_OCCUPATIONS: usize = 21;

    pub fn user_schema() -> AttributeSchema {
        AttributeSchema::new(vec![
            ("gender".into(), FieldKind::Single, GENDERS.iter().map(|s| s.to_string()).collect()),
            ("age".into(), FieldKind::Single, AGE_GROUPS.iter().map(|s| s.to_string()).collect()),
            (
                "occupation".into(),
                FieldKind::Single,
                (0..NUM_OCCUPATIONS).map(|o| o.to_string()).collect(),
            ),
        ])
        .expect("static schema is valid")
    }

    /// `ratings.dat` keeping only 5-star rows, then the per-user threshold.
    pub fn load_ratings(dir: &Path, min_user_interactions: usize) -> Result<Interactions> {
        load_interactions(
            &dir.join("ratings.dat"),
            Delimiter::DoubleColon,
            RatingFilter::Equals(5.0),
            min_user_interactions,
        )
    }

    /// Ratings plus masked user attributes, split. Items carry no attributes.
    pub fn prepare(dir: &Path, split_seed: u64, alpha: f64, mask_seed: u64, norm: NormMode) -> Result<Dataset> {
        let inter = load_ratings(dir, 5)?;
        let schema = user_schema();
        let records = align_records(load_users(dir, &schema)?, &inter.users);
        let users = AttributeTable::encode(&records, &schema, Side::User)?.mask(alpha, mask_seed)?;
        Dataset::split(&inter, SplitRatios::default(), split_seed, norm, Some(users), None)
    }

    /// `users.dat` → gender / age / occupation records.
    pub fn load_users(dir: &Path, schema: &AttributeSchema) -> Result<Vec<RawRecord>> {
        let path = dir.join("users.dat");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let text: String = bytes.iter().map(|&b| b as char).collect();
        let mut lines = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split("::").collect();
            if line.trim().is_empty() {
                continue;
            }
            if cols.len() < 4 {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: lineno + 1,
                    reason: "expected UserID::Gender::Age::Occupation::Zip".into(),
                });
            }
            lines.push_str(&format!(
                "{}\tgender={}\tage={}\toccupation={}\n",
                cols[0], cols[1], cols[2], cols[3]
            ));
        }
        parse_records(&lines, schema, &path)
    }
}
