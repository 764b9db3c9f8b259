//! Attribute schemas, encoded attribute tables, field-granular masking, and
//! the fill/update rules for missing entries.

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// Exactly one category per entity, one-hot encoded.
    Single,
    /// Any subset of categories, multi-hot encoded.
    Multi,
}

impl std::str::FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single-label" => Ok(FieldKind::Single),
            "multi" | "multi-label" => Ok(FieldKind::Multi),
            other => Err(Error::Config(format!("unknown field kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub categories: Vec<String>,
    pub offset: usize,
}

impl FieldSpec {
    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    pub fn block(&self) -> Range<usize> {
        self.offset..self.offset + self.cardinality()
    }
}

/// Ordered field layout of a flat attribute vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    fields: Vec<FieldSpec>,
    total_dim: usize,
}

impl AttributeSchema {
    /// Lays fields out contiguously in declaration order.
    pub fn new(decls: Vec<(String, FieldKind, Vec<String>)>) -> Result<Self> {
        let mut fields = Vec::with_capacity(decls.len());
        let mut offset = 0;
        let mut seen = HashSet::new();
        for (name, kind, categories) in decls {
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate field {name:?}")));
            }
            let min = match kind {
                FieldKind::Single => 2,
                FieldKind::Multi => 1,
            };
            if categories.len() < min {
                return Err(Error::Config(format!(
                    "field {name:?} needs at least {min} categories, has {}",
                    categories.len()
                )));
            }
            let card = categories.len();
            fields.push(FieldSpec {
                name,
                kind,
                categories,
                offset,
            });
            offset += card;
        }
        Ok(AttributeSchema {
            fields,
            total_dim: offset,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Parses a schema document: one field per line, `name<TAB>kind<TAB>cat|cat|...`.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut decls = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason,
            };
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(parse_err(format!("expected 3 tab-separated columns, got {}", cols.len())));
            }
            let kind = cols[1].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let cats = cols[2].split('|').map(|c| c.trim().to_string()).collect();
            decls.push((cols[0].to_string(), kind, cats));
        }
        Self::new(decls)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.fields {
            let kind = match f.kind {
                FieldKind::Single => "single",
                FieldKind::Multi => "multi",
            };
            out.push_str(&format!("{}\t{}\t{}\n", f.name, kind, f.categories.join("|")));
        }
        out
    }
}

/// One entity's field assignments, as category indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub fields: Vec<(String, Vec<usize>)>,
}

/// Parses an attribute file: `entity_id<TAB>field=value<TAB>field=v1|v2 ...`.
/// Category names are resolved through `schema`.
pub fn parse_records(text: &str, schema: &AttributeSchema, path: &Path) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or_default().trim().to_string();
        let mut record = RawRecord {
            id,
            fields: Vec::new(),
        };
        for col in cols {
            let col = col.trim();
            if col.is_empty() {
                continue;
            }
            let (name, value) = col
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected field=value, got {col:?}")))?;
            let field = schema
                .field_index(name)
                .map(|f| &schema.fields()[f])
                .ok_or_else(|| parse_err(format!("unknown field {name:?}")))?;
            let mut cats = Vec::new();
            for v in value.split('|').filter(|v| !v.is_empty()) {
                let idx = field
                    .categories
                    .iter()
                    .position(|c| c == v)
                    .ok_or_else(|| parse_err(format!("unknown category {v:?} for field {name:?}")))?;
                cats.push(idx);
            }
            record.fields.push((name.to_string(), cats));
        }
        records.push(record);
    }
    Ok(records)
}

/// Encoded attributes for one side of the graph.
///
/// `known[e][f]` marks whether entity `e` had a value for field `f` at all;
/// `indicator` is the observation mask the model sees (field-granular).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeTable {
    pub schema: AttributeSchema,
    pub side: Side,
    pub values: Array2<f64>,
    pub indicator: Array2<f64>,
    pub ground_truth: Array2<f64>,
    pub known: Array2<bool>,
    /// Held-out `(entity, field)` pairs, sorted by field then entity.
    pub masked: Vec<(usize, usize)>,
}

impl AttributeTable {
    /// One-hot/multi-hot encodes `records`, one per entity in dense index order.
    pub fn encode(records: &[RawRecord], schema: &AttributeSchema, side: Side) -> Result<Self> {
        let n = records.len();
        let dim = schema.total_dim();
        let mut values = Array2::zeros((n, dim));
        let mut known = Array2::from_elem((n, schema.fields().len()), false);
        for (e, record) in records.iter().enumerate() {
            for (name, cats) in &record.fields {
                let err = |reason: String| Error::Encoding {
                    entity: record.id.clone(),
                    field: name.clone(),
                    reason,
                };
                let f = schema
                    .field_index(name)
                    .ok_or_else(|| err("unknown field".into()))?;
                let spec = &schema.fields()[f];
                if spec.kind == FieldKind::Single && cats.len() != 1 {
                    return Err(err(format!("single-label field given {} categories", cats.len())));
                }
                for &c in cats {
                    if c >= spec.cardinality() {
                        return Err(err(format!(
                            "category {c} out of range for cardinality {}",
                            spec.cardinality()
                        )));
                    }
                    values[[e, spec.offset + c]] = 1.0;
                }
                known[[e, f]] = true;
            }
        }
        let indicator = Self::expand_fields(schema, &known);
        Ok(AttributeTable {
            schema: schema.clone(),
            side,
            ground_truth: values.clone(),
            values,
            indicator,
            known,
            masked: Vec::new(),
        })
    }

    /// A table with zero attribute dimensions, for a side without attributes.
    pub fn absent(num_entities: usize, side: Side) -> Self {
        AttributeTable {
            schema: AttributeSchema::empty(),
            side,
            values: Array2::zeros((num_entities, 0)),
            indicator: Array2::zeros((num_entities, 0)),
            ground_truth: Array2::zeros((num_entities, 0)),
            known: Array2::from_elem((num_entities, 0), false),
            masked: Vec::new(),
        }
    }

    fn expand_fields(schema: &AttributeSchema, per_field: &Array2<bool>) -> Array2<f64> {
        let mut out = Array2::zeros((per_field.nrows(), schema.total_dim()));
        for (f, spec) in schema.fields().iter().enumerate() {
            for e in 0..per_field.nrows() {
                if per_field[[e, f]] {
                    out.slice_mut(s![e, spec.block()]).fill(1.0);
                }
            }
        }
        out
    }

    pub fn num_entities(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.schema.total_dim()
    }

    pub fn is_observed(&self, entity: usize, field: usize) -> bool {
        let spec = &self.schema.fields()[field];
        spec.cardinality() > 0 && self.indicator[[entity, spec.offset]] == 1.0
    }

    /// Hides a seeded random `floor(alpha * n)` subset of entities per field,
    /// where `n` counts entities with a known value for that field. Each field
    /// draws from its own stream of the seed.
    pub fn mask(&self, alpha: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("mask rate must lie in [0, 1), got {alpha}")));
        }
        let mut out = self.clone();
        let mut masked = Vec::new();
        for (f, spec) in self.schema.fields().iter().enumerate() {
            let candidates: Vec<usize> = (0..self.num_entities())
                .filter(|&e| self.is_observed(e, f))
                .collect();
            let count = (alpha * candidates.len() as f64 + 1e-9).floor() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(f as u64);
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), count)
                .into_iter()
                .map(|k| candidates[k])
                .collect();
            picked.sort_unstable();
            for &e in &picked {
                out.indicator.slice_mut(s![e, spec.block()]).fill(0.0);
                out.values.slice_mut(s![e, spec.block()]).fill(0.0);
                masked.push((e, f));
            }
        }
        out.masked = masked;
        Ok(out)
    }

    /// Restores every known value, undoing [`mask`](Self::mask).
    pub fn unmasked(&self) -> Self {
        let mut out = self.clone();
        out.indicator = Self::expand_fields(&self.schema, &self.known);
        out.values = &self.ground_truth * &out.indicator;
        out.masked.clear();
        out
    }

    /// Initial dense attributes: observed entries copied, each missing entry set
    /// to the observed mean of its dimension.
    pub fn init_missing(&self) -> Result<Array2<f64>> {
        self.init_missing_with(None)
    }

    /// Like [`init_missing`](Self::init_missing), but dimensions with no observed
    /// entity take `fallback` instead of failing when it is set.
    pub fn init_missing_with(&self, fallback: Option<f64>) -> Result<Array2<f64>> {
        let mut out = self.values.clone();
        for dim in 0..self.dim() {
            let ind = self.indicator.column(dim);
            let observed = ind.sum();
            let fill = if observed > 0.0 {
                self.values.column(dim).dot(&ind) / observed
            } else {
                fallback.ok_or(Error::NoObservedValues { dim })?
            };
            Zip::from(out.column_mut(dim)).and(ind).for_each(|x, &a| {
                if a == 0.0 {
                    *x = fill;
                }
            });
        }
        Ok(out)
    }

    /// `current ⊙ A + inferred ⊙ (1 − A)` where `A` is the indicator.
    pub fn apply_update(&self, current: ArrayView2<'_, f64>, inferred: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        apply_update(current, inferred, self.indicator.view())
    }
}

/// Keeps observed entries of `current` and takes `inferred` everywhere else.
pub fn apply_update(
    current: ArrayView2<'_, f64>,
    inferred: ArrayView2<'_, f64>,
    indicator: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if current.dim() != inferred.dim() || current.dim() != indicator.dim() {
        return Err(Error::dim(
            "attribute update",
            format!("{:?}", current.dim()),
            format!("{:?} / {:?}", inferred.dim(), indicator.dim()),
        ));
    }
    let mut out = Array2::zeros(current.dim());
    Zip::from(&mut out)
        .and(current)
        .and(inferred)
        .and(indicator)
        .for_each(|o, &c, &x, &a| *o = if a == 1.0 { c } else { x });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn schema(decls: &[(&str, FieldKind, usize)]) -> AttributeSchema {
        AttributeSchema::new(
            decls
                .iter()
                .map(|&(n, k, c)| (n.to_string(), k, (0..c).map(|i| format!("c{i}")).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn record(id: &str, fields: &[(&str, &[usize])]) -> RawRecord {
        RawRecord {
            id: id.into(),
            fields: fields.iter().map(|(n, c)| (n.to_string(), c.to_vec())).collect(),
        }
    }

    #[test]
    fn schema_offsets_are_contiguous() {
        let s = schema(&[("a", FieldKind::Single, 2), ("b", FieldKind::Multi, 3), ("c", FieldKind::Single, 4)]);
        let offsets: Vec<_> = s.fields().iter().map(|f| f.offset).collect();
        assert_eq!(offsets, vec![0, 2, 5]);
        assert_eq!(s.total_dim(), 9);
    }

    #[test]
    fn schema_rejects_small_cardinality() {
        assert!(AttributeSchema::new(vec![("g".into(), FieldKind::Single, vec!["m".into()])]).is_err());
        assert!(AttributeSchema::new(vec![("g".into(), FieldKind::Multi, vec!["m".into()])]).is_ok());
    }

    #[test]
    fn encode_one_hot_and_multi_hot() {
        let s = schema(&[("gender", FieldKind::Single, 2)]);
        let t = AttributeTable::encode(&[record("u", &[("gender", &[0])])], &s, Side::User).unwrap();
        assert_eq!(t.values.row(0).to_vec(), vec![1.0, 0.0]);

        let s = schema(&[("genre", FieldKind::Multi, 4)]);
        let t = AttributeTable::encode(&[record("m", &[("genre", &[0, 2])])], &s, Side::Item).unwrap();
        assert_eq!(t.values.row(0).to_vec(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn encode_concatenates_by_offset() {
        let s = schema(&[("a", FieldKind::Single, 2), ("b", FieldKind::Multi, 3)]);
        let t = AttributeTable::encode(&[record("e", &[("a", &[1]), ("b", &[0])])], &s, Side::User).unwrap();
        assert_eq!(t.values.row(0).to_vec(), vec![0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.indicator.row(0).to_vec(), vec![1.0; 5]);
        assert_eq!(t.ground_truth, t.values);
    }

    #[test]
    fn encode_errors_name_entity_and_field() {
        let s = schema(&[("a", FieldKind::Single, 2)]);
        let err = AttributeTable::encode(&[record("u7", &[("a", &[2])])], &s, Side::User).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("u7") && msg.contains("a"), "{msg}");
        let err = AttributeTable::encode(&[record("u8", &[("zzz", &[0])])], &s, Side::User).unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn unknown_field_values_are_unobserved() {
        let s = schema(&[("a", FieldKind::Single, 2)]);
        let t = AttributeTable::encode(&[record("u0", &[("a", &[1])]), record("u1", &[])], &s, Side::User).unwrap();
        assert_eq!(t.indicator.row(1).to_vec(), vec![0.0, 0.0]);
        assert!(!t.known[[1, 0]]);
    }

    fn ten_entity_table(fields: usize) -> AttributeTable {
        let decls: Vec<_> = (0..fields).map(|f| (format!("f{f}"), FieldKind::Single, 2)).collect();
        let decl_refs: Vec<_> = decls.iter().map(|(n, k, c)| (n.as_str(), *k, *c)).collect();
        let s = schema(&decl_refs);
        let names: Vec<String> = (0..fields).map(|f| format!("f{f}")).collect();
        let recs: Vec<_> = (0..10)
            .map(|e| RawRecord {
                id: e.to_string(),
                fields: names.iter().map(|n| (n.clone(), vec![e % 2])).collect(),
            })
            .collect();
        AttributeTable::encode(&recs, &s, Side::User).unwrap()
    }

    #[test]
    fn mask_zero_is_identity() {
        let t = ten_entity_table(1);
        let m = t.mask(0.0, 3).unwrap();
        assert_eq!(m.values, t.values);
        assert!(m.masked.is_empty());
    }

    #[test]
    fn mask_floor_count_and_determinism() {
        let t = ten_entity_table(1);
        let a = t.mask(0.9, 11).unwrap();
        let b = t.mask(0.9, 11).unwrap();
        assert_eq!(a.masked.len(), 9);
        assert_eq!(a, b);
        assert_eq!(a.ground_truth, t.ground_truth);
    }

    #[test]
    fn mask_fields_independently() {
        let t = ten_entity_table(2).mask(0.5, 5).unwrap();
        let f0: Vec<_> = t.masked.iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
        let f1: Vec<_> = t.masked.iter().filter(|p| p.1 == 1).map(|p| p.0).collect();
        assert_eq!(f0.len(), 5);
        assert_eq!(f1.len(), 5);
        // Per-field streams: over many seeds, the two fields' masks differ at least once.
        let differs = (0..20u64).any(|seed| {
            let m = ten_entity_table(2).mask(0.5, seed).unwrap();
            let a: Vec<_> = m.masked.iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
            let b: Vec<_> = m.masked.iter().filter(|p| p.1 == 1).map(|p| p.0).collect();
            a != b
        });
        assert!(differs);
    }

    #[test]
    fn mask_rejects_bad_alpha() {
        let t = ten_entity_table(1);
        assert!(matches!(t.mask(1.0, 0), Err(Error::Config(_))));
        assert!(matches!(t.mask(-0.1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_missing_uses_observed_mean() {
        let s = schema(&[("m", FieldKind::Multi, 1)]);
        let recs: Vec<_> = [1usize, 0, 1, 1]
            .iter()
            .enumerate()
            .map(|(e, &v)| {
                let cats: Vec<usize> = if v == 1 { vec![0] } else { vec![] };
                RawRecord { id: e.to_string(), fields: vec![("m".into(), cats)] }
            })
            .collect();
        let mut t = AttributeTable::encode(&recs, &s, Side::User).unwrap();
        // Hide entity 3 by hand; observed values are {1, 0, 1}.
        t.indicator[[3, 0]] = 0.0;
        t.values[[3, 0]] = 0.0;
        let x0 = t.init_missing().unwrap();
        assert_abs_diff_eq!(x0[[3, 0]], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(x0.slice(s![0..3, 0]).to_vec(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn init_missing_all_observed_and_all_zero() {
        let t = ten_entity_table(1);
        assert_eq!(t.init_missing().unwrap(), t.values);

        let s = schema(&[("m", FieldKind::Multi, 2)]);
        let recs: Vec<_> = (0..3).map(|e| record(&e.to_string(), &[("m", &[])])).collect();
        let mut t = AttributeTable::encode(&recs, &s, Side::Item).unwrap();
        t.indicator.row_mut(2).fill(0.0);
        assert_eq!(t.init_missing().unwrap().row(2).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn init_missing_without_observations() {
        let t = ten_entity_table(1).mask(0.0, 0).unwrap();
        let mut t = t;
        t.indicator.column_mut(1).fill(0.0);
        assert!(matches!(t.init_missing(), Err(Error::NoObservedValues { dim: 1 })));
        let x0 = t.init_missing_with(Some(0.0)).unwrap();
        assert!(x0.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_update_examples() {
        let cur = array![[1.0, 0.0], [0.5, 0.5]];
        let inf = array![[0.9, 0.1], [0.2, 0.8]];
        let ind = array![[1.0, 1.0], [0.0, 0.0]];
        let out = apply_update(cur.view(), inf.view(), ind.view()).unwrap();
        assert_eq!(out, array![[1.0, 0.0], [0.2, 0.8]]);
        let ones = Array2::ones((2, 2));
        assert_eq!(apply_update(cur.view(), inf.view(), ones.view()).unwrap(), cur);
        let zeros = Array2::zeros((2, 2));
        assert_eq!(apply_update(cur.view(), inf.view(), zeros.view()).unwrap(), inf);
        assert!(apply_update(cur.view(), inf.view(), Array2::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn parse_schema_and_records() {
        let p = Path::new("mem");
        let s = AttributeSchema::parse("# demo\ngender\tsingle\tF|M\ngenre\tmulti\tA|B|C\n", p).unwrap();
        assert_eq!(s.total_dim(), 5);
        assert_eq!(AttributeSchema::parse(&s.to_text(), p).unwrap(), s);
        let recs = parse_records("u1\tgender=M\tgenre=A|C\nu2\tgender=F\n", &s, p).unwrap();
        assert_eq!(recs[0].fields, vec![("gender".into(), vec![1]), ("genre".into(), vec![0, 2])]);
        assert_eq!(recs[1].fields, vec![("gender".into(), vec![0])]);
        let err = parse_records("u1\tgender=X\n", &s, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    proptest! {
        #[test]
        fn update_idempotent_and_keeps_observed(
            seed in 0u64..500,
            rows in 1usize..6,
            cols in 1usize..6,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cur = Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>());
            let inf = Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>());
            let ind = Array2::from_shape_fn((rows, cols), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            let once = apply_update(cur.view(), inf.view(), ind.view()).unwrap();
            let twice = apply_update(once.view(), inf.view(), ind.view()).unwrap();
            prop_assert_eq!(&once, &twice);
            for ((o, c), a) in once.iter().zip(cur.iter()).zip(ind.iter()) {
                if *a == 1.0 { prop_assert_eq!(o.to_bits(), c.to_bits()); }
            }
        }

        #[test]
        fn mask_preserves_ground_truth_and_unmasks(seed in 0u64..500, alpha in 0.0f64..0.99) {
            let t = ten_entity_table(3);
            let m = t.mask(alpha, seed).unwrap();
            prop_assert_eq!(&m.ground_truth, &t.ground_truth);
            prop_assert_eq!(&m.unmasked(), &t);
            // values agree with ground truth wherever observed; indicator constant per block
            for e in 0..10 {
                for spec in m.schema.fields() {
                    let block = m.indicator.slice(s![e, spec.block()]);
                    prop_assert!(block.iter().all(|&a| a == block[0]));
                }
                for d in 0..m.dim() {
                    if m.indicator[[e, d]] == 1.0 {
                        prop_assert_eq!(m.values[[e, d]], m.ground_truth[[e, d]]);
                    }
                }
            }
            let x0 = m.init_missing_with(Some(0.0)).unwrap();
            for (x, (v, a)) in x0.iter().zip(m.values.iter().zip(m.indicator.iter())) {
                if *a == 1.0 { prop_assert_eq!(x, v); }
            }
        }
    }
}
