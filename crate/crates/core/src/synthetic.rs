//! Planted-structure toy dataset: 50 users, 60 items, one binary field per
//! side. Users of a segment mostly interact with items of the matching genre,
//! so both the ranking and the attribute signal are learnable.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attrs::{parse_records, AttributeSchema, AttributeTable, Side};
use crate::dataio::{self, align_records, DataSources, Dataset, Delimiter, RatingFilter, SplitRatios};
use crate::error::{Error, Result};
use crate::graph::NormMode;

pub const TOY_USERS: usize = 50;
pub const TOY_ITEMS: usize = 60;
pub const TOY_SEED: u64 = 20_190_722;
const MATCH_RATE: f64 = 0.30;
const CROSS_RATE: f64 = 0.05;
const MIN_PER_USER: usize = 5;

/// Text of the five toy files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyFiles {
    pub interactions: String,
    pub user_schema: String,
    pub users: String,
    pub item_schema: String,
    pub items: String,
}

impl ToyFiles {
    pub const NAMES: [&'static str; 5] = ["interactions.tsv", "user_schema.tsv", "users.tsv", "item_schema.tsv", "items.tsv"];

    fn contents(&self) -> [&str; 5] {
        [&self.interactions, &self.user_schema, &self.users, &self.item_schema, &self.items]
    }

    /// Writes the files into `dir` and returns sources pointing at them.
    pub fn write(&self, dir: &Path) -> Result<DataSources> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in Self::NAMES.iter().zip(self.contents()) {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(toy_sources(dir))
    }
}

/// Sources for a directory laid out like the bundled toy data.
pub fn toy_sources(dir: &Path) -> DataSources {
    let p = |n: &str| -> PathBuf { dir.join(n) };
    DataSources {
        interactions: p("interactions.tsv"),
        delimiter: Delimiter::Tab,
        rating_filter: RatingFilter::Any,
        min_user_interactions: MIN_PER_USER,
        user_attrs: Some((p("user_schema.tsv"), p("users.tsv"))),
        item_attrs: Some((p("item_schema.tsv"), p("items.tsv"))),
    }
}

/// Generates the toy files from `seed`.
pub fn generate(seed: u64) -> ToyFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segment: Vec<usize> = (0..TOY_USERS).map(|_| rng.gen_range(0..2)).collect();
    let genre: Vec<usize> = (0..TOY_ITEMS).map(|_| rng.gen_range(0..2)).collect();
    let mut interactions = String::from("user\titem\n");
    for (a, &s) in segment.iter().enumerate() {
        let row = loop {
            let row: Vec<usize> = (0..TOY_ITEMS)
                .filter(|&i| rng.gen_bool(if genre[i] == s { MATCH_RATE } else { CROSS_RATE }))
                .collect();
            if row.len() >= MIN_PER_USER {
                break row;
            }
        };
        for i in row {
            interactions.push_str(&format!("u{a:02}\ti{i:02}\n"));
        }
    }
    let labels = ["a", "b"];
    ToyFiles {
        interactions,
        user_schema: "segment\tsingle\ta|b\n".into(),
        users: segment.iter().enumerate().map(|(a, &s)| format!("u{a:02}\tsegment={}\n", labels[s])).collect(),
        item_schema: "genre\tsingle\ta|b\n".into(),
        items: genre.iter().enumerate().map(|(i, &g)| format!("i{i:02}\tgenre={}\n", labels[g])).collect(),
    }
}

/// The copy shipped in `data/toy`.
pub fn bundled() -> ToyFiles {
    ToyFiles {
        interactions: include_str!("../data/toy/interactions.tsv").into(),
        user_schema: include_str!("../data/toy/user_schema.tsv").into(),
        users: include_str!("../data/toy/users.tsv").into(),
        item_schema: include_str!("../data/toy/item_schema.tsv").into(),
        items: include_str!("../data/toy/items.tsv").into(),
    }
}

/// Split and masked toy dataset, prepared exactly as [`dataio::prepare`]
/// would from files on disk.
pub fn toy_dataset(split_seed: u64, alpha: f64, mask_seed: u64, norm: NormMode) -> Result<Dataset> {
    let files = bundled();
    let label = Path::new("<toy>");
    let inter = dataio::parse_interactions(&files.interactions, label, Delimiter::Tab, RatingFilter::Any, MIN_PER_USER)?;
    let table = |schema_text: &str, text: &str, ids, side| -> Result<AttributeTable> {
        let schema = AttributeSchema::parse(schema_text, label)?;
        let records = parse_records(text, &schema, label)?;
        AttributeTable::encode(&align_records(records, ids), &schema, side)
    };
    let users = table(&files.user_schema, &files.users, &inter.users, Side::User)?.mask(alpha, mask_seed)?;
    let items = table(&files.item_schema, &files.items, &inter.items, Side::Item)?.mask(alpha, mask_seed.wrapping_add(1))?;
    Dataset::split(&inter, SplitRatios::default(), split_seed, norm, Some(users), Some(items))
}
