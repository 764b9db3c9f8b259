//! Run configuration: one flat TOML document, overridden by flags, echoed
//! back in fully resolved form.

use std::fs;
use std::path::{Path, PathBuf};

use agcn::dataio::{self, movielens, DataSources, Dataset, Delimiter, RatingFilter, SplitRatios};
use agcn::synthetic;
use agcn::TrainConfig;
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Keys that are not training hyperparameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Frozen dataset bundle written by `prepare-data`.
    pub dataset: Option<PathBuf>,
    /// Use the bundled toy dataset.
    pub toy: bool,
    /// MovieLens-1M directory holding `ratings.dat` and `users.dat`.
    pub movielens: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub delimiter: Option<String>,
    pub rating_filter: Option<String>,
    pub min_user_interactions: Option<usize>,
    pub user_schema: Option<PathBuf>,
    pub user_attrs: Option<PathBuf>,
    pub item_schema: Option<PathBuf>,
    pub item_attrs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sweep_layers: Vec<usize>,
    pub sweep_gammas: Vec<f64>,
}

const RUN_KEYS: [&str; 15] = [
    "dataset",
    "toy",
    "movielens",
    "interactions",
    "delimiter",
    "rating_filter",
    "min_user_interactions",
    "user_schema",
    "user_attrs",
    "item_schema",
    "item_attrs",
    "out",
    "sweep_layers",
    "sweep_gammas",
    // accepted for symmetry with the flag; never echoed
    "config",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub train: TrainConfig,
}

impl RunConfig {
    /// The echo document: run keys then training keys.
    pub fn to_toml(&self) -> String {
        let mut out = toml::to_string(&self.run).expect("run section serializes");
        out.push_str(&self.train.to_toml());
        out
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.run.out.as_deref().context("an output location is required (--out)")
    }

    /// Writes the resolved config as `config.toml` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let t = &self.train;
        let r = &self.run;
        let sources = [r.dataset.is_some(), r.toy, r.movielens.is_some(), r.interactions.is_some()];
        match sources.iter().filter(|&&s| s).count() {
            0 => bail!("no dataset given: use --dataset, --toy, --movielens or --interactions"),
            1 => {}
            _ => bail!("give exactly one of --dataset, --toy, --movielens, --interactions"),
        }
        let ds = if let Some(path) = &r.dataset {
            Dataset::load_bundle(path, t.norm)?
        } else if r.toy {
            synthetic::toy_dataset(t.split_seed, t.alpha, t.mask_seed, t.norm)?
        } else if let Some(dir) = &r.movielens {
            movielens::prepare(dir, t.split_seed, t.alpha, t.mask_seed, t.norm)?
        } else {
            let pair = |schema: &Option<PathBuf>, attrs: &Option<PathBuf>, side: &str| match (schema, attrs) {
                (Some(s), Some(a)) => Ok(Some((s.clone(), a.clone()))),
                (None, None) => Ok(None),
                _ => bail!("{side} attributes need both a schema and an attribute file"),
            };
            let sources = DataSources {
                interactions: r.interactions.clone().expect("checked above"),
                delimiter: r.delimiter.as_deref().unwrap_or("auto").parse::<Delimiter>()?,
                rating_filter: r.rating_filter.as_deref().unwrap_or("any").parse::<RatingFilter>()?,
                min_user_interactions: r.min_user_interactions.unwrap_or(5),
                user_attrs: pair(&r.user_schema, &r.user_attrs, "user")?,
                item_attrs: pair(&r.item_schema, &r.item_attrs, "item")?,
            };
            dataio::prepare(&sources, SplitRatios::default(), t.split_seed, t.alpha, t.mask_seed, t.norm)?
        };
        Ok(ds)
    }
}

/// Flags shared by every command; each mirrors a config key.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// Flat TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub movielens: Option<PathBuf>,
    #[arg(long)]
    pub interactions: Option<PathBuf>,
    /// auto, tab, comma or ::
    #[arg(long)]
    pub delimiter: Option<String>,
    /// any, =V or >=V on the rating column.
    #[arg(long)]
    pub rating_filter: Option<String>,
    #[arg(long)]
    pub min_user_interactions: Option<usize>,
    #[arg(long)]
    pub user_schema: Option<PathBuf>,
    #[arg(long)]
    pub user_attrs: Option<PathBuf>,
    #[arg(long)]
    pub item_schema: Option<PathBuf>,
    #[arg(long)]
    pub item_attrs: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d_a: Option<usize>,
    /// Propagation depth.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Attribute mask rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// symmetric or row
    #[arg(long)]
    pub norm: Option<String>,
    /// per-epoch or per-batch
    #[arg(long)]
    pub attr_update: Option<String>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// recall or hit-fraction
    #[arg(long)]
    pub hr_mode: Option<String>,
    #[arg(long)]
    pub missing_fallback: Option<f64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub sample_seed: Option<u64>,
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Comma-separated depths for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub sweep_layers: Vec<usize>,
    /// Comma-separated attribute weights for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub sweep_gammas: Vec<f64>,
}

impl ConfigArgs {
    fn overrides(&self) -> toml::Table {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                t.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| toml::Value::String(p.display().to_string()));
        let string = |s: &Option<String>| s.clone().map(toml::Value::String);
        let int = |v: Option<u64>| v.map(|v| toml::Value::Integer(v as i64));
        let uint = |v: Option<usize>| v.map(|v| toml::Value::Integer(v as i64));
        let float = |v: Option<f64>| v.map(toml::Value::Float);
        put("dataset", path(&self.dataset));
        put("toy", self.toy.then_some(toml::Value::Boolean(true)));
        put("movielens", path(&self.movielens));
        put("interactions", path(&self.interactions));
        put("delimiter", string(&self.delimiter));
        put("rating_filter", string(&self.rating_filter));
        put("min_user_interactions", uint(self.min_user_interactions));
        put("user_schema", path(&self.user_schema));
        put("user_attrs", path(&self.user_attrs));
        put("item_schema", path(&self.item_schema));
        put("item_attrs", path(&self.item_attrs));
        put("out", path(&self.out));
        put("d", uint(self.d));
        put("d_a", uint(self.d_a));
        put("layers", uint(self.layers));
        put("lambda", float(self.lambda));
        put("gamma", float(self.gamma));
        put("learning_rate", float(self.learning_rate));
        put("batch_size", uint(self.batch_size));
        put("alpha", float(self.alpha));
        put("norm", string(&self.norm));
        put("attr_update", string(&self.attr_update));
        put("patience", uint(self.patience));
        put("max_epochs", uint(self.max_epochs));
        put("hr_mode", string(&self.hr_mode));
        put("missing_fallback", float(self.missing_fallback));
        put("init_seed", int(self.init_seed));
        put("sample_seed", int(self.sample_seed));
        put("mask_seed", int(self.mask_seed));
        put("split_seed", int(self.split_seed));
        if !self.sweep_layers.is_empty() {
            put("sweep_layers", Some(toml::Value::Array(self.sweep_layers.iter().map(|&k| toml::Value::Integer(k as i64)).collect())));
        }
        if !self.sweep_gammas.is_empty() {
            put("sweep_gammas", Some(toml::Value::Array(self.sweep_gammas.iter().map(|&g| toml::Value::Float(g)).collect())));
        }
        t
    }

    /// File values, then flags, then defaults for anything still unset.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut table = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => toml::Table::new(),
        };
        table.extend(self.overrides());
        table.remove("config");
        let (run, train): (toml::Table, toml::Table) = table.into_iter().partition(|(k, _)| RUN_KEYS.contains(&k.as_str()));
        let run: RunSection = toml::Value::Table(run).try_into().context("invalid run settings")?;
        let train = TrainConfig::from_toml(&toml::to_string(&train).expect("table serializes"))?;
        train.validate()?;
        Ok(RunConfig { run, train })
    }
}
