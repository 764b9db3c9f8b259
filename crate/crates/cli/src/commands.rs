use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use agcn::attrs::{AttributeTable, FieldKind, Side};
use agcn::baselines;
use agcn::checkpoint;
use agcn::eval::{self, EvalReport, FieldMetric, MetricKind};
use agcn::experiment::{self, GridPoint, PointResult, CHECKPOINT_FILE};
use agcn::model;
use agcn::trainer::{self, EpochLog, EvalSplit, Snapshot};
use agcn::{Dataset, TrainConfig};
use anyhow::{bail, Context, Result};

use crate::config::RunConfig;

const LP_ITERATIONS: usize = 1000;
const LP_TOLERANCE: f64 = 1e-9;

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn log_text(log: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::header());
    out.push('\n');
    for l in log {
        out.push_str(&l.line());
        out.push('\n');
    }
    out
}

fn table(reports: &[&EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let _ = writeln!(out, "{}", first.table_header());
    }
    for r in reports {
        let _ = writeln!(out, "{}", r.table_row());
    }
    out
}

fn write_reports(dir: &Path, val: &EvalReport, test: &EvalReport, extra: &[EvalReport]) -> Result<()> {
    write(&dir.join("report_val.txt"), &val.to_text())?;
    write(&dir.join("report_test.txt"), &test.to_text())?;
    let mut rows = vec![test];
    rows.extend(extra);
    write(&dir.join("report.tsv"), &table(&rows))
}

/// Label-propagation and majority-class rows for the test table, with the
/// ranking columns copied from `like` so the layout lines up.
fn attribute_baselines(ds: &Dataset, like: &EvalReport) -> Result<Vec<EvalReport>> {
    let mut lp = BTreeMap::new();
    let mut majority = BTreeMap::new();
    for table in [&ds.user_attrs, &ds.item_attrs] {
        if table.dim() == 0 {
            continue;
        }
        lp.extend(baselines::label_propagation_metrics(&ds.graph_train, table, LP_ITERATIONS, LP_TOLERANCE)?);
        for (name, value) in eval::majority_class_accuracy(table) {
            let count = table.masked.iter().filter(|p| table.schema.fields()[p.1].name == name).count();
            majority.insert(name, FieldMetric { kind: MetricKind::Acc, value, count });
        }
    }
    let blank = |label: &str, per_field| {
        let mut r = like.clone();
        r.label = label.into();
        r.ranking.hr.values_mut().for_each(|v| *v = f64::NAN);
        r.ranking.ndcg.values_mut().for_each(|v| *v = f64::NAN);
        r.per_field = per_field;
        r.sparsity_groups.clear();
        r
    };
    Ok(vec![blank("lp", lp), blank("majority", majority)])
}

pub fn train(cfg: &RunConfig, resume: bool, with_baselines: bool) -> Result<()> {
    let out = cfg.out_dir()?;
    cfg.echo(out)?;
    let ds = cfg.load_dataset()?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let outcome = experiment::train_checkpointed(&ds, &cfg.train, &ckpt, resume)?;
    write(&out.join("train_log.tsv"), &log_text(&outcome.log))?;
    let val = trainer::evaluate(&outcome.best, &ds, &cfg.train, EvalSplit::Validation, "agcn")?;
    let test = trainer::evaluate(&outcome.best, &ds, &cfg.train, EvalSplit::Test, "agcn")?;
    let mut extra = Vec::new();
    if with_baselines {
        let (_, bpr) = baselines::bpr_baseline(&ds, &cfg.train, EvalSplit::Test)?;
        extra.push(bpr);
        extra.extend(attribute_baselines(&ds, &test)?);
    }
    write_reports(out, &val, &test, &extra)?;
    println!(
        "trained {} epochs, best epoch {}; test hr@10={:.4} ndcg@10={:.4}; outputs in {}",
        outcome.epochs_run,
        outcome.best.epoch,
        test.ranking.hr[&10],
        test.ranking.ndcg[&10],
        out.display()
    );
    Ok(())
}

fn load_snapshot(path: &Path, ds: &Dataset) -> Result<(TrainConfig, Snapshot)> {
    let ck = checkpoint::load(path)?;
    let snap = ck.state.best_snapshot();
    let want = ck.config.dims(ds);
    if snap.params.dims() != want || snap.inputs.x.dim() != ds.user_attrs.values.dim() || snap.inputs.y.dim() != ds.item_attrs.values.dim() {
        bail!(
            "checkpoint {} does not match the dataset: model has {:?}, dataset needs {:?}",
            path.display(),
            snap.params.dims(),
            want
        );
    }
    Ok((ck.config, snap))
}

pub fn evaluate(cfg: &RunConfig, checkpoint_path: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    cfg.echo(out)?;
    let ds = cfg.load_dataset()?;
    let (train_cfg, snap) = load_snapshot(checkpoint_path, &ds)?;
    let val = trainer::evaluate(&snap, &ds, &train_cfg, EvalSplit::Validation, "agcn")?;
    let test = trainer::evaluate(&snap, &ds, &train_cfg, EvalSplit::Test, "agcn")?;
    write_reports(out, &val, &test, &[])?;
    print!("{}", test.to_text());
    Ok(())
}

pub fn prepare_data(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    cfg.echo(out)?;
    let ds = cfg.load_dataset()?;
    let path = out.join("dataset.json");
    ds.save_bundle(&path)?;
    println!(
        "{} users, {} items, {} training pairs; bundle at {}",
        ds.num_users(),
        ds.num_items(),
        ds.train_pairs.len(),
        path.display()
    );
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    cfg.echo(out)?;
    let ds = cfg.load_dataset()?;
    let points = experiment::grid(&cfg.train, &cfg.run.sweep_layers, &cfg.run.sweep_gammas);
    let mut rows: Vec<(GridPoint, Result<PointResult, String>)> = Vec::new();
    for point in points {
        let dir = experiment::point_dir(out, &point);
        match experiment::run_point(&ds, &cfg.train, point, Some(&dir)) {
            Ok(run) => {
                eprintln!("{}: {}", point.label(), if run.reused { "already complete" } else { "done" });
                rows.push((point, Ok(run.result)));
            }
            Err(e) => {
                eprintln!("{}: failed: {e}", point.label());
                rows.push((point, Err(e.to_string())));
            }
        }
    }

    let fields: Vec<String> = rows
        .iter()
        .find_map(|(_, r)| r.as_ref().ok())
        .map(|r| r.test.per_field.iter().map(|(n, m)| format!("{n}({})", m.kind.label().to_uppercase())).collect())
        .unwrap_or_default();
    let mut summary = String::from("point\tK\tgamma\tbest_epoch\tval_HR@10\tHR@10\tNDCG@10");
    for f in &fields {
        summary.push('\t');
        summary.push_str(f);
    }
    summary.push_str("\tstatus\n");
    for (point, r) in &rows {
        let _ = write!(summary, "{}\t{}\t{}", point.label(), point.layers, point.gamma);
        match r {
            Ok(r) => {
                let _ = write!(
                    summary,
                    "\t{}\t{:.6}\t{:.6}\t{:.6}",
                    r.best_epoch, r.val.ranking.hr[&10], r.test.ranking.hr[&10], r.test.ranking.ndcg[&10]
                );
                for m in r.test.per_field.values() {
                    let _ = write!(summary, "\t{}", fmt_metric(m.value));
                }
                summary.push_str("\tok\n");
            }
            Err(e) => {
                summary.push_str(&"\t-".repeat(4 + fields.len()));
                let _ = writeln!(summary, "\terror: {}", e.replace(['\t', '\n'], " "));
            }
        }
    }
    write(&out.join("summary.tsv"), &summary)?;

    // Best grid point per task on the test split.
    let ok: Vec<&PointResult> = rows.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let mut best = String::new();
    let mut pick = |task: &str, score: &dyn Fn(&PointResult) -> Option<f64>| {
        let winner = ok
            .iter()
            .filter_map(|r| score(r).map(|s| (r, s)))
            .fold(None::<(&&PointResult, f64)>, |acc, (r, s)| match acc {
                Some((_, b)) if b >= s => acc,
                _ => Some((r, s)),
            });
        if let Some((r, s)) = winner {
            let _ = writeln!(best, "best.{task}={} {:.6}", r.point.label(), s);
        }
    };
    pick("hr.10", &|r| Some(r.test.ranking.hr[&10]));
    pick("ndcg.10", &|r| Some(r.test.ranking.ndcg[&10]));
    let names: Vec<String> = ok.first().map(|r| r.test.per_field.keys().cloned().collect()).unwrap_or_default();
    for name in names {
        pick(&name, &|r| r.test.per_field.get(&name).and_then(|m| m.value));
    }
    write(&out.join("summary.txt"), &best)?;
    print!("{summary}{best}");
    let failed = rows.iter().filter(|(_, r)| r.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} sweep points failed", rows.len());
    }
    Ok(())
}

fn export_rows(out: &mut String, table: &AttributeTable, probs: &ndarray::Array2<f64>, ids: &agcn::dataio::IdMap) {
    let side = match table.side {
        Side::User => "user",
        Side::Item => "item",
    };
    for &(e, f) in &table.masked {
        let spec = &table.schema.fields()[f];
        let p: Vec<f64> = spec.block().map(|c| probs[[e, c]]).collect();
        let prediction = match spec.kind {
            FieldKind::Single => spec.categories[eval::argmax(&p)].clone(),
            FieldKind::Multi => spec
                .categories
                .iter()
                .zip(&p)
                .filter(|(_, &v)| v >= 0.5)
                .map(|(c, _)| c.as_str())
                .collect::<Vec<_>>()
                .join("|"),
        };
        let raw: Vec<String> = spec.categories.iter().zip(&p).map(|(c, v)| format!("{c}:{v:.9}")).collect();
        let _ = writeln!(out, "{side}\t{}\t{}\t{prediction}\t{}", ids.id(e), spec.name, raw.join("|"));
    }
}

pub fn infer_attributes(cfg: &RunConfig, checkpoint_path: &Path) -> Result<()> {
    let out = cfg.out_dir()?;
    cfg.echo(out)?;
    let ds = cfg.load_dataset()?;
    let (train_cfg, snap) = load_snapshot(checkpoint_path, &ds)?;
    let graph = ds.with_norm(train_cfg.norm)?.graph_train;
    let trace = model::forward(&snap.params, &graph, snap.inputs.x.view(), snap.inputs.y.view())?;
    let mut text = String::from("side\tentity\tfield\tprediction\tprobabilities\n");
    for (side, table, ids) in [(Side::User, &ds.user_attrs, &ds.users), (Side::Item, &ds.item_attrs, &ds.items)] {
        if table.dim() == 0 {
            continue;
        }
        let probs = model::infer_attributes(&trace, &snap.params, side, &table.schema)?;
        export_rows(&mut text, table, &probs, ids);
    }
    let path = out.join("attributes.tsv");
    write(&path, &text)?;
    println!("wrote {} predictions to {}", text.lines().count() - 1, path.display());
    Ok(())
}
