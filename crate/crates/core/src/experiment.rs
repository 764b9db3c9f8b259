//! Resumable training runs and grid points over depth and attribute weight.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::trainer::{self, EvalSplit, Snapshot, TrainConfig, TrainOutcome, TrainState, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RESULT_FILE: &str = "result.json";

impl TrainState {
    /// Best-validation snapshot, or the current parameters if there is none yet.
    pub fn best_snapshot(&self) -> Snapshot {
        self.best.clone().unwrap_or_else(|| Snapshot {
            params: self.params.clone(),
            inputs: self.inputs.clone(),
            epoch: self.epoch,
        })
    }
}

/// Trains with a checkpoint written after every epoch. With `resume`, an
/// existing checkpoint at `path` is continued; its config must match.
pub fn train_checkpointed(dataset: &Dataset, config: &TrainConfig, path: &Path, resume: bool) -> Result<TrainOutcome> {
    let mut trainer = if resume && path.exists() {
        let ck = checkpoint::load(path)?;
        if checkpoint::config_digest(&ck.config) != checkpoint::config_digest(config) {
            return Err(Error::Config(format!(
                "{} was written with a different configuration",
                path.display()
            )));
        }
        Trainer::resume(dataset, config, ck.state)?
    } else {
        Trainer::new(dataset, config)?
    };
    while !trainer.is_finished() {
        trainer.run_epoch()?;
        checkpoint::save(path, config, &trainer.state())?;
    }
    if trainer.state().epoch == 0 {
        checkpoint::save(path, config, &trainer.state())?;
    }
    Ok(trainer.into_outcome())
}

/// One grid point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub layers: usize,
    pub gamma: f64,
}

impl GridPoint {
    pub fn label(&self) -> String {
        format!("K{}-gamma{}", self.layers, self.gamma)
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            layers: self.layers,
            gamma: self.gamma,
            ..base.clone()
        }
    }
}

/// Cartesian product of the two axes; an empty axis keeps the base value.
pub fn grid(base: &TrainConfig, layers: &[usize], gammas: &[f64]) -> Vec<GridPoint> {
    let ks = if layers.is_empty() { vec![base.layers] } else { layers.to_vec() };
    let gs = if gammas.is_empty() { vec![base.gamma] } else { gammas.to_vec() };
    ks.iter()
        .flat_map(|&layers| gs.iter().map(move |&gamma| GridPoint { layers, gamma }))
        .collect()
}

/// Trained-and-evaluated outcome of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: GridPoint,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val: EvalReport,
    pub test: EvalReport,
}

pub struct PointRun {
    pub result: PointResult,
    /// Loaded from an earlier completed run instead of retrained.
    pub reused: bool,
}

pub fn point_dir(root: &Path, point: &GridPoint) -> PathBuf {
    root.join(point.label())
}

/// Trains and evaluates `point`. With `dir`, a finished point is read back
/// from its result file and an unfinished one resumes from its checkpoint.
pub fn run_point(dataset: &Dataset, base: &TrainConfig, point: GridPoint, dir: Option<&Path>) -> Result<PointRun> {
    let config = point.apply(base);
    if let Some(dir) = dir {
        let done = dir.join(RESULT_FILE);
        if done.exists() {
            let text = fs::read_to_string(&done).map_err(|e| Error::io(&done, e))?;
            let result: PointResult =
                serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", done.display())))?;
            if result.point == point {
                return Ok(PointRun { result, reused: true });
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let outcome = match dir {
        Some(dir) => train_checkpointed(dataset, &config, &dir.join(CHECKPOINT_FILE), true)?,
        None => trainer::train(dataset, &config)?,
    };
    let label = point.label();
    let result = PointResult {
        point,
        best_epoch: outcome.best.epoch,
        epochs_run: outcome.epochs_run,
        val: trainer::evaluate(&outcome.best, dataset, &config, EvalSplit::Validation, &label)?,
        test: trainer::evaluate(&outcome.best, dataset, &config, EvalSplit::Test, &label)?,
    };
    if let Some(dir) = dir {
        let path = dir.join(RESULT_FILE);
        let text = serde_json::to_string_pretty(&result).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(PointRun { result, reused: false })
}
