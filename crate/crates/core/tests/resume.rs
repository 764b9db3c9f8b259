//! Interrupting a run at epoch 7 and resuming from the checkpoint replays the
//! uninterrupted trajectory exactly.

use agcn::checkpoint;
use agcn::synthetic::toy_dataset;
use agcn::trainer::{AttrUpdateCadence, Trainer};
use agcn::{NormMode, TrainConfig};

fn run(cadence: AttrUpdateCadence) {
    let ds = toy_dataset(3, 0.9, 4, NormMode::Symmetric).unwrap();
    let cfg = TrainConfig { gamma: 0.1, batch_size: 128, learning_rate: 0.005, patience: 0, max_epochs: 10, attr_update: cadence, ..Default::default() };

    let mut straight = Trainer::new(&ds, &cfg).unwrap();
    while !straight.is_finished() {
        straight.run_epoch().unwrap();
    }
    let want = straight.state();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut first = Trainer::new(&ds, &cfg).unwrap();
    for _ in 0..7 {
        first.run_epoch().unwrap();
    }
    checkpoint::save(&path, &cfg, &first.state()).unwrap();
    drop(first);

    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.config, cfg);
    let mut resumed = Trainer::resume(&ds, &loaded.config, loaded.state).unwrap();
    while !resumed.is_finished() {
        resumed.run_epoch().unwrap();
    }
    let got = resumed.state();

    let losses = |s: &agcn::trainer::TrainState| s.log.iter().map(|l| (l.epoch, l.total_loss.to_bits(), l.val_hr10.map(f64::to_bits))).collect::<Vec<_>>();
    assert_eq!(losses(&got), losses(&want));
    assert_eq!(got.params, want.params);
    assert_eq!(got.optimizer, want.optimizer);
    assert_eq!(got.inputs, want.inputs);
    assert_eq!(got.best, want.best);
    assert_eq!(got.rng, want.rng);
}

#[test]
fn resume_per_epoch_refresh() {
    run(AttrUpdateCadence::PerEpoch);
}

#[test]
fn resume_per_batch_refresh() {
    run(AttrUpdateCadence::PerBatch);
}
