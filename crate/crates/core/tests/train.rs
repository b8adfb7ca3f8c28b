mod common;

use rgbd_sod::autograd::Tensor;
use rgbd_sod::cells::OpId;
use rgbd_sod::data::{synth_dataset, Sample, SynthConfig};
use rgbd_sod::genotype::Genotype;
use rgbd_sod::model::{Architecture, SaliencyNet};
use rgbd_sod::train::*;
use rgbd_sod::Error;

fn data(n: usize, seed: u64) -> Vec<Sample> {
    synth_dataset(&SynthConfig { num_samples: n, height: 16, width: 16, seed, ..Default::default() }).unwrap()
}

fn net(seed: u64) -> SaliencyNet {
    let cfg = common::micro_model();
    let g = Genotype::uniform(cfg.cells.specs().unwrap(), OpId::Conv3);
    SaliencyNet::new(cfg, Architecture::Genotype(g), seed).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, eval_every: 1, ..Default::default() }
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let n = net(0);
    let before = n.params.clone();
    let cfg = TrainConfig { lr: Some(0.0), weight_decay: 0.0, augment: AugmentConfig::none(), ..config(2) };
    let mut t = Trainer::new(n, cfg).unwrap();
    t.run(&data(4, 0), None).unwrap();
    assert!(t.net.params.bit_eq(&before));
    assert_eq!(t.history.len(), 2);
    // only the visiting order changes between epochs
    assert!((t.history[0].loss - t.history[1].loss).abs() <= 1e-12);
    assert_eq!(t.history[0].mae, t.history[1].mae);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.ckpt");
    let d = data(4, 1);
    let mut full = Trainer::new(net(1), config(3)).unwrap();
    full.run(&d, None).unwrap();

    let mut part = Trainer::new(net(1), config(2)).unwrap();
    part.run(&d, Some(&path)).unwrap();
    let mut ckpt = TrainCheckpoint::load(&path).unwrap();
    ckpt.train.epochs = 3;
    let mut resumed = Trainer::resume(ckpt).unwrap();
    resumed.run(&d, None).unwrap();

    assert!(resumed.net.params.bit_eq(&full.net.params));
    assert_eq!(resumed.history, full.history);
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let d = data(2, 2);
    let mut t = Trainer::new(net(2), config(1)).unwrap();
    t.run(&d, Some(&path)).unwrap();
    let back = TrainCheckpoint::load(&path).unwrap();
    assert_eq!(back.epoch, 1);
    let restored = back.network().unwrap();
    assert!(restored.params.bit_eq(&t.net.params));
    let input = t.net.prepare(&d[0]).unwrap();
    assert!(restored.predict(&input).unwrap().bit_eq(&t.net.predict(&input).unwrap()));
}

#[test]
fn corrupt_checkpoints_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Trainer::new(net(3), config(1)).unwrap().checkpoint().save(&path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut flipped = good.clone();
    let k = flipped.len() - 3;
    flipped[k] ^= 0xff;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(TrainCheckpoint::load(&path), Err(Error::Checkpoint(_))));

    std::fs::write(&path, &good[..good.len() / 2]).unwrap();
    assert!(TrainCheckpoint::load(&path).is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(TrainCheckpoint::load(&path).is_err());
    assert!(TrainCheckpoint::load(&dir.path().join("missing")).is_err());
}

#[test]
fn bce_values() {
    let p = Tensor::new(&[1, 1, 4], vec![0.9, 0.2, 0.6, 0.3]);
    let g = Tensor::new(&[1, 1, 4], vec![1.0, 0.0, 0.0, 1.0]);
    let want = -(0.9f64.ln() + 0.8f64.ln() + 0.4f64.ln() + 0.3f64.ln());
    assert!((bce_loss(&p, &g, LossMode::Sum).unwrap() - want).abs() <= 1e-12);
    assert!((bce_loss(&p, &g, LossMode::Mean).unwrap() - want / 4.0).abs() <= 1e-12);
    // clamping keeps certain mistakes finite
    let wrong = bce_loss(&g.map(|v| 1.0 - v), &g, LossMode::Mean).unwrap();
    assert!((wrong - -(1e-7f64).ln()).abs() <= 1e-6);
    assert_eq!(LossMode::Sum.default_lr(), 1e-10);
}

#[test]
fn invalid_training_setups() {
    assert!(Trainer::new(net(0), TrainConfig { batch_size: 0, ..config(1) }).is_err());
    assert!(Trainer::new(net(0), TrainConfig { lr: Some(-1.0), ..config(1) }).is_err());
    let sup = SaliencyNet::new(common::micro_model(), Architecture::Supernet, 0).unwrap();
    assert!(Trainer::new(sup, config(1)).is_err());
    let mut t = Trainer::new(net(0), config(1)).unwrap();
    assert!(t.run(&[], None).is_err());
    let wrong_size = synth_dataset(&SynthConfig { num_samples: 1, height: 32, width: 32, ..Default::default() }).unwrap();
    assert!(t.run(&wrong_size, None).is_err());
}

#[test]
fn early_stop_and_best_record() {
    let mut t = Trainer::new(
        net(4),
        TrainConfig { early_stop: Some(EarlyStop { f: 0.0, mae: 1.0 }), ..config(5) },
    )
    .unwrap();
    t.run(&data(2, 4), None).unwrap();
    assert_eq!(t.epoch, 1);
    let best = t.best.as_ref().unwrap();
    assert_eq!(best.epoch, 1);
    assert!(t.best_net().params.bit_eq(&t.net.params));
}

#[test]
fn micro_network_overfits_one_sample() {
    let d = data(1, 5);
    let cfg = TrainConfig {
        batch_size: 1,
        weight_decay: 0.0,
        augment: AugmentConfig::none(),
        eval_every: 0,
        ..config(3000)
    };
    let mut t = Trainer::new(net(5), cfg).unwrap();
    let first = t.train_epoch(&d).unwrap().loss;
    let mut last = first;
    while t.epoch < 3000 && last >= 0.01 * first {
        last = t.train_epoch(&d).unwrap().loss;
    }
    assert!(last < 0.01 * first, "loss {first} -> {last} after {} epochs", t.epoch);
}
