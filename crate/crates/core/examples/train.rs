//! Train a fixed architecture, checkpoint it and predict from the reloaded model.
//!
//! cargo run --release --example train -- [epochs]

use rgbd_sod::backbone::BackboneConfig;
use rgbd_sod::cells::OpId;
use rgbd_sod::data::{save_gray, synth_dataset, SynthConfig};
use rgbd_sod::genotype::Genotype;
use rgbd_sod::model::{Architecture, CellsConfig, ModelConfig, SaliencyNet};
use rgbd_sod::train::{evaluate, AugmentConfig, TrainCheckpoint, TrainConfig, Trainer};

fn main() -> rgbd_sod::Result<()> {
    let epochs = std::env::args().nth(1).map_or(40, |e| e.parse().expect("epochs"));
    let mut backbone = BackboneConfig::tiny((32, 32));
    backbone.rgb_channels = [8, 16, 16, 16, 16];
    backbone.depth_channels = [4, 8, 8, 8, 8];
    let model = ModelConfig {
        backbone,
        cells: CellsConfig { width: 8, nodes: [6, 5, 6, 4], prune_top2: false },
        ..Default::default()
    };
    let genotype = Genotype::uniform(model.cells.specs()?, OpId::Conv3);
    let data = synth_dataset(&SynthConfig { num_samples: 8, height: 32, width: 32, seed: 1, ..Default::default() })?;

    let net = SaliencyNet::new(model, Architecture::Genotype(genotype), 0)?;
    let config = TrainConfig { epochs, eval_every: 10, augment: AugmentConfig::none(), ..Default::default() };
    let mut trainer = Trainer::new(net, config)?;
    let ckpt = std::env::temp_dir().join("rgbd_sod_train.ckpt");
    trainer.run(&data, Some(&ckpt))?;
    for r in trainer.history.iter().filter(|r| r.f.is_some()) {
        println!("epoch {:3}  loss {:.4}  F {:.4}  MAE {:.4}", r.epoch, r.loss, r.f.unwrap(), r.mae.unwrap());
    }

    let net = TrainCheckpoint::load(&ckpt)?.network()?;
    let report = evaluate(&net, &data)?;
    println!("reloaded: F {:.4}, MAE {:.4}", report.mean_f().unwrap_or(0.0), report.mean_mae());
    let map = net.predict(&net.prepare(&data[0])?)?;
    let out = std::env::temp_dir().join("rgbd_sod_prediction.png");
    save_gray(&out, &map)?;
    println!("prediction for {} written to {}", data[0].id, out.display());
    Ok(())
}
