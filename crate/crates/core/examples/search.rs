//! Bi-level architecture search on a small synthetic set, then discretize.
//!
//! cargo run --release --example search -- [epochs]

use rgbd_sod::data::{synth_dataset, SynthConfig};
use rgbd_sod::model::{CellsConfig, ModelConfig};
use rgbd_sod::backbone::BackboneConfig;
use rgbd_sod::search::{continue_search, SearchConfig, Searcher};

fn main() -> rgbd_sod::Result<()> {
    let epochs = std::env::args().nth(1).map_or(5, |e| e.parse().expect("epochs"));
    let mut backbone = BackboneConfig::tiny((32, 32));
    backbone.rgb_channels = [8, 16, 16, 16, 16];
    backbone.depth_channels = [4, 8, 8, 8, 8];
    let model = ModelConfig {
        backbone,
        cells: CellsConfig { width: 8, nodes: [6, 5, 6, 4], prune_top2: false },
        ..Default::default()
    };
    let data = synth_dataset(&SynthConfig { num_samples: 16, height: 32, width: 32, ..Default::default() })?;

    let mut searcher = Searcher::new(model, SearchConfig { epochs, batch_size: 4, ..Default::default() })?;
    let ckpt = std::env::temp_dir().join("rgbd_sod_search.ckpt");
    let genotype = continue_search(&mut searcher, &data, Some(&ckpt))?;

    print!("{}", searcher.history.to_csv());
    println!("\n{}", genotype.to_text());
    let (rgb, depth) = genotype.count_modality_edges();
    println!("MM cells: {rgb} edges from RGB inputs, {depth} from depth inputs");
    Ok(())
}
