//! Re-weight a feature map with depth region masks through one DSAM block.
//!
//! cargo run --example dsam_block

use rgbd_sod::autograd::Tensor;
use rgbd_sod::data::{synth_sample, SynthConfig};
use rgbd_sod::depth::{decompose_depth, DecompositionConfig};
use rgbd_sod::dsam::{align_mask, dsam_forward, init_dsam};

fn main() -> rgbd_sod::Result<()> {
    let sample = synth_sample(&SynthConfig::default(), 3)?;
    let masks = decompose_depth(&sample.depth, &DecompositionConfig::default())?;

    // masks come at input resolution; a stage-3 feature map is 16x16
    for m in &masks {
        let small = align_mask(m, 16, 16)?;
        println!("region {}: mean weight {:.3} at 16x16", m.region_index, small.mean());
    }

    let channels = 8;
    let feature = Tensor::from_fn(&[channels, 64, 64], |i| ((i * 37) % 101) as f64 / 101.0);
    let (mut store, block) = init_dsam(channels, masks.len(), 0);
    let out = dsam_forward(&feature, &masks, &store, &block)?;
    println!("random transitions: max change {:.4}", out.max_abs_diff(&feature));

    block.zero(&mut store);
    let out = dsam_forward(&feature, &masks, &store, &block)?;
    println!("zero transitions: max change {:e}", out.max_abs_diff(&feature));
    Ok(())
}
