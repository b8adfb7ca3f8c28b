//! Split the depth map of a synthetic scene into histogram-mode regions and
//! write one grayscale mask per region.
//!
//! cargo run --example depth_decomposition -- [out_dir]

use rgbd_sod::data::{save_mask, synth_sample, SynthConfig};
use rgbd_sod::depth::{compute_histogram, decompose, decompose_depth, find_modes, DecompositionConfig, MaskMode};

fn main() -> rgbd_sod::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "decomposition".into());
    let sample = synth_sample(&SynthConfig::default(), 0)?;
    let cfg = DecompositionConfig::default();

    let hist = compute_histogram(&sample.depth, cfg.bins)?;
    for w in find_modes(&hist, cfg.regions - 1, cfg.smooth_width) {
        println!("window [{:.0}, {:.0}) mm, peak bin {}, {} pixels", w.lo, w.hi, w.peak_bin, w.mass);
    }

    let masks = decompose_depth(&sample.depth, &cfg)?;
    std::fs::create_dir_all(&out)?;
    for m in &masks {
        let covered = m.weights.iter().filter(|w| **w > 0.0).count();
        let path = format!("{out}/region_{}.png", m.region_index);
        save_mask(path.as_ref(), m)?;
        println!("{path}: {covered} pixels");
    }

    // the nearest window should line up with the salient object
    let windows = find_modes(&hist, cfg.regions - 1, cfg.smooth_width);
    if let Some(near) = windows.iter().min_by(|a, b| a.lo.total_cmp(&b.lo)) {
        let mask = &decompose(&sample.depth, std::slice::from_ref(near), MaskMode::Binary)?[0];
        let (mut inter, mut union) = (0, 0);
        for (m, g) in mask.weights.iter().zip(sample.gt.data()) {
            inter += (*m > 0.5 && *g > 0.5) as usize;
            union += (*m > 0.5 || *g > 0.5) as usize;
        }
        println!("nearest window vs ground truth: IoU {:.3}", inter as f64 / union as f64);
    }
    Ok(())
}
