//! Generate a synthetic RGB-D dataset on disk and load it back.
//!
//! cargo run --example synth_dataset -- [out_dir]

use rgbd_sod::data::{load_dataset, save_dataset, synth_dataset, SynthConfig};
use rgbd_sod::depth::{compute_histogram, find_modes};

fn main() -> rgbd_sod::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic".into());
    let config = SynthConfig { num_samples: 6, depth_noise: 10.0, ..Default::default() };
    let samples = synth_dataset(&config)?;
    save_dataset(out.as_ref(), &samples)?;

    for s in load_dataset(out.as_ref())? {
        let fg = s.gt.sum() / (s.height() * s.width()) as f64;
        let modes = find_modes(&compute_histogram(&s.depth, 64)?, 3, 5);
        let spans: Vec<String> = modes.iter().map(|m| format!("[{:.0}, {:.0})", m.lo, m.hi)).collect();
        println!("{}: {:.1}% foreground, {} valid depth pixels, modes {}", s.id, 100.0 * fg, s.depth.num_valid(), spans.join(" "));
    }
    Ok(())
}
