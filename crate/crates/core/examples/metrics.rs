//! Score saliency maps with MAE, adaptive F-measure, S-measure and E-measure.
//!
//! cargo run --example metrics

use rgbd_sod::autograd::Tensor;
use rgbd_sod::data::{synth_dataset, SynthConfig};
use rgbd_sod::metrics::{adaptive_threshold, score_image, EvalReport};

fn blur(t: &Tensor, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        let mut acc = 0.0;
        let mut n = 0.0;
        for yy in y.saturating_sub(2)..(y + 3).min(h) {
            for xx in x.saturating_sub(2)..(x + 3).min(w) {
                acc += t.data()[yy * w + xx];
                n += 1.0;
            }
        }
        acc / n
    })
}

fn main() -> rgbd_sod::Result<()> {
    let data = synth_dataset(&SynthConfig { num_samples: 4, ..Default::default() })?;
    let mut report = EvalReport::default();
    for s in &data {
        let (h, w) = (s.height(), s.width());
        report.push(score_image(&format!("{}_exact", s.id), &s.gt, &s.gt)?);
        let soft = blur(&s.gt, h, w);
        println!("{}: adaptive threshold of the blurred map {:.3}", s.id, adaptive_threshold(&soft));
        report.push(score_image(&format!("{}_blurred", s.id), &soft, &s.gt)?);
        let shifted = Tensor::from_fn(&[1, h, w], |i| if i % w >= 6 { s.gt.data()[i - 6] } else { 0.0 });
        report.push(score_image(&format!("{}_shifted", s.id), &shifted, &s.gt)?);
    }
    print!("{}", report.to_csv());
    Ok(())
}
