//! Saliency evaluation: MAE, adaptive F-measure, S-measure and E-measure.
//!
//! Maps are `[1, H, W]` (or any `[.., H, W]` with a single plane) tensors.
//! Predictions are in `[0, 1]`; ground truth is binary, read as `> 0.5`.

use std::fmt::Write as _;

use sod_autograd::Tensor;

use crate::error::{shape, Result};

pub const BETA_SQ: f64 = 0.3;
const EPS: f64 = f64::EPSILON;

fn plane(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().product::<usize>() != 1 {
        return Err(shape(format!("expected a single-plane map, got {s:?}")));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

fn check(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    let a = plane(pred)?;
    let b = plane(gt)?;
    if a != b {
        return Err(shape(format!("prediction {a:?} vs ground truth {b:?}")));
    }
    Ok(a)
}

fn binary(gt: &Tensor) -> Vec<bool> {
    gt.data().iter().map(|&v| v > 0.5).collect()
}

pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check(pred, gt)?;
    let g = binary(gt);
    let total: f64 = pred
        .data()
        .iter()
        .zip(&g)
        .map(|(&p, &t)| (p - if t { 1.0 } else { 0.0 }).abs())
        .fold(ExactSum::default(), |mut acc, v| {
            acc.add(v);
            acc
        })
        .value();
    Ok(total / pred.len() as f64)
}

/// Correctly rounded sum of finite values (Shewchuk's non-overlapping partials).
/// Makes MAE independent of pixel order and exact under replication.
#[derive(Default)]
struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for k in 0..self.partials.len() {
            let mut y = self.partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = p[n];
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // round half to even across the remaining partials
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Twice the mean saliency, capped at 1.
pub fn adaptive_threshold(pred: &Tensor) -> f64 {
    (2.0 * pred.mean()).min(1.0)
}

/// Pixels at or above the adaptive threshold. Zero-valued pixels never count
/// as foreground, so an all-zero map binarizes to nothing.
pub fn binarize_adaptive(pred: &Tensor) -> Vec<bool> {
    let thr = adaptive_threshold(pred);
    pred.data().iter().map(|&p| p >= thr && p > 0.0).collect()
}

/// F-measure at the adaptive threshold with `beta^2 = 0.3`.
/// `None` when the ground truth has no foreground.
pub fn f_measure_adaptive(pred: &Tensor, gt: &Tensor) -> Result<Option<f64>> {
    check(pred, gt)?;
    let g = binary(gt);
    let positives = g.iter().filter(|v| **v).count();
    if positives == 0 {
        return Ok(None);
    }
    let b = binarize_adaptive(pred);
    let predicted = b.iter().filter(|v| **v).count();
    let tp = b.iter().zip(&g).filter(|(p, t)| **p && **t).count();
    if tp == 0 {
        return Ok(Some(0.0));
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / positives as f64;
    Ok(Some((1.0 + BETA_SQ) * precision * recall / (BETA_SQ * precision + recall)))
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let sigma = if n < 2 {
        0.0
    } else {
        (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    2.0 * mean / (mean * mean + 1.0 + sigma + EPS)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let fg = object_score(pred.iter().zip(gt).filter(|(_, t)| **t).map(|(p, _)| *p));
    let bg = object_score(pred.iter().zip(gt).filter(|(_, t)| !**t).map(|(p, _)| 1.0 - *p));
    let u = gt.iter().filter(|v| **v).count() as f64 / gt.len() as f64;
    u * fg + (1.0 - u) * bg
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 0.0;
    }
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let denom = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let total = gt.iter().filter(|v| **v).count();
    // 1-based centroid, rounded half away from zero
    let (cx, cy) = if total == 0 {
        ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize)
    } else {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (i, _) in gt.iter().enumerate().filter(|(_, t)| **t) {
            sx += (i % w + 1) as f64;
            sy += (i / w + 1) as f64;
        }
        ((sx / total as f64).round() as usize, (sy / total as f64).round() as usize)
    };
    let area = (h * w) as f64;
    let quads = [
        (0..cy, 0..cx),
        (0..cy, cx..w),
        (cy..h, 0..cx),
        (cy..h, cx..w),
    ];
    let mut weights = [
        (cx * cy) as f64 / area,
        ((w - cx) * cy) as f64 / area,
        (cx * (h - cy)) as f64 / area,
        0.0,
    ];
    weights[3] = 1.0 - weights[0] - weights[1] - weights[2];
    quads
        .iter()
        .zip(weights)
        .map(|((rows, cols), wt)| {
            let mut p = Vec::new();
            let mut g = Vec::new();
            for y in rows.clone() {
                for x in cols.clone() {
                    p.push(pred[y * w + x]);
                    g.push(if gt[y * w + x] { 1.0 } else { 0.0 });
                }
            }
            wt * ssim(&p, &g)
        })
        .sum()
}

/// Structure measure with `alpha = 0.5`, clamped at 0.
pub fn s_measure(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (h, w) = check(pred, gt)?;
    let g = binary(gt);
    let y = g.iter().filter(|v| **v).count() as f64 / g.len() as f64;
    let p = pred.data();
    let q = if y == 0.0 {
        1.0 - pred.mean()
    } else if y == 1.0 {
        pred.mean()
    } else {
        0.5 * s_object(p, &g) + 0.5 * s_region(p, &g, h, w)
    };
    Ok(q.max(0.0))
}

/// Enhanced-alignment measure of the adaptively binarized prediction.
pub fn e_measure(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check(pred, gt)?;
    let g = binary(gt);
    let fm = binarize_adaptive(pred);
    let n = g.len() as f64;
    let fg = g.iter().filter(|v| **v).count();
    let as_f = |b: bool| if b { 1.0 } else { 0.0 };
    let enhanced: f64 = if fg == 0 {
        fm.iter().map(|&f| 1.0 - as_f(f)).sum()
    } else if fg == g.len() {
        fm.iter().map(|&f| as_f(f)).sum()
    } else {
        let mu_f = fm.iter().filter(|v| **v).count() as f64 / n;
        let mu_g = fg as f64 / n;
        fm.iter()
            .zip(&g)
            .map(|(&f, &t)| {
                // b is never zero here since 0 < mu_g < 1, so no epsilon is needed
                let (a, b) = (as_f(f) - mu_f, as_f(t) - mu_g);
                let align = 2.0 * a * b / (a * a + b * b);
                (align + 1.0) * (align + 1.0) / 4.0
            })
            .sum()
    };
    Ok(enhanced / n)
}

/// Scores of one image. `f` is `None` when the ground truth is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub id: String,
    pub f: Option<f64>,
    pub mae: f64,
    pub s: f64,
    pub e: f64,
}

pub fn score_image(id: &str, pred: &Tensor, gt: &Tensor) -> Result<ImageScores> {
    Ok(ImageScores {
        id: id.to_string(),
        f: f_measure_adaptive(pred, gt)?,
        mae: mae(pred, gt)?,
        s: s_measure(pred, gt)?,
        e: e_measure(pred, gt)?,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageScores>,
}

impl EvalReport {
    pub fn push(&mut self, row: ImageScores) {
        if row.f.is_none() {
            log::warn!("{}: empty ground truth, skipped for F", row.id);
        }
        self.rows.push(row);
    }

    /// Mean F over images with foreground; `None` if there are none.
    pub fn mean_f(&self) -> Option<f64> {
        let fs: Vec<f64> = self.rows.iter().filter_map(|r| r.f).collect();
        (!fs.is_empty()).then(|| fs.iter().sum::<f64>() / fs.len() as f64)
    }

    fn mean_of(&self, f: impl Fn(&ImageScores) -> f64) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_mae(&self) -> f64 {
        self.mean_of(|r| r.mae)
    }

    pub fn mean_s(&self) -> f64 {
        self.mean_of(|r| r.s)
    }

    pub fn mean_e(&self) -> f64 {
        self.mean_of(|r| r.e)
    }

    /// `image,F,MAE,S,E` per image and a final `mean` row. Undefined F is empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("image,F,MAE,S,E\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:.6},{:.6},{:.6}", r.id, opt(r.f), r.mae, r.s, r.e).unwrap();
        }
        writeln!(
            out,
            "mean,{},{:.6},{:.6},{:.6}",
            opt(self.mean_f()),
            self.mean_mae(),
            self.mean_s(),
            self.mean_e()
        )
        .unwrap();
        out
    }
}
