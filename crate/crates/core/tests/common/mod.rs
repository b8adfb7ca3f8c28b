//! Oracles and fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_sod::autograd::Tensor;
use rgbd_sod::backbone::BackboneConfig;
use rgbd_sod::depth::{decompose, decompose_depth, find_modes, DecompositionConfig, DepthHistogram, DepthMap, MaskMode};
use rgbd_sod::model::{CellsConfig, ModelConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Smallest network that still runs every code path, at 16x16.
pub fn micro_model() -> ModelConfig {
    let mut backbone = BackboneConfig::tiny((16, 16));
    backbone.rgb_channels = [4, 4, 6, 6, 6];
    backbone.depth_channels = [2, 2, 4, 4, 4];
    ModelConfig {
        backbone,
        cells: CellsConfig {
            width: 4,
            nodes: [5, 4, 5, 4],
            prune_top2: false,
        },
        ..Default::default()
    }
}

/// Reduced channel schedule used for the multi-seed ablations at 64x64.
pub fn ablation_model() -> ModelConfig {
    let mut backbone = BackboneConfig::tiny((64, 64));
    backbone.rgb_channels = [8, 16, 32, 32, 32];
    backbone.depth_channels = [8, 16, 16, 16, 16];
    ModelConfig {
        backbone,
        cells: CellsConfig {
            width: 8,
            nodes: [6, 5, 6, 4],
            prune_top2: false,
        },
        ..Default::default()
    }
}

// ---------------------------------------------------------------- depth

/// A histogram whose bin `k` spans `[k, k + 1)`.
pub fn unit_histogram(counts: &[usize]) -> DepthHistogram {
    DepthHistogram {
        counts: counts.to_vec(),
        edges: (0..=counts.len()).map(|k| k as f64).collect(),
    }
}

/// `(bins, peak, mass)` per mode, straight from the definition: smoothed values
/// are compared as integers scaled by the lcm of all window sizes, every bin is
/// checked for being the centre of a strict plateau maximum, and neighbouring
/// modes are split at the middle of the lowest stretch between them.
pub fn find_modes_oracle(counts: &[usize], t: usize, width: usize) -> Vec<(std::ops::Range<usize>, usize, usize)> {
    let b = counts.len();
    let half = width / 2;
    let lcm = (1..=width as u64).fold(1u64, |acc, k| acc / gcd(acc, k) * k);
    let s: Vec<u64> = (0..b)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(b);
            let sum: u64 = counts[lo..hi].iter().map(|&c| c as u64).sum();
            sum * (lcm / (hi - lo) as u64)
        })
        .collect();
    let mut peaks: Vec<(usize, usize)> = Vec::new();
    for i in 0..b {
        if s[i] == 0 {
            continue;
        }
        let mut a = i;
        while a > 0 && s[a - 1] == s[i] {
            a -= 1;
        }
        let mut z = i;
        while z + 1 < b && s[z + 1] == s[i] {
            z += 1;
        }
        let left_ok = a == 0 || s[a - 1] < s[i];
        let right_ok = z + 1 == b || s[z + 1] < s[i];
        if left_ok && right_ok && !peaks.contains(&(a, z)) {
            peaks.push((a, z));
        }
    }
    let mut out = Vec::new();
    for (k, &(a, z)) in peaks.iter().enumerate() {
        let split = |l: (usize, usize), r: (usize, usize)| {
            let gap: Vec<usize> = (l.1 + 1..r.0).collect();
            let m = gap.iter().map(|&g| s[g]).min().unwrap();
            let first = *gap.iter().find(|&&g| s[g] == m).unwrap();
            let last = *gap.iter().rev().find(|&&g| s[g] == m).unwrap();
            (first + last + 1) / 2
        };
        let start = if k == 0 { 0 } else { split(peaks[k - 1], (a, z)) };
        let end = if k + 1 == peaks.len() { b } else { split((a, z), peaks[k + 1]) };
        out.push((start..end, (a + z) / 2, counts[start..end].iter().sum::<usize>()));
    }
    out.retain(|x| x.2 > 0);
    out.sort_by(|x, y| y.2.cmp(&x.2).then(x.1.cmp(&y.1)));
    out.truncate(t);
    out
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Compare `find_modes` with the oracle; `Err` carries the first disagreement.
pub fn check_modes(counts: &[usize], t: usize, width: usize) -> Result<(), String> {
    let got: Vec<_> = find_modes(&unit_histogram(counts), t, width)
        .into_iter()
        .map(|w| (w.bins, w.peak_bin, w.mass))
        .collect();
    let want = find_modes_oracle(counts, t, width);
    if got == want {
        Ok(())
    } else {
        Err(format!("counts {counts:?}, T={t}, width={width}: got {got:?}, oracle {want:?}"))
    }
}

/// Every histogram with `bins` bins and counts in `0..=max_count`.
pub fn for_each_histogram(bins: usize, max_count: usize, mut f: impl FnMut(&[usize]) -> Result<(), String>) -> Result<usize, String> {
    let mut c = vec![0usize; bins];
    let mut n = 0;
    loop {
        f(&c)?;
        n += 1;
        let mut k = 0;
        while k < bins && c[k] == max_count {
            c[k] = 0;
            k += 1;
        }
        if k == bins {
            return Ok(n);
        }
        c[k] += 1;
    }
}

/// The full mode-finding oracle suite: exhaustive for 2..=6 bins, then random
/// histograms of 7..=16 bins, all with counts <= 5. Returns the case count.
pub fn find_modes_suite(random_cases: usize, seed: u64) -> Result<usize, String> {
    let mut n = 0;
    for bins in 2..=6 {
        for width in [1, 3, 5] {
            n += for_each_histogram(bins, 5, |c| {
                for t in 1..=3 {
                    check_modes(c, t, width)?;
                }
                Ok(())
            })?;
        }
    }
    let mut r = rng(seed);
    for _ in 0..random_cases {
        let bins = r.random_range(7..=16);
        let counts: Vec<usize> = (0..bins).map(|_| r.random_range(0..=5)).collect();
        let width = [1, 3, 5][r.random_range(0..3)];
        check_modes(&counts, r.random_range(1..=4), width)?;
        n += 1;
    }
    Ok(n)
}

/// A random depth map: a few depth bands with noise and some invalid pixels.
pub fn random_depth_map(r: &mut impl Rng) -> DepthMap {
    let w = r.random_range(1..=24);
    let h = r.random_range(1..=24);
    let bands: Vec<f64> = (0..r.random_range(1..=4)).map(|_| r.random_range(0.0..1000.0)).collect();
    let noise = [0.0, 1.0, 50.0][r.random_range(0..3)];
    let invalid_rate = [0.0, 0.1, 0.9][r.random_range(0..3)];
    let mut values = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let base = bands[r.random_range(0..bands.len())];
        values.push(base + noise * r.random_range(-1.0..1.0));
        valid.push(!r.random_bool(invalid_rate));
    }
    if !valid.iter().any(|v| *v) {
        valid[0] = true;
    }
    DepthMap::new(w, h, values, valid).expect("finite values")
}

/// Partition check on `maps` random depth maps: binary masks sum to exactly 1
/// per pixel, soft masks lie in [0,1] and vanish where the binary mask does,
/// and invalid pixels belong to the remainder only.
pub fn partition_suite(maps: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..maps {
        let depth = random_depth_map(&mut r);
        let cfg = DecompositionConfig {
            regions: r.random_range(1..=5),
            bins: r.random_range(2..=64),
            smooth_width: [1, 3, 5, 7][r.random_range(0..4)],
            mask_mode: MaskMode::Binary,
        };
        let binary = decompose_depth(&depth, &cfg).map_err(|e| format!("case {case}: {e}"))?;
        let soft = decompose_depth(&depth, &DecompositionConfig { mask_mode: MaskMode::Soft, ..cfg.clone() })
            .map_err(|e| format!("case {case}: {e}"))?;
        if binary.len() != cfg.regions || soft.len() != cfg.regions {
            return Err(format!("case {case}: expected {} masks", cfg.regions));
        }
        let n = depth.width() * depth.height();
        for p in 0..n {
            let sum: f64 = binary.iter().map(|m| m.weights[p]).sum();
            if sum != 1.0 {
                return Err(format!("case {case}: pixel {p} covered {sum} times"));
            }
            let remainder = binary.last().unwrap().weights[p];
            if !depth.valid()[p] && remainder != 1.0 {
                return Err(format!("case {case}: invalid pixel {p} outside the remainder"));
            }
            for (b, s) in binary.iter().zip(&soft) {
                let v = s.weights[p];
                if !(0.0..=1.0).contains(&v) || (b.weights[p] == 0.0 && v != 0.0) {
                    return Err(format!("case {case}: soft weight {v} at pixel {p}"));
                }
            }
        }
        // direct windows as well, not only the ones find_modes produces
        let mut edges: Vec<f64> = (0..4).map(|_| r.random_range(-10.0..1010.0)).collect();
        edges.sort_by(f64::total_cmp);
        let windows: Vec<_> = [(edges[0], edges[1]), (edges[2], edges[3])]
            .into_iter()
            .filter(|(lo, hi)| lo < hi)
            .map(|(lo, hi)| rgbd_sod::depth::IntervalWindow { lo, hi, peak_bin: 0, mass: 1, bins: 0..1 })
            .collect();
        let masks = decompose(&depth, &windows, MaskMode::Binary).map_err(|e| format!("case {case}: {e}"))?;
        for p in 0..n {
            let sum: f64 = masks.iter().map(|m| m.weights[p]).sum();
            if sum != 1.0 {
                return Err(format!("case {case}: explicit windows cover pixel {p} {sum} times"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- metrics

fn grid(t: &Tensor, h: usize, w: usize) -> Vec<Vec<f64>> {
    (0..h).map(|y| t.data()[y * w..(y + 1) * w].to_vec()).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Structure measure written directly from its definition (alpha = 0.5).
pub fn reference_s_measure(pred: &Tensor, gt: &Tensor, h: usize, w: usize) -> f64 {
    let eps = f64::EPSILON;
    let p = grid(pred, h, w);
    let g: Vec<Vec<bool>> = grid(gt, h, w).into_iter().map(|r| r.into_iter().map(|v| v > 0.5).collect()).collect();
    let n = (h * w) as f64;
    let fg_count = g.iter().flatten().filter(|v| **v).count() as f64;
    let mean_gt = fg_count / n;
    let mean_pred = p.iter().flatten().sum::<f64>() / n;
    if mean_gt == 0.0 {
        return (1.0 - mean_pred).max(0.0);
    }
    if mean_gt == 1.0 {
        return mean_pred.max(0.0);
    }

    // object-aware term
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if g[y][x] {
                fg.push(p[y][x]);
            } else {
                bg.push(1.0 - p[y][x]);
            }
        }
    }
    let obj = |xs: &[f64]| {
        let (m, s) = mean_std(xs);
        2.0 * m / (m * m + 1.0 + s + eps)
    };
    let s_obj = mean_gt * obj(&fg) + (1.0 - mean_gt) * obj(&bg);

    // region-aware term: split at the rounded 1-based centroid of the GT
    let mut sx = 0.0;
    let mut sy = 0.0;
    for y in 0..h {
        for x in 0..w {
            if g[y][x] {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
            }
        }
    }
    let cx = (sx / fg_count).round() as usize;
    let cy = (sy / fg_count).round() as usize;
    let ssim = |ys: std::ops::Range<usize>, xs: std::ops::Range<usize>| -> (f64, f64) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for y in ys.clone() {
            for x in xs.clone() {
                a.push(p[y][x]);
                b.push(if g[y][x] { 1.0 } else { 0.0 });
            }
        }
        let area = a.len() as f64;
        if a.is_empty() {
            return (0.0, 0.0);
        }
        let ma = a.iter().sum::<f64>() / area;
        let mb = b.iter().sum::<f64>() / area;
        let cov = |u: &[f64], mu: f64, v: &[f64], mv: f64| {
            u.iter().zip(v).map(|(x, y)| (x - mu) * (y - mv)).sum::<f64>() / (area - 1.0 + eps)
        };
        let va = cov(&a, ma, &a, ma);
        let vb = cov(&b, mb, &b, mb);
        let cab = cov(&a, ma, &b, mb);
        let num = 4.0 * ma * mb * cab;
        let den = (ma * ma + mb * mb) * (va + vb);
        let q = if num != 0.0 {
            num / (den + eps)
        } else if den == 0.0 {
            1.0
        } else {
            0.0
        };
        (q, area / n)
    };
    let parts = [ssim(0..cy, 0..cx), ssim(0..cy, cx..w), ssim(cy..h, 0..cx), ssim(cy..h, cx..w)];
    let s_reg: f64 = parts.iter().map(|(q, wt)| q * wt).sum();
    (0.5 * s_obj + 0.5 * s_reg).max(0.0)
}

/// Enhanced-alignment measure written from its definition: mean over pixels
/// of the enhanced alignment between the bias-subtracted binary maps.
pub fn reference_e_measure(pred: &Tensor, gt: &Tensor) -> f64 {
    let eps = f64::EPSILON;
    let n = pred.len() as f64;
    let thr = (2.0 * pred.data().iter().sum::<f64>() / n).min(1.0);
    let fm: Vec<f64> = pred.data().iter().map(|&v| if v >= thr && v > 0.0 { 1.0 } else { 0.0 }).collect();
    let g: Vec<f64> = gt.data().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    let sum_g: f64 = g.iter().sum();
    let phi: Vec<f64> = if sum_g == 0.0 {
        fm.iter().map(|f| 1.0 - f).collect()
    } else if sum_g == n {
        fm.clone()
    } else {
        let mf = fm.iter().sum::<f64>() / n;
        let mg = sum_g / n;
        fm.iter()
            .zip(&g)
            .map(|(f, t)| {
                let a = f - mf;
                let b = t - mg;
                let xi = 2.0 * a * b / (a * a + b * b + eps);
                (1.0 + xi).powi(2) / 4.0
            })
            .collect()
    };
    phi.iter().sum::<f64>() / n
}

/// 20 random 8x8 prediction/GT pairs; GT always has both classes.
pub fn random_metric_cases(seed: u64) -> Vec<(Tensor, Tensor)> {
    let mut r = rng(seed);
    (0..20)
        .map(|k| {
            let pred = Tensor::from_fn(&[1, 8, 8], |_| {
                if k % 4 == 0 {
                    r.random_range(0..=4) as f64 / 4.0
                } else {
                    r.random_range(0.0..1.0)
                }
            });
            let mut gt = Tensor::from_fn(&[1, 8, 8], |_| if r.random_bool(0.35) { 1.0 } else { 0.0 });
            gt.data_mut()[0] = 1.0;
            gt.data_mut()[63] = 0.0;
            (pred, gt)
        })
        .collect()
}

// ---------------------------------------------------------------- gradients

/// Relative error with a small absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference of `f` at every entry of `x`.
pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        out.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
    }
    out
}

pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| rel_err(*a, *b))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- dsam

/// Largest deviation from the identity when every transition is zero.
pub fn dsam_zero_identity_err(seed: u64) -> f64 {
    use rgbd_sod::dsam::{dsam_forward, init_dsam};
    let (mut store, p) = init_dsam(3, 3, seed);
    p.zero(&mut store);
    let mut r = rng(seed);
    let x = random_tensor(&[3, 8, 8], &mut r);
    let masks: Vec<_> = (0..3)
        .map(|t| rgbd_sod::depth::RegionMask {
            width: 8,
            height: 8,
            weights: (0..64).map(|_| r.random_range(0.0..1.0)).collect(),
            region_index: t,
        })
        .collect();
    let out = dsam_forward(&x, &masks, &store, &p).unwrap();
    out.max_abs_diff(&x)
}

/// Deviation from `2x` for one all-ones mask and an identity transition.
pub fn dsam_doubling_err(seed: u64) -> f64 {
    use rgbd_sod::dsam::{dsam_forward, init_dsam};
    let c = 4;
    let (mut store, p) = init_dsam(c, 1, seed);
    let w = store.find("dsam.t0.w").unwrap();
    store.set(w, Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { 1.0 } else { 0.0 }));
    let b = store.find("dsam.t0.b").unwrap();
    store.set(b, Tensor::zeros(&[c]));
    let x = random_tensor(&[c, 4, 4], &mut rng(seed));
    let ones = rgbd_sod::depth::RegionMask {
        width: 8,
        height: 8,
        weights: vec![1.0; 64],
        region_index: 0,
    };
    let out = dsam_forward(&x, &[ones], &store, &p).unwrap();
    out.max_abs_diff(&x.map(|v| 2.0 * v))
}

/// Worst relative error between autodiff and central differences for a DSAM
/// block on a random `2x4x4` input, over the input and every parameter.
pub fn dsam_fd_err(fusion: rgbd_sod::dsam::DsamFusion, seed: u64) -> f64 {
    use rgbd_sod::autograd::{ParamStore, Tape};
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let p = rgbd_sod::dsam::DsamParams::init(&mut store, "dsam", 2, 2, fusion, &mut r);
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, random_tensor(&shape, &mut r));
    }
    let x = random_tensor(&[2, 4, 4], &mut r);
    let masks: Vec<Tensor> = (0..2).map(|_| Tensor::from_fn(&[1, 4, 4], |_| r.random_range(0.0..1.0))).collect();
    let probe = random_tensor(&[2, 4, 4], &mut r);
    let loss = |store: &ParamStore, x: &Tensor| {
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let ms: Vec<_> = masks.iter().map(|m| tape.constant(m.clone())).collect();
        let out = p.forward(tape.constant(x.clone()), &ms, &bound).unwrap();
        out.dot_const(&probe).value().data()[0]
    };
    let tape = Tape::new();
    let bound = store.bind(&tape, true);
    let xv = tape.leaf(x.clone());
    let ms: Vec<_> = masks.iter().map(|m| tape.constant(m.clone())).collect();
    let l = p.forward(xv, &ms, &bound).unwrap().dot_const(&probe);
    let mut g = tape.backward(l);
    let gx = g.get(xv).unwrap().clone();
    let mut worst = max_rel_err(&gx, &numeric_grad(&x, 1e-5, |xp| loss(&store, xp)));
    for (id, ga) in bound.collect(&mut g) {
        let base = store.get(id).clone();
        let ng = numeric_grad(&base, 1e-5, |v| {
            let mut s = store.clone();
            s.set(id, v.clone());
            loss(&s, &x)
        });
        worst = worst.max(max_rel_err(&ga, &ng));
    }
    worst
}

// ---------------------------------------------------------------- nas

use rgbd_sod::autograd::ParamStore;
use rgbd_sod::cells::{apply_op, init_op, mixed_op, CellArch, CellMode, CellParams, CellSpec, CellType, EdgeOps, OpId, NUM_OPS};

/// Every candidate operation at `width`, with random (non-degenerate) weights.
pub fn random_edge(width: usize, seed: u64) -> (ParamStore, EdgeOps) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let ops = OpId::ALL.iter().map(|&op| Some(init_op(op, width, &mut store, "edge", &mut r))).collect();
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, random_tensor(&shape, &mut r));
    }
    (store, EdgeOps { ops })
}

/// Worst softmax-weight error and worst output error of a mixed operation
/// whose logits put `gap` on one op, over all eight ops.
pub fn saturation_errors(gap: f64, seed: u64) -> (f64, f64) {
    use rgbd_sod::autograd::Tape;
    let (store, edge) = random_edge(3, seed);
    let x = random_tensor(&[3, 6, 6], &mut rng(seed + 1));
    let (mut werr, mut oerr) = (0.0f64, 0.0f64);
    for op in OpId::ALL {
        let logits = Tensor::from_fn(&[1, NUM_OPS], |k| if k == op.index() { gap } else { 0.0 });
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let w = tape.constant(logits).softmax_rows();
        for (k, v) in w.value().data().iter().enumerate() {
            let want = if k == op.index() { 1.0 } else { 0.0 };
            werr = werr.max((v - want).abs());
        }
        let xv = tape.constant(x.clone());
        let mixed = mixed_op(xv, &w, 0, &edge, &bound).unwrap();
        let single = apply_op(op, xv, edge.ops[op.index()].as_ref().unwrap(), &bound).unwrap();
        oerr = oerr.max(mixed.value().max_abs_diff(&single.value()));
    }
    (werr, oerr)
}

/// Max |mixed - discrete| over the saliency logits of a micro supernet whose
/// architecture logits give a random op per edge a lead of `gap`.
pub fn mixed_vs_discrete_err(gap: f64, seed: u64) -> f64 {
    use rgbd_sod::autograd::Tape;
    use rgbd_sod::data::{synth_sample, SynthConfig};
    use rgbd_sod::fusion::FusionArch;
    use rgbd_sod::genotype::discretize;
    use rgbd_sod::model::{Architecture, SaliencyNet};

    let cfg = micro_model();
    let supernet = SaliencyNet::new(cfg.clone(), Architecture::Supernet, seed).unwrap();
    let mut alpha = supernet.init_alpha(seed);
    let mut r = rng(seed);
    for t in CellType::ALL {
        let l = alpha.logits_mut(t);
        let rows = l.len() / NUM_OPS;
        let mut table = vec![0.0; l.len()];
        for e in 0..rows {
            table[e * NUM_OPS + r.random_range(0..NUM_OPS)] = gap;
        }
        *l = Tensor::new(&[rows, NUM_OPS], table);
    }
    let genotype = discretize(&alpha, false);
    let mut discrete = SaliencyNet::new(cfg.clone(), Architecture::Genotype(genotype.clone()), seed + 1).unwrap();
    for id in discrete.params.ids().collect::<Vec<_>>() {
        let name = discrete.params.name(id).to_string();
        let src = supernet.params.find(&name).unwrap_or_else(|| panic!("{name} missing in supernet"));
        discrete.params.set(id, supernet.params.get(src).clone());
    }
    let sample = synth_sample(
        &SynthConfig {
            height: 16,
            width: 16,
            seed,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let input = supernet.prepare(&sample).unwrap();
    let tape = Tape::new();
    let wb = supernet.params.bind(&tape, false);
    let ab = alpha.store.bind(&tape, false);
    let weights = alpha.weights(&ab);
    let mixed = supernet.forward(&input, &wb, FusionArch::Mixed(&weights)).unwrap();
    let db = discrete.params.bind(&tape, false);
    let disc = discrete.forward(&input, &db, FusionArch::Discrete(&genotype)).unwrap();
    mixed.value().max_abs_diff(&disc.value())
}

/// A supernet cell of `spec` at `width` with random weights.
pub fn random_cell(spec: CellSpec, width: usize, seed: u64) -> (ParamStore, CellParams) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let ins = vec![width; spec.num_inputs];
    let cell = CellParams::new(&mut store, "cell", spec, &ins, width, CellMode::Supernet, &mut r).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        let scale = if store.name(id).ends_with(".b") { 0.1 } else { 0.7 };
        store.set(id, random_tensor(&shape, &mut r).map(|v| v * scale));
    }
    (store, cell)
}

/// Worst relative error of the architecture-logit gradient of a single SR cell
/// (3 inputs, 4 nodes, width 2, 4x4) against central differences.
pub fn alpha_fd_err(seed: u64) -> f64 {
    use rgbd_sod::autograd::Tape;
    use rgbd_sod::cells::cell_forward;
    let spec = CellSpec::new(CellType::SR, 4).unwrap();
    let (store, cell) = random_cell(spec, 2, seed);
    let mut r = rng(seed + 7);
    let inputs: Vec<Tensor> = (0..3).map(|_| random_tensor(&[2, 4, 4], &mut r)).collect();
    let probe = random_tensor(&[2, 4, 4], &mut r);
    let alpha = random_tensor(&[spec.num_edges(), NUM_OPS], &mut r);
    let loss = |a: &Tensor| {
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let xs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let w = tape.constant(a.clone()).softmax_rows();
        let out = cell_forward(&xs, &cell, CellArch::Mixed(&w), &bound).unwrap();
        out.dot_const(&probe).value().data()[0]
    };
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let xs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let av = tape.leaf(alpha.clone());
    let out = cell_forward(&xs, &cell, CellArch::Mixed(&av.softmax_rows()), &bound).unwrap();
    let g = tape.backward(out.dot_const(&probe));
    let analytic = g.get(av).unwrap().clone();
    max_rel_err(&analytic, &numeric_grad(&alpha, 1e-6, loss))
}
