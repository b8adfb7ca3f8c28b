//! Samples, the synthetic scene generator and PNG dataset I/O.
//!
//! On disk a dataset is a directory with `RGB/`, `depth/` and `GT/`
//! subdirectories holding `<id>.png` files. RGB is 8-bit color, depth is 8- or
//! 16-bit grayscale in raw sensor units (0 = no reading; the synthetic writer
//! uses millimetres), ground truth is 8-bit grayscale thresholded at 128.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sod_autograd::{resize_bilinear, resize_nearest, Tensor};

use crate::depth::{DepthMap, RegionMask};
use crate::error::{invalid, Error, Result};

pub const RGB_DIR: &str = "RGB";
pub const DEPTH_DIR: &str = "depth";
pub const GT_DIR: &str = "GT";

/// An RGB image with its depth map and binary ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub rgb: Tensor,
    pub depth: DepthMap,
    /// `[1, H, W]` with values 0 or 1.
    pub gt: Tensor,
}

impl Sample {
    pub fn new(id: impl Into<String>, rgb: Tensor, depth: DepthMap, gt: Tensor) -> Result<Self> {
        let (h, w) = (depth.height(), depth.width());
        if rgb.shape() != [3, h, w] || gt.shape() != [1, h, w] {
            return Err(invalid(format!(
                "sample shapes disagree: rgb {:?}, depth {h}x{w}, gt {:?}",
                rgb.shape(),
                gt.shape()
            )));
        }
        Ok(Self {
            id: id.into(),
            rgb,
            depth,
            gt,
        })
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    /// Bilinear RGB, nearest-neighbour depth and ground truth.
    pub fn resized(&self, h: usize, w: usize) -> Sample {
        if (h, w) == (self.height(), self.width()) {
            return self.clone();
        }
        let d = Tensor::new(&[1, self.height(), self.width()], self.depth.values().to_vec());
        let valid = Tensor::new(
            &[1, self.height(), self.width()],
            self.depth.valid().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        );
        let d = resize_nearest(&d, h, w);
        let valid = resize_nearest(&valid, h, w);
        Sample {
            id: self.id.clone(),
            rgb: resize_bilinear(&self.rgb, h, w),
            depth: DepthMap::new(w, h, d.into_data(), valid.data().iter().map(|&v| v > 0.5).collect())
                .expect("resized depth is consistent"),
            gt: resize_nearest(&self.gt, h, w),
        }
    }
}

/// Settings for procedurally generated scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub height: usize,
    pub width: usize,
    pub num_distractors: usize,
    /// Standard deviation of additive depth noise, in millimetres.
    pub depth_noise: f64,
    /// Fraction of pixels whose depth reading is dropped.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_samples: 32,
            height: 64,
            width: 64,
            num_distractors: 3,
            depth_noise: 20.0,
            dropout: 0.005,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
struct Texture {
    a: [f64; 3],
    b: [f64; 3],
    freq: f64,
    angle: f64,
}

impl Texture {
    fn random(rng: &mut impl Rng) -> Self {
        let mut color = || [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let (a, b) = (color(), color());
        Self {
            a,
            b,
            freq: rng.random_range(0.15..0.6),
            angle: rng.random_range(0.0..std::f64::consts::PI),
        }
    }

    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        let t = 0.5 + 0.5 * ((x * self.angle.cos() + y * self.angle.sin()) * self.freq).sin();
        [0, 1, 2].map(|c| self.a[c] + (self.b[c] - self.a[c]) * t)
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

/// One synthetic scene (depth in millimetres): a far background plane, small far distractors and a
/// larger salient object in a near depth band. All regions draw their
/// textures from the same distribution, so color alone does not separate them.
pub fn synth_sample(config: &SynthConfig, index: usize) -> Result<Sample> {
    let (h, w) = (config.height, config.width);
    if h < 16 || w < 16 {
        return Err(invalid("synthetic scenes need at least 16x16 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);
    let scale = h.min(w) as f64 / 64.0;
    let (wf, hf) = (w as f64, h as f64);

    let bg_tex = Texture::random(&mut rng);
    let bg_depth = rng.random_range(3800.0..4400.0);
    let (tilt_x, tilt_y) = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));

    let rx = rng.random_range(10.0..16.0) * scale;
    let ry = rng.random_range(10.0..16.0) * scale;
    let cx = rng.random_range(rx + 2.0..wf - rx - 2.0);
    let cy = rng.random_range(ry + 2.0..hf - ry - 2.0);
    let object = if rng.random_bool(0.5) {
        Shape::Ellipse { cx, cy, rx, ry }
    } else {
        Shape::Rect {
            x0: cx - rx * 0.85,
            y0: cy - ry * 0.85,
            x1: cx + rx * 0.85,
            y1: cy + ry * 0.85,
        }
    };
    let obj_tex = Texture::random(&mut rng);
    let obj_depth = rng.random_range(1000.0..1600.0);

    let distractors: Vec<(Shape, Texture, f64)> = (0..config.num_distractors)
        .map(|_| {
            let r = rng.random_range(3.0..5.0) * scale;
            let shape = Shape::Ellipse {
                cx: rng.random_range(r..wf - r),
                cy: rng.random_range(r..hf - r),
                rx: r,
                ry: r,
            };
            (shape, Texture::random(&mut rng), rng.random_range(2800.0..3400.0))
        })
        .collect();

    let noise = Normal::new(0.0, config.depth_noise.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let color_noise = Normal::new(0.0, 0.02).expect("valid std");
    let mut rgb = vec![0.0; 3 * h * w];
    let mut depth = vec![0.0; h * w];
    let mut gt = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let p = y * w + x;
            let (mut color, mut d) = (
                bg_tex.at(px, py),
                bg_depth + tilt_x * (px / wf - 0.5) + tilt_y * (py / hf - 0.5),
            );
            for (shape, tex, dd) in &distractors {
                if shape.contains(px, py) {
                    color = tex.at(px, py);
                    d = *dd;
                }
            }
            if object.contains(px, py) {
                color = obj_tex.at(px, py);
                d = obj_depth;
                gt[p] = 1.0;
            }
            for c in 0..3 {
                rgb[c * h * w + p] = (color[c] + color_noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            d += noise.sample(&mut rng);
            depth[p] = if rng.random_bool(config.dropout.clamp(0.0, 1.0)) { 0.0 } else { d.max(1.0) };
        }
    }
    Sample::new(
        format!("synth_{index:05}"),
        Tensor::new(&[3, h, w], rgb),
        DepthMap::from_sensor(w, h, depth)?,
        Tensor::new(&[1, h, w], gt),
    )
}

pub fn synth_dataset(config: &SynthConfig) -> Result<Vec<Sample>> {
    (0..config.num_samples).map(|i| synth_sample(config, i)).collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb(path: &Path, rgb: &Tensor) -> Result<()> {
    let (_, h, w) = rgb.dims3();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| to_u8(rgb.data()[c * h * w + p])))
    });
    img.save(path)?;
    Ok(())
}

/// Save a `[1, H, W]` map in `[0, 1]` as an 8-bit grayscale image.
pub fn save_gray(path: &Path, map: &Tensor) -> Result<()> {
    let (_, h, w) = map.dims3();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(map.data()[y as usize * w + x as usize])]));
    img.save(path)?;
    Ok(())
}

pub fn save_mask(path: &Path, mask: &RegionMask) -> Result<()> {
    save_gray(path, &Tensor::new(&[1, mask.height, mask.width], mask.weights.clone()))
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let w = depth.width();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, depth.height() as u32, |x, y| {
        let p = y as usize * w + x as usize;
        let mm = if depth.valid()[p] { depth.values()[p].round().clamp(1.0, 65535.0) } else { 0.0 };
        Luma([mm as u16])
    });
    img.save(path)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        img.get_pixel((p % w) as u32, (p / w) as u32)[c] as f64 / 255.0
    }))
}

pub fn load_gray(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::new(&[1, h, w], img.pixels().map(|p| p[0] as f64 / 255.0).collect()))
}

/// Raw depth values from an 8- or 16-bit image; color images use their first channel.
pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(i) => i.pixels().map(|p| p[0] as f64).collect(),
        DynamicImage::ImageLuma16(i) => i.pixels().map(|p| p[0] as f64).collect(),
        DynamicImage::ImageLumaA16(i) => i.pixels().map(|p| p[0] as f64).collect(),
        DynamicImage::ImageRgb16(i) => i.pixels().map(|p| p[0] as f64).collect(),
        DynamicImage::ImageRgba16(i) => i.pixels().map(|p| p[0] as f64).collect(),
        other => other.to_rgb8().pixels().map(|p| p[0] as f64).collect(),
    };
    DepthMap::from_sensor(w, h, values)
}

/// Ground truth binarized at 128.
pub fn load_gt(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::new(&[1, h, w], img.pixels().map(|p| if p[0] >= 128 { 1.0 } else { 0.0 }).collect()))
}

pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    for sub in [RGB_DIR, DEPTH_DIR, GT_DIR] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for s in samples {
        let name = format!("{}.png", s.id);
        save_rgb(&dir.join(RGB_DIR).join(&name), &s.rgb)?;
        save_depth(&dir.join(DEPTH_DIR).join(&name), &s.depth)?;
        save_gray(&dir.join(GT_DIR).join(&name), &s.gt)?;
    }
    Ok(())
}

/// Load every sample and resize it to `(height, width)`.
pub fn load_dataset_resized(dir: &Path, size: (usize, usize)) -> Result<Vec<Sample>> {
    Ok(load_dataset(dir)?.iter().map(|s| s.resized(size.0, size.1)).collect())
}

/// Load every sample of a dataset directory, sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let rgb_dir = dir.join(RGB_DIR);
    if !rgb_dir.is_dir() {
        return Err(Error::Dataset(format!("{} has no {RGB_DIR}/ directory", dir.display())));
    }
    let mut ids: Vec<String> = fs::read_dir(&rgb_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "png").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Dataset(format!("no PNG images in {}", rgb_dir.display())));
    }
    ids.iter()
        .map(|id| {
            let name = format!("{id}.png");
            let need = |sub: &str| {
                let p = dir.join(sub).join(&name);
                if p.is_file() {
                    Ok(p)
                } else {
                    Err(Error::Dataset(format!("sample `{id}`: missing {}", p.display())))
                }
            };
            let rgb = load_rgb(&need(RGB_DIR)?)?;
            let depth = load_depth(&need(DEPTH_DIR)?)?;
            let gt = load_gt(&need(GT_DIR)?)?;
            Sample::new(id.clone(), rgb, depth, gt).map_err(|e| Error::Dataset(format!("{id}: {e}")))
        })
        .collect()
}
