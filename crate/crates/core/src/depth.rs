//! Histogram-mode decomposition of a raw depth map into region masks.
//!
//! The valid depth values are quantized into a histogram, the histogram is
//! smoothed with a centered moving average, and its local maxima become
//! interval windows bounded by the valleys on either side. The `T` heaviest
//! windows each give one mask; everything else, including pixels without a
//! depth reading, falls into the last (remainder) mask.

use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Raw depth values with a validity mask. Row-major, `height * width`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("depth map must be non-empty"));
        }
        if values.len() != width * height || valid.len() != width * height {
            return Err(invalid(format!(
                "depth map {width}x{height} needs {} values",
                width * height
            )));
        }
        if values.iter().zip(&valid).any(|(v, &ok)| ok && !v.is_finite()) {
            return Err(invalid("valid depth values must be finite"));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Every pixel carries a reading.
    pub fn dense(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::new(width, height, values, valid)
    }

    /// Sensor convention: zero or non-finite means "no reading".
    pub fn from_sensor(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite() && *v != 0.0).collect();
        let values = values.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect();
        Self::new(width, height, values, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v)
    }

    /// Valid values min-max scaled into `[0, 1]`; invalid pixels map to 0.
    pub fn normalized(&self) -> Vec<f64> {
        let (lo, hi) = self
            .valid_values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = hi - lo;
        self.values
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| {
                if !ok {
                    0.0
                } else if span > 0.0 {
                    (v - lo) / span
                } else {
                    1.0
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthHistogram {
    pub counts: Vec<usize>,
    pub edges: Vec<f64>,
}

impl DepthHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin holding `v`: the last bin whose lower edge is `<= v`.
    pub fn bin_of(&self, v: f64) -> usize {
        let inner = &self.edges[1..self.counts.len()];
        inner.partition_point(|&e| e <= v)
    }
}

/// A depth interval `[lo, hi)` around one histogram mode.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalWindow {
    pub lo: f64,
    pub hi: f64,
    pub peak_bin: usize,
    pub mass: usize,
    pub bins: Range<usize>,
}

impl IntervalWindow {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v < self.hi
    }

    fn overlaps(&self, other: &IntervalWindow) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Depth values scaled into `[0, 1]` over the window range; a window whose
    /// pixels all share one depth gets weight 1.
    #[default]
    Soft,
    /// Plain membership.
    Binary,
}

/// One attention mask at input resolution. `region_index == T` is the remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
    pub region_index: usize,
}

pub fn compute_histogram(depth: &DepthMap, bins: usize) -> Result<DepthHistogram> {
    if bins < 2 {
        return Err(invalid(format!("histogram needs at least 2 bins, got {bins}")));
    }
    let (lo, hi) = depth
        .valid_values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return Err(Error::EmptyDepthMap);
    }
    // a constant map still needs strictly increasing edges
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + span * i as f64 / bins as f64).collect();
    edges[bins] = lo + span;
    let mut hist = DepthHistogram {
        counts: vec![0; bins],
        edges,
    };
    for v in depth.valid_values() {
        let b = hist.bin_of(v);
        hist.counts[b] += 1;
    }
    Ok(hist)
}

/// Moving-average value kept as an exact fraction so comparisons are exact.
#[derive(Clone, Copy, Debug)]
struct Smoothed {
    sum: u64,
    n: u64,
}

impl Smoothed {
    fn is_zero(&self) -> bool {
        self.sum == 0
    }
}

impl PartialEq for Smoothed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Smoothed {}

impl PartialOrd for Smoothed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Smoothed {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.sum as u128 * other.n as u128).cmp(&(other.sum as u128 * self.n as u128))
    }
}

fn smooth_exact(counts: &[usize], width: usize) -> Vec<Smoothed> {
    let half = width / 2;
    let b = counts.len();
    (0..b)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(b);
            Smoothed {
                sum: counts[lo..hi].iter().map(|&c| c as u64).sum(),
                n: (hi - lo) as u64,
            }
        })
        .collect()
}

/// Centered moving average of width `width`, truncated at the histogram ends.
pub fn smooth_counts(counts: &[usize], width: usize) -> Vec<f64> {
    smooth_exact(counts, width.max(1))
        .iter()
        .map(|s| s.sum as f64 / s.n as f64)
        .collect()
}

/// The up-to-`t` heaviest histogram modes, as disjoint windows sorted by
/// descending mass (ties go to the lower peak bin).
///
/// A mode is a plateau of the smoothed histogram that is strictly higher than
/// both neighbours (the histogram ends count as lower); its peak bin is the
/// plateau center. Adjacent modes are split at the middle of the lowest run of
/// bins between them; the outermost modes extend to the histogram ends.
/// Windows holding no counts are dropped.
pub fn find_modes(hist: &DepthHistogram, t: usize, smooth_width: usize) -> Vec<IntervalWindow> {
    let b = hist.counts.len();
    if t == 0 || b == 0 {
        return Vec::new();
    }
    let s = smooth_exact(&hist.counts, smooth_width.max(1));

    let mut plateaus = Vec::new();
    let mut i = 0;
    while i < b {
        let mut j = i;
        while j + 1 < b && s[j + 1] == s[i] {
            j += 1;
        }
        let left_lower = i == 0 || s[i - 1] < s[i];
        let right_lower = j == b - 1 || s[j + 1] < s[i];
        if !s[i].is_zero() && left_lower && right_lower {
            plateaus.push((i, j));
        }
        i = j + 1;
    }
    if plateaus.is_empty() {
        return Vec::new();
    }

    let mut cuts = vec![0];
    for pair in plateaus.windows(2) {
        let (gap_lo, gap_hi) = (pair[0].1 + 1, pair[1].0);
        let min = s[gap_lo..gap_hi].iter().min().copied().expect("peaks are separated");
        let first = (gap_lo..gap_hi).find(|&k| s[k] == min).unwrap();
        let last = (gap_lo..gap_hi).rev().find(|&k| s[k] == min).unwrap();
        cuts.push((first + last + 1) / 2);
    }
    cuts.push(b);

    let mut windows: Vec<IntervalWindow> = plateaus
        .iter()
        .enumerate()
        .map(|(k, &(a, z))| {
            let bins = cuts[k]..cuts[k + 1];
            let hi = if bins.end == b {
                hist.edges[b].next_up()
            } else {
                hist.edges[bins.end]
            };
            IntervalWindow {
                lo: hist.edges[bins.start],
                hi,
                peak_bin: (a + z) / 2,
                mass: hist.counts[bins.clone()].iter().sum(),
                bins,
            }
        })
        .collect();
    // Boundary smoothing can lift an empty edge bin into a peak.
    windows.retain(|w| w.mass > 0);
    windows.sort_by(|x, y| y.mass.cmp(&x.mass).then(x.peak_bin.cmp(&y.peak_bin)));
    windows.truncate(t);
    windows
}

/// Split `depth` into one mask per window plus a remainder mask.
pub fn decompose(depth: &DepthMap, windows: &[IntervalWindow], mode: MaskMode) -> Result<Vec<RegionMask>> {
    for (i, a) in windows.iter().enumerate() {
        if !(a.lo < a.hi) {
            return Err(invalid(format!("window [{}, {}) is empty", a.lo, a.hi)));
        }
        for b in &windows[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::OverlappingWindows(a.lo, a.hi, b.lo, b.hi));
            }
        }
    }
    let n = depth.width * depth.height;
    let mut covered = vec![false; n];
    let mut masks = Vec::with_capacity(windows.len() + 1);
    for (t, win) in windows.iter().enumerate() {
        let span = win.hi - win.lo;
        let (vmin, vmax) = (0..n)
            .filter(|&p| depth.valid[p] && win.contains(depth.values[p]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(depth.values[p]), b.max(depth.values[p])));
        let flat = vmin == vmax;
        let mut weights = vec![0.0; n];
        for (p, w) in weights.iter_mut().enumerate() {
            let v = depth.values[p];
            if !depth.valid[p] || !win.contains(v) {
                continue;
            }
            covered[p] = true;
            *w = match mode {
                MaskMode::Binary => 1.0,
                MaskMode::Soft if flat || !(span > 0.0 && span.is_finite()) => 1.0,
                MaskMode::Soft => ((v - win.lo) / span).clamp(0.0, 1.0),
            };
        }
        masks.push(RegionMask {
            width: depth.width,
            height: depth.height,
            weights,
            region_index: t,
        });
    }
    masks.push(RegionMask {
        width: depth.width,
        height: depth.height,
        weights: covered.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect(),
        region_index: windows.len(),
    });
    Ok(masks)
}

/// Settings for the full histogram → modes → masks pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionConfig {
    /// Number of masks produced, `T + 1`.
    pub regions: usize,
    pub bins: usize,
    pub smooth_width: usize,
    pub mask_mode: MaskMode,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            regions: 3,
            bins: 64,
            smooth_width: 5,
            mask_mode: MaskMode::Soft,
        }
    }
}

/// Always returns exactly `config.regions` masks: when the histogram has fewer
/// than `T` modes, the missing mode masks are all-zero and the remainder stays last.
pub fn decompose_depth(depth: &DepthMap, config: &DecompositionConfig) -> Result<Vec<RegionMask>> {
    if config.regions == 0 {
        return Err(invalid("at least one region is required"));
    }
    if config.smooth_width % 2 == 0 {
        return Err(invalid(format!("smooth width must be odd, got {}", config.smooth_width)));
    }
    let t = config.regions - 1;
    let windows = if t == 0 {
        Vec::new()
    } else {
        match compute_histogram(depth, config.bins) {
            Ok(hist) => find_modes(&hist, t, config.smooth_width),
            Err(Error::EmptyDepthMap) => Vec::new(),
            Err(e) => return Err(e),
        }
    };
    let mut masks = decompose(depth, &windows, config.mask_mode)?;
    let remainder = masks.pop().expect("remainder mask");
    while masks.len() < t {
        masks.push(RegionMask {
            width: depth.width,
            height: depth.height,
            weights: vec![0.0; depth.width * depth.height],
            region_index: masks.len(),
        });
    }
    masks.push(RegionMask {
        region_index: t,
        ..remainder
    });
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_from(counts: &[usize]) -> DepthHistogram {
        DepthHistogram {
            counts: counts.to_vec(),
            edges: (0..=counts.len()).map(|i| i as f64).collect(),
        }
    }

    #[test]
    fn constant_map_fills_one_bin() {
        let d = DepthMap::dense(3, 2, vec![5.0; 6]).unwrap();
        let h = compute_histogram(&d, 8).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 6);
        assert!(h.edges.windows(2).all(|e| e[0] < e[1]));
    }

    #[test]
    fn ramp_fills_each_bin_once() {
        let d = DepthMap::dense(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(compute_histogram(&d, 4).unwrap().counts, vec![1, 1, 1, 1]);
    }

    #[test]
    fn invalid_pixels_are_not_counted() {
        let values = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let valid = vec![true, false, true, false, true, false, true, false];
        let d = DepthMap::new(4, 2, values, valid).unwrap();
        assert_eq!(compute_histogram(&d, 4).unwrap().counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn all_invalid_is_an_error() {
        let d = DepthMap::from_sensor(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(compute_histogram(&d, 4), Err(Error::EmptyDepthMap)));
        assert!(compute_histogram(&DepthMap::dense(1, 1, vec![1.0]).unwrap(), 1).is_err());
    }

    #[test]
    fn unimodal_window_covers_support() {
        let h = hist_from(&[0, 1, 3, 6, 3, 1, 0, 0]);
        let w = find_modes(&h, 1, 1);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].peak_bin, 3);
        assert_eq!(w[0].mass, 14);
        assert!(w[0].bins.start <= 1 && w[0].bins.end >= 6);
    }

    #[test]
    fn bimodal_split_at_zero_valley() {
        let mut counts = vec![0; 64];
        for (c, k) in [(8, 3), (9, 6), (10, 9), (11, 6), (12, 3)] {
            counts[c] = k;
        }
        for (c, k) in [(48, 2), (49, 5), (50, 12), (51, 5), (52, 2)] {
            counts[c] = k;
        }
        let w = find_modes(&hist_from(&counts), 2, 1);
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].peak_bin, w[0].mass), (10, 27));
        assert_eq!((w[1].peak_bin, w[1].mass), (50, 26));
        // the cut sits inside the zero run between the modes
        let cut = w[0].bins.end;
        assert_eq!(cut, w[1].bins.start);
        assert!(cut > 12 && cut <= 48);
        assert!(w[0].hi <= w[1].lo);
    }

    #[test]
    fn fewer_modes_than_requested() {
        let h = hist_from(&[5, 0, 0, 7, 0]);
        assert_eq!(find_modes(&h, 3, 1).len(), 2);
        assert!(find_modes(&hist_from(&[0, 0, 0]), 2, 1).is_empty());
    }

    #[test]
    fn plateau_peak_takes_center() {
        let w = find_modes(&hist_from(&[0, 4, 4, 4, 0]), 1, 1);
        assert_eq!(w[0].peak_bin, 2);
    }

    #[test]
    fn binary_masks_partition() {
        let d = DepthMap::dense(2, 2, vec![1.0, 2.0, 5.0, 9.0]).unwrap();
        let windows = vec![
            IntervalWindow { lo: 0.0, hi: 3.0, peak_bin: 0, mass: 2, bins: 0..1 },
            IntervalWindow { lo: 4.0, hi: 6.0, peak_bin: 1, mass: 1, bins: 1..2 },
        ];
        let masks = decompose(&d, &windows, MaskMode::Binary).unwrap();
        assert_eq!(masks.len(), 3);
        assert_eq!(masks[0].weights, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(masks[1].weights, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(masks[2].weights, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn soft_weights_use_window_range() {
        let d = DepthMap::dense(2, 1, vec![2.0, 4.0]).unwrap();
        let windows = vec![IntervalWindow { lo: 2.0, hi: 6.0, peak_bin: 0, mass: 2, bins: 0..1 }];
        let masks = decompose(&d, &windows, MaskMode::Soft).unwrap();
        assert_eq!(masks[0].weights, vec![0.0, 0.5]);
        assert_eq!(masks[1].weights, vec![0.0, 0.0]);
    }

    #[test]
    fn no_windows_gives_all_ones_remainder() {
        let d = DepthMap::dense(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let masks = decompose(&d, &[], MaskMode::Soft).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].weights, vec![1.0; 4]);
        assert_eq!(masks[0].region_index, 0);
    }

    #[test]
    fn overlapping_windows_rejected() {
        let d = DepthMap::dense(1, 1, vec![1.0]).unwrap();
        let windows = vec![
            IntervalWindow { lo: 0.0, hi: 3.0, peak_bin: 0, mass: 1, bins: 0..3 },
            IntervalWindow { lo: 2.0, hi: 4.0, peak_bin: 3, mass: 1, bins: 2..4 },
        ];
        assert!(matches!(decompose(&d, &windows, MaskMode::Binary), Err(Error::OverlappingWindows(..))));
    }

    #[test]
    fn invalid_pixels_go_to_remainder() {
        let d = DepthMap::from_sensor(3, 1, vec![0.0, 1.0, 1.0]).unwrap();
        let cfg = DecompositionConfig { regions: 2, mask_mode: MaskMode::Binary, ..Default::default() };
        let masks = decompose_depth(&d, &cfg).unwrap();
        assert_eq!(masks[0].weights, vec![0.0, 1.0, 1.0]);
        assert_eq!(masks[1].weights, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn decompose_depth_pads_missing_modes() {
        let d = DepthMap::dense(2, 2, vec![3.0; 4]).unwrap();
        let cfg = DecompositionConfig { regions: 4, ..Default::default() };
        let masks = decompose_depth(&d, &cfg).unwrap();
        assert_eq!(masks.len(), 4);
        assert_eq!(masks.iter().map(|m| m.region_index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(masks[3].weights, vec![0.0; 4]);
        assert_eq!(masks[0].weights, vec![1.0; 4]);
    }
}
