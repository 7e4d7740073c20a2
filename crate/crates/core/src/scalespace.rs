//! Gaussian octave pyramid and per-level gradient fields.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Blur already present in camera images.
pub const ASSUMED_INPUT_BLUR: f64 = 0.5;
pub const DEFAULT_SIGMA0: f64 = 1.6;
pub const DEFAULT_LEVELS_PER_OCTAVE: usize = 3;

/// Separable Gaussian blur with replicated borders. The kernel is sampled
/// at integer offsets up to `ceil(4 sigma)` and normalized to unit sum.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += k * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (i, k) in kernel.iter().enumerate() {
            let sy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += k * s;
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    GrayImage::from_raw(w, h, out)
}

#[derive(Debug, Clone)]
pub struct Octave {
    pub levels: Vec<GrayImage>,
}

/// Level `(o, l)` holds the input blurred to `sigma0 * 2^o * 2^(l/S)` and
/// decimated by `2^o`.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub octaves: Vec<Octave>,
    pub sigma0: f64,
    pub levels_per_octave: usize,
    pub base_width: usize,
    pub base_height: usize,
}

/// Location of a level in the pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelIndex {
    pub octave: usize,
    pub level: usize,
}

/// Largest octave count that keeps the coarsest octave at least `min_side`
/// pixels on its short side.
pub fn max_octaves(width: usize, height: usize, min_side: usize) -> usize {
    let mut n = 1;
    let mut side = width.min(height);
    while side.div_ceil(2) >= min_side {
        side = side.div_ceil(2);
        n += 1;
    }
    n
}

impl ScaleSpace {
    pub fn build(img: &GrayImage, sigma0: f64, levels_per_octave: usize, n_octaves: usize) -> Result<Self> {
        if n_octaves == 0 || levels_per_octave == 0 {
            return Err(Error::InvalidArgument("need at least one octave and one level".into()));
        }
        if sigma0 <= ASSUMED_INPUT_BLUR {
            return Err(Error::InvalidArgument(format!(
                "sigma0 must exceed the assumed input blur {ASSUMED_INPUT_BLUR}"
            )));
        }
        let limit = 1usize << n_octaves.min(usize::BITS as usize - 1);
        if img.width() <= limit || img.height() <= limit {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image too small for {n_octaves} octaves",
                img.width(),
                img.height()
            )));
        }
        let s = levels_per_octave as f64;
        let rel = |l: usize| sigma0 * 2f64.powf(l as f64 / s);
        let mut base = Some(gaussian_blur(
            img,
            (sigma0 * sigma0 - ASSUMED_INPUT_BLUR * ASSUMED_INPUT_BLUR).sqrt(),
        ));
        let mut octaves = Vec::with_capacity(n_octaves);
        for o in 0..n_octaves {
            let mut levels = vec![base.take().expect("octave base")];
            for l in 1..levels_per_octave {
                let inc = (rel(l).powi(2) - rel(l - 1).powi(2)).sqrt();
                levels.push(gaussian_blur(levels.last().expect("nonempty"), inc));
            }
            if o + 1 < n_octaves {
                // blur 2*sigma0 in this octave becomes sigma0 after decimation
                let l = levels_per_octave;
                let inc = (rel(l).powi(2) - rel(l - 1).powi(2)).sqrt();
                base = Some(gaussian_blur(levels.last().expect("nonempty"), inc).decimate());
            }
            octaves.push(Octave { levels });
        }
        Ok(Self {
            octaves,
            sigma0,
            levels_per_octave,
            base_width: img.width(),
            base_height: img.height(),
        })
    }

    /// Pyramid with default blur settings and as many octaves as keep the
    /// coarsest level at least 16 pixels wide.
    pub fn with_defaults(img: &GrayImage) -> Result<Self> {
        let n = max_octaves(img.width(), img.height(), 16);
        Self::build(img, DEFAULT_SIGMA0, DEFAULT_LEVELS_PER_OCTAVE, n)
    }

    pub fn num_octaves(&self) -> usize {
        self.octaves.len()
    }

    /// Absolute blur of level `(o, l)` in input-pixel units.
    pub fn sigma(&self, octave: usize, level: usize) -> f64 {
        self.sigma0 * 2f64.powi(octave as i32) * 2f64.powf(level as f64 / self.levels_per_octave as f64)
    }

    pub fn level(&self, idx: LevelIndex) -> &GrayImage {
        &self.octaves[idx.octave].levels[idx.level]
    }

    /// Level whose blur is nearest to `sigma` in log space; ties go to the
    /// smaller index. Returns `true` in the flag when `sigma < sigma0` and
    /// the lookup was clamped to `(0, 0)`.
    pub fn octave_for_scale(&self, sigma: f64) -> (LevelIndex, bool) {
        if !(sigma >= self.sigma0) {
            return (LevelIndex { octave: 0, level: 0 }, true);
        }
        let target = (sigma / self.sigma0).log2();
        let s = self.levels_per_octave as f64;
        let mut best = LevelIndex { octave: 0, level: 0 };
        let mut best_d = f64::INFINITY;
        for o in 0..self.num_octaves() {
            for l in 0..self.levels_per_octave {
                let d = (o as f64 + l as f64 / s - target).abs();
                if d < best_d - 1e-12 {
                    best_d = d;
                    best = LevelIndex { octave: o, level: l };
                }
            }
        }
        (best, false)
    }
}

/// Per-pixel gradient magnitude and orientation in `[0, 2 pi)`.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub mag: Vec<f64>,
    pub ori: Vec<f64>,
}

impl GradientField {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.mag[i], self.ori[i])
    }
}

/// Wraps an angle into `[0, 2 pi)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Central differences inside, one-sided differences on the border.
pub fn gradients(img: &GrayImage) -> GradientField {
    let (w, h) = (img.width(), img.height());
    let d = |lo: f64, hi: f64, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f64 };
    let mut mag = Vec::with_capacity(w * h);
    let mut ori = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = d(img.get(x0, y), img.get(x1, y), x1 - x0);
            let gy = d(img.get(x, y0), img.get(x, y1), y1 - y0);
            mag.push((gx * gx + gy * gy).sqrt());
            ori.push(wrap_angle(gy.atan2(gx)));
        }
    }
    GradientField { width: w, height: h, mag, ori }
}
