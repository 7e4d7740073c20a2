//! Affine measurement frames, rectified patch sampling and domain-size sampling.
//!
//! A frame maps the unit disc onto the dilated region ellipse. Patches are
//! square, `size x size`, and cover `[-1, 1]^2` in frame coordinates, so the
//! patch pixel spacing in input pixels is `2 rho / size` with `rho` the
//! (geometric-mean) radius of the sampled domain.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::detector::{sqrt_spd, EllipseRegion};
use crate::error::{Error, Result};
use crate::scalespace::{gradients, wrap_angle, LevelIndex, ScaleSpace};

pub const DEFAULT_PATCH_BASE: usize = 32;
pub const DEFAULT_DILATION: f64 = 3.0;
const ORIENTATION_BINS: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFrame {
    /// Maps the unit disc to the dilated ellipse before orientation alignment.
    pub shape: [[f64; 2]; 2],
    pub center: (f64, f64),
    /// Dominant orientation in `[0, 2 pi)`.
    pub theta: f64,
    /// Detected scale `sqrt(det shape) / ref_radius`.
    pub sigma_hat: f64,
    pub ref_radius: f64,
    /// Set when the orientation histogram was empty.
    pub degenerate_orientation: bool,
}

impl AffineFrame {
    /// Frame geometry from a region with `theta = 0`; no image access.
    pub fn from_region_geometry(r: &EllipseRegion, dilation: f64, patch_base: usize) -> Result<Self> {
        if !r.is_positive_definite() {
            return Err(Error::Degenerate("region ellipse is not positive definite".into()));
        }
        if !(dilation > 0.0) {
            return Err(Error::InvalidArgument(format!("dilation must be positive, got {dilation}")));
        }
        let root = sqrt_spd(r.shape_matrix());
        let shape = [
            [dilation * root[0][0], dilation * root[0][1]],
            [dilation * root[1][0], dilation * root[1][1]],
        ];
        let ref_radius = patch_base as f64 / 2.0;
        let sigma_hat = det2(&shape).sqrt() / ref_radius;
        Ok(Self {
            shape,
            center: (r.cx, r.cy),
            theta: 0.0,
            sigma_hat,
            ref_radius,
            degenerate_orientation: false,
        })
    }

    /// Shape matrix composed with the orientation rotation.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        let a = &self.shape;
        [
            [a[0][0] * c + a[0][1] * s, -a[0][0] * s + a[0][1] * c],
            [a[1][0] * c + a[1][1] * s, -a[1][0] * s + a[1][1] * c],
        ]
    }

    pub fn det(&self) -> f64 {
        det2(&self.shape)
    }

    /// The frame with its center moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { center: (self.center.0 + dx, self.center.1 + dy), ..*self }
    }
}

fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Builds the measurement frame of a region: affine shape from the dilated
/// ellipse, orientation from the rectified patch at the detected scale.
pub fn frame_from_region(
    r: &EllipseRegion,
    ss: &ScaleSpace,
    dilation: f64,
    patch_base: usize,
) -> Result<AffineFrame> {
    let mut f = AffineFrame::from_region_geometry(r, dilation, patch_base)?;
    let (hx, hy) = r.scaled(dilation).half_extents();
    let (w, h) = (ss.base_width as f64, ss.base_height as f64);
    if r.cx + hx < 0.0 || r.cx - hx > w - 1.0 || r.cy + hy < 0.0 || r.cy - hy > h - 1.0 {
        return Err(Error::Rejected(format!(
            "ellipse at ({:.1}, {:.1}) lies outside the {w}x{h} image",
            r.cx, r.cy
        )));
    }
    let upright = extract_patch(ss, &f, f.sigma_hat, patch_base)?;
    let (theta, degenerate) = dominant_orientation(&upright)?;
    f.theta = theta;
    f.degenerate_orientation = degenerate;
    Ok(f)
}

/// Square resampled measurement patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub data: Vec<f64>,
    /// Absolute blur of the pyramid level the patch was read from.
    pub source_sigma: f64,
    pub level: LevelIndex,
    /// Fraction of samples that fell outside the level and were clamped.
    pub out_of_bounds: f64,
}

impl Patch {
    pub fn to_image(&self) -> crate::image::GrayImage {
        crate::image::GrayImage::from_fn(self.size, self.size, |x, y| self.data[y * self.size + x])
    }
}

/// Pyramid level used for a domain of radius `rho` resampled to `size` pixels.
///
/// The octave is the one where `rho` is closest to `size / 2` in log space;
/// within it, the level whose blur best matches the resampling step.
pub fn level_for_radius(ss: &ScaleSpace, rho: f64, size: usize) -> LevelIndex {
    let ratio = rho / (size as f64 / 2.0);
    let max_o = ss.num_octaves() as f64 - 1.0;
    let octave = (ratio.log2() + 0.5).floor().clamp(0.0, max_o) as usize;
    let step = ratio / 2f64.powi(octave as i32);
    let s = ss.levels_per_octave as f64;
    let level = (s * step.log2()).round().clamp(0.0, s - 1.0) as usize;
    LevelIndex { octave, level }
}

/// Samples the frame at domain size `sigma` (in detected-scale units, so
/// `sigma = frame.sigma_hat` reproduces the detected region) onto a
/// `size x size` grid by bilinear interpolation of the selected level.
pub fn extract_patch(ss: &ScaleSpace, f: &AffineFrame, sigma: f64, size: usize) -> Result<Patch> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("domain size must be positive, got {sigma}")));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("patch size must be at least 8, got {size}")));
    }
    let rho = sigma * f.ref_radius;
    let idx = level_for_radius(ss, rho, size);
    let level = ss.level(idx);
    let octave_scale = 1.0 / 2f64.powi(idx.octave as i32);
    let m = f.matrix();
    let k = sigma / f.sigma_hat * octave_scale;
    let (cx, cy) = (f.center.0 * octave_scale, f.center.1 * octave_scale);
    let half = size as f64 / 2.0;
    let mut data = Vec::with_capacity(size * size);
    let mut outside = 0usize;
    for i in 0..size {
        let v = (i as f64 + 0.5 - half) / half;
        for j in 0..size {
            let u = (j as f64 + 0.5 - half) / half;
            let x = cx + k * (m[0][0] * u + m[0][1] * v);
            let y = cy + k * (m[1][0] * u + m[1][1] * v);
            let (val, out) = level.sample_bilinear(x, y);
            outside += out as usize;
            data.push(val);
        }
    }
    Ok(Patch {
        size,
        data,
        source_sigma: ss.sigma(idx.octave, idx.level),
        level: idx,
        out_of_bounds: outside as f64 / (size * size) as f64,
    })
}

/// Dominant gradient orientation of a patch: 36-bin magnitude-weighted
/// histogram under a Gaussian window of `sigma = size / 4`, smoothed twice
/// with a circular `[1, 4, 6, 4, 1] / 16` kernel, peak refined by a parabola.
/// A patch without gradient mass yields `(0, true)`.
pub fn dominant_orientation(patch: &Patch) -> Result<(f64, bool)> {
    if patch.size < 8 {
        return Err(Error::InvalidArgument("orientation needs at least an 8x8 patch".into()));
    }
    let img = patch.to_image();
    let g = gradients(&img);
    let n = patch.size;
    let c = n as f64 / 2.0;
    let sigma = n as f64 / 4.0;
    let bin_width = TAU / ORIENTATION_BINS as f64;
    let mut hist = [0.0f64; ORIENTATION_BINS];
    for y in 0..n {
        for x in 0..n {
            let (mag, ori) = g.at(x, y);
            if mag == 0.0 {
                continue;
            }
            let dx = x as f64 + 0.5 - c;
            let dy = y as f64 + 0.5 - c;
            let w = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp() * mag;
            let fb = ori / bin_width;
            let b0 = fb.floor();
            let t = fb - b0;
            let b0 = b0 as usize % ORIENTATION_BINS;
            hist[b0] += w * (1.0 - t);
            hist[(b0 + 1) % ORIENTATION_BINS] += w * t;
        }
    }
    let total: f64 = hist.iter().sum();
    if total <= 1e-9 {
        return Ok((0.0, true));
    }
    for _ in 0..2 {
        let prev = hist;
        for (k, h) in hist.iter_mut().enumerate() {
            let at = |d: isize| prev[(k as isize + d).rem_euclid(ORIENTATION_BINS as isize) as usize];
            *h = (at(-2) + 4.0 * at(-1) + 6.0 * at(0) + 4.0 * at(1) + at(2)) / 16.0;
        }
    }
    let (kmax, _) = hist
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let left = hist[(kmax + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
    let right = hist[(kmax + 1) % ORIENTATION_BINS];
    let mid = hist[kmax];
    let denom = left - 2.0 * mid + right;
    let offset = if denom.abs() > 1e-15 { 0.5 * (left - right) / denom } else { 0.0 };
    Ok((wrap_angle((kmax as f64 + offset) * bin_width), false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeSpacing {
    Linear,
    Geometric,
}

/// Density over domain sizes used to weight the pooled histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SizeDensity {
    Uniform,
    /// Unilateral exponential decaying away from the smallest size;
    /// `rate` is per unit of detected scale.
    Exponential { rate: f64 },
}

/// Domain sizes pooled by DSP-SIFT: `n` samples in `[lambda1, lambda2]`
/// times the detected scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSampling {
    pub lambda1: f64,
    pub lambda2: f64,
    pub n: usize,
    pub spacing: SizeSpacing,
    pub density: SizeDensity,
}

impl Default for SizeSampling {
    fn default() -> Self {
        Self {
            lambda1: 1.0 / 6.0,
            lambda2: 4.0 / 3.0,
            n: 15,
            spacing: SizeSpacing::Linear,
            density: SizeDensity::Uniform,
        }
    }
}

impl SizeSampling {
    pub fn new(lambda1: f64, lambda2: f64, n: usize) -> Result<Self> {
        let s = Self { lambda1, lambda2, n, ..Default::default() };
        s.validate()?;
        Ok(s)
    }

    /// A single sample at the detected scale; pooling reduces to plain SIFT.
    pub fn single() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, n: 1, ..Default::default() }
    }

    /// Symmetric pooling interval `(1 - radius, 1 + radius)` in units of the
    /// detected scale, with the lower end clipped to stay positive.
    pub fn symmetric(radius: f64, n: usize) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("pooling radius must be >= 0, got {radius}")));
        }
        Self::new((1.0 - radius).max(MIN_LAMBDA), 1.0 + radius, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda1 <= self.lambda2 && self.lambda2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < lambda1 <= lambda2, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("need at least one size sample".into()));
        }
        if let SizeDensity::Exponential { rate } = self.density {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::InvalidArgument(format!("exponential rate must be >= 0, got {rate}")));
            }
        }
        Ok(())
    }
}

/// Smallest lower pooling bound produced by [`SizeSampling::symmetric`].
pub const MIN_LAMBDA: f64 = 1e-2;

/// `(sigma_k, w_k)` pairs. Linear spacing gives
/// `sigma_k = (lambda1 + k (lambda2 - lambda1) / (n - 1)) sigma_hat`;
/// a single sample sits at `sigma_hat` itself. Weights sum to one.
pub fn sample_domain_sizes(sigma_hat: f64, s: &SizeSampling) -> Vec<(f64, f64)> {
    if s.n == 1 {
        return vec![(sigma_hat, 1.0)];
    }
    let last = (s.n - 1) as f64;
    let ratios: Vec<f64> = (0..s.n)
        .map(|k| {
            let t = k as f64 / last;
            match s.spacing {
                SizeSpacing::Linear => s.lambda1 + t * (s.lambda2 - s.lambda1),
                SizeSpacing::Geometric => s.lambda1 * (s.lambda2 / s.lambda1).powf(t),
            }
        })
        .collect();
    let raw: Vec<f64> = match s.density {
        SizeDensity::Uniform => vec![1.0; s.n],
        SizeDensity::Exponential { rate } => ratios.iter().map(|r| (-rate * (r - s.lambda1)).exp()).collect(),
    };
    let total: f64 = raw.iter().sum();
    ratios
        .into_iter()
        .zip(raw)
        .map(|(r, w)| (r * sigma_hat, w / total))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn angle_dist(a: f64, b: f64) -> f64 {
        let d = wrap_angle(a - b);
        d.min(TAU - d)
    }

    #[test]
    fn frame_geometry_examples() {
        let f = AffineFrame::from_region_geometry(&EllipseRegion::circle(50.0, 40.0, 5.0), 3.0, 32).unwrap();
        assert!((f.det().sqrt() - 15.0).abs() < 1e-12);
        assert_eq!(f.center, (50.0, 40.0));
        assert!((f.sigma_hat - 15.0 / 16.0).abs() < 1e-12);

        let unit = EllipseRegion::new(0.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        let f = AffineFrame::from_region_geometry(&unit, 1.0, 32).unwrap();
        assert!((f.det() - 1.0).abs() < 1e-12);
        assert!((f.shape[0][0] - 1.0).abs() < 1e-12 && f.shape[0][1].abs() < 1e-12);

        let e = EllipseRegion::new(0.0, 0.0, 1.0 / 16.0, 0.0, 1.0 / 81.0).unwrap();
        let f = AffineFrame::from_region_geometry(&e, 2.0, 32).unwrap();
        assert!((f.det() - 4.0 * 36.0).abs() < 1e-9);
    }

    #[test]
    fn frame_scales_linearly() {
        let e = EllipseRegion::new(10.0, 10.0, 0.05, 0.01, 0.02).unwrap();
        let f1 = AffineFrame::from_region_geometry(&e, 3.0, 32).unwrap();
        for s in [0.5, 2.0, 3.7] {
            let f2 = AffineFrame::from_region_geometry(&e.scaled(s), 3.0, 32).unwrap();
            assert!((f2.det().sqrt() - s * f1.det().sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn region_outside_image_rejected() {
        let img = GrayImage::constant(64, 64, 0.5);
        let ss = ScaleSpace::with_defaults(&img).unwrap();
        let r = EllipseRegion::circle(500.0, 500.0, 3.0);
        assert!(matches!(frame_from_region(&r, &ss, 3.0, 32), Err(Error::Rejected(_))));
    }

    #[test]
    fn domain_size_samples() {
        let s = SizeSampling::new(1.0 / 6.0, 4.0 / 3.0, 3).unwrap();
        let got = sample_domain_sizes(6.0, &s);
        let want = [1.0, 4.5, 8.0];
        for ((sig, w), e) in got.iter().zip(want) {
            assert!((sig - e).abs() < 1e-12);
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(sample_domain_sizes(2.5, &SizeSampling::single()), vec![(2.5, 1.0)]);
        let flat = SizeSampling::new(1.0, 1.0, 5).unwrap();
        assert!(sample_domain_sizes(2.0, &flat).iter().all(|(s, _)| *s == 2.0));
    }

    #[test]
    fn exponential_weights_decay_and_sum_to_one() {
        let s = SizeSampling {
            density: SizeDensity::Exponential { rate: 2.0 },
            ..SizeSampling::default()
        };
        let got = sample_domain_sizes(1.0, &s);
        let total: f64 = got.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(got.windows(2).all(|p| p[1].1 < p[0].1));
    }

    #[test]
    fn sampling_validation() {
        assert!(SizeSampling::new(0.0, 1.0, 3).is_err());
        assert!(SizeSampling::new(2.0, 1.0, 3).is_err());
        assert!(SizeSampling::new(0.5, 1.0, 0).is_err());
        let s = SizeSampling::symmetric(2.0, 3).unwrap();
        assert_eq!(s.lambda1, MIN_LAMBDA);
    }

    #[test]
    fn constant_image_gives_constant_patch() {
        let img = GrayImage::constant(64, 64, 0.3);
        let ss = ScaleSpace::with_defaults(&img).unwrap();
        let f = AffineFrame::from_region_geometry(&EllipseRegion::circle(32.0, 32.0, 16.0), 1.0, 32).unwrap();
        let p = extract_patch(&ss, &f, f.sigma_hat, 32).unwrap();
        assert_eq!(p.level.octave, 0);
        assert!(p.data.iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert_eq!(p.out_of_bounds, 0.0);
    }

    /// Dominant period of a sequence by autocorrelation peak.
    fn period(row: &[f64]) -> usize {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
        let ac = |lag: usize| -> f64 { (0..c.len() - lag).map(|i| c[i] * c[i + lag]).sum() };
        let mut best = 0;
        let mut best_v = f64::MIN;
        // skip the zero-lag lobe
        let mut lag = 1;
        while lag < c.len() / 2 && ac(lag) > 0.0 {
            lag += 1;
        }
        for l in lag..c.len() * 3 / 4 {
            let v = ac(l);
            if v > best_v {
                best_v = v;
                best = l;
            }
        }
        best
    }

    #[test]
    fn stripe_period_scales_with_radius() {
        let img = GrayImage::from_fn(256, 256, |x, _| 0.5 + 0.4 * (TAU * x as f64 / 8.0).sin());
        let ss = ScaleSpace::with_defaults(&img).unwrap();
        for (rho, expected) in [(16.0, 8usize), (8.0, 16)] {
            let f = AffineFrame::from_region_geometry(&EllipseRegion::circle(128.0, 128.0, rho), 1.0, 32).unwrap();
            let p = extract_patch(&ss, &f, f.sigma_hat, 32).unwrap();
            let row = &p.data[16 * 32..17 * 32];
            assert_eq!(period(row), expected, "rho {rho}");
        }
    }

    #[test]
    fn octave_steps_at_log_midpoints() {
        let img = GrayImage::constant(512, 512, 0.5);
        let ss = ScaleSpace::with_defaults(&img).unwrap();
        for o in 0..ss.num_octaves() - 1 {
            let mid = 16.0 * 2f64.powf(o as f64 + 0.5);
            assert_eq!(level_for_radius(&ss, mid * 0.999, 32).octave, o);
            assert_eq!(level_for_radius(&ss, mid * 1.001, 32).octave, o + 1);
            assert_eq!(level_for_radius(&ss, 16.0 * 2f64.powi(o as i32 + 1), 32).octave, o + 1);
        }
    }

    #[test]
    fn translated_patch_is_identical() {
        let base = GrayImage::from_fn(96, 96, |x, y| {
            0.5 + 0.3 * ((x as f64 * 0.3).sin() * (y as f64 * 0.17).cos())
        });
        let shifted = base.translated(5, 3, 0.5);
        let ss0 = ScaleSpace::with_defaults(&base).unwrap();
        let ss1 = ScaleSpace::with_defaults(&shifted).unwrap();
        let r = EllipseRegion::new(40.0, 42.0, 0.02, 0.005, 0.03).unwrap();
        let mut f = AffineFrame::from_region_geometry(&r, 2.0, 32).unwrap();
        f.theta = 0.7;
        let p0 = extract_patch(&ss0, &f, f.sigma_hat, 32).unwrap();
        let p1 = extract_patch(&ss1, &f.translated(5.0, 3.0), f.sigma_hat, 32).unwrap();
        assert_eq!(p0.level.octave, 0);
        for (a, b) in p0.data.iter().zip(&p1.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    fn patch_from(img: &GrayImage) -> Patch {
        Patch {
            size: img.width(),
            data: img.data().to_vec(),
            source_sigma: 1.6,
            level: LevelIndex { octave: 0, level: 0 },
            out_of_bounds: 0.0,
        }
    }

    #[test]
    fn orientation_of_ramps() {
        let ramp = GrayImage::from_fn(32, 32, |x, _| 0.1 + 0.02 * x as f64);
        let (t, degenerate) = dominant_orientation(&patch_from(&ramp)).unwrap();
        assert!(!degenerate);
        assert!(angle_dist(t, 0.0) <= PI / 18.0, "{t}");
        let (tr, _) = dominant_orientation(&patch_from(&ramp.rotated_90())).unwrap();
        // rotated_90 turns gradient angles by -pi/2
        assert!(angle_dist(tr, t - FRAC_PI_2) <= PI / 18.0, "{tr}");
        let (t, degenerate) = dominant_orientation(&patch_from(&GrayImage::constant(16, 16, 0.5))).unwrap();
        assert!(degenerate && t == 0.0);
    }

    #[test]
    fn orientation_is_covariant_with_frame_rotation() {
        // an oblique texture: rotating the frame by the found angle aligns it with 0
        let img = GrayImage::from_fn(128, 128, |x, y| {
            let t = (x as f64 * 0.8 + y as f64 * 0.6) / 6.0;
            0.5 + 0.2 * t.sin() + 0.001 * x as f64
        });
        let ss = ScaleSpace::with_defaults(&img).unwrap();
        let r = EllipseRegion::circle(64.0, 64.0, 8.0);
        let f = frame_from_region(&r, &ss, 3.0, 32).unwrap();
        let p = extract_patch(&ss, &f, f.sigma_hat, 32).unwrap();
        let (t, _) = dominant_orientation(&p).unwrap();
        assert!(angle_dist(t, 0.0) <= PI / 18.0, "{t}");
    }
}
