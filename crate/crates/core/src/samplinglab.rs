//! One-dimensional experiments on scale sampling: warped-signal matching
//! energies, aliasing from undersampled scale grids, anti-aliasing by
//! averaging, detector versus descriptor sensitivity, and pooled histograms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUPERSAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal1D {
    pub samples: Vec<f64>,
    /// Distance between consecutive samples; sample `i` sits at `i * spacing`.
    pub spacing: f64,
}

impl Signal1D {
    pub fn new(samples: Vec<f64>, spacing: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("a signal needs at least two samples".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Self { samples, spacing })
    }

    pub fn unit(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, 1.0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn position(&self, i: usize) -> f64 {
        i as f64 * self.spacing
    }

    /// Linear interpolation at coordinate `x`; reads beyond either end return
    /// the boundary sample and set the flag.
    pub fn interpolate(&self, x: f64) -> (f64, bool) {
        let t = x / self.spacing;
        let last = (self.len() - 1) as f64;
        if t < 0.0 {
            return (self.samples[0], true);
        }
        if t > last {
            return (self.samples[self.len() - 1], true);
        }
        let i = (t.floor() as usize).min(self.len() - 2);
        let f = t - i as f64;
        (self.samples[i] * (1.0 - f) + self.samples[i + 1] * f, false)
    }

    pub fn range(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Cell average of `x -> rho((x - tau) / sigma)` over the sample cell
/// centered at `x`, by midpoint supersampling.
fn warp_at(rho: &Signal1D, sigma: f64, tau: f64, x: f64) -> (f64, bool) {
    let eps = rho.spacing;
    let mut sum = 0.0;
    let mut clamped = false;
    for s in 0..SUPERSAMPLES {
        let xs = x + eps * ((s as f64 + 0.5) / SUPERSAMPLES as f64 - 0.5);
        let (v, c) = rho.interpolate((xs - tau) / sigma);
        sum += v;
        clamped |= c;
    }
    (sum / SUPERSAMPLES as f64, clamped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub signal: Signal1D,
    /// Some supersample read outside the source domain.
    pub clamped: bool,
}

/// `n` samples of the source scaled by `sigma` and shifted by `tau`, each
/// averaged over its sample cell, on the source's grid.
pub fn warp(rho: &Signal1D, sigma: f64, tau: f64, n: usize) -> Result<Warped> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("warp scale must be positive, got {sigma}")));
    }
    let mut clamped = false;
    let samples = (0..n)
        .map(|i| {
            let (v, c) = warp_at(rho, sigma, tau, rho.position(i));
            clamped |= c;
            v
        })
        .collect();
    Ok(Warped { signal: Signal1D::new(samples, rho.spacing)?, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Residual {
    L1,
    L2,
}

/// Matching energy over a `(sigma, tau)` grid, `energy[s][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySurface {
    pub scales: Vec<f64>,
    pub translations: Vec<f64>,
    pub energy: Vec<Vec<f64>>,
}

/// Minimum energy over translations for each scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRidge {
    pub scales: Vec<f64>,
    pub energy: Vec<f64>,
}

impl EnergySurface {
    pub fn ridge(&self) -> EnergyRidge {
        EnergyRidge {
            scales: self.scales.clone(),
            energy: self.energy.iter().map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min)).collect(),
        }
    }

    /// Grid indices of the global minimum; ties go to the first.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0, f64::INFINITY);
        for (s, row) in self.energy.iter().enumerate() {
            for (t, &e) in row.iter().enumerate() {
                if e < best.2 {
                    best = (s, t, e);
                }
            }
        }
        (best.0, best.1)
    }
}

fn check_grid(name: &str, g: &[f64]) -> Result<()> {
    if g.is_empty() || g.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!("{name} grid must be nonempty and strictly increasing")));
    }
    Ok(())
}

/// Mean residual between `f` and the warped source over samples of `f`
/// whose positions fall in `window`.
pub fn matching_energy(
    rho: &Signal1D,
    f: &Signal1D,
    scales: &[f64],
    translations: &[f64],
    window: (f64, f64),
    residual: Residual,
) -> Result<EnergySurface> {
    check_grid("scale", scales)?;
    check_grid("translation", translations)?;
    if scales[0] <= 0.0 {
        return Err(Error::InvalidArgument("scales must be positive".into()));
    }
    let idx: Vec<usize> = (0..f.len())
        .filter(|&i| (window.0..=window.1).contains(&f.position(i)))
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!("window {window:?} holds no samples")));
    }
    let energy = scales
        .par_iter()
        .map(|&sigma| {
            translations
                .iter()
                .map(|&tau| {
                    let total: f64 = idx
                        .iter()
                        .map(|&i| {
                            let r = f.samples[i] - warp_at(rho, sigma, tau, f.position(i)).0;
                            match residual {
                                Residual::L1 => r.abs(),
                                Residual::L2 => r * r,
                            }
                        })
                        .sum();
                    total / idx.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(EnergySurface { scales: scales.to_vec(), translations: translations.to_vec(), energy })
}

/// Box average of `width` grid steps along the scale axis; windows cut by
/// the ends are renormalized over the samples they still cover.
pub fn antialias_ridge(ridge: &EnergyRidge, width: usize) -> Result<EnergyRidge> {
    if width == 0 {
        return Err(Error::InvalidArgument("anti-aliasing width must be at least one step".into()));
    }
    let n = ridge.energy.len();
    let lo_off = (width - 1) / 2;
    let energy = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(lo_off);
            let hi = (k + width - 1 - lo_off).min(n - 1);
            ridge.energy[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    Ok(EnergyRidge { scales: ridge.scales.clone(), energy })
}

impl EnergyRidge {
    /// Every `factor`-th sample starting from the first.
    pub fn subsample(&self, factor: usize) -> EnergyRidge {
        let step = factor.max(1);
        EnergyRidge {
            scales: self.scales.iter().step_by(step).copied().collect(),
            energy: self.energy.iter().step_by(step).copied().collect(),
        }
    }

    pub fn argmin(&self) -> usize {
        self.energy
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (k, &e)| if e < b.1 { (k, e) } else { b })
            .0
    }
}

pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Strict interior local minima.
pub fn count_local_minima(values: &[f64]) -> usize {
    values.windows(3).filter(|w| w[1] < w[0] && w[1] < w[2]).count()
}

/// Width in scale units of the valley around the global minimum, measured
/// where the ridge first rises above `min + 10%` of its range on each side
/// (linearly interpolated; the grid end counts if never crossed).
pub fn valley_width(ridge: &EnergyRidge) -> f64 {
    let e = &ridge.energy;
    let s = &ridge.scales;
    if e.len() < 2 {
        return 0.0;
    }
    let k = ridge.argmin();
    let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let level = lo + 0.1 * (hi - lo);
    let cross = |a: usize, b: usize| {
        let t = (level - e[a]) / (e[b] - e[a]);
        s[a] + t * (s[b] - s[a])
    };
    let mut left = s[0];
    for j in (0..k).rev() {
        if e[j] > level {
            left = cross(j + 1, j);
            break;
        }
    }
    let mut right = s[e.len() - 1];
    for j in k + 1..e.len() {
        if e[j] > level {
            right = cross(j - 1, j);
            break;
        }
    }
    right - left
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// White Gaussian noise smoothed by a Gaussian of `corr` samples, rescaled to `[0, 1]`.
pub fn smooth_noise(n: usize, corr: f64, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let white: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let smoothed = if corr > 0.0 { gaussian_smooth(&white, corr) } else { white };
    let (lo, hi) = smoothed.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    smoothed.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Gaussian smoothing with replicated borders.
pub fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    (0..x.len()).map(|i| gaussian_at(x, i, sigma)).collect()
}

fn gaussian_at(x: &[f64], i: usize, sigma: f64) -> f64 {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let n = x.len() as isize;
    k.iter()
        .enumerate()
        .map(|(j, w)| w * x[(i as isize + j as isize - r).clamp(0, n - 1) as usize])
        .sum()
}

/// Ratio between the two blurs of the difference-of-Gaussians response.
pub const DOG_RATIO: f64 = 1.2599210498948732;

/// Scale-normalized difference of Gaussians at sample `i`:
/// `(G(k sigma) * f - G(sigma) * f) / (k - 1)` with `k = 2^(1/3)`.
pub fn dog_response(f: &Signal1D, i: usize, sigma: f64) -> f64 {
    let s = sigma / f.spacing;
    (gaussian_at(&f.samples, i, DOG_RATIO * s) - gaussian_at(&f.samples, i, s)) / (DOG_RATIO - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityCurves {
    pub scales: Vec<f64>,
    /// Magnitude of the detector response, rescaled to `[0, 1]`.
    pub detector_response: Vec<f64>,
    /// Distance of the sampled descriptor from its value at the planted
    /// scale, rescaled to `[0, 1]`.
    pub descriptor_change: Vec<f64>,
    pub response_fwhm: f64,
    pub change_fwhm: f64,
}

/// Number of samples in the identity descriptor.
pub const IDENTITY_DESCRIPTOR_SAMPLES: usize = 33;
/// Half-extent of the identity descriptor in units of scale.
pub const IDENTITY_DESCRIPTOR_EXTENT: f64 = 3.0;

/// Identity descriptor: the signal sampled at `x0 + sigma u` for `u` evenly
/// spaced in `[-3, 3]`.
pub fn identity_descriptor(f: &Signal1D, x0: f64, sigma: f64) -> Vec<f64> {
    linspace(-IDENTITY_DESCRIPTOR_EXTENT, IDENTITY_DESCRIPTOR_EXTENT, IDENTITY_DESCRIPTOR_SAMPLES)
        .into_iter()
        .map(|u| f.interpolate(x0 + sigma * u).0)
        .collect()
}

fn rescale(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
}

/// Full width at half maximum of the peak at the largest value, in scale units.
pub fn fwhm(scales: &[f64], values: &[f64]) -> f64 {
    let ridge = EnergyRidge { scales: scales.to_vec(), energy: values.iter().map(|v| -v).collect() };
    let k = ridge.argmin();
    let peak = values[k];
    let floor = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let half = floor + 0.5 * (peak - floor);
    let interp = |a: usize, b: usize| {
        let t = (half - values[a]) / (values[b] - values[a]);
        scales[a] + t * (scales[b] - scales[a])
    };
    let left = (0..k).rev().find(|&j| values[j] < half).map_or(scales[0], |j| interp(j, j + 1));
    let right = (k + 1..values.len()).find(|&j| values[j] < half).map_or(scales[values.len() - 1], |j| interp(j - 1, j));
    right - left
}

/// Detector response and descriptor change across scales at sample `center`
/// of `f`, relative to the planted scale `sigma_star`.
pub fn specificity_curves(f: &Signal1D, center: usize, scales: &[f64], sigma_star: f64) -> Result<SpecificityCurves> {
    check_grid("scale", scales)?;
    if center >= f.len() {
        return Err(Error::InvalidArgument(format!("center {center} outside a signal of {} samples", f.len())));
    }
    let x0 = f.position(center);
    let reference = identity_descriptor(f, x0, sigma_star);
    let response: Vec<f64> = scales.iter().map(|&s| dog_response(f, center, s).abs()).collect();
    let change: Vec<f64> = scales
        .iter()
        .map(|&s| {
            identity_descriptor(f, x0, s)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let detector_response = rescale(&response);
    let descriptor_change = rescale(&change);
    let inverted: Vec<f64> = descriptor_change.iter().map(|v| 1.0 - v).collect();
    Ok(SpecificityCurves {
        response_fwhm: fwhm(scales, &detector_response),
        change_fwhm: fwhm(scales, &inverted),
        scales: scales.to_vec(),
        detector_response,
        descriptor_change,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledHistogram {
    /// Normalized bin masses.
    pub histogram: Vec<f64>,
    /// Value range covered by the bins.
    pub range: (f64, f64),
    /// Histogram mean over bin centers.
    pub mean: f64,
    /// Exact mean of the neighborhood values, the box-filtered signal.
    pub box_mean: f64,
}

impl PooledHistogram {
    pub fn bin_width(&self) -> f64 {
        (self.range.1 - self.range.0) / self.histogram.len() as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.range.0 + (k as f64 + 0.5) * self.bin_width()
    }
}

/// Histogram of the values of `f` within `radius` of sample `center`, over
/// bins spanning the signal's full value range.
pub fn pooled_histogram(f: &Signal1D, center: usize, radius: f64, bins: usize) -> Result<PooledHistogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least two bins, got {bins}")));
    }
    if center >= f.len() || !(radius >= 0.0) {
        return Err(Error::InvalidArgument("empty pooling neighborhood".into()));
    }
    let x0 = f.position(center);
    let values: Vec<f64> = (0..f.len())
        .filter(|&j| (f.position(j) - x0).abs() <= radius)
        .map(|j| f.samples[j])
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty pooling neighborhood".into()));
    }
    let (lo, hi) = f.range();
    let range = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (range.1 - range.0) / bins as f64;
    let mut histogram = vec![0.0; bins];
    for v in &values {
        let k = (((v - range.0) / width).floor() as usize).min(bins - 1);
        histogram[k] += 1.0;
    }
    let n = values.len() as f64;
    histogram.iter_mut().for_each(|h| *h /= n);
    let mut out = PooledHistogram { histogram, range, mean: 0.0, box_mean: values.iter().sum::<f64>() / n };
    out.mean = (0..bins).map(|k| out.histogram[k] * out.bin_center(k)).sum();
    Ok(out)
}

/// Setup of the scale-undersampling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeExperiment {
    pub length: usize,
    /// Correlation length of the random source signal, in samples.
    pub correlation: f64,
    pub scales: (f64, f64, usize),
    pub translations: (f64, f64, usize),
    pub window: (f64, f64),
    /// Standard deviation of additive noise on the target.
    pub noise: f64,
    pub undersampling: usize,
    pub antialias_width: usize,
}

impl Default for RidgeExperiment {
    fn default() -> Self {
        Self {
            length: 256,
            correlation: 1.5,
            scales: (0.5, 2.0, 121),
            translations: (-8.0, 8.0, 65),
            window: (40.0, 110.0),
            noise: 0.0,
            undersampling: 4,
            antialias_width: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeTrial {
    pub sigma_star: f64,
    pub tau_star: f64,
    pub surface: EnergySurface,
    pub fine: EnergyRidge,
    /// Every `undersampling`-th sample of the fine ridge.
    pub coarse: EnergyRidge,
    /// `coarse` box-averaged over `antialias_width` of its own steps.
    pub antialiased: EnergyRidge,
}

impl RidgeTrial {
    pub fn tv_raw(&self) -> f64 {
        total_variation(&self.coarse.energy)
    }

    pub fn tv_antialiased(&self) -> f64 {
        total_variation(&self.antialiased.energy)
    }

    pub fn width_raw(&self) -> f64 {
        valley_width(&self.coarse)
    }

    pub fn width_antialiased(&self) -> f64 {
        valley_width(&self.antialiased)
    }

    /// Local minima per grid sample of the fine and coarse ridges.
    pub fn minima_density(&self) -> (f64, f64) {
        (
            count_local_minima(&self.fine.energy) as f64 / self.fine.energy.len() as f64,
            count_local_minima(&self.coarse.energy) as f64 / self.coarse.energy.len() as f64,
        )
    }
}

/// One seeded trial: a random source, a target warped by a planted
/// `(sigma, tau)` from the grids, the matching energy and its ridges.
pub fn ridge_trial(cfg: &RidgeExperiment, seed: u64) -> Result<RidgeTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = Signal1D::unit(smooth_noise(cfg.length, cfg.correlation, &mut rng))?;
    let scales = linspace(cfg.scales.0, cfg.scales.1, cfg.scales.2);
    let translations = linspace(cfg.translations.0, cfg.translations.1, cfg.translations.2);
    if scales.len() < 2 || translations.is_empty() {
        return Err(Error::InvalidArgument("ridge experiment grids are too small".into()));
    }
    let sigma_star = scales[rng.gen_range(0..scales.len())];
    let tau_star = translations[rng.gen_range(0..translations.len())];
    let mut f = warp(&rho, sigma_star, tau_star, cfg.length)?.signal;
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        f.samples.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let surface = matching_energy(&rho, &f, &scales, &translations, cfg.window, Residual::L1)?;
    let fine = surface.ridge();
    let coarse = fine.subsample(cfg.undersampling);
    let antialiased = antialias_ridge(&coarse, cfg.antialias_width)?;
    Ok(RidgeTrial { sigma_star, tau_star, surface, fine, coarse, antialiased })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(v: Vec<f64>) -> Signal1D {
        Signal1D::unit(v).unwrap()
    }

    #[test]
    fn unit_warp_is_cell_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = sig(smooth_noise(64, 2.0, &mut rng));
        let w = warp(&rho, 1.0, 0.0, 64).unwrap();
        for i in 1..63 {
            let want = (rho.samples[i - 1] + 6.0 * rho.samples[i] + rho.samples[i + 1]) / 8.0;
            assert!((w.signal.samples[i] - want).abs() <= 1e-12);
        }
        let ramp = sig((0..32).map(|i| 0.3 * i as f64 - 1.0).collect());
        let w = warp(&ramp, 1.0, 0.0, 32).unwrap();
        for i in 1..31 {
            assert!((w.signal.samples[i] - ramp.samples[i]).abs() <= 1e-9);
        }
        assert!(w.clamped);
    }

    #[test]
    fn integer_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = sig(smooth_noise(64, 2.0, &mut rng));
        let base = warp(&rho, 1.0, 0.0, 64).unwrap().signal;
        let shifted = warp(&rho, 1.0, 5.0, 64).unwrap().signal;
        for i in 6..63 {
            assert!((shifted.samples[i] - base.samples[i - 5]).abs() <= 1e-12);
        }
    }

    #[test]
    fn ramp_dilation() {
        let ramp = sig((0..100).map(|i| i as f64).collect());
        let w = warp(&ramp, 2.0, 0.0, 100).unwrap().signal;
        for i in 1..100 {
            assert!((w.samples[i] - i as f64 / 2.0).abs() <= 1e-9);
        }
        assert!(warp(&ramp, 0.0, 0.0, 10).is_err());
    }

    #[test]
    fn planted_optimum_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = sig(smooth_noise(200, 3.0, &mut rng));
        let scales = linspace(0.8, 1.4, 13);
        let taus = linspace(-4.0, 4.0, 17);
        let f = warp(&rho, scales[7], taus[11], 200).unwrap().signal;
        let e = matching_energy(&rho, &f, &scales, &taus, (40.0, 120.0), Residual::L1).unwrap();
        assert_eq!(e.argmin(), (7, 11));
        assert!(e.energy[7][11] <= 1e-3);
        assert!(e.energy.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn noise_target_gives_flat_energy() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let rho = sig(smooth_noise(200, 3.0, &mut rng));
            let f = sig(smooth_noise(200, 3.0, &mut rng));
            let e = matching_energy(&rho, &f, &linspace(0.8, 1.4, 9), &linspace(-4.0, 4.0, 9), (40.0, 120.0), Residual::L1)
                .unwrap();
            let mut all: Vec<f64> = e.energy.iter().flatten().copied().collect();
            all.sort_by(f64::total_cmp);
            let median = all[all.len() / 2];
            assert!(all[0] > 0.5 * median, "seed {seed}: min {} median {median}", all[0]);
        }
    }

    #[test]
    fn coarse_grid_has_denser_minima() {
        let cfg = RidgeExperiment::default();
        let mut denser = 0;
        for seed in 0..20 {
            let (fine, coarse) = ridge_trial(&cfg, seed).unwrap().minima_density();
            denser += (coarse > fine) as usize;
        }
        assert!(denser >= 16, "{denser}/20");
    }

    #[test]
    fn antialias_examples() {
        let r = EnergyRidge { scales: linspace(1.0, 2.0, 9), energy: vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0] };
        assert_eq!(antialias_ridge(&r, 1).unwrap(), r);
        let flat = EnergyRidge { scales: r.scales.clone(), energy: vec![0.7; 9] };
        for (a, b) in antialias_ridge(&flat, 5).unwrap().energy.iter().zip(&flat.energy) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = antialias_ridge(&r, 3).unwrap();
        assert!((s.energy[0] - 2.0).abs() < 1e-15 && (s.energy[1] - 8.0 / 3.0).abs() < 1e-15);
        assert!(antialias_ridge(&r, 0).is_err());
    }

    #[test]
    fn antialias_broadens_planted_valley() {
        let t = ridge_trial(&RidgeExperiment::default(), 11).unwrap();
        let aa = antialias_ridge(&t.fine, 5).unwrap();
        assert!(total_variation(&aa.energy) < total_variation(&t.fine.energy));
        assert!(valley_width(&aa) > valley_width(&t.fine));
    }

    #[test]
    fn valley_width_of_a_v() {
        let scales = linspace(0.0, 10.0, 11);
        let energy: Vec<f64> = scales.iter().map(|s| (s - 5.0).abs()).collect();
        // range 5, level 0.5: crossings at 4.5 and 5.5
        assert!((valley_width(&EnergyRidge { scales, energy }) - 1.0).abs() < 1e-12);
    }

    /// Closed-form normalized DoG at the center of `exp(-x^2 / (2 s^2))`.
    fn blob_dog(s: f64, sigma: f64) -> f64 {
        let g = |t: f64| s / (s * s + t * t).sqrt();
        (g(DOG_RATIO * sigma) - g(sigma)).abs() / (DOG_RATIO - 1.0)
    }

    #[test]
    fn dog_peaks_at_blob_scale() {
        for s in [3.0, 5.0, 8.0] {
            let f = sig((0..401).map(|i| (-((i as f64 - 200.0).powi(2)) / (2.0 * s * s)).exp()).collect());
            let scales = linspace(1.0, 20.0, 77);
            let c = specificity_curves(&f, 200, &scales, s).unwrap();
            let got = scales[c.detector_response.iter().enumerate().fold((0, -1.0), |b, (k, &v)| if v > b.1 { (k, v) } else { b }).0];
            let fine = linspace(1.0, 20.0, 19001);
            let want = fine.iter().cloned().fold((0.0, -1.0), |b, x| {
                let v = blob_dog(s, x);
                if v > b.1 { (x, v) } else { b }
            });
            let step = scales[1] - scales[0];
            assert!((got - want.0).abs() <= step, "s {s}: {got} vs {}", want.0);
        }
    }

    #[test]
    fn descriptor_change_vanishes_at_planted_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = sig(smooth_noise(300, 2.0, &mut rng));
        let scales = linspace(1.0, 4.0, 31);
        let c = specificity_curves(&f, 150, &scales, scales[12]).unwrap();
        assert_eq!(c.descriptor_change[12], 0.0);
        assert!(c.response_fwhm > 0.0 && c.change_fwhm > 0.0);
    }

    #[test]
    fn pooled_histogram_examples() {
        let constant = sig(vec![0.3; 50]);
        let h = pooled_histogram(&constant, 25, 5.0, 16).unwrap();
        assert_eq!(h.histogram.iter().filter(|&&m| m > 0.0).count(), 1);
        let k = h.histogram.iter().position(|&m| m > 0.0).unwrap();
        assert!((h.mean - h.bin_center(k)).abs() < 1e-15);
        assert!(pooled_histogram(&constant, 60, 1.0, 8).is_err());
        assert!(pooled_histogram(&constant, 10, 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn warp_is_linear(
            a in -2.0f64..2.0, b in -2.0f64..2.0, sigma in 0.5f64..2.0, tau in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1 = sig(smooth_noise(40, 1.0, &mut rng));
            let r2 = sig(smooth_noise(40, 1.0, &mut rng));
            let mix = sig(r1.samples.iter().zip(&r2.samples).map(|(x, y)| a * x + b * y).collect());
            let w1 = warp(&r1, sigma, tau, 40).unwrap().signal;
            let w2 = warp(&r2, sigma, tau, 40).unwrap().signal;
            let wm = warp(&mix, sigma, tau, 40).unwrap().signal;
            for i in 0..40 {
                prop_assert!((wm.samples[i] - (a * w1.samples[i] + b * w2.samples[i])).abs() <= 1e-9);
            }
        }

        #[test]
        fn histogram_mean_is_within_half_a_bin(seed in 0u64..1000, bins in 2usize..300, radius in 0.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = sig(smooth_noise(100, 1.0, &mut rng));
            let h = pooled_histogram(&f, 50, radius, bins).unwrap();
            prop_assert!((h.mean - h.box_mean).abs() <= h.bin_width() / 2.0 + 1e-12);
            prop_assert!((h.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn antialias_never_increases_variation(v in prop::collection::vec(0.0f64..1.0, 3..60), w in 1usize..9) {
            let r = EnergyRidge { scales: linspace(0.0, 1.0, v.len()), energy: v };
            let s = antialias_ridge(&r, w).unwrap();
            prop_assert!(total_variation(&s.energy) <= total_variation(&r.energy) + 1e-12);
        }
    }
}
