//! SIFT-family descriptors, the raw-patch baseline and bag-of-words encoding.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{extract_patch, sample_domain_sizes, AffineFrame, Patch, SizeSampling, DEFAULT_PATCH_BASE};
use crate::scalespace::{gradients, GradientField, ScaleSpace};

pub const ORIENTATION_BINS: usize = 8;
pub const SPATIAL_CELLS: usize = 4;
pub const SIFT_DIM: usize = SPATIAL_CELLS * SPATIAL_CELLS * ORIENTATION_BINS;
pub const RAW_PATCH_SIZE: usize = 91;
pub const RAW_PATCH_DIM: usize = RAW_PATCH_SIZE * RAW_PATCH_SIZE;
pub const DEFAULT_CLAMP: f64 = 0.067;
/// Largest tolerated fraction of clamped out-of-image samples in a patch.
pub const MAX_OUT_OF_BOUNDS: f64 = 0.5;
/// Cell grids with less total mass than this are rounding noise of a flat patch.
pub const MIN_CELL_MASS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorKind {
    Sift,
    DspSift,
    SiftL,
    RawPatch,
    Bow,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 5] = [Self::Sift, Self::DspSift, Self::SiftL, Self::RawPatch, Self::Bow];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sift => "sift",
            Self::DspSift => "dsp-sift",
            Self::SiftL => "sift-l",
            Self::RawPatch => "raw-patch",
            Self::Bow => "bow",
        }
    }

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Whether values are ℓ1-normalized rather than ℓ2-normalized.
    pub fn is_l1(self) -> bool {
        self == Self::Bow
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown descriptor kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
    /// No usable signal; never matches anything.
    pub degenerate: bool,
}

impl Descriptor {
    pub fn new(kind: DescriptorKind, values: Vec<f64>) -> Self {
        Self { kind, values, degenerate: false }
    }

    /// Flagged placeholder: uniform unit vector in the kind's norm.
    pub fn degenerate(kind: DescriptorKind, dim: usize) -> Self {
        let v = if kind.is_l1() { 1.0 / dim as f64 } else { 1.0 / (dim as f64).sqrt() };
        Self { kind, values: vec![v; dim], degenerate: true }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Un-normalized 4x4 spatial by 8 orientation histogram, stored in
/// (cell row, cell column, orientation) order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    mass: [f64; SIFT_DIM],
}

impl Default for CellGrid {
    fn default() -> Self {
        Self { mass: [0.0; SIFT_DIM] }
    }
}

impl CellGrid {
    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, row: usize, col: usize, bin: usize) -> f64 {
        self.mass[index(row, col, bin)]
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Spreads `mass` at lattice position `(x, y)` (cell centers at integer
    /// coordinates `0..4`) and orientation `ori` over the nearest cells and
    /// bins with bilinear weights. Mass falling outside the lattice is dropped.
    pub fn deposit(&mut self, x: f64, y: f64, ori: f64, mass: f64) {
        let fo = ori.rem_euclid(TAU) / (TAU / ORIENTATION_BINS as f64);
        let o0 = fo.floor();
        let to = fo - o0;
        let o0 = o0 as usize % ORIENTATION_BINS;
        let o1 = (o0 + 1) % ORIENTATION_BINS;
        let (x0, y0) = (x.floor(), y.floor());
        let (tx, ty) = (x - x0, y - y0);
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            let row = y0 as isize + dy;
            if wy == 0.0 || !(0..SPATIAL_CELLS as isize).contains(&row) {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                let col = x0 as isize + dx;
                if wx == 0.0 || !(0..SPATIAL_CELLS as isize).contains(&col) {
                    continue;
                }
                let m = mass * wx * wy;
                let (r, c) = (row as usize, col as usize);
                self.mass[index(r, c, o0)] += m * (1.0 - to);
                self.mass[index(r, c, o1)] += m * to;
            }
        }
    }
}

fn index(row: usize, col: usize, bin: usize) -> usize {
    (row * SPATIAL_CELLS + col) * ORIENTATION_BINS + bin
}

/// Weighted sum of cell grids with Kahan-compensated accumulation.
#[derive(Debug, Clone)]
pub struct CellAccumulator {
    sum: [f64; SIFT_DIM],
    comp: [f64; SIFT_DIM],
}

impl Default for CellAccumulator {
    fn default() -> Self {
        Self { sum: [0.0; SIFT_DIM], comp: [0.0; SIFT_DIM] }
    }
}

impl CellAccumulator {
    pub fn add(&mut self, cells: &CellGrid, weight: f64) {
        for k in 0..SIFT_DIM {
            let y = weight * cells.mass[k] - self.comp[k];
            let t = self.sum[k] + y;
            self.comp[k] = (t - self.sum[k]) - y;
            self.sum[k] = t;
        }
    }

    pub fn finish(self) -> CellGrid {
        CellGrid { mass: self.sum }
    }
}

/// Gaussian weight of the descriptor window (sigma = half the patch side)
/// at patch coordinates `(x, y)`.
pub fn window_weight(x: f64, y: f64, size: usize) -> f64 {
    let c = size as f64 / 2.0;
    let s = size as f64 / 2.0;
    (-((x - c).powi(2) + (y - c).powi(2)) / (2.0 * s * s)).exp()
}

/// Lattice coordinate of the center of patch pixel `i` (cell centers at 0..4).
pub fn lattice_coordinate(i: usize, size: usize) -> f64 {
    (i as f64 + 0.5) / (size as f64 / SPATIAL_CELLS as f64) - 0.5
}

/// Cell histogram of an already rectified patch's gradient field.
pub fn sift_cells(g: &GradientField) -> CellGrid {
    let size = g.width;
    let mut cells = CellGrid::default();
    for y in 0..g.height {
        let fy = lattice_coordinate(y, size);
        for x in 0..g.width {
            let (mag, ori) = g.at(x, y);
            if mag == 0.0 {
                continue;
            }
            let w = window_weight(x as f64 + 0.5, y as f64 + 0.5, size);
            cells.deposit(lattice_coordinate(x, size), fy, ori, mag * w);
        }
    }
    cells
}

/// Intermediate vectors of [`finalize`], exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalizeStages {
    pub normalized: Vec<f64>,
    pub clamped: Vec<f64>,
    pub output: Descriptor,
}

/// Normalize, clamp at `clamp`, renormalize.
pub fn finalize(cells: &CellGrid, clamp: f64, kind: DescriptorKind) -> Descriptor {
    finalize_stages(cells, clamp, kind).output
}

pub fn finalize_stages(cells: &CellGrid, clamp: f64, kind: DescriptorKind) -> FinalizeStages {
    let raw = cells.as_slice();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > MIN_CELL_MASS) || !norm.is_finite() {
        let output = Descriptor::degenerate(kind, SIFT_DIM);
        return FinalizeStages { normalized: vec![0.0; SIFT_DIM], clamped: vec![0.0; SIFT_DIM], output };
    }
    let normalized: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let clamped: Vec<f64> = normalized.iter().map(|v| v.min(clamp)).collect();
    let n2 = clamped.iter().map(|v| v * v).sum::<f64>().sqrt();
    let output = Descriptor::new(kind, clamped.iter().map(|v| v / n2).collect());
    FinalizeStages { normalized, clamped, output }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub patch_base: usize,
    pub clamp: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self { patch_base: DEFAULT_PATCH_BASE, clamp: DEFAULT_CLAMP }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_base < 8 || !self.patch_base.is_multiple_of(SPATIAL_CELLS) {
            return Err(Error::InvalidArgument(format!(
                "patch base must be a multiple of 4 and at least 8, got {}",
                self.patch_base
            )));
        }
        if !(self.clamp > 0.0 && self.clamp <= 1.0) {
            return Err(Error::InvalidArgument(format!("clamp must be in (0, 1], got {}", self.clamp)));
        }
        Ok(())
    }
}

fn checked_patch(ss: &ScaleSpace, f: &AffineFrame, sigma: f64, size: usize) -> Result<Patch> {
    let p = extract_patch(ss, f, sigma, size)?;
    if p.out_of_bounds > MAX_OUT_OF_BOUNDS {
        return Err(Error::Rejected(format!(
            "{:.0}% of the patch lies outside the image",
            100.0 * p.out_of_bounds
        )));
    }
    Ok(p)
}

/// Un-normalized cell grid of the frame at domain size `sigma`.
pub fn cells_at_size(ss: &ScaleSpace, f: &AffineFrame, sigma: f64, cfg: &DescriptorConfig) -> Result<CellGrid> {
    let p = checked_patch(ss, f, sigma, cfg.patch_base)?;
    Ok(sift_cells(&gradients(&p.to_image())))
}

pub fn sift_at_size(
    ss: &ScaleSpace,
    f: &AffineFrame,
    sigma: f64,
    cfg: &DescriptorConfig,
    kind: DescriptorKind,
) -> Result<Descriptor> {
    Ok(finalize(&cells_at_size(ss, f, sigma, cfg)?, cfg.clamp, kind))
}

pub fn sift_descriptor(ss: &ScaleSpace, f: &AffineFrame, cfg: &DescriptorConfig) -> Result<Descriptor> {
    sift_at_size(ss, f, f.sigma_hat, cfg, DescriptorKind::Sift)
}

/// Single-size SIFT at `lambda2` times the detected scale.
pub fn sift_l_descriptor(ss: &ScaleSpace, f: &AffineFrame, lambda2: f64, cfg: &DescriptorConfig) -> Result<Descriptor> {
    if !(lambda2 > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda2 must be positive, got {lambda2}")));
    }
    sift_at_size(ss, f, lambda2 * f.sigma_hat, cfg, DescriptorKind::SiftL)
}

/// Weighted sum of the un-normalized cell grids over the sampled domain
/// sizes. Sizes whose patch is rejected are left out; if more than half are
/// rejected the whole descriptor is.
pub fn pooled_cells(ss: &ScaleSpace, f: &AffineFrame, s: &SizeSampling, cfg: &DescriptorConfig) -> Result<CellGrid> {
    s.validate()?;
    let sizes = sample_domain_sizes(f.sigma_hat, s);
    let mut acc = CellAccumulator::default();
    let mut rejected = 0usize;
    for &(sigma, w) in &sizes {
        match cells_at_size(ss, f, sigma, cfg) {
            Ok(cells) => acc.add(&cells, w),
            Err(Error::Rejected(_)) => rejected += 1,
            Err(e) => return Err(e),
        }
    }
    if 2 * rejected > sizes.len() {
        return Err(Error::Rejected(format!("{rejected} of {} domain sizes fall outside the image", sizes.len())));
    }
    Ok(acc.finish())
}

pub fn dsp_sift_descriptor(
    ss: &ScaleSpace,
    f: &AffineFrame,
    s: &SizeSampling,
    cfg: &DescriptorConfig,
) -> Result<Descriptor> {
    Ok(finalize(&pooled_cells(ss, f, s, cfg)?, cfg.clamp, DescriptorKind::DspSift))
}

/// Unit-norm intensities of the 91x91 rectified patch at the detected scale.
pub fn raw_patch_descriptor(ss: &ScaleSpace, f: &AffineFrame) -> Result<Descriptor> {
    let p = checked_patch(ss, f, f.sigma_hat, RAW_PATCH_SIZE)?;
    Ok(unit_intensities(&p.data))
}

fn unit_intensities(data: &[f64]) -> Descriptor {
    let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Descriptor::degenerate(DescriptorKind::RawPatch, data.len());
    }
    Descriptor::new(DescriptorKind::RawPatch, data.iter().map(|v| v / norm).collect())
}

/// Visual vocabulary: `k` unit-norm word centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Index of the closest word in squared Euclidean distance; ties go to
    /// the lower index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        nearest_center(&self.centers, v).0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(centers: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(c, v)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

pub const KMEANS_MAX_ITERATIONS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-4;

/// k-means with k-means++ seeding on the non-degenerate descriptors.
pub fn train_bow_dictionary(descs: &[Descriptor], k: usize, seed: u64) -> Result<Dictionary> {
    let data: Vec<&[f64]> = descs.iter().filter(|d| !d.degenerate).map(|d| d.values.as_slice()).collect();
    if k == 0 {
        return Err(Error::InvalidArgument("dictionary needs at least one word".into()));
    }
    if k > data.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot train {k} words from {} descriptors",
            data.len()
        )));
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|d| d.len() != dim) {
        return Err(Error::DimensionMismatch(dim, bad.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers: Vec<Vec<f64>> = vec![data[rng.gen_range(0..data.len())].to_vec()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if t < *w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.gen_range(0..data.len())
        };
        let c = data[pick].to_vec();
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &c));
        }
        centers.push(c);
    }

    for _ in 0..KMEANS_MAX_ITERATIONS {
        let assign: Vec<usize> = data.par_iter().map(|x| nearest_center(&centers, x).0).collect();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            moved = moved.max(sq_dist(&mean, &centers[j]).sqrt());
            centers[j] = mean;
        }
        if moved < KMEANS_TOLERANCE {
            break;
        }
    }
    for c in &mut centers {
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            c.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(Dictionary { dim, centers })
}

/// SIFT descriptors at every sampled domain size of the frame; rejected
/// sizes are omitted.
pub fn multi_size_sifts(
    ss: &ScaleSpace,
    f: &AffineFrame,
    s: &SizeSampling,
    cfg: &DescriptorConfig,
) -> Result<Vec<Descriptor>> {
    s.validate()?;
    let mut out = Vec::with_capacity(s.n);
    for (sigma, _) in sample_domain_sizes(f.sigma_hat, s) {
        match sift_at_size(ss, f, sigma, cfg, DescriptorKind::Sift) {
            Ok(d) => out.push(d),
            Err(Error::Rejected(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// ℓ1-normalized word histogram of the given member descriptors.
pub fn bow_histogram(dict: &Dictionary, members: &[Descriptor]) -> Descriptor {
    let mut counts = vec![0.0; dict.len()];
    let mut used = 0usize;
    for d in members.iter().filter(|d| !d.degenerate) {
        counts[dict.nearest(&d.values)] += 1.0;
        used += 1;
    }
    if used == 0 {
        return Descriptor::degenerate(DescriptorKind::Bow, dict.len());
    }
    counts.iter_mut().for_each(|c| *c /= used as f64);
    Descriptor::new(DescriptorKind::Bow, counts)
}

pub fn bow_encode(
    ss: &ScaleSpace,
    f: &AffineFrame,
    dict: &Dictionary,
    s: &SizeSampling,
    cfg: &DescriptorConfig,
) -> Result<Descriptor> {
    Ok(bow_histogram(dict, &multi_size_sifts(ss, f, s, cfg)?))
}
