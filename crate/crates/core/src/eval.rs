//! Homography-based matching benchmark: region overlap ground truth,
//! precision-recall curves, average precision and parameter sweeps.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::PathBuf;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_regions, Homography, Sequence};
use crate::descriptor::{
    bow_encode, dsp_sift_descriptor, multi_size_sifts, raw_patch_descriptor, sift_descriptor, sift_l_descriptor,
    train_bow_dictionary, Descriptor, DescriptorConfig, DescriptorKind, Dictionary, MAX_OUT_OF_BOUNDS, RAW_PATCH_DIM,
    SIFT_DIM,
};
use crate::detector::{detect_mser, EllipseRegion, MserParams};
use crate::error::{Error, Result};
use crate::frame::{extract_patch, frame_from_region, AffineFrame, SizeSampling, DEFAULT_DILATION};
use crate::image::GrayImage;
use crate::matching::{match_all, threshold_sweep, MatchCandidate, Metric};
use crate::scalespace::ScaleSpace;

pub const DEFAULT_IOU_MIN: f64 = 0.5;
pub const DEFAULT_IOU_GRID: usize = 256;
pub const BOUNDARY_SAMPLES: usize = 360;
/// Slack on the area-ratio prefilter so rasterization error never drops a pair.
const AREA_BOUND_SLACK: f64 = 0.05;

/// Region A's boundary mapped through a homography, as a closed polygon.
#[derive(Debug, Clone)]
pub struct WarpedRegion {
    pub polygon: Vec<(f64, f64)>,
    pub min: (f64, f64),
    pub max: (f64, f64),
    pub area: f64,
}

/// Warps the boundary of `r` by `h`; `None` if any point leaves the
/// projective half-plane of the target or the result collapses.
pub fn warp_region(r: &EllipseRegion, h: &Homography, samples: usize) -> Option<WarpedRegion> {
    let m = h.matrix();
    let mut polygon = Vec::with_capacity(samples);
    for (x, y) in r.boundary(samples) {
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if !(w > 0.0) {
            return None;
        }
        let p = h.apply(x, y);
        if !(p.0.is_finite() && p.1.is_finite()) {
            return None;
        }
        polygon.push(p);
    }
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut twice_area = 0.0;
    for (k, &(x, y)) in polygon.iter().enumerate() {
        let (nx, ny) = polygon[(k + 1) % polygon.len()];
        twice_area += x * ny - nx * y;
        min = (min.0.min(x), min.1.min(y));
        max = (max.0.max(x), max.1.max(y));
    }
    let area = 0.5 * twice_area.abs();
    (area > 0.0).then_some(WarpedRegion { polygon, min, max, area })
}

/// Number of grid cell centers `origin + (k + 0.5) step`, `k < n`, inside `[l, r]`.
fn centers_in(l: f64, r: f64, origin: f64, step: f64, n: usize) -> usize {
    if !(r >= l) {
        return 0;
    }
    let lo = ((l - origin) / step - 0.5).ceil().max(0.0);
    let hi = ((r - origin) / step - 0.5).floor().min(n as f64 - 1.0);
    if hi < lo {
        0
    } else {
        (hi - lo) as usize + 1
    }
}

fn ellipse_span(e: &EllipseRegion, y: f64) -> Option<(f64, f64)> {
    let dy = y - e.cy;
    let b = 2.0 * e.b * dy;
    let c = e.c * dy * dy - 1.0;
    let disc = b * b - 4.0 * e.a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((e.cx + (-b - s) / (2.0 * e.a), e.cx + (-b + s) / (2.0 * e.a)))
}

/// Rasterized intersection over union of a warped region and an ellipse on a
/// `grid x grid` lattice spanning both bounding boxes.
pub fn warped_iou(p: &WarpedRegion, e: &EllipseRegion, grid: usize) -> f64 {
    let (hx, hy) = e.half_extents();
    let (emin, emax) = ((e.cx - hx, e.cy - hy), (e.cx + hx, e.cy + hy));
    if p.max.0 < emin.0 || emax.0 < p.min.0 || p.max.1 < emin.1 || emax.1 < p.min.1 {
        return 0.0;
    }
    let x0 = p.min.0.min(emin.0);
    let y0 = p.min.1.min(emin.1);
    let dx = (p.max.0.max(emax.0) - x0) / grid as f64;
    let dy = (p.max.1.max(emax.1) - y0) / grid as f64;
    if !(dx > 0.0 && dy > 0.0) || p.area < dx * dy {
        return 0.0;
    }

    let mut crossings: Vec<Vec<f64>> = vec![Vec::new(); grid];
    let n = p.polygon.len();
    for k in 0..n {
        let (ax, ay) = p.polygon[k];
        let (bx, by) = p.polygon[(k + 1) % n];
        if ay == by {
            continue;
        }
        let (ylo, yhi) = (ay.min(by), ay.max(by));
        let first = ((ylo - y0) / dy - 0.5).ceil().max(0.0) as usize;
        let last = ((yhi - y0) / dy - 0.5).ceil().min(grid as f64);
        for row in first..last.max(0.0) as usize {
            let y = y0 + (row as f64 + 0.5) * dy;
            crossings[row].push(ax + (y - ay) * (bx - ax) / (by - ay));
        }
    }

    let (mut poly, mut ell, mut inter) = (0usize, 0usize, 0usize);
    for (row, xs) in crossings.iter_mut().enumerate() {
        let y = y0 + (row as f64 + 0.5) * dy;
        let span = ellipse_span(e, y);
        if let Some((l, r)) = span {
            ell += centers_in(l, r, x0, dx, grid);
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            poly += centers_in(pair[0], pair[1], x0, dx, grid);
            if let Some((l, r)) = span {
                inter += centers_in(pair[0].max(l), pair[1].min(r), x0, dx, grid);
            }
        }
    }
    let union = poly + ell - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Overlap of region A warped into image B with region B.
pub fn region_iou(ra: &EllipseRegion, rb: &EllipseRegion, h: &Homography) -> f64 {
    region_iou_with_grid(ra, rb, h, DEFAULT_IOU_GRID)
}

pub fn region_iou_with_grid(ra: &EllipseRegion, rb: &EllipseRegion, h: &Homography, grid: usize) -> f64 {
    match warp_region(ra, h, BOUNDARY_SAMPLES) {
        Some(w) => warped_iou(&w, rb, grid.max(1)),
        None => 0.0,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Sorted `(i, j)` pairs with overlap above the threshold.
    pub pairs: Vec<(usize, usize)>,
    /// Regions of A with at least one partner; the recall denominator.
    pub n_correspondences: usize,
    #[serde(skip)]
    lookup: HashSet<(usize, usize)>,
}

impl GroundTruth {
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut firsts: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        firsts.dedup();
        let lookup = pairs.iter().copied().collect();
        Self { n_correspondences: firsts.len(), pairs, lookup }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.lookup.contains(&(i, j))
    }
}

/// All pairs whose overlap exceeds `iou_min`.
pub fn ground_truth_correspondences(
    ra: &[EllipseRegion],
    rb: &[EllipseRegion],
    h: &Homography,
    iou_min: f64,
    grid: usize,
) -> GroundTruth {
    let pairs: Vec<(usize, usize)> = ra
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, a)| {
            let warped = warp_region(a, h, BOUNDARY_SAMPLES);
            let mut hits = Vec::new();
            if let Some(w) = warped {
                for (j, b) in rb.iter().enumerate() {
                    let eb = b.ellipse_area();
                    if w.area.min(eb) / w.area.max(eb) + AREA_BOUND_SLACK <= iou_min {
                        continue;
                    }
                    if warped_iou(&w, b, grid) > iou_min {
                        hits.push((i, j));
                    }
                }
            }
            hits
        })
        .collect();
    GroundTruth::from_pairs(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ap: f64,
    pub n_correspondences: usize,
}

pub fn label_matches(cands: &[MatchCandidate], gt: &GroundTruth) -> Vec<bool> {
    cands.iter().map(|c| gt.contains(c.i, c.j)).collect()
}

/// Precision and recall at every distinct threshold, with the area under the
/// curve by the rectangular rule over recall increments. `None` when there
/// are no correspondences.
pub fn pr_curve(cands: &[MatchCandidate], labels: &[bool], n_corr: usize) -> Option<PrCurve> {
    if n_corr == 0 {
        return None;
    }
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut prev_tp = 0usize;
    let mut k = 0usize;
    for cut in threshold_sweep(cands) {
        while k < cut {
            tp += labels[k] as usize;
            k += 1;
        }
        let precision = tp as f64 / cut as f64;
        ap += precision * ((tp - prev_tp) as f64 / n_corr as f64);
        prev_tp = tp;
        points.push(PrPoint {
            threshold: cands[cut - 1].d,
            precision,
            recall: tp as f64 / n_corr as f64,
        });
    }
    Some(PrCurve { points, ap, n_correspondences: n_corr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Sift,
    DspSift { sampling: SizeSampling },
    SiftL { lambda2: f64 },
    RawPatch,
    Bow { words: usize, sampling: SizeSampling },
}

pub const DEFAULT_BOW_WORDS: usize = 512;

impl Method {
    pub fn kind(&self) -> DescriptorKind {
        match self {
            Method::Sift => DescriptorKind::Sift,
            Method::DspSift { .. } => DescriptorKind::DspSift,
            Method::SiftL { .. } => DescriptorKind::SiftL,
            Method::RawPatch => DescriptorKind::RawPatch,
            Method::Bow { .. } => DescriptorKind::Bow,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Method::RawPatch => RAW_PATCH_DIM,
            Method::Bow { words, .. } => *words,
            _ => SIFT_DIM,
        }
    }

    pub fn default_metric(&self) -> Metric {
        if self.kind().is_l1() {
            Metric::L1
        } else {
            Metric::L2
        }
    }

    /// Builds a method from its name; `sampling` configures the pooled and
    /// multi-size methods, its `lambda2` the large single-size one.
    pub fn from_name(name: &str, sampling: SizeSampling, words: usize) -> Result<Self> {
        Ok(match name.parse::<DescriptorKind>()? {
            DescriptorKind::Sift => Method::Sift,
            DescriptorKind::DspSift => Method::DspSift { sampling },
            DescriptorKind::SiftL => Method::SiftL { lambda2: sampling.lambda2 },
            DescriptorKind::RawPatch => Method::RawPatch,
            DescriptorKind::Bow => Method::Bow { words, sampling },
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::DspSift { sampling } => sampling.validate(),
            Method::SiftL { lambda2 } if !(*lambda2 > 0.0) => {
                Err(Error::InvalidArgument(format!("lambda2 must be positive, got {lambda2}")))
            }
            Method::Bow { words, sampling } => {
                if *words == 0 {
                    return Err(Error::InvalidArgument("dictionary needs at least one word".into()));
                }
                sampling.validate()
            }
            _ => Ok(()),
        }
    }
}

/// A method under evaluation with its report label and distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    pub method: Method,
    pub metric: Metric,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self { label: method.kind().to_string(), metric: method.default_metric(), method }
    }

    pub fn labeled(label: impl Into<String>, method: Method) -> Self {
        Self { label: label.into(), ..Self::new(method) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSource {
    Detect,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub descriptor: DescriptorConfig,
    pub dilation: f64,
    pub iou_min: f64,
    pub iou_grid: usize,
    pub mser: MserParams,
    pub regions: RegionSource,
    /// Region files sit next to each image as `<image stem>.<extension>`.
    pub region_extension: String,
    pub seed: u64,
    /// Upper bound on descriptors sampled for dictionary training.
    pub bow_training_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            descriptor: DescriptorConfig::default(),
            dilation: DEFAULT_DILATION,
            iou_min: DEFAULT_IOU_MIN,
            iou_grid: DEFAULT_IOU_GRID,
            mser: MserParams::default(),
            regions: RegionSource::Detect,
            region_extension: "regions".into(),
            seed: 0,
            bow_training_cap: 20_000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        self.mser.validate()?;
        if !(self.dilation > 0.0 && self.dilation.is_finite()) {
            return Err(Error::InvalidArgument(format!("dilation must be positive, got {}", self.dilation)));
        }
        if !(0.0..1.0).contains(&self.iou_min) {
            return Err(Error::InvalidArgument(format!("iou_min must be in [0, 1), got {}", self.iou_min)));
        }
        if self.iou_grid < 200 {
            return Err(Error::InvalidArgument(format!("iou grid must be at least 200, got {}", self.iou_grid)));
        }
        Ok(())
    }
}

/// An image with its pyramid and the regions that yield a usable frame.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub ss: ScaleSpace,
    pub regions: Vec<EllipseRegion>,
    pub frames: Vec<AffineFrame>,
    /// Regions dropped because their frame could not be measured.
    pub dropped: usize,
}

/// Builds the pyramid and frames; regions whose frame fails or whose
/// patch at the detected scale is mostly outside the image are dropped.
pub fn prepare_image(img: &GrayImage, regions: &[EllipseRegion], cfg: &EvalConfig) -> Result<PreparedImage> {
    let ss = ScaleSpace::with_defaults(img)?;
    let pb = cfg.descriptor.patch_base;
    let kept = regions
        .par_iter()
        .map(|r| match frame_from_region(r, &ss, cfg.dilation, pb) {
            Ok(f) => {
                let p = extract_patch(&ss, &f, f.sigma_hat, pb)?;
                Ok((p.out_of_bounds <= MAX_OUT_OF_BOUNDS).then_some((*r, f)))
            }
            Err(Error::Rejected(_) | Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let (regions_kept, frames): (Vec<_>, Vec<_>) = kept.into_iter().flatten().unzip();
    Ok(PreparedImage { ss, dropped: regions.len() - frames.len(), regions: regions_kept, frames })
}

/// Regions for image `index` (0-based) of a sequence, detected or loaded.
pub fn image_regions(seq: &Sequence, index: usize, cfg: &EvalConfig) -> Result<Vec<EllipseRegion>> {
    match cfg.regions {
        RegionSource::Detect => detect_mser(&seq.images[index], &cfg.mser),
        RegionSource::Files => Ok(load_regions(region_file_path(seq, index, cfg))?.regions),
    }
}

pub fn region_file_path(seq: &Sequence, index: usize, cfg: &EvalConfig) -> PathBuf {
    seq.image_paths[index].with_extension(&cfg.region_extension)
}

/// Descriptors of every frame of the image; frames whose measurement is
/// rejected get a degenerate descriptor so indices stay aligned.
pub fn describe(img: &PreparedImage, method: &Method, cfg: &DescriptorConfig, dict: Option<&Dictionary>) -> Result<Vec<Descriptor>> {
    img.frames
        .par_iter()
        .map(|f| {
            let d = match method {
                Method::Sift => sift_descriptor(&img.ss, f, cfg),
                Method::DspSift { sampling } => dsp_sift_descriptor(&img.ss, f, sampling, cfg),
                Method::SiftL { lambda2 } => sift_l_descriptor(&img.ss, f, *lambda2, cfg),
                Method::RawPatch => raw_patch_descriptor(&img.ss, f),
                Method::Bow { sampling, .. } => {
                    let dict = dict.ok_or_else(|| Error::InvalidArgument("bag of words needs a dictionary".into()))?;
                    bow_encode(&img.ss, f, dict, sampling, cfg)
                }
            };
            match d {
                Err(Error::Rejected(_)) => Ok(Descriptor::degenerate(method.kind(), method.dim())),
                other => other,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PreparedTarget {
    /// 1-based image number within the sequence.
    pub number: usize,
    pub image: PreparedImage,
    pub homography: Homography,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub name: String,
    pub reference: PreparedImage,
    pub targets: Vec<PreparedTarget>,
}

impl PreparedSequence {
    pub fn pair_name(&self, t: &PreparedTarget) -> String {
        format!("{}/1-{}", self.name, t.number)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PreparedDataset {
    pub sequences: Vec<PreparedSequence>,
}

impl PreparedDataset {
    pub fn pair_names(&self) -> Vec<String> {
        self.sequences
            .iter()
            .flat_map(|s| s.targets.iter().map(move |t| s.pair_name(t)))
            .collect()
    }
}

/// Prepares reference and target images of every sequence and their ground
/// truth. `targets` lists 1-based image numbers (2 = first target); `None`
/// takes all of them.
pub fn prepare_dataset(seqs: &[Sequence], targets: Option<&[usize]>, cfg: &EvalConfig) -> Result<PreparedDataset> {
    cfg.validate()?;
    let mut sequences = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let numbers: Vec<usize> = match targets {
            Some(t) => t.iter().copied().filter(|&n| seq.homography_to(n).is_some()).collect(),
            None => (2..=seq.num_targets() + 1).collect(),
        };
        let reference = prepare_image(&seq.images[0], &image_regions(seq, 0, cfg)?, cfg)?;
        let prepared = numbers
            .par_iter()
            .map(|&n| {
                let homography = *seq.homography_to(n).expect("filtered above");
                let image = prepare_image(&seq.images[n - 1], &image_regions(seq, n - 1, cfg)?, cfg)?;
                let ground_truth = ground_truth_correspondences(
                    &reference.regions,
                    &image.regions,
                    &homography,
                    cfg.iou_min,
                    cfg.iou_grid,
                );
                Ok(PreparedTarget { number: n, image, homography, ground_truth })
            })
            .collect::<Result<Vec<_>>>()?;
        info!(
            "{}: {} reference regions, {} targets",
            seq.name,
            reference.regions.len(),
            prepared.len()
        );
        sequences.push(PreparedSequence { name: seq.name.clone(), reference, targets: prepared });
    }
    Ok(PreparedDataset { sequences })
}

/// Trains a dictionary on multi-size SIFTs of the reference images.
pub fn train_dataset_dictionary(
    ds: &PreparedDataset,
    words: usize,
    sampling: &SizeSampling,
    cfg: &EvalConfig,
) -> Result<Dictionary> {
    let mut pool = Vec::new();
    for s in &ds.sequences {
        let per_frame = s
            .reference
            .frames
            .par_iter()
            .map(|f| multi_size_sifts(&s.reference.ss, f, sampling, &cfg.descriptor))
            .collect::<Result<Vec<_>>>()?;
        pool.extend(per_frame.into_iter().flatten().filter(|d| !d.degenerate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if pool.len() > cfg.bow_training_cap {
        pool.shuffle(&mut rng);
        pool.truncate(cfg.bow_training_cap);
    }
    train_bow_dictionary(&pool, words, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub method: Method,
    pub metric: Metric,
    /// Mean AP over included pairs; absent when no pair was included.
    pub map: Option<f64>,
    pub included_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub method: String,
    pub pair: String,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodSummary>,
    pub pairs: Vec<String>,
    pub n_correspondences: Vec<usize>,
    /// Method label to per-pair AP, aligned with `pairs`.
    pub ap: BTreeMap<String, Vec<Option<f64>>>,
    pub notices: Vec<String>,
    #[serde(skip)]
    pub curves: Vec<CurveRecord>,
}

impl EvalReport {
    pub fn map(&self, label: &str) -> Option<f64> {
        self.methods.iter().find(|m| m.label == label).and_then(|m| m.map)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-pair descriptor matching outcome for one method.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub candidates: Vec<MatchCandidate>,
    pub labels: Vec<bool>,
    pub curve: Option<PrCurve>,
}

pub fn evaluate_descriptors(a: &[Descriptor], b: &[Descriptor], metric: Metric, gt: &GroundTruth) -> Result<PairOutcome> {
    let candidates = match_all(a, b, metric)?;
    let labels = label_matches(&candidates, gt);
    let curve = pr_curve(&candidates, &labels, gt.n_correspondences);
    Ok(PairOutcome { candidates, labels, curve })
}

/// Evaluates every method on every prepared pair.
pub fn evaluate(ds: &PreparedDataset, methods: &[MethodSpec], cfg: &EvalConfig) -> Result<EvalReport> {
    let pairs = ds.pair_names();
    let n_correspondences: Vec<usize> = ds
        .sequences
        .iter()
        .flat_map(|s| s.targets.iter().map(|t| t.ground_truth.n_correspondences))
        .collect();
    let mut notices = Vec::new();
    for (p, &n) in pairs.iter().zip(&n_correspondences) {
        if n == 0 {
            let msg = format!("pair {p} excluded: no ground-truth correspondences");
            warn!("{msg}");
            notices.push(msg);
        }
    }
    let mut summaries = Vec::new();
    let mut ap = BTreeMap::new();
    let mut curves = Vec::new();
    for spec in methods {
        spec.method.validate()?;
        if ap.contains_key(&spec.label) {
            return Err(Error::InvalidArgument(format!("duplicate method label '{}'", spec.label)));
        }
        let dict = match &spec.method {
            Method::Bow { words, sampling } => Some(train_dataset_dictionary(ds, *words, sampling, cfg)?),
            _ => None,
        };
        let mut row = Vec::with_capacity(pairs.len());
        for s in &ds.sequences {
            let da = describe(&s.reference, &spec.method, &cfg.descriptor, dict.as_ref())?;
            for t in &s.targets {
                let db = describe(&t.image, &spec.method, &cfg.descriptor, dict.as_ref())?;
                let out = evaluate_descriptors(&da, &db, spec.metric, &t.ground_truth)?;
                row.push(out.curve.as_ref().map(|c| c.ap));
                if let Some(curve) = out.curve {
                    curves.push(CurveRecord { method: spec.label.clone(), pair: s.pair_name(t), curve });
                }
            }
        }
        let map = mean(row.iter().flatten().copied());
        info!("{}: mAP {}", spec.label, map.map_or("n/a".into(), |m| format!("{m:.4}")));
        summaries.push(MethodSummary {
            label: spec.label.clone(),
            method: spec.method.clone(),
            metric: spec.metric,
            map,
            included_pairs: row.iter().flatten().count(),
        });
        ap.insert(spec.label.clone(), row);
    }
    Ok(EvalReport { methods: summaries, pairs, n_correspondences, ap, notices, curves })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub map: Option<f64>,
}

/// DSP-SIFT over pooling intervals `(1 - r, 1 + r)` of the detected scale.
pub fn sweep_pooling_radius(
    ds: &PreparedDataset,
    radii: &[f64],
    n_sizes: usize,
    cfg: &EvalConfig,
) -> Result<(Vec<SweepRow>, EvalReport)> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidArgument("pooling radii must be a nonempty list of positive values".into()));
    }
    let specs = radii
        .iter()
        .map(|&r| {
            let sampling = SizeSampling::symmetric(r, n_sizes)?;
            Ok(MethodSpec::labeled(format!("radius={r}"), Method::DspSift { sampling }))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(ds, &specs, cfg)?;
    let rows = radii
        .iter()
        .zip(&report.methods)
        .map(|(&value, m)| SweepRow { value, map: m.map })
        .collect();
    Ok((rows, report))
}

/// DSP-SIFT over sample counts on a fixed pooling interval.
pub fn sweep_sample_count(
    ds: &PreparedDataset,
    counts: &[usize],
    lambda1: f64,
    lambda2: f64,
    cfg: &EvalConfig,
) -> Result<(Vec<SweepRow>, EvalReport)> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::InvalidArgument("sample counts must be a nonempty list of positive values".into()));
    }
    let specs = counts
        .iter()
        .map(|&n| {
            let sampling = SizeSampling::new(lambda1, lambda2, n)?;
            Ok(MethodSpec::labeled(format!("n={n}"), Method::DspSift { sampling }))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(ds, &specs, cfg)?;
    let rows = counts
        .iter()
        .zip(&report.methods)
        .map(|(&n, m)| SweepRow { value: n as f64, map: m.map })
        .collect();
    Ok((rows, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadToHead {
    pub method_a: String,
    pub method_b: String,
    /// `(pair, ap_a, ap_b)` for every pair scored by both.
    pub points: Vec<(String, f64, f64)>,
    /// `(mAP_a - mAP_b) / mAP_b` over those pairs.
    pub improvement: f64,
}

pub fn head_to_head(ra: &EvalReport, label_a: &str, rb: &EvalReport, label_b: &str) -> Result<HeadToHead> {
    if ra.pairs != rb.pairs {
        return Err(Error::InvalidArgument("reports cover different image pairs".into()));
    }
    let row = |r: &EvalReport, l: &str| {
        r.ap.get(l).cloned().ok_or_else(|| Error::InvalidArgument(format!("no method '{l}' in report")))
    };
    let (a, b) = (row(ra, label_a)?, row(rb, label_b)?);
    let mut points = Vec::new();
    for ((pair, x), y) in ra.pairs.iter().zip(&a).zip(&b) {
        match (x, y) {
            (Some(x), Some(y)) => points.push((pair.clone(), *x, *y)),
            (None, None) => {}
            _ => return Err(Error::InvalidArgument(format!("pair {pair} is scored by only one method"))),
        }
    }
    let ma = mean(points.iter().map(|p| p.1)).unwrap_or(0.0);
    let mb = mean(points.iter().map(|p| p.2)).unwrap_or(0.0);
    let improvement = if mb > 0.0 { (ma - mb) / mb } else { 0.0 };
    Ok(HeadToHead { method_a: label_a.into(), method_b: label_b.into(), points, improvement })
}

pub fn write_report_json<W: Write>(w: W, report: &EvalReport) -> std::io::Result<()> {
    serde_json::to_writer_pretty(w, report).map_err(std::io::Error::from)
}

/// `method,pair,threshold,precision,recall`
pub fn write_pr_csv<W: Write>(mut w: W, report: &EvalReport) -> std::io::Result<()> {
    writeln!(w, "method,pair,threshold,precision,recall")?;
    for c in &report.curves {
        for p in &c.curve.points {
            writeln!(w, "{},{},{},{},{}", c.method, c.pair, p.threshold, p.precision, p.recall)?;
        }
    }
    Ok(())
}

/// `pair,n_correspondences,<method>...` with empty cells for excluded pairs.
pub fn write_ap_csv<W: Write>(mut w: W, report: &EvalReport) -> std::io::Result<()> {
    let labels: Vec<&String> = report.methods.iter().map(|m| &m.label).collect();
    write!(w, "pair,n_correspondences")?;
    for l in &labels {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for (k, pair) in report.pairs.iter().enumerate() {
        write!(w, "{pair},{}", report.n_correspondences[k])?;
        for l in &labels {
            match report.ap[*l][k] {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut w: W, column: &str, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{column},map")?;
    for r in rows {
        match r.map {
            Some(m) => writeln!(w, "{},{m}", r.value)?,
            None => writeln!(w, "{},", r.value)?,
        }
    }
    Ok(())
}

pub fn write_head_to_head_csv<W: Write>(mut w: W, h: &HeadToHead) -> std::io::Result<()> {
    writeln!(w, "pair,{},{}", h.method_a, h.method_b)?;
    for (pair, a, b) in &h.points {
        writeln!(w, "{pair},{a},{b}")?;
    }
    Ok(())
}
