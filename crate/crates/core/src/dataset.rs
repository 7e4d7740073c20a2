//! Benchmark ingestion in the Oxford affine-covariant layout.
//!
//! A sequence directory holds `img1..imgK` (PPM, PGM or PNG) plus `H1toJp`
//! homography files for every target `J = 2..K`. Region files use the Oxford
//! interchange format: a dimension line, a count line, then `u v a b c` per
//! region (extra columns, e.g. descriptor values, are ignored).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::detector::EllipseRegion;
use crate::error::{Error, Result};
use crate::image::{load_image, GrayImage};

const IMAGE_EXTENSIONS: [&str; 5] = ["ppm", "pgm", "png", "pnm", "PPM"];

/// 3x3 planar map from homogeneous pixel coordinates of image A to image B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: [[f64; 3]; 3],
}

impl Homography {
    pub const SINGULAR_EPS: f64 = 1e-12;

    /// Validates invertibility and rescales so `h[2][2] == 1` when nonzero.
    pub fn new(mut h: [[f64; 3]; 3]) -> Result<Self> {
        if h.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("homography has non-finite entries".into()));
        }
        if h[2][2] != 0.0 {
            let s = h[2][2];
            h.iter_mut().flatten().for_each(|v| *v /= s);
        }
        let det = det3(&h);
        if det.abs() < Self::SINGULAR_EPS {
            return Err(Error::SingularHomography(det));
        }
        Ok(Self { h })
    }

    pub fn identity() -> Self {
        Self { h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.h
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.h)
    }

    /// Maps a point and dehomogenizes. Points sent to infinity yield non-finite output.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let h = &self.h;
        let w = h[2][0] * x + h[2][1] * y + h[2][2];
        (
            (h[0][0] * x + h[0][1] * y + h[0][2]) / w,
            (h[1][0] * x + h[1][1] * y + h[1][2]) / w,
        )
    }

    pub fn inverse(&self) -> Self {
        let m = &self.h;
        let det = det3(m);
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / det;
            }
        }
        Self::new(inv).expect("inverse of an invertible matrix is invertible")
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Reads an Oxford `H1toJp` file: nine whitespace-separated reals, row-major.
pub fn load_homography(path: impl AsRef<Path>) -> Result<Homography> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::with_capacity(9);
    for (lineno, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::format(path, lineno + 1, format!("not a number: {tok:?}")))?;
            values.push(v);
        }
    }
    if values.len() != 9 {
        return Err(Error::format(
            path,
            0,
            format!("expected 9 values, found {}", values.len()),
        ));
    }
    let mut h = [[0.0; 3]; 3];
    for (i, v) in values.into_iter().enumerate() {
        h[i / 3][i % 3] = v;
    }
    Homography::new(h).map_err(|e| match e {
        Error::SingularHomography(d) => Error::format(path, 0, format!("singular homography (det {d:e})")),
        other => other,
    })
}

pub fn write_homography(h: &Homography, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for row in h.matrix() {
        // {:e} with no precision is the shortest exact round-trip form
        writeln!(s, "{:e} {:e} {:e}", row[0], row[1], row[2]).expect("write to String");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Resamples `img` into a `width x height` image of the target view under
/// `h`: each output pixel averages `supersample^2` bilinear reads of the
/// source at `h^-1 p`; reads outside the source take `fill`.
pub fn warp_image(img: &GrayImage, h: &Homography, width: usize, height: usize, supersample: usize, fill: f64) -> GrayImage {
    let inv = h.inverse();
    let n = supersample.max(1);
    GrayImage::from_fn(width, height, |x, y| {
        let mut sum = 0.0;
        for sy in 0..n {
            for sx in 0..n {
                let px = x as f64 + (sx as f64 + 0.5) / n as f64 - 0.5;
                let py = y as f64 + (sy as f64 + 0.5) / n as f64 - 0.5;
                let (u, v) = inv.apply(px, py);
                let (val, outside) = if u.is_finite() && v.is_finite() {
                    img.sample_bilinear(u, v)
                } else {
                    (fill, true)
                };
                sum += if outside { fill } else { val };
            }
        }
        sum / (n * n) as f64
    })
}

/// Result of reading a region file: valid regions in file order plus the
/// number of entries dropped for not being positive definite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionSet {
    pub regions: Vec<EllipseRegion>,
    pub skipped: usize,
}

pub fn load_regions(path: impl AsRef<Path>) -> Result<RegionSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (ln, first) = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "empty region file"))?;
    first
        .parse::<f64>()
        .map_err(|_| Error::format(path, ln, format!("bad dimension line {first:?}")))?;
    let (ln, second) = lines
        .next()
        .ok_or_else(|| Error::format(path, ln + 1, "missing region count"))?;
    let declared: usize = second
        .parse::<f64>()
        .ok()
        .filter(|v| *v >= 0.0 && v.fract() == 0.0)
        .map(|v| v as usize)
        .ok_or_else(|| Error::format(path, ln, format!("bad region count {second:?}")))?;

    let mut set = RegionSet::default();
    let mut seen = 0usize;
    for (ln, line) in lines {
        seen += 1;
        if seen > declared {
            return Err(Error::format(
                path,
                ln,
                format!("count mismatch: header declares {declared}, found more"),
            ));
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .take(5)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, ln, "non-numeric region entry"))?;
        if vals.len() < 5 {
            return Err(Error::format(path, ln, "region line needs 5 values (u v a b c)"));
        }
        let r = EllipseRegion { cx: vals[0], cy: vals[1], a: vals[2], b: vals[3], c: vals[4], area: 0.0 };
        if r.is_positive_definite() {
            set.regions.push(r);
        } else {
            set.skipped += 1;
        }
    }
    if seen != declared {
        return Err(Error::format(
            path,
            0,
            format!("count mismatch: header declares {declared}, found {seen}"),
        ));
    }
    if set.skipped > 0 {
        warn!("{}: skipped {} non-positive-definite regions", path.display(), set.skipped);
    }
    Ok(set)
}

/// Writes regions in the grammar read by [`load_regions`].
pub fn format_regions(regions: &[EllipseRegion]) -> String {
    let mut s = format!("1.0\n{}\n", regions.len());
    for r in regions {
        writeln!(s, "{:e} {:e} {:e} {:e} {:e}", r.cx, r.cy, r.a, r.b, r.c).expect("write to String");
    }
    s
}

pub fn write_regions(regions: &[EllipseRegion], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_regions(regions)).map_err(|e| Error::io(path, e))
}

/// One benchmark sequence: reference image first, homographies reference -> target.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub dir: PathBuf,
    pub images: Vec<GrayImage>,
    pub image_paths: Vec<PathBuf>,
    /// `homographies[k]` maps image 0 to image `k + 1`.
    pub homographies: Vec<Homography>,
}

impl Sequence {
    /// In-memory sequence; image paths are nominal `img{k}.pgm` names.
    pub fn from_images(name: &str, images: Vec<GrayImage>, homographies: Vec<Homography>) -> Result<Self> {
        if images.is_empty() || homographies.len() + 1 != images.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images need {} homographies, got {}",
                images.len(),
                images.len().saturating_sub(1),
                homographies.len()
            )));
        }
        let image_paths = (1..=images.len()).map(|k| PathBuf::from(format!("img{k}.pgm"))).collect();
        Ok(Self { name: name.into(), dir: PathBuf::new(), images, image_paths, homographies })
    }

    /// Writes `img{k}.pgm` and `H1to{k}p` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, img) in self.images.iter().enumerate() {
            crate::image::write_pgm(img, dir.join(format!("img{}.pgm", k + 1)), true)?;
        }
        for (k, h) in self.homographies.iter().enumerate() {
            write_homography(h, dir.join(format!("H1to{}p", k + 2)))?;
        }
        Ok(())
    }

    /// Index of the last image (transformation magnitude grows with index).
    pub fn num_targets(&self) -> usize {
        self.homographies.len()
    }

    /// Homography from the reference to image `target` (1-based file number, >= 2).
    pub fn homography_to(&self, target: usize) -> Option<&Homography> {
        target.checked_sub(2).and_then(|i| self.homographies.get(i))
    }
}

fn find_image(dir: &Path, k: usize) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("img{k}.{ext}")))
        .find(|p| p.is_file())
}

/// Loads `img1..imgK` and `H1toJp` for `J = 2..K`.
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Missing { path: dir.to_path_buf() });
    }
    let mut image_paths = Vec::new();
    let mut k = 1;
    while let Some(p) = find_image(dir, k) {
        image_paths.push(p);
        k += 1;
    }
    if image_paths.is_empty() {
        return Err(Error::Missing { path: dir.join("img1.ppm") });
    }
    let mut homographies = Vec::new();
    for j in 2..=image_paths.len() {
        let hp = dir.join(format!("H1to{j}p"));
        if !hp.is_file() {
            return Err(Error::Missing { path: hp });
        }
        homographies.push(load_homography(&hp)?);
    }
    let images = image_paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence { name, dir: dir.to_path_buf(), images, image_paths, homographies })
}

/// Loads either a single sequence directory or every sequence directory
/// directly below `root`, sorted by name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let root = root.as_ref();
    if find_image(root, 1).is_some() {
        return Ok(vec![load_sequence(root)?]);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && find_image(p, 1).is_some())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Missing { path: root.join("<sequence>/img1.ppm") });
    }
    dirs.iter().map(load_sequence).collect()
}
