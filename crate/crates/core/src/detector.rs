//! Maximally stable extremal regions and their second-moment ellipses.
//!
//! The component tree is built by union-find flooding over 256 quantized
//! gray levels with 4-connectivity. Both polarities are scanned: dark
//! regions (`I <= t`) on the quantized image and bright regions (`I >= t`)
//! on its complement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// A covariant region: center plus ellipse `a(x-u)^2 + 2b(x-u)(y-v) + c(y-v)^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseRegion {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Pixel count of the source extremal region, 0 for synthetic regions.
    pub area: f64,
}

impl EllipseRegion {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        let r = Self { cx, cy, a, b, c, area: 0.0 };
        if r.is_positive_definite() {
            Ok(r)
        } else {
            Err(Error::Degenerate(format!(
                "ellipse coefficients ({a}, {b}, {c}) are not positive definite"
            )))
        }
    }

    /// Circle of radius `r` centered at `(cx, cy)`.
    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        let k = 1.0 / (r * r);
        Self { cx, cy, a: k, b: 0.0, c: k, area: 0.0 }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.a > 0.0 && self.c > 0.0 && self.a * self.c - self.b * self.b > 0.0 && self.a.is_finite()
            && self.b.is_finite()
            && self.c.is_finite()
    }

    /// `pi / sqrt(ac - b^2)`.
    pub fn ellipse_area(&self) -> f64 {
        std::f64::consts::PI / (self.a * self.c - self.b * self.b).sqrt()
    }

    /// Inverse of the coefficient matrix: the ellipse is `{ x : x^T M^-1 x = 1 }`.
    pub fn shape_matrix(&self) -> [[f64; 2]; 2] {
        let det = self.a * self.c - self.b * self.b;
        [[self.c / det, -self.b / det], [-self.b / det, self.a / det]]
    }

    /// Semi-axis lengths, largest first.
    pub fn semi_axes(&self) -> (f64, f64) {
        let (l1, l2) = sym_eigenvalues(self.a, self.b, self.c);
        // the largest axis belongs to the smallest coefficient eigenvalue
        (1.0 / l1.sqrt(), 1.0 / l2.sqrt())
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let m = self.shape_matrix();
        (m[0][0].sqrt(), m[1][1].sqrt())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        self.a * dx * dx + 2.0 * self.b * dx * dy + self.c * dy * dy <= 1.0
    }

    /// Same ellipse with every axis multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let k = 1.0 / (s * s);
        Self { a: self.a * k, b: self.b * k, c: self.c * k, ..*self }
    }

    /// `n` points evenly spaced in angle along the boundary.
    pub fn boundary(&self, n: usize) -> Vec<(f64, f64)> {
        let l = sqrt_spd(self.shape_matrix());
        (0..n)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / n as f64;
                let (s, c) = t.sin_cos();
                (
                    self.cx + l[0][0] * c + l[0][1] * s,
                    self.cy + l[1][0] * c + l[1][1] * s,
                )
            })
            .collect()
    }
}

/// Eigenvalues of `[[a, b], [b, c]]`, ascending.
pub(crate) fn sym_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - d, mean + d)
}

/// Symmetric square root of a symmetric positive-definite 2x2 matrix.
pub(crate) fn sqrt_spd(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    // sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det))
    let s = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).sqrt();
    [
        [(m[0][0] + s) / t, m[0][1] / t],
        [m[1][0] / t, (m[1][1] + s) / t],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MserParams {
    /// Gray-level step (out of 255) over which area change is measured.
    pub delta: u32,
    /// Smallest region, in pixels.
    pub min_area: usize,
    /// Largest region as a fraction of the image area.
    pub max_area: f64,
    /// Largest accepted relative area change over `delta` levels.
    pub max_variation: f64,
    /// Nested regions whose areas differ by less than this fraction are duplicates.
    pub min_diversity: f64,
}

impl Default for MserParams {
    fn default() -> Self {
        Self {
            delta: 5,
            min_area: 30,
            max_area: 0.25,
            max_variation: 0.25,
            min_diversity: 0.2,
        }
    }
}

impl MserParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("mser: {m}")));
        if self.delta < 1 || self.delta > 255 {
            return bad("delta must be in [1, 255]");
        }
        if self.min_area == 0 {
            return bad("min_area must be positive");
        }
        for (name, v) in [
            ("max_area", self.max_area),
            ("max_variation", self.max_variation),
            ("min_diversity", self.min_diversity),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(&format!("{name} must be in (0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Second-moment ellipse of a pixel set.
///
/// The ellipse has the same second moments as the set, scaled so a filled
/// disc of radius `r` maps back to a circle of radius `r`: the coefficient
/// matrix is `(4 C)^-1` with `C` the population covariance.
pub fn ellipse_from_moments(pixels: &[(f64, f64)]) -> Result<EllipseRegion> {
    let mut m = Moments::default();
    for &(x, y) in pixels {
        m.add_point(x, y);
    }
    m.ellipse()
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

impl Moments {
    fn add_point(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.sxy += x * y;
        self.syy += y * y;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxx += o.sxx;
        self.sxy += o.sxy;
        self.syy += o.syy;
    }

    fn ellipse(&self) -> Result<EllipseRegion> {
        if self.n < 3.0 {
            return Err(Error::Degenerate("fewer than 3 pixels".into()));
        }
        let cx = self.sx / self.n;
        let cy = self.sy / self.n;
        let vxx = self.sxx / self.n - cx * cx;
        let vxy = self.sxy / self.n - cx * cy;
        let vyy = self.syy / self.n - cy * cy;
        let det = vxx * vyy - vxy * vxy;
        let scale = (vxx + vyy).max(1.0);
        if det <= 1e-9 * scale * scale {
            return Err(Error::Degenerate("collinear pixel set".into()));
        }
        let k = 4.0 * det;
        let mut r = EllipseRegion::new(cx, cy, vyy / k, -vxy / k, vxx / k)?;
        r.area = self.n;
        Ok(r)
    }
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    level: u8,
    area: u32,
    parent: u32,
    merged_into: u32,
    moments: Moments,
}

/// Component tree of one polarity: nodes are (component, level) pairs where
/// the component changed.
struct ComponentTree {
    nodes: Vec<Node>,
}

impl ComponentTree {
    fn build(levels: &[u8], width: usize, height: usize) -> Self {
        let n = levels.len();
        // counting sort by level
        let mut counts = [0usize; 257];
        for &l in levels {
            counts[l as usize + 1] += 1;
        }
        for i in 1..257 {
            counts[i] += counts[i - 1];
        }
        let mut order = vec![0u32; n];
        let mut next = counts;
        for (p, &l) in levels.iter().enumerate() {
            order[next[l as usize]] = p as u32;
            next[l as usize] += 1;
        }

        let mut dsu = vec![NONE; n];
        let mut rank = vec![0u8; n];
        let mut comp_node = vec![NONE; n];
        let mut nodes: Vec<Node> = Vec::with_capacity(n / 2);

        fn find(dsu: &mut [u32], mut p: u32) -> u32 {
            let mut root = p;
            while dsu[root as usize] != root {
                root = dsu[root as usize];
            }
            while dsu[p as usize] != root {
                let nx = dsu[p as usize];
                dsu[p as usize] = root;
                p = nx;
            }
            root
        }

        for &p in &order {
            let pu = p as usize;
            let g = levels[pu];
            let (x, y) = (pu % width, pu / width);
            dsu[pu] = p;
            let mut mom = Moments::default();
            mom.add_point(x as f64, y as f64);
            comp_node[pu] = nodes.len() as u32;
            nodes.push(Node { level: g, area: 1, parent: NONE, merged_into: NONE, moments: mom });

            let mut neighbors = [NONE; 4];
            if x > 0 {
                neighbors[0] = p - 1;
            }
            if x + 1 < width {
                neighbors[1] = p + 1;
            }
            if y > 0 {
                neighbors[2] = p - width as u32;
            }
            if y + 1 < height {
                neighbors[3] = p + width as u32;
            }
            for q in neighbors {
                if q == NONE || dsu[q as usize] == NONE {
                    continue;
                }
                let rq = find(&mut dsu, q);
                let rp = find(&mut dsu, p);
                if rq == rp {
                    continue;
                }
                let np = comp_node[rp as usize];
                let nq = comp_node[rq as usize];
                debug_assert_eq!(nodes[np as usize].level, g);
                let (area, mom) = (nodes[nq as usize].area, nodes[nq as usize].moments);
                if nodes[nq as usize].level == g {
                    nodes[nq as usize].merged_into = np;
                } else {
                    nodes[nq as usize].parent = np;
                }
                let target = &mut nodes[np as usize];
                target.area += area;
                target.moments.merge(&mom);

                let root = match rank[rp as usize].cmp(&rank[rq as usize]) {
                    std::cmp::Ordering::Less => {
                        dsu[rp as usize] = rq;
                        rq
                    }
                    std::cmp::Ordering::Greater => {
                        dsu[rq as usize] = rp;
                        rp
                    }
                    std::cmp::Ordering::Equal => {
                        dsu[rq as usize] = rp;
                        rank[rp as usize] += 1;
                        rp
                    }
                };
                comp_node[root as usize] = np;
            }
        }

        // resolve parents through same-level merges and drop merged nodes
        let resolve = |nodes: &[Node], mut i: u32| {
            while nodes[i as usize].merged_into != NONE {
                i = nodes[i as usize].merged_into;
            }
            i
        };
        let mut remap = vec![NONE; nodes.len()];
        let mut kept = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.merged_into == NONE {
                remap[i] = kept.len() as u32;
                kept.push(node.clone());
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.merged_into == NONE && node.parent != NONE {
                let parent = resolve(&nodes, node.parent);
                kept[remap[i] as usize].parent = remap[parent as usize];
            }
        }
        Self { nodes: kept }
    }

    /// `(area(l + delta) - area(l)) / area(l)` where `area(l + delta)` is the
    /// area of the highest ancestor still at or below level `l + delta`.
    fn variations(&self, delta: u32) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|node| {
                let limit = node.level as u32 + delta;
                let mut cur = node;
                while cur.parent != NONE && self.nodes[cur.parent as usize].level as u32 <= limit {
                    cur = &self.nodes[cur.parent as usize];
                }
                (cur.area - node.area) as f64 / node.area as f64
            })
            .collect()
    }

    fn stable_regions(&self, p: &MserParams, image_area: usize) -> Vec<EllipseRegion> {
        let var = self.variations(p.delta);
        let n = self.nodes.len();
        let mut maxstable = vec![true; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.parent == NONE {
                continue;
            }
            let par = node.parent as usize;
            if var[i] <= var[par] {
                maxstable[par] = false;
            } else {
                maxstable[i] = false;
            }
        }
        let max_area = p.max_area * image_area as f64;
        let mut keep: Vec<bool> = (0..n)
            .map(|i| {
                let a = self.nodes[i].area as usize;
                maxstable[i] && a >= p.min_area && (a as f64) <= max_area && var[i] <= p.max_variation
            })
            .collect();

        // nodes are created in processing order, so children precede parents
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            let mut anc = self.nodes[i].parent;
            while anc != NONE && !keep[anc as usize] {
                anc = self.nodes[anc as usize].parent;
            }
            if anc == NONE {
                continue;
            }
            let a = anc as usize;
            let area_anc = self.nodes[a].area as f64;
            let rel = (area_anc - self.nodes[i].area as f64) / area_anc;
            if rel < p.min_diversity {
                if var[i] < var[a] {
                    keep[a] = false;
                } else {
                    keep[i] = false;
                }
            }
        }

        self.nodes
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .filter_map(|(node, _)| node.moments.ellipse().ok())
            .collect()
    }
}

/// Detects MSERs of both polarities, sorted by descending area.
pub fn detect_mser(img: &GrayImage, p: &MserParams) -> Result<Vec<EllipseRegion>> {
    p.validate()?;
    if img.width() < 8 || img.height() < 8 {
        return Err(Error::InvalidArgument(format!(
            "mser needs at least 8x8 pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let quantized: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let inverted: Vec<u8> = quantized.iter().map(|v| 255 - v).collect();
    let area = img.width() * img.height();
    let mut out = Vec::new();
    for levels in [&quantized, &inverted] {
        let tree = ComponentTree::build(levels, img.width(), img.height());
        out.extend(tree.stable_regions(p, area));
    }
    out.sort_by(|a, b| {
        b.area
            .total_cmp(&a.area)
            .then(a.cx.total_cmp(&b.cx))
            .then(a.cy.total_cmp(&b.cy))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_image(size: usize, x0: usize, y0: usize, side: usize) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| {
            if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn constant_image_has_no_regions() {
        let img = GrayImage::constant(32, 32, 0.4);
        assert!(detect_mser(&img, &MserParams::default()).unwrap().is_empty());
    }

    /// Brute force: threshold at every gray level and flood-fill the
    /// component holding the square's center.
    fn flood_area(img: &GrayImage, seed: (usize, usize), t: f64) -> usize {
        let (w, h) = (img.width(), img.height());
        let mut seen = vec![false; w * h];
        let mut stack = vec![seed];
        let mut n = 0;
        while let Some((x, y)) = stack.pop() {
            if seen[y * w + x] || img.get(x, y) < t {
                continue;
            }
            seen[y * w + x] = true;
            n += 1;
            if x > 0 {
                stack.push((x - 1, y));
            }
            if x + 1 < w {
                stack.push((x + 1, y));
            }
            if y > 0 {
                stack.push((x, y - 1));
            }
            if y + 1 < h {
                stack.push((x, y + 1));
            }
        }
        n
    }

    #[test]
    fn white_square_is_detected() {
        let img = square_image(64, 22, 22, 20);
        // oracle: the bright component at the center stays 400 px for every
        // threshold in (0, 1], so it is perfectly stable
        for t in 1..=255 {
            assert_eq!(flood_area(&img, (32, 32), t as f64 / 255.0), 400);
        }
        let regions = detect_mser(&img, &MserParams::default()).unwrap();
        let hit = regions.iter().find(|r| {
            (r.cx - 31.5).abs() <= 1.0 && (r.cy - 31.5).abs() <= 1.0 && (r.area - 400.0).abs() <= 40.0
        });
        assert!(hit.is_some(), "{regions:?}");
        for r in &regions {
            assert!(r.is_positive_definite());
        }
    }

    #[test]
    fn inversion_gives_same_regions() {
        let img = square_image(64, 10, 30, 20);
        let a = detect_mser(&img, &MserParams::default()).unwrap();
        let b = detect_mser(&img.inverted(), &MserParams::default()).unwrap();
        assert_eq!(a.len(), b.len());
        for r in &a {
            assert!(b.iter().any(|s| (s.cx - r.cx).abs() <= 0.5 && (s.cy - r.cy).abs() <= 0.5));
        }
    }

    #[test]
    fn translation_shifts_centers() {
        let img = GrayImage::from_fn(80, 80, |x, y| {
            let d1 = ((x as f64 - 30.0).powi(2) + (y as f64 - 28.0).powi(2)).sqrt();
            let d2 = ((x as f64 - 50.0).powi(2) + (y as f64 - 45.0).powi(2)).sqrt();
            0.2 + 0.6 * (d1 < 8.0) as u8 as f64 + 0.15 * (d2 < 6.0) as u8 as f64
        });
        let shifted = img.translated(3, -2, 0.2);
        let a = detect_mser(&img, &MserParams::default()).unwrap();
        let b = detect_mser(&shifted, &MserParams::default()).unwrap();
        let interior: Vec<_> = a.iter().filter(|r| r.area < 1000.0).collect();
        assert!(!interior.is_empty());
        for r in interior {
            assert!(
                b.iter().any(|s| (s.cx - r.cx - 3.0).abs() < 1e-9 && (s.cy - r.cy + 2.0).abs() < 1e-9),
                "no shifted partner for {r:?}"
            );
        }
    }

    #[test]
    fn disc_moments_recover_radius() {
        let r = 20.0;
        let mut pts = Vec::new();
        for y in -25..=25 {
            for x in -25..=25 {
                if ((x * x + y * y) as f64) <= r * r {
                    pts.push((x as f64 + 100.0, y as f64 + 50.0));
                }
            }
        }
        let e = ellipse_from_moments(&pts).unwrap();
        assert!((e.cx - 100.0).abs() < 1e-9 && (e.cy - 50.0).abs() < 1e-9);
        assert!(e.b.abs() < 1e-12);
        let (s1, s2) = e.semi_axes();
        // pixelization adds ~1/12 px^2 of variance per axis
        assert!((s1 - r).abs() < 0.1 && (s2 - r).abs() < 0.1, "{s1} {s2}");
    }

    #[test]
    fn gaussian_cloud_is_near_circular() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = |rng: &mut ChaCha8Rng| {
            use rand::Rng;
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let pts: Vec<_> = (0..20000).map(|_| (normal(&mut rng), normal(&mut rng))).collect();
        let e = ellipse_from_moments(&pts).unwrap();
        // unit covariance -> coefficients 1/4 on the diagonal
        assert!((e.a - 0.25).abs() < 0.01 && (e.c - 0.25).abs() < 0.01);
        assert!(e.b.abs() < 0.01);
    }

    #[test]
    fn collinear_pixels_rejected() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert!(matches!(ellipse_from_moments(&pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ellipse_geometry_helpers() {
        let e = EllipseRegion::new(0.0, 0.0, 0.04, 0.0, 0.01).unwrap();
        let (s1, s2) = e.semi_axes();
        assert!((s1 - 10.0).abs() < 1e-12 && (s2 - 5.0).abs() < 1e-12);
        assert!((e.ellipse_area() - std::f64::consts::PI * 50.0).abs() < 1e-9);
        for (x, y) in e.boundary(16) {
            let v = e.a * x * x + 2.0 * e.b * x * y + e.c * y * y;
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(EllipseRegion::new(0.0, 0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(MserParams { delta: 0, ..Default::default() }.validate().is_err());
        assert!(MserParams { max_variation: 0.0, ..Default::default() }.validate().is_err());
        assert!(MserParams::default().validate().is_ok());
    }
}
