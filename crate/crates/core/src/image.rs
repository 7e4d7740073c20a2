//! Grayscale rasters and the image readers/writers used by the benchmark.
//!
//! PGM/PPM (P2, P3, P5, P6) are decoded here directly; PNG goes through the
//! `image` crate. Color inputs are reduced to luminance with the BT.601
//! weights `0.299 R + 0.587 G + 0.114 B`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Single-channel intensity raster, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from a per-pixel function; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    /// Wraps already-validated storage. Used internally by filters whose
    /// outputs are convex combinations of in-range inputs.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear interpolation at a continuous position (pixel centers at
    /// integer coordinates). Returns the value and whether the position lies
    /// outside `[0, w-1] x [0, h-1]`, in which case it is clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> (f64, bool) {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let outside = !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y);
        let xc = x.clamp(0.0, max_x);
        let yc = y.clamp(0.0, max_y);
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        (top * (1.0 - fy) + bottom * fy, outside)
    }

    /// `1 - I`.
    pub fn inverted(&self) -> Self {
        Self::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| 1.0 - v).collect(),
        )
    }

    /// Multiplies every intensity by `factor`, clamping into `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect(),
        )
    }

    /// Copy shifted by an integer offset; uncovered pixels take `fill`.
    pub fn translated(&self, dx: isize, dy: isize, fill: f64) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            let sx = x as isize - dx;
            let sy = y as isize - dy;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(sx as usize, sy as usize)
            } else {
                fill
            }
        })
    }

    /// Rotation by 90 degrees: output pixel `(x, y)` reads input `(y, W-1-x)`.
    /// With y pointing down, a gradient at angle `phi` becomes `phi - pi/2`.
    pub fn rotated_90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    /// Every other pixel in each direction (`ceil(w/2) x ceil(h/2)`).
    pub fn decimate(&self) -> Self {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        Self::from_fn(w, h, |x, y| self.get(2 * x, 2 * y))
    }

    /// Intensities of one row.
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

/// Loads a PGM/PPM (P2, P3, P5, P6) or PNG image as luminance in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)
    } else if bytes.first() == Some(&b'P') {
        decode_pnm(path, &bytes)
    } else {
        Err(Error::format(path, 0, "unrecognized image signature"))
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<GrayImage> {
    use image::DynamicImage;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, 0, format!("png decode failed: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .pixels()
            .map(|p| luminance(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .pixels()
            .map(|p| luminance(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
    };
    GrayImage::new(w, h, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

#[inline]
fn luminance(r: f64, g: f64, b: f64) -> f64 {
    LUMA_R * r + LUMA_G * g + LUMA_B * b
}

/// Byte cursor over a PNM header/body that tracks offsets for error messages.
struct PnmCursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(self.path, start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(self.path, start, format!("{what} out of range")))
    }
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(Error::format(path, 0, "truncated header"));
    }
    let (ascii, channels) = match &bytes[..2] {
        b"P2" => (true, 1),
        b"P3" => (true, 3),
        b"P5" => (false, 1),
        b"P6" => (false, 3),
        _ => return Err(Error::format(path, 0, "unsupported PNM magic (expected P2, P3, P5 or P6)")),
    };
    let mut cur = PnmCursor { path, bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(path, 2, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(
            path,
            maxval_at,
            format!("unsupported bit depth (maxval {maxval}; at most 16 bits)"),
        ));
    }
    let n = width * height * channels;
    let max = maxval as f64;
    let mut raw = Vec::with_capacity(n);
    if ascii {
        for _ in 0..n {
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval {
                return Err(Error::format(path, at, format!("sample {v} exceeds maxval {maxval}")));
            }
            raw.push(v as f64 / max);
        }
    } else {
        // exactly one whitespace byte separates the header from the raster
        let body = cur.pos + 1;
        let bps = if maxval < 256 { 1 } else { 2 };
        let needed = n * bps;
        if bytes.len() < body + needed {
            return Err(Error::format(
                path,
                bytes.len(),
                format!("truncated raster: need {needed} bytes after offset {body}"),
            ));
        }
        let data = &bytes[body..body + needed];
        for i in 0..n {
            let v = if bps == 1 {
                data[i] as u64
            } else {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as u64
            };
            if v > maxval {
                return Err(Error::format(path, body + i * bps, format!("sample {v} exceeds maxval {maxval}")));
            }
            raw.push(v as f64 / max);
        }
    }
    let data = if channels == 1 {
        raw
    } else {
        raw.chunks_exact(3)
            .map(|p| luminance(p[0], p[1], p[2]).clamp(0.0, 1.0))
            .collect()
    };
    GrayImage::new(width, height, data)
}

/// Writes a binary PGM. `sixteen_bit` selects maxval 65535 instead of 255.
pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>, sixteen_bit: bool) -> Result<()> {
    let path = path.as_ref();
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = Vec::with_capacity(img.data.len() * 2 + 32);
    write!(out, "P5\n{} {}\n{}\n", img.width, img.height, maxval).expect("write to Vec");
    for &v in &img.data {
        let q = (v * maxval as f64).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn ascii_pgm_scales_by_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.pgm", b"P2\n# comment\n2 2\n255\n0 255\n255 0\n");
        let img = load_image(&p).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn binary_pgm_single_byte() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "b.pgm", b"P5 1 1 255\n\x80");
        let img = load_image(&p).unwrap();
        assert_eq!(img.data(), &[128.0 / 255.0]);
    }

    #[test]
    fn sixteen_bit_binary_is_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "c.pgm", b"P5\n2 1\n65535\n\xff\xff\x80\x00");
        let img = load_image(&p).unwrap();
        assert_eq!(img.data()[0], 1.0);
        assert!((img.data()[1] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn red_png_pixel_is_bt601_weight() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.png");
        let buf = image::RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]));
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert!((img.data()[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn ppm_converted_to_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "d.ppm", b"P3\n1 1\n255\n0 255 0\n");
        let img = load_image(&p).unwrap();
        assert!((img.data()[0] - 0.587).abs() < 1e-12);
    }

    #[test]
    fn errors_name_path_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.pgm");
        let err = load_image(&missing).unwrap_err();
        assert!(matches!(err, Error::Missing { .. }));
        assert!(err.to_string().contains("nope.pgm"));

        let p = write_tmp(&dir, "deep.pgm", b"P5\n1 1\n131071\n\x00\x00\x00");
        match load_image(&p).unwrap_err() {
            Error::Format { offset, msg, .. } => {
                assert_eq!(offset, 7);
                assert!(msg.contains("bit depth"));
            }
            e => panic!("unexpected {e:?}"),
        }

        let p = write_tmp(&dir, "trunc.pgm", b"P5\n4 4\n255\n\x00\x00");
        assert!(matches!(load_image(&p).unwrap_err(), Error::Format { .. }));

        let p = write_tmp(&dir, "hdr.pgm", b"P2\nx 4\n255\n");
        assert!(matches!(load_image(&p).unwrap_err(), Error::Format { offset: 3, .. }));
    }

    #[test]
    fn sixteen_bit_round_trip_within_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.pgm");
        let img = GrayImage::from_fn(7, 5, |x, y| ((x * 13 + y * 7) % 17) as f64 / 16.3);
        write_pgm(&img, &p, true).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 65535.0);
        }
    }

    #[test]
    fn bilinear_reports_outside() {
        let img = GrayImage::from_fn(3, 3, |x, _| x as f64 / 2.0);
        let (v, out) = img.sample_bilinear(0.5, 1.0);
        assert!((v - 0.25).abs() < 1e-15 && !out);
        let (v, out) = img.sample_bilinear(-1.0, 1.0);
        assert!(out && v == 0.0);
    }

    #[test]
    fn invariant_checks_on_construction() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }
}
