#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dspsift::dataset::{warp_image, Homography, Sequence};
use dspsift::image::{load_image, GrayImage};

pub const FIXTURES: [&str; 4] = ["camera", "coins", "astronaut", "chelsea"];

pub fn fixture(name: &str) -> GrayImage {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data");
    load_image(format!("{dir}/{name}.pgm")).expect("fixture image")
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data")).join(format!("{name}.pgm"))
}

pub fn crop(img: &GrayImage, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| img.get(x + x0, y + y0))
}

/// Rotation by `angle` and isotropic scaling by `scale` about the image center.
pub fn rotation_scale(angle: f64, scale: f64, w: f64, h: f64) -> Homography {
    let (sn, cs) = angle.sin_cos();
    let a = [[scale * cs, -scale * sn], [scale * sn, scale * cs]];
    let (cx, cy) = (w / 2.0, h / 2.0);
    let tx = cx - (a[0][0] * cx + a[0][1] * cy);
    let ty = cy - (a[1][0] * cx + a[1][1] * cy);
    Homography::new([[a[0][0], a[0][1], tx], [a[1][0], a[1][1], ty], [0.0, 0.0, 1.0]]).expect("invertible")
}

/// Reference image plus `targets` views of growing rotation and zoom-out.
pub fn warped_sequence(name: &str, img: &GrayImage, targets: usize) -> Sequence {
    let (w, h) = (img.width(), img.height());
    let mut images = vec![img.clone()];
    let mut hs = Vec::new();
    for k in 1..=targets {
        let hm = rotation_scale(0.15 * k as f64, 1.0 - 0.08 * k as f64, w as f64, h as f64);
        images.push(warp_image(img, &hm, w, h, 3, 0.0));
        hs.push(hm);
    }
    Sequence::from_images(name, images, hs).expect("sequence")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dspsift")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn dspsift")
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).current_dir(dir).args(args).output().expect("spawn dspsift")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
