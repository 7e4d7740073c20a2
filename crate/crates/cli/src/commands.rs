use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dspsift::dataset::{load_dataset, load_homography, load_regions, write_regions};
use dspsift::descriptor::Dictionary;
use dspsift::detector::{detect_mser, EllipseRegion};
use dspsift::dump::{self, DescriptorRecord, BINARY_MAGIC};
use dspsift::eval::{
    describe, evaluate, ground_truth_correspondences, head_to_head, label_matches, pr_curve, prepare_dataset,
    prepare_image, sweep_pooling_radius, sweep_sample_count, train_dataset_dictionary, write_ap_csv,
    write_head_to_head_csv, write_pr_csv, write_report_json, write_sweep_csv, EvalReport, Method, PreparedDataset,
    PreparedImage, PreparedSequence, RegionSource,
};
use dspsift::image::{load_image, GrayImage};
use dspsift::matching::{match_all, write_matches_csv, Metric};
use dspsift::samplinglab::{
    linspace, pooled_histogram, ridge_trial, smooth_noise, specificity_curves, Signal1D,
};

use crate::config::{config_error, parse_list, CommonArgs, Settings};
use crate::{Command, DumpFormat};

const DEFAULT_RADII: [f64; 5] = [1.0 / 12.0, 0.25, 0.5, 2.0 / 3.0, 1.0];
const DEFAULT_COUNTS: [usize; 5] = [1, 3, 5, 10, 15];
const SAMPLE_SWEEP_RANGE: (f64, f64) = (0.5, 1.5);

pub fn run(args: &CommonArgs, command: Command) -> Result<()> {
    let settings = Settings::resolve(args)?;
    check_command(&command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .context("cannot start worker pool")?;
    pool.install(|| match command {
        Command::Detect { images } => cmd_detect(&settings, &images),
        Command::Extract { images, format } => cmd_extract(&settings, &images, format),
        Command::Match { query, target, homography } => cmd_match(&settings, &query, &target, homography.as_deref()),
        Command::Evaluate => cmd_evaluate(&settings),
        Command::SweepRadius { radii } => cmd_sweep_radius(&settings, radii.as_deref()),
        Command::SweepSamples { counts } => cmd_sweep_samples(&settings, counts.as_deref()),
        Command::LabRidge { trials } => cmd_lab_ridge(&settings, trials),
        Command::LabSpecificity { sigma_star, background } => cmd_lab_specificity(&settings, sigma_star, background),
        Command::LabPooledhist { bins, radius } => cmd_lab_pooledhist(&settings, bins, radius),
    })
}

/// Range checks on subcommand arguments, before any work starts.
fn check_command(command: &Command) -> Result<()> {
    match command {
        Command::LabRidge { trials } if *trials == 0 => Err(config_error("--trials must be at least 1")),
        Command::LabSpecificity { sigma_star, background } => {
            if !(*sigma_star > 0.0 && *sigma_star <= 50.0) {
                return Err(config_error(format!("--sigma-star must be in (0, 50], got {sigma_star}")));
            }
            if !(*background >= 0.0 && background.is_finite()) {
                return Err(config_error(format!("--background must be non-negative, got {background}")));
            }
            Ok(())
        }
        Command::LabPooledhist { bins, radius } => {
            if *bins < 2 {
                return Err(config_error(format!("--bins must be at least 2, got {bins}")));
            }
            if !(*radius >= 0.0 && *radius < 128.0) {
                return Err(config_error(format!("--radius must be in [0, 128), got {radius}")));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn create_output(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create_output(path)?;
    body(&mut w).and_then(|_| w.flush()).with_context(|| format!("cannot write {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

struct InputImage {
    /// Output name relative to --out, without extension.
    name: String,
    path: PathBuf,
    image: GrayImage,
}

fn input_images(s: &Settings, images: &[PathBuf]) -> Result<Vec<InputImage>> {
    if !images.is_empty() {
        return images
            .iter()
            .map(|p| {
                let image = load_image(p)?;
                let name = p.file_stem().map_or("image".into(), |n| n.to_string_lossy().into_owned());
                Ok(InputImage { name, path: p.clone(), image })
            })
            .collect();
    }
    let seqs = load_dataset(s.require_dataset()?)?;
    let mut out = Vec::new();
    for seq in seqs {
        for (path, image) in seq.image_paths.into_iter().zip(seq.images) {
            let stem = path.file_stem().map_or("image".into(), |n| n.to_string_lossy().into_owned());
            out.push(InputImage { name: format!("{}/{stem}", seq.name), path, image });
        }
    }
    Ok(out)
}

fn regions_for(s: &Settings, input: &InputImage) -> Result<Vec<EllipseRegion>> {
    Ok(match s.eval.regions {
        RegionSource::Detect => detect_mser(&input.image, &s.eval.mser)?,
        RegionSource::Files => load_regions(input.path.with_extension(&s.eval.region_extension))?.regions,
    })
}

fn cmd_detect(s: &Settings, images: &[PathBuf]) -> Result<()> {
    for input in input_images(s, images)? {
        let regions = detect_mser(&input.image, &s.eval.mser)?;
        let path = s.out.join(format!("{}.regions", input.name));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        write_regions(&regions, &path)?;
        eprintln!("{}: {} regions -> {}", input.path.display(), regions.len(), path.display());
    }
    Ok(())
}

fn bow_dictionary(s: &Settings, method: &Method, prepared: &[PreparedImage]) -> Result<Option<Dictionary>> {
    let Method::Bow { words, sampling } = method else {
        return Ok(None);
    };
    let ds = PreparedDataset {
        sequences: prepared
            .iter()
            .map(|p| PreparedSequence { name: String::new(), reference: p.clone(), targets: Vec::new() })
            .collect(),
    };
    Ok(Some(train_dataset_dictionary(&ds, *words, sampling, &s.eval)?))
}

fn cmd_extract(s: &Settings, images: &[PathBuf], format: DumpFormat) -> Result<()> {
    let specs = s.method_specs()?;
    let inputs = input_images(s, images)?;
    let prepared = inputs
        .iter()
        .map(|input| prepare_image(&input.image, &regions_for(s, input)?, &s.eval).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    for spec in &specs {
        let dict = bow_dictionary(s, &spec.method, &prepared)?;
        for (input, img) in inputs.iter().zip(&prepared) {
            let start = Instant::now();
            let descs = describe(img, &spec.method, &s.eval.descriptor, dict.as_ref())?;
            let degenerate = descs.iter().filter(|d| d.degenerate).count();
            let records: Vec<DescriptorRecord> = img
                .regions
                .iter()
                .zip(descs)
                .map(|(region, descriptor)| DescriptorRecord { region: *region, descriptor })
                .collect();
            let ext = match format {
                DumpFormat::Text => "desc",
                DumpFormat::Binary => "dspd",
            };
            let path = s.out.join(format!("{}.{}.{ext}", input.name, spec.label));
            let bytes = match format {
                DumpFormat::Text => dump::format_text(&records).into_bytes(),
                DumpFormat::Binary => dump::encode_binary(&records),
            };
            write_file(&path, |w| w.write_all(&bytes))?;
            eprintln!(
                "{} [{}]: {} descriptors, {} regions rejected, {} degenerate, {:.1} ms",
                input.path.display(),
                spec.label,
                records.len(),
                img.dropped,
                degenerate,
                start.elapsed().as_secs_f64() * 1e3
            );
        }
    }
    Ok(())
}

fn read_dump(path: &Path) -> Result<Vec<DescriptorRecord>> {
    let bytes = fs::read(path).map_err(|e| dspsift::Error::Io { path: path.to_path_buf(), source: e })?;
    if bytes.starts_with(BINARY_MAGIC) {
        return Ok(dump::decode_binary(&bytes, path)?);
    }
    let text = String::from_utf8(bytes).map_err(|_| dspsift::Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        msg: "neither a binary nor a text descriptor dump".into(),
    })?;
    Ok(dump::parse_text(&text, path)?)
}

fn cmd_match(s: &Settings, query: &Path, target: &Path, homography: Option<&Path>) -> Result<()> {
    let a = read_dump(query)?;
    let b = read_dump(target)?;
    let metric = s.metric.unwrap_or_else(|| match a.first() {
        Some(r) if r.descriptor.kind.is_l1() => Metric::L1,
        _ => Metric::L2,
    });
    let da: Vec<_> = a.iter().map(|r| r.descriptor.clone()).collect();
    let db: Vec<_> = b.iter().map(|r| r.descriptor.clone()).collect();
    let cands = match_all(&da, &db, metric)?;
    let labels = match homography {
        Some(hp) => {
            let h = load_homography(hp)?;
            let ra: Vec<_> = a.iter().map(|r| r.region).collect();
            let rb: Vec<_> = b.iter().map(|r| r.region).collect();
            let gt = ground_truth_correspondences(&ra, &rb, &h, s.eval.iou_min, s.eval.iou_grid);
            let labels = label_matches(&cands, &gt);
            match pr_curve(&cands, &labels, gt.n_correspondences) {
                Some(c) => eprintln!("{} correspondences, AP {:.4}", gt.n_correspondences, c.ap),
                None => eprintln!("no ground-truth correspondences"),
            }
            Some(labels)
        }
        None => None,
    };
    let path = s.out.join("matches.csv");
    write_file(&path, |w| write_matches_csv(w, &cands, labels.as_deref()))?;
    eprintln!("{} candidates ({metric}) -> {}", cands.len(), path.display());
    Ok(())
}

fn load_prepared(s: &Settings) -> Result<PreparedDataset> {
    let seqs = load_dataset(s.require_dataset()?)?;
    Ok(prepare_dataset(&seqs, s.targets.as_deref(), &s.eval)?)
}

fn write_report(s: &Settings, stem: &str, report: &EvalReport) -> Result<()> {
    write_file(&s.out.join(format!("{stem}.json")), |w| write_report_json(w, report))?;
    for notice in &report.notices {
        eprintln!("notice: {notice}");
    }
    Ok(())
}

fn print_summary(report: &EvalReport) {
    for m in &report.methods {
        let map = m.map.map_or("n/a".into(), |v| format!("{v:.4}"));
        eprintln!("{}: mAP {map} over {} pairs", m.label, m.included_pairs);
    }
}

fn cmd_evaluate(s: &Settings) -> Result<()> {
    let specs = s.method_specs()?;
    let ds = load_prepared(s)?;
    let report = evaluate(&ds, &specs, &s.eval)?;
    write_report(s, "report", &report)?;
    write_file(&s.out.join("ap.csv"), |w| write_ap_csv(w, &report))?;
    write_file(&s.out.join("pr.csv"), |w| write_pr_csv(w, &report))?;
    if specs.len() >= 2 {
        let h = head_to_head(&report, &specs[0].label, &report, &specs[1].label)?;
        write_file(&s.out.join("head_to_head.csv"), |w| write_head_to_head_csv(w, &h))?;
        eprintln!("{} vs {}: relative improvement {:.4}", h.method_a, h.method_b, h.improvement);
    }
    print_summary(&report);
    Ok(())
}

fn cmd_sweep_radius(s: &Settings, radii: Option<&str>) -> Result<()> {
    let radii = match radii {
        Some(r) => parse_list::<f64>(r, "radius")?,
        None => s.sweep.radii.clone().unwrap_or_else(|| DEFAULT_RADII.to_vec()),
    };
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(config_error("radii must be a nonempty list of positive values"));
    }
    let ds = load_prepared(s)?;
    let (rows, report) = sweep_pooling_radius(&ds, &radii, s.sampling.n, &s.eval)?;
    write_file(&s.out.join("sweep_radius.csv"), |w| write_sweep_csv(w, "radius", &rows))?;
    write_report(s, "sweep_radius_report", &report)?;
    print_summary(&report);
    Ok(())
}

fn cmd_sweep_samples(s: &Settings, counts: Option<&str>) -> Result<()> {
    let counts = match counts {
        Some(c) => parse_list::<usize>(c, "sample count")?,
        None => s.sweep.counts.clone().unwrap_or_else(|| DEFAULT_COUNTS.to_vec()),
    };
    if counts.is_empty() || counts.contains(&0) {
        return Err(config_error("sample counts must be a nonempty list of positive values"));
    }
    let (l1, l2) = if s.sampling_explicit {
        (s.sampling.lambda1, s.sampling.lambda2)
    } else {
        SAMPLE_SWEEP_RANGE
    };
    let ds = load_prepared(s)?;
    let (rows, report) = sweep_sample_count(&ds, &counts, l1, l2, &s.eval)?;
    write_file(&s.out.join("sweep_samples.csv"), |w| write_sweep_csv(w, "n", &rows))?;
    write_report(s, "sweep_samples_report", &report)?;
    print_summary(&report);
    Ok(())
}

fn cmd_lab_ridge(s: &Settings, trials: usize) -> Result<()> {
    let mut summary = String::from("seed,sigma_star,tau_star,tv_raw,tv_antialiased,width_raw,width_antialiased\n");
    for t in 0..trials {
        let seed = s.eval.seed + t as u64;
        let trial = ridge_trial(&s.ridge, seed)?;
        summary.push_str(&format!(
            "{seed},{},{},{},{},{},{}\n",
            trial.sigma_star,
            trial.tau_star,
            trial.tv_raw(),
            trial.tv_antialiased(),
            trial.width_raw(),
            trial.width_antialiased()
        ));
        if t > 0 {
            continue;
        }
        let surf = &trial.surface;
        write_file(&s.out.join("ridge_surface.csv"), |w| {
            writeln!(w, "sigma,tau,energy")?;
            for (sigma, row) in surf.scales.iter().zip(&surf.energy) {
                for (tau, e) in surf.translations.iter().zip(row) {
                    writeln!(w, "{sigma},{tau},{e}")?;
                }
            }
            Ok(())
        })?;
        write_file(&s.out.join("ridge.csv"), |w| {
            writeln!(w, "sigma,energy")?;
            for (sigma, e) in trial.fine.scales.iter().zip(&trial.fine.energy) {
                writeln!(w, "{sigma},{e}")?;
            }
            Ok(())
        })?;
        write_file(&s.out.join("ridge_coarse.csv"), |w| {
            writeln!(w, "sigma,raw,antialiased")?;
            for ((sigma, raw), aa) in trial.coarse.scales.iter().zip(&trial.coarse.energy).zip(&trial.antialiased.energy) {
                writeln!(w, "{sigma},{raw},{aa}")?;
            }
            Ok(())
        })?;
        eprintln!(
            "planted sigma {} tau {}; fine-grid minimum at sigma {}",
            trial.sigma_star,
            trial.tau_star,
            trial.fine.scales[trial.fine.argmin()]
        );
    }
    write_file(&s.out.join("ridge_trials.csv"), |w| w.write_all(summary.as_bytes()))
}

const SPECIFICITY_LENGTH: usize = 401;

fn cmd_lab_specificity(s: &Settings, sigma_star: f64, background: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.eval.seed);
    let noise = smooth_noise(SPECIFICITY_LENGTH, 3.0, &mut rng);
    let center = SPECIFICITY_LENGTH / 2;
    let samples = (0..SPECIFICITY_LENGTH)
        .map(|i| {
            let x = i as f64 - center as f64;
            (-x * x / (2.0 * sigma_star * sigma_star)).exp() + background * noise[i]
        })
        .collect();
    let f = Signal1D::unit(samples)?;
    let scales = linspace(1.0, 20.0, 77);
    let c = specificity_curves(&f, center, &scales, sigma_star)?;
    write_file(&s.out.join("specificity.csv"), |w| {
        writeln!(w, "sigma,response,change")?;
        for ((sigma, r), d) in c.scales.iter().zip(&c.detector_response).zip(&c.descriptor_change) {
            writeln!(w, "{sigma},{r},{d}")?;
        }
        Ok(())
    })?;
    eprintln!("FWHM: detector response {:.3}, descriptor change {:.3}", c.response_fwhm, c.change_fwhm);
    Ok(())
}

const POOLED_LENGTH: usize = 256;

fn cmd_lab_pooledhist(s: &Settings, bins: usize, radius: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.eval.seed);
    let f = Signal1D::unit(smooth_noise(POOLED_LENGTH, 2.0, &mut rng))?;
    let h = pooled_histogram(&f, POOLED_LENGTH / 2, radius, bins)?;
    write_file(&s.out.join("pooled_hist.csv"), |w| {
        writeln!(w, "bin,center,mass")?;
        for (k, m) in h.histogram.iter().enumerate() {
            writeln!(w, "{k},{},{m}", h.bin_center(k))?;
        }
        Ok(())
    })?;
    write_file(&s.out.join("pooled_hist_summary.csv"), |w| {
        writeln!(w, "mean,box_mean,bin_width")?;
        writeln!(w, "{},{},{}", h.mean, h.box_mean, h.bin_width())
    })?;
    eprintln!("histogram mean {:.6}, box-filtered value {:.6}", h.mean, h.box_mean);
    Ok(())
}
