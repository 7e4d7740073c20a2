use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

use dspsift::descriptor::DescriptorConfig;
use dspsift::detector::MserParams;
use dspsift::eval::{EvalConfig, Method, MethodSpec, RegionSource, DEFAULT_BOW_WORDS};
use dspsift::frame::{SizeSampling, SizeSpacing};
use dspsift::matching::Metric;
use dspsift::samplinglab::RidgeExperiment;

/// Invalid configuration; exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// TOML config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset root: one sequence directory or a directory of sequences.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Region source: run the detector or read `<image stem>.regions` files.
    #[arg(long, global = true, value_parser = ["detect", "files"])]
    pub regions: Option<String>,
    /// Descriptor method(s), comma separated: sift, dsp-sift, sift-l, raw-patch, bow.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[arg(long, global = true)]
    pub lambda1: Option<f64>,
    #[arg(long, global = true)]
    pub lambda2: Option<f64>,
    /// Number of pooled domain sizes.
    #[arg(long, global = true)]
    pub nsizes: Option<usize>,
    #[arg(long, global = true)]
    pub clamp: Option<f64>,
    #[arg(long, global = true)]
    pub dilation: Option<f64>,
    #[arg(long = "patch-base", global = true)]
    pub patch_base: Option<usize>,
    /// Distance: l2 or l1 (default l2, l1 for bow).
    #[arg(long, global = true)]
    pub metric: Option<String>,
    #[arg(long = "iou-min", global = true)]
    pub iou_min: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub n: Option<usize>,
    pub spacing: Option<SizeSpacing>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub radii: Option<Vec<f64>>,
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub regions: Option<String>,
    pub region_extension: Option<String>,
    pub method: Option<String>,
    pub metric: Option<String>,
    pub clamp: Option<f64>,
    pub dilation: Option<f64>,
    pub patch_base: Option<usize>,
    pub iou_min: Option<f64>,
    pub iou_grid: Option<usize>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub targets: Option<Vec<usize>>,
    pub bow_words: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingSection,
    pub mser: Option<MserParams>,
    #[serde(default)]
    pub sweep: SweepSection,
    pub ridge: Option<RidgeExperiment>,
}

pub fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Fully resolved settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Settings {
    pub dataset: Option<PathBuf>,
    pub eval: EvalConfig,
    pub sampling: SizeSampling,
    /// Whether the pooling interval came from a flag or the file.
    pub sampling_explicit: bool,
    pub methods: Vec<String>,
    pub metric: Option<Metric>,
    pub bow_words: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub targets: Option<Vec<usize>>,
    pub sweep: SweepSection,
    pub ridge: RidgeExperiment,
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let pick = |flag: Option<f64>, f: Option<f64>| flag.or(f);

        let mut eval = EvalConfig::default();
        let regions = args.regions.clone().or(file.regions.clone());
        if let Some(r) = regions {
            eval.regions = match r.as_str() {
                "detect" => RegionSource::Detect,
                "files" => RegionSource::Files,
                other => return Err(config_error(format!("unknown region source '{other}'"))),
            };
        }
        if let Some(ext) = file.region_extension.clone() {
            eval.region_extension = ext;
        }
        eval.descriptor = DescriptorConfig {
            patch_base: args.patch_base.or(file.patch_base).unwrap_or(eval.descriptor.patch_base),
            clamp: pick(args.clamp, file.clamp).unwrap_or(eval.descriptor.clamp),
        };
        eval.dilation = pick(args.dilation, file.dilation).unwrap_or(eval.dilation);
        eval.iou_min = pick(args.iou_min, file.iou_min).unwrap_or(eval.iou_min);
        eval.iou_grid = file.iou_grid.unwrap_or(eval.iou_grid);
        eval.seed = args.seed.or(file.seed).unwrap_or(0);
        if let Some(m) = file.mser {
            eval.mser = m;
        }
        eval.validate().map_err(|e| config_error(e.to_string()))?;

        let defaults = SizeSampling::default();
        let l1 = pick(args.lambda1, file.sampling.lambda1);
        let l2 = pick(args.lambda2, file.sampling.lambda2);
        let n = args.nsizes.or(file.sampling.n);
        let sampling = SizeSampling {
            lambda1: l1.unwrap_or(defaults.lambda1),
            lambda2: l2.unwrap_or(defaults.lambda2),
            n: n.unwrap_or(defaults.n),
            spacing: file.sampling.spacing.unwrap_or(defaults.spacing),
            density: defaults.density,
        };
        sampling.validate().map_err(|e| config_error(e.to_string()))?;

        let methods: Vec<String> = args
            .method
            .clone()
            .or(file.method.clone())
            .unwrap_or_else(|| "dsp-sift".into())
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if methods.is_empty() {
            return Err(config_error("no descriptor method given"));
        }
        let metric = args
            .metric
            .clone()
            .or(file.metric.clone())
            .map(|m| m.parse::<Metric>().map_err(|e| config_error(e.to_string())))
            .transpose()?;
        let bow_words = file.bow_words.unwrap_or(DEFAULT_BOW_WORDS);
        if bow_words == 0 {
            return Err(config_error("bow_words must be positive"));
        }

        let dataset = args.dataset.clone().or(file.dataset.clone());
        if let Some(d) = &dataset {
            if !d.exists() {
                return Err(config_error(format!("dataset path {} does not exist", d.display())));
            }
        }
        if let Some(t) = &file.targets {
            if t.iter().any(|&k| k < 2) {
                return Err(config_error("targets are 1-based image numbers starting at 2"));
            }
        }
        let settings = Self {
            dataset,
            eval,
            sampling,
            sampling_explicit: l1.is_some() || l2.is_some() || n.is_some(),
            methods,
            metric,
            bow_words,
            jobs: args.jobs.or(file.jobs).unwrap_or(0),
            out: args.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            targets: file.targets.clone(),
            sweep: file.sweep.clone(),
            ridge: file.ridge.clone().unwrap_or_default(),
        };
        for m in &settings.methods {
            settings.method_spec(m)?;
        }
        Ok(settings)
    }

    pub fn method_spec(&self, name: &str) -> Result<MethodSpec> {
        let method = Method::from_name(name, self.sampling, self.bow_words).map_err(|e| config_error(e.to_string()))?;
        let mut spec = MethodSpec::new(method);
        if let Some(m) = self.metric {
            spec.metric = m;
        }
        Ok(spec)
    }

    pub fn method_specs(&self) -> Result<Vec<MethodSpec>> {
        self.methods.iter().map(|m| self.method_spec(m)).collect()
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        self.dataset.as_deref().ok_or_else(|| config_error("--dataset is required for this command"))
    }
}

/// Parses a comma-separated list.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| config_error(format!("invalid {what} '{t}'"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_operating_point() {
        let s = Settings::resolve(&CommonArgs::default()).unwrap();
        assert_eq!(s.sampling, SizeSampling::default());
        assert_eq!(s.eval.descriptor.clamp, 0.067);
        assert_eq!(s.eval.dilation, 3.0);
        assert_eq!(s.eval.iou_min, 0.5);
        assert_eq!(s.methods, ["dsp-sift"]);
        assert_eq!(s.method_spec("bow").unwrap().metric, Metric::L1);
        assert_eq!(s.method_spec("sift").unwrap().metric, Metric::L2);
        assert!(!s.sampling_explicit);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "dilation = 2.0\nmetric = \"l1\"\n[sampling]\nlambda1 = 0.5\nn = 4\n").unwrap();
        let args = CommonArgs { config: Some(path), dilation: Some(2.5), nsizes: Some(6), ..Default::default() };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!(s.eval.dilation, 2.5);
        assert_eq!(s.metric, Some(Metric::L1));
        assert_eq!((s.sampling.lambda1, s.sampling.n), (0.5, 6));
        assert!(s.sampling_explicit);
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        for args in [
            CommonArgs { clamp: Some(0.0), ..Default::default() },
            CommonArgs { patch_base: Some(30), ..Default::default() },
            CommonArgs { iou_min: Some(1.5), ..Default::default() },
            CommonArgs { nsizes: Some(0), ..Default::default() },
            CommonArgs { metric: Some("cosine".into()), ..Default::default() },
            CommonArgs { method: Some("sift,orb".into()), ..Default::default() },
        ] {
            let e = Settings::resolve(&args).unwrap_err();
            assert!(e.downcast_ref::<ConfigError>().is_some(), "{e}");
        }
        assert_eq!(parse_list::<f64>("0.5, 1,", "radius").unwrap(), vec![0.5, 1.0]);
        assert!(parse_list::<usize>("1,x", "count").is_err());
    }
}
