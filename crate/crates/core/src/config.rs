//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; missing keys keep their defaults. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::annotation::{MaskSpec, ALLOWED_KERNELS};
use crate::counting::{CountingCalibration, RefineSpec, DEFAULT_T1, DEFAULT_T2};
use crate::error::{Error, Result};
use crate::eval::{TrainConfig, DEFAULT_MATCH_RADIUS};
use crate::net::NablaArchitecture;
use crate::raster::ScanType;
use crate::synth::SynthSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub scan_type: ScanType,
    pub mask: MaskSpec,
    /// Window stride for training patch extraction.
    pub patch_stride: usize,
    pub flips: bool,
    pub arch_base_width: usize,
    pub arch_levels: usize,
    pub arch_decode_levels: usize,
    pub train: TrainConfig,
    /// Fold whose validation images are held out during `train`; `None` trains on everything.
    pub val_fold: Option<usize>,
    pub tile_batch_size: usize,
    pub refine: RefineSpec,
    /// Overrides the calibrated or published average when set.
    pub avg_pixels_per_cell: Option<f64>,
    pub t1: usize,
    pub t2: usize,
    pub match_radius: f64,
    pub synth: SynthSpec,
    pub synth_n_train: usize,
    pub synth_n_test: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            seed: 0,
            scan_type: ScanType::H,
            mask: MaskSpec::default(),
            patch_stride: 64,
            flips: true,
            arch_base_width: 16,
            arch_levels: 6,
            arch_decode_levels: 3,
            train: TrainConfig::default(),
            val_fold: None,
            tile_batch_size: 8,
            refine: RefineSpec::default(),
            avg_pixels_per_cell: None,
            t1: DEFAULT_T1,
            t2: DEFAULT_T2,
            match_radius: DEFAULT_MATCH_RADIUS,
            synth: SynthSpec::default(),
            synth_n_train: 10,
            synth_n_test: 2,
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn parse_opt<T: FromStr>(v: &str) -> std::result::Result<Option<T>, ()> {
    if v == "none" {
        Ok(None)
    } else {
        v.parse().map(Some).map_err(|_| ())
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, ()> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(()),
    }
}

impl PipelineConfig {
    pub fn architecture(&self) -> NablaArchitecture {
        NablaArchitecture::with_base_width(self.arch_base_width, self.arch_levels, self.arch_decode_levels)
    }

    /// The effective calibration when an explicit average is configured.
    pub fn calibration_override(&self) -> Result<Option<CountingCalibration>> {
        self.avg_pixels_per_cell
            .map(|avg| {
                let mut c = CountingCalibration::new(self.scan_type, self.mask.dilation_k, avg)?;
                c.t1 = self.t1;
                c.t2 = self.t2;
                c.validate()?;
                Ok(c)
            })
            .transpose()
    }

    /// `(key, value)` in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint", opt(&self.checkpoint.as_ref().map(|p| p.display().to_string()))),
            ("seed", self.seed.to_string()),
            ("scan_type", self.scan_type.to_string()),
            ("mask.sigma", self.mask.sigma.to_string()),
            ("mask.dilation_k", self.mask.dilation_k.to_string()),
            ("mask.threshold", self.mask.threshold.to_string()),
            ("patch.stride", self.patch_stride.to_string()),
            ("patch.flips", self.flips.to_string()),
            ("arch.base_width", self.arch_base_width.to_string()),
            ("arch.levels", self.arch_levels.to_string()),
            ("arch.decode_levels", self.arch_decode_levels.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.max_steps", opt(&self.train.max_steps)),
            ("train.stop_at_train_dice", opt(&self.train.stop_at_train_dice)),
            ("train.val_fold", opt(&self.val_fold)),
            ("infer.tile_batch_size", self.tile_batch_size.to_string()),
            ("count.refine_k", self.refine.k.to_string()),
            ("count.min_region_area", self.refine.min_region_area.to_string()),
            ("count.avg_pixels_per_cell", opt(&self.avg_pixels_per_cell)),
            ("count.t1", self.t1.to_string()),
            ("count.t2", self.t2.to_string()),
            ("eval.match_radius", self.match_radius.to_string()),
            ("synth.n_train", self.synth_n_train.to_string()),
            ("synth.n_test", self.synth_n_test.to_string()),
            ("synth.width", s.width.to_string()),
            ("synth.height", s.height.to_string()),
            ("synth.count_min", s.count_min.to_string()),
            ("synth.count_max", s.count_max.to_string()),
            ("synth.radius_mean", s.radius_mean.to_string()),
            ("synth.radius_std", s.radius_std.to_string()),
            ("synth.cluster_probability", s.cluster_probability.to_string()),
            ("synth.cluster_size_min", s.cluster_size_min.to_string()),
            ("synth.cluster_size_max", s.cluster_size_max.to_string()),
            ("synth.min_separation", s.min_separation.to_string()),
            ("synth.stain_jitter", s.stain_jitter.to_string()),
            ("synth.max_attempts", s.max_attempts.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# ganglionet pipeline configuration\n");
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), ()> {
        fn p<T: FromStr>(v: &str) -> std::result::Result<T, ()> {
            v.parse().map_err(|_| ())
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = parse_opt::<String>(v)?.map(PathBuf::from),
            "seed" => self.seed = p(v)?,
            "scan_type" => self.scan_type = p(v)?,
            "mask.sigma" => self.mask.sigma = p(v)?,
            "mask.dilation_k" => self.mask.dilation_k = p(v)?,
            "mask.threshold" => self.mask.threshold = p(v)?,
            "patch.stride" => self.patch_stride = p(v)?,
            "patch.flips" => self.flips = parse_bool(v)?,
            "arch.base_width" => self.arch_base_width = p(v)?,
            "arch.levels" => self.arch_levels = p(v)?,
            "arch.decode_levels" => self.arch_decode_levels = p(v)?,
            "train.epochs" => self.train.epochs = p(v)?,
            "train.batch_size" => self.train.batch_size = p(v)?,
            "train.learning_rate" => self.train.learning_rate = p(v)?,
            "train.max_steps" => self.train.max_steps = parse_opt(v)?,
            "train.stop_at_train_dice" => self.train.stop_at_train_dice = parse_opt(v)?,
            "train.val_fold" => self.val_fold = parse_opt(v)?,
            "infer.tile_batch_size" => self.tile_batch_size = p(v)?,
            "count.refine_k" => self.refine.k = p(v)?,
            "count.min_region_area" => self.refine.min_region_area = p(v)?,
            "count.avg_pixels_per_cell" => self.avg_pixels_per_cell = parse_opt(v)?,
            "count.t1" => self.t1 = p(v)?,
            "count.t2" => self.t2 = p(v)?,
            "eval.match_radius" => self.match_radius = p(v)?,
            "synth.n_train" => self.synth_n_train = p(v)?,
            "synth.n_test" => self.synth_n_test = p(v)?,
            "synth.width" => self.synth.width = p(v)?,
            "synth.height" => self.synth.height = p(v)?,
            "synth.count_min" => self.synth.count_min = p(v)?,
            "synth.count_max" => self.synth.count_max = p(v)?,
            "synth.radius_mean" => self.synth.radius_mean = p(v)?,
            "synth.radius_std" => self.synth.radius_std = p(v)?,
            "synth.cluster_probability" => self.synth.cluster_probability = p(v)?,
            "synth.cluster_size_min" => self.synth.cluster_size_min = p(v)?,
            "synth.cluster_size_max" => self.synth.cluster_size_max = p(v)?,
            "synth.min_separation" => self.synth.min_separation = p(v)?,
            "synth.stain_jitter" => self.synth.stain_jitter = p(v)?,
            "synth.max_attempts" => self.synth.max_attempts = p(v)?,
            _ => return Err(()),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let known: Vec<&str> = cfg.entries().iter().map(|(k, _)| *k).collect();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !known.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", i + 1)));
            }
            cfg.set(k, v)
                .map_err(|_| Error::Config(format!("line {}: invalid value {v:?} for {k}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Numeric range checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.mask.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.architecture()
            .validate()
            .map_err(|e| Error::Config(format!("architecture: {e}")))?;
        if self.patch_stride == 0 || self.tile_batch_size == 0 {
            return bad("patch.stride and infer.tile_batch_size must be positive".into());
        }
        if !ALLOWED_KERNELS.contains(&self.refine.k) {
            return bad(format!("count.refine_k must be one of {ALLOWED_KERNELS:?}, got {}", self.refine.k));
        }
        if self.t1 >= self.t2 {
            return bad(format!("count.t1 ({}) must be below count.t2 ({})", self.t1, self.t2));
        }
        if self.avg_pixels_per_cell.is_some_and(|a| !(a > 0.0)) {
            return bad("count.avg_pixels_per_cell must be positive".into());
        }
        if !(self.match_radius > 0.0) {
            return bad("eval.match_radius must be positive".into());
        }
        if self.val_fold.is_some_and(|f| f >= crate::annotation::N_FOLDS) {
            return bad(format!("train.val_fold must be below {}", crate::annotation::N_FOLDS));
        }
        if self.synth_n_train < 5 {
            return bad("synth.n_train must be at least 5".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn overrides_and_comments() {
        let c = PipelineConfig::parse(
            "# comment\n\nseed = 9\nscan_type = n\nmask.dilation_k=11\ntrain.max_steps = 50\ncount.avg_pixels_per_cell = 412.5\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.scan_type, ScanType::N);
        assert_eq!(c.mask.dilation_k, 11);
        assert_eq!(c.train.max_steps, Some(50));
        let calib = c.calibration_override().unwrap().unwrap();
        assert_eq!(calib.avg_pixels_per_cell, 412.5);
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let e = PipelineConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = PipelineConfig::parse("seed = x\n").unwrap_err();
        assert!(e.to_string().contains("invalid value"), "{e}");
        assert!(PipelineConfig::parse("mask.dilation_k = 8\n").is_err());
        assert!(PipelineConfig::parse("count.t1 = 2000\n").is_err());
        assert!(PipelineConfig::parse("no equals sign\n").is_err());
    }
}
