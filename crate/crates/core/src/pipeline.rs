//! Pipeline stages as library calls; the `ganglionet` binary is a thin wrapper.
//!
//! Every stage reads its inputs, writes artifacts under an output directory
//! and records a run manifest naming the configuration, seed, crate version
//! and the sha256 of every input file. Manifests and artifacts carry no
//! timestamps, so identical inputs give byte-identical outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::annotation::{
    annotation_mask, augment_flips, extract_training_patches, fivefold_split, read_points_csv, ImageManifest,
    PatchPair, PointAnnotationSet,
};
use crate::config::PipelineConfig;
use crate::counting::{calibrate_cell_area, count_image, refine_mask, CountReport, CountingCalibration, RefineSpec};
use crate::error::{Error, Result};
use crate::eval::{
    count_accuracy, detection_f1, history_csv, train, CountRecord, DetectionScore, EvalReport, TrainOutcome,
};
use crate::net::{load_checkpoint_for, save_checkpoint, sha256_hex, NablaNet};
use crate::overlay::render_overlay;
use crate::raster::{load_rgb, save_rgb, BinaryMask, HpfImage, ProbabilityMap};
use crate::synth::{generate_suite, Split, Suite};
use crate::tiling::{infer_image, threshold_map};

pub const CHECKPOINT_FILE: &str = "model.gnet";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const THRESHOLD: f32 = 0.5;

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

/// Collects inputs and outputs of one stage and writes its manifest.
pub struct StageRun {
    stage: &'static str,
    out_dir: PathBuf,
    config: PipelineConfig,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
}

impl StageRun {
    pub fn new(stage: &'static str, config: &PipelineConfig, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(StageRun {
            stage,
            out_dir: out_dir.to_path_buf(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.read(path).map(|_| ())
    }

    pub fn output(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn outputs(&self) -> &[PathBuf] {
        &self.outputs
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join(format!("run-{}.json", self.stage))
    }

    pub fn finish(self) -> Result<Vec<PathBuf>> {
        let manifest = RunManifest {
            stage: self.stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config: self.config.to_text(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let path = self.manifest_path();
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let mut all = self.outputs;
        all.push(path);
        Ok(all)
    }
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One image of a suite with its annotations.
pub fn load_sample(root: &Path, id: &str, run: Option<&mut StageRun>) -> Result<(HpfImage, PointAnnotationSet)> {
    let img_path = Suite::image_path(root, id);
    let pts_path = Suite::points_path(root, id);
    let man_path = Suite::manifest_path(root, id);
    if let Some(run) = run {
        run.record_input(&img_path)?;
        run.record_input(&pts_path)?;
        run.record_input(&man_path)?;
    }
    let manifest = ImageManifest::read(&man_path)?;
    let image = load_rgb(&img_path)?;
    let points = read_points_csv(&pts_path)?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let ann = PointAnnotationSet::new(id, manifest.scan_type, points, w, h)?;
    Ok((HpfImage::new(image, manifest.scan_type), ann))
}

fn load_split(cfg: &PipelineConfig, split: Split, run: &mut StageRun) -> Result<Vec<(HpfImage, PointAnnotationSet)>> {
    let suite_path = cfg.data_dir.join(crate::synth::SUITE_MANIFEST);
    run.record_input(&suite_path)?;
    let suite = Suite::read(&cfg.data_dir)?;
    suite
        .ids(split)
        .into_iter()
        .map(|id| load_sample(&cfg.data_dir, id, Some(run)))
        .collect()
}

pub fn stage_synth(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("synth", cfg, out)?;
    let template = crate::synth::SynthSpec {
        scan_type: cfg.scan_type,
        ..cfg.synth.clone()
    };
    let suite = generate_suite(out, cfg.synth_n_train, cfg.synth_n_test, &template, cfg.seed)?;
    for e in &suite.entries {
        run.output(Path::new("images").join(format!("{}.png", e.image_id)));
        run.output(Path::new("annotations").join(format!("{}.csv", e.image_id)));
        run.output(Path::new("manifests").join(format!("{}.txt", e.image_id)));
    }
    run.output(crate::synth::SUITE_MANIFEST);
    run.finish()
}

/// Ground-truth training masks for every image in the suite.
pub fn stage_make_masks(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("make-masks", cfg, out)?;
    mkdir(&out.join("masks"))?;
    let mut samples = load_split(cfg, Split::Train, &mut run)?;
    samples.extend(load_split(cfg, Split::Test, &mut run)?);
    for (img, ann) in &samples {
        let mask = annotation_mask(&ann.points, &cfg.mask, img.width(), img.height())?;
        mask.save_png(&run.output(Path::new("masks").join(format!("{}.png", ann.image_id))))?;
    }
    run.finish()
}

/// Training patches of the training split, optionally flip-augmented.
pub fn training_patches(cfg: &PipelineConfig, samples: &[(HpfImage, PointAnnotationSet)]) -> Result<Vec<PatchPair>> {
    let mut pairs = Vec::new();
    for (img, ann) in samples {
        let mask = annotation_mask(&ann.points, &cfg.mask, img.width(), img.height())?;
        pairs.extend(extract_training_patches(&img.image, &mask, cfg.patch_stride, &ann.image_id)?);
    }
    Ok(if cfg.flips { augment_flips(&pairs) } else { pairs })
}

pub fn stage_extract_patches(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("extract-patches", cfg, out)?;
    mkdir(&out.join("patches"))?;
    let samples = load_split(cfg, Split::Train, &mut run)?;
    let pairs = training_patches(cfg, &samples)?;
    let mut index = String::from("file,mask,image_id,x,y,flip\n");
    for p in &pairs {
        let stem = format!("{}_{}_{}_{}", p.image_id, p.x, p.y, p.flip.tag());
        let img_name = Path::new("patches").join(format!("{stem}.png"));
        let mask_name = Path::new("patches").join(format!("{stem}.mask.png"));
        save_rgb(&p.image, &run.output(&img_name))?;
        p.mask.save_png(&run.output(&mask_name))?;
        index.push_str(&format!(
            "{},{},{},{},{},{}\n",
            img_name.display(),
            mask_name.display(),
            p.image_id,
            p.x,
            p.y,
            p.flip.tag()
        ));
    }
    write(&run.output("patches.csv"), &index)?;
    run.finish()
}

/// Trains on the suite's training split. With `val_fold` set, that fold's
/// images are held out for validation dice.
pub fn train_from_config(cfg: &PipelineConfig, run: &mut StageRun) -> Result<TrainOutcome> {
    let samples = load_split(cfg, Split::Train, run)?;
    let pairs = training_patches(cfg, &samples)?;
    let (train_set, val_set) = match cfg.val_fold {
        Some(f) => {
            let mut folds = fivefold_split(&pairs, cfg.seed)?;
            let fold = folds.swap_remove(f);
            let pick = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>();
            (pick(&fold.train), pick(&fold.val))
        }
        None => (pairs, Vec::new()),
    };
    log::info!("training on {} patches, validating on {}", train_set.len(), val_set.len());
    let net = NablaNet::build(cfg.architecture(), cfg.seed)?;
    let tc = crate::eval::TrainConfig {
        seed: cfg.seed,
        dilation_k: cfg.mask.dilation_k,
        ..cfg.train.clone()
    };
    train(net, &train_set, &val_set, &tc)
}

pub fn stage_train(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("train", cfg, out)?;
    let outcome = train_from_config(cfg, &mut run)?;
    save_checkpoint(&outcome.best, &run.output(CHECKPOINT_FILE), false)?;
    write(&run.output("history.csv"), &history_csv(&outcome.history))?;
    let summary = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "steps": outcome.steps,
        "first_loss": outcome.first_loss,
        "parameters": outcome.best.parameter_count(),
        "architecture": outcome.best.arch,
        "history": outcome.history,
    });
    write(
        &run.output("training.json"),
        &(serde_json::to_string_pretty(&summary).expect("json") + "\n"),
    )?;
    run.finish()
}

fn require_checkpoint(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("this stage needs a checkpoint (--checkpoint or `checkpoint =`)".into()))
}

pub fn load_model(cfg: &PipelineConfig, run: &mut StageRun) -> Result<NablaNet> {
    let path = require_checkpoint(cfg)?;
    run.record_input(path)?;
    load_checkpoint_for(path, &cfg.architecture())
}

/// Probability map and thresholded mask for one image.
pub fn segment(net: &NablaNet, image: &HpfImage, tile_batch: usize) -> Result<(ProbabilityMap, BinaryMask)> {
    let p = infer_image(&image.image, net, tile_batch)?;
    let m = threshold_map(&p, THRESHOLD);
    Ok((p, m))
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_inputs(images: &[PathBuf], cfg: &PipelineConfig, run: &mut StageRun) -> Result<Vec<(String, HpfImage)>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no input images given".into()));
    }
    images
        .iter()
        .map(|p| {
            run.record_input(p)?;
            Ok((image_id(p), HpfImage::new(load_rgb(p)?, cfg.scan_type)))
        })
        .collect()
}

pub fn stage_infer(cfg: &PipelineConfig, images: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("infer", cfg, out)?;
    let net = load_model(cfg, &mut run)?;
    for (id, img) in load_inputs(images, cfg, &mut run)? {
        let (p, m) = segment(&net, &img, cfg.tile_batch_size)?;
        p.save_png16(&run.output(format!("{id}.prob.png")))?;
        m.save_png(&run.output(format!("{id}.mask.png")))?;
    }
    run.finish()
}

/// Explicit config average, else a calibration file, else the published value.
pub fn resolve_calibration(
    cfg: &PipelineConfig,
    calibration: Option<&Path>,
    run: &mut StageRun,
) -> Result<CountingCalibration> {
    if let Some(c) = cfg.calibration_override()? {
        return Ok(c);
    }
    if let Some(path) = calibration {
        let bytes = run.read(path)?;
        let mut c: CountingCalibration = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        c.t1 = cfg.t1;
        c.t2 = cfg.t2;
        c.validate()?;
        if c.scan_type != cfg.scan_type {
            return Err(Error::Config(format!(
                "calibration {} is for {}-type scans, but scan type is {}",
                path.display(),
                c.scan_type,
                cfg.scan_type
            )));
        }
        return Ok(c);
    }
    let mut c = CountingCalibration::published(cfg.scan_type, cfg.mask.dilation_k)?;
    c.t1 = cfg.t1;
    c.t2 = cfg.t2;
    c.validate()?;
    Ok(c)
}

/// Refine, label and count one predicted mask.
pub fn count_mask(mask: &BinaryMask, calib: &CountingCalibration, refine: RefineSpec, id: &str) -> Result<CountReport> {
    let refined = refine_mask(mask, refine.k, refine.min_region_area)?;
    Ok(count_image(&refined, calib, id))
}

/// `count` stage: masks come from `mask_dir/<id>.mask.png` when given,
/// otherwise from running the checkpoint.
pub fn stage_count(
    cfg: &PipelineConfig,
    images: &[PathBuf],
    mask_dir: Option<&Path>,
    calibration: Option<&Path>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("count", cfg, out)?;
    let calib = resolve_calibration(cfg, calibration, &mut run)?;
    let net = match mask_dir {
        Some(_) => None,
        None => Some(load_model(cfg, &mut run)?),
    };
    for (id, img) in load_inputs(images, cfg, &mut run)? {
        let mask = match (&net, mask_dir) {
            (_, Some(dir)) => {
                let path = dir.join(format!("{id}.mask.png"));
                run.record_input(&path)?;
                let m = BinaryMask::load_png(&path)?;
                if m.extents() != (img.width(), img.height()) {
                    return Err(Error::Shape(format!(
                        "{}: mask {}x{} does not match image {}x{}",
                        path.display(),
                        m.width(),
                        m.height(),
                        img.width(),
                        img.height()
                    )));
                }
                m
            }
            (Some(net), None) => segment(net, &img, cfg.tile_batch_size)?.1,
            (None, None) => unreachable!("model loaded when no mask dir"),
        };
        let report = count_mask(&mask, &calib, cfg.refine, &id)?;
        write(&run.output(format!("{id}.count.json")), &(report.to_json() + "\n"))?;
        save_rgb(&render_overlay(&img.image, &report), &run.output(format!("{id}.overlay.png")))?;
        println!(
            "{id}: {} cells in {} regions ({} ganglia)",
            report.total_cells, report.total_regions, report.total_ganglia
        );
    }
    run.finish()
}

pub fn calibrate_from_config(cfg: &PipelineConfig, net: &NablaNet, run: &mut StageRun) -> Result<CountingCalibration> {
    let samples = load_split(cfg, Split::Train, run)?;
    let mut c = calibrate_cell_area(
        |img| Ok(segment(net, img, cfg.tile_batch_size)?.1),
        &samples,
        cfg.scan_type,
        cfg.mask.dilation_k,
        cfg.refine,
    )?;
    c.t1 = cfg.t1;
    c.t2 = cfg.t2;
    Ok(c)
}

pub fn stage_calibrate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("calibrate", cfg, out)?;
    let net = load_model(cfg, &mut run)?;
    let c = calibrate_from_config(cfg, &net, &mut run)?;
    write(
        &run.output(CALIBRATION_FILE),
        &(serde_json::to_string_pretty(&c).expect("json") + "\n"),
    )?;
    println!(
        "{}-type k={}: {:.1} pixels per cell",
        c.scan_type, c.dilation_k, c.avg_pixels_per_cell
    );
    run.finish()
}

/// Counts and detection scores over the suite's test split.
pub fn evaluate(
    cfg: &PipelineConfig,
    net: &NablaNet,
    calib: &CountingCalibration,
    samples: &[(HpfImage, PointAnnotationSet)],
) -> Result<(EvalReport, Vec<CountReport>)> {
    let mut counts = Vec::new();
    let mut detection_per_image = Vec::new();
    let mut reports = Vec::new();
    for (img, ann) in samples {
        let (_, mask) = segment(net, img, cfg.tile_batch_size)?;
        let report = count_mask(&mask, calib, cfg.refine, &ann.image_id)?;
        counts.push(CountRecord {
            image_id: ann.image_id.clone(),
            manual: ann.points.len() as u64,
            predicted: report.total_cells,
        });
        detection_per_image.push((
            ann.image_id.clone(),
            detection_f1(&report.detection_slots(), &ann.points, cfg.match_radius),
        ));
        reports.push(report);
    }
    let accuracy = count_accuracy(&counts)?;
    let scores: Vec<DetectionScore> = detection_per_image.iter().map(|(_, s)| *s).collect();
    Ok((
        EvalReport {
            counts,
            accuracy,
            detection: DetectionScore::combine(&scores),
            detection_per_image,
            match_radius: cfg.match_radius,
        },
        reports,
    ))
}

pub fn stage_eval(cfg: &PipelineConfig, calibration: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = StageRun::new("eval", cfg, out)?;
    let net = load_model(cfg, &mut run)?;
    let calib = resolve_calibration(cfg, calibration, &mut run)?;
    let samples = load_split(cfg, Split::Test, &mut run)?;
    let (report, _) = evaluate(cfg, &net, &calib, &samples)?;
    write(&run.output("eval.json"), &(report.to_json() + "\n"))?;
    let mut csv = String::from("image_id,manual,predicted,accuracy,precision,recall,f1\n");
    for (c, (_, d)) in report.counts.iter().zip(&report.detection_per_image) {
        let acc = report
            .accuracy
            .per_image
            .iter()
            .find(|(id, _)| *id == c.image_id)
            .and_then(|(_, a)| *a)
            .map_or(String::new(), |a| format!("{a:.6}"));
        csv.push_str(&format!(
            "{},{},{},{acc},{:.6},{:.6},{:.6}\n",
            c.image_id, c.manual, c.predicted, d.precision, d.recall, d.f1
        ));
    }
    write(&run.output("eval.csv"), &csv)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "aggregate count accuracy {}  mean per-image {}  detection F1 {:.4}",
        fmt(report.accuracy.aggregate),
        fmt(report.accuracy.mean_per_image),
        report.detection.f1
    );
    run.finish()
}
