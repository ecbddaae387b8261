//! Synthetic suite → training → calibration → test-split counting and detection.
//!
//! cargo run --release --example end_to_end -- [out_dir] [epochs] [lr]

use std::path::PathBuf;
use std::time::Instant;

use ganglionet::config::PipelineConfig;
use ganglionet::pipeline::{calibrate_from_config, evaluate, load_sample, stage_synth, train_from_config, StageRun};
use ganglionet::synth::{Split, Suite};
use ganglionet::ScanType;

fn main() -> ganglionet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("target/end_to_end", String::as_str));
    let epochs: usize = args.get(1).map_or(50, |s| s.parse().expect("epochs"));
    let lr: f64 = args.get(2).map_or(1e-3, |s| s.parse().expect("learning rate"));

    let mut cfg = PipelineConfig {
        data_dir: out.join("data"),
        out_dir: out.clone(),
        seed: 5,
        scan_type: ScanType::H,
        patch_stride: 128,
        flips: false,
        arch_base_width: 4,
        tile_batch_size: 8,
        ..PipelineConfig::default()
    };
    cfg.synth.width = 512;
    cfg.synth.height = 384;
    cfg.synth.count_min = 12;
    cfg.synth.count_max = 14;
    cfg.synth.cluster_probability = 0.0;
    cfg.synth.min_separation = 48.0;
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 8;
    cfg.train.learning_rate = lr;

    let t = Instant::now();
    stage_synth(&cfg, &cfg.data_dir)?;
    let mut run = StageRun::new("example", &cfg, &out)?;
    let outcome = train_from_config(&cfg, &mut run)?;
    println!("trained {} steps in {:.1} s", outcome.steps, t.elapsed().as_secs_f64());

    let calib = calibrate_from_config(&cfg, &outcome.best, &mut run)?;
    println!("calibrated {:.1} pixels per cell", calib.avg_pixels_per_cell);

    let suite = Suite::read(&cfg.data_dir)?;
    let test: Vec<_> = suite
        .ids(Split::Test)
        .into_iter()
        .map(|id| load_sample(&cfg.data_dir, id, None))
        .collect::<ganglionet::Result<_>>()?;
    let (report, _) = evaluate(&cfg, &outcome.best, &calib, &test)?;
    for c in &report.counts {
        println!("{}: manual {} predicted {}", c.image_id, c.manual, c.predicted);
    }
    println!(
        "aggregate accuracy {:?}  detection F1 {:.4}  total {:.1} s",
        report.accuracy.aggregate,
        report.detection.f1,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
