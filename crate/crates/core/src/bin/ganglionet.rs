use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ganglionet::config::PipelineConfig;
use ganglionet::pipeline;
use ganglionet::{Error, Result, ScanType};

/// Ganglion cell segmentation, counting and evaluation.
#[derive(Parser, Debug)]
#[command(name = "ganglionet", version)]
struct Cli {
    /// Pipeline configuration (key = value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_scan)]
    scan_type: Option<ScanType>,
    /// Mask dilation kernel: 5, 7, 9, 11 or 13.
    #[arg(long, global = true)]
    kernel: Option<usize>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory (a synthetic suite layout).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/test suite (written to --out, else the data directory).
    Synth,
    /// Ground-truth masks for every suite image.
    MakeMasks,
    /// Training patches of the training split.
    ExtractPatches,
    /// Train and write the best checkpoint with its dice history.
    Train,
    /// Probability maps and thresholded masks.
    Infer { images: Vec<PathBuf> },
    /// Count report JSON and overlay PNG per image.
    Count {
        images: Vec<PathBuf>,
        /// Read `<id>.mask.png` from here instead of running the network.
        #[arg(long)]
        mask_dir: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Count accuracy and detection F1 on the test split.
    Eval {
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Average single-cell region area on the training split.
    Calibrate,
}

fn parse_scan(s: &str) -> std::result::Result<ScanType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn configure(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.scan_type {
        cfg.scan_type = t;
    }
    if let Some(k) = cli.kernel {
        cfg.mask.dilation_k = k;
    }
    if let Some(c) = &cli.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = &cli.data {
        cfg.data_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_threads() -> Result<()> {
    let Ok(v) = std::env::var("GANGLIONET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("GANGLIONET_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    set_threads()?;
    let cfg = configure(&cli)?;
    let out = cfg.out_dir.clone();
    match &cli.command {
        Command::Synth => pipeline::stage_synth(&cfg, cli.out.as_deref().unwrap_or(&cfg.data_dir)),
        Command::MakeMasks => pipeline::stage_make_masks(&cfg, &out),
        Command::ExtractPatches => pipeline::stage_extract_patches(&cfg, &out),
        Command::Train => pipeline::stage_train(&cfg, &out),
        Command::Infer { images } => pipeline::stage_infer(&cfg, images, &out),
        Command::Count {
            images,
            mask_dir,
            calibration,
        } => pipeline::stage_count(&cfg, images, mask_dir.as_deref(), calibration.as_deref(), &out),
        Command::Eval { calibration } => pipeline::stage_eval(&cfg, calibration.as_deref(), &out),
        Command::Calibrate => pipeline::stage_calibrate(&cfg, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    match run(cli) {
        Ok(outputs) => {
            println!(
                "wrote {} artifacts in {:.2} s",
                outputs.len(),
                start.elapsed().as_secs_f64()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (code, name) = e.exit_code();
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: code={name} message={message}");
            ExitCode::from(code as u8)
        }
    }
}
