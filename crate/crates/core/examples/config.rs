//! Prints the default pipeline configuration as a key = value file, then
//! parses an edited copy and a faulty one.
//!
//! cargo run --release --example config

use ganglionet::config::PipelineConfig;

fn main() -> ganglionet::Result<()> {
    let text = PipelineConfig::default().to_text();
    print!("{text}");

    let edited = text.replace("scan_type = H", "scan_type = N").replace("seed = 0", "seed = 9");
    let cfg = PipelineConfig::parse(&edited)?;
    println!("\nedited: scan type {}, seed {}", cfg.scan_type, cfg.seed);

    for bad in ["mask.dilation_k = 4\n", "train.learning_rat = 0.1\n", "seed\n"] {
        match PipelineConfig::parse(bad).and_then(|c| c.validate().map(|_| c)) {
            Ok(_) => println!("{:?}: accepted", bad.trim()),
            Err(e) => println!("{:?}: {e}", bad.trim()),
        }
    }
    Ok(())
}
