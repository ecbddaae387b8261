//! Renders one H-type and one N-type synthetic field, then builds the
//! annotation mask at every dilation kernel and reports its area.
//!
//! cargo run --release --example synth_masks -- [out_dir]

use std::path::PathBuf;

use ganglionet::annotation::{annotation_mask, write_points_csv, MaskSpec};
use ganglionet::raster::save_rgb;
use ganglionet::synth::{generate_hpf, SynthSpec};
use ganglionet::ScanType;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/synth_masks".into()));
    std::fs::create_dir_all(&out)?;
    for (scan_type, seed) in [(ScanType::H, 3), (ScanType::N, 4)] {
        let spec = SynthSpec {
            scan_type,
            width: 640,
            height: 480,
            count_min: 15,
            count_max: 15,
            seed,
            ..SynthSpec::default()
        };
        let id = format!("{scan_type}_field").to_lowercase();
        let hpf = generate_hpf(&spec, &id)?;
        let points = &hpf.annotations.points;
        save_rgb(&hpf.image.image, &out.join(format!("{id}.png")))?;
        write_points_csv(&out.join(format!("{id}.csv")), points)?;
        println!("{id}: {} nuclei", points.len());
        for k in [5, 7, 9, 11, 13] {
            let mask = annotation_mask(points, &MaskSpec::with_kernel(k)?, spec.width, spec.height)?;
            println!("  k={k:2}  {:6} mask pixels", mask.count_ones());
            mask.save_png(&out.join(format!("{id}.k{k}.png")))?;
        }
    }
    println!("written to {}", out.display());
    Ok(())
}
