//! Counts cells in the ground-truth mask of an N-type synthetic field with
//! clusters, calibrating on a second field, and draws the numbered overlay.
//!
//! cargo run --release --example count_overlay -- [out.png]

use ganglionet::annotation::{annotation_mask, MaskSpec};
use ganglionet::counting::{calibrate_from_masks, count_image};
use ganglionet::overlay::render_overlay;
use ganglionet::raster::save_rgb;
use ganglionet::synth::{generate_hpf, SynthSpec};
use ganglionet::ScanType;

fn main() -> ganglionet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/count_overlay.png".into());
    let spec = SynthSpec {
        scan_type: ScanType::N,
        width: 1024,
        height: 768,
        count_min: 30,
        count_max: 30,
        cluster_probability: 0.3,
        ..SynthSpec::default()
    };
    let mask_spec = MaskSpec::default();
    let field = |seed| -> ganglionet::Result<_> {
        let hpf = generate_hpf(&SynthSpec { seed, ..spec.clone() }, &format!("field_{seed}"))?;
        let mask = annotation_mask(&hpf.annotations.points, &mask_spec, spec.width, spec.height)?;
        Ok((hpf, mask))
    };

    let (train, train_mask) = field(1)?;
    let calib = calibrate_from_masks(
        &[(train_mask, train.annotations.points.clone())],
        spec.scan_type,
        mask_spec.dilation_k,
    )?;
    println!("{:.1} pixels per cell", calib.avg_pixels_per_cell);

    let (test, test_mask) = field(2)?;
    let report = count_image(&test_mask, &calib, "field_2");
    println!("label   area  cells  ganglia");
    for r in &report.regions {
        println!("{:5} {:6} {:6}  {}", r.label, r.area, r.cell_count, r.is_ganglia);
    }
    println!(
        "{} cells in {} regions ({} ganglia); {} annotated",
        report.total_cells,
        report.total_regions,
        report.total_ganglia,
        test.annotations.points.len()
    );
    save_rgb(&render_overlay(&test.image.image, &report), std::path::Path::new(&out))?;
    println!("overlay written to {out}");
    Ok(())
}
