//! Plans the tiles of a full 2560×1920 field, checks the split/merge round
//! trip, and times whole-field inference with a reduced network.
//!
//! cargo run --release --example tiling -- [base_width] [tile_batch]

use std::time::Instant;

use ganglionet::net::{NablaArchitecture, NablaNet};
use ganglionet::synth::{generate_hpf, SynthSpec};
use ganglionet::tiling::{infer_image, merge_tiles, plan_tiles, split_map, threshold_map};

fn main() -> ganglionet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base: usize = args.first().map_or(4, |s| s.parse().expect("base width"));
    let batch: usize = args.get(1).map_or(8, |s| s.parse().expect("tile batch"));

    let hpf = generate_hpf(&SynthSpec::default(), "field")?;
    let (w, h) = (hpf.image.width(), hpf.image.height());
    let plan = plan_tiles(w, h, 128)?;
    println!(
        "{w}x{h}: {} tiles in {} rows x {} cols, padding {} right {} bottom",
        plan.tiles.len(),
        plan.rows,
        plan.cols,
        plan.pad_right,
        plan.pad_bottom
    );

    let net = NablaNet::build(NablaArchitecture::with_base_width(base, 6, 3), 1)?;
    let start = Instant::now();
    let p = infer_image(&hpf.image.image, &net, batch)?;
    println!(
        "inference with {} parameters in {:.1} s",
        net.parameter_count(),
        start.elapsed().as_secs_f64()
    );
    let back = merge_tiles(&plan, &split_map(&p, &plan))?;
    println!("split/merge bit-exact: {}", back.data() == p.data());
    println!("{} pixels above 0.5", threshold_map(&p, 0.5).count_ones());
    Ok(())
}
