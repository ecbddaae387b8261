//! Overfits a reduced-width network on eight synthetic patches and prints
//! the dice curve.
//!
//! cargo run --release --example overfit -- [base_width] [max_steps] [lr]

use std::time::Instant;

use ganglionet::annotation::{annotation_mask, extract_training_patches, MaskSpec};
use ganglionet::eval::{train, TrainConfig};
use ganglionet::net::{NablaArchitecture, NablaNet};
use ganglionet::synth::{generate_hpf, SynthSpec};

fn main() -> ganglionet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let base: usize = args.first().map_or(4, |s| s.parse().expect("base width"));
    let max_steps: usize = args.get(1).map_or(2000, |s| s.parse().expect("max steps"));
    let lr: f64 = args.get(2).map_or(3e-3, |s| s.parse().expect("learning rate"));

    let spec = SynthSpec {
        width: 512,
        height: 384,
        count_min: 10,
        count_max: 10,
        seed: 11,
        ..SynthSpec::default()
    };
    let hpf = generate_hpf(&spec, "overfit")?;
    let mask = annotation_mask(&hpf.annotations.points, &MaskSpec::default(), 512, 384)?;
    let mut patches = extract_training_patches(&hpf.image.image, &mask, 128, "overfit")?;
    patches.truncate(8);
    println!("{} patches", patches.len());

    let arch = NablaArchitecture::with_base_width(base, 6, 3);
    let net = NablaNet::build(arch, 7)?;
    println!("parameters {}", net.parameter_count());
    let config = TrainConfig {
        epochs: max_steps,
        batch_size: 8,
        learning_rate: lr,
        seed: 7,
        max_steps: Some(max_steps),
        stop_at_train_dice: Some(0.95),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(net, &patches, &[], &config)?;
    for r in outcome.history.iter().step_by(10) {
        println!("step {:5} loss {:.4} dice {:.4}", r.steps, r.mean_loss, r.train_dice);
    }
    let last = outcome.history.last().expect("one epoch");
    println!(
        "final step {} dice {:.4} in {:.1} s",
        last.steps,
        last.train_dice,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
