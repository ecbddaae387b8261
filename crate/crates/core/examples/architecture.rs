//! Builds the full NABLA-3 network, reports its parameter count and times
//! one forward pass over a 128×128 patch.
//!
//! cargo run --release --example architecture

use std::time::Instant;

use ganglionet::net::{NablaArchitecture, NablaNet};
use ganglionet::Tensor;

fn main() -> ganglionet::Result<()> {
    let arch = NablaArchitecture::nabla3();
    let net = NablaNet::build(arch.clone(), 42)?;
    let count = net.parameter_count();
    println!("encoder widths   {:?}", arch.encoder_widths);
    println!("decoder widths   {:?}", arch.decoder_widths);
    println!("decode levels    {}", arch.n_decode_levels);
    println!("recurrent steps  {}", arch.t_steps);
    println!("parameters       {count} ({:.2} M)", count as f64 / 1e6);
    for stream in arch.decode_streams() {
        let widths: Vec<usize> = stream.stages.iter().map(|s| s.out_channels).collect();
        println!("  stream from level {} -> {widths:?}", stream.origin_level);
    }

    let batch = Tensor::filled(&[1, 128, 128, 3], 0.5);
    let start = Instant::now();
    let out = net.forward(&batch)?;
    println!(
        "forward 1x128x128x3 -> {:?} in {:.3} s",
        out.shape(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
