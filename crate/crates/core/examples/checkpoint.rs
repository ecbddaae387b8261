//! Saves a network, reloads it, and shows how damaged files are rejected.
//!
//! cargo run --release --example checkpoint

use ganglionet::net::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, NablaArchitecture, NablaNet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = NablaNet::build(NablaArchitecture::with_base_width(4, 6, 3), 12)?;
    let dir = std::env::temp_dir().join("ganglionet-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.gnet");

    save_checkpoint(&net, &path, true)?;
    let back = load_checkpoint(&path)?;
    println!(
        "{} bytes, {} parameters, weights bit-identical: {}",
        std::fs::metadata(&path)?.len(),
        back.parameter_count(),
        back.params.bit_eq(&net.params)
    );
    println!("without optimizer state: {} bytes", checkpoint_bytes(&net, false).len());

    let good = std::fs::read(&path)?;
    let mut flipped = good.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    for (what, bytes) in [
        ("truncated", &good[..good.len() / 3]),
        ("bit flip", &flipped[..]),
        ("not a checkpoint", &b"hello"[..]),
    ] {
        match parse_checkpoint(bytes) {
            Ok(_) => println!("{what}: accepted"),
            Err(e) => println!("{what}: {e}"),
        }
    }
    Ok(())
}
