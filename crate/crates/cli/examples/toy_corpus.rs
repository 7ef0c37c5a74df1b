//! Writes the synthetic corpus used by the end-to-end toy run.
//!
//! ```text
//! cargo run -p arccap-cli --example toy_corpus -- toy/ [images] [seed]
//! ```

use std::path::PathBuf;

use arccap_core::data::write_atomic;
use arccap_core::synth::toy_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: toy_corpus <dir> [images] [seed]")?);
    let images = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    std::fs::create_dir_all(&dir)?;
    let toy = toy_corpus(images, seed);
    write_atomic(
        &dir.join("annotations.json"),
        serde_json::to_string_pretty(&toy.annotations)?.as_bytes(),
    )?;
    write_atomic(
        &dir.join("regions.json"),
        serde_json::to_string(&toy.regions)?.as_bytes(),
    )?;
    println!("wrote {images} images to {}", dir.display());
    Ok(())
}
