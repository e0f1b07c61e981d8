//! Writes the sample networks and properties in the text formats.
//!
//! Run with `cargo run --example write_samples -- <dir>`; defaults to `data/`.

use std::path::PathBuf;

use incremark::model::samples::{base, threshold_property, threshold_property_at, variant_large, variant_small};
use incremark::model::{save_network, save_property};

fn main() -> incremark::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&dir)?;
    save_network(&base(), dir.join("base.rnn"))?;
    save_network(&variant_small(), dir.join("variant_small.rnn"))?;
    save_network(&variant_large(), dir.join("variant_large.rnn"))?;
    save_property(&threshold_property(), dir.join("threshold.prop"))?;
    save_property(&threshold_property_at(2.0), dir.join("threshold_high.prop"))?;
    println!("wrote samples to {}", dir.display());
    Ok(())
}
