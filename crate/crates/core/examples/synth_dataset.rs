//! Writes both synthetic families with manifests, markers and configs.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [count] [seed]

use std::path::PathBuf;

use anyhow::Result;
use mlca::pipeline::{cmd_synth, SynthOptions};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/synth".into()));
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let opts = SynthOptions { count, seed, ..SynthOptions::default() };
    for family in cmd_synth(&opts, &out)? {
        let splits: Vec<String> = family.manifest.splits.iter().map(|(k, v)| format!("{k}={}", v.len())).collect();
        println!(
            "{:<9} {} images [{}], {} training markers -> {}",
            family.family.name(),
            family.manifest.entries.len(),
            splits.join(" "),
            family.markers.len(),
            out.join(family.family.name()).display()
        );
    }
    Ok(())
}
