//! Learns a four-layer encoder from scripted markers on two synthetic
//! parasite images and saves it.
//!
//! cargo run --release --example learn_encoder -- [model_path]

use std::collections::BTreeMap;

use anyhow::Result;
use mlca::encoder::{parse_architecture, save_model, train_encoder};
use mlca::pipeline::synth::{generate, PARASITE_ARCHITECTURE};
use mlca::pipeline::{oracle_markers, MarkerOracle, SynthFamily, SynthOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "target/encoder.flim".into());
    let arch = parse_architecture(PARASITE_ARCHITECTURE)?;
    let opts = SynthOptions { seed: 1, ..SynthOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut images = BTreeMap::new();
    let mut markers = Vec::new();
    for i in 0..2 {
        let id = format!("img{i}");
        let s = generate(SynthFamily::Parasite, i, &opts)?;
        markers.extend(oracle_markers(&id, &s.gt, None, &MarkerOracle::default(), &mut rng));
        images.insert(id, s.image);
    }
    let fg = markers.iter().filter(|m| m.label == mlca::encoder::MarkerLabel::Foreground).count();
    println!("{} markers ({fg} foreground)", markers.len());

    let (model, summary) = train_encoder(&images, &markers, &arch, 42)?;
    for (l, layer) in model.layers.iter().enumerate() {
        println!(
            "layer {}: {} filters of {}x{}x{} from {} patches, stride {}",
            l + 1,
            layer.bank.len(),
            layer.bank.side,
            layer.bank.side,
            layer.bank.in_channels,
            summary.patches_per_layer[l],
            arch.cumulative_stride(l + 1)
        );
    }
    save_model(&path, &model)?;
    println!("saved {path}");
    Ok(())
}
