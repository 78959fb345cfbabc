//! Runs a learned encoder over a held-out image and decodes one saliency
//! map per layer, printing how many channels voted foreground or
//! background and writing the maps as PNGs.
//!
//! cargo run --release --example decode_saliency -- [out_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use mlca::decoder::{decode_stack, DecoderParams};
use mlca::encoder::{forward_encoder, parse_architecture, train_encoder};
use mlca::imagery::io::write_image8;
use mlca::metrics::dice;
use mlca::pipeline::synth::{generate, PARASITE_ARCHITECTURE};
use mlca::pipeline::{oracle_markers, MarkerOracle, SynthFamily, SynthOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/decode_saliency".into()));
    std::fs::create_dir_all(&out)?;
    let opts = SynthOptions { seed: 3, ..SynthOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut images = BTreeMap::new();
    let mut markers = Vec::new();
    for i in 0..2 {
        let s = generate(SynthFamily::Parasite, i, &opts)?;
        let id = format!("train{i}");
        markers.extend(oracle_markers(&id, &s.gt, None, &MarkerOracle::default(), &mut rng));
        images.insert(id, s.image);
    }
    let (model, _) = train_encoder(&images, &markers, &parse_architecture(PARASITE_ARCHITECTURE)?, 0)?;

    let test = generate(SynthFamily::Parasite, 2, &opts)?;
    let (w, h) = (test.image.width(), test.image.height());
    let features = forward_encoder(&test.image, &model)?;
    let stack = decode_stack(&features, &DecoderParams::default(), w, h)?;
    for (l, (map, level)) in stack.maps.iter().zip(&stack.levels).enumerate() {
        let pos = level.weights.iter().filter(|v| **v > 0).count();
        let neg = level.weights.iter().filter(|v| **v < 0).count();
        let score = dice(map, &test.gt, 0.5)?;
        println!("layer {}: +{pos} -{neg} of {} channels, dice {score:.3}", l + 1, level.weights.len());
        write_image8(out.join(format!("layer{}.png", l + 1)), map)?;
    }
    write_image8(out.join("image.png"), &test.image)?;
    println!("maps written to {}", out.display());
    Ok(())
}
