//! Trains the fusion network on evolved saliencies of two synthetic
//! images and scores the fused map on held-out ones.
//!
//! cargo run --release --example train_merge -- [epochs]

use std::collections::BTreeMap;

use anyhow::Result;
use mlca::encoder::{parse_architecture, train_encoder};
use mlca::merge::{merge_forward, train, TrainSample};
use mlca::metrics::dice;
use mlca::pipeline::synth::{generate, PARASITE_ARCHITECTURE};
use mlca::pipeline::{
    evolved_saliencies, oracle_markers, process_image, MarkerOracle, PipelineConfig, SynthFamily, SynthOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let opts = SynthOptions { seed: 11, ..SynthOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut images = BTreeMap::new();
    let mut markers = Vec::new();
    for i in 0..2 {
        let s = generate(SynthFamily::Parasite, i, &opts)?;
        let id = format!("train{i}");
        markers.extend(oracle_markers(&id, &s.gt, None, &MarkerOracle::default(), &mut rng));
        images.insert(id, s.image);
    }
    let (encoder, _) = train_encoder(&images, &markers, &parse_architecture(PARASITE_ARCHITECTURE)?, 0)?;

    let mut cfg = PipelineConfig::parasite("unused");
    cfg.merge.epochs = epochs;
    let mut samples = Vec::new();
    for i in 0..2 {
        let s = generate(SynthFamily::Parasite, i, &opts)?;
        let r = process_image(&s.image, None, &encoder, None, &cfg, true)?;
        samples.push(TrainSample::new(s.image, evolved_saliencies(&r.levels), s.gt)?);
    }
    let outcome = train(&samples, &cfg.merge)?;
    for row in outcome.log.iter().step_by((epochs / 8).max(1)) {
        println!("epoch {:>5}  lr {:.5}  loss {:.4}", row.epoch, row.lr, row.loss);
    }
    println!("final loss {:.4}, |w|_1 {:.2}", outcome.final_loss(), outcome.net.l1_norm());

    for i in 2..5 {
        let held = generate(SynthFamily::Parasite, i, &opts)?;
        let r = process_image(&held.image, None, &encoder, None, &cfg, true)?;
        let sal = evolved_saliencies(&r.levels);
        let per_level: Vec<String> =
            sal.iter().map(|s| dice(s, &held.gt, 0.5).map(|d| format!("{d:.3}"))).collect::<Result<_, _>>()?;
        let fused = merge_forward(&outcome.net, &held.image, &sal)?;
        println!("held-out {i}: ca dice [{}], merged {:.3}", per_level.join(" "), dice(&fused, &held.gt, 0.5)?);
    }
    Ok(())
}
