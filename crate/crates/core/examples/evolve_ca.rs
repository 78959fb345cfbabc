//! Evolves the foreground and background automata from one decoded
//! saliency map, tracing the strength change per generation, then
//! thresholds the resulting probability map.
//!
//! cargo run --release --example evolve_ca

use std::collections::BTreeMap;

use anyhow::Result;
use mlca::automaton::{
    binarize, evolve_traced, init_background_dilation, init_foreground, init_labels, probability_map, CAState,
    EvolutionConfig, ObjectLabel, ThresholdStrategy,
};
use mlca::decoder::{decode_stack, DecoderParams};
use mlca::encoder::{forward_encoder, parse_architecture, train_encoder};
use mlca::metrics::dice;
use mlca::pipeline::synth::{generate, PARASITE_ARCHITECTURE};
use mlca::pipeline::{guide_for, oracle_markers, MarkerOracle, SynthFamily, SynthOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let opts = SynthOptions { seed: 5, ..SynthOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
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
    let stack = decode_stack(&forward_encoder(&test.image, &model)?, &DecoderParams::default(), w, h)?;
    let saliency = &stack.maps[1];
    println!("decoded layer 2 dice {:.3}", dice(saliency, &test.gt, 0.5)?);

    let cfg = EvolutionConfig::parasite();
    let guide = guide_for(&test.image)?;
    let theta_fg = init_foreground(saliency)?;
    let theta_bg = init_background_dilation(&theta_fg, 10)?;
    let labels = init_labels(&theta_fg);
    let mut state = CAState::new(theta_fg, theta_bg, labels, guide.clone())?;

    for ol in [ObjectLabel::Foreground, ObjectLabel::Background] {
        let mut previous = state.theta(ol).data().to_vec();
        let mut trace = Vec::new();
        let report = evolve_traced(&mut state, ol, &cfg, |t, theta, _| {
            let change: f64 = theta.iter().zip(&previous).map(|(a, b)| (a - b).abs()).sum();
            trace.push(format!("t{t}:{change:.1}"));
            previous = theta.to_vec();
        })?;
        trace.truncate(6);
        println!(
            "{ol:?}: {} generations, converged {}, strength change [{} ...]",
            report.iterations,
            report.converged,
            trace.join(" ")
        );
    }

    let prob = probability_map(&state.theta_fg, &state.theta_bg)?;
    let mask = binarize(&prob, &guide, &ThresholdStrategy::otsu())?;
    println!("evolved mask: {} px, dice {:.3}", mask.count(), dice(&mask.to_image(), &test.gt, 0.5)?);
    Ok(())
}
