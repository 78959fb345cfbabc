//! Synthetic parasite data through the whole chain: markers, encoder, merge
//! training, inference and the metric table.
//!
//! cargo run --release --example end_to_end -- [out_dir] [count] [merge_epochs] [size]

use std::path::PathBuf;

use anyhow::Result;
use mlca::encoder::{load_model, read_markers};
use mlca::merge;
use mlca::pipeline::{
    cmd_evaluate, cmd_infer, cmd_learn_encoder, cmd_synth, cmd_train_merge, DatasetManifest, Layout, PipelineConfig,
    SynthFamily, SynthOptions,
};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/end_to_end".into()));
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(12);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let size: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(256);

    let opts = SynthOptions {
        count,
        seed: 7,
        width: size,
        height: size,
        families: vec![SynthFamily::Parasite],
        ..SynthOptions::default()
    };
    cmd_synth(&opts, &out)?;
    let root = out.join("parasite");
    let manifest = DatasetManifest::load(root.join("manifest.json"))?;
    let mut cfg = PipelineConfig::load(root.join("config.json"))?;
    cfg.merge.epochs = epochs;
    let layout = Layout::new(&cfg.output_root);

    let markers = read_markers(root.join("markers.txt"))?;
    let arch = cfg.load_architecture()?;
    let summary = cmd_learn_encoder(&manifest, Some("train"), &markers, &arch, cfg.seed, &layout.encoder_model())?;
    println!("encoder filters per layer: {:?}", summary.filters_per_layer);
    let encoder = load_model(layout.encoder_model())?;

    let trained = cmd_train_merge(
        &manifest,
        Some("train"),
        &encoder,
        &cfg,
        None,
        &layout.merge_model(),
        &layout.merge_log(),
    )?;
    println!("merge loss {:.4} -> {:.4}", trained.first_loss, trained.final_loss);
    let net = merge::load_model(&layout.merge_model())?.net;

    let split = Some("validation");
    let infer_dir = layout.infer_dir(split);
    let report = cmd_infer(&manifest, split, &encoder, Some(&net), &cfg, None, &infer_dir)?;
    let mean_ms = report.images.iter().map(|r| r.wall_ms).sum::<f64>() / report.images.len() as f64;
    println!("inferred {} images, mean {mean_ms:.0} ms, {} over budget", report.images.len(), report.over_budget.len());

    let eval = cmd_evaluate(&manifest, split, &infer_dir, &cfg.metrics, &layout.eval_dir(split))?;
    println!("{:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "variant", "fscore", "muwf", "dice", "emeas", "smeas", "mae");
    for (name, r) in &eval.reports {
        let m = |k: &str| r.mean(k).unwrap_or(f64::NAN);
        println!(
            "{name:<14} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            m("fscore"),
            m("muwf"),
            m("dice"),
            m("emeasure"),
            m("smeasure"),
            m("mae")
        );
    }
    Ok(())
}
