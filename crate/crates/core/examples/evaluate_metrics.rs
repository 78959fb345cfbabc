//! Scores progressively degraded predictions of one ground truth and shows
//! what the connected-component area filter removes.
//!
//! cargo run --release --example evaluate_metrics

use anyhow::Result;
use mlca::imagery::{BinaryMask, Image};
use mlca::metrics::{evaluate_split, score_image, EvalPair, MetricParams, MetricRow};

fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
}

fn main() -> Result<()> {
    let (w, h) = (128, 128);
    let gt = disk(w, h, 64.0, 64.0, 24.0);
    let params = MetricParams::default();
    let soft = Image::from_fn(w, h, |x, y| {
        let d = ((x as f64 - 64.0).powi(2) + (y as f64 - 64.0).powi(2)).sqrt();
        1.0 / (1.0 + ((d - 24.0) / 3.0).exp())
    });
    let shifted = disk(w, h, 72.0, 60.0, 24.0).to_image();
    let speckle = disk(w, h, 20.0, 20.0, 3.0);
    let noisy = Image::from_fn(w, h, |x, y| if gt.get(x, y) || speckle.get(x, y) { 1.0 } else { 0.0 });
    let cases = [
        ("exact", gt.to_image()),
        ("soft edge", soft),
        ("shifted", shifted),
        ("speckle", noisy.clone()),
        ("empty", Image::new(w, h, 1)),
    ];

    println!("{:<10} {}", "case", MetricRow::NAMES.map(|n| format!("{n:>9}")).join(""));
    for (name, pred) in &cases {
        let row = score_image(name, pred, &gt, &params)?;
        println!("{name:<10} {}", row.values().map(|v| format!("{v:>9.4}")).join(""));
    }

    let pair = [EvalPair { id: "speckle".into(), pred: noisy, gt }];
    let raw = evaluate_split(&pair, None, &params)?;
    let filtered = evaluate_split(&pair, Some((100, 5000)), &params)?;
    println!(
        "speckle fscore {:.4} -> {:.4} with the area filter",
        raw.mean("fscore").unwrap(),
        filtered.mean("fscore").unwrap()
    );
    Ok(())
}
