//! Acceptance checks. Each test prints one `PASS`/`FAIL` line with the
//! measured quantities before asserting.

use std::collections::BTreeMap;
use std::time::Instant;

use mlca::automaton::{
    evolve_traced, init_background_dilation, init_foreground, init_labels, probability_map, CAState, EvolutionConfig,
    ObjectLabel, SmoothingRule,
};
use mlca::decoder::{channel_weights, ChannelStats, DecoderParams};
use mlca::encoder::{
    collect_marker_patches, forward_layer, parse_architecture, project_markers, train_encoder,
    Activation, EncoderModel, FilterBank, LayerSpec, Marker, NormalizationStats, Pooling,
};
use mlca::imagery::{otsu_of_values, BinaryMask, Image, OTSU_BINS};
use mlca::merge::{merge_backward, merge_forward, merge_loss, MergeNet, TrainSample};
use mlca::metrics::{emeasure, score_image, smeasure, weighted_fmeasure, MetricParams};
use mlca::pipeline::synth::{generate, PARASITE_ARCHITECTURE};
use mlca::pipeline::{
    cmd_evaluate, cmd_infer, cmd_learn_encoder, cmd_synth, cmd_train_merge, oracle_markers, process_image,
    DatasetManifest, Layout, MarkerOracle, PipelineConfig, SynthFamily, SynthOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: &str, ok: bool, detail: String) {
    println!("{} {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{criterion}: {detail}");
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

// ---------------------------------------------------------------- automaton

/// Generation-by-generation lattice simulation written from the update
/// rule: scan every cell, try each of its 8 neighbors, keep the strongest
/// attack.
fn simulate(guide: &Image, theta0: &[f64], labels0: &[f64], cfg: &EvolutionConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (w, h) = (guide.width() as isize, guide.height() as isize);
    let (mut theta, mut labels) = (theta0.to_vec(), labels0.to_vec());
    let mut out = Vec::new();
    for _ in 0..cfg.max_iterations {
        let (mut nt, mut nl) = (theta.clone(), labels.clone());
        for y in 0..h {
            for x in 0..w {
                let p = (y * w + x) as usize;
                let mut best = theta[p];
                for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                    let (qx, qy) = (x + dx, y + dy);
                    if qx < 0 || qy < 0 || qx >= w || qy >= h {
                        continue;
                    }
                    let q = (qy * w + qx) as usize;
                    let gp = guide.pixel(x as usize, y as usize);
                    let gq = guide.pixel(qx as usize, qy as usize);
                    let d = gp.iter().zip(gq).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    let smooth = labels[q] == 1.0
                        && match cfg.smoothing_rule {
                            SmoothingRule::Brain => gp.len() == 1 && gp[0] > gq[0],
                            SmoothingRule::Parasite => d < cfg.lab_threshold,
                        };
                    let attack = if smooth { (-cfg.beta * d).exp() } else { (-d).exp() } * theta[q];
                    if attack > best {
                        best = attack;
                        nt[p] = attack;
                        nl[p] = labels[q];
                    }
                }
            }
        }
        let dist = theta.iter().zip(&nt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / theta.len() as f64;
        theta = nt;
        labels = nl;
        out.push((theta.clone(), labels.clone()));
        if dist <= cfg.convergence_eps {
            break;
        }
    }
    out
}

fn random_evolution(rng: &mut ChaCha8Rng) -> EvolutionConfig {
    EvolutionConfig {
        beta: rng.gen_range(0.05..=1.0),
        smoothing_rule: if rng.gen_bool(0.5) { SmoothingRule::Brain } else { SmoothingRule::Parasite },
        lab_threshold: rng.gen_range(0.0..0.5),
        convergence_eps: 1e-8,
        max_iterations: 10_000,
    }
}

#[test]
fn ca_matches_lattice_simulator_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..200 {
        let (w, h) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let c = if rng.gen_bool(0.5) { 1 } else { 3 };
        let cfg = random_evolution(&mut rng);
        let guide = random_image(&mut rng, w, h, c);
        let fg: Vec<f64> = (0..w * h).map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen() }).collect();
        let bg: Vec<f64> = (0..w * h).map(|_| rng.gen()).collect();
        let labels: Vec<f64> = fg.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
        let mut state = CAState::new(
            Image::from_vec(w, h, 1, fg.clone()).unwrap(),
            Image::from_vec(w, h, 1, bg.clone()).unwrap(),
            Image::from_vec(w, h, 1, labels.clone()).unwrap(),
            guide.clone(),
        )
        .unwrap();
        let mut got = Vec::new();
        evolve_traced(&mut state, ObjectLabel::Foreground, &cfg, |_, t, l| got.push((t.to_vec(), l.to_vec()))).unwrap();
        let want = simulate(&guide, &fg, &labels, &cfg);
        let after = want.last().unwrap().1.clone();
        mismatches += (got != want) as usize;
        let mut got = Vec::new();
        evolve_traced(&mut state, ObjectLabel::Background, &cfg, |_, t, l| got.push((t.to_vec(), l.to_vec()))).unwrap();
        mismatches += (got != simulate(&guide, &bg, &after, &cfg)) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "CA oracle equivalence",
        mismatches == 0 && secs < 5.0,
        format!("{mismatches} mismatching runs of 400, {secs:.2} s"),
    );
}

#[test]
fn ca_strengths_are_monotone_and_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut decreases = 0usize;
    let mut unconverged = 0usize;
    let mut max_iterations = 0usize;
    for i in 0..50 {
        let cfg = random_evolution(&mut rng);
        let c = if cfg.smoothing_rule == SmoothingRule::Brain { 1 } else { 3 };
        let guide = random_image(&mut rng, 64, 64, c);
        // smooth blob saliency plus noise
        let (cx, cy) = (rng.gen_range(10.0..54.0), rng.gen_range(10.0..54.0));
        let noise = random_image(&mut rng, 64, 64, 1);
        let saliency = Image::from_fn(64, 64, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (-d2 / 120.0).exp() + 0.2 * noise.get(x, y, 0)
        });
        let fg = init_foreground(&saliency).unwrap();
        let bg = init_background_dilation(&fg, 4 + i % 8).unwrap();
        let labels = init_labels(&fg);
        let mut state = CAState::new(fg, bg, labels, guide).unwrap();
        for ol in [ObjectLabel::Foreground, ObjectLabel::Background] {
            let mut prev = state.theta(ol).data().to_vec();
            let report = evolve_traced(&mut state, ol, &cfg, |_, t, _| {
                decreases += t.iter().zip(&prev).filter(|(a, b)| a < b).count();
                prev = t.to_vec();
            })
            .unwrap();
            max_iterations = max_iterations.max(report.iterations);
            if !(report.converged && report.final_dist <= 1e-8 && report.iterations <= 10_000) {
                unconverged += 1;
            }
        }
    }
    verdict(
        "CA monotone convergence",
        decreases == 0 && unconverged == 0,
        format!("{decreases} decreasing cells, {unconverged} of 100 runs unconverged, longest {max_iterations} generations"),
    );
}

#[test]
fn probability_map_is_balanced_and_antisymmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_equal = 0.0f64;
    let mut worst_swap = 0.0f64;
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let a = random_image(&mut rng, w, h, 1);
        // include exact zeros on both sides
        let b = random_image(&mut rng, w, h, 1).map(|v| if v < 0.1 { 0.0 } else { v });
        let a = a.map(|v| if v < 0.1 { 0.0 } else { v });
        for theta in [&a, &b] {
            let o = probability_map(theta, theta).unwrap();
            worst_equal = o.values.data().iter().fold(worst_equal, |m, v| m.max((v - 0.5).abs()));
        }
        let ab = probability_map(&a, &b).unwrap();
        let ba = probability_map(&b, &a).unwrap();
        worst_swap = ab
            .values
            .data()
            .iter()
            .zip(ba.values.data())
            .fold(worst_swap, |m, (x, y)| m.max((x - (1.0 - y)).abs()));
    }
    verdict(
        "Probability map properties",
        worst_equal == 0.0 && worst_swap <= 1e-12,
        format!("max |O(t,t) - 0.5| = {worst_equal:e}, max antisymmetry error {worst_swap:e}"),
    );
}

// ------------------------------------------------------------------ decoder

fn transcribed_weight(mu: f64, t: f64, var: f64, a: f64, a1: f64, a2: f64) -> i8 {
    let foreground = mu <= t - var && a < a1;
    let background = mu >= t + var && a > a2;
    match (foreground, background) {
        (true, false) => 1,
        (false, true) => -1,
        _ => 0,
    }
}

#[test]
fn decoder_weights_follow_the_rule_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.5, 0.75, 0.9, 1.0];
    let pick = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.3) { grid[rng.gen_range(0..grid.len())] } else { rng.gen() };
    let mut disagreements = 0;
    let mut seen = [false; 3];
    for _ in 0..1000 {
        let n = rng.gen_range(1..12);
        let means: Vec<f64> = (0..n).map(|_| pick(&mut rng)).collect();
        let areas: Vec<f64> = (0..n).map(|_| pick(&mut rng)).collect();
        let t = pick(&mut rng);
        let var = if rng.gen_bool(0.1) { 0.0 } else { pick(&mut rng) * 0.1 };
        let a1 = pick(&mut rng) * 0.5;
        let params = DecoderParams { area_low: a1, area_high: a1 + pick(&mut rng) * (1.0 - a1) };
        let stats = ChannelStats { means: means.clone(), global_threshold: t, variance: var, areas: areas.clone() };
        let got = channel_weights(&stats, &params);
        for (i, g) in got.iter().enumerate() {
            let want = transcribed_weight(means[i], t, var, areas[i], params.area_low, params.area_high);
            disagreements += (*g != want) as usize;
            seen[(*g + 1) as usize] = true;
        }
    }
    verdict(
        "Decoder rule exactness",
        disagreements == 0 && seen.iter().all(|s| *s),
        format!("{disagreements} disagreements over 1000 tuples, weights seen {seen:?} for -1/0/+1"),
    );
}

// ------------------------------------------------------------------ encoder

fn naive_conv_at(input: &Image, bank: &FilterBank, x: isize, y: isize, act: Activation) -> Vec<f64> {
    let k = bank.side as isize;
    let m = input.channels();
    let mut patch = Vec::new();
    for dy in -(k / 2)..=k / 2 {
        for dx in -(k / 2)..=k / 2 {
            let (sx, sy) = (x + dx, y + dy);
            for c in 0..m {
                let inside = sx >= 0 && sy >= 0 && sx < input.width() as isize && sy < input.height() as isize;
                patch.push(if inside { input.get(sx as usize, sy as usize, c) } else { 0.0 });
            }
        }
    }
    let z: Vec<f64> = patch
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let sd = bank.stats.stdev[i];
            (v - bank.stats.mean[i]) / if sd < bank.stats.epsilon { bank.stats.epsilon } else { sd }
        })
        .collect();
    bank.kernels
        .iter()
        .map(|k| {
            let v: f64 = k.iter().zip(&z).map(|(a, b)| a * b).sum();
            if act == Activation::Relu { v.max(0.0) } else { v }
        })
        .collect()
}

fn naive_forward_layer(input: &Image, spec: &LayerSpec, bank: &FilterBank) -> Image {
    let (w, h, n) = (input.width(), input.height(), bank.kernels.len());
    if spec.pool == Pooling::None {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend(naive_conv_at(input, bank, x as isize, y as isize, spec.activation));
            }
        }
        return Image::from_vec(w, h, n, data).unwrap();
    }
    let s = spec.pool_stride;
    let r = (spec.pool_side / 2) as isize;
    let (ow, oh) = ((w + s - 1) / s, (h + s - 1) / s);
    let mut data = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            let mut window = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = ((ox * s) as isize + dx, (oy * s) as isize + dy);
                    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                        window.push(vec![0.0; n]);
                    } else {
                        window.push(naive_conv_at(input, bank, x, y, spec.activation));
                    }
                }
            }
            for c in 0..n {
                let vals = window.iter().map(|v| v[c]);
                data.push(match spec.pool {
                    Pooling::Avg => vals.sum::<f64>() / window.len() as f64,
                    _ => vals.fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
    }
    Image::from_vec(ow, oh, n, data).unwrap()
}

fn random_bank(rng: &mut ChaCha8Rng, side: usize, m: usize, n: usize) -> FilterBank {
    let dim = side * side * m;
    let kernels = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect();
    let stdev = (0..dim).map(|_| rng.gen_range(0.05..2.0)).collect();
    FilterBank {
        side,
        in_channels: m,
        kernels,
        stats: NormalizationStats { mean: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(), stdev, epsilon: 1e-6 },
    }
}

/// Trains on two synthetic images with scripted markers.
fn small_encoder(size: usize, seed: u64) -> (EncoderModel, BTreeMap<String, Image>, Vec<Marker>) {
    let opts = SynthOptions { seed, width: size, height: size, ..SynthOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = BTreeMap::new();
    let mut markers = Vec::new();
    for i in 0..2 {
        let s = generate(SynthFamily::Parasite, i, &opts).unwrap();
        let id = format!("i{i}");
        markers.extend(oracle_markers(&id, &s.gt, None, &MarkerOracle::default(), &mut rng));
        images.insert(id, s.image);
    }
    let arch = parse_architecture(PARASITE_ARCHITECTURE).unwrap();
    let (model, _) = train_encoder(&images, &markers, &arch, seed).unwrap();
    (model, images, markers)
}

#[test]
fn encoder_invariants_hold() {
    let (model, images, markers) = small_encoder(160, 9);
    let mut worst_norm = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut rasters = images.clone();
    let mut stride = 1;
    for layer in &model.layers {
        for k in &layer.bank.kernels {
            worst_norm = worst_norm.max((k.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
        }
        let patches = collect_marker_patches(&rasters, &project_markers(&markers, stride), layer.spec.kernel_side).unwrap();
        let dim = layer.bank.stats.dim();
        let normed: Vec<Vec<f64>> = patches.iter().map(|p| layer.bank.stats.normalized(&p.values)).collect();
        for d in 0..dim {
            let mean = normed.iter().map(|v| v[d]).sum::<f64>() / normed.len() as f64;
            worst_mean = worst_mean.max(mean.abs());
        }
        for r in rasters.values_mut() {
            *r = forward_layer(r, &layer.spec, &layer.bank).unwrap();
        }
        stride *= layer.spec.stride();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_forward = 0.0f64;
    for f in 0..20 {
        let (w, h, m) = (rng.gen_range(3..14), rng.gen_range(3..14), rng.gen_range(1..4));
        let side = [1, 3, 5][f % 3];
        let pool = [Pooling::Max, Pooling::Avg, Pooling::None][(f / 3) % 3];
        let spec = LayerSpec {
            kernel_side: side,
            activation: if f % 4 == 3 { Activation::None } else { Activation::Relu },
            pool,
            pool_side: [1, 3, 5][f % 3],
            pool_stride: 1 + f % 3,
            filters_per_marker: 1,
            max_filters: 64,
        };
        let filters = rng.gen_range(1..6);
        let bank = random_bank(&mut rng, side, m, filters);
        let input = random_image(&mut rng, w, h, m).map(|v| 2.0 * v - 0.5);
        let fast = forward_layer(&input, &spec, &bank).unwrap();
        let slow = naive_forward_layer(&input, &spec, &bank);
        assert_eq!((fast.width(), fast.height(), fast.channels()), (slow.width(), slow.height(), slow.channels()));
        worst_forward = fast.data().iter().zip(slow.data()).fold(worst_forward, |m, (a, b)| m.max((a - b).abs()));
    }
    verdict(
        "Encoder invariants",
        worst_norm <= 1e-6 && worst_mean < 1e-8 && worst_forward <= 1e-10,
        format!("kernel norm error {worst_norm:e}, normalized patch mean {worst_mean:e}, forward error {worst_forward:e}"),
    );
}

// -------------------------------------------------------------------- otsu

/// Exhaustive search with exact rational comparison of the between-class
/// variance `(w1 s0 - w0 s1)² / (w0 w1)` over bin indices.
fn exhaustive_otsu(hist: &[u64]) -> usize {
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(i, n)| i as u64 * n).sum();
    let mut best: Option<(u128, u128, usize)> = None;
    for t in 0..hist.len() - 1 {
        let w0: u64 = hist[..=t].iter().sum();
        let s0: u64 = hist[..=t].iter().enumerate().map(|(i, n)| i as u64 * n).sum();
        let (w1, s1) = (total - w0, total_sum - s0);
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let diff = (w1 as i128 * s0 as i128 - w0 as i128 * s1 as i128).unsigned_abs();
        let (num, den) = (diff * diff, w0 as u128 * w1 as u128);
        let better = match best {
            None => true,
            Some((bn, bd, _)) => num * bd > bn * den,
        };
        if better {
            best = Some((num, den, t));
        }
    }
    best.expect("two occupied bins").2
}

#[test]
fn otsu_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(256);
    let mut wrong = 0;
    for _ in 0..100 {
        let mut hist = vec![0u64; OTSU_BINS];
        let modes = rng.gen_range(1..4);
        for _ in 0..modes {
            let (c, spread) = (rng.gen_range(0..256) as f64, rng.gen_range(3.0..40.0));
            for b in hist.iter_mut().enumerate() {
                let g = (-((b.0 as f64 - c) / spread).powi(2)).exp();
                *b.1 += (g * rng.gen_range(0.0..50.0)) as u64;
            }
        }
        for b in hist.iter_mut() {
            if rng.gen_bool(0.2) {
                *b += rng.gen_range(0..5);
            }
        }
        hist[0] = hist[0].max(1);
        hist[255] = hist[255].max(1);
        // values at bin centres over an observed range of exactly [0, 1]
        let mut values = vec![0.0, 1.0];
        for (b, &n) in hist.iter().enumerate() {
            let extra = n - if b == 0 || b == 255 { 1 } else { 0 };
            values.extend(std::iter::repeat((b as f64 + 0.5) / 256.0).take(extra as usize));
        }
        let got = otsu_of_values(values.into_iter()).unwrap();
        let want = exhaustive_otsu(&hist);
        let threshold_ok = (got.threshold - (want + 1) as f64 / 256.0).abs() < 1e-12;
        wrong += (got.bin != want || !threshold_ok) as usize;
    }
    verdict("Otsu exactness", wrong == 0, format!("{wrong} of 100 histograms disagree"));
}

// ------------------------------------------------------------------- merge

#[test]
fn merge_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for f in 0..20 {
        let (c, l) = if f % 2 == 0 { (3, 4) } else { (1, 3) };
        let (w, h) = (5 + f % 4, 4 + f % 3);
        let image = random_image(&mut rng, w, h, c);
        let sal = (0..l).map(|_| random_image(&mut rng, w, h, 1).map(|v| (v > 0.5) as u8 as f64)).collect();
        let target = BinaryMask::from_bits(w, h, (0..w * h).map(|_| rng.gen_bool(0.3)).collect()).unwrap();
        let sample = TrainSample::new(image, sal, target).unwrap();
        let mut net = MergeNet::zeros(c, l);
        let p: Vec<f64> = (0..net.param_count()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        net.set_params(&p).unwrap();
        let lambda = if f % 4 == 0 { 0.0 } else { 1e-3 };
        let grad = merge_backward(&net, &sample, lambda).unwrap().grad;
        let loss_at = |q: &[f64]| {
            let mut n = net.clone();
            n.set_params(q).unwrap();
            let pred = merge_forward(&n, &sample.image, &sample.saliencies).unwrap();
            merge_loss(&pred, &sample.target, &n, lambda).unwrap()
        };
        for i in 0..p.len() {
            let (mut plus, mut minus) = (p.clone(), p.clone());
            plus[i] += step;
            minus[i] -= step;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let rel = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    verdict(
        "Merge-net gradient check",
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} over {checked} parameters"),
    );
}

// ----------------------------------------------------------------- metrics

#[derive(serde::Deserialize)]
struct Reference {
    width: usize,
    height: usize,
    pred: Vec<f64>,
    gt: Vec<u8>,
    wfm_beta03: f64,
    em_sum_over_n_minus_1: f64,
    sm: f64,
}

#[test]
fn metrics_are_sane_and_match_references() {
    let params = MetricParams::default();
    let mut perfect_failures = 0;
    for i in 0..20 {
        let (w, h) = (16 + i % 6, 12 + i % 5);
        let gt = BinaryMask::from_fn(w, h, |x, y| {
            let (cx, cy) = ((2 + i * 7) % w, (3 + i * 5) % h);
            (x as i64 - cx as i64).pow(2) + (y as i64 - cy as i64).pow(2) <= 4 + (i % 5) as i64 * 3 || (i % 4 == 0 && x + y < 3)
        });
        let row = score_image("p", &gt.to_image(), &gt, &params).unwrap();
        let ok = row.fscore == 1.0
            && row.dice == 1.0
            && (row.emeasure - 1.0).abs() < 1e-12
            && row.smeasure >= 0.99
            && row.mae == 0.0;
        perfect_failures += (!ok) as usize;
    }
    let refs: Vec<Reference> = serde_json::from_str(include_str!("fixtures/metric_refs.json")).unwrap();
    let mut worst = 0.0f64;
    for r in &refs {
        let pred = Image::from_vec(r.width, r.height, 1, r.pred.clone()).unwrap();
        let gt = BinaryMask::from_bits(r.width, r.height, r.gt.iter().map(|v| *v == 1).collect()).unwrap();
        let n = (r.width * r.height) as f64;
        let em_ref = r.em_sum_over_n_minus_1 * (n - 1.0 + f64::EPSILON) / n;
        worst = worst
            .max((weighted_fmeasure(&pred, &gt, 0.3) - r.wfm_beta03).abs())
            .max((emeasure(&pred, &gt, 0.5).unwrap() - em_ref).abs())
            .max((smeasure(&pred, &gt, 0.5) - r.sm).abs());
    }
    verdict(
        "Metrics sanity",
        perfect_failures == 0 && worst <= 1e-6,
        format!("{perfect_failures} of 20 perfect fixtures off, worst reference gap {worst:.1e} over {} cases", refs.len()),
    );
}

// -------------------------------------------------------------- end to end

#[test]
fn infer_is_fast_enough_at_256() {
    let (encoder, _, _) = small_encoder(256, 5);
    let cfg = PipelineConfig::parasite("unused");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = MergeNet::zeros(3, encoder.depth());
    let p: Vec<f64> = (0..net.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    net.set_params(&p).unwrap();
    let opts = SynthOptions { seed: 5, ..SynthOptions::default() };
    let mut worst = 0.0f64;
    for i in 2..7 {
        let s = generate(SynthFamily::Parasite, i, &opts).unwrap();
        let start = Instant::now();
        let r = process_image(&s.image, None, &encoder, Some(&net), &cfg, true).unwrap();
        assert!(r.merged.is_some());
        worst = worst.max(start.elapsed().as_secs_f64());
    }
    verdict(
        "Throughput",
        worst < 3.0,
        format!("slowest of 5 images {worst:.2} s on {} thread(s)", rayon::current_num_threads()),
    );
}

#[test]
fn multi_level_ca_improves_every_level_on_synthetic_parasites() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        count: 50,
        seed: 2024,
        families: vec![SynthFamily::Parasite],
        train_fraction: 0.08,
        ..SynthOptions::default()
    };
    cmd_synth(&opts, tmp.path()).unwrap();
    let root = tmp.path().join("parasite");
    let manifest = DatasetManifest::load(root.join("manifest.json")).unwrap();
    let cfg = PipelineConfig::load(root.join("config.json")).unwrap();
    let layout = Layout::new(tmp.path().join("run"));
    let markers = mlca::encoder::read_markers(root.join("markers.txt")).unwrap();
    let arch = cfg.load_architecture().unwrap();
    cmd_learn_encoder(&manifest, Some("train"), &markers, &arch, cfg.seed, &layout.encoder_model()).unwrap();
    let encoder = mlca::encoder::load_model(layout.encoder_model()).unwrap();
    cmd_train_merge(&manifest, Some("train"), &encoder, &cfg, None, &layout.merge_model(), &layout.merge_log()).unwrap();
    let net = mlca::merge::load_model(&layout.merge_model()).unwrap().net;
    let out = layout.infer_dir(None);
    cmd_infer(&manifest, None, &encoder, Some(&net), &cfg, None, &out).unwrap();
    let eval = cmd_evaluate(&manifest, None, &out, &cfg.metrics, &layout.eval_dir(None)).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let dice = |name: &str| eval.reports[name].mean("dice").unwrap();
    let mut lines = Vec::new();
    let mut every_level = true;
    let mut best = f64::NEG_INFINITY;
    for l in 1..=encoder.depth() {
        let (ca, flim) = (dice(&format!("ca_layer{l}")), dice(&format!("flim_layer{l}")));
        every_level &= ca > flim;
        best = best.max(ca).max(flim);
        lines.push(format!("L{l} ca {ca:.3} flim {flim:.3}"));
    }
    let merged = dice("merged");
    let images = eval.reports["merged"].per_image.len();
    verdict(
        "Synthetic end-to-end improvement",
        every_level && merged >= best - 0.02 && secs < 600.0 && images == 50,
        format!("{}; merged {merged:.3} vs best level {best:.3}; {images} images in {secs:.0} s", lines.join(", ")),
    );
}
