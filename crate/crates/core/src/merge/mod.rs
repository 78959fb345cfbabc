//! Three-kernel fusion network for the per-level saliency maps.
//!
//! `f_o = σ(conv_o * image)`, `f_s = σ(conv_s * saliencies)` and the output
//! is `σ(w_h · [f_o, f_s] + b_h)`. Convolutions are 3×3 with zero padding.
//! Gradients are computed by hand; the network has `9c + 9L + 5` parameters.

mod augment;
mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagery::{BinaryMask, Image};

pub use augment::{AugmentConfig, AugmentTransform, Interpolation};
pub use train::{
    cosine_lr, load_model, LogRow, read_training_log, save_model, train, write_training_log, Adam, MergeModelFile,
    SchedulerConfig, TrainConfig, TrainOutcome,
};

/// Predictions are clamped to `[c, 1 - c]` inside the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeNet {
    pub image_channels: usize,
    pub levels: usize,
    /// `[ky][kx][c]` flattened, 9c entries.
    pub conv_o: Vec<f64>,
    pub bias_o: f64,
    /// `[ky][kx][l]` flattened, 9L entries.
    pub conv_s: Vec<f64>,
    pub bias_s: f64,
    /// Weights on `f_o` and `f_s`.
    pub conv_head: [f64; 2],
    pub bias_head: f64,
}

impl MergeNet {
    pub fn zeros(image_channels: usize, levels: usize) -> Self {
        MergeNet {
            image_channels,
            levels,
            conv_o: vec![0.0; 9 * image_channels],
            bias_o: 0.0,
            conv_s: vec![0.0; 9 * levels],
            bias_s: 0.0,
            conv_head: [0.0; 2],
            bias_head: 0.0,
        }
    }

    /// Parameters drawn uniformly from `(-0.1, 0.1)`.
    pub fn random(image_channels: usize, levels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(image_channels, levels);
        let mut params = net.params();
        for p in &mut params {
            *p = rng.gen_range(-0.1..0.1);
        }
        net.set_params(&params).expect("same layout");
        net
    }

    pub fn param_count(&self) -> usize {
        9 * self.image_channels + 9 * self.levels + 5
    }

    /// Flat layout: conv_o, bias_o, conv_s, bias_s, conv_head, bias_head.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(&self.conv_o);
        p.push(self.bias_o);
        p.extend(&self.conv_s);
        p.push(self.bias_s);
        p.extend(self.conv_head);
        p.push(self.bias_head);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(invalid(format!("expected {} parameters, got {}", self.param_count(), p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(invalid("merge parameters must be finite"));
        }
        let (no, ns) = (9 * self.image_channels, 9 * self.levels);
        self.conv_o.copy_from_slice(&p[..no]);
        self.bias_o = p[no];
        self.conv_s.copy_from_slice(&p[no + 1..no + 1 + ns]);
        self.bias_s = p[no + 1 + ns];
        self.conv_head = [p[no + ns + 2], p[no + ns + 3]];
        self.bias_head = p[no + ns + 4];
        Ok(())
    }

    pub fn l1_norm(&self) -> f64 {
        self.params().iter().map(|v| v.abs()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_o.len() != 9 * self.image_channels || self.conv_s.len() != 9 * self.levels {
            return Err(invalid("merge kernel shapes do not match c and L"));
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(invalid("merge parameters must be finite"));
        }
        Ok(())
    }
}

/// One training example: input image, the L evolved saliencies, the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Image,
    pub saliencies: Vec<Image>,
    pub target: BinaryMask,
}

impl TrainSample {
    pub fn new(image: Image, saliencies: Vec<Image>, target: BinaryMask) -> Result<Self> {
        let (w, h) = (image.width(), image.height());
        if target.width() != w || target.height() != h {
            return Err(invalid("target does not match the image size"));
        }
        for s in &saliencies {
            if s.width() != w || s.height() != h || s.channels() != 1 {
                return Err(invalid("saliencies must be single-channel and match the image size"));
            }
        }
        Ok(TrainSample {
            image,
            saliencies,
            target,
        })
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// 3×3 zero-padded cross-correlation of an interleaved `c`-channel raster.
fn conv3(data: &[f64], w: usize, h: usize, c: usize, kernel: &[f64], bias: f64) -> Vec<f64> {
    let mut out = vec![bias; w * h];
    for y in 0..h {
        for ky in 0..3 {
            let sy = y as isize + ky as isize - 1;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let src_row = &data[sy as usize * w * c..(sy as usize + 1) * w * c];
            let out_row = &mut out[y * w..(y + 1) * w];
            for kx in 0..3 {
                let k = &kernel[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                let x0 = if kx == 0 { 1 } else { 0 };
                let x1 = if kx == 2 { w.saturating_sub(1) } else { w };
                for x in x0..x1 {
                    let sx = x + kx - 1;
                    let px = &src_row[sx * c..(sx + 1) * c];
                    let mut acc = 0.0;
                    for i in 0..c {
                        acc += k[i] * px[i];
                    }
                    out_row[x] += acc;
                }
            }
        }
    }
    out
}

/// Gradient of a 3×3 conv's weights given the upstream gradient `g`.
fn conv3_weight_grad(data: &[f64], w: usize, h: usize, c: usize, g: &[f64], grad: &mut [f64]) {
    for y in 0..h {
        for ky in 0..3 {
            let sy = y as isize + ky as isize - 1;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let src_row = &data[sy as usize * w * c..(sy as usize + 1) * w * c];
            let g_row = &g[y * w..(y + 1) * w];
            for kx in 0..3 {
                let acc = &mut grad[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                let x0 = if kx == 0 { 1 } else { 0 };
                let x1 = if kx == 2 { w.saturating_sub(1) } else { w };
                for x in x0..x1 {
                    let sx = x + kx - 1;
                    let gv = g_row[x];
                    let px = &src_row[sx * c..(sx + 1) * c];
                    for i in 0..c {
                        acc[i] += gv * px[i];
                    }
                }
            }
        }
    }
}

fn interleave(planes: &[Image]) -> Vec<f64> {
    let n = planes.first().map_or(0, |p| p.pixel_count());
    let l = planes.len();
    let mut out = vec![0.0; n * l];
    for (i, p) in planes.iter().enumerate() {
        for (j, v) in p.data().iter().enumerate() {
            out[j * l + i] = *v;
        }
    }
    out
}

struct Activations {
    f_o: Vec<f64>,
    f_s: Vec<f64>,
    out: Vec<f64>,
    stacked: Vec<f64>,
}

fn check_inputs(net: &MergeNet, image: &Image, saliencies: &[Image]) -> Result<()> {
    net.validate()?;
    if image.channels() != net.image_channels {
        return Err(invalid(format!(
            "merge net expects {} image channels, got {}",
            net.image_channels,
            image.channels()
        )));
    }
    if saliencies.len() != net.levels {
        return Err(invalid(format!("merge net expects {} saliencies, got {}", net.levels, saliencies.len())));
    }
    for s in saliencies {
        if s.width() != image.width() || s.height() != image.height() || s.channels() != 1 {
            return Err(invalid("saliencies must be single-channel and match the image size"));
        }
    }
    Ok(())
}

fn activations(net: &MergeNet, image: &Image, saliencies: &[Image]) -> Activations {
    let (w, h) = (image.width(), image.height());
    let stacked = interleave(saliencies);
    let f_o: Vec<f64> =
        conv3(image.data(), w, h, net.image_channels, &net.conv_o, net.bias_o).into_iter().map(sigmoid).collect();
    let f_s: Vec<f64> =
        conv3(&stacked, w, h, net.levels, &net.conv_s, net.bias_s).into_iter().map(sigmoid).collect();
    let [a, b] = net.conv_head;
    let out = f_o.iter().zip(&f_s).map(|(o, s)| sigmoid(a * o + b * s + net.bias_head)).collect();
    Activations { f_o, f_s, out, stacked }
}

pub fn merge_forward(net: &MergeNet, image: &Image, saliencies: &[Image]) -> Result<Image> {
    check_inputs(net, image, saliencies)?;
    let act = activations(net, image, saliencies);
    Image::from_vec(image.width(), image.height(), 1, act.out)
}

fn bce(pred: &[f64], target: &[bool]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if t {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / pred.len().max(1) as f64
}

/// Mean binary cross-entropy plus `l1_lambda` times the parameter l1 norm.
pub fn merge_loss(pred: &Image, target: &BinaryMask, net: &MergeNet, l1_lambda: f64) -> Result<f64> {
    if pred.width() != target.width() || pred.height() != target.height() || pred.channels() != 1 {
        return Err(invalid("prediction and target must share a single-channel domain"));
    }
    Ok(bce(pred.data(), target.bits()) + l1_lambda * net.l1_norm())
}

/// Loss and gradients for one sample, in the flat [`MergeNet::params`] layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn merge_backward(net: &MergeNet, sample: &TrainSample, l1_lambda: f64) -> Result<Gradients> {
    check_inputs(net, &sample.image, &sample.saliencies)?;
    let (w, h) = (sample.image.width(), sample.image.height());
    if sample.target.width() != w || sample.target.height() != h {
        return Err(invalid("target does not match the image size"));
    }
    let act = activations(net, &sample.image, &sample.saliencies);
    let n = (w * h) as f64;
    let targets = sample.target.bits();

    // d loss / d head pre-activation
    let g_head: Vec<f64> = act
        .out
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            if p < BCE_CLAMP || p > 1.0 - BCE_CLAMP {
                0.0
            } else {
                (p - if t { 1.0 } else { 0.0 }) / n
            }
        })
        .collect();
    let [a, b] = net.conv_head;
    let mut g_wh = [0.0; 2];
    let mut g_bh = 0.0;
    let mut g_zo = vec![0.0; w * h];
    let mut g_zs = vec![0.0; w * h];
    for i in 0..w * h {
        let g = g_head[i];
        g_wh[0] += g * act.f_o[i];
        g_wh[1] += g * act.f_s[i];
        g_bh += g;
        g_zo[i] = g * a * act.f_o[i] * (1.0 - act.f_o[i]);
        g_zs[i] = g * b * act.f_s[i] * (1.0 - act.f_s[i]);
    }
    let mut g_wo = vec![0.0; net.conv_o.len()];
    conv3_weight_grad(sample.image.data(), w, h, net.image_channels, &g_zo, &mut g_wo);
    let mut g_ws = vec![0.0; net.conv_s.len()];
    conv3_weight_grad(&act.stacked, w, h, net.levels, &g_zs, &mut g_ws);

    let mut grad = Vec::with_capacity(net.param_count());
    grad.extend(g_wo);
    grad.push(g_zo.iter().sum());
    grad.extend(g_ws);
    grad.push(g_zs.iter().sum());
    grad.extend(g_wh);
    grad.push(g_bh);
    let params = net.params();
    for (g, p) in grad.iter_mut().zip(&params) {
        if *p != 0.0 {
            *g += l1_lambda * p.signum();
        }
    }
    let loss = bce(&act.out, targets) + l1_lambda * params.iter().map(|v| v.abs()).sum::<f64>();
    Ok(Gradients { loss, grad })
}
