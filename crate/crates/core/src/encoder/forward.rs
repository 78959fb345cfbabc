use rayon::prelude::*;

use super::{Activation, EncoderModel, FilterBank, LayerSpec, Pooling};
use crate::error::{invalid, Result};
use crate::imagery::{gather_patch, Image};

/// Marker-normalized convolution, activation and pooling of one layer.
///
/// Each output channel `i` at pixel `p` is the inner product of the z-scored
/// zero-padded patch around `p` with kernel `i`. Pooling windows are centered
/// on every `pool_stride`-th pixel, so the output is
/// `ceil(size / pool_stride)` on each axis.
pub fn forward_layer(input: &Image, spec: &LayerSpec, bank: &FilterBank) -> Result<Image> {
    if input.channels() != bank.in_channels {
        return Err(invalid(format!(
            "layer expects {} channels, input has {}",
            bank.in_channels,
            input.channels()
        )));
    }
    if bank.side != spec.kernel_side {
        return Err(invalid("filter bank side disagrees with the layer spec"));
    }
    let conv = convolve(input, bank);
    let activated = match spec.activation {
        Activation::Relu => conv.map(|v| v.max(0.0)),
        Activation::None => conv,
    };
    Ok(pool(&activated, spec))
}

fn convolve(input: &Image, bank: &FilterBank) -> Image {
    let (w, h) = (input.width(), input.height());
    let n = bank.len();
    let dim = bank.dim();
    let k = bank.side;
    let inv: Vec<f64> = (0..dim).map(|i| 1.0 / bank.stats.divisor(i)).collect();
    let mut out = Image::new(w, h, n);
    if n == 0 {
        return out;
    }
    out.data_mut()
        .par_chunks_mut(w * n)
        .enumerate()
        .for_each(|(y, row)| {
            let mut buf = vec![0.0; dim];
            for x in 0..w {
                gather_patch(input, x, y, k, &mut buf);
                for (i, v) in buf.iter_mut().enumerate() {
                    *v = (*v - bank.stats.mean[i]) * inv[i];
                }
                let dst = &mut row[x * n..(x + 1) * n];
                for (slot, kernel) in dst.iter_mut().zip(&bank.kernels) {
                    *slot = buf.iter().zip(kernel).map(|(a, b)| a * b).sum();
                }
            }
        });
    out
}

fn pool(img: &Image, spec: &LayerSpec) -> Image {
    if spec.pool == Pooling::None {
        return img.clone();
    }
    let s = spec.pool_stride;
    let half = (spec.pool_side / 2) as isize;
    let (w, h, m) = (img.width(), img.height(), img.channels());
    let (ow, oh) = (w.div_ceil(s), h.div_ceil(s));
    let area = (spec.pool_side * spec.pool_side) as f64;
    let mut out = Image::new(ow, oh, m);
    out.data_mut()
        .par_chunks_mut(ow * m)
        .enumerate()
        .for_each(|(oy, row)| {
            let cy = (oy * s) as isize;
            let mut acc = vec![0.0; m];
            for ox in 0..ow {
                let cx = (ox * s) as isize;
                let mut padded = false;
                match spec.pool {
                    Pooling::Avg => acc.fill(0.0),
                    _ => acc.fill(f64::NEG_INFINITY),
                }
                for dy in -half..=half {
                    let y = cy + dy;
                    for dx in -half..=half {
                        let x = cx + dx;
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            padded = true;
                            continue;
                        }
                        let px = img.pixel(x as usize, y as usize);
                        match spec.pool {
                            Pooling::Avg => acc.iter_mut().zip(px).for_each(|(a, v)| *a += v),
                            _ => acc.iter_mut().zip(px).for_each(|(a, v)| *a = a.max(*v)),
                        }
                    }
                }
                let dst = &mut row[ox * m..(ox + 1) * m];
                for (d, a) in dst.iter_mut().zip(&acc) {
                    *d = match spec.pool {
                        Pooling::Avg => a / area,
                        _ if padded => a.max(0.0),
                        _ => *a,
                    };
                }
            }
        });
    out
}

/// Feature maps after every layer, in order.
pub fn forward_encoder(input: &Image, model: &EncoderModel) -> Result<Vec<Image>> {
    if input.channels() != model.input_channels {
        return Err(invalid(format!(
            "encoder expects {} channels, input has {}",
            model.input_channels,
            input.channels()
        )));
    }
    let mut outputs: Vec<Image> = Vec::with_capacity(model.depth());
    for layer in &model.layers {
        let next = forward_layer(outputs.last().unwrap_or(input), &layer.spec, &layer.bank)?;
        outputs.push(next);
    }
    Ok(outputs)
}
