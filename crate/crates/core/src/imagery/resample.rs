use super::Image;
use crate::error::{invalid, Result};

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Corner-aligned coordinate mapping of `n_out` samples onto `n_in`.
fn source_coords(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_out == 1 || n_in == 1 {
                return (0, 0, 0.0);
            }
            let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling with corner-aligned sampling (the four corners of the
/// output coincide with the four corners of the input).
pub fn upsample_bilinear(img: &Image, w: usize, h: usize) -> Result<Image> {
    if w < img.width() || h < img.height() {
        return Err(invalid(format!(
            "cannot upsample {}x{} to smaller {w}x{h}",
            img.width(),
            img.height()
        )));
    }
    if w == img.width() && h == img.height() {
        return Ok(img.clone());
    }
    let m = img.channels();
    let xs = source_coords(img.width(), w);
    let ys = source_coords(img.height(), h);
    let mut out = Image::new(w, h, m);
    for (y, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
            for c in 0..m {
                let top = lerp(img.get(x0, y0, c), img.get(x1, y0, c), tx);
                let bottom = lerp(img.get(x0, y1, c), img.get(x1, y1, c), tx);
                out.set(x, y, c, lerp(top, bottom, ty));
            }
        }
    }
    Ok(out)
}
