//! Weighted F-measure and the Euclidean distance transform it relies on.

use crate::imagery::{BinaryMask, Image};

/// Exact squared Euclidean distance to the nearest `true` pixel together
/// with that pixel's flat index (two-pass lower-envelope transform). Returns
/// `None` when the mask has no `true` pixel.
pub fn distance_transform(features: &BinaryMask) -> Option<(Vec<f64>, Vec<usize>)> {
    if features.is_empty() {
        return None;
    }
    let (w, h) = (features.width(), features.height());
    const FAR: f64 = f64::INFINITY;
    // column pass: nearest feature row within each column
    let mut col_d2 = vec![FAR; w * h];
    let mut col_row = vec![usize::MAX; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if features.get(x, y) {
                last = Some(y);
            }
            if let Some(r) = last {
                col_d2[y * w + x] = ((y - r) * (y - r)) as f64;
                col_row[y * w + x] = r;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if features.get(x, y) {
                next = Some(y);
            }
            if let Some(r) = next {
                let d = ((r - y) * (r - y)) as f64;
                if d < col_d2[y * w + x] {
                    col_d2[y * w + x] = d;
                    col_row[y * w + x] = r;
                }
            }
        }
    }
    // row pass: lower envelope of parabolas (x - q)² + col_d2(q)
    let mut dist = vec![0.0; w * h];
    let mut nearest = vec![0; w * h];
    let mut v = vec![0usize; w];
    let mut z = vec![0.0f64; w + 1];
    for y in 0..h {
        let f = &col_d2[y * w..(y + 1) * w];
        let sites: Vec<usize> = (0..w).filter(|&q| f[q].is_finite()).collect();
        let mut k = 0usize;
        v[0] = sites[0];
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        let cross = |p: usize, q: usize| {
            ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
        };
        for &q in &sites[1..] {
            let mut s = cross(v[k], q);
            while s <= z[k] {
                k -= 1;
                s = cross(v[k], q);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        let mut k = 0;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let q = v[k];
            let dx = x as f64 - q as f64;
            dist[y * w + x] = dx * dx + f[q];
            nearest[y * w + x] = col_row[y * w + q] * w + q;
        }
    }
    Some((dist, nearest))
}

/// Normalized 7×7 Gaussian with σ = 5 (entries below machine epsilon times
/// the peak are zeroed before normalizing).
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut peak = 0.0f64;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(dx * dx + dy * dy) / 50.0).exp();
            peak = peak.max(*v);
        }
    }
    let mut sum = 0.0;
    for v in k.iter_mut().flatten() {
        if *v < f64::EPSILON * peak {
            *v = 0.0;
        }
        sum += *v;
    }
    for v in k.iter_mut().flatten() {
        *v /= sum;
    }
    k
}

/// Weighted F-measure with weight `beta2` on precision. An empty ground
/// truth scores 0.
pub fn weighted_fmeasure(pred: &Image, gt: &BinaryMask, beta2: f64) -> f64 {
    let (w, h) = (gt.width(), gt.height());
    let Some((dist2, nearest)) = distance_transform(gt) else {
        return 0.0;
    };
    let g = gt.bits();
    let e: Vec<f64> = pred.data().iter().zip(g).map(|(p, &t)| (p - if t { 1.0 } else { 0.0 }).abs()).collect();
    // background pixels take the error of their nearest foreground pixel
    let et: Vec<f64> = (0..w * h).map(|i| if g[i] { e[i] } else { e[nearest[i]] }).collect();
    let k = gaussian_kernel();
    let mut ea = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let sy = y as isize + i as isize - 3;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for (j, kv) in row.iter().enumerate() {
                    let sx = x as isize + j as isize - 3;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += kv * et[sy as usize * w + sx as usize];
                }
            }
            ea[y * w + x] = acc;
        }
    }
    let (mut fg_count, mut fg_err, mut bg_err) = (0usize, 0.0, 0.0);
    for i in 0..w * h {
        if g[i] {
            let m = if ea[i] < e[i] { ea[i] } else { e[i] };
            fg_count += 1;
            fg_err += m;
        } else {
            let b = 2.0 - ((0.5f64).ln() / 5.0 * dist2[i].sqrt()).exp();
            bg_err += e[i] * b;
        }
    }
    let tp = fg_count as f64 - fg_err;
    let recall = 1.0 - fg_err / fg_count as f64;
    let precision = tp / (tp + bg_err + f64::EPSILON);
    (1.0 + beta2) * recall * precision / (recall + beta2 * precision + f64::EPSILON)
}
