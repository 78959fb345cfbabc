use std::collections::VecDeque;

use rayon::prelude::*;

use super::{BinaryMask, Image};
use crate::error::{invalid, Result};

/// Offsets `(dx, dy)` of a Euclidean disk, `dx² + dy² <= r²`, in row-major order.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Grayscale dilation by a Euclidean disk. Offsets falling outside the
/// domain are ignored.
pub fn dilate(img: &Image, radius: i64) -> Result<Image> {
    if radius < 0 {
        return Err(invalid(format!(
            "dilation radius must be non-negative, got {radius}"
        )));
    }
    if img.channels() != 1 {
        return Err(invalid("dilation expects a single-channel image"));
    }
    if radius == 0 {
        return Ok(img.clone());
    }
    let r = radius as isize;
    // the disk as one horizontal run per row offset
    let runs: Vec<(isize, isize)> = (-r..=r)
        .map(|dy| {
            let half = ((r * r - dy * dy) as f64).sqrt().floor() as isize;
            (dy, half)
        })
        .collect();
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut out = Image::new(w, h, 1);
    out.data_mut()
        .par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            for (x, slot) in row.iter_mut().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for &(dy, half) in &runs {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let lo = (x as isize - half).max(0) as usize;
                    let hi = ((x as isize + half) as usize).min(w - 1);
                    let line = &src[sy as usize * w..sy as usize * w + w];
                    for v in &line[lo..=hi] {
                        if *v > best {
                            best = *v;
                        }
                    }
                }
                *slot = best;
            }
        });
    Ok(out)
}

/// 8-connected labelling. Returns one label per pixel (0 = background,
/// components numbered from 1 in raster-scan order of first pixel) and the
/// area of each component (index 0 unused).
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut areas = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let id = areas.len() as u32;
        let mut area = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits()[j] && labels[j] == 0 {
                        labels[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Keeps the 8-connected components whose area lies in `[area_min, area_max]`.
pub fn connected_components(
    mask: &BinaryMask,
    area_min: usize,
    area_max: usize,
) -> Result<BinaryMask> {
    if area_min > area_max {
        return Err(invalid(format!(
            "area range [{area_min}, {area_max}] is empty"
        )));
    }
    let (labels, areas) = label_components(mask);
    let keep: Vec<bool> = areas
        .iter()
        .map(|a| (area_min..=area_max).contains(a))
        .collect();
    let bits = labels.iter().map(|&l| l != 0 && keep[l as usize]).collect();
    BinaryMask::from_bits(mask.width(), mask.height(), bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(mask: &mut BinaryMask, x0: usize, y0: usize, w: usize, h: usize) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask.set(x, y, true);
            }
        }
    }

    #[test]
    fn dilating_zero_stays_zero() {
        let img = Image::new(30, 30, 1);
        assert_eq!(dilate(&img, 10).unwrap(), img);
    }

    #[test]
    fn radius_zero_is_identity() {
        let img = Image::from_fn(5, 4, |x, y| (x * y) as f64 / 20.0);
        assert_eq!(dilate(&img, 0).unwrap(), img);
    }

    #[test]
    fn single_pixel_grows_into_euclidean_disk() {
        let mut img = Image::new(9, 9, 1);
        img.set(4, 4, 0, 1.0);
        let out = dilate(&img, 2).unwrap();
        for y in 0..9i64 {
            for x in 0..9i64 {
                let inside = (x - 4).pow(2) + (y - 4).pow(2) <= 4;
                assert_eq!(
                    out.get(x as usize, y as usize, 0),
                    if inside { 1.0 } else { 0.0 },
                    "({x},{y})"
                );
            }
        }
    }

    #[test]
    fn negative_radius_is_rejected() {
        assert!(dilate(&Image::new(3, 3, 1), -1).is_err());
    }

    #[test]
    fn disk_offsets_count() {
        assert_eq!(disk_offsets(0).len(), 1);
        assert_eq!(disk_offsets(1).len(), 5);
        assert_eq!(disk_offsets(2).len(), 13);
    }

    #[test]
    fn empty_mask_stays_empty() {
        let m = BinaryMask::new(10, 10);
        assert!(connected_components(&m, 0, 100).unwrap().is_empty());
    }

    #[test]
    fn small_blob_below_parasite_range_is_removed() {
        let mut m = BinaryMask::new(40, 40);
        blob(&mut m, 5, 5, 10, 5);
        assert_eq!(m.count(), 50);
        assert!(connected_components(&m, 1000, 9000).unwrap().is_empty());
    }

    #[test]
    fn only_large_blob_survives_brain_range() {
        let mut m = BinaryMask::new(60, 60);
        blob(&mut m, 0, 0, 5, 1);
        blob(&mut m, 20, 20, 25, 20);
        let mut want = BinaryMask::new(60, 60);
        blob(&mut want, 20, 20, 25, 20);
        assert_eq!(connected_components(&m, 100, 20000).unwrap(), want);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut m = BinaryMask::new(3, 3);
        m.set(0, 0, true);
        m.set(1, 1, true);
        m.set(2, 2, true);
        let (_, areas) = label_components(&m);
        assert_eq!(areas, vec![0, 3]);
    }

    #[test]
    fn inverted_range_is_rejected() {
        assert!(connected_components(&BinaryMask::new(2, 2), 5, 4).is_err());
    }
}
