use super::Image;
use crate::error::{invalid, Result};

// sRGB (D65) to XYZ
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
];

fn srgb_to_linear(v: f64) -> f64 {
    if v > 0.04045 {
        ((v + 0.055) / 1.055).powf(2.4)
    } else {
        v / 12.92
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIE LAB (D65) of an sRGB image in `[0,1]`, rescaled per channel to
/// `[0,1]` as `(L/100, (a+128)/255, (b+128)/255)`.
pub fn rgb_to_lab(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(invalid(format!(
            "LAB conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    // white point taken from the matrix rows so that (1,1,1) maps to a = b = 0 exactly
    let white: [f64; 3] = [0, 1, 2].map(|r| RGB_TO_XYZ[r].iter().sum());
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let lin = [
            srgb_to_linear(px[0]),
            srgb_to_linear(px[1]),
            srgb_to_linear(px[2]),
        ];
        let xyz: [f64; 3] = [0, 1, 2].map(|r| {
            RGB_TO_XYZ[r][0] * lin[0] + RGB_TO_XYZ[r][1] * lin[1] + RGB_TO_XYZ[r][2] * lin[2]
        });
        let fx = lab_f(xyz[0] / white[0]);
        let fy = lab_f(xyz[1] / white[1]);
        let fz = lab_f(xyz[2] / white[2]);
        let l = 116.0 * fy - 16.0;
        let a = 500.0 * (fx - fy);
        let b = 200.0 * (fy - fz);
        px[0] = (l / 100.0).clamp(0.0, 1.0);
        px[1] = ((a + 128.0) / 255.0).clamp(0.0, 1.0);
        px[2] = ((b + 128.0) / 255.0).clamp(0.0, 1.0);
    }
    Ok(out)
}
