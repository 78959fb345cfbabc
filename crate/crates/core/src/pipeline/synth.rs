//! Seeded synthetic datasets and a scripted marker oracle.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{DatasetManifest, ManifestEntry};
use crate::encoder::{write_markers, Marker, MarkerLabel};
use crate::error::{invalid, Error, Result};
use crate::imagery::io::{write_image8, write_mask};
use crate::imagery::{BinaryMask, Image};
use crate::metrics::distance_transform;

pub const PARASITE_ARCHITECTURE: &str = include_str!("../../fixtures/parasite_encoder.json");
pub const BRAIN_ARCHITECTURE: &str = include_str!("../../fixtures/brain_encoder.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthFamily {
    /// RGB: noisy textured background, dark debris, 1 to 3 bright ellipses.
    Parasite,
    /// Grayscale: elliptical brain, smooth tissue, one hyperintense lesion
    /// with an attached hypointense core.
    Brain,
}

impl SynthFamily {
    pub fn name(self) -> &'static str {
        match self {
            SynthFamily::Parasite => "parasite",
            SynthFamily::Brain => "brain",
        }
    }

    fn salt(self) -> u64 {
        match self {
            SynthFamily::Parasite => 0x5041_5241,
            SynthFamily::Brain => 0x4252_4149,
        }
    }
}

/// Scripted stand-in for a human annotator: foreground disks deep inside
/// the ground truth, background disks well clear of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerOracle {
    pub foreground: usize,
    pub background: usize,
    pub radius: usize,
    /// Extra clearance between a disk and the object boundary.
    pub margin: usize,
}

impl Default for MarkerOracle {
    fn default() -> Self {
        MarkerOracle {
            foreground: 3,
            background: 2,
            radius: 3,
            margin: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    /// Images per family.
    pub count: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Pixel area range of each parasite-like object.
    pub object_area: (usize, usize),
    /// Upper bound on the fraction of the frame covered by parasite-like
    /// objects together.
    pub max_coverage: f64,
    pub families: Vec<SynthFamily>,
    /// Share of images placed in the `train` split; the rest is divided
    /// evenly between `validation` and `test`.
    pub train_fraction: f64,
    pub oracle: MarkerOracle,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            count: 10,
            seed: 0,
            width: 256,
            height: 256,
            object_area: (1000, 9000),
            max_coverage: 0.08,
            families: vec![SynthFamily::Parasite, SynthFamily::Brain],
            train_fraction: 0.2,
            oracle: MarkerOracle::default(),
        }
    }
}

impl SynthOptions {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(invalid("count must be at least 1"));
        }
        if self.width < 32 || self.height < 32 {
            return Err(invalid("synthetic images must be at least 32x32"));
        }
        let (lo, hi) = self.object_area;
        if lo == 0 || lo > hi {
            return Err(invalid(format!("object area range [{lo}, {hi}] is invalid")));
        }
        if !(self.max_coverage > 0.0 && self.max_coverage <= 0.5) {
            return Err(invalid("max_coverage must lie in (0, 0.5]"));
        }
        if lo as f64 > self.max_coverage * (self.width * self.height) as f64 {
            return Err(invalid(format!(
                "a {lo}-pixel object does not fit in {} of a {}x{} frame",
                self.max_coverage, self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(invalid("train_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub image: Image,
    pub gt: BinaryMask,
    pub mask: Option<BinaryMask>,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    /// Squared normalized radius; inside when `<= 1`.
    fn rho2(&self, x: usize, y: usize) -> f64 {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v
    }

    fn grown(&self, by: f64) -> Ellipse {
        Ellipse {
            a: self.a + by,
            b: self.b + by,
            ..*self
        }
    }

    fn raster(&self, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.rho2(x, y) <= 1.0)
    }
}

/// Slowly varying texture: a sum of random plane waves.
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, count: usize, freq: (f64, f64), amplitude: f64) -> Self {
        let waves = (0..count)
            .map(|_| {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let f = rng.gen_range(freq.0..freq.1);
                (f * theta.cos(), f * theta.sin(), rng.gen_range(0.0..std::f64::consts::TAU), amplitude)
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.waves.iter().map(|(fx, fy, ph, a)| a * (fx * x as f64 + fy * y as f64 + ph).sin()).sum()
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, w: usize, h: usize, area: (f64, f64), aspect: (f64, f64), pad: f64) -> Option<Ellipse> {
    let target = rng.gen_range(area.0..area.1);
    let r = rng.gen_range(aspect.0..aspect.1);
    let a = (target / (std::f64::consts::PI * r)).sqrt();
    let b = r * a;
    let reach = a + pad;
    if 2.0 * reach >= w as f64 || 2.0 * reach >= h as f64 {
        return None;
    }
    Some(Ellipse {
        cx: rng.gen_range(reach..w as f64 - reach),
        cy: rng.gen_range(reach..h as f64 - reach),
        a,
        b,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    })
}

pub fn parasite_image(
    width: usize,
    height: usize,
    object_area: (usize, usize),
    max_coverage: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SynthImage> {
    let lo = object_area.0 as f64;
    let budget = max_coverage * (width * height) as f64;
    let wanted = rng.gen_range(1..=3);
    let mut gt = BinaryMask::new(width, height);
    let mut keep_out = BinaryMask::new(width, height);
    let mut objects = Vec::new();
    for _ in 0..400 {
        let hi = (object_area.1 as f64).min(budget - gt.count() as f64);
        if objects.len() == wanted || hi < lo * 1.1 {
            break;
        }
        // shrink the sampling range slightly so rasterized areas land inside it
        let Some(e) = random_ellipse(rng, width, height, (lo * 1.04, hi * 0.96), (0.55, 1.0), 4.0) else {
            continue;
        };
        let body = e.raster(width, height);
        let area = body.count() as f64;
        if area < lo || area > hi || !body.and(&keep_out).is_empty() {
            continue;
        }
        for (i, b) in e.grown(8.0).raster(width, height).bits().iter().enumerate() {
            if *b {
                let (x, y) = (i % width, i / width);
                keep_out.set(x, y, true);
            }
        }
        for (i, b) in body.bits().iter().enumerate() {
            if *b {
                gt.set(i % width, i / width, true);
            }
        }
        objects.push(e);
    }
    if objects.is_empty() {
        return Err(invalid("could not place any object; enlarge the image or shrink the area range"));
    }

    let base: [f64; 3] = [0.52, 0.46, 0.36].map(|c| c + rng.gen_range(-0.04..0.04));
    let texture = Texture::new(rng, 4, (0.02, 0.09), 0.03);
    let noise = Normal::new(0.0, 0.035).expect("valid deviation");
    let debris_count = rng.gen_range(3..=8);
    let mut debris = Vec::new();
    for _ in 0..200 {
        if debris.len() == debris_count {
            break;
        }
        let Some(d) = random_ellipse(rng, width, height, (20.0, 250.0), (0.4, 1.0), 2.0) else {
            continue;
        };
        if d.grown(2.0).raster(width, height).and(&keep_out).is_empty() {
            debris.push((d, rng.gen_range(0.3..0.5)));
        }
    }
    let egg: [f64; 3] = [0.93, 0.88, 0.68];
    let shell: [f64; 3] = [0.62, 0.52, 0.30];
    let grain = Texture::new(rng, 6, (0.25, 0.6), 0.035);
    let mut img = Image::new(width, height, 3);
    for y in 0..height {
        for x in 0..width {
            let t = texture.at(x, y);
            let mut px = base.map(|c| c + t);
            for (d, darkness) in &debris {
                if d.rho2(x, y) <= 1.0 {
                    px = px.map(|c| c * darkness);
                }
            }
            for e in &objects {
                let r2 = e.rho2(x, y);
                if r2 <= 1.0 {
                    // granular interior inside a darker shell about three pixels thick
                    let rim = 1.0 - 3.0 / e.b;
                    px = if r2 >= rim * rim {
                        shell.map(|c| c + 0.3 * t)
                    } else {
                        egg.map(|c| c - 0.08 * r2 + grain.at(x, y) + 0.3 * t)
                    };
                }
            }
            for (c, v) in px.iter().enumerate() {
                img.set(x, y, c, (v + noise.sample(rng)).clamp(0.0, 1.0));
            }
        }
    }
    Ok(SynthImage { image: img, gt, mask: None })
}

pub fn brain_image(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Result<SynthImage> {
    let (w, h) = (width as f64, height as f64);
    let brain = Ellipse {
        cx: w / 2.0 + rng.gen_range(-0.03..0.03) * w,
        cy: h / 2.0 + rng.gen_range(-0.03..0.03) * h,
        a: rng.gen_range(0.36..0.42) * w,
        b: rng.gen_range(0.40..0.46) * h,
        angle: std::f64::consts::FRAC_PI_2 + rng.gen_range(-0.15..0.15),
    };
    let mask = brain.raster(width, height);
    let inner = brain.grown(-8.0);
    let scale = (w * h) / (256.0 * 256.0);
    let mut lesion = None;
    for _ in 0..400 {
        let Some(e) = random_ellipse(rng, width, height, (900.0 * scale, 3500.0 * scale), (0.6, 1.0), 2.0) else {
            continue;
        };
        let grown = e.grown(2.0).raster(width, height);
        if grown.is_subset_of(&inner.raster(width, height)) {
            lesion = Some(e);
            break;
        }
    }
    let lesion = lesion.ok_or_else(|| invalid("could not place a lesion inside the brain"))?;
    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let core = Ellipse {
        cx: lesion.cx + 0.45 * lesion.a * dir.cos(),
        cy: lesion.cy + 0.45 * lesion.b * dir.sin(),
        a: 0.4 * lesion.a,
        b: 0.4 * lesion.b,
        angle: lesion.angle,
    };
    let texture = Texture::new(rng, 5, (0.03, 0.12), 0.025);
    let noise = Normal::new(0.0, 0.02).expect("valid deviation");
    let mut img = Image::new(width, height, 1);
    let mut gt = BinaryMask::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let v = if core.rho2(x, y) <= 1.0 {
                gt.set(x, y, true);
                0.16 + 0.3 * texture.at(x, y)
            } else if lesion.rho2(x, y) <= 1.0 {
                gt.set(x, y, true);
                0.82 + texture.at(x, y)
            } else if mask.get(x, y) {
                0.36 + 2.0 * texture.at(x, y)
            } else {
                0.02
            };
            img.set(x, y, 0, (v + noise.sample(rng)).clamp(0.0, 1.0));
        }
    }
    Ok(SynthImage {
        image: img,
        gt,
        mask: Some(mask),
    })
}

/// Picks disks by farthest-point sampling over `candidates`, starting from
/// the deepest one.
fn spread(candidates: &[(usize, f64)], count: usize, w: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    let Some(first) = candidates.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0))) else {
        return chosen;
    };
    chosen.push(first.0);
    let d2 = |i: usize, j: usize| {
        let (dx, dy) = ((i % w) as f64 - (j % w) as f64, (i / w) as f64 - (j / w) as f64);
        dx * dx + dy * dy
    };
    while chosen.len() < count {
        let best = candidates
            .iter()
            .map(|&(i, _)| (i, chosen.iter().map(|&c| d2(i, c)).fold(f64::INFINITY, f64::min)))
            .filter(|(_, d)| *d > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((i, _)) => chosen.push(i),
            None => break,
        }
    }
    chosen
}

/// Scripted markers for one image. Background disks are drawn at random
/// (seeded) from positions at least `radius + 3 * margin` pixels from the
/// object and, when `domain` is given, inside it.
pub fn oracle_markers(
    image_id: &str,
    gt: &BinaryMask,
    domain: Option<&BinaryMask>,
    oracle: &MarkerOracle,
    rng: &mut ChaCha8Rng,
) -> Vec<Marker> {
    let (w, h) = (gt.width(), gt.height());
    let mut out = Vec::new();
    let marker = |i: usize, radius: usize, label| Marker {
        image_id: image_id.to_string(),
        x: i % w,
        y: i / w,
        radius,
        label,
    };
    if let Some((inside, _)) = distance_transform(&gt.complement()) {
        let deepest = inside.iter().cloned().fold(0.0, f64::max).sqrt();
        // fall back to a smaller disk when the object is thin
        let radius = oracle.radius.min((deepest as usize).saturating_sub(oracle.margin + 1));
        let need = ((radius + oracle.margin) as f64).powi(2);
        let candidates: Vec<(usize, f64)> = inside
            .iter()
            .enumerate()
            .filter(|(i, d)| gt.bits()[*i] && **d > need)
            .map(|(i, d)| (i, *d))
            .collect();
        for i in spread(&candidates, oracle.foreground, w) {
            out.push(marker(i, radius, MarkerLabel::Foreground));
        }
    }
    let clear = ((oracle.radius + 3 * oracle.margin) as f64).powi(2);
    let outside = distance_transform(gt).map(|(d, _)| d);
    let within = domain.and_then(|m| distance_transform(&m.complement())).map(|(d, _)| d);
    let r = oracle.radius;
    let candidates: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let (x, y) = (i % w, i / w);
            x >= r && y >= r && x + r < w && y + r < h
                && outside.as_ref().map_or(true, |d| d[i] > clear)
                && match (domain, &within) {
                    (Some(m), Some(d)) => m.bits()[i] && d[i] > (r as f64).powi(2),
                    (Some(_), None) => true,
                    (None, _) => true,
                }
        })
        .collect();
    for _ in 0..oracle.background.min(candidates.len()) {
        let i = candidates[rng.gen_range(0..candidates.len())];
        if out.iter().all(|m| m.x != i % w || m.y != i / w) {
            out.push(marker(i, r, MarkerLabel::Background));
        }
    }
    out
}

fn image_seed(seed: u64, family: SynthFamily, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ family.salt() ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

pub fn generate(family: SynthFamily, index: usize, opts: &SynthOptions) -> Result<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(opts.seed, family, index));
    match family {
        SynthFamily::Parasite => parasite_image(opts.width, opts.height, opts.object_area, opts.max_coverage, &mut rng),
        SynthFamily::Brain => brain_image(opts.width, opts.height, &mut rng),
    }
}

pub fn image_id(family: SynthFamily, index: usize) -> String {
    format!("{}_{index:03}", family.name())
}

/// Train/validation/test partition of `count` ids in index order.
pub fn split_counts(count: usize, train_fraction: f64) -> (usize, usize, usize) {
    let train = ((count as f64 * train_fraction).round() as usize).clamp(1, count);
    let rest = count - train;
    let validation = rest.div_ceil(2);
    (train, validation, rest - validation)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFamilyOutput {
    pub family: SynthFamily,
    pub manifest: DatasetManifest,
    pub markers: Vec<Marker>,
}

/// Writes one family under `out/<family>/`: images, ground truths, brain
/// masks, `manifest.json`, oracle markers for the train split
/// (`markers.txt`), `architecture.json` and a matching `config.json`.
pub fn write_family(out: &Path, family: SynthFamily, opts: &SynthOptions) -> Result<SynthFamilyOutput> {
    opts.validate()?;
    let root = out.join(family.name());
    let (n_train, n_val, _) = split_counts(opts.count, opts.train_fraction);
    let mut manifest = DatasetManifest::default();
    let mut markers = Vec::new();
    for i in 0..opts.count {
        let id = image_id(family, i);
        let s = generate(family, i, opts)?;
        let image_path = root.join("images").join(format!("{id}.png"));
        let gt_path = root.join("gt").join(format!("{id}.png"));
        write_image8(&image_path, &s.image)?;
        write_mask(&gt_path, &s.gt)?;
        let mask_path = match &s.mask {
            Some(m) => {
                let p = root.join("masks").join(format!("{id}.png"));
                write_mask(&p, m)?;
                Some(p)
            }
            None => None,
        };
        let split = if i < n_train {
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(opts.seed, family, i) ^ 0x4D41_524B);
            markers.extend(oracle_markers(&id, &s.gt, s.mask.as_ref(), &opts.oracle, &mut rng));
            "train"
        } else if i < n_train + n_val {
            "validation"
        } else {
            "test"
        };
        manifest.splits.entry(split.to_string()).or_default().push(id.clone());
        manifest.entries.push(ManifestEntry {
            image_id: id,
            image_path,
            gt_path: Some(gt_path),
            mask_path,
        });
    }
    manifest.save(root.join("manifest.json"))?;
    write_markers(root.join("markers.txt"), &markers)?;
    let arch = match family {
        SynthFamily::Parasite => PARASITE_ARCHITECTURE,
        SynthFamily::Brain => BRAIN_ARCHITECTURE,
    };
    let arch_path = root.join("architecture.json");
    std::fs::write(&arch_path, arch).map_err(|e| Error::io(&arch_path, e))?;
    let mut cfg = match family {
        SynthFamily::Parasite => PipelineConfig::parasite("architecture.json"),
        SynthFamily::Brain => PipelineConfig::brain("architecture.json"),
    };
    cfg.output_root = "runs".into();
    cfg.seed = opts.seed;
    cfg.merge.seed = opts.seed;
    cfg.save(root.join("config.json"))?;
    Ok(SynthFamilyOutput {
        family,
        manifest,
        markers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_cover_everything() {
        assert_eq!(split_counts(10, 0.2), (2, 4, 4));
        assert_eq!(split_counts(1, 0.2), (1, 0, 0));
        assert_eq!(split_counts(7, 0.0), (1, 3, 3));
    }

    #[test]
    fn parasite_objects_respect_the_area_range() {
        let opts = SynthOptions {
            width: 160,
            height: 160,
            ..SynthOptions::default()
        };
        for i in 0..6 {
            let s = generate(SynthFamily::Parasite, i, &opts).unwrap();
            let (_, sizes) = crate::imagery::label_components(&s.gt);
            let objects = &sizes[1..];
            assert!(!objects.is_empty() && objects.len() <= 3, "{} components", objects.len());
            for &a in objects {
                assert!((1000..=9000).contains(&a), "area {a}");
            }
        }
    }

    #[test]
    fn brain_lesion_sits_inside_the_brain() {
        let opts = SynthOptions::default();
        let s = generate(SynthFamily::Brain, 0, &opts).unwrap();
        let mask = s.mask.unwrap();
        assert!(s.gt.is_subset_of(&mask));
        assert!(s.gt.count() > 500);
    }

    #[test]
    fn oracle_markers_land_on_the_right_side() {
        let gt = BinaryMask::from_fn(40, 40, |x, y| (x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2) < 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ms = oracle_markers("a", &gt, None, &MarkerOracle::default(), &mut rng);
        assert_eq!(ms.len(), 5);
        for m in ms {
            let inside = gt.get(m.x, m.y);
            assert_eq!(inside, m.label == MarkerLabel::Foreground);
        }
    }
}
