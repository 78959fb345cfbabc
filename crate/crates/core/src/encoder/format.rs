//! Architecture configs, marker files and the binary model format.
//!
//! Model layout, all integers `u32` and all reals `f64`, little endian:
//!
//! ```text
//! "FLIM" version input_channels layer_count
//! per layer:
//!   kernel_side activation(u8) pool(u8) pool_side pool_stride
//!   filters_per_marker max_filters in_channels dim
//!   epsilon mean[dim] stdev[dim] kernel_count kernels[kernel_count][dim]
//! ```
//!
//! A JSON mirror of the model is written next to it as `<path>.json`.

use std::path::{Path, PathBuf};

use super::{
    Activation, Architecture, EncoderLayer, EncoderModel, FilterBank, LayerSpec, Marker,
    MarkerLabel, NormalizationStats, Pooling,
};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"FLIM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_architecture(text: &str) -> Result<Architecture> {
    let arch: Architecture = serde_json::from_str(text)?;
    arch.validate()?;
    Ok(arch)
}

pub fn load_architecture(path: impl AsRef<Path>) -> Result<Architecture> {
    parse_architecture(&read_text(path.as_ref())?)
}

/// Parses `image_id x y radius label` records; `#` starts a comment.
pub fn parse_markers(text: &str) -> Result<Vec<Marker>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Format(format!("marker line {}: {what}: '{raw}'", n + 1));
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad("expected a non-negative integer"))
        };
        let label = match fields[4] {
            "fg" => MarkerLabel::Foreground,
            "bg" => MarkerLabel::Background,
            _ => return Err(bad("label must be fg or bg")),
        };
        out.push(Marker {
            image_id: fields[0].to_string(),
            x: num(fields[1])?,
            y: num(fields[2])?,
            radius: num(fields[3])?,
            label,
        });
    }
    Ok(out)
}

pub fn read_markers(path: impl AsRef<Path>) -> Result<Vec<Marker>> {
    parse_markers(&read_text(path.as_ref())?)
}

pub fn format_markers(markers: &[Marker]) -> String {
    let mut s = String::from("# image_id x y radius label\n");
    for m in markers {
        s.push_str(&format!(
            "{} {} {} {} {}\n",
            m.image_id,
            m.x,
            m.y,
            m.radius,
            m.label.as_str()
        ));
    }
    s
}

pub fn write_markers(path: impl AsRef<Path>, markers: &[Marker]) -> Result<()> {
    write_bytes(path.as_ref(), format_markers(markers).as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|v| self.f64(*v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("model file is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::None => 0,
        Activation::Relu => 1,
    }
}

fn pool_code(p: Pooling) -> u8 {
    match p {
        Pooling::None => 0,
        Pooling::Max => 1,
        Pooling::Avg => 2,
    }
}

pub fn encode_model(model: &EncoderModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(MODEL_FORMAT_VERSION as usize);
    w.u32(model.input_channels);
    w.u32(model.layers.len());
    for layer in &model.layers {
        let s = &layer.spec;
        w.u32(s.kernel_side);
        w.u8(activation_code(s.activation));
        w.u8(pool_code(s.pool));
        w.u32(s.pool_side);
        w.u32(s.pool_stride);
        w.u32(s.filters_per_marker);
        w.u32(s.max_filters);
        let b = &layer.bank;
        w.u32(b.in_channels);
        w.u32(b.dim());
        w.f64(b.stats.epsilon);
        w.f64s(&b.stats.mean);
        w.f64s(&b.stats.stdev);
        w.u32(b.len());
        b.kernels.iter().for_each(|k| w.f64s(k));
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<EncoderModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("not a FLIM model file".into()));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported model format version {version}"
        )));
    }
    let input_channels = r.u32()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kernel_side = r.u32()?;
        let activation = match r.u8()? {
            0 => Activation::None,
            1 => Activation::Relu,
            c => return Err(Error::Format(format!("unknown activation code {c}"))),
        };
        let pool = match r.u8()? {
            0 => Pooling::None,
            1 => Pooling::Max,
            2 => Pooling::Avg,
            c => return Err(Error::Format(format!("unknown pooling code {c}"))),
        };
        let spec = LayerSpec {
            kernel_side,
            activation,
            pool,
            pool_side: r.u32()?,
            pool_stride: r.u32()?,
            filters_per_marker: r.u32()?,
            max_filters: r.u32()?,
        };
        let in_channels = r.u32()?;
        let dim = r.u32()?;
        if dim != kernel_side * kernel_side * in_channels {
            return Err(Error::Format(
                "kernel dimension disagrees with the layer shape".into(),
            ));
        }
        let epsilon = r.f64()?;
        let mean = r.f64s(dim)?;
        let stdev = r.f64s(dim)?;
        let n = r.u32()?;
        let kernels = (0..n).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
        layers.push(EncoderLayer {
            spec,
            bank: FilterBank {
                side: kernel_side,
                in_channels,
                kernels,
                stats: NormalizationStats {
                    mean,
                    stdev,
                    epsilon,
                },
            },
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    EncoderModel::new(input_channels, layers)
}

/// Writes the binary model and its JSON mirror.
pub fn save_model(path: impl AsRef<Path>, model: &EncoderModel) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_model(model))?;
    write_bytes(
        &sidecar(path),
        serde_json::to_string_pretty(model)?.as_bytes(),
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EncoderModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_file_parses_comments_and_blank_lines() {
        let text = "# header\n\nimg1 10 12 3 fg\nimg2 0 0 0 bg # trailing\n";
        let ms = parse_markers(text).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].label, MarkerLabel::Foreground);
        assert_eq!((ms[1].x, ms[1].radius), (0, 0));
        assert_eq!(parse_markers(&format_markers(&ms)).unwrap(), ms);
    }

    #[test]
    fn marker_file_rejects_bad_records() {
        assert!(parse_markers("a 1 2 3").is_err());
        assert!(parse_markers("a 1 2 3 xx").is_err());
        assert!(parse_markers("a -1 2 3 fg").is_err());
    }

    #[test]
    fn architecture_rejects_even_kernels() {
        let text = r#"{"input_channels":1,"layers":[{"kernel_side":2,"activation":"relu","pool":"max",
            "pool_side":3,"pool_stride":2,"filters_per_marker":4,"max_filters":200}]}"#;
        assert!(parse_architecture(text).is_err());
    }

    #[test]
    fn model_rejects_foreign_bytes() {
        assert!(decode_model(b"NOPE").is_err());
        let mut bytes = encode_model(&EncoderModel::new(1, vec![]).unwrap());
        bytes[4] = 9;
        assert!(decode_model(&bytes).is_err());
    }
}
