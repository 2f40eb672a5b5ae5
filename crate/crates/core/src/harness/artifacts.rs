//! Files written by runs: graymap images, representation CSVs and JSON summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mathcore::Rng;
use crate::trainer::{Sample, VdibModel};

/// Writes a binary (P5) graymap; intensities in `[0, 1]` map to `0..=255`.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, pixels)?).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Result<Vec<u8>> {
    if width * height != pixels.len() || pixels.is_empty() {
        return Err(Error::shape(format!(
            "{} pixels do not form a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| {
        let v = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        (v * 255.0).round() as u8
    }));
    Ok(out)
}

/// Parses a P5 graymap with maxval 255 into `(width, height, bytes)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(pos, "truncated graymap header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::parse(0, "expected a P5 graymap with maxval 255"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(0, format!("bad dimension `{s}`")));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() != w * h {
        return Err(Error::parse(pos + 1, format!("expected {} pixels, found {}", w * h, body.len())));
    }
    Ok((w, h, body.to_vec()))
}

/// What [`export_representations`] writes per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReprMode {
    /// Spike count per readout unit.
    Rates,
    /// Counts followed by the full readout train, unit-major.
    Full,
}

/// Runs the encoder on each sample (readout sampled with `rng`) and writes
/// one CSV row per sample: the label (empty if none), the per-unit spike
/// counts and, in full mode, every `y[unit, t]`.
pub fn export_representations(
    model: &mut VdibModel,
    samples: &[Sample],
    mode: ReprMode,
    rng: &mut Rng,
) -> Result<String> {
    let n_y = model.encoder.n_readout();
    let mut s = String::from("label");
    for i in 0..n_y {
        let _ = write!(s, ",count_{i}");
    }
    let steps = samples.first().map_or(0, |x| x.x.steps());
    if mode == ReprMode::Full {
        if samples.iter().any(|x| x.x.steps() != steps) {
            return Err(Error::shape("full export needs equal sequence lengths"));
        }
        for i in 0..n_y {
            for t in 0..steps {
                let _ = write!(s, ",y_{i}_{t}");
            }
        }
    }
    s.push('\n');
    for sample in samples {
        let y = model.encoder.sample_sequence(&sample.x, rng)?.y;
        if let Some(l) = sample.label {
            let _ = write!(s, "{l}");
        }
        for c in y.unit_counts() {
            let _ = write!(s, ",{c}");
        }
        if mode == ReprMode::Full {
            for i in 0..n_y {
                for t in 0..steps {
                    let _ = write!(s, ",{}", y.get(i, t));
                }
            }
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
