//! Datasets: drifting Gaussian blobs, MNIST (IDX), spike encoders for
//! images, and DVS event recordings (AEDAT 2.0).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::Rng;
use crate::spikes::{Reference, SpikeTrain};
use crate::trainer::Sample;

// ---------------------------------------------------------------- blobs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobProcessParams {
    pub n_positions: usize,
    /// 1 or 2 blobs.
    pub n_blobs: usize,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    /// Lag of the reference: `r_t` describes the positions at `t + delta`.
    pub delta: i64,
    /// Draw the reported position around `θ_t` instead of rounding `θ_t`.
    #[serde(default)]
    pub sample_positions: bool,
}

impl Default for BlobProcessParams {
    fn default() -> Self {
        BlobProcessParams {
            n_positions: 20,
            n_blobs: 2,
            sigma: 0.45,
            a: 0.9,
            b: 0.14,
            delta: -2,
            sample_positions: false,
        }
    }
}

impl BlobProcessParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_positions < 2 {
            return Err(Error::config("n_positions must be at least 2"));
        }
        if !(self.n_blobs == 1 || self.n_blobs == 2) {
            return Err(Error::config("n_blobs must be 1 or 2"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("sigma must be positive"));
        }
        if !(self.a.abs() < 1.0 && self.b.is_finite()) {
            return Err(Error::config("blob dynamics need |a| < 1"));
        }
        Ok(())
    }

    /// Reference dimension: `n` positions for one blob, `n(n+1)/2` unordered pairs for two.
    pub fn n_classes(&self) -> usize {
        match self.n_blobs {
            1 => self.n_positions,
            _ => self.n_positions * (self.n_positions + 1) / 2,
        }
    }
}

/// Index of the unordered pair `{p1, p2}` (1-based positions, equal allowed)
/// in `0..n(n+1)/2`, ordered `{1,1}, {1,2}, …, {1,n}, {2,2}, …`.
pub fn pair_index(p1: usize, p2: usize, n: usize) -> Result<usize> {
    if p1 < 1 || p2 < 1 || p1 > n || p2 > n {
        return Err(Error::invalid(format!("positions ({p1}, {p2}) outside 1..={n}")));
    }
    let (a, b) = (p1.min(p2), p1.max(p2));
    Ok((a - 1) * n - (a - 1) * (a.saturating_sub(2)) / 2 + (b - a))
}

/// Circular distance between unit `i` and position `theta` on `1..=n`.
pub fn wrapped_distance(i: usize, theta: f64, n: usize) -> f64 {
    let n = n as f64;
    let d = (i as f64 - theta).rem_euclid(n);
    d.min(n - d)
}

fn wrap_position(p: f64, n: usize) -> usize {
    ((p.round() as i64 - 1).rem_euclid(n as i64) + 1) as usize
}

/// A blob sequence with the reported blob positions at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobSequence {
    pub sample: Sample,
    /// `positions[t][k]`: position (1-based) of blob `k` at step `t`.
    pub positions: Vec<Vec<usize>>,
    /// Continuous centres `θ_t` of each blob.
    pub theta: Vec<Vec<f64>>,
}

/// Generates `steps` samples of the drifting-blob process.
///
/// Each blob follows `θ_t = θ_{t−1} + v_t`, `v_t = a v_{t−1} − b ε_t`, from
/// a uniform integer start and `v_0 = 0`. Unit `i` spikes with probability
/// `max_k exp(−d(i, θ_{k,t})² / 2σ²)`.
pub fn gen_blob_sequence(rng: &mut Rng, params: &BlobProcessParams, steps: usize) -> Result<BlobSequence> {
    params.validate()?;
    if steps < 1 {
        return Err(Error::config("sequence length must be at least 1"));
    }
    let n = params.n_positions;
    let mut theta: Vec<f64> = (0..params.n_blobs).map(|_| (1 + rng.below(n)) as f64).collect();
    let mut vel = vec![0.0; params.n_blobs];
    let mut x = SpikeTrain::zeros(n, steps);
    let mut positions = Vec::with_capacity(steps);
    let mut thetas = Vec::with_capacity(steps);
    let two_var = 2.0 * params.sigma * params.sigma;
    for t in 0..steps {
        for (th, v) in theta.iter_mut().zip(vel.iter_mut()) {
            *v = params.a * *v - params.b * rng.standard_normal();
            *th += *v;
        }
        for i in 1..=n {
            let p = theta
                .iter()
                .map(|&th| {
                    let d = wrapped_distance(i, th, n);
                    (-d * d / two_var).exp()
                })
                .fold(0.0, f64::max);
            x.set(i - 1, t, rng.uniform() < p);
        }
        let pos = theta
            .iter()
            .map(|&th| {
                let centre = if params.sample_positions {
                    th + params.sigma * rng.standard_normal()
                } else {
                    th
                };
                wrap_position(centre, n)
            })
            .collect();
        positions.push(pos);
        thetas.push(theta.clone());
    }
    let n_classes = params.n_classes();
    let r = (0..steps as i64)
        .map(|t| {
            let s = t + params.delta;
            if s < 0 || s >= steps as i64 {
                return Ok(None);
            }
            let p: &Vec<usize> = &positions[s as usize];
            let idx = match p.len() {
                1 => p[0] - 1,
                _ => pair_index(p[0], p[1], n)?,
            };
            let mut v = vec![0.0; n_classes];
            v[idx] = 1.0;
            Ok(Some(v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlobSequence {
        sample: Sample {
            x,
            r: Reference::new(n_classes, r)?,
            label: None,
        },
        positions,
        theta: thetas,
    })
}

// ---------------------------------------------------------------- IDX

/// Decoded IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// Row-major images with intensities in `[0, 1]`.
    Images {
        rows: usize,
        cols: usize,
        images: Vec<Vec<f64>>,
    },
    Labels(Vec<u8>),
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Inflates gzip input; other input is returned unchanged.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::parse(0, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(offset, "truncated header"))
}

/// Parses an IDX image (`0x00000803`) or label (`0x00000801`) file, raw or gzip.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let bytes = maybe_gunzip(bytes)?;
    let magic = be_u32(&bytes, 0)?;
    let (ndims, is_images) = match magic {
        0x0000_0803 => (3, true),
        0x0000_0801 => (1, false),
        other => return Err(Error::parse(0, format!("unsupported IDX magic {other:#010x}"))),
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(be_u32(&bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse(4, "dimension product overflows"))?;
    let available = bytes.len() - header;
    if available < payload {
        return Err(Error::parse(
            bytes.len(),
            format!("payload truncated: header declares {payload} bytes, {available} present"),
        ));
    }
    if available > payload {
        return Err(Error::parse(header + payload, "trailing bytes after payload"));
    }
    let body = &bytes[header..];
    if is_images {
        let (rows, cols) = (dims[1], dims[2]);
        let size = rows * cols;
        if size == 0 {
            return Err(Error::parse(8, "image dimensions must be positive"));
        }
        let images = body
            .chunks_exact(size)
            .map(|c| c.iter().map(|&v| f64::from(v) / 255.0).collect())
            .collect();
        Ok(IdxData::Images { rows, cols, images })
    } else {
        if let Some(pos) = body.iter().position(|&l| l > 9) {
            return Err(Error::parse(header + pos, format!("label {} outside 0..=9", body[pos])));
        }
        Ok(IdxData::Labels(body.to_vec()))
    }
}

/// Images and labels of one MNIST split.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistSet {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found (raw or .gz)"),
    ))
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
pub fn load_mnist(dir: &Path, split: MnistSplit) -> Result<MnistSet> {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let img_path = find_idx(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let lbl_path = find_idx(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let images = match parse_idx(&read_file(&img_path)?)? {
        IdxData::Images { images, .. } => images,
        IdxData::Labels(_) => return Err(Error::parse(0, format!("{} holds labels", img_path.display()))),
    };
    let labels = match parse_idx(&read_file(&lbl_path)?)? {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => return Err(Error::parse(0, format!("{} holds images", lbl_path.display()))),
    };
    if images.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(MnistSet { images, labels })
}

/// Encodes an image into an IDX byte buffer (used for fixtures and caches).
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    for d in [images.len(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

// ---------------------------------------------------------------- encoders

fn check_intensities(image: &[f64]) -> Result<()> {
    match image.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::invalid(format!("intensity {} at pixel {i} outside [0, 1]", image[i]))),
        None => Ok(()),
    }
}

/// Per-step Bernoulli spikes with probability `gain · intensity`.
pub fn poisson_encode(image: &[f64], steps: usize, gain: f64, rng: &mut Rng) -> Result<SpikeTrain> {
    check_intensities(image)?;
    if !(gain > 0.0 && gain <= 1.0) {
        return Err(Error::invalid(format!("gain must lie in (0, 1], got {gain}")));
    }
    let mut x = SpikeTrain::zeros(image.len(), steps);
    for t in 0..steps {
        for (i, &v) in image.iter().enumerate() {
            if v > 0.0 && rng.uniform() < gain * v {
                x.set(i, t, true);
            }
        }
    }
    Ok(x)
}

/// Step (1-based) of the single spike of a pixel, `None` for black pixels.
/// Ties round half to even.
pub fn ttfs_time(intensity: f64, steps: usize) -> Option<usize> {
    (intensity > 0.0).then(|| 1 + ((1.0 - intensity) * (steps as f64 - 1.0)).round_ties_even() as usize)
}

/// Time-to-first-spike code: one spike per lit pixel, earlier for brighter pixels.
pub fn ttfs_encode(image: &[f64], steps: usize) -> Result<SpikeTrain> {
    check_intensities(image)?;
    let mut x = SpikeTrain::zeros(image.len(), steps);
    for (i, &v) in image.iter().enumerate() {
        if let Some(t) = ttfs_time(v, steps) {
            x.set(i, t - 1, true);
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// The image is the reference at the last step only.
    FinalStep,
    /// The image is the reference at every step.
    EveryStep,
}

impl std::str::FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final_step" => Ok(ReferenceMode::FinalStep),
            "every_step" => Ok(ReferenceMode::EveryStep),
            other => Err(Error::config(format!("unknown reference mode `{other}`"))),
        }
    }
}

pub fn build_reference(image: &[f64], steps: usize, mode: ReferenceMode) -> Result<Reference> {
    let r = (0..steps)
        .map(|t| match mode {
            ReferenceMode::EveryStep => Some(image.to_vec()),
            ReferenceMode::FinalStep => (t + 1 == steps).then(|| image.to_vec()),
        })
        .collect();
    Reference::new(image.len(), r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageEncoding {
    Poisson,
    Ttfs,
}

impl std::str::FromStr for ImageEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(ImageEncoding::Poisson),
            "ttfs" => Ok(ImageEncoding::Ttfs),
            other => Err(Error::config(format!("unknown image encoding `{other}`"))),
        }
    }
}

// ---------------------------------------------------------------- AEDAT

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    /// Microseconds since the first event of the stream.
    pub timestamp_us: u64,
    pub x: u8,
    pub y: u8,
    /// +1 or −1.
    pub polarity: i8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
}

pub const AEDAT2_MAGIC: &[u8] = b"#!AER-DAT2.0";
pub const DVS_SENSOR_SIZE: usize = 128;

/// Address bits used by DVS128 events; higher bits mark special events,
/// which are rejected.
const DVS_ADDRESS_MASK: u32 = 0x7FFF;

/// Parses an AEDAT 2.0 file with DVS128 addresses: `x = bits 1..8`,
/// `y = bits 8..15`, polarity bit 0 (1 → +1). Timestamps are shifted so the
/// first event is at 0.
pub fn parse_aedat(bytes: &[u8]) -> Result<EventStream> {
    if !bytes.starts_with(AEDAT2_MAGIC) {
        return Err(Error::parse(0, "missing #!AER-DAT2.0 header"));
    }
    let mut pos = 0;
    while pos < bytes.len() && bytes[pos] == b'#' {
        match bytes[pos..].iter().position(|&b| b == b'\n') {
            Some(nl) => pos += nl + 1,
            None => return Err(Error::parse(pos, "unterminated header line")),
        }
    }
    let body = &bytes[pos..];
    if !body.len().is_multiple_of(8) {
        return Err(Error::parse(
            pos + body.len() - body.len() % 8,
            format!("event body of {} bytes is not a multiple of 8", body.len()),
        ));
    }
    let mut events = Vec::with_capacity(body.len() / 8);
    let mut first = None;
    let mut last = 0u32;
    for (k, rec) in body.chunks_exact(8).enumerate() {
        let offset = pos + 8 * k;
        let addr = u32::from_be_bytes([rec[0], rec[1], rec[2], rec[3]]);
        let ts = u32::from_be_bytes([rec[4], rec[5], rec[6], rec[7]]);
        if addr & !DVS_ADDRESS_MASK != 0 {
            return Err(Error::parse(offset, format!("address {addr:#x} is not a DVS128 event")));
        }
        let t0 = *first.get_or_insert(ts);
        if ts < last {
            return Err(Error::parse(offset + 4, format!("timestamp decreases ({last} -> {ts})")));
        }
        last = ts;
        events.push(Event {
            timestamp_us: u64::from(ts - t0),
            x: ((addr >> 1) & 0x7F) as u8,
            y: ((addr >> 8) & 0x7F) as u8,
            polarity: if addr & 1 == 1 { 1 } else { -1 },
        });
    }
    Ok(EventStream { events })
}

/// Inverse of [`parse_aedat`] for normalised streams.
pub fn encode_aedat(stream: &EventStream, header_lines: &[&str]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(AEDAT2_MAGIC);
    out.extend_from_slice(b"\r\n");
    for line in header_lines {
        out.push(b'#');
        out.extend_from_slice(line.as_bytes());
        out.extend_from_slice(b"\r\n");
    }
    for e in &stream.events {
        let addr = (u32::from(e.y) << 8) | (u32::from(e.x) << 1) | u32::from(e.polarity > 0);
        out.extend_from_slice(&addr.to_be_bytes());
        out.extend_from_slice(&(e.timestamp_us as u32).to_be_bytes());
    }
    out
}

/// Rectangular sensor region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Crop {
    /// Centred square of side `size` on the DVS128 sensor.
    pub fn centered(size: usize) -> Self {
        let off = DVS_SENSOR_SIZE.saturating_sub(size) / 2;
        Crop {
            x0: off,
            y0: off,
            width: size,
            height: size,
        }
    }
}

/// Bins events into `duration/bin` steps; a pixel spikes in a bin if at
/// least one event of either polarity falls in it. Pixels are row-major
/// over the crop.
pub fn bin_events(stream: &EventStream, bin_ms: f64, duration_ms: f64, crop: Crop) -> Result<SpikeTrain> {
    if !(bin_ms > 0.0 && duration_ms > 0.0) {
        return Err(Error::invalid("bin and duration must be positive"));
    }
    if crop.width == 0
        || crop.height == 0
        || crop.x0 + crop.width > DVS_SENSOR_SIZE
        || crop.y0 + crop.height > DVS_SENSOR_SIZE
    {
        return Err(Error::invalid("crop outside the 128x128 sensor"));
    }
    let steps = (duration_ms / bin_ms).round() as usize;
    if steps == 0 {
        return Err(Error::invalid("duration shorter than one bin"));
    }
    let bin_us = bin_ms * 1000.0;
    let mut x = SpikeTrain::zeros(crop.width * crop.height, steps);
    for e in &stream.events {
        let (ex, ey) = (usize::from(e.x), usize::from(e.y));
        if ex < crop.x0 || ey < crop.y0 || ex >= crop.x0 + crop.width || ey >= crop.y0 + crop.height {
            continue;
        }
        let t = (e.timestamp_us as f64 / bin_us).floor() as usize;
        if t < steps {
            x.set((ey - crop.y0) * crop.width + (ex - crop.x0), t, true);
        }
    }
    Ok(x)
}

/// Digit class of an MNIST-DVS recording named `mnist_<digit>_...`.
pub fn mnist_dvs_label(path: &Path) -> Option<u8> {
    let name = path.file_name()?.to_str()?;
    let rest = name.strip_prefix("mnist_")?;
    let d = rest.chars().next()?.to_digit(10)?;
    Some(d as u8)
}

/// First training image of each digit, in file order.
pub fn canonical_exemplars(train: &MnistSet) -> Result<Vec<Vec<f64>>> {
    (0..10u8)
        .map(|d| {
            train
                .labels
                .iter()
                .position(|&l| l == d)
                .map(|i| train.images[i].clone())
                .ok_or_else(|| Error::invalid(format!("no training image of digit {d}")))
        })
        .collect()
}

// ---------------------------------------------------------------- cache

pub const CACHE_MAGIC: &[u8; 8] = b"VDIBSEQ\0";
pub const CACHE_VERSION: u32 = 1;

fn pack_bits(bits: impl Iterator<Item = bool>, out: &mut Vec<u8>) {
    let mut byte = 0u8;
    let mut n = 0;
    for b in bits {
        if b {
            byte |= 1 << n;
        }
        n += 1;
        if n == 8 {
            out.push(byte);
            byte = 0;
            n = 0;
        }
    }
    if n > 0 {
        out.push(byte);
    }
}

/// Serialises samples: magic, version, count, then per sample the input
/// dimensions, bit-packed spikes, the reference dimension, a bit-packed
/// mask of reference steps, their values as little-endian `f64`, and the
/// label (`−1` for none).
pub fn encode_dataset(samples: &[Sample]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&(s.x.units() as u32).to_le_bytes());
        out.extend_from_slice(&(s.x.steps() as u32).to_le_bytes());
        pack_bits(s.x.as_slice().iter().map(|&b| b != 0), &mut out);
        out.extend_from_slice(&(s.r.dim() as u32).to_le_bytes());
        pack_bits(s.r.defined_mask().into_iter(), &mut out);
        for t in 0..s.r.len() {
            if let Some(v) = s.r.at(t) {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let label = s.label.map_or(-1i64, |l| l as i64);
        out.extend_from_slice(&label.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(self.pos, format!("truncated: needs {n} more bytes")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

fn unpack_bits(bytes: &[u8], n: usize) -> impl Iterator<Item = bool> + '_ {
    (0..n).map(move |i| (bytes[i / 8] >> (i % 8)) & 1 == 1)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Sample>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != CACHE_MAGIC {
        return Err(Error::parse(0, "not a dataset cache"));
    }
    let version = c.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::parse(8, format!("unsupported cache version {version}")));
    }
    let count = c.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let start = c.pos;
        let units = c.u32()? as usize;
        let steps = c.u32()? as usize;
        let cells = units
            .checked_mul(steps)
            .ok_or_else(|| Error::parse(start, "dimension overflow"))?;
        let packed = c.take(cells.div_ceil(8))?;
        let columns: Vec<Vec<u8>> = {
            let bits: Vec<u8> = unpack_bits(packed, cells).map(u8::from).collect();
            bits.chunks(units.max(1)).map(|c| c.to_vec()).collect()
        };
        let x = if units == 0 {
            SpikeTrain::zeros(0, steps)
        } else {
            SpikeTrain::from_columns(units, &columns)?
        };
        let dim = c.u32()? as usize;
        let mask_bytes = c.take(steps.div_ceil(8))?;
        let mask: Vec<bool> = unpack_bits(mask_bytes, steps).collect();
        let mut r = Vec::with_capacity(steps);
        for defined in mask {
            if defined {
                let raw = c.take(dim.checked_mul(8).ok_or_else(|| Error::parse(c.pos, "dimension overflow"))?)?;
                r.push(Some(
                    raw.chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect(),
                ));
            } else {
                r.push(None);
            }
        }
        let label = c.u64()? as i64;
        out.push(Sample {
            x,
            r: Reference::new(dim, r).map_err(|e| Error::parse(start, e.to_string()))?,
            label: (label >= 0).then_some(label as usize),
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(c.pos, "trailing bytes after dataset"));
    }
    Ok(out)
}

/// Path of the JSON sidecar next to a cache file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the binary cache and its JSON sidecar describing how it was generated.
pub fn write_dataset(path: &Path, samples: &[Sample], generation: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_dataset(samples)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let meta = serde_json::json!({
        "format": "vdib-dataset",
        "version": CACHE_VERSION,
        "count": samples.len(),
        "generation": generation,
    });
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

/// Reads a cache file and its sidecar.
pub fn read_dataset(path: &Path) -> Result<(Vec<Sample>, serde_json::Value)> {
    let samples = decode_dataset(&read_file(path)?)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    Ok((samples, meta))
}
