//! Per-chunk rate-quality profiles of VBR-encoded videos.
//!
//! Trace files are CSV with the header `chunk,mode,size_kbits,ssim`: chunk
//! indices are 0-based and contiguous, modes are 1-based per chunk, and sizes
//! are stored internally as `round(size_kbits * 1000)` bits.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityMode {
    pub size_bits: u64,
    /// SSIM-like score in (0, 1].
    pub quality: f64,
}

/// The encodings of one chunk, sorted by strictly increasing size with
/// non-decreasing quality.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkProfile {
    modes: Vec<QualityMode>,
}

impl ChunkProfile {
    pub fn new(modes: Vec<QualityMode>) -> std::result::Result<Self, String> {
        if modes.is_empty() {
            return Err("chunk has no quality modes".to_string());
        }
        for (i, m) in modes.iter().enumerate() {
            if m.size_bits == 0 {
                return Err(format!("mode {} has zero size", i + 1));
            }
            if !(m.quality > 0.0 && m.quality <= 1.0) {
                return Err(format!("mode {} quality {} outside (0, 1]", i + 1, m.quality));
            }
        }
        for (i, w) in modes.windows(2).enumerate() {
            if w[1].size_bits <= w[0].size_bits {
                return Err(format!("mode {} is not larger than mode {}", i + 2, i + 1));
            }
            if w[1].quality < w[0].quality {
                return Err(format!(
                    "mode {} is dominated: larger than mode {} with lower quality",
                    i + 2,
                    i + 1
                ));
            }
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[QualityMode] {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Mode `m`, 1-based.
    pub fn mode(&self, m: usize) -> Option<&QualityMode> {
        m.checked_sub(1).and_then(|i| self.modes.get(i))
    }

    pub fn lowest(&self) -> &QualityMode {
        &self.modes[0]
    }

    pub fn highest(&self) -> &QualityMode {
        &self.modes[self.modes.len() - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityBounds {
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoProfile {
    pub file_id: usize,
    chunks: Vec<ChunkProfile>,
    pub cyclic: bool,
}

impl VideoProfile {
    pub fn new(file_id: usize, chunks: Vec<ChunkProfile>) -> Result<Self> {
        if chunks.is_empty() {
            return Err(Error::config("video profile has no chunks"));
        }
        Ok(Self {
            file_id,
            chunks,
            cyclic: true,
        })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[ChunkProfile] {
        &self.chunks
    }

    /// Profile of the chunk requested `t` chunks after `offset`, cycling.
    pub fn chunk_profile(&self, offset: usize, t: u64) -> &ChunkProfile {
        let len = self.chunks.len() as u64;
        let idx = (offset as u64 % len + t % len) % len;
        &self.chunks[idx as usize]
    }

    pub fn quality_bounds(&self) -> QualityBounds {
        quality_bounds(self)
    }

    /// Writes the profile in the trace CSV format.
    pub fn write_trace<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["chunk", "mode", "size_kbits", "ssim"])?;
        for (c, chunk) in self.chunks.iter().enumerate() {
            for (m, mode) in chunk.modes.iter().enumerate() {
                w.write_record([
                    c.to_string(),
                    (m + 1).to_string(),
                    format!("{}.{:03}", mode.size_bits / 1000, mode.size_bits % 1000),
                    format!("{}", mode.quality),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn chunk_profile(profile: &VideoProfile, offset: usize, t: u64) -> &ChunkProfile {
    profile.chunk_profile(offset, t)
}

/// Lowest lowest-mode quality and highest highest-mode quality over all
/// chunks.
pub fn quality_bounds(profile: &VideoProfile) -> QualityBounds {
    let d_min = profile
        .chunks
        .iter()
        .map(|c| c.lowest().quality)
        .fold(f64::INFINITY, f64::min);
    let d_max = profile
        .chunks
        .iter()
        .map(|c| c.highest().quality)
        .fold(f64::NEG_INFINITY, f64::max);
    QualityBounds { d_min, d_max }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    chunk: i64,
    mode: i64,
    size_kbits: f64,
    ssim: f64,
}

pub fn load_trace(path: &Path) -> Result<VideoProfile> {
    let file = std::fs::File::open(path).map_err(|source| Error::ConfigFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(file, path)
}

/// Parses trace CSV from any reader; `path` is only used in error messages.
pub fn parse_trace<R: std::io::Read>(reader: R, path: &Path) -> Result<VideoProfile> {
    let err = |line: u64, message: String| Error::Trace {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["chunk", "mode", "size_kbits", "ssim"] {
        return Err(err(1, "expected header chunk,mode,size_kbits,ssim".to_string()));
    }

    // chunk -> mode -> (line, mode data)
    let mut table: BTreeMap<u64, BTreeMap<u64, (u64, QualityMode)>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let fallback_line = i as u64 + 2;
        let record = record.map_err(|e| {
            let line = e.position().map_or(fallback_line, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(fallback_line, |p| p.line());
        let row: TraceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| err(line, format!("malformed row: {e}")))?;
        if row.chunk < 0 {
            return Err(err(line, format!("negative chunk index {}", row.chunk)));
        }
        if row.mode < 1 {
            return Err(err(line, format!("mode {} must be 1-based", row.mode)));
        }
        if !(row.size_kbits.is_finite() && row.size_kbits > 0.0) {
            return Err(err(line, format!("non-positive size {}", row.size_kbits)));
        }
        if !(row.ssim > 0.0 && row.ssim <= 1.0) {
            return Err(err(line, format!("quality {} outside (0, 1]", row.ssim)));
        }
        let size_bits = (row.size_kbits * 1000.0).round() as u64;
        if size_bits == 0 {
            return Err(err(line, format!("size {} kbits rounds to zero bits", row.size_kbits)));
        }
        let mode = QualityMode {
            size_bits,
            quality: row.ssim,
        };
        let modes = table.entry(row.chunk as u64).or_default();
        if modes.insert(row.mode as u64, (line, mode)).is_some() {
            return Err(err(
                line,
                format!("duplicate entry for chunk {} mode {}", row.chunk, row.mode),
            ));
        }
    }

    if table.is_empty() {
        return Err(err(2, "trace has no rows".to_string()));
    }
    let mut chunks = Vec::with_capacity(table.len());
    for (expected, (chunk, modes)) in table.into_iter().enumerate() {
        let first_line = modes.values().map(|(l, _)| *l).min().unwrap_or(0);
        if chunk != expected as u64 {
            return Err(err(
                first_line,
                format!("chunk indices not contiguous: expected {expected}, found {chunk}"),
            ));
        }
        for (expected_mode, mode) in modes.keys().enumerate() {
            if *mode != expected_mode as u64 + 1 {
                return Err(err(
                    first_line,
                    format!("chunk {chunk}: modes not contiguous from 1 (missing mode {})", expected_mode + 1),
                ));
            }
        }
        let profile = ChunkProfile::new(modes.into_values().map(|(_, m)| m).collect())
            .map_err(|m| err(first_line, format!("chunk {chunk}: {m}")))?;
        chunks.push(profile);
    }
    VideoProfile::new(0, chunks)
}

/// A run of consecutive chunks sharing a mode count and base size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length: usize,
    pub modes: usize,
    pub base_kbits: f64,
}

/// Synthetic quality of mode `m` (1-based): saturating towards 1.
pub fn synthetic_quality(m: usize) -> f64 {
    (1.0 - 0.12 * 0.55f64.powi(m as i32 - 1)).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Synthetic VBR profile: mode `m` of a chunk is `base * 2^(m-1)` bits scaled
/// by a per-chunk jitter uniform in [0.8, 1.2].
pub fn synth_vbr(num_chunks: usize, segments: &[Segment], seed: u64) -> Result<VideoProfile> {
    let mut issues = Vec::new();
    if segments.is_empty() {
        issues.push("video.segments must not be empty".to_string());
    }
    let total: usize = segments.iter().map(|s| s.length).sum();
    if !segments.is_empty() && total != num_chunks {
        issues.push(format!(
            "video.segments lengths sum to {total}, expected num_chunks = {num_chunks}"
        ));
    }
    for (i, s) in segments.iter().enumerate() {
        if s.length == 0 || s.modes == 0 {
            issues.push(format!("video.segments[{i}] needs positive length and mode count"));
        }
        if !(s.base_kbits.is_finite() && s.base_kbits > 0.0) {
            issues.push(format!("video.segments[{i}] base_kbits must be positive"));
        }
        if s.modes > 40 {
            issues.push(format!("video.segments[{i}] has too many modes ({})", s.modes));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chunks = Vec::with_capacity(num_chunks);
    for s in segments {
        for _ in 0..s.length {
            let jitter = 1.0 + rng.random_range(-0.2..=0.2);
            let base_bits = s.base_kbits * 1000.0 * jitter;
            let modes = (1..=s.modes)
                .map(|m| QualityMode {
                    size_bits: ((base_bits * 2f64.powi(m as i32 - 1)).round() as u64).max(1),
                    quality: synthetic_quality(m),
                })
                .collect();
            chunks.push(ChunkProfile::new(modes).map_err(Error::config)?);
        }
    }
    VideoProfile::new(0, chunks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoParams {
    /// Trace CSV to load instead of generating a synthetic profile.
    pub trace: Option<std::path::PathBuf>,
    pub num_chunks: usize,
    pub segments: Vec<Segment>,
    pub seed: u64,
}

impl Default for VideoParams {
    fn default() -> Self {
        let seg = |length, modes| Segment {
            length,
            modes,
            base_kbits: 150.0,
        };
        Self {
            trace: None,
            num_chunks: 800,
            segments: vec![seg(200, 8), seg(400, 4), seg(200, 8)],
            seed: 0,
        }
    }
}

impl VideoParams {
    pub fn build(&self) -> Result<VideoProfile> {
        match &self.trace {
            Some(path) => load_trace(path),
            None => synth_vbr(self.num_chunks, &self.segments, self.seed),
        }
    }
}
