//! Head-movement traces and per-GOP navigation likelihoods.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{viewport_footprint, yaw_pitch_to_sphere, FootprintWeights, TileGrid, ViewportSpec};

pub const TRACE_HEADER: [&str; 4] = ["frame", "time_s", "yaw_deg", "pitch_deg"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub frame_index: usize,
    pub time_s: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<TraceSample>,
    pub fps: f64,
    pub video_id: String,
}

impl Trace {
    pub const DEFAULT_FPS: f64 = 30.0;

    pub fn new(samples: Vec<TraceSample>, fps: f64, video_id: impl Into<String>) -> Result<Self> {
        let trace = Trace {
            samples,
            fps,
            video_id: video_id.into(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::validation("trace has no samples"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::validation(format!("fps must be positive, got {}", self.fps)));
        }
        for pair in self.samples.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::validation(format!(
                    "frame indices must be strictly increasing: {} followed by {}",
                    pair[0].frame_index, pair[1].frame_index
                )));
            }
            if pair[1].time_s < pair[0].time_s {
                return Err(Error::validation(format!(
                    "timestamps must be non-decreasing at frame {}",
                    pair[1].frame_index
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One past the largest frame index.
    pub fn frame_span(&self) -> usize {
        self.samples.last().map_or(0, |s| s.frame_index + 1)
    }
}

/// Parses the trace CSV format (`frame,time_s,yaw_deg,pitch_deg`).
pub fn parse_trace(text: &str) -> Result<Trace> {
    parse_trace_with(text, Trace::DEFAULT_FPS, "")
}

pub fn parse_trace_with(text: &str, fps: f64, video_id: &str) -> Result<Trace> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().map(str::trim).ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::parse(1, format!("expected header `{}`", TRACE_HEADER.join(","))));
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::parse(line, format!("expected 4 fields, got {}", record.len())));
        }
        let field = |i: usize| -> Result<f64> {
            let raw = record[i].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, format!("invalid {} value `{raw}`", TRACE_HEADER[i])))
        };
        let frame_raw = record[0].trim();
        let frame_index = frame_raw
            .parse::<usize>()
            .map_err(|_| Error::parse(line, format!("invalid frame value `{frame_raw}`")))?;
        samples.push(TraceSample {
            frame_index,
            time_s: field(1)?,
            yaw_deg: field(2)?,
            pitch_deg: field(3)?,
        });
    }
    Trace::new(samples, fps, video_id)
}

/// Serializes a trace to the CSV format read by [`parse_trace`].
pub fn write_trace(trace: &Trace) -> String {
    let mut out = TRACE_HEADER.join(",");
    out.push('\n');
    for s in &trace.samples {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.frame_index, s.time_s, s.yaw_deg, s.pitch_deg
        ));
    }
    out
}

/// Viewport footprint of every sample in a trace.
pub fn frame_weights(trace: &Trace, spec: ViewportSpec, grid: TileGrid) -> Vec<FootprintWeights> {
    trace
        .samples
        .par_iter()
        .map(|s| viewport_footprint(yaw_pitch_to_sphere(s.yaw_deg, s.pitch_deg), spec, grid))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GopStructure {
    gop_size_frames: usize,
    total_frames: usize,
}

impl GopStructure {
    pub const DEFAULT_GOP_SIZE: usize = 32;

    pub fn new(gop_size_frames: usize, total_frames: usize) -> Result<Self> {
        if gop_size_frames == 0 {
            return Err(Error::validation("GOP size must be at least one frame"));
        }
        Ok(GopStructure {
            gop_size_frames,
            total_frames,
        })
    }

    pub fn gop_size_frames(&self) -> usize {
        self.gop_size_frames
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn gop_count(&self) -> usize {
        self.total_frames.div_ceil(self.gop_size_frames)
    }

    pub fn gop_of_frame(&self, frame: usize) -> usize {
        frame / self.gop_size_frames
    }

    /// First frame index of a GOP.
    pub fn gop_start(&self, gop: usize) -> usize {
        gop * self.gop_size_frames
    }
}

/// Navigation likelihood `p(i|v)` over tiles for one GOP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    pub gop_index: usize,
    pub likelihoods: Vec<f64>,
    pub frames_covered: usize,
    /// Set when no frame fell inside the GOP; `likelihoods` then holds the
    /// fallback distribution.
    pub empty: bool,
}

impl HeatMap {
    pub fn uniform(gop_index: usize, tiles: usize) -> Self {
        HeatMap {
            gop_index,
            likelihoods: vec![1.0 / tiles as f64; tiles],
            frames_covered: 0,
            empty: true,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.likelihoods.len()
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
    v
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, len: usize) -> (Vec<f64>, usize) {
    let mut acc = vec![0.0; len];
    let mut n = 0;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    (acc, n)
}

/// Averages frame footprints within each GOP; frame `j` is the `j`-th entry.
///
/// GOPs without frames are flagged `empty` and carry the previous GOP's
/// likelihoods forward (uniform for the first GOP).
pub fn gop_likelihoods(frames: &[FootprintWeights], gop: GopStructure) -> Result<Vec<HeatMap>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::validation("no frame weights to aggregate"))?;
    let tiles = first.len();
    if frames.iter().any(|f| f.len() != tiles) {
        return Err(Error::validation("frame weight vectors differ in length"));
    }
    let size = gop.gop_size_frames();
    let mut maps: Vec<HeatMap> = Vec::with_capacity(gop.gop_count());
    for g in 0..gop.gop_count() {
        let start = (g * size).min(frames.len());
        let end = ((g + 1) * size).min(frames.len()).min(gop.total_frames());
        let chunk = &frames[start..end.max(start)];
        if chunk.is_empty() {
            let fallback = maps
                .last()
                .map_or_else(|| HeatMap::uniform(g, tiles).likelihoods, |m| m.likelihoods.clone());
            maps.push(HeatMap {
                gop_index: g,
                likelihoods: fallback,
                frames_covered: 0,
                empty: true,
            });
            continue;
        }
        let (mean, n) = mean_of(chunk.iter().map(|f| f.weights.as_slice()), tiles);
        maps.push(HeatMap {
            gop_index: g,
            likelihoods: normalize(mean),
            frames_covered: n,
            empty: false,
        });
    }
    Ok(maps)
}

/// Frame footprints for a whole trace folded into per-GOP heat maps, using
/// each sample's own frame index to pick its GOP.
pub fn trace_heatmaps(trace: &Trace, spec: ViewportSpec, grid: TileGrid, gop: GopStructure) -> Result<Vec<HeatMap>> {
    let weights = frame_weights(trace, spec, grid);
    heatmaps_from_indexed(
        trace.samples.iter().map(|s| s.frame_index).zip(weights.iter()),
        grid.tile_count(),
        gop,
    )
}

pub(crate) fn heatmaps_from_indexed<'a>(
    frames: impl Iterator<Item = (usize, &'a FootprintWeights)>,
    tiles: usize,
    gop: GopStructure,
) -> Result<Vec<HeatMap>> {
    let count = gop.gop_count();
    let mut sums = vec![vec![0.0; tiles]; count];
    let mut covered = vec![0usize; count];
    for (frame, w) in frames {
        if frame >= gop.total_frames() {
            continue;
        }
        if w.len() != tiles {
            return Err(Error::validation("frame weight vector length does not match grid"));
        }
        let g = gop.gop_of_frame(frame);
        for (a, x) in sums[g].iter_mut().zip(&w.weights) {
            *a += x;
        }
        covered[g] += 1;
    }
    let mut maps: Vec<HeatMap> = Vec::with_capacity(count);
    for (g, (sum, n)) in sums.into_iter().zip(covered).enumerate() {
        if n == 0 {
            let fallback = maps
                .last()
                .map_or_else(|| HeatMap::uniform(g, tiles).likelihoods, |m| m.likelihoods.clone());
            maps.push(HeatMap {
                gop_index: g,
                likelihoods: fallback,
                frames_covered: 0,
                empty: true,
            });
        } else {
            let mean = sum.into_iter().map(|x| x / n as f64).collect();
            maps.push(HeatMap {
                gop_index: g,
                likelihoods: normalize(mean),
                frames_covered: n,
                empty: false,
            });
        }
    }
    Ok(maps)
}

/// Per-GOP mean of several traces' heat maps.
///
/// Empty (fallback) maps are excluded from the mean unless every trace is
/// empty for that GOP.
pub fn aggregate_traces(maps_per_trace: &[Vec<HeatMap>]) -> Result<Vec<HeatMap>> {
    let first = maps_per_trace
        .first()
        .ok_or_else(|| Error::validation("no traces to aggregate"))?;
    let gops = first.len();
    let tiles = first.first().map_or(0, HeatMap::tile_count);
    for (t, maps) in maps_per_trace.iter().enumerate() {
        if maps.len() != gops {
            return Err(Error::validation(format!(
                "trace {t} has {} GOPs, expected {gops}",
                maps.len()
            )));
        }
        if maps.iter().any(|m| m.tile_count() != tiles) {
            return Err(Error::validation(format!("trace {t} has a mismatched tile count")));
        }
    }

    Ok((0..gops)
        .map(|g| {
            let observed = maps_per_trace.iter().map(|m| &m[g]).filter(|m| !m.empty);
            let frames_covered = observed.clone().map(|m| m.frames_covered).sum();
            let (mean, n) = mean_of(observed.map(|m| m.likelihoods.as_slice()), tiles);
            if n > 0 {
                HeatMap {
                    gop_index: g,
                    likelihoods: normalize(mean),
                    frames_covered,
                    empty: false,
                }
            } else {
                let (mean, _) = mean_of(maps_per_trace.iter().map(|m| m[g].likelihoods.as_slice()), tiles);
                HeatMap {
                    gop_index: g,
                    likelihoods: normalize(mean),
                    frames_covered: 0,
                    empty: true,
                }
            }
        })
        .collect())
}

/// Mean navigation likelihood over all GOPs of a video.
pub fn video_average_heatmap(maps: &[HeatMap]) -> Result<HeatMap> {
    let tiles = maps
        .first()
        .ok_or_else(|| Error::validation("no heat maps to average"))?
        .tile_count();
    let (mean, _) = mean_of(maps.iter().map(|m| m.likelihoods.as_slice()), tiles);
    Ok(HeatMap {
        gop_index: 0,
        likelihoods: normalize(mean),
        frames_covered: maps.iter().map(|m| m.frames_covered).sum(),
        empty: maps.iter().all(|m| m.empty),
    })
}
