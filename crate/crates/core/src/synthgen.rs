//! Deterministic synthetic traces and R-D parameter sets.
//!
//! Random numbers come from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Each artifact draws from its own
//! stream seeded with `seed + stream`: trace = 0, R-D parameters = 1, sample
//! noise = 2. Conversions are fixed so other implementations can reproduce
//! the fixtures bit for bit:
//!
//! - uniform `u ∈ [0, 1)`: `(next_u64 >> 11) · 2⁻⁵³`;
//! - standard normal: `sqrt(−2·ln(1 − u₁))·cos(2π·u₂)` from two consecutive
//!   uniforms (Box–Muller, cosine branch only);
//! - log-uniform on `[lo, hi]`: `exp(ln lo + u·(ln hi − ln lo))`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_degrees, TileGrid};
use crate::navigation::{GopStructure, Trace, TraceSample};
use crate::rdmodel::{
    distortion_from_rate, rate_from_qp, ModelFamily, QpRateCurve, RateDistortionCurve, RdSamplePoint, TileCurves,
};

const TRACE_STREAM: u64 = 0;
const RD_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

/// Seeded stream with the documented float conversions.
pub struct SynthRng(Xoshiro256PlusPlus);

impl SynthRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        SynthRng(Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(stream)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn log_uniform(&mut self, range: Range) -> f64 {
        let u = self.uniform();
        (range.lo.ln() + u * (range.hi.ln() - range.lo.ln())).exp()
    }
}

/// Closed interval of positive magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(Error::validation(format!(
                "{what} range [{}, {}] must be positive and ordered",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub fps: f64,
    pub grid: TileGrid,
    pub gop_size: usize,
    pub video_id: String,

    pub initial_yaw_deg: f64,
    pub initial_pitch_deg: f64,
    /// Angular-velocity persistence `ρ ∈ [0, 1)`.
    pub persistence: f64,
    /// Velocity noise per frame, deg/s.
    pub noise_deg_s: f64,
    pub initial_velocity_deg_s: (f64, f64),

    pub qp_rate_family: ModelFamily,
    pub rate_distortion_family: ModelFamily,
    /// `a` in `R(QP)`.
    pub rate_scale: Range,
    /// Magnitude of `b` in `R(QP)`; the sign follows the family.
    pub rate_shape: Range,
    /// `c` in `D(R)`.
    pub distortion_scale: Range,
    /// Magnitude of `d` in `D(R)`; the sign follows the family.
    pub distortion_shape: Range,
    /// Per-tile cost multiplier range applied to both scales, drawn once per
    /// tile so some tiles are systematically more expensive.
    pub tile_dynamism: Range,
    /// Lognormal σ of multiplicative noise on emitted sample points.
    pub sample_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_frames: 1920,
            fps: 30.0,
            grid: TileGrid::default(),
            gop_size: 32,
            video_id: "synthetic".into(),
            initial_yaw_deg: 0.0,
            initial_pitch_deg: 0.0,
            persistence: 0.95,
            noise_deg_s: 2.0,
            initial_velocity_deg_s: (0.0, 0.0),
            qp_rate_family: ModelFamily::Exponential,
            rate_distortion_family: ModelFamily::PowerLaw,
            rate_scale: Range::new(30_000.0, 60_000.0),
            rate_shape: Range::new(0.13, 0.16),
            distortion_scale: Range::new(2_000.0, 6_000.0),
            distortion_shape: Range::new(0.75, 0.95),
            tile_dynamism: Range::new(0.6, 1.6),
            sample_noise: 0.0,
        }
    }
}

impl SynthConfig {
    /// Seed-fixed reference scenario: 6×4 tiles, 1920 frames at 30 fps,
    /// 32-frame GOPs.
    pub fn reference() -> Self {
        SynthConfig {
            seed: 2017,
            video_id: "reference".into(),
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::validation("synthetic trace needs at least one frame"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::validation("fps must be positive"));
        }
        if self.gop_size == 0 {
            return Err(Error::validation("GOP size must be positive"));
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return Err(Error::validation(format!(
                "persistence {} outside [0, 1)",
                self.persistence
            )));
        }
        if !(self.noise_deg_s >= 0.0 && self.noise_deg_s.is_finite()) {
            return Err(Error::validation("velocity noise must be non-negative"));
        }
        if !(self.sample_noise >= 0.0 && self.sample_noise.is_finite()) {
            return Err(Error::validation("sample noise must be non-negative"));
        }
        self.rate_scale.validate("rate scale")?;
        self.rate_shape.validate("rate shape")?;
        self.distortion_scale.validate("distortion scale")?;
        self.distortion_shape.validate("distortion shape")?;
        self.tile_dynamism.validate("tile dynamism")?;
        Ok(())
    }

    pub fn gop_structure(&self) -> Result<GopStructure> {
        GopStructure::new(self.gop_size, self.n_frames)
    }
}

fn reflect_pitch(pitch: f64, velocity: f64) -> (f64, f64) {
    if pitch > 90.0 {
        (180.0 - pitch, -velocity)
    } else if pitch < -90.0 {
        (-180.0 - pitch, -velocity)
    } else {
        (pitch, velocity)
    }
}

/// Momentum random walk over yaw and pitch, one sample per frame.
pub fn synth_trace(config: &SynthConfig) -> Result<Trace> {
    config.validate()?;
    let mut rng = SynthRng::new(config.seed, TRACE_STREAM);
    let dt = 1.0 / config.fps;
    let (mut yaw, mut pitch) = (
        wrap_degrees(config.initial_yaw_deg),
        config.initial_pitch_deg.clamp(-90.0, 90.0),
    );
    let (mut v_yaw, mut v_pitch) = config.initial_velocity_deg_s;
    let mut samples = Vec::with_capacity(config.n_frames);
    for j in 0..config.n_frames {
        samples.push(TraceSample {
            frame_index: j,
            time_s: j as f64 * dt,
            yaw_deg: yaw,
            pitch_deg: pitch,
        });
        v_yaw = config.persistence * v_yaw + config.noise_deg_s * rng.normal();
        v_pitch = config.persistence * v_pitch + config.noise_deg_s * rng.normal();
        yaw = wrap_degrees(yaw + v_yaw * dt);
        (pitch, v_pitch) = reflect_pitch(pitch + v_pitch * dt, v_pitch);
        pitch = pitch.clamp(-90.0, 90.0);
    }
    Trace::new(samples, config.fps, config.video_id.clone())
}

fn signed_shape(family: ModelFamily, magnitude: f64) -> f64 {
    match family {
        ModelFamily::Exponential => magnitude,
        ModelFamily::PowerLaw => -magnitude,
    }
}

/// Per-GOP, per-tile curve parameters, indexed `[gop][tile]`.
pub fn synth_rd_params(config: &SynthConfig) -> Result<Vec<Vec<TileCurves>>> {
    config.validate()?;
    let mut rng = SynthRng::new(config.seed, RD_STREAM);
    let tiles = config.grid.tile_count();
    let dynamism: Vec<f64> = (0..tiles).map(|_| rng.log_uniform(config.tile_dynamism)).collect();
    let gops = config.gop_structure()?.gop_count();
    (0..gops)
        .map(|_| {
            dynamism
                .iter()
                .map(|&cost| {
                    let a = cost * rng.log_uniform(config.rate_scale);
                    let b = signed_shape(config.qp_rate_family, rng.log_uniform(config.rate_shape));
                    let c = cost * rng.log_uniform(config.distortion_scale);
                    let d = signed_shape(config.rate_distortion_family, rng.log_uniform(config.distortion_shape));
                    Ok(TileCurves {
                        qp_rate: QpRateCurve::new(config.qp_rate_family, a, b)?,
                        rate_distortion: RateDistortionCurve::new(config.rate_distortion_family, c, d)?,
                    })
                })
                .collect()
        })
        .collect()
}

/// One row of the sample-point CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub gop: usize,
    pub tile: usize,
    pub qp: i32,
    pub rate_kbps: f64,
    pub mse: f64,
}

impl SampleRow {
    pub fn point(&self) -> RdSamplePoint {
        RdSamplePoint {
            qp: self.qp,
            rate_kbps: self.rate_kbps,
            mse: self.mse,
        }
    }
}

/// Encoded operating points implied by `curves` at each ladder QP, with
/// optional multiplicative lognormal noise on rate and MSE.
pub fn synth_samples(config: &SynthConfig, curves: &[Vec<TileCurves>], qp_set: &[i32]) -> Vec<SampleRow> {
    let mut rng = SynthRng::new(config.seed, SAMPLE_STREAM);
    let mut rows = Vec::with_capacity(curves.len() * config.grid.tile_count() * qp_set.len());
    for (gop, tiles) in curves.iter().enumerate() {
        for (tile, c) in tiles.iter().enumerate() {
            for &qp in qp_set {
                let rate = rate_from_qp(&c.qp_rate, qp as f64);
                let mse = distortion_from_rate(&c.rate_distortion, rate).unwrap_or(f64::NAN);
                let (nr, nd) = if config.sample_noise > 0.0 {
                    (
                        (config.sample_noise * rng.normal()).exp(),
                        (config.sample_noise * rng.normal()).exp(),
                    )
                } else {
                    (1.0, 1.0)
                };
                rows.push(SampleRow {
                    gop,
                    tile,
                    qp,
                    rate_kbps: rate * nr,
                    mse: mse * nd,
                });
            }
        }
    }
    rows
}
