//! Temporally correlated Gaussian noise chained along optical flow.
//!
//! Frame 0 is i.i.d. standard normal. Each following frame forward-splats the
//! previous one along the flow to the nearest cell: a destination hit by
//! `n >= 1` sources takes `sum / sqrt(n)`, an empty destination gets fresh
//! noise. Sources are disjoint, so every output cell stays exactly N(0, 1)
//! over the seed distribution.
//!
//! Randomness is counter-based: the value for `(seed, frame, pixel, channel)`
//! is read at a fixed position of a ChaCha8 stream, so any single cell can be
//! regenerated without replaying the others.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::Exec;
use crate::render::FlowField;

pub const DEFAULT_CHANNELS: usize = 4;
pub const DEFAULT_DOWNSAMPLE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("flow of {width}x{height} is not divisible by {k}")]
    IndivisibleResolution { width: usize, height: usize, k: usize },
    #[error("invalid noise shape: {0}")]
    InvalidShape(String),
}

/// One noise frame, row-major with interleaved channels (`[row][col][channel]`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFrame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl NoiseFrame {
    pub fn at(&self, pixel: usize, channel: usize) -> f32 {
        self.data[pixel * self.channels + channel]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseVolume {
    pub seed: u64,
    pub flow_downsample: usize,
    pub frames: Vec<NoiseFrame>,
}

impl NoiseVolume {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames.first().map(|f| (f.width, f.height, f.channels)).unwrap_or((0, 0, 0))
    }
}

/// Keyed standard-normal source.
#[derive(Clone)]
struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    /// Stream for `(seed, frame, channel)`, positioned at `pixel`.
    fn new(seed: u64, frame: usize, channel: usize, pixel: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((frame as u64) << 16) | channel as u64);
        // two u64 (four 32-bit words) per sample
        rng.set_word_pos(pixel as u128 * 4);
        NormalStream { rng }
    }

    fn seek(&mut self, pixel: usize) {
        self.rng.set_word_pos(pixel as u128 * 4);
    }

    /// Box–Muller, cosine branch only, so each sample consumes exactly two words of u64.
    fn next(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// The standard-normal value keyed by `(seed, frame, pixel, channel)`.
pub fn keyed_normal(seed: u64, frame: usize, pixel: usize, channel: usize) -> f64 {
    NormalStream::new(seed, frame, channel, pixel).next()
}

fn check_shape(width: usize, height: usize, channels: usize) -> Result<(), NoiseError> {
    if width == 0 || height == 0 || channels == 0 || channels > u16::MAX as usize {
        return Err(NoiseError::InvalidShape(format!("{width}x{height}x{channels}")));
    }
    Ok(())
}

/// Frame-0 noise: i.i.d. N(0, 1) keyed by `(seed, 0, pixel, channel)`.
pub fn sample_base_noise(seed: u64, width: usize, height: usize, channels: usize) -> Result<NoiseFrame, NoiseError> {
    check_shape(width, height, channels)?;
    let n = width * height;
    let mut data = vec![0.0f32; n * channels];
    for c in 0..channels {
        let mut stream = NormalStream::new(seed, 0, c, 0);
        for p in 0..n {
            data[p * channels + c] = stream.next() as f32;
        }
    }
    Ok(NoiseFrame { width, height, channels, data })
}

/// Average-pools flow over `k × k` blocks and rescales it to the coarse grid.
/// A block is valid only if all of its pixels are.
pub fn downsample_flow(flow: &FlowField, k: usize) -> Result<FlowField, NoiseError> {
    let (w, h) = (flow.width, flow.height);
    if k == 0 || w % k != 0 || h % k != 0 {
        return Err(NoiseError::IndivisibleResolution { width: w, height: h, k });
    }
    if k == 1 {
        return Ok(flow.clone());
    }
    let (cw, ch) = (w / k, h / k);
    let mut out = FlowField { width: cw, height: ch, uv: vec![[0.0; 2]; cw * ch], valid: vec![true; cw * ch] };
    let norm = 1.0 / (k * k) as f64 / k as f64;
    for by in 0..ch {
        for bx in 0..cw {
            let (mut su, mut sv) = (0.0f64, 0.0f64);
            let mut valid = true;
            for y in by * k..(by + 1) * k {
                for x in bx * k..(bx + 1) * k {
                    let i = y * w + x;
                    su += flow.uv[i][0] as f64;
                    sv += flow.uv[i][1] as f64;
                    valid &= flow.valid[i];
                }
            }
            let o = by * cw + bx;
            out.uv[o] = [(su * norm) as f32, (sv * norm) as f32];
            out.valid[o] = valid;
        }
    }
    Ok(out)
}

/// Forward-splats `prev` along `flow` (at noise resolution) into frame `t`.
pub fn warp_noise(prev: &NoiseFrame, flow: &FlowField, seed: u64, t: usize) -> Result<NoiseFrame, NoiseError> {
    let (w, h, c) = (prev.width, prev.height, prev.channels);
    if flow.width != w || flow.height != h {
        return Err(NoiseError::ShapeMismatch(format!(
            "noise is {w}x{h}, flow is {}x{}",
            flow.width, flow.height
        )));
    }
    let n = w * h;
    let mut sum = vec![0.0f64; n * c];
    let mut count = vec![0u32; n];
    for row in 0..h {
        for col in 0..w {
            let src = row * w + col;
            if !flow.valid[src] {
                continue;
            }
            let [u, v] = flow.uv[src];
            let dx = (col as f64 + u as f64).round();
            let dy = (row as f64 + v as f64).round();
            if !(dx >= 0.0 && dy >= 0.0 && dx < w as f64 && dy < h as f64) {
                continue;
            }
            let dst = dy as usize * w + dx as usize;
            count[dst] += 1;
            for ch in 0..c {
                sum[dst * c + ch] += prev.data[src * c + ch] as f64;
            }
        }
    }
    let mut data = vec![0.0f32; n * c];
    for p in 0..n {
        if count[p] > 0 {
            let scale = 1.0 / (count[p] as f64).sqrt();
            for ch in 0..c {
                data[p * c + ch] = (sum[p * c + ch] * scale) as f32;
            }
        }
    }
    if count.contains(&0) {
        for ch in 0..c {
            let mut stream = NormalStream::new(seed, t, ch, 0);
            for p in (0..n).filter(|&p| count[p] == 0) {
                stream.seek(p);
                data[p * c + ch] = stream.next() as f32;
            }
        }
    }
    Ok(NoiseFrame { width: w, height: h, channels: c, data })
}

/// Full volume: base noise, then one warp per flow (downsampled by `k`).
/// `flows` are at render resolution; the noise is `width × height × channels`.
pub fn warp_volume(
    flows: &[FlowField],
    seed: u64,
    shape: (usize, usize, usize),
    k: usize,
) -> Result<NoiseVolume, NoiseError> {
    let (w, h, c) = shape;
    let mut frames = vec![sample_base_noise(seed, w, h, c)?];
    for (i, flow) in flows.iter().enumerate() {
        let coarse = downsample_flow(flow, k)?;
        let next = warp_noise(&frames[i], &coarse, seed, i + 1)?;
        frames.push(next);
    }
    Ok(NoiseVolume { seed, flow_downsample: k, frames })
}

/// One volume per seed over the same flows. Volumes are independent, so
/// they run in parallel under `exec`.
pub fn warp_volumes(
    exec: Exec,
    flows: &[FlowField],
    seeds: &[u64],
    shape: (usize, usize, usize),
    k: usize,
) -> Result<Vec<NoiseVolume>, NoiseError> {
    exec.try_map_range(seeds.len(), |i| warp_volume(flows, seeds[i], shape, k))
}
