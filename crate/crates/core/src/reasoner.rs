//! Region reasoners: given the factual frames and the object mask, decide
//! which regions the removal affects and whether the clip needs the
//! flow-warped second pass.
//!
//! [`GroundTruthReasoner`] answers from the simulator. [`RemoteReasoner`]
//! forwards the question to an HTTP service speaking the JSON protocol below
//! and validates everything it gets back.
//!
//! Request: `{"schema", "frames": [b64 png], "object_mask": [b64 png], "grid": G}`.
//! Response: `{"affected_objects": [str], "affected_orig": [b64 png],
//! "counterfactual_cells": [[[row, col], ...] per frame], "needs_second_pass": bool}`.

use std::collections::BTreeSet;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::formats::{decode_png, encode_png, gray_from_dynamic, mask_bytes, mask_from_gray};
use crate::masks::{
    compose_quadmask, gridify, occupied_cells, rasterize_cells, shadow_difference, silhouettes, BinaryMaskSeq,
    MaskError, MaskRole, QuadMask,
};
use crate::physics::CounterfactualPair;
use crate::render::RenderedPair;
use crate::scene::SceneSpec;

pub const REASONER_SCHEMA: &str = "void-forge/reasoner/1";
pub const DEFAULT_GRID: usize = 8;

/// Grid cells per frame, `(row, col)`.
pub type CellSets = Vec<BTreeSet<(usize, usize)>>;

#[derive(Clone, Debug, PartialEq)]
pub struct AffectedRegions {
    pub grid: usize,
    /// Original positions, pixel resolution.
    pub orig: BinaryMaskSeq,
    /// Counterfactual positions as grid cells.
    pub counterfactual_cells: CellSets,
}

impl AffectedRegions {
    pub fn count_mask(&self) -> BinaryMaskSeq {
        let (w, h) = (self.orig.width, self.orig.height);
        let frames = self.counterfactual_cells.iter().map(|c| rasterize_cells(c, w, h, self.grid)).collect();
        BinaryMaskSeq { width: w, height: h, role: MaskRole::AffectedCount, frames }
    }

    /// `M_a` in the given style.
    pub fn union(&self, style: MaskStyle) -> Result<BinaryMaskSeq, MaskError> {
        let u = self.orig.union(&self.count_mask(), MaskRole::AffectedUnion)?;
        Ok(match style {
            MaskStyle::Inference => u,
            MaskStyle::Training => gridify(&u, self.grid),
        })
    }
}

/// How the two parts of `M_a` are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskStyle {
    /// `M_a^orig ∨ M_a^count`, original positions kept at pixel resolution.
    Inference,
    /// The whole region gridified, as in generated training data.
    Training,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReasonerOutput {
    pub affected_objects: Vec<String>,
    pub regions: AffectedRegions,
    pub needs_second_pass: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema {0:?} is not {REASONER_SCHEMA}")]
    Schema(String),
    #[error("HTTP status {0}")]
    HttpStatus(u16),
    #[error("{field}: expected {expected} frames, got {found}")]
    FrameCount { field: &'static str, expected: usize, found: usize },
    #[error("frame {frame}: cell [{row}, {col}] outside the {grid}x{grid} grid")]
    CellOutOfRange { frame: usize, row: i64, col: i64, grid: usize },
    #[error("frame {frame}: bad base64: {reason}")]
    BadBase64 { frame: usize, reason: String },
    #[error("frame {frame}: bad PNG: {reason}")]
    BadImage { frame: usize, reason: String },
    #[error("frame {frame}: mask is {found_w}x{found_h}, expected {width}x{height}")]
    MaskSize { frame: usize, width: usize, height: usize, found_w: usize, found_h: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum ReasonerError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("request timed out")]
    Timeout,
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub trait RegionReasoner {
    /// Both outputs in one exchange.
    fn analyze(&self, frames: &[RgbImage], object: &BinaryMaskSeq) -> Result<ReasonerOutput, ReasonerError>;

    fn infer_affected(&self, frames: &[RgbImage], object: &BinaryMaskSeq) -> Result<AffectedRegions, ReasonerError> {
        Ok(self.analyze(frames, object)?.regions)
    }

    fn needs_second_pass(&self, frames: &[RgbImage], object: &BinaryMaskSeq) -> Result<bool, ReasonerError> {
        Ok(self.analyze(frames, object)?.needs_second_pass)
    }
}

/// Quadmask from any reasoner: `M_o` as given, `M_a` from the reasoner.
pub fn reasoned_quadmask(
    reasoner: &dyn RegionReasoner,
    frames: &[RgbImage],
    object: &BinaryMaskSeq,
    style: MaskStyle,
) -> Result<(QuadMask, ReasonerOutput), ReasonerError> {
    let out = reasoner.analyze(frames, object)?;
    let q = compose_quadmask(object, &out.regions.union(style)?)?;
    Ok((q, out))
}

/// When removal counts as "significant motion".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondPassConfig {
    /// Displacement threshold in multiples of the body's characteristic size.
    pub displacement_factor: f64,
    /// Consecutive frames of free-fall acceleration present only in the counterfactual.
    pub freefall_frames: usize,
    /// Per-frame drop in vertical speed, as a fraction of `g / fps`, that counts as falling.
    pub freefall_fraction: f64,
}

impl Default for SecondPassConfig {
    fn default() -> Self {
        SecondPassConfig { displacement_factor: 10.0, freefall_frames: 3, freefall_fraction: 0.5 }
    }
}

/// Second-pass trigger from simulator ground truth.
pub fn second_pass_from_pair(pair: &CounterfactualPair, spec: &SceneSpec, cfg: &SecondPassConfig) -> bool {
    let g = spec.gravity.norm();
    let drop = cfg.freefall_fraction * g / spec.fps;
    for &id in &pair.affected_ids {
        let Some(body) = spec.body(id) else { continue };
        let Some(k) = spec.bodies.iter().position(|b| b.id == id) else { continue };
        let f: Vec<_> = pair.factual.states.iter().map(|s| s[k]).collect();
        let c: Vec<_> = pair.counterfactual.states.iter().map(|s| s[k]).collect();
        let limit = cfg.displacement_factor * body.shape.characteristic_size();
        if f.iter().zip(&c).any(|(a, b)| (a.position - b.position).norm() > limit) {
            return true;
        }
        if g > 0.0 && cfg.freefall_frames > 0 {
            let mut run = 0;
            for t in 1..f.len() {
                let falling = |s: &[crate::physics::BodyState]| s[t].velocity.z - s[t - 1].velocity.z <= -drop;
                if falling(&c) && !falling(&f) {
                    run += 1;
                    if run >= cfg.freefall_frames {
                        return true;
                    }
                } else {
                    run = 0;
                }
            }
        }
    }
    false
}

/// Answers from the simulator and renderer; ignores the frames it is shown.
#[derive(Clone, Debug)]
pub struct GroundTruthReasoner {
    output: ReasonerOutput,
}

impl GroundTruthReasoner {
    pub fn new(
        pair: &CounterfactualPair,
        renders: &RenderedPair,
        spec: &SceneSpec,
        grid: usize,
        second_pass: &SecondPassConfig,
    ) -> Result<Self, ReasonerError> {
        let orig = silhouettes(&renders.factual, &pair.affected_ids, MaskRole::AffectedOrig)?
            .union(&shadow_difference(&renders.factual, &renders.counterfactual)?, MaskRole::AffectedOrig)?;
        let count = silhouettes(&renders.counterfactual, &pair.affected_ids, MaskRole::AffectedCount)?;
        let counterfactual_cells = count.frames.iter().map(|f| occupied_cells(f, count.width, count.height, grid)).collect();
        let affected_objects = pair.affected_ids.iter().map(|id| format!("body {id}")).collect();
        Ok(GroundTruthReasoner {
            output: ReasonerOutput {
                affected_objects,
                regions: AffectedRegions { grid, orig, counterfactual_cells },
                needs_second_pass: second_pass_from_pair(pair, spec, second_pass),
            },
        })
    }

    pub fn output(&self) -> &ReasonerOutput {
        &self.output
    }
}

impl RegionReasoner for GroundTruthReasoner {
    fn analyze(&self, _frames: &[RgbImage], _object: &BinaryMaskSeq) -> Result<ReasonerOutput, ReasonerError> {
        Ok(self.output.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub schema: String,
    pub frames: Vec<String>,
    pub object_mask: Vec<String>,
    pub grid: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReasonerResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub affected_objects: Vec<String>,
    pub affected_orig: Vec<String>,
    pub counterfactual_cells: Vec<Vec<[i64; 2]>>,
    pub needs_second_pass: bool,
}

impl ReasonerResponse {
    /// Wire form of a reasoner answer.
    pub fn from_output(out: &ReasonerOutput) -> Result<Self, ReasonerError> {
        let r = &out.regions;
        let affected_orig = r
            .orig
            .frames
            .iter()
            .map(|f| gray_b64(r.orig.width, r.orig.height, mask_bytes(f)))
            .collect::<Result<_, _>>()?;
        let counterfactual_cells =
            r.counterfactual_cells.iter().map(|c| c.iter().map(|&(a, b)| [a as i64, b as i64]).collect()).collect();
        Ok(ReasonerResponse {
            schema: Some(REASONER_SCHEMA.into()),
            affected_objects: out.affected_objects.clone(),
            affected_orig,
            counterfactual_cells,
            needs_second_pass: out.needs_second_pass,
        })
    }

    /// Checks the response against the request shape and decodes it.
    pub fn into_output(self, frames: usize, width: usize, height: usize, grid: usize) -> Result<ReasonerOutput, ProtocolError> {
        if let Some(s) = &self.schema {
            if s != REASONER_SCHEMA {
                return Err(ProtocolError::Schema(s.clone()));
            }
        }
        for (field, found) in [("affected_orig", self.affected_orig.len()), ("counterfactual_cells", self.counterfactual_cells.len())] {
            if found != frames {
                return Err(ProtocolError::FrameCount { field, expected: frames, found });
            }
        }
        let mut orig = BinaryMaskSeq::empty(width, height, 0, MaskRole::AffectedOrig);
        for (frame, s) in self.affected_orig.iter().enumerate() {
            let bytes = B64.decode(s).map_err(|e| ProtocolError::BadBase64 { frame, reason: e.to_string() })?;
            let img = decode_png(&bytes)
                .and_then(gray_from_dynamic)
                .map_err(|e| ProtocolError::BadImage { frame, reason: e.to_string() })?;
            if img.width() as usize != width || img.height() as usize != height {
                return Err(ProtocolError::MaskSize {
                    frame,
                    width,
                    height,
                    found_w: img.width() as usize,
                    found_h: img.height() as usize,
                });
            }
            orig.frames.push(mask_from_gray(&img));
        }
        let mut cells = Vec::with_capacity(frames);
        for (frame, list) in self.counterfactual_cells.iter().enumerate() {
            let mut set = BTreeSet::new();
            for &[row, col] in list {
                if row < 0 || col < 0 || row >= grid as i64 || col >= grid as i64 {
                    return Err(ProtocolError::CellOutOfRange { frame, row, col, grid });
                }
                set.insert((row as usize, col as usize));
            }
            cells.push(set);
        }
        Ok(ReasonerOutput {
            affected_objects: self.affected_objects,
            regions: AffectedRegions { grid, orig, counterfactual_cells: cells },
            needs_second_pass: self.needs_second_pass,
        })
    }
}

fn gray_b64(width: usize, height: usize, bytes: Vec<u8>) -> Result<String, ReasonerError> {
    let img = GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| ReasonerError::InvalidInput("mask size".into()))?;
    encode_b64(DynamicImage::ImageLuma8(img))
}

fn encode_b64(img: DynamicImage) -> Result<String, ReasonerError> {
    let png = encode_png(&img).map_err(|e| ReasonerError::InvalidInput(e.to_string()))?;
    Ok(B64.encode(png))
}

/// Client for an external reasoning service.
#[derive(Clone, Debug)]
pub struct RemoteReasoner {
    pub endpoint: String,
    pub grid: usize,
    pub timeout: Duration,
}

impl RemoteReasoner {
    pub fn new(endpoint: impl Into<String>, grid: usize) -> Self {
        RemoteReasoner { endpoint: endpoint.into(), grid, timeout: Duration::from_secs(60) }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn build_request(&self, frames: &[RgbImage], object: &BinaryMaskSeq) -> Result<ReasonerRequest, ReasonerError> {
        if frames.len() != object.len() {
            return Err(ReasonerError::InvalidInput(format!("{} frames, {} mask frames", frames.len(), object.len())));
        }
        if frames.iter().any(|f| f.width() as usize != object.width || f.height() as usize != object.height) {
            return Err(ReasonerError::InvalidInput("frame and mask sizes differ".into()));
        }
        Ok(ReasonerRequest {
            schema: REASONER_SCHEMA.into(),
            frames: frames.iter().map(|f| encode_b64(DynamicImage::ImageRgb8(f.clone()))).collect::<Result<_, _>>()?,
            object_mask: object
                .frames
                .iter()
                .map(|m| gray_b64(object.width, object.height, mask_bytes(m)))
                .collect::<Result<_, _>>()?,
            grid: self.grid,
        })
    }

    fn exchange(&self, body: String) -> Result<String, ReasonerError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(body)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ProtocolError::HttpStatus(status).into());
        }
        resp.body_mut().with_config().limit(1 << 30).read_to_string().map_err(transport_error)
    }
}

fn transport_error(e: ureq::Error) -> ReasonerError {
    match e {
        ureq::Error::Timeout(_) => ReasonerError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ReasonerError::Timeout,
        other => ReasonerError::Transport(other.to_string()),
    }
}

impl RegionReasoner for RemoteReasoner {
    fn analyze(&self, frames: &[RgbImage], object: &BinaryMaskSeq) -> Result<ReasonerOutput, ReasonerError> {
        let request = self.build_request(frames, object)?;
        let body = serde_json::to_string(&request).map_err(|e| ReasonerError::InvalidInput(e.to_string()))?;
        let text = self.exchange(body)?;
        let response: ReasonerResponse =
            serde_json::from_str(&text).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
        Ok(response.into_output(object.len(), object.width, object.height, self.grid)?)
    }
}
