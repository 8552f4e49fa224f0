//! Binary mask sequences, gridification, and quadmask / trimask composition.
//!
//! Quadmask labels per pixel, from membership in the object mask `M_o` and
//! the affected-region mask `M_a`:
//!
//! | in `M_o` | in `M_a` | label     |
//! |----------|----------|-----------|
//! | yes      | no       | Black     |
//! | yes      | yes      | DarkGrey  |
//! | no       | yes      | LightGrey |
//! | no       | no       | White     |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::FramePacket;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown body id {0}")]
    UnknownId(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskRole {
    ObjectMask,
    AffectedOrig,
    AffectedCount,
    AffectedUnion,
}

/// `frames × height × width` booleans, row-major per frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMaskSeq {
    pub width: usize,
    pub height: usize,
    pub role: MaskRole,
    pub frames: Vec<Vec<bool>>,
}

impl BinaryMaskSeq {
    pub fn empty(width: usize, height: usize, frames: usize, role: MaskRole) -> Self {
        BinaryMaskSeq { width, height, role, frames: vec![vec![false; width * height]; frames] }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, t: usize, row: usize, col: usize) -> bool {
        self.frames[t][row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.frames.iter().map(|f| f.iter().filter(|&&b| b).count()).sum()
    }

    pub fn is_all_false(&self) -> bool {
        self.frames.iter().all(|f| f.iter().all(|&b| !b))
    }

    pub fn with_role(mut self, role: MaskRole) -> Self {
        self.role = role;
        self
    }

    pub fn same_shape(&self, other: &BinaryMaskSeq) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height || self.len() != other.len() {
            return Err(MaskError::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.len(),
                self.height,
                self.width,
                other.len(),
                other.height,
                other.width
            )));
        }
        Ok(())
    }

    /// Pixel-wise OR.
    pub fn union(&self, other: &BinaryMaskSeq, role: MaskRole) -> Result<BinaryMaskSeq, MaskError> {
        self.same_shape(other)?;
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| *x || *y).collect())
            .collect();
        Ok(BinaryMaskSeq { width: self.width, height: self.height, role, frames })
    }
}

/// Side lengths of the cells of a `g × g` grid over a `width × height` image
/// (ceiling division; the last row/column of cells is clipped).
pub fn cell_size(width: usize, height: usize, g: usize) -> (usize, usize) {
    (width.div_ceil(g).max(1), height.div_ceil(g).max(1))
}

/// Pixel rectangle `(row0, row1, col0, col1)` (half-open) covered by grid cell `(row, col)`.
pub fn cell_rect(width: usize, height: usize, g: usize, cell_row: usize, cell_col: usize) -> (usize, usize, usize, usize) {
    let (cw, ch) = cell_size(width, height, g);
    let r0 = (cell_row * ch).min(height);
    let c0 = (cell_col * cw).min(width);
    (r0, (r0 + ch).min(height), c0, (c0 + cw).min(width))
}

/// Cells `(row, col)` of a `g × g` grid that contain at least one set pixel.
pub fn occupied_cells(frame: &[bool], width: usize, height: usize, g: usize) -> BTreeSet<(usize, usize)> {
    let (cw, ch) = cell_size(width, height, g);
    let mut cells = BTreeSet::new();
    for row in 0..height {
        for col in 0..width {
            if frame[row * width + col] {
                cells.insert((row / ch, col / cw));
            }
        }
    }
    cells
}

/// Rasterizes a set of grid cells back to a pixel mask.
pub fn rasterize_cells(cells: &BTreeSet<(usize, usize)>, width: usize, height: usize, g: usize) -> Vec<bool> {
    let mut out = vec![false; width * height];
    for &(r, c) in cells {
        let (r0, r1, c0, c1) = cell_rect(width, height, g, r, c);
        for row in r0..r1 {
            out[row * width + c0..row * width + c1].iter_mut().for_each(|p| *p = true);
        }
    }
    out
}

/// Coarsens each frame to a `g × g` grid: a cell is fully set iff it contains a set pixel.
pub fn gridify(mask: &BinaryMaskSeq, g: usize) -> BinaryMaskSeq {
    let g = g.max(1);
    let frames = mask
        .frames
        .iter()
        .map(|f| rasterize_cells(&occupied_cells(f, mask.width, mask.height, g), mask.width, mask.height, g))
        .collect();
    BinaryMaskSeq { width: mask.width, height: mask.height, role: mask.role, frames }
}

/// `M_o`: pixels whose factual instance id is a removal target.
pub fn object_mask(
    packets: &[FramePacket],
    removed_ids: &BTreeSet<u32>,
    known_ids: &BTreeSet<u32>,
) -> Result<BinaryMaskSeq, MaskError> {
    if let Some(&bad) = removed_ids.iter().find(|id| !known_ids.contains(id)) {
        return Err(MaskError::UnknownId(bad));
    }
    let (w, h) = packet_dims(packets)?;
    let frames = packets.iter().map(|p| p.instance.iter().map(|id| removed_ids.contains(id)).collect()).collect();
    Ok(BinaryMaskSeq { width: w, height: h, role: MaskRole::ObjectMask, frames })
}

fn packet_dims(packets: &[FramePacket]) -> Result<(usize, usize), MaskError> {
    let (w, h) = packets.first().map(|p| (p.width, p.height)).unwrap_or((0, 0));
    if packets.iter().any(|p| p.width != w || p.height != h) {
        return Err(MaskError::ShapeMismatch("frame sizes differ within the clip".into()));
    }
    Ok((w, h))
}

fn check_aligned(factual: &[FramePacket], counterfactual: &[FramePacket]) -> Result<(usize, usize), MaskError> {
    let dims = packet_dims(factual)?;
    if factual.len() != counterfactual.len() || packet_dims(counterfactual)? != dims {
        return Err(MaskError::ShapeMismatch(format!(
            "{} factual vs {} counterfactual frames",
            factual.len(),
            counterfactual.len()
        )));
    }
    Ok(dims)
}

/// Pixels whose shadow bit differs between the two variants.
pub fn shadow_difference(factual: &[FramePacket], counterfactual: &[FramePacket]) -> Result<BinaryMaskSeq, MaskError> {
    let (w, h) = check_aligned(factual, counterfactual)?;
    let frames = factual
        .iter()
        .zip(counterfactual)
        .map(|(f, c)| f.shadow.iter().zip(&c.shadow).map(|(a, b)| a != b).collect())
        .collect();
    Ok(BinaryMaskSeq { width: w, height: h, role: MaskRole::AffectedOrig, frames })
}

/// Silhouettes of `ids` in one packet sequence.
pub fn silhouettes(packets: &[FramePacket], ids: &BTreeSet<u32>, role: MaskRole) -> Result<BinaryMaskSeq, MaskError> {
    let (w, h) = packet_dims(packets)?;
    let frames = packets.iter().map(|p| p.instance.iter().map(|id| ids.contains(id)).collect()).collect();
    Ok(BinaryMaskSeq { width: w, height: h, role, frames })
}

/// Raw (pixel-level) affected region: affected-body silhouettes in either
/// variant plus every pixel whose shadow state differs between variants.
pub fn affected_pixel_region(
    factual: &[FramePacket],
    counterfactual: &[FramePacket],
    affected_ids: &BTreeSet<u32>,
) -> Result<BinaryMaskSeq, MaskError> {
    let (w, h) = check_aligned(factual, counterfactual)?;
    let frames = factual
        .iter()
        .zip(counterfactual)
        .map(|(f, c)| {
            (0..w * h)
                .map(|i| {
                    affected_ids.contains(&f.instance[i])
                        || affected_ids.contains(&c.instance[i])
                        || f.shadow[i] != c.shadow[i]
                })
                .collect()
        })
        .collect();
    Ok(BinaryMaskSeq { width: w, height: h, role: MaskRole::AffectedUnion, frames })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuadLabel {
    Black,
    DarkGrey,
    LightGrey,
    White,
}

impl QuadLabel {
    pub const ALL: [QuadLabel; 4] = [QuadLabel::Black, QuadLabel::DarkGrey, QuadLabel::LightGrey, QuadLabel::White];

    /// Persisted 8-bit value.
    pub fn byte(self) -> u8 {
        match self {
            QuadLabel::Black => 0,
            QuadLabel::DarkGrey => 85,
            QuadLabel::LightGrey => 170,
            QuadLabel::White => 255,
        }
    }

    pub fn from_byte(b: u8) -> Option<QuadLabel> {
        match b {
            0 => Some(QuadLabel::Black),
            85 => Some(QuadLabel::DarkGrey),
            170 => Some(QuadLabel::LightGrey),
            255 => Some(QuadLabel::White),
            _ => None,
        }
    }

    pub fn classify(in_object: bool, in_affected: bool) -> QuadLabel {
        match (in_object, in_affected) {
            (true, false) => QuadLabel::Black,
            (true, true) => QuadLabel::DarkGrey,
            (false, true) => QuadLabel::LightGrey,
            (false, false) => QuadLabel::White,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuadMask {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<QuadLabel>>,
}

impl QuadMask {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Pixel counts per label, indexed by [`QuadLabel::index`].
    pub fn histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for l in self.frames.iter().flatten() {
            h[l.index()] += 1;
        }
        h
    }

    pub fn frame_bytes(&self, t: usize) -> Vec<u8> {
        self.frames[t].iter().map(|l| l.byte()).collect()
    }
}

/// Applies the four-way label rule per pixel per frame.
pub fn compose_quadmask(object: &BinaryMaskSeq, affected: &BinaryMaskSeq) -> Result<QuadMask, MaskError> {
    object.same_shape(affected)?;
    let frames = object
        .frames
        .iter()
        .zip(&affected.frames)
        .map(|(o, a)| o.iter().zip(a).map(|(&o, &a)| QuadLabel::classify(o, a)).collect())
        .collect();
    Ok(QuadMask { width: object.width, height: object.height, frames })
}

/// Ablation baseline: Black on the object, LightGrey everywhere else.
pub fn compose_trimask(object: &BinaryMaskSeq) -> QuadMask {
    let frames = object
        .frames
        .iter()
        .map(|o| o.iter().map(|&o| if o { QuadLabel::Black } else { QuadLabel::LightGrey }).collect())
        .collect();
    QuadMask { width: object.width, height: object.height, frames }
}
