//! Fidelity metrics.

use thiserror::Error;

use crate::masks::BinaryMaskSeq;

/// Stand-in for an infinite PSNR in serialized output.
pub const PSNR_SENTINEL: f64 = 99.0;

#[derive(Debug, Error, PartialEq)]
#[error("shape mismatch: {0} vs {1} values")]
pub struct ShapeMismatch(pub usize, pub usize);

/// `10 log10(1 / MSE)` over values in `[0, 1]`; `+inf` when identical.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64, ShapeMismatch> {
    if a.len() != b.len() {
        return Err(ShapeMismatch(a.len(), b.len()));
    }
    let se: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(psnr_from_se(se, a.len()))
}

/// PSNR of 8-bit data on the same `[0, 1]` scale.
pub fn psnr_u8(a: &[u8], b: &[u8]) -> Result<f64, ShapeMismatch> {
    if a.len() != b.len() {
        return Err(ShapeMismatch(a.len(), b.len()));
    }
    let se: f64 = a.iter().zip(b).map(|(&x, &y)| ((x as f64 - y as f64) / 255.0).powi(2)).sum();
    Ok(psnr_from_se(se, a.len()))
}

fn psnr_from_se(se: f64, n: usize) -> f64 {
    if se == 0.0 || n == 0 {
        return f64::INFINITY;
    }
    10.0 * (n as f64 / se).log10()
}

/// Finite value for JSON; infinities become [`PSNR_SENTINEL`].
pub fn serialize_psnr(db: f64) -> f64 {
    if db.is_finite() {
        db
    } else {
        PSNR_SENTINEL
    }
}

/// `|a ∧ b| / |a ∨ b|`, with two empty masks scoring 1.
pub fn mask_iou(a: &BinaryMaskSeq, b: &BinaryMaskSeq) -> Result<f64, ShapeMismatch> {
    if a.frames.len() != b.frames.len() || a.width != b.width || a.height != b.height {
        return Err(ShapeMismatch(a.count(), b.count()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        if fa.len() != fb.len() {
            return Err(ShapeMismatch(fa.len(), fb.len()));
        }
        for (&x, &y) in fa.iter().zip(fb) {
            inter += (x && y) as usize;
            union += (x || y) as usize;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
