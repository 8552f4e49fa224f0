//! On-disk encodings: PNG frames, VFLO flow fields, VNSE noise volumes.
//!
//! VFLO: `"VFLO"`, u32 version, u32 w, u32 h, then `h × w` records of
//! `(f32 u, f32 v, u8 valid)`. VNSE: `"VNSE"`, u32 version, u32 T, u32 w,
//! u32 h, u32 C, then `T × h × w × C` f32 values. All little-endian.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use thiserror::Error;

use crate::noisewarp::{NoiseFrame, NoiseVolume};
use crate::render::FlowField;

pub const FLOW_MAGIC: &[u8; 4] = b"VFLO";
pub const NOISE_MAGIC: &[u8; 4] = b"VNSE";
pub const FORMAT_VERSION: u32 = 1;
pub const FLOW_HEADER_BYTES: usize = 16;
pub const NOISE_HEADER_BYTES: usize = 24;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated at byte {offset} (need {needed} bytes)")]
    Truncated { offset: usize, needed: usize },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("image: {0}")]
    Image(String),
    #[error("expected {expected}, found {found}")]
    PixelFormat { expected: &'static str, found: String },
    #[error("buffer of {len} bytes does not fit {width}x{height}")]
    Size { len: usize, width: usize, height: usize },
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn rgb_image(width: usize, height: usize, data: Vec<u8>) -> Result<RgbImage, FormatError> {
    let len = data.len();
    RgbImage::from_raw(width as u32, height as u32, data).ok_or(FormatError::Size { len, width, height })
}

fn gray_image(width: usize, height: usize, data: Vec<u8>) -> Result<GrayImage, FormatError> {
    let len = data.len();
    GrayImage::from_raw(width as u32, height as u32, data).ok_or(FormatError::Size { len, width, height })
}

/// PNG bytes for an image.
pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>, FormatError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| FormatError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<DynamicImage, FormatError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| FormatError::Image(e.to_string()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), FormatError> {
    let img = DynamicImage::ImageRgb8(rgb_image(width, height, rgb.to_vec())?);
    write_bytes(path, &encode_png(&img)?)
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<(), FormatError> {
    let img = DynamicImage::ImageLuma8(gray_image(width, height, values.to_vec())?);
    write_bytes(path, &encode_png(&img)?)
}

/// Decodes an 8-bit RGB PNG, refusing any other pixel format.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage, FormatError> {
    match decode_png(&read_bytes(path)?)? {
        DynamicImage::ImageRgb8(img) => Ok(img),
        other => Err(FormatError::PixelFormat { expected: "rgb8", found: format!("{:?}", other.color()) }),
    }
}

/// Decodes an 8-bit single-channel PNG, refusing any other pixel format.
pub fn read_gray_png(path: &Path) -> Result<GrayImage, FormatError> {
    gray_from_dynamic(decode_png(&read_bytes(path)?)?)
}

pub fn gray_from_dynamic(img: DynamicImage) -> Result<GrayImage, FormatError> {
    match img {
        DynamicImage::ImageLuma8(img) => Ok(img),
        other => Err(FormatError::PixelFormat { expected: "luma8", found: format!("{:?}", other.color()) }),
    }
}

/// Boolean mask as 0 / 255.
pub fn mask_bytes(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|&b| if b { 255 } else { 0 }).collect()
}

pub fn mask_from_gray(img: &GrayImage) -> Vec<bool> {
    img.as_raw().iter().map(|&v| v >= 128).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() < self.pos + n {
            return Err(FormatError::Truncated { offset: self.bytes.len(), needed: self.pos + n });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        Ok(())
    }
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(FLOW_HEADER_BYTES + 9 * flow.uv.len());
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(flow.width as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for (uv, valid) in flow.uv.iter().zip(&flow.valid) {
        out.extend_from_slice(&uv[0].to_le_bytes());
        out.extend_from_slice(&uv[1].to_le_bytes());
        out.push(*valid as u8);
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(FLOW_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n = width * height;
    let mut flow = FlowField { width, height, uv: Vec::with_capacity(n), valid: Vec::with_capacity(n) };
    for _ in 0..n {
        let u = r.f32()?;
        let v = r.f32()?;
        flow.uv.push([u, v]);
        flow.valid.push(r.take(1)?[0] != 0);
    }
    Ok(flow)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<(), FormatError> {
    write_bytes(path, &encode_flow(flow))
}

pub fn read_flow(path: &Path) -> Result<FlowField, FormatError> {
    decode_flow(&read_bytes(path)?)
}

pub fn encode_noise(volume: &NoiseVolume) -> Vec<u8> {
    let (w, h, c) = volume.shape();
    let mut out = Vec::with_capacity(NOISE_HEADER_BYTES + 4 * volume.frames.len() * w * h * c);
    out.extend_from_slice(NOISE_MAGIC);
    for v in [FORMAT_VERSION, volume.frames.len() as u32, w as u32, h as u32, c as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in &volume.frames {
        for x in &f.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Frames of a persisted volume. Seed and downsample factor live in the manifest.
pub fn decode_noise(bytes: &[u8]) -> Result<Vec<NoiseFrame>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(NOISE_MAGIC)?;
    let t = r.u32()? as usize;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let n = width * height * channels;
    let mut frames = Vec::with_capacity(t);
    for _ in 0..t {
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        frames.push(NoiseFrame { width, height, channels, data });
    }
    Ok(frames)
}

pub fn write_noise(path: &Path, volume: &NoiseVolume) -> Result<(), FormatError> {
    write_bytes(path, &encode_noise(volume))
}

pub fn read_noise(path: &Path) -> Result<Vec<NoiseFrame>, FormatError> {
    decode_noise(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_one() -> FlowField {
        FlowField { width: 2, height: 1, uv: vec![[1.5, -0.25], [0.0, 0.0]], valid: vec![true, false] }
    }

    #[test]
    fn flow_file_size_follows_layout() {
        let bytes = encode_flow(&two_by_one());
        // header, then two 9-byte records
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 2 * (4 + 4 + 1));
        assert_eq!(bytes.len(), 34);
        assert_eq!(&bytes[16..20], &1.5f32.to_le_bytes());
        assert_eq!(bytes[24], 1);
        assert_eq!(bytes[33], 0);
    }

    #[test]
    fn flow_round_trip_and_errors() {
        let f = two_by_one();
        let bytes = encode_flow(&f);
        assert_eq!(decode_flow(&bytes).unwrap(), f);
        match decode_flow(&bytes[..30]) {
            Err(FormatError::Truncated { offset: 30, .. }) => {}
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_flow(&bad), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn noise_header_is_24_bytes() {
        let frame = NoiseFrame { width: 2, height: 1, channels: 3, data: vec![0.5; 6] };
        let v = NoiseVolume { seed: 1, flow_downsample: 4, frames: vec![frame.clone(), frame] };
        let bytes = encode_noise(&v);
        assert_eq!(bytes.len(), 24 + 2 * 6 * 4);
        assert_eq!(decode_noise(&bytes).unwrap(), v.frames);
        assert!(matches!(decode_noise(&bytes[..40]), Err(FormatError::Truncated { offset: 40, .. })));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let rgb: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 7) as u8).collect();
        write_rgb_png(&p, 5, 4, &rgb).unwrap();
        assert_eq!(read_rgb_png(&p).unwrap().into_raw(), rgb);
        assert!(matches!(read_gray_png(&p), Err(FormatError::PixelFormat { .. })));
        write_gray_png(&p, 5, 4, &rgb[..20]).unwrap();
        assert_eq!(read_gray_png(&p).unwrap().into_raw(), rgb[..20].to_vec());
    }
}
