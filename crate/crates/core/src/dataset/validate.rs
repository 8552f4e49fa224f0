//! Dataset validation: re-reads every artifact a manifest points at and
//! checks it against the pair semantics.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::export::{read_manifest, resolve, ManifestRecord, TrajectoryFile, VariantPaths, MANIFEST_FILE, MANIFEST_SCHEMA};
use super::formats::{mask_from_gray, read_flow, read_gray_png, read_noise, read_rgb_png, FormatError, FORMAT_VERSION};
use crate::masks::QuadLabel;
use crate::render::{consistent_pixels, inverse_warp_psnr, FlowField, PixelLabels};
use crate::scene::{validate_spec, SceneSpec};

/// Inverse-warp PSNR every stored flow must reach on its consistent pixels.
pub const FLOW_PSNR_THRESHOLD: f64 = 35.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckKind {
    MissingManifest,
    SchemaViolation,
    MissingFile,
    ConsistencyViolation,
    EncodingViolation,
    PartitionViolation,
    SoundnessViolation,
    FlowFidelity,
    PrefixViolation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetViolation {
    /// Scene id, or the manifest line when the record does not parse.
    pub record: String,
    pub check: CheckKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub records: usize,
    pub violations: Vec<DatasetViolation>,
}

impl DatasetReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, check: CheckKind) -> bool {
        self.violations.iter().any(|v| v.check == check)
    }

    pub fn checks(&self) -> BTreeSet<CheckKind> {
        self.violations.iter().map(|v| v.check).collect()
    }
}

struct Ctx<'a> {
    record: &'a str,
    out: &'a mut Vec<DatasetViolation>,
}

impl Ctx<'_> {
    fn push(&mut self, check: CheckKind, frame: Option<usize>, message: impl Into<String>) {
        self.out.push(DatasetViolation { record: self.record.to_string(), check, frame, message: message.into() });
    }

    /// Records a read failure: absent files as `MissingFile`, the rest as encoding problems.
    fn read<T>(&mut self, frame: Option<usize>, r: Result<T, FormatError>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(FormatError::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => {
                self.push(CheckKind::MissingFile, frame, path.display().to_string());
                None
            }
            Err(e) => {
                self.push(CheckKind::EncodingViolation, frame, e.to_string());
                None
            }
        }
    }
}

/// One decoded variant frame.
struct Frame {
    rgb: Vec<u8>,
    instance: Vec<u32>,
    shadow: Vec<bool>,
    surface: Vec<u8>,
}

impl Frame {
    fn labels(&self) -> PixelLabels<'_> {
        PixelLabels { instance: &self.instance, shadow: &self.shadow, surface: &self.surface }
    }
}

fn to_unit(rgb: &[u8]) -> Vec<f32> {
    rgb.iter().map(|&v| v as f32 / 255.0).collect()
}

/// Validates the dataset under `dir`. Only the absence of a readable
/// directory is an error; everything else is reported.
pub fn validate_dataset(dir: &Path) -> std::io::Result<DatasetReport> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} is not a directory", dir.display())));
    }
    let mut report = DatasetReport::default();
    let records = match read_manifest(dir) {
        Ok(r) => r,
        Err(e) => {
            report.violations.push(DatasetViolation {
                record: MANIFEST_FILE.into(),
                check: CheckKind::MissingManifest,
                frame: None,
                message: e.to_string(),
            });
            return Ok(report);
        }
    };
    let mut seen = BTreeSet::new();
    for (line, rec) in records.into_iter().enumerate() {
        report.records += 1;
        match rec {
            Ok(rec) => {
                let mut ctx = Ctx { record: &rec.scene_id, out: &mut report.violations };
                if !seen.insert(rec.scene_id.clone()) {
                    ctx.push(CheckKind::ConsistencyViolation, None, "duplicate scene id");
                }
                check_record(dir, &rec, &mut ctx);
            }
            Err(e) => report.violations.push(DatasetViolation {
                record: format!("{MANIFEST_FILE}:{}", line + 1),
                check: CheckKind::SchemaViolation,
                frame: None,
                message: e,
            }),
        }
    }
    Ok(report)
}

fn check_record(dir: &Path, rec: &ManifestRecord, ctx: &mut Ctx) {
    if rec.schema != MANIFEST_SCHEMA || rec.format_version != FORMAT_VERSION {
        ctx.push(CheckKind::SchemaViolation, None, format!("schema {} v{}", rec.schema, rec.format_version));
        return;
    }
    let p = &rec.paths;
    let spec_path = dir.join(&p.scene);
    let Some(text) = ctx.read(None, fs::read_to_string(&spec_path).map_err(super::formats::io_err(&spec_path))) else {
        return;
    };
    let spec = match SceneSpec::from_json(&text) {
        Ok(s) => s,
        Err(e) => return ctx.push(CheckKind::SchemaViolation, None, format!("scene.json: {e}")),
    };
    for v in validate_spec(&spec).violations {
        ctx.push(CheckKind::SchemaViolation, None, format!("scene.json {}: {}", v.path, v.message));
    }
    if spec.scene_seed != rec.scene_seed
        || spec.frames != rec.frames
        || spec.resolution != rec.resolution
        || spec.removal_targets.iter().copied().collect::<Vec<_>>() != rec.removed_ids
    {
        ctx.push(CheckKind::ConsistencyViolation, None, "manifest disagrees with scene.json");
    }
    let t_count = rec.frames;
    let (w, h) = (rec.resolution[0] as usize, rec.resolution[1] as usize);
    let removed: BTreeSet<u32> = rec.removed_ids.iter().copied().collect();

    let load = |ctx: &mut Ctx, v: VariantPaths, t: usize| -> Option<Frame> {
        let rgb = ctx.read(Some(t), read_rgb_png(&resolve(dir, v.rgb, t)))?;
        let maps = [v.instance, v.shadow, v.surface]
            .map(|pattern| ctx.read(Some(t), read_gray_png(&resolve(dir, pattern, t))));
        let [Some(inst), Some(shadow), Some(surface)] = maps else { return None };
        let size = (w as u32, h as u32);
        if [rgb.dimensions(), inst.dimensions(), shadow.dimensions(), surface.dimensions()].iter().any(|d| *d != size) {
            ctx.push(CheckKind::ConsistencyViolation, Some(t), "frame size differs from the manifest");
            return None;
        }
        Some(Frame {
            rgb: rgb.into_raw(),
            instance: inst.into_raw().into_iter().map(u32::from).collect(),
            shadow: mask_from_gray(&shadow),
            surface: surface.into_raw(),
        })
    };

    let mut prev: Option<(Frame, Frame)> = None;
    for t in 0..t_count {
        let fac = load(ctx, p.variant(false), t);
        let cf = load(ctx, p.variant(true), t);
        let quad = ctx.read(Some(t), read_gray_png(&resolve(dir, &p.quadmask, t)));
        let tri = ctx.read(Some(t), read_gray_png(&resolve(dir, &p.trimask, t)));
        let obj = ctx.read(Some(t), read_gray_png(&resolve(dir, &p.object_mask, t)));
        let (Some(fac), Some(cf), Some(quad), Some(tri), Some(obj)) = (fac, cf, quad, tri, obj) else {
            prev = None;
            continue;
        };
        if quad.dimensions() != (w as u32, h as u32) || tri.dimensions() != quad.dimensions() || obj.dimensions() != quad.dimensions() {
            ctx.push(CheckKind::ConsistencyViolation, Some(t), "mask size differs from the manifest");
            prev = None;
            continue;
        }
        check_masks(ctx, t, &fac, &cf, quad.as_raw(), tri.as_raw(), &mask_from_gray(&obj), &removed);
        if let Some((pf, pc)) = prev.take() {
            for (name, pattern, a, b) in [("factual", &p.factual_flow, &pf, &fac), ("counterfactual", &p.counterfactual_flow, &pc, &cf)] {
                if let Some(flow) = ctx.read(Some(t - 1), read_flow(&resolve(dir, pattern, t - 1))) {
                    check_flow(ctx, t - 1, name, &flow, a, b, w, h);
                }
            }
        }
        prev = Some((fac, cf));
    }
    for pattern in [&p.factual_flow, &p.counterfactual_flow] {
        if resolve(dir, pattern, t_count.saturating_sub(1)).exists() {
            ctx.push(CheckKind::ConsistencyViolation, None, format!("flow file beyond frame {}", t_count - 1));
        }
    }
    check_noise(dir, rec, ctx);
    check_prefix(dir, rec, &spec, ctx);
}

#[allow(clippy::too_many_arguments)]
fn check_masks(ctx: &mut Ctx, t: usize, fac: &Frame, cf: &Frame, quad: &[u8], tri: &[u8], obj: &[bool], removed: &BTreeSet<u32>) {
    let mut bad_value = None;
    let mut partition = 0usize;
    let mut unsound = Vec::new();
    for i in 0..quad.len() {
        let Some(label) = QuadLabel::from_byte(quad[i]) else {
            bad_value.get_or_insert((i, quad[i]));
            continue;
        };
        let in_object = removed.contains(&fac.instance[i]);
        let black_side = matches!(label, QuadLabel::Black | QuadLabel::DarkGrey);
        let expected_tri = if in_object { QuadLabel::Black } else { QuadLabel::LightGrey };
        if black_side != in_object || obj[i] != in_object || tri[i] != expected_tri.byte() {
            partition += 1;
        }
        if label == QuadLabel::White && fac.rgb[3 * i..3 * i + 3] != cf.rgb[3 * i..3 * i + 3] {
            unsound.push(i);
        }
    }
    if let Some((i, v)) = bad_value {
        ctx.push(CheckKind::EncodingViolation, Some(t), format!("quadmask value {v} at pixel {i}"));
    }
    if partition > 0 {
        ctx.push(CheckKind::PartitionViolation, Some(t), format!("{partition} pixels disagree with the object mask"));
    }
    if let Some(&first) = unsound.first() {
        ctx.push(
            CheckKind::SoundnessViolation,
            Some(t),
            format!("{} changed pixels labeled White (first at pixel {first})", unsound.len()),
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn check_flow(ctx: &mut Ctx, t: usize, variant: &str, flow: &FlowField, a: &Frame, b: &Frame, w: usize, h: usize) {
    if flow.width != w || flow.height != h {
        return ctx.push(CheckKind::ConsistencyViolation, Some(t), format!("{variant} flow is {}x{}", flow.width, flow.height));
    }
    let mask = consistent_pixels(flow, a.labels(), b.labels());
    let db = inverse_warp_psnr(&to_unit(&a.rgb), &to_unit(&b.rgb), flow, &mask);
    if db < FLOW_PSNR_THRESHOLD {
        ctx.push(CheckKind::FlowFidelity, Some(t), format!("{variant} inverse-warp PSNR {db:.2} dB"));
    }
}

fn check_noise(dir: &Path, rec: &ManifestRecord, ctx: &mut Ctx) {
    let Some(frames) = ctx.read(None, read_noise(&dir.join(&rec.paths.noise))) else { return };
    let n = &rec.noise;
    let shape_ok = frames.len() == rec.frames
        && frames.iter().all(|f| (f.width, f.height, f.channels) == (n.width, n.height, n.channels))
        && n.width * n.flow_downsample == rec.resolution[0] as usize
        && n.height * n.flow_downsample == rec.resolution[1] as usize;
    if !shape_ok {
        ctx.push(CheckKind::ConsistencyViolation, None, "noise volume shape disagrees with the manifest");
    }
    if frames.iter().any(|f| f.data.iter().any(|v| !v.is_finite())) {
        ctx.push(CheckKind::EncodingViolation, None, "non-finite noise value");
    }
}

fn check_prefix(dir: &Path, rec: &ManifestRecord, spec: &SceneSpec, ctx: &mut Ctx) {
    let path = dir.join(&rec.paths.trajectory);
    let Some(text) = ctx.read(None, fs::read_to_string(&path).map_err(super::formats::io_err(&path))) else { return };
    let traj: TrajectoryFile = match serde_json::from_str(&text) {
        Ok(t) => t,
        Err(e) => return ctx.push(CheckKind::SchemaViolation, None, format!("trajectory.json: {e}")),
    };
    let (f, c) = (&traj.factual, &traj.counterfactual);
    if f.frames() != rec.frames || c.frames() != rec.frames || f.ids() != c.ids() || f.ids() != spec.bodies.iter().map(|b| b.id).collect::<Vec<_>>() {
        return ctx.push(CheckKind::ConsistencyViolation, None, "trajectory shape disagrees with the scene");
    }
    let removed: BTreeSet<u32> = rec.removed_ids.iter().copied().collect();
    let end = rec.first_divergence_frame.unwrap_or(rec.frames).min(rec.frames);
    for t in 0..end {
        for (a, b) in f.states[t].iter().zip(&c.states[t]) {
            if removed.contains(&a.id) {
                continue;
            }
            let same = |x: f64, y: f64| x.to_bits() == y.to_bits();
            let p = (a.position, b.position);
            if !(same(p.0.x, p.1.x) && same(p.0.y, p.1.y) && same(p.0.z, p.1.z)) {
                return ctx.push(CheckKind::PrefixViolation, Some(t), format!("body {} differs before divergence", a.id));
            }
        }
    }
    if c.states.iter().flatten().any(|s| s.alive && removed.contains(&s.id)) {
        ctx.push(CheckKind::ConsistencyViolation, None, "removed body alive in the counterfactual");
    }
}
