//! Scene forging and the on-disk dataset layout.
//!
//! ```text
//! manifest.jsonl
//! scene_000000/
//!   scene.json  trajectory.json  noise.vnse
//!   object_mask_%04d.png  quadmask_%04d.png  trimask_%04d.png
//!   factual/        rgb_%04d.png instance_%04d.png shadow_%04d.png surface_%04d.png flow_%04d.vflo
//!   counterfactual/ (same)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::formats::{io_err, mask_bytes, write_flow, write_gray_png, write_noise, write_rgb_png, FormatError, FORMAT_VERSION};
use super::metrics::{psnr, psnr_u8, serialize_psnr};
use crate::exec::Exec;
use crate::masks::{
    affected_pixel_region, compose_quadmask, compose_trimask, gridify, object_mask, BinaryMaskSeq, MaskError, QuadMask,
};
use crate::noisewarp::{warp_volume, NoiseError, NoiseVolume, DEFAULT_CHANNELS, DEFAULT_DOWNSAMPLE};
use crate::physics::{simulate_counterfactual, CounterfactualPair, PhysicsError, Trajectory};
use crate::reasoner::{second_pass_from_pair, ReasonerError, SecondPassConfig, DEFAULT_GRID};
use crate::render::{render_pair_with, FlowField, FramePacket, RenderError, RenderedPair};
use crate::scene::{sample_scene, splitmix64, SamplerParams, SceneError, SceneSpec};

pub const MANIFEST_SCHEMA: &str = "void-forge/manifest/1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Index offset between resampling attempts for a scene slot.
const ATTEMPT_STRIDE: u64 = 1 << 40;
const MAX_ATTEMPTS: u64 = 8;
const NOISE_SALT: u64 = 0x6e6f_6973_6577_6172;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("inconsistent pair: {0}")]
    Consistency(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug)]
pub struct ForgeConfig {
    pub master_seed: u64,
    pub sampler: SamplerParams,
    pub grid: usize,
    pub noise_downsample: usize,
    pub noise_channels: usize,
    pub second_pass: SecondPassConfig,
}

impl ForgeConfig {
    pub fn new(master_seed: u64) -> Self {
        ForgeConfig {
            master_seed,
            sampler: SamplerParams::default(),
            grid: DEFAULT_GRID,
            noise_downsample: DEFAULT_DOWNSAMPLE,
            noise_channels: DEFAULT_CHANNELS,
            second_pass: SecondPassConfig::default(),
        }
    }

    pub fn check(&self) -> Result<(), ForgeError> {
        self.sampler.check()?;
        let [w, h] = self.sampler.resolution;
        let k = self.noise_downsample as u32;
        if k == 0 || w % k != 0 || h % k != 0 {
            return Err(ForgeError::Config(format!("resolution {w}x{h} is not divisible by noise downsample {k}")));
        }
        if self.grid == 0 || self.noise_channels == 0 {
            return Err(ForgeError::Config("grid and noise channels must be positive".into()));
        }
        Ok(())
    }
}

/// Everything produced for one scene slot, in memory.
#[derive(Clone, Debug)]
pub struct ScenePackage {
    pub index: u64,
    pub spec: SceneSpec,
    pub pair: CounterfactualPair,
    pub renders: RenderedPair,
    pub object: BinaryMaskSeq,
    /// `M_a`, gridified.
    pub affected: BinaryMaskSeq,
    pub quadmask: QuadMask,
    pub trimask: QuadMask,
    pub noise: NoiseVolume,
    pub needs_second_pass: bool,
    pub grid: usize,
}

pub fn scene_id(index: u64) -> String {
    format!("scene_{index:06}")
}

pub fn noise_seed(scene_seed: u64) -> u64 {
    splitmix64(scene_seed ^ NOISE_SALT)
}

/// Samples, simulates, and renders scene slot `index`. A slot whose sample
/// cannot be placed or blows up is resampled under a shifted index.
pub fn forge_scene(cfg: &ForgeConfig, index: u64, exec: Exec) -> Result<ScenePackage, ForgeError> {
    cfg.check()?;
    let mut attempt = 0;
    let (spec, pair) = loop {
        let sampled = sample_scene(cfg.master_seed, index + attempt * ATTEMPT_STRIDE, &cfg.sampler);
        let retry = match sampled {
            Ok(spec) => match simulate_counterfactual(&spec) {
                Ok(pair) => break (spec, pair),
                Err(e @ PhysicsError::NumericalBlowup { .. }) => ForgeError::from(e),
                Err(e) => return Err(e.into()),
            },
            Err(e @ SceneError::Placement { .. }) => ForgeError::from(e),
            Err(e) => return Err(e.into()),
        };
        attempt += 1;
        if attempt >= MAX_ATTEMPTS {
            return Err(retry);
        }
    };
    package_pair(spec, pair, index, cfg, exec)
}

/// Renders a simulated pair and derives masks and noise.
pub fn package_pair(
    spec: SceneSpec,
    pair: CounterfactualPair,
    index: u64,
    cfg: &ForgeConfig,
    exec: Exec,
) -> Result<ScenePackage, ForgeError> {
    let renders = render_pair_with(exec, &pair, &spec)?;
    let object = object_mask(&renders.factual, &pair.removed_ids, &spec.body_ids())?;
    let raw = affected_pixel_region(&renders.factual, &renders.counterfactual, &pair.affected_ids)?;
    let affected = gridify(&raw, cfg.grid);
    let quadmask = compose_quadmask(&object, &affected)?;
    let trimask = compose_trimask(&object);
    let k = cfg.noise_downsample;
    let shape = (spec.width() / k, spec.height() / k, cfg.noise_channels);
    let noise = warp_volume(&renders.counterfactual_flows, noise_seed(spec.scene_seed), shape, k)?;
    let needs_second_pass = second_pass_from_pair(&pair, &spec, &cfg.second_pass);
    Ok(ScenePackage {
        index,
        spec,
        pair,
        renders,
        object,
        affected,
        quadmask,
        trimask,
        noise,
        needs_second_pass,
        grid: cfg.grid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    pub seed: u64,
    pub flow_downsample: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

/// Paths relative to the dataset root; `%04d` stands for the frame number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestPaths {
    pub scene: String,
    pub trajectory: String,
    pub factual_rgb: String,
    pub factual_instance: String,
    pub factual_shadow: String,
    pub factual_surface: String,
    pub factual_flow: String,
    pub counterfactual_rgb: String,
    pub counterfactual_instance: String,
    pub counterfactual_shadow: String,
    pub counterfactual_surface: String,
    pub counterfactual_flow: String,
    pub object_mask: String,
    pub quadmask: String,
    pub trimask: String,
    pub noise: String,
}

impl ManifestPaths {
    pub fn for_scene(id: &str) -> Self {
        let p = |rest: &str| format!("{id}/{rest}");
        ManifestPaths {
            scene: p("scene.json"),
            trajectory: p("trajectory.json"),
            factual_rgb: p("factual/rgb_%04d.png"),
            factual_instance: p("factual/instance_%04d.png"),
            factual_shadow: p("factual/shadow_%04d.png"),
            factual_surface: p("factual/surface_%04d.png"),
            factual_flow: p("factual/flow_%04d.vflo"),
            counterfactual_rgb: p("counterfactual/rgb_%04d.png"),
            counterfactual_instance: p("counterfactual/instance_%04d.png"),
            counterfactual_shadow: p("counterfactual/shadow_%04d.png"),
            counterfactual_surface: p("counterfactual/surface_%04d.png"),
            counterfactual_flow: p("counterfactual/flow_%04d.vflo"),
            object_mask: p("object_mask_%04d.png"),
            quadmask: p("quadmask_%04d.png"),
            trimask: p("trimask_%04d.png"),
            noise: p("noise.vnse"),
        }
    }

    /// Per-frame file patterns of one variant.
    pub fn variant(&self, counterfactual: bool) -> VariantPaths<'_> {
        if counterfactual {
            VariantPaths {
                rgb: &self.counterfactual_rgb,
                instance: &self.counterfactual_instance,
                shadow: &self.counterfactual_shadow,
                surface: &self.counterfactual_surface,
                flow: &self.counterfactual_flow,
            }
        } else {
            VariantPaths {
                rgb: &self.factual_rgb,
                instance: &self.factual_instance,
                shadow: &self.factual_shadow,
                surface: &self.factual_surface,
                flow: &self.factual_flow,
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VariantPaths<'a> {
    pub rgb: &'a str,
    pub instance: &'a str,
    pub shadow: &'a str,
    pub surface: &'a str,
    pub flow: &'a str,
}

/// Substitutes frame `t` into a `%04d` pattern.
pub fn expand(pattern: &str, t: usize) -> String {
    pattern.replace("%04d", &format!("{t:04}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub schema: String,
    pub format_version: u32,
    pub scene_id: String,
    pub scene_index: u64,
    pub scene_seed: u64,
    pub template: String,
    pub removed_ids: Vec<u32>,
    pub affected_ids: Vec<u32>,
    pub first_divergence_frame: Option<usize>,
    pub needs_second_pass: bool,
    pub frames: usize,
    pub resolution: [u32; 2],
    pub grid: usize,
    /// Factual vs counterfactual, before and after 8-bit quantization.
    pub psnr_db: f64,
    pub psnr_quantized_db: f64,
    pub noise: NoiseInfo,
    pub paths: ManifestPaths,
}

/// Both trajectories, persisted for the prefix check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub factual: Trajectory,
    pub counterfactual: Trajectory,
}

fn check_consistent(pkg: &ScenePackage) -> Result<(), ForgeError> {
    let t = pkg.spec.frames;
    let r = &pkg.renders;
    let lens = [
        ("factual frames", r.factual.len(), t),
        ("counterfactual frames", r.counterfactual.len(), t),
        ("factual flows", r.factual_flows.len(), t.saturating_sub(1)),
        ("counterfactual flows", r.counterfactual_flows.len(), t.saturating_sub(1)),
        ("object mask", pkg.object.len(), t),
        ("quadmask", pkg.quadmask.len(), t),
        ("trimask", pkg.trimask.len(), t),
        ("noise", pkg.noise.frames.len(), t),
        ("factual trajectory", pkg.pair.factual.frames(), t),
        ("counterfactual trajectory", pkg.pair.counterfactual.frames(), t),
    ];
    for (what, found, expected) in lens {
        if found != expected {
            return Err(ForgeError::Consistency(format!("{what}: {found} frames, expected {expected}")));
        }
    }
    Ok(())
}

fn pair_psnr(a: &[FramePacket], b: &[FramePacket]) -> Result<(f64, f64), ForgeError> {
    let flat = |p: &[FramePacket]| p.iter().flat_map(|f| f.rgb.iter().copied()).collect::<Vec<f32>>();
    let flat8 = |p: &[FramePacket]| p.iter().flat_map(|f| f.rgb8()).collect::<Vec<u8>>();
    let f = psnr(&flat(a), &flat(b)).map_err(|e| ForgeError::Consistency(e.to_string()))?;
    let q = psnr_u8(&flat8(a), &flat8(b)).map_err(|e| ForgeError::Consistency(e.to_string()))?;
    Ok((f, q))
}

pub fn manifest_record(pkg: &ScenePackage) -> Result<ManifestRecord, ForgeError> {
    let id = scene_id(pkg.index);
    let (psnr_db, psnr_quantized_db) = pair_psnr(&pkg.renders.factual, &pkg.renders.counterfactual)?;
    let (w, h, c) = pkg.noise.shape();
    Ok(ManifestRecord {
        schema: MANIFEST_SCHEMA.into(),
        format_version: FORMAT_VERSION,
        scene_index: pkg.index,
        scene_seed: pkg.spec.scene_seed,
        template: pkg.spec.template.name().into(),
        removed_ids: pkg.pair.removed_ids.iter().copied().collect(),
        affected_ids: pkg.pair.affected_ids.iter().copied().collect(),
        first_divergence_frame: pkg.pair.first_divergence_frame,
        needs_second_pass: pkg.needs_second_pass,
        frames: pkg.spec.frames,
        resolution: pkg.spec.resolution,
        grid: pkg.grid,
        psnr_db: serialize_psnr(psnr_db),
        psnr_quantized_db: serialize_psnr(psnr_quantized_db),
        noise: NoiseInfo {
            seed: pkg.noise.seed,
            flow_downsample: pkg.noise.flow_downsample,
            width: w,
            height: h,
            channels: c,
        },
        paths: ManifestPaths::for_scene(&id),
        scene_id: id,
    })
}

fn create_dir(path: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(io_err(path))
}

fn remove_dir(path: &Path) -> Result<(), FormatError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(io_err(path))?;
    }
    Ok(())
}

fn write_variant(root: &Path, packets: &[FramePacket], flows: &[FlowField], paths: VariantPaths) -> Result<(), FormatError> {
    for (t, p) in packets.iter().enumerate() {
        write_rgb_png(&root.join(expand(paths.rgb, t)), p.width, p.height, &p.rgb8())?;
        write_gray_png(&root.join(expand(paths.instance, t)), p.width, p.height, &p.instance8())?;
        write_gray_png(&root.join(expand(paths.shadow, t)), p.width, p.height, &mask_bytes(&p.shadow))?;
        write_gray_png(&root.join(expand(paths.surface, t)), p.width, p.height, &p.surface)?;
    }
    for (t, f) in flows.iter().enumerate() {
        write_flow(&root.join(expand(paths.flow, t)), f)?;
    }
    Ok(())
}

/// Writes one scene under `out_dir`, atomically: files go to a hidden
/// staging directory that is renamed into place once complete.
pub fn export_pair(pkg: &ScenePackage, out_dir: &Path) -> Result<ManifestRecord, ForgeError> {
    check_consistent(pkg)?;
    let record = manifest_record(pkg)?;
    let id = &record.scene_id;
    let staging = out_dir.join(format!(".staging-{id}"));
    remove_dir(&staging)?;
    // write under the staging dir with paths relative to the scene
    let paths = ManifestPaths::for_scene(".");
    create_dir(&staging.join("factual"))?;
    create_dir(&staging.join("counterfactual"))?;

    write_text(&staging.join(&paths.scene), &pkg.spec.to_json())?;
    let traj = TrajectoryFile { factual: pkg.pair.factual.clone(), counterfactual: pkg.pair.counterfactual.clone() };
    let traj_json = serde_json::to_string(&traj).map_err(|e| ForgeError::Consistency(e.to_string()))?;
    write_text(&staging.join(&paths.trajectory), &traj_json)?;

    let r = &pkg.renders;
    write_variant(&staging, &r.factual, &r.factual_flows, paths.variant(false))?;
    write_variant(&staging, &r.counterfactual, &r.counterfactual_flows, paths.variant(true))?;
    let (w, h) = (pkg.spec.width(), pkg.spec.height());
    for t in 0..pkg.spec.frames {
        write_gray_png(&staging.join(expand(&paths.object_mask, t)), w, h, &mask_bytes(&pkg.object.frames[t]))?;
        write_gray_png(&staging.join(expand(&paths.quadmask, t)), w, h, &pkg.quadmask.frame_bytes(t))?;
        write_gray_png(&staging.join(expand(&paths.trimask, t)), w, h, &pkg.trimask.frame_bytes(t))?;
    }
    write_noise(&staging.join(&paths.noise), &pkg.noise)?;

    let target = out_dir.join(id);
    remove_dir(&target)?;
    fs::rename(&staging, &target).map_err(io_err(&target))?;
    Ok(record)
}

/// Appends one record to `manifest.jsonl`.
pub fn append_manifest(out_dir: &Path, record: &ManifestRecord) -> Result<(), ForgeError> {
    let path = out_dir.join(MANIFEST_FILE);
    let line = serde_json::to_string(record).map_err(|e| ForgeError::Consistency(e.to_string()))?;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
    writeln!(f, "{line}").map_err(io_err(&path))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<Result<ManifestRecord, String>>, FormatError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<ManifestRecord>(l).map_err(|e| e.to_string()))
        .collect())
}

/// Forges and exports scene slots `0..count` with up to `jobs` workers.
/// Each worker owns its scene end to end; the manifest is written once,
/// in slot order, after every scene is on disk.
pub fn generate(cfg: &ForgeConfig, count: usize, out_dir: &Path, exec: Exec, jobs: usize) -> Result<Vec<ManifestRecord>, ForgeError> {
    cfg.check()?;
    create_dir(out_dir)?;
    let manifest = out_dir.join(MANIFEST_FILE);
    if manifest.exists() {
        fs::remove_file(&manifest).map_err(io_err(&manifest))?;
    }
    let records = exec.with_jobs(jobs, || {
        exec.try_map_range(count, |i| {
            let pkg = forge_scene(cfg, i as u64, exec)?;
            export_pair(&pkg, out_dir)
        })
    })?;
    let staging = out_dir.join(".staging-manifest.jsonl");
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).map_err(|e| ForgeError::Consistency(e.to_string()))?);
        text.push('\n');
    }
    write_text(&staging, &text)?;
    fs::rename(&staging, &manifest).map_err(io_err(&manifest))?;
    Ok(records)
}

/// Absolute path of a manifest pattern for frame `t`.
pub fn resolve(dir: &Path, pattern: &str, t: usize) -> PathBuf {
    dir.join(expand(pattern, t))
}
