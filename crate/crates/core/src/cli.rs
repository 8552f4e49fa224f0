//! Command-line surface. Exit codes: 0 success, 1 failure (including
//! validation findings), 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use image::{GrayImage, RgbImage};

use crate::dataset::export::{expand, read_manifest, resolve, scene_id, ManifestRecord, MANIFEST_FILE};
use crate::dataset::formats::{
    mask_from_gray, read_flow, read_gray_png, read_rgb_png, write_gray_png, write_noise, write_rgb_png,
};
use crate::dataset::{dataset_stats, generate, validate_dataset, ForgeConfig};
use crate::exec::Exec;
use crate::masks::{BinaryMaskSeq, MaskRole};
use crate::noisewarp::warp_volume;
use crate::physics::simulate_counterfactual;
use crate::reasoner::{
    reasoned_quadmask, GroundTruthReasoner, MaskStyle, RegionReasoner, RemoteReasoner, SecondPassConfig,
};
use crate::render::render_pair_with;
use crate::scene::SceneSpec;

#[derive(Parser, Debug)]
#[command(name = "void-forge", version, about = "Counterfactual video-pair dataset forge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset of counterfactual pairs.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// WIDTHxHEIGHT
        #[arg(long, default_value = "128x128", value_parser = parse_resolution)]
        resolution: [u32; 2],
        #[arg(long, default_value_t = 49)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        grid: usize,
        #[arg(long, env = "VOID_FORGE_JOBS")]
        jobs: Option<usize>,
        /// Relative weights of collision-chain, support-removal, obstruction-removal.
        #[arg(long, default_value = "1,1,1", value_parser = parse_mix)]
        template_mix: [f64; 3],
        /// Run every stage on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Check a dataset; prints a JSON report.
    Validate {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print dataset statistics as JSON.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Build quadmasks for a clip with a region reasoner.
    Quadmask {
        #[arg(long)]
        frames_dir: PathBuf,
        #[arg(long)]
        object_mask_dir: PathBuf,
        /// `ground-truth` or the URL of a remote reasoner.
        #[arg(long)]
        reasoner: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        grid: usize,
        /// Remote request timeout in seconds.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        /// Gridify the whole affected region, as in generated training data.
        #[arg(long)]
        training_style: bool,
    },
    /// Warp Gaussian noise along a directory of flow files.
    WarpNoise {
        #[arg(long)]
        flow_dir: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a side-by-side contact sheet for one scene.
    Inspect {
        #[arg(long)]
        dir: PathBuf,
        /// Scene id (`scene_000003`) or index (`3`).
        #[arg(long)]
        scene: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Show every n-th frame.
        #[arg(long, default_value_t = 8)]
        every: usize,
    },
}

fn parse_resolution(s: &str) -> Result<[u32; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok([parse(w)?, parse(h)?])
}

fn parse_mix(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|p: Vec<f64>| format!("expected 3 weights, got {}", p.len()))
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Generate { seed, count, out: dir, resolution, frames, grid, jobs, template_mix, sequential } => {
            let mut cfg = ForgeConfig::new(seed);
            cfg.sampler.resolution = resolution;
            cfg.sampler.frames = frames;
            cfg.sampler.template_mix = template_mix;
            cfg.grid = grid;
            let exec = if sequential { Exec::Sequential } else { Exec::default() };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let records = generate(&cfg, count, &dir, exec, jobs)?;
            let divergent = records.iter().filter(|r| r.first_divergence_frame.is_some()).count();
            let summary = serde_json::json!({ "pairs": records.len(), "divergent_pairs": divergent, "out": dir });
            writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
            Ok(0)
        }
        Command::Validate { dir } => {
            let report = validate_dataset(&dir).with_context(|| format!("reading {}", dir.display()))?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(if report.is_empty() { 0 } else { 1 })
        }
        Command::Stats { dir } => {
            if !dir.join(MANIFEST_FILE).exists() {
                bail!("MissingManifest: no {MANIFEST_FILE} in {}", dir.display());
            }
            let stats = dataset_stats(&dir)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?;
            Ok(0)
        }
        Command::Quadmask { frames_dir, object_mask_dir, reasoner, out: out_dir, grid, timeout, training_style } => {
            let style = if training_style { MaskStyle::Training } else { MaskStyle::Inference };
            quadmask_cmd(&QuadmaskArgs { frames_dir, mask_dir: object_mask_dir, reasoner, out_dir, grid, timeout, style }, out)
        }
        Command::WarpNoise { flow_dir, seed, k, channels, out: path } => {
            let files = list_files(&flow_dir, "flow_", "vflo")?;
            let flows = files.iter().map(|f| read_flow(f)).collect::<Result<Vec<_>, _>>()?;
            let (w, h) = flows.first().map(|f| (f.width, f.height)).context("no flow files")?;
            if k == 0 || w % k != 0 || h % k != 0 {
                bail!("--k {k} does not divide the flow resolution {w}x{h}");
            }
            let volume = warp_volume(&flows, seed, (w / k, h / k, channels), k)?;
            write_noise(&path, &volume)?;
            writeln!(out, "wrote {} frames of {}x{}x{} to {}", volume.frames.len(), w / k, h / k, channels, path.display())?;
            Ok(0)
        }
        Command::Inspect { dir, scene, out: path, every } => {
            let rec = find_record(&dir, &scene)?;
            let path = path.unwrap_or_else(|| dir.join("inspect").join(format!("{}.png", rec.scene_id)));
            contact_sheet(&dir, &rec, every.max(1), &path)?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(0)
        }
    }
}

/// Files in `dir` named `prefix*.ext`, sorted; falls back to every `*.ext`
/// when none carry the prefix.
fn list_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let mut all: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    all.sort();
    let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let preferred: Vec<PathBuf> = all.iter().filter(|p| name(p).starts_with(prefix)).cloned().collect();
    Ok(if preferred.is_empty() { all } else { preferred })
}

struct QuadmaskArgs {
    frames_dir: PathBuf,
    mask_dir: PathBuf,
    reasoner: String,
    out_dir: PathBuf,
    grid: usize,
    timeout: f64,
    style: MaskStyle,
}

fn quadmask_cmd(args: &QuadmaskArgs, out: &mut dyn Write) -> Result<i32> {
    let QuadmaskArgs { frames_dir, mask_dir, reasoner, out_dir, grid, timeout, style } = args;
    let (grid, timeout) = (*grid, *timeout);
    let frames: Vec<RgbImage> =
        list_files(frames_dir, "rgb_", "png")?.iter().map(|p| read_rgb_png(p)).collect::<Result<_, _>>()?;
    let masks: Vec<GrayImage> =
        list_files(mask_dir, "object_mask_", "png")?.iter().map(|p| read_gray_png(p)).collect::<Result<_, _>>()?;
    let (w, h) = frames.first().map(|f| (f.width() as usize, f.height() as usize)).context("no frames")?;
    if masks.len() != frames.len() {
        bail!("{} frames but {} object masks", frames.len(), masks.len());
    }
    let object = BinaryMaskSeq {
        width: w,
        height: h,
        role: MaskRole::ObjectMask,
        frames: masks.iter().map(mask_from_gray).collect(),
    };
    let reasoner: Box<dyn RegionReasoner> = if reasoner == "ground-truth" {
        Box::new(ground_truth_for(frames_dir, grid)?)
    } else if reasoner.starts_with("http://") || reasoner.starts_with("https://") {
        Box::new(RemoteReasoner::new(reasoner, grid).with_timeout(Duration::from_secs_f64(timeout.max(0.001))))
    } else {
        bail!("--reasoner must be `ground-truth` or an http(s) URL, got {reasoner:?}");
    };
    let (quad, result) = reasoned_quadmask(reasoner.as_ref(), &frames, &object, *style)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for t in 0..quad.len() {
        write_gray_png(&out_dir.join(expand("quadmask_%04d.png", t)), w, h, &quad.frame_bytes(t))?;
    }
    let summary = serde_json::json!({
        "frames": quad.len(),
        "affected_objects": result.affected_objects,
        "needs_second_pass": result.needs_second_pass,
        "histogram": quad.histogram(),
    });
    fs::write(out_dir.join("reasoner.json"), serde_json::to_string_pretty(&summary)?)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(0)
}

/// Ground truth for a clip rendered by the forge: re-simulates from the
/// `scene.json` next to (or one level above) the frames directory.
fn ground_truth_for(frames_dir: &Path, grid: usize) -> Result<GroundTruthReasoner> {
    let spec_path = [frames_dir.join("scene.json"), frames_dir.join("../scene.json")]
        .into_iter()
        .find(|p| p.exists())
        .context("ground-truth reasoner needs scene.json beside or above the frames directory")?;
    let spec = SceneSpec::from_json(&fs::read_to_string(&spec_path)?)?;
    let pair = simulate_counterfactual(&spec)?;
    let renders = render_pair_with(Exec::default(), &pair, &spec)?;
    Ok(GroundTruthReasoner::new(&pair, &renders, &spec, grid, &SecondPassConfig::default())?)
}

fn find_record(dir: &Path, scene: &str) -> Result<ManifestRecord> {
    let id = scene.parse::<u64>().map(scene_id).unwrap_or_else(|_| scene.to_string());
    for rec in read_manifest(dir)? {
        let rec = rec.map_err(anyhow::Error::msg)?;
        if rec.scene_id == id {
            return Ok(rec);
        }
    }
    bail!("no scene {id} in {}", dir.join(MANIFEST_FILE).display())
}

/// Rows of frames; columns: factual, counterfactual, quadmask.
fn contact_sheet(dir: &Path, rec: &ManifestRecord, every: usize, path: &Path) -> Result<()> {
    let (w, h) = (rec.resolution[0] as usize, rec.resolution[1] as usize);
    let rows: Vec<usize> = (0..rec.frames).step_by(every).collect();
    let (sw, sh) = (3 * w, rows.len() * h);
    let mut sheet = vec![0u8; 3 * sw * sh];
    for (r, &t) in rows.iter().enumerate() {
        let fac = read_rgb_png(&resolve(dir, &rec.paths.factual_rgb, t))?.into_raw();
        let cf = read_rgb_png(&resolve(dir, &rec.paths.counterfactual_rgb, t))?.into_raw();
        let quad: Vec<u8> = read_gray_png(&resolve(dir, &rec.paths.quadmask, t))?
            .into_raw()
            .into_iter()
            .flat_map(|v| [v; 3])
            .collect();
        for (c, tile) in [fac, cf, quad].iter().enumerate() {
            for y in 0..h {
                let dst = 3 * ((r * h + y) * sw + c * w);
                sheet[dst..dst + 3 * w].copy_from_slice(&tile[3 * y * w..3 * (y + 1) * w]);
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_rgb_png(path, sw, sh, &sheet)?;
    Ok(())
}
