//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints exactly one PASS/FAIL line; the process exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{cli, mock_server, tree_hash, Reply};
use void_forge::dataset::export::{read_manifest, resolve, TrajectoryFile};
use void_forge::dataset::formats::{read_flow, read_gray_png, read_rgb_png};
use void_forge::dataset::{dataset_stats, forge_scene, validate_dataset, ForgeConfig, ManifestRecord};
use void_forge::masks::{gridify, BinaryMaskSeq, MaskRole, QuadLabel};
use void_forge::noisewarp::warp_volumes;
use void_forge::physics::{initial_states, kinetic_energy, momentum, simulate, simulate_counterfactual, step_in_place};
use void_forge::reasoner::{
    reasoned_quadmask, GroundTruthReasoner, MaskStyle, ProtocolError, ReasonerError, ReasonerResponse, RemoteReasoner,
};
use void_forge::render::FlowField;
use void_forge::scene::{BodySpec, Mass, SceneSpec, Shape};
use void_forge::{Exec, Vec3};

// Pinned tolerances and budgets.
const DETERMINISM_BUDGET: Duration = Duration::from_secs(5 * 60);
const MOMENTUM_REL_TOL: f64 = 1e-9;
const ENERGY_REL_TOL: f64 = 1e-6;
const ANALYTIC_TOL: f64 = 1e-9;
/// Floating-point resolution of a summed kinetic energy; no physical gain is this small.
const KE_ROUNDING: f64 = 16.0 * f64::EPSILON;
const PREFIX_PAIRS: usize = 50;
const SOUNDNESS_PAIRS: usize = 50;
const GRIDIFY_MASKS: usize = 1000;
const FLOW_SCENES: usize = 20;
const FLOW_MIN_PSNR: f64 = 35.0;
const NOISE_SEEDS: usize = 10_000;
const NOISE_FRAMES: usize = 13;
const NOISE_MEAN_TOL: f64 = 0.05;
const NOISE_VAR_RANGE: (f64, f64) = (0.9, 1.1);
const SCALE_PAIRS: usize = 200;
const SCALE_BUDGET: Duration = Duration::from_secs(30 * 60);
const SCALE_MIN_DIVERGENT: f64 = 0.6;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS [{n:>2}] {name}: {detail} ({secs:.1}s)"),
        Err(detail) => println!("FAIL [{n:>2}] {name}: {detail} ({secs:.1}s)"),
    }
    outcome.is_ok()
}

fn dynamic(id: u32, shape: Shape, mass: f64, p: Vec3, v: Vec3, e: f64) -> BodySpec {
    BodySpec { id, shape, mass: Mass::Dynamic(mass), position0: p, velocity0: v, restitution: e, albedo: [0.5; 3] }
}

/// Bodies on a jittered 3×3 grid well above the ground, moving toward the
/// centre, with gravity off.
fn weightless_scene(rng: &mut ChaCha8Rng, restitution: impl Fn(&mut ChaCha8Rng) -> f64) -> SceneSpec {
    let mut spec = SceneSpec::empty([64, 64]);
    spec.gravity = Vec3::ZERO;
    let mut id = 1;
    for gx in -1..=1 {
        for gy in -1..=1 {
            let p = Vec3::new(gx as f64 * 0.6 + rng.random_range(-0.1..0.1), gy as f64 * 0.6 + rng.random_range(-0.1..0.1), 2.0);
            let shape = if rng.random_bool(0.7) {
                Shape::Sphere { radius: rng.random_range(0.08..0.15) }
            } else {
                let h = rng.random_range(0.06..0.12);
                Shape::Box { half_extents: Vec3::new(h, h, h) }
            };
            let speed = rng.random_range(0.5..2.5);
            let v = Vec3::new(-p.x, -p.y, 0.0).normalized() * speed;
            let e = restitution(rng);
            spec.bodies.push(dynamic(id, shape, rng.random_range(0.5..3.0), p, v, e));
            id += 1;
        }
    }
    spec
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_p, mut worst_e, mut contacts) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..20 {
        let spec = weightless_scene(&mut rng, |_| 1.0);
        let traj = simulate(&spec, &BTreeSet::new()).map_err(|e| e.to_string())?;
        ensure(traj.frames() == 49, || format!("{} frames", traj.frames()))?;
        contacts += traj.contact_events.len();
        let p0 = momentum(&traj.states[0], &spec);
        let e0 = kinetic_energy(&traj.states[0], &spec);
        // the bodies converge, so |p0| can be near zero; scale by Σ m|v|
        let scale: f64 = spec.bodies.iter().map(|b| b.mass.value().unwrap_or(0.0) * b.velocity0.norm()).sum();
        for s in &traj.states {
            worst_p = worst_p.max((momentum(s, &spec) - p0).norm() / scale);
            worst_e = worst_e.max(rel(kinetic_energy(s, &spec), e0));
        }
    }
    ensure(contacts > 0, || "elastic scenes produced no contacts".into())?;
    ensure(worst_p <= MOMENTUM_REL_TOL, || format!("momentum drift {worst_p:e}"))?;
    ensure(worst_e <= ENERGY_REL_TOL, || format!("energy drift {worst_e:e}"))?;

    let (mut events, mut worst_rise) = (0, 0.0f64);
    for _ in 0..20 {
        let spec = weightless_scene(&mut rng, |r| r.random_range(0.0..0.9));
        let mut states = initial_states(&spec, &BTreeSet::new());
        let mut impulses = Vec::new();
        for k in 0..spec.frames * spec.substeps {
            let before = kinetic_energy(&states, &spec);
            impulses.clear();
            step_in_place(&mut states, &spec, spec.dt(), &mut impulses).map_err(|e| e.to_string())?;
            if !impulses.is_empty() {
                events += 1;
                let after = kinetic_energy(&states, &spec);
                worst_rise = worst_rise.max((after - before) / before);
                ensure(after <= before * (1.0 + KE_ROUNDING), || format!("substep {k}: kinetic energy rose {before} -> {after}"))?;
            }
        }
    }
    ensure(events > 0, || "inelastic scenes produced no contacts".into())?;
    Ok(format!(
        "elastic max drift p {worst_p:.1e}, KE {worst_e:.1e} over {contacts} contact events; KE non-increasing at all {events} inelastic contact substeps (max relative rise {worst_rise:.1e})"
    ))
}

fn analytic_collisions() -> Outcome {
    let cases = [
        ("equal-mass elastic exchange", 1.0, 1.0, 2.0, 1.0, (0.0, 2.0)),
        ("e=0 common velocity", 1.0, 1.0, 2.0, 0.0, (1.0, 1.0)),
        ("2:1 mass elastic", 2.0, 1.0, 3.0, 1.0, (1.0, 4.0)),
    ];
    let mut worst = 0.0f64;
    for (name, m1, m2, v1, e, (a, b)) in cases {
        let mut spec = SceneSpec::empty([64, 64]);
        spec.gravity = Vec3::ZERO;
        spec.bodies = vec![
            dynamic(1, Shape::Sphere { radius: 0.1 }, m1, Vec3::new(0.0, 0.0, 1.0), Vec3::new(v1, 0.0, 0.0), e),
            dynamic(2, Shape::Sphere { radius: 0.1 }, m2, Vec3::new(0.2, 0.0, 1.0), Vec3::ZERO, 1.0),
        ];
        let mut s = initial_states(&spec, &BTreeSet::new());
        let mut impulses = Vec::new();
        step_in_place(&mut s, &spec, spec.dt(), &mut impulses).map_err(|e| e.to_string())?;
        ensure(!impulses.is_empty(), || format!("{name}: no impulse"))?;
        let err = (s[0].velocity - Vec3::new(a, 0.0, 0.0)).norm().max((s[1].velocity - Vec3::new(b, 0.0, 0.0)).norm());
        ensure(err <= ANALYTIC_TOL, || format!("{name}: got ({}, {}), error {err:e}", s[0].velocity.x, s[1].velocity.x))?;
        worst = worst.max(err);
    }
    Ok(format!("3 cases, max velocity error {worst:.1e}"))
}

fn prefix(dir: &Path, records: &[ManifestRecord]) -> Outcome {
    ensure(records.len() >= PREFIX_PAIRS, || format!("only {} pairs", records.len()))?;
    let mut checked = 0usize;
    for rec in &records[..PREFIX_PAIRS] {
        let text = std::fs::read_to_string(dir.join(&rec.paths.trajectory)).map_err(|e| e.to_string())?;
        let traj: TrajectoryFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let end = rec.first_divergence_frame.unwrap_or(rec.frames);
        for t in 0..end {
            for (a, b) in traj.factual.states[t].iter().zip(&traj.counterfactual.states[t]) {
                if rec.removed_ids.contains(&a.id) {
                    continue;
                }
                let bits = |v: Vec3| v.to_array().map(f64::to_bits);
                ensure(bits(a.position) == bits(b.position) && bits(a.velocity) == bits(b.velocity), || {
                    format!("{} frame {t} body {} differs before divergence", rec.scene_id, a.id)
                })?;
                checked += 1;
            }
        }
    }

    // targets far from everything, on the ground or in flight
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10 {
        let mut spec = SceneSpec::empty([64, 64]);
        spec.bodies = vec![
            dynamic(1, Shape::Sphere { radius: 0.1 }, 1.0, Vec3::new(-1.0, 0.0, 0.1), Vec3::new(rng.random_range(0.1..1.0), 0.0, 0.0), 0.5),
            dynamic(2, Shape::Box { half_extents: Vec3::new(0.1, 0.1, 0.1) }, 2.0, Vec3::new(-1.0, 1.0, 0.8), Vec3::ZERO, 0.3),
            dynamic(3, Shape::Sphere { radius: 0.12 }, 1.0, Vec3::new(6.0, 6.0, rng.random_range(0.12..2.0)), Vec3::new(0.0, 0.5, 0.0), 0.9),
        ];
        spec.removal_targets = [3].into();
        let pair = simulate_counterfactual(&spec).map_err(|e| e.to_string())?;
        ensure(pair.first_divergence_frame.is_none() && pair.affected_ids.is_empty(), || {
            format!("non-interacting case {case} diverged")
        })?;
        for (f, c) in pair.factual.states.iter().zip(&pair.counterfactual.states) {
            ensure(f[..2] == c[..2], || format!("non-interacting case {case}: surviving states differ"))?;
        }
    }
    Ok(format!("{PREFIX_PAIRS} pairs, {checked} surviving body-frames bit-identical; 10 non-interacting scenes fully identical"))
}

fn soundness(dir: &Path, records: &[ManifestRecord]) -> Outcome {
    ensure(records.len() >= SOUNDNESS_PAIRS, || format!("only {} pairs", records.len()))?;
    let (mut changed, mut pixels) = (0usize, 0usize);
    for rec in &records[..SOUNDNESS_PAIRS] {
        for t in 0..rec.frames {
            let load = |p: &str| read_gray_png(&resolve(dir, p, t)).map(|i| i.into_raw()).map_err(|e| e.to_string());
            let f = read_rgb_png(&resolve(dir, &rec.paths.factual_rgb, t)).map_err(|e| e.to_string())?;
            let c = read_rgb_png(&resolve(dir, &rec.paths.counterfactual_rgb, t)).map_err(|e| e.to_string())?;
            let q = load(&rec.paths.quadmask)?;
            let obj = load(&rec.paths.object_mask)?;
            let tri = load(&rec.paths.trimask)?;
            for (i, (a, b)) in f.pixels().zip(c.pixels()).enumerate() {
                let label = QuadLabel::from_byte(q[i]).ok_or_else(|| format!("{} frame {t}: byte {}", rec.scene_id, q[i]))?;
                if a != b {
                    changed += 1;
                    ensure(label != QuadLabel::White, || format!("{} frame {t} pixel {i}: changed but White", rec.scene_id))?;
                }
                let in_object = obj[i] >= 128;
                ensure(in_object == matches!(label, QuadLabel::Black | QuadLabel::DarkGrey), || {
                    format!("{} frame {t} pixel {i}: {label:?} disagrees with object mask", rec.scene_id)
                })?;
                let tri_expected = if in_object { QuadLabel::Black } else { QuadLabel::LightGrey };
                ensure(tri[i] == tri_expected.byte(), || format!("{} frame {t} pixel {i}: trimask", rec.scene_id))?;
                pixels += 1;
            }
        }
    }
    let report = validate_dataset(dir).map_err(|e| e.to_string())?;
    ensure(report.is_empty(), || format!("validate_dataset: {:?}", report.checks()))?;
    let (code, _, err) = cli(&["validate", "--dir", dir.to_str().unwrap()]);
    ensure(code == 0, || format!("validate exited {code}: {err}"))?;
    ensure(changed > 0, || "no pixel differs between variants".into())?;
    Ok(format!("{changed} changed pixels all non-White, partition holds at {pixels} pixels, validate exits 0"))
}

/// Reference cell fill, computed per cell rather than per pixel.
fn gridify_oracle(frame: &[bool], w: usize, h: usize, g: usize) -> Vec<bool> {
    let (cw, ch) = (w.div_ceil(g), h.div_ceil(g));
    let mut out = vec![false; w * h];
    for cr in 0..g {
        for cc in 0..g {
            let rows = (cr * ch).min(h)..((cr + 1) * ch).min(h);
            let cols = (cc * cw).min(w)..((cc + 1) * cw).min(w);
            let any = rows.clone().any(|r| cols.clone().any(|c| frame[r * w + c]));
            for r in rows.clone() {
                out[r * w + cols.start..r * w + cols.end].iter_mut().for_each(|p| *p = any);
            }
        }
    }
    out
}

fn gridification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 0..GRIDIFY_MASKS {
        let (w, h) = (rng.random_range(1..=160), rng.random_range(1..=160));
        let g = rng.random_range(1..=16);
        let density = [0.0005, 0.005, 0.05, 0.5][n % 4];
        let frames = (0..rng.random_range(1..=3)).map(|_| (0..w * h).map(|_| rng.random_bool(density)).collect()).collect();
        let m = BinaryMaskSeq { width: w, height: h, role: MaskRole::AffectedUnion, frames };
        let out = gridify(&m, g);
        for (t, f) in m.frames.iter().enumerate() {
            ensure(out.frames[t] == gridify_oracle(f, w, h, g), || format!("mask {n} ({w}x{h}, G={g}) frame {t} disagrees"))?;
        }
        ensure(gridify(&out, g) == out, || format!("mask {n} ({w}x{h}, G={g}) not idempotent"))?;
    }
    Ok(format!("{GRIDIFY_MASKS} random masks match the per-cell oracle and are idempotent"))
}

fn flow_fidelity(dir: &Path, records: &[ManifestRecord]) -> Outcome {
    ensure(records.len() >= FLOW_SCENES, || format!("only {} pairs", records.len()))?;
    let (mut worst, mut frames) = (f64::INFINITY, 0usize);
    for rec in &records[..FLOW_SCENES] {
        ensure(rec.resolution == [128, 128] && rec.frames == 49, || format!("{} is not a default scene", rec.scene_id))?;
        for counterfactual in [false, true] {
            let v = rec.paths.variant(counterfactual);
            let gray = |p: &str, t: usize| read_gray_png(&resolve(dir, p, t)).map(|i| i.into_raw()).map_err(|e| e.to_string());
            let rgb = |t: usize| read_rgb_png(&resolve(dir, v.rgb, t)).map(|i| i.into_raw()).map_err(|e| e.to_string());
            for t in 0..rec.frames - 1 {
                let flow = read_flow(&resolve(dir, v.flow, t)).map_err(|e| e.to_string())?;
                let labels = |t: usize| -> Result<Vec<(u8, u8, u8)>, String> {
                    let (a, b, c) = (gray(v.instance, t)?, gray(v.shadow, t)?, gray(v.surface, t)?);
                    Ok(a.into_iter().zip(b).zip(c).map(|((a, b), c)| (a, b, c)).collect())
                };
                let db = warp_psnr(&rgb(t)?, &rgb(t + 1)?, &flow, &labels(t)?, &labels(t + 1)?);
                ensure(db >= FLOW_MIN_PSNR, || format!("{} {} frame {t}: {db:.2} dB", rec.scene_id, if counterfactual { "counterfactual" } else { "factual" }))?;
                worst = worst.min(db);
                frames += 1;
            }
        }
    }
    Ok(format!("{frames} frame transitions, worst {worst:.2} dB"))
}

/// Bilinear inverse warp of `next` onto `cur`, scored over pixels whose
/// valid flow lands where all four taps carry the same labels.
fn warp_psnr(cur: &[u8], next: &[u8], flow: &FlowField, l0: &[(u8, u8, u8)], l1: &[(u8, u8, u8)]) -> f64 {
    let (w, h) = (flow.width, flow.height);
    let (mut se, mut n) = (0.0f64, 0usize);
    for i in 0..w * h {
        if !flow.valid[i] {
            continue;
        }
        let x = (i % w) as f64 + flow.uv[i][0] as f64;
        let y = (i / w) as f64 + flow.uv[i][1] as f64;
        if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
            continue;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let taps = [
            (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * w + x1, fx * (1.0 - fy)),
            (y1 * w + x0, (1.0 - fx) * fy),
            (y1 * w + x1, fx * fy),
        ];
        if taps.iter().any(|&(j, _)| l1[j] != l0[i]) {
            continue;
        }
        for c in 0..3 {
            let warped: f64 = taps.iter().map(|&(j, wt)| wt * next[3 * j + c] as f64 / 255.0).sum();
            let d = warped - cur[3 * i + c] as f64 / 255.0;
            se += d * d;
            n += 1;
        }
    }
    if se == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (n as f64 / se).log10()
    }
}

/// Alternating zoom-out / zoom-in with a swirl: every warp has both
/// disocclusions and many-to-one merges.
fn stress_flows(w: usize, h: usize, n: usize) -> Vec<FlowField> {
    (0..n)
        .map(|t| {
            let s = if t % 2 == 0 { 0.18 } else { -0.15 };
            let mut f = FlowField::zeros(w, h);
            for (i, uv) in f.uv.iter_mut().enumerate() {
                let (x, y) = ((i % w) as f32 - w as f32 / 2.0, (i / w) as f32 - h as f32 / 2.0);
                *uv = [s * x - 0.1 * y + 0.7, s * y + 0.1 * x - 1.3];
            }
            f
        })
        .collect()
}

fn noise_statistics() -> Outcome {
    let (w, h, c) = (32usize, 32usize, 4usize);
    let flows = stress_flows(w, h, NOISE_FRAMES - 1);
    let cells = NOISE_FRAMES * w * h * c;
    let (mut sum, mut sq) = (vec![0.0f64; cells], vec![0.0f64; cells]);
    let seeds: Vec<u64> = (0..NOISE_SEEDS as u64).map(|s| s.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x00AC_CE97).collect();
    for batch in seeds.chunks(500) {
        let vols = warp_volumes(Exec::default(), &flows, batch, (w, h, c), 1).map_err(|e| e.to_string())?;
        for vol in &vols {
            ensure(vol.frames.len() == NOISE_FRAMES, || format!("{} frames", vol.frames.len()))?;
            for (t, f) in vol.frames.iter().enumerate() {
                let base = t * w * h * c;
                for (k, &x) in f.data.iter().enumerate() {
                    sum[base + k] += x as f64;
                    sq[base + k] += (x as f64) * (x as f64);
                }
            }
        }
    }
    let n = NOISE_SEEDS as f64;
    let (mut worst_mean, mut lo, mut hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..cells {
        let mean = sum[k] / n;
        let var = (sq[k] - n * mean * mean) / (n - 1.0);
        worst_mean = worst_mean.max(mean.abs());
        lo = lo.min(var);
        hi = hi.max(var);
    }
    ensure(worst_mean <= NOISE_MEAN_TOL, || format!("max |mean| {worst_mean:.4}"))?;
    ensure(lo >= NOISE_VAR_RANGE.0 && hi <= NOISE_VAR_RANGE.1, || format!("variance range [{lo:.4}, {hi:.4}]"))?;

    let zero = vec![FlowField::zeros(w, h); NOISE_FRAMES - 1];
    let vols = warp_volumes(Exec::default(), &zero, &seeds[..200], (w, h, c), 1).map_err(|e| e.to_string())?;
    for v in &vols {
        let first: Vec<u32> = v.frames[0].data.iter().map(|x| x.to_bits()).collect();
        ensure(v.frames.iter().all(|f| f.data.iter().map(|x| x.to_bits()).eq(first.iter().copied())), || {
            format!("seed {}: zero-flow volume changes over time", v.seed)
        })?;
    }
    Ok(format!(
        "{cells} pixel/channel/frame cells over {NOISE_SEEDS} seeds: max |mean| {worst_mean:.4}, variance in [{lo:.4}, {hi:.4}]; zero flow frame-constant"
    ))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    let mut slowest = Duration::ZERO;
    for tag in ["a", "b"] {
        let out = root.path().join(tag);
        let start = Instant::now();
        let (code, _, err) = cli(&["generate", "--seed", "7", "--count", "10", "--out", out.to_str().unwrap()]);
        slowest = slowest.max(start.elapsed());
        ensure(code == 0, || format!("generate exited {code}: {err}"))?;
        hashes.push(tree_hash(&out));
    }
    ensure(hashes[0] == hashes[1], || format!("tree hashes differ: {} vs {}", hashes[0], hashes[1]))?;
    ensure(slowest <= DETERMINISM_BUDGET, || format!("slowest run {:.1}s", slowest.as_secs_f64()))?;
    Ok(format!("sha256 {}…, slowest run {:.1}s", &hashes[0][..16], slowest.as_secs_f64()))
}

fn scale() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = root.path().join("scale");
    let start = Instant::now();
    let count = SCALE_PAIRS.to_string();
    let (code, _, err) = cli(&[
        "generate", "--seed", "2026", "--count", &count, "--out", out.to_str().unwrap(), "--resolution", "96x96", "--frames", "49",
        "--jobs", "8",
    ]);
    let took = start.elapsed();
    ensure(code == 0, || format!("generate exited {code}: {err}"))?;
    ensure(took <= SCALE_BUDGET, || format!("took {:.0}s", took.as_secs_f64()))?;
    let stats = dataset_stats(&out).map_err(|e| e.to_string())?;
    ensure(stats.pairs == SCALE_PAIRS, || format!("{} pairs", stats.pairs))?;
    ensure(stats.divergent_fraction >= SCALE_MIN_DIVERGENT, || format!("divergent fraction {:.3}", stats.divergent_fraction))?;
    Ok(format!(
        "{} pairs at 96x96x49 in {:.0}s ({:.2}s/pair), divergent fraction {:.3}",
        stats.pairs,
        took.as_secs_f64(),
        took.as_secs_f64() / stats.pairs as f64,
        stats.divergent_fraction
    ))
}

fn reasoner_protocol() -> Outcome {
    let mut cfg = ForgeConfig::new(99);
    cfg.sampler.resolution = [64, 64];
    cfg.sampler.frames = 13;
    let mut replays = 0;
    for index in 0..5 {
        let pkg = forge_scene(&cfg, index, Exec::default()).map_err(|e| e.to_string())?;
        let gt = GroundTruthReasoner::new(&pkg.pair, &pkg.renders, &pkg.spec, cfg.grid, &cfg.second_pass)
            .map_err(|e| e.to_string())?;
        let frames: Vec<image::RgbImage> = pkg
            .renders
            .factual
            .iter()
            .map(|f| image::RgbImage::from_raw(f.width as u32, f.height as u32, f.rgb8()).unwrap())
            .collect();
        let wire = serde_json::to_string(&ReasonerResponse::from_output(gt.output()).map_err(|e| e.to_string())?).unwrap();
        for style in [MaskStyle::Inference, MaskStyle::Training] {
            let (url, _rx) = mock_server(Reply::Json(200, wire.clone()));
            let remote = RemoteReasoner::new(url, cfg.grid).with_timeout(Duration::from_secs(10));
            let (ours, out) = reasoned_quadmask(&remote, &frames, &pkg.object, style).map_err(|e| e.to_string())?;
            let (oracle, expected) = reasoned_quadmask(&gt, &frames, &pkg.object, style).map_err(|e| e.to_string())?;
            ensure(ours == oracle && out == expected, || format!("scene {index} {style:?}: remote quadmask differs"))?;
            replays += 1;
        }
        if index == 0 {
            ensure(
                reasoned_quadmask(&gt, &frames, &pkg.object, MaskStyle::Training).unwrap().0 == pkg.quadmask,
                || "oracle disagrees with the stored quadmask".into(),
            )?;
        }
    }

    let (w, h, g) = (16usize, 16usize, 4usize);
    let frames = vec![image::RgbImage::new(w as u32, h as u32); 2];
    let object = BinaryMaskSeq::empty(w, h, 2, MaskRole::ObjectMask);
    let png = |w: u32, h: u32| {
        let mut b = Vec::new();
        image::DynamicImage::ImageLuma8(image::GrayImage::new(w, h))
            .write_to(&mut std::io::Cursor::new(&mut b), image::ImageFormat::Png)
            .unwrap();
        base64::Engine::encode(&base64::engine::general_purpose::STANDARD, b)
    };
    let body = |orig: serde_json::Value, cells: serde_json::Value| {
        serde_json::json!({"affected_objects": [], "affected_orig": orig, "counterfactual_cells": cells, "needs_second_pass": false})
            .to_string()
    };
    let ok = png(16, 16);
    type Case = (&'static str, Reply, fn(&ReasonerError) -> bool);
    let cases: Vec<Case> = vec![
        ("MalformedJson", Reply::Json(200, "{\"affected_objects\": ".into()), |e| matches!(e, ReasonerError::Protocol(ProtocolError::MalformedJson(_)))),
        (
            "Schema",
            Reply::Json(200, body(serde_json::json!([ok, ok]), serde_json::json!([[], []])).replacen('{', "{\"schema\":\"x/0\",", 1)),
            |e| matches!(e, ReasonerError::Protocol(ProtocolError::Schema(_))),
        ),
        ("HttpStatus", Reply::Json(500, "{}".into()), |e| matches!(e, ReasonerError::Protocol(ProtocolError::HttpStatus(500)))),
        (
            "FrameCount",
            Reply::Json(200, body(serde_json::json!([ok]), serde_json::json!([[], []]))),
            |e| matches!(e, ReasonerError::Protocol(ProtocolError::FrameCount { .. })),
        ),
        (
            "CellOutOfRange",
            Reply::Json(200, body(serde_json::json!([ok, ok]), serde_json::json!([[], [[0, g]]]))),
            |e| matches!(e, ReasonerError::Protocol(ProtocolError::CellOutOfRange { frame: 1, row: 0, col: 4, grid: 4 })),
        ),
        (
            "BadBase64",
            Reply::Json(200, body(serde_json::json!([ok, "%%"]), serde_json::json!([[], []]))),
            |e| matches!(e, ReasonerError::Protocol(ProtocolError::BadBase64 { frame: 1, .. })),
        ),
        (
            "BadImage",
            Reply::Json(200, body(serde_json::json!(["AAAA", ok]), serde_json::json!([[], []]))),
            |e| matches!(e, ReasonerError::Protocol(ProtocolError::BadImage { frame: 0, .. })),
        ),
        (
            "MaskSize",
            Reply::Json(200, body(serde_json::json!([ok, png(16, 8)]), serde_json::json!([[], []]))),
            |e| matches!(e, ReasonerError::Protocol(ProtocolError::MaskSize { frame: 1, .. })),
        ),
        ("Timeout", Reply::Stall(Duration::from_secs(3)), |e| matches!(e, ReasonerError::Timeout)),
    ];
    let n_cases = cases.len();
    for (name, reply, expected) in cases {
        let (url, _rx) = mock_server(reply);
        let remote = RemoteReasoner::new(url, g).with_timeout(Duration::from_millis(500));
        match reasoned_quadmask(&remote, &frames, &object, MaskStyle::Inference) {
            Err(e) if expected(&e) => {}
            other => return Err(format!("{name}: got {:?}", other.map(|_| ()))),
        }
    }
    Ok(format!("{replays} oracle replays exact; {n_cases} malformed-response cases raise their named errors"))
}

fn main() {
    let root = tempfile::tempdir().expect("tempdir");
    let shared = root.path().join("pairs");
    let count = PREFIX_PAIRS.max(SOUNDNESS_PAIRS).max(FLOW_SCENES).to_string();
    let (code, _, err) = cli(&["generate", "--seed", "424242", "--count", &count, "--out", shared.to_str().unwrap()]);
    assert_eq!(code, 0, "shared dataset: {err}");
    let records: Vec<ManifestRecord> =
        read_manifest(&shared).expect("manifest").into_iter().map(|r| r.expect("record")).collect();

    let mut ok = true;
    ok &= run(1, "determinism", determinism);
    ok &= run(2, "conservation", conservation);
    ok &= run(3, "analytic collisions", analytic_collisions);
    ok &= run(4, "counterfactual prefix", || prefix(&shared, &records));
    ok &= run(5, "quadmask soundness", || soundness(&shared, &records));
    ok &= run(6, "gridification", gridification);
    ok &= run(7, "flow fidelity", || flow_fidelity(&shared, &records));
    ok &= run(8, "noise statistics", noise_statistics);
    ok &= run(9, "scale demonstration", scale);
    ok &= run(10, "reasoner protocol", reasoner_protocol);
    if !ok {
        std::process::exit(1);
    }
}
