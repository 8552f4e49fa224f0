//! Seeded scene descriptions and the procedural sampler.
//!
//! Every sampled scene is a pure function of `(master_seed, scene_index,
//! params)`. The per-scene seed is derived with [`mix_seed`], and all random
//! draws come from a ChaCha8 stream keyed by that seed, so the serialized JSON
//! is byte-identical across runs and platforms.
//!
//! Three templates cover the interaction classes the forge is built around:
//!
//! * **collision chain**: bodies lined up on the ground, the first one is
//!   launched into the next; removing the striker stops the chain.
//! * **support removal**: a body stacked on a support box; removing the
//!   support drops the body.
//! * **obstruction removal**: a heavy blocker on a static platform stops a
//!   sliding body; removing the blocker lets it slide off the edge.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ground_proximity, shape_proximity};
use crate::math::Vec3;

pub const SCENE_SCHEMA: &str = "void-forge/scene/1";

/// Minimum pairwise separation of bodies at `t = 0`, meters.
pub const MIN_SEPARATION: f64 = 1e-6;

/// Vertical gap left between a stacked body and its support, meters.
pub const STACK_GAP: f64 = 1e-4;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
}

impl Shape {
    /// Distance from the center to the lowest point.
    pub fn half_height(&self) -> f64 {
        match self {
            Shape::Sphere { radius } => *radius,
            Shape::Box { half_extents } => half_extents.z,
        }
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn aabb_half(&self) -> Vec3 {
        match self {
            Shape::Sphere { radius } => Vec3::new(*radius, *radius, *radius),
            Shape::Box { half_extents } => *half_extents,
        }
    }

    /// Radius for spheres, largest half extent for boxes.
    pub fn characteristic_size(&self) -> f64 {
        self.aabb_half().max_abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mass {
    Static,
    Dynamic(f64),
}

impl Mass {
    pub fn inverse(self) -> f64 {
        match self {
            Mass::Static => 0.0,
            Mass::Dynamic(m) => 1.0 / m,
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, Mass::Dynamic(_))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Mass::Static => None,
            Mass::Dynamic(m) => Some(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    /// 1..=255; 0 is reserved for ground/background in instance maps.
    pub id: u32,
    pub shape: Shape,
    pub mass: Mass,
    pub position0: Vec3,
    pub velocity0: Vec3,
    pub restitution: f64,
    pub albedo: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    Orbit,
    Dolly,
}

/// Endpoints of a camera move; every parameter ramps linearly over the clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraTrajectorySpec {
    pub mode: CameraMode,
    pub center: Vec3,
    pub radius0: f64,
    pub radius1: f64,
    pub height0: f64,
    pub height1: f64,
    pub angle0: f64,
    pub angle1: f64,
    pub focal0: f64,
    pub focal1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    CollisionChain,
    SupportRemoval,
    ObstructionRemoval,
    /// Hand-built scenes (tests, external tooling).
    Custom,
}

impl Template {
    pub const SAMPLED: [Template; 3] =
        [Template::CollisionChain, Template::SupportRemoval, Template::ObstructionRemoval];

    pub fn name(self) -> &'static str {
        match self {
            Template::CollisionChain => "collision_chain",
            Template::SupportRemoval => "support_removal",
            Template::ObstructionRemoval => "obstruction_removal",
            Template::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub schema: String,
    pub scene_seed: u64,
    pub template: Template,
    /// Body whose removal drives the template's interaction, if any.
    pub key_body: Option<u32>,
    pub bodies: Vec<BodySpec>,
    pub camera: CameraTrajectorySpec,
    pub removal_targets: BTreeSet<u32>,
    pub frames: usize,
    pub fps: f64,
    pub substeps: usize,
    pub resolution: [u32; 2],
    pub light_dir: Vec3,
    pub ground_albedo: [f64; 3],
    pub gravity: Vec3,
}

impl SceneSpec {
    /// A scene with the default clip settings and no bodies; used as a base for hand-built scenes.
    pub fn empty(resolution: [u32; 2]) -> Self {
        SceneSpec {
            schema: SCENE_SCHEMA.to_string(),
            scene_seed: 0,
            template: Template::Custom,
            key_body: None,
            bodies: Vec::new(),
            camera: CameraTrajectorySpec {
                mode: CameraMode::Orbit,
                center: Vec3::new(0.0, 0.0, 0.2),
                radius0: 3.5,
                radius1: 3.5,
                height0: 2.0,
                height1: 2.0,
                angle0: -PI / 2.0,
                angle1: -PI / 2.0,
                focal0: 1.2 * resolution[0] as f64,
                focal1: 1.2 * resolution[0] as f64,
            },
            removal_targets: BTreeSet::new(),
            frames: 49,
            fps: 24.0,
            substeps: 10,
            resolution,
            light_dir: Vec3::new(0.3, -0.4, 1.0).normalized(),
            ground_albedo: [0.7, 0.7, 0.7],
            gravity: Vec3::new(0.0, 0.0, -STANDARD_GRAVITY),
        }
    }

    pub fn width(&self) -> usize {
        self.resolution[0] as usize
    }

    pub fn height(&self) -> usize {
        self.resolution[1] as usize
    }

    /// Substep length in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / (self.fps * self.substeps as f64)
    }

    pub fn body(&self, id: u32) -> Option<&BodySpec> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn body_ids(&self) -> BTreeSet<u32> {
        self.bodies.iter().map(|b| b.id).collect()
    }

    pub fn dynamic_ids(&self) -> BTreeSet<u32> {
        self.bodies.iter().filter(|b| b.mass.is_dynamic()).map(|b| b.id).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("sampler parameter `{field}` out of range: {reason}")]
    Range { field: &'static str, reason: String },
    #[error("could not place body {body} without overlap after {retries} retries")]
    Placement { body: u32, retries: usize },
    #[error("need at least 2 dynamic bodies to pick removal targets, found {found}")]
    TooFewBodies { found: usize },
}

/// Knobs for [`sample_scene`]. Defaults follow the forge's declared ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub min_bodies: usize,
    pub max_bodies: usize,
    pub resolution: [u32; 2],
    pub frames: usize,
    pub fps: f64,
    pub substeps: usize,
    /// Relative weights of collision chain, support removal, obstruction removal.
    pub template_mix: [f64; 3],
    pub size_range: (f64, f64),
    pub max_speed: f64,
    pub placement_retries: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            min_bodies: 3,
            max_bodies: 8,
            resolution: [128, 128],
            frames: 49,
            fps: 24.0,
            substeps: 10,
            template_mix: [1.0, 1.0, 1.0],
            size_range: (0.05, 0.3),
            max_speed: 4.0,
            placement_retries: 64,
        }
    }
}

impl SamplerParams {
    pub fn check(&self) -> Result<(), SceneError> {
        fn range(field: &'static str, reason: String) -> SceneError {
            SceneError::Range { field, reason }
        }
        if self.min_bodies < 3 || self.max_bodies > 8 || self.min_bodies > self.max_bodies {
            return Err(range(
                "body_count",
                format!("need 3 <= min <= max <= 8, got {}..={}", self.min_bodies, self.max_bodies),
            ));
        }
        if self.resolution[0] < 32 || self.resolution[1] < 32 {
            return Err(range(
                "resolution",
                format!("need at least 32x32, got {}x{}", self.resolution[0], self.resolution[1]),
            ));
        }
        if self.resolution[0] > 4096 || self.resolution[1] > 4096 {
            return Err(range("resolution", "at most 4096 per side".into()));
        }
        if self.frames < 2 {
            return Err(range("frames", format!("need >= 2, got {}", self.frames)));
        }
        if self.substeps < 1 {
            return Err(range("substeps", "need >= 1".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(range("fps", format!("need > 0, got {}", self.fps)));
        }
        let mix_ok = self.template_mix.iter().all(|w| w.is_finite() && *w >= 0.0)
            && self.template_mix.iter().sum::<f64>() > 0.0;
        if !mix_ok {
            return Err(range("template_mix", format!("{:?}", self.template_mix)));
        }
        let (lo, hi) = self.size_range;
        if !(lo >= 0.05 && hi <= 0.3 && lo <= hi) {
            return Err(range("size_range", format!("need 0.05 <= lo <= hi <= 0.3, got {lo}..{hi}")));
        }
        if !(self.max_speed > 0.5 && self.max_speed <= 4.0) {
            return Err(range("max_speed", format!("need (0.5, 4], got {}", self.max_speed)));
        }
        if self.placement_retries == 0 {
            return Err(range("placement_retries", "need >= 1".into()));
        }
        Ok(())
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function (Steele, Lea & Flood 2014 finalizer).
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a per-item seed from a master seed and an index.
///
/// `splitmix64(splitmix64(master) + GAMMA * (index + 1))`: the master seed is
/// avalanched first so nearby masters do not produce shifted index streams.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master).wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Template for a scene index under the given mix.
///
/// Uses the golden-ratio Weyl sequence so every window of consecutive indices
/// tracks the mix proportions closely.
pub fn template_for_index(index: u64, mix: &[f64; 3]) -> Template {
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let u = ((index as f64 + 0.5) * inv_phi).fract();
    let total: f64 = mix.iter().sum();
    let mut acc = 0.0;
    for (i, w) in mix.iter().enumerate() {
        acc += w / total;
        if u < acc && *w > 0.0 {
            return Template::SAMPLED[i];
        }
    }
    // rounding at the top of the unit interval
    let last = mix.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    Template::SAMPLED[last]
}

/// Samples a complete scene, removal targets included.
pub fn sample_scene(master_seed: u64, scene_index: u64, params: &SamplerParams) -> Result<SceneSpec, SceneError> {
    params.check()?;
    let scene_seed = mix_seed(master_seed, scene_index);
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let template = template_for_index(scene_index, &params.template_mix);

    let mut spec = SceneSpec::empty(params.resolution);
    spec.scene_seed = scene_seed;
    spec.template = template;
    spec.frames = params.frames;
    spec.fps = params.fps;
    spec.substeps = params.substeps;

    let n_bodies = rng.random_range(params.min_bodies..=params.max_bodies);
    let mut builder = Builder { rng: &mut rng, params, bodies: Vec::new() };
    let key = match template {
        Template::CollisionChain => builder.collision_chain(n_bodies),
        Template::SupportRemoval => builder.support_stack(),
        Template::ObstructionRemoval => builder.obstruction(),
        Template::Custom => unreachable!("custom scenes are never sampled"),
    };
    while builder.bodies.len() < n_bodies {
        builder.distractor()?;
    }
    spec.bodies = builder.bodies;
    spec.key_body = Some(key);

    spec.camera = sample_camera(&mut rng, params.resolution);
    let lx = rng.random_range(-0.6..0.6);
    let ly = rng.random_range(-0.6..0.6);
    spec.light_dir = Vec3::new(lx, ly, 1.0).normalized();
    let g = rng.random_range(0.55..0.8);
    spec.ground_albedo = [g, g, g * rng.random_range(0.9..1.0)];

    spec.removal_targets = select_removal_targets(&spec, mix_seed(scene_seed, 1))?;
    Ok(spec)
}

/// Picks between 1 and `ceil(#dynamic / 2)` dynamic bodies to remove.
///
/// The scene's `key_body` (when set and dynamic) is always included.
pub fn select_removal_targets(spec: &SceneSpec, seed: u64) -> Result<BTreeSet<u32>, SceneError> {
    let dynamic: Vec<u32> = spec.dynamic_ids().into_iter().collect();
    if dynamic.len() < 2 {
        return Err(SceneError::TooFewBodies { found: dynamic.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_k = dynamic.len().div_ceil(2);
    // favor single removals: a clean causal story per pair
    let k = if rng.random_bool(0.6) { 1 } else { rng.random_range(1..=max_k) };

    let mut pool = dynamic.clone();
    pool.shuffle(&mut rng);
    let mut targets = BTreeSet::new();
    if let Some(key) = spec.key_body.filter(|k| dynamic.contains(k)) {
        targets.insert(key);
    }
    for id in pool {
        if targets.len() >= k {
            break;
        }
        targets.insert(id);
    }
    Ok(targets)
}

fn sample_camera(rng: &mut ChaCha8Rng, resolution: [u32; 2]) -> CameraTrajectorySpec {
    let w = resolution[0] as f64;
    let mode = if rng.random_bool(0.7) { CameraMode::Orbit } else { CameraMode::Dolly };
    let radius0 = rng.random_range(3.0..3.8);
    let radius1 = radius0 + rng.random_range(-0.5..0.5);
    let height0 = rng.random_range(1.6..2.6);
    let height1 = height0 + rng.random_range(-0.3..0.3);
    let angle0 = rng.random_range(0.0..2.0 * PI);
    let angle1 = angle0 + rng.random_range(-PI / 4.0..PI / 4.0);
    let focal0 = w * rng.random_range(1.1..1.4);
    let focal1 = focal0 * rng.random_range(0.85..1.2);
    CameraTrajectorySpec {
        mode,
        center: Vec3::new(0.0, 0.0, 0.15),
        radius0,
        radius1,
        height0,
        height1,
        angle0,
        angle1,
        focal0,
        focal1,
    }
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: &'a SamplerParams,
    bodies: Vec<BodySpec>,
}

impl Builder<'_> {
    fn next_id(&self) -> u32 {
        self.bodies.len() as u32 + 1
    }

    fn albedo(&mut self) -> [f64; 3] {
        [self.rng.random_range(0.2..1.0), self.rng.random_range(0.2..1.0), self.rng.random_range(0.2..1.0)]
    }

    fn size(&mut self, hi: f64) -> f64 {
        let (lo, max) = self.params.size_range;
        let hi = hi.min(max).max(lo);
        if hi > lo {
            self.rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    fn shape(&mut self, max_size: f64) -> Shape {
        if self.rng.random_bool(0.5) {
            Shape::Sphere { radius: self.size(max_size) }
        } else {
            Shape::Box { half_extents: Vec3::new(self.size(max_size), self.size(max_size), self.size(max_size)) }
        }
    }

    fn push(&mut self, shape: Shape, mass: Mass, position0: Vec3, velocity0: Vec3, restitution: f64) -> u32 {
        let id = self.next_id();
        let albedo = self.albedo();
        self.bodies.push(BodySpec { id, shape, mass, position0, velocity0, restitution, albedo });
        id
    }

    /// Unit horizontal axis direction, one of ±x / ±y.
    fn axis_dir(&mut self) -> (Vec3, Vec3) {
        let along = [Vec3::X, -Vec3::X, Vec3::Y, -Vec3::Y][self.rng.random_range(0..4)];
        let across = Vec3::Z.cross(along);
        (along, across)
    }

    fn collision_chain(&mut self, n_bodies: usize) -> u32 {
        let len = self.rng.random_range(3..=n_bodies.min(4));
        let (along, across) = self.axis_dir();
        let offset = self.rng.random_range(-0.4..0.4);
        let mut cursor = -0.95;
        let mut striker = 0;
        for i in 0..len {
            let shape = self.shape(0.16);
            let half = shape.aabb_half();
            let extent = half.dot(Vec3::new(along.x.abs(), along.y.abs(), 0.0));
            cursor += extent;
            let pos = along * cursor + across * offset + Vec3::Z * shape.half_height();
            cursor += extent + self.rng.random_range(0.05..0.2);
            let velocity = if i == 0 {
                along * self.rng.random_range(1.5..self.params.max_speed.max(1.6))
            } else {
                Vec3::ZERO
            };
            let mass = Mass::Dynamic(self.rng.random_range(0.5..2.0));
            let e = self.rng.random_range(0.6..1.0);
            let id = self.push(shape, mass, pos, velocity, e);
            if i == 0 {
                striker = id;
            }
        }
        striker
    }

    fn support_stack(&mut self) -> u32 {
        let hx = self.size(0.25).max(0.12);
        let hy = self.size(0.25).max(0.12);
        let hz = self.size(0.25).max(0.1);
        let cx = self.rng.random_range(-0.5..0.5);
        let cy = self.rng.random_range(-0.5..0.5);
        let support = Shape::Box { half_extents: Vec3::new(hx, hy, hz) };
        let mass = Mass::Dynamic(self.rng.random_range(1.0..3.0));
        let e = self.rng.random_range(0.1..0.5);
        let key = self.push(support, mass, Vec3::new(cx, cy, hz), Vec3::ZERO, e);

        let top = if self.rng.random_bool(0.5) {
            Shape::Sphere { radius: self.size(hx.min(hy)) }
        } else {
            let th = Vec3::new(self.size(hx), self.size(hy), self.size(0.2));
            Shape::Box { half_extents: th }
        };
        // keep the top body's center over the support's top face
        let slack_x = (hx - top.aabb_half().x).max(0.0) * 0.8;
        let slack_y = (hy - top.aabb_half().y).max(0.0) * 0.8;
        let dx = if slack_x > 0.0 { self.rng.random_range(-slack_x..=slack_x) } else { 0.0 };
        let dy = if slack_y > 0.0 { self.rng.random_range(-slack_y..=slack_y) } else { 0.0 };
        let z = 2.0 * hz + STACK_GAP + top.half_height();
        let mass = Mass::Dynamic(self.rng.random_range(0.3..1.5));
        let e = self.rng.random_range(0.1..0.6);
        self.push(top, mass, Vec3::new(cx + dx, cy + dy, z), Vec3::ZERO, e);
        key
    }

    fn obstruction(&mut self) -> u32 {
        let (along, across) = self.axis_dir();
        let px = self.rng.random_range(0.55..0.75);
        let py = self.rng.random_range(0.2..0.35);
        let pz = self.rng.random_range(0.1..0.2);
        let offset = self.rng.random_range(-0.3..0.3);
        let half = along_half(along, px, py, pz);
        let platform_center = across * offset + Vec3::Z * pz;
        let albedo = [0.45, 0.42, 0.4];
        let id = self.next_id();
        self.bodies.push(BodySpec {
            id,
            shape: Shape::Box { half_extents: half },
            mass: Mass::Static,
            position0: platform_center,
            velocity0: Vec3::ZERO,
            restitution: 0.5,
            albedo,
        });
        let top = 2.0 * pz;

        let r = self.size(0.12);
        let mover_pos = platform_center + along * (-px + r + 0.05) + Vec3::Z * (pz + r + STACK_GAP);
        let speed = self.rng.random_range(0.8..2.0_f64.min(self.params.max_speed));
        let mass = Mass::Dynamic(self.rng.random_range(0.2..0.6));
        let e = self.rng.random_range(0.3..0.9);
        self.push(Shape::Sphere { radius: r }, mass, mover_pos, along * speed, e);

        let bx = self.size(0.1);
        let by = self.size(py * 0.9);
        let bz = self.size(0.15);
        let bhalf = along_half(along, bx, by, bz);
        // blocker face nearest the edge sits 0.3 m back from it
        let edge_clear = 0.3;
        let along_pos = px - edge_clear - bx;
        let blocker_pos = platform_center + along * along_pos + Vec3::Z * (top - pz + bz + STACK_GAP);
        let mass = Mass::Dynamic(self.rng.random_range(20.0..40.0));
        let e = self.rng.random_range(0.3..0.8);
        self.push(Shape::Box { half_extents: bhalf }, mass, blocker_pos, Vec3::ZERO, e)
    }

    fn distractor(&mut self) -> Result<(), SceneError> {
        let id = self.next_id();
        for _ in 0..self.params.placement_retries {
            let shape = self.shape(0.2);
            let pos = Vec3::new(
                self.rng.random_range(-1.2..1.2),
                self.rng.random_range(-1.2..1.2),
                shape.half_height(),
            );
            let clear = self.bodies.iter().all(|b| aabb_gap(&b.shape, b.position0, &shape, pos) > 0.05);
            if !clear {
                continue;
            }
            let velocity = if self.rng.random_bool(0.5) {
                let a = self.rng.random_range(0.0..2.0 * PI);
                let s = self.rng.random_range(0.2..1.0);
                Vec3::new(a.cos() * s, a.sin() * s, 0.0)
            } else {
                Vec3::ZERO
            };
            let mass = Mass::Dynamic(self.rng.random_range(0.3..2.0));
            let e = self.rng.random_range(0.2..0.9);
            self.push(shape, mass, pos, velocity, e);
            return Ok(());
        }
        Err(SceneError::Placement { body: id, retries: self.params.placement_retries })
    }
}

fn along_half(along: Vec3, a: f64, b: f64, c: f64) -> Vec3 {
    if along.x != 0.0 {
        Vec3::new(a, b, c)
    } else {
        Vec3::new(b, a, c)
    }
}

/// Largest per-axis gap between two AABBs (negative when they overlap).
fn aabb_gap(a: &Shape, pa: Vec3, b: &Shape, pb: Vec3) -> f64 {
    let (ha, hb) = (a.aabb_half(), b.aabb_half());
    let d = pb - pa;
    (0..3).map(|i| d[i].abs() - ha[i] - hb[i]).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    OutOfRange,
    NotFinite,
    PlacementOverlap,
    InvalidTarget,
    DuplicateId,
    Schema,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, path: &str) -> bool {
        self.violations.iter().any(|v| v.path == path)
    }

    pub fn has_kind(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, path: impl Into<String>, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), kind, message: message.into() });
    }
}

/// Checks every scene and body invariant; violations are returned as data.
pub fn validate_spec(spec: &SceneSpec) -> ValidationReport {
    use ViolationKind::*;
    let mut r = ValidationReport::default();
    if spec.schema != SCENE_SCHEMA {
        r.push("schema", Schema, format!("expected {SCENE_SCHEMA}, got {}", spec.schema));
    }
    let mut seen = BTreeSet::new();
    for (i, b) in spec.bodies.iter().enumerate() {
        let p = |f: &str| format!("bodies[{i}].{f}");
        if b.id == 0 || b.id > 255 {
            r.push(p("id"), OutOfRange, format!("id {} not in 1..=255", b.id));
        }
        if !seen.insert(b.id) {
            r.push(p("id"), DuplicateId, format!("id {} repeated", b.id));
        }
        match b.shape {
            Shape::Sphere { radius } => {
                if !radius.is_finite() {
                    r.push(p("shape.radius"), NotFinite, "radius not finite");
                } else if radius <= 0.0 {
                    r.push(p("shape.radius"), OutOfRange, format!("radius {radius} <= 0"));
                }
            }
            Shape::Box { half_extents } => {
                if !half_extents.is_finite() {
                    r.push(p("shape.half_extents"), NotFinite, "half extents not finite");
                } else if half_extents.x <= 0.0 || half_extents.y <= 0.0 || half_extents.z <= 0.0 {
                    r.push(p("shape.half_extents"), OutOfRange, format!("{half_extents:?} has a non-positive entry"));
                }
            }
        }
        if let Mass::Dynamic(m) = b.mass {
            if !(m.is_finite() && m > 0.0) {
                r.push(p("mass"), OutOfRange, format!("mass {m} must be positive and finite"));
            }
        }
        if !b.position0.is_finite() {
            r.push(p("position0"), NotFinite, "position not finite");
        }
        if !b.velocity0.is_finite() {
            r.push(p("velocity0"), NotFinite, "velocity not finite");
        }
        if !(0.0..=1.0).contains(&b.restitution) {
            r.push(p("restitution"), OutOfRange, format!("restitution {} not in [0, 1]", b.restitution));
        }
        if b.albedo.iter().any(|c| !(0.0..=1.0).contains(c)) {
            r.push(p("albedo"), OutOfRange, format!("albedo {:?} not in [0, 1]", b.albedo));
        }
        if b.position0.is_finite() && ground_proximity(&b.shape, b.position0).distance < -MIN_SEPARATION {
            r.push(p("position0"), PlacementOverlap, "body starts below the ground plane");
        }
    }
    for i in 0..spec.bodies.len() {
        for j in i + 1..spec.bodies.len() {
            let (a, b) = (&spec.bodies[i], &spec.bodies[j]);
            if !(a.position0.is_finite() && b.position0.is_finite()) {
                continue;
            }
            let d = shape_proximity(&a.shape, a.position0, &b.shape, b.position0).distance;
            if !(d >= MIN_SEPARATION) {
                r.push(
                    format!("bodies[{i}]/bodies[{j}]"),
                    PlacementOverlap,
                    format!("bodies {} and {} separated by {d:e} m", a.id, b.id),
                );
            }
        }
    }

    let dynamic = spec.dynamic_ids();
    if spec.removal_targets.is_empty() {
        r.push("removal_targets", InvalidTarget, "no removal targets");
    }
    for t in &spec.removal_targets {
        if !dynamic.contains(t) {
            r.push("removal_targets", InvalidTarget, format!("target {t} is not a dynamic body"));
        }
    }
    if let Some(k) = spec.key_body {
        if !seen.contains(&k) {
            r.push("key_body", InvalidTarget, format!("key body {k} does not exist"));
        }
    }
    let c = &spec.camera;
    for (name, v) in [("camera.radius0", c.radius0), ("camera.radius1", c.radius1), ("camera.focal0", c.focal0), ("camera.focal1", c.focal1)] {
        if !(v.is_finite() && v > 0.0) {
            r.push(name, OutOfRange, format!("{v} must be positive"));
        }
    }
    for (name, v) in [("camera.height0", c.height0), ("camera.height1", c.height1), ("camera.angle0", c.angle0), ("camera.angle1", c.angle1)] {
        if !v.is_finite() {
            r.push(name, NotFinite, "not finite");
        }
    }
    if spec.frames < 2 {
        r.push("frames", OutOfRange, format!("need >= 2 frames, got {}", spec.frames));
    }
    if spec.substeps < 1 {
        r.push("substeps", OutOfRange, "need >= 1 substep");
    }
    if !(spec.fps.is_finite() && spec.fps > 0.0) {
        r.push("fps", OutOfRange, format!("fps {} must be positive", spec.fps));
    }
    if spec.resolution[0] == 0 || spec.resolution[1] == 0 {
        r.push("resolution", OutOfRange, "zero-sized resolution");
    }
    if (spec.light_dir.norm() - 1.0).abs() > 1e-9 {
        r.push("light_dir", OutOfRange, format!("norm {} is not 1", spec.light_dir.norm()));
    }
    if spec.ground_albedo.iter().any(|c| !(0.0..=1.0).contains(c)) {
        r.push("ground_albedo", OutOfRange, "ground albedo not in [0, 1]");
    }
    if !spec.gravity.is_finite() {
        r.push("gravity", NotFinite, "gravity not finite");
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        let p = SamplerParams::default();
        let a = sample_scene(7, 0, &p).unwrap().to_json();
        let b = sample_scene(7, 0, &p).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn neighbouring_indices_differ() {
        let p = SamplerParams::default();
        let a = sample_scene(7, 0, &p).unwrap();
        let b = sample_scene(7, 1, &p).unwrap();
        assert_ne!(a.scene_seed, b.scene_seed);
        let differs = a.bodies.len() != b.bodies.len()
            || a.bodies.iter().zip(&b.bodies).any(|(x, y)| x != y);
        assert!(differs);
    }

    #[test]
    fn mix_seed_avalanches() {
        assert_ne!(mix_seed(7, 0), mix_seed(7, 1));
        assert_ne!(mix_seed(7, 0), mix_seed(8, 0));
        let flips = (mix_seed(7, 0) ^ mix_seed(7, 1)).count_ones();
        assert!((16..=48).contains(&flips), "{flips}");
    }

    #[test]
    fn support_stack_rests_on_target() {
        let p = SamplerParams::default();
        let mut checked = 0;
        for idx in 0..60 {
            let s = sample_scene(3, idx, &p).unwrap();
            if s.template != Template::SupportRemoval {
                continue;
            }
            checked += 1;
            let found = s.bodies.iter().any(|top| {
                s.removal_targets.iter().any(|&t| {
                    let sup = s.body(t).unwrap();
                    let gap = (top.position0.z - top.shape.half_height())
                        - (sup.position0.z + sup.shape.half_height());
                    top.id != t && top.mass.is_dynamic() && (0.0..1e-3).contains(&gap)
                })
            });
            assert!(found, "scene {idx} has no body resting on a target");
        }
        assert!(checked >= 10);
    }

    #[test]
    fn removal_target_bounds() {
        let mut spec = sample_scene(1, 0, &SamplerParams::default()).unwrap();
        spec.key_body = None;
        // two dynamic bodies: exactly one target
        spec.bodies.truncate(2);
        for b in &mut spec.bodies {
            b.mass = Mass::Dynamic(1.0);
        }
        for seed in 0..50 {
            assert_eq!(select_removal_targets(&spec, seed).unwrap().len(), 1);
        }
        spec.bodies.truncate(1);
        assert_eq!(select_removal_targets(&spec, 0), Err(SceneError::TooFewBodies { found: 1 }));
    }

    #[test]
    fn removal_targets_repeatable_and_bounded_for_six() {
        let mut spec = SceneSpec::empty([64, 64]);
        for i in 0..6 {
            spec.bodies.push(BodySpec {
                id: i + 1,
                shape: Shape::Sphere { radius: 0.1 },
                mass: Mass::Dynamic(1.0),
                position0: Vec3::new(i as f64, 0.0, 0.1),
                velocity0: Vec3::ZERO,
                restitution: 0.5,
                albedo: [0.5; 3],
            });
        }
        let mut sizes = BTreeSet::new();
        for seed in 0..1000 {
            let t = select_removal_targets(&spec, seed).unwrap();
            assert_eq!(t, select_removal_targets(&spec, seed).unwrap());
            assert!((1..=3).contains(&t.len()));
            sizes.insert(t.len());
        }
        assert_eq!(sizes.len(), 3);
    }

    #[test]
    fn params_out_of_range() {
        let p = SamplerParams { max_bodies: 9, ..Default::default() };
        assert!(matches!(sample_scene(0, 0, &p), Err(SceneError::Range { field: "body_count", .. })));
        let p = SamplerParams { resolution: [31, 64], ..Default::default() };
        assert!(matches!(sample_scene(0, 0, &p), Err(SceneError::Range { field: "resolution", .. })));
    }

    #[test]
    fn validation_names_bad_fields() {
        let mut spec = sample_scene(7, 0, &SamplerParams::default()).unwrap();
        assert!(validate_spec(&spec).is_empty(), "{:?}", validate_spec(&spec));
        spec.bodies[1].restitution = 1.5;
        assert!(validate_spec(&spec).mentions("bodies[1].restitution"));

        let mut spec = sample_scene(7, 0, &SamplerParams::default()).unwrap();
        spec.bodies[1].position0 = spec.bodies[0].position0;
        assert!(validate_spec(&spec).has_kind(ViolationKind::PlacementOverlap));
    }

    #[test]
    fn json_round_trip() {
        let spec = sample_scene(11, 5, &SamplerParams::default()).unwrap();
        assert_eq!(SceneSpec::from_json(&spec.to_json()).unwrap(), spec);
    }
}
