//! Primary-ray raytracer and exact ground-truth optical flow.
//!
//! Pinhole camera, one ray through each pixel center, nearest hit among
//! spheres (quadratic), axis-aligned boxes (slab test) and the ground plane.
//! Lambert shading under one directional light with a hard shadow ray.

use std::collections::HashMap;

use thiserror::Error;

use crate::exec::Exec;
use crate::math::{lerp, Vec3};
use crate::physics::{BodyState, CounterfactualPair};
use crate::scene::{CameraMode, CameraTrajectorySpec, SceneSpec, Shape};

/// Sky color for rays that hit nothing.
pub const BACKGROUND: [f32; 3] = [0.62, 0.74, 0.88];
/// Multiplier applied to shadowed surfaces.
pub const SHADOW_ATTENUATION: f64 = 0.4;
/// Surface code of pixels that see no geometry.
pub const SKY_SURFACE: u8 = 255;

const T_MIN: f64 = 1e-9;
const SHADOW_BIAS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    pub resolution: [u32; 2],
}

/// Orthonormal camera frame: `right`, `up`, `forward`.
#[derive(Clone, Copy, Debug)]
struct Basis {
    right: Vec3,
    up: Vec3,
    forward: Vec3,
}

impl CameraPose {
    fn basis(&self) -> Basis {
        let forward = (self.look_at - self.eye).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        Basis { right, up, forward }
    }

    pub fn width(&self) -> usize {
        self.resolution[0] as usize
    }

    pub fn height(&self) -> usize {
        self.resolution[1] as usize
    }

    /// Unit ray direction through the center of pixel `(col, row)`.
    pub fn ray_dir(&self, col: usize, row: usize) -> Vec3 {
        let b = self.basis();
        self.ray_dir_with(&b, col, row)
    }

    fn ray_dir_with(&self, b: &Basis, col: usize, row: usize) -> Vec3 {
        let x = col as f64 + 0.5 - self.width() as f64 / 2.0;
        let y = self.height() as f64 / 2.0 - (row as f64 + 0.5);
        (b.forward * self.focal + b.right * x + b.up * y).normalized()
    }

    /// Continuous image coordinates of a world point (pixel `(c, r)` has its
    /// center at `(c + 0.5, r + 0.5)`); `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let b = self.basis();
        self.project_with(&b, p)
    }

    fn project_with(&self, b: &Basis, p: Vec3) -> Option<(f64, f64)> {
        let rel = p - self.eye;
        let z = rel.dot(b.forward);
        if z <= 1e-9 {
            return None;
        }
        let x = rel.dot(b.right);
        let y = rel.dot(b.up);
        Some((self.width() as f64 / 2.0 + self.focal * x / z, self.height() as f64 / 2.0 - self.focal * y / z))
    }
}

/// Camera pose at clip fraction `t_frac`.
///
/// Orbit: eye on the circle of interpolated radius/angle about `center`, at the
/// interpolated height. Dolly: eye slides along the initial view axis, its
/// distance interpolated between `hypot(radius0, height0)` and
/// `hypot(radius1, height1)`. The camera always looks at `center`, z up.
pub fn camera_at(traj: &CameraTrajectorySpec, t_frac: f64, resolution: [u32; 2]) -> CameraPose {
    let t = t_frac.clamp(0.0, 1.0);
    let focal = lerp(traj.focal0, traj.focal1, t);
    let eye = match traj.mode {
        CameraMode::Orbit => {
            let r = lerp(traj.radius0, traj.radius1, t);
            let h = lerp(traj.height0, traj.height1, t);
            let a = lerp(traj.angle0, traj.angle1, t);
            traj.center + Vec3::new(r * a.cos(), r * a.sin(), h)
        }
        CameraMode::Dolly => {
            let offset0 = Vec3::new(traj.radius0 * traj.angle0.cos(), traj.radius0 * traj.angle0.sin(), traj.height0);
            let d0 = traj.radius0.hypot(traj.height0);
            let d1 = traj.radius1.hypot(traj.height1);
            if t == 0.0 {
                traj.center + offset0
            } else {
                traj.center + offset0.normalized() * lerp(d0, d1, t)
            }
        }
    };
    CameraPose { eye, look_at: traj.center, up: Vec3::Z, focal, resolution }
}

/// One rendered frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePacket {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// Body id per pixel; 0 for ground and sky.
    pub instance: Vec<u32>,
    /// Ray distance to the hit, `+inf` for sky.
    pub depth: Vec<f64>,
    pub shadow: Vec<bool>,
    /// Hit point minus body center for body hits; the world hit point for the
    /// ground (whose "center" is the origin); zero for sky.
    pub hit_offset: Vec<Vec3>,
    /// Smooth-surface patch within the instance: box faces are `1..=6`,
    /// sky is [`SKY_SURFACE`], everything else 0.
    pub surface: Vec<u8>,
}

impl FramePacket {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// `rgb` quantized to 8 bits, `round(255 * v)`.
    pub fn rgb8(&self) -> Vec<u8> {
        self.rgb.iter().map(|&v| quantize(v)).collect()
    }

    pub fn instance8(&self) -> Vec<u8> {
        self.instance.iter().map(|&id| id.min(255) as u8).collect()
    }

    pub fn is_ground(&self, i: usize) -> bool {
        self.instance[i] == 0 && self.depth[i].is_finite()
    }

    pub fn labels(&self) -> PixelLabels<'_> {
        PixelLabels { instance: &self.instance, shadow: &self.shadow, surface: &self.surface }
    }
}

/// Per-pixel identity of what a pixel sees: body, face, and shadow state.
#[derive(Clone, Copy, Debug)]
pub struct PixelLabels<'a> {
    pub instance: &'a [u32],
    pub shadow: &'a [bool],
    pub surface: &'a [u8],
}

impl PixelLabels<'_> {
    fn same(&self, i: usize, other: &PixelLabels, j: usize) -> bool {
        self.instance[i] == other.instance[j] && self.shadow[i] == other.shadow[j] && self.surface[i] == other.surface[j]
    }
}

/// Face code of an axis-aligned outward normal.
fn box_face(normal: Vec3) -> u8 {
    let axis = (0..3).max_by(|&a, &b| normal[a].abs().total_cmp(&normal[b].abs())).unwrap_or(0);
    1 + 2 * axis as u8 + (normal[axis] > 0.0) as u8
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel displacement from frame `t` to `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Row-major `(u, v)` in pixels.
    pub uv: Vec<[f32; 2]>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { width, height, uv: vec![[0.0, 0.0]; width * height], valid: vec![true; width * height] }
    }
}

#[derive(Clone, Copy)]
struct Hit {
    t: f64,
    normal: Vec3,
    /// Index into the body list, `None` for ground.
    body: Option<usize>,
}

/// Bodies taking part in a render: alive and, with `exclude_removed`, not a removal target.
struct SceneView<'a> {
    shapes: Vec<(usize, &'a Shape, Vec3)>,
}

impl<'a> SceneView<'a> {
    fn new(states: &[BodyState], spec: &'a SceneSpec, exclude_removed: bool) -> Self {
        let shapes = spec
            .bodies
            .iter()
            .zip(states)
            .enumerate()
            .filter(|(_, (b, s))| s.alive && !(exclude_removed && spec.removal_targets.contains(&b.id)))
            .map(|(i, (b, s))| (i, &b.shape, s.position))
            .collect();
        SceneView { shapes }
    }

    fn nearest(&self, origin: Vec3, dir: Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for &(i, shape, center) in &self.shapes {
            if let Some((t, normal)) = intersect(shape, center, origin, dir) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, normal, body: Some(i) });
                }
            }
        }
        if dir.z < 0.0 && origin.z > 0.0 {
            let t = -origin.z / dir.z;
            if t > T_MIN && best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, normal: Vec3::Z, body: None });
            }
        }
        best
    }

    fn occluded(&self, origin: Vec3, dir: Vec3) -> bool {
        self.shapes.iter().any(|&(_, shape, center)| intersect(shape, center, origin, dir).is_some())
    }
}

/// Ray/shape intersection: nearest `t > T_MIN` and the outward normal there.
fn intersect(shape: &Shape, center: Vec3, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
    match *shape {
        Shape::Sphere { radius } => {
            let oc = origin - center;
            let b = oc.dot(dir);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            let mut t = -b - s;
            if t <= T_MIN {
                t = -b + s;
            }
            if t <= T_MIN {
                return None;
            }
            let p = origin + dir * t;
            Some((t, (p - center) * (1.0 / radius)))
        }
        Shape::Box { half_extents } => {
            let lo = center - half_extents;
            let hi = center + half_extents;
            let mut t_enter = f64::NEG_INFINITY;
            let mut t_exit = f64::INFINITY;
            let mut enter_axis = 0;
            let mut exit_axis = 0;
            for i in 0..3 {
                if dir[i] == 0.0 {
                    if origin[i] < lo[i] || origin[i] > hi[i] {
                        return None;
                    }
                    continue;
                }
                let inv = 1.0 / dir[i];
                let (mut t0, mut t1) = ((lo[i] - origin[i]) * inv, (hi[i] - origin[i]) * inv);
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > t_enter {
                    t_enter = t0;
                    enter_axis = i;
                }
                if t1 < t_exit {
                    t_exit = t1;
                    exit_axis = i;
                }
            }
            if t_enter > t_exit || t_exit <= T_MIN {
                return None;
            }
            if t_enter > T_MIN {
                let sign = if dir[enter_axis] > 0.0 { -1.0 } else { 1.0 };
                Some((t_enter, Vec3::axis(enter_axis) * sign))
            } else {
                let sign = if dir[exit_axis] > 0.0 { 1.0 } else { -1.0 };
                Some((t_exit, Vec3::axis(exit_axis) * sign))
            }
        }
    }
}

/// Renders one frame with the default execution strategy.
pub fn render_frame(states: &[BodyState], spec: &SceneSpec, camera: &CameraPose, exclude_removed: bool) -> FramePacket {
    render_frame_with(Exec::default(), states, spec, camera, exclude_removed)
}

/// Renders one frame; rows are distributed according to `exec`.
pub fn render_frame_with(
    exec: Exec,
    states: &[BodyState],
    spec: &SceneSpec,
    camera: &CameraPose,
    exclude_removed: bool,
) -> FramePacket {
    let (w, h) = (camera.width(), camera.height());
    let view = SceneView::new(states, spec, exclude_removed);
    let basis = camera.basis();
    let light = spec.light_dir;

    struct Px {
        rgb: [f32; 3],
        instance: u32,
        depth: f64,
        shadow: bool,
        offset: Vec3,
        surface: u8,
    }
    let sky = Px { rgb: BACKGROUND, instance: 0, depth: f64::INFINITY, shadow: false, offset: Vec3::ZERO, surface: SKY_SURFACE };

    let rows: Vec<Vec<Px>> = exec.map_range(h, |row| {
        (0..w)
            .map(|col| {
                let dir = camera.ray_dir_with(&basis, col, row);
                let Some(hit) = view.nearest(camera.eye, dir) else {
                    return Px { ..sky };
                };
                let p = camera.eye + dir * hit.t;
                let shadow = view.occluded(p + hit.normal * SHADOW_BIAS, light);
                let (albedo, instance, offset) = match hit.body {
                    Some(i) => (spec.bodies[i].albedo, spec.bodies[i].id, p - states[i].position),
                    None => (spec.ground_albedo, 0, p),
                };
                let surface = match hit.body.map(|i| &spec.bodies[i].shape) {
                    Some(Shape::Box { .. }) => box_face(hit.normal),
                    _ => 0,
                };
                let lambert = hit.normal.dot(light).max(0.0) * if shadow { SHADOW_ATTENUATION } else { 1.0 };
                let rgb = [
                    (albedo[0] * lambert) as f32,
                    (albedo[1] * lambert) as f32,
                    (albedo[2] * lambert) as f32,
                ];
                Px { rgb, instance, depth: hit.t, shadow, offset, surface }
            })
            .collect()
    });

    let n = w * h;
    let mut packet = FramePacket {
        width: w,
        height: h,
        rgb: Vec::with_capacity(3 * n),
        instance: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        shadow: Vec::with_capacity(n),
        hit_offset: Vec::with_capacity(n),
        surface: Vec::with_capacity(n),
    };
    for px in rows.into_iter().flatten() {
        packet.rgb.extend_from_slice(&px.rgb);
        packet.instance.push(px.instance);
        packet.depth.push(px.depth);
        packet.shadow.push(px.shadow);
        packet.hit_offset.push(px.offset);
        packet.surface.push(px.surface);
    }
    packet
}

/// Exact flow from frame `t` to `t + 1` by moving each hit point with its body.
///
/// Bodies are translation-only, so a surface point at `t + 1` is the body
/// center at `t + 1` plus the stored hit offset; ground points stay put.
/// A pixel is invalid when it sees sky, its body is dead at `t + 1`, or the
/// point projects outside the image (or behind the camera).
pub fn ground_truth_flow(
    packet_t: &FramePacket,
    states_t: &[BodyState],
    states_t1: &[BodyState],
    cam_t: &CameraPose,
    cam_t1: &CameraPose,
    spec: &SceneSpec,
) -> Result<FlowField, RenderError> {
    let (w, h) = (packet_t.width, packet_t.height);
    if cam_t.width() != w || cam_t.height() != h || cam_t1.width() != w || cam_t1.height() != h {
        return Err(RenderError::ShapeMismatch(format!("packet is {w}x{h}, cameras disagree")));
    }
    if states_t.len() != spec.bodies.len() || states_t1.len() != spec.bodies.len() {
        return Err(RenderError::ShapeMismatch(format!(
            "{} / {} states for {} bodies",
            states_t.len(),
            states_t1.len(),
            spec.bodies.len()
        )));
    }
    let by_id: HashMap<u32, &BodyState> = states_t1.iter().map(|s| (s.id, s)).collect();
    let basis = cam_t1.basis();
    let mut flow = FlowField { width: w, height: h, uv: vec![[0.0, 0.0]; w * h], valid: vec![false; w * h] };
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !packet_t.depth[i].is_finite() {
                continue;
            }
            let world = match packet_t.instance[i] {
                0 => packet_t.hit_offset[i],
                id => match by_id.get(&id) {
                    Some(s) if s.alive => s.position + packet_t.hit_offset[i],
                    _ => continue,
                },
            };
            let Some((px, py)) = cam_t1.project_with(&basis, world) else { continue };
            if !(px >= 0.0 && py >= 0.0 && px < w as f64 && py < h as f64) {
                continue;
            }
            flow.uv[i] = [(px - (col as f64 + 0.5)) as f32, (py - (row as f64 + 0.5)) as f32];
            flow.valid[i] = true;
        }
    }
    Ok(flow)
}

/// Both variants of a counterfactual pair rendered under the same camera path.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPair {
    pub cameras: Vec<CameraPose>,
    pub factual: Vec<FramePacket>,
    pub counterfactual: Vec<FramePacket>,
    /// `T - 1` flows, frame `t` to `t + 1`.
    pub factual_flows: Vec<FlowField>,
    pub counterfactual_flows: Vec<FlowField>,
}

/// Camera pose for each of the `frames` frames of a clip.
pub fn clip_cameras(spec: &SceneSpec) -> Vec<CameraPose> {
    let last = (spec.frames.max(2) - 1) as f64;
    (0..spec.frames).map(|t| camera_at(&spec.camera, t as f64 / last, spec.resolution)).collect()
}

pub fn render_pair(pair: &CounterfactualPair, spec: &SceneSpec) -> Result<RenderedPair, RenderError> {
    render_pair_with(Exec::default(), pair, spec)
}

/// Renders both variants and their flows; frames are distributed according to `exec`.
pub fn render_pair_with(exec: Exec, pair: &CounterfactualPair, spec: &SceneSpec) -> Result<RenderedPair, RenderError> {
    let t = spec.frames;
    if pair.factual.frames() != t || pair.counterfactual.frames() != t {
        return Err(RenderError::ShapeMismatch(format!(
            "trajectories have {} / {} frames, spec has {t}",
            pair.factual.frames(),
            pair.counterfactual.frames()
        )));
    }
    let cameras = clip_cameras(spec);
    // frames in parallel, pixels sequential within a frame
    let inner = Exec::Sequential;
    let factual = exec.map_range(t, |i| render_frame_with(inner, &pair.factual.states[i], spec, &cameras[i], false));
    let counterfactual =
        exec.map_range(t, |i| render_frame_with(inner, &pair.counterfactual.states[i], spec, &cameras[i], true));
    let flows = |packets: &[FramePacket], states: &[Vec<BodyState>]| {
        exec.try_map_range(t - 1, |i| {
            ground_truth_flow(&packets[i], &states[i], &states[i + 1], &cameras[i], &cameras[i + 1], spec)
        })
    };
    let factual_flows = flows(&factual, &pair.factual.states)?;
    let counterfactual_flows = flows(&counterfactual, &pair.counterfactual.states)?;
    Ok(RenderedPair { cameras, factual, counterfactual, factual_flows, counterfactual_flows })
}

/// Pixels whose flow is usable for photometric checks: valid flow, and every
/// bilinear tap at `pixel + uv` in the next frame sees the same body face
/// under the same shadow state.
pub fn consistent_pixels(flow: &FlowField, at_t: PixelLabels, at_t1: PixelLabels) -> Vec<bool> {
    let (w, h) = (flow.width, flow.height);
    (0..w * h)
        .map(|i| {
            if !flow.valid[i] {
                return false;
            }
            let Some(taps) = bilinear_taps(w, h, i, flow.uv[i]) else { return false };
            taps.iter().all(|&(j, _)| at_t.same(i, &at_t1, j))
        })
        .collect()
}

/// Bilinear taps (index, weight) for sampling at pixel `i` displaced by `uv`.
fn bilinear_taps(w: usize, h: usize, i: usize, uv: [f32; 2]) -> Option<[(usize, f64); 4]> {
    let (col, row) = ((i % w) as f64, (i / w) as f64);
    let x = col + uv[0] as f64;
    let y = row + uv[1] as f64;
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    Some([
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ])
}

/// Inverse-warps `next` (RGB, row-major) by `flow` and returns the PSNR
/// against `current` over pixels where `mask` is set. `+inf` when the masked
/// error is zero or the mask is empty.
pub fn inverse_warp_psnr(current: &[f32], next: &[f32], flow: &FlowField, mask: &[bool]) -> f64 {
    let (w, h) = (flow.width, flow.height);
    let mut se = 0.0f64;
    let mut count = 0usize;
    for i in 0..w * h {
        if !mask[i] {
            continue;
        }
        let Some(taps) = bilinear_taps(w, h, i, flow.uv[i]) else { continue };
        for c in 0..3 {
            let warped: f64 = taps.iter().map(|&(j, wt)| wt * next[3 * j + c] as f64).sum();
            let d = warped - current[3 * i + c] as f64;
            se += d * d;
        }
        count += 3;
    }
    if count == 0 || se == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (count as f64 / se).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::initial_states;
    use crate::scene::{BodySpec, Mass};
    use std::collections::BTreeSet;
    use std::f64::consts::PI;

    fn overhead(res: u32) -> CameraPose {
        CameraPose { eye: Vec3::new(0.0, 0.0, 5.0), look_at: Vec3::ZERO, up: Vec3::Y, focal: 100.0, resolution: [res, res] }
    }

    fn one_sphere(r: f64, z: f64) -> SceneSpec {
        let mut spec = SceneSpec::empty([64, 64]);
        spec.bodies.push(BodySpec {
            id: 3,
            shape: Shape::Sphere { radius: r },
            mass: Mass::Dynamic(1.0),
            position0: Vec3::new(0.0, 0.0, z),
            velocity0: Vec3::ZERO,
            restitution: 0.5,
            albedo: [0.9, 0.2, 0.2],
        });
        spec
    }

    #[test]
    fn camera_endpoints_and_linearity() {
        let mut c = SceneSpec::empty([64, 64]).camera;
        c.focal0 = 300.0;
        c.focal1 = 500.0;
        c.angle0 = 0.0;
        c.angle1 = PI;
        c.center = Vec3::ZERO;
        let p0 = camera_at(&c, 0.0, [64, 64]);
        assert_eq!(p0.eye, Vec3::new(c.radius0, 0.0, c.height0));
        assert_eq!(p0.focal, 300.0);
        assert_eq!(camera_at(&c, 0.5, [64, 64]).focal, 400.0);
        let p1 = camera_at(&c, 1.0, [64, 64]);
        assert!((p1.eye.x + p0.eye.x).abs() < 1e-12);
        assert!((p1.eye.z - p0.eye.z).abs() < 1e-12);
    }

    #[test]
    fn dolly_moves_along_view_axis() {
        let mut c = SceneSpec::empty([64, 64]).camera;
        c.mode = CameraMode::Dolly;
        c.radius1 = c.radius0 * 0.5;
        c.height1 = c.height0 * 0.5;
        let p0 = camera_at(&c, 0.0, [64, 64]);
        let p1 = camera_at(&c, 1.0, [64, 64]);
        let axis0 = (p0.eye - c.center).normalized();
        let axis1 = (p1.eye - c.center).normalized();
        assert!((axis0 - axis1).norm() < 1e-12);
        assert!(((p1.eye - c.center).norm() - 0.5 * (p0.eye - c.center).norm()).abs() < 1e-12);
    }

    #[test]
    fn projection_inverts_ray() {
        let cam = camera_at(&SceneSpec::empty([64, 48]).camera, 0.3, [64, 48]);
        let d = cam.ray_dir(10, 37);
        let (x, y) = cam.project(cam.eye + d * 3.0).unwrap();
        assert!((x - 10.5).abs() < 1e-9 && (y - 37.5).abs() < 1e-9);
    }

    #[test]
    fn empty_scene_sees_only_ground() {
        let spec = SceneSpec::empty([64, 64]);
        let f = render_frame(&[], &spec, &overhead(64), false);
        assert!(f.instance.iter().all(|&i| i == 0));
        assert!(f.depth.iter().all(|d| d.is_finite()));
        assert!(f.rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sphere_disk_area() {
        let (r, z) = (0.5, 0.5);
        let spec = one_sphere(r, z);
        let cam = overhead(64);
        let states = initial_states(&spec, &BTreeSet::new());
        let f = render_frame(&states, &spec, &cam, false);
        let ids: BTreeSet<u32> = f.instance.iter().copied().filter(|&i| i > 0).collect();
        assert_eq!(ids, [3].into());
        let count = f.instance.iter().filter(|&&i| i == 3).count() as f64;
        // exact silhouette of a sphere at distance d: radius f·r/sqrt(d² − r²)
        let d = 5.0 - z;
        let rho = cam.focal * r / (d * d - r * r).sqrt();
        let expected = PI * rho * rho;
        assert!((count - expected).abs() / expected < 0.05, "{count} vs {expected}");
        assert_eq!(f, render_frame(&states, &spec, &cam, false));
    }

    #[test]
    fn exec_strategies_agree() {
        let spec = one_sphere(0.3, 0.3);
        let s = initial_states(&spec, &BTreeSet::new());
        let cam = camera_at(&spec.camera, 0.0, spec.resolution);
        assert_eq!(
            render_frame_with(Exec::Sequential, &s, &spec, &cam, false),
            render_frame_with(Exec::Parallel, &s, &spec, &cam, false)
        );
    }

    #[test]
    fn static_scene_static_camera_has_zero_flow() {
        let spec = one_sphere(0.3, 0.3);
        let s = initial_states(&spec, &BTreeSet::new());
        let cam = camera_at(&spec.camera, 0.0, spec.resolution);
        let f = render_frame(&s, &spec, &cam, false);
        let flow = ground_truth_flow(&f, &s, &s, &cam, &cam, &spec).unwrap();
        for (uv, v) in flow.uv.iter().zip(&flow.valid) {
            if *v {
                assert!(uv[0].abs() < 1e-4 && uv[1].abs() < 1e-4);
            }
        }
        assert!(flow.valid.iter().any(|v| *v));
    }

    #[test]
    fn box_slab_hit_from_above() {
        let shape = Shape::Box { half_extents: Vec3::new(0.5, 0.5, 0.5) };
        let (t, n) = intersect(&shape, Vec3::ZERO, Vec3::new(0.1, 0.2, 3.0), -Vec3::Z).unwrap();
        assert!((t - 2.5).abs() < 1e-12);
        assert_eq!(n, Vec3::Z);
        assert!(intersect(&shape, Vec3::ZERO, Vec3::new(2.0, 0.0, 3.0), -Vec3::Z).is_none());
    }
}
