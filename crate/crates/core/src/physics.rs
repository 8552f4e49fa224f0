//! Fixed-timestep, translation-only rigid-body dynamics and counterfactual re-simulation.
//!
//! One substep:
//!
//! 1. gravity: `v += g dt` for alive dynamic bodies;
//! 2. speculative contacts: every pair (and body–ground) within reach this
//!    step is solved with sequential normal impulses in `(min_id, max_id)`
//!    order. A contact activates when the bodies would overlap by the end of
//!    the step; fast contacts bounce with the product restitution, slow ones
//!    (relative normal speed below [`resting_speed`]) only close the gap;
//! 3. a support pass re-solves vertical stacking contacts bottom-up with the
//!    lower body frozen, so resting weight never leaks into supports;
//! 4. `x += v dt`;
//! 5. residual overlap is projected out at [`PROJECTION_FRACTION`] per substep.
//!
//! The ground plane and static bodies have infinite mass. Ground restitution is 1,
//! so a body-ground contact bounces with the body's own coefficient.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ground_proximity, shape_proximity, Proximity};
use crate::math::Vec3;
use crate::scene::{Mass, SceneSpec, STANDARD_GRAVITY};

/// Relative normal speed below which restitution is treated as zero under
/// standard gravity, m/s.
pub const RESTING_SPEED: f64 = 0.05;

/// Resting threshold for a scene. It absorbs the approach speed gravity adds
/// each substep, so it scales with `|g|`; without gravity nothing rests.
pub fn resting_speed(spec: &SceneSpec) -> f64 {
    RESTING_SPEED * spec.gravity.norm() / STANDARD_GRAVITY
}

/// Fraction of residual penetration removed per substep.
pub const PROJECTION_FRACTION: f64 = 0.8;
/// Default divergence threshold for affected-body detection, meters.
pub const DIVERGENCE_EPS: f64 = 1e-6;
/// Any position or velocity component beyond this magnitude is a blowup.
pub const BLOWUP_LIMIT: f64 = 1e6;

const SOLVER_ITERATIONS: usize = 32;
const IMPULSE_TOLERANCE: f64 = 1e-12;
const SPECULATIVE_MARGIN: f64 = 1e-3;
/// Id used for the ground plane in contacts and contact events.
pub const GROUND_ID: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub frame: usize,
    pub id_a: u32,
    pub id_b: u32,
    pub normal: Vec3,
    /// Total normal impulse over the substeps leading up to `frame`, N·s.
    pub impulse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scene_seed: u64,
    /// Substep length, seconds.
    pub dt: f64,
    pub substeps: usize,
    pub removed: BTreeSet<u32>,
    /// `states[t][i]` is body `spec.bodies[i]` at frame `t`.
    pub states: Vec<Vec<BodyState>>,
    pub contact_events: Vec<ContactEvent>,
}

impl Trajectory {
    pub fn frames(&self) -> usize {
        self.states.len()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.states.first().map(|s| s.iter().map(|b| b.id).collect()).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub factual: Trajectory,
    pub counterfactual: Trajectory,
    pub removed_ids: BTreeSet<u32>,
    pub affected_ids: BTreeSet<u32>,
    pub first_divergence_frame: Option<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("numerical blowup on body {body}{}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    NumericalBlowup { body: u32, frame: Option<usize> },
    #[error("trajectory shapes do not match: {0}")]
    ShapeMismatch(String),
    #[error("unknown body id {0}")]
    UnknownId(u32),
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
}

/// A detected overlap (or touch) between two bodies or a body and the ground.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub id_a: u32,
    pub id_b: u32,
    /// Unit normal from `id_a` toward `id_b`.
    pub normal: Vec3,
    pub penetration: f64,
}

/// Initial states for a spec: every body at its `position0`/`velocity0`, removed ids dead.
pub fn initial_states(spec: &SceneSpec, removed: &BTreeSet<u32>) -> Vec<BodyState> {
    spec.bodies
        .iter()
        .map(|b| BodyState {
            id: b.id,
            position: b.position0,
            velocity: if b.mass.is_dynamic() { b.velocity0 } else { Vec3::ZERO },
            alive: !removed.contains(&b.id),
        })
        .collect()
}

/// Pairs (sorted by `(min_id, max_id)`, ground first per body) that overlap or touch.
pub fn detect_contacts(states: &[BodyState], spec: &SceneSpec) -> Vec<Contact> {
    let mut out: Vec<Contact> = pair_proximities(states, spec, |_, _, _| true)
        .into_iter()
        .filter(|p| p.prox.distance <= 0.0)
        .map(|p| Contact {
            id_a: p.id_a,
            id_b: p.id_b,
            normal: p.prox.normal,
            penetration: 0.0 - p.prox.distance,
        })
        .collect();
    out.sort_by_key(|c| (c.id_a, c.id_b));
    out
}

struct PairProximity {
    /// `None` is the ground plane.
    a: Option<usize>,
    b: usize,
    id_a: u32,
    id_b: u32,
    prox: Proximity,
}

/// Proximity of every alive pair with at least one dynamic side, plus dynamic bodies vs ground.
/// `keep(a, b, prox)` filters candidates; output is in `(min_id, max_id)` order.
fn pair_proximities(
    states: &[BodyState],
    spec: &SceneSpec,
    keep: impl Fn(Option<usize>, usize, &Proximity) -> bool,
) -> Vec<PairProximity> {
    let mut out = Vec::new();
    for (i, si) in states.iter().enumerate() {
        let bi = &spec.bodies[i];
        if !si.alive || !bi.mass.is_dynamic() {
            continue;
        }
        let prox = ground_proximity(&bi.shape, si.position);
        if keep(None, i, &prox) {
            out.push(PairProximity { a: None, b: i, id_a: GROUND_ID, id_b: si.id, prox });
        }
    }
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let (si, sj) = (&states[i], &states[j]);
            let (bi, bj) = (&spec.bodies[i], &spec.bodies[j]);
            if !si.alive || !sj.alive || !(bi.mass.is_dynamic() || bj.mass.is_dynamic()) {
                continue;
            }
            // normal always points from the lower id to the higher id
            let (a, b) = if si.id < sj.id { (i, j) } else { (j, i) };
            let prox = shape_proximity(
                &spec.bodies[a].shape,
                states[a].position,
                &spec.bodies[b].shape,
                states[b].position,
            );
            if keep(Some(a), b, &prox) {
                out.push(PairProximity { a: Some(a), b, id_a: states[a].id, id_b: states[b].id, prox });
            }
        }
    }
    out.sort_by_key(|p| (p.id_a, p.id_b));
    out
}

struct SolverContact {
    a: Option<usize>,
    b: usize,
    id_a: u32,
    id_b: u32,
    normal: Vec3,
    distance: f64,
    restitution: f64,
    target: Option<f64>,
    impulse: f64,
}

/// Per-step contact record: pair, normal, and accumulated normal impulse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepImpulse {
    pub id_a: u32,
    pub id_b: u32,
    pub normal: Vec3,
    pub impulse: f64,
}

/// Advances `states` by one substep. See the module docs for the scheme.
pub fn step(states: &[BodyState], spec: &SceneSpec, dt: f64) -> Result<Vec<BodyState>, PhysicsError> {
    let mut next = states.to_vec();
    step_in_place(&mut next, spec, dt, &mut Vec::new())?;
    Ok(next)
}

/// In-place substep; pushes one [`StepImpulse`] per contact that received an impulse.
pub fn step_in_place(
    states: &mut [BodyState],
    spec: &SceneSpec,
    dt: f64,
    impulses: &mut Vec<StepImpulse>,
) -> Result<(), PhysicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(PhysicsError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if states.len() != spec.bodies.len() {
        return Err(PhysicsError::ShapeMismatch(format!(
            "{} states for {} bodies",
            states.len(),
            spec.bodies.len()
        )));
    }
    for s in states.iter() {
        if !(s.position.is_finite() && s.velocity.is_finite()) {
            return Err(PhysicsError::NumericalBlowup { body: s.id, frame: None });
        }
    }
    let inv_mass: Vec<f64> = spec.bodies.iter().map(|b| b.mass.inverse()).collect();
    let dynamic: Vec<bool> = spec.bodies.iter().map(|b| b.mass.is_dynamic()).collect();

    for (s, &dynamic) in states.iter_mut().zip(&dynamic) {
        if s.alive && dynamic {
            s.velocity += spec.gravity * dt;
        }
    }

    // speculative contact set
    let candidates = pair_proximities(states, spec, |a, b, prox| {
        let va = a.map_or(Vec3::ZERO, |a| states[a].velocity);
        let reach = (va.norm() + states[b].velocity.norm()) * dt + SPECULATIVE_MARGIN;
        prox.distance < reach
    });
    let mut contacts: Vec<SolverContact> = candidates
        .into_iter()
        .map(|p| {
            let e_a = p.a.map_or(1.0, |a| spec.bodies[a].restitution);
            SolverContact {
                a: p.a,
                b: p.b,
                id_a: p.id_a,
                id_b: p.id_b,
                normal: p.prox.normal,
                distance: p.prox.distance,
                restitution: e_a * spec.bodies[p.b].restitution,
                target: None,
                impulse: 0.0,
            }
        })
        .collect();

    let weight = |i: Option<usize>| i.map_or(0.0, |i| inv_mass[i]);
    let resting = resting_speed(spec);

    for _ in 0..SOLVER_ITERATIONS {
        let mut applied = false;
        for c in contacts.iter_mut() {
            let vn = relative_normal_speed(states, c);
            // restitution is taken from the approach speed at each (re)closing, so a contact
            // struck again after a neighbour's impulse bounces as a fresh pairwise collision
            if !(vn < 0.0 && c.distance + vn * dt < 0.0) {
                continue;
            }
            let e = if -vn < resting { 0.0 } else { c.restitution };
            let close = -c.distance.max(0.0) / dt;
            let target = (-e * vn).max(close);
            c.target = Some(target);
            if target - vn > IMPULSE_TOLERANCE {
                let j = apply_normal_impulse(states, c, target - vn, weight(c.a), inv_mass[c.b]);
                c.impulse += j;
                applied = true;
            }
        }
        if !applied {
            break;
        }
    }

    let fixed: Vec<bool> = dynamic.iter().map(|d| !d).collect();
    support_pass(states, &mut contacts, &fixed, &weight);

    for (s, &dynamic) in states.iter_mut().zip(&dynamic) {
        if s.alive && dynamic {
            s.position += s.velocity * dt;
        }
    }

    // residual overlap, supports held fixed against what they carry
    let levels = support_levels(&fixed, &contacts);
    let overlaps = pair_proximities(states, spec, |_, _, prox| prox.distance < 0.0);
    for p in overlaps {
        let fresh = match p.a {
            Some(a) => shape_proximity(&spec.bodies[a].shape, states[a].position, &spec.bodies[p.b].shape, states[p.b].position),
            None => ground_proximity(&spec.bodies[p.b].shape, states[p.b].position),
        };
        if fresh.distance >= 0.0 {
            continue;
        }
        let mut wa = weight(p.a);
        let mut wb = inv_mass[p.b];
        if let Some(a) = p.a {
            match stacking_order(&levels, a, p.b, fresh.normal) {
                Some(Order::AUnderB) => wa = 0.0,
                Some(Order::BUnderA) => wb = 0.0,
                None => {}
            }
        }
        let total = wa + wb;
        if total == 0.0 {
            continue;
        }
        let correction = PROJECTION_FRACTION * -fresh.distance;
        if let Some(a) = p.a {
            states[a].position -= fresh.normal * (correction * wa / total);
        }
        states[p.b].position += fresh.normal * (correction * wb / total);
    }

    for s in states.iter() {
        if s.position.max_abs() > BLOWUP_LIMIT || s.velocity.max_abs() > BLOWUP_LIMIT || !s.position.is_finite() {
            return Err(PhysicsError::NumericalBlowup { body: s.id, frame: None });
        }
    }

    impulses.extend(contacts.iter().filter(|c| c.impulse > 0.0).map(|c| StepImpulse {
        id_a: c.id_a,
        id_b: c.id_b,
        normal: c.normal,
        impulse: c.impulse,
    }));
    Ok(())
}

fn relative_normal_speed(states: &[BodyState], c: &SolverContact) -> f64 {
    let va = c.a.map_or(Vec3::ZERO, |a| states[a].velocity);
    (states[c.b].velocity - va).dot(c.normal)
}

/// Raises the relative normal speed of a contact by `dv`; returns the impulse magnitude.
fn apply_normal_impulse(states: &mut [BodyState], c: &SolverContact, dv: f64, wa: f64, wb: f64) -> f64 {
    let n = c.normal;
    // against an infinite mass the velocity change is applied directly so it lands exactly on target
    if wa == 0.0 {
        states[c.b].velocity += n * dv;
        return if wb > 0.0 { dv / wb } else { 0.0 };
    }
    if wb == 0.0 {
        if let Some(a) = c.a {
            states[a].velocity -= n * dv;
        }
        return dv / wa;
    }
    let j = dv / (wa + wb);
    if let Some(a) = c.a {
        states[a].velocity -= n * (j * wa);
    }
    states[c.b].velocity += n * (j * wb);
    j
}

const UNSUPPORTED: usize = usize::MAX;

enum Order {
    AUnderB,
    BUnderA,
}

/// Support depth of each body: 0 for static bodies, 1 for bodies standing on ground or a static body,
/// `k + 1` for bodies standing on a depth-`k` body; `UNSUPPORTED` otherwise.
fn support_levels(fixed: &[bool], contacts: &[SolverContact]) -> Vec<usize> {
    let mut level: Vec<usize> = fixed.iter().map(|&f| if f { 0 } else { UNSUPPORTED }).collect();
    for c in contacts.iter().filter(|c| c.target.is_some() && c.a.is_none()) {
        level[c.b] = 1;
    }
    // relax until stable; contact lists are tiny
    loop {
        let mut changed = false;
        for c in contacts.iter().filter(|c| c.target.is_some()) {
            let Some(a) = c.a else { continue };
            let up = c.normal.z;
            let (lower, upper) = if up > 0.5 {
                (a, c.b)
            } else if up < -0.5 {
                (c.b, a)
            } else {
                continue;
            };
            let base = if level[lower] == UNSUPPORTED { None } else { Some(level[lower]) };
            if let Some(base) = base {
                if level[upper] == UNSUPPORTED || level[upper] > base + 1 {
                    level[upper] = base + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    level
}

fn stacking_order(level: &[usize], a: usize, b: usize, normal_ab: Vec3) -> Option<Order> {
    let (la, lb) = (level[a], level[b]);
    if la == UNSUPPORTED || lb == UNSUPPORTED || la == lb {
        return None;
    }
    if la < lb && normal_ab.z > 0.5 {
        Some(Order::AUnderB)
    } else if lb < la && normal_ab.z < -0.5 {
        Some(Order::BUnderA)
    } else {
        None
    }
}

/// Final bottom-up pass over active contacts, treating the supporting body as immovable.
fn support_pass(
    states: &mut [BodyState],
    contacts: &mut [SolverContact],
    fixed: &[bool],
    weight: &dyn Fn(Option<usize>) -> f64,
) {
    let levels = support_levels(fixed, contacts);
    let depth = |c: &SolverContact| match c.a {
        None => 0,
        Some(a) => levels[a].min(levels[c.b]),
    };
    let mut order: Vec<usize> = (0..contacts.len()).filter(|&i| contacts[i].target.is_some()).collect();
    order.sort_by_key(|&i| (depth(&contacts[i]), contacts[i].id_a, contacts[i].id_b));
    for i in order {
        let c = &contacts[i];
        let (mut wa, mut wb) = (weight(c.a), weight(Some(c.b)));
        match c.a {
            None => {}
            Some(a) => match stacking_order(&levels, a, c.b, c.normal) {
                Some(Order::AUnderB) => wa = 0.0,
                Some(Order::BUnderA) => wb = 0.0,
                None => continue,
            },
        }
        let vn = relative_normal_speed(states, c);
        let target = c.target.unwrap_or(0.0);
        if target - vn > IMPULSE_TOLERANCE && wa + wb > 0.0 {
            let j = apply_normal_impulse(states, c, target - vn, wa, wb);
            contacts[i].impulse += j;
        }
    }
}

/// Runs the scene for `spec.frames` frames with `removed` bodies dead from `t = 0`.
pub fn simulate(spec: &SceneSpec, removed: &BTreeSet<u32>) -> Result<Trajectory, PhysicsError> {
    if spec.frames < 1 || spec.substeps < 1 || !(spec.fps > 0.0) {
        return Err(PhysicsError::InvalidInput("frames, substeps and fps must be positive".into()));
    }
    let ids = spec.body_ids();
    if let Some(&bad) = removed.iter().find(|id| !ids.contains(id)) {
        return Err(PhysicsError::UnknownId(bad));
    }
    let dt = spec.dt();
    let mut state = initial_states(spec, removed);
    let mut states = Vec::with_capacity(spec.frames);
    states.push(state.clone());
    let mut events = Vec::new();
    let mut impulses = Vec::new();
    for frame in 1..spec.frames {
        impulses.clear();
        for _ in 0..spec.substeps {
            step_in_place(&mut state, spec, dt, &mut impulses).map_err(|e| match e {
                PhysicsError::NumericalBlowup { body, .. } => PhysicsError::NumericalBlowup { body, frame: Some(frame) },
                other => other,
            })?;
        }
        let mut per_pair: BTreeMap<(u32, u32), (Vec3, f64)> = BTreeMap::new();
        for imp in &impulses {
            let slot = per_pair.entry((imp.id_a, imp.id_b)).or_insert((imp.normal, 0.0));
            slot.0 = imp.normal;
            slot.1 += imp.impulse;
        }
        events.extend(per_pair.into_iter().map(|((id_a, id_b), (normal, impulse))| ContactEvent {
            frame,
            id_a,
            id_b,
            normal,
            impulse,
        }));
        states.push(state.clone());
    }
    Ok(Trajectory {
        scene_seed: spec.scene_seed,
        dt,
        substeps: spec.substeps,
        removed: removed.clone(),
        states,
        contact_events: events,
    })
}

/// Factual run, counterfactual run without `spec.removal_targets`, and their divergence.
pub fn simulate_counterfactual(spec: &SceneSpec) -> Result<CounterfactualPair, PhysicsError> {
    let factual = simulate(spec, &BTreeSet::new())?;
    let counterfactual = simulate(spec, &spec.removal_targets)?;
    let (affected_ids, first_divergence_frame) = affected_bodies(&factual, &counterfactual, DIVERGENCE_EPS)?;
    Ok(CounterfactualPair {
        factual,
        counterfactual,
        removed_ids: spec.removal_targets.clone(),
        affected_ids,
        first_divergence_frame,
    })
}

/// Surviving bodies whose position differs by more than `eps` at some frame,
/// and the earliest such frame over all of them.
pub fn affected_bodies(
    factual: &Trajectory,
    counterfactual: &Trajectory,
    eps: f64,
) -> Result<(BTreeSet<u32>, Option<usize>), PhysicsError> {
    if factual.frames() != counterfactual.frames() {
        return Err(PhysicsError::ShapeMismatch(format!(
            "{} factual frames vs {} counterfactual frames",
            factual.frames(),
            counterfactual.frames()
        )));
    }
    if factual.ids() != counterfactual.ids() {
        return Err(PhysicsError::ShapeMismatch("body id lists differ".into()));
    }
    let mut affected = BTreeSet::new();
    let mut first: Option<usize> = None;
    for (t, (fs, cs)) in factual.states.iter().zip(&counterfactual.states).enumerate() {
        if fs.len() != cs.len() {
            return Err(PhysicsError::ShapeMismatch(format!("frame {t} body counts differ")));
        }
        for (f, c) in fs.iter().zip(cs) {
            if !c.alive || counterfactual.removed.contains(&c.id) {
                continue;
            }
            if (f.position - c.position).norm() > eps {
                affected.insert(f.id);
                first = Some(first.map_or(t, |x| x.min(t)));
            }
        }
    }
    Ok((affected, first))
}

/// Total kinetic energy of alive dynamic bodies.
pub fn kinetic_energy(states: &[BodyState], spec: &SceneSpec) -> f64 {
    states
        .iter()
        .zip(&spec.bodies)
        .filter(|(s, _)| s.alive)
        .filter_map(|(s, b)| b.mass.value().map(|m| 0.5 * m * s.velocity.norm_squared()))
        .sum()
}

/// Total linear momentum of alive dynamic bodies.
pub fn momentum(states: &[BodyState], spec: &SceneSpec) -> Vec3 {
    states
        .iter()
        .zip(&spec.bodies)
        .filter(|(s, b)| s.alive && matches!(b.mass, Mass::Dynamic(_)))
        .fold(Vec3::ZERO, |acc, (s, b)| acc + s.velocity * b.mass.value().unwrap_or(0.0))
}
