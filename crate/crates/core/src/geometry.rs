//! Closed-form proximity queries between the two primitive shapes and the ground plane.

use crate::math::Vec3;
use crate::scene::Shape;

/// Signed separation between two shapes along a contact normal.
///
/// `distance < 0` means overlap by `-distance`. The normal points from the
/// first shape toward the second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proximity {
    pub normal: Vec3,
    pub distance: f64,
}

/// Proximity of two shapes. Sphere–sphere and sphere–box are exact; box–box
/// uses the axis of minimal overlap (maximal separation when apart).
pub fn shape_proximity(a: &Shape, pa: Vec3, b: &Shape, pb: Vec3) -> Proximity {
    match (*a, *b) {
        (Shape::Sphere { radius: ra }, Shape::Sphere { radius: rb }) => {
            let d = pb - pa;
            let len = d.norm();
            let normal = if len > 0.0 { d * (1.0 / len) } else { Vec3::Z };
            Proximity { normal, distance: len - ra - rb }
        }
        (Shape::Sphere { radius }, Shape::Box { half_extents }) => {
            let p = sphere_box(pa, radius, pb, half_extents);
            Proximity { normal: -p.normal, distance: p.distance }
        }
        (Shape::Box { half_extents }, Shape::Sphere { radius }) => {
            sphere_box(pb, radius, pa, half_extents)
        }
        (Shape::Box { half_extents: ha }, Shape::Box { half_extents: hb }) => {
            let d = pb - pa;
            let mut axis = 0;
            let mut min_overlap = f64::INFINITY;
            for i in 0..3 {
                let overlap = ha[i] + hb[i] - d[i].abs();
                if overlap < min_overlap {
                    min_overlap = overlap;
                    axis = i;
                }
            }
            let sign = if d[axis] < 0.0 { -1.0 } else { 1.0 };
            Proximity { normal: Vec3::axis(axis) * sign, distance: -min_overlap }
        }
    }
}

/// Proximity of a sphere (center `c`, radius `r`) to a box, normal pointing box → sphere.
fn sphere_box(c: Vec3, r: f64, center: Vec3, half: Vec3) -> Proximity {
    let lo = center - half;
    let hi = center + half;
    let q = Vec3::new(c.x.clamp(lo.x, hi.x), c.y.clamp(lo.y, hi.y), c.z.clamp(lo.z, hi.z));
    let d = c - q;
    let len = d.norm();
    if len > 0.0 {
        return Proximity { normal: d * (1.0 / len), distance: len - r };
    }
    // center inside (or on) the box: push out through the nearest face
    let mut best = f64::INFINITY;
    let mut normal = Vec3::Z;
    for i in 0..3 {
        let to_hi = hi[i] - c[i];
        let to_lo = c[i] - lo[i];
        if to_hi < best {
            best = to_hi;
            normal = Vec3::axis(i);
        }
        if to_lo < best {
            best = to_lo;
            normal = -Vec3::axis(i);
        }
    }
    Proximity { normal, distance: -(r + best) }
}

/// Proximity of a shape to the ground plane `z = 0`; the normal is always `+z`.
pub fn ground_proximity(s: &Shape, p: Vec3) -> Proximity {
    Proximity { normal: Vec3::Z, distance: p.z - s.half_height() }
}
