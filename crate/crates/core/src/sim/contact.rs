//! Penalty-spring contact between the cuboid peg and the hole geometry.
//!
//! Each peg face carries a set of cell-centered quadrature points whose
//! weights sum to one, so a face pressed uniformly `delta` deep produces
//! `k_s * delta`. A point only pushes on the peg when its nearest exit from
//! the solid is an environment face opposing the peg face it belongs to.

use num_traits::Float;

use super::{PegHoleScene, RobotState};
use crate::geom::{Pose, Vec3, Wrench};

const BOTTOM_CELLS: usize = 4;
const PLANAR_BOTTOM_CELLS: usize = 5;
const SIDE_WIDTH_CELLS: usize = 4;
const SIDE_LENGTH_CELLS: usize = 4;
/// Slip speed below which Coulomb friction is linear in the slip velocity.
pub const FRICTION_CREEP_SPEED: f64 = 1e-4;
/// Peg face normal and environment normal must oppose at least this much.
const FACING_COS: f64 = -0.5;

/// Exit from the solid through its nearest boundary, in the hole frame.
#[derive(Debug, Clone, Copy)]
struct Exit {
    depth: f64,
    normal: Vec3,
}

fn cell_centers(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| -1.0 + (2 * i + 1) as f64 / n as f64)
}

/// Visit every quadrature point as (peg-frame position, peg-frame face normal, weight).
fn for_each_point(scene: &PegHoleScene, mut f: impl FnMut(Vec3, Vec3, f64)) {
    let w = scene.peg_half_width;
    let len = scene.peg_length;
    if scene.planar {
        let wb = 1.0 / PLANAR_BOTTOM_CELLS as f64;
        for u in cell_centers(PLANAR_BOTTOM_CELLS) {
            f(Vec3::new(u * w, 0.0, 0.0), -Vec3::z(), wb);
        }
        let ws = 1.0 / SIDE_LENGTH_CELLS as f64;
        for side in [-1.0, 1.0] {
            for v in cell_centers(SIDE_LENGTH_CELLS) {
                let z = 0.5 * (v + 1.0) * len;
                f(Vec3::new(side * w, 0.0, z), Vec3::new(side, 0.0, 0.0), ws);
            }
        }
        return;
    }
    let wb = 1.0 / (BOTTOM_CELLS * BOTTOM_CELLS) as f64;
    for u in cell_centers(BOTTOM_CELLS) {
        for v in cell_centers(BOTTOM_CELLS) {
            f(Vec3::new(u * w, v * w, 0.0), -Vec3::z(), wb);
        }
    }
    let ws = 1.0 / (SIDE_WIDTH_CELLS * SIDE_LENGTH_CELLS) as f64;
    for side in [-1.0, 1.0] {
        for u in cell_centers(SIDE_WIDTH_CELLS) {
            for v in cell_centers(SIDE_LENGTH_CELLS) {
                let z = 0.5 * (v + 1.0) * len;
                f(Vec3::new(side * w, u * w, z), Vec3::new(side, 0.0, 0.0), ws);
                f(Vec3::new(u * w, side * w, z), Vec3::new(0.0, side, 0.0), ws);
            }
        }
    }
}

/// Nearest way out of the solid for a hole-frame point, `None` in free space.
fn nearest_exit(p: &Vec3, half: f64, depth: f64) -> Option<Exit> {
    if p.z >= depth {
        return None;
    }
    let in_column = p.x.abs() < half && p.y.abs() < half;
    if in_column {
        if p.z >= 0.0 {
            return None;
        }
        return Some(Exit {
            depth: -p.z,
            normal: Vec3::z(),
        });
    }
    let mut best = Exit {
        depth: depth - p.z,
        normal: Vec3::z(),
    };
    if p.z > 0.0 {
        let dx = (p.x.abs() - half).max(0.0);
        let dy = (p.y.abs() - half).max(0.0);
        let sx = if p.x >= 0.0 { 1.0 } else { -1.0 };
        let sy = if p.y >= 0.0 { 1.0 } else { -1.0 };
        let wall = if dy == 0.0 {
            Exit {
                depth: dx,
                normal: Vec3::new(-sx, 0.0, 0.0),
            }
        } else if dx == 0.0 {
            Exit {
                depth: dy,
                normal: Vec3::new(0.0, -sy, 0.0),
            }
        } else {
            let l = Float::sqrt(dx * dx + dy * dy);
            Exit {
                depth: l,
                normal: Vec3::new(-sx * dx / l, -sy * dy / l, 0.0),
            }
        };
        if wall.depth < best.depth {
            best = wall;
        }
    }
    Some(best)
}

/// Deepest penetration of any peg quadrature point into the solid.
pub fn max_penetration(x: &Pose, scene: &PegHoleScene) -> f64 {
    let hole = &scene.hole_pose;
    let mut deepest: f64 = 0.0;
    for_each_point(scene, |local, _, _| {
        let ph = hole.inverse_transform_point(&x.transform_point(&local));
        if let Some(e) = nearest_exit(&ph, scene.hole_half_width, scene.hole_depth) {
            deepest = deepest.max(e.depth);
        }
    });
    deepest
}

/// Wrench exerted by the environment on the peg, in the world frame with
/// moments about the peg tip.
///
/// Normal force per point is `w (k_s delta - d_s v_n)` clamped at zero;
/// tangential force is regularized Coulomb friction.
pub fn contact_wrench(state: &RobotState, scene: &PegHoleScene) -> Wrench {
    let hole = &scene.hole_pose;
    let x = &state.x;
    let mut force = Vec3::zeros();
    let mut moment = Vec3::zeros();
    for_each_point(scene, |local, face_normal, weight| {
        let world = x.transform_point(&local);
        let ph = hole.inverse_transform_point(&world);
        let Some(exit) = nearest_exit(&ph, scene.hole_half_width, scene.hole_depth) else {
            return;
        };
        let n = hole.q() * exit.normal;
        if (x.q() * face_normal).dot(&n) > FACING_COS {
            return;
        }
        let r = world - x.p;
        let v = state.twist.v + state.twist.w.cross(&r);
        let vn = v.dot(&n);
        let fn_ = weight * (scene.surface_stiffness * exit.depth - scene.contact_damping * vn);
        if fn_ <= 0.0 {
            return;
        }
        let vt = v - n * vn;
        let slip = vt.norm().max(FRICTION_CREEP_SPEED);
        let f = n * fn_ - vt * (scene.friction * fn_ / slip);
        force += f;
        moment += r.cross(&f);
    });
    Wrench { force, moment }
}
