//! Stage 0: camera from a similarity alignment of rest-pose joint projections.

use crate::camera::{CameraParams, Intrinsics, Z_MIN};
use crate::hand_model::{posed_joints, HandShapeModel, Theta, NUM_POSE_JOINTS};
use crate::likelihood::LandmarkObservation;
use crate::linalg::{self, Mat3, Vec3};
use crate::pose_prior::{pose_loss, refine_limits, AnatomyOptions, JointLimitTable};

/// Joints rigidly attached to the palm: wrist, thumb CMC and the four MCPs.
const PALM_JOINTS: [usize; 6] = [0, 1, 4, 7, 10, 13];

const TILTS_DEG: [f64; 4] = [20.0, 40.0, 60.0, 80.0];
const AZIMUTHS: usize = 8;

/// Best-fitting camera and its depth-reversed twin.
#[derive(Debug, Clone, Copy)]
pub struct CameraGuess {
    pub primary: CameraParams<f64>,
    pub twin: CameraParams<f64>,
    /// RMS pixel residual of the primary alignment on the points used.
    pub rms: f64,
}

struct Alignment {
    rotation: Mat3<f64>,
    k: f64,
    offset: [f64; 2],
    sse: f64,
}

/// In-plane similarity `u ~ k Rz(phi) q + tau`, reflections excluded.
fn align_2d(q: &[[f64; 2]], u: &[[f64; 2]]) -> Option<(f64, f64, [f64; 2], f64)> {
    let n = q.len() as f64;
    let mean = |p: &[[f64; 2]]| {
        let s = p.iter().fold([0.0, 0.0], |a, b| [a[0] + b[0], a[1] + b[1]]);
        [s[0] / n, s[1] / n]
    };
    let (qm, um) = (mean(q), mean(u));
    let (mut a, mut b, mut qq, mut uu) = (0.0, 0.0, 0.0, 0.0);
    for (p, o) in q.iter().zip(u) {
        let (x, y) = (p[0] - qm[0], p[1] - qm[1]);
        let (ux, uy) = (o[0] - um[0], o[1] - um[1]);
        a += x * ux + y * uy;
        b += x * uy - y * ux;
        qq += x * x + y * y;
        uu += ux * ux + uy * uy;
    }
    if qq <= 1e-18 {
        return None;
    }
    let phi = b.atan2(a);
    let k = (a * a + b * b).sqrt() / qq;
    let (c, s) = (phi.cos(), phi.sin());
    let tau = [um[0] - k * (c * qm[0] - s * qm[1]), um[1] - k * (s * qm[0] + c * qm[1])];
    let sse = (uu - (a * a + b * b) / qq).max(0.0);
    Some((phi, k, tau, sse))
}

fn fit_candidate(r0: &Mat3<f64>, pts: &[Vec3<f64>], uv: &[[f64; 2]]) -> Option<Alignment> {
    let q: Vec<[f64; 2]> = pts
        .iter()
        .map(|&p| {
            let r = linalg::mat_vec(r0, p);
            [r[0], r[1]]
        })
        .collect();
    let (phi, k, offset, sse) = align_2d(&q, uv)?;
    if !(k > 0.0 && k.is_finite()) {
        return None;
    }
    let rotation = linalg::mat_mul(&linalg::coordinate_rotation(2, phi), r0);
    Some(Alignment { rotation, k, offset, sse })
}

fn to_camera(al: &Alignment, intr: &Intrinsics) -> CameraParams<f64> {
    let c = intr.image_size / 2.0;
    CameraParams::new(
        2.0 * al.k / intr.image_size,
        linalg::matrix_to_axis_angle(&al.rotation),
        [(al.offset[0] - c) / al.k, (al.offset[1] - c) / al.k],
    )
}

fn candidates() -> Vec<Mat3<f64>> {
    let bases = [linalg::identity(), linalg::coordinate_rotation(1, std::f64::consts::PI)];
    let mut out = Vec::new();
    for base in &bases {
        out.push(*base);
        for tilt in TILTS_DEG {
            for a in 0..AZIMUTHS {
                let psi = a as f64 * std::f64::consts::TAU / AZIMUTHS as f64;
                let t = tilt.to_radians();
                let r = linalg::axis_angle([t * psi.cos(), t * psi.sin(), 0.0]);
                out.push(linalg::mat_mul(&r, base));
            }
        }
    }
    out
}

/// Pattern search over two out-of-plane angles applied before `al.rotation`.
fn refine(mut al: Alignment, pts: &[Vec3<f64>], uv: &[[f64; 2]]) -> Alignment {
    let mut step = 10f64.to_radians();
    while step > 0.05f64.to_radians() {
        let mut improved = false;
        for d in [[step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]] {
            let r0 = linalg::mat_mul(&linalg::axis_angle([d[0], d[1], 0.0]), &al.rotation);
            if let Some(c) = fit_candidate(&r0, pts, uv) {
                if c.sse < al.sse {
                    al = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    al
}

/// Search out-of-plane orientations, solving the in-plane part in closed form.
///
/// Palm joints are used when at least three are visible, else all visible
/// joints. The twin mirrors depth through the image plane and the palm
/// through its own plane, which leaves planar palm projections unchanged.
pub fn initial_camera(model: &HandShapeModel<f64>, obs: &LandmarkObservation, intr: &Intrinsics) -> Option<CameraGuess> {
    let rest = posed_joints(model, &model.articulate(None, &[[0.0; 3]; 15], &[0.0; 10]));
    let palm: Vec<usize> = PALM_JOINTS.iter().copied().filter(|&j| obs.visibility[j]).collect();
    let used: Vec<usize> = if palm.len() >= 3 {
        palm
    } else {
        (0..rest.len()).filter(|&j| obs.visibility[j]).collect()
    };
    let pts: Vec<Vec3<f64>> = used.iter().map(|&j| rest[j]).collect();
    let uv: Vec<[f64; 2]> = used.iter().map(|&j| obs.positions[j]).collect();

    let mut best: Option<Alignment> = None;
    for r0 in candidates() {
        if let Some(al) = fit_candidate(&r0, &pts, &uv) {
            if best.as_ref().is_none_or(|b| al.sse < b.sse) {
                best = Some(al);
            }
        }
    }
    let best = refine(best?, &pts, &uv);
    let flip_z = |m: &Mat3<f64>| {
        let mut out = *m;
        for row in out.iter_mut() {
            row[2] = -row[2];
        }
        out[2] = [-out[2][0], -out[2][1], -out[2][2]];
        out
    };
    let twin_r = flip_z(&best.rotation);
    let twin = fit_candidate(&twin_r, &pts, &uv).unwrap_or(Alignment { rotation: twin_r, ..best });
    Some(CameraGuess {
        primary: to_camera(&best, intr),
        twin: to_camera(&twin, intr),
        rms: (best.sse / used.len() as f64).sqrt(),
    })
}

/// Skeleton nodes of each digit, proximal first, and its fingertip joint.
const DIGITS: [([usize; 3], usize); 5] =
    [([1, 2, 3], 16), ([4, 5, 6], 17), ([7, 8, 9], 18), ([10, 11, 12], 19), ([13, 14, 15], 20)];
/// Coarsest spacing of the per-digit angle grid.
const GRID_STEP_DEG: f64 = 15.0;

fn grid(range: [f64; 2]) -> Vec<f64> {
    let span = range[1] - range[0];
    if span <= 0.0 {
        return vec![range[0]];
    }
    let n = (span / GRID_STEP_DEG.to_radians()).ceil() as usize;
    (0..=n).map(|i| range[0] + span * i as f64 / n as f64).collect()
}

/// Per-digit exhaustive search on a coarse angle grid with the camera held
/// fixed; returns the pose and its summed squared pixel error.
///
/// Each digit is posed as a rigid chain about the skeleton centres, which is
/// cheap and close to the skinned joints. Grid points outside the refined
/// limits are skipped.
pub fn digit_seed(
    model: &HandShapeModel<f64>,
    limits: &JointLimitTable,
    anatomy: AnatomyOptions,
    obs: &LandmarkObservation,
    camera: &CameraParams<f64>,
    intr: &Intrinsics,
) -> (Theta<f64>, f64) {
    let rest = posed_joints(model, &model.articulate(None, &[[0.0; 3]; NUM_POSE_JOINTS], &[0.0; 10]));
    let centres = &model.skeleton().rest_joints;
    let rot = linalg::axis_angle(camera.rotation);
    let depth = intr.depth(camera.scale);
    let c = intr.image_size / 2.0;
    let sq_err = |joint: usize, p: Vec3<f64>| -> Option<f64> {
        if !obs.visibility[joint] {
            return Some(0.0);
        }
        let q = camera.place(&rot, depth, p);
        if q[2] <= Z_MIN {
            return None;
        }
        let u = [intr.focal * q[0] / q[2] + c, intr.focal * q[1] / q[2] + c];
        Some((u[0] - obs.positions[joint][0]).powi(2) + (u[1] - obs.positions[joint][1]).powi(2))
    };
    let mut theta = [[0.0; 3]; NUM_POSE_JOINTS];
    let mut total = 0.0;
    for (nodes, tip) in DIGITS {
        let axes: Vec<Vec<Vec<f64>>> =
            nodes.iter().map(|&n| limits.ranges()[n - 1].iter().map(|&r| grid(r)).collect()).collect();
        let mut best = (f64::INFINITY, [[0.0; 3]; 3]);
        let mut trial = theta;
        let combos = |k: usize| axes[k][0].len() * axes[k][1].len() * axes[k][2].len();
        let pick = |k: usize, i: usize| {
            let (nb, ns) = (axes[k][0].len(), axes[k][1].len());
            [axes[k][0][i % nb], axes[k][1][(i / nb) % ns], axes[k][2][i / (nb * ns)]]
        };
        for i0 in 0..combos(0) {
            let a0 = pick(0, i0);
            let r0 = model.local_rotation(nodes[0], &a0);
            let g0 = |p: Vec3<f64>| linalg::add(linalg::mat_vec(&r0, linalg::sub(p, centres[nodes[0]])), centres[nodes[0]]);
            let Some(e1) = sq_err(nodes[1], g0(rest[nodes[1]])) else { continue };
            for i1 in 0..combos(1) {
                let a1 = pick(1, i1);
                let r1 = model.local_rotation(nodes[1], &a1);
                let g1 = |p: Vec3<f64>| g0(linalg::add(linalg::mat_vec(&r1, linalg::sub(p, centres[nodes[1]])), centres[nodes[1]]));
                let Some(e2) = sq_err(nodes[2], g1(rest[nodes[2]])) else { continue };
                if e1 + e2 >= best.0 {
                    continue;
                }
                for i2 in 0..combos(2) {
                    let a2 = pick(2, i2);
                    let r2 = model.local_rotation(nodes[2], &a2);
                    let tip_pos = g1(linalg::add(linalg::mat_vec(&r2, linalg::sub(rest[tip], centres[nodes[2]])), centres[nodes[2]]));
                    let Some(e3) = sq_err(tip, tip_pos) else { continue };
                    let e = e1 + e2 + e3;
                    if e >= best.0 {
                        continue;
                    }
                    trial[nodes[0] - 1] = a0;
                    trial[nodes[1] - 1] = a1;
                    trial[nodes[2] - 1] = a2;
                    if pose_loss(&trial, &refine_limits(limits, &trial, anatomy)) > 0.0 {
                        continue;
                    }
                    best = (e, [a0, a1, a2]);
                }
            }
        }
        if best.0.is_finite() {
            for (k, &n) in nodes.iter().enumerate() {
                theta[n - 1] = best.1[k];
            }
            total += best.0;
        }
    }
    (theta, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use crate::hand_model::synth_test_model;

    #[test]
    fn recovers_camera_of_rest_projection() {
        let model = synth_test_model(0);
        let intr = Intrinsics::default();
        let truth = CameraParams::new(6.5, [0.3, -0.5, 1.2], [0.01, -0.02]);
        let rest = posed_joints(&model, &model.articulate(None, &[[0.0; 3]; 15], &[0.0; 10]));
        let uv = project(&rest, &truth, &intr).unwrap();
        let obs = LandmarkObservation::new("r", uv.clone());
        let g = initial_camera(&model, &obs, &intr).unwrap();
        assert!(g.rms < 3.0, "rms {}", g.rms);
        // the primary or its twin reproduces every joint to a few pixels
        let err = |c: &CameraParams<f64>| {
            let p = project(&rest, c, &intr).unwrap();
            p.iter().zip(&uv).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).fold(0.0, f64::max)
        };
        assert!(err(&g.primary).min(err(&g.twin)) < 8.0);
        assert!((g.primary.scale - 6.5).abs() < 0.5);
    }

    #[test]
    fn twin_keeps_palm_projection() {
        let p: [Vec3<f64>; 3] = [[0.03, 0.02, 0.0], [-0.01, 0.05, 0.0], [0.0, 0.0, 0.0]];
        let r: Mat3<f64> = linalg::axis_angle([0.4, -0.3, 0.2]);
        let mut t = r;
        for row in t.iter_mut() {
            row[2] = -row[2];
        }
        t[2] = [-t[2][0], -t[2][1], -t[2][2]];
        assert!((linalg::det(&t) - 1.0).abs() < 1e-12);
        for q in p {
            let a = linalg::mat_vec(&r, q);
            let b = linalg::mat_vec(&t, q);
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
    }
}
