//! Procrustes-aligned joint and vertex errors, PCK AUC and penetration rate.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SampleRecord;
use crate::linalg::Vec3;
use crate::penetration::{interior_vertices_with, NeighborMask};
use crate::pose_prior::{violations, AnatomyOptions, JointLimitTable};
use crate::records::ReportRecord;

/// Upper end of the PCK threshold range, millimeters.
pub const PCK_MAX_MM: f64 = 50.0;
/// Number of thresholds on the uniform grid `0, h, .., PCK_MAX_MM`.
pub const PCK_STEPS: usize = 100;
/// Angles closer than this to their refined range are not counted as
/// violations, degrees.
pub const VIOLATION_TOL_DEG: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point sets differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("no report could be matched to ground truth")]
    NothingToEvaluate,
}

/// Similarity `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: Vec3<f64>) -> Vec3<f64> {
        let q = self.rotation * Vector3::from(p) * self.scale + self.translation;
        [q.x, q.y, q.z]
    }
}

fn centroid(p: &[Vec3<f64>]) -> Vector3<f64> {
    p.iter().fold(Vector3::zeros(), |a, q| a + Vector3::from(*q)) / p.len() as f64
}

/// Least-squares similarity taking `pred` onto `gt`, rotations only.
pub fn procrustes_transform(pred: &[Vec3<f64>], gt: &[Vec3<f64>]) -> Result<Similarity, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::SizeMismatch(pred.len(), gt.len()));
    }
    if gt.len() < 3 {
        return Err(MetricsError::DegenerateConfiguration(format!("{} points, need 3", gt.len())));
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut spread = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        let a = Vector3::from(*p) - mp;
        let b = Vector3::from(*g) - mg;
        cov += b * a.transpose();
        var_p += a.norm_squared();
        spread += b * b.transpose();
    }
    // gt must span at least a line plus one point off it
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if !(ev[2] > 0.0) || ev[1] <= 1e-12 * ev[2] {
        return Err(MetricsError::DegenerateConfiguration("ground truth is collinear or coincident".into()));
    }
    if !(var_p > 0.0) {
        return Err(MetricsError::DegenerateConfiguration("prediction is a single point".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let trace = (Matrix3::from_diagonal(&svd.singular_values) * d).trace();
    let scale = trace / var_p;
    let translation = mg - rotation * mp * scale;
    Ok(Similarity { scale, rotation, translation })
}

pub fn procrustes_align(pred: &[Vec3<f64>], gt: &[Vec3<f64>]) -> Result<Vec<Vec3<f64>>, MetricsError> {
    let t = procrustes_transform(pred, gt)?;
    Ok(pred.iter().map(|&p| t.apply(p)).collect())
}

/// Mean distance after alignment, in the input unit times 1000 (m -> mm).
pub fn aligned_error_mm(pred: &[Vec3<f64>], gt: &[Vec3<f64>]) -> Result<f64, MetricsError> {
    let aligned = procrustes_align(pred, gt)?;
    let sum: f64 = aligned
        .iter()
        .zip(gt)
        .map(|(a, g)| ((a[0] - g[0]).powi(2) + (a[1] - g[1]).powi(2) + (a[2] - g[2]).powi(2)).sqrt())
        .sum();
    Ok(1000.0 * sum / gt.len() as f64)
}

pub fn joint_error(pred_joints: &[Vec3<f64>], gt_joints: &[Vec3<f64>]) -> Result<f64, MetricsError> {
    aligned_error_mm(pred_joints, gt_joints)
}

pub fn vertex_error(pred_vertices: &[Vec3<f64>], gt_vertices: &[Vec3<f64>]) -> Result<f64, MetricsError> {
    aligned_error_mm(pred_vertices, gt_vertices)
}

/// Per-point distances (mm) after aligning on all points.
pub fn aligned_distances_mm(pred: &[Vec3<f64>], gt: &[Vec3<f64>]) -> Result<Vec<f64>, MetricsError> {
    let aligned = procrustes_align(pred, gt)?;
    Ok(aligned
        .iter()
        .zip(gt)
        .map(|(a, g)| 1000.0 * ((a[0] - g[0]).powi(2) + (a[1] - g[1]).powi(2) + (a[2] - g[2]).powi(2)).sqrt())
        .collect())
}

/// Area under the fraction-correct curve on thresholds
/// `k * PCK_MAX_MM / (PCK_STEPS - 1)`, trapezoid rule, normalized to `[0, 1]`.
/// A point counts as correct when its error is `<=` the threshold.
pub fn pck_auc(errors_mm: &[f64]) -> f64 {
    if errors_mm.is_empty() {
        return 0.0;
    }
    let n = errors_mm.len() as f64;
    let h = PCK_MAX_MM / (PCK_STEPS - 1) as f64;
    let pck: Vec<f64> = (0..PCK_STEPS)
        .map(|k| {
            let t = k as f64 * h;
            errors_mm.iter().filter(|&&e| e <= t).count() as f64 / n
        })
        .collect();
    let area: f64 = pck.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum();
    area / PCK_MAX_MM
}

/// Percentage of meshes whose deepest interior vertex exceeds `d_tol`.
pub fn penetration_rate(
    meshes: &[Vec<Vec3<f64>>],
    faces: &[[u32; 3]],
    mask: &NeighborMask,
    threshold: f64,
    d_tol: f64,
) -> f64 {
    if meshes.is_empty() {
        return 0.0;
    }
    let hit = meshes
        .iter()
        .filter(|v| interior_vertices_with(v, faces, mask, threshold).max_depth() > d_tol)
        .count();
    100.0 * hit as f64 / meshes.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean joint error, mm.
    pub e_j: f64,
    /// Mean vertex error, mm.
    pub e_v: f64,
    pub auc_j: f64,
    pub auc_v: f64,
    /// Percent of reconstructions with penetration deeper than `d_tol`.
    pub pr: f64,
    pub n_samples: usize,
    /// Reports without matching ground truth or with a failed fit.
    pub n_skipped: usize,
    /// Mean error over joints not listed as corrupted, mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_j_clean: Option<f64>,
    /// Mean count of angles outside their refined range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<f64>,
}

impl EvalSummary {
    /// Aligned text table.
    pub fn table(&self) -> String {
        let mut rows = vec![
            ("E_J (mm)", format!("{:.2}", self.e_j)),
            ("E_V (mm)", format!("{:.2}", self.e_v)),
            ("AUC_J", format!("{:.3}", self.auc_j)),
            ("AUC_V", format!("{:.3}", self.auc_v)),
            ("PR (%)", format!("{:.1}", self.pr)),
        ];
        if let Some(e) = self.e_j_clean {
            rows.push(("E_J clean (mm)", format!("{e:.2}")));
        }
        if let Some(v) = self.violations {
            rows.push(("violations", format!("{v:.2}")));
        }
        rows.push(("samples", self.n_samples.to_string()));
        rows.push(("skipped", self.n_skipped.to_string()));
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let v = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, val) in rows {
            out.push_str(&format!("{k:<w$}  {val:>v$}\n"));
        }
        out
    }
}

/// Metrics over every report whose `source_id` has ground truth.
///
/// AUCs pool per-point aligned distances over all samples. PR counts the
/// depth recorded in each report against `d_tol`. `e_j_clean` averages the
/// joints not listed as corrupted and is set only when some sample has
/// corrupted joints. `violations` is the mean count of angles more than
/// [`VIOLATION_TOL_DEG`] outside their anatomically refined range.
pub fn evaluate(
    reports: &[ReportRecord],
    dataset: &[SampleRecord],
    limits: &JointLimitTable,
    d_tol: f64,
) -> Result<EvalSummary, MetricsError> {
    let truth: std::collections::HashMap<&str, _> =
        dataset.iter().filter_map(|r| Some((r.source_id.as_str(), r.ground_truth.as_ref()?))).collect();
    let (mut ej, mut ev, mut clean, mut viol) = (Vec::new(), Vec::new(), Vec::new(), 0usize);
    let (mut pj, mut pv) = (Vec::new(), Vec::new());
    let (mut penetrating, mut skipped, mut any_corrupt) = (0usize, 0usize, false);
    for rec in reports {
        let (Some(report), Some(gt)) = (rec.report.as_deref(), truth.get(rec.source_id.as_str())) else {
            skipped += 1;
            continue;
        };
        let (Ok(dj), Ok(dv)) = (
            aligned_distances_mm(&report.mesh.joints, &gt.joints),
            aligned_distances_mm(&report.mesh.vertices, &gt.vertices),
        ) else {
            skipped += 1;
            continue;
        };
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        ej.push(mean(&dj));
        ev.push(mean(&dv));
        any_corrupt |= !gt.corrupted.is_empty();
        let kept: Vec<f64> = dj.iter().enumerate().filter(|(j, _)| !gt.corrupted.contains(j)).map(|(_, d)| *d).collect();
        clean.push(mean(&kept));
        pj.extend(dj);
        pv.extend(dv);
        if report.penetration_depth > d_tol {
            penetrating += 1;
        }
        viol += violations(limits, &report.state.theta, AnatomyOptions::default())
            .iter()
            .filter(|v| v.excess_deg > VIOLATION_TOL_DEG)
            .count();
    }
    if ej.is_empty() {
        return Err(MetricsError::NothingToEvaluate);
    }
    let n = ej.len() as f64;
    Ok(EvalSummary {
        e_j: ej.iter().sum::<f64>() / n,
        e_v: ev.iter().sum::<f64>() / n,
        auc_j: pck_auc(&pj),
        auc_v: pck_auc(&pv),
        pr: 100.0 * penetrating as f64 / n,
        n_samples: ej.len(),
        n_skipped: skipped,
        e_j_clean: any_corrupt.then(|| clean.iter().sum::<f64>() / n),
        violations: Some(viol as f64 / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3<f64>> {
        (0..n).map(|_| [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]).collect()
    }

    fn residual(a: &[Vec3<f64>], b: &[Vec3<f64>]) -> f64 {
        a.iter().zip(b).map(|(p, q)| linalg::dot(linalg::sub(*p, *q), linalg::sub(*p, *q))).sum()
    }

    #[test]
    fn similarity_copy_aligns_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = cloud(&mut rng, 21);
        let q = linalg::axis_angle([0.4, -1.1, 2.0]);
        let pred: Vec<Vec3<f64>> =
            gt.iter().map(|&p| linalg::add(linalg::scale(linalg::mat_vec(&q, p), 2.0), [0.3, -0.2, 1.0])).collect();
        let al = procrustes_align(&pred, &gt).unwrap();
        assert!(residual(&al, &gt) < 1e-20);
        assert_abs_diff_eq!(joint_error(&gt, &gt).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_rotation_grid_oracle() {
        // brute force over rotations with closed-form scale and translation
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = cloud(&mut rng, 5);
        let pred = cloud(&mut rng, 5);
        let closed = residual(&procrustes_align(&pred, &gt).unwrap(), &gt);
        let (mp, mg) = (centroid(&pred), centroid(&gt));
        let best_for = |r: &linalg::Mat3<f64>| {
            let a: Vec<Vec3<f64>> = pred.iter().map(|p| linalg::mat_vec(r, [p[0] - mp.x, p[1] - mp.y, p[2] - mp.z])).collect();
            let b: Vec<Vec3<f64>> = gt.iter().map(|g| [g[0] - mg.x, g[1] - mg.y, g[2] - mg.z]).collect();
            let num: f64 = a.iter().zip(&b).map(|(x, y)| linalg::dot(*x, *y)).sum();
            let den: f64 = a.iter().map(|x| linalg::dot(*x, *x)).sum();
            let s = (num / den).max(0.0);
            a.iter().zip(&b).map(|(x, y)| {
                let e = linalg::sub(linalg::scale(*x, s), *y);
                linalg::dot(e, e)
            }).sum::<f64>()
        };
        let mut best = (f64::INFINITY, [0.0; 3]);
        let n = 24;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let w = [
                        -std::f64::consts::PI + (i as f64 + 0.5) * std::f64::consts::TAU / n as f64,
                        -std::f64::consts::PI + (j as f64 + 0.5) * std::f64::consts::TAU / n as f64,
                        -std::f64::consts::PI + (k as f64 + 0.5) * std::f64::consts::TAU / n as f64,
                    ];
                    if linalg::norm(w) > std::f64::consts::PI {
                        continue;
                    }
                    let r = best_for(&linalg::axis_angle(w));
                    if r < best.0 {
                        best = (r, w);
                    }
                }
            }
        }
        // local refinement around the best grid cell
        let mut step = 0.2;
        while step > 1e-7 {
            let mut moved = false;
            for a in 0..3 {
                for sgn in [-1.0, 1.0] {
                    let mut w = best.1;
                    w[a] += sgn * step;
                    let r = best_for(&linalg::axis_angle(w));
                    if r < best.0 {
                        best = (r, w);
                        moved = true;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        assert!((closed - best.0).abs() < 1e-6, "{closed} vs {}", best.0);
        assert!(closed <= best.0 + 1e-12);
    }

    #[test]
    fn translation_offset_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = cloud(&mut rng, 21);
        let pred: Vec<Vec3<f64>> = gt.iter().map(|p| linalg::add(*p, [0.005, 0.0, 0.0])).collect();
        assert_abs_diff_eq!(joint_error(&pred, &gt).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn reflection_is_not_used() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = cloud(&mut rng, 12);
        let mirrored: Vec<Vec3<f64>> = gt.iter().map(|p| [-p[0], p[1], p[2]]).collect();
        let t = procrustes_transform(&mirrored, &gt).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
        assert!(residual(&procrustes_align(&mirrored, &gt).unwrap(), &gt) > 1e-4);
    }

    #[test]
    fn collinear_ground_truth_is_degenerate() {
        let gt: Vec<Vec3<f64>> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let pred = gt.clone();
        assert!(matches!(procrustes_align(&pred, &gt), Err(MetricsError::DegenerateConfiguration(_))));
        let same = vec![[1.0, 1.0, 1.0]; 4];
        assert!(procrustes_align(&same, &same).is_err());
    }

    #[test]
    fn auc_fixtures() {
        assert_abs_diff_eq!(pck_auc(&[0.0; 10]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pck_auc(&[50.1; 10]), 0.0, epsilon = 1e-12);
        assert!((pck_auc(&[25.0; 10]) - 0.5).abs() <= 0.01);
    }
}
