//! Joint-limit prior with anatomical coupling, shape regularization and the
//! assembled prior loss.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand_model::{Axis, Beta, HandMesh, Theta, JOINT_NAMES, NUM_POSE_JOINTS};
use crate::penetration::{self, NeighborMask};
use crate::scalar::Real;

pub const LIMITS_FORMAT: &str = "handfit-limits";
pub const LIMITS_VERSION: &str = "1.0";

const DEFAULT_LIMITS_TOML: &str = include_str!("../data/default_limits.toml");

/// `(min, max)` in radians.
pub type Interval<S = f64> = [S; 2];

#[derive(Debug, Error)]
pub enum LimitsError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("limit table is not valid: {0}")]
    Schema(String),
    #[error("unsupported limit table version {0}")]
    Version(String),
    #[error("joint {joint} {axis:?}: min {min} exceeds max {max}")]
    Inverted { joint: String, axis: Axis, min: f64, max: f64 },
}

/// Static per-joint, per-axis ranges, indexed `[joint - 1][axis]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimitTable {
    ranges: [[Interval; 3]; NUM_POSE_JOINTS],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LimitsFile {
    format: String,
    version: String,
    joint: Vec<JointRecord>,
}

/// Ranges of one joint in degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointRecord {
    name: String,
    bend: [f64; 2],
    splay: [f64; 2],
    twist: [f64; 2],
}

impl Default for JointLimitTable {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_LIMITS_TOML).expect("bundled limit table is valid")
    }
}

impl JointLimitTable {
    /// Ranges in radians; rejects `min > max` and non-finite bounds.
    pub fn new(ranges: [[Interval; 3]; NUM_POSE_JOINTS]) -> Result<Self, LimitsError> {
        for (j, joint) in ranges.iter().enumerate() {
            for axis in Axis::ALL {
                let [lo, hi] = joint[axis.index()];
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(LimitsError::Schema(format!("non-finite bound for {}", JOINT_NAMES[j + 1])));
                }
                if lo > hi {
                    return Err(LimitsError::Inverted { joint: JOINT_NAMES[j + 1].into(), axis, min: lo, max: hi });
                }
            }
        }
        Ok(JointLimitTable { ranges })
    }

    pub fn ranges(&self) -> &[[Interval; 3]; NUM_POSE_JOINTS] {
        &self.ranges
    }

    pub fn range(&self, joint: usize, axis: Axis) -> Interval {
        self.ranges[joint][axis.index()]
    }

    /// Parse the TOML limit file (degrees).
    pub fn from_toml_str(text: &str) -> Result<Self, LimitsError> {
        let file: LimitsFile = toml::from_str(text).map_err(|e| LimitsError::Schema(e.to_string()))?;
        if file.format != LIMITS_FORMAT {
            return Err(LimitsError::Schema(format!("unknown format tag {:?}", file.format)));
        }
        if file.version.split('.').next() != LIMITS_VERSION.split('.').next() {
            return Err(LimitsError::Version(file.version));
        }
        let mut ranges = [[[0.0; 2]; 3]; NUM_POSE_JOINTS];
        let mut seen = [false; NUM_POSE_JOINTS];
        for rec in &file.joint {
            let j = JOINT_NAMES[1..=NUM_POSE_JOINTS]
                .iter()
                .position(|n| *n == rec.name)
                .ok_or_else(|| LimitsError::Schema(format!("unknown joint {:?}", rec.name)))?;
            if std::mem::replace(&mut seen[j], true) {
                return Err(LimitsError::Schema(format!("joint {:?} listed twice", rec.name)));
            }
            for (axis, pair) in [(Axis::Bend, rec.bend), (Axis::Splay, rec.splay), (Axis::Twist, rec.twist)] {
                if pair[0] > pair[1] {
                    return Err(LimitsError::Inverted { joint: rec.name.clone(), axis, min: pair[0], max: pair[1] });
                }
                ranges[j][axis.index()] = [pair[0].to_radians(), pair[1].to_radians()];
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(LimitsError::Schema(format!("missing joint {:?}", JOINT_NAMES[j + 1])));
        }
        Self::new(ranges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LimitsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| LimitsError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let deg = |r: Interval| [r[0].to_degrees(), r[1].to_degrees()];
        let file = LimitsFile {
            format: LIMITS_FORMAT.into(),
            version: LIMITS_VERSION.into(),
            joint: (0..NUM_POSE_JOINTS)
                .map(|j| JointRecord {
                    name: JOINT_NAMES[j + 1].into(),
                    bend: deg(self.ranges[j][0]),
                    splay: deg(self.ranges[j][1]),
                    twist: deg(self.ranges[j][2]),
                })
                .collect(),
        };
        toml::to_string(&file).expect("limit table serializes")
    }
}

/// Theta rows of the four fingers' MCP, PIP and DIP joints.
pub const FINGER_JOINTS: [[usize; 3]; 4] = [[3, 4, 5], [6, 7, 8], [9, 10, 11], [12, 13, 14]];

/// Which anatomical couplings refine the static table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnatomyOptions {
    pub enabled: bool,
    /// Also tighten MCP bend from splay with the roles exchanged.
    pub symmetric: bool,
}

impl Default for AnatomyOptions {
    fn default() -> Self {
        AnatomyOptions { enabled: true, symmetric: true }
    }
}

/// Ranges after refinement for a particular pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedLimits<S> {
    pub ranges: [[Interval<S>; 3]; NUM_POSE_JOINTS],
}

impl<S: Real> RefinedLimits<S> {
    pub fn from_static(table: &JointLimitTable) -> Self {
        RefinedLimits { ranges: table.ranges.map(|j| j.map(|r| [S::lift(r[0]), S::lift(r[1])])) }
    }

    pub fn range(&self, joint: usize, axis: Axis) -> Interval<S> {
        self.ranges[joint][axis.index()]
    }
}

/// `1 - x / limit` restricted to `[0, 1]`, applied only on the side of zero
/// where `limit` lies.
fn shrink_factor<S: Real>(x: S, limit: f64) -> S {
    let (zero, one) = (S::zero(), S::one());
    if limit == 0.0 || (x.re() * limit) <= 0.0 {
        return one;
    }
    (one - x / S::lift(limit)).max(zero).min(one)
}

/// Tighten `target` from the raw value of the coupled angle `driver`.
fn couple<S: Real>(target: Interval<S>, stat_target: Interval, driver: S, stat_driver: Interval) -> Interval<S> {
    let lo = S::lift(stat_target[0]);
    let hi = S::lift(stat_target[1]);
    let mut min = target[0];
    let mut max = target[1];
    if driver.re() < 0.0 {
        min = min.max(lo * shrink_factor(driver, stat_driver[0]));
    } else if driver.re() > 0.0 {
        max = max.min(hi * shrink_factor(driver, stat_driver[1]));
    }
    let min = min.max(lo).min(hi);
    let max = max.min(hi).max(min);
    [min, max]
}

/// Dynamic ranges for the current pose.
///
/// MCP splay narrows linearly with MCP bend toward either bend limit and
/// is closed at the limit and beyond. With `symmetric`, MCP bend narrows
/// the same way with splay. A flexed DIP raises the PIP lower bound to 0.
/// Each coupling reads the other angle's raw value, so one pass suffices.
pub fn refine_limits<S: Real>(table: &JointLimitTable, theta: &Theta<S>, opts: AnatomyOptions) -> RefinedLimits<S> {
    let mut out = RefinedLimits::from_static(table);
    if !opts.enabled {
        return out;
    }
    let (b, s) = (Axis::Bend.index(), Axis::Splay.index());
    for [mcp, pip, dip] in FINGER_JOINTS {
        let stat = &table.ranges[mcp];
        let (alpha, gamma) = (theta[mcp][b], theta[mcp][s]);
        out.ranges[mcp][s] = couple(out.ranges[mcp][s], stat[s], alpha, stat[b]);
        if opts.symmetric {
            out.ranges[mcp][b] = couple(out.ranges[mcp][b], stat[b], gamma, stat[s]);
        }
        if theta[dip][b].re() > 0.0 {
            let [lo, hi] = table.ranges[pip][b];
            let raised = lo.max(0.0).min(hi);
            out.ranges[pip][b][0] = S::lift(raised);
        }
    }
    out
}

/// Squared hinge on every angle outside its interval.
pub fn pose_loss<S: Real>(theta: &Theta<S>, limits: &RefinedLimits<S>) -> S {
    let mut total = S::zero();
    for (angles, ranges) in theta.iter().zip(&limits.ranges) {
        for (&x, r) in angles.iter().zip(ranges) {
            let excess = (x - r[1]).max(r[0] - x).max(S::zero());
            total += excess * excess;
        }
    }
    total
}

/// `||beta||_2`; 0 with a zero derivative at `beta = 0`.
pub fn shape_loss<S: Real>(beta: &Beta<S>) -> S {
    let sq: S = beta.iter().map(|&b| b * b).sum();
    if sq.re() == 0.0 {
        S::zero()
    } else {
        sq.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for PriorWeights {
    fn default() -> Self {
        PriorWeights { lambda1: 20000.0, lambda2: 20000.0, lambda3: 10.0 }
    }
}

/// Weighted prior terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorBreakdown<S = f64> {
    pub pose: S,
    pub penetration: S,
    pub shape: S,
}

impl<S: Real> PriorBreakdown<S> {
    pub fn weighted(pose: S, penetration: S, shape: S, w: &PriorWeights) -> Self {
        PriorBreakdown {
            pose: S::lift(w.lambda1) * pose,
            penetration: S::lift(w.lambda2) * penetration,
            shape: S::lift(w.lambda3) * shape,
        }
    }

    pub fn total(&self) -> S {
        self.pose + self.penetration + self.shape
    }
}

/// Everything the prior needs besides the pose itself.
#[derive(Debug, Clone)]
pub struct PriorContext<'a> {
    pub limits: &'a JointLimitTable,
    pub anatomy: AnatomyOptions,
    pub faces: &'a [[u32; 3]],
    pub mask: &'a NeighborMask,
    pub d_tol: f64,
    pub winding_threshold: f64,
    pub weights: PriorWeights,
}

/// `lambda1 L_pose + lambda2 L_non-penetration + lambda3 L_shape`.
///
/// The interior set is found on the value part of `mesh`; derivatives flow
/// through the member distances only.
pub fn prior_loss<S: Real>(theta: &Theta<S>, beta: &Beta<S>, mesh: &HandMesh<S>, ctx: &PriorContext) -> PriorBreakdown<S> {
    let refined = refine_limits(ctx.limits, theta, ctx.anatomy);
    let pose = pose_loss(theta, &refined);
    let shape = shape_loss(beta);
    let penetration = if ctx.weights.lambda2 == 0.0 {
        S::zero()
    } else {
        let interior = penetration::interior_vertices_with(&mesh.vertices, ctx.faces, ctx.mask, ctx.winding_threshold);
        penetration::non_penetration_loss_at(&interior, ctx.d_tol, |v| mesh.vertices[v as usize])
    };
    PriorBreakdown::weighted(pose, penetration, shape, &ctx.weights)
}

/// One angle outside its (refined) range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub joint: String,
    pub axis: Axis,
    pub value_deg: f64,
    pub min_deg: f64,
    pub max_deg: f64,
    /// Distance outside the range, degrees.
    pub excess_deg: f64,
    /// Whether the static range alone is violated.
    pub static_violation: bool,
}

/// Every angle outside its refined range, in degrees.
pub fn violations(table: &JointLimitTable, theta: &Theta<f64>, opts: AnatomyOptions) -> Vec<Violation> {
    let refined = refine_limits(table, theta, opts);
    let mut out = Vec::new();
    for j in 0..NUM_POSE_JOINTS {
        for axis in Axis::ALL {
            let x = theta[j][axis.index()];
            let [lo, hi] = refined.range(j, axis);
            let excess = (x - hi).max(lo - x);
            if excess > 0.0 {
                let [slo, shi] = table.range(j, axis);
                out.push(Violation {
                    joint: JOINT_NAMES[j + 1].into(),
                    axis,
                    value_deg: x.to_degrees(),
                    min_deg: lo.to_degrees(),
                    max_deg: hi.to_degrees(),
                    excess_deg: excess.to_degrees(),
                    static_violation: x < slo || x > shi,
                });
            }
        }
    }
    out
}
