//! Training targets and loss functions.
//!
//! Early stages learn corrections clipped to a maximum step length, so the
//! regressor only has to get the direction right while the current estimate
//! is far from the truth. Later stages switch to a squared-plus-absolute
//! keypoint loss whose absolute term keeps gradients alive once most
//! residuals are small.

use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};
use crate::model::{Point, Pose3D, Shape, VisibilityVector, NUM_LANDMARKS};

/// Per-landmark displacement added to the current shape estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionVector {
    deltas: Vec<Point>,
}

impl CorrectionVector {
    pub fn new(deltas: Vec<Point>) -> Result<Self> {
        if deltas.len() != NUM_LANDMARKS {
            return Err(KeplerError::LandmarkCount {
                expected: NUM_LANDMARKS,
                actual: deltas.len(),
            });
        }
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(KeplerError::NonFinite("correction"));
        }
        Ok(CorrectionVector { deltas })
    }

    pub fn zeros() -> Self {
        CorrectionVector {
            deltas: vec![Point::ZERO; NUM_LANDMARKS],
        }
    }

    pub fn deltas(&self) -> &[Point] {
        &self.deltas
    }

    pub fn get(&self, i: usize) -> Point {
        self.deltas[i]
    }

    pub fn set(&mut self, i: usize, d: Point) {
        self.deltas[i] = d;
    }

    pub fn apply(&self, shape: &Shape) -> Shape {
        shape.shifted(&self.deltas)
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> CorrectionVector {
        CorrectionVector {
            deltas: self
                .deltas
                .iter()
                .map(|d| Point::new(d.x * sx, d.y * sy))
                .collect(),
        }
    }
}

/// Hyper-parameters for one cascade iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePolicy {
    pub stage: u8,
    /// Maximum correction length in image pixels; stages 1 and 2 only.
    pub bound: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub mining: bool,
    pub patch_mode: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Whole-set passes after the balanced mining phase.
    pub finetune_epochs: usize,
    pub finetune_lr_scale: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub min_hard_fraction: f64,
    pub mining_bin_width: f64,
}

impl StagePolicy {
    /// Default policy for stage `stage` (1..=5).
    pub fn for_stage(stage: u8) -> Self {
        let base = StagePolicy {
            stage,
            bound: None,
            gamma: 0.0,
            tau: 0.03,
            lambda: 1.0,
            mu: 0.5,
            nu: 0.5,
            mining: false,
            patch_mode: false,
            learning_rate: 0.01,
            epochs: 8,
            batch_size: 16,
            momentum: 0.9,
            finetune_epochs: 0,
            finetune_lr_scale: 0.1,
            clip_norm: 5.0,
            min_hard_fraction: 0.3,
            mining_bin_width: 0.005,
        };
        match stage {
            1 | 2 => StagePolicy {
                bound: Some(20.0),
                ..base
            },
            3 => StagePolicy {
                gamma: 0.2,
                mu: 0.25,
                ..base
            },
            4 => StagePolicy {
                gamma: 0.1,
                mu: 0.25,
                mining: true,
                finetune_epochs: 2,
                ..base
            },
            _ => StagePolicy {
                gamma: 0.1,
                mu: 0.0,
                mining: true,
                patch_mode: true,
                epochs: 3,
                finetune_epochs: 1,
                ..base
            },
        }
    }

    pub fn defaults() -> Vec<StagePolicy> {
        (1..=5).map(StagePolicy::for_stage).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KeplerError::InvalidConfig(format!("stage {}: {m}", self.stage)));
        if !(1..=5).contains(&self.stage) {
            return bad("stage index must lie in 1..=5".into());
        }
        match (self.stage, self.bound) {
            (1 | 2, None) => return bad("stages 1 and 2 need a correction bound".into()),
            (1 | 2, Some(l)) if !(l > 0.0) => return bad("correction bound must be positive".into()),
            (3..=5, Some(_)) => return bad("only stages 1 and 2 take a correction bound".into()),
            _ => {}
        }
        if self.patch_mode != (self.stage == 5) {
            return bad("patch mode is used by stage 5 and only stage 5".into());
        }
        if self.patch_mode && self.mu != 0.0 {
            return bad("the patch stage has no pose task; mu must be 0".into());
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("nu", self.nu), ("gamma", self.gamma)] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]".into());
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if self.mining && !(self.min_hard_fraction > 0.0 && self.min_hard_fraction < 1.0) {
            return bad("min_hard_fraction must lie in (0, 1)".into());
        }
        if self.mining && (self.batch_size % 2 != 0 || !(self.mining_bin_width > 0.0)) {
            return bad("mining needs an even batch size and a positive bin width".into());
        }
        Ok(())
    }
}

/// Clip each visible error vector `g_i - y_i` to length `bound`, keeping its
/// direction. Invisible landmarks and zero errors yield a zero correction.
pub fn bounded_correction(
    truth: &Shape,
    current: &Shape,
    bound: f64,
    visibility: &VisibilityVector,
) -> Result<CorrectionVector> {
    if !(bound > 0.0) {
        return Err(KeplerError::InvalidConfig("correction bound must be positive".into()));
    }
    let mut out = CorrectionVector::zeros();
    for i in 0..NUM_LANDMARKS {
        if !visibility.is_visible(i) {
            continue;
        }
        let g = truth.point(i);
        if !g.is_finite() {
            return Err(KeplerError::AbsentGroundTruth(i));
        }
        let u = g - current.point(i);
        let len = u.norm();
        let d = if len <= bound {
            u
        } else {
            let mut s = bound / len;
            let mut d = u * s;
            // Rounding can leave the rescaled vector an ulp too long.
            while d.norm() > bound {
                s = s.next_down();
                d = u * s;
            }
            d
        };
        out.set(i, d);
    }
    Ok(out)
}

/// Visibility-weighted sum of squared landmark errors.
pub fn keypoint_loss(pred: &Shape, truth: &Shape, visibility: &VisibilityVector) -> f64 {
    (0..NUM_LANDMARKS)
        .filter(|&i| visibility.get(i) != 0.0)
        .map(|i| {
            let d = pred.point(i) - truth.point(i);
            visibility.get(i) * (d.x * d.x + d.y * d.y)
        })
        .sum()
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared-plus-absolute keypoint loss for one sample of a batch of `n`,
/// with its gradient with respect to `pred`. Both terms are applied per
/// coordinate; `sign(0)` is taken as 0.
pub fn variant_loss_and_grad(
    pred: &Shape,
    truth: &Shape,
    visibility: &VisibilityVector,
    gamma: f64,
    n: usize,
) -> (f64, Vec<Point>) {
    let inv_n = 1.0 / n.max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![Point::ZERO; NUM_LANDMARKS];
    for i in 0..NUM_LANDMARKS {
        let v = visibility.get(i);
        if v == 0.0 {
            continue;
        }
        let d = pred.point(i) - truth.point(i);
        value += v * (d.x * d.x + d.y * d.y) + gamma * v * (d.x.abs() + d.y.abs());
        grad[i] = Point::new(
            inv_n * v * (2.0 * d.x + gamma * sign(d.x)),
            inv_n * v * (2.0 * d.y + gamma * sign(d.y)),
        );
    }
    (inv_n * value, grad)
}

/// Variant loss averaged over a batch; the gradient holds one entry per
/// sample.
pub fn variant_loss_batch(
    batch: &[(&Shape, &Shape, &VisibilityVector)],
    gamma: f64,
) -> (f64, Vec<Vec<Point>>) {
    let n = batch.len();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (pred, truth, vis) in batch {
        let (v, g) = variant_loss_and_grad(pred, truth, vis, gamma, n);
        total += v;
        grads.push(g);
    }
    (total, grads)
}

/// Sum of squared yaw, pitch and roll errors.
pub fn pose_loss(pred: &Pose3D, truth: &Pose3D) -> f64 {
    pred.as_array()
        .iter()
        .zip(truth.as_array())
        .map(|(p, g)| (p - g) * (p - g))
        .sum()
}

/// Sum of squared visibility-confidence errors.
pub fn visibility_loss(pred: &VisibilityVector, truth: &VisibilityVector) -> f64 {
    pred.values()
        .iter()
        .zip(truth.values())
        .map(|(p, g)| (p - g) * (p - g))
        .sum()
}

/// Unweighted task losses for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub keypoint: f64,
    pub pose: f64,
    pub visibility: f64,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub keypoint: f64,
    pub pose: f64,
    pub visibility: f64,
    pub total: f64,
    pub n: usize,
}

/// Weighted combination `lambda * keypoint + mu * pose + nu * visibility`.
pub fn total_loss(parts: LossParts, policy: &StagePolicy) -> Result<LossBreakdown> {
    if policy.lambda < 0.0 || policy.mu < 0.0 || policy.nu < 0.0 {
        return Err(KeplerError::InvalidConfig("loss weights must be non-negative".into()));
    }
    // mu = 0 drops the pose term outright, even if the pose value is garbage.
    let pose_term = if policy.mu == 0.0 { 0.0 } else { policy.mu * parts.pose };
    Ok(LossBreakdown {
        keypoint: parts.keypoint,
        pose: parts.pose,
        visibility: parts.visibility,
        total: policy.lambda * parts.keypoint + pose_term + policy.nu * parts.visibility,
        n: parts.n,
    })
}
