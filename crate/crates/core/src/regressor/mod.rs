//! The per-stage prediction function: a convolutional regressor mapping a
//! rendered input to landmark corrections, visibility and pose.

mod gradcheck;
mod network;
mod oracle;
mod params;
mod spec;
mod train;

pub use gradcheck::{
    gradient_check, gradient_check_report, random_check_case, GradCheckOptions, GradCheckReport,
};
pub use oracle::oracle_predict;
pub use params::RegressorParams;
pub use spec::{BranchSpec, ConvSpec, NetSpec, TensorSlot};
pub use train::{
    evaluate_loss, train_stage, EpochRecord, StageDataset, StageTargets, TrainOptions,
    TrainPhase, TrainedStage,
};

use crate::error::{KeplerError, Result};
use crate::learning::{
    total_loss, variant_loss_and_grad, CorrectionVector, LossBreakdown, LossParts, StagePolicy,
};
use crate::model::{Point, Pose3D, Shape, VisibilityVector, NUM_LANDMARKS};
use crate::render::RenderedInput;

/// Output width of a global stage: corrections, visibility, pose.
pub const GLOBAL_OUTPUTS: usize = 3 * NUM_LANDMARKS + 3;
/// Output width of the patch stage, which has no pose task.
pub const PATCH_OUTPUTS: usize = 3 * NUM_LANDMARKS;

/// Prediction of one stage, in network-frame pixels and degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorOutput {
    pub corrections: CorrectionVector,
    pub visibility: VisibilityVector,
    pub pose: Pose3D,
}

impl RegressorOutput {
    pub fn zeros() -> Self {
        RegressorOutput {
            corrections: CorrectionVector::zeros(),
            visibility: VisibilityVector::none_visible(),
            pose: Pose3D::default(),
        }
    }

    /// Flattened `[dx_0, dy_0, .., dx_20, dy_20, v_0, .., v_20, yaw, pitch, roll]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(GLOBAL_OUTPUTS);
        for d in self.corrections.deltas() {
            out.push(d.x);
            out.push(d.y);
        }
        out.extend_from_slice(self.visibility.values());
        out.extend(self.pose.as_array());
        out
    }

    pub(crate) fn from_raw(raw: &[f64], spec: &NetSpec) -> Result<Self> {
        if raw.len() != GLOBAL_OUTPUTS && raw.len() != PATCH_OUTPUTS {
            return Err(KeplerError::InvalidNetSpec(format!(
                "head has {} outputs; expected {GLOBAL_OUTPUTS} or {PATCH_OUTPUTS}",
                raw.len()
            )));
        }
        let n = NUM_LANDMARKS;
        let cs = spec.correction_scale;
        let corrections = CorrectionVector::new(
            (0..n)
                .map(|i| Point::new(raw[2 * i] * cs, raw[2 * i + 1] * cs))
                .collect(),
        )?;
        let visibility = VisibilityVector::new(raw[2 * n..3 * n].to_vec())?;
        let pose = if raw.len() == GLOBAL_OUTPUTS {
            let ps = spec.pose_scale;
            Pose3D::new(raw[3 * n] * ps, raw[3 * n + 1] * ps, raw[3 * n + 2] * ps)
        } else {
            Pose3D::default()
        };
        if !(pose.yaw.is_finite() && pose.pitch.is_finite() && pose.roll.is_finite()) {
            return Err(KeplerError::NonFinite("pose prediction"));
        }
        Ok(RegressorOutput {
            corrections,
            visibility,
            pose,
        })
    }
}

fn check_input(spec: &NetSpec, input: &RenderedInput) -> Result<()> {
    if input.channels != spec.input_channels {
        return Err(KeplerError::ChannelMismatch {
            expected: spec.input_channels,
            actual: input.channels,
        });
    }
    if input.width != spec.input_width || input.height != spec.input_height {
        return Err(KeplerError::DimensionMismatch {
            expected_w: spec.input_width,
            expected_h: spec.input_height,
            actual_w: input.width,
            actual_h: input.height,
        });
    }
    Ok(())
}

/// Raw head outputs for `input`.
pub fn predict_raw(params: &RegressorParams, input: &RenderedInput) -> Result<Vec<f64>> {
    check_input(&params.spec, input)?;
    let plan = params.spec.plan()?;
    Ok(network::forward(&plan, &params.values, params.spec.linear, &input.data).output)
}

/// Deterministic forward pass.
pub fn predict(params: &RegressorParams, input: &RenderedInput) -> Result<RegressorOutput> {
    let raw = predict_raw(params, input)?;
    RegressorOutput::from_raw(&raw, &params.spec)
}

/// Weighted multi-task loss of one sample in a batch of `n`, and its
/// gradient with respect to the raw head outputs. Corrections and pose are
/// compared in output units (divided by the NetSpec scales).
pub(crate) fn sample_loss(
    spec: &NetSpec,
    raw: &[f64],
    targets: &StageTargets,
    policy: &StagePolicy,
    n: usize,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let nl = NUM_LANDMARKS;
    let inv_n = 1.0 / n as f64;
    let cs = spec.correction_scale;
    let pred = Shape::from_fn(|i| Point::new(raw[2 * i], raw[2 * i + 1]));
    let truth = Shape::from_fn(|i| {
        let d = targets.corrections.get(i);
        Point::new(d.x / cs, d.y / cs)
    });
    let (kp, kp_grad) =
        variant_loss_and_grad(&pred, &truth, &targets.keypoint_weights, policy.gamma, n);

    let mut vis = 0.0;
    let mut grad = vec![0.0; raw.len()];
    for i in 0..nl {
        let w = targets.visibility_weights.get(i);
        if w == 0.0 {
            continue;
        }
        let d = raw[2 * nl + i] - targets.visibility.get(i);
        vis += w * d * d;
        grad[2 * nl + i] = policy.nu * inv_n * 2.0 * w * d;
    }

    let mut pose = 0.0;
    if raw.len() == GLOBAL_OUTPUTS && policy.mu != 0.0 {
        let ps = spec.pose_scale;
        for (j, g) in targets.pose.as_array().iter().enumerate() {
            let d = raw[3 * nl + j] - g / ps;
            pose += d * d;
            grad[3 * nl + j] = policy.mu * inv_n * 2.0 * d;
        }
    }

    for (i, g) in kp_grad.iter().enumerate() {
        grad[2 * i] = policy.lambda * g.x;
        grad[2 * i + 1] = policy.lambda * g.y;
    }
    let parts = LossParts {
        keypoint: kp,
        pose: pose * inv_n,
        visibility: vis * inv_n,
        n,
    };
    Ok((total_loss(parts, policy)?, grad))
}
