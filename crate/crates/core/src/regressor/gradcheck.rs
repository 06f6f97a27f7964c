//! Finite-difference verification of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{self, ForwardCache};
use super::params::RegressorParams;
use super::sample_loss;
use super::spec::{NetSpec, Plan};
use super::train::StageTargets;
use crate::error::Result;
use crate::learning::{CorrectionVector, StagePolicy};
use crate::model::{Point, Pose3D, VisibilityVector, NUM_LANDMARKS};
use crate::render::RenderedInput;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Corrupt the analytic gradient of this parameter index (negative control).
    pub fault: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter index holding the maximum.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Parameters whose perturbation crossed an activation or loss kink.
    pub skipped: usize,
}

struct Probe<'a> {
    plan: Plan,
    params: &'a RegressorParams,
    input: &'a RenderedInput,
    targets: &'a StageTargets,
    policy: &'a StagePolicy,
}

impl Probe<'_> {
    fn run(&self, values: &[f64]) -> Result<(f64, ForwardCache, Vec<f64>, Vec<bool>)> {
        let spec = &self.params.spec;
        let cache = network::forward(&self.plan, values, spec.linear, &self.input.data);
        let (loss, g_out) = sample_loss(spec, &cache.output, self.targets, self.policy, 1)?;
        let mut sig = if spec.linear { Vec::new() } else { cache.kink_signature() };
        if self.policy.gamma != 0.0 {
            // The absolute term of the keypoint loss has its own kink at zero residual.
            let cs = spec.correction_scale;
            for i in 0..NUM_LANDMARKS {
                let d = self.targets.corrections.get(i);
                sig.push(cache.output[2 * i] > d.x / cs);
                sig.push(cache.output[2 * i + 1] > d.y / cs);
            }
        }
        Ok((loss.total, cache, g_out, sig))
    }
}

/// Compare backpropagated gradients with central differences for every
/// trainable parameter. The error per parameter is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check_report(
    params: &RegressorParams,
    input: &RenderedInput,
    targets: &StageTargets,
    policy: &StagePolicy,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    super::check_input(&params.spec, input)?;
    let probe = Probe {
        plan: params.spec.plan()?,
        params,
        input,
        targets,
        policy,
    };
    let (_, cache, g_out, base_sig) = probe.run(&params.values)?;
    let mut analytic = vec![0.0; params.values.len()];
    network::backward(&probe.plan, &params.values, params.spec.linear, &cache, &g_out, &mut analytic);
    if let Some(i) = opts.fault {
        if i < analytic.len() {
            analytic[i] += 0.5 * analytic[i].abs().max(1e-2);
        }
    }

    let h = opts.step;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut values = params.values.clone();
    for slot in probe.plan.slots.iter().filter(|s| s.trainable) {
        for i in slot.offset..slot.offset + slot.len {
            let orig = values[i];
            values[i] = orig + h;
            let (plus, _, _, sig_p) = probe.run(&values)?;
            values[i] = orig - h;
            let (minus, _, _, sig_m) = probe.run(&values)?;
            values[i] = orig;
            if sig_p != base_sig || sig_m != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some(i);
            }
        }
    }
    Ok(report)
}

/// A seeded random network, input and target set for `spec`.
pub fn random_check_case(spec: &NetSpec, stage: u8, seed: u64) -> Result<(RegressorParams, RenderedInput, StageTargets)> {
    let params = RegressorParams::init(spec, stage, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut input = RenderedInput::zeros(spec.input_channels, spec.input_height, spec.input_width);
    input.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut unit = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let vis = VisibilityVector::new(unit(NUM_LANDMARKS).into_iter().map(|v| (v > 0.3) as u8 as f64).collect())?;
    let weights = VisibilityVector::new(unit(NUM_LANDMARKS))?;
    let deltas = unit(2 * NUM_LANDMARKS)
        .chunks(2)
        .map(|c| Point::new((c[0] - 0.5) * 4.0 * spec.correction_scale, (c[1] - 0.5) * 4.0 * spec.correction_scale))
        .collect();
    let p = unit(3);
    Ok((
        params,
        input,
        StageTargets {
            corrections: CorrectionVector::new(deltas)?,
            keypoint_weights: vis.clone(),
            visibility: vis,
            visibility_weights: weights,
            pose: Pose3D::new((p[0] - 0.5) * 120.0, (p[1] - 0.5) * 60.0, (p[2] - 0.5) * 60.0),
        },
    ))
}

/// Maximum relative gradient error with default options.
pub fn gradient_check(
    params: &RegressorParams,
    input: &RenderedInput,
    targets: &StageTargets,
    policy: &StagePolicy,
) -> Result<f64> {
    Ok(gradient_check_report(params, input, targets, policy, &GradCheckOptions::default())?.max_relative_error)
}
