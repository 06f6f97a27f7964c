//! Mini-batch training of one stage regressor.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::network;
use super::params::RegressorParams;
use super::sample_loss;
use crate::cascade::{balanced_batches, MiningPartition};
use crate::error::{KeplerError, Result};
use crate::learning::{CorrectionVector, StagePolicy};
use crate::model::{Pose3D, VisibilityVector};
use crate::render::RenderedInput;

/// Regression targets of one training sample, in network-frame pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTargets {
    pub corrections: CorrectionVector,
    /// Per-landmark weight of the correction term (ground-truth visibility).
    pub keypoint_weights: VisibilityVector,
    pub visibility: VisibilityVector,
    /// Per-landmark weight of the visibility term.
    pub visibility_weights: VisibilityVector,
    pub pose: Pose3D,
}

/// Random-access training set. Inputs may be produced lazily.
pub trait StageDataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, i: usize) -> Result<(RenderedInput, StageTargets)>;
}

impl StageDataset for [(RenderedInput, StageTargets)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn sample(&self, i: usize) -> Result<(RenderedInput, StageTargets)> {
        Ok(self[i].clone())
    }
}

impl StageDataset for Vec<(RenderedInput, StageTargets)> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn sample(&self, i: usize) -> Result<(RenderedInput, StageTargets)> {
        Ok(self[i].clone())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub policy: StagePolicy,
    pub init: RegressorParams,
    pub seed: u64,
    /// Hard/easy split used for balanced batches when the policy mines.
    pub partition: Option<MiningPartition>,
    pub workers: usize,
    /// Fit the input standardisation to the data before training.
    pub fit_standardization: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainPhase {
    Uniform,
    Balanced,
    Finetune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub phase: TrainPhase,
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedStage {
    pub params: RegressorParams,
    pub epochs: Vec<EpochRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Training made the full-set loss worse and the start point was kept.
    pub reverted: bool,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| KeplerError::InvalidConfig(format!("thread pool: {e}")))
}

/// Mean total loss over the whole dataset.
pub fn evaluate_loss(
    params: &RegressorParams,
    data: &dyn StageDataset,
    policy: &StagePolicy,
    workers: usize,
) -> Result<f64> {
    thread_pool(workers)?.install(|| evaluate_in_pool(params, data, policy))
}

fn evaluate_in_pool(
    params: &RegressorParams,
    data: &dyn StageDataset,
    policy: &StagePolicy,
) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(KeplerError::EmptyTrainingSet);
    }
    let plan = params.spec.plan()?;
    let losses = (0..n)
        .into_par_iter()
        .map(|i| {
            let (input, targets) = data.sample(i)?;
            super::check_input(&params.spec, &input)?;
            let out = network::forward(&plan, &params.values, params.spec.linear, &input.data).output;
            Ok(sample_loss(&params.spec, &out, &targets, policy, n)?.0.total)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum())
}

/// Per-channel mean and inverse standard deviation over up to 256 samples.
fn fit_standardization(params: &mut RegressorParams, data: &dyn StageDataset, seed: u64) -> Result<()> {
    let c = params.spec.input_channels;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5743_414c));
    idx.truncate(256);
    idx.sort_unstable();
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let mut count = 0usize;
    for &i in &idx {
        let (input, _) = data.sample(i)?;
        super::check_input(&params.spec, &input)?;
        for ch in 0..c {
            for &v in input.channel(ch) {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
        count += input.width * input.height;
    }
    let plan = params.spec.plan()?;
    for ch in 0..c {
        let mean = sum[ch] / count as f64;
        let var = (sq[ch] / count as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        params.values[plan.input_shift + ch] = mean;
        params.values[plan.input_scale + ch] = if std > 1e-6 { 1.0 / std } else { 1.0 };
    }
    Ok(())
}

struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
    clip_norm: f64,
}

impl Sgd {
    fn step(&mut self, values: &mut [f64], grad: &mut [f64], lr: f64) {
        if self.clip_norm > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > self.clip_norm {
                let s = self.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        for ((p, v), g) in values.iter_mut().zip(&mut self.velocity).zip(grad.iter()) {
            *v = self.momentum * *v - lr * g;
            *p += *v;
        }
    }
}

/// Loss and summed gradient of one mini-batch. Per-sample gradients are
/// computed in parallel and reduced in batch order, so the result does not
/// depend on the worker count.
fn batch_gradient(
    params: &RegressorParams,
    data: &dyn StageDataset,
    policy: &StagePolicy,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let plan = params.spec.plan()?;
    let n = batch.len();
    let per_sample = batch
        .par_iter()
        .map(|&i| {
            let (input, targets) = data.sample(i)?;
            super::check_input(&params.spec, &input)?;
            let linear = params.spec.linear;
            let cache = network::forward(&plan, &params.values, linear, &input.data);
            let (loss, g_out) = sample_loss(&params.spec, &cache.output, &targets, policy, n)?;
            let mut grad = vec![0.0; params.values.len()];
            network::backward(&plan, &params.values, linear, &cache, &g_out, &mut grad);
            Ok((loss.total, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grad = vec![0.0; params.values.len()];
    for (l, g) in per_sample {
        total += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total, grad))
}

/// Train one stage regressor from `opts.init`.
///
/// Uniform phases draw reshuffled passes over the whole set; when the policy
/// mines and a partition is given, the main phase uses balanced hard/easy
/// batches and the finetune phase runs uniform passes at a reduced rate. If
/// the full-set loss ends above where it started the initial parameters are
/// returned.
pub fn train_stage(data: &dyn StageDataset, opts: &TrainOptions) -> Result<TrainedStage> {
    let policy = &opts.policy;
    policy.validate()?;
    if data.is_empty() {
        return Err(KeplerError::EmptyTrainingSet);
    }
    let pool = thread_pool(opts.workers)?;
    pool.install(|| train_in_pool(data, opts))
}

fn train_in_pool(data: &dyn StageDataset, opts: &TrainOptions) -> Result<TrainedStage> {
    let policy = &opts.policy;
    let stage = policy.stage;
    let mut start = opts.init.with_stage(stage);
    if opts.fit_standardization {
        fit_standardization(&mut start, data, opts.seed)?;
    }
    let initial_loss = evaluate_in_pool(&start, data, policy)?;
    if !initial_loss.is_finite() {
        return Err(KeplerError::Divergence { stage, epoch: 0 });
    }
    if policy.epochs == 0 && policy.finetune_epochs == 0 {
        return Ok(TrainedStage {
            params: start,
            epochs: Vec::new(),
            initial_loss,
            final_loss: initial_loss,
            reverted: false,
        });
    }

    let n = data.len();
    let bs = policy.batch_size.min(n).max(1);
    let batches_per_epoch = n.div_ceil(bs);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = start.clone();
    let mut sgd = Sgd {
        velocity: vec![0.0; params.values.len()],
        momentum: policy.momentum,
        clip_norm: policy.clip_norm,
    };
    let balanced = match (&opts.partition, policy.mining) {
        (Some(p), true) if !p.hard.is_empty() && !p.easy.is_empty() => {
            let even = (policy.batch_size / 2).max(1) * 2;
            Some(balanced_batches(p, even, opts.seed ^ 0xba1a)?)
        }
        _ => None,
    };
    let main_phase = if balanced.is_some() {
        TrainPhase::Balanced
    } else {
        TrainPhase::Uniform
    };
    let mut balanced = balanced;
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let schedule = std::iter::repeat((main_phase, policy.learning_rate))
        .take(policy.epochs)
        .chain(
            std::iter::repeat((
                TrainPhase::Finetune,
                policy.learning_rate * policy.finetune_lr_scale,
            ))
            .take(policy.finetune_epochs),
        );
    for (epoch, (phase, lr)) in schedule.enumerate() {
        let batches: Vec<Vec<usize>> = match (phase, balanced.as_mut()) {
            (TrainPhase::Balanced, Some(stream)) => stream.take(batches_per_epoch).collect(),
            _ => {
                order.shuffle(&mut rng);
                order.chunks(bs).map(<[usize]>::to_vec).collect()
            }
        };
        let mut sum = 0.0;
        for batch in &batches {
            let (loss, mut grad) = batch_gradient(&params, data, policy, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(KeplerError::Divergence { stage, epoch: epoch + 1 });
            }
            sum += loss;
            sgd.step(&mut params.values, &mut grad, lr);
        }
        let loss = sum / batches.len() as f64;
        log::debug!("stage {stage} epoch {} ({phase:?}): loss {loss:.6}", epoch + 1);
        records.push(EpochRecord {
            phase,
            epoch: epoch + 1,
            loss,
        });
    }

    let final_loss = evaluate_in_pool(&params, data, policy)?;
    if !final_loss.is_finite() {
        return Err(KeplerError::Divergence {
            stage,
            epoch: records.len(),
        });
    }
    let reverted = final_loss > initial_loss;
    if reverted {
        log::warn!("stage {stage}: loss rose from {initial_loss:.6} to {final_loss:.6}; keeping the start point");
    }
    Ok(TrainedStage {
        params: if reverted { start } else { params },
        epochs: records,
        initial_loss,
        final_loss: if reverted { initial_loss } else { final_loss },
        reverted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Point, NUM_LANDMARKS};
    use crate::regressor::{predict, NetSpec};
    use rand::Rng;

    fn toy_data(n: usize, seed: u64) -> Vec<(RenderedInput, StageTargets)> {
        let spec = NetSpec::tiny(66);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut input = RenderedInput::zeros(spec.input_channels, 8, 8);
                input.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
                // Target correction depends linearly on the mean of channel 0.
                let m: f32 = input.channel(0).iter().sum::<f32>() / 64.0;
                let d = Point::new(4.0 * (m as f64 - 0.5), -2.0 * (m as f64 - 0.5));
                let targets = StageTargets {
                    corrections: CorrectionVector::new(vec![d; NUM_LANDMARKS]).unwrap(),
                    keypoint_weights: VisibilityVector::all_visible(),
                    visibility: VisibilityVector::all_visible(),
                    visibility_weights: VisibilityVector::all_visible(),
                    pose: Pose3D::new(10.0, 0.0, -5.0),
                };
                (input, targets)
            })
            .collect()
    }

    fn opts(epochs: usize) -> TrainOptions {
        let mut policy = StagePolicy::for_stage(3);
        policy.epochs = epochs;
        policy.learning_rate = 0.02;
        TrainOptions {
            init: RegressorParams::init(&NetSpec::tiny(66), 3, 1).unwrap(),
            policy,
            seed: 5,
            partition: None,
            workers: 1,
            fit_standardization: true,
        }
    }

    #[test]
    fn training_reduces_loss() {
        let data = toy_data(48, 2);
        let t = train_stage(&data, &opts(10)).unwrap();
        assert!(!t.reverted);
        assert!(t.final_loss < 0.8 * t.initial_loss, "{} -> {}", t.initial_loss, t.final_loss);
        let out = predict(&t.params, &data[0].0).unwrap();
        assert!(out.pose.yaw > 0.0);
    }

    #[test]
    fn zero_epochs_returns_start() {
        let data = toy_data(8, 3);
        let mut o = opts(0);
        o.fit_standardization = false;
        let t = train_stage(&data, &o).unwrap();
        assert_eq!(t.params.values(), o.init.values());
        assert!(t.epochs.is_empty());
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let data = toy_data(24, 4);
        let a = train_stage(&data, &opts(2)).unwrap();
        let mut o = opts(2);
        o.workers = 3;
        let b = train_stage(&data, &o).unwrap();
        assert!(a.params.values().iter().zip(b.params.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn huge_learning_rate_diverges_or_reverts() {
        let data = toy_data(16, 5);
        let mut o = opts(3);
        o.policy.learning_rate = 1e12;
        o.policy.clip_norm = 0.0;
        o.policy.momentum = 0.0;
        match train_stage(&data, &o) {
            Err(KeplerError::Divergence { stage: 3, .. }) => {}
            Ok(t) => assert!(t.reverted),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn empty_set_is_rejected() {
        let data: Vec<(RenderedInput, StageTargets)> = Vec::new();
        assert!(matches!(train_stage(&data, &opts(1)), Err(KeplerError::EmptyTrainingSet)));
    }
}
