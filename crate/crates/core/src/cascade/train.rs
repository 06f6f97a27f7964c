//! Greedy stage-by-stage training of the cascade.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::mining::{mine_hard_samples, MiningPartition};
use super::model::{CascadeModel, PatchConfig, NUM_STAGES};
use super::run::{clip_corrections, global_input, patch_input};
use crate::data::FaceSample;
use crate::error::{KeplerError, Result};
use crate::eval::{median, nme};
use crate::image::Raster;
use crate::learning::{bounded_correction, CorrectionVector, StagePolicy};
use crate::model::{
    compute_mean_shape, face_size, place_in_box, AnnotatedFace, Point, Shape, VisibilityVector,
    NUM_LANDMARKS,
};
use crate::regressor::{
    predict, train_stage, NetSpec, RegressorParams, StageDataset, StageTargets, TrainOptions,
    GLOBAL_OUTPUTS, PATCH_OUTPUTS,
};
use crate::render::{RenderConfig, RenderedInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub render: RenderConfig,
    /// Filled from the per-stage tables of a run configuration.
    #[serde(skip)]
    pub policies: Vec<StagePolicy>,
    /// Global window side as a multiple of the box's longer side.
    pub context: f64,
    pub patch: PatchConfig,
    /// Global network layout; derived from the render size when absent.
    pub global_net: Option<NetSpec>,
    /// Patch network layout; derived from the patch config when absent.
    pub patch_net: Option<NetSpec>,
    pub train_stage5: bool,
    /// Start stages 2 to 4 from the previous stage's weights instead of a
    /// fresh initialisation.
    pub warm_start: bool,
    /// Stage-5 training centres are the stage-4 outputs moved by up to this
    /// fraction of the patch side.
    pub patch_jitter: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            render: RenderConfig {
                width: 64,
                height: 64,
                sigma: 1.5,
                amplitude: 1.0,
                tau: 0.03,
            },
            policies: StagePolicy::defaults(),
            context: 1.5,
            patch: PatchConfig::default(),
            global_net: None,
            patch_net: None,
            train_stage5: true,
            warm_start: true,
            patch_jitter: 0.25,
            seed: 0,
            workers: 1,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.patch.validate()?;
        if self.render.width != self.render.height {
            return Err(KeplerError::InvalidConfig("the cascade renders square frames".into()));
        }
        if self.policies.len() != NUM_STAGES {
            return Err(KeplerError::InvalidConfig(format!(
                "expected {NUM_STAGES} stage policies, found {}",
                self.policies.len()
            )));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.stage as usize != i + 1 {
                return Err(KeplerError::InvalidConfig("policies must be ordered by stage".into()));
            }
            p.validate()?;
        }
        if !(self.context > 0.0) || !(0.0..=1.0).contains(&self.patch_jitter) {
            return Err(KeplerError::InvalidConfig(
                "context must be positive and patch_jitter within [0, 1]".into(),
            ));
        }
        if self.workers == 0 {
            return Err(KeplerError::InvalidConfig("workers must be at least 1".into()));
        }
        let g = self.global_spec()?;
        if g.input_channels != 3 + NUM_LANDMARKS
            || g.input_width != self.render.width
            || g.input_height != self.render.height
            || g.head_outputs != GLOBAL_OUTPUTS
        {
            return Err(KeplerError::InvalidNetSpec(
                "global network must take the rendered input and emit all tasks".into(),
            ));
        }
        let p = self.patch_spec()?;
        let r = self.patch.resolution;
        if p.input_channels != 4 || p.input_width != r || p.input_height != r || p.head_outputs != PATCH_OUTPUTS {
            return Err(KeplerError::InvalidNetSpec(
                "patch network must take RGB plus one centre channel and emit corrections and visibility".into(),
            ));
        }
        Ok(())
    }

    pub fn global_spec(&self) -> Result<NetSpec> {
        match &self.global_net {
            Some(s) => {
                s.validate()?;
                Ok(s.clone())
            }
            None => NetSpec::channeled(
                3 + NUM_LANDMARKS,
                self.render.height,
                self.render.width,
                GLOBAL_OUTPUTS,
                2,
            ),
        }
    }

    pub fn patch_spec(&self) -> Result<NetSpec> {
        match &self.patch_net {
            Some(s) => {
                s.validate()?;
                Ok(s.clone())
            }
            None => NetSpec::channeled(4, self.patch.resolution, self.patch.resolution, PATCH_OUTPUTS, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningSummary {
    pub mode: f64,
    pub delta: f64,
    /// Fraction of training samples with NME above `delta` before and after
    /// the mining stage.
    pub hard_fraction_before: f64,
    pub hard_fraction_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub reverted: bool,
    pub epoch_losses: Vec<f64>,
    /// Median training NME entering and leaving the stage.
    pub median_nme_before: f64,
    pub median_nme_after: f64,
    pub mining: Option<MiningSummary>,
}

#[derive(Clone, Debug)]
pub struct TrainedCascade {
    pub model: CascadeModel,
    pub reports: Vec<StageReport>,
}

/// Training samples of one global stage, rendered on demand.
struct GlobalData<'a> {
    faces: &'a [FaceSample],
    frames: &'a [Frame],
    windows: &'a [Raster],
    current: &'a [Shape],
    render_vis: &'a [VisibilityVector],
    bound: Option<f64>,
    render: &'a RenderConfig,
}

impl StageDataset for GlobalData<'_> {
    fn len(&self) -> usize {
        self.faces.len()
    }

    fn sample(&self, i: usize) -> Result<(RenderedInput, StageTargets)> {
        let gt = &self.faces[i].face;
        let frame = &self.frames[i];
        let input = global_input(frame, &self.windows[i], &self.current[i], &self.render_vis[i], self.render)?;
        let step = bounded_correction(
            &gt.shape,
            &self.current[i],
            self.bound.unwrap_or(f64::INFINITY),
            &gt.visibility,
        )?;
        Ok((
            input,
            StageTargets {
                corrections: frame.corrections_to_frame(&step),
                keypoint_weights: gt.visibility.clone(),
                visibility: gt.visibility.clone(),
                visibility_weights: VisibilityVector::all_visible(),
                pose: gt.pose,
            },
        ))
    }
}

/// One patch per landmark per face, centred at a jittered stage-4 output.
struct PatchData<'a> {
    faces: &'a [FaceSample],
    centers: &'a [Vec<Point>],
    sides: &'a [f64],
    cfg: &'a PatchConfig,
}

impl StageDataset for PatchData<'_> {
    fn len(&self) -> usize {
        self.faces.len() * NUM_LANDMARKS
    }

    fn sample(&self, k: usize) -> Result<(RenderedInput, StageTargets)> {
        let (f, l) = (k / NUM_LANDMARKS, k % NUM_LANDMARKS);
        let sample = &self.faces[f];
        let center = self.centers[f][l];
        let frame = Frame::centered(center, self.sides[f], self.cfg.resolution);
        let input = patch_input(&sample.image, &frame, self.cfg);
        let visible = sample.face.visibility.is_visible(l);
        let mut corrections = CorrectionVector::zeros();
        let mut kp = vec![0.0; NUM_LANDMARKS];
        let mut vis = vec![0.0; NUM_LANDMARKS];
        let mut vis_w = vec![0.0; NUM_LANDMARKS];
        vis_w[l] = 1.0;
        if visible {
            let g = sample.face.shape.point(l);
            corrections.set(l, Point::new((g.x - center.x) / frame.step, (g.y - center.y) / frame.step));
            kp[l] = 1.0;
            vis[l] = 1.0;
        }
        Ok((
            input,
            StageTargets {
                corrections,
                keypoint_weights: VisibilityVector::new(kp)?,
                visibility: VisibilityVector::new(vis)?,
                visibility_weights: VisibilityVector::new(vis_w)?,
                pose: Default::default(),
            },
        ))
    }
}

fn sample_nmes(faces: &[FaceSample], shapes: &[Shape]) -> Result<Vec<f64>> {
    faces
        .iter()
        .zip(shapes)
        .map(|(s, y)| nme(y, &s.face.shape, &s.face.visibility, face_size(&s.face.face_box)))
        .collect()
}

fn check_faces(faces: &[FaceSample]) -> Result<()> {
    if faces.is_empty() {
        return Err(KeplerError::EmptyTrainingSet);
    }
    for (i, s) in faces.iter().enumerate() {
        if s.face.visibility.visible_count() == 0 {
            return Err(KeplerError::Degenerate(format!("training face {i} has no visible landmarks")));
        }
    }
    Ok(())
}

fn stage_seed(seed: u64, stage: u8) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stage as u64)
}

/// Train stages 1..=4 (and stage 5 when enabled) on `train`.
///
/// Each stage sees the shapes produced by the stages before it. Stage
/// weights start from the previous stage's; the first stage starts from a
/// seeded initialisation with input standardisation fitted to the data.
/// Stage 4 mines hard samples from the stage-3 training errors.
pub fn train_cascade(train: &[FaceSample], cfg: &CascadeConfig) -> Result<TrainedCascade> {
    cfg.validate()?;
    check_faces(train)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| KeplerError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| train_in_pool(train, cfg))
}

fn train_in_pool(train: &[FaceSample], cfg: &CascadeConfig) -> Result<TrainedCascade> {
    let faces: Vec<AnnotatedFace> = train.iter().map(|s| s.face.clone()).collect();
    let mean_shape = compute_mean_shape(&faces)?;
    let res = cfg.render.width;
    let frames: Vec<Frame> = faces.iter().map(|f| Frame::for_box(&f.face_box, cfg.context, res)).collect();
    let windows: Vec<Raster> = train.par_iter().zip(&frames).map(|(s, fr)| fr.extract(&s.image)).collect();
    let mut current: Vec<Shape> = faces.iter().map(|f| place_in_box(&mean_shape, &f.face_box)).collect();
    let mut render_vis = vec![VisibilityVector::all_visible(); train.len()];
    let global_spec = cfg.global_spec()?;

    let mut stage_params: Vec<RegressorParams> = Vec::new();
    let mut reports = Vec::new();
    for stage in 1..NUM_STAGES as u8 {
        let policy = &cfg.policies[stage as usize - 1];
        let before = sample_nmes(train, &current)?;
        let mut mining = None;
        let partition = if policy.mining {
            match mine_hard_samples(&before, policy.mining_bin_width, policy.min_hard_fraction) {
                Ok(p) => {
                    log::info!(
                        "stage {stage}: mode {:.4}, threshold {:.4}, {} hard of {}",
                        p.mode,
                        p.delta,
                        p.hard.len(),
                        before.len()
                    );
                    Some(p)
                }
                Err(KeplerError::Degenerate(m)) => {
                    log::warn!("stage {stage}: mining skipped ({m})");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let data = GlobalData {
            faces: train,
            frames: &frames,
            windows: &windows,
            current: &current,
            render_vis: &render_vis,
            bound: policy.bound,
            render: &cfg.render,
        };
        let (init, fresh) = match stage_params.last().filter(|_| cfg.warm_start) {
            Some(p) => (p.with_stage(stage), false),
            None => (RegressorParams::init(&global_spec, stage, stage_seed(cfg.seed, stage))?, true),
        };
        let trained = train_stage(
            &data,
            &TrainOptions {
                policy: policy.clone(),
                init,
                seed: stage_seed(cfg.seed, stage),
                partition: partition.clone(),
                workers: cfg.workers,
                fit_standardization: fresh,
            },
        )?;
        let params = trained.params;

        let steps: Vec<(Shape, VisibilityVector)> = (0..train.len())
            .into_par_iter()
            .map(|i| {
                let input = global_input(&frames[i], &windows[i], &current[i], &render_vis[i], &cfg.render)?;
                let out = predict(&params, &input)?;
                let mut c = frames[i].corrections_to_image(&out.corrections);
                if let Some(b) = policy.bound {
                    c = clip_corrections(&c, b);
                }
                Ok((c.apply(&current[i]), out.visibility.clamped()))
            })
            .collect::<Result<_>>()?;
        for (i, (shape, vis)) in steps.into_iter().enumerate() {
            current[i] = shape;
            if stage >= 2 {
                render_vis[i] = vis;
            }
        }
        let after = sample_nmes(train, &current)?;
        if let Some(p) = &partition {
            mining = Some(summarize_mining(p, &before, &after));
        }
        let report = StageReport {
            stage,
            initial_loss: trained.initial_loss,
            final_loss: trained.final_loss,
            reverted: trained.reverted,
            epoch_losses: trained.epochs.iter().map(|e| e.loss).collect(),
            median_nme_before: median(&before),
            median_nme_after: median(&after),
            mining,
        };
        log::info!(
            "stage {stage}: loss {:.5} -> {:.5}, median NME {:.5} -> {:.5}",
            report.initial_loss,
            report.final_loss,
            report.median_nme_before,
            report.median_nme_after
        );
        reports.push(report);
        stage_params.push(params);
    }

    if cfg.train_stage5 {
        let (params, report) = train_patch_stage(train, &current, cfg)?;
        reports.push(report);
        stage_params.push(params);
    }

    let model = CascadeModel {
        mean_shape,
        policies: cfg.policies.clone(),
        stage_params,
        render_cfg: cfg.render,
        context: cfg.context,
        patch: cfg.patch,
    };
    model.validate()?;
    Ok(TrainedCascade { model, reports })
}

fn summarize_mining(p: &MiningPartition, before: &[f64], after: &[f64]) -> MiningSummary {
    let frac = |e: &[f64]| e.iter().filter(|&&v| v > p.delta).count() as f64 / e.len() as f64;
    MiningSummary {
        mode: p.mode,
        delta: p.delta,
        hard_fraction_before: frac(before),
        hard_fraction_after: frac(after),
    }
}

/// Jittered patch centres around `shapes`, up to `jitter * side` away.
fn jittered_centers(shapes: &[Shape], sides: &[f64], jitter: f64, seed: u64) -> Vec<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .zip(sides)
        .map(|(s, &side)| {
            s.iter()
                .map(|&p| {
                    let r = jitter * side * rng.gen::<f64>().sqrt();
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    p + Point::new(r * a.cos(), r * a.sin())
                })
                .collect()
        })
        .collect()
}

fn train_patch_stage(
    train: &[FaceSample],
    stage4: &[Shape],
    cfg: &CascadeConfig,
) -> Result<(RegressorParams, StageReport)> {
    let policy = &cfg.policies[4];
    let sides: Vec<f64> = train.iter().map(|s| cfg.patch.side(face_size(&s.face.face_box))).collect();
    let centers = jittered_centers(stage4, &sides, cfg.patch_jitter, stage_seed(cfg.seed, 50));
    let data = PatchData {
        faces: train,
        centers: &centers,
        sides: &sides,
        cfg: &cfg.patch,
    };
    let init = RegressorParams::init(&cfg.patch_spec()?, 5, stage_seed(cfg.seed, 5))?;
    let before_shapes: Vec<Shape> = centers.iter().map(|c| Shape::new(c.clone())).collect::<Result<_>>()?;
    let before = sample_nmes(train, &before_shapes)?;

    // Mining on per-patch errors in units of the face size.
    let partition = if policy.mining {
        let errs: Vec<f64> = (0..data.len())
            .map(|k| {
                let (f, l) = (k / NUM_LANDMARKS, k % NUM_LANDMARKS);
                let face = &train[f].face;
                if face.visibility.is_visible(l) {
                    (centers[f][l] - face.shape.point(l)).norm() / face_size(&face.face_box)
                } else {
                    0.0
                }
            })
            .collect();
        mine_hard_samples(&errs, policy.mining_bin_width, policy.min_hard_fraction).ok()
    } else {
        None
    };
    let trained = train_stage(
        &data,
        &TrainOptions {
            policy: policy.clone(),
            init,
            seed: stage_seed(cfg.seed, 5),
            partition,
            workers: cfg.workers,
            fit_standardization: true,
        },
    )?;
    let params = trained.params;
    let after_shapes: Vec<Shape> = (0..train.len())
        .into_par_iter()
        .map(|i| {
            super::run::run_local_stage(
                &train[i].image,
                &before_shapes[i],
                &params,
                sides[i],
                &cfg.patch,
                policy.tau,
            )
            .map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let after = sample_nmes(train, &after_shapes)?;
    let report = StageReport {
        stage: 5,
        initial_loss: trained.initial_loss,
        final_loss: trained.final_loss,
        reverted: trained.reverted,
        epoch_losses: trained.epochs.iter().map(|e| e.loss).collect(),
        median_nme_before: median(&before),
        median_nme_after: median(&after),
        mining: None,
    };
    log::info!(
        "stage 5: loss {:.5} -> {:.5}, median NME on jittered centres {:.5} -> {:.5}",
        report.initial_loss,
        report.final_loss,
        report.median_nme_before,
        report.median_nme_after
    );
    Ok((params, report))
}
