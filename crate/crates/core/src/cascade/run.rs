//! Inference over the cascade: `y_{t+1} = y_t + f_t(render(I, y_t))`.

use super::frame::Frame;
use super::model::{CascadeModel, PatchConfig, NUM_STAGES};
use crate::error::{KeplerError, Result};
use crate::image::Raster;
use crate::learning::CorrectionVector;
use crate::model::{
    face_size, place_in_box, AnnotatedFace, FaceBox, MeanShape, Point, Pose3D, Shape,
    VisibilityVector, NUM_LANDMARKS,
};
use crate::regressor::{predict, RegressorOutput, RegressorParams};
use crate::render::{render, splat_gaussian, RenderConfig, RenderedInput};

/// Output of one cascade step, in image pixels.
pub type StageStep = RegressorOutput;

/// Supplies the per-stage prediction function.
pub trait CascadeBackend {
    /// Global correction for stages 1..=4 from the current shape and the
    /// visibility used to gate its rendering.
    fn global_step(
        &self,
        stage: u8,
        image: &Raster,
        face_box: &FaceBox,
        current: &Shape,
        render_vis: &VisibilityVector,
    ) -> Result<StageStep>;

    /// Local refinement of stage 5. Returns the corrected shape and the
    /// per-point visibilities; corrections for points below the gate are
    /// zero.
    fn local_step(
        &self,
        image: &Raster,
        face_box: &FaceBox,
        current: &Shape,
    ) -> Result<(Shape, VisibilityVector)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeResult {
    pub shape: Shape,
    pub visibility: VisibilityVector,
    /// Pose predicted by the last global stage.
    pub pose: Pose3D,
    /// `y_0` followed by the shape after each of the five stages. With the
    /// local stage disabled the last entry repeats the stage-4 shape.
    pub trajectory: Vec<Shape>,
}

/// Run all stages from the mean shape placed in `face_box`.
pub fn run_cascade(
    backend: &dyn CascadeBackend,
    image: &Raster,
    face_box: &FaceBox,
    mean_shape: &MeanShape,
    stage5: bool,
) -> Result<CascadeResult> {
    run_cascade_from(backend, image, face_box, place_in_box(mean_shape, face_box), stage5)
}

/// Run all stages from an explicit initial shape.
pub fn run_cascade_from(
    backend: &dyn CascadeBackend,
    image: &Raster,
    face_box: &FaceBox,
    init: Shape,
    stage5: bool,
) -> Result<CascadeResult> {
    let mut current = init;
    let mut trajectory = vec![current.clone()];
    let mut render_vis = VisibilityVector::all_visible();
    let mut visibility = VisibilityVector::all_visible();
    let mut pose = Pose3D::default();
    for stage in 1..NUM_STAGES as u8 {
        let step = backend.global_step(stage, image, face_box, &current, &render_vis)?;
        current = step.corrections.apply(&current);
        if !current.is_complete() {
            return Err(KeplerError::NonFinite("cascade shape"));
        }
        visibility = step.visibility;
        pose = step.pose;
        // Later stages only draw landmarks the previous stage found visible.
        if stage >= 2 {
            render_vis = visibility.clamped();
        }
        trajectory.push(current.clone());
    }
    if stage5 {
        let (shape, vis) = backend.local_step(image, face_box, &current)?;
        current = shape;
        visibility = vis;
    }
    trajectory.push(current.clone());
    Ok(CascadeResult {
        shape: current,
        visibility,
        pose,
        trajectory,
    })
}

/// Ideal backend moving each visible point towards ground truth by at most
/// `bound` pixels per stage.
pub struct OracleBackend<'a> {
    pub truth: &'a AnnotatedFace,
    pub bound: Option<f64>,
    pub tau: f64,
}

impl OracleBackend<'_> {
    fn step(&self, current: &Shape) -> Result<StageStep> {
        crate::regressor::oracle_predict(self.truth, current, self.bound)
    }
}

impl CascadeBackend for OracleBackend<'_> {
    fn global_step(
        &self,
        _stage: u8,
        _image: &Raster,
        _face_box: &FaceBox,
        current: &Shape,
        _render_vis: &VisibilityVector,
    ) -> Result<StageStep> {
        self.step(current)
    }

    fn local_step(
        &self,
        _image: &Raster,
        _face_box: &FaceBox,
        current: &Shape,
    ) -> Result<(Shape, VisibilityVector)> {
        let step = self.step(current)?;
        let gated = gate_corrections(&step.corrections, &step.visibility, self.tau);
        Ok((gated.apply(current), step.visibility))
    }
}

/// Backend evaluating the trained networks of a [`CascadeModel`].
pub struct NetworkBackend<'a> {
    pub model: &'a CascadeModel,
}

impl NetworkBackend<'_> {
    pub fn frame(&self, face_box: &FaceBox) -> Frame {
        Frame::for_box(face_box, self.model.context, self.model.render_cfg.width)
    }
}

/// Network input for a global stage: the face window plus one heatmap per
/// gated landmark, all in frame pixels.
pub fn global_input(
    frame: &Frame,
    window: &Raster,
    current: &Shape,
    render_vis: &VisibilityVector,
    cfg: &RenderConfig,
) -> Result<RenderedInput> {
    render(window, &frame.shape_to_frame(current), render_vis, cfg)
}

impl CascadeBackend for NetworkBackend<'_> {
    fn global_step(
        &self,
        stage: u8,
        image: &Raster,
        face_box: &FaceBox,
        current: &Shape,
        render_vis: &VisibilityVector,
    ) -> Result<StageStep> {
        let params = self.model.stage(stage)?;
        let frame = self.frame(face_box);
        let window = frame.extract(image);
        let input = global_input(&frame, &window, current, render_vis, &self.model.render_cfg)?;
        let out = predict(params, &input)?;
        let mut corrections = frame.corrections_to_image(&out.corrections);
        if let Some(bound) = self.model.policy(stage).bound {
            corrections = clip_corrections(&corrections, bound);
        }
        Ok(StageStep {
            corrections,
            visibility: out.visibility,
            pose: out.pose,
        })
    }

    fn local_step(
        &self,
        image: &Raster,
        face_box: &FaceBox,
        current: &Shape,
    ) -> Result<(Shape, VisibilityVector)> {
        let params = self.model.stage(5)?;
        let side = self.model.patch.side(face_size(face_box));
        run_local_stage(image, current, params, side, &self.model.patch, self.model.policy(5).tau)
    }
}

/// Limit every correction to length `bound`.
pub fn clip_corrections(c: &CorrectionVector, bound: f64) -> CorrectionVector {
    let deltas = c
        .deltas()
        .iter()
        .map(|&d| {
            let n = d.norm();
            if n > bound {
                d * (bound / n)
            } else {
                d
            }
        })
        .collect();
    CorrectionVector::new(deltas).expect("clipping keeps the landmark count")
}

/// Zero the correction of every point whose clamped visibility is below `tau`.
pub fn gate_corrections(c: &CorrectionVector, vis: &VisibilityVector, tau: f64) -> CorrectionVector {
    let mut out = c.clone();
    for i in 0..NUM_LANDMARKS {
        if !vis.passes(i, tau) {
            out.set(i, Point::ZERO);
        }
    }
    out
}

/// One `W x W` crop per landmark, centred at the current estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub frames: Vec<Frame>,
    pub inputs: Vec<RenderedInput>,
    /// Position of the current estimate inside each patch, in patch pixels.
    pub offsets: Vec<Point>,
    /// False when the crop extends past the image border (zero padded).
    pub valid: Vec<bool>,
}

/// Network input of one patch: RGB plus a Gaussian at the patch centre.
pub fn patch_input(image: &Raster, frame: &Frame, cfg: &PatchConfig) -> RenderedInput {
    let res = frame.res;
    let window = frame.extract(image);
    let mut input = RenderedInput::zeros(4, res, res);
    let plane = res * res;
    for c in 0..3 {
        input.data[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(window.channel(c))
            .for_each(|(o, &v)| *o = v.clamp(0.0, 1.0));
    }
    let mid = (res as f64 - 1.0) / 2.0;
    splat_gaussian(input.channel_mut(3), res, res, mid, mid, cfg.sigma, 1.0);
    input
}

pub fn extract_patches(image: &Raster, shape: &Shape, side: f64, cfg: &PatchConfig) -> PatchSet {
    let mut set = PatchSet {
        frames: Vec::with_capacity(NUM_LANDMARKS),
        inputs: Vec::with_capacity(NUM_LANDMARKS),
        offsets: Vec::with_capacity(NUM_LANDMARKS),
        valid: Vec::with_capacity(NUM_LANDMARKS),
    };
    for p in shape.iter() {
        let frame = Frame::centered(*p, side, cfg.resolution);
        let (x0, y0) = (frame.origin.x, frame.origin.y);
        set.valid.push(
            x0 >= -0.5
                && y0 >= -0.5
                && x0 + side <= image.width as f64 - 0.5
                && y0 + side <= image.height as f64 - 0.5,
        );
        set.inputs.push(patch_input(image, &frame, cfg));
        set.offsets.push(frame.to_frame(*p));
        set.frames.push(frame);
    }
    set
}

/// Local corrections: each landmark's patch is scored by the patch network,
/// whose output slot `i` belongs to landmark `i`. Corrections are applied
/// only where the predicted visibility passes `tau`.
pub fn run_local_stage(
    image: &Raster,
    shape: &Shape,
    params: &RegressorParams,
    side: f64,
    cfg: &PatchConfig,
    tau: f64,
) -> Result<(Shape, VisibilityVector)> {
    if !(side > 0.0) {
        return Err(KeplerError::InvalidConfig("patch side must be positive".into()));
    }
    let patches = extract_patches(image, shape, side, cfg);
    let mut deltas = vec![Point::ZERO; NUM_LANDMARKS];
    let mut vis = vec![0.0; NUM_LANDMARKS];
    for i in 0..NUM_LANDMARKS {
        let out = predict(params, &patches.inputs[i])?;
        let d = out.corrections.get(i);
        deltas[i] = Point::new(d.x * patches.frames[i].step, d.y * patches.frames[i].step);
        vis[i] = out.visibility.get(i);
    }
    let vis = VisibilityVector::new(vis)?;
    let gated = gate_corrections(&CorrectionVector::new(deltas)?, &vis, tau);
    Ok((gated.apply(shape), vis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NUM_LANDMARKS;
    use crate::learning::bounded_correction;
    use crate::regressor::{NetSpec, PATCH_OUTPUTS};

    fn truth() -> AnnotatedFace {
        AnnotatedFace {
            image_path: String::new(),
            face_box: FaceBox::new(20.0, 20.0, 60.0, 60.0).unwrap(),
            shape: Shape::from_fn(|i| Point::new(25.0 + 2.5 * i as f64, 30.0 + (i % 5) as f64 * 9.0)),
            visibility: VisibilityVector::all_visible(),
            pose: Pose3D::new(10.0, -5.0, 3.0),
            split_tag: String::new(),
        }
    }

    #[test]
    fn unbounded_oracle_lands_after_one_stage() {
        let gt = truth();
        let oracle = OracleBackend {
            truth: &gt,
            bound: None,
            tau: 0.03,
        };
        let img = Raster::new(100, 100);
        let mean = MeanShape::new(vec![Point::new(0.5, 0.5); NUM_LANDMARKS]).unwrap();
        let r = run_cascade(&oracle, &img, &gt.face_box, &mean, true).unwrap();
        assert_eq!(r.trajectory.len(), 6);
        for (a, b) in r.trajectory[1].iter().zip(gt.shape.iter()) {
            assert!((*a - *b).norm() < 1e-12);
        }
        assert_eq!(r.pose, gt.pose);
    }

    #[test]
    fn zero_patch_net_leaves_shape_unchanged() {
        let spec = NetSpec::channeled(4, 16, 16, PATCH_OUTPUTS, 1).unwrap();
        let params = RegressorParams::init(&spec, 5, 1).unwrap();
        let img = Raster::new(50, 50);
        let shape = Shape::from_fn(|i| Point::new(i as f64 * 2.0, 49.0 - i as f64));
        let cfg = PatchConfig::default();
        let (out, vis) = run_local_stage(&img, &shape, &params, 12.0, &cfg, 0.03).unwrap();
        assert_eq!(out, shape);
        assert_eq!(vis.visible_count(), 0);
    }

    #[test]
    fn corner_patches_are_padded() {
        let mut img = Raster::new(40, 40);
        for y in 0..40 {
            for x in 0..40 {
                img.set(1, x, y, 1.0);
            }
        }
        let shape = Shape::from_fn(|_| Point::new(0.0, 0.0));
        let set = extract_patches(&img, &shape, 10.0, &PatchConfig::default());
        assert!(!set.valid[0]);
        let input = &set.inputs[0];
        assert_eq!(input.at(1, 0, 0), 0.0);
        assert!(input.at(1, 15, 15) > 0.9);
        assert!((set.offsets[0].x - 7.5).abs() < 1e-12);
    }

    #[test]
    fn gating_zeroes_low_visibility() {
        let c = CorrectionVector::new(vec![Point::new(1.0, -1.0); NUM_LANDMARKS]).unwrap();
        let mut v = vec![0.5; NUM_LANDMARKS];
        v[3] = 0.029;
        v[4] = -2.0;
        let g = gate_corrections(&c, &VisibilityVector::new(v).unwrap(), 0.03);
        assert_eq!(g.get(3), Point::ZERO);
        assert_eq!(g.get(4), Point::ZERO);
        assert_eq!(g.get(5), Point::new(1.0, -1.0));
    }

    #[test]
    fn bounded_oracle_step_length() {
        let gt = truth();
        let mut cur = gt.shape.clone();
        cur.set(0, gt.shape.point(0) + Point::new(30.0, 40.0));
        let c = bounded_correction(&gt.shape, &cur, 20.0, &gt.visibility).unwrap();
        assert!((c.get(0).norm() - 20.0).abs() < 1e-12);
    }
}
