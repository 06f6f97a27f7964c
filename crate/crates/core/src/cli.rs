//! The `kepler` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::cascade::{run_cascade, train_cascade, CascadeModel, NetworkBackend};
use crate::config::{require_file, ProtocolName, RunConfig};
use crate::data::{
    filter_afw, generate_synthetic, load_annotations, load_samples, make_all_variants, split_pifa,
    write_annotations, FaceSample,
};
use crate::error::{KeplerError, Result};
use crate::eval::{default_thresholds, emit_report, nme, pose_metrics, EvalReport};
use crate::model::{face_size, AnnotatedFace, Shape, VisibilityVector};
use crate::regressor::{
    gradient_check_report, random_check_case, GradCheckOptions, NetSpec, GLOBAL_OUTPUTS, PATCH_OUTPUTS,
};
use crate::learning::StagePolicy;

/// Gradient checks pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "kepler", version, about = "Facial keypoint, visibility and pose cascade")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Enables or disables the local correction stage.
    #[arg(long, global = true, value_enum)]
    pub stage5: Option<Switch>,
    /// Overrides the configured worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic face set: images plus train and test annotations.
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the cascade and write a model bundle.
    Train {
        /// Training annotations.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Bundle directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Predict landmarks, visibility and pose for every record.
    Infer {
        /// Annotations supplying images and face boxes.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Predicted annotations; defaults to `predictions.jsonl` in the output directory.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Ground-truth annotations.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write the rotated and mirrored variants of every record.
    Augment {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on small random networks.
    Gradcheck {
        /// Random instances per stage policy.
        #[arg(long, default_value_t = 3)]
        cases: usize,
        /// Corrupt one analytic gradient entry; the check is then expected to fail.
        #[arg(long)]
        fault: Option<usize>,
    },
    /// Split annotations by the configured protocol.
    Split {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Parse `argv`, run the command and return the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// The configuration after command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require_file(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.output = o.clone();
    }
    if let Some(s) = cli.stage5 {
        cfg.stage5 = s == Switch::On;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let out = cfg.paths.output.clone();
    let pick = |flag: &Option<PathBuf>, default: &Path| flag.clone().unwrap_or_else(|| default.to_path_buf());
    match &cli.command {
        Command::Synth { count } => synth(&cfg, count.unwrap_or(cfg.synthetic.count), &out),
        Command::Train { data, model } => train(&cfg, &pick(data, &cfg.paths.train), &pick(model, &cfg.paths.model), &out),
        Command::Infer { data, model } => infer(&cfg, &pick(data, &cfg.paths.test), &pick(model, &cfg.paths.model), &out),
        Command::Eval { predictions, data } => {
            let preds = pick(predictions, &out.join("predictions.jsonl"));
            evaluate(&cfg, &preds, &pick(data, &cfg.paths.test), &out)
        }
        Command::Augment { data } => augment(&cfg, &pick(data, &cfg.paths.train), &out),
        Command::Gradcheck { cases, fault } => gradcheck(*cases, *fault, cfg.seed),
        Command::Split { data } => split(&cfg, &pick(data, &cfg.paths.train), &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| KeplerError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| KeplerError::io(path, e))
}

fn save_samples(dir: &Path, name: &str, samples: &[FaceSample]) -> Result<()> {
    samples.par_iter().try_for_each(|s| {
        let path = dir.join(&s.face.image_path);
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        s.image.save_png(&path)
    })?;
    let faces: Vec<AnnotatedFace> = samples.iter().map(|s| s.face.clone()).collect();
    write_annotations(&dir.join(name), &faces)
}

fn synth(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    if count == 0 {
        return Err(KeplerError::InvalidConfig("synthetic count must be positive".into()));
    }
    create_dir(out)?;
    let samples = generate_synthetic(count, &cfg.synthetic.spec, cfg.seed);
    let n_test = (count as f64 * cfg.synthetic.test_fraction).round() as usize;
    let (train, test) = samples.split_at(count - n_test);
    save_samples(out, "train.jsonl", train)?;
    save_samples(out, "test.jsonl", test)?;
    log::info!("wrote {} training and {} test faces to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn train(cfg: &RunConfig, data: &Path, model_dir: &Path, out: &Path) -> Result<()> {
    let cascade_cfg = cfg.cascade_config()?;
    require_file(data, "training annotations")?;
    let samples = load_samples(data)?;
    log::info!("training on {} faces from {}", samples.len(), data.display());
    let trained = train_cascade(&samples, &cascade_cfg)?;

    // Write the bundle beside its destination first so a failure leaves no partial bundle.
    let staging = model_dir.with_extension("partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| KeplerError::io(&staging, e))?;
    }
    trained.model.save(&staging)?;
    if model_dir.exists() {
        fs::remove_dir_all(model_dir).map_err(|e| KeplerError::io(model_dir, e))?;
    }
    fs::rename(&staging, model_dir).map_err(|e| KeplerError::io(model_dir, e))?;

    create_dir(out)?;
    let report = serde_json::to_string_pretty(&trained.reports).map_err(|e| KeplerError::Format(e.to_string()))?;
    write_text(&out.join("training_report.json"), &(report + "\n"))?;
    log::info!("model bundle written to {}", model_dir.display());
    Ok(())
}

/// Predicted annotation of one face; a point counts as visible when its
/// clamped visibility reaches one half.
fn prediction_record(face: &AnnotatedFace, shape: Shape, vis: &VisibilityVector, pose: crate::model::Pose3D) -> Result<AnnotatedFace> {
    let flags: Vec<bool> = vis.clamped().values().iter().map(|&v| v >= 0.5).collect();
    Ok(AnnotatedFace {
        image_path: face.image_path.clone(),
        face_box: face.face_box,
        shape,
        visibility: VisibilityVector::from_flags(&flags)?,
        pose,
        split_tag: "prediction".into(),
    })
}

fn infer(cfg: &RunConfig, data: &Path, model_dir: &Path, out: &Path) -> Result<()> {
    require_file(&model_dir.join("manifest.toml"), "model bundle manifest")?;
    require_file(data, "annotations")?;
    let model = CascadeModel::load(model_dir)?;
    if cfg.stage5 && !model.has_stage5() {
        log::warn!("bundle has no local correction stage; running stages 1 to 4");
    }
    let stage5 = cfg.stage5 && model.has_stage5();
    let samples = load_samples(data)?;
    let backend = NetworkBackend { model: &model };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| KeplerError::InvalidConfig(format!("thread pool: {e}")))?;
    let preds: Vec<AnnotatedFace> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let r = run_cascade(&backend, &s.image, &s.face.face_box, &model.mean_shape, stage5)?;
                prediction_record(&s.face, r.shape, &r.visibility, r.pose)
            })
            .collect::<Result<_>>()
    })?;
    create_dir(out)?;
    let path = out.join("predictions.jsonl");
    write_annotations(&path, &preds)?;
    log::info!("wrote {} predictions to {}", preds.len(), path.display());
    Ok(())
}

fn evaluate(cfg: &RunConfig, preds_path: &Path, data: &Path, out: &Path) -> Result<()> {
    require_file(preds_path, "predictions")?;
    require_file(data, "ground-truth annotations")?;
    let preds = load_annotations(preds_path)?;
    let truth = load_annotations(data)?;
    if preds.len() != truth.len() {
        return Err(KeplerError::LengthMismatch(preds.len(), truth.len()));
    }
    let errors = preds
        .iter()
        .zip(&truth)
        .map(|(p, g)| nme(&p.shape, &g.shape, &g.visibility, face_size(&g.face_box)))
        .collect::<Result<Vec<_>>>()?;
    let pose = if truth.is_empty() {
        None
    } else {
        let p: Vec<_> = preds.iter().map(|f| f.pose).collect();
        let g: Vec<_> = truth.iter().map(|f| f.pose).collect();
        Some(pose_metrics(&p, &g, cfg.eval.accuracy_mode)?)
    };
    let name = match cfg.protocol.name {
        ProtocolName::Pifa => "pifa",
        ProtocolName::AllVariants => "all-variants",
        ProtocolName::Afw => "afw",
    };
    let report = EvalReport::new(name, errors, &default_thresholds(), pose);
    let dir = out.join("eval");
    emit_report(&report, &dir)?;
    log::info!(
        "{} faces: mean NME {:.6}, median NME {:.6}; report in {}",
        report.per_sample.len(),
        report.mean_nme,
        report.median_nme(),
        dir.display()
    );
    Ok(())
}

fn augment(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    require_file(data, "annotations")?;
    let samples = load_samples(data)?;
    let variants = make_all_variants(&samples, cfg.protocol.include_originals, cfg.protocol.margin)?;
    create_dir(out)?;
    save_samples(out, "variants.jsonl", &variants)?;
    log::info!("wrote {} variants of {} records to {}", variants.len(), samples.len(), out.display());
    Ok(())
}

fn split(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    require_file(data, "annotations")?;
    let records = load_annotations(data)?;
    match cfg.protocol.name {
        ProtocolName::Pifa => {
            let s = split_pifa(&records, cfg.seed, cfg.protocol.test_size)?;
            s.save(out)?;
            log::info!("{} training and {} test indices in {}", s.train.len(), s.test.len(), out.display());
        }
        ProtocolName::Afw => {
            let kept = filter_afw(&records);
            create_dir(out)?;
            write_annotations(&out.join("afw.jsonl"), &kept)?;
            log::info!("kept {} of {} records", kept.len(), records.len());
        }
        ProtocolName::AllVariants => {
            return Err(KeplerError::InvalidConfig(
                "the all-variants protocol is produced by the augment command".into(),
            ))
        }
    }
    Ok(())
}

fn gradcheck(cases: usize, fault: Option<usize>, seed: u64) -> Result<()> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for stage in 1..=5u8 {
        let policy = StagePolicy::for_stage(stage);
        let outputs = if policy.patch_mode { PATCH_OUTPUTS } else { GLOBAL_OUTPUTS };
        let spec = NetSpec::tiny(outputs);
        for k in 0..cases {
            let (params, input, targets) = random_check_case(&spec, stage, seed.wrapping_add(k as u64))?;
            let opts = GradCheckOptions {
                fault,
                ..GradCheckOptions::default()
            };
            let r = gradient_check_report(&params, &input, &targets, &policy, &opts)?;
            log::info!(
                "stage {stage} case {k}: max relative error {:.3e} over {} parameters ({} skipped)",
                r.max_relative_error,
                r.checked,
                r.skipped
            );
            worst = worst.max(r.max_relative_error);
            checked += r.checked;
        }
    }
    println!("gradcheck: {checked} parameters, max relative error {worst:.3e}");
    if worst > GRADCHECK_TOLERANCE {
        return Err(KeplerError::Degenerate(format!(
            "gradient check failed: relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}
