//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria 5, 6, 7 and 10 train the full default cascade twice on 2,000
//! synthetic faces through the command-line entry point, which takes a
//! while. Criteria 9 (AFW count) and 11 read real annotations from the paths
//! in `KEPLER_AFW_ANNOTATIONS` and `KEPLER_AFLW_ANNOTATIONS` and are skipped
//! when those are unset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use kepler::cascade::{
    run_cascade, run_cascade_from, run_local_stage, train_cascade, CascadeConfig, CascadeModel, NetworkBackend,
    OracleBackend, StageReport,
};
use kepler::cli::run_command;
use kepler::data::{
    filter_afw, generate_synthetic, load_annotations, load_samples, make_all_variants, split_pifa, FaceSample,
    SyntheticFaceSpec,
};
use kepler::eval::{ced_curve, default_thresholds, median, nme, pose_metrics, AccuracyMode};
use kepler::learning::{bounded_correction, variant_loss_batch};
use kepler::model::{face_size, AnnotatedFace, FaceBox, Point, Pose3D, Shape, VisibilityVector, NUM_LANDMARKS};
use kepler::regressor::{
    gradient_check_report, random_check_case, GradCheckOptions, NetSpec, GLOBAL_OUTPUTS, PATCH_OUTPUTS,
};
use kepler::learning::StagePolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn random_shape(rng: &mut ChaCha8Rng, span: f64) -> Shape {
    Shape::from_fn(|_| Point::new(rng.gen_range(-span..span), rng.gen_range(-span..span)))
}

fn random_visibility(rng: &mut ChaCha8Rng) -> VisibilityVector {
    VisibilityVector::new((0..NUM_LANDMARKS).map(|_| if rng.gen_bool(0.8) { 1.0 } else { 0.0 }).collect()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut longest: f64 = 0.0;
    let mut overshoot = 0usize;
    for _ in 0..100_000 {
        let g = random_shape(&mut rng, 300.0);
        let y = random_shape(&mut rng, 300.0);
        let bound = rng.gen_range(0.01..200.0);
        let vis = random_visibility(&mut rng);
        let c = bounded_correction(&g, &y, bound, &vis).unwrap();
        for i in 0..NUM_LANDMARKS {
            let (mut ex, mut ey) = (0.0, 0.0);
            if vis.get(i) != 0.0 {
                let dx = g.point(i).x - y.point(i).x;
                let dy = g.point(i).y - y.point(i).y;
                let len = (dx * dx + dy * dy).sqrt();
                let s = if len > bound { bound / len } else { 1.0 };
                ex = dx * s;
                ey = dy * s;
            }
            let d = c.get(i);
            worst = worst.max((d.x - ex).abs()).max((d.y - ey).abs());
            let n = d.norm();
            longest = longest.max(n / bound);
            if n > bound {
                overshoot += 1;
            }
        }
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-9 && overshoot == 0 && t < Duration::from_secs(5),
        format!("max deviation {worst:.2e}, max |d|/L {longest}, {overshoot} overshoots, {:.2} s", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    for k in 0..100 {
        let n = if k % 2 == 0 { 1 } else { 8 };
        let gamma = if k % 5 == 0 { 0.0 } else { rng.gen_range(0.0..2.0) };
        let preds: Vec<Shape> = (0..n).map(|_| random_shape(&mut rng, 5.0)).collect();
        let truths: Vec<Shape> = (0..n).map(|_| random_shape(&mut rng, 5.0)).collect();
        let vis: Vec<VisibilityVector> = (0..n)
            .map(|_| VisibilityVector::new((0..NUM_LANDMARKS).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let loss = |preds: &[Shape]| {
            let batch: Vec<_> = (0..n).map(|j| (&preds[j], &truths[j], &vis[j])).collect();
            variant_loss_batch(&batch, gamma)
        };
        let (_, grads) = loss(&preds);
        for j in 0..n {
            for i in 0..NUM_LANDMARKS {
                for axis in 0..2 {
                    let p = preds[j].point(i);
                    let g = truths[j].point(i);
                    let d = if axis == 0 { p.x - g.x } else { p.y - g.y };
                    if d.abs() <= 1e-6 {
                        continue;
                    }
                    // Stay on one side of the kink so the loss is quadratic over the stencil.
                    let h = (0.5 * d.abs()).min(1e-3);
                    let mut moved = preds.clone();
                    let shift = |m: &mut Vec<Shape>, by: f64| {
                        let q = if axis == 0 { Point::new(p.x + by, p.y) } else { Point::new(p.x, p.y + by) };
                        m[j].set(i, q);
                    };
                    shift(&mut moved, h);
                    let plus = loss(&moved).0;
                    shift(&mut moved, -h);
                    let minus = loss(&moved).0;
                    let numeric = (plus - minus) / (2.0 * h);
                    let a = if axis == 0 { grads[j][i].x } else { grads[j][i].y };
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
                    worst = worst.max(err);
                    compared += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-5, format!("{compared} coordinates, max relative error {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for stage in 1..=5u8 {
        let policy = StagePolicy::for_stage(stage);
        let spec = NetSpec::tiny(if policy.patch_mode { PATCH_OUTPUTS } else { GLOBAL_OUTPUTS });
        for seed in 0..3 {
            let (params, input, targets) = random_check_case(&spec, stage, seed).unwrap();
            let r = gradient_check_report(&params, &input, &targets, &policy, &GradCheckOptions::default()).unwrap();
            worst = worst.max(r.max_relative_error);
            checked += r.checked;
        }
    }
    let spec = NetSpec::tiny(GLOBAL_OUTPUTS);
    let (params, input, targets) = random_check_case(&spec, 3, 7).unwrap();
    let slot = params.slots().into_iter().find(|s| s.name == "trunk1.weight").unwrap();
    let opts = GradCheckOptions {
        fault: Some(slot.offset + 3),
        ..GradCheckOptions::default()
    };
    let faulty = gradient_check_report(&params, &input, &targets, &StagePolicy::for_stage(3), &opts)
        .unwrap()
        .max_relative_error;
    verdict(
        worst <= 1e-3 && faulty > 1e-2,
        format!("{checked} parameters, max relative error {worst:.2e}; fault-injected {faulty:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let faces = generate_synthetic(100, &SyntheticFaceSpec::default(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for s in &faces {
        let gt = &s.face;
        for k in 0..5 {
            let start = Shape::from_fn(|i| {
                let g = gt.shape.point(i);
                let base = if g.is_absent() { gt.face_box.center() } else { g };
                // The first start puts every point at exactly 100 px.
                let r = if k == 0 { 100.0 } else { rng.gen_range(0.0..=100.0) };
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                Point::new(base.x + r * a.cos(), base.y + r * a.sin())
            });
            let backend = OracleBackend {
                truth: gt,
                bound: Some(20.0),
                tau: 0.03,
            };
            let r = run_cascade_from(&backend, &s.image, &gt.face_box, start, true).unwrap();
            let e = nme(&r.shape, &gt.shape, &gt.visibility, face_size(&gt.face_box)).unwrap();
            worst = worst.max(e);
            runs += 1;
        }
    }
    verdict(worst <= 1e-9, format!("{runs} initialisations, max final NME {worst:.2e}"))
}

fn criterion_8() -> Outcome {
    let faces = generate_synthetic(20, &SyntheticFaceSpec::default(), 8);
    let self_nme = faces
        .iter()
        .map(|s| nme(&s.face.shape, &s.face.shape, &s.face.visibility, face_size(&s.face.face_box)).unwrap())
        .fold(0.0f64, f64::max);
    let poses: Vec<Pose3D> = faces.iter().map(|s| s.face.pose).collect();
    let acc = pose_metrics(&poses, &poses, AccuracyMode::AllAxes).unwrap().accuracy_15;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut thresholds = default_thresholds();
    thresholds.push(f64::INFINITY);
    let mut at_inf_ok = true;
    let mut monotone = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.3)).collect();
        let curve = ced_curve(&errors, &thresholds);
        monotone &= curve.windows(2).all(|w| w[0].1 <= w[1].1);
        monotone &= curve.iter().all(|c| (0.0..=1.0).contains(&c.1));
        at_inf_ok &= curve.last().unwrap().1 == 1.0;
    }
    verdict(
        self_nme == 0.0 && acc == 1.0 && at_inf_ok && monotone,
        format!("NME(gt, gt) {self_nme}, pose accuracy {:.0}%, CED(inf) = 1: {at_inf_ok}, monotone: {monotone}", 100.0 * acc),
    )
}

fn criterion_9() -> Outcome {
    let shape = Shape::from_fn(|i| Point::new(10.0 + i as f64, 20.0));
    let face_box = FaceBox::new(0.0, 0.0, 50.0, 50.0).unwrap();
    let records: Vec<AnnotatedFace> = (0..24_386)
        .map(|i| AnnotatedFace {
            image_path: format!("{i}.png"),
            face_box,
            shape: shape.clone(),
            visibility: VisibilityVector::all_visible(),
            pose: Pose3D::new((i % 181) as f64 - 90.0, 0.0, 0.0),
            split_tag: String::new(),
        })
        .collect();
    let split = split_pifa(&records, 0, 1000).unwrap();
    let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
    all.sort_unstable();
    all.dedup();
    let split_ok = split.train.len() == 23_386 && split.test.len() == 1000 && all.len() == records.len();

    let samples = generate_synthetic(4, &SyntheticFaceSpec::default(), 9);
    let variants = make_all_variants(&samples, false, 0.25).unwrap();
    let variants_ok = variants.len() == 8 * samples.len();
    let mut detail = format!(
        "split {}/{}, {} variants of {} records",
        split.train.len(),
        split.test.len(),
        variants.len(),
        samples.len()
    );
    let afw = match std::env::var_os("KEPLER_AFW_ANNOTATIONS") {
        Some(p) => match load_annotations(Path::new(&p)) {
            Ok(r) => {
                let kept = filter_afw(&r).len();
                detail += &format!(", AFW kept {kept} of {}", r.len());
                Some(kept == 341)
            }
            Err(e) => {
                detail += &format!(", AFW annotations unreadable: {e}");
                Some(false)
            }
        },
        None => {
            detail += ", AFW count skipped (KEPLER_AFW_ANNOTATIONS unset)";
            None
        }
    };
    verdict(split_ok && variants_ok && afw.unwrap_or(true), detail)
}

/// Everything the synthetic end-to-end criteria share.
struct Synthetic {
    root: PathBuf,
    model: CascadeModel,
    reports: Vec<StageReport>,
    test: Vec<FaceSample>,
    train_time: Duration,
    second: Result<(PathBuf, PathBuf), String>,
}

fn kepler(args: &[&str]) -> i32 {
    let mut argv = vec!["kepler"];
    argv.extend_from_slice(args);
    run_command(argv)
}

fn write_config(root: &Path, run: &str) -> PathBuf {
    let path = root.join(format!("{run}.toml"));
    let text = format!(
        "seed = 2024\n[paths]\ntrain = \"{0}/data/train.jsonl\"\ntest = \"{0}/data/test.jsonl\"\n\
         model = \"{0}/{run}/model\"\noutput = \"{0}/{run}/out\"\n",
        root.display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn train_run(root: &Path, run: &str) -> std::result::Result<Duration, String> {
    let cfg = write_config(root, run);
    let c = cfg.to_str().unwrap();
    let start = Instant::now();
    if kepler(&["--config", c, "train"]) != 0 {
        return Err(format!("{run}: train failed"));
    }
    let t = start.elapsed();
    for cmd in ["infer", "eval"] {
        if kepler(&["--config", c, cmd]) != 0 {
            return Err(format!("{run}: {cmd} failed"));
        }
    }
    Ok(t)
}

fn synthetic_setup() -> std::result::Result<Synthetic, String> {
    let root = std::env::temp_dir().join(format!("kepler-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).map_err(|e| e.to_string())?;
    let cfg = write_config(&root, "a");
    let data = root.join("data");
    if kepler(&["--config", cfg.to_str().unwrap(), "synth", "--out", data.to_str().unwrap()]) != 0 {
        return Err("synth failed".into());
    }
    eprintln!("training run a on 2,000 synthetic faces");
    let train_time = train_run(&root, "a")?;
    eprintln!("training run b with the same configuration");
    let second = train_run(&root, "b").map(|_| (root.join("b/model"), root.join("b/out/eval")));
    let model = CascadeModel::load(&root.join("a/model")).map_err(|e| e.to_string())?;
    let reports: Vec<StageReport> = serde_json::from_str(
        &fs::read_to_string(root.join("a/out/training_report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let test = load_samples(&data.join("test.jsonl")).map_err(|e| e.to_string())?;
    Ok(Synthetic {
        root,
        model,
        reports,
        test,
        train_time,
        second,
    })
}

fn criterion_5(s: &Synthetic) -> Outcome {
    let backend = NetworkBackend { model: &s.model };
    let mut per_stage = vec![Vec::new(); 5];
    for t in &s.test {
        let f = &t.face;
        let r = run_cascade(&backend, &t.image, &f.face_box, &s.model.mean_shape, false).unwrap();
        for (k, shape) in r.trajectory.iter().take(5).enumerate() {
            per_stage[k].push(nme(shape, &f.shape, &f.visibility, face_size(&f.face_box)).unwrap());
        }
    }
    let medians: Vec<f64> = per_stage.iter().map(|e| median(e)).collect();
    let halved = medians[4] <= 0.5 * medians[0];
    let nonincreasing = medians[1..].windows(2).all(|w| w[1] <= w[0]);
    let fast = s.train_time <= Duration::from_secs(30 * 60);
    let list: Vec<String> = medians.iter().map(|m| format!("{m:.4}")).collect();
    verdict(
        halved && nonincreasing && fast,
        format!(
            "{} test faces, median NME mean-shape..stage 4: {}; training {:.0} s",
            s.test.len(),
            list.join(" "),
            s.train_time.as_secs_f64()
        ),
    )
}

fn criterion_6(s: &Synthetic) -> Outcome {
    match s.reports.iter().find(|r| r.stage == 4).and_then(|r| r.mining.clone()) {
        Some(m) => verdict(
            m.hard_fraction_after < m.hard_fraction_before,
            format!(
                "threshold {:.4}: hard fraction {:.3} after stage 3, {:.3} after stage 4",
                m.delta, m.hard_fraction_before, m.hard_fraction_after
            ),
        ),
        None => Fail("stage 4 reported no mining summary".into()),
    }
}

fn criterion_7(s: &Synthetic) -> Outcome {
    let Ok(params) = s.model.stage(5) else {
        return Fail("bundle has no patch stage".into());
    };
    let tau = s.model.policy(5).tau;
    let backend = NetworkBackend { model: &s.model };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut gated = 0usize;
    let mut gate_violations = 0usize;
    let mut forced_moved = 0usize;
    let mut blocked = params.clone();
    for b in &mut blocked.tensor_mut("head.bias").unwrap()[2 * NUM_LANDMARKS..3 * NUM_LANDMARKS] {
        *b = -10.0;
    }
    for t in &s.test {
        let f = &t.face;
        let size = face_size(&f.face_box);
        let side = s.model.patch.side(size);
        let stage4 = run_cascade(&backend, &t.image, &f.face_box, &s.model.mean_shape, false).unwrap().trajectory[4].clone();
        let perturbed = stage4.map(|p| {
            let r = 0.25 * side * rng.gen_range(0.0f64..1.0).sqrt();
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Point::new(p.x + r * a.cos(), p.y + r * a.sin())
        });
        let (refined, vis) = run_local_stage(&t.image, &perturbed, params, side, &s.model.patch, tau).unwrap();
        before.push(nme(&perturbed, &f.shape, &f.visibility, size).unwrap());
        after.push(nme(&refined, &f.shape, &f.visibility, size).unwrap());
        for i in 0..NUM_LANDMARKS {
            if vis.get(i) < tau {
                gated += 1;
                if refined.point(i) != perturbed.point(i) {
                    gate_violations += 1;
                }
            }
        }
        let (held, _) = run_local_stage(&t.image, &perturbed, &blocked, side, &s.model.patch, tau).unwrap();
        forced_moved += held.iter().zip(perturbed.iter()).filter(|(a, b)| a != b).count();
    }
    let (mb, ma) = (median(&before), median(&after));
    verdict(
        ma < mb && gate_violations == 0 && forced_moved == 0,
        format!(
            "median NME {mb:.4} -> {ma:.4}; {gated} low-visibility points, {gate_violations} moved; \
             {forced_moved} points moved with visibility forced below the threshold"
        ),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

fn criterion_10(s: &Synthetic) -> Outcome {
    let (model_b, eval_b) = match &s.second {
        Ok(p) => p,
        Err(e) => return Fail(e.clone()),
    };
    let (ma, mb) = (tree(&s.root.join("a/model")), tree(model_b));
    let (ea, eb) = (tree(&s.root.join("a/out/eval")), tree(eval_b));
    let differing = |a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>| {
        a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).count()
    };
    let (dm, de) = (differing(&ma, &mb), differing(&ea, &eb));
    verdict(
        !ma.is_empty() && !ea.is_empty() && dm == 0 && de == 0,
        format!("bundle: {} files, {dm} differ; eval report: {} files, {de} differ", ma.len(), ea.len()),
    )
}

fn protocol_row(name: &str, errors: &[f64]) -> String {
    let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    format!("{name:<24}{:>8}{:>12.3}{:>12.3}", errors.len(), 100.0 * mean, 100.0 * median(errors))
}

fn criterion_11() -> Outcome {
    let Some(path) = std::env::var_os("KEPLER_AFLW_ANNOTATIONS") else {
        return Skip("optional; KEPLER_AFLW_ANNOTATIONS unset".into());
    };
    let run = || -> kepler::Result<String> {
        let samples = load_samples(Path::new(&path))?;
        let faces: Vec<AnnotatedFace> = samples.iter().map(|s| s.face.clone()).collect();
        let split = split_pifa(&faces, 0, 1000)?;
        let train: Vec<FaceSample> = split.train.iter().map(|&i| samples[i].clone()).collect();
        let test: Vec<FaceSample> = split.test.iter().map(|&i| samples[i].clone()).collect();
        let model = train_cascade(&train, &CascadeConfig::default())?.model;
        let backend = NetworkBackend { model: &model };
        let score = |set: &[FaceSample]| -> kepler::Result<Vec<f64>> {
            set.iter()
                .map(|s| {
                    let r = run_cascade(&backend, &s.image, &s.face.face_box, &model.mean_shape, true)?;
                    nme(&r.shape, &s.face.shape, &s.face.visibility, face_size(&s.face.face_box))
                })
                .collect()
        };
        let full = score(&test)?;
        let grouped: Vec<f64> = full
            .iter()
            .zip(&split.test_groups)
            .filter(|(_, g)| g.is_some())
            .map(|(e, _)| *e)
            .collect();
        let variants = score(&make_all_variants(&test, false, 0.25)?)?;
        let mut table = format!("\n{:<24}{:>8}{:>12}{:>12}\n", "protocol", "faces", "mean NME%", "median NME%");
        for (name, e) in [("I pifa (yaw groups)", &grouped), ("II full test", &full), ("III all variants", &variants)] {
            table += &protocol_row(name, e);
            table.push('\n');
        }
        Ok(table)
    };
    match run() {
        Ok(table) => Pass(format!("protocols I-III ran end to end{table}")),
        Err(e) => Fail(e.to_string()),
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Fail(format!("panicked: {msg}"))
    })
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        // Nothing to enumerate for test harness listings.
        return;
    }
    let mut results: Vec<(u8, Outcome)> = Vec::new();
    let mut report = |n: u8, o: Outcome| {
        let (tag, detail) = match &o {
            Pass(d) => ("PASS", d),
            Fail(d) => ("FAIL", d),
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {n}: {tag}: {detail}");
        results.push((n, o));
    };
    report(1, guarded(criterion_1));
    report(2, guarded(criterion_2));
    report(3, guarded(criterion_3));
    report(4, guarded(criterion_4));
    let setup = catch_unwind(AssertUnwindSafe(synthetic_setup)).unwrap_or_else(|_| Err("setup panicked".into()));
    match &setup {
        Ok(s) => {
            report(5, guarded(|| criterion_5(s)));
            report(6, guarded(|| criterion_6(s)));
            report(7, guarded(|| criterion_7(s)));
        }
        Err(e) => {
            for n in 5..=7 {
                report(n, Fail(format!("synthetic training: {e}")));
            }
        }
    }
    report(8, guarded(criterion_8));
    report(9, guarded(criterion_9));
    match &setup {
        Ok(s) => report(10, guarded(|| criterion_10(s))),
        Err(e) => report(10, Fail(format!("synthetic training: {e}"))),
    }
    report(11, guarded(criterion_11));
    if let Ok(s) = &setup {
        let _ = fs::remove_dir_all(&s.root);
    }
    let failed = results.iter().filter(|(_, o)| matches!(o, Fail(_))).count();
    println!("acceptance: {} passed, {failed} failed, {} skipped", results.iter().filter(|(_, o)| matches!(o, Pass(_))).count(), results.iter().filter(|(_, o)| matches!(o, Skip(_))).count());
    if failed > 0 {
        std::process::exit(1);
    }
}
