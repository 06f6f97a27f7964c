use kepler::cascade::{run_cascade, run_cascade_from, train_cascade, CascadeConfig, NetworkBackend, OracleBackend};
use kepler::data::{generate_synthetic, FaceSample, SyntheticFaceSpec};
use kepler::eval::nme;
use kepler::learning::StagePolicy;
use kepler::model::{face_size, place_in_box, Point};
use kepler::regressor::{random_check_case, train_stage, NetSpec, TrainOptions, GLOBAL_OUTPUTS};
use kepler::render::RenderConfig;

fn faces(n: usize, seed: u64) -> Vec<FaceSample> {
    generate_synthetic(n, &SyntheticFaceSpec::default(), seed)
}

fn small_config(epochs: usize) -> CascadeConfig {
    let mut cfg = CascadeConfig {
        render: RenderConfig {
            width: 32,
            height: 32,
            sigma: 1.0,
            ..CascadeConfig::default().render
        },
        train_stage5: false,
        seed: 3,
        ..CascadeConfig::default()
    };
    for p in &mut cfg.policies {
        p.epochs = epochs;
        p.finetune_epochs = 0;
        p.mining = p.mining && epochs > 0;
    }
    cfg
}

#[test]
fn single_sample_is_memorised() {
    let (init, input, targets) = random_check_case(&NetSpec::tiny(GLOBAL_OUTPUTS), 3, 11).unwrap();
    let policy = StagePolicy {
        lambda: 1.0,
        mu: 0.0,
        nu: 0.0,
        gamma: 0.0,
        epochs: 200,
        batch_size: 1,
        finetune_epochs: 0,
        mining: false,
        learning_rate: 0.01,
        ..StagePolicy::for_stage(3)
    };
    let data = vec![(input, targets)];
    let opts = TrainOptions {
        policy,
        init,
        seed: 1,
        partition: None,
        workers: 1,
        fit_standardization: false,
    };
    let r = train_stage(&data, &opts).unwrap();
    assert!(!r.reverted);
    assert!(r.final_loss * 10.0 <= r.initial_loss, "{} -> {}", r.initial_loss, r.final_loss);
}

#[test]
fn untrained_cascade_returns_the_mean_shape() {
    let train = faces(6, 1);
    let trained = train_cascade(&train, &small_config(0)).unwrap();
    let model = &trained.model;
    let backend = NetworkBackend { model };
    for s in &train {
        let r = run_cascade(&backend, &s.image, &s.face.face_box, &model.mean_shape, false).unwrap();
        let placed = place_in_box(&model.mean_shape, &s.face.face_box);
        for (a, b) in r.shape.iter().zip(placed.iter()) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }
}

#[test]
fn training_reduces_error_and_warm_start_helps_stage_two() {
    let train = faces(60, 2);
    let warm = train_cascade(&train, &small_config(2)).unwrap();
    let fresh = train_cascade(
        &train,
        &CascadeConfig {
            warm_start: false,
            ..small_config(2)
        },
    )
    .unwrap();
    let r = &warm.reports;
    assert_eq!(r.len(), 4);
    assert!(r.iter().all(|s| s.final_loss < s.initial_loss), "{r:#?}");
    assert!(r[3].median_nme_after < r[0].median_nme_before);
    for w in r.windows(2) {
        assert_eq!(w[0].median_nme_after, w[1].median_nme_before);
    }
    assert!(r[3].mining.is_some());
    assert!(
        warm.reports[1].initial_loss <= fresh.reports[1].initial_loss,
        "warm {} fresh {}",
        warm.reports[1].initial_loss,
        fresh.reports[1].initial_loss
    );
    // Stage 1 does not depend on the warm-start switch.
    assert_eq!(warm.reports[0], fresh.reports[0]);
}

#[test]
fn oracle_cascade_closes_a_ninety_pixel_gap() {
    for s in faces(5, 4) {
        let gt = &s.face;
        let c = gt.face_box.center();
        let start = gt.shape.map(|p| if p.is_absent() { c } else { Point::new(p.x + 90.0, p.y) });
        let backend = OracleBackend {
            truth: gt,
            bound: Some(20.0),
            tau: 0.5,
        };
        let r = run_cascade_from(&backend, &s.image, &gt.face_box, start, true).unwrap();
        let e = nme(&r.shape, &gt.shape, &gt.visibility, face_size(&gt.face_box)).unwrap();
        assert!(e <= 1e-9, "NME {e}");
        let e4 = nme(&r.trajectory[4], &gt.shape, &gt.visibility, face_size(&gt.face_box)).unwrap();
        assert!(e4 > 1e-3, "four bounded steps cannot cover 90 px");
    }
}
