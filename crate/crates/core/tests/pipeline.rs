use streamtrack::metrics::{evaluate, EvalConfig};
use streamtrack::simulator::{apply_ego, generate, EgoTrajectory, ScenarioConfig};
use streamtrack::tracker::run_sequence;

fn noiseless() -> ScenarioConfig {
    ScenarioConfig {
        frames: 60,
        tau: 3,
        n_objects: 10,
        death_range: [59, 59],
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn noiseless_pipeline_is_perfect() {
    let s = generate(&noiseless()).unwrap();
    let tracks = run_sequence(&s.input).unwrap();
    let r = evaluate(&s.gt_tracks, &tracks, &EvalConfig::default()).unwrap();
    assert_eq!(r.ids, 0);
    assert_eq!(r.fm, 0);
    assert!((r.mota - 1.0).abs() < 1e-9, "{r:?}");
}

#[test]
fn noiseless_pipeline_with_ego_motion() {
    let s = generate(&noiseless()).unwrap();
    let s = apply_ego(
        &s,
        &EgoTrajectory {
            speed: 0.3,
            yaw_rate: 0.005,
        },
    );
    let tracks = run_sequence(&s.input).unwrap();
    let r = evaluate(&s.gt_tracks, &tracks, &EvalConfig::default()).unwrap();
    assert_eq!(r.ids, 0);
    assert!((r.mota - 1.0).abs() < 1e-9, "{r:?}");
}

#[test]
fn noisy_pipeline_runs() {
    let cfg = ScenarioConfig {
        sigma_center: 0.3,
        sigma_yaw: 0.05,
        drop_prob: 0.1,
        fp_rate: 1.0,
        co_noise: 0.1,
        birth_range: [0, 20],
        death_range: [30, 59],
        yaw_rate_range: [-0.02, 0.02],
        ..noiseless()
    };
    let s = generate(&cfg).unwrap();
    let tracks = run_sequence(&s.input).unwrap();
    let r = evaluate(&s.gt_tracks, &tracks, &EvalConfig::default()).unwrap();
    assert!(r.mota < 1.0 && r.mota > 0.0, "{r:?}");
}
