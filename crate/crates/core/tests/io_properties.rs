mod common;

use std::path::Path;

use proptest::prelude::*;
use trolley_core::geometry::{wrap_angle, Pose2};
use trolley_core::io::{files, metrics_from_dir, metrics_from_rows, read_log, read_reference, write_run_outputs, LoadedScenario, LogRow};
use trolley_core::metrics::MetricSummary;
use trolley_core::planner::ReferencePath;
use trolley_core::sim::run;

const CORRIDOR: &str = r#"{
    "name": "corridor",
    "map": {"width": 48, "height": 20, "resolution": 0.25},
    "start": {"x": 2.0, "y": 2.5, "theta": 0.0},
    "goal": {"x": 6.0, "y": 3.0, "theta": 0.0},
    "pedestrians": [{"id": "walker", "knots": [[0.0, [8.0, 0.5]], [20.0, [8.0, 4.5]]]}],
    "seed": 5
}"#;

fn corridor() -> LoadedScenario {
    LoadedScenario::from_str(CORRIDOR, Path::new("corridor.json"), Path::new("."), &[]).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn assert_metrics_match(a: &MetricSummary, b: &MetricSummary, with_timing: bool) {
    for (x, y) in [
        (a.tracking_error.mean, b.tracking_error.mean),
        (a.tracking_error.std, b.tracking_error.std),
        (a.tracking_error.max, b.tracking_error.max),
        (a.distance_error_mm.mean, b.distance_error_mm.mean),
        (a.distance_error_mm.std, b.distance_error_mm.std),
        (a.distance_error_mm.max, b.distance_error_mm.max),
        (a.max_abs_bearing, b.max_abs_bearing),
        (a.avg_speed, b.avg_speed),
        (a.completion_time, b.completion_time),
    ] {
        assert!(close(x, y), "{x} vs {y}");
    }
    for (k, v) in &a.mode_durations {
        assert!(close(*v, b.mode_durations[k]), "{k}");
    }
    if with_timing {
        assert_eq!(a.solve_time_p50, b.solve_time_p50);
        assert_eq!(a.solve_time_p95, b.solve_time_p95);
    }
}

#[test]
fn outputs_round_trip_and_reproduce_the_summary() {
    let loaded = corridor();
    let result = run(&loaded.build().unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = write_run_outputs(dir.path(), &loaded, &result).unwrap();
    for f in [files::LOG, files::REFERENCE, files::TIMING, files::PLOT, files::SUMMARY] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let log = read_log(&dir.path().join(files::LOG)).unwrap();
    assert_eq!(log.header.scenario_sha256, loaded.hash());
    assert_eq!(log.header.seed, 5);
    assert_eq!(log.header.dt, 0.1);
    let expected: Vec<LogRow> = result.records.iter().map(LogRow::from).collect();
    assert_eq!(log.rows, expected);
    assert_eq!(read_reference(&dir.path().join(files::REFERENCE)).unwrap().waypoints, result.reference.waypoints);

    // the config echo rebuilds the same scenario
    let echoed = LoadedScenario::from_str(&log.header.config, Path::new("echo.json"), Path::new("."), &[]).unwrap();
    assert_eq!(echoed.hash(), loaded.hash());

    let recomputed = metrics_from_dir(dir.path()).unwrap();
    assert_metrics_match(&summary.metrics, &recomputed, true);
}

#[test]
fn same_seed_writes_identical_logs() {
    let loaded = corridor();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        write_run_outputs(d.path(), &loaded, &run(&loaded.build().unwrap()).unwrap()).unwrap();
    }
    for f in [files::LOG, files::REFERENCE, files::PLOT] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

fn transform_pose(p: Pose2, c: f64, s: f64, tx: f64, ty: f64, a: f64) -> Pose2 {
    Pose2::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, wrap_angle(p.theta + a).unwrap())
}

#[test]
fn metrics_are_invariant_under_rigid_motion() {
    let loaded = corridor();
    let result = run(&loaded.build().unwrap()).unwrap();
    let rows: Vec<LogRow> = result.records.iter().map(LogRow::from).collect();
    let base = metrics_from_rows(&rows, &result.reference, 0.1, &[]).unwrap();
    for (a, tx, ty) in [(0.7, 3.0, -2.0), (-2.4, -10.0, 4.5), (3.0, 0.0, 0.0)] {
        let (s, c) = f64::sin_cos(a);
        let moved: Vec<LogRow> = rows
            .iter()
            .map(|r| {
                let t = r.truth();
                let l = transform_pose(t.leader, c, s, tx, ty, a);
                let f = transform_pose(t.follower, c, s, tx, ty, a);
                LogRow {
                    x_leader: l.x,
                    y_leader: l.y,
                    theta_leader: l.theta,
                    x_follower: f.x,
                    y_follower: f.y,
                    theta_follower: f.theta,
                    ..*r
                }
            })
            .collect();
        let reference = ReferencePath::from_waypoints(
            result
                .reference
                .waypoints
                .iter()
                .map(|p| transform_pose(*p, c, s, tx, ty, a))
                .collect(),
        );
        let m = metrics_from_rows(&moved, &reference, 0.1, &[]).unwrap();
        assert!((m.tracking_error.mean - base.tracking_error.mean).abs() < 1e-9);
        assert!((m.tracking_error.max - base.tracking_error.max).abs() < 1e-9);
        assert!((m.avg_speed - base.avg_speed).abs() < 1e-9);
        assert_eq!(m.distance_error_mm, base.distance_error_mm);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_files_round_trip(
        seed in any::<u64>(),
        v in 0.05f64..2.0,
        sigma in 0.0f64..0.1,
        dt in 0.01f64..0.5,
        horizon in 1usize..40,
        knots in prop::collection::vec((0.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..5),
        lag in prop::option::of(0.01f64..1.0),
    ) {
        let mut t = 0.0;
        let knots: Vec<serde_json::Value> = knots
            .into_iter()
            .map(|(dt, x, y)| {
                t += dt + 0.01;
                serde_json::json!([t, [x, y]])
            })
            .collect();
        let doc = serde_json::json!({
            "name": "prop",
            "map": {"ascii": ["....", "..#.", "...."], "resolution": 0.5},
            "start": {"x": 0.25, "y": 0.25, "theta": 0.0},
            "goal": {"x": 1.75, "y": 1.25, "theta": 1.0},
            "seed": seed,
            "limits": {"v_max_leader": v},
            "noise": {"leader": [sigma, sigma, sigma]},
            "control": {"dt": dt, "horizon": horizon, "follower_lag": lag},
            "pedestrians": [{"id": "a", "knots": knots}],
            "reference": {"kind": "two_arc", "curvature": 0.3, "waypoints": 10}
        });
        let first = LoadedScenario::from_str(&doc.to_string(), Path::new("p.json"), Path::new("."), &[]).unwrap();
        let again = LoadedScenario::from_str(&first.canonical_json(), Path::new("p.json"), Path::new("."), &[]).unwrap();
        prop_assert_eq!(&first.file, &again.file);
        prop_assert_eq!(first.canonical_json(), again.canonical_json());
    }
}
