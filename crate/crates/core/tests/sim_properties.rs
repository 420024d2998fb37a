mod common;

use trolley_core::behavior::BehaviorMode;
use trolley_core::estimator::NoiseModel;
use trolley_core::geometry::Pose2;
use trolley_core::planner::OccupancyGrid;
use trolley_core::sim::{run, Outcome, Pedestrian, ReferenceSource, RunResult, Scenario, TickRecord};

fn corridor() -> Scenario {
    let map = OccupancyGrid::new(48, 20, 0.25, Pose2::origin(), vec![false; 960]).unwrap();
    let mut s = Scenario::new("corridor", map, Pose2::new(2.0, 2.5, 0.0), Pose2::new(7.0, 2.5, 0.0));
    s.reference = ReferenceSource::Waypoints {
        poses: (0..=40).map(|i| Pose2::new(2.0 + 0.25 * i as f64, 2.5, 0.0)).collect(),
    };
    s
}

fn quiet(mut s: Scenario) -> Scenario {
    s.noise = NoiseModel::zero();
    s
}

fn strip_timing(r: &RunResult) -> Vec<TickRecord> {
    r.records
        .iter()
        .map(|t| TickRecord { solve_time: 0.0, ..*t })
        .collect()
}

#[test]
fn noise_free_straight_run_tracks_the_line() {
    let r = run(&quiet(corridor())).unwrap();
    assert_eq!(r.outcome, Outcome::GoalReached);
    let worst = r.records.iter().map(|t| t.tracking_error).fold(0.0, f64::max);
    assert!(worst < 0.01, "max tracking error {worst}");
    assert!(r.records.iter().all(|t| t.mode == BehaviorMode::Navigation));
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let mut s = corridor();
    s.seed = 11;
    let a = run(&s).unwrap();
    let b = run(&s).unwrap();
    assert_eq!(strip_timing(&a), strip_timing(&b));
    s.seed = 12;
    let c = run(&s).unwrap();
    assert_ne!(strip_timing(&a), strip_timing(&c));
}

#[test]
fn applied_commands_respect_the_limits() {
    for seed in 0..3 {
        let mut s = corridor();
        s.seed = seed;
        s.pedestrians = vec![Pedestrian::new("p", vec![(0.0, [6.0, 5.0]), (20.0, [6.0, 0.0])], 0.25).unwrap()];
        let r = run(&s).unwrap();
        let lim = s.limits;
        for w in r.records.windows(2) {
            let u = w[1].command;
            assert!(u.v_leader.abs() <= lim.v_max_leader + 1e-9);
            assert!(u.v_follower.abs() <= lim.v_max_follower + 1e-9);
            assert!(u.w_leader.abs() <= lim.w_max_leader + 1e-9);
            assert!(u.w_follower.abs() <= lim.w_max_follower + 1e-9);
            if w[0].mode == BehaviorMode::Navigation && w[1].mode == BehaviorMode::Navigation {
                let p = w[0].command;
                assert!((u.v_leader - p.v_leader).abs() <= lim.a_max_leader + 1e-9);
                assert!((u.v_follower - p.v_follower).abs() <= lim.a_max_follower + 1e-9);
                assert!((u.w_leader - p.w_leader).abs() <= lim.alpha_max_leader + 1e-9);
                assert!((u.w_follower - p.w_follower).abs() <= lim.alpha_max_follower + 1e-9);
            }
        }
    }
}

#[test]
fn pedestrian_outside_the_region_changes_nothing() {
    let base = corridor();
    let mut with = base.clone();
    with.pedestrians = vec![Pedestrian::new("far", vec![(0.0, [11.5, 0.2]), (60.0, [11.5, 4.8])], 0.25).unwrap()];
    let a = run(&base).unwrap();
    let b = run(&with).unwrap();
    assert!(b.records.iter().all(|t| t.mode == BehaviorMode::Navigation));
    assert_eq!(strip_timing(&a), strip_timing(&b));
}

#[test]
fn blocking_pedestrian_stops_the_assembly_until_it_leaves() {
    let mut s = corridor();
    s.pedestrians = vec![Pedestrian::new(
        "blocker",
        vec![(0.0, [5.5, 2.5]), (12.0, [5.5, 2.5]), (14.0, [5.5, 9.0])],
        0.25,
    )
    .unwrap()];
    s.duration_cap = 60.0;
    let r = run(&s).unwrap();
    assert_eq!(r.outcome, Outcome::GoalReached);
    let first_wait = r
        .records
        .iter()
        .position(|t| t.mode == BehaviorMode::Waiting)
        .expect("never waited");
    assert!(r.records[first_wait].t < 12.0);
    for t in r.records.iter().filter(|t| t.mode == BehaviorMode::Waiting) {
        assert!(t.command.max_speed() < 0.02, "moving at {} while waiting", t.command.max_speed());
    }
    let resumed = r.records[first_wait..]
        .iter()
        .position(|t| t.mode == BehaviorMode::Navigation)
        .expect("never resumed");
    assert!(r.records[first_wait + resumed].t >= 12.0);
    // stopped short of the pedestrian
    let closest = r
        .records
        .iter()
        .filter(|t| t.t < 12.0)
        .map(|t| (5.5 - t.truth.leader.x).hypot(2.5 - t.truth.leader.y))
        .fold(f64::INFINITY, f64::min);
    assert!(closest > 0.5, "leader came within {closest} m");
}

#[test]
fn two_arc_run_keeps_the_formation() {
    let map = OccupancyGrid::new(40, 40, 0.25, Pose2::new(-2.0, -2.0, 0.0), vec![false; 1600]).unwrap();
    let mut s = Scenario::new("two_arc", map, Pose2::origin(), Pose2::new(4.5, 4.2, 0.0));
    s.reference = ReferenceSource::TwoArc {
        curvature: 0.4,
        waypoints: 60,
    };
    let r = run(&s).unwrap();
    assert_eq!(r.outcome, Outcome::GoalReached);
    let worst = r.records.iter().map(|t| t.r_error.abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "max |r - l| {worst}");
}

#[test]
fn noise_free_two_arc_regression() {
    let map = OccupancyGrid::new(44, 40, 0.25, Pose2::new(-2.5, -3.0, 0.0), vec![false; 1760]).unwrap();
    let theta0 = 0.087847;
    let mut s = quiet(Scenario::new("two_arc", map, Pose2::new(0.0, 0.0, theta0), Pose2::new(4.5, 4.2, theta0)));
    s.reference = ReferenceSource::TwoArc {
        curvature: 0.4,
        waypoints: 30,
    };
    let r = run(&s).unwrap();
    assert_eq!(r.outcome, Outcome::GoalReached);
    let track: Vec<f64> = r.records.iter().map(|t| t.tracking_error).collect();
    let mean = track.iter().sum::<f64>() / track.len() as f64;
    let max = track.iter().copied().fold(0.0, f64::max);
    assert!((mean - 0.036521).abs() < 1e-5, "mean {mean}");
    assert!((max - 0.071507).abs() < 1e-5, "max {max}");
    assert_eq!(r.records.len(), 141);
}
