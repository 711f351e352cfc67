mod common;

use chmm_core::io::{
    preprocess_lagged_differences, read_model, read_trajectory, read_trajectory_csv, write_model, write_trajectory,
    write_trajectory_csv,
};
use chmm_core::model::{scenario_model, Trajectory};
use chmm_core::rng::seeded;
use chmm_core::Error;
use common::random_model;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn trajectory_round_trip_is_exact(seed in any::<u64>(), len in 1usize..60, labelled in any::<bool>()) {
        let mut rng = seeded(seed);
        let model = random_model(&mut rng, 3, false);
        let traj = model.simulate(len, &mut rng).unwrap();
        let traj = if labelled { traj } else { traj.without_labels() };
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj, None).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        prop_assert_eq!(&back.trajectory, &traj);
        prop_assert_eq!(back.times.unwrap(), (1..=len).map(|t| t as f64).collect::<Vec<_>>());
        prop_assert_eq!(back.columns, vec!["y1".to_string(), "y2".to_string()]);
    }

    #[test]
    fn model_round_trip_is_exact(seed in any::<u64>(), k in 1usize..4) {
        let model = random_model(&mut seeded(seed), k, false);
        let text = chmm_core::io::model_to_toml(&model).unwrap();
        prop_assert_eq!(chmm_core::io::model_from_toml(&text).unwrap(), model);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = scenario_model(3).unwrap();
    let traj = model.simulate(50, &mut seeded(91)).unwrap();
    let times: Vec<f64> = (0..50).map(|t| 0.5 * t as f64).collect();
    let path = dir.path().join("traj.csv");
    write_trajectory_csv(&path, &traj, Some(&times)).unwrap();
    let back = read_trajectory_csv(&path).unwrap();
    assert_eq!(back.trajectory, traj);
    assert_eq!(back.times.as_deref(), Some(&times[..]));

    let mpath = dir.path().join("model.toml");
    write_model(&mpath, &model).unwrap();
    assert_eq!(read_model(&mpath).unwrap(), model);
    assert!(read_model(dir.path().join("missing.toml")).is_err());
}

#[test]
fn short_simulation_writes_five_rows() {
    let model = common::two_state_frank();
    let traj = model.simulate(5, &mut seeded(92)).unwrap();
    let mut buf = Vec::new();
    write_trajectory(&mut buf, &traj, None).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,y1,y2,state");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.ends_with(",1") || l.ends_with(",2")));
}

#[test]
fn malformed_files_are_rejected_with_lines() {
    let cases = [
        ("y1,y2\n1,2\n3,oops\n", 3),
        ("y1,y2\n1,2\n3\n", 3),
        ("y1,state\n1,1\n2,-1\n", 3),
        ("y1\ninf\n", 2),
        ("t,t,y1\n1,1,1\n", 1),
        ("t,state\n1,1\n", 1),
    ];
    for (text, expected) in cases {
        match read_trajectory(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, expected, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    assert!(read_trajectory("y1\n".as_bytes()).is_err());
}

#[test]
fn constant_series_has_zero_differences() {
    let rows = vec![vec![3.0, -1.0]; 40];
    let traj = Trajectory::new(rows, None).unwrap();
    let ts: Vec<f64> = (0..40).map(|t| t as f64).collect();
    let out = preprocess_lagged_differences(&traj, 5.0, &ts).unwrap();
    assert_eq!(out.trajectory.len(), 7);
    assert!(out.trajectory.rows().flatten().all(|&x| x == 0.0));
    assert!(out.filled_bins.is_empty());
}

#[test]
fn ramp_differences_equal_slope_times_window() {
    let slope = 0.3;
    let ts: Vec<f64> = (0..120).map(|t| t as f64 * 0.5).collect();
    let rows = ts.iter().map(|t| vec![slope * t, 1.0 - 2.0 * slope * t]).collect();
    let traj = Trajectory::new(rows, None).unwrap();
    let out = preprocess_lagged_differences(&traj, 5.0, &ts).unwrap();
    for row in out.trajectory.rows() {
        assert!((row[0] - slope * 5.0).abs() < 1e-12, "{row:?}");
        assert!((row[1] + 2.0 * slope * 5.0).abs() < 1e-12, "{row:?}");
    }
}

#[test]
fn preprocessing_validates_inputs() {
    let traj = Trajectory::new(vec![vec![1.0]; 3], None).unwrap();
    assert!(preprocess_lagged_differences(&traj, 0.0, &[0.0, 1.0, 2.0]).is_err());
    assert!(preprocess_lagged_differences(&traj, 1.0, &[0.0, 1.0]).is_err());
    assert!(preprocess_lagged_differences(&traj, 1.0, &[0.0, 2.0, 1.0]).is_err());
    assert!(preprocess_lagged_differences(&traj, 10.0, &[0.0, 1.0, 2.0]).is_err());
}
