//! Motion-threshold subsampling: keep a frame only once the hand has moved
//! far enough since the last kept frame, discretizing space rather than time.

use crate::data::{RobotState, Trajectory};
use crate::error::{Result, TdexError};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    /// Cumulative displacement (meters) that must be strictly exceeded.
    pub threshold_m: f64,
    /// Whether index 0 is emitted (it is always the accumulation origin).
    pub include_first: bool,
}

impl SubsampleConfig {
    pub fn new(threshold_m: f64) -> Result<Self> {
        if !(threshold_m >= 0.0) {
            return Err(TdexError::InvalidArg(format!(
                "subsample threshold must be >= 0, got {threshold_m}"
            )));
        }
        Ok(SubsampleConfig {
            threshold_m,
            include_first: true,
        })
    }
}

impl Default for SubsampleConfig {
    fn default() -> Self {
        SubsampleConfig {
            threshold_m: 0.01,
            include_first: true,
        }
    }
}

/// Total displacement of the tracked bodies between two states: the sum of
/// the four fingertip Euclidean displacements plus the end-effector one.
/// Orientation change is ignored.
pub fn displacement(a: &RobotState, b: &RobotState) -> f64 {
    let dist3 = |p: &[f64; 3], q: &[f64; 3]| {
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let mut total = dist3(&a.ee_pos, &b.ee_pos);
    for k in 0..4 {
        total += dist3(&a.fingertips[k], &b.fingertips[k]);
    }
    total
}

/// Returns the retained frame indices. Frame 0 is always the origin; a frame
/// is retained when the displacement since the last retained frame strictly
/// exceeds the threshold, after which accumulation restarts from it.
pub fn motion_subsample(traj: &Trajectory, cfg: &SubsampleConfig) -> Result<Vec<usize>> {
    if traj.is_empty() {
        return Err(TdexError::EmptyDataset);
    }
    let frames = traj.frames();
    let mut retained = Vec::new();
    if cfg.include_first {
        retained.push(0);
    }
    let mut last = 0usize;
    for i in 1..frames.len() {
        if displacement(&frames[last].state, &frames[i].state) > cfg.threshold_m {
            retained.push(i);
            last = i;
        }
    }
    Ok(retained)
}

/// Frame counts, duration and effective rates before/after subsampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub trajectories: usize,
    pub frames_before: usize,
    pub frames_after: usize,
    pub duration_s: f64,
    pub rate_before_hz: f64,
    pub rate_after_hz: f64,
}

pub fn dataset_stats(trajs: &[Trajectory], cfg: &SubsampleConfig) -> DatasetStats {
    let mut before = 0usize;
    let mut after = 0usize;
    let mut duration = 0.0;
    for traj in trajs {
        before += traj.len();
        if traj.is_empty() {
            continue;
        }
        after += motion_subsample(traj, cfg).expect("non-empty").len();
        let frames = traj.frames();
        duration += frames[frames.len() - 1].t - frames[0].t;
    }
    let rate = |n: usize| if duration > 0.0 { n as f64 / duration } else { 0.0 };
    DatasetStats {
        trajectories: trajs.len(),
        frames_before: before,
        frames_after: after,
        duration_s: duration,
        rate_before_hz: rate(before),
        rate_after_hz: rate(after),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Frame, TactileFrame, IDENTITY_QUAT};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn state_at(ee: [f64; 3], fingertips: [[f64; 3]; 4]) -> RobotState {
        RobotState {
            ee_pos: ee,
            ee_quat: IDENTITY_QUAT,
            joints: [0.0; 16],
            fingertips,
        }
    }

    fn traj_from_states(states: Vec<RobotState>) -> Trajectory {
        let frames = states
            .into_iter()
            .enumerate()
            .map(|(i, state)| Frame {
                t: i as f64 * 0.1,
                tactile: TactileFrame::zeros(),
                state,
                visual_feature: None,
                action: None,
            })
            .collect();
        Trajectory::from_frames(frames).unwrap()
    }

    fn random_walk(seed: u64, len: usize, step: f64) -> Trajectory {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut ee = [0.0; 3];
        let mut tips = [[0.0; 3]; 4];
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            states.push(state_at(ee, tips));
            for v in ee.iter_mut() {
                *v += rng.gen_range(-step..step);
            }
            for tip in tips.iter_mut() {
                for v in tip.iter_mut() {
                    *v += rng.gen_range(-step..step);
                }
            }
        }
        traj_from_states(states)
    }

    #[test]
    fn stationary_keeps_only_first() {
        let traj = traj_from_states(vec![state_at([0.2, 0.0, 0.0], [[0.0; 3]; 4]); 100]);
        let cfg = SubsampleConfig::new(0.01).unwrap();
        assert_eq!(motion_subsample(&traj, &cfg).unwrap(), vec![0]);
    }

    #[test]
    fn steady_ee_motion_matches_cumulative_oracle() {
        let states: Vec<RobotState> = (0..20)
            .map(|i| state_at([0.006 * i as f64, 0.0, 0.0], [[0.0; 3]; 4]))
            .collect();
        let traj = traj_from_states(states);
        let cfg = SubsampleConfig::new(0.01).unwrap();
        let got = motion_subsample(&traj, &cfg).unwrap();

        // oracle: displacement from the last retained frame, reset on retain
        let mut expected = vec![0usize];
        let mut last = 0usize;
        for i in 1..traj.len() {
            let d = displacement(&traj.frames()[last].state, &traj.frames()[i].state);
            if d > 0.01 {
                expected.push(i);
                last = i;
            }
        }
        assert_eq!(got, expected);
        assert_eq!(&got[..4], &[0, 2, 4, 6]);
    }

    #[test]
    fn zero_threshold_static_keeps_first_only() {
        let traj = traj_from_states(vec![state_at([0.0; 3], [[0.0; 3]; 4]); 10]);
        let cfg = SubsampleConfig::new(0.0).unwrap();
        // strict inequality: nothing exceeds 0 when nothing moves
        assert_eq!(motion_subsample(&traj, &cfg).unwrap(), vec![0]);
    }

    #[test]
    fn empty_trajectory_is_error() {
        let traj = Trajectory::default();
        assert!(matches!(
            motion_subsample(&traj, &SubsampleConfig::default()),
            Err(TdexError::EmptyDataset)
        ));
    }

    #[test]
    fn retained_gaps_exceed_threshold_and_prefixes_do_not() {
        for seed in 0..20u64 {
            let traj = random_walk(seed, 120, 0.004);
            for threshold in [0.01, 0.02] {
                let cfg = SubsampleConfig::new(threshold).unwrap();
                let kept = motion_subsample(&traj, &cfg).unwrap();
                assert_eq!(kept[0], 0);
                assert!(kept.windows(2).all(|w| w[0] < w[1]));
                for w in kept.windows(2) {
                    let (i, j) = (w[0], w[1]);
                    let d = displacement(&traj.frames()[i].state, &traj.frames()[j].state);
                    assert!(d > threshold, "gap {i}->{j} = {d}");
                    for k in i + 1..j {
                        let dk = displacement(&traj.frames()[i].state, &traj.frames()[k].state);
                        assert!(dk <= threshold, "prefix {i}->{k} = {dk}");
                    }
                }
            }
        }
    }

    #[test]
    fn subsampling_is_idempotent() {
        for seed in 0..20u64 {
            let traj = random_walk(seed, 150, 0.005);
            let cfg = SubsampleConfig::new(0.01).unwrap();
            let kept = motion_subsample(&traj, &cfg).unwrap();
            let reduced = traj.select(&kept);
            let again = motion_subsample(&reduced, &cfg).unwrap();
            assert_eq!(again, (0..reduced.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn stats_cover_edge_cases() {
        let cfg = SubsampleConfig::new(0.01).unwrap();
        assert_eq!(
            dataset_stats(&[], &cfg),
            DatasetStats {
                trajectories: 0,
                frames_before: 0,
                frames_after: 0,
                duration_s: 0.0,
                rate_before_hz: 0.0,
                rate_after_hz: 0.0,
            }
        );

        let still = traj_from_states(vec![state_at([0.1; 3], [[0.0; 3]; 4]); 100]);
        let stats = dataset_stats(&[still], &cfg);
        assert_eq!(stats.frames_before, 100);
        assert_eq!(stats.frames_after, 1);

        let moving = random_walk(5, 1000, 0.0008);
        let expected_after = motion_subsample(&moving, &cfg).unwrap().len();
        let stats = dataset_stats(&[moving], &cfg);
        assert_eq!(stats.frames_after, expected_after);
        assert!(stats.frames_after < stats.frames_before);
    }
}
