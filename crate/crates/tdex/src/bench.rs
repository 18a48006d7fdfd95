//! ContactWorld: a deterministic synthetic environment family that mirrors
//! the occlusion/contact structure of tactile manipulation.
//!
//! An episode hides an object somewhere on the table and picks a grasp mode
//! (which finger-script opens it). During the approach the hand reads nothing
//! on its pads while vision encodes the object and arm positions; once the
//! hand covers the object the visual features collapse to pure noise
//! (occlusion, independent of the grip by construction) while the pads light
//! up with a mode- and progress-dependent pattern. Success requires tracking
//! the mode's joint script to completion within the step budget, so vision
//! alone cannot finish a grasp and touch alone cannot find the object.

use crate::data::{
    Action, Frame, RobotState, TactileFrame, Trajectory, IDENTITY_QUAT, NUM_AXES, PAD_COLS,
    PAD_ROWS,
};
use crate::error::{Result, TdexError};
use crate::policy::{Environment, EpisodeRecord, Observation, Policy, PolicyStep};
use crate::seed::{derive_seed, derive_seed_n};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Constant hand height; the benchmark plays out in the xy plane.
pub const HAND_Z: f64 = 0.1;
/// Arm rest position, outside the object box so every episode starts with an
/// approach phase.
pub const HOME_XY: [f64; 2] = [0.5, 0.12];

/// Seed for world content (visual encoding map, grasp scripts). Fixed so play
/// data, demonstrations and evaluation share one world definition.
const WORLD_SEED: u64 = 0x7ac7_11e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Single grasp mode.
    Press,
    /// Two modes (thumb-side vs finger-side style).
    Grasp,
    /// Three modes.
    Twist,
}

impl Task {
    pub fn n_modes(&self) -> usize {
        match self {
            Task::Press => 1,
            Task::Grasp => 2,
            Task::Twist => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Press => "press",
            Task::Grasp => "grasp",
            Task::Twist => "twist",
        }
    }

    /// Parses environment URIs of the form `synth:<task>`.
    pub fn from_uri(uri: &str) -> Result<Task> {
        match uri {
            "synth:press" => Ok(Task::Press),
            "synth:grasp" => Ok(Task::Grasp),
            "synth:twist" => Ok(Task::Twist),
            other => Err(TdexError::InvalidArg(format!(
                "unknown environment `{other}` (expected synth:press|synth:grasp|synth:twist)"
            ))),
        }
    }
}

/// Stepping rates and noise levels; demonstrations are recorded at a finer
/// motion scale than evaluation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub ee_speed: f64,
    pub joint_speed: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub tactile_noise: f64,
    pub gain_range: (f64, f64),
}

/// One grasp script: joint keyposes interpolated linearly by progress.
#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    pub start: [f64; 16],
    pub end: [f64; 16],
}

impl Script {
    pub fn pose(&self, p: f64) -> [f64; 16] {
        let p = p.clamp(0.0, 1.0);
        let mut q = [0.0; 16];
        for i in 0..16 {
            q[i] = (1.0 - p) * self.start[i] + p * self.end[i];
        }
        q
    }
}

#[derive(Clone, Debug)]
pub struct ContactWorldSpec {
    pub task: Task,
    /// Object positions are drawn from this xy box.
    pub object_box: ([f64; 2], [f64; 2]),
    pub contact_radius: f64,
    pub visual_dim: usize,
    pub visual_noise: f64,
    /// Scale of the uninformative visual noise during contact.
    pub occlusion_noise: f64,
    /// Joint-space tolerance for script tracking; progress stalls outside it.
    pub track_tol: f64,
    /// Progress gained per on-script step.
    pub script_step: f64,
    pub eval: MotionProfile,
    pub demo: MotionProfile,
    pub play: MotionProfile,
    visual_map: Vec<([f64; 4], f64)>,
    scripts: Vec<Script>,
}

impl ContactWorldSpec {
    pub fn new(task: Task) -> Self {
        let mut map_rng = ChaCha12Rng::seed_from_u64(derive_seed(WORLD_SEED, "visual-map"));
        let visual_dim = 12;
        let visual_map = (0..visual_dim)
            .map(|_| {
                let mut w = [0.0; 4];
                for v in w.iter_mut() {
                    *v = map_rng.gen_range(-2.5..2.5);
                }
                (w, map_rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();

        let scripts = (0..task.n_modes())
            .map(|mode| {
                let mut rng =
                    ChaCha12Rng::seed_from_u64(derive_seed_n(WORLD_SEED, "script", &[mode as u64]));
                let mut start = [0.0; 16];
                let mut end = [0.0; 16];
                // the mode's finger closes hard, the thumb assists, the rest
                // stay slack
                for k in 0..4 {
                    let j = mode * 4 + k;
                    start[j] = 0.5 + 0.1 * k as f64 + rng.gen_range(-0.05..0.05);
                    end[j] = 1.4 - 0.1 * k as f64 + rng.gen_range(-0.05..0.05);
                }
                for j in 12..16 {
                    start[j] = 0.4 + rng.gen_range(-0.03..0.03);
                    end[j] = 0.8 + rng.gen_range(-0.03..0.03);
                }
                for j in 0..12 {
                    if j / 4 != mode {
                        let slack = rng.gen_range(-0.05..0.05);
                        start[j] = slack;
                        end[j] = slack;
                    }
                }
                Script { start, end }
            })
            .collect();

        ContactWorldSpec {
            task,
            object_box: ([0.35, 0.35], [0.65, 0.65]),
            contact_radius: 0.13,
            visual_dim,
            visual_noise: 0.05,
            occlusion_noise: 0.6,
            track_tol: 0.5,
            script_step: 0.05,
            eval: MotionProfile {
                ee_speed: 0.02,
                joint_speed: 0.15,
                dt: 0.1,
                max_steps: 80,
                tactile_noise: 0.05,
                gain_range: (0.7, 1.3),
            },
            demo: MotionProfile {
                ee_speed: 0.0035,
                joint_speed: 0.04,
                dt: 0.02,
                max_steps: 420,
                tactile_noise: 0.02,
                gain_range: (1.0, 1.0),
            },
            // play motion per frame sits below the 1 cm ingest threshold
            // (5 tracked bodies sum into the displacement metric), so
            // spatial subsampling of play data is non-trivial
            play: MotionProfile {
                ee_speed: 0.0018,
                joint_speed: 0.028,
                dt: 0.05,
                max_steps: usize::MAX,
                tactile_noise: 0.04,
                gain_range: (0.6, 1.4),
            },
            visual_map,
            scripts,
        }
    }

    pub fn script(&self, mode: usize) -> &Script {
        &self.scripts[mode]
    }

    /// Visual encoding of (object, arm) positions: fixed random sinusoids.
    fn visual_encode(&self, obj: [f64; 2], ee: [f64; 2]) -> Vec<f64> {
        let input = [obj[0], obj[1], ee[0], ee[1]];
        self.visual_map
            .iter()
            .map(|(w, b)| {
                let mut acc = *b;
                for k in 0..4 {
                    acc += w[k] * input[k];
                }
                acc.sin()
            })
            .collect()
    }
}

/// Latent episode configuration, shared across baselines for fair trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInit {
    pub obj: [f64; 2],
    pub mode: usize,
    pub gain: f64,
}

/// Evaluation initial states for a seed: every policy compared under the
/// same seed sees the same object positions, modes and gains.
pub fn initial_states(spec: &ContactWorldSpec, episodes: usize, seed: u64) -> Vec<EpisodeInit> {
    (0..episodes)
        .map(|i| {
            let mut rng =
                ChaCha12Rng::seed_from_u64(derive_seed_n(seed, "episode-init", &[i as u64]));
            let (lo, hi) = (spec.object_box.0, spec.object_box.1);
            EpisodeInit {
                obj: [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])],
                mode: rng.gen_range(0..spec.task.n_modes()),
                gain: rng.gen_range(spec.eval.gain_range.0..=spec.eval.gain_range.1),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Approach,
    Contact,
    Manipulate,
    Done,
}

#[derive(Clone, Debug)]
pub struct ContactWorld {
    spec: ContactWorldSpec,
    profile: MotionProfile,
    init: EpisodeInit,
    episode_seed: u64,
    ee: [f64; 2],
    joints: [f64; 16],
    phase: Phase,
    progress: f64,
    step_idx: usize,
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl ContactWorld {
    pub fn new(
        spec: &ContactWorldSpec,
        profile: MotionProfile,
        init: EpisodeInit,
        episode_seed: u64,
    ) -> Self {
        ContactWorld {
            spec: spec.clone(),
            profile,
            init,
            episode_seed,
            ee: HOME_XY,
            joints: [0.0; 16],
            phase: Phase::Approach,
            progress: 0.0,
            step_idx: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn init(&self) -> &EpisodeInit {
        &self.init
    }

    pub fn succeeded(&self) -> bool {
        self.phase == Phase::Done
    }

    fn in_contact(&self) -> bool {
        matches!(self.phase, Phase::Contact | Phase::Manipulate | Phase::Done)
    }

    /// Per-step, per-purpose noise stream. Streams depend only on the episode
    /// seed and step index, never on the grip, so occluded visual features
    /// carry no grip information by construction.
    fn stream(&self, tag: &str) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(derive_seed_n(
            self.episode_seed,
            tag,
            &[self.step_idx as u64],
        ))
    }

    /// Toy fingertip map: base offset per finger plus a linear joint term.
    fn fingertips(&self) -> [[f64; 3]; 4] {
        let mut tips = [[0.0; 3]; 4];
        for f in 0..4 {
            let off = [0.03 * f as f64 - 0.045, 0.05, -0.02];
            for k in 0..3 {
                let base = match k {
                    0 => self.ee[0],
                    1 => self.ee[1],
                    _ => HAND_Z,
                };
                tips[f][k] = base + off[k] + 0.05 * self.joints[4 * f + k];
            }
        }
        tips
    }

    /// Structured pad activations for a contact state. The grasp mode decides
    /// which finger column lights up and its force-direction signature; the
    /// progress decides which PAD along that finger carries the contact
    /// (continuously, via two-pad interpolation — the contact point travels
    /// base to tip as the grasp closes), so the readout is gain-invariant and
    /// survives small spatial jitter; how well the joints match the script
    /// scales the contact force.
    fn contact_pattern(&self) -> TactileFrame {
        let mut frame = TactileFrame::zeros();
        let script = self.spec.script(self.init.mode);
        let q_err = {
            let pose = script.pose(self.progress);
            let mut acc = 0.0;
            for i in 0..16 {
                let d = self.joints[i] - pose[i];
                acc += d * d;
            }
            acc.sqrt()
        };
        let closure = 1.0 - (q_err / 3.0).min(1.0);
        let amp = self.init.gain * (0.55 + 0.45 * closure);

        let pf = self.progress.clamp(0.0, 1.0) * 3.0;
        let p0 = (pf.floor() as usize).min(2);
        let frac = pf - p0 as f64;
        let mode = self.init.mode;
        let (sx, sy) = match mode {
            0 => (0.9, 0.2),
            1 => (-0.7, 0.6),
            _ => (0.1, -0.9),
        };
        for (offset, weight) in [(p0, 1.0 - frac), (p0 + 1, frac)] {
            if offset >= 4 || weight == 0.0 {
                continue;
            }
            let pad = mode * 4 + offset;
            for row in 0..PAD_ROWS {
                for col in 0..PAD_COLS {
                    frame.set(pad, row, col, 0, amp * sx * weight);
                    frame.set(pad, row, col, 1, amp * sy * weight);
                    frame.set(pad, row, col, 2, amp * 2.2 * weight);
                }
            }
        }
        // thumb pads carry a uniform contact signature in every mode
        for pad in 12..15 {
            for row in 0..PAD_ROWS {
                for col in 0..PAD_COLS {
                    frame.set(pad, row, col, 2, amp * 0.8);
                }
            }
        }
        frame
    }

    pub fn observe_now(&self) -> Observation {
        let visual = if self.in_contact() {
            // occlusion: pure noise, independent of everything latent
            let mut rng = self.stream("visual-occluded");
            (0..self.spec.visual_dim)
                .map(|_| self.spec.occlusion_noise * gauss(&mut rng))
                .collect()
        } else {
            let mut rng = self.stream("visual");
            self.spec
                .visual_encode(self.init.obj, self.ee)
                .into_iter()
                .map(|v| v + self.spec.visual_noise * gauss(&mut rng))
                .collect()
        };
        let tactile = if self.in_contact() {
            let mut frame = self.contact_pattern();
            let mut rng = self.stream("tactile");
            let sigma = self.profile.tactile_noise;
            let values: Vec<f64> = frame
                .flattened()
                .iter()
                .map(|v| v + sigma * gauss(&mut rng))
                .collect();
            frame = TactileFrame::from_values(values).expect("finite noise");
            frame
        } else {
            TactileFrame::zeros()
        };
        Observation {
            visual: Some(visual),
            tactile,
            state: RobotState {
                ee_pos: [self.ee[0], self.ee[1], HAND_Z],
                ee_quat: IDENTITY_QUAT,
                joints: self.joints,
                fingertips: self.fingertips(),
            },
        }
    }

    pub fn step_now(&mut self, action: &Action) {
        if self.phase == Phase::Done {
            self.step_idx += 1;
            return;
        }
        // the arm only responds during the approach; once the hand wraps the
        // object the grip pins the arm and only the fingers matter
        if self.phase == Phase::Approach {
            let dx = action.ee_pos[0] - self.ee[0];
            let dy = action.ee_pos[1] - self.ee[1];
            let dist = (dx * dx + dy * dy).sqrt();
            if dist > 0.0 {
                let scale = (self.profile.ee_speed / dist).min(1.0);
                self.ee[0] += dx * scale;
                self.ee[1] += dy * scale;
            }
        }
        for i in 0..16 {
            let d = action.joints[i] - self.joints[i];
            self.joints[i] += d.clamp(-self.profile.joint_speed, self.profile.joint_speed);
        }

        match self.phase {
            Phase::Approach => {
                let dx = self.ee[0] - self.init.obj[0];
                let dy = self.ee[1] - self.init.obj[1];
                if (dx * dx + dy * dy).sqrt() < self.spec.contact_radius {
                    self.phase = Phase::Contact;
                    self.progress = 0.0;
                }
            }
            Phase::Contact | Phase::Manipulate => {
                let next = (self.progress + self.spec.script_step).min(1.0);
                let target = self.spec.script(self.init.mode).pose(next);
                let mut err = 0.0;
                for i in 0..16 {
                    let d = self.joints[i] - target[i];
                    err += d * d;
                }
                if err.sqrt() < self.spec.track_tol {
                    self.progress = next;
                }
                if self.progress >= 1.0 {
                    self.phase = Phase::Done;
                } else if self.progress >= 0.5 {
                    self.phase = Phase::Manipulate;
                }
            }
            Phase::Done => {}
        }
        self.step_idx += 1;
    }

    /// Breaks the grip (play-driver privilege; evaluation dynamics never
    /// release).
    fn force_release(&mut self) {
        if self.phase != Phase::Done {
            self.phase = Phase::Approach;
            self.progress = 0.0;
        }
    }
}

impl Environment for ContactWorld {
    fn observe(&self) -> Result<Observation> {
        Ok(self.observe_now())
    }

    fn step(&mut self, action: &Action) -> Result<()> {
        self.step_now(action);
        Ok(())
    }

    fn done(&self) -> bool {
        self.succeeded()
    }
}

/// Observation-driven scripted expert. It knows the episode's latent object
/// position and grasp mode (demonstrations are collected with full
/// knowledge), approaches the object, then walks the mode's script while
/// mirroring the environment's progress rule from the observed joints.
#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    obj: [f64; 2],
    mode: usize,
    script: Script,
    script_step: f64,
    track_tol: f64,
    p_est: f64,
}

impl ScriptedExpert {
    pub fn new(spec: &ContactWorldSpec, init: &EpisodeInit) -> Self {
        ScriptedExpert {
            obj: init.obj,
            mode: init.mode,
            script: spec.script(init.mode).clone(),
            script_step: spec.script_step,
            track_tol: spec.track_tol,
            p_est: 0.0,
        }
    }
}

impl Policy for ScriptedExpert {
    fn act(&mut self, obs: &Observation) -> Result<PolicyStep> {
        let touching = obs.tactile.flattened().iter().any(|&v| v != 0.0);
        let action = if !touching {
            Action {
                ee_pos: [self.obj[0], self.obj[1], HAND_Z],
                ee_quat: IDENTITY_QUAT,
                joints: [0.0; 16],
            }
        } else {
            // mirror the environment's progress update on observed joints
            let next = (self.p_est + self.script_step).min(1.0);
            let target = self.script.pose(next);
            let mut err = 0.0;
            for i in 0..16 {
                let d = obs.state.joints[i] - target[i];
                err += d * d;
            }
            if err.sqrt() < self.track_tol {
                self.p_est = next;
            }
            Action {
                ee_pos: obs.state.ee_pos,
                ee_quat: IDENTITY_QUAT,
                joints: self.script.pose((self.p_est + self.script_step).min(1.0)),
            }
        };
        Ok(PolicyStep {
            action,
            neighbor: None,
            distance: None,
        })
    }

    fn reset(&mut self) {
        self.p_est = 0.0;
    }

    fn name(&self) -> String {
        format!("expert-{}", self.mode)
    }
}

/// Stratified demonstration setups: a 3x2 grid of object cells with jitter,
/// modes assigned round-robin, unit gain.
pub fn demo_inits(spec: &ContactWorldSpec, n: usize, seed: u64) -> Vec<EpisodeInit> {
    let (lo, hi) = (spec.object_box.0, spec.object_box.1);
    let span = [hi[0] - lo[0], hi[1] - lo[1]];
    (0..n)
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed_n(seed, "demo-init", &[i as u64]));
            let cell = i % 6;
            let cx = lo[0] + (0.5 + (cell % 3) as f64) * span[0] / 3.0;
            let cy = lo[1] + (0.5 + (cell / 3) as f64) * span[1] / 2.0;
            EpisodeInit {
                obj: [
                    cx + rng.gen_range(-0.25..0.25) * span[0] / 3.0,
                    cy + rng.gen_range(-0.25..0.25) * span[1] / 2.0,
                ],
                mode: i % spec.task.n_modes(),
                gain: 1.0,
            }
        })
        .collect()
}

/// Runs the scripted expert and records full frames (observations + the
/// action taken). Every demonstration succeeds by construction.
pub fn generate_demos(spec: &ContactWorldSpec, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(TdexError::InvalidArg("need at least one demo".into()));
    }
    let inits = demo_inits(spec, n, seed);
    let mut demos = Vec::with_capacity(n);
    for (i, init) in inits.iter().enumerate() {
        let mut env = ContactWorld::new(
            spec,
            spec.demo.clone(),
            *init,
            derive_seed_n(seed, "demo-env", &[i as u64]),
        );
        let mut expert = ScriptedExpert::new(spec, init);
        let mut frames = Vec::new();
        for step in 0..spec.demo.max_steps {
            if env.done() {
                break;
            }
            let obs = env.observe_now();
            let decision = expert.act(&obs)?;
            frames.push(Frame {
                t: step as f64 * spec.demo.dt,
                tactile: obs.tactile,
                state: obs.state,
                visual_feature: obs.visual,
                action: Some(decision.action.clone()),
            });
            env.step_now(&decision.action);
        }
        if !env.succeeded() {
            return Err(TdexError::Internal(format!(
                "scripted expert failed on demo {i}"
            )));
        }
        demos.push(Trajectory::from_frames(frames)?);
    }
    Ok(demos)
}

/// Aimless exploratory play: wander between waypoints (biased toward the
/// object), and on contact fiddle with the grasp script at a randomly
/// drifting pace before letting go. Deterministic per seed.
pub fn generate_play(
    spec: &ContactWorldSpec,
    minutes_equivalent: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if !(minutes_equivalent > 0.0) {
        return Err(TdexError::InvalidArg(
            "minutes_equivalent must be positive".into(),
        ));
    }
    let total_frames = (minutes_equivalent * 60.0 / spec.play.dt).round() as usize;
    let ep_len = 300usize;
    let episodes = total_frames.div_ceil(ep_len);
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed_n(seed, "play-behavior", &[ep as u64]));
        let (lo, hi) = (spec.object_box.0, spec.object_box.1);
        let init = EpisodeInit {
            obj: [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])],
            mode: rng.gen_range(0..spec.task.n_modes()),
            gain: rng.gen_range(spec.play.gain_range.0..=spec.play.gain_range.1),
        };
        let mut profile = spec.play.clone();
        profile.tactile_noise = rng.gen_range(0.01..0.06);
        let mut env = ContactWorld::new(
            spec,
            profile,
            init,
            derive_seed_n(seed, "play-env", &[ep as u64]),
        );
        let script = spec.script(init.mode).clone();

        let frames_left = (total_frames - ep * ep_len).min(ep_len);
        let mut frames = Vec::with_capacity(frames_left);
        let mut waypoint = init.obj;
        let mut fiddle_left = 0usize;
        let mut p_target = 0.0f64;
        for step in 0..frames_left {
            let obs = env.observe_now();
            let action = if env.in_contact() {
                if fiddle_left == 0 {
                    fiddle_left = rng.gen_range(40..140);
                    p_target = 0.0;
                }
                fiddle_left -= 1;
                p_target = (p_target + rng.gen_range(-0.05..0.12)).clamp(0.0, 1.0);
                let mut joints = script.pose(p_target);
                for j in joints.iter_mut() {
                    *j += rng.gen_range(-0.05..0.05);
                }
                let action = Action {
                    ee_pos: obs.state.ee_pos,
                    ee_quat: IDENTITY_QUAT,
                    joints,
                };
                if fiddle_left == 0 {
                    env.force_release();
                    waypoint = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
                }
                action
            } else {
                let dx = waypoint[0] - obs.state.ee_pos[0];
                let dy = waypoint[1] - obs.state.ee_pos[1];
                if (dx * dx + dy * dy).sqrt() < 0.02 || rng.gen_bool(0.02) {
                    waypoint = if rng.gen_bool(0.65) {
                        [
                            init.obj[0] + rng.gen_range(-0.05..0.05),
                            init.obj[1] + rng.gen_range(-0.05..0.05),
                        ]
                    } else {
                        [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)]
                    };
                }
                let mut joints = [0.0; 16];
                for j in joints.iter_mut() {
                    *j = rng.gen_range(-0.1..0.1);
                }
                Action {
                    ee_pos: [waypoint[0], waypoint[1], HAND_Z],
                    ee_quat: IDENTITY_QUAT,
                    joints,
                }
            };
            frames.push(Frame {
                t: step as f64 * spec.play.dt,
                tactile: obs.tactile,
                state: obs.state,
                visual_feature: obs.visual,
                action: Some(action.clone()),
            });
            env.step_now(&action);
        }
        out.push(Trajectory::from_frames(frames)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub episodes: usize,
    pub successes: usize,
    pub records: Vec<EpisodeRecord>,
    pub inits: Vec<EpisodeInit>,
}

impl EvalOutcome {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

/// Evaluates a policy over fixed evaluation seeds. The initial-state list
/// depends only on (spec, episodes, seed), so every baseline sees identical
/// trials. The policy is reset before each episode.
pub fn evaluate(
    spec: &ContactWorldSpec,
    policy: &mut dyn Policy,
    episodes: usize,
    seed: u64,
) -> Result<EvalOutcome> {
    let inits = initial_states(spec, episodes, seed);
    let mut records = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for (i, init) in inits.iter().enumerate() {
        let mut env = ContactWorld::new(
            spec,
            spec.eval.clone(),
            *init,
            derive_seed_n(seed, "eval-env", &[i as u64]),
        );
        policy.reset();
        let record = crate::policy::rollout(policy, &mut env, spec.eval.max_steps)?;
        if record.success {
            successes += 1;
        }
        records.push(record);
    }
    Ok(EvalOutcome {
        episodes,
        successes,
        records,
        inits,
    })
}

/// Expert evaluation: the expert is rebuilt per episode from the latent init.
pub fn evaluate_expert(spec: &ContactWorldSpec, episodes: usize, seed: u64) -> Result<EvalOutcome> {
    let inits = initial_states(spec, episodes, seed);
    let mut records = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for (i, init) in inits.iter().enumerate() {
        let mut env = ContactWorld::new(
            spec,
            spec.eval.clone(),
            *init,
            derive_seed_n(seed, "eval-env", &[i as u64]),
        );
        let mut expert = ScriptedExpert::new(spec, init);
        let record = crate::policy::rollout(&mut expert, &mut env, spec.eval.max_steps)?;
        if record.success {
            successes += 1;
        }
        records.push(record);
    }
    Ok(EvalOutcome {
        episodes,
        successes,
        records,
        inits,
    })
}

/// Synthetic clustered tactile frames for representation sanity checks.
///
/// Cluster identity is a smooth low-frequency spatial pattern per force axis;
/// each sample hides it under a strong pixel-parity texture whose sign flips
/// independently per pad and axis, plus gain jitter and mild noise. Pointwise
/// Euclidean distance on the raw 720 values is dominated by the random
/// high-frequency textures, while blur-stable (spatially pooled) features
/// keep only the smooth cluster signal.
pub fn clustered_tactile(
    n_clusters: usize,
    per_cluster: usize,
    seed: u64,
) -> (Vec<TactileFrame>, Vec<usize>) {
    use crate::data::{NUM_PADS, PAD_COLS as PC, PAD_ROWS as PR};
    const PROTO_SCALE: f64 = 0.8;
    const HF_AMPLITUDE: f64 = 1.2;
    const NOISE_SIGMA: f64 = 0.1;
    let mut proto_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "cluster-protos"));
    let protos: Vec<[[f64; 3]; 3]> = (0..n_clusters)
        .map(|_| {
            let mut p = [[0.0; 3]; 3];
            for axis in p.iter_mut() {
                for v in axis.iter_mut() {
                    *v = proto_rng.gen_range(-PROTO_SCALE..PROTO_SCALE);
                }
            }
            p
        })
        .collect();

    let mut frames = Vec::with_capacity(n_clusters * per_cluster);
    let mut labels = Vec::with_capacity(n_clusters * per_cluster);
    for cluster in 0..n_clusters {
        for sample in 0..per_cluster {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed_n(
                seed,
                "cluster-sample",
                &[cluster as u64, sample as u64],
            ));
            let gain = rng.gen_range(0.8..1.2);
            // independent texture sign per (pad, axis): no two samples share
            // a high-frequency configuration
            let mut hf_sign = [[1.0f64; NUM_AXES]; NUM_PADS];
            for pad in hf_sign.iter_mut() {
                for s in pad.iter_mut() {
                    *s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                }
            }
            let mut frame = TactileFrame::zeros();
            for pad in 0..NUM_PADS {
                for row in 0..PR {
                    for col in 0..PC {
                        // global image coordinates of this taxel
                        let (_, ir, ic) = crate::data::pixel_of(pad, row, col, 0);
                        let u = ir as f64 / 15.0 - 0.5;
                        let v = ic as f64 / 15.0 - 0.5;
                        let parity = if (ir + ic) % 2 == 0 { 1.0 } else { -1.0 };
                        for axis in 0..NUM_AXES {
                            let [a, b, d] = protos[cluster][axis];
                            let signal = a * u + b * v + d;
                            frame.set(
                                pad,
                                row,
                                col,
                                axis,
                                gain * signal
                                    + HF_AMPLITUDE * hf_sign[pad][axis] * parity
                                    + NOISE_SIGMA * gauss(&mut rng),
                            );
                        }
                    }
                }
            }
            frames.push(frame);
            labels.push(cluster);
        }
    }
    (frames, labels)
}

/// Leave-one-out 1-nearest-neighbor label purity under Euclidean distance.
pub fn nn_purity(features: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(features.len(), labels.len());
    let n = features.len();
    if n < 2 {
        return 1.0;
    }
    let mut hits = 0usize;
    for i in 0..n {
        let mut best = None;
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut d = 0.0;
            for (a, b) in features[i].iter().zip(&features[j]) {
                d += (a - b) * (a - b);
            }
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if labels[best.unwrap().0] == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}
