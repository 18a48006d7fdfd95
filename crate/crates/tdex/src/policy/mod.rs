//! Phase-two imitation: per-modality feature scaling, weighted
//! nearest-neighbor action retrieval with a reject buffer, and closed-loop
//! rollouts.

mod bc;

pub use bc::{bc_train, BcConfig, BcPolicy};

use crate::data::{Action, RobotState, TactileFrame, Trajectory};
use crate::error::{Result, TdexError};
use crate::ingest::{motion_subsample, SubsampleConfig};
use crate::represent::{Featurizer, TorqueAux};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Relative weights of the visual and tactile distance terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub visual: f64,
    pub tactile: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            visual: 1.0,
            tactile: 1.0,
        }
    }
}

impl Weights {
    /// Emphasizes touch over vision (used when visual retrievals are poor).
    pub fn tactile_heavy() -> Self {
        Weights {
            visual: 1.0,
            tactile: 2.0,
        }
    }
}

/// How the visual feature for a frame is obtained. At desk scale the
/// trajectories carry precomputed features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum VisualFeaturizer {
    Precomputed,
}

impl VisualFeaturizer {
    pub fn featurize(&self, visual_feature: Option<&[f64]>) -> Vec<f64> {
        match self {
            VisualFeaturizer::Precomputed => visual_feature.map(<[f64]>::to_vec).unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub visual: Vec<f64>,
    pub tactile: Vec<f64>,
    pub action: Action,
    /// demo id and frame index this row came from
    pub source: (usize, usize),
}

/// Demonstration database: one row per (visual feature, tactile feature,
/// action) tuple, with per-modality scales chosen so the maximum pairwise
/// distance within the set is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    rows: Vec<IndexRow>,
    pub scale_visual: f64,
    pub scale_tactile: f64,
    pub weights: Weights,
    /// Cached norms of the scaled features, used by the pruned query path;
    /// rebuilt after deserialization.
    #[serde(skip)]
    visual_norms: Vec<f64>,
    #[serde(skip)]
    tactile_norms: Vec<f64>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

/// 1 / max pairwise distance, or 1 when fewer than two distinct points exist.
fn modality_scale(features: &[Vec<f64>]) -> f64 {
    let mut max_dist = 0.0f64;
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            max_dist = max_dist.max(euclidean(&features[i], &features[j]));
        }
    }
    if max_dist > 0.0 {
        1.0 / max_dist
    } else {
        1.0
    }
}

impl FeatureIndex {
    pub fn from_rows(mut rows: Vec<IndexRow>, weights: Weights) -> Result<FeatureIndex> {
        if rows.is_empty() {
            return Err(TdexError::InvalidData("no actions in demos".into()));
        }
        let vdim = rows[0].visual.len();
        let tdim = rows[0].tactile.len();
        if rows
            .iter()
            .any(|r| r.visual.len() != vdim || r.tactile.len() != tdim)
        {
            return Err(TdexError::InvalidData(
                "inconsistent feature dimensions across rows".into(),
            ));
        }
        let visual: Vec<Vec<f64>> = rows.iter().map(|r| r.visual.clone()).collect();
        let tactile: Vec<Vec<f64>> = rows.iter().map(|r| r.tactile.clone()).collect();
        let scale_visual = modality_scale(&visual);
        let scale_tactile = modality_scale(&tactile);
        rows.shrink_to_fit();
        let mut index = FeatureIndex {
            rows,
            scale_visual,
            scale_tactile,
            weights,
            visual_norms: Vec::new(),
            tactile_norms: Vec::new(),
        };
        index.rebuild_norm_cache();
        Ok(index)
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn visual_dim(&self) -> usize {
        self.rows.first().map(|r| r.visual.len()).unwrap_or(0)
    }

    pub fn tactile_dim(&self) -> usize {
        self.rows.first().map(|r| r.tactile.len()).unwrap_or(0)
    }

    /// Recomputes the cached scaled-feature norms (needed after
    /// deserializing an index saved without them).
    pub fn rebuild_norm_cache(&mut self) {
        let scaled_norm = |v: &[f64], s: f64| (v.iter().map(|x| x * s * x * s).sum::<f64>()).sqrt();
        self.visual_norms = self
            .rows
            .iter()
            .map(|r| scaled_norm(&r.visual, self.scale_visual))
            .collect();
        self.tactile_norms = self
            .rows
            .iter()
            .map(|r| scaled_norm(&r.tactile, self.scale_tactile))
            .collect();
    }

    /// Weighted sum of the per-modality scaled Euclidean distances.
    pub fn distance(&self, row: usize, visual: &[f64], tactile: &[f64]) -> f64 {
        let r = &self.rows[row];
        self.weights.visual * self.scale_visual * euclidean(&r.visual, visual)
            + self.weights.tactile * self.scale_tactile * euclidean(&r.tactile, tactile)
    }

    fn check_query(&self, visual: &[f64], tactile: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(TdexError::EmptyDataset);
        }
        if visual.len() != self.visual_dim() || tactile.len() != self.tactile_dim() {
            return Err(TdexError::InvalidData(format!(
                "query dims ({}, {}) do not match index dims ({}, {})",
                visual.len(),
                tactile.len(),
                self.visual_dim(),
                self.tactile_dim()
            )));
        }
        Ok(())
    }

    /// Reference query: a full in-order scan. Returns the first nearest row
    /// not in the reject buffer (ties break toward the lowest row index) and
    /// pushes it into the buffer.
    pub fn nn_query(
        &self,
        visual: &[f64],
        tactile: &[f64],
        reject: &mut RejectBuffer,
    ) -> Result<QueryHit> {
        self.check_query(visual, tactile)?;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows.len() {
            if reject.contains(i) {
                continue;
            }
            let d = self.distance(i, visual, tactile);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (row, distance) = best.ok_or(TdexError::BufferExhaustsIndex)?;
        reject.push(row);
        Ok(QueryHit {
            row,
            distance,
            action: self.rows[row].action.clone(),
        })
    }

    /// Exact accelerated query: scans in the same order but skips rows whose
    /// triangle-inequality lower bound (from cached norms) cannot beat the
    /// current best. Returns a bit-identical result to [`Self::nn_query`]:
    /// a skipped row either has a strictly larger distance or ties, and ties
    /// resolve to the earlier row in both paths.
    pub fn nn_query_accel(
        &self,
        visual: &[f64],
        tactile: &[f64],
        reject: &mut RejectBuffer,
    ) -> Result<QueryHit> {
        self.check_query(visual, tactile)?;
        let scaled_norm = |v: &[f64], s: f64| (v.iter().map(|x| x * s * x * s).sum::<f64>()).sqrt();
        let qv_norm = scaled_norm(visual, self.scale_visual);
        let qt_norm = scaled_norm(tactile, self.scale_tactile);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows.len() {
            if reject.contains(i) {
                continue;
            }
            if let Some((_, bd)) = best {
                let lb = self.weights.visual * (qv_norm - self.visual_norms[i]).abs()
                    + self.weights.tactile * (qt_norm - self.tactile_norms[i]).abs();
                if lb >= bd {
                    continue;
                }
            }
            let d = self.distance(i, visual, tactile);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (row, distance) = best.ok_or(TdexError::BufferExhaustsIndex)?;
        reject.push(row);
        Ok(QueryHit {
            row,
            distance,
            action: self.rows[row].action.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryHit {
    pub row: usize,
    pub distance: f64,
    pub action: Action,
}

/// FIFO buffer of the most recently executed neighbor rows; members are
/// excluded from retrieval to break cyclic behavior.
#[derive(Clone, Debug, Default)]
pub struct RejectBuffer {
    cap: usize,
    items: VecDeque<usize>,
}

impl RejectBuffer {
    pub fn new(cap: usize) -> Self {
        RejectBuffer {
            cap,
            items: VecDeque::with_capacity(cap),
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.items.contains(&row)
    }

    pub fn push(&mut self, row: usize) {
        if self.cap == 0 {
            return;
        }
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(row);
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

/// Builds the retrieval index from subsampled demonstrations. Frames without
/// actions are skipped; an index with no action rows is an error. The torque
/// proxy gets the previously commanded joints as its tracked pose (the first
/// frame tracks its own joints, i.e. zero torque).
pub fn build_index(
    demos: &[Trajectory],
    tactile_featurizer: &Featurizer,
    visual_featurizer: &VisualFeaturizer,
    weights: Weights,
) -> Result<FeatureIndex> {
    let mut rows = Vec::new();
    for (demo_id, demo) in demos.iter().enumerate() {
        let mut prev_commanded: Option<[f64; 16]> = None;
        for (frame_id, frame) in demo.frames().iter().enumerate() {
            let Some(action) = &frame.action else {
                continue;
            };
            let aux = TorqueAux {
                joints: frame.state.joints,
                desired_joints: prev_commanded.unwrap_or(frame.state.joints),
                joint_velocities: [0.0; 16],
            };
            let tactile = tactile_featurizer.featurize(&frame.tactile, Some(&aux))?;
            let visual = visual_featurizer.featurize(frame.visual_feature.as_deref());
            rows.push(IndexRow {
                visual,
                tactile,
                action: action.clone(),
                source: (demo_id, frame_id),
            });
            prev_commanded = Some(action.joints);
        }
    }
    FeatureIndex::from_rows(rows, weights)
}

/// Convenience: motion-subsample demos at the task threshold before indexing.
pub fn subsample_demos(demos: &[Trajectory], threshold_m: f64) -> Result<Vec<Trajectory>> {
    let cfg = SubsampleConfig::new(threshold_m)?;
    demos
        .iter()
        .map(|demo| Ok(demo.select(&motion_subsample(demo, &cfg)?)))
        .collect()
}

/// What a policy sees at each step.
#[derive(Clone, Debug)]
pub struct Observation {
    pub visual: Option<Vec<f64>>,
    pub tactile: TactileFrame,
    pub state: RobotState,
}

#[derive(Clone, Debug)]
pub struct PolicyStep {
    pub action: Action,
    /// Chosen neighbor row, for retrieval policies.
    pub neighbor: Option<usize>,
    pub distance: Option<f64>,
}

pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<PolicyStep>;
    /// Clears per-episode state (reject buffer, tracked poses).
    fn reset(&mut self);
    fn name(&self) -> String;
}

/// Environment interface for closed-loop evaluation.
pub trait Environment {
    fn observe(&self) -> Result<Observation>;
    fn step(&mut self, action: &Action) -> Result<()>;
    /// Terminal success/failure; rollouts stop early when set.
    fn done(&self) -> bool;
}

/// The nearest-neighbor imitation policy: featurize, retrieve, execute.
#[derive(Clone, Debug)]
pub struct NnPolicy {
    pub index: FeatureIndex,
    pub tactile_featurizer: Featurizer,
    pub visual_featurizer: VisualFeaturizer,
    reject: RejectBuffer,
    last_commanded: Option<[f64; 16]>,
    label: String,
}

impl NnPolicy {
    pub fn new(
        index: FeatureIndex,
        tactile_featurizer: Featurizer,
        visual_featurizer: VisualFeaturizer,
        reject_capacity: usize,
        label: impl Into<String>,
    ) -> Self {
        NnPolicy {
            index,
            tactile_featurizer,
            visual_featurizer,
            reject: RejectBuffer::new(reject_capacity),
            last_commanded: None,
            label: label.into(),
        }
    }
}

impl Policy for NnPolicy {
    fn act(&mut self, obs: &Observation) -> Result<PolicyStep> {
        let aux = TorqueAux {
            joints: obs.state.joints,
            desired_joints: self.last_commanded.unwrap_or(obs.state.joints),
            joint_velocities: [0.0; 16],
        };
        let tactile = self.tactile_featurizer.featurize(&obs.tactile, Some(&aux))?;
        let visual = self.visual_featurizer.featurize(obs.visual.as_deref());
        let hit = self.index.nn_query(&visual, &tactile, &mut self.reject)?;
        self.last_commanded = Some(hit.action.joints);
        Ok(PolicyStep {
            action: hit.action,
            neighbor: Some(hit.row),
            distance: Some(hit.distance),
        })
    }

    fn reset(&mut self) {
        self.reject.clear();
        self.last_commanded = None;
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub neighbor: Option<usize>,
    pub distance: Option<f64>,
    pub action: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    pub success: bool,
}

/// Closed loop: observe, act, step, record; stops at `max_steps` or when the
/// environment reports done.
pub fn rollout(
    policy: &mut dyn Policy,
    env: &mut dyn Environment,
    max_steps: usize,
) -> Result<EpisodeRecord> {
    let mut steps = Vec::new();
    for step in 0..max_steps {
        if env.done() {
            break;
        }
        let obs = env.observe()?;
        let decision = policy.act(&obs)?;
        env.step(&decision.action)?;
        steps.push(StepRecord {
            step,
            neighbor: decision.neighbor,
            distance: decision.distance,
            action: decision.action.to_vec(),
        });
    }
    Ok(EpisodeRecord {
        steps,
        success: env.done(),
    })
}
