//! Behavior-cloning baseline: an MLP from concatenated visual + tactile
//! features to the 23-dimensional action, trained with MSE.

use crate::data::{Action, Trajectory, ACTION_DIM};
use crate::error::{Result, TdexError};
use crate::nn::{backward, forward, AdamHyper, NetSpec, ParamStore, Tensor};
use crate::policy::{Observation, Policy, PolicyStep, VisualFeaturizer};
use crate::represent::{Featurizer, TorqueAux};
use crate::seed::derive_seed_n;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch: usize,
    pub hyper: AdamHyper,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 150,
            batch: 64,
            hyper: AdamHyper {
                weight_decay: 0.0,
                ..AdamHyper::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BcPolicy {
    net: NetSpec,
    params: ParamStore,
    tactile_featurizer: Featurizer,
    visual_featurizer: VisualFeaturizer,
    last_commanded: Option<[f64; 16]>,
    /// Mean training loss per epoch, for reporting.
    pub losses: Vec<f64>,
}

const PREFIX: &str = "bc.";

impl BcPolicy {
    /// Regressed action with the quaternion slice renormalized.
    pub fn predict(&self, visual: &[f64], tactile: &[f64]) -> Result<Action> {
        let mut input = visual.to_vec();
        input.extend_from_slice(tactile);
        let x = Tensor::new(vec![1, input.len()], input)?;
        let (out, _) = forward(&self.net, &self.params, PREFIX, &x)?;
        Action::from_slice_renormalized(out.data())
    }
}

impl Policy for BcPolicy {
    fn act(&mut self, obs: &Observation) -> Result<PolicyStep> {
        let aux = TorqueAux {
            joints: obs.state.joints,
            desired_joints: self.last_commanded.unwrap_or(obs.state.joints),
            joint_velocities: [0.0; 16],
        };
        let tactile = self.tactile_featurizer.featurize(&obs.tactile, Some(&aux))?;
        let visual = self.visual_featurizer.featurize(obs.visual.as_deref());
        let action = self.predict(&visual, &tactile)?;
        self.last_commanded = Some(action.joints);
        Ok(PolicyStep {
            action,
            neighbor: None,
            distance: None,
        })
    }

    fn reset(&mut self) {
        self.last_commanded = None;
    }

    fn name(&self) -> String {
        "bc".into()
    }
}

/// Trains the regression end to end on every demo frame that carries an
/// action.
pub fn bc_train(
    demos: &[Trajectory],
    tactile_featurizer: Featurizer,
    visual_featurizer: VisualFeaturizer,
    cfg: &BcConfig,
) -> Result<BcPolicy> {
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    for demo in demos {
        let mut prev_commanded: Option<[f64; 16]> = None;
        for frame in demo.frames() {
            let Some(action) = &frame.action else {
                continue;
            };
            let aux = TorqueAux {
                joints: frame.state.joints,
                desired_joints: prev_commanded.unwrap_or(frame.state.joints),
                joint_velocities: [0.0; 16],
            };
            let tactile = tactile_featurizer.featurize(&frame.tactile, Some(&aux))?;
            let mut input = visual_featurizer.featurize(frame.visual_feature.as_deref());
            input.extend(tactile);
            inputs.push(input);
            targets.push(action.to_vec());
            prev_commanded = Some(action.joints);
        }
    }
    if inputs.is_empty() {
        return Err(TdexError::InvalidData("no actions in demos".into()));
    }
    let in_dim = inputs[0].len();
    if inputs.iter().any(|i| i.len() != in_dim) {
        return Err(TdexError::InvalidData(
            "inconsistent feature dimensions across demos".into(),
        ));
    }

    let net = NetSpec::mlp(&[in_dim, 256, 128, ACTION_DIM])?;
    let mut params = ParamStore::new();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed_n(cfg.seed, "bc-init", &[]));
    net.init_params(&mut params, PREFIX, &mut rng);

    let n = inputs.len();
    let batch = cfg.batch.max(1);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut order_rng =
            ChaCha12Rng::seed_from_u64(derive_seed_n(cfg.seed, "bc-order", &[epoch as u64]));
        order.shuffle(&mut order_rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(batch) {
            let bn = chunk.len();
            let mut xdata = Vec::with_capacity(bn * in_dim);
            let mut tdata = Vec::with_capacity(bn * ACTION_DIM);
            for &i in chunk {
                xdata.extend_from_slice(&inputs[i]);
                tdata.extend_from_slice(&targets[i]);
            }
            let x = Tensor::new(vec![bn, in_dim], xdata)?;
            let t = Tensor::new(vec![bn, ACTION_DIM], tdata)?;
            let (pred, tape) = forward(&net, &params, PREFIX, &x)?;

            // MSE over batch and dims; gradient 2*(pred - target)/numel
            let numel = (bn * ACTION_DIM) as f64;
            let mut loss = 0.0;
            let mut grad = Tensor::zeros(pred.shape().to_vec());
            for (k, (p, tv)) in pred.data().iter().zip(t.data()).enumerate() {
                let d = p - tv;
                loss += d * d;
                grad.data_mut()[k] = 2.0 * d / numel;
            }
            loss /= numel;
            let (grads, _) = backward(&net, &params, &tape, &grad)?;
            params.adam_step(&grads, &cfg.hyper)?;
            epoch_sum += loss * bn as f64;
        }
        losses.push(epoch_sum / n as f64);
    }

    Ok(BcPolicy {
        net,
        params,
        tactile_featurizer,
        visual_featurizer,
        last_commanded: None,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Frame, RobotState, TactileFrame, IDENTITY_QUAT};

    fn demo_with_constant_action(n: usize, action: Action) -> Trajectory {
        let frames = (0..n)
            .map(|i| Frame {
                t: i as f64 * 0.1,
                tactile: TactileFrame::zeros(),
                state: RobotState {
                    ee_pos: [0.0; 3],
                    ee_quat: IDENTITY_QUAT,
                    joints: [0.0; 16],
                    fingertips: [[0.0; 3]; 4],
                },
                visual_feature: Some(vec![i as f64 * 0.01, 1.0]),
                action: Some(action.clone()),
            })
            .collect();
        Trajectory::from_frames(frames).unwrap()
    }

    #[test]
    fn constant_action_is_learned() {
        let action = Action {
            ee_pos: [0.25, -0.1, 0.4],
            ee_quat: IDENTITY_QUAT,
            joints: [0.3; 16],
        };
        let demos = vec![demo_with_constant_action(40, action.clone())];
        let cfg = BcConfig {
            epochs: 120,
            batch: 16,
            seed: 1,
            ..BcConfig::default()
        };
        let policy = bc_train(&demos, Featurizer::Raw720, VisualFeaturizer::Precomputed, &cfg)
            .unwrap();
        assert!(policy.losses.last().unwrap() < &1e-4);
        let pred = policy.predict(&[0.2, 1.0], &vec![0.0; 720]).unwrap();
        let want = action.to_vec();
        let got = pred.to_vec();
        assert_eq!(got.len(), 23);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
        // quaternion slice is exactly unit norm after renormalization
        let qn: f64 = got[3..7].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((qn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_on_linear_synthetic_data() {
        // targets are a fixed linear map of the visual feature
        let mut frames = Vec::new();
        for i in 0..60 {
            let v = i as f64 / 60.0;
            let mut joints = [0.0; 16];
            for (k, j) in joints.iter_mut().enumerate() {
                *j = 0.5 * v + 0.01 * k as f64;
            }
            frames.push(Frame {
                t: i as f64 * 0.1,
                tactile: TactileFrame::zeros(),
                state: RobotState {
                    ee_pos: [0.0; 3],
                    ee_quat: IDENTITY_QUAT,
                    joints: [0.0; 16],
                    fingertips: [[0.0; 3]; 4],
                },
                visual_feature: Some(vec![v, 2.0 * v]),
                action: Some(Action {
                    ee_pos: [v, -v, 0.5 * v],
                    ee_quat: IDENTITY_QUAT,
                    joints,
                }),
            });
        }
        let demos = vec![Trajectory::from_frames(frames).unwrap()];
        let cfg = BcConfig {
            epochs: 40,
            batch: 8,
            seed: 2,
            ..BcConfig::default()
        };
        let policy = bc_train(
            &demos,
            Featurizer::SumPooled45,
            VisualFeaturizer::Precomputed,
            &cfg,
        )
        .unwrap();
        assert!(policy.losses.last().unwrap() < &policy.losses[0]);
    }

    #[test]
    fn empty_demos_are_an_error() {
        let cfg = BcConfig::default();
        assert!(bc_train(&[], Featurizer::Raw720, VisualFeaturizer::Precomputed, &cfg).is_err());
        let no_actions = vec![demo_with_constant_action(0, Action {
            ee_pos: [0.0; 3],
            ee_quat: IDENTITY_QUAT,
            joints: [0.0; 16],
        })];
        assert!(bc_train(
            &no_actions,
            Featurizer::Raw720,
            VisualFeaturizer::Precomputed,
            &cfg
        )
        .is_err());
    }
}
