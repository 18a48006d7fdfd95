//! The menu of tactile feature extractors behind one interface: the spatial
//! CNN and its stacked/shared/shuffled ablations, the raw 720-vector, PCA
//! features, per-pad sum pooling, and PD torque targets as a touch proxy.

mod pca;

pub use pca::{pca_fit, pca_project, PcaModel};

use crate::data::{
    tactile_image, NormStats, TactileFrame, NUM_AXES, NUM_PADS, PAD_COLS, PAD_ROWS,
};
use crate::encoder::TactileEncoder;
use crate::error::{Result, TdexError};
use crate::nn::{Checkpoint, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// A fixed reordering of the 15 pads, applied before the image layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadPermutation(pub [usize; NUM_PADS]);

impl PadPermutation {
    pub fn identity() -> Self {
        let mut p = [0usize; NUM_PADS];
        for (i, v) in p.iter_mut().enumerate() {
            *v = i;
        }
        PadPermutation(p)
    }

    /// Seeded Fisher-Yates shuffle; the same permutation must be used for
    /// pretraining and deployment.
    pub fn from_seed(seed: u64) -> Self {
        let mut p = Self::identity();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        p.0.shuffle(&mut rng);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; NUM_PADS];
        for &v in &self.0 {
            if v >= NUM_PADS || seen[v] {
                return Err(TdexError::InvalidData(format!(
                    "invalid pad permutation {:?}",
                    self.0
                )));
            }
            seen[v] = true;
        }
        Ok(())
    }

    pub fn apply(&self, frame: &TactileFrame) -> TactileFrame {
        frame.permute_pads(&self.0)
    }

    pub fn inverse(&self) -> PadPermutation {
        let mut inv = [0usize; NUM_PADS];
        for (i, &v) in self.0.iter().enumerate() {
            inv[v] = i;
        }
        PadPermutation(inv)
    }
}

/// PD position-controller torque targets: tau = kp*(q_des - q) - kd*qd.
/// Gravity compensation is out of scope.
pub fn pd_torque_targets(
    q: &[f64; 16],
    q_des: &[f64; 16],
    qd: &[f64; 16],
    kp: f64,
    kd: f64,
) -> Result<[f64; 16]> {
    if kp < 0.0 || kd < 0.0 {
        return Err(TdexError::InvalidArg(format!(
            "pd gains must be >= 0, got kp={kp}, kd={kd}"
        )));
    }
    let mut tau = [0.0; 16];
    for i in 0..16 {
        tau[i] = kp * (q_des[i] - q[i]) - kd * qd[i];
    }
    Ok(tau)
}

/// Auxiliary input for the torque-proxy featurizer: the measured joints plus
/// the pose the low-level controller is tracking.
#[derive(Clone, Debug, PartialEq)]
pub struct TorqueAux {
    pub joints: [f64; 16],
    pub desired_joints: [f64; 16],
    pub joint_velocities: [f64; 16],
}

/// A CNN encoder with its parameters and the normalization statistics it was
/// trained under.
#[derive(Clone, Debug)]
pub struct CnnFeaturizer {
    pub encoder: TactileEncoder,
    pub params: ParamStore,
    pub stats: NormStats,
}

impl CnnFeaturizer {
    fn features(&self, frame: &TactileFrame) -> Result<Vec<f64>> {
        let image = tactile_image(frame, &self.stats, 0.0);
        self.encoder.encode_one(&self.params, "encoder.", &image)
    }
}

#[derive(Clone, Debug)]
pub enum Featurizer {
    TdexImageCnn(CnnFeaturizer),
    Stacked45Cnn(CnnFeaturizer),
    SharedPerPadCnn(CnnFeaturizer),
    ShuffledImageCnn {
        cnn: CnnFeaturizer,
        permutation: PadPermutation,
    },
    Raw720,
    Pca(PcaModel),
    SumPooled45,
    TorqueProxy {
        kp: f64,
        kd: f64,
    },
}

impl Featurizer {
    pub fn variant_tag(&self) -> &'static str {
        match self {
            Featurizer::TdexImageCnn(_) => "tdex_image_cnn",
            Featurizer::Stacked45Cnn(_) => "stacked_45ch_cnn",
            Featurizer::SharedPerPadCnn(_) => "shared_per_pad_cnn",
            Featurizer::ShuffledImageCnn { .. } => "shuffled_image_cnn",
            Featurizer::Raw720 => "raw_720",
            Featurizer::Pca(_) => "pca_k",
            Featurizer::SumPooled45 => "sum_pooled_45",
            Featurizer::TorqueProxy { .. } => "torque_proxy",
        }
    }

    /// Output dimension, fixed per variant.
    pub fn dim(&self) -> Result<usize> {
        Ok(match self {
            Featurizer::TdexImageCnn(c)
            | Featurizer::Stacked45Cnn(c)
            | Featurizer::SharedPerPadCnn(c)
            | Featurizer::ShuffledImageCnn { cnn: c, .. } => c.encoder.out_dim()?,
            Featurizer::Raw720 => 720,
            Featurizer::Pca(model) => model.k(),
            Featurizer::SumPooled45 => 45,
            Featurizer::TorqueProxy { .. } => 16,
        })
    }

    /// Deterministic feature vector for one frame. `aux` is only consulted by
    /// the torque proxy.
    pub fn featurize(&self, frame: &TactileFrame, aux: Option<&TorqueAux>) -> Result<Vec<f64>> {
        match self {
            Featurizer::TdexImageCnn(c)
            | Featurizer::Stacked45Cnn(c)
            | Featurizer::SharedPerPadCnn(c) => c.features(frame),
            Featurizer::ShuffledImageCnn { cnn, permutation } => {
                cnn.features(&permutation.apply(frame))
            }
            Featurizer::Raw720 => Ok(frame.flattened().to_vec()),
            Featurizer::Pca(model) => model.project_vec(frame.flattened()),
            Featurizer::SumPooled45 => {
                // pad-major then axis: (pad0.x, pad0.y, pad0.z, pad1.x, ...)
                let mut out = vec![0.0; NUM_PADS * NUM_AXES];
                for pad in 0..NUM_PADS {
                    for axis in 0..NUM_AXES {
                        let mut sum = 0.0;
                        for row in 0..PAD_ROWS {
                            for col in 0..PAD_COLS {
                                sum += frame.get(pad, row, col, axis);
                            }
                        }
                        out[pad * NUM_AXES + axis] = sum;
                    }
                }
                Ok(out)
            }
            Featurizer::TorqueProxy { kp, kd } => {
                let aux = aux.ok_or(TdexError::MissingAux(
                    "torque_proxy",
                    "joints, desired joints and velocities",
                ))?;
                Ok(pd_torque_targets(
                    &aux.joints,
                    &aux.desired_joints,
                    &aux.joint_velocities,
                    *kp,
                    *kd,
                )?
                .to_vec())
            }
        }
    }

    /// Serializes everything needed to featurize at deployment time.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = serde_json::Map::new();
        meta.insert("variant".into(), Value::from(self.variant_tag()));
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        match self {
            Featurizer::TdexImageCnn(c)
            | Featurizer::Stacked45Cnn(c)
            | Featurizer::SharedPerPadCnn(c) => {
                pack_cnn(c, &mut meta, &mut tensors)?;
            }
            Featurizer::ShuffledImageCnn { cnn, permutation } => {
                pack_cnn(cnn, &mut meta, &mut tensors)?;
                meta.insert("permutation".into(), json!(permutation.0.to_vec()));
            }
            Featurizer::Raw720 | Featurizer::SumPooled45 => {}
            Featurizer::Pca(model) => {
                meta.insert("pca_k".into(), Value::from(model.k() as u64));
                tensors.push((
                    "pca.mean".into(),
                    Tensor::new(vec![model.dim()], model.mean().to_vec())?,
                ));
                let mut comps = Vec::with_capacity(model.k() * model.dim());
                for i in 0..model.k() {
                    comps.extend_from_slice(model.component(i));
                }
                tensors.push((
                    "pca.components".into(),
                    Tensor::new(vec![model.k(), model.dim()], comps)?,
                ));
                tensors.push((
                    "pca.explained_variance".into(),
                    Tensor::new(vec![model.k()], model.explained_variance().to_vec())?,
                ));
            }
            Featurizer::TorqueProxy { kp, kd } => {
                meta.insert("kp".into(), Value::from(*kp));
                meta.insert("kd".into(), Value::from(*kd));
            }
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Featurizer> {
        let variant = ckpt
            .meta_str("variant")
            .ok_or_else(|| TdexError::InvalidData("featurizer checkpoint lacks variant".into()))?;
        match variant {
            "tdex_image_cnn" => Ok(Featurizer::TdexImageCnn(unpack_cnn(ckpt)?)),
            "stacked_45ch_cnn" => Ok(Featurizer::Stacked45Cnn(unpack_cnn(ckpt)?)),
            "shared_per_pad_cnn" => Ok(Featurizer::SharedPerPadCnn(unpack_cnn(ckpt)?)),
            "shuffled_image_cnn" => {
                let perm: Vec<usize> = ckpt
                    .meta
                    .get("permutation")
                    .and_then(|v| serde_json::from_value(v.clone()).ok())
                    .ok_or_else(|| {
                        TdexError::InvalidData("shuffled checkpoint lacks permutation".into())
                    })?;
                let permutation = PadPermutation(perm.as_slice().try_into().map_err(|_| {
                    TdexError::InvalidData("permutation must have 15 entries".into())
                })?);
                permutation.validate()?;
                Ok(Featurizer::ShuffledImageCnn {
                    cnn: unpack_cnn(ckpt)?,
                    permutation,
                })
            }
            "raw_720" => Ok(Featurizer::Raw720),
            "sum_pooled_45" => Ok(Featurizer::SumPooled45),
            "pca_k" => {
                let mean = need_tensor(ckpt, "pca.mean")?;
                let comps = need_tensor(ckpt, "pca.components")?;
                let ev = need_tensor(ckpt, "pca.explained_variance")?;
                Ok(Featurizer::Pca(PcaModel::from_parts(
                    mean.data().to_vec(),
                    comps.data().to_vec(),
                    ev.data().to_vec(),
                )?))
            }
            "torque_proxy" => {
                let get = |k: &str| ckpt.meta.get(k).and_then(Value::as_f64);
                Ok(Featurizer::TorqueProxy {
                    kp: get("kp").unwrap_or(DEFAULT_KP),
                    kd: get("kd").unwrap_or(DEFAULT_KD),
                })
            }
            other => Err(TdexError::InvalidData(format!(
                "unknown featurizer variant `{other}`"
            ))),
        }
    }
}

pub const DEFAULT_KP: f64 = 4.0;
pub const DEFAULT_KD: f64 = 0.2;

fn pack_cnn(
    cnn: &CnnFeaturizer,
    meta: &mut serde_json::Map<String, Value>,
    tensors: &mut Vec<(String, Tensor)>,
) -> Result<()> {
    meta.insert("encoder".into(), serde_json::to_value(&cnn.encoder)?);
    meta.insert("stats".into(), serde_json::to_value(&cnn.stats)?);
    for name in cnn.params.names() {
        tensors.push((name.to_string(), cnn.params.get(name).unwrap().clone()));
    }
    Ok(())
}

fn unpack_cnn(ckpt: &Checkpoint) -> Result<CnnFeaturizer> {
    let encoder: TactileEncoder = serde_json::from_value(
        ckpt.meta
            .get("encoder")
            .cloned()
            .ok_or_else(|| TdexError::InvalidData("checkpoint lacks encoder spec".into()))?,
    )?;
    let stats: NormStats = serde_json::from_value(
        ckpt.meta
            .get("stats")
            .cloned()
            .ok_or_else(|| TdexError::InvalidData("checkpoint lacks norm stats".into()))?,
    )?;
    let mut params = ParamStore::new();
    for (name, tensor) in &ckpt.tensors {
        if name.starts_with("encoder.") {
            params.insert(name.clone(), tensor.clone());
        }
    }
    if params.is_empty() {
        return Err(TdexError::InvalidData(
            "checkpoint has no encoder parameters".into(),
        ));
    }
    Ok(CnnFeaturizer {
        encoder,
        params,
        stats,
    })
}

fn need_tensor<'c>(ckpt: &'c Checkpoint, name: &str) -> Result<&'c Tensor> {
    ckpt.tensor(name)
        .ok_or_else(|| TdexError::InvalidData(format!("checkpoint lacks tensor {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FRAME_LEN;
    use rand::Rng;

    fn random_frame(seed: u64) -> TactileFrame {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        TactileFrame::from_values((0..FRAME_LEN).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap()
    }

    fn cnn_featurizer(seed: u64) -> CnnFeaturizer {
        let encoder = TactileEncoder::tdex3(16).unwrap();
        let mut params = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        encoder.net.init_params(&mut params, "encoder.", &mut rng);
        CnnFeaturizer {
            encoder,
            params,
            stats: NormStats::identity(),
        }
    }

    #[test]
    fn raw_is_pad_major_flatten() {
        let frame =
            TactileFrame::from_values((0..FRAME_LEN).map(|i| i as f64).collect()).unwrap();
        let out = Featurizer::Raw720.featurize(&frame, None).unwrap();
        assert_eq!(out.len(), 720);
        assert!(out.iter().enumerate().all(|(i, &v)| v == i as f64));
    }

    #[test]
    fn sum_pooled_constant_and_ordering() {
        let frame = TactileFrame::from_values(vec![0.25; FRAME_LEN]).unwrap();
        let out = Featurizer::SumPooled45.featurize(&frame, None).unwrap();
        assert_eq!(out.len(), 45);
        assert!(out.iter().all(|&v| (v - 16.0 * 0.25).abs() < 1e-12));

        // pad-major then axis ordering
        let mut frame = TactileFrame::zeros();
        for row in 0..PAD_ROWS {
            for col in 0..PAD_COLS {
                frame.set(3, row, col, 1, 2.0);
            }
        }
        let out = Featurizer::SumPooled45.featurize(&frame, None).unwrap();
        for (i, &v) in out.iter().enumerate() {
            let expect = if i == 3 * 3 + 1 { 32.0 } else { 0.0 };
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn shuffled_with_identity_matches_base() {
        let cnn = cnn_featurizer(1);
        let frame = random_frame(2);
        let base = Featurizer::TdexImageCnn(cnn.clone())
            .featurize(&frame, None)
            .unwrap();
        let shuffled = Featurizer::ShuffledImageCnn {
            cnn,
            permutation: PadPermutation::identity(),
        }
        .featurize(&frame, None)
        .unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn permutation_train_test_consistency() {
        // with tied weights, the shuffled featurizer on inverse-permuted data
        // reproduces the base featurizer on the original data
        let cnn = cnn_featurizer(3);
        let perm = PadPermutation::from_seed(11);
        let frame = random_frame(4);
        let base = Featurizer::TdexImageCnn(cnn.clone())
            .featurize(&frame, None)
            .unwrap();
        let pre_permuted = perm.inverse().apply(&frame);
        let shuffled = Featurizer::ShuffledImageCnn {
            cnn,
            permutation: perm,
        }
        .featurize(&pre_permuted, None)
        .unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn permutation_basics() {
        let perm = PadPermutation::from_seed(5);
        perm.validate().unwrap();
        assert_ne!(perm, PadPermutation::identity());
        let inv = perm.inverse();
        let frame = random_frame(6);
        assert_eq!(inv.apply(&perm.apply(&frame)), frame);
        assert!(PadPermutation([0; NUM_PADS]).validate().is_err());
    }

    #[test]
    fn torque_proxy_math_and_errors() {
        let f = Featurizer::TorqueProxy { kp: 1.0, kd: 0.0 };
        assert!(matches!(
            f.featurize(&TactileFrame::zeros(), None),
            Err(TdexError::MissingAux(_, _))
        ));

        let mut aux = TorqueAux {
            joints: [0.0; 16],
            desired_joints: [0.0; 16],
            joint_velocities: [0.0; 16],
        };
        // q = q_des, qd = 0 -> zero torques
        let out = f.featurize(&TactileFrame::zeros(), Some(&aux)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        // kp=1, kd=0: tau = error
        aux.desired_joints[4] = 0.5;
        let out = f.featurize(&TactileFrame::zeros(), Some(&aux)).unwrap();
        assert_eq!(out[4], 0.5);

        // random case against the elementwise formula
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut rand16 = || {
            let mut a = [0.0; 16];
            for v in a.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            a
        };
        let (q, qd, qdes) = (rand16(), rand16(), rand16());
        let tau = pd_torque_targets(&q, &qdes, &qd, 3.0, 0.7).unwrap();
        for i in 0..16 {
            assert!((tau[i] - (3.0 * (qdes[i] - q[i]) - 0.7 * qd[i])).abs() < 1e-15);
        }
        assert!(pd_torque_targets(&q, &qdes, &qd, -1.0, 0.0).is_err());
    }

    #[test]
    fn featurizers_are_deterministic() {
        let frame = random_frame(8);
        for f in [
            Featurizer::TdexImageCnn(cnn_featurizer(9)),
            Featurizer::Raw720,
            Featurizer::SumPooled45,
        ] {
            let a = f.featurize(&frame, None).unwrap();
            let b = f.featurize(&frame, None).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), f.dim().unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip_all_variants() {
        let dir = tempfile::tempdir().unwrap();
        let frame = random_frame(10);
        let frames: Vec<TactileFrame> = (0..12).map(random_frame).collect();
        let variants = vec![
            Featurizer::TdexImageCnn(cnn_featurizer(11)),
            Featurizer::ShuffledImageCnn {
                cnn: cnn_featurizer(12),
                permutation: PadPermutation::from_seed(13),
            },
            Featurizer::Raw720,
            Featurizer::SumPooled45,
            Featurizer::Pca(pca_fit(&frames, 5).unwrap()),
            Featurizer::TorqueProxy { kp: 2.0, kd: 0.1 },
        ];
        let aux = TorqueAux {
            joints: [0.1; 16],
            desired_joints: [0.3; 16],
            joint_velocities: [0.0; 16],
        };
        for (i, f) in variants.into_iter().enumerate() {
            let base = dir.path().join(format!("f{i}"));
            f.to_checkpoint().unwrap().save(&base).unwrap();
            let back = Featurizer::from_checkpoint(&Checkpoint::load(&base).unwrap()).unwrap();
            assert_eq!(back.variant_tag(), f.variant_tag());
            let a = f.featurize(&frame, Some(&aux)).unwrap();
            let b = back.featurize(&frame, Some(&aux)).unwrap();
            // parameters go through f32 storage; features match to f32 grain
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-4, "variant {} drifted", f.variant_tag());
            }
        }
    }
}
