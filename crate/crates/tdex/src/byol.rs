//! Bootstrap self-supervised pretraining of tactile encoders.
//!
//! An online branch (encoder -> projector -> optional predictor) predicts the
//! projection that a target branch (EMA copy of encoder + projector) produces
//! for a differently-augmented view of the same tactile image. Both outputs
//! are L2-normalized, the per-sample term is the squared distance between
//! them, and the loss is symmetrized over the two view orders. Only the
//! online branch receives gradients; the target follows by exponential
//! moving average.

use crate::augment::{augment, AugmentConfig};
use crate::data::TactileImage;
use crate::encoder::TactileEncoder;
use crate::error::{Result, TdexError};
use crate::nn::{backward, forward, norm_floor, AdamHyper, Gradients, NetSpec, ParamStore, Tensor};
use crate::seed::derive_seed_n;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const PROJECTOR_PREFIX: &str = "projector.";
pub const PREDICTOR_PREFIX: &str = "predictor.";

/// Projection head: the representation is lifted to a higher dimension.
pub const PROJECTOR_HIDDEN: usize = 128;
pub const PROJECTOR_OUT: usize = 256;
pub const PREDICTOR_HIDDEN: usize = 128;

#[derive(Clone, Debug)]
pub struct ByolState {
    pub encoder: TactileEncoder,
    pub projector: NetSpec,
    /// The prose description of the objective names only encoder and
    /// projector; the predictor is kept (standard collapse guard) but can be
    /// disabled to reproduce the literal two-head form.
    pub predictor: Option<NetSpec>,
    pub online: ParamStore,
    pub target: ParamStore,
    pub ema_tau: f64,
    pub step: u64,
}

impl ByolState {
    /// Initializes online parameters with a seeded RNG; the target starts as
    /// an exact copy of the online encoder + projector.
    pub fn new(
        encoder: TactileEncoder,
        ema_tau: f64,
        use_predictor: bool,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&ema_tau) {
            return Err(TdexError::InvalidArg(format!(
                "ema_tau must be in [0,1], got {ema_tau}"
            )));
        }
        let enc_dim = encoder.out_dim()?;
        let projector = NetSpec::mlp(&[enc_dim, PROJECTOR_HIDDEN, PROJECTOR_OUT])?;
        let predictor = use_predictor
            .then(|| NetSpec::mlp(&[PROJECTOR_OUT, PREDICTOR_HIDDEN, PROJECTOR_OUT]))
            .transpose()?;

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut online = ParamStore::new();
        encoder.net.init_params(&mut online, ENCODER_PREFIX, &mut rng);
        projector.init_params(&mut online, PROJECTOR_PREFIX, &mut rng);
        if let Some(pred) = &predictor {
            pred.init_params(&mut online, PREDICTOR_PREFIX, &mut rng);
        }

        // the target mirrors encoder + projector, starting as an exact copy
        let mut target = online.subset(ENCODER_PREFIX);
        let proj_names: Vec<String> = online
            .subset(PROJECTOR_PREFIX)
            .names()
            .map(String::from)
            .collect();
        for name in proj_names {
            let tensor = online.get(&name).expect("subset name").clone();
            target.insert(name, tensor);
        }

        Ok(ByolState {
            encoder,
            projector,
            predictor,
            online,
            target,
            ema_tau,
            step: 0,
        })
    }

    /// Target parameters follow the online ones: t <- tau*t + (1-tau)*online.
    pub fn ema_update(&mut self) -> Result<()> {
        self.target.ema_from(&self.online, self.ema_tau)
    }

    /// Online-branch prediction for one view batch.
    fn online_forward(&self, view: &Tensor) -> Result<(Tensor, OnlineTapes)> {
        let (y, tape_enc) = self
            .encoder
            .forward_batch(&self.online, ENCODER_PREFIX, view)?;
        let (z, tape_proj) = forward(&self.projector, &self.online, PROJECTOR_PREFIX, &y)?;
        match &self.predictor {
            Some(pred) => {
                let (p, tape_pred) = forward(pred, &self.online, PREDICTOR_PREFIX, &z)?;
                Ok((
                    p,
                    OnlineTapes {
                        enc: tape_enc,
                        proj: tape_proj,
                        pred: Some(tape_pred),
                    },
                ))
            }
            None => Ok((
                z,
                OnlineTapes {
                    enc: tape_enc,
                    proj: tape_proj,
                    pred: None,
                },
            )),
        }
    }

    /// Target-branch projection (no gradients flow here).
    fn target_forward(&self, view: &Tensor) -> Result<Tensor> {
        let (y, _) = self
            .encoder
            .forward_batch(&self.target, ENCODER_PREFIX, view)?;
        let (z, _) = forward(&self.projector, &self.target, PROJECTOR_PREFIX, &y)?;
        Ok(z)
    }

    fn backprop_online(
        &self,
        tapes: &OnlineTapes,
        grad_out: &Tensor,
    ) -> Result<Gradients> {
        let mut grads = Gradients::new();
        let mut g = grad_out.clone();
        if let (Some(pred), Some(tape)) = (&self.predictor, &tapes.pred) {
            let (gp, gx) = backward(pred, &self.online, tape, &g)?;
            grads.merge(gp);
            g = gx;
        }
        let (gp, gx) = backward(&self.projector, &self.online, &tapes.proj, &g)?;
        grads.merge(gp);
        let (ge, _) = self.encoder.backward_batch(&self.online, &tapes.enc, &gx)?;
        grads.merge(ge);
        Ok(grads)
    }
}

struct OnlineTapes {
    enc: crate::nn::Tape,
    proj: crate::nn::Tape,
    pred: Option<crate::nn::Tape>,
}

/// One directional term: mean-ready sum of ||p_bar - z_bar||^2 plus the
/// gradient of that sum with respect to the online predictions `p`.
fn directional_terms(p: &Tensor, z_target: &Tensor, inv_weight: f64) -> (f64, Tensor) {
    let (n, d) = (p.shape()[0], p.shape()[1]);
    let mut loss_sum = 0.0;
    let mut grad = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        let pr = p.row(i);
        let zr = z_target.row(i);
        let rp = norm_floor(pr);
        let rz = norm_floor(zr);
        // u = p/|p|, w = z/|z|, term = |u - w|^2
        let mut term = 0.0;
        let mut gu = vec![0.0; d];
        for k in 0..d {
            let u = pr[k] / rp;
            let w = zr[k] / rz;
            term += (u - w) * (u - w);
            gu[k] = 2.0 * (u - w) * inv_weight;
        }
        loss_sum += term;
        // pull the normalization Jacobian back onto p:
        // dL/dp = (gu - u (u . gu)) / |p|
        let mut dot = 0.0;
        for k in 0..d {
            dot += (pr[k] / rp) * gu[k];
        }
        let gr = grad.row_mut(i);
        for k in 0..d {
            gr[k] = (gu[k] - (pr[k] / rp) * dot) / rp;
        }
    }
    (loss_sum, grad)
}

/// Symmetrized bootstrap loss over two augmented view batches, with gradients
/// for every online parameter (target entries never appear).
pub fn byol_loss(state: &ByolState, view1: &Tensor, view2: &Tensor) -> Result<(f64, Gradients)> {
    let n = view1.shape()[0];
    if n == 0 || view2.shape()[0] == 0 {
        return Err(TdexError::EmptyDataset);
    }
    if view1.shape() != view2.shape() {
        return Err(TdexError::ShapeMismatch {
            layer: "byol views".into(),
            expected: format!("{:?}", view1.shape()),
            got: format!("{:?}", view2.shape()),
        });
    }
    let inv_weight = 1.0 / (2.0 * n as f64);

    let (p1, tapes1) = state.online_forward(view1)?;
    let z2 = state.target_forward(view2)?;
    let (sum1, g1) = directional_terms(&p1, &z2, inv_weight);
    let mut grads = state.backprop_online(&tapes1, &g1)?;

    let (p2, tapes2) = state.online_forward(view2)?;
    let z1 = state.target_forward(view1)?;
    let (sum2, g2) = directional_terms(&p2, &z1, inv_weight);
    grads.merge(state.backprop_online(&tapes2, &g2)?);

    Ok(((sum1 + sum2) * inv_weight, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub hyper: AdamHyper,
    pub ema_tau: f64,
    pub augment: AugmentConfig,
    pub use_predictor: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 15,
            batch: 64,
            hyper: AdamHyper::default(),
            ema_tau: 0.99,
            augment: AugmentConfig::default(),
            use_predictor: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    /// Online encoder parameters from the epoch with the lowest mean loss.
    pub encoder_params: ParamStore,
    pub losses: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Trains the encoder on a set of tactile images and keeps the epoch whose
/// mean training loss was lowest.
pub fn pretrain(
    images: &[TactileImage],
    encoder: TactileEncoder,
    cfg: &PretrainConfig,
) -> Result<PretrainResult> {
    if images.is_empty() {
        return Err(TdexError::EmptyDataset);
    }
    cfg.augment.validate()?;
    let mut state = ByolState::new(encoder, cfg.ema_tau, cfg.use_predictor, cfg.seed)?;

    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let batch = cfg.batch.max(1);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut order_rng =
            ChaCha12Rng::seed_from_u64(derive_seed_n(cfg.seed, "byol-order", &[epoch as u64]));
        order.shuffle(&mut order_rng);

        let mut epoch_sum = 0.0;
        for chunk in order.chunks(batch) {
            let mut views1 = Vec::with_capacity(chunk.len());
            let mut views2 = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                // per-sample streams keyed by (seed, epoch, sample): batch
                // composition cannot change the augmentations a sample sees
                let mut rng1 = ChaCha12Rng::seed_from_u64(derive_seed_n(
                    cfg.seed,
                    "byol-view1",
                    &[epoch as u64, idx as u64],
                ));
                let mut rng2 = ChaCha12Rng::seed_from_u64(derive_seed_n(
                    cfg.seed,
                    "byol-view2",
                    &[epoch as u64, idx as u64],
                ));
                views1.push(augment(&images[idx], &cfg.augment, &mut rng1));
                views2.push(augment(&images[idx], &cfg.augment, &mut rng2));
            }
            let refs1: Vec<&TactileImage> = views1.iter().collect();
            let refs2: Vec<&TactileImage> = views2.iter().collect();
            let batch1 = state.encoder.batch_tensor(&refs1)?;
            let batch2 = state.encoder.batch_tensor(&refs2)?;

            let (loss, grads) = byol_loss(&state, &batch1, &batch2)?;
            state.online.adam_step(&grads, &cfg.hyper)?;
            state.ema_update()?;
            state.step += 1;
            epoch_sum += loss * chunk.len() as f64;
        }
        let mean_loss = epoch_sum / images.len() as f64;
        losses.push(EpochLoss { epoch, mean_loss });
        let better = match &best {
            None => true,
            Some((best_loss, _, _)) => mean_loss < *best_loss,
        };
        if better {
            best = Some((mean_loss, epoch, state.online.subset(ENCODER_PREFIX)));
        }
    }

    let (_, best_epoch, encoder_params) =
        best.ok_or_else(|| TdexError::InvalidArg("epochs must be >= 1".into()))?;
    Ok(PretrainResult {
        encoder_params,
        losses,
        best_epoch,
    })
}
