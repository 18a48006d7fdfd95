//! Pipeline stages behind the CLI: dataset generation, ingestion,
//! pretraining, featurization, index building, rollouts, the ablation grid
//! and report aggregation. Everything is deterministic given the seed; a
//! repeated run overwrites byte-identical outputs.

use crate::bench::{
    evaluate, generate_demos, generate_play, ContactWorldSpec, Task,
};
use crate::byol::{EpochLoss, PretrainConfig};
use crate::config::RunConfig;
use crate::data::{TactileFrame, Trajectory};
use crate::error::{Result, TdexError};
use crate::ingest::{dataset_stats, motion_subsample, DatasetStats, SubsampleConfig};
use crate::io::{
    read_trajectory_dir, write_feature_matrix, write_trajectory_dir,
};
use crate::nn::{AdamHyper, Checkpoint};
use crate::policy::{
    bc_train, build_index, subsample_demos, BcConfig, FeatureIndex, NnPolicy,
    VisualFeaturizer, Weights,
};
use crate::represent::{pca_fit, CnnFeaturizer, Featurizer, PadPermutation, TorqueAux};
use crate::seed::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Strips a `.json`/`.bin` extension so checkpoint bases can be given either
/// way on the command line.
pub fn checkpoint_base(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenSummary {
    pub task: String,
    pub play_trajectories: usize,
    pub play_frames: usize,
    pub demos: usize,
    pub demo_frames: usize,
}

/// Generates play and demonstration datasets under `out/play` and
/// `out/demos`, plus a manifest.
pub fn gen_synth(
    task: Task,
    play_minutes: f64,
    n_demos: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<GenSummary> {
    let spec = ContactWorldSpec::new(task);
    let play = generate_play(&spec, play_minutes, derive_seed(seed, "play"))?;
    let demos = generate_demos(&spec, n_demos, derive_seed(seed, "demos"))?;
    write_trajectory_dir(&out_dir.join("play"), &play, "play")?;
    write_trajectory_dir(&out_dir.join("demos"), &demos, "demo")?;
    let summary = GenSummary {
        task: task.name().to_string(),
        play_trajectories: play.len(),
        play_frames: play.iter().map(Trajectory::len).sum(),
        demos: demos.len(),
        demo_frames: demos.iter().map(Trajectory::len).sum(),
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&json!({
            "task": summary.task,
            "seed": seed,
            "play_trajectories": summary.play_trajectories,
            "play_frames": summary.play_frames,
            "demos": summary.demos,
            "demo_frames": summary.demo_frames,
        }))?,
    )?;
    Ok(summary)
}

/// Motion-subsamples every trajectory in a directory and writes the retained
/// frames plus a stats report.
pub fn ingest_dir(in_dir: &Path, out_dir: &Path, threshold_m: f64) -> Result<DatasetStats> {
    let cfg = SubsampleConfig::new(threshold_m)?;
    let trajs = read_trajectory_dir(in_dir)?;
    fs::create_dir_all(out_dir)?;
    let mut reduced = Vec::with_capacity(trajs.len());
    for (name, traj) in &trajs {
        let kept = motion_subsample(traj, &cfg)?;
        let sub = traj.select(&kept);
        crate::io::write_trajectory(&out_dir.join(format!("{name}.jsonl")), &sub)?;
        reduced.push(sub);
    }
    let originals: Vec<Trajectory> = trajs.into_iter().map(|(_, t)| t).collect();
    let stats = dataset_stats(&originals, &cfg);
    fs::write(
        out_dir.join("stats.json"),
        serde_json::to_string_pretty(&stats)?,
    )?;
    Ok(stats)
}

/// All tactile frames of a trajectory set, in order.
pub fn tactile_frames(trajs: &[Trajectory]) -> Vec<TactileFrame> {
    trajs
        .iter()
        .flat_map(|t| t.frames().iter().map(|f| f.tactile.clone()))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainedFeaturizer {
    pub featurizer: Featurizer,
    pub losses: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Fits normalization stats on the given frames, pretrains the requested
/// encoder on their images, and wraps the best epoch as a featurizer. The
/// stats always come from the encoder's own training set and are recorded in
/// its checkpoint.
pub fn train_cnn_featurizer(
    frames: &[TactileFrame],
    arch: &str,
    permutation: Option<PadPermutation>,
    upscale: usize,
    cfg: &PretrainConfig,
) -> Result<TrainedFeaturizer> {
    if frames.is_empty() {
        return Err(TdexError::EmptyDataset);
    }
    let effective: Vec<TactileFrame> = match &permutation {
        Some(perm) => frames.iter().map(|f| perm.apply(f)).collect(),
        None => frames.to_vec(),
    };
    let stats = crate::data::fit_norm_stats(effective.iter())?;
    let images: Vec<crate::data::TactileImage> = effective
        .iter()
        .map(|f| crate::data::tactile_image(f, &stats, 0.0))
        .collect();
    let encoder = crate::encoder::TactileEncoder::from_arch_tag(arch, upscale)?;
    let outcome = crate::byol::pretrain(&images, encoder.clone(), cfg)?;
    let cnn = CnnFeaturizer {
        encoder,
        params: outcome.encoder_params,
        stats,
    };
    let featurizer = match (arch, permutation) {
        ("tdex3", None) => Featurizer::TdexImageCnn(cnn),
        ("tdex3", Some(permutation)) => Featurizer::ShuffledImageCnn { cnn, permutation },
        ("stacked", _) => Featurizer::Stacked45Cnn(cnn),
        ("shared", _) => Featurizer::SharedPerPadCnn(cnn),
        (other, _) => {
            return Err(TdexError::InvalidArg(format!(
                "unknown arch `{other}`"
            )))
        }
    };
    Ok(TrainedFeaturizer {
        featurizer,
        losses: outcome.losses,
        best_epoch: outcome.best_epoch,
    })
}

#[derive(Clone, Debug)]
pub struct PretrainOptions {
    pub arch: String,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub use_predictor: bool,
    pub upscale: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_tau: f64,
}

fn pretrain_config(opts: &PretrainOptions) -> PretrainConfig {
    PretrainConfig {
        epochs: opts.epochs,
        batch: opts.batch,
        hyper: AdamHyper {
            lr: opts.lr,
            weight_decay: opts.weight_decay,
            ..AdamHyper::default()
        },
        ema_tau: opts.ema_tau,
        augment: crate::augment::AugmentConfig::default(),
        use_predictor: opts.use_predictor,
        seed: opts.seed,
    }
}

/// Pretrains an encoder on every tactile frame under `data_dir`, saving the
/// featurizer checkpoint (`encoder.json/.bin`) and a per-epoch loss table.
pub fn pretrain_cmd(
    data_dir: &Path,
    opts: &PretrainOptions,
    out_dir: &Path,
) -> Result<TrainedFeaturizer> {
    let trajs = read_trajectory_dir(data_dir)?;
    if trajs.is_empty() {
        return Err(TdexError::EmptyDataset);
    }
    let frames: Vec<TactileFrame> = trajs
        .iter()
        .flat_map(|(_, t)| t.frames().iter().map(|f| f.tactile.clone()))
        .collect();
    let cfg = pretrain_config(opts);
    let trained = train_cnn_featurizer(&frames, &opts.arch, None, opts.upscale, &cfg)?;

    fs::create_dir_all(out_dir)?;
    let mut ckpt = trained.featurizer.to_checkpoint()?;
    ckpt.meta.insert("seed".into(), Value::from(opts.seed));
    ckpt.meta.insert("arch".into(), Value::from(opts.arch.clone()));
    ckpt.meta
        .insert("epochs".into(), Value::from(opts.epochs as u64));
    ckpt.meta
        .insert("best_epoch".into(), Value::from(trained.best_epoch as u64));
    ckpt.meta
        .insert("hyper".into(), serde_json::to_value(cfg.hyper)?);
    ckpt.meta.insert("ema_tau".into(), Value::from(cfg.ema_tau));
    ckpt.meta
        .insert("use_predictor".into(), Value::from(cfg.use_predictor));
    ckpt.save(&out_dir.join("encoder"))?;
    fs::write(out_dir.join("losses.tsv"), losses_tsv(&trained.losses))?;
    Ok(trained)
}

fn losses_tsv(losses: &[EpochLoss]) -> String {
    let mut out = String::from("epoch\tmean_loss\n");
    for l in losses {
        let _ = writeln!(out, "{}\t{}", l.epoch, l.mean_loss);
    }
    out
}

/// Builds a featurizer for a CLI variant tag, loading a checkpoint when the
/// variant carries state. For `pca_k` without a checkpoint, fits on the
/// given frames with the given k and returns the fitted model.
pub fn resolve_featurizer(
    variant: &str,
    ckpt: Option<&Path>,
    fit_frames: Option<(&[TactileFrame], usize)>,
) -> Result<Featurizer> {
    if let Some(path) = ckpt {
        let loaded = Featurizer::from_checkpoint(&Checkpoint::load(&checkpoint_base(path))?)?;
        if loaded.variant_tag() != variant {
            return Err(TdexError::InvalidArg(format!(
                "checkpoint holds variant `{}`, requested `{variant}`",
                loaded.variant_tag()
            )));
        }
        return Ok(loaded);
    }
    match variant {
        "raw_720" => Ok(Featurizer::Raw720),
        "sum_pooled_45" => Ok(Featurizer::SumPooled45),
        "torque_proxy" => Ok(Featurizer::TorqueProxy {
            kp: crate::represent::DEFAULT_KP,
            kd: crate::represent::DEFAULT_KD,
        }),
        "pca_k" => {
            let (frames, k) = fit_frames.ok_or_else(|| {
                TdexError::InvalidArg("pca_k needs --ckpt or data to fit on".into())
            })?;
            Ok(Featurizer::Pca(pca_fit(frames, k)?))
        }
        other => Err(TdexError::InvalidArg(format!(
            "variant `{other}` needs a --ckpt checkpoint"
        ))),
    }
}

/// Featurizes every frame under `data_dir` and writes a feature matrix.
/// Returns the number of rows written.
pub fn featurize_cmd(
    variant: &str,
    ckpt: Option<&Path>,
    data_dir: &Path,
    out_base: &Path,
    pca_k: usize,
) -> Result<usize> {
    let trajs = read_trajectory_dir(data_dir)?;
    if trajs.is_empty() {
        return Err(TdexError::EmptyDataset);
    }
    let frames: Vec<TactileFrame> = trajs
        .iter()
        .flat_map(|(_, t)| t.frames().iter().map(|f| f.tactile.clone()))
        .collect();
    let featurizer = resolve_featurizer(variant, ckpt, Some((&frames, pca_k)))?;
    if ckpt.is_none() && variant == "pca_k" {
        // keep the fitted model next to the features for reuse
        featurizer
            .to_checkpoint()?
            .save(&out_base.with_file_name("pca_model"))?;
    }

    let mut rows = Vec::new();
    for (_, traj) in &trajs {
        let mut prev_commanded: Option<[f64; 16]> = None;
        for frame in traj.frames() {
            let aux = TorqueAux {
                joints: frame.state.joints,
                desired_joints: prev_commanded.unwrap_or(frame.state.joints),
                joint_velocities: [0.0; 16],
            };
            rows.push(featurizer.featurize(&frame.tactile, Some(&aux))?);
            if let Some(action) = &frame.action {
                prev_commanded = Some(action.joints);
            }
        }
    }
    let mut meta = Map::new();
    meta.insert("variant".into(), Value::from(variant));
    meta.insert(
        "source".into(),
        Value::from(data_dir.display().to_string()),
    );
    write_feature_matrix(out_base, &rows, meta)?;
    Ok(rows.len())
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    task: String,
    variant: String,
    index: FeatureIndex,
}

/// Builds and saves a self-contained retrieval index directory: the feature
/// index plus the featurizer that produced it.
pub fn index_cmd(
    demos_dir: &Path,
    task: Task,
    variant: &str,
    ckpt: Option<&Path>,
    weights: Weights,
    threshold_m: f64,
    pca_k: usize,
    out_dir: &Path,
) -> Result<usize> {
    let named = read_trajectory_dir(demos_dir)?;
    if named.is_empty() {
        return Err(TdexError::MissingStage("gen-synth".into()));
    }
    let demos: Vec<Trajectory> = named.into_iter().map(|(_, t)| t).collect();
    let demos = subsample_demos(&demos, threshold_m)?;
    let demo_frames = tactile_frames(&demos);
    let featurizer = resolve_featurizer(variant, ckpt, Some((&demo_frames, pca_k)))?;
    let index = build_index(&demos, &featurizer, &VisualFeaturizer::Precomputed, weights)?;

    fs::create_dir_all(out_dir)?;
    featurizer
        .to_checkpoint()?
        .save(&out_dir.join("featurizer"))?;
    let file = IndexFile {
        task: task.name().to_string(),
        variant: featurizer.variant_tag().to_string(),
        index,
    };
    fs::write(
        out_dir.join("index.json"),
        serde_json::to_string(&file)?,
    )?;
    Ok(file.index.len())
}

pub fn load_index(dir: &Path) -> Result<(Task, Featurizer, FeatureIndex)> {
    let file: IndexFile = serde_json::from_str(
        &fs::read_to_string(dir.join("index.json"))
            .map_err(|_| TdexError::MissingStage("index".into()))?,
    )?;
    let mut index = file.index;
    index.rebuild_norm_cache();
    let featurizer = Featurizer::from_checkpoint(&Checkpoint::load(&dir.join("featurizer"))?)?;
    let task = Task::from_uri(&format!("synth:{}", file.task))?;
    Ok((task, featurizer, index))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub env: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

/// Runs closed-loop episodes against a saved index and writes per-step
/// records plus a summary.
pub fn rollout_cmd(
    index_dir: &Path,
    env_uri: &str,
    episodes: usize,
    seed: u64,
    reject_k: usize,
    weights_override: Option<Weights>,
    out_dir: &Path,
) -> Result<EvalSummary> {
    let env_task = Task::from_uri(env_uri)?;
    let (_, featurizer, mut index) = load_index(index_dir)?;
    if let Some(w) = weights_override {
        index.weights = w;
    }
    let spec = ContactWorldSpec::new(env_task);
    let mut policy = NnPolicy::new(
        index,
        featurizer,
        VisualFeaturizer::Precomputed,
        reject_k,
        "nn",
    );
    let outcome = evaluate(&spec, &mut policy, episodes, seed)?;

    fs::create_dir_all(out_dir)?;
    let mut lines = String::new();
    for (episode, record) in outcome.records.iter().enumerate() {
        for step in &record.steps {
            let _ = writeln!(
                lines,
                "{}",
                serde_json::to_string(&json!({
                    "episode": episode,
                    "step": step.step,
                    "neighbor": step.neighbor,
                    "distance": step.distance,
                    "action": step.action,
                }))?
            );
        }
    }
    fs::write(out_dir.join("steps.jsonl"), lines)?;
    let summary = EvalSummary {
        env: env_uri.to_string(),
        episodes,
        successes: outcome.successes,
        success_rate: outcome.success_rate(),
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub variants: Vec<VariantResult>,
    pub sweep: Vec<SweepPoint>,
}

fn rate(successes: usize, episodes: usize) -> f64 {
    if episodes == 0 {
        0.0
    } else {
        successes as f64 / episodes as f64
    }
}

/// Trained-featurizer cache so e.g. the combined policy, the tactile-only
/// baseline and behavior cloning share one play-pretrained encoder.
struct FeaturizerBank<'a> {
    cfg: &'a RunConfig,
    play_frames: &'a [TactileFrame],
    task_frames: &'a [TactileFrame],
    cache: BTreeMap<String, TrainedFeaturizer>,
}

impl<'a> FeaturizerBank<'a> {
    fn byol_cfg(&self, key: &str) -> PretrainConfig {
        PretrainConfig {
            epochs: self.cfg.epochs,
            batch: self.cfg.batch,
            hyper: AdamHyper {
                lr: self.cfg.lr,
                weight_decay: self.cfg.weight_decay,
                ..AdamHyper::default()
            },
            ema_tau: self.cfg.ema_tau,
            augment: crate::augment::AugmentConfig::default(),
            use_predictor: self.cfg.use_predictor,
            seed: derive_seed(self.cfg.seed, key),
        }
    }

    fn trained(
        &mut self,
        key: &str,
        frames: &[TactileFrame],
        arch: &str,
        permutation: Option<PadPermutation>,
    ) -> Result<TrainedFeaturizer> {
        if let Some(hit) = self.cache.get(key) {
            return Ok(hit.clone());
        }
        let cfg = self.byol_cfg(key);
        let trained =
            train_cnn_featurizer(frames, arch, permutation, self.cfg.upscale, &cfg)?;
        self.cache.insert(key.to_string(), trained.clone());
        Ok(trained)
    }

    fn play_tdex(&mut self) -> Result<TrainedFeaturizer> {
        let frames = self.play_frames;
        self.trained("byol-play-tdex3", frames, "tdex3", None)
    }

    fn task_tdex(&mut self) -> Result<TrainedFeaturizer> {
        let frames = self.task_frames;
        self.trained("byol-task-tdex3", frames, "tdex3", None)
    }
}

/// Runs the full representation/baseline grid and the play-data-fraction
/// sweep, writing `report.tsv`, `sweep.tsv`, per-variant episode records,
/// loss tables and the resolved config snapshot. Byte-identical under a
/// repeated (config, seed).
pub fn ablate(cfg: &RunConfig, out_dir: &Path) -> Result<AblateReport> {
    cfg.validate()?;
    let task = Task::from_uri(&format!("synth:{}", cfg.task))?;
    let spec = ContactWorldSpec::new(task);

    let load_stage = |dir: &Option<PathBuf>, stage: &str| -> Result<Vec<Trajectory>> {
        let dir = dir
            .as_ref()
            .ok_or_else(|| TdexError::MissingStage(stage.to_string()))?;
        let named = read_trajectory_dir(dir).map_err(|_| TdexError::MissingStage(stage.into()))?;
        if named.is_empty() {
            return Err(TdexError::MissingStage(stage.to_string()));
        }
        Ok(named.into_iter().map(|(_, t)| t).collect())
    };
    let play_raw = load_stage(&cfg.play_dir, "gen-synth")?;
    let demos_raw = load_stage(&cfg.demos_dir, "gen-synth")?;

    let play_cfg = SubsampleConfig::new(cfg.play_threshold_m)?;
    let play: Vec<Trajectory> = play_raw
        .iter()
        .map(|t| Ok(t.select(&motion_subsample(t, &play_cfg)?)))
        .collect::<Result<_>>()?;
    let demos = subsample_demos(&demos_raw, cfg.demo_threshold_m)?;

    let play_frames = tactile_frames(&play);
    let task_frames = tactile_frames(&demos);
    if play_frames.is_empty() || task_frames.is_empty() {
        return Err(TdexError::MissingStage("gen-synth".into()));
    }

    let mut bank = FeaturizerBank {
        cfg,
        play_frames: &play_frames,
        task_frames: &task_frames,
        cache: BTreeMap::new(),
    };
    let weights = Weights {
        visual: cfg.w_v,
        tactile: cfg.w_t,
    };
    let eval_seed = derive_seed(cfg.seed, "eval");
    fs::create_dir_all(out_dir)?;

    let mut report = AblateReport {
        variants: Vec::new(),
        sweep: Vec::new(),
    };
    let mut losses_by_variant: BTreeMap<String, Vec<EpochLoss>> = BTreeMap::new();

    for name in &cfg.variants {
        let (featurizer, variant_weights): (Featurizer, Weights) = match name.as_str() {
            "tdex" => (bank.play_tdex()?.featurizer, weights),
            "stacked" => (
                bank.trained("byol-play-stacked", &play_frames, "stacked", None)?
                    .featurizer,
                weights,
            ),
            "shared" => (
                bank.trained("byol-play-shared", &play_frames, "shared", None)?
                    .featurizer,
                weights,
            ),
            "raw" => (Featurizer::Raw720, weights),
            "pca" => (
                Featurizer::Pca(pca_fit(&play_frames, cfg.pca_k)?),
                weights,
            ),
            "sum_pooled" => (Featurizer::SumPooled45, weights),
            "shuffled" => {
                let permutation =
                    PadPermutation::from_seed(derive_seed(cfg.seed, "pad-permutation"));
                (
                    bank.trained(
                        "byol-play-shuffled",
                        &play_frames,
                        "tdex3",
                        Some(permutation),
                    )?
                    .featurizer,
                    weights,
                )
            }
            "torque" => (
                Featurizer::TorqueProxy {
                    kp: crate::represent::DEFAULT_KP,
                    kd: crate::represent::DEFAULT_KD,
                },
                weights,
            ),
            "image_only" => (
                // with zero tactile weight the tactile featurizer is inert;
                // the cheap raw featurizer avoids a needless pretraining
                Featurizer::Raw720,
                Weights {
                    visual: cfg.w_v,
                    tactile: 0.0,
                },
            ),
            "tactile_only" => (
                bank.play_tdex()?.featurizer,
                Weights {
                    visual: 0.0,
                    tactile: cfg.w_t,
                },
            ),
            "task_only" => (bank.task_tdex()?.featurizer, weights),
            "bc" => {
                let trained = bank.play_tdex()?;
                let bc_cfg = BcConfig {
                    seed: derive_seed(cfg.seed, "bc"),
                    ..BcConfig::default()
                };
                let mut policy = bc_train(
                    &demos,
                    trained.featurizer,
                    VisualFeaturizer::Precomputed,
                    &bc_cfg,
                )?;
                let outcome = evaluate(&spec, &mut policy, cfg.episodes, eval_seed)?;
                write_episode_records(out_dir, name, &outcome.records)?;
                report.variants.push(VariantResult {
                    name: name.clone(),
                    episodes: outcome.episodes,
                    successes: outcome.successes,
                });
                continue;
            }
            other => {
                return Err(TdexError::InvalidArg(format!(
                    "unknown ablation variant `{other}`"
                )))
            }
        };
        let index = build_index(&demos, &featurizer, &VisualFeaturizer::Precomputed, variant_weights)?;
        let mut policy = NnPolicy::new(
            index,
            featurizer,
            VisualFeaturizer::Precomputed,
            cfg.reject_k,
            name.clone(),
        );
        let outcome = evaluate(&spec, &mut policy, cfg.episodes, eval_seed)?;
        write_episode_records(out_dir, name, &outcome.records)?;
        report.variants.push(VariantResult {
            name: name.clone(),
            episodes: outcome.episodes,
            successes: outcome.successes,
        });
    }

    // play-data-fraction sweep: fraction 0 is the task-data-only encoder,
    // fraction 1 the full play encoder, intermediate fractions train on a
    // fixed shuffled prefix of the play frames
    if !cfg.fractions.is_empty() {
        let mut order: Vec<usize> = (0..play_frames.len()).collect();
        {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(derive_seed(
                cfg.seed,
                "play-order",
            ));
            order.shuffle(&mut rng);
        }
        for (i, &fraction) in cfg.fractions.iter().enumerate() {
            let featurizer = if fraction <= 0.0 {
                bank.task_tdex()?.featurizer
            } else if fraction >= 1.0 {
                bank.play_tdex()?.featurizer
            } else {
                let count = ((play_frames.len() as f64 * fraction).ceil() as usize).max(1);
                let subset: Vec<TactileFrame> = order[..count]
                    .iter()
                    .map(|&idx| play_frames[idx].clone())
                    .collect();
                bank.trained(&format!("byol-fraction-{i}"), &subset, "tdex3", None)?
                    .featurizer
            };
            let index =
                build_index(&demos, &featurizer, &VisualFeaturizer::Precomputed, weights)?;
            let mut policy = NnPolicy::new(
                index,
                featurizer,
                VisualFeaturizer::Precomputed,
                cfg.reject_k,
                format!("fraction-{fraction}"),
            );
            let outcome = evaluate(&spec, &mut policy, cfg.episodes, eval_seed)?;
            report.sweep.push(SweepPoint {
                fraction,
                episodes: outcome.episodes,
                successes: outcome.successes,
            });
        }
    }

    for (key, trained) in &bank.cache {
        losses_by_variant.insert(key.clone(), trained.losses.clone());
    }
    for (key, losses) in &losses_by_variant {
        fs::write(out_dir.join(format!("losses_{key}.tsv")), losses_tsv(losses))?;
    }

    let mut table = String::from("variant\tepisodes\tsuccesses\tsuccess_rate\n");
    for row in &report.variants {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{:.4}",
            row.name,
            row.episodes,
            row.successes,
            rate(row.successes, row.episodes)
        );
    }
    fs::write(out_dir.join("report.tsv"), table)?;

    let mut sweep_table = String::from("fraction\tepisodes\tsuccesses\tsuccess_rate\n");
    for row in &report.sweep {
        let _ = writeln!(
            sweep_table,
            "{}\t{}\t{}\t{:.4}",
            row.fraction,
            row.episodes,
            row.successes,
            rate(row.successes, row.episodes)
        );
    }
    fs::write(out_dir.join("sweep.tsv"), sweep_table)?;
    fs::write(out_dir.join("config.resolved"), cfg.format())?;
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

fn write_episode_records(
    out_dir: &Path,
    variant: &str,
    records: &[crate::policy::EpisodeRecord],
) -> Result<()> {
    let mut lines = String::new();
    for (episode, record) in records.iter().enumerate() {
        let _ = writeln!(
            lines,
            "{}",
            serde_json::to_string(&json!({
                "episode": episode,
                "success": record.success,
                "steps": record.steps,
            }))?
        );
    }
    fs::write(out_dir.join(format!("episodes_{variant}.jsonl")), lines)?;
    Ok(())
}

/// Aggregates completed run directories into plot-ready columnar files:
/// per-episode summary rows, success rates, loss curves and neighbor
/// distance traces. An empty run list produces header-only files.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut summary = String::from("run\tvariant\tepisode\tsuccess\tsteps\n");
    let mut rates = String::from("run\tvariant\tepisodes\tsuccesses\tsuccess_rate\n");
    let mut curves = String::from("run\tvariant\tepoch\tmean_loss\n");
    let mut traces = String::from("run\tvariant\tepisode\tstep\tdistance\n");

    for dir in run_dirs {
        let run = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let table = fs::read_to_string(dir.join("report.tsv")).map_err(|_| {
            TdexError::InvalidData(format!("malformed run dir {}: missing report.tsv", dir.display()))
        })?;
        for line in table.lines().skip(1) {
            if !line.trim().is_empty() {
                let _ = writeln!(rates, "{run}\t{line}");
            }
        }

        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in entries {
            let name = path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if let Some(variant) = name
                .strip_prefix("episodes_")
                .and_then(|n| n.strip_suffix(".jsonl"))
            {
                for line in fs::read_to_string(&path)?.lines() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let value: Value = serde_json::from_str(line)?;
                    let episode = value["episode"].as_u64().unwrap_or(0);
                    let success = value["success"].as_bool().unwrap_or(false);
                    let steps = value["steps"].as_array().cloned().unwrap_or_default();
                    let _ = writeln!(
                        summary,
                        "{run}\t{variant}\t{episode}\t{}\t{}",
                        success as u8,
                        steps.len()
                    );
                    for step in &steps {
                        if let Some(d) = step["distance"].as_f64() {
                            let _ = writeln!(
                                traces,
                                "{run}\t{variant}\t{episode}\t{}\t{d}",
                                step["step"].as_u64().unwrap_or(0)
                            );
                        }
                    }
                }
            } else if let Some(variant) = name
                .strip_prefix("losses_")
                .and_then(|n| n.strip_suffix(".tsv"))
            {
                for line in fs::read_to_string(&path)?.lines().skip(1) {
                    if !line.trim().is_empty() {
                        let _ = writeln!(curves, "{run}\t{variant}\t{line}");
                    }
                }
            }
        }
    }

    fs::write(out_dir.join("summary.tsv"), summary)?;
    fs::write(out_dir.join("rates.tsv"), rates)?;
    fs::write(out_dir.join("loss_curves.tsv"), curves)?;
    fs::write(out_dir.join("distance_traces.tsv"), traces)?;
    Ok(())
}
