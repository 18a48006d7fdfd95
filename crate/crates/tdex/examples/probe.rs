// Scratch probe for tuning the benchmark; not part of the deliverable.

use tdex::bench::*;
use tdex::byol::PretrainConfig;
use tdex::config::RunConfig;
use tdex::data::fit_norm_stats;
use tdex::pipeline::{tactile_frames, train_cnn_featurizer};
use tdex::policy::*;
use tdex::represent::Featurizer;
use tdex::seed::derive_seed;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    if which == "purity" || which == "all" {
        let t0 = std::time::Instant::now();
        purity_probe();
        println!("purity probe took {:?}", t0.elapsed());
    }
    if which == "ordering" || which == "all" {
        let t1 = std::time::Instant::now();
        ordering_probe();
        println!("ordering probe took {:?}", t1.elapsed());
    }
}

/// Feature spread (collapse check) and retrieval diagnostics for an encoder.
fn diagnose(label: &str, feat: &Featurizer, demos: &[tdex::data::Trajectory], spec: &ContactWorldSpec) {
    let index = build_index(demos, feat, &VisualFeaturizer::Precomputed, Weights::default()).unwrap();
    // feature spread across index rows
    let dim = index.tactile_dim();
    let n = index.len();
    let mut mean = vec![0.0; dim];
    for row in index.rows() {
        for (m, v) in mean.iter_mut().zip(&row.tactile) {
            *m += v / n as f64;
        }
    }
    let mut var = 0.0;
    for row in index.rows() {
        for (m, v) in mean.iter().zip(&row.tactile) {
            var += (v - m) * (v - m);
        }
    }
    println!("  [{label}] tactile feature rms-spread: {:.4}", (var / n as f64).sqrt());

    // retrieval: for eval-style contact queries at known (mode, p), check the
    // retrieved action's implied mode/progress
    use rand::SeedableRng;
    let mut mode_hits = 0usize;
    let mut p_err_sum = 0.0;
    let mut count = 0usize;
    for mode in 0..spec.task.n_modes() {
        for pi in 0..10 {
            let p = pi as f64 / 9.0 * 0.9;
            for (gi, gain) in [0.75, 1.0, 1.25].iter().enumerate() {
                let init = EpisodeInit { obj: [0.5, 0.5], mode, gain: *gain };
                let mut env = ContactWorld::new(spec, spec.eval.clone(), init, 1000 + (mode * 100 + pi * 10 + gi) as u64);
                // force a contact state at progress p with on-script joints
                env_force_contact(&mut env, p, spec, mode);
                let obs = env.observe_now();
                let q = feat.featurize(&obs.tactile, None).unwrap();
                let vis = vec![0.0; index.visual_dim()];
                let hit = index.nn_query(&vis, &q, &mut RejectBuffer::new(0)).unwrap();
                // implied mode/progress of the retrieved action
                let mut best = (usize::MAX, f64::INFINITY, 0.0);
                for m2 in 0..spec.task.n_modes() {
                    for pj in 0..=20 {
                        let p2 = pj as f64 / 20.0;
                        let pose = spec.script(m2).pose(p2);
                        let d: f64 = hit.action.joints.iter().zip(&pose).map(|(a, b)| (a - b) * (a - b)).sum();
                        if d < best.1 {
                            best = (m2, d, p2);
                        }
                    }
                }
                if best.0 == mode {
                    mode_hits += 1;
                    p_err_sum += (best.2 - p).abs();
                }
                count += 1;
            }
        }
    }
    println!(
        "  [{label}] retrieval: mode acc {:.2}, mean |dp| {:.3} (tactile-only queries)",
        mode_hits as f64 / count as f64,
        p_err_sum / mode_hits.max(1) as f64
    );
    let _ = rand_chacha::ChaCha12Rng::seed_from_u64(0);
}

fn env_force_contact(env: &mut ContactWorld, p: f64, spec: &ContactWorldSpec, mode: usize) {
    // drive to the object then walk the script to progress p
    let init_obj = env.init().obj;
    let approach = tdex::data::Action {
        ee_pos: [init_obj[0], init_obj[1], HAND_Z],
        ee_quat: tdex::data::IDENTITY_QUAT,
        joints: [0.0; 16],
    };
    for _ in 0..60 {
        if !matches!(env.phase(), Phase::Approach) {
            break;
        }
        env.step_now(&approach);
    }
    while env.progress() + 1e-9 < p && !matches!(env.phase(), Phase::Done) {
        let next = (env.progress() + spec.script_step).min(1.0);
        let a = tdex::data::Action {
            ee_pos: [init_obj[0], init_obj[1], HAND_Z],
            ee_quat: tdex::data::IDENTITY_QUAT,
            joints: spec.script(mode).pose(next),
        };
        env.step_now(&a);
        if next >= 1.0 {
            break;
        }
    }
}

fn purity_probe() {
    let (frames, labels) = clustered_tactile(4, 60, 17);
    let raw: Vec<Vec<f64>> = frames.iter().map(|f| f.flattened().to_vec()).collect();
    println!("raw purity: {:.3}", nn_purity(&raw, &labels));

    // untrained encoder purity
    let stats = fit_norm_stats(frames.iter()).unwrap();
    let enc = tdex::encoder::TactileEncoder::tdex3(16).unwrap();
    let mut params = tdex::nn::ParamStore::new();
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
    enc.net.init_params(&mut params, "encoder.", &mut rng);
    let untrained: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| {
            let img = tdex::data::tactile_image(f, &stats, 0.0);
            enc.encode_one(&params, "encoder.", &img).unwrap()
        })
        .collect();
    println!("untrained encoder purity: {:.3}", nn_purity(&untrained, &labels));

    // BYOL-trained encoder purity
    let cfg = PretrainConfig {
        epochs: 30,
        batch: 64,
        seed: 5,
        ..PretrainConfig::default()
    };
    let t = std::time::Instant::now();
    let trained = train_cnn_featurizer(&frames, "tdex3", None, 16, &cfg).unwrap();
    println!("pretrain took {:?} (losses {:?} -> {:?}, best {})",
        t.elapsed(), trained.losses.first().map(|l| l.mean_loss),
        trained.losses.last().map(|l| l.mean_loss), trained.best_epoch);
    let feats: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| trained.featurizer.featurize(f, None).unwrap())
        .collect();
    println!("trained encoder purity: {:.3}", nn_purity(&feats, &labels));
}

fn ordering_probe() {
    let cfg = RunConfig {
        play_minutes: 2.0,
        epochs: 10,
        episodes: 50,
        ..RunConfig::default()
    };
    let spec = ContactWorldSpec::new(Task::Grasp);
    let seed = cfg.seed;

    let t = std::time::Instant::now();
    let play = generate_play(&spec, cfg.play_minutes, derive_seed(seed, "play")).unwrap();
    let demos_raw = generate_demos(&spec, 6, derive_seed(seed, "demos")).unwrap();
    println!("gen took {:?}; play eps {}, demo frames {:?}", t.elapsed(), play.len(),
        demos_raw.iter().map(|d| d.len()).collect::<Vec<_>>());

    let play_sub: Vec<_> = play
        .iter()
        .map(|t| {
            let k = tdex::ingest::motion_subsample(t, &tdex::ingest::SubsampleConfig::new(0.01).unwrap()).unwrap();
            t.select(&k)
        })
        .collect();
    let demos = subsample_demos(&demos_raw, 0.02).unwrap();
    println!(
        "play frames {} -> {}, demo rows {:?}",
        play.iter().map(|t| t.len()).sum::<usize>(),
        play_sub.iter().map(|t| t.len()).sum::<usize>(),
        demos.iter().map(|d| d.len()).collect::<Vec<_>>()
    );

    let play_frames = tactile_frames(&play_sub);
    let task_frames = tactile_frames(&demos);

    let byol = |sd: &str| PretrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        seed: derive_seed(seed, sd),
        ..PretrainConfig::default()
    };
    let t = std::time::Instant::now();
    let play_enc = train_cnn_featurizer(&play_frames, "tdex3", None, 16, &byol("p")).unwrap();
    println!("play pretrain ({} frames) took {:?}", play_frames.len(), t.elapsed());
    let task_enc = train_cnn_featurizer(&task_frames, "tdex3", None, 16, &byol("t")).unwrap();

    diagnose("play-encoder", &play_enc.featurizer, &demos, &spec);
    diagnose("task-encoder", &task_enc.featurizer, &demos, &spec);
    diagnose("raw", &Featurizer::Raw720, &demos, &spec);

    let eval_seed = derive_seed(seed, "eval");
    let run = |label: &str, feat: Featurizer, w: Weights| {
        let index = build_index(&demos, &feat, &VisualFeaturizer::Precomputed, w).unwrap();
        let mut policy = NnPolicy::new(index, feat, VisualFeaturizer::Precomputed, 10, label);
        let out = evaluate(&spec, &mut policy, cfg.episodes, eval_seed).unwrap();
        println!("{label}: {:.2} ({}/{})", out.success_rate(), out.successes, out.episodes);
        out.success_rate()
    };

    let expert = evaluate_expert(&spec, cfg.episodes, eval_seed).unwrap();
    println!("expert: {:.2}", expert.success_rate());

    // failure-mode breakdown for the combined policy
    {
        let index = build_index(&demos, &play_enc.featurizer, &VisualFeaturizer::Precomputed, Weights::default()).unwrap();
        let mut policy = NnPolicy::new(index, play_enc.featurizer.clone(), VisualFeaturizer::Precomputed, 10, "x");
        let inits = initial_states(&spec, cfg.episodes, eval_seed);
        let mut never_contact = 0;
        let mut stalled = vec![];
        for (i, init) in inits.iter().enumerate() {
            let mut env = ContactWorld::new(&spec, spec.eval.clone(), *init, tdex::seed::derive_seed_n(eval_seed, "eval-env", &[i as u64]));
            policy.reset();
            let _ = rollout(&mut policy, &mut env, spec.eval.max_steps).unwrap();
            if !env.succeeded() {
                if matches!(env.phase(), Phase::Approach) {
                    never_contact += 1;
                } else {
                    stalled.push((i, env.progress(), init.gain, init.mode));
                }
            }
        }
        println!("combined failures: never-contact {}, stalled {:?}", never_contact, stalled);
    }

    let w = Weights::default();
    run("combined(play)", play_enc.featurizer.clone(), w);
    run("image-only", Featurizer::Raw720, Weights { visual: 1.0, tactile: 0.0 });
    run("tactile-only", play_enc.featurizer.clone(), Weights { visual: 0.0, tactile: 1.0 });
    run("task-only", task_enc.featurizer.clone(), w);
    run("raw", Featurizer::Raw720, w);
    run("sum_pooled", Featurizer::SumPooled45, w);
    run("torque", Featurizer::TorqueProxy { kp: 4.0, kd: 0.2 }, w);

    let bc_cfg = BcConfig { seed: derive_seed(seed, "bc"), ..BcConfig::default() };
    let mut bc = bc_train(&demos, play_enc.featurizer.clone(), VisualFeaturizer::Precomputed, &bc_cfg).unwrap();
    let out = evaluate(&spec, &mut bc, cfg.episodes, eval_seed).unwrap();
    println!("bc: {:.2} ({}/{})", out.success_rate(), out.successes, out.episodes);
}
