//! The four subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use condvid::checkpoint::{read_checkpoint, write_checkpoint};
use condvid::datasets::{
    apply_split, build_split, generate_synthetic, ingest_clip_directory, oracle_label,
    write_corpus, LabeledCorpus,
};
use condvid::evaluation::{
    classification_report, compute_fid, load_suite, save_suite, train_classifiers,
    ClassifierSuite, ClassifierTrainConfig,
};
use condvid::rng::{sample_seed, seed_stream};
use condvid::training::{train_loop, LossReport, TrainState};
use condvid::{Config, DatasetProfile, Error, LabelPair, Result, VideoClip};
use rand::Rng;
use serde_json::json;

use crate::manifest::{create_run_dir, RunManifest};
use crate::media;
use crate::{EvalArgs, GenerateArgs, PrepareArgs, TrainArgs};

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::from_path(p),
        None => Ok(Config::default()),
    }
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(name) = &args.profile {
        cfg.profile = name.clone();
    }
    let profile = cfg.profile()?;
    let mc = cfg.model_config(&profile)?;
    let split = build_split(mc.motion_classes, mc.content_classes)?;

    let run_dir = create_run_dir(args.out.out.as_deref(), &args.out.out_root, "prepare", args.seed)?;

    let corpus_dir;
    let corpus;
    if profile.name == "synthetic" {
        if args.root.is_some() {
            return Err(Error::invalid(
                "the synthetic profile generates its corpus; --root only applies to ingestion profiles",
            ));
        }
        corpus = generate_synthetic(&profile, cfg.frames, args.clips_per_combo, args.seed)?;
        corpus_dir = run_dir.join("corpus");
        write_corpus(&corpus, &corpus_dir)?;
        println!(
            "generated {} clips ({} per combination) under {}",
            corpus.len(),
            args.clips_per_combo,
            corpus_dir.display()
        );
    } else {
        let root = args.root.as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "profile '{}' ingests preprocessed clips; pass --root <dir>",
                profile.name
            ))
        })?;
        let (ingested, warnings) = ingest_clip_directory(root, &profile, cfg.frames)?;
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        if ingested.is_empty() {
            return Err(Error::data(format!(
                "{}: no usable clips found",
                root.display()
            )));
        }
        corpus = ingested;
        corpus_dir = std::fs::canonicalize(root)?;
        println!("indexed {} clips under {}", corpus.len(), corpus_dir.display());
    }

    let (train_corpus, held_out) = apply_split(&corpus, &split)?;
    println!(
        "split: {} training clips, {} held-out combinations",
        train_corpus.len(),
        held_out.len()
    );
    for pair in &held_out {
        println!(
            "  held out: motion {} + content {}",
            profile.motion_class_names[pair.motion], profile.content_class_names[pair.content]
        );
    }

    let config_path = run_dir.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml())?;
    std::fs::write(run_dir.join("split.json"), split.to_json())?;
    RunManifest {
        profile: profile.name.clone(),
        seed: args.seed,
        config_path,
        corpus_dir,
        split,
        checkpoints: Vec::new(),
        metrics_path: None,
    }
    .save(&run_dir)?;
    println!("prepare run written to {}", run_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn next_boundary(step: u64, every: u64, target: u64) -> u64 {
    let next = (step / every + 1) * every;
    next.min(target)
}

fn export_sample_grid(state: &TrainState, dir: &Path) -> Result<()> {
    let pairs = state.split.training_pairs();
    let n = pairs.len().min(8);
    let mut rng = seed_stream(
        state.master_seed.wrapping_add(state.step),
        "cli/sample-grid",
    );
    let mut clips = Vec::with_capacity(n);
    for pair in pairs.into_iter().take(n) {
        let latent = sample_seed(&state.config, pair, rng.random())?;
        clips.push(state.generator.generate_video(&latent)?);
    }
    let refs: Vec<&VideoClip> = clips.iter().collect();
    media::write_grid(&refs, &dir.join(format!("step-{:06}.png", state.step)))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let data = RunManifest::load(&args.data)?;
    let cfg = match &args.config {
        Some(p) => Config::from_path(p)?,
        None => Config::from_path(&data.config_path)?,
    };
    let profile = cfg.profile()?;
    let mc = cfg.model_config(&profile)?;

    let (corpus, warnings) = ingest_clip_directory(&data.corpus_dir, &profile, cfg.frames)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let (train_corpus, _) = apply_split(&corpus, &data.split)?;
    if train_corpus.is_empty() {
        return Err(Error::data("no training clips remain after applying the split"));
    }

    let mut state = match &args.resume {
        Some(path) => {
            let state = read_checkpoint(path)?;
            if state.config != mc {
                return Err(Error::Config(
                    "checkpoint hyperparameters differ from the requested config".into(),
                ));
            }
            if state.split != data.split {
                return Err(Error::Config(
                    "checkpoint split differs from the prepared split".into(),
                ));
            }
            println!("resumed from {} at step {}", path.display(), state.step);
            state
        }
        None => TrainState::new(&mc, &data.split, args.seed)?,
    };

    let run_dir = create_run_dir(args.out.out.as_deref(), &args.out.out_root, "train", state.master_seed)?;
    let ckpt_dir = run_dir.join("checkpoints");
    let samples_dir = run_dir.join("samples");
    std::fs::create_dir_all(&ckpt_dir)?;
    std::fs::create_dir_all(&samples_dir)?;

    let config_path = run_dir.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml())?;
    std::fs::write(run_dir.join("split.json"), data.split.to_json())?;

    let metrics_path = run_dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{}", LossReport::CSV_HEADER)?;

    let mut manifest = RunManifest {
        profile: profile.name.clone(),
        seed: state.master_seed,
        config_path,
        corpus_dir: data.corpus_dir.clone(),
        split: data.split.clone(),
        checkpoints: Vec::new(),
        metrics_path: Some(metrics_path.clone()),
    };
    manifest.save(&run_dir)?;

    let target = args.steps.unwrap_or(cfg.steps);
    println!(
        "training on {} clips to step {target} (batch {}, {} critic steps per generator step)",
        train_corpus.len(),
        mc.batch_size,
        mc.d_steps_per_g_step
    );

    let mut last_ckpt_step = None;
    while state.step < target {
        let stop = next_boundary(state.step, cfg.checkpoint_every.min(cfg.sample_every).max(1), target);
        let result = train_loop(&mut state, &train_corpus, stop, |_, report| {
            if report.step % cfg.log_every == 0 || report.step == target {
                writeln!(metrics, "{}", report.csv_row())?;
                println!(
                    "step {:>6}/{target}  d_i {:.4}  d_v {:.4}  g {:.4}",
                    report.step, report.d_loss_image, report.d_loss_video, report.g_loss
                );
            }
            Ok(())
        });
        metrics.flush()?;
        if let Err(e) = result {
            if matches!(e, Error::NonFinite { .. }) {
                let snap = ckpt_dir.join(format!("abort-step-{:06}.ckpt", state.step));
                match write_checkpoint(&mut state, &snap) {
                    Ok(()) => eprintln!("diagnostic snapshot: {}", snap.display()),
                    Err(we) => eprintln!("could not write diagnostic snapshot: {we}"),
                }
            }
            return Err(e);
        }
        if state.step % cfg.checkpoint_every == 0 || state.step == target {
            let path = ckpt_dir.join(format!("step-{:06}.ckpt", state.step));
            write_checkpoint(&mut state, &path)?;
            manifest.checkpoints.push(path);
            manifest.save(&run_dir)?;
            last_ckpt_step = Some(state.step);
        }
        if state.step % cfg.sample_every == 0 || state.step == target {
            export_sample_grid(&state, &samples_dir)?;
        }
    }
    if last_ckpt_step != Some(state.step) {
        let path = ckpt_dir.join(format!("step-{:06}.ckpt", state.step));
        write_checkpoint(&mut state, &path)?;
        manifest.checkpoints.push(path);
        manifest.save(&run_dir)?;
    }
    println!("train run written to {}", run_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn resolve_pair(profile: &DatasetProfile, motion: &str, content: &str) -> Result<LabelPair> {
    let m = profile.motion_index(motion).ok_or_else(|| {
        Error::invalid(format!(
            "unknown motion class '{motion}' (valid: {})",
            profile.motion_class_names.join(", ")
        ))
    })?;
    let c = profile.content_index(content).ok_or_else(|| {
        Error::invalid(format!(
            "unknown content class '{content}' (valid: {})",
            profile.content_class_names.join(", ")
        ))
    })?;
    Ok(LabelPair { motion: m, content: c })
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let man = RunManifest::load(&args.run)?;
    let cfg = Config::from_path(&man.config_path)?;
    let profile = cfg.profile()?;
    let pair = resolve_pair(&profile, &args.motion, &args.content)?;
    if args.count == 0 {
        return Err(Error::invalid("--count must be positive"));
    }

    let ckpt = match &args.checkpoint {
        Some(p) => p.clone(),
        None => man.latest_checkpoint()?.to_path_buf(),
    };
    let state = read_checkpoint(&ckpt)?;
    let zero_shot = state.split.is_held_out(pair);

    let run_dir = create_run_dir(args.out.out.as_deref(), &args.out.out_root, "generate", args.seed)?;
    let mut rng = seed_stream(args.seed, "cli/generate");
    let mut clip_entries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let rng_seed: u64 = rng.random();
        let latent = sample_seed(&state.config, pair, rng_seed)?;
        let clip = state.generator.generate_video(&latent)?;
        let gif = format!("clip-{i:03}.gif");
        let grid = format!("clip-{i:03}.png");
        media::write_gif(&clip, &run_dir.join(&gif), 100)?;
        media::write_grid(&[&clip], &run_dir.join(&grid))?;
        clip_entries.push(json!({ "gif": gif, "grid": grid, "rng_seed": rng_seed }));
    }

    let metadata = json!({
        "checkpoint": ckpt,
        "seed": args.seed,
        "motion": { "name": args.motion, "index": pair.motion },
        "content": { "name": args.content, "index": pair.content },
        "zero_shot": zero_shot,
        "clips": clip_entries,
    });
    std::fs::write(
        run_dir.join("metadata.json"),
        serde_json::to_string_pretty(&metadata).expect("metadata serializes"),
    )?;
    println!(
        "wrote {} clip(s) for motion '{}' + content '{}'{} to {}",
        args.count,
        args.motion,
        args.content,
        if zero_shot { " (zero-shot combination)" } else { "" },
        run_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn obtain_suite(
    args: &EvalArgs,
    cfg: &Config,
    corpus: &LabeledCorpus,
    run_dir: &Path,
) -> Result<(ClassifierSuite, Option<f64>)> {
    if let Some(path) = &args.suite {
        if path.exists() {
            let suite = load_suite(path)?;
            let sh = suite.shape();
            let (t, ch, h, w) = corpus.clips[0].0.frames.dim();
            if (sh.channels, sh.frames, sh.height, sh.width) != (ch, t, h, w)
                || sh.motion_classes != corpus.profile.motion_classes()
                || sh.content_classes != corpus.profile.content_classes()
            {
                return Err(Error::invalid(format!(
                    "{}: suite shape does not match the corpus",
                    path.display()
                )));
            }
            println!("loaded classifier suite from {}", path.display());
            return Ok((suite, None));
        }
    }
    let train_cfg = ClassifierTrainConfig {
        base_channels: cfg.classifier_base_channels,
        batch_size: cfg.classifier_batch_size,
        learning_rate: cfg.classifier_learning_rate,
        max_epochs: cfg.classifier_epochs,
        target_accuracy: cfg.classifier_target_accuracy,
        val_fraction: cfg.classifier_val_fraction,
        seed: args.seed,
    };
    println!(
        "training classifier suite on {} real clips (target accuracy {:.2})",
        corpus.len(),
        train_cfg.target_accuracy
    );
    let (mut suite, acc) = train_classifiers(corpus, &train_cfg)?;
    let save_path = args
        .suite
        .clone()
        .unwrap_or_else(|| run_dir.join("suite.bin"));
    save_suite(&mut suite, &save_path)?;
    println!(
        "suite reached validation accuracy {acc:.4}, saved to {}",
        save_path.display()
    );
    Ok((suite, Some(acc)))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let man = RunManifest::load(&args.run)?;
    let cfg = Config::from_path(&man.config_path)?;
    let profile = cfg.profile()?;
    let ckpt = match &args.checkpoint {
        Some(p) => p.clone(),
        None => man.latest_checkpoint()?.to_path_buf(),
    };
    let state = read_checkpoint(&ckpt)?;
    let split = state.split.clone();
    if args.oracle && profile.name != "synthetic" {
        return Err(Error::invalid(
            "--oracle uses the synthetic dataset's labeling rule; profile must be synthetic",
        ));
    }

    let (corpus, warnings) = ingest_clip_directory(&man.corpus_dir, &profile, cfg.frames)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if corpus.is_empty() {
        return Err(Error::data("evaluation corpus is empty"));
    }

    let run_dir = create_run_dir(args.out.out.as_deref(), &args.out.out_root, "eval", args.seed)?;
    let (suite, suite_acc) = obtain_suite(args, &cfg, &corpus, &run_dir)?;

    let n_samples = args.samples.unwrap_or(cfg.fid_samples);
    if n_samples < 2 {
        return Err(Error::invalid("need at least 2 generated samples"));
    }
    let m_classes = profile.motion_classes();
    let c_classes = profile.content_classes();
    let mut rng = seed_stream(args.seed, "cli/eval-generate");
    println!("generating {n_samples} clips spanning all {} combinations", m_classes * c_classes);
    let mut generated = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let joint = i % (m_classes * c_classes);
        let pair = LabelPair { motion: joint / c_classes, content: joint % c_classes };
        let latent = sample_seed(&state.config, pair, rng.random())?;
        generated.push((state.generator.generate_video(&latent)?, pair));
    }

    let report = classification_report(&suite, &generated, Some(&split))?;
    let real_refs: Vec<&VideoClip> = corpus.clips.iter().map(|(c, _)| c).collect();
    let gen_refs: Vec<&VideoClip> = generated.iter().map(|(c, _)| c).collect();
    let fid = compute_fid(&suite, &real_refs, &gen_refs)?;

    let oracle_acc = if args.oracle {
        let mut hits = [0usize; 2];
        for (clip, pair) in &generated {
            let labeled = oracle_label(clip)?;
            hits[0] += usize::from(labeled.motion == pair.motion);
            hits[1] += usize::from(labeled.content == pair.content);
        }
        let n = generated.len() as f64;
        Some((hits[0] as f64 / n, hits[1] as f64 / n))
    } else {
        None
    };

    let zero_shot_combos: Vec<_> = split
        .held_out_pairs()
        .into_iter()
        .map(|p| {
            json!({
                "motion": profile.motion_class_names[p.motion],
                "content": profile.content_class_names[p.content],
            })
        })
        .collect();
    let mut report_json = json!({
        "fid": fid,
        "acc_m": report.accuracy_motion,
        "acc_c": report.accuracy_content,
        "acc_d": report.accuracy_joint,
        "matrix": report.predicted_freq,
        "zero_shot_combos": zero_shot_combos,
        "acc_m_held_out": report.accuracy_motion_held_out,
        "acc_c_held_out": report.accuracy_content_held_out,
        "n_generated": generated.len(),
        "n_real": corpus.len(),
        "suite_accuracy": suite_acc,
        "checkpoint": ckpt,
        "seed": args.seed,
    });
    if let Some((om, oc)) = oracle_acc {
        report_json["oracle_acc_m"] = json!(om);
        report_json["oracle_acc_c"] = json!(oc);
    }
    std::fs::write(
        run_dir.join("report.json"),
        serde_json::to_string_pretty(&report_json).expect("report serializes"),
    )?;
    std::fs::write(run_dir.join("freq.csv"), report.freq_csv())?;

    println!("fid {fid:.4}");
    println!(
        "accuracy: motion {:.4}, content {:.4}, joint {:.4}",
        report.accuracy_motion, report.accuracy_content, report.accuracy_joint
    );
    if let (Some(am), Some(ac)) = (report.accuracy_motion_held_out, report.accuracy_content_held_out)
    {
        println!("held-out combinations: motion {am:.4}, content {ac:.4}");
    }
    if let Some((om, oc)) = oracle_acc {
        println!("oracle check: motion {om:.4}, content {oc:.4}");
    }
    println!("eval run written to {}", run_dir.display());
    Ok(())
}
