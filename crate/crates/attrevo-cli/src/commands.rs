//! One function per subcommand. Each returns the JSON value it printed to
//! stdout so integration tests can call commands in-process.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use attrevo::backends::oracle::{OracleSpec, OracleWorld};
use attrevo::mutation::parse_attributes;
use attrevo::{
    accuracy, audit_report, confusion, confusion_csv, init_bank, margin, pretrain_fitness,
    run_pretrain, seed_joint_bank, AuditSink, Checkpoint, Classifier, ClassifierBank, Engine,
    Fitness, JointFitness, JsonlAuditSink, Mutator, Scorer, SplitTag, TrajectoryEntry,
};

use crate::config::{InitSource, RunConfig};

pub fn checkpoints_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.join("checkpoints")
}

pub fn final_checkpoint_path(config: &RunConfig) -> PathBuf {
    config.out_dir.join("checkpoint_final.json")
}

fn trajectory_path(config: &RunConfig, class_id: usize) -> PathBuf {
    config.out_dir.join(format!("pretrain/class_{class_id}.json"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Build the synthetic world and write every artifact a run needs:
/// world file, vocabulary, and train/test/distractor stores.
pub fn make_oracle(config: &RunConfig) -> Result<Value> {
    let section = &config.oracle;
    let spec = OracleSpec {
        classes: section.classes,
        attrs_per_class: section.attrs_per_class,
        vocab_size: section.vocab_size,
        dim: section.dim,
        noise_sigma: section.noise_sigma,
        seed: section.seed,
    };
    let world = OracleWorld::build(spec)?;

    let dir = config.out_dir.join("oracle");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let world_path = dir.join("world.json");
    world.save(&world_path)?;
    fs::write(dir.join("vocab.txt"), world.vocab().join("\n") + "\n")?;

    let train = world.generate_split(SplitTag::Train, section.train_per_class)?;
    train.save(&dir.join("train.json"))?;
    let test = world.generate_split(SplitTag::Test, section.test_per_class)?;
    test.save(&dir.join("test.json"))?;
    let distractors = world.generate_distractors(section.distractor_rows)?;
    distractors.save(&dir.join("distractors.json"))?;

    Ok(json!({
        "world": world_path,
        "classes": section.classes,
        "dim": section.dim,
        "vocab_size": world.vocab().len(),
        "train_rows": train.rows(),
        "test_rows": test.rows(),
        "distractor_rows": distractors.rows(),
        "margin": world.margin,
    }))
}

/// Warm the embedding cache over the attribute pool so later runs touch
/// the backend as little as possible. Image embeddings arrive as store
/// files and are never computed here.
pub fn embed_dataset(config: &RunConfig) -> Result<Value> {
    let service = config.build_embedding_service()?;
    let pool = config.load_pool()?;
    let texts: Vec<String> = pool.iter().map(|a| a.as_str().to_string()).collect();
    let fetched = service.warm(&texts)?;
    Ok(json!({
        "pool_size": texts.len(),
        "fetched": fetched,
        "cached_total": service.cached_len(),
    }))
}

fn build_mutator(config: &RunConfig, run_tag: &str) -> Result<Mutator> {
    let client = config.build_completer()?;
    let mut mutator = Mutator::new(
        client,
        config.engine.prompt_length,
        config.engine.max_set_size,
    );
    mutator.show_scores = config.mutation.show_scores;
    mutator.retry_limit = config.mutation.retry_limit;
    mutator.run_tag = run_tag.to_string();
    if config.mutation.audit_log {
        let sink = JsonlAuditSink::create(&config.out_dir.join("mutations.jsonl"))?;
        let shared: Arc<Mutex<dyn AuditSink>> = Arc::new(Mutex::new(sink));
        mutator = mutator.with_audit(shared);
    }
    Ok(mutator)
}

/// Per-class one-vs-all search; writes one trajectory file per class.
pub fn pretrain(config: &RunConfig) -> Result<Value> {
    let service = config.build_embedding_service()?;
    let train_store = config.load_store("train")?;
    let distractor_store = config.load_distractors()?;
    let class_count = train_store.class_count();

    let train_scorer = Arc::new(Scorer::new(
        service.clone(),
        train_store,
        config.softmax_temperature,
    )?);
    let distractor_scorer = match distractor_store {
        Some(store) => Some(Arc::new(Scorer::new(
            service.clone(),
            store,
            config.softmax_temperature,
        )?)),
        None => None,
    };

    let pool = config.load_pool()?;
    let mut files = Vec::with_capacity(class_count);
    let mut final_objectives = Vec::with_capacity(class_count);
    for class_id in 0..class_count {
        let fitness: Arc<dyn Fitness> = Arc::new(pretrain_fitness(
            train_scorer.clone(),
            distractor_scorer.clone(),
            class_id,
            config.pretrain.require_distractors,
        )?);
        let mutator = build_mutator(config, &format!("pretrain-class-{class_id}"))?;
        let trajectory = run_pretrain(
            class_id,
            &config.engine,
            config.pretrain.iterations,
            &pool,
            fitness,
            mutator,
        )?;
        let last = trajectory.last().expect("trajectory is never empty");
        log::info!(
            "class {class_id}: {} entries, objective {:.4}",
            trajectory.len(),
            last.objective
        );
        final_objectives.push(last.objective);
        let path = trajectory_path(config, class_id);
        write_json(&path, &trajectory)?;
        files.push(path);
    }

    Ok(json!({
        "classes": class_count,
        "iterations_per_class": config.pretrain.iterations,
        "final_objectives": final_objectives,
        "trajectories": files,
    }))
}

fn load_trajectories(config: &RunConfig, class_count: usize) -> Result<Vec<Vec<TrajectoryEntry>>> {
    let mut all = Vec::with_capacity(class_count);
    for class_id in 0..class_count {
        let path = trajectory_path(config, class_id);
        let raw = fs::read_to_string(&path).with_context(|| {
            format!(
                "reading trajectory {} (run the pretrain command first, or set data.init = \"pool\")",
                path.display()
            )
        })?;
        let trajectory: Vec<TrajectoryEntry> = serde_json::from_str(&raw)
            .with_context(|| format!("parsing trajectory {}", path.display()))?;
        all.push(trajectory);
    }
    Ok(all)
}

fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(name) => name,
            None => continue,
        };
        let iteration = match name
            .strip_prefix("ckpt_")
            .and_then(|rest| rest.strip_suffix(".json"))
            .and_then(|digits| digits.parse::<u64>().ok())
        {
            Some(n) => n,
            None => continue,
        };
        if best.as_ref().map(|(i, _)| iteration > *i).unwrap_or(true) {
            best = Some((iteration, path));
        }
    }
    Ok(best.map(|(_, path)| path))
}

/// Joint evolutionary training: seed (or restore) a bank, run the engine
/// with periodic checkpoints, and write the final classifier.
pub fn train(config: &RunConfig, resume: bool) -> Result<Value> {
    let service = config.build_embedding_service()?;
    let train_store = config.load_store("train")?;
    let class_count = train_store.class_count();
    let scorer = Arc::new(Scorer::new(
        service,
        train_store,
        config.softmax_temperature,
    )?);
    let fitness: Arc<dyn Fitness> = Arc::new(JointFitness {
        scorer: scorer.clone(),
    });
    let mutator = build_mutator(config, &format!("train-seed-{}", config.engine.seed))?;

    let ckpt_dir = checkpoints_dir(config);
    let mut engine = if resume {
        let path = latest_checkpoint(&ckpt_dir)?
            .with_context(|| format!("no checkpoint to resume in {}", ckpt_dir.display()))?;
        log::info!("resuming from {}", path.display());
        let checkpoint = Checkpoint::load(&path)?;
        if checkpoint.class_count != class_count {
            bail!(
                "checkpoint has {} classes but the train store has {class_count}",
                checkpoint.class_count
            );
        }
        checkpoint.into_engine(fitness, mutator)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.engine.seed);
        let bank = match config.data.init {
            InitSource::Pretrain => {
                let trajectories = load_trajectories(config, class_count)?;
                seed_joint_bank(
                    &trajectories,
                    config.engine.initial_classifiers,
                    config.engine.bank_capacity,
                    config.pretrain.geometric_ratio,
                    fitness.as_ref(),
                    &mut rng,
                )?
            }
            InitSource::Pool => {
                let pool = config.load_pool()?;
                init_bank(
                    &pool,
                    config.engine.initial_classifiers,
                    class_count,
                    config.engine.max_set_size,
                    config.engine.bank_capacity,
                    fitness.as_ref(),
                    &mut rng,
                )?
            }
        };
        Engine::with_rng(config.engine.clone(), bank, fitness, mutator, rng)?
    };

    fs::create_dir_all(&ckpt_dir)
        .with_context(|| format!("creating {}", ckpt_dir.display()))?;
    let best = engine.run(|e| {
        let path = ckpt_dir.join(format!("ckpt_{:06}.json", e.iteration));
        Checkpoint::from_engine(e)
            .save(&path)
            .map_err(|err| err.to_string())?;
        log::info!(
            "iteration {}: best loss {:.6}, bank {}",
            e.iteration,
            e.best_loss,
            e.bank.len()
        );
        Ok(())
    })?;

    let train_accuracy = accuracy(&scorer, &best)?;
    let mut final_checkpoint = Checkpoint::from_engine(&engine);
    final_checkpoint.final_train_accuracy = Some(train_accuracy);
    let final_path = final_checkpoint_path(config);
    final_checkpoint.save(&final_path)?;
    write_json(&config.out_dir.join("classifier.json"), &best)?;

    Ok(json!({
        "iterations": engine.iteration,
        "best_loss": engine.best_loss,
        "train_accuracy": train_accuracy,
        "bank_size": engine.bank.len(),
        "checkpoint": final_path,
    }))
}

fn best_of(checkpoint: &Checkpoint) -> Result<Classifier> {
    best_of_bank(&checkpoint.bank)
}

fn best_of_bank(bank: &ClassifierBank) -> Result<Classifier> {
    bank.best().cloned().context("checkpoint bank is empty")
}

fn checkpoint_arg(config: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| final_checkpoint_path(config))
}

/// Score a checkpoint's best classifier on a split; verifies the recorded
/// training accuracy when it is present and the split is "train".
pub fn eval(config: &RunConfig, checkpoint_flag: Option<&Path>, split: &str) -> Result<Value> {
    let path = checkpoint_arg(config, checkpoint_flag);
    let checkpoint = Checkpoint::load(&path)?;
    let classifier = best_of(&checkpoint)?;

    let service = config.build_embedding_service()?;
    let store = config.load_store(split)?;
    let scorer = Scorer::new(service, store.clone(), config.softmax_temperature)?;

    let acc = accuracy(&scorer, &classifier)?;
    let conf = margin(&scorer, &classifier)?;

    let mut report = json!({
        "checkpoint": path,
        "split": split,
        "rows": store.rows(),
        "classes": store.class_count(),
        "accuracy": acc,
        "margin": conf,
        "best_loss": checkpoint.best_loss,
        "iteration": checkpoint.iteration,
    });
    if split == "train" {
        if let Some(recorded) = checkpoint.final_train_accuracy {
            if acc != recorded {
                bail!(
                    "train accuracy {acc} does not match the {recorded} recorded in {}",
                    path.display()
                );
            }
            report["recorded_train_accuracy"] = json!(recorded);
        }
    }
    write_json(&config.out_dir.join(format!("eval_{split}.json")), &report)?;
    Ok(report)
}

/// Attribute-level audit plus confusion matrix for a checkpoint.
pub fn report(config: &RunConfig, checkpoint_flag: Option<&Path>, split: &str) -> Result<Value> {
    let path = checkpoint_arg(config, checkpoint_flag);
    let checkpoint = Checkpoint::load(&path)?;
    let classifier = best_of(&checkpoint)?;

    let service = config.build_embedding_service()?;
    let store = config.load_store(split)?;
    let scorer = Scorer::new(service, store, config.softmax_temperature)?;

    let audit = audit_report(&scorer, &classifier)?;
    let counts = confusion(&scorer, &classifier)?;
    let csv = confusion_csv(&counts, scorer.store().class_names());

    let report_dir = config.out_dir.join("report");
    fs::create_dir_all(&report_dir)
        .with_context(|| format!("creating {}", report_dir.display()))?;
    let audit_path = report_dir.join("audit.json");
    write_json(&audit_path, &audit)?;
    let csv_path = report_dir.join("confusion.csv");
    fs::write(&csv_path, &csv).with_context(|| format!("writing {}", csv_path.display()))?;

    Ok(json!({
        "checkpoint": path,
        "split": split,
        "audit": audit_path,
        "confusion": csv_path,
        "classes": audit.classes.len(),
    }))
}

/// Rebuild the generic attribute pool by asking the completion backend for
/// batches of short visual phrases. With the oracle backend this stays
/// offline and samples the world vocabulary.
pub fn regen_pool(config: &RunConfig, count: usize, out: Option<&Path>) -> Result<Value> {
    if count == 0 {
        bail!("pool size must be positive");
    }
    let client = config.build_completer()?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir.join("pool.txt"));

    let mut rng = ChaCha8Rng::seed_from_u64(config.engine.seed);
    let mut seen = std::collections::HashSet::new();
    let mut lines = Vec::with_capacity(count);
    let mut stale_rounds = 0u32;
    while lines.len() < count {
        let params = attrevo::CompletionParams {
            temperature: 0.9,
            seed: rng.gen(),
            max_tokens: None,
        };
        let prompt = format!(
            "Write {} short generic phrases, each naming one visible property \
             an image might show. One per line, numbered like \"1. ...\".",
            (count - lines.len()).min(20)
        );
        let completion = client.complete(&prompt, &params)?;
        let before = lines.len();
        if let Ok(batch) = parse_attributes(&completion, 20) {
            for attr in batch {
                if lines.len() >= count {
                    break;
                }
                if seen.insert(attr.as_str().to_string()) {
                    lines.push(attr.as_str().to_string());
                }
            }
        }
        stale_rounds = if lines.len() == before {
            stale_rounds + 1
        } else {
            0
        };
        if stale_rounds >= 50 {
            bail!(
                "pool generation stalled at {} of {count} phrases; the backend \
                 keeps repeating itself",
                lines.len()
            );
        }
    }

    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(&out_path, lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", out_path.display()))?;
    Ok(json!({ "pool": out_path, "size": lines.len() }))
}
