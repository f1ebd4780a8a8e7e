//! Run-state persistence. Checkpoints are pretty-printed JSON so a run
//! can be audited by eye; the byte layout is deterministic, which the
//! resume and reproducibility guarantees lean on.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::ClassifierBank;
use crate::evolution::{Engine, EngineConfig, EngineError, IterationRecord};
use crate::fitness::Fitness;
use crate::mutation::{Mutator, PROMPT_TEMPLATE_VERSION};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("checkpoint does not parse: {detail}")]
    Parse { detail: String },
    #[error("checkpoint format version {found}, this build reads {expected}")]
    FormatVersion { found: u32, expected: u32 },
    #[error("checkpoint was written with prompt template {found}, this build uses {expected}")]
    PromptTemplate { found: u32, expected: u32 },
    #[error("checkpoint bank is empty")]
    EmptyBank,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Generator position split into two 64-bit halves so the JSON stays
/// plain integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngState {
    pub fn from_word_pos(pos: u128) -> Self {
        RngState {
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn word_pos(&self) -> u128 {
        ((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub prompt_template_version: u32,
    pub config: EngineConfig,
    pub class_count: usize,
    pub iteration: u64,
    pub best_loss: f64,
    pub stall: u64,
    pub rng: RngState,
    pub bank: ClassifierBank,
    pub history: Vec<IterationRecord>,
    /// Recorded once at the end of training so later evaluations can be
    /// checked against the run that produced the classifier.
    pub final_train_accuracy: Option<f64>,
}

impl Checkpoint {
    pub fn from_engine(engine: &Engine) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            prompt_template_version: PROMPT_TEMPLATE_VERSION,
            config: engine.config.clone(),
            class_count: engine.class_count(),
            iteration: engine.iteration,
            best_loss: engine.best_loss,
            stall: engine.stall,
            rng: RngState::from_word_pos(engine.rng_word_pos()),
            bank: engine.bank.clone(),
            history: engine.history.clone(),
            final_train_accuracy: None,
        }
    }

    /// Serialize deterministically: pretty JSON plus a trailing newline.
    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |detail: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            detail: detail.to_string(),
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        fs::write(path, self.to_json()).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&text).map_err(|e| CheckpointError::Parse {
                detail: e.to_string(),
            })?;
        if checkpoint.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::FormatVersion {
                found: checkpoint.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        Ok(checkpoint)
    }

    /// Rebuild a running engine: same config, restored bank, generator
    /// moved back to the recorded position, progress counters restored.
    pub fn into_engine(
        self,
        fitness: Arc<dyn Fitness>,
        mutator: Mutator,
    ) -> Result<Engine, CheckpointError> {
        if self.prompt_template_version != PROMPT_TEMPLATE_VERSION {
            return Err(CheckpointError::PromptTemplate {
                found: self.prompt_template_version,
                expected: PROMPT_TEMPLATE_VERSION,
            });
        }
        if self.bank.is_empty() {
            return Err(CheckpointError::EmptyBank);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_word_pos(self.rng.word_pos());
        let mut engine =
            Engine::with_rng(self.config, self.bank, fitness, mutator, rng)?;
        engine.restore_progress(self.iteration, self.stall, self.history);
        engine.best_loss = self.best_loss;
        Ok(engine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendError, CompletionClient, CompletionParams};
    use crate::domain::{Attribute, Classifier};
    use crate::evolution::init_bank;
    use crate::fitness::FitnessError;
    use crate::numeric;

    struct LengthFitness;

    impl Fitness for LengthFitness {
        fn score(&self, classifier: &Classifier) -> Result<f64, FitnessError> {
            let per: Vec<f64> = classifier
                .sets()
                .iter()
                .flat_map(|s| s.attributes())
                .map(|a| a.as_str().len() as f64 * 0.013)
                .collect();
            Ok(numeric::mean(&per))
        }
    }

    /// Draws a pseudo-random subset of its vocabulary each call, driven
    /// by params.seed, so the engine's rng actually matters.
    struct SeedDrivenCompleter {
        vocab: Vec<String>,
    }

    impl CompletionClient for SeedDrivenCompleter {
        fn complete(
            &self,
            _prompt: &str,
            params: &CompletionParams,
        ) -> Result<String, BackendError> {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let count = rng.gen_range(1..=3usize);
            let lines: Vec<String> = (0..count)
                .map(|i| {
                    let pick = rng.gen_range(0..self.vocab.len());
                    format!("{}. {}", i + 1, self.vocab[pick])
                })
                .collect();
            Ok(lines.join("\n"))
        }
    }

    fn pool() -> Vec<Attribute> {
        (0..8)
            .map(|i| Attribute::canonicalize(&format!("probe attribute {i}")).unwrap())
            .collect()
    }

    fn build_engine(seed: u64) -> Engine {
        let config = EngineConfig {
            initial_classifiers: 3,
            sample_size: 2,
            prompt_length: 2,
            max_set_size: 3,
            max_iterations: 40,
            patience: 100,
            checkpoint_interval: 4,
            seed,
            ..EngineConfig::default()
        };
        let fitness: Arc<dyn Fitness> = Arc::new(LengthFitness);
        let client: Arc<dyn CompletionClient> = Arc::new(SeedDrivenCompleter {
            vocab: (0..12).map(|i| format!("vocab item {i}")).collect(),
        });
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bank = init_bank(
            &pool(),
            config.initial_classifiers,
            2,
            config.max_set_size,
            config.bank_capacity,
            fitness.as_ref(),
            &mut rng,
        )
        .unwrap();
        let mutator = Mutator::new(client, config.prompt_length, config.max_set_size);
        Engine::with_rng(config, bank, fitness, mutator, rng).unwrap()
    }

    fn fresh_parts() -> (Arc<dyn Fitness>, Mutator) {
        let fitness: Arc<dyn Fitness> = Arc::new(LengthFitness);
        let client: Arc<dyn CompletionClient> = Arc::new(SeedDrivenCompleter {
            vocab: (0..12).map(|i| format!("vocab item {i}")).collect(),
        });
        (fitness, Mutator::new(client, 2, 3))
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut engine = build_engine(21);
        for _ in 0..3 {
            engine.step().unwrap();
        }
        let checkpoint = Checkpoint::from_engine(&engine);
        let path = dir.path().join("ckpt.json");
        checkpoint.save(&path).unwrap();
        let first_bytes = fs::read(&path).unwrap();

        let reloaded = Checkpoint::load(&path).unwrap();
        assert_eq!(reloaded, checkpoint);
        let second = reloaded.to_json();
        assert_eq!(first_bytes, second.into_bytes());
    }

    #[test]
    fn resumed_runs_match_straight_through_runs() {
        // straight through: 10 iterations
        let mut straight = build_engine(33);
        for _ in 0..10 {
            straight.step().unwrap();
        }
        let straight_final = Checkpoint::from_engine(&straight).to_json();

        // interrupted: 4 iterations, checkpoint, rebuild, 6 more
        let mut interrupted = build_engine(33);
        for _ in 0..4 {
            interrupted.step().unwrap();
        }
        let saved = Checkpoint::from_engine(&interrupted);
        drop(interrupted);

        let (fitness, mutator) = fresh_parts();
        let mut resumed = saved.into_engine(fitness, mutator).unwrap();
        assert_eq!(resumed.iteration, 4);
        for _ in 0..6 {
            resumed.step().unwrap();
        }
        let resumed_final = Checkpoint::from_engine(&resumed).to_json();

        assert_eq!(straight_final, resumed_final);
    }

    #[test]
    fn same_seed_runs_produce_identical_checkpoint_bytes() {
        let run = || {
            let mut engine = build_engine(77);
            for _ in 0..6 {
                engine.step().unwrap();
            }
            Checkpoint::from_engine(&engine).to_json()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn format_version_gate() {
        let dir = tempfile::tempdir().unwrap();
        let engine = build_engine(5);
        let mut checkpoint = Checkpoint::from_engine(&engine);
        checkpoint.format_version = 999;
        let path = dir.path().join("bad.json");
        checkpoint.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::FormatVersion { found: 999, .. })
        ));
    }

    #[test]
    fn prompt_template_gate() {
        let engine = build_engine(5);
        let mut checkpoint = Checkpoint::from_engine(&engine);
        checkpoint.prompt_template_version = 999;
        let (fitness, mutator) = fresh_parts();
        assert!(matches!(
            checkpoint.into_engine(fitness, mutator),
            Err(CheckpointError::PromptTemplate { found: 999, .. })
        ));
    }

    #[test]
    fn missing_file_reports_io() {
        let err = Checkpoint::load(Path::new("/nonexistent/ckpt.json")).unwrap_err();
        assert!(matches!(err, CheckpointError::Io { .. }));
    }
}
