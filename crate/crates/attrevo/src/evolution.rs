//! The evolutionary search loop: bank initialization from an attribute
//! pool, loss-biased sampling, per-class mutation and candidate scoring,
//! keep-best insertion, and plateau-based convergence control.

use std::collections::HashSet;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample as index_sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Attribute, AttributeSet, ClassId, Classifier, ClassifierBank, DomainError};
use crate::fitness::{Fitness, FitnessError};
use crate::mutation::{MutationError, Mutator};
use crate::numeric;

/// Which end of the loss axis sampling favors. `Best` draws low-loss
/// classifiers more often; `Worst` inverts that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingBias {
    #[default]
    Best,
    Worst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Classifiers drawn into the bank before the first step.
    pub initial_classifiers: usize,
    /// Classifiers sampled per step (clamped to the bank size).
    pub sample_size: usize,
    /// Past sets shown per mutation prompt.
    pub prompt_length: usize,
    pub sampling_temperature: f64,
    pub sampling_bias: SamplingBias,
    pub max_iterations: u64,
    /// Iterations without a new best loss before stopping.
    pub patience: u64,
    pub bank_capacity: usize,
    /// Iterations between checkpoints during `run`.
    pub checkpoint_interval: u64,
    pub max_set_size: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            initial_classifiers: 20,
            sample_size: 10,
            prompt_length: 10,
            sampling_temperature: 0.1,
            sampling_bias: SamplingBias::Best,
            max_iterations: 500,
            patience: 100,
            bank_capacity: 512,
            checkpoint_interval: 50,
            max_set_size: 10,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let complaint = if self.initial_classifiers == 0 {
            Some("initial_classifiers must be at least 1")
        } else if self.sample_size == 0 {
            Some("sample_size must be at least 1")
        } else if self.prompt_length == 0 {
            Some("prompt_length must be at least 1")
        } else if !(self.sampling_temperature > 0.0) {
            Some("sampling_temperature must be positive")
        } else if self.max_iterations == 0 {
            Some("max_iterations must be at least 1")
        } else if self.patience == 0 {
            Some("patience must be at least 1")
        } else if self.bank_capacity == 0 {
            Some("bank_capacity must be at least 1")
        } else if self.checkpoint_interval == 0 {
            Some("checkpoint_interval must be at least 1")
        } else if self.max_set_size == 0 {
            Some("max_set_size must be at least 1")
        } else {
            None
        };
        match complaint {
            Some(detail) => Err(EngineError::Config {
                detail: detail.to_string(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("bad engine config: {detail}")]
    Config { detail: String },
    #[error("attribute pool has {unique} unique entries, need at least {needed}")]
    PoolTooSmall { unique: usize, needed: usize },
    #[error("classifier bank is empty")]
    EmptyBank,
    #[error("checkpoint callback failed: {detail}")]
    Checkpoint { detail: String },
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Fill a bank with `n` classifiers whose class sets are drawn uniformly
/// without replacement from `pool`, each scored before insertion.
pub fn init_bank(
    pool: &[Attribute],
    n: usize,
    class_count: usize,
    max_set_size: usize,
    bank_capacity: usize,
    fitness: &dyn Fitness,
    rng: &mut ChaCha8Rng,
) -> Result<ClassifierBank, EngineError> {
    let mut unique = Vec::new();
    let mut seen = HashSet::new();
    for attr in pool {
        if seen.insert(attr.as_str().to_string()) {
            unique.push(attr.clone());
        }
    }
    if unique.len() < max_set_size {
        return Err(EngineError::PoolTooSmall {
            unique: unique.len(),
            needed: max_set_size,
        });
    }
    if n == 0 || class_count == 0 {
        return Err(EngineError::Config {
            detail: "init_bank needs n >= 1 and class_count >= 1".to_string(),
        });
    }
    let mut bank = ClassifierBank::new(bank_capacity);
    for _ in 0..n {
        let mut sets = Vec::with_capacity(class_count);
        for class_id in 0..class_count {
            let picks = index_sample(rng, unique.len(), max_set_size);
            let attrs: Vec<Attribute> = picks.iter().map(|i| unique[i].clone()).collect();
            sets.push(AttributeSet::new(class_id, attrs)?);
        }
        let classifier = Classifier::new(sets)?;
        let loss = fitness.score(&classifier)?;
        bank.insert(classifier.scored(loss, 0))?;
    }
    Ok(bank)
}

/// Draw `m` classifiers with replacement, weighted by
/// softmax(-loss / temperature) (sign flipped under `Worst` bias), and
/// return them sorted worst first.
pub fn sample_hypotheses(
    bank: &ClassifierBank,
    m: usize,
    temperature: f64,
    bias: SamplingBias,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Classifier>, EngineError> {
    if bank.is_empty() {
        return Err(EngineError::EmptyBank);
    }
    let losses: Vec<f64> = bank
        .iter()
        .map(|c| c.loss.expect("bank entries are scored"))
        .collect();
    let signed: Vec<f64> = match bias {
        SamplingBias::Best => losses.iter().map(|l| -l).collect(),
        SamplingBias::Worst => losses.clone(),
    };
    let weights = numeric::softmax(&signed, temperature);
    let picker = WeightedIndex::new(&weights).map_err(|e| EngineError::Config {
        detail: format!("sampling weights rejected: {e}"),
    })?;
    let entries: Vec<&Classifier> = bank.iter().collect();
    let m_eff = m.min(entries.len()).max(1);
    let mut drawn: Vec<Classifier> = (0..m_eff)
        .map(|_| entries[picker.sample(rng)].clone())
        .collect();
    drawn.sort_by(|a, b| {
        b.loss
            .expect("scored")
            .total_cmp(&a.loss.expect("scored"))
    });
    Ok(drawn)
}

/// What one engine step did, for logging and tests.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub iteration: u64,
    pub sampled: Vec<Classifier>,
    pub inserted: Vec<Classifier>,
    pub skipped_classes: Vec<ClassId>,
    pub candidate_losses: Vec<Option<f64>>,
    pub best_loss: f64,
    pub bank_size: usize,
}

/// One line of run history, kept inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub candidate_losses: Vec<Option<f64>>,
    pub best_loss: f64,
    pub bank_size: usize,
}

pub struct Engine {
    pub config: EngineConfig,
    pub bank: ClassifierBank,
    fitness: Arc<dyn Fitness>,
    mutator: Mutator,
    rng: ChaCha8Rng,
    pub iteration: u64,
    pub best_loss: f64,
    pub stall: u64,
    pub history: Vec<IterationRecord>,
}

impl Engine {
    /// Start from an already scored bank, seeding the generator from
    /// `config.seed`.
    pub fn new(
        config: EngineConfig,
        bank: ClassifierBank,
        fitness: Arc<dyn Fitness>,
        mutator: Mutator,
    ) -> Result<Self, EngineError> {
        use rand::SeedableRng;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Engine::with_rng(config, bank, fitness, mutator, rng)
    }

    /// Start from an explicit generator, e.g. one already advanced by
    /// `init_bank` or restored from a checkpoint.
    pub fn with_rng(
        config: EngineConfig,
        bank: ClassifierBank,
        fitness: Arc<dyn Fitness>,
        mutator: Mutator,
        rng: ChaCha8Rng,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let best = bank.best().ok_or(EngineError::EmptyBank)?;
        let best_loss = best.loss.expect("bank entries are scored");
        Ok(Engine {
            config,
            bank,
            fitness,
            mutator,
            rng,
            iteration: 0,
            best_loss,
            stall: 0,
            history: Vec::new(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.bank
            .best()
            .map(|c| c.class_count())
            .unwrap_or_default()
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    pub fn restore_progress(&mut self, iteration: u64, stall: u64, history: Vec<IterationRecord>) {
        self.iteration = iteration;
        self.stall = stall;
        self.history = history;
    }

    /// One iteration: sample once, then per class mutate, build
    /// candidates that replace only that class's set, score them, and
    /// insert each class's best candidate.
    pub fn step(&mut self) -> Result<StepReport, EngineError> {
        let previous_best = self.best_loss;
        let sampled = sample_hypotheses(
            &self.bank,
            self.config.sample_size,
            self.config.sampling_temperature,
            self.config.sampling_bias,
            &mut self.rng,
        )?;
        let class_count = self.class_count();
        let iteration = self.iteration + 1;

        let mut inserted = Vec::new();
        let mut skipped = Vec::new();
        let mut candidate_losses = vec![None; class_count];
        for class_id in 0..class_count {
            let history: Vec<(AttributeSet, f64)> = sampled
                .iter()
                .map(|c| (c.set(class_id).clone(), c.loss.expect("scored")))
                .collect();
            let mutated = match self.mutator.mutate(
                class_id,
                &history,
                iteration,
                &mut self.rng,
            ) {
                Ok(set) => set,
                Err(MutationError::UnparsableCompletion { attempts }) => {
                    log::warn!(
                        "iteration {iteration}: completions for class {class_id} stayed \
                         unparsable after {attempts} attempts, skipping the class"
                    );
                    skipped.push(class_id);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };

            let mut best_candidate: Option<Classifier> = None;
            for base in &sampled {
                let candidate = base.with_set_replaced(class_id, mutated.clone());
                let loss = self.fitness.score(&candidate)?;
                let candidate = candidate.scored(loss, iteration);
                let better = match &best_candidate {
                    Some(current) => loss < current.loss.expect("scored"),
                    None => true,
                };
                if better {
                    best_candidate = Some(candidate);
                }
            }
            let winner = best_candidate.expect("sampled is non-empty");
            candidate_losses[class_id] = winner.loss;
            self.bank.insert(winner.clone())?;
            inserted.push(winner);
        }

        let best_loss = self
            .bank
            .best()
            .expect("bank stays non-empty")
            .loss
            .expect("scored");
        assert!(
            best_loss <= previous_best,
            "bank best loss rose from {previous_best} to {best_loss}"
        );
        if best_loss < self.best_loss {
            self.best_loss = best_loss;
            self.stall = 0;
        } else {
            self.stall += 1;
        }
        self.iteration = iteration;
        self.history.push(IterationRecord {
            iteration,
            candidate_losses: candidate_losses.clone(),
            best_loss,
            bank_size: self.bank.len(),
        });
        log::debug!(
            "iteration {iteration}: best loss {best_loss:.6}, bank size {}, {} skipped",
            self.bank.len(),
            skipped.len()
        );
        Ok(StepReport {
            iteration,
            sampled,
            inserted,
            skipped_classes: skipped,
            candidate_losses,
            best_loss,
            bank_size: self.bank.len(),
        })
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.config.max_iterations || self.stall >= self.config.patience
    }

    /// Iterate until the budget or the patience runs out. The callback
    /// fires every `checkpoint_interval` iterations and once more after
    /// the last one.
    pub fn run(
        &mut self,
        mut on_checkpoint: impl FnMut(&Engine) -> Result<(), String>,
    ) -> Result<Classifier, EngineError> {
        while !self.done() {
            self.step()?;
            if self.iteration % self.config.checkpoint_interval == 0 {
                on_checkpoint(self).map_err(|detail| EngineError::Checkpoint { detail })?;
            }
        }
        if self.iteration > 0 && self.iteration % self.config.checkpoint_interval != 0 {
            on_checkpoint(self).map_err(|detail| EngineError::Checkpoint { detail })?;
        }
        Ok(self
            .bank
            .best()
            .expect("bank stays non-empty")
            .clone())
    }
}
