//! Stage one: per-class one-vs-all attribute discovery, and the seeding
//! of the joint bank from the per-class trajectories.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Attribute, AttributeSet, ClassId, Classifier, ClassifierBank, DomainError};
use crate::evolution::{init_bank, Engine, EngineConfig, EngineError};
use crate::fitness::{Fitness, FitnessError, PretrainFitness, Scorer};
use crate::mutation::Mutator;

/// Generic starter attributes used when no project-specific pool is
/// given; kept as a file so offline runs stay reproducible.
pub const DEFAULT_ATTRIBUTE_POOL: &str = include_str!("../resources/attribute_pool.txt");

pub fn default_pool() -> Vec<Attribute> {
    DEFAULT_ATTRIBUTE_POOL
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Attribute::canonicalize(l).expect("pool file lines are valid attributes"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Evolution budget per class.
    pub iterations: u64,
    /// Refuse to run without distractor negatives.
    pub require_distractors: bool,
    /// Decay applied per step away from the latest trajectory entry when
    /// seeding the joint bank; 1.0 means uniform.
    pub geometric_ratio: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 200,
            require_distractors: true,
            geometric_ratio: 0.5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("class {class_id} has no trajectory entries")]
    MissingClassTrajectory { class_id: ClassId },
    #[error("pre-training requires a distractor store")]
    MissingDistractors,
    #[error("geometric ratio must be in (0, 1], got {0}")]
    BadRatio(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One accepted attribute set during a class's pre-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub iteration: u64,
    pub attributes: Vec<Attribute>,
    pub objective: f64,
}

/// Spread per-class runs across the seed space deterministically.
pub fn derive_class_seed(seed: u64, class_id: ClassId) -> u64 {
    seed ^ (class_id as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Build the one-vs-all objective for `class_id`, enforcing the
/// distractor requirement.
pub fn pretrain_fitness(
    train: Arc<Scorer>,
    distractors: Option<Arc<Scorer>>,
    class_id: ClassId,
    require_distractors: bool,
) -> Result<PretrainFitness, PretrainError> {
    if require_distractors && distractors.is_none() {
        return Err(PretrainError::MissingDistractors);
    }
    Ok(PretrainFitness::new(train, distractors, class_id)?)
}

/// Run the evolution engine on a single-class bank scored by the
/// one-vs-all objective; return every accepted set in order, starting
/// with the best initial draw.
pub fn run_pretrain(
    class_id: ClassId,
    base: &EngineConfig,
    iterations: u64,
    pool: &[Attribute],
    fitness: Arc<dyn Fitness>,
    mutator: Mutator,
) -> Result<Vec<TrajectoryEntry>, PretrainError> {
    use rand::SeedableRng;
    let mut config = base.clone();
    config.seed = derive_class_seed(base.seed, class_id);
    config.max_iterations = iterations.max(1);
    config.patience = iterations.max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bank = init_bank(
        pool,
        config.initial_classifiers,
        1,
        config.max_set_size,
        config.bank_capacity,
        fitness.as_ref(),
        &mut rng,
    )?;

    let mut trajectory = Vec::new();
    let first = bank.best().expect("init_bank returns a non-empty bank");
    trajectory.push(TrajectoryEntry {
        iteration: 0,
        attributes: first.set(0).attributes().to_vec(),
        objective: first.loss.expect("scored"),
    });

    let mut engine = Engine::with_rng(config, bank, fitness, mutator, rng)?;
    while !engine.done() {
        let report = engine.step()?;
        for inserted in &report.inserted {
            trajectory.push(TrajectoryEntry {
                iteration: report.iteration,
                attributes: inserted.set(0).attributes().to_vec(),
                objective: inserted.loss.expect("scored"),
            });
        }
    }
    Ok(trajectory)
}

/// Assemble `n` joint classifiers by drawing one trajectory entry per
/// class, weighted geometrically toward the latest entries, and score
/// each before insertion.
pub fn seed_joint_bank(
    trajectories: &[Vec<TrajectoryEntry>],
    n: usize,
    bank_capacity: usize,
    geometric_ratio: f64,
    fitness: &dyn Fitness,
    rng: &mut ChaCha8Rng,
) -> Result<ClassifierBank, PretrainError> {
    if !(geometric_ratio > 0.0 && geometric_ratio <= 1.0) {
        return Err(PretrainError::BadRatio(geometric_ratio));
    }
    let mut pickers = Vec::with_capacity(trajectories.len());
    for (class_id, trajectory) in trajectories.iter().enumerate() {
        if trajectory.is_empty() {
            return Err(PretrainError::MissingClassTrajectory { class_id });
        }
        let len = trajectory.len();
        let weights: Vec<f64> = (0..len)
            .map(|i| geometric_ratio.powi((len - 1 - i) as i32))
            .collect();
        let picker = WeightedIndex::new(&weights).map_err(|e| EngineError::Config {
            detail: format!("trajectory weights rejected: {e}"),
        })?;
        pickers.push(picker);
    }

    let mut bank = ClassifierBank::new(bank_capacity);
    for _ in 0..n.max(1) {
        let mut sets = Vec::with_capacity(trajectories.len());
        for (class_id, trajectory) in trajectories.iter().enumerate() {
            let pick = pickers[class_id].sample(rng);
            sets.push(AttributeSet::new(
                class_id,
                trajectory[pick].attributes.clone(),
            )?);
        }
        let classifier = Classifier::new(sets)?;
        let loss = fitness.score(&classifier)?;
        bank.insert(classifier.scored(loss, 0))?;
    }
    Ok(bank)
}
