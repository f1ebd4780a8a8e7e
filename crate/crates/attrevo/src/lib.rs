//! Evolutionary discovery of interpretable attribute-based classifiers.
//!
//! A classifier here is one short natural-language attribute list per
//! class; an image is assigned to the class whose attributes it matches
//! best in a shared text/image embedding space. The library searches for
//! good attribute lists with a population of scored candidates, using a
//! language-model completion backend as the mutation operator:
//!
//! - [`domain`]: attributes, attribute sets, classifiers, and the scored
//!   classifier bank.
//! - [`fitness`]: attribute/class scores, cross-entropy joint loss, and
//!   the one-vs-all pre-training objective.
//! - [`mutation`]: prompt construction, completion parsing, retries, and
//!   audit records.
//! - [`evolution`]: the search loop with loss-biased sampling and
//!   keep-best insertion.
//! - [`pretrain`]: per-class attribute discovery that seeds the joint
//!   bank.
//! - [`backends`]: embedding stores, embedding/completion clients, the
//!   deterministic mock completer, and a synthetic oracle world for
//!   offline end-to-end verification.
//! - [`checkpoint`]: deterministic JSON snapshots with resume support.
//! - [`metrics`]: accuracy, probability margin, confusion matrices, and
//!   the per-attribute audit report.

pub mod backends;
pub mod checkpoint;
pub mod domain;
pub mod evolution;
pub mod fitness;
pub mod metrics;
pub mod mutation;
pub mod numeric;
pub mod pretrain;

pub use backends::store::{EmbeddingStore, SplitTag};
pub use backends::{
    BackendError, CompletionClient, CompletionParams, EmbeddingService, TemplateSet, TextEmbedder,
};
pub use checkpoint::{Checkpoint, CheckpointError, RngState, CHECKPOINT_FORMAT_VERSION};
pub use domain::{Attribute, AttributeSet, ClassId, Classifier, ClassifierBank, DomainError};
pub use evolution::{
    init_bank, sample_hypotheses, Engine, EngineConfig, EngineError, IterationRecord,
    SamplingBias, StepReport,
};
pub use fitness::{
    separation_objective, table_cross_entropy, Fitness, FitnessError, JointFitness,
    PretrainFitness, ScoreTable, Scorer,
};
pub use metrics::{
    accuracy, audit_report, confusion, confusion_csv, margin, margin_from_table, top_gap,
    AuditReport, EvalError,
};
pub use mutation::{
    build_prompt, parse_attributes, AuditRecord, AuditSink, JsonlAuditSink, MutationError,
    MutationPrompt, Mutator, PROMPT_TEMPLATE, PROMPT_TEMPLATE_VERSION,
};
pub use pretrain::{
    default_pool, derive_class_seed, pretrain_fitness, run_pretrain, seed_joint_bank,
    PretrainConfig, PretrainError, TrajectoryEntry,
};
