//! Scoring: attribute and class scores, score tables, the joint
//! cross-entropy objective, and the one-vs-all separation objective used
//! before joint training.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::backends::store::{EmbeddingStore, SplitTag};
use crate::backends::{BackendError, EmbeddingService};
use crate::domain::{AttributeSet, ClassId, Classifier};
use crate::numeric;

#[derive(Debug, thiserror::Error)]
pub enum FitnessError {
    #[error("attribute set is empty")]
    EmptySet,
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("positive or negative group is empty")]
    EmptyGroup,
    #[error("joint loss needs a labeled split, not distractors")]
    DistractorData,
    #[error("classifier covers {classifier} classes, store has {store}")]
    ClassCountMismatch { classifier: usize, store: usize },
    #[error("{labels} labels for a table of {rows} rows")]
    LabelCountMismatch { labels: usize, rows: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("score table holds a non-finite value")]
    NonFiniteScore,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine_score(text_embedding: &[f32], image_embedding: &[f32]) -> f64 {
    numeric::dot(text_embedding, image_embedding)
}

/// Mean of per-attribute scores, summed in a fixed order so the result
/// does not depend on how the attributes were listed.
pub fn set_score(attribute_scores: Vec<f64>) -> Result<f64, FitnessError> {
    if attribute_scores.is_empty() {
        return Err(FitnessError::EmptySet);
    }
    Ok(numeric::sorted_mean(attribute_scores))
}

/// Softmax over scores scaled by 1/temperature.
pub fn class_probabilities(scores: &[f64], temperature: f64) -> Vec<f64> {
    numeric::softmax(scores, temperature)
}

pub fn argmax_class(scores: &[f64]) -> ClassId {
    numeric::argmax_tie_lowest(scores)
}

/// Per-image class scores plus the temperature used to read them as
/// probabilities.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    values: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl ScoreTable {
    pub fn new(values: Vec<Vec<f64>>, temperature: f64) -> Result<Self, FitnessError> {
        if !(temperature > 0.0) {
            return Err(FitnessError::NonPositiveTemperature(temperature));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FitnessError::NonFiniteScore);
        }
        Ok(ScoreTable {
            values,
            temperature,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn probabilities(&self, index: usize) -> Vec<f64> {
        class_probabilities(&self.values[index], self.temperature)
    }

    pub fn predicted(&self, index: usize) -> ClassId {
        argmax_class(&self.values[index])
    }
}


/// Evaluates classifiers against one embedding store, memoizing every
/// (attribute, image row) score because the bank re-scores overlapping
/// sets constantly.
pub struct Scorer {
    service: Arc<EmbeddingService>,
    store: Arc<EmbeddingStore>,
    pub temperature: f64,
    /// Attribute text -> cosine against every store row. Whole rows are
    /// memoized at once: the first touch of an attribute embeds it and
    /// scores the full store, which is what every caller ends up needing.
    cache: RwLock<HashMap<String, Arc<Vec<f64>>>>,
}

impl Scorer {
    pub fn new(
        service: Arc<EmbeddingService>,
        store: Arc<EmbeddingStore>,
        temperature: f64,
    ) -> Result<Self, FitnessError> {
        if !(temperature > 0.0) {
            return Err(FitnessError::NonPositiveTemperature(temperature));
        }
        Ok(Scorer {
            service,
            store,
            temperature,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    /// Memoized (attribute, row) scores currently held.
    pub fn cached_pairs(&self) -> usize {
        let cache = self.cache.read().expect("score cache lock");
        cache.values().map(|rows| rows.len()).sum()
    }

    /// Scores of one attribute against every row of the store.
    pub fn attribute_rows(&self, text: &str) -> Result<Arc<Vec<f64>>, FitnessError> {
        if let Some(hit) = self.cache.read().expect("score cache lock").get(text) {
            return Ok(hit.clone());
        }
        let embedding = self.service.embed_text(text)?;
        let scores: Vec<f64> = (0..self.store.rows())
            .map(|row| cosine_score(&embedding, self.store.row(row)))
            .collect();
        let scores = Arc::new(scores);
        // Concurrent misses compute identical vectors; keep whichever
        // landed first.
        let mut cache = self.cache.write().expect("score cache lock");
        Ok(cache
            .entry(text.to_string())
            .or_insert_with(|| scores)
            .clone())
    }

    pub fn attribute_score_row(&self, text: &str, row: usize) -> Result<f64, FitnessError> {
        Ok(self.attribute_rows(text)?[row])
    }

    pub fn class_score_row(&self, set: &AttributeSet, row: usize) -> Result<f64, FitnessError> {
        let mut scores = Vec::with_capacity(set.len());
        for attr in set.attributes() {
            scores.push(self.attribute_score_row(attr.as_str(), row)?);
        }
        set_score(scores)
    }

    pub fn score_table(&self, classifier: &Classifier) -> Result<ScoreTable, FitnessError> {
        if classifier.class_count() != self.store.class_count() {
            return Err(FitnessError::ClassCountMismatch {
                classifier: classifier.class_count(),
                store: self.store.class_count(),
            });
        }
        // Pull each set's attribute row-vectors up front so the row loop
        // below is pure arithmetic.
        let mut per_set = Vec::with_capacity(classifier.class_count());
        for set in classifier.sets() {
            let mut rows = Vec::with_capacity(set.len());
            for attr in set.attributes() {
                rows.push(self.attribute_rows(attr.as_str())?);
            }
            per_set.push(rows);
        }
        let mut values = Vec::with_capacity(self.store.rows());
        for row in 0..self.store.rows() {
            let mut row_scores = Vec::with_capacity(classifier.class_count());
            for rows in &per_set {
                row_scores.push(set_score(rows.iter().map(|r| r[row]).collect())?);
            }
            values.push(row_scores);
        }
        ScoreTable::new(values, self.temperature)
    }

    pub fn predict_row(&self, classifier: &Classifier, row: usize) -> Result<ClassId, FitnessError> {
        let mut scores = Vec::with_capacity(classifier.class_count());
        for set in classifier.sets() {
            scores.push(self.class_score_row(set, row)?);
        }
        Ok(argmax_class(&scores))
    }

    /// Mean cross-entropy of the labels under softmax(scores/T), computed
    /// in the log domain so tiny temperatures cannot underflow.
    pub fn joint_loss(&self, classifier: &Classifier) -> Result<f64, FitnessError> {
        if self.store.split() == SplitTag::Distractor {
            return Err(FitnessError::DistractorData);
        }
        if self.store.rows() == 0 {
            return Err(FitnessError::EmptyDataset);
        }
        let table = self.score_table(classifier)?;
        let labels: Vec<ClassId> = (0..self.store.rows())
            .map(|row| {
                self.store
                    .class_of(row)
                    .expect("labeled split has labels for every row")
            })
            .collect();
        table_cross_entropy(&table, &labels)
    }

    /// Mean set score over `negatives` minus mean over `positives`;
    /// lower means the set separates the class better.
    pub fn pretrain_objective(
        &self,
        set: &AttributeSet,
        positives: &[usize],
        negatives: &[usize],
    ) -> Result<f64, FitnessError> {
        let score_group = |rows: &[usize]| -> Result<Vec<f64>, FitnessError> {
            let mut scores = Vec::with_capacity(rows.len());
            for &row in rows {
                scores.push(self.class_score_row(set, row)?);
            }
            Ok(scores)
        };
        separation_objective(score_group(positives)?, score_group(negatives)?)
    }
}

/// Mean cross-entropy of a score table against per-row labels, computed
/// in the log domain so tiny temperatures stay finite.
pub fn table_cross_entropy(table: &ScoreTable, labels: &[ClassId]) -> Result<f64, FitnessError> {
    if table.rows() == 0 {
        return Err(FitnessError::EmptyDataset);
    }
    if labels.len() != table.rows() {
        return Err(FitnessError::LabelCountMismatch {
            labels: labels.len(),
            rows: table.rows(),
        });
    }
    let classes = table.row(0).len();
    let mut losses = Vec::with_capacity(table.rows());
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(FitnessError::LabelOutOfRange { label, classes });
        }
        let scaled: Vec<f64> = table
            .row(row)
            .iter()
            .map(|s| s / table.temperature)
            .collect();
        losses.push(numeric::log_sum_exp(&scaled) - scaled[label]);
    }
    Ok(numeric::mean(&losses))
}

/// One-vs-all separation on already-computed per-image scores: mean score
/// over the negative group minus mean score over the positive group. Lower
/// is better; cosine scores keep it inside [-2, 2].
pub fn separation_objective(
    positive_scores: Vec<f64>,
    negative_scores: Vec<f64>,
) -> Result<f64, FitnessError> {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return Err(FitnessError::EmptyGroup);
    }
    Ok(numeric::sorted_mean(negative_scores) - numeric::sorted_mean(positive_scores))
}

/// A scalar objective over whole classifiers; the engine minimizes it.
pub trait Fitness: Send + Sync {
    fn score(&self, classifier: &Classifier) -> Result<f64, FitnessError>;
}

/// Joint-training objective: cross-entropy on a labeled split.
pub struct JointFitness {
    pub scorer: Arc<Scorer>,
}

impl Fitness for JointFitness {
    fn score(&self, classifier: &Classifier) -> Result<f64, FitnessError> {
        self.scorer.joint_loss(classifier)
    }
}

/// One-vs-all objective for a single class: the classifier under
/// evaluation carries exactly one set (index 0), scored against the
/// class's own rows as positives and everything else, distractors
/// included, as negatives.
pub struct PretrainFitness {
    train: Arc<Scorer>,
    distractors: Option<Arc<Scorer>>,
    pub class_id: ClassId,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl PretrainFitness {
    pub fn new(
        train: Arc<Scorer>,
        distractors: Option<Arc<Scorer>>,
        class_id: ClassId,
    ) -> Result<Self, FitnessError> {
        let positives = train.store().rows_of_class(class_id);
        let negatives: Vec<usize> = (0..train.store().rows())
            .filter(|&row| train.store().class_of(row) != Some(class_id))
            .collect();
        if positives.is_empty() || (negatives.is_empty() && distractors.is_none()) {
            return Err(FitnessError::EmptyGroup);
        }
        debug_assert_eq!(positives.len() + negatives.len(), train.store().rows());
        Ok(PretrainFitness {
            train,
            distractors,
            class_id,
            positives,
            negatives,
        })
    }
}

impl Fitness for PretrainFitness {
    fn score(&self, classifier: &Classifier) -> Result<f64, FitnessError> {
        let set = classifier.sets().first().ok_or(FitnessError::EmptySet)?;
        let mut positive_scores = Vec::with_capacity(self.positives.len());
        for &row in &self.positives {
            positive_scores.push(self.train.class_score_row(set, row)?);
        }
        let mut negative_scores = Vec::with_capacity(self.negatives.len());
        for &row in &self.negatives {
            negative_scores.push(self.train.class_score_row(set, row)?);
        }
        if let Some(distractors) = &self.distractors {
            for row in 0..distractors.store().rows() {
                negative_scores.push(distractors.class_score_row(set, row)?);
            }
        }
        if positive_scores.is_empty() || negative_scores.is_empty() {
            return Err(FitnessError::EmptyGroup);
        }
        Ok(numeric::sorted_mean(negative_scores) - numeric::sorted_mean(positive_scores))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{TemplateSet, TextEmbedder};
    use crate::domain::Attribute;

    fn attr(s: &str) -> Attribute {
        Attribute::canonicalize(s).unwrap()
    }

    fn set(class_id: ClassId, names: &[&str]) -> AttributeSet {
        AttributeSet::new(class_id, names.iter().map(|s| attr(s)).collect()).unwrap()
    }

    #[test]
    fn cosine_of_identical_unit_vectors_is_one() {
        // 0.6 and 0.8 are not exact in f32, so the result is only within
        // rounding noise of 1, not bit-equal.
        let v = [0.6f32, 0.8];
        assert!((cosine_score(&v, &v) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn cosine_hand_case() {
        let a = [0.5f32, 0.5, 0.5, 0.5];
        let b = [1.0f32, 0.0, 0.0, 0.0];
        assert!((cosine_score(&a, &b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn set_score_is_the_mean() {
        assert!((set_score(vec![0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(set_score(vec![0.77]).unwrap(), 0.77);
        let three = set_score(vec![0.1, 0.2, 0.6]).unwrap();
        assert!((three - 0.3).abs() < 1e-15);
        assert!(matches!(set_score(vec![]), Err(FitnessError::EmptySet)));
    }

    #[test]
    fn set_score_ignores_attribute_order_exactly() {
        let a = set_score(vec![0.13, -0.52, 0.91, 0.07]).unwrap();
        let b = set_score(vec![0.91, 0.07, 0.13, -0.52]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn probabilities_hand_cases() {
        let uniform = class_probabilities(&[0.4, 0.4, 0.4, 0.4], 1.0);
        for p in &uniform {
            assert!((p - 0.25).abs() < 1e-12);
        }
        let lopsided = class_probabilities(&[0.0, -1e9], 1.0);
        assert!(lopsided[0] > 0.999999 && lopsided[1] < 1e-6);
        let pair = class_probabilities(&[1.0, 0.0], 1.0);
        assert!((pair[0] - 0.7311).abs() < 1e-4);
        assert!((pair[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn argmax_prefers_lowest_class_on_ties() {
        assert_eq!(argmax_class(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax_class(&[0.5, 0.5]), 0);
    }

    #[test]
    fn score_table_validates_inputs() {
        assert!(matches!(
            ScoreTable::new(vec![vec![1.0, f64::NAN]], 1.0),
            Err(FitnessError::NonFiniteScore)
        ));
        assert!(matches!(
            ScoreTable::new(vec![vec![1.0]], 0.0),
            Err(FitnessError::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn prediction_is_temperature_invariant() {
        let rows = vec![vec![0.31, 0.29, 0.30], vec![-0.2, 0.0, -0.1]];
        for temperature in [0.01, 1.0, 100.0] {
            let table = ScoreTable::new(rows.clone(), temperature).unwrap();
            assert_eq!(table.predicted(0), 0);
            assert_eq!(table.predicted(1), 1);
            let p = table.probabilities(0);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(numeric::argmax_tie_lowest(&p), table.predicted(0));
        }
    }

    /// Embeds any attribute named "axis N" as basis vector N; lets tests
    /// pin exact geometry without the oracle world.
    struct AxisEmbedder {
        dim: usize,
    }

    impl TextEmbedder for AxisEmbedder {
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
            texts
                .iter()
                .map(|t| {
                    let idx: usize = t
                        .split_whitespace()
                        .last()
                        .and_then(|n| n.parse().ok())
                        .unwrap_or(0);
                    let mut v = vec![0.0f32; self.dim];
                    v[idx % self.dim] = 1.0;
                    Ok(v)
                })
                .collect()
        }
    }

    fn axis_service(dim: usize) -> Arc<EmbeddingService> {
        let templates = TemplateSet::new(vec!["{}".to_string()]).unwrap();
        Arc::new(EmbeddingService::new(Arc::new(AxisEmbedder { dim }), templates))
    }

    fn store_from_rows(
        split: SplitTag,
        class_count: usize,
        labels: Vec<i64>,
        rows: Vec<Vec<f32>>,
    ) -> Arc<EmbeddingStore> {
        let dim = rows[0].len();
        let data: Vec<f32> = rows.into_iter().flatten().collect();
        Arc::new(EmbeddingStore::new(dim, class_count, split, labels, data, None).unwrap())
    }

    const INV_SQRT2: f32 = std::f32::consts::FRAC_1_SQRT_2;

    fn two_class_scorer(temperature: f64) -> Scorer {
        // rows: image 0 sits on axis 0 (class 0), image 1 on axis 1,
        // image 2 between axes 1 and 2 (both class 1)
        let store = store_from_rows(
            SplitTag::Train,
            2,
            vec![0, 1, 1],
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, INV_SQRT2, INV_SQRT2, 0.0],
            ],
        );
        Scorer::new(axis_service(4), store, temperature).unwrap()
    }

    fn two_class_classifier() -> Classifier {
        Classifier::new(vec![set(0, &["axis 0"]), set(1, &["axis 1", "axis 2"])]).unwrap()
    }

    #[test]
    fn joint_loss_matches_a_hand_computed_oracle() {
        let scorer = two_class_scorer(1.0);
        let classifier = two_class_classifier();

        // hand scores: image 0 -> (1.0, 0.0); image 1 -> (0.0, 0.5);
        // image 2 -> (0.0, 1/sqrt(2)); the store holds f32 rows, so the
        // oracle uses the same f32-rounded constant
        let hand = |own: f64, other: f64| -> f64 {
            let z = (own.exp() + other.exp()).ln();
            z - own
        };
        let expected =
            (hand(1.0, 0.0) + hand(0.5, 0.0) + hand(INV_SQRT2 as f64, 0.0)) / 3.0;
        let got = scorer.joint_loss(&classifier).unwrap();
        assert!(
            (got - expected).abs() < 1e-9,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn uniform_scores_cost_ln_c() {
        // both classes read the same single attribute, so every image
        // scores identically for both
        let scorer = two_class_scorer(0.01);
        let classifier =
            Classifier::new(vec![set(0, &["axis 3"]), set(1, &["axis 3"])]).unwrap();
        let loss = scorer.joint_loss(&classifier).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn perfect_separation_costs_nearly_nothing_at_small_temperature() {
        let scorer = two_class_scorer(0.01);
        let classifier = two_class_classifier();
        let loss = scorer.joint_loss(&classifier).unwrap();
        assert!(loss >= 0.0 && loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn joint_loss_refuses_distractor_stores() {
        let store = store_from_rows(
            SplitTag::Distractor,
            2,
            vec![-1, -1],
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
        );
        let scorer = Scorer::new(axis_service(4), store, 1.0).unwrap();
        assert!(matches!(
            scorer.joint_loss(&two_class_classifier()),
            Err(FitnessError::DistractorData)
        ));
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let scorer = two_class_scorer(1.0);
        let lone = Classifier::new(vec![set(0, &["axis 0"])]).unwrap();
        assert!(matches!(
            scorer.score_table(&lone),
            Err(FitnessError::ClassCountMismatch { classifier: 1, store: 2 })
        ));
    }

    #[test]
    fn joint_loss_drops_when_true_class_scores_rise() {
        let scorer = two_class_scorer(1.0);
        let weak = Classifier::new(vec![set(0, &["axis 3"]), set(1, &["axis 1"])]).unwrap();
        let strong = Classifier::new(vec![set(0, &["axis 0"]), set(1, &["axis 1"])]).unwrap();
        let weak_loss = scorer.joint_loss(&weak).unwrap();
        let strong_loss = scorer.joint_loss(&strong).unwrap();
        assert!(strong_loss < weak_loss);
    }

    #[test]
    fn predictions_follow_the_geometry() {
        let scorer = two_class_scorer(0.01);
        let classifier = two_class_classifier();
        assert_eq!(scorer.predict_row(&classifier, 0).unwrap(), 0);
        assert_eq!(scorer.predict_row(&classifier, 1).unwrap(), 1);
        assert_eq!(scorer.predict_row(&classifier, 2).unwrap(), 1);
    }

    #[test]
    fn pair_cache_fills_and_serves() {
        let scorer = two_class_scorer(1.0);
        let classifier = two_class_classifier();
        scorer.joint_loss(&classifier).unwrap();
        // 3 attributes x 3 rows
        assert_eq!(scorer.cached_pairs(), 9);
        let again = scorer.joint_loss(&classifier).unwrap();
        assert_eq!(scorer.cached_pairs(), 9);
        assert!(again.is_finite());
    }

    #[test]
    fn pretrain_objective_hand_cases() {
        // positives on axis 0, negatives on axis 1; the probe set reads
        // axis 0 so positives score 1.0 and negatives 0.0
        let store = store_from_rows(
            SplitTag::Train,
            2,
            vec![0, 0, 1, 1],
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
            ],
        );
        let scorer = Scorer::new(axis_service(4), store, 1.0).unwrap();
        let probe = set(0, &["axis 0"]);
        let perfect = scorer.pretrain_objective(&probe, &[0, 1], &[2, 3]).unwrap();
        assert!((perfect - (-1.0)).abs() < 1e-12);

        let symmetric = scorer.pretrain_objective(&probe, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(symmetric, 0.0);

        assert!(matches!(
            scorer.pretrain_objective(&probe, &[], &[2]),
            Err(FitnessError::EmptyGroup)
        ));
    }

    #[test]
    fn pretrain_objective_worked_example() {
        // positives score {0.8, 0.6}, negatives {0.1, 0.3, 0.2} under a
        // probe reading axis 0
        let store = store_from_rows(
            SplitTag::Train,
            2,
            vec![0, 0, 1, 1, 1],
            vec![
                vec![0.8, 0.6, 0.0, 0.0],
                vec![0.6, 0.8, 0.0, 0.0],
                vec![0.1, 0.0, (1.0f64 - 0.01).sqrt() as f32, 0.0],
                vec![0.3, 0.0, (1.0f64 - 0.09).sqrt() as f32, 0.0],
                vec![0.2, 0.0, (1.0f64 - 0.04).sqrt() as f32, 0.0],
            ],
        );
        let scorer = Scorer::new(axis_service(4), store, 1.0).unwrap();
        let probe = set(0, &["axis 0"]);
        let objective = scorer
            .pretrain_objective(&probe, &[0, 1], &[2, 3, 4])
            .unwrap();
        assert!((objective - (-0.5)).abs() < 1e-6, "objective {objective}");
    }

    #[test]
    fn separation_objective_hand_cases_are_exact() {
        // worked example: positives {0.8, 0.6}, negatives {0.1, 0.3, 0.2}
        let value =
            separation_objective(vec![0.8, 0.6], vec![0.1, 0.3, 0.2]).unwrap();
        assert!((value - (-0.5)).abs() < 1e-9, "value {value}");
        // perfect separation pins the floor
        let floor = separation_objective(vec![1.0, 1.0], vec![-1.0, -1.0, -1.0]).unwrap();
        assert_eq!(floor, -2.0);
        // identical groups sit at zero
        let flat = separation_objective(vec![0.4, 0.2], vec![0.2, 0.4]).unwrap();
        assert_eq!(flat, 0.0);
        assert!(matches!(
            separation_objective(vec![], vec![0.1]),
            Err(FitnessError::EmptyGroup)
        ));
    }

    #[test]
    fn pretrain_objective_is_antisymmetric() {
        let scorer = two_class_scorer(1.0);
        let probe = set(0, &["axis 1"]);
        let forward = scorer.pretrain_objective(&probe, &[0], &[1, 2]).unwrap();
        let backward = scorer.pretrain_objective(&probe, &[1, 2], &[0]).unwrap();
        assert_eq!(forward.to_bits(), (-backward).to_bits());
    }

    #[test]
    fn pretrain_fitness_partitions_train_rows() {
        let scorer = Arc::new(two_class_scorer(1.0));
        let fitness = PretrainFitness::new(scorer, None, 1).unwrap();
        assert_eq!(fitness.positives, vec![1, 2]);
        assert_eq!(fitness.negatives, vec![0]);
        let candidate = Classifier::new(vec![set(0, &["axis 1"])]).unwrap();
        let value = fitness.score(&candidate).unwrap();
        // positives score {1.0, 1/sqrt(2)}, negative scores 0; rows are
        // f32, so the oracle uses the f32-rounded constant
        let expected = 0.0 - (1.0 + INV_SQRT2 as f64) / 2.0;
        assert!((value - expected).abs() < 1e-9);
    }

    #[test]
    fn pretrain_fitness_appends_distractor_negatives() {
        let train = Arc::new(two_class_scorer(1.0));
        let distractor_store = store_from_rows(
            SplitTag::Distractor,
            2,
            vec![-1, -1],
            vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
        );
        let distractors =
            Arc::new(Scorer::new(axis_service(4), distractor_store, 1.0).unwrap());
        let fitness = PretrainFitness::new(train, Some(distractors), 0).unwrap();
        let candidate = Classifier::new(vec![set(0, &["axis 1"])]).unwrap();
        let value = fitness.score(&candidate).unwrap();
        // positives: row 0 scores 0. negatives: rows 1,2 score 1.0 and
        // 1/sqrt(2) (f32-rounded); distractor rows score 1.0 and 0.0
        let expected = (1.0 + INV_SQRT2 as f64 + 1.0 + 0.0) / 4.0;
        assert!((value - expected).abs() < 1e-9);
    }
}
