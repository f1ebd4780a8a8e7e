//! Evaluation: accuracy, the top1-top2 probability margin, confusion
//! matrices, and the per-attribute audit report.

use serde::{Deserialize, Serialize};

use crate::domain::{ClassId, Classifier};
use crate::fitness::{FitnessError, ScoreTable, Scorer};
use crate::numeric;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("margin needs at least two classes")]
    SingleClass,
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

/// Gap between the largest and second-largest entry of one probability
/// row.
pub fn top_gap(probabilities: &[f64]) -> Result<f64, EvalError> {
    if probabilities.len() < 2 {
        return Err(EvalError::SingleClass);
    }
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in probabilities {
        if p > top {
            second = top;
            top = p;
        } else if p > second {
            second = p;
        }
    }
    Ok(top - second)
}

/// Fraction of rows whose predicted class matches the label.
pub fn accuracy(scorer: &Scorer, classifier: &Classifier) -> Result<f64, EvalError> {
    let store = scorer.store();
    if store.rows() == 0 {
        return Err(EvalError::EmptyDataset);
    }
    let mut hits = 0usize;
    for row in 0..store.rows() {
        let label = store.class_of(row).ok_or(EvalError::EmptyDataset)?;
        if scorer.predict_row(classifier, row)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / store.rows() as f64)
}

/// Mean top1-top2 probability gap across a score table's rows.
pub fn margin_from_table(table: &ScoreTable) -> Result<f64, EvalError> {
    if table.rows() == 0 {
        return Err(EvalError::EmptyDataset);
    }
    let mut gaps = Vec::with_capacity(table.rows());
    for row in 0..table.rows() {
        gaps.push(top_gap(&table.probabilities(row))?);
    }
    Ok(numeric::mean(&gaps))
}

/// Mean top1-top2 probability gap of a classifier over a store.
pub fn margin(scorer: &Scorer, classifier: &Classifier) -> Result<f64, EvalError> {
    let table = scorer.score_table(classifier)?;
    margin_from_table(&table)
}

/// Confusion counts indexed `[label][predicted]`.
pub fn confusion(scorer: &Scorer, classifier: &Classifier) -> Result<Vec<Vec<u64>>, EvalError> {
    let store = scorer.store();
    if store.rows() == 0 {
        return Err(EvalError::EmptyDataset);
    }
    let c = store.class_count();
    let mut counts = vec![vec![0u64; c]; c];
    for row in 0..store.rows() {
        let label = store.class_of(row).ok_or(EvalError::EmptyDataset)?;
        let predicted = scorer.predict_row(classifier, row)?;
        counts[label][predicted] += 1;
    }
    Ok(counts)
}

/// Render a confusion matrix as CSV with a header row; rows are true
/// classes, columns predictions.
pub fn confusion_csv(counts: &[Vec<u64>], class_names: Option<&[String]>) -> String {
    let name = |c: usize| -> String {
        class_names
            .and_then(|names| names.get(c).cloned())
            .unwrap_or_else(|| format!("class_{c}"))
    };
    let mut out = String::from("true\\predicted");
    for c in 0..counts.len() {
        out.push(',');
        out.push_str(&name(c));
    }
    out.push('\n');
    for (label, row) in counts.iter().enumerate() {
        out.push_str(&name(label));
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAudit {
    pub text: String,
    /// Mean score over the class's own images.
    pub mean_own: f64,
    /// Mean score over every other class's images.
    pub mean_other: f64,
    /// mean_own - mean_other; positive means the attribute discriminates
    /// in the class's favor.
    pub gap: f64,
    /// This attribute's share of the class's own-image mean score.
    pub contribution_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAudit {
    pub class_id: ClassId,
    pub class_name: Option<String>,
    pub attributes: Vec<AttributeAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub classes: Vec<ClassAudit>,
}

/// Per-attribute score breakdown over a labeled store: how each
/// attribute behaves on its class's own images versus everyone else's,
/// and how much of the class score it carries.
pub fn audit_report(scorer: &Scorer, classifier: &Classifier) -> Result<AuditReport, EvalError> {
    let store = scorer.store();
    if store.rows() == 0 {
        return Err(EvalError::EmptyDataset);
    }
    let mut classes = Vec::with_capacity(classifier.class_count());
    for class_id in 0..classifier.class_count() {
        let own_rows = store.rows_of_class(class_id);
        let other_rows: Vec<usize> = (0..store.rows())
            .filter(|&r| store.class_of(r) != Some(class_id))
            .collect();
        let set = classifier.set(class_id);

        let mut own_means = Vec::with_capacity(set.len());
        let mut other_means = Vec::with_capacity(set.len());
        for attr in set.attributes() {
            let mean_over = |rows: &[usize]| -> Result<f64, EvalError> {
                if rows.is_empty() {
                    return Ok(0.0);
                }
                let mut scores = Vec::with_capacity(rows.len());
                for &row in rows {
                    scores.push(scorer.attribute_score_row(attr.as_str(), row)?);
                }
                Ok(numeric::sorted_mean(scores))
            };
            own_means.push(mean_over(&own_rows)?);
            other_means.push(mean_over(&other_rows)?);
        }

        let total_own = numeric::pairwise_sum(&own_means);
        let even_share = 1.0 / set.len() as f64;
        let attributes = set
            .attributes()
            .iter()
            .zip(own_means.iter().zip(other_means.iter()))
            .map(|(attr, (&own, &other))| AttributeAudit {
                text: attr.as_str().to_string(),
                mean_own: own,
                mean_other: other,
                gap: own - other,
                contribution_share: if total_own.abs() < 1e-12 {
                    even_share
                } else {
                    own / total_own
                },
            })
            .collect();
        classes.push(ClassAudit {
            class_id,
            class_name: store
                .class_names()
                .and_then(|names| names.get(class_id).cloned()),
            attributes,
        });
    }
    Ok(AuditReport { classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::store::{EmbeddingStore, SplitTag};
    use crate::backends::{BackendError, EmbeddingService, TemplateSet, TextEmbedder};
    use crate::domain::{Attribute, AttributeSet};
    use std::sync::Arc;

    #[test]
    fn top_gap_hand_cases() {
        assert!((top_gap(&[0.5, 0.3, 0.2]).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(top_gap(&[0.25, 0.25, 0.25, 0.25]).unwrap(), 0.0);
        assert_eq!(top_gap(&[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(top_gap(&[1.0]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn top_gap_order_does_not_matter() {
        let a = top_gap(&[0.1, 0.6, 0.3]).unwrap();
        let b = top_gap(&[0.6, 0.3, 0.1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn margins_stay_in_range_on_random_tables() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let rows = rng.gen_range(1..5usize);
            let classes = rng.gen_range(2..6usize);
            let values: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let table = ScoreTable::new(values, 0.05).unwrap();
            let m = margin_from_table(&table).unwrap();
            assert!((0.0..=1.0).contains(&m), "margin {m} out of range");
        }
    }

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

    fn attr(s: &str) -> Attribute {
        Attribute::canonicalize(s).unwrap()
    }

    fn set(class_id: ClassId, names: &[&str]) -> AttributeSet {
        AttributeSet::new(class_id, names.iter().map(|s| attr(s)).collect()).unwrap()
    }

    fn scorer_with_names(class_names: Option<Vec<String>>) -> Scorer {
        let templates = TemplateSet::new(vec!["{}".to_string()]).unwrap();
        let service = Arc::new(EmbeddingService::new(
            Arc::new(AxisEmbedder { dim: 4 }),
            templates,
        ));
        // two rows per class, class 0 on axis 0, class 1 on axis 1
        let data: Vec<f32> = vec![
            1.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        ];
        let store = Arc::new(
            EmbeddingStore::new(4, 2, SplitTag::Test, vec![0, 0, 1, 1], data, class_names)
                .unwrap(),
        );
        Scorer::new(service, store, 0.01).unwrap()
    }

    fn aligned_classifier() -> Classifier {
        Classifier::new(vec![set(0, &["axis 0"]), set(1, &["axis 1"])]).unwrap()
    }

    #[test]
    fn perfect_classifier_scores_full_accuracy() {
        let scorer = scorer_with_names(None);
        let classifier = aligned_classifier();
        assert_eq!(accuracy(&scorer, &classifier).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_fall_back_to_class_zero() {
        let scorer = scorer_with_names(None);
        let constant =
            Classifier::new(vec![set(0, &["axis 3"]), set(1, &["axis 3"])]).unwrap();
        // every prediction ties and resolves to class 0; half the rows
        // carry label 0
        assert_eq!(accuracy(&scorer, &constant).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_is_invariant_under_monotone_score_transforms() {
        let values = vec![vec![0.3, 0.1], vec![0.2, 0.4], vec![-0.5, -0.1]];
        let transformed: Vec<Vec<f64>> = values
            .iter()
            .map(|row| row.iter().map(|v| 3.0 * v + 10.0).collect())
            .collect();
        let a = ScoreTable::new(values, 1.0).unwrap();
        let b = ScoreTable::new(transformed, 1.0).unwrap();
        for row in 0..a.rows() {
            assert_eq!(a.predicted(row), b.predicted(row));
        }
    }

    #[test]
    fn margin_of_a_separating_classifier_is_high() {
        let scorer = scorer_with_names(None);
        let classifier = aligned_classifier();
        let m = margin(&scorer, &classifier).unwrap();
        assert!(m > 0.999, "margin {m}");
    }

    #[test]
    fn confusion_counts_diagonal_for_perfect_prediction() {
        let scorer = scorer_with_names(None);
        let classifier = aligned_classifier();
        let counts = confusion(&scorer, &classifier).unwrap();
        assert_eq!(counts, vec![vec![2, 0], vec![0, 2]]);
    }

    #[test]
    fn confusion_csv_includes_names_and_counts() {
        let counts = vec![vec![2, 0], vec![1, 1]];
        let names = vec!["lichen a".to_string(), "lichen b".to_string()];
        let csv = confusion_csv(&counts, Some(&names));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "true\\predicted,lichen a,lichen b");
        assert_eq!(lines[1], "lichen a,2,0");
        assert_eq!(lines[2], "lichen b,1,1");

        let plain = confusion_csv(&counts, None);
        assert!(plain.starts_with("true\\predicted,class_0,class_1"));
    }

    #[test]
    fn audit_shares_sum_to_one_and_single_attribute_takes_it_all() {
        let scorer = scorer_with_names(Some(vec!["first".to_string(), "second".to_string()]));
        let classifier =
            Classifier::new(vec![set(0, &["axis 0", "axis 2"]), set(1, &["axis 1"])])
                .unwrap();
        let report = audit_report(&scorer, &classifier).unwrap();
        assert_eq!(report.classes.len(), 2);
        for class in &report.classes {
            let total: f64 = class
                .attributes
                .iter()
                .map(|a| a.contribution_share)
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "shares sum to {total}");
        }
        assert_eq!(report.classes[0].class_name.as_deref(), Some("first"));
        assert_eq!(report.classes[1].attributes.len(), 1);
        assert_eq!(report.classes[1].attributes[0].contribution_share, 1.0);
    }

    #[test]
    fn audit_flags_discriminative_attributes_by_gap() {
        let scorer = scorer_with_names(None);
        // class 0 reads its true axis plus a dead axis; the true axis
        // must show the larger gap
        let classifier =
            Classifier::new(vec![set(0, &["axis 0", "axis 3"]), set(1, &["axis 1"])])
                .unwrap();
        let report = audit_report(&scorer, &classifier).unwrap();
        let attrs = &report.classes[0].attributes;
        let true_axis = attrs.iter().find(|a| a.text == "axis 0").unwrap();
        let dead_axis = attrs.iter().find(|a| a.text == "axis 3").unwrap();
        assert!(true_axis.gap > dead_axis.gap);
        assert!((true_axis.mean_own - 1.0).abs() < 1e-6);
        assert!(true_axis.mean_other.abs() < 1e-6);
        assert_eq!(dead_axis.gap, 0.0);
    }

    #[test]
    fn audit_splits_shares_evenly_when_the_class_mean_vanishes() {
        let scorer = scorer_with_names(None);
        // both attributes score zero on the class's own images
        let classifier =
            Classifier::new(vec![set(0, &["axis 2", "axis 3"]), set(1, &["axis 1"])])
                .unwrap();
        let report = audit_report(&scorer, &classifier).unwrap();
        let attrs = &report.classes[0].attributes;
        assert_eq!(attrs[0].contribution_share, 0.5);
        assert_eq!(attrs[1].contribution_share, 0.5);
    }
}
