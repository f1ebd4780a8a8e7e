//! A synthetic world with known ground truth. Every vocabulary phrase owns a
//! fixed embedding vector; each class is defined by a few ground-truth
//! phrases whose vectors are mutually orthogonal across classes, and images
//! are noisy normalized means of their class's ground-truth vectors. An
//! engine wired to this world can be tested for convergence with no network.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::store::{EmbeddingStore, SplitTag, StoreError};
use crate::backends::{BackendError, TextEmbedder};
use crate::domain::DISTRACTOR_LABEL;
use crate::numeric;

/// Required gap between a ground-truth set's similarity to its own images
/// and to any other class's images.
pub const REQUIRED_MARGIN: f64 = 0.3;
/// Ground-truth vectors of different classes must stay below this |cosine|.
pub const CROSS_CLASS_COS_LIMIT: f64 = 0.2;

const PROBE_IMAGES_PER_CLASS: usize = 16;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("bad oracle spec: {0}")]
    BadSpec(String),
    #[error("{needed} ground-truth vectors cannot be near-orthogonal in dim {dim}")]
    DimensionTooSmall { needed: usize, dim: usize },
    #[error(
        "seed rejected: ground-truth margin {margin:.3} below required {required:.3}; \
         pick another seed or lower noise_sigma"
    )]
    SeedRejected { margin: f64, required: f64 },
    #[error("world file {path}: {detail}")]
    WorldFile { path: String, detail: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub classes: usize,
    pub attrs_per_class: usize,
    pub vocab_size: usize,
    pub dim: usize,
    /// Expected L2 norm of the additive image noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            classes: 5,
            attrs_per_class: 5,
            vocab_size: 500,
            dim: 64,
            noise_sigma: 0.1,
            seed: 1,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    spec: OracleSpec,
    class_attrs: Vec<Vec<String>>,
    vocab: Vec<String>,
}

/// The built world: phrases, their vectors, and generators for image splits.
pub struct OracleWorld {
    spec: OracleSpec,
    class_attrs: Vec<Vec<String>>,
    vocab: Vec<String>,
    /// Phrase -> embedding for every vocabulary entry.
    vectors: HashMap<String, Arc<Vec<f32>>>,
    /// Normalized per-class means of ground-truth vectors.
    class_means: Vec<Vec<f64>>,
    /// Own-vs-other similarity margin measured at construction.
    pub margin: f64,
}

const ADJECTIVES: [&str; 30] = [
    "pale", "ribbed", "glossy", "mottled", "serrated", "waxy", "speckled", "banded", "velvety",
    "translucent", "crimson", "amber", "slate", "olive", "ivory", "charcoal", "bristly", "smooth",
    "crinkled", "powdery", "striped", "blunt", "tapered", "hooked", "fringed", "swollen",
    "hollow", "knotted", "scaly", "dusky",
];

const NOUNS: [&str; 25] = [
    "fronds", "crust", "lobes", "stalk", "cap", "gills", "margin", "veins", "bark", "spines",
    "tendrils", "rosette", "plates", "filaments", "nodules", "sheath", "crest", "bands",
    "pores", "tufts", "ridges", "whorls", "bristles", "scales", "streaks",
];

impl OracleWorld {
    pub fn build(spec: OracleSpec) -> Result<Self, OracleError> {
        let gt_count = spec.classes * spec.attrs_per_class;
        if spec.classes == 0 || spec.attrs_per_class == 0 || spec.dim == 0 {
            return Err(OracleError::BadSpec(
                "classes, attrs_per_class and dim must be positive".to_string(),
            ));
        }
        if spec.vocab_size < gt_count {
            return Err(OracleError::BadSpec(format!(
                "vocab_size {} smaller than {gt_count} ground-truth phrases",
                spec.vocab_size
            )));
        }
        let bank = ADJECTIVES.len() * NOUNS.len();
        if spec.vocab_size > bank {
            return Err(OracleError::BadSpec(format!(
                "vocab_size {} exceeds the {bank} phrases the word bank can form",
                spec.vocab_size
            )));
        }
        if !(spec.noise_sigma >= 0.0) {
            return Err(OracleError::BadSpec("noise_sigma must be >= 0".to_string()));
        }

        let mut phrase_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x70687261_7365);
        let mut combos: Vec<String> = ADJECTIVES
            .iter()
            .flat_map(|a| NOUNS.iter().map(move |n| format!("{a} {n}")))
            .collect();
        // Fisher-Yates over the full bank, take the front.
        for i in (1..combos.len()).rev() {
            let j = phrase_rng.gen_range(0..=i);
            combos.swap(i, j);
        }
        combos.truncate(spec.vocab_size);
        let vocab = combos;

        let class_attrs: Vec<Vec<String>> = (0..spec.classes)
            .map(|c| vocab[c * spec.attrs_per_class..(c + 1) * spec.attrs_per_class].to_vec())
            .collect();

        Self::assemble(spec, class_attrs, vocab)
    }

    /// Rebuild a world (vectors included) from its serializable parts.
    fn assemble(
        spec: OracleSpec,
        class_attrs: Vec<Vec<String>>,
        vocab: Vec<String>,
    ) -> Result<Self, OracleError> {
        let gt_count = spec.classes * spec.attrs_per_class;
        if gt_count > spec.dim {
            return Err(OracleError::DimensionTooSmall {
                needed: gt_count,
                dim: spec.dim,
            });
        }
        let gt_vectors = orthonormal_set(spec.seed ^ 0x6774_7665_63, gt_count, spec.dim);

        let mut vectors: HashMap<String, Arc<Vec<f32>>> = HashMap::new();
        for (c, attrs) in class_attrs.iter().enumerate() {
            for (slot, text) in attrs.iter().enumerate() {
                vectors.insert(
                    text.clone(),
                    Arc::new(gt_vectors[c * spec.attrs_per_class + slot].clone()),
                );
            }
        }
        for text in &vocab {
            vectors
                .entry(text.clone())
                .or_insert_with(|| Arc::new(hashed_unit_vector(spec.seed, text, spec.dim)));
        }

        // Cross-class cosine check. The construction makes these exactly
        // orthogonal up to f32 roundoff, but the bound is part of the
        // contract, so verify rather than trust.
        for c in 0..spec.classes {
            for c2 in (c + 1)..spec.classes {
                for a in &class_attrs[c] {
                    for b in &class_attrs[c2] {
                        let cos = numeric::dot(&vectors[a], &vectors[b]);
                        if cos.abs() >= CROSS_CLASS_COS_LIMIT {
                            return Err(OracleError::SeedRejected {
                                margin: cos.abs(),
                                required: CROSS_CLASS_COS_LIMIT,
                            });
                        }
                    }
                }
            }
        }

        let class_means: Vec<Vec<f64>> = class_attrs
            .iter()
            .map(|attrs| {
                let mut mean = vec![0.0f64; spec.dim];
                for a in attrs {
                    for (m, v) in mean.iter_mut().zip(vectors[a].iter()) {
                        *m += *v as f64;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= attrs.len() as f64;
                }
                mean
            })
            .collect();

        let mut world = OracleWorld {
            spec,
            class_attrs,
            vocab,
            vectors,
            class_means,
            margin: 0.0,
        };
        let margin = world.measure_margin();
        if margin < REQUIRED_MARGIN {
            return Err(OracleError::SeedRejected {
                margin,
                required: REQUIRED_MARGIN,
            });
        }
        world.margin = margin;
        Ok(world)
    }

    /// Smallest gap, over classes, between a ground-truth set's mean
    /// similarity to its own probe images and the highest mean similarity it
    /// reaches on any other class's probe images.
    fn measure_margin(&self) -> f64 {
        let probe = self.generate_labeled(SplitTag::Validation, PROBE_IMAGES_PER_CLASS, 0x6d61)
            .expect("probe split generates");
        let c = self.spec.classes;
        let mut worst = f64::INFINITY;
        for class in 0..c {
            let gt = &self.class_attrs[class];
            let mut mean_on = vec![Vec::new(); c];
            for row in 0..probe.rows() {
                let owner = probe.class_of(row).expect("probe rows are labeled");
                let score = numeric::sorted_mean(
                    gt.iter()
                        .map(|a| numeric::dot(&self.vectors[a], probe.row(row)))
                        .collect(),
                );
                mean_on[owner].push(score);
            }
            let own = numeric::mean(&mean_on[class]);
            let rival = (0..c)
                .filter(|&o| o != class)
                .map(|o| numeric::mean(&mean_on[o]))
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.min(own - rival);
        }
        worst
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn class_attrs(&self) -> &[Vec<String>] {
        &self.class_attrs
    }

    pub fn vector(&self, phrase: &str) -> Option<&Arc<Vec<f32>>> {
        self.vectors.get(phrase)
    }

    fn generate_labeled(
        &self,
        split: SplitTag,
        images_per_class: usize,
        salt: u64,
    ) -> Result<EmbeddingStore, StoreError> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ salt.rotate_left(17));
        let sigma_component = if spec.dim > 0 {
            spec.noise_sigma / (spec.dim as f64).sqrt()
        } else {
            0.0
        };
        let mut data = Vec::with_capacity(spec.classes * images_per_class * spec.dim);
        let mut labels = Vec::with_capacity(spec.classes * images_per_class);
        for class in 0..spec.classes {
            for _ in 0..images_per_class {
                let mut x: Vec<f64> = self.class_means[class].clone();
                if sigma_component > 0.0 {
                    for v in x.iter_mut() {
                        *v += sigma_component * numeric::standard_normal(&mut rng);
                    }
                }
                let unit = numeric::normalized_f32(&x).expect("class mean is nonzero");
                data.extend_from_slice(&unit);
                labels.push(class as i64);
            }
        }
        EmbeddingStore::new(spec.dim, spec.classes, split, labels, data, None)
    }

    pub fn generate_split(
        &self,
        split: SplitTag,
        images_per_class: usize,
    ) -> Result<EmbeddingStore, OracleError> {
        if images_per_class == 0 {
            return Err(OracleError::BadSpec(
                "images_per_class must be positive".to_string(),
            ));
        }
        let salt = match split {
            SplitTag::Train => 0x7472,
            SplitTag::Validation => 0x7661,
            SplitTag::Test => 0x7465,
            SplitTag::Distractor => {
                return Err(OracleError::BadSpec(
                    "use generate_distractors for the distractor split".to_string(),
                ))
            }
        };
        Ok(self.generate_labeled(split, images_per_class, salt)?)
    }

    /// Rows with no class structure at all: uniform random directions.
    pub fn generate_distractors(&self, rows: usize) -> Result<EmbeddingStore, OracleError> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6469_7374);
        let mut data = Vec::with_capacity(rows * spec.dim);
        for _ in 0..rows {
            data.extend_from_slice(&numeric::random_unit_vector(&mut rng, spec.dim));
        }
        Ok(EmbeddingStore::new(
            spec.dim,
            spec.classes,
            SplitTag::Distractor,
            vec![DISTRACTOR_LABEL; rows],
            data,
            None,
        )?)
    }

    pub fn embedder(&self) -> OracleEmbedder {
        OracleEmbedder {
            dim: self.spec.dim,
            seed: self.spec.seed,
            known: self.vectors.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), OracleError> {
        let file = WorldFile {
            spec: self.spec.clone(),
            class_attrs: self.class_attrs.clone(),
            vocab: self.vocab.clone(),
        };
        let json = serde_json::to_string_pretty(&file).expect("world serializes");
        fs::write(path, json + "\n").map_err(|e| OracleError::WorldFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let raw = fs::read_to_string(path).map_err(|e| OracleError::WorldFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let file: WorldFile = serde_json::from_str(&raw).map_err(|e| OracleError::WorldFile {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::assemble(file.spec, file.class_attrs, file.vocab)
    }
}

/// `count` exactly orthonormal vectors in `dim` dimensions, from seeded
/// gaussians via Gram-Schmidt. Random rejection cannot deliver dozens of
/// pairwise near-orthogonal vectors, so orthogonality is built in.
fn orthonormal_set(seed: u64, count: usize, dim: usize) -> Vec<Vec<f32>> {
    debug_assert!(count <= dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| numeric::standard_normal(&mut rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let norm = numeric::l2_norm_f64(&v);
        if norm < 1e-6 {
            continue; // essentially-dependent draw; resample
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x as f32).collect())
        .collect()
}

/// Deterministic unit vector for a phrase outside the ground truth.
fn hashed_unit_vector(seed: u64, text: &str, dim: usize) -> Vec<f32> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"));
    let mut rng = ChaCha8Rng::seed_from_u64(word);
    numeric::random_unit_vector(&mut rng, dim)
}

/// Embeds any text deterministically. Text containing a vocabulary phrase
/// maps to that phrase's vector (longest match wins), so template-wrapped
/// attributes land on the attribute's own embedding; everything else gets a
/// stable pseudo-random direction.
pub struct OracleEmbedder {
    dim: usize,
    seed: u64,
    known: HashMap<String, Arc<Vec<f32>>>,
}

impl OracleEmbedder {
    fn embed_one(&self, text: &str) -> Vec<f32> {
        let needle = text.to_lowercase();
        let mut hit: Option<(&String, &Arc<Vec<f32>>)> = None;
        for (phrase, vector) in &self.known {
            if needle.contains(phrase.as_str())
                && hit.map_or(true, |(p, _)| phrase.len() > p.len())
            {
                hit = Some((phrase, vector));
            }
        }
        match hit {
            Some((_, vector)) => vector.as_ref().clone(),
            None => hashed_unit_vector(self.seed, &needle, self.dim),
        }
    }
}

impl TextEmbedder for OracleEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
