//! Completion and embedding backends: trait surface, prompt templates for
//! text embedding, a persistent embedding cache, plus mock and HTTP
//! implementations and the synthetic oracle world used for testing.

pub mod http;
pub mod mock_llm;
pub mod oracle;
pub mod store;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {detail}")]
    Unavailable { detail: String },
    #[error("malformed backend response: {detail}")]
    MalformedResponse { detail: String },
    #[error("bad prompt template {template:?}: {detail}")]
    BadTemplate { template: String, detail: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding cache io at {path}: {detail}")]
    CacheIo { path: PathBuf, detail: String },
}

/// Sampling knobs passed with every completion request.
#[derive(Debug, Clone)]
pub struct CompletionParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: Option<u32>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.7,
            seed: 0,
            max_tokens: None,
        }
    }
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError>;
}

pub trait TextEmbedder: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

/// Prompt templates an attribute is poured into before embedding, e.g.
/// `"a photo of {}"`. Each template contains exactly one `{}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    templates: Vec<String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            templates: vec!["a photo of {}".to_string()],
        }
    }
}

impl TemplateSet {
    pub fn new(templates: Vec<String>) -> Result<Self, BackendError> {
        if templates.is_empty() {
            return Err(BackendError::BadTemplate {
                template: String::new(),
                detail: "template set is empty".to_string(),
            });
        }
        for t in &templates {
            if t.matches("{}").count() != 1 {
                return Err(BackendError::BadTemplate {
                    template: t.clone(),
                    detail: "expected exactly one {} placeholder".to_string(),
                });
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn fill_all(&self, text: &str) -> Vec<String> {
        self.templates
            .iter()
            .map(|t| t.replacen("{}", text, 1))
            .collect()
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    /// Stable content hash, part of every cache key.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.templates {
            hasher.update(t.as_bytes());
            hasher.update([0x1f]);
        }
        hex_prefix(&hasher.finalize(), 16)
    }
}

fn hex_prefix(digest: &[u8], bytes: usize) -> String {
    digest[..bytes].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    text: String,
    vector: Vec<f32>,
}

/// Embeds attribute text by averaging its unit-normalized template
/// embeddings, renormalizing, and caching the result keyed by
/// (template-set hash, text). The cache optionally persists as an
/// append-only JSONL file, which lets warm keys be served even when the
/// backend is down.
pub struct EmbeddingService {
    backend: Arc<dyn TextEmbedder>,
    templates: TemplateSet,
    cache: RwLock<HashMap<String, Arc<Vec<f32>>>>,
    sink: Option<Mutex<fs::File>>,
}

impl EmbeddingService {
    pub fn new(backend: Arc<dyn TextEmbedder>, templates: TemplateSet) -> Self {
        EmbeddingService {
            backend,
            templates,
            cache: RwLock::new(HashMap::new()),
            sink: None,
        }
    }

    /// Like [`EmbeddingService::new`], with a persistent cache file that is
    /// loaded now and appended to on every miss.
    pub fn with_cache_file(
        backend: Arc<dyn TextEmbedder>,
        templates: TemplateSet,
        path: &Path,
    ) -> Result<Self, BackendError> {
        let mut map = HashMap::new();
        if path.exists() {
            let raw = fs::read_to_string(path).map_err(|e| BackendError::CacheIo {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
            for line in raw.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(line) {
                    Ok(entry) => {
                        map.insert(entry.key, Arc::new(entry.vector));
                    }
                    Err(e) => log::warn!("skipping malformed cache line: {e}"),
                }
            }
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| BackendError::CacheIo {
                    path: path.to_path_buf(),
                    detail: e.to_string(),
                })?;
            }
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::CacheIo {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        Ok(EmbeddingService {
            backend,
            templates,
            cache: RwLock::new(map),
            sink: Some(Mutex::new(file)),
        })
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    fn key_for(&self, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.templates.fingerprint().as_bytes());
        hasher.update([0x1f]);
        hasher.update(text.as_bytes());
        hex_prefix(&hasher.finalize(), 16)
    }

    /// Unit-norm embedding of `text`: mean of its normalized per-template
    /// embeddings, renormalized.
    pub fn embed_text(&self, text: &str) -> Result<Arc<Vec<f32>>, BackendError> {
        let key = self.key_for(text);
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let filled = self.templates.fill_all(text);
        let raw = self.backend.embed_batch(&filled)?;
        if raw.len() != filled.len() {
            return Err(BackendError::MalformedResponse {
                detail: format!("asked for {} embeddings, got {}", filled.len(), raw.len()),
            });
        }
        let dim = raw[0].len();
        let mut acc = vec![0.0f64; dim];
        for vector in &raw {
            if vector.len() != dim {
                return Err(BackendError::DimensionMismatch {
                    expected: dim,
                    got: vector.len(),
                });
            }
            let norm = numeric::l2_norm_f32(vector);
            if norm < 1e-12 {
                return Err(BackendError::MalformedResponse {
                    detail: "zero-norm embedding".to_string(),
                });
            }
            for (a, v) in acc.iter_mut().zip(vector) {
                *a += *v as f64 / norm;
            }
        }
        for a in acc.iter_mut() {
            *a /= raw.len() as f64;
        }
        let unit = numeric::normalized_f32(&acc).ok_or_else(|| BackendError::MalformedResponse {
            detail: "template embeddings cancel to a zero vector".to_string(),
        })?;
        let arc = Arc::new(unit);
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                text: text.to_string(),
                vector: arc.as_ref().clone(),
            })
            .expect("cache line serializes");
            let mut f = sink.lock().unwrap();
            let _ = writeln!(f, "{line}");
        }
        self.cache.write().unwrap().insert(key, arc.clone());
        Ok(arc)
    }

    /// Embed every entry, returning how many were computed fresh.
    pub fn warm(&self, texts: &[String]) -> Result<usize, BackendError> {
        let before = self.cached_len();
        for t in texts {
            self.embed_text(t)?;
        }
        Ok(self.cached_len() - before)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Embedder whose output depends only on which template wrapped the
    /// text: template index i maps to basis vector e_i.
    struct AxisEmbedder {
        dim: usize,
        calls: AtomicUsize,
    }

    impl TextEmbedder for AxisEmbedder {
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(texts
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let mut v = vec![0.0; self.dim];
                    v[i % self.dim] = 2.5; // deliberately unnormalized
                    v
                })
                .collect())
        }
    }

    struct DownEmbedder;
    impl TextEmbedder for DownEmbedder {
        fn embed_batch(&self, _texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
            Err(BackendError::Unavailable {
                detail: "wire unplugged".to_string(),
            })
        }
    }

    #[test]
    fn template_set_validates_placeholders() {
        assert!(TemplateSet::new(vec!["a photo of {}".into()]).is_ok());
        assert!(TemplateSet::new(vec!["no placeholder".into()]).is_err());
        assert!(TemplateSet::new(vec!["{} and {}".into()]).is_err());
        assert!(TemplateSet::new(vec![]).is_err());
    }

    #[test]
    fn two_orthogonal_templates_average_to_the_normalized_midpoint() {
        let templates =
            TemplateSet::new(vec!["one {}".into(), "two {}".into()]).unwrap();
        let service = EmbeddingService::new(
            Arc::new(AxisEmbedder {
                dim: 4,
                calls: AtomicUsize::new(0),
            }),
            templates,
        );
        let v = service.embed_text("anything").unwrap();
        let e0 = [1.0f32, 0.0, 0.0, 0.0];
        let e1 = [0.0f32, 1.0, 0.0, 0.0];
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert!((numeric::dot(&v, &e0) - expected).abs() < 1e-6);
        assert!((numeric::dot(&v, &e1) - expected).abs() < 1e-6);
        assert!((numeric::l2_norm_f32(&v) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cache_hit_skips_the_backend() {
        let backend = Arc::new(AxisEmbedder {
            dim: 4,
            calls: AtomicUsize::new(0),
        });
        let service = EmbeddingService::new(backend.clone(), TemplateSet::default());
        service.embed_text("ridged cap").unwrap();
        service.embed_text("ridged cap").unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn warm_cache_survives_a_dead_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let live = EmbeddingService::with_cache_file(
            Arc::new(AxisEmbedder {
                dim: 4,
                calls: AtomicUsize::new(0),
            }),
            TemplateSet::default(),
            &cache,
        )
        .unwrap();
        let warm = live.embed_text("ridged cap").unwrap();

        let dead =
            EmbeddingService::with_cache_file(Arc::new(DownEmbedder), TemplateSet::default(), &cache)
                .unwrap();
        let served = dead.embed_text("ridged cap").unwrap();
        assert_eq!(served.as_ref(), warm.as_ref());
        assert!(matches!(
            dead.embed_text("never embedded"),
            Err(BackendError::Unavailable { .. })
        ));
    }

    #[test]
    fn cache_keys_depend_on_template_set() {
        let a = EmbeddingService::new(
            Arc::new(AxisEmbedder {
                dim: 4,
                calls: AtomicUsize::new(0),
            }),
            TemplateSet::default(),
        );
        let b_templates = TemplateSet::new(vec!["a drawing of {}".into()]).unwrap();
        assert_ne!(
            a.key_for("ridged cap"),
            EmbeddingService::new(Arc::new(DownEmbedder), b_templates).key_for("ridged cap")
        );
    }
}
