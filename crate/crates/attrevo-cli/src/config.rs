//! Run configuration: a TOML file describing backends, engine settings,
//! and data locations, plus the flag overrides the binary accepts.
//! Relative paths in the file resolve against the file's own directory,
//! so a run directory can be moved or archived wholesale.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use attrevo::backends::http::{
    HttpCompletionClient, HttpEmbeddingClient, RetryPolicy, UreqTransport,
};
use attrevo::backends::mock_llm::{MockCompleter, MockPolicy, MockPolicyKind};
use attrevo::backends::oracle::OracleWorld;
use attrevo::{
    CompletionClient, EmbeddingService, EmbeddingStore, EngineConfig, PretrainConfig,
    SamplingBias, TemplateSet, TextEmbedder,
};

/// Parsed config file with every path already made absolute.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub engine: EngineConfig,
    pub softmax_temperature: f64,
    pub mutation: MutationSection,
    pub pretrain: PretrainConfig,
    pub backends: BackendsSection,
    pub data: DataSection,
    pub oracle: OracleSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSection {
    /// Include numeric losses in mutation prompts.
    #[serde(default)]
    pub show_scores: bool,
    /// Attempts per mutation before the class is skipped for the step.
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    /// Write every prompt/completion exchange to out_dir/mutations.jsonl.
    #[serde(default)]
    pub audit_log: bool,
}

fn default_retry_limit() -> u32 {
    3
}

impl Default for MutationSection {
    fn default() -> Self {
        MutationSection {
            show_scores: false,
            retry_limit: default_retry_limit(),
            audit_log: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Synthetic world: embeddings from the world file, completions from
    /// the deterministic mock. Fully offline.
    Oracle,
    /// Live chat-completion and embedding endpoints.
    Http,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsSection {
    pub kind: BackendKind,
    /// Text templates for attribute embedding; each contains one `{}`.
    #[serde(default = "default_templates")]
    pub templates: Vec<String>,
    /// Optional persistent embedding cache (JSONL, append-only).
    #[serde(default)]
    pub cache_file: Option<PathBuf>,
    #[serde(default)]
    pub mock: MockSection,
    #[serde(default)]
    pub http: Option<HttpSection>,
}

fn default_templates() -> Vec<String> {
    vec!["a photo of {}".to_string()]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    #[serde(default = "default_mock_policy")]
    pub policy: String,
    #[serde(default = "default_p_keep")]
    pub p_keep: f64,
    #[serde(default = "default_jitter")]
    pub shrink: u32,
    #[serde(default = "default_jitter")]
    pub grow: u32,
    #[serde(default = "default_max_items")]
    pub max_items: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mock_policy() -> String {
    "best_only".to_string()
}

fn default_p_keep() -> f64 {
    0.7
}

fn default_jitter() -> u32 {
    1
}

fn default_max_items() -> usize {
    10
}

impl Default for MockSection {
    fn default() -> Self {
        MockSection {
            policy: default_mock_policy(),
            p_keep: default_p_keep(),
            shrink: default_jitter(),
            grow: default_jitter(),
            max_items: default_max_items(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSection {
    pub completion_url: String,
    pub embedding_url: String,
    pub completion_model: String,
    pub embedding_model: String,
    /// Environment variable holding the bearer token, if the endpoints
    /// need one. The token itself never appears in config files.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_token_env() -> String {
    "ATTREVO_TOKEN".to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    /// Seed the joint bank from per-class pretrain trajectories.
    Pretrain,
    /// Seed the joint bank with random draws from the attribute pool.
    Pool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Oracle world file (oracle backend only).
    #[serde(default)]
    pub world: Option<PathBuf>,
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default)]
    pub distractors: Option<PathBuf>,
    /// Attribute pool file, one phrase per line; the built-in pool is
    /// used when absent.
    #[serde(default)]
    pub pool: Option<PathBuf>,
    #[serde(default = "default_init")]
    pub init: InitSource,
}

fn default_init() -> InitSource {
    InitSource::Pretrain
}

/// Parameters for `make-oracle`; mirrors the world builder's spec plus
/// split sizes.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_attrs_per_class")]
    pub attrs_per_class: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_oracle_seed")]
    pub seed: u64,
    #[serde(default = "default_images")]
    pub train_per_class: usize,
    #[serde(default = "default_images")]
    pub test_per_class: usize,
    #[serde(default = "default_distractor_rows")]
    pub distractor_rows: usize,
}

fn default_classes() -> usize {
    5
}

fn default_attrs_per_class() -> usize {
    5
}

fn default_vocab_size() -> usize {
    500
}

fn default_dim() -> usize {
    64
}

fn default_noise_sigma() -> f64 {
    0.1
}

fn default_oracle_seed() -> u64 {
    1
}

fn default_images() -> usize {
    50
}

fn default_distractor_rows() -> usize {
    100
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            classes: default_classes(),
            attrs_per_class: default_attrs_per_class(),
            vocab_size: default_vocab_size(),
            dim: default_dim(),
            noise_sigma: default_noise_sigma(),
            seed: default_oracle_seed(),
            train_per_class: default_images(),
            test_per_class: default_images(),
            distractor_rows: default_distractor_rows(),
        }
    }
}

/// The raw file shape: everything optional except backends and data, so a
/// config states only what it changes.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    engine: RawEngine,
    #[serde(default)]
    fitness: RawFitness,
    #[serde(default)]
    mutation: MutationSection,
    #[serde(default)]
    pretrain: RawPretrain,
    backends: BackendsSection,
    data: DataSection,
    #[serde(default)]
    oracle: OracleSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    initial_classifiers: Option<usize>,
    sample_size: Option<usize>,
    prompt_length: Option<usize>,
    sampling_temperature: Option<f64>,
    sampling_bias: Option<SamplingBias>,
    max_iterations: Option<u64>,
    patience: Option<u64>,
    bank_capacity: Option<usize>,
    checkpoint_interval: Option<u64>,
    max_set_size: Option<usize>,
    seed: Option<u64>,
}

impl RawEngine {
    fn fold(self) -> EngineConfig {
        let mut config = EngineConfig::default();
        if let Some(v) = self.initial_classifiers {
            config.initial_classifiers = v;
        }
        if let Some(v) = self.sample_size {
            config.sample_size = v;
        }
        if let Some(v) = self.prompt_length {
            config.prompt_length = v;
        }
        if let Some(v) = self.sampling_temperature {
            config.sampling_temperature = v;
        }
        if let Some(v) = self.sampling_bias {
            config.sampling_bias = v;
        }
        if let Some(v) = self.max_iterations {
            config.max_iterations = v;
        }
        if let Some(v) = self.patience {
            config.patience = v;
        }
        if let Some(v) = self.bank_capacity {
            config.bank_capacity = v;
        }
        if let Some(v) = self.checkpoint_interval {
            config.checkpoint_interval = v;
        }
        if let Some(v) = self.max_set_size {
            config.max_set_size = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFitness {
    softmax_temperature: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPretrain {
    iterations: Option<u64>,
    require_distractors: Option<bool>,
    geometric_ratio: Option<f64>,
}

impl RawPretrain {
    fn fold(self) -> PretrainConfig {
        let mut config = PretrainConfig::default();
        if let Some(v) = self.iterations {
            config.iterations = v;
        }
        if let Some(v) = self.require_distractors {
            config.require_distractors = v;
        }
        if let Some(v) = self.geometric_ratio {
            config.geometric_ratio = v;
        }
        config
    }
}

/// Flag overrides shared by the run-driving subcommands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub prompt_length: Option<usize>,
    pub bias: Option<SamplingBias>,
    pub templates: Option<Vec<String>>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let parsed: RawConfig = toml::from_str(&raw)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };

        let mut engine = parsed.engine.fold();
        if let Some(seed) = overrides.seed {
            engine.seed = seed;
        }
        if let Some(iterations) = overrides.iterations {
            engine.max_iterations = iterations;
        }
        if let Some(k) = overrides.prompt_length {
            engine.prompt_length = k;
        }
        if let Some(bias) = overrides.bias {
            engine.sampling_bias = bias;
        }

        let mut backends = parsed.backends;
        if let Some(templates) = &overrides.templates {
            backends.templates = templates.clone();
        }
        backends.cache_file = backends.cache_file.as_deref().map(&resolve);
        if backends.kind == BackendKind::Http && backends.http.is_none() {
            bail!("backends.kind = \"http\" needs a [backends.http] section");
        }

        let softmax_temperature = parsed.fitness.softmax_temperature.unwrap_or(0.01);
        if softmax_temperature <= 0.0 {
            bail!("fitness.softmax_temperature must be positive");
        }

        let mut data = parsed.data;
        data.world = data.world.as_deref().map(&resolve);
        data.train = resolve(&data.train);
        data.test = resolve(&data.test);
        data.distractors = data.distractors.as_deref().map(&resolve);
        data.pool = data.pool.as_deref().map(&resolve);
        if backends.kind == BackendKind::Oracle && data.world.is_none() {
            bail!("backends.kind = \"oracle\" needs data.world (run make-oracle first)");
        }

        let out_dir = resolve(&parsed.run.out_dir.unwrap_or_else(|| PathBuf::from("out")));

        Ok(RunConfig {
            out_dir,
            engine,
            softmax_temperature,
            mutation: parsed.mutation,
            pretrain: parsed.pretrain.fold(),
            backends,
            data,
            oracle: parsed.oracle,
        })
    }

    pub fn template_set(&self) -> Result<TemplateSet> {
        Ok(TemplateSet::new(self.backends.templates.clone())?)
    }

    /// The attribute pool: the configured file, or the built-in list.
    pub fn load_pool(&self) -> Result<Vec<attrevo::Attribute>> {
        match &self.data.pool {
            None => Ok(attrevo::default_pool()),
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .with_context(|| format!("reading pool {}", path.display()))?;
                let mut pool = Vec::new();
                for line in raw.lines() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    pool.push(
                        attrevo::Attribute::canonicalize(line)
                            .with_context(|| format!("pool line {line:?}"))?,
                    );
                }
                if pool.is_empty() {
                    bail!("pool file {} holds no attributes", path.display());
                }
                Ok(pool)
            }
        }
    }

    pub fn load_store(&self, which: &str) -> Result<Arc<EmbeddingStore>> {
        let path = match which {
            "train" => &self.data.train,
            "test" => &self.data.test,
            other => bail!("unknown split {other}"),
        };
        let store = EmbeddingStore::load(path)
            .with_context(|| format!("loading {which} store {}", path.display()))?;
        Ok(Arc::new(store))
    }

    pub fn load_distractors(&self) -> Result<Option<Arc<EmbeddingStore>>> {
        match &self.data.distractors {
            None => Ok(None),
            Some(path) => {
                let store = EmbeddingStore::load(path)
                    .with_context(|| format!("loading distractor store {}", path.display()))?;
                Ok(Some(Arc::new(store)))
            }
        }
    }

    fn load_world(&self) -> Result<OracleWorld> {
        let path = self
            .data
            .world
            .as_ref()
            .context("config has no data.world")?;
        Ok(OracleWorld::load(path)?)
    }

    fn mock_policy(&self) -> Result<MockPolicy> {
        let section = &self.backends.mock;
        let kind = match section.policy.as_str() {
            "best_only" => MockPolicyKind::BestOnly,
            "in_context" => MockPolicyKind::InContext,
            other => bail!("unknown mock policy {other:?} (best_only or in_context)"),
        };
        Ok(MockPolicy {
            kind,
            p_keep: section.p_keep,
            shrink: section.shrink,
            grow: section.grow,
            max_items: section.max_items,
        })
    }

    /// Completion backend per the config: the world-vocabulary mock, or a
    /// live chat-completions endpoint.
    pub fn build_completer(&self) -> Result<Arc<dyn CompletionClient>> {
        match self.backends.kind {
            BackendKind::Oracle => {
                let world = self.load_world()?;
                let mock = MockCompleter::new(
                    world.vocab().to_vec(),
                    self.mock_policy()?,
                    self.backends.mock.seed,
                );
                Ok(Arc::new(mock))
            }
            BackendKind::Http => {
                let http = self.backends.http.as_ref().expect("validated in load");
                let transport =
                    Arc::new(UreqTransport::new(Duration::from_secs(http.timeout_secs)));
                let client = HttpCompletionClient::new(
                    transport,
                    http.completion_url.clone(),
                    http.completion_model.clone(),
                    bearer_from_env(&http.token_env),
                    RetryPolicy::default(),
                );
                Ok(Arc::new(client))
            }
        }
    }

    /// Embedding service per the config, with the persistent cache
    /// attached when one is configured.
    pub fn build_embedding_service(&self) -> Result<Arc<EmbeddingService>> {
        let backend: Arc<dyn TextEmbedder> = match self.backends.kind {
            BackendKind::Oracle => Arc::new(self.load_world()?.embedder()),
            BackendKind::Http => {
                let http = self.backends.http.as_ref().expect("validated in load");
                let transport =
                    Arc::new(UreqTransport::new(Duration::from_secs(http.timeout_secs)));
                Arc::new(HttpEmbeddingClient::new(
                    transport,
                    http.embedding_url.clone(),
                    http.embedding_model.clone(),
                    bearer_from_env(&http.token_env),
                    RetryPolicy::default(),
                ))
            }
        };
        let templates = self.template_set()?;
        let service = match &self.backends.cache_file {
            Some(path) => EmbeddingService::with_cache_file(backend, templates, path)?,
            None => EmbeddingService::new(backend, templates),
        };
        Ok(Arc::new(service))
    }
}

fn bearer_from_env(var: &str) -> Option<String> {
    match std::env::var(var) {
        Ok(token) if !token.is_empty() => Some(token),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        let mut file = std::fs::File::create(&path).unwrap();
        file.write_all(body.as_bytes()).unwrap();
        path
    }

    const MINIMAL: &str = r#"
[backends]
kind = "oracle"

[data]
world = "oracle/world.json"
train = "data/train.json"
test = "data/test.json"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), MINIMAL);
        let config = RunConfig::load(&path, &Overrides::default()).unwrap();
        assert_eq!(config.engine, EngineConfig::default());
        assert_eq!(config.softmax_temperature, 0.01);
        assert_eq!(config.pretrain, PretrainConfig::default());
        assert!(!config.mutation.show_scores);
        assert_eq!(config.backends.templates, vec!["a photo of {}"]);
        assert_eq!(config.out_dir, dir.path().join("out"));
        assert_eq!(config.data.train, dir.path().join("data/train.json"));
    }

    #[test]
    fn overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{MINIMAL}\n[engine]\nseed = 5\nmax_iterations = 70\n");
        let path = write_config(dir.path(), &body);
        let overrides = Overrides {
            seed: Some(9),
            iterations: Some(12),
            prompt_length: Some(1),
            bias: Some(SamplingBias::Worst),
            templates: Some(vec!["an image of {}".to_string()]),
        };
        let config = RunConfig::load(&path, &overrides).unwrap();
        assert_eq!(config.engine.seed, 9);
        assert_eq!(config.engine.max_iterations, 12);
        assert_eq!(config.engine.prompt_length, 1);
        assert_eq!(config.engine.sampling_bias, SamplingBias::Worst);
        assert_eq!(config.backends.templates, vec!["an image of {}"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{MINIMAL}\n[engine]\nsalmple_size = 3\n");
        let path = write_config(dir.path(), &body);
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("salmple_size"), "{err:#}");
    }

    #[test]
    fn http_kind_without_section_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = MINIMAL.replace("kind = \"oracle\"", "kind = \"http\"");
        let path = write_config(dir.path(), &body);
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("backends.http"), "{err:#}");
    }

    #[test]
    fn oracle_kind_without_world_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = MINIMAL.replace("world = \"oracle/world.json\"\n", "");
        let path = write_config(dir.path(), &body);
        let err = RunConfig::load(&path, &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("make-oracle"), "{err:#}");
    }

    #[test]
    fn absolute_paths_stay_absolute() {
        let dir = tempfile::tempdir().unwrap();
        let body = MINIMAL.replace("data/train.json", "/fixed/train.json");
        let path = write_config(dir.path(), &body);
        let config = RunConfig::load(&path, &Overrides::default()).unwrap();
        assert_eq!(config.data.train, PathBuf::from("/fixed/train.json"));
    }
}
