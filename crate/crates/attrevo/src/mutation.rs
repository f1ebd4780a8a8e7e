//! Prompt construction, completion parsing, and the retrying mutation
//! operator that turns a class's scored history into a candidate
//! attribute set.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Serialize;

use crate::backends::{BackendError, CompletionClient, CompletionParams};
use crate::domain::{Attribute, AttributeSet, ClassId};

/// Bumped whenever the template text changes shape; recorded in checkpoints
/// so resumed runs can detect a prompt mismatch.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

pub const PROMPT_TEMPLATE: &str = include_str!("../resources/prompt_template.txt");

#[derive(Debug, thiserror::Error)]
pub enum MutationError {
    #[error("cannot build a prompt from an empty history")]
    EmptyHistory,
    #[error("completion had no parsable attribute lines after {attempts} attempt(s)")]
    UnparsableCompletion { attempts: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn item_regex() -> Regex {
    Regex::new(r"^\s*(?:\d+[.)]|[-*\u{2022}])\s*(.+)$").expect("item regex")
}

fn header_regex() -> Regex {
    Regex::new(r"^\s*List\s+\d+").expect("header regex")
}

/// Collect numbered or bulleted lines, canonicalized, first occurrence
/// kept, at most `max_set_size` items.
pub fn parse_attributes(
    completion: &str,
    max_set_size: usize,
) -> Result<Vec<Attribute>, MutationError> {
    let item = item_regex();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in completion.lines() {
        if out.len() == max_set_size {
            break;
        }
        let Some(caps) = item.captures(line) else {
            continue;
        };
        let Ok(attr) = Attribute::canonicalize(&caps[1]) else {
            continue;
        };
        if seen.insert(attr.as_str().to_string()) {
            out.push(attr);
        }
    }
    if out.is_empty() {
        return Err(MutationError::UnparsableCompletion { attempts: 1 });
    }
    Ok(out)
}

/// Split prompt text into the attribute lists it displays. Lists are
/// delimited by `List N` headers; a text with no headers yields all its
/// numbered items as one block. Blocks arrive in display order, so the
/// last block is the best-scoring list.
pub fn extract_numbered_blocks(text: &str) -> Vec<Vec<String>> {
    let header = header_regex();
    let item = item_regex();
    let mut blocks: Vec<Vec<String>> = Vec::new();
    let mut current: Option<Vec<String>> = None;
    let mut loose: Vec<String> = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if header.is_match(line) {
            saw_header = true;
            if let Some(block) = current.take() {
                if !block.is_empty() {
                    blocks.push(block);
                }
            }
            current = Some(Vec::new());
            continue;
        }
        if let Some(caps) = item.captures(line) {
            let entry = caps[1].trim().to_string();
            if entry.is_empty() {
                continue;
            }
            match current.as_mut() {
                Some(block) => block.push(entry),
                None => loose.push(entry),
            }
        }
    }
    if let Some(block) = current.take() {
        if !block.is_empty() {
            blocks.push(block);
        }
    }
    if !saw_header && !loose.is_empty() {
        blocks.push(loose);
    }
    blocks
}

#[derive(Debug, Clone)]
pub struct PromptExample {
    pub attributes: Vec<Attribute>,
    pub loss: f64,
}

/// A rendered-to-be prompt: the selected history examples ordered worst
/// to best, plus the knobs that shape the instruction text.
#[derive(Debug, Clone)]
pub struct MutationPrompt {
    pub examples: Vec<PromptExample>,
    pub max_set_size: usize,
    pub show_scores: bool,
}

impl MutationPrompt {
    pub fn render(&self) -> String {
        let mut rendered = Vec::with_capacity(self.examples.len());
        for (i, example) in self.examples.iter().enumerate() {
            let mut block = if self.show_scores {
                format!("List {} (score {:.4}):\n", i + 1, example.loss)
            } else {
                format!("List {}:\n", i + 1)
            };
            for (j, attr) in example.attributes.iter().enumerate() {
                block.push_str(&format!("{}. {}\n", j + 1, attr.as_str()));
            }
            rendered.push(block.trim_end().to_string());
        }
        PROMPT_TEMPLATE
            .replace("{examples}", &rendered.join("\n\n"))
            .replace("{max_set_size}", &self.max_set_size.to_string())
    }
}

/// Pick the `k` lowest-loss history entries and order them worst first,
/// so the best list sits closest to the completion point.
pub fn build_prompt(
    history: &[(AttributeSet, f64)],
    k: usize,
    max_set_size: usize,
    show_scores: bool,
) -> Result<MutationPrompt, MutationError> {
    if history.is_empty() || k == 0 {
        return Err(MutationError::EmptyHistory);
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| history[a].1.total_cmp(&history[b].1));
    order.truncate(k.min(history.len()));
    order.reverse();
    let examples = order
        .into_iter()
        .map(|i| PromptExample {
            attributes: history[i].0.attributes().to_vec(),
            loss: history[i].1,
        })
        .collect();
    Ok(MutationPrompt {
        examples,
        max_set_size,
        show_scores,
    })
}

/// One prompt/completion exchange, kept for offline inspection.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRecord {
    pub run_tag: String,
    pub iteration: u64,
    pub class_id: ClassId,
    pub attempt: u32,
    pub temperature: f64,
    pub seed: u64,
    pub prompt: String,
    pub completion: String,
    pub parsed: Option<Vec<String>>,
}

pub trait AuditSink: Send {
    fn record(&mut self, record: &AuditRecord);
}

/// Appends one JSON object per exchange to a file.
pub struct JsonlAuditSink {
    writer: BufWriter<fs::File>,
}

impl JsonlAuditSink {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = fs::File::create(path)?;
        Ok(JsonlAuditSink {
            writer: BufWriter::new(file),
        })
    }
}

impl AuditSink for JsonlAuditSink {
    fn record(&mut self, record: &AuditRecord) {
        let line = serde_json::to_string(record).expect("audit record serializes");
        if writeln!(self.writer, "{line}").and_then(|_| self.writer.flush()).is_err() {
            log::warn!("audit sink write failed; continuing without it");
        }
    }
}

/// The mutation operator: prompt a completion backend with a class's
/// best history and parse an attribute set out of the reply, retrying
/// unparsable completions at increasing temperature.
#[derive(Clone)]
pub struct Mutator {
    client: Arc<dyn CompletionClient>,
    pub k: usize,
    pub max_set_size: usize,
    pub show_scores: bool,
    pub retry_limit: u32,
    pub base_temperature: f64,
    pub temperature_step: f64,
    pub run_tag: String,
    audit: Option<Arc<Mutex<dyn AuditSink>>>,
}

impl Mutator {
    pub fn new(client: Arc<dyn CompletionClient>, k: usize, max_set_size: usize) -> Self {
        Mutator {
            client,
            k,
            max_set_size,
            show_scores: false,
            retry_limit: 3,
            base_temperature: 0.7,
            temperature_step: 0.15,
            run_tag: String::new(),
            audit: None,
        }
    }

    pub fn with_audit(mut self, sink: Arc<Mutex<dyn AuditSink>>) -> Self {
        self.audit = Some(sink);
        self
    }

    fn log_exchange(
        &self,
        class_id: ClassId,
        iteration: u64,
        attempt: u32,
        params: &CompletionParams,
        prompt: &str,
        completion: &str,
        parsed: Option<&[Attribute]>,
    ) {
        let Some(sink) = &self.audit else {
            return;
        };
        let record = AuditRecord {
            run_tag: self.run_tag.clone(),
            iteration,
            class_id,
            attempt,
            temperature: params.temperature,
            seed: params.seed,
            prompt: prompt.to_string(),
            completion: completion.to_string(),
            parsed: parsed.map(|attrs| attrs.iter().map(|a| a.as_str().to_string()).collect()),
        };
        sink.lock().expect("audit sink lock").record(&record);
    }

    /// Produce one candidate attribute set for `class_id`. Backend
    /// failures propagate immediately; unparsable completions are
    /// retried with a fresh seed and a warmer temperature.
    pub fn mutate(
        &self,
        class_id: ClassId,
        history: &[(AttributeSet, f64)],
        iteration: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<AttributeSet, MutationError> {
        let prompt = build_prompt(history, self.k, self.max_set_size, self.show_scores)?;
        let rendered = prompt.render();
        let attempts = self.retry_limit.max(1);
        for attempt in 0..attempts {
            let params = CompletionParams {
                temperature: self.base_temperature + self.temperature_step * f64::from(attempt),
                seed: rng.gen::<u64>(),
                max_tokens: None,
            };
            let completion = self.client.complete(&rendered, &params)?;
            match parse_attributes(&completion, self.max_set_size) {
                Ok(attrs) => {
                    self.log_exchange(
                        class_id,
                        iteration,
                        attempt,
                        &params,
                        &rendered,
                        &completion,
                        Some(&attrs),
                    );
                    let set = AttributeSet::new(class_id, attrs)
                        .expect("parse_attributes returns a non-empty list");
                    return Ok(set);
                }
                Err(_) => {
                    self.log_exchange(
                        class_id,
                        iteration,
                        attempt,
                        &params,
                        &rendered,
                        &completion,
                        None,
                    );
                }
            }
        }
        Err(MutationError::UnparsableCompletion { attempts })
    }
}
