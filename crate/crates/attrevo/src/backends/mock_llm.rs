//! A deterministic stand-in for the completion backend. It reads the
//! example attribute lists out of the prompt, keeps lines from the best one
//! (or, in-context, re-draws from all shown lists weighted by how well their
//! list performed), and tops up from a fixed vocabulary. Because the
//! vocabulary contains the oracle world's ground-truth phrases, an engine
//! driven by this mock can actually converge, entirely offline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{BackendError, CompletionClient, CompletionParams};
use crate::mutation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPolicyKind {
    /// Keep each line of the best shown list with probability `p_keep`.
    BestOnly,
    /// Draw lines from all shown lists, weighted by list rank and how many
    /// lists agree on the line.
    InContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockPolicy {
    pub kind: MockPolicyKind,
    pub p_keep: f64,
    /// Output size jitter below/above the best list's size.
    pub shrink: u32,
    pub grow: u32,
    pub max_items: usize,
}

impl Default for MockPolicy {
    fn default() -> Self {
        MockPolicy {
            kind: MockPolicyKind::BestOnly,
            p_keep: 0.7,
            shrink: 1,
            grow: 1,
            max_items: 10,
        }
    }
}

pub struct MockCompleter {
    vocab: Vec<String>,
    policy: MockPolicy,
    seed: u64,
}

impl MockCompleter {
    pub fn new(vocab: Vec<String>, policy: MockPolicy, seed: u64) -> Self {
        assert!(!vocab.is_empty(), "mock completer needs a vocabulary");
        MockCompleter {
            vocab,
            policy,
            seed,
        }
    }

    fn rng_for(&self, prompt: &str, params: &CompletionParams) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(params.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().expect("digest long enough"));
        ChaCha8Rng::seed_from_u64(word)
    }

    fn vocab_draw(&self, rng: &mut ChaCha8Rng) -> String {
        self.vocab[rng.gen_range(0..self.vocab.len())].clone()
    }

    fn best_only(&self, best: &[String], target: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut lines: Vec<String> = best
            .iter()
            .filter(|_| rng.gen::<f64>() < self.policy.p_keep)
            .cloned()
            .collect();
        lines.truncate(target);
        while lines.len() < target {
            lines.push(self.vocab_draw(rng));
        }
        lines
    }

    fn in_context(
        &self,
        blocks: &[Vec<String>],
        target: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<String> {
        // Later blocks rank higher; a line's weight is the sum of the ranks
        // of the blocks that contain it, so agreement compounds.
        let mut pool: Vec<(String, f64)> = Vec::new();
        for (rank0, block) in blocks.iter().enumerate() {
            let rank = (rank0 + 1) as f64;
            for line in block {
                match pool.iter_mut().find(|(text, _)| text == line) {
                    Some((_, w)) => *w += rank,
                    None => pool.push((line.clone(), rank)),
                }
            }
        }
        let mut lines = Vec::with_capacity(target);
        for _ in 0..target {
            if !pool.is_empty() && rng.gen::<f64>() < self.policy.p_keep {
                let total: f64 = pool.iter().map(|(_, w)| w).sum();
                let mut ticket = rng.gen::<f64>() * total;
                let mut pick = pool.len() - 1;
                for (i, (_, w)) in pool.iter().enumerate() {
                    if ticket < *w {
                        pick = i;
                        break;
                    }
                    ticket -= w;
                }
                lines.push(pool.remove(pick).0);
            } else {
                lines.push(self.vocab_draw(rng));
            }
        }
        lines
    }
}

impl CompletionClient for MockCompleter {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let mut rng = self.rng_for(prompt, params);
        let blocks = mutation::extract_numbered_blocks(prompt);
        let lines = if blocks.is_empty() {
            (0..self.policy.max_items)
                .map(|_| self.vocab_draw(&mut rng))
                .collect::<Vec<_>>()
        } else {
            let best = blocks.last().expect("non-empty blocks");
            let jitter =
                rng.gen_range(-(self.policy.shrink as i64)..=(self.policy.grow as i64));
            let target = (best.len() as i64 + jitter)
                .clamp(1, self.policy.max_items as i64) as usize;
            match self.policy.kind {
                MockPolicyKind::BestOnly => self.best_only(best, target, &mut rng),
                MockPolicyKind::InContext => self.in_context(&blocks, target, &mut rng),
            }
        };
        let mut out = String::from("Here is an improved attribute list:\n");
        for (i, line) in lines.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, line));
        }
        Ok(out)
    }
}
