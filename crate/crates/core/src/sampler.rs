//! Policy sampling: prompt construction, K completions per instruction, code extraction.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backend::{BackendConfig, CompletionBackend, CompletionRequest};
use crate::corpus::Instruction;
use crate::error::{Error, Result};
use crate::fence::fenced_blocks;
use crate::seed::derive_seed;
use crate::testgen::TestArtifact;

pub const DEFAULT_PROMPT_TEMPLATE: &str =
    "{instruction}\n\nUse the following starter code:\n```python\n{starter}\n```\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMeta {
    pub temperature: f64,
    pub seed: u64,
    pub policy_identifier: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub instruction_id: String,
    pub candidate_id: usize,
    pub code: String,
    pub raw_completion: String,
    pub sampling: SamplingMeta,
}

impl CandidateSolution {
    pub fn key(&self) -> String {
        format!("{}@{}", self.instruction_id, self.candidate_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub backend: BackendConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    pub policy_identifier: String,
    #[serde(default = "default_true")]
    pub include_starter_code: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "crate::testgen::default_in_flight")]
    pub max_in_flight: usize,
    /// Overrides [`DEFAULT_PROMPT_TEMPLATE`]; must contain `{instruction}` and `{starter}`.
    #[serde(default)]
    pub prompt_template: Option<String>,
}

fn default_k() -> usize {
    20
}
fn default_temperature() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    2048
}
fn default_true() -> bool {
    true
}

impl SamplingConfig {
    pub fn new(backend: BackendConfig, policy_identifier: impl Into<String>) -> Self {
        Self {
            backend,
            k: default_k(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            policy_identifier: policy_identifier.into(),
            include_starter_code: true,
            seed: 0,
            max_in_flight: crate::testgen::default_in_flight(),
            prompt_template: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if let Some(t) = &self.prompt_template {
            if !t.contains("{instruction}") || !t.contains("{starter}") {
                return Err(Error::Config(
                    "prompt_template needs {instruction} and {starter} slots".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Starter code of the first consistent artifact that has any.
pub fn starter_for(artifacts: &[TestArtifact]) -> Option<&str> {
    artifacts
        .iter()
        .filter(|a| a.consistent == Some(true))
        .map(|a| a.starter_code.as_str())
        .find(|s| !s.trim().is_empty())
}

pub fn build_policy_prompt(
    instruction: &Instruction,
    starter: Option<&str>,
    cfg: &SamplingConfig,
) -> String {
    match starter.filter(|s| cfg.include_starter_code && !s.trim().is_empty()) {
        Some(starter) => cfg
            .prompt_template
            .as_deref()
            .unwrap_or(DEFAULT_PROMPT_TEMPLATE)
            .replacen("{starter}", starter, 1)
            .replacen("{instruction}", &instruction.text, 1),
        None => instruction.text.clone(),
    }
}

/// Bodies of fenced blocks joined by a blank line, or the text unchanged when unfenced.
pub fn extract_code(raw_completion: &str) -> String {
    let blocks = fenced_blocks(raw_completion);
    if blocks.is_empty() {
        raw_completion.to_string()
    } else {
        blocks.join("\n\n")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sampled {
    pub candidates: Vec<CandidateSolution>,
    pub shortfall: usize,
}

pub fn sample(
    instruction: &Instruction,
    prompt: &str,
    cfg: &SamplingConfig,
    backend: &dyn CompletionBackend,
) -> Result<Sampled> {
    let request_seed = derive_seed(cfg.seed, &[&instruction.id]);
    let req = CompletionRequest {
        key: &instruction.id,
        index: 0,
        prompt,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        n: cfg.k,
        seed: Some(request_seed),
    };
    let completions = backend.complete(&req)?;
    let shortfall = cfg.k.saturating_sub(completions.len());
    if shortfall > 0 {
        warn!(instruction = %instruction.id, got = completions.len(), k = cfg.k, "policy backend shortfall");
    }
    let candidates = completions
        .into_iter()
        .take(cfg.k)
        .enumerate()
        .map(|(candidate_id, raw)| CandidateSolution {
            instruction_id: instruction.id.clone(),
            candidate_id,
            code: extract_code(&raw),
            raw_completion: raw,
            sampling: SamplingMeta {
                temperature: cfg.temperature,
                seed: derive_seed(cfg.seed, &[&instruction.id, &candidate_id.to_string()]),
                policy_identifier: cfg.policy_identifier.clone(),
            },
        })
        .collect();
    Ok(Sampled {
        candidates,
        shortfall,
    })
}

/// Sample for `(instruction, prompt)` pairs with bounded concurrency; output in input order.
pub fn sample_all(
    work: &[(Instruction, String)],
    cfg: &SamplingConfig,
    backend: &dyn CompletionBackend,
) -> Vec<Result<Sampled>> {
    crate::parallel::map_bounded(work, cfg.max_in_flight, |(inst, prompt)| {
        sample(inst, prompt, cfg, backend)
    })
}
