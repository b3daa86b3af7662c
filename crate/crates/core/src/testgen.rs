//! Test-case generation: prompt rendering, generator calls, response parsing.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::backend::{BackendConfig, CompletionBackend, CompletionRequest};
use crate::corpus::Instruction;
use crate::error::{Error, Result};
use crate::fence::{fenced_blocks, trim_blank_lines};

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";
pub const PROMPT_TEMPLATE: &str = include_str!("../resources/testgen_prompt_v1.txt");
const QUESTION_SLOT: &str = "{Question}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestArtifact {
    pub instruction_id: String,
    pub gen_index: usize,
    pub analysis: String,
    pub reference_solution: String,
    pub starter_code: String,
    pub test_code: String,
    /// Set by the consistency filter.
    #[serde(default)]
    pub consistent: Option<bool>,
}

impl TestArtifact {
    /// Stable key for this artifact within a run.
    pub fn key(&self) -> String {
        format!("{}#{}", self.instruction_id, self.gen_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedResponse {
    pub analysis: String,
    pub reference_solution: String,
    pub starter_code: String,
    pub test_code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("missing section {0}")]
    MissingSection(Section),
    #[error("empty test code")]
    EmptyTestCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Analysis,
    Solution,
    StartCode,
    TestCode,
}

impl Section {
    pub const ALL: [Section; 4] = [
        Section::Analysis,
        Section::Solution,
        Section::StartCode,
        Section::TestCode,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Section::Analysis => "[Analysis]",
            Section::Solution => "[Solution]",
            Section::StartCode => "[Start Code]",
            Section::TestCode => "[Test Code]",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub backend: BackendConfig,
    #[serde(default = "default_n")]
    pub n_per_instruction: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Maximum concurrent backend calls.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_n() -> usize {
    3
}
fn default_max_tokens() -> u32 {
    4096
}
pub(crate) fn default_in_flight() -> usize {
    4
}

impl GeneratorConfig {
    pub fn new(backend: BackendConfig) -> Self {
        Self {
            backend,
            n_per_instruction: default_n(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_instruction == 0 {
            return Err(Error::Config("n_per_instruction must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn render_prompt(instruction: &Instruction) -> Result<String> {
    if instruction.text.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "instruction `{}` has empty text",
            instruction.id
        )));
    }
    Ok(PROMPT_TEMPLATE.replacen(QUESTION_SLOT, &instruction.text, 1))
}

fn header_of(line: &str) -> Option<Section> {
    let core = line
        .trim()
        .trim_matches(|c: char| c == '*' || c == '#' || c.is_whitespace());
    Section::ALL.into_iter().find(|s| core == s.header())
}

/// Split a generator reply into its four sections, located by header name.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, ResponseError> {
    let mut bodies: [Option<Vec<&str>>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        if let Some(section) = header_of(line) {
            let idx = section as usize;
            // A repeated header ends the previous section but the first occurrence wins.
            current = bodies[idx].is_none().then_some(idx);
            if let Some(i) = current {
                bodies[i] = Some(Vec::new());
            }
            continue;
        }
        if let Some(i) = current {
            if let Some(body) = bodies[i].as_mut() {
                body.push(line);
            }
        }
    }

    let mut texts: Vec<String> = Vec::with_capacity(4);
    for section in Section::ALL {
        let Some(lines) = bodies[section as usize].take() else {
            return Err(ResponseError::MissingSection(section));
        };
        let body = lines.join("\n");
        let text = match section {
            Section::Analysis => body.trim().to_string(),
            _ => code_body(&body),
        };
        texts.push(text);
    }
    let [analysis, reference_solution, starter_code, test_code]: [String; 4] =
        texts.try_into().expect("four sections");
    if test_code.trim().is_empty() {
        return Err(ResponseError::EmptyTestCode);
    }
    Ok(ParsedResponse {
        analysis,
        reference_solution,
        starter_code,
        test_code,
    })
}

fn code_body(body: &str) -> String {
    let blocks = fenced_blocks(body);
    if blocks.is_empty() {
        trim_blank_lines(body)
    } else {
        let joined: Vec<String> = blocks.iter().map(|b| trim_blank_lines(b)).collect();
        trim_blank_lines(&joined.join("\n\n"))
    }
}

/// Render fields in the generator reply format with fenced code sections.
pub fn format_response(parsed: &ParsedResponse) -> String {
    format!(
        "[Analysis]\n{}\n[Solution]\n```python\n{}\n```\n[Start Code]\n```python\n{}\n```\n[Test Code]\n```python\n{}\n```\n",
        parsed.analysis, parsed.reference_solution, parsed.starter_code, parsed.test_code
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Generation {
    pub artifacts: Vec<TestArtifact>,
    pub parse_failures: usize,
    /// Responses the backend did not return.
    pub shortfall: usize,
}

/// Query the generator `n_per_instruction` times and parse every reply.
pub fn generate(
    instruction: &Instruction,
    cfg: &GeneratorConfig,
    backend: &dyn CompletionBackend,
) -> Result<Generation> {
    let prompt = render_prompt(instruction)?;
    let mut out = Generation::default();
    for gen_index in 0..cfg.n_per_instruction {
        let req = CompletionRequest {
            key: &instruction.id,
            index: gen_index,
            prompt: &prompt,
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            n: 1,
            seed: None,
        };
        let Some(raw) = backend.complete(&req)?.into_iter().next() else {
            out.shortfall += 1;
            continue;
        };
        match parse_response(&raw) {
            Ok(p) => out.artifacts.push(TestArtifact {
                instruction_id: instruction.id.clone(),
                gen_index,
                analysis: p.analysis,
                reference_solution: p.reference_solution,
                starter_code: p.starter_code,
                test_code: p.test_code,
                consistent: None,
            }),
            Err(e) => {
                debug!(instruction = %instruction.id, gen_index, error = %e, "unparseable generator reply");
                out.parse_failures += 1;
            }
        }
    }
    if out.parse_failures > 0 || out.shortfall > 0 {
        warn!(
            instruction = %instruction.id,
            parse_failures = out.parse_failures,
            shortfall = out.shortfall,
            "test generation incomplete"
        );
    }
    Ok(out)
}

/// Generate for many instructions with bounded concurrency. Output order follows input.
pub fn generate_all(
    instructions: &[Instruction],
    cfg: &GeneratorConfig,
    backend: &dyn CompletionBackend,
) -> Vec<Result<Generation>> {
    crate::parallel::map_bounded(instructions, cfg.max_in_flight, |inst| {
        generate(inst, cfg, backend)
    })
}
