//! Syntax-tree mutation of Python programs for synthetic negatives.

mod infer;
mod walk;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::{Error, Result};
use crate::preference::LabeledCandidate;
use crate::python::{parse_module, unparse_suite, SourceLocation};
use crate::sampler::CandidateSolution;
use crate::sandbox::{assemble_program, run_matrix, MatrixJob, Sandbox};
use crate::seed::{derive_seed, rng_for};
use crate::testgen::TestArtifact;

pub const SYNTH_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    SwapArgs,
    ReplaceCall,
    ChangeOperator,
    NegateCondition,
    SwapIfElse,
    OffByOne,
    DropExceptionHandler,
    AlterReturn,
}

impl Rule {
    pub const ALL: [Rule; 8] = [
        Rule::SwapArgs,
        Rule::ReplaceCall,
        Rule::ChangeOperator,
        Rule::NegateCondition,
        Rule::SwapIfElse,
        Rule::OffByOne,
        Rule::DropExceptionHandler,
        Rule::AlterReturn,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationConfig {
    pub probability: f64,
    pub seed: u64,
    pub enabled_rules: BTreeSet<Rule>,
    pub max_mutations_per_program: Option<usize>,
    pub allow_unknown_types: bool,
    pub require_behavioral_change: bool,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            probability: 0.3,
            seed: 0,
            enabled_rules: Rule::ALL.into_iter().collect(),
            max_mutations_per_program: None,
            allow_unknown_types: false,
            require_behavioral_change: false,
        }
    }
}

impl MutationConfig {
    pub fn only(rules: &[Rule], probability: f64, seed: u64) -> Self {
        Self {
            probability,
            seed,
            enabled_rules: rules.iter().copied().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "mutation probability must be in [0, 1], got {}",
                self.probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedMutation {
    pub rule: Rule,
    pub location: SourceLocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationResult {
    pub code: String,
    pub applied: Vec<AppliedMutation>,
    pub valid: bool,
}

pub fn mutate(code: &str, cfg: &MutationConfig) -> Result<MutationResult> {
    mutate_with(code, cfg, cfg.probability, cfg.seed)
}

fn mutate_with(code: &str, cfg: &MutationConfig, p: f64, seed: u64) -> Result<MutationResult> {
    cfg.validate()?;
    let mut suite = parse_module(code).map_err(|d| Error::UnparseableInput(d.to_string()))?;
    let mut walker = walk::Walker::new(cfg, p, rng_for(seed, &[code]), code, &suite);
    walker.block(&mut suite);
    let applied = std::mem::take(&mut walker.applied);
    let mutated = unparse_suite(&suite);
    match parse_module(&mutated) {
        Ok(_) => Ok(MutationResult {
            code: mutated,
            applied,
            valid: true,
        }),
        Err(diag) => {
            debug!(%diag, "mutant failed validation; keeping original");
            Ok(MutationResult {
                code: code.to_string(),
                applied: Vec::new(),
                valid: false,
            })
        }
    }
}

/// Every (rule, location) a mutation could target in `code`, in traversal order.
pub fn eligible_sites(code: &str, cfg: &MutationConfig) -> Result<Vec<AppliedMutation>> {
    let suite = parse_module(code).map_err(|d| Error::UnparseableInput(d.to_string()))?;
    let mut suite = suite;
    let mut walker = walk::Walker::new(cfg, 0.0, rng_for(cfg.seed, &[code]), code, &suite);
    walker.block(&mut suite);
    Ok(walker.sites)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutant {
    #[serde(flatten)]
    pub candidate: CandidateSolution,
    pub source_candidate_id: usize,
    pub applied_rules: Vec<AppliedMutation>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthCounters {
    pub attempted: usize,
    pub produced: usize,
    pub no_eligible_site: usize,
    pub invalid: usize,
    pub unchanged_behavior: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SynthOutcome {
    pub mutants: Vec<Mutant>,
    pub counters: SynthCounters,
}

/// Per-attempt probability: the configured value, then halfway to 1, then 1.
fn escalated(p: f64, attempt: usize) -> f64 {
    p + (1.0 - p) * attempt as f64 / (SYNTH_ATTEMPTS - 1) as f64
}

/// One mutant per positive. With `require_behavioral_change`, `tests` must hold the
/// instruction's surviving tests and mutants that still pass everything are retried.
/// Mutant candidate ids start at `id_offset`.
pub fn synth_negatives(
    positives: &[LabeledCandidate],
    cfg: &MutationConfig,
    tests: Option<(&Sandbox, &[TestArtifact])>,
    id_offset: usize,
) -> Result<SynthOutcome> {
    cfg.validate()?;
    let mut out = SynthOutcome::default();
    for pos in positives {
        out.counters.attempted += 1;
        let source = &pos.candidate;
        if eligible_sites(&source.code, cfg)?.is_empty() {
            out.counters.no_eligible_site += 1;
            continue;
        }
        let mut produced = None;
        for attempt in 0..SYNTH_ATTEMPTS {
            let seed = derive_seed(cfg.seed, &["synth", &attempt.to_string()]);
            let result = mutate_with(&source.code, cfg, escalated(cfg.probability, attempt), seed)?;
            if !result.valid {
                out.counters.invalid += 1;
                continue;
            }
            if result.applied.is_empty() {
                continue;
            }
            if cfg.require_behavioral_change {
                let (sandbox, tests) = tests.ok_or_else(|| {
                    Error::InvalidArgument(
                        "require_behavioral_change needs tests and a sandbox".into(),
                    )
                })?;
                if !fails_some_test(&result.code, sandbox, tests) {
                    out.counters.unchanged_behavior += 1;
                    continue;
                }
            }
            produced = Some(result);
            break;
        }
        if let Some(result) = produced {
            out.counters.produced += 1;
            out.mutants.push(Mutant {
                candidate: CandidateSolution {
                    instruction_id: source.instruction_id.clone(),
                    candidate_id: id_offset + out.mutants.len(),
                    raw_completion: result.code.clone(),
                    code: result.code,
                    sampling: source.sampling.clone(),
                },
                source_candidate_id: source.candidate_id,
                applied_rules: result.applied,
            });
        }
    }
    Ok(out)
}

pub fn fails_some_test(code: &str, sandbox: &Sandbox, tests: &[TestArtifact]) -> bool {
    let jobs = tests
        .iter()
        .map(|t| MatrixJob {
            candidate_key: "mutant".into(),
            test_key: t.key(),
            request: sandbox
                .config()
                .request(assemble_program(code, &t.test_code), false),
        })
        .collect();
    run_matrix(sandbox, jobs, 1, true)
        .values()
        .any(|r| r.status().is_some_and(|s| !s.is_pass()))
}
