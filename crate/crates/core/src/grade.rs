//! Grading: static check, smoke run, candidate × test matrix, labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::Result;
use crate::parallel::map_bounded;
use crate::preference::{label, LabeledCandidate};
use crate::sampler::CandidateSolution;
use crate::sandbox::{assemble_program, run_matrix, static_check, MatrixJob, Sandbox, Status};
use crate::testgen::TestArtifact;

const SMOKE_KEY: &str = "smoke";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeCounters {
    pub static_failures: usize,
    pub smoke_failures: usize,
    pub jobs_run: usize,
    pub sandbox_errors: usize,
    /// Candidates dropped because their instruction has no surviving tests.
    pub untested: usize,
}

impl GradeCounters {
    pub fn add(&mut self, o: &GradeCounters) {
        self.static_failures += o.static_failures;
        self.smoke_failures += o.smoke_failures;
        self.jobs_run += o.jobs_run;
        self.sandbox_errors += o.sandbox_errors;
        self.untested += o.untested;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graded {
    /// Labeled candidates per instruction, each list in input order.
    pub labeled: BTreeMap<String, Vec<LabeledCandidate>>,
    pub counters: GradeCounters,
}

/// Grade candidates against their instruction's surviving tests.
///
/// Candidates whose instruction has no tests are dropped and counted.
/// Candidates failing the static check or the smoke run are unrunnable, as are
/// candidates whose execution hit a sandbox failure.
pub fn grade(
    candidates: Vec<CandidateSolution>,
    tests: &BTreeMap<String, Vec<TestArtifact>>,
    sandbox: &Sandbox,
) -> Result<Graded> {
    let cfg = sandbox.config();
    let mut counters = GradeCounters::default();
    let total = candidates.len();
    let candidates: Vec<CandidateSolution> = candidates
        .into_iter()
        .filter(|c| tests.get(&c.instruction_id).is_some_and(|t| !t.is_empty()))
        .collect();
    counters.untested = total - candidates.len();

    let analyzer = cfg.analyzer.as_deref();
    let static_ok = map_bounded(&candidates, cfg.parallelism, |c| {
        static_check(&c.code, analyzer).is_ok()
    });
    counters.static_failures = static_ok.iter().filter(|ok| !**ok).count();

    let smoke_jobs: Vec<MatrixJob> = candidates
        .iter()
        .zip(&static_ok)
        .filter(|(_, ok)| **ok)
        .map(|(c, _)| MatrixJob {
            candidate_key: c.key(),
            test_key: SMOKE_KEY.into(),
            request: cfg.request(c.code.clone(), true),
        })
        .collect();
    counters.jobs_run += smoke_jobs.len();
    let smoke = run_matrix(sandbox, smoke_jobs, cfg.parallelism, false);

    let mut runnable: BTreeSet<String> = BTreeSet::new();
    for c in &candidates {
        let key = c.key();
        match smoke
            .get(&(key.clone(), SMOKE_KEY.to_string()))
            .and_then(|r| r.status())
        {
            Some(Status::Pass) => {
                runnable.insert(key);
            }
            Some(Status::SandboxError) => counters.sandbox_errors += 1,
            Some(status) => {
                debug!(candidate = %key, ?status, "smoke run failed");
                counters.smoke_failures += 1;
            }
            None => {}
        }
    }

    let mut jobs = Vec::new();
    for c in candidates.iter().filter(|c| runnable.contains(&c.key())) {
        for t in tests
            .get(&c.instruction_id)
            .map(Vec::as_slice)
            .unwrap_or_default()
        {
            jobs.push(MatrixJob {
                candidate_key: c.key(),
                test_key: t.key(),
                request: cfg.request(assemble_program(&c.code, &t.test_code), false),
            });
        }
    }
    counters.jobs_run += jobs.len();
    let outcomes = run_matrix(sandbox, jobs, cfg.parallelism, cfg.short_circuit);

    for ((ckey, _), result) in &outcomes {
        if result.status() == Some(Status::SandboxError) && runnable.remove(ckey) {
            counters.sandbox_errors += 1;
        }
    }

    let mut by_instruction: BTreeMap<String, Vec<(CandidateSolution, bool)>> = BTreeMap::new();
    for c in candidates {
        let ok = runnable.contains(&c.key());
        by_instruction
            .entry(c.instruction_id.clone())
            .or_default()
            .push((c, ok));
    }
    let mut labeled = BTreeMap::new();
    for (id, cands) in by_instruction {
        let test_keys: Vec<String> = tests
            .get(&id)
            .map(|ts| ts.iter().map(TestArtifact::key).collect())
            .unwrap_or_default();
        labeled.insert(id, label(cands, &test_keys, &outcomes)?);
    }
    Ok(Graded { labeled, counters })
}
