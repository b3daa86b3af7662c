//! Self-consistency filtering: keep a generated test only if its own
//! reference solution passes it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sandbox::{assemble_program, run_matrix, MatrixJob, Sandbox, Status};
use crate::testgen::TestArtifact;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStats {
    pub total: usize,
    pub passed: usize,
    /// Percentage; 0 when `rate_defined` is false.
    pub rate: f64,
    pub rate_defined: bool,
}

impl ConsistencyStats {
    pub fn from_counts(total: usize, passed: usize) -> Self {
        assert!(passed <= total, "passed ({passed}) exceeds total ({total})");
        let rate_defined = total > 0;
        let rate = if rate_defined {
            100.0 * passed as f64 / total as f64
        } else {
            0.0
        };
        Self {
            total,
            passed,
            rate,
            rate_defined,
        }
    }

    /// Recompute from artifacts that carry a verdict.
    pub fn from_artifacts(artifacts: &[TestArtifact]) -> Self {
        let judged = artifacts.iter().filter(|a| a.consistent.is_some()).count();
        let passed = artifacts
            .iter()
            .filter(|a| a.consistent == Some(true))
            .count();
        Self::from_counts(judged, passed)
    }

    pub fn merge(self, other: Self) -> Self {
        Self::from_counts(self.total + other.total, self.passed + other.passed)
    }
}

impl Default for ConsistencyStats {
    fn default() -> Self {
        Self::from_counts(0, 0)
    }
}

/// True iff the reference solution passes the artifact's own tests.
/// Timeouts and every other non-Pass status count as inconsistent.
pub fn check_artifact(artifact: &TestArtifact, sandbox: &Sandbox) -> Result<bool> {
    if artifact.test_code.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "artifact {} has empty test code",
            artifact.key()
        )));
    }
    let program = assemble_program(&artifact.reference_solution, &artifact.test_code);
    let outcome = sandbox.execute(&sandbox.config().request(program, false));
    match outcome.status {
        Status::SandboxError => Err(Error::Sandbox(outcome.exit_detail)),
        status => Ok(status.is_pass()),
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<TestArtifact>,
    pub stats: ConsistencyStats,
    /// Keys of artifacts whose check hit an infrastructure failure; left unjudged.
    pub sandbox_errors: Vec<String>,
}

/// Check every artifact, set its `consistent` field, and return the survivors.
pub fn filter_artifacts(artifacts: &mut [TestArtifact], sandbox: &Sandbox) -> FilterOutcome {
    let jobs: Vec<MatrixJob> = artifacts
        .iter()
        .map(|a| MatrixJob {
            candidate_key: a.key(),
            test_key: "self".into(),
            request: sandbox
                .config()
                .request(assemble_program(&a.reference_solution, &a.test_code), false),
        })
        .collect();
    let results = run_matrix(sandbox, jobs, sandbox.config().parallelism, false);

    let mut out = FilterOutcome::default();
    for artifact in artifacts.iter_mut() {
        let status = results
            .get(&(artifact.key(), "self".to_string()))
            .and_then(|r| r.status());
        artifact.consistent = match status {
            Some(Status::SandboxError) | None => {
                out.sandbox_errors.push(artifact.key());
                None
            }
            Some(s) => Some(s.is_pass() && !artifact.test_code.trim().is_empty()),
        };
        if artifact.consistent == Some(true) {
            out.kept.push(artifact.clone());
        }
    }
    out.stats = ConsistencyStats::from_artifacts(artifacts);
    out
}
