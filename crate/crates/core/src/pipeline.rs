//! Chunked orchestration: tests, filtering, sampling, grading, datasets, trainer hook.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::backend::{CompletionBackend, StubField};
use crate::config::{HookConfig, RunConfig};
use crate::consistency::{filter_artifacts, ConsistencyStats};
use crate::corpus::{chunk, load_instructions, subsample, Chunk, Instruction};
use crate::error::{Error, Result};
use crate::grade::{grade, GradeCounters};
use crate::jsonl::{read_json, write_json, write_jsonl};
use crate::mutator::{synth_negatives, SynthCounters};
use crate::preference::{build_dpo, build_kto, filter_no_positive, LabeledCandidate, LabeledGroup};
use crate::report::{
    consistency_report, pass_ratio_histogram, summarize, write_stats, DatasetSummary,
};
use crate::sampler::{build_policy_prompt, sample_all, starter_for};
use crate::sandbox::Sandbox;
use crate::testgen::{generate_all, TestArtifact};

pub const STATE_FILE: &str = "state.json";
pub const DPO_FILE: &str = "dpo.jsonl";
pub const KTO_FILE: &str = "kto.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const STATS_DIR: &str = "stats";
const CHUNKS_DIR: &str = "chunks";
const ROUNDS_DIR: &str = "rounds";
const LOGS_DIR: &str = "logs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub instructions: usize,
    pub instruction_failures: usize,
    pub tests_generated: usize,
    pub test_parse_failures: usize,
    pub tests_consistent: usize,
    pub no_surviving_tests: usize,
    pub instructions_sampled: usize,
    pub sampled: usize,
    pub sampling_shortfall: usize,
    pub positive: usize,
    pub negative: usize,
    pub unrunnable_excluded: usize,
    pub dropped_with_instruction: usize,
    pub groups_labeled: usize,
    pub groups_no_positive: usize,
    pub grading: GradeCounters,
    pub mutation: SynthCounters,
    pub mutants_added: usize,
    pub mutants_discarded: usize,
}

impl Counters {
    pub fn add(&mut self, o: &Counters) {
        self.instructions += o.instructions;
        self.instruction_failures += o.instruction_failures;
        self.tests_generated += o.tests_generated;
        self.test_parse_failures += o.test_parse_failures;
        self.tests_consistent += o.tests_consistent;
        self.no_surviving_tests += o.no_surviving_tests;
        self.instructions_sampled += o.instructions_sampled;
        self.sampled += o.sampled;
        self.sampling_shortfall += o.sampling_shortfall;
        self.positive += o.positive;
        self.negative += o.negative;
        self.unrunnable_excluded += o.unrunnable_excluded;
        self.dropped_with_instruction += o.dropped_with_instruction;
        self.groups_labeled += o.groups_labeled;
        self.groups_no_positive += o.groups_no_positive;
        self.grading.add(&o.grading);
        self.mutation.attempted += o.mutation.attempted;
        self.mutation.produced += o.mutation.produced;
        self.mutation.no_eligible_site += o.mutation.no_eligible_site;
        self.mutation.invalid += o.mutation.invalid;
        self.mutation.unchanged_behavior += o.mutation.unchanged_behavior;
        self.mutants_added += o.mutants_added;
        self.mutants_discarded += o.mutants_discarded;
    }

    /// Every sampled candidate lands in exactly one class counter.
    pub fn conserved(&self) -> bool {
        self.sampled
            == self.positive
                + self.negative
                + self.unrunnable_excluded
                + self.dropped_with_instruction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionFailure {
    pub instruction_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkResult {
    pub index: usize,
    pub round: usize,
    pub policy_identifier: String,
    /// Keyed by corpus source tag.
    pub consistency: BTreeMap<String, ConsistencyStats>,
    pub tests: Vec<TestArtifact>,
    /// Every labeled group, including those without a positive.
    pub groups: Vec<LabeledGroup>,
    pub mutants: Vec<LabeledCandidate>,
    pub failures: Vec<InstructionFailure>,
    pub counters: Counters,
}

impl ChunkResult {
    /// Groups with a positive, with this chunk's synthetic negatives appended.
    pub fn dataset_groups(&self) -> Vec<LabeledGroup> {
        let (mut kept, _) = filter_no_positive(self.groups.clone());
        for g in &mut kept {
            g.candidates.extend(
                self.mutants
                    .iter()
                    .filter(|m| m.candidate.instruction_id == g.instruction_id)
                    .cloned(),
            );
        }
        kept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub mode: Mode,
    pub round: usize,
    pub chunk_cursor: usize,
    pub total_chunks: usize,
    pub policy_identifier: String,
    pub emitted_paths: Vec<PathBuf>,
    pub counters: Counters,
    /// The current round's chunks are done but its hook has not succeeded yet.
    pub hook_pending: bool,
    pub final_hook_done: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop with [`Error::Aborted`] after this many chunks; the checkpoint stays resumable.
    pub halt_after_chunks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: DatasetSummary,
    pub counters: Counters,
    pub rounds: usize,
    pub chunks: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub state: RunState,
    pub dpo_path: PathBuf,
    pub kto_path: PathBuf,
    pub stats_dir: PathBuf,
    /// (dpo, kto) per completed online round.
    pub round_paths: Vec<(PathBuf, PathBuf)>,
    pub summary: RunSummary,
}

pub struct Pipeline {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    generator: Arc<dyn CompletionBackend>,
    policy: Arc<dyn CompletionBackend>,
    sandbox: Sandbox,
}

impl Pipeline {
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg = RunConfig::load(path)?;
        let mut p = Self::new(cfg)?;
        p.config_path = Some(path.to_path_buf());
        Ok(p)
    }

    pub fn new(cfg: RunConfig) -> Result<Self> {
        let generator = cfg.generator.backend.build(StubField::Responses)?;
        let policy = cfg.sampling.backend.build(StubField::Completions)?;
        Ok(Self::with_backends(cfg, generator, policy))
    }

    pub fn with_backends(
        cfg: RunConfig,
        generator: Arc<dyn CompletionBackend>,
        policy: Arc<dyn CompletionBackend>,
    ) -> Self {
        let sandbox = Sandbox::new(cfg.sandbox.clone());
        Self {
            cfg,
            config_path: None,
            generator,
            policy,
            sandbox,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &dyn CompletionBackend {
        &*self.generator
    }

    pub fn policy(&self) -> &dyn CompletionBackend {
        &*self.policy
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    fn work(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.work_dir.join(rel)
    }

    fn chunk_path(&self, index: usize) -> PathBuf {
        self.work(CHUNKS_DIR).join(format!("chunk-{index:04}.json"))
    }

    pub fn load_chunks(&self) -> Result<Vec<Chunk>> {
        let c = &self.cfg.corpus;
        let loaded = load_instructions(&c.path, &c.source, c.load_options())?;
        for w in &loaded.warnings {
            warn!("{w}");
        }
        let instructions = match c.subsample {
            Some(n) => subsample(&loaded.instructions, n, c.subsample_seed),
            None => loaded.instructions,
        };
        chunk(&instructions, c.chunk_size)
    }

    /// Run every stage for one chunk. Per-instruction failures are recorded, not raised.
    pub fn process_chunk(&self, chunk: &Chunk, round: usize) -> Result<ChunkResult> {
        let insts = &chunk.instructions;
        let mut counters = Counters {
            instructions: insts.len(),
            ..Counters::default()
        };
        let mut failures = Vec::new();

        let mut artifacts = Vec::new();
        for (inst, generation) in
            insts
                .iter()
                .zip(generate_all(insts, &self.cfg.generator, &*self.generator))
        {
            match generation {
                Ok(g) => {
                    counters.test_parse_failures += g.parse_failures;
                    artifacts.extend(g.artifacts);
                }
                Err(e) => record_failure(&mut failures, &inst.id, "testgen", &e),
            }
        }
        counters.tests_generated = artifacts.len();
        let filtered = filter_artifacts(&mut artifacts, &self.sandbox);
        counters.tests_consistent = filtered.kept.len();
        counters.grading.jobs_run += artifacts.len();
        counters.grading.sandbox_errors += filtered.sandbox_errors.len();

        let source_of: BTreeMap<&str, &str> = insts
            .iter()
            .map(|i| (i.id.as_str(), i.source.as_str()))
            .collect();
        let mut by_source: BTreeMap<String, Vec<TestArtifact>> = BTreeMap::new();
        for a in &artifacts {
            let src = source_of
                .get(a.instruction_id.as_str())
                .copied()
                .unwrap_or_default();
            by_source
                .entry(src.to_string())
                .or_default()
                .push(a.clone());
        }
        let consistency = by_source
            .iter()
            .map(|(s, arts)| (s.clone(), ConsistencyStats::from_artifacts(arts)))
            .collect();

        let mut surviving: BTreeMap<String, Vec<TestArtifact>> = BTreeMap::new();
        for a in filtered.kept {
            surviving
                .entry(a.instruction_id.clone())
                .or_default()
                .push(a);
        }

        let mut work: Vec<(Instruction, String)> = Vec::new();
        for inst in insts {
            if failures.iter().any(|f| f.instruction_id == inst.id) {
                continue;
            }
            if !surviving.contains_key(&inst.id) {
                counters.no_surviving_tests += 1;
                continue;
            }
            let own: Vec<TestArtifact> = artifacts
                .iter()
                .filter(|a| a.instruction_id == inst.id)
                .cloned()
                .collect();
            let prompt = build_policy_prompt(inst, starter_for(&own), &self.cfg.sampling);
            work.push((inst.clone(), prompt));
        }

        let mut candidates = Vec::new();
        let mut prompts = BTreeMap::new();
        for ((inst, prompt), sampled) in
            work.iter()
                .zip(sample_all(&work, &self.cfg.sampling, &*self.policy))
        {
            match sampled {
                Ok(s) => {
                    counters.instructions_sampled += 1;
                    counters.sampling_shortfall += s.shortfall;
                    counters.sampled += s.candidates.len();
                    candidates.extend(s.candidates);
                    prompts.insert(inst.id.clone(), prompt.clone());
                }
                Err(e) => record_failure(&mut failures, &inst.id, "sample", &e),
            }
        }
        counters.instruction_failures = failures.len();

        let graded = grade(candidates, &surviving, &self.sandbox)?;
        counters.grading.add(&graded.counters);

        let include_unrunnable = self.cfg.preference.include_unrunnable_negatives;
        let mut labeled = graded.labeled;
        let mut groups = Vec::new();
        for (inst, _) in &work {
            let Some(prompt) = prompts.remove(&inst.id) else {
                continue;
            };
            let group = LabeledGroup {
                instruction_id: inst.id.clone(),
                prompt,
                candidates: labeled.remove(&inst.id).unwrap_or_default(),
            };
            counters.groups_labeled += 1;
            if group.positives().next().is_some() {
                let c = group.counts(include_unrunnable);
                counters.positive += c.positive;
                counters.negative += c.negative;
                counters.unrunnable_excluded += c.excluded;
            } else {
                counters.groups_no_positive += 1;
                counters.dropped_with_instruction += group.candidates.len();
            }
            groups.push(group);
        }

        let mutants = match &self.cfg.mutation {
            Some(mcfg) => self.synthesize(&groups, &surviving, mcfg, &mut counters)?,
            None => Vec::new(),
        };

        Ok(ChunkResult {
            index: chunk.index,
            round,
            policy_identifier: self.cfg.sampling.policy_identifier.clone(),
            consistency,
            tests: artifacts,
            groups,
            mutants,
            failures,
            counters,
        })
    }

    fn synthesize(
        &self,
        groups: &[LabeledGroup],
        tests: &BTreeMap<String, Vec<TestArtifact>>,
        mcfg: &crate::mutator::MutationConfig,
        counters: &mut Counters,
    ) -> Result<Vec<LabeledCandidate>> {
        let mut produced = Vec::new();
        for g in groups {
            let positives: Vec<LabeledCandidate> = g.positives().cloned().collect();
            if positives.is_empty() {
                continue;
            }
            let own = tests
                .get(&g.instruction_id)
                .map(Vec::as_slice)
                .unwrap_or_default();
            let offset = g
                .candidates
                .iter()
                .map(|c| c.candidate.candidate_id + 1)
                .max()
                .unwrap_or(0);
            let out = synth_negatives(&positives, mcfg, Some((&self.sandbox, own)), offset)?;
            let m = &mut counters.mutation;
            m.attempted += out.counters.attempted;
            m.produced += out.counters.produced;
            m.no_eligible_site += out.counters.no_eligible_site;
            m.invalid += out.counters.invalid;
            m.unchanged_behavior += out.counters.unchanged_behavior;
            produced.extend(out.mutants.into_iter().map(|m| m.candidate));
        }
        let graded = grade(produced, tests, &self.sandbox)?;
        counters.grading.add(&graded.counters);
        let mut kept = Vec::new();
        for (_, labeled) in graded.labeled {
            for l in labeled {
                if l.runnable && !l.passed_all {
                    counters.mutants_added += 1;
                    kept.push(l);
                } else {
                    counters.mutants_discarded += 1;
                }
            }
        }
        Ok(kept)
    }

    fn reset_outputs(&self) -> Result<()> {
        for dir in [CHUNKS_DIR, ROUNDS_DIR, STATS_DIR, LOGS_DIR] {
            let p = self.work(dir);
            if p.exists() {
                std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        for file in [STATE_FILE, DPO_FILE, KTO_FILE] {
            let p = self.work(file);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }

    fn save_state(&self, state: &RunState) -> Result<()> {
        write_json(&self.work(STATE_FILE), state)
    }

    pub fn run(&mut self, mode: Mode, opts: RunOptions) -> Result<RunReport> {
        if mode == Mode::Online && self.cfg.online.hook.is_none() {
            return Err(Error::Config(
                "online mode needs an [online.hook] command".into(),
            ));
        }
        let chunks = self.load_chunks()?;
        std::fs::create_dir_all(self.work(CHUNKS_DIR))
            .map_err(|e| Error::io(self.work(CHUNKS_DIR), e))?;

        let state_path = self.work(STATE_FILE);
        let mut state = if opts.resume && state_path.exists() {
            let s: RunState = read_json(&state_path)?;
            if s.mode != mode || s.total_chunks != chunks.len() {
                return Err(Error::Config(format!(
                    "checkpoint in {} is for a {:?} run over {} chunks",
                    self.cfg.work_dir.display(),
                    s.mode,
                    s.total_chunks
                )));
            }
            info!(cursor = s.chunk_cursor, round = s.round, "resuming");
            s
        } else {
            self.reset_outputs()?;
            std::fs::create_dir_all(self.work(CHUNKS_DIR))
                .map_err(|e| Error::io(self.work(CHUNKS_DIR), e))?;
            RunState {
                mode,
                round: 0,
                chunk_cursor: 0,
                total_chunks: chunks.len(),
                policy_identifier: self.cfg.sampling.policy_identifier.clone(),
                emitted_paths: Vec::new(),
                counters: Counters::default(),
                hook_pending: false,
                final_hook_done: false,
            }
        };

        let mut processed_now = 0;
        loop {
            if state.hook_pending {
                self.finish_round(&mut state)?;
                continue;
            }
            let Some(c) = chunks.get(state.chunk_cursor) else {
                break;
            };
            info!(
                chunk = c.index,
                round = state.round,
                instructions = c.instructions.len(),
                "processing chunk"
            );
            let result = self.process_chunk(c, state.round)?;
            let mut total = state.counters;
            total.add(&result.counters);
            let g = &total.grading;
            if g.jobs_run > 0
                && g.sandbox_errors as f64 / g.jobs_run as f64 > self.cfg.max_sandbox_error_rate
            {
                self.save_state(&state)?;
                return Err(Error::Aborted(format!(
                    "{} of {} sandbox jobs failed for infrastructure reasons",
                    g.sandbox_errors, g.jobs_run
                )));
            }
            write_json(&self.chunk_path(c.index), &result)?;
            state.counters = total;
            state.chunk_cursor += 1;
            let round_end = (c.index + 1) % self.cfg.online.update_every == 0
                || state.chunk_cursor == chunks.len();
            state.hook_pending = mode == Mode::Online && round_end;
            self.save_state(&state)?;
            processed_now += 1;
            if opts.halt_after_chunks == Some(processed_now) {
                return Err(Error::Aborted(format!(
                    "halted after {processed_now} chunks"
                )));
            }
        }

        let results = self.load_results(state.chunk_cursor)?;
        let dpo_path = self.work(DPO_FILE);
        let kto_path = self.work(KTO_FILE);
        let dataset = self.emit(&results, &self.cfg.work_dir)?;
        let stats_dir = self.work(STATS_DIR);
        let summary = RunSummary {
            dataset,
            counters: state.counters,
            rounds: if mode == Mode::Online { state.round } else { 1 },
            chunks: results.len(),
        };
        self.write_run_stats(&results, &summary)?;
        for p in [&dpo_path, &kto_path] {
            if !state.emitted_paths.contains(p) {
                state.emitted_paths.push(p.clone());
            }
        }
        if mode == Mode::Offline && !state.final_hook_done {
            if let Some(hook) = self.cfg.online.hook.clone() {
                self.run_hook(&hook, 0, &dpo_path, &kto_path, &state.policy_identifier)?;
            }
            state.final_hook_done = true;
        }
        self.save_state(&state)?;
        if !state.counters.conserved() {
            warn!(counters = ?state.counters, "candidate counters do not add up");
        }

        let round_paths = (0..state.round).map(|r| self.round_paths(r)).collect();
        Ok(RunReport {
            state,
            dpo_path,
            kto_path,
            stats_dir,
            round_paths,
            summary,
        })
    }

    fn round_dir(&self, round: usize) -> PathBuf {
        self.work(ROUNDS_DIR).join(format!("round-{round:04}"))
    }

    fn round_paths(&self, round: usize) -> (PathBuf, PathBuf) {
        let dir = self.round_dir(round);
        (dir.join(DPO_FILE), dir.join(KTO_FILE))
    }

    fn finish_round(&mut self, state: &mut RunState) -> Result<()> {
        let round = state.round;
        let results: Vec<ChunkResult> = self
            .load_results(state.chunk_cursor)?
            .into_iter()
            .filter(|r| r.round == round)
            .collect();
        let dir = self.round_dir(round);
        self.emit(&results, &dir)?;
        let candidates: Vec<&LabeledCandidate> = results
            .iter()
            .flat_map(|r| {
                r.groups
                    .iter()
                    .flat_map(|g| &g.candidates)
                    .chain(&r.mutants)
            })
            .collect();
        write_jsonl(&dir.join(CANDIDATES_FILE), &candidates)?;
        let (dpo, kto) = self.round_paths(round);
        for p in [&dpo, &kto] {
            if !state.emitted_paths.contains(p) {
                state.emitted_paths.push(p.clone());
            }
        }
        self.save_state(state)?;

        let hook = self.cfg.online.hook.clone().expect("checked at start");
        self.run_hook(&hook, round, &dpo, &kto, &state.policy_identifier)?;
        self.reload_policy()?;
        let next = self.cfg.sampling.policy_identifier.clone();
        if next == state.policy_identifier {
            warn!(round, policy = %next, "trainer hook left the policy identifier unchanged");
        }
        state.policy_identifier = next;
        state.round += 1;
        state.hook_pending = false;
        self.save_state(state)
    }

    fn reload_policy(&mut self) -> Result<()> {
        let Some(path) = &self.config_path else {
            return Ok(());
        };
        let fresh = RunConfig::load(path)?;
        self.policy = fresh.sampling.backend.build(StubField::Completions)?;
        self.cfg.sampling = fresh.sampling;
        Ok(())
    }

    fn run_hook(
        &self,
        hook: &HookConfig,
        round: usize,
        dpo: &Path,
        kto: &Path,
        policy: &str,
    ) -> Result<()> {
        let config = self
            .config_path
            .as_deref()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut cmd = Command::new(&hook.command[0]);
        cmd.args(&hook.command[1..])
            .arg("--round")
            .arg(round.to_string())
            .arg("--dpo")
            .arg(dpo)
            .arg("--kto")
            .arg(kto)
            .arg("--policy-id")
            .arg(policy)
            .env("PLUM_ROUND", round.to_string())
            .env("PLUM_DPO_PATH", dpo)
            .env("PLUM_KTO_PATH", kto)
            .env("PLUM_POLICY_ID", policy)
            .env("PLUM_CONFIG", &config)
            .env("PLUM_WORK_DIR", &self.cfg.work_dir)
            .envs(&hook.env)
            .current_dir(if self.cfg.base_dir.as_os_str().is_empty() {
                Path::new(".")
            } else {
                &self.cfg.base_dir
            });
        info!(round, command = ?hook.command, "invoking trainer hook");
        let output = cmd.output().map_err(|e| Error::HookFailed {
            round,
            message: format!("cannot start {:?}: {e}", hook.command[0]),
        })?;
        let logs = self.work(LOGS_DIR);
        std::fs::create_dir_all(&logs).map_err(|e| Error::io(&logs, e))?;
        let mut log = output.stdout.clone();
        log.extend_from_slice(&output.stderr);
        let log_path = logs.join(format!("hook-round-{round:04}.log"));
        std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        if !output.status.success() {
            return Err(Error::HookFailed {
                round,
                message: format!("{} (log: {})", output.status, log_path.display()),
            });
        }
        Ok(())
    }

    fn load_results(&self, upto: usize) -> Result<Vec<ChunkResult>> {
        (0..upto).map(|i| read_json(&self.chunk_path(i))).collect()
    }

    fn emit(&self, results: &[ChunkResult], dir: &Path) -> Result<DatasetSummary> {
        let groups: Vec<LabeledGroup> = results
            .iter()
            .flat_map(ChunkResult::dataset_groups)
            .collect();
        let dpo = build_dpo(&groups, &self.cfg.preference);
        let kto = build_kto(&groups, &self.cfg.preference);
        write_jsonl(&dir.join(DPO_FILE), &dpo)?;
        write_jsonl(&dir.join(KTO_FILE), &kto)?;
        Ok(summarize(&dpo, &kto))
    }

    fn write_run_stats(&self, results: &[ChunkResult], summary: &RunSummary) -> Result<()> {
        let mut per_source: BTreeMap<String, ConsistencyStats> = BTreeMap::new();
        for r in results {
            for (src, s) in &r.consistency {
                let merged = per_source.remove(src).unwrap_or_default().merge(*s);
                per_source.insert(src.clone(), merged);
            }
        }
        let rows = consistency_report(per_source.iter().map(|(k, v)| (k.as_str(), *v)));
        let groups: Vec<LabeledGroup> = results
            .iter()
            .flat_map(|r| r.groups.iter().cloned())
            .collect();
        let hist = pass_ratio_histogram(&groups, self.cfg.report.histogram_bins)?;
        write_stats(&self.work(STATS_DIR), &rows, &hist, summary)
    }
}

fn record_failure(failures: &mut Vec<InstructionFailure>, id: &str, stage: &str, e: &Error) {
    warn!(instruction = id, stage, error = %e, "instruction failed");
    failures.push(InstructionFailure {
        instruction_id: id.to_string(),
        stage: stage.to_string(),
        message: e.to_string(),
    });
}

/// Instruction ids that contributed records to each round's datasets.
pub fn round_instruction_ids(paths: &[(PathBuf, PathBuf)]) -> Result<Vec<BTreeSet<String>>> {
    paths
        .iter()
        .map(|(dpo, kto)| {
            let d: Vec<crate::preference::DpoPair> = crate::jsonl::read_jsonl(dpo)?;
            let k: Vec<crate::preference::KtoRecord> = crate::jsonl::read_jsonl(kto)?;
            Ok(d.into_iter()
                .map(|p| p.instruction_id)
                .chain(k.into_iter().map(|r| r.instruction_id))
                .collect())
        })
        .collect()
}
