//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the verdict lines are always printed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{corpus_prefix, fixture, shim, Setup};
use plum_core::consistency::ConsistencyStats;
use plum_core::grade::grade;
use plum_core::jsonl::read_jsonl;
use plum_core::mutator::{fails_some_test, mutate, synth_negatives, MutationConfig};
use plum_core::pipeline::{
    round_instruction_ids, ChunkResult, Mode, Pipeline, RunOptions, RunReport,
};
use plum_core::preference::{
    build_kto, DpoPair, KtoLabel, KtoRecord, LabeledCandidate, PreferenceConfig,
};
use plum_core::python::{normalize, parse_module};
use plum_core::report::consistency_report;
use plum_core::sampler::{CandidateSolution, SamplingMeta};
use plum_core::sandbox::{assemble_program, Sandbox, SandboxConfig, Status};
use plum_core::testgen::TestArtifact;

const TIMEOUT_LIMIT_SECS: f64 = 2.0;
const TIMEOUT_SLACK: f64 = 1.5;
const ORACLE_BUDGET: Duration = Duration::from_secs(180);
const MIN_MUTATIONS: usize = 1000;
const MIN_BEHAVIORAL_FAIL: f64 = 0.90;
const TABLE_ROWS: [(&str, usize, usize, &str); 3] = [
    ("oss-instruct", 4500, 2869, "63.76"),
    ("evol-instruct", 6000, 2543, "42.38"),
    ("sharegpt", 4500, 2056, "45.69"),
];
const NO_POSITIVE_IDS: [&str; 2] = ["fx-032-nth_prime", "fx-033-roman_to_int"];
const INCONSISTENT_KEYS: [&str; 2] = ["fx-003-factorial#1", "fx-011-is_prime#0"];

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Run {
    _dir: tempfile::TempDir,
    report: RunReport,
    results: Vec<ChunkResult>,
    elapsed: Duration,
}

impl Run {
    fn work(&self) -> &Path {
        self.report.dpo_path.parent().unwrap()
    }

    fn dpo(&self) -> Vec<DpoPair> {
        read_jsonl(&self.report.dpo_path).unwrap()
    }

    fn kto(&self) -> Vec<KtoRecord> {
        read_jsonl(&self.report.kto_path).unwrap()
    }

    fn surviving_tests(&self) -> BTreeMap<String, Vec<TestArtifact>> {
        let mut out: BTreeMap<String, Vec<TestArtifact>> = BTreeMap::new();
        for r in &self.results {
            for t in r.tests.iter().filter(|t| t.consistent == Some(true)) {
                out.entry(t.instruction_id.clone())
                    .or_default()
                    .push(t.clone());
            }
        }
        out
    }

    fn positives(&self) -> Vec<LabeledCandidate> {
        self.results
            .iter()
            .flat_map(|r| r.groups.iter().flat_map(|g| g.positives().cloned()))
            .collect()
    }
}

fn full_run(setup: Setup, mode: Mode) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup.write(dir.path());
    let started = Instant::now();
    let report = Pipeline::from_file(&cfg)
        .unwrap()
        .run(mode, RunOptions::default())
        .unwrap();
    let elapsed = started.elapsed();
    let chunks = report.summary.chunks;
    let results = (0..chunks)
        .map(|i| {
            plum_core::jsonl::read_json(
                &report
                    .dpo_path
                    .parent()
                    .unwrap()
                    .join(format!("chunks/chunk-{i:04}.json")),
            )
            .unwrap()
        })
        .collect();
    Run {
        _dir: dir,
        report,
        results,
        elapsed,
    }
}

fn sandbox(limit: f64) -> Sandbox {
    Sandbox::new(SandboxConfig {
        interpreter_args: vec!["-S".into()],
        shim: shim(),
        time_limit_secs: limit,
        parallelism: 8,
        ..SandboxConfig::default()
    })
}

fn statuses(sb: &Sandbox, code: &str, tests: &[TestArtifact]) -> Vec<Status> {
    tests
        .iter()
        .map(|t| {
            sb.execute(
                &sb.config()
                    .request(assemble_program(code, &t.test_code), false),
            )
            .status
        })
        .collect()
}

fn oracle(base: &Run) -> Verdict {
    let sb = sandbox(1.0);
    let tests = base.surviving_tests();
    let pairs = base.dpo();
    ensure!(!pairs.is_empty(), "no dpo pairs emitted");
    for p in &pairs {
        let ts = &tests[&p.instruction_id];
        let chosen = statuses(&sb, &p.chosen, ts);
        ensure!(
            chosen.iter().all(|s| s.is_pass()),
            "chosen for {} re-ran as {chosen:?}",
            p.instruction_id
        );
        let rejected = statuses(&sb, &p.rejected, ts);
        ensure!(
            rejected.iter().any(|s| !s.is_pass()),
            "rejected for {} passed everything",
            p.instruction_id
        );
    }
    let emitted = std::fs::read_to_string(&base.report.dpo_path).unwrap()
        + &std::fs::read_to_string(&base.report.kto_path).unwrap();
    for r in &base.results {
        for t in &r.tests {
            let escaped = serde_json::to_string(t.reference_solution.trim()).unwrap();
            let needle = escaped.trim_matches('"');
            ensure!(
                !emitted.contains(needle),
                "reference solution of {} leaked into a dataset",
                t.key()
            );
        }
    }
    ensure!(
        base.elapsed < ORACLE_BUDGET,
        "offline run took {:?}",
        base.elapsed
    );
    Ok(format!(
        "{} pairs re-executed, no reference leaks, run took {:.1}s",
        pairs.len(),
        base.elapsed.as_secs_f64()
    ))
}

fn pattern_labels() -> Verdict {
    let sb = sandbox(2.0);
    let tests: Vec<TestArtifact> = (0..3)
        .map(|i| TestArtifact {
            instruction_id: "pattern".into(),
            gen_index: i,
            analysis: String::new(),
            reference_solution: String::new(),
            starter_code: String::new(),
            test_code: format!("assert probe({i})"),
            consistent: Some(true),
        })
        .collect();
    let candidates: Vec<CandidateSolution> = (0..8)
        .map(|mask| CandidateSolution {
            instruction_id: "pattern".into(),
            candidate_id: mask,
            code: format!("def probe(i):\n    return ({mask} >> i) & 1 == 1\n"),
            raw_completion: String::new(),
            sampling: SamplingMeta {
                temperature: 1.0,
                seed: 0,
                policy_identifier: "p".into(),
            },
        })
        .collect();
    let graded = grade(
        candidates,
        &BTreeMap::from([("pattern".to_string(), tests)]),
        &sb,
    )
    .map_err(|e| e.to_string())?;
    let labeled = &graded.labeled["pattern"];
    for l in labeled {
        let passes = l
            .per_test
            .values()
            .filter(|s| **s == Some(Status::Pass))
            .count();
        ensure!(
            passes == l.candidate.candidate_id.count_ones() as usize,
            "mask {} executed with {passes} passes",
            l.candidate.candidate_id
        );
    }
    let positive: Vec<usize> = labeled
        .iter()
        .filter(|l| l.passed_all)
        .map(|l| l.candidate.candidate_id)
        .collect();
    ensure!(positive == [7], "positives were {positive:?}");
    Ok("8 executed patterns, only 0b111 positive".into())
}

fn no_positive(base: &Run) -> Verdict {
    let ids: BTreeSet<String> = base
        .dpo()
        .into_iter()
        .map(|p| p.instruction_id)
        .chain(base.kto().into_iter().map(|r| r.instruction_id))
        .collect();
    let c = &base.report.summary.counters;
    ensure!(
        c.groups_no_positive == NO_POSITIVE_IDS.len(),
        "{} groups without positives",
        c.groups_no_positive
    );
    for id in NO_POSITIVE_IDS {
        let sampled = base
            .results
            .iter()
            .any(|r| r.groups.iter().any(|g| g.instruction_id == id));
        ensure!(sampled, "{id} was never sampled");
        ensure!(!ids.contains(id), "{id} appears in an output record");
    }
    Ok(format!(
        "{} all-failing instructions absent from {} output ids",
        NO_POSITIVE_IDS.len(),
        ids.len()
    ))
}

fn consistency(base: &Run) -> Verdict {
    let rows = consistency_report(
        TABLE_ROWS
            .iter()
            .map(|(n, t, p, _)| (*n, ConsistencyStats::from_counts(*t, *p))),
    );
    for (row, (_, _, _, expected)) in rows.iter().zip(TABLE_ROWS) {
        ensure!(
            row.rate_text() == expected,
            "{} rendered {} not {expected}",
            row.dataset,
            row.rate_text()
        );
    }
    let artifacts: Vec<&TestArtifact> = base.results.iter().flat_map(|r| &r.tests).collect();
    for key in INCONSISTENT_KEYS {
        let a = artifacts
            .iter()
            .find(|a| a.key() == key)
            .ok_or(format!("{key} missing"))?;
        ensure!(
            a.consistent == Some(false),
            "{key} judged {:?}",
            a.consistent
        );
    }
    let survivors = base.surviving_tests();
    ensure!(
        !survivors.contains_key("fx-034-triangle_area"),
        "fully inconsistent instruction kept tests"
    );
    let recomputed = ConsistencyStats::from_artifacts(
        &artifacts.iter().map(|a| (*a).clone()).collect::<Vec<_>>(),
    );
    let file: Vec<plum_core::report::ConsistencyRow> =
        plum_core::jsonl::read_json(&base.work().join("stats/consistency.json")).unwrap();
    ensure!(
        file.len() == 1 && file[0].total == recomputed.total && file[0].passed == recomputed.passed,
        "stats file {file:?} disagrees with artifacts"
    );
    Ok(format!(
        "63.76 / 42.38 / 45.69 reproduced; {} inconsistent fixture tests dropped",
        INCONSISTENT_KEYS.len() + 1
    ))
}

fn determinism(base: &Run) -> Verdict {
    let serial = full_run(
        Setup {
            parallelism: 1,
            ..Setup::default()
        },
        Mode::Offline,
    );
    let files = [
        "dpo.jsonl",
        "kto.jsonl",
        "stats/consistency.json",
        "stats/pass_ratio.csv",
        "stats/summary.json",
    ];
    for f in files {
        let a = std::fs::read(base.work().join(f)).unwrap();
        let b = std::fs::read(serial.work().join(f)).unwrap();
        ensure!(a == b, "{f} differs between parallelism 8 and 1");
    }
    Ok(format!("{} files byte-identical (p=8 vs p=1)", files.len()))
}

fn mutation(base: &Run) -> Verdict {
    let positives = base.positives();
    let tests = base.surviving_tests();
    ensure!(!positives.is_empty(), "no positives to mutate");

    let mut sources: Vec<String> = Vec::new();
    let mut applied = 0;
    let mut seed = 0u64;
    while applied < MIN_MUTATIONS {
        for p in &positives {
            let cfg = MutationConfig {
                probability: 0.4,
                seed,
                ..MutationConfig::default()
            };
            let r = mutate(&p.candidate.code, &cfg).map_err(|e| e.to_string())?;
            ensure!(r.valid, "seed {seed} produced an invalid mutant");
            ensure!(parse_module(&r.code).is_ok(), "valid mutant does not parse");
            if !r.applied.is_empty() {
                applied += 1;
                sources.push(r.code);
            }
        }
        seed += 1;
    }
    let compiled = python_compiles(&sources);
    ensure!(
        compiled == sources.len(),
        "python compiled only {compiled} of {} mutants",
        sources.len()
    );

    for p in &positives {
        let cfg = MutationConfig {
            probability: 0.0,
            ..MutationConfig::default()
        };
        let r = mutate(&p.candidate.code, &cfg).map_err(|e| e.to_string())?;
        ensure!(r.applied.is_empty(), "P=0 applied mutations");
        ensure!(
            r.code == normalize(&p.candidate.code).unwrap(),
            "P=0 changed the normalized tree"
        );
    }

    let sb = sandbox(1.0);
    let mut emitted = 0;
    let mut failing = 0;
    let cfg = MutationConfig {
        require_behavioral_change: true,
        seed: 99,
        ..MutationConfig::default()
    };
    let mut by_instruction: BTreeMap<&str, Vec<LabeledCandidate>> = BTreeMap::new();
    for p in &positives {
        by_instruction
            .entry(&p.candidate.instruction_id)
            .or_default()
            .push(p.clone());
    }
    for (id, group) in &by_instruction {
        let ts = &tests[*id];
        let out = synth_negatives(group, &cfg, Some((&sb, ts)), 100).map_err(|e| e.to_string())?;
        for m in &out.mutants {
            emitted += 1;
            if fails_some_test(&m.candidate.code, &sb, ts) {
                failing += 1;
            }
        }
    }
    ensure!(emitted > 0, "no mutants emitted");
    let rate = failing as f64 / emitted as f64;
    ensure!(
        rate >= MIN_BEHAVIORAL_FAIL,
        "only {:.1}% of mutants fail a test",
        100.0 * rate
    );
    Ok(format!(
        "{applied} mutations parse-valid (python agrees), P=0 identity on {} programs, {failing}/{emitted} mutants fail a test",
        positives.len()
    ))
}

fn python_compiles(sources: &[String]) -> usize {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mutants.json");
    std::fs::write(&path, serde_json::to_string(sources).unwrap()).unwrap();
    let script = "import json, sys\nsrcs = json.load(open(sys.argv[1]))\nok = 0\nfor s in srcs:\n    try:\n        compile(s, 'm', 'exec')\n        ok += 1\n    except SyntaxError:\n        pass\nprint(ok)\n";
    let out = std::process::Command::new("python3")
        .arg("-c")
        .arg(script)
        .arg(&path)
        .output()
        .unwrap();
    String::from_utf8_lossy(&out.stdout)
        .trim()
        .parse()
        .unwrap_or(0)
}

fn ablation(base: &Run) -> Verdict {
    let flagged = full_run(
        Setup {
            include_unrunnable: true,
            ..Setup::default()
        },
        Mode::Offline,
    );
    let a = &base.report.summary.counters;
    let b = &flagged.report.summary.counters;
    ensure!(
        a.unrunnable_excluded > 0,
        "fixture produced no unrunnable candidates"
    );
    ensure!(
        b.unrunnable_excluded == 0,
        "flagged run still excluded {}",
        b.unrunnable_excluded
    );
    ensure!(b.positive == a.positive, "positives changed");
    ensure!(
        b.negative - a.negative == a.unrunnable_excluded,
        "negatives moved by {} but {} were unrunnable",
        b.negative - a.negative,
        a.unrunnable_excluded
    );
    let und = |r: &Run| {
        r.kto()
            .iter()
            .filter(|k| k.label == KtoLabel::Undesirable)
            .count()
    };
    ensure!(
        und(&flagged) - und(base) == a.unrunnable_excluded,
        "kto undesirable count off"
    );
    Ok(format!(
        "negatives {} -> {} (+{} unrunnable)",
        a.negative, b.negative, a.unrunnable_excluded
    ))
}

fn kto_balance(base: &Run) -> Verdict {
    let groups: Vec<_> = base
        .results
        .iter()
        .flat_map(ChunkResult::dataset_groups)
        .collect();
    let mut checked = 0;
    for seed in 0..20 {
        let cfg = PreferenceConfig {
            seed,
            kto_balance_ratio: Some(1.0),
            ..PreferenceConfig::default()
        };
        for slice in [&groups[..], &groups[..groups.len() / 2], &groups[..3]] {
            let recs = build_kto(slice, &cfg);
            let d = recs
                .iter()
                .filter(|r| r.label == KtoLabel::Desirable)
                .count();
            ensure!(
                d * 2 == recs.len(),
                "seed {seed}: {d} desirable of {}",
                recs.len()
            );
            checked += 1;
        }
    }
    Ok(format!("{checked} balanced builds with equal label counts"))
}

fn timeout() -> Verdict {
    let sb = sandbox(TIMEOUT_LIMIT_SECS);
    let stub: Vec<serde_json::Value> = read_jsonl(&fixture("corpus/policy_stub.jsonl")).unwrap();
    let looping = stub[0]["completions"][5].as_str().unwrap().to_string();
    let program = assemble_program(&looping, "assert add(1, 2) == 3");
    let outcome = sb.execute(&sb.config().request(program, false));
    ensure!(
        outcome.status == Status::Timeout,
        "labeled {:?}",
        outcome.status
    );
    let bound = TIMEOUT_SLACK * TIMEOUT_LIMIT_SECS;
    ensure!(
        outcome.duration_secs <= bound,
        "took {:.2}s > {bound}s",
        outcome.duration_secs
    );
    Ok(format!(
        "Timeout after {:.2}s (limit {TIMEOUT_LIMIT_SECS}s)",
        outcome.duration_secs
    ))
}

fn online() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_prefix(dir.path(), 20);
    let count = dir.path().join("hook-count");
    let script = format!(
        "n=$(cat {c} 2>/dev/null || echo 0); n=$((n+1)); echo $n > {c}; \
         sed -i \"s/policy_identifier = \\\"policy-$((n-1))\\\"/policy_identifier = \\\"policy-$n\\\"/\" \"$PLUM_CONFIG\"",
        c = count.display()
    );
    let setup = Setup {
        corpus,
        chunk_size: 5,
        update_every: 2,
        hook: Some(script),
        ..Setup::default()
    };
    let cfg = setup.write(dir.path());
    let report = Pipeline::from_file(&cfg)
        .unwrap()
        .run(Mode::Online, RunOptions::default())
        .map_err(|e| e.to_string())?;
    let calls: usize = std::fs::read_to_string(&count)
        .unwrap_or_default()
        .trim()
        .parse()
        .unwrap_or(0);
    ensure!(calls == 2, "hook ran {calls} times");
    ensure!(
        report.round_paths.len() == 2,
        "{} rounds",
        report.round_paths.len()
    );
    let ids = round_instruction_ids(&report.round_paths).map_err(|e| e.to_string())?;
    ensure!(ids[0].is_disjoint(&ids[1]), "rounds share instructions");
    ensure!(!ids[0].is_empty() && !ids[1].is_empty(), "a round is empty");
    let work: PathBuf = dir.path().join("run");
    for (round, expected) in [(0, "policy-0"), (1, "policy-1")] {
        let cands: Vec<LabeledCandidate> =
            read_jsonl(&work.join(format!("rounds/round-{round:04}/candidates.jsonl"))).unwrap();
        ensure!(!cands.is_empty(), "round {round} has no candidates");
        ensure!(
            cands
                .iter()
                .all(|c| c.candidate.sampling.policy_identifier == expected),
            "round {round} records not all {expected}"
        );
    }
    Ok(format!(
        "hook x{calls}, rounds disjoint ({} + {} ids), policy-0 -> policy-1",
        ids[0].len(),
        ids[1].len()
    ))
}

fn shim_protocol() -> Verdict {
    let sb = sandbox(2.0);
    let cases = [
        ("x = 1\nassert x == 1\n", false, Status::Pass, 0),
        ("assert 1 == 2\n", false, Status::TestFailure, 10),
        (
            "raise ValueError('boom')\n",
            false,
            Status::RuntimeError,
            11,
        ),
        (
            "import module_that_does_not_exist\n",
            true,
            Status::LoadFailure,
            12,
        ),
    ];
    for (src, smoke, expected, code) in cases {
        let o = sb.execute(&sb.config().request(src.to_string(), smoke));
        ensure!(o.status == expected, "{src:?} -> {:?}", o.status);
        ensure!(
            o.exit_detail.contains(&format!("exit {code}")),
            "{src:?} exit detail {:?}",
            o.exit_detail
        );
        let marker = o.stderr_tail.trim_end().lines().last().unwrap_or_default();
        ensure!(
            marker.starts_with("PLUM:"),
            "{src:?} last stderr line {marker:?}"
        );
    }
    Ok("pass/assert/raise/import map to 0/10/11/12 with markers".into())
}

fn main() {
    let started = Instant::now();
    let mut verdicts: Vec<(&str, &str, Verdict)> = Vec::new();
    let mut record = |tag: &'static str, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let line = match &v {
            Ok(d) => format!("PASS [{tag}] {name}: {d}"),
            Err(d) => format!("FAIL [{tag}] {name}: {d}"),
        };
        let _ = writeln!(std::io::stdout(), "{line}");
        verdicts.push((tag, name, v));
    };

    let base = catch_unwind(|| full_run(Setup::default(), Mode::Offline));
    match &base {
        Ok(base) => {
            record("PRIMARY", "oracle round trip", &mut || oracle(base));
            record(
                "PRIMARY",
                "chosen/rejected rule over 2^3 patterns",
                &mut pattern_labels,
            );
            record("PRIMARY", "no-positive filtering", &mut || {
                no_positive(base)
            });
            record("PRIMARY", "self-consistency statistics", &mut || {
                consistency(base)
            });
            record("PRIMARY", "determinism across parallelism", &mut || {
                determinism(base)
            });
            record("PRIMARY", "mutation validity", &mut || mutation(base));
            record("PRIMARY", "unrunnable-negative ablation", &mut || {
                ablation(base)
            });
            record("PRIMARY", "KTO balancing", &mut || kto_balance(base));
        }
        Err(_) => record("PRIMARY", "fixture offline run", &mut || {
            Err("pipeline run failed".into())
        }),
    }
    record("PRIMARY", "timeout enforcement", &mut timeout);
    record("PRIMARY", "online loop", &mut online);
    record("SECONDARY", "shim protocol", &mut shim_protocol);

    let failed = verdicts.iter().filter(|(_, _, v)| v.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        verdicts.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
