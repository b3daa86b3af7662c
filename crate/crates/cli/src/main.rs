use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use plum_core::consistency::{filter_artifacts, ConsistencyStats};
use plum_core::corpus::Instruction;
use plum_core::grade::grade;
use plum_core::jsonl::{read_json, read_jsonl, write_jsonl};
use plum_core::mutator::{mutate, MutationConfig, Rule};
use plum_core::pipeline::{Mode, Pipeline, RunOptions, RunSummary, STATS_DIR};
use plum_core::preference::{build_dpo, build_kto, filter_no_positive, LabeledGroup};
use plum_core::report::{
    consistency_report, render_consistency_table, ConsistencyRow, CONSISTENCY_FILE, SUMMARY_FILE,
};
use plum_core::sampler::{build_policy_prompt, sample_all, starter_for, CandidateSolution};
use plum_core::testgen::{generate_all, TestArtifact};

#[derive(Parser)]
#[command(
    name = "plum",
    version,
    about = "Build preference datasets for code models from generated unit tests"
)]
struct Cli {
    /// Log filter, e.g. `info` or `plum_core=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the whole pipeline over the configured corpus.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Offline)]
        mode: ModeArg,
        /// Continue from the checkpoint in the work directory.
        #[arg(long)]
        resume: bool,
    },
    /// Generate test artifacts for every corpus instruction.
    GenTests {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run each artifact's reference solution against its own tests.
    Filter {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tests: PathBuf,
        /// Receives every artifact with its `consistent` verdict set.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample policy candidates for instructions that kept at least one test.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tests: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute candidates against surviving tests and write labeled groups.
    Grade {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tests: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn labeled groups into a DPO or KTO dataset.
    Build {
        #[arg(value_enum)]
        format: Format,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mutate a Python file and print the result.
    Mutate {
        input: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        probability: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to these rules (comma separated, e.g. ChangeOperator,OffByOne).
        #[arg(long, value_delimiter = ',')]
        rules: Vec<String>,
        #[arg(long)]
        allow_unknown_types: bool,
    },
    /// Print the statistics of a finished run.
    Stats {
        /// Work directory of the run.
        work_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Offline,
    Online,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dpo,
    Kto,
}

fn main() {
    let cli = Cli::parse();
    let filter = match &cli.log {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run {
            config,
            mode,
            resume,
        } => run(&config, mode, resume),
        Cmd::GenTests { config, out } => gen_tests(&config, &out),
        Cmd::Filter { config, tests, out } => filter(&config, &tests, &out),
        Cmd::Sample { config, tests, out } => sample(&config, &tests, &out),
        Cmd::Grade {
            config,
            tests,
            candidates,
            out,
        } => grade_cmd(&config, &tests, &candidates, &out),
        Cmd::Build {
            format,
            config,
            groups,
            out,
        } => build(format, &config, &groups, &out),
        Cmd::Mutate {
            input,
            probability,
            seed,
            rules,
            allow_unknown_types,
        } => mutate_cmd(&input, probability, seed, &rules, allow_unknown_types),
        Cmd::Stats { work_dir } => stats(&work_dir),
    }
}

fn pipeline(config: &Path) -> Result<Pipeline> {
    Pipeline::from_file(config).with_context(|| format!("loading {}", config.display()))
}

fn instructions(p: &Pipeline) -> Result<Vec<Instruction>> {
    Ok(p.load_chunks()?
        .into_iter()
        .flat_map(|c| c.instructions)
        .collect())
}

fn run(config: &Path, mode: ModeArg, resume: bool) -> Result<()> {
    let mode = match mode {
        ModeArg::Offline => Mode::Offline,
        ModeArg::Online => Mode::Online,
    };
    let report = pipeline(config)?.run(
        mode,
        RunOptions {
            resume,
            ..RunOptions::default()
        },
    )?;
    print_summary(&report.summary);
    println!("dpo: {}", report.dpo_path.display());
    println!("kto: {}", report.kto_path.display());
    println!("stats: {}", report.stats_dir.display());
    Ok(())
}

fn gen_tests(config: &Path, out: &Path) -> Result<()> {
    let p = pipeline(config)?;
    let insts = instructions(&p)?;
    let mut artifacts = Vec::new();
    let mut parse_failures = 0;
    for (inst, g) in insts
        .iter()
        .zip(generate_all(&insts, &p.config().generator, p.generator()))
    {
        match g {
            Ok(g) => {
                parse_failures += g.parse_failures;
                artifacts.extend(g.artifacts);
            }
            Err(e) => warn!(instruction = %inst.id, error = %e, "test generation failed"),
        }
    }
    write_jsonl(out, &artifacts)?;
    println!(
        "{} artifacts for {} instructions ({parse_failures} unparseable replies)",
        artifacts.len(),
        insts.len()
    );
    Ok(())
}

fn filter(config: &Path, tests: &Path, out: &Path) -> Result<()> {
    let p = pipeline(config)?;
    let source_of: BTreeMap<String, String> = instructions(&p)?
        .into_iter()
        .map(|i| (i.id, i.source))
        .collect();
    let mut artifacts: Vec<TestArtifact> = read_jsonl(tests)?;
    let outcome = filter_artifacts(&mut artifacts, p.sandbox());
    if !outcome.sandbox_errors.is_empty() {
        warn!(
            count = outcome.sandbox_errors.len(),
            "artifacts left unjudged after sandbox errors"
        );
    }
    write_jsonl(out, &artifacts)?;
    let mut by_source: BTreeMap<String, Vec<TestArtifact>> = BTreeMap::new();
    for a in artifacts {
        let src = source_of
            .get(&a.instruction_id)
            .cloned()
            .unwrap_or_default();
        by_source.entry(src).or_default().push(a);
    }
    let rows = consistency_report(
        by_source
            .iter()
            .map(|(s, a)| (s.as_str(), ConsistencyStats::from_artifacts(a))),
    );
    print!("{}", render_consistency_table(&rows));
    Ok(())
}

type TestsById = BTreeMap<String, Vec<TestArtifact>>;

fn surviving(tests: &Path) -> Result<(Vec<TestArtifact>, TestsById)> {
    let all: Vec<TestArtifact> = read_jsonl(tests)?;
    if all.iter().any(|a| a.consistent.is_none()) {
        bail!(
            "{} has unfiltered artifacts; run `plum filter` first",
            tests.display()
        );
    }
    let mut kept = TestsById::new();
    for a in all.iter().filter(|a| a.consistent == Some(true)) {
        kept.entry(a.instruction_id.clone())
            .or_default()
            .push(a.clone());
    }
    Ok((all, kept))
}

/// Policy prompts for instructions that still have tests, in corpus order.
fn prompts(
    p: &Pipeline,
    all: &[TestArtifact],
    kept: &TestsById,
) -> Result<Vec<(Instruction, String)>> {
    Ok(instructions(p)?
        .into_iter()
        .filter(|i| kept.contains_key(&i.id))
        .map(|i| {
            let own: Vec<TestArtifact> = all
                .iter()
                .filter(|a| a.instruction_id == i.id)
                .cloned()
                .collect();
            let prompt = build_policy_prompt(&i, starter_for(&own), &p.config().sampling);
            (i, prompt)
        })
        .collect())
}

fn sample(config: &Path, tests: &Path, out: &Path) -> Result<()> {
    let p = pipeline(config)?;
    let (all, kept) = surviving(tests)?;
    let work = prompts(&p, &all, &kept)?;
    let mut candidates: Vec<CandidateSolution> = Vec::new();
    for ((inst, _), s) in work
        .iter()
        .zip(sample_all(&work, &p.config().sampling, p.policy()))
    {
        match s {
            Ok(s) => candidates.extend(s.candidates),
            Err(e) => warn!(instruction = %inst.id, error = %e, "sampling failed"),
        }
    }
    write_jsonl(out, &candidates)?;
    println!(
        "{} candidates for {} instructions",
        candidates.len(),
        work.len()
    );
    Ok(())
}

fn grade_cmd(config: &Path, tests: &Path, candidates: &Path, out: &Path) -> Result<()> {
    let p = pipeline(config)?;
    let (all, kept) = surviving(tests)?;
    let cands: Vec<CandidateSolution> = read_jsonl(candidates)?;
    let graded = grade(cands, &kept, p.sandbox())?;
    let mut labeled = graded.labeled;
    let groups: Vec<LabeledGroup> = prompts(&p, &all, &kept)?
        .into_iter()
        .filter_map(|(inst, prompt)| {
            labeled.remove(&inst.id).map(|candidates| LabeledGroup {
                instruction_id: inst.id,
                prompt,
                candidates,
            })
        })
        .collect();
    write_jsonl(out, &groups)?;
    let c = &graded.counters;
    println!(
        "{} groups; {} jobs, {} static failures, {} smoke failures, {} sandbox errors",
        groups.len(),
        c.jobs_run,
        c.static_failures,
        c.smoke_failures,
        c.sandbox_errors
    );
    Ok(())
}

fn build(format: Format, config: &Path, groups: &Path, out: &Path) -> Result<()> {
    let p = pipeline(config)?;
    let (kept, dropped) = filter_no_positive(read_jsonl(groups)?);
    if !dropped.is_empty() {
        info!(
            count = dropped.len(),
            "dropped instructions without a passing candidate"
        );
    }
    let cfg = &p.config().preference;
    let n = match format {
        Format::Dpo => {
            let pairs = build_dpo(&kept, cfg);
            write_jsonl(out, &pairs)?;
            pairs.len()
        }
        Format::Kto => {
            let records = build_kto(&kept, cfg);
            write_jsonl(out, &records)?;
            records.len()
        }
    };
    println!("{n} records from {} instructions", kept.len());
    Ok(())
}

fn mutate_cmd(
    input: &Path,
    probability: f64,
    seed: u64,
    rules: &[String],
    allow_unknown_types: bool,
) -> Result<()> {
    let code =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut cfg = MutationConfig {
        probability,
        seed,
        allow_unknown_types,
        ..MutationConfig::default()
    };
    if !rules.is_empty() {
        cfg.enabled_rules = rules
            .iter()
            .map(|r| {
                Rule::ALL
                    .into_iter()
                    .find(|x| format!("{x:?}").eq_ignore_ascii_case(r))
                    .with_context(|| format!("unknown rule {r:?}"))
            })
            .collect::<Result<_>>()?;
    }
    let result = mutate(&code, &cfg)?;
    if !result.valid {
        bail!("{} does not parse as Python", input.display());
    }
    print!("{}", result.code);
    for m in &result.applied {
        eprintln!(
            "{:?} at line {}, column {}",
            m.rule, m.location.line, m.location.column
        );
    }
    Ok(())
}

fn stats(work_dir: &Path) -> Result<()> {
    let stats = work_dir.join(STATS_DIR);
    let rows: Vec<ConsistencyRow> = read_json(&stats.join(CONSISTENCY_FILE))
        .with_context(|| format!("{} holds no finished run", work_dir.display()))?;
    print!("{}", render_consistency_table(&rows));
    let summary: RunSummary = read_json(&stats.join(SUMMARY_FILE))?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &RunSummary) {
    let c = &s.counters;
    println!(
        "chunks {}  rounds {}  instructions {}  sampled {}",
        s.chunks, s.rounds, c.instructions, c.sampled
    );
    println!(
        "positive {}  negative {}  unrunnable excluded {}  no-positive groups {}  mutants {}",
        c.positive, c.negative, c.unrunnable_excluded, c.groups_no_positive, c.mutants_added
    );
    println!(
        "dpo pairs {}  kto desirable {}  kto undesirable {}  instructions {}",
        s.dataset.pairs,
        s.dataset.desirable,
        s.dataset.undesirable,
        s.dataset.distinct_instructions
    );
}
