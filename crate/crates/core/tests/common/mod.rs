#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(FIXTURES).join(rel)
}

pub fn shim() -> PathBuf {
    fixture("plum_shim.py")
}

/// Knobs the tests vary; everything else is fixed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub corpus: PathBuf,
    pub policy_stub: PathBuf,
    pub parallelism: usize,
    pub chunk_size: usize,
    pub update_every: usize,
    pub include_unrunnable: bool,
    pub kto_balance: Option<f64>,
    pub hook: Option<String>,
    pub extra: String,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            corpus: fixture("corpus/instructions.jsonl"),
            policy_stub: fixture("corpus/policy_stub.jsonl"),
            parallelism: 8,
            chunk_size: 50,
            update_every: 1,
            include_unrunnable: false,
            kto_balance: None,
            hook: None,
            extra: String::new(),
        }
    }
}

impl Setup {
    pub fn toml(&self, work_dir: &Path) -> String {
        let mut out = format!(
            r#"work_dir = {work:?}

[corpus]
path = {corpus:?}
source = "fixture"
chunk_size = {chunk}

[generator]
n_per_instruction = 3
max_in_flight = {par}
[generator.backend]
kind = "file-stub"
path = {gen:?}

[sampling]
k = 6
seed = 7
policy_identifier = "policy-0"
max_in_flight = {par}
[sampling.backend]
kind = "file-stub"
path = {policy:?}

[sandbox]
interpreter_args = ["-S"]
shim = {shim:?}
time_limit_secs = 1.0
parallelism = {par}
short_circuit = true

[preference]
seed = 3
include_unrunnable_negatives = {unrunnable}
"#,
            work = work_dir.display().to_string(),
            corpus = self.corpus.display().to_string(),
            chunk = self.chunk_size,
            par = self.parallelism,
            gen = fixture("corpus/generator_stub.jsonl").display().to_string(),
            policy = self.policy_stub.display().to_string(),
            shim = shim().display().to_string(),
            unrunnable = self.include_unrunnable,
        );
        if let Some(r) = self.kto_balance {
            out.push_str(&format!("kto_balance_ratio = {r:?}\n"));
        }
        out.push_str(&format!(
            "\n[online]\nupdate_every = {}\n",
            self.update_every
        ));
        if let Some(script) = &self.hook {
            out.push_str(&format!(
                "[online.hook]\ncommand = [\"sh\", \"-c\", {script:?}]\n"
            ));
        }
        out.push_str(&self.extra);
        out
    }

    /// Write `plum.toml` into `dir` and return its path; outputs go to `dir/run`.
    pub fn write(&self, dir: &Path) -> PathBuf {
        let path = dir.join("plum.toml");
        std::fs::write(&path, self.toml(&dir.join("run"))).unwrap();
        path
    }
}

/// Copy the first `n` corpus lines into `dir`.
pub fn corpus_prefix(dir: &Path, n: usize) -> PathBuf {
    let text = std::fs::read_to_string(fixture("corpus/instructions.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().take(n).collect();
    let path = dir.join(format!("corpus-{n}.jsonl"));
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}
