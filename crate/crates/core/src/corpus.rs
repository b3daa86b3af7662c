//! Instruction corpora: loading, subsampling, deduplication, chunking.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::seed::{content_hash8, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub text: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Instruction {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source: source.into(),
            metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub index: usize,
    pub instructions: Vec<Instruction>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Abort on the first malformed line instead of skipping it.
    pub strict: bool,
    /// Drop later instructions whose text exactly matches an earlier one.
    pub dedup: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub instructions: Vec<Instruction>,
    pub warnings: Vec<String>,
}

/// Load a line-delimited JSON instruction dump.
///
/// Each line is an object with a required `instruction` string and optional
/// `id` and `source` strings; any other keys land in `metadata`. Lines without
/// an `id` get `"{source}:{line}:{hash8(text)}"`.
pub fn load_instructions(path: &Path, source_tag: &str, opts: LoadOptions) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = LoadedCorpus::default();
    let mut seen_ids = HashSet::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_record(&line, line_no, source_tag).and_then(|inst| {
            if seen_ids.contains(&inst.id) {
                Err(format!("duplicate instruction id `{}`", inst.id))
            } else {
                Ok(inst)
            }
        });
        match parsed {
            Ok(inst) => {
                seen_ids.insert(inst.id.clone());
                out.instructions.push(inst);
            }
            Err(message) if opts.strict => {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: line_no,
                    message,
                });
            }
            Err(message) => {
                let warning = format!("{}:{line_no}: skipped: {message}", path.display());
                warn!("{warning}");
                out.warnings.push(warning);
            }
        }
    }

    if opts.dedup {
        out.instructions = dedup_exact(out.instructions);
    }
    Ok(out)
}

fn parse_record(line: &str, line_no: usize, source_tag: &str) -> Result<Instruction, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let serde_json::Value::Object(mut map) = value else {
        return Err("record is not a JSON object".into());
    };
    let text = match map.remove("instruction") {
        Some(serde_json::Value::String(s)) if !s.trim().is_empty() => s,
        Some(serde_json::Value::String(_)) => return Err("empty `instruction`".into()),
        Some(_) => return Err("`instruction` is not a string".into()),
        None => return Err("missing `instruction`".into()),
    };
    let source = match map.remove("source") {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s,
        Some(serde_json::Value::String(_)) | None => source_tag.to_string(),
        Some(_) => return Err("`source` is not a string".into()),
    };
    let id = match map.remove("id") {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(serde_json::Value::Null) | None => synthetic_id(&source, line_no, &text),
        Some(_) => return Err("`id` must be a non-empty string or number".into()),
    };
    Ok(Instruction {
        id,
        text,
        source,
        metadata: map.into_iter().collect(),
    })
}

pub fn synthetic_id(source: &str, line_no: usize, text: &str) -> String {
    format!("{source}:{line_no}:{}", content_hash8(text))
}

/// Uniform sample of `min(n, len)` instructions without replacement, keeping input order.
pub fn subsample(instructions: &[Instruction], n: usize, seed: u64) -> Vec<Instruction> {
    if n >= instructions.len() {
        return instructions.to_vec();
    }
    let mut rng = rng_for(seed, &["subsample"]);
    let mut picked = index::sample(&mut rng, instructions.len(), n).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| instructions[i].clone())
        .collect()
}

pub fn dedup_exact(instructions: Vec<Instruction>) -> Vec<Instruction> {
    let mut seen = HashSet::new();
    instructions
        .into_iter()
        .filter(|inst| seen.insert(inst.text.clone()))
        .collect()
}

pub fn chunk(instructions: &[Instruction], size: usize) -> Result<Vec<Chunk>> {
    if size == 0 {
        return Err(Error::InvalidArgument(
            "chunk size must be at least 1".into(),
        ));
    }
    Ok(instructions
        .chunks(size)
        .enumerate()
        .map(|(index, part)| Chunk {
            index,
            instructions: part.to_vec(),
        })
        .collect())
}
