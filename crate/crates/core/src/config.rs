//! Run configuration loaded from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;
use crate::corpus::LoadOptions;
use crate::error::{Error, Result};
use crate::mutator::MutationConfig;
use crate::preference::PreferenceConfig;
use crate::sampler::SamplingConfig;
use crate::sandbox::SandboxConfig;
use crate::testgen::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output and checkpoint directory.
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub generator: GeneratorConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub sandbox: SandboxConfig,
    #[serde(default)]
    pub preference: PreferenceConfig,
    /// Synthetic negatives are produced only when this table is present.
    #[serde(default)]
    pub mutation: Option<MutationConfig>,
    #[serde(default)]
    pub online: OnlineConfig,
    #[serde(default)]
    pub report: ReportConfig,
    /// Abort once more than this fraction of sandbox jobs fail for infrastructure reasons.
    #[serde(default = "default_max_sandbox_error_rate")]
    pub max_sandbox_error_rate: f64,
    /// Directory relative paths were resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub dedup: bool,
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
    /// Instructions per chunk.
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
}

impl CorpusConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            strict: self.strict,
            dedup: self.dedup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Chunks per round.
    pub update_every: usize,
    pub hook: Option<HookConfig>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            update_every: 1,
            hook: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HookConfig {
    pub command: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub histogram_bins: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { histogram_bins: 10 }
    }
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("plum-run")
}
fn default_source() -> String {
    "corpus".into()
}
fn default_chunk_size() -> usize {
    50
}
fn default_max_sandbox_error_rate() -> f64 {
    0.2
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::path::absolute(&base).map_err(|e| Error::io(&base, e))?;
        Self::from_toml(&text, &base)
    }

    /// Parse and resolve relative paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.work_dir = resolve(base_dir, &cfg.work_dir);
        cfg.corpus.path = resolve(base_dir, &cfg.corpus.path);
        for backend in [&mut cfg.generator.backend, &mut cfg.sampling.backend] {
            if let BackendConfig::FileStub { path } = backend {
                *path = resolve(base_dir, path);
            }
        }
        cfg.sandbox.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.chunk_size == 0 {
            return Err(Error::Config("corpus.chunk_size must be at least 1".into()));
        }
        if self.online.update_every == 0 {
            return Err(Error::Config(
                "online.update_every must be at least 1".into(),
            ));
        }
        if self
            .online
            .hook
            .as_ref()
            .is_some_and(|h| h.command.is_empty())
        {
            return Err(Error::Config("online.hook.command is empty".into()));
        }
        if self.report.histogram_bins == 0 {
            return Err(Error::Config(
                "report.histogram_bins must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.max_sandbox_error_rate) {
            return Err(Error::Config(
                "max_sandbox_error_rate must be in [0, 1]".into(),
            ));
        }
        self.generator.validate()?;
        self.sampling.validate()?;
        self.sandbox.validate()?;
        self.preference.validate()?;
        if let Some(m) = &self.mutation {
            m.validate()?;
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[corpus]
path = "instructions.jsonl"

[generator.backend]
kind = "file-stub"
path = "gen.jsonl"

[sampling]
policy_identifier = "policy-0"
[sampling.backend]
kind = "file-stub"
path = "policy.jsonl"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.corpus.chunk_size, 50);
        assert_eq!(cfg.online.update_every, 1);
        assert_eq!(cfg.sampling.k, 20);
        assert_eq!(cfg.generator.n_per_instruction, 3);
        assert_eq!(cfg.work_dir, Path::new("/base/plum-run"));
        assert_eq!(cfg.corpus.path, Path::new("/base/instructions.jsonl"));
        assert_eq!(
            cfg.sampling.backend,
            BackendConfig::FileStub {
                path: "/base/policy.jsonl".into()
            }
        );
        assert!(cfg.mutation.is_none());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let bad = format!("{MINIMAL}\n[report]\nbins = 3\n");
        assert!(matches!(
            RunConfig::from_toml(&bad, Path::new("/")),
            Err(Error::Config(_))
        ));
        let zero = MINIMAL.replace(
            "path = \"instructions.jsonl\"",
            "path = \"i.jsonl\"\nchunk_size = 0",
        );
        assert!(RunConfig::from_toml(&zero, Path::new("/")).is_err());
    }

    #[test]
    fn mutation_table_enables_synthesis() {
        let text = format!(
            "{MINIMAL}\n[mutation]\nprobability = 0.5\nenabled_rules = [\"ChangeOperator\"]\n"
        );
        let cfg = RunConfig::from_toml(&text, Path::new("/")).unwrap();
        let m = cfg.mutation.unwrap();
        assert_eq!(m.probability, 0.5);
        assert_eq!(m.enabled_rules.len(), 1);
    }
}
