//! Candidate labeling and DPO/KTO dataset construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::CandidateSolution;
use crate::sandbox::{JobResult, MatrixKey, Status};
use crate::seed::rng_for;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_pairs_per_instruction: Option<usize>,
    /// Desirable-to-undesirable ratio for KTO downsampling; `None` keeps everything.
    #[serde(default)]
    pub kto_balance_ratio: Option<f64>,
    #[serde(default)]
    pub include_unrunnable_negatives: bool,
}

impl PreferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.kto_balance_ratio {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!(
                    "kto_balance_ratio must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCandidate {
    pub candidate: CandidateSolution,
    /// `None` marks a test skipped after an earlier failure.
    pub per_test: BTreeMap<String, Option<Status>>,
    pub passed_all: bool,
    pub runnable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Positive,
    Negative,
    Excluded,
}

impl LabeledCandidate {
    pub fn class(&self, include_unrunnable: bool) -> Class {
        if self.passed_all {
            Class::Positive
        } else if self.runnable || include_unrunnable {
            Class::Negative
        } else {
            Class::Excluded
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledGroup {
    pub instruction_id: String,
    pub prompt: String,
    pub candidates: Vec<LabeledCandidate>,
}

impl LabeledGroup {
    pub fn positives(&self) -> impl Iterator<Item = &LabeledCandidate> {
        self.candidates.iter().filter(|c| c.passed_all)
    }

    pub fn negatives(&self, include_unrunnable: bool) -> impl Iterator<Item = &LabeledCandidate> {
        self.candidates
            .iter()
            .filter(move |c| c.class(include_unrunnable) == Class::Negative)
    }

    pub fn counts(&self, include_unrunnable: bool) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for c in &self.candidates {
            match c.class(include_unrunnable) {
                Class::Positive => counts.positive += 1,
                Class::Negative => counts.negative += 1,
                Class::Excluded => counts.excluded += 1,
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoPair {
    pub instruction_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KtoLabel {
    Desirable,
    Undesirable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KtoRecord {
    pub instruction_id: String,
    pub prompt: String,
    pub completion: String,
    pub label: KtoLabel,
}

/// Aggregate matrix outcomes per candidate. Each entry pairs a candidate with its
/// runnable verdict; unrunnable candidates need no outcomes.
pub fn label(
    candidates: Vec<(CandidateSolution, bool)>,
    test_keys: &[String],
    outcomes: &BTreeMap<MatrixKey, JobResult>,
) -> Result<Vec<LabeledCandidate>> {
    candidates
        .into_iter()
        .map(|(candidate, runnable)| {
            let mut per_test = BTreeMap::new();
            if runnable {
                let ckey = candidate.key();
                for t in test_keys {
                    let result = outcomes.get(&(ckey.clone(), t.clone())).ok_or_else(|| {
                        Error::IncompleteMatrix {
                            candidate: ckey.clone(),
                            test: t.clone(),
                        }
                    })?;
                    per_test.insert(t.clone(), result.status());
                }
            }
            let passed_all = runnable && per_test.values().all(|s| *s == Some(Status::Pass));
            Ok(LabeledCandidate {
                candidate,
                per_test,
                passed_all,
                runnable,
            })
        })
        .collect()
}

/// Split groups into those with at least one positive and the ids of the rest.
pub fn filter_no_positive(groups: Vec<LabeledGroup>) -> (Vec<LabeledGroup>, Vec<String>) {
    let mut dropped = Vec::new();
    let kept = groups
        .into_iter()
        .filter_map(|g| {
            if g.positives().next().is_some() {
                Some(g)
            } else {
                dropped.push(g.instruction_id);
                None
            }
        })
        .collect();
    (kept, dropped)
}

pub fn build_dpo(groups: &[LabeledGroup], cfg: &PreferenceConfig) -> Vec<DpoPair> {
    let mut out = Vec::new();
    for g in groups {
        let mut rng = rng_for(cfg.seed, &["dpo", &g.instruction_id]);
        let mut pos: Vec<&LabeledCandidate> = g.positives().collect();
        let mut neg: Vec<&LabeledCandidate> =
            g.negatives(cfg.include_unrunnable_negatives).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let limit = cfg.max_pairs_per_instruction.unwrap_or(usize::MAX);
        out.extend(
            pos.into_iter()
                .zip(neg)
                .filter(|(p, n)| p.candidate.code != n.candidate.code)
                .take(limit)
                .map(|(p, n)| DpoPair {
                    instruction_id: g.instruction_id.clone(),
                    prompt: g.prompt.clone(),
                    chosen: p.candidate.code.clone(),
                    rejected: n.candidate.code.clone(),
                }),
        );
    }
    out
}

pub fn build_kto(groups: &[LabeledGroup], cfg: &PreferenceConfig) -> Vec<KtoRecord> {
    let mut records: Vec<KtoRecord> = Vec::new();
    for g in groups {
        for c in &g.candidates {
            let label = match c.class(cfg.include_unrunnable_negatives) {
                Class::Positive => KtoLabel::Desirable,
                Class::Negative => KtoLabel::Undesirable,
                Class::Excluded => continue,
            };
            records.push(KtoRecord {
                instruction_id: g.instruction_id.clone(),
                prompt: g.prompt.clone(),
                completion: c.candidate.code.clone(),
                label,
            });
        }
    }
    match cfg.kto_balance_ratio {
        Some(ratio) => balance(records, ratio, cfg.seed),
        None => records,
    }
}

fn balance(records: Vec<KtoRecord>, ratio: f64, seed: u64) -> Vec<KtoRecord> {
    let d = records
        .iter()
        .filter(|r| r.label == KtoLabel::Desirable)
        .count();
    let u = records.len() - d;
    if d == 0 || u == 0 {
        return records;
    }
    let (shrink, keep) = if d as f64 > ratio * u as f64 {
        (
            KtoLabel::Desirable,
            ((ratio * u as f64).round() as usize).max(1),
        )
    } else {
        (
            KtoLabel::Undesirable,
            ((d as f64 / ratio).round() as usize).max(1),
        )
    };
    let pool = if shrink == KtoLabel::Desirable { d } else { u };
    let mut rng = rng_for(seed, &["kto-balance"]);
    let mut chosen = vec![false; pool];
    for i in rand::seq::index::sample(&mut rng, pool, keep.min(pool)) {
        chosen[i] = true;
    }
    let mut i = 0;
    records
        .into_iter()
        .filter(|r| {
            if r.label != shrink {
                return true;
            }
            i += 1;
            chosen[i - 1]
        })
        .collect()
}

/// Fraction of sampled candidates that are positive; `None` for an empty group.
pub fn pass_ratio(group: &LabeledGroup) -> Option<f64> {
    if group.candidates.is_empty() {
        return None;
    }
    Some(group.positives().count() as f64 / group.candidates.len() as f64)
}
