//! Run statistics: consistency tables, pass-ratio histograms, dataset summaries.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consistency::ConsistencyStats;
use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_atomic, write_json};
use crate::preference::{pass_ratio, DpoPair, KtoLabel, KtoRecord, LabeledGroup};

pub const CONSISTENCY_FILE: &str = "consistency.json";
pub const PASS_RATIO_FILE: &str = "pass_ratio.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub dataset: String,
    pub total: usize,
    pub passed: usize,
    /// Percentage rounded to two decimals; `None` when nothing was judged.
    pub rate: Option<f64>,
}

impl ConsistencyRow {
    pub fn rate_text(&self) -> String {
        match self.rate {
            Some(r) => format!("{r:.2}"),
            None => "n/a".to_string(),
        }
    }
}

pub fn consistency_report<'a>(
    stats: impl IntoIterator<Item = (&'a str, ConsistencyStats)>,
) -> Vec<ConsistencyRow> {
    stats
        .into_iter()
        .map(|(dataset, s)| ConsistencyRow {
            dataset: dataset.to_string(),
            total: s.total,
            passed: s.passed,
            rate: s.rate_defined.then(|| (s.rate * 100.0).round() / 100.0),
        })
        .collect()
}

/// Aligned plain-text table of consistency rows.
pub fn render_consistency_table(rows: &[ConsistencyRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.dataset.chars().count())
        .max()
        .unwrap_or(0)
        .max("dataset".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>7}",
        "dataset", "total", "passed", "rate%"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>7}",
            r.dataset,
            r.total,
            r.passed,
            r.rate_text()
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRatioHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl PassRatioHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, count) in self.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                count
            );
        }
        out
    }
}

/// Uniform bins over [0, 1]; the first bin is closed, the rest are right-closed.
pub fn histogram(ratios: &[f64], bins: usize) -> Result<PassRatioHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one bin".into(),
        ));
    }
    let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for &r in ratios {
        let idx = ((r.clamp(0.0, 1.0) * bins as f64 - 1e-9).ceil() as isize - 1)
            .clamp(0, bins as isize - 1);
        counts[idx as usize] += 1;
    }
    Ok(PassRatioHistogram { bin_edges, counts })
}

pub fn pass_ratio_histogram(groups: &[LabeledGroup], bins: usize) -> Result<PassRatioHistogram> {
    let ratios: Vec<f64> = groups.iter().filter_map(pass_ratio).collect();
    histogram(&ratios, bins)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub pairs: usize,
    pub desirable: usize,
    pub undesirable: usize,
    pub distinct_instructions: usize,
}

pub fn summarize(dpo: &[DpoPair], kto: &[KtoRecord]) -> DatasetSummary {
    let ids: BTreeSet<&str> = dpo
        .iter()
        .map(|p| p.instruction_id.as_str())
        .chain(kto.iter().map(|r| r.instruction_id.as_str()))
        .collect();
    let desirable = kto
        .iter()
        .filter(|r| r.label == KtoLabel::Desirable)
        .count();
    DatasetSummary {
        pairs: dpo.len(),
        desirable,
        undesirable: kto.len() - desirable,
        distinct_instructions: ids.len(),
    }
}

pub fn dataset_summary(dpo_path: &Path, kto_path: &Path) -> Result<DatasetSummary> {
    let dpo: Vec<DpoPair> = read_jsonl(dpo_path)?;
    let kto: Vec<KtoRecord> = read_jsonl(kto_path)?;
    Ok(summarize(&dpo, &kto))
}

/// Write `consistency.json`, `pass_ratio.csv`, and `summary.json` under `dir`.
pub fn write_stats<S: Serialize>(
    dir: &Path,
    consistency: &[ConsistencyRow],
    histogram: &PassRatioHistogram,
    summary: &S,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(CONSISTENCY_FILE), &consistency)?;
    write_atomic(&dir.join(PASS_RATIO_FILE), histogram.to_csv().as_bytes())?;
    write_json(&dir.join(SUMMARY_FILE), summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_rates() {
        let rows = consistency_report([
            ("oss", ConsistencyStats::from_counts(4500, 2869)),
            ("evol", ConsistencyStats::from_counts(6000, 2543)),
            ("sharegpt", ConsistencyStats::from_counts(4500, 2056)),
            ("empty", ConsistencyStats::from_counts(0, 0)),
        ]);
        let texts: Vec<String> = rows.iter().map(|r| r.rate_text()).collect();
        assert_eq!(texts, ["63.76", "42.38", "45.69", "n/a"]);
        assert!(render_consistency_table(&rows).contains("63.76"));
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(histogram(&[0.0, 0.5, 1.0], 2).unwrap().counts, [2, 1]);
        assert_eq!(histogram(&[0.0; 4], 5).unwrap().counts, [4, 0, 0, 0, 0]);
        assert_eq!(histogram(&[], 3).unwrap().counts, [0, 0, 0]);
        assert_eq!(histogram(&[0.3, 0.31], 10).unwrap().counts[2..4], [1, 1]);
        assert!(histogram(&[0.5], 0).is_err());
    }

    #[test]
    fn histogram_csv_shape() {
        let csv = histogram(&[0.25], 2).unwrap().to_csv();
        assert_eq!(csv, "bin_low,bin_high,count\n0,0.5,1\n0.5,1,0\n");
    }

    #[test]
    fn summary_counts() {
        let pair = |id: &str| DpoPair {
            instruction_id: id.into(),
            prompt: "p".into(),
            chosen: "a".into(),
            rejected: "b".into(),
        };
        let rec = |id: &str, label| KtoRecord {
            instruction_id: id.into(),
            prompt: "p".into(),
            completion: "c".into(),
            label,
        };
        let dpo: Vec<_> = (0..7).map(|i| pair(&format!("q{}", i % 3))).collect();
        let kto: Vec<_> = (0..20)
            .map(|i| {
                rec(
                    "q9",
                    if i < 10 {
                        KtoLabel::Desirable
                    } else {
                        KtoLabel::Undesirable
                    },
                )
            })
            .collect();
        let s = summarize(&dpo, &kto);
        assert_eq!(
            (s.pairs, s.desirable, s.undesirable, s.distinct_instructions),
            (7, 10, 10, 4)
        );
        assert_eq!(summarize(&[], &[]), DatasetSummary::default());
    }

    proptest! {
        #[test]
        fn histogram_conserves_mass(ratios in proptest::collection::vec(0.0f64..=1.0, 0..50), bins in 1usize..12) {
            let h = histogram(&ratios, bins).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), ratios.len());
            let mut rev = ratios.clone();
            rev.reverse();
            prop_assert_eq!(histogram(&rev, bins).unwrap(), h);
        }
    }
}
