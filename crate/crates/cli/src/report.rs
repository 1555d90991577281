//! JSON schemas written and read by the CLI. Feature indices are 1-based here.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sic_core::convex_sic::{ConvexConfig, ConvexSolution, ConvexWitness, FeatureMapConfig};
use sic_core::datasets::{GeneratorSpec, Metrics};
use sic_core::hrt::{HrtConfig, HrtResult};
use sic_core::knockoffs::{FilterOptions, KnockoffConfig, KnockoffResult};
use sic_core::neural_sic::{ranking, NeuralConfig, NeuralSolution};

pub fn feature_name(j: usize) -> String {
    format!("x{}", j + 1)
}

pub fn one_based(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|j| j + 1).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Ground truth written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub n: usize,
    pub d_x: usize,
    pub truth: Vec<usize>,
    pub truth_names: Vec<String>,
    pub spec: GeneratorSpec,
}

impl TruthFile {
    pub fn zero_based(&self) -> Vec<usize> {
        self.truth.iter().map(|j| j - 1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: usize,
    pub name: String,
    pub eta: f64,
}

pub fn ranked(eta: &[f64]) -> Vec<RankedFeature> {
    ranking(eta)
        .into_iter()
        .map(|j| RankedFeature {
            feature: j + 1,
            name: feature_name(j),
            eta: eta[j],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Convex,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convex: Option<ConvexConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_map: Option<FeatureMapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neural: Option<NeuralConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitModel {
    Convex {
        witness: ConvexWitness,
        solution: ConvexSolution,
    },
    Neural {
        solution: NeuralSolution,
    },
}

/// Output of `sic fit`; identical top-level schema for both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub command: String,
    pub data: String,
    pub config: FitConfig,
    pub eta: Vec<f64>,
    pub ranking: Vec<RankedFeature>,
    pub model: FitModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrtReport {
    pub shortlist: Vec<usize>,
    pub pvalues: Vec<f64>,
    pub rounds: usize,
    pub observed_score: f64,
    pub null_scores: Vec<Vec<f64>>,
}

impl From<&HrtResult> for HrtReport {
    fn from(r: &HrtResult) -> Self {
        HrtReport {
            shortlist: one_based(&r.shortlist),
            pvalues: r.pvalues.clone(),
            rounds: r.rounds,
            observed_score: r.observed_score,
            null_scores: r.null_scores.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffReport {
    pub w: Vec<f64>,
    /// `null` encodes an infinite threshold (nothing selected).
    pub threshold: Option<f64>,
    pub options: FilterOptions,
    pub eta_full: Vec<f64>,
}

impl From<&KnockoffResult> for KnockoffReport {
    fn from(r: &KnockoffResult) -> Self {
        KnockoffReport {
            w: r.w.clone(),
            threshold: r.threshold,
            options: r.options,
            eta_full: r.eta_full.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionConfig {
    Hrt {
        fit: String,
        hrt: HrtConfig,
    },
    Knockoff {
        knockoff: KnockoffConfig,
    },
}

/// Output of `sic hrt` and `sic knockoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub command: String,
    pub data: String,
    pub config: SelectionConfig,
    pub target_fdr: f64,
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hrt: Option<HrtReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knockoff: Option<KnockoffReport>,
}

/// Any results file: either an explicit selection or an η ranking.
#[derive(Debug, Clone, Deserialize)]
pub struct AnyResult {
    #[serde(default)]
    pub selected: Option<Vec<usize>>,
    #[serde(default)]
    pub ranking: Option<Vec<RankedFeature>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = (s.len() - 1) as f64 * p;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        Stats {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: s[0],
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub repetitions: usize,
    pub tpr: Stats,
    pub fdr: Stats,
    pub discoveries: Stats,
}

impl Summary {
    pub fn of(records: &[RepRecord]) -> Summary {
        let col = |f: fn(&RepRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        Summary {
            repetitions: records.len(),
            tpr: Stats::of(&col(|r| r.metrics.tpr)),
            fdr: Stats::of(&col(|r| r.metrics.fdr)),
            discoveries: Stats::of(&col(|r| r.selected.len() as f64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    pub selected: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    pub metrics: Metrics,
}

/// Output of `sic eval` and `sic bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub command: String,
    pub config: serde_json::Value,
    pub records: Vec<RepRecord>,
    pub summary: Summary,
}
