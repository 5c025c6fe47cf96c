//! Pipeline configuration: one JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conversation::DatasetProfile;
use crate::error::{Error, Result};
use crate::explore::client::RetryPolicy;
use crate::explore::judge::Criterion;
use crate::explore::{CandidateCounts, ExpansionOrder};
use crate::index::RetrieverProfile;
use crate::preference::{RfConfig, DEFAULT_MAX_OPTIMAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub conversations: PathBuf,
    pub passages: PathBuf,
    pub work_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            conversations: "data/toy/conversations.jsonl".into(),
            passages: "data/toy/passages.jsonl".into(),
            work_dir: "work".into(),
        }
    }
}

/// Which turns receive which exploration prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationProfile {
    /// Every method on every evaluable turn.
    #[default]
    Full,
    /// Planning only on turns where rewriting yielded fewer than three
    /// optimal queries.
    TopiocqaBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub optimal: u32,
    pub preferred: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            optimal: 30,
            preferred: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counts {
    pub candidates: CandidateCounts,
    pub top_k: usize,
    /// `null` keeps every valid pair.
    pub max_pairs: Option<usize>,
    pub max_optimal: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Self {
            candidates: CandidateCounts::default(),
            top_k: 100,
            max_pairs: Some(6),
            max_optimal: DEFAULT_MAX_OPTIMAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
    /// Use the deterministic offline client.
    pub mock: bool,
    /// Serve responses from a recorded transcript instead of the network.
    pub replay: Option<PathBuf>,
    /// Keep a transcript of live exchanges in the work dir.
    pub record: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4-1106-preview".into(),
            temperature: 0.7,
            max_tokens: 1000,
            max_in_flight: 4,
            max_attempts: 3,
            initial_backoff_ms: 500,
            timeout_secs: 120,
            mock: false,
            replay: None,
            record: false,
        }
    }
}

impl ClientConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            initial_delay: std::time::Duration::from_millis(self.initial_backoff_ms),
            ..RetryPolicy::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub exclude_fallback: bool,
    pub max_history_turns: Option<usize>,
    pub expansion_order: ExpansionOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub buckets: usize,
    pub beta: f64,
    pub sft_learning_rate: f64,
    pub sft_steps: usize,
    pub dpo_learning_rate: f64,
    pub dpo_steps: usize,
    /// SFT steps on (context, answer) data before the rewrite stage; 0 skips it.
    pub answer_pretrain_steps: usize,
    pub grad_check_coords: usize,
    pub grad_check_h: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            buckets: crate::toy::DEFAULT_BUCKETS,
            beta: 0.1,
            sft_learning_rate: 0.01,
            sft_steps: 100,
            dpo_learning_rate: 50.0,
            dpo_steps: 300,
            answer_pretrain_steps: 0,
            grad_check_coords: 200,
            grad_check_h: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub criteria: Vec<Criterion>,
    /// Pairs judged per criterion, taken in pair-file order.
    pub max_pairs: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            criteria: Criterion::ALL.to_vec(),
            max_pairs: 50,
            temperature: 0.0,
            max_tokens: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub dataset_profile: DatasetProfile,
    pub retriever_profile: RetrieverProfile,
    pub exploration_profile: ExplorationProfile,
    pub thresholds: Thresholds,
    pub counts: Counts,
    pub client: ClientConfig,
    pub export: ExportConfig,
    pub toy: ToyConfig,
    pub judge: JudgeConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            dataset_profile: DatasetProfile::default(),
            retriever_profile: RetrieverProfile::TopiocqaBm25,
            exploration_profile: ExplorationProfile::default(),
            thresholds: Thresholds::default(),
            counts: Counts::default(),
            client: ClientConfig::default(),
            export: ExportConfig::default(),
            toy: ToyConfig::default(),
            judge: JudgeConfig::default(),
            seed: 7,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl PipelineConfig {
    /// Parses and validates a config document. Unknown or mistyped fields
    /// are reported with their JSON path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.paths.conversations, &mut self.paths.passages, &mut self.paths.work_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(r) = &mut self.client.replay {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.optimal < 1 {
            return Err(invalid("thresholds.optimal", "must be at least 1"));
        }
        if self.thresholds.preferred < 1 {
            return Err(invalid("thresholds.preferred", "must be at least 1"));
        }
        if self.counts.top_k < 1 {
            return Err(invalid("counts.top_k", "must be at least 1"));
        }
        if self.counts.max_optimal < 1 {
            return Err(invalid("counts.max_optimal", "must be at least 1"));
        }
        if !(self.client.temperature.is_finite() && self.client.temperature >= 0.0) {
            return Err(invalid("client.temperature", "must be a finite number >= 0"));
        }
        if self.client.max_attempts < 1 {
            return Err(invalid("client.max_attempts", "must be at least 1"));
        }
        if self.client.max_in_flight < 1 {
            return Err(invalid("client.max_in_flight", "must be at least 1"));
        }
        if self.toy.buckets < 1 {
            return Err(invalid("toy.buckets", "must be at least 1"));
        }
        for (field, v) in [
            ("toy.beta", self.toy.beta),
            ("toy.sft_learning_rate", self.toy.sft_learning_rate),
            ("toy.dpo_learning_rate", self.toy.dpo_learning_rate),
            ("toy.grad_check_h", self.toy.grad_check_h),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, "must be a finite number > 0"));
            }
        }
        Ok(())
    }

    pub fn rf_config(&self) -> RfConfig {
        RfConfig {
            optimal_threshold: self.thresholds.optimal,
            preferred_threshold: self.thresholds.preferred,
            max_optimal: self.counts.max_optimal,
            max_pairs: self.counts.max_pairs,
            seed: self.seed,
        }
    }

    /// Canonical serialization, used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON with paths made relative to `root`,
    /// so the hash does not depend on where the tree lives.
    pub fn hash(&self, root: &Path) -> String {
        let mut c = self.clone();
        for p in [&mut c.paths.conversations, &mut c.paths.passages, &mut c.paths.work_dir] {
            if let Ok(rel) = p.strip_prefix(root) {
                *p = rel.to_path_buf();
            }
        }
        if let Some(r) = &mut c.client.replay {
            if let Ok(rel) = r.strip_prefix(root) {
                *r = rel.to_path_buf();
            }
        }
        hex::encode(Sha256::digest(c.canonical_json().as_bytes()))
    }
}

/// Command-line overrides, applied one-for-one onto config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub retriever_profile: Option<RetrieverProfile>,
    pub top_k: Option<usize>,
    pub threshold_optimal: Option<u32>,
    pub threshold_preferred: Option<u32>,
    pub max_pairs: Option<usize>,
    pub mock_llm: bool,
    pub exclude_fallback: bool,
    pub work_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.retriever_profile {
            cfg.retriever_profile = p;
        }
        if let Some(k) = self.top_k {
            cfg.counts.top_k = k;
        }
        if let Some(t) = self.threshold_optimal {
            cfg.thresholds.optimal = t;
        }
        if let Some(t) = self.threshold_preferred {
            cfg.thresholds.preferred = t;
        }
        if let Some(m) = self.max_pairs {
            cfg.counts.max_pairs = Some(m);
        }
        if self.mock_llm {
            cfg.client.mock = true;
        }
        if self.exclude_fallback {
            cfg.export.exclude_fallback = true;
        }
        if let Some(w) = &self.work_dir {
            cfg.paths.work_dir = w.clone();
        }
        cfg.validate()
    }
}
