//! Stage orchestration over a work directory.
//!
//! Each stage declares its inputs (external files or artifacts of earlier
//! stages) and the config fields it reads. A stage whose inputs, config
//! slice and outputs are unchanged since its last manifest is skipped.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExplorationProfile, PipelineConfig};
use crate::conversation::{
    build_context, classify_turn, ingest_conversations, query_id, render_prompt_input, write_conversations,
    Conversation, TurnType,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, read_qrels, render_table, write_qrels, EvalReport, Qrels, Run};
use crate::explore::client::{ChatClient, HttpChatClient, RecordingClient, ReplayClient};
use crate::explore::judge::{judge_pair, Criterion, JudgeSettings, Verdict};
use crate::explore::mock::MockChatClient;
use crate::explore::{generate_candidates, map_bounded, GenerationSettings, PromptMethod, RewriteCandidate, TurnInput};
use crate::feedback::{baseline_queries, collect_feedback, group_by_turn, FeedbackRecord, QueryItem, QuerySource};
use crate::index::{gold_rank, read_passages, Bm25Retriever, PassageIndex, Rank, Retriever};
use crate::jsonl::{read_json, read_jsonl, write_json, write_jsonl};
use crate::manifest::{digest_outputs, sha256_file, sha256_json, StageManifest};
use crate::preference::{
    build_rf_collection, export_training_files, DpoExample, ExportOptions, OptimalQuerySet, PreferencePair,
    RfCollection, SftExample,
};
use crate::rng::substream;
use crate::toy::{
    build_vocab, encode_dpo, encode_sft, grad_check, reference_log_probs, train, GradCheckKind, Objective,
    ToyLMParams, TrainConfig, TrainingData, TrainingReport,
};

/// Bumped whenever an artifact layout changes.
pub const FORMAT_VERSION: u32 = 1;

pub const CONVERSATIONS: &str = "conversations.jsonl";
pub const QRELS: &str = "qrels.txt";
pub const TURN_CLASSES: &str = "turn_classes.json";
pub const INDEX: &str = "index.bin";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const TRANSCRIPT: &str = "transcript.jsonl";
pub const FEEDBACK: &str = "feedback.jsonl";
pub const OPTIMAL: &str = "optimal.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const SFT: &str = "sft.jsonl";
pub const DPO: &str = "dpo.jsonl";
pub const EXPORT_SUMMARY: &str = "export_summary.json";
pub const EVAL_JSON: &str = "eval_report.json";
pub const EVAL_TXT: &str = "eval_report.txt";
pub const TOY_SFT_REPORT: &str = "toy_sft_report.json";
pub const TOY_DPO_REPORT: &str = "toy_dpo_report.json";
pub const JUDGMENTS: &str = "judgments.jsonl";
pub const JUDGE_SUMMARY: &str = "judge_summary.json";
pub const REPORT: &str = "report.md";

/// Run files written by `feedback`, in report order.
pub const RUN_TAGS: [&str; 4] = ["original", "human", "qr-first", "best-of-candidates"];

/// Examples used by the toy gradient check.
const GRAD_CHECK_EXAMPLES: usize = 32;

pub fn run_path(tag: &str) -> String {
    format!("runs/{tag}.trec")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Index,
    Explore,
    Feedback,
    BuildRf,
    Export,
    Eval,
    TrainToy,
    Judge,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Self::Ingest,
        Self::Index,
        Self::Explore,
        Self::Feedback,
        Self::BuildRf,
        Self::Export,
        Self::Eval,
        Self::TrainToy,
        Self::Judge,
        Self::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Index => "index",
            Self::Explore => "explore",
            Self::Feedback => "feedback",
            Self::BuildRf => "build-rf",
            Self::Export => "export",
            Self::Eval => "eval",
            Self::TrainToy => "train-toy",
            Self::Judge => "judge",
            Self::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::Config {
            field: "stage".into(),
            message: format!("unknown stage {s:?}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageResult {
    pub stage: &'static str,
    pub outcome: StageOutcome,
    pub outputs: Vec<String>,
}

enum Input {
    /// A file named by the config, digested under a logical key.
    External(&'static str, PathBuf),
    /// A work-dir artifact produced by `Stage`.
    Artifact(String, Stage),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub conv_id: String,
    pub turn_id: u32,
    pub criterion: Criterion,
    pub chosen: String,
    pub rejected: String,
    /// `A` is the chosen rewrite, `B` the rejected one.
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub chosen: usize,
    pub rejected: usize,
    pub tie: usize,
}

pub struct Pipeline {
    config: PipelineConfig,
    force: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config, force: false }
    }

    /// Re-run stages even when their manifests are current.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn work_dir(&self) -> &Path {
        &self.config.paths.work_dir
    }

    fn work(&self, rel: &str) -> PathBuf {
        self.work_dir().join(rel)
    }

    pub fn run_all(&self) -> Result<Vec<StageResult>> {
        Stage::ALL.into_iter().map(|s| self.run(s)).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageResult> {
        let cfg = &self.config;
        let artifact = |rel: &str, from: Stage| Input::Artifact(rel.to_string(), from);
        let (inputs, slice) = match stage {
            Stage::Ingest => (
                vec![
                    Input::External("conversations", cfg.paths.conversations.clone()),
                    Input::External("passages", cfg.paths.passages.clone()),
                ],
                json!({ "dataset_profile": cfg.dataset_profile }),
            ),
            Stage::Index => (
                vec![Input::External("passages", cfg.paths.passages.clone())],
                json!({ "retriever_profile": cfg.retriever_profile }),
            ),
            Stage::Explore => {
                let mut inputs = vec![artifact(CONVERSATIONS, Stage::Ingest), artifact(INDEX, Stage::Index)];
                if let Some(replay) = &cfg.client.replay {
                    inputs.push(Input::External("replay", replay.clone()));
                }
                let slice = json!({
                    "client": client_slice(cfg),
                    "candidates": cfg.counts.candidates,
                    "top_k": cfg.counts.top_k,
                    "optimal": cfg.thresholds.optimal,
                    "exploration_profile": cfg.exploration_profile,
                    "expansion_order": cfg.export.expansion_order,
                    "retriever_profile": cfg.retriever_profile,
                    "seed": cfg.seed,
                });
                (inputs, slice)
            }
            Stage::Feedback => (
                vec![
                    artifact(CANDIDATES, Stage::Explore),
                    artifact(CONVERSATIONS, Stage::Ingest),
                    artifact(INDEX, Stage::Index),
                ],
                json!({ "top_k": cfg.counts.top_k, "retriever_profile": cfg.retriever_profile }),
            ),
            Stage::BuildRf => (vec![artifact(FEEDBACK, Stage::Feedback)], json!(cfg.rf_config())),
            Stage::Export => (
                vec![
                    artifact(OPTIMAL, Stage::BuildRf),
                    artifact(PAIRS, Stage::BuildRf),
                    artifact(CONVERSATIONS, Stage::Ingest),
                ],
                json!({
                    "exclude_fallback": cfg.export.exclude_fallback,
                    "max_history_turns": cfg.export.max_history_turns,
                }),
            ),
            Stage::Eval => {
                let mut inputs: Vec<Input> = RUN_TAGS.iter().map(|t| artifact(&run_path(t), Stage::Feedback)).collect();
                inputs.push(artifact(QRELS, Stage::Ingest));
                inputs.push(artifact(TURN_CLASSES, Stage::Ingest));
                (inputs, json!({}))
            }
            Stage::TrainToy => (
                vec![
                    artifact(SFT, Stage::Export),
                    artifact(DPO, Stage::Export),
                    artifact(CONVERSATIONS, Stage::Ingest),
                ],
                json!({
                    "toy": cfg.toy,
                    "seed": cfg.seed,
                    "max_history_turns": cfg.export.max_history_turns,
                }),
            ),
            Stage::Judge => (
                vec![artifact(PAIRS, Stage::BuildRf), artifact(CONVERSATIONS, Stage::Ingest)],
                json!({ "judge": cfg.judge, "client": client_slice(cfg), "seed": cfg.seed }),
            ),
            Stage::Report => (
                vec![
                    artifact(EXPORT_SUMMARY, Stage::Export),
                    artifact(EVAL_TXT, Stage::Eval),
                    artifact(TOY_SFT_REPORT, Stage::TrainToy),
                    artifact(TOY_DPO_REPORT, Stage::TrainToy),
                    artifact(JUDGE_SUMMARY, Stage::Judge),
                ],
                json!({}),
            ),
        };
        self.run_stage(stage, inputs, slice)
    }

    fn run_stage(&self, stage: Stage, inputs: Vec<Input>, slice: serde_json::Value) -> Result<StageResult> {
        let mut digests = BTreeMap::new();
        for input in &inputs {
            match input {
                Input::External(key, path) => {
                    digests.insert(format!("input:{key}"), sha256_file(path)?);
                }
                Input::Artifact(rel, producer) => {
                    let path = self.work(rel);
                    if !path.exists() {
                        return Err(Error::MissingArtifact {
                            artifact: rel.clone(),
                            stage: producer.name().to_string(),
                        });
                    }
                    digests.insert(rel.clone(), sha256_file(&path)?);
                }
            }
        }
        let config_hash = sha256_json(&slice);
        let work = self.work_dir();
        if !self.force {
            if let Some(m) = StageManifest::load(work, stage.name())? {
                if m.format_version == FORMAT_VERSION && m.is_current(&config_hash, &digests, work) {
                    log::info!("{stage}: up to date");
                    return Ok(StageResult {
                        stage: stage.name(),
                        outcome: StageOutcome::UpToDate,
                        outputs: m.outputs.keys().cloned().collect(),
                    });
                }
            }
        }
        std::fs::create_dir_all(work).map_err(|e| Error::io(work, e))?;
        log::info!("{stage}: running");
        let outputs = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Index => self.index()?,
            Stage::Explore => self.explore()?,
            Stage::Feedback => self.feedback()?,
            Stage::BuildRf => self.build_rf()?,
            Stage::Export => self.export()?,
            Stage::Eval => self.eval()?,
            Stage::TrainToy => self.train_toy()?,
            Stage::Judge => self.judge()?,
            Stage::Report => self.report()?,
        };
        let manifest = StageManifest {
            stage: stage.name().to_string(),
            format_version: FORMAT_VERSION,
            config_hash,
            inputs: digests,
            outputs: digest_outputs(work, &outputs)?,
        };
        manifest.save(work)?;
        Ok(StageResult {
            stage: stage.name(),
            outcome: StageOutcome::Ran,
            outputs,
        })
    }

    fn conversations(&self) -> Result<Vec<Conversation>> {
        read_jsonl(&self.work(CONVERSATIONS))
    }

    fn load_index(&self) -> Result<PassageIndex> {
        PassageIndex::load(&self.work(INDEX))
    }

    fn ingest(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let conversations = ingest_conversations(&cfg.paths.conversations, cfg.dataset_profile)?;
        let passages = read_passages(&cfg.paths.passages)?;
        let doc_of: HashMap<String, String> = passages
            .iter()
            .map(|p| (p.passage_id.clone(), p.source_doc.clone()))
            .collect();
        let mut qrels = Qrels::new();
        let mut classes = BTreeMap::new();
        for conv in &conversations {
            for (i, turn) in conv.turns.iter().enumerate() {
                if !turn.is_evaluable() {
                    continue;
                }
                let qid = query_id(&conv.conv_id, turn.turn_id);
                let class = match classify_turn(conv, i + 1, &doc_of) {
                    Err(Error::NoPreviousEvaluableTurn { .. }) => TurnType::First,
                    other => other?,
                };
                classes.insert(qid.clone(), class);
                for pid in &turn.gold_passage_ids {
                    if !doc_of.contains_key(pid) {
                        return Err(Error::UnknownPassage(pid.clone()));
                    }
                    qrels.entry(qid.clone()).or_default().insert(pid.clone(), 1);
                }
            }
        }
        write_conversations(&self.work(CONVERSATIONS), &conversations)?;
        write_qrels(&self.work(QRELS), &qrels)?;
        write_json(&self.work(TURN_CLASSES), &classes)?;
        Ok(vec![CONVERSATIONS.into(), QRELS.into(), TURN_CLASSES.into()])
    }

    fn index(&self) -> Result<Vec<String>> {
        let passages = read_passages(&self.config.paths.passages)?;
        let index = PassageIndex::build(&passages, self.config.retriever_profile.params())?;
        index.save(&self.work(INDEX))?;
        Ok(vec![INDEX.into()])
    }

    fn base_client(&self) -> Result<Box<dyn ChatClient>> {
        let c = &self.config.client;
        if c.mock {
            return Ok(Box::new(MockChatClient::new(self.config.seed)));
        }
        if let Some(path) = &c.replay {
            return Ok(Box::new(ReplayClient::load(path)?));
        }
        let base = std::env::var("LLM_API_BASE").unwrap_or_else(|_| c.base_url.clone());
        let key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        Ok(Box::new(HttpChatClient::new(
            &base,
            key,
            Duration::from_secs(c.timeout_secs),
        )))
    }

    fn generation_settings(&self) -> GenerationSettings {
        let c = &self.config.client;
        GenerationSettings {
            model: c.model.clone(),
            temperature: c.temperature,
            max_tokens: c.max_tokens,
            counts: self.config.counts.candidates,
            retry: c.retry_policy(),
            expansion_order: self.config.export.expansion_order,
        }
    }

    fn explore(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let conversations = self.conversations()?;
        let index = self.load_index()?;
        let retriever = Bm25Retriever {
            index: &index,
            profile: cfg.retriever_profile.id().into(),
        };
        let recorder = RecordingClient::new(self.base_client()?);
        let client: &dyn ChatClient = &recorder;
        let settings = self.generation_settings();
        let in_flight = cfg.client.max_in_flight;

        let mut turns = Vec::new();
        let mut gold = Vec::new();
        for conv in &conversations {
            for (i, turn) in conv.turns.iter().enumerate() {
                if !turn.is_evaluable() {
                    continue;
                }
                turns.push(TurnInput {
                    conv_id: conv.conv_id.clone(),
                    turn_id: turn.turn_id,
                    context: build_context(conv, i + 1, None)?,
                    question: turn.question.clone(),
                    expansion_base: turn.human_rewrite.clone(),
                });
                gold.push(turn.gold_passage_ids.clone());
            }
        }

        let generate = |items: &[&TurnInput], method: PromptMethod| -> Result<Vec<Vec<RewriteCandidate>>> {
            map_bounded(items, in_flight, |t| generate_candidates(t, method, client, &settings))
                .into_iter()
                .collect()
        };

        let all: Vec<&TurnInput> = turns.iter().collect();
        let rewrites = generate(&all, PromptMethod::QuestionRewriting)?;

        // Rank the rewriting candidates once: they pick the expansion base
        // for turns without a human rewrite and drive the budget profile.
        let mut needs_planning = Vec::with_capacity(turns.len());
        for ((turn, cands), gold_ids) in turns.iter_mut().zip(&rewrites).zip(&gold) {
            let mut best: Option<(Rank, u32, &str)> = None;
            let mut optimal = 0;
            for c in cands {
                let rank = gold_rank(&retriever.retrieve(&c.rewrite, cfg.counts.top_k), gold_ids)?;
                if matches!(rank, Rank::Found(r) if r <= cfg.thresholds.optimal) {
                    optimal += 1;
                }
                if best.is_none_or(|(r, i, _)| (rank, c.candidate_idx) < (r, i)) {
                    best = Some((rank, c.candidate_idx, &c.rewrite));
                }
            }
            if turn.expansion_base.is_none() {
                turn.expansion_base = best.map(|(_, _, text)| text.to_string());
            }
            needs_planning.push(match cfg.exploration_profile {
                ExplorationProfile::Full => true,
                ExplorationProfile::TopiocqaBudget => optimal < 3,
            });
        }

        let planning_turns: Vec<&TurnInput> = turns
            .iter()
            .zip(&needs_planning)
            .filter(|(_, &p)| p)
            .map(|(t, _)| t)
            .collect();
        let planning = generate(&planning_turns, PromptMethod::Planning)?;
        let expandable: Vec<&TurnInput> = turns.iter().filter(|t| t.expansion_base.is_some()).collect();
        let expansions = generate(&expandable, PromptMethod::QueryExpansion)?;

        let mut candidates: Vec<RewriteCandidate> = rewrites
            .into_iter()
            .chain(planning)
            .chain(expansions)
            .flatten()
            .collect();
        candidates.sort_by(|a, b| {
            (&a.conv_id, a.turn_id, a.method, a.candidate_idx).cmp(&(&b.conv_id, b.turn_id, b.method, b.candidate_idx))
        });
        write_jsonl(&self.work(CANDIDATES), &candidates)?;
        let mut outputs = vec![CANDIDATES.to_string()];
        if cfg.client.record {
            recorder.save(&self.work(TRANSCRIPT))?;
            outputs.push(TRANSCRIPT.into());
        }
        log::info!("explore: {} candidates over {} turns", candidates.len(), turns.len());
        Ok(outputs)
    }

    fn feedback(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let conversations = self.conversations()?;
        let candidates: Vec<RewriteCandidate> = read_jsonl(&self.work(CANDIDATES))?;
        let index = self.load_index()?;
        let retriever = Bm25Retriever {
            index: &index,
            profile: cfg.retriever_profile.id().into(),
        };
        let top_k = cfg.counts.top_k;
        let mut queries: Vec<QueryItem> = candidates.iter().map(QueryItem::from).collect();
        queries.extend(baseline_queries(&conversations));
        let run = collect_feedback(&queries, &conversations, &retriever, top_k)?;
        write_jsonl(&self.work(FEEDBACK), &run.records)?;

        let by_turn: HashMap<(&str, u32), &[FeedbackRecord]> = group_by_turn(&run.records)
            .into_iter()
            .map(|g| ((g[0].conv_id.as_str(), g[0].turn_id), g))
            .collect();
        let pick = |group: &[FeedbackRecord], tag: &str| -> Option<String> {
            let find = |src: QuerySource| group.iter().find(|r| r.method == src);
            let chosen = match tag {
                "original" => find(QuerySource::BaselineOriginal),
                "human" => find(QuerySource::BaselineHuman).or_else(|| find(QuerySource::BaselineOriginal)),
                "qr-first" => group
                    .iter()
                    .find(|r| r.method == QuerySource::QuestionRewriting && r.candidate_idx == 0)
                    .or_else(|| find(QuerySource::BaselineOriginal)),
                _ => group
                    .iter()
                    .filter(|r| r.method.prompt_method().is_some())
                    .min_by_key(|r| (r.rank(), r.method, r.candidate_idx))
                    .or_else(|| find(QuerySource::BaselineOriginal)),
            };
            chosen.map(|r| r.rewrite.clone())
        };

        std::fs::create_dir_all(self.work("runs")).map_err(|e| Error::io(&self.work("runs"), e))?;
        let mut outputs = vec![FEEDBACK.to_string()];
        for tag in RUN_TAGS {
            let mut trec = Run::new(tag);
            for conv in &conversations {
                for turn in conv.turns.iter().filter(|t| t.is_evaluable()) {
                    let Some(group) = by_turn.get(&(conv.conv_id.as_str(), turn.turn_id)) else {
                        continue;
                    };
                    if let Some(text) = pick(group, tag) {
                        trec.insert(query_id(&conv.conv_id, turn.turn_id), &retriever.retrieve(&text, top_k));
                    }
                }
            }
            let rel = run_path(tag);
            trec.write(&self.work(&rel))?;
            outputs.push(rel);
        }
        Ok(outputs)
    }

    fn build_rf(&self) -> Result<Vec<String>> {
        let records: Vec<FeedbackRecord> = read_jsonl(&self.work(FEEDBACK))?;
        let collection = build_rf_collection(&records, &self.config.rf_config())?;
        write_jsonl(&self.work(OPTIMAL), &collection.optimal_sets)?;
        write_jsonl(&self.work(PAIRS), &collection.pairs)?;
        log::info!(
            "build-rf: {} optimal sets, {} pairs",
            collection.optimal_sets.len(),
            collection.pairs.len()
        );
        Ok(vec![OPTIMAL.into(), PAIRS.into()])
    }

    fn export(&self) -> Result<Vec<String>> {
        let collection = RfCollection {
            optimal_sets: read_jsonl::<OptimalQuerySet>(&self.work(OPTIMAL))?,
            pairs: read_jsonl::<PreferencePair>(&self.work(PAIRS))?,
        };
        let options = ExportOptions {
            exclude_fallback: self.config.export.exclude_fallback,
            max_history_turns: self.config.export.max_history_turns,
        };
        let summary = export_training_files(
            &collection,
            &self.conversations()?,
            &self.work(SFT),
            &self.work(DPO),
            options,
        )?;
        write_json(&self.work(EXPORT_SUMMARY), &summary)?;
        Ok(vec![SFT.into(), DPO.into(), EXPORT_SUMMARY.into()])
    }

    fn eval(&self) -> Result<Vec<String>> {
        let qrels = read_qrels(&self.work(QRELS))?;
        let classes: HashMap<String, TurnType> = read_json(&self.work(TURN_CLASSES))?;
        let reports = RUN_TAGS
            .iter()
            .map(|tag| {
                let run = Run::read(&self.work(&run_path(tag)))?;
                evaluate_run(&run, &qrels, &classes)
            })
            .collect::<Result<Vec<EvalReport>>>()?;
        let scaled: Vec<EvalReport> = reports.iter().map(EvalReport::scaled).collect();
        write_json(&self.work(EVAL_JSON), &scaled)?;
        std::fs::write(self.work(EVAL_TXT), render_table(&reports)).map_err(|e| Error::io(&self.work(EVAL_TXT), e))?;
        Ok(vec![EVAL_JSON.into(), EVAL_TXT.into()])
    }

    fn train_toy(&self) -> Result<Vec<String>> {
        let toy = self.config.toy;
        let sft: Vec<SftExample> = read_jsonl(&self.work(SFT))?;
        let dpo: Vec<DpoExample> = read_jsonl(&self.work(DPO))?;
        let answers = if toy.answer_pretrain_steps > 0 {
            answer_examples(&self.conversations()?, self.config.export.max_history_turns)?
        } else {
            Vec::new()
        };
        let vocab_src: Vec<SftExample> = sft.iter().chain(&answers).cloned().collect();
        let vocab = build_vocab(&vocab_src, &dpo);
        let mut params = ToyLMParams::zeros(toy.buckets, vocab.len());
        let sft_cfg = TrainConfig {
            learning_rate: toy.sft_learning_rate,
            steps: toy.sft_steps,
            beta: toy.beta,
        };

        if !answers.is_empty() {
            let data = encode_sft(&vocab, toy.buckets, &answers);
            let cfg = TrainConfig {
                steps: toy.answer_pretrain_steps,
                ..sft_cfg
            };
            train(&mut params, TrainingData::Sft(&data), &cfg)?;
        }

        let sft_data = encode_sft(&vocab, toy.buckets, &sft);
        let sft_records = train(&mut params, TrainingData::Sft(&sft_data), &sft_cfg)?;
        let check_sft = &sft_data[..sft_data.len().min(GRAD_CHECK_EXAMPLES)];
        let sft_check = grad_check(
            GradCheckKind::Sft(check_sft),
            &params,
            toy.grad_check_coords,
            toy.grad_check_h,
            &mut substream(self.config.seed, "grad-check/sft"),
        );
        let sft_report = TrainingReport::from_records(Objective::Sft, &sft_records, Some(sft_check.max_rel_err));
        write_json(&self.work(TOY_SFT_REPORT), &sft_report)?;

        let pairs = encode_dpo(&vocab, toy.buckets, &dpo);
        let snapshot = params.clone();
        let dpo_cfg = TrainConfig {
            learning_rate: toy.dpo_learning_rate,
            steps: toy.dpo_steps,
            beta: toy.beta,
        };
        let dpo_records = train(&mut params, TrainingData::Dpo(&pairs), &dpo_cfg)?;
        let check_pairs = &pairs[..pairs.len().min(GRAD_CHECK_EXAMPLES)];
        let reference = reference_log_probs(&snapshot, check_pairs);
        let dpo_check = grad_check(
            GradCheckKind::Dpo {
                pairs: check_pairs,
                reference: &reference,
                beta: toy.beta,
            },
            &params,
            toy.grad_check_coords,
            toy.grad_check_h,
            &mut substream(self.config.seed, "grad-check/dpo"),
        );
        let dpo_report = TrainingReport::from_records(Objective::Dpo, &dpo_records, Some(dpo_check.max_rel_err));
        write_json(&self.work(TOY_DPO_REPORT), &dpo_report)?;
        log::info!(
            "train-toy: |V|={}, SFT loss {:.4} -> {:.4}, DPO positive margins {:.3}",
            vocab.len(),
            sft_records[0].loss,
            sft_report.final_loss,
            dpo_report.final_positive_margin_fraction.unwrap_or(0.0)
        );
        Ok(vec![TOY_SFT_REPORT.into(), TOY_DPO_REPORT.into()])
    }

    fn judge(&self) -> Result<Vec<String>> {
        let cfg = &self.config;
        let pairs: Vec<PreferencePair> = read_jsonl(&self.work(PAIRS))?;
        let conversations = self.conversations()?;
        let by_id: HashMap<&str, &Conversation> = conversations.iter().map(|c| (c.conv_id.as_str(), c)).collect();
        let client = self.base_client()?;
        let settings = JudgeSettings {
            model: &cfg.client.model,
            temperature: cfg.judge.temperature,
            max_tokens: cfg.judge.max_tokens,
            retry: cfg.client.retry_policy(),
        };
        let jobs: Vec<(&PreferencePair, Criterion)> = pairs
            .iter()
            .take(cfg.judge.max_pairs)
            .flat_map(|p| cfg.judge.criteria.iter().map(move |&c| (p, c)))
            .collect();
        let judgments = map_bounded(&jobs, cfg.client.max_in_flight, |&(pair, criterion)| {
            let unknown = || Error::UnknownTurn {
                conv_id: pair.conv_id.clone(),
                turn_id: pair.turn_id,
            };
            let conv = by_id.get(pair.conv_id.as_str()).ok_or_else(unknown)?;
            let idx = conv.index_of(pair.turn_id).ok_or_else(unknown)?;
            let ctx = build_context(conv, idx, None)?;
            let conversation = render_prompt_input(&ctx, &conv.turns[idx - 1].question);
            let verdict = judge_pair(criterion, &conversation, &pair.chosen, &pair.rejected, &client, &settings)?;
            Ok(Judgment {
                conv_id: pair.conv_id.clone(),
                turn_id: pair.turn_id,
                criterion,
                chosen: pair.chosen.clone(),
                rejected: pair.rejected.clone(),
                verdict,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let mut summary: BTreeMap<Criterion, VerdictCounts> =
            cfg.judge.criteria.iter().map(|&c| (c, VerdictCounts::default())).collect();
        for j in &judgments {
            let counts = summary.entry(j.criterion).or_default();
            match j.verdict {
                Verdict::A => counts.chosen += 1,
                Verdict::B => counts.rejected += 1,
                Verdict::Tie => counts.tie += 1,
            }
        }
        write_jsonl(&self.work(JUDGMENTS), &judgments)?;
        write_json(&self.work(JUDGE_SUMMARY), &summary)?;
        Ok(vec![JUDGMENTS.into(), JUDGE_SUMMARY.into()])
    }

    fn report(&self) -> Result<Vec<String>> {
        use std::fmt::Write;
        let summary: crate::preference::ExportSummary = read_json(&self.work(EXPORT_SUMMARY))?;
        let table = std::fs::read_to_string(self.work(EVAL_TXT)).map_err(|e| Error::io(&self.work(EVAL_TXT), e))?;
        let sft: TrainingReport = read_json(&self.work(TOY_SFT_REPORT))?;
        let dpo: TrainingReport = read_json(&self.work(TOY_DPO_REPORT))?;
        let judge: BTreeMap<Criterion, VerdictCounts> = read_json(&self.work(JUDGE_SUMMARY))?;

        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "# Pipeline report\n").unwrap();
        writeln!(w, "## RF collection\n").unwrap();
        writeln!(w, "- turns: {}", summary.n_turns).unwrap();
        writeln!(w, "- optimal queries: {}", summary.n_optimal_queries).unwrap();
        writeln!(w, "- fallback sets: {}", summary.n_fallback).unwrap();
        writeln!(w, "- preference pairs: {}\n", summary.n_pairs).unwrap();
        writeln!(w, "## Retrieval\n\n```\n{}```\n", table).unwrap();
        writeln!(w, "## Toy aligner\n").unwrap();
        for r in [&sft, &dpo] {
            write!(
                w,
                "- {:?}: {} steps, loss {:.6} -> {:.6}",
                r.objective,
                r.steps,
                r.loss_curve.first().copied().unwrap_or(f64::NAN),
                r.final_loss
            )
            .unwrap();
            if let Some(f) = r.final_positive_margin_fraction {
                write!(w, ", positive margins {:.1}%", f * 100.0).unwrap();
            }
            if let Some(e) = r.grad_check_max_rel_err {
                write!(w, ", grad check {e:.2e}").unwrap();
            }
            writeln!(w).unwrap();
        }
        writeln!(w, "\n## Judge (chosen vs rejected)\n").unwrap();
        writeln!(w, "| criterion | chosen | rejected | tie |\n|---|---|---|---|").unwrap();
        for (c, v) in &judge {
            writeln!(w, "| {c} | {} | {} | {} |", v.chosen, v.rejected, v.tie).unwrap();
        }
        std::fs::write(self.work(REPORT), out).map_err(|e| Error::io(&self.work(REPORT), e))?;
        Ok(vec![REPORT.into()])
    }
}

fn client_slice(cfg: &PipelineConfig) -> serde_json::Value {
    let c = &cfg.client;
    json!({
        "mock": c.mock,
        "replay": c.replay.is_some(),
        "record": c.record,
        "model": c.model,
        "temperature": c.temperature,
        "max_tokens": c.max_tokens,
    })
}

/// (context, answer) examples for the optional answer-replication stage.
pub fn answer_examples(conversations: &[Conversation], max_history_turns: Option<usize>) -> Result<Vec<SftExample>> {
    let mut out = Vec::new();
    for conv in conversations {
        for (i, turn) in conv.turns.iter().enumerate() {
            if turn.answer.trim().is_empty() {
                continue;
            }
            let ctx = build_context(conv, i + 1, max_history_turns)?;
            out.push(SftExample {
                prompt: render_prompt_input(&ctx, &turn.question),
                completion: turn.answer.clone(),
            });
        }
    }
    Ok(out)
}
