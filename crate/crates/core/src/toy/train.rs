//! Full-batch gradient descent on the toy model.

use serde::{Deserialize, Serialize};

use super::objective::{dpo_loss_grad, reference_log_probs, sft_loss_grad, PairExample, SeqExample};
use super::{ToyLMParams, ToyVocab};
use crate::error::{Error, Result};
use crate::preference::{DpoExample, SftExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Sft,
    Dpo,
}

#[derive(Debug, Clone, Copy)]
pub enum TrainingData<'a> {
    Sft(&'a [SeqExample]),
    Dpo(&'a [PairExample]),
}

impl TrainingData<'_> {
    pub fn objective(&self) -> Objective {
        match self {
            Self::Sft(_) => Objective::Sft,
            Self::Dpo(_) => Objective::Dpo,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::Sft(d) => d.len(),
            Self::Dpo(d) => d.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub beta: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidTrainConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidTrainConfig(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Loss (and for DPO the margins) after `step` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_margin_fraction: Option<f64>,
}

/// Runs `cfg.steps` updates in place and returns `steps + 1` records, the
/// first taken before any update. DPO uses a frozen copy of the incoming
/// parameters as the reference policy.
pub fn train(params: &mut ToyLMParams, data: TrainingData<'_>, cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    let reference = match data {
        TrainingData::Dpo(pairs) => reference_log_probs(params, pairs),
        TrainingData::Sft(_) => Vec::new(),
    };
    let mut records = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (record, grad) = match data {
            TrainingData::Sft(seqs) => {
                let (loss, grad) = sft_loss_grad(params, seqs);
                let record = StepRecord {
                    step,
                    loss,
                    mean_margin: None,
                    positive_margin_fraction: None,
                };
                (record, grad)
            }
            TrainingData::Dpo(pairs) => {
                let out = dpo_loss_grad(params, &reference, pairs, cfg.beta);
                let n = out.margins.len() as f64;
                let record = StepRecord {
                    step,
                    loss: out.loss,
                    mean_margin: Some(out.margins.iter().sum::<f64>() / n),
                    positive_margin_fraction: Some(out.margins.iter().filter(|&&m| m > 0.0).count() as f64 / n),
                };
                (record, out.grad)
            }
        };
        if !record.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        records.push(record);
        if step < cfg.steps {
            params.apply(&grad, cfg.learning_rate);
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss { step: step + 1 });
            }
        }
    }
    Ok(records)
}

/// Summary written after a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub objective: Objective,
    pub steps: usize,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
    pub margin_curve: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_positive_margin_fraction: Option<f64>,
    pub grad_check_max_rel_err: Option<f64>,
}

impl TrainingReport {
    pub fn from_records(objective: Objective, records: &[StepRecord], grad_check_max_rel_err: Option<f64>) -> Self {
        let last = records.last().expect("training yields at least one record");
        Self {
            objective,
            steps: last.step,
            final_loss: last.loss,
            loss_curve: records.iter().map(|r| r.loss).collect(),
            margin_curve: records.iter().filter_map(|r| r.mean_margin).collect(),
            final_positive_margin_fraction: last.positive_margin_fraction,
            grad_check_max_rel_err,
        }
    }
}

/// Vocabulary over every target text. Prompts only select a context
/// bucket, so their words never need ids.
pub fn build_vocab(sft: &[SftExample], dpo: &[DpoExample]) -> ToyVocab {
    ToyVocab::from_texts(
        sft.iter()
            .map(|e| e.completion.as_str())
            .chain(dpo.iter().flat_map(|e| [e.chosen.as_str(), e.rejected.as_str()])),
    )
}

pub fn encode_sft(vocab: &ToyVocab, buckets: usize, examples: &[SftExample]) -> Vec<SeqExample> {
    examples
        .iter()
        .map(|e| SeqExample::encode(vocab, buckets, &e.prompt, &e.completion))
        .collect()
}

pub fn encode_dpo(vocab: &ToyVocab, buckets: usize, examples: &[DpoExample]) -> Vec<PairExample> {
    examples
        .iter()
        .map(|e| PairExample {
            chosen: SeqExample::encode(vocab, buckets, &e.prompt, &e.chosen),
            rejected: SeqExample::encode(vocab, buckets, &e.prompt, &e.rejected),
        })
        .collect()
}
