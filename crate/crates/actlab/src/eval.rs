//! Perplexity evaluation of a model under an optional intervention.
//!
//! Samples are fixed-length token windows drawn reproducibly from a corpus.
//! Each sample is scored autoregressively: position `t` contributes the
//! negative log-likelihood of token `t` given tokens `0..t`. Log-probability
//! math accumulates in `f64` over `f32` logits. Results are bit-identical for
//! identical model, samples, and plan, including under parallel scoring.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::intervene::{InterventionPlan, PlanTarget};
use crate::model::Model;

/// Corpus family a run draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Wikitext,
    C4,
    LocalText,
}

impl Dataset {
    pub fn parse(text: &str) -> Result<Dataset> {
        match text {
            "wikitext" => Ok(Dataset::Wikitext),
            "c4" => Ok(Dataset::C4),
            "local" | "local_text" => Ok(Dataset::LocalText),
            other => Err(Error::InvalidConfig(format!("unknown dataset {other}"))),
        }
    }
}

/// Sampling and scoring configuration for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub dataset: Dataset,
    pub sample_count: usize,
    pub seed: u64,
    pub sequence_length: usize,
    /// Window advance between scored contexts. Fixed to the sequence length:
    /// windows are scored independently, with no overlap credit.
    pub stride: usize,
}

impl EvalConfig {
    pub fn new(dataset: Dataset, seed: u64, sequence_length: usize) -> EvalConfig {
        EvalConfig {
            dataset,
            sample_count: 100,
            seed,
            sequence_length,
            stride: sequence_length,
        }
    }

    pub fn with_samples(mut self, sample_count: usize) -> EvalConfig {
        self.sample_count = sample_count;
        self
    }

    pub fn validate(&self, max_sequence_length: usize) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::InvalidConfig("sample_count must be at least 1".into()));
        }
        if self.sequence_length < 2 {
            return Err(Error::InvalidConfig(
                "sequence_length must be at least 2 to score anything".into(),
            ));
        }
        if self.sequence_length > max_sequence_length {
            return Err(Error::SequenceTooLong {
                len: self.sequence_length,
                max: max_sequence_length,
            });
        }
        if self.stride != self.sequence_length {
            return Err(Error::InvalidConfig(
                "stride must equal sequence_length".into(),
            ));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Reads a corpus file into one token stream using the model's tokenizer.
///
/// Plain-text corpora are tokenized whole. The JSON-lines corpus concatenates
/// each record's `text` field with newline separators.
pub fn load_corpus_tokens(dataset: Dataset, path: &Path, model: &Model) -> Result<Vec<u32>> {
    let text = match dataset {
        Dataset::Wikitext | Dataset::LocalText => fs::read_to_string(path)?,
        Dataset::C4 => {
            let raw = fs::read_to_string(path)?;
            let mut parts = Vec::new();
            for line in raw.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(line)?;
                let piece = value
                    .get("text")
                    .and_then(|t| t.as_str())
                    .ok_or_else(|| {
                        Error::InvalidConfig("json-lines record without a text field".into())
                    })?;
                parts.push(piece.to_string());
            }
            parts.join("\n")
        }
    };
    Ok(model.tokenize(&text))
}

/// Draws `sample_count` distinct full-length windows from a token stream.
///
/// Window starts are sampled without replacement from every valid offset,
/// driven only by the seed; a shorter tail that cannot fill a window is never
/// used. Asking for more windows than the stream can host is rejected with
/// the available count.
pub fn sample_windows(tokens: &[u32], config: &EvalConfig) -> Result<Vec<Vec<u32>>> {
    let len = config.sequence_length;
    if tokens.len() < len {
        return Err(Error::CorpusTooSmall {
            available: 0,
            requested: config.sample_count,
        });
    }
    let available = tokens.len() - len + 1;
    if config.sample_count > available {
        return Err(Error::CorpusTooSmall {
            available,
            requested: config.sample_count,
        });
    }
    let mut starts: Vec<usize> = (0..available).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for i in 0..config.sample_count {
        let j = rng.gen_range(i..starts.len());
        starts.swap(i, j);
    }
    let mut picked: Vec<usize> = starts[..config.sample_count].to_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|s| tokens[s..s + len].to_vec())
        .collect())
}

/// Loads a corpus and draws evaluation samples from it.
pub fn sample_corpus(
    config: &EvalConfig,
    corpus_location: &Path,
    model: &Model,
) -> Result<Vec<Vec<u32>>> {
    config.validate(model.max_sequence_length)?;
    let tokens = load_corpus_tokens(config.dataset, corpus_location, model)?;
    sample_windows(&tokens, config)
}

/// Outcome of one perplexity evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PplResult {
    pub perplexity: f64,
    /// Number of scored positions across all samples.
    pub token_count: usize,
    /// True when any scored position produced a non-finite log-probability.
    /// The perplexity is reported as computed, never clipped.
    pub diverged: bool,
    pub config: EvalConfig,
    pub plan_digest: String,
}

fn score_sample(
    model: &Model,
    tokens: &[u32],
    plan: Option<&InterventionPlan>,
) -> Result<(f64, usize, bool)> {
    let out = model.run_with_taps(tokens, &[], plan)?;
    let logits = out.logits;
    let mut nll_sum = 0.0f64;
    let mut count = 0usize;
    let mut diverged = false;
    for pos in 0..tokens.len() - 1 {
        let target = tokens[pos + 1] as usize;
        let row = logits.row(pos);
        let mut max_v = f64::NEG_INFINITY;
        for v in row.iter() {
            let v = *v as f64;
            if v > max_v {
                max_v = v;
            }
        }
        let nll = if max_v.is_finite() {
            let mut sum = 0.0f64;
            for v in row.iter() {
                sum += (*v as f64 - max_v).exp();
            }
            max_v + sum.ln() - row[target] as f64
        } else {
            f64::NAN
        };
        if !nll.is_finite() {
            diverged = true;
        }
        nll_sum += nll;
        count += 1;
    }
    Ok((nll_sum, count, diverged))
}

fn reduce_scores(scored: Vec<(usize, (f64, usize, bool))>) -> (f64, usize, bool) {
    let mut scored = scored;
    scored.sort_by_key(|(i, _)| *i);
    let mut nll_sum = 0.0f64;
    let mut count = 0usize;
    let mut diverged = false;
    for (_, (s, c, d)) in scored {
        nll_sum += s;
        count += c;
        diverged |= d;
    }
    (nll_sum, count, diverged)
}

/// Scores all samples and returns the aggregate perplexity
/// `exp(mean negative log-likelihood)`.
///
/// Tap-level plans ride along into every pass; parameter-level plans are
/// applied once to a working copy of the model. Scoring runs in parallel over
/// samples, each worker on its own model instance, with a fixed-order
/// reduction so results do not depend on scheduling.
pub fn evaluate_ppl(
    model: &Model,
    samples: &[Vec<u32>],
    plan: Option<&InterventionPlan>,
    config: &EvalConfig,
) -> Result<PplResult> {
    let digest = InterventionPlan::digest_of(plan);
    match plan {
        Some(p) if !matches!(p.target, PlanTarget::Tap { .. }) => {
            let mut edited = model.clone();
            edited.apply_parameter_plan(p)?;
            evaluate_with_pass_plan(&edited, samples, None, config, digest)
        }
        _ => evaluate_with_pass_plan(model, samples, plan, config, digest),
    }
}

/// Like [`evaluate_ppl`] but applies several parameter-level plans together
/// (for example one row ablation per layer of a weight family).
pub fn evaluate_ppl_with_plans(
    model: &Model,
    samples: &[Vec<u32>],
    plans: &[InterventionPlan],
    config: &EvalConfig,
) -> Result<PplResult> {
    let digest = InterventionPlan::digest_of_list(plans);
    let mut edited = model.clone();
    for plan in plans {
        if matches!(plan.target, PlanTarget::Tap { .. }) {
            return Err(Error::InvalidConfig(
                "plan lists are for parameter-level plans; pass a tap plan alone".into(),
            ));
        }
        edited.apply_parameter_plan(plan)?;
    }
    evaluate_with_pass_plan(&edited, samples, None, config, digest)
}

fn evaluate_with_pass_plan(
    model: &Model,
    samples: &[Vec<u32>],
    plan: Option<&InterventionPlan>,
    config: &EvalConfig,
    plan_digest: String,
) -> Result<PplResult> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let scored: Vec<(usize, Result<(f64, usize, bool)>)> = samples
        .par_iter()
        .enumerate()
        .map_init(
            || model.clone(),
            |worker, (i, sample)| (i, score_sample(worker, sample, plan)),
        )
        .collect();
    let mut ok = Vec::with_capacity(scored.len());
    for (i, r) in scored {
        ok.push((i, r?));
    }
    let (nll_sum, count, diverged) = reduce_scores(ok);
    let mean = nll_sum / count as f64;
    Ok(PplResult {
        perplexity: mean.exp(),
        token_count: count,
        diverged,
        config: config.clone(),
        plan_digest,
    })
}
