//! Editable interventions: replace chosen activation entries, normalization
//! scales, or weight rows, with reproducible random baselines for comparison.
//!
//! A plan names a target (a tap slot, a normalization gamma vector, or a
//! weight matrix), the entries to touch, and a replacement policy. Tap-level
//! plans are applied inside the forward pass; parameter-level plans edit the
//! model before passes and can be reverted bit-exactly.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::ma::{detect_ma_positions, MaCriteria, MassiveActivationEvent};
use crate::tap::{BlockKind, Slot};

/// What replaces a selected entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    ReplaceWithMean,
    ReplaceWithZero,
}

/// Which mean feeds [`Policy::ReplaceWithMean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanScope {
    /// Mean over every entry of the target tensor.
    WholeTensor,
    /// Mean of the entry's own channel (a weight row's own mean for weight
    /// targets).
    PerChannel,
}

/// What a plan edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PlanTarget {
    /// An activation tensor at a tap slot. With `layer` unset the edit
    /// applies at that slot in every layer.
    Tap { slot: Slot, layer: Option<usize> },
    /// The gamma vector of one normalization.
    Gamma { layer: usize, block_kind: BlockKind },
    /// A weight matrix by name. A family name without a layer prefix (for
    /// example `attn.w_q`) addresses the same matrix in every layer.
    Weight { name: String },
}

/// Which entries of the target a plan touches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PlanIndices {
    /// Fixed `(token, channel)` positions for tap targets.
    Positions { positions: Vec<(usize, usize)> },
    /// Fixed channel (or row) indices for gamma and weight targets.
    Channels { channels: Vec<usize> },
    /// Re-detect massive activations on the tensor flowing through the target
    /// tap each pass and edit exactly those positions.
    DetectedMas,
}

/// A serializable description of one intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub target: PlanTarget,
    pub indices: PlanIndices,
    pub policy: Policy,
    pub mean_scope: MeanScope,
    /// When true, mean replacement excludes the selected entries from the
    /// mean. The default keeps them in, so the mean is taken over the tensor
    /// exactly as it flowed.
    pub exclude_selected_from_mean: bool,
    /// Seed recorded when the indices came from a random draw.
    pub seed: Option<u64>,
}

impl InterventionPlan {
    /// Stable content digest; two plans digest equally iff their serialized
    /// forms are identical.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Digest for an optional plan; the absence of a plan has the fixed label
    /// `baseline`.
    pub fn digest_of(plan: Option<&InterventionPlan>) -> String {
        match plan {
            Some(p) => p.digest(),
            None => "baseline".to_string(),
        }
    }

    /// Digest of an ordered plan list, for runs that apply several parameter
    /// edits together.
    pub fn digest_of_list(plans: &[InterventionPlan]) -> String {
        if plans.is_empty() {
            return "baseline".to_string();
        }
        if plans.len() == 1 {
            return plans[0].digest();
        }
        let json = serde_json::to_string(plans).expect("plans serialize");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }
}

fn check_unique_channels(indices: &[usize]) -> Result<()> {
    let set: BTreeSet<usize> = indices.iter().copied().collect();
    if set.len() != indices.len() {
        return Err(Error::DuplicateIndices);
    }
    Ok(())
}

/// Builds a plan that removes the massive activations at a feed-forward site.
///
/// `site` must be the element-wise product slot (`y6`) or the down-projection
/// slot (`y7`). Every supplied event must originate from that slot. The plan
/// re-detects on each pass, so on the pass the events came from it edits
/// exactly their positions; with no massive activations present it is a
/// no-op. Mean replacement uses the whole-tensor mean.
pub fn plan_tma_removal(
    site: Slot,
    policy: Policy,
    events: &[MassiveActivationEvent],
) -> Result<InterventionPlan> {
    if site != Slot::Y6 && site != Slot::Y7 {
        return Err(Error::SiteMismatch(format!(
            "removal site must be y6 or y7, got {site}"
        )));
    }
    for event in events {
        if event.tap.slot != site {
            return Err(Error::SiteMismatch(format!(
                "event at {} does not come from {site}",
                event.tap
            )));
        }
    }
    Ok(InterventionPlan {
        target: PlanTarget::Tap {
            slot: site,
            layer: None,
        },
        indices: PlanIndices::DetectedMas,
        policy,
        mean_scope: MeanScope::WholeTensor,
        exclude_selected_from_mean: false,
        seed: None,
    })
}

/// Builds a plan that replaces entries of one normalization's gamma vector.
///
/// Mean replacement writes the mean of the full gamma vector. Indices must be
/// unique and within `gamma_len`.
pub fn plan_gamma_edit(
    layer: usize,
    block_kind: BlockKind,
    indices: &[usize],
    policy: Policy,
    gamma_len: usize,
) -> Result<InterventionPlan> {
    check_unique_channels(indices)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= gamma_len) {
        return Err(Error::IndexOutOfRange(format!(
            "gamma index {bad} with length {gamma_len}"
        )));
    }
    let mut channels = indices.to_vec();
    channels.sort_unstable();
    Ok(InterventionPlan {
        target: PlanTarget::Gamma { layer, block_kind },
        indices: PlanIndices::Channels { channels },
        policy,
        mean_scope: MeanScope::WholeTensor,
        exclude_selected_from_mean: false,
        seed: None,
    })
}

/// Builds a plan that ablates rows of a weight matrix.
///
/// With [`MeanScope::PerChannel`] each selected row is replaced by its own
/// mean; with [`MeanScope::WholeTensor`] by the matrix mean. Row indices must
/// be unique and within `row_count`.
pub fn plan_weight_ablation(
    weight_name: &str,
    indices: &[usize],
    policy: Policy,
    mean_scope: MeanScope,
    row_count: usize,
) -> Result<InterventionPlan> {
    check_unique_channels(indices)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= row_count) {
        return Err(Error::IndexOutOfRange(format!(
            "row {bad} with {row_count} rows"
        )));
    }
    let mut channels = indices.to_vec();
    channels.sort_unstable();
    Ok(InterventionPlan {
        target: PlanTarget::Weight {
            name: weight_name.to_string(),
        },
        indices: PlanIndices::Channels { channels },
        policy,
        mean_scope,
        exclude_selected_from_mean: false,
        seed: None,
    })
}

/// Draws `count` distinct channels uniformly from `0..total`, skipping the
/// excluded set. The draw is a pure function of the seed; the result is
/// returned sorted.
pub fn sample_random_channels(
    total: usize,
    count: usize,
    seed: u64,
    exclude: &BTreeSet<usize>,
) -> Result<Vec<usize>> {
    let pool: Vec<usize> = (0..total).filter(|c| !exclude.contains(c)).collect();
    if count > pool.len() {
        return Err(Error::InfeasibleSample {
            total,
            count,
            excluded: exclude.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = pool;
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut picked: Vec<usize> = pool[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Applies a tap-level plan to the tensor flowing through its target.
///
/// Fixed positions are validated against the tensor's shape; detected indices
/// re-run massive-activation detection on the tensor as it flows. Replacement
/// means are computed before any entry is overwritten, over the tensor as it
/// arrived (or excluding the selected entries when the plan says so).
pub fn apply_tap_edit(
    values: &mut Array2<f32>,
    plan: &InterventionPlan,
    ma_criteria: MaCriteria,
) -> Result<()> {
    let positions: Vec<(usize, usize)> = match &plan.indices {
        PlanIndices::Positions { positions } => {
            for &(t, c) in positions {
                if t >= values.nrows() || c >= values.ncols() {
                    return Err(Error::IndexOutOfRange(format!(
                        "position ({t}, {c}) in a {}x{} tensor",
                        values.nrows(),
                        values.ncols()
                    )));
                }
            }
            positions.clone()
        }
        PlanIndices::DetectedMas => detect_ma_positions(values, ma_criteria),
        PlanIndices::Channels { .. } => {
            return Err(Error::InvalidConfig(
                "tap edits take positions or detected indices".to_string(),
            ));
        }
    };
    if positions.is_empty() {
        return Ok(());
    }

    match plan.policy {
        Policy::ReplaceWithZero => {
            for &(t, c) in &positions {
                values[(t, c)] = 0.0;
            }
        }
        Policy::ReplaceWithMean => match plan.mean_scope {
            MeanScope::WholeTensor => {
                let mean = if plan.exclude_selected_from_mean {
                    let selected: BTreeSet<(usize, usize)> = positions.iter().copied().collect();
                    let mut sum = 0.0f64;
                    let mut n = 0usize;
                    for ((t, c), v) in values.indexed_iter() {
                        if !selected.contains(&(t, c)) {
                            sum += *v as f64;
                            n += 1;
                        }
                    }
                    if n == 0 {
                        0.0
                    } else {
                        (sum / n as f64) as f32
                    }
                } else {
                    (values.iter().map(|v| *v as f64).sum::<f64>() / values.len() as f64) as f32
                };
                for &(t, c) in &positions {
                    values[(t, c)] = mean;
                }
            }
            MeanScope::PerChannel => {
                let selected: BTreeSet<(usize, usize)> = positions.iter().copied().collect();
                let tokens = values.nrows();
                let mut channel_means = vec![0.0f32; values.ncols()];
                for c in 0..values.ncols() {
                    let mut sum = 0.0f64;
                    let mut n = 0usize;
                    for t in 0..tokens {
                        if plan.exclude_selected_from_mean && selected.contains(&(t, c)) {
                            continue;
                        }
                        sum += values[(t, c)] as f64;
                        n += 1;
                    }
                    channel_means[c] = if n == 0 { 0.0 } else { (sum / n as f64) as f32 };
                }
                for &(t, c) in &positions {
                    values[(t, c)] = channel_means[c];
                }
            }
        },
    }
    Ok(())
}

/// Replaces the listed gamma entries. Mean replacement writes the mean of the
/// whole gamma vector, taken before any entry changes.
pub fn apply_gamma_edit(gamma: &mut Array1<f32>, indices: &[usize], policy: Policy) -> Result<()> {
    for &i in indices {
        if i >= gamma.len() {
            return Err(Error::IndexOutOfRange(format!(
                "gamma index {i} with length {}",
                gamma.len()
            )));
        }
    }
    let replacement = match policy {
        Policy::ReplaceWithZero => 0.0,
        Policy::ReplaceWithMean => {
            (gamma.iter().map(|v| *v as f64).sum::<f64>() / gamma.len() as f64) as f32
        }
    };
    for &i in indices {
        gamma[i] = replacement;
    }
    Ok(())
}

/// Replaces whole rows of a weight matrix. Per-channel mean scope writes each
/// selected row's own mean; whole-tensor scope writes the matrix mean. All
/// means are taken before any row changes.
pub fn apply_weight_rows_edit(
    weight: &mut Array2<f32>,
    rows: &[usize],
    policy: Policy,
    mean_scope: MeanScope,
) -> Result<()> {
    for &r in rows {
        if r >= weight.nrows() {
            return Err(Error::IndexOutOfRange(format!(
                "row {r} with {} rows",
                weight.nrows()
            )));
        }
    }
    let cols = weight.ncols();
    match policy {
        Policy::ReplaceWithZero => {
            for &r in rows {
                for c in 0..cols {
                    weight[(r, c)] = 0.0;
                }
            }
        }
        Policy::ReplaceWithMean => match mean_scope {
            MeanScope::WholeTensor => {
                let mean =
                    (weight.iter().map(|v| *v as f64).sum::<f64>() / weight.len() as f64) as f32;
                for &r in rows {
                    for c in 0..cols {
                        weight[(r, c)] = mean;
                    }
                }
            }
            MeanScope::PerChannel => {
                let row_means: Vec<f32> = rows
                    .iter()
                    .map(|&r| {
                        (weight.row(r).iter().map(|v| *v as f64).sum::<f64>() / cols as f64) as f32
                    })
                    .collect();
                for (&r, &mean) in rows.iter().zip(&row_means) {
                    for c in 0..cols {
                        weight[(r, c)] = mean;
                    }
                }
            }
        },
    }
    Ok(())
}

/// Builds the matched random baseline for a row-ablation plan: an equal-sized
/// draw disjoint from the flagged rows, same policy and scope, with the seed
/// recorded in the plan.
pub fn plan_matched_random_ablation(
    weight_name: &str,
    flagged: &[usize],
    policy: Policy,
    mean_scope: MeanScope,
    row_count: usize,
    seed: u64,
) -> Result<InterventionPlan> {
    let exclude: BTreeSet<usize> = flagged.iter().copied().collect();
    let channels = sample_random_channels(row_count, flagged.len(), seed, &exclude)?;
    let mut plan = plan_weight_ablation(weight_name, &channels, policy, mean_scope, row_count)?;
    plan.seed = Some(seed);
    Ok(plan)
}
