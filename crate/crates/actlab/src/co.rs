//! Channel-wise outlier detection and its weight-side counterparts.
//!
//! A channel-wise outlier (CO) is a whole channel whose per-token values sit
//! consistently far from the tensor mean while varying little across tokens.
//! The module also splits a normalization layer into its standardization and
//! rescale stages to localize where outlier channels appear, finds weight rows
//! that manufacture outlier output channels from unremarkable inputs, and
//! z-scores weight matrices channel-wise.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ma::{detect_ma_positions, MaCriteria};
use crate::tap::{ActivationSnapshot, TapPoint};

/// Thresholds defining an outlier channel.
///
/// Channel `j` is flagged when `|mean_j - tensor_mean| > deviation_factor *
/// tensor_std` and `std_j < std_ceiling`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoCriteria {
    pub deviation_factor: f32,
    pub std_ceiling: f32,
}

impl Default for CoCriteria {
    fn default() -> Self {
        CoCriteria {
            deviation_factor: 4.0,
            std_ceiling: 1.0 / 3.0,
        }
    }
}

/// Side of the tensor mean an outlier channel sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Upper,
    Lower,
}

/// Channels flagged as outliers in one snapshot, with the statistics that
/// produced the decision.
///
/// `per_channel_mean` and `per_channel_std` cover every channel of the tensor
/// (not only the flagged ones) so scatter reports can plot the full picture.
/// `polarity[i]` corresponds to `channel_indices[i]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutlierChannelSet {
    pub tap: TapPoint,
    pub channel_indices: Vec<usize>,
    pub polarity: Vec<Polarity>,
    pub per_channel_mean: Vec<f32>,
    pub per_channel_std: Vec<f32>,
    pub tensor_mean: f32,
    pub tensor_std: f32,
    pub criteria: CoCriteria,
}

impl OutlierChannelSet {
    pub fn len(&self) -> usize {
        self.channel_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel_indices.is_empty()
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.channel_indices.binary_search(&channel).is_ok()
    }

    /// True when every flagged channel here is also flagged in `other`.
    pub fn is_subset_of(&self, other: &OutlierChannelSet) -> bool {
        self.channel_indices.iter().all(|c| other.contains(*c))
    }
}

fn tensor_mean_std(values: &Array2<f32>) -> (f32, f32) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|v| {
            let d = *v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean as f32, var.sqrt() as f32)
}

fn channel_stats(values: &Array2<f32>) -> (Vec<f32>, Vec<f32>) {
    let tokens = values.nrows() as f64;
    let mut means = Vec::with_capacity(values.ncols());
    let mut stds = Vec::with_capacity(values.ncols());
    for col in values.axis_iter(Axis(1)) {
        let mean = col.iter().map(|v| *v as f64).sum::<f64>() / tokens;
        let var = col
            .iter()
            .map(|v| {
                let d = *v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / tokens;
        means.push(mean as f32);
        stds.push(var.sqrt() as f32);
    }
    (means, stds)
}

/// Returns a copy of the snapshot values with massive-activation entries
/// replaced by the tensor mean (the mean is taken before replacement).
pub fn strip_mas(values: &Array2<f32>, ma_criteria: MaCriteria) -> Array2<f32> {
    let positions = detect_ma_positions(values, ma_criteria);
    if positions.is_empty() {
        return values.clone();
    }
    let (mean, _) = tensor_mean_std(values);
    let mut out = values.clone();
    for (t, c) in positions {
        out[(t, c)] = mean;
    }
    out
}

/// Flags outlier channels in a snapshot.
///
/// With `strip_mas_first`, massive activations are first replaced by the
/// tensor mean so a handful of extreme scalars cannot mask channel-level
/// structure. Detection is two-sided; each flagged channel carries its
/// polarity. A single-token snapshot is rejected because per-channel std is
/// undefined there.
pub fn detect_outlier_channels(
    snapshot: &ActivationSnapshot,
    criteria: CoCriteria,
    strip_mas_first: bool,
    ma_criteria: MaCriteria,
) -> Result<OutlierChannelSet> {
    if snapshot.token_count() < 2 {
        return Err(Error::SingleToken);
    }
    let values = if strip_mas_first {
        strip_mas(&snapshot.values, ma_criteria)
    } else {
        snapshot.values.clone()
    };
    Ok(detect_outlier_channels_raw(
        snapshot.tap, &values, criteria,
    ))
}

fn detect_outlier_channels_raw(
    tap: TapPoint,
    values: &Array2<f32>,
    criteria: CoCriteria,
) -> OutlierChannelSet {
    let (tensor_mean, tensor_std) = tensor_mean_std(values);
    let (means, stds) = channel_stats(values);
    let band = criteria.deviation_factor * tensor_std;
    let mut channel_indices = Vec::new();
    let mut polarity = Vec::new();
    for j in 0..values.ncols() {
        if stds[j] >= criteria.std_ceiling {
            continue;
        }
        if means[j] > tensor_mean + band {
            channel_indices.push(j);
            polarity.push(Polarity::Upper);
        } else if means[j] < tensor_mean - band {
            channel_indices.push(j);
            polarity.push(Polarity::Lower);
        }
    }
    OutlierChannelSet {
        tap,
        channel_indices,
        polarity,
        per_channel_mean: means,
        per_channel_std: stds,
        tensor_mean,
        tensor_std,
        criteria,
    }
}

/// Which normalization the decomposition models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Per-token mean subtraction and std division, then `gamma * x + beta`.
    LayerNorm,
    /// Per-token root-mean-square division, then `gamma * x`.
    RmsNorm,
}

/// Output of [`decompose_normalization`]: outlier sets after the
/// standardization stage and after the rescale stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormDecomposition {
    pub standardized: OutlierChannelSet,
    pub rescaled: OutlierChannelSet,
}

/// Splits a normalization into standardization and rescale stages and runs
/// outlier-channel detection on each intermediate.
///
/// `beta_shift` is required for layer normalization and must be absent for
/// RMS normalization. A token whose standardization denominator is exactly
/// zero is rejected.
pub fn decompose_normalization(
    input: &ActivationSnapshot,
    gamma: &Array1<f32>,
    beta_shift: Option<&Array1<f32>>,
    norm_kind: NormKind,
    criteria: CoCriteria,
) -> Result<NormDecomposition> {
    if input.token_count() < 2 {
        return Err(Error::SingleToken);
    }
    let channels = input.channel_count();
    if gamma.len() != channels {
        return Err(Error::GammaLength {
            expected: channels,
            got: gamma.len(),
        });
    }
    let beta = match (norm_kind, beta_shift) {
        (NormKind::LayerNorm, Some(b)) => {
            if b.len() != channels {
                return Err(Error::GammaLength {
                    expected: channels,
                    got: b.len(),
                });
            }
            Some(b)
        }
        (NormKind::LayerNorm, None) => return Err(Error::BetaRequired),
        (NormKind::RmsNorm, Some(_)) => return Err(Error::BetaUnexpected),
        (NormKind::RmsNorm, None) => None,
    };

    let mut standardized = Array2::<f32>::zeros(input.values.raw_dim());
    for (t, row) in input.values.outer_iter().enumerate() {
        match norm_kind {
            NormKind::LayerNorm => {
                let mean = row.iter().map(|v| *v as f64).sum::<f64>() / channels as f64;
                let var = row
                    .iter()
                    .map(|v| {
                        let d = *v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / channels as f64;
                let std = var.sqrt();
                if std == 0.0 {
                    return Err(Error::DegenerateToken(t));
                }
                for (c, v) in row.iter().enumerate() {
                    standardized[(t, c)] = ((*v as f64 - mean) / std) as f32;
                }
            }
            NormKind::RmsNorm => {
                let ms = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>()
                    / channels as f64;
                let rms = ms.sqrt();
                if rms == 0.0 {
                    return Err(Error::DegenerateToken(t));
                }
                for (c, v) in row.iter().enumerate() {
                    standardized[(t, c)] = (*v as f64 / rms) as f32;
                }
            }
        }
    }

    let mut rescaled = standardized.clone();
    for mut row in rescaled.outer_iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v *= gamma[c];
            if let Some(b) = beta {
                *v += b[c];
            }
        }
    }

    Ok(NormDecomposition {
        standardized: detect_outlier_channels_raw(input.tap, &standardized, criteria),
        rescaled: detect_outlier_channels_raw(input.tap, &rescaled, criteria),
    })
}

/// Weight rows whose output channels are outliers and remain outliers after
/// the input's own outlier channels are neutralized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OtcSet {
    pub weight_name: String,
    pub row_indices: Vec<usize>,
    /// Bias recovered per output channel as the token-mean of
    /// `output - input * W^T`.
    pub recovered_bias: Vec<f32>,
    /// Flagged rows as a fraction of all rows.
    pub fraction: f64,
    /// Output outlier channels that did not survive the attribution recheck.
    pub rejected_rows: Vec<usize>,
}

/// Identifies outlier-transferring rows of `weight`.
///
/// `input` and `output` are snapshots of the tensors immediately before and
/// after the projection (`output = input * W^T + b`). A row is kept when its
/// output channel is an outlier and stays one after the input's outlier
/// channels are replaced by the input tensor mean, which rules out rows that
/// merely pass through an already-outlying input channel.
pub fn identify_otcs(
    weight_name: &str,
    weight: &Array2<f32>,
    input: &ActivationSnapshot,
    output: &ActivationSnapshot,
    criteria: CoCriteria,
    ma_criteria: MaCriteria,
) -> Result<OtcSet> {
    let in_ch = input.channel_count();
    let out_ch = output.channel_count();
    if weight.ncols() != in_ch || weight.nrows() != out_ch {
        return Err(Error::ShapeMismatch {
            context: format!("weight {weight_name} against activation pair"),
            expected: format!("{out_ch}x{in_ch}"),
            got: format!("{}x{}", weight.nrows(), weight.ncols()),
        });
    }
    if input.token_count() != output.token_count() {
        return Err(Error::ShapeMismatch {
            context: "token counts of input and output snapshots".to_string(),
            expected: input.token_count().to_string(),
            got: output.token_count().to_string(),
        });
    }

    let out_set = detect_outlier_channels(output, criteria, false, ma_criteria)?;
    let in_set = detect_outlier_channels(input, criteria, false, ma_criteria)?;

    // Recover the bias so the recheck can reproject faithfully.
    let projected = input.values.dot(&weight.t());
    let residual = &output.values - &projected;
    let tokens = residual.nrows() as f64;
    let recovered_bias: Vec<f32> = residual
        .axis_iter(Axis(1))
        .map(|col| (col.iter().map(|v| *v as f64).sum::<f64>() / tokens) as f32)
        .collect();

    // Neutralize the input's outlier channels and reproject.
    let (input_mean, _) = tensor_mean_std(&input.values);
    let mut neutral = input.values.clone();
    for &c in &in_set.channel_indices {
        for t in 0..neutral.nrows() {
            neutral[(t, c)] = input_mean;
        }
    }
    let mut reprojected = neutral.dot(&weight.t());
    for mut row in reprojected.outer_iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v += recovered_bias[c];
        }
    }
    let recheck = detect_outlier_channels_raw(output.tap, &reprojected, criteria);

    let mut row_indices = Vec::new();
    let mut rejected_rows = Vec::new();
    for &c in &out_set.channel_indices {
        if recheck.contains(c) {
            row_indices.push(c);
        } else {
            rejected_rows.push(c);
        }
    }
    let fraction = row_indices.len() as f64 / out_ch as f64;
    Ok(OtcSet {
        weight_name: weight_name.to_string(),
        row_indices,
        recovered_bias,
        fraction,
        rejected_rows,
    })
}

/// Channel statistic used by [`weight_channel_statistics_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightChannelStat {
    /// Mean of absolute values along the row.
    MeanAbs,
    /// Euclidean norm of the row.
    L2Norm,
}

/// Flags weight rows whose summary statistic deviates from the cross-row mean
/// by more than `sd_threshold` standard deviations, two-sided.
///
/// A uniform matrix (zero spread) flags nothing. A single-row matrix is
/// rejected since cross-row statistics are undefined.
pub fn weight_channel_statistics(weight: &Array2<f32>, sd_threshold: f32) -> Result<Vec<usize>> {
    weight_channel_statistics_with(weight, sd_threshold, WeightChannelStat::MeanAbs)
}

pub fn weight_channel_statistics_with(
    weight: &Array2<f32>,
    sd_threshold: f32,
    stat: WeightChannelStat,
) -> Result<Vec<usize>> {
    let rows = weight.nrows();
    if rows < 2 {
        return Err(Error::SingleChannel);
    }
    let cols = weight.ncols() as f64;
    let stats: Vec<f64> = weight
        .outer_iter()
        .map(|row| match stat {
            WeightChannelStat::MeanAbs => {
                row.iter().map(|v| v.abs() as f64).sum::<f64>() / cols
            }
            WeightChannelStat::L2Norm => row
                .iter()
                .map(|v| (*v as f64) * (*v as f64))
                .sum::<f64>()
                .sqrt(),
        })
        .collect();
    let mean = stats.iter().sum::<f64>() / rows as f64;
    let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / rows as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(Vec::new());
    }
    let flagged = stats
        .iter()
        .enumerate()
        .filter(|(_, s)| (**s - mean).abs() > sd_threshold as f64 * sd)
        .map(|(i, _)| i)
        .collect();
    Ok(flagged)
}
