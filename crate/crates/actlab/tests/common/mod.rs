//! Reference implementations and tiny fixtures shared by the integration
//! tests.
//!
//! The oracles here recompute detector outputs with plain nested loops and
//! deliberately share no code with the library, so a bug in one side cannot
//! hide in the other. They follow the same published definitions: population
//! statistics, f64 accumulation with f32 comparison, strict or inclusive
//! bounds exactly as documented on the library functions.

#![allow(dead_code)]

use actlab::co::{NormKind, Polarity};
use actlab::model::{
    AttentionParams, FfnKind, FfnParams, LayerParams, Model, ModelParts, NormParams,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Median of absolute values, selected from a descending sort. Even counts
/// average the two middle order statistics.
pub fn oracle_abs_median(values: &Array2<f32>) -> f32 {
    let mut mags = Vec::with_capacity(values.nrows() * values.ncols());
    for t in 0..values.nrows() {
        for c in 0..values.ncols() {
            mags.push(values[(t, c)].abs());
        }
    }
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = mags.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    }
}

/// Positions whose magnitude clears the absolute floor strictly and reaches
/// the median multiple inclusively, in row-major order.
pub fn oracle_ma_positions(
    values: &Array2<f32>,
    abs_floor: f32,
    median_ratio: f32,
) -> Vec<(usize, usize)> {
    let floor_from_median = median_ratio * oracle_abs_median(values);
    let mut hits = Vec::new();
    for t in 0..values.nrows() {
        for c in 0..values.ncols() {
            let mag = values[(t, c)].abs();
            if mag > abs_floor && mag >= floor_from_median {
                hits.push((t, c));
            }
        }
    }
    hits
}

/// Channel flags recomputed entry by entry: a channel is an outlier when its
/// mean sits strictly outside the band of `deviation_factor` tensor standard
/// deviations around the tensor mean and its own standard deviation is
/// strictly below the ceiling.
pub fn oracle_outlier_channels(
    values: &Array2<f32>,
    deviation_factor: f32,
    std_ceiling: f32,
) -> (Vec<usize>, Vec<Polarity>) {
    let rows = values.nrows();
    let cols = values.ncols();
    let count = (rows * cols) as f64;

    let mut sum = 0.0f64;
    for t in 0..rows {
        for c in 0..cols {
            sum += values[(t, c)] as f64;
        }
    }
    let tensor_mean_f64 = sum / count;
    let mut var_sum = 0.0f64;
    for t in 0..rows {
        for c in 0..cols {
            let d = values[(t, c)] as f64 - tensor_mean_f64;
            var_sum += d * d;
        }
    }
    let tensor_mean = tensor_mean_f64 as f32;
    let tensor_std = (var_sum / count).sqrt() as f32;
    let band = deviation_factor * tensor_std;

    let mut flagged = Vec::new();
    let mut polarity = Vec::new();
    for c in 0..cols {
        let mut col_sum = 0.0f64;
        for t in 0..rows {
            col_sum += values[(t, c)] as f64;
        }
        let mean_f64 = col_sum / rows as f64;
        let mut col_var = 0.0f64;
        for t in 0..rows {
            let d = values[(t, c)] as f64 - mean_f64;
            col_var += d * d;
        }
        let mean = mean_f64 as f32;
        let std = (col_var / rows as f64).sqrt() as f32;
        if std >= std_ceiling {
            continue;
        }
        if mean > tensor_mean + band {
            flagged.push(c);
            polarity.push(Polarity::Upper);
        } else if mean < tensor_mean - band {
            flagged.push(c);
            polarity.push(Polarity::Lower);
        }
    }
    (flagged, polarity)
}

/// Row flags recomputed from scratch: mean absolute value per row, then a
/// strict two-sided z-score test across rows. `None` mirrors the rejection of
/// single-row matrices; zero spread flags nothing.
pub fn oracle_weight_rows(weight: &Array2<f32>, sd_threshold: f32) -> Option<Vec<usize>> {
    let rows = weight.nrows();
    if rows < 2 {
        return None;
    }
    let cols = weight.ncols();
    let mut stats = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut sum = 0.0f64;
        for c in 0..cols {
            sum += weight[(r, c)].abs() as f64;
        }
        stats.push(sum / cols as f64);
    }
    let mean = stats.iter().sum::<f64>() / rows as f64;
    let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / rows as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Some(Vec::new());
    }
    let mut flagged = Vec::new();
    for (r, s) in stats.iter().enumerate() {
        if (s - mean).abs() > sd_threshold as f64 * sd {
            flagged.push(r);
        }
    }
    Some(flagged)
}

/// Shape bundle for the tiny test models.
pub struct TinyDims {
    pub vocab: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq: usize,
}

impl Default for TinyDims {
    fn default() -> TinyDims {
        TinyDims {
            vocab: 128,
            hidden: 8,
            ffn: 12,
            layers: 2,
            heads: 2,
            max_seq: 32,
        }
    }
}

fn zero_layer(dims: &TinyDims, norm: impl Fn() -> NormParams) -> LayerParams {
    let h = dims.hidden;
    LayerParams {
        ln1: norm(),
        attn: AttentionParams {
            w_q: Array2::zeros((h, h)),
            b_q: Array1::zeros(h),
            w_k: Array2::zeros((h, h)),
            b_k: Array1::zeros(h),
            w_v: Array2::zeros((h, h)),
            b_v: Array1::zeros(h),
            w_o: Array2::zeros((h, h)),
            b_o: Array1::zeros(h),
        },
        ln2: norm(),
        ffn: FfnParams {
            w_in: Array2::zeros((dims.ffn, h)),
            b_in: Array1::zeros(dims.ffn),
            w_up: None,
            b_up: None,
            w_out: Array2::zeros((h, dims.ffn)),
            b_out: Array1::zeros(h),
        },
    }
}

/// Model whose every weight is zero, so the head bias alone fixes the output
/// distribution at every position. Gives perplexity a closed form.
pub fn logit_bias_model(dims: &TinyDims, b_head: Array1<f32>) -> Model {
    assert_eq!(b_head.len(), dims.vocab);
    let norm = || NormParams {
        gamma: Array1::ones(dims.hidden),
        beta: None,
    };
    Model::from_parts(ModelParts {
        model_id: "tiny-bias".to_string(),
        norm_kind: NormKind::RmsNorm,
        ffn_kind: FfnKind::StandardMlp,
        head_count: dims.heads,
        max_sequence_length: dims.max_seq,
        wte: Array2::zeros((dims.vocab, dims.hidden)),
        wpe: Array2::zeros((dims.max_seq, dims.hidden)),
        layers: (0..dims.layers).map(|_| zero_layer(dims, norm)).collect(),
        ln_f: norm(),
        w_head: Array2::zeros((dims.vocab, dims.hidden)),
        b_head,
    })
}

/// Small dense model with reproducible pseudo-random parameters. Even seeds
/// build an RMS-norm model, odd seeds a layer-norm model with shifts, so both
/// normalization paths get exercised.
pub fn tiny_random_model(seed: u64) -> Model {
    let dims = TinyDims::default();
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let with_beta = seed % 2 == 1;
    let h = dims.hidden;
    let wte = rand_mat(rng, dims.vocab, h, 0.5);
    let wpe = rand_mat(rng, dims.max_seq, h, 0.1);
    let layers: Vec<LayerParams> = (0..dims.layers)
        .map(|_| LayerParams {
            ln1: random_norm(rng, h, with_beta),
            attn: AttentionParams {
                w_q: rand_mat(rng, h, h, 0.4),
                b_q: Array1::zeros(h),
                w_k: rand_mat(rng, h, h, 0.4),
                b_k: Array1::zeros(h),
                w_v: rand_mat(rng, h, h, 0.4),
                b_v: Array1::zeros(h),
                w_o: rand_mat(rng, h, h, 0.4),
                b_o: Array1::zeros(h),
            },
            ln2: random_norm(rng, h, with_beta),
            ffn: FfnParams {
                w_in: rand_mat(rng, dims.ffn, h, 0.4),
                b_in: Array1::zeros(dims.ffn),
                w_up: None,
                b_up: None,
                w_out: rand_mat(rng, h, dims.ffn, 0.4),
                b_out: Array1::zeros(h),
            },
        })
        .collect();
    let ln_f = random_norm(rng, h, with_beta);
    let w_head = rand_mat(rng, dims.vocab, h, 0.3);
    Model::from_parts(ModelParts {
        model_id: format!("tiny-{seed}"),
        norm_kind: if seed % 2 == 1 {
            NormKind::LayerNorm
        } else {
            NormKind::RmsNorm
        },
        ffn_kind: FfnKind::StandardMlp,
        head_count: dims.heads,
        max_sequence_length: dims.max_seq,
        wte,
        wpe,
        layers,
        ln_f,
        w_head,
        b_head: Array1::zeros(dims.vocab),
    })
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

fn random_norm(rng: &mut ChaCha8Rng, len: usize, with_beta: bool) -> NormParams {
    let gamma = Array1::from_shape_fn(len, |_| rng.gen_range(0.5f32..1.5));
    let beta = with_beta.then(|| Array1::from_shape_fn(len, |_| rng.gen_range(-0.1f32..0.1)));
    NormParams { gamma, beta }
}
