//! Model builders used by the test suite.
//!
//! Two families live here. The `toy_*` builders produce small randomly
//! initialized models for exercising the forward contract, serialization,
//! and the evaluation loop. The [`bench`] module builds a larger
//! hand-constructed model whose activation anomalies are placed on purpose,
//! which gives the detection and intervention code something with known
//! answers to chew on.

pub mod bench;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::co::NormKind;
use crate::model::{
    AttentionParams, FfnKind, FfnParams, LayerParams, Model, ModelParts, NormParams,
};

const TOY_VOCAB: usize = 61;
const TOY_HIDDEN: usize = 32;
const TOY_HEADS: usize = 4;
const TOY_FFN: usize = 48;
const TOY_LAYERS: usize = 3;
const TOY_MAX_SEQ: usize = 64;

fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, amp: f32) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-amp..amp))
}

fn uniform1(rng: &mut ChaCha8Rng, len: usize, amp: f32) -> Array1<f32> {
    Array1::from_shape_fn(len, |_| rng.gen_range(-amp..amp))
}

fn toy_norm(rng: &mut ChaCha8Rng, kind: NormKind) -> NormParams {
    let gamma = Array1::from_shape_fn(TOY_HIDDEN, |_| 1.0 + rng.gen_range(-0.05..0.05f32));
    let beta = match kind {
        NormKind::LayerNorm => Some(uniform1(rng, TOY_HIDDEN, 0.02)),
        NormKind::RmsNorm => None,
    };
    NormParams { gamma, beta }
}

fn build_toy(seed: u64, norm_kind: NormKind, ffn_kind: FfnKind) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_amp = 0.5 / (TOY_HIDDEN as f32).sqrt();

    let mut layers = Vec::with_capacity(TOY_LAYERS);
    for _ in 0..TOY_LAYERS {
        let attn = AttentionParams {
            w_q: uniform2(&mut rng, TOY_HIDDEN, TOY_HIDDEN, w_amp),
            b_q: uniform1(&mut rng, TOY_HIDDEN, 0.01),
            w_k: uniform2(&mut rng, TOY_HIDDEN, TOY_HIDDEN, w_amp),
            b_k: uniform1(&mut rng, TOY_HIDDEN, 0.01),
            w_v: uniform2(&mut rng, TOY_HIDDEN, TOY_HIDDEN, w_amp),
            b_v: uniform1(&mut rng, TOY_HIDDEN, 0.01),
            w_o: uniform2(&mut rng, TOY_HIDDEN, TOY_HIDDEN, w_amp),
            b_o: uniform1(&mut rng, TOY_HIDDEN, 0.01),
        };
        let gated = ffn_kind == FfnKind::GatedMlp;
        let ffn = FfnParams {
            w_in: uniform2(&mut rng, TOY_FFN, TOY_HIDDEN, w_amp),
            b_in: uniform1(&mut rng, TOY_FFN, 0.01),
            w_up: gated.then(|| uniform2(&mut rng, TOY_FFN, TOY_HIDDEN, w_amp)),
            b_up: gated.then(|| uniform1(&mut rng, TOY_FFN, 0.01)),
            w_out: uniform2(&mut rng, TOY_HIDDEN, TOY_FFN, w_amp),
            b_out: uniform1(&mut rng, TOY_HIDDEN, 0.01),
        };
        layers.push(LayerParams {
            ln1: toy_norm(&mut rng, norm_kind),
            attn,
            ln2: toy_norm(&mut rng, norm_kind),
            ffn,
        });
    }

    let family = match ffn_kind {
        FfnKind::StandardMlp => "standard",
        FfnKind::GatedMlp => "gated",
    };
    Model::from_parts(ModelParts {
        model_id: format!("toy-{family}-{seed}"),
        norm_kind,
        ffn_kind,
        head_count: TOY_HEADS,
        max_sequence_length: TOY_MAX_SEQ,
        wte: uniform2(&mut rng, TOY_VOCAB, TOY_HIDDEN, 0.5),
        wpe: uniform2(&mut rng, TOY_MAX_SEQ, TOY_HIDDEN, 0.1),
        layers,
        ln_f: toy_norm(&mut rng, norm_kind),
        w_head: uniform2(&mut rng, TOY_VOCAB, TOY_HIDDEN, 0.1),
        b_head: uniform1(&mut rng, TOY_VOCAB, 0.01),
    })
}

/// Small random model in the layer-norm, two-projection MLP family.
pub fn toy_standard(seed: u64) -> Model {
    build_toy(seed, NormKind::LayerNorm, FfnKind::StandardMlp)
}

/// Small random model in the rms-norm, gated three-projection MLP family.
pub fn toy_gated(seed: u64) -> Model {
    build_toy(seed, NormKind::RmsNorm, FfnKind::GatedMlp)
}

/// Toy model whose head ignores its input entirely, so every position
/// predicts the uniform distribution and perplexity equals the vocabulary
/// size exactly.
pub fn toy_uniform(seed: u64) -> Model {
    let mut model = build_toy(seed, NormKind::LayerNorm, FfnKind::StandardMlp);
    model.model_id = format!("toy-uniform-{seed}");
    model.w_head.fill(0.0);
    model.b_head.fill(0.0);
    model
}
