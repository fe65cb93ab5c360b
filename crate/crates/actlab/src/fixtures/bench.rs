//! A hand-built six-layer decoder whose activation anomalies are placed on
//! purpose, so detection, classification, and intervention code can be tested
//! against known answers.
//!
//! The hidden state reserves named channels:
//!
//! * token channels `0..128` carry a one-hot embedding of the current token;
//! * `marker` is set by the position table at position zero only, and is what
//!   the attention keys and the first-layer generators read to find that
//!   position;
//! * `spike` carries a large negative value written by the first FFN at
//!   position zero, flipped to positive sign by a layer-3 row, topped up at
//!   layer 4, and cancelled again before the head;
//! * `relay` is a bookkeeping channel with an amplified norm gain; a seed
//!   value written at layer 0 lets one row per later layer re-fire;
//! * `shelf` is a flat channel near 250 built by ten bias rows in the first
//!   FFN, far above the event floor at every position;
//! * `mesa` channels sit near 87, deliberately under the event floor;
//! * `probe` and `detect` are read by the head and track whether the
//!   first-layer generators and the layer-1 detector were left intact;
//! * `ballast` is present in every embedding and cancelled by the attention
//!   output projection; the head treats its final value as a calibration
//!   reference, so anything that breaks the attention sink decalibrates it;
//! * `source` channels carry a constant lifted by the norm shift and feed the
//!   attention rows; `spare` channels are dead weight.
//!
//! Only layer 0 has live attention: its keys mark position zero so that every
//! query parks most of its weight there. Later layers route everything
//! through the residual stream. The construction is calibrated by running
//! measurement passes over the partially built model, so the numbers adapt to
//! the arithmetic of the forward pass rather than being hard-coded.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::co::NormKind;
use crate::intervene::{
    plan_tma_removal, plan_weight_ablation, InterventionPlan, MeanScope, Policy,
};
use crate::model::{
    AttentionParams, FfnKind, FfnParams, LayerParams, Model, ModelParts, NormParams,
};
use crate::tap::{BlockKind, Slot, TapPoint};

pub const VOCAB: usize = 128;
pub const HIDDEN: usize = 192;
pub const HEADS: usize = 4;
pub const FFN_DIM: usize = 384;
pub const LAYERS: usize = 6;
pub const MAX_SEQ: usize = 512;
/// Sequence length the shipped corpora and the calibration are sized for.
pub const EVAL_SEQ: usize = 256;

pub const CH_MARKER: usize = 128;
pub const CH_SPIKE: usize = 129;
pub const CH_RELAY: usize = 130;
pub const CH_SHELF: usize = 131;
pub const CH_PROBE: usize = 132;
pub const CH_DETECT: usize = 133;
pub const CH_BALLAST: usize = 134;
pub const CH_MESA: usize = 135;
pub const MESA_COUNT: usize = 5;
pub const CH_SOURCE: usize = 140;
pub const SOURCE_COUNT: usize = 40;
pub const CH_SPARE: usize = 180;
pub const SPARE_COUNT: usize = 12;

// Attention rows and value dims, all within head zero (dims 0..48).
pub const QK_FUNC: [usize; 4] = [0, 1, 2, 3];
pub const Q_PLANT: [usize; 2] = [16, 17];
pub const K_PLANT: [usize; 2] = [20, 21];
pub const QK_TRIM: [usize; 2] = [28, 29];
pub const V_FUNC: [usize; 4] = [8, 9, 10, 11];
pub const V_PLANT: [usize; 2] = [24, 25];
pub const V_TRIM: [usize; 2] = [32, 33];
pub const V_DECOY: [usize; 2] = [36, 37];

// First-layer FFN rows.
const R_GEN: usize = 0;
const R_SEED: usize = 1;
const R_PROBE: usize = 2;
const R_SHELF: usize = 3;
const SHELF_ROWS: usize = 10;
const R_MESA: usize = R_SHELF + SHELF_ROWS;
const L0_MACHINERY: usize = R_MESA + MESA_COUNT;

// Later layers: relay pairs sit at rows 0/1, any extra pair at rows 2/3.
const R_RELAY: usize = 0;
const R_EXTRA: usize = 2;
const DEAD_ROWS: usize = 180;

// Written magnitudes.
const SPIKE_NEG: f32 = -320.0;
const FLIP_DELTA: f32 = 480.0;
const LATE_DELTA: f32 = 240.0;
const RELAY_SEED: f32 = 4.0;
const RELAY_STEP: f32 = 1.0;
const PROBE_VAL: f32 = 35.0;
const SHELF_TOTAL: f32 = 250.0;
const MESA_VAL: f32 = 87.0;
const DETECT_VAL: f32 = 30.0;

// Pre-activation targets for the first-layer rows.
const GEN_ARG: f32 = 430.0;
const SEED_ARG: f32 = 390.0;
const PROBE_ARG: f32 = 350.0;
const WRITER_ARG: f32 = 40.0;
const CHAFF_BIAS: f32 = 3.0;
const NOISE_AMP: f32 = 0.138;

// Differential pairs: two rows sharing weights with biases offset by
// `PAIR_SPAN`. Once both pre-activations clear the linear range of the
// activation, the pair's downstream contribution is the span times the
// output weight, independent of the exact operating point.
const PAIR_SPAN: f32 = 300.0;
const FIRE_ARG: f64 = 650.0;
const SILENT_ARG: f64 = -40.0;

// Embedding constants.
const TOKEN_EMBED: f32 = 4.0;
const BALLAST_EMBED: f32 = 2.5;
const BALLAST_RESIDUE: f32 = 0.02;
const RELAY_EMBED: f32 = -0.15;

// Attention value targets.
const Q_FUNC_VAL: f64 = 9.75;
const PLANT_VAL: f64 = 10.5;
const TRIM_VAL: f64 = 6.86;
const SINK_GAP_FUNC: f64 = 8.0;
const SINK_GAP_TRIM: f64 = 2.0;
const V_FUNC_BASE: f64 = 6.0;
const V_FUNC_TOP: f64 = 18.0;
const V_PLANT_VAL: f64 = 9.0;
const V_TRIM_BASE: f64 = 6.0;
const V_TRIM_TOP: f64 = 15.6;
const V_DECOY_VAL: f64 = 6.5;
const V_TRIM_SPARE_W: f32 = 1.01;

// Head targets: the coefficient each arm should leave on the unigram
// direction, the bigram coefficient, and the swing sizes for the two
// calibration-reference channels.
const ALPHA_BASE: f64 = 0.95;
const ALPHA_MEAN: f64 = 0.90;
const ALPHA_ZERO: f64 = 0.80;
const ALPHA_BIGRAM: f64 = 0.29;
const UNIGRAM_SCALE: f64 = 0.6;
const SHELF_SWING: f64 = 1.05;
const BALLAST_SWING: f64 = 0.45;

const NOISE_SEED: u64 = 0xBE6C;

const T0: usize = 0;
const GEN_ROW: usize = 5;

/// Norm gain template shared by every norm in the model. The relay channel
/// is strongly amplified, source channels are nearly muted but lifted by the
/// shift, and spares are muted outright.
fn gain_template() -> Array1<f32> {
    let mut g = Array1::from_elem(HIDDEN, 1.0f32);
    g[CH_MARKER] = 1.23;
    g[CH_RELAY] = 25.0;
    g[CH_SHELF] = 0.7;
    for i in 0..MESA_COUNT {
        g[CH_MESA + i] = 1.35;
    }
    for i in 0..SOURCE_COUNT {
        g[CH_SOURCE + i] = 0.05;
    }
    for i in 0..SPARE_COUNT {
        g[CH_SPARE + i] = 0.01;
    }
    g
}

fn shift_template() -> Array1<f32> {
    let mut b = Array1::zeros(HIDDEN);
    for i in 0..SOURCE_COUNT {
        b[CH_SOURCE + i] = 0.4;
    }
    b
}

fn norm_params() -> NormParams {
    NormParams {
        gamma: gain_template(),
        beta: Some(shift_template()),
    }
}

fn machinery_rows(layer: usize) -> usize {
    match layer {
        1 | 3 | 4 => 4,
        2 | 5 => 2,
        _ => 0,
    }
}

/// Embeddings, norms, chaff, and noise; everything that needs no measurement.
fn skeleton() -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(NOISE_SEED);

    let mut wte = Array2::zeros((VOCAB, HIDDEN));
    for t in 0..VOCAB {
        wte[[t, t]] = TOKEN_EMBED;
        wte[[t, CH_BALLAST]] = BALLAST_EMBED;
        wte[[t, CH_RELAY]] = RELAY_EMBED;
    }
    let mut wpe = Array2::zeros((MAX_SEQ, HIDDEN));
    wpe[[0, CH_MARKER]] = 1.0;

    let mut layers = Vec::with_capacity(LAYERS);
    for l in 0..LAYERS {
        let attn = AttentionParams {
            w_q: Array2::zeros((HIDDEN, HIDDEN)),
            b_q: Array1::zeros(HIDDEN),
            w_k: Array2::zeros((HIDDEN, HIDDEN)),
            b_k: Array1::zeros(HIDDEN),
            w_v: Array2::zeros((HIDDEN, HIDDEN)),
            b_v: Array1::zeros(HIDDEN),
            w_o: Array2::zeros((HIDDEN, HIDDEN)),
            b_o: Array1::zeros(HIDDEN),
        };
        let mut ffn = FfnParams {
            w_in: Array2::zeros((FFN_DIM, HIDDEN)),
            b_in: Array1::zeros(FFN_DIM),
            w_up: None,
            b_up: None,
            w_out: Array2::zeros((HIDDEN, FFN_DIM)),
            b_out: Array1::zeros(HIDDEN),
        };
        if l == 0 {
            // Background rows keep the pre-activation median well away from
            // zero so only the deliberate writers clear the event floor.
            // They read token channels only and write nothing back.
            for row in L0_MACHINERY..FFN_DIM {
                for ch in 0..VOCAB {
                    ffn.w_in[[row, ch]] = rng.gen_range(-NOISE_AMP..NOISE_AMP);
                }
            }
        } else {
            // Chaff rows hold the activation median of later layers at a
            // fixed positive value; the dead tail leaves exact zeros in the
            // minority.
            let chaff_end = FFN_DIM - DEAD_ROWS;
            for row in machinery_rows(l)..chaff_end {
                ffn.b_in[row] = CHAFF_BIAS;
            }
        }
        layers.push(LayerParams {
            ln1: norm_params(),
            attn,
            ln2: norm_params(),
            ffn,
        });
    }

    Model::from_parts(ModelParts {
        model_id: "bench6-a".to_string(),
        norm_kind: NormKind::LayerNorm,
        ffn_kind: FfnKind::StandardMlp,
        head_count: HEADS,
        max_sequence_length: MAX_SEQ,
        wte,
        wpe,
        layers,
        ln_f: norm_params(),
        w_head: Array2::zeros((VOCAB, HIDDEN)),
        b_head: Array1::zeros(VOCAB),
    })
}

/// Flow configurations the calibration measures under. The four edited arms
/// run the standing removal plans at the activation and block-output sites;
/// the two residual arms skip residual additions.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Arm {
    Base,
    Y6Mean,
    Y6Zero,
    Y7Mean,
    Y7Zero,
    FfnOff,
    AllOff,
}

fn site_plan(site: Slot, policy: Policy) -> InterventionPlan {
    plan_tma_removal(site, policy, &[]).expect("site plan is well-formed")
}

fn ffn_residuals() -> Vec<(usize, BlockKind)> {
    (0..LAYERS).map(|l| (l, BlockKind::Ffn)).collect()
}

fn all_residuals() -> Vec<(usize, BlockKind)> {
    let mut v = Vec::new();
    for l in 0..LAYERS {
        v.push((l, BlockKind::SelfAttention));
        v.push((l, BlockKind::Ffn));
    }
    v
}

fn snap(model: &Model, tokens: &[u32], slot: Slot, layer: usize, arm: Arm) -> Array2<f32> {
    let taps = [TapPoint::new(slot, layer)];
    let out = match arm {
        Arm::Base => model.run_with_taps(tokens, &taps, None),
        Arm::Y6Mean => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y6, Policy::ReplaceWithMean)),
        ),
        Arm::Y6Zero => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y6, Policy::ReplaceWithZero)),
        ),
        Arm::Y7Mean => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y7, Policy::ReplaceWithMean)),
        ),
        Arm::Y7Zero => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y7, Policy::ReplaceWithZero)),
        ),
        Arm::FfnOff => model.run_without_residuals(tokens, &ffn_residuals(), &taps),
        Arm::AllOff => model.run_without_residuals(tokens, &all_residuals(), &taps),
    }
    .expect("calibration pass");
    out.snapshots
        .into_iter()
        .next()
        .expect("calibration tap captured")
        .values
}

struct Gate {
    weight: f32,
    bias: f32,
}

/// Chooses a weight and bias so every firing input lands beyond the linear
/// saturation point of the activation and every silent input lands in the
/// exact-zero region, with the direction inferred from which side is larger.
fn gate(fire: &[f64], silent: &[f64]) -> Gate {
    let fmin = fire.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = fire.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smin = silent.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = silent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = if fmin > smax {
        (FIRE_ARG - SILENT_ARG) / (fmin - smax)
    } else if fmax < smin {
        -(FIRE_ARG - SILENT_ARG) / (smin - fmax)
    } else {
        panic!("gate regions overlap: fire {fire:?} silent {silent:?}");
    };
    let anchor = if w > 0.0 { fmin } else { fmax };
    let b = FIRE_ARG - w * anchor;
    Gate {
        weight: w as f32,
        bias: b as f32,
    }
}

fn install_pair(
    ffn: &mut FfnParams,
    row: usize,
    read_ch: usize,
    g: &Gate,
    out_ch: usize,
    delta: f32,
) {
    ffn.w_in[[row, read_ch]] = g.weight;
    ffn.w_in[[row + 1, read_ch]] = g.weight;
    ffn.b_in[row] = g.bias;
    ffn.b_in[row + 1] = g.bias - PAIR_SPAN;
    ffn.w_out[[out_ch, row]] = delta / PAIR_SPAN;
    ffn.w_out[[out_ch, row + 1]] = -(delta / PAIR_SPAN);
}

fn sum_at(row: &Array2<f32>, t: usize, start: usize, count: usize) -> f64 {
    (start..start + count).map(|c| row[[t, c]] as f64).sum()
}

/// Layer-0 attention: functional, plant, trim, and decoy rows, then the
/// output projection row that cancels the ballast channel.
fn calibrate_attention(model: &mut Model, tokens: &[u32]) {
    let x2 = snap(model, tokens, Slot::X2, 0, Arm::Base);
    let src_g = sum_at(&x2, GEN_ROW, CH_SOURCE, SOURCE_COUNT);
    let mk_g = x2[[GEN_ROW, CH_MARKER]] as f64;
    let mk_0 = x2[[T0, CH_MARKER]] as f64;
    let ballast_g = x2[[GEN_ROW, CH_BALLAST]] as f64;
    let spare_g = sum_at(&x2, GEN_ROW, CH_SPARE, SPARE_COUNT);
    let dk = mk_0 - mk_g;
    assert!(dk > 1.0, "marker contrast too small: {dk}");

    let dh = HIDDEN / HEADS;
    let scale = (dh as f64).sqrt();

    let fill_source = |w: &mut Array2<f32>, row: usize, value: f64| {
        let per = (value / src_g) as f32;
        for c in CH_SOURCE..CH_SOURCE + SOURCE_COUNT {
            w[[row, c]] = per;
        }
    };

    let attn = &mut model.layers[0].attn;

    for &r in &QK_FUNC {
        fill_source(&mut attn.w_q, r, Q_FUNC_VAL);
    }
    for &r in &Q_PLANT {
        fill_source(&mut attn.w_q, r, PLANT_VAL);
    }
    for &r in &QK_TRIM {
        fill_source(&mut attn.w_q, r, TRIM_VAL);
    }

    // Keys: same magnitudes, plus a marker read sized so position zero wins
    // the score race by a fixed margin.
    let mk_w_func = SINK_GAP_FUNC * scale / (QK_FUNC.len() as f64 * Q_FUNC_VAL * dk);
    for &r in &QK_FUNC {
        fill_source(&mut attn.w_k, r, Q_FUNC_VAL - mk_w_func * mk_g);
        attn.w_k[[r, CH_MARKER]] = mk_w_func as f32;
    }
    for &r in &K_PLANT {
        fill_source(&mut attn.w_k, r, PLANT_VAL);
    }
    let mk_w_trim = SINK_GAP_TRIM * scale / (QK_TRIM.len() as f64 * TRIM_VAL * dk);
    for &r in &QK_TRIM {
        fill_source(&mut attn.w_k, r, TRIM_VAL - mk_w_trim * mk_g);
        attn.w_k[[r, CH_MARKER]] = mk_w_trim as f32;
    }

    // Values: the functional dims step up at position zero so the sink is
    // visible in the attention output; plants and decoys stay flat.
    let mk_w_v = (V_FUNC_TOP - V_FUNC_BASE) / dk;
    for &r in &V_FUNC {
        fill_source(&mut attn.w_v, r, V_FUNC_BASE - mk_w_v * mk_g);
        attn.w_v[[r, CH_MARKER]] = mk_w_v as f32;
    }
    for &r in &V_PLANT {
        fill_source(&mut attn.w_v, r, V_PLANT_VAL);
    }
    let mk_w_t = (V_TRIM_TOP - V_TRIM_BASE) / dk;
    for &r in &V_TRIM {
        // Reads the ballast channel instead of the sources, padded with heavy
        // but inert spare reads so its weight mass sits between the decoy
        // rows and the background.
        let spare_part = V_TRIM_SPARE_W as f64 * spare_g;
        let ballast_w = (V_TRIM_BASE - mk_w_t * mk_g - spare_part) / ballast_g;
        attn.w_v[[r, CH_BALLAST]] = ballast_w as f32;
        attn.w_v[[r, CH_MARKER]] = mk_w_t as f32;
        for c in CH_SPARE..CH_SPARE + SPARE_COUNT {
            attn.w_v[[r, c]] = V_TRIM_SPARE_W;
        }
    }
    for &r in &V_DECOY {
        fill_source(&mut attn.w_v, r, V_DECOY_VAL);
    }

    // Output projection: only the ballast row is nonzero. Its cancellation is
    // split across the functional and trim value dims, so ablating either
    // group leaves a characteristic residue.
    let x8 = snap(model, tokens, Slot::X8, 0, Arm::Base);
    let mut func_med: Vec<f32> = (1..tokens.len()).map(|t| x8[[t, V_FUNC[0]]]).collect();
    func_med.sort_by(f32::total_cmp);
    let x8f = func_med[func_med.len() / 2] as f64;
    let mut trim_med: Vec<f32> = (1..tokens.len()).map(|t| x8[[t, V_TRIM[0]]]).collect();
    trim_med.sort_by(f32::total_cmp);
    let x8t = trim_med[trim_med.len() / 2] as f64;
    let cancel = (BALLAST_EMBED - BALLAST_RESIDUE) as f64;
    let attn = &mut model.layers[0].attn;
    for &d in &V_FUNC {
        attn.w_o[[CH_BALLAST, d]] = (-cancel * 0.7 / (V_FUNC.len() as f64 * x8f)) as f32;
    }
    for &d in &V_TRIM {
        attn.w_o[[CH_BALLAST, d]] = (-cancel * 0.3 / (V_TRIM.len() as f64 * x8t)) as f32;
    }
}

/// Layer-0 FFN machinery: generators, the probe writer, and the shelf and
/// mesa builders.
fn calibrate_first_ffn(model: &mut Model, tokens: &[u32]) {
    let y2 = snap(model, tokens, Slot::Y2, 0, Arm::Base);
    let mk_0 = y2[[T0, CH_MARKER]] as f64;
    let mk_g = y2[[GEN_ROW, CH_MARKER]] as f64;

    let single = |target: f32| -> Gate {
        let w = (target as f64 - SILENT_ARG) / (mk_0 - mk_g);
        Gate {
            weight: w as f32,
            bias: (target as f64 - w * mk_0) as f32,
        }
    };

    let ffn = &mut model.layers[0].ffn;
    let gen = single(GEN_ARG);
    ffn.w_in[[R_GEN, CH_MARKER]] = gen.weight;
    ffn.b_in[R_GEN] = gen.bias;
    ffn.w_out[[CH_SPIKE, R_GEN]] = SPIKE_NEG / GEN_ARG;

    let seed = single(SEED_ARG);
    ffn.w_in[[R_SEED, CH_MARKER]] = seed.weight;
    ffn.b_in[R_SEED] = seed.bias;
    ffn.w_out[[CH_RELAY, R_SEED]] = RELAY_SEED / SEED_ARG;

    ffn.b_in[R_PROBE] = PROBE_ARG;
    ffn.w_out[[CH_PROBE, R_PROBE]] = PROBE_VAL / PROBE_ARG;

    for i in 0..SHELF_ROWS {
        ffn.b_in[R_SHELF + i] = WRITER_ARG;
        ffn.w_out[[CH_SHELF, R_SHELF + i]] = SHELF_TOTAL / SHELF_ROWS as f32 / WRITER_ARG;
    }
    for i in 0..MESA_COUNT {
        ffn.b_in[R_MESA + i] = WRITER_ARG;
        ffn.w_out[[CH_MESA + i, R_MESA + i]] = MESA_VAL / WRITER_ARG;
    }
}

/// Measures one channel of the FFN-input norm at a layer across arms and
/// returns the gate for a pair that fires at position zero wherever the
/// channel is charged. The residual-off arm only participates as a firing
/// case when the caller needs the row alive there; by the last layer its
/// stream is too sparse for that to be separable.
fn charged_gate(model: &Model, tokens: &[u32], layer: usize, ch: usize, ffn_off_fires: bool) -> Gate {
    let mut fire = Vec::new();
    let mut silent = Vec::new();
    for arm in [Arm::Base, Arm::Y7Mean, Arm::Y7Zero] {
        let s = snap(model, tokens, Slot::Y2, layer, arm);
        fire.push(s[[T0, ch]] as f64);
        silent.push(s[[GEN_ROW, ch]] as f64);
    }
    {
        let s = snap(model, tokens, Slot::Y2, layer, Arm::FfnOff);
        if ffn_off_fires {
            fire.push(s[[T0, ch]] as f64);
        } else {
            silent.push(s[[T0, ch]] as f64);
        }
        silent.push(s[[GEN_ROW, ch]] as f64);
    }
    for arm in [Arm::Y6Mean, Arm::Y6Zero, Arm::AllOff] {
        let s = snap(model, tokens, Slot::Y2, layer, arm);
        silent.push(s[[T0, ch]] as f64);
        silent.push(s[[GEN_ROW, ch]] as f64);
    }
    gate(&fire, &silent)
}

/// Layers 1..5: the detector, the relay chain, the sign flip, the late
/// top-up, and the final cancellation. Install order matters: every gate is
/// measured on the model as built so far, so a pair that changes the input
/// statistics of a later layer must land before that layer is measured.
fn calibrate_later_layers(model: &mut Model, tokens: &[u32]) {
    // Layer 1 detector: separates the probe levels left by the removal arms.
    // Replacing the generator outputs with the tensor mean leaves a faint
    // positive probe, replacing them with zero leaves none, and the detector
    // pair must split exactly between those two.
    {
        let mut fire = Vec::new();
        let mut silent = Vec::new();
        for arm in [Arm::Base, Arm::Y6Mean, Arm::Y7Mean, Arm::Y7Zero, Arm::FfnOff, Arm::AllOff] {
            let s = snap(model, tokens, Slot::Y2, 1, arm);
            fire.push(s[[T0, CH_PROBE]] as f64);
            fire.push(s[[GEN_ROW, CH_PROBE]] as f64);
        }
        let s = snap(model, tokens, Slot::Y2, 1, Arm::Y6Zero);
        silent.push(s[[T0, CH_PROBE]] as f64);
        silent.push(s[[GEN_ROW, CH_PROBE]] as f64);
        let g = gate(&fire, &silent);
        install_pair(
            &mut model.layers[1].ffn,
            R_EXTRA,
            CH_PROBE,
            &g,
            CH_DETECT,
            DETECT_VAL,
        );
    }

    // Relay chain through layer 3: one pair per layer re-fires on the relay
    // channel and bumps it by a fixed step for the next layer.
    for layer in 1..=3 {
        let g = charged_gate(model, tokens, layer, CH_RELAY, true);
        install_pair(
            &mut model.layers[layer].ffn,
            R_RELAY,
            CH_RELAY,
            &g,
            CH_RELAY,
            RELAY_STEP,
        );
    }

    // Layer 3 flip: fires only on the deep negative spike and overshoots it
    // back to positive. It changes what layer 4 sees, so it must be in place
    // before the remaining gates are measured.
    {
        let mut fire = Vec::new();
        let mut silent = Vec::new();
        let s = snap(model, tokens, Slot::Y2, 3, Arm::Base);
        fire.push(s[[T0, CH_SPIKE]] as f64);
        silent.push(s[[GEN_ROW, CH_SPIKE]] as f64);
        for arm in [Arm::Y6Mean, Arm::Y6Zero, Arm::Y7Mean, Arm::Y7Zero, Arm::FfnOff, Arm::AllOff] {
            let s = snap(model, tokens, Slot::Y2, 3, arm);
            silent.push(s[[T0, CH_SPIKE]] as f64);
            silent.push(s[[GEN_ROW, CH_SPIKE]] as f64);
        }
        let g = gate(&fire, &silent);
        install_pair(
            &mut model.layers[3].ffn,
            R_EXTRA,
            CH_SPIKE,
            &g,
            CH_SPIKE,
            FLIP_DELTA,
        );
    }

    // Layer 4 relay and its top-up pair share one gate, both riding the
    // relay channel; the top-up writes into the spike channel instead.
    {
        let g = charged_gate(model, tokens, 4, CH_RELAY, true);
        install_pair(
            &mut model.layers[4].ffn,
            R_RELAY,
            CH_RELAY,
            &g,
            CH_RELAY,
            RELAY_STEP,
        );
        install_pair(
            &mut model.layers[4].ffn,
            R_EXTRA,
            CH_RELAY,
            &g,
            CH_SPIKE,
            LATE_DELTA,
        );
    }

    // Layer 5 cancellation: measures what the spike channel accumulated and
    // writes its negation, so the head never sees it.
    {
        let x1 = snap(model, tokens, Slot::X1, 5, Arm::Base);
        let spike_in = x1[[T0, CH_SPIKE]];
        let g = charged_gate(model, tokens, 5, CH_RELAY, false);
        install_pair(
            &mut model.layers[5].ffn,
            R_RELAY,
            CH_RELAY,
            &g,
            CH_SPIKE,
            -spike_in,
        );
    }
}

/// Token class used by the head's transition table.
pub fn token_class(id: usize) -> usize {
    let b = id as u8;
    match b {
        b' ' | b'\n' | b'\t' | b'\r' => 0,
        b'a' | b'e' | b'i' | b'o' | b'u' => 1,
        b't' | b'n' | b's' | b'h' | b'r' | b'd' | b'l' => 2,
        b'b'..=b'z' => 3,
        b'A'..=b'Z' => 4,
        b'0'..=b'9' => 5,
        b'.' | b',' | b';' | b':' | b'\'' | b'"' | b'!' | b'?' | b'(' | b')' | b'-' => 6,
        _ => 7,
    }
}

const CLASSES: usize = 8;

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> [f64; 3] {
    let det = |a: [[f64; 3]; 3]| -> f64 {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    assert!(d.abs() > 1e-9, "head calibration system is singular");
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut mk = m;
        for row in 0..3 {
            mk[row][k] = r[row];
        }
        *slot = det(mk) / d;
    }
    out
}

fn final_rows(model: &Model, tokens: &[u32], arm: Arm) -> Array2<f32> {
    let taps = [TapPoint::new(Slot::Y1, 5), TapPoint::new(Slot::Y7, 5)];
    let out = match arm {
        Arm::Base => model.run_with_taps(tokens, &taps, None),
        Arm::Y6Mean => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y6, Policy::ReplaceWithMean)),
        ),
        Arm::Y6Zero => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y6, Policy::ReplaceWithZero)),
        ),
        Arm::Y7Mean => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y7, Policy::ReplaceWithMean)),
        ),
        Arm::Y7Zero => model.run_with_taps(
            tokens,
            &taps,
            Some(&site_plan(Slot::Y7, Policy::ReplaceWithZero)),
        ),
        _ => unreachable!("head calibration uses edited arms only"),
    }
    .expect("head calibration pass");
    let y1 = &out.snapshots[0].values;
    let y7 = &out.snapshots[1].values;
    model.final_norm(&(y1 + y7))
}

/// Head: a class-transition table over token channels, a unigram direction
/// scaled by the probe and detect channels, and two calibration-reference
/// channels that are neutral at baseline and decalibrate under specific
/// interventions.
fn calibrate_head(model: &mut Model, tokens: &[u32], corpus_tokens: &[u32]) {
    // Corpus statistics with add-one smoothing.
    let mut unigram = [1.0f64; VOCAB];
    for &t in corpus_tokens {
        unigram[t as usize] += 1.0;
    }
    let total: f64 = unigram.iter().sum();
    let logp: Vec<f64> = unigram.iter().map(|c| (c / total).ln()).collect();
    let mean_logp = logp.iter().sum::<f64>() / VOCAB as f64;
    let bhat: Vec<f64> = logp
        .iter()
        .map(|l| UNIGRAM_SCALE * (l - mean_logp))
        .collect();

    let mut trans = [[1.0f64; CLASSES]; CLASSES];
    for pair in corpus_tokens.windows(2) {
        trans[token_class(pair[0] as usize)][token_class(pair[1] as usize)] += 1.0;
    }
    let mut big = [[0.0f64; CLASSES]; CLASSES];
    for a in 0..CLASSES {
        let row_sum: f64 = trans[a].iter().sum();
        for b in 0..CLASSES {
            big[a][b] = (trans[a][b] / row_sum).ln();
        }
    }
    // Center each column against the vocabulary's class sizes, so the
    // uniform part of the one-hot block cancels out of the logits.
    let mut class_count = [0.0f64; CLASSES];
    for id in 0..VOCAB {
        class_count[token_class(id)] += 1.0;
    }
    for b in 0..CLASSES {
        let weighted: f64 = (0..CLASSES).map(|a| class_count[a] * big[a][b]).sum();
        let mean = weighted / VOCAB as f64;
        for a in 0..CLASSES {
            big[a][b] -= mean;
        }
    }

    // Measured norm outputs per arm.
    let base = final_rows(model, tokens, Arm::Base);
    let mean_arm = final_rows(model, tokens, Arm::Y6Mean);
    let zero_arm = final_rows(model, tokens, Arm::Y6Zero);
    let y7zero = final_rows(model, tokens, Arm::Y7Zero);

    let own = tokens[GEN_ROW] as usize;
    let other = (own + 1) % VOCAB;
    let z_own = base[[GEN_ROW, own]] as f64;
    let z_other = base[[GEN_ROW, other]] as f64;
    assert!(
        z_own - z_other > 0.1,
        "token contrast too small at the head"
    );
    let lambda_big = ALPHA_BIGRAM / (z_own - z_other);

    let probe_of = |a: &Array2<f32>| a[[GEN_ROW, CH_PROBE]] as f64;
    let detect_of = |a: &Array2<f32>| a[[GEN_ROW, CH_DETECT]] as f64;
    let [c0, lp, lq] = solve3(
        [
            [1.0, probe_of(&base), detect_of(&base)],
            [1.0, probe_of(&mean_arm), detect_of(&mean_arm)],
            [1.0, probe_of(&zero_arm), detect_of(&zero_arm)],
        ],
        [ALPHA_BASE, ALPHA_MEAN, ALPHA_ZERO],
    );

    let shelf_base = base[[GEN_ROW, CH_SHELF]] as f64;
    let shelf_dropped = y7zero[[GEN_ROW, CH_SHELF]] as f64;
    let shelf_coeff = SHELF_SWING / (shelf_base - shelf_dropped);

    // The ballast reference swing is measured against an actual ablation of
    // the sink-forming attention rows.
    let ballast_base = base[[GEN_ROW, CH_BALLAST]] as f64;
    let mut broken = model.clone();
    let mut sink_rows: Vec<usize> = QK_FUNC.to_vec();
    sink_rows.extend_from_slice(&Q_PLANT);
    let plan_q = plan_weight_ablation(
        "layers.0.attn.w_q",
        &sink_rows,
        Policy::ReplaceWithMean,
        MeanScope::PerChannel,
        HIDDEN,
    )
    .expect("sink ablation plan");
    let mut k_rows: Vec<usize> = QK_FUNC.to_vec();
    k_rows.extend_from_slice(&K_PLANT);
    let plan_k = plan_weight_ablation(
        "layers.0.attn.w_k",
        &k_rows,
        Policy::ReplaceWithMean,
        MeanScope::PerChannel,
        HIDDEN,
    )
    .expect("sink ablation plan");
    broken
        .apply_parameter_plan(&plan_q)
        .expect("sink ablation applies");
    broken
        .apply_parameter_plan(&plan_k)
        .expect("sink ablation applies");
    let ballast_broken = final_rows(&broken, tokens, Arm::Base)[[GEN_ROW, CH_BALLAST]] as f64;
    let ballast_coeff = BALLAST_SWING / (ballast_broken - ballast_base);

    let shelf_sign = |v: usize| if v % 2 == 0 { 1.0f64 } else { -1.0 };
    let ballast_sign = |v: usize| if (v / 2) % 2 == 0 { 1.0f64 } else { -1.0 };

    for v in 0..VOCAB {
        let cv = token_class(v);
        for j in 0..VOCAB {
            model.w_head[[v, j]] = (lambda_big * big[token_class(j)][cv]) as f32;
        }
        model.w_head[[v, CH_PROBE]] = (lp * bhat[v]) as f32;
        model.w_head[[v, CH_DETECT]] = (lq * bhat[v]) as f32;
        let shelf_w = shelf_coeff * shelf_sign(v);
        let ballast_w = ballast_coeff * ballast_sign(v);
        model.w_head[[v, CH_SHELF]] = shelf_w as f32;
        model.w_head[[v, CH_BALLAST]] = ballast_w as f32;
        model.b_head[v] =
            (c0 * bhat[v] - shelf_w * shelf_base - ballast_w * ballast_base) as f32;
    }
}

/// Builds the bench model, calibrating against the given corpus. The same
/// text should be used for evaluation, since the head's statistics come from
/// it.
pub fn bench_model(corpus: &str) -> Model {
    let mut model = skeleton();
    let corpus_tokens = model.tokenize(corpus);
    assert!(
        corpus_tokens.len() >= EVAL_SEQ,
        "bench corpus shorter than one sequence"
    );
    let tokens: Vec<u32> = corpus_tokens[..EVAL_SEQ].to_vec();
    calibrate_attention(&mut model, &tokens);
    calibrate_first_ffn(&mut model, &tokens);
    calibrate_later_layers(&mut model, &tokens);
    calibrate_head(&mut model, &tokens, &corpus_tokens);
    model
}

/// Corpus text compiled into the library, matching `assets/wikitext.txt`.
pub fn shipped_wikitext() -> &'static str {
    include_str!("../../assets/wikitext.txt")
}

/// JSON-lines corpus compiled into the library, matching `assets/c4.jsonl`.
pub fn shipped_c4() -> &'static str {
    include_str!("../../assets/c4.jsonl")
}

/// Shared instance built once per process; clone it before mutating.
pub fn shared_bench() -> &'static Model {
    static MODEL: OnceLock<Model> = OnceLock::new();
    MODEL.get_or_init(|| bench_model(shipped_wikitext()))
}

/// Writes the model checkpoint and both corpora into a directory.
pub fn write_fixture_tree(dir: &std::path::Path) -> crate::error::Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let model_path = dir.join("model.bin");
    shared_bench().save(&model_path)?;
    std::fs::write(dir.join("wikitext.txt"), shipped_wikitext())?;
    std::fs::write(dir.join("c4.jsonl"), shipped_c4())?;
    Ok(model_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::co::{
        decompose_normalization, detect_outlier_channels, identify_otcs,
        weight_channel_statistics, CoCriteria,
    };
    use crate::eval::{evaluate_ppl, evaluate_ppl_with_plans, sample_windows, Dataset, EvalConfig};
    use crate::intervene::plan_gamma_edit;
    use crate::ma::{
        abs_median, classify_tma_fma, detect_mas, earliest_ma, profile_stream, trend_analysis,
        MaCriteria, MaKind, TrendConfig,
    };
    use crate::tap::ActivationSnapshot;
    use ndarray::Axis;

    fn snapshot(model: &Model, tokens: &[u32], slot: Slot, layer: usize) -> ActivationSnapshot {
        let taps = [TapPoint::new(slot, layer)];
        let out = model.run_with_taps(tokens, &taps, None).unwrap();
        out.snapshots.into_iter().next().unwrap()
    }

    fn co_at(model: &Model, tokens: &[u32], layer: usize, m: f32) -> Vec<usize> {
        let snap = snapshot(model, tokens, Slot::X2, layer);
        let criteria = CoCriteria {
            deviation_factor: m,
            ..CoCriteria::default()
        };
        detect_outlier_channels(&snap, criteria, false, MaCriteria::default())
            .unwrap()
            .channel_indices
    }

    /// Prints every calibrated quantity the construction depends on, so a
    /// failed expectation elsewhere can be traced to its source here.
    #[test]
    fn construction_report() {
        let model = shared_bench();
        let tokens: Vec<u32> = model.tokenize(shipped_wikitext())[..EVAL_SEQ].to_vec();
        let mac = MaCriteria::default();
        let coc = CoCriteria::default();

        println!("== per-layer site magnitudes ==");
        for l in 0..LAYERS {
            let y3 = snapshot(model, &tokens, Slot::Y3, l);
            let y4 = snapshot(model, &tokens, Slot::Y4, l);
            let y6 = snapshot(model, &tokens, Slot::Y6, l);
            let y7 = snapshot(model, &tokens, Slot::Y7, l);
            let x6 = snapshot(model, &tokens, Slot::X6, l);
            let y6_events = detect_mas(&y6, mac).unwrap().len();
            let y7_events = detect_mas(&y7, mac).unwrap().len();
            let x6_max = x6.values.iter().fold(0f32, |a, v| a.max(v.abs()));
            println!(
                "layer {l}: |y3|med {:.4} |y4|med {:.4} |y6|med {:.4} y6ev {} y7ev {} x6max {:.2}",
                abs_median(&y3.values),
                abs_median(&y4.values),
                abs_median(&y6.values),
                y6_events,
                y7_events,
                x6_max
            );
        }

        println!("== attention-side maxima over layers ==");
        for slot in [
            Slot::X1,
            Slot::X2,
            Slot::X3,
            Slot::X4,
            Slot::X5,
            Slot::X6,
            Slot::X7,
            Slot::X8,
            Slot::X9,
        ] {
            let mut worst = 0f32;
            for l in 0..LAYERS {
                let s = snapshot(model, &tokens, slot, l);
                worst = s.values.iter().fold(worst, |a, v| a.max(v.abs()));
            }
            println!("{slot}: max |value| {worst:.2}");
        }

        let first = earliest_ma(model, &tokens, mac).unwrap().expect("some event");
        println!(
            "earliest event: {} token {} channel {} value {:.1}",
            first.tap, first.token_index, first.channel_index, first.value
        );

        println!("== residual classification at the block inputs ==");
        let base = profile_stream(model, &tokens, Slot::X1, mac, None, &[]).unwrap();
        let all_off = profile_stream(model, &tokens, Slot::X1, mac, None, &all_residuals()).unwrap();
        let classified = classify_tma_fma(&base, &all_off).unwrap();
        for (l, events) in classified.per_layer.iter().enumerate() {
            let fake = events.iter().filter(|e| e.kind == MaKind::FakeMa).count();
            println!("x1 layer {l}: events {} fake {}", events.len(), fake);
        }

        let ffn_off = profile_stream(model, &tokens, Slot::X1, mac, None, &ffn_residuals()).unwrap();
        let nat = classify_tma_fma(&base, &ffn_off).unwrap();
        let trend = trend_analysis(&nat, TrendConfig::default());
        println!(
            "ffn-off trend: {} pairs, {} unmatched initial",
            trend.records.len(),
            trend.unmatched_initial.len()
        );
        for p in &trend.records {
            println!(
                "  pair ch {} tok {}: layer {} value {:.1} -> layer {} value {:.1} flipped {}",
                p.channel_index,
                p.token_index,
                p.initial_layer,
                p.initial_value,
                p.final_layer,
                p.final_value,
                p.sign_flipped
            );
        }

        println!("== outlier channels at the attention norm output ==");
        for l in 0..LAYERS {
            let six = co_at(model, &tokens, l, 6.0);
            let four = co_at(model, &tokens, l, 4.0);
            let two = co_at(model, &tokens, l, 2.0);
            println!("layer {l}: m6 {six:?} m4 {four:?} m2 {two:?}");
        }

        println!("== first-layer norm decomposition ==");
        let x1_0 = snapshot(model, &tokens, Slot::X1, 0);
        let d = decompose_normalization(
            &x1_0,
            &model.layers[0].ln1.gamma,
            model.layers[0].ln1.beta.as_ref(),
            model.norm_kind,
            coc,
        )
        .unwrap();
        println!(
            "standardized {:?} rescaled {:?}",
            d.standardized.channel_indices, d.rescaled.channel_indices
        );

        println!("== gain edit against flagged channels ==");
        for l in 0..LAYERS {
            let before = co_at(model, &tokens, l, 4.0);
            let plan = plan_gamma_edit(
                l,
                BlockKind::SelfAttention,
                &before,
                Policy::ReplaceWithMean,
                HIDDEN,
            )
            .unwrap();
            let mut edited = model.clone();
            edited.apply_parameter_plan(&plan).unwrap();
            let after = co_at(&edited, &tokens, l, 4.0);
            println!("layer {l}: before {before:?} after {after:?}");
        }

        println!("== outlier-transferring rows ==");
        let x2_0 = snapshot(model, &tokens, Slot::X2, 0);
        let triples = [
            ("layers.0.attn.w_q", Slot::X3, &model.layers[0].attn.w_q),
            ("layers.0.attn.w_k", Slot::X4, &model.layers[0].attn.w_k),
            ("layers.0.attn.w_v", Slot::X5, &model.layers[0].attn.w_v),
        ];
        for (name, out_slot, weight) in triples {
            let out = snapshot(model, &tokens, out_slot, 0);
            let otc = identify_otcs(name, weight, &x2_0, &out, coc, mac).unwrap();
            println!(
                "{name}: rows {:?} rejected {:?}",
                otc.row_indices, otc.rejected_rows
            );
        }

        println!("== weight row statistics ==");
        for sd in [6.0f32, 4.0, 2.0] {
            let q = weight_channel_statistics(&model.layers[0].attn.w_q, sd).unwrap();
            let k = weight_channel_statistics(&model.layers[0].attn.w_k, sd).unwrap();
            let v = weight_channel_statistics(&model.layers[0].attn.w_v, sd).unwrap();
            println!("sd {sd}: q {q:?} k {k:?} v {v:?}");
        }
        let gamma_matrix = model.layers[0].ln1.gamma.clone().insert_axis(Axis(1));
        for sd in [6.0f32, 4.0, 2.0] {
            let g = weight_channel_statistics(&gamma_matrix, sd).unwrap();
            println!("gain sd {sd}: {g:?}");
        }
        for l in 0..LAYERS {
            let six = weight_channel_statistics(&model.layers[l].ffn.w_in, 6.0).unwrap();
            let two = weight_channel_statistics(&model.layers[l].ffn.w_in, 2.0).unwrap();
            println!("w_in layer {l}: sd6 {six:?} sd2 {two:?} (equal {})", six == two);
        }

        println!("== final norm values per arm ==");
        for arm in [Arm::Base, Arm::Y6Mean, Arm::Y6Zero, Arm::Y7Mean, Arm::Y7Zero] {
            let rows = final_rows(model, &tokens, arm);
            println!(
                "{arm:?}: probe {:.4} detect {:.4} shelf {:.4} ballast {:.4}",
                rows[[GEN_ROW, CH_PROBE]],
                rows[[GEN_ROW, CH_DETECT]],
                rows[[GEN_ROW, CH_SHELF]],
                rows[[GEN_ROW, CH_BALLAST]]
            );
        }

        println!("== perplexity probe ==");
        let stream = model.tokenize(shipped_wikitext());
        let config = EvalConfig::new(Dataset::Wikitext, 7, EVAL_SEQ).with_samples(24);
        let samples = sample_windows(&stream, &config).unwrap();
        let ppl = |plan: Option<&InterventionPlan>| {
            evaluate_ppl(model, &samples, plan, &config).unwrap().perplexity
        };
        let p_base = ppl(None);
        let p_mean = ppl(Some(&site_plan(Slot::Y6, Policy::ReplaceWithMean)));
        let p_zero = ppl(Some(&site_plan(Slot::Y6, Policy::ReplaceWithZero)));
        let p_late = ppl(Some(&site_plan(Slot::Y7, Policy::ReplaceWithZero)));
        println!(
            "base {p_base:.4} mean {p_mean:.4} ({:+.2}%) zero {p_zero:.4} ({:+.2}%) late-zero {p_late:.4} ({:+.2}%)",
            (p_mean / p_base - 1.0) * 100.0,
            (p_zero / p_base - 1.0) * 100.0,
            (p_late / p_base - 1.0) * 100.0
        );

        for sd in [4.0f32, 2.0] {
            let mut plans = Vec::new();
            for (name, weight) in [
                ("layers.0.attn.w_q", &model.layers[0].attn.w_q),
                ("layers.0.attn.w_k", &model.layers[0].attn.w_k),
                ("layers.0.attn.w_v", &model.layers[0].attn.w_v),
            ] {
                let rows = weight_channel_statistics(weight, sd).unwrap();
                if !rows.is_empty() {
                    plans.push(
                        plan_weight_ablation(
                            name,
                            &rows,
                            Policy::ReplaceWithMean,
                            MeanScope::PerChannel,
                            HIDDEN,
                        )
                        .unwrap(),
                    );
                }
            }
            let swept = evaluate_ppl_with_plans(model, &samples, &plans, &config)
                .unwrap()
                .perplexity;
            println!(
                "qkv sweep sd {sd}: {swept:.4} ({:+.2}%)",
                (swept / p_base - 1.0) * 100.0
            );
        }

        for sd in [6.0f32, 4.0, 2.0] {
            let mut plans = Vec::new();
            for (l, layer) in model.layers.iter().enumerate() {
                let rows = weight_channel_statistics(&layer.ffn.w_in, sd).unwrap();
                if !rows.is_empty() {
                    plans.push(
                        plan_weight_ablation(
                            &format!("layers.{l}.ffn.w_in"),
                            &rows,
                            Policy::ReplaceWithMean,
                            MeanScope::PerChannel,
                            FFN_DIM,
                        )
                        .unwrap(),
                    );
                }
            }
            let swept = evaluate_ppl_with_plans(model, &samples, &plans, &config)
                .unwrap()
                .perplexity;
            println!(
                "w_in sweep sd {sd}: {swept:.4} ({:+.2}%)",
                (swept / p_base - 1.0) * 100.0
            );
        }

        // Sensitivity of perplexity to the unigram coefficient, measured by
        // nudging the head bias along the unigram direction. The removal-arm
        // targets must all sit on one monotone branch of this curve.
        println!("== unigram coefficient curve ==");
        let corpus_tokens = model.tokenize(shipped_wikitext());
        let mut unigram = [1.0f64; VOCAB];
        for &t in &corpus_tokens {
            unigram[t as usize] += 1.0;
        }
        let total: f64 = unigram.iter().sum();
        let logp: Vec<f64> = unigram.iter().map(|c| (c / total).ln()).collect();
        let mean_logp = logp.iter().sum::<f64>() / VOCAB as f64;
        for delta in [-0.12f64, -0.06, 0.06, 0.12] {
            let mut nudged = model.clone();
            for v in 0..VOCAB {
                nudged.b_head[v] += (delta * UNIGRAM_SCALE * (logp[v] - mean_logp)) as f32;
            }
            let p = evaluate_ppl(&nudged, &samples, None, &config)
                .unwrap()
                .perplexity;
            println!(
                "alpha {:+.2}: {p:.4} ({:+.2}%)",
                ALPHA_BASE + delta,
                (p / p_base - 1.0) * 100.0
            );
        }
    }
}
