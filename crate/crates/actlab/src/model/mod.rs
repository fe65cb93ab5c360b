//! A small decoder-only transformer with named observation points.
//!
//! The forward pass can capture snapshots at any tap, apply an intervention
//! plan in-flow, and skip chosen residual additions. Parameters live in plain
//! `ndarray` tensors and round-trip through the checkpoint container.

pub mod checkpoint;

use ndarray::{s, Array1, Array2};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::co::NormKind;
use crate::error::{Error, Result};
use crate::intervene::{
    apply_gamma_edit, apply_tap_edit, apply_weight_rows_edit, InterventionPlan, PlanIndices,
    PlanTarget,
};
use crate::ma::MaCriteria;
use crate::tap::{ActivationSnapshot, BlockKind, Slot, TapPoint};
use checkpoint::Checkpoint;

/// Added inside the square root of every normalization denominator.
pub const NORM_EPS: f32 = 1e-5;

/// Feed-forward family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    /// Two matrices with a GeLU between them; `y6` names the same tensor as
    /// `y4`.
    StandardMlp,
    /// Gate and up projections with a SiLU on the gate; `y6` is their
    /// element-wise product.
    GatedMlp,
}

/// One normalization's parameters. `beta` is present exactly when the model
/// uses layer normalization.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: Array1<f32>,
    pub beta: Option<Array1<f32>>,
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: Array2<f32>,
    pub b_q: Array1<f32>,
    pub w_k: Array2<f32>,
    pub b_k: Array1<f32>,
    pub w_v: Array2<f32>,
    pub b_v: Array1<f32>,
    pub w_o: Array2<f32>,
    pub b_o: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct FfnParams {
    pub w_in: Array2<f32>,
    pub b_in: Array1<f32>,
    pub w_up: Option<Array2<f32>>,
    pub b_up: Option<Array1<f32>>,
    pub w_out: Array2<f32>,
    pub b_out: Array1<f32>,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1: NormParams,
    pub attn: AttentionParams,
    pub ln2: NormParams,
    pub ffn: FfnParams,
}

/// Shape and family summary of a loaded model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub head_count: usize,
    pub vocab_size: usize,
    pub max_sequence_length: usize,
    pub norm_kind: NormKind,
    pub ffn_kind: FfnKind,
}

/// Result of one instrumented forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f32>,
    /// Captured snapshots in flow order (layer ascending, slot order within a
    /// layer).
    pub snapshots: Vec<ActivationSnapshot>,
    pub pass_id: u64,
}

/// Saved state for reverting a parameter-level plan.
#[derive(Debug)]
pub struct PlanBackup {
    slots: Vec<BackupSlot>,
}

#[derive(Debug)]
enum BackupSlot {
    Gamma {
        layer: usize,
        block_kind: BlockKind,
        values: Array1<f32>,
    },
    Weight {
        name: String,
        values: Array2<f32>,
    },
}

#[derive(Debug)]
pub struct Model {
    pub model_id: String,
    pub norm_kind: NormKind,
    pub ffn_kind: FfnKind,
    pub head_count: usize,
    pub max_sequence_length: usize,
    pub wte: Array2<f32>,
    pub wpe: Array2<f32>,
    pub layers: Vec<LayerParams>,
    pub ln_f: NormParams,
    pub w_head: Array2<f32>,
    pub b_head: Array1<f32>,
    pass_counter: AtomicU64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            model_id: self.model_id.clone(),
            norm_kind: self.norm_kind,
            ffn_kind: self.ffn_kind,
            head_count: self.head_count,
            max_sequence_length: self.max_sequence_length,
            wte: self.wte.clone(),
            wpe: self.wpe.clone(),
            layers: self.layers.clone(),
            ln_f: self.ln_f.clone(),
            w_head: self.w_head.clone(),
            b_head: self.b_head.clone(),
            pass_counter: AtomicU64::new(self.pass_counter.load(Ordering::Relaxed)),
        }
    }
}

/// Explicit parameter bundle for assembling a model in code.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub model_id: String,
    pub norm_kind: NormKind,
    pub ffn_kind: FfnKind,
    pub head_count: usize,
    pub max_sequence_length: usize,
    pub wte: Array2<f32>,
    pub wpe: Array2<f32>,
    pub layers: Vec<LayerParams>,
    pub ln_f: NormParams,
    pub w_head: Array2<f32>,
    pub b_head: Array1<f32>,
}

/// Parameter values swapped in for the duration of one pass.
#[derive(Debug, Default)]
struct PassOverrides {
    gammas: HashMap<(usize, BlockKind), Array1<f32>>,
    weights: HashMap<String, Array2<f32>>,
}

impl PassOverrides {
    fn gamma<'a>(
        &'a self,
        layer: usize,
        block_kind: BlockKind,
        default: &'a Array1<f32>,
    ) -> &'a Array1<f32> {
        if self.gammas.is_empty() {
            return default;
        }
        self.gammas.get(&(layer, block_kind)).unwrap_or(default)
    }

    fn weight<'a>(&'a self, name: impl FnOnce() -> String, default: &'a Array2<f32>) -> &'a Array2<f32> {
        if self.weights.is_empty() {
            return default;
        }
        self.weights.get(&name()).unwrap_or(default)
    }
}

struct PassContext<'a> {
    taps: BTreeSet<TapPoint>,
    tap_plan: Option<&'a InterventionPlan>,
    snapshots: Vec<ActivationSnapshot>,
    pass_id: u64,
    ma_criteria: MaCriteria,
}

impl<'a> PassContext<'a> {
    /// Applies any matching tap-level edit to the flowing tensor, then
    /// records a snapshot if this tap was requested.
    fn touch(&mut self, slot: Slot, layer: usize, values: &mut Array2<f32>) -> Result<()> {
        if let Some(plan) = self.tap_plan {
            if let PlanTarget::Tap {
                slot: plan_slot,
                layer: plan_layer,
            } = &plan.target
            {
                if *plan_slot == slot && plan_layer.map_or(true, |l| l == layer) {
                    apply_tap_edit(values, plan, self.ma_criteria)?;
                }
            }
        }
        let tap = TapPoint::new(slot, layer);
        if self.taps.contains(&tap) {
            self.snapshots
                .push(ActivationSnapshot::new(tap, values.clone(), self.pass_id)?);
        }
        Ok(())
    }
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_56; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

const LAYER_WEIGHT_SUFFIXES: [&str; 7] = [
    "attn.w_q",
    "attn.w_k",
    "attn.w_v",
    "attn.w_o",
    "ffn.w_in",
    "ffn.w_up",
    "ffn.w_out",
];

impl Model {
    /// Builds a model from explicit parts with a fresh pass counter.
    pub fn from_parts(parts: ModelParts) -> Model {
        Model {
            model_id: parts.model_id,
            norm_kind: parts.norm_kind,
            ffn_kind: parts.ffn_kind,
            head_count: parts.head_count,
            max_sequence_length: parts.max_sequence_length,
            wte: parts.wte,
            wpe: parts.wpe,
            layers: parts.layers,
            ln_f: parts.ln_f,
            w_head: parts.w_head,
            b_head: parts.b_head,
            pass_counter: AtomicU64::new(0),
        }
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            model_id: self.model_id.clone(),
            layer_count: self.layers.len(),
            hidden_dim: self.wte.ncols(),
            ffn_dim: self.layers[0].ffn.w_in.nrows(),
            head_count: self.head_count,
            vocab_size: self.wte.nrows(),
            max_sequence_length: self.max_sequence_length,
            norm_kind: self.norm_kind,
            ffn_kind: self.ffn_kind,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wte.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.wte.nrows()
    }

    /// Byte-level tokenizer: each byte maps to its own id, with bytes past
    /// the vocabulary folded onto the final id.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let v = self.vocab_size() as u32;
        text.bytes()
            .map(|b| {
                let b = b as u32;
                if b < v {
                    b
                } else {
                    v - 1
                }
            })
            .collect()
    }

    /// Standard instrumented pass. `plan` may be tap-level (applied in-flow)
    /// or parameter-level (applied to pass-local parameter copies).
    pub fn run_with_taps(
        &self,
        tokens: &[u32],
        taps: &[TapPoint],
        plan: Option<&InterventionPlan>,
    ) -> Result<ForwardOutput> {
        self.forward(tokens, taps, plan, &BTreeSet::new())
    }

    /// Pass with the listed `(layer, sub-block)` residual additions skipped:
    /// the sub-block output continues alone instead of being added to its
    /// input.
    pub fn run_without_residuals(
        &self,
        tokens: &[u32],
        disabled: &[(usize, BlockKind)],
        taps: &[TapPoint],
    ) -> Result<ForwardOutput> {
        let mut set = BTreeSet::new();
        for &(layer, kind) in disabled {
            if layer >= self.layers.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "residual at layer {layer} of {}",
                    self.layers.len()
                )));
            }
            set.insert((layer, kind));
        }
        self.forward(tokens, taps, None, &set)
    }

    fn validate_taps(&self, taps: &[TapPoint]) -> Result<BTreeSet<TapPoint>> {
        let mut set = BTreeSet::new();
        for tap in taps {
            if tap.layer_index >= self.layers.len() {
                return Err(Error::TapUnresolvable(
                    tap.to_string(),
                    format!("model has {} layers", self.layers.len()),
                ));
            }
            if tap.block_kind != tap.slot.block_kind() {
                return Err(Error::TapUnresolvable(
                    tap.to_string(),
                    "slot belongs to the other sub-block".to_string(),
                ));
            }
            if tap.slot == Slot::Y5 && self.ffn_kind == FfnKind::StandardMlp {
                return Err(Error::TapUnresolvable(
                    tap.to_string(),
                    "standard_mlp has no up projection".to_string(),
                ));
            }
            set.insert(*tap);
        }
        Ok(set)
    }

    /// All taps resolvable for this model at every layer, in flow order.
    pub fn all_taps(&self) -> Vec<TapPoint> {
        let mut taps = Vec::new();
        for layer in 0..self.layers.len() {
            for slot in Slot::ALL {
                if slot == Slot::Y5 && self.ffn_kind == FfnKind::StandardMlp {
                    continue;
                }
                taps.push(TapPoint::new(slot, layer));
            }
        }
        taps
    }

    fn prepare_overrides(&self, plan: Option<&InterventionPlan>) -> Result<PassOverrides> {
        let mut overrides = PassOverrides::default();
        let Some(plan) = plan else {
            return Ok(overrides);
        };
        match &plan.target {
            PlanTarget::Tap { slot, layer } => {
                if let Some(l) = layer {
                    if *l >= self.layers.len() {
                        return Err(Error::TapUnresolvable(
                            format!("{slot}@{l}"),
                            format!("model has {} layers", self.layers.len()),
                        ));
                    }
                }
                if *slot == Slot::Y5 && self.ffn_kind == FfnKind::StandardMlp {
                    return Err(Error::TapUnresolvable(
                        slot.to_string(),
                        "standard_mlp has no up projection".to_string(),
                    ));
                }
                if matches!(plan.indices, PlanIndices::Channels { .. }) {
                    return Err(Error::InvalidConfig(
                        "tap plans take positions or detected indices".to_string(),
                    ));
                }
            }
            PlanTarget::Gamma { layer, block_kind } => {
                let gamma = self.gamma_ref(*layer, *block_kind)?;
                let mut edited = gamma.clone();
                let PlanIndices::Channels { channels } = &plan.indices else {
                    return Err(Error::InvalidConfig(
                        "gamma plans take channel indices".to_string(),
                    ));
                };
                apply_gamma_edit(&mut edited, channels, plan.policy)?;
                overrides.gammas.insert((*layer, *block_kind), edited);
            }
            PlanTarget::Weight { name } => {
                let PlanIndices::Channels { channels } = &plan.indices else {
                    return Err(Error::InvalidConfig(
                        "weight plans take row indices".to_string(),
                    ));
                };
                for qualified in self.resolve_weight_names(name)? {
                    let mut edited = self.weight_ref(&qualified)?.clone();
                    apply_weight_rows_edit(&mut edited, channels, plan.policy, plan.mean_scope)?;
                    overrides.weights.insert(qualified, edited);
                }
            }
        }
        Ok(overrides)
    }

    fn forward(
        &self,
        tokens: &[u32],
        taps: &[TapPoint],
        plan: Option<&InterventionPlan>,
        disabled: &BTreeSet<(usize, BlockKind)>,
    ) -> Result<ForwardOutput> {
        let t_len = tokens.len();
        if t_len == 0 {
            return Err(Error::InvalidConfig("empty token sequence".to_string()));
        }
        if t_len > self.max_sequence_length {
            return Err(Error::SequenceTooLong {
                len: t_len,
                max: self.max_sequence_length,
            });
        }
        let vocab = self.vocab_size() as u32;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidConfig(format!(
                "token id {bad} outside vocabulary of {vocab}"
            )));
        }
        let taps = self.validate_taps(taps)?;
        let overrides = self.prepare_overrides(plan)?;
        let tap_plan = plan.filter(|p| matches!(p.target, PlanTarget::Tap { .. }));
        let pass_id = self.pass_counter.fetch_add(1, Ordering::Relaxed);
        let mut ctx = PassContext {
            taps,
            tap_plan,
            snapshots: Vec::new(),
            pass_id,
            ma_criteria: MaCriteria::default(),
        };

        let hidden = self.hidden_dim();
        let heads = self.head_count;
        let dh = hidden / heads;
        let scale = 1.0 / (dh as f32).sqrt();

        let wte = overrides.weight(|| "wte".to_string(), &self.wte);
        let wpe = overrides.weight(|| "wpe".to_string(), &self.wpe);
        let mut h = Array2::<f32>::zeros((t_len, hidden));
        for (t, &id) in tokens.iter().enumerate() {
            let mut row = h.row_mut(t);
            row.assign(&wte.row(id as usize));
            row += &wpe.row(t);
        }

        for (l, layer) in self.layers.iter().enumerate() {
            ctx.touch(Slot::X1, l, &mut h)?;

            let gamma1 = overrides.gamma(l, BlockKind::SelfAttention, &layer.ln1.gamma);
            let mut x2 = self.norm(&h, gamma1, layer.ln1.beta.as_ref());
            ctx.touch(Slot::X2, l, &mut x2)?;

            let w_q = overrides.weight(|| format!("layers.{l}.attn.w_q"), &layer.attn.w_q);
            let w_k = overrides.weight(|| format!("layers.{l}.attn.w_k"), &layer.attn.w_k);
            let w_v = overrides.weight(|| format!("layers.{l}.attn.w_v"), &layer.attn.w_v);
            let w_o = overrides.weight(|| format!("layers.{l}.attn.w_o"), &layer.attn.w_o);

            let mut q = x2.dot(&w_q.t());
            q += &layer.attn.b_q;
            ctx.touch(Slot::X3, l, &mut q)?;
            let mut k = x2.dot(&w_k.t());
            k += &layer.attn.b_k;
            ctx.touch(Slot::X4, l, &mut k)?;
            let mut v = x2.dot(&w_v.t());
            v += &layer.attn.b_v;
            ctx.touch(Slot::X5, l, &mut v)?;

            // Scores for all heads side by side: column head * T + j holds the
            // attention of each query onto key j under that head. Recorded
            // before masking so every entry is finite; the causal mask is
            // applied inside the softmax below.
            let mut scores = Array2::<f32>::zeros((t_len, heads * t_len));
            for hd in 0..heads {
                let qs = q.slice(s![.., hd * dh..(hd + 1) * dh]);
                let ks = k.slice(s![.., hd * dh..(hd + 1) * dh]);
                let sh = qs.dot(&ks.t());
                let mut dest = scores.slice_mut(s![.., hd * t_len..(hd + 1) * t_len]);
                dest.assign(&sh);
                dest *= scale;
            }
            ctx.touch(Slot::X6, l, &mut scores)?;

            let mut probs = Array2::<f32>::zeros((t_len, heads * t_len));
            for hd in 0..heads {
                let base = hd * t_len;
                for i in 0..t_len {
                    let mut max_v = f32::NEG_INFINITY;
                    for j in 0..=i {
                        max_v = max_v.max(scores[(i, base + j)]);
                    }
                    let mut sum = 0.0f32;
                    for j in 0..=i {
                        let e = (scores[(i, base + j)] - max_v).exp();
                        probs[(i, base + j)] = e;
                        sum += e;
                    }
                    for j in 0..=i {
                        probs[(i, base + j)] /= sum;
                    }
                }
            }
            ctx.touch(Slot::X7, l, &mut probs)?;

            let mut attn_out = Array2::<f32>::zeros((t_len, hidden));
            for hd in 0..heads {
                let vs = v.slice(s![.., hd * dh..(hd + 1) * dh]);
                let ps = probs.slice(s![.., hd * t_len..(hd + 1) * t_len]);
                let oh = ps.dot(&vs);
                attn_out
                    .slice_mut(s![.., hd * dh..(hd + 1) * dh])
                    .assign(&oh);
            }
            ctx.touch(Slot::X8, l, &mut attn_out)?;

            let mut x9 = attn_out.dot(&w_o.t());
            x9 += &layer.attn.b_o;
            ctx.touch(Slot::X9, l, &mut x9)?;

            h = if disabled.contains(&(l, BlockKind::SelfAttention)) {
                x9
            } else {
                h + x9
            };

            ctx.touch(Slot::Y1, l, &mut h)?;
            let gamma2 = overrides.gamma(l, BlockKind::Ffn, &layer.ln2.gamma);
            let mut y2 = self.norm(&h, gamma2, layer.ln2.beta.as_ref());
            ctx.touch(Slot::Y2, l, &mut y2)?;

            let w_in = overrides.weight(|| format!("layers.{l}.ffn.w_in"), &layer.ffn.w_in);
            let w_out = overrides.weight(|| format!("layers.{l}.ffn.w_out"), &layer.ffn.w_out);

            let mut y3 = y2.dot(&w_in.t());
            y3 += &layer.ffn.b_in;
            ctx.touch(Slot::Y3, l, &mut y3)?;

            let y6 = match self.ffn_kind {
                FfnKind::StandardMlp => {
                    let mut y4 = y3.mapv(gelu);
                    ctx.touch(Slot::Y4, l, &mut y4)?;
                    // `y6` is the same tensor under its product-slot name, so
                    // edits and captures addressed to either name see it.
                    ctx.touch(Slot::Y6, l, &mut y4)?;
                    y4
                }
                FfnKind::GatedMlp => {
                    let mut y4 = y3.mapv(silu);
                    ctx.touch(Slot::Y4, l, &mut y4)?;
                    let w_up = overrides.weight(
                        || format!("layers.{l}.ffn.w_up"),
                        layer.ffn.w_up.as_ref().expect("gated_mlp has w_up"),
                    );
                    let mut y5 = y2.dot(&w_up.t());
                    y5 += layer.ffn.b_up.as_ref().expect("gated_mlp has b_up");
                    ctx.touch(Slot::Y5, l, &mut y5)?;
                    let mut y6 = &y4 * &y5;
                    ctx.touch(Slot::Y6, l, &mut y6)?;
                    y6
                }
            };

            let mut y7 = y6.dot(&w_out.t());
            y7 += &layer.ffn.b_out;
            ctx.touch(Slot::Y7, l, &mut y7)?;

            h = if disabled.contains(&(l, BlockKind::Ffn)) {
                y7
            } else {
                h + y7
            };
        }

        let z = self.norm(&h, &self.ln_f.gamma, self.ln_f.beta.as_ref());
        let w_head = overrides.weight(|| "head.w".to_string(), &self.w_head);
        let mut logits = z.dot(&w_head.t());
        logits += &self.b_head;

        Ok(ForwardOutput {
            logits,
            snapshots: ctx.snapshots,
            pass_id,
        })
    }

    /// Applies the final pre-head normalization to an externally assembled
    /// hidden state, using the model's own arithmetic.
    pub fn final_norm(&self, h: &Array2<f32>) -> Array2<f32> {
        self.norm(h, &self.ln_f.gamma, self.ln_f.beta.as_ref())
    }

    fn norm(&self, x: &Array2<f32>, gamma: &Array1<f32>, beta: Option<&Array1<f32>>) -> Array2<f32> {
        let channels = x.ncols();
        let mut out = Array2::<f32>::zeros(x.raw_dim());
        for (t, row) in x.outer_iter().enumerate() {
            match self.norm_kind {
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
                    let denom = (var + NORM_EPS as f64).sqrt();
                    for (c, v) in row.iter().enumerate() {
                        let standardized = ((*v as f64 - mean) / denom) as f32;
                        let mut y = standardized * gamma[c];
                        if let Some(b) = beta {
                            y += b[c];
                        }
                        out[(t, c)] = y;
                    }
                }
                NormKind::RmsNorm => {
                    let ms = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>()
                        / channels as f64;
                    let denom = (ms + NORM_EPS as f64).sqrt();
                    for (c, v) in row.iter().enumerate() {
                        out[(t, c)] = ((*v as f64 / denom) as f32) * gamma[c];
                    }
                }
            }
        }
        out
    }

    fn gamma_ref(&self, layer: usize, block_kind: BlockKind) -> Result<&Array1<f32>> {
        let params = self.layers.get(layer).ok_or_else(|| {
            Error::IndexOutOfRange(format!("layer {layer} of {}", self.layers.len()))
        })?;
        Ok(match block_kind {
            BlockKind::SelfAttention => &params.ln1.gamma,
            BlockKind::Ffn => &params.ln2.gamma,
        })
    }

    fn gamma_mut(&mut self, layer: usize, block_kind: BlockKind) -> Result<&mut Array1<f32>> {
        let count = self.layers.len();
        let params = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::IndexOutOfRange(format!("layer {layer} of {count}")))?;
        Ok(match block_kind {
            BlockKind::SelfAttention => &mut params.ln1.gamma,
            BlockKind::Ffn => &mut params.ln2.gamma,
        })
    }

    /// Resolves a plan's weight name to concrete per-layer names. A name with
    /// a `layers.N.` prefix (or a global name) maps to itself; a bare family
    /// name maps to that matrix in every layer.
    pub fn resolve_weight_names(&self, name: &str) -> Result<Vec<String>> {
        if name == "wte" || name == "wpe" || name == "head.w" {
            return Ok(vec![name.to_string()]);
        }
        if let Some(rest) = name.strip_prefix("layers.") {
            let (layer_str, suffix) = rest.split_once('.').ok_or_else(|| {
                Error::WeightUnknown(name.to_string())
            })?;
            let layer: usize = layer_str
                .parse()
                .map_err(|_| Error::WeightUnknown(name.to_string()))?;
            if layer >= self.layers.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "layer {layer} of {}",
                    self.layers.len()
                )));
            }
            if !LAYER_WEIGHT_SUFFIXES.contains(&suffix) {
                return Err(Error::WeightUnknown(name.to_string()));
            }
            if suffix == "ffn.w_up" && self.ffn_kind == FfnKind::StandardMlp {
                return Err(Error::WeightUnknown(format!(
                    "{name} (standard_mlp has no up projection)"
                )));
            }
            return Ok(vec![name.to_string()]);
        }
        if LAYER_WEIGHT_SUFFIXES.contains(&name) {
            if name == "ffn.w_up" && self.ffn_kind == FfnKind::StandardMlp {
                return Err(Error::WeightUnknown(format!(
                    "{name} (standard_mlp has no up projection)"
                )));
            }
            return Ok((0..self.layers.len())
                .map(|l| format!("layers.{l}.{name}"))
                .collect());
        }
        Err(Error::WeightUnknown(name.to_string()))
    }

    /// Borrow a weight matrix by fully qualified name.
    pub fn weight_ref(&self, qualified: &str) -> Result<&Array2<f32>> {
        match qualified {
            "wte" => return Ok(&self.wte),
            "wpe" => return Ok(&self.wpe),
            "head.w" => return Ok(&self.w_head),
            _ => {}
        }
        let rest = qualified
            .strip_prefix("layers.")
            .ok_or_else(|| Error::WeightUnknown(qualified.to_string()))?;
        let (layer_str, suffix) = rest
            .split_once('.')
            .ok_or_else(|| Error::WeightUnknown(qualified.to_string()))?;
        let layer: usize = layer_str
            .parse()
            .map_err(|_| Error::WeightUnknown(qualified.to_string()))?;
        let params = self.layers.get(layer).ok_or_else(|| {
            Error::IndexOutOfRange(format!("layer {layer} of {}", self.layers.len()))
        })?;
        match suffix {
            "attn.w_q" => Ok(&params.attn.w_q),
            "attn.w_k" => Ok(&params.attn.w_k),
            "attn.w_v" => Ok(&params.attn.w_v),
            "attn.w_o" => Ok(&params.attn.w_o),
            "ffn.w_in" => Ok(&params.ffn.w_in),
            "ffn.w_up" => params
                .ffn
                .w_up
                .as_ref()
                .ok_or_else(|| Error::WeightUnknown(qualified.to_string())),
            "ffn.w_out" => Ok(&params.ffn.w_out),
            _ => Err(Error::WeightUnknown(qualified.to_string())),
        }
    }

    fn weight_mut(&mut self, qualified: &str) -> Result<&mut Array2<f32>> {
        match qualified {
            "wte" => return Ok(&mut self.wte),
            "wpe" => return Ok(&mut self.wpe),
            "head.w" => return Ok(&mut self.w_head),
            _ => {}
        }
        let count = self.layers.len();
        let rest = qualified
            .strip_prefix("layers.")
            .ok_or_else(|| Error::WeightUnknown(qualified.to_string()))?;
        let (layer_str, suffix) = rest
            .split_once('.')
            .ok_or_else(|| Error::WeightUnknown(qualified.to_string()))?;
        let layer: usize = layer_str
            .parse()
            .map_err(|_| Error::WeightUnknown(qualified.to_string()))?;
        let params = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| Error::IndexOutOfRange(format!("layer {layer} of {count}")))?;
        match suffix {
            "attn.w_q" => Ok(&mut params.attn.w_q),
            "attn.w_k" => Ok(&mut params.attn.w_k),
            "attn.w_v" => Ok(&mut params.attn.w_v),
            "attn.w_o" => Ok(&mut params.attn.w_o),
            "ffn.w_in" => Ok(&mut params.ffn.w_in),
            "ffn.w_up" => params
                .ffn
                .w_up
                .as_mut()
                .ok_or_else(|| Error::WeightUnknown(qualified.to_string())),
            "ffn.w_out" => Ok(&mut params.ffn.w_out),
            _ => Err(Error::WeightUnknown(qualified.to_string())),
        }
    }

    /// Applies a parameter-level plan in place, returning the state needed to
    /// undo it bit-exactly.
    pub fn apply_parameter_plan(&mut self, plan: &InterventionPlan) -> Result<PlanBackup> {
        let mut slots = Vec::new();
        match &plan.target {
            PlanTarget::Tap { .. } => {
                return Err(Error::InvalidConfig(
                    "tap plans apply during passes, not to parameters".to_string(),
                ));
            }
            PlanTarget::Gamma { layer, block_kind } => {
                let PlanIndices::Channels { channels } = &plan.indices else {
                    return Err(Error::InvalidConfig(
                        "gamma plans take channel indices".to_string(),
                    ));
                };
                let gamma = self.gamma_mut(*layer, *block_kind)?;
                slots.push(BackupSlot::Gamma {
                    layer: *layer,
                    block_kind: *block_kind,
                    values: gamma.clone(),
                });
                apply_gamma_edit(gamma, channels, plan.policy)?;
            }
            PlanTarget::Weight { name } => {
                let PlanIndices::Channels { channels } = &plan.indices else {
                    return Err(Error::InvalidConfig(
                        "weight plans take row indices".to_string(),
                    ));
                };
                let channels = channels.clone();
                let policy = plan.policy;
                let scope = plan.mean_scope;
                for qualified in self.resolve_weight_names(name)? {
                    let w = self.weight_mut(&qualified)?;
                    slots.push(BackupSlot::Weight {
                        name: qualified,
                        values: w.clone(),
                    });
                    apply_weight_rows_edit(w, &channels, policy, scope)?;
                }
            }
        }
        Ok(PlanBackup { slots })
    }

    /// Restores parameters saved by [`Model::apply_parameter_plan`].
    pub fn revert_parameter_plan(&mut self, backup: PlanBackup) -> Result<()> {
        for slot in backup.slots {
            match slot {
                BackupSlot::Gamma {
                    layer,
                    block_kind,
                    values,
                } => {
                    *self.gamma_mut(layer, block_kind)? = values;
                }
                BackupSlot::Weight { name, values } => {
                    *self.weight_mut(&name)? = values;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.descriptor();
        let mut ckpt = Checkpoint::default();
        let mut meta = BTreeMap::new();
        meta.insert("architecture".to_string(), "decoder_only_causal".to_string());
        meta.insert("model_id".to_string(), self.model_id.clone());
        meta.insert("head_count".to_string(), d.head_count.to_string());
        meta.insert(
            "max_sequence_length".to_string(),
            d.max_sequence_length.to_string(),
        );
        meta.insert(
            "norm_kind".to_string(),
            match self.norm_kind {
                NormKind::LayerNorm => "layernorm".to_string(),
                NormKind::RmsNorm => "rmsnorm".to_string(),
            },
        );
        meta.insert(
            "ffn_kind".to_string(),
            match self.ffn_kind {
                FfnKind::StandardMlp => "standard_mlp".to_string(),
                FfnKind::GatedMlp => "gated_mlp".to_string(),
            },
        );
        ckpt.metadata = meta;

        ckpt.insert2("wte", &self.wte);
        ckpt.insert2("wpe", &self.wpe);
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{l}.{s}");
            ckpt.insert1(&p("ln1.gamma"), &layer.ln1.gamma);
            if let Some(b) = &layer.ln1.beta {
                ckpt.insert1(&p("ln1.beta"), b);
            }
            ckpt.insert2(&p("attn.w_q"), &layer.attn.w_q);
            ckpt.insert1(&p("attn.b_q"), &layer.attn.b_q);
            ckpt.insert2(&p("attn.w_k"), &layer.attn.w_k);
            ckpt.insert1(&p("attn.b_k"), &layer.attn.b_k);
            ckpt.insert2(&p("attn.w_v"), &layer.attn.w_v);
            ckpt.insert1(&p("attn.b_v"), &layer.attn.b_v);
            ckpt.insert2(&p("attn.w_o"), &layer.attn.w_o);
            ckpt.insert1(&p("attn.b_o"), &layer.attn.b_o);
            ckpt.insert1(&p("ln2.gamma"), &layer.ln2.gamma);
            if let Some(b) = &layer.ln2.beta {
                ckpt.insert1(&p("ln2.beta"), b);
            }
            ckpt.insert2(&p("ffn.w_in"), &layer.ffn.w_in);
            ckpt.insert1(&p("ffn.b_in"), &layer.ffn.b_in);
            if let Some(w) = &layer.ffn.w_up {
                ckpt.insert2(&p("ffn.w_up"), w);
            }
            if let Some(b) = &layer.ffn.b_up {
                ckpt.insert1(&p("ffn.b_up"), b);
            }
            ckpt.insert2(&p("ffn.w_out"), &layer.ffn.w_out);
            ckpt.insert1(&p("ffn.b_out"), &layer.ffn.b_out);
        }
        ckpt.insert1("ln_f.gamma", &self.ln_f.gamma);
        if let Some(b) = &self.ln_f.beta {
            ckpt.insert1("ln_f.beta", b);
        }
        ckpt.insert2("head.w", &self.w_head);
        ckpt.insert1("head.b", &self.b_head);
        ckpt.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Model> {
        let ckpt = Checkpoint::read_from(path)?;
        let arch = ckpt.meta("architecture")?;
        if arch != "decoder_only_causal" {
            return Err(Error::UnsupportedArchitecture(arch.to_string()));
        }
        let model_id = ckpt.meta("model_id")?.to_string();
        let head_count: usize = ckpt
            .meta("head_count")?
            .parse()
            .map_err(|_| Error::Checkpoint("head_count is not a number".to_string()))?;
        let max_sequence_length: usize = ckpt
            .meta("max_sequence_length")?
            .parse()
            .map_err(|_| Error::Checkpoint("max_sequence_length is not a number".to_string()))?;
        let norm_kind = match ckpt.meta("norm_kind")? {
            "layernorm" => NormKind::LayerNorm,
            "rmsnorm" => NormKind::RmsNorm,
            other => return Err(Error::UnsupportedArchitecture(format!("norm_kind {other}"))),
        };
        let ffn_kind = match ckpt.meta("ffn_kind")? {
            "standard_mlp" => FfnKind::StandardMlp,
            "gated_mlp" => FfnKind::GatedMlp,
            other => return Err(Error::UnsupportedArchitecture(format!("ffn_kind {other}"))),
        };

        let wte = ckpt.get2("wte")?;
        let wpe = ckpt.get2("wpe")?;
        let hidden = wte.ncols();
        if wpe.ncols() != hidden {
            return Err(Error::Checkpoint(
                "wpe width does not match wte".to_string(),
            ));
        }
        if hidden % head_count != 0 {
            return Err(Error::UnsupportedArchitecture(format!(
                "hidden dim {hidden} not divisible by {head_count} heads"
            )));
        }

        let mut layer_count = 0;
        while ckpt
            .tensors
            .contains_key(&format!("layers.{layer_count}.attn.w_q"))
        {
            layer_count += 1;
        }
        if layer_count == 0 {
            return Err(Error::Checkpoint("no layers found".to_string()));
        }

        let load_norm = |prefix: &str| -> Result<NormParams> {
            let gamma = ckpt.get1(&format!("{prefix}.gamma"))?;
            let beta = match norm_kind {
                NormKind::LayerNorm => Some(ckpt.get1(&format!("{prefix}.beta"))?),
                NormKind::RmsNorm => {
                    if ckpt.tensors.contains_key(&format!("{prefix}.beta")) {
                        return Err(Error::UnsupportedArchitecture(format!(
                            "{prefix}.beta present in an rmsnorm model"
                        )));
                    }
                    None
                }
            };
            if gamma.len() != hidden {
                return Err(Error::Checkpoint(format!(
                    "{prefix}.gamma length {} does not match hidden dim {hidden}",
                    gamma.len()
                )));
            }
            Ok(NormParams { gamma, beta })
        };

        let mut layers = Vec::with_capacity(layer_count);
        for l in 0..layer_count {
            let p = |s: &str| format!("layers.{l}.{s}");
            let attn = AttentionParams {
                w_q: ckpt.get2(&p("attn.w_q"))?,
                b_q: ckpt.get1(&p("attn.b_q"))?,
                w_k: ckpt.get2(&p("attn.w_k"))?,
                b_k: ckpt.get1(&p("attn.b_k"))?,
                w_v: ckpt.get2(&p("attn.w_v"))?,
                b_v: ckpt.get1(&p("attn.b_v"))?,
                w_o: ckpt.get2(&p("attn.w_o"))?,
                b_o: ckpt.get1(&p("attn.b_o"))?,
            };
            let (w_up, b_up) = match ffn_kind {
                FfnKind::GatedMlp => (
                    Some(ckpt.get2(&p("ffn.w_up"))?),
                    Some(ckpt.get1(&p("ffn.b_up"))?),
                ),
                FfnKind::StandardMlp => (None, None),
            };
            let ffn = FfnParams {
                w_in: ckpt.get2(&p("ffn.w_in"))?,
                b_in: ckpt.get1(&p("ffn.b_in"))?,
                w_up,
                b_up,
                w_out: ckpt.get2(&p("ffn.w_out"))?,
                b_out: ckpt.get1(&p("ffn.b_out"))?,
            };
            layers.push(LayerParams {
                ln1: load_norm(&p("ln1"))?,
                attn,
                ln2: load_norm(&p("ln2"))?,
                ffn,
            });
        }

        let ln_f = load_norm("ln_f")?;
        let w_head = ckpt.get2("head.w")?;
        let b_head = ckpt.get1("head.b")?;

        Ok(Model {
            model_id,
            norm_kind,
            ffn_kind,
            head_count,
            max_sequence_length,
            wte,
            wpe,
            layers,
            ln_f,
            w_head,
            b_head,
            pass_counter: AtomicU64::new(0),
        })
    }
}
