//! Named observation points inside a decoder block, and the snapshots captured
//! at them.
//!
//! Each block exposes sixteen slots: `x1`..`x9` inside the self-attention
//! sub-block and `y1`..`y7` inside the feed-forward sub-block. A slot plus a
//! layer index forms a [`TapPoint`]. Capturing the tensor that flows through a
//! tap during one forward pass yields an [`ActivationSnapshot`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// The two sub-blocks of a decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    SelfAttention,
    Ffn,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::SelfAttention => write!(f, "self_attention"),
            BlockKind::Ffn => write!(f, "ffn"),
        }
    }
}

/// One of the sixteen per-layer observation slots.
///
/// Self-attention slots:
/// - `x1` block input (pre-norm residual stream)
/// - `x2` normalization output
/// - `x3` query projection
/// - `x4` key projection
/// - `x5` value projection
/// - `x6` attention scores before softmax (recorded unmasked so every entry is
///   finite; the causal mask is applied inside the softmax that follows)
/// - `x7` attention probabilities after masked softmax
/// - `x8` attention-weighted values
/// - `x9` output projection, before the residual add
///
/// Feed-forward slots:
/// - `y1` block input
/// - `y2` normalization output
/// - `y3` first linear (the gate projection in gated networks)
/// - `y4` activation output
/// - `y5` up projection (gated networks only)
/// - `y6` element-wise product of `y4` and `y5` in gated networks; in plain
///   two-matrix networks the same tensor as `y4` under a second name
/// - `y7` down projection, before the residual add
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    X1,
    X2,
    X3,
    X4,
    X5,
    X6,
    X7,
    X8,
    X9,
    Y1,
    Y2,
    Y3,
    Y4,
    Y5,
    Y6,
    Y7,
}

impl Slot {
    pub const ALL: [Slot; 16] = [
        Slot::X1,
        Slot::X2,
        Slot::X3,
        Slot::X4,
        Slot::X5,
        Slot::X6,
        Slot::X7,
        Slot::X8,
        Slot::X9,
        Slot::Y1,
        Slot::Y2,
        Slot::Y3,
        Slot::Y4,
        Slot::Y5,
        Slot::Y6,
        Slot::Y7,
    ];

    pub fn block_kind(self) -> BlockKind {
        match self {
            Slot::X1
            | Slot::X2
            | Slot::X3
            | Slot::X4
            | Slot::X5
            | Slot::X6
            | Slot::X7
            | Slot::X8
            | Slot::X9 => BlockKind::SelfAttention,
            _ => BlockKind::Ffn,
        }
    }

    /// Position of the slot in forward-flow order within its layer, 0-based.
    pub fn ordinal(self) -> usize {
        Slot::ALL.iter().position(|s| *s == self).unwrap()
    }

    pub fn parse(text: &str) -> Result<Slot> {
        for slot in Slot::ALL {
            if slot.to_string() == text {
                return Ok(slot);
            }
        }
        Err(Error::TapUnresolvable(
            text.to_string(),
            "unknown slot name".to_string(),
        ))
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Slot::X1 => "x1",
            Slot::X2 => "x2",
            Slot::X3 => "x3",
            Slot::X4 => "x4",
            Slot::X5 => "x5",
            Slot::X6 => "x6",
            Slot::X7 => "x7",
            Slot::X8 => "x8",
            Slot::X9 => "x9",
            Slot::Y1 => "y1",
            Slot::Y2 => "y2",
            Slot::Y3 => "y3",
            Slot::Y4 => "y4",
            Slot::Y5 => "y5",
            Slot::Y6 => "y6",
            Slot::Y7 => "y7",
        };
        write!(f, "{name}")
    }
}

/// A slot bound to a concrete layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TapPoint {
    pub block_kind: BlockKind,
    pub slot: Slot,
    pub layer_index: usize,
}

impl TapPoint {
    /// Builds a tap point, rejecting a slot paired with the wrong sub-block.
    pub fn new(slot: Slot, layer_index: usize) -> TapPoint {
        TapPoint {
            block_kind: slot.block_kind(),
            slot,
            layer_index,
        }
    }

    /// Parses `"x3@2"` style labels (slot at layer).
    pub fn parse(text: &str) -> Result<TapPoint> {
        let (slot_part, layer_part) = text.split_once('@').ok_or_else(|| {
            Error::TapUnresolvable(text.to_string(), "expected slot@layer".to_string())
        })?;
        let slot = Slot::parse(slot_part)?;
        let layer_index: usize = layer_part.parse().map_err(|_| {
            Error::TapUnresolvable(text.to_string(), "layer index is not a number".to_string())
        })?;
        Ok(TapPoint::new(slot, layer_index))
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.slot, self.layer_index)
    }
}

/// Tensor values captured at one tap during one forward pass.
///
/// The value matrix is laid out tokens x channels. For the score and
/// probability slots (`x6`, `x7`) the channel axis concatenates all heads, so
/// its width is `heads * tokens`.
#[derive(Debug, Clone)]
pub struct ActivationSnapshot {
    pub tap: TapPoint,
    pub values: Array2<f32>,
    pub pass_id: u64,
}

impl ActivationSnapshot {
    /// Wraps captured values, rejecting empty or non-finite tensors.
    pub fn new(tap: TapPoint, values: Array2<f32>, pass_id: u64) -> Result<ActivationSnapshot> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptySnapshot);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(tap.to_string()));
        }
        Ok(ActivationSnapshot {
            tap,
            values,
            pass_id,
        })
    }

    pub fn token_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn channel_count(&self) -> usize {
        self.values.ncols()
    }
}
