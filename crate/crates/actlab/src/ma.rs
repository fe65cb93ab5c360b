//! Detection and classification of massive activations.
//!
//! A massive activation (MA) is a single scalar entry of an activation tensor
//! that is simultaneously large in absolute terms and large relative to the
//! rest of the tensor. Detected events can be classified as genuine stream
//! features (true MAs) or artifacts of the residual bypass (fake MAs) by
//! re-running the pass with residual additions disabled and checking which
//! events persist.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{FfnKind, Model};
use crate::tap::{ActivationSnapshot, BlockKind, Slot, TapPoint};

/// Thresholds defining a massive activation.
///
/// An entry `v` qualifies when `|v| > abs_floor` (strict) and
/// `|v| >= median_ratio * median(|tensor|)` over the whole snapshot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaCriteria {
    pub abs_floor: f32,
    pub median_ratio: f32,
}

impl Default for MaCriteria {
    fn default() -> Self {
        MaCriteria {
            abs_floor: 100.0,
            median_ratio: 1000.0,
        }
    }
}

/// Classification state of a detected event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaKind {
    Unclassified,
    TrueMa,
    FakeMa,
}

/// One detected massive activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassiveActivationEvent {
    pub tap: TapPoint,
    pub token_index: usize,
    pub channel_index: usize,
    pub value: f32,
    pub kind: MaKind,
}

/// Median of absolute values over every entry of the tensor.
///
/// With an even number of entries the median is the mean of the two middle
/// order statistics.
pub fn abs_median(values: &Array2<f32>) -> f32 {
    let mut mags: Vec<f32> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = mags.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    }
}

/// Positions `(token, channel)` of entries satisfying the MA criteria.
///
/// Returned in row-major order (token ascending, then channel), which makes
/// repeated detection on the same tensor deterministic.
pub fn detect_ma_positions(values: &Array2<f32>, criteria: MaCriteria) -> Vec<(usize, usize)> {
    let median = abs_median(values);
    let rel_floor = criteria.median_ratio * median;
    let mut hits = Vec::new();
    for ((t, c), v) in values.indexed_iter() {
        let mag = v.abs();
        if mag > criteria.abs_floor && mag >= rel_floor {
            hits.push((t, c));
        }
    }
    hits
}

/// Scans a snapshot and returns every qualifying event, unclassified.
pub fn detect_mas(
    snapshot: &ActivationSnapshot,
    criteria: MaCriteria,
) -> Result<Vec<MassiveActivationEvent>> {
    if snapshot.values.is_empty() {
        return Err(Error::EmptySnapshot);
    }
    let events = detect_ma_positions(&snapshot.values, criteria)
        .into_iter()
        .map(|(t, c)| MassiveActivationEvent {
            tap: snapshot.tap,
            token_index: t,
            channel_index: c,
            value: snapshot.values[(t, c)],
            kind: MaKind::Unclassified,
        })
        .collect();
    Ok(events)
}

/// Which residual additions were active during the pass a profile came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// All residual additions performed as usual.
    Full,
    /// The listed `(layer, sub-block)` residual additions were skipped; the
    /// sub-block output flowed on alone.
    Disabled(Vec<(usize, BlockKind)>),
}

/// Identity of the pass a profile was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileProvenance {
    pub model_id: String,
    /// Hex digest of the input token ids.
    pub input_digest: String,
    /// Slot the profile was scanned at (the same slot across layers).
    pub slot: Slot,
    pub residual_mode: ResidualMode,
}

/// Per-layer lists of the strongest detected events for one pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaProfile {
    /// `per_layer[l]` holds the events of layer `l`, strongest first.
    pub per_layer: Vec<Vec<MassiveActivationEvent>>,
    /// Cap on events kept per layer; `None` keeps everything.
    pub top_k: Option<usize>,
    pub pass_id: u64,
    pub provenance: ProfileProvenance,
}

impl MaProfile {
    /// Builds a profile from one snapshot per layer, all taken at the same
    /// slot during a single pass. Events are ordered by descending magnitude
    /// with `(token, channel)` as a deterministic tie-break, then truncated to
    /// `top_k` when given.
    pub fn from_snapshots(
        snapshots: &[ActivationSnapshot],
        criteria: MaCriteria,
        top_k: Option<usize>,
        provenance: ProfileProvenance,
    ) -> Result<MaProfile> {
        let mut per_layer = Vec::with_capacity(snapshots.len());
        let mut pass_id = 0;
        for snap in snapshots {
            pass_id = snap.pass_id;
            let mut events = detect_mas(snap, criteria)?;
            events.sort_by(|a, b| {
                b.value
                    .abs()
                    .partial_cmp(&a.value.abs())
                    .unwrap()
                    .then(a.token_index.cmp(&b.token_index))
                    .then(a.channel_index.cmp(&b.channel_index))
            });
            if let Some(k) = top_k {
                events.truncate(k);
            }
            per_layer.push(events);
        }
        Ok(MaProfile {
            per_layer,
            top_k,
            pass_id,
            provenance,
        })
    }

    pub fn total_events(&self) -> usize {
        self.per_layer.iter().map(|l| l.len()).sum()
    }

    fn contains(&self, layer: usize, token: usize, channel: usize) -> bool {
        self.per_layer
            .get(layer)
            .map(|events| {
                events
                    .iter()
                    .any(|e| e.token_index == token && e.channel_index == channel)
            })
            .unwrap_or(false)
    }
}

/// Marks each baseline event true or fake depending on whether an event at the
/// same `(layer, token, channel)` persists when residuals are disabled.
///
/// Both profiles must come from the same model, input, and slot; the baseline
/// must have residuals on and the comparison pass must have at least one
/// residual disabled.
pub fn classify_tma_fma(baseline: &MaProfile, no_residual: &MaProfile) -> Result<MaProfile> {
    let b = &baseline.provenance;
    let n = &no_residual.provenance;
    if b.model_id != n.model_id {
        return Err(Error::ProvenanceMismatch("model ids differ".to_string()));
    }
    if b.input_digest != n.input_digest {
        return Err(Error::ProvenanceMismatch("input tokens differ".to_string()));
    }
    if b.slot != n.slot {
        return Err(Error::ProvenanceMismatch("slots differ".to_string()));
    }
    if b.residual_mode != ResidualMode::Full {
        return Err(Error::ProvenanceMismatch(
            "baseline profile has residuals disabled".to_string(),
        ));
    }
    match &n.residual_mode {
        ResidualMode::Full => {
            return Err(Error::ProvenanceMismatch(
                "comparison profile has all residuals enabled".to_string(),
            ));
        }
        ResidualMode::Disabled(list) if list.is_empty() => {
            return Err(Error::ProvenanceMismatch(
                "comparison profile disables no residuals".to_string(),
            ));
        }
        ResidualMode::Disabled(_) => {}
    }
    if baseline.per_layer.len() != no_residual.per_layer.len() {
        return Err(Error::ProvenanceMismatch(
            "profiles cover different layer counts".to_string(),
        ));
    }

    let mut classified = baseline.clone();
    for (layer, events) in classified.per_layer.iter_mut().enumerate() {
        for event in events.iter_mut() {
            event.kind = if no_residual.contains(layer, event.token_index, event.channel_index) {
                MaKind::TrueMa
            } else {
                MaKind::FakeMa
            };
        }
    }
    Ok(classified)
}

/// A matched pair of true MAs at the same `(token, channel)` in an early and a
/// late layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendPair {
    pub channel_index: usize,
    pub token_index: usize,
    pub initial_layer: usize,
    pub initial_value: f32,
    pub final_layer: usize,
    pub final_value: f32,
    pub sign_flipped: bool,
}

/// Early-layer true MAs with no matching final-layer event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnmatchedInitial {
    pub channel_index: usize,
    pub token_index: usize,
    pub layer: usize,
    pub value: f32,
}

/// Where the initial and final layer windows were drawn.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrendConfig {
    /// Leading fraction of layers counted as initial (rounded up).
    pub initial_fraction: f64,
    /// Trailing layer count treated as final.
    pub final_count: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            initial_fraction: 0.25,
            final_count: 2,
        }
    }
}

/// Cross-layer recurrence report for true MAs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendReport {
    pub records: Vec<TrendPair>,
    pub unmatched_initial: Vec<UnmatchedInitial>,
    pub initial_layers: Vec<usize>,
    pub final_layers: Vec<usize>,
}

impl TrendReport {
    pub fn pairs_found(&self) -> usize {
        self.records.len()
    }
}

/// Tracks whether true MAs in the leading layers recur in the trailing layers
/// at the same `(token, channel)`, and whether the sign flips.
///
/// For each position hosting a true MA in the initial window, the earliest
/// such event is paired with the latest true MA at the same position in the
/// final window. Positions without a final-window match are listed separately.
pub fn trend_analysis(profile: &MaProfile, config: TrendConfig) -> TrendReport {
    let layer_count = profile.per_layer.len();
    let initial_count = ((layer_count as f64) * config.initial_fraction).ceil() as usize;
    let initial_count = initial_count.clamp(1, layer_count);
    let final_start = layer_count.saturating_sub(config.final_count);
    let initial_layers: Vec<usize> = (0..initial_count).collect();
    let final_layers: Vec<usize> = (final_start..layer_count).collect();

    // Earliest initial-window true MA per position.
    let mut initials: Vec<(usize, usize, usize, f32)> = Vec::new();
    for &layer in &initial_layers {
        for event in &profile.per_layer[layer] {
            if event.kind != MaKind::TrueMa {
                continue;
            }
            let pos_seen = initials
                .iter()
                .any(|&(t, c, _, _)| t == event.token_index && c == event.channel_index);
            if !pos_seen {
                initials.push((event.token_index, event.channel_index, layer, event.value));
            }
        }
    }

    let mut records = Vec::new();
    let mut unmatched = Vec::new();
    for (token, channel, init_layer, init_value) in initials {
        let mut last_match: Option<(usize, f32)> = None;
        for &layer in &final_layers {
            for event in &profile.per_layer[layer] {
                if event.kind == MaKind::TrueMa
                    && event.token_index == token
                    && event.channel_index == channel
                {
                    last_match = Some((layer, event.value));
                }
            }
        }
        match last_match {
            Some((final_layer, final_value)) => records.push(TrendPair {
                channel_index: channel,
                token_index: token,
                initial_layer: init_layer,
                initial_value: init_value,
                final_layer,
                final_value,
                sign_flipped: (init_value < 0.0) != (final_value < 0.0),
            }),
            None => unmatched.push(UnmatchedInitial {
                channel_index: channel,
                token_index: token,
                layer: init_layer,
                value: init_value,
            }),
        }
    }

    TrendReport {
        records,
        unmatched_initial: unmatched,
        initial_layers,
        final_layers,
    }
}

/// Hex digest identifying a token sequence.
pub fn token_digest(tokens: &[u32]) -> String {
    let mut hasher = Sha256::new();
    for t in tokens {
        hasher.update(t.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Runs one pass capturing `slot` at every layer and builds its MA profile.
///
/// `disabled_residuals` switches the pass (and the recorded provenance) to
/// residual-skipping mode; an empty list is an ordinary pass.
pub fn profile_stream(
    model: &Model,
    tokens: &[u32],
    slot: Slot,
    criteria: MaCriteria,
    top_k: Option<usize>,
    disabled_residuals: &[(usize, BlockKind)],
) -> Result<MaProfile> {
    let taps: Vec<TapPoint> = (0..model.layer_count())
        .map(|l| TapPoint::new(slot, l))
        .collect();
    let out = if disabled_residuals.is_empty() {
        model.run_with_taps(tokens, &taps, None)?
    } else {
        model.run_without_residuals(tokens, disabled_residuals, &taps)?
    };
    let residual_mode = if disabled_residuals.is_empty() {
        ResidualMode::Full
    } else {
        ResidualMode::Disabled(disabled_residuals.to_vec())
    };
    let provenance = ProfileProvenance {
        model_id: model.model_id.clone(),
        input_digest: token_digest(tokens),
        slot,
        residual_mode,
    };
    MaProfile::from_snapshots(&out.snapshots, criteria, top_k, provenance)
}

/// Every `(layer, sub-block)` residual pair of a model, for full-disable runs.
pub fn all_residuals(model: &Model) -> Vec<(usize, BlockKind)> {
    (0..model.layer_count())
        .flat_map(|l| [(l, BlockKind::SelfAttention), (l, BlockKind::Ffn)])
        .collect()
}

/// One row of a sublayer magnitude table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SublayerRow {
    pub slot: Slot,
    /// Largest-magnitude values at the slot, signed, strongest first. Empty
    /// when the slot is omitted.
    pub top: Vec<f32>,
    /// Set when the slot is left out for this architecture.
    pub note: Option<String>,
}

/// Top-k magnitudes at every slot of one layer during one pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SublayerTable {
    pub layer_index: usize,
    pub k: usize,
    pub rows: Vec<SublayerRow>,
}

/// Captures every slot of `layer_index` in one pass and tabulates the top-k
/// magnitudes at each.
///
/// In a plain two-matrix feed-forward network the up-projection slot does not
/// exist and the product slot names the same tensor as the activation output,
/// so both rows are omitted with a note instead of repeating values.
pub fn profile_sublayers(
    model: &Model,
    tokens: &[u32],
    layer_index: usize,
    k: usize,
) -> Result<SublayerTable> {
    let standard = model.ffn_kind == FfnKind::StandardMlp;
    let mut taps = Vec::new();
    for slot in Slot::ALL {
        if standard && (slot == Slot::Y5 || slot == Slot::Y6) {
            continue;
        }
        taps.push(TapPoint::new(slot, layer_index));
    }
    let out = model.run_with_taps(tokens, &taps, None)?;

    let mut rows = Vec::with_capacity(Slot::ALL.len());
    for slot in Slot::ALL {
        if standard && slot == Slot::Y5 {
            rows.push(SublayerRow {
                slot,
                top: Vec::new(),
                note: Some("omitted: no up projection in standard_mlp".to_string()),
            });
            continue;
        }
        if standard && slot == Slot::Y6 {
            rows.push(SublayerRow {
                slot,
                top: Vec::new(),
                note: Some("omitted: same tensor as y4 in standard_mlp".to_string()),
            });
            continue;
        }
        let snap = out
            .snapshots
            .iter()
            .find(|s| s.tap.slot == slot)
            .expect("requested tap was captured");
        let mut values: Vec<f32> = snap.values.iter().copied().collect();
        values.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap());
        values.truncate(k);
        rows.push(SublayerRow {
            slot,
            top: values,
            note: None,
        });
    }
    Ok(SublayerTable {
        layer_index,
        k,
        rows,
    })
}

/// First tap in flow order whose tensor hosts any massive activation during
/// one pass over `tokens`, with the strongest event there.
pub fn earliest_ma(
    model: &Model,
    tokens: &[u32],
    criteria: MaCriteria,
) -> Result<Option<MassiveActivationEvent>> {
    let taps = model.all_taps();
    let out = model.run_with_taps(tokens, &taps, None)?;
    for snap in &out.snapshots {
        let mut events = detect_mas(snap, criteria)?;
        if events.is_empty() {
            continue;
        }
        events.sort_by(|a, b| {
            b.value
                .abs()
                .partial_cmp(&a.value.abs())
                .unwrap()
                .then(a.token_index.cmp(&b.token_index))
                .then(a.channel_index.cmp(&b.channel_index))
        });
        return Ok(Some(events.swap_remove(0)));
    }
    Ok(None)
}
