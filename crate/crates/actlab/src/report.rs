//! Table and report writers.
//!
//! Everything renders to bytes first and lands on disk through a
//! write-to-temp-then-rename step, so a crash mid-run never leaves a partial
//! report at its final name.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::co::{OtcSet, OutlierChannelSet};
use crate::error::Result;
use crate::ma::{MaKind, MaProfile, SublayerTable, TrendReport};

/// Writes bytes via a temporary sibling file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write_result = fs::write(&tmp, bytes);
    if let Err(e) = write_result {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Serializes any report value as pretty JSON plus trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn kind_label(kind: MaKind) -> &'static str {
    match kind {
        MaKind::Unclassified => "unclassified",
        MaKind::TrueMa => "true_ma",
        MaKind::FakeMa => "fake_ma",
    }
}

/// One CSV row per profiled event: layer, slot, token, channel, value, kind.
pub fn profile_csv(profile: &MaProfile) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "slot", "token", "channel", "value", "kind"])?;
    for (layer, events) in profile.per_layer.iter().enumerate() {
        for e in events {
            w.write_record([
                layer.to_string(),
                e.tap.slot.to_string(),
                e.token_index.to_string(),
                e.channel_index.to_string(),
                format!("{}", e.value),
                kind_label(e.kind).to_string(),
            ])?;
        }
    }
    Ok(w.into_inner().expect("csv into vec"))
}

/// Top-k magnitudes per layer for plotting: layer, rank, value columns.
pub fn profile_topk_csv(profile: &MaProfile) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "rank", "value"])?;
    for (layer, events) in profile.per_layer.iter().enumerate() {
        for (rank, e) in events.iter().enumerate() {
            w.write_record([
                layer.to_string(),
                (rank + 1).to_string(),
                format!("{}", e.value),
            ])?;
        }
    }
    Ok(w.into_inner().expect("csv into vec"))
}

/// Sublayer magnitude table: slot, rank, value, note.
pub fn sublayer_csv(table: &SublayerTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slot", "rank", "value", "note"])?;
    for row in &table.rows {
        if let Some(note) = &row.note {
            w.write_record([row.slot.to_string(), String::new(), String::new(), note.clone()])?;
            continue;
        }
        for (rank, v) in row.top.iter().enumerate() {
            w.write_record([
                row.slot.to_string(),
                (rank + 1).to_string(),
                format!("{v}"),
                String::new(),
            ])?;
        }
    }
    Ok(w.into_inner().expect("csv into vec"))
}

/// Matched early/late pairs: token, channel, layers, values, sign relation.
pub fn trend_csv(report: &TrendReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "token",
        "channel",
        "initial_layer",
        "initial_value",
        "final_layer",
        "final_value",
        "sign_flipped",
    ])?;
    for pair in &report.records {
        w.write_record([
            pair.token_index.to_string(),
            pair.channel_index.to_string(),
            pair.initial_layer.to_string(),
            format!("{}", pair.initial_value),
            pair.final_layer.to_string(),
            format!("{}", pair.final_value),
            pair.sign_flipped.to_string(),
        ])?;
    }
    Ok(w.into_inner().expect("csv into vec"))
}

/// Per-channel scatter data: channel, mean, std, flagged, polarity.
pub fn co_scatter_csv(set: &OutlierChannelSet) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["channel", "mean", "std", "flagged", "polarity"])?;
    for c in 0..set.per_channel_mean.len() {
        let flagged_at = set.channel_indices.iter().position(|&i| i == c);
        let polarity = match flagged_at {
            Some(i) => match set.polarity[i] {
                crate::co::Polarity::Upper => "upper",
                crate::co::Polarity::Lower => "lower",
            },
            None => "",
        };
        w.write_record([
            c.to_string(),
            format!("{}", set.per_channel_mean[c]),
            format!("{}", set.per_channel_std[c]),
            flagged_at.is_some().to_string(),
            polarity.to_string(),
        ])?;
    }
    Ok(w.into_inner().expect("csv into vec"))
}

/// Flagged weight rows and the attribution recheck outcome.
pub fn otc_csv(sets: &[OtcSet]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["weight", "row", "status", "fraction"])?;
    for set in sets {
        for &row in &set.row_indices {
            w.write_record([
                set.weight_name.clone(),
                row.to_string(),
                "kept".to_string(),
                format!("{}", set.fraction),
            ])?;
        }
        for &row in &set.rejected_rows {
            w.write_record([
                set.weight_name.clone(),
                row.to_string(),
                "rejected".to_string(),
                format!("{}", set.fraction),
            ])?;
        }
    }
    Ok(w.into_inner().expect("csv into vec"))
}

/// Outlier-channel counts of one layer: as measured, and after that layer's
/// flagged gamma entries are replaced with the gamma mean or with zero.
#[derive(Debug, Clone, Serialize)]
pub struct LayerCountRow {
    pub layer: usize,
    pub baseline: usize,
    pub gamma_mean: usize,
    pub gamma_zero: usize,
}

pub fn layer_counts_csv(rows: &[LayerCountRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "baseline", "gamma_mean", "gamma_zero"])?;
    for row in rows {
        w.write_record([
            row.layer.to_string(),
            row.baseline.to_string(),
            row.gamma_mean.to_string(),
            row.gamma_zero.to_string(),
        ])?;
    }
    Ok(w.into_inner().expect("csv into vec"))
}

/// One sweep line per evaluated configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub family: String,
    pub sd_threshold: f32,
    pub flagged_rows: usize,
    pub perplexity: f64,
    pub diverged: bool,
    pub plan_digest: String,
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "family",
        "sd_threshold",
        "flagged_rows",
        "perplexity",
        "diverged",
        "plan_digest",
    ])?;
    for row in rows {
        w.write_record([
            row.family.clone(),
            format!("{}", row.sd_threshold),
            row.flagged_rows.to_string(),
            format!("{}", row.perplexity),
            row.diverged.to_string(),
            row.plan_digest.clone(),
        ])?;
    }
    Ok(w.into_inner().expect("csv into vec"))
}
