//! Command-line surface over the analysis workflows.
//!
//! Six subcommands: `profile` scans one slot across all layers for massive
//! activations, `classify` splits them into true and fake and tracks their
//! cross-layer recurrence, `intervene` measures the perplexity cost of a
//! removal or ablation plan, `co-report` emits channel-outlier scatter data
//! and per-layer count series, `dump` persists raw activations, and `replay`
//! re-runs a recorded invocation and verifies the result is unchanged.
//!
//! Every invocation appends exactly one line to its run ledger (the five
//! analysis commands to `<out>/runs.jsonl`, `replay` to the file it was
//! pointed at), even when the run fails with a handled error. Exit codes:
//! 0 success, 1 any error or replay mismatch, 2 evaluation that completed
//! with non-finite perplexity.
//!
//! Bundled corpora are looked up next to the working directory under
//! `assets/`, or under `$ACTLAB_DATA_DIR` when set; `--corpus` overrides
//! both and is required for `--dataset local`.

use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Axis};
use serde_json::json;

use crate::co::{
    decompose_normalization, detect_outlier_channels, weight_channel_statistics, CoCriteria,
};
use crate::dump::write_dump;
use crate::error::{Error, Result};
use crate::eval::{evaluate_ppl, evaluate_ppl_with_plans, sample_corpus, Dataset, EvalConfig};
use crate::intervene::{
    plan_gamma_edit, plan_tma_removal, plan_weight_ablation, sample_random_channels,
    InterventionPlan, MeanScope, Policy,
};
use crate::ledger::{append_entry, entry_at, RunLedgerEntry};
use crate::ma::{
    all_residuals, classify_tma_fma, profile_stream, profile_sublayers, trend_analysis,
    MaCriteria, MaKind, TrendConfig,
};
use crate::model::Model;
use crate::report::{
    co_scatter_csv, layer_counts_csv, profile_csv, profile_topk_csv, sublayer_csv, to_json_bytes,
    trend_csv, write_atomic, LayerCountRow,
};
use crate::tap::{BlockKind, Slot, TapPoint};

#[derive(Parser, Debug)]
#[command(
    name = "actlab",
    version,
    about = "Massive-activation and outlier-channel analysis for small decoder checkpoints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan one slot across all layers for massive activations.
    Profile(ProfileArgs),
    /// Split massive activations into true and fake and track recurrence.
    Classify(ClassifyArgs),
    /// Evaluate perplexity with and without an intervention plan.
    Intervene(InterveneArgs),
    /// Emit channel-outlier scatter data and per-layer count series.
    #[command(name = "co-report")]
    CoReport(CoReportArgs),
    /// Capture activations at chosen taps into a dump file.
    Dump(DumpArgs),
    /// Re-run a recorded invocation and verify its result is unchanged.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct ModelOpt {
    /// Checkpoint file to load.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct DataOpts {
    /// Corpus family: wikitext, c4, or local.
    #[arg(long, default_value = "wikitext")]
    dataset: String,

    /// Number of sampled evaluation windows.
    #[arg(long, value_name = "N", default_value_t = 100)]
    samples: usize,

    /// Seed driving window sampling and random channel draws.
    #[arg(long, value_name = "S", default_value_t = 0)]
    seed: u64,

    /// Tokens per window.
    #[arg(long, value_name = "L", default_value_t = 1024)]
    seq_len: usize,

    /// Corpus file; overrides the bundled corpus lookup.
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutOpt {
    /// Output directory; reports and the run ledger land here.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

impl OutOpt {
    fn ledger_file(&self) -> PathBuf {
        self.out.join("runs.jsonl")
    }
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    out: OutOpt,

    /// Slot scanned at every layer.
    #[arg(long, default_value = "x1")]
    slot: String,

    /// Events kept per layer, and values kept per slot in the sublayer tables.
    #[arg(long, default_value_t = 2)]
    k: usize,

    /// Skip every residual addition during the pass, so the series shows only
    /// what each sub-block emits on its own.
    #[arg(long)]
    no_residual: bool,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    out: OutOpt,

    /// Slot scanned at every layer.
    #[arg(long, default_value = "x1")]
    slot: String,
}

#[derive(Args, Debug)]
struct InterveneArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    out: OutOpt,

    /// Feed-forward site whose massive activations are replaced (y6 or y7).
    #[arg(long, conflicts_with = "weights")]
    site: Option<String>,

    /// Family whose flagged rows are ablated: qkv, mlp, ln-gamma, or one
    /// matrix name such as layers.0.attn.w_q.
    #[arg(long)]
    weights: Option<String>,

    /// Replacement policy: mean or zero.
    #[arg(long, default_value = "mean")]
    policy: String,

    /// Row-flagging threshold in standard deviations, for --weights.
    #[arg(long, default_value_t = 2.0)]
    sd: f32,

    /// Ablate a random row set of matched size instead of the flagged rows.
    #[arg(long, requires = "weights")]
    random: bool,
}

#[derive(Args, Debug)]
struct CoReportArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    out: OutOpt,

    /// Deviation multiplier on the tensor standard deviation.
    #[arg(long, default_value_t = 4.0)]
    m: f32,

    /// Per-channel standard-deviation ceiling.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    beta_std: f32,

    /// Layer whose block input feeds the scatter and decomposition files.
    #[arg(long, default_value_t = 0)]
    layer: usize,

    /// Replace massive activations with the tensor mean before flagging the
    /// per-layer series.
    #[arg(long)]
    strip_mas: bool,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    out: OutOpt,

    /// Comma-separated tap points, each written slot@layer.
    #[arg(long, value_name = "TAPS")]
    taps: String,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Ledger file holding the entry to re-run.
    #[arg(long, value_name = "PATH")]
    ledger: PathBuf,

    /// Zero-based index of the entry.
    #[arg(long, value_name = "N")]
    entry: usize,
}

/// Parses the process arguments, runs the chosen command, and appends one
/// ledger entry describing the run. Returns the process exit code.
pub fn run() -> i32 {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let started = Utc::now();
    let (ledger_file, outcome) = match &cli.command {
        Command::Profile(a) => (a.out.ledger_file(), exec_profile(a)),
        Command::Classify(a) => (a.out.ledger_file(), exec_classify(a)),
        Command::Intervene(a) => (a.out.ledger_file(), exec_intervene(a)),
        Command::CoReport(a) => (a.out.ledger_file(), exec_co_report(a)),
        Command::Dump(a) => (a.out.ledger_file(), exec_dump(a)),
        Command::Replay(a) => (a.ledger.clone(), exec_replay(a)),
    };

    let (entry, exit) = match outcome {
        Ok(o) => (
            RunLedgerEntry {
                timestamp: started,
                command: argv.join(" "),
                config_digest: o.config_digest,
                model_id: o.model_id,
                plan_digest: o.plan_digest,
                result: json!({ "argv": argv, "summary": o.summary }),
                artifacts: o.artifacts,
            },
            o.exit,
        ),
        Err(e) => {
            eprintln!("error: {e}");
            (
                RunLedgerEntry {
                    timestamp: started,
                    command: argv.join(" "),
                    config_digest: String::new(),
                    model_id: String::new(),
                    plan_digest: String::new(),
                    result: json!({ "argv": argv, "error": e.to_string() }),
                    artifacts: Vec::new(),
                },
                1,
            )
        }
    };

    if let Err(e) = append_entry(&ledger_file, &entry) {
        eprintln!("error: ledger append failed: {e}");
        return 1;
    }
    exit
}

/// Everything one command run produces besides its files: the values for its
/// ledger entry and the exit code.
struct Outcome {
    model_id: String,
    config_digest: String,
    plan_digest: String,
    /// Deterministic result description; `replay` re-runs the recorded
    /// invocation and requires byte-equal summaries.
    summary: serde_json::Value,
    artifacts: Vec<String>,
    exit: i32,
}

struct Inputs {
    model: Model,
    config: EvalConfig,
    samples: Vec<Vec<u32>>,
}

fn resolve_corpus(dataset: Dataset, requested: Option<&Path>) -> Result<PathBuf> {
    if let Some(path) = requested {
        return Ok(path.to_path_buf());
    }
    let file = match dataset {
        Dataset::Wikitext => "wikitext.txt",
        Dataset::C4 => "c4.jsonl",
        Dataset::LocalText => {
            return Err(Error::InvalidConfig(
                "--dataset local requires --corpus".to_string(),
            ))
        }
    };
    let base = std::env::var_os("ACTLAB_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("assets"));
    let path = base.join(file);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::InvalidConfig(format!(
            "no corpus at {}; pass --corpus or set ACTLAB_DATA_DIR",
            path.display()
        )))
    }
}

fn load_inputs(model_path: &Path, data: &DataOpts) -> Result<Inputs> {
    let dataset = Dataset::parse(&data.dataset)?;
    let model = Model::load(model_path)?;
    let config = EvalConfig::new(dataset, data.seed, data.seq_len).with_samples(data.samples);
    let corpus = resolve_corpus(dataset, data.corpus.as_deref())?;
    let samples = sample_corpus(&config, &corpus, &model)?;
    Ok(Inputs {
        model,
        config,
        samples,
    })
}

fn parse_policy(text: &str) -> Result<Policy> {
    match text {
        "mean" => Ok(Policy::ReplaceWithMean),
        "zero" => Ok(Policy::ReplaceWithZero),
        other => Err(Error::InvalidConfig(format!(
            "unknown policy {other}; use mean or zero"
        ))),
    }
}

fn exec_profile(a: &ProfileArgs) -> Result<Outcome> {
    let Inputs {
        model,
        config,
        samples,
    } = load_inputs(&a.model.model, &a.data)?;
    let slot = Slot::parse(&a.slot)?;
    let tokens = &samples[0];
    let disabled = if a.no_residual {
        all_residuals(&model)
    } else {
        Vec::new()
    };
    let profile = profile_stream(
        &model,
        tokens,
        slot,
        MaCriteria::default(),
        Some(a.k),
        &disabled,
    )?;

    let dir = &a.out.out;
    let mut artifacts = Vec::new();
    write_atomic(&dir.join("profile.json"), &to_json_bytes(&profile)?)?;
    artifacts.push("profile.json".to_string());
    write_atomic(&dir.join("profile.csv"), &profile_csv(&profile)?)?;
    artifacts.push("profile.csv".to_string());
    write_atomic(&dir.join("topk.csv"), &profile_topk_csv(&profile)?)?;
    artifacts.push("topk.csv".to_string());
    for layer in 0..model.layer_count() {
        let table = profile_sublayers(&model, tokens, layer, a.k)?;
        let name = format!("sublayers_{layer}.csv");
        write_atomic(&dir.join(&name), &sublayer_csv(&table)?)?;
        artifacts.push(name);
    }

    let per_layer: Vec<usize> = profile.per_layer.iter().map(|l| l.len()).collect();
    println!(
        "profile: {} events at {slot} across {} layers -> {}",
        profile.total_events(),
        model.layer_count(),
        dir.display()
    );
    Ok(Outcome {
        model_id: model.model_id.clone(),
        config_digest: config.digest(),
        plan_digest: "baseline".to_string(),
        summary: json!({
            "slot": slot.to_string(),
            "no_residual": a.no_residual,
            "total_events": profile.total_events(),
            "per_layer": per_layer,
        }),
        artifacts,
        exit: 0,
    })
}

fn exec_classify(a: &ClassifyArgs) -> Result<Outcome> {
    let Inputs {
        model,
        config,
        samples,
    } = load_inputs(&a.model.model, &a.data)?;
    let slot = Slot::parse(&a.slot)?;
    let tokens = &samples[0];
    let criteria = MaCriteria::default();
    let baseline = profile_stream(&model, tokens, slot, criteria, None, &[])?;
    // The comparison pass drops the feed-forward bypasses only: those carry
    // block-born events from layer to layer, so without them an input event
    // survives exactly when the local feed-forward block emits it itself.
    let ffn_off: Vec<(usize, BlockKind)> = (0..model.layer_count())
        .map(|l| (l, BlockKind::Ffn))
        .collect();
    let no_residual = profile_stream(&model, tokens, slot, criteria, None, &ffn_off)?;
    let classified = classify_tma_fma(&baseline, &no_residual)?;
    let trend = trend_analysis(&classified, TrendConfig::default());

    let dir = &a.out.out;
    let mut artifacts = Vec::new();
    write_atomic(&dir.join("classified.json"), &to_json_bytes(&classified)?)?;
    artifacts.push("classified.json".to_string());
    write_atomic(&dir.join("classified.csv"), &profile_csv(&classified)?)?;
    artifacts.push("classified.csv".to_string());
    write_atomic(&dir.join("trend.json"), &to_json_bytes(&trend)?)?;
    artifacts.push("trend.json".to_string());
    write_atomic(&dir.join("trend.csv"), &trend_csv(&trend)?)?;
    artifacts.push("trend.csv".to_string());

    let mut true_events = 0usize;
    let mut fake_events = 0usize;
    for events in &classified.per_layer {
        for e in events {
            match e.kind {
                MaKind::TrueMa => true_events += 1,
                MaKind::FakeMa => fake_events += 1,
                MaKind::Unclassified => {}
            }
        }
    }
    let flipped = trend.records.iter().filter(|p| p.sign_flipped).count();
    println!(
        "classify: {true_events} true, {fake_events} fake; {} recurring pairs ({flipped} sign-flipped), {} unmatched",
        trend.records.len(),
        trend.unmatched_initial.len()
    );
    Ok(Outcome {
        model_id: model.model_id.clone(),
        config_digest: config.digest(),
        plan_digest: "baseline".to_string(),
        summary: json!({
            "slot": slot.to_string(),
            "true_events": true_events,
            "fake_events": fake_events,
            "pairs": trend.records.len(),
            "flipped_pairs": flipped,
            "unmatched": trend.unmatched_initial.len(),
        }),
        artifacts,
        exit: 0,
    })
}

fn exec_intervene(a: &InterveneArgs) -> Result<Outcome> {
    let Inputs {
        model,
        config,
        samples,
    } = load_inputs(&a.model.model, &a.data)?;
    let policy = parse_policy(&a.policy)?;

    let (plans, tap_mode, flagged_rows) = match (&a.site, &a.weights) {
        (Some(site), None) => {
            let slot = Slot::parse(site)?;
            (vec![plan_tma_removal(slot, policy, &[])?], true, 0)
        }
        (None, Some(family)) => {
            let (plans, flagged) =
                build_family_plans(&model, family, a.sd, policy, a.random, a.data.seed)?;
            (plans, false, flagged)
        }
        _ => {
            return Err(Error::InvalidConfig(
                "pass exactly one of --site or --weights".to_string(),
            ))
        }
    };

    let baseline = evaluate_ppl(&model, &samples, None, &config)?;
    let intervened = if tap_mode {
        evaluate_ppl(&model, &samples, Some(&plans[0]), &config)?
    } else {
        evaluate_ppl_with_plans(&model, &samples, &plans, &config)?
    };
    let delta = intervened.perplexity - baseline.perplexity;
    let diverged = baseline.diverged || intervened.diverged;
    let plan_digest = intervened.plan_digest.clone();

    let dir = &a.out.out;
    let mut artifacts = Vec::new();
    write_atomic(&dir.join("plan.json"), &to_json_bytes(&plans)?)?;
    artifacts.push("plan.json".to_string());
    write_atomic(
        &dir.join("intervene.json"),
        &to_json_bytes(&json!({
            "baseline": baseline,
            "intervened": intervened,
            "delta": delta,
        }))?,
    )?;
    artifacts.push("intervene.json".to_string());

    println!(
        "intervene: baseline {:.6} -> {:.6} (delta {:+.6}){}",
        baseline.perplexity,
        intervened.perplexity,
        delta,
        if diverged { " [diverged]" } else { "" }
    );
    Ok(Outcome {
        model_id: model.model_id.clone(),
        config_digest: config.digest(),
        plan_digest: plan_digest.clone(),
        summary: json!({
            "baseline_ppl": baseline.perplexity,
            "ppl": intervened.perplexity,
            "delta": delta,
            "diverged": diverged,
            "flagged_rows": flagged_rows,
            "plan_digest": plan_digest,
        }),
        artifacts,
        exit: if diverged { 2 } else { 0 },
    })
}

/// Builds one ablation plan per family member with flagged rows. With
/// `random`, each flagged set is swapped for a same-sized draw from the
/// unflagged rows, seeded per member so the draw is reproducible.
fn build_family_plans(
    model: &Model,
    family: &str,
    sd: f32,
    policy: Policy,
    random: bool,
    seed: u64,
) -> Result<(Vec<InterventionPlan>, usize)> {
    let mut plans = Vec::new();
    let mut flagged_total = 0usize;

    if family == "ln-gamma" {
        for (l, layer) in model.layers.iter().enumerate() {
            let column = layer.ln1.gamma.clone().insert_axis(Axis(1));
            let flagged = weight_channel_statistics(&column, sd)?;
            if flagged.is_empty() {
                continue;
            }
            flagged_total += flagged.len();
            let chosen = if random {
                sample_random_channels(
                    layer.ln1.gamma.len(),
                    flagged.len(),
                    seed.wrapping_add(l as u64),
                    &flagged.iter().copied().collect(),
                )?
            } else {
                flagged
            };
            plans.push(plan_gamma_edit(
                l,
                BlockKind::SelfAttention,
                &chosen,
                policy,
                layer.ln1.gamma.len(),
            )?);
        }
        return Ok((plans, flagged_total));
    }

    for (i, (name, matrix)) in family_matrices(model, family)?.into_iter().enumerate() {
        let flagged = weight_channel_statistics(matrix, sd)?;
        if flagged.is_empty() {
            continue;
        }
        flagged_total += flagged.len();
        let chosen = if random {
            sample_random_channels(
                matrix.nrows(),
                flagged.len(),
                seed.wrapping_add(i as u64),
                &flagged.iter().copied().collect(),
            )?
        } else {
            flagged
        };
        plans.push(plan_weight_ablation(
            &name,
            &chosen,
            policy,
            MeanScope::PerChannel,
            matrix.nrows(),
        )?);
    }
    Ok((plans, flagged_total))
}

fn family_matrices<'m>(model: &'m Model, family: &str) -> Result<Vec<(String, &'m Array2<f32>)>> {
    let mut out = Vec::new();
    match family {
        "qkv" => {
            for (l, layer) in model.layers.iter().enumerate() {
                out.push((format!("layers.{l}.attn.w_q"), &layer.attn.w_q));
                out.push((format!("layers.{l}.attn.w_k"), &layer.attn.w_k));
                out.push((format!("layers.{l}.attn.w_v"), &layer.attn.w_v));
            }
        }
        "mlp" => {
            for (l, layer) in model.layers.iter().enumerate() {
                out.push((format!("layers.{l}.ffn.w_in"), &layer.ffn.w_in));
            }
        }
        name => out.push((name.to_string(), weight_ref(model, name)?)),
    }
    Ok(out)
}

fn weight_ref<'m>(model: &'m Model, name: &str) -> Result<&'m Array2<f32>> {
    let unknown = || Error::WeightUnknown(name.to_string());
    let rest = name.strip_prefix("layers.").ok_or_else(unknown)?;
    let (index, field) = rest.split_once('.').ok_or_else(unknown)?;
    let layer_index: usize = index.parse().map_err(|_| unknown())?;
    let layer = model.layers.get(layer_index).ok_or_else(unknown)?;
    match field {
        "attn.w_q" => Ok(&layer.attn.w_q),
        "attn.w_k" => Ok(&layer.attn.w_k),
        "attn.w_v" => Ok(&layer.attn.w_v),
        "attn.w_o" => Ok(&layer.attn.w_o),
        "ffn.w_in" => Ok(&layer.ffn.w_in),
        "ffn.w_up" => layer.ffn.w_up.as_ref().ok_or_else(unknown),
        "ffn.w_out" => Ok(&layer.ffn.w_out),
        _ => Err(unknown()),
    }
}

fn exec_co_report(a: &CoReportArgs) -> Result<Outcome> {
    let Inputs {
        model,
        config,
        samples,
    } = load_inputs(&a.model.model, &a.data)?;
    if a.layer >= model.layer_count() {
        return Err(Error::IndexOutOfRange(format!(
            "layer {} of {}",
            a.layer,
            model.layer_count()
        )));
    }
    let tokens = &samples[0];
    let criteria = CoCriteria {
        deviation_factor: a.m,
        std_ceiling: a.beta_std,
    };
    let mac = MaCriteria::default();
    let dir = &a.out.out;
    let mut artifacts = Vec::new();

    // Scatter data at the chosen layer's block input, raw and with massive
    // activations stripped, plus both stages of that layer's normalization.
    let out = model.run_with_taps(tokens, &[TapPoint::new(Slot::X1, a.layer)], None)?;
    let x1 = &out.snapshots[0];
    let raw_set = detect_outlier_channels(x1, criteria, false, mac)?;
    let stripped_set = detect_outlier_channels(x1, criteria, true, mac)?;
    let norm = &model.layers[a.layer].ln1;
    let decomp =
        decompose_normalization(x1, &norm.gamma, norm.beta.as_ref(), model.norm_kind, criteria)?;
    for (name, set) in [
        ("scatter_x1.csv", &raw_set),
        ("scatter_x1_stripped.csv", &stripped_set),
        ("scatter_standardized.csv", &decomp.standardized),
        ("scatter_rescaled.csv", &decomp.rescaled),
    ] {
        write_atomic(&dir.join(name), &co_scatter_csv(set)?)?;
        artifacts.push(name.to_string());
    }

    // Threshold sweep on the same tensor; the flagged sets must nest as the
    // band tightens.
    let mut sweep_sets = Vec::new();
    for (m, name) in [
        (6.0f32, "scatter_m6.csv"),
        (4.0, "scatter_m4.csv"),
        (2.0, "scatter_m2.csv"),
    ] {
        let set = detect_outlier_channels(
            x1,
            CoCriteria {
                deviation_factor: m,
                ..criteria
            },
            false,
            mac,
        )?;
        write_atomic(&dir.join(name), &co_scatter_csv(&set)?)?;
        artifacts.push(name.to_string());
        sweep_sets.push(set);
    }
    if !(sweep_sets[0].is_subset_of(&sweep_sets[1]) && sweep_sets[1].is_subset_of(&sweep_sets[2]))
    {
        return Err(Error::InvalidConfig(
            "flagged channel sets failed to nest across thresholds 6, 4, 2".to_string(),
        ));
    }

    // Per-layer counts at the normalization output, as measured and with each
    // layer's flagged gamma entries replaced (every layer edited on its own
    // copy of the model, so the edits never compound).
    let x2_taps: Vec<TapPoint> = (0..model.layer_count())
        .map(|l| TapPoint::new(Slot::X2, l))
        .collect();
    let base_out = model.run_with_taps(tokens, &x2_taps, None)?;
    let mut rows = Vec::new();
    for l in 0..model.layer_count() {
        let before = detect_outlier_channels(&base_out.snapshots[l], criteria, a.strip_mas, mac)?;
        let mut edited_counts = [before.len(), before.len()];
        if !before.is_empty() {
            for (i, policy) in [Policy::ReplaceWithMean, Policy::ReplaceWithZero]
                .into_iter()
                .enumerate()
            {
                let plan = plan_gamma_edit(
                    l,
                    BlockKind::SelfAttention,
                    &before.channel_indices,
                    policy,
                    model.layers[l].ln1.gamma.len(),
                )?;
                let mut edited = model.clone();
                edited.apply_parameter_plan(&plan)?;
                let eout = edited.run_with_taps(tokens, &[TapPoint::new(Slot::X2, l)], None)?;
                edited_counts[i] =
                    detect_outlier_channels(&eout.snapshots[0], criteria, a.strip_mas, mac)?.len();
            }
        }
        rows.push(LayerCountRow {
            layer: l,
            baseline: before.len(),
            gamma_mean: edited_counts[0],
            gamma_zero: edited_counts[1],
        });
    }
    write_atomic(&dir.join("layer_counts.csv"), &layer_counts_csv(&rows)?)?;
    artifacts.push("layer_counts.csv".to_string());

    write_atomic(
        &dir.join("co_report.json"),
        &to_json_bytes(&json!({
            "x1": raw_set,
            "x1_stripped": stripped_set,
            "standardized": decomp.standardized,
            "rescaled": decomp.rescaled,
            "counts": rows,
        }))?,
    )?;
    artifacts.push("co_report.json".to_string());

    println!(
        "co-report: layer {} flags {:?} raw, {:?} rescaled; series -> {}",
        a.layer,
        raw_set.channel_indices,
        decomp.rescaled.channel_indices,
        dir.join("layer_counts.csv").display()
    );
    Ok(Outcome {
        model_id: model.model_id.clone(),
        config_digest: config.digest(),
        plan_digest: "baseline".to_string(),
        summary: json!({
            "m": a.m,
            "beta_std": a.beta_std,
            "layer": a.layer,
            "x1_flagged": raw_set.channel_indices,
            "stripped_flagged": stripped_set.channel_indices,
            "standardized_flagged": decomp.standardized.channel_indices,
            "rescaled_flagged": decomp.rescaled.channel_indices,
            "counts": rows.iter().map(|r| [r.baseline, r.gamma_mean, r.gamma_zero]).collect::<Vec<_>>(),
        }),
        artifacts,
        exit: 0,
    })
}

fn exec_dump(a: &DumpArgs) -> Result<Outcome> {
    let Inputs {
        model,
        config,
        samples,
    } = load_inputs(&a.model.model, &a.data)?;
    let mut taps = Vec::new();
    for piece in a.taps.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        taps.push(TapPoint::parse(piece)?);
    }
    if taps.is_empty() {
        return Err(Error::InvalidConfig("--taps names no tap points".to_string()));
    }
    let tokens = &samples[0];
    let out = model.run_with_taps(tokens, &taps, None)?;
    let dir = &a.out.out;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("activations.dump");
    write_dump(&path, &model.model_id, &out.snapshots)?;
    let file_bytes = std::fs::metadata(&path)?.len();

    println!(
        "dump: {} taps over {} tokens -> {}",
        out.snapshots.len(),
        tokens.len(),
        path.display()
    );
    Ok(Outcome {
        model_id: model.model_id.clone(),
        config_digest: config.digest(),
        plan_digest: "baseline".to_string(),
        summary: json!({
            "taps": out.snapshots.iter().map(|s| s.tap.to_string()).collect::<Vec<_>>(),
            "tokens": tokens.len(),
            "file_bytes": file_bytes,
        }),
        artifacts: vec!["activations.dump".to_string()],
        exit: 0,
    })
}

fn exec_replay(a: &ReplayArgs) -> Result<Outcome> {
    let entry = entry_at(&a.ledger, a.entry)?;
    let argv: Vec<String> = match entry.result.get("argv") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => {
            return Err(Error::InvalidConfig(format!(
                "entry {} records no invocation arguments",
                a.entry
            )))
        }
    };
    let recorded_summary = entry.result.get("summary").cloned().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "entry {} recorded a failed run and cannot be replayed",
            a.entry
        ))
    })?;

    let mut full = vec!["actlab".to_string()];
    full.extend(argv.iter().cloned());
    let replayed = Cli::try_parse_from(&full)
        .map_err(|e| Error::InvalidConfig(format!("recorded arguments do not parse: {e}")))?;
    let inner = match &replayed.command {
        Command::Replay(_) => {
            return Err(Error::InvalidConfig(
                "cannot replay a replay entry".to_string(),
            ))
        }
        Command::Profile(x) => exec_profile(x)?,
        Command::Classify(x) => exec_classify(x)?,
        Command::Intervene(x) => exec_intervene(x)?,
        Command::CoReport(x) => exec_co_report(x)?,
        Command::Dump(x) => exec_dump(x)?,
    };

    let matches = inner.summary == recorded_summary;
    println!(
        "replay: entry {} ({}) {}",
        a.entry,
        entry.command,
        if matches { "matches" } else { "DIFFERS" }
    );
    Ok(Outcome {
        model_id: inner.model_id,
        config_digest: inner.config_digest,
        plan_digest: inner.plan_digest,
        summary: json!({
            "entry": a.entry,
            "entry_command": entry.command,
            "matches": matches,
            "replayed": inner.summary,
        }),
        artifacts: inner.artifacts,
        exit: if matches { inner.exit } else { 1 },
    })
}
