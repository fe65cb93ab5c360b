//! Property tests: detector outputs against brute-force reference
//! implementations, structural invariants of plans and profiles, and
//! closed-form checks of the evaluation pipeline.

mod common;

use std::collections::BTreeSet;

use actlab::co::{
    decompose_normalization, detect_outlier_channels, strip_mas, weight_channel_statistics,
    CoCriteria, NormKind,
};
use actlab::dump::{read_dump, write_dump};
use actlab::error::Error;
use actlab::eval::{evaluate_ppl, evaluate_ppl_with_plans, sample_windows, Dataset, EvalConfig};
use actlab::intervene::{
    plan_gamma_edit, plan_weight_ablation, InterventionPlan, MeanScope, PlanIndices, PlanTarget,
    Policy,
};
use actlab::ma::{
    classify_tma_fma, detect_ma_positions, detect_mas, MaCriteria, MaKind, MaProfile,
    MassiveActivationEvent, ProfileProvenance, ResidualMode,
};
use actlab::tap::{ActivationSnapshot, BlockKind, Slot, TapPoint};
use common::{
    logit_bias_model, oracle_ma_positions, oracle_outlier_channels, oracle_weight_rows,
    tiny_random_model, TinyDims,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

const ALL_SLOTS: [Slot; 16] = [
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

fn snap(values: Array2<f32>) -> ActivationSnapshot {
    ActivationSnapshot::new(TapPoint::new(Slot::X1, 0), values, 7).unwrap()
}

/// Entry values spanning ordinary activations, borderline magnitudes, and
/// clear spikes, with exact zeros mixed in.
fn tensor_entry() -> impl Strategy<Value = f32> {
    prop_oneof![
        4 => -1.0f32..1.0,
        2 => -300.0f32..300.0,
        1 => -5000.0f32..5000.0,
        1 => Just(0.0f32),
    ]
}

fn tensor(min_rows: usize) -> impl Strategy<Value = Array2<f32>> {
    (min_rows..=20usize, 1usize..=20).prop_flat_map(|(r, c)| {
        proptest::collection::vec(tensor_entry(), r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #[test]
    fn ma_detector_matches_brute_force(
        values in tensor(1),
        abs_floor in 0.1f32..500.0,
        median_ratio in 1.0f32..2000.0,
    ) {
        let got = detect_ma_positions(&values, MaCriteria { abs_floor, median_ratio });
        let want = oracle_ma_positions(&values, abs_floor, median_ratio);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn ma_events_carry_positions_and_values(values in tensor(1)) {
        let criteria = MaCriteria::default();
        let positions = detect_ma_positions(&values, criteria);
        let events = detect_mas(&snap(values.clone()), criteria).unwrap();
        prop_assert_eq!(events.len(), positions.len());
        for (event, (t, c)) in events.iter().zip(&positions) {
            prop_assert_eq!(event.token_index, *t);
            prop_assert_eq!(event.channel_index, *c);
            prop_assert_eq!(event.value.to_bits(), values[(*t, *c)].to_bits());
            prop_assert_eq!(event.kind, MaKind::Unclassified);
        }
    }

    #[test]
    fn co_detector_matches_brute_force(
        values in tensor(2),
        deviation_factor in 0.5f32..8.0,
        std_ceiling in 0.05f32..2.0,
    ) {
        let set = detect_outlier_channels(
            &snap(values.clone()),
            CoCriteria { deviation_factor, std_ceiling },
            false,
            MaCriteria::default(),
        )
        .unwrap();
        let (channels, polarity) = oracle_outlier_channels(&values, deviation_factor, std_ceiling);
        prop_assert_eq!(&set.channel_indices, &channels);
        prop_assert_eq!(&set.polarity, &polarity);
        prop_assert_eq!(set.per_channel_mean.len(), values.ncols());
        prop_assert_eq!(set.per_channel_std.len(), values.ncols());
    }

    #[test]
    fn co_sets_nest_as_the_band_tightens(values in tensor(2)) {
        let detect = |m: f32| {
            detect_outlier_channels(
                &snap(values.clone()),
                CoCriteria { deviation_factor: m, std_ceiling: 1.0 / 3.0 },
                false,
                MaCriteria::default(),
            )
            .unwrap()
        };
        let wide = detect(6.0);
        let mid = detect(4.0);
        let tight = detect(2.0);
        prop_assert!(wide.is_subset_of(&mid));
        prop_assert!(mid.is_subset_of(&tight));
        // A channel flagged at two thresholds keeps its side of the band.
        for (c, p) in wide.channel_indices.iter().zip(&wide.polarity) {
            let i = mid.channel_indices.iter().position(|x| x == c).unwrap();
            prop_assert_eq!(&mid.polarity[i], p);
        }
    }

    #[test]
    fn weight_flags_match_brute_force(
        values in (1usize..=16, 1usize..=16).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-2.0f32..2.0, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        }),
        sd in 0.5f32..6.0,
    ) {
        match oracle_weight_rows(&values, sd) {
            None => {
                prop_assert!(matches!(
                    weight_channel_statistics(&values, sd),
                    Err(Error::SingleChannel)
                ));
            }
            Some(want) => {
                prop_assert_eq!(weight_channel_statistics(&values, sd).unwrap(), want);
            }
        }
    }

    #[test]
    fn stripping_replaces_exactly_the_detected_entries(values in tensor(1)) {
        let criteria = MaCriteria::default();
        let positions: BTreeSet<(usize, usize)> =
            detect_ma_positions(&values, criteria).into_iter().collect();
        let stripped = strip_mas(&values, criteria);
        let n = (values.nrows() * values.ncols()) as f64;
        let mean = (values.iter().map(|v| *v as f64).sum::<f64>() / n) as f32;
        for t in 0..values.nrows() {
            for c in 0..values.ncols() {
                if positions.contains(&(t, c)) {
                    prop_assert_eq!(stripped[(t, c)].to_bits(), mean.to_bits());
                } else {
                    prop_assert_eq!(stripped[(t, c)].to_bits(), values[(t, c)].to_bits());
                }
            }
        }
    }

    #[test]
    fn tap_points_round_trip_through_text(slot_index in 0usize..16, layer in 0usize..128) {
        let tap = TapPoint::new(ALL_SLOTS[slot_index], layer);
        prop_assert_eq!(TapPoint::parse(&tap.to_string()).unwrap(), tap);
    }

    #[test]
    fn plans_round_trip_and_digest_stably(plan in plan_strategy()) {
        let json = serde_json::to_vec(&plan).unwrap();
        let back: InterventionPlan = serde_json::from_slice(&json).unwrap();
        prop_assert_eq!(&back, &plan);
        prop_assert_eq!(back.digest(), plan.digest());

        let mut flipped = plan.clone();
        flipped.policy = match plan.policy {
            Policy::ReplaceWithMean => Policy::ReplaceWithZero,
            Policy::ReplaceWithZero => Policy::ReplaceWithMean,
        };
        prop_assert_ne!(flipped.digest(), plan.digest());
    }

    #[test]
    fn classification_partitions_baseline_events(
        (baseline_sets, survivor_sets) in position_sets(),
    ) {
        let baseline = synthetic_profile(&baseline_sets, ResidualMode::Full);
        let survivors = synthetic_profile(
            &survivor_sets,
            ResidualMode::Disabled(vec![(0, BlockKind::Ffn)]),
        );
        let classified = classify_tma_fma(&baseline, &survivors).unwrap();
        prop_assert_eq!(classified.per_layer.len(), baseline.per_layer.len());
        for (layer, events) in classified.per_layer.iter().enumerate() {
            prop_assert_eq!(events.len(), baseline.per_layer[layer].len());
            for (event, original) in events.iter().zip(&baseline.per_layer[layer]) {
                prop_assert_eq!(event.token_index, original.token_index);
                prop_assert_eq!(event.channel_index, original.channel_index);
                prop_assert_eq!(event.value.to_bits(), original.value.to_bits());
                let survived = survivor_sets[layer]
                    .contains(&(event.token_index, event.channel_index));
                let expected = if survived { MaKind::TrueMa } else { MaKind::FakeMa };
                prop_assert_eq!(event.kind, expected);
            }
        }
    }

    #[test]
    fn window_sampling_is_sorted_distinct_and_deterministic(
        (token_count, length, samples) in (40usize..400, 2usize..=16)
            .prop_flat_map(|(n, len)| {
                let available = n - len + 1;
                (Just(n), Just(len), 1usize..=available.min(24))
            }),
        seed in any::<u64>(),
    ) {
        let tokens: Vec<u32> = (0..token_count as u32).collect();
        let config = EvalConfig::new(Dataset::Wikitext, seed, length).with_samples(samples);
        let windows = sample_windows(&tokens, &config).unwrap();
        prop_assert_eq!(windows.len(), samples);
        let mut last_start = None;
        for window in &windows {
            prop_assert_eq!(window.len(), length);
            let start = window[0] as usize;
            prop_assert!(start + length <= token_count);
            prop_assert_eq!(&window[..], &tokens[start..start + length]);
            if let Some(prev) = last_start {
                prop_assert!(start > prev, "starts must be distinct and ascending");
            }
            last_start = Some(start);
        }
        prop_assert_eq!(&sample_windows(&tokens, &config).unwrap(), &windows);
    }

    #[test]
    fn dump_files_round_trip_bitwise(
        tensors in proptest::collection::vec(tensor(1), 1..4),
        pass_id in any::<u64>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let snapshots: Vec<ActivationSnapshot> = tensors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                ActivationSnapshot::new(
                    TapPoint::new(ALL_SLOTS[i % 16], i),
                    v.clone(),
                    pass_id,
                )
                .unwrap()
            })
            .collect();
        let path = dir.path().join("pass.dump");
        write_dump(&path, "roundtrip", &snapshots).unwrap();
        let (header, back) = read_dump(&path).unwrap();
        prop_assert_eq!(header.model_id, "roundtrip");
        prop_assert_eq!(header.pass_id, pass_id);
        prop_assert_eq!(back.len(), snapshots.len());
        for (a, b) in back.iter().zip(&snapshots) {
            prop_assert_eq!(a.tap, b.tap);
            prop_assert_eq!(a.values.dim(), b.values.dim());
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_edits_are_local_and_revertible(
        seed in 0u64..8,
        layer in 0usize..2,
        on_attention in any::<bool>(),
        channels in proptest::collection::btree_set(0usize..8, 1..=4),
        use_zero in any::<bool>(),
    ) {
        let mut model = tiny_random_model(seed);
        let pristine = model.clone();
        let block = if on_attention { BlockKind::SelfAttention } else { BlockKind::Ffn };
        let picked: Vec<usize> = channels.iter().copied().collect();
        let policy = if use_zero { Policy::ReplaceWithZero } else { Policy::ReplaceWithMean };
        let plan = plan_gamma_edit(layer, block, &picked, policy, 8).unwrap();
        let backup = model.apply_parameter_plan(&plan).unwrap();

        for l in 0..2 {
            for (params, pristine_params) in [
                (&model.layers[l], &pristine.layers[l]),
            ] {
                let (edited_gamma, kept_gamma) = if on_attention {
                    (&params.ln1.gamma, &params.ln2.gamma)
                } else {
                    (&params.ln2.gamma, &params.ln1.gamma)
                };
                let (pristine_edited, pristine_kept) = if on_attention {
                    (&pristine_params.ln1.gamma, &pristine_params.ln2.gamma)
                } else {
                    (&pristine_params.ln2.gamma, &pristine_params.ln1.gamma)
                };
                // The sibling normalization never changes.
                for c in 0..8 {
                    prop_assert_eq!(kept_gamma[c].to_bits(), pristine_kept[c].to_bits());
                }
                for c in 0..8 {
                    let touched = l == layer && channels.contains(&c);
                    if !touched {
                        prop_assert_eq!(edited_gamma[c].to_bits(), pristine_edited[c].to_bits());
                    } else if use_zero {
                        prop_assert_eq!(edited_gamma[c], 0.0);
                    } else {
                        prop_assert_ne!(edited_gamma[c].to_bits(), f32::NAN.to_bits());
                    }
                }
            }
        }

        model.revert_parameter_plan(backup).unwrap();
        prop_assert!(models_bit_identical(&model, &pristine));
    }

    #[test]
    fn weight_ablations_are_local_and_revertible(
        seed in 0u64..8,
        rows in proptest::collection::btree_set(0usize..12, 1..=4),
        use_zero in any::<bool>(),
    ) {
        let mut model = tiny_random_model(seed);
        let pristine = model.clone();
        let picked: Vec<usize> = rows.iter().copied().collect();
        let policy = if use_zero { Policy::ReplaceWithZero } else { Policy::ReplaceWithMean };
        let plan = plan_weight_ablation(
            "layers.0.ffn.w_in",
            &picked,
            policy,
            MeanScope::PerChannel,
            12,
        )
        .unwrap();
        let backup = model.apply_parameter_plan(&plan).unwrap();

        let edited = &model.layers[0].ffn.w_in;
        let original = &pristine.layers[0].ffn.w_in;
        for r in 0..12 {
            for c in 0..8 {
                if !rows.contains(&r) {
                    prop_assert_eq!(edited[(r, c)].to_bits(), original[(r, c)].to_bits());
                } else if use_zero {
                    prop_assert_eq!(edited[(r, c)], 0.0);
                }
            }
        }
        // The other layer's matching matrix is untouched.
        for r in 0..12 {
            for c in 0..8 {
                prop_assert_eq!(
                    model.layers[1].ffn.w_in[(r, c)].to_bits(),
                    pristine.layers[1].ffn.w_in[(r, c)].to_bits()
                );
            }
        }

        model.revert_parameter_plan(backup).unwrap();
        prop_assert!(models_bit_identical(&model, &pristine));
    }
}

fn plan_strategy() -> impl Strategy<Value = InterventionPlan> {
    let target = prop_oneof![
        (0usize..16, proptest::option::of(0usize..6)).prop_map(|(s, layer)| PlanTarget::Tap {
            slot: ALL_SLOTS[s],
            layer,
        }),
        (0usize..6, any::<bool>()).prop_map(|(layer, attn)| PlanTarget::Gamma {
            layer,
            block_kind: if attn { BlockKind::SelfAttention } else { BlockKind::Ffn },
        }),
        "[a-z0-9_.]{1,24}".prop_map(|name| PlanTarget::Weight { name }),
    ];
    let indices = prop_oneof![
        proptest::collection::btree_set((0usize..32, 0usize..32), 0..8).prop_map(|set| {
            PlanIndices::Positions { positions: set.into_iter().collect() }
        }),
        proptest::collection::btree_set(0usize..64, 0..8)
            .prop_map(|set| PlanIndices::Channels { channels: set.into_iter().collect() }),
        Just(PlanIndices::DetectedMas),
    ];
    (
        target,
        indices,
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        proptest::option::of(any::<u64>()),
    )
        .prop_map(|(target, indices, mean_policy, whole, exclude, seed)| InterventionPlan {
            target,
            indices,
            policy: if mean_policy { Policy::ReplaceWithMean } else { Policy::ReplaceWithZero },
            mean_scope: if whole { MeanScope::WholeTensor } else { MeanScope::PerChannel },
            exclude_selected_from_mean: exclude,
            seed,
        })
}

type PositionSets = Vec<BTreeSet<(usize, usize)>>;

fn position_sets() -> impl Strategy<Value = (PositionSets, PositionSets)> {
    (1usize..4).prop_flat_map(|layers| {
        let one = || {
            proptest::collection::vec(
                proptest::collection::btree_set((0usize..5, 0usize..5), 0..6),
                layers,
            )
        };
        (one(), one())
    })
}

fn synthetic_profile(sets: &PositionSets, residual_mode: ResidualMode) -> MaProfile {
    let per_layer = sets
        .iter()
        .enumerate()
        .map(|(layer, positions)| {
            positions
                .iter()
                .map(|&(t, c)| MassiveActivationEvent {
                    tap: TapPoint::new(Slot::X1, layer),
                    token_index: t,
                    channel_index: c,
                    value: 150.0 + (t * 5 + c) as f32,
                    kind: MaKind::Unclassified,
                })
                .collect()
        })
        .collect();
    MaProfile {
        per_layer,
        top_k: None,
        pass_id: 1,
        provenance: ProfileProvenance {
            model_id: "synthetic".to_string(),
            input_digest: "abc".to_string(),
            slot: Slot::X1,
            residual_mode,
        },
    }
}

/// Byte-level equality of two models via their serialized checkpoints.
fn models_bit_identical(a: &actlab::model::Model, b: &actlab::model::Model) -> bool {
    let dir = tempfile::tempdir().unwrap();
    let pa = dir.path().join("a.bin");
    let pb = dir.path().join("b.bin");
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    std::fs::read(pa).unwrap() == std::fs::read(pb).unwrap()
}

#[test]
fn classification_enforces_matching_passes() {
    let base_sets: PositionSets = vec![[(0usize, 1usize)].into_iter().collect()];
    let baseline = synthetic_profile(&base_sets, ResidualMode::Full);
    let survivors = synthetic_profile(
        &base_sets,
        ResidualMode::Disabled(vec![(0, BlockKind::Ffn)]),
    );

    // Comparison pass with nothing disabled says nothing about residuals.
    let not_disabled = synthetic_profile(&base_sets, ResidualMode::Full);
    assert!(matches!(
        classify_tma_fma(&baseline, &not_disabled),
        Err(Error::ProvenanceMismatch(_))
    ));

    // A baseline that itself ran without residuals is not a baseline.
    assert!(matches!(
        classify_tma_fma(&survivors, &survivors),
        Err(Error::ProvenanceMismatch(_))
    ));

    // Mismatched inputs never compare.
    let mut other_input = survivors.clone();
    other_input.provenance.input_digest = "different".to_string();
    assert!(matches!(
        classify_tma_fma(&baseline, &other_input),
        Err(Error::ProvenanceMismatch(_))
    ));

    assert!(classify_tma_fma(&baseline, &survivors).is_ok());
}

#[test]
fn zero_model_perplexity_matches_closed_form() {
    let dims = TinyDims::default();

    // All logits equal: the distribution is uniform and perplexity is the
    // vocabulary size.
    let uniform = logit_bias_model(&dims, Array1::zeros(dims.vocab));
    let samples = synthetic_windows(&dims, 6, 16);
    let config = EvalConfig::new(Dataset::Wikitext, 0, 16).with_samples(6);
    let result = evaluate_ppl(&uniform, &samples, None, &config).unwrap();
    assert!(!result.diverged);
    assert_eq!(result.token_count, 6 * 15);
    let rel = (result.perplexity - dims.vocab as f64).abs() / dims.vocab as f64;
    assert!(rel < 1e-9, "uniform perplexity {} vs {}", result.perplexity, dims.vocab);

    // A biased head scores each target at the bias log-probability; the
    // expected perplexity follows directly from the sampled windows.
    let bias = Array1::from_shape_fn(dims.vocab, |v| ((v * 37 + 11) % 23) as f32 * 0.1 - 1.0);
    let biased = logit_bias_model(&dims, bias.clone());
    let result = evaluate_ppl(&biased, &samples, None, &config).unwrap();

    // Windows are scored independently and their subtotals added afterwards,
    // so the oracle accumulates in the same two stages.
    let mut nll_sum = 0.0f64;
    let mut count = 0usize;
    for window in &samples {
        let mut window_sum = 0.0f64;
        for pos in 0..window.len() - 1 {
            let target = window[pos + 1] as usize;
            let mut max_v = f64::NEG_INFINITY;
            for v in bias.iter() {
                max_v = max_v.max(*v as f64);
            }
            let mut sum = 0.0f64;
            for v in bias.iter() {
                sum += (*v as f64 - max_v).exp();
            }
            window_sum += max_v + sum.ln() - bias[target] as f64;
            count += 1;
        }
        nll_sum += window_sum;
    }
    let expected = (nll_sum / count as f64).exp();
    assert_eq!(
        result.perplexity.to_bits(),
        expected.to_bits(),
        "perplexity {} vs closed form {}",
        result.perplexity,
        expected
    );
}

/// Deterministic token windows covering the whole vocabulary.
fn synthetic_windows(dims: &TinyDims, count: usize, length: usize) -> Vec<Vec<u32>> {
    (0..count)
        .map(|w| {
            (0..length)
                .map(|i| ((w * 31 + i * 7 + 3) % dims.vocab) as u32)
                .collect()
        })
        .collect()
}

#[test]
fn evaluation_is_bit_deterministic() {
    let model = tiny_random_model(3);
    let dims = TinyDims::default();
    let samples = synthetic_windows(&dims, 6, 16);
    let config = EvalConfig::new(Dataset::Wikitext, 0, 16).with_samples(6);

    let first = evaluate_ppl(&model, &samples, None, &config).unwrap();
    let second = evaluate_ppl(&model, &samples, None, &config).unwrap();
    assert_eq!(first.perplexity.to_bits(), second.perplexity.to_bits());
    assert_eq!(first.plan_digest, "baseline");

    // An empty plan list is the baseline, bit for bit.
    let empty = evaluate_ppl_with_plans(&model, &samples, &[], &config).unwrap();
    assert_eq!(empty.perplexity.to_bits(), first.perplexity.to_bits());
    assert_eq!(empty.plan_digest, "baseline");
}

#[test]
fn plan_construction_rejects_bad_indices() {
    assert!(matches!(
        plan_weight_ablation("w", &[1, 1], Policy::ReplaceWithZero, MeanScope::PerChannel, 4),
        Err(Error::DuplicateIndices)
    ));
    assert!(matches!(
        plan_weight_ablation("w", &[4], Policy::ReplaceWithZero, MeanScope::PerChannel, 4),
        Err(Error::IndexOutOfRange(_))
    ));
    assert!(matches!(
        plan_gamma_edit(0, BlockKind::SelfAttention, &[2, 2], Policy::ReplaceWithMean, 8),
        Err(Error::DuplicateIndices)
    ));
    assert!(matches!(
        plan_gamma_edit(0, BlockKind::SelfAttention, &[8], Policy::ReplaceWithMean, 8),
        Err(Error::IndexOutOfRange(_))
    ));
}

#[test]
fn decomposition_checks_shift_and_degenerate_rows() {
    let values = Array2::from_shape_fn((3, 4), |(t, c)| (t * 4 + c) as f32 * 0.25 - 1.0);
    let gamma = Array1::ones(4);
    let beta = Array1::zeros(4);
    let criteria = CoCriteria { deviation_factor: 4.0, std_ceiling: 1.0 / 3.0 };

    // Layer normalization needs its shift; RMS normalization refuses one.
    assert!(matches!(
        decompose_normalization(&snap(values.clone()), &gamma, None, NormKind::LayerNorm, criteria),
        Err(Error::BetaRequired)
    ));
    assert!(matches!(
        decompose_normalization(
            &snap(values.clone()),
            &gamma,
            Some(&beta),
            NormKind::RmsNorm,
            criteria
        ),
        Err(Error::BetaUnexpected)
    ));
    assert!(decompose_normalization(
        &snap(values.clone()),
        &gamma,
        Some(&beta),
        NormKind::LayerNorm,
        criteria
    )
    .is_ok());

    // A constant token row cannot be standardized.
    let mut degenerate = values;
    degenerate.row_mut(1).fill(0.5);
    assert!(matches!(
        decompose_normalization(
            &snap(degenerate),
            &gamma,
            Some(&beta),
            NormKind::LayerNorm,
            criteria
        ),
        Err(Error::DegenerateToken(1))
    ));
}

#[test]
fn single_token_snapshots_are_rejected_for_channel_work() {
    let one_row = Array2::from_shape_fn((1, 6), |(_, c)| c as f32);
    assert!(matches!(
        detect_outlier_channels(
            &snap(one_row),
            CoCriteria { deviation_factor: 4.0, std_ceiling: 1.0 / 3.0 },
            false,
            MaCriteria::default(),
        ),
        Err(Error::SingleToken)
    ));
}
