//! Behavioral contracts of the model stack: exact causality, inert
//! padding, zeroed-mixer collapse, and windowed/recurrent agreement.

use dema_core::dataset::{Targets, WindowSample};
use dema_core::model::{
    forward_window, init_params, policy_forward, predict_from_hidden, step_token, ActionSpace,
    BlockKind, Concat, ForwardOpts, ModelConfig, RawToken, RecurrentState,
};
use rand::Rng;

fn config(block: BlockKind, concat: Concat) -> ModelConfig {
    ModelConfig {
        d_model: 12,
        n_layers: 2,
        d_state: 4,
        expand: 2,
        d_conv: 3,
        dt_rank: 2,
        context_k: 6,
        concat,
        block,
        n_heads: 3,
        position_embedding: false,
        mixer_conv: true,
        max_ep_len: 64,
        action_space: ActionSpace::Discrete { n: 3 },
        state_dim: 5,
    }
}

fn random_window(cfg: &ModelConfig, seed: u64, pad: usize) -> WindowSample {
    let mut rng = dema_core::rng::stream_rng(seed, 0);
    let k = cfg.context_k;
    let sd = cfg.state_dim;
    let ad = cfg.action_space.input_dim();
    let mut w = WindowSample {
        k,
        state_dim: sd,
        act_dim: ad,
        rtgs: (0..k).map(|_| rng.gen_range(0.0..1.0)).collect(),
        states: (0..k * sd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        act_inputs: vec![0.0; k * ad],
        prev_act_inputs: vec![0.0; k * ad],
        timesteps: (0..k).collect(),
        mask: (0..k).map(|i| i >= pad).collect(),
        targets: Targets::Discrete(vec![0; k]),
    };
    for slot in pad..k {
        w.act_inputs[slot * ad + rng.gen_range(0..ad)] = 1.0;
        if slot > pad {
            let prev_hot = (0..ad).find(|i| w.act_inputs[(slot - 1) * ad + i] == 1.0).unwrap();
            w.prev_act_inputs[slot * ad + prev_hot] = 1.0;
        }
    }
    for slot in 0..pad {
        w.rtgs[slot] = 0.0;
        w.timesteps[slot] = 0;
        for v in w.states[slot * sd..(slot + 1) * sd].iter_mut() {
            *v = 0.0;
        }
    }
    w
}

/// Perturbing any suffix timestep leaves all earlier predictions exactly
/// unchanged, for every block variant and both schemes.
#[test]
fn causality_is_exact_for_all_variants() {
    for block in [BlockKind::PreUp, BlockKind::PostUp, BlockKind::Attention] {
        for concat in [Concat::B3ld, Concat::Bl3d] {
            let cfg = config(block, concat);
            let params = init_params(&cfg, 5).unwrap();
            let w = random_window(&cfg, 9, 0);
            let base = policy_forward(&cfg, &params, &w).unwrap();
            for cut in 1..cfg.context_k {
                let mut wp = w.clone();
                // Perturb everything from timestep `cut` onward.
                for slot in cut..cfg.context_k {
                    wp.rtgs[slot] += 1.75;
                    for v in wp.states[slot * cfg.state_dim..(slot + 1) * cfg.state_dim].iter_mut() {
                        *v -= 0.6;
                    }
                    for v in wp.act_inputs[slot * 3..(slot + 1) * 3].iter_mut() {
                        *v = 1.0 - *v;
                    }
                    if slot > cut {
                        for v in wp.prev_act_inputs[slot * 3..(slot + 1) * 3].iter_mut() {
                            *v = 1.0 - *v;
                        }
                    }
                }
                let pert = policy_forward(&cfg, &params, &wp).unwrap();
                for slot in 0..cut {
                    let a = &base.values[slot * 3..(slot + 1) * 3];
                    let b = &pert.values[slot * 3..(slot + 1) * 3];
                    assert_eq!(a, b, "{block:?}/{concat:?}: slot {slot} changed by suffix {cut}");
                }
            }
        }
    }
}

/// Left-padding a window with masked slots does not change the
/// predictions at the real slots, bit for bit.
#[test]
fn masked_padding_is_inert() {
    for block in [BlockKind::PreUp, BlockKind::PostUp, BlockKind::Attention] {
        let cfg = config(block, Concat::B3ld);
        let params = init_params(&cfg, 2).unwrap();
        let full = random_window(&cfg, 4, 0);
        // Build a shifted window: 2 masked pads + the first 4 real slots.
        let pad = 2;
        let mut padded = random_window(&cfg, 4, pad);
        let sd = cfg.state_dim;
        let ad = 3;
        for slot in pad..cfg.context_k {
            let src = slot - pad;
            padded.rtgs[slot] = full.rtgs[src];
            padded.timesteps[slot] = full.timesteps[src];
            padded
                .states[slot * sd..(slot + 1) * sd]
                .copy_from_slice(&full.states[src * sd..(src + 1) * sd]);
            padded
                .act_inputs[slot * ad..(slot + 1) * ad]
                .copy_from_slice(&full.act_inputs[src * ad..(src + 1) * ad]);
            padded
                .prev_act_inputs[slot * ad..(slot + 1) * ad]
                .copy_from_slice(&full.prev_act_inputs[src * ad..(src + 1) * ad]);
        }
        let base = policy_forward(&cfg, &params, &full).unwrap();
        let shifted = policy_forward(&cfg, &params, &padded).unwrap();
        for slot in pad..cfg.context_k {
            let a = &base.values[(slot - pad) * ad..(slot - pad + 1) * ad];
            let b = &shifted.values[slot * ad..(slot + 1) * ad];
            assert_eq!(a, b, "{block:?}: padded slot {slot} differs from unpadded");
        }
        assert!(!shifted.valid[0] && !shifted.valid[1]);
    }
}

/// Zero input with zero-initialized biases produces zero block outputs
/// (homogeneity of the mixer path).
#[test]
fn zero_window_stays_zero_through_mixer_blocks() {
    let cfg = config(BlockKind::PreUp, Concat::B3ld);
    let mut params = init_params(&cfg, 7).unwrap();
    // Zero every embedding/bias so tokens are exactly zero; conv bias too.
    for name in [
        "embed.rtg.w",
        "embed.rtg.b",
        "embed.state.w",
        "embed.state.b",
        "embed.action.w",
        "embed.action.b",
    ] {
        params.values_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
    }
    for layer in 0..cfg.n_layers {
        params
            .values_mut(&format!("layers.{layer}.mixer.conv.b"))
            .unwrap()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        // LayerNorm of a zero row is the bias; zero it as well.
        params.values_mut(&format!("layers.{layer}.ln1.b")).unwrap().iter_mut().for_each(|v| *v = 0.0);
    }
    let w = random_window(&cfg, 3, 0);
    let caches = forward_window(&cfg, &params, &w, ForwardOpts::eval()).unwrap();
    // All block inputs/outputs stay exactly zero.
    for xs in &caches.xs {
        assert!(xs.iter().all(|v| *v == 0.0));
    }
}

/// Zeroing the S6 parameter group turns every pre-up block into the
/// identity map: information flows only through the residual stream.
#[test]
fn zeroed_mixer_group_collapses_to_residual() {
    let cfg = config(BlockKind::PreUp, Concat::B3ld);
    let mut params = init_params(&cfg, 8).unwrap();
    for layer in 0..cfg.n_layers {
        for name in cfg.mixer_group_names(layer) {
            params.values_mut(&name).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let w = random_window(&cfg, 6, 0);
    let caches = forward_window(&cfg, &params, &w, ForwardOpts::eval()).unwrap();
    let l = caches.tw.l_tok;
    let d = cfg.d_model;
    for layer in 0..cfg.n_layers {
        for i in 0..l * d {
            assert_eq!(caches.xs[layer][i], caches.xs[layer + 1][i], "layer {layer} not identity");
        }
    }
}

/// Recurrent stepping over a full prefix equals the windowed forward with
/// K >= prefix length, token for token, bit for bit.
#[test]
fn recurrent_equals_windowed_forward() {
    for block in [BlockKind::PreUp, BlockKind::PostUp] {
        for concat in [Concat::B3ld, Concat::Bl3d] {
            let mut cfg = config(block, concat);
            cfg.position_embedding = true; // exercise the position table too
            let params = init_params(&cfg, 12).unwrap();
            let w = random_window(&cfg, 13, 0);
            let windowed = policy_forward(&cfg, &params, &w).unwrap();

            let mut state = RecurrentState::new(&cfg).unwrap();
            let sd = cfg.state_dim;
            let ad = 3;
            for slot in 0..cfg.context_k {
                let state_obs = &w.states[slot * sd..(slot + 1) * sd];
                let hidden = match concat {
                    Concat::B3ld => {
                        step_token(&cfg, &params, &mut state, RawToken::Rtg(w.rtgs[slot]), slot).unwrap();
                        step_token(&cfg, &params, &mut state, RawToken::State(state_obs), slot).unwrap()
                    }
                    Concat::Bl3d => {
                        let prev = &w.prev_act_inputs[slot * ad..(slot + 1) * ad];
                        step_token(
                            &cfg,
                            &params,
                            &mut state,
                            RawToken::Fused { rtg: w.rtgs[slot], state: state_obs, prev_action: prev },
                            slot,
                        )
                        .unwrap()
                    }
                };
                let pred = predict_from_hidden(&cfg, &params, &hidden).unwrap();
                let want = &windowed.values[slot * ad..(slot + 1) * ad];
                assert_eq!(pred.as_slice(), want, "{block:?}/{concat:?} slot {slot}");
                if matches!(concat, Concat::B3ld) {
                    let act = &w.act_inputs[slot * ad..(slot + 1) * ad];
                    step_token(&cfg, &params, &mut state, RawToken::Action(act), slot).unwrap();
                }
            }
        }
    }
}

/// The attention baseline reports an unsupported-mode error for recurrent
/// inference rather than producing wrong numbers.
#[test]
fn attention_has_no_recurrent_mode() {
    let cfg = config(BlockKind::Attention, Concat::B3ld);
    assert!(matches!(
        RecurrentState::new(&cfg),
        Err(dema_core::Error::Unsupported(_))
    ));
}

/// Same window twice gives identical predictions (pure forward).
#[test]
fn forward_is_deterministic() {
    let cfg = config(BlockKind::PreUp, Concat::Bl3d);
    let params = init_params(&cfg, 1).unwrap();
    let w = random_window(&cfg, 2, 1);
    let a = policy_forward(&cfg, &params, &w).unwrap();
    let b = policy_forward(&cfg, &params, &w).unwrap();
    assert_eq!(a.values, b.values);
    // Both schemes emit K predictions.
    assert_eq!(a.values.len(), cfg.context_k * 3);
}

/// Single-token attention window: the self-attention weight is exactly 1.
#[test]
fn single_token_attention_is_identity_weight() {
    let mut cfg = config(BlockKind::Attention, Concat::Bl3d);
    cfg.context_k = 1;
    let params = init_params(&cfg, 3).unwrap();
    let w = random_window(&cfg, 5, 0);
    let caches = forward_window(&cfg, &params, &w, ForwardOpts::eval()).unwrap();
    match &caches.blocks[0] {
        dema_core::model::BlockCache::Attn { attn, .. } => {
            for h in 0..cfg.n_heads {
                assert_eq!(attn.probs[h], 1.0);
            }
        }
        _ => panic!("expected attention cache"),
    }
}

/// Attention rows sum to one over the unmasked, causal positions.
#[test]
fn attention_rows_are_normalized() {
    let cfg = config(BlockKind::Attention, Concat::B3ld);
    let params = init_params(&cfg, 3).unwrap();
    let w = random_window(&cfg, 5, 2);
    let caches = forward_window(&cfg, &params, &w, ForwardOpts::eval()).unwrap();
    let l = caches.tw.l_tok;
    match &caches.blocks[1] {
        dema_core::model::BlockCache::Attn { attn, .. } => {
            for h in 0..cfg.n_heads {
                for i in 0..l {
                    let row = &attn.probs[(h * l + i) * l..(h * l + i + 1) * l];
                    let sum: f64 = row.iter().sum();
                    if caches.tw.mask[i] {
                        assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
                    } else {
                        assert_eq!(sum, 0.0);
                    }
                }
            }
        }
        _ => panic!("expected attention cache"),
    }
}

/// Without the position table the model is invariant to shifting all
/// timesteps by a constant.
#[test]
fn timestep_shift_invariance_without_position_table() {
    let cfg = config(BlockKind::PreUp, Concat::B3ld);
    assert!(!cfg.position_embedding);
    let params = init_params(&cfg, 4).unwrap();
    let w = random_window(&cfg, 6, 0);
    let mut shifted = w.clone();
    for t in shifted.timesteps.iter_mut() {
        *t += 17;
    }
    let a = policy_forward(&cfg, &params, &w).unwrap();
    let b = policy_forward(&cfg, &params, &shifted).unwrap();
    assert_eq!(a.values, b.values);
}

/// Post-up parameter count exceeds pre-up at expand=1 by exactly the MLP
/// terms: 8*d^2 + 5*d (weights plus biases of the two layers) plus the
/// extra LayerNorm (2*d).
#[test]
fn post_up_parameter_delta_is_the_mlp() {
    let mut pre = config(BlockKind::PreUp, Concat::B3ld);
    pre.expand = 1;
    let post = config(BlockKind::PostUp, Concat::B3ld);
    let d = pre.d_model;
    let pre_count = dema_core::model::resource_counts(&pre, pre.context_k).param_count;
    let post_count = dema_core::model::resource_counts(&post, post.context_k).param_count;
    let per_layer = 8 * d * d + 5 * d + 2 * d;
    assert_eq!(post_count - pre_count, pre.n_layers * per_layer);
}
