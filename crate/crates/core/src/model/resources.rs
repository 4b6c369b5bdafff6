//! Parameter and multiply-accumulate accounting.
//!
//! Parameter counts come from the same [`param_shapes`] list that builds
//! the live model, so the total always equals the trainable element count.
//! MACs count the multiply-accumulates of matmul, conv, discretization,
//! and scan terms for one forward pass over a K-timestep window; norms and
//! scalar activations are excluded. Terms are named so tests can check
//! their scaling individually.

use alloc::string::String;
use alloc::vec::Vec;

use super::{param_shapes, BlockKind, Concat, ModelConfig};

#[derive(Debug, Clone)]
pub struct MacsTerm {
    pub name: String,
    pub macs: u64,
}

#[derive(Debug, Clone)]
pub struct ResourceCounts {
    pub param_count: usize,
    pub param_terms: Vec<(String, usize)>,
    pub macs_total: u64,
    pub macs_terms: Vec<MacsTerm>,
}

/// Counts for a forward pass over a window of `k` timesteps.
pub fn resource_counts(cfg: &ModelConfig, k: usize) -> ResourceCounts {
    let param_terms: Vec<(String, usize)> =
        param_shapes(cfg).iter().map(|(n, s)| (n.clone(), s.iter().product())).collect();
    let param_count = param_terms.iter().map(|(_, c)| c).sum();

    let d = cfg.d_model as u64;
    let di = cfg.d_inner() as u64;
    let n = cfg.d_state as u64;
    let r = cfg.dt_rank as u64;
    let dc = cfg.d_conv as u64;
    let sd = cfg.state_dim as u64;
    let ad = cfg.action_space.input_dim() as u64;
    let ao = cfg.action_space.output_dim() as u64;
    let kk = k as u64;
    let l = cfg.l_tok(k) as u64;
    let layers = cfg.n_layers as u64;

    let mut terms: Vec<MacsTerm> = Vec::new();
    let mut push = |name: &str, macs: u64| terms.push(MacsTerm { name: name.into(), macs });

    // Embedding: one linear per modality per timestep (+ fusion).
    let mut embed = kk * (d + sd * d + ad * d);
    if matches!(cfg.concat, Concat::Bl3d) {
        embed += kk * 3 * d * d;
    }
    push("embed", embed);

    match cfg.block {
        BlockKind::PreUp | BlockKind::PostUp => {
            push("mixer.in_proj", layers * l * d * 2 * di);
            if cfg.mixer_conv {
                push("mixer.conv", layers * l * di * dc);
            }
            push("mixer.b_proj", layers * l * di * n);
            push("mixer.c_proj", layers * l * di * n);
            push("mixer.dt", layers * l * (di * r + r * di));
            // delta*A and delta*B elementwise products.
            push("mixer.discretize", layers * 2 * l * di * n);
            // State decay, input injection, readout, plus the skip.
            push("mixer.scan", layers * (3 * l * di * n + l * di));
            push("mixer.gate", layers * l * di);
            push("mixer.out_proj", layers * l * di * d);
        }
        BlockKind::Attention => {
            push("attn.qkv", layers * 3 * l * d * d);
            // Q·K^T and probs·V over all heads: 2 * L^2 * d each forward.
            push("attn.scores_l2", layers * l * l * d);
            push("attn.mix_l2", layers * l * l * d);
            push("attn.out_proj", layers * l * d * d);
        }
    }
    if matches!(cfg.block, BlockKind::PostUp | BlockKind::Attention) {
        push("mlp", layers * l * 8 * d * d);
    }
    push("head", kk * d * ao);

    let macs_total = terms.iter().map(|t| t.macs).sum();
    ResourceCounts { param_count, param_terms, macs_total, macs_terms: terms }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::model::init_params;

    #[test]
    fn param_count_matches_initialized_elements() {
        for block in [BlockKind::PreUp, BlockKind::PostUp, BlockKind::Attention] {
            let cfg = tiny_config(block, Concat::B3ld);
            let rc = resource_counts(&cfg, cfg.context_k);
            let params = init_params(&cfg, 0).unwrap();
            assert_eq!(rc.param_count, params.total_elements());
        }
    }

    #[test]
    fn position_embedding_delta_is_exact() {
        let mut cfg = tiny_config(BlockKind::PreUp, Concat::B3ld);
        let base = resource_counts(&cfg, cfg.context_k).param_count;
        cfg.position_embedding = true;
        let with = resource_counts(&cfg, cfg.context_k).param_count;
        assert_eq!(with - base, cfg.max_ep_len * cfg.d_model);
    }

    #[test]
    fn quadratic_and_linear_terms_scale_as_expected() {
        // Doubling the token count multiplies the attention score term by
        // 4 and the scan term by 2, exactly.
        let mut attn_cfg = tiny_config(BlockKind::Attention, Concat::B3ld);
        attn_cfg.n_heads = 2;
        let term = |cfg: &ModelConfig, k: usize, name: &str| {
            resource_counts(cfg, k)
                .macs_terms
                .iter()
                .find(|t| t.name == name)
                .map(|t| t.macs)
                .unwrap()
        };
        let s256 = term(&attn_cfg, 256, "attn.scores_l2");
        let s512 = term(&attn_cfg, 512, "attn.scores_l2");
        assert_eq!(s512, 4 * s256);

        let ssm_cfg = tiny_config(BlockKind::PreUp, Concat::B3ld);
        let m256 = term(&ssm_cfg, 256, "mixer.scan");
        let m512 = term(&ssm_cfg, 512, "mixer.scan");
        assert_eq!(m512, 2 * m256);
    }
}
