//! Return-conditioned sequence policy.
//!
//! A window of (return-to-go, state, action, timestep) tuples is embedded
//! either as interleaved modality tokens (`B3LD`, three tokens per
//! timestep in the order rtg/state/action) or as one fused token per
//! timestep (`BL3D`, the three embeddings concatenated and projected back
//! to `d_model`; the action slot holds the previous action so the token is
//! usable at decision time). A stack of causal blocks follows:
//!
//! - `pre_up`: x + OutProj(SiLU(gate) ⊙ S6(SiLU(CausalConv(stream)))),
//!   stream/gate from a width-expanding input projection (the standard
//!   gated S6 mixer block);
//! - `post_up`: transformer-style residual pair z = x + Mixer(LN(x)),
//!   y = z + MLP(LN(z)), with the same mixer at expand = 1;
//! - `attention`: pre-LN causal multi-head self-attention + MLP baseline.
//!
//! Predictions are read at the state token (`B3LD`) or the fused token
//! (`BL3D`) of each timestep. Forward passes are pure; training-time
//! caches carry everything the hand-derived backward pass needs.

mod attn;
mod embed;
mod ffn;
mod init;
mod mixer;
mod norm;
mod recurrent;
mod resources;
mod stack;

pub use embed::{embed_token, embed_window, EmbedCache, RawToken, TokenWindow};
pub use init::init_params;
pub use recurrent::{step_token, RecurrentState};
pub use resources::{resource_counts, MacsTerm, ResourceCounts};
pub use stack::{
    backward_window, forward_window, policy_forward, predict_from_hidden, BlockCache,
    ForwardCaches, ForwardOpts, Precision, Predictions,
};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// How the three modalities of a timestep become tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Concat {
    /// Temporal interleaving: 3K tokens, per-timestep order (rtg, state, action).
    B3ld,
    /// Embedding-dimension concatenation: K fused tokens.
    Bl3d,
}

/// Residual/block family of the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BlockKind {
    /// Gated S6 mixer with channel expansion inside the block.
    PreUp,
    /// S6 mixer at expand = 1 followed by a separate MLP sub-block.
    PostUp,
    /// Causal multi-head self-attention baseline.
    Attention,
}

/// Discrete index actions or bounded continuous vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { dim: usize },
}

impl ActionSpace {
    /// Width of the action input embedding (one-hot for discrete).
    pub fn input_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { dim } => *dim,
        }
    }

    /// Width of the policy head output (logits or vector).
    pub fn output_dim(&self) -> usize {
        self.input_dim()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    /// State dimension N of each S6 channel.
    pub d_state: usize,
    /// Channel expansion of the pre-up mixer (post-up runs at 1).
    pub expand: usize,
    /// Depthwise causal convolution width inside the mixer.
    pub d_conv: usize,
    /// Rank of the low-rank delta projection.
    pub dt_rank: usize,
    /// Context length K in timesteps.
    pub context_k: usize,
    pub concat: Concat,
    pub block: BlockKind,
    /// Heads of the attention baseline (ignored by mixer blocks).
    pub n_heads: usize,
    /// Learned global timestep embedding table toggle.
    pub position_embedding: bool,
    /// Depthwise conv inside the mixer; disabling drops its parameters.
    pub mixer_conv: bool,
    pub max_ep_len: usize,
    pub action_space: ActionSpace,
    pub state_dim: usize,
}

impl ModelConfig {
    /// Conventional delta projection rank: ceil(d_model / 16), at least 1.
    pub fn default_dt_rank(d_model: usize) -> usize {
        d_model.div_ceil(16).max(1)
    }

    pub fn d_inner(&self) -> usize {
        match self.block {
            BlockKind::PostUp => self.d_model,
            _ => self.expand * self.d_model,
        }
    }

    pub fn tokens_per_step(&self) -> usize {
        match self.concat {
            Concat::B3ld => 3,
            Concat::Bl3d => 1,
        }
    }

    /// Token-sequence length for a window of `k` timesteps.
    pub fn l_tok(&self, k: usize) -> usize {
        k * self.tokens_per_step()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.n_layers == 0
            || self.d_state == 0
            || self.expand == 0
            || self.dt_rank == 0
            || self.state_dim == 0
            || self.max_ep_len == 0
        {
            return Err(Error::config("model dimensions must all be >= 1"));
        }
        if self.context_k < 1 {
            return Err(Error::config("context length K must be >= 1"));
        }
        if self.d_conv < 1 {
            return Err(Error::config("d_conv must be >= 1"));
        }
        if self.action_space.input_dim() == 0 {
            return Err(Error::config("action space must have >= 1 dimension"));
        }
        if matches!(self.block, BlockKind::Attention) {
            if self.n_heads == 0 {
                return Err(Error::config("attention blocks need n_heads >= 1"));
            }
            if self.d_model % self.n_heads != 0 {
                return Err(Error::config(alloc::format!(
                    "d_model {} is not divisible by n_heads {}",
                    self.d_model,
                    self.n_heads
                )));
            }
        }
        Ok(())
    }

    /// Parameter names of one layer's S6 group: the hidden-attention
    /// carriers A, S_B, S_C, S_delta, and the depthwise conv. The input,
    /// gate, output projections, and the skip gain are not part of it.
    pub fn mixer_group_names(&self, layer: usize) -> Vec<String> {
        let mut names = alloc::vec![
            alloc::format!("layers.{layer}.mixer.a_log"),
            alloc::format!("layers.{layer}.mixer.b_proj.w"),
            alloc::format!("layers.{layer}.mixer.c_proj.w"),
            alloc::format!("layers.{layer}.mixer.dt.lo.w"),
            alloc::format!("layers.{layer}.mixer.dt.up.w"),
            alloc::format!("layers.{layer}.mixer.dt.bias"),
        ];
        if self.mixer_conv {
            names.push(alloc::format!("layers.{layer}.mixer.conv.w"));
            names.push(alloc::format!("layers.{layer}.mixer.conv.b"));
        }
        names
    }
}

/// Shapes of every trainable parameter, in creation order. Both
/// [`init_params`] and [`resource_counts`] derive from this single list,
/// so the parameter accounting can never drift from the live model.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let di = cfg.d_inner();
    let n = cfg.d_state;
    let r = cfg.dt_rank;
    let sd = cfg.state_dim;
    let ad = cfg.action_space.input_dim();
    let ao = cfg.action_space.output_dim();
    let mut v: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: String, shape: &[usize]| v.push((name, shape.to_vec()));

    push("embed.rtg.w".into(), &[d, 1]);
    push("embed.rtg.b".into(), &[d]);
    push("embed.state.w".into(), &[d, sd]);
    push("embed.state.b".into(), &[d]);
    push("embed.action.w".into(), &[d, ad]);
    push("embed.action.b".into(), &[d]);
    if matches!(cfg.concat, Concat::Bl3d) {
        push("embed.fuse.w".into(), &[d, 3 * d]);
        push("embed.fuse.b".into(), &[d]);
    }
    if cfg.position_embedding {
        push("embed.pos".into(), &[cfg.max_ep_len, d]);
    }
    for i in 0..cfg.n_layers {
        let p = |s: &str| alloc::format!("layers.{i}.{s}");
        push(p("ln1.g"), &[d]);
        push(p("ln1.b"), &[d]);
        match cfg.block {
            BlockKind::PreUp | BlockKind::PostUp => {
                push(p("mixer.in_proj.w"), &[2 * di, d]);
                if cfg.mixer_conv {
                    push(p("mixer.conv.w"), &[di, cfg.d_conv]);
                    push(p("mixer.conv.b"), &[di]);
                }
                push(p("mixer.b_proj.w"), &[n, di]);
                push(p("mixer.c_proj.w"), &[n, di]);
                push(p("mixer.dt.lo.w"), &[r, di]);
                push(p("mixer.dt.up.w"), &[di, r]);
                push(p("mixer.dt.bias"), &[di]);
                push(p("mixer.a_log"), &[di, n]);
                push(p("mixer.d_skip"), &[di]);
                push(p("mixer.out_proj.w"), &[d, di]);
            }
            BlockKind::Attention => {
                // Bias-free projections: a key bias shifts every score in a
                // row equally, so softmax ignores it — it would be a
                // parameter the gradient can never reach.
                push(p("attn.wq"), &[d, d]);
                push(p("attn.wk"), &[d, d]);
                push(p("attn.wv"), &[d, d]);
                push(p("attn.wo"), &[d, d]);
            }
        }
        if matches!(cfg.block, BlockKind::PostUp | BlockKind::Attention) {
            push(p("ln2.g"), &[d]);
            push(p("ln2.b"), &[d]);
            push(p("mlp.w1"), &[4 * d, d]);
            push(p("mlp.b1"), &[4 * d]);
            push(p("mlp.w2"), &[d, 4 * d]);
            push(p("mlp.b2"), &[d]);
        }
    }
    push("ln_f.g".into(), &[d]);
    push("ln_f.b".into(), &[d]);
    push("head.w".into(), &[ao, d]);
    push("head.b".into(), &[ao]);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config(block: BlockKind, concat: Concat) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 2,
            d_state: 4,
            expand: 2,
            d_conv: 3,
            dt_rank: 2,
            context_k: 4,
            concat,
            block,
            n_heads: 2,
            position_embedding: false,
            mixer_conv: true,
            max_ep_len: 32,
            action_space: ActionSpace::Discrete { n: 2 },
            state_dim: 5,
        }
    }

    #[test]
    fn validate_rejects_bad_heads() {
        let mut cfg = tiny_config(BlockKind::Attention, Concat::B3ld);
        cfg.n_heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.n_heads = 4;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn post_up_runs_at_expand_one() {
        let cfg = tiny_config(BlockKind::PostUp, Concat::B3ld);
        assert_eq!(cfg.d_inner(), cfg.d_model);
        let cfg = tiny_config(BlockKind::PreUp, Concat::B3ld);
        assert_eq!(cfg.d_inner(), 2 * cfg.d_model);
    }

    #[test]
    fn position_embedding_adds_exactly_one_table() {
        let mut cfg = tiny_config(BlockKind::PreUp, Concat::B3ld);
        let without: usize = param_shapes(&cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        cfg.position_embedding = true;
        let with: usize = param_shapes(&cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(with - without, cfg.max_ep_len * cfg.d_model);
    }
}
