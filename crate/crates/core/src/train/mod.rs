//! Training loops and return-conditioned rollout evaluation.
//!
//! Two training modes: `windowed` samples fixed-K windows with uniformly
//! random end indices; `full_trajectory` right-pads whole episodes and
//! masks the padded loss. Two inference modes: `windowed` rebuilds the
//! last-K window each step, `recurrent` carries per-layer state and feeds
//! one timestep of tokens at a time. The target return R0 conditions the
//! rollout and, by default, decreases by each observed reward.

pub mod loss;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use loss::{compute_loss, LossKind};

use crate::dataset::{self, OfflineDataset, Targets, WindowSample};
use crate::diff::{evaluate_with_gradients, LossSpec};
use crate::env::{self, Action, EnvKind};
use crate::error::{Error, Result};
use crate::mathx;
use crate::model::{
    forward_window, init_params, predict_from_hidden, step_token, Concat, ForwardOpts, ModelConfig,
    Precision, RawToken, RecurrentState,
};
use crate::optim::{adam_step, AdamState, Schedule};
use crate::params::ParamSet;
use crate::rng::{self, stream};
use crate::stats;

/// Windowed (fixed-K) or padded full-trajectory training batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrainMode {
    Windowed,
    FullTrajectory,
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    pub loss: LossKind,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub mode: TrainMode,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dropout: f64,
}

/// Windowed rebuilding vs stateful recurrence at rollout time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InferenceMode {
    Windowed,
    Recurrent,
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalConfig {
    /// Target return R0 set at episode start.
    pub target_rtg: f64,
    pub episodes: usize,
    pub mode: InferenceMode,
    /// Window length override (windowed mode); defaults to the model's K.
    pub k: Option<usize>,
    /// Decrease the carried RTG by observed rewards (default) or hold R0.
    pub decrement_rtg: bool,
    /// Sample discrete actions from the softmax instead of argmax.
    pub sample_actions: bool,
    pub seed: u64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("evaluation needs at least one episode"));
        }
        Ok(())
    }
}

/// Per-episode raw returns plus normalization.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub normalized: f64,
}

/// 100 * (raw - random) / (expert - random).
pub fn normalized_score(raw: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if expert_ref == random_ref {
        return Err(Error::domain("expert and random reference scores are equal"));
    }
    Ok(100.0 * (raw - random_ref) / (expert_ref - random_ref))
}

/// One row of the training metrics series.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRow {
    pub step: usize,
    pub loss: f64,
    pub eval_mean_return: f64,
    pub normalized_score: f64,
}

/// Final checkpoint plus the metric series.
pub struct TrainOutput {
    pub params: ParamSet,
    pub optimizer: AdamState,
    pub metrics: Vec<MetricRow>,
}

fn check_loss_matches_env(cfg: &ModelConfig, kind: LossKind) -> Result<()> {
    let ok = match kind {
        LossKind::Ce => cfg.action_space.is_discrete(),
        LossKind::Mse => !cfg.action_space.is_discrete(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config("loss kind is inconsistent with the action space"))
    }
}

fn sample_batch(
    dataset: &OfflineDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WindowSample>> {
    let ad = model_cfg.action_space.input_dim();
    let mut batch = Vec::with_capacity(train_cfg.batch_size);
    match train_cfg.mode {
        TrainMode::Windowed => {
            for _ in 0..train_cfg.batch_size {
                let idx = rng.gen_range(0..dataset.trajectories.len());
                batch.push(dataset::sample_training_window(
                    &dataset.trajectories[idx],
                    model_cfg.context_k,
                    ad,
                    rng,
                )?);
            }
        }
        TrainMode::FullTrajectory => {
            let refs: Vec<&dataset::Trajectory> = (0..train_cfg.batch_size)
                .map(|_| &dataset.trajectories[rng.gen_range(0..dataset.trajectories.len())])
                .collect();
            batch = dataset::pad_batch_trajectories(&refs, ad)?;
        }
    }
    Ok(batch)
}

/// Seed-deterministic training. `on_metric` observes each metric row as
/// it is produced (loss every eval interval, with a rollout evaluation).
pub fn train_loop(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &OfflineDataset,
    seed: u64,
    on_metric: &mut dyn FnMut(&MetricRow),
) -> Result<TrainOutput> {
    model_cfg.validate()?;
    check_loss_matches_env(model_cfg, train_cfg.loss)?;
    if model_cfg.state_dim != dataset.env.state_dim()
        || model_cfg.action_space != dataset.env.action_space()
    {
        return Err(Error::config("dataset environment does not match the model config"));
    }
    let mut params = init_params(model_cfg, seed)?;
    let mut opt = AdamState::new(
        train_cfg.learning_rate,
        train_cfg.beta1,
        train_cfg.beta2,
        train_cfg.adam_eps,
        train_cfg.weight_decay,
        train_cfg.grad_clip,
        train_cfg.warmup_steps,
        train_cfg.schedule,
        train_cfg.total_steps,
    );
    let mut data_rng = rng::stream_rng(seed, stream::DATA_SAMPLING);
    let mut metrics = Vec::new();
    for step in 1..=train_cfg.total_steps {
        let batch = sample_batch(dataset, model_cfg, train_cfg, &mut data_rng)?;
        let spec = LossSpec {
            kind: train_cfg.loss,
            dropout: train_cfg.dropout,
            seed: rng::mix(seed, step as u64),
        };
        let report = evaluate_with_gradients(model_cfg, &params, &batch, &spec)
            .map_err(|e| Error::numeric(alloc::format!("training aborted at step {step}: {e}")))?;
        adam_step(&mut opt, &mut params, &report.grads)
            .map_err(|e| Error::numeric(alloc::format!("training aborted at step {step}: {e}")))?;
        let at_interval = train_cfg.eval_interval > 0 && step % train_cfg.eval_interval == 0;
        if at_interval || step == train_cfg.total_steps {
            let eval = EvalConfig {
                target_rtg: dataset.expert_score,
                episodes: train_cfg.eval_episodes.max(1),
                mode: InferenceMode::Windowed,
                k: None,
                decrement_rtg: true,
                sample_actions: false,
                seed,
            };
            let res = rollout_evaluate(model_cfg, &params, dataset.env, &eval, (dataset.random_score, dataset.expert_score))?;
            let row = MetricRow {
                step,
                loss: report.loss,
                eval_mean_return: res.mean,
                normalized_score: res.normalized,
            };
            on_metric(&row);
            metrics.push(row);
        }
    }
    Ok(TrainOutput { params, optimizer: opt, metrics })
}

/// Select an action from head outputs.
fn select_action(
    kind: EnvKind,
    outputs: &[f64],
    sample: bool,
    rng: &mut ChaCha8Rng,
) -> Action {
    match kind.action_space() {
        crate::model::ActionSpace::Discrete { n } => {
            let logits = &outputs[..n];
            if sample {
                // Softmax inverse-CDF draw.
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|v| mathx::exp(v - m)).collect();
                let denom: f64 = exps.iter().sum();
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut acc = 0.0;
                for (i, e) in exps.iter().enumerate() {
                    acc += e / denom;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(n - 1)
            } else {
                // Argmax, ties to the lowest index.
                let mut best = 0;
                for i in 1..n {
                    if logits[i] > logits[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
        }
        crate::model::ActionSpace::Continuous { dim } => {
            // Head output, clamped into the action box.
            Action::Continuous(outputs[..dim].iter().map(|v| v.clamp(-1.0, 1.0)).collect())
        }
    }
}

fn action_to_input(action: &Action, ad: usize) -> Vec<f64> {
    match action {
        Action::Discrete(a) => {
            let mut v = vec![0.0; ad];
            v[*a] = 1.0;
            v
        }
        Action::Continuous(a) => a.clone(),
    }
}

/// Per-step record of a rollout episode (also used by the analysis module
/// to replay decision prefixes).
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub observations: Vec<Vec<f64>>,
    pub act_inputs: Vec<Vec<f64>>,
    pub rtgs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Raw head outputs at each decision step.
    pub outputs: Vec<Vec<f64>>,
}

impl EpisodeTrace {
    pub fn ret(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Builds the evaluation window for decision step `t` from the running
/// episode history (current action slot zeroed).
pub fn eval_window(
    cfg: &ModelConfig,
    trace: &EpisodeTrace,
    t: usize,
    k: usize,
) -> WindowSample {
    let sd = cfg.state_dim;
    let ad = cfg.action_space.input_dim();
    let real = (t + 1).min(k);
    let pad = k - real;
    let start = t + 1 - real;
    let mut w = WindowSample {
        k,
        state_dim: sd,
        act_dim: ad,
        rtgs: vec![0.0; k],
        states: vec![0.0; k * sd],
        act_inputs: vec![0.0; k * ad],
        prev_act_inputs: vec![0.0; k * ad],
        timesteps: vec![0; k],
        mask: vec![false; k],
        targets: match cfg.action_space {
            crate::model::ActionSpace::Discrete { .. } => Targets::Discrete(vec![0; k]),
            crate::model::ActionSpace::Continuous { dim } => {
                Targets::Continuous { dim, values: vec![0.0; k * dim] }
            }
        },
    };
    for slot in pad..k {
        let ts = start + (slot - pad);
        w.mask[slot] = true;
        w.rtgs[slot] = trace.rtgs[ts];
        w.states[slot * sd..(slot + 1) * sd].copy_from_slice(&trace.observations[ts]);
        w.timesteps[slot] = ts;
        if ts < t {
            w.act_inputs[slot * ad..(slot + 1) * ad].copy_from_slice(&trace.act_inputs[ts]);
        }
        if ts > 0 {
            w.prev_act_inputs[slot * ad..(slot + 1) * ad].copy_from_slice(&trace.act_inputs[ts - 1]);
        }
    }
    w
}

/// Return-conditioned rollout; `refs` is (random_score, expert_score) for
/// normalization. Never mutates the checkpoint.
pub fn rollout_evaluate(
    cfg: &ModelConfig,
    params: &ParamSet,
    env_kind: EnvKind,
    eval: &EvalConfig,
    refs: (f64, f64),
) -> Result<EvalResult> {
    let traces = rollout_traces(cfg, params, env_kind, eval, Precision::F64)?;
    let returns: Vec<f64> = traces.iter().map(|t| t.ret()).collect();
    let lengths: Vec<usize> = traces.iter().map(|t| t.len()).collect();
    let (mean, std) = stats::mean_std(&returns);
    let normalized = normalized_score(mean, refs.0, refs.1)?;
    Ok(EvalResult { returns, lengths, mean, std, normalized })
}

/// Rollouts returning full per-step traces (head outputs included).
pub fn rollout_traces(
    cfg: &ModelConfig,
    params: &ParamSet,
    env_kind: EnvKind,
    eval: &EvalConfig,
    precision: Precision,
) -> Result<Vec<EpisodeTrace>> {
    eval.validate()?;
    if cfg.state_dim != env_kind.state_dim() || cfg.action_space != env_kind.action_space() {
        return Err(Error::config("checkpoint config does not match the environment"));
    }
    let k = eval.k.unwrap_or(cfg.context_k).max(1);
    let ad = cfg.action_space.input_dim();
    let horizon = env_kind.horizon();
    let mut traces = Vec::with_capacity(eval.episodes);
    for episode in 0..eval.episodes {
        let mut rng = rng::stream_rng(eval.seed, stream::EVAL + episode as u64);
        let mut trace = EpisodeTrace {
            observations: Vec::new(),
            act_inputs: Vec::new(),
            rtgs: Vec::new(),
            rewards: Vec::new(),
            outputs: Vec::new(),
        };
        let mut state = env_kind.initial_state();
        let mut rec_state = match eval.mode {
            InferenceMode::Recurrent => Some(RecurrentState::new(cfg)?),
            InferenceMode::Windowed => None,
        };
        let mut rtg = eval.target_rtg;
        for t in 0..horizon {
            trace.observations.push(state.observation(env_kind));
            trace.rtgs.push(rtg);
            let outputs = match eval.mode {
                InferenceMode::Windowed => {
                    let w = eval_window(cfg, &trace, t, k);
                    let caches = forward_window(cfg, params, &w, ForwardOpts::eval_with(precision))?;
                    let dim = caches.preds.dim;
                    caches.preds.values[(k - 1) * dim..k * dim].to_vec()
                }
                InferenceMode::Recurrent => {
                    let rs = rec_state.as_mut().unwrap();
                    let obs = trace.observations[t].clone();
                    let hidden = match cfg.concat {
                        Concat::B3ld => {
                            step_token(cfg, params, rs, RawToken::Rtg(rtg), t)?;
                            step_token(cfg, params, rs, RawToken::State(&obs), t)?
                        }
                        Concat::Bl3d => {
                            let prev: Vec<f64> = if t > 0 {
                                trace.act_inputs[t - 1].clone()
                            } else {
                                vec![0.0; ad]
                            };
                            step_token(
                                cfg,
                                params,
                                rs,
                                RawToken::Fused { rtg, state: &obs, prev_action: &prev },
                                t,
                            )?
                        }
                    };
                    predict_from_hidden(cfg, params, &hidden)?
                }
            };
            let action = select_action(env_kind, &outputs, eval.sample_actions, &mut rng);
            trace.outputs.push(outputs);
            trace.act_inputs.push(action_to_input(&action, ad));
            if let (InferenceMode::Recurrent, Concat::B3ld) = (eval.mode, cfg.concat) {
                let act_input = trace.act_inputs[t].clone();
                step_token(cfg, params, rec_state.as_mut().unwrap(), RawToken::Action(&act_input), t)?;
            }
            let (next, reward, done) = env::env_step(env_kind, &state, &action)?;
            trace.rewards.push(reward);
            if eval.decrement_rtg {
                rtg -= reward;
            }
            state = next;
            if done {
                break;
            }
        }
        traces.push(trace);
    }
    Ok(traces)
}
