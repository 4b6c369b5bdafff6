//! Offline datasets: behavior-policy generation, return-to-go
//! bookkeeping, window sampling, and full-trajectory padding.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{self, Action, EnvKind};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Which behavior produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BehaviorTag {
    Expert,
    Random,
}

impl BehaviorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            BehaviorTag::Expert => "expert",
            BehaviorTag::Random => "random",
        }
    }
}

/// Discrete indices or flattened continuous vectors (T x act_dim).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ActionTrace {
    Discrete(Vec<usize>),
    Continuous { dim: usize, values: Vec<f64> },
}

impl ActionTrace {
    pub fn len(&self) -> usize {
        match self {
            ActionTrace::Discrete(v) => v.len(),
            ActionTrace::Continuous { dim, values } => values.len() / dim.max(&1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One episode of experience with exact suffix-sum returns-to-go.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    /// T x state_dim, flattened.
    pub states: Vec<f64>,
    pub state_dim: usize,
    pub actions: ActionTrace,
    pub rewards: Vec<f64>,
    pub rtgs: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub tag: BehaviorTag,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Checks length agreement and the suffix-sum identity
    /// rtgs[t] = sum_{t' >= t} rewards[t'] (exact, including float order).
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.states.len() != t * self.state_dim
            || self.actions.len() != t
            || self.rtgs.len() != t
            || self.timesteps.len() != t
        {
            return Err(Error::shape("trajectory field lengths disagree"));
        }
        let want = compute_rtg(&self.rewards);
        if want != self.rtgs {
            return Err(Error::invariant("rtgs are not the exact reward suffix sums"));
        }
        Ok(())
    }
}

/// Behavior mixture: `expert_frac` of trajectories follow the expert with
/// epsilon-noise `eps` (uniform random action with probability eps); the
/// rest follow the uniform-random policy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mixture {
    pub expert_frac: f64,
    pub eps: f64,
}

/// A generated dataset plus everything needed to regenerate or normalize
/// against it.
#[derive(Debug, Clone)]
pub struct OfflineDataset {
    pub env: EnvKind,
    pub seed: u64,
    pub mixture: Mixture,
    pub trajectories: Vec<Trajectory>,
    /// Stored reference scores so normalization is self-contained.
    pub random_score: f64,
    pub expert_score: f64,
}

/// Suffix sums of the rewards, summed back-to-front.
pub fn compute_rtg(rewards: &[f64]) -> Vec<f64> {
    let mut rtgs = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t];
        rtgs[t] = acc;
    }
    rtgs
}

fn roll_episode(env: EnvKind, tag: BehaviorTag, eps: f64, rng: &mut impl Rng) -> Result<Trajectory> {
    let sd = env.state_dim();
    let horizon = env.horizon();
    let mut states = Vec::with_capacity(horizon * sd);
    let mut rewards = Vec::with_capacity(horizon);
    let mut timesteps = Vec::with_capacity(horizon);
    let mut actions_d: Vec<usize> = Vec::new();
    let mut actions_c: Vec<f64> = Vec::new();
    let mut state = env.initial_state();
    for t in 0..horizon {
        states.extend_from_slice(&state.observation(env));
        let action = match tag {
            BehaviorTag::Random => env::random_action(env, rng),
            BehaviorTag::Expert => {
                // Draw the noise coin before the random action so the
                // stream stays aligned regardless of the branch.
                let coin: f64 = rng.gen_range(0.0..1.0);
                if coin < eps {
                    env::random_action(env, rng)
                } else {
                    env::expert_action(env, &state)
                }
            }
        };
        match &action {
            Action::Discrete(a) => actions_d.push(*a),
            Action::Continuous(a) => actions_c.extend_from_slice(a),
        }
        let (next, reward, done) = env::env_step(env, &state, &action)?;
        rewards.push(reward);
        timesteps.push(t);
        state = next;
        if done {
            break;
        }
    }
    let rtgs = compute_rtg(&rewards);
    let actions = match env.action_space() {
        crate::model::ActionSpace::Discrete { .. } => ActionTrace::Discrete(actions_d),
        crate::model::ActionSpace::Continuous { dim } => ActionTrace::Continuous { dim, values: actions_c },
    };
    let traj = Trajectory { states, state_dim: sd, actions, rewards, rtgs, timesteps, tag };
    traj.validate()?;
    Ok(traj)
}

/// Generates `n_traj` episodes. Trajectory `i` draws from its own RNG
/// stream derived from (seed, i), so generation order is irrelevant and
/// regeneration is bit-identical.
pub fn generate_dataset(env: EnvKind, mixture: Mixture, n_traj: usize, seed: u64) -> Result<OfflineDataset> {
    if n_traj == 0 {
        return Err(Error::config("n_traj must be positive"));
    }
    if !(0.0..=1.0).contains(&mixture.expert_frac) || !(0.0..=1.0).contains(&mixture.eps) {
        return Err(Error::config("expert_frac and eps must lie in [0, 1]"));
    }
    let n_expert = libm::round(mixture.expert_frac * n_traj as f64) as usize;
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let tag = if i < n_expert { BehaviorTag::Expert } else { BehaviorTag::Random };
        let mut rng = rng::stream_rng(seed, stream::TRAJ_BASE + i as u64);
        trajectories.push(roll_episode(env, tag, mixture.eps, &mut rng)?);
    }
    Ok(OfflineDataset {
        env,
        seed,
        mixture,
        trajectories,
        random_score: env.random_score(),
        expert_score: env.expert_score(),
    })
}

/// Targets for each of the K window slots.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Discrete(Vec<usize>),
    Continuous { dim: usize, values: Vec<f64> },
}

/// A length-K training/evaluation window, left-padded and masked.
///
/// `act_inputs[k]` is the action taken at slot k (the prediction target,
/// which under temporal interleaving appears as an input token after its
/// prediction site); `prev_act_inputs[k]` is the action of slot k-1,
/// used by the fused-token scheme. Actions are one-hot for discrete
/// spaces; masked or unknown slots are all-zero.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub k: usize,
    pub state_dim: usize,
    pub act_dim: usize,
    pub rtgs: Vec<f64>,
    pub states: Vec<f64>,
    pub act_inputs: Vec<f64>,
    pub prev_act_inputs: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub mask: Vec<bool>,
    pub targets: Targets,
}

impl WindowSample {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

fn one_hot(idx: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[idx] = 1.0;
    v
}

fn action_input(traj: &Trajectory, t: usize, act_dim: usize) -> Vec<f64> {
    match &traj.actions {
        ActionTrace::Discrete(a) => one_hot(a[t], act_dim),
        ActionTrace::Continuous { dim, values } => values[t * dim..(t + 1) * dim].to_vec(),
    }
}

/// Builds the window covering timesteps `end+1-K ..= end` of a trajectory
/// (left-padded with masked zeros when the prefix is shorter than K).
pub fn window_at(traj: &Trajectory, k: usize, end: usize, act_dim: usize) -> Result<WindowSample> {
    if traj.is_empty() {
        return Err(Error::domain("cannot sample a window from an empty trajectory"));
    }
    if k == 0 {
        return Err(Error::domain("window length K must be >= 1"));
    }
    if end >= traj.len() {
        return Err(Error::range(alloc::format!("window end {end} beyond trajectory length {}", traj.len())));
    }
    let sd = traj.state_dim;
    let real = (end + 1).min(k);
    let pad = k - real;
    let start = end + 1 - real;
    let mut w = WindowSample {
        k,
        state_dim: sd,
        act_dim,
        rtgs: vec![0.0; k],
        states: vec![0.0; k * sd],
        act_inputs: vec![0.0; k * act_dim],
        prev_act_inputs: vec![0.0; k * act_dim],
        timesteps: vec![0; k],
        mask: vec![false; k],
        targets: match &traj.actions {
            ActionTrace::Discrete(_) => Targets::Discrete(vec![0; k]),
            ActionTrace::Continuous { dim, .. } => Targets::Continuous { dim: *dim, values: vec![0.0; k * dim] },
        },
    };
    for slot in pad..k {
        let t = start + (slot - pad);
        w.mask[slot] = true;
        w.rtgs[slot] = traj.rtgs[t];
        w.states[slot * sd..(slot + 1) * sd].copy_from_slice(&traj.states[t * sd..(t + 1) * sd]);
        w.timesteps[slot] = traj.timesteps[t];
        let act = action_input(traj, t, act_dim);
        w.act_inputs[slot * act_dim..(slot + 1) * act_dim].copy_from_slice(&act);
        if t > 0 {
            let prev = action_input(traj, t - 1, act_dim);
            w.prev_act_inputs[slot * act_dim..(slot + 1) * act_dim].copy_from_slice(&prev);
        }
        match (&mut w.targets, &traj.actions) {
            (Targets::Discrete(tg), ActionTrace::Discrete(a)) => tg[slot] = a[t],
            (Targets::Continuous { dim, values }, ActionTrace::Continuous { values: av, .. }) => {
                values[slot * *dim..(slot + 1) * *dim].copy_from_slice(&av[t * *dim..(t + 1) * *dim]);
            }
            _ => return Err(Error::internal("target kind mismatch")),
        }
    }
    Ok(w)
}

/// Uniformly random end index, window of the K timesteps ending there.
pub fn sample_training_window(
    traj: &Trajectory,
    k: usize,
    act_dim: usize,
    rng: &mut impl Rng,
) -> Result<WindowSample> {
    if traj.is_empty() {
        return Err(Error::domain("cannot sample a window from an empty trajectory"));
    }
    let end = rng.gen_range(0..traj.len());
    window_at(traj, k, end, act_dim)
}

/// Right-pads every trajectory of a batch to the longest one and returns
/// full-length windows whose mask is true only on real timesteps.
pub fn pad_batch_trajectories(trajs: &[&Trajectory], act_dim: usize) -> Result<Vec<WindowSample>> {
    if trajs.is_empty() {
        return Err(Error::domain("pad_batch_trajectories needs at least one trajectory"));
    }
    let t_max = trajs.iter().map(|t| t.len()).max().unwrap();
    let mut out = Vec::with_capacity(trajs.len());
    for traj in trajs {
        // Right padding: take the full trajectory then extend masked zeros.
        let mut w = window_at(traj, traj.len(), traj.len() - 1, act_dim)?;
        let sd = w.state_dim;
        let t = traj.len();
        w.k = t_max;
        w.rtgs.resize(t_max, 0.0);
        w.states.resize(t_max * sd, 0.0);
        w.act_inputs.resize(t_max * act_dim, 0.0);
        w.prev_act_inputs.resize(t_max * act_dim, 0.0);
        w.timesteps.resize(t_max, 0);
        w.mask.resize(t_max, false);
        match &mut w.targets {
            Targets::Discrete(tg) => tg.resize(t_max, 0),
            Targets::Continuous { dim, values } => values.resize(t_max * *dim, 0.0),
        }
        debug_assert_eq!(w.valid_count(), t);
        out.push(w);
    }
    Ok(out)
}

/// Behavior-mixture summary string for artifact headers.
pub fn mixture_description(m: &Mixture) -> String {
    alloc::format!("expert_frac={},eps={}", m.expert_frac, m.eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_dataset(n: usize, seed: u64) -> OfflineDataset {
        generate_dataset(EnvKind::Chain, Mixture { expert_frac: 0.2, eps: 0.1 }, n, seed).unwrap()
    }

    #[test]
    fn rtg_suffix_sums() {
        assert_eq!(compute_rtg(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
        assert_eq!(compute_rtg(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(compute_rtg(&[4.5]), vec![4.5]);
        assert!(compute_rtg(&[]).is_empty());
    }

    #[test]
    fn generation_is_deterministic_and_counted() {
        let a = chain_dataset(100, 7);
        assert_eq!(a.trajectories.len(), 100);
        let b = chain_dataset(100, 7);
        assert_eq!(a.trajectories, b.trajectories);
        let c = chain_dataset(100, 8);
        assert_ne!(a.trajectories, c.trajectories);
        for t in &a.trajectories {
            t.validate().unwrap();
        }
    }

    #[test]
    fn pure_expert_chain_dataset_is_optimal() {
        let d = generate_dataset(EnvKind::Chain, Mixture { expert_frac: 1.0, eps: 0.0 }, 20, 3).unwrap();
        for t in &d.trajectories {
            assert_eq!(t.len(), 9);
            assert_eq!(t.rtgs[0], 1.0);
            assert_eq!(t.tag, BehaviorTag::Expert);
        }
    }

    #[test]
    fn invalid_mixture_or_count_rejected() {
        assert!(generate_dataset(EnvKind::Chain, Mixture { expert_frac: 1.5, eps: 0.0 }, 5, 0).is_err());
        assert!(generate_dataset(EnvKind::Chain, Mixture { expert_frac: 0.5, eps: 0.0 }, 0, 0).is_err());
    }

    #[test]
    fn window_padding_rules() {
        let d = chain_dataset(10, 1);
        let traj = &d.trajectories[5];
        // End index 4 with K=8: 3 masked slots on the left.
        let w = window_at(traj, 8, 4.min(traj.len() - 1), 2).unwrap();
        if traj.len() > 4 {
            assert_eq!(w.mask.iter().filter(|m| !**m).count(), 3);
            assert!(!w.mask[0] && !w.mask[1] && !w.mask[2] && w.mask[3]);
            // Masked slots carry zeros.
            assert!(w.states[..3 * w.state_dim].iter().all(|v| *v == 0.0));
        }
        // Determinism of sampling.
        let mut r1 = crate::rng::stream_rng(5, 1);
        let mut r2 = crate::rng::stream_rng(5, 1);
        let w1 = sample_training_window(traj, 6, 2, &mut r1).unwrap();
        let w2 = sample_training_window(traj, 6, 2, &mut r2).unwrap();
        assert_eq!(w1.rtgs, w2.rtgs);
        assert_eq!(w1.mask, w2.mask);
    }

    #[test]
    fn long_trajectory_window_is_fully_unmasked() {
        let d = generate_dataset(EnvKind::PointMass, Mixture { expert_frac: 0.0, eps: 0.0 }, 3, 9).unwrap();
        let traj = &d.trajectories[0];
        assert_eq!(traj.len(), 50);
        let w = window_at(traj, 20, 49, 1).unwrap();
        assert_eq!(w.valid_count(), 20);
        // prev action of the first slot comes from the trajectory.
        assert_ne!(w.prev_act_inputs[0], 0.0);
    }

    #[test]
    fn batch_padding_masks_only_real_steps() {
        let d = chain_dataset(30, 2);
        let lens: Vec<usize> = d.trajectories.iter().map(|t| t.len()).collect();
        let refs: Vec<&Trajectory> = d.trajectories.iter().take(4).collect();
        let batch = pad_batch_trajectories(&refs, 2).unwrap();
        let t_max = lens.iter().take(4).copied().max().unwrap();
        for (w, t) in batch.iter().zip(&refs) {
            assert_eq!(w.k, t_max);
            assert_eq!(w.valid_count(), t.len());
            // Right padding: real steps first.
            assert!(w.mask[..t.len()].iter().all(|m| *m));
        }
        // Single trajectory: no padding, all-true mask.
        let single = pad_batch_trajectories(&refs[..1], 2).unwrap();
        assert!(single[0].mask.iter().all(|m| *m));
    }
}
