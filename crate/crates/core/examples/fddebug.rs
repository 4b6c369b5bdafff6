use dema_core::diff::{finite_difference_check, LossSpec};
use dema_core::model::{ActionSpace, BlockKind, Concat, ModelConfig, init_params};
use dema_core::train::LossKind;
use dema_core::dataset::{Targets, WindowSample};
use rand::Rng;

fn mkwin(cfg: &ModelConfig, rng: &mut impl Rng, pad: usize) -> WindowSample {
    let k = cfg.context_k; let sd = cfg.state_dim; let ad = cfg.action_space.input_dim();
    let discrete = matches!(cfg.action_space, ActionSpace::Discrete{..});
    let mut w = WindowSample {
        k, state_dim: sd, act_dim: ad,
        rtgs: (0..k).map(|_| rng.gen_range(-1.0..1.5)).collect(),
        states: (0..k * sd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        act_inputs: vec![0.0; k * ad], prev_act_inputs: vec![0.0; k * ad],
        timesteps: (0..k).collect(), mask: (0..k).map(|i| i >= pad).collect(),
        targets: if discrete { Targets::Discrete((0..k).map(|_| rng.gen_range(0..ad)).collect()) }
                 else { Targets::Continuous { dim: ad, values: (0..k*ad).map(|_| rng.gen_range(-1.0..1.0)).collect() } },
    };
    for slot in 0..k {
        if !w.mask[slot] { for v in w.states[slot*sd..(slot+1)*sd].iter_mut() { *v=0.0; } w.rtgs[slot]=0.0; w.timesteps[slot]=0; continue; }
        if discrete {
            w.act_inputs[slot * ad + rng.gen_range(0..ad)] = 1.0;
            if slot>0 { w.prev_act_inputs[slot*ad+rng.gen_range(0..ad)] = 1.0; }
        } else {
            for v in w.act_inputs[slot*ad..(slot+1)*ad].iter_mut() { *v = rng.gen_range(-1.0..1.0); }
            if slot>0 { for v in w.prev_act_inputs[slot*ad..(slot+1)*ad].iter_mut() { *v = rng.gen_range(-1.0..1.0); } }
        }
    }
    w
}

fn main() {
    let cfg = ModelConfig {
        d_model: 8, n_layers: 2, d_state: 3, expand: 2, d_conv: 3, dt_rank: 2,
        context_k: 4, concat: Concat::B3ld, block: BlockKind::PreUp, n_heads: 2,
        position_embedding: true, mixer_conv: true, max_ep_len: 16,
        action_space: ActionSpace::Discrete { n: 3 }, state_dim: 4,
    };
    for pseed in [11u64, 21, 31, 41, 51] {
        for dseed in [77u64, 177, 277] {
            for dropout in [0.0, 0.2] {
                let mut params = init_params(&cfg, pseed).unwrap();
                let mut rng = dema_core::rng::stream_rng(dseed, 0);
                for (name, t) in params.iter_mut() {
                    if name.ends_with("dt.bias") {
                        for v in t.data_mut() { *v = rng.gen_range(0.2..1.2); }
                    } else {
                        for v in t.data_mut() { *v += rng.gen_range(-0.35..0.35); }
                    }
                }
                let batch = vec![mkwin(&cfg, &mut rng, 1), mkwin(&cfg, &mut rng, 0)];
                let spec = LossSpec { kind: LossKind::Ce, dropout, seed: 5 };
                let rep = finite_difference_check(&cfg, &params, &batch, &spec, 1e-5).unwrap();
                println!("pseed={pseed} dseed={dseed} dropout={dropout}: {:.3e}", rep.max_rel);
            }
        }
    }
}
