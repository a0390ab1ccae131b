//! Finite-horizon rollouts, success-rate estimation, and path export.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automata::{AcceptingFrontier, FrontierEvent, LabelSet};
use crate::environment::{Environment, InitialState};
use crate::policy::Policy;
use crate::product::{streams, ProductAction, ProductError, ProductMdp, ProductState, Resolve, RewardParams};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub initial: InitialState,
    /// `None` means ten map diagonals worth of nominal steps.
    pub step_cap: Option<usize>,
    pub gamma: f64,
}

/// Default horizon: `10 · diagonal / nominal step`.
pub fn default_step_cap<E: Environment + ?Sized>(env: &E) -> usize {
    (10.0 * env.bounds().diagonal() / env.nominal_step()).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Visited product states, starting with the initial one.
    pub states: Vec<ProductState>,
    pub actions: Vec<ProductAction>,
    pub rewards: Vec<f64>,
    /// Label of each state in `states` after the first.
    pub labels: Vec<LabelSet>,
    /// The accepting frontier was exhausted at least once.
    pub success: bool,
    pub discounted_reward: f64,
}

/// Runs `policy` until the first frontier reset (success), entry into the
/// sink (failure), or the step cap.
pub fn rollout<E, P>(
    mdp: &ProductMdp<'_, E>,
    policy: &P,
    params: &RewardParams,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<Rollout, ProductError>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let mut env_rng = seeded(seed, streams::ENV);
    let mut reward_rng = seeded(seed, streams::REWARD);
    let mut policy_rng = seeded(seed, streams::EXPLORE);
    let mut init_rng = seeded(seed, streams::INIT);
    let cap = cfg.step_cap.unwrap_or_else(|| default_step_cap(mdp.env));
    let mut x = mdp.initial_state(&cfg.initial, &mut init_rng)?;
    let mut frontier = AcceptingFrontier::new(mdp.aut);
    let value = |p: &ProductState| policy.value(p);
    let mut out = Rollout {
        states: vec![x.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        labels: Vec::new(),
        success: false,
        discounted_reward: 0.0,
    };
    let mut discount = 1.0;
    for _ in 0..cap {
        let a = policy.act(&x, &mut policy_rng);
        let next = mdp.step(&x, a, &mut env_rng, Resolve::MaxValue(&value))?;
        let outcome = params.reward(next.q, &mut frontier, mdp.aut, &mut reward_rng);
        out.discounted_reward += discount * outcome.r;
        discount *= cfg.gamma;
        out.actions.push(a);
        out.rewards.push(outcome.r);
        out.labels.push(mdp.env.label(&next.s)?.clone());
        out.states.push(next.clone());
        if outcome.event == FrontierEvent::Reset {
            out.success = true;
            break;
        }
        if mdp.aut.is_sink(next.q) {
            break;
        }
        x = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over trials of the discounted reward sum.
    pub discounted_reward: f64,
}

/// Runs `trials` independent rollouts in parallel; trial `i` uses seed
/// `derive_seed(seed, i)`.
pub fn evaluate_policy<E, P>(
    mdp: &ProductMdp<'_, E>,
    policy: &P,
    params: &RewardParams,
    cfg: &RolloutConfig,
    trials: usize,
    seed: u64,
) -> Result<EvalResult, ProductError>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    assert!(trials >= 1, "at least one trial");
    let results: Vec<(bool, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            rollout(mdp, policy, params, cfg, derive_seed(seed, i as u64)).map(|r| (r.success, r.discounted_reward))
        })
        .collect::<Result<_, _>>()?;
    let successes = results.iter().filter(|r| r.0).count();
    let total: f64 = results.iter().map(|r| r.1).sum();
    Ok(EvalResult {
        trials,
        successes,
        success_rate: successes as f64 / trials as f64,
        discounted_reward: total / trials as f64,
    })
}

/// Writes a rollout as CSV: step, coordinates, automaton state, the action
/// taken from that state, and the reward it earned. The final row has empty
/// action and reward fields.
pub fn write_path_csv<E: Environment + ?Sized>(
    mdp: &ProductMdp<'_, E>,
    path: &Rollout,
    mut w: impl Write,
) -> std::io::Result<()> {
    let dim = mdp.env.dim();
    let coord_names: Vec<String> = match dim {
        2 => vec!["x".into(), "y".into()],
        1 => vec!["x".into()],
        _ => (0..dim).map(|i| format!("x{i}")).collect(),
    };
    writeln!(w, "step,{},q,action,reward", coord_names.join(","))?;
    for (i, st) in path.states.iter().enumerate() {
        let coords: Vec<String> = st.s.0.iter().map(|c| c.to_string()).collect();
        let (a, r) = match (path.actions.get(i), path.rewards.get(i)) {
            (Some(a), Some(r)) => (mdp.action_name(*a), r.to_string()),
            _ => (String::new(), String::new()),
        };
        writeln!(w, "{i},{},{},{a},{r}", coords.join(","), mdp.aut.name(st.q))?;
    }
    Ok(())
}

/// Rolls out once with `seed` and writes the path.
pub fn export_path<E, P>(
    mdp: &ProductMdp<'_, E>,
    policy: &P,
    params: &RewardParams,
    cfg: &RolloutConfig,
    seed: u64,
    w: impl Write,
) -> Result<Rollout, ProductError>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let r = rollout(mdp, policy, params, cfg, seed)?;
    write_path_csv(mdp, &r, w).map_err(|e| ProductError::Record {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(r)
}
