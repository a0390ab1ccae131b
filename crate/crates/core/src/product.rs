//! Synchronous product of an environment with an automaton, the frontier
//! reward, and exploratory experience collection.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::{AcceptingFrontier, FrontierEvent, Ldba, StateId};
use crate::environment::{sample_initial, ActionId, EnvError, Environment, InitialState, MdpState};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    pub s: MdpState,
    pub q: StateId,
}

impl ProductState {
    pub fn new(s: MdpState, q: StateId) -> Self {
        Self { s, q }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProductAction {
    Base(ActionId),
    /// Jump to the given automaton state without moving.
    Epsilon(StateId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProductError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("no ε-move from {from} to {to}")]
    InvalidEpsilon { from: StateId, to: StateId },
    #[error("automaton state {0} does not exist")]
    UnknownState(StateId),
    #[error("invalid reward parameters: {0}")]
    InvalidReward(String),
    #[error("malformed experience record on line {line}: {message}")]
    Record { line: usize, message: String },
}

/// How a nondeterministic automaton successor is picked.
pub enum Resolve<'r> {
    Random(&'r mut SimRng),
    /// The successor whose product state scores highest; ties go to the
    /// lowest state id.
    MaxValue(&'r dyn Fn(&ProductState) -> f64),
}

/// The product MDP, built on the fly from its two factors.
pub struct ProductMdp<'a, E: ?Sized> {
    pub env: &'a E,
    pub aut: &'a Ldba,
    eps_targets: Vec<StateId>,
}

impl<'a, E: Environment + ?Sized> ProductMdp<'a, E> {
    pub fn new(env: &'a E, aut: &'a Ldba) -> Self {
        Self {
            env,
            aut,
            eps_targets: aut.epsilon_action_targets(),
        }
    }

    /// Size of the full product action set: base actions then one slot per
    /// ε-target.
    pub fn num_action_slots(&self) -> usize {
        self.env.actions().len() + self.eps_targets.len()
    }

    pub fn action_index(&self, a: ProductAction) -> usize {
        match a {
            ProductAction::Base(b) => b.0,
            ProductAction::Epsilon(q) => {
                let k = self.eps_targets.binary_search(&q).expect("ε-target of this automaton");
                self.env.actions().len() + k
            }
        }
    }

    pub fn action_at(&self, index: usize) -> ProductAction {
        let n = self.env.actions().len();
        if index < n {
            ProductAction::Base(ActionId(index))
        } else {
            ProductAction::Epsilon(self.eps_targets[index - n])
        }
    }

    /// Actions valid in automaton state `q`, in slot order.
    pub fn actions_at(&self, q: StateId) -> Vec<ProductAction> {
        let mut out: Vec<ProductAction> = self.env.actions().ids().map(ProductAction::Base).collect();
        out.extend(self.aut.epsilon_targets(q).into_iter().map(ProductAction::Epsilon));
        out
    }

    pub fn action_name(&self, a: ProductAction) -> String {
        match a {
            ProductAction::Base(b) => self.env.actions().name(b).to_string(),
            ProductAction::Epsilon(q) => format!("eps->{}", self.aut.name(q)),
        }
    }

    pub fn action_by_name(&self, name: &str) -> Option<ProductAction> {
        if let Some(target) = name.strip_prefix("eps->") {
            return self.aut.state_by_name(target).map(ProductAction::Epsilon);
        }
        self.env.actions().by_name(name).map(ProductAction::Base)
    }

    pub fn initial_state(&self, mode: &InitialState, rng: &mut SimRng) -> Result<ProductState, ProductError> {
        Ok(ProductState::new(
            sample_initial(self.env, mode, rng)?,
            self.aut.initial(),
        ))
    }

    /// One product transition. Base actions move the environment and read
    /// the label of the new point; ε-actions only change the automaton
    /// state and draw nothing from `env_rng`.
    pub fn step(
        &self,
        x: &ProductState,
        a: ProductAction,
        env_rng: &mut SimRng,
        resolve: Resolve<'_>,
    ) -> Result<ProductState, ProductError> {
        if !self.aut.contains(x.q) && !self.aut.is_sink(x.q) {
            return Err(ProductError::UnknownState(x.q));
        }
        match a {
            ProductAction::Epsilon(to) => {
                if !self.aut.has_epsilon(x.q, to) {
                    return Err(ProductError::InvalidEpsilon { from: x.q, to });
                }
                Ok(ProductState::new(x.s.clone(), to))
            }
            ProductAction::Base(b) => {
                let s = self.env.step(&x.s, b, env_rng)?;
                let succ = self.aut.step(x.q, self.env.label(&s)?);
                let q = if succ.len() == 1 {
                    succ[0]
                } else {
                    match resolve {
                        Resolve::Random(rng) => *succ.choose(rng).expect("nonempty"),
                        Resolve::MaxValue(value) => {
                            let mut best = succ[0];
                            let mut best_v = f64::NEG_INFINITY;
                            for &q in &succ {
                                let v = value(&ProductState::new(s.clone(), q));
                                if v > best_v {
                                    best = q;
                                    best_v = v;
                                }
                            }
                            best
                        }
                    }
                };
                Ok(ProductState::new(s, q))
            }
        }
    }
}

/// Frontier reward: `M + y·m·rand` on entering the frontier, `y·m·rand`
/// otherwise, with `rand` drawn fresh from `(0, 1)` on every evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Positive reward `M`.
    pub positive: f64,
    /// Noise scale `m`, below `M / 10`.
    pub noise: f64,
    /// Whether the noise term is active (`y = 1`).
    pub noisy: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            positive: 1.0,
            noise: 0.05,
            noisy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardOutcome {
    pub r: f64,
    /// `q′` was in the frontier when the reward was computed.
    pub accepting: bool,
    pub event: FrontierEvent,
}

impl RewardParams {
    pub fn new(positive: f64, noise: f64, noisy: bool) -> Result<Self, ProductError> {
        if !(positive.is_finite() && positive > 0.0) {
            return Err(ProductError::InvalidReward("M must be positive".into()));
        }
        if !(noise > 0.0 && noise < positive / 10.0) {
            return Err(ProductError::InvalidReward(format!(
                "m must lie in (0, {})",
                positive / 10.0
            )));
        }
        Ok(Self { positive, noise, noisy })
    }

    /// Reward value on entering the frontier, ignoring noise.
    pub fn r_p(&self) -> f64 {
        self.positive
    }

    /// Reward value elsewhere, ignoring noise.
    pub fn r_n(&self) -> f64 {
        0.0
    }

    /// One draw of the non-accepting reward `y·m·rand`.
    pub fn sample_r_n(&self, rng: &mut SimRng) -> f64 {
        self.noise_draw(rng)
    }

    fn noise_draw(&self, rng: &mut SimRng) -> f64 {
        if !self.noisy {
            return 0.0;
        }
        // open interval (0, 1)
        let mut u: f64 = rng.gen();
        while u == 0.0 {
            u = rng.gen();
        }
        self.noise * u
    }

    /// Rewards the transition into `q_next` and advances the frontier.
    pub fn reward(
        &self,
        q_next: StateId,
        frontier: &mut AcceptingFrontier,
        aut: &Ldba,
        rng: &mut SimRng,
    ) -> RewardOutcome {
        let accepting = frontier.contains(q_next);
        let base = if accepting { self.positive } else { 0.0 };
        let r = base + self.noise_draw(rng);
        let event = frontier.update(q_next, aut.accepting_sets());
        RewardOutcome { r, accepting, event }
    }
}

/// One recorded product transition. `q` is always `s.q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceTuple {
    pub s: ProductState,
    pub a: ProductAction,
    pub next: ProductState,
    pub r: f64,
    pub q: StateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub initial: InitialState,
    /// Steps without positive reward before an episode restarts. `None`
    /// means twice the map diagonal over the nominal step.
    pub th: Option<usize>,
    pub budget: usize,
    pub seed: u64,
}

/// Episode length cap used when none is configured.
pub fn default_th<E: Environment + ?Sized>(env: &E) -> usize {
    (2.0 * env.bounds().diagonal() / env.nominal_step()).ceil().max(1.0) as usize
}

/// All gathered tuples plus their projection onto automaton states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperienceSet {
    pub tuples: Vec<ExperienceTuple>,
    pub episodes: usize,
}

impl ExperienceSet {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Tuples recorded in automaton state `q`.
    pub fn projection(&self, q: StateId) -> impl Iterator<Item = &ExperienceTuple> {
        self.tuples.iter().filter(move |t| t.q == q)
    }

    /// One record per line: coordinates, action name, next coordinates,
    /// reward, automaton state names.
    pub fn write_jsonl<E: Environment + ?Sized>(
        &self,
        mdp: &ProductMdp<'_, E>,
        mut w: impl Write,
    ) -> std::io::Result<()> {
        for t in &self.tuples {
            let rec = Record {
                s: t.s.s.0.clone(),
                action: mdp.action_name(t.a),
                next: t.next.s.0.clone(),
                r: t.r,
                q: mdp.aut.name(t.q).to_string(),
                next_q: mdp.aut.name(t.next.q).to_string(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<E: Environment + ?Sized>(mdp: &ProductMdp<'_, E>, r: impl BufRead) -> Result<Self, ProductError> {
        let mut tuples = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let err = |message: String| ProductError::Record { line: i + 1, message };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let state = |name: &str| {
                mdp.aut
                    .state_by_name(name)
                    .ok_or_else(|| err(format!("unknown automaton state `{name}`")))
            };
            let q = state(&rec.q)?;
            let next_q = state(&rec.next_q)?;
            let a = mdp
                .action_by_name(&rec.action)
                .ok_or_else(|| err(format!("unknown action `{}`", rec.action)))?;
            tuples.push(ExperienceTuple {
                s: ProductState::new(MdpState(rec.s), q),
                a,
                next: ProductState::new(MdpState(rec.next), next_q),
                r: rec.r,
                q,
            });
        }
        Ok(Self { tuples, episodes: 0 })
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    s: Vec<f64>,
    action: String,
    next: Vec<f64>,
    r: f64,
    q: String,
    next_q: String,
}

/// RNG stream ids shared by every component that drives the product.
pub mod streams {
    pub const ENV: u64 = 1;
    pub const REWARD: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const INIT: u64 = 4;
}

/// Collects tuples under the uniform exploration policy. An episode
/// restarts on positive reward, on entering the sink, or after `th` steps
/// without positive reward.
pub fn gather_experience<E: Environment + ?Sized>(
    mdp: &ProductMdp<'_, E>,
    params: &RewardParams,
    cfg: &ExploreConfig,
) -> Result<ExperienceSet, ProductError> {
    let th = cfg.th.unwrap_or_else(|| default_th(mdp.env)).max(1);
    let mut env_rng = seeded(cfg.seed, streams::ENV);
    let mut reward_rng = seeded(cfg.seed, streams::REWARD);
    let mut explore_rng = seeded(cfg.seed, streams::EXPLORE);
    let mut init_rng = seeded(cfg.seed, streams::INIT);
    let mut out = ExperienceSet::default();
    while out.tuples.len() < cfg.budget {
        out.episodes += 1;
        let mut x = mdp.initial_state(&cfg.initial, &mut init_rng)?;
        let mut frontier = AcceptingFrontier::new(mdp.aut);
        for _ in 0..th {
            if out.tuples.len() >= cfg.budget {
                break;
            }
            let acts = mdp.actions_at(x.q);
            let a = *acts.choose(&mut explore_rng).expect("base actions nonempty");
            let next = mdp.step(&x, a, &mut env_rng, Resolve::Random(&mut explore_rng))?;
            let outcome = params.reward(next.q, &mut frontier, mdp.aut, &mut reward_rng);
            let q = x.q;
            let done = outcome.accepting || mdp.aut.is_sink(next.q);
            out.tuples.push(ExperienceTuple {
                s: x,
                a,
                next: next.clone(),
                r: outcome.r,
                q,
            });
            if done {
                break;
            }
            x = next;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{parse_ldba, LabelSet};
    use crate::environment::{FiniteEnv, GridWorld1D, LabelledMap, RoverDynamics, RoverEnv};

    fn coprates() -> Ldba {
        parse_ldba(include_str!("../assets/coprates.ldba")).unwrap()
    }

    fn melas() -> Ldba {
        parse_ldba(include_str!("../assets/melas.ldba")).unwrap()
    }

    fn eps_ldba() -> Ldba {
        parse_ldba(
            "states: q1, q2, q3\ninitial: q1\ndeterministic: q2, q3\naccepting: F1 = {q2}\n\
             q1 -- true --> q1\nq1 --eps--> q2\nq1 --eps--> q3\nq2 -- t --> q2\nq3 -- u --> q3\n",
        )
        .unwrap()
    }

    #[test]
    fn entering_target_moves_to_accepting_state() {
        let aut = coprates();
        let g = GridWorld1D::from_pattern(".t", &[('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let mut rng = seeded(0, 0);
        let x = ProductState::new(g.cell_state(0), aut.initial());
        let next = mdp
            .step(
                &x,
                ProductAction::Base(ActionId(1)),
                &mut rng,
                Resolve::Random(&mut seeded(0, 1)),
            )
            .unwrap();
        assert_eq!(aut.name(next.q), "q2");
    }

    #[test]
    fn unsafe_from_q2_goes_to_q4_in_melas() {
        let aut = melas();
        let g = GridWorld1D::from_pattern(".u", &[('u', "u")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let x = ProductState::new(g.cell_state(0), aut.state_by_name("q2").unwrap());
        let next = mdp
            .step(
                &x,
                ProductAction::Base(ActionId(1)),
                &mut seeded(0, 0),
                Resolve::Random(&mut seeded(0, 1)),
            )
            .unwrap();
        assert_eq!(aut.name(next.q), "q4");
    }

    #[test]
    fn epsilon_step_keeps_position_and_draws_nothing() {
        let aut = eps_ldba();
        let env = RoverEnv::new(LabelledMap::builtin_melas(), RoverDynamics::new(2.0, 0.02).unwrap());
        let mdp = ProductMdp::new(&env, &aut);
        let q2 = aut.state_by_name("q2").unwrap();
        let x = ProductState::new(MdpState(vec![10.0, 10.0]), aut.initial());
        let mut rng = seeded(5, 0);
        let before = rng.clone();
        let next = mdp
            .step(
                &x,
                ProductAction::Epsilon(q2),
                &mut rng,
                Resolve::Random(&mut seeded(0, 1)),
            )
            .unwrap();
        assert_eq!(next, ProductState::new(MdpState(vec![10.0, 10.0]), q2));
        assert_eq!(rng, before);
        let bad = mdp.step(
            &next,
            ProductAction::Epsilon(q2),
            &mut rng,
            Resolve::Random(&mut seeded(0, 1)),
        );
        assert!(matches!(bad, Err(ProductError::InvalidEpsilon { .. })));
    }

    #[test]
    fn action_slots_cover_epsilon_targets() {
        let aut = eps_ldba();
        let g = GridWorld1D::from_pattern("...", &[], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        assert_eq!(mdp.num_action_slots(), 5);
        let acts = mdp.actions_at(aut.initial());
        assert_eq!(acts.len(), 5);
        for (i, a) in acts.iter().enumerate() {
            assert_eq!(mdp.action_index(*a), i);
            assert_eq!(mdp.action_at(i), *a);
            assert_eq!(mdp.action_by_name(&mdp.action_name(*a)), Some(*a));
        }
        assert_eq!(mdp.actions_at(aut.state_by_name("q2").unwrap()).len(), 3);
    }

    #[test]
    fn nondeterminism_resolved_by_value() {
        let aut = parse_ldba(
            "states: q1, q2, q3\ninitial: q1\ndeterministic: q2, q3\naccepting: F1 = {q3}\n\
             q1 -- true --> q2\nq1 -- true --> q3\nq2 -- true --> q2\nq3 -- true --> q3\n",
        )
        .unwrap();
        let g = GridWorld1D::from_pattern("...", &[], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let x = ProductState::new(g.cell_state(1), aut.initial());
        let value = |p: &ProductState| p.q.0 as f64;
        let next = mdp
            .step(
                &x,
                ProductAction::Base(ActionId(2)),
                &mut seeded(0, 0),
                Resolve::MaxValue(&value),
            )
            .unwrap();
        assert_eq!(aut.name(next.q), "q3");
        let mut seen = [false; 2];
        let mut rng = seeded(1, 1);
        for _ in 0..50 {
            let n = mdp
                .step(
                    &x,
                    ProductAction::Base(ActionId(2)),
                    &mut seeded(0, 0),
                    Resolve::Random(&mut rng),
                )
                .unwrap();
            seen[n.q.0 - 1] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn reward_examples() {
        let aut = coprates();
        let q2 = aut.state_by_name("q2").unwrap();
        let q1 = aut.initial();
        let mut rng = seeded(0, 2);
        let p = RewardParams::new(1.0, 0.05, false).unwrap();
        let mut f = AcceptingFrontier::new(&aut);
        let out = p.reward(q2, &mut f, &aut, &mut rng);
        assert_eq!(out.r, 1.0);
        assert!(out.accepting);
        assert_eq!(out.event, FrontierEvent::Reset);
        assert_eq!(f.states().iter().copied().collect::<Vec<_>>(), vec![q2]);
        assert_eq!(p.reward(q1, &mut f, &aut, &mut rng).r, 0.0);
        let noisy = RewardParams::new(1.0, 0.05, true).unwrap();
        for _ in 0..1000 {
            let r = noisy.reward(q2, &mut f, &aut, &mut rng).r;
            assert!(r > 1.0 && r < 1.05);
            let r = noisy.reward(q1, &mut f, &aut, &mut rng).r;
            assert!(r > 0.0 && r < 0.05);
        }
        assert!(RewardParams::new(1.0, 0.1, true).is_err());
    }

    #[test]
    fn budget_one_gives_one_tuple() {
        let aut = coprates();
        let g = GridWorld1D::from_pattern("..t..", &[('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let cfg = ExploreConfig {
            initial: InitialState::Fixed(g.cell_state(0)),
            th: None,
            budget: 1,
            seed: 3,
        };
        let e = gather_experience(&mdp, &RewardParams::default(), &cfg).unwrap();
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn episodes_end_on_first_positive_reward() {
        let aut = coprates();
        // every cell is a target: the first move always enters the frontier
        let g = GridWorld1D::from_pattern("ttt", &[('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let cfg = ExploreConfig {
            initial: InitialState::Fixed(g.cell_state(1)),
            th: Some(50),
            budget: 40,
            seed: 3,
        };
        let e = gather_experience(&mdp, &RewardParams::default(), &cfg).unwrap();
        assert_eq!(e.episodes, 40);
        assert!(e.tuples.iter().all(|t| t.r == 1.0 && t.q == aut.initial()));
    }

    #[test]
    fn tuples_are_label_consistent_and_round_trip() {
        let aut = melas();
        let env = RoverEnv::new(LabelledMap::builtin_melas(), RoverDynamics::new(2.0, 0.02).unwrap());
        let mdp = ProductMdp::new(&env, &aut);
        let cfg = ExploreConfig {
            initial: InitialState::Fixed(MdpState(vec![118.0, 85.0])),
            th: Some(200),
            budget: 2000,
            seed: 11,
        };
        let e = gather_experience(&mdp, &RewardParams::new(1.0, 0.05, true).unwrap(), &cfg).unwrap();
        assert_eq!(e.len(), 2000);
        for t in &e.tuples {
            assert_eq!(t.q, t.s.q);
            let label: &LabelSet = env.label(&t.next.s).unwrap();
            assert!(aut.step(t.q, label).contains(&t.next.q));
        }
        let mut buf = Vec::new();
        e.write_jsonl(&mdp, &mut buf).unwrap();
        let back = ExperienceSet::read_jsonl(&mdp, buf.as_slice()).unwrap();
        assert_eq!(back.tuples, e.tuples);
    }

    #[test]
    fn product_trajectory_replays_in_environment() {
        let aut = melas();
        let env = RoverEnv::new(LabelledMap::builtin_melas(), RoverDynamics::new(2.0, 0.02).unwrap());
        let mdp = ProductMdp::new(&env, &aut);
        let cfg = ExploreConfig {
            initial: InitialState::Fixed(MdpState(vec![118.0, 85.0])),
            th: Some(10_000),
            budget: 300,
            seed: 2,
        };
        let e = gather_experience(&mdp, &RewardParams::default(), &cfg).unwrap();
        let mut rng = seeded(2, streams::ENV);
        for t in &e.tuples {
            if let ProductAction::Base(b) = t.a {
                assert_eq!(env.step(&t.s.s, b, &mut rng).unwrap(), t.next.s);
            }
        }
    }
}
