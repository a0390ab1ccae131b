//! Logically-constrained neural fitted Q-iteration: one perceptron per
//! automaton state, trained offline on a fixed experience set.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::StateId;
use crate::environment::{Bounds, Environment, InitialState, MdpState};
use crate::eval::{evaluate_policy, EvalResult, RolloutConfig};
use crate::neural::{rprop_epoch, Mlp, NeuralError, PatternSet, RpropConfig, RpropState};
use crate::policy::{argmax_first, Policy};
use crate::product::{
    ExperienceSet, ExperienceTuple, ProductAction, ProductError, ProductMdp, ProductState, RewardParams,
};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Error)]
pub enum LcnfqError {
    #[error("automaton state {0} has no network")]
    UnknownState(StateId),
    #[error("experience set has no tuples for any automaton state")]
    NoExperience,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Product(#[from] ProductError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// The hybrid Q-function. `nets[i]` serves automaton state `i`; the sink has
/// no network and Q-value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridQ {
    nets: Vec<Mlp>,
    bounds: Bounds,
    slot_actions: Vec<ProductAction>,
    /// Valid action slots per declared automaton state.
    valid: Vec<Vec<usize>>,
    base_slots: Vec<usize>,
}

impl HybridQ {
    /// Fresh networks with parameters uniform in `[-0.5, 0.5]`.
    pub fn new<E: Environment + ?Sized>(mdp: &ProductMdp<'_, E>, hidden: usize, rng: &mut SimRng) -> Self {
        let slots = mdp.num_action_slots();
        let input = mdp.env.dim() + slots;
        let n = mdp.aut.num_states();
        let slot_actions: Vec<ProductAction> = (0..slots).map(|i| mdp.action_at(i)).collect();
        let valid = mdp
            .aut
            .states()
            .map(|q| mdp.actions_at(q).into_iter().map(|a| mdp.action_index(a)).collect())
            .collect();
        Self {
            nets: (0..n).map(|_| Mlp::random(input, hidden, rng)).collect(),
            bounds: mdp.env.bounds().clone(),
            slot_actions,
            valid,
            base_slots: (0..mdp.env.actions().len()).collect(),
        }
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn net_mut(&mut self, q: StateId) -> Option<&mut Mlp> {
        self.nets.get_mut(q.0)
    }

    pub fn num_slots(&self) -> usize {
        self.slot_actions.len()
    }

    /// Normalized coordinates followed by a one-hot over action slots.
    pub fn encode_into(&self, s: &MdpState, slot: usize, out: &mut Vec<f64>) {
        self.bounds.normalize_into(s, out);
        let d = out.len();
        out.resize(d + self.slot_actions.len(), 0.0);
        out[d + slot] = 1.0;
    }

    fn slot_of(&self, a: ProductAction) -> usize {
        self.slot_actions
            .iter()
            .position(|x| *x == a)
            .expect("action belongs to this product")
    }

    fn valid_slots(&self, q: StateId) -> &[usize] {
        self.valid.get(q.0).map(Vec::as_slice).unwrap_or(&self.base_slots)
    }

    pub fn q_value(&self, x: &ProductState, a: ProductAction) -> Result<f64, LcnfqError> {
        let Some(net) = self.nets.get(x.q.0) else {
            return self.sink_or_unknown(x.q);
        };
        let mut buf = Vec::new();
        self.encode_into(&x.s, self.slot_of(a), &mut buf);
        Ok(net.forward_unchecked(&buf))
    }

    fn sink_or_unknown(&self, q: StateId) -> Result<f64, LcnfqError> {
        if q.0 == self.nets.len() {
            Ok(0.0)
        } else {
            Err(LcnfqError::UnknownState(q))
        }
    }

    /// Q-values of the valid actions at `x`, in slot order.
    pub fn action_values(&self, x: &ProductState) -> Vec<(ProductAction, f64)> {
        let slots = self.valid_slots(x.q);
        let Some(net) = self.nets.get(x.q.0) else {
            return slots.iter().map(|s| (self.slot_actions[*s], 0.0)).collect();
        };
        let mut buf = Vec::with_capacity(self.bounds.dim() + self.slot_actions.len());
        slots
            .iter()
            .map(|&s| {
                self.encode_into(&x.s, s, &mut buf);
                (self.slot_actions[s], net.forward_unchecked(&buf))
            })
            .collect()
    }

    pub fn max_q(&self, x: &ProductState) -> f64 {
        self.action_values(x)
            .into_iter()
            .map(|(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; ties go to the earliest slot.
    pub fn greedy(&self, x: &ProductState) -> ProductAction {
        let av = self.action_values(x);
        let values: Vec<f64> = av.iter().map(|(_, v)| *v).collect();
        av[argmax_first(&values)].0
    }

    /// Writes one network file per automaton state plus `manifest.json`.
    pub fn save_dir(&self, dir: &Path, state_names: &[String]) -> Result<(), LcnfqError> {
        let io = |e: std::io::Error| LcnfqError::Snapshot(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        let files: Vec<String> = state_names.iter().map(|n| format!("net_{n}.json")).collect();
        for (net, f) in self.nets.iter().zip(&files) {
            fs::write(dir.join(f), net.to_json()).map_err(io)?;
        }
        let manifest = Manifest {
            version: 1,
            states: state_names.to_vec(),
            files,
            bounds: self.bounds.clone(),
            slot_actions: self.slot_actions.clone(),
            valid: self.valid.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(dir.join("manifest.json"), text).map_err(io)
    }

    pub fn load_dir(dir: &Path) -> Result<Self, LcnfqError> {
        let io = |e: std::io::Error| LcnfqError::Snapshot(e.to_string());
        let text = fs::read_to_string(dir.join("manifest.json")).map_err(io)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| LcnfqError::Snapshot(e.to_string()))?;
        if m.version != 1 || m.files.len() != m.states.len() || m.valid.len() != m.states.len() {
            return Err(LcnfqError::Snapshot("inconsistent manifest".into()));
        }
        let mut nets = Vec::new();
        for f in &m.files {
            nets.push(Mlp::from_json(&fs::read_to_string(dir.join(f)).map_err(io)?)?);
        }
        let base = m
            .slot_actions
            .iter()
            .take_while(|a| matches!(a, ProductAction::Base(_)))
            .count();
        Ok(Self {
            nets,
            bounds: m.bounds,
            slot_actions: m.slot_actions,
            valid: m.valid,
            base_slots: (0..base).collect(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    states: Vec<String>,
    files: Vec<String>,
    bounds: Bounds,
    slot_actions: Vec<ProductAction>,
    valid: Vec<Vec<usize>>,
}

impl Policy for HybridQ {
    fn act(&self, x: &ProductState, _: &mut SimRng) -> ProductAction {
        self.greedy(x)
    }

    fn value(&self, x: &ProductState) -> f64 {
        self.max_q(x)
    }
}

/// One pattern per tuple: input `encode(s, a)`, target
/// `r + γ · max_a' Q(s', a')` read from the current hybrid Q.
pub fn build_pattern_set<'t>(
    hq: &HybridQ,
    tuples: impl IntoIterator<Item = &'t ExperienceTuple>,
    gamma: f64,
) -> PatternSet {
    let mut p = PatternSet::new(hq.bounds.dim() + hq.num_slots());
    let mut buf = Vec::new();
    for t in tuples {
        let target = t.r + gamma * hq.max_q(&t.next);
        hq.encode_into(&t.s.s, hq.slot_of(t.a), &mut buf);
        p.push(&buf, target);
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub hidden: usize,
    /// Rprop epochs per network per cycle.
    pub epochs: usize,
    pub max_cycles: usize,
    /// Cycles without a better success rate before stopping, counted from
    /// the first cycle with any success.
    pub patience: usize,
    pub eval_trials: usize,
    /// Rprop epochs fitting each fresh network to `r_n` at the start state.
    pub init_epochs: usize,
    pub rprop: RpropConfig,
    pub seed: u64,
    pub rollout: RolloutConfig,
}

impl TrainConfig {
    pub fn new(initial: InitialState) -> Self {
        Self {
            gamma: 0.9,
            hidden: 32,
            epochs: 300,
            max_cycles: 40,
            patience: 5,
            eval_trials: 100,
            init_epochs: 100,
            rprop: RpropConfig::default(),
            seed: 0,
            rollout: RolloutConfig {
                initial,
                step_cap: None,
                gamma: 0.9,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycle: usize,
    /// Final-epoch loss per automaton state; `None` when it had no tuples.
    pub losses: Vec<Option<f64>>,
    pub eval: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcnfqReport {
    pub samples: usize,
    pub cycles: Vec<CycleStats>,
    /// Cycle whose networks were returned, if any cycle ran.
    pub best_cycle: Option<usize>,
}

/// Trains the hybrid Q-function on `experience`.
///
/// Each cycle visits automaton states from the accepting side backwards,
/// rebuilding that state's pattern set from the current networks before
/// fitting it. After each cycle the greedy policy is evaluated; training
/// stops after `patience` cycles without a better success rate, counted once
/// any cycle has succeeded, and returns the networks of the best cycle.
pub fn lcnfq_train<E: Environment + ?Sized>(
    mdp: &ProductMdp<'_, E>,
    params: &RewardParams,
    experience: &ExperienceSet,
    cfg: &TrainConfig,
) -> Result<(HybridQ, LcnfqReport), LcnfqError> {
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(LcnfqError::Config("discount must lie in [0, 1)".into()));
    }
    let n = mdp.aut.num_states();
    let by_q: Vec<Vec<&ExperienceTuple>> = (0..n).map(|i| experience.projection(StateId(i)).collect()).collect();
    if by_q.iter().all(Vec::is_empty) {
        return Err(LcnfqError::NoExperience);
    }
    let mut rng = seeded(cfg.seed, 0);
    let mut hq = HybridQ::new(mdp, cfg.hidden, &mut rng);

    // Fit every network to r_n at the start state for one random action.
    let s0 = mdp.initial_state(&cfg.rollout.initial, &mut rng)?.s;
    for i in 0..n {
        let actions = mdp.actions_at(StateId(i));
        let a = actions[rng.gen_range(0..actions.len())];
        let mut p = PatternSet::new(hq.bounds.dim() + hq.num_slots());
        let mut buf = Vec::new();
        hq.encode_into(&s0, hq.slot_of(a), &mut buf);
        p.push(&buf, params.sample_r_n(&mut rng));
        let mut state = RpropState::new(&hq.nets[i], cfg.rprop);
        for _ in 0..cfg.init_epochs {
            rprop_epoch(&mut hq.nets[i], &mut state, &p)?;
        }
    }

    let order = mdp.aut.backward_order();
    let mut report = LcnfqReport {
        samples: experience.len(),
        cycles: Vec::new(),
        best_cycle: None,
    };
    let mut best: Option<(f64, HybridQ)> = None;
    let mut stale = 0;
    for cycle in 1..=cfg.max_cycles {
        let mut losses = vec![None; n];
        for &q in &order {
            let tuples = &by_q[q.0];
            if tuples.is_empty() {
                continue;
            }
            let patterns = build_pattern_set(&hq, tuples.iter().copied(), cfg.gamma);
            let net = &mut hq.nets[q.0];
            let mut state = RpropState::new(net, cfg.rprop);
            let mut loss = 0.0;
            for _ in 0..cfg.epochs {
                loss = rprop_epoch(net, &mut state, &patterns)?;
            }
            losses[q.0] = Some(loss);
        }
        let eval = evaluate_policy(mdp, &hq, params, &cfg.rollout, cfg.eval_trials, cfg.seed)?;
        report.cycles.push(CycleStats { cycle, losses, eval });
        if best.as_ref().is_none_or(|(b, _)| eval.success_rate > *b) {
            best = Some((eval.success_rate, hq.clone()));
            report.best_cycle = Some(cycle);
            stale = 0;
        } else if best.as_ref().is_some_and(|(b, _)| *b > 0.0) {
            // patience only runs once some cycle has succeeded
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.map(|(_, h)| h).unwrap_or(hq), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::parse_ldba;
    use crate::environment::{ActionId, FiniteEnv, GridWorld1D};
    use crate::product::{gather_experience, ExploreConfig};

    fn coprates() -> crate::automata::Ldba {
        parse_ldba(include_str!("../assets/coprates.ldba")).unwrap()
    }

    fn grid() -> GridWorld1D {
        GridWorld1D::from_pattern("u..............tt...", &[('u', "u"), ('t', "t")], 0.0).unwrap()
    }

    #[test]
    fn fresh_values_are_finite_and_pure() {
        let aut = coprates();
        let g = grid();
        let mdp = ProductMdp::new(&g, &aut);
        let hq = HybridQ::new(&mdp, 8, &mut seeded(0, 0));
        assert_eq!(hq.nets().len(), 3);
        let x = ProductState::new(g.cell_state(4), aut.initial());
        let a = ProductAction::Base(ActionId(1));
        let v = hq.q_value(&x, a).unwrap();
        assert!(v.is_finite());
        assert_eq!(hq.q_value(&x, a).unwrap(), v);
        let y = ProductState::new(g.cell_state(4), StateId(1));
        assert_ne!(hq.q_value(&y, a).unwrap(), v);
        assert_eq!(
            hq.q_value(&ProductState::new(g.cell_state(4), aut.sink()), a).unwrap(),
            0.0
        );
        assert!(hq.q_value(&ProductState::new(g.cell_state(4), StateId(9)), a).is_err());
    }

    #[test]
    fn equal_outputs_pick_the_first_action() {
        let aut = coprates();
        let g = grid();
        let mdp = ProductMdp::new(&g, &aut);
        let mut hq = HybridQ::new(&mdp, 4, &mut seeded(0, 0));
        for net in &mut hq.nets {
            net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        }
        let x = ProductState::new(g.cell_state(3), aut.initial());
        assert_eq!(hq.greedy(&x), ProductAction::Base(ActionId(0)));
        // bias only on the `stay` input weight of the first hidden unit
        let net = hq.net_mut(aut.initial()).unwrap();
        let input = net.input_dim();
        let hidden = net.hidden_dim();
        net.params_mut()[input - 1] = 1.0;
        net.params_mut()[hidden * input + hidden] = 1.0;
        assert_eq!(hq.greedy(&x), ProductAction::Base(ActionId(2)));
        // shifting that net's output bias keeps the argmax
        let bias = hidden * input + 2 * hidden;
        hq.net_mut(aut.initial()).unwrap().params_mut()[bias] += 3.0;
        assert_eq!(hq.greedy(&x), ProductAction::Base(ActionId(2)));
    }

    #[test]
    fn targets_follow_the_formula_and_are_pure() {
        let aut = coprates();
        let g = grid();
        let mdp = ProductMdp::new(&g, &aut);
        let mut hq = HybridQ::new(&mdp, 4, &mut seeded(0, 0));
        for net in &mut hq.nets {
            net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        }
        let q1 = aut.initial();
        let t = ExperienceTuple {
            s: ProductState::new(g.cell_state(14), q1),
            a: ProductAction::Base(ActionId(1)),
            next: ProductState::new(g.cell_state(15), StateId(1)),
            r: 1.0,
            q: q1,
        };
        let p = build_pattern_set(&hq, [&t], 0.9);
        assert_eq!(p.target(0), 1.0);
        // a self-loop tuple reads the net being trained
        let b = hq.nets[0].params().len() - 1;
        hq.nets[0].params_mut()[b] = 2.0;
        let lp = ExperienceTuple {
            next: ProductState::new(g.cell_state(13), q1),
            r: 0.0,
            ..t.clone()
        };
        let p = build_pattern_set(&hq, [&lp], 0.9);
        assert!((p.target(0) - 1.8).abs() < 1e-12);
        assert_eq!(build_pattern_set(&hq, [&lp], 0.9), p);
        let sink = ExperienceTuple {
            next: ProductState::new(g.cell_state(0), aut.sink()),
            r: 0.0,
            ..t
        };
        assert_eq!(build_pattern_set(&hq, [&sink], 0.9).target(0), 0.0);
    }

    fn small_experience(mdp: &ProductMdp<'_, GridWorld1D>) -> ExperienceSet {
        gather_experience(
            mdp,
            &RewardParams::default(),
            &ExploreConfig {
                initial: InitialState::UniformNeutral,
                th: Some(40),
                budget: 3000,
                seed: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_cycles_returns_initialized_nets() {
        let aut = coprates();
        let g = grid();
        let mdp = ProductMdp::new(&g, &aut);
        let e = small_experience(&mdp);
        let mut cfg = TrainConfig::new(InitialState::Fixed(g.cell_state(5)));
        cfg.max_cycles = 0;
        let (hq, report) = lcnfq_train(&mdp, &RewardParams::default(), &e, &cfg).unwrap();
        assert!(report.cycles.is_empty());
        assert_eq!(report.best_cycle, None);
        let x = ProductState::new(g.cell_state(5), aut.initial());
        // the init fit drives at least one action value close to r_n = 0
        assert!(hq.action_values(&x).iter().any(|(_, v)| v.abs() < 1e-3));
        assert!(matches!(
            lcnfq_train(&mdp, &RewardParams::default(), &ExperienceSet::default(), &cfg),
            Err(LcnfqError::NoExperience)
        ));
    }

    #[test]
    fn learns_to_walk_to_the_target_and_is_reproducible() {
        let aut = coprates();
        let g = GridWorld1D::from_pattern("u.....t..", &[('u', "u"), ('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let cfg_e = ExploreConfig {
            initial: InitialState::UniformNeutral,
            th: Some(20),
            budget: 600,
            seed: 1,
        };
        let e = gather_experience(&mdp, &RewardParams::default(), &cfg_e).unwrap();
        let mut cfg = TrainConfig::new(InitialState::UniformNeutral);
        cfg.max_cycles = 10;
        cfg.eval_trials = 20;
        cfg.epochs = 150;
        let (hq, report) = lcnfq_train(&mdp, &RewardParams::default(), &e, &cfg).unwrap();
        for cell in 1..6 {
            let x = ProductState::new(g.cell_state(cell), aut.initial());
            assert_eq!(hq.greedy(&x), ProductAction::Base(ActionId(1)), "cell {cell}");
        }
        for cell in 7..9 {
            let x = ProductState::new(g.cell_state(cell), aut.initial());
            assert_eq!(hq.greedy(&x), ProductAction::Base(ActionId(0)), "cell {cell}");
        }
        assert!(report.cycles.len() < 10, "patience stops training early");
        let (again, report2) = lcnfq_train(&mdp, &RewardParams::default(), &e, &cfg).unwrap();
        assert_eq!(again, hq);
        assert_eq!(report2, report);
    }

    #[test]
    fn snapshot_directory_round_trip() {
        let aut = coprates();
        let g = grid();
        let mdp = ProductMdp::new(&g, &aut);
        let hq = HybridQ::new(&mdp, 6, &mut seeded(3, 0));
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = aut.states().map(|q| aut.name(q).to_string()).collect();
        hq.save_dir(dir.path(), &names).unwrap();
        assert!(dir.path().join("net_q2.json").exists());
        assert_eq!(HybridQ::load_dir(dir.path()).unwrap(), hq);
    }
}
