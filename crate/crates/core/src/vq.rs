//! Episodic Voronoi quantization of the product state space with tabular
//! Q-learning over the resulting cells.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::{AcceptingFrontier, FrontierEvent, StateId};
use crate::environment::{Environment, InitialState, MdpState};
use crate::policy::{argmax_first, Policy};
use crate::product::{streams, ProductAction, ProductError, ProductMdp, ProductState, Resolve, RewardParams};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Error)]
pub enum VqError {
    #[error("unknown centroid {0:?}")]
    UnknownCentroid(CentroidId),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Product(#[from] ProductError),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CentroidId {
    pub q: StateId,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub s: MdpState,
    /// One entry per action slot of the product MDP.
    pub q_values: Vec<f64>,
}

type CellKey = Vec<i64>;

/// Centroid sets `C^q`, one per declared automaton state, with their
/// Q-table. Within one set all pairwise distances exceed `delta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Quantizer {
    delta: f64,
    num_slots: usize,
    /// Valid action slots per automaton state.
    valid: Vec<Vec<usize>>,
    slot_actions: Vec<ProductAction>,
    sets: Vec<Vec<Centroid>>,
    /// Hash grid with cell side `delta`; every centroid within `delta` of a
    /// point lies in the point's cell or one of its neighbours.
    #[serde(skip)]
    index: Vec<HashMap<CellKey, Vec<usize>>>,
}

impl PartialEq for Quantizer {
    fn eq(&self, other: &Self) -> bool {
        self.delta == other.delta
            && self.num_slots == other.num_slots
            && self.valid == other.valid
            && self.slot_actions == other.slot_actions
            && self.sets == other.sets
    }
}

impl Quantizer {
    pub fn new<E: Environment + ?Sized>(mdp: &ProductMdp<'_, E>, delta: f64) -> Result<Self, VqError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(VqError::Config("minimum resolution must be positive".into()));
        }
        let n = mdp.aut.num_states();
        Ok(Self {
            delta,
            num_slots: mdp.num_action_slots(),
            valid: mdp
                .aut
                .states()
                .map(|q| mdp.actions_at(q).into_iter().map(|a| mdp.action_index(a)).collect())
                .collect(),
            slot_actions: (0..mdp.num_action_slots()).map(|i| mdp.action_at(i)).collect(),
            sets: vec![Vec::new(); n],
            index: vec![HashMap::new(); n],
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn centroids(&self, q: StateId) -> &[Centroid] {
        self.sets.get(q.0).map_or(&[], Vec::as_slice)
    }

    pub fn num_centroids(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn centroid(&self, c: CentroidId) -> Result<&Centroid, VqError> {
        self.sets
            .get(c.q.0)
            .and_then(|s| s.get(c.index))
            .ok_or(VqError::UnknownCentroid(c))
    }

    fn key(&self, s: &MdpState) -> CellKey {
        s.0.iter().map(|c| (c / self.delta).floor() as i64).collect()
    }

    fn neighbour_keys(key: &CellKey) -> Vec<CellKey> {
        let mut out = vec![Vec::with_capacity(key.len())];
        for &k in key {
            out = out
                .into_iter()
                .flat_map(|prefix: CellKey| {
                    (-1..=1).map(move |d| {
                        let mut p = prefix.clone();
                        p.push(k + d);
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// Nearest centroid of `C^q` among those within `delta`, ties to the
    /// lowest index.
    fn nearest_within(&self, s: &MdpState, q: StateId) -> Option<(usize, f64)> {
        let set = self.sets.get(q.0)?;
        let index = &self.index[q.0];
        let mut best: Option<(usize, f64)> = None;
        for key in Self::neighbour_keys(&self.key(s)) {
            for &i in index.get(&key).into_iter().flatten() {
                let d = set[i].s.distance(s);
                if d <= self.delta && best.is_none_or(|(j, bd)| d < bd || (d == bd && i < j)) {
                    best = Some((i, d));
                }
            }
        }
        best
    }

    /// Nearest centroid of `C^q` at any distance.
    pub fn nearest(&self, x: &ProductState) -> Option<CentroidId> {
        if let Some((i, _)) = self.nearest_within(&x.s, x.q) {
            return Some(CentroidId { q: x.q, index: i });
        }
        let set = self.sets.get(x.q.0)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in set.iter().enumerate() {
            let d = c.s.distance(&x.s);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| CentroidId { q: x.q, index: i })
    }

    /// Returns the cell of `x`, inserting `x` as a fresh zero-valued
    /// centroid when `C^q` is empty or its nearest member is farther than
    /// `delta`. The flag reports an insertion.
    pub fn quantize(&mut self, x: &ProductState) -> Result<(CentroidId, bool), VqError> {
        let q = x.q;
        if q.0 >= self.sets.len() {
            return Err(VqError::Product(ProductError::UnknownState(q)));
        }
        if let Some((i, _)) = self.nearest_within(&x.s, q) {
            return Ok((CentroidId { q, index: i }, false));
        }
        let i = self.sets[q.0].len();
        self.sets[q.0].push(Centroid {
            s: x.s.clone(),
            q_values: vec![0.0; self.num_slots],
        });
        let key = self.key(&x.s);
        self.index[q.0].entry(key).or_default().push(i);
        Ok((CentroidId { q, index: i }, true))
    }

    /// Largest Q-value over the valid actions of `c`.
    pub fn max_q(&self, c: CentroidId) -> Result<f64, VqError> {
        let cent = self.centroid(c)?;
        Ok(self.valid[c.q.0]
            .iter()
            .map(|&i| cent.q_values[i])
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Valid slot with the largest Q-value at `c`, first one on ties.
    pub fn greedy_slot(&self, c: CentroidId) -> Result<usize, VqError> {
        let cent = self.centroid(c)?;
        let valid = &self.valid[c.q.0];
        let vals: Vec<f64> = valid.iter().map(|&i| cent.q_values[i]).collect();
        Ok(valid[argmax_first(&vals)])
    }

    /// Like `greedy_slot`, but ties are broken uniformly at random. Used
    /// while learning so unvisited cells do not all default to one action.
    fn greedy_slot_random_tie(&self, c: CentroidId, rng: &mut SimRng) -> Result<usize, VqError> {
        let cent = self.centroid(c)?;
        let valid = &self.valid[c.q.0];
        let best = valid
            .iter()
            .map(|&i| cent.q_values[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = valid.iter().copied().filter(|&i| cent.q_values[i] == best).collect();
        Ok(ties[rng.gen_range(0..ties.len())])
    }

    /// `Q(c,a) ← (1−μ)Q(c,a) + μ(r + γ·max_a' Q(c',a'))`, where `next =
    /// None` stands for a terminal successor with value 0.
    pub fn ql_update(
        &mut self,
        c: CentroidId,
        slot: usize,
        r: f64,
        next: Option<CentroidId>,
        mu: f64,
        gamma: f64,
    ) -> Result<(), VqError> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(VqError::Config("learning rate must lie in (0, 1]".into()));
        }
        let future = match next {
            Some(n) => self.max_q(n)?,
            None => 0.0,
        };
        self.centroid(c)?;
        let q = &mut self.sets[c.q.0][c.index].q_values[slot];
        *q = (1.0 - mu) * *q + mu * (r + gamma * future);
        Ok(())
    }

    pub fn slot_action(&self, slot: usize) -> ProductAction {
        self.slot_actions[slot]
    }

    fn slot_of(&self, a: ProductAction) -> usize {
        self.slot_actions.iter().position(|b| *b == a).expect("known action")
    }

    fn rebuild_index(&mut self) {
        self.index = vec![HashMap::new(); self.sets.len()];
        for q in 0..self.sets.len() {
            for i in 0..self.sets[q].len() {
                let key = self.key(&self.sets[q][i].s);
                self.index[q].entry(key).or_default().push(i);
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("quantizer serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VqError> {
        let mut qz: Self = serde_json::from_str(text).map_err(|e| VqError::Snapshot(e.to_string()))?;
        if qz.valid.len() != qz.sets.len()
            || qz.sets.iter().flatten().any(|c| c.q_values.len() != qz.num_slots)
            || qz.slot_actions.len() != qz.num_slots
        {
            return Err(VqError::Snapshot("inconsistent shapes".into()));
        }
        qz.rebuild_index();
        Ok(qz)
    }

    /// Centroid cloud as CSV: automaton state, coordinates, and max Q.
    pub fn write_centroids_csv(&self, state_names: &[String], mut w: impl Write) -> std::io::Result<()> {
        let dim = self.sets.iter().flatten().next().map_or(0, |c| c.s.dim());
        let coords: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "q,{},max_q", coords.join(","))?;
        for (q, set) in self.sets.iter().enumerate() {
            for (i, c) in set.iter().enumerate() {
                let v = self
                    .max_q(CentroidId {
                        q: StateId(q),
                        index: i,
                    })
                    .unwrap_or(0.0);
                let xs: Vec<String> = c.s.0.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{v}", state_names[q], xs.join(","))?;
            }
        }
        Ok(())
    }
}

impl Policy for Quantizer {
    /// Greedy at the nearest centroid; the first valid action where `C^q`
    /// is still empty.
    fn act(&self, x: &ProductState, _: &mut SimRng) -> ProductAction {
        let slot = match self.nearest(x) {
            Some(c) => self.greedy_slot(c).expect("nearest centroid exists"),
            None => self.valid.get(x.q.0).and_then(|v| v.first().copied()).unwrap_or(0),
        };
        self.slot_actions[slot]
    }

    fn value(&self, x: &ProductState) -> f64 {
        self.nearest(x)
            .map_or(0.0, |c| self.max_q(c).expect("nearest centroid exists"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    pub initial: InitialState,
    pub delta: f64,
    pub max_episodes: usize,
    /// Steps per episode; `None` means the exploration default.
    pub step_cap: Option<usize>,
    pub mu: f64,
    pub gamma: f64,
    /// Exploration rate, decayed linearly from `epsilon_start` in the first
    /// episode to `epsilon_end` in the last.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Stop once this many consecutive episodes succeed.
    pub converge_after: Option<usize>,
    pub seed: u64,
}

impl VqConfig {
    pub fn new(initial: InitialState, delta: f64) -> Self {
        Self {
            initial,
            delta,
            max_episodes: 3000,
            step_cap: None,
            mu: 0.5,
            gamma: 0.9,
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            converge_after: Some(40),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqReport {
    /// Total environment transitions.
    pub samples: usize,
    pub episodes: usize,
    pub centroids: usize,
    pub centroids_per_state: Vec<usize>,
    pub successful_episodes: usize,
    /// Fraction of training episodes that exhausted the frontier.
    pub success_rate: f64,
    pub converged: bool,
}

/// Trains a quantizer by ε-greedy interaction. Every transition updates the
/// Q-table; an episode ends on a frontier reset, entry into the sink, or the
/// step cap.
pub fn vq_train<E: Environment + ?Sized>(
    mdp: &ProductMdp<'_, E>,
    params: &RewardParams,
    cfg: &VqConfig,
) -> Result<(Quantizer, VqReport), VqError> {
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(VqError::Config("discount must lie in [0, 1)".into()));
    }
    if !(0.0..=1.0).contains(&cfg.epsilon_start) || !(0.0..=1.0).contains(&cfg.epsilon_end) {
        return Err(VqError::Config("exploration rates must lie in [0, 1]".into()));
    }
    let mut qz = Quantizer::new(mdp, cfg.delta)?;
    let cap = cfg.step_cap.unwrap_or_else(|| crate::product::default_th(mdp.env));
    let mut env_rng = seeded(cfg.seed, streams::ENV);
    let mut reward_rng = seeded(cfg.seed, streams::REWARD);
    let mut explore_rng = seeded(cfg.seed, streams::EXPLORE);
    let mut init_rng = seeded(cfg.seed, streams::INIT);

    let mut report = VqReport {
        samples: 0,
        episodes: 0,
        centroids: 0,
        centroids_per_state: Vec::new(),
        successful_episodes: 0,
        success_rate: 0.0,
        converged: false,
    };
    let mut streak = 0;
    for ep in 0..cfg.max_episodes {
        let frac = if cfg.max_episodes > 1 {
            ep as f64 / (cfg.max_episodes - 1) as f64
        } else {
            0.0
        };
        let epsilon = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
        let mut x = mdp.initial_state(&cfg.initial, &mut init_rng)?;
        let (mut c, _) = qz.quantize(&x)?;
        let mut frontier = AcceptingFrontier::new(mdp.aut);
        let mut success = false;
        for _ in 0..cap {
            let valid = &qz.valid[x.q.0];
            let slot = if explore_rng.gen::<f64>() < epsilon {
                valid[explore_rng.gen_range(0..valid.len())]
            } else {
                qz.greedy_slot_random_tie(c, &mut explore_rng)?
            };
            let a = qz.slot_action(slot);
            let next = {
                let value = |p: &ProductState| qz.value(p);
                mdp.step(&x, a, &mut env_rng, Resolve::MaxValue(&value))?
            };
            let outcome = params.reward(next.q, &mut frontier, mdp.aut, &mut reward_rng);
            report.samples += 1;
            if mdp.aut.is_sink(next.q) {
                qz.ql_update(c, slot, outcome.r, None, cfg.mu, cfg.gamma)?;
                break;
            }
            let (c_next, _) = qz.quantize(&next)?;
            qz.ql_update(c, slot, outcome.r, Some(c_next), cfg.mu, cfg.gamma)?;
            if outcome.event == FrontierEvent::Reset {
                success = true;
                break;
            }
            x = next;
            c = c_next;
        }
        report.episodes += 1;
        if success {
            report.successful_episodes += 1;
            streak += 1;
        } else {
            streak = 0;
        }
        if cfg.converge_after.is_some_and(|n| streak >= n) {
            report.converged = true;
            break;
        }
    }
    report.centroids = qz.num_centroids();
    report.centroids_per_state = qz.sets.iter().map(Vec::len).collect();
    report.success_rate = report.successful_episodes as f64 / report.episodes.max(1) as f64;
    Ok((qz, report))
}

impl Quantizer {
    /// Q-value of `a` at the nearest centroid of `x`, 0 where `C^q` is empty.
    pub fn q_value(&self, x: &ProductState, a: ProductAction) -> f64 {
        match self.nearest(x) {
            Some(c) => self.sets[c.q.0][c.index].q_values[self.slot_of(a)],
            None => 0.0,
        }
    }
}
