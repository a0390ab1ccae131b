//! Exact Q-iteration on a finite product MDP. Used as ground truth in tests.

use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::automata::{accepting_frontier, StateId};
use crate::environment::FiniteEnv;
use crate::policy::{argmax_first, Policy};
use crate::product::{ProductAction, ProductMdp, ProductState, RewardParams};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("value iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("product has {0} states, more than the oracle enumerates")]
    TooLarge(usize),
}

const MAX_STATES: usize = 10_000;

/// A state of the finite product: cell, automaton state, frontier index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OracleState {
    pub cell: usize,
    pub q: StateId,
    pub frontier: usize,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub states: Vec<OracleState>,
    index: HashMap<OracleState, usize>,
    /// Q-values per state and action slot; invalid slots hold `-inf`.
    pub q: Vec<Vec<f64>>,
    pub frontiers: Vec<BTreeSet<StateId>>,
    pub iterations: usize,
    slots: usize,
    eps_slots: Vec<(usize, ProductAction)>,
}

/// Per valid action: list of (probability, reward, successor index).
type Outcomes = Vec<(f64, f64, usize)>;

/// Solves `Q(x,a) = Σ p · (r + γ max_a' Q(x',a'))` to sup-norm change below
/// `tol`, with the noise-free reward (`y = 0`) and the frontier tracked
/// exactly. Nondeterministic automaton successors are chosen by the agent.
pub fn exact_dp_oracle<E: FiniteEnv + ?Sized>(
    mdp: &ProductMdp<'_, E>,
    params: &RewardParams,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<OracleSolution, OracleError> {
    let aut = mdp.aut;
    let env = mdp.env;
    let sets = aut.accepting_sets();
    let mut frontiers: Vec<BTreeSet<StateId>> = vec![aut.accepting_union()];
    let mut frontier_ids: HashMap<BTreeSet<StateId>, usize> = HashMap::new();
    frontier_ids.insert(frontiers[0].clone(), 0);

    let mut states: Vec<OracleState> = Vec::new();
    let mut index: HashMap<OracleState, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut intern = |st: OracleState, states: &mut Vec<OracleState>, queue: &mut VecDeque<usize>| {
        *index.entry(st).or_insert_with(|| {
            states.push(st);
            queue.push_back(states.len() - 1);
            states.len() - 1
        })
    };
    for cell in 0..env.num_cells() {
        intern(
            OracleState {
                cell,
                q: aut.initial(),
                frontier: 0,
            },
            &mut states,
            &mut queue,
        );
    }

    let slots = mdp.num_action_slots();
    // per state: per slot: either None (invalid) or per-choice outcome lists
    let mut model: Vec<Vec<Option<Vec<Outcomes>>>> = Vec::new();
    while let Some(i) = queue.pop_front() {
        if states.len() > MAX_STATES {
            return Err(OracleError::TooLarge(states.len()));
        }
        let st = states[i];
        let frontier = frontiers[st.frontier].clone();
        let mut row: Vec<Option<Vec<Outcomes>>> = vec![None; slots];
        for a in mdp.actions_at(st.q) {
            // each element is one way the automaton may be resolved
            let mut choices: Vec<Outcomes> = Vec::new();
            let mut add = |q_next: StateId,
                           cell: usize,
                           p: f64,
                           branch: &mut Outcomes,
                           states: &mut Vec<OracleState>,
                           queue: &mut VecDeque<usize>| {
                let reward = if frontier.contains(&q_next) {
                    params.r_p()
                } else {
                    params.r_n()
                };
                let f_next = accepting_frontier(q_next, &frontier, sets);
                let n = frontiers.len();
                let fid = *frontier_ids.entry(f_next.clone()).or_insert_with(|| {
                    frontiers.push(f_next);
                    n
                });
                let j = intern(
                    OracleState {
                        cell,
                        q: q_next,
                        frontier: fid,
                    },
                    states,
                    queue,
                );
                branch.push((p, reward, j));
            };
            match a {
                ProductAction::Epsilon(to) => {
                    let mut branch = Vec::new();
                    add(to, st.cell, 1.0, &mut branch, &mut states, &mut queue);
                    choices.push(branch);
                }
                ProductAction::Base(b) => {
                    // The agent picks a successor per landing cell; enumerate
                    // the cross product only when some cell is ambiguous.
                    let outcomes = env.transitions(st.cell, b);
                    let succ: Vec<Vec<StateId>> = outcomes
                        .iter()
                        .map(|(c, _)| aut.step(st.q, env.label(&env.cell_state(*c)).expect("cell in bounds")))
                        .collect();
                    let combos: usize = succ.iter().map(Vec::len).product();
                    for k in 0..combos {
                        let mut rem = k;
                        let mut branch = Vec::new();
                        for ((cell, p), options) in outcomes.iter().zip(&succ) {
                            let q_next = options[rem % options.len()];
                            rem /= options.len();
                            add(q_next, *cell, *p, &mut branch, &mut states, &mut queue);
                        }
                        choices.push(branch);
                    }
                }
            }
            row[mdp.action_index(a)] = Some(choices);
        }
        model.push(row);
    }

    let n = states.len();
    let mut q = vec![vec![f64::NEG_INFINITY; slots]; n];
    for (i, row) in model.iter().enumerate() {
        for (s, m) in row.iter().enumerate() {
            if m.is_some() {
                q[i][s] = 0.0;
            }
        }
    }
    let mut v = vec![0.0; n];
    for it in 1..=max_iter {
        let mut delta: f64 = 0.0;
        for (i, row) in model.iter().enumerate() {
            for (s, m) in row.iter().enumerate() {
                let Some(choices) = m else { continue };
                let best = choices
                    .iter()
                    .map(|branch| branch.iter().map(|(p, r, j)| p * (r + gamma * v[*j])).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - q[i][s]).abs());
                q[i][s] = best;
            }
        }
        for i in 0..n {
            v[i] = q[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        if delta < tol {
            let eps_slots = (0..slots)
                .map(|s| (s, mdp.action_at(s)))
                .filter(|(_, a)| matches!(a, ProductAction::Epsilon(_)))
                .collect();
            return Ok(OracleSolution {
                states,
                index,
                q,
                frontiers,
                iterations: it,
                slots,
                eps_slots,
            });
        }
    }
    Err(OracleError::NoConvergence(max_iter))
}

impl OracleSolution {
    pub fn lookup(&self, cell: usize, q: StateId, frontier: usize) -> Option<usize> {
        self.index.get(&OracleState { cell, q, frontier }).copied()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.q[i].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Slots whose value is within `rel_tol` (relative to the state value) of
    /// the best.
    pub fn optimal_slots(&self, i: usize, rel_tol: f64) -> Vec<usize> {
        let best = self.value(i);
        let tol = rel_tol * best.abs().max(1e-12);
        (0..self.slots)
            .filter(|s| self.q[i][*s].is_finite() && self.q[i][*s] >= best - tol)
            .collect()
    }

    /// True when every valid action is optimal: no decision to get wrong.
    pub fn is_indifferent(&self, i: usize, rel_tol: f64) -> bool {
        let valid = self.q[i].iter().filter(|v| v.is_finite()).count();
        self.optimal_slots(i, rel_tol).len() == valid
    }

    pub fn greedy_slot(&self, i: usize) -> usize {
        argmax_first(&self.q[i])
    }

    pub fn num_slots(&self) -> usize {
        self.slots
    }

    pub fn epsilon_slots(&self) -> &[(usize, ProductAction)] {
        &self.eps_slots
    }
}

/// Greedy oracle policy for frontier index 0 (the full accepting union),
/// which is the only frontier with a single accepting set.
pub struct OraclePolicy<'a, 'm, E: ?Sized> {
    pub solution: &'a OracleSolution,
    pub mdp: &'a ProductMdp<'m, E>,
}

impl<E: FiniteEnv + ?Sized> Policy for OraclePolicy<'_, '_, E> {
    fn act(&self, x: &ProductState, _: &mut SimRng) -> ProductAction {
        let cell = self.mdp.env.cell_of(&x.s);
        match self.solution.lookup(cell, x.q, 0) {
            Some(i) => self.mdp.action_at(self.solution.greedy_slot(i)),
            None => self.mdp.actions_at(x.q)[0],
        }
    }

    fn value(&self, x: &ProductState) -> f64 {
        let cell = self.mdp.env.cell_of(&x.s);
        self.solution
            .lookup(cell, x.q, 0)
            .map(|i| self.solution.value(i))
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::parse_ldba;
    use crate::environment::{ActionId, GridWorld1D};

    fn coprates() -> crate::automata::Ldba {
        parse_ldba(include_str!("../assets/coprates.ldba")).unwrap()
    }

    #[test]
    fn single_rewarding_cell_gives_geometric_series() {
        let aut = coprates();
        let g = GridWorld1D::from_pattern("t", &[('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let sol = exact_dp_oracle(&mdp, &RewardParams::default(), 0.9, 1e-12, 100_000).unwrap();
        for i in 0..sol.states.len() {
            if aut.is_accepting(sol.states[i].q) || sol.states[i].q == aut.initial() {
                for v in sol.q[i].iter().filter(|v| v.is_finite()) {
                    assert!((v - 10.0).abs() < 1e-9, "{v}");
                }
            }
        }
    }

    #[test]
    fn two_cell_chain_prefers_right() {
        let aut = coprates();
        let g = GridWorld1D::from_pattern(".t", &[('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let sol = exact_dp_oracle(&mdp, &RewardParams::default(), 0.9, 1e-12, 100_000).unwrap();
        let i = sol.lookup(0, aut.initial(), 0).unwrap();
        assert_eq!(mdp.action_at(sol.greedy_slot(i)), ProductAction::Base(ActionId(1)));
        let q2 = aut.state_by_name("q2").unwrap();
        let j = sol.lookup(1, q2, 0).unwrap();
        assert_eq!(mdp.action_at(sol.greedy_slot(j)), ProductAction::Base(ActionId(1)));
    }

    #[test]
    fn twenty_cells_head_to_the_nearest_target() {
        let aut = coprates();
        let g = GridWorld1D::from_pattern("u..............tt...", &[('u', "u"), ('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let sol = exact_dp_oracle(&mdp, &RewardParams::default(), 0.9, 1e-9, 100_000).unwrap();
        for cell in 1..15 {
            let i = sol.lookup(cell, aut.initial(), 0).unwrap();
            assert_eq!(sol.optimal_slots(i, 1e-6), vec![1], "cell {cell}");
        }
        for cell in 17..20 {
            let i = sol.lookup(cell, aut.initial(), 0).unwrap();
            assert_eq!(sol.optimal_slots(i, 1e-6), vec![0], "cell {cell}");
        }
    }

    #[test]
    fn epsilon_choices_are_enumerated() {
        let aut = parse_ldba(
            "states: q1, q2, q3\ninitial: q1\ndeterministic: q2, q3\naccepting: F1 = {q2}\n\
             q1 -- true --> q1\nq1 --eps--> q2\nq1 --eps--> q3\nq2 -- t --> q2\nq3 -- true --> q3\n",
        )
        .unwrap();
        let g = GridWorld1D::from_pattern("tt", &[('t', "t")], 0.0).unwrap();
        let mdp = ProductMdp::new(&g, &aut);
        let sol = exact_dp_oracle(&mdp, &RewardParams::default(), 0.9, 1e-12, 100_000).unwrap();
        let i = sol.lookup(0, aut.initial(), 0).unwrap();
        let q2 = aut.state_by_name("q2").unwrap();
        assert_eq!(mdp.action_at(sol.greedy_slot(i)), ProductAction::Epsilon(q2));
        assert_eq!(sol.epsilon_slots().len(), 2);
    }
}
