//! Limit-deterministic Büchi automata over label sets.
//!
//! An [`Ldba`] is read from a small line-oriented document (see [`parse_ldba`]).
//! Transitions are guarded by conjunctions of literals over atomic
//! propositions; a label set that matches no edge out of a state moves the
//! automaton to an implicit, non-accepting sink with a universal self-loop.
//! The sink is not a member of the declared state set and is addressed through
//! [`Ldba::sink`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A set of atomic propositions holding at one point of a trace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(BTreeSet<String>);

impl LabelSet {
    pub fn empty() -> Self {
        Self(BTreeSet::new())
    }

    /// Builds a label set, rejecting empty or duplicate names.
    pub fn new<I, S>(props: I) -> Result<Self, LabelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for p in props {
            let p = p.into();
            if p.trim().is_empty() {
                return Err(LabelError::EmptyName);
            }
            if !set.insert(p.clone()) {
                return Err(LabelError::Duplicate(p));
            }
        }
        Ok(Self(set))
    }

    pub fn contains(&self, prop: &str) -> bool {
        self.0.contains(prop)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("atomic proposition names must be nonempty")]
    EmptyName,
    #[error("atomic proposition `{0}` listed twice")]
    Duplicate(String),
}

/// Index of an automaton state. Declared states are `0..n`; the implicit
/// sink is `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub prop: String,
    pub positive: bool,
}

/// Conjunction of literals. The empty conjunction is `true`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guard {
    pub literals: Vec<Literal>,
}

impl Guard {
    pub fn matches(&self, label: &LabelSet) -> bool {
        self.literals
            .iter()
            .all(|lit| label.contains(&lit.prop) == lit.positive)
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.literals.is_empty() {
            return write!(f, "true");
        }
        for (i, lit) in self.literals.iter().enumerate() {
            if i > 0 {
                write!(f, " & ")?;
            }
            if !lit.positive {
                write!(f, "!")?;
            }
            write!(f, "{}", lit.prop)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: StateId,
    pub guard: Guard,
    pub to: StateId,
}

/// Which structural condition of a limit-deterministic automaton failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdbaCondition {
    NoAcceptingSets,
    EmptyAcceptingSet,
    AcceptingOutsideDeterministic,
    NondeterministicInDeterministicPart,
    DeterministicPartNotClosed,
    EpsilonFromDeterministic,
    MultipleInitialStates,
    UnknownState,
    DuplicateState,
}

impl fmt::Display for LdbaCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NoAcceptingSets => "at least one accepting set is required",
            Self::EmptyAcceptingSet => "accepting sets must be nonempty",
            Self::AcceptingOutsideDeterministic => "every accepting set must lie inside the deterministic part",
            Self::NondeterministicInDeterministicPart => {
                "states of the deterministic part need exactly one successor per label"
            }
            Self::DeterministicPartNotClosed => "successors of deterministic states must be deterministic",
            Self::EpsilonFromDeterministic => "epsilon moves may only leave the nondeterministic part",
            Self::MultipleInitialStates => "exactly one initial state is supported",
            Self::UnknownState => "reference to an undeclared state",
            Self::DuplicateState => "state declared twice",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutomatonError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid automaton ({condition}): {detail}")]
    Invariant { condition: LdbaCondition, detail: String },
    #[error("run needs a choice at position {position} but the choice sequence is exhausted")]
    ChoicesExhausted { position: usize },
    #[error("choice {choice} at position {position} is not an available move")]
    InvalidChoice { position: usize, choice: String },
}

impl AutomatonError {
    fn invariant(condition: LdbaCondition, detail: impl Into<String>) -> Self {
        Self::Invariant {
            condition,
            detail: detail.into(),
        }
    }
}

/// A limit-deterministic generalized Büchi automaton with ε-moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ldba {
    names: Vec<String>,
    initial: StateId,
    deterministic: Vec<bool>,
    accepting: Vec<BTreeSet<StateId>>,
    edges: Vec<Edge>,
    epsilon: Vec<(StateId, StateId)>,
    props: BTreeSet<String>,
}

impl Ldba {
    /// Assembles an automaton from parts and checks every structural
    /// condition. Used by the parser and by tests that generate automata.
    pub fn new(
        names: Vec<String>,
        initial: StateId,
        deterministic: Vec<StateId>,
        accepting: Vec<BTreeSet<StateId>>,
        edges: Vec<Edge>,
        epsilon: Vec<(StateId, StateId)>,
    ) -> Result<Self, AutomatonError> {
        let n = names.len();
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name) {
                return Err(AutomatonError::invariant(LdbaCondition::DuplicateState, name.clone()));
            }
        }
        let check = |q: StateId| {
            if q.0 < n {
                Ok(())
            } else {
                Err(AutomatonError::invariant(
                    LdbaCondition::UnknownState,
                    format!("state index {}", q.0),
                ))
            }
        };
        check(initial)?;
        let mut det = vec![false; n];
        for &q in &deterministic {
            check(q)?;
            det[q.0] = true;
        }
        for e in &edges {
            check(e.from)?;
            check(e.to)?;
        }
        for &(a, b) in &epsilon {
            check(a)?;
            check(b)?;
        }
        let props = edges
            .iter()
            .flat_map(|e| e.guard.literals.iter().map(|l| l.prop.clone()))
            .collect();
        let aut = Self {
            names,
            initial,
            deterministic: det,
            accepting,
            edges,
            epsilon,
            props,
        };
        aut.validate()?;
        Ok(aut)
    }

    fn validate(&self) -> Result<(), AutomatonError> {
        if self.accepting.is_empty() {
            return Err(AutomatonError::invariant(
                LdbaCondition::NoAcceptingSets,
                "accepting set list is empty",
            ));
        }
        for (j, set) in self.accepting.iter().enumerate() {
            if set.is_empty() {
                return Err(AutomatonError::invariant(
                    LdbaCondition::EmptyAcceptingSet,
                    format!("F{} is empty", j + 1),
                ));
            }
            for &q in set {
                if q.0 >= self.names.len() {
                    return Err(AutomatonError::invariant(
                        LdbaCondition::UnknownState,
                        format!("F{} contains state index {}", j + 1, q.0),
                    ));
                }
                if !self.deterministic[q.0] {
                    return Err(AutomatonError::invariant(
                        LdbaCondition::AcceptingOutsideDeterministic,
                        format!("F{} contains {}", j + 1, self.names[q.0]),
                    ));
                }
            }
        }
        for &(from, _) in &self.epsilon {
            if self.deterministic[from.0] {
                return Err(AutomatonError::invariant(
                    LdbaCondition::EpsilonFromDeterministic,
                    format!("{} has an epsilon move", self.names[from.0]),
                ));
            }
        }
        // Enumerate every label over the propositions mentioned in guards.
        let props: Vec<&String> = self.props.iter().collect();
        if props.len() > 20 {
            return Err(AutomatonError::invariant(
                LdbaCondition::NondeterministicInDeterministicPart,
                "too many propositions to check determinism exhaustively (max 20)",
            ));
        }
        for q in (0..self.names.len()).filter(|&q| self.deterministic[q]) {
            let q = StateId(q);
            for e in self.edges.iter().filter(|e| e.from == q) {
                if !self.deterministic[e.to.0] {
                    return Err(AutomatonError::invariant(
                        LdbaCondition::DeterministicPartNotClosed,
                        format!("{} --> {}", self.names[q.0], self.names[e.to.0]),
                    ));
                }
            }
            for mask in 0u32..(1u32 << props.len()) {
                let label = LabelSet(
                    props
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, p)| (*p).clone())
                        .collect(),
                );
                let succ = self.step(q, &label);
                if succ.len() != 1 {
                    return Err(AutomatonError::invariant(
                        LdbaCondition::NondeterministicInDeterministicPart,
                        format!("{} has {} successors on {}", self.names[q.0], succ.len(), label),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of declared states, excluding the implicit sink.
    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.names.len()).map(StateId)
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn sink(&self) -> StateId {
        StateId(self.names.len())
    }

    pub fn is_sink(&self, q: StateId) -> bool {
        q.0 == self.names.len()
    }

    pub fn contains(&self, q: StateId) -> bool {
        q.0 <= self.names.len()
    }

    pub fn name(&self, q: StateId) -> &str {
        if self.is_sink(q) {
            "sink"
        } else {
            &self.names[q.0]
        }
    }

    pub fn state_by_name(&self, name: &str) -> Option<StateId> {
        if name == "sink" {
            return Some(self.sink());
        }
        self.names.iter().position(|n| n == name).map(StateId)
    }

    pub fn is_deterministic_state(&self, q: StateId) -> bool {
        self.is_sink(q) || self.deterministic[q.0]
    }

    pub fn accepting_sets(&self) -> &[BTreeSet<StateId>] {
        &self.accepting
    }

    pub fn accepting_union(&self) -> BTreeSet<StateId> {
        self.accepting.iter().flatten().copied().collect()
    }

    pub fn is_accepting(&self, q: StateId) -> bool {
        self.accepting.iter().any(|f| f.contains(&q))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn propositions(&self) -> impl Iterator<Item = &str> {
        self.props.iter().map(String::as_str)
    }

    /// Successors of `q` on `label`, sorted and deduplicated. Label sets
    /// matching no edge lead to the sink.
    pub fn step(&self, q: StateId, label: &LabelSet) -> Vec<StateId> {
        if self.is_sink(q) {
            return vec![q];
        }
        let mut out: Vec<StateId> = self
            .edges
            .iter()
            .filter(|e| e.from == q && e.guard.matches(label))
            .map(|e| e.to)
            .collect();
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            out.push(self.sink());
        }
        out
    }

    /// Targets of ε-moves leaving `q`, sorted.
    pub fn epsilon_targets(&self, q: StateId) -> Vec<StateId> {
        let mut out: Vec<StateId> = self
            .epsilon
            .iter()
            .filter(|(from, _)| *from == q)
            .map(|&(_, to)| to)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Every state that is the target of some ε-move, sorted. These index
    /// the ε-actions of the product.
    pub fn epsilon_action_targets(&self) -> Vec<StateId> {
        let mut out: Vec<StateId> = self.epsilon.iter().map(|&(_, to)| to).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn has_epsilon(&self, from: StateId, to: StateId) -> bool {
        self.epsilon.iter().any(|&(a, b)| a == from && b == to)
    }

    /// Shortest number of moves (edges or ε) from each declared state to
    /// some accepting state; `None` when no accepting state is reachable.
    pub fn distance_to_accepting(&self) -> Vec<Option<usize>> {
        let n = self.names.len();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            preds[e.to.0].push(e.from.0);
        }
        for &(a, b) in &self.epsilon {
            preds[b.0].push(a.0);
        }
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for q in self.accepting_union() {
            dist[q.0] = Some(0);
            queue.push_back(q.0);
        }
        while let Some(q) = queue.pop_front() {
            let d = dist[q].unwrap_or(0);
            for &p in &preds[q] {
                if dist[p].is_none() {
                    dist[p] = Some(d + 1);
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    /// Declared states ordered from the accepting side towards the initial
    /// side: ascending distance to an accepting state, states that cannot
    /// reach acceptance last, ties by index.
    pub fn backward_order(&self) -> Vec<StateId> {
        let dist = self.distance_to_accepting();
        let mut order: Vec<StateId> = self.states().collect();
        order.sort_by_key(|q| (dist[q.0].unwrap_or(usize::MAX), q.0));
        order
    }

    /// Runs the automaton over a finite label sequence.
    ///
    /// Before each label, pending [`RunChoice::Epsilon`] entries at the front
    /// of `choices` are taken as ε-moves. Whenever a label has more than one
    /// successor the next choice must be a [`RunChoice::Successor`] naming one
    /// of them.
    pub fn check_trace(&self, labels: &[LabelSet], choices: &[RunChoice]) -> Result<RunReport, AutomatonError> {
        let mut q = self.initial;
        let mut run = vec![q];
        let mut next_choice = 0;
        for (pos, label) in labels.iter().enumerate() {
            while let Some(RunChoice::Epsilon(target)) = choices.get(next_choice) {
                if !self.has_epsilon(q, *target) {
                    return Err(AutomatonError::InvalidChoice {
                        position: pos,
                        choice: format!("eps->{}", self.name(*target)),
                    });
                }
                q = *target;
                run.push(q);
                next_choice += 1;
            }
            let succ = self.step(q, label);
            q = if succ.len() == 1 {
                succ[0]
            } else {
                match choices.get(next_choice) {
                    None => return Err(AutomatonError::ChoicesExhausted { position: pos }),
                    Some(RunChoice::Successor(t)) if succ.contains(t) => {
                        next_choice += 1;
                        *t
                    }
                    Some(other) => {
                        return Err(AutomatonError::InvalidChoice {
                            position: pos,
                            choice: format!("{other:?}"),
                        })
                    }
                }
            };
            run.push(q);
        }
        let visits = self
            .accepting
            .iter()
            .map(|f| run.iter().filter(|q| f.contains(q)).count())
            .collect();
        let mut frontier = AcceptingFrontier::new(self);
        let mut resets = 0;
        for &q in run.iter().skip(1) {
            if frontier.update(q, &self.accepting) == FrontierEvent::Reset {
                resets += 1;
            }
        }
        Ok(RunReport {
            states: run,
            visits,
            frontier_resets: resets,
        })
    }
}

/// Resolution of one nondeterministic point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunChoice {
    Epsilon(StateId),
    Successor(StateId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub states: Vec<StateId>,
    /// Number of run positions inside each accepting set, in set order.
    pub visits: Vec<usize>,
    /// How many times replaying the run through the accepting frontier
    /// exhausted it.
    pub frontier_resets: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontierEvent {
    Unchanged,
    Shrunk,
    Reset,
}

/// The accepting states still owed a visit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptingFrontier {
    states: BTreeSet<StateId>,
}

impl AcceptingFrontier {
    /// Starts at the union of all accepting sets.
    pub fn new(aut: &Ldba) -> Self {
        Self {
            states: aut.accepting_union(),
        }
    }

    pub fn from_states(states: BTreeSet<StateId>) -> Self {
        Self { states }
    }

    pub fn contains(&self, q: StateId) -> bool {
        self.states.contains(&q)
    }

    pub fn states(&self) -> &BTreeSet<StateId> {
        &self.states
    }

    /// Applies [`accepting_frontier`] in place and reports what happened.
    pub fn update(&mut self, q: StateId, sets: &[BTreeSet<StateId>]) -> FrontierEvent {
        let (next, event) = frontier_step(q, &self.states, sets);
        self.states = next;
        event
    }
}

/// The accepting frontier function.
///
/// For the first accepting set `F_j` containing `q` that still overlaps the
/// frontier: returns `frontier \ F_j` when the frontier differs from `F_j`,
/// and `(⋃ F_k) \ F_j` when it equals `F_j`. States outside every accepting
/// set leave the frontier unchanged. An empty result is replaced by `⋃ F_k`.
pub fn accepting_frontier(q: StateId, frontier: &BTreeSet<StateId>, sets: &[BTreeSet<StateId>]) -> BTreeSet<StateId> {
    frontier_step(q, frontier, sets).0
}

fn frontier_step(
    q: StateId,
    frontier: &BTreeSet<StateId>,
    sets: &[BTreeSet<StateId>],
) -> (BTreeSet<StateId>, FrontierEvent) {
    let owed = sets.iter().find(|f| f.contains(&q) && !f.is_disjoint(frontier));
    let Some(fj) = owed else {
        return (frontier.clone(), FrontierEvent::Unchanged);
    };
    let union: BTreeSet<StateId> = sets.iter().flatten().copied().collect();
    if frontier == fj {
        let next: BTreeSet<StateId> = union.difference(fj).copied().collect();
        if next.is_empty() {
            (union, FrontierEvent::Reset)
        } else {
            (next, FrontierEvent::Reset)
        }
    } else {
        let next: BTreeSet<StateId> = frontier.difference(fj).copied().collect();
        if next.is_empty() {
            (union, FrontierEvent::Reset)
        } else {
            (next, FrontierEvent::Shrunk)
        }
    }
}

/// Parses an automaton document.
///
/// ```text
/// states: q1, q2, q3
/// initial: q1
/// deterministic: q1, q2, q3
/// accepting: F1 = {q2}
/// q1 -- t & !u --> q2
/// q1 --eps--> q3
/// ```
///
/// Blank lines and `#` comments are ignored. Guards are `true` or
/// conjunctions of `p` / `!p` joined by `&` (`¬` and `∧` are accepted too).
pub fn parse_ldba(text: &str) -> Result<Ldba, AutomatonError> {
    let mut names: Option<Vec<String>> = None;
    let mut initial: Option<(usize, Vec<String>)> = None;
    let mut deterministic: Option<(usize, Vec<String>)> = None;
    let mut accepting: Option<(usize, Vec<Vec<String>>)> = None;
    let mut edges: Vec<(usize, String, Guard, String)> = Vec::new();
    let mut eps: Vec<(usize, String, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let indent = line.len() - line.trim_start().len();
        let syntax = |col: usize, msg: &str| AutomatonError::Syntax {
            line: line_no,
            column: col + 1,
            message: msg.to_string(),
        };
        let trimmed = line.trim();

        if let Some((key, rest)) = header(trimmed) {
            let rest_col = indent + trimmed.len() - rest.len();
            match key {
                "states" => {
                    if names.is_some() {
                        return Err(syntax(indent, "duplicate `states:` header"));
                    }
                    names = Some(name_list(rest, rest_col).map_err(|(c, m)| syntax(c, &m))?);
                }
                "initial" => {
                    let list = name_list(rest, rest_col).map_err(|(c, m)| syntax(c, &m))?;
                    initial = Some((line_no, list));
                }
                "deterministic" => {
                    let list = if rest.trim().is_empty() {
                        Vec::new()
                    } else {
                        name_list(rest, rest_col).map_err(|(c, m)| syntax(c, &m))?
                    };
                    deterministic = Some((line_no, list));
                }
                "accepting" => {
                    let sets = accepting_list(rest, rest_col).map_err(|(c, m)| syntax(c, &m))?;
                    accepting = Some((line_no, sets));
                }
                _ => unreachable!(),
            }
            continue;
        }

        if let Some(p) = trimmed.find("--eps-->") {
            let from = trimmed[..p].trim();
            let to = trimmed[p + "--eps-->".len()..].trim();
            if !is_ident(from) {
                return Err(syntax(indent, "expected a state name before `--eps-->`"));
            }
            if !is_ident(to) {
                return Err(syntax(indent + p + 8, "expected a state name after `--eps-->`"));
            }
            eps.push((line_no, from.to_string(), to.to_string()));
            continue;
        }

        let Some(open) = trimmed.find("--") else {
            return Err(syntax(indent, "expected a header, an edge or an epsilon move"));
        };
        let Some(close_rel) = trimmed[open + 2..].find("-->") else {
            return Err(syntax(indent + open, "edge is missing `-->`"));
        };
        let close = open + 2 + close_rel;
        let from = trimmed[..open].trim();
        let guard_text = &trimmed[open + 2..close];
        let to = trimmed[close + 3..].trim();
        if !is_ident(from) {
            return Err(syntax(indent, "expected a state name before `--`"));
        }
        if !is_ident(to) {
            return Err(syntax(indent + close + 3, "expected a state name after `-->`"));
        }
        let guard = parse_guard(guard_text, indent + open + 2).map_err(|(c, m)| syntax(c, &m))?;
        edges.push((line_no, from.to_string(), guard, to.to_string()));
    }

    let eof = |what: &str| AutomatonError::Syntax {
        line: text.lines().count().max(1),
        column: 1,
        message: format!("missing `{what}:` header"),
    };
    let names = names.ok_or_else(|| eof("states"))?;
    let (init_line, init) = initial.ok_or_else(|| eof("initial"))?;
    let (_, det) = deterministic.ok_or_else(|| eof("deterministic"))?;
    let (_, acc) = accepting.ok_or_else(|| eof("accepting"))?;

    let index: BTreeMap<&str, StateId> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), StateId(i)))
        .collect();
    let lookup = |name: &str, line: usize| {
        index.get(name).copied().ok_or_else(|| {
            AutomatonError::invariant(
                LdbaCondition::UnknownState,
                format!("line {line}: `{name}` is not declared"),
            )
        })
    };

    if init.len() != 1 {
        return Err(AutomatonError::invariant(
            LdbaCondition::MultipleInitialStates,
            format!("line {init_line}: {} initial states given", init.len()),
        ));
    }
    let initial = lookup(&init[0], init_line)?;
    let det = det.iter().map(|n| lookup(n, 0)).collect::<Result<Vec<_>, _>>()?;
    let acc = acc
        .iter()
        .map(|set| set.iter().map(|n| lookup(n, 0)).collect())
        .collect::<Result<Vec<BTreeSet<_>>, _>>()?;
    let edges = edges
        .into_iter()
        .map(|(line, from, guard, to)| {
            Ok(Edge {
                from: lookup(&from, line)?,
                guard,
                to: lookup(&to, line)?,
            })
        })
        .collect::<Result<Vec<_>, AutomatonError>>()?;
    let eps = eps
        .into_iter()
        .map(|(line, a, b)| Ok((lookup(&a, line)?, lookup(&b, line)?)))
        .collect::<Result<Vec<_>, AutomatonError>>()?;

    Ldba::new(names, initial, det, acc, edges, eps)
}

fn header(line: &str) -> Option<(&str, &str)> {
    for key in ["states", "initial", "deterministic", "accepting"] {
        if let Some(rest) = line.strip_prefix(key) {
            if let Some(rest) = rest.trim_start().strip_prefix(':') {
                return Some((key, rest));
            }
        }
    }
    None
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s != "sink" && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '\'')
}

type Located<T> = Result<T, (usize, String)>;

fn name_list(text: &str, col: usize) -> Located<Vec<String>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in text.split(',') {
        let name = part.trim();
        let lead = part.len() - part.trim_start().len();
        if !is_ident(name) {
            return Err((col + offset + lead, format!("invalid state name `{name}`")));
        }
        out.push(name.to_string());
        offset += part.len() + 1;
    }
    Ok(out)
}

fn accepting_list(text: &str, col: usize) -> Located<Vec<Vec<String>>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in text.split(';') {
        let here = col + offset;
        offset += part.len() + 1;
        let part_trim = part.trim();
        if part_trim.is_empty() {
            continue;
        }
        let (label, body) = match part_trim.split_once('=') {
            Some((l, b)) => (l.trim(), b.trim()),
            None => return Err((here, "expected `F<k> = {...}`".into())),
        };
        if !is_ident(label) {
            return Err((here, format!("invalid accepting-set name `{label}`")));
        }
        let inner = body
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or((here, "accepting set must be written `{a, b}`".to_string()))?;
        if inner.trim().is_empty() {
            out.push(Vec::new());
        } else {
            out.push(name_list(inner, here)?);
        }
    }
    Ok(out)
}

fn parse_guard(text: &str, col: usize) -> Located<Guard> {
    let t = text.trim();
    if t.is_empty() {
        return Err((col, "empty guard".into()));
    }
    if t == "true" {
        return Ok(Guard::default());
    }
    let normalized = t.replace('∧', "&");
    let mut literals = Vec::new();
    for part in normalized.split('&') {
        let p = part.trim();
        let (positive, name) = if let Some(rest) = p.strip_prefix('!') {
            (false, rest.trim())
        } else if let Some(rest) = p.strip_prefix('¬') {
            (false, rest.trim())
        } else {
            (true, p)
        };
        if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err((col, format!("invalid literal `{p}` in guard `{t}`")));
        }
        literals.push(Literal {
            prop: name.to_string(),
            positive,
        });
    }
    Ok(Guard { literals })
}
