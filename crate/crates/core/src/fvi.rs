//! Fitted value iteration with a kernel averager over a fixed grid of
//! centers per automaton state and Monte-Carlo Bellman backups.
//!
//! There is no running reward: the value of accepting states is pinned to
//! `r_p` and propagates backwards through the automaton, one sub-value
//! function at a time.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::StateId;
use crate::environment::{Bounds, Environment, MdpState};
use crate::policy::{argmax_first, Policy};
use crate::product::{streams, ProductAction, ProductError, ProductMdp, ProductState, RewardParams};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Error)]
pub enum FviError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no cached samples for state {q}, center {center}, action slot {slot}")]
    MissingSamples { q: StateId, center: usize, slot: usize },
    #[error(transparent)]
    Product(#[from] ProductError),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Per-state value functions on a shared grid of centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub centers: Vec<MdpState>,
    /// `values[q][i]` is `v^q(centers[i])`, one row per declared state.
    pub values: Vec<Vec<f64>>,
    pub h: f64,
    pub bounds: Bounds,
    /// Value of any point paired with the sink.
    pub sink_value: f64,
    /// Center coordinates mapped into the unit cube.
    #[serde(skip)]
    normalized: Vec<Vec<f64>>,
}

/// `k` cell centers on an axis-aligned grid over `bounds`, `k` must be a
/// perfect power of the dimension.
pub fn grid_centers(bounds: &Bounds, k: usize) -> Result<Vec<MdpState>, FviError> {
    let dim = bounds.dim();
    let per = (k as f64).powf(1.0 / dim as f64).round() as usize;
    if k == 0 || per.checked_pow(dim as u32) != Some(k) {
        return Err(FviError::Config(format!(
            "{k} centers do not form a grid in {dim} dimensions"
        )));
    }
    let mut out = Vec::with_capacity(k);
    for flat in 0..k {
        let mut rest = flat;
        let coords = (0..dim)
            .map(|d| {
                let j = rest % per;
                rest /= per;
                let width = (bounds.upper[d] - bounds.lower[d]) / per as f64;
                bounds.lower[d] + (j as f64 + 0.5) * width
            })
            .collect();
        out.push(MdpState(coords));
    }
    Ok(out)
}

impl ValueTable {
    /// Values set to `r_p` on accepting states and `r_n` elsewhere.
    pub fn initial<E: Environment + ?Sized>(
        mdp: &ProductMdp<'_, E>,
        params: &RewardParams,
        centers: Vec<MdpState>,
        h: f64,
    ) -> Result<Self, FviError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(FviError::Config("smoothing parameter must be positive".into()));
        }
        if centers.is_empty() {
            return Err(FviError::Config("at least one center".into()));
        }
        let values = mdp
            .aut
            .states()
            .map(|q| {
                let v = if mdp.aut.is_accepting(q) {
                    params.r_p()
                } else {
                    params.r_n()
                };
                vec![v; centers.len()]
            })
            .collect();
        let mut vt = Self {
            centers,
            values,
            h,
            bounds: mdp.env.bounds().clone(),
            sink_value: params.r_n(),
            normalized: Vec::new(),
        };
        vt.normalize_centers();
        Ok(vt)
    }

    fn normalize_centers(&mut self) {
        self.normalized = self.centers.iter().map(|c| self.bounds.normalize(c)).collect();
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Normalized kernel weights of all centers for the point `s`. The
    /// nearest center's distance is subtracted first so the largest weight
    /// is 1 before normalization and nothing underflows to an all-zero row.
    pub fn weights(&self, s: &MdpState) -> Vec<f64> {
        let p = self.bounds.normalize(s);
        let dists: Vec<f64> = self
            .normalized
            .iter()
            .map(|c| c.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let mut w: Vec<f64> = dists.iter().map(|d| (-(d - dmin) / self.h).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    fn row_value(&self, q: StateId, w: &[f64]) -> f64 {
        match self.values.get(q.0) {
            Some(row) => row.iter().zip(w).map(|(v, w)| v * w).sum(),
            None => self.sink_value,
        }
    }

    /// Kernel-weighted average of `v^q` at `x.s`; the sink has a constant
    /// value.
    pub fn kernel_value(&self, x: &ProductState) -> f64 {
        if x.q.0 >= self.values.len() {
            return self.sink_value;
        }
        self.row_value(x.q, &self.weights(&x.s))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("value table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FviError> {
        let mut vt: Self = serde_json::from_str(text).map_err(|e| FviError::Snapshot(e.to_string()))?;
        if vt.values.iter().any(|r| r.len() != vt.centers.len()) || !(vt.h.is_finite() && vt.h > 0.0) {
            return Err(FviError::Snapshot("inconsistent shapes".into()));
        }
        vt.normalize_centers();
        Ok(vt)
    }

    /// Value field as CSV: automaton state, center coordinates, value.
    pub fn write_values_csv(&self, state_names: &[String], mut w: impl Write) -> std::io::Result<()> {
        let dim = self.bounds.dim();
        let coords: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "q,{},value", coords.join(","))?;
        for (q, row) in self.values.iter().enumerate() {
            for (c, v) in self.centers.iter().zip(row) {
                let xs: Vec<String> = c.0.iter().map(|x| x.to_string()).collect();
                writeln!(w, "{},{},{v}", state_names[q], xs.join(","))?;
            }
        }
        Ok(())
    }
}

/// One sampled successor: the environment point and every automaton state
/// the transition may reach. The agent picks among them, so a backup takes
/// the best.
#[derive(Debug, Clone, PartialEq)]
pub struct Successor {
    pub s: MdpState,
    pub options: Vec<StateId>,
}

/// `Z` successors per (state, center, action slot), drawn once before the
/// sweeps. Accepting states are not sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCache {
    /// `entries[q][i][slot]`; empty where nothing was sampled.
    entries: Vec<Vec<Vec<Vec<Successor>>>>,
    /// Number of environment transitions drawn.
    pub env_samples: usize,
}

impl SampleCache {
    pub fn draw<E: Environment + ?Sized>(
        mdp: &ProductMdp<'_, E>,
        centers: &[MdpState],
        z: usize,
        rng: &mut SimRng,
    ) -> Result<Self, FviError> {
        let slots = mdp.num_action_slots();
        let mut entries = Vec::with_capacity(mdp.aut.num_states());
        let mut env_samples = 0;
        for q in mdp.aut.states() {
            let mut per_center = vec![vec![Vec::new(); slots]; centers.len()];
            if !mdp.aut.is_accepting(q) {
                for (i, c) in centers.iter().enumerate() {
                    for a in mdp.actions_at(q) {
                        per_center[i][mdp.action_index(a)] = sample_successors(mdp, c, q, a, z, rng)?;
                        if matches!(a, ProductAction::Base(_)) {
                            env_samples += z;
                        }
                    }
                }
            }
            entries.push(per_center);
        }
        Ok(Self { entries, env_samples })
    }

    pub fn get(&self, q: StateId, center: usize, slot: usize) -> Option<&[Successor]> {
        self.entries
            .get(q.0)?
            .get(center)?
            .get(slot)
            .map(Vec::as_slice)
            .filter(|s| !s.is_empty())
    }

    /// Inserts successors by hand; used to build small caches in tests.
    pub fn from_entries(entries: Vec<Vec<Vec<Vec<Successor>>>>) -> Self {
        Self {
            entries,
            env_samples: 0,
        }
    }
}

fn sample_successors<E: Environment + ?Sized>(
    mdp: &ProductMdp<'_, E>,
    s: &MdpState,
    q: StateId,
    a: ProductAction,
    z: usize,
    rng: &mut SimRng,
) -> Result<Vec<Successor>, FviError> {
    (0..z)
        .map(|_| match a {
            ProductAction::Epsilon(to) => Ok(Successor {
                s: s.clone(),
                options: vec![to],
            }),
            ProductAction::Base(b) => {
                let next = mdp.env.step(s, b, rng).map_err(ProductError::from)?;
                let label = mdp.env.label(&next).map_err(ProductError::from)?;
                Ok(Successor {
                    options: mdp.aut.step(q, label),
                    s: next,
                })
            }
        })
        .collect()
}

fn successor_value(vt: &ValueTable, y: &Successor) -> f64 {
    let w = vt.weights(&y.s);
    y.options
        .iter()
        .map(|&q| vt.row_value(q, &w))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Mean kernel value over the cached successors of `(s_i, q_j)` under the
/// action in `slot`.
pub fn mc_backup(
    vt: &ValueTable,
    cache: &SampleCache,
    q: StateId,
    center: usize,
    slot: usize,
) -> Result<f64, FviError> {
    let ys = cache
        .get(q, center, slot)
        .ok_or(FviError::MissingSamples { q, center, slot })?;
    Ok(ys.iter().map(|y| successor_value(vt, y)).sum::<f64>() / ys.len() as f64)
}

/// A backup with kernel weights precomputed. Successors with a single
/// automaton option are averaged into one weight row per target state,
/// which makes a backup a handful of dot products.
struct CompiledBackup {
    /// `(target, mean weight row)`, rows pre-scaled by their share of `Z`.
    rows: Vec<(StateId, Vec<f64>)>,
    /// Share of successors in the sink.
    sink_share: f64,
    /// Nondeterministic successors: weight row and options, each worth `1/Z`.
    branching: Vec<(Vec<f64>, Vec<StateId>)>,
    z: f64,
}

impl CompiledBackup {
    fn new(vt: &ValueTable, ys: &[Successor]) -> Self {
        let z = ys.len() as f64;
        let mut rows: Vec<(StateId, Vec<f64>)> = Vec::new();
        let mut sink_share = 0.0;
        let mut branching = Vec::new();
        for y in ys {
            if y.options.len() == 1 && y.options[0].0 >= vt.values.len() {
                sink_share += 1.0 / z;
                continue;
            }
            let w = vt.weights(&y.s);
            if y.options.len() == 1 {
                let q = y.options[0];
                let row = match rows.iter_mut().find(|(p, _)| *p == q) {
                    Some((_, row)) => row,
                    None => {
                        rows.push((q, vec![0.0; w.len()]));
                        &mut rows.last_mut().expect("just pushed").1
                    }
                };
                row.iter_mut().zip(&w).for_each(|(r, w)| *r += w / z);
            } else {
                branching.push((w, y.options.clone()));
            }
        }
        Self {
            rows,
            sink_share,
            branching,
            z,
        }
    }

    fn eval(&self, vt: &ValueTable) -> f64 {
        let mut total = self.sink_share * vt.sink_value;
        for (q, row) in &self.rows {
            total += vt.row_value(*q, row);
        }
        for (w, options) in &self.branching {
            let best = options
                .iter()
                .map(|&q| vt.row_value(q, w))
                .fold(f64::NEG_INFINITY, f64::max);
            total += best / self.z;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FviConfig {
    /// Total number of centers; must be a perfect power of the dimension.
    pub k: usize,
    pub h: f64,
    /// Monte-Carlo samples per backup.
    pub z: usize,
    pub max_sweeps: usize,
    /// Early exit once a sweep changes no value by more than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FviConfig {
    fn default() -> Self {
        Self {
            k: 100,
            h: 0.18,
            z: 25,
            max_sweeps: 80,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FviReport {
    /// `k · Z · |A| · (|Q| − 1)` with `|A|` the environment actions.
    pub sample_complexity: usize,
    /// Environment transitions actually drawn.
    pub samples_drawn: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub last_change: f64,
}

/// `k · Z · |A| · (|Q| − 1)`.
pub fn sample_complexity_formula(k: usize, z: usize, actions: usize, states: usize) -> usize {
    k * z * actions * states.saturating_sub(1)
}

/// Runs the sweeps. Sub-value functions are updated in backward order;
/// accepting ones keep their initial value.
pub fn fvi_train<E: Environment + ?Sized>(
    mdp: &ProductMdp<'_, E>,
    params: &RewardParams,
    cfg: &FviConfig,
) -> Result<(ValueTable, FviReport), FviError> {
    if cfg.z == 0 {
        return Err(FviError::Config("at least one Monte-Carlo sample".into()));
    }
    let centers = grid_centers(mdp.env.bounds(), cfg.k)?;
    let mut vt = ValueTable::initial(mdp, params, centers, cfg.h)?;
    let mut rng = seeded(cfg.seed, streams::ENV);
    let cache = SampleCache::draw(mdp, &vt.centers, cfg.z, &mut rng)?;

    let order: Vec<StateId> = mdp
        .aut
        .backward_order()
        .into_iter()
        .filter(|q| !mdp.aut.is_accepting(*q))
        .collect();
    let compiled: Vec<Vec<Vec<(usize, CompiledBackup)>>> = (0..mdp.aut.num_states())
        .map(|q| {
            let q = StateId(q);
            if mdp.aut.is_accepting(q) {
                return Vec::new();
            }
            (0..vt.k())
                .map(|i| {
                    mdp.actions_at(q)
                        .into_iter()
                        .map(|a| {
                            let slot = mdp.action_index(a);
                            let ys = cache.get(q, i, slot).expect("sampled above");
                            (slot, CompiledBackup::new(&vt, ys))
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut report = FviReport {
        sample_complexity: sample_complexity_formula(cfg.k, cfg.z, mdp.env.actions().len(), mdp.aut.num_states()),
        samples_drawn: cache.env_samples,
        sweeps: 0,
        converged: false,
        last_change: 0.0,
    };
    for _ in 0..cfg.max_sweeps {
        let mut change: f64 = 0.0;
        for &q in &order {
            let fresh: Vec<f64> = compiled[q.0]
                .iter()
                .map(|per_action| {
                    per_action
                        .iter()
                        .map(|(_, b)| b.eval(&vt))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            for (old, new) in vt.values[q.0].iter_mut().zip(fresh) {
                change = change.max((new - *old).abs());
                *old = new;
            }
        }
        report.sweeps += 1;
        report.last_change = change;
        if change < cfg.tol {
            report.converged = true;
            break;
        }
    }
    Ok((vt, report))
}

/// Greedy policy over a fresh `zp`-sample estimate of the next-state value
/// of each action.
pub struct FviPolicy<'a, 'm, E: ?Sized> {
    pub table: ValueTable,
    pub mdp: &'m ProductMdp<'a, E>,
    pub zp: usize,
}

pub fn fvi_policy<'a, 'm, E: Environment + ?Sized>(
    table: ValueTable,
    mdp: &'m ProductMdp<'a, E>,
    zp: usize,
) -> FviPolicy<'a, 'm, E> {
    FviPolicy {
        table,
        mdp,
        zp: zp.max(1),
    }
}

impl<E: Environment + ?Sized> FviPolicy<'_, '_, E> {
    /// Monte-Carlo estimate of each valid action's next-state value.
    pub fn action_values(&self, x: &ProductState, rng: &mut SimRng) -> Vec<(ProductAction, f64)> {
        self.mdp
            .actions_at(x.q)
            .into_iter()
            .map(|a| {
                let ys = sample_successors(self.mdp, &x.s, x.q, a, self.zp, rng).expect("state inside bounds");
                let v = ys.iter().map(|y| successor_value(&self.table, y)).sum::<f64>() / ys.len() as f64;
                (a, v)
            })
            .collect()
    }
}

impl<E: Environment + ?Sized> Policy for FviPolicy<'_, '_, E> {
    fn act(&self, x: &ProductState, rng: &mut SimRng) -> ProductAction {
        let av = self.action_values(x, rng);
        let vals: Vec<f64> = av.iter().map(|p| p.1).collect();
        av[argmax_first(&vals)].0
    }

    fn value(&self, x: &ProductState) -> f64 {
        self.table.kernel_value(x)
    }
}
