//! Run configuration, training dispatch, policy snapshots, and the
//! benchmark report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::{parse_ldba, Ldba};
use crate::environment::{Environment, InitialState, LabelledMap, MdpState, RoverDynamics, RoverEnv};
use crate::eval::{evaluate_policy, EvalResult, RolloutConfig};
use crate::fvi::{fvi_policy, fvi_train, FviConfig, ValueTable};
use crate::lcnfq::{lcnfq_train, HybridQ, TrainConfig};
use crate::policy::Policy;
use crate::product::{gather_experience, ExploreConfig, ProductMdp, RewardParams};
use crate::rng::derive_seed;
use crate::vq::{vq_train, Quantizer, VqConfig};

pub const MELAS_LDBA: &str = include_str!("../assets/melas.ldba");
pub const COPRATES_LDBA: &str = include_str!("../assets/coprates.ldba");

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lcnfq,
    Vq,
    Fvi,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Lcnfq => "LCNFQ",
            Algorithm::Vq => "VQ",
            Algorithm::Fvi => "FVI",
        }
    }

    /// What the iteration column counts for this algorithm.
    pub fn iteration_unit(self) -> &'static str {
        match self {
            Algorithm::Lcnfq => "cycles",
            Algorithm::Vq => "episodes",
            Algorithm::Fvi => "sweeps",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcnfqSection {
    pub budget: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub max_cycles: usize,
    pub patience: usize,
    /// Rollouts per cycle used to pick the best networks.
    pub eval_trials: usize,
}

impl Default for LcnfqSection {
    fn default() -> Self {
        Self {
            budget: 7000,
            hidden: 32,
            epochs: 300,
            max_cycles: 40,
            patience: 5,
            eval_trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqSection {
    pub delta: f64,
    pub max_episodes: usize,
    pub mu: f64,
    pub converge_after: Option<usize>,
}

impl Default for VqSection {
    fn default() -> Self {
        Self {
            delta: 1.2,
            max_episodes: 3000,
            mu: 0.5,
            converge_after: Some(40),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FviSection {
    pub k: usize,
    pub h: f64,
    pub z: usize,
    pub max_sweeps: usize,
    /// Samples per decision of the extracted policy; `None` means `z`.
    pub zp: Option<usize>,
}

impl Default for FviSection {
    fn default() -> Self {
        let d = FviConfig::default();
        Self {
            k: d.k,
            h: d.h,
            z: d.z,
            max_sweeps: d.max_sweeps,
            zp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    /// `None` means ten map diagonals of nominal steps.
    pub step_cap: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            trials: 100,
            step_cap: None,
        }
    }
}

/// One training run. `map` and `automaton` are file paths relative to the
/// configuration file, or `builtin:melas` / `builtin:coprates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub map: String,
    pub automaton: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Start point; `None` means the map's landing site, or a uniform
    /// neutral point when the map has none.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Rover step length `D` in km.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Rover jitter radius `d` in km.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Positive reward `M`.
    #[serde(default = "default_positive")]
    pub positive: f64,
    /// Noise amplitude `m`.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Whether the noise term is on. Defaults to on for LCNFQ and off
    /// otherwise.
    #[serde(default)]
    pub noisy: Option<bool>,
    /// Episode length for exploration and VQ; `None` means two map
    /// diagonals of nominal steps.
    #[serde(default)]
    pub th: Option<usize>,
    #[serde(default)]
    pub lcnfq: LcnfqSection,
    #[serde(default)]
    pub vq: VqSection,
    #[serde(default)]
    pub fvi: FviSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn one() -> usize {
    1
}
fn default_gamma() -> f64 {
    0.9
}
fn default_step() -> f64 {
    2.0
}
fn default_jitter() -> f64 {
    0.02
}
fn default_positive() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.05
}

/// A file of `[[run]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    pub run: Vec<RunConfig>,
}

impl BenchFile {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Noise switch in effect after defaults.
    pub fn effective_noisy(&self) -> bool {
        self.noisy.unwrap_or(self.algorithm == Algorithm::Lcnfq)
    }

    /// Checks the configuration and returns warnings for settings that are
    /// allowed but unusual.
    pub fn validate(&self, base: &Path) -> Result<Vec<String>, BenchError> {
        let mut warnings = Vec::new();
        for (what, src) in [("map", &self.map), ("automaton", &self.automaton)] {
            if let Some(name) = src.strip_prefix("builtin:") {
                if !matches!(name, "melas" | "coprates") {
                    return Err(BenchError::Config(format!("unknown builtin {what} `{name}`")));
                }
            } else if !base.join(src).is_file() {
                return Err(BenchError::Config(format!(
                    "{what} file {} not found",
                    base.join(src).display()
                )));
            }
        }
        if self.repetitions == 0 {
            return Err(BenchError::Config("repetitions must be at least 1".into()));
        }
        if self.eval.trials == 0 {
            return Err(BenchError::Config("evaluation needs at least one trial".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(BenchError::Config("discount must lie in [0, 1)".into()));
        }
        if let Some(noisy) = self.noisy {
            let expected = self.algorithm == Algorithm::Lcnfq;
            if noisy != expected {
                warnings.push(format!(
                    "{}: reward noise is {} although {} runs normally use it {}",
                    self.display_name(),
                    if noisy { "on" } else { "off" },
                    self.algorithm.label(),
                    if expected { "on" } else { "off" }
                ));
            }
        }
        Ok(warnings)
    }

    pub fn display_name(&self) -> String {
        if self.name.is_empty() {
            format!("{} on {}", self.algorithm.label(), self.map)
        } else {
            self.name.clone()
        }
    }

    pub fn reward_params(&self) -> Result<RewardParams, BenchError> {
        RewardParams::new(self.positive, self.noise, self.effective_noisy())
            .map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// The environment and automaton a run refers to.
pub struct Scenario {
    pub env: RoverEnv,
    pub aut: Ldba,
    pub initial: InitialState,
}

impl Scenario {
    pub fn load(cfg: &RunConfig, base: &Path) -> Result<Self, BenchError> {
        let map = match cfg.map.strip_prefix("builtin:") {
            Some("melas") => LabelledMap::builtin_melas(),
            Some("coprates") => LabelledMap::builtin_coprates(),
            Some(other) => return Err(BenchError::Config(format!("unknown builtin map `{other}`"))),
            None => LabelledMap::parse(&read(&base.join(&cfg.map))?).map_err(|e| BenchError::Config(e.to_string()))?,
        };
        let aut_text = match cfg.automaton.strip_prefix("builtin:") {
            Some("melas") => MELAS_LDBA.to_string(),
            Some("coprates") => COPRATES_LDBA.to_string(),
            Some(other) => return Err(BenchError::Config(format!("unknown builtin automaton `{other}`"))),
            None => read(&base.join(&cfg.automaton))?,
        };
        let aut = parse_ldba(&aut_text).map_err(|e| BenchError::Config(e.to_string()))?;
        let initial = match (&cfg.start, map.landing) {
            (Some(s), _) => InitialState::Fixed(MdpState(s.clone())),
            (None, Some(l)) => InitialState::Fixed(MdpState(l.to_vec())),
            (None, None) => InitialState::UniformNeutral,
        };
        let dynamics = RoverDynamics::new(cfg.step, cfg.jitter).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(Self {
            env: RoverEnv::new(map, dynamics),
            aut,
            initial,
        })
    }

    pub fn mdp(&self) -> ProductMdp<'_, RoverEnv> {
        ProductMdp::new(&self.env, &self.aut)
    }

    pub fn rollout_config(&self, cfg: &RunConfig) -> RolloutConfig {
        RolloutConfig {
            initial: self.initial.clone(),
            step_cap: cfg.eval.step_cap,
            gamma: cfg.gamma,
        }
    }
}

fn read(path: &Path) -> Result<String, BenchError> {
    fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

/// A trained policy of any of the three kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedPolicy {
    Lcnfq(HybridQ),
    Vq(Quantizer),
    Fvi { table: ValueTable, zp: usize },
}

impl TrainedPolicy {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            TrainedPolicy::Lcnfq(_) => Algorithm::Lcnfq,
            TrainedPolicy::Vq(_) => Algorithm::Vq,
            TrainedPolicy::Fvi { .. } => Algorithm::Fvi,
        }
    }

    /// Borrows the policy against `mdp`, which FVI needs for sampling.
    pub fn bind<'p, E: Environment + ?Sized>(&'p self, mdp: &'p ProductMdp<'p, E>) -> Box<dyn Policy + 'p> {
        match self {
            TrainedPolicy::Lcnfq(hq) => Box::new(hq),
            TrainedPolicy::Vq(qz) => Box::new(qz),
            TrainedPolicy::Fvi { table, zp } => Box::new(fvi_policy(table.clone(), mdp, *zp)),
        }
    }

    /// Writes the snapshot into `dir`: `policy.json` names the kind, the
    /// payload sits next to it.
    pub fn save(&self, dir: &Path, aut: &Ldba) -> Result<(), BenchError> {
        let io = |e: std::io::Error| BenchError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let header = SnapshotHeader {
            algorithm: self.algorithm(),
            zp: match self {
                TrainedPolicy::Fvi { zp, .. } => Some(*zp),
                _ => None,
            },
        };
        fs::write(
            dir.join("policy.json"),
            serde_json::to_string_pretty(&header).expect("header serializes"),
        )
        .map_err(io)?;
        match self {
            TrainedPolicy::Lcnfq(hq) => {
                let names: Vec<String> = aut.states().map(|q| aut.name(q).to_string()).collect();
                hq.save_dir(&dir.join("lcnfq"), &names)
                    .map_err(|e| BenchError::Io(e.to_string()))
            }
            TrainedPolicy::Vq(qz) => fs::write(dir.join("quantizer.json"), qz.to_json()).map_err(io),
            TrainedPolicy::Fvi { table, .. } => fs::write(dir.join("values.json"), table.to_json()).map_err(io),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let snap = |e: String| BenchError::Io(format!("{}: {e}", dir.display()));
        let header: SnapshotHeader =
            serde_json::from_str(&fs::read_to_string(dir.join("policy.json")).map_err(|e| snap(e.to_string()))?)
                .map_err(|e| snap(e.to_string()))?;
        Ok(match header.algorithm {
            Algorithm::Lcnfq => {
                TrainedPolicy::Lcnfq(HybridQ::load_dir(&dir.join("lcnfq")).map_err(|e| snap(e.to_string()))?)
            }
            Algorithm::Vq => TrainedPolicy::Vq(
                Quantizer::from_json(&fs::read_to_string(dir.join("quantizer.json")).map_err(|e| snap(e.to_string()))?)
                    .map_err(|e| snap(e.to_string()))?,
            ),
            Algorithm::Fvi => TrainedPolicy::Fvi {
                table: ValueTable::from_json(
                    &fs::read_to_string(dir.join("values.json")).map_err(|e| snap(e.to_string()))?,
                )
                .map_err(|e| snap(e.to_string()))?,
                zp: header.zp.unwrap_or(FviConfig::default().z),
            },
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    algorithm: Algorithm,
    zp: Option<usize>,
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: TrainedPolicy,
    /// Environment transitions consumed (for FVI: the formula value).
    pub samples: usize,
    /// Environment transitions actually drawn.
    pub samples_drawn: usize,
    pub iterations: usize,
    pub seconds: f64,
}

/// Trains once with `seed` on a single worker thread, timing the whole run
/// including experience collection.
pub fn train(cfg: &RunConfig, scenario: &Scenario, seed: u64) -> Result<TrainOutcome, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| BenchError::Train(e.to_string()))?;
    pool.install(|| train_inner(cfg, scenario, seed))
}

fn train_inner(cfg: &RunConfig, scenario: &Scenario, seed: u64) -> Result<TrainOutcome, BenchError> {
    let mdp = scenario.mdp();
    let params = cfg.reward_params()?;
    let fail = |e: String| BenchError::Train(e);
    let start = Instant::now();
    let (policy, samples, drawn, iterations) = match cfg.algorithm {
        Algorithm::Lcnfq => {
            let explore = ExploreConfig {
                initial: scenario.initial.clone(),
                th: cfg.th,
                budget: cfg.lcnfq.budget,
                seed,
            };
            let exp = gather_experience(&mdp, &params, &explore).map_err(|e| fail(e.to_string()))?;
            let mut tc = TrainConfig::new(scenario.initial.clone());
            tc.gamma = cfg.gamma;
            tc.hidden = cfg.lcnfq.hidden;
            tc.epochs = cfg.lcnfq.epochs;
            tc.max_cycles = cfg.lcnfq.max_cycles;
            tc.patience = cfg.lcnfq.patience;
            tc.eval_trials = cfg.lcnfq.eval_trials;
            tc.seed = seed;
            tc.rollout = scenario.rollout_config(cfg);
            let (hq, report) = lcnfq_train(&mdp, &params, &exp, &tc).map_err(|e| fail(e.to_string()))?;
            (
                TrainedPolicy::Lcnfq(hq),
                report.samples,
                report.samples,
                report.cycles.len(),
            )
        }
        Algorithm::Vq => {
            let mut vc = VqConfig::new(scenario.initial.clone(), cfg.vq.delta);
            vc.max_episodes = cfg.vq.max_episodes;
            vc.step_cap = cfg.th;
            vc.mu = cfg.vq.mu;
            vc.gamma = cfg.gamma;
            vc.converge_after = cfg.vq.converge_after;
            vc.seed = seed;
            let (qz, report) = vq_train(&mdp, &params, &vc).map_err(|e| fail(e.to_string()))?;
            (TrainedPolicy::Vq(qz), report.samples, report.samples, report.episodes)
        }
        Algorithm::Fvi => {
            let fc = FviConfig {
                k: cfg.fvi.k,
                h: cfg.fvi.h,
                z: cfg.fvi.z,
                max_sweeps: cfg.fvi.max_sweeps,
                tol: FviConfig::default().tol,
                seed,
            };
            let (table, report) = fvi_train(&mdp, &params, &fc).map_err(|e| fail(e.to_string()))?;
            let zp = cfg.fvi.zp.unwrap_or(cfg.fvi.z);
            (
                TrainedPolicy::Fvi { table, zp },
                report.sample_complexity,
                report.samples_drawn,
                report.sweeps,
            )
        }
    };
    Ok(TrainOutcome {
        policy,
        samples,
        samples_drawn: drawn,
        iterations,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Evaluates a trained policy with the run's evaluation settings.
pub fn evaluate(
    cfg: &RunConfig,
    scenario: &Scenario,
    policy: &TrainedPolicy,
    seed: u64,
) -> Result<EvalResult, BenchError> {
    let mdp = scenario.mdp();
    let bound = policy.bind(&mdp);
    evaluate_policy(
        &mdp,
        bound.as_ref(),
        &cfg.reward_params()?,
        &scenario.rollout_config(cfg),
        cfg.eval.trials,
        seed,
    )
    .map_err(|e| BenchError::Train(e.to_string()))
}

/// One table row. Fields other than the success rate are absent when no
/// repetition produced a successful policy, or when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub map: String,
    pub algorithm: Algorithm,
    pub repetitions: usize,
    pub sample_complexity: Option<usize>,
    /// Mean discounted reward from the start state.
    pub utility: Option<f64>,
    pub success_rate: Option<f64>,
    /// Mean over repetitions.
    pub training_seconds: Option<f64>,
    pub iterations: Option<usize>,
    pub iteration_unit: String,
    pub error: Option<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub notes: Vec<String>,
    pub rows: Vec<BenchRow>,
}

pub const ITERATION_NOTE: &str =
    "Iteration counts use each algorithm's own unit: LCNFQ training cycles, VQ episodes, FVI sweeps.";

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Io(e.to_string()))
    }

    /// Fixed-width table, one line per row, absent fields shown as `-`.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(
            out,
            "{:<24} {:<10} {:>10} {:>10} {:>8} {:>10} {:>12}",
            "run", "algorithm", "samples", "utility", "success", "time (s)", "iterations"
        );
        let dash = || "-".to_string();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:<10} {:>10} {:>10} {:>8} {:>10} {:>12}",
                r.name,
                r.algorithm.label(),
                r.sample_complexity.map_or_else(dash, |v| v.to_string()),
                r.utility.map_or_else(dash, |v| format!("{v:.4}")),
                r.success_rate.map_or_else(dash, |v| format!("{:.0}%", v * 100.0)),
                r.training_seconds.map_or_else(dash, |v| format!("{v:.3}")),
                r.iterations.map_or_else(dash, |v| format!("{v} {}", r.iteration_unit)),
            );
            if let Some(e) = &r.error {
                let _ = writeln!(out, "  error: {e}");
            }
            if let Some(n) = &r.note {
                let _ = writeln!(out, "  note: {n}");
            }
        }
        out
    }
}

/// Trains and evaluates every configuration `repetitions` times. A failing
/// run is recorded in its row and does not stop the others.
pub fn run_benchmark(configs: &[RunConfig], base: &Path) -> BenchReport {
    let mut report = BenchReport {
        notes: vec![ITERATION_NOTE.to_string()],
        rows: Vec::new(),
    };
    for cfg in configs {
        let mut row = BenchRow {
            name: cfg.display_name(),
            map: cfg.map.clone(),
            algorithm: cfg.algorithm,
            repetitions: cfg.repetitions,
            sample_complexity: None,
            utility: None,
            success_rate: None,
            training_seconds: None,
            iterations: None,
            iteration_unit: cfg.algorithm.iteration_unit().to_string(),
            error: None,
            note: None,
        };
        match bench_one(cfg, base) {
            Ok(stats) => {
                row.success_rate = Some(stats.success);
                if stats.success > 0.0 {
                    row.sample_complexity = Some(stats.samples);
                    row.utility = Some(stats.utility);
                    row.training_seconds = Some(stats.seconds);
                    row.iterations = Some(stats.iterations);
                } else {
                    row.utility = Some(0.0);
                }
                if cfg.algorithm == Algorithm::Fvi {
                    row.note = Some(fvi_note(cfg, &stats));
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        report.rows.push(row);
    }
    if report
        .rows
        .iter()
        .any(|r| r.algorithm == Algorithm::Fvi && r.map == "builtin:melas")
    {
        report.notes.push(
            "Melas FVI: k·Z·|A|·(|Q|−1) = 100·25·5·3 = 37500 samples; the figure usually quoted for this scene is 40000. \
             The formula value is reported and the gap is left unexplained."
                .to_string(),
        );
    }
    report
}

struct RunStats {
    samples: usize,
    drawn: usize,
    utility: f64,
    success: f64,
    seconds: f64,
    iterations: usize,
}

fn bench_one(cfg: &RunConfig, base: &Path) -> Result<RunStats, BenchError> {
    cfg.validate(base)?;
    let scenario = Scenario::load(cfg, base)?;
    let reps = cfg.repetitions as f64;
    let mut acc = RunStats {
        samples: 0,
        drawn: 0,
        utility: 0.0,
        success: 0.0,
        seconds: 0.0,
        iterations: 0,
    };
    let mut samples = 0.0;
    let mut iterations = 0.0;
    for rep in 0..cfg.repetitions {
        let seed = derive_seed(cfg.seed, rep as u64);
        let out = train(cfg, &scenario, seed)?;
        let eval = evaluate(cfg, &scenario, &out.policy, derive_seed(seed, u64::MAX))?;
        samples += out.samples as f64 / reps;
        iterations += out.iterations as f64 / reps;
        acc.drawn = out.samples_drawn;
        acc.utility += eval.discounted_reward / reps;
        acc.success += eval.success_rate / reps;
        acc.seconds += out.seconds / reps;
    }
    acc.samples = samples.round() as usize;
    acc.iterations = iterations.round() as usize;
    Ok(acc)
}

fn fvi_note(cfg: &RunConfig, stats: &RunStats) -> String {
    format!(
        "samples = k·Z·|A|·(|Q|−1) with k={}, Z={}; {} transitions drawn",
        cfg.fvi.k, cfg.fvi.z, stats.drawn
    )
}

/// Resolves the directory paths in a configuration are relative to.
pub fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn melas_fvi() -> RunConfig {
        RunConfig::parse(
            r#"
            name = "fvi-melas"
            map = "builtin:melas"
            automaton = "builtin:melas"
            algorithm = "fvi"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_follow_the_parameter_list() {
        let c = melas_fvi();
        assert_eq!(
            (c.gamma, c.step, c.jitter, c.positive, c.noise),
            (0.9, 2.0, 0.02, 1.0, 0.05)
        );
        assert_eq!((c.fvi.k, c.fvi.h, c.fvi.z), (100, 0.18, 25));
        assert!(!c.effective_noisy());
        let mut l = c.clone();
        l.algorithm = Algorithm::Lcnfq;
        assert!(l.effective_noisy());
    }

    #[test]
    fn noise_override_warns() {
        let mut c = melas_fvi();
        assert!(c.validate(Path::new(".")).unwrap().is_empty());
        c.noisy = Some(true);
        let w = c.validate(Path::new(".")).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("noise is on"));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = melas_fvi();
        c.map = "nowhere.map".into();
        assert!(matches!(
            c.validate(Path::new("/nonexistent")),
            Err(BenchError::Config(_))
        ));
        assert!(RunConfig::parse("map = 1").is_err());
        assert!(RunConfig::parse("map = \"a\"\nautomaton = \"b\"\nalgorithm = \"sarsa\"").is_err());
        assert!(RunConfig::parse("map = \"a\"\nautomaton = \"b\"\nalgorithm = \"vq\"\nbogus = 3").is_err());
    }

    #[test]
    fn failures_stay_in_their_row() {
        let mut broken = melas_fvi();
        broken.map = "missing.map".into();
        let report = run_benchmark(&[broken], Path::new("/nonexistent"));
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].error.as_deref().unwrap().contains("not found"));
        assert!(report.rows[0].success_rate.is_none());
        assert!(report.text_table().contains("error:"));
    }

    #[test]
    fn report_round_trips_and_documents_units() {
        let mut c = melas_fvi();
        c.fvi.max_sweeps = 5;
        c.eval.trials = 3;
        c.eval.step_cap = Some(50);
        let report = run_benchmark(&[c], Path::new("."));
        assert_eq!(report.notes[0], ITERATION_NOTE);
        assert!(report.notes.iter().any(|n| n.contains("37500") && n.contains("40000")));
        let row = &report.rows[0];
        assert!(row.error.is_none(), "{:?}", row.error);
        assert!((0.0..=1.0).contains(&row.success_rate.unwrap()));
        assert_eq!(BenchReport::from_json(&report.to_json()).unwrap(), report);
        assert!(report.text_table().contains("fvi-melas"));
    }

    #[test]
    fn snapshots_round_trip() {
        let mut c = melas_fvi();
        c.fvi.max_sweeps = 2;
        let scenario = Scenario::load(&c, Path::new(".")).unwrap();
        let out = train(&c, &scenario, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.policy.save(dir.path(), &scenario.aut).unwrap();
        assert_eq!(TrainedPolicy::load(dir.path()).unwrap(), out.policy);
        assert_eq!(out.samples, 37500);
    }
}
