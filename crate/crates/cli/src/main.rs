//! Command-line front end: train, evaluate, benchmark, export paths and
//! check asset files.
//!
//! Exit codes: 0 on success, 2 for configuration or I/O problems, 3 when
//! training or evaluation fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltl_synth::automata::parse_ldba;
use ltl_synth::bench::{
    config_base, evaluate, run_benchmark, train, BenchError, RunConfig, Scenario, TrainedPolicy, COPRATES_LDBA,
    MELAS_LDBA,
};
use ltl_synth::environment::{LabelledMap, MdpState};
use ltl_synth::eval::export_path;
use ltl_synth::rng::derive_seed;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "ltl-synth",
    version,
    about = "Temporal-logic policy synthesis for continuous-state rover models"
)]
struct Cli {
    /// Overrides the seed of every configuration.
    #[arg(long, global = true, env = "LTL_SYNTH_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trains one policy and writes its snapshot.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` override in TOML syntax, e.g. `vq.delta=0.8`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Estimates success rate and utility of a saved policy.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Runs every `[[run]]` of a benchmark file and prints the table.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Writes the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Writes the text table to a file instead of stdout.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Applied to every run.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Rolls a saved policy out once and writes the path as CSV.
    ExportPath {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parses map and automaton files; without arguments checks the bundled ones.
    ValidateAssets {
        #[arg(long = "map")]
        maps: Vec<PathBuf>,
        #[arg(long = "automaton")]
        automata: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                BenchError::Config(_) | BenchError::Io(_) => 2,
                BenchError::Train(_) => 3,
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { config, out, overrides } => {
            let (cfg, base) = load_run(&config, &overrides, seed)?;
            let scenario = Scenario::load(&cfg, &base)?;
            let outcome = train(&cfg, &scenario, derive_seed(cfg.seed, 0))?;
            outcome.policy.save(&out, &scenario.aut)?;
            let summary = json!({
                "name": cfg.display_name(),
                "algorithm": cfg.algorithm,
                "samples": outcome.samples,
                "samples_drawn": outcome.samples_drawn,
                "iterations": outcome.iterations,
                "iteration_unit": cfg.algorithm.iteration_unit(),
                "training_seconds": outcome.seconds,
                "policy": out,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
        }
        Command::Evaluate {
            config,
            policy,
            trials,
            overrides,
        } => {
            let (mut cfg, base) = load_run(&config, &overrides, seed)?;
            if let Some(t) = trials {
                if t == 0 {
                    return Err(BenchError::Config("--trials must be at least 1".into()));
                }
                cfg.eval.trials = t;
            }
            let scenario = Scenario::load(&cfg, &base)?;
            let trained = TrainedPolicy::load(&policy)?;
            let result = evaluate(&cfg, &scenario, &trained, cfg.seed)?;
            println!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
        }
        Command::Bench {
            config,
            out,
            table,
            overrides,
        } => {
            let text = read(&config)?;
            let mut doc: toml::Table = toml::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?;
            if let Some(toml::Value::Array(runs)) = doc.get_mut("run") {
                for run in runs.iter_mut() {
                    if let toml::Value::Table(t) = run {
                        apply_overrides(t, &overrides)?;
                    }
                }
            }
            let file: ltl_synth::bench::BenchFile = doc
                .try_into()
                .map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
            let mut runs = file.run;
            if let Some(s) = seed {
                runs.iter_mut().for_each(|r| r.seed = s);
            }
            let base = config_base(&config);
            for r in &runs {
                for w in r.validate(&base)? {
                    eprintln!("warning: {}: {w}", r.display_name());
                }
            }
            let report = run_benchmark(&runs, &base);
            if let Some(path) = out {
                write(&path, &report.to_json())?;
            }
            match table {
                Some(path) => write(&path, &report.text_table())?,
                None => print!("{}", report.text_table()),
            }
        }
        Command::ExportPath {
            config,
            policy,
            out,
            overrides,
        } => {
            let (cfg, base) = load_run(&config, &overrides, seed)?;
            let scenario = Scenario::load(&cfg, &base)?;
            let trained = TrainedPolicy::load(&policy)?;
            let mdp = scenario.mdp();
            let bound = trained.bind(&mdp);
            let mut buf = Vec::new();
            let path = export_path(
                &mdp,
                bound.as_ref(),
                &cfg.reward_params()?,
                &scenario.rollout_config(&cfg),
                cfg.seed,
                &mut buf,
            )
            .map_err(|e| BenchError::Train(e.to_string()))?;
            fs::write(&out, buf).map_err(|e| BenchError::Io(format!("{}: {e}", out.display())))?;
            println!(
                "{} steps, {}",
                path.actions.len(),
                if path.success {
                    "accepting frontier exhausted"
                } else {
                    "no success"
                }
            );
        }
        Command::ValidateAssets { maps, automata } => validate_assets(&maps, &automata)?,
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, BenchError> {
    fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

/// Loads a single-run configuration with overrides applied, validates it and
/// prints any warnings.
fn load_run(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<(RunConfig, PathBuf), BenchError> {
    let mut doc: toml::Table = toml::from_str(&read(path)?).map_err(|e| BenchError::Config(e.to_string()))?;
    apply_overrides(&mut doc, overrides)?;
    let mut cfg = RunConfig::parse(&toml::to_string(&doc).map_err(|e| BenchError::Config(e.to_string()))?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = config_base(path);
    for w in cfg.validate(&base)? {
        eprintln!("warning: {w}");
    }
    Ok((cfg, base))
}

/// Merges `key=value` lines into `doc`. Values are TOML; a value that does
/// not parse is taken as a bare string.
fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), BenchError> {
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| BenchError::Config(format!("override `{o}` is not KEY=VALUE")))?;
        let (key, value) = (key.trim(), value.trim());
        let patch: toml::Table = toml::from_str(&format!("{key} = {value}"))
            .or_else(|_| toml::from_str(&format!("{key} = {}", toml::Value::String(value.to_string()))))
            .map_err(|e| BenchError::Config(format!("override `{o}`: {e}")))?;
        merge(doc, patch);
    }
    Ok(())
}

fn merge(doc: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (doc.get_mut(&k), v) {
            (Some(toml::Value::Table(old)), toml::Value::Table(new)) => merge(old, new),
            (_, v) => {
                doc.insert(k, v);
            }
        }
    }
}

fn validate_assets(maps: &[PathBuf], automata: &[PathBuf]) -> Result<(), BenchError> {
    let mut map_docs: Vec<(String, LabelledMap)> = Vec::new();
    let mut aut_docs: Vec<(String, String)> = Vec::new();
    if maps.is_empty() && automata.is_empty() {
        map_docs.push(("builtin:melas".into(), LabelledMap::builtin_melas()));
        map_docs.push(("builtin:coprates".into(), LabelledMap::builtin_coprates()));
        aut_docs.push(("builtin:melas".into(), MELAS_LDBA.into()));
        aut_docs.push(("builtin:coprates".into(), COPRATES_LDBA.into()));
    }
    for m in maps {
        let map = LabelledMap::parse(&read(m)?).map_err(|e| BenchError::Config(format!("{}: {e}", m.display())))?;
        map_docs.push((m.display().to_string(), map));
    }
    for a in automata {
        aut_docs.push((a.display().to_string(), read(a)?));
    }
    for (name, map) in &map_docs {
        if let Some(l) = map.landing {
            let label = map
                .label_at(&MdpState(l.to_vec()))
                .map_err(|e| BenchError::Config(format!("{name}: {e}")))?;
            if !label.is_empty() {
                return Err(BenchError::Config(format!("{name}: landing site is not neutral")));
            }
        }
        println!("map {name}: ok ({} regions)", map.regions.len());
    }
    for (name, text) in &aut_docs {
        let aut = parse_ldba(text).map_err(|e| BenchError::Config(format!("{name}: {e}")))?;
        println!("automaton {name}: ok ({} states)", aut.num_states());
    }
    Ok(())
}
