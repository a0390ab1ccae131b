//! Continuous-state MDPs with a labelling function.

mod grid;
mod map;
mod rover;

pub use grid::{FiniteEnv, GridWorld1D};
pub use map::{LabelledMap, Region, Shape};
pub use rover::{RoverDynamics, RoverEnv};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::LabelSet;
use crate::rng::SimRng;

/// A point of the state space, in map units (km for the rover maps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MdpState(pub Vec<f64>);

impl MdpState {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &MdpState) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

/// Ordered, nonempty list of uniquely named actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    names: Vec<String>,
}

impl ActionSet {
    pub fn new<I, S>(names: I) -> Result<Self, EnvError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(EnvError::InvalidActions("action set is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(EnvError::InvalidActions(format!("duplicate action `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, a: ActionId) -> &str {
        &self.names[a.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ActionId> {
        self.names.iter().position(|n| n == name).map(ActionId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ActionId> {
        (0..self.names.len()).map(ActionId)
    }
}

/// Axis-aligned bounding box of the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, s: &MdpState) -> bool {
        s.dim() == self.dim()
            && s.0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| x.is_finite() && *x >= *lo && *x <= *hi)
    }

    pub fn clamp(&self, s: &mut MdpState) {
        for (x, (lo, hi)) in s.0.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    /// Maps a point into the unit cube.
    pub fn normalize(&self, s: &MdpState) -> Vec<f64> {
        let mut out = Vec::with_capacity(s.dim());
        self.normalize_into(s, &mut out);
        out
    }

    pub fn normalize_into(&self, s: &MdpState, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            s.0.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(x, (lo, hi))| (x - lo) / (hi - lo)),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("state {0:?} lies outside the map")]
    OutOfBounds(Vec<f64>),
    #[error("unknown action index {0}")]
    UnknownAction(usize),
    #[error("invalid action set: {0}")]
    InvalidActions(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid dynamics: {0}")]
    InvalidDynamics(String),
    #[error("no neutral state found after {0} draws")]
    NoNeutralArea(usize),
}

/// A continuous-state MDP: transition sampler plus labelling function.
pub trait Environment: Sync {
    fn actions(&self) -> &ActionSet;

    fn bounds(&self) -> &Bounds;

    fn label(&self, s: &MdpState) -> Result<&LabelSet, EnvError>;

    fn step(&self, s: &MdpState, a: ActionId, rng: &mut SimRng) -> Result<MdpState, EnvError>;

    /// Typical displacement of one move; scales default horizons.
    fn nominal_step(&self) -> f64;

    fn dim(&self) -> usize {
        self.bounds().dim()
    }

    /// A point drawn uniformly from the state space.
    fn sample_uniform(&self, rng: &mut SimRng) -> MdpState {
        let b = self.bounds();
        MdpState(
            b.lower
                .iter()
                .zip(&b.upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
                .collect(),
        )
    }
}

/// Where rollouts and exploration episodes begin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Fixed(MdpState),
    UniformNeutral,
}

const MAX_REJECTION_DRAWS: usize = 1_000_000;

/// Draws a starting state. Neutral means an empty label set.
pub fn sample_initial<E: Environment + ?Sized>(
    env: &E,
    mode: &InitialState,
    rng: &mut SimRng,
) -> Result<MdpState, EnvError> {
    match mode {
        InitialState::Fixed(s) => {
            if !env.bounds().contains(s) {
                return Err(EnvError::OutOfBounds(s.0.clone()));
            }
            Ok(s.clone())
        }
        InitialState::UniformNeutral => {
            for _ in 0..MAX_REJECTION_DRAWS {
                let s = env.sample_uniform(rng);
                if env.label(&s)?.is_empty() {
                    return Ok(s);
                }
            }
            Err(EnvError::NoNeutralArea(MAX_REJECTION_DRAWS))
        }
    }
}
