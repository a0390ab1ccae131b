use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionId, ActionSet, Bounds, EnvError, Environment, LabelledMap, MdpState};
use crate::automata::LabelSet;
use crate::rng::SimRng;

/// Step-length and jitter parameters of the rover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoverDynamics {
    /// Upper end of the directional step length, drawn from `(0, max_step]`.
    pub max_step: f64,
    /// Radius of the disc a `stay` action lands in.
    pub jitter: f64,
}

impl RoverDynamics {
    pub fn new(max_step: f64, jitter: f64) -> Result<Self, EnvError> {
        if !(max_step.is_finite() && max_step > 0.0) {
            return Err(EnvError::InvalidDynamics("max step must be positive".into()));
        }
        if !(jitter > 0.0 && jitter < max_step / 10.0) {
            return Err(EnvError::InvalidDynamics(format!(
                "jitter radius must lie in (0, {})",
                max_step / 10.0
            )));
        }
        Ok(Self { max_step, jitter })
    }
}

const LEFT: usize = 0;
const RIGHT: usize = 1;
const UP: usize = 2;
const DOWN: usize = 3;
const STAY: usize = 4;

/// Planar rover on a labelled map with actions left, right, up, down, stay.
#[derive(Debug, Clone)]
pub struct RoverEnv {
    map: LabelledMap,
    dynamics: RoverDynamics,
    actions: ActionSet,
}

impl RoverEnv {
    pub fn new(map: LabelledMap, dynamics: RoverDynamics) -> Self {
        Self {
            map,
            dynamics,
            actions: ActionSet::new(["left", "right", "up", "down", "stay"]).expect("static"),
        }
    }

    pub fn map(&self) -> &LabelledMap {
        &self.map
    }

    pub fn dynamics(&self) -> RoverDynamics {
        self.dynamics
    }

    /// Step length in `(0, max_step]`: `max_step * (1 - u)` with `u ∈ [0, 1)`.
    fn step_length(&self, rng: &mut SimRng) -> f64 {
        self.dynamics.max_step * (1.0 - rng.gen::<f64>())
    }

    /// Area-uniform point of the jitter disc, as an offset.
    fn jitter_offset(&self, rng: &mut SimRng) -> (f64, f64) {
        let r = self.dynamics.jitter * rng.gen::<f64>().sqrt();
        let theta = 2.0 * PI * rng.gen::<f64>();
        (r * theta.cos(), r * theta.sin())
    }
}

impl Environment for RoverEnv {
    fn actions(&self) -> &ActionSet {
        &self.actions
    }

    fn bounds(&self) -> &Bounds {
        self.map.bounds()
    }

    fn label(&self, s: &MdpState) -> Result<&LabelSet, EnvError> {
        self.map.label_at(s)
    }

    fn step(&self, s: &MdpState, a: ActionId, rng: &mut SimRng) -> Result<MdpState, EnvError> {
        if !self.bounds().contains(s) {
            return Err(EnvError::OutOfBounds(s.0.clone()));
        }
        let (mut x, mut y) = (s.0[0], s.0[1]);
        match a.0 {
            LEFT => x -= self.step_length(rng),
            RIGHT => x += self.step_length(rng),
            UP => y += self.step_length(rng),
            DOWN => y -= self.step_length(rng),
            STAY => {
                let (dx, dy) = self.jitter_offset(rng);
                x += dx;
                y += dy;
            }
            other => return Err(EnvError::UnknownAction(other)),
        }
        let mut next = MdpState(vec![x, y]);
        self.bounds().clamp(&mut next);
        Ok(next)
    }

    fn nominal_step(&self) -> f64 {
        self.dynamics.max_step
    }
}
