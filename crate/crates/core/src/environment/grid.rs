use rand::Rng;

use super::{ActionId, ActionSet, Bounds, EnvError, Environment, MdpState};
use crate::automata::LabelSet;
use crate::rng::SimRng;

/// An environment whose transition probabilities are known exactly over a
/// finite set of cells. Used by the dynamic-programming oracle.
pub trait FiniteEnv: Environment {
    fn num_cells(&self) -> usize;

    fn cell_of(&self, s: &MdpState) -> usize;

    fn cell_state(&self, cell: usize) -> MdpState;

    /// Successor cells with their probabilities.
    fn transitions(&self, cell: usize, a: ActionId) -> Vec<(usize, f64)>;
}

/// A row of unit cells at coordinates `0, 1, .., n-1` with actions
/// left, right and stay. A move fails (the agent stays put) with
/// probability `slip`.
#[derive(Debug, Clone)]
pub struct GridWorld1D {
    labels: Vec<LabelSet>,
    slip: f64,
    actions: ActionSet,
    bounds: Bounds,
}

impl GridWorld1D {
    pub fn new(labels: Vec<LabelSet>, slip: f64) -> Result<Self, EnvError> {
        if labels.is_empty() {
            return Err(EnvError::InvalidMap("grid needs at least one cell".into()));
        }
        if !(0.0..1.0).contains(&slip) {
            return Err(EnvError::InvalidDynamics("slip must lie in [0, 1)".into()));
        }
        let n = labels.len() as f64;
        Ok(Self {
            labels,
            slip,
            actions: ActionSet::new(["left", "right", "stay"]).expect("static"),
            bounds: Bounds::new(vec![-0.5], vec![n - 0.5]),
        })
    }

    /// Builds cells from a compact description: `.` neutral, any other
    /// character `c` becomes the label named by `names(c)`.
    pub fn from_pattern(pattern: &str, names: &[(char, &str)], slip: f64) -> Result<Self, EnvError> {
        let labels = pattern
            .chars()
            .map(|c| {
                if c == '.' {
                    return Ok(LabelSet::empty());
                }
                let name = names
                    .iter()
                    .find(|(k, _)| *k == c)
                    .map(|(_, n)| *n)
                    .ok_or_else(|| EnvError::InvalidMap(format!("no label for `{c}`")))?;
                Ok(LabelSet::new([name]).expect("valid name"))
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        Self::new(labels, slip)
    }

    fn target_cell(&self, cell: usize, a: ActionId) -> Result<usize, EnvError> {
        match a.0 {
            0 => Ok(cell.saturating_sub(1)),
            1 => Ok((cell + 1).min(self.labels.len() - 1)),
            2 => Ok(cell),
            other => Err(EnvError::UnknownAction(other)),
        }
    }
}

impl Environment for GridWorld1D {
    fn actions(&self) -> &ActionSet {
        &self.actions
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn label(&self, s: &MdpState) -> Result<&LabelSet, EnvError> {
        if !self.bounds.contains(s) {
            return Err(EnvError::OutOfBounds(s.0.clone()));
        }
        Ok(&self.labels[self.cell_of(s)])
    }

    fn step(&self, s: &MdpState, a: ActionId, rng: &mut SimRng) -> Result<MdpState, EnvError> {
        if !self.bounds.contains(s) {
            return Err(EnvError::OutOfBounds(s.0.clone()));
        }
        let cell = self.cell_of(s);
        let target = self.target_cell(cell, a)?;
        let next = if self.slip > 0.0 && rng.gen::<f64>() < self.slip {
            cell
        } else {
            target
        };
        Ok(self.cell_state(next))
    }

    fn nominal_step(&self) -> f64 {
        1.0
    }

    fn sample_uniform(&self, rng: &mut SimRng) -> MdpState {
        self.cell_state(rng.gen_range(0..self.labels.len()))
    }
}

impl FiniteEnv for GridWorld1D {
    fn num_cells(&self) -> usize {
        self.labels.len()
    }

    fn cell_of(&self, s: &MdpState) -> usize {
        (s.0[0].round().max(0.0) as usize).min(self.labels.len() - 1)
    }

    fn cell_state(&self, cell: usize) -> MdpState {
        MdpState(vec![cell as f64])
    }

    fn transitions(&self, cell: usize, a: ActionId) -> Vec<(usize, f64)> {
        let target = match self.target_cell(cell, a) {
            Ok(t) => t,
            Err(_) => return Vec::new(),
        };
        if target == cell || self.slip == 0.0 {
            vec![(target, 1.0)]
        } else {
            vec![(target, 1.0 - self.slip), (cell, self.slip)]
        }
    }
}
