use crate::product::{ProductAction, ProductState};
use crate::rng::SimRng;

/// A stationary policy on the product MDP.
///
/// `act` may draw from `rng` (sampling-based policies do); deterministic
/// policies ignore it. `value` scores a product state and is used to resolve
/// nondeterministic automaton successors greedily.
pub trait Policy: Sync {
    fn act(&self, x: &ProductState, rng: &mut SimRng) -> ProductAction;

    fn value(&self, x: &ProductState) -> f64;
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, x: &ProductState, rng: &mut SimRng) -> ProductAction {
        (**self).act(x, rng)
    }

    fn value(&self, x: &ProductState) -> f64 {
        (**self).value(x)
    }
}

/// Always takes the same action. Handy as a baseline and in tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub ProductAction);

impl Policy for ConstantPolicy {
    fn act(&self, _: &ProductState, _: &mut SimRng) -> ProductAction {
        self.0
    }

    fn value(&self, _: &ProductState) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_the_first() {
        assert_eq!(argmax_first(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax_first(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax_first(&[3.0]), 0);
    }
}
