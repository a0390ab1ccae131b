//! One-hidden-layer perceptron with a `tanh` hidden layer, squared-error
//! batch loss, and Rprop training.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("expected input of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("pattern set is empty")]
    EmptyPatterns,
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Parameters are stored flat: `W1` (row-major, `hidden × input`), `b1`,
/// `w2`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input_dim: usize,
    hidden_dim: usize,
    params: Vec<f64>,
}

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    #[serde(flatten)]
    net: Mlp,
}

impl Mlp {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        assert!(input_dim >= 1 && hidden_dim >= 1);
        Self {
            input_dim,
            hidden_dim,
            params: vec![0.0; Self::param_count(input_dim, hidden_dim)],
        }
    }

    /// Every parameter uniform in `[-0.5, 0.5]`.
    pub fn random(input_dim: usize, hidden_dim: usize, rng: &mut SimRng) -> Self {
        let mut net = Self::zeros(input_dim, hidden_dim);
        for p in &mut net.params {
            *p = rng.gen_range(-0.5..=0.5);
        }
        net
    }

    pub fn from_params(input_dim: usize, hidden_dim: usize, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), Self::param_count(input_dim, hidden_dim));
        Self {
            input_dim,
            hidden_dim,
            params,
        }
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        hidden_dim * input_dim + 2 * hidden_dim + 1
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden_dim * self.input_dim;
        (w1, w1 + self.hidden_dim, w1 + 2 * self.hidden_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NeuralError> {
        if x.len() != self.input_dim {
            return Err(NeuralError::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut out = p[b2];
        for j in 0..self.hidden_dim {
            let row = &p[j * self.input_dim..(j + 1) * self.input_dim];
            let z: f64 = p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out += p[w2 + j] * z.tanh();
        }
        out
    }

    /// Adds the gradient of `(f(x) - t)²` to `grad` and returns the squared
    /// error.
    fn accumulate(&self, x: &[f64], t: f64, hidden: &mut [f64], grad: &mut [f64]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut out = p[b2];
        for j in 0..self.hidden_dim {
            let row = &p[j * self.input_dim..(j + 1) * self.input_dim];
            let z: f64 = p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            hidden[j] = z.tanh();
            out += p[w2 + j] * hidden[j];
        }
        let err = out - t;
        let d = 2.0 * err;
        grad[b2] += d;
        for j in 0..self.hidden_dim {
            grad[w2 + j] += d * hidden[j];
            let dz = d * p[w2 + j] * (1.0 - hidden[j] * hidden[j]);
            grad[b1 + j] += dz;
            let g = &mut grad[j * self.input_dim..(j + 1) * self.input_dim];
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += dz * xi;
            }
        }
        err * err
    }

    /// `Σ (f(x_l) - t_l)²` and its gradient.
    ///
    /// Large pattern sets are split into fixed-size chunks whose partial sums
    /// are added in chunk order, so the result does not depend on thread
    /// scheduling.
    pub fn batch_loss_and_gradient(&self, patterns: &PatternSet) -> Result<(f64, Vec<f64>), NeuralError> {
        if patterns.is_empty() {
            return Err(NeuralError::EmptyPatterns);
        }
        if patterns.dim != self.input_dim {
            return Err(NeuralError::Dimension {
                expected: self.input_dim,
                got: patterns.dim,
            });
        }
        const CHUNK: usize = 256;
        let n = self.params.len();
        let partials: Vec<(f64, Vec<f64>)> = patterns
            .inputs
            .par_chunks(CHUNK * patterns.dim)
            .zip(patterns.targets.par_chunks(CHUNK))
            .map(|(xs, ts)| {
                let mut grad = vec![0.0; n];
                let mut hidden = vec![0.0; self.hidden_dim];
                let mut loss = 0.0;
                for (x, t) in xs.chunks_exact(patterns.dim).zip(ts) {
                    loss += self.accumulate(x, *t, &mut hidden, &mut grad);
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((loss, grad))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Snapshot {
            version: SNAPSHOT_VERSION,
            net: self.clone(),
        })
        .expect("net serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| NeuralError::Snapshot(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(NeuralError::Snapshot(format!("unsupported version {}", snap.version)));
        }
        let net = snap.net;
        if net.params.len() != Self::param_count(net.input_dim, net.hidden_dim) {
            return Err(NeuralError::Snapshot(
                "parameter count does not match dimensions".into(),
            ));
        }
        if !net.params.iter().all(|p| p.is_finite()) {
            return Err(NeuralError::Snapshot("non-finite parameter".into()));
        }
        Ok(net)
    }
}

/// Training pairs, inputs stored contiguously.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatternSet {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl PatternSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], target: f64) {
        assert_eq!(input.len(), self.dim, "pattern dimension");
        self.inputs.extend_from_slice(input);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta0: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta0: 0.1,
            delta_min: 1e-6,
            delta_max: 50.0,
        }
    }
}

/// Per-parameter Rprop memory. Step sizes stay in `[delta_min, delta_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub config: RpropConfig,
    steps: Vec<f64>,
    prev_grad: Vec<f64>,
    prev_update: Vec<f64>,
}

impl RpropState {
    pub fn new(net: &Mlp, config: RpropConfig) -> Self {
        let n = net.params.len();
        Self {
            config,
            steps: vec![config.delta0; n],
            prev_grad: vec![0.0; n],
            prev_update: vec![0.0; n],
        }
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Applies one update from a precomputed gradient. On a sign change the
    /// previous update is retracted and the gradient memory cleared.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.steps.len());
        let c = self.config;
        for i in 0..params.len() {
            let g = grad[i];
            let s = g * self.prev_grad[i];
            if s > 0.0 {
                self.steps[i] = (self.steps[i] * c.eta_plus).min(c.delta_max);
                let dw = -g.signum() * self.steps[i];
                params[i] += dw;
                self.prev_update[i] = dw;
                self.prev_grad[i] = g;
            } else if s < 0.0 {
                self.steps[i] = (self.steps[i] * c.eta_minus).max(c.delta_min);
                params[i] -= self.prev_update[i];
                self.prev_update[i] = 0.0;
                self.prev_grad[i] = 0.0;
            } else {
                let dw = if g == 0.0 { 0.0 } else { -g.signum() * self.steps[i] };
                params[i] += dw;
                self.prev_update[i] = dw;
                self.prev_grad[i] = g;
            }
        }
    }
}

/// One full-batch Rprop epoch. Returns the loss before the update.
pub fn rprop_epoch(net: &mut Mlp, state: &mut RpropState, patterns: &PatternSet) -> Result<f64, NeuralError> {
    let (loss, grad) = net.batch_loss_and_gradient(patterns)?;
    state.apply(&mut net.params, &grad);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::Rng;

    /// Central differences of the batch loss.
    fn numeric_gradient(net: &Mlp, p: &PatternSet, h: f64) -> Vec<f64> {
        let mut g = Vec::new();
        for i in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let lp = plus.batch_loss_and_gradient(p).unwrap().0;
            let lm = minus.batch_loss_and_gradient(p).unwrap().0;
            g.push((lp - lm) / (2.0 * h));
        }
        g
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(3, 4);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), 0.0);
        assert!(matches!(net.forward(&[1.0]), Err(NeuralError::Dimension { .. })));
    }

    #[test]
    fn hand_evaluated_one_one_one() {
        let net = Mlp::from_params(1, 1, vec![1.0, 0.0, 2.0, 0.5]);
        let expected = 2.0 * 1.0f64.tanh() + 0.5;
        assert!((net.forward(&[1.0]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 2.0232).abs() < 1e-4);
    }

    #[test]
    fn one_one_one_gradient_matches_chain_rule() {
        // f = w2·tanh(w1·x + b1) + b2, loss = (f - t)²
        let (w1, b1, w2, b2, x, t) = (0.7, -0.2, 1.3, 0.1, 0.9, 0.4);
        let net = Mlp::from_params(1, 1, vec![w1, b1, w2, b2]);
        let mut p = PatternSet::new(1);
        p.push(&[x], t);
        let (loss, grad) = net.batch_loss_and_gradient(&p).unwrap();
        let hdn = f64::tanh(w1 * x + b1);
        let f = w2 * hdn + b2;
        let d = 2.0 * (f - t);
        let expected = [d * w2 * (1.0 - hdn * hdn) * x, d * w2 * (1.0 - hdn * hdn), d * hdn, d];
        assert!((loss - (f - t).powi(2)).abs() < 1e-15);
        for (a, b) in grad.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn matching_targets_give_zero_loss_and_gradient() {
        let net = Mlp::random(2, 5, &mut seeded(1, 0));
        let mut p = PatternSet::new(2);
        for x in [[0.1, 0.2], [0.5, -0.3], [1.0, 1.0]] {
            p.push(&x, net.forward(&x).unwrap());
        }
        let (loss, grad) = net.batch_loss_and_gradient(&p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
        assert!(matches!(
            net.batch_loss_and_gradient(&PatternSet::new(2)),
            Err(NeuralError::EmptyPatterns)
        ));
    }

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let mut net = Mlp::random(2, 3, &mut seeded(2, 0));
        let mut state = RpropState::new(&net, RpropConfig::default());
        let mut p = PatternSet::new(2);
        p.push(&[0.3, 0.3], net.forward(&[0.3, 0.3]).unwrap());
        let before = net.clone();
        rprop_epoch(&mut net, &mut state, &p).unwrap();
        assert_eq!(net, before);
        assert!(state.steps().iter().all(|s| *s == 0.1));
    }

    #[test]
    fn agreeing_signs_grow_the_step() {
        let c = RpropConfig::default();
        let net = Mlp::zeros(1, 1);
        let mut state = RpropState::new(&net, c);
        let mut params = vec![0.0; 4];
        let grad = [1.0, 1.0, 1.0, 1.0];
        state.apply(&mut params, &grad);
        assert_eq!(state.steps()[0], 0.1);
        assert_eq!(params[0], -0.1);
        state.apply(&mut params, &grad);
        assert!((state.steps()[0] - 0.12).abs() < 1e-15);
        assert!((params[0] + 0.22).abs() < 1e-15);
        for _ in 0..200 {
            state.apply(&mut params, &grad);
        }
        assert_eq!(state.steps()[0], c.delta_max);
        // sign flip: retract and shrink
        let before = params[0];
        state.apply(&mut params, &[-1.0; 4]);
        assert_eq!(state.steps()[0], 25.0);
        assert_eq!(params[0], before + 50.0);
    }

    #[test]
    fn sine_fit_reduces_loss_hundredfold() {
        let mut net = Mlp::random(1, 4, &mut seeded(7, 0));
        let mut p = PatternSet::new(1);
        for i in 0..20 {
            let x = i as f64 / 19.0 * 2.0 * std::f64::consts::PI;
            p.push(&[x / (2.0 * std::f64::consts::PI)], x.sin());
        }
        let mut state = RpropState::new(&net, RpropConfig::default());
        let first = rprop_epoch(&mut net, &mut state, &p).unwrap();
        let mut last = first;
        for _ in 0..499 {
            last = rprop_epoch(&mut net, &mut state, &p).unwrap();
        }
        assert!(last * 100.0 <= first, "{first} -> {last}");
    }

    #[test]
    fn training_lowers_loss_in_most_seeded_runs() {
        let mut improved = 0;
        for seed in 0..100 {
            let mut rng = seeded(seed, 0);
            let mut net = Mlp::random(2, 6, &mut rng);
            let mut p = PatternSet::new(2);
            for _ in 0..30 {
                let x = [rng.gen::<f64>(), rng.gen::<f64>()];
                p.push(&x, (3.0 * x[0]).sin() * x[1]);
            }
            let mut state = RpropState::new(&net, RpropConfig::default());
            let first = rprop_epoch(&mut net, &mut state, &p).unwrap();
            let mut last = first;
            for _ in 0..50 {
                last = rprop_epoch(&mut net, &mut state, &p).unwrap();
            }
            if last <= first {
                improved += 1;
            }
        }
        assert!(improved >= 95, "{improved}");
    }

    #[test]
    fn chunked_gradient_is_deterministic() {
        let net = Mlp::random(3, 8, &mut seeded(4, 0));
        let mut rng = seeded(4, 1);
        let mut p = PatternSet::new(3);
        for _ in 0..3000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            p.push(&x, rng.gen());
        }
        let a = net.batch_loss_and_gradient(&p).unwrap();
        for _ in 0..5 {
            assert_eq!(net.batch_loss_and_gradient(&p).unwrap(), a);
        }
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let net = Mlp::random(7, 32, &mut seeded(9, 0));
        let back = Mlp::from_json(&net.to_json()).unwrap();
        assert_eq!(net, back);
        assert!(Mlp::from_json("{\"version\":2,\"input_dim\":1,\"hidden_dim\":1,\"params\":[0,0,0,0]}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn analytic_gradient_matches_central_differences(
            seed in any::<u64>(),
            input in 1usize..=8,
            hidden in 1usize..=8,
            n in 1usize..=8,
        ) {
            let mut rng = seeded(seed, 0);
            let net = Mlp::random(input, hidden, &mut rng);
            let mut p = PatternSet::new(input);
            for _ in 0..n {
                let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
                p.push(&x, rng.gen_range(-1.0..1.0));
            }
            let (_, g) = net.batch_loss_and_gradient(&p).unwrap();
            let num = numeric_gradient(&net, &p, 1e-5);
            let scale = g.iter().chain(&num).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
            for (a, b) in g.iter().zip(&num) {
                prop_assert!((a - b).abs() / scale <= 1e-4, "{} vs {}", a, b);
            }
        }

        #[test]
        fn rprop_steps_stay_clamped(seed in any::<u64>(), epochs in 1usize..60) {
            let mut rng = seeded(seed, 0);
            let mut net = Mlp::random(2, 3, &mut rng);
            let mut p = PatternSet::new(2);
            for _ in 0..10 {
                let x = [rng.gen::<f64>(), rng.gen::<f64>()];
                p.push(&x, rng.gen_range(-5.0..5.0));
            }
            let c = RpropConfig::default();
            let mut state = RpropState::new(&net, c);
            for _ in 0..epochs {
                rprop_epoch(&mut net, &mut state, &p).unwrap();
                prop_assert!(state.steps().iter().all(|s| *s >= c.delta_min && *s <= c.delta_max));
            }
        }
    }
}
