//! Feed-forward action-value network with hand-written backpropagation.
//!
//! All parameters live in one flat vector, layer by layer, each layer's
//! weights (row-major, outputs x inputs) followed by its biases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::replay::Transition;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("input has {got} values, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network needs at least an input and an output layer")]
    TooFewLayers,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("batch is empty")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl QNetwork {
    pub fn zeros(sizes: &[usize]) -> Result<Self, NetworkError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NetworkError::TooFewLayers);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, NetworkError> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self, NetworkError> {
        let mut net = Self::zeros(&sizes)?;
        if params.len() != net.params.len() {
            return Err(NetworkError::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let mut out = Vec::with_capacity(self.sizes.len() - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = ArrayView2::from_shape((n_out, n_in), &self.params[offset..offset + n_in * n_out]).unwrap();
            offset += n_in * n_out;
            let biases = ArrayView1::from(&self.params[offset..offset + n_out]);
            offset += n_out;
            out.push((weights, biases));
        }
        out
    }

    /// Pre-activations of every layer for a batch of row inputs.
    fn forward_all(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let layers = self.layers();
        let mut zs: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
        let mut a = x.to_owned();
        for (i, (w, b)) in layers.iter().enumerate() {
            let z = a.dot(&w.t()) + b;
            if i + 1 < layers.len() {
                a = z.mapv(|v| v.max(0.0));
            }
            zs.push(z);
        }
        zs
    }

    /// Action values for a batch of row inputs.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NetworkError> {
        if x.ncols() != self.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(self.forward_all(x).pop().unwrap())
    }

    pub fn predict(&self, s: &[f64]) -> Result<Vec<f64>, NetworkError> {
        let x = ArrayView2::from_shape((1, s.len()), s).unwrap();
        Ok(self.forward_batch(x)?.row(0).to_vec())
    }

    /// Bellman targets `r + gamma * max_a' target(s')`, or `r` when terminal.
    pub fn targets(target: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>, NetworkError> {
        let live: Vec<&Transition> = batch.iter().copied().filter(|t| !t.terminal).collect();
        let mut next_max = Vec::new();
        if !live.is_empty() {
            let q = target.forward_batch(stack(live.iter().map(|t| t.next.as_slice()), target.input_dim())?.view())?;
            next_max = q
                .rows()
                .into_iter()
                .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
        }
        let mut k = 0;
        Ok(batch
            .iter()
            .map(|t| {
                if t.terminal {
                    t.reward
                } else {
                    k += 1;
                    t.reward + gamma * next_max[k - 1]
                }
            })
            .collect())
    }

    /// Mean squared error of `Q(s, a)` against fixed `targets`, and its
    /// gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Vec<f64>), NetworkError> {
        if batch.is_empty() {
            return Err(NetworkError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let x = stack(batch.iter().map(|t| t.state.as_slice()), self.input_dim())?;
        let zs = self.forward_all(x.view());
        let q = zs.last().unwrap();

        let mut loss = 0.0;
        let mut dz = Array2::<f64>::zeros(q.raw_dim());
        for (b, t) in batch.iter().enumerate() {
            if t.action >= self.output_dim() {
                return Err(NetworkError::DimensionMismatch {
                    expected: self.output_dim(),
                    got: t.action + 1,
                });
            }
            let err = q[[b, t.action]] - targets[b];
            loss += err * err;
            dz[[b, t.action]] = 2.0 * err / n;
        }
        loss /= n;
        Ok((loss, self.backprop(&x, &zs, dz)))
    }

    /// Large-margin imitation loss
    /// `mean(max_a [Q(s, a) + margin * (a != a_E)] - Q(s, a_E))` and its
    /// gradient.
    pub fn margin_loss_and_grad(&self, states: &[&[f64]], expert: &[usize], margin: f64) -> Result<(f64, Vec<f64>), NetworkError> {
        if states.is_empty() {
            return Err(NetworkError::EmptyBatch);
        }
        let n = states.len() as f64;
        let x = stack(states.iter().copied(), self.input_dim())?;
        let zs = self.forward_all(x.view());
        let q = zs.last().unwrap();
        let mut dz = Array2::<f64>::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (b, &e) in expert.iter().enumerate() {
            if e >= self.output_dim() {
                return Err(NetworkError::DimensionMismatch {
                    expected: self.output_dim(),
                    got: e + 1,
                });
            }
            let row = q.row(b);
            let shifted: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(a, &v)| if a == e { v } else { v + margin })
                .collect();
            let best = super::argmax(&shifted);
            if best != e {
                loss += shifted[best] - row[e];
                dz[[b, best]] += 1.0 / n;
                dz[[b, e]] -= 1.0 / n;
            }
        }
        Ok((loss / n, self.backprop(&x, &zs, dz)))
    }

    fn backprop(&self, x: &Array2<f64>, zs: &[Array2<f64>], mut dz: Array2<f64>) -> Vec<f64> {
        let layers = self.layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        for l in (0..layers.len()).rev() {
            let a_prev: Array2<f64> = if l == 0 {
                x.clone()
            } else {
                zs[l - 1].mapv(|v| v.max(0.0))
            };
            let gw = dz.t().dot(&a_prev);
            let gb: Array1<f64> = dz.sum_axis(Axis(0));
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let o = offsets[l];
            grad[o..o + n_in * n_out].copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
            grad[o + n_in * n_out..o + n_in * n_out + n_out].copy_from_slice(gb.as_slice().unwrap());
            if l > 0 {
                let mut da = dz.dot(&layers[l].0);
                da.zip_mut_with(&zs[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = da;
            }
        }
        grad
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Array2<f64>, NetworkError> {
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != dim {
            return Err(NetworkError::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        flat.extend_from_slice(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, dim), flat).unwrap())
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        if lr == 0.0 {
            return;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// One optimizer step on the mean squared Bellman error; returns the loss
/// before the step.
pub fn train_step(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    learning_rate: f64,
    max_grad_norm: Option<f64>,
    opt: &mut Adam,
) -> Result<f64, NetworkError> {
    if batch.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    let y = QNetwork::targets(target, batch, gamma)?;
    let (loss, grad) = net.loss_and_grad(batch, &y)?;
    apply_gradient(net, loss, grad, learning_rate, max_grad_norm, opt)
}

/// Clip `grad` to `max_grad_norm` and take one Adam step; rejects
/// non-finite values.
pub fn apply_gradient(
    net: &mut QNetwork,
    loss: f64,
    mut grad: Vec<f64>,
    learning_rate: f64,
    max_grad_norm: Option<f64>,
    opt: &mut Adam,
) -> Result<f64, NetworkError> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NetworkError::NonFiniteLoss);
    }
    if let Some(limit) = max_grad_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > limit {
            grad.iter_mut().for_each(|g| *g *= limit / norm);
        }
    }
    opt.step(&mut net.params, &grad, learning_rate);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(state: Vec<f64>, action: usize, reward: f64, next: Vec<f64>, terminal: bool) -> Transition {
        Transition {
            state,
            action,
            reward,
            next,
            terminal,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(net.predict(&[1.0]), Err(NetworkError::DimensionMismatch { .. })));
    }

    #[test]
    fn hand_computed_forward_pass() {
        // hidden = relu([[1, -1], [2, 0.5]] x + [0, -1]); out = [[1, 2], [-1, 1]] h + [0.5, 0]
        let params = vec![1.0, -1.0, 2.0, 0.5, 0.0, -1.0, 1.0, 2.0, -1.0, 1.0, 0.5, 0.0];
        let net = QNetwork::from_parts(vec![2, 2, 2], params).unwrap();
        // x = (1, 3): pre = (-2, 2.5), relu -> (0, 2.5); out = (5.5, 2.5)
        assert_eq!(net.predict(&[1.0, 3.0]).unwrap(), vec![5.5, 2.5]);
    }

    #[test]
    fn zero_first_layer_yields_output_bias_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = QNetwork::new(&[4, 3, 2], &mut rng).unwrap();
        net.params_mut()[..12].iter_mut().for_each(|p| *p = 0.0);
        net.params_mut()[12..15].iter_mut().for_each(|p| *p = 0.0);
        let b = net.params()[21..23].to_vec();
        assert_eq!(net.predict(&[1.0, 2.0, 3.0, 4.0]).unwrap(), b);
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = QNetwork::new(&[2, 4, 3], &mut rng).unwrap();
        let batch = [
            transition(vec![0.0, 1.0], 0, 1.5, vec![1.0, 1.0], false),
            transition(vec![1.0, 0.0], 2, -2.0, vec![0.5, 0.5], true),
        ];
        let refs: Vec<&Transition> = batch.iter().collect();
        assert_eq!(QNetwork::targets(&target, &refs, 0.0).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn terminal_targets_ignore_target_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = QNetwork::new(&[2, 4, 3], &mut rng).unwrap();
        let b = QNetwork::new(&[2, 4, 3], &mut rng).unwrap();
        let batch = [
            transition(vec![0.0, 1.0], 0, 1.0, vec![1.0, 1.0], true),
            transition(vec![1.0, 0.0], 1, 3.0, vec![0.5, 0.5], true),
        ];
        let refs: Vec<&Transition> = batch.iter().collect();
        assert_eq!(
            QNetwork::targets(&a, &refs, 0.9).unwrap(),
            QNetwork::targets(&b, &refs, 0.9).unwrap()
        );
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = QNetwork::new(&[2, 5, 3], &mut rng).unwrap();
        let target = net.clone();
        let before = net.clone();
        let batch = [transition(vec![0.3, -0.2], 1, 1.0, vec![0.1, 0.1], false)];
        let refs: Vec<&Transition> = batch.iter().collect();
        let mut opt = Adam::new(net.params().len());
        let loss = train_step(&mut net, &target, &refs, 0.9, 0.0, None, &mut opt).unwrap();
        assert!(loss > 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn training_reduces_loss_on_fixed_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = QNetwork::new(&[2, 16, 2], &mut rng).unwrap();
        let batch: Vec<Transition> = (0..16)
            .map(|i| {
                let x = i as f64 / 8.0 - 1.0;
                transition(vec![x, x * x], i % 2, x, vec![0.0, 0.0], true)
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let mut opt = Adam::new(net.params().len());
        let target = net.clone();
        let first = train_step(&mut net, &target, &refs, 0.0, 1e-2, None, &mut opt).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = train_step(&mut net, &target, &refs, 0.0, 1e-2, None, &mut opt).unwrap();
        }
        assert!(last < 0.1 * first, "{first} -> {last}");
    }
}
