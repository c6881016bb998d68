//! Dense rectifier network with hand-written backpropagation.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out x in`) followed by the bias vector. Optimizers and the
//! finite-difference checks work directly on that vector.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations of one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Mlp::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-limit..=limit);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Mlp::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::Domain(format!(
                "{} parameters for layer sizes {sizes:?} (expected {})",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight matrix and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Domain(format!(
                "network expects {} inputs, got {}",
                self.input_len(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.acts.pop().expect("output layer"))
    }

    /// Forward pass keeping every activation for a later backward pass.
    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        self.check_input(input)?;
        let layers = self.sizes.len() - 1;
        trace.acts.resize(layers + 1, Vec::new());
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..layers {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o]);
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut rest[0];
            y.clear();
            for (row, bias) in w.chunks_exact(i).zip(b) {
                let mut z = *bias;
                for (wi, xi) in row.iter().zip(x) {
                    z += wi * xi;
                }
                // rectifier on hidden layers only
                y.push(if l + 1 < layers { z.max(0.0) } else { z });
            }
            off += i * o + o;
        }
        Ok(())
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`
    /// for a recorded forward pass.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut delta = d_out.to_vec();
        let mut off = self.params.len();
        for l in (0..layers).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            off -= i * o + o;
            let x = &trace.acts[l];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let g = &mut grad[off + r * i..off + (r + 1) * i];
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += d * xi;
                }
                grad[off + i * o + r] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + i * o];
            let mut next = vec![0.0; i];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (n, wi) in next.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                    *n += d * wi;
                }
            }
            // rectifier derivative, taken as 0 at the kink
            for (n, a) in next.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }

    /// `(1/B) sum_i (Q(s_i)[a_i] - T_i)^2` over the taken actions only.
    pub fn td_loss(&self, inputs: &[Vec<f64>], actions: &[usize], targets: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for ((s, &a), t) in inputs.iter().zip(actions).zip(targets) {
            let q = self.forward(s)?;
            total += (q[a] - t).powi(2);
        }
        Ok(total / inputs.len() as f64)
    }

    /// Loss and its analytic gradient (overwrites `grad`).
    pub fn td_loss_grad(&self, inputs: &[Vec<f64>], actions: &[usize], targets: &[f64], grad: &mut [f64]) -> Result<f64> {
        if inputs.is_empty() || inputs.len() != actions.len() || inputs.len() != targets.len() {
            return Err(Error::Domain("batch must be non-empty with matching lengths".into()));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / inputs.len() as f64;
        let mut trace = Trace::default();
        let mut d_out = vec![0.0; self.output_len()];
        let mut total = 0.0;
        for ((s, &a), t) in inputs.iter().zip(actions).zip(targets) {
            self.forward_trace(s, &mut trace)?;
            let err = trace.output()[a] - t;
            total += err * err;
            d_out.iter_mut().for_each(|d| *d = 0.0);
            d_out[a] = 2.0 * err * scale;
            self.backward(&trace, &d_out, grad);
        }
        Ok(total * scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order update rule with its own state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, t: u64, m: Vec<f64>, v: Vec<f64> },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 0,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
            },
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, t, m, v } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t as i32);
                let c2 = 1.0 - beta2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + *eps);
                }
            }
        }
    }
}

/// One optimizer step on the squared TD loss. Returns the pre-step loss.
pub fn gradient_step(
    net: &mut Mlp,
    opt: &mut Optimizer,
    inputs: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
) -> Result<f64> {
    let mut grad = vec![0.0; net.num_params()];
    let loss = net.td_loss_grad(inputs, actions, targets, &mut grad)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!(
            "loss {loss} on a batch of {}; lower the learning rate or check the log clip",
            inputs.len()
        )));
    }
    opt.apply(&mut net.params, &grad);
    Ok(loss)
}
