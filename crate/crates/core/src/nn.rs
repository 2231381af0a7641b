//! Small feedforward networks with hand-written reverse-mode gradients and
//! an Adam optimizer with a two-level learning-rate schedule.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative with the subgradient 0 at a ReLU kink.
    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network: affine layers with ReLU between them and an
/// identity output layer.
///
/// Parameters live in one flat vector, layer by layer: the `out × in`
/// weight matrix (row-major) followed by the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    pub params: Vec<f64>,
    #[serde(skip)]
    pub grads: Vec<f64>,
}

/// Intermediate values of a batched forward pass.
pub struct Tape {
    /// Layer inputs (post-activation of the previous layer), `B × in`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations, `B × out`.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [input, hidden…, output]`, all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = Self::count(sizes);
        Mlp {
            sizes: sizes.to_vec(),
            hidden: Activation::Relu,
            params: vec![0.0; n],
            grads: vec![0.0; n],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut off = 0;
        for w in net.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    /// Network with `hidden_layers` ReLU layers of equal `width`.
    pub fn with_shape<R: Rng + ?Sized>(
        input: usize,
        width: usize,
        hidden_layers: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, hidden_layers));
        sizes.push(output);
        Self::glorot(&sizes, rng)
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
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

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grad(&mut self) {
        if self.grads.len() != self.params.len() {
            self.grads = vec![0.0; self.params.len()];
        } else {
            self.grads.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let off: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + i * o]).unwrap();
        (w, &self.params[off + i * o..off + i * o + o])
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Single-input evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(HedgeError::Dimension {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let xb = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(xb).row(0).to_vec())
    }

    /// Batched evaluation without recording.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            for mut row in z.axis_iter_mut(Axis(0)) {
                for (v, bi) in row.iter_mut().zip(b) {
                    *v += bi;
                }
            }
            if l + 1 < self.n_layers() {
                z.mapv_inplace(|v| self.hidden.apply(v));
            }
            h = z;
        }
        h
    }

    /// Batched evaluation recording what the backward pass needs.
    pub fn forward_taped(&self, x: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            for mut row in z.axis_iter_mut(Axis(0)) {
                for (v, bi) in row.iter_mut().zip(b) {
                    *v += bi;
                }
            }
            inputs.push(h);
            if l + 1 < self.n_layers() {
                h = z.mapv(|v| self.hidden.apply(v));
            } else {
                h = z.clone();
            }
            pre.push(z);
        }
        (h, Tape { inputs, pre })
    }

    /// Accumulates `∂loss/∂params` into `grads` given `∂loss/∂output`
    /// (`B × out`) and returns `∂loss/∂input`.
    pub fn backward(&mut self, tape: &Tape, d_out: ArrayView2<f64>) -> Array2<f64> {
        if self.grads.len() != self.params.len() {
            self.grads = vec![0.0; self.params.len()];
        }
        let mut delta = d_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            if l + 1 < self.n_layers() {
                let act = self.hidden;
                delta.zip_mut_with(&tape.pre[l], |d, &z| *d *= act.grad(z));
            }
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let gw = delta.t().dot(&tape.inputs[l]);
            for (g, v) in self.grads[off..off + i * o].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in self.grads[off + i * o..off + i * o + o].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            let (w, _) = self.layer(l);
            delta = delta.dot(&w);
        }
        delta
    }
}

/// Piecewise-constant learning rate: `initial` before `switch_at`, then
/// `second`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub second: f64,
    pub switch_at: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 5e-2,
            second: 5e-3,
            switch_at: 4000,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, iteration: u64) -> f64 {
        if iteration < self.switch_at {
            self.initial
        } else {
            self.second
        }
    }
}

/// Adam with moment buffers per parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    /// One update over all groups. Gradients are checked before anything is
    /// modified, so a NaN leaves parameters and moments untouched.
    pub fn step<'a, I>(&mut self, groups: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        let groups: Vec<_> = groups.into_iter().collect();
        let mut flat = 0;
        for (_, g) in &groups {
            if let Some(k) = g.iter().position(|x| !x.is_finite()) {
                return Err(HedgeError::NanGradient {
                    iteration: self.t,
                    index: flat + k,
                });
            }
            flat += g.len();
        }
        if self.m.len() != groups.len() {
            self.m = groups.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for (k, (p, g)) in groups.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            assert_eq!(p.len(), g.len(), "parameter/gradient shape mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Anything exposing its trainable tensors as `(params, grads)` groups.
pub trait Trainable {
    fn groups(&mut self) -> Vec<(&mut [f64], &[f64])>;
    fn named_tensors(&self) -> Vec<(String, Vec<f64>)>;
    fn zero_grad(&mut self);
}

/// Optimizer state around a trainable model.
#[derive(Clone, Debug)]
pub struct TrainState<M> {
    pub model: M,
    pub adam: Adam,
    pub schedule: LrSchedule,
    pub iteration: u64,
    pub losses: Vec<f64>,
}

impl<M: Trainable> TrainState<M> {
    pub fn new(model: M, schedule: LrSchedule) -> Self {
        TrainState {
            model,
            adam: Adam::default(),
            schedule,
            iteration: 0,
            losses: Vec::new(),
        }
    }

    /// Records the loss of the current iteration, applies the gradients held
    /// by the model and advances the counter.
    pub fn adam_step(&mut self, loss: f64) -> Result<()> {
        let lr = self.schedule.at(self.iteration);
        self.adam.step(self.model.groups(), lr)?;
        self.losses.push(loss);
        self.iteration += 1;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            tensors: self.model.named_tensors().into_iter().collect(),
        }
    }
}

/// Named parameter tensors plus the iteration counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub tensors: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

/// `iteration,loss,log10_loss` rows.
pub fn write_loss_csv<W: Write>(w: W, losses: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "loss", "log10_loss"])?;
    for (i, l) in losses.iter().enumerate() {
        out.write_record([i.to_string(), l.to_string(), l.log10().to_string()])?;
    }
    out.flush()?;
    Ok(())
}
