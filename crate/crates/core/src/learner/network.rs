//! Stacked LSTM with a per-step linear readout, forward pass and
//! backpropagation through time.
//!
//! Gate rows are stacked in the order input, forget, cell candidate, output:
//! `z = W [x; h_prev] + b`, `c = f * c_prev + i * g`, `h = o * tanh(c)`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4H x (In + H)`, row-major.
    pub w: Vec<f64>,
    /// `4H`.
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub input_size: usize,
    pub output_size: usize,
    /// `Out x H`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<LstmLayer>,
    pub readout: Readout,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn uniform_fill(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("bound is finite");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl LstmLayer {
    fn cols(&self) -> usize {
        self.input_size + self.hidden_size
    }
}

/// Activations of one layer over a window, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    steps: usize,
    /// `T x (In + H)`: input and previous hidden state per step.
    xh: Vec<f64>,
    /// `T x 4H`: post-activation gates.
    gates: Vec<f64>,
    /// `T x H`.
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub(crate) h: Vec<f64>,
}

impl LstmLayer {
    pub(crate) fn forward(&self, inputs: &[f64], steps: usize) -> LayerTrace {
        let (n_in, n_h, cols) = (self.input_size, self.hidden_size, self.cols());
        let mut trace = LayerTrace {
            steps,
            xh: vec![0.0; steps * cols],
            gates: vec![0.0; steps * 4 * n_h],
            c: vec![0.0; steps * n_h],
            tanh_c: vec![0.0; steps * n_h],
            h: vec![0.0; steps * n_h],
        };
        let mut z = vec![0.0; 4 * n_h];
        for t in 0..steps {
            let xh = &mut trace.xh[t * cols..(t + 1) * cols];
            xh[..n_in].copy_from_slice(&inputs[t * n_in..(t + 1) * n_in]);
            if t > 0 {
                xh[n_in..].copy_from_slice(&trace.h[(t - 1) * n_h..t * n_h]);
            }
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &self.w[r * cols..(r + 1) * cols];
                *zr = self.b[r] + row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            let gates = &mut trace.gates[t * 4 * n_h..(t + 1) * 4 * n_h];
            for k in 0..n_h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[n_h + k]);
                let g = z[2 * n_h + k].tanh();
                let o = sigmoid(z[3 * n_h + k]);
                gates[k] = i;
                gates[n_h + k] = f;
                gates[2 * n_h + k] = g;
                gates[3 * n_h + k] = o;
                let c_prev = if t > 0 { trace.c[(t - 1) * n_h + k] } else { 0.0 };
                let c = f * c_prev + i * g;
                let tc = c.tanh();
                trace.c[t * n_h + k] = c;
                trace.tanh_c[t * n_h + k] = tc;
                trace.h[t * n_h + k] = o * tc;
            }
        }
        trace
    }

    /// Accumulates parameter gradients into `grad` given `dh` (`T x H`, loss
    /// gradient w.r.t. this layer's outputs). Returns the input gradient when
    /// `want_dx` is set.
    pub(crate) fn backward(
        &self,
        trace: &LayerTrace,
        dh: &[f64],
        want_dx: bool,
        grad: &mut LstmLayer,
    ) -> Option<Vec<f64>> {
        let (n_in, n_h, cols, steps) = (self.input_size, self.hidden_size, self.cols(), trace.steps);
        let mut dx = want_dx.then(|| vec![0.0; steps * n_in]);
        let mut dh_next = vec![0.0; n_h];
        let mut dc_next = vec![0.0; n_h];
        let mut dz = vec![0.0; 4 * n_h];
        let mut dxh = vec![0.0; cols];
        for t in (0..steps).rev() {
            let gates = &trace.gates[t * 4 * n_h..(t + 1) * 4 * n_h];
            for k in 0..n_h {
                let (i, f, g, o) = (gates[k], gates[n_h + k], gates[2 * n_h + k], gates[3 * n_h + k]);
                let tc = trace.tanh_c[t * n_h + k];
                let c_prev = if t > 0 { trace.c[(t - 1) * n_h + k] } else { 0.0 };
                let dh_total = dh[t * n_h + k] + dh_next[k];
                let dc = dh_total * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[n_h + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * n_h + k] = dc * i * (1.0 - g * g);
                dz[3 * n_h + k] = dh_total * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let xh = &trace.xh[t * cols..(t + 1) * cols];
            dxh.iter_mut().for_each(|v| *v = 0.0);
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                grad.b[r] += dzr;
                let g_row = &mut grad.w[r * cols..(r + 1) * cols];
                let w_row = &self.w[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    g_row[c] += dzr * xh[c];
                    dxh[c] += dzr * w_row[c];
                }
            }
            if let Some(dx) = dx.as_mut() {
                dx[t * n_in..(t + 1) * n_in].copy_from_slice(&dxh[..n_in]);
            }
            dh_next.copy_from_slice(&dxh[n_in..]);
        }
        dx
    }
}

impl Readout {
    pub(crate) fn forward(&self, h: &[f64], steps: usize) -> Vec<f64> {
        let (n_h, n_out) = (self.input_size, self.output_size);
        let mut y = vec![0.0; steps * n_out];
        for t in 0..steps {
            let ht = &h[t * n_h..(t + 1) * n_h];
            for j in 0..n_out {
                let row = &self.w[j * n_h..(j + 1) * n_h];
                y[t * n_out + j] = self.b[j] + row.iter().zip(ht).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        y
    }
}

/// Gradient buffers with the same layout as the trainable part of a
/// network: `layers[i]` belongs to recurrent layer `first_layer + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub first_layer: usize,
    pub layers: Vec<LstmLayer>,
    pub readout: Readout,
}

impl Gradients {
    pub fn zeros_like(net: &Network, first_layer: usize) -> Self {
        let zero_layer = |l: &LstmLayer| LstmLayer {
            input_size: l.input_size,
            hidden_size: l.hidden_size,
            w: vec![0.0; l.w.len()],
            b: vec![0.0; l.b.len()],
        };
        Self {
            first_layer,
            layers: net.layers[first_layer..].iter().map(zero_layer).collect(),
            readout: Readout {
                input_size: net.readout.input_size,
                output_size: net.readout.output_size,
                w: vec![0.0; net.readout.w.len()],
                b: vec![0.0; net.readout.b.len()],
            },
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.readout.w);
        out.push(&self.readout.b);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.readout.w);
        out.push(&mut self.readout.b);
        out
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn reset(&mut self) {
        self.scale(0.0);
    }
}

impl Network {
    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)`, where
    /// `fan_in` is `In + H` for gate rows and `H` for the readout.
    pub fn init(n_in: usize, hidden: usize, n_layers: usize, n_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..n_layers)
            .map(|l| {
                let input_size = if l == 0 { n_in } else { hidden };
                let fan_in = input_size + hidden;
                LstmLayer {
                    input_size,
                    hidden_size: hidden,
                    w: uniform_fill(&mut rng, 4 * hidden * fan_in, fan_in),
                    b: uniform_fill(&mut rng, 4 * hidden, fan_in),
                }
            })
            .collect();
        let readout = Readout {
            input_size: hidden,
            output_size: n_out,
            w: uniform_fill(&mut rng, n_out * hidden, hidden),
            b: uniform_fill(&mut rng, n_out, hidden),
        };
        Self { layers, readout }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size
    }

    pub fn output_size(&self) -> usize {
        self.readout.output_size
    }

    /// Shape consistency of the stack; `Err` names the first mismatch.
    pub fn check_shapes(&self) -> Result<(), String> {
        if self.layers.is_empty() {
            return Err("network has no recurrent layers".into());
        }
        let mut expected_in = self.layers[0].input_size;
        for (i, l) in self.layers.iter().enumerate() {
            if l.input_size != expected_in || l.hidden_size == 0 || l.input_size == 0 {
                return Err(format!("layer {i} input size {} does not match {expected_in}", l.input_size));
            }
            if l.w.len() != 4 * l.hidden_size * l.cols() || l.b.len() != 4 * l.hidden_size {
                return Err(format!("layer {i} weight arrays do not match its sizes"));
            }
            expected_in = l.hidden_size;
        }
        let r = &self.readout;
        if r.input_size != expected_in || r.output_size == 0 {
            return Err(format!("readout input size {} does not match {expected_in}", r.input_size));
        }
        if r.w.len() != r.input_size * r.output_size || r.b.len() != r.output_size {
            return Err("readout weight arrays do not match its sizes".into());
        }
        Ok(())
    }

    /// Layer outputs of layers `first..` starting from `inputs`, which must
    /// be the output of layer `first - 1` (or the network input).
    pub(crate) fn traces_from(&self, first: usize, inputs: &[f64], steps: usize) -> Vec<LayerTrace> {
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers.len() - first);
        for l in &self.layers[first..] {
            let trace = match traces.last() {
                Some(prev) => l.forward(&prev.h, steps),
                None => l.forward(inputs, steps),
            };
            traces.push(trace);
        }
        traces
    }

    /// Output of recurrent layer `last` (exclusive upper index) over a
    /// window, i.e. the input seen by layer `last`.
    pub(crate) fn hidden_until(&self, last: usize, inputs: &[f64], steps: usize) -> Vec<f64> {
        let mut x = inputs.to_vec();
        for l in &self.layers[..last] {
            x = l.forward(&x, steps).h;
        }
        x
    }

    /// Normalized-space predictions for a window (`T x In` in, `T x Out` out),
    /// starting from zero recurrent state.
    pub fn forward(&self, inputs: &[f64], steps: usize) -> Vec<f64> {
        let traces = self.traces_from(0, inputs, steps);
        self.readout.forward(&traces.last().expect("at least one layer").h, steps)
    }

    /// Mean absolute error of the window and its gradient w.r.t. the
    /// parameters of layers `first_layer..` and the readout. `inputs` is the
    /// input to layer `first_layer`.
    pub fn loss_and_grad_from(
        &self,
        first_layer: usize,
        inputs: &[f64],
        targets: &[f64],
        steps: usize,
        grad: &mut Gradients,
        weight: f64,
    ) -> f64 {
        debug_assert_eq!(grad.first_layer, first_layer);
        if first_layer == self.layers.len() {
            return self.readout_loss_and_grad(inputs, targets, steps, grad, weight);
        }
        let traces = self.traces_from(first_layer, inputs, steps);
        let top = &traces.last().expect("at least one trainable layer or cached input").h;
        let y = self.readout.forward(top, steps);
        let n_out = self.readout.output_size;
        let n_h = self.readout.input_size;
        let scale = weight / (steps * n_out) as f64;
        let mut loss = 0.0;
        let mut dh = vec![0.0; steps * n_h];
        for t in 0..steps {
            let ht = &top[t * n_h..(t + 1) * n_h];
            for j in 0..n_out {
                let r = y[t * n_out + j] - targets[t * n_out + j];
                loss += r.abs();
                let dy = scale * if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
                if dy == 0.0 {
                    continue;
                }
                grad.readout.b[j] += dy;
                let w_row = &self.readout.w[j * n_h..(j + 1) * n_h];
                let g_row = &mut grad.readout.w[j * n_h..(j + 1) * n_h];
                for k in 0..n_h {
                    g_row[k] += dy * ht[k];
                    dh[t * n_h + k] += dy * w_row[k];
                }
            }
        }
        for (idx, trace) in traces.iter().enumerate().rev() {
            let layer = &self.layers[first_layer + idx];
            let dx = layer.backward(trace, &dh, idx > 0, &mut grad.layers[idx]);
            if let Some(dx) = dx {
                dh = dx;
            }
        }
        weight * loss / (steps * n_out) as f64
    }

    /// Readout-only variant used when every recurrent layer is frozen;
    /// `hidden` is the cached top-layer output.
    fn readout_loss_and_grad(
        &self,
        hidden: &[f64],
        targets: &[f64],
        steps: usize,
        grad: &mut Gradients,
        weight: f64,
    ) -> f64 {
        let y = self.readout.forward(hidden, steps);
        let n_out = self.readout.output_size;
        let n_h = self.readout.input_size;
        let scale = weight / (steps * n_out) as f64;
        let mut loss = 0.0;
        for t in 0..steps {
            let ht = &hidden[t * n_h..(t + 1) * n_h];
            for j in 0..n_out {
                let r = y[t * n_out + j] - targets[t * n_out + j];
                loss += r.abs();
                let dy = scale * if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
                grad.readout.b[j] += dy;
                let g_row = &mut grad.readout.w[j * n_h..(j + 1) * n_h];
                for k in 0..n_h {
                    g_row[k] += dy * ht[k];
                }
            }
        }
        weight * loss / (steps * n_out) as f64
    }

    /// Mean absolute error and full gradient for one window.
    pub fn loss_and_grad(&self, inputs: &[f64], targets: &[f64], steps: usize) -> (f64, Gradients) {
        let mut grad = Gradients::zeros_like(self, 0);
        let loss = self.loss_and_grad_from(0, inputs, targets, steps, &mut grad, 1.0);
        (loss, grad)
    }

    pub fn loss(&self, inputs: &[f64], targets: &[f64], steps: usize) -> f64 {
        let y = self.forward(inputs, steps);
        y.iter().zip(targets).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
    }

    /// Trainable parameter slices of layers `first_layer..` and the readout,
    /// in the same order as [`Gradients::slices`].
    pub fn param_slices_mut(&mut self, first_layer: usize) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers[first_layer..] {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.readout.w);
        out.push(&mut self.readout.b);
        out
    }
}
