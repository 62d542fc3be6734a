//! Stacked-LSTM binary classifier.
//!
//! Each layer runs the standard cell (no peepholes):
//!
//! ```text
//! i = sigmoid(W_i x + U_i h + b_i)      f = sigmoid(W_f x + U_f h + b_f)
//! g = tanh(W_c x + U_c h + b_c)         o = sigmoid(W_o x + U_o h + b_o)
//! c' = f * c + i * g                    h' = o * tanh(c')
//! ```
//!
//! Layer `l` consumes the hidden sequence of layer `l - 1`. A dense sigmoid
//! head reads the top layer's last hidden state (or the time-mean of its
//! hidden states with [`Readout::MeanPool`]).
//!
//! All parameters live in one flat `Vec<f64>` in file order: for every
//! layer `W` (gates i, f, c, o stacked, each `H x D_in` row-major), then `U`
//! (`4H x H`), then the `4H` biases; then the head weights and bias.

pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, MODEL_MAGIC};

pub const GATE_NAMES: [&str; 4] = ["input", "forget", "cell", "output"];

/// Hidden widths used when none are configured.
pub const DEFAULT_HIDDEN: [usize; 4] = [128, 64, 32, 16];

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("truncated model file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("non-finite parameter at {0}")]
    NonFinite(String),
}

/// How the head summarizes the top layer's hidden sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    LastStep,
    MeanPool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
}

impl ModelDims {
    pub fn new(input: usize, hidden: impl Into<Vec<usize>>) -> Result<Self, ModelError> {
        let dims = Self { input, hidden: hidden.into() };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input == 0 {
            return Err(ModelError::InvalidDims("input width must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(ModelError::InvalidDims("at least one LSTM layer is required".into()));
        }
        if let Some(l) = self.hidden.iter().position(|&h| h == 0) {
            return Err(ModelError::InvalidDims(format!("layer {} has zero hidden units", l + 1)));
        }
        Ok(())
    }

    /// Input width of layer `l`.
    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.hidden[l - 1]
        }
    }

    pub fn top(&self) -> usize {
        *self.hidden.last().expect("validated dims")
    }

    /// `sum_l 4 (H_l D_l + H_l^2 + H_l) + H_top + 1`
    pub fn param_count(&self) -> usize {
        let lstm: usize = (0..self.hidden.len())
            .map(|l| {
                let (d, h) = (self.layer_input(l), self.hidden[l]);
                4 * (h * d + h * h + h)
            })
            .sum();
        lstm + self.top() + 1
    }

    fn layout(&self) -> Vec<LayerOffsets> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.hidden.len());
        for l in 0..self.hidden.len() {
            let (d, h) = (self.layer_input(l), self.hidden[l]);
            let w = offset;
            let u = w + 4 * h * d;
            let b = u + 4 * h * h;
            offset = b + 4 * h;
            out.push(LayerOffsets { input: d, hidden: h, w, u, b, end: offset });
        }
        out
    }

    fn head_offset(&self) -> usize {
        self.param_count() - self.top() - 1
    }

    /// Human-readable location of flat parameter `index`, e.g. `layer2.U.forget[3,1]`.
    pub fn param_path(&self, index: usize) -> String {
        for (l, o) in self.layout().iter().enumerate() {
            if index >= o.end {
                continue;
            }
            let (name, start, cols) = if index >= o.b {
                ("b", o.b, 1)
            } else if index >= o.u {
                ("U", o.u, o.hidden)
            } else {
                ("W", o.w, o.input)
            };
            let rel = index - start;
            let (row, col) = (rel / cols, rel % cols);
            let gate = GATE_NAMES[row / o.hidden];
            return if name == "b" {
                format!("layer{}.b.{gate}[{}]", l + 1, row % o.hidden)
            } else {
                format!("layer{}.{name}.{gate}[{},{col}]", l + 1, row % o.hidden)
            };
        }
        let head = self.head_offset();
        if index < head + self.top() {
            format!("head.w[{}]", index - head)
        } else {
            "head.b".to_string()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    input: usize,
    hidden: usize,
    w: usize,
    u: usize,
    b: usize,
    end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    readout: Readout,
    values: Vec<f64>,
}

impl ModelParams {
    /// Wraps a flat parameter vector laid out as described in the module docs.
    pub fn from_values(dims: ModelDims, readout: Readout, values: Vec<f64>) -> Result<Self, ModelError> {
        dims.validate()?;
        if values.len() != dims.param_count() {
            return Err(ModelError::Shape(format!(
                "{} parameters supplied, dims require {}",
                values.len(),
                dims.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(dims.param_path(i)));
        }
        Ok(Self { dims, readout, values })
    }

    pub fn zeros(dims: ModelDims, readout: Readout) -> Result<Self, ModelError> {
        let n = dims.param_count();
        Self::from_values(dims, readout, vec![0.0; n])
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn head_bias_mut(&mut self) -> &mut f64 {
        self.values.last_mut().expect("head bias")
    }

    fn head(&self) -> (&[f64], f64) {
        let start = self.dims.head_offset();
        let top = self.dims.top();
        (&self.values[start..start + top], self.values[start + top])
    }

    pub fn check_input(&self, width: usize) -> Result<(), ModelError> {
        if width != self.dims.input {
            return Err(ModelError::Shape(format!(
                "input width {width} does not match model input width {}",
                self.dims.input
            )));
        }
        Ok(())
    }
}

/// Seeded initialization: weights uniform in `+-1/sqrt(fan_in)`, forget-gate
/// biases 1, every other bias 0.
pub fn init_params(dims: &ModelDims, readout: Readout, seed: u64) -> Result<ModelParams, ModelError> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; dims.param_count()];
    let mut fill = |slice: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in slice {
            *v = rng.gen_range(-bound..bound);
        }
    };
    for o in dims.layout() {
        fill(&mut values[o.w..o.u], o.input);
        fill(&mut values[o.u..o.b], o.hidden);
        values[o.b + o.hidden..o.b + 2 * o.hidden].fill(1.0);
    }
    let head = dims.head_offset();
    fill(&mut values[head..head + dims.top()], dims.top());
    ModelParams::from_values(dims.clone(), readout, values)
}

/// Activations of one layer over the whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `T x 4H`: activated gates i, f, g, o per timestep.
    pub gates: Vec<f64>,
    /// `T x H` cell states.
    pub cells: Vec<f64>,
    /// `T x H` hidden states.
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub timesteps: usize,
    pub layers: Vec<LayerTrace>,
    /// Pre-sigmoid head output.
    pub logit: f64,
    pub probability: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs the network on a row-major `timesteps x input` sequence.
pub fn forward(params: &ModelParams, x: &[f64], timesteps: usize) -> Result<ForwardTrace, ModelError> {
    let dims = &params.dims;
    if timesteps == 0 || x.len() != timesteps * dims.input {
        return Err(ModelError::Shape(format!(
            "sequence of {} values is not {timesteps} timesteps of width {}",
            x.len(),
            dims.input
        )));
    }
    let mut layers = Vec::with_capacity(dims.hidden.len());
    for o in dims.layout() {
        let input: &[f64] = layers.last().map_or(x, |l: &LayerTrace| &l.hidden);
        let trace = layer_forward(params, &o, input, timesteps);
        layers.push(trace);
    }
    let top = dims.top();
    let last = &layers.last().expect("at least one layer").hidden;
    let (w_out, b_out) = params.head();
    let logit = match params.readout {
        Readout::LastStep => dot(w_out, &last[(timesteps - 1) * top..]) + b_out,
        Readout::MeanPool => {
            let mut mean = vec![0.0; top];
            for h in last.chunks_exact(top) {
                for (m, v) in mean.iter_mut().zip(h) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= timesteps as f64);
            dot(w_out, &mean) + b_out
        }
    };
    Ok(ForwardTrace { timesteps, layers, logit, probability: sigmoid(logit) })
}

fn layer_forward(params: &ModelParams, o: &LayerOffsets, input: &[f64], timesteps: usize) -> LayerTrace {
    let (d, h) = (o.input, o.hidden);
    let w = &params.values[o.w..o.u];
    let u = &params.values[o.u..o.b];
    let b = &params.values[o.b..o.end];
    let mut gates = vec![0.0; timesteps * 4 * h];
    let mut cells = vec![0.0; timesteps * h];
    let mut hidden = vec![0.0; timesteps * h];
    let zeros = vec![0.0; h];
    for t in 0..timesteps {
        let x_t = &input[t * d..(t + 1) * d];
        let (h_prev, c_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&hidden[(t - 1) * h..t * h], &cells[(t - 1) * h..t * h])
        };
        let mut a: Vec<f64> = (0..4 * h)
            .map(|r| b[r] + dot(&w[r * d..(r + 1) * d], x_t) + dot(&u[r * h..(r + 1) * h], h_prev))
            .collect();
        for (r, v) in a.iter_mut().enumerate() {
            *v = if r / h == 2 { v.tanh() } else { sigmoid(*v) };
        }
        let mut c_t = vec![0.0; h];
        let mut h_t = vec![0.0; h];
        for k in 0..h {
            let (i, f, g, og) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
            c_t[k] = f * c_prev[k] + i * g;
            h_t[k] = og * c_t[k].tanh();
        }
        gates[t * 4 * h..(t + 1) * 4 * h].copy_from_slice(&a);
        cells[t * h..(t + 1) * h].copy_from_slice(&c_t);
        hidden[t * h..(t + 1) * h].copy_from_slice(&h_t);
    }
    LayerTrace { gates, cells, hidden }
}

/// Gradient of the per-sample loss, laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self { values: vec![0.0; params.values.len()] }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Binary cross-entropy of one sample written in terms of the logit, so it
/// stays exact where the probability would round to 0 or 1.
pub fn logit_bce(logit: f64, label: f64) -> f64 {
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

/// Backpropagation through time for the BCE loss of one labelled sequence.
/// Uses `dL/dz = y_hat - y` at the head.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    x: &[f64],
    label: f64,
) -> Result<Gradients, ModelError> {
    let dims = &params.dims;
    let timesteps = trace.timesteps;
    let congruent = trace.layers.len() == dims.hidden.len()
        && x.len() == timesteps * dims.input
        && trace
            .layers
            .iter()
            .zip(&dims.hidden)
            .all(|(l, &h)| l.hidden.len() == timesteps * h && l.gates.len() == timesteps * 4 * h);
    if !congruent {
        return Err(ModelError::Shape("trace was not produced by these parameters and input".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let top = dims.top();
    let dz = trace.probability - label;

    let head = dims.head_offset();
    let (w_out, _) = params.head();
    let last = &trace.layers.last().expect("layer").hidden;
    let mut d_hidden = vec![0.0; timesteps * top];
    match params.readout {
        Readout::LastStep => {
            let h_last = &last[(timesteps - 1) * top..];
            for k in 0..top {
                grads.values[head + k] = dz * h_last[k];
                d_hidden[(timesteps - 1) * top + k] = dz * w_out[k];
            }
        }
        Readout::MeanPool => {
            let scale = dz / timesteps as f64;
            for t in 0..timesteps {
                for k in 0..top {
                    grads.values[head + k] += scale * last[t * top + k];
                    d_hidden[t * top + k] = scale * w_out[k];
                }
            }
        }
    }
    grads.values[head + top] = dz;

    let layout = dims.layout();
    for l in (0..layout.len()).rev() {
        let input: &[f64] = if l == 0 { x } else { &trace.layers[l - 1].hidden };
        d_hidden = layer_backward(params, &layout[l], &trace.layers[l], input, &d_hidden, l > 0, &mut grads);
    }
    Ok(grads)
}

/// Accumulates this layer's parameter gradients and returns the gradient
/// with respect to its input sequence (empty when `want_input` is false).
fn layer_backward(
    params: &ModelParams,
    o: &LayerOffsets,
    trace: &LayerTrace,
    input: &[f64],
    d_out: &[f64],
    want_input: bool,
    grads: &mut Gradients,
) -> Vec<f64> {
    let (d, h) = (o.input, o.hidden);
    let timesteps = trace.cells.len() / h;
    let w = &params.values[o.w..o.u];
    let u = &params.values[o.u..o.b];
    let mut d_input = if want_input { vec![0.0; timesteps * d] } else { Vec::new() };
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for t in (0..timesteps).rev() {
        let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        let c = &trace.cells[t * h..(t + 1) * h];
        let (c_prev, h_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&trace.cells[(t - 1) * h..t * h], &trace.hidden[(t - 1) * h..t * h])
        };
        for k in 0..h {
            let (i, f, cand, og) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let dh = d_out[t * h + k] + dh_next[k];
            let tc = c[k].tanh();
            let dc = dh * og * (1.0 - tc * tc) + dc_next[k];
            da[k] = dc * cand * i * (1.0 - i);
            da[h + k] = dc * c_prev[k] * f * (1.0 - f);
            da[2 * h + k] = dc * i * (1.0 - cand * cand);
            da[3 * h + k] = dh * tc * og * (1.0 - og);
            dc_next[k] = dc * f;
        }
        let x_t = &input[t * d..(t + 1) * d];
        let (gw, rest) = grads.values[o.w..o.end].split_at_mut(o.u - o.w);
        let (gu, gb) = rest.split_at_mut(o.b - o.u);
        for (r, &dar) in da.iter().enumerate() {
            gb[r] += dar;
            if dar == 0.0 {
                continue;
            }
            for (gv, xv) in gw[r * d..(r + 1) * d].iter_mut().zip(x_t) {
                *gv += dar * xv;
            }
            for (gv, hv) in gu[r * h..(r + 1) * h].iter_mut().zip(h_prev) {
                *gv += dar * hv;
            }
        }
        dh_next.fill(0.0);
        for (r, &dar) in da.iter().enumerate() {
            for (dn, uv) in dh_next.iter_mut().zip(&u[r * h..(r + 1) * h]) {
                *dn += dar * uv;
            }
        }
        if want_input {
            let dx = &mut d_input[t * d..(t + 1) * d];
            for (r, &dar) in da.iter().enumerate() {
                for (dv, wv) in dx.iter_mut().zip(&w[r * d..(r + 1) * d]) {
                    *dv += dar * wv;
                }
            }
        }
    }
    d_input
}

/// Probability that `x` is the enrolled pair.
pub fn predict(params: &ModelParams, x: &[f64], timesteps: usize) -> Result<f64, ModelError> {
    forward(params, x, timesteps).map(|t| t.probability)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let dims = ModelDims::new(8, vec![4, 4, 4, 4]).unwrap();
        // layer 1: 4 * (4*8 + 16 + 4) = 208; layers 2-4: 4 * (16 + 16 + 4) = 144 each; head 5
        assert_eq!(dims.param_count(), 208 + 3 * 144 + 5);
        assert_eq!(init_params(&dims, Readout::LastStep, 0).unwrap().values().len(), 645);
    }

    #[test]
    fn zero_hidden_width_is_rejected() {
        assert!(matches!(ModelDims::new(8, vec![4, 0, 4, 4]), Err(ModelError::InvalidDims(_))));
        assert!(ModelDims::new(0, vec![4]).is_err());
        assert!(ModelDims::new(3, vec![]).is_err());
    }

    #[test]
    fn init_is_seeded_with_unit_forget_bias() {
        let dims = ModelDims::new(6, vec![5, 3]).unwrap();
        let a = init_params(&dims, Readout::LastStep, 42).unwrap();
        let b = init_params(&dims, Readout::LastStep, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&dims, Readout::LastStep, 43).unwrap());
        let o = dims.layout()[0];
        assert_eq!(&a.values()[o.b..o.b + 5], &[0.0; 5]);
        assert_eq!(&a.values()[o.b + 5..o.b + 10], &[1.0; 5]);
        assert_eq!(&a.values()[o.b + 10..o.end], &[0.0; 10]);
        let bound = 1.0 / 6f64.sqrt();
        assert!(a.values()[o.w..o.u].iter().all(|v| v.abs() < bound));
        assert_eq!(*a.values().last().unwrap(), 0.0);
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let dims = ModelDims::new(3, vec![2, 2, 2, 2]).unwrap();
        let params = ModelParams::zeros(dims, Readout::LastStep).unwrap();
        let p = predict(&params, &random_input(12, 1), 4).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn head_bias_alone_sets_the_output() {
        let dims = ModelDims::new(3, vec![2, 2, 2, 2]).unwrap();
        let mut params = ModelParams::zeros(dims, Readout::LastStep).unwrap();
        *params.head_bias_mut() = 3.0;
        let p = predict(&params, &[0.0; 15], 5).unwrap();
        assert!((p - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.952_574_126_822_433_4).abs() < 1e-15);
    }

    #[test]
    fn swapping_timesteps_changes_the_output() {
        let dims = ModelDims::new(4, vec![6, 5, 4, 3]).unwrap();
        let params = init_params(&dims, Readout::LastStep, 7).unwrap();
        let x = random_input(4 * 6, 8);
        let mut swapped = x.clone();
        let (a, b) = swapped.split_at_mut(4);
        a.swap_with_slice(&mut b[..4]);
        assert_ne!(predict(&params, &x, 6).unwrap(), predict(&params, &swapped, 6).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dims = ModelDims::new(4, vec![3]).unwrap();
        let params = init_params(&dims, Readout::LastStep, 0).unwrap();
        assert!(matches!(forward(&params, &[0.0; 10], 2), Err(ModelError::Shape(_))));
        let trace = forward(&params, &[0.0; 8], 2).unwrap();
        assert!(matches!(backward(&params, &trace, &[0.0; 12], 1.0), Err(ModelError::Shape(_))));
    }

    #[test]
    fn matched_label_zeroes_the_head_gradient() {
        let dims = ModelDims::new(3, vec![4, 2]).unwrap();
        let params = init_params(&dims, Readout::LastStep, 5).unwrap();
        let x = random_input(9, 2);
        let trace = forward(&params, &x, 3).unwrap();
        let grads = backward(&params, &trace, &x, trace.probability).unwrap();
        assert!(grads.values.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn param_paths_name_every_region() {
        let dims = ModelDims::new(2, vec![3, 2]).unwrap();
        assert_eq!(dims.param_path(0), "layer1.W.input[0,0]");
        assert_eq!(dims.param_path(2 * 3 + 1), "layer1.W.forget[0,1]");
        assert_eq!(dims.param_path(24), "layer1.U.input[0,0]");
        assert_eq!(dims.param_path(24 + 36 + 3), "layer1.b.forget[0]");
        let n = dims.param_count();
        assert_eq!(dims.param_path(n - 1), "head.b");
        assert_eq!(dims.param_path(n - 2), "head.w[1]");
    }

    /// Central-difference oracle over the logit-form loss.
    pub(crate) fn finite_difference(params: &ModelParams, x: &[f64], t: usize, y: f64, step: f64) -> Vec<f64> {
        let mut probe = params.clone();
        (0..params.values().len())
            .map(|i| {
                let base = probe.values[i];
                probe.values[i] = base + step;
                let plus = logit_bce(forward(&probe, x, t).unwrap().logit, y);
                probe.values[i] = base - step;
                let minus = logit_bce(forward(&probe, x, t).unwrap().logit, y);
                probe.values[i] = base;
                (plus - minus) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences_for_both_readouts() {
        let dims = ModelDims::new(6, vec![5, 4, 3, 2]).unwrap();
        for readout in [Readout::LastStep, Readout::MeanPool] {
            for (seed, label) in [(1u64, 1.0), (2, 0.0)] {
                let params = init_params(&dims, readout, seed).unwrap();
                let x = random_input(6 * 7, seed + 100);
                let trace = forward(&params, &x, 7).unwrap();
                let analytic = backward(&params, &trace, &x, label).unwrap();
                let numeric = finite_difference(&params, &x, 7, label, 1e-5);
                for (i, (a, n)) in analytic.values.iter().zip(&numeric).enumerate() {
                    let scale = a.abs().max(n.abs()).max(1e-7);
                    assert!((a - n).abs() / scale < 1e-4, "{readout:?} {}: {a} vs {n}", dims.param_path(i));
                }
            }
        }
    }

    #[test]
    fn lower_layers_influence_top_layer_gradients() {
        let dims = ModelDims::new(6, vec![5, 4, 3, 2]).unwrap();
        let params = init_params(&dims, Readout::LastStep, 9).unwrap();
        let x = random_input(6 * 7, 10);
        let grads = |p: &ModelParams| backward(p, &forward(p, &x, 7).unwrap(), &x, 1.0).unwrap();
        let before = grads(&params);
        let mut nudged = params.clone();
        nudged.values_mut()[0] += 0.05;
        let after = grads(&nudged);
        let o = dims.layout()[3];
        assert!(before.values[o.w..o.end] != after.values[o.w..o.end]);
    }
}
