use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{uniform_fill, Algebra, Dropout, Segment};
use crate::{Error, Result};

/// Gate order inside each layer's parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Candidate,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];

    fn index(self) -> usize {
        self as usize
    }
}

/// Stacked LSTM with a dense `hidden → 1` head.
///
/// Layer block layout, for each gate in [`Gate::ALL`] order: input weights
/// (`hidden × in`, row-major), recurrent weights (`hidden × hidden`), bias
/// (`hidden`). The head's weights and bias follow the last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    num_layers: usize,
    hidden: usize,
    flat: Vec<f64>,
}

const INPUT_WIDTH: usize = 2;

pub(crate) fn check_shape(layers: usize, hidden: usize) -> Result<()> {
    if layers == 0 || hidden == 0 {
        return Err(Error::InvalidArgument(format!(
            "LSTM needs at least one layer and one unit (got {layers}×{hidden})"
        )));
    }
    Ok(())
}

fn input_width(layer: usize, hidden: usize) -> usize {
    if layer == 0 {
        INPUT_WIDTH
    } else {
        hidden
    }
}

fn gate_block(in_w: usize, hidden: usize) -> usize {
    hidden * in_w + hidden * hidden + hidden
}

pub(crate) fn param_count(layers: usize, hidden: usize) -> usize {
    (0..layers)
        .map(|l| 4 * gate_block(input_width(l, hidden), hidden))
        .sum::<usize>()
        + hidden
        + 1
}

/// Offsets of one gate's parameters inside the flat vector.
#[derive(Clone, Copy, Debug)]
struct GateOffsets {
    input: usize,
    recurrent: usize,
    bias: usize,
}

impl LstmParams {
    pub fn unflatten(num_layers: usize, hidden: usize, flat: Vec<f64>) -> Result<Self> {
        check_shape(num_layers, hidden)?;
        let expected = param_count(num_layers, hidden);
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: flat.len(),
            });
        }
        Ok(Self {
            num_layers,
            hidden,
            flat,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.flat.clone()
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.flat
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn param_count(&self) -> usize {
        self.flat.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer)
            .map(|l| 4 * gate_block(input_width(l, self.hidden), self.hidden))
            .sum()
    }

    fn gate(&self, layer: usize, gate: Gate) -> GateOffsets {
        let in_w = input_width(layer, self.hidden);
        let h = self.hidden;
        let input = self.layer_offset(layer) + gate.index() * gate_block(in_w, h);
        GateOffsets {
            input,
            recurrent: input + h * in_w,
            bias: input + h * in_w + h * h,
        }
    }

    fn head_offset(&self) -> usize {
        self.layer_offset(self.num_layers)
    }

    pub fn input_weight(&self, layer: usize, gate: Gate, unit: usize, k: usize) -> f64 {
        let in_w = input_width(layer, self.hidden);
        self.flat[self.gate(layer, gate).input + unit * in_w + k]
    }

    pub fn recurrent_weight(&self, layer: usize, gate: Gate, unit: usize, k: usize) -> f64 {
        self.flat[self.gate(layer, gate).recurrent + unit * self.hidden + k]
    }

    pub fn bias(&self, layer: usize, gate: Gate, unit: usize) -> f64 {
        self.flat[self.gate(layer, gate).bias + unit]
    }

    pub fn head_weight(&self, k: usize) -> f64 {
        self.flat[self.head_offset() + k]
    }

    pub fn head_bias(&self) -> f64 {
        self.flat[self.head_offset() + self.hidden]
    }

    /// One canonical LSTM step for `layer`. `state` is the previous `(h, c)`;
    /// `None` is the zero state, for which the recurrent and forget terms vanish.
    fn cell<A: Algebra>(
        &self,
        alg: &mut A,
        layer: usize,
        x: &[A::Value],
        state: Option<(&[A::Value], &[A::Value])>,
    ) -> (Vec<A::Value>, Vec<A::Value>) {
        let h = self.hidden;
        let in_w = x.len();
        let pre = |alg: &mut A, gate: Gate, u: usize| {
            let g = self.gate(layer, gate);
            let wi = g.input + u * in_w;
            let input = Segment {
                offset: wi,
                weights: &self.flat[wi..wi + in_w],
                inputs: x,
            };
            let bias = (g.bias + u, self.flat[g.bias + u]);
            match state {
                Some((h_prev, _)) => {
                    let wr = g.recurrent + u * h;
                    let recurrent = Segment {
                        offset: wr,
                        weights: &self.flat[wr..wr + h],
                        inputs: h_prev,
                    };
                    alg.affine(bias, &[input, recurrent])
                }
                None => alg.affine(bias, &[input]),
            }
        };
        let mut h_next = Vec::with_capacity(h);
        let mut c_next = Vec::with_capacity(h);
        for u in 0..h {
            let z = pre(alg, Gate::Input, u);
            let i = alg.sigmoid(z);
            let z = pre(alg, Gate::Candidate, u);
            let g = alg.tanh(z);
            let z = pre(alg, Gate::Output, u);
            let o = alg.sigmoid(z);
            let mut c = alg.mul(i, g);
            if let Some((_, c_prev)) = state {
                let z = pre(alg, Gate::Forget, u);
                let f = alg.sigmoid(z);
                let kept = alg.mul(f, c_prev[u]);
                c = alg.add(kept, c);
            }
            let tc = alg.tanh(c);
            h_next.push(alg.mul(o, tc));
            c_next.push(c);
        }
        (h_next, c_next)
    }

    /// Runs the stack over an input sequence from the zero state and maps the
    /// final hidden state through the head.
    fn run<A: Algebra>(&self, alg: &mut A, steps: &[[A::Value; 2]], dropout: &mut Dropout) -> A::Value {
        let mut states: Vec<Option<(Vec<A::Value>, Vec<A::Value>)>> = vec![None; self.num_layers];
        let mut top = Vec::new();
        for step in steps {
            let mut x: Vec<A::Value> = step.to_vec();
            for l in 0..self.num_layers {
                let prev = states[l].as_ref().map(|(h, c)| (h.as_slice(), c.as_slice()));
                let (h, c) = self.cell(alg, l, &x, prev);
                states[l] = Some((h.clone(), c));
                x = h;
                if l + 1 < self.num_layers && !dropout.is_identity() {
                    for v in x.iter_mut() {
                        let m = dropout.factor();
                        *v = alg.scale(*v, m);
                    }
                }
            }
            top = x;
        }
        let head = self.head_offset();
        let seg = Segment {
            offset: head,
            weights: &self.flat[head..head + self.hidden],
            inputs: &top,
        };
        let b = head + self.hidden;
        alg.affine((b, self.flat[b]), &[seg])
    }
}

/// Weights uniform in `±1/√hidden`, forget-gate biases `+1`, other biases zero.
pub fn lstm_init(num_layers: usize, hidden: usize, seed: u64) -> Result<LstmParams> {
    check_shape(num_layers, hidden)?;
    let mut p = LstmParams::unflatten(num_layers, hidden, vec![0.0; param_count(num_layers, hidden)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = 1.0 / (hidden as f64).sqrt();
    for l in 0..num_layers {
        for gate in Gate::ALL {
            let g = p.gate(l, gate);
            uniform_fill(&mut rng, &mut p.flat[g.input..g.bias], limit);
            if gate == Gate::Forget {
                p.flat[g.bias..g.bias + hidden].fill(1.0);
            }
        }
    }
    let head = p.head_offset();
    uniform_fill(&mut rng, &mut p.flat[head..head + hidden], limit);
    Ok(p)
}

/// Evaluates `P̂(â, τ)` with `(â, τ)` as a length-one sequence.
pub fn lstm_forward<A: Algebra>(
    params: &LstmParams,
    alg: &mut A,
    a: A::Value,
    t: A::Value,
    dropout: &mut Dropout,
) -> A::Value {
    params.run(alg, &[[a, t]], dropout)
}

/// Sigmoid gates in the stack: input, forget and output per unit per layer.
pub fn gate_count(params: &LstmParams) -> usize {
    params.num_layers * params.hidden * 3
}
