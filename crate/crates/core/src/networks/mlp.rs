use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{uniform_fill, Algebra, Segment};
use crate::{Error, Result};

/// Fully connected tanh network. Layer `l` stores its `out×in` weight matrix
/// row-major followed by its bias vector; layers are concatenated in order.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    widths: Vec<usize>,
    flat: Vec<f64>,
}

pub(crate) fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths[0] != 2 || widths[widths.len() - 1] != 1 || widths.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "widths must start with 2, end with 1 and be positive (got {widths:?})"
        )));
    }
    Ok(())
}

pub(crate) fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    pub fn unflatten(widths: &[usize], flat: Vec<f64>) -> Result<Self> {
        check_widths(widths)?;
        let expected = param_count(widths);
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: flat.len(),
            });
        }
        Ok(Self {
            widths: widths.to_vec(),
            flat,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.flat.clone()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
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

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// Flat offset of layer `l`'s weight matrix; its bias follows at `+ out·in`.
    pub fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.widths[..=l])
    }

    pub fn weight(&self, l: usize, out: usize, inp: usize) -> f64 {
        self.flat[self.layer_offset(l) + out * self.widths[l] + inp]
    }

    pub fn bias(&self, l: usize, out: usize) -> f64 {
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        self.flat[self.layer_offset(l) + fan_in * fan_out + out]
    }
}

/// Glorot-uniform weights, zero biases.
pub fn mlp_init(widths: &[usize], seed: u64) -> Result<MlpParams> {
    check_widths(widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = vec![0.0; param_count(widths)];
    let mut offset = 0;
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        uniform_fill(&mut rng, &mut flat[offset..offset + fan_in * fan_out], limit);
        offset += fan_in * fan_out + fan_out;
    }
    MlpParams::unflatten(widths, flat)
}

/// Affine→tanh over the hidden layers, then a final affine map.
pub fn mlp_forward<A: Algebra>(params: &MlpParams, alg: &mut A, a: A::Value, t: A::Value) -> A::Value {
    let mut current = vec![a, t];
    let mut next = Vec::new();
    let mut offset = 0;
    let layers = params.layer_count();
    for l in 0..layers {
        let (fan_in, fan_out) = (params.widths[l], params.widths[l + 1]);
        let bias_offset = offset + fan_in * fan_out;
        next.clear();
        for o in 0..fan_out {
            let row = offset + o * fan_in;
            let seg = Segment {
                offset: row,
                weights: &params.flat[row..row + fan_in],
                inputs: &current,
            };
            let z = alg.affine((bias_offset + o, params.flat[bias_offset + o]), &[seg]);
            next.push(if l + 1 < layers { alg.tanh(z) } else { z });
        }
        std::mem::swap(&mut current, &mut next);
        offset = bias_offset + fan_out;
    }
    current[0]
}
