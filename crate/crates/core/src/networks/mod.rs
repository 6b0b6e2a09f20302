//! Surrogates for the normalized density `P̂(â, τ)`.
//!
//! Both networks write their forward pass once against [`Algebra`], which is
//! implemented for plain evaluation ([`Eval<f64>`], [`Eval<Dual2>`]) and for
//! recording onto a [`Tape`].

mod lstm;
mod mlp;

use std::fmt;
use std::marker::PhantomData;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{seed_inputs, Dual2, NodeId, Scalar, Tape};
use crate::{Error, Result};

pub use lstm::{gate_count, lstm_forward, lstm_init, Gate, LstmParams};
pub use mlp::{mlp_forward, mlp_init, MlpParams};

/// A weight row in the flat parameter vector together with the values it multiplies.
pub struct Segment<'a, V> {
    /// Flat index of `weights[0]`.
    pub offset: usize,
    pub weights: &'a [f64],
    pub inputs: &'a [V],
}

/// Arithmetic a network forward pass is written against.
pub trait Algebra {
    type Value: Copy;

    fn constant(&mut self, value: f64) -> Self::Value;
    /// `bias + Σ weights·inputs`, bias and weights being parameters.
    fn affine(&mut self, bias: (usize, f64), segments: &[Segment<'_, Self::Value>]) -> Self::Value;
    fn add(&mut self, x: Self::Value, y: Self::Value) -> Self::Value;
    fn mul(&mut self, x: Self::Value, y: Self::Value) -> Self::Value;
    fn scale(&mut self, x: Self::Value, c: f64) -> Self::Value;
    fn tanh(&mut self, x: Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: Self::Value) -> Self::Value;
}

/// Direct evaluation in a [`Scalar`] type.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eval<T>(PhantomData<T>);

impl<T> Eval<T> {
    pub fn new() -> Self {
        Self(PhantomData)
    }
}

impl<T: Scalar> Algebra for Eval<T> {
    type Value = T;

    fn constant(&mut self, value: f64) -> T {
        T::constant(value)
    }

    #[inline]
    fn affine(&mut self, bias: (usize, f64), segments: &[Segment<'_, T>]) -> T {
        let mut acc = T::constant(bias.1);
        for s in segments {
            for (&w, &x) in s.weights.iter().zip(s.inputs) {
                acc += x.scale(w);
            }
        }
        acc
    }

    fn add(&mut self, x: T, y: T) -> T {
        x + y
    }
    fn mul(&mut self, x: T, y: T) -> T {
        x * y
    }
    fn scale(&mut self, x: T, c: f64) -> T {
        x.scale(c)
    }
    fn tanh(&mut self, x: T) -> T {
        x.tanh()
    }
    fn sigmoid(&mut self, x: T) -> T {
        x.sigmoid()
    }
}

impl<T: Scalar> Algebra for Tape<T> {
    type Value = NodeId;

    fn constant(&mut self, value: f64) -> NodeId {
        self.leaf(T::constant(value))
    }

    fn affine(&mut self, bias: (usize, f64), segments: &[Segment<'_, NodeId>]) -> NodeId {
        match segments {
            [s] => Tape::affine(self, bias, &[(s.offset, s.weights, s.inputs)]),
            _ => {
                let parts: Vec<_> = segments.iter().map(|s| (s.offset, s.weights, s.inputs)).collect();
                Tape::affine(self, bias, &parts)
            }
        }
    }

    fn add(&mut self, x: NodeId, y: NodeId) -> NodeId {
        Tape::add(self, x, y)
    }
    fn mul(&mut self, x: NodeId, y: NodeId) -> NodeId {
        Tape::mul(self, x, y)
    }
    fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        Tape::scale(self, x, c)
    }
    fn tanh(&mut self, x: NodeId) -> NodeId {
        Tape::tanh(self, x)
    }
    fn sigmoid(&mut self, x: NodeId) -> NodeId {
        Tape::sigmoid(self, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout. One mask entry is drawn per unit per forward pass; the
/// same factor multiplies the value and both tangents.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    mode: DropoutMode,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    /// Evaluation mode: an exact identity.
    pub fn eval() -> Self {
        Self {
            rate: 0.0,
            mode: DropoutMode::Eval,
            rng: None,
        }
    }

    pub fn train(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self {
            rate,
            mode: DropoutMode::Train,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn mode(&self) -> DropoutMode {
        self.mode
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Next mask factor: `0` or `1/(1-rate)` in train mode, `1` otherwise.
    pub fn factor(&mut self) -> f64 {
        match (&mut self.rng, self.mode) {
            (Some(rng), DropoutMode::Train) if self.rate > 0.0 => {
                if rng.gen::<f64>() < self.rate {
                    0.0
                } else {
                    1.0 / (1.0 - self.rate)
                }
            }
            _ => 1.0,
        }
    }

    pub(crate) fn is_identity(&self) -> bool {
        self.mode == DropoutMode::Eval || self.rate == 0.0
    }
}

/// Which surrogate family a checkpoint or run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Mlp,
    Lstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" | "pinn" => Ok(ModelKind::Mlp),
            "lstm" | "lstm-pinn" => Ok(ModelKind::Lstm),
            other => Err(Error::InvalidArgument(format!(
                "unknown model '{other}' (expected pinn or lstm-pinn)"
            ))),
        }
    }
}

/// Shape of a surrogate, enough to rebuild an empty parameter container.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    Mlp { widths: Vec<usize> },
    Lstm { layers: usize, hidden: usize },
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Mlp { .. } => ModelKind::Mlp,
            Architecture::Lstm { .. } => ModelKind::Lstm,
        }
    }

    pub fn param_count(&self) -> Result<usize> {
        match self {
            Architecture::Mlp { widths } => {
                mlp::check_widths(widths)?;
                Ok(mlp::param_count(widths))
            }
            Architecture::Lstm { layers, hidden } => {
                lstm::check_shape(*layers, *hidden)?;
                Ok(lstm::param_count(*layers, *hidden))
            }
        }
    }
}

/// Full-size shapes: a `[2, 128, 128, 64, 1]` perceptron and a 4×64 LSTM.
pub fn default_architecture(kind: ModelKind) -> Architecture {
    match kind {
        ModelKind::Mlp => Architecture::Mlp {
            widths: vec![2, 128, 128, 64, 1],
        },
        ModelKind::Lstm => Architecture::Lstm { layers: 4, hidden: 64 },
    }
}

/// Either surrogate, owning its flat parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Mlp(MlpParams),
    Lstm(LstmParams),
}

impl Model {
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        Ok(match arch {
            Architecture::Mlp { widths } => Model::Mlp(mlp_init(widths, seed)?),
            Architecture::Lstm { layers, hidden } => Model::Lstm(lstm_init(*layers, *hidden, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Mlp(p) => Architecture::Mlp {
                widths: p.widths().to_vec(),
            },
            Model::Lstm(p) => Architecture::Lstm {
                layers: p.num_layers(),
                hidden: p.hidden(),
            },
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params().to_vec()
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Mlp(p) => p.params(),
            Model::Lstm(p) => p.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Mlp(p) => p.params_mut(),
            Model::Lstm(p) => p.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Rebuilds a model of the given architecture from a flat vector.
    pub fn unflatten(arch: &Architecture, flat: Vec<f64>) -> Result<Self> {
        Ok(match arch {
            Architecture::Mlp { widths } => Model::Mlp(MlpParams::unflatten(widths, flat)?),
            Architecture::Lstm { layers, hidden } => {
                Model::Lstm(LstmParams::unflatten(*layers, *hidden, flat)?)
            }
        })
    }

    /// Forward pass in any algebra. The MLP ignores `dropout`.
    pub fn forward<A: Algebra>(
        &self,
        alg: &mut A,
        a: A::Value,
        t: A::Value,
        dropout: &mut Dropout,
    ) -> A::Value {
        match self {
            Model::Mlp(p) => mlp_forward(p, alg, a, t),
            Model::Lstm(p) => lstm_forward(p, alg, a, t, dropout),
        }
    }

    /// Whether training-mode forward passes draw random masks.
    pub fn uses_dropout(&self, rate: f64) -> bool {
        matches!(self, Model::Lstm(p) if p.num_layers() > 1) && rate > 0.0
    }
}

/// Anything that can be evaluated as a density with input tangents.
pub trait Surrogate {
    fn eval_dual(&self, a: Dual2, t: Dual2) -> Dual2;

    fn eval(&self, a_norm: f64, t_norm: f64) -> f64 {
        let (a, t) = seed_inputs(a_norm, t_norm);
        self.eval_dual(a, t).value
    }
}

impl Surrogate for Model {
    fn eval_dual(&self, a: Dual2, t: Dual2) -> Dual2 {
        self.forward(&mut Eval::<Dual2>::new(), a, t, &mut Dropout::eval())
    }

    fn eval(&self, a_norm: f64, t_norm: f64) -> f64 {
        self.forward(&mut Eval::<f64>::new(), a_norm, t_norm, &mut Dropout::eval())
    }
}

impl<F: Fn(Dual2, Dual2) -> Dual2> Surrogate for F {
    fn eval_dual(&self, a: Dual2, t: Dual2) -> Dual2 {
        self(a, t)
    }
}

/// Uniform draws in `±limit`.
pub(crate) fn uniform_fill(rng: &mut ChaCha8Rng, out: &mut [f64], limit: f64) {
    for w in out {
        *w = rng.gen_range(-limit..=limit);
    }
}
