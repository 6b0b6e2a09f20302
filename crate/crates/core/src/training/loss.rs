//! The three collocation losses and their parameter gradients.
//!
//! Residuals are physical: input tangents of the surrogate are taken with
//! respect to normalized age and time, then rescaled by `1/a0` and
//! `1/(t_max − t_min)` so the residual is that of
//! `∂P/∂t + α·∂P/∂a + μ(a)·P` in years.

use rayon::prelude::*;

use crate::autodiff::{seed_inputs, Dual2, Scalar, Tape};
use crate::demography::{Domain, Problem};
use crate::networks::{Dropout, Model, Surrogate};
use crate::training::sampling::{mix, PointKind};
use crate::{Error, Result};

/// Weights of the composite loss and the initial-condition stabilizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub epsilon0: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            epsilon0: 1e-2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda1, self.lambda2, self.lambda3];
        if l.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || l.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite, nonnegative and not all zero (got {l:?})"
            )));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon0 must be positive (got {})", self.epsilon0)));
        }
        Ok(())
    }
}

/// Mean-squared PDE, initial-condition and boundary losses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

/// `λ1·L1 + λ2·L2 + λ3·L3`.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> f64 {
    weights.lambda1 * components.pde + weights.lambda2 * components.ic + weights.lambda3 * components.bc
}

/// Coefficients turning the dual output `(P̂, ∂P̂/∂â, ∂P̂/∂τ)` into the residual.
#[derive(Clone, Copy, Debug)]
struct ResidualMap {
    value: f64,
    da: f64,
    dt: f64,
}

impl ResidualMap {
    fn at(problem: &Problem, a_norm: f64) -> Self {
        let d: &Domain = &problem.domain;
        Self {
            value: problem.mu(d.age(a_norm)),
            da: d.alpha / d.a0,
            dt: 1.0 / d.span(),
        }
    }

    fn apply(&self, p: Dual2) -> f64 {
        self.dt * p.dt + self.da * p.da + self.value * p.value
    }
}

/// PDE residual of `model` at a normalized point.
pub fn pde_residual(model: &impl Surrogate, a_norm: f64, t_norm: f64, problem: &Problem) -> Result<f64> {
    let (a, t) = seed_inputs(a_norm, t_norm);
    let r = ResidualMap::at(problem, a_norm).apply(model.eval_dual(a, t));
    if !r.is_finite() {
        return Err(Error::non_finite(format!("PDE residual at (â={a_norm}, τ={t_norm})")));
    }
    Ok(r)
}

fn nonempty<T>(batch: &[T], what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(format!("empty {what} batch")));
    }
    Ok(())
}

/// Mean of squared residuals over `(â, τ)` points.
pub fn loss_pde(model: &impl Surrogate, batch: &[(f64, f64)], problem: &Problem) -> Result<f64> {
    nonempty(batch, "interior")?;
    let mut sum = 0.0;
    for &(a, t) in batch {
        let r = pde_residual(model, a, t, problem)?;
        sum += r * r;
    }
    Ok(sum / batch.len() as f64)
}

/// Mean of `((P̂(â,0) − P₀(a)) / (P₀(a) + ε₀))²` over normalized ages.
pub fn loss_ic(model: &impl Surrogate, ages: &[f64], problem: &Problem, epsilon0: f64) -> Result<f64> {
    nonempty(ages, "initial")?;
    let mut sum = 0.0;
    for &a in ages {
        let p0 = problem.initial(problem.domain.age(a))?;
        let e = (model.eval(a, 0.0) - p0) / (p0 + epsilon0);
        if !e.is_finite() {
            return Err(Error::non_finite(format!("initial-condition term at â={a}")));
        }
        sum += e * e;
    }
    Ok(sum / ages.len() as f64)
}

/// Mean of `(P̂(0,τ) − ∫ b(a,t)·P̂(a,τ) da)²` over normalized times.
pub fn loss_bc(model: &impl Surrogate, times: &[f64], problem: &Problem) -> Result<f64> {
    nonempty(times, "boundary")?;
    let d = problem.domain;
    let mut sum = 0.0;
    for &t in times {
        let births = crate::demography::birth_integral(
            |a| model.eval(d.a_norm(a), t),
            d.year(t),
            problem.births,
            &problem.quadrature,
        )?;
        let e = model.eval(0.0, t) - births;
        if !e.is_finite() {
            return Err(Error::non_finite(format!("boundary term at τ={t}")));
        }
        sum += e * e;
    }
    Ok(sum / times.len() as f64)
}

/// One epoch's collocation points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batches {
    pub interior: Vec<(f64, f64)>,
    pub initial: Vec<f64>,
    pub boundary: Vec<f64>,
}

/// How per-sample dropout masks are drawn during a gradient evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskPlan {
    Off,
    /// Train-mode masks keyed by `(seed, epoch, kind, sample)`.
    Train { rate: f64, seed: u64, epoch: usize },
}

impl MaskPlan {
    fn dropout(&self, kind: PointKind, sample: usize) -> Dropout {
        match *self {
            MaskPlan::Off => Dropout::eval(),
            MaskPlan::Train { rate, seed, epoch } => {
                let key = mix(mix(mix(seed ^ 0xD1B5_4A32_D192_ED03) ^ epoch as u64) ^ kind.tag()) ^ sample as u64;
                Dropout::train(rate, mix(key)).expect("rate validated by the caller")
            }
        }
    }
}

const CHUNK: usize = 128;

struct Partial {
    sum: f64,
    grad: Vec<f64>,
}

/// Evaluates the three losses and `∂(total)/∂θ` for `model` on `batches`.
///
/// Work is split into fixed chunks whose partial sums are reduced in chunk
/// order, so the result does not depend on `pool`.
pub fn loss_and_gradient(
    model: &Model,
    problem: &Problem,
    batches: &Batches,
    weights: &LossWeights,
    masks: MaskPlan,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(LossComponents, Vec<f64>)> {
    nonempty(&batches.interior, "interior")?;
    nonempty(&batches.initial, "initial")?;
    nonempty(&batches.boundary, "boundary")?;
    let n = model.param_count();
    let mut tasks = Vec::new();
    for kind in PointKind::ALL {
        let len = match kind {
            PointKind::Interior => batches.interior.len(),
            PointKind::Initial => batches.initial.len(),
            PointKind::Boundary => batches.boundary.len(),
        };
        for start in (0..len).step_by(CHUNK) {
            tasks.push((kind, start, (start + CHUNK).min(len)));
        }
    }
    let run = |&(kind, lo, hi): &(PointKind, usize, usize)| -> Result<Partial> {
        let mut part = Partial {
            sum: 0.0,
            grad: vec![0.0; n],
        };
        match kind {
            PointKind::Interior => interior_chunk(model, problem, &batches.interior, lo, hi, masks, &mut part)?,
            PointKind::Initial => {
                initial_chunk(model, problem, &batches.initial, lo, hi, weights.epsilon0, masks, &mut part)?
            }
            PointKind::Boundary => boundary_chunk(model, problem, &batches.boundary, lo, hi, masks, &mut part)?,
        }
        Ok(part)
    };
    let partials: Vec<Result<Partial>> = match pool {
        Some(pool) => pool.install(|| tasks.par_iter().map(run).collect()),
        None => tasks.iter().map(run).collect(),
    };

    let mut sums = [0.0; 3];
    let mut grads = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for ((kind, _, _), part) in tasks.iter().zip(partials) {
        let part = part?;
        let k = kind.tag() as usize;
        sums[k] += part.sum;
        for (g, p) in grads[k].iter_mut().zip(&part.grad) {
            *g += p;
        }
    }
    let counts = [batches.interior.len(), batches.initial.len(), batches.boundary.len()].map(|c| c as f64);
    let components = LossComponents {
        pde: sums[0] / counts[0],
        ic: sums[1] / counts[1],
        bc: sums[2] / counts[2],
    };
    let scale = [
        weights.lambda1 / counts[0],
        weights.lambda2 / counts[1],
        weights.lambda3 / counts[2],
    ];
    let mut grad = vec![0.0; n];
    for (k, g) in grads.iter().enumerate() {
        for (out, v) in grad.iter_mut().zip(g) {
            *out += scale[k] * v;
        }
    }
    Ok((components, grad))
}

fn interior_chunk(
    model: &Model,
    problem: &Problem,
    points: &[(f64, f64)],
    lo: usize,
    hi: usize,
    masks: MaskPlan,
    part: &mut Partial,
) -> Result<()> {
    let mut tape = Tape::<Dual2>::new(model.param_count());
    let mut scratch = Vec::new();
    for (idx, &(a_norm, t_norm)) in points.iter().enumerate().take(hi).skip(lo) {
        tape.clear();
        let (a, t) = seed_inputs(a_norm, t_norm);
        let (ai, ti) = (tape.leaf(a), tape.leaf(t));
        let out = model.forward(&mut tape, ai, ti, &mut masks.dropout(PointKind::Interior, idx));
        let map = ResidualMap::at(problem, a_norm);
        let r = map.apply(tape.value(out));
        if !r.is_finite() {
            return Err(Error::non_finite(format!("PDE residual at (â={a_norm}, τ={t_norm})")));
        }
        part.sum += r * r;
        let two_r = 2.0 * r;
        tape.backward_with(out, Dual2::ONE, &mut scratch, |k, adj| {
            part.grad[k] += two_r * map.apply(adj);
        })?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn initial_chunk(
    model: &Model,
    problem: &Problem,
    ages: &[f64],
    lo: usize,
    hi: usize,
    epsilon0: f64,
    masks: MaskPlan,
    part: &mut Partial,
) -> Result<()> {
    let mut tape = Tape::<f64>::new(model.param_count());
    let mut scratch = Vec::new();
    for (idx, &a_norm) in ages.iter().enumerate().take(hi).skip(lo) {
        tape.clear();
        let (ai, ti) = (tape.leaf(a_norm), tape.leaf(0.0));
        let out = model.forward(&mut tape, ai, ti, &mut masks.dropout(PointKind::Initial, idx));
        let p0 = problem.initial(problem.domain.age(a_norm))?;
        let denom = p0 + epsilon0;
        let e = (tape.value(out) - p0) / denom;
        if !e.is_finite() {
            return Err(Error::non_finite(format!("initial-condition term at â={a_norm}")));
        }
        part.sum += e * e;
        tape.backward_with(out, 2.0 * e / denom, &mut scratch, |k, adj| part.grad[k] += adj)?;
    }
    Ok(())
}

fn boundary_chunk(
    model: &Model,
    problem: &Problem,
    times: &[f64],
    lo: usize,
    hi: usize,
    masks: MaskPlan,
    part: &mut Partial,
) -> Result<()> {
    let d = problem.domain;
    let mut tape = Tape::<f64>::new(model.param_count());
    let mut scratch = Vec::new();
    let mut terms = Vec::with_capacity(problem.quadrature.len() + 1);
    for (idx, &t_norm) in times.iter().enumerate().take(hi).skip(lo) {
        tape.clear();
        terms.clear();
        let mut dropout = masks.dropout(PointKind::Boundary, idx);
        let t = tape.leaf(t_norm);
        let zero = tape.leaf(0.0);
        let newborn = model.forward(&mut tape, zero, t, &mut dropout);
        terms.push((1.0, newborn));
        let year = d.year(t_norm);
        for &(age, w) in problem.quadrature.nodes() {
            let b = problem.fertility(age, year);
            if b == 0.0 {
                continue;
            }
            let a = tape.leaf(d.a_norm(age));
            let p = model.forward(&mut tape, a, t, &mut dropout);
            terms.push((-w * b, p));
        }
        let residual = tape.combination(&terms);
        let e = tape.value(residual);
        if !e.is_finite() {
            return Err(Error::non_finite(format!("boundary term at τ={t_norm}")));
        }
        part.sum += e * e;
        tape.backward_with(residual, 2.0 * e, &mut scratch, |k, adj| part.grad[k] += adj)?;
    }
    Ok(())
}
