//! Collocation losses, Adam and the epoch loop.

mod adam;
mod checkpoint;
mod loss;
mod sampling;

use std::io::{BufRead, Write};
use std::path::Path;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint};
pub use loss::{
    loss_and_gradient, loss_bc, loss_ic, loss_pde, pde_residual, total_loss, Batches, LossComponents,
    LossWeights, MaskPlan,
};
pub use sampling::{sample_points, PointKind, SamplerConfig};

use crate::demography::Problem;
use crate::networks::Model;
use crate::{Error, Result};

/// Losses after one epoch, measured on that epoch's batches before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub sampler: SamplerConfig,
    pub weights: LossWeights,
    pub lr: f64,
    pub epochs: usize,
    /// Stop once the total loss drops below this; `None` or a non-finite
    /// value never stops early.
    pub threshold: Option<f64>,
    /// Dropout rate between stacked LSTM layers.
    pub dropout: f64,
    /// Worker threads for loss evaluation; 0 or 1 evaluates inline.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            weights: LossWeights::default(),
            lr: 5e-4,
            epochs: 10_000,
            threshold: None,
            dropout: 0.1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let s = &self.sampler;
        if s.n_interior == 0 || s.m_initial == 0 || s.k_boundary == 0 {
            return Err(Error::InvalidArgument("collocation counts must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive (got {})", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must lie in [0, 1) (got {})", self.dropout)));
        }
        Ok(())
    }

    fn stops_at(&self, total: f64) -> bool {
        matches!(self.threshold, Some(eps) if eps.is_finite() && total < eps)
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<EpochRecord>,
    pub optimizer: AdamState,
    pub stopped_early: bool,
}

/// Draws the three collocation batches of an epoch.
pub fn epoch_batches(sampler: &SamplerConfig, epoch: usize) -> Batches {
    Batches {
        interior: sample_points(sampler, PointKind::Interior, epoch),
        initial: sample_points(sampler, PointKind::Initial, epoch)
            .into_iter()
            .map(|(a, _)| a)
            .collect(),
        boundary: sample_points(sampler, PointKind::Boundary, epoch)
            .into_iter()
            .map(|(_, t)| t)
            .collect(),
    }
}

/// Runs the epoch loop. `on_epoch` sees every record as it is produced.
///
/// Epochs are numbered from 1. A non-finite loss or gradient aborts with
/// [`Error::Diverged`] carrying the parameters at the start of that epoch.
pub fn train(
    mut model: Model,
    problem: &Problem,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    problem.validate()?;
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut optimizer = AdamState::new(model.param_count(), config.lr);
    let mut records = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let batches = epoch_batches(&config.sampler, epoch);
        let masks = if model.uses_dropout(config.dropout) {
            MaskPlan::Train {
                rate: config.dropout,
                seed: config.sampler.seed,
                epoch,
            }
        } else {
            MaskPlan::Off
        };
        let diverged = |c: LossComponents, total: f64, model: &Model| Error::Diverged {
            epoch,
            total,
            pde: c.pde,
            ic: c.ic,
            bc: c.bc,
            params: model.flatten(),
        };
        let (c, grad) = match loss_and_gradient(&model, problem, &batches, &config.weights, masks, pool.as_ref()) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => {
                let nan = LossComponents { pde: f64::NAN, ic: f64::NAN, bc: f64::NAN };
                return Err(diverged(nan, f64::NAN, &model));
            }
            Err(e) => return Err(e),
        };
        let total = total_loss(&c, &config.weights);
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(c, total, &model));
        }
        optimizer.step(model.params_mut(), &grad)?;
        let record = EpochRecord {
            epoch,
            total,
            pde: c.pde,
            ic: c.ic,
            bc: c.bc,
        };
        on_epoch(&record);
        records.push(record);
        if config.stops_at(total) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        records,
        optimizer,
        stopped_early,
    })
}

pub const LOSS_HEADER: [&str; 5] = ["epoch", "total", "pde", "ic", "bc"];

/// Writes the loss log as `epoch,total,pde,ic,bc`.
pub fn write_loss_csv<W: Write>(out: W, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_HEADER)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.total.to_string(),
            r.pde.to_string(),
            r.ic.to_string(),
            r.bc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a loss log written by [`write_loss_csv`].
pub fn read_loss_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let file = std::fs::File::open(path)?;
    let mut reader = std::io::BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != LOSS_HEADER.join(",") {
        return Err(malformed(format!("expected header '{}'", LOSS_HEADER.join(","))));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let parse = |k: usize| -> Result<f64> {
            row.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(format!("row {}: bad column {}", line + 2, LOSS_HEADER[k])))
        };
        if row.len() != 5 {
            return Err(malformed(format!("row {}: expected 5 columns", line + 2)));
        }
        let epoch = row[0]
            .parse()
            .map_err(|_| malformed(format!("row {}: bad epoch", line + 2)))?;
        records.push(EpochRecord {
            epoch,
            total: parse(1)?,
            pde: parse(2)?,
            ic: parse(3)?,
            bc: parse(4)?,
        });
    }
    Ok(records)
}
