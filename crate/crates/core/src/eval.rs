//! Forecast metrics, per-horizon errors, generalization gap and 1-D
//! filter-normalized loss slices.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::WindowPair;
use crate::linalg::Matrix;
use crate::mlp::ModelParams;
use crate::rng::SeededRng;
use crate::trainer::TrainLog;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub mse: f64,
    pub mae: f64,
    /// Mean over windows and features, one entry per horizon step.
    pub per_step_mse: Vec<f64>,
    /// `M × K` mean squared error.
    pub per_element_mse: Matrix,
    pub sample_count: usize,
}

/// Scores `params` on every window, accumulating in window order.
pub fn evaluate(params: &ModelParams, windows: &[WindowPair]) -> Result<MetricRecord> {
    if windows.is_empty() {
        return Err(Error::config("cannot evaluate on an empty window set"));
    }
    let (m, k) = (params.output_len(), params.features());
    let mut sq = Matrix::zeros(m, k);
    let mut abs = Matrix::zeros(m, k);
    for w in windows {
        w.past.ensure_shape(params.input_len(), k, "window past")?;
        w.future.ensure_shape(m, k, "window future")?;
        let trace = params.trace(w.past.as_slice());
        for (((s, a), &p), &y) in sq
            .as_mut_slice()
            .iter_mut()
            .zip(abs.as_mut_slice())
            .zip(trace.output())
            .zip(w.future.as_slice())
        {
            let d = p - y;
            *s += d * d;
            *a += d.abs();
        }
    }
    let n = windows.len() as f64;
    let per_element_mse = sq.scale(1.0 / n);
    let per_step_mse = (0..m)
        .map(|j| per_element_mse.row(j).iter().sum::<f64>() / k as f64)
        .collect();
    Ok(MetricRecord {
        mse: per_element_mse.mean(),
        mae: abs.sum() / (n * (m * k) as f64),
        per_step_mse,
        per_element_mse,
        sample_count: windows.len(),
    })
}

/// Squared error at each horizon step, averaged over windows and features.
pub fn per_step_error(params: &ModelParams, windows: &[WindowPair]) -> Result<Vec<f64>> {
    Ok(evaluate(params, windows)?.per_step_mse)
}

/// `test MSE − train MSE` for every logged epoch.
pub fn generalization_gap(log: &TrainLog) -> Result<Vec<f64>> {
    if log.epochs.is_empty() {
        return Err(Error::config("training log is empty"));
    }
    Ok(log.epochs.iter().map(|r| r.test_mse - r.train_mse).collect())
}

/// Random direction with each weight row rescaled to the norm of the same
/// row of `params` (filter normalization for dense layers, one filter per
/// output neuron). Bias directions are zero, as are rows whose weight row
/// has zero norm.
pub fn filter_normalized_direction(params: &ModelParams, rng: &mut SeededRng) -> ModelParams {
    let mut dir = params.clone();
    for (layer, src) in dir.layers_mut().iter_mut().zip(params.layers()) {
        for r in 0..src.outputs() {
            let norm = src.weight.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let row = layer.weight.row_mut(r);
            for v in row.iter_mut() {
                *v = rng.standard_normal();
            }
            let dnorm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let factor = if norm > 0.0 && dnorm > 0.0 { norm / dnorm } else { 0.0 };
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        layer.bias.fill(0.0);
    }
    dir
}

/// Loss (MSE) at `θ + t·d` for `steps` evenly spaced `t ∈ [−radius, radius]`.
pub fn loss_slice_along(
    params: &ModelParams,
    direction: &ModelParams,
    radius: f64,
    steps: usize,
    windows: &[WindowPair],
) -> Result<Vec<(f64, f64)>> {
    if steps < 3 || steps.is_multiple_of(2) {
        return Err(Error::config("slice needs an odd number of steps ≥ 3"));
    }
    if !params.same_shape(direction) {
        return Err(Error::config("direction does not match the network shape"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::config("slice radius must be positive"));
    }
    let half = (steps / 2) as i64;
    let mut out = Vec::with_capacity(steps);
    for i in -half..=half {
        let t = radius * i as f64 / half as f64;
        let mut moved = params.clone();
        for (p, d) in moved.tensors_mut().zip(direction.tensors()) {
            for (pv, &dv) in p.iter_mut().zip(d) {
                *pv += t * dv;
            }
        }
        out.push((t, evaluate(&moved, windows)?.mse));
    }
    Ok(out)
}

/// Filter-normalized 1-D loss slice through `params` along a direction
/// drawn from `direction_seed`.
pub fn loss_slice(
    params: &ModelParams,
    direction_seed: u64,
    radius: f64,
    steps: usize,
    windows: &[WindowPair],
) -> Result<Vec<(f64, f64)>> {
    let dir = filter_normalized_direction(params, &mut SeededRng::new(direction_seed));
    loss_slice_along(params, &dir, radius, steps, windows)
}

pub fn write_metrics_csv(rows: &[(String, MetricRecord)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "name,mse,mae,samples")?;
    for (name, m) in rows {
        writeln!(out, "{name},{},{},{}", m.mse, m.mae, m.sample_count)?;
    }
    Ok(())
}

pub fn write_per_step_csv(per_step: &[f64], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,mse")?;
    for (j, v) in per_step.iter().enumerate() {
        writeln!(out, "{},{v}", j + 1)?;
    }
    Ok(())
}

pub fn write_gap_csv(log: &TrainLog, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_mse,test_mse,gap")?;
    for r in &log.epochs {
        writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            r.train_mse,
            r.test_mse,
            r.test_mse - r.train_mse
        )?;
    }
    Ok(())
}

pub fn write_slice_csv(slice: &[(f64, f64)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "t,loss")?;
    for (t, l) in slice {
        writeln!(out, "{t},{l}")?;
    }
    Ok(())
}
