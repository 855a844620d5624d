//! Mini-batched training with a moving-average target network.
//!
//! Each iteration:
//!
//! 1. forward the source network on the batch;
//! 2. for the wave objectives, forward the target network on the *same*
//!    batch (no gradient path through it);
//! 3. form the per-element risks and the objective's `∂/∂R̂_jk` weights;
//! 4. backpropagate, take one Adam step on the source;
//! 5. move the target towards the updated source.
//!
//! The target is maintained for every objective so `eval_network = target`
//! is meaningful even for the baselines. After each epoch the selected
//! evaluation network is scored on train/validation/test; early stopping
//! keeps the epoch with the lowest validation MSE.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data::WindowPair;
use crate::ema::{EmaMirror, DEFAULT_DECAY};
use crate::eval::{evaluate, MetricRecord};
use crate::linalg::Matrix;
use crate::mlp::{Gradients, ModelParams, DEFAULT_HIDDEN};
use crate::risk::{per_element_risk, ObjectiveKind, RiskMatrix};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Learning rates searched by default.
pub const LR_GRID: [f64; 5] = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3];

/// Which network is scored, early-stopped on and returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalNetwork {
    Source,
    Target,
}

impl std::str::FromStr for EvalNetwork {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "source" => Ok(EvalNetwork::Source),
            "target" => Ok(EvalNetwork::Target),
            other => Err(Error::config(format!(
                "eval network must be source or target, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for EvalNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalNetwork::Source => "source",
            EvalNetwork::Target => "target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input_len: usize,
    pub output_len: usize,
    pub hidden: usize,
    pub objective: ObjectiveKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub eval_network: EvalNetwork,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            input_len: 96,
            output_len: 96,
            hidden: DEFAULT_HIDDEN,
            objective: ObjectiveKind::Plain,
            batch_size: 32,
            learning_rate: 1e-3,
            decay: DEFAULT_DECAY,
            max_epochs: 30,
            patience: 3,
            seed: 1,
            eval_network: EvalNetwork::Target,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::config("input and output lengths must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be ≥ 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::config(format!("decay must lie in [0, 1], got {}", self.decay)));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be ≥ 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be ≥ 1"));
        }
        self.objective.validate()
    }
}

/// Train/validation/test windows of one dataset.
#[derive(Debug, Clone)]
pub struct WindowSets {
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch objective values over the epoch.
    pub train_objective: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub test_mae: f64,
    pub per_step_test_mse: Vec<f64>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// Equality on everything except wall-clock time.
    pub fn same_metrics(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.train_objective.to_bits() == other.train_objective.to_bits()
            && self.train_mse.to_bits() == other.train_mse.to_bits()
            && self.val_mse.to_bits() == other.val_mse.to_bits()
            && self.test_mse.to_bits() == other.test_mse.to_bits()
            && self.test_mae.to_bits() == other.test_mae.to_bits()
            && self.per_step_test_mse.len() == other.per_step_test_mse.len()
            && self
                .per_step_test_mse
                .iter()
                .zip(&other.per_step_test_mse)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn same_metrics(&self, other: &TrainLog) -> bool {
        self.epochs.len() == other.epochs.len() && self.epochs.iter().zip(&other.epochs).all(|(a, b)| a.same_metrics(b))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// One row per epoch. Wall-clock time is only written when `timing` is
    /// set, so the default output is reproducible byte for byte.
    pub fn write_csv(&self, mut out: impl Write, timing: bool) -> std::io::Result<()> {
        write!(out, "epoch,train_objective,train_mse,val_mse,test_mse,test_mae")?;
        if timing {
            write!(out, ",wall_seconds")?;
        }
        writeln!(out)?;
        for r in &self.epochs {
            write!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.train_objective, r.train_mse, r.val_mse, r.test_mse, r.test_mae
            )?;
            if timing {
                write!(out, ",{}", r.wall_seconds)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// One JSON object per epoch, wall-clock time excluded.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.epochs {
            let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, jsonl_path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, false).expect("writing to memory");
        std::fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        std::fs::write(jsonl_path, buf).map_err(|e| Error::io(jsonl_path, e))
    }
}

/// What happened inside one optimisation iteration, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    TargetRisk { iteration: u64 },
    OptimizerStep { iteration: u64 },
    EmaUpdate { iteration: u64 },
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Source weights at the best validation epoch.
    pub source: ModelParams,
    /// Target network at the best validation epoch.
    pub mirror: EmaMirror,
    pub log: TrainLog,
    /// Index into `log.epochs` of the selected epoch.
    pub best_epoch: usize,
    pub eval_network: EvalNetwork,
    pub iterations: u64,
}

impl TrainOutcome {
    /// The network selected for evaluation.
    pub fn chosen(&self) -> &ModelParams {
        match self.eval_network {
            EvalNetwork::Source => &self.source,
            EvalNetwork::Target => self.mirror.target(),
        }
    }

    pub fn best_record(&self) -> &EpochRecord {
        &self.log.epochs[self.best_epoch]
    }
}

/// Objective value, parameter gradient and risks for one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchStep {
    pub value: f64,
    pub grads: Gradients,
    pub source_risk: RiskMatrix,
    pub target_risk: Option<RiskMatrix>,
}

fn predict(params: &ModelParams, past: &Matrix) -> Matrix {
    let out = params.trace(past.as_slice()).output().to_vec();
    Matrix::from_vec(params.output_len(), params.features(), out).expect("network output shape")
}

/// Evaluates `objective` on a batch and differentiates it with respect to
/// the source parameters. `target` is only read for the wave objectives.
pub fn batch_step(
    source: &ModelParams,
    target: Option<&ModelParams>,
    objective: &ObjectiveKind,
    batch: &[&WindowPair],
) -> Result<BatchStep> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    for w in batch {
        w.past
            .ensure_shape(source.input_len(), source.features(), "window past")?;
        w.future
            .ensure_shape(source.output_len(), source.features(), "window future")?;
    }
    let traces: Vec<_> = batch.iter().map(|w| source.trace(w.past.as_slice())).collect();
    let preds: Vec<Matrix> = traces
        .iter()
        .map(|t| {
            Matrix::from_vec(source.output_len(), source.features(), t.output().to_vec()).expect("network output shape")
        })
        .collect();
    let futures: Vec<Matrix> = batch.iter().map(|w| w.future.clone()).collect();
    let source_risk = per_element_risk(&preds, &futures)?;

    let target_risk = if objective.uses_target() {
        let target = target.ok_or_else(|| Error::config("wave objective needs a target network"))?;
        let tp: Vec<Matrix> = batch.iter().map(|w| predict(target, &w.past)).collect();
        Some(per_element_risk(&tp, &futures)?)
    } else {
        None
    };

    let (value, weights) = objective.value_and_weights(&source_risk, target_risk.as_ref())?;
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(source);
    let mut upstream = vec![0.0; weights.len()];
    for ((trace, pred), fut) in traces.iter().zip(&preds).zip(&futures) {
        for (((u, &w), &p), &y) in upstream
            .iter_mut()
            .zip(weights.as_slice())
            .zip(pred.as_slice())
            .zip(fut.as_slice())
        {
            *u = w * 2.0 * (p - y) / n;
        }
        source.accumulate_backward(trace, &upstream, &mut grads);
    }
    Ok(BatchStep {
        value,
        grads,
        source_risk,
        target_risk,
    })
}

pub fn train(config: &TrainConfig, data: &WindowSets) -> Result<TrainOutcome> {
    train_observed(config, data, &mut |_| {})
}

/// [`train`] with a callback receiving every [`StepEvent`].
pub fn train_observed(
    config: &TrainConfig,
    data: &WindowSets,
    observer: &mut dyn FnMut(StepEvent),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::config("empty training set"));
    }
    if data.val.is_empty() {
        return Err(Error::config("empty validation set"));
    }
    if data.test.is_empty() {
        return Err(Error::config("empty test set"));
    }
    let features = data.train[0].past.cols();

    let root = SeededRng::new(config.seed);
    let mut init_rng = root.derive(0);
    let mut source = ModelParams::forecaster(
        config.input_len,
        config.output_len,
        features,
        config.hidden,
        &mut init_rng,
    )?;
    let mut mirror = EmaMirror::init(&source, config.decay)?;
    let mut adam = AdamState::new(&source);
    let adam_cfg = AdamConfig::with_lr(config.learning_rate);

    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ModelParams, EmaMirror)> = None;
    let mut since_best = 0;
    let mut iteration: u64 = 0;

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let mut shuffle_rng = root.derive(1 + epoch as u64);
        let order = crate::data::batches(data.train.len(), config.batch_size, Some(&mut shuffle_rng))?;
        let mut objective_sum = 0.0;
        for idx in &order {
            iteration += 1;
            let batch: Vec<&WindowPair> = idx.iter().map(|&i| &data.train[i]).collect();
            let target = config.objective.uses_target().then(|| mirror.target());
            let at_iteration = |e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("iteration {iteration}: {msg}")),
                other => other,
            };
            let step = batch_step(&source, target, &config.objective, &batch).map_err(at_iteration)?;
            if step.target_risk.is_some() {
                observer(StepEvent::TargetRisk { iteration });
            }
            if !step.value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training objective at iteration {iteration} (epoch {epoch})"
                )));
            }
            objective_sum += step.value;
            adam.step(&mut source, &step.grads, &adam_cfg).map_err(at_iteration)?;
            observer(StepEvent::OptimizerStep { iteration });
            mirror.update(&source)?;
            observer(StepEvent::EmaUpdate { iteration });
        }

        let scored = match config.eval_network {
            EvalNetwork::Source => &source,
            EvalNetwork::Target => mirror.target(),
        };
        let train_m = evaluate(scored, &data.train)?;
        let val_m = evaluate(scored, &data.val)?;
        let test_m = evaluate(scored, &data.test)?;
        for (name, m) in [("train", &train_m), ("validation", &val_m), ("test", &test_m)] {
            if !m.mse.is_finite() {
                return Err(Error::Numeric(format!("{name} MSE is not finite after epoch {epoch}")));
            }
        }
        log.epochs.push(record(
            epoch,
            objective_sum / order.len() as f64,
            &train_m,
            &val_m,
            &test_m,
            started,
        ));
        log::debug!(
            "epoch {epoch}: objective {:.6} train {:.6} val {:.6} test {:.6}",
            objective_sum / order.len() as f64,
            train_m.mse,
            val_m.mse,
            test_m.mse
        );

        let improved = best.as_ref().is_none_or(|(v, ..)| val_m.mse < *v);
        if improved {
            best = Some((val_m.mse, epoch, source.clone(), mirror.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::debug!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (_, best_epoch, best_source, best_mirror) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        source: best_source,
        mirror: best_mirror,
        log,
        best_epoch,
        eval_network: config.eval_network,
        iterations: iteration,
    })
}

fn record(
    epoch: usize,
    train_objective: f64,
    train: &MetricRecord,
    val: &MetricRecord,
    test: &MetricRecord,
    started: Instant,
) -> EpochRecord {
    EpochRecord {
        epoch,
        train_objective,
        train_mse: train.mse,
        val_mse: val.mse,
        test_mse: test.mse,
        test_mae: test.mae,
        per_step_test_mse: test.per_step_mse.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

/// The hyperparameter a sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepGrid {
    /// Flood level `b` (flooding objectives).
    FloodLevel(Vec<f64>),
    /// Margin `ε` (wave objectives).
    Epsilon(Vec<f64>),
    LearningRate(Vec<f64>),
}

impl SweepGrid {
    pub fn values(&self) -> &[f64] {
        match self {
            SweepGrid::FloodLevel(v) | SweepGrid::Epsilon(v) | SweepGrid::LearningRate(v) => v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepGrid::FloodLevel(_) => "b",
            SweepGrid::Epsilon(_) => "eps",
            SweepGrid::LearningRate(_) => "learning_rate",
        }
    }

    /// `{0.00, 0.02, …, 0.40}`.
    pub fn flood_levels() -> Self {
        SweepGrid::FloodLevel((0..=20).map(|i| i as f64 * 0.02).collect())
    }

    /// `{0.01, 0.001}`.
    pub fn epsilons() -> Self {
        SweepGrid::Epsilon(vec![0.01, 0.001])
    }

    pub fn learning_rates() -> Self {
        SweepGrid::LearningRate(LR_GRID.to_vec())
    }

    /// Parses `b=0,0.1`, `eps=0.01,0.001` or `lr=1e-4,1e-3`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, list) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(format!("grid {spec:?} must look like eps=0.01,0.001")))?;
        let values = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::config(format!("bad grid value {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = match key.trim() {
            "b" => SweepGrid::FloodLevel(values),
            "eps" | "epsilon" => SweepGrid::Epsilon(values),
            "lr" | "learning_rate" => SweepGrid::LearningRate(values),
            other => return Err(Error::config(format!("unknown grid parameter {other:?}"))),
        };
        if grid.values().is_empty() {
            return Err(Error::config("sweep grid is empty"));
        }
        Ok(grid)
    }

    /// The template with grid point `value` applied.
    pub fn apply(&self, template: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = template.clone();
        match self {
            SweepGrid::FloodLevel(_) => match template.objective {
                ObjectiveKind::Flooding { .. } | ObjectiveKind::ConstantFlooding { .. } => {
                    cfg.objective = template.objective.with_param(value)
                }
                other => {
                    return Err(Error::config(format!(
                        "a b grid needs a flooding objective, not {other}"
                    )))
                }
            },
            SweepGrid::Epsilon(_) => match template.objective {
                ObjectiveKind::WaveAvg { .. } | ObjectiveKind::WaveIndiv { .. } => {
                    cfg.objective = template.objective.with_param(value)
                }
                other => {
                    return Err(Error::config(format!(
                        "an eps grid needs a wave objective, not {other}"
                    )))
                }
            },
            SweepGrid::LearningRate(_) => cfg.learning_rate = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    /// 1-based rank by validation MSE (ties keep grid order).
    pub rank: usize,
    pub grid_index: usize,
    pub parameter: String,
    pub value: f64,
    pub objective: String,
    pub learning_rate: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub test_mae: f64,
}

impl SweepRow {
    pub fn from_outcome(grid_index: usize, parameter: &str, value: f64, cfg: &TrainConfig, out: &TrainOutcome) -> Self {
        let best = out.best_record();
        Self {
            rank: 0,
            grid_index,
            parameter: parameter.to_string(),
            value,
            objective: cfg.objective.to_string(),
            learning_rate: cfg.learning_rate,
            best_epoch: out.best_epoch,
            epochs_run: out.log.epochs.len(),
            train_mse: best.train_mse,
            val_mse: best.val_mse,
            test_mse: best.test_mse,
            test_mae: best.test_mae,
        }
    }
}

/// Trains once per grid point with the template's seed and ranks the runs
/// by validation MSE. Grid points run on up to `workers` threads; each run
/// is independent, so the table does not depend on the worker count.
pub fn sweep(template: &TrainConfig, grid: &SweepGrid, data: &WindowSets, workers: usize) -> Result<Vec<SweepRow>> {
    if grid.values().is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let configs = grid
        .values()
        .iter()
        .map(|&v| grid.apply(template, v))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start sweep workers: {e}")))?;
    let outcomes: Vec<Result<TrainOutcome>> = pool.install(|| configs.par_iter().map(|cfg| train(cfg, data)).collect());

    let mut rows = Vec::with_capacity(configs.len());
    for (i, (cfg, out)) in configs.iter().zip(outcomes).enumerate() {
        rows.push(SweepRow::from_outcome(i, grid.name(), grid.values()[i], cfg, &out?));
    }
    rank_rows(&mut rows);
    Ok(rows)
}

fn rank_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| a.val_mse.total_cmp(&b.val_mse).then(a.grid_index.cmp(&b.grid_index)));
    for (r, row) in rows.iter_mut().enumerate() {
        row.rank = r + 1;
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "rank,grid_index,parameter,value,objective,learning_rate,best_epoch,epochs_run,train_mse,val_mse,test_mse,test_mae"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.rank,
            r.grid_index,
            r.parameter,
            r.value,
            r.objective,
            r.learning_rate,
            r.best_epoch,
            r.epochs_run,
            r.train_mse,
            r.val_mse,
            r.test_mse,
            r.test_mae
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_and_standardize, synth_series, windowize, SplitSpec};

    fn small_data(seed: u64) -> WindowSets {
        let ds = synth_series(400, 0.3, seed).unwrap();
        let s = split_and_standardize(&ds, SplitSpec::standard()).unwrap();
        WindowSets {
            train: windowize(&s.train, 12, 6),
            val: windowize(&s.val, 12, 6),
            test: windowize(&s.test, 12, 6),
        }
    }

    fn small_config(objective: ObjectiveKind) -> TrainConfig {
        TrainConfig {
            input_len: 12,
            output_len: 6,
            hidden: 8,
            objective,
            batch_size: 16,
            learning_rate: 1e-3,
            max_epochs: 4,
            patience: 10,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = small_data(1);
        let mut cfg = small_config(ObjectiveKind::Plain);
        cfg.learning_rate = 0.0;
        cfg.eval_network = EvalNetwork::Source;
        let out = train(&cfg, &data).unwrap();
        let init = ModelParams::forecaster(12, 6, 1, 8, &mut SeededRng::new(5).derive(0)).unwrap();
        assert_eq!(out.source, init);
        assert_eq!(out.mirror.target(), &init);
    }

    #[test]
    fn infinite_margin_matches_plain_bit_for_bit() {
        let data = small_data(2);
        let plain = train(&small_config(ObjectiveKind::Plain), &data).unwrap();
        let wave = train(&small_config(ObjectiveKind::WaveIndiv { eps: f64::INFINITY }), &data).unwrap();
        assert_eq!(plain.source, wave.source);
        assert_eq!(plain.mirror, wave.mirror);
        assert!(plain.log.same_metrics(&wave.log));
    }

    #[test]
    fn ema_follows_optimizer_every_iteration() {
        let data = small_data(3);
        let mut events = Vec::new();
        let out = train_observed(&small_config(ObjectiveKind::WaveIndiv { eps: 0.01 }), &data, &mut |e| {
            events.push(e)
        })
        .unwrap();
        assert_eq!(events.len() as u64, 3 * out.iterations);
        for (i, chunk) in events.chunks(3).enumerate() {
            let it = i as u64 + 1;
            assert_eq!(
                chunk,
                &[
                    StepEvent::TargetRisk { iteration: it },
                    StepEvent::OptimizerStep { iteration: it },
                    StepEvent::EmaUpdate { iteration: it }
                ]
            );
        }
    }

    #[test]
    fn identical_configs_identical_logs() {
        let data = small_data(4);
        let cfg = small_config(ObjectiveKind::ConstantFlooding { b: 0.05 });
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert!(a.log.same_metrics(&b.log));
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.log.write_csv(&mut ca, false).unwrap();
        b.log.write_csv(&mut cb, false).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn plain_gradient_is_mean_mse_gradient() {
        let data = small_data(5);
        let params = ModelParams::forecaster(12, 6, 1, 8, &mut SeededRng::new(8)).unwrap();
        let batch: Vec<&WindowPair> = data.train.iter().take(7).collect();
        let step = batch_step(&params, None, &ObjectiveKind::Plain, &batch).unwrap();

        let denom = (batch.len() * 6) as f64;
        let mut expected = Gradients::zeros_like(&params);
        for w in &batch {
            let pred = params.forward(&w.past).unwrap();
            let up = Matrix::from_fn(6, 1, |r, c| 2.0 * (pred[(r, c)] - w.future[(r, c)]) / denom);
            let g = params.backward(&w.past, &up).unwrap();
            for (a, b) in expected.tensors_mut().zip(g.tensors()) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
        for (a, b) in step.grads.flatten().iter().zip(expected.flatten()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_validation_is_config_error() {
        let mut data = small_data(6);
        data.val.clear();
        let err = train(&small_config(ObjectiveKind::Plain), &data).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn divergence_reports_iteration() {
        let data = small_data(7);
        let mut cfg = small_config(ObjectiveKind::Plain);
        cfg.learning_rate = 1e300;
        let err = train(&cfg, &data).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("iteration")), "{err}");
    }

    #[test]
    fn singleton_sweep_equals_single_train() {
        let data = small_data(8);
        let cfg = small_config(ObjectiveKind::WaveIndiv { eps: 0.01 });
        let rows = sweep(&cfg, &SweepGrid::Epsilon(vec![0.01]), &data, 1).unwrap();
        let single = train(&cfg, &data).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].val_mse.to_bits(), single.best_record().val_mse.to_bits());
        assert_eq!(rows[0].test_mse.to_bits(), single.best_record().test_mse.to_bits());
    }

    #[test]
    fn flood_level_zero_matches_plain() {
        let data = small_data(9);
        let rows = sweep(
            &small_config(ObjectiveKind::Flooding { b: 0.5 }),
            &SweepGrid::FloodLevel(vec![0.0, 0.1]),
            &data,
            2,
        )
        .unwrap();
        let plain = train(&small_config(ObjectiveKind::Plain), &data).unwrap();
        let zero = rows.iter().find(|r| r.value == 0.0).unwrap();
        assert_eq!(zero.test_mse.to_bits(), plain.best_record().test_mse.to_bits());
        let ranks: Vec<usize> = rows.iter().map(|r| r.rank).collect();
        assert_eq!(ranks, vec![1, 2]);
        assert!(rows[0].val_mse <= rows[1].val_mse);
    }

    #[test]
    fn grid_parsing_and_validation() {
        assert_eq!(SweepGrid::parse("eps=0.01,0.001").unwrap(), SweepGrid::epsilons());
        assert!(SweepGrid::parse("eps=").is_err());
        assert!(SweepGrid::parse("zeta=1").is_err());
        let grid = SweepGrid::Epsilon(vec![0.1]);
        assert!(grid.apply(&small_config(ObjectiveKind::Plain), 0.1).is_err());
        assert_eq!(SweepGrid::flood_levels().values().len(), 21);
    }
}
