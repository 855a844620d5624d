//! Per-element empirical risk and the training objectives built on it.
//!
//! Every objective is a function of the `M × K` matrix of batch-averaged
//! squared errors. Besides its value, [`ObjectiveKind::value_and_weights`]
//! returns `∂objective/∂R̂_jk`, which the trainer chains with
//! `∂R̂_jk/∂pred_ijk = 2 (pred_ijk − y_ijk) / N`.
//!
//! The flood-style terms `|x − bound| + bound` are evaluated piecewise: `x`
//! when `x ≥ bound`, `2·bound − x` otherwise. The two forms agree
//! mathematically, and the piecewise one stays finite for an infinite
//! margin (`bound = −∞`), which disables the bound entirely.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Batch-mean squared error per (horizon step, feature).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMatrix {
    pub values: Matrix,
    pub batch_count: usize,
}

impl RiskMatrix {
    pub fn new(values: Matrix, batch_count: usize) -> Result<Self> {
        if values.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numeric("risk entries must be finite and non-negative".into()));
        }
        Ok(Self { values, batch_count })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Overall mean squared error.
    pub fn mean(&self) -> f64 {
        self.values.mean()
    }
}

/// `R̂_jk = (1/N) Σ_i (pred_ijk − target_ijk)²`.
pub fn per_element_risk(preds: &[Matrix], targets: &[Matrix]) -> Result<RiskMatrix> {
    if preds.is_empty() {
        return Err(Error::config("risk needs at least one sample"));
    }
    if preds.len() != targets.len() {
        return Err(Error::config(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let (m, k) = preds[0].shape();
    let mut acc = Matrix::zeros(m, k);
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != (m, k) || t.shape() != (m, k) {
            return Err(Error::config("prediction/target shape mismatch"));
        }
        for ((a, pv), tv) in acc.as_mut_slice().iter_mut().zip(p.as_slice()).zip(t.as_slice()) {
            let d = pv - tv;
            *a += d * d;
        }
    }
    let n = preds.len() as f64;
    for a in acc.as_mut_slice() {
        *a /= n;
    }
    RiskMatrix::new(acc, preds.len())
}

/// `+1` when `value ≥ bound` (descent), `−1` otherwise (ascent). Ties
/// resolve to descent.
#[inline]
pub fn descent_sign(value: f64, bound: f64) -> f64 {
    if value >= bound {
        1.0
    } else {
        -1.0
    }
}

/// `|value − bound| + bound`, evaluated piecewise.
#[inline]
pub fn flood(value: f64, bound: f64) -> f64 {
    if value >= bound {
        value
    } else {
        2.0 * bound - value
    }
}

/// Flooded risk `|R̂ − b| + b` on the overall mean.
pub fn flooding_objective(risk_mean: f64, b: f64) -> f64 {
    flood(risk_mean, b)
}

/// `(1/MK) Σ_jk (|R̂_jk − b| + b)`.
pub fn constant_flooding_objective(risk: &RiskMatrix, b: f64) -> f64 {
    let v = risk.values.as_slice();
    v.iter().map(|&r| flood(r, b)).sum::<f64>() / v.len() as f64
}

fn check_pair(source: &RiskMatrix, target: &RiskMatrix) -> Result<()> {
    if source.shape() != target.shape() {
        return Err(Error::config(format!(
            "source risk {:?} and target risk {:?} differ in shape",
            source.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Wave risk with one bound per element:
/// `(1/MK) Σ_jk [|R̂_jk(src) − (R̂_jk(tgt) − ε)| + (R̂_jk(tgt) − ε)]`.
pub fn wave_objective_indiv(source: &RiskMatrix, target: &RiskMatrix, eps: f64) -> Result<f64> {
    check_pair(source, target)?;
    let s = source.values.as_slice();
    let t = target.values.as_slice();
    Ok(s.iter().zip(t).map(|(&a, &b)| flood(a, b - eps)).sum::<f64>() / s.len() as f64)
}

/// Wave risk bounded once at the batch-mean level:
/// `|src − tgt + ε| + (tgt − ε)`.
pub fn wave_objective_avg(source_mean: f64, target_mean: f64, eps: f64) -> f64 {
    flood(source_mean, target_mean - eps)
}

/// `+1` where `src_jk ≥ tgt_jk − ε`, `−1` elsewhere.
pub fn gradient_sign_mask(source: &RiskMatrix, target: &RiskMatrix, eps: f64) -> Result<Matrix> {
    check_pair(source, target)?;
    let (m, k) = source.shape();
    let data = source
        .values
        .as_slice()
        .iter()
        .zip(target.values.as_slice())
        .map(|(&s, &t)| descent_sign(s, t - eps))
        .collect();
    Matrix::from_vec(m, k, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Plain,
    Flooding { b: f64 },
    ConstantFlooding { b: f64 },
    WaveAvg { eps: f64 },
    WaveIndiv { eps: f64 },
}

impl ObjectiveKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ObjectiveKind::Plain => Ok(()),
            ObjectiveKind::Flooding { b } | ObjectiveKind::ConstantFlooding { b } => {
                if b.is_finite() && b >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!("flood level must be finite and ≥ 0, got {b}")))
                }
            }
            ObjectiveKind::WaveAvg { eps } | ObjectiveKind::WaveIndiv { eps } => {
                // +inf is allowed: it switches the bound off.
                if eps >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!("epsilon must be ≥ 0, got {eps}")))
                }
            }
        }
    }

    /// Whether the objective needs the target network's risk.
    pub fn uses_target(&self) -> bool {
        matches!(self, ObjectiveKind::WaveAvg { .. } | ObjectiveKind::WaveIndiv { .. })
    }

    /// Objective value and `∂objective/∂R̂_jk` for each element.
    ///
    /// `target` must be given for the wave objectives; it is treated as a
    /// constant.
    pub fn value_and_weights(&self, source: &RiskMatrix, target: Option<&RiskMatrix>) -> Result<(f64, Matrix)> {
        let (m, k) = source.shape();
        let inv = 1.0 / (m * k) as f64;
        let need_target = || target.ok_or_else(|| Error::config("wave objective evaluated without target risk"));
        let uniform = |sign: f64| Matrix::filled(m, k, sign * inv);
        match *self {
            ObjectiveKind::Plain => Ok((source.mean(), uniform(1.0))),
            ObjectiveKind::Flooding { b } => {
                let r = source.mean();
                Ok((flooding_objective(r, b), uniform(descent_sign(r, b))))
            }
            ObjectiveKind::ConstantFlooding { b } => {
                let w = source.values.map(|r| descent_sign(r, b) * inv);
                Ok((constant_flooding_objective(source, b), w))
            }
            ObjectiveKind::WaveAvg { eps } => {
                let target = need_target()?;
                check_pair(source, target)?;
                let (s, t) = (source.mean(), target.mean());
                Ok((wave_objective_avg(s, t, eps), uniform(descent_sign(s, t - eps))))
            }
            ObjectiveKind::WaveIndiv { eps } => {
                let target = need_target()?;
                let mut w = gradient_sign_mask(source, target, eps)?;
                for v in w.as_mut_slice() {
                    *v *= inv;
                }
                Ok((wave_objective_indiv(source, target, eps)?, w))
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveKind::Plain => "plain",
            ObjectiveKind::Flooding { .. } => "flooding",
            ObjectiveKind::ConstantFlooding { .. } => "constant_flooding",
            ObjectiveKind::WaveAvg { .. } => "wave_avg",
            ObjectiveKind::WaveIndiv { .. } => "wave_indiv",
        }
    }

    /// The same objective with its scalar hyperparameter replaced.
    pub fn with_param(&self, value: f64) -> Self {
        match self {
            ObjectiveKind::Plain => ObjectiveKind::Plain,
            ObjectiveKind::Flooding { .. } => ObjectiveKind::Flooding { b: value },
            ObjectiveKind::ConstantFlooding { .. } => ObjectiveKind::ConstantFlooding { b: value },
            ObjectiveKind::WaveAvg { .. } => ObjectiveKind::WaveAvg { eps: value },
            ObjectiveKind::WaveIndiv { .. } => ObjectiveKind::WaveIndiv { eps: value },
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ObjectiveKind::Plain => write!(f, "plain"),
            ObjectiveKind::Flooding { b } | ObjectiveKind::ConstantFlooding { b } => {
                write!(f, "{}:{b}", self.label())
            }
            ObjectiveKind::WaveAvg { eps } | ObjectiveKind::WaveIndiv { eps } => {
                write!(f, "{}:{eps}", self.label())
            }
        }
    }
}

/// Parses `plain`, `flooding:<b>`, `constant_flooding:<b>`,
/// `wave_avg:<eps>` or `wave_indiv:<eps>` (`inf` accepted for eps).
impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s, None),
        };
        let value = |default: Option<f64>| -> Result<f64> {
            match param {
                Some(p) => p
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("bad objective parameter {p:?}"))),
                None => default.ok_or_else(|| Error::config(format!("objective {name:?} needs a parameter"))),
            }
        };
        let kind = match name {
            "plain" => ObjectiveKind::Plain,
            "flooding" => ObjectiveKind::Flooding { b: value(None)? },
            "constant_flooding" => ObjectiveKind::ConstantFlooding { b: value(None)? },
            "wave_avg" => ObjectiveKind::WaveAvg {
                eps: value(Some(0.01))?,
            },
            "wave_indiv" => ObjectiveKind::WaveIndiv {
                eps: value(Some(0.01))?,
            },
            other => return Err(Error::config(format!("unknown objective {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}
