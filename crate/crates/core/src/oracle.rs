//! Monte-Carlo check of the wave risk estimator on linear-Gaussian
//! populations, plus mini-batch Jensen audits.
//!
//! Population: an input `x ∈ R^D` with independent coordinates
//! `x_d ~ N(0, s_d²)`, and an output `y = W x + n` with independent noise
//! `n_e ~ N(0, σ_e²)` per output element `e = j·K + k`. A predictor is an
//! affine map `ŷ = A x + c`, so its true risk per element is closed form:
//!
//! `R_e = Σ_d (A_ed − W_ed)² s_d² + c_e² + σ_e²`.
//!
//! Each trial draws `N` samples and compares two estimators of the
//! aggregate risk `R = Σ_e R_e(g)`: the plain one, `Σ_e R̂_e(g)`, and the wave
//! one, `Σ_e [|R̂_e(g) − R̂_e(g*) + ε| + R̂_e(g*) − ε]`. Aggregates are sums
//! over output elements; a per-element mean would only rescale every
//! squared deviation by `1/(MK)²`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::risk::flood;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Affine predictor `ŷ = A x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::config("predictor bias length must equal its output count"));
        }
        Ok(Self { weights, bias })
    }

    /// Predictor with zero bias and a diagonal weight matrix.
    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            weights: Matrix::from_fn(n, n, |r, c| if r == c { diag[r] } else { 0.0 }),
            bias: vec![0.0; n],
        }
    }

    pub fn zero(outputs: usize, inputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        crate::linalg::affine(&self.weights, &self.bias, x, out);
    }
}

/// Linear-Gaussian data-generating process with known covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    /// Output shape `(M, K)`; element `e` is `(e / K, e % K)`.
    pub output_shape: (usize, usize),
    pub input_std: Vec<f64>,
    /// `W`, shape `(M·K) × D`.
    pub truth: LinearPredictor,
    pub noise_std: Vec<f64>,
}

impl Population {
    pub fn elements(&self) -> usize {
        self.output_shape.0 * self.output_shape.1
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.elements();
        if e == 0 || self.input_std.is_empty() {
            return Err(Error::config("population needs at least one input and one output"));
        }
        if self.truth.weights.shape() != (e, self.input_std.len()) {
            return Err(Error::config("population map shape does not match its dimensions"));
        }
        if self.noise_std.len() != e {
            return Err(Error::config("one noise level per output element is required"));
        }
        let ok = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.input_std.iter().all(ok) || !self.noise_std.iter().all(ok) {
            return Err(Error::config(
                "degenerate population: every variance must be positive and finite",
            ));
        }
        if !self.truth.weights.is_finite() || !self.truth.bias.iter().all(|v| v.is_finite()) {
            return Err(Error::config("population parameters must be finite"));
        }
        Ok(())
    }

    fn check_predictor(&self, p: &LinearPredictor) -> Result<()> {
        if p.weights.shape() != self.truth.weights.shape() || p.bias.len() != self.elements() {
            return Err(Error::config("predictor shape does not match the population"));
        }
        if !p.weights.is_finite() || !p.bias.iter().all(|v| v.is_finite()) {
            return Err(Error::config("predictor parameters must be finite"));
        }
        Ok(())
    }

    /// Draws one `(x, y)` pair into the given buffers.
    fn sample(&self, rng: &mut SeededRng, x: &mut [f64], y: &mut [f64]) {
        for (xv, &s) in x.iter_mut().zip(&self.input_std) {
            *xv = s * rng.standard_normal();
        }
        self.truth.predict_into(x, y);
        for (yv, &s) in y.iter_mut().zip(&self.noise_std) {
            *yv += s * rng.standard_normal();
        }
    }
}

/// Closed-form expected squared error of `predictor`, per output element.
pub fn true_risk(population: &Population, predictor: &LinearPredictor) -> Result<Matrix> {
    population.validate()?;
    population.check_predictor(predictor)?;
    let (m, k) = population.output_shape;
    let risk = Matrix::from_fn(m, k, |j, kk| {
        let e = j * k + kk;
        let weight_part: f64 = predictor
            .weights
            .row(e)
            .iter()
            .zip(population.truth.weights.row(e))
            .zip(&population.input_std)
            .map(|((a, w), s)| (a - w) * (a - w) * s * s)
            .sum();
        let bias = predictor.bias[e] - population.truth.bias[e];
        weight_part + bias * bias + population.noise_std[e] * population.noise_std[e]
    });
    Ok(risk)
}

/// Mean squared error per element over `n` fresh samples (for checks
/// against [`true_risk`]), with the standard error of each mean.
pub fn sampled_risk(
    population: &Population,
    predictor: &LinearPredictor,
    n: usize,
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    population.validate()?;
    population.check_predictor(predictor)?;
    let e = population.elements();
    let mut rng = SeededRng::new(seed);
    let (mut x, mut y, mut p) = (vec![0.0; population.input_std.len()], vec![0.0; e], vec![0.0; e]);
    let (mut s1, mut s2) = (vec![0.0; e], vec![0.0; e]);
    for _ in 0..n {
        population.sample(&mut rng, &mut x, &mut y);
        predictor.predict_into(&x, &mut p);
        for i in 0..e {
            let sq = (p[i] - y[i]).powi(2);
            s1[i] += sq;
            s2[i] += sq * sq;
        }
    }
    let (m, k) = population.output_shape;
    let nf = n as f64;
    let mean = Matrix::from_fn(m, k, |j, kk| s1[j * k + kk] / nf);
    let se = Matrix::from_fn(m, k, |j, kk| {
        let i = j * k + kk;
        let mu = s1[i] / nf;
        ((s2[i] / nf - mu * mu).max(0.0) / (nf - 1.0)).sqrt()
    });
    Ok((mean, se))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInstance {
    pub population: Population,
    /// The predictor whose risk is estimated.
    pub g: LinearPredictor,
    /// The reference predictor supplying the bounds.
    pub g_star: LinearPredictor,
    pub eps: f64,
    /// Samples per trial.
    pub n: usize,
    pub trials: usize,
    /// Margin constant of the reduction bound (not the EMA decay rate).
    pub margin_alpha: f64,
    /// Batch size used by the per-trial Jensen audit.
    pub audit_batch_size: usize,
    /// Flood level used by the scalar flooding audit.
    pub audit_flood_level: f64,
    pub seed: u64,
}

impl OracleInstance {
    /// Independent scalar channels, one per output element: `x_e` feeds only
    /// output `e`, so per-element risk estimates are mutually independent.
    /// `g_star` is the population truth and `g` perturbs every slope by
    /// `perturbation`.
    pub fn independent_channels(
        output_shape: (usize, usize),
        slopes: &[f64],
        perturbation: &[f64],
        input_std: f64,
        noise_std: f64,
    ) -> Result<Self> {
        let e = output_shape.0 * output_shape.1;
        if slopes.len() != e || perturbation.len() != e {
            return Err(Error::config("one slope and one perturbation per output element"));
        }
        let truth = LinearPredictor::diagonal(slopes);
        let perturbed: Vec<f64> = slopes.iter().zip(perturbation).map(|(a, b)| a + b).collect();
        Ok(Self {
            population: Population {
                output_shape,
                input_std: vec![input_std; e],
                truth: truth.clone(),
                noise_std: vec![noise_std; e],
            },
            g: LinearPredictor::diagonal(&perturbed),
            g_star: truth,
            eps: 0.01,
            n: 25,
            trials: 20_000,
            margin_alpha: 0.05,
            audit_batch_size: 5,
            audit_flood_level: 0.5,
            seed: 2022,
        })
    }

    /// The instance used for acceptance: a 2 × 2 output, unit input and
    /// noise scales, slopes perturbed by about one unit.
    pub fn acceptance() -> Self {
        Self::independent_channels((2, 2), &[0.8, -0.5, 1.2, 0.3], &[1.0, -1.0, 0.9, 1.1], 1.0, 1.0)
            .expect("static instance is well formed")
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.population.check_predictor(&self.g)?;
        self.population.check_predictor(&self.g_star)?;
        if self.n == 0 {
            return Err(Error::config("training-set size must be ≥ 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be ≥ 1"));
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            return Err(Error::config("epsilon must be ≥ 0"));
        }
        if !(self.margin_alpha > 0.0 && self.margin_alpha.is_finite()) {
            return Err(Error::config("margin_alpha must be positive"));
        }
        if self.audit_batch_size == 0 {
            return Err(Error::config("audit batch size must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    /// Aggregate true risk `Σ_e R_e(g)`.
    pub true_risk: f64,
    pub mse_plain: f64,
    pub mse_wave: f64,
    /// Paired mean of `(R̂ − R)² − (R̂_wb − R)²`.
    pub mse_reduction: f64,
    pub se_plain: f64,
    pub se_wave: f64,
    pub se_reduction: f64,
    /// `4 α² Σ_e P̂[α < R̂_e(g*) − R̂_e(g) − ε]`.
    pub theorem_bound: f64,
    pub se_theorem_bound: f64,
    /// Fraction of trials where every flipped element `e` satisfies
    /// `R̂_e(g*) < R_e(g) + ε`.
    pub condition_b_rate: f64,
    pub condition_b_violation_rate: f64,
    /// Fraction of trials where every flipped element satisfies
    /// `α < R_e(g) − R̂_e(g*) + ε`.
    pub margin_condition_rate: f64,
    /// Fraction of trials with at least one flipped element.
    pub flip_rate: f64,
    /// Mean number of flipped elements per trial.
    pub mean_flipped: f64,
    pub jensen_violations: usize,
    pub jensen_checks: usize,
}

impl OracleReport {
    /// `mse_wave ≤ mse_plain` up to `sigmas` standard errors of the paired
    /// difference.
    pub fn reduction_holds(&self, sigmas: f64) -> bool {
        self.mse_reduction + sigmas * self.se_reduction >= 0.0
    }

    /// `mse_plain − mse_wave ≥ theorem_bound` up to `sigmas` standard errors.
    pub fn bound_holds(&self, sigmas: f64) -> bool {
        let se = (self.se_reduction.powi(2) + self.se_theorem_bound.powi(2)).sqrt();
        self.mse_reduction + sigmas * se >= self.theorem_bound
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        let rows: [(&str, String); 14] = [
            ("trials", self.trials.to_string()),
            ("true risk R(g)", format!("{:.6}", self.true_risk)),
            ("MSE plain", format!("{:.6} ± {:.6}", self.mse_plain, self.se_plain)),
            ("MSE wave", format!("{:.6} ± {:.6}", self.mse_wave, self.se_wave)),
            (
                "reduction",
                format!("{:.6} ± {:.6}", self.mse_reduction, self.se_reduction),
            ),
            (
                "bound",
                format!("{:.6} ± {:.6}", self.theorem_bound, self.se_theorem_bound),
            ),
            ("condition (b) rate", format!("{:.5}", self.condition_b_rate)),
            ("margin condition rate", format!("{:.5}", self.margin_condition_rate)),
            ("flip rate", format!("{:.5}", self.flip_rate)),
            ("mean flipped", format!("{:.5}", self.mean_flipped)),
            ("jensen checks", self.jensen_checks.to_string()),
            ("jensen violations", self.jensen_violations.to_string()),
            ("reduction ≥ 0 (3σ)", self.reduction_holds(3.0).to_string()),
            ("reduction ≥ bound (3σ)", self.bound_holds(3.0).to_string()),
        ];
        for (k, v) in rows {
            writeln!(out, "{k:<24} {v}")?;
        }
        Ok(())
    }
}

struct TrialOutcome {
    dev_plain: f64,
    dev_wave: f64,
    /// Per element: margin event `α < R̂*_e − R̂_e − ε`.
    margin_events: Vec<bool>,
    condition_b: bool,
    margin_condition: bool,
    flipped: usize,
    jensen: JensenAudit,
}

fn run_trial(inst: &OracleInstance, risk_g: &[f64], rng: &mut SeededRng) -> TrialOutcome {
    let pop = &inst.population;
    let e = pop.elements();
    let d = pop.input_std.len();
    let (mut x, mut y) = (vec![0.0; d], vec![0.0; e]);
    let (mut pg, mut ps) = (vec![0.0; e], vec![0.0; e]);
    let mut sq_g = Vec::with_capacity(inst.n);
    let mut sq_s = Vec::with_capacity(inst.n);
    for _ in 0..inst.n {
        pop.sample(rng, &mut x, &mut y);
        inst.g.predict_into(&x, &mut pg);
        inst.g_star.predict_into(&x, &mut ps);
        let a: Vec<f64> = pg.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).collect();
        let b: Vec<f64> = ps.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).collect();
        sq_g.push(Matrix::from_vec(pop.output_shape.0, pop.output_shape.1, a).unwrap());
        sq_s.push(Matrix::from_vec(pop.output_shape.0, pop.output_shape.1, b).unwrap());
    }
    let nf = inst.n as f64;
    let mut emp_g = vec![0.0; e];
    let mut emp_s = vec![0.0; e];
    for (a, b) in sq_g.iter().zip(&sq_s) {
        for i in 0..e {
            emp_g[i] += a.as_slice()[i];
            emp_s[i] += b.as_slice()[i];
        }
    }
    for v in emp_g.iter_mut().chain(emp_s.iter_mut()) {
        *v /= nf;
    }

    let (mut plain, mut wave, mut truth) = (0.0, 0.0, 0.0);
    let mut margin_events = vec![false; e];
    let (mut condition_b, mut margin_condition, mut flipped) = (true, true, 0);
    for i in 0..e {
        let bound = emp_s[i] - inst.eps;
        plain += emp_g[i];
        wave += flood(emp_g[i], bound);
        truth += risk_g[i];
        if emp_g[i] < bound {
            flipped += 1;
            condition_b &= emp_s[i] < risk_g[i] + inst.eps;
            margin_condition &= inst.margin_alpha < risk_g[i] - emp_s[i] + inst.eps;
        }
        margin_events[i] = inst.margin_alpha < emp_s[i] - emp_g[i] - inst.eps;
    }

    let partition: Vec<Vec<usize>> = (0..inst.n)
        .collect::<Vec<_>>()
        .chunks(inst.audit_batch_size)
        .map(|c| c.to_vec())
        .collect();
    let jensen = jensen_audit(&sq_g, &sq_s, &partition, inst.eps, inst.audit_flood_level)
        .expect("partition covers every sample");

    TrialOutcome {
        dev_plain: (plain - truth).powi(2),
        dev_wave: (wave - truth).powi(2),
        margin_events,
        condition_b,
        margin_condition,
        flipped,
        jensen,
    }
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Runs every trial on its own derived random stream (`stream = trial + 1`)
/// and reduces the results in trial order.
pub fn run_estimator_experiment(inst: &OracleInstance) -> Result<OracleReport> {
    inst.validate()?;
    let risk_g = true_risk(&inst.population, &inst.g)?.into_vec();
    let root = SeededRng::new(inst.seed);
    let outcomes: Vec<TrialOutcome> = (0..inst.trials)
        .into_par_iter()
        .map(|t| run_trial(inst, &risk_g, &mut root.derive(t as u64 + 1)))
        .collect();

    let n = outcomes.len();
    let nf = n as f64;
    let (mse_plain, se_plain) = mean_and_se(outcomes.iter().map(|o| o.dev_plain), n);
    let (mse_wave, se_wave) = mean_and_se(outcomes.iter().map(|o| o.dev_wave), n);
    let (mse_reduction, se_reduction) = mean_and_se(outcomes.iter().map(|o| o.dev_plain - o.dev_wave), n);

    let a2 = 4.0 * inst.margin_alpha * inst.margin_alpha;
    // Per-trial count of margin events; its mean times 4α² is the bound.
    let (mean_events, se_events) = mean_and_se(
        outcomes
            .iter()
            .map(|o| o.margin_events.iter().filter(|&&b| b).count() as f64),
        n,
    );
    let condition_b_rate = outcomes.iter().filter(|o| o.condition_b).count() as f64 / nf;
    let margin_condition_rate = outcomes.iter().filter(|o| o.margin_condition).count() as f64 / nf;
    let flip_rate = outcomes.iter().filter(|o| o.flipped > 0).count() as f64 / nf;
    let mean_flipped = outcomes.iter().map(|o| o.flipped as f64).sum::<f64>() / nf;
    let jensen_violations = outcomes.iter().map(|o| o.jensen.violations).sum();
    let jensen_checks = outcomes.iter().map(|o| o.jensen.checks).sum();

    Ok(OracleReport {
        trials: n,
        true_risk: risk_g.iter().sum(),
        mse_plain,
        mse_wave,
        mse_reduction,
        se_plain,
        se_wave,
        se_reduction,
        theorem_bound: a2 * mean_events,
        se_theorem_bound: a2 * se_events,
        condition_b_rate,
        condition_b_violation_rate: 1.0 - condition_b_rate,
        margin_condition_rate,
        flip_rate,
        mean_flipped,
        jensen_violations,
        jensen_checks,
    })
}

/// Outcome of a mini-batch Jensen audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JensenAudit {
    pub checks: usize,
    pub violations: usize,
}

/// Float slack allowed on every audited inequality.
pub const JENSEN_TOLERANCE: f64 = 1e-12;

/// Checks, for the given partition of the samples into mini-batches:
///
/// - per output element, the wave risk on the pooled set is at most the
///   batch-size-weighted mean of the per-batch wave risks;
/// - the flooded overall mean (level `flood_level`) is at most the weighted
///   mean of the per-batch flooded means.
///
/// `source_sq[i]` and `target_sq[i]` hold sample `i`'s squared errors under
/// `g` and `g*`. With equal batch sizes the weights are uniform.
pub fn jensen_audit(
    source_sq: &[Matrix],
    target_sq: &[Matrix],
    partition: &[Vec<usize>],
    eps: f64,
    flood_level: f64,
) -> Result<JensenAudit> {
    let n = source_sq.len();
    if n == 0 || target_sq.len() != n {
        return Err(Error::config("audit needs matching, non-empty error sets"));
    }
    let covered: usize = partition.iter().map(Vec::len).sum();
    let mut seen = vec![false; n];
    for &i in partition.iter().flatten() {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::config("partition must use every sample exactly once"));
        }
    }
    if covered != n || partition.iter().any(Vec::is_empty) {
        return Err(Error::config(
            "partition must cover every sample with non-empty batches",
        ));
    }
    let shape = source_sq[0].shape();
    let e = shape.0 * shape.1;
    let mean_of = |set: &[Matrix], idx: &[usize]| -> Vec<f64> {
        let mut acc = vec![0.0; e];
        for &i in idx {
            for (a, v) in acc.iter_mut().zip(set[i].as_slice()) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / idx.len() as f64).collect()
    };
    let all: Vec<usize> = (0..n).collect();
    let pooled_s = mean_of(source_sq, &all);
    let pooled_t = mean_of(target_sq, &all);

    let mut rhs_wave = vec![0.0; e];
    let mut rhs_flood = 0.0;
    for batch in partition {
        let w = batch.len() as f64 / n as f64;
        let bs = mean_of(source_sq, batch);
        let bt = mean_of(target_sq, batch);
        for i in 0..e {
            rhs_wave[i] += w * flood(bs[i], bt[i] - eps);
        }
        rhs_flood += w * flood(bs.iter().sum::<f64>() / e as f64, flood_level);
    }

    let mut audit = JensenAudit::default();
    for i in 0..e {
        audit.checks += 1;
        if flood(pooled_s[i], pooled_t[i] - eps) > rhs_wave[i] + JENSEN_TOLERANCE {
            audit.violations += 1;
        }
    }
    audit.checks += 1;
    let pooled_mean = pooled_s.iter().sum::<f64>() / e as f64;
    if flood(pooled_mean, flood_level) > rhs_flood + JENSEN_TOLERANCE {
        audit.violations += 1;
    }
    Ok(audit)
}
