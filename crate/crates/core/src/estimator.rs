//! Bilinear state-dependent travel-time model and its Kalman filter.
//!
//! Each (robot, arc) pair keeps its own [`TravelTimeSeries`]. The travel time
//! follows the bilinear model
//!
//! ```text
//! X(k) + a_1 X(k-1) + ... + a_r X(k-r)
//!     = xi(k) + b_1 xi(k-1) + ... + b_r xi(k-r) + sum_l sum_{z<=l} c_lz xi(k-l) X(k-z)
//! ```
//!
//! written about the running mean `mu` of the series, with `a_j = phi_j`.
//! The state vector has `2r + 1` entries:
//!
//! ```text
//! index 0          constant 1
//! 1 ..= r          xi, oldest first (slot r is the newest innovation)
//! r+1 ..= 2r       X,  oldest first (slot 2r is the newest travel time)
//! ```
//!
//! The transition matrix `F` shifts both windows by one and its last row is
//!
//! ```text
//! [ mu * (1 + sum_j phi_j),  psi_r, ..., psi_1,  -phi_r, ..., -phi_1 ]
//! ```
//!
//! so that with the default `phi_1 = -1` (random walk) the constant term
//! vanishes and the one-step prediction is the newest travel time plus the
//! sampled innovation. `V` has ones in the newest-xi and newest-X slots and
//! `H` selects the newest X. Process noise enters as `Q = q * V * V^T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::worldsim::TravelObservation;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("observed travel time {0} is not positive")]
    NonPositiveObservation(f64),
    #[error("target instance {target} is not after the series instance {instance}")]
    StaleTarget { target: u64, instance: u64 },
    #[error("observation at instance {got} does not follow series instance {last}")]
    OutOfOrder { got: u64, last: u64 },
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
}

fn default_regression() -> usize {
    4
}
fn default_process_noise() -> f64 {
    0.02
}
fn default_obs_noise() -> f64 {
    0.01
}
fn default_min_estimate() -> f64 {
    1e-3
}

/// History the innovation is sampled from when a fallback observation is
/// folded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnovationSource {
    /// Own history followed by the fallback.
    #[default]
    Series,
    /// Own history only.
    Own,
}

/// Model and filter constants, the `estimator` section of a scenario file.
///
/// Coefficient vectors shorter than the regression number are padded with
/// zeros; an empty `phi` means the random-walk default `[-1, 0, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_regression")]
    pub regression_no: usize,
    #[serde(default)]
    pub phi: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default = "default_process_noise")]
    pub process_noise_var: f64,
    #[serde(default = "default_obs_noise")]
    pub obs_noise_var: f64,
    #[serde(default)]
    pub fit_phi: bool,
    #[serde(default = "default_min_estimate")]
    pub min_estimate: f64,
    #[serde(default)]
    pub fallback_innovation: InnovationSource,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            regression_no: default_regression(),
            phi: Vec::new(),
            b: Vec::new(),
            c: Vec::new(),
            process_noise_var: default_process_noise(),
            obs_noise_var: default_obs_noise(),
            fit_phi: false,
            min_estimate: default_min_estimate(),
            fallback_innovation: InnovationSource::default(),
        }
    }
}

impl EstimatorConfig {
    /// Random-walk configuration with the given regression number.
    pub fn random_walk(r: usize) -> Self {
        Self {
            regression_no: r,
            ..Self::default()
        }
        .normalized()
        .expect("default config is valid")
    }

    /// Same coefficients resized for regression number `r`.
    pub fn with_regression(&self, r: usize) -> Result<Self, EstimatorError> {
        Self {
            regression_no: r,
            ..self.clone()
        }
        .normalized()
    }

    /// Validates and pads every coefficient block to the regression number.
    pub fn normalized(mut self) -> Result<Self, EstimatorError> {
        let r = self.regression_no;
        if r == 0 {
            return Err(EstimatorError::InvalidConfig(
                "regression_no must be >= 1".into(),
            ));
        }
        if !(self.process_noise_var >= 0.0 && self.obs_noise_var >= 0.0) {
            return Err(EstimatorError::InvalidConfig(
                "noise variances must be >= 0".into(),
            ));
        }
        if self.min_estimate.is_nan() || self.min_estimate <= 0.0 {
            return Err(EstimatorError::InvalidConfig(
                "min_estimate must be > 0".into(),
            ));
        }
        if self.phi.is_empty() {
            self.phi = vec![-1.0];
        }
        self.phi.resize(r, 0.0);
        self.b.resize(r, 0.0);
        self.c.resize(r, Vec::new());
        for row in &mut self.c {
            row.resize(r, 0.0);
        }
        let finite = self
            .phi
            .iter()
            .chain(&self.b)
            .chain(self.c.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(EstimatorError::InvalidConfig(
                "coefficients must be finite".into(),
            ));
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        2 * self.regression_no + 1
    }

    fn xi_slot(&self, age: usize) -> usize {
        // age 1 is the newest innovation.
        self.regression_no - age + 1
    }

    fn x_slot(&self, age: usize) -> usize {
        2 * self.regression_no - age + 1
    }

    fn newest_x(&self) -> usize {
        2 * self.regression_no
    }
}

/// Filter state for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub s: DVector<f64>,
    pub p: DMatrix<f64>,
    pub mu: f64,
    /// Number of travel times folded into `mu`.
    pub count: u64,
    /// Global instance of the newest travel time in the state.
    pub instance: u64,
}

impl EstimatorState {
    /// Builds a state from explicit windows, newest value last.
    ///
    /// Windows shorter than `r` are left-padded with `mu` (travel times) and
    /// zero (innovations); longer windows keep their newest `r` entries.
    pub fn from_windows(
        config: &EstimatorConfig,
        xs: &[f64],
        xis: &[f64],
        mu: f64,
        count: u64,
        instance: u64,
        p: DMatrix<f64>,
    ) -> Self {
        let r = config.regression_no;
        let mut s = DVector::zeros(config.dim());
        s[0] = 1.0;
        for age in 1..=r {
            s[config.x_slot(age)] = xs.len().checked_sub(age).map_or(mu, |i| xs[i]);
            s[config.xi_slot(age)] = xis.len().checked_sub(age).map_or(0.0, |i| xis[i]);
        }
        Self {
            s,
            p,
            mu,
            count,
            instance,
        }
    }

    /// State seeded by a first observation.
    pub fn initial(config: &EstimatorConfig, y: f64, instance: u64) -> Self {
        let n = config.dim();
        let mut p = DMatrix::identity(n, n) * config.obs_noise_var;
        p[(0, 0)] = 0.0;
        Self::from_windows(config, &[y], &[], y, 1, instance, p)
    }

    pub fn newest_x(&self) -> f64 {
        self.s[self.s.len() - 1]
    }

    /// The travel time `age` steps back (1 = newest).
    pub fn x(&self, config: &EstimatorConfig, age: usize) -> f64 {
        self.s[config.x_slot(age)]
    }

    pub fn xi(&self, config: &EstimatorConfig, age: usize) -> f64 {
        self.s[config.xi_slot(age)]
    }
}

/// Latest first difference of the observed travel times, 0 with fewer than two.
pub fn sample_innovation(history: &[TravelObservation]) -> f64 {
    match history {
        [.., prev, last] => last.travel_time - prev.travel_time,
        _ => 0.0,
    }
}

/// `psi_l = b_l + sum_{i=1..l} c_{l,i} X(k-i)` for `l = 1..=r`.
pub fn psi_terms(config: &EstimatorConfig, state: &EstimatorState) -> Vec<f64> {
    (1..=config.regression_no)
        .map(|l| {
            let bilinear: f64 = (1..=l)
                .map(|i| config.c[l - 1][i - 1] * state.x(config, i))
                .sum();
            config.b[l - 1] + bilinear
        })
        .collect()
}

/// State transition matrix for the current state; see the module docs for the layout.
#[allow(non_snake_case)]
pub fn build_F(config: &EstimatorConfig, state: &EstimatorState) -> DMatrix<f64> {
    let r = config.regression_no;
    let n = config.dim();
    let last = config.newest_x();
    let mut f = DMatrix::zeros(n, n);
    f[(0, 0)] = 1.0;
    for i in 1..r {
        f[(i, i + 1)] = 1.0;
    }
    for i in r + 1..last {
        f[(i, i + 1)] = 1.0;
    }
    let phi_sum: f64 = config.phi.iter().sum();
    f[(last, 0)] = state.mu * (1.0 + phi_sum);
    for (l, psi) in psi_terms(config, state).into_iter().enumerate() {
        f[(last, config.xi_slot(l + 1))] = psi;
    }
    for (j, phi) in config.phi.iter().enumerate() {
        f[(last, config.x_slot(j + 1))] = -phi;
    }
    f
}

fn v_vector(config: &EstimatorConfig) -> DVector<f64> {
    let mut v = DVector::zeros(config.dim());
    v[config.regression_no] = 1.0;
    v[config.newest_x()] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub s: DVector<f64>,
    pub p: DMatrix<f64>,
}

/// `s- = F s + V xi`, `P- = F P F^T + q V V^T`.
pub fn predict(config: &EstimatorConfig, state: &EstimatorState, innovation: f64) -> Prediction {
    let f = build_F(config, state);
    let v = v_vector(config);
    let s = &f * &state.s + &v * innovation;
    let mut p = &f * &state.p * f.transpose() + (&v * v.transpose()) * config.process_noise_var;
    symmetrize(&mut p);
    Prediction { s, p }
}

/// Mean of the one-step prediction without the covariance work.
pub fn predict_mean(config: &EstimatorConfig, state: &EstimatorState, innovation: f64) -> f64 {
    let phi_sum: f64 = config.phi.iter().sum();
    let mut x = state.mu * (1.0 + phi_sum);
    for (l, psi) in psi_terms(config, state).into_iter().enumerate() {
        x += psi * state.xi(config, l + 1);
    }
    for (j, phi) in config.phi.iter().enumerate() {
        x -= phi * state.x(config, j + 1);
    }
    x + innovation
}

/// Measurement update with `H` selecting the newest travel time.
///
/// The sampled innovation already entered the predicted newest travel time
/// through `V`, so the residual is `y - H s-`. The covariance uses the
/// Joseph form.
pub fn update(
    config: &EstimatorConfig,
    predicted: &Prediction,
    mu: f64,
    count: u64,
    y: f64,
    instance: u64,
) -> Result<EstimatorState, EstimatorError> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(EstimatorError::NonPositiveObservation(y));
    }
    let n = config.dim();
    let h = config.newest_x();
    let residual_var = predicted.p[(h, h)] + config.obs_noise_var;
    let (s, p) = if residual_var > 0.0 {
        let gain = predicted.p.column(h) / residual_var;
        let residual = y - predicted.s[h];
        let s = &predicted.s + &gain * residual;
        let mut i_kh = DMatrix::identity(n, n);
        for row in 0..n {
            i_kh[(row, h)] -= gain[row];
        }
        let mut p = &i_kh * &predicted.p * i_kh.transpose()
            + (&gain * gain.transpose()) * config.obs_noise_var;
        symmetrize(&mut p);
        (s, p)
    } else {
        (predicted.s.clone(), predicted.p.clone())
    };
    let count = count + 1;
    Ok(EstimatorState {
        s,
        p,
        mu: mu + (y - mu) / count as f64,
        count,
        instance,
    })
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = avg;
            p[(j, i)] = avg;
        }
    }
}

/// Least-squares AR fit with intercept; returns `phi` (so `-phi` are the
/// lag coefficients) or `None` when the fit is degenerate or not bounded by
/// a random walk.
pub fn fit_phi(values: &[f64], r: usize) -> Option<Vec<f64>> {
    if values.len() < 2 * r + 2 {
        return None;
    }
    let rows = values.len() - r;
    let design = DMatrix::from_fn(rows, r + 1, |t, j| {
        if j == r {
            1.0
        } else {
            values[t + r - 1 - j]
        }
    });
    let target = DVector::from_fn(rows, |t, _| values[t + r]);
    let solved = design.svd(true, true).solve(&target, 1e-12).ok()?;
    let beta = &solved.as_slice()[..r];
    let bounded =
        beta.iter().all(|b| b.is_finite()) && beta.iter().map(|b| b.abs()).sum::<f64>() <= 1.0;
    bounded.then(|| beta.iter().map(|b| -b).collect())
}

/// A travel-time estimate for one arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// No observation of the arc was available; `value` is the length prior.
    pub prior_only: bool,
}

/// Observation history and filter state for one (robot, arc) pair.
#[derive(Debug, Clone)]
pub struct TravelTimeSeries {
    config: EstimatorConfig,
    state: Option<EstimatorState>,
    history: Vec<TravelObservation>,
    fitted: bool,
}

impl TravelTimeSeries {
    pub fn new(config: EstimatorConfig) -> Self {
        Self {
            config,
            state: None,
            history: Vec::new(),
            fitted: false,
        }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EstimatorState> {
        self.state.as_ref()
    }

    pub fn history(&self) -> &[TravelObservation] {
        &self.history
    }

    pub fn last_instance(&self) -> Option<u64> {
        self.history.last().map(|o| o.instance)
    }

    /// Folds one observation into the filter: predict, then update.
    pub fn ingest(&mut self, obs: &TravelObservation) -> Result<(), EstimatorError> {
        if !(obs.travel_time > 0.0 && obs.travel_time.is_finite()) {
            return Err(EstimatorError::NonPositiveObservation(obs.travel_time));
        }
        if let Some(last) = self.last_instance() {
            if obs.instance <= last {
                return Err(EstimatorError::OutOfOrder {
                    got: obs.instance,
                    last,
                });
            }
        }
        let next = match &self.state {
            None => EstimatorState::initial(&self.config, obs.travel_time, obs.instance),
            Some(state) => {
                let innovation = sample_innovation(&self.history);
                let predicted = predict(&self.config, state, innovation);
                update(
                    &self.config,
                    &predicted,
                    state.mu,
                    state.count,
                    obs.travel_time,
                    obs.instance,
                )?
            }
        };
        self.state = Some(next);
        self.history.push(*obs);
        self.maybe_fit();
        Ok(())
    }

    fn maybe_fit(&mut self) {
        let r = self.config.regression_no;
        if !self.config.fit_phi || self.fitted || self.history.len() < 2 * r + 2 {
            return;
        }
        self.fitted = true;
        let values: Vec<f64> = self.history.iter().map(|o| o.travel_time).collect();
        if let Some(phi) = fit_phi(&values, r) {
            self.config.phi = phi;
        }
    }

    /// Estimated travel time at `target`.
    ///
    /// A `fallback` newer than the series is folded into a copy of the
    /// filter first as an observation; the series itself is left untouched.
    /// Without any data the estimate is `prior` and flagged as prior-only.
    pub fn estimate(
        &self,
        target: u64,
        fallback: Option<&TravelObservation>,
        prior: f64,
    ) -> Result<Estimate, EstimatorError> {
        if let Some(obs) = fallback {
            if self.last_instance().is_none_or(|last| obs.instance > last) {
                let mut scratch = self.clone();
                scratch.ingest(obs)?;
                let innovation = match self.config.fallback_innovation {
                    InnovationSource::Series => sample_innovation(&scratch.history),
                    InnovationSource::Own => sample_innovation(&self.history),
                };
                return scratch.predict_at(target, innovation, prior);
            }
        }
        self.predict_at(target, sample_innovation(&self.history), prior)
    }

    fn predict_at(
        &self,
        target: u64,
        innovation: f64,
        prior: f64,
    ) -> Result<Estimate, EstimatorError> {
        let Some(state) = &self.state else {
            return Ok(Estimate {
                value: prior.max(self.config.min_estimate),
                prior_only: true,
            });
        };
        if target <= state.instance {
            return Err(EstimatorError::StaleTarget {
                target,
                instance: state.instance,
            });
        }
        let value = predict_mean(&self.config, state, innovation);
        Ok(Estimate {
            value: value.max(self.config.min_estimate),
            prior_only: false,
        })
    }
}
