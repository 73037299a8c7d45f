//! Bridges: kernel density estimates of the terminal law, kernel-weighted
//! conditioning of path ensembles on the terminal value, and exact
//! finite-dimensional bridge laws of Gaussian-linear Markov models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::gaussian::factor_gram;
use crate::path_spaces::GridPath;
use crate::rng;
use crate::stats::{effective_sample_size, ks_two_sample};

/// Log of the Gaussian product kernel `K_σ(x)`.
pub fn log_kernel(x: &[f64], sigma: f64) -> f64 {
    let e = x.len() as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    -0.5 * r2 / (sigma * sigma) - 0.5 * e * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub b: Vec<f64>,
    pub sigma: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// `p̂ = (1/n) Σ K_σ(y_i - b)` with the standard error of the mean of the
/// kernel evaluations.
pub fn density_estimate(terminals: &[Vec<f64>], b: &[f64], sigma: f64) -> Result<DensityEstimate> {
    density_estimate_weighted(terminals, None, b, sigma)
}

/// Importance-sampled version: `p̂ = (1/n) Σ L_i K_σ(y_i - b)` with
/// likelihood ratios `L_i`.
pub fn density_estimate_weighted(
    terminals: &[Vec<f64>],
    likelihood_ratios: Option<&[f64]>,
    b: &[f64],
    sigma: f64,
) -> Result<DensityEstimate> {
    if terminals.is_empty() {
        return Err(invalid("density estimate needs at least one terminal value"));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {sigma}")));
    }
    if terminals.iter().any(|y| y.len() != b.len()) {
        return Err(shape("terminal values and b differ in dimension"));
    }
    if let Some(lr) = likelihood_ratios {
        if lr.len() != terminals.len() {
            return Err(shape("likelihood ratios and terminals differ in length"));
        }
    }
    if terminals.len() < 100 {
        log::warn!("density estimate from only {} samples", terminals.len());
    }
    let n = terminals.len() as f64;
    let vals: Vec<f64> = terminals
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let diff: Vec<f64> = y.iter().zip(b).map(|(p, q)| p - q).collect();
            let lr = likelihood_ratios.map_or(1.0, |l| l[i]);
            lr * log_kernel(&diff, sigma).exp()
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(DensityEstimate {
        b: b.to_vec(),
        sigma,
        estimate: mean,
        std_error: (var / n).sqrt(),
        n_paths: terminals.len(),
    })
}

/// Paths with normalised kernel weights `w_i ∝ q_i K_σ(y_T^{(i)} - b)`,
/// `q_i` optional prior (e.g. importance) weights.
#[derive(Clone, Debug)]
pub struct WeightedEnsemble<'a> {
    pub paths: &'a [GridPath<f64>],
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub b: Vec<f64>,
    pub ess: f64,
    prior_log_weights: Option<Vec<f64>>,
}

/// Weight an ensemble by the Gaussian kernel at its terminal values.
pub fn kernel_conditioned_ensemble<'a>(
    paths: &'a [GridPath<f64>],
    b: &[f64],
    sigma: f64,
) -> Result<WeightedEnsemble<'a>> {
    weighted_ensemble(paths, None, b, sigma)
}

/// As [`kernel_conditioned_ensemble`], with prior log-weights per path.
pub fn weighted_ensemble<'a>(
    paths: &'a [GridPath<f64>],
    prior_log_weights: Option<Vec<f64>>,
    b: &[f64],
    sigma: f64,
) -> Result<WeightedEnsemble<'a>> {
    if paths.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {sigma}")));
    }
    if paths.iter().any(|p| p.dim() != b.len()) {
        return Err(shape("paths and b differ in dimension"));
    }
    if let Some(p) = &prior_log_weights {
        if p.len() != paths.len() {
            return Err(shape("prior weights and paths differ in length"));
        }
    }
    let logw: Vec<f64> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let diff: Vec<f64> = p.end().iter().zip(b).map(|(x, y)| x - y).collect();
            let prior = prior_log_weights.as_ref().map_or(0.0, |q| q[i]);
            prior - 0.5 * diff.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma)
        })
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // underflow is judged on the unnormalised kernel values
    let peak_kernel = max + log_kernel(&vec![0.0; b.len()], sigma);
    if !max.is_finite() || peak_kernel < f64::MIN_POSITIVE.ln() {
        return Err(Error::WeightUnderflow);
    }
    let mut weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    Ok(WeightedEnsemble {
        paths,
        weights,
        sigma,
        b: b.to_vec(),
        ess,
        prior_log_weights,
    })
}

/// Weighted mean and variance of a sample.
pub fn weighted_moments(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values.iter().zip(weights).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
    (mean, var)
}

/// Bootstrap standard errors of the weighted mean and variance: the pairs
/// `(value_i, weight_i)` are resampled with replacement and the weighted
/// moments recomputed.
pub fn bootstrap_moments_se(values: &[f64], weights: &[f64], n_boot: usize, seed: u64) -> (f64, f64) {
    let n = values.len();
    let reps: Vec<(f64, f64)> = (0..n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r);
            let (mut sw, mut swx, mut swx2) = (0.0, 0.0, 0.0);
            for _ in 0..n {
                let i = g.random_range(0..n);
                let (x, w) = (values[i], weights[i]);
                sw += w;
                swx += w * x;
                swx2 += w * x * x;
            }
            if sw > 0.0 {
                let m = swx / sw;
                (m, (swx2 / sw - m * m).max(0.0))
            } else {
                (f64::NAN, f64::NAN)
            }
        })
        .collect();
    let ok: Vec<&(f64, f64)> = reps.iter().filter(|r| r.0.is_finite()).collect();
    let k = ok.len() as f64;
    let sd = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let m = ok.iter().map(|r| f(r)).sum::<f64>() / k;
        (ok.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    (sd(&|r| r.0), sd(&|r| r.1))
}

/// `(4 f(σ/2) - f(σ)) / 3`, removing an `O(σ²)` bandwidth bias.
pub fn extrapolate_bandwidth(at_sigma: f64, at_half: f64) -> f64 {
    (4.0 * at_half - at_sigma) / 3.0
}

/// Value of a functional at σ and σ/2 and the resulting diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthDrift {
    pub at_sigma: f64,
    pub at_half: f64,
    pub drift: f64,
    pub extrapolated: f64,
}

impl<'a> WeightedEnsemble<'a> {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Component `k` of every path at grid index `i`.
    pub fn values_at(&self, i: usize, k: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.value(i)[k]).collect()
    }

    /// Weighted mean and variance of component `k` at grid index `i`.
    pub fn moments_at(&self, i: usize, k: usize) -> (f64, f64) {
        weighted_moments(&self.values_at(i, k), &self.weights)
    }

    /// Weighted mean path.
    pub fn mean_path(&self) -> Result<GridPath<f64>> {
        let p0 = &self.paths[0];
        let mut values = vec![0.0; p0.values().len()];
        for (p, w) in self.paths.iter().zip(&self.weights) {
            for (v, x) in values.iter_mut().zip(p.values()) {
                *v += w * x;
            }
        }
        GridPath::new(p0.dim(), p0.horizon(), p0.level(), values)
    }

    pub fn terminal_mean(&self) -> Vec<f64> {
        let n = self.paths[0].n_intervals();
        (0..self.b.len()).map(|k| self.moments_at(n, k).0).collect()
    }

    /// Weighted mean of an arbitrary path functional.
    pub fn expectation(&self, f: impl Fn(&GridPath<f64>) -> f64 + Sync) -> f64 {
        let vals: Vec<f64> = self.paths.par_iter().map(&f).collect();
        vals.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Same ensemble re-weighted at another bandwidth.
    pub fn reweight(&self, sigma: f64) -> Result<WeightedEnsemble<'a>> {
        weighted_ensemble(self.paths, self.prior_log_weights.clone(), &self.b, sigma)
    }

    /// Evaluate a functional of the weighted law at σ and σ/2.
    pub fn bandwidth_drift(&self, f: impl Fn(&WeightedEnsemble<'a>) -> f64) -> Result<BandwidthDrift> {
        let half = self.reweight(self.sigma / 2.0)?;
        let (a, h) = (f(self), f(&half));
        Ok(BandwidthDrift {
            at_sigma: a,
            at_half: h,
            drift: h - a,
            extrapolated: extrapolate_bandwidth(a, h),
        })
    }

    /// Degenerate conditioning: the straight line from `a` to `b`.
    pub fn straight_line(a: &[f64], b: &[f64], horizon: f64, level: u32) -> Result<GridPath<f64>> {
        GridPath::linear(a, b, horizon, level)
    }
}

/// Transition density of a time-homogeneous Markov model.
pub trait TransitionDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, t: f64, x: &[f64], y: &[f64]) -> f64;
}

/// Gaussian-linear transitions `X_{s+t} | X_s = x ~ N(Φ_t x, Q_t)`.
pub trait GaussianTransition: TransitionDensity {
    fn flow(&self, t: f64) -> DMatrix<f64>;
    fn covariance(&self, t: f64) -> DMatrix<f64>;
}

fn gaussian_log_density(mean: &DVector<f64>, cov: &DMatrix<f64>, y: &[f64]) -> f64 {
    let e = mean.len();
    let Some(ch) = cov.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let r = DVector::from_column_slice(y) - mean;
    let z = ch.l().solve_lower_triangular(&r).expect("triangular solve");
    let logdet: f64 = ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (z.norm_squared() + logdet + e as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// `dX = A dW` in `R^e` with `A` an `e x d` matrix: `Φ_t = I`, `Q_t = t A Aᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrownianModel {
    pub diffusion: Vec<Vec<f64>>,
}

impl BrownianModel {
    pub fn standard(dim: usize) -> Self {
        Self {
            diffusion: (0..dim)
                .map(|a| (0..dim).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    fn sigma(&self) -> DMatrix<f64> {
        let e = self.diffusion.len();
        let d = self.diffusion.first().map_or(0, Vec::len);
        let a = DMatrix::from_fn(e, d, |i, j| self.diffusion[i][j]);
        &a * a.transpose()
    }
}

impl TransitionDensity for BrownianModel {
    fn dim(&self) -> usize {
        self.diffusion.len()
    }
    fn log_density(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        gaussian_log_density(&DVector::from_column_slice(x), &self.covariance(t), y)
    }
}

impl GaussianTransition for BrownianModel {
    fn flow(&self, _t: f64) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }
    fn covariance(&self, t: f64) -> DMatrix<f64> {
        self.sigma() * t
    }
}

/// Scalar `dX = -θ X dt + s dW`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrnsteinUhlenbeck {
    pub theta: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl OrnsteinUhlenbeck {
    /// `(1 - e^{-2θt}) / (2θ)`, equal to `t` at `θ = 0`.
    pub fn variance_factor(&self, t: f64) -> f64 {
        if self.theta == 0.0 {
            t
        } else {
            -(-2.0 * self.theta * t).exp_m1() / (2.0 * self.theta)
        }
    }
}

impl TransitionDensity for OrnsteinUhlenbeck {
    fn dim(&self) -> usize {
        1
    }
    fn log_density(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let m = x[0] * (-self.theta * t).exp();
        let v = self.scale * self.scale * self.variance_factor(t);
        -0.5 * ((y[0] - m).powi(2) / v + (2.0 * std::f64::consts::PI * v).ln())
    }
}

impl GaussianTransition for OrnsteinUhlenbeck {
    fn flow(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, (-self.theta * t).exp())
    }
    fn covariance(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.scale * self.scale * self.variance_factor(t))
    }
}

/// Built-in Gaussian-linear models, as named in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BridgeModel {
    Brownian { diffusion: Vec<Vec<f64>> },
    OrnsteinUhlenbeck {
        theta: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

impl BridgeModel {
    pub fn as_transition(&self) -> Box<dyn GaussianTransition> {
        match self {
            BridgeModel::Brownian { diffusion } => Box::new(BrownianModel {
                diffusion: diffusion.clone(),
            }),
            BridgeModel::OrnsteinUhlenbeck { theta, scale } => Box::new(OrnsteinUhlenbeck {
                theta: *theta,
                scale: *scale,
            }),
        }
    }
}

/// `n` paths of a Gaussian-linear model from `a` on the level-`level`
/// grid of `[0, horizon]`, by exact transitions. Path `i` uses stream
/// `(seed, i)`.
pub fn sample_model_paths(
    model: &dyn GaussianTransition,
    a: &[f64],
    horizon: f64,
    level: u32,
    n: usize,
    seed: u64,
) -> Result<Vec<GridPath<f64>>> {
    let e = model.dim();
    if a.len() != e {
        return Err(shape("initial state and model differ in dimension"));
    }
    let steps = 1usize << level;
    let dt = horizon / steps as f64;
    let phi = model.flow(dt);
    let l = factor_gram(model.covariance(dt), "one-step transition covariance")?.l();
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, i);
            let mut x = DVector::from_column_slice(a);
            let mut values = Vec::with_capacity((steps + 1) * e);
            values.extend_from_slice(a);
            for _ in 0..steps {
                let z = DVector::from_fn(e, |_, _| StandardNormal.sample(&mut g));
                x = &phi * x + &l * z;
                values.extend(x.iter());
            }
            GridPath::new(e, horizon, level, values)
        })
        .collect()
}

/// Finite-dimensional law of the bridge from `a` at 0 to `b` at `T`
/// through the interior times.
pub struct BridgeFdd<'m> {
    model: &'m dyn TransitionDensity,
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub log_p_ab: f64,
}

/// Bridge law for `times = (t_1 < ... < t_N = T)`.
pub fn brownian_bridge_fdd<'m>(
    model: &'m dyn TransitionDensity,
    times: &[f64],
    a: &[f64],
    b: &[f64],
) -> Result<BridgeFdd<'m>> {
    if times.is_empty() || times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times must be positive and strictly increasing"));
    }
    if a.len() != model.dim() || b.len() != model.dim() {
        return Err(shape("endpoints and model differ in dimension"));
    }
    let horizon = *times.last().expect("non-empty");
    let log_p_ab = model.log_density(horizon, a, b);
    if !log_p_ab.is_finite() {
        return Err(Error::UndefinedBridge);
    }
    Ok(BridgeFdd {
        model,
        times: times.to_vec(),
        a: a.to_vec(),
        b: b.to_vec(),
        log_p_ab,
    })
}

/// Either a bridge law or, when `p(T, a, b) = 0`, the straight line from
/// `a` to `b` flagged as degenerate.
pub enum BridgeOutcome<'m> {
    Law(BridgeFdd<'m>),
    Degenerate { line: GridPath<f64> },
}

pub fn bridge_or_line<'m>(
    model: &'m dyn TransitionDensity,
    times: &[f64],
    a: &[f64],
    b: &[f64],
    level: u32,
) -> Result<BridgeOutcome<'m>> {
    match brownian_bridge_fdd(model, times, a, b) {
        Ok(f) => Ok(BridgeOutcome::Law(f)),
        Err(Error::UndefinedBridge) => Ok(BridgeOutcome::Degenerate {
            line: GridPath::linear(a, b, *times.last().expect("non-empty"), level)?,
        }),
        Err(e) => Err(e),
    }
}

impl BridgeFdd<'_> {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Log of `p(T,a,b)^{-1} Π p(t_i - t_{i-1}, x_{i-1}, x_i)` with
    /// `x_N = b`; `points` are the values at the interior times.
    pub fn log_density(&self, points: &[Vec<f64>]) -> Result<f64> {
        if points.len() + 1 != self.times.len() {
            return Err(shape(format!(
                "{} interior points for {} interior times",
                points.len(),
                self.times.len() - 1
            )));
        }
        let mut prev = (0.0, self.a.as_slice());
        let mut total = -self.log_p_ab;
        for (t, x) in self.times.iter().zip(points.iter().map(Vec::as_slice).chain([self.b.as_slice()])) {
            total += self.model.log_density(t - prev.0, prev.1, x);
            prev = (*t, x);
        }
        Ok(total)
    }

    pub fn density(&self, points: &[Vec<f64>]) -> Result<f64> {
        Ok(self.log_density(points)?.exp())
    }
}

/// Law of `X_t` given `X_s = x` and `X_T = b`, in precision form.
fn conditional_gaussian(
    model: &dyn GaussianTransition,
    s: f64,
    x: &[f64],
    t: f64,
    horizon: f64,
    b: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (phi1, q1) = (model.flow(t - s), model.covariance(t - s));
    let (phi2, q2) = (model.flow(horizon - t), model.covariance(horizon - t));
    let c1 = factor_gram(q1, "bridge transition covariance")?;
    let x = DVector::from_column_slice(x);
    let b = DVector::from_column_slice(b);
    if horizon - t <= 0.0 {
        return Ok((b, DMatrix::zeros(x.len(), x.len())));
    }
    let c2 = factor_gram(q2, "bridge transition covariance")?;
    let q2_inv_phi2 = c2.solve(&phi2);
    let precision = c1.inverse() + phi2.transpose() * &q2_inv_phi2;
    let rhs = c1.solve(&(&phi1 * x)) + phi2.transpose() * c2.solve(&b);
    let cp = factor_gram(precision, "bridge precision")?;
    Ok((cp.solve(&rhs), cp.inverse()))
}

impl BridgeFdd<'_> {
    /// Exact marginal `(mean, covariance)` at each interior time.
    pub fn marginals(&self, model: &dyn GaussianTransition) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let horizon = self.horizon();
        self.times[..self.times.len() - 1]
            .iter()
            .map(|&t| conditional_gaussian(model, 0.0, &self.a, t, horizon, &self.b))
            .collect()
    }

    /// `n` exact joint samples of the interior points, sampled sequentially
    /// from the Markov bridge. Sample `i` uses stream `(seed, i)`.
    pub fn sample(&self, model: &dyn GaussianTransition, n: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
        let horizon = self.horizon();
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut g = rng::stream(seed, i);
                let mut prev = (0.0, self.a.clone());
                let mut out = Vec::with_capacity(self.times.len() - 1);
                for &t in &self.times[..self.times.len() - 1] {
                    let (m, c) = conditional_gaussian(model, prev.0, &prev.1, t, horizon, &self.b)?;
                    let l = factor_gram(c, "bridge conditional covariance")?.l();
                    let z = DVector::from_fn(m.len(), |_, _| StandardNormal.sample(&mut g));
                    let x: Vec<f64> = (m + l * z).iter().copied().collect();
                    out.push(x.clone());
                    prev = (t, x);
                }
                Ok(out)
            })
            .collect()
    }
}

/// Comparison of one marginal component at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison {
    pub time: f64,
    pub component: usize,
    pub exact_mean: f64,
    pub exact_variance: f64,
    pub weighted_mean: f64,
    pub weighted_variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

impl MarginalComparison {
    pub fn mean_error(&self) -> f64 {
        (self.weighted_mean - self.exact_mean).abs()
    }
    pub fn variance_error(&self) -> f64 {
        (self.weighted_variance - self.exact_variance).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub sigma: f64,
    pub ess: f64,
    pub n_paths: usize,
    pub comparisons: Vec<MarginalComparison>,
}

/// Monte Carlo settings of [`bridge_consistency_test`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyParams {
    pub sigma: f64,
    pub n_boot: usize,
    pub n_exact: usize,
    pub seed: u64,
}

/// Compare kernel-conditioned marginals of `paths` (sampled from `model`
/// started at `a`) with the exact bridge marginals at grid times `times`.
pub fn bridge_consistency_test(
    model: &dyn GaussianTransition,
    paths: &[GridPath<f64>],
    times: &[f64],
    a: &[f64],
    b: &[f64],
    params: ConsistencyParams,
) -> Result<ConsistencyReport> {
    let first = paths.first().ok_or_else(|| invalid("empty ensemble"))?;
    let horizon = first.horizon();
    let mut all_times = times.to_vec();
    if all_times.last().is_none_or(|t| (t - horizon).abs() > 1e-12 * horizon) {
        all_times.push(horizon);
    }
    let grid_index = |t: f64| -> Result<usize> {
        let x = t / first.step();
        let i = x.round();
        if (x - i).abs() > 1e-9 || i < 0.0 || i as usize > first.n_intervals() {
            return Err(invalid(format!("time {t} is not on the path grid")));
        }
        Ok(i as usize)
    };
    let fdd = brownian_bridge_fdd(model, &all_times, a, b)?;
    let mut exact = fdd.marginals(model)?;
    exact.push((DVector::from_column_slice(b), DMatrix::zeros(b.len(), b.len())));
    let samples = fdd.sample(model, params.n_exact, rng::derive_seed(params.seed, 1))?;
    let ens = kernel_conditioned_ensemble(paths, b, params.sigma)?;
    let mut comparisons = Vec::new();
    for (ti, &t) in all_times.iter().enumerate() {
        let gi = grid_index(t)?;
        for k in 0..b.len() {
            let vals = ens.values_at(gi, k);
            let (m, v) = weighted_moments(&vals, &ens.weights);
            let (mse, vse) = bootstrap_moments_se(
                &vals,
                &ens.weights,
                params.n_boot,
                rng::derive_seed(params.seed, 100 + (ti * b.len() + k) as u64),
            );
            let ks = if ti + 1 < all_times.len() {
                let reference: Vec<f64> = samples.iter().map(|s| s[ti][k]).collect();
                ks_two_sample(&reference, &vals, Some(&ens.weights))?
            } else {
                // the exact terminal law is δ_b
                ks_two_sample(&[b[k]], &vals, Some(&ens.weights))?
            };
            comparisons.push(MarginalComparison {
                time: t,
                component: k,
                exact_mean: exact[ti].0[k],
                exact_variance: exact[ti].1[(k, k)],
                weighted_mean: m,
                weighted_variance: v,
                mean_se: mse,
                variance_se: vse,
                ks_statistic: ks.statistic,
                ks_p_value: ks.p_value,
            });
        }
    }
    Ok(ConsistencyReport {
        sigma: params.sigma,
        ess: ens.ess,
        n_paths: paths.len(),
        comparisons,
    })
}

/// Kish effective sample size of unnormalised weights.
pub fn ess(weights: &[f64]) -> f64 {
    effective_sample_size(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_of_point_mass() {
        let t = vec![vec![0.3, -0.2]; 150];
        let d = density_estimate(&t, &[0.3, -0.2], 0.2).unwrap();
        assert!((d.estimate - 1.0 / (2.0 * std::f64::consts::PI * 0.04)).abs() < 1e-12);
        assert!(d.std_error < 1e-12);
        assert!(density_estimate(&[], &[0.0], 0.1).is_err());
    }

    #[test]
    fn density_is_permutation_invariant() {
        let t: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
        let mut r = t.clone();
        r.reverse();
        let a = density_estimate(&t, &[0.1], 0.3).unwrap().estimate;
        let b = density_estimate(&r, &[0.1], 0.3).unwrap().estimate;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn wide_kernel_gives_uniform_weights() {
        let paths: Vec<GridPath<f64>> = (0..50)
            .map(|i| GridPath::linear(&[0.0], &[i as f64 * 0.01], 1.0, 2).unwrap())
            .collect();
        let e = kernel_conditioned_ensemble(&paths, &[0.0], 1e8).unwrap();
        assert!((e.ess - 50.0).abs() < 1e-9);
        assert!(matches!(
            kernel_conditioned_ensemble(&paths, &[1e6], 1e-3),
            Err(Error::WeightUnderflow)
        ));
    }

    #[test]
    fn bm_bridge_marginal() {
        let m = BrownianModel::standard(1);
        let f = brownian_bridge_fdd(&m, &[0.3, 1.0], &[0.5], &[2.0]).unwrap();
        let (mean, cov) = &f.marginals(&m).unwrap()[0];
        assert!((mean[0] - (0.5 + 1.5 * 0.3)).abs() < 1e-14);
        assert!((cov[(0, 0)] - 0.3 * 0.7).abs() < 1e-14);
        let sym = brownian_bridge_fdd(&m, &[0.4, 1.0], &[1.0], &[1.0]).unwrap();
        assert!((sym.marginals(&m).unwrap()[0].0[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ou_with_zero_rate_is_bm() {
        let ou = OrnsteinUhlenbeck { theta: 0.0, scale: 1.0 };
        let bm = BrownianModel::standard(1);
        let times = [0.25, 0.5, 0.75, 1.0];
        let fo = brownian_bridge_fdd(&ou, &times, &[0.2], &[-1.0]).unwrap();
        let fb = brownian_bridge_fdd(&bm, &times, &[0.2], &[-1.0]).unwrap();
        for ((m1, c1), (m2, c2)) in fo.marginals(&ou).unwrap().iter().zip(fb.marginals(&bm).unwrap()) {
            assert!((m1[0] - m2[0]).abs() < 1e-10 && (c1[(0, 0)] - c2[(0, 0)]).abs() < 1e-10);
        }
        let pts = vec![vec![0.1], vec![-0.3], vec![-0.5]];
        assert!((fo.log_density(&pts).unwrap() - fb.log_density(&pts).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn degenerate_bridge_is_a_line() {
        let m = BrownianModel {
            diffusion: vec![vec![1.0], vec![1.0]],
        };
        assert!(matches!(
            brownian_bridge_fdd(&m, &[0.5, 1.0], &[0.0, 0.0], &[1.0, -1.0]),
            Err(Error::UndefinedBridge)
        ));
        match bridge_or_line(&m, &[0.5, 1.0], &[0.0, 0.0], &[1.0, -1.0], 3).unwrap() {
            BridgeOutcome::Degenerate { line } => assert_eq!(line.value(4), &[0.5, -0.5]),
            BridgeOutcome::Law(_) => panic!("expected a degenerate bridge"),
        }
    }

    #[test]
    fn bridge_density_integrates_to_one() {
        let ou = OrnsteinUhlenbeck { theta: 0.7, scale: 1.3 };
        let f = brownian_bridge_fdd(&ou, &[0.4, 1.0], &[0.5], &[-0.2]).unwrap();
        let (lo, hi, n) = (-8.0, 8.0, 20000);
        let dx = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| f.density(&[vec![lo + (i as f64 + 0.5) * dx]]).unwrap() * dx)
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
