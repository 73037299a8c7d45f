//! Small-noise asymptotics: the endpoint rate function by constrained
//! minimisation of the Cameron–Martin proxy norm, the Schilder rate, the
//! bridge rate `J`, Varadhan sweeps and Gaussian tail probes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{density_estimate_weighted, DensityEstimate};
use crate::error::{invalid, shape, Error, Result};
use crate::gaussian::{factor_gram, CameronMartinElement, CovarianceModel, FbmSampler};
use crate::lift::lift_dyadic;
use crate::path_spaces::{homogeneous_norm, GridPath, NormMode};
use crate::rng;
use crate::solvers::{
    control_from_path, ellipticity_check, solve_grid, solve_rde_scaled, Scheme, VectorFieldSystem,
    ELLIPTICITY_THRESHOLD,
};
use crate::stats::{linear_fit, LinearFit};

/// Finest control grid accepted by [`rate_endpoint`].
pub const MAX_CONTROL_LEVEL: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub penalty_start: f64,
    pub penalty_growth: f64,
    pub stages: usize,
    /// Gauss–Newton iterations per penalty stage.
    pub max_iterations: usize,
    /// Terminal residual required for success.
    pub tolerance: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            penalty_start: 1e2,
            penalty_growth: 10.0,
            stages: 5,
            max_iterations: 50,
            tolerance: 1e-8,
            fd_step: 1e-7,
        }
    }
}

/// Steer `a` to `b` at the horizon of `model` through the skeleton ODE.
#[derive(Clone, Debug)]
pub struct RateProblem {
    pub system: VectorFieldSystem<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub beta0: f64,
    pub model: CovarianceModel,
    /// Controls are parametrised by their values on the level-`control_level` grid.
    pub control_level: u32,
    /// Grid of the skeleton solve.
    pub solve_level: u32,
    pub settings: OptimizerSettings,
}

impl RateProblem {
    pub fn new(
        system: VectorFieldSystem<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
        beta0: f64,
        model: CovarianceModel,
    ) -> Result<Self> {
        let p = Self {
            system,
            a,
            b,
            beta0,
            model,
            control_level: 5,
            solve_level: 8,
            settings: OptimizerSettings::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (e, d) = (self.system.state_dim(), self.system.driver_dim());
        if self.a.len() != e || self.b.len() != e {
            return Err(shape(format!("endpoints must lie in R^{e}")));
        }
        if self.model.dim() != d {
            return Err(shape(format!(
                "covariance model has {} components, fields have {d} drivers",
                self.model.dim()
            )));
        }
        self.model.validate()?;
        if self.control_level == 0 || self.control_level > MAX_CONTROL_LEVEL {
            return Err(invalid(format!(
                "control level must be in 1..={MAX_CONTROL_LEVEL}, got {}",
                self.control_level
            )));
        }
        if self.solve_level < self.control_level {
            return Err(invalid("solve level must be at least the control level"));
        }
        let s = &self.settings;
        if !(s.penalty_start > 0.0 && s.penalty_growth > 1.0 && s.tolerance > 0.0 && s.fd_step > 0.0) {
            return Err(invalid("optimizer settings must be positive with penalty growth > 1"));
        }
        Ok(())
    }

    fn horizon(&self) -> f64 {
        self.model.horizon()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: usize,
    pub penalty: f64,
    pub iteration: usize,
    pub value: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    /// Minimising control on the solve grid.
    pub control: GridPath<f64>,
    /// Control values `[component][k]` at the control grid times.
    pub control_values: Vec<Vec<f64>>,
    pub control_times: Vec<f64>,
    /// `½ vᵀ Σ⁻¹ v`.
    pub value: f64,
    /// `|Ψ_a(h*)_T - b|`.
    pub residual: f64,
    pub trace: Vec<TraceEntry>,
}

/// Linear map from whitened coordinates `u` to the control path: per
/// component `v = L u` on the control grid and `h = K Σ⁻¹ v` on the solve
/// grid, `K` the covariance between solve and control times.
struct ControlMap {
    e: usize,
    d: usize,
    n_ctrl: usize,
    solve_level: u32,
    horizon: f64,
    factors: Vec<DMatrix<f64>>,
    to_fine: Vec<DMatrix<f64>>,
    times: Vec<f64>,
}

impl ControlMap {
    fn new(p: &RateProblem) -> Result<Self> {
        let n_ctrl = 1usize << p.control_level;
        let n_fine = 1usize << p.solve_level;
        let t_end = p.horizon();
        let times: Vec<f64> = (1..=n_ctrl).map(|k| t_end * k as f64 / n_ctrl as f64).collect();
        let mut factors = Vec::new();
        let mut to_fine = Vec::new();
        for j in 0..p.model.dim() {
            let chol = factor_gram(p.model.gram(j, &times)?, "control Gram matrix")?;
            let l = chol.l();
            let mut k = DMatrix::zeros(n_ctrl, n_fine + 1);
            for (a, &ta) in times.iter().enumerate() {
                for i in 1..=n_fine {
                    k[(a, i)] = p.model.covariance(j, t_end * i as f64 / n_fine as f64, ta)?;
                }
            }
            let a_t = l
                .solve_lower_triangular(&k)
                .ok_or_else(|| Error::Factorization("the control map".into()))?;
            to_fine.push(a_t.transpose());
            factors.push(l);
        }
        Ok(Self {
            e: p.system.state_dim(),
            d: p.model.dim(),
            n_ctrl,
            solve_level: p.solve_level,
            horizon: t_end,
            factors,
            to_fine,
            times,
        })
    }

    fn n_vars(&self) -> usize {
        self.d * self.n_ctrl
    }

    fn path(&self, u: &DVector<f64>) -> GridPath<f64> {
        let n_fine = 1usize << self.solve_level;
        let mut values = vec![0.0; (n_fine + 1) * self.d];
        for j in 0..self.d {
            let uj = u.rows(j * self.n_ctrl, self.n_ctrl);
            let h = &self.to_fine[j] * uj;
            for i in 0..=n_fine {
                values[i * self.d + j] = h[i];
            }
        }
        GridPath::new(self.d, self.horizon, self.solve_level, values).expect("finite control")
    }

    fn values(&self, u: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..self.d)
            .map(|j| (&self.factors[j] * u.rows(j * self.n_ctrl, self.n_ctrl)).iter().copied().collect())
            .collect()
    }

    /// Whitened coordinates of control values sampled from a solve-grid path.
    fn coordinates(&self, h: &GridPath<f64>) -> Result<DVector<f64>> {
        let stride = h.n_intervals() / self.n_ctrl;
        let mut u = DVector::zeros(self.n_vars());
        for j in 0..self.d {
            let v = DVector::from_fn(self.n_ctrl, |k, _| h.value((k + 1) * stride)[j] - h.value(0)[j]);
            let uj = self.factors[j]
                .solve_lower_triangular(&v)
                .ok_or_else(|| Error::Factorization("the warm start".into()))?;
            u.rows_mut(j * self.n_ctrl, self.n_ctrl).copy_from(&uj);
        }
        Ok(u)
    }
}

fn terminal_residual(p: &RateProblem, map: &ControlMap, u: &DVector<f64>) -> Result<DVector<f64>> {
    let h = map.path(u);
    let sol = solve_grid(&p.system, &h, &p.a, p.beta0, Scheme::SegmentRk4, false)?;
    Ok(DVector::from_fn(map.e, |k, _| sol.terminal()[k] - p.b[k]))
}

fn fd_jacobian(p: &RateProblem, map: &ControlMap, u: &DVector<f64>, g: &DVector<f64>) -> Result<DMatrix<f64>> {
    let cols: Vec<DVector<f64>> = (0..map.n_vars())
        .into_par_iter()
        .map(|k| {
            let step = p.settings.fd_step * u[k].abs().max(1.0);
            let mut up = u.clone();
            up[k] += step;
            Ok((terminal_residual(p, map, &up)? - g) / step)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Minimise `½ vᵀ Σ⁻¹ v` over grid controls `v` subject to
/// `Ψ_a(h(v))_T = b`, by quadratic-penalty Gauss–Newton stages followed by
/// constrained Gauss–Newton polishing of the terminal constraint.
pub fn rate_endpoint(p: &RateProblem) -> Result<RateResult> {
    p.validate()?;
    let map = ControlMap::new(p)?;
    let s = p.settings;
    let line = GridPath::linear(&p.a, &p.b, p.horizon(), p.solve_level)?;
    let along_line_ok = (0..=line.n_intervals()).all(|i| {
        let (rank, smin) = ellipticity_check(&p.system, line.value(i));
        rank == map.e && smin >= ELLIPTICITY_THRESHOLD
    });
    let mut u = if along_line_ok {
        map.coordinates(&control_from_path(&p.system, &line, p.beta0)?)?
    } else {
        log::warn!("fields are not elliptic along the straight line; starting from the zero control");
        DVector::zeros(map.n_vars())
    };
    let mut trace = Vec::new();
    let mut g = terminal_residual(p, &map, &u)?;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    let mut consider = |u: &DVector<f64>, g: &DVector<f64>| {
        let (val, res) = (0.5 * u.norm_squared(), g.norm());
        if res <= s.tolerance && best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, res, u.clone()));
        }
    };
    consider(&u, &g);

    let mut mu = s.penalty_start;
    for stage in 0..s.stages {
        let objective = |u: &DVector<f64>, g: &DVector<f64>| 0.5 * u.norm_squared() + 0.5 * mu * g.norm_squared();
        for it in 0..s.max_iterations {
            let jac = fd_jacobian(p, &map, &u, &g)?;
            let lhs = DMatrix::identity(map.n_vars(), map.n_vars()) + mu * jac.transpose() * &jac;
            let rhs = -(&u + mu * jac.transpose() * &g);
            let delta = lhs
                .cholesky()
                .ok_or_else(|| Error::Numerical("penalty normal equations".into()))?
                .solve(&rhs);
            let f0 = objective(&u, &g);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-6 {
                let cand = &u + t * &delta;
                let gc = terminal_residual(p, &map, &cand)?;
                if objective(&cand, &gc) <= f0 {
                    u = cand;
                    g = gc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            trace.push(TraceEntry {
                stage,
                penalty: mu,
                iteration: it,
                value: 0.5 * u.norm_squared(),
                residual: g.norm(),
            });
            consider(&u, &g);
            if !accepted || t * delta.norm() <= 1e-12 * (1.0 + u.norm()) {
                break;
            }
        }
        mu *= s.penalty_growth;
    }

    // polish: minimise |u + δ|² subject to the linearised constraint
    let polish_stage = s.stages;
    for it in 0..s.max_iterations {
        let jac = fd_jacobian(p, &map, &u, &g)?;
        let jjt = &jac * jac.transpose();
        let Some(ch) = jjt.cholesky() else {
            break;
        };
        let lambda = ch.solve(&(&jac * &u - &g));
        let delta = jac.transpose() * lambda - &u;
        u += &delta;
        g = terminal_residual(p, &map, &u)?;
        trace.push(TraceEntry {
            stage: polish_stage,
            penalty: f64::INFINITY,
            iteration: it,
            value: 0.5 * u.norm_squared(),
            residual: g.norm(),
        });
        consider(&u, &g);
        if g.norm() <= s.tolerance && delta.norm() <= 1e-10 * (1.0 + u.norm()) {
            break;
        }
    }

    let Some((value, residual, u)) = best else {
        let last = trace.last().map_or(f64::NAN, |t| t.residual);
        return Err(Error::Infeasible(format!(
            "terminal residual stagnated at {last:.3e} after {} iterations (tolerance {:.1e})",
            trace.len(),
            s.tolerance
        )));
    };
    Ok(RateResult {
        control: map.path(&u),
        control_values: map.values(&u),
        control_times: map.times.clone(),
        value,
        residual,
        trace,
    })
}

/// `½‖h‖²` of a Cameron–Martin element.
pub fn schilder_rate(h: &CameronMartinElement) -> f64 {
    0.5 * h.norm_sq()
}

/// Schilder rate of a grid path; `+∞` when the path does not start at 0 or
/// its interpolant cannot be constructed.
pub fn schilder_rate_path(model: &CovarianceModel, h: &GridPath<f64>) -> f64 {
    if h.start().iter().any(|v| *v != 0.0) {
        return f64::INFINITY;
    }
    match CameronMartinElement::from_grid_path(model, h) {
        Ok(e) => schilder_rate(&e),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeRate {
    /// `½‖h_ξ‖² - min`.
    pub value: f64,
    /// `½‖h_ξ‖²` of the control realising ξ.
    pub path_energy: f64,
    pub minimum: f64,
    /// Set when more drivers than states make the pointwise minimal-norm
    /// control only an upper bound for the infimum.
    pub upper_bound: bool,
}

/// Bridge rate `J(ξ)` using a precomputed endpoint minimum.
pub fn bridge_rate_j_with_minimum(xi: &GridPath<f64>, p: &RateProblem, minimum: f64) -> Result<BridgeRate> {
    p.validate()?;
    let tol = 1e-9 * (1.0 + p.a.iter().chain(&p.b).fold(0.0f64, |m, v| m.max(v.abs())));
    let mismatch = |x: &[f64], y: &[f64]| x.iter().zip(y).any(|(u, v)| (u - v).abs() > tol);
    if xi.dim() != p.a.len() || mismatch(xi.start(), &p.a) || mismatch(xi.end(), &p.b) {
        return Err(invalid("path does not connect a to b"));
    }
    if (xi.horizon() - p.horizon()).abs() > 1e-12 * p.horizon() {
        return Err(invalid("path horizon differs from the model horizon"));
    }
    if xi.level() < p.control_level {
        return Err(invalid("path grid is coarser than the control grid"));
    }
    let h = control_from_path(&p.system, xi, p.beta0)?;
    let coarse = h.subsample(p.control_level)?;
    let energy = schilder_rate(&CameronMartinElement::from_grid_path(&p.model, &coarse)?);
    Ok(BridgeRate {
        value: energy - minimum,
        path_energy: energy,
        minimum,
        upper_bound: p.system.driver_dim() > p.system.state_dim(),
    })
}

/// Bridge rate `J(ξ) = ½‖h_ξ‖² - min_{Ψ_a(h)_T = b} ½‖h‖²`.
pub fn bridge_rate_j(xi: &GridPath<f64>, p: &RateProblem) -> Result<BridgeRate> {
    let min = rate_endpoint(p)?.value;
    bridge_rate_j_with_minimum(xi, p, min)
}

/// Drift coefficient `β(ε)` of the small-noise equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSpec {
    Constant { value: f64 },
    /// `c ε^p`.
    Power { coefficient: f64, exponent: f64 },
    /// `c ε^{1/H}` with `H` the smallest Hurst index.
    InverseHurst { coefficient: f64 },
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Constant { value: 1.0 }
    }
}

impl BetaSpec {
    pub fn eval(&self, eps: f64, min_hurst: f64) -> f64 {
        match *self {
            BetaSpec::Constant { value } => value,
            BetaSpec::Power { coefficient, exponent } => coefficient * eps.powf(exponent),
            BetaSpec::InverseHurst { coefficient } => coefficient * eps.powf(1.0 / min_hurst),
        }
    }

    /// `β(0)`.
    pub fn limit(&self, min_hurst: f64) -> f64 {
        self.eval(0.0, min_hurst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// Plain Monte Carlo, switching to importance sampling when no kernel
    /// mass is observed.
    Auto,
    Always,
    Never,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaradhanParams {
    pub n_paths: usize,
    /// Sampling grid level.
    pub level: u32,
    /// `σ_ε = bandwidth_factor · ε`.
    pub bandwidth_factor: f64,
    pub seed: u64,
    pub importance: ImportanceMode,
    #[serde(default)]
    pub beta: BetaSpec,
    /// Regularity used for the lift when the smallest Hurst index is at
    /// most ½; defaults to `H_min - 0.05`.
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaradhanRow {
    pub epsilon: f64,
    pub sigma: f64,
    pub p_hat: f64,
    pub se: f64,
    pub relative_se: f64,
    pub eps2_log_p: f64,
    pub gap: f64,
    pub importance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaradhanReport {
    /// Endpoint rate from [`rate_endpoint`].
    pub rate: f64,
    pub rows: Vec<VaradhanRow>,
    /// Intercept of `ε² log p̂` regressed on `ε²`.
    pub extrapolated_limit: Option<f64>,
}

/// Sweep `ε² log p̂^ε(T, a, b)` over `epsilons` against `-rate`.
pub fn varadhan_sweep(p: &RateProblem, epsilons: &[f64], mc: &VaradhanParams) -> Result<VaradhanReport> {
    p.validate()?;
    if epsilons.is_empty() {
        return Err(invalid("the epsilon list is empty"));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("epsilons must be positive and strictly decreasing"));
    }
    if mc.n_paths == 0 || !(mc.bandwidth_factor > 0.0) {
        return Err(invalid("need n_paths > 0 and a positive bandwidth factor"));
    }
    let min_h = p.model.min_hurst();
    let degree = if min_h > 0.5 {
        None
    } else {
        let alpha = mc.alpha.unwrap_or(min_h - 0.05);
        Some(NormMode::Holder { alpha }.degree()?)
    };
    let rate = rate_endpoint(p)?;
    let sampler = FbmSampler::new(&p.model, mc.level)?;
    let h_star = match rate.control.level().cmp(&mc.level) {
        std::cmp::Ordering::Less => rate.control.refine(mc.level)?,
        _ => rate.control.subsample(mc.level)?,
    };
    let rows = epsilons
        .par_iter()
        .enumerate()
        .map(|(k, &eps)| {
            let seed = rng::derive_seed(mc.seed, k as u64);
            let sigma = mc.bandwidth_factor * eps;
            let beta = mc.beta.eval(eps, min_h);
            let run = |importance: bool| -> Result<DensityEstimate> {
                let coords = if importance {
                    Some(sampler.shift_coordinates(&h_star.scaled(1.0 / eps))?)
                } else {
                    None
                };
                let (terminals, lrs) =
                    terminals(p, &sampler, mc.n_paths, eps, beta, degree, seed, coords.as_deref())?;
                density_estimate_weighted(&terminals, importance.then_some(lrs.as_slice()), &p.b, sigma)
            };
            let (est, importance) = match mc.importance {
                ImportanceMode::Always => (run(true)?, true),
                ImportanceMode::Never => (run(false)?, false),
                ImportanceMode::Auto => {
                    let plain = run(false)?;
                    if plain.estimate > 0.0 && plain.std_error < 0.5 * plain.estimate {
                        (plain, false)
                    } else {
                        log::info!("epsilon = {eps}: switching to importance sampling");
                        (run(true)?, true)
                    }
                }
            };
            let eps2_log_p = eps * eps * est.estimate.ln();
            Ok(VaradhanRow {
                epsilon: eps,
                sigma,
                p_hat: est.estimate,
                se: est.std_error,
                relative_se: est.std_error / est.estimate,
                eps2_log_p,
                gap: (eps2_log_p + rate.value).abs(),
                importance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<&VaradhanRow> = rows.iter().filter(|r| r.eps2_log_p.is_finite()).collect();
    let extrapolated_limit = if finite.len() >= 2 {
        let x: Vec<f64> = finite.iter().map(|r| r.epsilon * r.epsilon).collect();
        let y: Vec<f64> = finite.iter().map(|r| r.eps2_log_p).collect();
        linear_fit(&x, &y).ok().map(|f: LinearFit| f.intercept)
    } else {
        None
    };
    Ok(VaradhanReport {
        rate: rate.value,
        rows,
        extrapolated_limit,
    })
}

/// Terminal values of the ε-scaled equation and the likelihood ratios of
/// the (possibly shifted) Gaussian samples.
#[allow(clippy::too_many_arguments)]
fn terminals(
    p: &RateProblem,
    sampler: &FbmSampler,
    n: usize,
    eps: f64,
    beta: f64,
    degree: Option<usize>,
    seed: u64,
    coords: Option<&[DVector<f64>]>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let out: Vec<(Vec<f64>, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (w, log_lr) = match coords {
                Some(c) => sampler.sample_shifted(seed, i, c),
                None => (sampler.sample(seed, i), 0.0),
            };
            let sol = match degree {
                None => solve_grid(&p.system, &w.scaled(eps), &p.a, beta, Scheme::Euler, false)?,
                Some(k) => {
                    let x = lift_dyadic(&w, sampler.level(), k)?;
                    solve_rde_scaled(&p.system, &x, eps, &p.a, beta)?
                }
            };
            Ok((sol.terminal().to_vec(), log_lr.exp()))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailParams {
    pub level: u32,
    pub n_paths: usize,
    pub seed: u64,
    /// Radii with fewer exceedances are left out of the fit.
    #[serde(default = "default_min_exceedances")]
    pub min_exceedances: usize,
}

fn default_min_exceedances() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub radius: f64,
    pub probability: f64,
    pub exceedances: usize,
    pub in_fit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    /// Slope of `log P(|||W||| ≥ R)` against `R²`.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

/// Empirical tail `P(|||W||| ≥ R)` of the homogeneous norm of the lifted
/// Gaussian path, with a log-linear fit in `R²`.
pub fn tail_probe(model: &CovarianceModel, mode: NormMode, radii: &[f64], params: &TailParams) -> Result<TailReport> {
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|r| *r < 0.0) {
        return Err(invalid("radii must be non-negative and strictly increasing"));
    }
    if params.n_paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let degree = mode.degree()?;
    let sampler = FbmSampler::new(model, params.level)?;
    let norms: Vec<f64> = (0..params.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let x = lift_dyadic(&sampler.sample(params.seed, i), params.level, degree)?;
            homogeneous_norm(&x, mode)
        })
        .collect::<Result<_>>()?;
    let n = norms.len() as f64;
    let rows: Vec<TailRow> = radii
        .iter()
        .map(|&r| {
            let count = norms.iter().filter(|v| **v >= r).count();
            let probability = count as f64 / n;
            let in_fit = r > 0.0 && probability < 1.0 && count >= params.min_exceedances;
            if !in_fit && r > 0.0 && count < params.min_exceedances {
                log::info!("radius {r}: only {count} exceedances, left out of the fit");
            }
            TailRow {
                radius: r,
                probability,
                exceedances: count,
                in_fit,
            }
        })
        .collect();
    let used: Vec<&TailRow> = rows.iter().filter(|r| r.in_fit).collect();
    let fit = if used.len() >= 2 {
        let x: Vec<f64> = used.iter().map(|r| r.radius * r.radius).collect();
        let y: Vec<f64> = used.iter().map(|r| r.probability.ln()).collect();
        linear_fit(&x, &y).ok()
    } else {
        None
    };
    Ok(TailReport {
        rows,
        slope: fit.map(|f| f.slope),
        r_squared: fit.map(|f| f.r_squared),
    })
}
