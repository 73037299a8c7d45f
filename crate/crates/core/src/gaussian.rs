//! Mixed fractional Brownian motion: covariance, exact sampling on dyadic
//! grids, rectangular increments, 2D ρ-variation and the finite-dimensional
//! Cameron–Martin norm.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::path_spaces::{pvar_prefix_powers, GridPath, MAX_LEVEL};
use crate::rng;

/// Largest grid level for dense factorisation.
pub const MAX_SAMPLING_LEVEL: u32 = 14;

/// Condition-number ceiling for Gram matrices.
pub const MAX_GRAM_CONDITION: f64 = 1e13;

/// Independent fBm components with Hurst indices `hurst[j]` on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceModel {
    hurst: Vec<f64>,
    horizon: f64,
}

impl CovarianceModel {
    pub fn new(hurst: Vec<f64>, horizon: f64) -> Result<Self> {
        if hurst.is_empty() {
            return Err(invalid("at least one Hurst index is required"));
        }
        if let Some(h) = hurst.iter().find(|h| !(**h > 0.0 && **h < 1.0)) {
            return Err(invalid(format!("Hurst index {h} outside (0, 1)")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { hurst, horizon })
    }

    /// Same Hurst index in every component.
    pub fn uniform(dim: usize, hurst: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![hurst; dim], horizon)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.hurst.clone(), self.horizon).map(|_| ())
    }

    pub fn dim(&self) -> usize {
        self.hurst.len()
    }

    pub fn hurst(&self) -> &[f64] {
        &self.hurst
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Smallest Hurst index.
    pub fn min_hurst(&self) -> f64 {
        self.hurst.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn check_component(&self, j: usize) -> Result<f64> {
        self.hurst
            .get(j)
            .copied()
            .ok_or_else(|| Error::Index(format!("component {j} of {}", self.dim())))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// `R(s, t) = ½(s^{2H} + t^{2H} - |t-s|^{2H})` of component `j`.
    pub fn covariance(&self, j: usize, s: f64, t: f64) -> Result<f64> {
        let h = self.check_component(j)?;
        self.check_time(s)?;
        self.check_time(t)?;
        Ok(fbm_cov(h, s, t))
    }

    /// `E[(w_t - w_s)(w_v - w_u)]` of component `j`.
    pub fn rect_increment(&self, j: usize, s: f64, t: f64, u: f64, v: f64) -> Result<f64> {
        if s > t || u > v {
            return Err(invalid(format!("need s <= t and u <= v, got [{s}, {t}] x [{u}, {v}]")));
        }
        let h = self.check_component(j)?;
        for x in [s, t, u, v] {
            self.check_time(x)?;
        }
        Ok(fbm_rect(h, s, t, u, v))
    }

    /// Gram matrix `[R(t_a, t_b)]` of component `j`.
    pub fn gram(&self, j: usize, times: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.check_component(j)?;
        for t in times {
            self.check_time(*t)?;
        }
        let n = times.len();
        Ok(DMatrix::from_fn(n, n, |a, b| fbm_cov(h, times[a], times[b])))
    }
}

pub(crate) fn fbm_cov(h: f64, s: f64, t: f64) -> f64 {
    let e = 2.0 * h;
    0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e))
}

/// `R̂(s,t; u,v)` via `½(|v-s|^{2H} + |t-u|^{2H} - |v-t|^{2H} - |u-s|^{2H})`.
pub(crate) fn fbm_rect(h: f64, s: f64, t: f64, u: f64, v: f64) -> f64 {
    let e = 2.0 * h;
    let p = |x: f64| x.abs().powf(e);
    0.5 * (p(v - s) + p(t - u) - p(v - t) - p(u - s))
}

pub fn covariance(model: &CovarianceModel, j: usize, s: f64, t: f64) -> Result<f64> {
    model.covariance(j, s, t)
}

pub fn rect_increment(model: &CovarianceModel, j: usize, s: f64, t: f64, u: f64, v: f64) -> Result<f64> {
    model.rect_increment(j, s, t, u, v)
}

/// A rectangular covariance increment together with its rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectIncrement {
    pub component: usize,
    pub rect: (f64, f64, f64, f64),
    pub value: f64,
}

impl RectIncrement {
    pub fn new(model: &CovarianceModel, j: usize, s: f64, t: f64, u: f64, v: f64) -> Result<Self> {
        Ok(Self {
            component: j,
            rect: (s, t, u, v),
            value: model.rect_increment(j, s, t, u, v)?,
        })
    }
}

/// `max_{k <= depth} Σ_{a,b} |R̂(I_a; I_b)|^ρ` over the uniform dyadic
/// partitions `{I_a}` of `[s, t]` into `2^k` pieces, to the power `1/ρ`.
/// Exact supremum over dyadic partitions for `ρ = 1`; a lower bound of the
/// true supremum for `ρ > 1`.
pub fn twod_rho_variation(
    model: &CovarianceModel,
    j: usize,
    s: f64,
    t: f64,
    rho: f64,
    depth: u32,
) -> Result<f64> {
    if !(rho >= 1.0) {
        return Err(invalid(format!("rho must be >= 1, got {rho}")));
    }
    if s > t {
        return Err(invalid("need s <= t"));
    }
    if depth > 12 {
        return Err(invalid("depth above 12 is not supported"));
    }
    let h = model.check_component(j)?;
    model.check_time(s)?;
    model.check_time(t)?;
    let mut best: f64 = 0.0;
    for k in 0..=depth {
        let n = 1usize << k;
        let dt = (t - s) / n as f64;
        // |x|^{2H} only depends on the grid offset, tabulate it
        let pow: Vec<f64> = (0..=n).map(|g| (g as f64 * dt).powf(2.0 * h)).collect();
        let rect = |a: usize, b: usize| -> f64 {
            // R̂ over [p_a, p_{a+1}] x [p_b, p_{b+1}]
            let d = |x: usize, y: usize| pow[x.abs_diff(y)];
            0.5 * (d(b + 1, a) + d(a + 1, b) - d(b + 1, a + 1) - d(b, a))
        };
        let total: f64 = (0..n)
            .into_par_iter()
            .map(|a| (0..n).map(|b| rect(a, b).abs().powf(rho)).sum::<f64>())
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        best = best.max(total);
    }
    Ok(best.powf(1.0 / rho))
}

/// Exact sampler of a [`CovarianceModel`] on the dyadic grid of a level,
/// holding one Cholesky factor per distinct Hurst index.
#[derive(Clone, Debug)]
pub struct FbmSampler {
    model: CovarianceModel,
    level: u32,
    factors: Vec<Option<DMatrix<f64>>>,
}

impl FbmSampler {
    pub fn new(model: &CovarianceModel, level: u32) -> Result<Self> {
        model.validate()?;
        if level > MAX_SAMPLING_LEVEL {
            return Err(invalid(format!(
                "dense sampling supports level <= {MAX_SAMPLING_LEVEL}, got {level}"
            )));
        }
        let n = 1usize << level;
        let times: Vec<f64> = (1..=n).map(|i| model.horizon * i as f64 / n as f64).collect();
        let mut factors: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(model.dim());
        for (j, &h) in model.hurst.iter().enumerate() {
            if h == 0.5 {
                // independent increments, no factor needed
                factors.push(None);
                continue;
            }
            if let Some(k) = model.hurst[..j].iter().position(|&g| g == h) {
                factors.push(factors[k].clone());
                continue;
            }
            let gram = model.gram(j, &times)?;
            let chol = Cholesky::new(gram).ok_or_else(|| {
                Error::Factorization(format!("the covariance matrix with H = {h} at level {level}"))
            })?;
            factors.push(Some(chol.unpack()));
        }
        Ok(Self {
            model: model.clone(),
            level,
            factors,
        })
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Path number `index` of the stream seeded by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> GridPath<f64> {
        self.sample_impl(seed, index, None).0
    }

    /// Standard-normal coordinates `u_j = L_j^{-1} m_j` of a grid path `m`
    /// starting at 0, with `L_j` the covariance factor of component `j`.
    pub fn shift_coordinates(&self, shift: &GridPath<f64>) -> Result<Vec<DVector<f64>>> {
        let n = 1usize << self.level;
        if shift.dim() != self.model.dim() || shift.n_intervals() != n {
            return Err(shape("shift path does not match the sampling grid"));
        }
        if shift.start().iter().any(|v| *v != 0.0) {
            return Err(invalid("shift path must start at 0"));
        }
        let dt = self.model.horizon / n as f64;
        self.factors
            .iter()
            .enumerate()
            .map(|(j, factor)| {
                let m = DVector::from_fn(n, |i, _| shift.value(i + 1)[j]);
                match factor {
                    Some(l) => l
                        .solve_lower_triangular(&m)
                        .ok_or_else(|| Error::Factorization("the shift solve".into())),
                    None => Ok(DVector::from_fn(n, |i, _| {
                        (m[i] - if i == 0 { 0.0 } else { m[i - 1] }) / dt.sqrt()
                    })),
                }
            })
            .collect()
    }

    /// Path `index` under the shifted law `w + m` with `m` given by its
    /// coordinates, together with `log dP/dQ = -<u, z> - |u|^2/2` where
    /// `z` is the unshifted normal vector.
    pub fn sample_shifted(&self, seed: u64, index: u64, coords: &[DVector<f64>]) -> (GridPath<f64>, f64) {
        self.sample_impl(seed, index, Some(coords))
    }

    fn sample_impl(&self, seed: u64, index: u64, coords: Option<&[DVector<f64>]>) -> (GridPath<f64>, f64) {
        let mut rng = rng::stream(seed, index);
        let n = 1usize << self.level;
        let d = self.model.dim();
        let dt = self.model.horizon / n as f64;
        let mut values = vec![0.0; (n + 1) * d];
        let mut z = DVector::<f64>::zeros(n);
        let mut log_lr = 0.0;
        for (j, factor) in self.factors.iter().enumerate() {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            if let Some(u) = coords {
                log_lr -= u[j].dot(&z) + 0.5 * u[j].norm_squared();
                z += &u[j];
            }
            match factor {
                Some(l) => {
                    let w = l * &z;
                    for i in 0..n {
                        values[(i + 1) * d + j] = w[i];
                    }
                }
                None => {
                    let sd = dt.sqrt();
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += sd * z[i];
                        values[(i + 1) * d + j] = acc;
                    }
                }
            }
        }
        let path = GridPath::new(d, self.model.horizon, self.level, values).expect("finite sample");
        (path, log_lr)
    }

    /// Paths `0..n_paths`, generated in parallel, in index order.
    pub fn sample_many(&self, seed: u64, n_paths: usize) -> Vec<GridPath<f64>> {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| self.sample(seed, i))
            .collect()
    }
}

/// `n_paths` exact samples on the level-`level` grid.
pub fn sample_fbm(
    model: &CovarianceModel,
    level: u32,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<GridPath<f64>>> {
    Ok(FbmSampler::new(model, level)?.sample_many(seed, n_paths))
}

/// Finite set of constraints `h_j(t_a) = v_{j,a}` on a Cameron–Martin
/// element, with the factorised Gram matrices.
#[derive(Clone, Debug)]
pub struct CameronMartinElement {
    model: CovarianceModel,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    /// `Σ_j^{-1} v_j` per component.
    coefficients: Vec<DVector<f64>>,
    norm_sq: f64,
}

impl CameronMartinElement {
    /// `values[j][a]` is the prescribed value of component `j` at `times[a]`.
    pub fn new(model: &CovarianceModel, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        model.validate()?;
        if times.is_empty() {
            return Err(invalid("at least one constraint time is required"));
        }
        if times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("constraint times must be positive and strictly increasing"));
        }
        if values.len() != model.dim() || values.iter().any(|v| v.len() != times.len()) {
            return Err(crate::error::shape(format!(
                "expected {} components of {} values",
                model.dim(),
                times.len()
            )));
        }
        let mut coefficients = Vec::with_capacity(model.dim());
        let mut norm_sq = 0.0;
        for (j, v) in values.iter().enumerate() {
            let gram = model.gram(j, &times)?;
            let chol = factor_gram(gram, &format!("Cameron-Martin Gram matrix, component {j}"))?;
            let v = DVector::from_column_slice(v);
            let c = chol.solve(&v);
            norm_sq += v.dot(&c);
            coefficients.push(c);
        }
        Ok(Self {
            model: model.clone(),
            times,
            values,
            coefficients,
            norm_sq,
        })
    }

    /// Constraints at every point of a grid path except `t = 0`.
    pub fn from_grid_path(model: &CovarianceModel, path: &GridPath<f64>) -> Result<Self> {
        if path.dim() != model.dim() {
            return Err(crate::error::shape("path and model dimensions differ"));
        }
        let times: Vec<f64> = (1..=path.n_intervals()).map(|i| path.time(i)).collect();
        let values = (0..model.dim())
            .map(|j| (1..=path.n_intervals()).map(|i| path.value(i)[j] - path.value(0)[j]).collect())
            .collect();
        Self::new(model, times, values)
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn coefficients(&self) -> &[DVector<f64>] {
        &self.coefficients
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// Minimal-norm interpolant `h_j(t) = Σ_a R_j(t, t_a) c_{j,a}`.
    pub fn interpolant_at(&self, t: f64) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.model.hurst)
            .map(|(c, &h)| {
                self.times
                    .iter()
                    .zip(c.iter())
                    .map(|(ta, ca)| fbm_cov(h, t, *ta) * ca)
                    .sum()
            })
            .collect()
    }

    /// The interpolant sampled on a dyadic grid.
    pub fn interpolant(&self, level: u32) -> Result<GridPath<f64>> {
        if level > MAX_LEVEL {
            return Err(invalid("grid level too large"));
        }
        GridPath::from_fn(self.model.dim(), self.model.horizon, level, |t| self.interpolant_at(t))
    }
}

/// Cholesky factorisation that reports conditioning instead of jittering.
pub(crate) fn factor_gram(gram: DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    let condition = |g: &DMatrix<f64>| {
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        let max = eig.iter().copied().fold(f64::MIN, f64::max);
        let min = eig.iter().copied().fold(f64::MAX, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    };
    match Cholesky::new(gram.clone()) {
        Some(ch) => {
            let diag = ch.l_dirty().diagonal();
            let max = diag.iter().copied().fold(0.0, f64::max);
            let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
            // cheap lower bound of the condition number; confirm before failing
            if (max / min).powi(2) > MAX_GRAM_CONDITION {
                let c = condition(&gram);
                if c > MAX_GRAM_CONDITION {
                    return Err(Error::IllConditioned {
                        context: context.to_string(),
                        condition_estimate: c,
                    });
                }
            }
            Ok(ch)
        }
        None => Err(Error::IllConditioned {
            context: context.to_string(),
            condition_estimate: condition(&gram),
        }),
    }
}

/// `v^T Σ^{-1} v` summed over components.
pub fn cm_norm_sq(elem: &CameronMartinElement) -> f64 {
    elem.norm_sq()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub q: f64,
    pub level: u32,
    pub cm_norm: f64,
    /// Largest observed `‖h‖_{q-var,[s,t]} / (‖h‖_H (t-s)^{1/q-1/2})`.
    pub c1: f64,
    pub argmax: (f64, f64),
    pub start_points: usize,
}

/// Ratio of the q-variation of the minimal-norm interpolant on grid
/// sub-intervals to `‖h‖_H (t-s)^{1/q-1/2}`. Start points are taken on a
/// subgrid of at most `max_starts` points; every end point is scanned.
pub fn cm_embedding_check(
    elem: &CameronMartinElement,
    q: f64,
    level: u32,
    max_starts: usize,
) -> Result<EmbeddingReport> {
    let lo = 1.0 / (elem.model.min_hurst() + 0.5);
    if !(q > lo && q < 2.0) {
        return Err(invalid(format!("q must lie in ({lo}, 2), got {q}")));
    }
    let h = elem.interpolant(level)?;
    let n = h.n_intervals();
    let norm = elem.norm_sq().sqrt();
    let stride = n.div_ceil(max_starts.max(1)).max(1);
    let starts: Vec<usize> = (0..n).step_by(stride).collect();
    let expo = 1.0 / q - 0.5;
    let dt = h.step();
    let best = starts
        .par_iter()
        .map(|&s| {
            let powers = pvar_prefix_powers(&h, q, s, n);
            let mut best = (0.0, (h.time(s), h.time(s)));
            for (k, pw) in powers.iter().enumerate().skip(1) {
                let denom = norm * (k as f64 * dt).powf(expo);
                let r = if denom > 0.0 { pw.powf(1.0 / q) / denom } else { 0.0 };
                if r > best.0 {
                    best = (r, (h.time(s), h.time(s + k)));
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, (0.0, 0.0)), |a, b| if b.0 > a.0 { b } else { a });
    Ok(EmbeddingReport {
        q,
        level,
        cm_norm: norm,
        c1: best.0,
        argmax: best.1,
        start_points: starts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        let bm = CovarianceModel::uniform(1, 0.5, 1.0).unwrap();
        assert!((bm.covariance(0, 0.25, 0.75).unwrap() - 0.25).abs() < 1e-15);
        let m = CovarianceModel::uniform(1, 0.3, 1.0).unwrap();
        assert!((m.covariance(0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(m.covariance(0, 1.5, 0.5).is_err());
        assert!(CovarianceModel::uniform(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn rect_increment_examples() {
        let bm = CovarianceModel::uniform(1, 0.5, 1.0).unwrap();
        assert!(bm.rect_increment(0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0).unwrap().abs() < 1e-15);
        let m = CovarianceModel::uniform(1, 0.7, 1.0).unwrap();
        let v = m.rect_increment(0, 0.2, 0.6, 0.2, 0.6).unwrap();
        assert!((v - 0.4f64.powf(1.4)).abs() < 1e-14);
        assert!(m.rect_increment(0, 0.6, 0.2, 0.0, 1.0).is_err());
        // agrees with the four-covariance definition
        let (s, t, u, v) = (0.1, 0.5, 0.3, 0.9);
        let c = |a, b| m.covariance(0, a, b).unwrap();
        let direct = c(t, v) - c(s, v) - c(t, u) + c(s, u);
        assert!((m.rect_increment(0, s, t, u, v).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn rho_variation_of_bm_is_length() {
        let bm = CovarianceModel::uniform(1, 0.5, 1.0).unwrap();
        for depth in 0..=6 {
            let v = twod_rho_variation(&bm, 0, 0.0, 0.8, 1.0, depth).unwrap();
            assert!((v - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn cm_norm_single_constraint() {
        let bm = CovarianceModel::uniform(1, 0.5, 1.0).unwrap();
        let e = CameronMartinElement::new(&bm, vec![1.0], vec![vec![2.0]]).unwrap();
        assert!((cm_norm_sq(&e) - 4.0).abs() < 1e-14);
        let m = CovarianceModel::uniform(1, 0.3, 2.0).unwrap();
        let e = CameronMartinElement::new(&m, vec![2.0], vec![vec![1.5]]).unwrap();
        assert!((cm_norm_sq(&e) - 2.25 / 2f64.powf(0.6)).abs() < 1e-13);
        let z = CameronMartinElement::new(&m, vec![0.5, 1.0], vec![vec![0.0, 0.0]]).unwrap();
        assert_eq!(cm_norm_sq(&z), 0.0);
    }

    #[test]
    fn gram_errors() {
        let m = CovarianceModel::uniform(1, 0.3, 1.0).unwrap();
        assert!(CameronMartinElement::new(&m, vec![0.0, 1.0], vec![vec![0.0, 1.0]]).is_err());
        assert!(CameronMartinElement::new(&m, vec![0.5, 0.5], vec![vec![0.0, 1.0]]).is_err());
        let smooth = CovarianceModel::uniform(1, 0.7, 1.0).unwrap();
        let near = CameronMartinElement::new(&smooth, vec![0.5, 0.5 + 1e-12], vec![vec![0.0, 1.0]]);
        assert!(matches!(near, Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn same_seed_same_paths() {
        let m = CovarianceModel::new(vec![0.3, 0.5, 0.7], 1.0).unwrap();
        let s = FbmSampler::new(&m, 6).unwrap();
        assert_eq!(s.sample(7, 3), s.sample(7, 3));
        assert_ne!(s.sample(7, 3), s.sample(7, 4));
        assert_eq!(s.sample(7, 0).start(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shifted_sampling_reweights_to_the_original_law() {
        let model = CovarianceModel::new(vec![0.5, 0.7], 1.0).unwrap();
        let sampler = FbmSampler::new(&model, 4).unwrap();
        let shift = GridPath::from_fn(2, 1.0, 4, |t: f64| vec![0.8 * t, -0.5 * t * t]).unwrap();
        let coords = sampler.shift_coordinates(&shift).unwrap();
        let n = 20_000;
        let (mut lr_sum, mut end_sum) = (0.0, [0.0; 2]);
        for i in 0..n {
            let (w, log_lr) = sampler.sample_shifted(5, i, &coords);
            let lr = log_lr.exp();
            lr_sum += lr;
            end_sum[0] += lr * w.end()[0];
            end_sum[1] += lr * w.end()[1];
        }
        let nf = n as f64;
        assert!((lr_sum / nf - 1.0).abs() < 0.05);
        assert!(end_sum.iter().all(|s| (s / nf).abs() < 0.05));
        let (plain, zero_lr) = sampler.sample_shifted(5, 0, &sampler.shift_coordinates(&GridPath::zeros(2, 1.0, 4).unwrap()).unwrap());
        assert_eq!(zero_lr, 0.0);
        assert_eq!(plain, sampler.sample(5, 0));
    }
}
