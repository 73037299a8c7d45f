//! Paths on uniform dyadic grids, rough paths stored as per-interval
//! increments, and the Hölder / Besov / p-variation scales on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::scalar::Scalar;
use crate::tensor_algebra::{
    check_degree, relative_shuffle_residual, GroupTensor,
};

/// Largest grid level accepted anywhere (2^24 intervals).
pub const MAX_LEVEL: u32 = 24;

/// Continuous path sampled at `2^level + 1` uniformly spaced times on
/// `[0, horizon]`. Values are row-major, one row of length `dim` per time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath<S> {
    dim: usize,
    horizon: S,
    level: u32,
    values: Vec<S>,
}

impl<S: Scalar> GridPath<S> {
    pub fn new(dim: usize, horizon: S, level: u32, values: Vec<S>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("path dimension must be positive"));
        }
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if level > MAX_LEVEL {
            return Err(invalid(format!("grid level {level} exceeds {MAX_LEVEL}")));
        }
        let rows = (1usize << level) + 1;
        if values.len() != rows * dim {
            return Err(shape(format!(
                "expected {rows} rows of {dim} values, got {} entries",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("path values must be finite".into()));
        }
        Ok(Self {
            dim,
            horizon,
            level,
            values,
        })
    }

    pub fn zeros(dim: usize, horizon: S, level: u32) -> Result<Self> {
        Self::new(dim, horizon, level, vec![S::zero(); ((1usize << level) + 1) * dim])
    }

    /// Sample `f(t)` at every grid time.
    pub fn from_fn<F>(dim: usize, horizon: S, level: u32, f: F) -> Result<Self>
    where
        F: Fn(S) -> Vec<S>,
    {
        let n = 1usize << level;
        let step = horizon / S::usize(n);
        let mut values = Vec::with_capacity((n + 1) * dim);
        for i in 0..=n {
            let v = f(S::usize(i) * step);
            if v.len() != dim {
                return Err(shape(format!("callback returned {} values, expected {dim}", v.len())));
            }
            values.extend(v);
        }
        Self::new(dim, horizon, level, values)
    }

    /// Straight line from `start` to `end`.
    pub fn linear(start: &[S], end: &[S], horizon: S, level: u32) -> Result<Self> {
        if start.len() != end.len() {
            return Err(shape("start and end differ in dimension"));
        }
        Self::from_fn(start.len(), horizon, level, |t| {
            let theta = t / horizon;
            start
                .iter()
                .zip(end)
                .map(|(a, b)| *a + theta * (*b - *a))
                .collect()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn n_intervals(&self) -> usize {
        1usize << self.level
    }

    pub fn step(&self) -> S {
        self.horizon / S::usize(self.n_intervals())
    }

    pub fn time(&self, i: usize) -> S {
        S::usize(i) * self.step()
    }

    pub fn value(&self, i: usize) -> &[S] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn start(&self) -> &[S] {
        self.value(0)
    }

    pub fn end(&self) -> &[S] {
        self.value(self.n_intervals())
    }

    /// `x_{t_j} - x_{t_i}`.
    pub fn increment(&self, i: usize, j: usize) -> Vec<S> {
        self.value(j)
            .iter()
            .zip(self.value(i))
            .map(|(b, a)| *b - *a)
            .collect()
    }

    pub(crate) fn increment_into(&self, i: usize, j: usize, out: &mut [S]) {
        let (a, b) = (self.value(i), self.value(j));
        for k in 0..self.dim {
            out[k] = b[k] - a[k];
        }
    }

    pub fn component(&self, j: usize) -> Result<GridPath<S>> {
        if j >= self.dim {
            return Err(Error::Index(format!("component {j} of a {}-dim path", self.dim)));
        }
        let values = self.values.iter().skip(j).step_by(self.dim).copied().collect();
        GridPath::new(1, self.horizon, self.level, values)
    }

    /// Stack paths on the same grid into one path of summed dimension.
    pub fn stack(parts: &[GridPath<S>]) -> Result<GridPath<S>> {
        let first = parts.first().ok_or_else(|| invalid("nothing to stack"))?;
        for p in parts {
            first.check_same_grid(p)?;
        }
        let dim: usize = parts.iter().map(|p| p.dim).sum();
        let mut values = Vec::with_capacity((first.n_intervals() + 1) * dim);
        for i in 0..=first.n_intervals() {
            for p in parts {
                values.extend_from_slice(p.value(i));
            }
        }
        GridPath::new(dim, first.horizon, first.level, values)
    }

    pub fn check_same_grid(&self, other: &GridPath<S>) -> Result<()> {
        if self.level != other.level || self.horizon != other.horizon {
            return Err(shape(format!(
                "grids differ: (level {}, T {}) vs (level {}, T {})",
                self.level, self.horizon, other.level, other.horizon
            )));
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &GridPath<S>) -> Result<()> {
        self.check_same_grid(other)?;
        if self.dim != other.dim {
            return Err(shape(format!("dimensions {} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }

    pub fn scaled(&self, c: S) -> GridPath<S> {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn add(&self, other: &GridPath<S>) -> Result<GridPath<S>> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        out.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += *b);
        Ok(out)
    }

    pub fn sub(&self, other: &GridPath<S>) -> Result<GridPath<S>> {
        self.add(&other.scaled(-S::one()))
    }

    /// Same path with the initial value subtracted.
    pub fn anchored(&self) -> GridPath<S> {
        let x0 = self.start().to_vec();
        let mut out = self.clone();
        for row in out.values.chunks_mut(self.dim) {
            for (v, a) in row.iter_mut().zip(&x0) {
                *v -= *a;
            }
        }
        out
    }

    /// Values at the `2^level + 1` coarse dyadic times.
    pub fn subsample(&self, level: u32) -> Result<GridPath<S>> {
        if level > self.level {
            return Err(invalid(format!(
                "cannot subsample level {} path at finer level {level}",
                self.level
            )));
        }
        let stride = 1usize << (self.level - level);
        let mut values = Vec::with_capacity(((1usize << level) + 1) * self.dim);
        for i in (0..=self.n_intervals()).step_by(stride) {
            values.extend_from_slice(self.value(i));
        }
        GridPath::new(self.dim, self.horizon, level, values)
    }

    /// Piecewise-linear re-sampling onto a finer grid.
    pub fn refine(&self, level: u32) -> Result<GridPath<S>> {
        if level < self.level {
            return Err(invalid("refine needs a finer level"));
        }
        let r = 1usize << (level - self.level);
        let n = self.n_intervals() * r;
        let mut values = Vec::with_capacity((n + 1) * self.dim);
        for i in 0..n {
            let (cell, off) = (i / r, i % r);
            let theta = S::usize(off) / S::usize(r);
            let (a, b) = (self.value(cell), self.value(cell + 1));
            for k in 0..self.dim {
                values.push(a[k] + theta * (b[k] - a[k]));
            }
        }
        values.extend_from_slice(self.end());
        GridPath::new(self.dim, self.horizon, level, values)
    }

    /// Sup-norm distance over grid times.
    pub fn sup_distance(&self, other: &GridPath<S>) -> Result<S> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    pub fn cast<T: Scalar>(&self) -> GridPath<T> {
        GridPath {
            dim: self.dim,
            horizon: T::c(self.horizon.f64()),
            level: self.level,
            values: self.values.iter().map(|v| T::c(v.f64())).collect(),
        }
    }
}

/// Tolerance of the geometric-ness certificate for a scalar type.
pub fn geometric_tolerance<S: Scalar>() -> S {
    S::c(1e-10).max(S::epsilon() * S::c(1e4))
}

/// Rough path on a dyadic grid: one group element per interval plus cached
/// prefix products `X_{0,t_i}` and their inverses, so that
/// `X_{s,t} = X_{0,s}^{-1} ⊗ X_{0,t}` costs one product.
#[derive(Clone, Debug)]
pub struct RoughPathGrid<S> {
    dim: usize,
    degree: usize,
    horizon: S,
    level: u32,
    increments: Vec<GroupTensor<S>>,
    prefix: Vec<GroupTensor<S>>,
    prefix_inv: Vec<GroupTensor<S>>,
}

impl<S: Scalar> RoughPathGrid<S> {
    /// Build from per-interval increments, checking the shuffle identities
    /// of every increment.
    pub fn from_increments(horizon: S, level: u32, increments: Vec<GroupTensor<S>>) -> Result<Self> {
        let x = Self::from_increments_unchecked(horizon, level, increments)?;
        let tol = geometric_tolerance::<S>();
        for (i, g) in x.increments.iter().enumerate() {
            let r = relative_shuffle_residual(g);
            if !(r <= tol) {
                return Err(Error::Numerical(format!(
                    "increment {i} is not group-like (relative shuffle residual {r})"
                )));
            }
        }
        Ok(x)
    }

    pub(crate) fn from_increments_unchecked(
        horizon: S,
        level: u32,
        increments: Vec<GroupTensor<S>>,
    ) -> Result<Self> {
        if !(horizon > S::zero()) {
            return Err(invalid("horizon must be positive"));
        }
        if level > MAX_LEVEL {
            return Err(invalid(format!("grid level {level} exceeds {MAX_LEVEL}")));
        }
        let n = 1usize << level;
        if increments.len() != n {
            return Err(shape(format!(
                "level {level} needs {n} increments, got {}",
                increments.len()
            )));
        }
        let (dim, degree) = (increments[0].dim(), increments[0].degree());
        for g in &increments {
            if g.dim() != dim || g.degree() != degree {
                return Err(shape("increments differ in dimension or degree"));
            }
            if !g.is_finite() {
                return Err(Error::Numerical("non-finite increment".into()));
            }
        }
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(GroupTensor::identity_unchecked(dim, degree));
        for g in &increments {
            let last = prefix.last().expect("non-empty");
            let mut next = last.clone();
            last.mul_into(g, &mut next);
            prefix.push(next);
        }
        let prefix_inv = prefix.iter().map(GroupTensor::inverse).collect();
        Ok(Self {
            dim,
            degree,
            horizon,
            level,
            increments,
            prefix,
            prefix_inv,
        })
    }

    pub fn zero(dim: usize, degree: usize, horizon: S, level: u32) -> Result<Self> {
        check_degree(degree)?;
        let g = GroupTensor::identity(dim, degree)?;
        Self::from_increments_unchecked(horizon, level, vec![g; 1usize << level])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn n_intervals(&self) -> usize {
        1usize << self.level
    }

    pub fn step(&self) -> S {
        self.horizon / S::usize(self.n_intervals())
    }

    pub fn cells(&self) -> &[GroupTensor<S>] {
        &self.increments
    }

    pub fn cell(&self, i: usize) -> &GroupTensor<S> {
        &self.increments[i]
    }

    /// `X_{0, t_i}`.
    pub fn prefix(&self, i: usize) -> &GroupTensor<S> {
        &self.prefix[i]
    }

    /// `X_{t_s, t_t}` for grid indices `s <= t`; the identity when `s == t`.
    pub fn increment(&self, s: usize, t: usize) -> Result<GroupTensor<S>> {
        let n = self.n_intervals();
        if s > t || t > n {
            return Err(Error::Index(format!("need 0 <= s <= t <= {n}, got ({s}, {t})")));
        }
        let mut out = GroupTensor::identity_unchecked(self.dim, self.degree);
        self.increment_into(s, t, &mut out);
        Ok(out)
    }

    pub(crate) fn increment_into(&self, s: usize, t: usize, out: &mut GroupTensor<S>) {
        if s == t {
            *out = GroupTensor::identity_unchecked(self.dim, self.degree);
        } else if s == 0 {
            out.clone_from(&self.prefix[t]);
        } else {
            self.prefix_inv[s].mul_into(&self.prefix[t], out);
        }
    }

    /// Level-one path `t -> X^1_{0,t}` started at the origin.
    pub fn first_level_path(&self) -> GridPath<S> {
        let mut values = Vec::with_capacity((self.n_intervals() + 1) * self.dim);
        for p in &self.prefix {
            values.extend_from_slice(p.level1());
        }
        GridPath::new(self.dim, self.horizon, self.level, values).expect("finite prefix")
    }

    pub fn dilate(&self, delta: S) -> RoughPathGrid<S> {
        let incs = self.increments.iter().map(|g| g.dilate(delta)).collect();
        Self::from_increments_unchecked(self.horizon, self.level, incs).expect("same shape")
    }

    /// Split every cell into `2^extra` equal cells along the geodesic
    /// `θ -> exp(θ log g)`. Exact for segment signatures.
    pub fn refine(&self, extra: u32) -> Result<RoughPathGrid<S>> {
        if extra == 0 {
            return Ok(self.clone());
        }
        let r = 1usize << extra;
        let inv_r = S::one() / S::usize(r);
        let mut incs = Vec::with_capacity(self.n_intervals() * r);
        for g in &self.increments {
            let piece = g.log().scale(inv_r).exp();
            incs.extend(std::iter::repeat_n(piece, r));
        }
        Self::from_increments_unchecked(self.horizon, self.level + extra, incs)
    }

    /// Merge neighbouring cells pairwise (level decreases by one).
    pub fn coarsen(&self) -> Result<RoughPathGrid<S>> {
        if self.level == 0 {
            return Err(invalid("cannot coarsen a level-0 rough path"));
        }
        let incs = self
            .increments
            .chunks(2)
            .map(|pair| pair[0].mul(&pair[1]))
            .collect::<Result<Vec<_>>>()?;
        Self::from_increments_unchecked(self.horizon, self.level - 1, incs)
    }

    /// Largest relative shuffle residual over all cells.
    pub fn geometric_certificate(&self) -> S {
        self.increments
            .iter()
            .map(relative_shuffle_residual)
            .fold(S::zero(), S::max)
    }

    pub fn check_same_shape(&self, other: &RoughPathGrid<S>) -> Result<()> {
        if self.dim != other.dim || self.degree != other.degree || self.horizon != other.horizon {
            return Err(shape(format!(
                "rough paths differ: (d {}, k {}, T {}) vs (d {}, k {}, T {})",
                self.dim, self.degree, self.horizon, other.dim, other.degree, other.horizon
            )));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> RoughPathGrid<T> {
        let incs = self.increments.iter().map(GroupTensor::cast).collect();
        RoughPathGrid::from_increments_unchecked(T::c(self.horizon.f64()), self.level, incs)
            .expect("same shape")
    }
}

/// A two-parameter function `η_{s,t}` on grid pairs, with `η_{t,t} = 0`.
pub trait TwoParamFunction<S: Scalar>: Sync {
    fn n_intervals(&self) -> usize;
    fn horizon(&self) -> S;
    fn value_dim(&self) -> usize;
    fn eval(&self, s: usize, t: usize, out: &mut [S]);
}

/// Increments `x_t - x_s` of a path.
pub struct PathIncrements<'a, S>(pub &'a GridPath<S>);

impl<S: Scalar> TwoParamFunction<S> for PathIncrements<'_, S> {
    fn n_intervals(&self) -> usize {
        self.0.n_intervals()
    }
    fn horizon(&self) -> S {
        self.0.horizon()
    }
    fn value_dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, s: usize, t: usize, out: &mut [S]) {
        self.0.increment_into(s, t, out)
    }
}

/// Level `i` of a rough path viewed as a two-parameter function.
pub struct RoughLevel<'a, S> {
    pub path: &'a RoughPathGrid<S>,
    pub level: usize,
}

impl<S: Scalar> TwoParamFunction<S> for RoughLevel<'_, S> {
    fn n_intervals(&self) -> usize {
        self.path.n_intervals()
    }
    fn horizon(&self) -> S {
        self.path.horizon()
    }
    fn value_dim(&self) -> usize {
        self.path.dim().pow(self.level as u32)
    }
    fn eval(&self, s: usize, t: usize, out: &mut [S]) {
        let g = self.path.increment(s, t).expect("valid grid pair");
        out.copy_from_slice(g.level(self.level));
    }
}

/// Closure-backed two-parameter function.
pub struct FnTwoParam<S, F> {
    pub n_intervals: usize,
    pub horizon: S,
    pub value_dim: usize,
    pub f: F,
}

impl<S: Scalar, F> TwoParamFunction<S> for FnTwoParam<S, F>
where
    F: Fn(usize, usize, &mut [S]) + Sync,
{
    fn n_intervals(&self) -> usize {
        self.n_intervals
    }
    fn horizon(&self) -> S {
        self.horizon
    }
    fn value_dim(&self) -> usize {
        self.value_dim
    }
    fn eval(&self, s: usize, t: usize, out: &mut [S]) {
        (self.f)(s, t, out)
    }
}

fn euclid<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |a, x| a + *x * *x).sqrt()
}

/// Per-row scan over grid pairs `(i, j)`, `i < j`, reducing each row in
/// order and combining rows in index order, so the result does not depend on
/// the thread count.
fn scan_rows<S, T, I, F, R>(n: usize, levels: usize, init: I, row: F, combine: R) -> Vec<S>
where
    S: Scalar,
    T: Send,
    I: Fn() -> T + Sync + Send,
    F: Fn(&mut T, usize, &mut [S]) + Sync + Send,
    R: Fn(S, S) -> S,
{
    let rows: Vec<Vec<S>> = (0..n)
        .into_par_iter()
        .map_init(init, |scratch, i| {
            let mut acc = vec![S::zero(); levels];
            row(scratch, i, &mut acc);
            acc
        })
        .collect();
    let mut total = vec![S::zero(); levels];
    for r in rows {
        for (t, v) in total.iter_mut().zip(r) {
            *t = combine(*t, v);
        }
    }
    total
}

/// `max_{s<t} |η_{s,t}| / (t-s)^γ` over grid pairs.
pub fn holder_norm<S: Scalar>(eta: &dyn TwoParamFunction<S>, gamma: S) -> Result<S> {
    if !(gamma > S::zero() && gamma <= S::c(3.0)) {
        return Err(invalid(format!("Hölder exponent must lie in (0, 3], got {gamma}")));
    }
    let n = eta.n_intervals();
    let h = eta.horizon() / S::usize(n);
    let pow: Vec<S> = (0..=n).map(|g| (S::usize(g) * h).powf(gamma)).collect();
    let dim = eta.value_dim();
    let out = scan_rows(
        n,
        1,
        || vec![S::zero(); dim],
        |buf, i, acc| {
            for j in i + 1..=n {
                eta.eval(i, j, buf);
                acc[0] = acc[0].max(euclid(buf) / pow[j - i]);
            }
        },
        S::max,
    );
    Ok(out[0])
}

/// `∬ (t-s)^{-γ} ds dt` over the part of a square grid cell of side `h`
/// with `t - s >= h`, for the cell whose lower-left pair is `gap` steps apart.
pub(crate) fn besov_cell_weight(gap: usize, h: f64, gamma: f64) -> f64 {
    // second antiderivative G and first antiderivative G' of u^{-γ}
    let g = |u: f64| -> f64 {
        if (gamma - 1.0).abs() < 1e-12 {
            u * u.ln() - u
        } else if (gamma - 2.0).abs() < 1e-12 {
            -u.ln()
        } else {
            u.powf(2.0 - gamma) / ((1.0 - gamma) * (2.0 - gamma))
        }
    };
    let dg = |u: f64| -> f64 {
        if (gamma - 1.0).abs() < 1e-12 {
            u.ln()
        } else {
            u.powf(1.0 - gamma) / (1.0 - gamma)
        }
    };
    match gap {
        0 => 0.0,
        // upper half of the tent: ∫_h^{2h} (2h - u) u^{-γ} du
        1 => g(2.0 * h) - g(h) - h * dg(h),
        _ => {
            let d = gap as f64 * h;
            if gap >= 32 {
                // Taylor expansion of the tent-weighted integral around D
                let f = |k: i32| -> f64 {
                    let mut c = 1.0;
                    for r in 0..k {
                        c *= gamma + r as f64;
                    }
                    c * d.powf(-gamma - k as f64)
                };
                let h2 = h * h;
                h2 * f(0) + h2 * h2 * f(2) / 12.0 + h2 * h2 * h2 * f(4) / 360.0
                    + h2 * h2 * h2 * h2 * f(6) / 20160.0
            } else {
                g(d + h) - 2.0 * g(d) + g(d - h)
            }
        }
    }
}

/// Reject `m < 1` or `α <= 0`; warn when `α - 1/m <= 0`, where the Besov
/// space no longer embeds into continuous paths.
fn check_besov<S: Scalar>(alpha: S, m: S) -> Result<()> {
    if !(m >= S::one()) || !(alpha > S::zero()) || !m.is_finite() {
        return Err(invalid(format!(
            "Besov parameters need m >= 1 and alpha > 0 (alpha = {alpha}, m = {m})"
        )));
    }
    if !(alpha - S::one() / m > S::zero()) {
        log::warn!("Besov parameters have alpha - 1/m <= 0 (alpha = {alpha}, m = {m})");
    }
    Ok(())
}

/// `ln` of [`besov_cell_weight`], finite where the weight itself over- or
/// underflows (large `αm`).
pub(crate) fn besov_cell_log_weight(gap: usize, h: f64, gamma: f64) -> f64 {
    if gap == 0 {
        return f64::NEG_INFINITY;
    }
    let w = besov_cell_weight(gap, h, gamma);
    if w.is_normal() && w > 0.0 {
        return w.ln();
    }
    // scale-free weight at h = 1 times h^{2-γ}; only reached for γ > 2
    let g = gap as f64;
    let k = (gamma - 1.0) * (gamma - 2.0);
    let unit = if gap == 1 {
        // ∫_1^2 (2 - u) u^{-γ} du
        ((2f64.powf(2.0 - gamma) - 1.0) / k + 1.0 / (gamma - 1.0)).ln()
    } else if gamma < g / 8.0 {
        let mut series = 1.0;
        let mut c = 1.0;
        for (r, den) in [(2, 12.0), (4, 360.0), (6, 20160.0)] {
            c = (r - 2..r).fold(c, |c, q| c * (gamma + q as f64));
            series += c / (den * g.powi(r));
        }
        -gamma * g.ln() + series.ln()
    } else {
        let r1 = ((g / (g - 1.0)).ln() * (2.0 - gamma)).exp();
        let r2 = (((g + 1.0) / (g - 1.0)).ln() * (2.0 - gamma)).exp();
        (2.0 - gamma) * (g - 1.0).ln() - k.ln() + (1.0 - 2.0 * r1 + r2).ln()
    };
    (2.0 - gamma) * h.ln() + unit
}

/// Running `ln Σ e^{x}` as `(max, Σ e^{x - max})`.
#[derive(Clone, Copy)]
struct LogSum(f64, f64);

impl LogSum {
    const EMPTY: LogSum = LogSum(f64::NEG_INFINITY, 0.0);

    fn push(&mut self, x: f64) {
        self.merge(LogSum(x, 1.0));
    }

    fn merge(&mut self, o: LogSum) {
        if o.1 == 0.0 {
            return;
        }
        if o.0 > self.0 {
            self.1 = self.1 * (self.0 - o.0).exp() + o.1;
            self.0 = o.0;
        } else {
            self.1 += o.1 * (o.0 - self.0).exp();
        }
    }

    fn ln(self) -> f64 {
        self.0 + self.1.ln()
    }
}

/// Per-level Besov norms `(Σ |η|^m w)^{1/m}` at the given stride (1 = full
/// grid), accumulated in log space.
fn besov_levels<S, T, I, F>(
    n: usize,
    horizon: S,
    stride: usize,
    exps: &[(S, S)],
    init: I,
    eval: F,
) -> Vec<S>
where
    S: Scalar,
    T: Send,
    I: Fn() -> T + Sync + Send,
    F: Fn(&mut T, usize, usize, &mut [S]) + Sync + Send,
{
    let nc = n / stride;
    let h = horizon.f64() / nc as f64;
    let levels = exps.len();
    let ms: Vec<f64> = exps.iter().map(|(_, m)| m.f64()).collect();
    let log_weights: Vec<Vec<f64>> = exps
        .iter()
        .map(|(a, m)| {
            let gamma = 1.0 + a.f64() * m.f64();
            (0..=nc).map(|g| besov_cell_log_weight(g, h, gamma)).collect()
        })
        .collect();
    let rows: Vec<Vec<LogSum>> = (0..nc)
        .into_par_iter()
        .map_init(
            || (init(), vec![S::zero(); levels]),
            |(scratch, mags), i| {
                let mut acc = vec![LogSum::EMPTY; levels];
                // cells (i, j) with j > i, lower-left pair (s_i, t_j)
                for j in i + 1..nc {
                    eval(scratch, i * stride, j * stride, mags);
                    for l in 0..levels {
                        let mag = mags[l].f64();
                        if mag > 0.0 {
                            acc[l].push(ms[l] * mag.ln() + log_weights[l][j - i]);
                        }
                    }
                }
                acc
            },
        )
        .collect();
    let mut total = vec![LogSum::EMPTY; levels];
    for r in rows {
        for (t, v) in total.iter_mut().zip(r) {
            t.merge(v);
        }
    }
    total
        .into_iter()
        .zip(ms)
        .map(|(t, m)| if t.1 == 0.0 { S::zero() } else { S::c((t.ln() / m).exp()) })
        .collect()
}

/// `(α, m)`-Besov norm on the grid over the region `t - s >= h`, with the
/// kernel integrated exactly per cell and η taken at each cell's lower-left
/// grid pair.
pub fn besov_norm<S: Scalar>(eta: &dyn TwoParamFunction<S>, alpha: S, m: S) -> Result<S> {
    besov_norm_strided(eta, alpha, m, 1)
}

/// Besov norm at the full grid and at half resolution, for a refinement
/// study of the quadrature.
pub fn besov_refinement<S: Scalar>(eta: &dyn TwoParamFunction<S>, alpha: S, m: S) -> Result<(S, S)> {
    let fine = besov_norm_strided(eta, alpha, m, 1)?;
    let coarse = if eta.n_intervals() >= 2 {
        besov_norm_strided(eta, alpha, m, 2)?
    } else {
        fine
    };
    Ok((fine, coarse))
}

fn besov_norm_strided<S: Scalar>(
    eta: &dyn TwoParamFunction<S>,
    alpha: S,
    m: S,
    stride: usize,
) -> Result<S> {
    check_besov(alpha, m)?;
    let dim = eta.value_dim();
    let out = besov_levels(
        eta.n_intervals(),
        eta.horizon(),
        stride,
        &[(alpha, m)],
        || vec![S::zero(); dim],
        |buf, i, j, mags| {
            eta.eval(i, j, buf);
            mags[0] = euclid(buf);
        },
    );
    Ok(out[0])
}

/// `C = (∬_{0<s<t<T} (t-s)^{(γ-α)m-1} ds dt)^{1/m}`, the constant of
/// `‖η‖_{α,m-Bes} <= C ‖η‖_{γ-Hld}` for `α < γ`.
pub fn holder_to_besov_constant(alpha: f64, gamma: f64, m: f64, horizon: f64) -> Result<f64> {
    if !(alpha < gamma) || !(m >= 1.0) {
        return Err(invalid("need alpha < gamma and m >= 1"));
    }
    let kappa = (gamma - alpha) * m;
    Ok((horizon.powf(kappa + 1.0) / (kappa * (kappa + 1.0))).powf(1.0 / m))
}

/// p-variation over partitions with points on the grid, optionally on the
/// sub-interval `[t_s, t_t]`. Exact for the piecewise-linear interpolant.
pub fn pvar_norm<S: Scalar>(path: &GridPath<S>, p: S, range: Option<(usize, usize)>) -> Result<S> {
    if !(p >= S::one()) {
        return Err(invalid(format!("p-variation exponent must be >= 1, got {p}")));
    }
    let (s, t) = range.unwrap_or((0, path.n_intervals()));
    if s > t || t > path.n_intervals() {
        return Err(Error::Index(format!("invalid sub-interval ({s}, {t})")));
    }
    Ok(pvar_prefix_powers(path, p, s, t).last().copied().unwrap_or(S::zero()).powf(S::one() / p))
}

/// `best[k] = ‖x‖^p_{p-var,[t_s, t_{s+k}]}` for `k = 0..=t-s`, by the
/// `O(n^2)` recursion `best[j] = max_{i<j} best[i] + |x_j - x_i|^p`.
pub(crate) fn pvar_prefix_powers<S: Scalar>(path: &GridPath<S>, p: S, s: usize, t: usize) -> Vec<S> {
    let len = t - s + 1;
    let mut best = vec![S::zero(); len];
    let mut buf = vec![S::zero(); path.dim()];
    for j in 1..len {
        let mut b = S::zero();
        for i in 0..j {
            path.increment_into(s + i, s + j, &mut buf);
            b = b.max(best[i] + euclid(&buf).powf(p));
        }
        best[j] = b;
    }
    best
}

/// Scale in which rough-path levels are measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormMode {
    /// Level `i` in the `iα`-Hölder norm.
    Holder { alpha: f64 },
    /// Level `i` in the `(iα, 12m/i)`-Besov norm.
    Besov { alpha: f64, m: f64 },
}

impl NormMode {
    pub fn alpha(&self) -> f64 {
        match *self {
            NormMode::Holder { alpha } | NormMode::Besov { alpha, .. } => alpha,
        }
    }

    /// Truncation degree `⌊1/α⌋` matching this scale.
    pub fn degree(&self) -> Result<usize> {
        let a = self.alpha();
        if !(a > 0.25 && a <= 1.0) {
            return Err(invalid(format!(
                "alpha = {a} needs degree ⌊1/alpha⌋ <= 3, i.e. alpha in (1/4, 1]"
            )));
        }
        Ok(((1.0 / a).floor() as usize).max(1))
    }

    /// `(exponent, integrability)` for level `i`.
    fn level_params(&self, i: usize) -> (f64, f64) {
        match *self {
            NormMode::Holder { alpha } => (alpha * i as f64, f64::INFINITY),
            NormMode::Besov { alpha, m } => (alpha * i as f64, 12.0 * m / i as f64),
        }
    }

    /// Log a warning when the Besov parameters leave the range in which the
    /// embedding theory applies; the diagnostics are still computed.
    pub fn warn_outside_theory(&self, degree: usize) {
        if let NormMode::Besov { alpha, m } = *self {
            let ok = alpha > 0.25
                && alpha <= 0.5
                && m.fract() == 0.0
                && alpha - 1.0 / (12.0 * m) > 1.0 / ((1.0 / alpha).floor() + 1.0);
            if !ok {
                log::warn!(
                    "Besov parameters (alpha = {alpha}, m = {m}, degree {degree}) are outside the embedding range"
                );
            }
        }
    }
}

/// Per-level norms of `X` (or of `X - Y` when `other` is given), level `i`
/// taken in the mode's `i`-th scale.
pub fn level_norms<S: Scalar>(
    x: &RoughPathGrid<S>,
    other: Option<&RoughPathGrid<S>>,
    mode: NormMode,
) -> Result<Vec<S>> {
    let (x, y) = match other {
        Some(y) => {
            let (a, b) = align(x, y)?;
            (a, Some(b))
        }
        None => (x.clone(), None),
    };
    let k = x.degree();
    mode.warn_outside_theory(k);
    let n = x.n_intervals();
    let init = || {
        (
            GroupTensor::<S>::identity_unchecked(x.dim(), k),
            GroupTensor::<S>::identity_unchecked(x.dim(), k),
        )
    };
    let mags = |(gx, gy): &mut (GroupTensor<S>, GroupTensor<S>), i: usize, j: usize, out: &mut [S]| {
        x.increment_into(i, j, gx);
        if let Some(y) = &y {
            y.increment_into(i, j, gy);
            for l in 1..=k {
                out[l - 1] = gx
                    .level(l)
                    .iter()
                    .zip(gy.level(l))
                    .fold(S::zero(), |a, (p, q)| a + (*p - *q) * (*p - *q))
                    .sqrt();
            }
        } else {
            for l in 1..=k {
                out[l - 1] = gx.level_norm(l);
            }
        }
    };
    match mode {
        NormMode::Holder { .. } => {
            let h = x.step();
            let pows: Vec<Vec<S>> = (1..=k)
                .map(|l| {
                    let g = S::c(mode.level_params(l).0);
                    (0..=n).map(|gap| (S::usize(gap) * h).powf(g)).collect()
                })
                .collect();
            Ok(scan_rows(
                n,
                k,
                || (init(), vec![S::zero(); k]),
                |(scratch, buf), i, acc| {
                    for j in i + 1..=n {
                        mags(scratch, i, j, buf);
                        for l in 0..k {
                            acc[l] = acc[l].max(buf[l] / pows[l][j - i]);
                        }
                    }
                },
                S::max,
            ))
        }
        NormMode::Besov { alpha, m } => {
            let exps: Vec<(S, S)> = (1..=k)
                .map(|l| {
                    let (a, mm) = mode.level_params(l);
                    (S::c(a), S::c(mm))
                })
                .collect();
            for (a, mm) in &exps {
                check_besov(*a, *mm).map_err(|_| {
                    invalid(format!("Besov mode (alpha = {alpha}, m = {m}) invalid at some level"))
                })?;
            }
            Ok(besov_levels(n, x.horizon(), 1, &exps, init, mags))
        }
    }
}

/// Bring two rough paths onto the finer of their grids.
fn align<S: Scalar>(
    x: &RoughPathGrid<S>,
    y: &RoughPathGrid<S>,
) -> Result<(RoughPathGrid<S>, RoughPathGrid<S>)> {
    x.check_same_shape(y)?;
    let level = x.level().max(y.level());
    Ok((x.refine(level - x.level())?, y.refine(level - y.level())?))
}

/// Inhomogeneous distance `Σ_i ‖X^i - Y^i‖`.
pub fn rough_distance<S: Scalar>(
    x: &RoughPathGrid<S>,
    y: &RoughPathGrid<S>,
    mode: NormMode,
) -> Result<S> {
    Ok(level_norms(x, Some(y), mode)?
        .into_iter()
        .fold(S::zero(), |a, b| a + b))
}

/// Homogeneous norm `Σ_i ‖X^i‖^{1/i}`.
pub fn homogeneous_norm<S: Scalar>(x: &RoughPathGrid<S>, mode: NormMode) -> Result<S> {
    Ok(level_norms(x, None, mode)?
        .into_iter()
        .enumerate()
        .fold(S::zero(), |a, (i, v)| a + v.powf(S::one() / S::usize(i + 1))))
}
