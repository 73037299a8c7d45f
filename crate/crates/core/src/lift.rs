//! Dyadic piecewise-linear lifts of sample paths, their convergence record,
//! and translation of rough paths by smoother paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::path_spaces::{geometric_tolerance, level_norms, rough_distance, GridPath, NormMode, RoughPathGrid};
use crate::scalar::Scalar;
use crate::stats::linear_fit;
use crate::tensor_algebra::{check_degree, segment_signature_unchecked, GroupTensor};

/// Level at which [`canonical_lift`] starts.
pub const START_LEVEL: u32 = 2;

/// Path agreeing with `w` at the `2^l + 1` coarse dyadic times, linear in
/// between, sampled on `w`'s grid.
pub fn dyadic_coarsen<S: Scalar>(w: &GridPath<S>, l: u32) -> Result<GridPath<S>> {
    w.subsample(l)?.refine(w.level())
}

/// Signature of the level-`l` piecewise-linear approximation, one segment
/// per cell of the level-`l` grid.
pub fn lift_dyadic<S: Scalar>(w: &GridPath<S>, l: u32, degree: usize) -> Result<RoughPathGrid<S>> {
    check_degree(degree)?;
    let coarse = w.subsample(l)?;
    let incs = (0..coarse.n_intervals())
        .map(|i| segment_signature_unchecked(&coarse.increment(i, i + 1), degree))
        .collect();
    RoughPathGrid::from_increments_unchecked(w.horizon(), l, incs)
}

/// Log-linear fit `d_l ≈ C κ^l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub c: f64,
    pub kappa: f64,
    pub r_squared: f64,
    pub levels_used: usize,
}

/// Fit `log d_l = log C + l log κ` over the positive distances.
pub fn fit_geometric(levels: &[u32], distances: &[f64]) -> Result<RateFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .zip(distances)
        .filter(|(_, d)| **d > 0.0 && d.is_finite())
        .map(|(l, d)| (*l as f64, d.ln()))
        .unzip();
    if x.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "{} positive distances, need at least two",
            x.len()
        )));
    }
    let f = linear_fit(&x, &y)?;
    Ok(RateFit {
        c: f.intercept.exp(),
        kappa: f.slope.exp(),
        r_squared: f.r_squared,
        levels_used: x.len(),
    })
}

/// Outcome of [`canonical_lift`]: `distances[i] = d(W(levels[i]), W(levels[i] + 1))`.
#[derive(Clone, Debug)]
pub struct LiftRecord<S> {
    pub mode: NormMode,
    pub degree: usize,
    pub tol: f64,
    pub levels: Vec<u32>,
    pub distances: Vec<S>,
    pub converged: bool,
    pub fit: Option<RateFit>,
    /// `W` at the finest computed level.
    pub rough_path: RoughPathGrid<S>,
}

/// Serialisable part of a [`LiftRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSummary {
    pub mode: NormMode,
    pub degree: usize,
    pub tol: f64,
    pub levels: Vec<u32>,
    pub distances: Vec<f64>,
    pub converged: bool,
    pub fit: Option<RateFit>,
    pub final_level: u32,
    pub dim: usize,
    pub horizon: f64,
}

impl<S: Scalar> LiftRecord<S> {
    pub fn summary(&self) -> LiftSummary {
        LiftSummary {
            mode: self.mode,
            degree: self.degree,
            tol: self.tol,
            levels: self.levels.clone(),
            distances: self.distances.iter().map(|d| d.f64()).collect(),
            converged: self.converged,
            fit: self.fit,
            final_level: self.rough_path.level(),
            dim: self.rough_path.dim(),
            horizon: self.rough_path.horizon().f64(),
        }
    }
}

/// Iterate `l = 2, 3, ...`, computing `d(W(l), W(l+1))` until it drops
/// below `tol` or the grid of `w` is exhausted.
pub fn canonical_lift<S: Scalar>(w: &GridPath<S>, mode: NormMode, tol: f64) -> Result<LiftRecord<S>> {
    canonical_lift_from(w, mode, tol, START_LEVEL)
}

pub fn canonical_lift_from<S: Scalar>(
    w: &GridPath<S>,
    mode: NormMode,
    tol: f64,
    start_level: u32,
) -> Result<LiftRecord<S>> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    if w.level() == 0 {
        return Err(invalid("a level-0 path has nothing to refine"));
    }
    let degree = mode.degree()?;
    let l0 = start_level.min(w.level() - 1);
    let mut current = lift_dyadic(w, l0, degree)?;
    let (mut levels, mut distances) = (Vec::new(), Vec::new());
    let mut converged = false;
    for l in l0..w.level() {
        let next = lift_dyadic(w, l + 1, degree)?;
        let d = rough_distance(&current, &next, mode)?;
        levels.push(l);
        distances.push(d);
        current = next;
        if d.f64() < tol {
            converged = true;
            break;
        }
    }
    let fit = fit_geometric(&levels, &distances.iter().map(|d| d.f64()).collect::<Vec<_>>()).ok();
    if !converged {
        log::debug!("lift did not reach tolerance {tol} by level {}", w.level());
    }
    Ok(LiftRecord {
        mode,
        degree,
        tol,
        levels,
        distances,
        converged,
        fit,
        rough_path: current,
    })
}

/// Lift every path of an ensemble in parallel; output order matches input.
pub fn lift_ensemble<S: Scalar>(paths: &[GridPath<S>], mode: NormMode, tol: f64) -> Result<Vec<LiftRecord<S>>> {
    paths.par_iter().map(|w| canonical_lift(w, mode, tol)).collect()
}

/// Per-level `L^q` means of the distances over an ensemble, restricted to
/// the levels every record reached, and their log-linear fit.
pub fn cauchy_rate_estimate<S: Scalar>(records: &[LiftRecord<S>], q: f64) -> Result<(RateFit, Vec<(u32, f64)>)> {
    if records.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    if !(q >= 1.0) {
        return Err(invalid(format!("q must be >= 1, got {q}")));
    }
    let common = records.iter().map(|r| r.levels.len()).min().unwrap_or(0);
    let levels = &records[0].levels[..common];
    if records.iter().any(|r| r.levels[..common] != *levels) {
        return Err(invalid("records start at different levels"));
    }
    if common < 3 {
        return Err(Error::DegenerateFit(format!("{common} common levels, need at least three")));
    }
    let means: Vec<f64> = (0..common)
        .map(|i| {
            let s: f64 = records.iter().map(|r| r.distances[i].f64().powf(q)).sum();
            (s / records.len() as f64).powf(1.0 / q)
        })
        .collect();
    let fit = fit_geometric(levels, &means)?;
    Ok((fit, levels.iter().copied().zip(means).collect()))
}

/// Numerical regularity check for a translation: `α + 1/q > 1` and the
/// q-variation of `k`, which is returned.
pub fn check_translation_regularity<S: Scalar>(k: &GridPath<S>, alpha: f64, q: f64) -> Result<S> {
    if !(alpha + 1.0 / q > 1.0) {
        return Err(invalid(format!("need alpha + 1/q > 1, got alpha = {alpha}, q = {q}")));
    }
    let v = crate::path_spaces::pvar_norm(k, S::c(q), None)?;
    if !v.is_finite() {
        return Err(Error::Numerical("translation path has infinite q-variation".into()));
    }
    Ok(v)
}

fn check_translation_inputs<S: Scalar>(x: &RoughPathGrid<S>, k: &GridPath<S>) -> Result<()> {
    if x.level() != k.level() || x.horizon() != k.horizon() {
        return Err(shape(format!(
            "rough path on (level {}, T {}) but translation on (level {}, T {})",
            x.level(),
            x.horizon(),
            k.level(),
            k.horizon()
        )));
    }
    if x.dim() != k.dim() {
        return Err(shape(format!("dimensions {} vs {}", x.dim(), k.dim())));
    }
    let cert = x.geometric_certificate();
    if !(cert <= geometric_tolerance::<S>()) {
        return Err(Error::Numerical(format!(
            "rough path failed the geometric certificate (residual {cert})"
        )));
    }
    Ok(())
}

/// `T_k(X)` cell by cell: each cell `g` becomes `exp(log g + Δk)`, which is
/// the signature of `x + k` whenever `X` is the lift of a piecewise-linear
/// `x` on the same grid.
pub fn young_translation<S: Scalar>(x: &RoughPathGrid<S>, k: &GridPath<S>) -> Result<RoughPathGrid<S>> {
    check_translation_inputs(x, k)?;
    let incs = x
        .cells()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut l = g.log();
            l.add_vector(&k.increment(i, i + 1));
            l.exp()
        })
        .collect();
    RoughPathGrid::from_increments_unchecked(x.horizon(), x.level(), incs)
}

/// Riemann-sum evaluation of `(T_k X)_{s,t}` and its two-grid Richardson
/// extrapolation.
#[derive(Clone, Debug)]
pub struct TranslationEstimate<S> {
    pub fine: GroupTensor<S>,
    pub extrapolated: GroupTensor<S>,
    /// `max |fine - coarse|` entrywise.
    pub error_estimate: S,
}

/// `(T_k X)_{s,t}` assembled level by level from `X`, the signature of `k`
/// and left-point Riemann sums for the mixed iterated integrals. At level
/// three the term with `dk` first and two `dx` is recovered from the
/// shuffle identity `K^μ X^{νλ} = [kxx]^{μνλ} + [xkx]^{νμλ} + [xxk]^{νλμ}`.
pub fn translation_increment_riemann<S: Scalar>(
    x: &RoughPathGrid<S>,
    k: &GridPath<S>,
    s: usize,
    t: usize,
) -> Result<TranslationEstimate<S>> {
    check_translation_inputs(x, k)?;
    if s > t || t > x.n_intervals() {
        return Err(Error::Index(format!("invalid interval ({s}, {t})")));
    }
    let fine = riemann_translation(x, k, s, t, 1);
    let (extrapolated, err) = if (t - s).is_multiple_of(2) && t > s {
        let coarse = riemann_translation(x, k, s, t, 2);
        let mut ex = fine.clone();
        let mut err = S::zero();
        for l in 1..=x.degree() {
            let (f, c) = (fine.level(l).to_vec(), coarse.level(l));
            for ((e, fv), cv) in ex.level_mut(l).iter_mut().zip(&f).zip(c) {
                *e = S::c(2.0) * *fv - *cv;
                err = err.max((*fv - *cv).abs());
            }
        }
        (ex, err)
    } else {
        (fine.clone(), S::nan())
    };
    Ok(TranslationEstimate {
        fine,
        extrapolated,
        error_estimate: err,
    })
}

fn riemann_translation<S: Scalar>(
    x: &RoughPathGrid<S>,
    k: &GridPath<S>,
    s: usize,
    t: usize,
    stride: usize,
) -> GroupTensor<S> {
    let d = x.dim();
    let deg = x.degree();
    let outer = |a: &[S], b: &[S], out: &mut [S]| {
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                out[i * b.len() + j] += *ai * *bj;
            }
        }
    };
    // running values at the current left point r
    let mut k_sig = GroupTensor::identity_unchecked(d, deg);
    let mut xk = vec![S::zero(); d * d]; // ∫ X^1_{s,.} ⊗ dk
    let mut kx = vec![S::zero(); d * d]; // ∫ K^1_{s,.} ⊗ dx
    let (mut xxk, mut xkx, mut xkk, mut kxk, mut kkx) = (
        vec![S::zero(); d * d * d],
        vec![S::zero(); d * d * d],
        vec![S::zero(); d * d * d],
        vec![S::zero(); d * d * d],
        vec![S::zero(); d * d * d],
    );
    let mut r = s;
    while r < t {
        let next = (r + stride).min(t);
        let xr = x.increment(s, r).expect("valid pair");
        let dx = x.increment(r, next).expect("valid pair").level1().to_vec();
        let dk = k.increment(r, next);
        let kr = k_sig.level1().to_vec();
        if deg >= 3 {
            outer(xr.level2(), &dk, &mut xxk);
            outer(&xk, &dx, &mut xkx);
            outer(&xk, &dk, &mut xkk);
            outer(&kx, &dk, &mut kxk);
            outer(k_sig.level2(), &dx, &mut kkx);
        }
        if deg >= 2 {
            outer(xr.level1(), &dk, &mut xk);
            outer(&kr, &dx, &mut kx);
        }
        // exact signature of the piecewise-linear k, sub-cell by sub-cell
        for i in r..next {
            k_sig = k_sig.mul(&segment_signature_unchecked(&k.increment(i, i + 1), deg)).expect("same shape");
        }
        r = next;
    }
    let xst = x.increment(s, t).expect("valid pair");
    let mut out = GroupTensor::identity_unchecked(d, deg);
    for (o, (a, b)) in out.level_mut(1).iter_mut().zip(xst.level1().iter().zip(k_sig.level1())) {
        *o = *a + *b;
    }
    if deg >= 2 {
        for (i, o) in out.level_mut(2).iter_mut().enumerate() {
            *o = xst.level2()[i] + k_sig.level2()[i] + xk[i] + kx[i];
        }
    }
    if deg >= 3 {
        let k1 = k_sig.level1();
        let x2 = xst.level2();
        let idx = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
        let l3 = out.level_mut(3);
        for mu in 0..d {
            for nu in 0..d {
                for la in 0..d {
                    let kxx = k1[mu] * x2[nu * d + la] - xkx[idx(nu, mu, la)] - xxk[idx(nu, la, mu)];
                    let i = idx(mu, nu, la);
                    l3[i] = xst.level3()[i] + k_sig.level3()[i] + xxk[i] + xkx[i] + kxx + xkk[i] + kxk[i] + kkx[i];
                }
            }
        }
    }
    out
}

/// Per-level norms of the difference between two rough paths, exposed for
/// convergence diagnostics.
pub fn level_distances<S: Scalar>(x: &RoughPathGrid<S>, y: &RoughPathGrid<S>, mode: NormMode) -> Result<Vec<S>> {
    level_norms(x, Some(y), mode)
}
