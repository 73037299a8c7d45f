//! Truncated tensor algebra `T^k(R^d)` for `k <= 3`.
//!
//! A [`GroupTensor`] is an element `(1, X1, X2, X3)` with unit scalar part,
//! i.e. the value of a rough path over one interval. A [`LieElement`] has
//! zero scalar part and is used for the exponential and logarithm maps.
//! Storage is dense and row-major: `X2[i*d + j]`, `X3[(i*d + j)*d + k]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::path_spaces::{GridPath, RoughPathGrid};
use crate::scalar::Scalar;

pub const MAX_DEGREE: usize = 3;

pub(crate) fn check_degree(degree: usize) -> Result<()> {
    if (1..=MAX_DEGREE).contains(&degree) {
        Ok(())
    } else {
        Err(invalid(format!(
            "truncation degree must be 1, 2 or 3 (got {degree})"
        )))
    }
}

#[inline]
fn len2(dim: usize, degree: usize) -> usize {
    if degree >= 2 {
        dim * dim
    } else {
        0
    }
}

#[inline]
fn len3(dim: usize, degree: usize) -> usize {
    if degree >= 3 {
        dim * dim * dim
    } else {
        0
    }
}

/// Group-like element of the truncated tensor algebra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTensor<S> {
    dim: usize,
    degree: usize,
    level1: Vec<S>,
    level2: Vec<S>,
    level3: Vec<S>,
}

impl<S: Scalar> GroupTensor<S> {
    pub fn identity(dim: usize, degree: usize) -> Result<Self> {
        check_degree(degree)?;
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        Ok(Self::identity_unchecked(dim, degree))
    }

    pub(crate) fn identity_unchecked(dim: usize, degree: usize) -> Self {
        Self {
            dim,
            degree,
            level1: vec![S::zero(); dim],
            level2: vec![S::zero(); len2(dim, degree)],
            level3: vec![S::zero(); len3(dim, degree)],
        }
    }

    /// Build from explicit levels. Levels above `degree` must be empty.
    pub fn from_levels(
        dim: usize,
        degree: usize,
        level1: Vec<S>,
        level2: Vec<S>,
        level3: Vec<S>,
    ) -> Result<Self> {
        check_degree(degree)?;
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if level1.len() != dim || level2.len() != len2(dim, degree) || level3.len() != len3(dim, degree)
        {
            return Err(shape(format!(
                "levels of lengths ({}, {}, {}) do not match dim {dim}, degree {degree}",
                level1.len(),
                level2.len(),
                level3.len()
            )));
        }
        let g = Self {
            dim,
            degree,
            level1,
            level2,
            level3,
        };
        if !g.is_finite() {
            return Err(Error::Numerical("tensor entries must be finite".into()));
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn level1(&self) -> &[S] {
        &self.level1
    }

    pub fn level2(&self) -> &[S] {
        &self.level2
    }

    pub fn level3(&self) -> &[S] {
        &self.level3
    }

    /// Level `i` in `1..=3`; empty above the truncation degree.
    pub fn level(&self, i: usize) -> &[S] {
        match i {
            1 => &self.level1,
            2 => &self.level2,
            3 => &self.level3,
            _ => &[],
        }
    }

    pub(crate) fn level_mut(&mut self, i: usize) -> &mut [S] {
        match i {
            1 => &mut self.level1,
            2 => &mut self.level2,
            3 => &mut self.level3,
            _ => &mut [],
        }
    }

    #[inline]
    pub fn l2(&self, i: usize, j: usize) -> S {
        self.level2[i * self.dim + j]
    }

    #[inline]
    pub fn l3(&self, i: usize, j: usize, k: usize) -> S {
        self.level3[(i * self.dim + j) * self.dim + k]
    }

    pub fn is_finite(&self) -> bool {
        self.level1
            .iter()
            .chain(&self.level2)
            .chain(&self.level3)
            .all(|x| x.is_finite())
    }

    pub fn is_identity(&self) -> bool {
        self.level1
            .iter()
            .chain(&self.level2)
            .chain(&self.level3)
            .all(|x| x.is_zero())
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.degree != other.degree {
            return Err(shape(format!(
                "tensor (dim {}, degree {}) vs (dim {}, degree {})",
                self.dim, self.degree, other.dim, other.degree
            )));
        }
        Ok(())
    }

    /// Truncated product `self ⊗ other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = Self::identity_unchecked(self.dim, self.degree);
        self.mul_into(other, &mut out);
        Ok(out)
    }

    /// Truncated product written into `out`. Shapes must agree.
    pub fn mul_into(&self, other: &Self, out: &mut Self) {
        debug_assert_eq!(self.dim, other.dim);
        debug_assert_eq!(self.degree, other.degree);
        let d = self.dim;
        if out.dim != d || out.degree != self.degree {
            *out = Self::identity_unchecked(d, self.degree);
        }
        let (a1, b1) = (&self.level1, &other.level1);
        for i in 0..d {
            out.level1[i] = a1[i] + b1[i];
        }
        if self.degree >= 2 {
            let (a2, b2) = (&self.level2, &other.level2);
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    out.level2[ij] = a2[ij] + b2[ij] + a1[i] * b1[j];
                }
            }
        }
        if self.degree >= 3 {
            let (a2, b2) = (&self.level2, &other.level2);
            let (a3, b3) = (&self.level3, &other.level3);
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    for k in 0..d {
                        let ijk = ij * d + k;
                        out.level3[ijk] =
                            a3[ijk] + b3[ijk] + a1[i] * b2[j * d + k] + a2[ij] * b1[k];
                    }
                }
            }
        }
    }

    /// Group inverse: `(1 + u)^{-1} = 1 - u + u^2 - u^3`.
    pub fn inverse(&self) -> Self {
        let d = self.dim;
        let mut out = Self::identity_unchecked(d, self.degree);
        let g1 = &self.level1;
        for i in 0..d {
            out.level1[i] = -g1[i];
        }
        if self.degree >= 2 {
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    out.level2[ij] = -self.level2[ij] + g1[i] * g1[j];
                }
            }
        }
        if self.degree >= 3 {
            let g2 = &self.level2;
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    for k in 0..d {
                        let ijk = ij * d + k;
                        out.level3[ijk] = -self.level3[ijk]
                            + g1[i] * g2[j * d + k]
                            + g2[ij] * g1[k]
                            - g1[i] * g1[j] * g1[k];
                    }
                }
            }
        }
        out
    }

    /// Scale level `i` by `delta^i`.
    pub fn dilate(&self, delta: S) -> Self {
        let mut out = self.clone();
        let mut factor = S::one();
        for i in 1..=self.degree {
            factor *= delta;
            for x in out.level_mut(i) {
                *x *= factor;
            }
        }
        out
    }

    /// Truncated logarithm.
    pub fn log(&self) -> LieElement<S> {
        let d = self.dim;
        let half = S::c(0.5);
        let third = S::c(1.0 / 3.0);
        let g1 = &self.level1;
        let mut out = LieElement::zero_unchecked(d, self.degree);
        out.level1.copy_from_slice(g1);
        if self.degree >= 2 {
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    out.level2[ij] = self.level2[ij] - half * g1[i] * g1[j];
                }
            }
        }
        if self.degree >= 3 {
            let g2 = &self.level2;
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    for k in 0..d {
                        let ijk = ij * d + k;
                        out.level3[ijk] = self.level3[ijk]
                            - half * (g1[i] * g2[j * d + k] + g2[ij] * g1[k])
                            + third * g1[i] * g1[j] * g1[k];
                    }
                }
            }
        }
        out
    }

    /// Largest absolute entry of `self - other` over all levels.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.level1
            .iter()
            .zip(&other.level1)
            .chain(self.level2.iter().zip(&other.level2))
            .chain(self.level3.iter().zip(&other.level3))
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Euclidean norm of level `i`.
    pub fn level_norm(&self, i: usize) -> S {
        self.level(i)
            .iter()
            .fold(S::zero(), |acc, x| acc + *x * *x)
            .sqrt()
    }

    /// `sum_i |X^i|^{1/i}`, the size used to make tolerances scale-free.
    pub fn magnitude(&self) -> S {
        (1..=self.degree).fold(S::zero(), |acc, i| {
            acc + self.level_norm(i).powf(S::one() / S::usize(i))
        })
    }

    /// Drop levels above `degree`.
    pub fn truncate(&self, degree: usize) -> Result<Self> {
        check_degree(degree)?;
        if degree > self.degree {
            return Err(invalid(format!(
                "cannot raise truncation degree from {} to {degree}",
                self.degree
            )));
        }
        let mut out = Self::identity_unchecked(self.dim, degree);
        out.level1.copy_from_slice(&self.level1);
        if degree >= 2 {
            out.level2.copy_from_slice(&self.level2);
        }
        if degree >= 3 {
            out.level3.copy_from_slice(&self.level3);
        }
        Ok(out)
    }

    pub fn cast<T: Scalar>(&self) -> GroupTensor<T> {
        let conv = |v: &Vec<S>| v.iter().map(|x| T::c(x.f64())).collect::<Vec<T>>();
        GroupTensor {
            dim: self.dim,
            degree: self.degree,
            level1: conv(&self.level1),
            level2: conv(&self.level2),
            level3: conv(&self.level3),
        }
    }

    /// All entries, level by level.
    pub fn entries(&self) -> impl Iterator<Item = &S> {
        self.level1.iter().chain(&self.level2).chain(&self.level3)
    }
}

/// Element of the truncated Lie algebra (zero scalar part).
#[derive(Clone, Debug, PartialEq)]
pub struct LieElement<S> {
    dim: usize,
    degree: usize,
    level1: Vec<S>,
    level2: Vec<S>,
    level3: Vec<S>,
}

impl<S: Scalar> LieElement<S> {
    pub(crate) fn zero_unchecked(dim: usize, degree: usize) -> Self {
        Self {
            dim,
            degree,
            level1: vec![S::zero(); dim],
            level2: vec![S::zero(); len2(dim, degree)],
            level3: vec![S::zero(); len3(dim, degree)],
        }
    }

    pub fn zero(dim: usize, degree: usize) -> Result<Self> {
        check_degree(degree)?;
        Ok(Self::zero_unchecked(dim, degree))
    }

    /// Pure level-one element.
    pub fn from_vector(v: &[S], degree: usize) -> Result<Self> {
        let mut out = Self::zero(v.len(), degree)?;
        out.level1.copy_from_slice(v);
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn level(&self, i: usize) -> &[S] {
        match i {
            1 => &self.level1,
            2 => &self.level2,
            3 => &self.level3,
            _ => &[],
        }
    }

    pub fn level1_mut(&mut self) -> &mut [S] {
        &mut self.level1
    }

    pub fn scale(&self, c: S) -> Self {
        let mut out = self.clone();
        for x in out
            .level1
            .iter_mut()
            .chain(out.level2.iter_mut())
            .chain(out.level3.iter_mut())
        {
            *x *= c;
        }
        out
    }

    /// Add `v` to the level-one part.
    pub fn add_vector(&mut self, v: &[S]) {
        for (x, y) in self.level1.iter_mut().zip(v) {
            *x += *y;
        }
    }

    /// Copy into a larger space, mapping coordinate `i` to `i + offset`.
    pub fn embed(&self, new_dim: usize, offset: usize) -> Self {
        assert!(offset + self.dim <= new_dim);
        let d = self.dim;
        let n = new_dim;
        let mut out = Self::zero_unchecked(n, self.degree);
        for i in 0..d {
            out.level1[i + offset] = self.level1[i];
        }
        if self.degree >= 2 {
            for i in 0..d {
                for j in 0..d {
                    out.level2[(i + offset) * n + j + offset] = self.level2[i * d + j];
                }
            }
        }
        if self.degree >= 3 {
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        out.level3[((i + offset) * n + j + offset) * n + k + offset] =
                            self.level3[(i * d + j) * d + k];
                    }
                }
            }
        }
        out
    }

    /// Truncated exponential.
    pub fn exp(&self) -> GroupTensor<S> {
        let d = self.dim;
        let half = S::c(0.5);
        let sixth = S::c(1.0 / 6.0);
        let l1 = &self.level1;
        let mut out = GroupTensor::identity_unchecked(d, self.degree);
        out.level1.copy_from_slice(l1);
        if self.degree >= 2 {
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    out.level2[ij] = self.level2[ij] + half * l1[i] * l1[j];
                }
            }
        }
        if self.degree >= 3 {
            let l2 = &self.level2;
            for i in 0..d {
                for j in 0..d {
                    let ij = i * d + j;
                    for k in 0..d {
                        let ijk = ij * d + k;
                        out.level3[ijk] = self.level3[ijk]
                            + half * (l1[i] * l2[j * d + k] + l2[ij] * l1[k])
                            + sixth * l1[i] * l1[j] * l1[k];
                    }
                }
            }
        }
        out
    }
}

/// Defects of the shuffle identities at levels two and three.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleResidual<S> {
    pub max_abs_level2: S,
    pub max_abs_level3: S,
}

impl<S: Scalar> ShuffleResidual<S> {
    pub fn max(&self) -> S {
        self.max_abs_level2.max(self.max_abs_level3)
    }
}

/// Left-to-right or balanced-tree Chen concatenation. Both are deterministic;
/// the tree order accumulates less rounding over long paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatOrder {
    #[default]
    LeftToRight,
    BalancedTree,
}

pub fn tensor_mul<S: Scalar>(a: &GroupTensor<S>, b: &GroupTensor<S>) -> Result<GroupTensor<S>> {
    a.mul(b)
}

pub fn tensor_inverse<S: Scalar>(g: &GroupTensor<S>) -> GroupTensor<S> {
    g.inverse()
}

pub fn dilation<S: Scalar>(x: &GroupTensor<S>, delta: S) -> GroupTensor<S> {
    x.dilate(delta)
}

/// Signature of the straight segment with the given increment:
/// `(1, v, v⊗v/2, v⊗v⊗v/6)`.
pub fn segment_signature<S: Scalar>(increment: &[S], degree: usize) -> Result<GroupTensor<S>> {
    check_degree(degree)?;
    if increment.is_empty() {
        return Err(invalid("increment must be non-empty"));
    }
    Ok(segment_signature_unchecked(increment, degree))
}

pub(crate) fn segment_signature_unchecked<S: Scalar>(v: &[S], degree: usize) -> GroupTensor<S> {
    let d = v.len();
    let mut out = GroupTensor::identity_unchecked(d, degree);
    out.level1.copy_from_slice(v);
    if degree >= 2 {
        let half = S::c(0.5);
        for i in 0..d {
            for j in 0..d {
                out.level2[i * d + j] = half * v[i] * v[j];
            }
        }
    }
    if degree >= 3 {
        let sixth = S::c(1.0 / 6.0);
        for i in 0..d {
            for j in 0..d {
                let vij = sixth * v[i] * v[j];
                for k in 0..d {
                    out.level3[(i * d + j) * d + k] = vij * v[k];
                }
            }
        }
    }
    out
}

/// Signature of the piecewise-linear interpolation of `path` between grid
/// indices `s_index <= t_index`.
pub fn signature_piecewise_linear<S: Scalar>(
    path: &GridPath<S>,
    s_index: usize,
    t_index: usize,
    degree: usize,
    order: ConcatOrder,
) -> Result<GroupTensor<S>> {
    check_degree(degree)?;
    let n = path.n_intervals();
    if s_index > t_index || t_index > n {
        return Err(Error::Index(format!(
            "need 0 <= s <= t <= {n}, got s = {s_index}, t = {t_index}"
        )));
    }
    let segment = |i: usize| segment_signature_unchecked(&path.increment(i, i + 1), degree);
    match order {
        ConcatOrder::LeftToRight => {
            let mut acc = GroupTensor::identity_unchecked(path.dim(), degree);
            let mut tmp = acc.clone();
            for i in s_index..t_index {
                acc.mul_into(&segment(i), &mut tmp);
                std::mem::swap(&mut acc, &mut tmp);
            }
            Ok(acc)
        }
        ConcatOrder::BalancedTree => Ok(tree_product(s_index, t_index, &segment)
            .unwrap_or_else(|| GroupTensor::identity_unchecked(path.dim(), degree))),
    }
}

/// Product of `f(lo) ⊗ ... ⊗ f(hi - 1)` by recursive halving.
pub(crate) fn tree_product<S: Scalar, F>(lo: usize, hi: usize, f: &F) -> Option<GroupTensor<S>>
where
    F: Fn(usize) -> GroupTensor<S>,
{
    match hi - lo {
        0 => None,
        1 => Some(f(lo)),
        len => {
            let mid = lo + len / 2;
            let left = tree_product(lo, mid, f)?;
            let right = tree_product(mid, hi, f)?;
            let mut out = left.clone();
            left.mul_into(&right, &mut out);
            Some(out)
        }
    }
}

/// Max absolute entry of `X_{s,t} - X_{s,u} ⊗ X_{u,t}`, with `X_{s,t}` taken
/// from the prefix cache and the two factors multiplied out from the stored
/// cells. Zero by definition when `u` is an endpoint.
pub fn chen_defect<S: Scalar>(
    x: &RoughPathGrid<S>,
    s_index: usize,
    u_index: usize,
    t_index: usize,
) -> Result<S> {
    if !(s_index <= u_index && u_index <= t_index) {
        return Err(Error::Index(format!(
            "chen_defect needs s <= u <= t, got ({s_index}, {u_index}, {t_index})"
        )));
    }
    let st = x.increment(s_index, t_index)?;
    if u_index == s_index || u_index == t_index {
        return Ok(S::zero());
    }
    // factors from the stored cells, the whole span from the prefix cache
    let cells = |lo: usize, hi: usize| {
        tree_product(lo, hi, &|i| x.cell(i).clone()).expect("non-empty span")
    };
    let prod = cells(s_index, u_index).mul(&cells(u_index, t_index))?;
    Ok(st.max_abs_diff(&prod))
}

pub fn shuffle_check<S: Scalar>(g: &GroupTensor<S>) -> ShuffleResidual<S> {
    let d = g.dim;
    let g1 = &g.level1;
    let mut r2 = S::zero();
    let mut r3 = S::zero();
    if g.degree >= 2 {
        for p in 0..d {
            for q in 0..d {
                r2 = r2.max((g1[p] * g1[q] - g.l2(p, q) - g.l2(q, p)).abs());
            }
        }
    }
    if g.degree >= 3 {
        for p in 0..d {
            for q in 0..d {
                for r in 0..d {
                    let lhs = g1[p] * g.l2(q, r);
                    let rhs = g.l3(p, q, r) + g.l3(q, p, r) + g.l3(q, r, p);
                    r3 = r3.max((lhs - rhs).abs());
                }
            }
        }
    }
    ShuffleResidual {
        max_abs_level2: r2,
        max_abs_level3: r3,
    }
}

/// Shuffle residual divided by `1 + magnitude^degree`.
pub fn relative_shuffle_residual<S: Scalar>(g: &GroupTensor<S>) -> S {
    let scale = S::one() + g.magnitude().powi(g.degree as i32);
    shuffle_check(g).max() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Iterated integrals of a piecewise-linear path by explicit sums over
    /// ordered segment tuples, independent of Chen's relation.
    fn brute_force_signature(incs: &[Vec<f64>], degree: usize) -> GroupTensor<f64> {
        let d = incs[0].len();
        let n = incs.len();
        let mut l1 = vec![0.0; d];
        let mut l2 = vec![0.0; d * d];
        let mut l3 = vec![0.0; d * d * d];
        for a in 0..n {
            for i in 0..d {
                l1[i] += incs[a][i];
            }
        }
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for a in 0..n {
                    s += 0.5 * incs[a][i] * incs[a][j];
                    for b in a + 1..n {
                        s += incs[a][i] * incs[b][j];
                    }
                }
                l2[i * d + j] = s;
            }
        }
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut s = 0.0;
                    for a in 0..n {
                        s += incs[a][i] * incs[a][j] * incs[a][k] / 6.0;
                        for b in a + 1..n {
                            s += 0.5 * incs[a][i] * incs[a][j] * incs[b][k];
                            s += 0.5 * incs[a][i] * incs[b][j] * incs[b][k];
                            for c in b + 1..n {
                                s += incs[a][i] * incs[b][j] * incs[c][k];
                            }
                        }
                    }
                    l3[(i * d + j) * d + k] = s;
                }
            }
        }
        if degree < 3 {
            l3.clear();
        }
        if degree < 2 {
            l2.clear();
        }
        GroupTensor::from_levels(d, degree, l1, l2, l3).unwrap()
    }

    fn path_from_increments(incs: &[Vec<f64>]) -> GridPath<f64> {
        let d = incs[0].len();
        let level = (incs.len() as f64).log2().round() as u32;
        assert_eq!(1usize << level, incs.len());
        let mut values = vec![0.0; d];
        let mut cur = vec![0.0; d];
        for inc in incs {
            for i in 0..d {
                cur[i] += inc[i];
            }
            values.extend_from_slice(&cur);
        }
        GridPath::new(d, 1.0, level, values).unwrap()
    }

    fn rel_err(a: &GroupTensor<f64>, b: &GroupTensor<f64>) -> f64 {
        a.max_abs_diff(b) / (1.0 + a.magnitude().powi(3))
    }

    #[test]
    fn segment_inverse_is_negated_segment() {
        let v = [0.3, -1.2, 2.0];
        let g = segment_signature(&v, 3).unwrap();
        let minus: Vec<f64> = v.iter().map(|x| -x).collect();
        let ginv = segment_signature(&minus, 3).unwrap();
        assert!(g.inverse().max_abs_diff(&ginv) < 1e-15);
        assert!(g.mul(&ginv).unwrap().max_abs_diff(&GroupTensor::identity(3, 3).unwrap()) < 1e-14);
    }

    #[test]
    fn scalar_product_hand_expansion() {
        let a = GroupTensor::from_levels(1, 2, vec![1.0], vec![0.5], vec![]).unwrap();
        let p = a.mul(&a).unwrap();
        assert_eq!(p.level1(), &[2.0]);
        assert_eq!(p.level2(), &[2.0]);
    }

    #[test]
    fn scalar_segment_signature() {
        let g = segment_signature(&[2.0f64], 3).unwrap();
        assert_eq!(g.level1(), &[2.0]);
        assert_eq!(g.level2(), &[2.0]);
        assert!((g.level3()[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!(segment_signature(&[0.0, 0.0], 2).unwrap().is_identity());
    }

    #[test]
    fn degree_four_is_rejected() {
        assert!(matches!(
            GroupTensor::<f64>::identity(2, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(segment_signature(&[1.0], 0).is_err());
    }

    #[test]
    fn mismatched_shapes_are_usage_errors() {
        let a = GroupTensor::<f64>::identity(2, 2).unwrap();
        let b = GroupTensor::<f64>::identity(3, 2).unwrap();
        let c = GroupTensor::<f64>::identity(2, 3).unwrap();
        assert!(matches!(a.mul(&b), Err(Error::Shape(_))));
        assert!(matches!(a.mul(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn l_corner_levy_area() {
        let path = GridPath::new(2, 1.0, 1, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let sig = signature_piecewise_linear(&path, 0, 2, 2, ConcatOrder::LeftToRight).unwrap();
        let oracle = brute_force_signature(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        assert!(sig.max_abs_diff(&oracle) < 1e-15);
        assert_eq!(sig.l2(0, 1), 1.0);
        assert_eq!(sig.l2(1, 0), 0.0);
        let area = 0.5 * (sig.l2(0, 1) - sig.l2(1, 0));
        assert_eq!(area, 0.5);
    }

    #[test]
    fn empty_range_and_straight_line() {
        let path = GridPath::new(2, 1.0, 2, vec![0., 0., 1., 2., 2., 4., 3., 6., 4., 8.]).unwrap();
        let id = signature_piecewise_linear(&path, 2, 2, 3, ConcatOrder::LeftToRight).unwrap();
        assert!(id.is_identity());
        let whole = signature_piecewise_linear(&path, 0, 4, 3, ConcatOrder::BalancedTree).unwrap();
        let seg = segment_signature(&[4.0, 8.0], 3).unwrap();
        assert!(whole.max_abs_diff(&seg) < 1e-13);
        assert!(signature_piecewise_linear(&path, 3, 2, 3, ConcatOrder::LeftToRight).is_err());
        assert!(signature_piecewise_linear(&path, 0, 5, 3, ConcatOrder::LeftToRight).is_err());
    }

    #[test]
    fn shuffle_special_cases() {
        let id = GroupTensor::<f64>::identity(3, 3).unwrap();
        assert_eq!(shuffle_check(&id).max(), 0.0);
        let g = GroupTensor::from_levels(2, 2, vec![1.5, -2.0], vec![0.0; 4], vec![]).unwrap();
        let r = shuffle_check(&g);
        assert_eq!(r.max_abs_level2, 4.0);
        assert_eq!(r.max_abs_level3, 0.0);
    }

    #[test]
    fn dilation_edge_cases() {
        let g = segment_signature(&[0.4, -0.1], 3).unwrap();
        assert_eq!(g.dilate(1.0), g);
        assert!(g.dilate(0.0).is_identity());
    }

    #[test]
    fn log_exp_roundtrip() {
        let incs = vec![vec![0.3, -0.2], vec![-0.5, 0.9], vec![1.1, 0.4], vec![0.2, 0.2]];
        let g = brute_force_signature(&incs, 3);
        let back = g.log().exp();
        assert!(g.max_abs_diff(&back) < 1e-14);
    }

    fn arb_increments(d: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n)
    }

    fn arb_group(d: usize) -> impl Strategy<Value = GroupTensor<f64>> {
        arb_increments(d, 4).prop_map(|incs| brute_force_signature(&incs, 3))
    }

    proptest! {
        #[test]
        fn chen_concatenation_matches_brute_force(incs in arb_increments(3, 8)) {
            let path = path_from_increments(&incs);
            let oracle = brute_force_signature(&incs, 3);
            for order in [ConcatOrder::LeftToRight, ConcatOrder::BalancedTree] {
                let sig = signature_piecewise_linear(&path, 0, 8, 3, order).unwrap();
                prop_assert!(rel_err(&sig, &oracle) < 1e-12);
                prop_assert!(relative_shuffle_residual(&sig) < 1e-12);
            }
        }

        #[test]
        fn product_is_associative(a in arb_group(2), b in arb_group(2), c in arb_group(2)) {
            let left = a.mul(&b).unwrap().mul(&c).unwrap();
            let right = a.mul(&b.mul(&c).unwrap()).unwrap();
            prop_assert!(rel_err(&left, &right) < 1e-12);
            let id = GroupTensor::identity(2, 3).unwrap();
            prop_assert_eq!(&a.mul(&id).unwrap(), &a);
            prop_assert_eq!(&id.mul(&a).unwrap(), &a);
        }

        #[test]
        fn inverse_is_two_sided(g in arb_group(3)) {
            let id = GroupTensor::identity(3, 3).unwrap();
            prop_assert!(rel_err(&g.mul(&g.inverse()).unwrap(), &id) < 1e-12);
            prop_assert!(rel_err(&g.inverse().mul(&g).unwrap(), &id) < 1e-12);
        }

        #[test]
        fn dilation_is_homomorphism(a in arb_group(2), b in arb_group(2), delta in -3.0f64..3.0) {
            let lhs = a.mul(&b).unwrap().dilate(delta);
            let rhs = a.dilate(delta).mul(&b.dilate(delta)).unwrap();
            prop_assert!(rel_err(&lhs, &rhs) < 1e-12);
        }

        #[test]
        fn segments_are_group_like(v in prop::collection::vec(-5.0f64..5.0, 1..5)) {
            let g = segment_signature(&v, 3).unwrap();
            prop_assert!(relative_shuffle_residual(&g) < 1e-14);
        }
    }
}
