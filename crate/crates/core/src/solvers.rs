//! Controlled differential equations: Young/Euler solves against grid
//! paths, step-k Euler against rough paths, skeleton ODEs and the explicit
//! control that steers the skeleton along a prescribed path.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::path_spaces::{GridPath, RoughPathGrid};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor_algebra::GroupTensor;

/// States whose sup-norm exceeds this are reported as a blow-up.
pub const BLOW_UP_BOUND: f64 = 1e150;

/// Smallest singular value accepted by [`control_from_path`].
pub const ELLIPTICITY_THRESHOLD: f64 = 1e-8;

/// Vector fields `V_0, ..., V_d` on `R^e`; `V_0` is the drift.
///
/// Jacobians are row-major `e x e` with `out[a*e + b] = ∂_b V^a`, Hessians
/// `e x e x e` with `out[(a*e + b)*e + c] = ∂_b ∂_c V^a`. Both default to
/// central finite differences.
pub trait VectorFields<S: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn driver_dim(&self) -> usize;
    fn field(&self, j: usize, y: &[S], out: &mut [S]);

    fn jacobian(&self, j: usize, y: &[S], out: &mut [S]) {
        fd_jacobian(|z, o| self.field(j, z, o), self.state_dim(), y, fd_step::<S>(y, 3), out)
    }

    fn hessian(&self, j: usize, y: &[S], out: &mut [S]) {
        let e = self.state_dim();
        fd_jacobian(|z, o| self.jacobian(j, z, o), e * e, y, fd_step::<S>(y, 4), out);
        // fd_jacobian writes [(a*e+b), c] = ∂_c ∂_b V^a, which is the same layout
    }
}

fn fd_step<S: Scalar>(y: &[S], root: i32) -> S {
    let scale = y.iter().fold(S::one(), |m, v| m.max(v.abs()));
    S::epsilon().powf(S::one() / S::c(root as f64)) * scale
}

/// Central differences of `f: R^e -> R^m`, `out[i*e + b] = ∂_b f_i`.
fn fd_jacobian<S: Scalar>(f: impl Fn(&[S], &mut [S]), m: usize, y: &[S], h: S, out: &mut [S]) {
    let e = y.len();
    let mut z = y.to_vec();
    let (mut fp, mut fm) = (vec![S::zero(); m], vec![S::zero(); m]);
    for b in 0..e {
        z[b] = y[b] + h;
        f(&z, &mut fp);
        z[b] = y[b] - h;
        f(&z, &mut fm);
        z[b] = y[b];
        for i in 0..m {
            out[i * e + b] = (fp[i] - fm[i]) / (h + h);
        }
    }
}

/// `V_j(y) = A_j y + b_j`; covers constant, identity and linear fields.
#[derive(Clone, Debug)]
pub struct AffineFields<S> {
    e: usize,
    d: usize,
    matrices: Vec<Vec<S>>,
    offsets: Vec<Vec<S>>,
}

impl<S: Scalar> AffineFields<S> {
    /// `matrices[j]` row-major `e x e`, `offsets[j]` of length `e`, for `j = 0..=d`.
    pub fn new(e: usize, matrices: Vec<Vec<S>>, offsets: Vec<Vec<S>>) -> Result<Self> {
        if e == 0 || matrices.len() < 2 || matrices.len() != offsets.len() {
            return Err(invalid("affine fields need e >= 1 and d + 1 >= 2 matching matrices and offsets"));
        }
        if matrices.iter().any(|m| m.len() != e * e) || offsets.iter().any(|b| b.len() != e) {
            return Err(shape("affine field blocks have the wrong size"));
        }
        Ok(Self {
            e,
            d: matrices.len() - 1,
            matrices,
            offsets,
        })
    }

    /// `V_0 = drift`, `V_j = columns[j-1]`.
    pub fn constant(drift: Vec<S>, columns: Vec<Vec<S>>) -> Result<Self> {
        let e = drift.len();
        let mut offsets = vec![drift];
        offsets.extend(columns);
        let matrices = vec![vec![S::zero(); e * e]; offsets.len()];
        Self::new(e, matrices, offsets)
    }

    /// `V_j = e_j` for `j = 1..=dim`, zero drift.
    pub fn identity(dim: usize) -> Result<Self> {
        let columns = (0..dim)
            .map(|j| (0..dim).map(|a| if a == j { S::one() } else { S::zero() }).collect())
            .collect();
        Self::constant(vec![S::zero(); dim], columns)
    }

    /// `V_j(y) = A_j y` with zero offsets.
    pub fn linear(e: usize, matrices: Vec<Vec<S>>) -> Result<Self> {
        let offsets = vec![vec![S::zero(); e]; matrices.len()];
        Self::new(e, matrices, offsets)
    }
}

impl<S: Scalar> VectorFields<S> for AffineFields<S> {
    fn state_dim(&self) -> usize {
        self.e
    }
    fn driver_dim(&self) -> usize {
        self.d
    }
    fn field(&self, j: usize, y: &[S], out: &mut [S]) {
        let (m, b) = (&self.matrices[j], &self.offsets[j]);
        for a in 0..self.e {
            out[a] = b[a] + (0..self.e).fold(S::zero(), |s, c| s + m[a * self.e + c] * y[c]);
        }
    }
    fn jacobian(&self, j: usize, _y: &[S], out: &mut [S]) {
        out.copy_from_slice(&self.matrices[j]);
    }
    fn hessian(&self, _j: usize, _y: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|v| *v = S::zero());
    }
}

/// One monomial `coeff · Π_b y_b^{powers[b]}` added to component
/// `component` of field `field`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub field: usize,
    pub component: usize,
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct PolynomialFields<S> {
    e: usize,
    d: usize,
    terms: Vec<(usize, usize, S, Vec<u32>)>,
}

impl<S: Scalar> PolynomialFields<S> {
    pub fn new(e: usize, d: usize, terms: &[PolyTerm]) -> Result<Self> {
        for t in terms {
            if t.field > d || t.component >= e || t.powers.len() != e {
                return Err(shape(format!("polynomial term {t:?} does not fit e = {e}, d = {d}")));
            }
        }
        Ok(Self {
            e,
            d,
            terms: terms
                .iter()
                .map(|t| (t.field, t.component, S::c(t.coeff), t.powers.clone()))
                .collect(),
        })
    }
}

fn monomial<S: Scalar>(y: &[S], powers: &[u32], skip: &[usize]) -> S {
    // derivative of Π y_b^{p_b} with respect to the variables in `skip`
    let mut p: Vec<i64> = powers.iter().map(|&v| v as i64).collect();
    let mut c = S::one();
    for &b in skip {
        if p[b] == 0 {
            return S::zero();
        }
        c *= S::c(p[b] as f64);
        p[b] -= 1;
    }
    y.iter().zip(&p).fold(c, |acc, (v, &k)| acc * v.powi(k as i32))
}

impl<S: Scalar> VectorFields<S> for PolynomialFields<S> {
    fn state_dim(&self) -> usize {
        self.e
    }
    fn driver_dim(&self) -> usize {
        self.d
    }
    fn field(&self, j: usize, y: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|v| *v = S::zero());
        for (f, a, c, p) in &self.terms {
            if *f == j {
                out[*a] += *c * monomial(y, p, &[]);
            }
        }
    }
    fn jacobian(&self, j: usize, y: &[S], out: &mut [S]) {
        let e = self.e;
        out.iter_mut().for_each(|v| *v = S::zero());
        for (f, a, c, p) in &self.terms {
            if *f == j {
                for b in 0..e {
                    out[a * e + b] += *c * monomial(y, p, &[b]);
                }
            }
        }
    }
    fn hessian(&self, j: usize, y: &[S], out: &mut [S]) {
        let e = self.e;
        out.iter_mut().for_each(|v| *v = S::zero());
        for (f, a, c, p) in &self.terms {
            if *f == j {
                for b in 0..e {
                    for k in 0..e {
                        out[(a * e + b) * e + k] += *c * monomial(y, p, &[b, k]);
                    }
                }
            }
        }
    }
}

/// One bounded term `amplitude · sin(⟨frequency, y⟩ + phase) + offset`
/// added to component `component` of field `field`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub field: usize,
    pub component: usize,
    pub amplitude: f64,
    pub frequency: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Debug)]
pub struct TrigFields<S> {
    e: usize,
    d: usize,
    terms: Vec<(usize, usize, S, Vec<S>, S, S)>,
}

impl<S: Scalar> TrigFields<S> {
    pub fn new(e: usize, d: usize, terms: &[TrigTerm]) -> Result<Self> {
        for t in terms {
            if t.field > d || t.component >= e || t.frequency.len() != e {
                return Err(shape(format!("trigonometric term {t:?} does not fit e = {e}, d = {d}")));
            }
        }
        Ok(Self {
            e,
            d,
            terms: terms
                .iter()
                .map(|t| {
                    (
                        t.field,
                        t.component,
                        S::c(t.amplitude),
                        t.frequency.iter().map(|v| S::c(*v)).collect(),
                        S::c(t.phase),
                        S::c(t.offset),
                    )
                })
                .collect(),
        })
    }

    /// Bounded test fields on `R^n` driven by `n` signals:
    /// `V_j^a = δ_{ja}(1 + 0.3 sin y_{a+1}) + 0.2 sin(y_a + y_{a+j} + j)`,
    /// `V_0^a = 0.5 sin y_{a+1}` (indices mod `n`). Elliptic for `n <= 2`.
    pub fn test_fields(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("test fields need n >= 1"));
        }
        let unit = |idx: &[usize]| {
            let mut f = vec![0.0; n];
            for &i in idx {
                f[i % n] += 1.0;
            }
            f
        };
        let mut terms = Vec::new();
        for a in 0..n {
            terms.push(TrigTerm {
                field: 0,
                component: a,
                amplitude: 0.5,
                frequency: unit(&[a + 1]),
                phase: 0.0,
                offset: 0.0,
            });
            for j in 1..=n {
                if j - 1 == a {
                    terms.push(TrigTerm {
                        field: j,
                        component: a,
                        amplitude: 0.3,
                        frequency: unit(&[a + 1]),
                        phase: 0.0,
                        offset: 1.0,
                    });
                }
                terms.push(TrigTerm {
                    field: j,
                    component: a,
                    amplitude: 0.2,
                    frequency: unit(&[a, a + j]),
                    phase: j as f64,
                    offset: 0.0,
                });
            }
        }
        Self::new(n, n, &terms)
    }
}

impl<S: Scalar> VectorFields<S> for TrigFields<S> {
    fn state_dim(&self) -> usize {
        self.e
    }
    fn driver_dim(&self) -> usize {
        self.d
    }
    fn field(&self, j: usize, y: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|v| *v = S::zero());
        for (f, a, amp, w, ph, off) in &self.terms {
            if *f == j {
                let arg = w.iter().zip(y).fold(*ph, |s, (wi, yi)| s + *wi * *yi);
                out[*a] += *amp * arg.sin() + *off;
            }
        }
    }
    fn jacobian(&self, j: usize, y: &[S], out: &mut [S]) {
        let e = self.e;
        out.iter_mut().for_each(|v| *v = S::zero());
        for (f, a, amp, w, ph, _) in &self.terms {
            if *f == j {
                let arg = w.iter().zip(y).fold(*ph, |s, (wi, yi)| s + *wi * *yi);
                let c = *amp * arg.cos();
                for b in 0..e {
                    out[a * e + b] += c * w[b];
                }
            }
        }
    }
    fn hessian(&self, j: usize, y: &[S], out: &mut [S]) {
        let e = self.e;
        out.iter_mut().for_each(|v| *v = S::zero());
        for (f, a, amp, w, ph, _) in &self.terms {
            if *f == j {
                let arg = w.iter().zip(y).fold(*ph, |s, (wi, yi)| s + *wi * *yi);
                let c = -*amp * arg.sin();
                for b in 0..e {
                    for k in 0..e {
                        out[(a * e + b) * e + k] += c * w[b] * w[k];
                    }
                }
            }
        }
    }
}

type FieldFn<S> = dyn Fn(usize, &[S], &mut [S]) + Send + Sync;

/// Fields given by a closure `f(j, y, out)`; derivatives by finite
/// differences.
pub struct FnFields<S> {
    e: usize,
    d: usize,
    f: Box<FieldFn<S>>,
}

impl<S: Scalar> FnFields<S> {
    pub fn new(e: usize, d: usize, f: impl Fn(usize, &[S], &mut [S]) + Send + Sync + 'static) -> Self {
        Self { e, d, f: Box::new(f) }
    }
}

impl<S: Scalar> VectorFields<S> for FnFields<S> {
    fn state_dim(&self) -> usize {
        self.e
    }
    fn driver_dim(&self) -> usize {
        self.d
    }
    fn field(&self, j: usize, y: &[S], out: &mut [S]) {
        (self.f)(j, y, out)
    }
}

/// Declarative description of built-in fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `V_j = e_j`, constant drift (zero if absent).
    Identity {
        dim: usize,
        #[serde(default)]
        drift: Option<Vec<f64>>,
    },
    Constant {
        drift: Vec<f64>,
        columns: Vec<Vec<f64>>,
    },
    /// `V_j(y) = A_j y + b_j`, `matrices[0]` is the drift.
    Linear {
        matrices: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        offsets: Option<Vec<Vec<f64>>>,
    },
    Polynomial {
        state_dim: usize,
        driver_dim: usize,
        terms: Vec<PolyTerm>,
    },
    Trigonometric {
        state_dim: usize,
        driver_dim: usize,
        terms: Vec<TrigTerm>,
    },
    /// Preset bounded trigonometric fields, see [`TrigFields::test_fields`].
    TrigTest { dim: usize },
}

impl FieldSpec {
    pub fn build<S: Scalar>(&self) -> Result<VectorFieldSystem<S>> {
        let c = |v: &[f64]| v.iter().map(|x| S::c(*x)).collect::<Vec<S>>();
        let fields: Arc<dyn VectorFields<S>> = match self {
            FieldSpec::Identity { dim, drift } => {
                let mut f = AffineFields::identity(*dim)?;
                if let Some(b) = drift {
                    if b.len() != *dim {
                        return Err(shape("identity drift has the wrong length"));
                    }
                    f.offsets[0] = c(b);
                }
                Arc::new(f)
            }
            FieldSpec::Constant { drift, columns } => Arc::new(AffineFields::constant(
                c(drift),
                columns.iter().map(|v| c(v)).collect(),
            )?),
            FieldSpec::Linear { matrices, offsets } => {
                let e = matrices.first().map(Vec::len).unwrap_or(0);
                let mut flat = Vec::with_capacity(matrices.len());
                for m in matrices {
                    if m.len() != e || m.iter().any(|r| r.len() != e) {
                        return Err(shape("linear field matrices must all be e x e"));
                    }
                    flat.push(m.iter().flat_map(|r| c(r)).collect());
                }
                let offs = match offsets {
                    Some(o) => o.iter().map(|v| c(v)).collect(),
                    None => vec![vec![S::zero(); e]; matrices.len()],
                };
                Arc::new(AffineFields::new(e, flat, offs)?)
            }
            FieldSpec::Polynomial {
                state_dim,
                driver_dim,
                terms,
            } => Arc::new(PolynomialFields::new(*state_dim, *driver_dim, terms)?),
            FieldSpec::Trigonometric {
                state_dim,
                driver_dim,
                terms,
            } => Arc::new(TrigFields::new(*state_dim, *driver_dim, terms)?),
            FieldSpec::TrigTest { dim } => Arc::new(TrigFields::test_fields(*dim)?),
        };
        VectorFieldSystem::new(fields)
    }
}

/// Vector fields that passed the derivative consistency check, with the
/// regularity class declared by the user (recorded, not verified).
#[derive(Clone)]
pub struct VectorFieldSystem<S> {
    fields: Arc<dyn VectorFields<S>>,
    pub declared_class: Option<String>,
}

impl<S: Scalar> std::fmt::Debug for VectorFieldSystem<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldSystem")
            .field("state_dim", &self.state_dim())
            .field("driver_dim", &self.driver_dim())
            .field("declared_class", &self.declared_class)
            .finish()
    }
}

/// Relative tolerance of the derivative consistency check.
pub fn derivative_tolerance<S: Scalar>() -> f64 {
    1e-4f64.max(10.0 * S::epsilon().f64().sqrt())
}

impl<S: Scalar> VectorFieldSystem<S> {
    pub fn new(fields: Arc<dyn VectorFields<S>>) -> Result<Self> {
        if fields.state_dim() == 0 || fields.driver_dim() == 0 {
            return Err(invalid("vector fields need positive state and driver dimensions"));
        }
        let sys = Self {
            fields,
            declared_class: None,
        };
        sys.check_derivatives()?;
        Ok(sys)
    }

    pub fn from_fields(fields: impl VectorFields<S> + 'static) -> Result<Self> {
        Self::new(Arc::new(fields))
    }

    pub fn with_declared_class(mut self, class: impl Into<String>) -> Self {
        self.declared_class = Some(class.into());
        self
    }

    pub fn state_dim(&self) -> usize {
        self.fields.state_dim()
    }

    pub fn driver_dim(&self) -> usize {
        self.fields.driver_dim()
    }

    pub fn field(&self, j: usize, y: &[S], out: &mut [S]) {
        self.fields.field(j, y, out)
    }

    pub fn jacobian(&self, j: usize, y: &[S], out: &mut [S]) {
        self.fields.jacobian(j, y, out)
    }

    pub fn hessian(&self, j: usize, y: &[S], out: &mut [S]) {
        self.fields.hessian(j, y, out)
    }

    /// Compare directional derivatives with central differences at random
    /// states in `[-2, 2]^e`.
    fn check_derivatives(&self) -> Result<()> {
        let e = self.state_dim();
        let tol = derivative_tolerance::<S>();
        let mut rng = rng::stream(0x5eed, 0);
        let (mut jac, mut hes) = (vec![S::zero(); e * e], vec![S::zero(); e * e * e]);
        let (mut fp, mut fm) = (vec![S::zero(); e], vec![S::zero(); e]);
        let (mut jp, mut jm) = (vec![S::zero(); e * e], vec![S::zero(); e * e]);
        for _ in 0..8 {
            let y: Vec<S> = (0..e).map(|_| S::c(rng.random_range(-2.0..2.0))).collect();
            let mut v: Vec<S> = (0..e).map(|_| S::c(rng.random_range(-1.0..1.0))).collect();
            let nv = v.iter().fold(S::zero(), |a, x| a + *x * *x).sqrt().max(S::c(1e-3));
            v.iter_mut().for_each(|x| *x /= nv);
            let h = fd_step::<S>(&y, 3);
            let shifted = |sign: S| -> Vec<S> { y.iter().zip(&v).map(|(a, b)| *a + sign * h * *b).collect() };
            let (yp, ym) = (shifted(S::one()), shifted(-S::one()));
            for j in 0..=self.driver_dim() {
                self.field(j, &y, &mut fp);
                if fp.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical(format!("field {j} is not finite at {y:?}")));
                }
                self.jacobian(j, &y, &mut jac);
                self.field(j, &yp, &mut fp);
                self.field(j, &ym, &mut fm);
                for a in 0..e {
                    let analytic = (0..e).fold(S::zero(), |s, b| s + jac[a * e + b] * v[b]).f64();
                    let fd = ((fp[a] - fm[a]) / (h + h)).f64();
                    if (analytic - fd).abs() > tol * (1.0 + fd.abs()) {
                        return Err(Error::Numerical(format!(
                            "Jacobian of field {j} inconsistent: {analytic} vs finite difference {fd}"
                        )));
                    }
                }
                self.hessian(j, &y, &mut hes);
                self.jacobian(j, &yp, &mut jp);
                self.jacobian(j, &ym, &mut jm);
                for ab in 0..e * e {
                    let analytic = (0..e).fold(S::zero(), |s, c| s + hes[ab * e + c] * v[c]).f64();
                    let fd = ((jp[ab] - jm[ab]) / (h + h)).f64();
                    if (analytic - fd).abs() > tol * (1.0 + fd.abs()) {
                        return Err(Error::Numerical(format!(
                            "Hessian of field {j} inconsistent: {analytic} vs finite difference {fd}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `𝐕(z) = [V_1(z) | ... | V_d(z)]` as an `e x d` matrix.
    pub fn diffusion_matrix(&self, z: &[S]) -> DMatrix<f64> {
        let (e, d) = (self.state_dim(), self.driver_dim());
        let mut col = vec![S::zero(); e];
        let mut m = DMatrix::zeros(e, d);
        for j in 1..=d {
            self.field(j, z, &mut col);
            for a in 0..e {
                m[(a, j - 1)] = col[a].f64();
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Left-point Euler against the grid increments.
    Euler,
    /// Classical Runge–Kutta on each linear segment of the driver.
    SegmentRk4,
    /// Step-2 Euler on a rough path.
    StepTwo,
    /// Step-3 Euler on a rough path.
    StepThree,
}

/// Solution on the driver's grid with solver metadata.
#[derive(Clone, Debug)]
pub struct SolutionPath<S> {
    pub path: GridPath<S>,
    pub scheme: Scheme,
    pub level: u32,
    /// `max |y^L - y^{L-1}|` over the coarse grid, when computed.
    pub error_estimate: Option<S>,
}

impl<S: Scalar> SolutionPath<S> {
    pub fn terminal(&self) -> &[S] {
        self.path.end()
    }
}

fn check_state<S: Scalar>(sys: &VectorFieldSystem<S>, a: &[S]) -> Result<()> {
    if a.len() != sys.state_dim() {
        return Err(shape(format!(
            "initial state has length {}, fields act on R^{}",
            a.len(),
            sys.state_dim()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("initial state must be finite"));
    }
    Ok(())
}

fn check_finite<S: Scalar>(y: &[S], index: usize) -> Result<()> {
    if y.iter().any(|v| !v.is_finite() || v.abs().f64() > BLOW_UP_BOUND) {
        return Err(Error::BlowUp { index });
    }
    Ok(())
}

/// Two-grid error: compare with the solve on every second grid point.
fn two_grid<S: Scalar>(fine: &GridPath<S>, coarse: &GridPath<S>) -> S {
    let mut err = S::zero();
    for i in 0..=coarse.n_intervals() {
        for (p, q) in fine.value(2 * i).iter().zip(coarse.value(i)) {
            err = err.max((*p - *q).abs());
        }
    }
    err
}

/// Left-point Euler `y_{i+1} = y_i + Σ_j V_j(y_i) Δw^j + β V_0(y_i) Δt`
/// with a two-grid error estimate.
pub fn solve_young<S: Scalar>(
    sys: &VectorFieldSystem<S>,
    driver: &GridPath<S>,
    a: &[S],
    beta: S,
) -> Result<SolutionPath<S>> {
    solve_grid(sys, driver, a, beta, Scheme::Euler, true)
}

/// Skeleton ODE `dψ = Σ_j V_j(ψ) dh^j + β_0 V_0(ψ) dt` on the piecewise-linear
/// interpolant of `h`, by RK4 on each grid segment.
pub fn solve_skeleton<S: Scalar>(
    sys: &VectorFieldSystem<S>,
    h: &GridPath<S>,
    a: &[S],
    beta0: S,
) -> Result<SolutionPath<S>> {
    solve_grid(sys, h, a, beta0, Scheme::SegmentRk4, true)
}

/// Grid solve with an explicit scheme choice (`Euler` or `SegmentRk4`).
pub fn solve_grid<S: Scalar>(
    sys: &VectorFieldSystem<S>,
    driver: &GridPath<S>,
    a: &[S],
    beta: S,
    scheme: Scheme,
    error_estimate: bool,
) -> Result<SolutionPath<S>> {
    check_state(sys, a)?;
    if driver.dim() != sys.driver_dim() {
        return Err(shape(format!(
            "driver has dimension {}, fields expect {}",
            driver.dim(),
            sys.driver_dim()
        )));
    }
    let path = match scheme {
        Scheme::Euler => euler_path(sys, driver, a, beta)?,
        Scheme::SegmentRk4 => rk4_path(sys, driver, a, beta)?,
        _ => return Err(invalid("grid drivers support the euler and segment_rk4 schemes")),
    };
    let err = if error_estimate && driver.level() > 0 {
        let coarse = solve_grid(sys, &driver.subsample(driver.level() - 1)?, a, beta, scheme, false)?;
        Some(two_grid(&path, &coarse.path))
    } else {
        None
    };
    Ok(SolutionPath {
        path,
        scheme,
        level: driver.level(),
        error_estimate: err,
    })
}

fn euler_path<S: Scalar>(sys: &VectorFieldSystem<S>, w: &GridPath<S>, a: &[S], beta: S) -> Result<GridPath<S>> {
    let (e, d, n) = (sys.state_dim(), sys.driver_dim(), w.n_intervals());
    let dt = w.step();
    let mut values = Vec::with_capacity((n + 1) * e);
    values.extend_from_slice(a);
    let mut y = a.to_vec();
    let mut v = vec![S::zero(); e];
    let mut dw = vec![S::zero(); d];
    for i in 0..n {
        w.increment_into(i, i + 1, &mut dw);
        let mut dy = vec![S::zero(); e];
        sys.field(0, &y, &mut v);
        for k in 0..e {
            dy[k] = beta * dt * v[k];
        }
        for j in 1..=d {
            sys.field(j, &y, &mut v);
            for k in 0..e {
                dy[k] += v[k] * dw[j - 1];
            }
        }
        for k in 0..e {
            y[k] += dy[k];
        }
        check_finite(&y, i + 1)?;
        values.extend_from_slice(&y);
    }
    GridPath::new(e, w.horizon(), w.level(), values)
}

fn rk4_path<S: Scalar>(sys: &VectorFieldSystem<S>, w: &GridPath<S>, a: &[S], beta: S) -> Result<GridPath<S>> {
    let (e, d, n) = (sys.state_dim(), sys.driver_dim(), w.n_intervals());
    let dt = w.step();
    let mut values = Vec::with_capacity((n + 1) * e);
    values.extend_from_slice(a);
    let mut y = a.to_vec();
    let mut dw = vec![S::zero(); d];
    let mut v = vec![S::zero(); e];
    // increment of y per unit of segment parameter θ ∈ [0, 1]
    let rhs = |y: &[S], dw: &[S], out: &mut [S], v: &mut [S]| {
        sys.field(0, y, v);
        for k in 0..e {
            out[k] = beta * dt * v[k];
        }
        for j in 1..=d {
            sys.field(j, y, v);
            for k in 0..e {
                out[k] += v[k] * dw[j - 1];
            }
        }
    };
    let half = S::c(0.5);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![S::zero(); e], vec![S::zero(); e], vec![S::zero(); e], vec![S::zero(); e]);
    let mut tmp = vec![S::zero(); e];
    for i in 0..n {
        w.increment_into(i, i + 1, &mut dw);
        rhs(&y, &dw, &mut k1, &mut v);
        for k in 0..e {
            tmp[k] = y[k] + half * k1[k];
        }
        rhs(&tmp, &dw, &mut k2, &mut v);
        for k in 0..e {
            tmp[k] = y[k] + half * k2[k];
        }
        rhs(&tmp, &dw, &mut k3, &mut v);
        for k in 0..e {
            tmp[k] = y[k] + k3[k];
        }
        rhs(&tmp, &dw, &mut k4, &mut v);
        for k in 0..e {
            y[k] += (k1[k] + S::c(2.0) * (k2[k] + k3[k]) + k4[k]) / S::c(6.0);
        }
        check_finite(&y, i + 1)?;
        values.extend_from_slice(&y);
    }
    GridPath::new(e, w.horizon(), w.level(), values)
}

/// Step-k Euler for `dy = Σ_j V_j(y) dX^j + β V_0(y) dt` with `k` the
/// degree of `driver`. The drift enters as coordinate 0 of the driver
/// augmented by `βt`; each cell becomes `exp(βΔt e_0 + log g)`.
pub fn solve_rde<S: Scalar>(
    sys: &VectorFieldSystem<S>,
    driver: &RoughPathGrid<S>,
    a: &[S],
    beta: S,
) -> Result<SolutionPath<S>> {
    solve_rde_impl(sys, driver, a, beta, true)
}

/// The scaled equation with driver `εW`: identical to [`solve_rde`] on
/// `dilation(W, ε)`.
pub fn solve_rde_scaled<S: Scalar>(
    sys: &VectorFieldSystem<S>,
    driver: &RoughPathGrid<S>,
    epsilon: S,
    a: &[S],
    beta: S,
) -> Result<SolutionPath<S>> {
    solve_rde(sys, &driver.dilate(epsilon), a, beta)
}

fn solve_rde_impl<S: Scalar>(
    sys: &VectorFieldSystem<S>,
    driver: &RoughPathGrid<S>,
    a: &[S],
    beta: S,
    error_estimate: bool,
) -> Result<SolutionPath<S>> {
    check_state(sys, a)?;
    let degree = driver.degree();
    if !(2..=3).contains(&degree) {
        return Err(invalid(format!(
            "step-k Euler needs a rough path of degree 2 or 3, got {degree}"
        )));
    }
    if driver.dim() != sys.driver_dim() {
        return Err(shape(format!(
            "driver has dimension {}, fields expect {}",
            driver.dim(),
            sys.driver_dim()
        )));
    }
    let (e, d, n) = (sys.state_dim(), sys.driver_dim(), driver.n_intervals());
    let m = d + 1;
    let dt = driver.step();
    let mut values = Vec::with_capacity((n + 1) * e);
    values.extend_from_slice(a);
    let mut y = a.to_vec();
    let mut u = vec![S::zero(); m * e]; // U_a(y)
    let mut jac = vec![S::zero(); m * e * e]; // ∇U_a(y)
    let mut hes = vec![S::zero(); if degree == 3 { m * e * e * e } else { 0 }];
    let mut g_ab = vec![S::zero(); m * m * e]; // ∇U_b U_a
    for (i, cell) in driver.cells().iter().enumerate() {
        let mut lie = cell.log().embed(m, 1);
        lie.level1_mut()[0] = beta * dt;
        let x: GroupTensor<S> = lie.exp();
        for aa in 0..m {
            sys.field(aa, &y, &mut u[aa * e..(aa + 1) * e]);
            sys.jacobian(aa, &y, &mut jac[aa * e * e..(aa + 1) * e * e]);
            if degree == 3 {
                sys.hessian(aa, &y, &mut hes[aa * e * e * e..(aa + 1) * e * e * e]);
            }
        }
        let mut dy = vec![S::zero(); e];
        let x1 = x.level1();
        for aa in 0..m {
            for k in 0..e {
                dy[k] += u[aa * e + k] * x1[aa];
            }
        }
        let x2 = x.level2();
        for aa in 0..m {
            for b in 0..m {
                let jb = &jac[b * e * e..(b + 1) * e * e];
                let ua = &u[aa * e..(aa + 1) * e];
                let out = &mut g_ab[(aa * m + b) * e..(aa * m + b + 1) * e];
                for k in 0..e {
                    out[k] = (0..e).fold(S::zero(), |s, c| s + jb[k * e + c] * ua[c]);
                    dy[k] += out[k] * x2[aa * m + b];
                }
            }
        }
        if degree == 3 {
            let x3 = x.level3();
            for aa in 0..m {
                for b in 0..m {
                    let gab = &g_ab[(aa * m + b) * e..(aa * m + b + 1) * e];
                    let (ua, ub) = (&u[aa * e..(aa + 1) * e], &u[b * e..(b + 1) * e]);
                    for c in 0..m {
                        let coeff = x3[(aa * m + b) * m + c];
                        if coeff == S::zero() {
                            continue;
                        }
                        let jc = &jac[c * e * e..(c + 1) * e * e];
                        let hc = &hes[c * e * e * e..(c + 1) * e * e * e];
                        for k in 0..e {
                            let mut t = S::zero();
                            for p in 0..e {
                                t += jc[k * e + p] * gab[p];
                                for q in 0..e {
                                    t += hc[(k * e + p) * e + q] * ub[p] * ua[q];
                                }
                            }
                            dy[k] += t * coeff;
                        }
                    }
                }
            }
        }
        for k in 0..e {
            y[k] += dy[k];
        }
        check_finite(&y, i + 1)?;
        values.extend_from_slice(&y);
    }
    let path = GridPath::new(e, driver.horizon(), driver.level(), values)?;
    let err = if error_estimate && driver.level() > 0 {
        let coarse = solve_rde_impl(sys, &driver.coarsen()?, a, beta, false)?;
        Some(two_grid(&path, &coarse.path))
    } else {
        None
    };
    Ok(SolutionPath {
        path,
        scheme: if degree == 2 { Scheme::StepTwo } else { Scheme::StepThree },
        level: driver.level(),
        error_estimate: err,
    })
}

/// Rank and smallest singular value of `𝐕(z)`.
pub fn ellipticity_check<S: Scalar>(sys: &VectorFieldSystem<S>, z: &[S]) -> (usize, f64) {
    let m = sys.diffusion_matrix(z);
    let sv = m.singular_values();
    let e = sys.state_dim();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = max * f64::EPSILON * (e.max(sys.driver_dim()) as f64) * 16.0;
    let rank = sv.iter().filter(|s| **s > tol).count();
    // fewer columns than rows: the missing singular values are zero
    let sigma_min = if sys.driver_dim() < e {
        0.0
    } else {
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    };
    (rank, sigma_min)
}

/// Control `h` with `h_0 = 0` and `h' = 𝐕ᵀ(𝐕𝐕ᵀ)^{-1}(φ' - β V_0(φ))`, using
/// centred differences for `φ'` (one-sided at the ends) and trapezoidal
/// accumulation.
pub fn control_from_path<S: Scalar>(sys: &VectorFieldSystem<S>, phi: &GridPath<S>, beta: S) -> Result<GridPath<S>> {
    let (e, d, n) = (sys.state_dim(), sys.driver_dim(), phi.n_intervals());
    if phi.dim() != e {
        return Err(shape(format!("path has dimension {}, fields act on R^{e}", phi.dim())));
    }
    if n < 2 {
        return Err(invalid("control construction needs at least two grid intervals"));
    }
    let dt = phi.step().f64();
    let mut v0 = vec![S::zero(); e];
    let mut hdot: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let (lo, hi) = match i {
            0 => (0, 1),
            i if i == n => (n - 1, n),
            i => (i - 1, i + 1),
        };
        let y = phi.value(i);
        let (rank, sigma_min) = ellipticity_check(sys, y);
        if rank < e || sigma_min < ELLIPTICITY_THRESHOLD {
            return Err(Error::Ellipticity {
                time: phi.time(i).f64(),
                sigma_min,
            });
        }
        let vm = sys.diffusion_matrix(y);
        sys.field(0, y, &mut v0);
        let span = (hi - lo) as f64 * dt;
        let rhs = DVector::from_fn(e, |k, _| {
            (phi.value(hi)[k] - phi.value(lo)[k]).f64() / span - beta.f64() * v0[k].f64()
        });
        let gram = &vm * vm.transpose();
        let sol = gram
            .cholesky()
            .ok_or_else(|| Error::Ellipticity {
                time: phi.time(i).f64(),
                sigma_min,
            })?
            .solve(&rhs);
        hdot.push(vm.transpose() * sol);
    }
    let mut values = vec![S::zero(); (n + 1) * d];
    let mut acc = DVector::<f64>::zeros(d);
    for i in 0..n {
        acc += (&hdot[i] + &hdot[i + 1]) * (0.5 * dt);
        for j in 0..d {
            values[(i + 1) * d + j] = S::c(acc[j]);
        }
    }
    GridPath::new(d, phi.horizon(), phi.level(), values)
}
