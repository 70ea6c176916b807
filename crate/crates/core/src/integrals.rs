//! Integrals along discretized paths: second-order forms, quadratic forms,
//! connection Itô integrals of 1-forms, and vertical Itô and Stratonovich
//! integrals of vertical forms. All coefficient fields are evaluated at the
//! left endpoint of each step unless stated otherwise.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::geometry::{Connection, Field, SecondOrderVector};
use crate::paths::{SamplePath, TimeGrid};
use crate::submersion::{AdaptedSubmersion, VerticalData, VerticalForm};

/// Running values of a real integral; `values[0] = 0` and values stay
/// constant after `alive_until`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealPath {
    grid: TimeGrid,
    values: Vec<f64>,
    alive_until: usize,
}

impl RealPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, alive_until: usize) -> Self {
        assert_eq!(values.len(), grid.n_steps + 1);
        Self {
            grid,
            values,
            alive_until,
        }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        let n = grid.n_steps;
        Self::new(grid, vec![0.0; n + 1], n)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, n: usize) -> f64 {
        self.values[n]
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.grid.n_steps]
    }

    pub fn alive_until(&self) -> usize {
        self.alive_until
    }

    pub fn is_complete(&self) -> bool {
        self.alive_until == self.grid.n_steps
    }

    fn zip(&self, other: &RealPath, f: impl Fn(f64, f64) -> f64) -> RealPath {
        assert_eq!(self.values.len(), other.values.len());
        RealPath {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
            alive_until: self.alive_until.min(other.alive_until),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(&self, other: &RealPath) -> RealPath {
        self.zip(other, |a, b| a + b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(&self, other: &RealPath) -> RealPath {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> RealPath {
        RealPath {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
            alive_until: self.alive_until,
        }
    }
}

/// Accumulates `step(n, X_n, ΔX_n)` over the alive part of a path. A
/// chart-boundary error from `step` truncates the result at that index.
pub(crate) fn accumulate<F>(x: &SamplePath, mut step: F) -> Result<RealPath>
where
    F: FnMut(&[f64], &[f64], &[f64]) -> Result<f64>,
{
    let n_steps = x.grid().n_steps;
    let mut values = vec![0.0; n_steps + 1];
    let mut dx = vec![0.0; x.dim()];
    let mut acc = 0.0;
    let mut alive = x.alive_until();
    for n in 0..x.alive_until() {
        x.increment(n, &mut dx);
        match step(x.point(n), x.point(n + 1), &dx) {
            Ok(s) => acc += s,
            Err(Error::ChartBoundary { .. }) => {
                alive = n;
                for v in values.iter_mut().skip(n + 1) {
                    *v = acc;
                }
                return Ok(RealPath::new(x.grid().clone(), values, alive));
            }
            Err(e) => return Err(e),
        }
        values[n + 1] = acc;
    }
    for v in values.iter_mut().skip(alive + 1) {
        *v = acc;
    }
    Ok(RealPath::new(x.grid().clone(), values, alive))
}

/// `Θ = Θ_i d²x^i + Θ_ij dx^i·dx^j`.
#[derive(Clone)]
pub struct SecondOrderForm {
    dim: usize,
    eval: Field<(DVector<f64>, DMatrix<f64>)>,
}

impl fmt::Debug for SecondOrderForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecondOrderForm").field("dim", &self.dim).finish()
    }
}

impl SecondOrderForm {
    pub fn new(dim: usize, eval: Field<(DVector<f64>, DMatrix<f64>)>) -> Self {
        Self { dim, eval }
    }

    /// `d²f`: `Θ_i = ∂_i f`, `Θ_ij = ½ ∂_i∂_j f`.
    pub fn d2(dim: usize, gradient: Field<DVector<f64>>, hessian: Field<DMatrix<f64>>) -> Self {
        Self::new(dim, Arc::new(move |x| (gradient(x), hessian(x) * 0.5)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        (self.eval)(x)
    }
}

/// `b = b_ij dx^i ⊗ dx^j`, not necessarily symmetric.
#[derive(Clone)]
pub struct QuadraticForm {
    dim: usize,
    eval: Field<DMatrix<f64>>,
}

impl fmt::Debug for QuadraticForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticForm").field("dim", &self.dim).finish()
    }
}

impl QuadraticForm {
    pub fn new(dim: usize, eval: Field<DMatrix<f64>>) -> Self {
        Self { dim, eval }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        (self.eval)(x)
    }
}

/// A 1-form `θ = θ_k dx^k`.
#[derive(Clone)]
pub struct OneForm {
    dim: usize,
    eval: Field<DVector<f64>>,
}

impl fmt::Debug for OneForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OneForm").field("dim", &self.dim).finish()
    }
}

impl OneForm {
    pub fn new(dim: usize, eval: Field<DVector<f64>>) -> Self {
        Self { dim, eval }
    }

    /// `dx^k`.
    pub fn coordinate(dim: usize, k: usize) -> Self {
        let mut e = DVector::zeros(dim);
        e[k] = 1.0;
        Self::new(dim, Arc::new(move |_| e.clone()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        (self.eval)(x)
    }
}

/// `∫Θ d²X ≈ Σ Θ_i(X_n)ΔX^i + Θ_ij(X_n)ΔX^iΔX^j`.
pub fn integrate_second_order(theta: &SecondOrderForm, x: &SamplePath) -> Result<RealPath> {
    check_len(theta.dim, x.dim())?;
    accumulate(x, |p, _, dx| {
        let (t1, t2) = theta.eval(p);
        let v = DVector::from_column_slice(dx);
        Ok(t1.dot(&v) + (&t2 * &v).dot(&v))
    })
}

/// `∫b(dX, dX) ≈ Σ b_ij(X_n)ΔX^iΔX^j`.
pub fn integrate_quadratic(b: &QuadraticForm, x: &SamplePath) -> Result<RealPath> {
    check_len(b.dim, x.dim())?;
    accumulate(x, |p, _, dx| {
        let v = DVector::from_column_slice(dx);
        Ok((b.eval(p) * &v).dot(&v))
    })
}

/// `∫θ d^∇X ≈ Σ θ_k(X_n)(ΔX^k + ½Γ^k_{ij}(X_n)ΔX^iΔX^j)`.
pub fn ito_integral(theta: &OneForm, conn: &dyn Connection, x: &SamplePath) -> Result<RealPath> {
    check_len(theta.dim, x.dim())?;
    check_len(conn.dim(), x.dim())?;
    accumulate(x, |p, _, dx| {
        let t = theta.eval(p);
        let g = conn.christoffels(p)?;
        let corr = g.contract(dx, dx);
        Ok((0..dx.len()).map(|k| t[k] * (dx[k] + 0.5 * corr[k])).sum())
    })
}

fn check_vertical(theta: &VerticalForm, sub: &AdaptedSubmersion, x: &SamplePath) -> Result<()> {
    check_len(sub.fiber_dim(), theta.fiber_dim())?;
    check_len(sub.total_dim(), x.dim())
}

/// One step of the vertical Itô integral: `c(X_n) · V(ΔX, ½ΔXΔXᵀ)`.
pub(crate) fn vertical_ito_step(data: &VerticalData, c: &DVector<f64>, dx: &[f64]) -> f64 {
    c.dot(&data.functional(&SecondOrderVector::from_increment(dx)))
}

/// `∫θ d^vX`: the vertical Itô integral with left-point coefficients,
/// `Σ c_α [ (P_vΔX)^α + ½∂_B N^α_j ΔX^BΔX^j + ½Γ^{v,α}_{Rγ} ΔX^R (P_vΔX)^γ ]`.
/// With the coordinate projector this is
/// `Σ θ_α(ΔX^α + ½Γ^{v,α}_{βγ}ΔX^βΔX^γ + ½Γ^{v,α}_{βj}ΔX^βΔX^j)`.
pub fn vertical_ito_integral(theta: &VerticalForm, sub: &AdaptedSubmersion, x: &SamplePath) -> Result<RealPath> {
    check_vertical(theta, sub, x)?;
    accumulate(x, |p, _, dx| {
        let data = sub.vertical_data(p)?;
        Ok(vertical_ito_step(&data, &theta.coefficients(p), dx))
    })
}

/// `∫θ δ^vX` in Itô form: `Σ θ_A ΔX^A + ½ ∂_Bθ_C ΔX^BΔX^C` with `θ = c ∘ P_v`
/// and left-point coefficients.
pub fn vertical_stratonovich_integral(
    theta: &VerticalForm,
    sub: &AdaptedSubmersion,
    x: &SamplePath,
) -> Result<RealPath> {
    check_vertical(theta, sub, x)?;
    let m = sub.base_dim();
    let k = sub.fiber_dim();
    let n = m + k;
    accumulate(x, |p, _, dx| {
        if !sub.contains(p) {
            return Err(Error::ChartBoundary { point: p.to_vec() });
        }
        let pv = sub.projector(p);
        let dpv = sub.projector_derivatives(p);
        let c = theta.coefficients(p);
        let dc = theta.derivative(p);
        let mut s = 0.0;
        // θ_C ΔX^C
        for a in 0..k {
            let vert: f64 = (0..n).map(|col| pv[(m + a, col)] * dx[col]).sum();
            s += c[a] * vert;
            // ½ ∂_B c_α ΔX^B (P_vΔX)^α
            let dcb: f64 = (0..n).map(|b| dc[(a, b)] * dx[b]).sum();
            s += 0.5 * dcb * vert;
            // ½ c_α ∂_B (P_v)^α_C ΔX^B ΔX^C
            for (b, d) in dpv.iter().enumerate() {
                let row: f64 = (0..n).map(|col| d[(m + a, col)] * dx[col]).sum();
                s += 0.5 * c[a] * dx[b] * row;
            }
        }
        Ok(s)
    })
}

/// `∫θ δ^vX` by trapezoidal sums `Σ ½(θ(X_n) + θ(X_{n+1}))·ΔX`.
pub fn vertical_stratonovich_trapezoid(
    theta: &VerticalForm,
    sub: &AdaptedSubmersion,
    x: &SamplePath,
) -> Result<RealPath> {
    check_vertical(theta, sub, x)?;
    let m = sub.base_dim();
    accumulate(x, |p, q, dx| {
        if !sub.contains(p) || !sub.contains(q) {
            return Err(Error::ChartBoundary { point: p.to_vec() });
        }
        // Evaluate the right endpoint next to the left one, not across a wrap.
        let q: Vec<f64> = p.iter().zip(dx).map(|(a, d)| a + d).collect();
        let covector = |r: &[f64]| {
            let pv = sub.projector(r);
            let c = theta.coefficients(r);
            DVector::from_fn(dx.len(), |col, _| (0..c.len()).map(|a| c[a] * pv[(m + a, col)]).sum())
        };
        let v = DVector::from_column_slice(dx);
        Ok(0.5 * (covector(p) + covector(&q)).dot(&v))
    })
}

/// `½∫∇^vθ(dX, 𝐯dX)` with `∇^vθ(A, W) = A^R W^γ (∂_R c_γ − c_α Γ^{v,α}_{Rγ})`
/// and `W = P_v ΔX`.
pub fn vertical_covariant_correction(
    theta: &VerticalForm,
    sub: &AdaptedSubmersion,
    x: &SamplePath,
) -> Result<RealPath> {
    check_vertical(theta, sub, x)?;
    let k = sub.fiber_dim();
    let n = sub.total_dim();
    accumulate(x, |p, _, dx| {
        let data = sub.vertical_data(p)?;
        let c = theta.coefficients(p);
        let dc = theta.derivative(p);
        let w = data.vertical_part(dx);
        let mut s = 0.0;
        for r in 0..n {
            for g in 0..k {
                let mut coef = dc[(g, r)];
                for a in 0..k {
                    coef -= c[a] * data.christoffels.mixed(a, r, g);
                }
                s += dx[r] * w[g] * coef;
            }
        }
        Ok(0.5 * s)
    })
}

/// `∫θ δ^vX − ∫θ d^vX − ½∫∇^vθ(dX, 𝐯dX)` with the Stratonovich side taken by
/// trapezoidal sums; tends to zero with the step size.
pub fn conversion_residual(theta: &VerticalForm, sub: &AdaptedSubmersion, x: &SamplePath) -> Result<RealPath> {
    let strat = vertical_stratonovich_trapezoid(theta, sub, x)?;
    let ito = vertical_ito_integral(theta, sub, x)?;
    let corr = vertical_covariant_correction(theta, sub, x)?;
    Ok(strat.sub(&ito).sub(&corr))
}
