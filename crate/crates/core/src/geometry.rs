//! Single-chart Riemannian manifolds, Christoffel symbols and second-order
//! tangent vectors.
//!
//! A [`ChartedManifold`] is one coordinate chart with a metric, optional
//! closed-form Christoffel symbols and curvature, per-coordinate periods and a
//! domain guard. Tensors are small and dense; Christoffel symbols are stored
//! row-major in index order `(k, i, j)` for `Γ^k_{ij}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_len, Error, Result};

/// A coordinate field evaluated at chart points.
pub type Field<T> = Arc<dyn Fn(&[f64]) -> T + Send + Sync>;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Connection coefficients `Γ^k_{ij}` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.data[(k * self.dim + i) * self.dim + j] = value;
    }

    /// Sets `Γ^k_{ij}` and `Γ^k_{ji}` together.
    pub fn set_sym(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.set(k, i, j, value);
        self.set(k, j, i, value);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `Γ^k(u, w) = Γ^k_{ij} u^i w^j`.
    pub fn contract(&self, u: &[f64], w: &[f64]) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(k, i, j) * u[i] * w[j];
                }
            }
            s
        })
    }

    /// `Γ^k_{ij} A^{ij}` for a matrix `A`.
    pub fn contract_matrix(&self, a: &DMatrix<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(k, i, j) * a[(i, j)];
                }
            }
            s
        })
    }

    /// Largest `|Γ^k_{ij} − Γ^k_{ji}|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Anything that can supply Christoffel symbols at a chart point.
pub trait Connection: Send + Sync {
    fn dim(&self) -> usize;
    fn christoffels(&self, x: &[f64]) -> Result<Christoffel>;
}

/// A bare Christoffel field, for connections that are not Levi-Civita of a
/// stored metric.
#[derive(Clone)]
pub struct ChristoffelField {
    dim: usize,
    eval: Field<Result<Christoffel>>,
}

impl ChristoffelField {
    pub fn new(dim: usize, eval: Field<Result<Christoffel>>) -> Self {
        Self { dim, eval }
    }

    pub fn flat(dim: usize) -> Self {
        Self::new(dim, Arc::new(move |_| Ok(Christoffel::zeros(dim))))
    }
}

impl Connection for ChristoffelField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn christoffels(&self, x: &[f64]) -> Result<Christoffel> {
        (self.eval)(x)
    }
}

impl fmt::Debug for ChristoffelField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChristoffelField").field("dim", &self.dim).finish()
    }
}

/// Riemann tensor components `R^l_{kij}`, meaning `R(e_i, e_j) e_k = R^l_{kij} e_l`
/// with `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Riemann {
    dim: usize,
    data: Vec<f64>,
}

impl Riemann {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim.pow(4)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(&self, l: usize, k: usize, i: usize, j: usize) -> usize {
        ((l * self.dim + k) * self.dim + i) * self.dim + j
    }

    #[inline]
    pub fn get(&self, l: usize, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(l, k, i, j)]
    }

    pub fn set(&mut self, l: usize, k: usize, i: usize, j: usize, value: f64) {
        let idx = self.idx(l, k, i, j);
        self.data[idx] = value;
    }

    /// `R(x, y) z`.
    pub fn apply(&self, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for (l, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        s += self.get(l, k, i, j) * x[i] * y[j] * z[k];
                    }
                }
            }
            *o = s;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Riemann) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A second-order tangent vector `L = a_ij D_ij + a_i D_i` in chart coordinates.
///
/// The `second` block is symmetric and stores the full double-sum
/// coefficients, so `D_12` as an operator has `a_12 = a_21 = ½`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderVector {
    pub first: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl SecondOrderVector {
    /// Builds a vector, symmetrizing the second-order block.
    pub fn new(first: DVector<f64>, second: DMatrix<f64>) -> Result<Self> {
        check_len(first.len(), second.nrows())?;
        check_len(first.len(), second.ncols())?;
        let second = (&second + second.transpose()) * 0.5;
        Ok(Self { first, second })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            first: DVector::zeros(dim),
            second: DMatrix::zeros(dim, dim),
        }
    }

    pub fn first_order(first: DVector<f64>) -> Self {
        let n = first.len();
        Self {
            first,
            second: DMatrix::zeros(n, n),
        }
    }

    /// The Schwartz differential `d²X ≈ ΔX^i D_i + ½ ΔX^i ΔX^j D_ij` of one step.
    pub fn from_increment(dx: &[f64]) -> Self {
        let v = DVector::from_column_slice(dx);
        let second = &v * v.transpose() * 0.5;
        Self { first: v, second }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Applies the operator to a function with the given gradient and Hessian.
    pub fn apply(&self, gradient: &DVector<f64>, hessian: &DMatrix<f64>) -> f64 {
        self.first.dot(gradient) + self.second.component_mul(hessian).sum()
    }

    pub fn max_abs_diff(&self, other: &SecondOrderVector) -> f64 {
        let a = (&self.first - &other.first).amax();
        let b = (&self.second - &other.second).amax();
        a.max(b)
    }
}

/// `Q_x(L) = a_ij D_i ⊙ D_j`: the symmetric second-order block of `L`.
pub fn square_operator(l: &SecondOrderVector) -> DMatrix<f64> {
    l.second.clone()
}

/// 2-jet of a smooth map at a point: value, Jacobian `∂F^A/∂x^i` and the
/// Hessians `∂²F^A/∂x^i∂x^j` (one matrix per target component).
#[derive(Clone, Debug)]
pub struct Jet {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub hessian: Vec<DMatrix<f64>>,
}

impl Jet {
    pub fn identity(x: &[f64]) -> Self {
        let n = x.len();
        Self {
            value: DVector::from_column_slice(x),
            jacobian: DMatrix::identity(n, n),
            hessian: vec![DMatrix::zeros(n, n); n],
        }
    }

    pub fn source_dim(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.jacobian.nrows()
    }
}

/// Pushes a second-order vector through a map: `F_*L(f) = L(f∘F)`.
pub fn pushforward_second_order(jet: &Jet, l: &SecondOrderVector) -> Result<SecondOrderVector> {
    check_len(jet.source_dim(), l.dim())?;
    check_len(jet.target_dim(), jet.hessian.len())?;
    let j = &jet.jacobian;
    let second = j * &l.second * j.transpose();
    let mut first = j * &l.first;
    for (a, h) in jet.hessian.iter().enumerate() {
        first[a] += h.component_mul(&l.second).sum();
    }
    SecondOrderVector::new(first, second)
}

/// A Riemannian manifold covered by a single chart.
#[derive(Clone)]
pub struct ChartedManifold {
    name: String,
    dim: usize,
    metric: Field<DMatrix<f64>>,
    christoffels: Option<Field<Christoffel>>,
    riemann: Option<Field<Riemann>>,
    periods: Vec<Option<f64>>,
    guard: Field<bool>,
    sample_box: Vec<(f64, f64)>,
    fd_step: f64,
}

impl fmt::Debug for ChartedManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartedManifold")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("periods", &self.periods)
            .finish()
    }
}

impl ChartedManifold {
    pub fn new(name: impl Into<String>, dim: usize, metric: Field<DMatrix<f64>>) -> Self {
        Self {
            name: name.into(),
            dim,
            metric,
            christoffels: None,
            riemann: None,
            periods: vec![None; dim],
            guard: Arc::new(|_| true),
            sample_box: vec![(-1.0, 1.0); dim],
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_christoffels(mut self, f: Field<Christoffel>) -> Self {
        self.christoffels = Some(f);
        self
    }

    pub fn with_riemann(mut self, f: Field<Riemann>) -> Self {
        self.riemann = Some(f);
        self
    }

    pub fn with_periods(mut self, periods: Vec<Option<f64>>) -> Self {
        assert_eq!(periods.len(), self.dim);
        self.periods = periods;
        self
    }

    pub fn with_guard(mut self, guard: Field<bool>) -> Self {
        self.guard = guard;
        self
    }

    pub fn with_sample_box(mut self, b: Vec<(f64, f64)>) -> Self {
        assert_eq!(b.len(), self.dim);
        self.sample_box = b;
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_closed_form_christoffels(&self) -> bool {
        self.christoffels.is_some()
    }

    pub fn closed_form_riemann(&self, x: &[f64]) -> Option<Riemann> {
        self.riemann.as_ref().map(|f| f(x))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|v| v.is_finite()) && (self.guard)(x)
    }

    /// Maps periodic coordinates into `[0, period)`.
    pub fn wrap(&self, x: &mut [f64]) {
        wrap_periodic(&self.periods, x);
    }

    pub fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        (self.metric)(x)
    }

    pub fn metric_field(&self) -> Field<DMatrix<f64>> {
        self.metric.clone()
    }

    pub fn guard_field(&self) -> Field<bool> {
        self.guard.clone()
    }

    pub fn sample_box(&self) -> &[(f64, f64)] {
        &self.sample_box
    }

    pub fn metric_inverse(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.metric(x);
        invert_spd(&g, x)
    }

    /// Christoffel symbols; the closed form wins when present.
    pub fn christoffels(&self, x: &[f64]) -> Result<Christoffel> {
        match &self.christoffels {
            Some(f) => {
                if !self.contains(x) {
                    return Err(Error::ChartBoundary { point: x.to_vec() });
                }
                Ok(f(x))
            }
            None => levi_civita(self, x, self.fd_step),
        }
    }

    /// Uniform rejection sample from the sample box intersected with the domain.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..10_000 {
            let x: Vec<f64> = self
                .sample_box
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect();
            if self.contains(&x) {
                return Ok(x);
            }
        }
        Err(Error::Precondition(format!(
            "could not sample a point in the domain of {}",
            self.name
        )))
    }
}

impl Connection for ChartedManifold {
    fn dim(&self) -> usize {
        self.dim
    }

    fn christoffels(&self, x: &[f64]) -> Result<Christoffel> {
        ChartedManifold::christoffels(self, x)
    }
}

pub(crate) fn wrap_periodic(periods: &[Option<f64>], x: &mut [f64]) {
    for (v, p) in x.iter_mut().zip(periods) {
        if let Some(p) = p {
            *v = v.rem_euclid(*p);
        }
    }
}

/// `b − a`, using the minimal image for periodic coordinates.
pub(crate) fn periodic_delta(periods: &[Option<f64>], a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..a.len() {
        let mut d = b[i] - a[i];
        if let Some(Some(p)) = periods.get(i) {
            d -= p * (d / p).round();
        }
        out[i] = d;
    }
}

pub(crate) fn invert_spd(g: &DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
    let asym = (g - g.transpose()).amax();
    if asym > 1e-12 * g.amax().max(1.0) {
        return Err(Error::DegenerateMetric {
            point: x.to_vec(),
            reason: "metric is not symmetric".into(),
        });
    }
    let chol = g.clone().cholesky().ok_or_else(|| Error::DegenerateMetric {
        point: x.to_vec(),
        reason: "metric is not positive definite".into(),
    })?;
    Ok(chol.inverse())
}

/// Central-difference derivatives of a vector-valued field.
/// Returns one output vector per coordinate direction.
pub(crate) fn central_diff<F>(f: F, x: &[f64], h: f64) -> Vec<DVector<f64>>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Levi-Civita symbols `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`
/// by central differences of the metric with step `h`.
pub fn levi_civita(man: &ChartedManifold, x: &[f64], h: f64) -> Result<Christoffel> {
    check_len(man.dim(), x.len())?;
    if h <= 0.0 {
        return Err(Error::Precondition("finite-difference step must be positive".into()));
    }
    let n = man.dim();
    let mut xp = x.to_vec();
    // Stencil points must lie in the chart and carry an SPD metric.
    let mut dg = Vec::with_capacity(n);
    for l in 0..n {
        xp[l] = x[l] + h;
        if !man.contains(&xp) {
            return Err(Error::ChartBoundary { point: xp.clone() });
        }
        let gp = man.metric(&xp);
        invert_spd(&gp, &xp)?;
        xp[l] = x[l] - h;
        if !man.contains(&xp) {
            return Err(Error::ChartBoundary { point: xp.clone() });
        }
        let gm = man.metric(&xp);
        invert_spd(&gm, &xp)?;
        xp[l] = x[l];
        dg.push((gp - gm) / (2.0 * h));
    }
    if !man.contains(x) {
        return Err(Error::ChartBoundary { point: x.to_vec() });
    }
    let ginv = man.metric_inverse(x)?;
    let mut gamma = Christoffel::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                }
                gamma.set_sym(k, i, j, 0.5 * s);
            }
        }
    }
    Ok(gamma)
}
