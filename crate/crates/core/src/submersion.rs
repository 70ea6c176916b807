//! Submersions `π: E → M` in adapted charts `(x¹..xᵐ, v¹..vᵏ)` with `π(x, v) = x`.
//!
//! Index convention: `0..m` are base indices, `m..m+k` are fiber indices.
//! The vertical projector `P_v` is part of the datum. Its kernel is the
//! horizontal complement; its base columns `N^α_j = (P_v)^{m+α}_j` measure how
//! far that complement is from the coordinate-horizontal one.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::geometry::{
    central_diff, ChartedManifold, Christoffel, Connection, Field, SecondOrderVector, DEFAULT_FD_STEP,
};

/// A submersion in an adapted chart together with an ambient symmetric
/// connection and a vertical projector.
#[derive(Clone)]
pub struct AdaptedSubmersion {
    base: ChartedManifold,
    fiber_dim: usize,
    connection: Arc<dyn Connection>,
    projector: Field<DMatrix<f64>>,
    fiber_periods: Vec<Option<f64>>,
    fiber_guard: Field<bool>,
    fiber_box: Vec<(f64, f64)>,
    fd_step: f64,
}

impl fmt::Debug for AdaptedSubmersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdaptedSubmersion")
            .field("base", &self.base.name())
            .field("fiber_dim", &self.fiber_dim)
            .finish()
    }
}

impl AdaptedSubmersion {
    pub fn new(
        base: ChartedManifold,
        fiber_dim: usize,
        connection: Arc<dyn Connection>,
        projector: Field<DMatrix<f64>>,
    ) -> Self {
        assert_eq!(connection.dim(), base.dim() + fiber_dim);
        Self {
            base,
            fiber_dim,
            connection,
            projector,
            fiber_periods: vec![None; fiber_dim],
            fiber_guard: Arc::new(|v: &[f64]| v.iter().all(|c| c.abs() < 1e6)),
            fiber_box: vec![(-2.0, 2.0); fiber_dim],
            fd_step: DEFAULT_FD_STEP,
        }
    }

    /// Horizontal complement spanned by the base coordinate directions.
    pub fn coordinate(base: ChartedManifold, fiber_dim: usize, connection: Arc<dyn Connection>) -> Self {
        let m = base.dim();
        let n = m + fiber_dim;
        let p = DMatrix::from_fn(n, n, |r, c| if r == c && r >= m { 1.0 } else { 0.0 });
        Self::new(base, fiber_dim, connection, Arc::new(move |_| p.clone()))
    }

    /// Riemannian submersion: Levi-Civita connection of `total` and the
    /// metric-orthogonal horizontal complement.
    pub fn riemannian(base: ChartedManifold, fiber_dim: usize, total: ChartedManifold) -> Self {
        let m = base.dim();
        let n = m + fiber_dim;
        assert_eq!(total.dim(), n);
        let metric = total.metric_field();
        let projector: Field<DMatrix<f64>> = Arc::new(move |p: &[f64]| {
            let g = metric(p);
            let gvv = g.view((m, m), (fiber_dim, fiber_dim)).into_owned();
            let gvh = g.view((m, 0), (fiber_dim, m)).into_owned();
            // Horizontal lift of ∂_j is ∂_j − g_VV⁻¹ g_Vj, so P_v ∂_j = g_VV⁻¹ g_Vj.
            let nmat = gvv
                .cholesky()
                .map(|c| c.solve(&gvh))
                .unwrap_or_else(|| DMatrix::zeros(fiber_dim, m));
            let mut pv = DMatrix::zeros(n, n);
            for a in 0..fiber_dim {
                pv[(m + a, m + a)] = 1.0;
                for j in 0..m {
                    pv[(m + a, j)] = nmat[(a, j)];
                }
            }
            pv
        });
        let fiber_periods = total.periods()[m..].to_vec();
        let mut sub = Self::new(base, fiber_dim, Arc::new(total), projector);
        sub.fiber_periods = fiber_periods;
        sub
    }

    pub fn with_fiber_periods(mut self, periods: Vec<Option<f64>>) -> Self {
        assert_eq!(periods.len(), self.fiber_dim);
        self.fiber_periods = periods;
        self
    }

    pub fn with_fiber_guard(mut self, guard: Field<bool>) -> Self {
        self.fiber_guard = guard;
        self
    }

    pub fn fiber_box(&self) -> &[(f64, f64)] {
        &self.fiber_box
    }

    pub fn with_fiber_box(mut self, b: Vec<(f64, f64)>) -> Self {
        assert_eq!(b.len(), self.fiber_dim);
        self.fiber_box = b;
        self
    }

    /// Replaces the ambient connection, keeping everything else.
    pub fn with_connection(mut self, connection: Arc<dyn Connection>) -> Self {
        assert_eq!(connection.dim(), self.total_dim());
        self.connection = connection;
        self
    }

    pub fn base(&self) -> &ChartedManifold {
        &self.base
    }

    pub fn base_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn total_dim(&self) -> usize {
        self.base.dim() + self.fiber_dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn connection(&self) -> &Arc<dyn Connection> {
        &self.connection
    }

    /// Periods of all total-space coordinates.
    pub fn periods(&self) -> Vec<Option<f64>> {
        let mut p = self.base.periods().to_vec();
        p.extend_from_slice(&self.fiber_periods);
        p
    }

    /// `π(x, v) = x`.
    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        p[..self.base_dim()].to_vec()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        let m = self.base_dim();
        p.len() == self.total_dim()
            && p.iter().all(|c| c.is_finite())
            && self.base.contains(&p[..m])
            && (self.fiber_guard)(&p[m..])
    }

    pub fn guard_field(&self) -> Field<bool> {
        let base = self.base.clone();
        let fg = self.fiber_guard.clone();
        let m = self.base_dim();
        let n = self.total_dim();
        Arc::new(move |p: &[f64]| p.len() == n && base.contains(&p[..m]) && fg(&p[m..]))
    }

    pub fn projector(&self, p: &[f64]) -> DMatrix<f64> {
        (self.projector)(p)
    }

    pub fn horizontal_projector(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.total_dim();
        DMatrix::identity(n, n) - self.projector(p)
    }

    /// Horizontal lift `H_p(w)` of a base vector.
    pub fn horizontal_lift(&self, p: &[f64], w: &[f64]) -> DVector<f64> {
        let n = self.total_dim();
        let mut full = DVector::zeros(n);
        for (j, wj) in w.iter().enumerate() {
            full[j] = *wj;
        }
        self.horizontal_projector(p) * full
    }

    /// `∂_B P_v` for every total-space coordinate `B` by central differences.
    pub fn projector_derivatives(&self, p: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.total_dim();
        let h = self.fd_step;
        let mut q = p.to_vec();
        (0..n)
            .map(|b| {
                q[b] = p[b] + h;
                let pp = self.projector(&q);
                q[b] = p[b] - h;
                let pm = self.projector(&q);
                q[b] = p[b];
                (pp - pm) / (2.0 * h)
            })
            .collect()
    }

    pub fn ambient_christoffels(&self, p: &[f64]) -> Result<Christoffel> {
        if !self.contains(p) {
            return Err(Error::ChartBoundary { point: p.to_vec() });
        }
        self.connection.christoffels(p)
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut p = self.base.sample_point(rng)?;
        for &(lo, hi) in &self.fiber_box {
            p.push(rng.random_range(lo..hi));
        }
        if !self.contains(&p) {
            return Err(Error::Precondition("fiber sample box leaves the chart".into()));
        }
        Ok(p)
    }

    /// Everything the vertical calculus needs at one point.
    pub fn vertical_data(&self, p: &[f64]) -> Result<VerticalData> {
        check_len(self.total_dim(), p.len())?;
        let gamma = self.ambient_christoffels(p)?;
        let projector = self.projector(p);
        let projector_derivatives = self.projector_derivatives(p);
        let christoffels = VerticalChristoffels::from_ambient(&gamma, &projector, self.base_dim(), self.fiber_dim);
        Ok(VerticalData {
            m: self.base_dim(),
            k: self.fiber_dim,
            projector,
            projector_derivatives,
            christoffels,
        })
    }
}

/// Vertical Christoffel symbols `Γ^{v,α}_{Rγ} = (P_v Γ^E(D_R, D_γ))^α`, for `R`
/// ranging over all coordinates and `γ` over fiber coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct VerticalChristoffels {
    m: usize,
    k: usize,
    data: Vec<f64>,
}

impl VerticalChristoffels {
    fn from_ambient(gamma: &Christoffel, pv: &DMatrix<f64>, m: usize, k: usize) -> Self {
        let n = m + k;
        let mut data = vec![0.0; k * n * k];
        for a in 0..k {
            for r in 0..n {
                for g in 0..k {
                    let mut s = 0.0;
                    for c in 0..n {
                        s += pv[(m + a, c)] * gamma.get(c, r, m + g);
                    }
                    data[(a * n + r) * k + g] = s;
                }
            }
        }
        Self { m, k, data }
    }

    /// `Γ^{v,α}_{Rγ}` with `R` a total-space index.
    #[inline]
    pub fn mixed(&self, alpha: usize, r: usize, gamma: usize) -> f64 {
        let n = self.m + self.k;
        self.data[(alpha * n + r) * self.k + gamma]
    }

    /// `Γ^{v,α}_{βγ}`, fiber indices counted from zero.
    pub fn fiber_fiber(&self, alpha: usize, beta: usize, gamma: usize) -> f64 {
        self.mixed(alpha, self.m + beta, gamma)
    }

    /// `Γ^{v,α}_{βj}`: vertical part of `Γ^E(D_β, D_j)`.
    pub fn fiber_base(&self, alpha: usize, beta: usize, j: usize) -> f64 {
        self.mixed(alpha, j, beta)
    }

    pub fn base_dim(&self) -> usize {
        self.m
    }

    pub fn fiber_dim(&self) -> usize {
        self.k
    }

    pub fn max_abs_diff(&self, other: &VerticalChristoffels) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|Γ^{v,α}_{βγ} − Γ^{v,α}_{γβ}|`.
    pub fn fiber_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.k {
            for b in 0..self.k {
                for g in 0..self.k {
                    worst = worst.max((self.fiber_fiber(a, b, g) - self.fiber_fiber(a, g, b)).abs());
                }
            }
        }
        worst
    }
}

/// Projector, its derivatives and the vertical Christoffels at one point.
#[derive(Clone, Debug)]
pub struct VerticalData {
    m: usize,
    k: usize,
    pub projector: DMatrix<f64>,
    pub projector_derivatives: Vec<DMatrix<f64>>,
    pub christoffels: VerticalChristoffels,
}

impl VerticalData {
    /// Fiber components of `P_v w`.
    pub fn vertical_part(&self, w: &[f64]) -> DVector<f64> {
        let n = self.m + self.k;
        DVector::from_fn(self.k, |a, _| {
            (0..n).map(|c| self.projector[(self.m + a, c)] * w[c]).sum()
        })
    }

    /// Full covector `θ = c_α (P_v)^α_A` of a vertical form with fiber coefficients `c`.
    pub fn covector(&self, c: &DVector<f64>) -> DVector<f64> {
        let n = self.m + self.k;
        DVector::from_fn(n, |col, _| {
            (0..self.k).map(|a| c[a] * self.projector[(self.m + a, col)]).sum()
        })
    }

    /// The vertical Itô functional `L ↦ Γ^{v*}(·)(𝐯L)`, fiber components.
    ///
    /// `V(L)^α = (P_v a)^α + ∂_B N^α_j A^{Bj} + Γ^{v,α}_{Rγ} (A P_vᵀ)^{Rγ}`,
    /// which reduces to `a^α + Γ^{v,α}_{βγ}A^{βγ} + Γ^{v,α}_{βj}A^{jβ}` when the
    /// horizontal complement is the coordinate one.
    pub fn functional(&self, l: &SecondOrderVector) -> DVector<f64> {
        let (m, k) = (self.m, self.k);
        let n = m + k;
        let a = &l.first;
        let big_a = &l.second;
        let mut out = DVector::zeros(k);
        // A P_vᵀ restricted to fiber columns.
        let mut apv = DMatrix::<f64>::zeros(n, k);
        for r in 0..n {
            for g in 0..k {
                apv[(r, g)] = (0..n).map(|c| big_a[(r, c)] * self.projector[(m + g, c)]).sum();
            }
        }
        for al in 0..k {
            let mut s = 0.0;
            for c in 0..n {
                s += self.projector[(m + al, c)] * a[c];
            }
            for (b, db) in self.projector_derivatives.iter().enumerate() {
                for j in 0..m {
                    s += db[(m + al, j)] * big_a[(b, j)];
                }
            }
            for r in 0..n {
                for g in 0..k {
                    s += self.christoffels.mixed(al, r, g) * apv[(r, g)];
                }
            }
            out[al] = s;
        }
        out
    }
}

pub fn vertical_christoffels(sub: &AdaptedSubmersion, p: &[f64]) -> Result<VerticalChristoffels> {
    check_len(sub.total_dim(), p.len())?;
    let gamma = sub.ambient_christoffels(p)?;
    Ok(VerticalChristoffels::from_ambient(
        &gamma,
        &sub.projector(p),
        sub.base_dim(),
        sub.fiber_dim(),
    ))
}

/// Vertical projection `𝐯L` of a second-order vector: the first-order part is
/// replaced by its `P_v` image and the horizontal–horizontal block `h A hᵀ`
/// of the second-order part is removed.
pub fn project_second_order(sub: &AdaptedSubmersion, p: &[f64], l: &SecondOrderVector) -> Result<SecondOrderVector> {
    check_len(sub.total_dim(), l.dim())?;
    let pv = sub.projector(p);
    let h = sub.horizontal_projector(p);
    let first = &pv * &l.first;
    let second = &l.second - &h * &l.second * h.transpose();
    SecondOrderVector::new(first, second)
}

/// Outcome of [`validate_affine_submersion`].
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCheck {
    pub holds: bool,
    pub max_defect: f64,
}

/// Tolerance for the affine-submersion identity.
pub const AFFINE_TOLERANCE: f64 = 1e-5;

/// Checks `𝐡∇^E_{H(X)} H(Y) = H(∇^M_X Y)` for constant-coefficient base fields
/// at random points and random vector pairs.
pub fn validate_affine_submersion(sub: &AdaptedSubmersion, samples: usize, seed: u64) -> Result<AffineCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sub.base_dim();
    let n = sub.total_dim();
    let h = sub.fd_step();
    let mut max_defect = 0.0f64;
    for _ in 0..samples {
        let p = sub.sample_point(&mut rng)?;
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hx = sub.horizontal_lift(&p, &a);
        let hy = sub.horizontal_lift(&p, &b);
        let dhy = central_diff(|q| sub.horizontal_lift(q, &b), &p, h);
        let gamma = sub.ambient_christoffels(&p)?;
        let mut nabla = gamma.contract(hx.as_slice(), hy.as_slice());
        for (r, d) in dhy.iter().enumerate() {
            nabla += d * hx[r];
        }
        let lhs = sub.horizontal_projector(&p) * nabla;
        let base_gamma = sub.base().christoffels(&p[..m])?;
        let rhs = sub.horizontal_lift(&p, base_gamma.contract(&a, &b).as_slice());
        let defect = (lhs - rhs).amax();
        debug_assert_eq!(n, p.len());
        max_defect = max_defect.max(defect);
    }
    Ok(AffineCheck {
        holds: max_defect <= AFFINE_TOLERANCE,
        max_defect,
    })
}

/// A vertical 1-form, stored by its fiber coefficients `c_α = θ(D_α)` and
/// extended to all of `TE` by `θ = c ∘ P_v`.
#[derive(Clone)]
pub struct VerticalForm {
    fiber_dim: usize,
    coeffs: Field<DVector<f64>>,
    derivative: Option<Field<DMatrix<f64>>>,
    fd_step: f64,
}

impl fmt::Debug for VerticalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VerticalForm")
            .field("fiber_dim", &self.fiber_dim)
            .finish()
    }
}

impl VerticalForm {
    pub fn new(fiber_dim: usize, coeffs: Field<DVector<f64>>) -> Self {
        Self {
            fiber_dim,
            coeffs,
            derivative: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    /// Constant coefficients; `dv^α` is `constant(e_α)`.
    pub fn constant(c: Vec<f64>) -> Self {
        let k = c.len();
        let v = DVector::from_vec(c);
        Self::new(k, Arc::new(move |_| v.clone()))
            .with_derivative(Arc::new(move |p: &[f64]| DMatrix::zeros(k, p.len())))
    }

    /// `dv^α`.
    pub fn coordinate(fiber_dim: usize, alpha: usize) -> Self {
        let mut c = vec![0.0; fiber_dim];
        c[alpha] = 1.0;
        Self::constant(c)
    }

    /// Closed-form `∂_B c_α`, a `k × (m+k)` matrix.
    pub fn with_derivative(mut self, d: Field<DMatrix<f64>>) -> Self {
        self.derivative = Some(d);
        self
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn coefficients(&self, p: &[f64]) -> DVector<f64> {
        (self.coeffs)(p)
    }

    /// `∂_B c_α`, closed form when supplied, otherwise central differences.
    pub fn derivative(&self, p: &[f64]) -> DMatrix<f64> {
        match &self.derivative {
            Some(d) => d(p),
            None => {
                let cols = central_diff(|q| (self.coeffs)(q), p, self.fd_step);
                DMatrix::from_columns(&cols)
            }
        }
    }

    /// `aθ₁ + bθ₂`.
    pub fn linear_combination(a: f64, t1: &VerticalForm, b: f64, t2: &VerticalForm) -> VerticalForm {
        let (c1, c2) = (t1.coeffs.clone(), t2.coeffs.clone());
        let (s1, s2) = (t1.clone(), t2.clone());
        VerticalForm::new(t1.fiber_dim, Arc::new(move |p| c1(p) * a + c2(p) * b))
            .with_derivative(Arc::new(move |p| s1.derivative(p) * a + s2.derivative(p) * b))
    }
}
