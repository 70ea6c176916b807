//! Smooth maps `φ: N → E` into the total space of a submersion, their
//! vertical second fundamental form and tension field, and the stochastic
//! identities that relate them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::geometry::{
    central_diff, pushforward_second_order, ChartedManifold, Christoffel, Connection, Field, Jet, SecondOrderVector,
    DEFAULT_FD_STEP,
};
use crate::integrals::{accumulate, vertical_ito_integral, vertical_stratonovich_integral, RealPath};
use crate::martingale::{drift_part, martingale_test, Estimate, MartingaleConfig, MartingaleReport};
use crate::paths::{map_indexed, simulate_sde_with, SamplePath, Sde, TimeGrid};
use crate::submersion::{AdaptedSubmersion, VerticalData, VerticalForm};

/// A smooth map between charts with closed-form or finite-difference jets.
#[derive(Clone)]
pub struct SmoothMap {
    source_dim: usize,
    target_dim: usize,
    value: Field<DVector<f64>>,
    jacobian: Option<Field<DMatrix<f64>>>,
    hessian: Option<Field<Vec<DMatrix<f64>>>>,
    section: bool,
    fd_step: f64,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("source_dim", &self.source_dim)
            .field("target_dim", &self.target_dim)
            .field("section", &self.section)
            .finish()
    }
}

impl SmoothMap {
    pub fn new(source_dim: usize, target_dim: usize, value: Field<DVector<f64>>) -> Self {
        Self {
            source_dim,
            target_dim,
            value,
            jacobian: None,
            hessian: None,
            section: false,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    /// A section `y ↦ (y, f(y))` given by its fiber part; the base block of
    /// the jet is the identity.
    pub fn section(base_dim: usize, fiber_dim: usize, fiber: Field<DVector<f64>>) -> Self {
        let value = Arc::new(move |y: &[f64]| {
            let f = fiber(y);
            let mut v = DVector::zeros(base_dim + fiber_dim);
            v.rows_mut(0, base_dim).copy_from_slice(y);
            v.rows_mut(base_dim, fiber_dim).copy_from(&f);
            v
        });
        let mut s = Self::new(base_dim, base_dim + fiber_dim, value);
        s.section = true;
        s
    }

    pub fn with_jacobian(mut self, j: Field<DMatrix<f64>>) -> Self {
        self.jacobian = Some(j);
        self
    }

    pub fn with_hessian(mut self, h: Field<Vec<DMatrix<f64>>>) -> Self {
        self.hessian = Some(h);
        self
    }

    /// Closed-form Jacobian of the fiber part of a section.
    pub fn with_fiber_jacobian(self, j: Field<DMatrix<f64>>) -> Self {
        let (m, n) = (self.source_dim, self.target_dim);
        self.with_jacobian(Arc::new(move |y: &[f64]| {
            let mut out = DMatrix::zeros(n, m);
            out.view_mut((0, 0), (m, m)).fill_with_identity();
            out.view_mut((m, 0), (n - m, m)).copy_from(&j(y));
            out
        }))
    }

    /// Closed-form Hessians of the fiber part of a section.
    pub fn with_fiber_hessian(self, h: Field<Vec<DMatrix<f64>>>) -> Self {
        let m = self.source_dim;
        self.with_hessian(Arc::new(move |y: &[f64]| {
            let mut out = vec![DMatrix::zeros(m, m); m];
            out.extend(h(y));
            out
        }))
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn is_section(&self) -> bool {
        self.section
    }

    pub fn value(&self, y: &[f64]) -> DVector<f64> {
        (self.value)(y)
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(y),
            None => DMatrix::from_columns(&central_diff(|q| (self.value)(q), y, self.fd_step)),
        }
    }

    pub fn jacobian_fd(&self, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_columns(&central_diff(|q| (self.value)(q), y, self.fd_step))
    }

    pub fn hessian(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        match &self.hessian {
            Some(h) => h(y),
            None => self.hessian_fd(y),
        }
    }

    /// Hessians by central differences of the Jacobian, symmetrized.
    pub fn hessian_fd(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.source_dim;
        let h = self.fd_step.max(1e-4);
        let mut yp = y.to_vec();
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            yp[i] = y[i] + h;
            let jp = self.jacobian(&yp);
            yp[i] = y[i] - h;
            let jm = self.jacobian(&yp);
            yp[i] = y[i];
            d.push((jp - jm) / (2.0 * h));
        }
        (0..self.target_dim)
            .map(|a| {
                let raw = DMatrix::from_fn(n, n, |i, j| d[i][(a, j)]);
                (&raw + raw.transpose()) * 0.5
            })
            .collect()
    }

    pub fn jet(&self, y: &[f64]) -> Jet {
        Jet {
            value: self.value(y),
            jacobian: self.jacobian(y),
            hessian: self.hessian(y),
        }
    }

    /// Pushes a path on `N` into the adapted chart of `sub`.
    pub fn map_path(&self, x: &SamplePath, sub: &AdaptedSubmersion) -> Result<SamplePath> {
        check_len(self.source_dim, x.dim())?;
        check_len(sub.total_dim(), self.target_dim)?;
        let guard = sub.guard_field();
        x.map(self.target_dim, sub.periods(), guard.as_ref(), |y| {
            Ok(self.value(y).as_slice().to_vec())
        })
    }
}

fn check_target(phi: &SmoothMap, sub: &AdaptedSubmersion) -> Result<()> {
    check_len(sub.total_dim(), phi.target_dim)
}

/// `𝐯φ_*` at `y`: fiber rows of `P_v(φ(y)) J(y)`, a `k × n` matrix.
pub fn vertical_pushforward(phi: &SmoothMap, sub: &AdaptedSubmersion, y: &[f64]) -> Result<DMatrix<f64>> {
    check_target(phi, sub)?;
    let p = phi.value(y);
    if !sub.contains(p.as_slice()) {
        return Err(Error::ChartBoundary {
            point: p.as_slice().to_vec(),
        });
    }
    let pv = sub.projector(p.as_slice());
    let m = sub.base_dim();
    Ok(pv.rows(m, sub.fiber_dim()) * phi.jacobian(y))
}

/// `α^v_φ(L) = Γ^v(𝐯φ_*L) − 𝐯φ_*Γ^N(L)`, fiber components.
pub fn vertical_alpha(
    phi: &SmoothMap,
    sub: &AdaptedSubmersion,
    conn_n: &dyn Connection,
    y: &[f64],
    l: &SecondOrderVector,
) -> Result<DVector<f64>> {
    check_target(phi, sub)?;
    check_len(phi.source_dim, l.dim())?;
    let jet = phi.jet(y);
    let data = sub.vertical_data(jet.value.as_slice())?;
    let gamma_n = conn_n.christoffels(y)?;
    alpha_at(&jet, &data, &gamma_n, l)
}

fn alpha_at(jet: &Jet, data: &VerticalData, gamma_n: &Christoffel, l: &SecondOrderVector) -> Result<DVector<f64>> {
    let pushed = pushforward_second_order(jet, l)?;
    let first = data.functional(&pushed);
    let base_first = &l.first + gamma_n.contract_matrix(&l.second);
    let w = &jet.jacobian * base_first;
    Ok(first - data.vertical_part(w.as_slice()))
}

/// `β^{v,α}_{ij}`, symmetric in `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VerticalSff {
    fiber_dim: usize,
    source_dim: usize,
    data: Vec<f64>,
}

impl VerticalSff {
    pub fn get(&self, alpha: usize, i: usize, j: usize) -> f64 {
        self.data[(alpha * self.source_dim + i) * self.source_dim + j]
    }

    /// `β^v(u, w)` for tangent vectors `u`, `w` of `N`.
    pub fn apply(&self, u: &[f64], w: &[f64]) -> DVector<f64> {
        let n = self.source_dim;
        DVector::from_fn(self.fiber_dim, |a, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(a, i, j) * u[i] * w[j];
                }
            }
            s
        })
    }

    /// `β^v` contracted with a symmetric matrix.
    pub fn contract(&self, a_mat: &DMatrix<f64>) -> DVector<f64> {
        let n = self.source_dim;
        DVector::from_fn(self.fiber_dim, |a, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(a, i, j) * a_mat[(i, j)];
                }
            }
            s
        })
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.source_dim;
        let mut worst = 0.0f64;
        for a in 0..self.fiber_dim {
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((self.get(a, i, j) - self.get(a, j, i)).abs());
                }
            }
        }
        worst
    }
}

/// The vertical second fundamental form, obtained by evaluating `α^v` on the
/// basis second-order vectors `D_ij`.
pub fn vertical_sff(
    phi: &SmoothMap,
    sub: &AdaptedSubmersion,
    conn_n: &dyn Connection,
    y: &[f64],
) -> Result<VerticalSff> {
    check_target(phi, sub)?;
    let n = phi.source_dim;
    let k = sub.fiber_dim();
    let jet = phi.jet(y);
    let vd = sub.vertical_data(jet.value.as_slice())?;
    let gamma_n = conn_n.christoffels(y)?;
    let mut data = vec![0.0; k * n * n];
    for i in 0..n {
        for j in i..n {
            let mut a = DMatrix::zeros(n, n);
            a[(i, j)] += 0.5;
            a[(j, i)] += 0.5;
            let l = SecondOrderVector::new(DVector::zeros(n), a)?;
            let val = alpha_at(&jet, &vd, &gamma_n, &l)?;
            for al in 0..k {
                data[(al * n + i) * n + j] = val[al];
                data[(al * n + j) * n + i] = val[al];
            }
        }
    }
    Ok(VerticalSff {
        fiber_dim: k,
        source_dim: n,
        data,
    })
}

/// `τ^v = g_N^{ij} β^v_{ij}`.
pub fn tension_field(
    phi: &SmoothMap,
    sub: &AdaptedSubmersion,
    source: &ChartedManifold,
    y: &[f64],
) -> Result<DVector<f64>> {
    let beta = vertical_sff(phi, sub, source, y)?;
    let ginv = source.metric_inverse(y)?;
    Ok(beta.contract(&ginv))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicCheck {
    pub harmonic: bool,
    pub max_tension: f64,
}

/// Samples the base and reports whether `max ‖τ^v‖ ≤ tol`.
pub fn is_harmonic_section(
    sigma: &SmoothMap,
    sub: &AdaptedSubmersion,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<HarmonicCheck> {
    check_target(sigma, sub)?;
    let base = sub.base();
    let m = base.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_tension = 0.0f64;
    for _ in 0..samples {
        let y = base.sample_point(&mut rng)?;
        let p = sigma.value(&y);
        if p.rows(0, m).iter().zip(&y).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::Precondition("map is not a section: π∘σ ≠ id".into()));
        }
        let tau = tension_field(sigma, sub, base, &y)?;
        max_tension = max_tension.max(tau.norm());
    }
    Ok(HarmonicCheck {
        harmonic: max_tension <= tol,
        max_tension,
    })
}

/// `(φ*θ)_i = c_α(φ(y)) (𝐯φ_*)^α_i`.
pub fn pullback_form(
    phi: &SmoothMap,
    theta: &VerticalForm,
    sub: &AdaptedSubmersion,
    y: &[f64],
) -> Result<DVector<f64>> {
    let p = phi.value(y);
    let c = theta.coefficients(p.as_slice());
    let vp = vertical_pushforward(phi, sub, y)?;
    Ok(vp.transpose() * c)
}

/// `∫θ d^vφ(X) − ∫φ*θ d^N X − ½∫β^{v*}_φθ(dX, dX)`.
pub fn geometric_ito_residual(
    phi: &SmoothMap,
    theta: &VerticalForm,
    sub: &AdaptedSubmersion,
    source: &ChartedManifold,
    x: &SamplePath,
) -> Result<RealPath> {
    let y = phi.map_path(x, sub)?;
    let lhs = vertical_ito_integral(theta, sub, &y)?;
    let rhs = accumulate(x, |p, _, dx| {
        let pull = pullback_form(phi, theta, sub, p)?;
        let gamma = source.christoffels(p)?;
        let corr = gamma.contract(dx, dx);
        let c = theta.coefficients(phi.value(p).as_slice());
        let beta = vertical_sff(phi, sub, source, p)?;
        let bq = beta.apply(dx, dx);
        let mut s = 0.0;
        for i in 0..dx.len() {
            s += pull[i] * (dx[i] + 0.5 * corr[i]);
        }
        Ok(s + 0.5 * c.dot(&bq))
    })?;
    Ok(lhs.sub(&rhs))
}

/// `∫θ δ^vφ(X) − ∫(𝐯φ)*θ δX`, both sides in Itô form with left-point coefficients.
pub fn stratonovich_transfer_residual(
    phi: &SmoothMap,
    theta: &VerticalForm,
    sub: &AdaptedSubmersion,
    x: &SamplePath,
) -> Result<RealPath> {
    let y = phi.map_path(x, sub)?;
    let lhs = vertical_stratonovich_integral(theta, sub, &y)?;
    let h = phi.fd_step;
    let rhs = accumulate(x, |p, _, dx| {
        let f = pullback_form(phi, theta, sub, p)?;
        let n = dx.len();
        let mut s: f64 = (0..n).map(|i| f[i] * dx[i]).sum();
        let mut q = p.to_vec();
        for j in 0..n {
            q[j] = p[j] + h;
            let fp = pullback_form(phi, theta, sub, &q)?;
            q[j] = p[j] - h;
            let fm = pullback_form(phi, theta, sub, &q)?;
            q[j] = p[j];
            let df = (fp - fm) / (2.0 * h);
            s += 0.5 * dx[j] * (0..n).map(|i| df[i] * dx[i]).sum::<f64>();
        }
        Ok(s)
    })?;
    Ok(lhs.sub(&rhs))
}

/// Base Brownian ensemble settings.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianConfig {
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct HarmonicityReport {
    /// Martingale test of the drift part `M^α` of `σ(B)`, per fiber index.
    pub reports: Vec<MartingaleReport>,
    /// Ensemble mean of `M^α` at the horizon.
    pub measured: Vec<Estimate>,
    /// Ensemble mean of `½∫τ^{v,α}(B_s) ds`.
    pub predicted: Vec<Estimate>,
    /// Ensemble mean of `M^α − ½∫τ^{v,α}(B_s) ds`.
    pub gap: Vec<Estimate>,
    pub truncation_fraction: f64,
}

impl HarmonicityReport {
    pub fn passes(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    /// `max_α |measured − predicted| / |predicted|` over the components whose
    /// predicted drift is not identically zero.
    pub fn relative_drift_error(&self) -> f64 {
        self.measured
            .iter()
            .zip(&self.predicted)
            .filter(|(_, b)| b.mean != 0.0 || b.std_error != 0.0)
            .map(|(a, b)| (a.mean - b.mean).abs() / b.mean.abs())
            .fold(0.0, f64::max)
    }
}

/// Runs base Brownian motion, maps it through `σ`, tests the drift parts of
/// `σ(B)` for the martingale property and reports `½∫τ^v(B_s) ds` next to
/// the measured drift.
pub fn stochastic_harmonicity_test(
    sigma: &SmoothMap,
    sub: &AdaptedSubmersion,
    bm: &BrownianConfig,
    cfg: &MartingaleConfig,
) -> Result<HarmonicityReport> {
    check_target(sigma, sub)?;
    let base = sub.base();
    let k = sub.fiber_dim();
    let sde = Sde::brownian(base);
    let per_path = map_indexed(bm.n_paths, bm.seed, |_, rng| {
        let b = simulate_sde_with(&sde, &bm.x0, &bm.grid, rng)?;
        let x = sigma.map_path(&b, sub)?;
        let drift = drift_part(&x, sub)?;
        let mut pred = vec![0.0; k];
        let alive = drift[0].alive_until();
        for n in 0..alive {
            let tau = tension_field(sigma, sub, base, b.point(n))?;
            for a in 0..k {
                pred[a] += 0.5 * tau[a] * bm.grid.dt;
            }
        }
        Ok((drift, pred))
    })?;
    let total = per_path.len();
    let mut reports = Vec::with_capacity(k);
    let mut measured = Vec::with_capacity(k);
    let mut predicted = Vec::with_capacity(k);
    let mut gap = Vec::with_capacity(k);
    for a in 0..k {
        let paths: Vec<RealPath> = per_path.iter().map(|(d, _)| d[a].clone()).collect();
        reports.push(martingale_test(&paths, cfg)?);
        let complete: Vec<(f64, f64)> = per_path
            .iter()
            .filter(|(d, _)| d[a].is_complete())
            .map(|(d, p)| (d[a].terminal(), p[a]))
            .collect();
        let m: Vec<f64> = complete.iter().map(|c| c.0).collect();
        let p: Vec<f64> = complete.iter().map(|c| c.1).collect();
        let g: Vec<f64> = complete.iter().map(|c| c.0 - c.1).collect();
        measured.push(Estimate::from_samples(&m));
        predicted.push(Estimate::from_samples(&p));
        gap.push(Estimate::from_samples(&g));
    }
    let truncation_fraction = reports.first().map(|r| r.truncation_fraction).unwrap_or(0.0);
    debug_assert!(total > 0);
    Ok(HarmonicityReport {
        reports,
        measured,
        predicted,
        gap,
        truncation_fraction,
    })
}
