//! Tangent bundles with the complete-lift and Sasaki connections, sections of
//! `TM`, and product principal bundles `M × G`.
//!
//! On `TM` the adapted chart is `(x^i, u^α)` with `u` the fiber coordinates in
//! the coordinate basis. The lift frame is `H_i = ∂_{x_i} − N^α_i ∂_{u_α}`,
//! `V_α = ∂_{u_α}` with `N^α_i = Γ^α_{iβ} u^β`. Connections are specified by
//! their values on this frame and then rewritten in coordinates.
//!
//! Curvature convention: `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_{[X,Y]}Z` and
//! `R(e_i, e_j) e_k = R^l_{kij} e_l`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{ChartedManifold, Christoffel, ChristoffelField, Connection, Field, Riemann};
use crate::integrals::{ito_integral, vertical_ito_integral, vertical_stratonovich_integral, OneForm, RealPath};
use crate::maps::SmoothMap;
use crate::martingale::{drift_part, martingale_test, MartingaleConfig, MartingaleReport};
use crate::paths::SamplePath;
use crate::submersion::{AdaptedSubmersion, VerticalForm};

/// `R^l_{kij}` from central differences of the Christoffel symbols.
pub fn riemann_from_christoffels(man: &ChartedManifold, x: &[f64]) -> Result<Riemann> {
    let n = man.dim();
    let gamma = man.christoffels(x)?;
    let dgamma = christoffel_derivatives(man, x)?;
    let mut r = Riemann::zeros(n);
    for l in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = dgamma[i].get(l, j, k) - dgamma[j].get(l, i, k);
                    for p in 0..n {
                        s += gamma.get(l, i, p) * gamma.get(p, j, k) - gamma.get(l, j, p) * gamma.get(p, i, k);
                    }
                    r.set(l, k, i, j, s);
                }
            }
        }
    }
    Ok(r)
}

/// Curvature, closed form when the manifold supplies one.
pub fn riemann(man: &ChartedManifold, x: &[f64]) -> Result<Riemann> {
    match man.closed_form_riemann(x) {
        Some(r) => {
            if !man.contains(x) {
                return Err(Error::ChartBoundary { point: x.to_vec() });
            }
            Ok(r)
        }
        None => riemann_from_christoffels(man, x),
    }
}

/// `∂_l Γ^k_{ij}` for each `l`, by central differences.
fn christoffel_derivatives(man: &ChartedManifold, x: &[f64]) -> Result<Vec<Christoffel>> {
    let n = man.dim();
    let h = man.fd_step();
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(n);
    for l in 0..n {
        xp[l] = x[l] + h;
        let gp = man.christoffels(&xp)?;
        xp[l] = x[l] - h;
        let gm = man.christoffels(&xp)?;
        xp[l] = x[l];
        let mut d = Christoffel::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d.set(k, i, j, (gp.get(k, i, j) - gm.get(k, i, j)) / (2.0 * h));
                }
            }
        }
        out.push(d);
    }
    Ok(out)
}

/// Which connection a tangent bundle carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmConnection {
    CompleteLift,
    Sasaki,
}

/// `TM` over a charted base, with its ambient connection and the
/// connection-horizontal complement.
#[derive(Clone)]
pub struct TangentBundle {
    base: ChartedManifold,
    kind: TmConnection,
    submersion: AdaptedSubmersion,
}

impl fmt::Debug for TangentBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TangentBundle")
            .field("base", &self.base.name())
            .field("kind", &self.kind)
            .finish()
    }
}

fn basis(m: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    e[i] = 1.0;
    e
}

/// Frame values `∇_A B = h^k H_k + v^γ V_γ` for the lift frame
/// `H_i = ∂x_i − N^α_i ∂u_α`, `V_α = ∂u_α`, stored as `[pair * 2m + c]` with
/// `c < m` horizontal and `c ≥ m` vertical.
struct FrameTable {
    m: usize,
    data: Vec<f64>,
}

impl FrameTable {
    fn new(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; m * m * 2 * m],
        }
    }

    fn slot(&mut self, a: usize, b: usize) -> &mut [f64] {
        let w = 2 * self.m;
        let start = (a * self.m + b) * w;
        &mut self.data[start..start + w]
    }

    fn get(&self, a: usize, b: usize) -> &[f64] {
        let w = 2 * self.m;
        let start = (a * self.m + b) * w;
        &self.data[start..start + w]
    }
}

fn tm_christoffels(base: &ChartedManifold, kind: TmConnection, p: &[f64]) -> Result<Christoffel> {
    let m = base.dim();
    let (x, u) = p.split_at(m);
    let gamma = base.christoffels(x)?;
    let dgamma = christoffel_derivatives(base, x)?;
    let r = riemann(base, x)?;
    let sasaki = kind == TmConnection::Sasaki;

    // N^α_j = Γ^α_{jβ} u^β and its x-derivatives at fixed u.
    let mut nmat = DMatrix::<f64>::zeros(m, m);
    let mut dn = vec![DMatrix::<f64>::zeros(m, m); m];
    for a in 0..m {
        for j in 0..m {
            for b in 0..m {
                nmat[(a, j)] += gamma.get(a, j, b) * u[b];
                for (i, d) in dn.iter_mut().enumerate() {
                    d[(a, j)] += dgamma[i].get(a, j, b) * u[b];
                }
            }
        }
    }
    // (R(u, e_i) e_j)^l
    let ru = |l: usize, i: usize, j: usize| -> f64 { (0..m).map(|c| r.get(l, j, c, i) * u[c]).sum() };

    // ∇_{V_α} H_j, ∇_{H_i} V_β, ∇_{H_i} H_j; ∇_{V_α} V_β = 0 for both connections.
    let mut vh = FrameTable::new(m);
    let mut hv = FrameTable::new(m);
    let mut hh = FrameTable::new(m);
    for i in 0..m {
        for j in 0..m {
            let s = vh.slot(i, j);
            for l in 0..m {
                s[l] = if sasaki { 0.5 * ru(l, i, j) } else { 0.0 };
            }
            let s = hv.slot(i, j);
            for l in 0..m {
                s[m + l] = gamma.get(l, i, j);
                if sasaki {
                    s[l] = 0.5 * ru(l, j, i);
                }
            }
            let s = hh.slot(i, j);
            for l in 0..m {
                s[l] = gamma.get(l, i, j);
                s[m + l] = if sasaki {
                    -0.5 * (0..m).map(|k| r.get(l, k, i, j) * u[k]).sum::<f64>()
                } else {
                    ru(l, i, j)
                };
            }
        }
    }

    let mut out = Christoffel::zeros(2 * m);
    // Frame vector a^k H_k + b^γ V_γ in coordinates: (a, b − N a).
    let mut store = |a: usize, b: usize, f: &[f64]| {
        for k in 0..m {
            out.set(k, a, b, f[k]);
        }
        for g in 0..m {
            let v = f[m + g] - (0..m).map(|k| nmat[(g, k)] * f[k]).sum::<f64>();
            out.set(m + g, a, b, v);
        }
    };
    let mut f = vec![0.0; 2 * m];
    for i in 0..m {
        for j in 0..m {
            // ∇_{∂x_i} ∂x_j = ∇_{H_i}H_j + N^α_i ∇_{V_α}H_j + ∂_i N^γ_j V_γ + N^γ_j ∇_{H_i}V_γ
            f.copy_from_slice(hh.get(i, j));
            for a in 0..m {
                let (t, s) = (vh.get(a, j), hv.get(i, a));
                for c in 0..2 * m {
                    f[c] += nmat[(a, i)] * t[c] + nmat[(a, j)] * s[c];
                }
            }
            for g in 0..m {
                f[m + g] += dn[i][(g, j)];
            }
            store(i, j, &f);
        }
        for b in 0..m {
            // ∇_{∂x_i} ∂u_β = ∇_{H_i}V_β
            store(i, m + b, hv.get(i, b));
            // ∇_{∂u_β} ∂x_i = ∇_{V_β}H_i + ∂_{u_β}N^γ_i V_γ
            f.copy_from_slice(vh.get(b, i));
            for g in 0..m {
                f[m + g] += gamma.get(g, i, b);
            }
            store(m + b, i, &f);
        }
    }
    Ok(out)
}

fn build_tangent_bundle(base: ChartedManifold, kind: TmConnection) -> TangentBundle {
    let m = base.dim();
    let b = base.clone();
    let conn = ChristoffelField::new(2 * m, Arc::new(move |p: &[f64]| tm_christoffels(&b, kind, p)));
    let b = base.clone();
    let projector: Field<DMatrix<f64>> = Arc::new(move |p: &[f64]| {
        let mut pv = DMatrix::zeros(2 * m, 2 * m);
        for a in 0..m {
            pv[(m + a, m + a)] = 1.0;
        }
        // Outside the chart the projector is left coordinate-vertical; callers
        // guard the domain before using it.
        if let Ok(gamma) = b.christoffels(&p[..m]) {
            for a in 0..m {
                for j in 0..m {
                    pv[(m + a, j)] = (0..m).map(|c| gamma.get(a, j, c) * p[m + c]).sum();
                }
            }
        }
        pv
    });
    let submersion = AdaptedSubmersion::new(base.clone(), m, Arc::new(conn), projector);
    TangentBundle { base, kind, submersion }
}

/// `TM` with the complete lift `∇^c` of the base Levi-Civita connection.
pub fn complete_lift_bundle(base: ChartedManifold) -> TangentBundle {
    build_tangent_bundle(base, TmConnection::CompleteLift)
}

/// `TM` with the Levi-Civita connection of the Sasaki metric.
pub fn sasaki_bundle(base: ChartedManifold) -> TangentBundle {
    build_tangent_bundle(base, TmConnection::Sasaki)
}

impl TangentBundle {
    pub fn base(&self) -> &ChartedManifold {
        &self.base
    }

    pub fn kind(&self) -> TmConnection {
        self.kind
    }

    pub fn submersion(&self) -> &AdaptedSubmersion {
        &self.submersion
    }

    pub fn dim(&self) -> usize {
        2 * self.base.dim()
    }

    /// `N^α_j(x, u) = Γ^α_{jβ}(x) u^β`.
    pub fn horizontal_coefficients(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.base.dim();
        let gamma = self.base.christoffels(&p[..m])?;
        Ok(DMatrix::from_fn(m, m, |a, j| {
            (0..m).map(|c| gamma.get(a, j, c) * p[m + c]).sum()
        }))
    }

    /// The total space as a Riemannian manifold with the Sasaki metric
    /// `g_ij dx^i dx^j + g_αβ ω^α ω^β`, `ω^α = du^α + N^α_j dx^j`.
    pub fn sasaki_metric_manifold(&self) -> ChartedManifold {
        let m = self.base.dim();
        let base = self.base.clone();
        let metric = Arc::new(move |p: &[f64]| {
            let g = base.metric(&p[..m]);
            let gamma = base.christoffels(&p[..m]);
            let nmat = match gamma {
                Ok(gamma) => DMatrix::from_fn(m, m, |a, j| (0..m).map(|c| gamma.get(a, j, c) * p[m + c]).sum()),
                Err(_) => DMatrix::from_element(m, m, f64::NAN),
            };
            let gn = &g * &nmat;
            let mut out = DMatrix::zeros(2 * m, 2 * m);
            out.view_mut((0, 0), (m, m)).copy_from(&(&g + nmat.transpose() * &gn));
            out.view_mut((0, m), (m, m)).copy_from(&gn.transpose());
            out.view_mut((m, 0), (m, m)).copy_from(&gn);
            out.view_mut((m, m), (m, m)).copy_from(&g);
            out
        });
        let guard = self.submersion.guard_field();
        let mut periods = self.base.periods().to_vec();
        periods.extend(std::iter::repeat_n(None, m));
        let mut sample_box = self.base.sample_box().to_vec();
        sample_box.extend(std::iter::repeat_n((-2.0, 2.0), m));
        ChartedManifold::new(format!("{}-sasaki", self.base.name()), 2 * m, metric)
            .with_guard(guard)
            .with_periods(periods)
            .with_sample_box(sample_box)
    }
}

/// A vector field on the base with closed-form first and second derivatives.
/// `jacobian[(α, i)] = ∂_i V^α`, `hessian[α][(i, j)] = ∂_i∂_j V^α`.
#[derive(Clone)]
pub struct VectorFieldJet {
    dim: usize,
    value: Field<DVector<f64>>,
    jacobian: Field<DMatrix<f64>>,
    hessian: Field<Vec<DMatrix<f64>>>,
}

impl fmt::Debug for VectorFieldJet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldJet").field("dim", &self.dim).finish()
    }
}

impl VectorFieldJet {
    pub fn new(
        dim: usize,
        value: Field<DVector<f64>>,
        jacobian: Field<DMatrix<f64>>,
        hessian: Field<Vec<DMatrix<f64>>>,
    ) -> Self {
        Self {
            dim,
            value,
            jacobian,
            hessian,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, y: &[f64]) -> DVector<f64> {
        (self.value)(y)
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(y)
    }

    pub fn hessian(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        (self.hessian)(y)
    }
}

/// The section `σ_V(y) = (y, V(y))` of `TM`.
pub fn section_of_tm(v: &VectorFieldJet) -> SmoothMap {
    SmoothMap::section(v.dim, v.dim, v.value.clone())
        .with_fiber_jacobian(v.jacobian.clone())
        .with_fiber_hessian(v.hessian.clone())
}

/// `(∇_j V)^α = ∂_j V^α + Γ^α_{jβ} V^β`, as an `m × m` matrix indexed `(α, j)`.
pub fn covariant_derivative(base: &ChartedManifold, v: &VectorFieldJet, y: &[f64]) -> Result<DMatrix<f64>> {
    let m = base.dim();
    let gamma = base.christoffels(y)?;
    let val = v.value(y);
    let mut d = v.jacobian(y);
    for a in 0..m {
        for j in 0..m {
            d[(a, j)] += (0..m).map(|b| gamma.get(a, j, b) * val[b]).sum::<f64>();
        }
    }
    Ok(d)
}

/// The vertical form that vanishes on the connection-horizontal subspace and
/// takes the value `coeffs_β` on the vertical lift of `e_β`. In coordinates
/// it reads `coeffs_α (du^α + N^α_j dx^j)`.
pub fn canonical_vertical_form(tb: &TangentBundle, coeffs: &[f64]) -> Result<VerticalForm> {
    if coeffs.len() != tb.base.dim() {
        return Err(Error::Shape {
            expected: tb.base.dim(),
            got: coeffs.len(),
        });
    }
    Ok(VerticalForm::constant(coeffs.to_vec()))
}

/// Result of [`tm_vertical_martingale_criterion`].
#[derive(Clone, Debug)]
pub struct TmCriterionReport {
    /// One report per canonical basis form `du^α + N^α_j dx^j`.
    pub reports: Vec<MartingaleReport>,
    /// Ensemble mean of `|∫θ d^vX − (three-term combination)|` at the horizon, per basis form.
    pub defect: Vec<f64>,
}

impl TmCriterionReport {
    pub fn passes(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// For each canonical basis form `θ`, evaluates along each path
/// `∫θ δ^vX − ∫θ(δJ)^v + ∫θ^{v*} d^M J` with `J = π(X)`, and runs the
/// martingale test on the resulting ensemble.
///
/// `∫θ(δJ)^v` pairs `θ` at `X` with the vertical lift of the base increment
/// (trapezoidal rule) and `∫θ^{v*} d^M J` is the base Itô integral of the
/// same coefficients.
pub fn tm_vertical_martingale_criterion(
    paths: &[SamplePath],
    tb: &TangentBundle,
    cfg: &MartingaleConfig,
) -> Result<TmCriterionReport> {
    let m = tb.base.dim();
    let sub = tb.submersion();
    let mut reports = Vec::with_capacity(m);
    let mut defect = Vec::with_capacity(m);
    for alpha in 0..m {
        let theta = canonical_vertical_form(tb, &basis(m, alpha))?;
        let mut combos = Vec::with_capacity(paths.len());
        let mut gaps = Vec::new();
        for x in paths {
            let s = vertical_stratonovich_integral(&theta, sub, x)?;
            let ito = vertical_ito_integral(&theta, sub, x)?;
            let base_path = x.coordinates(0..m);
            let pullback_form = OneForm::new(m, Arc::new(move |_| DVector::from_vec(basis(m, alpha))));
            let lifted = trapezoid_base(x, m, alpha);
            let base_ito = ito_integral(&pullback_form, tb.base(), &base_path)?;
            let combo = s.sub(&lifted).add(&base_ito);
            if combo.is_complete() && ito.is_complete() {
                gaps.push((ito.terminal() - combo.terminal()).abs());
            }
            combos.push(combo);
        }
        reports.push(martingale_test(&combos, cfg)?);
        defect.push(if gaps.is_empty() {
            f64::NAN
        } else {
            gaps.iter().sum::<f64>() / gaps.len() as f64
        });
    }
    Ok(TmCriterionReport { reports, defect })
}

/// `Σ ½(θ(X_n) + θ(X_{n+1}))((ΔJ)^v)` for the basis form `du^α + N^α_j dx^j`,
/// which takes the value `ΔJ^α` on the vertical lift of `ΔJ`.
fn trapezoid_base(x: &SamplePath, m: usize, alpha: usize) -> RealPath {
    let mut values = vec![0.0; x.grid().n_steps + 1];
    let mut dx = vec![0.0; x.dim()];
    let mut acc = 0.0;
    for n in 0..x.alive_until() {
        x.increment(n, &mut dx);
        acc += dx[alpha];
        values[n + 1] = acc;
    }
    debug_assert!(alpha < m);
    let last = x.alive_until();
    for v in values.iter_mut().skip(last + 1) {
        *v = acc;
    }
    RealPath::new(x.grid().clone(), values, last)
}

/// `M × G` with the product metric; the vertical projector is the projection
/// onto the group block.
#[derive(Clone)]
pub struct ProductPrincipalBundle {
    base: ChartedManifold,
    group: ChartedManifold,
    submersion: AdaptedSubmersion,
}

impl fmt::Debug for ProductPrincipalBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProductPrincipalBundle")
            .field("base", &self.base.name())
            .field("group", &self.group.name())
            .finish()
    }
}

impl ProductPrincipalBundle {
    pub fn new(base: ChartedManifold, group: ChartedManifold) -> Self {
        let m = base.dim();
        let k = group.dim();
        let (b, g) = (base.clone(), group.clone());
        let conn = ChristoffelField::new(
            m + k,
            Arc::new(move |p: &[f64]| {
                let gb = b.christoffels(&p[..m])?;
                let gg = g.christoffels(&p[m..])?;
                let mut out = Christoffel::zeros(m + k);
                for c in 0..m {
                    for i in 0..m {
                        for j in 0..m {
                            out.set(c, i, j, gb.get(c, i, j));
                        }
                    }
                }
                for c in 0..k {
                    for i in 0..k {
                        for j in 0..k {
                            out.set(m + c, m + i, m + j, gg.get(c, i, j));
                        }
                    }
                }
                Ok(out)
            }),
        );
        let submersion = AdaptedSubmersion::coordinate(base.clone(), k, Arc::new(conn))
            .with_fiber_periods(group.periods().to_vec())
            .with_fiber_guard(group.guard_field())
            .with_fiber_box(group.sample_box().to_vec());
        Self {
            base,
            group,
            submersion,
        }
    }

    pub fn base(&self) -> &ChartedManifold {
        &self.base
    }

    pub fn group(&self) -> &ChartedManifold {
        &self.group
    }

    pub fn submersion(&self) -> &AdaptedSubmersion {
        &self.submersion
    }
}

/// Verdicts of [`principal_split_test`].
#[derive(Clone, Debug)]
pub struct PrincipalSplitReport {
    /// Vertical-martingale test on `X`, one report per group coordinate.
    pub vertical: Vec<MartingaleReport>,
    /// `∇^G`-martingale test on the group part `V`, one report per coordinate.
    pub group: Vec<MartingaleReport>,
}

impl PrincipalSplitReport {
    pub fn vertical_pass(&self) -> bool {
        self.vertical.iter().all(|r| r.pass)
    }

    pub fn group_pass(&self) -> bool {
        self.group.iter().all(|r| r.pass)
    }

    pub fn agree(&self) -> bool {
        self.vertical_pass() == self.group_pass()
    }
}

/// Splits each path on `M × G` into its base and group parts and runs the
/// vertical-martingale test on `X` next to the `∇^G`-martingale test on `V`.
pub fn principal_split_test(
    pb: &ProductPrincipalBundle,
    paths: &[SamplePath],
    cfg: &MartingaleConfig,
) -> Result<PrincipalSplitReport> {
    let m = pb.base.dim();
    let k = pb.group.dim();
    let mut drifts: Vec<Vec<RealPath>> = vec![Vec::with_capacity(paths.len()); k];
    let mut group_ints: Vec<Vec<RealPath>> = vec![Vec::with_capacity(paths.len()); k];
    for x in paths {
        for (a, d) in drift_part(x, &pb.submersion)?.into_iter().enumerate() {
            drifts[a].push(d);
        }
        let v = x.coordinates(m..m + k);
        for (a, out) in group_ints.iter_mut().enumerate() {
            let form = OneForm::coordinate(k, a);
            out.push(ito_integral(&form, &pb.group as &dyn Connection, &v)?);
        }
    }
    let vertical = drifts
        .iter()
        .map(|d| martingale_test(d, cfg))
        .collect::<Result<Vec<_>>>()?;
    let group = group_ints
        .iter()
        .map(|d| martingale_test(d, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrincipalSplitReport { vertical, group })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::geometry::{central_diff, levi_civita};
    use crate::submersion::vertical_christoffels;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn horizontal_lift_field(tb: &TangentBundle, p: &[f64], x: &DVector<f64>) -> DVector<f64> {
        tb.submersion().horizontal_lift(p, x.as_slice())
    }

    fn vertical_lift_field(m: usize, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(2 * m);
        for a in 0..m {
            out[m + a] = y[a];
        }
        out
    }

    /// `∇_A B` in coordinates: `A^R ∂_R B + Γ(A, B)`.
    fn nabla(conn: &dyn Connection, p: &[f64], a: &DVector<f64>, b: impl Fn(&[f64]) -> DVector<f64>) -> DVector<f64> {
        let db = central_diff(&b, p, 1e-5);
        let mut out = conn.christoffels(p).unwrap().contract(a.as_slice(), b(p).as_slice());
        for (r, d) in db.iter().enumerate() {
            out += d * a[r];
        }
        out
    }

    fn linear_field(m: usize, seed: u64) -> impl Fn(&[f64]) -> DVector<f64> + Clone {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c1: Vec<f64> = (0..m * m).map(|_| rng.random_range(-0.5..0.5)).collect();
        move |x: &[f64]| {
            DVector::from_fn(m, |a, _| {
                c0[a] + (0..m).map(|j| c1[a * m + j] * x[j].sin()).sum::<f64>()
            })
        }
    }

    fn frame_split(tb: &TangentBundle, p: &[f64], w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let m = tb.base.dim();
        let n = tb.horizontal_coefficients(p).unwrap();
        let h = w.rows(0, m).into_owned();
        let v = w.rows(m, m).into_owned() + &n * &h;
        (h, v)
    }

    #[test]
    fn flat_torus_complete_lift_christoffels_vanish() {
        let tb = complete_lift_bundle(corpus::flat_torus(2));
        let g = tb
            .submersion()
            .connection()
            .christoffels(&[0.1, 2.0, 0.5, -1.0])
            .unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tm_christoffels_are_symmetric() {
        for tb in [complete_lift_bundle(corpus::sphere()), sasaki_bundle(corpus::sphere())] {
            let g = tb
                .submersion()
                .connection()
                .christoffels(&[1.0, 0.3, 0.4, -0.6])
                .unwrap();
            assert!(g.asymmetry() < 1e-9, "{}", g.asymmetry());
        }
    }

    // Oracle: R computed from Γ by finite differences against the closed form.
    #[test]
    fn sphere_curvature_from_christoffels_matches_closed_form() {
        let s = corpus::sphere();
        let x = [1.2, 0.4];
        let fd = riemann_from_christoffels(&s, &x).unwrap();
        let exact = s.closed_form_riemann(&x).unwrap();
        assert!(fd.max_abs_diff(&exact) < 1e-7);
        // R(e_θ, e_φ) e_φ = sin²θ e_θ
        let w = exact.apply(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]);
        assert!((w[0] - x[0].sin().powi(2)).abs() < 1e-12);
    }

    // Oracle: Yano's coordinate formula for the complete lift,
    // Γ^{ū_γ}_{x_i x_j} = u^l ∂_l Γ^γ_{ij}, Γ^{ū_γ}_{x_i ū_β} = Γ^γ_{iβ}, Γ^{x}_{··} = Γ.
    #[test]
    fn complete_lift_matches_coordinate_formula() {
        let s = corpus::sphere();
        let tb = complete_lift_bundle(s.clone());
        let p = [0.9, 1.7, 0.6, -0.4];
        let g = tb.submersion().connection().christoffels(&p).unwrap();
        let base = s.christoffels(&p[..2]).unwrap();
        let h = 1e-5;
        for gam in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut want = 0.0;
                    for l in 0..2 {
                        let mut xp = p[..2].to_vec();
                        xp[l] += h;
                        let gp = s.christoffels(&xp).unwrap().get(gam, i, j);
                        xp[l] -= 2.0 * h;
                        let gm = s.christoffels(&xp).unwrap().get(gam, i, j);
                        want += p[2 + l] * (gp - gm) / (2.0 * h);
                    }
                    assert!((g.get(2 + gam, i, j) - want).abs() < 1e-8);
                    assert!((g.get(gam, i, j) - base.get(gam, i, j)).abs() < 1e-12);
                    assert!((g.get(2 + gam, i, 2 + j) - base.get(gam, i, j)).abs() < 1e-12);
                    assert_eq!(g.get(gam, 2 + i, 2 + j), 0.0);
                    assert_eq!(g.get(2 + gam, 2 + i, 2 + j), 0.0);
                }
            }
        }
    }

    // Oracle: Levi-Civita of the Sasaki metric by finite differences.
    #[test]
    fn sasaki_connection_is_levi_civita_of_sasaki_metric() {
        let tb = sasaki_bundle(corpus::sphere());
        let total = tb.sasaki_metric_manifold();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let p = tb.submersion().sample_point(&mut rng).unwrap();
            let g = tb.submersion().connection().christoffels(&p).unwrap();
            let lc = levi_civita(&total, &p, 1e-5).unwrap();
            assert!(g.max_abs_diff(&lc) < 1e-6, "{}", g.max_abs_diff(&lc));
        }
    }

    #[test]
    fn complete_lift_table_on_random_lifted_fields() {
        let tb = complete_lift_bundle(corpus::sphere());
        let conn = tb.submersion().connection().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in 0..20 {
            let p = tb.submersion().sample_point(&mut rng).unwrap();
            let xf = linear_field(2, 100 + t);
            let yf = linear_field(2, 200 + t);
            let xv = vertical_lift_field(2, &xf(&p[..2]));
            let xh = horizontal_lift_field(&tb, &p, &xf(&p[..2]));
            let yv = |q: &[f64]| vertical_lift_field(2, &yf(&q[..2]));
            let yh = |q: &[f64]| tb.submersion().horizontal_lift(q, yf(&q[..2]).as_slice());
            // ∇^c_{X^v} Y^v = 0
            assert!(nabla(conn.as_ref(), &p, &xv, yv).amax() < 1e-6);
            // ∇^c_{X^v} Y^h = 0
            assert!(nabla(conn.as_ref(), &p, &xv, yh).amax() < 1e-6);
            // ∇^c_{X^h} Y^v = (∇_X Y)^v
            let x0 = xf(&p[..2]);
            let dy = central_diff(|q| yf(q), &p[..2], 1e-5);
            let mut cov = tb
                .base
                .christoffels(&p[..2])
                .unwrap()
                .contract(x0.as_slice(), yf(&p[..2]).as_slice());
            for (r, d) in dy.iter().enumerate() {
                cov += d * x0[r];
            }
            let (h, v) = frame_split(&tb, &p, &nabla(conn.as_ref(), &p, &xh, yv));
            assert!(h.amax() < 1e-6 && (v - &cov).amax() < 1e-6);
            // ∇^c_{X^h} Y^h = (∇_X Y)^h + (R(u, X)Y)^v
            let (h, v) = frame_split(&tb, &p, &nabla(conn.as_ref(), &p, &xh, yh));
            let r = riemann(&tb.base, &p[..2]).unwrap();
            let ruxy = DVector::from_vec(r.apply(&p[2..], x0.as_slice(), yf(&p[..2]).as_slice()));
            assert!((h - &cov).amax() < 1e-5);
            assert!((v - ruxy).amax() < 1e-5);
        }
    }

    #[test]
    fn sasaki_vertical_horizontal_has_no_vertical_part() {
        let tb = sasaki_bundle(corpus::sphere());
        let conn = tb.submersion().connection().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in 0..20 {
            let p = tb.submersion().sample_point(&mut rng).unwrap();
            let xf = linear_field(2, 300 + t);
            let yf = linear_field(2, 400 + t);
            let xv = vertical_lift_field(2, &xf(&p[..2]));
            let yh = |q: &[f64]| tb.submersion().horizontal_lift(q, yf(&q[..2]).as_slice());
            let (h, v) = frame_split(&tb, &p, &nabla(conn.as_ref(), &p, &xv, yh));
            assert!(v.amax() < 1e-6);
            let r = riemann(&tb.base, &p[..2]).unwrap();
            let want = DVector::from_vec(r.apply(&p[2..], xf(&p[..2]).as_slice(), yf(&p[..2]).as_slice())) * 0.5;
            assert!((h - want).amax() < 1e-6);
        }
    }

    #[test]
    fn complete_and_sasaki_share_vertical_christoffels() {
        for base in [corpus::sphere(), corpus::flat_torus(2), corpus::half_plane()] {
            let c = complete_lift_bundle(base.clone());
            let s = sasaki_bundle(base);
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            for _ in 0..100 {
                let p = c.submersion().sample_point(&mut rng).unwrap();
                let vc = vertical_christoffels(c.submersion(), &p).unwrap();
                let vs = vertical_christoffels(s.submersion(), &p).unwrap();
                assert!(vc.max_abs_diff(&vs) <= 1e-8);
            }
        }
    }

    #[test]
    fn canonical_form_annihilates_horizontal_lifts() {
        let tb = complete_lift_bundle(corpus::sphere());
        let theta = canonical_vertical_form(&tb, &[0.7, -1.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let p = tb.submersion().sample_point(&mut rng).unwrap();
            let data = tb.submersion().vertical_data(&p).unwrap();
            let cov = data.covector(&theta.coefficients(&p));
            for j in 0..2 {
                let mut e = [0.0; 2];
                e[j] = 1.0;
                let h = tb.submersion().horizontal_lift(&p, &e);
                assert!(cov.dot(&h).abs() <= 1e-10);
            }
            assert_eq!(cov[2], 0.7);
            assert_eq!(cov[3], -1.3);
        }
        let flat = complete_lift_bundle(corpus::flat_torus(2));
        let theta = canonical_vertical_form(&flat, &[0.7, -1.3]).unwrap();
        let data = flat.submersion().vertical_data(&[1.0, 1.0, 0.3, 0.2]).unwrap();
        let cov = data.covector(&theta.coefficients(&[1.0, 1.0, 0.3, 0.2]));
        assert_eq!(cov.as_slice(), &[0.0, 0.0, 0.7, -1.3]);
    }

    #[test]
    fn covariant_derivative_of_killing_field() {
        let s = corpus::sphere();
        let v = corpus::vector_field("killing-field", &[1.0], 2).unwrap();
        let y = [1.0, 0.5];
        let d = covariant_derivative(&s, &v, &y).unwrap();
        // ∇_θ ∂_φ = cot θ ∂_φ, ∇_φ ∂_φ = −sin θ cos θ ∂_θ
        assert!((d[(1, 0)] - 1.0f64.cos() / 1.0f64.sin()).abs() < 1e-12);
        assert!((d[(0, 1)] + 1.0f64.sin() * 1.0f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn product_bundle_has_totally_geodesic_fibers() {
        let pb = ProductPrincipalBundle::new(corpus::sphere(), corpus::warped_circle(0.3));
        let g = pb.submersion().connection().christoffels(&[1.0, 0.2, 0.7]).unwrap();
        for a in 0..2 {
            assert_eq!(g.get(a, 2, 2), 0.0);
            assert_eq!(g.get(2, a, 2), 0.0);
        }
    }
}
