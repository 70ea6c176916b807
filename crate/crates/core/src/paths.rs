//! Euler–Maruyama simulation of semimartingales in a chart, quadratic
//! covariations, and reproducible ensembles.
//!
//! Every path draws from its own ChaCha8 stream, selected by the path index
//! from a generator seeded with the master seed, so an ensemble does not
//! depend on how paths are scheduled across threads.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::geometry::{periodic_delta, wrap_periodic, ChartedManifold, Field};

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 || !t0.is_finite() {
            return Err(Error::Precondition(format!(
                "time grid needs dt > 0 and n_steps ≥ 1 (dt = {dt}, n_steps = {n_steps})"
            )));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid on `[0, horizon]` with step `dt`.
    pub fn horizon(horizon: f64, dt: f64) -> Result<Self> {
        let n = (horizon / dt).round();
        if n.is_nan() || n < 1.0 {
            return Err(Error::Precondition("horizon shorter than one step".into()));
        }
        Self::new(0.0, dt, n as usize)
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + self.dt * n as f64
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_steps)
    }
}

/// A discretized path in a chart. Periodic coordinates are stored wrapped;
/// increments use the minimal image. After a chart exit the path is frozen
/// and `alive_until` marks the last valid index.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    periods: Vec<Option<f64>>,
    alive_until: usize,
}

impl SamplePath {
    /// `values` holds `(n_steps + 1) × dim` coordinates row by row.
    pub fn from_values(
        grid: TimeGrid,
        dim: usize,
        mut values: Vec<f64>,
        periods: Vec<Option<f64>>,
        alive_until: usize,
    ) -> Result<Self> {
        check_len((grid.n_steps + 1) * dim, values.len())?;
        check_len(dim, periods.len())?;
        if alive_until > grid.n_steps {
            return Err(Error::Precondition("alive_until beyond the grid".into()));
        }
        for row in values.chunks_mut(dim.max(1)) {
            wrap_periodic(&periods, row);
        }
        Ok(Self {
            grid,
            dim,
            values,
            periods,
            alive_until,
        })
    }

    /// Path `t ↦ f(t)` sampled on the grid, alive throughout.
    pub fn from_fn(grid: TimeGrid, dim: usize, periods: Vec<Option<f64>>, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity((grid.n_steps + 1) * dim);
        for n in 0..=grid.n_steps {
            let x = f(grid.time(n));
            check_len(dim, x.len())?;
            values.extend(x);
        }
        let n = grid.n_steps;
        Self::from_values(grid, dim, values, periods, n)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn alive_until(&self) -> usize {
        self.alive_until
    }

    /// Alive up to the horizon.
    pub fn is_complete(&self) -> bool {
        self.alive_until == self.grid.n_steps
    }

    pub fn point(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.point(self.grid.n_steps)
    }

    /// `X_{n+1} − X_n` with minimal image on periodic coordinates.
    pub fn increment(&self, n: usize, out: &mut [f64]) {
        periodic_delta(&self.periods, self.point(n), self.point(n + 1), out);
    }

    /// The path of a subset of coordinates.
    pub fn coordinates(&self, range: Range<usize>) -> SamplePath {
        let d = range.len();
        let mut values = Vec::with_capacity((self.grid.n_steps + 1) * d);
        for n in 0..=self.grid.n_steps {
            values.extend_from_slice(&self.point(n)[range.clone()]);
        }
        SamplePath {
            grid: self.grid.clone(),
            dim: d,
            values,
            periods: self.periods[range].to_vec(),
            alive_until: self.alive_until,
        }
    }

    /// Pushes the path through `f`, truncating where the image fails `guard`.
    pub fn map(
        &self,
        target_dim: usize,
        periods: Vec<Option<f64>>,
        guard: &dyn Fn(&[f64]) -> bool,
        f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<SamplePath> {
        check_len(target_dim, periods.len())?;
        let mut values = Vec::with_capacity((self.grid.n_steps + 1) * target_dim);
        let mut alive = self.alive_until;
        for n in 0..=self.grid.n_steps {
            if n > alive {
                let last = values[(n - 1) * target_dim..n * target_dim].to_vec();
                values.extend(last);
                continue;
            }
            let y = f(self.point(n))?;
            check_len(target_dim, y.len())?;
            if !guard(&y) {
                if n == 0 {
                    return Err(Error::ChartBoundary { point: y });
                }
                alive = n - 1;
                let last = values[(n - 1) * target_dim..n * target_dim].to_vec();
                values.extend(last);
                continue;
            }
            values.extend(y);
        }
        SamplePath::from_values(self.grid.clone(), target_dim, values, periods, alive)
    }

    /// Every `factor`-th point, on the grid with step `factor·dt`.
    pub fn subsample(&self, factor: usize) -> Result<SamplePath> {
        if factor == 0 || !self.grid.n_steps.is_multiple_of(factor) {
            return Err(Error::Precondition(format!(
                "cannot subsample {} steps by {factor}",
                self.grid.n_steps
            )));
        }
        let grid = TimeGrid::new(self.grid.t0, self.grid.dt * factor as f64, self.grid.n_steps / factor)?;
        let mut values = Vec::with_capacity((grid.n_steps + 1) * self.dim);
        for n in 0..=grid.n_steps {
            values.extend_from_slice(self.point(n * factor));
        }
        Ok(SamplePath {
            grid,
            dim: self.dim,
            values,
            periods: self.periods.clone(),
            alive_until: self.alive_until / factor,
        })
    }

    /// Concatenates the coordinates of two paths on the same grid.
    pub fn product(&self, other: &SamplePath) -> Result<SamplePath> {
        if self.grid != other.grid {
            return Err(Error::Precondition("paths live on different grids".into()));
        }
        let d = self.dim + other.dim;
        let mut values = Vec::with_capacity((self.grid.n_steps + 1) * d);
        for n in 0..=self.grid.n_steps {
            values.extend_from_slice(self.point(n));
            values.extend_from_slice(other.point(n));
        }
        let mut periods = self.periods.clone();
        periods.extend_from_slice(&other.periods);
        Ok(SamplePath {
            grid: self.grid.clone(),
            dim: d,
            values,
            periods,
            alive_until: self.alive_until.min(other.alive_until),
        })
    }
}

/// Running brackets `[X^A, X^B]_t` at every grid index.
#[derive(Clone, Debug)]
pub struct QuadraticCovariation {
    pub cumulative: Vec<DMatrix<f64>>,
}

impl QuadraticCovariation {
    pub fn at(&self, n: usize) -> &DMatrix<f64> {
        &self.cumulative[n]
    }
}

/// `[X^A, X^B]_n = Σ_{s<n} ΔX^A_s ΔX^B_s`, constant after `alive_until`.
pub fn quadratic_covariation(path: &SamplePath) -> QuadraticCovariation {
    let d = path.dim();
    let mut cumulative = Vec::with_capacity(path.grid().n_steps + 1);
    let mut acc = DMatrix::zeros(d, d);
    cumulative.push(acc.clone());
    let mut dx = vec![0.0; d];
    for n in 0..path.grid().n_steps {
        if n < path.alive_until() {
            path.increment(n, &mut dx);
            let v = DVector::from_column_slice(&dx);
            acc += &v * v.transpose();
        }
        cumulative.push(acc.clone());
    }
    QuadraticCovariation { cumulative }
}

/// Drift and diffusion coefficients at a point.
pub type Coefficients = (DVector<f64>, DMatrix<f64>);

/// An Itô SDE `dX = b(X)dt + σ(X)dW` in a chart. The coefficient field may
/// fail with a chart-boundary error, which stops the path.
#[derive(Clone)]
pub struct Sde {
    dim: usize,
    noise_dim: usize,
    coefficients: Field<Result<Coefficients>>,
    periods: Vec<Option<f64>>,
    guard: Field<bool>,
}

impl fmt::Debug for Sde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sde")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .finish()
    }
}

impl Sde {
    pub fn new(dim: usize, noise_dim: usize, coefficients: Field<Result<Coefficients>>) -> Self {
        Self {
            dim,
            noise_dim,
            coefficients,
            periods: vec![None; dim],
            guard: Arc::new(|x: &[f64]| x.iter().all(|v| v.is_finite())),
        }
    }

    pub fn constant(drift: Vec<f64>, diffusion: DMatrix<f64>) -> Self {
        let dim = drift.len();
        assert_eq!(diffusion.nrows(), dim);
        let noise_dim = diffusion.ncols();
        let b = DVector::from_vec(drift);
        Self::new(dim, noise_dim, Arc::new(move |_| Ok((b.clone(), diffusion.clone()))))
    }

    /// Brownian motion of `(M, g)`: `b^i = −½ g^{jk} Γ^i_{jk}`, `σσᵀ = g⁻¹`.
    pub fn brownian(man: &ChartedManifold) -> Self {
        let m = man.clone();
        let dim = man.dim();
        Self::new(
            dim,
            dim,
            Arc::new(move |x: &[f64]| {
                if !m.contains(x) {
                    return Err(Error::ChartBoundary { point: x.to_vec() });
                }
                let ginv = m.metric_inverse(x)?;
                let gamma = m.christoffels(x)?;
                let drift = gamma.contract_matrix(&ginv) * -0.5;
                let sigma = ginv.cholesky().ok_or_else(|| Error::DegenerateMetric {
                    point: x.to_vec(),
                    reason: "inverse metric has no Cholesky factor".into(),
                })?;
                Ok((drift, sigma.l()))
            }),
        )
        .with_periods(man.periods().to_vec())
        .with_guard(man.guard_field())
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

    /// Adds a constant drift.
    pub fn with_extra_drift(self, extra: Vec<f64>) -> Self {
        assert_eq!(extra.len(), self.dim);
        let inner = self.coefficients.clone();
        let e = DVector::from_vec(extra);
        Self {
            coefficients: Arc::new(move |x| inner(x).map(|(b, s)| (b + &e, s))),
            ..self
        }
    }

    /// Independent components: `(X, Y)` with block-diagonal diffusion.
    pub fn product(a: &Sde, b: &Sde) -> Sde {
        let (da, db) = (a.dim, b.dim);
        let (na, nb) = (a.noise_dim, b.noise_dim);
        let (ca, cb) = (a.coefficients.clone(), b.coefficients.clone());
        let (ga, gb) = (a.guard.clone(), b.guard.clone());
        let mut periods = a.periods.clone();
        periods.extend_from_slice(&b.periods);
        Sde::new(
            da + db,
            na + nb,
            Arc::new(move |x: &[f64]| {
                let (ba, sa) = ca(&x[..da])?;
                let (bb, sb) = cb(&x[da..])?;
                let mut drift = DVector::zeros(da + db);
                drift.rows_mut(0, da).copy_from(&ba);
                drift.rows_mut(da, db).copy_from(&bb);
                let mut sigma = DMatrix::zeros(da + db, na + nb);
                sigma.view_mut((0, 0), (da, na)).copy_from(&sa);
                sigma.view_mut((da, na), (db, nb)).copy_from(&sb);
                Ok((drift, sigma))
            }),
        )
        .with_periods(periods)
        .with_guard(Arc::new(move |x: &[f64]| ga(&x[..da]) && gb(&x[da..])))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }
}

/// The per-path generator: master seed, stream = path index.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// Euler–Maruyama with a caller-supplied generator.
pub fn simulate_sde_with<R: Rng + ?Sized>(sde: &Sde, x0: &[f64], grid: &TimeGrid, rng: &mut R) -> Result<SamplePath> {
    check_len(sde.dim, x0.len())?;
    let d = sde.dim;
    let mut x = x0.to_vec();
    wrap_periodic(&sde.periods, &mut x);
    if !(sde.guard)(&x) {
        return Err(Error::Precondition(format!(
            "initial point {x:?} lies outside the domain"
        )));
    }
    let mut values = Vec::with_capacity((grid.n_steps + 1) * d);
    values.extend_from_slice(&x);
    let mut alive = grid.n_steps;
    let sqrt_dt = grid.dt.sqrt();
    let mut dw = DVector::zeros(sde.noise_dim);
    for n in 0..grid.n_steps {
        let (b, s) = match (sde.coefficients)(&x) {
            Ok(c) => c,
            Err(Error::ChartBoundary { .. }) => {
                alive = n;
                break;
            }
            Err(e) => return Err(e),
        };
        for w in dw.iter_mut() {
            *w = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
        }
        let step = b * grid.dt + s * &dw;
        let mut next: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
        wrap_periodic(&sde.periods, &mut next);
        if !(sde.guard)(&next) || next.iter().any(|v| !v.is_finite()) {
            alive = n;
            break;
        }
        x = next;
        values.extend_from_slice(&x);
    }
    // Freeze the remainder after a chart exit.
    while values.len() < (grid.n_steps + 1) * d {
        values.extend_from_slice(&x);
    }
    SamplePath::from_values(grid.clone(), d, values, sde.periods.clone(), alive)
}

pub fn simulate_sde(sde: &Sde, x0: &[f64], grid: &TimeGrid, seed: u64) -> Result<SamplePath> {
    simulate_sde_with(sde, x0, grid, &mut path_rng(seed, 0))
}

/// Brownian motion of `(M, g)` started at `x0`.
pub fn simulate_bm(man: &ChartedManifold, x0: &[f64], grid: &TimeGrid, seed: u64) -> Result<SamplePath> {
    simulate_sde(&Sde::brownian(man), x0, grid, seed)
}

/// A reproducible collection of paths.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub paths: Vec<SamplePath>,
    pub master_seed: u64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Fraction of paths that left the chart before the horizon.
    pub fn truncation_fraction(&self) -> f64 {
        if self.paths.is_empty() {
            return 0.0;
        }
        let cut = self.paths.iter().filter(|p| !p.is_complete()).count();
        cut as f64 / self.paths.len() as f64
    }
}

/// Runs `f(i, rng_i)` for every path index, in parallel when the `parallel`
/// feature is on; output order is the index order.
pub fn map_indexed<T, F>(n: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync + Send,
{
    let run = |i: usize| f(i, &mut path_rng(master_seed, i as u64));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(run).collect()
    }
}

pub fn simulate_ensemble(sde: &Sde, x0: &[f64], grid: &TimeGrid, n_paths: usize, master_seed: u64) -> Result<Ensemble> {
    let paths = map_indexed(n_paths, master_seed, |_, rng| simulate_sde_with(sde, x0, grid, rng))?;
    Ok(Ensemble { paths, master_seed })
}

pub fn bm_ensemble(
    man: &ChartedManifold,
    x0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    simulate_ensemble(&Sde::brownian(man), x0, grid, n_paths, master_seed)
}
