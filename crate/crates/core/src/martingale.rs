//! Drift parts of paths on a submersion and a statistical martingale test
//! for ensembles of real paths.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::geometry::ChartedManifold;
use crate::integrals::{integrate_quadratic, QuadraticForm, RealPath};
use crate::paths::SamplePath;
use crate::submersion::AdaptedSubmersion;

/// `M^α_t = Σ (P_vΔX)^α + ½∂_B N^α_j ΔX^BΔX^j + ½Γ^{v,α}_{Rγ} ΔX^R (P_vΔX)^γ`,
/// one real path per fiber index. With the coordinate projector this is
/// `X^α_t − X^α_0 + ½Σ Γ^{v,α}_{βR} ΔX^βΔX^R`.
pub fn drift_part(x: &SamplePath, sub: &AdaptedSubmersion) -> Result<Vec<RealPath>> {
    check_len(sub.total_dim(), x.dim())?;
    let (m, k) = (sub.base_dim(), sub.fiber_dim());
    let n_total = m + k;
    let n_steps = x.grid().n_steps;
    let mut values = vec![vec![0.0; n_steps + 1]; k];
    let mut acc = vec![0.0; k];
    let mut dx = vec![0.0; n_total];
    let mut alive = x.alive_until();
    for n in 0..x.alive_until() {
        x.increment(n, &mut dx);
        let data = match sub.vertical_data(x.point(n)) {
            Ok(d) => d,
            Err(Error::ChartBoundary { .. }) => {
                alive = n;
                break;
            }
            Err(e) => return Err(e),
        };
        let w = data.vertical_part(&dx);
        for a in 0..k {
            let mut s = w[a];
            for (b, db) in data.projector_derivatives.iter().enumerate() {
                for j in 0..m {
                    s += 0.5 * db[(m + a, j)] * dx[b] * dx[j];
                }
            }
            for r in 0..n_total {
                for g in 0..k {
                    s += 0.5 * data.christoffels.mixed(a, r, g) * dx[r] * w[g];
                }
            }
            acc[a] += s;
            values[a][n + 1] = acc[a];
        }
    }
    let grid = x.grid().clone();
    Ok(values
        .into_iter()
        .zip(acc)
        .map(|(mut v, last)| {
            for val in v.iter_mut().skip(alive + 1) {
                *val = last;
            }
            RealPath::new(grid.clone(), v, alive)
        })
        .collect())
}

/// Settings of [`martingale_test`].
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleConfig {
    pub z_crit: f64,
    pub partitions: usize,
    pub min_paths: usize,
    /// Truncation fraction above which a report is flagged low-confidence.
    pub max_truncation: f64,
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        Self {
            z_crit: 3.0,
            partitions: 4,
            min_paths: 100,
            max_truncation: 0.2,
        }
    }
}

/// Mean, standard error and z-score of one statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub z: f64,
}

impl Estimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std_error = (var / n).sqrt();
        let z = if std_error > 0.0 {
            mean / std_error
        } else if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        };
        Self { mean, std_error, z }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleReport {
    /// Mean terminal value.
    pub estimate: f64,
    pub std_error: f64,
    pub z_score: f64,
    /// z-scores of the increments over the dyadic subintervals.
    pub interval_z: Vec<f64>,
    pub max_abs_z: f64,
    pub pass: bool,
    pub usable_paths: usize,
    pub total_paths: usize,
    pub truncation_fraction: f64,
    pub low_confidence: bool,
}

/// Tests whether an ensemble of real paths started at zero behaves like a
/// martingale: the terminal mean and the mean increment over each of
/// `partitions` equal subintervals must have `|z| ≤ z_crit`. Paths that did
/// not reach the horizon are dropped.
pub fn martingale_test(paths: &[RealPath], cfg: &MartingaleConfig) -> Result<MartingaleReport> {
    let usable: Vec<&RealPath> = paths.iter().filter(|p| p.is_complete()).collect();
    if usable.len() < cfg.min_paths.max(2) {
        return Err(Error::InsufficientSample {
            usable: usable.len(),
            required: cfg.min_paths.max(2),
        });
    }
    if cfg.partitions == 0 {
        return Err(Error::Precondition("partitions must be at least 1".into()));
    }
    let n_steps = usable[0].grid().n_steps;
    let terminal: Vec<f64> = usable.iter().map(|p| p.terminal() - p.value(0)).collect();
    let total = Estimate::from_samples(&terminal);
    let mut interval_z = Vec::with_capacity(cfg.partitions);
    for q in 0..cfg.partitions {
        let a = q * n_steps / cfg.partitions;
        let b = (q + 1) * n_steps / cfg.partitions;
        let inc: Vec<f64> = usable.iter().map(|p| p.value(b) - p.value(a)).collect();
        interval_z.push(Estimate::from_samples(&inc).z);
    }
    let max_abs_z = interval_z
        .iter()
        .chain(std::iter::once(&total.z))
        .map(|z| z.abs())
        .fold(0.0, f64::max);
    let truncation_fraction = 1.0 - usable.len() as f64 / paths.len() as f64;
    Ok(MartingaleReport {
        estimate: total.mean,
        std_error: total.std_error,
        z_score: total.z,
        interval_z,
        max_abs_z,
        pass: max_abs_z <= cfg.z_crit,
        usable_paths: usable.len(),
        total_paths: paths.len(),
        truncation_fraction,
        low_confidence: truncation_fraction > cfg.max_truncation,
    })
}

/// `∫b(dX, dX) − ∫ g^{ij} b_ij(X_s) ds`, which is a martingale for `g`-Brownian motion.
pub fn brownian_check(x: &SamplePath, man: &ChartedManifold, b: &QuadraticForm) -> Result<RealPath> {
    check_len(man.dim(), x.dim())?;
    let quad = integrate_quadratic(b, x)?;
    let dt = x.grid().dt;
    let mut values = vec![0.0; x.grid().n_steps + 1];
    let mut acc = 0.0;
    let alive = quad.alive_until();
    for (n, v) in values.iter_mut().enumerate().skip(1) {
        if n <= alive {
            let p = x.point(n - 1);
            let ginv = man.metric_inverse(p)?;
            acc += ginv.component_mul(&b.eval(p)).sum() * dt;
        }
        *v = quad.value(n) - acc;
    }
    Ok(RealPath::new(x.grid().clone(), values, alive))
}

/// A random smooth bilinear form built from a few trigonometric modes.
pub fn random_quadratic_form(dim: usize, seed: u64) -> QuadraticForm {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Integer frequencies keep the form periodic on tori.
    let w: Vec<f64> = (0..dim).map(|_| rng.random_range(1..=2) as f64).collect();
    QuadraticForm::new(
        dim,
        Arc::new(move |x: &[f64]| {
            let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi).sum();
            nalgebra::DMatrix::from_fn(dim, dim, |i, j| a[i * dim + j] + b[i * dim + j] * s.sin())
        }),
    )
}
