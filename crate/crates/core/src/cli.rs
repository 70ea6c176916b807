//! Config-driven experiment runner behind the `vertmart` binary.
//!
//! A run loads an [`ExperimentConfig`] from TOML, builds the named geometry,
//! section and ensemble, executes one experiment and writes a results CSV and
//! a summary JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bundles::{
    canonical_vertical_form, principal_split_test, section_of_tm, tm_vertical_martingale_criterion, TangentBundle,
};
use crate::corpus::{self, Bundle};
use crate::error::{Error, Result};
use crate::geometry::ChartedManifold;
use crate::integrals::{conversion_residual, QuadraticForm, RealPath};
use crate::maps::{
    geometric_ito_residual, is_harmonic_section, stochastic_harmonicity_test, stratonovich_transfer_residual,
    tension_field, BrownianConfig, SmoothMap,
};
use crate::martingale::{
    brownian_check, martingale_test, random_quadratic_form, Estimate, MartingaleConfig, MartingaleReport,
};
use crate::paths::{map_indexed, simulate_sde_with, SamplePath, Sde, TimeGrid};
use crate::submersion::{AdaptedSubmersion, VerticalForm};

pub const EXPERIMENTS: &[&str] = &[
    "brownian-check",
    "conversion",
    "geometric-ito",
    "transfer",
    "harmonicity",
    "tm-criterion",
    "principal-split",
    "tension-map",
];

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Residual magnitudes below this are treated as exact zeros in order studies.
pub const EXACT_ZERO: f64 = 1e-12;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// A manifold name for `brownian-check`, a bundle name otherwise.
    pub geometry: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    pub grid: GridConfig,
    /// Base starting point; the middle of the sample box when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Fiber starting point; zero (tangent bundles) or the middle of the group box.
    #[serde(default)]
    pub fiber0: Option<Vec<f64>>,
    /// Diffusion coefficient of the fiber part of total-space processes on `TM`.
    #[serde(default = "one")]
    pub fiber_noise: f64,
    /// Constant drift added to the group part in `principal-split`.
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    #[serde(default)]
    pub section: Option<SectionConfig>,
    #[serde(default)]
    pub form: Option<FormConfig>,
    /// Points per axis for `tension-map`.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SectionConfig {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

/// `kind` is one of `metric`, `random` (bilinear forms for `brownian-check`),
/// `coordinate`, `fiber-linear`, `base-sin`, `constant`, `canonical` (vertical forms).
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FormConfig {
    pub kind: String,
    #[serde(default)]
    pub index: usize,
    #[serde(default)]
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub z_crit: f64,
    pub partitions: usize,
    pub min_paths: usize,
    /// Bound on the ensemble mean of `|residual|` at the horizon.
    pub residual: f64,
    /// Accepted range of the residual ratio under `dt` halving.
    pub ratio: [f64; 2],
    /// Relative error allowed between measured and predicted drift.
    pub relative: f64,
    /// Tension below which a section counts as harmonic.
    pub harmonic: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            z_crit: 3.0,
            partitions: 4,
            min_paths: 100,
            residual: 5e-2,
            ratio: [1.5, 3.0],
            relative: 0.1,
            harmonic: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub results: String,
    pub summary: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            results: "results.csv".into(),
            summary: "summary.json".into(),
        }
    }
}

fn default_paths() -> usize {
    500
}

fn default_resolution() -> usize {
    16
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.t0, self.grid.dt, self.grid.n_steps).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    fn martingale(&self) -> MartingaleConfig {
        MartingaleConfig {
            z_crit: self.tolerances.z_crit,
            partitions: self.tolerances.partitions,
            min_paths: self.tolerances.min_paths,
            ..MartingaleConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EstimateRow {
    pub name: String,
    pub mean: f64,
    pub se: f64,
    pub z: Option<f64>,
}

impl EstimateRow {
    fn new(name: impl Into<String>, e: &Estimate) -> Self {
        Self {
            name: name.into(),
            mean: e.mean,
            se: e.std_error,
            z: Some(e.z),
        }
    }

    fn report(name: impl Into<String>, r: &MartingaleReport) -> Self {
        Self {
            name: name.into(),
            mean: r.estimate,
            se: r.std_error,
            z: Some(r.z_score),
        }
    }

    fn value(name: impl Into<String>, v: f64) -> Self {
        Self {
            name: name.into(),
            mean: v,
            se: 0.0,
            z: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RunSummary {
    pub experiment: String,
    pub estimates: Vec<EstimateRow>,
    pub verdict: Verdict,
    pub truncation_fraction: f64,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
}

/// First CSV column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowKey {
    Path(usize),
    Checkpoint(f64),
    Point(usize),
}

impl RowKey {
    fn header(&self) -> &'static str {
        match self {
            RowKey::Path(_) => "path_id",
            RowKey::Checkpoint(_) => "checkpoint_t",
            RowKey::Point(_) => "point_id",
        }
    }

    fn cell(&self) -> String {
        match self {
            RowKey::Path(i) | RowKey::Point(i) => i.to_string(),
            RowKey::Checkpoint(t) => t.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub key: RowKey,
    pub quantity: String,
    pub value: f64,
}

impl ResultRow {
    fn new(key: RowKey, quantity: impl Into<String>, value: f64) -> Self {
        Self {
            key,
            quantity: quantity.into(),
            value,
        }
    }
}

/// What an experiment produces before it is written out.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub estimates: Vec<EstimateRow>,
    pub pass: bool,
    pub truncation_fraction: f64,
    pub rows: Vec<ResultRow>,
}

/// Runs the experiment named in `cfg` and returns its outcome without
/// touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    info!(
        "running {} on {} with {} paths, seed {}",
        cfg.experiment, cfg.geometry, cfg.n_paths, cfg.seed
    );
    match cfg.experiment.as_str() {
        "brownian-check" => brownian(cfg),
        "conversion" => conversion(cfg),
        "geometric-ito" => geometric_ito(cfg),
        "transfer" => transfer(cfg),
        "harmonicity" => harmonicity(cfg),
        "tm-criterion" => tm_criterion(cfg),
        "principal-split" => principal_split(cfg),
        "tension-map" => tension_map(cfg),
        other => Err(Error::Config(format!("unknown experiment `{other}`"))),
    }
}

/// Runs `cfg` and writes the results CSV and summary JSON under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    let outcome = execute(cfg)?;
    let summary = RunSummary {
        experiment: cfg.experiment.clone(),
        estimates: outcome.estimates,
        verdict: Verdict::from_bool(outcome.pass),
        truncation_fraction: outcome.truncation_fraction,
        seed: cfg.seed,
        version: VERSION.to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::create_dir_all(out)?;
    write_results(&out.join(&cfg.output.results), &outcome.rows)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join(&cfg.output.summary), json + "\n")?;
    info!("verdict {:?}", summary.verdict);
    Ok(summary)
}

fn write_results(path: &PathBuf, rows: &[ResultRow]) -> Result<()> {
    let header = rows.first().map(|r| r.key.header()).unwrap_or("path_id");
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record([header, "quantity", "value"]).map_err(csv_error)?;
    for r in rows {
        w.write_record([r.key.cell(), r.quantity.clone(), r.value.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Experiments, manifolds, bundles and sections, one group per line.
pub fn listing() -> String {
    format!(
        "experiments: {}\nmanifolds: {}\nbundles: {}\nsections: {}\n",
        EXPERIMENTS.join(", "),
        corpus::MANIFOLD_NAMES.join(", "),
        corpus::BUNDLE_NAMES.join(", "),
        corpus::SECTION_NAMES.join(", "),
    )
}

fn midpoint(b: &[(f64, f64)]) -> Vec<f64> {
    b.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
}

fn base_start(cfg: &ExperimentConfig, base: &ChartedManifold) -> Result<Vec<f64>> {
    let x0 = cfg.x0.clone().unwrap_or_else(|| midpoint(base.sample_box()));
    if x0.len() != base.dim() {
        return Err(Error::Config(format!(
            "x0 has {} entries, expected {}",
            x0.len(),
            base.dim()
        )));
    }
    Ok(x0)
}

fn total_start(cfg: &ExperimentConfig, bundle: &Bundle) -> Result<Vec<f64>> {
    let sub = bundle.submersion();
    let mut x0 = base_start(cfg, sub.base())?;
    let fiber0 = match (&cfg.fiber0, bundle) {
        (Some(f), _) => f.clone(),
        (None, Bundle::Tangent(_)) => vec![0.0; sub.fiber_dim()],
        (None, Bundle::Product(_)) => midpoint(sub.fiber_box()),
    };
    if fiber0.len() != sub.fiber_dim() {
        return Err(Error::Config(format!(
            "fiber0 has {} entries, expected {}",
            fiber0.len(),
            sub.fiber_dim()
        )));
    }
    x0.extend(fiber0);
    Ok(x0)
}

fn tangent(bundle: &Bundle, experiment: &str) -> Result<TangentBundle> {
    match bundle {
        Bundle::Tangent(tb) => Ok(tb.clone()),
        Bundle::Product(_) => Err(Error::Config(format!("{experiment} needs a tangent bundle"))),
    }
}

fn section(cfg: &ExperimentConfig, tb: &TangentBundle) -> Result<SmoothMap> {
    let s = cfg
        .section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} needs a [section]", cfg.experiment)))?;
    Ok(section_of_tm(&corpus::vector_field(
        &s.name,
        &s.params,
        tb.base().dim(),
    )?))
}

/// Total-space process: base Brownian motion times a fiber diffusion
/// (constant noise on `TM`, group Brownian motion on products).
fn total_space_sde(cfg: &ExperimentConfig, bundle: &Bundle) -> Sde {
    match bundle {
        Bundle::Tangent(tb) => {
            let m = tb.base().dim();
            let fiber = Sde::constant(vec![0.0; m], DMatrix::identity(m, m) * cfg.fiber_noise);
            Sde::product(&Sde::brownian(tb.base()), &fiber)
        }
        Bundle::Product(pb) => Sde::product(&Sde::brownian(pb.base()), &Sde::brownian(pb.group())),
    }
}

fn vertical_form(cfg: &ExperimentConfig, bundle: &Bundle) -> Result<VerticalForm> {
    let sub = bundle.submersion();
    let (m, k) = (sub.base_dim(), sub.fiber_dim());
    let default = FormConfig {
        kind: "fiber-linear".into(),
        index: 0,
        coeffs: Vec::new(),
        seed: 0,
    };
    let f = cfg.form.as_ref().unwrap_or(&default);
    if f.index >= k {
        return Err(Error::Config(format!("form index {} out of range", f.index)));
    }
    let need_coeffs = || {
        if f.coeffs.len() == k {
            Ok(f.coeffs.clone())
        } else {
            Err(Error::Config(format!("form `{}` needs {k} coeffs", f.kind)))
        }
    };
    match f.kind.as_str() {
        "coordinate" => Ok(VerticalForm::coordinate(k, f.index)),
        "constant" => Ok(VerticalForm::constant(need_coeffs()?)),
        "canonical" => canonical_vertical_form(&tangent(bundle, "form `canonical`")?, &need_coeffs()?),
        "fiber-linear" => {
            // c_a = u^a on the chosen index, zero elsewhere.
            let a = f.index;
            Ok(VerticalForm::new(
                k,
                Arc::new(move |p: &[f64]| {
                    let mut c = DVector::zeros(k);
                    c[a] = p[m + a];
                    c
                }),
            )
            .with_derivative(Arc::new(move |_: &[f64]| {
                let mut d = DMatrix::zeros(k, m + k);
                d[(a, m + a)] = 1.0;
                d
            })))
        }
        "base-sin" => {
            // c_a = sin(x^a) on the chosen index, zero elsewhere.
            let a = f.index;
            if a >= m {
                return Err(Error::Config(format!("form index {a} out of range")));
            }
            Ok(VerticalForm::new(
                k,
                Arc::new(move |p: &[f64]| {
                    let mut c = DVector::zeros(k);
                    c[a] = p[a].sin();
                    c
                }),
            )
            .with_derivative(Arc::new(move |p: &[f64]| {
                let mut d = DMatrix::zeros(k, m + k);
                d[(a, a)] = p[a].cos();
                d
            })))
        }
        other => Err(Error::Config(format!("unknown vertical form `{other}`"))),
    }
}

fn bilinear_form(cfg: &ExperimentConfig, man: &ChartedManifold) -> Result<QuadraticForm> {
    let kind = cfg.form.as_ref().map(|f| f.kind.as_str()).unwrap_or("metric");
    match kind {
        "metric" => {
            let g = man.clone();
            Ok(QuadraticForm::new(man.dim(), Arc::new(move |x: &[f64]| g.metric(x))))
        }
        "random" => Ok(random_quadratic_form(
            man.dim(),
            cfg.form.as_ref().map(|f| f.seed).unwrap_or(0),
        )),
        other => Err(Error::Config(format!("unknown bilinear form `{other}`"))),
    }
}

fn checkpoint_rows(report: &MartingaleReport, grid: &TimeGrid, name: &str, rows: &mut Vec<ResultRow>) {
    let q = report.interval_z.len();
    for (i, z) in report.interval_z.iter().enumerate() {
        let n = (i + 1) * grid.n_steps / q;
        rows.push(ResultRow::new(
            RowKey::Checkpoint(grid.time(n)),
            format!("{name}.interval_z"),
            *z,
        ));
    }
}

fn terminal(p: &RealPath) -> Option<f64> {
    p.is_complete().then(|| p.terminal())
}

fn brownian(cfg: &ExperimentConfig) -> Result<Outcome> {
    let man = corpus::manifold(&cfg.geometry)?;
    let grid = cfg.time_grid()?;
    let x0 = base_start(cfg, &man)?;
    let b = bilinear_form(cfg, &man)?;
    let sde = Sde::brownian(&man);
    let residuals = map_indexed(cfg.n_paths, cfg.seed, |_, rng| {
        let x = simulate_sde_with(&sde, &x0, &grid, rng)?;
        brownian_check(&x, &man, &b)
    })?;
    let report = martingale_test(&residuals, &cfg.martingale())?;
    let rows = residuals
        .iter()
        .enumerate()
        .filter_map(|(i, r)| terminal(r).map(|v| ResultRow::new(RowKey::Path(i), "residual", v)))
        .collect();
    Ok(Outcome {
        estimates: vec![EstimateRow::report("residual", &report)],
        pass: report.pass,
        truncation_fraction: report.truncation_fraction,
        rows,
    })
}

/// Evaluates a residual functional on each path at `dt` and at `dt/2`, with
/// the coarse path taken as every other point of the fine one.
fn order_study<F>(
    cfg: &ExperimentConfig,
    simulate: impl Fn(&TimeGrid, &mut rand_chacha::ChaCha8Rng) -> Result<SamplePath> + Sync + Send,
    residual: F,
) -> Result<Outcome>
where
    F: Fn(&SamplePath) -> Result<RealPath> + Sync + Send,
{
    let grid = cfg.time_grid()?;
    let fine = TimeGrid::new(grid.t0, grid.dt / 2.0, 2 * grid.n_steps)?;
    let pairs = map_indexed(cfg.n_paths, cfg.seed, |_, rng| {
        let x = simulate(&fine, rng)?;
        if !x.is_complete() {
            return Ok(None);
        }
        let coarse = terminal(&residual(&x.subsample(2)?)?);
        let finer = terminal(&residual(&x)?);
        Ok(coarse.zip(finer))
    })?;
    let usable: Vec<(usize, (f64, f64))> = pairs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|v| (i, v)))
        .collect();
    if usable.len() < cfg.tolerances.min_paths.max(2) {
        return Err(Error::InsufficientSample {
            usable: usable.len(),
            required: cfg.tolerances.min_paths.max(2),
        });
    }
    let coarse: Vec<f64> = usable.iter().map(|(_, v)| v.0).collect();
    let finer: Vec<f64> = usable.iter().map(|(_, v)| v.1).collect();
    let abs = |v: &[f64]| Estimate::from_samples(&v.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let (a1, a2) = (abs(&coarse), abs(&finer));
    let exact = a1.mean <= EXACT_ZERO && a2.mean <= EXACT_ZERO;
    let ratio = a1.mean / a2.mean;
    let ratio_se = ratio * ((a1.std_error / a1.mean).powi(2) + (a2.std_error / a2.mean).powi(2)).sqrt();
    let [lo, hi] = cfg.tolerances.ratio;
    let pass = a1.mean <= cfg.tolerances.residual && (exact || (lo..=hi).contains(&ratio));
    debug!("residual means {} and {}, ratio {ratio}", a1.mean, a2.mean);
    let mut rows = Vec::with_capacity(2 * usable.len());
    for (i, (c, f)) in &usable {
        rows.push(ResultRow::new(RowKey::Path(*i), "residual_dt", *c));
        rows.push(ResultRow::new(RowKey::Path(*i), "residual_dt_half", *f));
    }
    let mut estimates = vec![
        EstimateRow::new("residual_dt", &Estimate::from_samples(&coarse)),
        EstimateRow::new("abs_residual_dt", &a1),
        EstimateRow::new("abs_residual_dt_half", &a2),
    ];
    estimates.push(EstimateRow {
        name: "ratio".into(),
        mean: if exact { 0.0 } else { ratio },
        se: if exact { 0.0 } else { ratio_se },
        z: None,
    });
    Ok(Outcome {
        estimates,
        pass,
        truncation_fraction: 1.0 - usable.len() as f64 / pairs.len() as f64,
        rows,
    })
}

fn conversion(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = corpus::bundle(&cfg.geometry)?;
    let sub = bundle.submersion().clone();
    let theta = vertical_form(cfg, &bundle)?;
    let sde = total_space_sde(cfg, &bundle);
    let x0 = total_start(cfg, &bundle)?;
    order_study(
        cfg,
        |g, rng| simulate_sde_with(&sde, &x0, g, rng),
        |x| conversion_residual(&theta, &sub, x),
    )
}

fn section_study(
    cfg: &ExperimentConfig,
    residual: fn(&SmoothMap, &VerticalForm, &AdaptedSubmersion, &ChartedManifold, &SamplePath) -> Result<RealPath>,
) -> Result<(Outcome, TangentBundle, SmoothMap)> {
    let bundle = corpus::bundle(&cfg.geometry)?;
    let tb = tangent(&bundle, &cfg.experiment)?;
    let sigma = section(cfg, &tb)?;
    let theta = vertical_form(cfg, &bundle)?;
    let base = tb.base().clone();
    let sde = Sde::brownian(&base);
    let x0 = base_start(cfg, &base)?;
    let sub = tb.submersion().clone();
    let outcome = order_study(
        cfg,
        |g, rng| simulate_sde_with(&sde, &x0, g, rng),
        |x| residual(&sigma, &theta, &sub, &base, x),
    )?;
    Ok((outcome, tb, sigma))
}

fn geometric_ito(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (mut outcome, tb, sigma) = section_study(cfg, geometric_ito_residual)?;
    let bm = BrownianConfig {
        x0: base_start(cfg, tb.base())?,
        grid: cfg.time_grid()?,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    };
    let h = stochastic_harmonicity_test(&sigma, tb.submersion(), &bm, &cfg.martingale())?;
    let z = cfg.tolerances.z_crit;
    for a in 0..h.measured.len() {
        outcome
            .estimates
            .push(EstimateRow::new(format!("drift_measured.{a}"), &h.measured[a]));
        outcome
            .estimates
            .push(EstimateRow::new(format!("drift_predicted.{a}"), &h.predicted[a]));
        outcome
            .estimates
            .push(EstimateRow::new(format!("drift_gap.{a}"), &h.gap[a]));
        // Relative agreement where the drift is visible, absolute otherwise.
        let ok = if h.predicted[a].z.abs() > z {
            (h.measured[a].mean - h.predicted[a].mean).abs() <= cfg.tolerances.relative * h.predicted[a].mean.abs()
        } else {
            h.gap[a].z.abs() <= z
        };
        outcome.pass &= ok;
    }
    let rel = h.relative_drift_error();
    if rel.is_finite() {
        outcome.estimates.push(EstimateRow::value("relative_drift_error", rel));
    }
    Ok(outcome)
}

fn transfer(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (outcome, _, _) = section_study(cfg, |phi, theta, sub, _, x| {
        stratonovich_transfer_residual(phi, theta, sub, x)
    })?;
    Ok(outcome)
}

fn harmonicity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = corpus::bundle(&cfg.geometry)?;
    let tb = tangent(&bundle, &cfg.experiment)?;
    let sigma = section(cfg, &tb)?;
    let grid = cfg.time_grid()?;
    let bm = BrownianConfig {
        x0: base_start(cfg, tb.base())?,
        grid: grid.clone(),
        n_paths: cfg.n_paths,
        seed: cfg.seed,
    };
    let h = stochastic_harmonicity_test(&sigma, tb.submersion(), &bm, &cfg.martingale())?;
    let check = is_harmonic_section(&sigma, tb.submersion(), 64, cfg.tolerances.harmonic, cfg.seed)?;
    let mut estimates = Vec::new();
    let mut rows = Vec::new();
    for (a, r) in h.reports.iter().enumerate() {
        estimates.push(EstimateRow::report(format!("drift.{a}"), r));
        estimates.push(EstimateRow::new(format!("drift_predicted.{a}"), &h.predicted[a]));
        checkpoint_rows(r, &grid, &format!("drift.{a}"), &mut rows);
    }
    estimates.push(EstimateRow::value("max_tension", check.max_tension));
    Ok(Outcome {
        estimates,
        pass: h.passes(),
        truncation_fraction: h.truncation_fraction,
        rows,
    })
}

fn tm_criterion(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = corpus::bundle(&cfg.geometry)?;
    let tb = tangent(&bundle, &cfg.experiment)?;
    let sigma = section(cfg, &tb)?;
    let grid = cfg.time_grid()?;
    let sde = Sde::brownian(tb.base());
    let x0 = base_start(cfg, tb.base())?;
    let paths = map_indexed(cfg.n_paths, cfg.seed, |_, rng| {
        let b = simulate_sde_with(&sde, &x0, &grid, rng)?;
        sigma.map_path(&b, tb.submersion())
    })?;
    let report = tm_vertical_martingale_criterion(&paths, &tb, &cfg.martingale())?;
    let mut estimates = Vec::new();
    let mut rows = Vec::new();
    for (a, r) in report.reports.iter().enumerate() {
        estimates.push(EstimateRow::report(format!("combination.{a}"), r));
        estimates.push(EstimateRow::value(format!("defect.{a}"), report.defect[a]));
        checkpoint_rows(r, &grid, &format!("combination.{a}"), &mut rows);
    }
    Ok(Outcome {
        estimates,
        pass: report.passes(),
        truncation_fraction: report.reports.first().map(|r| r.truncation_fraction).unwrap_or(0.0),
        rows,
    })
}

fn principal_split(cfg: &ExperimentConfig) -> Result<Outcome> {
    let pb = match corpus::bundle(&cfg.geometry)? {
        Bundle::Product(pb) => pb,
        Bundle::Tangent(_) => return Err(Error::Config("principal-split needs a product bundle".into())),
    };
    let grid = cfg.time_grid()?;
    let k = pb.group().dim();
    let drift = cfg.drift.clone().unwrap_or_else(|| vec![0.0; k]);
    if drift.len() != k {
        return Err(Error::Config(format!(
            "drift has {} entries, expected {k}",
            drift.len()
        )));
    }
    let sde = Sde::product(
        &Sde::brownian(pb.base()),
        &Sde::brownian(pb.group()).with_extra_drift(drift),
    );
    let x0 = total_start(cfg, &Bundle::Product(pb.clone()))?;
    let paths = map_indexed(cfg.n_paths, cfg.seed, |_, rng| simulate_sde_with(&sde, &x0, &grid, rng))?;
    let report = principal_split_test(&pb, &paths, &cfg.martingale())?;
    let mut estimates = Vec::new();
    let mut rows = Vec::new();
    for (a, r) in report.vertical.iter().enumerate() {
        estimates.push(EstimateRow::report(format!("vertical.{a}"), r));
        checkpoint_rows(r, &grid, &format!("vertical.{a}"), &mut rows);
    }
    for (a, r) in report.group.iter().enumerate() {
        estimates.push(EstimateRow::report(format!("group.{a}"), r));
        checkpoint_rows(r, &grid, &format!("group.{a}"), &mut rows);
    }
    estimates.push(EstimateRow::value(
        "vertical_pass",
        f64::from(u8::from(report.vertical_pass())),
    ));
    estimates.push(EstimateRow::value(
        "group_pass",
        f64::from(u8::from(report.group_pass())),
    ));
    Ok(Outcome {
        estimates,
        pass: report.agree(),
        truncation_fraction: report.vertical.first().map(|r| r.truncation_fraction).unwrap_or(0.0),
        rows,
    })
}

fn tension_map(cfg: &ExperimentConfig) -> Result<Outcome> {
    let bundle = corpus::bundle(&cfg.geometry)?;
    let tb = tangent(&bundle, &cfg.experiment)?;
    let sigma = section(cfg, &tb)?;
    let base = tb.base();
    let r = cfg.resolution.max(1);
    let bx = base.sample_box();
    let m = base.dim();
    let mut rows = Vec::new();
    let mut max_tension: f64 = 0.0;
    let total = r.pow(m as u32);
    for id in 0..total {
        let mut rest = id;
        let y: Vec<f64> = bx
            .iter()
            .map(|(lo, hi)| {
                let i = rest % r;
                rest /= r;
                lo + (hi - lo) * (i as f64 + 0.5) / r as f64
            })
            .collect();
        let tau = tension_field(&sigma, tb.submersion(), base, &y)?;
        for (j, v) in y.iter().enumerate() {
            rows.push(ResultRow::new(RowKey::Point(id), format!("y.{j}"), *v));
        }
        for (a, v) in tau.iter().enumerate() {
            rows.push(ResultRow::new(RowKey::Point(id), format!("tension.{a}"), *v));
        }
        max_tension = max_tension.max(tau.amax());
    }
    Ok(Outcome {
        estimates: vec![EstimateRow::value("max_tension", max_tension)],
        pass: max_tension <= cfg.tolerances.harmonic,
        truncation_fraction: 0.0,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "experiment = \"tension-map\"\ngeometry = \"flat-torus-tm-complete\"\n{extra}\n[grid]\ndt = 1e-3\nn_steps = 100\n"
        ))
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = config("");
        assert_eq!(c.n_paths, 500);
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.output.results, "results.csv");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml(
            "experiment = \"x\"\ngeometry = \"y\"\nbogus = 1\n[grid]\ndt = 1.0\nn_steps = 1\n",
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn unknown_experiment_is_config_error() {
        let mut c = config("");
        c.experiment = "nope".into();
        assert!(matches!(execute(&c), Err(Error::Config(_))));
    }

    #[test]
    fn zero_steps_is_config_error() {
        let mut c = config("");
        c.grid.n_steps = 0;
        assert!(matches!(c.time_grid(), Err(Error::Config(_))));
    }

    #[test]
    fn tension_map_of_constant_field_is_harmonic() {
        let mut c = config("[section]\nname = \"constant-field\"\nparams = [1.0, 2.0]");
        c.resolution = 4;
        let o = execute(&c).unwrap();
        assert!(o.pass);
        assert_eq!(o.rows.len(), 16 * 4);
    }

    #[test]
    fn tension_map_of_sin_field_is_minus_sin() {
        let mut c = config("[section]\nname = \"sin-field\"");
        c.resolution = 3;
        let o = execute(&c).unwrap();
        assert!(!o.pass);
        // rows per point: y.0, y.1, tension.0, tension.1
        for chunk in o.rows.chunks(4) {
            assert!((chunk[2].value + chunk[0].value.sin()).abs() < 1e-6);
            assert!(chunk[3].value.abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_form_needs_tangent_bundle() {
        let mut c = config("[form]\nkind = \"canonical\"\ncoeffs = [1.0]");
        c.geometry = "torus-x-circle".into();
        let b = corpus::bundle(&c.geometry).unwrap();
        assert!(vertical_form(&c, &b).is_err());
    }

    #[test]
    fn listing_names_everything() {
        let l = listing();
        for name in EXPERIMENTS.iter().chain(corpus::BUNDLE_NAMES) {
            assert!(l.contains(name));
        }
    }
}
