//! Named manifolds, bundles and sections used by the tests, the CLI and the demo.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bundles::{complete_lift_bundle, sasaki_bundle, ProductPrincipalBundle, TangentBundle, VectorFieldJet};
use crate::error::{Error, Result};
use crate::geometry::{ChartedManifold, Christoffel, Riemann};
use crate::submersion::AdaptedSubmersion;

/// Distance kept from the poles by the sphere chart.
pub const SPHERE_POLE_MARGIN: f64 = 0.05;

pub fn euclidean(dim: usize) -> ChartedManifold {
    ChartedManifold::new(
        format!("euclidean-{dim}"),
        dim,
        Arc::new(move |_| DMatrix::identity(dim, dim)),
    )
    .with_christoffels(Arc::new(move |_| Christoffel::zeros(dim)))
    .with_riemann(Arc::new(move |_| Riemann::zeros(dim)))
    .with_sample_box(vec![(-2.0, 2.0); dim])
}

/// `ℝ^dim / 2πℤ^dim` with the flat metric.
pub fn flat_torus(dim: usize) -> ChartedManifold {
    ChartedManifold::new("flat-torus", dim, Arc::new(move |_| DMatrix::identity(dim, dim)))
        .with_christoffels(Arc::new(move |_| Christoffel::zeros(dim)))
        .with_riemann(Arc::new(move |_| Riemann::zeros(dim)))
        .with_periods(vec![Some(2.0 * PI); dim])
        .with_sample_box(vec![(0.0, 2.0 * PI); dim])
}

/// Unit sphere in the polar chart `(θ, φ)`, `θ ∈ (ε, π − ε)`.
pub fn sphere() -> ChartedManifold {
    let metric = Arc::new(|x: &[f64]| {
        let s = x[0].sin();
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, s * s])
    });
    let christoffels = Arc::new(|x: &[f64]| {
        let (s, c) = x[0].sin_cos();
        let mut g = Christoffel::zeros(2);
        g.set(0, 1, 1, -s * c);
        g.set_sym(1, 0, 1, c / s);
        g
    });
    // R(e_i, e_j) e_k = g_jk e_i − g_ik e_j for constant curvature 1.
    let riemann = Arc::new(move |x: &[f64]| {
        let s = x[0].sin();
        let g = [[1.0, 0.0], [0.0, s * s]];
        let mut r = Riemann::zeros(2);
        for l in 0..2 {
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let di = if l == i { 1.0 } else { 0.0 };
                        let dj = if l == j { 1.0 } else { 0.0 };
                        r.set(l, k, i, j, g[j][k] * di - g[i][k] * dj);
                    }
                }
            }
        }
        r
    });
    ChartedManifold::new("sphere", 2, metric)
        .with_christoffels(christoffels)
        .with_riemann(riemann)
        .with_periods(vec![None, Some(2.0 * PI)])
        .with_guard(Arc::new(|x: &[f64]| {
            x[0] > SPHERE_POLE_MARGIN && x[0] < PI - SPHERE_POLE_MARGIN
        }))
        .with_sample_box(vec![(0.3, PI - 0.3), (0.0, 2.0 * PI)])
}

/// Poincaré half-plane `y > 0`, `g = y⁻² I`. Christoffels come from finite differences.
pub fn half_plane() -> ChartedManifold {
    ChartedManifold::new(
        "half-plane",
        2,
        Arc::new(|x: &[f64]| DMatrix::identity(2, 2) / (x[1] * x[1])),
    )
    .with_guard(Arc::new(|x: &[f64]| x[1] > 0.0))
    .with_sample_box(vec![(-1.0, 1.0), (0.5, 2.0)])
}

/// The circle `ℝ/2πℤ` with the flat metric.
pub fn circle() -> ChartedManifold {
    ChartedManifold::new("circle", 1, Arc::new(|_| DMatrix::identity(1, 1)))
        .with_christoffels(Arc::new(|_| Christoffel::zeros(1)))
        .with_riemann(Arc::new(|_| Riemann::zeros(1)))
        .with_periods(vec![Some(2.0 * PI)])
        .with_sample_box(vec![(0.0, 2.0 * PI)])
}

/// The unit circle in the non-arclength coordinate `s` with angle `s + ε sin s`,
/// so `g = (1 + ε cos s)²` and the connection is not flat in this chart.
pub fn warped_circle(eps: f64) -> ChartedManifold {
    assert!(eps.abs() < 1.0);
    ChartedManifold::new(
        "warped-circle",
        1,
        Arc::new(move |x: &[f64]| {
            let w = 1.0 + eps * x[0].cos();
            DMatrix::from_element(1, 1, w * w)
        }),
    )
    .with_christoffels(Arc::new(move |x: &[f64]| {
        let mut g = Christoffel::zeros(1);
        g.set(0, 0, 0, -eps * x[0].sin() / (1.0 + eps * x[0].cos()));
        g
    }))
    .with_riemann(Arc::new(|_| Riemann::zeros(1)))
    .with_periods(vec![Some(2.0 * PI)])
    .with_sample_box(vec![(0.0, 2.0 * PI)])
}

/// Base manifolds addressable by name.
pub fn manifold(name: &str) -> Result<ChartedManifold> {
    match name {
        "euclidean-plane" => Ok(euclidean(2)),
        "flat-torus" => Ok(flat_torus(2)),
        "sphere" => Ok(sphere()),
        "half-plane" => Ok(half_plane()),
        "circle" => Ok(circle()),
        _ => Err(Error::Config(format!("unknown manifold `{name}`"))),
    }
}

pub const MANIFOLD_NAMES: &[&str] = &["euclidean-plane", "flat-torus", "sphere", "half-plane", "circle"];

pub const BUNDLE_NAMES: &[&str] = &[
    "euclidean-tm-complete",
    "flat-torus-tm-complete",
    "flat-torus-tm-sasaki",
    "sphere-tm-complete",
    "sphere-tm-sasaki",
    "torus-x-circle",
    "torus-x-warped-circle",
];

/// A named total space: either a tangent bundle or a product principal bundle.
#[derive(Clone, Debug)]
pub enum Bundle {
    Tangent(TangentBundle),
    Product(ProductPrincipalBundle),
}

impl Bundle {
    pub fn submersion(&self) -> &AdaptedSubmersion {
        match self {
            Bundle::Tangent(tb) => tb.submersion(),
            Bundle::Product(pb) => pb.submersion(),
        }
    }

    pub fn base(&self) -> &ChartedManifold {
        self.submersion().base()
    }
}

pub fn bundle(name: &str) -> Result<Bundle> {
    let b = match name {
        "euclidean-tm-complete" => Bundle::Tangent(complete_lift_bundle(euclidean(2))),
        "flat-torus-tm-complete" => Bundle::Tangent(complete_lift_bundle(flat_torus(2))),
        "flat-torus-tm-sasaki" => Bundle::Tangent(sasaki_bundle(flat_torus(2))),
        "sphere-tm-complete" => Bundle::Tangent(complete_lift_bundle(sphere())),
        "sphere-tm-sasaki" => Bundle::Tangent(sasaki_bundle(sphere())),
        "torus-x-circle" => Bundle::Product(ProductPrincipalBundle::new(flat_torus(2), circle())),
        "torus-x-warped-circle" => Bundle::Product(ProductPrincipalBundle::new(flat_torus(2), warped_circle(0.3))),
        _ => return Err(Error::Config(format!("unknown bundle `{name}`"))),
    };
    Ok(b)
}

pub const SECTION_NAMES: &[&str] = &[
    "zero",
    "constant-field",
    "sin-field",
    "mixed-trig-field",
    "killing-field",
    "polar-field",
    "gradient-field",
];

/// Vector fields on a base, used as sections of `TM`.
///
/// `params` are numeric arguments: an amplitude for the trigonometric fields,
/// the two components for `constant-field`.
pub fn vector_field(name: &str, params: &[f64], base_dim: usize) -> Result<VectorFieldJet> {
    let p = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
    let zeros = move || DMatrix::<f64>::zeros(base_dim, base_dim);
    let field = match name {
        "zero" => VectorFieldJet::new(
            base_dim,
            Arc::new(move |_| DVector::zeros(base_dim)),
            Arc::new(move |_| DMatrix::zeros(base_dim, base_dim)),
            Arc::new(move |_| vec![zeros(); base_dim]),
        ),
        "constant-field" => {
            let c: Vec<f64> = (0..base_dim).map(|i| p(i, 1.0)).collect();
            VectorFieldJet::new(
                base_dim,
                Arc::new(move |_| DVector::from_column_slice(&c)),
                Arc::new(move |_| DMatrix::zeros(base_dim, base_dim)),
                Arc::new(move |_| vec![zeros(); base_dim]),
            )
        }
        // V = (a sin y¹, 0, …)
        "sin-field" => {
            let a = p(0, 1.0);
            VectorFieldJet::new(
                base_dim,
                Arc::new(move |y: &[f64]| {
                    let mut v = DVector::zeros(base_dim);
                    v[0] = a * y[0].sin();
                    v
                }),
                Arc::new(move |y: &[f64]| {
                    let mut j = DMatrix::zeros(base_dim, base_dim);
                    j[(0, 0)] = a * y[0].cos();
                    j
                }),
                Arc::new(move |y: &[f64]| {
                    let mut h = vec![zeros(); base_dim];
                    h[0][(0, 0)] = -a * y[0].sin();
                    h
                }),
            )
        }
        // V = a (cos y², sin y¹)
        "mixed-trig-field" => {
            if base_dim != 2 {
                return Err(Error::Config("mixed-trig-field needs a 2-dimensional base".into()));
            }
            let a = p(0, 1.0);
            VectorFieldJet::new(
                2,
                Arc::new(move |y: &[f64]| DVector::from_vec(vec![a * y[1].cos(), a * y[0].sin()])),
                Arc::new(move |y: &[f64]| DMatrix::from_row_slice(2, 2, &[0.0, -a * y[1].sin(), a * y[0].cos(), 0.0])),
                Arc::new(move |y: &[f64]| {
                    vec![
                        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -a * y[1].cos()]),
                        DMatrix::from_row_slice(2, 2, &[-a * y[0].sin(), 0.0, 0.0, 0.0]),
                    ]
                }),
            )
        }
        // ∂_φ on the sphere chart (rotation about the polar axis).
        "killing-field" => {
            if base_dim != 2 {
                return Err(Error::Config("killing-field needs a 2-dimensional base".into()));
            }
            let a = p(0, 1.0);
            VectorFieldJet::new(
                2,
                Arc::new(move |_| DVector::from_vec(vec![0.0, a])),
                Arc::new(|_| DMatrix::zeros(2, 2)),
                Arc::new(|_| vec![DMatrix::zeros(2, 2); 2]),
            )
        }
        // ∂_θ on the sphere chart.
        "polar-field" => {
            if base_dim != 2 {
                return Err(Error::Config("polar-field needs a 2-dimensional base".into()));
            }
            let a = p(0, 1.0);
            VectorFieldJet::new(
                2,
                Arc::new(move |_| DVector::from_vec(vec![a, 0.0])),
                Arc::new(|_| DMatrix::zeros(2, 2)),
                Arc::new(|_| vec![DMatrix::zeros(2, 2); 2]),
            )
        }
        // a sin θ ∂_θ, the gradient of −a cos θ on the sphere chart.
        "gradient-field" => {
            if base_dim != 2 {
                return Err(Error::Config("gradient-field needs a 2-dimensional base".into()));
            }
            let a = p(0, 1.0);
            VectorFieldJet::new(
                2,
                Arc::new(move |y: &[f64]| DVector::from_vec(vec![a * y[0].sin(), 0.0])),
                Arc::new(move |y: &[f64]| DMatrix::from_row_slice(2, 2, &[a * y[0].cos(), 0.0, 0.0, 0.0])),
                Arc::new(move |y: &[f64]| {
                    vec![
                        DMatrix::from_row_slice(2, 2, &[-a * y[0].sin(), 0.0, 0.0, 0.0]),
                        DMatrix::zeros(2, 2),
                    ]
                }),
            )
        }
        _ => return Err(Error::Config(format!("unknown section `{name}`"))),
    };
    Ok(field)
}
