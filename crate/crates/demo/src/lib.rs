//! Browser bindings for a few vertmart computations.
//!
//! Every export returns a flat `Float64Array`; the page in `www/` draws it on
//! a canvas.

use wasm_bindgen::prelude::*;

use vertmart::bundles::section_of_tm;
use vertmart::corpus::{self, Bundle};
use vertmart::maps::tension_field;
use vertmart::martingale::drift_part;
use vertmart::paths::{map_indexed, simulate_bm, simulate_sde_with, Sde};
use vertmart::TimeGrid;

fn js(e: vertmart::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn tangent(name: &str) -> Result<vertmart::bundles::TangentBundle, JsValue> {
    match corpus::bundle(name).map_err(js)? {
        Bundle::Tangent(tb) => Ok(tb),
        Bundle::Product(_) => Err(JsValue::from_str("a tangent bundle is required")),
    }
}

fn lerp((lo, hi): (f64, f64), k: usize, n: usize) -> f64 {
    lo + (hi - lo) * (k as f64 + 0.5) / n as f64
}

/// `|τ^v|` of a vector-field section on an `n × n` grid of the base sample box,
/// row-major with the first coordinate along rows.
#[wasm_bindgen]
pub fn tension_grid(bundle: &str, section: &str, params: &[f64], n: usize) -> Result<Vec<f64>, JsValue> {
    let tb = tangent(bundle)?;
    let v = corpus::vector_field(section, params, tb.base().dim()).map_err(js)?;
    let sigma = section_of_tm(&v);
    let b = tb.base().sample_box().to_vec();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let y = [lerp(b[0], i, n), lerp(b[1], j, n)];
            let tau = tension_field(&sigma, tb.submersion(), tb.base(), &y).map_err(js)?;
            out.push(tau.norm());
        }
    }
    Ok(out)
}

/// Ensemble mean of the vertical drift `X^α − X^α_0 + ½∫Γ d[..]` of `σ(B_t)`,
/// one curve per fiber index, each of length `n_steps + 1`, concatenated.
#[wasm_bindgen]
pub fn drift_curves(
    bundle: &str,
    section: &str,
    params: &[f64],
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    let tb = tangent(bundle)?;
    let v = corpus::vector_field(section, params, tb.base().dim()).map_err(js)?;
    let sigma = section_of_tm(&v);
    let grid = TimeGrid::new(0.0, dt, n_steps).map_err(js)?;
    let sde = Sde::brownian(tb.base());
    let x0: Vec<f64> = tb.base().sample_box().iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let drifts = map_indexed(n_paths, seed as u64, |_, rng| {
        let b = simulate_sde_with(&sde, &x0, &grid, rng)?;
        drift_part(&sigma.map_path(&b, tb.submersion())?, tb.submersion())
    })
    .map_err(js)?;
    let k = tb.submersion().fiber_dim();
    let mut out = vec![0.0; k * (n_steps + 1)];
    let mut counts = vec![0usize; n_steps + 1];
    for d in &drifts {
        for n in 0..=d[0].alive_until() {
            counts[n] += 1;
            for (a, path) in d.iter().enumerate() {
                out[a * (n_steps + 1) + n] += path.value(n);
            }
        }
    }
    for a in 0..k {
        for n in 0..=n_steps {
            out[a * (n_steps + 1) + n] /= counts[n].max(1) as f64;
        }
    }
    Ok(out)
}

/// One Brownian path on a corpus manifold, points concatenated.
#[wasm_bindgen]
pub fn brownian_sample(manifold: &str, n_steps: usize, dt: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
    let man = corpus::manifold(manifold).map_err(js)?;
    let x0: Vec<f64> = man.sample_box().iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let grid = TimeGrid::new(0.0, dt, n_steps).map_err(js)?;
    let path = simulate_bm(&man, &x0, &grid, seed as u64).map_err(js)?;
    Ok((0..=path.alive_until()).flat_map(|n| path.point(n).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_section_tension_is_sin() {
        let g = tension_grid("flat-torus-tm-complete", "sin-field", &[], 4).unwrap();
        let b = corpus::flat_torus(2).sample_box().to_vec();
        for i in 0..4 {
            let want = lerp(b[0], i, 4).sin().abs();
            assert!((g[i * 4] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_section_has_flat_drift() {
        let d = drift_curves("flat-torus-tm-complete", "constant-field", &[1.0, 0.0], 20, 50, 1e-2, 3).unwrap();
        assert_eq!(d.len(), 2 * 51);
        assert!(d.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn brownian_sample_has_every_point() {
        let p = brownian_sample("sphere", 100, 1e-3, 1).unwrap();
        assert_eq!(p.len(), 2 * 101);
    }
}
