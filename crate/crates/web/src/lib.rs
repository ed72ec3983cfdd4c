//! WebAssembly bindings for the static demo page in `www/`.

use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

use shortpanel::densities::{
    goe3_spacing_ratio_pdf, goe3_total_spacing_pdf, local_power_gaussian, wigner_surmise_pdf,
    SpacingStatistic,
};
use shortpanel::nulldist::{simulate_law_s, NullVarianceSpec};

const GOE: NullVarianceSpec = NullVarianceSpec::IndepErrors { eta: 2.0, q: 1.0 };

fn js_err(e: shortpanel::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn grid(start: f64, end: f64, points: usize) -> Result<Vec<f64>, JsError> {
    if end.is_nan() || start.is_nan() || end <= start || points < 2 {
        return Err(JsError::new("need end > start and at least 2 points"));
    }
    let h = (end - start) / (points - 1) as f64;
    Ok((0..points).map(|i| start + h * i as f64).collect())
}

/// Density values on an evenly spaced grid. `family` is `f2`, `f3` or `g3`.
#[wasm_bindgen]
pub fn density_curve(family: &str, start: f64, end: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let f: fn(f64) -> f64 = match family {
        "f2" => wigner_surmise_pdf,
        "f3" => goe3_total_spacing_pdf,
        "g3" => goe3_spacing_ratio_pdf,
        other => return Err(JsError::new(&format!("unknown family '{other}'"))),
    };
    Ok(grid(start, end, points)?.into_iter().map(f).collect())
}

/// Draws of the top-to-bottom spacing of an `m × m` GOE matrix (`ratio = false`)
/// or of the largest spacing ratio (`ratio = true`, `m >= 3`).
#[wasm_bindgen]
pub fn goe_spacing_draws(m: usize, ratio: bool, draws: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    if !(2..=8).contains(&m) {
        return Err(JsError::new("matrix size must be between 2 and 8"));
    }
    if ratio && m < 3 {
        return Err(JsError::new("the spacing ratio needs m >= 3"));
    }
    let eye = DMatrix::identity(m, m);
    let k_star = (m >= 3).then_some(m - 2);
    let laws = simulate_law_s(&GOE, m, 0, &eye, draws, seed as u64, k_star, false).map_err(js_err)?;
    let law = if ratio { laws.s_star.expect("m >= 3") } else { laws.s };
    Ok(law.draws().to_vec())
}

/// Local power on `points` evenly spaced signal strengths in `[0, a_max]`.
#[wasm_bindgen]
pub fn local_power_curve(
    t_minus_k: usize,
    ratio: bool,
    alpha: f64,
    a_max: f64,
    points: usize,
    draws: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let statistic = if ratio {
        if t_minus_k < 3 {
            return Err(JsError::new("the spacing ratio needs T - k >= 3"));
        }
        SpacingStatistic::SStar { k_star_minus_k: t_minus_k - 2 }
    } else {
        SpacingStatistic::S
    };
    let a = grid(0.0, a_max, points)?;
    let curve = local_power_gaussian(t_minus_k, alpha, &a, draws, seed as u64, statistic).map_err(js_err)?;
    Ok(curve.power)
}
