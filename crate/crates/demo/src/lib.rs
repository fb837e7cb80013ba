//! Browser bindings. Each export takes plain numbers and returns a JSON
//! string; the `*_json` functions underneath are ordinary Rust and are what
//! the native tests call.

use kreinext::extensions::{build_extension, krein_reduced_inverse, ExtensionSpec};
use kreinext::ideals::{schatten_equivalence_suite, spectral_counts};
use kreinext::models::ModelOperator;
use kreinext::moperator::{donoghue_m, herglotz_margin, nplus_basis};
use kreinext::numlin::{SchattenP, C64, ZERO};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest grid the page offers; dense eigensolves beyond this are slow in a tab.
pub const MAX_N: usize = 1024;

fn interval(n: usize) -> Result<ModelOperator, String> {
    if n > MAX_N {
        return Err(format!("n = {n} exceeds the demo limit {MAX_N}"));
    }
    ModelOperator::interval_laplacian(n).map_err(|e| e.to_string())
}

/// First `count` eigenvalues of `S_F` and of the reduced `S_K` on (0, 1).
pub fn spectra_json(n: usize, count: usize) -> Result<String, String> {
    let m = interval(n)?;
    let sp = m.space();
    let g = m.friedrichs_green(ZERO).map_err(|e| e.to_string())?;
    let k = krein_reduced_inverse(&m).map_err(|e| e.to_string())?;
    let f = spectral_counts(sp, &g, count, true, "friedrichs").map_err(|e| e.to_string())?.values;
    let kv = spectral_counts(sp, &k, count, true, "krein").map_err(|e| e.to_string())?.values;
    let ratio: Vec<f64> = f.iter().zip(&kv).map(|(a, b)| b / a).collect();
    Ok(json!({ "n": n, "mu_F": f, "mu_K": kv, "ratio": ratio }).to_string())
}

/// `M(z)` of the chosen extension (`friedrichs`, `krein` or `param:<b>`).
pub fn m_function_json(n: usize, extension: &str, re: f64, im: f64) -> Result<String, String> {
    let m = interval(n)?;
    let spec = match extension {
        "friedrichs" => ExtensionSpec::Friedrichs,
        "krein" => ExtensionSpec::Krein,
        other => match other.strip_prefix("param:").and_then(|b| b.parse::<f64>().ok()) {
            Some(b) if b >= 0.0 => ExtensionSpec::scalar_param(2, b),
            _ => return Err(format!("unknown extension {other:?}")),
        },
    };
    let e = build_extension(&m, spec).map_err(|e| e.to_string())?;
    let plus = nplus_basis(&m).map_err(|e| e.to_string())?;
    let z = C64::new(re, im);
    let mz = donoghue_m(&e, &plus, z).map_err(|e| e.to_string())?;
    let entries: Vec<Vec<[f64; 2]>> = (0..2).map(|i| (0..2).map(|j| [mz[(i, j)].re, mz[(i, j)].im]).collect()).collect();
    let margin = if im != 0.0 { herglotz_margin(mz.as_ref(), z).ok() } else { None };
    Ok(json!({ "z": [re, im], "extension": extension, "m": entries, "herglotz_margin": margin }).to_string())
}

/// The four Schatten quantities for exponent `p` (`p <= 0` means infinity).
pub fn schatten_json(n: usize, p: f64) -> Result<String, String> {
    let m = interval(n)?;
    let p = if p > 0.0 { SchattenP::Finite(p) } else { SchattenP::Infinity };
    let r = schatten_equivalence_suite(&m, p).map_err(|e| e.to_string())?;
    serde_json::to_string(&r).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn spectra(n: usize, count: usize) -> Result<String, JsValue> {
    spectra_json(n, count).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn m_function(n: usize, extension: &str, re: f64, im: f64) -> Result<String, JsValue> {
    m_function_json(n, extension, re, im).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn schatten(n: usize, p: f64) -> Result<String, JsValue> {
    schatten_json(n, p).map_err(|e| JsValue::from_str(&e))
}
