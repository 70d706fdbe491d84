//! WebAssembly bindings for the browser demo in `www/`.

pub mod demo;

use tractseg::nets::Architecture;
use wasm_bindgen::prelude::*;

fn js(e: tractseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct PhantomView {
    inner: demo::Phantom,
}

#[wasm_bindgen]
impl PhantomView {
    #[wasm_bindgen(constructor)]
    pub fn new(radius: f64, sagitta: f64, sigma: f64, seed: u32) -> Result<PhantomView, JsError> {
        Ok(PhantomView {
            inner: demo::Phantom::generate(radius, sagitta, sigma, seed as u64).map_err(js)?,
        })
    }

    pub fn dims(&self) -> Vec<u32> {
        self.inner.dims().iter().map(|&d| d as u32).collect()
    }

    pub fn fa_slice(&self, axis: usize, index: usize) -> Result<Vec<f32>, JsError> {
        self.inner.fa_slice(axis, index).map_err(js)
    }

    pub fn truth_slice(&self, axis: usize, index: usize) -> Result<Vec<f32>, JsError> {
        self.inner.truth_slice(axis, index).map_err(js)
    }

    pub fn tract_voxels(&self) -> usize {
        self.inner.truth.count()
    }
}

#[wasm_bindgen]
pub struct TrainerView {
    inner: demo::Trainer,
}

#[wasm_bindgen]
impl TrainerView {
    /// `arch` is `"unet"` or `"vnet"`.
    #[wasm_bindgen(constructor)]
    pub fn new(phantom: &PhantomView, arch: &str, weight: f64, learning_rate: f64, seed: u32) -> Result<TrainerView, JsError> {
        let arch = match arch {
            "unet" => Architecture::Unet,
            "vnet" => Architecture::Vnet,
            other => return Err(JsError::new(&format!("unknown architecture {other:?}"))),
        };
        Ok(TrainerView {
            inner: demo::Trainer::new(&phantom.inner, arch, weight, learning_rate, seed as u64).map_err(js)?,
        })
    }

    pub fn step(&mut self) -> Result<f64, JsError> {
        self.inner.step().map_err(js)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.inner.losses.clone()
    }

    pub fn probability_slice(&self, axis: usize, index: usize) -> Result<Vec<f32>, JsError> {
        let p = self.inner.probability().map_err(js)?;
        demo::slice(&p, axis, index).map_err(js)
    }

    pub fn dice(&self) -> Result<f64, JsError> {
        self.inner.dice().map_err(js)
    }
}

/// JSON `{n, mean_diff, sd_diff, lower, upper, svg}` for two lists of numbers.
#[wasm_bindgen]
pub fn bland_altman_report(scan: &str, rescan: &str, measure: &str, unit: &str) -> Result<String, JsError> {
    let r = demo::agreement(scan, rescan, measure, unit).map_err(js)?;
    serde_json::to_string(&r).map_err(|e| JsError::new(&e.to_string()))
}
