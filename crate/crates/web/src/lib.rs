//! Browser bindings for a small interactive demo: prior response curves,
//! scene simulation and target extraction with a spatial prior.

use informed_iva::geometry::{
    precision_null, precision_one, steering_vector, ArrayGeometry, DEFAULT_SPEED_OF_SOUND,
};
use informed_iva::linalg::{quad_form, CVector};
use informed_iva::mixsim::{generate_signals, simulate, ScenarioSpec, SourceSpec};
use informed_iva::pipeline::{dominant_source, score, separate};
use informed_iva::solver::variant_config;
use informed_iva::stft::{StftConfig, Window};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SAMPLE_RATE: f64 = 16000.0;
const NUM_MICS: usize = 4;
const SPACING: f64 = 0.042;

fn demo_array() -> ArrayGeometry {
    ArrayGeometry::uniform_linear(NUM_MICS, SPACING)
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Prior penalty as a function of direction, 0..=180 degrees in 1 degree steps.
///
/// `kind` is `"one"`, `"null"` or `"euclidean"`. Quadratic kinds return
/// `gamma h^H P h / M`; the Euclidean kind returns `gamma ||h - h_target||^2 / M`,
/// which is the penalty for a filter equal to the steering vector of each direction.
#[wasm_bindgen]
pub fn prior_response(
    kind: &str,
    target_deg: f64,
    freq_hz: f64,
    gamma: f64,
    lambda_tik: f64,
    lambda_one: f64,
) -> Result<Vec<f64>, JsError> {
    let geom = demo_array();
    let target = target_deg.to_radians();
    let m = NUM_MICS as f64;
    let quad = match kind {
        "one" => Some(precision_one(&geom, freq_hz, &[target], lambda_tik, &[lambda_one]).map_err(js_err)?),
        "null" => Some(precision_null(&geom, freq_hz, &[target], lambda_tik, &[lambda_one]).map_err(js_err)?),
        "euclidean" => None,
        other => return Err(JsError::new(&format!("unknown prior kind {other:?}"))),
    };
    let h_target = steering_vector(&geom, freq_hz, target);
    Ok((0..=180)
        .map(|deg| {
            let h = steering_vector(&geom, freq_hz, f64::from(deg).to_radians());
            let v = match &quad {
                Some(p) => quad_form(p, &h),
                None => {
                    let d: CVector = &h - &h_target;
                    d.norm_squared()
                }
            };
            gamma * v / m
        })
        .collect())
}

#[derive(Serialize)]
struct Metrics {
    sdr: f64,
    sir: f64,
    sar: f64,
    dsdr: f64,
    dsir: f64,
    dsar: f64,
}

#[derive(Serialize)]
struct ExtractionReport {
    variant: u8,
    trace: Vec<f64>,
    metrics: Option<Metrics>,
    /// 0-based source with the highest correlation to the output.
    dominant_source: usize,
    target: usize,
}

/// A simulated anechoic scene on a four-microphone, 4.2 cm array.
#[wasm_bindgen]
pub struct Scene {
    spec: ScenarioSpec,
    mics: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
    estimate: Option<Vec<f64>>,
}

#[wasm_bindgen]
impl Scene {
    /// Source 0 sits at `target_deg`, the others at `interferers_deg`.
    #[wasm_bindgen(constructor)]
    pub fn new(
        target_deg: f64,
        interferers_deg: Vec<f64>,
        seconds: f64,
        snr_db: f64,
        seed: u32,
    ) -> Result<Scene, JsError> {
        let doas = std::iter::once(target_deg).chain(interferers_deg);
        let spec = ScenarioSpec {
            geometry: demo_array(),
            sources: doas
                .enumerate()
                .map(|(i, d)| SourceSpec {
                    doa: d.to_radians(),
                    distance: 1.0,
                    signal: i,
                })
                .collect(),
            snr_db,
            reverb: None,
            seed: u64::from(seed),
            signal_seed: u64::from(seed),
            duration: seconds,
            sample_rate: SAMPLE_RATE,
            target: Some(0),
        };
        spec.validate().map_err(js_err)?;
        let sim = simulate(&spec, &generate_signals(&spec)).map_err(js_err)?;
        Ok(Scene {
            spec,
            mics: sim.mics,
            images: sim.images,
            estimate: None,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> f64 {
        SAMPLE_RATE
    }

    /// Reference microphone signal.
    pub fn mixture(&self) -> Vec<f32> {
        self.mics[0].iter().map(|v| *v as f32).collect()
    }

    /// Output of the last [`Scene::extract`] call, empty before the first.
    pub fn estimate(&self) -> Vec<f32> {
        self.estimate
            .as_ref()
            .map(|e| e.iter().map(|v| *v as f32).collect())
            .unwrap_or_default()
    }

    /// Runs a variant aimed at the target direction and returns a JSON report
    /// with the cost trace and the scores of the constrained output.
    pub fn extract(&mut self, variant: u8, iterations: usize) -> Result<String, JsError> {
        let target = 0;
        let mut cfg = variant_config(variant, NUM_MICS, self.spec.sources[target].doa).map_err(js_err)?;
        cfg.max_iters = iterations.max(1);
        let stft = StftConfig {
            fft_size: 512,
            hop: 256,
            window: Window::VonHann,
            sample_rate: SAMPLE_RATE,
        };
        let sep = separate(&self.mics, &stft, &cfg, Some(&self.spec.geometry)).map_err(js_err)?;
        let est = sep.estimates[0].clone();
        let metrics = score(&est, &self.mics[0], &self.images, target)
            .ok()
            .map(|s| Metrics {
                sdr: s.processed.sdr,
                sir: s.processed.sir,
                sar: s.processed.sar,
                dsdr: s.delta.sdr,
                dsir: s.delta.sir,
                dsar: s.delta.sar,
            });
        let report = ExtractionReport {
            variant,
            trace: sep.run.trace.iter().map(|c| c.j_total).collect(),
            metrics,
            dominant_source: dominant_source(&est, &self.images),
            target,
        };
        self.estimate = Some(est);
        serde_json::to_string(&report).map_err(js_err)
    }
}

/// Speed of sound used by the demo, m/s.
#[wasm_bindgen]
pub fn speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}
