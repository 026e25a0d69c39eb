//! JavaScript exports. Arrays cross the boundary as `Float64Array`.

use wasm_bindgen::prelude::*;

fn js(r: Result<Vec<f64>, String>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = deformProbe)]
#[allow(clippy::too_many_arguments)]
pub fn deform_probe(
    image: &[f64],
    h: usize,
    w: usize,
    cy: usize,
    cx: usize,
    dy: &[f64],
    dx: &[f64],
    modulation: f64,
    kernel: &[f64],
) -> Result<Vec<f64>, JsError> {
    js(crate::deform_probe(image, h, w, cy, cx, dy, dx, modulation, kernel))
}

#[wasm_bindgen(js_name = distillLosses)]
pub fn distill_losses(
    student: &[f64],
    teacher_a: &[f64],
    teacher_b: &[f64],
    label: usize,
    alpha: f64,
    temperature: f64,
    literal_t2: bool,
) -> Result<Vec<f64>, JsError> {
    js(crate::distill_losses(student, teacher_a, teacher_b, label, alpha, temperature, literal_t2))
}

#[wasm_bindgen(js_name = tsneClusters)]
pub fn tsne_clusters(
    clusters: usize,
    per_cluster: usize,
    spacing: f64,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    js(crate::tsne_clusters(clusters, per_cluster, spacing, perplexity, iterations, seed))
}
