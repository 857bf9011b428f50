//! WebAssembly bindings for the interactive demo page in `www/`.
//!
//! Every exported function takes its parameters as a JSON object and returns
//! JSON, so the page needs no generated TypeScript types. The native
//! functions underneath carry the logic and are what the tests exercise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ssnll_core::adapt::{
    adabn_update, dtc_refine, extract_features, kmeans, overcluster_k, pregenerate_labels, KMeansOptions,
};
use ssnll_core::data::{generate_shifted_gaussians, LabeledDataset, ShiftSpec};
use ssnll_core::nn::{Classifier, Matrix};
use ssnll_core::split::{labelwise_split, per_sample_loss};
use ssnll_core::trainer::{run_ssnll, train_source, TrainConfig};
use wasm_bindgen::prelude::*;

/// Knobs exposed by the page; anything omitted keeps its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub rotation: f64,
    pub translation: [f64; 2],
    pub stddev: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    pub epochs: usize,
    pub split_ratio: f64,
    /// Cells per side of the decision-region grid.
    pub grid: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            rotation: 0.5,
            translation: [1.0, 1.0],
            stddev: 0.7,
            samples_per_class: 200,
            seed: 0,
            epochs: 20,
            split_ratio: 0.2,
            grid: 48,
        }
    }
}

impl DemoParams {
    fn spec(&self) -> ShiftSpec {
        ShiftSpec {
            samples_per_class_source: self.samples_per_class,
            samples_per_class_target: self.samples_per_class,
            within_class_stddev: self.stddev,
            shift_translation: self.translation,
            shift_rotation_angle: self.rotation,
            seed: self.seed,
            ..ShiftSpec::default()
        }
    }

    fn adapt_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.max(1),
            split_ratio: self.split_ratio,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scatter {
    pub source: Vec<Point>,
    pub target: Vec<Point>,
    /// `[x_min, x_max, y_min, y_max]` covering both domains with a margin.
    pub bounds: [f64; 4],
}

fn points(data: &LabeledDataset) -> Vec<Point> {
    data.features()
        .iter_rows()
        .zip(data.labels())
        .map(|(row, label)| Point {
            x: row[0],
            y: row[1],
            label: label.unwrap_or(0),
        })
        .collect()
}

pub fn scatter(params: &DemoParams) -> ssnll_core::Result<Scatter> {
    let (source, target) = generate_shifted_gaussians(&params.spec())?;
    let source = points(&source);
    let target = points(&target);
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for p in source.iter().chain(&target) {
        b = [b[0].min(p.x), b[1].max(p.x), b[2].min(p.y), b[3].max(p.y)];
    }
    Ok(Scatter {
        source,
        target,
        bounds: [b[0] - 0.5, b[1] + 0.5, b[2] - 0.5, b[3] + 0.5],
    })
}

/// Predicted class of each grid cell centre, row-major from the top edge.
pub fn decision_grid(model: &Classifier, bounds: [f64; 4], cells: usize) -> ssnll_core::Result<Vec<usize>> {
    let cells = cells.max(1);
    let [x0, x1, y0, y1] = bounds;
    let mut coords = Vec::with_capacity(2 * cells * cells);
    for r in 0..cells {
        let y = y1 - (r as f64 + 0.5) * (y1 - y0) / cells as f64;
        for c in 0..cells {
            coords.push(x0 + (c as f64 + 0.5) * (x1 - x0) / cells as f64);
            coords.push(y);
        }
    }
    model.predict(&Matrix::from_vec(cells * cells, 2, coords)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineResult {
    pub scatter: Scatter,
    pub source_only: f64,
    pub adabn: f64,
    pub adabn_dtc: f64,
    pub ssnll: f64,
    pub epoch_accuracy: Vec<f64>,
    pub grid_size: usize,
    pub source_grid: Vec<usize>,
    pub adapted_grid: Vec<usize>,
    /// Final predictions on the target samples.
    pub predictions: Vec<usize>,
}

fn pretrained(params: &DemoParams, source: &LabeledDataset) -> ssnll_core::Result<Classifier> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = Classifier::mlp(2, &[32, 32], 4, &mut rng)?;
    train_source(
        &mut model,
        source,
        &TrainConfig {
            seed: params.seed,
            ..TrainConfig::source_default()
        },
    )?;
    Ok(model)
}

pub fn pipeline(params: &DemoParams) -> ssnll_core::Result<PipelineResult> {
    let (source, target) = generate_shifted_gaussians(&params.spec())?;
    let model = pretrained(params, &source)?;
    let out = run_ssnll(&model, &target, &params.adapt_config())?;
    let scatter = scatter(params)?;
    let unwrap = |v: Option<f64>| v.unwrap_or(f64::NAN);
    Ok(PipelineResult {
        source_only: unwrap(out.stages.source_only),
        adabn: unwrap(out.stages.adabn),
        adabn_dtc: unwrap(out.stages.adabn_dtc),
        ssnll: unwrap(out.final_accuracy()),
        epoch_accuracy: out.metrics.iter().map(|m| unwrap(m.target_accuracy)).collect(),
        grid_size: params.grid.max(1),
        source_grid: decision_grid(&model, scatter.bounds, params.grid)?,
        adapted_grid: decision_grid(&out.model, scatter.bounds, params.grid)?,
        predictions: out.model.predict(target.features())?,
        scatter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPreview {
    pub pseudo_labels: Vec<usize>,
    pub cleaner: Vec<bool>,
    pub losses: Vec<f64>,
    pub pseudo_label_accuracy: f64,
    pub cleaner_precision: f64,
    pub noisier_precision: f64,
}

/// The first split the adaptation loop would make: AdaBN, refined pseudo
/// labels, then the label-wise small-loss split at `split_ratio`.
pub fn split_preview(params: &DemoParams) -> ssnll_core::Result<SplitPreview> {
    let (source, target) = generate_shifted_gaussians(&params.spec())?;
    let mut model = pretrained(params, &source)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    adabn_update(&mut model, &target, 0.9, 128, &mut rng)?;
    let raw = pregenerate_labels(&model, &target)?;
    let features = extract_features(&model, &target)?;
    let clusters = kmeans(
        &features,
        KMeansOptions::new(overcluster_k(4, target.len()), params.seed),
    )?;
    let refined = dtc_refine(&raw, &clusters)?;
    let losses = per_sample_loss(&model, &target, &refined.labels)?;
    let split = labelwise_split(&losses, &refined.labels, 4, params.split_ratio)?;
    let truth = target.labels();
    let precision = |idx: &[usize]| {
        let hits = idx.iter().filter(|&&i| truth[i] == Some(refined.labels[i])).count();
        if idx.is_empty() {
            f64::NAN
        } else {
            hits as f64 / idx.len() as f64
        }
    };
    Ok(SplitPreview {
        pseudo_label_accuracy: refined.accuracy(truth).unwrap_or(f64::NAN),
        cleaner_precision: precision(&split.cleaner),
        noisier_precision: precision(&split.noisier),
        cleaner: split.membership(),
        pseudo_labels: refined.labels,
        losses,
    })
}

fn call<T: Serialize>(
    params_json: &str,
    f: impl FnOnce(&DemoParams) -> ssnll_core::Result<T>,
) -> Result<String, String> {
    let params: DemoParams = serde_json::from_str(params_json).map_err(|e| format!("bad parameters: {e}"))?;
    let out = f(&params).map_err(|e| e.to_string())?;
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn to_js(result: Result<String, String>) -> Result<String, JsError> {
    result.map_err(|e| JsError::new(&e))
}

/// Source and target samples for the given shift.
#[wasm_bindgen(js_name = generateScatter)]
pub fn generate_scatter_js(params_json: &str) -> Result<String, JsError> {
    to_js(call(params_json, scatter))
}

/// Source training plus adaptation, with stage accuracies and decision regions.
#[wasm_bindgen(js_name = runPipeline)]
pub fn run_pipeline_js(params_json: &str) -> Result<String, JsError> {
    to_js(call(params_json, pipeline))
}

/// Cleaner/noisier membership of the first label-wise split.
#[wasm_bindgen(js_name = previewSplit)]
pub fn preview_split_js(params_json: &str) -> Result<String, JsError> {
    to_js(call(params_json, split_preview))
}
