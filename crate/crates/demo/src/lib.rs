//! WebAssembly bindings for the static demo page in `www/`.

use dmcnet_core::dataset::{preprocess, synthetic, ClassLabel, RgbImage};
use dmcnet_core::dimred::{tsne_run, TsneConfig};
use dmcnet_core::features::{hog_extract, HogConfig};
use dmcnet_core::metrics::{gini_coefficient, roc_auc};
use dmcnet_core::rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

pub const SAMPLE_SIDE: usize = 100;

/// Per-cell orientation histograms of a 100×100 grayscale view.
#[wasm_bindgen]
pub struct HogGlyphs {
    cells_x: usize,
    cells_y: usize,
    bins: usize,
    values: Vec<f32>,
    gray: Vec<u8>,
}

#[wasm_bindgen]
impl HogGlyphs {
    #[wasm_bindgen(getter)]
    pub fn cells_x(&self) -> usize {
        self.cells_x
    }

    #[wasm_bindgen(getter)]
    pub fn cells_y(&self) -> usize {
        self.cells_y
    }

    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// `cells_y × cells_x × bins`, row-major.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }

    /// The preprocessed grayscale image the histograms were computed on.
    #[wasm_bindgen(getter)]
    pub fn gray(&self) -> Vec<u8> {
        self.gray.clone()
    }
}

pub fn hog_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<HogGlyphs, String> {
    if width == 0 || height == 0 || rgba.len() != width * height * 4 {
        return Err(format!(
            "expected {}×{}×4 bytes, got {}",
            width,
            height,
            rgba.len()
        ));
    }
    let pixels = rgba.chunks_exact(4).map(|p| [p[0], p[1], p[2]]).collect();
    let img = RgbImage::new(width, height, pixels).ok_or("pixel count mismatch")?;
    let (_, gray) = preprocess(&img);
    let d = hog_extract(&gray, &HogConfig::default()).map_err(|e| e.to_string())?;
    Ok(HogGlyphs {
        cells_x: d.cells_x,
        cells_y: d.cells_y,
        bins: d.bins,
        values: d.values.iter().map(|&v| v as f32).collect(),
        gray: gray
            .pixels()
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect(),
    })
}

#[wasm_bindgen]
pub fn hog_glyphs(rgba: &[u8], width: usize, height: usize) -> Result<HogGlyphs, JsError> {
    hog_from_rgba(rgba, width, height).map_err(|e| JsError::new(&e))
}

/// RGBA bytes of a synthetic 100×100 face for class 0, 1 or 2.
pub fn sample_rgba(class: u8, index: u32) -> Result<Vec<u8>, String> {
    let class = ClassLabel::from_id(class as usize)
        .ok_or_else(|| format!("class {class} is not 0, 1 or 2"))?;
    let img = synthetic::render(class, SAMPLE_SIDE, synthetic::BUNDLED_SEED, index as u64);
    Ok(img
        .pixels()
        .iter()
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect())
}

#[wasm_bindgen]
pub fn synthetic_face(class: u8, index: u32) -> Result<Vec<u8>, JsError> {
    sample_rgba(class, index).map_err(|e| JsError::new(&e))
}

/// Three Gaussian clusters in 5-D, cluster 0 far from the overlapping 1 and 2.
pub fn cluster_data(per_cluster: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let centres = [
        [8.0, 0.0, 0.0, 0.0, 0.0],
        [0.0; 5],
        [0.0, 1.0, 0.0, 0.0, 0.0],
    ];
    let mut x = Vec::with_capacity(3 * per_cluster);
    let mut labels = Vec::with_capacity(3 * per_cluster);
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_cluster {
            x.push(centre.iter().map(|v| v + noise.sample(&mut r)).collect());
            labels.push(c);
        }
    }
    (x, labels)
}

/// Flat `[x, y, label, x, y, label, ...]` t-SNE embedding of [`cluster_data`].
pub fn tsne_points(
    per_cluster: usize,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let (x, labels) = cluster_data(per_cluster, seed);
    let cfg = TsneConfig {
        perplexity,
        iterations,
        seed,
        ..TsneConfig::default()
    };
    let emb = tsne_run(&x, &cfg).map_err(|e| e.to_string())?;
    Ok(emb
        .points
        .iter()
        .zip(&labels)
        .flat_map(|(p, &l)| [p[0], p[1], l as f64])
        .collect())
}

#[wasm_bindgen]
pub fn tsne_scatter(
    per_cluster: usize,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    tsne_points(per_cluster, perplexity, iterations, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct RocView {
    fpr: Vec<f64>,
    tpr: Vec<f64>,
    auc: f64,
    gini: f64,
}

#[wasm_bindgen]
impl RocView {
    #[wasm_bindgen(getter)]
    pub fn fpr(&self) -> Vec<f64> {
        self.fpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn tpr(&self) -> Vec<f64> {
        self.tpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.auc
    }

    #[wasm_bindgen(getter)]
    pub fn gini(&self) -> f64 {
        self.gini
    }
}

pub fn roc_view(scores: &[f64], truth: &[u8]) -> Result<RocView, String> {
    let truth: Vec<bool> = truth.iter().map(|&t| t != 0).collect();
    let (curve, auc) = roc_auc(scores, &truth).map_err(|e| e.to_string())?;
    let gini = gini_coefficient(auc).map_err(|e| e.to_string())?;
    let (fpr, tpr) = curve.points.into_iter().unzip();
    Ok(RocView {
        fpr,
        tpr,
        auc,
        gini,
    })
}

#[wasm_bindgen]
pub fn roc(scores: &[f64], truth: &[u8]) -> Result<RocView, JsError> {
    roc_view(scores, truth).map_err(|e| JsError::new(&e))
}
