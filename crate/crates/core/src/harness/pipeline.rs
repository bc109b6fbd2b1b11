use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use super::{HarnessError, MethodId, Overrides, RunResult};
use crate::dataset::{
    balanced_sample, load_image, preprocess, split, DatasetManifest, Entry, GrayImage, RgbImage,
    Split, SplitConfig, MODEL_SIDE,
};
use crate::features::{
    hog_extract, hog_sift_vector, surf_vector, HogConfig, SiftConfig, SurfConfig,
};
use crate::metrics::{evaluate_method, NUM_CLASSES};
use crate::nn::{
    densenet121, mobilenetv1, resnet18, small_cnn, small_cnn_flatten_index, train, InputGeometry,
    LayerSpec, LossKind, Mode, Network, NetworkSpec, Tensor, TrainConfig, Trainer,
};
use crate::rng::{self, streams};
use crate::svm::{self, argmax_lowest, ovr_train, KernelChoice, KernelSpec, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Descriptor {
    Hog,
    HogSift,
    Surf,
}

/// Descriptors computed so far, keyed by image path. Descriptors depend only
/// on the image, so repeated runs over resampled subsets can share them.
#[derive(Debug, Default)]
pub struct FeatureCache {
    map: HashMap<(Descriptor, String), Vec<f64>>,
}

impl FeatureCache {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

struct Outcome {
    scores: Vec<[f64; NUM_CLASSES]>,
    pred: Vec<usize>,
    loss_history: Option<Vec<f64>>,
    head_loss_history: Option<Vec<f64>>,
}

/// Full pipeline for one method and seed: balanced sample, stratified split,
/// features or training, then evaluation on the held-out part.
pub fn run_method(
    method: MethodId,
    seed: u64,
    manifest: &DatasetManifest,
    overrides: &Overrides,
) -> Result<RunResult, HarnessError> {
    run_method_with(
        method,
        seed,
        manifest,
        overrides,
        &mut FeatureCache::default(),
    )
}

pub fn run_method_with(
    method: MethodId,
    seed: u64,
    manifest: &DatasetManifest,
    overrides: &Overrides,
    cache: &mut FeatureCache,
) -> Result<RunResult, HarnessError> {
    let start = Instant::now();
    overrides.validate()?;
    let balanced = balanced_sample(manifest, seed, overrides.balance_count)?;
    let cfg = SplitConfig {
        train_fraction: overrides.train_fraction.unwrap_or(0.8),
        seed,
        balance_count: overrides.balance_count,
    };
    let parts = split(&balanced, &cfg)?;
    check_disjoint(&parts)?;
    let y_train: Vec<usize> = parts.train.iter().map(|e| e.label.id()).collect();
    let y_test: Vec<usize> = parts.test.iter().map(|e| e.label.id()).collect();

    let outcome = match method {
        MethodId::HogSvm => svm_method(
            Descriptor::Hog,
            manifest,
            &parts,
            &y_train,
            seed,
            overrides,
            cache,
        )?,
        MethodId::HogSiftSvm => svm_method(
            Descriptor::HogSift,
            manifest,
            &parts,
            &y_train,
            seed,
            overrides,
            cache,
        )?,
        MethodId::SurfSvm => svm_method(
            Descriptor::Surf,
            manifest,
            &parts,
            &y_train,
            seed,
            overrides,
            cache,
        )?,
        MethodId::Cnn => cnn_method(manifest, &parts, &y_train, seed, overrides)?,
        MethodId::HogCnn => hog_cnn_method(manifest, &parts, &y_train, seed, overrides, cache)?,
        MethodId::Densenet121 | MethodId::Resnet18 | MethodId::Mobilenetv1 => {
            deep_method(method, manifest, &parts, &y_train, seed, overrides)?
        }
    };
    let report = evaluate_method(method.id(), &y_test, &outcome.scores, &outcome.pred)?;
    Ok(RunResult {
        seed,
        report,
        wall_seconds: start.elapsed().as_secs_f64(),
        train_size: parts.train.len(),
        test_size: parts.test.len(),
        loss_history: outcome.loss_history,
        head_loss_history: outcome.head_loss_history,
    })
}

fn check_disjoint(parts: &Split) -> Result<(), HarnessError> {
    let train: BTreeSet<&str> = parts.train.iter().map(|e| e.path.as_str()).collect();
    let shared = parts
        .test
        .iter()
        .filter(|e| train.contains(e.path.as_str()))
        .count();
    if shared == 0 {
        Ok(())
    } else {
        Err(HarnessError::Leakage(shared))
    }
}

fn load(manifest: &DatasetManifest, entry: &Entry) -> Result<(RgbImage, GrayImage), HarnessError> {
    Ok(preprocess(&load_image(&manifest.resolve(entry))?))
}

fn descriptors(
    kind: Descriptor,
    manifest: &DatasetManifest,
    entries: &[Entry],
    cache: &mut FeatureCache,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let key = (kind, e.path.clone());
        if let Some(v) = cache.map.get(&key) {
            out.push(v.clone());
            continue;
        }
        let (_, gray) = load(manifest, e)?;
        let v = match kind {
            Descriptor::Hog => hog_extract(&gray, &HogConfig::default())?.values,
            Descriptor::HogSift => {
                hog_sift_vector(&gray, &HogConfig::default(), &SiftConfig::default())?
            }
            Descriptor::Surf => surf_vector(&gray, &SurfConfig::default())?,
        };
        cache.map.insert(key, v.clone());
        out.push(v);
    }
    Ok(out)
}

fn svm_method(
    kind: Descriptor,
    manifest: &DatasetManifest,
    parts: &Split,
    y_train: &[usize],
    seed: u64,
    ov: &Overrides,
    cache: &mut FeatureCache,
) -> Result<Outcome, HarnessError> {
    let x_train = descriptors(kind, manifest, &parts.train, cache)?;
    let x_test = descriptors(kind, manifest, &parts.test, cache)?;
    let defaults = svm::TrainConfig::default();
    let cfg = svm::TrainConfig {
        c: ov.svm_c.unwrap_or(defaults.c),
        tol: ov.svm_tol.unwrap_or(defaults.tol),
        seed,
        ..defaults
    };
    let kernel = ov.svm_gamma.map_or(KernelChoice::RbfAuto, |gamma| {
        KernelChoice::Fixed(KernelSpec::Rbf { gamma })
    });
    let clf = ovr_train(&x_train, y_train, &cfg, kernel, true)?;
    let scores = x_test
        .iter()
        .map(|x| clf.scores(x))
        .collect::<Result<Vec<_>, _>>()?;
    let pred = scores.iter().map(|s| argmax_lowest(s)).collect();
    Ok(Outcome {
        scores,
        pred,
        loss_history: None,
        head_loss_history: None,
    })
}

fn geometry(ov: &Overrides) -> InputGeometry {
    InputGeometry {
        channels: ov.channels.unwrap_or(1),
        side: ov.side.unwrap_or(MODEL_SIDE),
    }
}

/// Pixels scaled to [0, 1] in (N, C, H, W) order.
fn network_input(
    manifest: &DatasetManifest,
    entries: &[Entry],
    g: InputGeometry,
) -> Result<Tensor<f32>, HarnessError> {
    let item = g.channels * g.side * g.side;
    let mut data = Vec::with_capacity(entries.len() * item);
    for e in entries {
        let (rgb, gray) = load(manifest, e)?;
        if g.channels == 1 {
            let gray = if g.side == MODEL_SIDE {
                gray
            } else {
                rgb.resize_bilinear(g.side, g.side).to_gray()
            };
            data.extend(gray.pixels().iter().map(|&v| (v / 255.0) as f32));
        } else {
            let rgb = if g.side == MODEL_SIDE {
                rgb
            } else {
                rgb.resize_bilinear(g.side, g.side)
            };
            for c in 0..3 {
                data.extend(rgb.pixels().iter().map(|p| p[c] as f32 / 255.0));
            }
        }
    }
    Ok(Tensor::new(
        [entries.len(), g.channels, g.side, g.side],
        data,
    )?)
}

fn train_config(spec: &NetworkSpec, seed: u64, ov: &Overrides) -> TrainConfig {
    let d = TrainConfig::for_spec(spec, seed);
    TrainConfig {
        epochs: ov.epochs.unwrap_or(d.epochs),
        batch: ov.batch.unwrap_or(d.batch),
        lr: ov.lr.unwrap_or(d.lr),
        seed,
    }
}

fn probability_outcome(probs: Vec<Vec<f64>>) -> (Vec<[f64; NUM_CLASSES]>, Vec<usize>) {
    let pred = probs.iter().map(|p| argmax_lowest(p)).collect();
    let scores = probs.into_iter().map(|p| [p[0], p[1], p[2]]).collect();
    (scores, pred)
}

fn train_small_cnn(
    manifest: &DatasetManifest,
    parts: &Split,
    y_train: &[usize],
    seed: u64,
    ov: &Overrides,
) -> Result<(Network<f32>, Tensor<f32>, Tensor<f32>, Vec<f64>, usize), HarnessError> {
    let g = geometry(ov);
    let spec = small_cnn(g);
    let cfg = train_config(&spec, seed, ov);
    let x_train = network_input(manifest, &parts.train, g)?;
    let x_test = network_input(manifest, &parts.test, g)?;
    let mut net = Network::new(spec, seed)?;
    let history = train(&mut net, &x_train, y_train, &cfg)?.loss_history;
    Ok((net, x_train, x_test, history, cfg.batch))
}

fn cnn_method(
    manifest: &DatasetManifest,
    parts: &Split,
    y_train: &[usize],
    seed: u64,
    ov: &Overrides,
) -> Result<Outcome, HarnessError> {
    let (mut net, _, x_test, history, batch) = train_small_cnn(manifest, parts, y_train, seed, ov)?;
    let (scores, pred) = probability_outcome(net.predict_proba(&x_test, batch)?);
    Ok(Outcome {
        scores,
        pred,
        loss_history: Some(history),
        head_loss_history: None,
    })
}

/// Output of the flatten layer, i.e. the last pooling map, in inference mode.
fn frozen_features(
    net: &mut Network<f32>,
    x: &Tensor<f32>,
    batch: usize,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let upto = small_cnn_flatten_index(net.spec()).expect("small CNN has a flatten layer") + 1;
    let mut out = Vec::with_capacity(x.batch());
    let idx: Vec<usize> = (0..x.batch()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let f = net.forward_prefix(&x.gather(chunk), upto, Mode::Inference)?;
        let width = f.item_len();
        out.extend(
            f.data
                .chunks(width)
                .map(|r| r.iter().map(|&v| v as f64).collect::<Vec<f64>>()),
        );
    }
    Ok(out)
}

/// HOG followed by the frozen CNN features, standardized with training
/// statistics, into a linear softmax head trained with Adam.
fn hog_cnn_method(
    manifest: &DatasetManifest,
    parts: &Split,
    y_train: &[usize],
    seed: u64,
    ov: &Overrides,
    cache: &mut FeatureCache,
) -> Result<Outcome, HarnessError> {
    let (mut net, x_train, x_test, history, batch) =
        train_small_cnn(manifest, parts, y_train, seed, ov)?;
    let fuse = |hog: Vec<Vec<f64>>, cnn: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        hog.into_iter()
            .zip(cnn)
            .map(|(mut h, c)| {
                h.extend(c);
                h
            })
            .collect()
    };
    let f_train = fuse(
        descriptors(Descriptor::Hog, manifest, &parts.train, cache)?,
        frozen_features(&mut net, &x_train, batch)?,
    );
    let f_test = fuse(
        descriptors(Descriptor::Hog, manifest, &parts.test, cache)?,
        frozen_features(&mut net, &x_test, batch)?,
    );
    let scaler = Standardizer::fit(&f_train);
    let width = f_train[0].len();
    let as_tensor = |rows: &[Vec<f64>]| -> Result<Tensor<f32>, HarnessError> {
        let data: Vec<f64> = rows.iter().flat_map(|r| scaler.apply(r)).collect();
        Ok(Tensor::from_f64([rows.len(), width, 1, 1], &data)?)
    };
    let h_train = as_tensor(&f_train)?;
    let h_test = as_tensor(&f_test)?;

    let spec = NetworkSpec {
        name: "hog_cnn_head".into(),
        input: [width, 1, 1],
        layers: vec![LayerSpec::Linear {
            inputs: width,
            outputs: NUM_CLASSES,
        }],
        loss: LossKind::SoftmaxCrossEntropy,
        classes: NUM_CLASSES,
    };
    let mut head = Network::from_rng(spec, &mut rng::stream(seed, streams::HEAD_INIT))?;
    let cfg = TrainConfig {
        epochs: ov.head_epochs.unwrap_or(10),
        batch,
        lr: ov.head_lr.unwrap_or(1e-4),
        seed,
    };
    let mut trainer = Trainer::with_stream(&cfg, streams::HEAD_SHUFFLE)?;
    let mut head_history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        head_history.push(trainer.epoch(&mut head, &h_train, y_train)?);
    }
    let (scores, pred) = probability_outcome(head.predict_proba(&h_test, batch)?);
    Ok(Outcome {
        scores,
        pred,
        loss_history: Some(history),
        head_loss_history: Some(head_history),
    })
}

fn deep_method(
    method: MethodId,
    manifest: &DatasetManifest,
    parts: &Split,
    y_train: &[usize],
    seed: u64,
    ov: &Overrides,
) -> Result<Outcome, HarnessError> {
    let g = geometry(ov);
    let spec = match method {
        MethodId::Densenet121 => densenet121(g),
        MethodId::Resnet18 => resnet18(g),
        MethodId::Mobilenetv1 => mobilenetv1(g),
        other => unreachable!("{other} is not a deep model"),
    };
    let cfg = train_config(&spec, seed, ov);
    let x_train = network_input(manifest, &parts.train, g)?;
    let x_test = network_input(manifest, &parts.test, g)?;
    let mut net = Network::new(spec, seed)?;
    let history = train(&mut net, &x_train, y_train, &cfg)?.loss_history;
    let (scores, pred) = probability_outcome(net.predict_proba(&x_test, cfg.batch)?);
    Ok(Outcome {
        scores,
        pred,
        loss_history: Some(history),
        head_loss_history: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{scan_dataset, synthetic, ClassLabel};

    fn bundled() -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_bundled(dir.path()).unwrap();
        let m = scan_dataset(dir.path()).unwrap();
        (dir, m)
    }

    fn quick() -> Overrides {
        Overrides {
            epochs: Some(2),
            head_epochs: Some(2),
            side: Some(32),
            ..Overrides::default()
        }
    }

    #[test]
    fn hog_svm_is_deterministic() {
        let (_dir, m) = bundled();
        let a = run_method(MethodId::HogSvm, 7, &m, &Overrides::default()).unwrap();
        let b = run_method(MethodId::HogSvm, 7, &m, &Overrides::default()).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!((a.train_size, a.test_size), (12, 6));
        assert!(a.loss_history.is_none());
    }

    #[test]
    fn cached_descriptors_give_the_same_report() {
        let (_dir, m) = bundled();
        let mut cache = FeatureCache::default();
        let first =
            run_method_with(MethodId::SurfSvm, 3, &m, &Overrides::default(), &mut cache).unwrap();
        assert_eq!(cache.len(), 18);
        let second =
            run_method_with(MethodId::SurfSvm, 3, &m, &Overrides::default(), &mut cache).unwrap();
        assert_eq!(first.report, second.report);
    }

    #[test]
    fn every_method_produces_a_well_formed_report() {
        let (_dir, m) = bundled();
        for method in MethodId::ALL {
            let ov = Overrides {
                epochs: Some(1),
                batch: Some(6),
                ..quick()
            };
            let run = run_method(method, 1, &m, &ov).unwrap();
            let r = &run.report;
            assert_eq!(r.method, method.id());
            assert!((0.0..=1.0).contains(&r.acc));
            for map in [&r.gini, &r.auc, &r.agf, &r.sensitivity, &r.precision] {
                assert_eq!(map.len(), NUM_CLASSES);
                assert!(map.values().all(|v| v.is_finite()));
            }
            assert_eq!(run.loss_history.is_some(), method.is_neural(), "{method}");
            assert_eq!(run.head_loss_history.is_some(), method == MethodId::HogCnn);
        }
    }

    #[test]
    fn cnn_run_repeats_exactly() {
        let (_dir, m) = bundled();
        let a = run_method(MethodId::HogCnn, 11, &m, &quick()).unwrap();
        let b = run_method(MethodId::HogCnn, 11, &m, &quick()).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.head_loss_history.as_ref().map(Vec::len), Some(2));
    }

    #[test]
    fn rgb_input_is_accepted() {
        let (_dir, m) = bundled();
        let ov = Overrides {
            channels: Some(3),
            ..quick()
        };
        assert!(run_method(MethodId::Cnn, 2, &m, &ov).is_ok());
    }

    #[test]
    fn overlapping_split_is_rejected() {
        let e = |p: &str| Entry {
            path: p.into(),
            label: ClassLabel::Engaged,
        };
        let leaky = Split {
            train: vec![e("a"), e("b")],
            test: vec![e("b")],
        };
        assert!(matches!(
            check_disjoint(&leaky),
            Err(HarnessError::Leakage(1))
        ));
        assert!(check_disjoint(&Split {
            train: vec![e("a")],
            test: vec![e("b")]
        })
        .is_ok());
    }

    #[test]
    fn invalid_override_is_a_config_error() {
        let (_dir, m) = bundled();
        let ov = Overrides {
            train_fraction: Some(1.5),
            ..Overrides::default()
        };
        assert!(matches!(
            run_method(MethodId::HogSvm, 0, &m, &ov),
            Err(HarnessError::Dataset(_))
        ));
        let ov = Overrides {
            lr: Some(-1.0),
            ..Overrides::default()
        };
        assert!(matches!(
            run_method(MethodId::Cnn, 0, &m, &ov),
            Err(HarnessError::InvalidConfig(_))
        ));
    }
}
