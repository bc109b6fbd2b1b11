use rand::seq::SliceRandom;
use rand::Rng as _;

use super::layers::{build_module, Module};
use super::loss::{loss_and_grad, softmax};
use super::optim::{adam_step, AdamState};
use super::spec::NetworkSpec;
use super::tensor::Tensor;
use super::{Mode, NnError, Real};
use crate::rng::{self, streams, Rng};
use crate::verify::oracles::max_relative_error;

/// A built network: the spec plus one module per top-level layer record.
pub struct Network<T: Real> {
    spec: NetworkSpec,
    layers: Vec<Box<dyn Module<T>>>,
}

impl<T: Real> Network<T> {
    /// Build with weights drawn from the init stream of `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        Self::from_rng(spec, &mut rng::stream(seed, streams::INIT))
    }

    pub fn from_rng(spec: NetworkSpec, rng: &mut Rng) -> Result<Self, NnError> {
        spec.trace(1)?;
        let layers = spec
            .layers
            .iter()
            .map(|l| build_module(l, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let want = self.spec.input;
        if x.shape()[1..] != want {
            return Err(NnError::ShapeMismatch(format!(
                "network expects (N, {want:?}), got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let n = self.layers.len();
        self.forward_prefix(x, n, mode)
    }

    /// Output of the first `upto` layer records.
    pub fn forward_prefix(
        &mut self,
        x: &Tensor<T>,
        upto: usize,
        mode: Mode,
    ) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in self.layers.iter_mut().take(upto) {
            cur = l.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    /// Trainable tensors of one layer record.
    pub fn layer_params_mut(&mut self, i: usize) -> Vec<&mut Tensor<T>> {
        self.layers[i].params_mut()
    }

    /// Running statistics of one layer record.
    pub fn layer_buffers_mut(&mut self, i: usize) -> Vec<&mut Tensor<T>> {
        self.layers[i].buffers_mut()
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn loss(&mut self, x: &Tensor<T>, labels: &[usize], mode: Mode) -> Result<T, NnError> {
        let logits = self.forward(x, mode)?;
        Ok(loss_and_grad(&logits, labels, self.spec.loss)?.0)
    }

    /// Training-mode forward and backward; gradients accumulate into the parameters.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<T, NnError> {
        let logits = self.forward(x, Mode::Train)?;
        let (loss, g) = loss_and_grad(&logits, labels, self.spec.loss)?;
        self.backward(&g)?;
        Ok(loss)
    }

    /// Class probabilities in inference mode, `batch` items at a time.
    pub fn predict_proba(&mut self, x: &Tensor<T>, batch: usize) -> Result<Vec<Vec<f64>>, NnError> {
        let batch = batch.max(1);
        let mut out = Vec::with_capacity(x.batch());
        for start in (0..x.batch()).step_by(batch) {
            let idx: Vec<usize> = (start..(start + batch).min(x.batch())).collect();
            let logits = self.forward(&x.gather(&idx), Mode::Inference)?;
            out.extend(
                softmax(&logits)
                    .into_iter()
                    .map(|r| r.into_iter().map(T::f64).collect::<Vec<_>>()),
            );
        }
        Ok(out)
    }

    /// Argmax class per item; ties go to the lowest class.
    pub fn predict(&mut self, x: &Tensor<T>, batch: usize) -> Result<Vec<usize>, NnError> {
        Ok(self
            .predict_proba(x, batch)?
            .iter()
            .map(|p| crate::svm::argmax_lowest(p))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 16,
            lr: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the architecture's learning rate.
    pub fn for_spec(spec: &NetworkSpec, seed: u64) -> Self {
        Self {
            lr: spec.default_lr(),
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Minibatch Adam with seeded per-epoch shuffling.
pub struct Trainer<T> {
    pub adam: AdamState<T>,
    batch: usize,
    rng: Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self, NnError> {
        Self::with_stream(cfg, streams::SHUFFLE)
    }

    pub fn with_stream(cfg: &TrainConfig, stream: u64) -> Result<Self, NnError> {
        if cfg.batch == 0 {
            return Err(NnError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(Self {
            adam: AdamState::new(cfg.lr)?,
            batch: cfg.batch,
            rng: rng::stream(cfg.seed, stream),
        })
    }

    /// One pass over the data; returns the sample-weighted mean loss.
    pub fn epoch(
        &mut self,
        net: &mut Network<T>,
        x: &Tensor<T>,
        labels: &[usize],
    ) -> Result<f64, NnError> {
        if labels.is_empty() {
            return Err(NnError::EmptyTrainingSet);
        }
        if x.batch() != labels.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} inputs for {} labels",
                x.batch(),
                labels.len()
            )));
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch) {
            let xb = x.gather(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            net.zero_grad();
            let loss = net.loss_and_backward(&xb, &yb)?;
            adam_step(&mut self.adam, &mut net.params_mut())?;
            total += loss.f64() * chunk.len() as f64;
        }
        Ok(total / labels.len() as f64)
    }
}

pub fn train<T: Real>(
    net: &mut Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport, NnError> {
    if labels.is_empty() {
        return Err(NnError::EmptyTrainingSet);
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let l = trainer.epoch(net, x, labels)?;
        log::debug!("{} epoch {}: loss {l:.6}", net.spec().name, e + 1);
        loss_history.push(l);
    }
    Ok(TrainReport { loss_history })
}

/// Largest relative gap between backprop and central-difference gradients
/// over every parameter, losses evaluated in training mode.
pub fn gradient_check(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    eps: f64,
) -> Result<f64, NnError> {
    gradient_check_with(net, x, labels, eps, &mut |_| {})
}

/// As [`gradient_check`]; `tamper` may edit the analytic gradients before comparison.
pub fn gradient_check_with(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    eps: f64,
    tamper: &mut dyn FnMut(&mut [Vec<f64>]),
) -> Result<f64, NnError> {
    net.zero_grad();
    net.loss_and_backward(x, labels)?;
    let mut analytic: Vec<Vec<f64>> = net
        .params_mut()
        .iter()
        .map(|p| p.grad.clone().unwrap_or_default())
        .collect();
    tamper(&mut analytic);
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let orig = net.params_mut()[pi].data[j];
            net.params_mut()[pi].data[j] = orig + eps;
            let up = net.loss(x, labels, Mode::Train)?;
            net.params_mut()[pi].data[j] = orig - eps;
            let down = net.loss(x, labels, Mode::Train)?;
            net.params_mut()[pi].data[j] = orig;
            *num = (up - down) / (2.0 * eps);
        }
        worst = worst.max(max_relative_error(grad, &numeric));
    }
    Ok(worst)
}

/// Gradient check of one module under the loss Σ r⊙f(x) with fixed random
/// r; covers the input gradient and every parameter gradient.
pub fn module_gradient_check(
    module: &mut dyn Module<f64>,
    x: &Tensor<f64>,
    eps: f64,
    seed: u64,
) -> Result<f64, NnError> {
    let out = module.forward(x, Mode::Train)?;
    let mut rng = rng::seeded(seed);
    let r = Tensor::new(
        out.shape(),
        (0..out.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let loss = |m: &mut dyn Module<f64>, input: &Tensor<f64>| -> Result<f64, NnError> {
        Ok(m.forward(input, Mode::Train)?
            .data
            .iter()
            .zip(&r.data)
            .map(|(a, b)| a * b)
            .sum())
    };
    for p in module.params_mut() {
        p.zero_grad();
    }
    module.forward(x, Mode::Train)?;
    let dx = module.backward(&r)?;
    let analytic: Vec<Vec<f64>> = module
        .params_mut()
        .iter()
        .map(|p| p.grad.clone().unwrap_or_default())
        .collect();

    let mut probe = x.clone();
    let mut numeric_x = vec![0.0; x.len()];
    for (i, num) in numeric_x.iter_mut().enumerate() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let up = loss(module, &probe)?;
        probe.data[i] = orig - eps;
        let down = loss(module, &probe)?;
        probe.data[i] = orig;
        *num = (up - down) / (2.0 * eps);
    }
    let mut worst = max_relative_error(&dx.data, &numeric_x);
    for (pi, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let orig = module.params_mut()[pi].data[j];
            module.params_mut()[pi].data[j] = orig + eps;
            let up = loss(module, x)?;
            module.params_mut()[pi].data[j] = orig - eps;
            let down = loss(module, x)?;
            module.params_mut()[pi].data[j] = orig;
            *num = (up - down) / (2.0 * eps);
        }
        worst = worst.max(max_relative_error(grad, &numeric));
    }
    Ok(worst)
}
