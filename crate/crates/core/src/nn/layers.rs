use rand::Rng as _;

use super::spec::{ConvSpec, Expansion, LayerSpec};
use super::tensor::{Shape, Tensor};
use super::{Mode, NnError, Real};
use crate::rng::Rng;

/// A differentiable layer. `backward` consumes the cache left by the last
/// training-mode `forward`, accumulates parameter gradients and returns the
/// gradient with respect to the input.
pub trait Module<T: Real>: Send {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError>;
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
    /// Non-trainable state saved with the parameters (batch-norm running statistics).
    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}

fn no_cache() -> NnError {
    NnError::ShapeMismatch("backward called without a training forward pass".into())
}

fn check_grad_shape<T: Real>(grad: &Tensor<T>, want: Shape) -> Result<(), NnError> {
    if grad.shape() == want {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch(format!(
            "gradient {:?}, expected {want:?}",
            grad.shape()
        )))
    }
}

fn he_uniform<T: Real>(shape: Shape, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::param(shape, data)
}

pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(spec: ConvSpec, bias: bool, rng: &mut Rng) -> Result<Self, NnError> {
        spec.validate()?;
        let ws = spec.weight_shape();
        let weight = he_uniform(ws, ws[1] * ws[2] * ws[3], rng);
        let bias = bias.then(|| {
            Tensor::param(
                [spec.out_channels, 1, 1, 1],
                vec![T::zero(); spec.out_channels],
            )
        });
        Ok(Self {
            spec,
            weight,
            bias,
            input: None,
        })
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, usize), NnError> {
        if x.channels() != self.spec.in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "convolution expects {} channels, got {:?}",
                self.spec.in_channels,
                x.shape()
            )));
        }
        let [_, _, h, w] = x.shape();
        self.spec.output_hw(h, w)
    }

    /// Unfold the receptive fields of channels `c0..c0+cg` of item `b` into a
    /// (cg·k·k) × (ho·wo) matrix.
    fn im2col(
        &self,
        x: &Tensor<T>,
        b: usize,
        c0: usize,
        cg: usize,
        (ho, wo): (usize, usize),
        cols: &mut [T],
    ) {
        let [_, _, h, w] = x.shape();
        let (k, s, p) = (
            self.spec.kernel,
            self.spec.stride,
            self.spec.padding as isize,
        );
        let l = ho * wo;
        for ci in 0..cg {
            let plane = &x.data[x.index(b, c0 + ci, 0, 0)..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * l..][..l];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize - p + ky as isize;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..][..w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s) as isize - p + kx as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(
        &self,
        cols: &[T],
        dx: &mut Tensor<T>,
        b: usize,
        c0: usize,
        cg: usize,
        (ho, wo): (usize, usize),
    ) {
        let [_, _, h, w] = dx.shape();
        let (k, s, p) = (
            self.spec.kernel,
            self.spec.stride,
            self.spec.padding as isize,
        );
        let l = ho * wo;
        for ci in 0..cg {
            let base = dx.index(b, c0 + ci, 0, 0);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * l..][..l];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize - p + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * s) as isize - p + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                dx.data[base + iy as usize * w + ix as usize] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (ho, wo) = self.geometry(x)?;
        let n = x.batch();
        let g = self.spec.groups;
        let (cg, ng) = (self.spec.in_channels / g, self.spec.out_channels / g);
        let kk = cg * self.spec.kernel * self.spec.kernel;
        let l = ho * wo;
        let mut out = Tensor::zeros([n, self.spec.out_channels, ho, wo]);
        let mut cols = vec![T::zero(); kk * l];
        for b in 0..n {
            for gi in 0..g {
                self.im2col(x, b, gi * cg, cg, (ho, wo), &mut cols);
                let wg = &self.weight.data[gi * ng * kk..(gi + 1) * ng * kk];
                let start = (b * self.spec.out_channels + gi * ng) * l;
                let dst = &mut out.data[start..start + ng * l];
                T::gemm(
                    ng,
                    kk,
                    l,
                    T::one(),
                    wg,
                    (kk, 1),
                    &cols,
                    (l, 1),
                    T::zero(),
                    dst,
                    (l, 1),
                );
            }
            if let Some(bias) = &self.bias {
                for (o, &bv) in bias.data.iter().enumerate() {
                    let start = (b * self.spec.out_channels + o) * l;
                    out.data[start..start + l].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or_else(no_cache)?;
        let (ho, wo) = self.geometry(&x)?;
        let n = x.batch();
        check_grad_shape(grad, [n, self.spec.out_channels, ho, wo])?;
        let g = self.spec.groups;
        let (cg, ng) = (self.spec.in_channels / g, self.spec.out_channels / g);
        let kk = cg * self.spec.kernel * self.spec.kernel;
        let l = ho * wo;
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![T::zero(); kk * l];
        let mut dcols = vec![T::zero(); kk * l];
        let mut wgrad = self.weight.grad.take().expect("parameter gradient");
        for b in 0..n {
            for gi in 0..g {
                self.im2col(&x, b, gi * cg, cg, (ho, wo), &mut cols);
                let start = (b * self.spec.out_channels + gi * ng) * l;
                let dy = &grad.data[start..start + ng * l];
                let dwg = &mut wgrad[gi * ng * kk..(gi + 1) * ng * kk];
                // dW_g += dY_g · colsᵀ
                T::gemm(
                    ng,
                    l,
                    kk,
                    T::one(),
                    dy,
                    (l, 1),
                    &cols,
                    (1, l),
                    T::one(),
                    dwg,
                    (kk, 1),
                );
                // dcols = W_gᵀ · dY_g
                let wg = &self.weight.data[gi * ng * kk..(gi + 1) * ng * kk];
                T::gemm(
                    kk,
                    ng,
                    l,
                    T::one(),
                    wg,
                    (1, kk),
                    dy,
                    (l, 1),
                    T::zero(),
                    &mut dcols,
                    (l, 1),
                );
                self.col2im(&dcols, &mut dx, b, gi * cg, cg, (ho, wo));
            }
        }
        self.weight.grad = Some(wgrad);
        if let Some(bias) = &mut self.bias {
            let bg = bias.grad.as_mut().expect("parameter gradient");
            for b in 0..n {
                for (o, acc) in bg.iter_mut().enumerate() {
                    let start = (b * self.spec.out_channels + o) * l;
                    *acc += grad.data[start..start + l].iter().copied().sum::<T>();
                }
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

pub const BN_EPS: f64 = 1e-6;
/// Weight kept by the running statistics at each training step.
pub const BN_MOMENTUM: f64 = 0.9;

pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let shape = [channels, 1, 1, 1];
        Self {
            gamma: Tensor::param(shape, vec![T::one(); channels]),
            beta: Tensor::param(shape, vec![T::zero(); channels]),
            running_mean: Tensor::zeros(shape),
            running_var: Tensor::filled(shape, T::one()),
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let [n, c, h, w] = x.shape();
        if c != self.channels() {
            return Err(NnError::ShapeMismatch(format!(
                "batch norm over {} channels got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        let plane = h * w;
        let count = n * plane;
        let eps = T::of(BN_EPS);
        let mut out = Tensor::zeros(x.shape());
        match mode {
            Mode::Inference => {
                for ch in 0..c {
                    let inv = T::one() / (self.running_var.data[ch] + eps).sqrt();
                    let (g, bt, m) = (
                        self.gamma.data[ch],
                        self.beta.data[ch],
                        self.running_mean.data[ch],
                    );
                    for b in 0..n {
                        let s = x.index(b, ch, 0, 0);
                        for i in s..s + plane {
                            out.data[i] = g * (x.data[i] - m) * inv + bt;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                let mut xhat = Tensor::zeros(x.shape());
                let mut inv_std = vec![T::zero(); c];
                let cnt = T::of(count as f64);
                let mom = T::of(BN_MOMENTUM);
                for ch in 0..c {
                    let mut sum = T::zero();
                    for b in 0..n {
                        let s = x.index(b, ch, 0, 0);
                        sum += x.data[s..s + plane].iter().copied().sum::<T>();
                    }
                    let mean = sum / cnt;
                    let mut sq = T::zero();
                    for b in 0..n {
                        let s = x.index(b, ch, 0, 0);
                        sq += x.data[s..s + plane]
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<T>();
                    }
                    let var = sq / cnt;
                    let inv = T::one() / (var + eps).sqrt();
                    inv_std[ch] = inv;
                    for b in 0..n {
                        let s = x.index(b, ch, 0, 0);
                        for i in s..s + plane {
                            let xh = (x.data[i] - mean) * inv;
                            xhat.data[i] = xh;
                            out.data[i] = self.gamma.data[ch] * xh + self.beta.data[ch];
                        }
                    }
                    let unbiased = if count > 1 {
                        var * cnt / (cnt - T::one())
                    } else {
                        var
                    };
                    self.running_mean.data[ch] =
                        mom * self.running_mean.data[ch] + (T::one() - mom) * mean;
                    self.running_var.data[ch] =
                        mom * self.running_var.data[ch] + (T::one() - mom) * unbiased;
                }
                self.cache = Some((xhat, inv_std));
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (xhat, inv_std) = self.cache.take().ok_or_else(no_cache)?;
        check_grad_shape(grad, xhat.shape())?;
        let [n, c, h, w] = xhat.shape();
        let plane = h * w;
        let cnt = T::of((n * plane) as f64);
        let mut dx = Tensor::zeros(xhat.shape());
        let gg = self.gamma.grad.as_mut().expect("parameter gradient");
        let bg = self.beta.grad.as_mut().expect("parameter gradient");
        for ch in 0..c {
            let (mut sdy, mut sdyx) = (T::zero(), T::zero());
            for b in 0..n {
                let s = xhat.index(b, ch, 0, 0);
                for i in s..s + plane {
                    sdy += grad.data[i];
                    sdyx += grad.data[i] * xhat.data[i];
                }
            }
            gg[ch] += sdyx;
            bg[ch] += sdy;
            let k = self.gamma.data[ch] * inv_std[ch] / cnt;
            for b in 0..n {
                let s = xhat.index(b, ch, 0, 0);
                for i in s..s + plane {
                    dx.data[i] = k * (cnt * grad.data[i] - sdy - xhat.data[i] * sdyx);
                }
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl<T: Real> Module<T> for Relu {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.mask = (mode == Mode::Train).then(|| x.data.iter().map(|&v| v > T::zero()).collect());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mask = self.mask.take().ok_or_else(no_cache)?;
        if mask.len() != grad.len() {
            return Err(NnError::ShapeMismatch("relu gradient size".into()));
        }
        let mut dx = grad.clone();
        dx.data.iter_mut().zip(&mask).for_each(|(v, &m)| {
            if !m {
                *v = T::zero()
            }
        });
        Ok(dx)
    }
}

/// Max pooling; padded positions never win.
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Shape, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }
}

impl<T: Real> Module<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = ConvSpec {
            in_channels: c,
            out_channels: c,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            groups: 1,
        }
        .output_hw(h, w)?;
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut arg = vec![0usize; out.len()];
        let p = self.padding as isize;
        for b in 0..n {
            for ch in 0..c {
                let base = x.index(b, ch, 0, 0);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut at = usize::MAX;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let i = base + iy as usize * w + ix as usize;
                                if at == usize::MAX || x.data[i] > best {
                                    best = x.data[i];
                                    at = i;
                                }
                            }
                        }
                        let o = out.index(b, ch, oy, ox);
                        out.data[o] = best;
                        arg[o] = at;
                    }
                }
            }
        }
        self.cache = (mode == Mode::Train).then(|| (x.shape(), arg));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (shape, arg) = self.cache.take().ok_or_else(no_cache)?;
        if arg.len() != grad.len() {
            return Err(NnError::ShapeMismatch("max-pool gradient size".into()));
        }
        let mut dx = Tensor::zeros(shape);
        for (&i, &g) in arg.iter().zip(&grad.data) {
            dx.data[i] += g;
        }
        Ok(dx)
    }
}

/// Average pooling without padding.
pub struct AvgPool2d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<Shape>,
}

impl AvgPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            cache: None,
        }
    }
}

impl<T: Real> Module<T> for AvgPool2d {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = ConvSpec::new(c, c, self.kernel, self.stride, 0).output_hw(h, w)?;
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let scale = T::one() / T::of((self.kernel * self.kernel) as f64);
        for b in 0..n {
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = T::zero();
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                s += x.at(b, ch, oy * self.stride + ky, ox * self.stride + kx);
                            }
                        }
                        let o = out.index(b, ch, oy, ox);
                        out.data[o] = s * scale;
                    }
                }
            }
        }
        self.cache = (mode == Mode::Train).then(|| x.shape());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.cache.take().ok_or_else(no_cache)?;
        let mut dx = Tensor::zeros(shape);
        let [n, c, ho, wo] = grad.shape();
        let scale = T::one() / T::of((self.kernel * self.kernel) as f64);
        for b in 0..n {
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = grad.at(b, ch, oy, ox) * scale;
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let i =
                                    dx.index(b, ch, oy * self.stride + ky, ox * self.stride + kx);
                                dx.data[i] += g;
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Default)]
pub struct GlobalAvgPool {
    cache: Option<Shape>,
}

impl<T: Real> Module<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let scale = T::one() / T::of(plane as f64);
        let data = x
            .data
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * scale)
            .collect();
        self.cache = (mode == Mode::Train).then(|| x.shape());
        Tensor::new([n, c, 1, 1], data)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.cache.take().ok_or_else(no_cache)?;
        let plane = shape[2] * shape[3];
        let scale = T::one() / T::of(plane as f64);
        let data = grad
            .data
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * scale, plane))
            .collect();
        Tensor::new(shape, data)
    }
}

#[derive(Default)]
pub struct Flatten {
    cache: Option<Shape>,
}

impl<T: Real> Module<T> for Flatten {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        self.cache = (mode == Mode::Train).then(|| x.shape());
        x.clone().reshape([x.batch(), x.item_len(), 1, 1])
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.cache.take().ok_or_else(no_cache)?;
        grad.clone().reshape(shape)
    }
}

/// y = x·Wᵀ + b on (N, inputs, 1, 1) tensors.
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: he_uniform([outputs, inputs, 1, 1], inputs, rng),
            bias: Tensor::param([outputs, 1, 1, 1], vec![T::zero(); outputs]),
            input: None,
        }
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s[1], s[0])
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (fin, fout) = self.dims();
        if x.shape()[1..] != [fin, 1, 1] {
            return Err(NnError::ShapeMismatch(format!(
                "linear layer expects (N, {fin}, 1, 1), got {:?}",
                x.shape()
            )));
        }
        let n = x.batch();
        let mut out = Tensor::zeros([n, fout, 1, 1]);
        for row in out.data.chunks_mut(fout) {
            row.copy_from_slice(&self.bias.data);
        }
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            &x.data,
            (fin, 1),
            &self.weight.data,
            (1, fin),
            T::one(),
            &mut out.data,
            (fout, 1),
        );
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or_else(no_cache)?;
        let (fin, fout) = self.dims();
        let n = x.batch();
        check_grad_shape(grad, [n, fout, 1, 1])?;
        let wg = self.weight.grad.as_mut().expect("parameter gradient");
        T::gemm(
            fout,
            n,
            fin,
            T::one(),
            &grad.data,
            (1, fout),
            &x.data,
            (fin, 1),
            T::one(),
            wg,
            (fin, 1),
        );
        let bg = self.bias.grad.as_mut().expect("parameter gradient");
        for row in grad.data.chunks(fout) {
            bg.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }
        let mut dx = Tensor::zeros(x.shape());
        T::gemm(
            n,
            fout,
            fin,
            T::one(),
            &grad.data,
            (fout, 1),
            &self.weight.data,
            (fin, 1),
            T::zero(),
            &mut dx.data,
            (fin, 1),
        );
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Default)]
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Module<T>>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Module<T>>>) -> Self {
        Self { layers }
    }
}

impl<T: Real> Module<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut())
            .collect()
    }
}

/// ReLU(main(x) + shortcut(x)); the shortcut is the identity when absent.
pub struct Residual<T> {
    pub main: Sequential<T>,
    pub shortcut: Option<Sequential<T>>,
    relu: Relu,
}

impl<T: Real> Residual<T> {
    pub fn new(main: Sequential<T>, shortcut: Option<Sequential<T>>) -> Self {
        Self {
            main,
            shortcut,
            relu: Relu::default(),
        }
    }
}

impl<T: Real> Module<T> for Residual<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut a = self.main.forward(x, mode)?;
        match &mut self.shortcut {
            Some(s) => a.add_assign(&s.forward(x, mode)?)?,
            None => a.add_assign(x)?,
        }
        self.relu.forward(&a, mode)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = Module::<T>::backward(&mut self.relu, grad)?;
        let mut dx = self.main.backward(&g)?;
        match &mut self.shortcut {
            Some(s) => dx.add_assign(&s.backward(&g)?)?,
            None => dx.add_assign(&g)?,
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.main.params_mut();
        if let Some(s) = &mut self.shortcut {
            v.extend(s.params_mut());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.main.buffers_mut();
        if let Some(s) = &mut self.shortcut {
            v.extend(s.buffers_mut());
        }
        v
    }
}

/// Each layer sees the concatenation of the block input and every earlier
/// layer's output; the block returns the full concatenation.
pub struct DenseBlock<T> {
    pub layers: Vec<Sequential<T>>,
    pub growth: usize,
    in_channels: Option<usize>,
}

impl<T: Real> DenseBlock<T> {
    pub fn new(layers: Vec<Sequential<T>>, growth: usize) -> Self {
        Self {
            layers,
            growth,
            in_channels: None,
        }
    }
}

impl<T: Real> Module<T> for DenseBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut feat = x.clone();
        for l in &mut self.layers {
            let out = l.forward(&feat, mode)?;
            feat = feat.concat_channels(&out)?;
        }
        self.in_channels = (mode == Mode::Train).then(|| x.channels());
        Ok(feat)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let c0 = self.in_channels.take().ok_or_else(no_cache)?;
        if grad.channels() != c0 + self.layers.len() * self.growth {
            return Err(NnError::ShapeMismatch(
                "dense block gradient channels".into(),
            ));
        }
        let mut g = grad.clone();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            let c = c0 + i * self.growth;
            let dout = g.slice_channels(c, c + self.growth);
            let din = l.backward(&dout)?;
            g = g.slice_channels(0, c);
            g.add_assign(&din)?;
        }
        Ok(g)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut())
            .collect()
    }
}

fn build_sequence<T: Real>(layers: &[LayerSpec], rng: &mut Rng) -> Result<Sequential<T>, NnError> {
    Ok(Sequential::new(
        layers
            .iter()
            .map(|l| build_module(l, rng))
            .collect::<Result<_, _>>()?,
    ))
}

/// Instantiate a layer record with freshly initialised weights.
pub fn build_module<T: Real>(
    spec: &LayerSpec,
    rng: &mut Rng,
) -> Result<Box<dyn Module<T>>, NnError> {
    Ok(match spec {
        LayerSpec::Conv { conv, bias } => Box::new(Conv2d::new(*conv, *bias, rng)?),
        LayerSpec::BatchNorm { channels } => Box::new(BatchNorm2d::new(*channels)),
        LayerSpec::Relu => Box::new(Relu::default()),
        LayerSpec::MaxPool {
            kernel,
            stride,
            padding,
        } => Box::new(MaxPool2d::new(*kernel, *stride, *padding)),
        LayerSpec::AvgPool { kernel, stride } => Box::new(AvgPool2d::new(*kernel, *stride)),
        LayerSpec::GlobalAvgPool => Box::new(GlobalAvgPool::default()),
        LayerSpec::Flatten => Box::new(Flatten::default()),
        LayerSpec::Linear { inputs, outputs } => Box::new(Linear::new(*inputs, *outputs, rng)),
        composite => match composite.expand() {
            Expansion::Primitive => unreachable!("primitive records handled above"),
            Expansion::Sequence(v) => Box::new(build_sequence::<T>(&v, rng)?),
            Expansion::Residual { main, shortcut } => Box::new(Residual::new(
                build_sequence(&main, rng)?,
                shortcut.map(|s| build_sequence(&s, rng)).transpose()?,
            )),
            Expansion::Dense { layers, growth } => Box::new(DenseBlock::new(
                layers
                    .iter()
                    .map(|l| build_sequence(l, rng))
                    .collect::<Result<_, _>>()?,
                growth,
            )),
        },
    })
}
