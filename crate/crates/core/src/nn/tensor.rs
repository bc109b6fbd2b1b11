use super::{NnError, Real};

pub type Shape = [usize; 4];

/// Dense (N, C, H, W) grid, with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
            grad: None,
        }
    }

    pub fn filled(shape: Shape, v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
            grad: None,
        }
    }

    /// A trainable tensor: gradient allocated and zeroed.
    pub fn param(shape: Shape, data: Vec<T>) -> Self {
        let mut t = Self::new(shape, data).expect("parameter shape");
        t.grad = Some(vec![T::zero(); t.data.len()]);
        t
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self, NnError> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.f64())).collect()),
        }
    }

    /// Items `idx` of the batch, in that order.
    pub fn gather(&self, idx: &[usize]) -> Tensor<T> {
        let len = self.item_len();
        let mut data = Vec::with_capacity(idx.len() * len);
        for &i in idx {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        Tensor {
            shape: [idx.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
            grad: None,
        }
    }

    /// Concatenate along channels; spatial sizes and batch must agree.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let [n, c1, h, w] = self.shape;
        let [n2, c2, h2, w2] = other.shape;
        if (n, h, w) != (n2, h2, w2) {
            return Err(NnError::ShapeMismatch(format!(
                "concat {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(self.len() + other.len());
        for b in 0..n {
            data.extend_from_slice(&self.data[b * c1 * plane..(b + 1) * c1 * plane]);
            data.extend_from_slice(&other.data[b * c2 * plane..(b + 1) * c2 * plane]);
        }
        Ok(Tensor {
            shape: [n, c1 + c2, h, w],
            data,
            grad: None,
        })
    }

    /// Channels `from..to` of every item.
    pub fn slice_channels(&self, from: usize, to: usize) -> Tensor<T> {
        let [n, c, h, w] = self.shape;
        assert!(from <= to && to <= c, "channel range");
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (to - from) * plane);
        for b in 0..n {
            data.extend_from_slice(&self.data[(b * c + from) * plane..(b * c + to) * plane]);
        }
        Tensor {
            shape: [n, to - from, h, w],
            data,
            grad: None,
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<(), NnError> {
        if self.shape != other.shape {
            return Err(NnError::ShapeMismatch(format!(
                "add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }
}
