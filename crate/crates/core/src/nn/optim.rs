use super::tensor::Tensor;
use super::{NnError, Real};

/// Bias-corrected Adam with per-parameter moments created on first use.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: f64) -> Result<Self, NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate {lr} must be positive"
            )));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }
}

/// One Adam update of every tensor in `params` from its accumulated gradient.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut [&mut Tensor<T>],
) -> Result<(), NnError> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} moment slots for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let glen = p.grad.as_ref().map_or(0, Vec::len);
        if state.m[i].len() != p.len() || glen != p.len() {
            return Err(NnError::ShapeMismatch(format!(
                "parameter {i}: moments or gradient do not match its shape"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(state.lr), T::of(state.eps));
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad.as_ref().expect("checked above").clone();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data.iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = Tensor::<f64>::param([3, 1, 1, 1], vec![1.0, -2.0, 3.0]);
        let mut st = AdamState::new(1e-3).unwrap();
        adam_step(&mut st, &mut [&mut p]).unwrap();
        assert_eq!(p.data, vec![1.0, -2.0, 3.0]);

        p.grad = Some(vec![1.0, 1.0, 1.0]);
        adam_step(&mut st, &mut [&mut p]).unwrap();
        let m_before = st.m[0].clone();
        p.zero_grad();
        adam_step(&mut st, &mut [&mut p]).unwrap();
        assert!(st.m[0]
            .iter()
            .zip(&m_before)
            .all(|(a, b)| (a - 0.9 * b).abs() < 1e-15));
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let lr = 1e-4;
        let mut p = Tensor::<f64>::param([2, 1, 1, 1], vec![0.0, 0.0]);
        p.grad = Some(vec![0.5, -3.0]);
        let mut st = AdamState::new(lr).unwrap();
        adam_step(&mut st, &mut [&mut p]).unwrap();
        assert!((p.data[0] + lr).abs() < lr * 1e-6);
        assert!((p.data[1] - lr).abs() < lr * 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::<f64>::param([2, 1, 1, 1], vec![0.0, 0.0]);
        let mut st = AdamState::new(1e-3).unwrap();
        st.m = vec![vec![0.0; 3]];
        st.v = vec![vec![0.0; 3]];
        assert!(adam_step(&mut st, &mut [&mut p]).is_err());
        assert!(AdamState::<f64>::new(0.0).is_err());
    }
}
