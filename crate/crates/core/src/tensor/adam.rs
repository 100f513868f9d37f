use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }
}

fn check_shapes(params: &[Tensor], others: &[Tensor], what: &str) -> Result<()> {
    if params.len() != others.len() {
        return Err(Error::ShapeMismatch(format!("{} params but {} {what}", params.len(), others.len())));
    }
    for (i, (p, o)) in params.iter().zip(others).enumerate() {
        if p.shape() != o.shape() {
            return Err(Error::ShapeMismatch(format!(
                "param {i} has shape {:?}, {what} has {:?}",
                p.shape(),
                o.shape()
            )));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    check_shapes(params, grads, "gradients")?;
    check_shapes(params, &state.first_moment, "moments")?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *x -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0])];
        let mut st = AdamState::new(&p, 1e-3);
        st.first_moment[0] = Tensor::from_vec(vec![0.5, 0.5]);
        let g = vec![Tensor::zeros(&[2])];
        let before = p.clone();
        // nonzero moment moves params; with zero moments nothing moves
        let mut st0 = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &g, &mut st0).unwrap();
        assert_eq!(p, before);
        adam_step(&mut p.clone(), &g, &mut st).unwrap();
        assert_eq!(st.first_moment[0].data(), &[0.45, 0.45]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.2, 1e-3] {
            let mut p = vec![Tensor::from_vec(vec![0.0])];
            let mut st = AdamState::new(&p, 0.01);
            adam_step(&mut p, &[Tensor::from_vec(vec![g])], &mut st).unwrap();
            assert!((p[0].data()[0] + 0.01 * f64::signum(g)).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p, 0.1);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st).is_err());
        assert!(adam_step(&mut p, &[], &mut st).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::from_vec(vec![3.0]), Tensor::from_vec(vec![4.0])];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::from_vec(vec![0.1])];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1]);
    }
}
