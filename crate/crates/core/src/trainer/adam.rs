//! Bias-corrected Adam with a constant learning rate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers for every parameter plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            m,
            v,
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        }
    }
}

/// One update of every parameter in place.
///
/// `names` only labels errors. With `round_to_f32`, parameters and moments
/// are rounded to the nearest `f32` after the update so that the state can
/// be stored in single precision without changing subsequent steps.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
    round_to_f32: bool,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step got {} parameters, {} gradients and {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).map_or("?", String::as_str);
        if p.numel() != g.len() || state.m[i].shape() != p.shape() {
            return Err(Error::dim("adam_step", p.shape(), state.m[i].shape()));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }

    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let round = |x: f64| if round_to_f32 { x as f32 as f64 } else { x };
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = round(b1 * *mi + (1.0 - b1) * gi);
            *vi = round(b2 * *vi + (1.0 - b2) * gi * gi);
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w = round(*w - lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v]).unwrap()
    }

    fn step(p: &mut Tensor, g: f64, s: &mut AdamState, lr: f64) {
        adam_step(&mut [p], &[vec![g]], &["p".into()], s, lr, false).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one(0.5);
        let mut s = AdamState::new([&p]);
        s.m[0].data_mut()[0] = 0.2;
        s.v[0].data_mut()[0] = 0.04;
        step(&mut p, 0.0, &mut s, 1e-3);
        assert_eq!(s.m[0].data()[0], 0.9 * 0.2);
        assert_eq!(s.v[0].data()[0], 0.999 * 0.04);
        // the decayed moments still move the parameter; with fresh moments
        // a zero gradient leaves it untouched
        let mut q = one(0.5);
        let mut fresh = AdamState::new([&q]);
        step(&mut q, 0.0, &mut fresh, 1e-3);
        assert_eq!(q.data()[0], 0.5);
        assert_eq!(fresh.m[0].data()[0], 0.0);
    }

    #[test]
    fn scalar_recurrence_by_hand() {
        let lr = 0.01;
        let mut p = one(1.0);
        let mut s = AdamState::new([&p]);
        let gs = [0.3, -0.2, 0.5];
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (k, &g) in gs.iter().enumerate() {
            step(&mut p, g, &mut s, lr);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let n = (k + 1) as i32;
            w -= lr * (m / (1.0 - 0.9f64.powi(n))) / ((v / (1.0 - 0.999f64.powi(n))).sqrt() + 1e-8);
            assert!((p.data()[0] - w).abs() < 1e-15);
        }
        // first step: −lr · g / (|g| + ε)
        let mut p = one(0.0);
        let mut s = AdamState::new([&p]);
        step(&mut p, 0.3, &mut s, lr);
        assert!((p.data()[0] + lr * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn identical_gradients_identical_updates() {
        let mut a = Tensor::new(&[2], vec![0.1, 0.1]).unwrap();
        let mut b = Tensor::new(&[2], vec![0.1, 0.1]).unwrap();
        let mut s = AdamState::new([&a, &b]);
        let g = vec![0.7, 0.7];
        adam_step(&mut [&mut a, &mut b], &[g.clone(), g], &["a".into(), "b".into()], &mut s, 1e-2, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data()[0], a.data()[1]);
    }

    #[test]
    fn first_step_nearly_scale_invariant() {
        for g in [0.01, 0.5, 3.0] {
            let mut p1 = one(0.0);
            let mut p2 = one(0.0);
            let mut s1 = AdamState::new([&p1]);
            let mut s2 = AdamState::new([&p2]);
            step(&mut p1, g, &mut s1, 1e-3);
            step(&mut p2, 10.0 * g, &mut s2, 1e-3);
            let (u1, u2) = (p1.data()[0], p2.data()[0]);
            assert!(((u2 - u1) / u1).abs() < 0.01);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = one(0.0);
        let mut s = AdamState::new([&p]);
        let err = adam_step(&mut [&mut p], &[vec![f64::NAN]], &["layer.w".into()], &mut s, 1e-3, false);
        assert!(matches!(err, Err(Error::NonFiniteGradient(n)) if n == "layer.w"));
        assert_eq!(s.step, 0);
        assert_eq!(p.data()[0], 0.0);
    }

    #[test]
    fn rounding_keeps_f32_values() {
        let mut p = one(0.123);
        let mut s = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[vec![0.37]], &["p".into()], &mut s, 1e-3, true).unwrap();
        for x in [p.data()[0], s.m[0].data()[0], s.v[0].data()[0]] {
            assert_eq!(x, x as f32 as f64);
        }
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
        let mut small = vec![vec![0.1]];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0][0], 0.1);
    }
}
