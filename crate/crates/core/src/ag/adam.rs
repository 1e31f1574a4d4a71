use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{AgError, NamedTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates and the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[NamedTensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One bias-corrected Adam update. Grads are validated up front so a
/// rejected step leaves params and state untouched.
pub fn adam_step(
    params: &mut [NamedTensor],
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<(), AgError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(AgError::StateMismatch(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.tensor.shape() != g.shape() || state.m[i].shape() != g.shape() || state.v[i].shape() != g.shape() {
            return Err(AgError::StateMismatch(p.name.clone()));
        }
        if !g.is_finite() {
            return Err(AgError::NonFiniteGradient(p.name.clone()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let gk = f64::from(g.data()[k]);
            let mk = b1 * f64::from(m[k]) + (1.0 - b1) * gk;
            let vk = b2 * f64::from(v[k]) + (1.0 - b2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = hyper.lr * (mk / bc1) / ((vk / bc2).sqrt() + hyper.eps);
            *w = (f64::from(*w) - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, data: Vec<f32>) -> NamedTensor {
        NamedTensor::new(name, Tensor::new(vec![data.len()], data).unwrap())
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![one("w", vec![0.5, -1.0, 2.0])];
        let mut st = AdamState::new(&params);
        let g = Tensor::full(&[3], 1.0f32);
        adam_step(&mut params, &[g], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(st.t, 1);
        for (after, before) in params[0].tensor.data().iter().zip([0.5f32, -1.0, 2.0]) {
            assert!(((after - before) + 0.001).abs() < 1e-6, "{after} vs {before}");
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut params = vec![one("w", vec![0.25, -3.0])];
        let before = params.clone();
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::zeros(&[2])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // f(x) = x², f'(x) = 2x, against a scalar f64 simulation.
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut oracle = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            oracle.push(x);
        }

        let mut params = vec![one("x", vec![1.0])];
        let mut st = AdamState::new(&params);
        let hyper = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut prev = 1.0f32;
        for want in oracle {
            let x = params[0].tensor.data()[0];
            adam_step(&mut params, &[Tensor::full(&[1], 2.0 * x)], &mut st, &hyper).unwrap();
            let now = params[0].tensor.data()[0];
            assert!(now < prev && now > 0.0);
            assert!((f64::from(now) - want).abs() < 1e-5, "{now} vs {want}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut params = vec![one("a", vec![1.0]), one("b", vec![1.0])];
        let before = params.clone();
        let mut st = AdamState::new(&params);
        let grads = [Tensor::full(&[1], 1.0f32), Tensor::full(&[1], f32::NAN)];
        match adam_step(&mut params, &grads, &mut st, &AdamConfig::default()) {
            Err(AgError::NonFiniteGradient(name)) => assert_eq!(name, "b"),
            other => panic!("{other:?}"),
        }
        assert_eq!(params, before);
        assert_eq!(st.t, 0);
    }
}
