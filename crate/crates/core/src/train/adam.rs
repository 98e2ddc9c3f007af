//! Adam with the usual constants (beta1 0.9, beta2 0.999, eps 1e-8).

use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

pub struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    pub fn new(param_sizes: &[usize]) -> Self {
        Adam {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update over parameters whose `grad` buffers are populated.
    /// Gradients are consumed.
    pub fn step(&mut self, lr: f64, params: &mut [(String, &mut Tensor<f32>)]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let lr = lr as f32;
        let (bc1, bc2) = (bc1 as f32, bc2 as f32);
        let eps = EPS as f32;

        for (i, (_, p)) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad().map(<[f32]>::to_vec) else {
                continue;
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.clear_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Tensor::from_vec(vec![2], vec![1.0f32, -2.0]).unwrap();
        p.set_requires_grad(true);
        p.set_grad(vec![0.5, -3.0]);
        let mut adam = Adam::new(&[2]);
        let mut params = vec![("p".to_string(), &mut p)];
        adam.step(0.001, &mut params);
        // With bias correction the first step is ~lr * sign(g).
        let d = p.data();
        assert!((d[0] - (1.0 - 0.001)).abs() < 1e-5);
        assert!((d[1] - (-2.0 + 0.001)).abs() < 1e-5);
        assert!(p.grad().is_none());
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut p = Tensor::from_vec(vec![3], vec![0.3f32, 0.6, -0.9]).unwrap();
            p.set_requires_grad(true);
            let mut adam = Adam::new(&[3]);
            for k in 0..10 {
                p.set_grad(vec![0.1 * k as f32, -0.2, 0.05]);
                let mut params = vec![("p".to_string(), &mut p)];
                adam.step(0.01, &mut params);
            }
            p.data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
