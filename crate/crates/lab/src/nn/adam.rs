//! Adam with bias correction; one state slot per trainable parameter in
//! visit order.

use super::Module;

pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self { beta1: beta1 as f32, beta2: beta2 as f32, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, net: &mut dyn Module, lr: f64) {
        self.t += 1;
        let lr = lr as f32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let mut idx = 0usize;
        let (m, v, first) = (&mut self.m, &mut self.v, self.t == 1);
        net.visit_params("", &mut |p| {
            let Some(grad) = p.grad else { return };
            if first {
                m.push(vec![0.0; grad.len()]);
                v.push(vec![0.0; grad.len()]);
            }
            let (ms, vs) = (&mut m[idx], &mut v[idx]);
            debug_assert_eq!(ms.len(), grad.len(), "param {} changed size", p.name);
            for i in 0..grad.len() {
                let g = grad[i];
                ms[i] = b1 * ms[i] + (1.0 - b1) * g;
                vs[i] = b2 * vs[i] + (1.0 - b2) * g * g;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

/// Linear decay factor: 1 until `decay_start`, then linearly toward 0 at
/// `epochs` (the final training epoch still has a small positive rate).
pub fn lr_decay_factor(epoch: usize, epochs: usize, decay_start: usize) -> f64 {
    if epoch < decay_start {
        1.0
    } else {
        (epochs - epoch) as f64 / (epochs - decay_start) as f64
    }
}
