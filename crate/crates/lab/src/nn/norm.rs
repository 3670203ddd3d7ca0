//! Batch and instance normalization.

use ndarray::{Array1, Array2, Array4, Axis};

use super::{visit_vec, Mode, ParamVisit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Statistics over (N, H, W) per channel; running stats tracked for eval.
    Batch,
    /// Statistics over (H, W) per sample and channel, in train and eval alike.
    Instance,
}

pub struct Norm {
    pub kind: NormKind,
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
    pub ggamma: Array1<f32>,
    pub gbeta: Array1<f32>,
}

pub struct NormCache {
    x_hat: Array4<f32>,
    /// `[N, C]` inverse std actually used; rows identical for batch mode.
    inv_std: Array2<f32>,
    /// Whether batch/instance statistics were used (backward treats the
    /// statistics as functions of the input only in that case).
    batch_stats: bool,
}

impl Norm {
    pub fn new(kind: NormKind, channels: usize) -> Self {
        Self {
            kind,
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            ggamma: Array1::zeros(channels),
            gbeta: Array1::zeros(channels),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> (Array4<f32>, NormCache) {
        match self.kind {
            NormKind::Batch if !mode.stochastic() => self.forward_batch_eval(x),
            NormKind::Batch => self.forward_batch_train(x, mode.update_running()),
            NormKind::Instance => self.forward_instance(x),
        }
    }

    fn forward_batch_train(&mut self, x: &Array4<f32>, update_running: bool) -> (Array4<f32>, NormCache) {
        let (n, c, h, w) = dims(x);
        let m = (n * h * w) as f64;
        let mut x_hat = x.clone();
        let mut inv_std = Array2::zeros((n, c));
        for ch in 0..c {
            let mut sum = 0.0f64;
            for s in 0..n {
                sum += plane(x, s, ch).iter().map(|&v| f64::from(v)).sum::<f64>();
            }
            let mu = sum / m;
            let mut var = 0.0f64;
            for s in 0..n {
                var += plane(x, s, ch).iter().map(|&v| (f64::from(v) - mu) * (f64::from(v) - mu)).sum::<f64>();
            }
            let var = var / m;
            let istd = 1.0 / (var + f64::from(self.eps)).sqrt();
            for s in 0..n {
                inv_std[[s, ch]] = istd as f32;
                for v in plane_mut(&mut x_hat, s, ch) {
                    *v = ((f64::from(*v) - mu) * istd) as f32;
                }
            }
            if update_running {
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mu as f32;
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased as f32;
            }
        }
        let y = self.scale_shift(&x_hat);
        (y, NormCache { x_hat, inv_std, batch_stats: true })
    }

    fn forward_batch_eval(&self, x: &Array4<f32>) -> (Array4<f32>, NormCache) {
        let (n, c, _, _) = dims(x);
        let mut x_hat = x.clone();
        let mut inv_std = Array2::zeros((n, c));
        for ch in 0..c {
            let mu = f64::from(self.running_mean[ch]);
            let istd = 1.0 / (f64::from(self.running_var[ch]) + f64::from(self.eps)).sqrt();
            for s in 0..n {
                inv_std[[s, ch]] = istd as f32;
                for v in plane_mut(&mut x_hat, s, ch) {
                    *v = ((f64::from(*v) - mu) * istd) as f32;
                }
            }
        }
        let y = self.scale_shift(&x_hat);
        (y, NormCache { x_hat, inv_std, batch_stats: false })
    }

    fn forward_instance(&self, x: &Array4<f32>) -> (Array4<f32>, NormCache) {
        let (n, c, h, w) = dims(x);
        let m = (h * w) as f64;
        let mut x_hat = x.clone();
        let mut inv_std = Array2::zeros((n, c));
        for s in 0..n {
            for ch in 0..c {
                let p = plane(x, s, ch);
                let mu = p.iter().map(|&v| f64::from(v)).sum::<f64>() / m;
                let var = p.iter().map(|&v| (f64::from(v) - mu) * (f64::from(v) - mu)).sum::<f64>() / m;
                let istd = 1.0 / (var + f64::from(self.eps)).sqrt();
                inv_std[[s, ch]] = istd as f32;
                for v in plane_mut(&mut x_hat, s, ch) {
                    *v = ((f64::from(*v) - mu) * istd) as f32;
                }
            }
        }
        let y = self.scale_shift(&x_hat);
        (y, NormCache { x_hat, inv_std, batch_stats: true })
    }

    fn scale_shift(&self, x_hat: &Array4<f32>) -> Array4<f32> {
        let mut y = x_hat.clone();
        let (n, c, _, _) = dims(x_hat);
        for s in 0..n {
            for ch in 0..c {
                let (g, b) = (self.gamma[ch], self.beta[ch]);
                for v in plane_mut(&mut y, s, ch) {
                    *v = *v * g + b;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &NormCache, dy: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = dims(dy);
        let mut dx = Array4::zeros(dy.raw_dim());
        // Gradients for gamma/beta are the same in every mode.
        for ch in 0..c {
            let mut dg = 0.0f64;
            let mut db = 0.0f64;
            for s in 0..n {
                let d = plane(dy, s, ch);
                let xh = plane(&cache.x_hat, s, ch);
                for (&dv, &xv) in d.iter().zip(xh) {
                    dg += f64::from(dv) * f64::from(xv);
                    db += f64::from(dv);
                }
            }
            self.ggamma[ch] += dg as f32;
            self.gbeta[ch] += db as f32;
        }
        if !cache.batch_stats {
            // Statistics were constants (running stats): plain affine chain.
            for s in 0..n {
                for ch in 0..c {
                    let k = self.gamma[ch] * cache.inv_std[[s, ch]];
                    let d = plane(dy, s, ch);
                    for (o, &dv) in plane_mut(&mut dx, s, ch).iter_mut().zip(d) {
                        *o = k * dv;
                    }
                }
            }
            return dx;
        }
        match self.kind {
            NormKind::Batch => {
                let m = (n * h * w) as f64;
                for ch in 0..c {
                    let mut sum_dy = 0.0f64;
                    let mut sum_dy_xhat = 0.0f64;
                    for s in 0..n {
                        let d = plane(dy, s, ch);
                        let xh = plane(&cache.x_hat, s, ch);
                        for (&dv, &xv) in d.iter().zip(xh) {
                            sum_dy += f64::from(dv);
                            sum_dy_xhat += f64::from(dv) * f64::from(xv);
                        }
                    }
                    let k = f64::from(self.gamma[ch]) * f64::from(cache.inv_std[[0, ch]]);
                    for s in 0..n {
                        let d = plane(dy, s, ch).to_vec();
                        let xh = plane(&cache.x_hat, s, ch).to_vec();
                        for ((o, dv), xv) in plane_mut(&mut dx, s, ch).iter_mut().zip(d).zip(xh) {
                            *o = (k * (f64::from(dv) - sum_dy / m - f64::from(xv) * sum_dy_xhat / m))
                                as f32;
                        }
                    }
                }
            }
            NormKind::Instance => {
                let m = (h * w) as f64;
                for s in 0..n {
                    for ch in 0..c {
                        let d = plane(dy, s, ch);
                        let xh = plane(&cache.x_hat, s, ch);
                        let mut sum_dy = 0.0f64;
                        let mut sum_dy_xhat = 0.0f64;
                        for (&dv, &xv) in d.iter().zip(xh) {
                            sum_dy += f64::from(dv);
                            sum_dy_xhat += f64::from(dv) * f64::from(xv);
                        }
                        let k = f64::from(self.gamma[ch]) * f64::from(cache.inv_std[[s, ch]]);
                        let d = d.to_vec();
                        let xh = xh.to_vec();
                        for ((o, dv), xv) in plane_mut(&mut dx, s, ch).iter_mut().zip(d).zip(xh) {
                            *o = (k * (f64::from(dv) - sum_dy / m - f64::from(xv) * sum_dy_xhat / m))
                                as f32;
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        visit_vec(format!("{prefix}norm.gamma"), &mut self.gamma, &mut self.ggamma, f);
        visit_vec(format!("{prefix}norm.beta"), &mut self.beta, &mut self.gbeta, f);
        if self.kind == NormKind::Batch {
            for (name, buf) in [
                ("norm.running_mean", &mut self.running_mean),
                ("norm.running_var", &mut self.running_var),
            ] {
                let shape = vec![buf.len()];
                f(ParamVisit {
                    name: format!("{prefix}{name}"),
                    shape,
                    value: buf.as_slice_mut().expect("contiguous"),
                    grad: None,
                });
            }
        }
    }
}

fn dims(x: &Array4<f32>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}

fn plane<'a>(x: &'a Array4<f32>, n: usize, c: usize) -> &'a [f32] {
    x.index_axis(Axis(0), n)
        .index_axis_move(Axis(0), c)
        .to_slice()
        .expect("contiguous plane")
}

fn plane_mut<'a>(x: &'a mut Array4<f32>, n: usize, c: usize) -> &'a mut [f32] {
    x.index_axis_mut(Axis(0), n)
        .index_axis_move(Axis(0), c)
        .into_slice()
        .expect("contiguous plane")
}
