//! Elementwise activations plus channel-axis softmax.

use ndarray::{Array4, Axis};

/// Activation applied after a conv/norm block. Backward recovers what it
/// needs from the cached *output*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f32),
    Relu,
    Tanh,
    Sigmoid,
    /// Softmax over the channel axis, per pixel.
    Softmax,
    Identity,
}

impl Activation {
    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        match *self {
            Activation::LeakyRelu(slope) => x.mapv(|v| if v > 0.0 { v } else { slope * v }),
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::Tanh => x.mapv(f32::tanh),
            Activation::Sigmoid => x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Identity => x.clone(),
            Activation::Softmax => {
                let mut y = x.clone();
                let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                for s in 0..n {
                    for iy in 0..h {
                        for ix in 0..w {
                            let mut maxv = f32::NEG_INFINITY;
                            for ch in 0..c {
                                maxv = maxv.max(x[[s, ch, iy, ix]]);
                            }
                            let mut sum = 0.0f32;
                            for ch in 0..c {
                                let e = (x[[s, ch, iy, ix]] - maxv).exp();
                                y[[s, ch, iy, ix]] = e;
                                sum += e;
                            }
                            for ch in 0..c {
                                y[[s, ch, iy, ix]] /= sum;
                            }
                        }
                    }
                }
                y
            }
        }
    }

    pub fn backward(&self, y: &Array4<f32>, dy: &Array4<f32>) -> Array4<f32> {
        match *self {
            Activation::LeakyRelu(slope) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &yv| {
                    if yv <= 0.0 {
                        *d *= slope;
                    }
                });
                dx
            }
            Activation::Relu => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &yv| {
                    if yv <= 0.0 {
                        *d = 0.0;
                    }
                });
                dx
            }
            Activation::Tanh => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &yv| *d *= 1.0 - yv * yv);
                dx
            }
            Activation::Sigmoid => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |d, &yv| *d *= yv * (1.0 - yv));
                dx
            }
            Activation::Identity => dy.clone(),
            Activation::Softmax => {
                let mut dx = dy.clone();
                let c = y.shape()[1];
                for s in 0..y.shape()[0] {
                    for iy in 0..y.shape()[2] {
                        for ix in 0..y.shape()[3] {
                            let mut dot = 0.0f32;
                            for ch in 0..c {
                                dot += dy[[s, ch, iy, ix]] * y[[s, ch, iy, ix]];
                            }
                            for ch in 0..c {
                                dx[[s, ch, iy, ix]] =
                                    y[[s, ch, iy, ix]] * (dy[[s, ch, iy, ix]] - dot);
                            }
                        }
                    }
                }
                dx
            }
        }
    }
}

/// Per-pixel channel argmax (used to read label maps out of softmax heads).
pub fn channel_argmax(x: &Array4<f32>) -> ndarray::Array3<u8> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = ndarray::Array3::zeros((n, h, w));
    for s in 0..n {
        for iy in 0..h {
            for ix in 0..w {
                let mut best = 0usize;
                let mut bestv = x[[s, 0, iy, ix]];
                for ch in 1..c {
                    if x[[s, ch, iy, ix]] > bestv {
                        bestv = x[[s, ch, iy, ix]];
                        best = ch;
                    }
                }
                out[[s, iy, ix]] = best as u8;
            }
        }
    }
    let _ = Axis(0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{fd_check_input, randn4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randn4(&mut rng, (2, 4, 3, 3));
        let y = Activation::Softmax.forward(&x);
        for s in 0..2 {
            for iy in 0..3 {
                for ix in 0..3 {
                    let sum: f32 = (0..4).map(|c| y[[s, c, iy, ix]]).sum();
                    assert!((sum - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for act in [
            Activation::LeakyRelu(0.2),
            Activation::Relu,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Softmax,
            Activation::Identity,
        ] {
            // Keep inputs away from the relu-family kink at 0 so central
            // differences stay on one side of it.
            let x = randn4(&mut rng, (2, 3, 4, 4))
                .mapv(|v| if v.abs() < 0.06 { 0.06f32.copysign(v + 1e-3) } else { v });
            fd_check_input(
                &x,
                &mut rng,
                |x| act.forward(x),
                |dy, x| {
                    let y = act.forward(x);
                    act.backward(&y, dy)
                },
            );
        }
    }
}
