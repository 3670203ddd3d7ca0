//! Nearest-neighbour 2x upsampling.

use ndarray::Array4;

pub fn upsample2x(x: &Array4<f32>) -> Array4<f32> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut y = Array4::zeros((n, c, 2 * h, 2 * w));
    for s in 0..n {
        for ch in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[[s, ch, iy, ix]];
                    y[[s, ch, 2 * iy, 2 * ix]] = v;
                    y[[s, ch, 2 * iy, 2 * ix + 1]] = v;
                    y[[s, ch, 2 * iy + 1, 2 * ix]] = v;
                    y[[s, ch, 2 * iy + 1, 2 * ix + 1]] = v;
                }
            }
        }
    }
    y
}

/// Gradient: each input cell receives the sum over its 2x2 output block.
pub fn upsample2x_backward(dy: &Array4<f32>) -> Array4<f32> {
    let (n, c, h2, w2) = (dy.shape()[0], dy.shape()[1], dy.shape()[2], dy.shape()[3]);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::zeros((n, c, h, w));
    for s in 0..n {
        for ch in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    dx[[s, ch, iy, ix]] = dy[[s, ch, 2 * iy, 2 * ix]]
                        + dy[[s, ch, 2 * iy, 2 * ix + 1]]
                        + dy[[s, ch, 2 * iy + 1, 2 * ix]]
                        + dy[[s, ch, 2 * iy + 1, 2 * ix + 1]];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{fd_check_input, randn4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn doubles_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randn4(&mut rng, (1, 2, 3, 5));
        let y = upsample2x(&x);
        assert_eq!(y.shape(), &[1, 2, 6, 10]);
        assert_eq!(y[[0, 1, 5, 9]], x[[0, 1, 2, 4]]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn4(&mut rng, (2, 2, 3, 3));
        fd_check_input(&x, &mut rng, |x| upsample2x(x), |dy, _x| upsample2x_backward(dy));
    }
}
