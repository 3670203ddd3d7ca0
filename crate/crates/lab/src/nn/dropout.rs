//! Inverted dropout: eval mode is the identity.

use ndarray::Array4;
use rand::Rng;

use super::FwdCtx;
use crate::{Error, Result};

pub struct Dropout {
    pub p: f32,
}

impl Dropout {
    pub fn new(p: f32) -> Self {
        debug_assert!((0.0..1.0).contains(&p));
        Self { p }
    }

    pub fn forward(&self, x: &Array4<f32>, ctx: &mut FwdCtx<'_>) -> Result<(Array4<f32>, Option<Array4<f32>>)> {
        if !ctx.mode.stochastic() || self.p == 0.0 {
            return Ok((x.clone(), None));
        }
        let rng = ctx
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::InvalidSpec("dropout in train mode needs an RNG".into()))?;
        let keep_scale = 1.0 / (1.0 - self.p);
        let data: Vec<f32> = (0..x.len())
            .map(|_| if rng.gen::<f32>() < self.p { 0.0 } else { keep_scale })
            .collect();
        let mask = Array4::from_shape_vec(x.raw_dim(), data).expect("mask shape");
        Ok((x * &mask, Some(mask)))
    }

    pub fn backward(&self, mask: Option<&Array4<f32>>, dy: &Array4<f32>) -> Array4<f32> {
        match mask {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::randn4;
    use crate::nn::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_is_identity_and_train_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randn4(&mut rng, (2, 3, 8, 8));
        let d = Dropout::new(0.5);
        let (y, mask) = d.forward(&x, &mut FwdCtx::eval()).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());

        let mut train_rng = ChaCha8Rng::seed_from_u64(1);
        let (y, mask) = d.forward(&x, &mut FwdCtx::train(&mut train_rng)).unwrap();
        let mask = mask.unwrap();
        // Kept elements are scaled by 2, dropped are zero.
        for ((&yv, &xv), &mv) in y.iter().zip(x.iter()).zip(mask.iter()) {
            if mv == 0.0 {
                assert_eq!(yv, 0.0);
            } else {
                assert!((yv - 2.0 * xv).abs() < 1e-6);
            }
        }
        // Same seed reproduces the same mask.
        let mut train_rng2 = ChaCha8Rng::seed_from_u64(1);
        let (y2, _) = d.forward(&x, &mut FwdCtx::train(&mut train_rng2)).unwrap();
        assert_eq!(y, y2);
        // Backward applies the same mask.
        let dy = randn4(&mut rng, (2, 3, 8, 8));
        let dx = d.backward(Some(&mask), &dy);
        assert_eq!(dx, &dy * &mask);
    }
}
