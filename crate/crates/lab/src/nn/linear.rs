//! Fully connected layer (classifier head).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{visit_vec, ParamVisit};

pub struct Linear {
    /// `[out, in]`
    pub w: Array2<f32>,
    pub b: Array1<f32>,
    pub gw: Array2<f32>,
    pub gb: Array1<f32>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f32, 0.02).expect("valid std");
        let w = Array2::from_shape_simple_fn((d_out, d_in), || normal.sample(rng));
        Self { gw: Array2::zeros(w.raw_dim()), w, b: Array1::zeros(d_out), gb: Array1::zeros(d_out) }
    }

    pub fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        let n = x.shape()[0];
        let mut y = Array2::zeros((n, self.w.shape()[0]));
        general_mat_mul(1.0, x, &self.w.t(), 0.0, &mut y);
        for mut row in y.rows_mut() {
            row += &self.b;
        }
        (y, x.clone())
    }

    pub fn backward(&mut self, cache_x: &Array2<f32>, dy: &Array2<f32>) -> Array2<f32> {
        general_mat_mul(1.0, &dy.t(), cache_x, 1.0, &mut self.gw.view_mut());
        self.gb += &dy.sum_axis(Axis(0));
        let mut dx = Array2::zeros(cache_x.raw_dim());
        general_mat_mul(1.0, dy, &self.w, 0.0, &mut dx);
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        let shape = self.w.shape().to_vec();
        f(ParamVisit {
            name: format!("{prefix}fc.w"),
            shape,
            value: self.w.as_slice_mut().expect("contiguous"),
            grad: Some(self.gw.as_slice_mut().expect("contiguous")),
        });
        visit_vec(format!("{prefix}fc.b"), &mut self.b, &mut self.gb, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_backward_small_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new(3, 2, &mut rng);
        lin.w.assign(&ndarray::array![[1.0, 0.0, -1.0], [0.5, 0.5, 0.5]]);
        lin.b.assign(&ndarray::array![0.1, -0.1]);
        let x = ndarray::array![[1.0, 2.0, 3.0]];
        let (y, cache) = lin.forward(&x);
        assert!((y[[0, 0]] - (1.0 - 3.0 + 0.1)).abs() < 1e-6);
        assert!((y[[0, 1]] - (3.0 - 0.1)).abs() < 1e-6);
        let dy = ndarray::array![[1.0, -1.0]];
        let dx = lin.backward(&cache, &dy);
        // dx = dy . w = [1*row0 - 1*row1]
        assert!((dx[[0, 0]] - 0.5).abs() < 1e-6);
        assert!((dx[[0, 1]] - (-0.5)).abs() < 1e-6);
        assert!((dx[[0, 2]] - (-1.5)).abs() < 1e-6);
        assert!((lin.gw[[0, 2]] - 3.0).abs() < 1e-6);
        assert!((lin.gb[[1]] - (-1.0)).abs() < 1e-6);
    }
}
