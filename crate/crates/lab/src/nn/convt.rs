//! Transposed 2-D convolution (fractionally-strided), the decoder upsampling
//! primitive. Forward runs the GEMM at the *input* resolution and scatters
//! with col2im, so no high-resolution im2col buffer is ever materialized.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::conv::{col2im_into, conv_out_dim, im2col_block, par_column_gemm};
use super::{visit_vec, ParamVisit};
use crate::{Error, Result};

pub struct ConvTranspose2d {
    /// `[c_in, c_out, k, k]`
    pub w: Array4<f32>,
    pub b: Option<Array1<f32>>,
    pub stride: usize,
    pub pad: usize,
    pub gw: Array4<f32>,
    pub gb: Option<Array1<f32>>,
}

pub struct ConvTCache {
    /// `[ci, n*ihw]` input in matrix layout.
    x_mat: Array2<f32>,
    in_hw: (usize, usize),
}

pub fn convt_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + k - 2 * pad
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0f32, 0.02).expect("valid std");
        let w = Array4::from_shape_simple_fn((c_in, c_out, k, k), || normal.sample(rng));
        Self {
            gw: Array4::zeros(w.raw_dim()),
            w,
            b: bias.then(|| Array1::zeros(c_out)),
            gb: bias.then(|| Array1::zeros(c_out)),
            stride,
            pad,
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn k(&self) -> usize {
        self.w.shape()[2]
    }

    /// `[n, ci, ih, iw]` -> `[ci, n*ihw]`.
    fn to_mat(x: &Array4<f32>) -> Array2<f32> {
        let (n, ci) = (x.shape()[0], x.shape()[1]);
        let ihw = x.shape()[2] * x.shape()[3];
        let mut mat = Array2::zeros((ci, n * ihw));
        let src = x.as_slice().expect("contiguous");
        let dst = mat.as_slice_mut().expect("contiguous");
        for s in 0..n {
            for c in 0..ci {
                let from = &src[(s * ci + c) * ihw..(s * ci + c + 1) * ihw];
                let to = &mut dst[c * n * ihw + s * ihw..c * n * ihw + (s + 1) * ihw];
                to.copy_from_slice(from);
            }
        }
        mat
    }

    pub fn forward(&self, x: &Array4<f32>) -> Result<(Array4<f32>, ConvTCache)> {
        if x.shape()[1] != self.c_in() {
            return Err(Error::ShapeMismatch {
                what: "transposed conv input channels",
                left: vec![x.shape()[1]],
                right: vec![self.c_in()],
            });
        }
        let (n, ih, iw) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        if (ih - 1) * self.stride + self.k() < 2 * self.pad {
            return Err(Error::InvalidSpec("transposed conv collapses below zero size".into()));
        }
        let (oh, ow) = (
            convt_out_dim(ih, self.k(), self.stride, self.pad),
            convt_out_dim(iw, self.k(), self.stride, self.pad),
        );
        let rows = self.c_out() * self.k() * self.k();
        let x_mat = Self::to_mat(x);
        // tmp = W^T . x : [co*k*k, n*ihw], then scatter-add to the output.
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((self.c_in(), rows))
            .expect("contiguous weights");
        let mut tmp = Array2::zeros((rows, n * ihw_of(ih, iw)));
        par_column_gemm(&w_mat.t(), &x_mat.view(), &mut tmp, ihw_of(ih, iw));
        let mut out = Array4::zeros((n, self.c_out(), oh, ow));
        out.outer_iter_mut()
            .into_par_iter()
            .zip(tmp.axis_chunks_iter(Axis(1), ihw_of(ih, iw)).into_par_iter())
            .for_each(|(mut o, block)| {
                // col2im with the *conv* geometry (k, s, p) mapping the
                // oh x ow plane back from the ih x iw grid.
                col2im_into(&block, self.k(), self.stride, self.pad, ih, iw, &mut o);
            });
        if let Some(b) = &self.b {
            for s in 0..n {
                for c in 0..self.c_out() {
                    let bc = b[c];
                    out.index_axis_mut(Axis(0), s)
                        .index_axis_move(Axis(0), c)
                        .mapv_inplace(|v| v + bc);
                }
            }
        }
        Ok((out, ConvTCache { x_mat, in_hw: (ih, iw) }))
    }

    pub fn backward(
        &mut self,
        cache: &ConvTCache,
        dout: &Array4<f32>,
        compute_dx: bool,
    ) -> Result<Option<Array4<f32>>> {
        let (ih, iw) = cache.in_hw;
        let n = dout.shape()[0];
        let rows = self.c_out() * self.k() * self.k();
        let ihw = ihw_of(ih, iw);
        // im2col of the output gradient with the conv geometry: [rows, n*ihw].
        let mut dcol = Array2::zeros((rows, n * ihw));
        dcol.axis_chunks_iter_mut(Axis(1), ihw)
            .into_par_iter()
            .zip(dout.outer_iter().into_par_iter())
            .for_each(|(mut block, g)| {
                im2col_block(&g, self.k(), self.stride, self.pad, ih, iw, &mut block);
            });
        // dW^T accumulates as dcol . x^T -> [rows, ci].
        {
            let mut dw = Array2::zeros((rows, self.c_in()));
            general_mat_mul(1.0, &dcol, &cache.x_mat.t(), 0.0, &mut dw);
            let mut gw_mat = self
                .gw
                .view_mut()
                .into_shape_with_order((self.c_in(), rows))
                .expect("contiguous grads");
            gw_mat += &dw.t();
        }
        if let Some(gb) = &mut self.gb {
            let sums = dout.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            *gb += &sums;
        }
        if !compute_dx {
            return Ok(None);
        }
        // dx = W . dcol : [ci, n*ihw] back to [n, ci, ih, iw].
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((self.c_in(), rows))
            .expect("contiguous weights");
        let mut dx_mat = Array2::zeros((self.c_in(), n * ihw));
        par_column_gemm(&w_mat, &dcol.view(), &mut dx_mat, ihw);
        let mut dx = Array4::zeros((n, self.c_in(), ih, iw));
        {
            let src = dx_mat.as_slice().expect("contiguous");
            let dst = dx.as_slice_mut().expect("contiguous");
            let ci = self.c_in();
            for s in 0..n {
                for c in 0..ci {
                    let from = &src[c * n * ihw + s * ihw..c * n * ihw + (s + 1) * ihw];
                    let to = &mut dst[(s * ci + c) * ihw..(s * ci + c + 1) * ihw];
                    to.copy_from_slice(from);
                }
            }
        }
        Ok(Some(dx))
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        let shape = self.w.shape().to_vec();
        f(ParamVisit {
            name: format!("{prefix}convt.w"),
            shape,
            value: self.w.as_slice_mut().expect("contiguous"),
            grad: Some(self.gw.as_slice_mut().expect("contiguous")),
        });
        if let (Some(b), Some(gb)) = (&mut self.b, &mut self.gb) {
            visit_vec(format!("{prefix}convt.b"), b, gb, f);
        }
    }
}

fn ihw_of(ih: usize, iw: usize) -> usize {
    ih * iw
}
