//! 2-D convolution via im2col + GEMM, parallel over the batch axis.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, ArrayViewMut2, ArrayViewMut3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{visit_vec, ParamVisit};
use crate::{Error, Result};

pub struct Conv2d {
    /// `[c_out, c_in, k, k]`
    pub w: Array4<f32>,
    pub b: Option<Array1<f32>>,
    pub stride: usize,
    pub pad: usize,
    pub gw: Array4<f32>,
    pub gb: Option<Array1<f32>>,
}

pub struct ConvCache {
    col: Array2<f32>,
    in_hw: (usize, usize),
}

pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        // Zero-mean Gaussian init, std 0.02.
        let normal = Normal::new(0.0f32, 0.02).expect("valid std");
        let w = Array4::from_shape_simple_fn((c_out, c_in, k, k), || normal.sample(rng));
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
        self.w.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.w.shape()[2]
    }

    fn check_input(&self, x: &Array4<f32>) -> Result<(usize, usize)> {
        let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        if c != self.c_in() {
            return Err(Error::ShapeMismatch {
                what: "conv input channels",
                left: vec![c],
                right: vec![self.c_in()],
            });
        }
        if h + 2 * self.pad < self.k() || w + 2 * self.pad < self.k() {
            return Err(Error::InvalidSpec(format!(
                "input {h}x{w} smaller than kernel {} with pad {}",
                self.k(),
                self.pad
            )));
        }
        Ok((conv_out_dim(h, self.k(), self.stride, self.pad), conv_out_dim(w, self.k(), self.stride, self.pad)))
    }

    pub fn forward(&self, x: &Array4<f32>) -> Result<(Array4<f32>, ConvCache)> {
        let (oh, ow) = self.check_input(x)?;
        let n = x.shape()[0];
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let rows = self.c_in() * self.k() * self.k();
        let ohw = oh * ow;
        // One im2col matrix for the whole batch; sample i owns the column
        // block [i*ohw, (i+1)*ohw).
        let mut col = Array2::zeros((rows, n * ohw));
        col.axis_chunks_iter_mut(Axis(1), ohw)
            .into_par_iter()
            .zip(x.outer_iter().into_par_iter())
            .for_each(|(mut block, xi)| {
                im2col_block(&xi, self.k(), self.stride, self.pad, oh, ow, &mut block);
            });
        let w2 = self
            .w
            .view()
            .into_shape_with_order((self.c_out(), rows))
            .expect("contiguous weights");
        // Batched GEMM, split over column halves (each output element is
        // still one sequential dot product, so the split is exact).
        let mut out_mat = Array2::zeros((self.c_out(), n * ohw));
        par_column_gemm(&w2, &col.view(), &mut out_mat, ohw);
        let mut out = Array4::zeros((n, self.c_out(), oh, ow));
        scatter_batch(&out_mat, &mut out, self.b.as_ref());
        Ok((out, ConvCache { col, in_hw: (h, w) }))
    }

    pub fn backward(
        &mut self,
        cache: &ConvCache,
        dout: &Array4<f32>,
        compute_dx: bool,
    ) -> Result<Option<Array4<f32>>> {
        let n = dout.shape()[0];
        let (oh, ow) = (dout.shape()[2], dout.shape()[3]);
        let rows = self.c_in() * self.k() * self.k();
        let co = self.c_out();
        let ohw = oh * ow;

        // [co, n*ohw] layout of the output gradient.
        let mut dout_mat = Array2::zeros((co, n * ohw));
        gather_batch(dout, &mut dout_mat);

        // dW = dOut . col^T in one GEMM; the contraction over n*ohw runs
        // sequentially inside the kernel, keeping accumulation order fixed.
        {
            let mut gw2 = self
                .gw
                .view_mut()
                .into_shape_with_order((co, rows))
                .expect("contiguous grads");
            general_mat_mul(1.0, &dout_mat, &cache.col.t(), 1.0, &mut gw2);
        }
        if let Some(gb) = &mut self.gb {
            let sums = dout.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            *gb += &sums;
        }

        if !compute_dx {
            return Ok(None);
        }
        let (h, w) = cache.in_hw;
        let w2 = self
            .w
            .view()
            .into_shape_with_order((co, rows))
            .expect("contiguous weights");
        let mut dcol = Array2::zeros((rows, n * ohw));
        par_column_gemm(&w2.t(), &dout_mat.view(), &mut dcol, ohw);
        let mut dx = Array4::zeros((n, self.c_in(), h, w));
        dx.outer_iter_mut()
            .into_par_iter()
            .zip(dcol.axis_chunks_iter(Axis(1), ohw).into_par_iter())
            .for_each(|(mut dxi, block)| {
                col2im_into(&block, self.k(), self.stride, self.pad, oh, ow, &mut dxi);
            });
        Ok(Some(dx))
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        let shape = self.w.shape().to_vec();
        f(ParamVisit {
            name: format!("{prefix}conv.w"),
            shape,
            value: self.w.as_slice_mut().expect("contiguous"),
            grad: Some(self.gw.as_slice_mut().expect("contiguous")),
        });
        if let (Some(b), Some(gb)) = (&mut self.b, &mut self.gb) {
            visit_vec(format!("{prefix}conv.b"), b, gb, f);
        }
    }
}

/// Split a big matrix product over column halves (shared with the
/// transposed conv) (row blocks of `b` /
/// `c` stay whole, so each output cell is one sequential dot product and
/// the parallel split is bit-exact).
pub(crate) fn par_column_gemm(
    a: &ArrayView2<'_, f32>,
    b: &ArrayView2<'_, f32>,
    c: &mut Array2<f32>,
    align: usize,
) {
    let ncols = b.shape()[1];
    let blocks = ncols / align.max(1);
    if blocks < 2 || ncols * a.shape()[0] < 16_384 {
        general_mat_mul(1.0, a, b, 0.0, &mut c.view_mut());
        return;
    }
    let mid = (blocks / 2) * align;
    let (b_left, b_right) = b.split_at(Axis(1), mid);
    let (mut c_left, mut c_right) = c.view_mut().split_at(Axis(1), mid);
    let a_left = a.view();
    let a_right = a.view();
    rayon::join(
        move || general_mat_mul(1.0, &a_left, &b_left, 0.0, &mut c_left),
        move || general_mat_mul(1.0, &a_right, &b_right, 0.0, &mut c_right),
    );
}

/// `[co, n*ohw]` matrix into `[n, co, oh, ow]`, adding the bias.
fn scatter_batch(mat: &Array2<f32>, out: &mut Array4<f32>, bias: Option<&Array1<f32>>) {
    let (n, co) = (out.shape()[0], out.shape()[1]);
    let ohw = out.shape()[2] * out.shape()[3];
    let src = mat.as_slice().expect("contiguous");
    let dst = out.as_slice_mut().expect("contiguous");
    for s in 0..n {
        for c in 0..co {
            let b = bias.map_or(0.0, |b| b[c]);
            let from = &src[c * n * ohw + s * ohw..c * n * ohw + (s + 1) * ohw];
            let to = &mut dst[(s * co + c) * ohw..(s * co + c + 1) * ohw];
            if b == 0.0 {
                to.copy_from_slice(from);
            } else {
                for (t, &f) in to.iter_mut().zip(from) {
                    *t = f + b;
                }
            }
        }
    }
}

/// `[n, co, oh, ow]` into `[co, n*ohw]`.
fn gather_batch(t: &Array4<f32>, mat: &mut Array2<f32>) {
    let (n, co) = (t.shape()[0], t.shape()[1]);
    let ohw = t.shape()[2] * t.shape()[3];
    let src = t.as_slice().expect("contiguous");
    let dst = mat.as_slice_mut().expect("contiguous");
    for s in 0..n {
        for c in 0..co {
            let from = &src[(s * co + c) * ohw..(s * co + c + 1) * ohw];
            let to = &mut dst[c * n * ohw + s * ohw..c * n * ohw + (s + 1) * ohw];
            to.copy_from_slice(from);
        }
    }
}

pub(crate) fn im2col_block(
    x: &ArrayView3<'_, f32>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    block: &mut ArrayViewMut2<'_, f32>,
) {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    for c in 0..ci {
        let plane = x.index_axis(Axis(0), c);
        let plane = plane.as_slice().expect("contiguous input plane");
        for i in 0..k {
            for j in 0..k {
                let row = (c * k + i) * k + j;
                let mut dst_row = block.row_mut(row);
                let dst = dst_row.as_slice_mut().expect("row-contiguous col block");
                for oy in 0..oh {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue; // col starts zeroed
                    }
                    let src_row = &plane[y as usize * w..(y as usize + 1) * w];
                    for ox in 0..ow {
                        let xx = (ox * stride + j) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[oy * ow + ox] = src_row[xx as usize];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_into(
    block: &ArrayView2<'_, f32>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut ArrayViewMut3<'_, f32>,
) {
    let (ci, h, w) = (dx.shape()[0], dx.shape()[1], dx.shape()[2]);
    for c in 0..ci {
        let mut plane = dx.index_axis_mut(Axis(0), c);
        let plane = plane.as_slice_mut().expect("contiguous dx plane");
        for i in 0..k {
            for j in 0..k {
                let row = (c * k + i) * k + j;
                let src_row = block.row(row);
                let s = src_row.to_slice().expect("row-contiguous col block");
                for oy in 0..oh {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for ox in 0..ow {
                        let xx = (ox * stride + j) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst_row[xx as usize] += s[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}
