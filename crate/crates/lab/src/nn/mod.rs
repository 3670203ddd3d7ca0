//! Minimal deterministic CPU NN engine (NCHW, f32).
//!
//! Layers implement explicit forward/backward passes; there is no autodiff.
//! Forward returns a per-layer cache that backward consumes. Parallelism is
//! only across the batch axis (disjoint outputs), and every reduction runs
//! in a fixed order, so results are bitwise reproducible.

use ndarray::{Array1, Array4};
use rand_chacha::ChaCha8Rng;

pub mod act;
pub mod adam;
pub mod conv;
pub mod convt;
pub mod dropout;
pub mod linear;
pub mod norm;
pub mod upsample;

pub use act::Activation;
pub use adam::Adam;
pub use conv::Conv2d;
pub use convt::ConvTranspose2d;
pub use dropout::Dropout;
pub use linear::Linear;
pub use norm::{Norm, NormKind};

use crate::{Error, Result};

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active, running stats updated.
    Train,
    /// Batch statistics and dropout as in training, but running statistics
    /// frozen. Used by the probe to reproduce training-time behaviour on a
    /// frozen snapshot.
    TrainFrozen,
    /// Running statistics, dropout off.
    Eval,
}

impl Mode {
    pub fn stochastic(self) -> bool {
        !matches!(self, Mode::Eval)
    }

    pub fn update_running(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// Per-call forward context: the mode plus the RNG used by stochastic
/// layers (required when the mode is stochastic and the net has any).
pub struct FwdCtx<'r> {
    pub mode: Mode,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> FwdCtx<'r> {
    pub fn eval() -> FwdCtx<'static> {
        FwdCtx { mode: Mode::Eval, rng: None }
    }

    pub fn train(rng: &'r mut ChaCha8Rng) -> FwdCtx<'r> {
        FwdCtx { mode: Mode::Train, rng: Some(rng) }
    }

    pub fn with_mode(mode: Mode, rng: &'r mut ChaCha8Rng) -> FwdCtx<'r> {
        FwdCtx { mode, rng: Some(rng) }
    }
}

/// A visited parameter or buffer; `grad` is `None` for non-trainable
/// buffers (e.g. running statistics), which checkpoints still persist.
pub struct ParamVisit<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [f32],
    pub grad: Option<&'a mut [f32]>,
}

/// Anything with named parameters: layers, stacks, whole networks.
pub trait Module {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>));

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |p| {
            if let Some(g) = p.grad {
                g.fill(0.0);
            }
        });
    }

    /// Mean absolute value over all trainable-parameter gradients.
    fn mean_abs_grad(&mut self) -> f64 {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        self.visit_params("", &mut |p| {
            if let Some(g) = p.grad {
                sum += g.iter().map(|v| f64::from(v.abs())).sum::<f64>();
                count += g.len();
            }
        });
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// One sequential layer.
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    Norm(Norm),
    Act(Activation),
    Dropout(Dropout),
    Upsample2x,
}

pub enum LayerCache {
    Conv(conv::ConvCache),
    ConvT(convt::ConvTCache),
    Norm(norm::NormCache),
    Act(Array4<f32>),
    Dropout(Option<Array4<f32>>),
    Upsample,
}

/// A plain sequential stack of layers.
pub struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Array4<f32>, ctx: &mut FwdCtx<'_>) -> Result<(Array4<f32>, Vec<LayerCache>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (out, cache) = match layer {
                Layer::Conv(c) => {
                    let (out, cache) = c.forward(&h)?;
                    (out, LayerCache::Conv(cache))
                }
                Layer::ConvT(c) => {
                    let (out, cache) = c.forward(&h)?;
                    (out, LayerCache::ConvT(cache))
                }
                Layer::Norm(n) => {
                    let (out, cache) = n.forward(&h, ctx.mode);
                    (out, LayerCache::Norm(cache))
                }
                Layer::Act(a) => {
                    let out = a.forward(&h);
                    (out.clone(), LayerCache::Act(out))
                }
                Layer::Dropout(d) => {
                    let (out, mask) = d.forward(&h, ctx)?;
                    (out, LayerCache::Dropout(mask))
                }
                Layer::Upsample2x => (upsample::upsample2x(&h), LayerCache::Upsample),
            };
            h = out;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    /// Backward through the stack. `compute_dx` controls whether the
    /// gradient w.r.t. the stack input is produced (the first layer can
    /// skip it); parameter gradients always accumulate.
    pub fn backward(
        &mut self,
        caches: &[LayerCache],
        dy: Array4<f32>,
        compute_dx: bool,
    ) -> Result<Option<Array4<f32>>> {
        debug_assert_eq!(caches.len(), self.layers.len());
        let mut g = dy;
        for (i, (layer, cache)) in self.layers.iter_mut().zip(caches).enumerate().rev() {
            let need_dx = compute_dx || i > 0;
            g = match (layer, cache) {
                (Layer::Conv(c), LayerCache::Conv(cache)) => {
                    match c.backward(cache, &g, need_dx)? {
                        Some(dx) => dx,
                        None => return Ok(None),
                    }
                }
                (Layer::ConvT(c), LayerCache::ConvT(cache)) => {
                    match c.backward(cache, &g, need_dx)? {
                        Some(dx) => dx,
                        None => return Ok(None),
                    }
                }
                (Layer::Norm(n), LayerCache::Norm(cache)) => n.backward(cache, &g),
                (Layer::Act(a), LayerCache::Act(y)) => a.backward(y, &g),
                (Layer::Dropout(d), LayerCache::Dropout(mask)) => d.backward(mask.as_ref(), &g),
                (Layer::Upsample2x, LayerCache::Upsample) => upsample::upsample2x_backward(&g),
                _ => return Err(Error::InvalidSpec("cache/layer mismatch".into())),
            };
        }
        Ok(Some(g))
    }
}

impl Module for Stack {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("{prefix}{i}.");
            match layer {
                Layer::Conv(c) => c.visit_params(&p, f),
                Layer::ConvT(c) => c.visit_params(&p, f),
                Layer::Norm(n) => n.visit_params(&p, f),
                _ => {}
            }
        }
    }
}


/// Visit helper for an `Array1` parameter with its gradient.
pub(crate) fn visit_vec<'a>(
    name: String,
    value: &'a mut Array1<f32>,
    grad: &'a mut Array1<f32>,
    f: &mut dyn FnMut(ParamVisit<'_>),
) {
    let shape = vec![value.len()];
    f(ParamVisit {
        name,
        shape,
        value: value.as_slice_mut().expect("contiguous"),
        grad: Some(grad.as_slice_mut().expect("contiguous")),
    });
}
