//! Network contracts and builders: a patch discriminator over early-fused
//! `(condition, target)` pairs exposing raw last-layer scores, and a U-Net
//! encoder-decoder generator with skip connections.

use ndarray::{concatenate, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    conv::conv_out_dim, Activation, Conv2d, ConvTranspose2d, Dropout, FwdCtx, Layer, LayerCache,
    Module, Norm, NormKind, ParamVisit, Stack,
};
use crate::{Error, Result};

/// The translation task a generator is built for; determines condition and
/// target channel counts and the output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum Task {
    Label2Image { n_classes: usize },
    Image2Depth,
    Image2Label { n_classes: usize },
    SingleLabel2Image { n_classes: usize },
}

impl Task {
    pub fn cond_channels(&self) -> usize {
        match *self {
            Task::Label2Image { n_classes } | Task::SingleLabel2Image { n_classes } => n_classes,
            Task::Image2Depth | Task::Image2Label { .. } => 3,
        }
    }

    pub fn target_channels(&self) -> usize {
        match *self {
            Task::Label2Image { .. } | Task::SingleLabel2Image { .. } => 3,
            Task::Image2Depth => 1,
            Task::Image2Label { n_classes } => n_classes,
        }
    }

    pub fn output_activation(&self) -> Activation {
        match self {
            Task::Label2Image { .. } | Task::SingleLabel2Image { .. } => Activation::Tanh,
            Task::Image2Depth => Activation::Relu,
            Task::Image2Label { .. } => Activation::Softmax,
        }
    }

    /// Single-label generators get one extra noise channel.
    fn generator_in_channels(&self) -> usize {
        self.cond_channels() + usize::from(matches!(self, Task::SingleLabel2Image { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormSpec {
    None,
    Batch,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationSpec {
    LeakyRelu,
    Relu,
    Tanh,
    Softmax,
    Identity,
}

impl ActivationSpec {
    fn build(self) -> Activation {
        match self {
            ActivationSpec::LeakyRelu => Activation::LeakyRelu(0.2),
            ActivationSpec::Relu => Activation::Relu,
            ActivationSpec::Tanh => Activation::Tanh,
            ActivationSpec::Softmax => Activation::Softmax,
            ActivationSpec::Identity => Activation::Identity,
        }
    }
}

/// One convolution block of a spec-driven stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub channels_out: usize,
    pub normalization: NormSpec,
    pub activation: ActivationSpec,
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel < 1 || self.stride < 1 || self.channels_out < 1 {
            return Err(Error::InvalidSpec(format!("invalid conv layer spec {self:?}")));
        }
        Ok(())
    }
}

/// Receptive field of a conv stack in input pixels:
/// `r <- r + (k - 1) * prod(previous strides)`.
pub fn receptive_field(spec: &[ConvLayerSpec]) -> usize {
    let mut r = 1usize;
    let mut jump = 1usize;
    for layer in spec {
        r += (layer.kernel - 1) * jump;
        jump *= layer.stride;
    }
    r
}

/// The canonical patch-discriminator layout scaled by `ndf`: three stride-2
/// blocks, one stride-1 block, and a 1-channel raw-score head (all 4x4
/// kernels, pad 1). Receptive field 70x70; a 256x256 input yields a 30x30
/// score grid, a 64x64 input a 6x6 grid.
pub fn patch_discriminator_spec(ndf: usize) -> Vec<ConvLayerSpec> {
    let block = |channels_out, stride, normalization, activation| ConvLayerSpec {
        kernel: 4,
        stride,
        padding: 1,
        channels_out,
        normalization,
        activation,
    };
    vec![
        block(ndf, 2, NormSpec::None, ActivationSpec::LeakyRelu),
        block(2 * ndf, 2, NormSpec::Batch, ActivationSpec::LeakyRelu),
        block(4 * ndf, 2, NormSpec::Batch, ActivationSpec::LeakyRelu),
        block(8 * ndf, 1, NormSpec::Batch, ActivationSpec::LeakyRelu),
        block(1, 1, NormSpec::None, ActivationSpec::Identity),
    ]
}

/// How condition and target are fused at the discriminator input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// Concatenate condition and target on the channel axis before the stack.
    EarlyConcat,
}

/// Raw last-layer score grid `f(x, y)`, one channel, `[N, 1, gh, gw]`.
#[derive(Debug, Clone)]
pub struct FieldResponse {
    pub raw: Array4<f32>,
}

impl FieldResponse {
    /// Activated outputs `D = sigmoid(f)`, elementwise.
    pub fn probabilities(&self) -> Array4<f32> {
        self.raw.mapv(|v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn flat_f64(&self) -> Vec<f64> {
        self.raw.iter().map(|&v| f64::from(v)).collect()
    }
}

pub struct PatchDiscriminator {
    pub spec: Vec<ConvLayerSpec>,
    pub cond_channels: usize,
    pub target_channels: usize,
    pub fusion: Fusion,
    pub(crate) stack: Stack,
}

/// Build a patch discriminator for `spec` over early-fused inputs.
/// The spec must end in a single-channel raw-score layer.
pub fn build_discriminator(
    cond_channels: usize,
    target_channels: usize,
    spec: &[ConvLayerSpec],
    fusion: Fusion,
    rng: &mut ChaCha8Rng,
) -> Result<PatchDiscriminator> {
    if spec.is_empty() {
        return Err(Error::InvalidSpec("discriminator spec is empty".into()));
    }
    for layer in spec {
        layer.validate()?;
    }
    if spec.last().unwrap().channels_out != 1 {
        return Err(Error::InvalidSpec(
            "discriminator spec must end with a 1-channel raw-score layer".into(),
        ));
    }
    let mut layers = Vec::new();
    let mut c_in = cond_channels + target_channels;
    for layer in spec {
        let norm = match layer.normalization {
            NormSpec::None => None,
            NormSpec::Batch => Some(NormKind::Batch),
            NormSpec::Instance => Some(NormKind::Instance),
        };
        layers.push(Layer::Conv(Conv2d::new(
            c_in,
            layer.channels_out,
            layer.kernel,
            layer.stride,
            layer.padding,
            norm.is_none(),
            rng,
        )));
        if let Some(kind) = norm {
            layers.push(Layer::Norm(Norm::new(kind, layer.channels_out)));
        }
        if layer.activation != ActivationSpec::Identity {
            layers.push(Layer::Act(layer.activation.build()));
        }
        c_in = layer.channels_out;
    }
    Ok(PatchDiscriminator {
        spec: spec.to_vec(),
        cond_channels,
        target_channels,
        fusion,
        stack: Stack::new(layers),
    })
}

impl PatchDiscriminator {
    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.spec)
    }

    /// Score-grid dimensions for an input of `h x w` pixels.
    pub fn output_grid(&self, h: usize, w: usize) -> (usize, usize) {
        let mut gh = h;
        let mut gw = w;
        for layer in &self.spec {
            gh = conv_out_dim(gh, layer.kernel, layer.stride, layer.padding);
            gw = conv_out_dim(gw, layer.kernel, layer.stride, layer.padding);
        }
        (gh, gw)
    }

    /// Tile a `[N, C, 1, 1]` condition (single-label one-hot) to the target's
    /// spatial dims; spatial conditions pass through.
    fn spatialize(&self, cond: &Array4<f32>, h: usize, w: usize) -> Array4<f32> {
        if cond.shape()[2] == 1 && cond.shape()[3] == 1 && (h > 1 || w > 1) {
            let (n, c) = (cond.shape()[0], cond.shape()[1]);
            let mut out = Array4::zeros((n, c, h, w));
            for s in 0..n {
                for ch in 0..c {
                    out.index_axis_mut(Axis(0), s)
                        .index_axis_move(Axis(0), ch)
                        .fill(cond[[s, ch, 0, 0]]);
                }
            }
            out
        } else {
            cond.clone()
        }
    }

    pub fn forward(
        &mut self,
        cond: &Array4<f32>,
        target: &Array4<f32>,
        ctx: &mut FwdCtx<'_>,
    ) -> Result<(FieldResponse, Vec<LayerCache>)> {
        let (h, w) = (target.shape()[2], target.shape()[3]);
        let cond = self.spatialize(cond, h, w);
        if cond.shape()[0] != target.shape()[0]
            || cond.shape()[2] != h
            || cond.shape()[3] != w
            || cond.shape()[1] != self.cond_channels
            || target.shape()[1] != self.target_channels
        {
            return Err(Error::ShapeMismatch {
                what: "discriminator inputs",
                left: cond.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let Fusion::EarlyConcat = self.fusion;
        let x = concatenate(Axis(1), &[cond.view(), target.view()]).expect("concat");
        let (raw, caches) = self.stack.forward(&x, ctx)?;
        Ok((FieldResponse { raw }, caches))
    }

    /// Backpropagate a score-grid gradient. Returns the gradient w.r.t. the
    /// target input when requested (conditions are data, their gradient is
    /// discarded); parameter gradients always accumulate.
    pub fn backward(
        &mut self,
        caches: &[LayerCache],
        dscore: &Array4<f32>,
        need_target_grad: bool,
    ) -> Result<Option<Array4<f32>>> {
        let dx = self.stack.backward(caches, dscore.clone(), need_target_grad)?;
        Ok(match dx {
            Some(dx) if need_target_grad => Some(
                dx.slice_axis(
                    Axis(1),
                    ndarray::Slice::from(
                        self.cond_channels..self.cond_channels + self.target_channels,
                    ),
                )
                .to_owned(),
            ),
            _ => None,
        })
    }
}

impl Module for PatchDiscriminator {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        self.stack.visit_params(&format!("{prefix}d."), f);
    }
}

/// U-Net generator: encoder to 1x1 with stride-2 4x4 convs, decoder of
/// stride-2 transposed convs with skip concatenation, dropout on the three
/// innermost decoder blocks.
pub struct UnetGenerator {
    pub task: Task,
    pub size: usize,
    pub ngf: usize,
    pub(crate) enc: Vec<Stack>,
    pub(crate) dec: Vec<Stack>,
    pub(crate) head: Stack,
}

pub struct GenCaches {
    enc: Vec<Vec<LayerCache>>,
    dec: Vec<Vec<LayerCache>>,
    head: Vec<LayerCache>,
    skip_channels: Vec<usize>,
}

pub fn build_generator(
    task: Task,
    size: usize,
    ngf: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UnetGenerator> {
    if size < 32 || !size.is_power_of_two() {
        return Err(Error::InvalidSpec(format!(
            "unsupported generator size {size}: need a power of two >= 32"
        )));
    }
    if ngf == 0 {
        return Err(Error::InvalidSpec("ngf must be positive".into()));
    }
    let levels = size.trailing_zeros() as usize;
    let ch = |i: usize| ngf * (1usize << i).min(8);
    let mut enc = Vec::with_capacity(levels);
    let mut c_in = task.generator_in_channels();
    for i in 0..levels {
        let c_out = ch(i);
        let first = i == 0;
        let innermost = i == levels - 1;
        let mut layers =
            vec![Layer::Conv(Conv2d::new(c_in, c_out, 4, 2, 1, first || innermost, rng))];
        if !first && !innermost {
            layers.push(Layer::Norm(Norm::new(NormKind::Batch, c_out)));
        }
        layers.push(Layer::Act(Activation::LeakyRelu(0.2)));
        enc.push(Stack::new(layers));
        c_in = c_out;
    }
    let mut dec = Vec::with_capacity(levels - 1);
    for j in 0..levels - 1 {
        let c_out = ch(levels - 2 - j);
        let c_in = if j == 0 { ch(levels - 1) } else { 2 * ch(levels - 1 - j) };
        let mut layers = vec![
            Layer::ConvT(ConvTranspose2d::new(c_in, c_out, 4, 2, 1, false, rng)),
            Layer::Norm(Norm::new(NormKind::Batch, c_out)),
        ];
        if j < 3 {
            layers.push(Layer::Dropout(Dropout::new(0.5)));
        }
        layers.push(Layer::Act(Activation::Relu));
        dec.push(Stack::new(layers));
    }
    let head = Stack::new(vec![
        Layer::ConvT(ConvTranspose2d::new(2 * ch(0), task.target_channels(), 4, 2, 1, true, rng)),
        Layer::Act(task.output_activation()),
    ]);
    Ok(UnetGenerator { task, size, ngf, enc, dec, head })
}

impl UnetGenerator {
    /// Spatialize the condition for this generator: tile 1x1 single-label
    /// conditions and append the noise channel (zeros in eval mode).
    fn prepare_input(&self, cond: &Array4<f32>, ctx: &mut FwdCtx<'_>) -> Result<Array4<f32>> {
        if !matches!(self.task, Task::SingleLabel2Image { .. }) {
            return Ok(cond.clone());
        }
        let (n, c) = (cond.shape()[0], cond.shape()[1]);
        let (h, w) = (self.size, self.size);
        let mut x = Array4::zeros((n, c + 1, h, w));
        for s in 0..n {
            for ch in 0..c {
                x.index_axis_mut(Axis(0), s)
                    .index_axis_move(Axis(0), ch)
                    .fill(cond[[s, ch, 0, 0]]);
            }
        }
        if ctx.mode.stochastic() {
            let rng = ctx.rng.as_deref_mut().ok_or_else(|| {
                Error::InvalidSpec("single-label generator needs an RNG in train mode".into())
            })?;
            use rand::Rng;
            for s in 0..n {
                let mut plane = x.index_axis_mut(Axis(0), s);
                let mut plane = plane.index_axis_mut(Axis(0), c);
                for v in plane.iter_mut() {
                    *v = rng.gen_range(-1.0f32..1.0);
                }
            }
        }
        Ok(x)
    }

    pub fn forward(
        &mut self,
        cond: &Array4<f32>,
        ctx: &mut FwdCtx<'_>,
    ) -> Result<(Array4<f32>, GenCaches)> {
        let x = self.prepare_input(cond, ctx)?;
        if x.shape()[1] != self.task.generator_in_channels()
            || x.shape()[2] != self.size
            || x.shape()[3] != self.size
        {
            return Err(Error::ShapeMismatch {
                what: "generator input",
                left: x.shape().to_vec(),
                right: vec![
                    x.shape()[0],
                    self.task.generator_in_channels(),
                    self.size,
                    self.size,
                ],
            });
        }
        let mut enc_caches = Vec::with_capacity(self.enc.len());
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = x;
        for stack in &mut self.enc {
            let (out, cache) = stack.forward(&h, ctx)?;
            enc_caches.push(cache);
            skips.push(out.clone());
            h = out;
        }
        let levels = self.enc.len();
        let mut dec_caches = Vec::with_capacity(self.dec.len());
        let mut skip_channels = Vec::with_capacity(self.dec.len());
        for (j, stack) in self.dec.iter_mut().enumerate() {
            let input = if j == 0 {
                skips[levels - 1].clone()
            } else {
                let skip = &skips[levels - 1 - j];
                skip_channels.push(skip.shape()[1]);
                concatenate(Axis(1), &[h.view(), skip.view()]).expect("concat")
            };
            let (out, cache) = stack.forward(&input, ctx)?;
            dec_caches.push(cache);
            h = out;
        }
        let skip = &skips[0];
        skip_channels.push(skip.shape()[1]);
        let input = concatenate(Axis(1), &[h.view(), skip.view()]).expect("concat");
        let (y, head_cache) = self.head.forward(&input, ctx)?;
        Ok((y, GenCaches { enc: enc_caches, dec: dec_caches, head: head_cache, skip_channels }))
    }

    /// Backpropagate the output gradient; parameter gradients accumulate.
    pub fn backward(&mut self, caches: &GenCaches, dy: &Array4<f32>) -> Result<()> {
        let levels = self.enc.len();
        let mut skip_grads: Vec<Option<Array4<f32>>> = vec![None; levels];
        let split = |g: Array4<f32>, skip_c: usize| -> (Array4<f32>, Array4<f32>) {
            let c = g.shape()[1];
            let main = g.slice_axis(Axis(1), ndarray::Slice::from(0..c - skip_c)).to_owned();
            let skip = g.slice_axis(Axis(1), ndarray::Slice::from(c - skip_c..c)).to_owned();
            (main, skip)
        };
        let g = self.head.backward(&caches.head, dy.clone(), true)?.expect("head input grad");
        let (mut g, skip_g) = split(g, *caches.skip_channels.last().expect("skips"));
        skip_grads[0] = Some(skip_g);
        for j in (0..self.dec.len()).rev() {
            let gin = self.dec[j].backward(&caches.dec[j], g, true)?.expect("decoder input grad");
            if j == 0 {
                skip_grads[levels - 1] = Some(gin);
                g = Array4::zeros((0, 0, 0, 0));
            } else {
                let skip_c = caches.skip_channels[j - 1];
                let (main, skip_g) = split(gin, skip_c);
                skip_grads[levels - 1 - j] = Some(skip_g);
                g = main;
            }
        }
        let _ = g;
        // Encoder backward, adding each level's skip gradient on the way down.
        let mut g = skip_grads[levels - 1].take().expect("innermost grad");
        for i in (0..levels).rev() {
            if i < levels - 1 {
                if let Some(sg) = skip_grads[i].take() {
                    g += &sg;
                }
            }
            match self.enc[i].backward(&caches.enc[i], g, i > 0)? {
                Some(dx) => g = dx,
                None => break,
            }
        }
        Ok(())
    }
}

impl Module for UnetGenerator {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        for (i, stack) in self.enc.iter_mut().enumerate() {
            stack.visit_params(&format!("{prefix}g.enc{i}."), f);
        }
        for (j, stack) in self.dec.iter_mut().enumerate() {
            stack.visit_params(&format!("{prefix}g.dec{j}."), f);
        }
        self.head.visit_params(&format!("{prefix}g.head."), f);
    }
}

/// Small CNN classifier used as the frozen probe for the single-label
/// accuracy test: three stride-2 conv blocks and a linear head on the
/// flattened features.
pub struct Classifier {
    pub n_classes: usize,
    pub image_size: usize,
    pub in_channels: usize,
    pub width: usize,
    convs: Stack,
    fc: crate::nn::Linear,
}

pub struct ClassifierCaches {
    convs: Vec<LayerCache>,
    flat: ndarray::Array2<f32>,
    feat_shape: Vec<usize>,
}

pub fn build_classifier(
    in_channels: usize,
    image_size: usize,
    n_classes: usize,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Classifier> {
    if image_size % 8 != 0 {
        return Err(Error::InvalidSpec("classifier image size must be divisible by 8".into()));
    }
    let convs = Stack::new(vec![
        Layer::Conv(Conv2d::new(in_channels, width, 3, 2, 1, true, rng)),
        Layer::Act(Activation::Relu),
        Layer::Conv(Conv2d::new(width, 2 * width, 3, 2, 1, true, rng)),
        Layer::Act(Activation::Relu),
        Layer::Conv(Conv2d::new(2 * width, 4 * width, 3, 2, 1, true, rng)),
        Layer::Act(Activation::Relu),
    ]);
    let feat = 4 * width * (image_size / 8) * (image_size / 8);
    let fc = crate::nn::Linear::new(feat, n_classes, rng);
    Ok(Classifier { n_classes, image_size, in_channels, width, convs, fc })
}

impl Classifier {
    /// Logits `[N, n_classes]`.
    pub fn forward(
        &mut self,
        images: &Array4<f32>,
        ctx: &mut FwdCtx<'_>,
    ) -> Result<(ndarray::Array2<f32>, ClassifierCaches)> {
        let (feat, convs) = self.convs.forward(images, ctx)?;
        let n = feat.shape()[0];
        let flat_len = feat.len() / n;
        let feat_shape = feat.shape().to_vec();
        let flat = feat
            .into_shape_with_order((n, flat_len))
            .expect("contiguous features");
        let (logits, fc_cache) = self.fc.forward(&flat);
        Ok((logits, ClassifierCaches { convs, flat: fc_cache, feat_shape }))
    }

    pub fn backward(&mut self, caches: &ClassifierCaches, dlogits: &ndarray::Array2<f32>) -> Result<()> {
        let dflat = self.fc.backward(&caches.flat, dlogits);
        let shape = (
            caches.feat_shape[0],
            caches.feat_shape[1],
            caches.feat_shape[2],
            caches.feat_shape[3],
        );
        let dfeat = dflat.into_shape_with_order(shape).expect("contiguous");
        self.convs.backward(&caches.convs, dfeat, false)?;
        Ok(())
    }

    pub fn predict(&mut self, images: &Array4<f32>) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(images, &mut FwdCtx::eval())?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}

impl Module for Classifier {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        self.convs.visit_params(&format!("{prefix}c."), f);
        self.fc.visit_params(&format!("{prefix}c.head."), f);
    }
}

/// Mean softmax cross-entropy over the batch with gradient w.r.t. logits.
pub fn softmax_cross_entropy(
    logits: &ndarray::Array2<f32>,
    labels: &[usize],
) -> Result<(f64, ndarray::Array2<f32>)> {
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            what: "cross entropy labels",
            left: vec![labels.len()],
            right: vec![n],
        });
    }
    let mut grad = ndarray::Array2::zeros((n, c));
    let mut loss = 0.0f64;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let maxv = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| f64::from(v - maxv).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let label = labels[i];
        if label >= c {
            return Err(contrario_core::Error::LabelOutOfRange { label, n_classes: c }.into());
        }
        loss -= (exps[label] / sum).ln();
        for j in 0..c {
            let p = exps[j] / sum;
            grad[[i, j]] = ((p - f64::from(u8::from(j == label))) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::randn4;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn canonical_patchgan_receptive_field_is_70() {
        assert_eq!(receptive_field(&patch_discriminator_spec(64)), 70);
        assert_eq!(receptive_field(&patch_discriminator_spec(8)), 70);
    }

    #[test]
    fn simple_receptive_fields() {
        let single = [ConvLayerSpec {
            kernel: 4,
            stride: 1,
            padding: 0,
            channels_out: 1,
            normalization: NormSpec::None,
            activation: ActivationSpec::Identity,
        }];
        assert_eq!(receptive_field(&single), 4);
        let conv3 = |channels_out| ConvLayerSpec {
            kernel: 3,
            stride: 1,
            padding: 1,
            channels_out,
            normalization: NormSpec::None,
            activation: ActivationSpec::Identity,
        };
        assert_eq!(receptive_field(&[conv3(4), conv3(1)]), 5);
    }

    #[test]
    fn score_grid_shapes_match_stride_arithmetic() {
        let mut r = rng(0);
        let mut d =
            build_discriminator(5, 3, &patch_discriminator_spec(4), Fusion::EarlyConcat, &mut r)
                .unwrap();
        assert_eq!(d.output_grid(256, 256), (30, 30));
        assert_eq!(d.output_grid(64, 64), (6, 6));
        let cond = randn4(&mut r, (2, 5, 64, 64));
        let target = randn4(&mut r, (2, 3, 64, 64));
        let (resp, _) = d.forward(&cond, &target, &mut FwdCtx::eval()).unwrap();
        assert_eq!(resp.raw.shape(), &[2, 1, 6, 6]);
    }

    /// Brute-force index-propagation simulator: output length by counting
    /// valid windows, receptive field by tracking the input interval that
    /// feeds output cell 0.
    fn simulate(spec: &[ConvLayerSpec], input: usize) -> (usize, usize) {
        let mut len = input;
        for l in spec {
            let padded = len + 2 * l.padding;
            let mut count = 0usize;
            let mut start = 0usize;
            while start + l.kernel <= padded {
                count += 1;
                start += l.stride;
            }
            len = count;
        }
        let (mut lo, mut hi) = (0isize, 0isize);
        for l in spec.iter().rev() {
            lo *= l.stride as isize;
            hi = hi * l.stride as isize + l.kernel as isize - 1;
        }
        (len, (hi - lo + 1) as usize)
    }

    #[test]
    fn shape_law_and_receptive_field_match_brute_force_simulator() {
        let mut r = rng(42);
        for _ in 0..200 {
            let n_layers = r.gen_range(1..5);
            let spec: Vec<ConvLayerSpec> = (0..n_layers)
                .map(|_| ConvLayerSpec {
                    kernel: r.gen_range(1..6),
                    stride: r.gen_range(1..4),
                    padding: r.gen_range(0..3),
                    channels_out: 1,
                    normalization: NormSpec::None,
                    activation: ActivationSpec::Identity,
                })
                .collect();
            let input = r.gen_range(16..96);
            let mut len = input;
            let mut ok = true;
            for l in &spec {
                if len + 2 * l.padding < l.kernel {
                    ok = false;
                    break;
                }
                len = conv_out_dim(len, l.kernel, l.stride, l.padding);
                if len == 0 {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            let (sim_len, sim_rf) = simulate(&spec, input);
            let mut impl_len = input;
            for l in &spec {
                impl_len = conv_out_dim(impl_len, l.kernel, l.stride, l.padding);
            }
            assert_eq!(impl_len, sim_len, "grid mismatch for {spec:?}");
            assert_eq!(receptive_field(&spec), sim_rf, "rf mismatch for {spec:?}");
        }
    }

    #[test]
    fn probabilities_are_sigmoid_of_raw() {
        let mut r = rng(1);
        let mut d =
            build_discriminator(2, 3, &patch_discriminator_spec(4), Fusion::EarlyConcat, &mut r)
                .unwrap();
        let cond = randn4(&mut r, (2, 2, 64, 64));
        let target = randn4(&mut r, (2, 3, 64, 64));
        let (resp, _) = d.forward(&cond, &target, &mut FwdCtx::eval()).unwrap();
        let probs = resp.probabilities();
        for (&s, &p) in resp.raw.iter().zip(probs.iter()) {
            assert!((p - 1.0 / (1.0 + (-s).exp())).abs() < 1e-7);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn constant_weight_discriminator_gives_constant_grid() {
        let mut r = rng(2);
        let mut d =
            build_discriminator(2, 1, &patch_discriminator_spec(4), Fusion::EarlyConcat, &mut r)
                .unwrap();
        d.visit_params("", &mut |p| {
            if p.name.ends_with("conv.w") {
                p.value.fill(0.0);
            }
            if p.name.ends_with("conv.b") {
                p.value.fill(0.7);
            }
        });
        let cond = randn4(&mut r, (1, 2, 64, 64));
        let target = randn4(&mut r, (1, 1, 64, 64));
        let (resp, _) = d.forward(&cond, &target, &mut FwdCtx::eval()).unwrap();
        for &v in resp.raw.iter() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn discriminator_rejects_bad_shapes() {
        let mut r = rng(3);
        let mut d =
            build_discriminator(2, 3, &patch_discriminator_spec(4), Fusion::EarlyConcat, &mut r)
                .unwrap();
        let cond = randn4(&mut r, (1, 2, 64, 64));
        let bad_target = randn4(&mut r, (1, 1, 64, 64));
        assert!(d.forward(&cond, &bad_target, &mut FwdCtx::eval()).is_err());
        let bad_spatial = randn4(&mut r, (1, 3, 32, 32));
        assert!(d.forward(&cond, &bad_spatial, &mut FwdCtx::eval()).is_err());
        let mut spec = patch_discriminator_spec(4);
        spec.last_mut().unwrap().channels_out = 2;
        assert!(build_discriminator(2, 3, &spec, Fusion::EarlyConcat, &mut r).is_err());
    }

    #[test]
    fn generator_output_ranges_per_task() {
        let mut r = rng(4);
        let n_classes = 4;

        let mut g = build_generator(Task::Label2Image { n_classes }, 64, 2, &mut r).unwrap();
        let cond = randn4(&mut r, (2, 4, 64, 64));
        let (y, _) = g.forward(&cond, &mut FwdCtx::eval()).unwrap();
        assert_eq!(y.shape(), &[2, 3, 64, 64]);
        assert!(y.iter().all(|&v| (-1.0..=1.0).contains(&v)));

        let mut g = build_generator(Task::Image2Depth, 64, 2, &mut r).unwrap();
        let cond = randn4(&mut r, (2, 3, 64, 64));
        let (y, _) = g.forward(&cond, &mut FwdCtx::eval()).unwrap();
        assert_eq!(y.shape(), &[2, 1, 64, 64]);
        assert!(y.iter().all(|&v| v >= 0.0));

        let mut g = build_generator(Task::Image2Label { n_classes }, 64, 2, &mut r).unwrap();
        let cond = randn4(&mut r, (2, 3, 64, 64));
        let (y, _) = g.forward(&cond, &mut FwdCtx::eval()).unwrap();
        assert_eq!(y.shape(), &[2, 4, 64, 64]);
        for s in 0..2 {
            for iy in 0..64 {
                for ix in 0..64 {
                    let sum: f32 = (0..n_classes).map(|c| y[[s, c, iy, ix]]).sum();
                    assert!((sum - 1.0).abs() < 1e-4);
                }
            }
        }

        let mut g = build_generator(Task::SingleLabel2Image { n_classes }, 64, 2, &mut r).unwrap();
        let mut cond = Array4::zeros((2, n_classes, 1, 1));
        cond[[0, 1, 0, 0]] = 1.0;
        cond[[1, 3, 0, 0]] = 1.0;
        let (y, _) = g.forward(&cond, &mut FwdCtx::eval()).unwrap();
        assert_eq!(y.shape(), &[2, 3, 64, 64]);
        assert!(y.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn generator_size_validation() {
        let mut r = rng(5);
        assert!(build_generator(Task::Image2Depth, 48, 2, &mut r).is_err());
        assert!(build_generator(Task::Image2Depth, 16, 2, &mut r).is_err());
        assert!(build_generator(Task::Image2Depth, 32, 2, &mut r).is_ok());
    }

    /// Replace kinked activations with smooth stand-ins so central finite
    /// differences are meaningful through the whole net: leaky-relu slope 1
    /// is the identity, relu becomes tanh. The wiring under test (convs,
    /// norms, skips, concat splits, cache alignment) is unchanged.
    fn smooth_stack(stack: &mut crate::nn::Stack) {
        for layer in &mut stack.layers {
            if let Layer::Act(a) = layer {
                *a = match *a {
                    Activation::LeakyRelu(_) => Activation::LeakyRelu(1.0),
                    Activation::Relu => Activation::Tanh,
                    other => other,
                };
            }
        }
    }

    /// Whole-net finite-difference sanity of the backward wiring, in eval
    /// mode (dropout identity, running-stat norms).
    #[test]
    fn generator_param_gradients_match_finite_differences() {
        let mut r = rng(6);
        let mut g = build_generator(Task::Label2Image { n_classes: 2 }, 32, 2, &mut r).unwrap();
        for s in g.enc.iter_mut().chain(g.dec.iter_mut()) {
            smooth_stack(s);
        }
        smooth_stack(&mut g.head);
        let cond = randn4(&mut r, (2, 2, 32, 32));
        let (y, caches) = g.forward(&cond, &mut FwdCtx::eval()).unwrap();
        let (proj, _) = crate::nn::testutil::proj_loss(&y, &mut r);
        g.zero_grads();
        g.backward(&caches, &proj).unwrap();

        let mut probes: Vec<(String, usize, f32)> = Vec::new();
        g.visit_params("", &mut |p| {
            if let Some(grad) = p.grad {
                let mid = grad.len() / 2;
                probes.push((p.name.clone(), 0, grad[0]));
                probes.push((p.name.clone(), mid, grad[mid]));
            }
        });
        let loss = |g: &mut UnetGenerator, cond: &Array4<f32>| -> f64 {
            let (y, _) = g.forward(cond, &mut FwdCtx::eval()).unwrap();
            y.iter().zip(proj.iter()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
        };
        let h = 1e-2f32;
        for (name, idx, an) in probes.iter().step_by(3) {
            let nudge = |g: &mut UnetGenerator, delta: f32| {
                g.visit_params("", &mut |p| {
                    if &p.name == name {
                        p.value[*idx] += delta;
                    }
                });
            };
            nudge(&mut g, h);
            let lp = loss(&mut g, &cond);
            nudge(&mut g, -2.0 * h);
            let lm = loss(&mut g, &cond);
            nudge(&mut g, h);
            let fd = ((lp - lm) / (2.0 * f64::from(h))) as f32;
            let tol = 3e-2 * fd.abs().max(an.abs()).max(2e-3);
            assert!((fd - an).abs() <= tol, "{name}[{idx}]: analytic {an} vs fd {fd}");
        }
    }

    #[test]
    fn discriminator_param_and_input_gradients_match_finite_differences() {
        let mut r = rng(7);
        let mut d =
            build_discriminator(2, 3, &patch_discriminator_spec(2), Fusion::EarlyConcat, &mut r)
                .unwrap();
        smooth_stack(&mut d.stack);
        let cond = randn4(&mut r, (2, 2, 32, 32));
        let target = randn4(&mut r, (2, 3, 32, 32));
        let (resp, caches) = d.forward(&cond, &target, &mut FwdCtx::eval()).unwrap();
        let (proj, _) = crate::nn::testutil::proj_loss(&resp.raw, &mut r);
        d.zero_grads();
        let dtarget = d.backward(&caches, &proj, true).unwrap().unwrap();

        let cond2 = cond.clone();
        let loss = |d: &mut PatchDiscriminator, target: &Array4<f32>| -> f64 {
            let (resp, _) = d.forward(&cond2, target, &mut FwdCtx::eval()).unwrap();
            resp.raw.iter().zip(proj.iter()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
        };
        let h = 1e-2f32;
        for &(n, c, iy, ix) in &[(0usize, 0usize, 0usize, 0usize), (1, 2, 17, 5), (0, 1, 31, 31)] {
            let mut tp = target.clone();
            tp[[n, c, iy, ix]] += h;
            let mut tm = target.clone();
            tm[[n, c, iy, ix]] -= h;
            let fd = ((loss(&mut d, &tp) - loss(&mut d, &tm)) / (2.0 * f64::from(h))) as f32;
            let an = dtarget[[n, c, iy, ix]];
            let tol = 3e-2 * fd.abs().max(an.abs()).max(2e-3);
            assert!((fd - an).abs() <= tol, "dtarget[{n},{c},{iy},{ix}]: {an} vs fd {fd}");
        }
        let mut probes: Vec<(String, usize, f32)> = Vec::new();
        d.visit_params("", &mut |p| {
            if let Some(grad) = p.grad {
                probes.push((p.name.clone(), grad.len() / 2, grad[grad.len() / 2]));
            }
        });
        for (name, idx, an) in probes.iter().step_by(4) {
            let nudge = |d: &mut PatchDiscriminator, delta: f32| {
                d.visit_params("", &mut |p| {
                    if &p.name == name {
                        p.value[*idx] += delta;
                    }
                });
            };
            nudge(&mut d, h);
            let lp = loss(&mut d, &target);
            nudge(&mut d, -2.0 * h);
            let lm = loss(&mut d, &target);
            nudge(&mut d, h);
            let fd = ((lp - lm) / (2.0 * f64::from(h))) as f32;
            let tol = 3e-2 * fd.abs().max(an.abs()).max(2e-3);
            assert!((fd - an).abs() <= tol, "{name}[{idx}]: analytic {an} vs fd {fd}");
        }
    }

    #[test]
    fn desk_scale_grid_shape_oracle() {
        // 64 -> 32 -> 16 -> 8 -> 7 -> 6 by manual stride arithmetic.
        let mut r = rng(8);
        let d =
            build_discriminator(5, 3, &patch_discriminator_spec(8), Fusion::EarlyConcat, &mut r)
                .unwrap();
        let dims = [64usize, 32, 16, 8, 7, 6];
        let mut len = dims[0];
        for (l, expect) in d.spec.iter().zip(&dims[1..]) {
            len = conv_out_dim(len, l.kernel, l.stride, l.padding);
            assert_eq!(len, *expect);
        }
    }
}
