//! Dataset-level metric evaluation on frozen generators, the label-accuracy
//! probe, and feature extraction for NDB.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use contrario_core::seg::{seg_scores, ConfusionMatrix, SegScores};
use contrario_core::{depth::depth_scores, depth::DepthScores};

use crate::data::{gather_batch, Condition, Sample};
use crate::nets::{Classifier, UnetGenerator};
use crate::nn::FwdCtx;
use crate::synth::nearest_palette_class;
use crate::{Error, Result};

/// One appended row of the run's JSON-lines metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run: String,
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    pub name: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metric record serializes")
    }
}

/// Per-pixel nearest-palette-color classification of a rendered image.
pub fn segment_by_palette(img: &Array3<f32>, palette: &[[f32; 3]]) -> Array2<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    Array2::from_shape_fn((h, w), |(y, x)| {
        nearest_palette_class([img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]], palette)
    })
}

fn batches(n: usize, batch: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

fn sample3(t: &Array4<f32>, i: usize) -> Array3<f32> {
    t.index_axis(ndarray::Axis(0), i).to_owned()
}

/// Label-to-image conditional quality: generate from the label maps, segment
/// the outputs by nearest palette color, and score against the conditioning
/// labels.
pub fn eval_l2i_scores(
    g: &mut UnetGenerator,
    samples: &[Sample],
    palette: &[[f32; 3]],
    n_classes: usize,
    batch: usize,
) -> Result<SegScores> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to evaluate".into()));
    }
    let mut conf = ConfusionMatrix::new(n_classes);
    for chunk in batches(samples.len(), batch) {
        let (cond, _) = gather_batch(samples, &chunk);
        let (gen, _) = g.forward(&cond, &mut FwdCtx::eval())?;
        for (row, &i) in chunk.iter().enumerate() {
            let pred = segment_by_palette(&sample3(&gen, row), palette);
            let Condition::LabelMap { map, .. } = &samples[i].condition else {
                return Err(Error::Dataset("label-to-image evaluation needs label-map conditions".into()));
            };
            let pred: Vec<usize> = pred.iter().map(|&v| usize::from(v)).collect();
            let gt: Vec<usize> = map.iter().map(|&v| usize::from(v)).collect();
            conf.accumulate(&pred, &gt).map_err(Error::Core)?;
        }
    }
    seg_scores(&conf).map_err(Error::Core)
}

pub fn eval_l2i_miou(
    g: &mut UnetGenerator,
    samples: &[Sample],
    palette: &[[f32; 3]],
    n_classes: usize,
    batch: usize,
) -> Result<f64> {
    Ok(eval_l2i_scores(g, samples, palette, n_classes, batch)?.mean_iou)
}

/// Depth error family over the pooled pixels of all evaluated samples.
pub fn eval_depth_scores(g: &mut UnetGenerator, samples: &[Sample], batch: usize) -> Result<DepthScores> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to evaluate".into()));
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for chunk in batches(samples.len(), batch) {
        let (cond, target) = gather_batch(samples, &chunk);
        let (gen, _) = g.forward(&cond, &mut FwdCtx::eval())?;
        pred.extend(gen.iter().map(|&v| f64::from(v)));
        gt.extend(target.iter().map(|&v| f64::from(v)));
    }
    depth_scores(&pred, &gt).map_err(Error::Core)
}

pub fn eval_depth_rmse_log(g: &mut UnetGenerator, samples: &[Sample], batch: usize) -> Result<f64> {
    Ok(eval_depth_scores(g, samples, batch)?.rmse_log)
}

/// Image-to-label conditional quality: per-pixel argmax of the generated
/// class maps against the target labels.
pub fn eval_i2l_scores(
    g: &mut UnetGenerator,
    samples: &[Sample],
    n_classes: usize,
    batch: usize,
) -> Result<SegScores> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to evaluate".into()));
    }
    let mut conf = ConfusionMatrix::new(n_classes);
    for chunk in batches(samples.len(), batch) {
        let (cond, target) = gather_batch(samples, &chunk);
        let (gen, _) = g.forward(&cond, &mut FwdCtx::eval())?;
        let pred_maps = crate::nn::act::channel_argmax(&gen);
        let gt_maps = crate::nn::act::channel_argmax(&target);
        let pred: Vec<usize> = pred_maps.iter().map(|&v| usize::from(v)).collect();
        let gt: Vec<usize> = gt_maps.iter().map(|&v| usize::from(v)).collect();
        conf.accumulate(&pred, &gt).map_err(Error::Core)?;
    }
    seg_scores(&conf).map_err(Error::Core)
}

/// Fraction of generated images the frozen classifier assigns to their
/// conditioning label.
pub fn label_accuracy(
    classifier: &mut Classifier,
    generated_images: &Array4<f32>,
    intended_labels: &[usize],
) -> Result<f64> {
    let n = generated_images.shape()[0];
    if intended_labels.len() != n {
        return Err(Error::ShapeMismatch {
            what: "label_accuracy",
            left: vec![intended_labels.len()],
            right: vec![n],
        });
    }
    if n == 0 {
        return Err(Error::Dataset("no generated images".into()));
    }
    if let Some(&bad) = intended_labels.iter().find(|&&l| l >= classifier.n_classes) {
        return Err(contrario_core::Error::LabelOutOfRange {
            label: bad,
            n_classes: classifier.n_classes,
        }
        .into());
    }
    let mut correct = 0usize;
    for start in (0..n).step_by(64) {
        let end = (start + 64).min(n);
        let chunk = generated_images
            .slice_axis(ndarray::Axis(0), ndarray::Slice::from(start..end))
            .to_owned();
        let preds = classifier.predict(&chunk)?;
        correct += preds
            .iter()
            .zip(&intended_labels[start..end])
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / n as f64)
}

/// Flattened luminance patches (non-overlapping `patch x patch` tiles) used
/// as NDB features. Trailing rows/columns that do not fill a tile are
/// dropped.
pub fn image_patches(images: &[Array3<f32>], patch: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for img in images {
        let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        for py in 0..h / patch {
            for px in 0..w / patch {
                let mut feat = Vec::with_capacity(patch * patch);
                for dy in 0..patch {
                    for dx in 0..patch {
                        let (y, x) = (py * patch + dy, px * patch + dx);
                        let lum: f64 =
                            (0..c).map(|ch| f64::from(img[[ch, y, x]])).sum::<f64>() / c as f64;
                        feat.push(lum);
                    }
                }
                out.push(feat);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_to_onehot;
    use crate::nets::{build_classifier, build_generator, Task};
    use crate::synth::{gen_shapes_depth, render_glyph_batch, ShapesSceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn palette_segmentation_of_clean_render_is_exact() {
        let palette = vec![[-0.8, -0.8, -0.8], [0.9, -0.8, -0.8], [-0.8, 0.9, -0.8]];
        let map = Array2::from_shape_vec((2, 2), vec![0u8, 1, 2, 1]).unwrap();
        let mut img = Array3::zeros((3, 2, 2));
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    img[[c, y, x]] = palette[usize::from(map[[y, x]])][c];
                }
            }
        }
        assert_eq!(segment_by_palette(&img, &palette), map);
    }

    #[test]
    fn depth_metric_wiring_zero_for_identity() {
        // pred == gt through the metric pipeline gives all-zero scores.
        let spec = ShapesSceneSpec::desk_default(3);
        let ds = gen_shapes_depth(&spec, 4, 0).unwrap();
        let pred: Vec<f64> = ds.train[0].target.iter().map(|&v| f64::from(v)).collect();
        let s = contrario_core::depth::depth_scores(&pred, &pred).unwrap();
        assert_eq!(s.rmse_log, 0.0);
        assert_eq!(s.abs_rel, 0.0);
    }

    #[test]
    fn i2l_scores_run_on_generator_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = build_generator(Task::Image2Label { n_classes: 3 }, 32, 2, &mut rng).unwrap();
        let map = Array2::zeros((32, 32));
        let samples = vec![Sample::new(
            Condition::Spatial(Array3::zeros((3, 32, 32))),
            label_to_onehot(&map, 3),
            "s0",
        )];
        let scores = eval_i2l_scores(&mut g, &samples, 3, 4).unwrap();
        assert!(scores.pixel_accuracy >= 0.0 && scores.pixel_accuracy <= 1.0);
    }

    #[test]
    fn label_accuracy_shuffled_labels_near_chance() {
        // An untrained classifier is near-uniform; scoring clean glyphs
        // against shuffled labels must sit near 1/n_classes either way.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n_classes = 4;
        let mut cls = build_classifier(3, 32, n_classes, 4, &mut rng).unwrap();
        let classes: Vec<usize> = (0..1000).map(|i| i % n_classes).collect();
        let images = render_glyph_batch(&classes, 32, 9);
        let shuffled: Vec<usize> = classes.iter().map(|&c| (c + 1) % n_classes).collect();
        let acc = label_accuracy(&mut cls, &images, &shuffled).unwrap();
        assert!(acc < 0.6, "shuffled accuracy suspiciously high: {acc}");
        assert!(label_accuracy(&mut cls, &images, &vec![7usize; 1000]).is_err());
    }

    #[test]
    fn patches_have_expected_count_and_dim() {
        let imgs = vec![Array3::zeros((3, 32, 32)), Array3::zeros((3, 32, 32))];
        let feats = image_patches(&imgs, 16);
        assert_eq!(feats.len(), 2 * 4);
        assert!(feats.iter().all(|f| f.len() == 256));
    }
}
