//! Concrete paired-sample types, batching, and the on-disk dataset format
//! (PNG files + a JSON manifest).

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use contrario_core::PairedSample;

use crate::nets::Task;
use crate::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// A condition variable: a per-pixel class map, a dense spatial map (image
/// or depth), or a single class label.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    LabelMap { n_classes: usize, map: Array2<u8> },
    Spatial(Array3<f32>),
    Class { n_classes: usize, id: u32 },
}

impl Condition {
    pub fn channels(&self) -> usize {
        match self {
            Condition::LabelMap { n_classes, .. } => *n_classes,
            Condition::Spatial(t) => t.shape()[0],
            Condition::Class { n_classes, .. } => *n_classes,
        }
    }

    /// Dense tensor view: one-hot `[C, H, W]` for label maps, one-hot
    /// `[C, 1, 1]` for class labels, pass-through for spatial maps.
    pub fn to_tensor(&self) -> Array3<f32> {
        match self {
            Condition::LabelMap { n_classes, map } => {
                let (h, w) = (map.shape()[0], map.shape()[1]);
                let mut t = Array3::zeros((*n_classes, h, w));
                for y in 0..h {
                    for x in 0..w {
                        t[[usize::from(map[[y, x]]), y, x]] = 1.0;
                    }
                }
                t
            }
            Condition::Spatial(t) => t.clone(),
            Condition::Class { n_classes, id } => {
                let mut t = Array3::zeros((*n_classes, 1, 1));
                t[[*id as usize, 0, 0]] = 1.0;
                t
            }
        }
    }
}

pub type Sample = PairedSample<Condition, Array3<f32>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub generator: String,
    #[serde(flatten)]
    pub task: Task,
    pub image_size: usize,
    pub n_classes: usize,
    /// Base colors per class in `[-1, 1]` RGB; empty when not applicable.
    pub palette: Vec<[f32; 3]>,
    /// Background depth plane; 0 when not applicable.
    pub depth_max: f64,
    pub seed: u64,
}

pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    /// Unique sample ids and consistent shapes across the dataset.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for s in self.train.iter().chain(&self.val) {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::Dataset(format!("duplicate sample id {}", s.sample_id)));
            }
            let t = s.target.shape();
            if t[0] != self.meta.task.target_channels() {
                return Err(Error::Dataset(format!(
                    "sample {}: target channels {} != task {}",
                    s.sample_id,
                    t[0],
                    self.meta.task.target_channels()
                )));
            }
            match &s.condition {
                Condition::LabelMap { map, .. } => {
                    if map.shape() != [t[1], t[2]] {
                        return Err(Error::Dataset(format!(
                            "sample {}: condition/target spatial dims differ",
                            s.sample_id
                        )));
                    }
                }
                Condition::Spatial(c) => {
                    if c.shape()[1..] != t[1..] {
                        return Err(Error::Dataset(format!(
                            "sample {}: condition/target spatial dims differ",
                            s.sample_id
                        )));
                    }
                }
                Condition::Class { n_classes, id } => {
                    if *id as usize >= *n_classes {
                        return Err(Error::Dataset(format!(
                            "sample {}: class id out of range",
                            s.sample_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Stack per-sample `[C, H, W]` tensors into `[N, C, H, W]`.
pub fn stack3(items: &[Array3<f32>]) -> Array4<f32> {
    assert!(!items.is_empty());
    let views: Vec<_> = items.iter().map(|t| t.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("uniform shapes")
}

/// Gather a batch of (condition, target) tensors by index.
pub fn gather_batch(samples: &[Sample], idxs: &[usize]) -> (Array4<f32>, Array4<f32>) {
    let conds: Vec<Array3<f32>> = idxs.iter().map(|&i| samples[i].condition.to_tensor()).collect();
    let targets: Vec<Array3<f32>> = idxs.iter().map(|&i| samples[i].target.clone()).collect();
    (stack3(&conds), stack3(&targets))
}

// --- pixel conversions ----------------------------------------------------

/// `[-1, 1]` float channel value to 8-bit.
fn to_u8(v: f32) -> u8 {
    (((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0)) as u8
}

fn from_u8(q: u8) -> f32 {
    f32::from(q) / 255.0 * 2.0 - 1.0
}

pub fn tensor_to_rgb8(t: &Array3<f32>) -> image::RgbImage {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([to_u8(t[[0, y, x]]), to_u8(t[[1, y, x]]), to_u8(t[[2, y, x]])])
    })
}

pub fn rgb8_to_tensor(img: &image::RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let mut t = Array3::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            t[[c, y as usize, x as usize]] = from_u8(p[c]);
        }
    }
    t
}

pub fn label_to_gray(map: &Array2<u8>) -> image::GrayImage {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([map[[y as usize, x as usize]]])
    })
}

pub fn gray_to_label(img: &image::GrayImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| img.get_pixel(x as u32, y as u32)[0])
}

pub fn depth_to_gray16(depth: &Array3<f32>, depth_max: f64) -> image::ImageBuffer<image::Luma<u16>, Vec<u16>> {
    let (h, w) = (depth.shape()[1], depth.shape()[2]);
    image::ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let d = f64::from(depth[[0, y as usize, x as usize]]);
        image::Luma([((d / depth_max).clamp(0.0, 1.0) * 65535.0).round() as u16])
    })
}

pub fn gray16_to_depth(img: &image::ImageBuffer<image::Luma<u16>, Vec<u16>>, depth_max: f64) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let mut t = Array3::zeros((1, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        t[[0, y as usize, x as usize]] = (f64::from(p[0]) / 65535.0 * depth_max) as f32;
    }
    t
}

/// One-hot `[C, H, W]` to a class map by argmax (used to store
/// image-to-label targets losslessly when they are exact one-hots).
pub fn onehot_to_label(t: &Array3<f32>) -> Array2<u8> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut best = 0usize;
        let mut bestv = t[[0, y, x]];
        for ch in 1..c {
            if t[[ch, y, x]] > bestv {
                bestv = t[[ch, y, x]];
                best = ch;
            }
        }
        best as u8
    })
}

pub fn label_to_onehot(map: &Array2<u8>, n_classes: usize) -> Array3<f32> {
    Condition::LabelMap { n_classes, map: map.clone() }.to_tensor()
}

// --- on-disk format ---------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    class: Option<u32>,
    target_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    meta: DatasetMeta,
    train: Vec<SampleEntry>,
    val: Vec<SampleEntry>,
}

fn write_png(path: &Path, write: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    write(path).map_err(|e| Error::Dataset(format!("writing {}: {e}", path.display())))
}

fn save_split(dir: &Path, split: &str, meta: &DatasetMeta, samples: &[Sample]) -> Result<Vec<SampleEntry>> {
    let split_dir = dir.join(split);
    fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let base = format!("{split}/{}", s.sample_id);
        let mut entry = SampleEntry {
            id: s.sample_id.clone(),
            condition_file: None,
            class: None,
            target_file: String::new(),
        };
        match &s.condition {
            Condition::LabelMap { map, .. } => {
                let f = format!("{base}.cond.png");
                write_png(&dir.join(&f), |p| label_to_gray(map).save(p))?;
                entry.condition_file = Some(f);
            }
            Condition::Spatial(t) => {
                let f = format!("{base}.cond.png");
                write_png(&dir.join(&f), |p| tensor_to_rgb8(t).save(p))?;
                entry.condition_file = Some(f);
            }
            Condition::Class { id, .. } => entry.class = Some(*id),
        }
        let tf = format!("{base}.target.png");
        match meta.task {
            Task::Image2Depth => {
                write_png(&dir.join(&tf), |p| depth_to_gray16(&s.target, meta.depth_max).save(p))?
            }
            Task::Image2Label { .. } => {
                write_png(&dir.join(&tf), |p| label_to_gray(&onehot_to_label(&s.target)).save(p))?
            }
            _ => write_png(&dir.join(&tf), |p| tensor_to_rgb8(&s.target).save(p))?,
        }
        entry.target_file = tf;
        entries.push(entry);
    }
    Ok(entries)
}

/// Write the dataset as PNG files plus `manifest.json` under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        meta: ds.meta.clone(),
        train: save_split(dir, "train", &ds.meta, &ds.train)?,
        val: save_split(dir, "val", &ds.meta, &ds.val)?,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn load_split(dir: &Path, meta: &DatasetMeta, entries: &[SampleEntry]) -> Result<Vec<Sample>> {
    let open = |rel: &str| -> Result<image::DynamicImage> {
        let p = dir.join(rel);
        image::open(&p).map_err(|e| Error::Dataset(format!("reading {}: {e}", p.display())))
    };
    let mut samples = Vec::with_capacity(entries.len());
    for e in entries {
        let condition = match (&e.condition_file, e.class) {
            (Some(f), _) => match meta.task {
                Task::Label2Image { n_classes } => {
                    Condition::LabelMap { n_classes, map: gray_to_label(&open(f)?.to_luma8()) }
                }
                _ => Condition::Spatial(rgb8_to_tensor(&open(f)?.to_rgb8())),
            },
            (None, Some(id)) => Condition::Class { n_classes: meta.n_classes, id },
            (None, None) => {
                return Err(Error::Dataset(format!("sample {}: no condition", e.id)))
            }
        };
        let target = match meta.task {
            Task::Image2Depth => gray16_to_depth(&open(&e.target_file)?.to_luma16(), meta.depth_max),
            Task::Image2Label { n_classes } => {
                label_to_onehot(&gray_to_label(&open(&e.target_file)?.to_luma8()), n_classes)
            }
            _ => rgb8_to_tensor(&open(&e.target_file)?.to_rgb8()),
        };
        samples.push(Sample::new(condition, target, e.id.clone()));
    }
    Ok(samples)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&json).map_err(|e| Error::Serde(e.to_string()))?;
    if manifest.meta.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset schema version {}",
            manifest.meta.schema_version
        )));
    }
    let ds = Dataset {
        train: load_split(dir, &manifest.meta, &manifest.train)?,
        val: load_split(dir, &manifest.meta, &manifest.val)?,
        meta: manifest.meta,
    };
    ds.validate()?;
    Ok(ds)
}
