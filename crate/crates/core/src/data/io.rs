//! Sample directories (`image.png`, `layout.png`, `instances.png`, `meta.json`),
//! dataset roots with `dataset.json`, and ingestion of external label sets.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::toy::{generate_toy_scene, ToyConfig};
use super::{SceneMeta, SceneSample};
use crate::error::{Error, Result};
use crate::features::{layout_to_channels, ClassTable};

const IMAGE_FILE: &str = "image.png";
const LAYOUT_FILE: &str = "layout.png";
const INSTANCES_FILE: &str = "instances.png";
const META_FILE: &str = "meta.json";
const DATASET_FILE: &str = "dataset.json";

#[derive(Serialize, Deserialize)]
struct SampleMetaFile {
    meta: SceneMeta,
    class_table: ClassTable,
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn read_png(path: &Path, transformations: png::Transformations) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(transformations);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut data = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let fmt = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(data).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

/// `[0, 1]` float to 8 bits, rounding to nearest.
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `3 x H x W` image as 8-bit RGB.
pub fn save_rgb_png(path: &Path, image: &Array3<f32>) -> Result<()> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut data = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            data.extend((0..3).map(|k| quantize(image[[k, y, x]])));
        }
    }
    write_png(path, w, h, png::ColorType::Rgb, png::BitDepth::Eight, None, &data)
}

/// Writes a label map as an 8-bit indexed PNG whose palette holds the class colors.
pub fn save_label_png(path: &Path, labels: &Array2<u8>, table: &ClassTable) -> Result<()> {
    let (h, w) = labels.dim();
    let max_label = table.classes().iter().map(|c| c.label).max().unwrap_or(0) as usize;
    let mut palette = vec![0u8; 3 * (max_label + 1)];
    for c in table.classes() {
        palette[3 * c.label as usize..3 * c.label as usize + 3].copy_from_slice(&c.color);
    }
    let data: Vec<u8> = labels.iter().copied().collect();
    write_png(
        path,
        w,
        h,
        png::ColorType::Indexed,
        png::BitDepth::Eight,
        Some(palette),
        &data,
    )
}

/// Reads any 8/16-bit PNG as a `3 x H x W` float image in `[0, 1]`.
pub fn load_rgb_png(path: &Path) -> Result<Array3<f32>> {
    let d = read_png(path, png::Transformations::EXPAND | png::Transformations::STRIP_16)?;
    let (stride, rgb) = match d.color {
        png::ColorType::Rgb => (3, true),
        png::ColorType::Rgba => (4, true),
        png::ColorType::Grayscale => (1, false),
        png::ColorType::GrayscaleAlpha => (2, false),
        png::ColorType::Indexed => return Err(Error::format(path, "palette was not expanded")),
    };
    let mut img = Array3::<f32>::zeros((3, d.height, d.width));
    for (i, px) in d.data.chunks_exact(stride).enumerate() {
        let (y, x) = (i / d.width, i % d.width);
        for k in 0..3 {
            img[[k, y, x]] = px[if rgb { k } else { 0 }] as f32 / 255.0;
        }
    }
    Ok(img)
}

/// Reads raw 8-bit values from an indexed or grayscale PNG.
fn load_label_png(path: &Path) -> Result<Array2<u8>> {
    let d = read_png(path, png::Transformations::IDENTITY)?;
    match (d.color, d.depth) {
        (png::ColorType::Indexed | png::ColorType::Grayscale, png::BitDepth::Eight) => {
            Ok(Array2::from_shape_vec((d.height, d.width), d.data).expect("decoded size"))
        }
        other => Err(Error::format(
            path,
            format!("expected 8-bit indexed or gray labels, got {other:?}"),
        )),
    }
}

/// Reads instance ids from an 8- or 16-bit grayscale PNG.
fn load_instance_png(path: &Path) -> Result<Array2<u16>> {
    let d = read_png(path, png::Transformations::IDENTITY)?;
    let ids: Vec<u16> = match (d.color, d.depth) {
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => d
            .data
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
        (png::ColorType::Grayscale, png::BitDepth::Eight) => d.data.iter().map(|&v| v as u16).collect(),
        other => {
            return Err(Error::format(
                path,
                format!("expected grayscale instance ids, got {other:?}"),
            ))
        }
    };
    Ok(Array2::from_shape_vec((d.height, d.width), ids).expect("decoded size"))
}

fn save_instance_png(path: &Path, ids: &Array2<u16>) -> Result<()> {
    let (h, w) = ids.dim();
    let data: Vec<u8> = ids.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(
        path,
        w,
        h,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        None,
        &data,
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_sample(dir: &Path, sample: &SceneSample) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_rgb_png(&dir.join(IMAGE_FILE), &sample.image)?;
    save_label_png(
        &dir.join(LAYOUT_FILE),
        &sample.layout.to_label_map(),
        sample.layout.class_table(),
    )?;
    save_instance_png(&dir.join(INSTANCES_FILE), &sample.instance_map)?;
    write_json(
        &dir.join(META_FILE),
        &SampleMetaFile {
            meta: sample.meta.clone(),
            class_table: sample.layout.class_table().clone(),
        },
    )
}

pub fn load_sample(dir: &Path) -> Result<SceneSample> {
    let meta: SampleMetaFile = read_json(&dir.join(META_FILE))?;
    let image_path = dir.join(IMAGE_FILE);
    let image = load_rgb_png(&image_path)?;
    let (_, h, w) = image.dim();
    let layout_path = dir.join(LAYOUT_FILE);
    let labels = load_label_png(&layout_path)?;
    if labels.dim() != (h, w) {
        return Err(Error::format(
            &layout_path,
            format!("size {:?} differs from image {h}x{w}", labels.dim()),
        ));
    }
    let inst_path = dir.join(INSTANCES_FILE);
    let instance_map = load_instance_png(&inst_path)?;
    if instance_map.dim() != (h, w) {
        return Err(Error::format(
            &inst_path,
            format!("size {:?} differs from image {h}x{w}", instance_map.dim()),
        ));
    }
    let layout =
        layout_to_channels(labels.view(), &meta.class_table).map_err(|e| Error::format(&layout_path, e.to_string()))?;
    Ok(SceneSample {
        image,
        layout,
        instance_map,
        meta: meta.meta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Contents of `dataset.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub class_table: ClassTable,
    pub seed: u64,
    pub count: usize,
    /// Scene index ranges, half-open.
    pub train: (usize, usize),
    pub val: (usize, usize),
    pub generator: ToyConfig,
}

impl DatasetMeta {
    pub fn range(&self, split: Split) -> Range<usize> {
        let (a, b) = match split {
            Split::Train => self.train,
            Split::Val => self.val,
        };
        a..b
    }
}

/// A dataset root on disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let meta: DatasetMeta = read_json(&root.join(DATASET_FILE))?;
        if meta.train.1 > meta.count
            || meta.val.1 > meta.count
            || meta.train.0 > meta.train.1
            || meta.val.0 > meta.val.1
        {
            return Err(Error::format(
                root.join(DATASET_FILE),
                "split ranges exceed the scene count",
            ));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            meta,
        })
    }

    pub fn scene_dir(&self, index: usize) -> PathBuf {
        scene_dir(&self.root, index)
    }

    pub fn load(&self, index: usize) -> Result<SceneSample> {
        let s = load_sample(&self.scene_dir(index))?;
        if s.layout.class_table() != &self.meta.class_table {
            return Err(Error::format(
                self.scene_dir(index).join(META_FILE),
                "class table differs from dataset.json",
            ));
        }
        Ok(s)
    }

    pub fn indices(&self, split: Split) -> Range<usize> {
        self.meta.range(split)
    }
}

fn scene_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("scene_{index:06}"))
}

/// Writes `count` toy scenes under `root`; the last `val_fraction` of indices form the validation split.
pub fn generate_dataset(root: &Path, count: usize, seed: u64, cfg: &ToyConfig, val_fraction: f64) -> Result<Dataset> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Config("dataset needs at least one scene".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let n_val = (count as f64 * val_fraction).round() as usize;
    let n_train = count - n_val;
    for i in 0..count {
        let scene = generate_toy_scene(seed, i as u64, cfg)?;
        save_sample(&scene_dir(root, i), &scene)?;
    }
    let meta = DatasetMeta {
        class_table: cfg.class_table.clone(),
        seed,
        count,
        train: (0, n_train),
        val: (n_train, count),
        generator: cfg.clone(),
    };
    write_json(&root.join(DATASET_FILE), &meta)?;
    Ok(Dataset {
        root: root.to_path_buf(),
        meta,
    })
}

/// External scenes matched by file stem across three directories.
#[derive(Clone, Debug)]
pub struct RealDataset {
    image_dir: PathBuf,
    layout_dir: PathBuf,
    instance_dir: PathBuf,
    class_table: ClassTable,
    stems: Vec<String>,
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

/// Pairs `<stem>.png` files across the three directories; any unmatched stem is an error.
pub fn ingest_real_dataset(
    image_dir: &Path,
    layout_dir: &Path,
    instance_dir: &Path,
    class_table: &ClassTable,
) -> Result<RealDataset> {
    let images = png_stems(image_dir)?;
    let layouts = png_stems(layout_dir)?;
    let instances = png_stems(instance_dir)?;
    let all: BTreeSet<&String> = images.iter().chain(&layouts).chain(&instances).collect();
    let mut problems = Vec::new();
    for (name, set) in [("image", &images), ("layout", &layouts), ("instances", &instances)] {
        let missing: Vec<&str> = all.iter().filter(|s| !set.contains(**s)).map(|s| s.as_str()).collect();
        if !missing.is_empty() {
            problems.push(format!("missing {name} for {}", missing.join(", ")));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Ingest(problems.join("; ")));
    }
    Ok(RealDataset {
        image_dir: image_dir.to_path_buf(),
        layout_dir: layout_dir.to_path_buf(),
        instance_dir: instance_dir.to_path_buf(),
        class_table: class_table.clone(),
        stems: images.into_iter().collect(),
    })
}

impl RealDataset {
    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn load(&self, stem: &str) -> Result<SceneSample> {
        let file = format!("{stem}.png");
        let image = load_rgb_png(&self.image_dir.join(&file))?;
        let (_, h, w) = image.dim();
        let layout_path = self.layout_dir.join(&file);
        let labels = load_label_png(&layout_path)?;
        let inst_path = self.instance_dir.join(&file);
        let instance_map = load_instance_png(&inst_path)?;
        for (path, dim) in [(&layout_path, labels.dim()), (&inst_path, instance_map.dim())] {
            if dim != (h, w) {
                return Err(Error::format(path, format!("size {dim:?} differs from image {h}x{w}")));
            }
        }
        let layout = layout_to_channels(labels.view(), &self.class_table)
            .map_err(|e| Error::format(&layout_path, e.to_string()))?;
        let index = self.stems.iter().position(|s| s == stem).unwrap_or(0) as u64;
        let sample = SceneSample {
            image,
            layout,
            instance_map,
            meta: SceneMeta {
                horizon_row: None,
                car_a: None,
                car_b: None,
                vanishing_x: None,
                road_slope: None,
                seed: 0,
                index,
            },
        };
        sample.check_invariants()?;
        Ok(sample)
    }

    /// Lazily loads every scene, skipping (with a warning) those that fail to load or validate.
    pub fn iter(&self) -> impl Iterator<Item = SceneSample> + '_ {
        self.stems.iter().filter_map(move |stem| match self.load(stem) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("skipping {stem}: {e}");
                None
            }
        })
    }
}
