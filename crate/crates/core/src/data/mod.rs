//! Scenes, self-supervised training examples, and their on-disk form.

mod io;
mod toy;

pub use io::{
    generate_dataset, ingest_real_dataset, load_rgb_png, load_sample, save_label_png, save_rgb_png, save_sample,
    Dataset, DatasetMeta, RealDataset, Split,
};
pub use toy::{generate_toy_scene, ToyConfig};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::compositor::{canonicalize_patch, erase_instance, gt_transform, LayoutStack, ObjectAsset};
use crate::error::{Error, Result};
use crate::features::{select_instance, SelectionRules};
use crate::geometry::{NormalizedFrame, Transform2D};

/// Per-scene generation record. Generator fields are `None` for ingested scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub horizon_row: Option<f64>,
    /// Car height law `a + b * (baseline - horizon)`.
    pub car_a: Option<f64>,
    pub car_b: Option<f64>,
    pub vanishing_x: Option<f64>,
    pub road_slope: Option<f64>,
    pub seed: u64,
    /// RNG stream within `seed`; also the scene's index in its dataset.
    pub index: u64,
}

/// A scene `x` with its layout stack, instance map, and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// `3 x H x W`, values in `[0, 1]`.
    pub image: Array3<f32>,
    pub layout: LayoutStack,
    /// `0` is background.
    pub instance_map: Array2<u16>,
    pub meta: SceneMeta,
}

impl SceneSample {
    pub fn width(&self) -> usize {
        self.image.dim().2
    }

    pub fn height(&self) -> usize {
        self.image.dim().1
    }

    pub fn frame(&self) -> Result<NormalizedFrame> {
        NormalizedFrame::new(self.width(), self.height())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let (c, h, w) = self.image.dim();
        if c != 3 {
            return Err(Error::Shape(format!("image has {c} channels")));
        }
        if self.layout.height() != h || self.layout.width() != w || self.instance_map.dim() != (h, w) {
            return Err(Error::Shape("image, layout and instance map sizes differ".into()));
        }
        if !self.layout.is_exclusive_binary() {
            return Err(Error::InvalidInput("layout is not an exclusive binary stack".into()));
        }
        let obj = self
            .layout
            .class_table()
            .object_channel()
            .ok_or_else(|| Error::ClassTable("no object class".into()))?;
        let obj_plane = self.layout.channels().index_axis(Axis(0), obj);
        if self
            .instance_map
            .iter()
            .zip(obj_plane.iter())
            .any(|(&id, &m)| id != 0 && m != 1.0)
        {
            return Err(Error::InvalidInput("instance pixels outside the object class".into()));
        }
        if let Some(hr) = self.meta.horizon_row {
            if !(hr > 0.2 * h as f64 && hr < 0.5 * h as f64) {
                return Err(Error::InvalidInput(format!("horizon row {hr} outside (0.2H, 0.5H)")));
            }
        }
        Ok(())
    }
}

/// Scene, the object cropped from it, and the transform that puts it back.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub scene: SceneSample,
    pub asset: ObjectAsset,
    pub t_gt: Transform2D,
    /// Scene layout with this instance erased.
    pub background: LayoutStack,
}

/// Selects an intact object, canonicalizes it, and derives its ground-truth placement.
pub fn make_training_example(scene: SceneSample, seed: u64, side: usize) -> Result<Option<TrainingExample>> {
    let table = scene.layout.class_table();
    let obj = table
        .object_channel()
        .ok_or_else(|| Error::ClassTable("no object class".into()))?;
    let label = table.label_of(obj).expect("object channel in table");
    let labels = scene.layout.to_label_map();
    let Some((mask, bbox)) = select_instance(
        scene.instance_map.view(),
        labels.view(),
        &SelectionRules::for_label(label),
        seed,
    ) else {
        return Ok(None);
    };
    let asset = canonicalize_patch(scene.image.view(), mask.view(), bbox, obj, side)?;
    let t_gt = gt_transform(bbox, scene.frame()?, side)?;
    let background = erase_instance(&scene.layout, mask.view())?;
    Ok(Some(TrainingExample {
        scene,
        asset,
        t_gt,
        background,
    }))
}
