//! Structure features: Sobel edge maps of object patches, one-hot layout
//! channels from label maps, and selection of an intact object instance.

use std::collections::{BTreeMap, HashSet};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compositor::{BBox, LayoutStack};
use crate::error::{Error, Result};

/// One semantic class: its channel is its position in the table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    /// Value used for this class in label images.
    pub label: u8,
    /// Palette color for indexed layout files.
    pub color: [u8; 3],
    #[serde(default)]
    pub is_object: bool,
    #[serde(default)]
    pub is_support: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct RawClassTable {
    classes: Vec<ClassEntry>,
    #[serde(default)]
    void_channel: Option<usize>,
}

/// Ordered class list; channel indices are dense `0..C`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawClassTable", into = "RawClassTable")]
pub struct ClassTable {
    classes: Vec<ClassEntry>,
    void_channel: Option<usize>,
    label_to_channel: Vec<Option<usize>>,
}

impl TryFrom<RawClassTable> for ClassTable {
    type Error = Error;

    fn try_from(raw: RawClassTable) -> Result<Self> {
        ClassTable::new(raw.classes, raw.void_channel)
    }
}

impl From<ClassTable> for RawClassTable {
    fn from(t: ClassTable) -> Self {
        RawClassTable {
            classes: t.classes,
            void_channel: t.void_channel,
        }
    }
}

impl ClassTable {
    pub fn new(classes: Vec<ClassEntry>, void_channel: Option<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::ClassTable("no classes".into()));
        }
        let mut names = HashSet::new();
        let mut label_to_channel = vec![None; 256];
        for (i, c) in classes.iter().enumerate() {
            if !names.insert(c.name.as_str()) {
                return Err(Error::ClassTable(format!("duplicate class name {:?}", c.name)));
            }
            if label_to_channel[c.label as usize].replace(i).is_some() {
                return Err(Error::ClassTable(format!("duplicate label {}", c.label)));
            }
        }
        if let Some(v) = void_channel {
            if v >= classes.len() {
                return Err(Error::ClassTable(format!("void channel {v} out of range")));
            }
        }
        Ok(ClassTable {
            classes,
            void_channel,
            label_to_channel,
        })
    }

    /// `sky, building, road, sidewalk, car` with road as the support class and
    /// car as the object class.
    pub fn toy_road() -> Self {
        let entry = |name: &str, label, color, is_object, is_support| ClassEntry {
            name: name.to_string(),
            label,
            color,
            is_object,
            is_support,
        };
        ClassTable::new(
            vec![
                entry("sky", 0, [70, 130, 180], false, false),
                entry("building", 1, [70, 70, 70], false, false),
                entry("road", 2, [128, 64, 128], false, true),
                entry("sidewalk", 3, [244, 35, 232], false, false),
                entry("car", 4, [0, 0, 142], true, false),
            ],
            None,
        )
        .expect("static table is valid")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn void_channel(&self) -> Option<usize> {
        self.void_channel
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn channel_for_label(&self, label: u8) -> Option<usize> {
        self.label_to_channel[label as usize]
    }

    pub fn label_of(&self, channel: usize) -> Option<u8> {
        self.classes.get(channel).map(|c| c.label)
    }

    /// First class flagged as an object class.
    pub fn object_channel(&self) -> Option<usize> {
        self.classes.iter().position(|c| c.is_object)
    }

    pub fn support_channels(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.classes[i].is_support).collect()
    }
}

/// Normalized Sobel gradient magnitude of a pre-masked `3 x P x P` patch.
///
/// Grayscale is the channel mean; borders replicate. The magnitude is divided
/// by its maximum over the silhouette and zeroed outside it.
pub fn sobel_edges(patch: ArrayView3<f32>, silhouette: ArrayView2<f32>) -> Array2<f32> {
    let (c, h, w) = patch.dim();
    assert_eq!(silhouette.dim(), (h, w), "silhouette must match patch");
    let gray = Array2::from_shape_fn((h, w), |(y, x)| {
        (0..c).map(|k| patch[[k, y, x]]).sum::<f32>() / c as f32
    });
    let at = |y: isize, x: isize| {
        let yc = y.clamp(0, h as isize - 1) as usize;
        let xc = x.clamp(0, w as isize - 1) as usize;
        gray[[yc, xc]]
    };
    let mut mag = Array2::<f32>::zeros((h, w));
    let mut max = 0.0f32;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if silhouette[[y as usize, x as usize]] <= 0.5 {
                continue;
            }
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let m = (gx * gx + gy * gy).sqrt();
            mag[[y as usize, x as usize]] = m;
            max = max.max(m);
        }
    }
    if max > 0.0 {
        mag.mapv_inplace(|m| m / max);
    }
    mag
}

/// One-hot layout channels from a label image.
pub fn layout_to_channels(label_map: ArrayView2<u8>, table: &ClassTable) -> Result<LayoutStack> {
    let (h, w) = label_map.dim();
    let mut channels = Array3::<f32>::zeros((table.len(), h, w));
    for ((y, x), &label) in label_map.indexed_iter() {
        let ch = table
            .channel_for_label(label)
            .or(table.void_channel())
            .ok_or(Error::Label(label as u32))?;
        channels[[ch, y, x]] = 1.0;
    }
    LayoutStack::new(channels, table.clone())
}

/// Filters that stand in for "distinguishable and intact".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRules {
    /// Label value (not channel) of the class to select.
    pub class_label: u8,
    pub min_area_px: usize,
    pub min_aspect: f64,
    pub max_aspect: f64,
}

impl SelectionRules {
    pub fn for_label(class_label: u8) -> Self {
        SelectionRules {
            class_label,
            min_area_px: 100,
            min_aspect: 0.2,
            max_aspect: 5.0,
        }
    }
}

#[derive(Default)]
struct InstanceStats {
    area: usize,
    class_votes: BTreeMap<u8, usize>,
    touches_border: bool,
    bounds: Option<(usize, usize, usize, usize)>,
}

/// Picks one intact instance of the requested class, or `None`.
///
/// Candidates touch no image border, cover at least `min_area_px` pixels and
/// have a bounding-box aspect `w / h` inside the allowed range. The pick is
/// uniform over candidates (ordered by instance id) under `seed`.
pub fn select_instance(
    instance_map: ArrayView2<u16>,
    label_map: ArrayView2<u8>,
    rules: &SelectionRules,
    seed: u64,
) -> Option<(Array2<bool>, BBox)> {
    let (h, w) = instance_map.dim();
    if label_map.dim() != (h, w) || h == 0 || w == 0 {
        return None;
    }
    let mut stats: BTreeMap<u16, InstanceStats> = BTreeMap::new();
    for ((y, x), &id) in instance_map.indexed_iter() {
        if id == 0 {
            continue;
        }
        let s = stats.entry(id).or_default();
        s.area += 1;
        *s.class_votes.entry(label_map[[y, x]]).or_default() += 1;
        if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
            s.touches_border = true;
        }
        s.bounds = Some(match s.bounds {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    let candidates: Vec<(u16, BBox)> = stats
        .into_iter()
        .filter_map(|(id, s)| {
            let majority = s.class_votes.iter().max_by_key(|(_, &n)| n).map(|(&l, _)| l)?;
            let (x0, y0, x1, y1) = s.bounds?;
            let bbox = BBox {
                u_min: x0,
                v_min: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            };
            let aspect = bbox.w as f64 / bbox.h as f64;
            let keep = majority == rules.class_label
                && !s.touches_border
                && s.area >= rules.min_area_px
                && aspect >= rules.min_aspect
                && aspect <= rules.max_aspect;
            keep.then_some((id, bbox))
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (id, bbox) = candidates[rng.gen_range(0..candidates.len())];
    Some((instance_map.mapv(|v| v == id), bbox))
}
