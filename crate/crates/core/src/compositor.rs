//! Cut-and-paste composition on RGB images and on layout stacks, canonical
//! object patches, and the ground-truth placement of a cropped object.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{sobel_edges, ClassTable};
use crate::geometry::{warp_mask, warp_to_scene, NormalizedFrame, Transform2D};

/// Default canonical patch side.
pub const DEFAULT_PATCH_SIDE: usize = 64;

/// Pixel-space bounding box; covers columns `u_min..u_min + w`, rows `v_min..v_min + h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: usize,
    pub v_min: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    /// Center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.u_min as f64 + self.w as f64 / 2.0,
            self.v_min as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.u_min + self.w <= width && self.v_min + self.h <= height
    }

    /// Tight box around values `> 0.5`.
    pub fn of_mask(mask: ArrayView2<f32>) -> Option<BBox> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for ((y, x), &m) in mask.indexed_iter() {
            if m > 0.5 {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
        b.map(|(x0, y0, x1, y1)| BBox {
            u_min: x0,
            v_min: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        })
    }
}

/// Per-class masks of a scene, channel `c` belonging to `class_table` entry `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutStack {
    channels: Array3<f32>,
    class_table: ClassTable,
}

impl LayoutStack {
    pub fn new(channels: Array3<f32>, class_table: ClassTable) -> Result<Self> {
        if channels.dim().0 != class_table.len() {
            return Err(Error::Shape(format!(
                "{} layout channels for {} classes",
                channels.dim().0,
                class_table.len()
            )));
        }
        Ok(LayoutStack { channels, class_table })
    }

    pub fn channels(&self) -> &Array3<f32> {
        &self.channels
    }

    pub fn into_channels(self) -> Array3<f32> {
        self.channels
    }

    pub fn class_table(&self) -> &ClassTable {
        &self.class_table
    }

    pub fn num_classes(&self) -> usize {
        self.channels.dim().0
    }

    pub fn height(&self) -> usize {
        self.channels.dim().1
    }

    pub fn width(&self) -> usize {
        self.channels.dim().2
    }

    pub fn frame(&self) -> Result<NormalizedFrame> {
        NormalizedFrame::new(self.width(), self.height())
    }

    /// Every channel `{0,1}`-valued and at most one class per pixel.
    pub fn is_exclusive_binary(&self) -> bool {
        let binary = self.channels.iter().all(|&v| v == 0.0 || v == 1.0);
        binary && self.channels.sum_axis(Axis(0)).iter().all(|&s| s <= 1.0)
    }

    /// Hard copy: a class is set where its soft value exceeds 0.5.
    pub fn binarize(&self) -> LayoutStack {
        LayoutStack {
            channels: self.channels.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 }),
            class_table: self.class_table.clone(),
        }
    }

    /// Label image by per-pixel argmax; ties resolve to the lower channel.
    pub fn to_label_map(&self) -> Array2<u8> {
        let (c, h, w) = self.channels.dim();
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut best = 0;
            for k in 1..c {
                if self.channels[[k, y, x]] > self.channels[[best, y, x]] {
                    best = k;
                }
            }
            self.class_table.label_of(best).expect("channel in table")
        })
    }

    pub fn channel_area(&self, channel: usize) -> f32 {
        self.channels.index_axis(Axis(0), channel).sum()
    }

    /// Area-weighted resampling to `width x height` (soft values).
    pub fn resample_area(&self, width: usize, height: usize) -> Array3<f32> {
        resample_area(self.channels.view(), width, height)
    }
}

/// Box-filter resampling with exact fractional overlaps, applied per channel.
pub fn resample_area(src: ArrayView3<f32>, width: usize, height: usize) -> Array3<f32> {
    let (c, h, w) = src.dim();
    if (h, w) == (height, width) {
        return src.to_owned();
    }
    let rows = area_weights(h, height);
    let cols = area_weights(w, width);
    let mut out = Array3::<f32>::zeros((c, height, width));
    for k in 0..c {
        let plane = src.index_axis(Axis(0), k);
        let mut tmp = Array2::<f32>::zeros((h, width));
        for y in 0..h {
            for (ox, taps) in cols.iter().enumerate() {
                tmp[[y, ox]] = taps.iter().map(|&(x, wt)| plane[[y, x]] * wt).sum();
            }
        }
        for (oy, taps) in rows.iter().enumerate() {
            for ox in 0..width {
                out[[k, oy, ox]] = taps.iter().map(|&(y, wt)| tmp[[y, ox]] * wt).sum();
            }
        }
    }
    out
}

fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f32)>> {
    let r = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (a, b) = (o as f64 * r, (o + 1) as f64 * r);
            let mut taps = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < n_in {
                let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, (overlap / r) as f32));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Canonical object: patch `y_p`, silhouette `y_m`, and edge map `y_e`, all `P x P`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectAsset {
    /// `3 x P x P`, zero outside the silhouette.
    pub patch: Array3<f32>,
    pub silhouette: Array2<f32>,
    pub edge: Array2<f32>,
    pub class_id: usize,
    pub source_bbox: Option<BBox>,
}

impl ObjectAsset {
    pub fn side(&self) -> usize {
        self.silhouette.dim().0
    }

    /// `y_m * y_p`.
    pub fn masked_patch(&self) -> Array3<f32> {
        let mut out = self.patch.clone();
        for mut ch in out.axis_iter_mut(Axis(0)) {
            ch *= &self.silhouette;
        }
        out
    }

    pub fn check_invariants(&self) -> Result<()> {
        let p = self.side();
        if self.silhouette.dim() != (p, p) || self.edge.dim() != (p, p) || self.patch.dim() != (3, p, p) {
            return Err(Error::Shape("asset planes disagree on size".into()));
        }
        if !self.silhouette.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::InvalidInput("silhouette is not binary".into()));
        }
        let leak = Zip::from(&self.edge)
            .and(&self.silhouette)
            .fold(false, |acc, &e, &m| acc || (m == 0.0 && e != 0.0));
        let patch_leak = self.patch.axis_iter(Axis(0)).any(|ch| {
            Zip::from(&ch)
                .and(&self.silhouette)
                .fold(false, |a, &v, &m| a || (m == 0.0 && v != 0.0))
        });
        if leak || patch_leak {
            return Err(Error::InvalidInput("content outside silhouette".into()));
        }
        Ok(())
    }
}

/// Placement taking the default patch (centered, side `P` pixels) onto `bbox`.
///
/// `s = max(w, h) / P`, `t` is the bbox center in normalized coordinates.
pub fn gt_transform(bbox: BBox, frame: NormalizedFrame, side: usize) -> Result<Transform2D> {
    if !bbox.fits(frame.width_px, frame.height_px) {
        return Err(Error::InvalidBbox(format!(
            "{bbox:?} outside {}x{} frame",
            frame.width_px, frame.height_px
        )));
    }
    if side == 0 {
        return Err(Error::InvalidInput("patch side must be positive".into()));
    }
    let (uc, vc) = bbox.center();
    let q = frame.to_normalized([uc, vc]);
    Transform2D::new(bbox.w.max(bbox.h) as f64 / side as f64, q[0], q[1])
}

/// Crops the instance under `bbox`, rescales it (aspect preserved) so its longer
/// side spans the `side x side` canvas, and derives the silhouette and edge map.
///
/// Colors are mask-weighted bilinear samples, so background pixels next to the
/// object never bleed into the patch.
pub fn canonicalize_patch(
    image: ArrayView3<f32>,
    instance_mask: ArrayView2<bool>,
    bbox: BBox,
    class_id: usize,
    side: usize,
) -> Result<ObjectAsset> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected RGB image, got {c} channels")));
    }
    if instance_mask.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {h}x{w}",
            instance_mask.dim()
        )));
    }
    if side <= 1 {
        return Err(Error::InvalidInput(format!("patch side must exceed 1, got {side}")));
    }
    if !bbox.fits(w, h) {
        return Err(Error::InvalidBbox(format!("{bbox:?} outside {w}x{h} image")));
    }
    let inside = instance_mask.slice(ndarray::s![
        bbox.v_min..bbox.v_min + bbox.h,
        bbox.u_min..bbox.u_min + bbox.w
    ]);
    if !inside.iter().any(|&m| m) {
        return Err(Error::EmptyObject);
    }
    let frame = NormalizedFrame::new(w, h)?;
    let t = gt_transform(bbox, frame, side)?;
    let rho = side as f64 / h as f64;
    let half = side as f64 / 2.0;
    let mask_at = |y: isize, x: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else if instance_mask[[y as usize, x as usize]] {
            1.0
        } else {
            0.0
        }
    };

    let mut patch = Array3::<f32>::zeros((3, side, side));
    let mut silhouette = Array2::<f32>::zeros((side, side));
    for i in 0..side {
        for j in 0..side {
            let p = [(j as f64 + 0.5 - half) / half, (i as f64 + 0.5 - half) / half];
            let q = [t.s * rho * p[0] + t.tx, t.s * rho * p[1] + t.ty];
            let px = frame.to_pixel(q);
            let (fx, fy) = (px[0] - 0.5, px[1] - 0.5);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            let (xi, yi) = (x0 as isize, y0 as isize);
            let taps = [
                (yi, xi, (1.0 - ax) * (1.0 - ay)),
                (yi, xi + 1, ax * (1.0 - ay)),
                (yi + 1, xi, (1.0 - ax) * ay),
                (yi + 1, xi + 1, ax * ay),
            ];
            let mut den = 0.0;
            let mut num = [0.0f64; 3];
            for &(y, x, wt) in &taps {
                let m = mask_at(y, x) * wt;
                if m > 0.0 {
                    den += m;
                    for k in 0..3 {
                        num[k] += m * image[[k, y as usize, x as usize]] as f64;
                    }
                }
            }
            if den >= 0.5 {
                silhouette[[i, j]] = 1.0;
                for k in 0..3 {
                    patch[[k, i, j]] = (num[k] / den) as f32;
                }
            }
        }
    }
    if !silhouette.iter().any(|&v| v > 0.0) {
        return Err(Error::EmptyObject);
    }
    let edge = sobel_edges(patch.view(), silhouette.view());
    Ok(ObjectAsset {
        patch,
        silhouette,
        edge,
        class_id,
        source_bbox: Some(bbox),
    })
}

/// `T(y_m * y_p) + (1 - T(y_m)) * x` for an RGB scene `x`.
pub fn compose_image(scene: ArrayView3<f32>, asset: &ObjectAsset, t: &Transform2D) -> Result<Array3<f32>> {
    let (c, h, w) = scene.dim();
    if c != asset.patch.dim().0 {
        return Err(Error::Shape(format!(
            "scene has {c} channels, patch has {}",
            asset.patch.dim().0
        )));
    }
    let frame = NormalizedFrame::new(w, h)?;
    let pasted = warp_to_scene(asset.masked_patch().view(), t, frame)?;
    let m = warp_mask(asset.silhouette.view(), t, frame)?;
    let mut out = pasted;
    for (mut o, x) in out.axis_iter_mut(Axis(0)).zip(scene.axis_iter(Axis(0))) {
        Zip::from(&mut o).and(&x).and(&m).for_each(|o, &x, &m| {
            *o += (1.0 - m) * x;
        });
    }
    Ok(out)
}

/// Layout counterpart of [`compose_image`]: the warped silhouette `M` claims its
/// pixels for the asset's class and is removed from every other channel.
/// Returns soft values; use [`LayoutStack::binarize`] for storage.
pub fn compose_layout(layout: &LayoutStack, asset: &ObjectAsset, t: &Transform2D) -> Result<LayoutStack> {
    if asset.class_id >= layout.num_classes() {
        return Err(Error::ClassTable(format!(
            "asset class {} not in a {}-class table",
            asset.class_id,
            layout.num_classes()
        )));
    }
    let m = warp_mask(asset.silhouette.view(), t, layout.frame()?)?;
    let mut out = layout.channels().clone();
    for (k, mut ch) in out.axis_iter_mut(Axis(0)).enumerate() {
        if k == asset.class_id {
            Zip::from(&mut ch).and(&m).for_each(|v, &m| *v = (1.0 - m) * *v + m);
        } else {
            Zip::from(&mut ch).and(&m).for_each(|v, &m| *v *= 1.0 - m);
        }
    }
    LayoutStack::new(out, layout.class_table().clone())
}

/// Removes one instance from `layout`: each masked pixel takes the class of the
/// nearest unmasked non-object pixel below it in its column, else above it,
/// else no class.
pub fn erase_instance(layout: &LayoutStack, mask: ArrayView2<bool>) -> Result<LayoutStack> {
    let (c, h, w) = layout.channels().dim();
    if mask.dim() != (h, w) {
        return Err(Error::Shape(format!("mask {:?} vs layout {h}x{w}", mask.dim())));
    }
    let obj = layout.class_table().object_channel();
    let src = layout.channels();
    let usable = |y: usize, x: usize| !mask[[y, x]] && obj.is_none_or(|o| src[[o, y, x]] < 0.5);
    let mut out = src.clone();
    for x in 0..w {
        for y in (0..h).filter(|&y| mask[[y, x]]) {
            let donor = (y + 1..h)
                .find(|&v| usable(v, x))
                .or_else(|| (0..y).rev().find(|&v| usable(v, x)));
            for k in 0..c {
                out[[k, y, x]] = donor.map_or(0.0, |v| src[[k, v, x]]);
            }
        }
    }
    LayoutStack::new(out, layout.class_table().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::layout_to_channels;

    fn frame128() -> NormalizedFrame {
        NormalizedFrame::new(128, 128).unwrap()
    }

    #[test]
    fn gt_transform_examples() {
        let bbox = BBox {
            u_min: 80,
            v_min: 72,
            w: 32,
            h: 16,
        };
        let t = gt_transform(bbox, frame128(), 64).unwrap();
        assert_eq!(t, Transform2D::new(0.5, 0.5, 0.25).unwrap());
        let centered = BBox {
            u_min: 32,
            v_min: 32,
            w: 64,
            h: 64,
        };
        assert_eq!(gt_transform(centered, frame128(), 64).unwrap(), Transform2D::IDENTITY);
    }

    #[test]
    fn gt_transform_rejects_bad_boxes() {
        let zero = BBox {
            u_min: 3,
            v_min: 3,
            w: 0,
            h: 5,
        };
        assert!(matches!(gt_transform(zero, frame128(), 64), Err(Error::InvalidBbox(_))));
        let outside = BBox {
            u_min: 120,
            v_min: 3,
            w: 10,
            h: 5,
        };
        assert!(matches!(
            gt_transform(outside, frame128(), 64),
            Err(Error::InvalidBbox(_))
        ));
    }

    fn rect_scene(bbox: BBox) -> (Array3<f32>, Array2<bool>) {
        let mask = Array2::from_shape_fn((128, 128), |(y, x)| {
            x >= bbox.u_min && x < bbox.u_min + bbox.w && y >= bbox.v_min && y < bbox.v_min + bbox.h
        });
        let img = Array3::from_shape_fn((3, 128, 128), |(c, y, x)| ((c * 31 + y * 7 + x * 3) % 50) as f32 / 50.0);
        (img, mask)
    }

    #[test]
    fn canonical_patch_preserves_aspect() {
        let bbox = BBox {
            u_min: 40,
            v_min: 50,
            w: 32,
            h: 16,
        };
        let (img, mask) = rect_scene(bbox);
        let a = canonicalize_patch(img.view(), mask.view(), bbox, 4, 64).unwrap();
        a.check_invariants().unwrap();
        let b = BBox::of_mask(a.silhouette.view()).unwrap();
        assert_eq!(
            b,
            BBox {
                u_min: 0,
                v_min: 16,
                w: 64,
                h: 32
            }
        );
        assert_eq!(a.source_bbox, Some(bbox));
    }

    #[test]
    fn full_size_crop_is_identity() {
        let bbox = BBox {
            u_min: 20,
            v_min: 30,
            w: 64,
            h: 64,
        };
        let (img, mask) = rect_scene(bbox);
        let a = canonicalize_patch(img.view(), mask.view(), bbox, 0, 64).unwrap();
        let mut err = 0.0;
        for k in 0..3 {
            for i in 0..64 {
                for j in 0..64 {
                    err += (a.patch[[k, i, j]] - img[[k, 30 + i, 20 + j]]).abs();
                }
            }
        }
        assert!(err / (3.0 * 64.0 * 64.0) < 2.0 / 255.0);
    }

    #[test]
    fn empty_mask_and_bad_bbox_are_errors() {
        let bbox = BBox {
            u_min: 10,
            v_min: 10,
            w: 20,
            h: 20,
        };
        let img = Array3::zeros((3, 128, 128));
        let mask = Array2::from_elem((128, 128), false);
        assert!(matches!(
            canonicalize_patch(img.view(), mask.view(), bbox, 0, 64),
            Err(Error::EmptyObject)
        ));
        let out = BBox {
            u_min: 120,
            v_min: 10,
            w: 20,
            h: 20,
        };
        assert!(matches!(
            canonicalize_patch(img.view(), mask.view(), out, 0, 64),
            Err(Error::InvalidBbox(_))
        ));
    }

    fn asset_from(sil: Array2<f32>, color: [f32; 3], class_id: usize) -> ObjectAsset {
        let p = sil.dim().0;
        let patch = Array3::from_shape_fn((3, p, p), |(c, y, x)| color[c] * sil[[y, x]]);
        let edge = sobel_edges(patch.view(), sil.view());
        ObjectAsset {
            patch,
            silhouette: sil,
            edge,
            class_id,
            source_bbox: None,
        }
    }

    #[test]
    fn zero_silhouette_leaves_scene_untouched() {
        let scene = Array3::from_shape_fn((3, 40, 30), |(c, y, x)| ((c + y + x) % 7) as f32 / 7.0);
        let a = asset_from(Array2::zeros((8, 8)), [1.0, 0.0, 0.0], 4);
        let t = Transform2D::new(2.0, 0.1, 0.2).unwrap();
        assert_eq!(compose_image(scene.view(), &a, &t).unwrap(), scene);
        let labels = Array2::from_shape_fn((40, 30), |(y, _)| if y < 20 { 0u8 } else { 2 });
        let layout = layout_to_channels(labels.view(), &ClassTable::toy_road()).unwrap();
        assert_eq!(compose_layout(&layout, &a, &t).unwrap(), layout);
    }

    #[test]
    fn unit_mask_block_shows_the_patch() {
        let scene = Array3::from_elem((3, 128, 128), 0.25f32);
        let a = asset_from(Array2::ones((64, 64)), [0.9, 0.5, 0.1], 4);
        let out = compose_image(scene.view(), &a, &Transform2D::IDENTITY).unwrap();
        for v in 0..128 {
            for u in 0..128 {
                let inside = (32..96).contains(&u) && (32..96).contains(&v);
                for (k, c) in [0.9f32, 0.5, 0.1].iter().enumerate() {
                    assert_eq!(out[[k, v, u]], if inside { *c } else { 0.25 });
                }
            }
        }
    }

    #[test]
    fn hand_computed_four_by_four() {
        // 2x2 patch, 4x4 scene. s = 1 with rho = 2/4 maps each patch pixel onto
        // one scene pixel; tx = 0.5 shifts by one pixel (half-height = 2 px).
        let scene = Array3::from_shape_fn((3, 4, 4), |(c, y, x)| (c * 16 + y * 4 + x) as f32 / 64.0);
        let mut sil = Array2::ones((2, 2));
        sil[[1, 1]] = 0.0;
        let patch = Array3::from_shape_fn((3, 2, 2), |(c, y, x)| {
            if (y, x) == (1, 1) {
                0.0
            } else {
                [0.8, 0.6, 0.4][c] + 0.05 * (y * 2 + x) as f32
            }
        });
        let a = ObjectAsset {
            edge: sobel_edges(patch.view(), sil.view()),
            patch: patch.clone(),
            silhouette: sil,
            class_id: 0,
            source_bbox: None,
        };
        let t = Transform2D::new(1.0, 0.5, 0.0).unwrap();
        let out = compose_image(scene.view(), &a, &t).unwrap();
        // Patch pixel (i, j) lands on scene pixel (1 + i, 2 + j).
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let expected = match (y, x) {
                        (1, 2) => patch[[c, 0, 0]],
                        (1, 3) => patch[[c, 0, 1]],
                        (2, 2) => patch[[c, 1, 0]],
                        _ => scene[[c, y, x]],
                    };
                    assert_eq!(out[[c, y, x]], expected, "c={c} y={y} x={x}");
                }
            }
        }
    }

    #[test]
    fn layout_composition_claims_pixels_for_the_object_class() {
        let labels = Array2::from_shape_fn((128, 128), |(y, _)| if y < 64 { 0u8 } else { 2 });
        let layout = layout_to_channels(labels.view(), &ClassTable::toy_road()).unwrap();
        let a = asset_from(Array2::ones((64, 64)), [1.0, 1.0, 1.0], 4);
        let t = Transform2D::new(0.5, 0.0, 0.5).unwrap();
        let soft = compose_layout(&layout, &a, &t).unwrap();
        let hard = soft.binarize();
        assert!(hard.is_exclusive_binary());
        assert_eq!(hard.channel_area(4), 32.0 * 32.0);
        assert_eq!(hard.channel_area(2), 64.0 * 128.0 - 32.0 * 32.0);
        assert_eq!(hard.channel_area(0), layout.channel_area(0));
    }

    #[test]
    fn erased_instance_takes_the_class_beneath() {
        // Rows 0..4 sky, 4..8 road; a car at rows 2..6 over a second car at row 6.
        let (sky, road, car) = (0u8, 2u8, 4u8);
        let mut labels = Array2::from_shape_fn((8, 4), |(y, _)| if y < 4 { sky } else { road });
        labels.slice_mut(ndarray::s![2..7, 1..3]).fill(car);
        let layout = layout_to_channels(labels.view(), &ClassTable::toy_road()).unwrap();
        let mask = Array2::from_shape_fn((8, 4), |(y, x)| (2..6).contains(&y) && (1..3).contains(&x));
        let out = erase_instance(&layout, mask.view()).unwrap();
        assert!(out.is_exclusive_binary());
        let l = out.to_label_map();
        assert!((2..6).all(|y| l[[y, 1]] == road && l[[y, 2]] == road));
        assert_eq!(l[[6, 1]], car);
        assert_eq!(out.channel_area(4), 2.0);
        let none = erase_instance(&layout, Array2::from_elem((8, 4), false).view()).unwrap();
        assert_eq!(none, layout);
        assert!(erase_instance(&layout, Array2::from_elem((4, 4), false).view()).is_err());
    }

    #[test]
    fn unknown_asset_class_is_an_error() {
        let labels = Array2::zeros((8, 8));
        let layout = layout_to_channels(labels.view(), &ClassTable::toy_road()).unwrap();
        let a = asset_from(Array2::ones((4, 4)), [1.0, 1.0, 1.0], 9);
        assert!(matches!(
            compose_layout(&layout, &a, &Transform2D::IDENTITY),
            Err(Error::ClassTable(_))
        ));
    }

    #[test]
    fn area_resampling_preserves_mass() {
        let src = Array3::from_shape_fn((2, 12, 9), |(c, y, x)| ((c + 2 * y + x) % 3) as f32);
        let out = resample_area(src.view(), 4, 5);
        for c in 0..2 {
            let a: f32 = src.index_axis(Axis(0), c).sum() / (12.0 * 9.0);
            let b: f32 = out.index_axis(Axis(0), c).sum() / 20.0;
            assert!((a - b).abs() < 1e-5);
        }
        let even = resample_area(src.view(), 9, 12);
        assert_eq!(even, src);
    }
}
