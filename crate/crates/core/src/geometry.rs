//! Isotropic-scale + translation transforms and the differentiable bilinear warp
//! that places a square canonical patch into a scene frame.
//!
//! Coordinates are normalized by the frame's half-height on both axes: pixel
//! `(u, v)` of a `W x H` frame sits at `((u + 0.5 - W/2) / (H/2), (v + 0.5 - H/2) / (H/2))`,
//! so `x` spans `[-W/H, W/H]` and `y` spans `[-1, 1]`. A canonical `P x P` patch uses
//! the same convention on its own canvas, spanning `[-1, 1]^2`.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement of a canonical patch in a scene: `q = s * p + t` in normalized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Transform2D {
    pub const IDENTITY: Transform2D = Transform2D {
        s: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(s: f64, tx: f64, ty: f64) -> Result<Self> {
        let t = Transform2D { s, tx, ty };
        t.validate()?;
        Ok(t)
    }

    /// Rejects non-positive or non-finite scales and non-finite translations.
    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::InvalidTransform(self.s));
        }
        if !(self.tx.is_finite() && self.ty.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite translation ({}, {})",
                self.tx, self.ty
            )));
        }
        Ok(())
    }

    pub fn from_params(params: [f64; 3]) -> Result<Self> {
        Self::new(params[0], params[1], params[2])
    }

    pub fn params(&self) -> [f64; 3] {
        [self.s, self.tx, self.ty]
    }

    /// `[[s, 0, tx], [0, s, ty]]`.
    pub fn to_matrix(&self) -> Result<[[f64; 3]; 2]> {
        self.validate()?;
        Ok([[self.s, 0.0, self.tx], [0.0, self.s, self.ty]])
    }

    /// Row-major flatten of [`to_matrix`](Self::to_matrix).
    pub fn to_flat6(&self) -> Result<[f64; 6]> {
        let m = self.to_matrix()?;
        Ok([m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]])
    }

    /// Accepts only matrices of the isotropic-scale-plus-translation family.
    pub fn from_matrix(m: [[f64; 3]; 2]) -> Result<Self> {
        if m[0][1] != 0.0 || m[1][0] != 0.0 || m[0][0] != m[1][1] {
            return Err(Error::InvalidInput(format!(
                "matrix {m:?} is not an isotropic scale plus translation"
            )));
        }
        Self::new(m[0][0], m[0][2], m[1][2])
    }

    pub fn invert(&self) -> Result<Self> {
        self.validate()?;
        let inv = 1.0 / self.s;
        Ok(Transform2D {
            s: inv,
            tx: -self.tx * inv,
            ty: -self.ty * inv,
        })
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [self.s * p[0] + self.tx, self.s * p[1] + self.ty]
    }
}

/// Pixel dimensions of a scene frame and its normalized coordinate convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedFrame {
    pub width_px: usize,
    pub height_px: usize,
}

impl NormalizedFrame {
    pub fn new(width_px: usize, height_px: usize) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::InvalidInput(format!("zero-size frame {width_px}x{height_px}")));
        }
        Ok(NormalizedFrame { width_px, height_px })
    }

    /// `W / H`; the normalized x-range is `[-aspect, aspect]`.
    pub fn aspect(&self) -> f64 {
        self.width_px as f64 / self.height_px as f64
    }

    /// Normalized coordinates of the center of pixel `(u, v)`.
    pub fn pixel_center(&self, u: usize, v: usize) -> [f64; 2] {
        self.to_normalized([u as f64 + 0.5, v as f64 + 0.5])
    }

    /// Continuous pixel coordinates (pixel `u` spans `[u, u + 1)`) to normalized.
    pub fn to_normalized(&self, px: [f64; 2]) -> [f64; 2] {
        let half_h = self.height_px as f64 / 2.0;
        [(px[0] - self.width_px as f64 / 2.0) / half_h, (px[1] - half_h) / half_h]
    }

    pub fn to_pixel(&self, q: [f64; 2]) -> [f64; 2] {
        let half_h = self.height_px as f64 / 2.0;
        [q[0] * half_h + self.width_px as f64 / 2.0, q[1] * half_h + half_h]
    }
}

/// Resolution at which a frame is sampled. Normally the frame's own pixel grid;
/// the layout branch samples the same frame on a coarser `S x S` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleGrid {
    pub frame: NormalizedFrame,
    pub width: usize,
    pub height: usize,
}

impl SampleGrid {
    pub fn native(frame: NormalizedFrame) -> Self {
        SampleGrid {
            frame,
            width: frame.width_px,
            height: frame.height_px,
        }
    }

    pub fn resampled(frame: NormalizedFrame, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!("zero-size sample grid {width}x{height}")));
        }
        Ok(SampleGrid { frame, width, height })
    }

    fn qx(&self, u: usize) -> f64 {
        ((u as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * self.frame.aspect()
    }

    fn qy(&self, v: usize) -> f64 {
        (v as f64 + 0.5) / self.height as f64 * 2.0 - 1.0
    }

    /// Inclusive-exclusive index range of grid columns whose normalized
    /// coordinate may fall in `[lo, hi]`.
    fn col_range(&self, lo: f64, hi: f64) -> (usize, usize) {
        let to_u = |q: f64| (q / self.frame.aspect() + 1.0) / 2.0 * self.width as f64 - 0.5;
        clamp_range(to_u(lo), to_u(hi), self.width)
    }

    fn row_range(&self, lo: f64, hi: f64) -> (usize, usize) {
        let to_v = |q: f64| (q + 1.0) / 2.0 * self.height as f64 - 0.5;
        clamp_range(to_v(lo), to_v(hi), self.height)
    }
}

fn clamp_range(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    if !(lo.is_finite() && hi.is_finite()) || hi < -1.0 || lo > n as f64 {
        return (0, 0);
    }
    let a = (lo.floor() - 1.0).max(0.0) as usize;
    let b = ((hi.ceil() + 2.0).max(0.0) as usize).min(n);
    (a.min(b), b)
}

/// Borrowed view of a channel-major `C x P x P` canonical patch.
#[derive(Clone, Copy)]
pub(crate) struct PatchRef<'a, T> {
    pub data: &'a [T],
    pub channels: usize,
    pub side: usize,
}

impl<T: Float> PatchRef<'_, T> {
    #[inline]
    fn at(&self, c: usize, y: isize, x: isize) -> T {
        let p = self.side as isize;
        if x < 0 || y < 0 || x >= p || y >= p {
            T::zero()
        } else {
            self.data[(c * self.side + y as usize) * self.side + x as usize]
        }
    }
}

/// Per-pixel sampling location in patch pixel units plus the chain-rule factors
/// `d(fx)/d(params)`, `d(fy)/d(params)`.
struct Footprint<T> {
    fx: T,
    fy: T,
    px: T,
    py: T,
}

struct WarpGeom<T> {
    s: T,
    tx: T,
    ty: T,
    /// `s * rho` with `rho = P / H_frame`.
    scale: T,
    half_p: T,
}

impl<T: Float> WarpGeom<T> {
    fn new(params: [T; 3], side: usize, frame: NormalizedFrame) -> Self {
        let rho = T::from(side as f64 / frame.height_px as f64).unwrap();
        WarpGeom {
            s: params[0],
            tx: params[1],
            ty: params[2],
            scale: params[0] * rho,
            half_p: T::from(side as f64 / 2.0).unwrap(),
        }
    }

    #[inline]
    fn footprint(&self, qx: T, qy: T) -> Footprint<T> {
        let px = (qx - self.tx) / self.scale;
        let py = (qy - self.ty) / self.scale;
        let half = T::from(0.5).unwrap();
        Footprint {
            fx: (px + T::one()) * self.half_p - half,
            fy: (py + T::one()) * self.half_p - half,
            px,
            py,
        }
    }

    /// Grid index ranges covering every output pixel with a nonzero sample.
    fn support(&self, grid: &SampleGrid, side: usize) -> ((usize, usize), (usize, usize)) {
        let ext = 1.0 + 2.0 / side as f64;
        let sc = self.scale.to_f64().unwrap();
        let (tx, ty) = (self.tx.to_f64().unwrap(), self.ty.to_f64().unwrap());
        (
            grid.row_range(ty - sc * ext, ty + sc * ext),
            grid.col_range(tx - sc * ext, tx + sc * ext),
        )
    }
}

fn check_warp_inputs(channels: usize, side: usize, len: usize, params: [f64; 3]) -> Result<()> {
    if side <= 1 {
        return Err(Error::InvalidInput(format!("patch side must exceed 1, got {side}")));
    }
    if len != channels * side * side {
        return Err(Error::Shape(format!(
            "patch buffer has {len} values, expected {channels}x{side}x{side}"
        )));
    }
    Transform2D::from_params(params).map(|_| ())
}

/// Raw warp kernel: writes a `C x grid.height x grid.width` buffer.
pub(crate) fn warp_forward<T: Float>(patch: PatchRef<'_, T>, params: [T; 3], grid: &SampleGrid, out: &mut [T]) {
    let plane = grid.width * grid.height;
    debug_assert_eq!(out.len(), patch.channels * plane);
    out.iter_mut().for_each(|o| *o = T::zero());
    let geom = WarpGeom::new(params, patch.side, grid.frame);
    let ((v0, v1), (u0, u1)) = geom.support(grid, patch.side);
    for v in v0..v1 {
        let qy = T::from(grid.qy(v)).unwrap();
        for u in u0..u1 {
            let fp = geom.footprint(T::from(grid.qx(u)).unwrap(), qy);
            let (x0, y0) = (fp.fx.floor(), fp.fy.floor());
            let (ax, ay) = (fp.fx - x0, fp.fy - y0);
            let (xi, yi) = (x0.to_isize().unwrap(), y0.to_isize().unwrap());
            if xi < -1 || yi < -1 || xi >= patch.side as isize || yi >= patch.side as isize {
                continue;
            }
            for c in 0..patch.channels {
                let top = patch.at(c, yi, xi) * (T::one() - ax) + patch.at(c, yi, xi + 1) * ax;
                let bot = patch.at(c, yi + 1, xi) * (T::one() - ax) + patch.at(c, yi + 1, xi + 1) * ax;
                out[c * plane + v * grid.width + u] = top * (T::one() - ay) + bot * ay;
            }
        }
    }
}

/// Vector-Jacobian product of [`warp_forward`]: accumulates into `d_patch`
/// (when given) and returns the gradient with respect to `(s, tx, ty)`.
pub(crate) fn warp_backward<T: Float>(
    patch: PatchRef<'_, T>,
    params: [T; 3],
    grid: &SampleGrid,
    upstream: &[T],
    mut d_patch: Option<&mut [T]>,
) -> [T; 3] {
    let plane = grid.width * grid.height;
    let geom = WarpGeom::new(params, patch.side, grid.frame);
    let ((v0, v1), (u0, u1)) = geom.support(grid, patch.side);
    let side = patch.side as isize;
    let mut d = [T::zero(); 3];
    // d(fx)/d(tx) = -half_p / scale, d(fx)/d(s) = -half_p * px / s.
    let dfd_t = -geom.half_p / geom.scale;
    for v in v0..v1 {
        let qy = T::from(grid.qy(v)).unwrap();
        for u in u0..u1 {
            let fp = geom.footprint(T::from(grid.qx(u)).unwrap(), qy);
            let (x0, y0) = (fp.fx.floor(), fp.fy.floor());
            let (ax, ay) = (fp.fx - x0, fp.fy - y0);
            let (xi, yi) = (x0.to_isize().unwrap(), y0.to_isize().unwrap());
            if xi < -1 || yi < -1 || xi >= side || yi >= side {
                continue;
            }
            let mut g_fx = T::zero();
            let mut g_fy = T::zero();
            for c in 0..patch.channels {
                let g = upstream[c * plane + v * grid.width + u];
                if g == T::zero() {
                    continue;
                }
                let p00 = patch.at(c, yi, xi);
                let p01 = patch.at(c, yi, xi + 1);
                let p10 = patch.at(c, yi + 1, xi);
                let p11 = patch.at(c, yi + 1, xi + 1);
                g_fx = g_fx + g * ((p01 - p00) * (T::one() - ay) + (p11 - p10) * ay);
                g_fy = g_fy + g * ((p10 - p00) * (T::one() - ax) + (p11 - p01) * ax);
                if let Some(dp) = d_patch.as_deref_mut() {
                    let base = c * patch.side * patch.side;
                    let mut scatter = |y: isize, x: isize, w: T| {
                        if x >= 0 && y >= 0 && x < side && y < side {
                            let i = base + y as usize * patch.side + x as usize;
                            dp[i] = dp[i] + g * w;
                        }
                    };
                    scatter(yi, xi, (T::one() - ax) * (T::one() - ay));
                    scatter(yi, xi + 1, ax * (T::one() - ay));
                    scatter(yi + 1, xi, (T::one() - ax) * ay);
                    scatter(yi + 1, xi + 1, ax * ay);
                }
            }
            d[1] = d[1] + g_fx * dfd_t;
            d[2] = d[2] + g_fy * dfd_t;
            d[0] = d[0] - (g_fx * fp.px + g_fy * fp.py) * geom.half_p / geom.s;
        }
    }
    d
}

fn patch_dims<T>(src: &ArrayView3<T>) -> Result<(usize, usize)> {
    let (c, h, w) = src.dim();
    if h != w {
        return Err(Error::Shape(format!("patch must be square, got {h}x{w}")));
    }
    if c == 0 {
        return Err(Error::Shape("patch has no channels".into()));
    }
    Ok((c, h))
}

/// Warps a `C x P x P` patch into the frame under `t`, sampling on `grid`.
///
/// Output pixel at normalized `q` reads the patch at `(q - t) / (s * P / H)`
/// with bilinear interpolation; samples outside the patch read zero.
pub fn warp_to_grid<T: Float>(src: ArrayView3<T>, t: &Transform2D, grid: &SampleGrid) -> Result<Array3<T>> {
    let (c, side) = patch_dims(&src)?;
    check_warp_inputs(c, side, src.len(), t.params())?;
    let data = src.as_standard_layout();
    let patch = PatchRef {
        data: data.as_slice().expect("standard layout"),
        channels: c,
        side,
    };
    let mut out = vec![T::zero(); c * grid.width * grid.height];
    warp_forward(patch, params_as(t), grid, &mut out);
    Ok(Array3::from_shape_vec((c, grid.height, grid.width), out).expect("shape"))
}

/// [`warp_to_grid`] on the frame's native pixel grid.
pub fn warp_to_scene<T: Float>(src: ArrayView3<T>, t: &Transform2D, frame: NormalizedFrame) -> Result<Array3<T>> {
    let frame = NormalizedFrame::new(frame.width_px, frame.height_px)?;
    warp_to_grid(src, t, &SampleGrid::native(frame))
}

/// Single-channel convenience wrapper around [`warp_to_scene`].
pub fn warp_mask<T: Float>(src: ArrayView2<T>, t: &Transform2D, frame: NormalizedFrame) -> Result<Array2<T>> {
    let (h, w) = src.dim();
    let src3 = src
        .into_shape_with_order((1, h, w))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out = warp_to_scene(src3, t, frame)?;
    let (_, oh, ow) = out.dim();
    Ok(out.into_shape_with_order((oh, ow)).expect("single channel"))
}

/// Gradient of `sum(upstream * warp_to_scene(src, t))` with respect to `(s, tx, ty)`.
pub fn warp_param_gradient<T: Float>(
    src: ArrayView3<T>,
    t: &Transform2D,
    frame: NormalizedFrame,
    upstream: ArrayView3<T>,
) -> Result<[T; 3]> {
    let (c, side) = patch_dims(&src)?;
    check_warp_inputs(c, side, src.len(), t.params())?;
    let grid = SampleGrid::native(NormalizedFrame::new(frame.width_px, frame.height_px)?);
    if upstream.dim() != (c, grid.height, grid.width) {
        return Err(Error::Shape(format!(
            "upstream {:?} does not match output ({c}, {}, {})",
            upstream.dim(),
            grid.height,
            grid.width
        )));
    }
    let data = src.as_standard_layout();
    let up = upstream.as_standard_layout();
    let patch = PatchRef {
        data: data.as_slice().expect("standard layout"),
        channels: c,
        side,
    };
    Ok(warp_backward(
        patch,
        params_as(t),
        &grid,
        up.as_slice().expect("standard layout"),
        None,
    ))
}

fn params_as<T: Float>(t: &Transform2D) -> [T; 3] {
    t.params().map(|v| T::from(v).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn to_matrix_examples() {
        assert_eq!(
            Transform2D::IDENTITY.to_matrix().unwrap(),
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
        );
        let t = Transform2D::new(0.5, 0.5, 0.25).unwrap();
        assert_eq!(t.to_matrix().unwrap(), [[0.5, 0.0, 0.5], [0.0, 0.5, 0.25]]);
        let t = Transform2D::new(2.0, -1.0, 0.0).unwrap();
        assert_eq!(t.to_matrix().unwrap(), [[2.0, 0.0, -1.0], [0.0, 2.0, 0.0]]);
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(matches!(
            Transform2D::new(0.0, 0.0, 0.0),
            Err(Error::InvalidTransform(_))
        ));
        let bad = Transform2D {
            s: -1.0,
            tx: 0.0,
            ty: 0.0,
        };
        assert!(bad.to_matrix().is_err());
        assert!(bad.invert().is_err());
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let t = Transform2D::new(0.3170001, -0.71, 0.123456789).unwrap();
        assert_eq!(Transform2D::from_matrix(t.to_matrix().unwrap()).unwrap(), t);
        assert!(Transform2D::from_matrix([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn invert_examples() {
        assert_eq!(Transform2D::IDENTITY.invert().unwrap(), Transform2D::IDENTITY);
        let r = Transform2D::new(0.5, 0.5, 0.25).unwrap().invert().unwrap();
        assert_eq!(r, Transform2D::new(2.0, -1.0, -0.5).unwrap());
    }

    #[test]
    fn frame_center_and_extent() {
        let f = NormalizedFrame::new(160, 96).unwrap();
        let c = f.pixel_center(80, 48);
        assert!(c[0].abs() <= 1.0 / 48.0 && c[1].abs() <= 1.0 / 48.0);
        assert_abs_diff_eq!(f.to_normalized([0.0, 0.0])[0], -160.0 / 96.0);
        assert_abs_diff_eq!(f.to_normalized([160.0, 96.0])[1], 1.0);
        let q = [0.3, -0.7];
        let back = f.to_normalized(f.to_pixel(q));
        assert_abs_diff_eq!(back[0], q[0], epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], q[1], epsilon = 1e-12);
    }

    fn ones(side: usize) -> Array3<f64> {
        Array3::from_elem((1, side, side), 1.0)
    }

    fn block_bounds(out: &Array3<f64>) -> Option<(usize, usize, usize, usize)> {
        let (_, h, w) = out.dim();
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for v in 0..h {
            for u in 0..w {
                if out[[0, v, u]] != 0.0 {
                    b = Some(match b {
                        None => (u, v, u, v),
                        Some((a, c, d, e)) => (a.min(u), c.min(v), d.max(u), e.max(v)),
                    });
                }
            }
        }
        b
    }

    #[test]
    fn identity_places_centered_block() {
        let frame = NormalizedFrame::new(128, 128).unwrap();
        let out = warp_to_scene(ones(64).view(), &Transform2D::IDENTITY, frame).unwrap();
        for v in 0..128 {
            for u in 0..128 {
                let inside = (32..96).contains(&u) && (32..96).contains(&v);
                assert_eq!(out[[0, v, u]], if inside { 1.0 } else { 0.0 }, "({u},{v})");
            }
        }
    }

    #[test]
    fn scaled_translated_block() {
        let frame = NormalizedFrame::new(128, 128).unwrap();
        let t = Transform2D::new(0.5, 0.5, 0.25).unwrap();
        let out = warp_to_scene(ones(64).view(), &t, frame).unwrap();
        assert_eq!(block_bounds(&out), Some((80, 64, 111, 95)));
        for v in 64..96 {
            for u in 80..112 {
                assert_eq!(out[[0, v, u]], 1.0);
            }
        }
    }

    #[test]
    fn zero_source_gives_zero_output() {
        let frame = NormalizedFrame::new(40, 30).unwrap();
        let src = Array3::<f32>::zeros((3, 16, 16));
        let t = Transform2D::new(1.7, 0.2, -0.1).unwrap();
        let out = warp_to_scene(src.view(), &t, frame).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let frame = NormalizedFrame::new(8, 8).unwrap();
        let src = Array3::<f64>::ones((1, 1, 1));
        assert!(matches!(
            warp_to_scene(src.view(), &Transform2D::IDENTITY, frame),
            Err(Error::InvalidInput(_))
        ));
        assert!(NormalizedFrame::new(0, 8).is_err());
        let bad = NormalizedFrame {
            width_px: 0,
            height_px: 4,
        };
        assert!(warp_to_scene(ones(4).view(), &Transform2D::IDENTITY, bad).is_err());
        let rect = Array3::<f64>::ones((1, 4, 5));
        assert!(matches!(
            warp_to_scene(rect.view(), &Transform2D::IDENTITY, frame),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn resampled_grid_matches_native_on_same_resolution() {
        let frame = NormalizedFrame::new(32, 32).unwrap();
        let src = Array3::from_shape_fn((2, 8, 8), |(c, y, x)| (c + y * 3 + x) as f64 / 30.0);
        let t = Transform2D::new(2.1, 0.13, -0.2).unwrap();
        let a = warp_to_scene(src.view(), &t, frame).unwrap();
        let b = warp_to_grid(src.view(), &t, &SampleGrid::resampled(frame, 32, 32).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
