//! Procedural road scenes with exact layout and instance maps.
//!
//! A perspective road narrows to a vanishing point on the horizon. Every car
//! obeys the scale law `height = a + b * (baseline - horizon)`. Exactly one car
//! (instance id 1) is interior and unoccluded; any extra cars are cut by the
//! left or right image border.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SceneMeta, SceneSample};
use crate::error::{Error, Result};
use crate::features::{layout_to_channels, ClassTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub width: usize,
    pub height: usize,
    /// Horizon row range as fractions of the height.
    pub horizon_frac: (f64, f64),
    /// Car height intercept `a` in pixels.
    pub car_a: f64,
    /// Car height slope `b` per row below the horizon.
    pub car_b: f64,
    /// Car width over height.
    pub car_aspect: (f64, f64),
    /// Road half-width per row below the horizon.
    pub road_slope: (f64, f64),
    /// Sidewalk width per row below the horizon.
    pub sidewalk_slope: f64,
    /// Probabilities of 0, 1, 2, 3 extra (border-cut) cars.
    pub extra_car_weights: Vec<f64>,
    /// Minimum pixel area of the primary car.
    pub min_primary_area: f64,
    /// Amplitude of uniform per-pixel noise on the background.
    pub noise: f64,
    pub class_table: ClassTable,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            width: 128,
            height: 128,
            horizon_frac: (0.34, 0.42),
            car_a: 6.0,
            car_b: 0.18,
            car_aspect: (1.55, 1.65),
            road_slope: (1.3, 1.7),
            sidewalk_slope: 0.35,
            extra_car_weights: vec![0.5, 0.25, 0.15, 0.1],
            min_primary_area: 120.0,
            noise: 0.02,
            class_table: ClassTable::toy_road(),
        }
    }
}

struct Classes {
    sky: u8,
    building: u8,
    road: u8,
    sidewalk: u8,
    car: u8,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.class_table;
        if t.object_channel().is_none() {
            return Err(Error::Config("class table has no object class".into()));
        }
        self.classes()?;
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config(format!(
                "toy scenes need at least 32x32 pixels, got {}x{}",
                self.width, self.height
            )));
        }
        let (h0, h1) = self.horizon_frac;
        if !(0.2 < h0 && h0 <= h1 && h1 < 0.5) {
            return Err(Error::Config(format!(
                "horizon_frac {:?} must lie in (0.2, 0.5)",
                self.horizon_frac
            )));
        }
        let ordered = |r: (f64, f64)| r.0 > 0.0 && r.0 <= r.1 && r.1.is_finite();
        if !ordered(self.car_aspect) || !ordered(self.road_slope) {
            return Err(Error::Config(
                "car_aspect and road_slope must be positive ranges".into(),
            ));
        }
        if !(self.car_a > 0.0 && self.car_b >= 0.0 && self.sidewalk_slope >= 0.0 && self.noise >= 0.0) {
            return Err(Error::Config(
                "car_a must be positive; car_b, sidewalk_slope, noise non-negative".into(),
            ));
        }
        if self.extra_car_weights.is_empty()
            || self.extra_car_weights.iter().any(|&w| w.is_nan() || w < 0.0)
            || self.extra_car_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "extra_car_weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    fn classes(&self) -> Result<Classes> {
        let t = &self.class_table;
        let label = |name: &str| {
            t.index_of(name)
                .and_then(|c| t.label_of(c))
                .ok_or_else(|| Error::Config(format!("toy generator needs a {name:?} class")))
        };
        let car = t
            .object_channel()
            .and_then(|c| t.label_of(c))
            .ok_or_else(|| Error::Config("class table has no object class".into()))?;
        Ok(Classes {
            sky: label("sky")?,
            building: label("building")?,
            road: label("road")?,
            sidewalk: label("sidewalk")?,
            car,
        })
    }

    /// Car pixel height for a baseline at row `v` (continuous, bottom edge).
    pub fn car_height(&self, horizon: f64, v: f64) -> f64 {
        self.car_a + self.car_b * (v - horizon)
    }
}

/// Continuous car footprint: body plus a narrower cabin on top.
#[derive(Clone, Copy, Debug)]
struct Car {
    cx: f64,
    bottom: f64,
    width: f64,
    height: f64,
    color: [f32; 3],
}

impl Car {
    fn left(&self) -> f64 {
        self.cx - self.width / 2.0
    }

    fn right(&self) -> f64 {
        self.cx + self.width / 2.0
    }

    fn top(&self) -> f64 {
        self.bottom - self.height
    }

    /// `None` outside the car, otherwise the shading factor at a pixel center.
    fn shade(&self, x: f64, y: f64) -> Option<f32> {
        let body_top = self.bottom - 0.6 * self.height;
        let r = 0.22 * (self.bottom - body_top);
        if y >= body_top && y < self.bottom && x >= self.left() && x < self.right() {
            // Round the four body corners.
            let cx = x.clamp(self.left() + r, self.right() - r);
            let cy = y.clamp(body_top + r, self.bottom - r);
            if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                let wheel = y > self.bottom - 0.25 * self.height
                    && ((x - self.left()) / self.width - 0.22)
                        .abs()
                        .min(((x - self.left()) / self.width - 0.78).abs())
                        < 0.1;
                return Some(if wheel { 0.25 } else { 1.0 });
            }
            return None;
        }
        let cab_half = 0.3 * self.width;
        let lean = (body_top - y) / (0.4 * self.height) * 0.08 * self.width;
        if y >= self.top() && y < body_top && (x - self.cx).abs() < cab_half - lean {
            let window =
                y > self.top() + 0.12 * self.height && (x - self.cx).abs() < cab_half - lean - 0.08 * self.width;
            return Some(if window { 0.45 } else { 0.85 });
        }
        None
    }

    /// Shading averaged over the in-car part of a pixel's footprint, so interior
    /// edges are band-limited like a camera's while the silhouette stays hard.
    fn pixel_shade(&self, x: usize, y: usize) -> f32 {
        const SUB: usize = 4;
        let (mut sum, mut n) = (0.0f32, 0);
        for i in 0..SUB {
            for j in 0..SUB {
                let sx = x as f64 + (j as f64 + 0.5) / SUB as f64;
                let sy = y as f64 + (i as f64 + 0.5) / SUB as f64;
                if let Some(f) = self.shade(sx, sy) {
                    sum += f;
                    n += 1;
                }
            }
        }
        // Slivers can miss every subsample; the center sample is inside by contract.
        if n == 0 {
            self.shade(x as f64 + 0.5, y as f64 + 0.5).unwrap_or(1.0)
        } else {
            sum / n as f32
        }
    }

    /// Integer pixel rectangle that can contain car pixels.
    fn pixel_bounds(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let x0 = (self.left().floor().max(0.0)) as usize;
        let x1 = (self.right().ceil().max(0.0) as usize).min(w);
        let y0 = (self.top().floor().max(0.0)) as usize;
        let y1 = (self.bottom.ceil().max(0.0) as usize).min(h);
        (x0, x1, y0, y1)
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Deterministic scene for `(seed, index)`; each index draws from its own RNG stream.
pub fn generate_toy_scene(seed: u64, index: u64, cfg: &ToyConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let classes = cfg.classes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (w, h) = (cfg.width, cfg.height);
    let (wf, hf) = (w as f64, h as f64);

    let horizon = hf * rng.gen_range(cfg.horizon_frac.0..=cfg.horizon_frac.1);
    let vanish_x = wf * rng.gen_range(0.4..=0.6);
    let road_k = rng.gen_range(cfg.road_slope.0..=cfg.road_slope.1);
    let side_k = cfg.sidewalk_slope;

    // Skyline: building blocks of random width and height above the horizon.
    let mut skyline = vec![0.0f64; w];
    let mut block_shade = vec![0.0f32; w];
    let mut u = 0;
    while u < w {
        let bw = rng.gen_range(8..=24).min(w - u);
        let top = horizon - hf * rng.gen_range(0.05..=0.22);
        let shade = rng.gen_range(0.35..=0.6);
        for i in u..u + bw {
            skyline[i] = top;
            block_shade[i] = shade;
        }
        u += bw;
    }

    let mut labels = Array2::<u8>::zeros((h, w));
    let mut image = Array3::<f32>::zeros((3, h, w));
    let sky_top = hsv(rng.gen_range(0.55..=0.62), 0.45, 0.95);
    let road_gray = rng.gen_range(0.25..=0.38) as f32;
    let walk_gray = rng.gen_range(0.6..=0.72) as f32;
    for y in 0..h {
        let yc = y as f64 + 0.5;
        for x in 0..w {
            let xc = x as f64 + 0.5;
            let d = yc - horizon;
            let (label, rgb) = if d > 0.0 {
                let off = (xc - vanish_x).abs();
                if off <= road_k * d {
                    // Dashed center line.
                    let dash = off < 0.02 * d + 0.3 && ((d.ln() * 6.0).floor() as i64) % 2 == 0;
                    let g = if dash { 0.85 } else { road_gray };
                    (classes.road, [g, g, g])
                } else if off <= (road_k + side_k) * d {
                    (classes.sidewalk, [walk_gray, walk_gray * 0.97, walk_gray * 0.93])
                } else {
                    let s = block_shade[x] * 0.9;
                    (classes.building, [s, s * 0.95, s * 0.9])
                }
            } else if yc >= skyline[x] {
                let s = block_shade[x];
                let window = (x % 6 < 3) && (((yc - skyline[x]) as usize) % 6 < 3);
                let s = if window { s * 0.7 } else { s };
                (classes.building, [s, s * 0.96, s * 0.92])
            } else {
                let f = (yc / horizon) as f32;
                (
                    classes.sky,
                    [sky_top[0] + 0.1 * f, sky_top[1] + 0.08 * f, sky_top[2] + 0.02 * f],
                )
            };
            labels[[y, x]] = label;
            for k in 0..3 {
                image[[k, y, x]] = rgb[k];
            }
        }
    }
    if cfg.noise > 0.0 {
        for v in image.iter_mut() {
            *v = (*v + rng.gen_range(-cfg.noise..=cfg.noise) as f32).clamp(0.0, 1.0);
        }
    }

    let car_color = |rng: &mut ChaCha8Rng| hsv(rng.gen::<f64>(), rng.gen_range(0.5..=0.9), rng.gen_range(0.55..=0.95));

    // Primary car: interior, baseline fully on the road, large enough to select.
    let min_d = {
        // Area of the car shape is about 0.85 * width * height.
        let mut d = 1.0;
        while 0.85 * cfg.car_aspect.0 * cfg.car_height(0.0, d).powi(2) < cfg.min_primary_area {
            d += 1.0;
        }
        d
    };
    let mut primary = None;
    for _ in 0..200 {
        let bottom = rng.gen_range((horizon + min_d)..=(hf - 2.0)).floor();
        let height = cfg.car_height(horizon, bottom);
        let width = height * rng.gen_range(cfg.car_aspect.0..=cfg.car_aspect.1);
        let d = bottom - 0.5 - horizon;
        let max_off = road_k * d - width / 2.0;
        if max_off <= 0.0 {
            continue;
        }
        let cx = vanish_x + rng.gen_range(-max_off..=max_off);
        let car = Car {
            cx,
            bottom,
            width,
            height,
            color: car_color(&mut rng),
        };
        if car.left() >= 1.0 && car.right() <= wf - 1.0 && car.top() >= 1.0 {
            primary = Some(car);
            break;
        }
    }
    let primary = primary.ok_or_else(|| Error::Config("scene geometry leaves no room for a car".into()))?;

    // Extra cars straddle the left or right border on rows where the road
    // reaches that border.
    let total: f64 = cfg.extra_car_weights.iter().sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut n_extra = 0;
    for (i, &wt) in cfg.extra_car_weights.iter().enumerate() {
        if pick < wt {
            n_extra = i;
            break;
        }
        pick -= wt;
        n_extra = i;
    }
    let mut cars = vec![primary];
    for _ in 0..n_extra {
        for _ in 0..50 {
            let left_side = rng.gen::<bool>();
            let reach = if left_side { vanish_x } else { wf - vanish_x };
            let min_row = horizon + reach / road_k + 1.0;
            if min_row >= hf {
                break;
            }
            let bottom = rng.gen_range(min_row..=hf).floor().max(min_row.ceil());
            let height = cfg.car_height(horizon, bottom);
            let width = height * rng.gen_range(cfg.car_aspect.0..=cfg.car_aspect.1);
            let visible = rng.gen_range(0.3..=0.7) * width;
            let cx = if left_side {
                visible - width / 2.0
            } else {
                wf - visible + width / 2.0
            };
            let car = Car {
                cx,
                bottom,
                width,
                height,
                color: car_color(&mut rng),
            };
            let clear = cars.iter().all(|o| {
                car.right() + 1.0 < o.left()
                    || o.right() + 1.0 < car.left()
                    || car.bottom + 1.0 < o.top()
                    || o.bottom + 1.0 < car.top()
            });
            if clear {
                cars.push(car);
                break;
            }
        }
    }

    let mut instances = Array2::<u16>::zeros((h, w));
    for (i, car) in cars.iter().enumerate() {
        let (x0, x1, y0, y1) = car.pixel_bounds(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if car.shade(x as f64 + 0.5, y as f64 + 0.5).is_some() {
                    let f = car.pixel_shade(x, y);
                    labels[[y, x]] = classes.car;
                    instances[[y, x]] = i as u16 + 1;
                    for k in 0..3 {
                        image[[k, y, x]] = car.color[k] * f;
                    }
                }
            }
        }
    }

    let layout = layout_to_channels(labels.view(), &cfg.class_table)?;
    Ok(SceneSample {
        image,
        layout,
        instance_map: instances,
        meta: SceneMeta {
            horizon_row: Some(horizon),
            car_a: Some(cfg.car_a),
            car_b: Some(cfg.car_b),
            vanishing_x: Some(vanish_x),
            road_slope: Some(road_k),
            seed,
            index,
        },
    })
}
