//! The placement networks: transform encoder `E_tran`, layout encoder `E_lay`,
//! object encoder `E_obj`, shared generator `G`, and the discriminators
//! `D_affine` and `D_layout`.
//!
//! Networks are written once against [`Graph`] so the same code serves f32
//! training, f64 gradient checks, and graph-free inference helpers.

pub mod checkpoint;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compositor::{resample_area, LayoutStack, ObjectAsset};
use crate::error::{Error, Result};
use crate::features::ClassTable;
use crate::geometry::{NormalizedFrame, SampleGrid, Transform2D};
use crate::nn::{power_iteration, Graph, NodeId, Real, Tensor};
use checkpoint::Container;

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;
const INIT_STD: f64 = 0.02;
const SPECTRAL_INIT_ITERATIONS: usize = 50;
/// Lower bound added to the softplus scale head.
pub const MIN_SCALE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub class_table: ClassTable,
    /// Side `P` of the canonical object canvas.
    pub patch_side: usize,
    /// Side `S` of the square grid the layout branch works on.
    pub layout_side: usize,
    /// Side of the box-filtered silhouette warped onto the layout grid; must divide `patch_side`.
    pub layout_mask_side: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub d_z: usize,
    pub d_f: usize,
    pub d_o: usize,
    pub tran_hidden: usize,
    /// Hidden widths of `E_lay`; a final conv to `d_f` is appended.
    pub lay_widths: Vec<usize>,
    /// Hidden widths of `E_obj`; a final conv to `d_o` is appended.
    pub obj_widths: Vec<usize>,
    pub gen_hidden: Vec<usize>,
    pub daff_hidden: usize,
    /// Hidden widths of `D_layout`; a final conv to one channel is appended.
    pub dlay_widths: Vec<usize>,
    /// Append normalized x/y coordinate planes to the `E_lay` input.
    pub coord_channels: bool,
    /// Spectrally normalize every `D_layout` conv weight.
    pub layout_spectral_norm: bool,
    pub leaky_slope: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            class_table: ClassTable::toy_road(),
            patch_side: crate::compositor::DEFAULT_PATCH_SIDE,
            layout_side: 64,
            layout_mask_side: 16,
            frame_width: 128,
            frame_height: 128,
            d_z: 32,
            d_f: 256,
            d_o: 128,
            tran_hidden: 32,
            lay_widths: vec![32, 64, 128],
            obj_widths: vec![32, 64],
            gen_hidden: vec![256, 64],
            daff_hidden: 32,
            dlay_widths: vec![64, 128, 256],
            coord_channels: true,
            layout_spectral_norm: true,
            leaky_slope: 0.2,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        self.class_table.len()
    }

    pub fn frame(&self) -> Result<NormalizedFrame> {
        NormalizedFrame::new(self.frame_width, self.frame_height)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.frame()?;
        if self.class_table.object_channel().is_none() {
            return cfg("class table has no object class".into());
        }
        let lay_down = 1usize << (self.lay_widths.len() + 1);
        let dlay_down = 1usize << (self.dlay_widths.len() + 1);
        if self.layout_side == 0 || !self.layout_side.is_multiple_of(lay_down.max(dlay_down)) {
            return cfg(format!(
                "layout_side {} must be a positive multiple of {}",
                self.layout_side,
                lay_down.max(dlay_down)
            ));
        }
        let obj_down = 1usize << (self.obj_widths.len() + 1);
        if self.patch_side < 2 || !self.patch_side.is_multiple_of(obj_down) {
            return cfg(format!(
                "patch_side {} must be a multiple of {obj_down}",
                self.patch_side
            ));
        }
        if self.layout_mask_side < 2 || !self.patch_side.is_multiple_of(self.layout_mask_side) {
            return cfg(format!(
                "layout_mask_side {} must be at least 2 and divide patch_side {}",
                self.layout_mask_side, self.patch_side
            ));
        }
        let widths = [self.d_z, self.d_f, self.d_o, self.tran_hidden, self.daff_hidden];
        if widths.contains(&0)
            || [&self.lay_widths, &self.obj_widths, &self.gen_hidden, &self.dlay_widths]
                .iter()
                .any(|w| w.contains(&0))
        {
            return cfg("network widths must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return cfg("leaky_slope must be finite and non-negative".into());
        }
        Ok(())
    }

    fn lay_in_channels(&self) -> usize {
        self.num_classes() + self.d_z + if self.coord_channels { 2 } else { 0 }
    }

    /// Name and shape of every parameter, in a fixed order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let linear = |prefix: &str, dims: &[usize], specs: &mut Vec<(String, Vec<usize>)>| {
            for (i, w) in dims.windows(2).enumerate() {
                specs.push((format!("{prefix}.fc{}.weight", i + 1), vec![w[1], w[0]]));
                specs.push((format!("{prefix}.fc{}.bias", i + 1), vec![w[1]]));
            }
        };
        linear("e_tran.mu", &[6, self.tran_hidden, self.d_z], &mut specs);
        linear("e_tran.logvar", &[6, self.tran_hidden, self.d_z], &mut specs);
        let gen: Vec<usize> = std::iter::once(self.d_f + self.d_o)
            .chain(self.gen_hidden.iter().copied())
            .chain(std::iter::once(3))
            .collect();
        linear("g", &gen, &mut specs);
        linear("d_affine", &[6, self.daff_hidden, self.daff_hidden, 1], &mut specs);
        let conv = |prefix: &str, chans: Vec<usize>, specs: &mut Vec<(String, Vec<usize>)>| {
            for (i, w) in chans.windows(2).enumerate() {
                specs.push((
                    format!("{prefix}.conv{}.weight", i + 1),
                    vec![w[1], w[0], KERNEL, KERNEL],
                ));
                specs.push((format!("{prefix}.conv{}.bias", i + 1), vec![w[1]]));
            }
        };
        let chain = |first: usize, mid: &[usize], last: usize| {
            std::iter::once(first)
                .chain(mid.iter().copied())
                .chain(std::iter::once(last))
                .collect::<Vec<_>>()
        };
        conv(
            "e_lay",
            chain(self.lay_in_channels(), &self.lay_widths, self.d_f),
            &mut specs,
        );
        conv("e_obj", chain(2, &self.obj_widths, self.d_o), &mut specs);
        let dlay = chain(self.num_classes(), &self.dlay_widths, 1);
        conv("d_layout", dlay.clone(), &mut specs);
        if self.layout_spectral_norm {
            for (i, &out) in dlay[1..].iter().enumerate() {
                specs.push((spectral_vector_name(i + 1), vec![out]));
            }
        }
        specs
    }
}

/// Power-iteration state of `D_layout` conv `layer`; not trained by gradients.
pub fn spectral_vector_name(layer: usize) -> String {
    format!("d_layout.conv{layer}.sn_u")
}

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Encoders and the shared generator.
    Generator,
    Discriminator,
}

pub fn role_of(name: &str) -> Role {
    if name.starts_with("d_") {
        Role::Discriminator
    } else {
        Role::Generator
    }
}

/// Parameters plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    params: BTreeMap<String, Tensor<f32>>,
}

impl ModelState {
    /// Weights `N(0, 0.02)`, biases zero, drawn in [`ModelConfig::param_specs`] order.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        let params = config
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
                };
                (name, Tensor::new(shape, data))
            })
            .collect();
        let mut state = ModelState { config, params };
        for _ in 0..SPECTRAL_INIT_ITERATIONS {
            state.refresh_spectral_vectors();
        }
        Ok(state)
    }

    pub fn from_parts(config: ModelConfig, params: BTreeMap<String, Tensor<f32>>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape) in &specs {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
            }
            if !params[name].all_finite() {
                return Err(Error::Checkpoint(format!("{name} has non-finite values")));
            }
        }
        Ok(ModelState { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<f32>> {
        &mut self.params
    }

    /// Advances each `D_layout` spectral vector by one power-iteration step.
    pub fn refresh_spectral_vectors(&mut self) {
        if !self.config.layout_spectral_norm {
            return;
        }
        for i in 1..=self.config.dlay_widths.len() + 1 {
            let w = self.params[&format!("d_layout.conv{i}.weight")].data().to_vec();
            let u = self
                .params
                .get_mut(&spectral_vector_name(i))
                .expect("spectral vector exists");
            power_iteration(&w, u.data_mut());
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn to_container(&self) -> Result<Container> {
        Ok(Container {
            config: serde_json::to_value(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
            extra: None,
            tensors: self.params.clone(),
        })
    }

    /// Rebuilds a model from a container, ignoring tensors outside the parameter set.
    pub fn from_container(c: &Container) -> Result<Self> {
        let config: ModelConfig =
            serde_json::from_value(c.config.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let names: Vec<String> = config.param_specs().into_iter().map(|(n, _)| n).collect();
        let params = names
            .into_iter()
            .filter_map(|n| c.tensors.get(&n).map(|t| (n, t.clone())))
            .collect();
        Self::from_parts(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Adds every parameter to `g` as a leaf; `trainable` picks which ones need gradients.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: impl Fn(&str) -> bool) -> Params {
        self.bind_subset(g, |name| Some(trainable(name)))
    }

    /// Adds the parameters for which `select` returns `Some(trainable)`.
    pub fn bind_subset<T: Real>(&self, g: &mut Graph<T>, select: impl Fn(&str) -> Option<bool>) -> Params {
        let ids = self
            .params
            .iter()
            .filter_map(|(name, t)| select(name).map(|tr| (name.clone(), g.leaf(t.cast(), tr))))
            .collect();
        Params { ids }
    }

    fn check_classes(&self, table: &ClassTable) -> Result<()> {
        if table != &self.config.class_table {
            return Err(Error::Config("scene class table differs from the model's".into()));
        }
        Ok(())
    }

    /// Scene layout resampled to the model's `S x S` layout grid.
    pub fn layout_input(&self, layout: &LayoutStack) -> Result<Tensor<f32>> {
        self.check_classes(layout.class_table())?;
        let s = self.config.layout_side;
        Ok(array3_tensor(resample_area(layout.channels().view(), s, s).view()))
    }

    /// `y_m` and `y_e` stacked as a `2 x P x P` tensor.
    pub fn object_input(&self, asset: &ObjectAsset) -> Result<Tensor<f32>> {
        let p = self.config.patch_side;
        if asset.side() != p {
            return Err(Error::Shape(format!("asset side {}, model expects {p}", asset.side())));
        }
        let mut data = asset.silhouette.iter().copied().collect::<Vec<_>>();
        data.extend(asset.edge.iter().copied());
        Ok(Tensor::new(vec![2, p, p], data))
    }

    /// Box-filtered `1 x P' x P'` silhouette for [`Nets::layout_composite`].
    pub fn layout_silhouette(&self, asset: &ObjectAsset) -> Result<Tensor<f32>> {
        let p = self.config.patch_side;
        if asset.side() != p {
            return Err(Error::Shape(format!("asset side {}, model expects {p}", asset.side())));
        }
        let m = self.config.layout_mask_side;
        let sil = asset.silhouette.view().insert_axis(ndarray::Axis(0));
        Ok(array3_tensor(resample_area(sil, m, m).view()))
    }

    fn frozen(&self) -> (Graph<f32>, Params) {
        let mut g = Graph::new();
        let p = self.bind(&mut g, |_| false);
        (g, p)
    }

    pub fn encode_transform(&self, t: &Transform2D) -> Result<(Vec<f32>, Vec<f32>)> {
        let flat = t.to_flat6()?;
        let (mut g, p) = self.frozen();
        let x = g.constant(Tensor::vector(flat.iter().map(|&v| v as f32).collect()));
        let (mu, lv) = Nets::new(&self.config, &p).encode_transform(&mut g, x);
        Ok((g.value(mu).data().to_vec(), g.value(lv).data().to_vec()))
    }

    pub fn encode_layout(&self, layout: &LayoutStack, z: &[f32]) -> Result<Vec<f32>> {
        let input = self.layout_input(layout)?;
        self.encode_layout_tensor(input, z)
    }

    pub fn encode_layout_tensor(&self, layout: Tensor<f32>, z: &[f32]) -> Result<Vec<f32>> {
        let s = self.config.layout_side;
        if layout.shape() != [self.config.num_classes(), s, s] {
            return Err(Error::Shape(format!("layout input {:?}", layout.shape())));
        }
        self.check_latent(z)?;
        let (mut g, p) = self.frozen();
        let l = g.constant(layout);
        let zn = g.constant(Tensor::vector(z.to_vec()));
        let f = Nets::new(&self.config, &p).encode_layout(&mut g, l, zn);
        Ok(g.value(f).data().to_vec())
    }

    pub fn encode_object(&self, asset: &ObjectAsset) -> Result<Vec<f32>> {
        let input = self.object_input(asset)?;
        let (mut g, p) = self.frozen();
        let o = g.constant(input);
        let f = Nets::new(&self.config, &p).encode_object(&mut g, o);
        Ok(g.value(f).data().to_vec())
    }

    pub fn generate_transform(&self, f_scene: &[f32], f_obj: &[f32]) -> Result<Transform2D> {
        if f_scene.len() != self.config.d_f || f_obj.len() != self.config.d_o {
            return Err(Error::Shape(format!(
                "features of length ({}, {}), expected ({}, {})",
                f_scene.len(),
                f_obj.len(),
                self.config.d_f,
                self.config.d_o
            )));
        }
        let (mut g, p) = self.frozen();
        let fs = g.constant(Tensor::vector(f_scene.to_vec()));
        let fo = g.constant(Tensor::vector(f_obj.to_vec()));
        let t = Nets::new(&self.config, &p).generate(&mut g, fs, fo);
        params_to_transform(g.value(t).data())
    }

    pub fn disc_affine(&self, t: &Transform2D) -> Result<f32> {
        let flat = t.to_flat6()?;
        let (mut g, p) = self.frozen();
        let x = g.constant(Tensor::vector(flat.iter().map(|&v| v as f32).collect()));
        let d = Nets::new(&self.config, &p).disc_affine(&mut g, x);
        Ok(g.value(d).item())
    }

    /// Per-cell realism map and its mean for a (soft) layout.
    pub fn disc_layout(&self, layout: &LayoutStack) -> Result<(Array2<f32>, f32)> {
        let input = self.layout_input(layout)?;
        self.disc_layout_tensor(input)
    }

    pub fn disc_layout_tensor(&self, layout: Tensor<f32>) -> Result<(Array2<f32>, f32)> {
        let s = self.config.layout_side;
        if layout.shape() != [self.config.num_classes(), s, s] {
            return Err(Error::Shape(format!("layout input {:?}", layout.shape())));
        }
        let (mut g, p) = self.frozen();
        let l = g.constant(layout);
        let (map, mean) = Nets::new(&self.config, &p).disc_layout(&mut g, l);
        let shape = g.value(map).shape().to_vec();
        let arr = Array2::from_shape_vec((shape[1], shape[2]), g.value(map).data().to_vec()).expect("score map shape");
        Ok((arr, g.value(mean).item()))
    }

    fn check_latent(&self, z: &[f32]) -> Result<()> {
        if z.len() != self.config.d_z {
            return Err(Error::Shape(format!(
                "latent of length {}, expected {}",
                z.len(),
                self.config.d_z
            )));
        }
        Ok(())
    }
}

/// `z = mu + exp(0.5 * log_var) * eps`.
pub fn reparameterize(mu: &[f32], log_var: &[f32], eps: &[f32]) -> Result<Vec<f32>> {
    if mu.len() != log_var.len() || mu.len() != eps.len() {
        return Err(Error::Shape(format!(
            "mu {}, log_var {}, eps {}",
            mu.len(),
            log_var.len(),
            eps.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

pub(crate) fn params_to_transform<T: Real>(p: &[T]) -> Result<Transform2D> {
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    Transform2D::new(f(p[0]), f(p[1]), f(p[2]))
}

pub(crate) fn array3_tensor(a: ArrayView3<f32>) -> Tensor<f32> {
    let (c, h, w) = a.dim();
    Tensor::new(vec![c, h, w], a.iter().copied().collect())
}

/// Graph nodes for the bound parameters.
pub struct Params {
    ids: BTreeMap<String, NodeId>,
}

impl Params {
    pub fn get(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn merge(&mut self, other: Params) {
        self.ids.extend(other.ids);
    }
}

/// Graph builders for each network over bound parameters.
pub struct Nets<'a> {
    cfg: &'a ModelConfig,
    p: &'a Params,
}

impl<'a> Nets<'a> {
    pub fn new(cfg: &'a ModelConfig, p: &'a Params) -> Self {
        Nets { cfg, p }
    }

    fn mlp<T: Real>(&self, g: &mut Graph<T>, prefix: &str, layers: usize, mut x: NodeId) -> NodeId {
        for i in 1..=layers {
            let w = self.p.get(&format!("{prefix}.fc{i}.weight"));
            let b = self.p.get(&format!("{prefix}.fc{i}.bias"));
            x = g.linear(x, w, b);
            if i < layers {
                x = g.leaky_relu(x, self.cfg.leaky_slope);
            }
        }
        x
    }

    /// Stride-2 conv stack. With `norm`, instance norm follows every layer
    /// except the first and the last.
    fn conv_stack<T: Real>(
        &self,
        g: &mut Graph<T>,
        prefix: &str,
        layers: usize,
        mut x: NodeId,
        norm: bool,
        last_act: bool,
    ) -> NodeId {
        for i in 1..=layers {
            let w = self.p.get(&format!("{prefix}.conv{i}.weight"));
            let b = self.p.get(&format!("{prefix}.conv{i}.bias"));
            x = g.conv2d(x, w, b, STRIDE, PAD);
            if norm && i > 1 && i < layers {
                x = g.instance_norm(x);
            }
            if i < layers || last_act {
                x = g.leaky_relu(x, self.cfg.leaky_slope);
            }
        }
        x
    }

    /// `(mu, log_var)` from the flattened 2x3 matrix.
    pub fn encode_transform<T: Real>(&self, g: &mut Graph<T>, flat6: NodeId) -> (NodeId, NodeId) {
        let mu = self.mlp(g, "e_tran.mu", 2, flat6);
        let lv = self.mlp(g, "e_tran.logvar", 2, flat6);
        (mu, lv)
    }

    /// `C x S x S` layout and a `d_z` latent to a `d_f` scene feature.
    pub fn encode_layout<T: Real>(&self, g: &mut Graph<T>, layout: NodeId, z: NodeId) -> NodeId {
        let s = self.cfg.layout_side;
        let zmap = g.broadcast_spatial(z, s, s);
        let mut parts = vec![layout, zmap];
        if self.cfg.coord_channels {
            let coords = g.constant(coord_planes(
                self.cfg.frame_width as f64 / self.cfg.frame_height as f64,
                s,
            ));
            parts.push(coords);
        }
        let x = g.concat(&parts);
        let h = self.conv_stack(g, "e_lay", self.cfg.lay_widths.len() + 1, x, true, true);
        g.global_avg_pool(h)
    }

    /// `2 x P x P` silhouette+edge input to a `d_o` object feature.
    pub fn encode_object<T: Real>(&self, g: &mut Graph<T>, obj: NodeId) -> NodeId {
        let h = self.conv_stack(g, "e_obj", self.cfg.obj_widths.len() + 1, obj, true, true);
        g.global_avg_pool(h)
    }

    /// `(s, tx, ty)` with `s > 0`, `|tx| < W/H`, `|ty| < 1`.
    pub fn generate<T: Real>(&self, g: &mut Graph<T>, f_scene: NodeId, f_obj: NodeId) -> NodeId {
        let x = g.concat(&[f_scene, f_obj]);
        let raw = self.mlp(g, "g", self.cfg.gen_hidden.len() + 1, x);
        let a_s = g.slice(raw, 0, 1);
        let a_s = g.softplus(a_s);
        let s = g.add_scalar(a_s, MIN_SCALE);
        let a_x = g.slice(raw, 1, 1);
        let a_x = g.tanh(a_x);
        let tx = g.scale(a_x, self.cfg.frame_width as f64 / self.cfg.frame_height as f64);
        let a_y = g.slice(raw, 2, 1);
        let ty = g.tanh(a_y);
        g.concat(&[s, tx, ty])
    }

    pub fn disc_affine<T: Real>(&self, g: &mut Graph<T>, flat6: NodeId) -> NodeId {
        let logit = self.mlp(g, "d_affine", 3, flat6);
        g.sigmoid(logit)
    }

    /// `base ⊕ T(y_m)` on the layout grid. `silhouette` comes from
    /// [`ModelState::layout_silhouette`]; the scale is corrected for its
    /// reduced side so the footprint matches the full-resolution warp.
    pub fn layout_composite<T: Real>(&self, g: &mut Graph<T>, base: NodeId, silhouette: NodeId, t: NodeId) -> NodeId {
        let side = self.cfg.layout_side;
        let grid = SampleGrid::resampled(self.cfg.frame().expect("validated frame"), side, side)
            .expect("validated layout side");
        let k = self.cfg.patch_side as f64 / self.cfg.layout_mask_side as f64;
        let factor = g.constant(Tensor::vector(vec![T::lit(k), T::one(), T::one()]));
        let t = g.mul(t, factor);
        let m = g.warp(silhouette, t, grid);
        let obj = self.cfg.class_table.object_channel().expect("validated object class");
        g.paste(base, m, obj)
    }

    /// PatchGAN scores: `(1 x S/16 x S/16 map, mean)`. No activation
    /// normalization, so each cell depends only on its receptive field.
    pub fn disc_layout<T: Real>(&self, g: &mut Graph<T>, layout: NodeId) -> (NodeId, NodeId) {
        let layers = self.cfg.dlay_widths.len() + 1;
        let mut x = layout;
        for i in 1..=layers {
            let mut w = self.p.get(&format!("d_layout.conv{i}.weight"));
            if self.cfg.layout_spectral_norm {
                let u = g.value(self.p.get(&spectral_vector_name(i))).data().to_vec();
                w = g.spectral_normalize(w, &u);
            }
            let b = self.p.get(&format!("d_layout.conv{i}.bias"));
            x = g.conv2d(x, w, b, STRIDE, PAD);
            if i < layers {
                x = g.leaky_relu(x, self.cfg.leaky_slope);
            }
        }
        let map = g.sigmoid(x);
        let mean = g.mean(map);
        (map, mean)
    }
}

/// `[s, 0, tx, 0, s, ty]` from an `(s, tx, ty)` node.
pub fn flat6<T: Real>(g: &mut Graph<T>, params: NodeId) -> NodeId {
    g.gather(params, &[Some(0), None, Some(1), None, Some(0), Some(2)])
}

/// `mu + exp(0.5 * log_var) * eps` on the graph.
pub fn reparameterize_node<T: Real>(g: &mut Graph<T>, mu: NodeId, log_var: NodeId, eps: NodeId) -> NodeId {
    let half = g.scale(log_var, 0.5);
    let sigma = g.exp(half);
    let noise = g.mul(sigma, eps);
    g.add(mu, noise)
}

/// Normalized x and y coordinates of an `S x S` grid over a frame of the given aspect.
fn coord_planes<T: Real>(aspect: f64, s: usize) -> Tensor<T> {
    let c = |i: usize| (i as f64 + 0.5) / s as f64 * 2.0 - 1.0;
    let mut data = Vec::with_capacity(2 * s * s);
    for _ in 0..s {
        data.extend((0..s).map(|u| T::lit(c(u) * aspect)));
    }
    for v in 0..s {
        data.extend(std::iter::repeat_n(T::lit(c(v)), s));
    }
    Tensor::new(vec![2, s, s], data)
}
