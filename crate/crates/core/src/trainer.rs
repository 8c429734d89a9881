//! Self-supervised VAE-GAN training: one discriminator update then one
//! encoder/generator update per example, Adam with step decay, resumable
//! checkpoints, and a per-epoch CSV log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compositor::{ObjectAsset, DEFAULT_PATCH_SIDE};
use crate::data::{make_training_example, Dataset, SceneSample, Split};
use crate::error::{Error, Result};
use crate::geometry::Transform2D;
use crate::losses::{d_loss_node, g_loss_node, kl_node, recon_node, total_losses, LossWeights, StepLosses};
use crate::model::checkpoint::Container;
use crate::model::{flat6, params_to_transform, reparameterize_node, role_of, ModelConfig, ModelState, Nets, Role};
use crate::nn::{Graph, NodeId, Tensor};

pub const METRICS_HEADER: &str = "epoch,vae_recon,kl,d_affine,g_affine,d_layout,g_layout,total_g,total_d";
const CHECKPOINT_FILE: &str = "checkpoint.sacc";
const MODEL_FILE: &str = "model.sacc";
const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs between learning-rate decays.
    pub lr_step_epochs: usize,
    pub lr_gamma: f64,
    /// Only 1 is validated; larger values are rejected.
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling per half-step.
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Keep a snapshot every this many epochs (0 = final model only).
    pub snapshot_every: usize,
    /// Use at most this many training scenes (all when `None`).
    pub max_train_scenes: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 2e-4,
            lr_step_epochs: 30,
            lr_gamma: 0.75,
            batch_size: 1,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 10.0,
            weights: LossWeights::default(),
            seed: 7,
            snapshot_every: 10,
            max_train_scenes: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size != 1 {
            return bad("only batch_size = 1 is supported");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad("lr must be positive and lr_gamma in (0, 1]");
        }
        if self.lr_step_epochs == 0 {
            return bad("lr_step_epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps be positive");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        self.weights.validate()?;
        self.model.validate()
    }

    /// Learning rate during 0-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi((epoch / self.lr_step_epochs) as i32)
    }
}

/// Adam with per-parameter moment buffers and bias correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
    pub steps: BTreeMap<String, u64>,
}

impl Adam {
    fn update(&mut self, name: &str, param: &mut [f32], grad: &[f32], lr: f64, cfg: &TrainConfig) {
        let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; param.len()]);
        let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; param.len()]);
        let t = self.steps.entry(name.to_string()).or_insert(0);
        *t += 1;
        let (b1, b2) = (cfg.adam_beta1 as f32, cfg.adam_beta2 as f32);
        let c1 = 1.0 - cfg.adam_beta1.powi(*t as i32);
        let c2 = 1.0 - cfg.adam_beta2.powi(*t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (cfg.adam_eps * c2.sqrt()) as f32;
        for i in 0..param.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            param[i] -= step * m[i] / (v[i].sqrt() + eps);
        }
    }
}

/// Model-ready tensors of one self-supervised example.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    /// Index of the example's scene in [`TrainingSet::scenes`].
    pub scene: usize,
    pub object: Tensor<f32>,
    /// Box-filtered silhouette for the layout branch.
    pub layout_silhouette: Tensor<f32>,
    pub t_gt: Transform2D,
}

/// `C x S x S` layout inputs of one scene.
#[derive(Clone, Debug)]
pub struct SceneTensors {
    /// Full layout, seen by `E_lay`.
    pub layout: Arc<Tensor<f32>>,
    /// Layout with the scene's example instance erased, the base `D_layout`
    /// composes onto. Equal to `layout` for scenes without an example.
    pub background: Arc<Tensor<f32>>,
}

/// Training scenes reduced to what the networks consume.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub scenes: Vec<SceneTensors>,
    pub examples: Vec<PreparedExample>,
}

impl TrainingSet {
    pub fn new() -> Self {
        TrainingSet {
            scenes: Vec::new(),
            examples: Vec::new(),
        }
    }

    /// Adds a scene and, when it holds an intact object, its example.
    pub fn push_scene(&mut self, model: &ModelState, scene: SceneSample, seed: u64) -> Result<()> {
        let layout = Arc::new(model.layout_input(&scene.layout)?);
        let id = self.scenes.len();
        let background = match make_training_example(scene, seed, model.config().patch_side)? {
            Some(ex) => {
                self.examples.push(prepare_example(model, &ex.asset, ex.t_gt, id)?);
                Arc::new(model.layout_input(&ex.background)?)
            }
            None => layout.clone(),
        };
        self.scenes.push(SceneTensors { layout, background });
        Ok(())
    }

    pub fn from_dataset(ds: &Dataset, split: Split, model: &ModelState, limit: Option<usize>) -> Result<Self> {
        let mut set = TrainingSet::new();
        let range = ds.indices(split);
        let n = limit.map_or(range.len(), |l| l.min(range.len()));
        for i in range.take(n) {
            let scene = ds.load(i)?;
            set.push_scene(model, scene, ds.meta.seed ^ i as u64)?;
        }
        Ok(set)
    }
}

impl Default for TrainingSet {
    fn default() -> Self {
        Self::new()
    }
}

pub fn prepare_example(
    model: &ModelState,
    asset: &ObjectAsset,
    t_gt: Transform2D,
    scene: usize,
) -> Result<PreparedExample> {
    Ok(PreparedExample {
        scene,
        object: model.object_input(asset)?,
        layout_silhouette: model.layout_silhouette(asset)?,
        t_gt,
    })
}

/// Mutable training state: model, optimizer, and position in the schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelState,
    pub opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: u64,
    /// Per-epoch means, one row per completed epoch.
    pub history: Vec<StepLosses>,
}

#[derive(Serialize, Deserialize)]
struct TrainerExtra {
    train_config: TrainConfig,
    epoch: usize,
    step: u64,
    adam_steps: BTreeMap<String, u64>,
    history: Vec<[f64; 8]>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ModelState::init(config.model.clone())?;
        Ok(Trainer {
            config,
            model,
            opt: Adam::default(),
            epoch: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = self.model.to_container()?;
        for (name, m) in &self.opt.m {
            c.tensors.insert(format!("opt.m.{name}"), Tensor::vector(m.clone()));
            c.tensors
                .insert(format!("opt.v.{name}"), Tensor::vector(self.opt.v[name].clone()));
        }
        let extra = TrainerExtra {
            train_config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            adam_steps: self.opt.steps.clone(),
            history: self.history.iter().map(StepLosses::to_array).collect(),
        };
        c.extra = Some(serde_json::to_value(extra).map_err(|e| Error::Checkpoint(e.to_string()))?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let model = ModelState::from_container(c)?;
        let extra: TrainerExtra = c
            .extra
            .clone()
            .ok_or_else(|| Error::Checkpoint("no training state in container".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Checkpoint(e.to_string())))?;
        let mut opt = Adam {
            steps: extra.adam_steps,
            ..Adam::default()
        };
        for name in opt.steps.keys() {
            let get = |kind: &str| {
                c.tensors
                    .get(&format!("opt.{kind}.{name}"))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))
            };
            opt.m.insert(name.clone(), get("m")?);
            opt.v.insert(name.clone(), get("v")?);
        }
        Ok(Trainer {
            config: extra.train_config,
            model,
            opt,
            epoch: extra.epoch,
            step: extra.step,
            history: extra.history.into_iter().map(StepLosses::from_array).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    /// One D update followed by one encoder/G update.
    pub fn train_step(
        &mut self,
        example: &PreparedExample,
        scene: &SceneTensors,
        second: &SceneTensors,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepLosses> {
        let lr = self.config.lr_at(self.epoch);
        let out = train_step(
            &mut self.model,
            &mut self.opt,
            &self.config,
            example,
            scene,
            second,
            rng,
            lr,
            self.step,
        )?;
        self.step += 1;
        Ok(out)
    }

    /// Runs one epoch over `set` and appends its mean losses to the history.
    pub fn run_epoch(&mut self, set: &TrainingSet) -> Result<StepLosses> {
        if set.examples.is_empty() {
            return Err(Error::Config("training set has no usable examples".into()));
        }
        if set.scenes.len() < 2 {
            return Err(Error::Config("training needs at least two scenes".into()));
        }
        let mut rng = epoch_rng(self.config.seed, self.epoch);
        let mut order: Vec<usize> = (0..set.examples.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 8];
        for &i in &order {
            let ex = &set.examples[i];
            let mut other = rng.gen_range(0..set.scenes.len() - 1);
            if other >= ex.scene {
                other += 1;
            }
            let l = self.train_step(ex, &set.scenes[ex.scene], &set.scenes[other], &mut rng)?;
            for (s, v) in sums.iter_mut().zip(l.to_array()) {
                *s += v;
            }
        }
        let n = order.len() as f64;
        let mean = StepLosses::from_array(sums.map(|s| s / n));
        self.history.push(mean);
        self.epoch += 1;
        Ok(mean)
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Global-norm clipping followed by Adam on the parameters that received gradients.
fn apply_grads(
    model: &mut ModelState,
    opt: &mut Adam,
    cfg: &TrainConfig,
    grads: &mut crate::nn::Gradients<f32>,
    bound: &[(String, NodeId)],
    lr: f64,
) {
    let mut collected: Vec<(&str, Vec<f32>)> = bound
        .iter()
        .filter_map(|(name, id)| grads.take(*id).map(|g| (name.as_str(), g)))
        .collect();
    let norm = collected
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > cfg.grad_clip {
        let f = (cfg.grad_clip / norm) as f32;
        for (_, g) in collected.iter_mut() {
            g.iter_mut().for_each(|v| *v *= f);
        }
    }
    for (name, g) in collected {
        let p = model.params_mut().get_mut(name).expect("bound parameter exists");
        opt.update(name, p.data_mut(), &g, lr, cfg);
    }
}

fn trainable_list(p: &crate::model::Params, role: Role) -> Vec<(String, NodeId)> {
    p.iter()
        .filter(|(n, _)| role_of(n) == role)
        .map(|(n, id)| (n.to_string(), id))
        .collect()
}

fn check_finite(step: u64, l: &StepLosses) -> Result<()> {
    if l.all_finite() {
        return Ok(());
    }
    let mut detail = String::new();
    for (k, v) in StepLosses::FIELDS.iter().zip(l.to_array()) {
        let _ = write!(detail, "{k}={v} ");
    }
    Err(Error::NonFinite {
        step,
        detail: detail.trim_end().to_string(),
    })
}

/// One training step. Terms of disabled discriminators are reported as zero.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut ModelState,
    opt: &mut Adam,
    cfg: &TrainConfig,
    ex: &PreparedExample,
    scene: &SceneTensors,
    second: &SceneTensors,
    rng: &mut ChaCha8Rng,
    lr: f64,
    step: u64,
) -> Result<StepLosses> {
    let w = cfg.weights;
    let mcfg = model.config().clone();
    let eps = normal_vec(rng, mcfg.d_z);
    let z = normal_vec(rng, mcfg.d_z);
    if w.use_d_layout {
        model.refresh_spectral_vectors();
    }
    let t_gt = [ex.t_gt.s as f32, ex.t_gt.tx as f32, ex.t_gt.ty as f32];

    // Generator graph: encoders and G are trainable.
    let mut g = Graph::<f32>::new();
    let mut gp = model.bind_subset(&mut g, |n| (role_of(n) == Role::Generator).then_some(true));
    let gen_params = trainable_list(&gp, Role::Generator);
    let t_gt_node = g.constant(Tensor::vector(t_gt.to_vec()));
    let gt6 = flat6(&mut g, t_gt_node);
    let x_l = g.shared_constant(scene.layout.clone());
    let x2_l = g.shared_constant(second.layout.clone());
    let obj = g.constant(ex.object.clone());
    let sil = g.constant(ex.layout_silhouette.clone());
    let eps_n = g.constant(Tensor::vector(eps));
    let z_n = g.constant(Tensor::vector(z));
    let (t_rec, t_gen, t_gen2, mu, lv) = {
        let nets = Nets::new(&mcfg, &gp);
        let (mu, lv) = nets.encode_transform(&mut g, gt6);
        let z_tran = reparameterize_node(&mut g, mu, lv, eps_n);
        let f_tran = nets.encode_layout(&mut g, x_l, z_tran);
        let f_sem = nets.encode_layout(&mut g, x_l, z_n);
        let f_sem2 = nets.encode_layout(&mut g, x2_l, z_n);
        let f_obj = nets.encode_object(&mut g, obj);
        (
            nets.generate(&mut g, f_tran, f_obj),
            nets.generate(&mut g, f_sem, f_obj),
            nets.generate(&mut g, f_sem2, f_obj),
            mu,
            lv,
        )
    };
    let value = |id: NodeId| g.value(id).data().to_vec();
    let (rec_v, gen_v, gen2_v) = (value(t_rec), value(t_gen), value(t_gen2));

    // Discriminator half: generator outputs enter as constants.
    let mut out = StepLosses::default();
    if w.use_d_affine || w.use_d_layout {
        let mut d = Graph::<f32>::new();
        let dp = model.bind_subset(&mut d, |n| (role_of(n) == Role::Discriminator).then_some(true));
        let nets = Nets::new(&mcfg, &dp);
        let mut terms = Vec::new();
        let transforms: Vec<NodeId> = [t_gt.to_vec(), rec_v, gen_v, gen2_v]
            .into_iter()
            .map(|v| d.constant(Tensor::vector(v)))
            .collect();
        if w.use_d_affine {
            let scores: Vec<NodeId> = transforms
                .iter()
                .map(|&t| {
                    let f = flat6(&mut d, t);
                    nets.disc_affine(&mut d, f)
                })
                .collect();
            let d_aff = d_loss_node(&mut d, scores[0], &scores[1..]);
            out.d_affine = d.value(d_aff).item() as f64;
            terms.push(d_aff);
        }
        if w.use_d_layout {
            let sil_d = d.constant(ex.layout_silhouette.clone());
            let base = d.shared_constant(scene.background.clone());
            let base2 = d.shared_constant(second.background.clone());
            let layout_score = |d: &mut Graph<f32>, t: NodeId, base: NodeId| {
                let composed = nets.layout_composite(d, base, sil_d, t);
                nets.disc_layout(d, composed).1
            };
            let real = layout_score(&mut d, transforms[0], base);
            let fake = layout_score(&mut d, transforms[2], base);
            let fake2 = layout_score(&mut d, transforms[3], base2);
            let d_lay = d_loss_node(&mut d, real, &[fake, fake2]);
            out.d_layout = d.value(d_lay).item() as f64;
            let scaled = d.scale(d_lay, w.beta);
            terms.push(scaled);
        }
        let total = d.add_all(&terms);
        out.total_d = d.value(total).item() as f64;
        check_finite(step, &out)?;
        let mut grads = d.backward(total);
        apply_grads(
            model,
            opt,
            cfg,
            &mut grads,
            &trainable_list(&dp, Role::Discriminator),
            lr,
        );
    }

    // Generator half: discriminators re-evaluated with their updated weights.
    if w.use_d_affine || w.use_d_layout {
        let dp = model.bind_subset(&mut g, |n| (role_of(n) == Role::Discriminator).then_some(false));
        gp.merge(dp);
    }
    let nets = Nets::new(&mcfg, &gp);
    let mut terms = Vec::new();
    let recon = recon_node(&mut g, t_rec, t_gt_node);
    let kl = kl_node(&mut g, mu, lv);
    out.vae_recon = g.value(recon).item() as f64;
    out.kl = g.value(kl).item() as f64;
    if w.use_vae {
        let v = g.add(recon, kl);
        terms.push(g.scale(v, w.alpha));
    }
    if w.use_d_affine {
        let fakes: Vec<NodeId> = [t_rec, t_gen, t_gen2]
            .iter()
            .map(|&t| {
                let f = flat6(&mut g, t);
                nets.disc_affine(&mut g, f)
            })
            .collect();
        let g_aff = g_loss_node(&mut g, &fakes);
        out.g_affine = g.value(g_aff).item() as f64;
        terms.push(g_aff);
    }
    if w.use_d_layout {
        let layout_score = |g: &mut Graph<f32>, t: NodeId, base: NodeId| {
            let composed = nets.layout_composite(g, base, sil, t);
            nets.disc_layout(g, composed).1
        };
        let base = g.shared_constant(scene.background.clone());
        let base2 = g.shared_constant(second.background.clone());
        let f1 = layout_score(&mut g, t_gen, base);
        let f2 = layout_score(&mut g, t_gen2, base2);
        let g_lay = g_loss_node(&mut g, &[f1, f2]);
        out.g_layout = g.value(g_lay).item() as f64;
        terms.push(g.scale(g_lay, w.beta));
    }
    let (total_g, total_d) = total_losses(&out, &w);
    out.total_g = total_g;
    out.total_d = total_d;
    check_finite(step, &out)?;
    if !terms.is_empty() {
        let total = g.add_all(&terms);
        let mut grads = g.backward(total);
        apply_grads(model, opt, cfg, &mut grads, &gen_params, lr);
    }
    Ok(out)
}

/// How `infer_transform` obtains its latent code.
#[derive(Clone, Debug, PartialEq)]
pub enum Latent {
    Seed(u64),
    Vector(Vec<f32>),
}

impl Latent {
    pub fn resolve(&self, d_z: usize) -> Result<Vec<f32>> {
        match self {
            Latent::Seed(s) => Ok(normal_vec(&mut ChaCha8Rng::seed_from_u64(*s), d_z)),
            Latent::Vector(v) if v.len() == d_z => Ok(v.clone()),
            Latent::Vector(v) => Err(Error::Shape(format!("latent of length {}, expected {d_z}", v.len()))),
        }
    }
}

/// `T_gen = G(E_lay(x_l, z), E_obj(y_m, y_e))`.
pub fn infer_transform(
    state: &ModelState,
    scene: &SceneSample,
    asset: &ObjectAsset,
    z: &Latent,
) -> Result<Transform2D> {
    let layout = state.layout_input(&scene.layout)?;
    infer_from_layout(state, layout, asset, z)
}

pub fn infer_from_layout(
    state: &ModelState,
    layout: Tensor<f32>,
    asset: &ObjectAsset,
    z: &Latent,
) -> Result<Transform2D> {
    let z = z.resolve(state.config().d_z)?;
    let f_scene = state.encode_layout_tensor(layout, &z)?;
    let f_obj = state.encode_object(asset)?;
    state.generate_transform(&f_scene, &f_obj)
}

/// `T_rec` for a known placement, using the posterior mean (`eps = 0`).
pub fn reconstruct_transform(
    state: &ModelState,
    layout: Tensor<f32>,
    object: Tensor<f32>,
    t_gt: &Transform2D,
) -> Result<Transform2D> {
    let mcfg = state.config();
    let mut g = Graph::<f32>::new();
    let p = state.bind(&mut g, |_| false);
    let nets = Nets::new(mcfg, &p);
    let t = g.constant(Tensor::vector(t_gt.params().iter().map(|&v| v as f32).collect()));
    let f6 = flat6(&mut g, t);
    let (mu, _) = nets.encode_transform(&mut g, f6);
    let l = g.constant(layout);
    let f_tran = nets.encode_layout(&mut g, l, mu);
    let o = g.constant(object);
    let f_obj = nets.encode_object(&mut g, o);
    let out = nets.generate(&mut g, f_tran, f_obj);
    params_to_transform(g.value(out).data())
}

/// Files written by [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub model_path: PathBuf,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub history: Vec<StepLosses>,
}

fn metrics_csv(history: &[StepLosses]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for (e, l) in history.iter().enumerate() {
        let _ = write!(s, "{}", e + 1);
        for v in l.to_array() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Trains on the dataset's training split, resuming from `out/checkpoint.sacc` if present.
///
/// The model's class table and frame size are taken from the dataset.
pub fn fit(mut config: TrainConfig, ds: &Dataset, out: &Path) -> Result<FitOutput> {
    config.model.class_table = ds.meta.class_table.clone();
    config.model.frame_width = ds.meta.generator.width;
    config.model.frame_height = ds.meta.generator.height;
    if ds.indices(Split::Train).is_empty() {
        return Err(Error::Config("dataset has no training scenes".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let mut trainer = if ckpt.exists() {
        let t = Trainer::load(&ckpt)?;
        if t.config != config {
            return Err(Error::Config(format!(
                "{} was written with a different configuration",
                ckpt.display()
            )));
        }
        log::info!("resuming from {} at epoch {}", ckpt.display(), t.epoch);
        t
    } else {
        Trainer::new(config.clone())?
    };
    let set = TrainingSet::from_dataset(ds, Split::Train, &trainer.model, config.max_train_scenes)?;
    log::info!(
        "training on {} examples from {} scenes, {} parameters",
        set.examples.len(),
        set.scenes.len(),
        trainer.model.num_parameters()
    );
    let metrics_path = out.join(METRICS_FILE);
    let write_metrics =
        |h: &[StepLosses]| std::fs::write(&metrics_path, metrics_csv(h)).map_err(|e| Error::io(&metrics_path, e));
    write_metrics(&trainer.history)?;
    while trainer.epoch < config.epochs {
        let started = std::time::Instant::now();
        let mean = trainer.run_epoch(&set)?;
        log::info!(
            "epoch {}/{} lr {:.3e} recon {:.4} kl {:.3} d_aff {:.3} g_aff {:.3} d_lay {:.3} g_lay {:.3} ({:.1}s)",
            trainer.epoch,
            config.epochs,
            config.lr_at(trainer.epoch - 1),
            mean.vae_recon,
            mean.kl,
            mean.d_affine,
            mean.g_affine,
            mean.d_layout,
            mean.g_layout,
            started.elapsed().as_secs_f64()
        );
        write_metrics(&trainer.history)?;
        trainer.save(&ckpt)?;
        if config.snapshot_every > 0 && trainer.epoch % config.snapshot_every == 0 {
            trainer
                .model
                .save(&out.join(format!("epoch_{:04}.sacc", trainer.epoch)))?;
        }
    }
    let model_path = out.join(MODEL_FILE);
    trainer.model.save(&model_path)?;
    Ok(FitOutput {
        model_path,
        metrics_path,
        checkpoint_path: ckpt,
        history: trainer.history,
    })
}

/// Default trainer configuration for a dataset frame.
pub fn config_for_frame(width: usize, height: usize) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model.frame_width = width;
    c.model.frame_height = height;
    c.model.patch_side = DEFAULT_PATCH_SIDE;
    c
}
