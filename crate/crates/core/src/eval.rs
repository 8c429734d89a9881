//! Placement metrics, reference baselines, and the evaluation report.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compositor::compose_image;
use crate::data::{make_training_example, Dataset, Split, TrainingExample};
use crate::error::{Error, Result};
use crate::features::ClassTable;
use crate::geometry::{warp_mask, Transform2D};
use crate::model::ModelState;
use crate::nn::{Graph, Tensor};
use crate::trainer::{infer_from_layout, reconstruct_transform, Latent};

/// Below this standard deviation a prediction series counts as constant.
pub const DEGENERATE_STD: f64 = 1e-6;
/// Minimum fraction of the contact region that must rest on support or object pixels.
pub const CONTACT_FRACTION: f64 = 0.8;
pub const FEATURE_NET_SEED: u64 = 1234;
pub const FEATURE_DIM: usize = 64;
const FEATURE_WIDTHS: [usize; 4] = [16, 32, 64, FEATURE_DIM];
const COVARIANCE_RIDGE: f64 = 1e-3;
const MIN_FID_IMAGES: usize = 20;
pub const MIN_CORRELATION_SAMPLES: usize = 30;

/// Per-parameter values over `(s, tx, ty)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamTriple {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl ParamTriple {
    fn from_array(a: [f64; 3]) -> Self {
        ParamTriple {
            s: a[0],
            tx: a[1],
            ty: a[2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// Zero when `degenerate`.
    pub r: f64,
    pub degenerate: bool,
}

/// Pearson correlation; a constant series yields `r = 0` with the degeneracy flag.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    assert_eq!(xs.len(), ys.len(), "pearson series differ in length");
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let (sdx, sdy) = ((sxx / n).sqrt(), (syy / n).sqrt());
    if xs.len() < 2 || !(sdx >= DEGENERATE_STD && sdy >= DEGENERATE_STD) {
        return Correlation {
            r: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Pearson r between `s` and `ty` over a set of placements.
pub fn scale_position_correlation(placements: &[Transform2D]) -> Result<Correlation> {
    if placements.len() < MIN_CORRELATION_SAMPLES {
        return Err(Error::Eval(format!(
            "correlation needs at least {MIN_CORRELATION_SAMPLES} samples, got {}",
            placements.len()
        )));
    }
    let s: Vec<f64> = placements.iter().map(|t| t.s).collect();
    let ty: Vec<f64> = placements.iter().map(|t| t.ty).collect();
    Ok(pearson(&s, &ty))
}

/// Per-parameter mean absolute error and mean `|ds| / s_gt`.
pub fn placement_mae(pairs: &[(Transform2D, Transform2D)]) -> Result<(ParamTriple, f64)> {
    if pairs.is_empty() {
        return Err(Error::Eval("no examples to evaluate".into()));
    }
    let mut sum = [0.0; 3];
    let mut rel = 0.0;
    for (pred, gt) in pairs {
        let (p, g) = (pred.params(), gt.params());
        for k in 0..3 {
            sum[k] += (p[k] - g[k]).abs();
        }
        rel += (p[0] - g[0]).abs() / g[0];
    }
    let n = pairs.len() as f64;
    Ok((ParamTriple::from_array(sum.map(|v| v / n)), rel / n))
}

/// Reconstruction error of `T_rec` against `T_gt`, with `z_tran` at the posterior mean.
pub fn transform_mae(state: &ModelState, examples: &[TrainingExample]) -> Result<(ParamTriple, f64)> {
    let mut pairs = Vec::with_capacity(examples.len());
    for ex in examples {
        let layout = state.layout_input(&ex.scene.layout)?;
        let object = state.object_input(&ex.asset)?;
        pairs.push((reconstruct_transform(state, layout, object, &ex.t_gt)?, ex.t_gt));
    }
    placement_mae(&pairs)
}

/// Whether the bottom quarter of the placed silhouette rests on support or object pixels.
///
/// The contact region is the lowest quarter of the in-frame rows the warped
/// silhouette covers. A silhouette entirely outside the frame is invalid.
pub fn placement_is_valid(example: &TrainingExample, t: &Transform2D) -> Result<bool> {
    let layout = &example.scene.layout;
    let table: &ClassTable = layout.class_table();
    let mut allowed = table.support_channels();
    allowed.extend(table.object_channel());
    if allowed.is_empty() {
        return Err(Error::ClassTable("no support class designated".into()));
    }
    let m = warp_mask(example.asset.silhouette.view(), t, layout.frame()?)?;
    let rows: Vec<usize> = m
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v > 0.5))
        .map(|(i, _)| i)
        .collect();
    let (Some(&top), Some(&bottom)) = (rows.first(), rows.last()) else {
        return Ok(false);
    };
    let start = bottom + 1 - (bottom + 1 - top).div_ceil(4);
    let ch = layout.channels();
    let (mut area, mut on) = (0usize, 0usize);
    for v in start..=bottom {
        for u in 0..m.dim().1 {
            if m[[v, u]] > 0.5 {
                area += 1;
                on += allowed.iter().any(|&c| ch[[c, v, u]] > 0.5) as usize;
            }
        }
    }
    Ok(area > 0 && on as f64 >= CONTACT_FRACTION * area as f64)
}

/// Fraction of valid placements; each placement refers to an example by index.
pub fn layout_validity_rate(examples: &[TrainingExample], placements: &[(usize, Transform2D)]) -> Result<f64> {
    if placements.is_empty() {
        return Err(Error::Eval("no placements to evaluate".into()));
    }
    let mut valid = 0usize;
    for (i, t) in placements {
        valid += placement_is_valid(&examples[*i], t)? as usize;
    }
    Ok(valid as f64 / placements.len() as f64)
}

/// Mean over examples of the per-parameter standard deviation across that example's samples.
pub fn diversity_std(placements: &[(usize, Transform2D)]) -> ParamTriple {
    let mut groups: std::collections::BTreeMap<usize, Vec<[f64; 3]>> = Default::default();
    for (i, t) in placements {
        groups.entry(*i).or_default().push(t.params());
    }
    let mut acc = [0.0; 3];
    for g in groups.values() {
        let n = g.len() as f64;
        for k in 0..3 {
            let m = g.iter().map(|p| p[k]).sum::<f64>() / n;
            acc[k] += (g.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / n).sqrt();
        }
    }
    let n = groups.len().max(1) as f64;
    ParamTriple::from_array(acc.map(|v| v / n))
}

/// Frozen random convolutional feature extractor used for the Fréchet distance.
#[derive(Clone, Debug)]
pub struct FeatureNet {
    layers: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl Default for FeatureNet {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureNet {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FEATURE_NET_SEED);
        let mut in_ch = 3;
        let layers = FEATURE_WIDTHS
            .iter()
            .map(|&out| {
                let fan_in = (in_ch * 16) as f32;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let w = (0..out * in_ch * 16).map(|_| normal.sample(&mut rng)).collect();
                let layer = (Tensor::new(vec![out, in_ch, 4, 4], w), Tensor::zeros(vec![out]));
                in_ch = out;
                layer
            })
            .collect();
        FeatureNet { layers }
    }

    /// `FEATURE_DIM` globally pooled activations of a `3 x H x W` image.
    pub fn features(&self, image: &Array3<f32>) -> Result<Vec<f64>> {
        let (c, h, w) = image.dim();
        if c != 3 || h < 16 || w < 16 {
            return Err(Error::Shape(format!(
                "feature net needs a 3 x H x W image with H, W >= 16, got {c}x{h}x{w}"
            )));
        }
        let mut g = Graph::<f32>::new();
        let mut x = g.constant(Tensor::new(vec![c, h, w], image.iter().copied().collect()));
        for (wt, b) in &self.layers {
            let (wn, bn) = (g.constant(wt.clone()), g.constant(b.clone()));
            let y = g.conv2d(x, wn, bn, 2, 1);
            x = g.leaky_relu(y, 0.2);
        }
        let f = g.global_avg_pool(x);
        Ok(g.value(f).data().iter().map(|&v| v as f64).collect())
    }
}

fn gaussian_fit(feats: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len();
    let d = feats[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| feats[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    if n < d / 4 {
        log::warn!("{n} samples for {d}-d features; adding a {COVARIANCE_RIDGE} ridge");
        for k in 0..d {
            cov[(k, k)] += COVARIANCE_RIDGE;
        }
    }
    (mu, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Eval(
            "Fréchet distance needs at least two samples per set".into(),
        ));
    }
    let (mu_a, cov_a) = gaussian_fit(a);
    let (mu_b, cov_b) = gaussian_fit(b);
    // Tr (A B)^{1/2} = Tr (A^{1/2} B A^{1/2})^{1/2}, whose argument is symmetric PSD.
    let sa = psd_sqrt(&cov_a);
    let inner = &sa * &cov_b * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

/// Fréchet distance between two image sets in [`FeatureNet`] space.
pub fn frechet_feature_distance(net: &FeatureNet, a: &[Array3<f32>], b: &[Array3<f32>]) -> Result<f64> {
    if a.len() < MIN_FID_IMAGES || b.len() < MIN_FID_IMAGES {
        return Err(Error::Eval(format!(
            "Fréchet distance needs at least {MIN_FID_IMAGES} images per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let fa = a.iter().map(|i| net.features(i)).collect::<Result<Vec<_>>>()?;
    let fb = b.iter().map(|i| net.features(i)).collect::<Result<Vec<_>>>()?;
    frechet_distance(&fa, &fb)
}

/// Reference placement strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// `s` uniform over the ground-truth scale range, translation uniform over the frame.
    Random,
    /// Mean ground-truth scale at the frame center.
    Center,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Baseline::Random),
            "center" => Ok(Baseline::Center),
            _ => Err(Error::Config(format!("unknown baseline {s:?}"))),
        }
    }
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Random => "random",
            Baseline::Center => "center",
        }
    }
}

/// `per_example` baseline placements for every example.
pub fn baseline_placements(
    examples: &[TrainingExample],
    kind: Baseline,
    per_example: usize,
    seed: u64,
) -> Result<Vec<(usize, Transform2D)>> {
    if examples.is_empty() {
        return Err(Error::Eval("no examples to evaluate".into()));
    }
    let scales: Vec<f64> = examples.iter().map(|e| e.t_gt.s).collect();
    let lo = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = scales.iter().sum::<f64>() / scales.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = Vec::with_capacity(examples.len() * per_example);
    for (i, ex) in examples.iter().enumerate() {
        let aspect = ex.scene.frame()?.aspect();
        for _ in 0..per_example {
            let t = match kind {
                Baseline::Random => Transform2D::new(
                    if hi > lo { rng.gen_range(lo..=hi) } else { lo },
                    rng.gen_range(-aspect..=aspect),
                    rng.gen_range(-1.0..=1.0),
                )?,
                Baseline::Center => Transform2D::new(mean, 0.0, 0.0)?,
            };
            out.push((i, t));
        }
    }
    Ok(out)
}

/// `per_example` generated placements per example, each with its own seeded latent.
pub fn sample_placements(
    state: &ModelState,
    examples: &[TrainingExample],
    per_example: usize,
    seed: u64,
) -> Result<Vec<(usize, Transform2D)>> {
    let mut out = Vec::with_capacity(examples.len() * per_example);
    for (i, ex) in examples.iter().enumerate() {
        let layout = state.layout_input(&ex.scene.layout)?;
        for k in 0..per_example {
            let latent = Latent::Seed(seed ^ ((i as u64) << 20) ^ k as u64);
            out.push((i, infer_from_layout(state, layout.clone(), &ex.asset, &latent)?));
        }
    }
    Ok(out)
}

/// Each example's object re-composited into its own scene, one image per example.
pub fn composed_images(examples: &[TrainingExample], placements: &[(usize, Transform2D)]) -> Result<Vec<Array3<f32>>> {
    let mut seen = vec![false; examples.len()];
    let mut out = Vec::new();
    for (i, t) in placements {
        if !std::mem::replace(&mut seen[*i], true) {
            out.push(compose_image(examples[*i].scene.image.view(), &examples[*i].asset, t)?);
        }
    }
    Ok(out)
}

/// Validation examples: scenes of `split` that hold an intact object.
pub fn load_examples(ds: &Dataset, split: Split, side: usize, limit: Option<usize>) -> Result<Vec<TrainingExample>> {
    let range = ds.indices(split);
    let n = limit.map_or(range.len(), |l| l.min(range.len()));
    let mut out = Vec::new();
    for i in range.take(n) {
        if let Some(ex) = make_training_example(ds.load(i)?, ds.meta.seed ^ i as u64, side)? {
            out.push(ex);
        }
    }
    if out.is_empty() {
        return Err(Error::Eval(format!("no usable {split:?} examples")));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Generated placements per example.
    pub samples_per_example: usize,
    pub max_examples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            samples_per_example: 4,
            max_examples: None,
        }
    }
}

/// Metrics of one placement strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementMetrics {
    pub transform_mae: ParamTriple,
    /// Mean `|ds| / s_gt`.
    pub relative_scale_error: f64,
    pub scale_position_correlation: Correlation,
    pub layout_validity_rate: f64,
    /// Against the real validation images; random-feature analogue, not an Inception FID.
    pub frechet_feature_distance: f64,
    pub diversity_std: ParamTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub kind: Baseline,
    #[serde(flatten)]
    pub metrics: PlacementMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: PlacementMetrics,
    /// Correlation of the ground-truth placements themselves.
    pub ground_truth_correlation: Correlation,
    pub ground_truth_validity_rate: f64,
    /// Distance of ground-truth re-composites from the real images.
    pub ground_truth_frechet_distance: f64,
    pub sample_count: usize,
    pub example_count: usize,
    pub seed: u64,
    /// SHA-256 of the model and evaluation configuration.
    pub config_hash: String,
    pub baseline: Option<BaselineReport>,
}

impl EvalReport {
    pub fn check_invariants(&self) -> Result<()> {
        let mut all = vec![&self.metrics];
        all.extend(self.baseline.as_ref().map(|b| &b.metrics));
        for m in all {
            if !(0.0..=1.0).contains(&m.layout_validity_rate) || !(-1.0..=1.0).contains(&m.scale_position_correlation.r)
            {
                return Err(Error::Eval("rate or correlation out of range".into()));
            }
        }
        Ok(())
    }
}

fn strategy_metrics(
    examples: &[TrainingExample],
    placements: &[(usize, Transform2D)],
    mae: (ParamTriple, f64),
    net: &FeatureNet,
    real: &[Array3<f32>],
) -> Result<PlacementMetrics> {
    let ts: Vec<Transform2D> = placements.iter().map(|p| p.1).collect();
    Ok(PlacementMetrics {
        transform_mae: mae.0,
        relative_scale_error: mae.1,
        scale_position_correlation: scale_position_correlation(&ts)?,
        layout_validity_rate: layout_validity_rate(examples, placements)?,
        frechet_feature_distance: frechet_feature_distance(net, real, &composed_images(examples, placements)?)?,
        diversity_std: diversity_std(placements),
    })
}

pub fn config_hash(state: &ModelState, cfg: &EvalConfig) -> Result<String> {
    let json = serde_json::to_string(&(state.config(), cfg)).map_err(|e| Error::Eval(e.to_string()))?;
    Ok(format!("{:x}", Sha256::digest(json.as_bytes())))
}

/// Full report for `state` on `examples`, optionally with a baseline block.
pub fn evaluate(
    state: &ModelState,
    examples: &[TrainingExample],
    cfg: &EvalConfig,
    baseline: Option<Baseline>,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Eval("no examples to evaluate".into()));
    }
    let k = cfg.samples_per_example.max(1);
    let net = FeatureNet::new();
    let real: Vec<Array3<f32>> = examples.iter().map(|e| e.scene.image.clone()).collect();
    let placements = sample_placements(state, examples, k, cfg.seed)?;
    let metrics = strategy_metrics(examples, &placements, transform_mae(state, examples)?, &net, &real)?;

    let gt: Vec<(usize, Transform2D)> = examples.iter().enumerate().map(|(i, e)| (i, e.t_gt)).collect();
    let gt_ts: Vec<Transform2D> = gt.iter().map(|p| p.1).collect();
    let baseline = baseline
        .map(|kind| -> Result<BaselineReport> {
            let bp = baseline_placements(examples, kind, k, cfg.seed)?;
            let pairs: Vec<_> = bp.iter().map(|(i, t)| (*t, examples[*i].t_gt)).collect();
            Ok(BaselineReport {
                kind,
                metrics: strategy_metrics(examples, &bp, placement_mae(&pairs)?, &net, &real)?,
            })
        })
        .transpose()?;
    let report = EvalReport {
        metrics,
        ground_truth_correlation: if gt_ts.len() >= 2 {
            pearson(
                &gt_ts.iter().map(|t| t.s).collect::<Vec<_>>(),
                &gt_ts.iter().map(|t| t.ty).collect::<Vec<_>>(),
            )
        } else {
            Correlation {
                r: 0.0,
                degenerate: true,
            }
        },
        ground_truth_validity_rate: layout_validity_rate(examples, &gt)?,
        ground_truth_frechet_distance: frechet_feature_distance(&net, &real, &composed_images(examples, &gt)?)?,
        sample_count: placements.len(),
        example_count: examples.len(),
        seed: cfg.seed,
        config_hash: config_hash(state, cfg)?,
        baseline,
    };
    report.check_invariants()?;
    Ok(report)
}
