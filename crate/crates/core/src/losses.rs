//! VAE and adversarial objectives. Scalar versions operate on plain numbers;
//! the `*_node` builders produce the same quantities on a [`Graph`].
//!
//! Sign convention: every loss here is minimized. Discriminator losses are the
//! negated log-likelihood objectives; generator adversarial terms use the
//! non-saturating form `-log D(fake)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Transform2D;
use crate::nn::{Graph, NodeId, Real};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the VAE terms (reconstruction + KL).
    pub alpha: f64,
    /// Weight of the layout adversarial terms.
    pub beta: f64,
    pub use_vae: bool,
    pub use_d_affine: bool,
    pub use_d_layout: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.5,
            beta: 1.0,
            use_vae: true,
            use_d_affine: true,
            use_d_layout: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn with_ablation(self, a: Ablation) -> Self {
        let (use_vae, use_d_affine, use_d_layout) = match a {
            Ablation::GanOnly => (false, true, true),
            Ablation::VaeOnly => (true, false, false),
            Ablation::VaeDAffine => (true, true, false),
            Ablation::VaeDLayout => (true, false, true),
            Ablation::Full => (true, true, true),
        };
        LossWeights {
            use_vae,
            use_d_affine,
            use_d_layout,
            ..self
        }
    }
}

/// Loss-term subsets used for the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    GanOnly,
    VaeOnly,
    VaeDAffine,
    VaeDLayout,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::GanOnly,
        Ablation::VaeOnly,
        Ablation::VaeDAffine,
        Ablation::VaeDLayout,
        Ablation::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::GanOnly => "gan_only",
            Ablation::VaeOnly => "vae_only",
            Ablation::VaeDAffine => "vae_daffine",
            Ablation::VaeDLayout => "vae_dlayout",
            Ablation::Full => "full",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Scalar losses of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub vae_recon: f64,
    pub kl: f64,
    pub d_affine: f64,
    pub g_affine: f64,
    pub d_layout: f64,
    pub g_layout: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl StepLosses {
    pub const FIELDS: [&'static str; 8] = [
        "vae_recon",
        "kl",
        "d_affine",
        "g_affine",
        "d_layout",
        "g_layout",
        "total_g",
        "total_d",
    ];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.vae_recon,
            self.kl,
            self.d_affine,
            self.g_affine,
            self.d_layout,
            self.g_layout,
            self.total_g,
            self.total_d,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        StepLosses {
            vae_recon: a[0],
            kl: a[1],
            d_affine: a[2],
            g_affine: a[3],
            d_layout: a[4],
            g_layout: a[5],
            total_g: a[6],
            total_d: a[7],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `KL(N(mu, exp(log_var)) || N(0, I))`.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// `(recon, kl)` with recon the squared L2 distance over `(s, tx, ty)`.
pub fn vae_loss(t_rec: &Transform2D, t_gt: &Transform2D, mu: &[f64], log_var: &[f64]) -> Result<(f64, f64)> {
    t_rec.validate()?;
    t_gt.validate()?;
    if mu.len() != log_var.len() {
        return Err(Error::Shape(format!("mu {} vs log_var {}", mu.len(), log_var.len())));
    }
    let recon = t_rec
        .params()
        .iter()
        .zip(t_gt.params())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((recon, kl_divergence(mu, log_var)))
}

/// Scores ordered `[T_gt, T_rec, T_gen, T_gen']`; returns `(d_loss, g_loss)`.
pub fn affine_gan_losses(scores: &[f64; 4]) -> (f64, f64) {
    gan_losses(scores[0], &scores[1..])
}

/// Scores ordered `[gt layout, gen layout, gen' layout]`; returns `(d_loss, g_loss)`.
pub fn layout_gan_losses(scores: &[f64; 3]) -> (f64, f64) {
    gan_losses(scores[0], &scores[1..])
}

fn gan_losses(real: f64, fakes: &[f64]) -> (f64, f64) {
    let d = -clamp_prob(real).ln() - fakes.iter().map(|&f| (1.0 - clamp_prob(f)).ln()).sum::<f64>();
    let g = -fakes.iter().map(|&f| clamp_prob(f).ln()).sum::<f64>();
    (d, g)
}

/// `(total_g, total_d)` with toggled-off terms contributing zero.
pub fn total_losses(step: &StepLosses, w: &LossWeights) -> (f64, f64) {
    let on = |b: bool, v: f64| if b { v } else { 0.0 };
    let total_g = on(w.use_d_affine, step.g_affine)
        + w.beta * on(w.use_d_layout, step.g_layout)
        + w.alpha * on(w.use_vae, step.vae_recon + step.kl);
    let total_d = on(w.use_d_affine, step.d_affine) + w.beta * on(w.use_d_layout, step.d_layout);
    (total_g, total_d)
}

/// Squared L2 distance between two `(s, tx, ty)` nodes.
pub fn recon_node<T: Real>(g: &mut Graph<T>, rec: NodeId, gt: NodeId) -> NodeId {
    let d = g.sub(rec, gt);
    let sq = g.square(d);
    g.sum(sq)
}

pub fn kl_node<T: Real>(g: &mut Graph<T>, mu: NodeId, log_var: NodeId) -> NodeId {
    let m2 = g.square(mu);
    let ev = g.exp(log_var);
    let a = g.add(m2, ev);
    let b = g.sub(a, log_var);
    let s = g.sum(b);
    g.affine(s, 0.5, -0.5 * g.value(mu).len() as f64)
}

/// `-log clamp(p)`.
pub fn neg_log_node<T: Real>(g: &mut Graph<T>, p: NodeId) -> NodeId {
    let l = g.ln_clamped(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    g.scale(l, -1.0)
}

/// `-log clamp(1 - p)`.
pub fn neg_log_complement_node<T: Real>(g: &mut Graph<T>, p: NodeId) -> NodeId {
    // clamp(1 - p) equals 1 - clamp(p) for the symmetric clamp interval.
    let q = g.one_minus(p);
    neg_log_node(g, q)
}

/// Discriminator loss `-log D(real) - sum log(1 - D(fake))`.
pub fn d_loss_node<T: Real>(g: &mut Graph<T>, real: NodeId, fakes: &[NodeId]) -> NodeId {
    let mut terms = vec![neg_log_node(g, real)];
    for &f in fakes {
        terms.push(neg_log_complement_node(g, f));
    }
    g.add_all(&terms)
}

/// Non-saturating generator loss `-sum log D(fake)`.
pub fn g_loss_node<T: Real>(g: &mut Graph<T>, fakes: &[NodeId]) -> NodeId {
    let terms: Vec<_> = fakes.iter().map(|&f| neg_log_node(g, f)).collect();
    g.add_all(&terms)
}
