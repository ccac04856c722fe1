//! Temporal contrastive objective with an EMA target network: online anchors
//! `q = g(f(x1))` are matched to target positives `k = f_bar(x2)` from a
//! nearby frame of a second augmented view.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bound, ContextVariant, Depth, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastVariant {
    #[default]
    RandTemp,
    FixTemp,
    NoTemp,
    Byol,
    Off,
}

impl ContrastVariant {
    pub const ALL: [ContrastVariant; 5] = [
        ContrastVariant::RandTemp,
        ContrastVariant::FixTemp,
        ContrastVariant::NoTemp,
        ContrastVariant::Byol,
        ContrastVariant::Off,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContrastVariant::RandTemp => "rand-temp",
            ContrastVariant::FixTemp => "fix-temp",
            ContrastVariant::NoTemp => "no-temp",
            ContrastVariant::Byol => "byol",
            ContrastVariant::Off => "off",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown contrastive variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    PreAttn,
    PostAttn,
    #[default]
    Both,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::PreAttn => "pre-attn",
            Placement::PostAttn => "post-attn",
            Placement::Both => "both",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        [Placement::PreAttn, Placement::PostAttn, Placement::Both]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown contrastive placement {s:?}")))
    }

    pub fn sites(self) -> &'static [Site] {
        match self {
            Placement::PreAttn => &[Site::Pre],
            Placement::PostAttn => &[Site::Post],
            Placement::Both => &[Site::Pre, Site::Post],
        }
    }
}

/// Feature location a contrastive term is computed at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    Pre,
    Post,
}

impl Site {
    fn key(self) -> &'static str {
        match self {
            Site::Pre => "pre",
            Site::Post => "post",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub variant: ContrastVariant,
    pub placement: Placement,
    pub window_k: usize,
    /// Offset used by `fix-temp`.
    pub fixed_step: usize,
    pub momentum: f64,
    pub latent: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            variant: ContrastVariant::RandTemp,
            placement: Placement::Both,
            window_k: 2,
            fixed_step: 1,
            momentum: 0.99,
            latent: 128,
        }
    }
}

impl ContrastConfig {
    pub fn enabled(&self) -> bool {
        self.variant != ContrastVariant::Off
    }

    pub fn validate(&self, context: ContextVariant) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("contrastive.momentum {} outside [0, 1]", self.momentum)));
        }
        if self.latent == 0 {
            return Err(Error::Config("contrastive latent dimension must be positive".into()));
        }
        if self.enabled() && self.placement != Placement::PreAttn && !context.has_attention() {
            return Err(Error::Config(format!(
                "contrastive.placement {} needs an attention context, not {}",
                self.placement.name(),
                context.name()
            )));
        }
        Ok(())
    }

    /// Sites with an active loss term.
    pub fn sites(&self) -> &'static [Site] {
        if self.enabled() {
            self.placement.sites()
        } else {
            &[]
        }
    }

    /// How deep the target network has to run.
    pub fn target_depth(&self) -> Depth {
        if self.sites().contains(&Site::Post) {
            Depth::Full
        } else {
            Depth::Encoder
        }
    }
}

/// Positive frame index for anchor `t` of a `len`-frame stream.
pub fn select_positive(t: usize, len: usize, cfg: &ContrastConfig, rng: &mut impl Rng) -> usize {
    assert!(t < len, "frame {t} outside stream of {len}");
    match cfg.variant {
        ContrastVariant::RandTemp => {
            let lo = t.saturating_sub(cfg.window_k);
            let hi = (t + cfg.window_k).min(len - 1);
            rng.random_range(lo..=hi)
        }
        ContrastVariant::FixTemp => (t + cfg.fixed_step).min(len - 1),
        ContrastVariant::NoTemp | ContrastVariant::Byol | ContrastVariant::Off => t,
    }
}

/// Positive index for each of the `B * (Td + To)` anchors, ordered per
/// sample as demo frames then observation frames.
pub fn positive_indices(batch: usize, td: usize, to: usize, cfg: &ContrastConfig, rng: &mut impl Rng) -> Vec<usize> {
    let per = td + to;
    let mut out = Vec::with_capacity(batch * per);
    for b in 0..batch {
        for t in 0..td {
            out.push(b * per + select_positive(t, td, cfg, rng));
        }
        for t in 0..to {
            out.push(b * per + td + select_positive(t, to, cfg, rng));
        }
    }
    out
}

fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[idx] - lse
}

/// Mean InfoNCE over anchors, where `logits[i][j]` scores anchor `i` against
/// key `j` and `positives[i]` names the positive key.
pub fn infonce_from_logits(logits: &[Vec<f64>], positives: &[usize]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::Contract(format!("InfoNCE needs at least 2 frames, got {}", logits.len())));
    }
    let total: f64 = logits.iter().zip(positives).map(|(row, &p)| -log_softmax_at(row, p)).sum();
    Ok(total / logits.len() as f64)
}

/// InfoNCE with bilinear similarity `q_i^T W k_j`; anchor `i` is paired with `k_i`.
pub fn bilinear_infonce(q: &[Vec<f64>], k: &[Vec<f64>], w: &[Vec<f64>]) -> Result<f64> {
    if q.len() != k.len() {
        return Err(Error::Contract("anchors and positives must pair up".into()));
    }
    let qw: Vec<Vec<f64>> = q
        .iter()
        .map(|qr| (0..w[0].len()).map(|j| qr.iter().zip(w).map(|(a, row)| a * row[j]).sum()).collect())
        .collect();
    let logits: Vec<Vec<f64>> =
        qw.iter().map(|r| k.iter().map(|kr| r.iter().zip(kr).map(|(a, b)| a * b).sum()).collect()).collect();
    let pos: Vec<usize> = (0..q.len()).collect();
    infonce_from_logits(&logits, &pos)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-8;
    v.iter().map(|x| x / n).collect()
}

/// Mean squared distance between normalised anchors and positives.
pub fn byol_regression(q: &[Vec<f64>], k: &[Vec<f64>]) -> f64 {
    let total: f64 = q
        .iter()
        .zip(k)
        .map(|(a, b)| unit(a).iter().zip(unit(b)).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum();
    total / q.len() as f64
}

/// Projector, predictor and bilinear matrix for every active site.
pub fn init_contrast_params<R: Real>(store: &mut ParamStore<R>, cfg: &ContrastConfig, channels: usize, rng: &mut impl Rng) {
    let d = cfg.latent;
    for site in cfg.sites() {
        let p = format!("contrast.{}", site.key());
        store.init_weight(&format!("{p}.f.w"), &[channels, d], channels, std::f64::consts::FRAC_1_SQRT_2, rng);
        store.init_zeros(&format!("{p}.f.b"), &[d]);
        store.init_weight(&format!("{p}.g.w"), &[d, d], d, std::f64::consts::FRAC_1_SQRT_2, rng);
        store.init_zeros(&format!("{p}.g.b"), &[d]);
        if cfg.variant != ContrastVariant::Byol {
            let mut eye = Tensor::zeros(&[d, d]);
            for i in 0..d {
                eye.data_mut()[i * d + i] = R::one();
            }
            store.insert(format!("{p}.W"), eye);
        }
    }
}

/// Whether the target network mirrors parameter `name`.
pub fn target_mirrors(cfg: &ContrastConfig, name: &str) -> bool {
    if name.starts_with("enc.") {
        return true;
    }
    if cfg.target_depth() == Depth::Full && (name.starts_with("attn.") || name.starts_with("ctx.")) {
        return true;
    }
    cfg.sites().iter().any(|s| name.starts_with(&format!("contrast.{}.f.", s.key())))
}

/// Gradient-free mirror of the online modules up to the contrast point.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetNetwork<R> {
    pub params: ParamStore<R>,
}

impl<R: Real> TargetNetwork<R> {
    /// `None` when the objective is disabled.
    pub fn from_online(online: &ParamStore<R>, cfg: &ContrastConfig) -> Option<Self> {
        cfg.enabled().then(|| TargetNetwork { params: online.subset(|n| target_mirrors(cfg, n)) })
    }

    pub fn ema_update(&mut self, online: &ParamStore<R>, momentum: f64) -> Result<()> {
        self.params.ema_from(online, momentum)
    }
}

/// Interleaves pooled demo `[B*Td, C]` and observation `[B*To, C]` features
/// into `[B*(Td+To), C]`, sample-major.
pub fn anchor_rows<R: Real>(g: &mut Graph<R>, demo: Var, obs: Var, batch: usize) -> Var {
    let c = g.shape(demo)[1];
    let td = g.shape(demo)[0] / batch;
    let to = g.shape(obs)[0] / batch;
    let d = g.reshape(demo, &[batch, td, c]);
    let o = g.reshape(obs, &[batch, to, c]);
    let all = g.concat(&[d, o], 1);
    g.reshape(all, &[batch * (td + to), c])
}

fn linear<R: Real>(g: &mut Graph<R>, b: &Bound, x: Var, prefix: &str) -> Var {
    let y = g.matmul(x, b.var(&format!("{prefix}.w")));
    g.add_bias(y, b.var(&format!("{prefix}.b")))
}

/// Per-sample contrastive loss `[B]` at one site, averaged over the
/// sample's anchors. `online_rows` and `target_rows` are `[F, C]` anchor
/// rows from [`anchor_rows`]; `target` must be bound without gradients.
#[allow(clippy::too_many_arguments)]
pub fn site_loss<R: Real>(
    g: &mut Graph<R>,
    online: &Bound,
    target: &Bound,
    site: Site,
    online_rows: Var,
    target_rows: Var,
    positives: &[usize],
    cfg: &ContrastConfig,
    batch: usize,
) -> Result<Var> {
    let f = g.shape(online_rows)[0];
    if f < 2 {
        return Err(Error::Contract(format!("contrastive loss needs at least 2 frames, got {f}")));
    }
    let p = format!("contrast.{}", site.key());
    let z1 = linear(g, online, online_rows, &format!("{p}.f"));
    let q = linear(g, online, z1, &format!("{p}.g"));
    let k = linear(g, target, target_rows, &format!("{p}.f"));
    let per_anchor = if cfg.variant == ContrastVariant::Byol {
        let kp = g.index_select(k, positives);
        let qn = g.l2_normalize(q, 1e-8);
        let kn = g.l2_normalize(kp, 1e-8);
        let diff = g.sub(qn, kn);
        let sq = g.mul(diff, diff);
        let d = g.shape(sq)[1];
        let m = g.mean_axis(sq, 1);
        g.scale(m, d as f64)
    } else {
        let qw = g.matmul(q, online.var(&format!("{p}.W")));
        let logits = g.matmul_t(qw, k, false, true);
        g.cross_entropy(logits, positives)
    };
    let per_sample = g.reshape(per_anchor, &[batch, f / batch]);
    Ok(g.mean_axis(per_sample, 1))
}
