//! Demonstration-conditioned policy: residual conv encoder, sinusoidal
//! positions, demo self-attention, per-frame observation cross-attention and
//! two discretized-logistic-mixture heads. Context baselines swap out the
//! attention stack.

mod attention;
mod checkpoint;
mod mixture;
mod params;

pub use attention::{
    add_positions, demo_self_attention, full_observation_attention, multi_head, observation_cross_attention,
    positional_table, scaled_softmax_attention, AttnDims,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use mixture::{
    action_bins, bc_loss, bin_probability, from_bin, head_layout, sample_action, to_bin, MixtureParams, ACTION_DIMS,
    BINS, SCALE_FLOOR,
};
pub use params::{Bound, ParamStore};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simworld::{Observation, IMAGE_H, IMAGE_W};
use crate::tensor::{Graph, MixtureLayout, Real, Tensor, Var};

pub type PolicyParameters = ParamStore<f32>;

/// How observation features get their demonstration context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextVariant {
    #[default]
    MosaicAttn,
    FullAttn,
    Recurrent,
    Mlp,
}

impl ContextVariant {
    pub const ALL: [ContextVariant; 4] =
        [ContextVariant::MosaicAttn, ContextVariant::FullAttn, ContextVariant::Recurrent, ContextVariant::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ContextVariant::MosaicAttn => "mosaic-attn",
            ContextVariant::FullAttn => "full-attn",
            ContextVariant::Recurrent => "recurrent",
            ContextVariant::Mlp => "mlp",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown context variant {s:?}")))
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ContextVariant::MosaicAttn | ContextVariant::FullAttn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    /// Fixed logit divisor.
    pub temperature: f64,
    pub layers: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { heads: 4, temperature: 16.0, layers: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub attention: AttentionConfig,
    pub components: usize,
    pub hidden: usize,
    pub demo_frames: usize,
    pub variant: ContextVariant,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 128,
            attention: AttentionConfig::default(),
            components: 8,
            hidden: 256,
            demo_frames: crate::datagen::DEMO_FRAMES,
            variant: ContextVariant::MosaicAttn,
            image_h: IMAGE_H,
            image_w: IMAGE_W,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.attention;
        if self.channels < 4 || !self.channels.is_multiple_of(4) {
            return Err(Error::Config(format!("channels {} must be a positive multiple of 4", self.channels)));
        }
        if a.heads == 0 || !self.channels.is_multiple_of(a.heads) {
            return Err(Error::Config(format!("{} heads do not divide {} channels", a.heads, self.channels)));
        }
        if !(a.temperature > 0.0 && a.temperature.is_finite()) {
            return Err(Error::Config(format!("attention temperature {} must be positive", a.temperature)));
        }
        if self.variant.has_attention() && a.layers == 0 {
            return Err(Error::Config("attention variants need at least one layer".into()));
        }
        if self.components == 0 || self.hidden == 0 || self.demo_frames == 0 {
            return Err(Error::Config("components, hidden width and demo frames must be positive".into()));
        }
        if !self.image_h.is_multiple_of(8) || !self.image_w.is_multiple_of(8) || self.image_h == 0 || self.image_w == 0 {
            return Err(Error::Config("image sides must be positive multiples of 8".into()));
        }
        Ok(())
    }

    pub fn feature_hw(&self) -> (usize, usize) {
        (self.image_h / 8, self.image_w / 8)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.feature_hw();
        h * w
    }

    pub fn layout(&self) -> MixtureLayout {
        head_layout(self.components)
    }

    fn stage_channels(&self) -> [usize; 3] {
        [self.channels / 4, self.channels / 2, self.channels]
    }

    /// Width of the MLP baseline's context vector.
    fn mlp_context(&self) -> usize {
        2 * self.channels
    }
}

/// `[N, H, W, 3]` tensor in `[0, 1]` from 8-bit frames.
pub fn frames_tensor<R: Real>(frames: &[&Observation], h: usize, w: usize) -> Result<Tensor<R>> {
    let mut data = Vec::with_capacity(frames.len() * h * w * 3);
    for f in frames {
        if f.height != h || f.width != w || f.pixels.len() != h * w * 3 {
            return Err(Error::Shape(format!("expected {h}x{w}x3 frame, got {}x{}", f.height, f.width)));
        }
        data.extend(f.pixels.iter().map(|&p| R::c(p as f64 / 255.0)));
    }
    Ok(Tensor::new(&[frames.len(), h, w, 3], data))
}

/// How far a forward pass needs to go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Encoder,
    Full,
}

/// Tape handles produced by [`Policy::forward`]. Pooled features are
/// `[frames, C]`, ordered sample-major.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    pub demo_pre: Var,
    pub obs_pre: Var,
    /// Attended demo features, attention variants only.
    pub demo_post: Option<Var>,
    /// Context-conditioned observation features fed to the heads.
    pub obs_post: Option<Var>,
    /// Context-conditioned observation tokens `[B*To, HW, C]`.
    pub obs_tokens: Option<Var>,
}

/// Spatially resolved activations laid out `[B, C, T, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub batch: usize,
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    /// From tokens `[B*T, H*W, C]`.
    fn from_tokens(tokens: &[f64], batch: usize, frames: usize, height: usize, width: usize, channels: usize) -> Self {
        let (data, _) =
            crate::tensor::permute(tokens, &[batch, frames, height * width, channels], &[0, 3, 1, 2]);
        FeatureMap { batch, channels, frames, height, width, data }
    }

    pub fn shape(&self) -> [usize; 5] {
        [self.batch, self.channels, self.frames, self.height, self.width]
    }

    pub fn at(&self, b: usize, c: usize, t: usize, h: usize, w: usize) -> f64 {
        let [_, cc, tt, hh, ww] = self.shape();
        self.data[(((b * cc + c) * tt + t) * hh + h) * ww + w]
    }

    /// Channel vector at one position.
    pub fn frame_slice(&self, b: usize, t: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for c in 0..self.channels {
            for h in 0..self.height {
                for w in 0..self.width {
                    out.push(self.at(b, c, t, h, w));
                }
            }
        }
        out
    }
}

/// Network architecture. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Policy {
    pub config: ModelConfig,
}

fn linear<R: Real>(g: &mut Graph<R>, b: &Bound, x: Var, prefix: &str) -> Var {
    let y = g.matmul(x, b.var(&format!("{prefix}.w")));
    g.add_bias(y, b.var(&format!("{prefix}.b")))
}

fn mlp2<R: Real>(g: &mut Graph<R>, b: &Bound, x: Var, prefix: &str) -> Var {
    let h = linear(g, b, x, &format!("{prefix}.1"));
    let h = g.relu(h);
    linear(g, b, h, &format!("{prefix}.2"))
}

impl Policy {
    pub fn new(config: ModelConfig) -> Result<Policy> {
        config.validate()?;
        Ok(Policy { config })
    }

    /// Freshly initialised parameters, deterministic in `rng`.
    pub fn init_params<R: Real>(&self, rng: &mut impl Rng) -> ParamStore<R> {
        let c = &self.config;
        let mut p = ParamStore::new();
        let mut cin = 3;
        for (s, cout) in c.stage_channels().into_iter().enumerate() {
            p.init_weight(&format!("enc.{s}.conv1.w"), &[9 * cin, cout], 9 * cin, 1.0, rng);
            p.init_zeros(&format!("enc.{s}.conv1.b"), &[cout]);
            p.init_weight(&format!("enc.{s}.conv2.w"), &[9 * cout, cout], 9 * cout, 1.0, rng);
            p.init_zeros(&format!("enc.{s}.conv2.b"), &[cout]);
            p.init_weight(&format!("enc.{s}.skip.w"), &[cin, cout], cin, 1.0, rng);
            p.init_zeros(&format!("enc.{s}.skip.b"), &[cout]);
            cin = cout;
        }
        let ch = c.channels;
        let lin = |p: &mut ParamStore<R>, name: &str, i: usize, o: usize, gain: f64, rng: &mut _| {
            p.init_weight(&format!("{name}.w"), &[i, o], i, gain, rng);
            p.init_zeros(&format!("{name}.b"), &[o]);
        };
        match c.variant {
            ContextVariant::MosaicAttn | ContextVariant::FullAttn => {
                for l in 0..c.attention.layers {
                    for k in ["q", "k", "v", "o"] {
                        lin(&mut p, &format!("attn.{l}.{k}"), ch, ch, std::f64::consts::FRAC_1_SQRT_2, rng);
                    }
                }
            }
            ContextVariant::Recurrent => {
                lin(&mut p, "ctx.in", ch, ch, 1.0, rng);
                p.init_weight("ctx.lstm.wx", &[ch, 4 * ch], ch, std::f64::consts::FRAC_1_SQRT_2, rng);
                p.init_weight("ctx.lstm.wh", &[ch, 4 * ch], ch, std::f64::consts::FRAC_1_SQRT_2, rng);
                p.init_zeros("ctx.lstm.b", &[4 * ch]);
                lin(&mut p, "ctx.fuse", 2 * ch, ch, 1.0, rng);
            }
            ContextVariant::Mlp => {
                let k = c.mlp_context();
                lin(&mut p, "ctx.mlp", c.demo_frames * ch, k, 1.0, rng);
                lin(&mut p, "ctx.fuse", ch + k, ch, 1.0, rng);
            }
        }
        let out = c.layout().row_width();
        lin(&mut p, "head.act.1", ch, c.hidden, 1.0, rng);
        lin(&mut p, "head.act.2", c.hidden, out, 0.05, rng);
        lin(&mut p, "head.inv.1", 2 * ch, c.hidden, 1.0, rng);
        lin(&mut p, "head.inv.2", c.hidden, out, 0.05, rng);
        p
    }

    /// Scalar count of the policy parameters (heads included).
    pub fn parameter_count<R: Real>(params: &ParamStore<R>) -> usize {
        params.count(|n| n.starts_with("enc.") || n.starts_with("attn.") || n.starts_with("ctx.") || n.starts_with("head."))
    }

    /// Config error unless `params` holds every policy tensor with the shape
    /// this architecture expects.
    pub fn check_params<R: Real>(&self, params: &ParamStore<R>) -> Result<()> {
        let reference = self.init_params::<f32>(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        for (name, t) in reference.iter() {
            match params.get(name) {
                None => {
                    return Err(Error::Config(format!("parameters lack {name} required by variant {}", self.config.variant.name())))
                }
                Some(p) if p.shape() != t.shape() => {
                    return Err(Error::Config(format!("{name} has shape {:?}, model expects {:?}", p.shape(), t.shape())))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Residual encoder: `[N, H, W, 3]` to tokens `[N, HW/64, C]`.
    pub fn encode_tokens<R: Real>(&self, g: &mut Graph<R>, b: &Bound, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != self.config.image_h || s[2] != self.config.image_w || s[3] != 3 {
            return Err(Error::Shape(format!(
                "encoder expects [N, {}, {}, 3], got {s:?}",
                self.config.image_h, self.config.image_w
            )));
        }
        let mut x = images;
        for st in 0..3 {
            let p = |k: &str| b.var(&format!("enc.{st}.{k}"));
            let y = g.conv2d(x, p("conv1.w"), p("conv1.b"), 3, 2, 1);
            let y = g.relu(y);
            let y = g.conv2d(y, p("conv2.w"), p("conv2.b"), 3, 1, 1);
            let skip = g.conv2d(x, p("skip.w"), p("skip.b"), 1, 2, 0);
            let sum = g.add(y, skip);
            x = g.relu(sum);
        }
        let s = g.shape(x).to_vec();
        Ok(g.reshape(x, &[s[0], s[1] * s[2], s[3]]))
    }

    /// Runs the network on `batch` samples with `demo: [B*Td, H, W, 3]` and
    /// `obs: [B*To, H, W, 3]`.
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, b: &Bound, demo: Var, obs: Var, batch: usize, depth: Depth) -> Result<Features> {
        let c = &self.config;
        let td = c.demo_frames;
        let nd = g.shape(demo)[0];
        let no = g.shape(obs)[0];
        if nd != batch * td || batch == 0 || !no.is_multiple_of(batch) || no == 0 {
            return Err(Error::Shape(format!(
                "forward got {nd} demo and {no} observation frames for batch {batch} with {td} demo frames"
            )));
        }
        let to = no / batch;
        let hw = c.tokens();
        let ch = c.channels;
        let demo_tok = self.encode_tokens(g, b, demo)?;
        let obs_tok = self.encode_tokens(g, b, obs)?;
        let demo_pre = g.mean_axis(demo_tok, 1);
        let obs_pre = g.mean_axis(obs_tok, 1);
        let mut f = Features { demo_pre, obs_pre, demo_post: None, obs_post: None, obs_tokens: None };
        if depth == Depth::Encoder {
            return Ok(f);
        }
        match c.variant {
            ContextVariant::MosaicAttn | ContextVariant::FullAttn => {
                let xd = g.reshape(demo_tok, &[batch, td * hw, ch]);
                let mut xd = add_positions(g, xd);
                let mut xo = add_positions(g, obs_tok);
                let dims = AttnDims {
                    batch,
                    demo_frames: td,
                    obs_frames: to,
                    tokens: hw,
                    heads: c.attention.heads,
                    tau: c.attention.temperature,
                };
                for l in 0..c.attention.layers {
                    xd = demo_self_attention(g, b, xd, l, &dims);
                    xo = if c.variant == ContextVariant::MosaicAttn {
                        observation_cross_attention(g, b, xo, xd, l, &dims)
                    } else {
                        full_observation_attention(g, b, xo, xd, l, &dims)
                    };
                }
                let xd_frames = g.reshape(xd, &[batch * td, hw, ch]);
                f.demo_post = Some(g.mean_axis(xd_frames, 1));
                f.obs_post = Some(g.mean_axis(xo, 1));
                f.obs_tokens = Some(xo);
            }
            ContextVariant::Recurrent => {
                let e = linear(g, b, demo_pre, "ctx.in");
                let e = g.relu(e);
                let e = g.reshape(e, &[batch, td, ch]);
                let mut h = g.constant(Tensor::zeros(&[batch, ch]));
                let mut cell = g.constant(Tensor::zeros(&[batch, ch]));
                let (wx, wh, bias) = (b.var("ctx.lstm.wx"), b.var("ctx.lstm.wh"), b.var("ctx.lstm.b"));
                for t in 0..td {
                    let xt = g.narrow(e, 1, t, 1);
                    let xt = g.reshape(xt, &[batch, ch]);
                    let gx = g.matmul(xt, wx);
                    let gh = g.matmul(h, wh);
                    let gates = g.add(gx, gh);
                    let gates = g.add_bias(gates, bias);
                    let gi = g.narrow(gates, 1, 0, ch);
                    let gf = g.narrow(gates, 1, ch, ch);
                    let gg = g.narrow(gates, 1, 2 * ch, ch);
                    let go = g.narrow(gates, 1, 3 * ch, ch);
                    let (i, fg, o) = (g.sigmoid(gi), g.sigmoid(gf), g.sigmoid(go));
                    let gg = g.tanh(gg);
                    let keep = g.mul(fg, cell);
                    let write = g.mul(i, gg);
                    cell = g.add(keep, write);
                    let tc = g.tanh(cell);
                    h = g.mul(o, tc);
                }
                f.obs_post = Some(self.fuse(g, b, obs_pre, h, batch, to));
            }
            ContextVariant::Mlp => {
                let stacked = g.reshape(demo_pre, &[batch, td * ch]);
                let k = linear(g, b, stacked, "ctx.mlp");
                let k = g.relu(k);
                f.obs_post = Some(self.fuse(g, b, obs_pre, k, batch, to));
            }
        }
        Ok(f)
    }

    /// Concatenates a per-sample context vector to every observation frame.
    fn fuse<R: Real>(&self, g: &mut Graph<R>, b: &Bound, obs_pre: Var, context: Var, batch: usize, to: usize) -> Var {
        let owner: Vec<usize> = (0..batch * to).map(|i| i / to).collect();
        let ctx = g.index_select(context, &owner);
        let joined = g.concat(&[obs_pre, ctx], 1);
        let y = linear(g, b, joined, "ctx.fuse");
        g.relu(y)
    }

    /// Raw action-head rows `[N, row_width]` from pooled features `[N, C]`.
    pub fn action_head<R: Real>(&self, g: &mut Graph<R>, b: &Bound, pooled: Var) -> Var {
        mlp2(g, b, pooled, "head.act")
    }

    /// Raw inverse-dynamics rows `[B*(To-1), row_width]` from pooled
    /// features `[B*To, C]` of consecutive frames.
    pub fn inverse_head<R: Real>(&self, g: &mut Graph<R>, b: &Bound, pooled: Var, batch: usize) -> Result<Var> {
        let n = g.shape(pooled)[0];
        let to = n / batch;
        if to < 2 {
            return Err(Error::Shape("inverse dynamics needs at least two observation frames".into()));
        }
        let ch = self.config.channels;
        let x = g.reshape(pooled, &[batch, to, ch]);
        let a = g.narrow(x, 1, 0, to - 1);
        let c = g.narrow(x, 1, 1, to - 1);
        let pair = g.concat(&[a, c], 2);
        let pair = g.reshape(pair, &[batch * (to - 1), 2 * ch]);
        Ok(mlp2(g, b, pair, "head.inv"))
    }

    /// Encoder output for `frames[b][t]` as a `[B, C, T, H, W]` map.
    pub fn encode(&self, params: &ParamStore<f64>, frames: &[Vec<Observation>]) -> Result<FeatureMap> {
        let t = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != t) || t == 0 {
            return Err(Error::Shape("every sample needs the same nonzero frame count".into()));
        }
        let flat: Vec<&Observation> = frames.iter().flatten().collect();
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let x = g.constant(frames_tensor(&flat, self.config.image_h, self.config.image_w)?);
        let tok = self.encode_tokens(&mut g, &b, x)?;
        let (h, w) = self.config.feature_hw();
        Ok(FeatureMap::from_tokens(g.value(tok).data(), frames.len(), t, h, w, self.config.channels))
    }

    /// Mixture parameters for the last frame of `obs`, conditioned on `demo`.
    pub fn act<R: Real>(&self, params: &ParamStore<R>, demo: &[Observation], obs: &Observation) -> Result<MixtureParams> {
        if demo.len() != self.config.demo_frames {
            return Err(Error::Shape(format!("expected {} demo frames, got {}", self.config.demo_frames, demo.len())));
        }
        let (h, w) = (self.config.image_h, self.config.image_w);
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let d = g.constant(frames_tensor(&demo.iter().collect::<Vec<_>>(), h, w)?);
        let o = g.constant(frames_tensor(&[obs], h, w)?);
        let f = self.forward(&mut g, &b, d, o, 1, Depth::Full)?;
        let raw = self.action_head(&mut g, &b, f.obs_post.expect("full depth"));
        let row: Vec<f64> = g.value(raw).data().iter().map(|v| v.f64()).collect();
        Ok(MixtureParams::from_raw(&row, &self.config.layout()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_shape_and_purity() {
        let policy = Policy::new(ModelConfig::default()).unwrap();
        let params = policy.init_params::<f64>(&mut ChaCha8Rng::seed_from_u64(0));
        let black = Observation::blank(IMAGE_H, IMAGE_W, [0, 0, 0]);
        let white = Observation::blank(IMAGE_H, IMAGE_W, [255, 255, 255]);
        let frames = vec![vec![black.clone(), white.clone(), black.clone(), white.clone()]; 2];
        let fm = policy.encode(&params, &frames).unwrap();
        assert_eq!(fm.shape(), [2, 128, 4, 6, 9]);
        assert_eq!(fm.frame_slice(0, 0), fm.frame_slice(1, 2));
        assert_ne!(fm.frame_slice(0, 0), fm.frame_slice(0, 1));
    }

    #[test]
    fn wrong_resolution_is_shape_error() {
        let policy = Policy::new(ModelConfig::default()).unwrap();
        let params = policy.init_params::<f64>(&mut ChaCha8Rng::seed_from_u64(0));
        let small = Observation::blank(24, 36, [0, 0, 0]);
        assert!(matches!(policy.encode(&params, &[vec![small]]), Err(Error::Shape(_))));
    }

    #[test]
    fn baseline_parameter_parity() {
        for layers in [2, 3] {
            let count = |variant| {
                let mut cfg = ModelConfig { variant, ..ModelConfig::default() };
                cfg.attention.layers = layers;
                let p = Policy::new(cfg).unwrap().init_params::<f32>(&mut ChaCha8Rng::seed_from_u64(0));
                Policy::parameter_count(&p) as f64
            };
            let base = count(ContextVariant::MosaicAttn);
            for v in [ContextVariant::FullAttn, ContextVariant::Recurrent, ContextVariant::Mlp] {
                let r = count(v) / base;
                assert!((0.8..=1.2).contains(&r), "{v:?} with {layers} layers: ratio {r}");
            }
        }
    }

    #[test]
    fn unknown_variant() {
        assert!(matches!(ContextVariant::from_name("transformer"), Err(Error::Config(_))));
        assert_eq!(ContextVariant::from_name("full-attn").unwrap(), ContextVariant::FullAttn);
    }
}
