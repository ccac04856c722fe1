use crate::tensor::{Graph, Real, Tensor, Var};

use super::params::Bound;

/// Sinusoidal table `[len, channels]`: `sin(p / 10000^(2i/C))` on even
/// channels, `cos` on odd ones.
pub fn positional_table(len: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * channels];
    for p in 0..len {
        for c in 0..channels {
            let i = c / 2;
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / channels as f64);
            out[p * channels + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Adds positions `0..L` to every row of `x: [N, L, C]`.
pub fn add_positions<R: Real>(g: &mut Graph<R>, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let table = positional_table(s[1], s[2]);
    let mut data = Vec::with_capacity(s[0] * table.len());
    for _ in 0..s[0] {
        data.extend(table.iter().map(|&v| R::c(v)));
    }
    let pe = g.constant(Tensor::new(&s, data));
    g.add(x, pe)
}

/// Reference `softmax(Q K^T / tau) V` on row-major matrices.
pub fn scaled_softmax_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    assert_eq!(k.len(), v.len(), "keys and values must pair up");
    q.iter()
        .map(|qr| {
            let logits: Vec<f64> = k.iter().map(|kr| qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() / tau).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let width = v.first().map_or(0, Vec::len);
            let mut out = vec![0.0; width];
            for (w, vr) in e.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vr) {
                    *o += w / z * x;
                }
            }
            out
        })
        .collect()
}

/// Token-wise linear map of `x: [N, L, Cin]`.
pub fn project<R: Real>(g: &mut Graph<R>, b: &Bound, x: Var, prefix: &str) -> Var {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0] * s[1], s[2]]);
    let w = b.var(&format!("{prefix}.w"));
    let y = g.matmul(flat, w);
    let y = g.add_bias(y, b.var(&format!("{prefix}.b")));
    let c = g.shape(y)[1];
    g.reshape(y, &[s[0], s[1], c])
}

fn split_heads<R: Real>(g: &mut Graph<R>, x: Var, heads: usize) -> Var {
    let s = g.shape(x).to_vec();
    let dh = s[2] / heads;
    let x = g.reshape(x, &[s[0], s[1], heads, dh]);
    let x = g.permute(x, &[0, 2, 1, 3]);
    g.reshape(x, &[s[0] * heads, s[1], dh])
}

fn merge_heads<R: Real>(g: &mut Graph<R>, x: Var, heads: usize) -> Var {
    let s = g.shape(x).to_vec();
    let n = s[0] / heads;
    let x = g.reshape(x, &[n, heads, s[1], s[2]]);
    let x = g.permute(x, &[0, 2, 1, 3]);
    g.reshape(x, &[n, s[1], heads * s[2]])
}

/// Multi-head `softmax(Q K^T / tau) V` for `q: [N, Lq, C]`, `k, v: [N, Lk, C]`.
pub fn multi_head<R: Real>(g: &mut Graph<R>, q: Var, k: Var, v: Var, heads: usize, tau: f64) -> Var {
    let (qh, kh, vh) = (split_heads(g, q, heads), split_heads(g, k, heads), split_heads(g, v, heads));
    let logits = g.bmm(qh, kh, false, true);
    let logits = g.scale(logits, 1.0 / tau);
    let w = g.softmax(logits);
    let o = g.bmm(w, vh, false, false);
    merge_heads(g, o, heads)
}

/// Shapes and settings shared by one attention stack.
#[derive(Clone, Copy, Debug)]
pub struct AttnDims {
    pub batch: usize,
    pub demo_frames: usize,
    pub obs_frames: usize,
    pub tokens: usize,
    pub heads: usize,
    pub tau: f64,
}

fn residual_out<R: Real>(g: &mut Graph<R>, b: &Bound, x: Var, attended: Var, layer: usize) -> Var {
    let o = project(g, b, attended, &format!("attn.{layer}.o"));
    g.add(x, o)
}

/// Self-attention over every demo position. `xd: [B, Td*HW, C]`.
pub fn demo_self_attention<R: Real>(g: &mut Graph<R>, b: &Bound, xd: Var, layer: usize, d: &AttnDims) -> Var {
    let q = project(g, b, xd, &format!("attn.{layer}.q"));
    let k = project(g, b, xd, &format!("attn.{layer}.k"));
    let v = project(g, b, xd, &format!("attn.{layer}.v"));
    let a = multi_head(g, q, k, v, d.heads, d.tau);
    residual_out(g, b, xd, a, layer)
}

/// Each observation frame attends to its own positions plus every demo
/// position, never to other observation frames. `xo: [B*To, HW, C]`,
/// `xd: [B, Td*HW, C]`.
pub fn observation_cross_attention<R: Real>(g: &mut Graph<R>, b: &Bound, xo: Var, xd: Var, layer: usize, d: &AttnDims) -> Var {
    let q = project(g, b, xo, &format!("attn.{layer}.q"));
    let ko = project(g, b, xo, &format!("attn.{layer}.k"));
    let vo = project(g, b, xo, &format!("attn.{layer}.v"));
    let kd = project(g, b, xd, &format!("attn.{layer}.k"));
    let vd = project(g, b, xd, &format!("attn.{layer}.v"));
    let owner: Vec<usize> = (0..d.batch * d.obs_frames).map(|i| i / d.obs_frames).collect();
    let kd = g.index_select(kd, &owner);
    let vd = g.index_select(vd, &owner);
    let k = g.concat(&[ko, kd], 1);
    let v = g.concat(&[vo, vd], 1);
    let a = multi_head(g, q, k, v, d.heads, d.tau);
    residual_out(g, b, xo, a, layer)
}

/// Observation attention with the inter-frame edges restored: every
/// observation position attends to all observation frames and the demo.
pub fn full_observation_attention<R: Real>(g: &mut Graph<R>, b: &Bound, xo: Var, xd: Var, layer: usize, d: &AttnDims) -> Var {
    let c = g.shape(xo)[2];
    let seq = g.reshape(xo, &[d.batch, d.obs_frames * d.tokens, c]);
    let q = project(g, b, seq, &format!("attn.{layer}.q"));
    let ko = project(g, b, seq, &format!("attn.{layer}.k"));
    let vo = project(g, b, seq, &format!("attn.{layer}.v"));
    let kd = project(g, b, xd, &format!("attn.{layer}.k"));
    let vd = project(g, b, xd, &format!("attn.{layer}.v"));
    let k = g.concat(&[ko, kd], 1);
    let v = g.concat(&[vo, vd], 1);
    let a = multi_head(g, q, k, v, d.heads, d.tau);
    let out = residual_out(g, b, seq, a, layer);
    g.reshape(out, &[d.batch * d.obs_frames, d.tokens, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let t = positional_table(2, 8);
        assert_eq!(&t[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((t[8] - 0.841_470_984_8).abs() < 1e-9);
    }

    #[test]
    fn distinct_positions() {
        let c = 128;
        let t = positional_table(10_000, c);
        let mut rows: Vec<Vec<u64>> = t.chunks(c).map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 10_000);
        // Nearest pair is still clearly apart.
        let min = (1..10_000)
            .map(|p| (0..c).map(|i| (t[p * c + i] - t[(p - 1) * c + i]).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!(min > 1e-6);
    }

    #[test]
    fn reference_attention() {
        let v = vec![vec![1.0, 2.0], vec![3.0, 6.0]];
        let out = scaled_softmax_attention(&[vec![5.0, 1.0]], &[vec![0.0, 0.0], vec![0.0, 0.0]], &v, 16.0);
        assert_eq!(out, vec![vec![2.0, 4.0]]);
        let out = scaled_softmax_attention(&[vec![9.0]], &[vec![3.0]], &[vec![7.0]], 16.0);
        assert_eq!(out, vec![vec![7.0]]);
        let out = scaled_softmax_attention(&[vec![1.0]], &[vec![16.0], vec![0.0]], &[vec![1.0], vec![0.0]], 16.0);
        assert!((out[0][0] - 0.731_058_578_6).abs() < 1e-9);
    }
}
