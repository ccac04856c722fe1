//! Discretized logistic mixture over 256 bins per action dimension.

use rand::Rng;

use crate::error::{Error, Result};
use crate::simworld::Action;
use crate::tensor::{log_bin_prob, sigmoid, softplus, MixtureLayout};

pub const BINS: usize = 256;
pub const ACTION_DIMS: usize = 3;
pub const SCALE_FLOOR: f64 = 1e-2;

/// Layout used by both policy heads: raw outputs are scaled by half the bin
/// range so that unit-sized activations span the whole action range.
pub fn head_layout(components: usize) -> MixtureLayout {
    MixtureLayout {
        components,
        dims: ACTION_DIMS,
        bins: BINS,
        center: 127.5,
        scale: 127.5,
        floor: SCALE_FLOOR,
    }
}

/// Continuous action component in `[-1, 1]` to its bin, rounding half away from zero.
pub fn to_bin(a: f32) -> u8 {
    let x = ((a.clamp(-1.0, 1.0) as f64 + 1.0) / 2.0 * 255.0).round();
    x as u8
}

pub fn from_bin(bin: u8) -> f32 {
    (2.0 * bin as f64 / 255.0 - 1.0) as f32
}

pub fn action_bins(a: &Action) -> [u8; ACTION_DIMS] {
    a.to_array().map(to_bin)
}

/// `P(a | mu, s)` as the difference of logistic CDFs, tails absorbed at the edges.
pub fn bin_probability(a: usize, mu: f64, s: f64) -> f64 {
    let top = if a >= BINS - 1 { 1.0 } else { sigmoid((a as f64 + 0.5 - mu) / s) };
    let bottom = if a == 0 { 0.0 } else { sigmoid((a as f64 - 0.5 - mu) / s) };
    top - bottom
}

/// Per-dimension mixture parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    /// `alpha[d][i]`, each row on the simplex.
    pub alpha: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

impl MixtureParams {
    pub fn components(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    pub fn dims(&self) -> usize {
        self.alpha.len()
    }

    /// Decodes one raw head row laid out as `[alpha logits, mu, s]` per dimension.
    pub fn from_raw(raw: &[f64], layout: &MixtureLayout) -> MixtureParams {
        assert_eq!(raw.len(), layout.row_width(), "raw mixture row width");
        let m = layout.components;
        let mut out = MixtureParams { alpha: Vec::new(), mu: Vec::new(), s: Vec::new() };
        for d in 0..layout.dims {
            let base = d * 3 * m;
            let logits = &raw[base..base + m];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            out.alpha.push(e.iter().map(|v| v / z).collect());
            out.mu.push((0..m).map(|i| layout.center + layout.scale * raw[base + m + i]).collect());
            out.s.push((0..m).map(|i| layout.floor + layout.scale * softplus(raw[base + 2 * m + i])).collect());
        }
        out
    }

    /// `log P(bin)` in dimension `d`, evaluated without cancellation.
    pub fn log_probability(&self, d: usize, bin: usize) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|i| self.alpha[d][i].ln() + log_bin_prob(bin as f64, self.mu[d][i], self.s[d][i], (BINS - 1) as f64).0)
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Probability of `bin` in dimension `d`.
    pub fn probability(&self, d: usize, bin: usize) -> f64 {
        (0..self.components()).map(|i| self.alpha[d][i] * bin_probability(bin, self.mu[d][i], self.s[d][i])).sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Action {
        let mut out = [0.0f32; ACTION_DIMS];
        for (d, o) in out.iter_mut().enumerate().take(self.dims()) {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = self.components() - 1;
            for (i, a) in self.alpha[d].iter().enumerate() {
                acc += a;
                if u < acc {
                    comp = i;
                    break;
                }
            }
            let u = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
            let x = self.mu[d][comp] + self.s[d][comp] * (u / (1.0 - u)).ln();
            let bin = x.clamp(0.0, (BINS - 1) as f64).round() as u8;
            *o = from_bin(bin);
        }
        Action::from_array(out)
    }
}

/// `-log sum_i alpha_i P(a_d | mu_i, s_i)` summed over dimensions.
pub fn bc_loss(params: &MixtureParams, bins: &[usize]) -> Result<f64> {
    if bins.len() != params.dims() {
        return Err(Error::Contract(format!("{} bins for {} action dimensions", bins.len(), params.dims())));
    }
    let mut loss = 0.0;
    for (d, &b) in bins.iter().enumerate() {
        if b >= BINS {
            return Err(Error::Contract(format!("bin {b} outside 0..{}", BINS - 1)));
        }
        loss -= params.log_probability(d, b);
    }
    Ok(loss)
}

/// Inverse-CDF sample of the mixture, mapped back to a continuous action.
pub fn sample_action(params: &MixtureParams, rng: &mut impl Rng) -> Action {
    params.sample(rng)
}
