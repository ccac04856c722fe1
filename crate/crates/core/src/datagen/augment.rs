use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::simworld::Observation;

/// Augmentation magnitudes. Every field at zero is the exact identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Maximum shift as a fraction of the image side.
    pub translate: f64,
    /// Maximum fraction of each side trimmed by the crop (retain >= 1 - crop).
    pub crop: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Odd Gaussian kernel width; values <= 1 disable blurring.
    pub blur_kernel: usize,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translate: 0.05,
            crop: 0.1,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            blur_kernel: 3,
            blur_sigma_min: 0.1,
            blur_sigma_max: 0.8,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            translate: 0.0,
            crop: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            blur_kernel: 0,
            blur_sigma_min: 0.0,
            blur_sigma_max: 0.0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let mags = [
            self.translate,
            self.crop,
            self.brightness,
            self.contrast,
            self.saturation,
            self.blur_sigma_min,
            self.blur_sigma_max,
        ];
        if mags.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(crate::Error::Config("augmentation magnitudes must be finite and >= 0".into()));
        }
        if self.translate >= 0.5 || self.crop >= 1.0 || self.brightness >= 1.0 || self.contrast >= 1.0 {
            return Err(crate::Error::Config("augmentation magnitude out of range".into()));
        }
        if self.blur_sigma_min > self.blur_sigma_max {
            return Err(crate::Error::Config("blur sigma range is inverted".into()));
        }
        if self.blur_kernel > 1 && self.blur_kernel.is_multiple_of(2) {
            return Err(crate::Error::Config("blur kernel width must be odd".into()));
        }
        Ok(())
    }
}

/// One random draw, shared by every frame it is applied to.
#[derive(Clone, Copy, Debug)]
struct Draw {
    shift: (isize, isize),
    crop: Option<(f64, f64, f64, f64)>,
    jitter: Option<(f64, f64, f64)>,
    sigma: Option<f64>,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn draw(c: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Draw {
    let max_dx = (c.translate * w as f64).round() as i64;
    let max_dy = (c.translate * h as f64).round() as i64;
    let shift = (rng.random_range(-max_dx..=max_dx) as isize, rng.random_range(-max_dy..=max_dy) as isize);
    let crop = (c.crop > 0.0).then(|| {
        let retain = 1.0 - uniform(rng, 0.0, c.crop);
        let (ch, cw) = (retain * h as f64, retain * w as f64);
        let y0 = uniform(rng, 0.0, h as f64 - ch);
        let x0 = uniform(rng, 0.0, w as f64 - cw);
        (y0, x0, ch, cw)
    });
    let jitter = (c.brightness > 0.0 || c.contrast > 0.0 || c.saturation > 0.0).then(|| {
        (
            uniform(rng, 1.0 - c.brightness, 1.0 + c.brightness),
            uniform(rng, 1.0 - c.contrast, 1.0 + c.contrast),
            uniform(rng, 1.0 - c.saturation, 1.0 + c.saturation),
        )
    });
    let sigma = (c.blur_kernel > 1 && c.blur_sigma_max > 0.0)
        .then(|| uniform(rng, c.blur_sigma_min, c.blur_sigma_max))
        .filter(|s| *s > 0.0);
    Draw { shift, crop, jitter, sigma }
}

fn translate(img: &Observation, (dx, dy): (isize, isize)) -> Observation {
    let (h, w) = (img.height as isize, img.width as isize);
    let mut out = img.clone();
    for r in 0..h {
        let sr = (r - dy).clamp(0, h - 1);
        for c in 0..w {
            let sc = (c - dx).clamp(0, w - 1);
            let s = ((sr * w + sc) * 3) as usize;
            let d = ((r * w + c) * 3) as usize;
            out.pixels[d..d + 3].copy_from_slice(&img.pixels[s..s + 3]);
        }
    }
    out
}

/// Bilinear resample of the window `(y0, x0, ch, cw)` back to full size.
fn crop_resize(img: &Observation, (y0, x0, ch, cw): (f64, f64, f64, f64)) -> Observation {
    let (h, w) = (img.height, img.width);
    let mut out = img.clone();
    let at = |r: usize, c: usize, k: usize| img.pixels[(r * w + c) * 3 + k] as f64;
    for r in 0..h {
        let sy = (y0 + (r as f64 + 0.5) * ch / h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (r0, fy) = (sy.floor() as usize, sy - sy.floor());
        let r1 = (r0 + 1).min(h - 1);
        for c in 0..w {
            let sx = (x0 + (c as f64 + 0.5) * cw / w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let (c0, fx) = (sx.floor() as usize, sx - sx.floor());
            let c1 = (c0 + 1).min(w - 1);
            for k in 0..3 {
                let top = at(r0, c0, k) * (1.0 - fx) + at(r0, c1, k) * fx;
                let bot = at(r1, c0, k) * (1.0 - fx) + at(r1, c1, k) * fx;
                out.pixels[(r * w + c) * 3 + k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

fn gray(p: &[f64]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn jitter(img: &Observation, (b, c, s): (f64, f64, f64)) -> Observation {
    let mut px: Vec<f64> = img.pixels.iter().map(|&v| v as f64 * b).collect();
    let n = px.len() / 3;
    let mean = px.chunks(3).map(gray).sum::<f64>() / n as f64;
    for p in px.chunks_mut(3) {
        for v in p.iter_mut() {
            *v = (*v - mean) * c + mean;
        }
        let g = gray(p);
        for v in p.iter_mut() {
            *v = (*v - g) * s + g;
        }
    }
    let mut out = img.clone();
    for (o, v) in out.pixels.iter_mut().zip(px) {
        *o = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

fn blur(img: &Observation, kernel: usize, sigma: f64) -> Observation {
    let half = (kernel / 2) as isize;
    let weights: Vec<f64> = (-half..=half).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = weights.iter().sum();
    let (h, w) = (img.height as isize, img.width as isize);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for r in 0..h {
            for c in 0..w {
                for k in 0..3 {
                    let mut acc = 0.0;
                    for (j, wt) in weights.iter().enumerate() {
                        let o = j as isize - half;
                        let (rr, cc) = if horizontal {
                            (r, (c + o).clamp(0, w - 1))
                        } else {
                            ((r + o).clamp(0, h - 1), c)
                        };
                        acc += wt * src[((rr * w + cc) * 3) as usize + k];
                    }
                    dst[((r * w + c) * 3) as usize + k] = acc / norm;
                }
            }
        }
        dst
    };
    let src: Vec<f64> = img.pixels.iter().map(|&v| v as f64).collect();
    let tmp = pass(&src, true);
    let res = pass(&tmp, false);
    let mut out = img.clone();
    for (o, v) in out.pixels.iter_mut().zip(res) {
        *o = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Translate, crop-and-resize, color jitter, then blur, with one random draw
/// shared by every image of the stack.
pub fn augment(images: &[Observation], config: &AugmentConfig, rng: &mut impl Rng) -> Vec<Observation> {
    let Some(first) = images.first() else { return Vec::new() };
    let d = draw(config, first.height, first.width, rng);
    images
        .iter()
        .map(|img| {
            let mut out = if d.shift != (0, 0) { translate(img, d.shift) } else { img.clone() };
            if let Some(win) = d.crop {
                out = crop_resize(&out, win);
            }
            if let Some(j) = d.jitter {
                out = jitter(&out, j);
            }
            if let Some(s) = d.sigma {
                out = blur(&out, config.blur_kernel, s);
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut o = Observation::blank(12, 18, [0, 0, 0]);
        o.pixels.iter_mut().for_each(|p| *p = rng.random());
        o
    }

    #[test]
    fn identity_config_is_exact() {
        let imgs = vec![noise(1), noise(2)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&imgs, &AugmentConfig::identity(), &mut rng), imgs);
    }

    #[test]
    fn full_window_crop_is_identity() {
        let img = noise(4);
        assert_eq!(crop_resize(&img, (0.0, 0.0, 12.0, 18.0)), img);
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let imgs = vec![noise(5), noise(6), noise(7)];
        let a = augment(&imgs, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(&imgs, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&imgs) {
            assert_eq!((x.height, x.width, x.pixels.len()), (y.height, y.width, y.pixels.len()));
        }
    }

    #[test]
    fn shared_draw_across_frames() {
        let img = noise(8);
        let out = augment(&[img.clone(), img], &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn translation_moves_content() {
        let mut img = Observation::blank(4, 4, [0, 0, 0]);
        img.pixels[0] = 255;
        let t = translate(&img, (1, 0));
        assert_eq!(t.pixel(0, 1), [255, 0, 0]);
    }
}
