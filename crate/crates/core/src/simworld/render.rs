use super::{EntityKind, Morphology, Shape, WorldState};

pub const IMAGE_H: usize = 48;
pub const IMAGE_W: usize = 72;
pub const BACKGROUND: [u8; 3] = [200, 200, 200];

/// 8-bit RGB image, row-major `[h, w, 3]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Observation {
    pub fn blank(height: usize, width: usize, color: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&color);
        }
        Observation { height, width, pixels }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, row: usize, col: usize, c: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Fills every pixel whose center (in workspace units) satisfies `inside`.
    fn fill(&mut self, center: [f64; 2], reach: f64, color: [u8; 3], inside: impl Fn(f64, f64) -> bool) {
        let (h, w) = (self.height as f64, self.width as f64);
        let c0 = (((center[0] - reach) * w).floor().max(0.0)) as usize;
        let c1 = (((center[0] + reach) * w).ceil().min(w - 1.0)).max(0.0) as usize;
        let r0 = (((center[1] - reach) * h).floor().max(0.0)) as usize;
        let r1 = (((center[1] + reach) * h).ceil().min(h - 1.0)).max(0.0) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let x = (c as f64 + 0.5) / w - center[0];
                let y = (r as f64 + 0.5) / h - center[1];
                if inside(x, y) {
                    self.put(r, c, color);
                }
            }
        }
    }

    fn shape(&mut self, shape: Shape, center: [f64; 2], half: f64, color: [u8; 3]) {
        match shape {
            Shape::Square => self.fill(center, half, color, |x, y| x.abs() <= half && y.abs() <= half),
            Shape::Circle => self.fill(center, half, color, |x, y| x * x + y * y <= half * half),
            Shape::Diamond => self.fill(center, half, color, |x, y| x.abs() + y.abs() <= half),
        }
    }

    /// One-pixel-wide segment, measured in pixel space.
    fn segment(&mut self, a: [f64; 2], b: [f64; 2], color: [u8; 3]) {
        let (h, w) = (self.height as f64, self.width as f64);
        let pa = [a[0] * w, a[1] * h];
        let pb = [b[0] * w, b[1] * h];
        let d = [pb[0] - pa[0], pb[1] - pa[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let c0 = pa[0].min(pb[0]).floor().max(0.0) as usize;
        let c1 = (pa[0].max(pb[0]).ceil().min(w - 1.0)).max(0.0) as usize;
        let r0 = pa[1].min(pb[1]).floor().max(0.0) as usize;
        let r1 = (pa[1].max(pb[1]).ceil().min(h - 1.0)).max(0.0) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let p = [c as f64 + 0.5 - pa[0], r as f64 + 0.5 - pa[1]];
                let t = if len2 > 0.0 { ((p[0] * d[0] + p[1] * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let q = [p[0] - t * d[0], p[1] - t * d[1]];
                if q[0] * q[0] + q[1] * q[1] <= 0.36 {
                    self.put(r, c, color);
                }
            }
        }
    }
}

/// Flat-shaded raster of the workspace as seen by `morphology`'s camera.
pub fn render(state: &WorldState, morphology: &Morphology) -> Observation {
    let variation = state.variation();
    let mut img = Observation::blank(IMAGE_H, IMAGE_W, BACKGROUND);
    // Regions, then markers, then free objects.
    for pass in [0, 1, 2] {
        for (i, e) in variation.entities.iter().enumerate() {
            let layer = match e.kind {
                EntityKind::Zone | EntityKind::Bin => 0,
                EntityKind::Target => 1,
                EntityKind::Block => 2,
            };
            if layer != pass || state.held == Some(i) {
                continue;
            }
            img.shape(e.shape, state.positions[i], e.half_size, e.color);
        }
    }
    let g = state.gripper;
    img.segment(morphology.base, g, morphology.link_color);
    if let Some(h) = state.held {
        let e = &variation.entities[h];
        img.shape(e.shape, g, e.half_size, e.color);
    }
    let glyph = if state.closed { morphology.closed_color } else { morphology.open_color };
    match morphology.role {
        super::Role::Imitator => {
            // Hollow square claw.
            let half = 0.03;
            let inner = if state.closed { 0.0 } else { 0.012 };
            img.fill(g, half, glyph, |x, y| {
                let m = (x * 1.5).abs().max(y.abs());
                m <= half && m >= inner
            });
        }
        super::Role::Demonstrator => {
            // Cross-shaped claw.
            let half = 0.035;
            let arm = if state.closed { 0.014 } else { 0.008 };
            img.fill(g, half, glyph, |x, y| {
                let (ax, ay) = ((x * 1.5).abs(), y.abs());
                ax.max(ay) <= half && (ax <= arm || ay <= arm)
            });
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::super::{reset, task_by_name, Morphology};
    use super::*;

    #[test]
    fn render_is_deterministic() {
        let s = reset(task_by_name("stack").unwrap(), 1, 11, &Morphology::imitator()).unwrap();
        let a = render(&s, &Morphology::imitator());
        assert_eq!(a, render(&s, &Morphology::imitator()));
        assert_eq!(a.pixels.len(), IMAGE_H * IMAGE_W * 3);
    }

    #[test]
    fn morphologies_render_differently() {
        for task in super::super::registry() {
            let s = reset(task, 0, 3, &Morphology::imitator()).unwrap();
            assert_ne!(render(&s, &Morphology::imitator()), render(&s, &Morphology::demonstrator()));
        }
    }

    #[test]
    fn empty_corner_is_exact_background() {
        let mut s = reset(task_by_name("reach").unwrap(), 0, 0, &Morphology::imitator()).unwrap();
        for p in s.positions.iter_mut() {
            *p = [0.75, 0.75];
        }
        s.gripper = [0.6, 0.6];
        let img = render(&s, &Morphology::imitator());
        for r in 0..8 {
            for c in 0..12 {
                assert_eq!(img.pixel(r, c), BACKGROUND);
            }
        }
    }

    #[test]
    fn gripper_state_is_visible() {
        let mut s = reset(task_by_name("reach").unwrap(), 0, 0, &Morphology::imitator()).unwrap();
        let open = render(&s, &Morphology::imitator());
        s.closed = true;
        assert_ne!(open, render(&s, &Morphology::imitator()));
    }
}
