use rand::Rng;

use super::Sample;
use crate::error::{Error, Result};

/// Color jitter ranges. Saturation and exposure factors are drawn from `[1/f, f]`,
/// hue shifts from `[-hue, hue]` turns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub saturation: f64,
    pub exposure: f64,
    pub hue: f64,
}

impl AugmentConfig {
    pub fn full_scale() -> Self {
        Self { saturation: 1.5, exposure: 1.5, hue: 0.1 }
    }

    pub fn identity() -> Self {
        Self { saturation: 1.0, exposure: 1.0, hue: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.saturation >= 1.0 && self.exposure >= 1.0) {
            return Err(Error::Config("saturation and exposure must be >= 1".into()));
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::Config(format!("hue {} not in [0, 0.5]", self.hue)));
        }
        Ok(())
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

/// RGB in `[0,1]` to (hue in turns `[0,1)`, saturation, value).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        (g - b) / delta
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    ((h / 6.0).rem_euclid(1.0), s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (v, v, v);
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn factor<R: Rng + ?Sized>(rng: &mut R, f: f64) -> f64 {
    if f <= 1.0 {
        return 1.0;
    }
    rng.gen_range(1.0 / f..=f)
}

/// Color-only jitter; annotations and dimensions are untouched.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    let sat = factor(rng, cfg.saturation);
    let exp = factor(rng, cfg.exposure);
    let shift = if cfg.hue > 0.0 { rng.gen_range(-cfg.hue..=cfg.hue) } else { 0.0 };

    let mut image = sample.image.clone();
    let plane = image.len() / 3;
    let data = image.data_mut();
    for i in 0..plane {
        let (h, s, v) = rgb_to_hsv(data[i], data[plane + i], data[2 * plane + i]);
        let (r, g, b) = hsv_to_rgb(
            (h + shift).rem_euclid(1.0),
            (s * sat).clamp(0.0, 1.0),
            (v * exp).clamp(0.0, 1.0),
        );
        data[i] = r.clamp(0.0, 1.0);
        data[plane + i] = g.clamp(0.0, 1.0);
        data[2 * plane + i] = b.clamp(0.0, 1.0);
    }
    Sample { id: sample.id.clone(), image, annotations: sample.annotations.clone() }
}
