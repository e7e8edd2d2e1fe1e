//! Lesion patch augmentation: flips, rotation, resizing, contrast,
//! brightness and hue/saturation distortion.
//!
//! Geometric operations keep the mask binary and re-crop to the tight
//! bounding box, so every output is still a valid [`LesionPatch`]. Rotation
//! only moves pixels; resizing resamples pixels bilinearly and the mask by
//! nearest neighbour. Photometric operations never touch the mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, Raster, RngStream};
use crate::lesion_bank::LesionPatch;
use crate::preprocess::{resize_bilinear, resize_nearest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    Flip,
    Rotation,
    Resize,
    Contrast,
    Brightness,
    ColorDistortion,
}

impl AugOp {
    /// Order in which enabled operations are composed.
    pub const ORDER: [AugOp; 6] = [
        AugOp::Flip,
        AugOp::Rotation,
        AugOp::Resize,
        AugOp::Contrast,
        AugOp::Brightness,
        AugOp::ColorDistortion,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

/// One applied transform with the parameters that were drawn for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentRecord {
    Flip { horizontal: bool, vertical: bool },
    Rotation { degrees: f64 },
    Resize { scale: f64 },
    Contrast { factor: f64 },
    Brightness { factor: f64 },
    ColorDistortion { hue_shift: f64, saturation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub enabled_ops: Vec<AugOp>,
    /// Probability of each of the two flips.
    pub flip_probability: f64,
    /// Degrees.
    pub rotation_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub contrast_range: [f64; 2],
    pub brightness_range: [f64; 2],
    /// Degrees.
    pub hue_range: [f64; 2],
    pub saturation_range: [f64; 2],
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            enabled_ops: Vec::new(),
            flip_probability: 0.5,
            rotation_range: [0.0, 360.0],
            scale_range: [0.75, 1.25],
            contrast_range: [0.8, 1.2],
            brightness_range: [0.8, 1.2],
            hue_range: [-18.0, 18.0],
            saturation_range: [0.8, 1.2],
        }
    }
}

/// Named augmentation presets: `none`, `all`, `paper-best` and one per
/// single-op / nested-composition ablation row.
pub const AUGMENT_PRESETS: &[(&str, &[AugOp])] = &[
    ("none", &[]),
    ("color-distortion-only", &[AugOp::ColorDistortion]),
    ("flip-only", &[AugOp::Flip]),
    ("contrast-only", &[AugOp::Contrast]),
    ("rotation-only", &[AugOp::Rotation]),
    ("resize-only", &[AugOp::Resize]),
    ("brightness-only", &[AugOp::Brightness]),
    ("resize-brightness", &[AugOp::Resize, AugOp::Brightness]),
    (
        "rotation-resize-brightness",
        &[AugOp::Rotation, AugOp::Resize, AugOp::Brightness],
    ),
    (
        "contrast-rotation-resize-brightness",
        &[
            AugOp::Contrast,
            AugOp::Rotation,
            AugOp::Resize,
            AugOp::Brightness,
        ],
    ),
    (
        "paper-best",
        &[
            AugOp::Flip,
            AugOp::Contrast,
            AugOp::Rotation,
            AugOp::Resize,
            AugOp::Brightness,
        ],
    ),
    ("all", &AugOp::ORDER),
];

impl AugmentSpec {
    pub fn with_ops(ops: &[AugOp]) -> Self {
        let mut enabled_ops = ops.to_vec();
        enabled_ops.sort();
        AugmentSpec {
            enabled_ops,
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        AUGMENT_PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, ops)| AugmentSpec::with_ops(ops))
            .ok_or_else(|| Error::UnknownPreset(name.to_string()))
    }

    pub fn is_enabled(&self, op: AugOp) -> bool {
        self.enabled_ops.contains(&op)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = self.enabled_ops.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.enabled_ops.len() {
            return Err(Error::config("augment.enabled_ops", "duplicate operation"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config(
                "augment.flip_probability",
                format!("must lie in [0, 1], got {}", self.flip_probability),
            ));
        }
        let ranges = [
            (
                "augment.rotation_range",
                self.rotation_range,
                f64::NEG_INFINITY,
            ),
            ("augment.scale_range", self.scale_range, 0.0),
            ("augment.contrast_range", self.contrast_range, 0.0),
            ("augment.brightness_range", self.brightness_range, 0.0),
            ("augment.hue_range", self.hue_range, f64::NEG_INFINITY),
            (
                "augment.saturation_range",
                self.saturation_range,
                -f64::MIN_POSITIVE,
            ),
        ];
        for (field, [lo, hi], floor) in ranges {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(field, "bounds must be finite"));
            }
            if lo > hi {
                return Err(Error::config(field, format!("lo {lo} > hi {hi}")));
            }
            if lo <= floor {
                return Err(Error::config(
                    field,
                    format!("lo must be > {floor}, got {lo}"),
                ));
            }
        }
        Ok(())
    }
}

fn rebuild(p: &LesionPatch, pixels: Raster, mask: BinaryMask) -> LesionPatch {
    LesionPatch {
        pixels,
        mask,
        lesion_type: p.lesion_type,
        source_id: p.source_id.clone(),
        component_id: p.component_id,
        augmentation_log: p.augmentation_log.clone(),
    }
}

/// Mirrors a patch; bit-exact and an involution.
pub fn flip(p: &LesionPatch, axis: Axis) -> LesionPatch {
    let (w, h) = (p.width(), p.height());
    let src = |x: usize, y: usize| match axis {
        Axis::Horizontal => (w - 1 - x, y),
        Axis::Vertical => (x, h - 1 - y),
    };
    remap(p, w, h, src)
}

/// Builds a same-channel patch whose pixel `(x, y)` is taken from `src(x, y)`.
fn remap(
    p: &LesionPatch,
    w: usize,
    h: usize,
    src: impl Fn(usize, usize) -> (usize, usize),
) -> LesionPatch {
    let c = p.pixels.channels;
    let mut pixels = Raster::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x, y);
            for ch in 0..c {
                pixels.set(x, y, ch, p.pixels.get(sx, sy, ch));
            }
        }
    }
    let mask = BinaryMask::from_fn(w, h, |x, y| {
        let (sx, sy) = src(x, y);
        p.mask.get(sx, sy)
    });
    rebuild(p, pixels, mask)
}

/// Working canvas for shear rotation: pixels and mask move together.
struct ShearCanvas {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
    mask: Vec<u8>,
}

impl ShearCanvas {
    fn from_patch(p: &LesionPatch) -> Self {
        ShearCanvas {
            width: p.width(),
            height: p.height(),
            channels: p.pixels.channels,
            pixels: p.pixels.data.clone(),
            mask: p.mask.bits().to_vec(),
        }
    }

    /// `x += round(factor * dy)` per row, `dy` measured from the canvas centre.
    fn shear_x(&self, factor: f64) -> Self {
        let margin = (factor.abs() * self.height as f64 / 2.0).ceil() as usize + 1;
        let width = self.width + 2 * margin;
        let mut out = ShearCanvas::blank(width, self.height, self.channels);
        for y in 0..self.height {
            let dy = y as f64 + 0.5 - self.height as f64 / 2.0;
            let shift = (factor * dy).round() as i64;
            for x in 0..self.width {
                let nx = (x + margin) as i64 + shift;
                out.copy_from(self, x, y, nx as usize, y);
            }
        }
        out
    }

    /// `y += round(factor * dx)` per column.
    fn shear_y(&self, factor: f64) -> Self {
        let margin = (factor.abs() * self.width as f64 / 2.0).ceil() as usize + 1;
        let height = self.height + 2 * margin;
        let mut out = ShearCanvas::blank(self.width, height, self.channels);
        for x in 0..self.width {
            let dx = x as f64 + 0.5 - self.width as f64 / 2.0;
            let shift = (factor * dx).round() as i64;
            for y in 0..self.height {
                let ny = (y + margin) as i64 + shift;
                out.copy_from(self, x, y, x, ny as usize);
            }
        }
        out
    }

    fn blank(width: usize, height: usize, channels: usize) -> Self {
        ShearCanvas {
            width,
            height,
            channels,
            pixels: vec![0.0; width * height * channels],
            mask: vec![0; width * height],
        }
    }

    fn copy_from(&mut self, src: &ShearCanvas, sx: usize, sy: usize, dx: usize, dy: usize) {
        let (si, di) = (sy * src.width + sx, dy * self.width + dx);
        self.mask[di] = src.mask[si];
        let c = self.channels;
        self.pixels[di * c..(di + 1) * c].copy_from_slice(&src.pixels[si * c..(si + 1) * c]);
    }
}

/// Rotates counter-clockwise (as displayed) by `degrees` about the patch centre.
///
/// The nearest multiple of 90 degrees is applied as an exact pixel
/// permutation; the residual (at most 45 degrees) uses three whole-pixel
/// shears. Both stages only move pixels, so the mask stays binary, its area
/// is preserved exactly, and lesion intensities are carried over unchanged.
/// The result is re-cropped to the tight box.
pub fn rotate(p: &LesionPatch, degrees: f64) -> LesionPatch {
    let a = degrees.rem_euclid(360.0);
    let quarter = (a / 90.0).round();
    let residual = a - quarter * 90.0;
    let (w, h) = (p.width(), p.height());
    let turned = match quarter as u32 % 4 {
        0 => p.clone(),
        1 => remap(p, h, w, |x, y| (w - 1 - y, x)),
        2 => remap(p, w, h, |x, y| (w - 1 - x, h - 1 - y)),
        _ => remap(p, h, w, |x, y| (y, h - 1 - x)),
    };
    if residual.abs() < 1e-9 {
        return turned;
    }

    // [[cos, sin], [-sin, cos]] = Sx(tan(t/2)) * Sy(-sin t) * Sx(tan(t/2)).
    let t = residual.to_radians();
    let alpha = (t / 2.0).tan();
    let beta = -t.sin();
    let canvas = ShearCanvas::from_patch(&turned)
        .shear_x(alpha)
        .shear_y(beta)
        .shear_x(alpha);
    let pixels = Raster::from_vec(canvas.width, canvas.height, canvas.channels, canvas.pixels)
        .expect("canvas dimensions are consistent");
    let mask = BinaryMask::from_values(canvas.width, canvas.height, &canvas.mask)
        .expect("canvas dimensions are consistent");
    match LesionPatch::tightened(pixels, mask) {
        Some((pixels, mask)) => rebuild(&turned, pixels, mask),
        None => turned,
    }
}

/// Scales both dimensions by `scale` (round-to-nearest, at least 1 pixel).
pub fn resize_patch(p: &LesionPatch, scale: f64) -> LesionPatch {
    let nw = ((p.width() as f64 * scale).round() as usize).max(1);
    let nh = ((p.height() as f64 * scale).round() as usize).max(1);
    if nw == p.width() && nh == p.height() {
        return p.clone();
    }
    let pixels = resize_bilinear(&p.pixels, nw, nh);
    let mask = resize_nearest(&p.mask, nw, nh);
    match LesionPatch::tightened(pixels, mask) {
        Some((pixels, mask)) => rebuild(p, pixels, mask),
        None => p.clone(),
    }
}

/// `v <- clamp(v * factor)`.
pub fn adjust_brightness(p: &LesionPatch, factor: f64) -> LesionPatch {
    let f = factor as f32;
    let mut out = p.clone();
    for v in out.pixels.data.iter_mut() {
        *v = (*v * f).clamp(0.0, 1.0);
    }
    out
}

/// Per-channel mean of the pixels under the mask.
pub fn masked_mean(p: &LesionPatch) -> Vec<f64> {
    let c = p.pixels.channels;
    let mut sums = vec![0.0f64; c];
    let mut n = 0usize;
    for y in 0..p.height() {
        for x in 0..p.width() {
            if p.mask.get(x, y) {
                n += 1;
                for (ch, s) in sums.iter_mut().enumerate() {
                    *s += p.pixels.get(x, y, ch) as f64;
                }
            }
        }
    }
    sums.into_iter().map(|s| s / n.max(1) as f64).collect()
}

/// `v <- clamp(mean + (v - mean) * factor)` pivoting on the masked per-channel mean.
pub fn adjust_contrast(p: &LesionPatch, factor: f64) -> LesionPatch {
    let means = masked_mean(p);
    let c = p.pixels.channels;
    let mut out = p.clone();
    for (i, v) in out.pixels.data.iter_mut().enumerate() {
        let m = means[i % c];
        *v = (m + (*v as f64 - m) * factor).clamp(0.0, 1.0) as f32;
    }
    out
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Rotates hue and scales saturation in HSV space, leaving value untouched.
pub fn color_distort(p: &LesionPatch, hue_shift: f64, sat_factor: f64) -> Result<LesionPatch> {
    if p.pixels.channels != 3 {
        return Err(Error::ChannelMismatch(format!(
            "color distortion needs 3 channels, patch has {}",
            p.pixels.channels
        )));
    }
    let mut out = p.clone();
    for px in out.pixels.data.chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
        let h = (h as f64 + hue_shift).rem_euclid(360.0) as f32;
        let s = (s as f64 * sat_factor).clamp(0.0, 1.0) as f32;
        let (r, g, b) = hsv_to_rgb(h, s, v);
        px[0] = r.clamp(0.0, 1.0);
        px[1] = g.clamp(0.0, 1.0);
        px[2] = b.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Applies one logged transform. Colour distortion is a no-op on grayscale patches.
pub fn apply_record(p: &LesionPatch, record: &AugmentRecord) -> LesionPatch {
    let mut out = match *record {
        AugmentRecord::Flip {
            horizontal,
            vertical,
        } => {
            let mut q = p.clone();
            if horizontal {
                q = flip(&q, Axis::Horizontal);
            }
            if vertical {
                q = flip(&q, Axis::Vertical);
            }
            q
        }
        AugmentRecord::Rotation { degrees } => rotate(p, degrees),
        AugmentRecord::Resize { scale } => resize_patch(p, scale),
        AugmentRecord::Contrast { factor } => adjust_contrast(p, factor),
        AugmentRecord::Brightness { factor } => adjust_brightness(p, factor),
        AugmentRecord::ColorDistortion {
            hue_shift,
            saturation,
        } => color_distort(p, hue_shift, saturation).unwrap_or_else(|_| p.clone()),
    };
    out.augmentation_log.push(*record);
    out
}

/// Re-applies a sequence of logged transforms.
pub fn replay(p: &LesionPatch, log: &[AugmentRecord]) -> LesionPatch {
    log.iter().fold(p.clone(), |q, r| apply_record(&q, r))
}

/// Draws parameters for every enabled operation, in [`AugOp::ORDER`], and
/// applies them. Each draw is appended to the patch's augmentation log.
pub fn apply_random(p: &LesionPatch, spec: &AugmentSpec, rng: &mut RngStream) -> LesionPatch {
    let mut out = p.clone();
    for op in AugOp::ORDER {
        if !spec.is_enabled(op) {
            continue;
        }
        let record = match op {
            AugOp::Flip => AugmentRecord::Flip {
                horizontal: rng.bernoulli(spec.flip_probability),
                vertical: rng.bernoulli(spec.flip_probability),
            },
            AugOp::Rotation => AugmentRecord::Rotation {
                degrees: rng.uniform(spec.rotation_range[0], spec.rotation_range[1]),
            },
            AugOp::Resize => AugmentRecord::Resize {
                scale: rng.uniform(spec.scale_range[0], spec.scale_range[1]),
            },
            AugOp::Contrast => AugmentRecord::Contrast {
                factor: rng.uniform(spec.contrast_range[0], spec.contrast_range[1]),
            },
            AugOp::Brightness => AugmentRecord::Brightness {
                factor: rng.uniform(spec.brightness_range[0], spec.brightness_range[1]),
            },
            AugOp::ColorDistortion => AugmentRecord::ColorDistortion {
                hue_shift: rng.uniform(spec.hue_range[0], spec.hue_range[1]),
                saturation: rng.uniform(spec.saturation_range[0], spec.saturation_range[1]),
            },
        };
        out = apply_record(&out, &record);
    }
    out
}
