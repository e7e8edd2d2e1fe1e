//! Dataset-specific normalization: CT windowing, fundus field-of-view
//! handling and canonical resizing.

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::imgcore::{
    quantize, quantize_sample, BinaryMask, Depth, Image, PixelDomain, Raster, HU_OFFSET,
};

pub const DEFAULT_SIDE: usize = 256;
pub const DEFAULT_FOV_THRESHOLD: f64 = 10.0 / 255.0;
/// Detected fields of view smaller than this fraction of the frame are discarded.
const MIN_FOV_FRACTION: f64 = 0.10;

/// Hounsfield window; maps `[level - width/2, level + width/2]` onto 0..=255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub level: f64,
    pub width: f64,
}

impl WindowSpec {
    pub fn new(level: f64, width: f64) -> Result<Self> {
        let spec = WindowSpec { level, width };
        spec.validate()?;
        Ok(spec)
    }

    /// Lung window used for the COVID CT data: level -300 HU, width 1400 HU.
    pub fn lung() -> Self {
        WindowSpec {
            level: -300.0,
            width: 1400.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width.is_nan()
            || self.width <= 0.0
            || !self.width.is_finite()
            || !self.level.is_finite()
        {
            return Err(Error::InvalidWindow(self.width));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.level - self.width / 2.0
    }

    pub fn upper(&self) -> f64 {
        self.level + self.width / 2.0
    }
}

pub fn window_ct(img: &Image, w: &WindowSpec) -> Result<Image> {
    if img.domain() != PixelDomain::HuOffset16 {
        return Err(Error::NotCt(format!("{:?}", img.domain())));
    }
    w.validate()?;
    let lower = w.lower();
    let samples = img
        .samples()
        .iter()
        .map(|&s| {
            let hu = s as i32 - HU_OFFSET;
            quantize_sample((hu as f64 - lower) / w.width, 255.0)
        })
        .collect();
    Image::new(
        img.width(),
        img.height(),
        1,
        Depth::U8,
        PixelDomain::Natural,
        samples,
    )
}

fn luminance(r: &Raster, x: usize, y: usize) -> f64 {
    if r.channels == 3 {
        0.299 * r.get(x, y, 0) as f64
            + 0.587 * r.get(x, y, 1) as f64
            + 0.114 * r.get(x, y, 2) as f64
    } else {
        r.get(x, y, 0) as f64
    }
}

/// Field-of-view mask: pixels brighter than `threshold`, reduced to the
/// largest connected region. Falls back to the whole frame when the region
/// covers less than 10% of it, so the result is never empty.
pub fn detect_fov(img: &Image, threshold: f64) -> BinaryMask {
    let (w, h) = (img.width(), img.height());
    let r = img.to_float();
    let bright = BinaryMask::from_fn(w, h, |x, y| luminance(&r, x, y) > threshold);
    let labels = label_components(&bright, Connectivity::Eight);
    if labels.count == 0 {
        return BinaryMask::ones(w, h);
    }
    let mut areas = vec![0usize; labels.count as usize + 1];
    for &l in &labels.labels {
        areas[l as usize] += 1;
    }
    let (best, area) = areas
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(l, &a)| (l as u32, a))
        .expect("count > 0");
    if (area as f64) < MIN_FOV_FRACTION * (w * h) as f64 {
        return BinaryMask::ones(w, h);
    }
    labels.component_mask(best)
}

/// Square region, possibly extending past the image edges (padded with zeros).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquareCrop {
    pub x0: i64,
    pub y0: i64,
    pub side: usize,
}

impl SquareCrop {
    /// Smallest square centred on the bounding box of `fov`.
    pub fn around(fov: &BinaryMask) -> Self {
        let (bx, by, bw, bh) = fov
            .bounding_box()
            .unwrap_or((0, 0, fov.width(), fov.height()));
        let side = bw.max(bh);
        SquareCrop {
            x0: bx as i64 - ((side - bw) / 2) as i64,
            y0: by as i64 - ((side - bh) / 2) as i64,
            side,
        }
    }

    fn source(&self, x: usize, y: usize, w: usize, h: usize) -> Option<(usize, usize)> {
        let sx = self.x0 + x as i64;
        let sy = self.y0 + y as i64;
        (sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h)
            .then_some((sx as usize, sy as usize))
    }

    pub fn apply(&self, img: &Image) -> Image {
        let c = img.channels();
        let mut samples = vec![0u16; self.side * self.side * c];
        for y in 0..self.side {
            for x in 0..self.side {
                if let Some((sx, sy)) = self.source(x, y, img.width(), img.height()) {
                    for ch in 0..c {
                        samples[(y * self.side + x) * c + ch] = img.sample(sx, sy, ch);
                    }
                }
            }
        }
        Image::new(self.side, self.side, c, img.depth(), img.domain(), samples)
            .expect("crop preserves channel layout")
    }

    pub fn apply_mask(&self, m: &BinaryMask) -> BinaryMask {
        BinaryMask::from_fn(self.side, self.side, |x, y| {
            self.source(x, y, m.width(), m.height())
                .is_some_and(|(sx, sy)| m.get(sx, sy))
        })
    }
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &Raster, width: usize, height: usize) -> Raster {
    let mut out = Raster::new(width, height, src.channels);
    if src.width == 0 || src.height == 0 {
        return out;
    }
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let ty = (fy - y0 as f64) as f32;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let tx = (fx - x0 as f64) as f32;
            for c in 0..src.channels {
                let top = src.get(x0, y0, c) * (1.0 - tx) + src.get(x1, y0, c) * tx;
                let bottom = src.get(x0, y1, c) * (1.0 - tx) + src.get(x1, y1, c) * tx;
                out.set(x, y, c, top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// Nearest-neighbour resampling; the result is binary by construction.
pub fn resize_nearest(mask: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    let sx = mask.width() as f64 / width as f64;
    let sy = mask.height() as f64 / height as f64;
    BinaryMask::from_fn(width, height, |x, y| {
        let ix = (((x as f64 + 0.5) * sx).floor() as usize).min(mask.width() - 1);
        let iy = (((y as f64 + 0.5) * sy).floor() as usize).min(mask.height() - 1);
        mask.get(ix, iy)
    })
}

/// Bilinear resize to `side x side`; same-size inputs are returned unchanged.
pub fn resize_canonical(img: &Image, side: usize) -> Image {
    if img.width() == side && img.height() == side {
        return img.clone();
    }
    let resized = quantize(&resize_bilinear(&img.to_float(), side, side), img.depth());
    Image::new(
        side,
        side,
        img.channels(),
        img.depth(),
        img.domain(),
        resized.samples().to_vec(),
    )
    .expect("resize preserves channel layout")
}

pub fn resize_mask_canonical(mask: &BinaryMask, side: usize) -> BinaryMask {
    if mask.width() == side && mask.height() == side {
        return mask.clone();
    }
    resize_nearest(mask, side, side)
}

fn default_fov_threshold() -> f64 {
    DEFAULT_FOV_THRESHOLD
}

/// Preprocessing recipe applied to every input image (and its masks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessOptions {
    /// When set, inputs are 16-bit HU-offset CT slices and are windowed to 8 bits.
    #[serde(default)]
    pub ct_window: Option<WindowSpec>,
    #[serde(default)]
    pub fov_crop: bool,
    #[serde(default = "default_fov_threshold")]
    pub fov_threshold: f64,
    /// Canonical side length; `None` keeps the input size.
    #[serde(default)]
    pub size: Option<usize>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            ct_window: None,
            fov_crop: false,
            fov_threshold: DEFAULT_FOV_THRESHOLD,
            size: None,
        }
    }
}

impl PreprocessOptions {
    pub fn fundus() -> Self {
        PreprocessOptions {
            fov_crop: true,
            size: Some(DEFAULT_SIDE),
            ..Default::default()
        }
    }

    pub fn ct() -> Self {
        PreprocessOptions {
            ct_window: Some(WindowSpec::lung()),
            size: Some(DEFAULT_SIDE),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = &self.ct_window {
            w.validate()
                .map_err(|e| Error::config("preprocess.ct_window.width", e.to_string()))?;
        }
        if !(0.0..1.0).contains(&self.fov_threshold) {
            return Err(Error::config(
                "preprocess.fov_threshold",
                format!("must lie in [0, 1), got {}", self.fov_threshold),
            ));
        }
        if self.size == Some(0) {
            return Err(Error::config("preprocess.size", "must be positive"));
        }
        Ok(())
    }

    /// Runs the recipe on an image and any aligned masks.
    pub fn apply(&self, img: &Image, masks: &[BinaryMask]) -> Result<(Image, Vec<BinaryMask>)> {
        for m in masks {
            if m.width() != img.width() || m.height() != img.height() {
                return Err(Error::DimensionMismatch(format!(
                    "mask {}x{} vs image {}x{}",
                    m.width(),
                    m.height(),
                    img.width(),
                    img.height()
                )));
            }
        }
        let mut img = match &self.ct_window {
            Some(w) => {
                let ct = if img.domain() == PixelDomain::HuOffset16 {
                    img.clone()
                } else if img.channels() == 1 && img.depth() == Depth::U16 {
                    img.clone().into_ct()?
                } else {
                    return Err(Error::NotCt(format!(
                        "{}-channel {:?} image",
                        img.channels(),
                        img.depth()
                    )));
                };
                window_ct(&ct, w)?
            }
            None => img.clone(),
        };
        let mut masks = masks.to_vec();
        if self.fov_crop {
            let crop = SquareCrop::around(&detect_fov(&img, self.fov_threshold));
            img = crop.apply(&img);
            masks = masks.iter().map(|m| crop.apply_mask(m)).collect();
        }
        if let Some(side) = self.size {
            img = resize_canonical(&img, side);
            masks = masks
                .iter()
                .map(|m| resize_mask_canonical(m, side))
                .collect();
        }
        Ok((img, masks))
    }
}
