//! Raster containers, pixel-domain conventions and the seeded randomness
//! contract shared by every other module.
//!
//! Integer [`Image`]s are what goes to and from disk. All arithmetic
//! (augmentation, compositing) happens on [`Raster`], an `f32` image with
//! samples in `[0, 1]`, and is quantized back only when written out.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Offset added to Hounsfield units before they are stored as `u16`.
pub const HU_OFFSET: i32 = 32768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Depth {
    #[serde(rename = "8")]
    U8,
    #[serde(rename = "16")]
    U16,
}

impl Depth {
    pub fn max_value(self) -> u32 {
        match self {
            Depth::U8 => 255,
            Depth::U16 => 65535,
        }
    }
}

/// How stored samples relate to physical intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelDomain {
    /// Photograph-like data, stored samples are display intensities.
    Natural,
    /// CT slice, stored sample = HU + 32768 in a 16-bit single-channel image.
    HuOffset16,
}

/// Integer raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    depth: Depth,
    domain: PixelDomain,
    samples: Vec<u16>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        depth: Depth,
        domain: PixelDomain,
        samples: Vec<u16>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        if domain == PixelDomain::HuOffset16 && (channels != 1 || depth != Depth::U16) {
            return Err(Error::InvalidImage(
                "HU-offset images must be 16-bit single channel".into(),
            ));
        }
        if depth == Depth::U8 && samples.iter().any(|&s| s > 255) {
            return Err(Error::InvalidImage("8-bit sample above 255".into()));
        }
        Ok(Image {
            width,
            height,
            channels,
            depth,
            domain,
            samples,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        channels: usize,
        depth: Depth,
        value: u16,
    ) -> Result<Self> {
        Image::new(
            width,
            height,
            channels,
            depth,
            PixelDomain::Natural,
            vec![value; width * height * channels],
        )
    }

    /// Builds a CT slice from Hounsfield values.
    pub fn from_hu(width: usize, height: usize, hu: &[i32]) -> Result<Self> {
        let samples = hu
            .iter()
            .map(|&v| (v + HU_OFFSET).clamp(0, 65535) as u16)
            .collect();
        Image::new(
            width,
            height,
            1,
            Depth::U16,
            PixelDomain::HuOffset16,
            samples,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    pub fn domain(&self) -> PixelDomain {
        self.domain
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> u16 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    /// Reinterprets a 16-bit grayscale image as an offset-HU CT slice.
    pub fn into_ct(self) -> Result<Self> {
        Image::new(
            self.width,
            self.height,
            self.channels,
            self.depth,
            PixelDomain::HuOffset16,
            self.samples,
        )
    }

    /// Linear map of the stored sample range onto `[0, 1]`.
    pub fn to_float(&self) -> Raster {
        let max = self.depth.max_value() as f32;
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.samples.iter().map(|&s| s as f32 / max).collect(),
        }
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Image::from_dynamic(img)
    }

    pub fn from_dynamic(img: DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(buf) => Image::new(
                w,
                h,
                1,
                Depth::U8,
                PixelDomain::Natural,
                buf.into_raw().into_iter().map(u16::from).collect(),
            ),
            DynamicImage::ImageLuma16(buf) => {
                Image::new(w, h, 1, Depth::U16, PixelDomain::Natural, buf.into_raw())
            }
            DynamicImage::ImageRgb8(buf) => Image::new(
                w,
                h,
                3,
                Depth::U8,
                PixelDomain::Natural,
                buf.into_raw().into_iter().map(u16::from).collect(),
            ),
            DynamicImage::ImageLumaA8(_) => {
                Image::from_dynamic(DynamicImage::ImageLuma8(img.to_luma8()))
            }
            DynamicImage::ImageLumaA16(_) => {
                Image::from_dynamic(DynamicImage::ImageLuma16(img.to_luma16()))
            }
            other => Image::from_dynamic(DynamicImage::ImageRgb8(other.to_rgb8())),
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        match (self.channels, self.depth) {
            (1, Depth::U8) => DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(
                    w,
                    h,
                    self.samples.iter().map(|&s| s as u8).collect(),
                )
                .expect("sample count checked at construction"),
            ),
            (1, Depth::U16) => DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, _>::from_raw(w, h, self.samples.clone())
                    .expect("sample count checked at construction"),
            ),
            (3, Depth::U8) => DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(
                    w,
                    h,
                    self.samples.iter().map(|&s| s as u8).collect(),
                )
                .expect("sample count checked at construction"),
            ),
            _ => DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, self.samples.clone())
                    .expect("sample count checked at construction"),
            ),
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Round-half-up quantization of a `[0, 1]` raster onto the integer grid.
/// Out-of-range values are clamped first.
pub fn quantize(raster: &Raster, depth: Depth) -> Image {
    let max = depth.max_value() as f64;
    let samples = raster
        .data
        .iter()
        .map(|&v| quantize_sample(v as f64, max))
        .collect();
    Image {
        width: raster.width,
        height: raster.height,
        channels: raster.channels,
        depth,
        domain: PixelDomain::Natural,
        samples,
    }
}

pub(crate) fn quantize_sample(v: f64, max: f64) -> u16 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * max + 0.5).floor() as u16
}

/// Floating point raster with samples nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
        let mut out = Raster::new(w, h, self.channels);
        for y in 0..h {
            let src = self.index(x0, y0 + y, 0);
            let dst = out.index(0, y, 0);
            out.data[dst..dst + w * self.channels]
                .copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        out
    }
}

/// Per-pixel {0,1} raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    /// Any nonzero value becomes 1.
    pub fn from_values(width: usize, height: usize, values: &[u8]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "mask expects {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits: values.iter().map(|&v| u8::from(v != 0)).collect(),
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(u8::from(f(x, y)));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = u8::from(on);
    }

    pub fn area(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// `(x0, y0, w, h)` of the set pixels, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        BinaryMask::from_values(w, h, img.as_raw())
    }

    /// Written as an 8-bit PNG with 0/255 samples.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf = ImageBuffer::<Luma<u8>, _>::from_raw(
            self.width as u32,
            self.height as u32,
            self.bits.iter().map(|&b| b * 255).collect::<Vec<u8>>(),
        )
        .expect("mask length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// `1 - m` for every pixel.
pub fn mask_inverse(m: &BinaryMask) -> BinaryMask {
    BinaryMask {
        width: m.width,
        height: m.height,
        bits: m.bits.iter().map(|&b| 1 - b).collect(),
    }
}

/// Hashes an arbitrary key (an image id, a decision-site label) to a stream id.
pub fn stream_id_of(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Deterministic random stream keyed by `(root_seed, stream_id)`.
///
/// Streams are never shared between images; each unit of work derives its
/// own so results do not depend on scheduling order.
#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, stream_id: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"lesionforge.rng");
        hasher.update(root_seed.to_le_bytes());
        hasher.update(stream_id.to_le_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        RngStream {
            root_seed,
            stream_id,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn for_key(root_seed: u64, key: &str) -> Self {
        RngStream::new(root_seed, stream_id_of(key))
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`; returns `lo` when the range is degenerate.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.unit();
        v.clamp(lo, hi)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        // Lemire-style rejection keeps the draw unbiased.
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.rng.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
