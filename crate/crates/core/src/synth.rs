//! MixUp paste engine and per-image anomaly synthesis.
//!
//! A pasted patch blends into the base as
//! `out = (1 - λ)·base + λ·patch` under the patch mask and leaves every
//! other pixel untouched.

use serde::{Deserialize, Serialize};

use crate::augment::{apply_random, apply_record, AugmentRecord, AugmentSpec};
use crate::error::{Error, Result};
use crate::imgcore::{quantize, BinaryMask, Image, Raster, RngStream};
use crate::lesion_bank::{
    resample_patches, sample_paste_count, LesionBank, LesionPatch, LesionType,
};

/// Attempts at drawing a position whose centre lies on the placement mask.
pub const PLACEMENT_ATTEMPTS: usize = 100;

/// How the blend coefficient λ is chosen for each paste.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixUpMode {
    /// Fresh λ ~ U(lo, hi) for every pasted patch.
    Random {
        lo: f64,
        hi: f64,
    },
    Fixed {
        lambda: f64,
    },
    /// λ = 1: the patch replaces the base under its mask.
    HardPaste,
}

impl Default for MixUpMode {
    fn default() -> Self {
        MixUpMode::Random { lo: 0.5, hi: 0.8 }
    }
}

impl MixUpMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MixUpMode::Random { lo, hi } => {
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
                    return Err(Error::config(
                        "mixup",
                        format!("random bounds must lie in [0, 1], got ({lo}, {hi})"),
                    ));
                }
                if lo > hi {
                    return Err(Error::config("mixup", format!("lo {lo} > hi {hi}")));
                }
            }
            MixUpMode::Fixed { lambda } => {
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(Error::config(
                        "mixup.lambda",
                        format!("must lie in [0, 1], got {lambda}"),
                    ));
                }
            }
            MixUpMode::HardPaste => {}
        }
        Ok(())
    }

    pub fn draw_lambda(&self, rng: &mut RngStream) -> f64 {
        match *self {
            MixUpMode::Random { lo, hi } => rng.uniform(lo, hi),
            MixUpMode::Fixed { lambda } => lambda,
            MixUpMode::HardPaste => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionRule {
    pub probability: f64,
    pub allowed_types: Vec<LesionType>,
}

/// Weighted choice of which lesion types a synthetic image may receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionStrategy {
    pub rules: Vec<CompositionRule>,
}

const PROBABILITY_TOLERANCE: f64 = 1e-6;

impl CompositionStrategy {
    pub fn single(types: &[LesionType]) -> Self {
        CompositionStrategy {
            rules: vec![CompositionRule {
                probability: 1.0,
                allowed_types: types.to_vec(),
            }],
        }
    }

    /// Diabetic retinopathy grade-conditioned mix: 80% MA only, 10% MA+HE,
    /// 5% MA+HE+SE, 5% all four fundus lesion types.
    pub fn dr_grades() -> Self {
        use LesionType::*;
        let rule = |probability, types: &[LesionType]| CompositionRule {
            probability,
            allowed_types: types.to_vec(),
        };
        CompositionStrategy {
            rules: vec![
                rule(0.80, &[Ma]),
                rule(0.10, &[Ma, He]),
                rule(0.05, &[Ma, He, Se]),
                rule(0.05, &[Ma, He, Se, Ex]),
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dr-grades" => Ok(CompositionStrategy::dr_grades()),
            "any" => Ok(CompositionStrategy::single(&LesionType::ALL)),
            "covid" => Ok(CompositionStrategy::single(&[LesionType::Covid])),
            _ => Err(Error::UnknownPreset(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::config(
                "strategy.rules",
                "at least one rule is required",
            ));
        }
        for (i, r) in self.rules.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.probability) {
                return Err(Error::config(
                    format!("strategy.rules[{i}].probability"),
                    format!("must lie in [0, 1], got {}", r.probability),
                ));
            }
            if r.allowed_types.is_empty() {
                return Err(Error::config(
                    format!("strategy.rules[{i}].allowed_types"),
                    "must not be empty",
                ));
            }
        }
        let total: f64 = self.rules.iter().map(|r| r.probability).sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::config(
                "strategy.rules.probability",
                format!("probabilities must sum to 1, got {total}"),
            ));
        }
        Ok(())
    }

    /// Index of a rule drawn with its configured probability.
    pub fn draw(&self, rng: &mut RngStream) -> usize {
        let u = rng.unit();
        let mut acc = 0.0;
        for (i, r) in self.rules.iter().enumerate() {
            acc += r.probability;
            if u < acc {
                return i;
            }
        }
        self.rules.len() - 1
    }
}

/// Blends `patch` into `base` in place with its top-left corner at `position`.
pub fn mixup_paste_into(
    base: &mut Raster,
    patch: &LesionPatch,
    position: (usize, usize),
    lambda: f64,
) -> Result<()> {
    if patch.pixels.channels != base.channels {
        return Err(Error::ChannelMismatch(format!(
            "patch has {} channels, base has {}",
            patch.pixels.channels, base.channels
        )));
    }
    let (x0, y0) = position;
    if x0 + patch.width() > base.width || y0 + patch.height() > base.height {
        return Err(Error::OutOfBounds { x: x0, y: y0 });
    }
    let keep = 1.0 - lambda;
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            if !patch.mask.get(x, y) {
                continue;
            }
            for c in 0..base.channels {
                let i = base.index(x0 + x, y0 + y, c);
                base.data[i] =
                    (keep * base.data[i] as f64 + lambda * patch.pixels.get(x, y, c) as f64) as f32;
            }
        }
    }
    Ok(())
}

pub fn mixup_paste(
    base: &Raster,
    patch: &LesionPatch,
    position: (usize, usize),
    lambda: f64,
) -> Result<Raster> {
    let mut out = base.clone();
    mixup_paste_into(&mut out, patch, position, lambda)?;
    Ok(out)
}

/// Uniform top-left position keeping the patch inside the base. With a
/// placement mask, positions are redrawn until the patch centre lies on it,
/// giving up after [`PLACEMENT_ATTEMPTS`] and keeping an unconstrained draw.
pub fn choose_position(
    base_dims: (usize, usize),
    patch_dims: (usize, usize),
    placement: Option<&BinaryMask>,
    rng: &mut RngStream,
) -> Result<(usize, usize)> {
    let ((bw, bh), (pw, ph)) = (base_dims, patch_dims);
    if pw > bw || ph > bh {
        return Err(Error::PatchTooLarge {
            patch_w: pw,
            patch_h: ph,
            base_w: bw,
            base_h: bh,
        });
    }
    let draw = |rng: &mut RngStream| (rng.below(bw - pw + 1), rng.below(bh - ph + 1));
    if let Some(mask) = placement {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (x, y) = draw(rng);
            if mask.get(x + pw / 2, y + ph / 2) {
                return Ok((x, y));
            }
        }
    }
    Ok(draw(rng))
}

/// Provenance and geometry of one paste.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PasteRecord {
    pub lesion_type: LesionType,
    pub source_id: String,
    pub component_id: u32,
    /// Transforms applied to the bank patch for this paste, in order.
    pub augmentation: Vec<AugmentRecord>,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: Image,
    pub paste_log: Vec<PasteRecord>,
    pub label: u8,
    pub source_normal_id: String,
    /// Index of the composition rule that was drawn.
    pub rule_index: usize,
}

/// Everything that stays fixed across the images of one synthesis run.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisParams<'a> {
    pub bank: &'a LesionBank,
    pub augment: &'a AugmentSpec,
    pub mixup: MixUpMode,
    pub strategy: &'a CompositionStrategy,
}

/// Shrinks a patch until it fits the base, logging the extra resize.
fn fit_within(mut p: LesionPatch, bw: usize, bh: usize) -> LesionPatch {
    let mut guard = 0;
    while p.width() > bw || p.height() > bh {
        let mut s = (bw as f64 / p.width() as f64).min(bh as f64 / p.height() as f64);
        if guard > 0 {
            s *= 0.99f64.powi(guard);
        }
        p = apply_record(&p, &AugmentRecord::Resize { scale: s });
        guard += 1;
    }
    p
}

/// Builds one anomalous image from a normal one: draw a composition rule,
/// a paste count, patches with replacement, augment each, and blend them
/// in sequentially at random positions.
pub fn synthesize_one(
    normal: &Image,
    normal_id: &str,
    params: SynthesisParams<'_>,
    placement: Option<&BinaryMask>,
    rng: &mut RngStream,
) -> Result<SyntheticSample> {
    let SynthesisParams {
        bank,
        augment,
        mixup,
        strategy,
    } = params;
    if bank.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    if bank.channels() != normal.channels() {
        return Err(Error::ChannelMismatch(format!(
            "bank has {} channels, image {normal_id} has {}",
            bank.channels(),
            normal.channels()
        )));
    }
    let (bw, bh) = (normal.width(), normal.height());
    let rule_index = strategy.draw(rng);
    let types = &strategy.rules[rule_index].allowed_types;
    let n_l = bank.component_count(types);
    if n_l == 0 {
        return Err(Error::EmptyFilteredBank(
            types.iter().map(|t| t.to_string()).collect(),
        ));
    }
    let n = sample_paste_count(n_l, rng);
    let drawn = resample_patches(bank, n, types, rng)?;

    let mut canvas = normal.to_float();
    let mut paste_log = Vec::with_capacity(n);
    for patch in drawn {
        let prior = patch.augmentation_log.len();
        let augmented = fit_within(apply_random(&patch, augment, rng), bw, bh);
        let (x, y) = choose_position(
            (bw, bh),
            (augmented.width(), augmented.height()),
            placement,
            rng,
        )?;
        let lambda = mixup.draw_lambda(rng);
        mixup_paste_into(&mut canvas, &augmented, (x, y), lambda)?;
        paste_log.push(PasteRecord {
            lesion_type: augmented.lesion_type,
            source_id: augmented.source_id.clone(),
            component_id: augmented.component_id,
            augmentation: augmented.augmentation_log[prior..].to_vec(),
            x,
            y,
            width: augmented.width(),
            height: augmented.height(),
            lambda,
        });
    }

    let quantized = quantize(&canvas, normal.depth());
    let image = Image::new(
        bw,
        bh,
        normal.channels(),
        normal.depth(),
        normal.domain(),
        quantized.samples().to_vec(),
    )?;
    Ok(SyntheticSample {
        image,
        paste_log,
        label: 1,
        source_normal_id: normal_id.to_string(),
        rule_index,
    })
}
