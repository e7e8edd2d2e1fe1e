//! Lesion extraction from the single annotated sample and the resampling
//! that feeds synthesis.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentRecord;
use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::imgcore::{quantize, BinaryMask, Depth, Image, Raster, RngStream};

pub const MANIFEST_NAME: &str = "bank.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LesionType {
    /// Microaneurysm.
    Ma,
    /// Hemorrhage.
    He,
    /// Soft exudate.
    Se,
    /// Hard exudate.
    Ex,
    Covid,
    Other,
}

impl LesionType {
    pub const ALL: [LesionType; 6] = [
        LesionType::Ma,
        LesionType::He,
        LesionType::Se,
        LesionType::Ex,
        LesionType::Covid,
        LesionType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LesionType::Ma => "MA",
            LesionType::He => "HE",
            LesionType::Se => "SE",
            LesionType::Ex => "EX",
            LesionType::Covid => "COVID",
            LesionType::Other => "OTHER",
        }
    }
}

impl fmt::Display for LesionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LesionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LesionType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("lesion_type", format!("unknown lesion type `{s}`")))
    }
}

/// Tight crop around one lesion component.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionPatch {
    pub pixels: Raster,
    pub mask: BinaryMask,
    pub lesion_type: LesionType,
    pub source_id: String,
    pub component_id: u32,
    pub augmentation_log: Vec<AugmentRecord>,
}

impl LesionPatch {
    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    /// Checks the nonempty / aligned / tight-box invariants.
    pub fn validate(&self) -> Result<()> {
        if self.pixels.width != self.mask.width() || self.pixels.height != self.mask.height() {
            return Err(Error::DimensionMismatch(format!(
                "patch pixels {}x{} vs mask {}x{}",
                self.pixels.width,
                self.pixels.height,
                self.mask.width(),
                self.mask.height()
            )));
        }
        match self.mask.bounding_box() {
            None => Err(Error::InvalidImage("patch mask is empty".into())),
            Some((0, 0, w, h)) if w == self.mask.width() && h == self.mask.height() => Ok(()),
            Some(_) => Err(Error::InvalidImage(
                "patch is not a tight bounding box".into(),
            )),
        }
    }

    /// Re-crops pixels and mask to the mask's bounding box. `None` if the mask is empty.
    pub(crate) fn tightened(pixels: Raster, mask: BinaryMask) -> Option<(Raster, BinaryMask)> {
        let (x0, y0, w, h) = mask.bounding_box()?;
        if (x0, y0, w, h) == (0, 0, mask.width(), mask.height()) {
            return Some((pixels, mask));
        }
        Some((pixels.crop(x0, y0, w, h), mask.crop(x0, y0, w, h)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionBank {
    pub patches: Vec<LesionPatch>,
    /// Number of isolated lesion regions in the source annotation.
    pub n_l: usize,
    /// Sample depth of the source image; used when the bank is written out.
    pub depth: Depth,
}

impl LesionBank {
    pub fn new(patches: Vec<LesionPatch>, depth: Depth) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::EmptyAnnotation);
        }
        for p in &patches {
            p.validate()?;
        }
        let n_l = distinct_components(patches.iter());
        Ok(LesionBank {
            patches,
            n_l,
            depth,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.patches[0].pixels.channels
    }

    pub fn type_count(&self, t: LesionType) -> usize {
        self.patches.iter().filter(|p| p.lesion_type == t).count()
    }

    pub fn types(&self) -> BTreeSet<LesionType> {
        self.patches.iter().map(|p| p.lesion_type).collect()
    }

    pub fn filtered<'a>(
        &'a self,
        types: &'a [LesionType],
    ) -> impl Iterator<Item = &'a LesionPatch> + 'a {
        self.patches
            .iter()
            .filter(move |p| types.contains(&p.lesion_type))
    }

    /// Isolated lesion regions among the patches of the given types.
    pub fn component_count(&self, types: &[LesionType]) -> usize {
        distinct_components(self.filtered(types))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.patches.len());
        for (i, p) in self.patches.iter().enumerate() {
            let image = format!("patch_{i:04}.png");
            let mask = format!("patch_{i:04}_mask.png");
            quantize(&p.pixels, self.depth).write_png(dir.join(&image))?;
            p.mask.write_png(dir.join(&mask))?;
            entries.push(PatchEntry {
                image,
                mask,
                lesion_type: p.lesion_type,
                source_id: p.source_id.clone(),
                component_id: p.component_id,
                augmentation_log: p.augmentation_log.clone(),
            });
        }
        let manifest = BankManifest {
            n_l: self.n_l,
            depth: self.depth,
            channels: self.channels(),
            types: self.types().into_iter().collect(),
            patches: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
            context: "bank manifest".into(),
            source,
        })?;
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BankManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        let mut patches = Vec::with_capacity(manifest.patches.len());
        for e in manifest.patches {
            if !manifest.types.contains(&e.lesion_type) {
                return Err(Error::config(
                    "patches.lesion_type",
                    format!("{} is not among the declared types", e.lesion_type),
                ));
            }
            let pixels = Image::read_png(dir.join(&e.image))?;
            if pixels.channels() != manifest.channels {
                return Err(Error::ChannelMismatch(format!(
                    "{} has {} channels, manifest declares {}",
                    e.image,
                    pixels.channels(),
                    manifest.channels
                )));
            }
            patches.push(LesionPatch {
                pixels: pixels.to_float(),
                mask: BinaryMask::read_png(dir.join(&e.mask))?,
                lesion_type: e.lesion_type,
                source_id: e.source_id,
                component_id: e.component_id,
                augmentation_log: e.augmentation_log,
            });
        }
        let bank = LesionBank::new(patches, manifest.depth)?;
        if bank.n_l != manifest.n_l {
            return Err(Error::config(
                "n_l",
                format!(
                    "manifest says {}, patches contain {}",
                    manifest.n_l, bank.n_l
                ),
            ));
        }
        Ok(bank)
    }
}

fn distinct_components<'a>(patches: impl Iterator<Item = &'a LesionPatch>) -> usize {
    patches
        .map(|p| (p.source_id.as_str(), p.component_id))
        .collect::<BTreeSet<_>>()
        .len()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankManifest {
    n_l: usize,
    depth: Depth,
    channels: usize,
    types: Vec<LesionType>,
    patches: Vec<PatchEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchEntry {
    image: String,
    mask: String,
    lesion_type: LesionType,
    source_id: String,
    component_id: u32,
    augmentation_log: Vec<AugmentRecord>,
}

/// One patch per connected component of each per-type annotation mask.
/// Component ids are numbered across all types, starting at 1.
pub fn extract_patches(
    img: &Image,
    annotations: &[(LesionType, BinaryMask)],
    connectivity: Connectivity,
    source_id: &str,
) -> Result<LesionBank> {
    let raster = img.to_float();
    let mut patches = Vec::new();
    let mut next_id = 1u32;
    for (lesion_type, mask) in annotations {
        if mask.width() != img.width() || mask.height() != img.height() {
            return Err(Error::DimensionMismatch(format!(
                "{lesion_type} mask {}x{} vs image {}x{}",
                mask.width(),
                mask.height(),
                img.width(),
                img.height()
            )));
        }
        let labels = label_components(mask, connectivity);
        // Per-label bounding boxes in one sweep.
        let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize); labels.count as usize + 1];
        for y in 0..labels.height {
            for x in 0..labels.width {
                let l = labels.label(x, y) as usize;
                if l != 0 {
                    let b = &mut boxes[l];
                    b.0 = b.0.min(x);
                    b.1 = b.1.min(y);
                    b.2 = b.2.max(x);
                    b.3 = b.3.max(y);
                }
            }
        }
        for label in 1..=labels.count {
            let (x0, y0, x1, y1) = boxes[label as usize];
            let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
            patches.push(LesionPatch {
                pixels: raster.crop(x0, y0, w, h),
                mask: BinaryMask::from_fn(w, h, |x, y| labels.label(x0 + x, y0 + y) == label),
                lesion_type: *lesion_type,
                source_id: source_id.to_string(),
                component_id: next_id,
                augmentation_log: Vec::new(),
            });
            next_id += 1;
        }
    }
    if patches.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    LesionBank::new(patches, img.depth())
}

/// Largest paste count for a bank with `n_l` regions: `round(1.5 * n_l)`, halves rounded up.
pub fn max_paste_count(n_l: usize) -> usize {
    (3 * n_l).div_ceil(2).max(1)
}

/// Draws N uniformly from `{1, ..., round(1.5 * n_l)}`.
pub fn sample_paste_count(n_l: usize, rng: &mut RngStream) -> usize {
    1 + rng.below(max_paste_count(n_l))
}

/// `n` independent uniform draws, with replacement, from the patches of the given types.
pub fn resample_patches(
    bank: &LesionBank,
    n: usize,
    types: &[LesionType],
    rng: &mut RngStream,
) -> Result<Vec<LesionPatch>> {
    let pool: Vec<&LesionPatch> = bank.filtered(types).collect();
    if pool.is_empty() {
        return Err(Error::EmptyFilteredBank(
            types.iter().map(|t| t.to_string()).collect(),
        ));
    }
    Ok((0..n)
        .map(|_| pool[rng.below(pool.len())].clone())
        .collect())
}
