//! Materializes a labelled dataset: every normal image is written through
//! unchanged (label 0) next to one synthetic anomalous version (label 1).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Placement, RunConfig};
use crate::error::{Error, Result};
use crate::imgcore::{Image, RngStream};
use crate::lesion_bank::LesionBank;
use crate::preprocess::detect_fov;
use crate::synth::{synthesize_one, PasteRecord, SynthesisParams};

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const CONFIG_NAME: &str = "run_config.json";
pub const NORMAL_DIR: &str = "normal";
pub const ANOMALOUS_DIR: &str = "anomalous";

/// One input normal image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalEntry {
    pub id: String,
    pub path: PathBuf,
}

/// Reads a JSON array of `{id, path}`; relative paths resolve against the
/// manifest's directory.
pub fn load_normals(manifest: impl AsRef<Path>) -> Result<Vec<NormalEntry>> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut entries: Vec<NormalEntry> =
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: manifest.display().to_string(),
            source,
        })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(entries)
}

fn check_ids(normals: &[NormalEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in normals {
        let ok = !n.id.is_empty()
            && n.id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !n.id.starts_with('.');
        if !ok {
            return Err(Error::config(
                "normals.id",
                format!("`{}` is not a safe file stem", n.id),
            ));
        }
        if !seen.insert(n.id.as_str()) {
            return Err(Error::config(
                "normals.id",
                format!("duplicate id `{}`", n.id),
            ));
        }
    }
    Ok(())
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Relative to the dataset directory.
    pub path: String,
    pub label: u8,
    pub source: String,
    pub paste_log: Vec<PasteRecord>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|source| Error::Json {
                context: format!("{}:{}", path.display(), i + 1),
                source,
            })
        })
        .collect()
}

fn process_one(
    entry: &NormalEntry,
    bank: &LesionBank,
    config: &RunConfig,
    out: &Path,
) -> Result<[ManifestRecord; 2]> {
    let raw = Image::read_png(&entry.path)?;
    let (normal, _) = config.preprocess.apply(&raw, &[])?;
    let fov = match config.placement {
        Placement::Fov => Some(detect_fov(&normal, config.preprocess.fov_threshold)),
        Placement::Unconstrained => None,
    };
    let params = SynthesisParams {
        bank,
        augment: &config.augment,
        mixup: config.mixup,
        strategy: &config.strategy,
    };
    let mut rng = RngStream::for_key(config.seed, &entry.id);
    let sample = synthesize_one(&normal, &entry.id, params, fov.as_ref(), &mut rng)?;

    let normal_rel = format!("{NORMAL_DIR}/{}.png", entry.id);
    let anomalous_rel = format!("{ANOMALOUS_DIR}/{}.png", entry.id);
    normal.write_png(out.join(&normal_rel))?;
    sample.image.write_png(out.join(&anomalous_rel))?;
    Ok([
        ManifestRecord {
            path: normal_rel,
            label: 0,
            source: entry.id.clone(),
            paste_log: Vec::new(),
        },
        ManifestRecord {
            path: anomalous_rel,
            label: 1,
            source: entry.id.clone(),
            paste_log: sample.paste_log,
        },
    ])
}

/// Synthesizes one anomalous sample per normal image into `out`.
///
/// Each image draws from its own stream keyed by `(seed, id)`, and the
/// manifest is sorted by source id, so the output is identical for any
/// input order and any thread count. `config_text` is stored verbatim as
/// `run_config.json`.
pub fn synthesize_dataset(
    normals: &[NormalEntry],
    bank: &LesionBank,
    config: &RunConfig,
    config_text: &str,
    out: &Path,
    threads: usize,
) -> Result<Vec<ManifestRecord>> {
    config.validate()?;
    check_ids(normals)?;
    for dir in [out.join(NORMAL_DIR), out.join(ANOMALOUS_DIR)] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    let pairs: Vec<[ManifestRecord; 2]> = pool.install(|| {
        normals
            .par_iter()
            .map(|entry| process_one(entry, bank, config, out))
            .collect::<Result<_>>()
    })?;

    let mut records: Vec<ManifestRecord> = pairs.into_iter().flatten().collect();
    records.sort_by(|a, b| a.source.cmp(&b.source).then(a.label.cmp(&b.label)));

    let manifest_path = out.join(MANIFEST_NAME);
    let mut file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for r in &records {
        let line = serde_json::to_string(r).map_err(|source| Error::Json {
            context: "manifest record".into(),
            source,
        })?;
        writeln!(file, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    let config_path = out.join(CONFIG_NAME);
    fs::write(&config_path, config_text).map_err(|e| Error::io(&config_path, e))?;
    Ok(records)
}
