//! Side-by-side contact sheet of synthetic samples and their source
//! normals, with paste rectangles outlined.

use std::collections::HashMap;
use std::path::Path;

use crate::dataset::{read_manifest, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::imgcore::{quantize, Depth, Image, PixelDomain, Raster};
use crate::preprocess::resize_bilinear;

const OUTLINE: [f32; 3] = [1.0, 0.0, 0.0];

fn to_rgb(img: &Image) -> Raster {
    let r = img.to_float();
    if r.channels == 3 {
        return r;
    }
    let data = r.data.iter().flat_map(|&v| [v, v, v]).collect();
    Raster::from_vec(r.width, r.height, 3, data).expect("3x the samples of a gray raster")
}

fn outline(tile: &mut Raster, x0: usize, y0: usize, w: usize, h: usize) {
    let (x1, y1) = ((x0 + w).min(tile.width) - 1, (y0 + h).min(tile.height) - 1);
    let mut put = |x: usize, y: usize| {
        for (c, v) in OUTLINE.iter().enumerate() {
            tile.set(x, y, c, *v);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

/// Tiles the first `k` anomalous samples (in manifest order) beside their
/// normals: `k` rows of two tiles. Tiles take the size of the first normal.
pub fn build_montage(dataset: &Path, k: usize) -> Result<Image> {
    let records = read_manifest(dataset.join(MANIFEST_NAME))?;
    let normals: HashMap<&str, &str> = records
        .iter()
        .filter(|r| r.label == 0)
        .map(|r| (r.source.as_str(), r.path.as_str()))
        .collect();
    let pairs: Vec<_> = records
        .iter()
        .filter(|r| r.label == 1 && normals.contains_key(r.source.as_str()))
        .take(k)
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidImage(
            "dataset has no anomalous/normal pairs".into(),
        ));
    }

    let mut tiles = Vec::with_capacity(pairs.len() * 2);
    let mut tile_dims = None;
    for rec in &pairs {
        let normal = Image::read_png(dataset.join(normals[rec.source.as_str()]))?;
        let synthetic = Image::read_png(dataset.join(&rec.path))?;
        let (tw, th) = *tile_dims.get_or_insert((normal.width(), normal.height()));
        let sx = tw as f64 / synthetic.width() as f64;
        let sy = th as f64 / synthetic.height() as f64;
        let mut syn = to_rgb(&synthetic);
        let mut norm = to_rgb(&normal);
        if (syn.width, syn.height) != (tw, th) {
            syn = resize_bilinear(&syn, tw, th);
        }
        if (norm.width, norm.height) != (tw, th) {
            norm = resize_bilinear(&norm, tw, th);
        }
        for p in &rec.paste_log {
            let x0 = ((p.x as f64 * sx) as usize).min(tw - 1);
            let y0 = ((p.y as f64 * sy) as usize).min(th - 1);
            let w = ((p.width as f64 * sx).round() as usize).max(1);
            let h = ((p.height as f64 * sy).round() as usize).max(1);
            outline(&mut syn, x0, y0, w, h);
        }
        tiles.push(norm);
        tiles.push(syn);
    }

    let (tw, th) = tile_dims.expect("at least one pair");
    let rows = pairs.len();
    let mut sheet = Raster::new(2 * tw, rows * th, 3);
    for (i, tile) in tiles.iter().enumerate() {
        let (ox, oy) = ((i % 2) * tw, (i / 2) * th);
        for y in 0..th {
            for x in 0..tw {
                for c in 0..3 {
                    sheet.set(ox + x, oy + y, c, tile.get(x, y, c));
                }
            }
        }
    }
    let q = quantize(&sheet, Depth::U8);
    Image::new(
        q.width(),
        q.height(),
        3,
        Depth::U8,
        PixelDomain::Natural,
        q.samples().to_vec(),
    )
}
